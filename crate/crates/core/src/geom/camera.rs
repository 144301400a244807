use nalgebra::{Vector2, Vector3};

use super::GeomError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

impl ImageSize {
    pub fn new(height: usize, width: usize) -> Result<Self, GeomError> {
        if height == 0 || width == 0 {
            return Err(GeomError::InvalidSize { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }

    /// Row-major index of pixel `(u, v)`.
    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    /// Pixel coordinate `(u, v)` of a row-major index.
    #[inline]
    pub fn pixel(&self, index: usize) -> Vector2<f64> {
        Vector2::new((index % self.width) as f64, (index / self.width) as f64)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

/// Pinhole intrinsics with a single focal length (square pixels, no skew).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub size: ImageSize,
}

impl Intrinsics {
    /// Intrinsics with the principal point at the image center,
    /// `((W - 1) / 2, (H - 1) / 2)` under the integer pixel-center convention.
    pub fn centered(focal: f64, size: ImageSize) -> Result<Self, GeomError> {
        Self::new(
            focal,
            (size.width as f64 - 1.0) / 2.0,
            (size.height as f64 - 1.0) / 2.0,
            size,
        )
    }

    pub fn new(focal: f64, cx: f64, cy: f64, size: ImageSize) -> Result<Self, GeomError> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(GeomError::InvalidFocal(focal));
        }
        Ok(Self {
            focal,
            cx,
            cy,
            size,
        })
    }

    pub fn with_focal(&self, focal: f64) -> Result<Self, GeomError> {
        Self::new(focal, self.cx, self.cy, self.size)
    }

    /// Normalized image coordinates `((u - cx) / f, (v - cy) / f)`.
    #[inline]
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (pixel.x - self.cx) / self.focal,
            (pixel.y - self.cy) / self.focal,
        )
    }
}

/// Pinhole projection `(f x / z + cx, f y / z + cy)`.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<Vector2<f64>, GeomError> {
    if !(point.z > 0.0) {
        return Err(GeomError::NonPositiveDepth(point.z));
    }
    Ok(Vector2::new(
        k.focal * point.x / point.z + k.cx,
        k.focal * point.y / point.z + k.cy,
    ))
}

/// Lifts a pixel to the camera-frame point at the given z-depth.
pub fn backproject(
    pixel: &Vector2<f64>,
    depth: f64,
    k: &Intrinsics,
) -> Result<Vector3<f64>, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::NonPositiveDepth(depth));
    }
    let n = k.normalize(pixel);
    Ok(Vector3::new(n.x * depth, n.y * depth, depth))
}
