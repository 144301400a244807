use nalgebra::{Vector2, Vector3};

use super::{backproject, GeomError, ImageSize, Intrinsics, PoseSE3};

/// Dense row-major H×W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    size: ImageSize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(size: ImageSize, value: T) -> Self {
        Self {
            size,
            data: vec![value; size.num_pixels()],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(size: ImageSize, data: Vec<T>) -> Result<Self, GeomError> {
        if data.len() != size.num_pixels() {
            return Err(GeomError::DataLength {
                height: size.height,
                width: size.width,
                got: data.len(),
            });
        }
        Ok(Self { size, data })
    }

    /// Builds a grid by evaluating `f(u, v)` at every pixel.
    pub fn from_fn(size: ImageSize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(size.num_pixels());
        for v in 0..size.height {
            for u in 0..size.width {
                data.push(f(u, v));
            }
        }
        Self { size, data }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[self.size.index(u, v)]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        let i = self.size.index(u, v);
        &mut self.data[i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            size: self.size,
            data: self.data.iter().map(f).collect(),
        }
    }
}

fn check_shape(expected: ImageSize, got: ImageSize) -> Result<(), GeomError> {
    if expected != got {
        return Err(GeomError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Per-pixel 3D positions. Invalid pixels carry no meaningful point and are
/// skipped by every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap {
    pub points: Grid<Vector3<f64>>,
    pub valid: Grid<bool>,
}

impl Pointmap {
    pub fn new(points: Grid<Vector3<f64>>, valid: Grid<bool>) -> Result<Self, GeomError> {
        check_shape(points.size(), valid.size())?;
        let valid = valid.as_slice().iter().zip(points.as_slice()).map(|(&ok, p)| ok && p.iter().all(|c| c.is_finite())).collect();
        Ok(Self {
            valid: Grid::from_vec(points.size(), valid)?,
            points,
        })
    }

    pub fn size(&self) -> ImageSize {
        self.points.size()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }

    /// Iterator over `(index, point)` for valid pixels.
    pub fn valid_points(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.points
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .enumerate()
            .filter_map(|(i, (p, &ok))| ok.then_some((i, p)))
    }

    pub fn transformed(&self, pose: &PoseSE3) -> Pointmap {
        Pointmap {
            points: self.points.map(|p| pose.apply(p)),
            valid: self.valid.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub values: Grid<f64>,
}

impl ConfidenceMap {
    pub fn new(values: Grid<f64>) -> Result<Self, GeomError> {
        if values.as_slice().iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(GeomError::Degenerate("confidence must be finite and non-negative"));
        }
        Ok(Self { values })
    }

    pub fn uniform(size: ImageSize, value: f64) -> Self {
        Self {
            values: Grid::filled(size, value),
        }
    }

    pub fn size(&self) -> ImageSize {
        self.values.size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub depth: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    /// Pixels with non-positive or non-finite depth are marked invalid.
    pub fn new(depth: Grid<f64>, valid: Grid<bool>) -> Result<Self, GeomError> {
        check_shape(depth.size(), valid.size())?;
        let valid = valid
            .as_slice()
            .iter()
            .zip(depth.as_slice())
            .map(|(&ok, &d)| ok && d > 0.0 && d.is_finite())
            .collect();
        Ok(Self {
            valid: Grid::from_vec(depth.size(), valid)?,
            depth,
        })
    }

    pub fn from_values(depth: Grid<f64>) -> Self {
        let valid = depth.map(|&d| d > 0.0 && d.is_finite());
        Self { depth, valid }
    }

    pub fn size(&self) -> ImageSize {
        self.depth.size()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }
}

/// Per-pixel 2D displacement in pixels. Pixels whose correspondence is
/// undefined (occluded target, point behind the camera) are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Grid<Vector2<f64>>,
    pub valid: Grid<bool>,
}

impl FlowField {
    pub fn new(flow: Grid<Vector2<f64>>, valid: Grid<bool>) -> Result<Self, GeomError> {
        check_shape(flow.size(), valid.size())?;
        let valid = valid
            .as_slice()
            .iter()
            .zip(flow.as_slice())
            .map(|(&ok, f)| ok && f.x.is_finite() && f.y.is_finite())
            .collect();
        Ok(Self {
            valid: Grid::from_vec(flow.size(), valid)?,
            flow,
        })
    }

    pub fn zeros(size: ImageSize) -> Self {
        Self {
            flow: Grid::filled(size, Vector2::zeros()),
            valid: Grid::filled(size, true),
        }
    }

    pub fn size(&self) -> ImageSize {
        self.flow.size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticMask {
    pub is_static: Grid<bool>,
}

impl StaticMask {
    pub fn all(size: ImageSize, value: bool) -> Self {
        Self {
            is_static: Grid::filled(size, value),
        }
    }

    pub fn size(&self) -> ImageSize {
        self.is_static.size()
    }

    pub fn num_static(&self) -> usize {
        self.is_static.as_slice().iter().filter(|&&s| s).count()
    }
}

/// World pointmap of a depth map: `X = pose⁻¹(backproject(pixel, D, K))`.
pub fn pointmap_from_depth(
    depth: &DepthMap,
    k: &Intrinsics,
    pose: &PoseSE3,
) -> Result<Pointmap, GeomError> {
    check_shape(k.size, depth.size())?;
    let size = depth.size();
    let inv = pose.inverse();
    let mut points = Vec::with_capacity(size.num_pixels());
    for (i, (&d, &ok)) in depth
        .depth
        .as_slice()
        .iter()
        .zip(depth.valid.as_slice())
        .enumerate()
    {
        if ok {
            points.push(inv.apply(&backproject(&size.pixel(i), d, k)?));
        } else {
            points.push(Vector3::zeros());
        }
    }
    Ok(Pointmap {
        points: Grid::from_vec(size, points)?,
        valid: depth.valid.clone(),
    })
}

/// Depth of each valid point in the camera frame of `pose`; points that land
/// at or behind the camera are invalid.
pub fn depth_from_pointmap(pm: &Pointmap, pose: &PoseSE3) -> DepthMap {
    let depth = pm.points.map(|p| pose.apply(p).z);
    let valid = Grid::from_fn(pm.size(), |u, v| {
        *pm.valid.get(u, v) && *depth.get(u, v) > 0.0
    });
    DepthMap { depth, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_pixel_pointmap() {
        let size = ImageSize::new(1, 1).unwrap();
        let k = Intrinsics::new(1.0, 0.0, 0.0, size).unwrap();
        let d = DepthMap::from_values(Grid::filled(size, 1.0));
        let pm = pointmap_from_depth(&d, &k, &PoseSE3::identity()).unwrap();
        assert_eq!(*pm.points.get(0, 0), Vector3::new(0.0, 0.0, 1.0));
        assert!(*pm.valid.get(0, 0));
    }

    #[test]
    fn depth_pointmap_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let size = ImageSize::new(12, 17).unwrap();
        let k = Intrinsics::centered(20.0, size).unwrap();
        for _ in 0..10 {
            let pose = PoseSE3::from_quaternion(
                &[rng.random(), rng.random(), rng.random(), rng.random()],
                Vector3::new(rng.random(), rng.random(), rng.random()),
            );
            let d = Grid::from_fn(size, |_, _| rng.random_range(0.5..10.0));
            let mut depth = DepthMap::from_values(d);
            *depth.valid.get_mut(3, 4) = false;
            let pm = pointmap_from_depth(&depth, &k, &pose).unwrap();
            let back = depth_from_pointmap(&pm, &pose);
            assert_eq!(back.valid, depth.valid);
            for i in 0..size.num_pixels() {
                if depth.valid.as_slice()[i] {
                    assert!((back.depth.as_slice()[i] - depth.depth.as_slice()[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn invalid_values_are_masked() {
        let size = ImageSize::new(1, 3).unwrap();
        let d = DepthMap::from_values(Grid::from_vec(size, vec![1.0, -2.0, f64::NAN]).unwrap());
        assert_eq!(d.valid.as_slice(), &[true, false, false]);
        let pm = Pointmap::new(
            Grid::from_vec(size, vec![Vector3::zeros(), Vector3::new(f64::INFINITY, 0.0, 1.0), Vector3::zeros()]).unwrap(),
            Grid::filled(size, true),
        )
        .unwrap();
        assert_eq!(pm.num_valid(), 2);
        assert!(ConfidenceMap::new(Grid::filled(size, -1.0)).is_err());
        let other = ImageSize::new(3, 1).unwrap();
        assert!(DepthMap::new(Grid::filled(size, 1.0), Grid::filled(other, true)).is_err());
    }
}
