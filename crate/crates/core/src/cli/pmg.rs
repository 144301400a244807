//! `PMG1` grid container.
//!
//! Layout (all integers u32 little-endian):
//!
//! ```text
//! "PMG1" | version | height | width | channels | dtype | has_validity
//! H·W·channels f32 LE, row-major, channels interleaved
//! [H·W u8 validity plane, 0 or 1]
//! ```

use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{read_file, write_file, CliError};
use crate::geom::{ConfidenceMap, DepthMap, FlowField, Grid, ImageSize, Pointmap, StaticMask};

pub const MAGIC: &[u8; 4] = b"PMG1";
pub const VERSION: u32 = 1;
/// The only dtype: f32 little-endian.
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct GridContainer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub validity: Option<Vec<bool>>,
}

impl GridContainer {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        validity: Option<Vec<bool>>,
    ) -> Result<Self, CliError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(CliError::format("grid dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(CliError::format(format!(
                "payload has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if validity.as_ref().is_some_and(|v| v.len() != height * width) {
            return Err(CliError::format("validity plane has the wrong length"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            validity,
        })
    }

    pub fn size(&self) -> Result<ImageSize, CliError> {
        Ok(ImageSize::new(self.height, self.width)?)
    }

    /// Channel values of pixel `i` (row-major index).
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    fn is_valid(&self, i: usize) -> bool {
        self.validity.as_ref().is_none_or(|v| v[i])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + self.height * self.width);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.height as u32,
            self.width as u32,
            self.channels as u32,
            DTYPE_F32,
            self.validity.is_some() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(valid) = &self.validity {
            out.extend(valid.iter().map(|&b| b as u8));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(CliError::format("not a PMG1 container"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (version, height, width, channels, dtype, flag) =
            (word(0), word(1) as usize, word(2) as usize, word(3) as usize, word(4), word(5));
        if version != VERSION {
            return Err(CliError::format(format!("unsupported PMG1 version {version}")));
        }
        if dtype != DTYPE_F32 {
            return Err(CliError::format(format!("unsupported dtype code {dtype}")));
        }
        if flag > 1 {
            return Err(CliError::format(format!("bad validity flag {flag}")));
        }
        let values = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| CliError::format("grid dimensions overflow"))?;
        let expected = HEADER_LEN + values * 4 + if flag == 1 { height * width } else { 0 };
        if bytes.len() != expected {
            return Err(CliError::format(format!(
                "file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + values * 4];
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let validity = if flag == 1 {
            let plane = &bytes[HEADER_LEN + values * 4..];
            if plane.iter().any(|&b| b > 1) {
                return Err(CliError::format("validity plane must hold 0 or 1"));
            }
            Some(plane.iter().map(|&b| b == 1).collect())
        } else {
            None
        };
        Self::new(height, width, channels, data, validity)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::from_bytes(&read_file(path)?).map_err(|e| e.at(path))
    }

    fn expect_channels(&self, channels: usize) -> Result<(), CliError> {
        if self.channels != channels {
            return Err(CliError::format(format!(
                "expected {channels} channel(s), found {}",
                self.channels
            )));
        }
        Ok(())
    }

    fn from_fn(size: ImageSize, channels: usize, valid: Option<&Grid<bool>>, f: impl Fn(usize) -> Vec<f32>) -> Self {
        let n = size.num_pixels();
        Self {
            height: size.height,
            width: size.width,
            channels,
            data: (0..n).flat_map(f).collect(),
            validity: valid.map(|v| v.as_slice().to_vec()),
        }
    }

    fn validity_grid(&self, size: ImageSize) -> Grid<bool> {
        Grid::from_fn(size, |u, v| self.is_valid(size.index(u, v)))
    }

    pub fn from_depth(depth: &DepthMap) -> Self {
        let d = depth.depth.as_slice();
        Self::from_fn(depth.size(), 1, Some(&depth.valid), |i| vec![d[i] as f32])
    }

    pub fn to_depth(&self) -> Result<DepthMap, CliError> {
        self.expect_channels(1)?;
        let size = self.size()?;
        let depth = Grid::from_vec(size, self.data.iter().map(|&x| x as f64).collect())?;
        Ok(DepthMap::new(depth, self.validity_grid(size))?)
    }

    /// Three channels `x y z`.
    pub fn from_pointmap(pm: &Pointmap) -> Self {
        let p = pm.points.as_slice();
        Self::from_fn(pm.size(), 3, Some(&pm.valid), |i| {
            p[i].iter().map(|&x| x as f32).collect()
        })
    }

    pub fn to_pointmap(&self) -> Result<Pointmap, CliError> {
        self.expect_channels(3)?;
        self.pointmap_from_channels()
    }

    fn pointmap_from_channels(&self) -> Result<Pointmap, CliError> {
        let size = self.size()?;
        let points = Grid::from_fn(size, |u, v| {
            let c = self.pixel(size.index(u, v));
            Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64)
        });
        Ok(Pointmap::new(points, self.validity_grid(size))?)
    }

    /// Four channels `x y z confidence`.
    pub fn from_pointmap_with_confidence(pm: &Pointmap, conf: &ConfidenceMap) -> Self {
        let p = pm.points.as_slice();
        let c = conf.values.as_slice();
        Self::from_fn(pm.size(), 4, Some(&pm.valid), |i| {
            vec![p[i].x as f32, p[i].y as f32, p[i].z as f32, c[i] as f32]
        })
    }

    pub fn to_pointmap_with_confidence(&self) -> Result<(Pointmap, ConfidenceMap), CliError> {
        self.expect_channels(4)?;
        let size = self.size()?;
        let conf = Grid::from_fn(size, |u, v| self.pixel(size.index(u, v))[3] as f64);
        Ok((self.pointmap_from_channels()?, ConfidenceMap::new(conf)?))
    }

    /// Two channels `du dv`.
    pub fn from_flow(flow: &FlowField) -> Self {
        let f = flow.flow.as_slice();
        Self::from_fn(flow.size(), 2, Some(&flow.valid), |i| vec![f[i].x as f32, f[i].y as f32])
    }

    pub fn to_flow(&self) -> Result<FlowField, CliError> {
        self.expect_channels(2)?;
        let size = self.size()?;
        let flow = Grid::from_fn(size, |u, v| {
            let c = self.pixel(size.index(u, v));
            Vector2::new(c[0] as f64, c[1] as f64)
        });
        Ok(FlowField::new(flow, self.validity_grid(size))?)
    }

    /// One channel, `1.0` where the flag is set.
    pub fn from_bools(mask: &Grid<bool>) -> Self {
        let m = mask.as_slice();
        Self::from_fn(mask.size(), 1, None, |i| vec![m[i] as u8 as f32])
    }

    pub fn to_bools(&self) -> Result<Grid<bool>, CliError> {
        self.expect_channels(1)?;
        Ok(Grid::from_vec(self.size()?, self.data.iter().map(|&x| x > 0.5).collect())?)
    }

    pub fn from_static_mask(mask: &StaticMask) -> Self {
        Self::from_bools(&mask.is_static)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_container(rng: &mut ChaCha8Rng) -> GridContainer {
        let (h, w, c) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..5));
        // Arbitrary bit patterns, NaNs and infinities included.
        let data = (0..h * w * c).map(|_| f32::from_bits(rng.random())).collect();
        let validity = rng
            .random_bool(0.5)
            .then(|| (0..h * w).map(|_| rng.random_bool(0.5)).collect());
        GridContainer::new(h, w, c, data, validity).unwrap()
    }

    fn bits(g: &GridContainer) -> Vec<u32> {
        g.data.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let g = random_container(&mut rng);
            let bytes = g.to_bytes();
            let back = GridContainer::from_bytes(&bytes).unwrap();
            assert_eq!(bits(&g), bits(&back));
            assert_eq!(g.validity, back.validity);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let g = GridContainer::new(2, 3, 1, vec![0.0; 6], Some(vec![true; 6])).unwrap();
        let b = g.to_bytes();
        assert_eq!(&b[..4], b"PMG1");
        assert_eq!(b[8], 2);
        assert_eq!(b[12], 3);
        assert_eq!(b.len(), HEADER_LEN + 24 + 6);
    }

    #[test]
    fn rejects_malformed() {
        let g = GridContainer::new(2, 2, 1, vec![1.0; 4], None).unwrap();
        let b = g.to_bytes();
        assert!(GridContainer::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(GridContainer::from_bytes(&bad).is_err());
        let mut bad = b.clone();
        bad[20] = 2;
        assert!(GridContainer::from_bytes(&bad).is_err());
        assert!(GridContainer::new(2, 2, 2, vec![1.0; 4], None).is_err());
    }

    #[test]
    fn typed_conversions() {
        let size = ImageSize::new(3, 4).unwrap();
        let depth = DepthMap::from_values(Grid::from_fn(size, |u, v| (u + v) as f64 * 0.5));
        let back = GridContainer::from_depth(&depth).to_depth().unwrap();
        assert_eq!(back, depth);
        let flow = FlowField::new(
            Grid::from_fn(size, |u, v| Vector2::new(u as f64, -(v as f64))),
            Grid::from_fn(size, |u, _| u != 1),
        )
        .unwrap();
        assert_eq!(GridContainer::from_flow(&flow).to_flow().unwrap(), flow);
        let mask = Grid::from_fn(size, |u, v| u > v);
        assert_eq!(GridContainer::from_bools(&mask).to_bools().unwrap(), mask);
        assert!(GridContainer::from_bools(&mask).to_flow().is_err());
    }
}
