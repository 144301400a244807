//! Binary little-endian PLY point clouds with `xyz` (f32) and `rgb` (u8).

use std::path::Path;

use super::{read_file, write_file, CliError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

pub fn ply_bytes(points: &[ColoredPoint]) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    let mut out = header.into_bytes();
    out.reserve(points.len() * 15);
    for p in points {
        for x in p.position {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&p.color);
    }
    out
}

/// Reads back files written by [`ply_bytes`].
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<ColoredPoint>, CliError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| CliError::format("PLY header not terminated"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| CliError::format("PLY header is not text"))?;
    if !header.contains("format binary_little_endian 1.0") {
        return Err(CliError::format("only binary little-endian PLY is supported"));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| CliError::format("PLY vertex count missing"))?;
    let body = &bytes[end..];
    if body.len() != count * 15 {
        return Err(CliError::format("PLY body length does not match vertex count"));
    }
    Ok(body
        .chunks_exact(15)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap());
            ColoredPoint {
                position: [f(0), f(1), f(2)],
                color: [c[12], c[13], c[14]],
            }
        })
        .collect())
}

pub fn write_ply(path: &Path, points: &[ColoredPoint]) -> Result<(), CliError> {
    write_file(path, &ply_bytes(points))
}

pub fn read_ply(path: &Path) -> Result<Vec<ColoredPoint>, CliError> {
    parse_ply(&read_file(path)?).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let pts = vec![
            ColoredPoint { position: [1.0, -2.5, 3.25], color: [255, 0, 7] },
            ColoredPoint { position: [0.0, 1e-8, -0.0], color: [1, 2, 3] },
        ];
        let bytes = ply_bytes(&pts);
        assert!(bytes.starts_with(b"ply\n"));
        assert_eq!(parse_ply(&bytes).unwrap(), pts);
        assert!(parse_ply(&bytes[..bytes.len() - 1]).is_err());
    }
}
