//! TUM trajectory text: `timestamp tx ty tz qx qy qz qw`, camera-to-world.

use std::path::Path;

use nalgebra::Vector3;

use super::{read_text, write_file, CliError};
use crate::evalkit::Trajectory;
use crate::geom::PoseSE3;

/// One line, kept as written so that reading and writing are exact inverses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumRecord {
    pub timestamp: f64,
    pub translation: [f64; 3],
    /// `[qx, qy, qz, qw]`, file order.
    pub quaternion: [f64; 4],
}

impl TumRecord {
    pub fn from_pose(timestamp: f64, cam_to_world: &PoseSE3) -> Self {
        let [w, x, y, z] = cam_to_world.quaternion();
        let t = cam_to_world.translation;
        Self {
            timestamp,
            translation: [t.x, t.y, t.z],
            quaternion: [x, y, z, w],
        }
    }

    /// Camera-to-world pose; the quaternion is normalized.
    pub fn pose(&self) -> PoseSE3 {
        let [x, y, z, w] = self.quaternion;
        let [tx, ty, tz] = self.translation;
        PoseSE3::from_quaternion(&[w, x, y, z], Vector3::new(tx, ty, tz))
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_tum(records: &[TumRecord]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for r in records {
        let [tx, ty, tz] = r.translation;
        let [qx, qy, qz, qw] = r.quaternion;
        out.push_str(&format!("{:?} {tx:?} {ty:?} {tz:?} {qx:?} {qy:?} {qz:?} {qw:?}\n", r.timestamp));
    }
    out
}

/// Blank lines and `#` comments are skipped.
pub fn parse_tum(text: &str) -> Result<Vec<TumRecord>, CliError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(format!("line {}: {e}", i + 1)))?;
        let [ts, tx, ty, tz, qx, qy, qz, qw] = values[..] else {
            return Err(CliError::format(format!(
                "line {}: expected 8 values, found {}",
                i + 1,
                values.len()
            )));
        };
        records.push(TumRecord {
            timestamp: ts,
            translation: [tx, ty, tz],
            quaternion: [qx, qy, qz, qw],
        });
    }
    Ok(records)
}

pub fn write_tum(path: &Path, records: &[TumRecord]) -> Result<(), CliError> {
    write_file(path, format_tum(records).as_bytes())
}

pub fn read_tum(path: &Path) -> Result<Vec<TumRecord>, CliError> {
    parse_tum(&read_text(path)?).map_err(|e| e.at(path))
}

pub fn trajectory_to_records(traj: &Trajectory) -> Vec<TumRecord> {
    traj.entries().iter().map(|(t, p)| TumRecord::from_pose(*t, p)).collect()
}

pub fn records_to_trajectory(records: &[TumRecord]) -> Result<Trajectory, CliError> {
    Ok(Trajectory::new(records.iter().map(|r| (r.timestamp, r.pose())).collect())?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    records_to_trajectory(&read_tum(path)?).map_err(|e| e.at(path))
}
