//! CSV files for trajectories and odometry, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{OdometrySample, Pose, Trajectory};

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&bytes).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))
}

fn parse_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> std::result::Result<Vec<T>, String> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| e.to_string())
}

pub fn trajectory_to_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    to_csv(traj.poses.iter())
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_atomic(path, &trajectory_to_csv(traj)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let poses: Vec<Pose> = from_csv(path)?;
    Ok(Trajectory { poses })
}

pub fn odometry_to_csv(odom: &[OdometrySample]) -> Result<Vec<u8>> {
    to_csv(odom.iter())
}

pub fn write_odometry(path: &Path, odom: &[OdometrySample]) -> Result<()> {
    write_atomic(path, &odometry_to_csv(odom)?)
}

pub fn read_odometry(path: &Path) -> Result<Vec<OdometrySample>> {
    from_csv(path)
}

/// One detected step: time and the device heading estimate at that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub heading: f64,
}

pub fn steps_to_csv(steps: &[StepRecord]) -> Result<Vec<u8>> {
    to_csv(steps.iter())
}

pub fn write_steps(path: &Path, steps: &[StepRecord]) -> Result<()> {
    write_atomic(path, &steps_to_csv(steps)?)
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    from_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_csv_has_header_and_round_trips() {
        let traj = Trajectory {
            poses: vec![
                Pose::new(0.0, 1.0, 2.0, 0.1),
                Pose::new(1.0, 1.1 + 1e-17, -2.0, std::f64::consts::PI),
            ],
        };
        let bytes = trajectory_to_csv(&traj).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("t,x,y,theta\n"));
        let back: Vec<Pose> = parse_csv(&bytes).unwrap();
        assert_eq!(back, traj.poses);
    }

    #[test]
    fn odometry_csv_header() {
        let bytes = odometry_to_csv(&[OdometrySample {
            t: 1.0,
            dx: 0.5,
            dy: 0.0,
            dtheta: 0.0,
        }])
        .unwrap();
        assert!(String::from_utf8(bytes).unwrap().starts_with("t,dx,dy,dtheta\n"));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, b"abc").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"abc");
        let names: Vec<_> = fs::read_dir(p.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
