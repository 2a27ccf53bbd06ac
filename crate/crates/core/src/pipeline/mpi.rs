//! Ground-truth adapters for the MPI-omni driving sequences.
//!
//! Two layouts are understood:
//! - a pose file with one row-major 3x4 `[R | t]` camera-to-world matrix per
//!   line (12 numbers), optionally preceded by a timestamp (13 numbers);
//! - a directory of OXTS records, one text file per frame, whose fields 4-6
//!   are roll, pitch and yaw in radians, composed as `Rz(yaw) Ry(pitch) Rx(roll)`.
//!
//! Frame `k` is line `k` (or the `k`-th file in name order). Translation is
//! ignored. The INS-to-camera mounting rotation is not applied; pass the
//! sequence through [`with_mounting`] when it is known.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3};

use super::trajectory::{Trajectory, TrajectoryEntry, TrajectoryError};
use crate::pose::euler_to_matrix;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrajectoryError + '_ {
    move |source| TrajectoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn numbers(line: &str, row: usize) -> Result<Vec<f64>, TrajectoryError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| TrajectoryError::BadRow {
                row,
                reason: format!("not a number: {t:?}"),
            })
        })
        .collect()
}

/// Nearest rotation to a possibly non-orthonormal 3x3 block.
fn orthonormalize(m: Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, (u * v_t).determinant().signum()));
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

pub fn parse_pose_file(text: &str) -> Result<Trajectory, TrajectoryError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let v = numbers(line, i + 1)?;
        let (ts, m) = match v.len() {
            12 => (None, &v[..]),
            13 => (Some(v[0]), &v[1..]),
            n => {
                return Err(TrajectoryError::BadRow {
                    row: i + 1,
                    reason: format!("expected 12 or 13 numbers, found {n}"),
                })
            }
        };
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        entries.push(TrajectoryEntry::new(entries.len(), ts, orthonormalize(r)));
    }
    Ok(Trajectory::new(entries))
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Trajectory, TrajectoryError> {
    let path = path.as_ref();
    parse_pose_file(&fs::read_to_string(path).map_err(io(path))?)
}

pub fn parse_oxts_record(text: &str, row: usize) -> Result<Rotation3<f64>, TrajectoryError> {
    let v = numbers(text.lines().next().unwrap_or(""), row)?;
    if v.len() < 6 {
        return Err(TrajectoryError::BadRow {
            row,
            reason: format!("OXTS record has {} fields, need at least 6", v.len()),
        });
    }
    Ok(euler_to_matrix(v[3], v[4], v[5]))
}

pub fn read_oxts_dir(dir: impl AsRef<Path>) -> Result<Trajectory, TrajectoryError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    for (k, f) in files.iter().enumerate() {
        let r = parse_oxts_record(&fs::read_to_string(f).map_err(io(f))?, k)?;
        entries.push(TrajectoryEntry::new(k, None, r));
    }
    Ok(Trajectory::new(entries))
}

/// Re-expresses body orientations in the camera frame: `O_cam = O_body M`
/// with `M` the camera-to-body mounting rotation.
pub fn with_mounting(traj: &Trajectory, mounting: &Rotation3<f64>) -> Trajectory {
    Trajectory::new(
        traj.entries()
            .iter()
            .map(|e| TrajectoryEntry {
                orientation: e.orientation * mounting,
                ..e.clone()
            })
            .collect(),
    )
}

/// First `limit` entries, all when `None`.
pub fn truncate(traj: &Trajectory, limit: Option<usize>) -> Trajectory {
    let n = limit.unwrap_or(traj.len()).min(traj.len());
    Trajectory::new(traj.entries()[..n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::geodesic_distance;

    #[test]
    fn pose_lines_with_and_without_timestamps() {
        let r = euler_to_matrix(0.1, -0.2, 0.3);
        let m = r.matrix();
        let row = |ts: Option<f64>| {
            let mut v: Vec<String> = ts.into_iter().map(|t| t.to_string()).collect();
            for i in 0..3 {
                for j in 0..3 {
                    v.push(m[(i, j)].to_string());
                }
                v.push(format!("{}", i as f64 * 2.5));
            }
            v.join(" ")
        };
        let text = format!("{}\n\n{}\n", row(None), row(None));
        let t = parse_pose_file(&text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[1].frame_index, 1);
        assert!(geodesic_distance(&t.entries()[0].orientation, &r) < 1e-12);

        let t = parse_pose_file(&format!("{}\n", row(Some(12.5)))).unwrap();
        assert_eq!(t.entries()[0].timestamp, Some(12.5));
        assert!(parse_pose_file("1 2 3\n").is_err());
        assert!(parse_pose_file("a b c d e f g h i j k l\n").is_err());
    }

    #[test]
    fn oxts_fields_four_to_six_are_the_attitude() {
        let rec = "49.0 8.4 116.0 0.01 -0.02 1.5 0 0 0\n";
        let r = parse_oxts_record(rec, 0).unwrap();
        assert!(geodesic_distance(&r, &euler_to_matrix(0.01, -0.02, 1.5)) < 1e-15);
        assert!(parse_oxts_record("1 2 3", 0).is_err());

        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("0000000001.txt"), "0 0 0 0 0 0.2\n").unwrap();
        fs::write(dir.path().join("0000000000.txt"), rec).unwrap();
        let t = read_oxts_dir(dir.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(geodesic_distance(&t.entries()[1].orientation, &euler_to_matrix(0.0, 0.0, 0.2)) < 1e-15);
    }

    #[test]
    fn mounting_and_truncation() {
        let m = euler_to_matrix(0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let t = Trajectory::new(vec![
            TrajectoryEntry::new(0, None, Rotation3::identity()),
            TrajectoryEntry::new(1, None, euler_to_matrix(0.0, 0.0, 0.3)),
        ]);
        let c = with_mounting(&t, &m);
        assert!(geodesic_distance(&c.entries()[0].orientation, &m) < 1e-15);
        // Relative motion seen by the camera is the body motion conjugated.
        let rel = c.entries()[0].orientation.inverse() * c.entries()[1].orientation;
        let want = m.inverse() * euler_to_matrix(0.0, 0.0, 0.3) * m;
        assert!(geodesic_distance(&rel, &want) < 1e-12);
        assert_eq!(truncate(&t, Some(1)).len(), 1);
        assert_eq!(truncate(&t, Some(10)).len(), 2);
    }
}
