//! Orientation sequences and their CSV form.
//!
//! Ground truth: `frame_index,timestamp,qw,qx,qy,qz` (timestamp may be
//! empty). Estimates add `roll,pitch,yaw,inlier_count,inlier_ratio,failed`.
//! Columns are matched by header name; unknown columns are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::pose::{euler_to_matrix, rotation_to_euler};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("unknown euler convention {0:?} (expected zyx or xyz)")]
    UnknownConvention(String),
}

/// How Euler columns in an input file compose into a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EulerConvention {
    /// `Rz(yaw) Ry(pitch) Rx(roll)`, the convention used for output.
    #[default]
    Zyx,
    /// `Rx(roll) Ry(pitch) Rz(yaw)`.
    Xyz,
}

impl FromStr for EulerConvention {
    type Err = TrajectoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zyx" => Ok(Self::Zyx),
            "xyz" => Ok(Self::Xyz),
            _ => Err(TrajectoryError::UnknownConvention(s.to_string())),
        }
    }
}

impl EulerConvention {
    pub fn to_rotation(self, roll: f64, pitch: f64, yaw: f64) -> Rotation3<f64> {
        match self {
            Self::Zyx => euler_to_matrix(roll, pitch, yaw),
            Self::Xyz => {
                let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
                let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
                let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
                rx * ry * rz
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    pub frame_index: usize,
    pub timestamp: Option<f64>,
    pub orientation: Rotation3<f64>,
    pub inlier_count: Option<usize>,
    pub inlier_ratio: Option<f64>,
    /// The pair ending at this frame failed and identity motion was used.
    pub failed: bool,
}

impl TrajectoryEntry {
    pub fn new(frame_index: usize, timestamp: Option<f64>, orientation: Rotation3<f64>) -> Self {
        Self {
            frame_index,
            timestamp,
            orientation,
            inlier_count: None,
            inlier_ratio: None,
            failed: false,
        }
    }

    /// `(roll, pitch, yaw)` in the Z-Y-X convention.
    pub fn euler(&self) -> (f64, f64, f64) {
        rotation_to_euler(&self.orientation)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
}

#[derive(Debug, Deserialize)]
struct Record {
    frame_index: usize,
    #[serde(default)]
    timestamp: Option<f64>,
    qw: Option<f64>,
    qx: Option<f64>,
    qy: Option<f64>,
    qz: Option<f64>,
    #[serde(default)]
    roll: Option<f64>,
    #[serde(default)]
    pitch: Option<f64>,
    #[serde(default)]
    yaw: Option<f64>,
    #[serde(default)]
    inlier_count: Option<usize>,
    #[serde(default)]
    inlier_ratio: Option<f64>,
    #[serde(default)]
    failed: Option<bool>,
}

/// Quaternion with `w >= 0`, the canonical sign.
fn canonical_quaternion(r: &Rotation3<f64>) -> Quaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r).into_inner();
    if q.w < 0.0 {
        -q
    } else {
        q
    }
}

impl Trajectory {
    pub fn new(entries: Vec<TrajectoryEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: TrajectoryEntry) {
        self.entries.push(entry);
    }

    /// Every orientation left-multiplied by the inverse of the first, so
    /// entry 0 becomes identity.
    pub fn rebased(&self) -> Self {
        let Some(first) = self.entries.first() else {
            return self.clone();
        };
        let inv = first.orientation.inverse();
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| TrajectoryEntry {
                    orientation: inv * e.orientation,
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Full CSV including Euler angles and per-pair statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,timestamp,qw,qx,qy,qz,roll,pitch,yaw,inlier_count,inlier_ratio,failed\n");
        for e in &self.entries {
            let q = canonical_quaternion(&e.orientation);
            let (roll, pitch, yaw) = e.euler();
            let opt = |v: Option<String>| v.unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                e.frame_index,
                opt(e.timestamp.map(|t| t.to_string())),
                q.w,
                q.i,
                q.j,
                q.k,
                roll,
                pitch,
                yaw,
                opt(e.inlier_count.map(|c| c.to_string())),
                opt(e.inlier_ratio.map(|r| r.to_string())),
                e.failed
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Parses quaternion columns, or Euler columns (radians) when no
    /// quaternion is present, composed per `convention`.
    pub fn from_csv(text: &str, convention: EulerConvention) -> Result<Self, TrajectoryError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, rec) in reader.deserialize::<Record>().enumerate() {
            let row = i + 2;
            let r = rec?;
            let orientation = match (r.qw, r.qx, r.qy, r.qz, r.roll, r.pitch, r.yaw) {
                (Some(w), Some(x), Some(y), Some(z), ..) => {
                    let q = Quaternion::new(w, x, y, z);
                    let n = q.norm();
                    if !(n.is_finite() && n > 1e-9) {
                        return Err(TrajectoryError::BadRow {
                            row,
                            reason: "quaternion has zero or non-finite norm".into(),
                        });
                    }
                    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
                }
                (.., Some(roll), Some(pitch), Some(yaw)) => convention.to_rotation(roll, pitch, yaw),
                _ => {
                    return Err(TrajectoryError::BadRow {
                        row,
                        reason: "needs qw,qx,qy,qz or roll,pitch,yaw".into(),
                    })
                }
            };
            entries.push(TrajectoryEntry {
                frame_index: r.frame_index,
                timestamp: r.timestamp,
                orientation,
                inlier_count: r.inlier_count,
                inlier_ratio: r.inlier_ratio,
                failed: r.failed.unwrap_or(false),
            });
        }
        Ok(Self { entries })
    }

    pub fn read_csv(path: impl AsRef<Path>, convention: EulerConvention) -> Result<Self, TrajectoryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text, convention)
    }
}
