//! Orientation error of an estimated trajectory against ground truth:
//! per-axis RMSE of wrapped Euler differences after rebasing both to their
//! first aligned frame.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use thiserror::Error;

use super::trajectory::Trajectory;
use crate::pose::rotation_to_euler;
use crate::specreg::wrap_angle;

/// Largest timestamp gap, in seconds, that still pairs two entries.
pub const DEFAULT_TIME_TOLERANCE: f64 = 0.02;

pub const AXES: [&str; 3] = ["roll", "pitch", "yaw"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("only {aligned} aligned frames; need at least 2")]
    TooFewAligned { aligned: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One aligned frame of the plot data. Absolute angles are relative to the
/// first aligned frame; `*_rel` are the increments from the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub frame_index: usize,
    pub timestamp: Option<f64>,
    pub est: [f64; 3],
    pub gt: [f64; 3],
    pub est_rel: [f64; 3],
    pub gt_rel: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub aligned: usize,
    /// Estimate entries with no ground-truth partner.
    pub dropped_est: usize,
    pub dropped_gt: usize,
    /// Per axis, roll/pitch/yaw, radians.
    pub rmse: [f64; 3],
    /// Sample standard deviation of the absolute per-frame error per axis.
    pub error_std: [f64; 3],
    /// Mean of the three axis RMSEs.
    pub mean_rmse: f64,
    /// Sample standard deviation of the three axis RMSEs.
    pub std_rmse: f64,
    pub rows: Vec<PlotRow>,
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Difference of two angles, each wrapped first, wrapped again.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    wrap_angle(wrap_angle(a) - wrap_angle(b))
}

fn euler_array(r: &nalgebra::Rotation3<f64>) -> [f64; 3] {
    let (roll, pitch, yaw) = rotation_to_euler(r);
    [roll, pitch, yaw]
}

/// Index pairs `(est, gt)`. Nearest timestamps within `tolerance` when every
/// entry of both has one, otherwise equal frame indices. One-to-one.
pub fn align(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Vec<(usize, usize)> {
    let timed = |t: &Trajectory| !t.is_empty() && t.entries().iter().all(|e| e.timestamp.is_some());
    if timed(est) && timed(gt) {
        let mut order: Vec<usize> = (0..gt.len()).collect();
        let ts = |i: usize| gt.entries()[i].timestamp.expect("checked");
        order.sort_by(|&a, &b| ts(a).total_cmp(&ts(b)));
        let mut used = vec![false; gt.len()];
        let mut pairs = Vec::new();
        for (i, e) in est.entries().iter().enumerate() {
            let t = e.timestamp.expect("checked");
            let pos = order.partition_point(|&j| ts(j) < t);
            let best = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .filter(|&p| p < order.len())
                .map(|p| order[p])
                .min_by(|&a, &b| (ts(a) - t).abs().total_cmp(&(ts(b) - t).abs()));
            if let Some(j) = best {
                if (ts(j) - t).abs() <= tolerance && !used[j] {
                    used[j] = true;
                    pairs.push((i, j));
                }
            }
        }
        pairs
    } else {
        let by_frame: HashMap<usize, usize> = gt
            .entries()
            .iter()
            .enumerate()
            .map(|(j, e)| (e.frame_index, j))
            .collect();
        est.entries()
            .iter()
            .enumerate()
            .filter_map(|(i, e)| by_frame.get(&e.frame_index).map(|&j| (i, j)))
            .collect()
    }
}

pub fn evaluate(est: &Trajectory, gt: &Trajectory) -> Result<EvalReport, EvalError> {
    evaluate_with(est, gt, DEFAULT_TIME_TOLERANCE)
}

pub fn evaluate_with(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<EvalReport, EvalError> {
    let pairs = align(est, gt, tolerance);
    if pairs.len() < 2 {
        return Err(EvalError::TooFewAligned { aligned: pairs.len() });
    }
    let e0 = est.entries()[pairs[0].0].orientation.inverse();
    let g0 = gt.entries()[pairs[0].1].orientation.inverse();
    let mut rows: Vec<PlotRow> = Vec::with_capacity(pairs.len());
    let mut prev: Option<(nalgebra::Rotation3<f64>, nalgebra::Rotation3<f64>)> = None;
    for &(i, j) in &pairs {
        let ee = &est.entries()[i];
        let re = e0 * ee.orientation;
        let rg = g0 * gt.entries()[j].orientation;
        let (est_rel, gt_rel) = match prev {
            Some((pe, pg)) => (euler_array(&(pe.inverse() * re)), euler_array(&(pg.inverse() * rg))),
            None => ([0.0; 3], [0.0; 3]),
        };
        rows.push(PlotRow {
            frame_index: ee.frame_index,
            timestamp: ee.timestamp.or(gt.entries()[j].timestamp),
            est: euler_array(&re),
            gt: euler_array(&rg),
            est_rel,
            gt_rel,
        });
        prev = Some((re, rg));
    }
    Ok(report_from_rows(rows, est.len() - pairs.len(), gt.len() - pairs.len()))
}

/// Error statistics of already aligned and rebased Euler rows.
pub fn report_from_rows(rows: Vec<PlotRow>, dropped_est: usize, dropped_gt: usize) -> EvalReport {
    let n = rows.len();
    let mut rmse = [0.0; 3];
    let mut error_std = [0.0; 3];
    for axis in 0..3 {
        let errs: Vec<f64> = rows.iter().map(|r| angle_difference(r.est[axis], r.gt[axis])).collect();
        rmse[axis] = (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
        error_std[axis] = sample_std(&abs);
    }
    EvalReport {
        aligned: n,
        dropped_est,
        dropped_gt,
        rmse,
        error_std,
        mean_rmse: rmse.iter().sum::<f64>() / 3.0,
        std_rmse: sample_std(&rmse),
        rows,
    }
}

impl EvalReport {
    /// `metric,value` rows: per-axis RMSE and spread, the summary and the
    /// alignment counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (a, name) in AXES.iter().enumerate() {
            let _ = writeln!(out, "{name}_rmse,{}", self.rmse[a]);
            let _ = writeln!(out, "{name}_std,{}", self.error_std[a]);
        }
        let _ = writeln!(out, "mean_rmse,{}", self.mean_rmse);
        let _ = writeln!(out, "std_rmse,{}", self.std_rmse);
        let _ = writeln!(out, "aligned,{}", self.aligned);
        let _ = writeln!(out, "dropped_est,{}", self.dropped_est);
        let _ = writeln!(out, "dropped_gt,{}", self.dropped_gt);
        out
    }

    /// Per-frame estimate and ground truth per axis, cumulative and relative.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("frame_index,timestamp");
        for kind in ["", "rel_"] {
            for name in AXES {
                let _ = write!(out, ",est_{kind}{name},gt_{kind}{name}");
            }
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{}",
                r.frame_index,
                r.timestamp.map(|t| t.to_string()).unwrap_or_default()
            );
            for (e, g) in [(&r.est, &r.gt), (&r.est_rel, &r.gt_rel)] {
                for a in 0..3 {
                    let _ = write!(out, ",{},{}", e[a], g[a]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, report: Option<&Path>, plot: Option<&Path>) -> Result<(), EvalError> {
        for (path, text) in [(report, self.to_csv()), (plot, self.plot_csv())] {
            if let Some(p) = path {
                std::fs::write(p, text).map_err(|source| EvalError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>10} {:>10}", "axis", "rmse[rad]", "std[rad]")?;
        for (a, name) in AXES.iter().enumerate() {
            writeln!(f, "{name:<6} {:>10.5} {:>10.5}", self.rmse[a], self.error_std[a])?;
        }
        writeln!(f, "{:<6} {:>10.5} {:>10.5}", "mean", self.mean_rmse, self.std_rmse)?;
        write!(
            f,
            "aligned {} frames (dropped {} estimated, {} ground truth)",
            self.aligned, self.dropped_est, self.dropped_gt
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::trajectory::TrajectoryEntry;
    use crate::pose::euler_to_matrix;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn traj(angles: &[(f64, f64, f64)], ts: Option<f64>) -> Trajectory {
        Trajectory::new(
            angles
                .iter()
                .enumerate()
                .map(|(i, &(r, p, y))| TrajectoryEntry::new(i, ts.map(|dt| i as f64 * dt), euler_to_matrix(r, p, y)))
                .collect(),
        )
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let a = traj(&[(0.0, 0.0, 0.0), (0.1, 0.2, 0.3), (0.2, -0.1, 0.5)], None);
        let r = evaluate(&a, &a).unwrap();
        assert_eq!(r.rmse, [0.0; 3]);
        assert_eq!(r.mean_rmse, 0.0);
        assert_eq!(r.aligned, 3);
    }

    #[test]
    fn constant_yaw_offset() {
        // Offsets only after frame 0, since both sides are rebased there.
        let gt = traj(&[(0.0, 0.0, 0.0), (0.0, 0.0, 0.2), (0.0, 0.0, 0.4)], None);
        let est = traj(&[(0.0, 0.0, 0.0), (0.0, 0.0, 0.3), (0.0, 0.0, 0.5)], None);
        let r = evaluate(&est, &gt).unwrap();
        // sqrt((0 + 0.01 + 0.01) / 3)
        let want = (0.02f64 / 3.0).sqrt();
        assert!((r.rmse[2] - want).abs() < 1e-12, "{:?}", r.rmse);
        assert!(r.rmse[0] < 1e-12 && r.rmse[1] < 1e-12);
    }

    #[test]
    fn yaw_offset_on_every_frame_with_common_start() {
        // est = gt with yaw + 0.1 from frame 1 on, aligned by timestamps.
        let gt_angles: Vec<_> = (0..10).map(|k| (0.0, 0.0, 0.05 * k as f64)).collect();
        let est_angles: Vec<_> = gt_angles
            .iter()
            .enumerate()
            .map(|(k, &(r, p, y))| (r, p, if k == 0 { y } else { y + 0.1 }))
            .collect();
        let r = evaluate(&traj(&est_angles, Some(0.1)), &traj(&gt_angles, Some(0.1))).unwrap();
        let want = (9.0 * 0.01f64 / 10.0).sqrt();
        assert!((r.rmse[2] - want).abs() < 1e-12);
    }

    #[test]
    fn summary_matches_table_layout() {
        // Axis RMSEs 0.058, 0.107, 0.075 summarize as 0.080 +- 0.025.
        let rmse = [0.058, 0.107, 0.075];
        assert!(((rmse.iter().sum::<f64>() / 3.0) - 0.08).abs() < 5e-4);
        assert!((sample_std(&rmse) - 0.025).abs() < 5e-4);
    }

    #[test]
    fn too_few_aligned_frames() {
        let a = traj(&[(0.0, 0.0, 0.0)], None);
        assert!(matches!(evaluate(&a, &a), Err(EvalError::TooFewAligned { aligned: 1 })));
        let b = Trajectory::new(vec![TrajectoryEntry::new(5, None, Rotation3::identity())]);
        let c = traj(&[(0.0, 0.0, 0.0), (0.0, 0.0, 0.0)], None);
        assert!(matches!(evaluate(&b, &c), Err(EvalError::TooFewAligned { aligned: 0 })));
    }

    #[test]
    fn timestamp_alignment_drops_unmatched() {
        let gt = traj(&[(0.0, 0.0, 0.0); 6], Some(0.1));
        let mut entries: Vec<TrajectoryEntry> = gt.entries().to_vec();
        // Jitter within tolerance, and one frame far from any ground truth.
        entries[1].timestamp = Some(0.105);
        entries[3].timestamp = Some(0.35);
        let est = Trajectory::new(entries);
        assert_eq!(align(&est, &gt, 0.02), vec![(0, 0), (1, 1), (2, 2), (4, 4), (5, 5)]);
        let r = evaluate(&est, &gt).unwrap();
        assert_eq!((r.aligned, r.dropped_est, r.dropped_gt), (5, 1, 1));
    }

    #[test]
    fn plot_data_has_cumulative_and_relative_columns() {
        let gt = traj(&[(0.0, 0.0, 0.0), (0.0, 0.0, 0.1), (0.0, 0.0, 0.3)], None);
        let r = evaluate(&gt, &gt).unwrap();
        let csv = r.plot_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "frame_index,timestamp,est_roll,gt_roll,est_pitch,gt_pitch,est_yaw,gt_yaw,\
             est_rel_roll,gt_rel_roll,est_rel_pitch,gt_rel_pitch,est_rel_yaw,gt_rel_yaw"
        );
        assert!((r.rows[2].gt[2] - 0.3).abs() < 1e-12);
        assert!((r.rows[2].gt_rel[2] - 0.2).abs() < 1e-12);
        assert_eq!(csv.lines().count(), 4);
        assert!(r.to_csv().contains("yaw_rmse,0\n"));
    }

    /// Brute-force oracle: Euler angles from explicit matrix entries after
    /// rebasing, differences folded by repeated 2 pi steps.
    fn oracle_rmse(est: &[Rotation3<f64>], gt: &[Rotation3<f64>]) -> [f64; 3] {
        let euler = |r: &Rotation3<f64>| {
            let m = r.matrix();
            let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
            [m[(2, 1)].atan2(m[(2, 2)]), pitch, m[(1, 0)].atan2(m[(0, 0)])]
        };
        let fold = |mut d: f64| {
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            }
            while d <= -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            d
        };
        let mut sums = [0.0; 3];
        for (e, g) in est.iter().zip(gt) {
            let a = euler(&(est[0].transpose() * e));
            let b = euler(&(gt[0].transpose() * g));
            for k in 0..3 {
                sums[k] += fold(a[k] - b[k]).powi(2);
            }
        }
        sums.map(|s| (s / est.len() as f64).sqrt())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rmse_matches_brute_force(seed in any::<u64>(), n in 2usize..30) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut angle = || rng.random_range(-1.2..1.2);
            let gt: Vec<Rotation3<f64>> = (0..n).map(|_| euler_to_matrix(angle(), angle(), angle())).collect();
            let est: Vec<Rotation3<f64>> = (0..n).map(|_| euler_to_matrix(angle(), angle(), angle())).collect();
            let wrap = |v: &[Rotation3<f64>]| Trajectory::new(
                v.iter().enumerate().map(|(i, r)| TrajectoryEntry::new(i, None, *r)).collect());
            let r = evaluate(&wrap(&est), &wrap(&gt)).unwrap();
            let want = oracle_rmse(&est, &gt);
            for k in 0..3 {
                prop_assert!((r.rmse[k] - want[k]).abs() < 1e-9, "{:?} vs {:?}", r.rmse, want);
            }
        }

        #[test]
        fn adding_full_turns_to_ground_truth_changes_nothing(
            yaws in proptest::collection::vec(-3.0f64..3.0, 3..10),
            turns in proptest::collection::vec(-2i32..3, 10),
        ) {
            let est: Vec<PlotRow> = yaws.iter().enumerate().map(|(i, &y)| PlotRow {
                frame_index: i, timestamp: None,
                est: [0.0, 0.0, y * 0.9], gt: [0.0, 0.0, y],
                est_rel: [0.0; 3], gt_rel: [0.0; 3],
            }).collect();
            let shifted: Vec<PlotRow> = est.iter().enumerate().map(|(i, r)| PlotRow {
                gt: [r.gt[0], r.gt[1], r.gt[2] + std::f64::consts::TAU * turns[i] as f64],
                ..r.clone()
            }).collect();
            let a = report_from_rows(est, 0, 0);
            let b = report_from_rows(shifted, 0, 0);
            prop_assert!((a.rmse[2] - b.rmse[2]).abs() < 1e-9);
        }
    }
}
