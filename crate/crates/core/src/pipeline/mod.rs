//! End-to-end rotation estimation: unwrap both frames, register tile pairs,
//! lift the flow field to rays and solve for the relative pose. Sequences
//! chain the per-pair rotations into orientations relative to frame 0.

pub mod cli;
pub mod dataset;
pub mod evaluate;
pub mod mpi;
pub mod trajectory;

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Rotation3;
use thiserror::Error;

use crate::calib::{CalibError, CameraModel};
use crate::flowfield::{
    build_flow_field_with, default_tile_size, make_grid, tile_surfaces, FlowError, FlowField, TileGrid,
    DEFAULT_TILE_FRACTION,
};
use crate::image::{Image, ImageError};
use crate::pose::{estimate_pose_with, lift_correspondences, PoseError, RansacConfig, RelativePose};
use crate::specreg::{CorrelationSurfaces, RealGrid, RegistrationConfig, RegistrationError, Registrar};
use crate::unwrap::{PanoramaMap, PanoramaSpec, UnwrapError};

pub use dataset::DatasetManifest;
pub use evaluate::{evaluate, evaluate_with, EvalError, EvalReport, DEFAULT_TIME_TOLERANCE};
pub use trajectory::{EulerConvention, Trajectory, TrajectoryEntry, TrajectoryError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: ImageError,
    },
    #[error("frame {index} not found: {path}")]
    MissingFrame { index: usize, path: String },
    #[error("frame {index} is {got:?}, calibration expects {want:?}")]
    FrameSize {
        index: usize,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("empty frame list")]
    NoFrames,
    #[error("calibration: {0}")]
    Calib(#[from] CalibError),
    #[error("panorama: {0}")]
    Unwrap(#[from] UnwrapError),
    #[error("tiling: {0}")]
    Tiling(FlowError),
    #[error("registration setup: {0}")]
    Registration(#[from] RegistrationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Image(#[from] ImageError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Every tunable of a run. `None` fields are derived from the calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tile_size_frac: f64,
    /// Explicit tile side; overrides `tile_size_frac`.
    pub tile_size: Option<usize>,
    pub overlap: f64,
    pub th_pr: f64,
    pub th_pnr: f64,
    /// Probe offset from the tile center; `None` means `N_a / 8`.
    pub delta: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub ransac: RansacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let reg = RegistrationConfig::default();
        Self {
            tile_size_frac: DEFAULT_TILE_FRACTION,
            tile_size: None,
            overlap: 0.0,
            th_pr: reg.th_pr,
            th_pnr: reg.th_pnr,
            delta: None,
            rho_min: None,
            rho_max: None,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub unwrap: Duration,
    pub flow: Duration,
    pub pose: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.unwrap + self.flow + self.pose
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDiagnostics {
    pub tiles: usize,
    pub accepted_tiles: usize,
    pub correspondences: usize,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    pub timings: StageTimings,
    /// Why the pair fell back to identity, if it did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub pose: RelativePose,
    pub diagnostics: PairDiagnostics,
    /// Absent when registration accepted no tile.
    pub flow: Option<FlowField>,
}

impl PairResult {
    pub fn failed(&self) -> bool {
        self.diagnostics.failure.is_some()
    }
}

/// Prepared state for one camera: panorama map, tile grid and registrar.
#[derive(Debug, Clone)]
pub struct Pipeline {
    model: CameraModel,
    map: PanoramaMap,
    grid: TileGrid,
    registrar: Registrar,
    delta: f64,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(model: CameraModel, config: PipelineConfig) -> Result<Self, PipelineError> {
        let spec = PanoramaSpec::for_model(&model, config.rho_min, config.rho_max)?;
        let tile = config
            .tile_size
            .unwrap_or_else(|| default_tile_size(spec.width, spec.height, config.tile_size_frac));
        let grid = make_grid(spec.width, spec.height, tile, config.overlap).map_err(PipelineError::Tiling)?;
        let registrar = Registrar::new(
            tile,
            RegistrationConfig {
                th_pr: config.th_pr,
                th_pnr: config.th_pnr,
                ..RegistrationConfig::default()
            },
        )?;
        let delta = config.delta.unwrap_or(tile as f64 / 8.0);
        if !(delta.is_finite() && delta > 0.0) {
            return Err(PipelineError::Config(format!("delta must be positive, got {delta}")));
        }
        Ok(Self {
            map: PanoramaMap::new(&model, spec),
            model,
            grid,
            registrar,
            delta,
            config,
        })
    }

    pub fn model(&self) -> &CameraModel {
        &self.model
    }

    pub fn spec(&self) -> &PanoramaSpec {
        self.map.spec()
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn check_frame(&self, index: usize, frame: &Image) -> Result<(), PipelineError> {
        let want = self.model.image_size();
        let got = (frame.width(), frame.height());
        if got != want {
            return Err(PipelineError::FrameSize { index, got, want });
        }
        Ok(())
    }

    pub fn unwrap(&self, omni: &Image) -> Image {
        self.map.unwrap(omni)
    }

    /// Relative pose taking frame-2 rays to frame 1. Registration or pose
    /// failures give identity with `diagnostics.failure` set.
    pub fn run_pair(&self, frame1: &Image, frame2: &Image) -> Result<PairResult, PipelineError> {
        self.check_frame(0, frame1)?;
        self.check_frame(1, frame2)?;
        let t0 = Instant::now();
        let (p1, p2) = rayon::join(|| self.unwrap(frame1), || self.unwrap(frame2));
        self.run_panoramas(&p1, &p2, t0.elapsed())
    }

    /// [`Pipeline::run_pair`] on panoramas that are already unwrapped.
    pub fn run_panoramas(
        &self,
        pano1: &Image,
        pano2: &Image,
        unwrap_time: Duration,
    ) -> Result<PairResult, PipelineError> {
        let mut diagnostics = PairDiagnostics {
            tiles: self.grid.len(),
            accepted_tiles: 0,
            correspondences: 0,
            inlier_count: 0,
            inlier_ratio: 0.0,
            timings: StageTimings {
                unwrap: unwrap_time,
                ..StageTimings::default()
            },
            failure: None,
        };
        let t1 = Instant::now();
        let flow = match build_flow_field_with(pano1, pano2, &self.grid, &self.registrar, self.delta) {
            Ok(f) => f,
            Err(e @ FlowError::EmptyField { .. }) => {
                diagnostics.timings.flow = t1.elapsed();
                diagnostics.failure = Some(e.to_string());
                return Ok(PairResult {
                    pose: RelativePose::identity(),
                    diagnostics,
                    flow: None,
                });
            }
            Err(e) => return Err(PipelineError::Tiling(e)),
        };
        diagnostics.timings.flow = t1.elapsed();
        diagnostics.accepted_tiles = flow.accepted_count();

        let t2 = Instant::now();
        let estimate = lift_correspondences(&flow, &self.model, self.map.spec()).and_then(|corrs| {
            diagnostics.correspondences = corrs.len();
            estimate_pose_with(&corrs, &self.config.ransac)
        });
        diagnostics.timings.pose = t2.elapsed();
        let pose = match estimate {
            Ok(p) => {
                diagnostics.inlier_count = p.inlier_count;
                diagnostics.inlier_ratio = p.inlier_ratio;
                p
            }
            Err(e @ (PoseError::InsufficientCorrespondences { .. } | PoseError::NoConsensus { .. })) => {
                diagnostics.failure = Some(e.to_string());
                RelativePose::identity()
            }
        };
        Ok(PairResult {
            pose,
            diagnostics,
            flow: Some(flow),
        })
    }

    /// Per-tile correlation surfaces of one panorama pair.
    pub fn surfaces(&self, pano1: &Image, pano2: &Image) -> Result<Vec<CorrelationSurfaces>, PipelineError> {
        tile_surfaces(pano1, pano2, &self.grid, &self.registrar).map_err(PipelineError::Tiling)
    }

    /// Chains every consecutive pair. Frames are loaded by `load` one at a
    /// time, each once; `observe` sees every pair result as it completes.
    pub fn run_frames<F, O>(&self, count: usize, mut load: F, mut observe: O) -> Result<Trajectory, PipelineError>
    where
        F: FnMut(usize) -> Result<(Image, Option<f64>), PipelineError>,
        O: FnMut(usize, &Image, &Image, &PairResult) -> Result<(), PipelineError>,
    {
        if count == 0 {
            return Err(PipelineError::NoFrames);
        }
        let (first, ts) = load(0)?;
        self.check_frame(0, &first)?;
        let mut traj = Trajectory::default();
        traj.push(TrajectoryEntry::new(0, ts, Rotation3::identity()));
        let mut orientation = Rotation3::identity();
        let mut prev = self.unwrap(&first);
        for k in 1..count {
            let (frame, ts) = load(k)?;
            self.check_frame(k, &frame)?;
            let t0 = Instant::now();
            let pano = self.unwrap(&frame);
            let result = self.run_panoramas(&prev, &pano, t0.elapsed())?;
            observe(k, &prev, &pano, &result)?;
            orientation *= result.pose.rotation;
            orientation.renormalize();
            traj.push(TrajectoryEntry {
                frame_index: k,
                timestamp: ts,
                orientation,
                inlier_count: Some(result.diagnostics.inlier_count),
                inlier_ratio: Some(result.diagnostics.inlier_ratio),
                failed: result.failed(),
            });
            prev = pano;
        }
        Ok(traj)
    }
}

/// One-shot pair estimate with a freshly prepared [`Pipeline`].
pub fn run_pair(
    frame1: &Image,
    frame2: &Image,
    model: &CameraModel,
    config: &PipelineConfig,
) -> Result<(RelativePose, PairDiagnostics), PipelineError> {
    let result = Pipeline::new(model.clone(), config.clone())?.run_pair(frame1, frame2)?;
    Ok((result.pose, result.diagnostics))
}

/// Runs the manifest's frames in order and returns orientations relative to
/// frame 0.
pub fn run_sequence(manifest: &DatasetManifest) -> Result<Trajectory, PipelineError> {
    run_sequence_observed(manifest, |_, _, _, _| Ok(()))
}

pub fn run_sequence_observed<O>(manifest: &DatasetManifest, observe: O) -> Result<Trajectory, PipelineError>
where
    O: FnMut(usize, &Image, &Image, &PairResult) -> Result<(), PipelineError>,
{
    let model = manifest.load_model()?;
    let pipeline = Pipeline::new(model, manifest.config.clone())?;
    pipeline.run_frames(
        manifest.frames.len(),
        |k| Ok((manifest.load_frame(k)?, manifest.timestamps.get(k).copied().flatten())),
        observe,
    )
}

/// Grayscale view of a correlation surface scaled to `[0, 1]`.
pub fn surface_image(g: &RealGrid) -> Image {
    let lo = g.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = g.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::from_fn(g.cols, g.rows, |x, y| ((g.at(y, x) - lo) / span) as f32)
}

/// Writes the flow CSV, an arrow overlay and every tile's correlation
/// surfaces for one pair under `dir`.
pub fn dump_pair(
    dir: &Path,
    pipeline: &Pipeline,
    pano1: &Image,
    pano2: &Image,
    result: &PairResult,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    if let Some(flow) = &result.flow {
        let path = dir.join("flow.csv");
        flow.write_csv(&path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        flow.render_arrows(pano2, 4.0).save_8bit(dir.join("flow.png"))?;
    }
    for (i, s) in pipeline.surfaces(pano1, pano2)?.iter().enumerate() {
        surface_image(&s.rotation_scale).save_8bit(dir.join(format!("tile_{i:03}_rotation_scale.pgm")))?;
        if let Some(t) = &s.translation {
            surface_image(t).save_8bit(dir.join(format!("tile_{i:03}_translation.pgm")))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
