//! Command-line front end.
//!
//! A `--config FILE` holds `key = value` lines whose keys are long flag
//! names; they are applied before the command line, so flags given there win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::dataset::DatasetManifest;
use super::evaluate::{evaluate_with, EvalError, DEFAULT_TIME_TOLERANCE};
use super::mpi;
use super::trajectory::{EulerConvention, Trajectory, TrajectoryError};
use super::{dump_pair, run_sequence_observed, Pipeline, PipelineConfig, PipelineError};
use crate::calib::{parse_calibration, CalibError, CameraModel};
use crate::flowfield::DEFAULT_TILE_FRACTION;
use crate::image::{Image, ImageError};
use crate::pose::{rotation_to_euler, RansacConfig};
use crate::synthgen::{self, SynthError};
use crate::unwrap::{unwrap_image, PanoramaSpec, UnwrapError};

/// Parses an angle: `1.5deg`, `1.5°`, `0.02rad`; a bare number is degrees.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, to_rad) = if let Some(v) = s.strip_suffix("deg") {
        (v, true)
    } else if let Some(v) = s.strip_suffix('°') {
        (v, true)
    } else if let Some(v) = s.strip_suffix("rad") {
        (v, false)
    } else {
        (s, true)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("not an angle: {s:?} (examples: 2deg, 0.03rad)"))?;
    if !v.is_finite() {
        return Err(format!("not a finite angle: {s:?}"));
    }
    Ok(if to_rad { v.to_radians() } else { v })
}

fn parse_convention(s: &str) -> Result<EulerConvention, String> {
    s.parse().map_err(|e: TrajectoryError| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "omni-fmi", version, about = "Rotation estimation for omnidirectional image sequences")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Key-value file of default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for tile registration (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the orientation of every frame of a sequence.
    Run(RunArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
    /// Render a synthetic dataset with known rotations.
    Synth(SynthArgs),
    /// Estimate the rotation between two frames and print diagnostics.
    Register(RegisterArgs),
    /// Unwrap one omni-image into a panorama.
    Unwrap(UnwrapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Tile side as a fraction of the panorama width, rounded to a power of two.
    #[arg(long, default_value_t = DEFAULT_TILE_FRACTION)]
    pub tile_size_frac: f64,
    /// Explicit tile side in pixels (power of two).
    #[arg(long)]
    pub tile_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub overlap: f64,
    /// Minimum peak ratio for accepting a tile.
    #[arg(long, default_value_t = 0.03)]
    pub th_pr: f64,
    /// Minimum primary-to-secondary peak ratio for accepting a tile.
    #[arg(long, default_value_t = 1.5)]
    pub th_pnr: f64,
    /// Probe offset from the tile center in pixels (default: tile side / 8).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Inner unwrap radius in omni pixels.
    #[arg(long)]
    pub rho_min: Option<f64>,
    /// Outer unwrap radius in omni pixels.
    #[arg(long)]
    pub rho_max: Option<f64>,
    /// RANSAC inlier threshold (angle; bare numbers are degrees).
    #[arg(long, value_parser = parse_angle, default_value = "0.5deg")]
    pub ransac_thresh: f64,
    #[arg(long, default_value_t = 1000)]
    pub ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PipelineArgs {
    pub fn to_config(&self) -> PipelineConfig {
        PipelineConfig {
            tile_size_frac: self.tile_size_frac,
            tile_size: self.tile_size,
            overlap: self.overlap,
            th_pr: self.th_pr,
            th_pnr: self.th_pnr,
            delta: self.delta,
            rho_min: self.rho_min,
            rho_max: self.rho_max,
            ransac: RansacConfig {
                threshold: self.ransac_thresh,
                max_iterations: self.ransac_iters,
                seed: self.seed,
                ..RansacConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtFormat {
    /// `frame_index,timestamp,qw,qx,qy,qz` (or Euler columns).
    Csv,
    /// One 3x4 pose matrix per line, optional leading timestamp.
    Poses,
    /// Directory of OXTS records, one file per frame.
    Oxts,
}

#[derive(Debug, Clone, Args)]
pub struct GroundTruthArgs {
    /// Ground-truth trajectory.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GtFormat::Csv)]
    pub gt_format: GtFormat,
    /// Composition order of Euler columns in CSV input: zyx or xyz.
    #[arg(long, value_parser = parse_convention, default_value = "zyx")]
    pub euler_convention: EulerConvention,
    /// Largest timestamp gap (seconds) that still aligns two entries.
    #[arg(long, default_value_t = DEFAULT_TIME_TOLERANCE)]
    pub time_tolerance: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// OCamCalib calibration file.
    #[arg(long)]
    pub calib: PathBuf,
    /// Frame directory or list file.
    #[arg(long)]
    pub frames: PathBuf,
    /// Output trajectory CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Use only the first N frames.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Write per-pair flow fields and correlation surfaces here.
    #[arg(long, value_name = "DIR")]
    pub debug_dump: Option<PathBuf>,
    #[command(flatten)]
    pub gt: GroundTruthArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated trajectory CSV.
    #[arg(long)]
    pub est: PathBuf,
    #[command(flatten)]
    pub gt: GroundTruthArgs,
    /// Write the metric table as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-frame plot data as CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Constant yaw per frame (angle).
    #[arg(long, value_parser = parse_angle, conflicts_with = "walk")]
    pub yaw_rate: Option<f64>,
    /// Random walk with at most this rotation per frame (angle).
    #[arg(long, value_parser = parse_angle)]
    pub walk: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Additive Gaussian noise sigma, in intensity units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Camera to render with (default: built-in 1024x768 model).
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub frame1: PathBuf,
    #[arg(long)]
    pub frame2: PathBuf,
    /// Write the flow field and correlation surfaces here.
    #[arg(long, value_name = "DIR")]
    pub debug_dump: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct UnwrapArgs {
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rho_min: Option<f64>,
    #[arg(long)]
    pub rho_max: Option<f64>,
}

/// A failure reported as one `error: <kind>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::MissingFrame { .. } => "missing-frame",
            PipelineError::Frame { .. } | PipelineError::FrameSize { .. } => "frame",
            PipelineError::NoFrames => "no-frames",
            PipelineError::Calib(_) => "calibration",
            PipelineError::Unwrap(_) | PipelineError::Tiling(_) | PipelineError::Config(_) => "config",
            PipelineError::Registration(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::Image(_) => "image",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        Self::new("trajectory", e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::new("evaluation", e.to_string())
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        Self::new("calibration", e.to_string())
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        Self::new("image", e.to_string())
    }
}

impl From<UnwrapError> for CliError {
    fn from(e: UnwrapError) -> Self {
        Self::new("config", e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        Self::new("synth", e.to_string())
    }
}

/// `--flag value` tokens from a config file.
pub fn config_tokens(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (line, ""),
            },
        };
        let key = key.trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::new("config", format!("config line {}: bad key in {raw:?}", i + 1)));
        }
        out.push(OsString::from(format!("--{key}")));
        if !value.is_empty() {
            out.push(OsString::from(value));
        }
    }
    Ok(out)
}

/// Splices config-file tokens in right after the subcommand name.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::new("io", format!("config {}: {e}", Path::new(&path).display())))?;
    let tokens = config_tokens(&text)?;
    let names = ["run", "eval", "synth", "register", "unwrap"];
    let Some(pos) = args.iter().position(|a| names.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn load_model(path: &Path) -> Result<CameraModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    Ok(parse_calibration(&text)?)
}

fn load_ground_truth(args: &GroundTruthArgs, path: &Path) -> Result<Trajectory, CliError> {
    Ok(match args.gt_format {
        GtFormat::Csv => Trajectory::read_csv(path, args.euler_convention)?,
        GtFormat::Poses => mpi::read_pose_file(path)?,
        GtFormat::Oxts => mpi::read_oxts_dir(path)?,
    })
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let mut manifest = DatasetManifest::from_path(args.calib.clone(), &args.frames, args.pipeline.to_config())?;
    if let Some(limit) = args.limit {
        manifest.frames.truncate(limit.max(1));
        manifest.timestamps.truncate(limit.max(1));
    }
    if let Some(gt) = &args.gt.gt {
        if !gt.exists() {
            return Err(CliError::new("io", format!("{}: not found", gt.display())));
        }
    }
    let pipeline = match &args.debug_dump {
        Some(_) => Some(Pipeline::new(manifest.load_model()?, manifest.config.clone())?),
        None => None,
    };
    let traj = run_sequence_observed(&manifest, |k, p1, p2, result| {
        if let (Some(dir), Some(pl)) = (&args.debug_dump, &pipeline) {
            dump_pair(&dir.join(format!("pair_{k:04}")), pl, p1, p2, result)?;
        }
        Ok(())
    })?;
    traj.write_csv(&args.out)?;
    let failed = traj.entries().iter().filter(|e| e.failed).count();
    let mut msg = format!(
        "wrote {} frames to {} ({} failed pairs)\n",
        traj.len(),
        args.out.display(),
        failed
    );
    if let Some(gt) = &args.gt.gt {
        let gt = load_ground_truth(&args.gt, gt)?;
        let report = evaluate_with(&traj, &gt, args.gt.time_tolerance)?;
        let _ = writeln!(msg, "{report}");
    }
    Ok(msg)
}

fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let est = Trajectory::read_csv(&args.est, EulerConvention::Zyx)?;
    let gt_path = args
        .gt
        .gt
        .as_ref()
        .ok_or_else(|| CliError::new("usage", "eval needs --gt"))?;
    let gt = load_ground_truth(&args.gt, gt_path)?;
    let report = evaluate_with(&est, &gt, args.gt.time_tolerance)?;
    report.write(args.report.as_deref(), args.plot.as_deref())?;
    Ok(format!("{report}\n"))
}

fn cmd_synth(args: &SynthArgs) -> Result<String, CliError> {
    if args.frames == 0 {
        return Err(CliError::new("usage", "--frames must be at least 1"));
    }
    let model = match &args.calib {
        Some(p) => load_model(p)?,
        None => synthgen::default_model(),
    };
    let rotations = match (args.yaw_rate, args.walk) {
        (_, Some(step)) => synthgen::random_walk(args.frames, step, args.seed),
        (rate, None) => synthgen::yaw_ramp(args.frames, rate.unwrap_or(1f64.to_radians())),
    };
    let scene = synthgen::SyntheticScene::for_model(&model, args.seed);
    let seq = synthgen::render_sequence(&scene, &model, &rotations, args.noise)?;
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    synthgen::write_sequence(&seq, &model, &args.out)?;
    Ok(format!("wrote {} frames to {}\n", args.frames, args.out.display()))
}

fn cmd_register(args: &RegisterArgs) -> Result<String, CliError> {
    let model = load_model(&args.calib)?;
    let f1 = Image::load(&args.frame1)?;
    let f2 = Image::load(&args.frame2)?;
    let pipeline = Pipeline::new(model, args.pipeline.to_config())?;
    pipeline.check_frame(0, &f1)?;
    pipeline.check_frame(1, &f2)?;
    let (p1, p2) = (pipeline.unwrap(&f1), pipeline.unwrap(&f2));
    let result = pipeline.run_panoramas(&p1, &p2, Default::default())?;
    if let Some(dir) = &args.debug_dump {
        dump_pair(dir, &pipeline, &p1, &p2, &result)?;
    }
    let d = &result.diagnostics;
    let (roll, pitch, yaw) = rotation_to_euler(&result.pose.rotation);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "roll {:.6} pitch {:.6} yaw {:.6} rad (deg: {:.4} {:.4} {:.4})",
        roll,
        pitch,
        yaw,
        roll.to_degrees(),
        pitch.to_degrees(),
        yaw.to_degrees()
    );
    let _ = writeln!(
        out,
        "tiles {} accepted {} correspondences {} inliers {} ({:.3})",
        d.tiles, d.accepted_tiles, d.correspondences, d.inlier_count, d.inlier_ratio
    );
    if result.pose.translation_degenerate {
        let _ = writeln!(out, "translation: degenerate (rotation-only motion)");
    } else {
        let t = result.pose.translation_dir;
        let _ = writeln!(out, "translation direction {:.4} {:.4} {:.4}", t.x, t.y, t.z);
    }
    let _ = writeln!(out, "time flow {:?} pose {:?}", d.timings.flow, d.timings.pose);
    if let Some(f) = &d.failure {
        let _ = writeln!(out, "failed: {f} (identity reported)");
    }
    Ok(out)
}

fn cmd_unwrap(args: &UnwrapArgs) -> Result<String, CliError> {
    let model = load_model(&args.calib)?;
    let img = Image::load(&args.image)?;
    let spec = PanoramaSpec::for_model(&model, args.rho_min, args.rho_max)?;
    let pano = unwrap_image(&img, &model, &spec);
    pano.save(&args.out)?;
    Ok(format!(
        "wrote {}x{} panorama to {}\n",
        spec.width,
        spec.height,
        args.out.display()
    ))
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Register(a) => cmd_register(a),
        Command::Unwrap(a) => cmd_unwrap(a),
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 after printing an `error:` line, 2 for usage errors.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let report = |e: CliError| {
        eprintln!("error: {}: {}", e.kind, e.message.replace('\n', " "));
        1
    };
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let run = || dispatch(&cli);
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(CliError::new("config", format!("thread pool: {e}"))),
        },
        None => run(),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => report(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_accept_units() {
        assert!((parse_angle("2deg").unwrap() - 2f64.to_radians()).abs() < 1e-15);
        assert!((parse_angle("2°").unwrap() - 2f64.to_radians()).abs() < 1e-15);
        assert_eq!(parse_angle("0.25rad").unwrap(), 0.25);
        assert!((parse_angle("1").unwrap() - 1f64.to_radians()).abs() < 1e-15);
        assert!(parse_angle("fast").is_err());
        assert!(parse_angle("nandeg").is_err());
    }

    #[test]
    fn config_lines_become_flags() {
        let t = config_tokens("# comment\nth-pr = 0.05\nth_pnr 2\n--seed=4  # trailing\n\n").unwrap();
        let s: Vec<String> = t.iter().map(|o| o.to_string_lossy().into_owned()).collect();
        assert_eq!(s, ["--th-pr", "0.05", "--th-pnr", "2", "--seed", "4"]);
        assert!(config_tokens("config = x\n").is_err());
    }

    #[test]
    fn command_line_overrides_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "th-pr = 0.05\nseed = 9\n").unwrap();
        let args: Vec<OsString> = ["omni-fmi", "--config", cfg.to_str().unwrap(), "register", "--calib", "c", "--frame1", "a", "--frame2", "b", "--seed", "3"]
            .iter()
            .map(OsString::from)
            .collect();
        let cli = Cli::try_parse_from(expand_config(args).unwrap()).unwrap();
        let Command::Register(r) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(r.pipeline.th_pr, 0.05);
        assert_eq!(r.pipeline.seed, 3);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(cli_main(["omni-fmi", "eval", "--bogus"]), 2);
        assert_eq!(cli_main(["omni-fmi"]), 2);
    }

    #[test]
    fn failures_exit_with_one() {
        assert_eq!(cli_main(["omni-fmi", "eval", "--est", "/nonexistent/e.csv", "--gt", "/nonexistent/g.csv"]), 1);
    }
}
