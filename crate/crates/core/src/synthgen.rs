//! Synthetic omni-image sequences with exactly known orientations.
//!
//! The scene is a band-limited random texture on a sphere at infinity,
//! stored as an equirectangular image. A camera with orientation `O`
//! (camera-to-world) sees, at pixel `p`, the texture at direction
//! `O * pixel_to_ray(p)`. Since the scene has no parallax, image motion is
//! caused by rotation only.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::calib::{Affine, CameraModel};
use crate::image::{Image, ImageError};
use crate::pipeline::trajectory::{Trajectory, TrajectoryEntry, TrajectoryError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Blur scales (in texels) of the summed noise octaves.
pub const DEFAULT_OCTAVES: [f64; 3] = [4.0, 10.0, 24.0];

/// Catadioptric-style model used for synthetic data: 1024x768, centered,
/// `f(rho) = -137.6 + 0.0011 rho^2`.
pub fn default_model() -> CameraModel {
    CameraModel::new(vec![-137.6, 0.0, 0.0011], Affine::IDENTITY, (512.0, 384.0), (1024, 768))
        .expect("valid built-in model")
}

/// Seeded band-limited noise on a torus: white noise octaves smoothed by
/// iterated box filters (a Gaussian approximation), each normalized to unit
/// variance, summed, and mapped to mean 0.5 and standard deviation 0.15.
pub fn band_limited_noise(width: usize, height: usize, seed: u64, octaves: &[f64]) -> Image {
    let mut acc = vec![0.0f32; width * height];
    for (k, &sigma) in octaves.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64 + 1);
        let mut layer: Vec<f32> = (0..width * height)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        gaussian_blur_wrapping(&mut layer, width, height, sigma);
        normalize(&mut layer);
        for (a, l) in acc.iter_mut().zip(&layer) {
            *a += l;
        }
    }
    normalize(&mut acc);
    for v in &mut acc {
        *v = (0.5 + 0.15 * *v).clamp(0.0, 1.0);
    }
    Image::new(width, height, acc).expect("finite texture")
}

fn normalize(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for x in v {
        *x = ((*x as f64 - mean) * inv) as f32;
    }
}

/// Three box passes per axis with wrap-around borders.
fn gaussian_blur_wrapping(data: &mut [f32], width: usize, height: usize, sigma: f64) {
    let radius = (((12.0 * sigma * sigma / 3.0 + 1.0).sqrt() - 1.0) / 2.0).round().max(1.0) as usize;
    for _ in 0..3 {
        data.par_chunks_mut(width).for_each(|row| box_wrap(row, radius));
    }
    let mut t = transpose(data, width, height);
    for _ in 0..3 {
        t.par_chunks_mut(height).for_each(|col| box_wrap(col, radius));
    }
    data.copy_from_slice(&transpose(&t, height, width));
}

fn transpose(data: &[f32], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}

fn box_wrap(line: &mut [f32], radius: usize) {
    let n = line.len();
    let src = line.to_vec();
    let span = 2 * radius + 1;
    let mut sum: f64 = (0..span)
        .map(|k| src[(k + n * span - radius) % n] as f64)
        .sum();
    for i in 0..n {
        line[i] = (sum / span as f64) as f32;
        let out = (i + n * span - radius) % n;
        let inc = (i + radius + 1) % n;
        sum += src[inc] as f64 - src[out] as f64;
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    texture: Image,
    seed: u64,
}

impl SyntheticScene {
    pub fn new(seed: u64, texture_width: usize, texture_height: usize) -> Self {
        Self {
            texture: band_limited_noise(texture_width, texture_height, seed, &DEFAULT_OCTAVES),
            seed,
        }
    }

    /// Scene whose texture is four times the model's image size per axis.
    pub fn for_model(model: &CameraModel, seed: u64) -> Self {
        let (w, h) = model.image_size();
        Self::new(seed, 4 * w, 4 * h)
    }

    pub fn from_texture(texture: Image, seed: u64) -> Self {
        Self { texture, seed }
    }

    pub fn texture(&self) -> &Image {
        &self.texture
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Texture value seen along world direction `d` (need not be unit).
    pub fn sample_direction(&self, d: &Vector3<f64>) -> f32 {
        let n = d.norm();
        let lon = d.y.atan2(d.x);
        let lat = (d.z / n).clamp(-1.0, 1.0).asin();
        let tw = self.texture.width() as f64;
        let th = self.texture.height() as f64;
        let x = (lon + PI) / TAU * tw - 0.5;
        let y = ((PI / 2.0 - lat) / PI * th - 0.5).clamp(0.0, th - 1.0);
        sample_wrap_x(&self.texture, x, y)
    }
}

/// Bilinear lookup wrapping columns, clamping rows.
fn sample_wrap_x(img: &Image, x: f64, y: f64) -> f32 {
    let w = img.width();
    let h = img.height();
    let xf = x.floor();
    let fx = (x - xf) as f32;
    let x0 = (xf as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let y0 = (y.floor() as usize).min(h - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fy = (y - y0 as f64) as f32;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Renders omni frames of one scene through one camera model.
#[derive(Debug, Clone)]
pub struct Renderer<'a> {
    scene: &'a SyntheticScene,
    width: usize,
    height: usize,
    rays: Vec<Vector3<f64>>,
    noise_sigma: f64,
}

impl<'a> Renderer<'a> {
    pub fn new(scene: &'a SyntheticScene, model: &CameraModel) -> Self {
        let (width, height) = model.image_size();
        let rays = (0..width * height)
            .into_par_iter()
            .map(|i| {
                let p = ((i % width) as f64, (i / width) as f64);
                model
                    .pixel_to_ray(p)
                    .map(|r| r.into_vector())
                    .unwrap_or_else(|_| Vector3::z())
            })
            .collect();
        Self {
            scene,
            width,
            height,
            rays,
            noise_sigma: 0.0,
        }
    }

    /// Additive Gaussian noise; the stream is seeded from the scene seed and
    /// frame index so frames are reproducible.
    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn render(&self, orientation: &Rotation3<f64>) -> Image {
        self.render_frame(orientation, 0)
    }

    pub fn render_frame(&self, orientation: &Rotation3<f64>, frame: u64) -> Image {
        let m = orientation.matrix();
        let mut samples: Vec<f32> = self
            .rays
            .par_iter()
            .map(|r| self.scene.sample_direction(&(m * r)))
            .collect();
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.scene.seed ^ 0x6e01_5e00);
            rng.set_stream(frame);
            let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            for s in &mut samples {
                *s = (*s as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        Image::new(self.width, self.height, samples).expect("finite render")
    }
}

/// Renders a single frame.
pub fn render_omni(scene: &SyntheticScene, model: &CameraModel, orientation: &Rotation3<f64>) -> Image {
    Renderer::new(scene, model).render(orientation)
}

/// Output of [`render_sequence`].
#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub frames: Vec<Image>,
    pub ground_truth: Trajectory,
}

/// Frame file name used by [`write_sequence`].
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// Frame timestamps are spaced 0.1 s apart.
pub const FRAME_INTERVAL: f64 = 0.1;

/// Renders every pose. Orientations are camera-to-world; the ground truth
/// is expressed relative to the first pose.
pub fn render_sequence(
    scene: &SyntheticScene,
    model: &CameraModel,
    trajectory: &[Rotation3<f64>],
    noise_sigma: f64,
) -> Result<RenderedSequence, SynthError> {
    let first = trajectory.first().ok_or(SynthError::EmptyTrajectory)?;
    let renderer = Renderer::new(scene, model).with_noise(noise_sigma);
    let frames = trajectory
        .iter()
        .enumerate()
        .map(|(i, o)| renderer.render_frame(o, i as u64))
        .collect();
    let first_inv = first.inverse();
    let entries = trajectory
        .iter()
        .enumerate()
        .map(|(i, o)| TrajectoryEntry::new(i, Some(i as f64 * FRAME_INTERVAL), first_inv * o))
        .collect();
    Ok(RenderedSequence {
        frames,
        ground_truth: Trajectory::new(entries),
    })
}

/// Writes frames, `gt.csv` and `calib.txt` into `dir`.
pub fn write_sequence(seq: &RenderedSequence, model: &CameraModel, dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for (i, frame) in seq.frames.iter().enumerate() {
        frame.save(dir.join(frame_file_name(i)))?;
    }
    seq.ground_truth.write_csv(dir.join("gt.csv"))?;
    let calib = dir.join("calib.txt");
    fs::write(&calib, model.to_ocamcalib_string()).map_err(|source| SynthError::Io {
        path: calib.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Constant-rate rotation about the optical axis, starting at identity.
pub fn yaw_ramp(frames: usize, rate: f64) -> Vec<Rotation3<f64>> {
    (0..frames)
        .map(|k| Rotation3::from_axis_angle(&Vector3::z_axis(), rate * k as f64))
        .collect()
}

/// Random walk: each step is a rotation about a uniformly random axis by an
/// angle uniform in `[0, max_step]`, composed in the camera frame.
pub fn random_walk(frames: usize, max_step: f64, seed: u64) -> Vec<Rotation3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames);
    let mut current = Rotation3::identity();
    for k in 0..frames {
        if k > 0 {
            current *= random_rotation(&mut rng, max_step);
        }
        out.push(current);
    }
    out
}

/// Rotation about a uniform random axis by an angle uniform in `[0, max_angle]`.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(a) = Unit::try_new(v, 1e-9) {
            break a;
        }
    };
    Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_angle))
}
