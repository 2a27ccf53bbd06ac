//! Fourier-Mellin similarity registration of square image patches.
//!
//! Rotation and scale are read off the magnitude spectrum, which is
//! translation invariant: resampled on a (log-radius, angle) grid they turn
//! into plain shifts, found with a phase-only matched filter (POMF). The
//! second patch is then de-rotated and de-scaled and a second POMF yields
//! the translation.
//!
//! The returned [`TileMotion`] follows the flow-field convention: a pixel
//! `p2` of the second patch corresponds to
//! `p1 = c + s R(theta) (p2 - c) + t` in the first, with `c` the patch
//! center `(N/2, N/2)` and `R(theta)` acting on `(u, v)` = (column, row).

mod grid;

use std::f64::consts::{PI, TAU};

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::image::Image;

pub use grid::{fftshift, hann, ComplexGrid, Fft2, RealGrid};

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("patch must be square with a power-of-two side >= 8, got {0}x{1}")]
    BadPatchShape(usize, usize),
    #[error("patch sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("degenerate signal: cross-power spectrum is zero everywhere")]
    DegenerateSignal,
}

/// Apodization applied before the forward transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    None,
    #[default]
    Hann,
}

/// Log-polar resampling layout of a magnitude spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarParams {
    /// Rows of the descriptor (log-radius samples).
    pub radial_bins: usize,
    /// Columns of the descriptor (angle samples over `[0, pi)`).
    pub angular_bins: usize,
    /// Innermost sampled radius in frequency bins; excludes DC.
    pub rho_lo: f64,
    /// Outermost sampled radius (exclusive), normally `N / 2`.
    pub rho_hi: f64,
}

impl LogPolarParams {
    /// `N x N` grid over `[1, N/2)`.
    pub fn for_patch(n: usize) -> Self {
        Self {
            radial_bins: n,
            angular_bins: n,
            rho_lo: 1.0,
            rho_hi: n as f64 / 2.0,
        }
    }

    /// Natural-log radius increment per row.
    pub fn log_step(&self) -> f64 {
        (self.rho_hi / self.rho_lo).ln() / self.radial_bins as f64
    }

    /// Angle increment per column.
    pub fn angle_step(&self) -> f64 {
        PI / self.angular_bins as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmiDescriptor {
    pub spectrum: ComplexGrid,
    pub params: LogPolarParams,
}

/// Result of a phase-only matched filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PomfPeak {
    /// `(dx, dy)` = (column, row) shift such that `b(x) = a(x - shift)`,
    /// each component in `(-N/2, N/2]`.
    pub shift: (f64, f64),
    /// Correlation peak height over total correlation energy, in `[0, 1]`.
    pub peak_ratio: f64,
    /// Primary over secondary peak height.
    pub peak_noise_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileMotion {
    pub s: f64,
    pub theta: f64,
    pub t_x: f64,
    pub t_y: f64,
    /// Translation-stage peak ratio.
    pub peak_ratio: f64,
    /// Translation-stage peak-to-noise ratio.
    pub peak_noise_ratio: f64,
    pub rotation_peak_ratio: f64,
    pub rotation_peak_noise_ratio: f64,
}

impl TileMotion {
    pub fn identity() -> Self {
        Self {
            s: 1.0,
            theta: 0.0,
            t_x: 0.0,
            t_y: 0.0,
            peak_ratio: 1.0,
            peak_noise_ratio: f64::MAX,
            rotation_peak_ratio: 1.0,
            rotation_peak_noise_ratio: f64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    RotationScale,
    Translation,
}

/// Why a tile pair was deemed unreliable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    pub stage: Stage,
    pub peak_ratio: f64,
    pub peak_noise_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegisterOutcome {
    Accepted(TileMotion),
    Rejected(Rejection),
}

impl RegisterOutcome {
    pub fn accepted(&self) -> Option<&TileMotion> {
        match self {
            RegisterOutcome::Accepted(m) => Some(m),
            RegisterOutcome::Rejected(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub th_pr: f64,
    pub th_pnr: f64,
    pub window: Window,
    /// Descriptor rows; `None` means the patch side.
    pub radial_bins: Option<usize>,
    /// Descriptor columns; `None` means the patch side.
    pub angular_bins: Option<usize>,
    pub rho_lo: f64,
    /// Apply [`emphasize_high_frequencies`] before the log-polar resampling.
    pub high_pass: bool,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            th_pr: 0.03,
            th_pnr: 1.5,
            window: Window::Hann,
            radial_bins: None,
            angular_bins: None,
            rho_lo: 1.0,
            high_pass: true,
            min_scale: 0.5,
            max_scale: 2.0,
        }
    }
}

impl RegistrationConfig {
    pub fn with_thresholds(th_pr: f64, th_pnr: f64) -> Self {
        Self {
            th_pr,
            th_pnr,
            ..Self::default()
        }
    }
}

fn check_patch(img: &Image) -> Result<usize, RegistrationError> {
    let (w, h) = (img.width(), img.height());
    if w != h || w < 8 || !w.is_power_of_two() {
        return Err(RegistrationError::BadPatchShape(w, h));
    }
    Ok(w)
}

/// Windowed `|FFT|` of a square power-of-two patch, DC at `(N/2, N/2)`.
pub fn magnitude_spectrum(patch: &Image, window: Window) -> Result<RealGrid, RegistrationError> {
    let n = check_patch(patch)?;
    Ok(magnitude_with(&Fft2::new(n, n), patch, window, 0.0))
}

/// Mean-offset, windowed samples of a square patch, row-major.
fn windowed_samples(patch: &Image, window: Window, offset: f64) -> Vec<f64> {
    let n = patch.width();
    let w = match window {
        Window::Hann => hann(n),
        Window::None => vec![1.0; n],
    };
    patch
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v as f64 - offset) * w[i / n] * w[i % n])
        .collect()
}

fn windowed_spectrum(fft: &Fft2, patch: &Image, window: Window, offset: f64) -> ComplexGrid {
    let n = patch.width();
    let mut g = ComplexGrid::from_real(&RealGrid {
        rows: n,
        cols: n,
        data: windowed_samples(patch, window, offset),
    });
    fft.forward(&mut g);
    g
}

fn magnitude_with(fft: &Fft2, patch: &Image, window: Window, offset: f64) -> RealGrid {
    magnitude_of(&windowed_spectrum(fft, patch, window, offset))
}

fn magnitude_of(spec: &ComplexGrid) -> RealGrid {
    let raw = RealGrid {
        rows: spec.rows,
        cols: spec.cols,
        data: spec.data.iter().map(|z| z.norm_sqr().sqrt()).collect(),
    };
    fftshift(&raw)
}

/// Multiplies a DC-centered spectrum by `(1 - x)(2 - x)` with
/// `x = cos(pi u / N) cos(pi v / N)`. Zero at DC, rising smoothly toward
/// Nyquist; it lifts the sparse high-frequency texture that carries most of
/// the angular detail above the low-frequency lobe.
pub fn emphasize_high_frequencies(mag: &mut RealGrid) {
    let (rows, cols) = (mag.rows, mag.cols);
    let cy: Vec<f64> = (0..rows)
        .map(|r| (PI * (r as f64 - (rows / 2) as f64) / rows as f64).cos())
        .collect();
    let cx: Vec<f64> = (0..cols)
        .map(|c| (PI * (c as f64 - (cols / 2) as f64) / cols as f64).cos())
        .collect();
    for (r, row) in mag.data.chunks_mut(cols).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let x = cy[r] * cx[c];
            *v *= (1.0 - x) * (2.0 - x);
        }
    }
}

/// Resamples a DC-centered magnitude spectrum onto the (log-radius, angle)
/// grid of `params` and Fourier transforms it.
pub fn fmi_descriptor(mag: &RealGrid, params: &LogPolarParams) -> FmiDescriptor {
    let fft = Fft2::new(params.radial_bins, params.angular_bins);
    fmi_descriptor_with(&fft, mag, params)
}

/// The log-polar resampled magnitude, before the Fourier transform.
pub fn log_polar(mag: &RealGrid, params: &LogPolarParams) -> RealGrid {
    let (cr, cc) = ((mag.rows / 2) as f64, (mag.cols / 2) as f64);
    let mut out = RealGrid::zeros(params.radial_bins, params.angular_bins);
    let log_step = params.log_step();
    let angle_step = params.angle_step();
    let trig: Vec<(f64, f64)> = (0..params.angular_bins)
        .map(|j| (j as f64 * angle_step).sin_cos())
        .collect();
    for i in 0..params.radial_bins {
        let rho = params.rho_lo * (i as f64 * log_step).exp();
        for (j, &(s, c)) in trig.iter().enumerate() {
            out.data[i * params.angular_bins + j] = mag.sample_bilinear(cr + rho * s, cc + rho * c);
        }
    }
    out
}

fn fmi_descriptor_with(fft: &Fft2, mag: &RealGrid, params: &LogPolarParams) -> FmiDescriptor {
    let lp = log_polar(mag, params);
    let mut spectrum = ComplexGrid::from_real(&lp);
    fft.forward(&mut spectrum);
    FmiDescriptor {
        spectrum,
        params: *params,
    }
}

/// Phase-only matched filter between two spectra of equal shape.
pub fn pomf(a: &ComplexGrid, b: &ComplexGrid) -> Result<PomfPeak, RegistrationError> {
    if a.dims() != b.dims() {
        return Err(RegistrationError::SizeMismatch(a.dims(), b.dims()));
    }
    let fft = Fft2::new(a.rows, a.cols);
    pomf_with(&fft, a, b, None).map(|(peak, _)| peak)
}

/// Signed index of a circular bin in `(-n/2, n/2]`.
#[inline]
fn signed(i: usize, n: usize) -> isize {
    if i > n / 2 {
        i as isize - n as isize
    } else {
        i as isize
    }
}

#[inline]
fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
}

/// Normalized cross-power spectrum `a conj(b) / |a conj(b)|`; bins below
/// 1e-12 in magnitude are zeroed.
fn cross_power(a: &ComplexGrid, b: &ComplexGrid) -> Result<ComplexGrid, RegistrationError> {
    let mut nonzero = 0usize;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let z = x * y.conj();
            let m = z.norm_sqr().sqrt();
            if m < 1e-12 {
                Complex64::default()
            } else {
                nonzero += 1;
                z / m
            }
        })
        .collect();
    if nonzero == 0 {
        return Err(RegistrationError::DegenerateSignal);
    }
    Ok(ComplexGrid {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// POMF core. `row_limit` restricts the peak search to rows whose signed
/// index has magnitude at most the limit. Also returns the correlation
/// surface (unshifted, row-major).
fn pomf_with(
    fft: &Fft2,
    a: &ComplexGrid,
    b: &ComplexGrid,
    row_limit: Option<usize>,
) -> Result<(PomfPeak, RealGrid), RegistrationError> {
    let mut cross = cross_power(a, b)?;
    fft.inverse(&mut cross);
    let surface = RealGrid {
        rows: cross.rows,
        cols: cross.cols,
        data: cross.data.iter().map(|z| z.re).collect(),
    };
    Ok((analyze_surface(&surface, row_limit), surface))
}

/// Peak location and quality scores of a correlation surface.
fn analyze_surface(surface: &RealGrid, row_limit: Option<usize>) -> PomfPeak {
    let (rows, cols) = (surface.rows, surface.cols);
    let allowed = |r: usize| row_limit.is_none_or(|lim| signed(r, rows).unsigned_abs() <= lim);
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for r in (0..rows).filter(|&r| allowed(r)) {
        for c in 0..cols {
            let v = surface.at(r, c);
            if v > best.2 {
                best = (r, c, v);
            }
        }
    }
    let (pr, pc, peak) = best;

    let exclusion = 3usize;
    let circ = |i: usize, j: usize, n: usize| {
        let d = i.abs_diff(j);
        d.min(n - d)
    };
    let mut second = f64::NEG_INFINITY;
    for r in (0..rows).filter(|&r| allowed(r)) {
        let near_r = circ(r, pr, rows) <= exclusion;
        for c in 0..cols {
            if near_r && circ(c, pc, cols) <= exclusion {
                continue;
            }
            second = second.max(surface.at(r, c));
        }
    }

    let up = |r: usize| (r + rows - 1) % rows;
    let dn = |r: usize| (r + 1) % rows;
    let lf = |c: usize| (c + cols - 1) % cols;
    let rt = |c: usize| (c + 1) % cols;
    let dy = parabolic_offset(surface.at(up(pr), pc), peak, surface.at(dn(pr), pc));
    let dx = parabolic_offset(surface.at(pr, lf(pc)), peak, surface.at(pr, rt(pc)));
    let loc = (signed(pc, cols) as f64 + dx, signed(pr, rows) as f64 + dy);

    let energy: f64 = surface.data.iter().map(|v| v * v).sum();
    let peak_ratio = if energy > 0.0 {
        (peak / energy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let peak_noise_ratio = if second > 0.0 {
        (peak.max(0.0) / second).min(f64::MAX)
    } else if peak > 0.0 {
        f64::MAX
    } else {
        0.0
    };
    PomfPeak {
        shift: (-loc.0, -loc.1),
        peak_ratio,
        peak_noise_ratio,
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Resamples `img` so that output pixel `x` reads
/// `img(c + (1/s) R(-theta) (x - c))`. Returns the image and a validity mask.
pub fn unwarp_similarity(img: &Image, s: f64, theta: f64) -> (Image, Vec<bool>) {
    let n = img.width();
    let c = (n / 2) as f64;
    let (sn, cs) = theta.sin_cos();
    let inv = 1.0 / s;
    let mut valid = vec![false; n * n];
    let max = (n - 1) as f64;
    let out = Image::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let sx = c + inv * (cs * dx + sn * dy);
        let sy = c + inv * (-sn * dx + cs * dy);
        if (0.0..=max).contains(&sx) && (0.0..=max).contains(&sy) {
            valid[y * n + x] = true;
            img.sample_bilinear(sx, sy)
        } else {
            0.0
        }
    });
    (out, valid)
}

/// Diagnostic correlation surfaces of one registration, DC-centered.
#[derive(Debug, Clone)]
pub struct CorrelationSurfaces {
    pub rotation_scale: RealGrid,
    pub translation: Option<RealGrid>,
}

/// Registers patch pairs of one fixed size, reusing FFT plans.
#[derive(Debug, Clone)]
pub struct Registrar {
    n: usize,
    config: RegistrationConfig,
    params: LogPolarParams,
    patch_fft: Fft2,
    descriptor_fft: Fft2,
}

impl Registrar {
    pub fn new(n: usize, config: RegistrationConfig) -> Result<Self, RegistrationError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(RegistrationError::BadPatchShape(n, n));
        }
        let mut params = LogPolarParams::for_patch(n);
        params.rho_lo = config.rho_lo;
        if let Some(r) = config.radial_bins {
            params.radial_bins = r;
        }
        if let Some(a) = config.angular_bins {
            params.angular_bins = a;
        }
        Ok(Self {
            n,
            config,
            params,
            patch_fft: Fft2::new(n, n),
            descriptor_fft: Fft2::new(params.radial_bins, params.angular_bins),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &RegistrationConfig {
        &self.config
    }

    pub fn log_polar_params(&self) -> &LogPolarParams {
        &self.params
    }

    pub fn register(&self, a1: &Image, a2: &Image) -> Result<RegisterOutcome, RegistrationError> {
        self.register_inner(a1, a2, false).map(|(o, _)| o)
    }

    /// Like [`Registrar::register`], also returning the correlation surfaces.
    pub fn register_with_surfaces(
        &self,
        a1: &Image,
        a2: &Image,
    ) -> Result<(RegisterOutcome, CorrelationSurfaces), RegistrationError> {
        self.register_inner(a1, a2, true)
            .map(|(o, s)| (o, s.expect("surfaces requested")))
    }

    fn register_inner(
        &self,
        a1: &Image,
        a2: &Image,
        keep: bool,
    ) -> Result<(RegisterOutcome, Option<CorrelationSurfaces>), RegistrationError> {
        let n1 = check_patch(a1)?;
        let n2 = check_patch(a2)?;
        if n1 != n2 || n1 != self.n {
            return Err(RegistrationError::SizeMismatch(
                (a1.width(), a1.height()),
                (a2.width(), a2.height()),
            ));
        }
        let cfg = &self.config;
        let mean1 = a1.mean();
        let mean2 = a2.mean();

        // Both real inputs share one complex transform throughout.
        let (spec1, spec2) = self.patch_fft.forward_real_pair(
            &windowed_samples(a1, cfg.window, mean1),
            &windowed_samples(a2, cfg.window, mean2),
        );
        let mut mag1 = magnitude_of(&spec1);
        let mut mag2 = magnitude_of(&spec2);
        if cfg.high_pass {
            emphasize_high_frequencies(&mut mag1);
            emphasize_high_frequencies(&mut mag2);
        }
        let (lp1, lp2) = (log_polar(&mag1, &self.params), log_polar(&mag2, &self.params));
        let (d1, d2) = self.descriptor_fft.forward_real_pair(&lp1.data, &lp2.data);

        let log_step = self.params.log_step();
        let scale_bound = cfg.max_scale.ln().max(-cfg.min_scale.ln());
        let row_limit = (scale_bound / log_step).ceil() as usize;
        let (rs, rs_surface) = pomf_with(&self.descriptor_fft, &d1, &d2, Some(row_limit))?;

        let mut surfaces = keep.then(|| CorrelationSurfaces {
            rotation_scale: fftshift(&rs_surface),
            translation: None,
        });
        if rs.peak_ratio < cfg.th_pr || rs.peak_noise_ratio < cfg.th_pnr {
            let rejection = Rejection {
                stage: Stage::RotationScale,
                peak_ratio: rs.peak_ratio,
                peak_noise_ratio: rs.peak_noise_ratio,
            };
            return Ok((RegisterOutcome::Rejected(rejection), surfaces));
        }

        let s = (rs.shift.1 * log_step).exp().clamp(cfg.min_scale, cfg.max_scale);
        let theta0 = wrap_angle(-rs.shift.0 * self.params.angle_step());

        // The descriptor cannot tell theta from theta + pi; keep the
        // hypothesis whose translation peak is sharper.
        let thetas = [theta0, wrap_angle(theta0 + PI)];
        let fills = thetas.map(|theta| {
            let (warped, valid) = unwarp_similarity(a2, s, theta);
            let fill = masked_mean(&warped, &valid).unwrap_or(mean2);
            let filled = Image::from_fn(self.n, self.n, |x, y| {
                if valid[y * self.n + x] {
                    warped.get(x, y)
                } else {
                    fill as f32
                }
            });
            windowed_samples(&filled, cfg.window, fill)
        });
        let (w0, w1) = self.patch_fft.forward_real_pair(&fills[0], &fills[1]);
        let (c0, c1) = (cross_power(&spec1, &w0)?, cross_power(&spec1, &w1)?);
        let (s0, s1) = self.patch_fft.inverse_hermitian_pair(&c0, &c1);
        let (p0, p1) = (analyze_surface(&s0, None), analyze_surface(&s1, None));
        let best = if p1.peak_ratio > p0.peak_ratio {
            (thetas[1], p1, s1)
        } else {
            (thetas[0], p0, s0)
        };
        let (theta, tr, tr_surface) = best;
        if let Some(s) = surfaces.as_mut() {
            s.translation = Some(fftshift(&tr_surface));
        }
        if tr.peak_ratio < cfg.th_pr || tr.peak_noise_ratio < cfg.th_pnr {
            let rejection = Rejection {
                stage: Stage::Translation,
                peak_ratio: tr.peak_ratio,
                peak_noise_ratio: tr.peak_noise_ratio,
            };
            return Ok((RegisterOutcome::Rejected(rejection), surfaces));
        }
        // The de-warped second patch equals the first shifted by -t.
        let motion = TileMotion {
            s,
            theta,
            t_x: -tr.shift.0,
            t_y: -tr.shift.1,
            peak_ratio: tr.peak_ratio,
            peak_noise_ratio: tr.peak_noise_ratio,
            rotation_peak_ratio: rs.peak_ratio,
            rotation_peak_noise_ratio: rs.peak_noise_ratio,
        };
        Ok((RegisterOutcome::Accepted(motion), surfaces))
    }
}

fn masked_mean(img: &Image, valid: &[bool]) -> Option<f64> {
    let (sum, count) = img
        .samples()
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Registers `a2` against `a1` with default settings and the given thresholds.
pub fn register(a1: &Image, a2: &Image, th_pr: f64, th_pnr: f64) -> Result<RegisterOutcome, RegistrationError> {
    let n = check_patch(a1)?;
    Registrar::new(n, RegistrationConfig::with_thresholds(th_pr, th_pnr))?.register(a1, a2)
}
