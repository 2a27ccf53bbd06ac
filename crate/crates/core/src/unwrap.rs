//! Polar unwrapping of omni-images into panoramas.
//!
//! Panorama column `u'` maps to azimuth `theta_zero + 2 pi u' / W` and row
//! `v'` to radius `rho_max - v' (rho_max - rho_min) / H`, so row 0 is the
//! outermost ring. Azimuth is measured from `+u` toward `+v` in omni pixel
//! coordinates (counterclockwise in a `u` right, `v` down frame).

use std::f64::consts::TAU;

use rayon::prelude::*;
use thiserror::Error;

use crate::calib::CameraModel;
use crate::image::Image;

/// Default inner radius as a fraction of the outer radius.
pub const DEFAULT_RHO_MIN_FRACTION: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum UnwrapError {
    #[error("point at radius {rho:.3} lies outside the annulus [{rho_min}, {rho_max}]")]
    OutOfAnnulus { rho: f64, rho_min: f64, rho_max: f64 },
    #[error("invalid panorama spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoramaSpec {
    pub rho_min: f64,
    pub rho_max: f64,
    pub width: usize,
    pub height: usize,
    pub theta_zero: f64,
}

impl PanoramaSpec {
    pub fn new(
        rho_min: f64,
        rho_max: f64,
        width: usize,
        height: usize,
        theta_zero: f64,
    ) -> Result<Self, UnwrapError> {
        let spec = Self {
            rho_min,
            rho_max,
            width,
            height,
            theta_zero,
        };
        if !(rho_min >= 0.0 && rho_min < rho_max && rho_max.is_finite()) {
            return Err(UnwrapError::InvalidSpec(format!(
                "need 0 <= rho_min < rho_max, got [{rho_min}, {rho_max}]"
            )));
        }
        if width < 2 || height < 2 {
            return Err(UnwrapError::InvalidSpec(format!(
                "panorama must be at least 2x2, got {width}x{height}"
            )));
        }
        if !theta_zero.is_finite() {
            return Err(UnwrapError::InvalidSpec("theta_zero not finite".into()));
        }
        Ok(spec)
    }

    /// Annulus with `W = round(2 pi rho_max)` and `H = round(rho_max - rho_min)`.
    pub fn with_default_size(rho_min: f64, rho_max: f64) -> Result<Self, UnwrapError> {
        let width = (TAU * rho_max).round() as usize;
        let height = (rho_max - rho_min).round() as usize;
        Self::new(rho_min, rho_max, width, height, 0.0)
    }

    /// Spec derived from the calibration: outer radius one pixel inside the
    /// largest inscribed circle, inner radius at [`DEFAULT_RHO_MIN_FRACTION`].
    pub fn for_model(
        model: &CameraModel,
        rho_min: Option<f64>,
        rho_max: Option<f64>,
    ) -> Result<Self, UnwrapError> {
        let rho_max = rho_max.unwrap_or_else(|| (model.max_inscribed_radius() - 1.0).floor());
        let rho_min = rho_min.unwrap_or((DEFAULT_RHO_MIN_FRACTION * rho_max).round());
        let spec = Self::with_default_size(rho_min, rho_max)?;
        spec.check_fits(model)?;
        Ok(spec)
    }

    /// Checks that the annulus lies inside the omni-image around the center.
    pub fn check_fits(&self, model: &CameraModel) -> Result<(), UnwrapError> {
        let limit = model.max_inscribed_radius();
        if self.rho_max > limit {
            return Err(UnwrapError::InvalidSpec(format!(
                "rho_max {} exceeds the inscribed radius {limit:.3}",
                self.rho_max
            )));
        }
        Ok(())
    }

    /// Radial pixels per panorama row.
    pub fn radial_step(&self) -> f64 {
        (self.rho_max - self.rho_min) / self.height as f64
    }
}

/// Panorama `(u', v')` to omni pixel `(u*, v*)`.
#[inline]
pub fn pano_to_omni_coords(spec: &PanoramaSpec, center: (f64, f64), q: (f64, f64)) -> (f64, f64) {
    let phi = spec.theta_zero + TAU * q.0 / spec.width as f64;
    let rho = spec.rho_max - q.1 * spec.radial_step();
    let (s, c) = phi.sin_cos();
    (center.0 + rho * c, center.1 + rho * s)
}

/// Omni pixel `(u*, v*)` to panorama `(u', v')`, column in `[0, W)`.
pub fn omni_to_pano_coords(
    spec: &PanoramaSpec,
    center: (f64, f64),
    p: (f64, f64),
) -> Result<(f64, f64), UnwrapError> {
    let (du, dv) = (p.0 - center.0, p.1 - center.1);
    let rho = du.hypot(dv);
    // Slack for the rounding of the forward map at the annulus edges.
    let slack = 1e-9 * spec.rho_max.max(1.0);
    if rho < spec.rho_min - slack || rho > spec.rho_max + slack {
        return Err(UnwrapError::OutOfAnnulus {
            rho,
            rho_min: spec.rho_min,
            rho_max: spec.rho_max,
        });
    }
    let w = spec.width as f64;
    let turns = (dv.atan2(du) - spec.theta_zero) / TAU;
    let mut u = turns.rem_euclid(1.0) * w;
    if u >= w {
        u -= w;
    }
    let v = (spec.rho_max - rho) / spec.radial_step();
    Ok((u, v))
}

/// Precomputed panorama-to-omni sample positions for one (model, spec) pair.
#[derive(Debug, Clone)]
pub struct PanoramaMap {
    spec: PanoramaSpec,
    center: (f64, f64),
    source: Vec<(f64, f64)>,
}

impl PanoramaMap {
    pub fn new(model: &CameraModel, spec: PanoramaSpec) -> Self {
        let center = model.center();
        let mut source = Vec::with_capacity(spec.width * spec.height);
        for v in 0..spec.height {
            for u in 0..spec.width {
                source.push(pano_to_omni_coords(&spec, center, (u as f64, v as f64)));
            }
        }
        Self {
            spec,
            center,
            source,
        }
    }

    pub fn spec(&self) -> &PanoramaSpec {
        &self.spec
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// Resamples `omni` with bilinear interpolation; samples that fall off
    /// the image read as 0.
    pub fn unwrap(&self, omni: &Image) -> Image {
        let w = self.spec.width;
        let mut out = vec![0.0f32; w * self.spec.height];
        out.par_chunks_mut(w)
            .zip(self.source.par_chunks(w))
            .for_each(|(row, src)| {
                for (dst, &(x, y)) in row.iter_mut().zip(src) {
                    *dst = omni.sample_bilinear(x, y);
                }
            });
        Image::new(w, self.spec.height, out).expect("finite bilinear samples")
    }
}

/// One-shot unwrap; prefer a cached [`PanoramaMap`] for sequences.
pub fn unwrap_image(omni: &Image, model: &CameraModel, spec: &PanoramaSpec) -> Image {
    PanoramaMap::new(model, *spec).unwrap(omni)
}
