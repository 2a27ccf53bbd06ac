//! Tiling of panoramas and per-tile motion to pixel correspondences.
//!
//! Tile pairs at the same grid index are registered; each accepted tile
//! contributes one probe pixel `p2 = c + (delta, delta)` in the second
//! panorama and its partner `p1` from the tile's similarity motion.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::Image;
use crate::specreg::{
    CorrelationSurfaces, RegisterOutcome, RegistrationConfig, RegistrationError, Registrar, TileMotion,
};

/// Default tile size as a fraction of the panorama width.
pub const DEFAULT_TILE_FRACTION: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("tile size {0} is not a power of two >= 8")]
    NotPowerOfTwo(usize),
    #[error("tile size {tile} exceeds the panorama {width}x{height}")]
    TileTooLarge { tile: usize, width: usize, height: usize },
    #[error("overlap fraction {0} outside [0, 1) or leaves a zero stride")]
    BadOverlap(f64),
    #[error("panorama size {got:?} does not match the grid {want:?}")]
    SizeMismatch { got: (usize, usize), want: (usize, usize) },
    #[error("no tile pair was accepted ({tiles} tiles)")]
    EmptyField { tiles: usize },
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub overlap: f64,
    pub width: usize,
    pub height: usize,
    /// Top-left corners; columns may run past the seam.
    pub origins: Vec<(usize, usize)>,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Tile center in panorama coordinates.
    pub fn center(&self, i: usize) -> (f64, f64) {
        let (x, y) = self.origins[i];
        let half = (self.tile_size / 2) as f64;
        (x as f64 + half, y as f64 + half)
    }
}

/// Nearest power of two to `fraction * width`, capped by the panorama.
pub fn default_tile_size(width: usize, height: usize, fraction: f64) -> usize {
    let target = (fraction * width as f64).max(8.0);
    let lower = 2f64.powf(target.log2().floor());
    let n = if target / lower < 2f64.sqrt() { lower } else { 2.0 * lower } as usize;
    let cap = width.min(height);
    if n <= cap {
        n
    } else {
        1 << cap.ilog2()
    }
}

/// Stride `round(N_a (1 - overlap))`; `ceil(W / stride)` tiles per row,
/// the last wrapping across the seam; rows every stride while they fit,
/// plus one flushed to the bottom edge if rows remain uncovered.
pub fn make_grid(width: usize, height: usize, tile_size: usize, overlap: f64) -> Result<TileGrid, FlowError> {
    if tile_size < 8 || !tile_size.is_power_of_two() {
        return Err(FlowError::NotPowerOfTwo(tile_size));
    }
    if tile_size > width.min(height) {
        return Err(FlowError::TileTooLarge {
            tile: tile_size,
            width,
            height,
        });
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(FlowError::BadOverlap(overlap));
    }
    let stride = (tile_size as f64 * (1.0 - overlap)).round() as usize;
    if stride == 0 {
        return Err(FlowError::BadOverlap(overlap));
    }
    let cols = width.div_ceil(stride);
    let mut rows: Vec<usize> = (0..).map(|k| k * stride).take_while(|y| y + tile_size <= height).collect();
    if rows.last().is_some_and(|&y| y + tile_size < height) {
        rows.push(height - tile_size);
    }
    let origins = rows
        .iter()
        .flat_map(|&y| (0..cols).map(move |k| (k * stride, y)))
        .collect();
    Ok(TileGrid {
        tile_size,
        overlap,
        width,
        height,
        origins,
    })
}

/// Copies tile `i`, wrapping columns at the seam.
pub fn extract_tile(pano: &Image, grid: &TileGrid, i: usize) -> Image {
    let (x0, y0) = grid.origins[i];
    pano.crop_wrapping(x0, y0, grid.tile_size)
}

/// Frame-1 partner of frame-2 pixel `p2` under `m` about `center`:
/// `p1 = c + s R(theta) (p2 - c) + t`.
pub fn correspond_pixel(m: &TileMotion, center: (f64, f64), p2: (f64, f64)) -> (f64, f64) {
    let alpha = m.s * m.theta.cos();
    let beta = m.s * m.theta.sin();
    let (cx, cy) = center;
    let (u, v) = p2;
    (
        u * alpha - v * beta + cx * (1.0 - alpha) + cy * beta + m.t_x,
        u * beta + v * alpha - cx * beta + cy * (1.0 - alpha) + m.t_y,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEntry {
    pub tile_index: usize,
    pub origin: (usize, usize),
    /// Partner of `p2` in the first panorama (same column unwrapping as `p2`).
    pub p1: (f64, f64),
    /// Probe pixel in the second panorama, column in `[0, W)`.
    pub p2: (f64, f64),
    /// For rejected tiles only the scores are meaningful.
    pub motion: TileMotion,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub entries: Vec<FlowEntry>,
    pub tile_size: usize,
}

impl FlowField {
    pub fn accepted(&self) -> impl Iterator<Item = &FlowEntry> {
        self.entries.iter().filter(|e| e.accepted)
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted().count()
    }

    /// One row per tile.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "tile_index,origin_u,origin_v,p1_u,p1_v,p2_u,p2_v,s,theta,t_x,t_y,peak_ratio,peak_noise_ratio,rotation_peak_ratio,rotation_peak_noise_ratio,accepted\n",
        );
        for e in &self.entries {
            let m = &e.motion;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.tile_index,
                e.origin.0,
                e.origin.1,
                e.p1.0,
                e.p1.1,
                e.p2.0,
                e.p2.1,
                m.s,
                m.theta,
                m.t_x,
                m.t_y,
                m.peak_ratio,
                m.peak_noise_ratio,
                m.rotation_peak_ratio,
                m.rotation_peak_noise_ratio,
                e.accepted
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Darkened copy of `pano` with one arrow per accepted tile from `p2`
    /// toward `p1`, lengthened by `gain`, and tile borders outlined.
    pub fn render_arrows(&self, pano: &Image, gain: f64) -> Image {
        let (w, h) = (pano.width(), pano.height());
        let mut out = Image::from_fn(w, h, |x, y| 0.6 * pano.get(x, y));
        let mut plot = |x: f64, y: f64, v: f32| {
            let xi = (x.round() as i64).rem_euclid(w as i64) as usize;
            let yi = y.round();
            if yi >= 0.0 && (yi as usize) < h {
                out.set(xi, yi as usize, v);
            }
        };
        for e in &self.entries {
            let (ox, oy) = (e.origin.0 as f64, e.origin.1 as f64);
            for k in 0..self.tile_size {
                let k = k as f64;
                plot(ox + k, oy, 0.35);
                plot(ox, oy + k, 0.35);
            }
            if !e.accepted {
                continue;
            }
            let (dx, dy) = ((e.p1.0 - e.p2.0) * gain, (e.p1.1 - e.p2.1) * gain);
            let len = dx.hypot(dy);
            let steps = (len.ceil() as usize).max(1) * 2;
            for k in 0..=steps {
                let f = k as f64 / steps as f64;
                plot(e.p2.0 + f * dx, e.p2.1 + f * dy, 1.0);
            }
            if len > 1e-9 {
                let (ux, uy) = (dx / len, dy / len);
                let head = (0.3 * len).clamp(2.0, 8.0);
                for side in [-1.0f64, 1.0] {
                    let (hx, hy) = (-ux * 0.866 - side * uy * 0.5, -uy * 0.866 + side * ux * 0.5);
                    for k in 0..=(2 * head as usize) {
                        let f = k as f64 / 2.0;
                        plot(e.p2.0 + dx + f * hx, e.p2.1 + dy + f * hy, 1.0);
                    }
                }
            }
        }
        out
    }
}

fn check_sizes(pano1: &Image, pano2: &Image, grid: &TileGrid) -> Result<(), FlowError> {
    for p in [pano1, pano2] {
        if (p.width(), p.height()) != (grid.width, grid.height) {
            return Err(FlowError::SizeMismatch {
                got: (p.width(), p.height()),
                want: (grid.width, grid.height),
            });
        }
    }
    Ok(())
}

/// Registers every tile pair with default registration settings.
pub fn build_flow_field(
    pano1: &Image,
    pano2: &Image,
    grid: &TileGrid,
    th_pr: f64,
    th_pnr: f64,
    delta: f64,
) -> Result<FlowField, FlowError> {
    let registrar = Registrar::new(grid.tile_size, RegistrationConfig::with_thresholds(th_pr, th_pnr))?;
    build_flow_field_with(pano1, pano2, grid, &registrar, delta)
}

/// Like [`build_flow_field`] with a prepared registrar. Tiles run in
/// parallel; entries are in tile-index order.
pub fn build_flow_field_with(
    pano1: &Image,
    pano2: &Image,
    grid: &TileGrid,
    registrar: &Registrar,
    delta: f64,
) -> Result<FlowField, FlowError> {
    check_sizes(pano1, pano2, grid)?;
    let w = grid.width as f64;
    let entries = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<FlowEntry, FlowError> {
            let a1 = extract_tile(pano1, grid, i);
            let a2 = extract_tile(pano2, grid, i);
            let (cx, cy) = grid.center(i);
            let p2 = (cx + delta, cy + delta);
            let (motion, accepted) = match registrar.register(&a1, &a2) {
                Ok(RegisterOutcome::Accepted(m)) => (m, true),
                Ok(RegisterOutcome::Rejected(r)) => {
                    let mut m = TileMotion::identity();
                    m.peak_ratio = r.peak_ratio;
                    m.peak_noise_ratio = r.peak_noise_ratio;
                    (m, false)
                }
                // A featureless tile carries no motion; it is not a failure.
                Err(RegistrationError::DegenerateSignal) => {
                    let mut m = TileMotion::identity();
                    m.peak_ratio = 0.0;
                    m.peak_noise_ratio = 0.0;
                    (m, false)
                }
                Err(e) => return Err(e.into()),
            };
            let p1 = if accepted { correspond_pixel(&motion, (cx, cy), p2) } else { p2 };
            // Keep p2 inside [0, W); shift p1 by the same turn.
            let turns = (p2.0 / w).floor() * w;
            Ok(FlowEntry {
                tile_index: i,
                origin: grid.origins[i],
                p1: (p1.0 - turns, p1.1),
                p2: (p2.0 - turns, p2.1),
                motion,
                accepted,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let field = FlowField {
        entries,
        tile_size: grid.tile_size,
    };
    if field.accepted_count() == 0 {
        return Err(FlowError::EmptyField { tiles: grid.len() });
    }
    Ok(field)
}

/// Correlation surfaces of every tile pair, for inspection.
pub fn tile_surfaces(
    pano1: &Image,
    pano2: &Image,
    grid: &TileGrid,
    registrar: &Registrar,
) -> Result<Vec<CorrelationSurfaces>, FlowError> {
    check_sizes(pano1, pano2, grid)?;
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let a1 = extract_tile(pano1, grid, i);
            let a2 = extract_tile(pano2, grid, i);
            Ok(registrar.register_with_surfaces(&a1, &a2)?.1)
        })
        .collect()
}
