use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major real grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Bilinear lookup with zero outside the grid.
    #[inline]
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f64 {
        if !(row >= 0.0 && col >= 0.0) {
            return 0.0;
        }
        let (r0, c0) = (row as usize, col as usize);
        if r0 + 1 >= self.rows || c0 + 1 >= self.cols {
            if r0 + 1 == self.rows && row == r0 as f64 && c0 < self.cols && col == c0 as f64 {
                return self.at(r0, c0);
            }
            return 0.0;
        }
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let top = self.at(r0, c0) * (1.0 - fc) + self.at(r0, c0 + 1) * fc;
        let bottom = self.at(r0 + 1, c0) * (1.0 - fc) + self.at(r0 + 1, c0 + 1) * fc;
        top * (1.0 - fr) + bottom * fr
    }
}

/// Row-major complex grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn from_real(grid: &RealGrid) -> Self {
        Self {
            rows: grid.rows,
            cols: grid.cols,
            data: grid.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Cached forward/inverse plans for one grid shape.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, grid: &mut ComplexGrid) {
        self.process(grid, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform in place, scaled by `1 / (rows * cols)`.
    pub fn inverse(&self, grid: &mut ComplexGrid) {
        self.process(grid, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        for v in &mut grid.data {
            *v *= scale;
        }
    }

    /// Spectra of two real grids from one complex transform of `a + i b`,
    /// split using the Hermitian symmetry of real-input spectra.
    pub fn forward_real_pair(&self, a: &[f64], b: &[f64]) -> (ComplexGrid, ComplexGrid) {
        let (rows, cols) = (self.rows, self.cols);
        assert!(a.len() == rows * cols && b.len() == rows * cols, "grid shape does not match plan");
        let mut z = ComplexGrid {
            rows,
            cols,
            data: a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect(),
        };
        self.forward(&mut z);
        let mut fa = Vec::with_capacity(rows * cols);
        let mut fb = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let rn = (rows - r) % rows;
            for c in 0..cols {
                let cn = (cols - c) % cols;
                let p = z.data[r * cols + c];
                let q = z.data[rn * cols + cn].conj();
                fa.push((p + q) * 0.5);
                // (p - q) / 2i
                let d = (p - q) * 0.5;
                fb.push(Complex64::new(d.im, -d.re));
            }
        }
        (
            ComplexGrid { rows, cols, data: fa },
            ComplexGrid { rows, cols, data: fb },
        )
    }

    /// Inverse transforms of two Hermitian spectra (real results) from one
    /// complex inverse of `x + i y`.
    pub fn inverse_hermitian_pair(&self, x: &ComplexGrid, y: &ComplexGrid) -> (RealGrid, RealGrid) {
        let mut z = ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            data: x
                .data
                .iter()
                .zip(&y.data)
                .map(|(&p, &q)| p + Complex64::new(-q.im, q.re))
                .collect(),
        };
        self.inverse(&mut z);
        let re = z.data.iter().map(|v| v.re).collect();
        let im = z.data.iter().map(|v| v.im).collect();
        (
            RealGrid {
                rows: self.rows,
                cols: self.cols,
                data: re,
            },
            RealGrid {
                rows: self.rows,
                cols: self.cols,
                data: im,
            },
        )
    }

    fn process(&self, grid: &mut ComplexGrid, row_plan: &Arc<dyn Fft<f64>>, col_plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(grid.dims(), (self.rows, self.cols), "grid shape does not match plan");
        let scratch_len = row_plan
            .get_inplace_scratch_len()
            .max(col_plan.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        row_plan.process_with_scratch(&mut grid.data, &mut scratch);

        let (rows, cols) = (self.rows, self.cols);
        let mut transposed = vec![Complex64::default(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                transposed[c * rows + r] = grid.data[r * cols + c];
            }
        }
        col_plan.process_with_scratch(&mut transposed, &mut scratch);
        for c in 0..cols {
            for r in 0..rows {
                grid.data[r * cols + c] = transposed[c * rows + r];
            }
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Moves the zero-frequency bin of an even-sized spectrum to `(rows/2, cols/2)`.
pub fn fftshift(grid: &RealGrid) -> RealGrid {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut out = RealGrid::zeros(rows, cols);
    for r in 0..rows {
        let rr = (r + rows / 2) % rows;
        for c in 0..cols {
            let cc = (c + cols / 2) % cols;
            out.data[rr * cols + cc] = grid.data[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let fft = Fft2::new(4, 8);
        let orig = ComplexGrid {
            rows: 4,
            cols: 8,
            data: (0..32).map(|i| Complex64::new(i as f64, (i * i % 7) as f64)).collect(),
        };
        let mut g = orig.clone();
        fft.forward(&mut g);
        fft.inverse(&mut g);
        for (a, b) in g.data.iter().zip(&orig.data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_direct_dft() {
        let (rows, cols) = (4, 6);
        let fft = Fft2::new(rows, cols);
        let input: Vec<Complex64> = (0..rows * cols)
            .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut g = ComplexGrid {
            rows,
            cols,
            data: input.clone(),
        };
        fft.forward(&mut g);
        for kr in 0..rows {
            for kc in 0..cols {
                let mut acc = Complex64::default();
                for r in 0..rows {
                    for c in 0..cols {
                        let ang = -std::f64::consts::TAU
                            * (kr as f64 * r as f64 / rows as f64 + kc as f64 * c as f64 / cols as f64);
                        acc += input[r * cols + c] * Complex64::from_polar(1.0, ang);
                    }
                }
                assert!((acc - g.data[kr * cols + kc]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fftshift_moves_dc_to_center() {
        let mut g = RealGrid::zeros(4, 4);
        g.data[0] = 1.0;
        let s = fftshift(&g);
        assert_eq!(s.at(2, 2), 1.0);
    }

    #[test]
    fn paired_real_transforms_match_separate_ones() {
        let (rows, cols) = (6, 8);
        let fft = Fft2::new(rows, cols);
        let a: Vec<f64> = (0..rows * cols).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..rows * cols).map(|i| ((i * i) % 11) as f64).collect();
        let single = |v: &[f64]| {
            let mut g = ComplexGrid::from_real(&RealGrid {
                rows,
                cols,
                data: v.to_vec(),
            });
            fft.forward(&mut g);
            g
        };
        let (fa, fb) = fft.forward_real_pair(&a, &b);
        let (sa, sb) = (single(&a), single(&b));
        for i in 0..rows * cols {
            assert!((fa.data[i] - sa.data[i]).norm() < 1e-10);
            assert!((fb.data[i] - sb.data[i]).norm() < 1e-10);
        }
        let (ra, rb) = fft.inverse_hermitian_pair(&sa, &sb);
        for i in 0..rows * cols {
            assert!((ra.data[i] - a[i]).abs() < 1e-12);
            assert!((rb.data[i] - b[i]).abs() < 1e-12);
        }
    }
}
