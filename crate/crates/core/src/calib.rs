//! Polynomial omni-camera model and OCamCalib `calib_results.txt` parsing.
//!
//! A pixel `(u*, v*)` (top-left origin, `u*` to the right, `v*` downward) is
//! first brought to centered coordinates `(u, v)` by inverting
//!
//! ```text
//! [u*]   [c d] [u]   [x_c]
//! [v*] = [e 1] [v] + [y_c]
//! ```
//!
//! and then lifted to the ray `(u, v, f(rho))`, `rho = sqrt(u^2 + v^2)`,
//! `f(rho) = a0 + a1 rho + a2 rho^2 + ...`. Rays are always unit length.
//!
//! # Accepted file grammar
//!
//! The file is a sequence of sections. Each section starts with a line whose
//! first character is `#`; the header text selects the section:
//!
//! | header contains        | section                | content                          |
//! |------------------------|------------------------|----------------------------------|
//! | `polynomial` + `DIRECT`| polynomial coefficients| `N a0 a1 ... a(N-1)`             |
//! | `inverse`              | inverse polynomial     | `N b0 ... b(N-1)` (optional)     |
//! | `center`               | center                 | `row column`                     |
//! | `affine`               | affine                 | `c d e`                          |
//! | `image size`           | image size             | `height width`                   |
//!
//! Numbers may be spread over any number of lines; blank lines are ignored.
//! The center and size rows follow OCamCalib's row-first order and are
//! stored here as `(x, y)` = `(column, row)` and `(width, height)`. See
//! `fixtures/calib_results.txt` for a complete example.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

/// Sections of a calibration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Polynomial,
    InversePolynomial,
    Center,
    Affine,
    ImageSize,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Polynomial => "polynomial coefficients",
            Section::InversePolynomial => "inverse polynomial",
            Section::Center => "center",
            Section::Affine => "affine",
            Section::ImageSize => "image size",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibError {
    #[error("calibration: missing {0} section")]
    MissingSection(Section),
    #[error("calibration: malformed {section} section: {reason}")]
    Malformed { section: Section, reason: String },
    #[error("calibration: invalid model: {0}")]
    Invalid(String),
    #[error("degenerate ray (near-zero norm)")]
    DegenerateRay,
    #[error("ray lies outside the lens field of view")]
    OutOfFov,
    #[error("ambiguous projection, candidate radii {0:?}")]
    Ambiguous(Vec<f64>),
}

/// Affine misalignment correction `[[c, d], [e, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        c: 1.0,
        d: 0.0,
        e: 0.0,
    };

    pub fn det(&self) -> f64 {
        self.c - self.d * self.e
    }

    #[inline]
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (self.c * u + self.d * v, self.e * u + v)
    }

    #[inline]
    pub fn apply_inverse(&self, du: f64, dv: f64) -> (f64, f64) {
        let inv = 1.0 / self.det();
        (inv * (du - self.d * dv), inv * (-self.e * du + self.c * dv))
    }
}

impl Default for Affine {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Unit-length viewing direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray(Vector3<f64>);

impl Ray {
    /// Normalizes `v`; fails when its norm is below `1e-12`.
    pub fn new(v: Vector3<f64>) -> Result<Self, CalibError> {
        let n = v.norm();
        if !(n >= 1e-12) {
            return Err(CalibError::DegenerateRay);
        }
        Ok(Ray(v / n))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    /// Angle to `other` in radians.
    pub fn angle_to(&self, other: &Ray) -> f64 {
        let c = self.0.cross(&other.0).norm();
        let d = self.0.dot(&other.0);
        c.atan2(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    poly_coeffs: Vec<f64>,
    affine: Affine,
    center: (f64, f64),
    image_size: (usize, usize),
    inverse_poly: Option<Vec<f64>>,
}

impl CameraModel {
    pub fn new(
        poly_coeffs: Vec<f64>,
        affine: Affine,
        center: (f64, f64),
        image_size: (usize, usize),
    ) -> Result<Self, CalibError> {
        let model = Self {
            poly_coeffs,
            affine,
            center,
            image_size,
            inverse_poly: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Attaches OCamCalib's inverse polynomial. It is only carried along for
    /// faithful re-serialization; projection uses root finding instead.
    pub fn with_inverse_poly(mut self, coeffs: Vec<f64>) -> Self {
        self.inverse_poly = Some(coeffs);
        self
    }

    fn validate(&self) -> Result<(), CalibError> {
        if self.poly_coeffs.len() < 2 {
            return Err(CalibError::Invalid(format!(
                "need at least 2 polynomial coefficients, got {}",
                self.poly_coeffs.len()
            )));
        }
        if self.poly_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(CalibError::Invalid("non-finite coefficient".into()));
        }
        if self.poly_coeffs[0] == 0.0 {
            return Err(CalibError::Invalid("constant coefficient a0 is zero".into()));
        }
        let det = self.affine.det();
        if !(det.abs() > 1e-12) {
            return Err(CalibError::Invalid(format!("affine matrix is singular (det {det})")));
        }
        let (w, h) = self.image_size;
        let (xc, yc) = self.center;
        if !(xc > 0.0 && yc > 0.0 && xc < w as f64 && yc < h as f64) {
            return Err(CalibError::Invalid(format!(
                "center ({xc}, {yc}) not strictly inside {w}x{h}"
            )));
        }
        Ok(())
    }

    pub fn poly_coeffs(&self) -> &[f64] {
        &self.poly_coeffs
    }

    pub fn affine(&self) -> Affine {
        self.affine
    }

    /// Image center `(x, y)` in top-left pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// `(width, height)` in pixels.
    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn inverse_poly(&self) -> Option<&[f64]> {
        self.inverse_poly.as_deref()
    }

    /// Evaluates `f(rho)` with Horner's scheme.
    #[inline]
    pub fn eval_poly(&self, rho: f64) -> f64 {
        self.poly_coeffs.iter().rev().fold(0.0, |acc, &a| acc * rho + a)
    }

    /// `f'(rho)`.
    pub fn eval_poly_derivative(&self, rho: f64) -> f64 {
        self.poly_coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &a)| acc * rho + k as f64 * a)
    }

    /// Radius of the largest circle around the center that fits in the image.
    pub fn max_inscribed_radius(&self) -> f64 {
        let (w, h) = self.image_size;
        let (xc, yc) = self.center;
        xc.min(yc).min(w as f64 - 1.0 - xc).min(h as f64 - 1.0 - yc)
    }

    /// Largest centered radius reachable inside the image bounds.
    fn rho_max(&self) -> f64 {
        let (w, h) = self.image_size;
        let (xc, yc) = self.center;
        [(0.0, 0.0), (w as f64, 0.0), (0.0, h as f64), (w as f64, h as f64)]
            .iter()
            .map(|&(x, y)| {
                let (u, v) = self.affine.apply_inverse(x - xc, y - yc);
                u.hypot(v)
            })
            .fold(0.0, f64::max)
    }

    /// Back-projects a pixel to its unit viewing ray.
    pub fn pixel_to_ray(&self, pixel: (f64, f64)) -> Result<Ray, CalibError> {
        let (u, v) = self
            .affine
            .apply_inverse(pixel.0 - self.center.0, pixel.1 - self.center.1);
        let rho = u.hypot(v);
        Ray::new(Vector3::new(u, v, self.eval_poly(rho)))
    }

    /// Projects a ray to the pixel whose back-projection is parallel to it.
    pub fn ray_to_pixel(&self, ray: &Ray) -> Result<(f64, f64), CalibError> {
        let (x, y, z) = (ray.x(), ray.y(), ray.z());
        let r_xy = x.hypot(y);
        if r_xy < 1e-15 {
            // On-axis: only the center pixel looks along a0's sign.
            return if z * self.poly_coeffs[0] > 0.0 {
                Ok(self.center)
            } else {
                Err(CalibError::OutOfFov)
            };
        }
        // (rho cos, rho sin, f(rho)) is parallel to (x, y, z) iff
        // g(rho) = f(rho) * r_xy - z * rho vanishes for rho > 0.
        let g = |rho: f64| self.eval_poly(rho) * r_xy - z * rho;
        let rho_max = self.rho_max();
        let scale = self.eval_poly(rho_max).abs().max(self.poly_coeffs[0].abs()).max(rho_max);
        let dg = |rho: f64| self.eval_poly_derivative(rho) * r_xy - z;
        let roots = bracketed_roots(g, dg, 0.0, rho_max, 2048, 1e-10, 1e-12 * scale);
        let rho = match roots.as_slice() {
            [] => return Err(CalibError::OutOfFov),
            [rho] => *rho,
            _ => return Err(CalibError::Ambiguous(roots)),
        };
        let (u, v) = (rho * x / r_xy, rho * y / r_xy);
        let (du, dv) = self.affine.apply(u, v);
        Ok((self.center.0 + du, self.center.1 + dv))
    }

    /// Parses an OCamCalib `calib_results.txt` file.
    pub fn parse_ocamcalib(text: &str) -> Result<Self, CalibError> {
        parse_calibration(text)
    }

    /// Writes the model in the same layout [`parse_calibration`] reads.
    pub fn to_ocamcalib_string(&self) -> String {
        let mut out = String::new();
        out.push_str("#polynomial coefficients for the DIRECT mapping function (ocam_model.ss in MATLAB). These are used by cam2world\n\n");
        let _ = write!(out, "{}", self.poly_coeffs.len());
        for a in &self.poly_coeffs {
            let _ = write!(out, " {}", format_exp(*a));
        }
        out.push_str(" \n\n");
        if let Some(inv) = &self.inverse_poly {
            out.push_str("#polynomial coefficients for the inverse mapping function (ocam_model.invpol in MATLAB). These are used by world2cam\n\n");
            let _ = write!(out, "{}", inv.len());
            for b in inv {
                let _ = write!(out, " {b:.6}");
            }
            out.push_str(" \n\n");
        }
        out.push_str("#center: \"row\" and \"column\" coordinates (x and y) of the image center\n\n");
        let _ = writeln!(out, "{:.6} {:.6}\n", self.center.1, self.center.0);
        out.push_str("#affine parameters \"c\", \"d\", \"e\"\n\n");
        let _ = writeln!(
            out,
            "{:.6} {:.6} {:.6}\n",
            self.affine.c, self.affine.d, self.affine.e
        );
        out.push_str("#image size: \"height\" and \"width\"\n\n");
        let _ = writeln!(out, "{} {}\n", self.image_size.1, self.image_size.0);
        out
    }
}

/// C-style `%.6e` formatting (`-1.376000e+02`).
fn format_exp(x: f64) -> String {
    let s = format!("{x:.6e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// All roots of `g` on `[lo, hi]`. Sign changes on a uniform scan are
/// refined by bisection to `tol`; sign-preserving local minima of `|g|` are
/// refined by bisection on the derivative `dg` and kept as (double) roots
/// when `|g|` there is below `zero_tol`.
fn bracketed_roots(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    steps: usize,
    tol: f64,
    zero_tol: f64,
) -> Vec<f64> {
    let step = (hi - lo) / steps as f64;
    let xs: Vec<f64> = (0..=steps)
        .map(|i| if i == steps { hi } else { lo + step * i as f64 })
        .collect();
    let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let mut roots = Vec::new();
    for i in 1..=steps {
        let (a, b, ga, gb) = (xs[i - 1], xs[i], gs[i - 1], gs[i]);
        if gb == 0.0 {
            roots.push(b);
        } else if ga != 0.0 && (ga < 0.0) != (gb < 0.0) {
            let (mut l, mut r, mut gl) = (a, b, ga);
            while r - l > tol {
                let m = 0.5 * (l + r);
                let gm = g(m);
                if gm == 0.0 {
                    l = m;
                    r = m;
                    break;
                }
                if (gm < 0.0) == (gl < 0.0) {
                    l = m;
                    gl = gm;
                } else {
                    r = m;
                }
            }
            roots.push(0.5 * (l + r));
        } else if i < steps {
            let gc = gs[i + 1];
            let same_sign = (ga < 0.0) == (gb < 0.0) && (gb < 0.0) == (gc < 0.0) && ga != 0.0 && gc != 0.0;
            if same_sign && gb.abs() <= ga.abs() && gb.abs() <= gc.abs() {
                let (mut l, mut r) = (a, xs[i + 1]);
                let mut dl = dg(l);
                if (dl < 0.0) == (dg(r) < 0.0) {
                    continue;
                }
                while r - l > tol {
                    let m = 0.5 * (l + r);
                    let dm = dg(m);
                    if (dm < 0.0) == (dl < 0.0) {
                        l = m;
                        dl = dm;
                    } else {
                        r = m;
                    }
                }
                let m = 0.5 * (l + r);
                if g(m).abs() <= zero_tol {
                    roots.push(m);
                }
            }
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 10.0 * tol);
    roots
}

#[derive(Default)]
struct RawSections {
    poly: Option<Vec<f64>>,
    inverse: Option<Vec<f64>>,
    center: Option<Vec<f64>>,
    affine: Option<Vec<f64>>,
    size: Option<Vec<f64>>,
}

fn classify_header(header: &str) -> Option<Section> {
    let h = header.to_ascii_lowercase();
    if h.contains("inverse") {
        Some(Section::InversePolynomial)
    } else if h.contains("polynomial") {
        Some(Section::Polynomial)
    } else if h.contains("center") {
        Some(Section::Center)
    } else if h.contains("affine") {
        Some(Section::Affine)
    } else if h.contains("size") {
        Some(Section::ImageSize)
    } else {
        None
    }
}

/// Parses OCamCalib calibration text into a validated [`CameraModel`].
pub fn parse_calibration(text: &str) -> Result<CameraModel, CalibError> {
    let mut raw = RawSections::default();
    let mut current: Option<Section> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            current = classify_header(header);
            if let Some(section) = current {
                let slot = raw.slot(section);
                if slot.is_some() {
                    return Err(CalibError::Malformed {
                        section,
                        reason: "section appears twice".into(),
                    });
                }
                *slot = Some(Vec::new());
            }
            continue;
        }
        let Some(section) = current else {
            continue;
        };
        let values = raw.slot(section).as_mut().expect("slot opened at header");
        for token in line.split_whitespace() {
            let v: f64 = token.parse().map_err(|_| CalibError::Malformed {
                section,
                reason: format!("not a number: {token:?}"),
            })?;
            values.push(v);
        }
    }

    let poly = counted_list(Section::Polynomial, raw.poly)?;
    let inverse = match raw.inverse {
        Some(values) => Some(counted_list(Section::InversePolynomial, Some(values))?),
        None => None,
    };
    let center = exact(Section::Center, raw.center, 2)?;
    let affine = exact(Section::Affine, raw.affine, 3)?;
    let size = exact(Section::ImageSize, raw.size, 2)?;
    for (i, &s) in size.iter().enumerate() {
        if s.fract() != 0.0 || s < 1.0 {
            return Err(CalibError::Malformed {
                section: Section::ImageSize,
                reason: format!("entry {i} is not a positive integer: {s}"),
            });
        }
    }

    let model = CameraModel::new(
        poly,
        Affine {
            c: affine[0],
            d: affine[1],
            e: affine[2],
        },
        (center[1], center[0]),
        (size[1] as usize, size[0] as usize),
    )?;
    Ok(match inverse {
        Some(inv) => model.with_inverse_poly(inv),
        None => model,
    })
}

impl RawSections {
    fn slot(&mut self, section: Section) -> &mut Option<Vec<f64>> {
        match section {
            Section::Polynomial => &mut self.poly,
            Section::InversePolynomial => &mut self.inverse,
            Section::Center => &mut self.center,
            Section::Affine => &mut self.affine,
            Section::ImageSize => &mut self.size,
        }
    }
}

fn counted_list(section: Section, values: Option<Vec<f64>>) -> Result<Vec<f64>, CalibError> {
    let values = values.ok_or(CalibError::MissingSection(section))?;
    let (&count, rest) = values.split_first().ok_or_else(|| CalibError::Malformed {
        section,
        reason: "empty section".into(),
    })?;
    if count.fract() != 0.0 || count < 0.0 || count as usize != rest.len() {
        return Err(CalibError::Malformed {
            section,
            reason: format!("declared {count} coefficients, found {}", rest.len()),
        });
    }
    Ok(rest.to_vec())
}

fn exact(section: Section, values: Option<Vec<f64>>, n: usize) -> Result<Vec<f64>, CalibError> {
    let values = values.ok_or(CalibError::MissingSection(section))?;
    if values.len() != n {
        return Err(CalibError::Malformed {
            section,
            reason: format!("expected {n} numbers, found {}", values.len()),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MINIMAL: &str = "\
#polynomial coefficients for the DIRECT mapping function
3 -137.6 0 0.0011

#center: \"row\" and \"column\" coordinates (x and y) of the image center
384 512

#affine parameters \"c\", \"d\", \"e\"
1 0 0

#image size: \"height\" and \"width\"
768 1024
";

    fn fixture_model() -> CameraModel {
        parse_calibration(include_str!("../fixtures/calib_results.txt")).unwrap()
    }

    /// Independent evaluation of the forward model: explicit power sum and a
    /// general 2x2 inverse instead of the closed-form one.
    fn oracle_ray(model: &CameraModel, p: (f64, f64)) -> Vector3<f64> {
        let a = model.affine();
        let m = Matrix2::new(a.c, a.d, a.e, 1.0).try_inverse().unwrap();
        let (xc, yc) = model.center();
        let uv = m * Vector2::new(p.0 - xc, p.1 - yc);
        let rho = (uv.x * uv.x + uv.y * uv.y).sqrt();
        let f: f64 = model
            .poly_coeffs()
            .iter()
            .enumerate()
            .map(|(i, a)| a * rho.powi(i as i32))
            .sum();
        let v = Vector3::new(uv.x, uv.y, f);
        v / v.norm()
    }

    #[test]
    fn parses_minimal_file_verbatim() {
        let m = parse_calibration(MINIMAL).unwrap();
        assert_eq!(m.poly_coeffs(), &[-137.6, 0.0, 0.0011]);
        assert_eq!(m.center(), (512.0, 384.0));
        assert_eq!(m.affine(), Affine::IDENTITY);
        assert_eq!(m.image_size(), (1024, 768));
        assert!(m.inverse_poly().is_none());
    }

    #[test]
    fn missing_affine_section_is_named() {
        let text: String = MINIMAL
            .lines()
            .filter(|l| !l.contains("affine") && l.trim() != "1 0 0")
            .map(|l| format!("{l}\n"))
            .collect();
        let err = parse_calibration(&text).unwrap_err();
        assert_eq!(err, CalibError::MissingSection(Section::Affine));
        assert!(err.to_string().contains("affine"));
    }

    #[test]
    fn coefficient_count_mismatch() {
        let text = MINIMAL.replace("3 -137.6", "4 -137.6");
        assert!(matches!(
            parse_calibration(&text),
            Err(CalibError::Malformed {
                section: Section::Polynomial,
                ..
            })
        ));
    }

    #[test]
    fn garbage_number_names_section() {
        let text = MINIMAL.replace("384 512", "384 abc");
        let err = parse_calibration(&text).unwrap_err();
        assert!(matches!(
            err,
            CalibError::Malformed {
                section: Section::Center,
                ..
            }
        ));
    }

    #[test]
    fn invariant_violations() {
        assert!(parse_calibration(&MINIMAL.replace("3 -137.6", "3 0")).is_err());
        assert!(parse_calibration(&MINIMAL.replace("384 512", "384 2000")).is_err());
        assert!(parse_calibration(&MINIMAL.replace("\n1 0 0", "\n0 1 0")).is_err());
        assert!(CameraModel::new(vec![1.0], Affine::IDENTITY, (5.0, 5.0), (10, 10)).is_err());
    }

    #[test]
    fn fixture_reserializes_identically() {
        let text = include_str!("../fixtures/calib_results.txt");
        let model = parse_calibration(text).unwrap();
        let out = model.to_ocamcalib_string();
        let a: Vec<&str> = text.split_whitespace().collect();
        let b: Vec<&str> = out.split_whitespace().collect();
        assert_eq!(a, b);
        assert_eq!(parse_calibration(&out).unwrap(), model);
    }

    #[test]
    fn center_pixel_looks_along_a0() {
        let m = CameraModel::new(vec![-137.6, 0.0, 0.0011], Affine::IDENTITY, (512.0, 384.0), (1024, 768))
            .unwrap();
        let r = m.pixel_to_ray((512.0, 384.0)).unwrap();
        assert_eq!((r.x(), r.y(), r.z()), (0.0, 0.0, -1.0));
        let m = CameraModel::new(vec![3.0, 0.0], Affine::IDENTITY, (5.0, 5.0), (10, 10)).unwrap();
        assert_eq!(m.pixel_to_ray((5.0, 5.0)).unwrap().z(), 1.0);
    }

    #[test]
    fn unit_quadratic_example() {
        let m = CameraModel::new(vec![1.0, 0.0, 1.0], Affine::IDENTITY, (5.0, 5.0), (10, 10)).unwrap();
        let r = m.pixel_to_ray((6.0, 5.0)).unwrap();
        let want = Vector3::new(1.0, 0.0, 2.0).normalize();
        assert!((r.as_vector() - want).norm() < 1e-15);

        let p = m.ray_to_pixel(&Ray::new(Vector3::new(1.0, 0.0, 2.0)).unwrap()).unwrap();
        assert!((p.0 - 6.0).abs() < 1e-9 && (p.1 - 5.0).abs() < 1e-9);
    }

    #[test]
    fn pixel_to_ray_matches_oracle() {
        let model = fixture_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = model.image_size();
        for _ in 0..1000 {
            let p = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let got = model.pixel_to_ray(p).unwrap();
            let want = oracle_ray(&model, p);
            assert!((got.as_vector() - want).norm() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn ray_to_pixel_round_trip() {
        let model = fixture_model();
        let (xc, yc) = model.center();
        let r_in = model.max_inscribed_radius();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut good = 0;
        let n = 1000;
        for _ in 0..n {
            let rho = rng.random_range(1.0..r_in);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let p = (xc + rho * phi.cos(), yc + rho * phi.sin());
            let ray = model.pixel_to_ray(p).unwrap();
            let q = model.ray_to_pixel(&ray).unwrap();
            if (q.0 - p.0).hypot(q.1 - p.1) < 0.01 {
                good += 1;
            }
            let back = model.pixel_to_ray(q).unwrap();
            assert!(back.angle_to(&ray) < 1e-6);
        }
        assert!(good as f64 >= 0.999 * n as f64, "{good}/{n}");
    }

    #[test]
    fn rotational_symmetry_with_identity_affine() {
        let m = CameraModel::new(vec![-137.6, 0.0, 0.0011], Affine::IDENTITY, (512.0, 384.0), (1024, 768))
            .unwrap();
        for rho in [10.0, 120.0, 250.0, 380.0] {
            let polar: Vec<f64> = (0..12)
                .map(|k| {
                    let phi = k as f64 * 0.5;
                    let r = m
                        .pixel_to_ray((512.0 + rho * phi.cos(), 384.0 + rho * phi.sin()))
                        .unwrap();
                    r.z().acos()
                })
                .collect();
            for a in &polar {
                assert!((a - polar[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ray_scale_invariance() {
        let a = Ray::new(Vector3::new(3.0, -4.0, 12.0)).unwrap();
        let b = Ray::new(Vector3::new(3.0, -4.0, 12.0) * 17.5).unwrap();
        assert!((a.as_vector() - b.as_vector()).norm() < 1e-15);
        assert_eq!(Ray::new(Vector3::zeros()), Err(CalibError::DegenerateRay));
    }

    #[test]
    fn off_axis_backward_ray_is_out_of_fov() {
        let m = CameraModel::new(vec![-137.6, 0.0, 0.0011], Affine::IDENTITY, (512.0, 384.0), (1024, 768))
            .unwrap();
        // Straight "up" the positive axis is never imaged when a0 < 0.
        assert_eq!(
            m.ray_to_pixel(&Ray::new(Vector3::new(0.0, 0.0, 1.0)).unwrap()),
            Err(CalibError::OutOfFov)
        );
        assert_eq!(
            m.ray_to_pixel(&Ray::new(Vector3::new(0.01, 0.0, 1.0)).unwrap()),
            Err(CalibError::OutOfFov)
        );
    }

    #[test]
    fn ambiguous_projection_reports_candidates() {
        // f(rho) = 1 - 0.1 rho + 0.0025 rho^2 crosses f/rho = 0.05 twice.
        let m = CameraModel::new(vec![1.0, -0.1, 0.0025], Affine::IDENTITY, (50.0, 50.0), (100, 100))
            .unwrap();
        match m.ray_to_pixel(&Ray::new(Vector3::new(1.0, 0.0, 0.05)).unwrap()) {
            Err(CalibError::Ambiguous(c)) => assert_eq!(c.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_exp_matches_c() {
        assert_eq!(format_exp(-137.6), "-1.376000e+02");
        assert_eq!(format_exp(0.0011), "1.100000e-03");
        assert_eq!(format_exp(0.0), "0.000000e+00");
    }
}
