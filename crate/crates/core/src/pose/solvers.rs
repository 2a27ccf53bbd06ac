//! Minimal and linear essential-matrix solvers, decomposition, and the
//! rotation-only fit.
//!
//! Convention: `X1 = R X2 + t`, `E = [t]x R`, so `p1^T E p2 = 0`.

use nalgebra::{DMatrix, Matrix3, Rotation3, SMatrix, Vector3};

type Mat10 = SMatrix<f64, 10, 10>;

/// Monomials in `(x, y, z)` of degree <= 3. The ten cubics come first in
/// the order eliminated by Gauss-Jordan; the last ten form the quotient
/// basis `[x^2, xy, xz, y^2, yz, z^2, x, y, z, 1]`.
const MONOMIALS: [(u8, u8, u8); 20] = [
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

fn monomial_index(e: (u8, u8, u8)) -> usize {
    MONOMIALS
        .iter()
        .position(|&m| m == e)
        .expect("degree at most 3")
}

/// Dense polynomial over [`MONOMIALS`].
#[derive(Clone, Copy)]
struct Poly([f64; 20]);

impl Poly {
    fn zero() -> Self {
        Poly([0.0; 20])
    }

    /// `a x + b y + c z + d`.
    fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        let mut p = Self::zero();
        p.0[16] = a;
        p.0[17] = b;
        p.0[18] = c;
        p.0[19] = d;
        p
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let ea = MONOMIALS[i];
            for (j, &b) in other.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let eb = MONOMIALS[j];
                let k = monomial_index((ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2));
                out.0[k] += a * b;
            }
        }
        out
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(&other.0) {
            *o += b;
        }
        out
    }

    fn scale(&self, s: f64) -> Poly {
        let mut out = *self;
        for o in &mut out.0 {
            *o *= s;
        }
        out
    }
}

/// Right singular vectors of `a` ordered by increasing singular value.
/// Short matrices are zero-padded to square so the full basis is returned.
fn null_space_basis(a: &DMatrix<f64>) -> Vec<nalgebra::DVector<f64>> {
    let cols = a.ncols();
    let padded = if a.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    order.iter().map(|&i| v_t.row(i).transpose()).collect()
}

fn epipolar_row(p1: &Vector3<f64>, p2: &Vector3<f64>) -> [f64; 9] {
    let mut row = [0.0; 9];
    for j in 0..3 {
        for k in 0..3 {
            row[3 * j + k] = p1[j] * p2[k];
        }
    }
    row
}

fn matrix_from_vec(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

/// Five-point essential matrix solver. Returns up to ten real solutions,
/// each scaled to unit Frobenius norm.
pub fn five_point(p1: &[Vector3<f64>; 5], p2: &[Vector3<f64>; 5]) -> Vec<Matrix3<f64>> {
    let mut q = DMatrix::zeros(5, 9);
    for i in 0..5 {
        let row = epipolar_row(&p1[i], &p2[i]);
        for (c, v) in row.iter().enumerate() {
            q[(i, c)] = *v;
        }
    }
    let basis = null_space_basis(&q);
    let (bx, by, bz, bw) = (&basis[0], &basis[1], &basis[2], &basis[3]);

    // E(x, y, z) = x X + y Y + z Z + W, entry-wise linear polynomials.
    let e: Vec<Poly> = (0..9).map(|k| Poly::linear(bx[k], by[k], bz[k], bw[k])).collect();
    let at = |r: usize, c: usize| &e[3 * r + c];

    let mut equations: Vec<Poly> = Vec::with_capacity(10);
    let det = at(0, 1)
        .mul(at(1, 2))
        .add(&at(0, 2).mul(at(1, 1)).scale(-1.0))
        .mul(at(2, 0))
        .add(&at(0, 2).mul(at(1, 0)).add(&at(0, 0).mul(at(1, 2)).scale(-1.0)).mul(at(2, 1)))
        .add(&at(0, 0).mul(at(1, 1)).add(&at(0, 1).mul(at(1, 0)).scale(-1.0)).mul(at(2, 2)));
    equations.push(det);

    // EE^T, then 2 EE^T E - tr(EE^T) E.
    let mut eet = vec![Poly::zero(); 9];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = Poly::zero();
            for k in 0..3 {
                acc = acc.add(&at(r, k).mul(at(c, k)));
            }
            eet[3 * r + c] = acc;
        }
    }
    let trace = eet[0].add(&eet[4]).add(&eet[8]);
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = Poly::zero();
            for k in 0..3 {
                acc = acc.add(&eet[3 * r + k].mul(at(k, c)));
            }
            equations.push(acc.scale(2.0).add(&trace.mul(at(r, c)).scale(-1.0)));
        }
    }

    // Gauss-Jordan on the cubic block (partial pivoting).
    let mut a = SMatrix::<f64, 10, 20>::zeros();
    for (r, eq) in equations.iter().enumerate() {
        for c in 0..20 {
            a[(r, c)] = eq.0[c];
        }
    }
    for col in 0..10 {
        let pivot = (col..10)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .expect("non-empty range");
        if a[(pivot, col)].abs() < 1e-14 {
            return Vec::new();
        }
        a.swap_rows(col, pivot);
        let inv = 1.0 / a[(col, col)];
        for c in 0..20 {
            a[(col, c)] *= inv;
        }
        for r in 0..10 {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..20 {
                        a[(r, c)] -= f * a[(col, c)];
                    }
                }
            }
        }
    }

    // Multiplication by x on the quotient basis.
    let mut action = Mat10::zeros();
    for r in 0..6 {
        for c in 0..10 {
            action[(r, c)] = -a[(r, 10 + c)];
        }
    }
    action[(6, 0)] = 1.0;
    action[(7, 1)] = 1.0;
    action[(8, 2)] = 1.0;
    action[(9, 6)] = 1.0;

    let eigenvalues = action.complex_eigenvalues();
    let scale = action.norm().max(1.0);
    let mut solutions = Vec::new();
    for lambda in eigenvalues.iter() {
        if lambda.im.abs() > 1e-8 * scale.max(lambda.re.abs()) {
            continue;
        }
        let shifted = action - Mat10::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let (imin, _) = svd.singular_values.argmin();
        let v = v_t.row(imin);
        if v[9].abs() < 1e-12 {
            continue;
        }
        let (x, y, z) = (v[6] / v[9], v[7] / v[9], v[8] / v[9]);
        let vec: Vec<f64> = (0..9).map(|k| x * bx[k] + y * by[k] + z * bz[k] + bw[k]).collect();
        let m = matrix_from_vec(&vec);
        let n = m.norm();
        if n > 0.0 && n.is_finite() {
            solutions.push(m / n);
        }
    }
    solutions
}

/// Weighted linear (8+ point) essential matrix, not yet projected.
pub fn eight_point(p1: &[Vector3<f64>], p2: &[Vector3<f64>], weights: Option<&[f64]>) -> Option<Matrix3<f64>> {
    let n = p1.len();
    if n < 8 || p2.len() != n {
        return None;
    }
    let mut a = DMatrix::zeros(n, 9);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i].sqrt());
        let row = epipolar_row(&p1[i], &p2[i]);
        for (c, v) in row.iter().enumerate() {
            a[(i, c)] = w * v;
        }
    }
    let v = &null_space_basis(&a)[0];
    Some(matrix_from_vec(v.as_slice()))
}

/// Closest matrix with singular values `(1, 1, 0)`, unit Frobenius norm.
pub fn project_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    let mut s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut d = Vector3::zeros();
    d[order[0]] = 1.0;
    d[order[1]] = 1.0;
    s.copy_from(&d);
    (u * Matrix3::from_diagonal(&s) * v_t) / 2f64.sqrt()
}

/// The four `(R, t)` factorizations of `E = [t]x R`, `|t| = 1`.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Rotation3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    // Move the smallest singular value to the last position.
    let (imin, _) = svd.singular_values.argmin();
    if imin != 2 {
        u.swap_columns(imin, 2);
        v_t.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation3::from_matrix_unchecked(u * w * v_t);
    let r2 = Rotation3::from_matrix_unchecked(u * w.transpose() * v_t);
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths `(l1, l2)` with `l1 p1 ~= l2 R p2 + t` in the least-squares sense.
pub fn triangulate_depths(
    r: &Rotation3<f64>,
    t: &Vector3<f64>,
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let q = r * p2;
    // [p1, -q] (l1, l2)^T = t
    let a11 = p1.dot(p1);
    let a12 = -p1.dot(&q);
    let a22 = q.dot(&q);
    let b1 = p1.dot(t);
    let b2 = -q.dot(t);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 {
        return None;
    }
    Some(((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det))
}

/// Weighted orthogonal Procrustes: the rotation minimizing
/// `sum w |p1 - R p2|^2`.
pub fn procrustes(p1: &[Vector3<f64>], p2: &[Vector3<f64>], weights: Option<&[f64]>) -> Rotation3<f64> {
    let mut h = Matrix3::zeros();
    for (i, (a, b)) in p1.iter().zip(p2).enumerate() {
        h += weights.map_or(1.0, |w| w[i]) * a * b.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V^T"));
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    Rotation3::from_matrix_unchecked(u * fix * v_t)
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    /// Two-view scene: points at depth 2..10 around camera 1.
    fn scene(rng: &mut impl Rng, r: &Rotation3<f64>, t: &Vector3<f64>, n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let x1 = random_unit(rng) * rng.random_range(2.0..10.0);
            let x2 = r.inverse() * (x1 - t);
            a.push(x1.normalize());
            b.push(x2.normalize());
        }
        (a, b)
    }

    fn essential(r: &Rotation3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
        let e = skew(&t.normalize()) * r.matrix();
        e / e.norm()
    }

    fn same_up_to_sign(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).norm().min((a + b).norm())
    }

    #[test]
    fn poly_product_matches_expansion() {
        // (x + 2)(y - 1) = xy - x + 2y - 2
        let p = Poly::linear(1.0, 0.0, 0.0, 2.0).mul(&Poly::linear(0.0, 1.0, 0.0, -1.0));
        assert_eq!(p.0[monomial_index((1, 1, 0))], 1.0);
        assert_eq!(p.0[monomial_index((1, 0, 0))], -1.0);
        assert_eq!(p.0[monomial_index((0, 1, 0))], 2.0);
        assert_eq!(p.0[monomial_index((0, 0, 0))], -2.0);
    }

    #[test]
    fn five_point_contains_true_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = Rotation3::from_scaled_axis(random_unit(&mut rng) * rng.random_range(0.0..0.5));
            let t = random_unit(&mut rng);
            let (a, b) = scene(&mut rng, &r, &t, 5);
            let sols = five_point(&a.clone().try_into().unwrap(), &b.clone().try_into().unwrap());
            let truth = essential(&r, &t);
            let best = sols
                .iter()
                .map(|e| same_up_to_sign(e, &truth))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "best {best} of {}", sols.len());
            for e in &sols {
                for i in 0..5 {
                    assert!((a[i].transpose() * e * b[i])[0].abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn eight_point_exact_on_clean_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
        let t = Vector3::new(0.3, -1.0, 0.2);
        let (a, b) = scene(&mut rng, &r, &t, 30);
        let e = project_essential(&eight_point(&a, &b, None).unwrap());
        assert!(same_up_to_sign(&e, &essential(&r, &t)) < 1e-9);
        assert!(eight_point(&a[..7], &b[..7], None).is_none());
    }

    #[test]
    fn projection_has_two_equal_singular_values() {
        let m = Matrix3::new(3.0, 1.0, 0.2, -1.0, 2.0, 0.5, 0.3, 0.1, 0.7);
        let e = project_essential(&m);
        let mut s: Vec<f64> = e.singular_values().iter().cloned().collect();
        s.sort_by(f64::total_cmp);
        assert!(s[0].abs() < 1e-12);
        assert!((s[1] - s[2]).abs() < 1e-12);
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_contains_truth() {
        let r = Rotation3::from_euler_angles(0.3, 0.1, -0.7);
        let t = Vector3::new(1.0, 2.0, -0.5).normalize();
        let cands = decompose_essential(&essential(&r, &t));
        let hit = cands
            .iter()
            .any(|(rc, tc)| (rc.matrix() - r.matrix()).norm() < 1e-9 && (tc - t).norm() < 1e-9);
        assert!(hit);
        for (rc, _) in &cands {
            assert!((rc.matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Rotation3::from_euler_angles(0.5, -0.4, 2.0);
        let b: Vec<_> = (0..10).map(|_| random_unit(&mut rng)).collect();
        let a: Vec<_> = b.iter().map(|v| r * v).collect();
        assert!((procrustes(&a, &b, None).matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn triangulation_depths() {
        let r = Rotation3::identity();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let x1 = Vector3::new(0.0, 0.0, 5.0);
        let x2 = x1 - t;
        let (l1, l2) = triangulate_depths(&r, &t, &x1.normalize(), &x2.normalize()).unwrap();
        assert!((l1 - 5.0).abs() < 1e-12 && (l2 - x2.norm()).abs() < 1e-12);
    }
}
