use nalgebra::{Matrix3, Rotation3};

/// Below this `cos(pitch)` the roll and yaw axes coincide.
const GIMBAL_EPS: f64 = 1e-9;

/// Intrinsic Z-Y-X angles `(roll, pitch, yaw)` with
/// `R = Rz(yaw) Ry(pitch) Rx(roll)`. At gimbal lock roll is set to zero and
/// the remaining rotation is reported as yaw.
pub fn rotation_to_euler(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let m = r.matrix();
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    let cp = m[(2, 1)].hypot(m[(2, 2)]);
    if cp < GIMBAL_EPS {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(sp);
        return (0.0, pitch, (-m[(0, 1)]).atan2(m[(1, 1)]));
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    (roll, pitch, yaw)
}

/// Inverse of [`rotation_to_euler`].
pub fn euler_to_matrix(roll: f64, pitch: f64, yaw: f64) -> Rotation3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    Rotation3::from_matrix_unchecked(rz * ry * rx)
}
