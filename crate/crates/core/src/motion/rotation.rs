//! 3x3 rotation utilities: Euler channel orders, the 6D rotation
//! representation (first two matrix columns, re-orthonormalized on read),
//! and yaw extraction for heading alignment.

use crate::skeleton::Channel;

pub type Mat3 = [[f64; 3]; 3];

pub const AXIS_X: usize = 0;
pub const AXIS_Y: usize = 1;
pub const AXIS_Z: usize = 2;

pub fn identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Rotation about one coordinate axis (0 = X, 1 = Y, 2 = Z).
pub fn axis_rotation(axis: usize, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    match axis {
        AXIS_X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        AXIS_Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        AXIS_Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        _ => panic!("axis must be 0, 1 or 2"),
    }
}

/// Heading rotation about the up (+Y) axis.
pub fn yaw_matrix(angle: f64) -> Mat3 {
    axis_rotation(AXIS_Y, angle)
}

/// Compose rotations in channel order: first listed is outermost,
/// matching BVH semantics.
pub fn euler_to_matrix(axes: [usize; 3], angles: [f64; 3]) -> Mat3 {
    let r0 = axis_rotation(axes[0], angles[0]);
    let r1 = axis_rotation(axes[1], angles[1]);
    let r2 = axis_rotation(axes[2], angles[2]);
    mat_mul(&mat_mul(&r0, &r1), &r2)
}

/// Extract Tait-Bryan angles for any order of three distinct axes.
///
/// For R = R_i(a) R_j(b) R_k(c) with parity s of (i,j,k):
/// b = asin(s * M[i][k]), a = atan2(-s * M[j][k], M[k][k]),
/// c = atan2(-s * M[i][j], M[i][i]).
pub fn matrix_to_euler(axes: [usize; 3], m: &Mat3) -> [f64; 3] {
    let (i, j, k) = (axes[0], axes[1], axes[2]);
    debug_assert!(i != j && j != k && i != k, "axes must be distinct");
    let s = permutation_sign(axes);
    let sinb = (s * m[i][k]).clamp(-1.0, 1.0);
    let b = sinb.asin();
    let a = (-s * m[j][k]).atan2(m[k][k]);
    let c = (-s * m[i][j]).atan2(m[i][i]);
    [a, b, c]
}

fn permutation_sign(axes: [usize; 3]) -> f64 {
    match axes {
        [0, 1, 2] | [1, 2, 0] | [2, 0, 1] => 1.0,
        _ => -1.0,
    }
}

/// The three rotation axes of a channel list, in declaration order, if the
/// joint has exactly three rotation channels.
pub fn rotation_axes(channels: &[Channel]) -> Option<[usize; 3]> {
    let rot: Vec<usize> = channels
        .iter()
        .filter_map(|c| match c {
            Channel::Xrotation => Some(AXIS_X),
            Channel::Yrotation => Some(AXIS_Y),
            Channel::Zrotation => Some(AXIS_Z),
            _ => None,
        })
        .collect();
    if rot.len() == 3 {
        Some([rot[0], rot[1], rot[2]])
    } else {
        None
    }
}

/// First two columns of the rotation matrix, column-major.
pub fn rot6d_from_matrix(m: &Mat3) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Gram-Schmidt reconstruction of a rotation matrix from its 6D encoding.
pub fn matrix_from_rot6d(v: &[f64]) -> Mat3 {
    debug_assert_eq!(v.len(), 6);
    let a = normalize([v[0], v[1], v[2]]);
    let raw_b = [v[3], v[4], v[5]];
    let dot = a[0] * raw_b[0] + a[1] * raw_b[1] + a[2] * raw_b[2];
    let b = normalize([
        raw_b[0] - dot * a[0],
        raw_b[1] - dot * a[1],
        raw_b[2] - dot * a[2],
    ]);
    let c = cross(a, b);
    [
        [a[0], b[0], c[0]],
        [a[1], b[1], c[1]],
        [a[2], b[2], c[2]],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 {
        // Degenerate input; fall back to a fixed axis so the result is
        // still a frame rather than NaN.
        return [1.0, 0.0, 0.0];
    }
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Heading angle of a rotation's forward axis (+Z), projected on the
/// ground plane. Zero when the forward axis has no ground-plane component.
pub fn yaw_of(m: &Mat3) -> f64 {
    let forward = apply(m, [0.0, 0.0, 1.0]);
    if forward[0].abs() < 1e-12 && forward[2].abs() < 1e-12 {
        0.0
    } else {
        forward[0].atan2(forward[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_rng;
    use rand::Rng;

    const ORDERS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];

    fn mat_close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() < tol))
    }

    #[test]
    fn euler_round_trip_all_orders() {
        let mut rng = derive_rng(1, "euler");
        for order in ORDERS {
            for _ in 0..50 {
                // Keep the middle angle away from the gimbal singularity.
                let angles = [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.3..1.3),
                    rng.gen_range(-3.0..3.0),
                ];
                let m = euler_to_matrix(order, angles);
                let back = matrix_to_euler(order, &m);
                let m2 = euler_to_matrix(order, back);
                assert!(mat_close(&m, &m2, 1e-10), "order {order:?}");
            }
        }
    }

    #[test]
    fn rot6d_round_trip() {
        let mut rng = derive_rng(2, "rot6d");
        for _ in 0..100 {
            let m = euler_to_matrix(
                [2, 0, 1],
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.4..1.4),
                    rng.gen_range(-3.0..3.0),
                ],
            );
            let v = rot6d_from_matrix(&m);
            let back = matrix_from_rot6d(&v);
            assert!(mat_close(&m, &back, 1e-12));
        }
    }

    #[test]
    fn gram_schmidt_repairs_noisy_input() {
        let mut rng = derive_rng(3, "gs");
        let m = euler_to_matrix([2, 0, 1], [0.4, 0.7, -0.2]);
        let mut v = rot6d_from_matrix(&m);
        for x in v.iter_mut() {
            *x += rng.gen_range(-1e-3..1e-3);
        }
        let r = matrix_from_rot6d(&v);
        // Columns orthonormal to machine precision.
        for c in 0..3 {
            let col = [r[0][c], r[1][c], r[2][c]];
            let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let dot01 = r[0][0] * r[0][1] + r[1][0] * r[1][1] + r[2][0] * r[2][1];
        assert!(dot01.abs() < 1e-12);
    }

    #[test]
    fn yaw_of_pure_yaw_rotations() {
        for angle in [-2.0f64, -0.5, 0.0, 0.9, 3.0] {
            let m = yaw_matrix(angle);
            let got = yaw_of(&m);
            let diff = (got - angle).rem_euclid(std::f64::consts::TAU);
            let diff = diff.min(std::f64::consts::TAU - diff);
            assert!(diff < 1e-12, "angle {angle}, got {got}");
        }
    }
}
