//! Motion alignment: root centered at the origin, frame-0 heading facing +Z.

use crate::numerics::Tensor;

use super::rotation::{apply, mat_mul, rot6d_from_matrix, yaw_matrix, yaw_of};
use super::{MotionError, MotionSequence, FEATURES_PER_JOINT, POS_OFFSET, ROT_OFFSET, VEL_OFFSET};

/// Subtract the frame-0 root position from the root trajectory and rotate
/// the whole clip about +Y so the frame-0 root forward axis points at +Z.
///
/// Root-relative joint positions and all velocities live in world axes and
/// rotate with the clip; non-root local rotations are unaffected by a global
/// rigid transform.
pub fn align_motion(m: &MotionSequence) -> Result<MotionSequence, MotionError> {
    let (t_len, k) = (m.frame_count(), m.joint_count());
    let origin = m.position(0, 0);
    let root_rot0 = m.rotation_matrix(0, 0);
    let yaw = yaw_of(&root_rot0);
    let correction = yaw_matrix(-yaw);

    let mut data = m.frames().to_vec();
    for t in 0..t_len {
        for j in 0..k {
            let base = (t * k + j) * FEATURES_PER_JOINT;
            let pos = if j == 0 {
                let p = m.position(t, 0);
                apply(
                    &correction,
                    [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]],
                )
            } else {
                apply(&correction, m.position(t, j))
            };
            let vel = apply(&correction, m.velocity(t, j));
            for d in 0..3 {
                data[base + POS_OFFSET + d] = pos[d];
                data[base + VEL_OFFSET + d] = vel[d];
            }
            if j == 0 {
                let rot = mat_mul(&correction, &m.rotation_matrix(t, 0));
                let six = rot6d_from_matrix(&rot);
                data[base + ROT_OFFSET..base + ROT_OFFSET + 6].copy_from_slice(&six);
            }
        }
    }
    m.with_frames(Tensor::new(
        vec![t_len, k, FEATURES_PER_JOINT],
        data,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::rotation::{euler_to_matrix, identity, rot6d_from_matrix};
    use crate::numerics::derive_rng;
    use rand::Rng;

    /// A small random clip that is already aligned: root starts at the
    /// origin with identity heading.
    fn aligned_clip(t_len: usize, k: usize, seed: u64) -> MotionSequence {
        let mut rng = derive_rng(seed, "alignclip");
        let mut pos = vec![0.0; t_len * k * 3];
        let mut rot = vec![0.0; t_len * k * 6];
        for t in 0..t_len {
            for j in 0..k {
                let base = (t * k + j) * 3;
                if j == 0 {
                    // Root walks along +Z from the origin.
                    pos[base + 2] = t as f64 * 0.1;
                } else {
                    for d in 0..3 {
                        pos[base + d] = rng.gen_range(-0.5..0.5);
                    }
                }
                let m = if t == 0 && j == 0 {
                    identity()
                } else {
                    euler_to_matrix(
                        [2, 0, 1],
                        [
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ],
                    )
                };
                rot[(t * k + j) * 6..(t * k + j) * 6 + 6]
                    .copy_from_slice(&rot6d_from_matrix(&m));
            }
        }
        MotionSequence::from_pos_rot(
            &Tensor::new(vec![t_len, k, 3], pos),
            &Tensor::new(vec![t_len, k, 6], rot),
            20.0,
            "test",
        )
        .unwrap()
    }

    /// Rigidly yaw a clip and translate the root, mimicking an unaligned
    /// capture of the same motion.
    fn perturb(m: &MotionSequence, yaw: f64, offset: [f64; 3]) -> MotionSequence {
        let rot = yaw_matrix(yaw);
        let (t_len, k) = (m.frame_count(), m.joint_count());
        let mut data = m.frames().to_vec();
        for t in 0..t_len {
            for j in 0..k {
                let base = (t * k + j) * FEATURES_PER_JOINT;
                let mut pos = apply(&rot, m.position(t, j));
                if j == 0 {
                    for d in 0..3 {
                        pos[d] += offset[d];
                    }
                    let r = mat_mul(&rot, &m.rotation_matrix(t, 0));
                    data[base + ROT_OFFSET..base + ROT_OFFSET + 6]
                        .copy_from_slice(&rot6d_from_matrix(&r));
                }
                let vel = apply(&rot, m.velocity(t, j));
                for d in 0..3 {
                    data[base + POS_OFFSET + d] = pos[d];
                    data[base + VEL_OFFSET + d] = vel[d];
                }
            }
        }
        m.with_frames(Tensor::new(vec![t_len, k, FEATURES_PER_JOINT], data))
            .unwrap()
    }

    fn max_abs_diff(a: &MotionSequence, b: &MotionSequence) -> f64 {
        a.frames()
            .data()
            .iter()
            .zip(b.frames().data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn aligned_motion_is_a_fixed_point() {
        let m = aligned_clip(8, 3, 1);
        let out = align_motion(&m).unwrap();
        assert!(max_abs_diff(&m, &out) < 1e-9);
    }

    #[test]
    fn rigid_yaw_is_undone() {
        let m = aligned_clip(10, 4, 2);
        let turned = perturb(&m, std::f64::consts::FRAC_PI_2, [3.0, -1.0, 2.0]);
        let out = align_motion(&turned).unwrap();
        assert!(max_abs_diff(&m, &out) < 1e-6);
    }

    #[test]
    fn postconditions_hold() {
        let m = perturb(&aligned_clip(6, 2, 3), 1.1, [5.0, 0.5, -2.0]);
        let out = align_motion(&m).unwrap();
        let p0 = out.position(0, 0);
        assert!(p0.iter().all(|v| v.abs() < 1e-9));
        let yaw = yaw_of(&out.rotation_matrix(0, 0));
        assert!(yaw.abs() < 1e-9);
    }
}
