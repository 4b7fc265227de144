//! Conversion between raw BVH channel frames and the motion representation.

use crate::numerics::Tensor;
use crate::skeleton::{BvhMotion, Channel, SkeletonGraph};

use super::rotation::{
    apply, euler_to_matrix, identity, mat_mul, rot6d_from_matrix, rotation_axes, Mat3,
};
use super::{MotionError, MotionSequence};

/// World positions and world rotations of every joint given per-joint local
/// rotations, local translations and the root world position.
pub fn forward_kinematics(
    s: &SkeletonGraph,
    local_rots: &[Mat3],
    local_trans: &[[f64; 3]],
    root_pos: [f64; 3],
) -> (Vec<[f64; 3]>, Vec<Mat3>) {
    let k = s.joint_count();
    debug_assert_eq!(local_rots.len(), k);
    debug_assert_eq!(local_trans.len(), k);
    let mut world_pos = vec![[0.0; 3]; k];
    let mut world_rot = vec![identity(); k];
    for (j, joint) in s.joints().iter().enumerate() {
        match joint.parent {
            None => {
                world_pos[j] = root_pos;
                world_rot[j] = local_rots[j];
            }
            Some(p) => {
                let offset = [
                    joint.rest_offset[0] + local_trans[j][0],
                    joint.rest_offset[1] + local_trans[j][1],
                    joint.rest_offset[2] + local_trans[j][2],
                ];
                let step = apply(&world_rot[p], offset);
                world_pos[j] = [
                    world_pos[p][0] + step[0],
                    world_pos[p][1] + step[1],
                    world_pos[p][2] + step[2],
                ];
                world_rot[j] = mat_mul(&world_rot[p], &local_rots[j]);
            }
        }
    }
    (world_pos, world_rot)
}

/// Turn raw BVH channel frames into a [`MotionSequence`].
///
/// Rotation channels are interpreted per joint in declared order (angles in
/// degrees); root translation is scaled by `scale` (the skeleton
/// normalization factor). Non-root joints store world-axis positions
/// relative to the root frame by frame.
pub fn bvh_to_motion(
    s: &SkeletonGraph,
    raw: &BvhMotion,
    scale: f64,
) -> Result<MotionSequence, MotionError> {
    let k = s.joint_count();
    let t_len = raw.frames.len();
    if t_len == 0 {
        return Err(MotionError::InvalidArgument(
            "BVH motion has no frames".to_string(),
        ));
    }
    // Per-joint channel slots into the flat row.
    let mut slot = 0usize;
    let mut slots: Vec<usize> = Vec::with_capacity(k);
    for joint in s.joints() {
        slots.push(slot);
        slot += joint.channels.len();
        let rot_count = joint.channels.iter().filter(|c| c.is_rotation()).count();
        if rot_count != 0 && rot_count != 3 {
            return Err(MotionError::UnsupportedChannels {
                joint: joint.name.clone(),
                count: rot_count,
            });
        }
    }

    let mut positions = vec![0.0; t_len * k * 3];
    let mut rot6d = vec![0.0; t_len * k * 6];
    for (t, row) in raw.frames.iter().enumerate() {
        let mut local_rots = vec![identity(); k];
        let mut local_trans = vec![[0.0; 3]; k];
        let mut root_pos = [0.0; 3];
        for (j, joint) in s.joints().iter().enumerate() {
            let mut angles = [0.0; 3];
            let mut rot_idx = 0;
            for (c, ch) in joint.channels.iter().enumerate() {
                let v = row[slots[j] + c];
                match ch {
                    Channel::Xposition => local_trans[j][0] = v,
                    Channel::Yposition => local_trans[j][1] = v,
                    Channel::Zposition => local_trans[j][2] = v,
                    _ => {
                        angles[rot_idx] = v.to_radians();
                        rot_idx += 1;
                    }
                }
            }
            if let Some(axes) = rotation_axes(&joint.channels) {
                local_rots[j] = euler_to_matrix(axes, angles);
            }
            if joint.parent.is_none() {
                root_pos = [
                    local_trans[j][0] * scale,
                    local_trans[j][1] * scale,
                    local_trans[j][2] * scale,
                ];
                local_trans[j] = [0.0; 3];
            } else {
                for d in 0..3 {
                    local_trans[j][d] *= scale;
                }
            }
        }
        let (world_pos, _) = forward_kinematics(s, &local_rots, &local_trans, root_pos);
        for j in 0..k {
            let p = if j == 0 {
                world_pos[0]
            } else {
                [
                    world_pos[j][0] - world_pos[0][0],
                    world_pos[j][1] - world_pos[0][1],
                    world_pos[j][2] - world_pos[0][2],
                ]
            };
            positions[(t * k + j) * 3..(t * k + j) * 3 + 3].copy_from_slice(&p);
            rot6d[(t * k + j) * 6..(t * k + j) * 6 + 6]
                .copy_from_slice(&rot6d_from_matrix(&local_rots[j]));
        }
    }
    MotionSequence::from_pos_rot(
        &Tensor::new(vec![t_len, k, 3], positions),
        &Tensor::new(vec![t_len, k, 6], rot6d),
        if raw.frame_time > 0.0 { 1.0 / raw.frame_time } else { 0.0 },
        s.species_tag(),
    )
}

/// Linear time-resampling to `target` frames. Positions and 6D rotation
/// blocks are interpolated componentwise (rotations re-orthonormalize on
/// read); velocities are recomputed.
pub fn resample_motion(m: &MotionSequence, target: usize) -> Result<MotionSequence, MotionError> {
    if target < 2 {
        return Err(MotionError::InvalidArgument(
            "resample target must be at least 2 frames".to_string(),
        ));
    }
    let (t_len, k) = (m.frame_count(), m.joint_count());
    let mut positions = vec![0.0; target * k * 3];
    let mut rot = vec![0.0; target * k * 6];
    for t in 0..target {
        let src = t as f64 * (t_len - 1) as f64 / (target - 1) as f64;
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(t_len - 1);
        let w = src - lo as f64;
        for j in 0..k {
            let (plo, phi) = (m.position(lo, j), m.position(hi, j));
            for d in 0..3 {
                positions[(t * k + j) * 3 + d] = plo[d] * (1.0 - w) + phi[d] * w;
            }
            let (rlo, rhi) = (m.rotation6d(lo, j), m.rotation6d(hi, j));
            for d in 0..6 {
                rot[(t * k + j) * 6 + d] = rlo[d] * (1.0 - w) + rhi[d] * w;
            }
        }
    }
    let fps = m.fps() * (target as f64) / (t_len as f64);
    MotionSequence::from_pos_rot(
        &Tensor::new(vec![target, k, 3], positions),
        &Tensor::new(vec![target, k, 6], rot),
        fps,
        m.species_tag(),
    )
}
