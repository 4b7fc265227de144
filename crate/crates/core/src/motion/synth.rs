//! Procedural synthetic corpus: seeded random skeletons per species, each
//! with a species-specific gait signature, animated by a small family of
//! parametric motion templates. Fully deterministic for a fixed seed.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{derive_rng, Tensor};
use crate::skeleton::{default_channels, normalize_skeleton, Joint, SkeletonGraph};

use super::convert::forward_kinematics;
use super::rotation::{axis_rotation, identity, rot6d_from_matrix, yaw_matrix, Mat3};
use super::{Corpus, CorpusEntry, MotionError, MotionSequence, Split, TextRecord};

const FPS: f64 = 20.0;

const SYLLABLES: [&str; 16] = [
    "ka", "lor", "vex", "mun", "tir", "zab", "ren", "oth", "pli", "dra", "sku", "fen", "gri",
    "bor", "yal", "nim",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Template {
    Walk,
    Jump,
    Idle,
    Turn,
}

impl Template {
    const ALL: [Template; 4] = [Template::Walk, Template::Jump, Template::Idle, Template::Turn];

    fn class_name(self) -> &'static str {
        match self {
            Template::Walk => "walk",
            Template::Jump => "jump",
            Template::Idle => "idle",
            Template::Turn => "turn",
        }
    }

    fn phrases(self) -> &'static [&'static str] {
        match self {
            Template::Walk => &[
                "moving forward at a steady pace",
                "striding ahead with even steps",
                "pacing forward with a relaxed rhythm",
                "advancing with a loping gait",
                "trotting forward briskly",
            ],
            Template::Jump => &[
                "leaping forward in repeated hops",
                "springing off the ground with force",
                "bounding ahead with airborne arcs",
                "hopping with compressed take-offs",
            ],
            Template::Idle => &[
                "swaying gently in place",
                "shifting weight while standing still",
                "breathing slowly without moving away",
                "rocking softly on the spot",
            ],
            Template::Turn => &[
                "turning around while stepping slowly",
                "rotating its body through a wide arc",
                "wheeling about to face a new direction",
                "circling in place with small steps",
            ],
        }
    }
}

/// Per-species motion style: which axis each joint swings about, how far,
/// with what phase, and the base cadence. This is what makes gaits
/// species-dependent.
struct GaitSignature {
    base_freq: f64,
    speed: f64,
    bob: f64,
    joint_axis: Vec<usize>,
    joint_amp: Vec<f64>,
    joint_phase: Vec<f64>,
}

impl GaitSignature {
    fn sample(k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            base_freq: rng.gen_range(0.6..2.4),
            speed: rng.gen_range(0.25..0.9),
            bob: rng.gen_range(0.01..0.06),
            joint_axis: (0..k)
                .map(|_| if rng.gen_bool(0.6) { 0 } else if rng.gen_bool(0.5) { 2 } else { 1 })
                .collect(),
            joint_amp: (0..k).map(|_| rng.gen_range(0.15..0.9)).collect(),
            joint_phase: (0..k).map(|_| rng.gen_range(0.0..TAU)).collect(),
        }
    }
}

fn species_name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect()
}

fn random_skeleton(name: &str, k: usize, rng: &mut ChaCha8Rng) -> SkeletonGraph {
    let mut joints = vec![Joint {
        name: format!("{name}_root"),
        parent: None,
        rest_offset: [0.0, 0.0, 0.0],
        channels: default_channels(true),
    }];
    for i in 1..k {
        // Bias toward chains so skeletons read as spines with limbs.
        let parent = if rng.gen_bool(0.55) { i - 1 } else { rng.gen_range(0..i) };
        let dir: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2])
            .sqrt()
            .max(1e-6);
        let len = rng.gen_range(0.3..1.0);
        joints.push(Joint {
            name: format!("{name}_j{i}"),
            parent: Some(parent),
            rest_offset: [
                dir[0] / norm * len,
                dir[1] / norm * len,
                dir[2] / norm * len,
            ],
            channels: default_channels(false),
        });
    }
    let raw = SkeletonGraph::new(name, name, joints).expect("generated skeleton is valid");
    let (normalized, _) = normalize_skeleton(&raw).expect("generated skeleton has bones");
    normalized
}

/// Generate a deterministic synthetic corpus.
///
/// Each species gets a seeded random tree skeleton and a gait signature;
/// each sequence instantiates one of the motion templates with jittered
/// amplitude and frequency. All clips come out aligned (root at origin,
/// frame-0 heading +Z) with consistent velocities. The default split is
/// 0.95/0.05, stratified by species.
pub fn synth_corpus(
    seed: u64,
    n_species: usize,
    seqs_per_species: usize,
    joint_range: (usize, usize),
) -> Result<Corpus, MotionError> {
    if n_species < 2 {
        return Err(MotionError::InvalidArgument(format!(
            "n_species must be at least 2, got {n_species}"
        )));
    }
    if joint_range.0 < 3 || joint_range.1 > 64 || joint_range.0 > joint_range.1 {
        return Err(MotionError::InvalidArgument(format!(
            "joint_range must lie within [3, 64], got {joint_range:?}"
        )));
    }
    if seqs_per_species == 0 {
        return Err(MotionError::InvalidArgument(
            "seqs_per_species must be positive".to_string(),
        ));
    }

    let mut corpus = Corpus::default();
    for sp in 0..n_species {
        let mut sp_rng = derive_rng(seed, &format!("species.{sp}"));
        let name = species_name(&mut sp_rng);
        let k = sp_rng.gen_range(joint_range.0..=joint_range.1);
        let skeleton = Arc::new(random_skeleton(&name, k, &mut sp_rng));
        let gait = GaitSignature::sample(k, &mut sp_rng);

        for sq in 0..seqs_per_species {
            let mut rng = derive_rng(seed, &format!("species.{sp}.seq.{sq}"));
            let template = Template::ALL[sq % Template::ALL.len()];
            let motion = render_template(&skeleton, &gait, template, &mut rng)?;
            let phrase_bank = template.phrases();
            let detail = phrase_bank[rng.gen_range(0..phrase_bank.len())].to_string();
            let text = TextRecord {
                summary: format!("a {name} {}", template.class_name()),
                detail,
                motion_class: template.class_name().to_string(),
                species_tag: name.clone(),
            };
            corpus.entries.push(CorpusEntry {
                skeleton: Arc::clone(&skeleton),
                motion,
                text,
                split: Split::Train,
            });
        }
    }
    corpus.assign_splits(0.05, seed);
    Ok(corpus)
}

fn render_template(
    s: &SkeletonGraph,
    gait: &GaitSignature,
    template: Template,
    rng: &mut ChaCha8Rng,
) -> Result<MotionSequence, MotionError> {
    let k = s.joint_count();
    let t_len = rng.gen_range(24..=60);
    let amp_mult = rng.gen_range(0.8..1.2);
    let freq_mult = rng.gen_range(0.85..1.15);
    let omega = TAU * gait.base_freq * freq_mult / FPS;

    let mut positions = vec![0.0; t_len * k * 3];
    let mut rot6d = vec![0.0; t_len * k * 6];

    // Turn template integrates the root along its rotating heading.
    let turn_total = rng.gen_range(1.6..3.1); // radians over the clip
    let mut turn_pos = [0.0f64; 3];

    for t in 0..t_len {
        let tf = t as f64;
        let mut local_rots: Vec<Mat3> = vec![identity(); k];
        let root_pos;
        match template {
            Template::Walk => {
                root_pos = [
                    0.0,
                    gait.bob * (1.0 - (2.0 * omega * tf).cos()) / 2.0,
                    gait.speed * tf / FPS,
                ];
                for j in 1..k {
                    let angle =
                        gait.joint_amp[j] * amp_mult * (omega * tf + gait.joint_phase[j]).sin();
                    local_rots[j] = axis_rotation(gait.joint_axis[j], angle);
                }
            }
            Template::Jump => {
                let hop = (tf * gait.base_freq * freq_mult / FPS).fract();
                let h = 0.25 * amp_mult;
                root_pos = [0.0, 4.0 * h * hop * (1.0 - hop), 0.6 * gait.speed * tf / FPS];
                for j in 1..k {
                    let angle = gait.joint_amp[j] * amp_mult * (TAU * hop + gait.joint_phase[j]).sin();
                    local_rots[j] = axis_rotation(gait.joint_axis[j], angle);
                }
            }
            Template::Idle => {
                root_pos = [0.0, gait.bob * 0.5 * (1.0 - (0.5 * omega * tf).cos()), 0.0];
                for j in 1..k {
                    let angle = 0.3
                        * gait.joint_amp[j]
                        * amp_mult
                        * (0.5 * omega * tf + gait.joint_phase[j]).sin();
                    local_rots[j] = axis_rotation(gait.joint_axis[j], angle);
                }
            }
            Template::Turn => {
                let yaw = turn_total * tf / t_len as f64;
                local_rots[0] = yaw_matrix(yaw);
                root_pos = turn_pos;
                // Step along the current heading for the next frame.
                let step = 0.5 * gait.speed / FPS;
                turn_pos[0] += yaw.sin() * step;
                turn_pos[2] += yaw.cos() * step;
                for j in 1..k {
                    let angle = 0.7
                        * gait.joint_amp[j]
                        * amp_mult
                        * (omega * tf + gait.joint_phase[j]).sin();
                    local_rots[j] = axis_rotation(gait.joint_axis[j], angle);
                }
            }
        }
        let local_trans = vec![[0.0; 3]; k];
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
        FPS,
        s.species_tag(),
    )
}
