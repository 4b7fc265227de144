//! Encoder, decoder and the Eq.-style training loss of the residual VQ-VAE.
//!
//! The encoder embeds each valid joint with a learned joint-index embedding,
//! pools joints under the validity mask (padded joints never enter the
//! graph, so padding invariance is exact), then runs a strided temporal conv
//! stack down to the latent sequence. The decoder mirrors it with a
//! transposed conv and per-joint feature heads. Training goes through the
//! straight-through estimator; codebooks are EMA-trained, not
//! gradient-trained.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::motion::{MotionSequence, FEATURES_PER_JOINT};
use crate::numerics::{derive_rng, Params, Tape, Tensor, Var};
use crate::skeleton::{JointMask, SkeletonGraph};

use super::codebook::{CodebookStack, QuantizeOutput};
use super::{RvqConfig, RvqError, TokenSequences, MAX_JOINTS};

const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RvqModel {
    pub config: RvqConfig,
    pub params: Params,
    pub codebooks: CodebookStack,
}

impl RvqModel {
    pub fn init(config: &RvqConfig, seed: u64) -> Self {
        config.validate().expect("valid RvqConfig");
        let mut rng = derive_rng(seed, "rvq.init");
        let h = config.hidden();
        let (d, de, dz) = (FEATURES_PER_JOINT, config.joint_embed_dim, config.code_dim);
        let mut params = Params::new();
        let mut lin = |p: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            p.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
            p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        };
        params.insert("enc.joint_embed", Tensor::randn(&[MAX_JOINTS, de], 0.1, &mut rng));
        lin(&mut params, "enc.in", d + de, h, &mut rng);
        conv_init(&mut params, "enc.conv1", h, h, 3, &mut rng);
        conv_init(&mut params, "enc.conv2", h, h, 3, &mut rng);
        conv_init(&mut params, "enc.conv3", dz, h, 3, &mut rng);
        // Transposed conv weights are (Cin, Cout, k).
        let std = (2.0 / (dz * 4 + h * 4) as f64).sqrt();
        params.insert("dec.tconv.w", Tensor::randn(&[dz, h, 4], std, &mut rng));
        params.insert("dec.tconv.b", Tensor::zeros(&[h]));
        conv_init(&mut params, "dec.conv", h, h, 3, &mut rng);
        params.insert("dec.joint_embed", Tensor::randn(&[MAX_JOINTS, de], 0.1, &mut rng));
        lin(&mut params, "dec.head1", h + de, h, &mut rng);
        lin(&mut params, "dec.head2", h, d, &mut rng);

        let codebooks = CodebookStack::init(config, &mut rng);
        Self {
            config: config.clone(),
            params,
            codebooks,
        }
    }

    /// Encoder forward on a tape. `x` is (T, J_max, d); only joints valid
    /// under `mask` enter the computation.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &BTreeMap<String, Var>,
        x: &Tensor,
        mask: &JointMask,
    ) -> Result<Var, RvqError> {
        let (t_len, j_max, feat) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        debug_assert_eq!(feat, FEATURES_PER_JOINT);
        debug_assert_eq!(j_max, mask.len(), "mask width");
        if t_len < self.config.temporal_downsample {
            return Err(RvqError::InputTooShort {
                frames: t_len,
                downsample: self.config.temporal_downsample,
            });
        }
        let valid: Vec<usize> = mask.valid_indices().collect();
        let mut per_joint = Vec::with_capacity(valid.len());
        for &j in &valid {
            let xj = tape.constant(joint_slice(x, j));
            let e = tape.gather_rows(leaves["enc.joint_embed"], &[j]);
            let e_t = tape.tile_rows(e, t_len);
            let cat = tape.concat_cols(&[xj, e_t]);
            let h = tape.matmul(cat, leaves["enc.in.w"]);
            let h = tape.add_row(h, leaves["enc.in.b"]);
            per_joint.push(tape.gelu(h));
        }
        let coeff = 1.0 / valid.len() as f64;
        let pooled = tape.linear_combine(&per_joint, &vec![coeff; per_joint.len()]);
        let c1 = tape.conv1d(pooled, leaves["enc.conv1.w"], leaves["enc.conv1.b"], 1, 1);
        let c1 = tape.gelu(c1);
        let c2 = tape.conv1d(c1, leaves["enc.conv2.w"], leaves["enc.conv2.b"], self.config.temporal_downsample, 1);
        let c2 = tape.gelu(c2);
        Ok(tape.conv1d(c2, leaves["enc.conv3.w"], leaves["enc.conv3.b"], 1, 1))
    }

    /// Decoder forward on a tape: per valid joint, an upsampled feature
    /// head. Returns (joint index, (T_out, d) node) pairs.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &BTreeMap<String, Var>,
        dec_in: Var,
        mask: &JointMask,
    ) -> Vec<(usize, Var)> {
        let n = tape.value(dec_in).shape()[0];
        let u = tape.conv1d_transpose(
            dec_in,
            leaves["dec.tconv.w"],
            leaves["dec.tconv.b"],
            self.config.temporal_downsample,
            1,
        );
        let u = tape.gelu(u);
        let u = tape.conv1d(u, leaves["dec.conv.w"], leaves["dec.conv.b"], 1, 1);
        let u = tape.gelu(u);
        let t_out = n * self.config.temporal_downsample;
        debug_assert_eq!(tape.value(u).shape()[0], t_out);
        let mut outs = Vec::new();
        for j in mask.valid_indices() {
            let e = tape.gather_rows(leaves["dec.joint_embed"], &[j]);
            let e_t = tape.tile_rows(e, t_out);
            let cat = tape.concat_cols(&[u, e_t]);
            let h = tape.matmul(cat, leaves["dec.head1.w"]);
            let h = tape.add_row(h, leaves["dec.head1.b"]);
            let h = tape.gelu(h);
            let o = tape.matmul(h, leaves["dec.head2.w"]);
            let o = tape.add_row(o, leaves["dec.head2.b"]);
            outs.push((j, o));
        }
        outs
    }

    /// Full training forward: encode, quantize (or reuse a frozen
    /// quantization for gradient checking), straight-through decode, and the
    /// masked reconstruction + commitment loss.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        leaves: &BTreeMap<String, Var>,
        x: &Tensor,
        mask: &JointMask,
        frozen: Option<&QuantizeOutput>,
    ) -> Result<(Var, QuantizeOutput), RvqError> {
        let t_len = x.shape()[0];
        let z = self.encode_on_tape(tape, leaves, x, mask)?;
        let quant = match frozen {
            Some(q) => q.clone(),
            None => self.codebooks.quantize(tape.value(z)),
        };
        // Straight-through surrogate: dec_in = z + sg(z_hat - z_base). The
        // shift is a constant of the quantization, so backprop sends decoder
        // gradients straight into z, and finite differences of this same
        // surrogate (with the quantization frozen) agree with it.
        let shift = tape.constant(quant.z_hat.sub(&quant.residuals[0]).expect("latent shapes"));
        let dec_in = tape.add(z, shift);
        let outs = self.decode_on_tape(tape, leaves, dec_in, mask);

        // Masked L1 reconstruction over the original T frames.
        let mut recon_terms = Vec::with_capacity(outs.len());
        for (j, out) in &outs {
            let trunc = tape.slice_rows(*out, 0, t_len);
            let target = tape.constant(joint_slice(x, *j));
            let diff = tape.sub(trunc, target);
            let a = tape.abs(diff);
            recon_terms.push(tape.sum_all(a));
        }
        let recon_sum = tape.linear_combine(&recon_terms, &vec![1.0; recon_terms.len()]);
        let recon_denom = (t_len * mask.valid_count()) as f64 + EPS;
        let recon = tape.scale(recon_sum, 1.0 / recon_denom);

        // Commitment: residual entering each level vs its stop-gradient
        // quantization. Latent positions are all valid, so the mask
        // normalizer reduces to n.
        let n = quant.z_hat.rows() as f64;
        let mut commit_terms = Vec::with_capacity(self.config.levels);
        let mut live = z;
        for q in &quant.quantized {
            let q_const = tape.constant(q.clone());
            let diff = tape.sub(live, q_const);
            let sq = tape.square(diff);
            commit_terms.push(tape.sum_all(sq));
            live = tape.sub(live, q_const);
        }
        let commit_sum = tape.linear_combine(&commit_terms, &vec![1.0; commit_terms.len()]);
        let commit = tape.scale(commit_sum, self.config.beta / (n + EPS));

        Ok((tape.add(recon, commit), quant))
    }

    /// Pure encode: the masked latent sequence, (n, d_z).
    pub fn encode(&self, x: &Tensor, mask: &JointMask) -> Result<Tensor, RvqError> {
        let mut tape = Tape::new();
        let leaves = self.params.constants(&mut tape);
        let z = self.encode_on_tape(&mut tape, &leaves, x, mask)?;
        Ok(tape.value(z).clone())
    }

    /// Pure decode to (T_out, J_max, d); padded joints are exactly zero.
    pub fn decode(&self, z_hat: &Tensor, mask: &JointMask) -> Result<Tensor, RvqError> {
        let mut tape = Tape::new();
        let leaves = self.params.constants(&mut tape);
        let dec_in = tape.constant(z_hat.clone());
        let outs = self.decode_on_tape(&mut tape, &leaves, dec_in, mask);
        let t_out = z_hat.rows() * self.config.temporal_downsample;
        let j_max = mask.len();
        let mut data = vec![0.0; t_out * j_max * FEATURES_PER_JOINT];
        for (j, var) in outs {
            let v = tape.value(var);
            for t in 0..t_out {
                for f in 0..FEATURES_PER_JOINT {
                    data[(t * j_max + j) * FEATURES_PER_JOINT + f] = v.get2(t, f);
                }
            }
        }
        Ok(Tensor::new(vec![t_out, j_max, FEATURES_PER_JOINT], data))
    }

    pub fn quantize(&self, z: &Tensor) -> QuantizeOutput {
        self.codebooks.quantize(z)
    }

    /// Motion to discrete token stack.
    pub fn tokenize(
        &self,
        motion: &MotionSequence,
        skeleton: &SkeletonGraph,
    ) -> Result<TokenSequences, RvqError> {
        if motion.joint_count() != skeleton.joint_count() {
            return Err(RvqError::Motion(crate::motion::MotionError::Skeleton(
                crate::skeleton::SkeletonError::JointCountMismatch {
                    skeleton: skeleton.joint_count(),
                    motion: motion.joint_count(),
                },
            )));
        }
        let mask = JointMask::all_valid(motion.joint_count());
        let z = self.encode(motion.frames(), &mask)?;
        Ok(self.codebooks.quantize(&z).tokens)
    }

    /// Token stack back to motion: codebook lookup sum, decode, repackage.
    /// The result has `n * downsample` frames; callers truncate to the
    /// original length when they know it.
    pub fn detokenize(
        &self,
        tokens: &TokenSequences,
        skeleton: &SkeletonGraph,
        fps: f64,
    ) -> Result<MotionSequence, RvqError> {
        let z_hat = self.codebooks.lookup_sum(tokens)?;
        let mask = JointMask::all_valid(skeleton.joint_count());
        let frames = self.decode(&z_hat, &mask)?;
        Ok(MotionSequence::new(frames, fps, skeleton.species_tag())?)
    }
}

fn conv_init(params: &mut Params, name: &str, c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) {
    let std = (2.0 / ((c_in + c_out) * k) as f64).sqrt();
    params.insert(format!("{name}.w"), Tensor::randn(&[c_out, c_in, k], std, rng));
    params.insert(format!("{name}.b"), Tensor::zeros(&[c_out]));
}

/// Column slice of a (T, J_max, d) tensor for one joint: (T, d).
fn joint_slice(x: &Tensor, j: usize) -> Tensor {
    let (t_len, j_max, feat) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut data = Vec::with_capacity(t_len * feat);
    for t in 0..t_len {
        let base = (t * j_max + j) * feat;
        data.extend_from_slice(&x.data()[base..base + feat]);
    }
    Tensor::new(vec![t_len, feat], data)
}

/// The masked training objective as a pure function: L1 reconstruction over
/// valid joints plus beta-weighted L2 commitment per residual level, both
/// normalized by valid-position counts (+1e-8).
///
/// `residuals[l]` is the residual entering level l; `quantized[l]` is its
/// stop-gradient quantization. A trailing final residual in `residuals` is
/// ignored.
pub fn rvq_loss(
    x_tilde: &Tensor,
    x_hat: &Tensor,
    mask: &JointMask,
    residuals: &[Tensor],
    quantized: &[Tensor],
    beta: f64,
) -> Result<f64, RvqError> {
    if x_tilde.shape() != x_hat.shape() {
        return Err(RvqError::Numerics(crate::numerics::NumericsError::ShapeMismatch {
            op: "rvq_loss",
            lhs: x_tilde.shape().to_vec(),
            rhs: x_hat.shape().to_vec(),
        }));
    }
    let (t_len, _j_max, feat) = (x_tilde.shape()[0], x_tilde.shape()[1], x_tilde.shape()[2]);
    debug_assert_eq!(feat, FEATURES_PER_JOINT);
    let mut recon = 0.0;
    for t in 0..t_len {
        for j in mask.valid_indices() {
            for f in 0..feat {
                recon += (x_tilde.get3(t, j, f) - x_hat.get3(t, j, f)).abs();
            }
        }
    }
    recon /= (t_len * mask.valid_count()) as f64 + EPS;

    let mut commit = 0.0;
    for (level, q) in quantized.iter().enumerate() {
        let r = &residuals[level];
        let n = r.rows() as f64;
        let term: f64 = r
            .data()
            .iter()
            .zip(q.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        commit += term / (n + EPS);
    }
    Ok(recon + beta * commit)
}
