//! Stage-1 training loop: AdamW on the encoder/decoder, EMA codebook
//! updates with dead-code reseeding, deterministic per seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::motion::Corpus;
use crate::numerics::{derive_rng, AdamW, AdamWConfig, Tape, Tensor};
use crate::skeleton::JointMask;

use super::{RvqConfig, RvqError, RvqModel};

#[derive(Debug, Clone)]
pub struct RvqTrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
    /// Residual samples kept per level for dead-code reseeding.
    pub reservoir_cap: usize,
}

impl Default for RvqTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            seed: 0,
            batch_size: 16,
            lr: 1e-3,
            ema_decay: 0.99,
            reservoir_cap: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRvq {
    pub model: RvqModel,
    /// Mean loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Mean loss over the first and last quarters of the history; a sane run
/// trends downward.
pub fn loss_trend_decreasing(history: &[f64]) -> bool {
    if history.len() < 4 {
        return true;
    }
    let q = history.len() / 4;
    let head: f64 = history[..q].iter().sum::<f64>() / q as f64;
    let tail: f64 = history[history.len() - q..].iter().sum::<f64>() / q as f64;
    tail < head
}

pub fn train_rvq(
    corpus: &Corpus,
    config: &RvqConfig,
    opts: &RvqTrainOptions,
) -> Result<TrainedRvq, RvqError> {
    config.validate()?;
    let train_idx: Vec<usize> = corpus
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == crate::motion::Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() {
        return Err(RvqError::EmptyCorpus);
    }

    let mut model = RvqModel::init(config, opts.seed);
    let mut opt = AdamW::new(AdamWConfig {
        lr: opts.lr,
        ..Default::default()
    });
    let mut history = Vec::with_capacity(opts.epochs);
    let batch_size = opts.batch_size.max(1);

    for epoch in 0..opts.epochs {
        let mut rng = derive_rng(opts.seed, &format!("rvq.epoch.{epoch}"));
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);

        let mut reservoir: Vec<Vec<Vec<f64>>> = vec![Vec::new(); config.levels];
        let mut seen_per_level = vec![0usize; config.levels];
        let mut epoch_loss = 0.0;

        for batch in order.chunks(batch_size) {
            let mut grad_acc: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut assigned: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); config.levels];
            for &i in batch {
                let entry = &corpus.entries[i];
                let mask = JointMask::all_valid(entry.motion.joint_count());
                let mut tape = Tape::new();
                let leaves = model.params.leaves(&mut tape);
                let (loss, quant) =
                    model.forward_loss(&mut tape, &leaves, entry.motion.frames(), &mask, None)?;
                let loss_v = tape.value(loss).scalar_value();
                if !loss_v.is_finite() {
                    return Err(RvqError::Diverged {
                        epoch,
                        loss: loss_v,
                    });
                }
                epoch_loss += loss_v;
                let grads = tape.backward(loss);
                for (name, var) in &leaves {
                    let g = grads.get_or_zeros(*var, model.params.get(name).shape());
                    grad_acc
                        .entry(name.clone())
                        .and_modify(|acc| *acc = acc.add(&g).expect("grad shapes"))
                        .or_insert(g);
                }
                // Collect assignments for the EMA update and reservoir.
                let n = quant.z_hat.rows();
                for level in 0..config.levels {
                    for row in 0..n {
                        let vec = quant.residuals[level].row(row).to_vec();
                        assigned[level].push((quant.tokens.levels[level][row], vec.clone()));
                        seen_per_level[level] += 1;
                        if reservoir[level].len() < opts.reservoir_cap {
                            reservoir[level].push(vec);
                        } else {
                            let k = rng.gen_range(0..seen_per_level[level]);
                            if k < opts.reservoir_cap {
                                reservoir[level][k] = vec;
                            }
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.values_mut() {
                *g = g.scale(scale);
            }
            opt.step(&mut model.params, &grad_acc);
            model.codebooks.ema_update(&assigned, opts.ema_decay);
        }

        history.push(epoch_loss / order.len() as f64);
        let mut reseed_rng = derive_rng(opts.seed, &format!("rvq.reseed.{epoch}"));
        model.codebooks.reseed_dead_codes(&reservoir, &mut reseed_rng);
    }

    Ok(TrainedRvq {
        model,
        loss_history: history,
    })
}

/// Mean absolute reconstruction error per feature entry over valid joints,
/// averaged across the given entries.
pub fn reconstruction_l1_per_feature(
    model: &RvqModel,
    corpus: &Corpus,
    split: Option<crate::motion::Split>,
) -> Result<f64, RvqError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for entry in &corpus.entries {
        if let Some(s) = split {
            if entry.split != s {
                continue;
            }
        }
        let mask = JointMask::all_valid(entry.motion.joint_count());
        let x = entry.motion.frames();
        let z = model.encode(x, &mask)?;
        let quant = model.quantize(&z);
        let decoded = model.decode(&quant.z_hat, &mask)?;
        let t_len = x.shape()[0];
        for t in 0..t_len {
            for j in 0..mask.valid_count() {
                for f in 0..crate::motion::FEATURES_PER_JOINT {
                    total += (x.get3(t, j, f) - decoded.get3(t, j, f)).abs();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(RvqError::EmptyCorpus);
    }
    Ok(total / count as f64)
}
