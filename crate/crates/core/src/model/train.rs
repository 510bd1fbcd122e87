use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::masking::{mask_batch, mix};
use super::{Adam, Checkpoint, Encoder, MaskedSequence, MaskingPolicy, ModelConfig, ModelError, Weights};
use crate::corpus::{Chunk, CorpusSplit, CLS_ID, SEP_ID};

/// Salt for the fixed masks used when measuring loss without training.
const EVAL_SALT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            checkpoint_every: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            warmup_fraction: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<EpochLog>,
    /// Epoch at which a non-finite loss stopped training.
    pub diverged_at: Option<usize>,
}

/// Wraps chunk tokens in `[CLS] ... [SEP]`.
pub fn frame(chunk: &Chunk) -> Vec<u32> {
    let mut ids = Vec::with_capacity(chunk.len() + 2);
    ids.push(CLS_ID);
    ids.extend_from_slice(&chunk.token_ids);
    ids.push(SEP_ID);
    ids
}

/// The epoch-0 checkpoint: freshly initialized weights, losses unset.
pub fn init_model(config: &ModelConfig) -> Result<Checkpoint, ModelError> {
    config.validate()?;
    Ok(Checkpoint {
        epoch: 0,
        config: *config,
        weights: Weights::init(config),
        train_loss: f64::NAN,
        val_loss: f64::NAN,
    })
}

fn batch_loss(
    config: &ModelConfig,
    weights: &Weights,
    masked: &[MaskedSequence],
    with_grad: bool,
) -> Result<(f64, usize, Option<Weights>), ModelError> {
    let count: usize = masked.iter().map(|m| m.positions.len()).sum();
    if count == 0 {
        return Ok((0.0, 0, None));
    }
    let norm = count as f64;
    let encoder = Encoder::new(config, weights);
    let parts: Vec<Result<(f64, Option<Weights>), ModelError>> = masked
        .par_iter()
        .map(|m| {
            let targets = m.target_pairs();
            if with_grad {
                let mut g = Weights::zeros(config);
                let loss = encoder.loss_and_grad(&m.input_ids, &targets, norm, &mut g)?;
                Ok((loss, Some(g)))
            } else {
                Ok((encoder.loss(&m.input_ids, &targets)?, None))
            }
        })
        .collect();
    // Reduce in sequence order so the sum does not depend on scheduling.
    let mut total = 0.0;
    let mut grads: Option<Weights> = None;
    for part in parts {
        let (loss, g) = part?;
        total += loss;
        if let Some(g) = g {
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    Ok((total, count, grads))
}

/// Mean masked-token cross-entropy over `sequences` with masks that depend
/// only on the policy seed, so repeated evaluations agree exactly.
pub fn evaluate_loss(
    config: &ModelConfig,
    weights: &Weights,
    sequences: &[Vec<u32>],
    policy: &MaskingPolicy,
) -> Result<f64, ModelError> {
    let masked = mask_batch(sequences, policy, config.vocab_size, EVAL_SALT);
    let (total, count, _) = batch_loss(config, weights, &masked, false)?;
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Trains from scratch with the masked-language-model objective.
///
/// Emits an epoch-0 checkpoint before any update, then one every
/// `checkpoint_every` epochs and always after the last. `on_checkpoint`
/// sees each checkpoint as soon as it exists. A non-finite batch loss stops
/// training; the checkpoints gathered so far are kept.
pub fn train<E>(
    split: &CorpusSplit,
    config: &ModelConfig,
    policy: &MaskingPolicy,
    options: &TrainOptions,
    mut on_checkpoint: impl FnMut(&Checkpoint, &EpochLog) -> Result<(), E>,
) -> Result<TrainRun, E>
where
    E: From<ModelError>,
{
    policy.validate()?;
    let train_seqs: Vec<Vec<u32>> = split.train.iter().map(frame).collect();
    let val_seqs: Vec<Vec<u32>> = split.validation.iter().map(frame).collect();
    if train_seqs.is_empty() {
        return Err(ModelError::NoTrainingData.into());
    }
    for s in train_seqs.iter().chain(&val_seqs) {
        if s.len() > config.max_len {
            return Err(ModelError::SequenceTooLong { len: s.len(), max_len: config.max_len }.into());
        }
    }
    let mut checkpoint = init_model(config)?;
    let eval_val = |w: &Weights| -> Result<f64, ModelError> {
        if val_seqs.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate_loss(config, w, &val_seqs, policy)
        }
    };
    checkpoint.train_loss = evaluate_loss(config, &checkpoint.weights, &train_seqs, policy)?;
    checkpoint.val_loss = eval_val(&checkpoint.weights)?;
    let entry = EpochLog { epoch: 0, train_loss: checkpoint.train_loss, val_loss: checkpoint.val_loss };
    on_checkpoint(&checkpoint, &entry)?;
    let mut run = TrainRun { checkpoints: vec![checkpoint.clone()], log: vec![entry], diverged_at: None };

    let batch_size = options.batch_size.max(1);
    let steps_per_epoch = train_seqs.len().div_ceil(batch_size);
    let total_steps = steps_per_epoch * options.epochs;
    let warmup = ((total_steps as f64) * options.warmup_fraction).ceil() as usize;
    let mut opt = Adam::new(config, options.learning_rate, warmup);
    let mut weights = checkpoint.weights;
    let cadence = options.checkpoint_every.max(1);

    for epoch in 1..=options.epochs {
        let mut order: Vec<usize> = (0..train_seqs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(options.seed, epoch as u64, 0)));
        let mut epoch_total = 0.0;
        let mut epoch_count = 0usize;
        for batch_idx in order.chunks(batch_size) {
            let masked: Vec<MaskedSequence> = batch_idx
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(policy.seed, epoch as u64, i as u64));
                    super::mask_sequence(&train_seqs[i], policy, config.vocab_size, &mut rng)
                })
                .collect();
            let (total, count, grads) = batch_loss(config, &weights, &masked, true)?;
            if !total.is_finite() {
                log::error!("non-finite training loss in epoch {epoch}; stopping");
                run.diverged_at = Some(epoch);
                return Ok(run);
            }
            epoch_total += total;
            epoch_count += count;
            if let Some(g) = grads {
                opt.step(&mut weights, &g);
            }
        }
        let train_loss = if epoch_count == 0 { f64::NAN } else { epoch_total / epoch_count as f64 };
        let val_loss = eval_val(&weights)?;
        let entry = EpochLog { epoch, train_loss, val_loss };
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        run.log.push(entry);
        if epoch % cadence == 0 || epoch == options.epochs {
            let ckpt = Checkpoint { epoch, config: *config, weights: weights.clone(), train_loss, val_loss };
            on_checkpoint(&ckpt, &entry)?;
            run.checkpoints.push(ckpt);
        }
    }
    Ok(run)
}
