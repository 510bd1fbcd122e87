use biasprobe::corpus::{self, Chunk, CorpusSplit, Document, VocabParams};
use biasprobe::model::{
    self, evaluate_loss, forward_hidden_states, frame, init_model, mask_batch, mlm_loss,
    mlm_loss_and_grad, Checkpoint, MaskingPolicy, ModelConfig, ModelError, TrainOptions, Weights,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig { num_layers: 2, hidden_dim: 16, num_heads: 4, ffn_dim: 32, max_len: 12, vocab_size, seed: 17 }
}

/// Central differences on randomly chosen parameters of every tensor.
#[test]
fn analytic_gradient_matches_finite_differences() {
    let config = tiny_config(23);
    let mut weights = Weights::init(&config);
    // Move away from the symmetric initialization so every path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in weights.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let ids = vec![2, 7, 9, 4, 11, 15, 22, 6, 3];
    let targets = vec![(1, 7u32), (3, 12), (6, 22), (7, 5)];
    let (_, grads) = mlm_loss_and_grad(&config, &weights, &ids, &targets).unwrap();
    let analytic = grads.flat();

    let base = weights.flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    let sizes: Vec<usize> = weights.tensors().iter().map(|t| t.len()).collect();
    let mut probe = weights.clone();
    for size in sizes {
        for _ in 0..6 {
            let i = offset + rng.random_range(0..size);
            let mut plus = base.clone();
            plus[i] += h;
            probe.load_flat(&plus);
            let lp = mlm_loss(&config, &probe, &ids, &targets).unwrap();
            let mut minus = base.clone();
            minus[i] -= h;
            probe.load_flat(&minus);
            let lm = mlm_loss(&config, &probe, &ids, &targets).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            // Rounding noise of the difference quotient is ~1e-10; below that both are zero.
            let rel = if (a - numeric).abs() < 1e-9 { 0.0 } else { (a - numeric).abs() / a.abs().max(numeric.abs()) };
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "param {i}: analytic {a} numeric {numeric} rel {rel}");
        }
        offset += size;
    }
    println!("worst relative gradient error {worst:.3e}");
}

#[test]
fn initial_loss_near_uniform() {
    let config = ModelConfig { max_len: 40, ..ModelConfig::desk(300) };
    let weights = Weights::init(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs: Vec<Vec<u32>> = (0..40)
        .map(|_| {
            let mut s = vec![2u32];
            s.extend((0..30).map(|_| rng.random_range(5..300u32)));
            s.push(3);
            s
        })
        .collect();
    let loss = evaluate_loss(&config, &weights, &seqs, &MaskingPolicy::default()).unwrap();
    let uniform = (300f64).ln();
    assert!((loss - uniform).abs() / uniform < 0.10, "loss {loss} vs ln V {uniform}");
}

#[test]
fn same_seed_same_parameters() {
    let config = ModelConfig::desk(100);
    let a = init_model(&config).unwrap();
    let b = init_model(&config).unwrap();
    assert_eq!(a.parameter_checksum(), b.parameter_checksum());
    assert!(init_model(&ModelConfig::desk(4)).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let config = tiny_config(30);
    let ckpt = init_model(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(Checkpoint::file_name(0));
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let ids = [2, 8, 9, 10, 3];
    let a = forward_hidden_states(&ckpt, &ids).unwrap();
    let b = forward_hidden_states(&loaded, &ids).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn hidden_states_are_deterministic_and_bounded() {
    let ckpt = init_model(&tiny_config(30)).unwrap();
    let ids = [2, 8, 9, 10, 3];
    assert_eq!(forward_hidden_states(&ckpt, &ids).unwrap(), forward_hidden_states(&ckpt, &ids).unwrap());
    let long = vec![8u32; 13];
    assert!(matches!(forward_hidden_states(&ckpt, &long), Err(ModelError::SequenceTooLong { .. })));
}

#[test]
fn masking_rate_matches_binomial() {
    // 1000 ordinary tokens at rate 0.15: mean 150, sd ~11.3
    let policy = MaskingPolicy { seed: 21, ..Default::default() };
    let batch: Vec<Vec<u32>> = (0..10).map(|i| (0..100).map(|j| 5 + ((i * 100 + j) % 50) as u32).collect()).collect();
    let masked = mask_batch(&batch, &policy, 55, 0);
    let selected: usize = masked.iter().map(|m| m.positions.len()).sum();
    assert!((selected as f64 - 150.0).abs() <= 3.0 * (1000.0f64 * 0.15 * 0.85).sqrt(), "{selected}");
    let mut mask = 0;
    let mut kept = 0;
    for (m, orig) in masked.iter().zip(&batch) {
        for &p in &m.positions {
            if m.input_ids[p] == corpus::MASK_ID {
                mask += 1;
            } else if m.input_ids[p] == orig[p] {
                kept += 1;
            }
        }
    }
    let n = selected as f64;
    // "kept" also absorbs random replacements that drew the original token (p = 1/50).
    let sd = |p: f64| 3.0 * (n * p * (1.0 - p)).sqrt();
    assert!((mask as f64 - 0.8 * n).abs() <= sd(0.8), "mask {mask} of {selected}");
    let keep_p = 0.1 + 0.1 / 50.0;
    assert!((kept as f64 - keep_p * n).abs() <= sd(keep_p), "kept {kept} of {selected}");
}

fn learnable_split() -> CorpusSplit {
    let text = "de man is een kapper en hij is blij . de vrouw is een kapster en zij is blij . ".repeat(4);
    let docs: Vec<Document> = (0..30).map(|i| Document::new(format!("d{i:02}"), text.clone()).unwrap()).collect();
    let tok = corpus::build_vocab(&docs, &VocabParams::default()).unwrap();
    let mut chunks: Vec<Chunk> = Vec::new();
    for d in &docs {
        let enc = tok.tokenize(&d.text);
        chunks.extend(corpus::chunk(&d.id, &enc.ids, 30, 10).unwrap());
    }
    corpus::split(chunks, [0.8, 0.1, 0.1], 1).unwrap()
}

#[test]
fn training_reduces_loss_and_checkpoints_reload() {
    let split = learnable_split();
    let vocab_size = split.train.iter().flat_map(|c| c.token_ids.iter()).max().copied().unwrap() as usize + 1;
    let config = ModelConfig { num_layers: 1, hidden_dim: 32, num_heads: 4, ffn_dim: 64, max_len: 32, vocab_size, seed: 3 };
    let options = TrainOptions { epochs: 10, batch_size: 8, learning_rate: 3e-3, ..Default::default() };
    let policy = MaskingPolicy::default();
    let mut seen = Vec::new();
    let run = model::train::<ModelError>(&split, &config, &policy, &options, |c, _| {
        seen.push(c.epoch);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, (0..=10).collect::<Vec<_>>());
    assert!(run.diverged_at.is_none());
    let first = run.log[1].train_loss;
    let last = run.log[10].train_loss;
    assert!(last < first, "train loss {first} -> {last}");

    let final_ckpt = run.checkpoints.last().unwrap();
    let bytes = final_ckpt.to_bytes().unwrap();
    let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
    let val: Vec<Vec<u32>> = split.validation.iter().map(frame).collect();
    let again = evaluate_loss(&reloaded.config, &reloaded.weights, &val, &policy).unwrap();
    assert_eq!(again.to_bits(), final_ckpt.val_loss.to_bits());
}

#[test]
fn checkpoint_cadence_includes_first_and_last() {
    let split = learnable_split();
    let vocab_size = split.train.iter().flat_map(|c| c.token_ids.iter()).max().copied().unwrap() as usize + 1;
    let config = ModelConfig { num_layers: 1, hidden_dim: 8, num_heads: 2, ffn_dim: 8, max_len: 32, vocab_size, seed: 3 };
    let options = TrainOptions { epochs: 5, checkpoint_every: 2, ..Default::default() };
    let run = model::train::<ModelError>(&split, &config, &MaskingPolicy::default(), &options, |_, _| Ok(())).unwrap();
    let epochs: Vec<usize> = run.checkpoints.iter().map(|c| c.epoch).collect();
    assert_eq!(epochs, vec![0, 2, 4, 5]);
    assert_eq!(run.log.len(), 6);
}

#[test]
fn divergence_keeps_last_valid_checkpoint() {
    let split = learnable_split();
    let vocab_size = split.train.iter().flat_map(|c| c.token_ids.iter()).max().copied().unwrap() as usize + 1;
    let config = ModelConfig { num_layers: 1, hidden_dim: 8, num_heads: 2, ffn_dim: 8, max_len: 32, vocab_size, seed: 3 };
    let options = TrainOptions { epochs: 3, learning_rate: f64::NAN, ..Default::default() };
    let run = model::train::<ModelError>(&split, &config, &MaskingPolicy::default(), &options, |_, _| Ok(())).unwrap();
    assert_eq!(run.diverged_at, Some(1));
    assert_eq!(run.checkpoints.len(), 1);
    assert!(run.checkpoints[0].train_loss.is_finite());
}
