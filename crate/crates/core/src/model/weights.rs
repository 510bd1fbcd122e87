use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

/// All trainable parameters. The output projection of the MLM head is tied
/// to `tok_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_g: Array1<f64>,
    pub emb_ln_b: Array1<f64>,
    pub layers: Vec<LayerWeights>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub head_ln_g: Array1<f64>,
    pub head_ln_b: Array1<f64>,
    pub out_bias: Array1<f64>,
}

impl LayerWeights {
    fn zeros(d: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        Self {
            wq: m(d, d),
            bq: v(d),
            wk: m(d, d),
            bk: v(d),
            wv: m(d, d),
            bv: v(d),
            wo: m(d, d),
            bo: v(d),
            ln1_g: v(d),
            ln1_b: v(d),
            w1: m(d, f),
            b1: v(f),
            w2: m(f, d),
            b2: v(d),
            ln2_g: v(d),
            ln2_b: v(d),
        }
    }

    fn tensors(&self) -> [&[f64]; 16] {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn t(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s(&self.wq),
            t(&self.bq),
            s(&self.wk),
            t(&self.bk),
            s(&self.wv),
            t(&self.bv),
            s(&self.wo),
            t(&self.bo),
            t(&self.ln1_g),
            t(&self.ln1_b),
            s(&self.w1),
            t(&self.b1),
            s(&self.w2),
            t(&self.b2),
            t(&self.ln2_g),
            t(&self.ln2_b),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
            self.wo.as_slice_mut().unwrap(),
            self.bo.as_slice_mut().unwrap(),
            self.ln1_g.as_slice_mut().unwrap(),
            self.ln1_b.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.ln2_g.as_slice_mut().unwrap(),
            self.ln2_b.as_slice_mut().unwrap(),
        ]
    }
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let v = config.vocab_size;
        Self {
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((config.max_len, d)),
            emb_ln_g: Array1::zeros(d),
            emb_ln_b: Array1::zeros(d),
            layers: (0..config.num_layers)
                .map(|_| LayerWeights::zeros(d, config.ffn_dim))
                .collect(),
            head_w: Array2::zeros((d, d)),
            head_b: Array1::zeros(d),
            head_ln_g: Array1::zeros(d),
            head_ln_b: Array1::zeros(d),
            out_bias: Array1::zeros(v),
        }
    }

    /// Normal(0, 0.02) matrices and embeddings, unit layer-norm gains, zero
    /// biases. Fully determined by `config.seed`.
    pub fn init(config: &ModelConfig) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut fill = |a: &mut Array2<f64>| a.mapv_inplace(|_| normal.sample(&mut rng));
        fill(&mut w.tok_emb);
        fill(&mut w.pos_emb);
        for layer in &mut w.layers {
            fill(&mut layer.wq);
            fill(&mut layer.wk);
            fill(&mut layer.wv);
            fill(&mut layer.wo);
            fill(&mut layer.w1);
            fill(&mut layer.w2);
            layer.ln1_g.fill(1.0);
            layer.ln2_g.fill(1.0);
        }
        fill(&mut w.head_w);
        w.emb_ln_g.fill(1.0);
        w.head_ln_g.fill(1.0);
        w
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.tok_emb.as_slice().unwrap(),
            self.pos_emb.as_slice().unwrap(),
            self.emb_ln_g.as_slice().unwrap(),
            self.emb_ln_b.as_slice().unwrap(),
        ];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([
            self.head_w.as_slice().unwrap(),
            self.head_b.as_slice().unwrap(),
            self.head_ln_g.as_slice().unwrap(),
            self.head_ln_b.as_slice().unwrap(),
            self.out_bias.as_slice().unwrap(),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
            self.emb_ln_g.as_slice_mut().unwrap(),
            self.emb_ln_b.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([
            self.head_w.as_slice_mut().unwrap(),
            self.head_b.as_slice_mut().unwrap(),
            self.head_ln_g.as_slice_mut().unwrap(),
            self.head_ln_b.as_slice_mut().unwrap(),
            self.out_bias.as_slice_mut().unwrap(),
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites every parameter from a flat vector in [`Weights::tensors`] order.
    pub fn load_flat(&mut self, values: &[f64]) -> bool {
        if values.len() != self.num_params() {
            return false;
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let c = ModelConfig::desk(50);
        assert_eq!(Weights::init(&c), Weights::init(&c));
        let mut other = c;
        other.seed = 1;
        assert_ne!(Weights::init(&c), Weights::init(&other));
    }

    #[test]
    fn flat_round_trip() {
        let c = ModelConfig { num_layers: 1, hidden_dim: 8, num_heads: 2, ffn_dim: 16, max_len: 10, vocab_size: 12, seed: 3 };
        let w = Weights::init(&c);
        let mut z = Weights::zeros(&c);
        assert!(z.load_flat(&w.flat()));
        assert_eq!(z, w);
        assert!(!z.load_flat(&[1.0]));
    }
}
