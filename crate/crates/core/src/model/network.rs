use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{ModelConfig, ModelError, Weights};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// x · W + b
fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates the weight and bias gradients of a linear map and returns
/// the input gradient.
fn linear_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(
    cache: &LayerNormCache,
    g: &Array1<f64>,
    dy: &Array2<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xhat), &rstd) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean_dxhat = row.sum() / d;
        let mean_dxhat_xhat = row.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
        for (v, &xh) in row.iter_mut().zip(xhat) {
            *v = rstd * (*v - mean_dxhat - xh * mean_dxhat_xhat);
        }
    }
    dx
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
    ln2: LayerNormCache,
}

/// Read-only view of a parameter set with its configuration.
pub struct Encoder<'a> {
    pub config: &'a ModelConfig,
    pub weights: &'a Weights,
}

struct ForwardCache {
    ids: Vec<u32>,
    emb_ln: LayerNormCache,
    layers: Vec<LayerCache>,
}

impl<'a> Encoder<'a> {
    pub fn new(config: &'a ModelConfig, weights: &'a Weights) -> Self {
        Self { config, weights }
    }

    fn check_input(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong { len: ids.len(), max_len: self.config.max_len });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange { id, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    fn forward_cached(&self, ids: &[u32]) -> Result<(Array2<f64>, ForwardCache), ModelError> {
        self.check_input(ids)?;
        let w = self.weights;
        let n = ids.len();
        let d = self.config.hidden_dim;
        let mut e = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut row = e.row_mut(i);
            row.assign(&w.tok_emb.row(id as usize));
            row += &w.pos_emb.row(i);
        }
        let (mut h, emb_ln) = layer_norm(&e, &w.emb_ln_g, &w.emb_ln_b);
        let mut layers = Vec::with_capacity(w.layers.len());
        for lw in &w.layers {
            let (out, cache) = self.layer_forward(lw, h);
            layers.push(cache);
            h = out;
        }
        Ok((h, ForwardCache { ids: ids.to_vec(), emb_ln, layers }))
    }

    fn layer_forward(&self, lw: &super::LayerWeights, x: Array2<f64>) -> (Array2<f64>, LayerCache) {
        let heads = self.config.num_heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let xv = x.view();
        let q = linear(&xv, &lw.wq, &lw.bq);
        let k = linear(&xv, &lw.wk, &lw.bk);
        let v = linear(&xv, &lw.wv, &lw.bv);
        let mut ctx = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let a = linear(&ctx.view(), &lw.wo, &lw.bo);
        let r1 = &x + &a;
        let (h1, ln1) = layer_norm(&r1, &lw.ln1_g, &lw.ln1_b);
        let u = linear(&h1.view(), &lw.w1, &lw.b1);
        let act = u.mapv(gelu);
        let f = linear(&act.view(), &lw.w2, &lw.b2);
        let r2 = &h1 + &f;
        let (out, ln2) = layer_norm(&r2, &lw.ln2_g, &lw.ln2_b);
        (out, LayerCache { x, q, k, v, probs, ctx, ln1, h1, u, act, ln2 })
    }

    fn layer_backward(
        &self,
        lw: &super::LayerWeights,
        gw: &mut super::LayerWeights,
        cache: &LayerCache,
        dout: &Array2<f64>,
    ) -> Array2<f64> {
        let heads = self.config.num_heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let dr2 = layer_norm_backward(&cache.ln2, &lw.ln2_g, dout, &mut gw.ln2_g, &mut gw.ln2_b);
        let dact = linear_backward(&cache.act.view(), &lw.w2, &dr2, &mut gw.w2, &mut gw.b2);
        let du = &dact * &cache.u.mapv(gelu_grad);
        let mut dh1 = linear_backward(&cache.h1.view(), &lw.w1, &du, &mut gw.w1, &mut gw.b1);
        dh1 += &dr2;
        let dr1 = layer_norm_backward(&cache.ln1, &lw.ln1_g, &dh1, &mut gw.ln1_g, &mut gw.ln1_b);
        let dctx = linear_backward(&cache.ctx.view(), &lw.wo, &dr1, &mut gw.wo, &mut gw.bo);

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.sum();
                row.zip_mut_with(&prow, |v, &pv| *v -= pv * dot);
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.x.view();
        let mut dx = dr1;
        dx += &linear_backward(&x, &lw.wq, &dq, &mut gw.wq, &mut gw.bq);
        dx += &linear_backward(&x, &lw.wk, &dk, &mut gw.wk, &mut gw.bk);
        dx += &linear_backward(&x, &lw.wv, &dv, &mut gw.wv, &mut gw.bv);
        dx
    }

    /// Final-layer hidden states, one row per input position.
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Array2<f64>, ModelError> {
        self.forward_cached(ids).map(|(h, _)| h)
    }

    /// Summed cross-entropy over `targets` (position, token) pairs.
    pub fn loss(&self, ids: &[u32], targets: &[(usize, u32)]) -> Result<f64, ModelError> {
        let (h, _) = self.forward_cached(ids)?;
        Ok(self.head(&h, targets).0)
    }

    /// Returns (summed cross-entropy, head intermediates).
    fn head(&self, h: &Array2<f64>, targets: &[(usize, u32)]) -> (f64, Option<HeadCache>) {
        if targets.is_empty() {
            return (0.0, None);
        }
        let w = self.weights;
        let d = self.config.hidden_dim;
        let mut hm = Array2::zeros((targets.len(), d));
        for (r, &(pos, _)) in targets.iter().enumerate() {
            hm.row_mut(r).assign(&h.row(pos));
        }
        let z = linear(&hm.view(), &w.head_w, &w.head_b);
        let gz = z.mapv(gelu);
        let (t, ln) = layer_norm(&gz, &w.head_ln_g, &w.head_ln_b);
        let mut logits = t.dot(&w.tok_emb.t());
        logits += &w.out_bias;
        let mut loss = 0.0;
        for (mut row, &(_, target)) in logits.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            loss -= (row[target as usize] / sum).ln();
            row /= sum;
        }
        (loss, Some(HeadCache { hm, z, t, ln, probs: logits }))
    }

    /// Accumulates into `grads` the gradient of `cross_entropy_sum / norm`
    /// and returns the unnormalized cross-entropy sum.
    pub fn loss_and_grad(
        &self,
        ids: &[u32],
        targets: &[(usize, u32)],
        norm: f64,
        grads: &mut Weights,
    ) -> Result<f64, ModelError> {
        let (h, cache) = self.forward_cached(ids)?;
        let (loss, head) = self.head(&h, targets);
        let Some(head) = head else {
            return Ok(0.0);
        };
        let w = self.weights;

        let mut dlogits = head.probs;
        for (r, &(_, target)) in targets.iter().enumerate() {
            dlogits[[r, target as usize]] -= 1.0;
        }
        dlogits /= norm;
        grads.out_bias += &dlogits.sum_axis(Axis(0));
        general_mat_mul(1.0, &dlogits.t(), &head.t, 1.0, &mut grads.tok_emb);
        let dt = dlogits.dot(&w.tok_emb);
        let dgz = layer_norm_backward(&head.ln, &w.head_ln_g, &dt, &mut grads.head_ln_g, &mut grads.head_ln_b);
        let dz = &dgz * &head.z.mapv(gelu_grad);
        let dhm = linear_backward(&head.hm.view(), &w.head_w, &dz, &mut grads.head_w, &mut grads.head_b);

        let mut dh = Array2::zeros(h.raw_dim());
        for (r, &(pos, _)) in targets.iter().enumerate() {
            let mut row = dh.row_mut(pos);
            row += &dhm.row(r);
        }
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            dh = self.layer_backward(&w.layers[l], &mut grads.layers[l], lc, &dh);
        }
        let de = layer_norm_backward(&cache.emb_ln, &w.emb_ln_g, &dh, &mut grads.emb_ln_g, &mut grads.emb_ln_b);
        for (i, &id) in cache.ids.iter().enumerate() {
            let mut tok = grads.tok_emb.row_mut(id as usize);
            tok += &de.row(i);
            let mut pos = grads.pos_emb.row_mut(i);
            pos += &de.row(i);
        }
        Ok(loss)
    }
}

struct HeadCache {
    hm: Array2<f64>,
    z: Array2<f64>,
    t: Array2<f64>,
    ln: LayerNormCache,
    probs: Array2<f64>,
}

/// Final-layer hidden states of a checkpoint for `token_ids` (len × d).
pub fn forward_hidden_states(checkpoint: &super::Checkpoint, token_ids: &[u32]) -> Result<Array2<f64>, ModelError> {
    Encoder::new(&checkpoint.config, &checkpoint.weights).hidden_states(token_ids)
}

/// Mean cross-entropy of one sequence over its targets.
pub fn mlm_loss(config: &ModelConfig, weights: &Weights, ids: &[u32], targets: &[(usize, u32)]) -> Result<f64, ModelError> {
    let sum = Encoder::new(config, weights).loss(ids, targets)?;
    Ok(if targets.is_empty() { 0.0 } else { sum / targets.len() as f64 })
}

/// Mean cross-entropy and its gradient for one sequence.
pub fn mlm_loss_and_grad(
    config: &ModelConfig,
    weights: &Weights,
    ids: &[u32],
    targets: &[(usize, u32)],
) -> Result<(f64, Weights), ModelError> {
    let mut grads = Weights::zeros(config);
    let norm = targets.len().max(1) as f64;
    let sum = Encoder::new(config, weights).loss_and_grad(ids, targets, norm, &mut grads)?;
    Ok((sum / norm, grads))
}
