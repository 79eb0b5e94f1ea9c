use ndarray::{s, Array2};
use rand::Rng;

use super::linear::Linear;
use super::ops::{softmax, softmax_backward};
use super::params::{join, Params};
use crate::error::{Error, Result};

/// Bidirectional multi-head scaled dot-product self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl AttentionCache {
    /// Attention weights of one head (T x T).
    pub fn weights(&self, head: usize) -> &Array2<f64> {
        &self.weights[head]
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("model dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            heads,
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.fan_in()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads,
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, AttentionCache)> {
        if x.nrows() == 0 {
            return Err(Error::invalid("attention over an empty sequence"));
        }
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        let dh = self.dim() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros(x.dim());
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let a = softmax(&scores);
            ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            weights.push(a);
        }
        let out = self.wo.forward(&ctx)?;
        Ok((
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                ctx,
            },
        ))
    }

    pub fn backward(&self, cache: &AttentionCache, dout: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let dctx = self.wo.backward(&cache.ctx, dout, &mut grad.wo);
        let dh = self.dim() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.dim());
        let mut dk = Array2::zeros(cache.k.dim());
        let mut dv = Array2::zeros(cache.v.dim());
        for (h, a) in cache.weights.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let da = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            let ds = softmax_backward(a, &da) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.wq.backward(&cache.x, &dq, &mut grad.wq);
        dx += &self.wk.backward(&cache.x, &dk, &mut grad.wk);
        dx += &self.wv.backward(&cache.x, &dv, &mut grad.wv);
        dx
    }
}

impl Params for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}
