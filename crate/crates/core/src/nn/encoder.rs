use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, MultiHeadAttention};
use super::linear::Linear;
use super::ops::{dropout, dropout_backward, relu, relu_backward, LayerNorm, LayerNormCache};
use super::params::{join, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Pre-norm residual blocks when true, post-norm otherwise.
    #[serde(default = "default_true")]
    pub norm_first: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            model_dim: 128,
            heads: 2,
            ffn_dim: 512,
            layers: 2,
            dropout: 0.3,
            norm_first: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Sinusoidal position table, `T x dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(t, i)| {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    ln1: Option<LayerNormCache>,
    attn: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    ln2: Option<LayerNormCache>,
    ffn_in: Array2<f64>,
    ff1_out: Array2<f64>,
    relu_out: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    post: Option<(LayerNormCache, LayerNormCache)>,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(cfg.model_dim),
            attn: MultiHeadAttention::new(cfg.model_dim, cfg.heads, rng)?,
            ln2: LayerNorm::new(cfg.model_dim),
            ff1: Linear::new(cfg.model_dim, cfg.ffn_dim, rng),
            ff2: Linear::new(cfg.ffn_dim, cfg.model_dim, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            ff1: self.ff1.zeros_like(),
            ff2: self.ff2.zeros_like(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        cfg: &EncoderConfig,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, LayerCache)> {
        if cfg.norm_first {
            // x1 = x + drop(attn(ln1(x))); y = x1 + drop(ffn(ln2(x1)))
            let (h1, c1) = self.ln1.forward(x);
            let (a, ac) = self.attn.forward(&h1)?;
            let (a, attn_mask) = dropout(&a, cfg.dropout, rng, train)?;
            let x1 = x + &a;
            let (h2, c2) = self.ln2.forward(&x1);
            let f1 = self.ff1.forward(&h2)?;
            let r = relu(&f1);
            let f2 = self.ff2.forward(&r)?;
            let (f2, ffn_mask) = dropout(&f2, cfg.dropout, rng, train)?;
            let y = x1 + &f2;
            Ok((
                y,
                LayerCache {
                    ln1: Some(c1),
                    attn: ac,
                    attn_mask,
                    ln2: Some(c2),
                    ffn_in: h2,
                    ff1_out: f1,
                    relu_out: r,
                    ffn_mask,
                    post: None,
                },
            ))
        } else {
            // x1 = ln1(x + drop(attn(x))); y = ln2(x1 + drop(ffn(x1)))
            let (a, ac) = self.attn.forward(x)?;
            let (a, attn_mask) = dropout(&a, cfg.dropout, rng, train)?;
            let (x1, c1) = self.ln1.forward(&(x + &a));
            let f1 = self.ff1.forward(&x1)?;
            let r = relu(&f1);
            let f2 = self.ff2.forward(&r)?;
            let (f2, ffn_mask) = dropout(&f2, cfg.dropout, rng, train)?;
            let (y, c2) = self.ln2.forward(&(&x1 + &f2));
            Ok((
                y,
                LayerCache {
                    ln1: None,
                    attn: ac,
                    attn_mask,
                    ln2: None,
                    ffn_in: x1,
                    ff1_out: f1,
                    relu_out: r,
                    ffn_mask,
                    post: Some((c1, c2)),
                },
            ))
        }
    }

    fn ffn_backward(&self, cache: &LayerCache, dout: Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let df2 = dropout_backward(cache.ffn_mask.as_ref(), dout);
        let dr = self.ff2.backward(&cache.relu_out, &df2, &mut grad.ff2);
        let df1 = relu_backward(&cache.ff1_out, &dr);
        self.ff1.backward(&cache.ffn_in, &df1, &mut grad.ff1)
    }

    fn attn_backward(&self, cache: &LayerCache, dout: Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let da = dropout_backward(cache.attn_mask.as_ref(), dout);
        self.attn.backward(&cache.attn, &da, &mut grad.attn)
    }

    pub fn backward(&self, cache: &LayerCache, dy: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        match &cache.post {
            None => {
                let dh2 = self.ffn_backward(cache, dy.clone(), grad);
                let ln2 = cache.ln2.as_ref().expect("pre-norm cache");
                let dx1 = dy + &self.ln2.backward(ln2, &dh2, &mut grad.ln2);
                let dh1 = self.attn_backward(cache, dx1.clone(), grad);
                let ln1 = cache.ln1.as_ref().expect("pre-norm cache");
                dx1 + &self.ln1.backward(ln1, &dh1, &mut grad.ln1)
            }
            Some((c1, c2)) => {
                let ds2 = self.ln2.backward(c2, dy, &mut grad.ln2);
                let dx1 = &ds2 + &self.ffn_backward(cache, ds2.clone(), grad);
                let ds1 = self.ln1.backward(c1, &dx1, &mut grad.ln1);
                &ds1 + &self.attn_backward(cache, ds1.clone(), grad)
            }
        }
    }
}

impl Params for EncoderLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
    }
}

/// Positional encoding followed by `cfg.layers` encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub cfg: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<LayerCache>,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer::new(&cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { cfg, layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            layers: self.layers.iter().map(EncoderLayer::zeros_like).collect(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, EncoderCache)> {
        if x.ncols() != self.cfg.model_dim {
            return Err(Error::shape(format!(
                "encoder expects width {}, got {}",
                self.cfg.model_dim,
                x.ncols()
            )));
        }
        let mut h = x + &positional_encoding(x.nrows(), x.ncols());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, &self.cfg, train, rng)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, EncoderCache { layers: caches }))
    }

    pub fn backward(&self, cache: &EncoderCache, dy: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let mut d = dy.clone();
        for ((layer, c), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            d = layer.backward(c, &d, g);
        }
        d
    }
}

impl Params for EncoderStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{grad_check, scale};

    fn small(norm_first: bool) -> EncoderConfig {
        EncoderConfig {
            model_dim: 8,
            heads: 2,
            ffn_dim: 12,
            layers: 2,
            dropout: 0.3,
            norm_first,
        }
    }

    #[test]
    fn full_size_defaults() {
        let c = EncoderConfig::default();
        assert_eq!((c.model_dim, c.heads, c.ffn_dim, c.layers, c.dropout), (128, 2, 512, 2, 0.3));
        assert!(EncoderConfig { heads: 3, ..c }.validate().is_err());
    }

    #[test]
    fn zero_weights_leave_residual_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = EncoderStack::new(small(true), &mut rng).unwrap();
        scale(&mut enc, 0.0);
        let x = Array2::from_shape_fn((4, 8), |_| rng.random_range(-1.0..1.0));
        let (y, _) = enc.forward(&x, false, &mut rng).unwrap();
        let expected = &x + &positional_encoding(4, 8);
        assert!((&y - &expected).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn eval_is_deterministic_and_shape_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderStack::new(small(true), &mut rng).unwrap();
        for t in 1..6 {
            let x = Array2::from_shape_fn((t, 8), |_| rng.random_range(-1.0..1.0));
            let (a, _) = enc.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let (b, _) = enc.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.dim(), (t, 8));
        }
        let x = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
        let (a, _) = enc.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (b, _) = enc.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    fn check_stack(norm_first: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderStack::new(small(norm_first), &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = enc.forward(&x, false, &mut drng).unwrap();
        let mut g = enc.zeros_like();
        enc.backward(&cache, &r, &mut g);
        let loss = |m: &EncoderStack| {
            (m.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0 * &r).sum()
        };
        let report = grad_check(&enc, &g, loss, 1e-5, 10_000, 0);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn pre_norm_stack_gradients() {
        check_stack(true);
    }

    #[test]
    fn post_norm_stack_gradients() {
        check_stack(false);
    }

    #[test]
    fn train_mode_gradients_with_fixed_dropout_masks() {
        // A fixed dropout seed makes the train-mode forward a deterministic
        // function of the weights, so its gradient is checkable too.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = EncoderStack::new(small(true), &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = enc.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut g = enc.zeros_like();
        enc.backward(&cache, &r, &mut g);
        let loss = |m: &EncoderStack| {
            (m.forward(&x, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0 * &r).sum()
        };
        let report = grad_check(&enc, &g, loss, 1e-5, 10_000, 0);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
