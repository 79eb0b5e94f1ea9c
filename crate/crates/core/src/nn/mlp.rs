use ndarray::Array2;
use rand::Rng;

use super::linear::Linear;
use super::ops::{dropout, dropout_backward, relu, relu_backward, LayerNorm, LayerNormCache};
use super::params::{join, Params};
use crate::error::{Error, Result};

/// Per-frame MLP: `[linear -> layer norm -> ReLU -> dropout]` per hidden
/// width, then a linear output layer producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub hidden: Vec<(Linear, LayerNorm)>,
    pub out: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    norms: Vec<LayerNormCache>,
    normed: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    last: Array2<f64>,
}

impl MlpClassifier {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0,1)")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &units in hidden {
            layers.push((Linear::new(width, units, rng), LayerNorm::new(units)));
            width = units;
        }
        Ok(Self {
            hidden: layers,
            out: Linear::new(width, output_dim, rng),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.out.fan_in(), |(l, _)| l.fan_in())
    }

    pub fn output_dim(&self) -> usize {
        self.out.fan_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self
                .hidden
                .iter()
                .map(|(l, n)| (l.zeros_like(), n.zeros_like()))
                .collect(),
            out: self.out.zeros_like(),
            dropout: self.dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<f64>, MlpCache)> {
        let mut h = x.clone();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.hidden.len()),
            norms: Vec::with_capacity(self.hidden.len()),
            normed: Vec::with_capacity(self.hidden.len()),
            masks: Vec::with_capacity(self.hidden.len()),
            last: Array2::zeros((0, 0)),
        };
        for (lin, ln) in &self.hidden {
            let z = lin.forward(&h)?;
            let (n, nc) = ln.forward(&z);
            let (d, mask) = dropout(&relu(&n), self.dropout, rng, train)?;
            cache.inputs.push(std::mem::replace(&mut h, d));
            cache.norms.push(nc);
            cache.normed.push(n);
            cache.masks.push(mask);
        }
        let logits = self.out.forward(&h)?;
        cache.last = h;
        Ok((logits, cache))
    }

    pub fn backward(&self, cache: &MlpCache, dlogits: &Array2<f64>, grad: &mut Self) -> Array2<f64> {
        let mut d = self.out.backward(&cache.last, dlogits, &mut grad.out);
        for (i, ((lin, ln), (glin, gln))) in self.hidden.iter().zip(grad.hidden.iter_mut()).enumerate().rev() {
            let dr = dropout_backward(cache.masks[i].as_ref(), d);
            let dn = relu_backward(&cache.normed[i], &dr);
            let dz = ln.backward(&cache.norms[i], &dn, gln);
            d = lin.backward(&cache.inputs[i], &dz, glin);
        }
        d
    }
}

impl Params for MlpClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, (lin, ln)) in self.hidden.iter().enumerate() {
            lin.visit(&join(prefix, &format!("hidden{i}.linear")), f);
            ln.visit(&join(prefix, &format!("hidden{i}.norm")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, (lin, ln)) in self.hidden.iter_mut().enumerate() {
            lin.visit_mut(&join(prefix, &format!("hidden{i}.linear")), f);
            ln.visit_mut(&join(prefix, &format!("hidden{i}.norm")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = MlpClassifier::new(6, &[8, 5, 4], 3, 0.3, &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 6), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = mlp.forward(&x, false, &mut rng).unwrap();
        let mut g = mlp.zeros_like();
        mlp.backward(&cache, &r, &mut g);
        let loss = |m: &MlpClassifier| (m.forward(&x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0 * &r).sum();
        let report = grad_check(&mlp, &g, loss, 1e-5, 10_000, 0);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert_eq!(mlp.input_dim(), 6);
        assert_eq!(mlp.output_dim(), 3);
    }
}
