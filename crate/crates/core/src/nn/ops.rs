//! Row-wise activations, normalisation and dropout.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::params::{join, Params};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-sum-exp; `-inf` for an all `-inf` row.
pub fn log_sum_exp(row: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = row.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.into_iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(x: &Array2<f64>) -> Array2<f64> {
    log_softmax(x).mapv(f64::exp)
}

/// Input gradient of a row softmax given its output `y`.
pub fn softmax_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let dot = (dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
    y * &(dy - &dot)
}

/// Input gradient of a row log-softmax given its output `ls`.
pub fn log_softmax_backward(ls: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let total = dy.sum_axis(Axis(1)).insert_axis(Axis(1));
    dy - &(ls.mapv(f64::exp) * &total)
}

/// Inverted dropout. Returns the output and the scaling mask (absent in eval
/// mode or at `p = 0`).
pub fn dropout<R: Rng + ?Sized>(
    x: &Array2<f64>,
    p: f64,
    rng: &mut R,
    train: bool,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0,1)")));
    }
    if !train || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Array2::from_shape_simple_fn(x.dim(), || if rng.random_bool(p) { 0.0 } else { keep });
    Ok((x * &mask, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Array2<f64>>, dy: Array2<f64>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self::with_eps(dim, LAYER_NORM_EPS)
    }

    pub fn with_eps(dim: usize, eps: f64) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gamma: Array1::zeros(self.gamma.len()),
            beta: Array1::zeros(self.beta.len()),
            eps: self.eps,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mean_dxhat = (dxhat.sum_axis(Axis(1)) / d).insert_axis(Axis(1));
        let mean_dxhat_xhat = ((&dxhat * &cache.xhat).sum_axis(Axis(1)) / d).insert_axis(Axis(1));
        let inner = dxhat - &mean_dxhat - &(&cache.xhat * &mean_dxhat_xhat);
        inner * &cache.inv_std.view().insert_axis(Axis(1))
    }
}

impl Params for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        f(&join(prefix, "gamma"), self.gamma.as_slice().expect("standard layout"));
        f(&join(prefix, "beta"), self.beta.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "gamma"), self.gamma.as_slice_mut().expect("standard layout"));
        f(&join(prefix, "beta"), self.beta.as_slice_mut().expect("standard layout"));
    }
}
