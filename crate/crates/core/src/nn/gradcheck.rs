use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{param_count, set_param, Params};

/// Gradients below this magnitude are compared absolutely rather than
/// relatively.
const REL_FLOOR: f64 = 1e-6;
/// Multiple of the estimated round-off in a central difference that is
/// still treated as zero.
const NOISE_MARGIN: f64 = 1e5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against central finite differences of `loss` around
/// `model`. When the model has more than `max_checks` scalars a seeded random
/// subset is checked instead.
pub fn grad_check<M, F>(model: &M, analytic: &M, loss: F, step: f64, max_checks: usize, seed: u64) -> GradCheckReport
where
    M: Params + Clone,
    F: Fn(&M) -> f64,
{
    let n = param_count(model);
    let mut flat_grad = Vec::with_capacity(n);
    analytic.visit("", &mut |_, g| flat_grad.extend_from_slice(g));
    let indices: Vec<usize> = if n <= max_checks {
        (0..n).collect()
    } else {
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, max_checks).into_vec();
        idx.sort_unstable();
        idx
    };
    let base = loss(model).abs();
    let floor = REL_FLOOR.max(NOISE_MARGIN * f64::EPSILON * base.max(1.0) / step);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
    };
    for &i in &indices {
        let mut orig = 0.0;
        set_param(&mut probe, i, |p| {
            orig = *p;
            *p = orig + step;
        });
        let up = loss(&probe);
        set_param(&mut probe, i, |p| *p = orig - step);
        let down = loss(&probe);
        set_param(&mut probe, i, |p| *p = orig);
        let numeric = (up - down) / (2.0 * step);
        let a = flat_grad[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > report.max_rel_err || rel.is_nan() {
            report = GradCheckReport {
                max_rel_err: if rel.is_nan() { f64::INFINITY } else { rel },
                worst_index: i,
                analytic: a,
                numeric,
                checked: indices.len(),
            };
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::Rng;

    use super::*;
    use crate::nn::Linear;

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(4, 3, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let mut g = lin.zeros_like();
        lin.backward(&x, &r, &mut g);
        let loss = |m: &Linear| (m.forward(&x).unwrap() * &r).sum();
        assert!(grad_check(&lin, &g, loss, 1e-5, 100, 0).max_rel_err < 1e-6);

        let (idx, _) = g
            .w
            .indexed_iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        g.w[idx] *= 1.1;
        let report = grad_check(&lin, &g, loss, 1e-5, 100, 0);
        assert!(report.max_rel_err > 0.05, "{report:?}");
    }
}
