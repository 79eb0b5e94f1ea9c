use crate::error::{Error, Result};

/// Visitor access to every named parameter array of a model.
///
/// Both methods must visit the same arrays in the same order; optimizers,
/// checkpoints and gradient accumulation all rely on it.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count<M: Params + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, v| n += v.len());
    n
}

pub fn flatten<M: Params + ?Sized>(m: &M) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, v| out.push((name.to_owned(), v.to_vec())));
    out
}

/// Copies named arrays into the model, requiring an exact name and length match.
pub fn load_flat<M: Params + ?Sized>(m: &mut M, weights: &[(String, Vec<f64>)]) -> Result<()> {
    let mut i = 0;
    let mut err = None;
    m.visit_mut("", &mut |name, dst| {
        if err.is_some() {
            return;
        }
        match weights.get(i) {
            Some((n, src)) if n == name && src.len() == dst.len() => dst.copy_from_slice(src),
            Some((n, src)) => {
                err = Some(format!(
                    "expected array `{name}` of length {}, found `{n}` of length {}",
                    dst.len(),
                    src.len()
                ))
            }
            None => err = Some(format!("missing array `{name}`")),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(Error::Checkpoint(e));
    }
    if i != weights.len() {
        return Err(Error::Checkpoint(format!(
            "{} arrays in checkpoint, model has {i}",
            weights.len()
        )));
    }
    Ok(())
}

/// `dst += alpha * src` over matching arrays.
pub fn add_scaled<M: Params>(dst: &mut M, src: &M, alpha: f64) {
    let mut srcs: Vec<Vec<f64>> = Vec::new();
    src.visit("", &mut |_, v| srcs.push(v.to_vec()));
    let mut i = 0;
    dst.visit_mut("", &mut |_, d| {
        for (x, y) in d.iter_mut().zip(&srcs[i]) {
            *x += alpha * y;
        }
        i += 1;
    });
}

pub fn scale<M: Params + ?Sized>(m: &mut M, alpha: f64) {
    m.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x *= alpha));
}

/// Applies `f` to the parameter at a flat index (visit order).
pub fn set_param<M: Params + ?Sized>(m: &mut M, flat_index: usize, f: impl FnOnce(&mut f64)) {
    let mut offset = 0;
    let mut f = Some(f);
    m.visit_mut("", &mut |_, v| {
        if flat_index >= offset && flat_index < offset + v.len() {
            if let Some(f) = f.take() {
                f(&mut v[flat_index - offset]);
            }
        }
        offset += v.len();
    });
}
