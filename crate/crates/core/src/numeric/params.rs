use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// An ordered collection of named, trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.entries.push((name.into(), t.with_grad()));
        self.entries.len() - 1
    }

    /// Glorot-uniform `rows×cols` matrix scaled by `gain`.
    pub fn push_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        gain: f64,
        rng: &mut R,
    ) -> usize {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        self.push(name, Tensor::matrix(rows, cols, data).expect("glorot shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.entries.iter().map(|(_, t)| g.leaf(t)).collect()
    }

    /// Adds the graph's gradients for `vars` (from [`bind`](Self::bind)) into
    /// each tensor's gradient buffer.
    pub fn accumulate(&mut self, g: &Graph, vars: &[Var]) {
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            match g.grad(v) {
                Some(gr) => t.accumulate_grad(gr),
                None => {
                    if t.grad.is_none() {
                        t.grad = Some(vec![0.0; t.len()]);
                    }
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = Some(vec![0.0; t.len()]);
        }
    }

    pub fn grad_sq_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|(_, t)| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for (_, t) in &mut self.entries {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    /// Overwrites values from `(name, tensor)` pairs; every parameter must be present.
    pub fn load_from(&mut self, items: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in &mut self.entries {
            let src = items
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, s)| s)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load",
                    lhs: t.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Rescales gradients of all sets so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(sets: &mut [&mut ParamSet], max_norm: f64) -> f64 {
    let norm = sets.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        sets.iter_mut().for_each(|p| p.scale_grads(s));
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradient buffers in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        if self.m.is_empty() {
            self.m = params.entries.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step as i32);
        let b2c = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (_, t)) in params.entries.iter_mut().enumerate() {
            let Some(grad) = t.grad.take() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in t.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / b1c;
                let vhat = v[i] / b2c;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            t.grad = Some(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::row(vec![3.0, -2.0]));
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            p.zero_grads();
            let mut g = Graph::new();
            let vars = p.bind(&mut g).unwrap();
            let sq = g.square(vars[0]);
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            p.accumulate(&g, &vars);
            opt.step(&mut p);
        }
        assert!(p.get(0).data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn global_norm_clip() {
        let mut a = ParamSet::new();
        a.push("a", Tensor::row(vec![0.0, 0.0]));
        a.get_mut(0).grad = Some(vec![3.0, 0.0]);
        let mut b = ParamSet::new();
        b.push("b", Tensor::row(vec![0.0]));
        b.get_mut(0).grad = Some(vec![4.0]);
        let n = clip_global_norm(&mut [&mut a, &mut b], 0.5);
        assert_eq!(n, 5.0);
        let after = (a.grad_sq_norm() + b.grad_sq_norm()).sqrt();
        assert!((after - 0.5).abs() < 1e-12);
    }
}
