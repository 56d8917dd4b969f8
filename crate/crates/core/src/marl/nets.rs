//! Two-layer tanh perceptrons used for the actor and the critic head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamSet, Tensor, Var};

/// `x ↦ tanh(x·W1 + b1)·W2 + b2`, row-wise over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub params: ParamSet,
    in_width: usize,
    hidden: usize,
    out_width: usize,
}

impl Mlp2 {
    /// `out_gain` scales the output layer's initial weights.
    pub fn new<R: Rng>(
        prefix: &str,
        in_width: usize,
        hidden: usize,
        out_width: usize,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        params.push_glorot(format!("{prefix}.W1"), in_width, hidden, 1.0, rng);
        params.push(format!("{prefix}.b1"), Tensor::zeros(1, hidden));
        params.push_glorot(format!("{prefix}.W2"), hidden, out_width, out_gain, rng);
        params.push(format!("{prefix}.b2"), Tensor::zeros(1, out_width));
        Self {
            params,
            in_width,
            hidden,
            out_width,
        }
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let shape = |i: usize| params.get(i).shape().to_vec();
        if params.len() != 4 {
            return Err(Error::Invalid(format!(
                "perceptron expects 4 tensors, got {}",
                params.len()
            )));
        }
        let (w1, b1, w2, b2) = (shape(0), shape(1), shape(2), shape(3));
        if w1.len() != 2 || b1 != [1, w1[1]] || w2.len() != 2 || w2[0] != w1[1] || b2 != [1, w2[1]] {
            return Err(Error::Invalid(format!(
                "inconsistent perceptron shapes {w1:?} {b1:?} {w2:?} {b2:?}"
            )));
        }
        Ok(Self {
            in_width: w1[0],
            hidden: w1[1],
            out_width: w2[1],
            params,
        })
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let z1 = g.matmul(x, vars[0])?;
        let a1 = g.add_row(z1, vars[1])?;
        let h = g.tanh(a1);
        let z2 = g.matmul(h, vars[2])?;
        g.add_row(z2, vars[3])
    }

    /// Forward pass without gradient tracking; one output row per input row.
    pub fn eval(&self, x: Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g)?;
        let xv = g.constant(x)?;
        let y = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }
}
