//! Dual-stage hypergraph attention encoder.
//!
//! Per head `h`: project node features `X_h = X·W_h`, score nodes with
//! `s = X_h·a_h`, normalize scores over each hyperedge's members (stage A),
//! aggregate members into hyperedge embeddings `Z`, score hyperedges with
//! `t = Z·b_h`, normalize over each node's incident hyperedges (stage B),
//! and pull hyperedge embeddings back onto nodes. Heads are concatenated in
//! order, projected to the model width, and max-pooled over nodes into the
//! graph-level embedding `g`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hypergraph::Incidence;
use crate::numeric::{Graph, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Number of attention heads `K`.
    pub heads: usize,
    /// Node feature width `d`; must be divisible by `heads`.
    pub in_width: usize,
    pub model_width: usize,
    pub tau: f64,
    /// When false both attention stages are replaced by uniform averaging.
    pub attention: bool,
}

impl EncoderConfig {
    pub fn new(in_width: usize) -> Self {
        Self {
            heads: 4,
            in_width,
            model_width: 64,
            tau: 1.0,
            attention: true,
        }
    }

    pub fn head_width(&self) -> usize {
        self.in_width / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.in_width == 0 || !self.in_width.is_multiple_of(self.heads) {
            return Err(Error::Invalid(format!(
                "feature width {} must be a positive multiple of the head count {}",
                self.in_width, self.heads
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.model_width == 0 {
            return Err(Error::Invalid("model width must be positive".into()));
        }
        Ok(())
    }
}

/// Rounds an observation width up to a multiple of the head count.
pub fn padded_width(width: usize, heads: usize) -> usize {
    width.div_ceil(heads) * heads
}

/// Learnable tensors of the encoder, laid out as
/// `[W_1, a_1, b_1, …, W_K, a_K, b_K, W_o, b_o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

pub struct EncoderOutput {
    /// `N × d_model` node outputs.
    pub nodes: Var,
    /// `1 × d_model` max-pooled embedding.
    pub pooled: Var,
}

impl EncoderParams {
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, dh) = (config.in_width, config.head_width());
        let mut params = ParamSet::new();
        for h in 1..=config.heads {
            params.push_glorot(format!("enc.W.h{h}"), d, dh, 1.0, rng);
            params.push_glorot(format!("enc.a.h{h}"), dh, 1, 1.0, rng);
            params.push_glorot(format!("enc.b.h{h}"), dh, 1, 1.0, rng);
        }
        params.push_glorot("enc.Wo", config.heads * dh, config.model_width, 1.0, rng);
        params.push("enc.bo", Tensor::zeros(1, config.model_width));
        Ok(Self { config, params })
    }

    /// Wraps an existing parameter set that follows the standard layout.
    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = 3 * config.heads + 2;
        if params.len() != expected {
            return Err(Error::Invalid(format!(
                "encoder expects {expected} tensors, got {}",
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    /// Builds the forward pass on `g`. `vars` are this set's bound parameters.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, inc: &Incidence) -> Result<EncoderOutput> {
        let cfg = &self.config;
        let (n, d) = g.value(x).dims2()?;
        if d != cfg.in_width || n != inc.num_nodes() {
            return Err(Error::Shape {
                op: "encode",
                lhs: vec![n, d],
                rhs: vec![inc.num_nodes(), cfg.in_width],
            });
        }
        let uniform = if cfg.attention {
            None
        } else {
            Some((g.constant(uniform_intra(inc))?, g.constant(uniform_inter(inc))?))
        };
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (w, a, b) = (vars[3 * h], vars[3 * h + 1], vars[3 * h + 2]);
            let xh = g.matmul(x, w)?;
            let (alpha, beta_of) = match uniform {
                Some((ua, ub)) => (ua, Some(ub)),
                None => (intra_attention(g, xh, inc, a, cfg.tau)?, None),
            };
            let z = hyperedge_embed(g, alpha, xh)?;
            let beta = match beta_of {
                Some(ub) => ub,
                None => inter_attention(g, z, inc, b, cfg.tau)?,
            };
            heads.push(g.matmul(beta, z)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let k = 3 * cfg.heads;
        let proj = g.matmul(cat, vars[k])?;
        let nodes = g.add_row(proj, vars[k + 1])?;
        let pooled = g.reduce_max(nodes);
        Ok(EncoderOutput { nodes, pooled })
    }

    /// Inference-only convenience: returns `(Ŷ, g)`.
    pub fn encode(&self, x: &Tensor, inc: &Incidence) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g)?;
        let xv = g.constant(x.clone())?;
        let out = self.forward(&mut g, &vars, xv, inc)?;
        Ok((g.value(out.nodes).clone(), g.value(out.pooled).clone()))
    }
}

/// Stage A: `alpha (N×E)`, a masked softmax of node scores `X_h·a` over the
/// members of each hyperedge, shifted by the per-edge maximum.
pub fn intra_attention(g: &mut Graph, xh: Var, inc: &Incidence, a: Var, tau: f64) -> Result<Var> {
    let scores = g.matmul(xh, a)?; // N×1
    let row = g.transpose(scores); // 1×N
    let per_edge = g.broadcast_rows(row, inc.num_edges())?; // E×N
    let alpha_t = g.masked_softmax(per_edge, &inc.transposed_mask(), tau)?;
    Ok(g.transpose(alpha_t))
}

/// `Z (E×d_h)`: each hyperedge as the alpha-weighted sum of its member rows.
pub fn hyperedge_embed(g: &mut Graph, alpha: Var, xh: Var) -> Result<Var> {
    let at = g.transpose(alpha);
    g.matmul(at, xh)
}

/// Stage B: `beta (N×E)`, a masked softmax of hyperedge scores `Z·b` over
/// each node's incident hyperedges, shifted by the per-node maximum.
pub fn inter_attention(g: &mut Graph, z: Var, inc: &Incidence, b: Var, tau: f64) -> Result<Var> {
    let scores = g.matmul(z, b)?; // E×1
    let row = g.transpose(scores); // 1×E
    let per_node = g.broadcast_rows(row, inc.num_nodes())?; // N×E
    g.masked_softmax(per_node, inc.mask(), tau)
}

/// Uniform stage-A weights: `1/|e|` for every member of `e`.
pub fn uniform_intra(inc: &Incidence) -> Tensor {
    let (n, e) = (inc.num_nodes(), inc.num_edges());
    let sizes: Vec<f64> = (0..e).map(|c| inc.edge_size(c) as f64).collect();
    let mut t = Tensor::zeros(n, e);
    for r in 0..n {
        for c in 0..e {
            if inc.contains(r, c) {
                t.set(r, c, 1.0 / sizes[c]);
            }
        }
    }
    t
}

/// Uniform stage-B weights: `1/deg(i)` on every incident hyperedge of `i`.
pub fn uniform_inter(inc: &Incidence) -> Tensor {
    let (n, e) = (inc.num_nodes(), inc.num_edges());
    let mut t = Tensor::zeros(n, e);
    for r in 0..n {
        let deg = inc.degree(r) as f64;
        for c in 0..e {
            if inc.contains(r, c) {
                t.set(r, c, 1.0 / deg);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::STHypergraph;
    use crate::numeric::finite_diff_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn values(g: &Graph, v: Var) -> Vec<f64> {
        g.value(v).data().to_vec()
    }

    fn one_col_incidence(rows: usize) -> Incidence {
        Incidence::new(rows, 1, vec![true; rows]).unwrap()
    }

    #[test]
    fn intra_single_member_is_one() {
        let inc = one_col_incidence(1);
        let mut g = Graph::new();
        let xh = g.constant(Tensor::row(vec![0.7, -2.0])).unwrap();
        let a = g.constant(Tensor::column(vec![3.0, 1.0])).unwrap();
        let alpha = intra_attention(&mut g, xh, &inc, a, 1.0).unwrap();
        assert_eq!(values(&g, alpha), vec![1.0]);
    }

    #[test]
    fn intra_equal_scores_split_evenly() {
        let inc = one_col_incidence(2);
        let mut g = Graph::new();
        let xh = g.constant(Tensor::column(vec![1.5, 1.5])).unwrap();
        let a = g.constant(Tensor::column(vec![2.0])).unwrap();
        let alpha = intra_attention(&mut g, xh, &inc, a, 1.0).unwrap();
        assert_eq!(values(&g, alpha), vec![0.5, 0.5]);
    }

    #[test]
    fn intra_hand_softmax() {
        // scores 0 and ln 2 → exp ratio 1:2
        let inc = one_col_incidence(2);
        let mut g = Graph::new();
        let xh = g.constant(Tensor::column(vec![0.0, 2f64.ln()])).unwrap();
        let a = g.constant(Tensor::column(vec![1.0])).unwrap();
        let alpha = intra_attention(&mut g, xh, &inc, a, 1.0).unwrap();
        let v = values(&g, alpha);
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn additive_shift_keeps_alpha_scaling_changes_it() {
        let inc = STHypergraph::build(3, 2).unwrap().incidence().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xh: Vec<f64> = (0..6 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |shift: f64, scale: f64| {
            let mut g = Graph::new();
            // A constant column appended to X_h with weight `shift` in `a`
            // adds the same amount to every node score.
            let mut x = Vec::new();
            for r in 0..6 {
                x.extend_from_slice(&xh[r * 2..r * 2 + 2]);
                x.push(1.0);
            }
            let xv = g.constant(Tensor::matrix(6, 3, x).unwrap()).unwrap();
            let a = g
                .constant(Tensor::column(vec![0.8 * scale, -0.3 * scale, shift]))
                .unwrap();
            let alpha = intra_attention(&mut g, xv, &inc, a, 1.0).unwrap();
            values(&g, alpha)
        };
        let base = run(0.0, 1.0);
        let shifted = run(5.0, 1.0);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        let scaled = run(0.0, 3.0);
        assert!(base.iter().zip(&scaled).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn embed_one_hot_and_midpoint() {
        let mut g = Graph::new();
        let xh = g.constant(Tensor::column(vec![0.0, 2.0])).unwrap();
        let mid = g.constant(Tensor::column(vec![0.5, 0.5])).unwrap();
        let z = hyperedge_embed(&mut g, mid, xh).unwrap();
        assert_eq!(values(&g, z), vec![1.0]);
        let onehot = g.constant(Tensor::column(vec![0.0, 1.0])).unwrap();
        let z = hyperedge_embed(&mut g, onehot, xh).unwrap();
        assert_eq!(values(&g, z), vec![2.0]);
    }

    #[test]
    fn embed_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, e, dh) = (4, 2, 3);
        let x: Vec<f64> = (0..n * dh).map(|_| rng.random_range(-1.0..1.0)).collect();
        let alpha: Vec<f64> = (0..n * e).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::matrix(n, dh, x.clone()).unwrap()).unwrap();
        let av = g.constant(Tensor::matrix(n, e, alpha.clone()).unwrap()).unwrap();
        let z = hyperedge_embed(&mut g, av, xv).unwrap();
        let got = values(&g, z);
        for ei in 0..e {
            for k in 0..dh {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += alpha[i * e + ei] * x[i * dh + k];
                }
                assert!((got[ei * dh + k] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inter_equal_scores_and_hand_softmax() {
        let inc = STHypergraph::build(1, 1).unwrap().incidence().clone();
        let mut g = Graph::new();
        // edge scores t = Z·b with b = [1]
        let b = g.constant(Tensor::column(vec![1.0])).unwrap();
        let z = g.constant(Tensor::column(vec![0.4, 0.4])).unwrap();
        let beta = inter_attention(&mut g, z, &inc, b, 1.0).unwrap();
        assert_eq!(values(&g, beta), vec![0.5, 0.5]);
        let z = g.constant(Tensor::column(vec![0.0, 3f64.ln()])).unwrap();
        let beta = inter_attention(&mut g, z, &inc, b, 1.0).unwrap();
        let v = values(&g, beta);
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn inter_large_temperature_tends_to_uniform() {
        let inc = STHypergraph::build(2, 2).unwrap().incidence().clone();
        let mut g = Graph::new();
        let b = g.constant(Tensor::column(vec![1.0])).unwrap();
        let z = g.constant(Tensor::column(vec![-3.0, 1.0, 7.0, 0.5])).unwrap();
        let beta = inter_attention(&mut g, z, &inc, b, 1e9).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let v = g.value(beta).get(r, c);
                if inc.contains(r, c) {
                    assert!((v - 0.5).abs() < 1e-8);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn single_node_chain_is_identity() {
        let cfg = EncoderConfig {
            heads: 1,
            in_width: 1,
            model_width: 1,
            tau: 1.0,
            attention: true,
        };
        let mut p = ParamSet::new();
        p.push("enc.W.h1", Tensor::scalar(1.0));
        p.push("enc.a.h1", Tensor::scalar(1.0));
        p.push("enc.b.h1", Tensor::scalar(1.0));
        p.push("enc.Wo", Tensor::scalar(1.0));
        p.push("enc.bo", Tensor::scalar(0.0));
        let enc = EncoderParams::from_params(cfg, p).unwrap();
        let inc = STHypergraph::build(1, 1).unwrap().incidence().clone();
        for c in [-2.5, 0.0, 0.75] {
            let (y, g) = enc.encode(&Tensor::scalar(c), &inc).unwrap();
            assert_eq!(y.data(), &[c]);
            assert_eq!(g.data(), &[c]);
        }
    }

    #[test]
    fn readout_of_single_node_is_its_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = EncoderParams::new(
            EncoderConfig {
                heads: 2,
                in_width: 4,
                model_width: 3,
                tau: 1.0,
                attention: true,
            },
            &mut rng,
        )
        .unwrap();
        let inc = STHypergraph::build(1, 1).unwrap().incidence().clone();
        let x = Tensor::row(vec![0.1, -0.2, 0.3, 0.9]);
        let (y, g) = enc.encode(&x, &inc).unwrap();
        assert_eq!(y.data(), g.data());
    }

    #[test]
    fn width_must_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = EncoderConfig::new(6);
        cfg.heads = 4;
        assert!(EncoderParams::new(cfg, &mut rng).is_err());
        assert_eq!(padded_width(164, 4), 164);
        assert_eq!(padded_width(133, 4), 136);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        for attention in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let cfg = EncoderConfig {
                heads: 2,
                in_width: 4,
                model_width: 3,
                tau: 0.8,
                attention,
            };
            let enc = EncoderParams::new(cfg, &mut rng).unwrap();
            let inc = STHypergraph::build(3, 2).unwrap().incidence().clone();
            let x = Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let tensors: Vec<Tensor> = enc.params.iter().map(|(_, t)| t.clone()).collect();
            let err = finite_diff_check_many(
                |g, vars| {
                    let xv = g.constant(x.clone())?;
                    let out = enc.forward(g, vars, xv, &inc)?;
                    let sq = g.square(out.pooled);
                    Ok(g.sum(sq))
                },
                &tensors,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "attention={attention}: {err}");
        }
    }
}
