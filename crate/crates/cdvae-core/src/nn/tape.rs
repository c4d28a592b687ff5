//! Reverse-mode differentiation over a small eager tape.
//!
//! Nodes hold plain `f64` vectors (scalars are length-1). Parameters are not
//! copied into the tape: dense and layer-norm nodes reference the
//! [`ParamStore`] directly, and [`Tape::backward`] accumulates their
//! gradients into a [`GradStore`] aligned with the store.
//!
//! Every forward push validates shapes and finiteness, so a diverging model
//! fails with a numeric error naming the offending node instead of silently
//! propagating NaNs.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{GradStore, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    ParamVec {
        id: ParamId,
    },
    Dense {
        w: ParamId,
        b: ParamId,
        x: NodeId,
    },
    LRelu {
        x: NodeId,
        slope: f64,
    },
    LayerNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    /// `z = mean + exp(log_var / 2) * noise`, noise held constant.
    Reparam {
        mean: NodeId,
        log_var: NodeId,
        noise: Vec<f64>,
    },
    /// `1/2 * sum((x - target)^2)`, target held constant.
    HalfSquaredError {
        x: NodeId,
        target: Vec<f64>,
    },
    /// `1/2 * sum(mean^2 + exp(log_var) - log_var - 1)`.
    GaussKl {
        mean: NodeId,
        log_var: NodeId,
    },
    /// `sum(|a - b|)`.
    L1Dist {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        x: NodeId,
    },
    /// Weighted sum of scalar nodes.
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::ParamVec { .. } => "param",
            Op::Dense { .. } => "dense",
            Op::LRelu { .. } => "lrelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat { .. } => "concat",
            Op::Reparam { .. } => "reparameterize",
            Op::HalfSquaredError { .. } => "half_squared_error",
            Op::GaussKl { .. } => "gaussian_kl",
            Op::L1Dist { .. } => "l1_distance",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at element {i} of node {} ({})",
                id.0,
                op.name()
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Result<NodeId> {
        self.push(Op::Input, value)
    }

    pub fn param_vec(&mut self, id: ParamId) -> Result<NodeId> {
        let value = self.params.value(id).to_vec();
        self.push(Op::ParamVec { id }, value)
    }

    pub fn dense(&mut self, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wp = self.params.get(w);
        let bp = self.params.get(b);
        let xv = &self.nodes[x.0].value;
        if wp.cols != xv.len() || wp.rows != bp.value.len() {
            return Err(Error::Shape(format!(
                "dense: weight '{}' is {}x{}, bias '{}' has {}, input has {}",
                wp.name,
                wp.rows,
                wp.cols,
                bp.name,
                bp.value.len(),
                xv.len()
            )));
        }
        let mut y = vec![0.0; wp.rows];
        kernels::dense_into(&mut y, &wp.value, &bp.value, xv);
        self.push(Op::Dense { w, b, x }, y)
    }

    pub fn lrelu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        let mut y = vec![0.0; xv.len()];
        kernels::lrelu_into(&mut y, xv, slope);
        self.push(Op::LRelu { x, slope }, y)
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    ) -> Result<NodeId> {
        let g = self.params.get(gamma);
        let b = self.params.get(beta);
        let xv = &self.nodes[x.0].value;
        if g.value.len() != xv.len() || b.value.len() != xv.len() {
            return Err(Error::Shape(format!(
                "layer_norm: input {} vs gamma '{}' {} / beta '{}' {}",
                xv.len(),
                g.name,
                g.value.len(),
                b.name,
                b.value.len()
            )));
        }
        let mut y = vec![0.0; xv.len()];
        kernels::layer_norm_into(&mut y, xv, &g.value, &b.value, eps);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
            y,
        )
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut v = Vec::with_capacity(self.len_of(a) + self.len_of(b));
        v.extend_from_slice(&self.nodes[a.0].value);
        v.extend_from_slice(&self.nodes[b.0].value);
        self.push(Op::Concat { a, b }, v)
    }

    pub fn reparameterize(
        &mut self,
        mean: NodeId,
        log_var: NodeId,
        noise: Vec<f64>,
    ) -> Result<NodeId> {
        let d = self.len_of(mean);
        if self.len_of(log_var) != d || noise.len() != d {
            return Err(Error::Shape(format!(
                "reparameterize: mean {}, log_var {}, noise {} must agree",
                d,
                self.len_of(log_var),
                noise.len()
            )));
        }
        let mv = &self.nodes[mean.0].value;
        let lv = &self.nodes[log_var.0].value;
        let z: Vec<f64> = mv
            .iter()
            .zip(lv)
            .zip(&noise)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        self.push(
            Op::Reparam {
                mean,
                log_var,
                noise,
            },
            z,
        )
    }

    pub fn half_squared_error(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId> {
        if self.len_of(x) != target.len() {
            return Err(Error::Shape(format!(
                "half_squared_error: prediction {} vs target {}",
                self.len_of(x),
                target.len()
            )));
        }
        let loss: f64 = self.nodes[x.0]
            .value
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * 0.5;
        self.push(
            Op::HalfSquaredError {
                x,
                target: target.to_vec(),
            },
            vec![loss],
        )
    }

    pub fn gaussian_kl(&mut self, mean: NodeId, log_var: NodeId) -> Result<NodeId> {
        if self.len_of(mean) != self.len_of(log_var) {
            return Err(Error::Shape(format!(
                "gaussian_kl: mean {} vs log_var {}",
                self.len_of(mean),
                self.len_of(log_var)
            )));
        }
        let mv = &self.nodes[mean.0].value;
        let lv = &self.nodes[log_var.0].value;
        let loss: f64 = mv
            .iter()
            .zip(lv)
            .map(|(m, l)| m * m + l.exp() - l - 1.0)
            .sum::<f64>()
            * 0.5;
        self.push(Op::GaussKl { mean, log_var }, vec![loss])
    }

    pub fn l1_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.len_of(a) != self.len_of(b) {
            return Err(Error::Shape(format!(
                "l1_distance: {} vs {}",
                self.len_of(a),
                self.len_of(b)
            )));
        }
        let loss: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| (x - y).abs())
            .sum();
        self.push(Op::L1Dist { a, b }, vec![loss])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(Op::Sum { x }, vec![s])
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in terms {
            if self.len_of(id) != 1 {
                return Err(Error::Shape(format!(
                    "weighted_sum: node {} is not a scalar",
                    id.0
                )));
            }
            total += w * self.nodes[id.0].value[0];
        }
        self.push(
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            vec![total],
        )
    }

    /// Reverse pass from a scalar loss node; returns `dloss/dparam` for every
    /// parameter reachable from it.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore> {
        if self.len_of(loss) != 1 {
            return Err(Error::Shape(format!(
                "backward: node {} is not a scalar loss",
                loss.0
            )));
        }
        let mut grads = self.params.grad_store();
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::ParamVec { id } => {
                    let buf = grads.accum(*id, adj.len());
                    for (g, a) in buf.iter_mut().zip(&adj) {
                        *g += a;
                    }
                }
                Op::Dense { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let n_in = xv.len();
                    {
                        let wg = grads.accum(*w, self.params.value(*w).len());
                        for (o, a) in adj.iter().enumerate() {
                            let row = &mut wg[o * n_in..(o + 1) * n_in];
                            for (g, xi) in row.iter_mut().zip(xv) {
                                *g += a * xi;
                            }
                        }
                    }
                    {
                        let bg = grads.accum(*b, adj.len());
                        for (g, a) in bg.iter_mut().zip(&adj) {
                            *g += a;
                        }
                    }
                    let wv = self.params.value(*w);
                    let xa = adjoint_buf(&mut adjoints, *x, n_in);
                    for (o, a) in adj.iter().enumerate() {
                        let row = &wv[o * n_in..(o + 1) * n_in];
                        for (g, wi) in xa.iter_mut().zip(row) {
                            *g += a * wi;
                        }
                    }
                }
                Op::LRelu { x, slope } => {
                    let xv = &self.nodes[x.0].value;
                    let xa = adjoint_buf(&mut adjoints, *x, xv.len());
                    for ((g, a), v) in xa.iter_mut().zip(&adj).zip(xv) {
                        *g += a * if *v > 0.0 { 1.0 } else { *slope };
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    eps,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len() as f64;
                    let (mean, var) = kernels::mean_var(xv);
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let gv = self.params.value(*gamma);
                    // Normalized input and gamma-scaled adjoint.
                    let x_hat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
                    let g_adj: Vec<f64> = adj.iter().zip(gv).map(|(a, g)| a * g).collect();
                    {
                        let gg = grads.accum(*gamma, gv.len());
                        for ((g, a), xh) in gg.iter_mut().zip(&adj).zip(&x_hat) {
                            *g += a * xh;
                        }
                    }
                    {
                        let bg = grads.accum(*beta, adj.len());
                        for (g, a) in bg.iter_mut().zip(&adj) {
                            *g += a;
                        }
                    }
                    let mean_g = g_adj.iter().sum::<f64>() / n;
                    let mean_gx = g_adj.iter().zip(&x_hat).map(|(g, xh)| g * xh).sum::<f64>() / n;
                    let xa = adjoint_buf(&mut adjoints, *x, xv.len());
                    for ((g, ga), xh) in xa.iter_mut().zip(&g_adj).zip(&x_hat) {
                        *g += (ga - mean_g - xh * mean_gx) * inv_std;
                    }
                }
                Op::Concat { a, b } => {
                    let la = self.len_of(*a);
                    {
                        let aa = adjoint_buf(&mut adjoints, *a, la);
                        for (g, v) in aa.iter_mut().zip(&adj[..la]) {
                            *g += v;
                        }
                    }
                    let bb = adjoint_buf(&mut adjoints, *b, adj.len() - la);
                    for (g, v) in bb.iter_mut().zip(&adj[la..]) {
                        *g += v;
                    }
                }
                Op::Reparam {
                    mean,
                    log_var,
                    noise,
                } => {
                    {
                        let ma = adjoint_buf(&mut adjoints, *mean, adj.len());
                        for (g, a) in ma.iter_mut().zip(&adj) {
                            *g += a;
                        }
                    }
                    let lv = &self.nodes[log_var.0].value;
                    let la = adjoint_buf(&mut adjoints, *log_var, adj.len());
                    for ((g, a), (l, e)) in la.iter_mut().zip(&adj).zip(lv.iter().zip(noise)) {
                        *g += a * 0.5 * (0.5 * l).exp() * e;
                    }
                }
                Op::HalfSquaredError { x, target } => {
                    let a = adj[0];
                    let xv = &self.nodes[x.0].value;
                    let xa = adjoint_buf(&mut adjoints, *x, xv.len());
                    for ((g, v), t) in xa.iter_mut().zip(xv).zip(target) {
                        *g += a * (v - t);
                    }
                }
                Op::GaussKl { mean, log_var } => {
                    let a = adj[0];
                    let mv = &self.nodes[mean.0].value;
                    let lv = &self.nodes[log_var.0].value;
                    {
                        let ma = adjoint_buf(&mut adjoints, *mean, mv.len());
                        for (g, m) in ma.iter_mut().zip(mv) {
                            *g += a * m;
                        }
                    }
                    let la = adjoint_buf(&mut adjoints, *log_var, lv.len());
                    for (g, l) in la.iter_mut().zip(lv) {
                        *g += a * 0.5 * (l.exp() - 1.0);
                    }
                }
                Op::L1Dist { a, b } => {
                    let s = adj[0];
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let signs: Vec<f64> = av
                        .iter()
                        .zip(bv)
                        .map(|(x, y)| {
                            if x > y {
                                1.0
                            } else if x < y {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    {
                        let aa = adjoint_buf(&mut adjoints, *a, av.len());
                        for (g, sg) in aa.iter_mut().zip(&signs) {
                            *g += s * sg;
                        }
                    }
                    let ba = adjoint_buf(&mut adjoints, *b, bv.len());
                    for (g, sg) in ba.iter_mut().zip(&signs) {
                        *g -= s * sg;
                    }
                }
                Op::Sum { x } => {
                    let a = adj[0];
                    let n = self.len_of(*x);
                    let xa = adjoint_buf(&mut adjoints, *x, n);
                    for g in xa.iter_mut() {
                        *g += a;
                    }
                }
                Op::WeightedSum { terms } => {
                    let a = adj[0];
                    for &(id, w) in terms {
                        let ta = adjoint_buf(&mut adjoints, id, 1);
                        ta[0] += a * w;
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn adjoint_buf(adjoints: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    adjoints[id.0].get_or_insert_with(|| vec![0.0; len])
}
