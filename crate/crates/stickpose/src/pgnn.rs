//! Gated message passing over the pose graph.
//!
//! Node states are per-joint score maps, initialized from the backbone's
//! unary stack. Each propagation step aggregates per-directed-edge
//! convolutions of the neighbors' previous states (weights are not shared
//! between edges), then applies a convolutional GRU gate per node (weights
//! not shared between nodes). All nodes update simultaneously: step-t states
//! depend only on step t-1, so any processing order gives bit-identical
//! results. After T steps the refined map is the final state plus the
//! initial one.
//!
//! A second mode replaces sum-aggregation and the GRU with a normalized
//! product of (convolved state + bias) terms, which reduces the network to a
//! product-form marginal update; [`mrf_marginal`] computes the same quantity
//! with plain loops and serves as its reference.

use crate::error::{Error, Result};
use crate::graph::PoseGraph;
use crate::rng::stream;
use crate::tape::{ConvSpec, Tape, Var};
use crate::tensor::Tensor;

/// Kernel and bias for one directed edge.
#[derive(Debug, Clone)]
pub struct EdgeParams {
    /// [C_h, C_h, k_m, k_m] (C_h = 1 unless hidden states are widened)
    pub kernel: Tensor,
    /// [C_h]
    pub bias: Tensor,
}

/// GRU gate parameters for one node. W_* convolve the aggregated message,
/// U_* convolve the previous state.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgnnMode {
    Gru,
    Mrf,
}

impl PgnnMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PgnnMode::Gru => "gru",
            PgnnMode::Mrf => "mrf",
        }
    }
}

impl std::str::FromStr for PgnnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(PgnnMode::Gru),
            "mrf" => Ok(PgnnMode::Mrf),
            other => Err(Error::Config(format!("unknown pgnn mode '{other}'"))),
        }
    }
}

/// Per-node channel lift (1 -> C_h) and projection (C_h -> 1), present only
/// when the hidden state is wider than the score map.
#[derive(Debug, Clone)]
pub struct NodeLift {
    pub lift_k: Tensor,
    pub lift_b: Tensor,
    pub proj_k: Tensor,
    pub proj_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct PgnnModel {
    graph: PoseGraph,
    directed: Vec<(usize, usize)>,
    /// Per node: (directed-edge index, source node), sorted by source.
    incoming: Vec<Vec<(usize, usize)>>,
    pub edges: Vec<EdgeParams>,
    pub gates: Vec<GateParams>,
    /// One per node when hidden_channels > 1, empty otherwise.
    pub lifts: Vec<NodeLift>,
    pub steps: usize,
    pub mode: PgnnMode,
    /// Apply the residual doubling even at T = 0 instead of passing the
    /// unary through untouched.
    pub literal_t0_residual: bool,
    msg_kernel: usize,
    gate_kernel: usize,
    hidden_channels: usize,
}

/// Tape handles for one bound copy of the parameters, in declaration order.
pub struct BoundPgnn {
    pub edges: Vec<(Var, Var)>,
    pub gates: Vec<BoundGates>,
    pub lifts: Vec<(Var, Var, Var, Var)>,
    zero_bias: Var,
}

pub struct BoundGates {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl BoundPgnn {
    /// The shared all-zero bias leaf (used for the U_* convolutions).
    pub fn zero_bias(&self) -> Var {
        self.zero_bias
    }

    /// Assemble a binding from vars laid out in `named_params` order.
    /// Used by gradient checking, which owns the leaves itself.
    pub fn from_vars(model: &PgnnModel, vars: &[Var], tape: &mut Tape) -> Result<BoundPgnn> {
        let expect =
            model.edges.len() * 2 + model.gates.len() * 9 + model.lifts.len() * 4;
        if vars.len() != expect {
            return Err(Error::Shape {
                op: "bind",
                detail: format!("expected {expect} parameter vars, got {}", vars.len()),
            });
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let edges = (0..model.edges.len()).map(|_| (next(), next())).collect();
        let gates = (0..model.gates.len())
            .map(|_| BoundGates {
                w_z: next(),
                u_z: next(),
                b_z: next(),
                w_r: next(),
                u_r: next(),
                b_r: next(),
                w_h: next(),
                u_h: next(),
                b_h: next(),
            })
            .collect();
        let lifts = (0..model.lifts.len()).map(|_| (next(), next(), next(), next())).collect();
        let zero_bias = tape.leaf(Tensor::zeros(&[model.hidden_channels]), false);
        Ok(BoundPgnn { edges, gates, lifts, zero_bias })
    }
}

impl PgnnModel {
    /// Single-channel hidden states (the default configuration).
    pub fn new(
        graph: PoseGraph,
        msg_kernel: usize,
        gate_kernel: usize,
        steps: usize,
        mode: PgnnMode,
        seed: u64,
    ) -> PgnnModel {
        Self::with_hidden_channels(graph, msg_kernel, gate_kernel, steps, mode, 1, seed)
    }

    /// Hidden states of `hidden_channels` channels per node. When wider than
    /// one channel, each node gets a 1x1 lift from its score map into the
    /// hidden width and a 1x1 projection back for the output residual. The
    /// product-form mode operates on score maps directly and requires a
    /// single channel.
    pub fn with_hidden_channels(
        graph: PoseGraph,
        msg_kernel: usize,
        gate_kernel: usize,
        steps: usize,
        mode: PgnnMode,
        hidden_channels: usize,
        seed: u64,
    ) -> PgnnModel {
        assert!(hidden_channels >= 1, "hidden_channels must be >= 1");
        assert!(
            mode == PgnnMode::Gru || hidden_channels == 1,
            "the product-form mode is defined on single-channel score maps"
        );
        let directed = graph.directed_edges();
        let mut incoming = vec![Vec::new(); graph.num_nodes()];
        for (ei, &(src, dst)) in directed.iter().enumerate() {
            incoming[dst].push((ei, src));
        }
        let c = hidden_channels;
        let kshape = |k: usize| vec![c, c, k, k];
        let edges = directed
            .iter()
            .map(|&(src, dst)| {
                let mut kernel = Tensor::uniform_fan_in(
                    &kshape(msg_kernel),
                    c * msg_kernel * msg_kernel,
                    &mut stream(seed, &format!("init/pgnn/edge/{src}->{dst}/kernel")),
                );
                if mode == PgnnMode::Mrf {
                    // product-form kernels act as conditional priors
                    for v in kernel.data_mut() {
                        *v = v.abs();
                    }
                }
                EdgeParams { kernel, bias: Tensor::zeros(&[c]) }
            })
            .collect();
        let gates = (0..graph.num_nodes())
            .map(|k| {
                let mk = |name: &str| {
                    Tensor::uniform_fan_in(
                        &kshape(gate_kernel),
                        c * gate_kernel * gate_kernel,
                        &mut stream(seed, &format!("init/pgnn/node/{k}/{name}")),
                    )
                };
                GateParams {
                    w_z: mk("w_z"),
                    u_z: mk("u_z"),
                    b_z: Tensor::zeros(&[c]),
                    w_r: mk("w_r"),
                    u_r: mk("u_r"),
                    b_r: Tensor::zeros(&[c]),
                    w_h: mk("w_h"),
                    u_h: mk("u_h"),
                    b_h: Tensor::zeros(&[c]),
                }
            })
            .collect();
        let lifts = if c > 1 {
            (0..graph.num_nodes())
                .map(|k| NodeLift {
                    lift_k: Tensor::uniform_fan_in(
                        &[c, 1, 1, 1],
                        1,
                        &mut stream(seed, &format!("init/pgnn/node/{k}/lift")),
                    ),
                    lift_b: Tensor::zeros(&[c]),
                    proj_k: Tensor::uniform_fan_in(
                        &[1, c, 1, 1],
                        c,
                        &mut stream(seed, &format!("init/pgnn/node/{k}/proj")),
                    ),
                    proj_b: Tensor::zeros(&[1]),
                })
                .collect()
        } else {
            Vec::new()
        };
        PgnnModel {
            graph,
            directed,
            incoming,
            edges,
            gates,
            lifts,
            steps,
            mode,
            literal_t0_residual: false,
            msg_kernel,
            gate_kernel,
            hidden_channels,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channels
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed
    }

    pub fn msg_kernel(&self) -> usize {
        self.msg_kernel
    }

    pub fn gate_kernel(&self) -> usize {
        self.gate_kernel
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters in a fixed order (edge kernels/biases by directed edge,
    /// then gate tensors by node). Binding and gradient readout use exactly
    /// this order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, &(src, dst)) in self.directed.iter().enumerate() {
            out.push((format!("pgnn/edge/{src}->{dst}/kernel"), &self.edges[i].kernel));
            out.push((format!("pgnn/edge/{src}->{dst}/bias"), &self.edges[i].bias));
        }
        for (k, g) in self.gates.iter().enumerate() {
            for (name, t) in [
                ("w_z", &g.w_z),
                ("u_z", &g.u_z),
                ("b_z", &g.b_z),
                ("w_r", &g.w_r),
                ("u_r", &g.u_r),
                ("b_r", &g.b_r),
                ("w_h", &g.w_h),
                ("u_h", &g.u_h),
                ("b_h", &g.b_h),
            ] {
                out.push((format!("pgnn/node/{k}/{name}"), t));
            }
        }
        for (k, l) in self.lifts.iter().enumerate() {
            out.push((format!("pgnn/node/{k}/lift/kernel"), &l.lift_k));
            out.push((format!("pgnn/node/{k}/lift/bias"), &l.lift_b));
            out.push((format!("pgnn/node/{k}/proj/kernel"), &l.proj_k));
            out.push((format!("pgnn/node/{k}/proj/bias"), &l.proj_b));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (e, &(src, dst)) in self.edges.iter_mut().zip(self.directed.iter()) {
            out.push((format!("pgnn/edge/{src}->{dst}/kernel"), &mut e.kernel));
            out.push((format!("pgnn/edge/{src}->{dst}/bias"), &mut e.bias));
        }
        for (k, g) in self.gates.iter_mut().enumerate() {
            for (name, t) in [
                ("w_z", &mut g.w_z),
                ("u_z", &mut g.u_z),
                ("b_z", &mut g.b_z),
                ("w_r", &mut g.w_r),
                ("u_r", &mut g.u_r),
                ("b_r", &mut g.b_r),
                ("w_h", &mut g.w_h),
                ("u_h", &mut g.u_h),
                ("b_h", &mut g.b_h),
            ] {
                out.push((format!("pgnn/node/{k}/{name}"), t));
            }
        }
        for (k, l) in self.lifts.iter_mut().enumerate() {
            out.push((format!("pgnn/node/{k}/lift/kernel"), &mut l.lift_k));
            out.push((format!("pgnn/node/{k}/lift/bias"), &mut l.lift_b));
            out.push((format!("pgnn/node/{k}/proj/kernel"), &mut l.proj_k));
            out.push((format!("pgnn/node/{k}/proj/bias"), &mut l.proj_b));
        }
        out
    }

    /// Put every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundPgnn {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                (
                    tape.leaf(e.kernel.clone(), requires_grad),
                    tape.leaf(e.bias.clone(), requires_grad),
                )
            })
            .collect();
        let gates = self
            .gates
            .iter()
            .map(|g| BoundGates {
                w_z: tape.leaf(g.w_z.clone(), requires_grad),
                u_z: tape.leaf(g.u_z.clone(), requires_grad),
                b_z: tape.leaf(g.b_z.clone(), requires_grad),
                w_r: tape.leaf(g.w_r.clone(), requires_grad),
                u_r: tape.leaf(g.u_r.clone(), requires_grad),
                b_r: tape.leaf(g.b_r.clone(), requires_grad),
                w_h: tape.leaf(g.w_h.clone(), requires_grad),
                u_h: tape.leaf(g.u_h.clone(), requires_grad),
                b_h: tape.leaf(g.b_h.clone(), requires_grad),
            })
            .collect();
        let lifts = self
            .lifts
            .iter()
            .map(|l| {
                (
                    tape.leaf(l.lift_k.clone(), requires_grad),
                    tape.leaf(l.lift_b.clone(), requires_grad),
                    tape.leaf(l.proj_k.clone(), requires_grad),
                    tape.leaf(l.proj_b.clone(), requires_grad),
                )
            })
            .collect();
        let zero_bias = tape.leaf(Tensor::zeros(&[self.hidden_channels]), false);
        BoundPgnn { edges, gates, lifts, zero_bias }
    }

    /// Bound parameter vars in `named_params` order.
    pub fn param_vars(&self, bound: &BoundPgnn) -> Vec<Var> {
        let mut out = Vec::new();
        for &(k, b) in &bound.edges {
            out.push(k);
            out.push(b);
        }
        for g in &bound.gates {
            out.extend_from_slice(&[g.w_z, g.u_z, g.b_z, g.w_r, g.u_r, g.b_r, g.w_h, g.u_h, g.b_h]);
        }
        for &(lk, lb, pk, pb) in &bound.lifts {
            out.extend_from_slice(&[lk, lb, pk, pb]);
        }
        out
    }

    /// h_k^0 per node: a view of unary channel k, lifted to the hidden
    /// width by the per-node 1x1 conv when one is configured.
    pub fn init_states(&self, tape: &mut Tape, bound: &BoundPgnn, unary: Var) -> Result<Vec<Var>> {
        let (_, states) = self.split_states(tape, bound, unary)?;
        Ok(states)
    }

    /// Raw channel views plus the configured initial states.
    fn split_states(
        &self,
        tape: &mut Tape,
        bound: &BoundPgnn,
        unary: Var,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let sh = tape.value(unary).shape().to_vec();
        if sh.len() != 4 {
            return Err(Error::Shape {
                op: "init_states",
                detail: format!("unary must be rank 4, got {:?}", sh),
            });
        }
        if sh[1] != self.num_nodes() {
            return Err(Error::JointCountMismatch {
                context: "pgnn unary channels",
                expected: self.num_nodes(),
                got: sh[1],
            });
        }
        let raw: Vec<Var> = (0..self.num_nodes())
            .map(|k| tape.slice_channel(unary, k))
            .collect::<Result<_>>()?;
        if self.hidden_channels == 1 {
            return Ok((raw.clone(), raw));
        }
        let spec = ConvSpec::same(1);
        let states = raw
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let (lk, lb, _, _) = bound.lifts[k];
                tape.conv2d(r, lk, lb, spec)
            })
            .collect::<Result<_>>()?;
        Ok((raw, states))
    }

    /// Score-map output for one node: the state itself at width one, or the
    /// per-node 1x1 projection of it otherwise.
    fn project(&self, tape: &mut Tape, bound: &BoundPgnn, k: usize, state: Var) -> Result<Var> {
        if self.hidden_channels == 1 {
            return Ok(state);
        }
        let (_, _, pk, pb) = bound.lifts[k];
        tape.conv2d(state, pk, pb, ConvSpec::same(1))
    }

    /// Sum of per-edge convolutions of the neighbors' states into node `k`
    /// (plus the per-edge bias). Nodes without neighbors receive zeros.
    pub fn aggregate(
        &self,
        tape: &mut Tape,
        bound: &BoundPgnn,
        states: &[Var],
        k: usize,
    ) -> Result<Var> {
        let spec = ConvSpec::same(self.msg_kernel);
        let mut acc: Option<Var> = None;
        for &(ei, src) in &self.incoming[k] {
            let (kernel, bias) = bound.edges[ei];
            let m = tape.conv2d(states[src], kernel, bias, spec)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, m)?,
                None => m,
            });
        }
        match acc {
            Some(v) => Ok(v),
            None => {
                let shape = tape.value(states[k]).shape().to_vec();
                Ok(tape.leaf(Tensor::zeros(&shape), false))
            }
        }
    }

    /// Run T propagation steps and return the refined stack [B, K, H, W].
    pub fn propagate(&self, tape: &mut Tape, bound: &BoundPgnn, unary: Var) -> Result<Var> {
        let order: Vec<usize> = (0..self.num_nodes()).collect();
        self.propagate_ordered(tape, bound, unary, &order)
    }

    /// Like [`propagate`](Self::propagate) but visiting nodes in the given
    /// order inside each step. Results are identical for every permutation;
    /// the parameter only exists so that can be demonstrated.
    pub fn propagate_ordered(
        &self,
        tape: &mut Tape,
        bound: &BoundPgnn,
        unary: Var,
        order: &[usize],
    ) -> Result<Var> {
        let k_nodes = self.num_nodes();
        {
            let mut seen = vec![false; k_nodes];
            if order.len() != k_nodes || order.iter().any(|&k| k >= k_nodes || std::mem::replace(&mut seen[k], true)) {
                return Err(Error::Graph(format!("order {:?} is not a permutation of 0..{k_nodes}", order)));
            }
        }
        let (raw, h0) = self.split_states(tape, bound, unary)?;
        if self.steps == 0 {
            if self.literal_t0_residual && self.mode == PgnnMode::Gru {
                let doubled: Vec<Var> = h0
                    .iter()
                    .zip(&raw)
                    .enumerate()
                    .map(|(k, (&h, &r))| {
                        let base = self.project(tape, bound, k, h)?;
                        tape.add(base, r)
                    })
                    .collect::<Result<_>>()?;
                return tape.concat_channels(&doubled);
            }
            return Ok(unary);
        }
        let mut states = h0;
        for _t in 1..=self.steps {
            let mut next = vec![None; k_nodes];
            for &k in order {
                let new_state = match self.mode {
                    PgnnMode::Gru => {
                        let x = self.aggregate(tape, bound, &states, k)?;
                        gru_update(tape, &bound.gates[k], states[k], x, bound.zero_bias, self.gate_kernel)?
                    }
                    PgnnMode::Mrf => self.mrf_update(tape, bound, &states, k)?,
                };
                next[k] = Some(new_state);
            }
            states = next.into_iter().map(|v| v.expect("every node visited")).collect();
        }
        match self.mode {
            PgnnMode::Gru => {
                let outs: Vec<Var> = states
                    .iter()
                    .zip(&raw)
                    .enumerate()
                    .map(|(k, (&ht, &r))| {
                        let base = self.project(tape, bound, k, ht)?;
                        tape.add(base, r)
                    })
                    .collect::<Result<_>>()?;
                tape.concat_channels(&outs)
            }
            // the product-form mode is already a marginal; no residual term
            PgnnMode::Mrf => tape.concat_channels(&states),
        }
    }

    /// Normalized product of (edge-convolved neighbor state + bias) terms.
    fn mrf_update(
        &self,
        tape: &mut Tape,
        bound: &BoundPgnn,
        states: &[Var],
        k: usize,
    ) -> Result<Var> {
        let spec = ConvSpec::same(self.msg_kernel);
        let mut acc: Option<Var> = None;
        for &(ei, src) in &self.incoming[k] {
            let (kernel, bias) = bound.edges[ei];
            let m = tape.conv2d(states[src], kernel, bias, spec)?;
            acc = Some(match acc {
                Some(a) => tape.mul(a, m)?,
                None => m,
            });
        }
        match acc {
            Some(prod) => {
                let z = tape.sum(prod)?;
                if tape.value(z).item() == 0.0 {
                    return Err(Error::DegenerateMarginal { node: k });
                }
                let inv = tape.recip(z)?;
                tape.scale_by(prod, inv)
            }
            None => {
                let shape = tape.value(states[k]).shape().to_vec();
                let cells = (shape[2] * shape[3]) as f64;
                Ok(tape.leaf(Tensor::filled(&shape, 1.0 / cells), false))
            }
        }
    }
}

/// One GRU step on maps:
/// z = sigmoid(W_z * x + U_z * h + b_z),
/// r = sigmoid(W_r * x + U_r * h + b_r),
/// h~ = tanh(W_h * x + U_h * (r . h) + b_h),
/// h' = (1 - z) . h + z . h~    (* = same-padding conv, . = Hadamard)
pub fn gru_update(
    tape: &mut Tape,
    gates: &BoundGates,
    h: Var,
    x: Var,
    zero_bias: Var,
    gate_kernel: usize,
) -> Result<Var> {
    let spec = ConvSpec::same(gate_kernel);
    let gate = |tape: &mut Tape, w, wb, u, a, b| -> Result<Var> {
        let wa = tape.conv2d(a, w, wb, spec)?;
        let ub = tape.conv2d(b, u, zero_bias, spec)?;
        tape.add(wa, ub)
    };
    let z_pre = gate(tape, gates.w_z, gates.b_z, gates.u_z, x, h)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, gates.w_r, gates.b_r, gates.u_r, x, h)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let h_pre = gate(tape, gates.w_h, gates.b_h, gates.u_h, x, rh)?;
    let h_tilde = tape.tanh(h_pre)?;
    let ones = {
        let shape = tape.value(h).shape().to_vec();
        tape.leaf(Tensor::filled(&shape, 1.0), false)
    };
    let one_minus_z = tape.sub(ones, z)?;
    let keep = tape.mul(one_minus_z, h)?;
    let take = tape.mul(z, h_tilde)?;
    tape.add(keep, take)
}

/// Mean-over-joints squared error: (1/K) sum_k sum_xy (pred - gt)^2.
pub fn heatmap_loss(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let sh = tape.value(pred).shape().to_vec();
    if sh.len() != 4 {
        return Err(Error::Shape {
            op: "heatmap_loss",
            detail: format!("expected rank 4, got {:?}", sh),
        });
    }
    let k = sh[1] as f64;
    let ssd = tape.sum_sq_diff(pred, gt)?;
    tape.scale(ssd, 1.0 / k)
}

/// Brute-force product-form marginal:
/// out_r = (1/Z) prod over neighbors v of (kernel_{v->r} * q_v + bias_{v->r}),
/// computed with direct nested loops, independent of the tape ops. Nodes
/// without neighbors get the uniform map. `edges` aligns with
/// `graph.directed_edges()`.
pub fn mrf_marginal(graph: &PoseGraph, unary: &Tensor, edges: &[EdgeParams]) -> Result<Tensor> {
    let sh = unary.shape();
    if sh.len() != 3 || sh[0] != graph.num_nodes() {
        return Err(Error::Shape {
            op: "mrf_marginal",
            detail: format!(
                "unary must be [K={}, H, W], got {:?}",
                graph.num_nodes(),
                sh
            ),
        });
    }
    let directed = graph.directed_edges();
    if edges.len() != directed.len() {
        return Err(Error::Shape {
            op: "mrf_marginal",
            detail: format!("{} edge params for {} directed edges", edges.len(), directed.len()),
        });
    }
    if unary.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Shape {
            op: "mrf_marginal",
            detail: "unary maps must be nonnegative".to_string(),
        });
    }
    for (i, e) in edges.iter().enumerate() {
        if e.kernel.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Shape {
                op: "mrf_marginal",
                detail: format!("kernel for directed edge {i} has negative entries"),
            });
        }
    }
    let (k_nodes, h, w) = (sh[0], sh[1], sh[2]);
    let mut out = vec![0.0; k_nodes * h * w];
    for r in 0..k_nodes {
        let inc: Vec<usize> = directed
            .iter()
            .enumerate()
            .filter_map(|(ei, &(_, dst))| (dst == r).then_some(ei))
            .collect();
        let plane = &mut out[r * h * w..(r + 1) * h * w];
        if inc.is_empty() {
            plane.fill(1.0 / (h * w) as f64);
            continue;
        }
        plane.fill(1.0);
        for ei in inc {
            let (src, _) = directed[ei];
            let q = &unary.data()[src * h * w..(src + 1) * h * w];
            let ker = &edges[ei].kernel;
            let km = ker.shape()[2];
            let pad = (km - 1) / 2;
            let bias = edges[ei].bias.item();
            let kd = ker.data();
            // direct quadruple loop, zero padding outside the map
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias;
                    for ky in 0..km {
                        let iy = y as i64 + ky as i64 - pad as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for kx in 0..km {
                            let ix = x as i64 + kx as i64 - pad as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            acc += kd[ky * km + kx] * q[iy as usize * w + ix as usize];
                        }
                    }
                    plane[y * w + x] *= acc;
                }
            }
        }
        let z: f64 = plane.iter().sum();
        if z == 0.0 {
            return Err(Error::DegenerateMarginal { node: r });
        }
        for v in plane.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(vec![k_nodes, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PoseGraph;

    fn stack(k: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(k * h * w);
        for c in 0..k {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor::new(vec![1, k, h, w], data).unwrap()
    }

    fn zero_params(model: &mut PgnnModel) {
        for (_, t) in model.named_params_mut() {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn init_states_are_unary_channels() {
        let model = PgnnModel::new(PoseGraph::chain(3), 3, 3, 1, PgnnMode::Gru, 0);
        let unary = stack(3, 4, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let u = tape.leaf(unary.clone(), false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        for (k, &s) in states.iter().enumerate() {
            let expect: Vec<f64> = unary.data()[k * 16..(k + 1) * 16].to_vec();
            assert_eq!(tape.value(s).data(), &expect[..]);
        }
    }

    #[test]
    fn init_states_rejects_channel_mismatch() {
        let model = PgnnModel::new(PoseGraph::chain(3), 3, 3, 1, PgnnMode::Gru, 0);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let u = tape.leaf(stack(2, 4, 4, |_, _, _| 0.0), false);
        assert!(matches!(
            model.init_states(&mut tape, &bound, u),
            Err(Error::JointCountMismatch { .. })
        ));
    }

    #[test]
    fn aggregate_identity_kernel_copies_neighbor() {
        let mut model = PgnnModel::new(PoseGraph::chain(2), 1, 1, 1, PgnnMode::Gru, 0);
        for e in &mut model.edges {
            e.kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
            e.bias = Tensor::zeros(&[1]);
        }
        let unary = stack(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64);
        let mut tape = Tape::new();
        let u = tape.leaf(unary, false);
        let bound = model.bind(&mut tape, false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        let x0 = model.aggregate(&mut tape, &bound, &states, 0).unwrap();
        assert_eq!(tape.value(x0).data(), tape.value(states[1]).data());
    }

    #[test]
    fn aggregate_is_linear_in_neighbors() {
        // node 1 of the chain 0-1-2 hears from both ends
        let mut model = PgnnModel::new(PoseGraph::chain(3), 1, 1, 1, PgnnMode::Gru, 0);
        let (a, b) = (2.5, -1.25);
        for (i, &(src, dst)) in model.directed_edges().to_vec().iter().enumerate() {
            let v = if dst == 1 && src == 0 {
                a
            } else if dst == 1 && src == 2 {
                b
            } else {
                0.0
            };
            model.edges[i].kernel = Tensor::new(vec![1, 1, 1, 1], vec![v]).unwrap();
        }
        let unary = stack(3, 2, 2, |c, y, x| (c + 1) as f64 * 0.5 + (y * 2 + x) as f64);
        let mut tape = Tape::new();
        let u = tape.leaf(unary.clone(), false);
        let bound = model.bind(&mut tape, false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        let x1 = model.aggregate(&mut tape, &bound, &states, 1).unwrap();
        let h0 = &unary.data()[0..4];
        let h2 = &unary.data()[8..12];
        let expect: Vec<f64> = h0.iter().zip(h2).map(|(p, q)| a * p + b * q).collect();
        assert_eq!(tape.value(x1).data(), &expect[..]);
    }

    #[test]
    fn aggregate_offset_tap_shifts_delta() {
        let mut model = PgnnModel::new(PoseGraph::chain(2), 3, 3, 1, PgnnMode::Gru, 0);
        // unit tap one column to the right of kernel center
        for e in &mut model.edges {
            let mut k = vec![0.0; 9];
            k[1 * 3 + 2] = 1.0;
            e.kernel = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
            e.bias = Tensor::zeros(&[1]);
        }
        let unary = stack(2, 5, 5, |c, y, x| if c == 1 && y == 2 && x == 2 { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let u = tape.leaf(unary, false);
        let bound = model.bind(&mut tape, false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        let x0 = model.aggregate(&mut tape, &bound, &states, 0).unwrap();
        let out = tape.value(x0).data();
        // peak moves one column toward smaller x
        assert_eq!(out[2 * 5 + 1], 1.0);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn gru_with_zero_params_halves_state() {
        let mut model = PgnnModel::new(PoseGraph::chain(2), 1, 1, 1, PgnnMode::Gru, 0);
        zero_params(&mut model);
        let unary = stack(2, 2, 2, |c, y, x| (1 + c + y + x) as f64);
        let mut tape = Tape::new();
        let u = tape.leaf(unary.clone(), false);
        let bound = model.bind(&mut tape, false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        let x = model.aggregate(&mut tape, &bound, &states, 0).unwrap();
        let h1 = gru_update(&mut tape, &bound.gates[0], states[0], x, bound.zero_bias, 1).unwrap();
        let expect: Vec<f64> = unary.data()[0..4].iter().map(|v| 0.5 * v).collect();
        assert_eq!(tape.value(h1).data(), &expect[..]);
    }

    #[test]
    fn saturated_update_gate_discards_state() {
        let mut model = PgnnModel::new(PoseGraph::chain(2), 1, 1, 1, PgnnMode::Gru, 0);
        zero_params(&mut model);
        for g in &mut model.gates {
            g.b_z = Tensor::new(vec![1], vec![1000.0]).unwrap();
        }
        let unary = stack(2, 2, 2, |_, y, x| 1.0 + (y * 2 + x) as f64);
        let mut tape = Tape::new();
        let u = tape.leaf(unary, false);
        let bound = model.bind(&mut tape, false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        let x = model.aggregate(&mut tape, &bound, &states, 0).unwrap();
        let h1 = gru_update(&mut tape, &bound.gates[0], states[0], x, bound.zero_bias, 1).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn t0_passes_unary_through() {
        let model = PgnnModel::new(PoseGraph::chain(3), 3, 3, 0, PgnnMode::Gru, 7);
        let unary = stack(3, 4, 4, |c, y, x| (c * 16 + y * 4 + x) as f64 * 0.01);
        let mut tape = Tape::new();
        let u = tape.leaf(unary.clone(), false);
        let bound = model.bind(&mut tape, false);
        let out = model.propagate(&mut tape, &bound, u).unwrap();
        assert_eq!(tape.value(out).data(), unary.data());
    }

    #[test]
    fn t0_literal_flag_doubles_unary() {
        let mut model = PgnnModel::new(PoseGraph::chain(3), 3, 3, 0, PgnnMode::Gru, 7);
        model.literal_t0_residual = true;
        let unary = stack(3, 4, 4, |c, y, x| (c * 16 + y * 4 + x) as f64 * 0.01);
        let mut tape = Tape::new();
        let u = tape.leaf(unary.clone(), false);
        let bound = model.bind(&mut tape, false);
        let out = model.propagate(&mut tape, &bound, u).unwrap();
        let expect: Vec<f64> = unary.data().iter().map(|v| v + v).collect();
        assert_eq!(tape.value(out).data(), &expect[..]);
    }

    #[test]
    fn node_order_permutation_is_bit_identical() {
        let model = PgnnModel::new(PoseGraph::loopy(&crate::skeleton::Skeleton::lsp14()), 3, 3, 2, PgnnMode::Gru, 3);
        let unary = stack(14, 6, 6, |c, y, x| ((c * 31 + y * 7 + x) % 11) as f64 * 0.1 - 0.4);
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let u = tape.leaf(unary.clone(), false);
            let bound = model.bind(&mut tape, false);
            let out = model.propagate_ordered(&mut tape, &bound, u, order).unwrap();
            tape.value(out).data().to_vec()
        };
        let forward: Vec<usize> = (0..14).collect();
        let reversed: Vec<usize> = (0..14).rev().collect();
        let shuffled: Vec<usize> = vec![7, 2, 9, 0, 13, 4, 11, 6, 1, 8, 3, 12, 5, 10];
        let base = run(&forward);
        for other in [reversed, shuffled] {
            let alt = run(&other);
            for (a, b) in base.iter().zip(&alt) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn zero_params_give_residual_identity() {
        for steps in 1..=3usize {
            let mut model =
                PgnnModel::new(PoseGraph::chain(4), 3, 3, steps, PgnnMode::Gru, 0);
            zero_params(&mut model);
            let unary = stack(4, 3, 3, |c, y, x| (c + y + x) as f64 * 0.25);
            let mut tape = Tape::new();
            let u = tape.leaf(unary.clone(), false);
            let bound = model.bind(&mut tape, false);
            let out = model.propagate(&mut tape, &bound, u).unwrap();
            let factor = 1.0 + 0.5f64.powi(steps as i32);
            let expect: Vec<f64> = unary.data().iter().map(|v| v * factor).collect();
            assert_eq!(tape.value(out).data(), &expect[..], "steps={steps}");
        }
    }

    #[test]
    fn isolated_node_gets_uniform_marginal() {
        let graph = PoseGraph::custom(3, vec![(0, 1)]).unwrap();
        let model = PgnnModel::new(graph.clone(), 3, 3, 1, PgnnMode::Mrf, 0);
        let unary = Tensor::new(
            vec![3, 2, 2],
            vec![0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25, 0.9, 0.05, 0.03, 0.02],
        )
        .unwrap();
        let out = mrf_marginal(&graph, &unary, &model.edges).unwrap();
        assert_eq!(&out.data()[8..12], &[0.25; 4]);
    }

    #[test]
    fn all_zero_product_is_degenerate() {
        let graph = PoseGraph::chain(2);
        let mut model = PgnnModel::new(graph.clone(), 1, 1, 1, PgnnMode::Mrf, 0);
        for e in &mut model.edges {
            e.kernel = Tensor::new(vec![1, 1, 1, 1], vec![0.0]).unwrap();
            e.bias = Tensor::zeros(&[1]);
        }
        let unary = Tensor::new(vec![2, 2, 2], vec![0.25; 8]).unwrap();
        assert!(matches!(
            mrf_marginal(&graph, &unary, &model.edges),
            Err(Error::DegenerateMarginal { .. })
        ));
        // same degeneracy through the tape route
        let mut tape = Tape::new();
        let u = tape.leaf(stack(2, 2, 2, |_, _, _| 0.25), false);
        let bound = model.bind(&mut tape, false);
        assert!(matches!(
            model.propagate(&mut tape, &bound, u),
            Err(Error::DegenerateMarginal { .. })
        ));
    }

    #[test]
    fn shifted_delta_through_mrf_chain() {
        // 2-node chain, q_1 a delta, kernel a single off-center tap, b = 0:
        // the marginal of node 0 is the shifted delta
        let graph = PoseGraph::chain(2);
        let mut model = PgnnModel::new(graph.clone(), 3, 3, 1, PgnnMode::Mrf, 0);
        for e in &mut model.edges {
            let mut k = vec![0.0; 9];
            k[1 * 3 + 0] = 1.0; // tap one column left of center
            e.kernel = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
            e.bias = Tensor::zeros(&[1]);
        }
        let mut unary = vec![0.0; 2 * 4 * 4];
        unary[0..16].iter_mut().for_each(|v| *v = 1.0 / 16.0);
        unary[16 + 1 * 4 + 2] = 1.0; // delta at (y=1, x=2) in node 1
        let unary = Tensor::new(vec![2, 4, 4], unary).unwrap();
        let out = mrf_marginal(&graph, &unary, &model.edges).unwrap();
        let plane0 = &out.data()[0..16];
        // out[y][x] = q1[y][x-1]: delta lands at (1, 3), normalized to 1
        assert_eq!(plane0[1 * 4 + 3], 1.0);
        assert_eq!(plane0.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn wide_hidden_state_lifts_and_projects() {
        let model = PgnnModel::with_hidden_channels(
            PoseGraph::chain(3),
            3,
            3,
            2,
            PgnnMode::Gru,
            4,
            8,
        );
        assert_eq!(model.lifts.len(), 3);
        let unary = stack(3, 5, 5, |c, y, x| ((c * 17 + y * 3 + x) % 7) as f64 * 0.1);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let u = tape.leaf(unary.clone(), false);
        let states = model.init_states(&mut tape, &bound, u).unwrap();
        for &s in &states {
            assert_eq!(tape.value(s).shape(), &[1, 4, 5, 5]);
        }
        let out = model.propagate(&mut tape, &bound, u).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 3, 5, 5]);
        // param list covers the lift/proj tensors
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n.ends_with("lift/kernel")));
        assert!(names.iter().any(|n| n.ends_with("proj/bias")));
        assert_eq!(names.len(), model.param_vars(&bound).len());
    }

    #[test]
    fn wide_hidden_state_still_passes_unary_at_t0() {
        let model = PgnnModel::with_hidden_channels(
            PoseGraph::chain(2),
            1,
            1,
            0,
            PgnnMode::Gru,
            3,
            8,
        );
        let unary = stack(2, 3, 3, |c, y, x| (c + y * 3 + x) as f64 * 0.2);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let u = tape.leaf(unary.clone(), false);
        let out = model.propagate(&mut tape, &bound, u).unwrap();
        assert_eq!(tape.value(out).data(), unary.data());
    }

    #[test]
    fn loss_zero_when_equal_and_offset_rule() {
        let (k, h, w) = (4usize, 3usize, 5usize);
        let gt = stack(k, h, w, |c, y, x| (c + y + x) as f64 * 0.1);
        let mut tape = Tape::new();
        let g = tape.leaf(gt.clone(), false);
        let p_eq = tape.leaf(gt.clone(), false);
        let l0 = heatmap_loss(&mut tape, p_eq, g).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);

        let c = 0.3;
        let off = Tensor::new(
            gt.shape().to_vec(),
            gt.data().iter().map(|v| v + c).collect(),
        )
        .unwrap();
        let p_off = tape.leaf(off, false);
        let l1 = heatmap_loss(&mut tape, p_off, g).unwrap();
        let expect = (h * w) as f64 * c * c;
        assert!((tape.value(l1).item() - expect).abs() < 1e-9);
    }
}
