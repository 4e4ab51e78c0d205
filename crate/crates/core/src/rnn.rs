//! Small recurrent-cell space: two sources (`x_t`, `h_{t−1}`) feeding K = 4
//! internal nodes, unrolled into a many-to-many regression network.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, ParamId, Scalar, Tensor};
use crate::signals::CHANNEL_CHOICES;

pub const K: usize = 4;
pub const SOURCE_X: usize = 0;
pub const SOURCE_H: usize = 1;
pub const SOURCES: usize = 2;
const MAX_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnOp {
    /// Dense map with bias.
    LinearX,
    /// Dense map without bias.
    LinearH,
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Identity,
}

impl RnnOp {
    pub const UNARY: [RnnOp; 5] = [RnnOp::LinearX, RnnOp::LinearH, RnnOp::Tanh, RnnOp::Sigmoid, RnnOp::Identity];
    pub const BINARY: [RnnOp; 2] = [RnnOp::Add, RnnOp::Mul];

    pub fn arity(self) -> usize {
        match self {
            RnnOp::Add | RnnOp::Mul => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RnnOp::LinearX => "linear_x",
            RnnOp::LinearH => "linear_h",
            RnnOp::Add => "add",
            RnnOp::Mul => "mul",
            RnnOp::Tanh => "tanh",
            RnnOp::Sigmoid => "sigmoid",
            RnnOp::Identity => "identity",
        }
    }

    fn from_name(s: &str) -> Option<RnnOp> {
        Self::UNARY.iter().chain(&Self::BINARY).copied().find(|op| op.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RnnNode {
    pub op: RnnOp,
    /// Earlier node ids (sources are 0 = `x_t`, 1 = `h_{t−1}`); binary inputs sorted and distinct.
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RnnGenotype {
    /// Internal nodes; node `i` of this list has id `i + 2`.
    pub nodes: Vec<RnnNode>,
    pub output: usize,
}

impl RnnGenotype {
    /// `h_t = tanh(W_x x_t + b + W_h h_{t−1})`.
    pub fn vanilla() -> Self {
        Self {
            nodes: vec![
                RnnNode { op: RnnOp::LinearX, inputs: vec![SOURCE_X] },
                RnnNode { op: RnnOp::LinearH, inputs: vec![SOURCE_H] },
                RnnNode { op: RnnOp::Add, inputs: vec![2, 3] },
                RnnNode { op: RnnOp::Tanh, inputs: vec![4] },
            ],
            output: 5,
        }
    }

    fn check_structure(&self) -> Result<()> {
        if self.nodes.len() != K {
            return Err(Error::InvalidSpec(format!("rnn cell needs {K} nodes, got {}", self.nodes.len())));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let id = i + SOURCES;
            let ok_arity = node.inputs.len() == node.op.arity();
            let ok_order = node.inputs.iter().all(|&j| j < id);
            let ok_binary = node.inputs.len() < 2 || node.inputs[0] < node.inputs[1];
            if !(ok_arity && ok_order && ok_binary) {
                return Err(Error::InvalidSpec(format!("rnn node {id} has malformed inputs {:?}", node.inputs)));
            }
        }
        if !(SOURCES..SOURCES + K).contains(&self.output) {
            return Err(Error::InvalidSpec(format!("rnn output {} is not an internal node", self.output)));
        }
        Ok(())
    }

    /// Which sources each node depends on: `(depends on x, depends on h)`.
    fn dependencies(&self) -> Vec<(bool, bool)> {
        let mut deps = vec![(true, false), (false, true)];
        for node in &self.nodes {
            let d = node
                .inputs
                .iter()
                .fold((false, false), |acc, &j| (acc.0 || deps[j].0, acc.1 || deps[j].1));
            deps.push(d);
        }
        deps
    }

    /// Well-formed and the output depends on both `x_t` and `h_{t−1}`.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        let (x, h) = self.dependencies()[self.output];
        if x && h {
            Ok(())
        } else {
            Err(Error::Degenerate(format!(
                "rnn cell {self} output ignores {}",
                if x { "h" } else { "x" }
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Ids of the nodes the output depends on, in increasing order.
    fn live_nodes(&self) -> Vec<bool> {
        let mut live = vec![false; SOURCES + K];
        live[self.output] = true;
        for id in (SOURCES..SOURCES + K).rev() {
            if live[id] {
                for &j in &self.nodes[id - SOURCES].inputs {
                    live[j] = true;
                }
            }
        }
        live
    }
}

impl fmt::Display for RnnGenotype {
    /// `op:in[,in]|...>output`, e.g. `linear_x:0|linear_h:1|add:2,3|tanh:4>5`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            let inputs: Vec<String> = node.inputs.iter().map(|j| j.to_string()).collect();
            write!(f, "{}:{}", node.op.name(), inputs.join(","))?;
        }
        write!(f, ">{}", self.output)
    }
}

impl FromStr for RnnGenotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("malformed rnn genotype id {s:?}"));
        let (body, out) = s.trim().rsplit_once('>').ok_or_else(bad)?;
        let output = out.parse().map_err(|_| bad())?;
        let mut nodes = Vec::new();
        for part in body.split('|') {
            let (op, inputs) = part.split_once(':').ok_or_else(bad)?;
            let op = RnnOp::from_name(op).ok_or_else(bad)?;
            let inputs = inputs
                .split(',')
                .map(|v| v.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            nodes.push(RnnNode { op, inputs });
        }
        let g = RnnGenotype { nodes, output };
        g.check_structure().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(g)
    }
}

/// Uniform over the wirings of node `id`: each unary op on any earlier node,
/// or each binary op on any unordered pair of distinct earlier nodes.
fn sample_node<R: Rng + ?Sized>(id: usize, rng: &mut R) -> RnnNode {
    let unary = RnnOp::UNARY.len() * id;
    let pairs = id * (id - 1) / 2;
    let pick = rng.random_range(0..unary + RnnOp::BINARY.len() * pairs);
    if pick < unary {
        return RnnNode {
            op: RnnOp::UNARY[pick / id],
            inputs: vec![pick % id],
        };
    }
    let rest = pick - unary;
    let op = RnnOp::BINARY[rest / pairs];
    let mut p = rest % pairs;
    for a in 0..id {
        let span = id - a - 1;
        if p < span {
            return RnnNode {
                op,
                inputs: vec![a, a + 1 + p],
            };
        }
        p -= span;
    }
    unreachable!("pair index within range")
}

fn sample_output<R: Rng + ?Sized>(rng: &mut R) -> usize {
    rng.random_range(SOURCES..SOURCES + K)
}

/// Uniform over non-degenerate wirings by rejection.
pub fn sample_rnn_genotype<R: Rng + ?Sized>(rng: &mut R) -> Result<RnnGenotype> {
    for _ in 0..MAX_RETRIES {
        let g = RnnGenotype {
            nodes: (0..K).map(|i| sample_node(i + SOURCES, rng)).collect(),
            output: sample_output(rng),
        };
        if g.is_valid() {
            return Ok(g);
        }
    }
    Err(Error::SamplingExhausted(MAX_RETRIES))
}

/// Resamples each node (and the output pointer) with probability 1/K,
/// retrying until the child is non-degenerate.
pub fn mutate_rnn_genotype<R: Rng + ?Sized>(g: &RnnGenotype, rng: &mut R) -> Result<RnnGenotype> {
    let rate = 1.0 / K as f64;
    for _ in 0..MAX_RETRIES {
        let mut child = g.clone();
        for (i, node) in child.nodes.iter_mut().enumerate() {
            if rng.random_bool(rate) {
                *node = sample_node(i + SOURCES, rng);
            }
        }
        if rng.random_bool(rate) {
            child.output = sample_output(rng);
        }
        if child.is_valid() {
            return Ok(child);
        }
    }
    Err(Error::SamplingExhausted(MAX_RETRIES))
}

/// Unrolled network. Input slot 0 is `h_0`; slots `1..=l` are `x_1..x_l`,
/// each `[b, d]`. Outputs are `h_1..h_l`.
#[derive(Clone, Debug)]
pub struct RnnNet<T> {
    pub graph: Graph<T>,
    pub steps: usize,
    pub width: usize,
}

impl<T: Scalar> RnnNet<T> {
    /// Input list for a `[l, b, d]` sequence tensor, with `h_0 = 0`.
    pub fn inputs(&self, sequence: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let shape = sequence.shape();
        if shape.len() != 3 || shape[0] != self.steps || shape[2] != self.width {
            return Err(Error::ShapeMismatch {
                context: "rnn input sequence",
                expected: vec![self.steps, 0, self.width],
                got: shape.to_vec(),
            });
        }
        let b = shape[1];
        let mut inputs = vec![Tensor::zeros(&[b, self.width])];
        for t in 0..self.steps {
            inputs.push(sequence.slice_outer(t, t + 1).reshape(&[b, self.width])?);
        }
        Ok(inputs)
    }
}

/// Unrolls a validated genotype over `l` steps with weights shared across time.
pub fn build_rnn<T: Scalar>(g: &RnnGenotype, d: usize, l: usize) -> Result<RnnNet<T>> {
    g.validate()?;
    build_rnn_unchecked(g, d, l)
}

/// Like [`build_rnn`] but only requires a well-formed genotype, so cells that
/// ignore a source can still be unrolled.
pub fn build_rnn_unchecked<T: Scalar>(g: &RnnGenotype, d: usize, l: usize) -> Result<RnnNet<T>> {
    g.check_structure()?;
    if !CHANNEL_CHOICES.contains(&d) {
        return Err(Error::InvalidSpec(format!("rnn width {d} not in {CHANNEL_CHOICES:?}")));
    }
    if l == 0 {
        return Err(Error::InvalidSpec("rnn needs at least one step".into()));
    }
    let live = g.live_nodes();
    let mut graph = Graph::new();
    let mut weights: Vec<Option<(ParamId, Option<ParamId>)>> = vec![None; K];
    for (i, node) in g.nodes.iter().enumerate() {
        if !live[i + SOURCES] {
            continue;
        }
        weights[i] = match node.op {
            RnnOp::LinearX => Some((graph.add_param(&[d, d], Some(d)), Some(graph.add_param(&[d], None)))),
            RnnOp::LinearH => Some((graph.add_param(&[d, d], Some(d)), None)),
            _ => None,
        };
    }

    let mut h = graph.input(0);
    let mut outputs = Vec::with_capacity(l);
    for t in 0..l {
        let x = graph.input(t + 1);
        let mut values: Vec<NodeId> = vec![x, h];
        for (i, node) in g.nodes.iter().enumerate() {
            if !live[i + SOURCES] {
                values.push(x);
                continue;
            }
            let a = values[node.inputs[0]];
            let v = match node.op {
                RnnOp::LinearX | RnnOp::LinearH => {
                    let (w, b) = weights[i].expect("linear node has weights");
                    graph.linear_shared(a, w, b)
                }
                RnnOp::Add => graph.add(&[a, values[node.inputs[1]]]),
                RnnOp::Mul => graph.mul(a, values[node.inputs[1]]),
                RnnOp::Tanh => graph.tanh(a),
                RnnOp::Sigmoid => graph.sigmoid(a),
                RnnOp::Identity => graph.identity(a),
            };
            values.push(v);
        }
        h = values[g.output];
        outputs.push(h);
    }
    graph.set_outputs(outputs);
    Ok(RnnNet {
        graph,
        steps: l,
        width: d,
    })
}
