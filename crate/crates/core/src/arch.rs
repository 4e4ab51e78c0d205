//! Cell-based CNN space: a 4-node cell DAG with one operation per edge,
//! stacked into a multi-stage fully convolutional backbone.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellOp {
    None,
    Skip,
    Conv1x1,
    Conv3x3,
    Avgpool3x3,
}

impl CellOp {
    pub const ALL: [CellOp; 5] = [
        CellOp::None,
        CellOp::Skip,
        CellOp::Conv1x1,
        CellOp::Conv3x3,
        CellOp::Avgpool3x3,
    ];

    pub fn digit(self) -> u8 {
        self as u8
    }

    pub fn from_digit(d: u8) -> Option<CellOp> {
        Self::ALL.get(d as usize).copied()
    }
}

/// Edge order of the genotype: `(from, to)` node pairs.
pub const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Number of distinct genotypes, `5^6`.
pub const SPACE_SIZE: usize = 15_625;

/// One operation per cell edge, in [`EDGES`] order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CnnGenotype {
    pub edges: [CellOp; 6],
}

impl CnnGenotype {
    pub fn uniform(op: CellOp) -> Self {
        Self { edges: [op; 6] }
    }

    /// Position in the space, reading the edge digits as a base-5 number.
    pub fn index(&self) -> usize {
        self.edges.iter().fold(0, |acc, op| acc * 5 + op.digit() as usize)
    }

    pub fn from_index(mut index: usize) -> Result<Self> {
        if index >= SPACE_SIZE {
            return Err(Error::Parse(format!("genotype index {index} out of range")));
        }
        let mut edges = [CellOp::None; 6];
        for slot in edges.iter_mut().rev() {
            *slot = CellOp::ALL[index % 5];
            index /= 5;
        }
        Ok(Self { edges })
    }

    /// Canonical id: the six base-5 digits, e.g. `"013420"`.
    pub fn id(&self) -> String {
        self.edges.iter().map(|op| char::from(b'0' + op.digit())).collect()
    }

    /// Non-degenerate iff some path of non-`none` edges joins node 0 to node 3.
    pub fn validate(&self) -> Result<()> {
        if self.useful_nodes()[3] {
            Ok(())
        } else {
            Err(Error::Degenerate(format!("cell {} has no input-output path", self.id())))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Nodes lying on some node-0 → node-3 path.
    fn useful_nodes(&self) -> [bool; 4] {
        let mut from_input = [true, false, false, false];
        for (&(i, j), op) in EDGES.iter().zip(&self.edges) {
            if *op != CellOp::None && from_input[i] {
                from_input[j] = true;
            }
        }
        let mut to_output = [false, false, false, true];
        for (&(i, j), op) in EDGES.iter().zip(&self.edges).rev() {
            if *op != CellOp::None && to_output[j] {
                to_output[i] = true;
            }
        }
        let mut useful = [false; 4];
        for n in 0..4 {
            useful[n] = from_input[n] && to_output[n];
        }
        useful
    }
}

impl fmt::Display for CnnGenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for CnnGenotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 6 {
            return Err(Error::Parse(format!("genotype id {s:?} must have 6 digits")));
        }
        let mut edges = [CellOp::None; 6];
        for (slot, ch) in edges.iter_mut().zip(s.bytes()) {
            *slot = ch
                .checked_sub(b'0')
                .and_then(CellOp::from_digit)
                .ok_or_else(|| Error::Parse(format!("genotype id {s:?} has a non base-5 digit")))?;
        }
        Ok(Self { edges })
    }
}

pub fn sample_genotype<R: Rng + ?Sized>(rng: &mut R) -> CnnGenotype {
    let mut edges = [CellOp::None; 6];
    for e in &mut edges {
        *e = CellOp::ALL[rng.random_range(0..5)];
    }
    CnnGenotype { edges }
}

/// Resamples each edge uniformly over all five ops with probability 1/6.
/// The result may equal the parent and may be degenerate.
pub fn mutate_genotype<R: Rng + ?Sized>(g: &CnnGenotype, rng: &mut R) -> CnnGenotype {
    mutate_genotype_traced(g, rng).0
}

/// [`mutate_genotype`] that also reports which edges were resampled.
pub fn mutate_genotype_traced<R: Rng + ?Sized>(g: &CnnGenotype, rng: &mut R) -> (CnnGenotype, [bool; 6]) {
    let mut child = *g;
    let mut resampled = [false; 6];
    let rate = 1.0 / EDGES.len() as f64;
    for (e, hit) in child.edges.iter_mut().zip(&mut resampled) {
        if rng.random_bool(rate) {
            *e = CellOp::ALL[rng.random_range(0..5)];
            *hit = true;
        }
    }
    (child, resampled)
}

/// Macro skeleton around the cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub stem_channels: usize,
    pub cells_per_stage: usize,
    /// One entry per stage; its length is the stage count N.
    pub stage_channels: Vec<usize>,
    pub input_size: usize,
    pub target_size: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            stem_channels: 16,
            cells_per_stage: 1,
            stage_channels: vec![16, 32, 64],
            input_size: 32,
            target_size: 8,
        }
    }
}

impl MacroConfig {
    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Spatial size of stage `i` (0-based): the input halves at every reduction.
    pub fn tap_size(&self, i: usize) -> usize {
        self.input_size >> i
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n == 0 || self.cells_per_stage == 0 || self.stem_channels == 0 {
            return Err(Error::InvalidSpec("macro config needs ≥1 stage, cell and stem channel".into()));
        }
        for i in 0..n {
            let s = self.tap_size(i);
            if s == 0 || s << i != self.input_size || s < self.target_size || !s.is_multiple_of(self.target_size) {
                return Err(Error::InvalidSpec(format!(
                    "stage {} size {s} incompatible with target size {}",
                    i + 1,
                    self.target_size
                )));
            }
        }
        Ok(())
    }
}

/// Backbone graph with its stage taps `ℱ_i` and adapter outputs `ℱ̂_i`.
/// Graph outputs are the adapters of the supervised stages, in stage order.
#[derive(Clone, Debug)]
pub struct BackboneNet<T> {
    pub graph: Graph<T>,
    pub stem: NodeId,
    pub taps: Vec<NodeId>,
    /// Stage index (0-based) of each graph output.
    pub supervised: Vec<usize>,
}

fn conv_bn_relu<T: Scalar>(g: &mut Graph<T>, x: NodeId, cin: usize, cout: usize, k: usize) -> NodeId {
    let c = g.conv2d(x, cin, cout, k, 1, k / 2);
    let b = g.batch_norm(c, cout);
    g.relu(b)
}

fn build_cell<T: Scalar>(g: &mut Graph<T>, x: NodeId, geno: &CnnGenotype, channels: usize) -> NodeId {
    let useful = geno.useful_nodes();
    let mut values = [x; 4];
    for j in 1..4 {
        if !useful[j] {
            continue;
        }
        let mut incoming = Vec::new();
        for (&(i, to), &op) in EDGES.iter().zip(&geno.edges) {
            if to != j || !useful[i] {
                continue;
            }
            let src = values[i];
            let v = match op {
                CellOp::None => continue,
                CellOp::Skip => src,
                CellOp::Conv1x1 => conv_bn_relu(g, src, channels, channels, 1),
                CellOp::Conv3x3 => conv_bn_relu(g, src, channels, channels, 3),
                CellOp::Avgpool3x3 => g.avg_pool(src, 3, 1, 1),
            };
            incoming.push(v);
        }
        values[j] = g.add(&incoming);
    }
    values[3]
}

/// Stem, stages of cells and reductions. Returns `(stem, taps)`.
fn build_trunk<T: Scalar>(
    g: &mut Graph<T>,
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
) -> Result<(NodeId, Vec<NodeId>)> {
    geno.validate()?;
    macro_cfg.validate()?;
    let x = g.input(0);
    let stem = conv_bn_relu(g, x, 3, macro_cfg.stem_channels, 3);
    let mut cur = stem;
    let mut channels = macro_cfg.stem_channels;
    let mut taps = Vec::with_capacity(macro_cfg.stages());
    for (i, &width) in macro_cfg.stage_channels.iter().enumerate() {
        if i > 0 {
            cur = g.avg_pool(cur, 2, 2, 0);
        }
        if width != channels {
            cur = conv_bn_relu(g, cur, channels, width, 1);
            channels = width;
        }
        for _ in 0..macro_cfg.cells_per_stage {
            cur = build_cell(g, cur, geno, channels);
        }
        taps.push(cur);
    }
    Ok((stem, taps))
}

/// Fully convolutional backbone with adapters `M_i` (average pooling down to
/// the target size, then a 1×1 convolution to `task_channels[i]`). Stages with
/// `task_channels[i] == 0` get no adapter.
pub fn build_backbone<T: Scalar>(
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
    task_channels: &[usize],
) -> Result<BackboneNet<T>> {
    if task_channels.len() != macro_cfg.stages() {
        return Err(Error::InvalidSpec(format!(
            "{} target stages for a {}-stage backbone",
            task_channels.len(),
            macro_cfg.stages()
        )));
    }
    let mut g = Graph::new();
    let (stem, taps) = build_trunk(&mut g, geno, macro_cfg)?;
    let mut outputs = Vec::new();
    let mut supervised = Vec::new();
    for (i, (&tap, &cout)) in taps.iter().zip(task_channels).enumerate() {
        if cout == 0 {
            continue;
        }
        let factor = macro_cfg.tap_size(i) / macro_cfg.target_size;
        let pooled = if factor > 1 { g.avg_pool(tap, factor, factor, 0) } else { tap };
        outputs.push(g.conv2d(pooled, macro_cfg.stage_channels[i], cout, 1, 1, 0));
        supervised.push(i);
    }
    g.set_outputs(outputs);
    Ok(BackboneNet {
        graph: g,
        stem,
        taps,
        supervised,
    })
}

/// Backbone followed by global average pooling and a linear classifier.
pub fn build_classifier<T: Scalar>(geno: &CnnGenotype, macro_cfg: &MacroConfig, classes: usize) -> Result<Graph<T>> {
    let mut g = Graph::new();
    let (_, taps) = build_trunk(&mut g, geno, macro_cfg)?;
    let last = *taps.last().expect("at least one stage");
    let pooled = g.global_avg_pool(last);
    let width = *macro_cfg.stage_channels.last().expect("at least one stage");
    let logits = g.linear(pooled, width, classes, true);
    g.set_outputs(vec![logits]);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::Seed;

    fn geno(ops: [CellOp; 6]) -> CnnGenotype {
        CnnGenotype { edges: ops }
    }

    #[test]
    fn id_examples() {
        let g = geno([
            CellOp::None,
            CellOp::Skip,
            CellOp::Avgpool3x3,
            CellOp::Conv3x3,
            CellOp::Conv1x1,
            CellOp::None,
        ]);
        assert_eq!(g.id(), "014320");
        assert_eq!("014320".parse::<CnnGenotype>().unwrap(), g);
        assert!("01432".parse::<CnnGenotype>().is_err());
        assert!("014325".parse::<CnnGenotype>().is_err());
        assert_eq!(CnnGenotype::from_index(SPACE_SIZE - 1).unwrap(), CnnGenotype::uniform(CellOp::Avgpool3x3));
        assert!(CnnGenotype::from_index(SPACE_SIZE).is_err());
    }

    #[test]
    fn json_edges_format() {
        let g = CnnGenotype::uniform(CellOp::Conv3x3);
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"edges":["conv3x3","conv3x3","conv3x3","conv3x3","conv3x3","conv3x3"]}"#);
        assert_eq!(serde_json::from_str::<CnnGenotype>(&json).unwrap(), g);
    }

    #[test]
    fn validate_examples() {
        assert!(matches!(
            CnnGenotype::uniform(CellOp::None).validate(),
            Err(Error::Degenerate(_))
        ));
        assert!(CnnGenotype::uniform(CellOp::Skip).validate().is_ok());
        let mut single = CnnGenotype::uniform(CellOp::None);
        single.edges[2] = CellOp::Conv3x3;
        assert!(single.validate().is_ok());
        // 0→1 and 2→3 without a 1→2 link is disconnected
        let mut broken = CnnGenotype::uniform(CellOp::None);
        broken.edges[0] = CellOp::Skip;
        broken.edges[5] = CellOp::Skip;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn default_backbone_shapes() {
        let net = build_backbone::<f32>(&CnnGenotype::uniform(CellOp::Conv1x1), &MacroConfig::default(), &[16, 32, 64])
            .unwrap();
        let input = Tensor::full(&[2, 3, 32, 32], 0.5);
        let cache = net.graph.forward(&[input]).unwrap();
        let taps: Vec<usize> = net.taps.iter().map(|&t| cache.value(t).shape()[2]).collect();
        assert_eq!(taps, vec![32, 16, 8]);
        let outs: Vec<Vec<usize>> = cache.outputs().iter().map(|o| o.shape().to_vec()).collect();
        assert_eq!(outs, vec![vec![2, 16, 8, 8], vec![2, 32, 8, 8], vec![2, 64, 8, 8]]);
    }

    #[test]
    fn all_skip_cell_accumulates_paths() {
        let net =
            build_backbone::<f64>(&CnnGenotype::uniform(CellOp::Skip), &MacroConfig::default(), &[0, 0, 16]).unwrap();
        let mut graph = net.graph.clone();
        graph.init_params(&mut Seed(1).rng());
        let cache = graph.forward(&[Tensor::full(&[2, 3, 32, 32], 0.3)]).unwrap();
        // node1 = x, node2 = 2x, node3 = x + x + 2x = 4x
        let stem = cache.value(net.stem);
        let tap = cache.value(net.taps[0]);
        assert_eq!(tap.shape(), stem.shape());
        for (t, s) in tap.data().iter().zip(stem.data()) {
            assert_eq!(*t, 4.0 * s);
        }
        assert_eq!(net.supervised, vec![2]);
    }

    #[test]
    fn conv_heavy_has_more_params() {
        let m = MacroConfig::default();
        let heavy = build_backbone::<f32>(&CnnGenotype::uniform(CellOp::Conv3x3), &m, &[16, 16, 16]).unwrap();
        let light = build_backbone::<f32>(&CnnGenotype::uniform(CellOp::Skip), &m, &[16, 16, 16]).unwrap();
        assert!(heavy.graph.param_count() > light.graph.param_count());
    }

    #[test]
    fn degenerate_backbone_rejected() {
        let r = build_backbone::<f32>(&CnnGenotype::uniform(CellOp::None), &MacroConfig::default(), &[16, 16, 16]);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn mutation_can_keep_parent() {
        let parent = CnnGenotype::uniform(CellOp::Skip);
        let mut rng = Seed(11).rng();
        let same = (0..200).filter(|_| mutate_genotype(&parent, &mut rng) == parent).count();
        assert!(same > 0);
    }
}
