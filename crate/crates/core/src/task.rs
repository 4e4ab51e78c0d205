//! The searchable space of proxy tasks: sampling, block-wise mutation and
//! ranking fitness against a bench table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{CnnGenotype, MacroConfig};
use crate::bench::BenchTable;
use crate::metrics::spearman_rho;
use crate::nn::Tensor;
use crate::proxy::{prepare_batch, score_population, ProxyTaskConfig};
use crate::rng::Seed;
use crate::signals::{
    AxisChoice, BasisGroup, FrequencySet, NoiseDistribution, NoiseSpec, Scope, SignalBasis, StageTargetSpec,
    CHANNEL_CHOICES,
};
use crate::{Error, Result};

/// Regeneration probability of each mutatable block.
pub const BLOCK_MUTATION_RATE: f64 = 0.2;
pub const MAX_GROUPS: usize = 3;
pub const MAX_BASES: usize = 2;
/// Candidate frequencies drawn from a sampled range.
pub const RANGE_FREQUENCIES: usize = 10;
pub const DOT_PERCENTAGES: [f64; 2] = [50.0, 100.0];
pub const DEFAULT_PROBES: usize = 20;

/// A frequency interval with `0 < a < b < 0.5`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRange {
    pub a: f64,
    pub b: f64,
}

impl FrequencyRange {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.a && self.a < self.b && self.b < 0.5 {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("frequency range ({}, {}) outside 0 < a < b < 0.5", self.a, self.b)))
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: f64 = rng.random_range(0.0..0.5);
            let y: f64 = rng.random_range(0.0..0.5);
            let r = Self { a: x.min(y), b: x.max(y) };
            if r.validate().is_ok() {
                return r;
            }
        }
    }

    pub fn frequencies<R: Rng + ?Sized>(&self, rng: &mut R) -> FrequencySet {
        FrequencySet::sample(self.a, self.b, RANGE_FREQUENCIES, rng)
    }
}

/// Address of one mutatable block of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskBlock {
    Noise,
    Group { stage: usize, index: usize },
}

/// Blocks of `task` in a fixed order: noise first, then groups stage by stage.
pub fn task_blocks(task: &ProxyTaskConfig) -> Vec<TaskBlock> {
    let mut blocks = vec![TaskBlock::Noise];
    for (stage, spec) in task.stages.iter().enumerate() {
        blocks.extend((0..spec.groups.len()).map(|index| TaskBlock::Group { stage, index }));
    }
    blocks
}

pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R) -> NoiseSpec {
    let distribution = if rng.random_bool(0.5) {
        NoiseDistribution::Gaussian
    } else {
        NoiseDistribution::Uniform
    };
    NoiseSpec::from_step(distribution, rng.random_range(0..NoiseSpec::LEVELS))
}

pub fn sample_basis<R: Rng + ?Sized>(scope: Scope, rng: &mut R) -> SignalBasis {
    let families = if scope == Scope::Local { 5 } else { 4 };
    match rng.random_range(0..families) {
        0 => SignalBasis::Sin1d {
            freqs: FrequencyRange::sample(rng).frequencies(rng),
            phase: None,
            axis: AxisChoice::Random,
        },
        1 => SignalBasis::Sin2d {
            freqs: FrequencyRange::sample(rng).frequencies(rng),
            phase: None,
        },
        2 => SignalBasis::Dot {
            k: DOT_PERCENTAGES[rng.random_range(0..DOT_PERCENTAGES.len())],
        },
        3 => SignalBasis::Gdot {
            k: DOT_PERCENTAGES[rng.random_range(0..DOT_PERCENTAGES.len())],
            sigma: 1.0,
        },
        _ => SignalBasis::Resize,
    }
}

pub fn sample_group<R: Rng + ?Sized>(rng: &mut R) -> BasisGroup {
    let scope = if rng.random_bool(0.5) { Scope::Global } else { Scope::Local };
    let n = rng.random_range(1..=MAX_BASES);
    BasisGroup {
        bases: (0..n).map(|_| sample_basis(scope, rng)).collect(),
        scope,
        channels: CHANNEL_CHOICES[rng.random_range(0..CHANNEL_CHOICES.len())],
    }
}

/// Samples a task supervising all `stages` backbone stages. Training
/// hyperparameters and seed keep their defaults.
pub fn sample_task<R: Rng + ?Sized>(stages: usize, rng: &mut R) -> ProxyTaskConfig {
    let noise = sample_noise(rng);
    let specs = (0..stages)
        .map(|_| StageTargetSpec {
            groups: (0..rng.random_range(1..=MAX_GROUPS)).map(|_| sample_group(rng)).collect(),
        })
        .collect();
    ProxyTaskConfig {
        noise,
        ..ProxyTaskConfig::with_stages(specs)
    }
}

/// Mutates `task` and reports which blocks (in `task_blocks` order) were
/// regenerated.
pub fn mutate_task_traced<R: Rng + ?Sized>(task: &ProxyTaskConfig, rng: &mut R) -> (ProxyTaskConfig, Vec<bool>) {
    let mut child = task.clone();
    let mut touched = Vec::new();
    for block in task_blocks(task) {
        let regen = rng.random_bool(BLOCK_MUTATION_RATE);
        touched.push(regen);
        if !regen {
            continue;
        }
        match block {
            TaskBlock::Noise => child.noise = sample_noise(rng),
            TaskBlock::Group { stage, index } => child.stages[stage].groups[index] = sample_group(rng),
        }
    }
    (child, touched)
}

/// Regenerates each block independently with probability 0.2.
pub fn mutate_task<R: Rng + ?Sized>(task: &ProxyTaskConfig, rng: &mut R) -> ProxyTaskConfig {
    mutate_task_traced(task, rng).0
}

/// Ranking fitness of `task`: Spearman's ρ between negated proxy losses of
/// the probe architectures and their oriented bench metrics.
pub fn task_fitness(
    task: &ProxyTaskConfig,
    probes: &[CnnGenotype],
    bench: &BenchTable,
    macro_cfg: &MacroConfig,
    images: &Tensor<f32>,
    seed: Seed,
    jobs: usize,
) -> Result<f64> {
    let truth = probes
        .iter()
        .map(|g| bench.oriented(&g.id()))
        .collect::<Result<Vec<_>>>()?;
    let task = task.clone().with_seed(seed);
    let batch = prepare_batch(&task, macro_cfg, images)?;
    let scores = score_population(probes, macro_cfg, &task, &batch, jobs)?;
    let neg: Vec<f64> = scores.iter().map(|s| -s.weighted).collect();
    spearman_rho(&neg, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_tasks_are_valid() {
        let mut rng = Seed(3).rng();
        for _ in 0..500 {
            let t = sample_task(3, &mut rng);
            t.validate().unwrap();
            assert_eq!(t.stages.len(), 3);
            assert!(t.stages.iter().all(|s| (1..=MAX_GROUPS).contains(&s.groups.len())));
        }
    }

    #[test]
    fn ranges_respect_bounds() {
        let mut rng = Seed(5).rng();
        for _ in 0..1000 {
            let r = FrequencyRange::sample(&mut rng);
            r.validate().unwrap();
            let f = r.frequencies(&mut rng);
            assert_eq!(f.values.len(), RANGE_FREQUENCIES);
            assert!(f.values.iter().all(|&v| r.a <= v && v < r.b));
        }
    }

    #[test]
    fn mutation_preserves_structure() {
        let mut rng = Seed(9).rng();
        let t = sample_task(3, &mut rng);
        let (c, touched) = mutate_task_traced(&t, &mut rng);
        assert_eq!(touched.len(), task_blocks(&t).len());
        assert_eq!(task_blocks(&c), task_blocks(&t));
        assert_eq!(c.seed, t.seed);
        assert_eq!(c.iterations, t.iterations);
    }
}
