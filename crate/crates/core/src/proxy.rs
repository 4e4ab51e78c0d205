//! Regression proxy: fit a backbone to synthetic targets on one batch and
//! score it by its stage-weighted loss.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{build_backbone, BackboneNet, CnnGenotype, MacroConfig};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Optimizer, OptimizerConfig, Tensor};
use crate::rng::Seed;
use crate::rnn::{build_rnn, RnnGenotype};
use crate::signals::{
    apply_input_noise, realize_rnn_tensors, realize_stage_target, AxisChoice, BasisGroup, FrequencySet, NoiseSpec,
    Scope, SequenceSignalSpec, SignalBasis, StageTargetSpec,
};

/// Frequency bands of the signal presets, in cycles per pixel.
pub const BAND_LOW: (f64, f64) = (0.0, 0.125);
pub const BAND_MID: (f64, f64) = (0.125, 0.375);
pub const BAND_HIGH: (f64, f64) = (0.375, 0.5);

fn default_iterations() -> usize {
    100
}
fn default_batch() -> usize {
    16
}
fn default_cnn_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.1, 1e-5, 0.0)
}
fn default_rnn_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-3, 1.2e-6)
}

/// One regression proxy task for the CNN backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyTaskConfig {
    /// One entry per backbone stage; stages without groups are unsupervised.
    pub stages: Vec<StageTargetSpec>,
    pub noise: NoiseSpec,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_cnn_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: Seed,
}

/// Ten evenly spread candidates strictly inside `(a, b)`.
pub fn band(range: (f64, f64)) -> FrequencySet {
    let (a, b) = range;
    FrequencySet {
        range: [a, b],
        values: (0..10).map(|i| a + (b - a) * (i as f64 + 0.5) / 10.0).collect(),
    }
}

fn sin1d(range: (f64, f64)) -> SignalBasis {
    SignalBasis::Sin1d {
        freqs: band(range),
        phase: None,
        axis: AxisChoice::Random,
    }
}

fn sin2d(range: (f64, f64)) -> SignalBasis {
    SignalBasis::Sin2d {
        freqs: band(range),
        phase: None,
    }
}

fn group(basis: SignalBasis, scope: Scope, channels: usize) -> BasisGroup {
    BasisGroup {
        bases: vec![basis],
        scope,
        channels,
    }
}

impl ProxyTaskConfig {
    pub fn with_stages(stages: Vec<StageTargetSpec>) -> Self {
        Self {
            stages,
            noise: NoiseSpec::none(),
            iterations: default_iterations(),
            batch_size: default_batch(),
            optimizer: default_cnn_optimizer(),
            seed: Seed::default(),
        }
    }

    /// `Dot` at 100% density, local scope, 64 channels, last stage only.
    pub fn single() -> Self {
        Self::with_stages(vec![
            StageTargetSpec::default(),
            StageTargetSpec::default(),
            StageTargetSpec {
                groups: vec![group(SignalBasis::Dot { k: 100.0 }, Scope::Local, 64)],
            },
        ])
    }

    /// Three bases per stage, 16 channels each.
    pub fn combo() -> Self {
        let dot = || group(SignalBasis::Dot { k: 100.0 }, Scope::Local, 16);
        let resize = || group(SignalBasis::Resize, Scope::Local, 16);
        let global = |b| group(b, Scope::Global, 16);
        Self::with_stages(vec![
            StageTargetSpec {
                groups: vec![global(sin1d(BAND_HIGH)), global(sin2d(BAND_HIGH)), dot()],
            },
            StageTargetSpec {
                groups: vec![global(sin1d(BAND_HIGH)), global(sin2d(BAND_MID)), resize()],
            },
            StageTargetSpec {
                groups: vec![dot(), global(sin1d(BAND_HIGH)), resize()],
            },
        ])
    }

    /// All-zero targets with the combo layout.
    pub fn zero() -> Self {
        let stage = StageTargetSpec {
            groups: vec![group(SignalBasis::Zero, Scope::Global, 48)],
        };
        Self::with_stages(vec![stage.clone(), stage.clone(), stage])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "single" => Ok(Self::single()),
            "combo" => Ok(Self::combo()),
            "zero" => Ok(Self::zero()),
            other => Err(Error::InvalidSpec(format!(
                "unknown task preset {other:?} (expected single, combo or zero)"
            ))),
        }
    }

    pub fn with_seed(mut self, seed: Seed) -> Self {
        self.seed = seed;
        self
    }

    /// Output channels per stage, 0 for unsupervised stages.
    pub fn stage_channels(&self) -> Vec<usize> {
        self.stages.iter().map(StageTargetSpec::channels).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch size must be positive".into()));
        }
        if !self.stages.iter().any(StageTargetSpec::is_active) {
            return Err(Error::InvalidSpec("task supervises no stage".into()));
        }
        self.noise.validate()?;
        for stage in &self.stages {
            for g in &stage.groups {
                g.validate()?;
            }
        }
        Ok(())
    }

    /// Stable content hash of the canonical JSON, as 16 hex digits.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("task serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Result of one proxy evaluation. Lower `weighted` is better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalScore {
    /// Post-training MSE per stage (0 for unsupervised stages).
    pub per_stage_loss: Vec<f64>,
    pub weighted: f64,
    pub diverged: bool,
}

/// Weight of stage `i` (0-based) out of `n`: `1 / 2^(n − 1 − i)`.
pub fn stage_weight(i: usize, n: usize) -> f64 {
    0.5f64.powi((n - 1 - i) as i32)
}

pub fn weighted_loss(per_stage_loss: &[f64]) -> f64 {
    let n = per_stage_loss.len();
    per_stage_loss
        .iter()
        .enumerate()
        .map(|(i, l)| l * stage_weight(i, n))
        .sum()
}

impl EvalScore {
    pub fn from_losses(per_stage_loss: Vec<f64>) -> Self {
        let weighted = weighted_loss(&per_stage_loss);
        Self {
            per_stage_loss,
            weighted,
            diverged: false,
        }
    }

    pub fn diverged(stages: usize) -> Self {
        Self {
            per_stage_loss: vec![f64::INFINITY; stages],
            weighted: f64::INFINITY,
            diverged: true,
        }
    }
}

/// Noisy network input and the fixed per-stage targets, shared by every
/// architecture scored under one task.
#[derive(Clone, Debug)]
pub struct ProxyBatch {
    pub input: Tensor<f32>,
    pub targets: Vec<Option<Tensor<f32>>>,
}

/// Realizes the targets from the clean images (`b × 3 × H × W`, values in
/// `[0, 1]`) and adds input noise.
pub fn prepare_batch(task: &ProxyTaskConfig, macro_cfg: &MacroConfig, images: &Tensor<f32>) -> Result<ProxyBatch> {
    task.validate()?;
    if task.stages.len() != macro_cfg.stages() {
        return Err(Error::InvalidSpec(format!(
            "task has {} stages, backbone has {}",
            task.stages.len(),
            macro_cfg.stages()
        )));
    }
    let (b, c, h, w) = images.dims4()?;
    if b != task.batch_size || c != 3 || h != macro_cfg.input_size || w != macro_cfg.input_size {
        return Err(Error::ShapeMismatch {
            context: "proxy input batch",
            expected: vec![task.batch_size, 3, macro_cfg.input_size, macro_cfg.input_size],
            got: images.shape().to_vec(),
        });
    }
    let s = macro_cfg.target_size;
    let target_seed = task.seed.derive("target");
    let targets = task
        .stages
        .iter()
        .enumerate()
        .map(|(i, stage)| {
            stage
                .is_active()
                .then(|| realize_stage_target(stage, b, s, s, Some(images), target_seed.child(i as u64)))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let input = apply_input_noise(images, &task.noise, task.seed.derive("noise"))?;
    Ok(ProxyBatch { input, targets })
}

/// Backbone with adapters sized for `task`, initialized from the task's
/// `init` stream.
pub fn init_backbone(geno: &CnnGenotype, macro_cfg: &MacroConfig, task: &ProxyTaskConfig) -> Result<BackboneNet<f32>> {
    let mut net = build_backbone::<f32>(geno, macro_cfg, &task.stage_channels())?;
    net.graph.init_params(&mut task.seed.derive("init").rng());
    Ok(net)
}

/// Score plus the summed training loss before every step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub score: EvalScore,
    pub train_losses: Vec<f64>,
}

/// Trains on `Σ_i MSE_i` for `task.iterations` steps, then evaluates the
/// weighted loss on the same batch. Degenerate or diverging runs score +∞.
pub fn train_regression_cnn(
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
    task: &ProxyTaskConfig,
    batch: &ProxyBatch,
) -> Result<EvalScore> {
    train_regression_cnn_traced(geno, macro_cfg, task, batch).map(|o| o.score)
}

pub fn train_regression_cnn_traced(
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
    task: &ProxyTaskConfig,
    batch: &ProxyBatch,
) -> Result<TrainOutcome> {
    let n = task.stages.len();
    let mut train_losses = Vec::with_capacity(task.iterations);
    match fit(geno, macro_cfg, task, batch, &mut train_losses) {
        Ok(losses) => Ok(TrainOutcome {
            score: EvalScore::from_losses(losses),
            train_losses,
        }),
        Err(Error::Diverged(_) | Error::Degenerate(_)) => Ok(TrainOutcome {
            score: EvalScore::diverged(n),
            train_losses,
        }),
        Err(e) => Err(e),
    }
}

/// Per-stage losses of one forward pass, with their gradients.
fn stage_losses(
    net: &BackboneNet<f32>,
    batch: &ProxyBatch,
    n: usize,
    with_grads: bool,
) -> Result<(Vec<f64>, crate::nn::ForwardCache<f32>, Vec<Tensor<f32>>)> {
    let cache = net.graph.forward(std::slice::from_ref(&batch.input))?;
    let mut losses = vec![0.0; n];
    let mut grads = Vec::with_capacity(net.supervised.len());
    for (o, &stage) in net.supervised.iter().enumerate() {
        let target = batch.targets[stage].as_ref().ok_or_else(|| {
            Error::InvalidSpec(format!("stage {} has an adapter but no target", stage + 1))
        })?;
        let (loss, grad) = mse_loss(cache.output(o), target)?;
        losses[stage] = loss;
        if with_grads {
            grads.push(grad);
        }
    }
    Ok((losses, cache, grads))
}

fn fit(
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
    task: &ProxyTaskConfig,
    batch: &ProxyBatch,
    trace: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let mut net = init_backbone(geno, macro_cfg, task)?;
    let n = task.stages.len();
    let mut opt = Optimizer::new(task.optimizer);
    for _ in 0..task.iterations {
        let (losses, cache, grads) = stage_losses(&net, batch, n, true)?;
        trace.push(losses.iter().sum());
        let param_grads = net.graph.backward(&cache, &grads)?;
        opt.step(net.graph.params_mut(), &param_grads);
    }
    let (losses, _, _) = stage_losses(&net, batch, n, false)?;
    if losses.iter().all(|l| l.is_finite()) {
        Ok(losses)
    } else {
        Err(Error::Diverged("non-finite validation loss".into()))
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))
}

/// Scores every genotype independently on `jobs` worker threads. Results
/// are in input order and do not depend on `jobs`.
pub fn score_population(
    genotypes: &[CnnGenotype],
    macro_cfg: &MacroConfig,
    task: &ProxyTaskConfig,
    batch: &ProxyBatch,
    jobs: usize,
) -> Result<Vec<EvalScore>> {
    thread_pool(jobs)?.install(|| {
        genotypes
            .par_iter()
            .map(|g| train_regression_cnn(g, macro_cfg, task, batch))
            .collect()
    })
}

/// Memoizing scorer bound to one task and batch.
#[derive(Debug)]
pub struct ProxyScorer {
    pub macro_cfg: MacroConfig,
    pub task: ProxyTaskConfig,
    pub batch: ProxyBatch,
    pub jobs: usize,
    cache: HashMap<CnnGenotype, EvalScore>,
}

impl ProxyScorer {
    pub fn new(macro_cfg: MacroConfig, task: ProxyTaskConfig, images: &Tensor<f32>, jobs: usize) -> Result<Self> {
        let batch = prepare_batch(&task, &macro_cfg, images)?;
        Ok(Self {
            macro_cfg,
            task,
            batch,
            jobs,
            cache: HashMap::new(),
        })
    }

    /// Scores genotypes, evaluating only those not seen before.
    pub fn score(&mut self, genotypes: &[CnnGenotype]) -> Result<Vec<EvalScore>> {
        let mut missing: Vec<CnnGenotype> = genotypes.iter().filter(|g| !self.cache.contains_key(g)).copied().collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let scores = score_population(&missing, &self.macro_cfg, &self.task, &self.batch, self.jobs)?;
            self.cache.extend(missing.into_iter().zip(scores));
        }
        Ok(genotypes.iter().map(|g| self.cache[g].clone()).collect())
    }

    pub fn evaluated(&self) -> usize {
        self.cache.len()
    }
}

/// Recurrent regression proxy: map an input sequence to a target sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnProxyConfig {
    pub input: SequenceSignalSpec,
    pub target: SequenceSignalSpec,
    /// Hidden width d.
    #[serde(default = "default_rnn_width")]
    pub width: usize,
    /// Sequence length l.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_rnn_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: Seed,
}

fn default_rnn_width() -> usize {
    32
}
fn default_steps() -> usize {
    8
}

impl Default for RnnProxyConfig {
    fn default() -> Self {
        Self {
            input: SequenceSignalSpec {
                bases: vec![SignalBasis::Dot { k: 100.0 }],
                scope: Scope::Local,
                noise: None,
            },
            target: SequenceSignalSpec {
                bases: vec![sin1d(BAND_MID)],
                scope: Scope::Local,
                noise: None,
            },
            width: default_rnn_width(),
            steps: default_steps(),
            batch_size: default_batch(),
            iterations: default_iterations(),
            optimizer: default_rnn_optimizer(),
            seed: Seed::default(),
        }
    }
}

/// Adam on the sequence MSE; returns the final MSE after training.
pub fn train_regression_rnn(geno: &RnnGenotype, cfg: &RnnProxyConfig) -> Result<f64> {
    train_regression_rnn_traced(geno, cfg).map(|(l, _)| l)
}

/// Final MSE and the loss before every training step.
pub fn train_regression_rnn_traced(geno: &RnnGenotype, cfg: &RnnProxyConfig) -> Result<(f64, Vec<f64>)> {
    let (input, target) = realize_rnn_tensors(&cfg.input, &cfg.target, cfg.steps, cfg.batch_size, cfg.width, cfg.seed)?;
    let mut net = build_rnn::<f32>(geno, cfg.width, cfg.steps)?;
    net.graph.init_params(&mut cfg.seed.derive("init").rng());
    let inputs = net.inputs(&input)?;
    let step_targets: Vec<Tensor<f32>> = (0..cfg.steps)
        .map(|t| target.slice_outer(t, t + 1).reshape(&[cfg.batch_size, cfg.width]))
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let scale = 1.0 / cfg.steps as f64;

    let loss_and_grads = |net: &crate::rnn::RnnNet<f32>| -> Result<(f64, crate::nn::ForwardCache<f32>, Vec<Tensor<f32>>)> {
        let cache = net.graph.forward(&inputs)?;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(cfg.steps);
        for (t, target) in step_targets.iter().enumerate() {
            let (l, g) = mse_loss(cache.output(t), target)?;
            total += l * scale;
            grads.push(g.map(|v| v * scale as f32));
        }
        Ok((total, cache, grads))
    };

    for _ in 0..cfg.iterations {
        let (loss, cache, grads) = loss_and_grads(&net)?;
        trace.push(loss);
        let param_grads = net.graph.backward(&cache, &grads)?;
        opt.step(net.graph.params_mut(), &param_grads);
    }
    let (final_loss, _, _) = loss_and_grads(&net)?;
    Ok((final_loss, trace))
}

/// Scores RNN genotypes in parallel; divergence or degeneracy maps to +∞.
pub fn score_rnn_population(genotypes: &[RnnGenotype], cfg: &RnnProxyConfig, jobs: usize) -> Result<Vec<f64>> {
    thread_pool(jobs)?.install(|| {
        genotypes
            .par_iter()
            .map(|g| match train_regression_rnn(g, cfg) {
                Ok(l) => Ok(l),
                Err(Error::Diverged(_) | Error::Degenerate(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            })
            .collect()
    })
}
