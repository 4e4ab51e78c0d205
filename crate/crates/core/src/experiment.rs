//! End-to-end experiments shared by the command line and the acceptance
//! suite: ranking a bench table under a proxy task, and architecture search
//! with the proxy score as fitness.

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{mutate_genotype, sample_genotype, CnnGenotype, MacroConfig};
use crate::bench::{proxy_images, BenchTable, DatasetConfig};
use crate::evolution::{evolve, EvolutionConfig};
use crate::metrics::{kendall_tau, regret, retrieving_rate, spearman_rho};
use crate::nn::Tensor;
use crate::proxy::{EvalScore, ProxyScorer, ProxyTaskConfig};
use crate::rng::Seed;
use crate::{Error, Result};

/// `task` with its seed derived from the master seed.
pub fn seeded_task(task: &ProxyTaskConfig, master: Seed) -> ProxyTaskConfig {
    task.clone().with_seed(master.derive("proxy"))
}

/// The default proxy input batch: procedural images drawn from the master seed.
pub fn default_proxy_images(batch_size: usize, master: Seed) -> Tensor<f32> {
    proxy_images(&DatasetConfig::default(), batch_size, master.derive("images"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub id: String,
    pub weighted: f64,
    pub per_stage_loss: Vec<f64>,
    pub diverged: bool,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub task_id: String,
    pub architectures: usize,
    pub diverged: usize,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub top_fraction: f64,
    pub retrieving_rate: f64,
}

/// Rank statistics of proxy scores against the oriented bench metric.
pub fn summarize_ranking(task_id: &str, rows: &[RankRow], bench: &BenchTable, top_fraction: f64) -> Result<RankSummary> {
    let pred: Vec<f64> = rows.iter().map(|r| -r.weighted).collect();
    let truth = rows
        .iter()
        .map(|r| bench.oriented(&r.id))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankSummary {
        task_id: task_id.to_string(),
        architectures: rows.len(),
        diverged: rows.iter().filter(|r| r.diverged).count(),
        spearman_rho: spearman_rho(&pred, &truth)?,
        kendall_tau: kendall_tau(&pred, &truth)?,
        top_fraction,
        retrieving_rate: retrieving_rate(&pred, &truth, top_fraction)?,
    })
}

/// Scores every CNN genotype of `bench` under `task` (whose seed is used
/// as given) and summarizes the ranking.
pub fn rank_bench(
    task: &ProxyTaskConfig,
    bench: &BenchTable,
    macro_cfg: &MacroConfig,
    images: &Tensor<f32>,
    jobs: usize,
    top_fraction: f64,
) -> Result<(Vec<RankRow>, RankSummary)> {
    let genotypes = bench.cnn_genotypes()?;
    let mut scorer = ProxyScorer::new(macro_cfg.clone(), task.clone(), images, jobs)?;
    let scores = scorer.score(&genotypes)?;
    let rows: Vec<RankRow> = genotypes
        .iter()
        .zip(scores)
        .map(|(g, s)| {
            Ok(RankRow {
                id: g.id(),
                metric: bench.require(&g.id())?,
                weighted: s.weighted,
                per_stage_loss: s.per_stage_loss,
                diverged: s.diverged,
            })
        })
        .collect::<Result<_>>()?;
    let summary = summarize_ranking(&task.id(), &rows, bench, top_fraction)?;
    Ok((rows, summary))
}

/// Where architecture search draws genotypes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchSpace {
    /// Only the architectures of the bench table; mutants are projected to
    /// the nearest member.
    Bench,
    /// The whole cell space.
    Full,
}

/// The bench member closest to `g` in edge Hamming distance; ties are
/// broken uniformly at random.
pub fn project_to_members<R: Rng + ?Sized>(g: &CnnGenotype, members: &[CnnGenotype], rng: &mut R) -> CnnGenotype {
    let dist = |m: &CnnGenotype| m.edges.iter().zip(&g.edges).filter(|(a, b)| a != b).count();
    let best = members.iter().map(dist).min().expect("non-empty member list");
    let nearest: Vec<&CnnGenotype> = members.iter().filter(|m| dist(m) == best).collect();
    *nearest[rng.random_range(0..nearest.len())]
}

/// One iteration of an architecture search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NasStep {
    pub iteration: usize,
    pub child_id: String,
    pub child_score: f64,
    /// Incumbent: lowest proxy score among all evaluated architectures.
    pub best_id: String,
    pub best_score: f64,
    /// Bench metric of the incumbent, when the bench holds it.
    pub best_metric: Option<f64>,
    pub regret: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NasOutcome {
    pub best_id: String,
    pub best_score: f64,
    pub best_metric: Option<f64>,
    /// 1 + number of bench rows strictly better than the result.
    pub best_rank: Option<usize>,
    pub optimum_id: String,
    pub optimum_metric: f64,
    pub final_regret: Option<f64>,
    pub evaluated: usize,
    pub steps: Vec<NasStep>,
}

/// Loss view of a bench metric: lower is better.
fn as_loss(bench: &BenchTable, metric: f64) -> f64 {
    if bench.meta.higher_better {
        -metric
    } else {
        metric
    }
}

/// Aging evolution over genotypes, minimizing the proxy score. Regret
/// `L(t) − L*` is reported in loss orientation, so it is non-negative.
pub fn nas_search(
    scorer: &mut ProxyScorer,
    bench: &BenchTable,
    space: SearchSpace,
    cfg: &EvolutionConfig,
    seed: Seed,
) -> Result<NasOutcome> {
    if cfg.maximize {
        return Err(Error::InvalidSpec("proxy scores are minimized".into()));
    }
    let members = bench.cnn_genotypes()?;
    let (optimum_id, optimum_metric) = bench
        .best()
        .map(|(id, m)| (id.to_string(), m))
        .ok_or_else(|| Error::InvalidSpec("empty bench table".into()))?;
    let l_star = as_loss(bench, optimum_metric);
    let scorer = RefCell::new(scorer);
    let failure = RefCell::new(None);
    let score = |gs: &[CnnGenotype]| -> Vec<f64> {
        match scorer.borrow_mut().score(gs) {
            Ok(s) => s.iter().map(|e: &EvalScore| e.weighted).collect(),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![f64::INFINITY; gs.len()]
            }
        }
    };
    let mut rng = seed.derive("nas").rng();
    let result = evolve(
        cfg,
        &mut rng,
        |rng| match space {
            SearchSpace::Bench => members[rng.random_range(0..members.len())],
            SearchSpace::Full => sample_genotype(rng),
        },
        |g, rng| {
            let child = mutate_genotype(g, rng);
            match space {
                SearchSpace::Bench => project_to_members(&child, &members, rng),
                SearchSpace::Full => child,
            }
        },
        score,
        |_, _, _| {},
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let evaluated = scorer.borrow().evaluated();
    let mut steps = Vec::with_capacity(cfg.iterations);
    let mut incumbent = &result.history[0];
    for (birth, ind) in result.history.iter().enumerate() {
        if ind.fitness < incumbent.fitness {
            incumbent = ind;
        }
        if birth < cfg.population {
            continue;
        }
        let best_id = incumbent.genome.id();
        let best_metric = bench.get(&best_id);
        steps.push(NasStep {
            iteration: birth - cfg.population,
            child_id: ind.genome.id(),
            child_score: ind.fitness,
            regret: best_metric.map(|m| regret(&[as_loss(bench, m)], l_star)[0]),
            best_id,
            best_score: incumbent.fitness,
            best_metric,
        });
    }
    let best_id = result.best.genome.id();
    let best_metric = bench.get(&best_id);
    let best_rank = best_metric.map(|m| {
        let o = as_loss(bench, m);
        1 + bench.rows().iter().filter(|(_, v)| as_loss(bench, *v) < o).count()
    });
    Ok(NasOutcome {
        best_id,
        best_score: result.best.fitness,
        best_metric,
        best_rank,
        optimum_id,
        optimum_metric,
        final_regret: best_metric.map(|m| as_loss(bench, m) - l_star),
        evaluated,
        steps,
    })
}
