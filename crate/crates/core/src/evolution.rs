//! Regularized (aging) evolution, generic over the genome and fitness.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Population size P.
    pub population: usize,
    /// Tournament sample size S.
    pub sample: usize,
    /// Evolution iterations after the initial population.
    pub iterations: usize,
    pub maximize: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 50,
            sample: 10,
            iterations: 400,
            maximize: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample == 0 || self.sample > self.population {
            return Err(Error::InvalidSpec(format!(
                "need 1 <= S <= P, got S={} P={}",
                self.sample, self.population
            )));
        }
        Ok(())
    }

    /// Orients a fitness so that larger is always better; NaN is worst.
    pub fn key(&self, fitness: f64) -> f64 {
        if fitness.is_nan() {
            f64::NEG_INFINITY
        } else if self.maximize {
            fitness
        } else {
            -fitness
        }
    }

    /// The value a failed evaluation should report.
    pub fn worst(&self) -> f64 {
        if self.maximize {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual<G> {
    pub genome: G,
    pub fitness: f64,
    pub birth_index: usize,
}

#[derive(Clone, Debug)]
pub struct EvolutionResult<G> {
    pub best: Individual<G>,
    /// Every evaluated individual in birth order, `P + iterations` long.
    pub history: Vec<Individual<G>>,
    /// Best fitness in history after each birth.
    pub best_trace: Vec<f64>,
}

fn beats<G>(cfg: &EvolutionConfig, a: &Individual<G>, b: &Individual<G>) -> bool {
    let (ka, kb) = (cfg.key(a.fitness), cfg.key(b.fitness));
    ka > kb || (ka == kb && a.birth_index < b.birth_index)
}

/// Best of `S` distinct members drawn uniformly; ties go to the older one.
pub fn tournament_select<'a, G, R: Rng + ?Sized>(
    population: &'a VecDeque<Individual<G>>,
    cfg: &EvolutionConfig,
    rng: &mut R,
) -> &'a Individual<G> {
    let picks = index::sample(rng, population.len(), cfg.sample.min(population.len()));
    let mut best: Option<&Individual<G>> = None;
    for i in picks.iter() {
        let cand = &population[i];
        if best.is_none_or(|b| beats(cfg, cand, b)) {
            best = Some(cand);
        }
    }
    best.expect("tournament sample is non-empty")
}

/// Aging evolution. `batch_fitness` scores a slice of genomes and is called
/// once with the P initial genomes, then once per child. `observer` sees each
/// iteration's child and the population after the oldest member left.
pub fn evolve<G, R, I, M, F, O>(
    cfg: &EvolutionConfig,
    rng: &mut R,
    mut init_sampler: I,
    mut mutator: M,
    mut batch_fitness: F,
    mut observer: O,
) -> Result<EvolutionResult<G>>
where
    G: Clone,
    R: Rng + ?Sized,
    I: FnMut(&mut R) -> G,
    M: FnMut(&G, &mut R) -> G,
    F: FnMut(&[G]) -> Vec<f64>,
    O: FnMut(usize, &Individual<G>, &VecDeque<Individual<G>>),
{
    cfg.validate()?;
    let genomes: Vec<G> = (0..cfg.population).map(|_| init_sampler(rng)).collect();
    let scores = batch_fitness(&genomes);
    if scores.len() != genomes.len() {
        return Err(Error::LengthMismatch(genomes.len(), scores.len()));
    }

    let mut history: Vec<Individual<G>> = Vec::with_capacity(cfg.population + cfg.iterations);
    let mut best_trace = Vec::with_capacity(cfg.population + cfg.iterations);
    let mut best_idx = 0;
    let mut population = VecDeque::with_capacity(cfg.population + 1);
    for (genome, fitness) in genomes.into_iter().zip(scores) {
        let ind = Individual {
            genome,
            fitness,
            birth_index: history.len(),
        };
        if history.is_empty() || beats(cfg, &ind, &history[best_idx]) {
            best_idx = ind.birth_index;
        }
        population.push_back(ind.clone());
        history.push(ind);
        best_trace.push(history[best_idx].fitness);
    }

    for iteration in 0..cfg.iterations {
        let parent = tournament_select(&population, cfg, rng);
        let genome = mutator(&parent.genome, rng);
        let fitness = batch_fitness(std::slice::from_ref(&genome))
            .first()
            .copied()
            .ok_or(Error::LengthMismatch(1, 0))?;
        let child = Individual {
            genome,
            fitness,
            birth_index: history.len(),
        };
        if beats(cfg, &child, &history[best_idx]) {
            best_idx = child.birth_index;
        }
        population.push_back(child.clone());
        population.pop_front();
        history.push(child);
        best_trace.push(history[best_idx].fitness);
        observer(iteration, history.last().expect("just pushed"), &population);
    }

    Ok(EvolutionResult {
        best: history[best_idx].clone(),
        history,
        best_trace,
    })
}
