//! Central finite-difference verification of [`Graph::backward`].

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{ForwardCache, Graph};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than relative terms.
const REL_FLOOR: f64 = 1e-5;

/// Scalar objective over graph outputs, returning its value and per-output gradients.
pub type Objective<'a> = dyn Fn(&ForwardCache<f64>) -> Result<(f64, Vec<Tensor<f64>>)> + 'a;

/// Max relative error between analytic and central-difference gradients,
/// using a fixed random linear projection of the outputs as the objective.
/// Graphs with no parameters report 0.
pub fn grad_check(graph: &mut Graph<f64>, inputs: &[Tensor<f64>], epsilon: f64) -> Result<f64> {
    let probe = graph.forward(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let weights: Vec<Tensor<f64>> = probe
        .outputs()
        .iter()
        .map(|o| {
            let data = (0..o.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(o.shape(), data).expect("shape from output")
        })
        .collect();
    let objective = move |cache: &ForwardCache<f64>| {
        let mut total = 0.0;
        for (o, w) in cache.outputs().iter().zip(&weights) {
            total += o.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok((total, weights.clone()))
    };
    grad_check_with(graph, inputs, &objective, epsilon, 16, 0)
}

/// As [`grad_check`] with a caller-defined objective, checking up to
/// `samples_per_param` randomly chosen entries of every parameter tensor.
pub fn grad_check_with(
    graph: &mut Graph<f64>,
    inputs: &[Tensor<f64>],
    objective: &Objective<'_>,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<f64> {
    let cache = graph.forward(inputs)?;
    let (_, out_grads) = objective(&cache)?;
    let analytic = graph.backward(&cache, &out_grads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for pid in 0..graph.params().len() {
        let n = graph.params()[pid].numel();
        let picks = sample(&mut rng, n, samples_per_param.min(n)).into_vec();
        for idx in picks {
            let orig = graph.params()[pid].data()[idx];
            graph.params_mut()[pid].data_mut()[idx] = orig + epsilon;
            let plus = objective(&graph.forward(inputs)?)?.0;
            graph.params_mut()[pid].data_mut()[idx] = orig - epsilon;
            let minus = objective(&graph.forward(inputs)?)?.0;
            graph.params_mut()[pid].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pid].data()[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
