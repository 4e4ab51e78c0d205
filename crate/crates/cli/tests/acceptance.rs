//! Acceptance criteria, one PASS/FAIL line each. Criterion numbers given as
//! arguments select a subset.

use std::any::Any;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde_json::Value;

use regnas::arch::{build_backbone, mutate_genotype_traced, sample_genotype, MacroConfig};
use regnas::bench::{build_bench_table, BenchConfig, BenchTable};
use regnas::evolution::{evolve, EvolutionConfig};
use regnas::experiment::{default_proxy_images, rank_bench, seeded_task, RankSummary};
use regnas::metrics::{kendall_tau, spearman_rho, top_k_count};
use regnas::nn::{grad_check, Graph, LayerKind, NodeId, Tensor};
use regnas::proxy::{weighted_loss, EvalScore, ProxyTaskConfig};
use regnas::rng::Seed;
use regnas::rnn::{build_rnn, sample_rnn_genotype};
use regnas::signals::{
    dot_count, gen_dot, gen_gdot, gen_sin1d, gen_sin2d, realize_basis, realize_group, Axis, BasisGroup, FrequencySet,
    Scope, SignalBasis, SignalMap, StageTargetSpec,
};
use regnas::task::{mutate_task_traced, sample_group, sample_task, task_blocks};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient correctness", c1_gradients),
    (2, "rank-statistic oracle equivalence", c2_rank_statistics),
    (3, "signal fidelity", c3_signals),
    (4, "aging evolution fidelity", c4_evolution),
    (5, "mutation statistics", c5_mutation),
    (6, "desk-scale ranking experiment", c6_ranking),
    (7, "weighted-loss formula", c7_weighted_loss),
    (8, "end-to-end architecture search", c8_nas),
    (9, "determinism across replays and job counts", c9_determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    let msg = p
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default();
    format!("panicked: {msg}")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- 1

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

fn jitter_params(g: &mut Graph<f64>, rng: &mut impl Rng) {
    for p in g.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

/// Relu inputs closer to zero than this make central differences straddle the kink.
const KINK_MARGIN: f64 = 1e-4;

fn near_kink(g: &Graph<f64>, inputs: &[Tensor<f64>]) -> Result<bool, String> {
    let cache = g.forward(inputs).map_err(err)?;
    Ok(g.nodes().iter().any(|n| {
        n.kind == LayerKind::Relu && cache.value(n.inputs[0]).data().iter().any(|v| v.abs() < KINK_MARGIN)
    }))
}

type Builder = fn(&mut Graph<f64>, NodeId) -> Vec<NodeId>;

fn layer_cases() -> Vec<(&'static str, Vec<usize>, Builder)> {
    vec![
        ("conv3x3", vec![2, 2, 5, 5], |g, x| vec![g.conv2d(x, 2, 3, 3, 1, 1)]),
        ("conv1x1", vec![2, 3, 4, 4], |g, x| vec![g.conv2d(x, 3, 2, 1, 1, 0)]),
        ("conv stride 2", vec![2, 2, 6, 6], |g, x| vec![g.conv2d(x, 2, 2, 3, 2, 1)]),
        ("avgpool 3/1/1", vec![2, 2, 6, 6], |g, x| {
            let c = g.conv2d(x, 2, 2, 1, 1, 0);
            vec![g.avg_pool(c, 3, 1, 1)]
        }),
        ("avgpool 2/2/0", vec![2, 2, 6, 6], |g, x| {
            let c = g.conv2d(x, 2, 2, 1, 1, 0);
            vec![g.avg_pool(c, 2, 2, 0)]
        }),
        ("relu", vec![2, 2, 4, 4], |g, x| {
            let c = g.conv2d(x, 2, 2, 3, 1, 1);
            vec![g.relu(c)]
        }),
        ("batchnorm", vec![3, 2, 4, 4], |g, x| {
            let c = g.conv2d(x, 2, 3, 3, 1, 1);
            vec![g.batch_norm(c, 3)]
        }),
        ("linear", vec![3, 4], |g, x| vec![g.linear(x, 4, 3, true)]),
        ("linear no bias", vec![3, 4], |g, x| vec![g.linear(x, 4, 3, false)]),
        ("shared linear", vec![3, 4], |g, x| {
            let w = g.add_param(&[4, 4], Some(4));
            let a = g.linear_shared(x, w, None);
            let t = g.tanh(a);
            vec![g.linear_shared(t, w, None)]
        }),
        ("add", vec![3, 4], |g, x| {
            let a = g.linear(x, 4, 4, true);
            let b = g.linear(x, 4, 4, false);
            vec![g.add(&[a, b, x])]
        }),
        ("mul", vec![3, 4], |g, x| {
            let a = g.linear(x, 4, 4, true);
            let b = g.linear(x, 4, 4, false);
            vec![g.mul(a, b)]
        }),
        ("tanh", vec![3, 4], |g, x| {
            let l = g.linear(x, 4, 3, true);
            vec![g.tanh(l)]
        }),
        ("sigmoid", vec![3, 4], |g, x| {
            let l = g.linear(x, 4, 3, true);
            vec![g.sigmoid(l)]
        }),
        ("identity", vec![3, 4], |g, x| {
            let l = g.linear(x, 4, 3, true);
            vec![g.identity(l)]
        }),
        ("global avgpool", vec![2, 3, 4, 4], |g, x| {
            let c = g.conv2d(x, 3, 4, 3, 1, 1);
            let p = g.global_avg_pool(c);
            vec![g.linear(p, 4, 5, true)]
        }),
    ]
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut instances = 0;
    let mut redraws = 0;
    let mut record = |name: &str, seed: u64, e: f64| -> Result<(), String> {
        worst = worst.max(e);
        instances += 1;
        ensure(e < GRAD_TOL, || format!("{name} instance {seed}: relative error {e:e}"))
    };
    for (name, shape, build) in layer_cases() {
        for seed in 0..20 {
            let mut rng = Seed(seed).derive(name).rng();
            let (mut g, input) = loop {
                let mut g = Graph::<f64>::new();
                let x = g.input(0);
                let outs = build(&mut g, x);
                g.set_outputs(outs);
                g.init_params(&mut rng);
                jitter_params(&mut g, &mut rng);
                let input = random_tensor(&shape, &mut rng);
                if !near_kink(&g, std::slice::from_ref(&input))? {
                    break (g, input);
                }
                redraws += 1;
            };
            record(name, seed, grad_check(&mut g, &[input], GRAD_EPS).map_err(err)?)?;
        }
    }
    let small = MacroConfig {
        stem_channels: 4,
        cells_per_stage: 1,
        stage_channels: vec![4, 6, 8],
        input_size: 8,
        target_size: 2,
    };
    for seed in 0..20 {
        let mut rng = Seed(seed).derive("fcn").rng();
        let geno = loop {
            let g = sample_genotype(&mut rng);
            if g.is_valid() {
                break g;
            }
        };
        let mut net = build_backbone::<f64>(&geno, &small, &[2, 3, 4]).map_err(err)?;
        let input = loop {
            net.graph.init_params(&mut rng);
            jitter_params(&mut net.graph, &mut rng);
            let input = random_tensor(&[2, 3, 8, 8], &mut rng);
            if !near_kink(&net.graph, std::slice::from_ref(&input))? {
                break input;
            }
            redraws += 1;
        };
        record(&format!("backbone {geno}"), seed, grad_check(&mut net.graph, &[input], GRAD_EPS).map_err(err)?)?;
    }
    for seed in 0..20 {
        let mut rng = Seed(seed).derive("rnn").rng();
        let geno = sample_rnn_genotype(&mut rng).map_err(err)?;
        let mut net = build_rnn::<f64>(&geno, 16, 3).map_err(err)?;
        net.graph.init_params(&mut rng);
        let mut inputs = net.inputs(&random_tensor(&[3, 2, 16], &mut rng)).map_err(err)?;
        inputs[0] = random_tensor(&[2, 16], &mut rng);
        record(&format!("rnn {geno}"), seed, grad_check(&mut net.graph, &inputs, GRAD_EPS).map_err(err)?)?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s (limit 60s)"))?;
    Ok(format!(
        "{} layer kinds + backbone + recurrent cell, {instances} instances ({redraws} redrawn near a relu kink), \
         max relative error {worst:.2e} < 1e-4",
        layer_cases().len()
    ))
}

// ---------------------------------------------------------------- 2

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(i, &a)| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let ties = v.iter().enumerate().filter(|&(j, &b)| j != i && b == a).count() as f64;
            1.0 + below + ties / 2.0
        })
        .collect()
}

fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (c - d) as f64 / denom
    }
}

fn c2_rank_statistics() -> Outcome {
    let mut rng = Seed(2024).rng();
    let mut worst_rho = 0.0f64;
    let mut tied = 0;
    for trial in 0..1000 {
        let n = rng.random_range(2..=50);
        let levels = [3, 10, 1_000_000][trial % 3];
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        tied += (brute_ranks(&x).iter().any(|r| r.fract() != 0.0)) as usize;
        let rho = spearman_rho(&x, &y).map_err(err)?;
        let diff = (rho - brute_spearman(&x, &y)).abs();
        worst_rho = worst_rho.max(diff);
        ensure(diff <= 1e-12, || format!("trial {trial}: spearman differs by {diff:e}"))?;
        let tau = kendall_tau(&x, &y).map_err(err)?;
        let want = brute_kendall(&x, &y);
        ensure(tau == want, || format!("trial {trial}: kendall {tau} vs {want}"))?;
    }
    let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 4.0, 5.0]).map_err(err)?;
    ensure((rho - 0.9).abs() <= 1e-12, || format!("worked example rho = {rho}"))?;
    let tau = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).map_err(err)?;
    ensure((tau - 1.0 / 3.0).abs() <= 1e-12, || format!("worked example tau = {tau}"))?;
    Ok(format!(
        "1000 vectors ({tied} with ties): spearman max diff {worst_rho:.1e} <= 1e-12, kendall exact; rho=0.9, tau=1/3"
    ))
}

// ---------------------------------------------------------------- 3

const N: usize = 32;

fn spectrum(map: &SignalMap) -> Vec<Vec<f64>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N);
    let mut rows: Vec<Vec<Complex<f64>>> = (0..N)
        .map(|y| map.row(y).iter().map(|&v| Complex::new(v, 0.0)).collect())
        .collect();
    rows.iter_mut().for_each(|r| fft.process(r));
    let mut out = vec![vec![0.0; N]; N];
    for kx in 0..N {
        let mut col: Vec<Complex<f64>> = (0..N).map(|y| rows[y][kx]).collect();
        fft.process(&mut col);
        for ky in 0..N {
            out[ky][kx] = col[ky].norm();
        }
    }
    out
}

fn dominant(map: &SignalMap, ky: usize, kx: usize) -> bool {
    let s = spectrum(map);
    let mirror = ((N - ky) % N, (N - kx) % N);
    let peak = s[ky][kx];
    peak > 1.0
        && (0..N).all(|y| (0..N).all(|x| (y, x) == (ky, kx) || (y, x) == mirror || s[y][x] < peak * 1e-6))
}

fn c3_signals() -> Outcome {
    let mut maps = 0;
    for k in 1..=N / 2 {
        let f = k as f64 / N as f64;
        let x = gen_sin1d(f, PI / 2.0, Axis::X, N, N).map_err(err)?;
        let y = gen_sin1d(f, PI / 2.0, Axis::Y, N, N).map_err(err)?;
        ensure(dominant(&x, 0, k) && dominant(&y, k, 0), || format!("sin1d k={k}"))?;
        maps += 2;
        for ky in 1..=N / 2 {
            let m = gen_sin2d(f, ky as f64 / N as f64, PI / 4.0, N, N).map_err(err)?;
            ensure(dominant(&m, ky, k), || format!("sin2d kx={k} ky={ky}"))?;
            maps += 1;
        }
    }
    let mut rng = Seed(3).rng();
    for k in [0.0, 1.0, 12.5, 50.0, 99.0, 100.0] {
        let m = gen_dot(k, N, N, &mut rng).map_err(err)?;
        let set = m.data.iter().filter(|&&v| v != 0.0).count();
        ensure(set == dot_count(k, N, N), || format!("dot {k}%: {set} pixels"))?;
        ensure(m.data.iter().all(|&v| v == 0.0 || v.abs() == 1.0), || format!("dot {k}%: values"))?;
        let g = gen_gdot(k.max(1.0), 1.0, N, N, &mut rng).map_err(err)?;
        ensure(g.max_abs() == 1.0, || format!("gdot {k}%: max {}", g.max_abs()))?;
    }
    let bases = [
        SignalBasis::Sin1d {
            freqs: FrequencySet::sample(0.1, 0.3, 10, &mut rng),
            phase: None,
            axis: Default::default(),
        },
        SignalBasis::Sin2d {
            freqs: FrequencySet::fixed(0.2),
            phase: None,
        },
        SignalBasis::Dot { k: 50.0 },
        SignalBasis::Gdot { k: 100.0, sigma: 1.0 },
    ];
    let per = 4 * 64;
    for b in &bases {
        let t = realize_basis(b, Scope::Global, 4, 3, 8, 8, None, Seed(5)).map_err(err)?;
        let d = t.data();
        ensure(d[..per] == d[per..2 * per] && d[..per] == d[2 * per..], || format!("global batch equality {b:?}"))?;
    }
    for (i, a) in bases.iter().enumerate() {
        for b in &bases[i..] {
            for scope in [Scope::Global, Scope::Local] {
                let group = BasisGroup {
                    bases: vec![a.clone(), b.clone()],
                    scope,
                    channels: 16,
                };
                let sum = realize_group(&group, 2, 8, 8, None, Seed(9)).map_err(err)?;
                let ta = realize_basis(a, scope, 16, 2, 8, 8, None, Seed(9).child(0)).map_err(err)?;
                let tb = realize_basis(b, scope, 16, 2, 8, 8, None, Seed(9).child(1)).map_err(err)?;
                let exact = sum.data().iter().zip(ta.data()).zip(tb.data()).all(|((s, x), y)| *s == x + y);
                ensure(exact, || "group is not the exact sum of its bases".into())?;
            }
        }
    }
    Ok(format!(
        "{maps} integer-cycle maps peak at their bin; dot counts exact; gdot max 1; global equality; exact summation"
    ))
}

// ---------------------------------------------------------------- 4

const TARGET: u16 = 0b1011_0110_1101_0011;

fn c4_evolution() -> Outcome {
    let start = Instant::now();
    let cfg = EvolutionConfig::default();
    ensure((cfg.population, cfg.sample, cfg.iterations) == (50, 10, 400), || "defaults differ".into())?;
    let mut found = 0;
    for seed in 0..10u64 {
        let mut queue_ok = true;
        let r = evolve(
            &cfg,
            &mut Seed(seed).derive("onemax").rng(),
            |rng| rng.random::<u16>(),
            |g, rng| {
                let mut c = *g;
                for bit in 0..16 {
                    if rng.random_bool(1.0 / 16.0) {
                        c ^= 1 << bit;
                    }
                }
                c
            },
            // matching bits against a fixed target; the optimum is the target itself
            |gs| gs.iter().map(|g| (16 - (g ^ TARGET).count_ones()) as f64).collect(),
            |t, _, pop| {
                queue_ok &= pop.len() == 50 && pop.front().is_some_and(|i| i.birth_index == t + 1);
            },
        )
        .map_err(err)?;
        ensure(r.history.len() == 450, || format!("seed {seed}: history {}", r.history.len()))?;
        ensure(queue_ok, || format!("seed {seed}: queue size or aging order broken"))?;
        ensure(r.best_trace.windows(2).all(|w| w[1] >= w[0]), || format!("seed {seed}: best trace decreased"))?;
        found += (r.best.genome == TARGET) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(found >= 9, || format!("optimum found in {found}/10 seeds"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("|history| = 450, |queue| = 50 throughout, monotone best; optimum found in {found}/10 seeds"))
}

// ---------------------------------------------------------------- 5

fn c5_mutation() -> Outcome {
    let mut rng = Seed(55).rng();
    let mut task = sample_task(3, &mut rng);
    task.stages = vec![
        StageTargetSpec {
            groups: vec![sample_group(&mut rng), sample_group(&mut rng)],
        },
        StageTargetSpec {
            groups: vec![sample_group(&mut rng)],
        },
        StageTargetSpec {
            groups: vec![sample_group(&mut rng)],
        },
    ];
    let blocks = task_blocks(&task).len();
    ensure(blocks == 5, || format!("{blocks} blocks"))?;
    let trials = 10_000;
    let mut counts = vec![0usize; blocks];
    for _ in 0..trials {
        let (child, touched) = mutate_task_traced(&task, &mut rng);
        ensure(child.stages.len() == 3, || "stage count changed".into())?;
        for (c, t) in counts.iter_mut().zip(touched) {
            *c += t as usize;
        }
    }
    let task_rates: Vec<f64> = counts.iter().map(|&c| c as f64 / trials as f64).collect();
    ensure(task_rates.iter().all(|r| (r - 0.2).abs() <= 0.02), || format!("block rates {task_rates:?}"))?;

    let mut edges = [0usize; 6];
    for _ in 0..trials {
        let g = sample_genotype(&mut rng);
        let (_, hits) = mutate_genotype_traced(&g, &mut rng);
        for (c, h) in edges.iter_mut().zip(hits) {
            *c += h as usize;
        }
    }
    let edge_rates: Vec<f64> = edges.iter().map(|&c| c as f64 / trials as f64).collect();
    ensure(edge_rates.iter().all(|r| (r - 1.0 / 6.0).abs() <= 0.02), || format!("edge rates {edge_rates:?}"))?;
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
    Ok(format!(
        "block regeneration {} (0.2 ± 0.02); edge resample {} (1/6 ± 0.02)",
        fmt(&task_rates),
        fmt(&edge_rates)
    ))
}

// ---------------------------------------------------------------- 6

fn desk_bench() -> Result<(PathBuf, BenchTable), String> {
    let path = workspace_root().join("bench/bench32.csv");
    fs::create_dir_all(path.parent().expect("has parent")).map_err(err)?;
    let table = build_bench_table(&path, &BenchConfig::new(32, 1), jobs(), |id, acc| {
        eprintln!("bench: trained {id} accuracy {acc:.4}")
    })
    .map_err(err)?;
    Ok((path, table))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn score_seed(task: &ProxyTaskConfig, bench: &BenchTable, seed: u64) -> Result<(RankSummary, f64), String> {
    let start = Instant::now();
    let t = seeded_task(task, Seed(seed));
    let images = default_proxy_images(t.batch_size, Seed(seed));
    let (_, summary) = rank_bench(&t, bench, &MacroConfig::default(), &images, jobs(), 0.25).map_err(err)?;
    Ok((summary, start.elapsed().as_secs_f64()))
}

fn c6_ranking() -> Outcome {
    let (_, bench) = desk_bench()?;
    ensure(bench.len() == 32, || format!("bench has {} rows", bench.len()))?;
    let accs: Vec<f64> = bench.rows().iter().map(|r| r.1).collect();
    let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
    ensure(spread > 0.02, || format!("accuracy spread {spread:.4}"))?;
    let combo = ProxyTaskConfig::combo();
    ensure(
        combo.batch_size == 16 && combo.iterations == 100 && combo.optimizer == regnas::nn::OptimizerConfig::sgd(0.1, 1e-5, 0.0),
        || "combo preset hyperparameters differ".into(),
    )?;
    let (mut rho, mut rr, mut zero_rho) = (vec![], vec![], vec![]);
    let mut slowest = 0.0f64;
    for seed in 1..=3 {
        let (s, secs) = score_seed(&combo, &bench, seed)?;
        eprintln!("combo seed {seed}: {s:?} in {secs:.0}s");
        slowest = slowest.max(secs);
        rho.push(s.spearman_rho);
        rr.push(s.retrieving_rate);
        let (z, _) = score_seed(&ProxyTaskConfig::zero(), &bench, seed)?;
        eprintln!("zero seed {seed}: {z:?}");
        zero_rho.push(z.spearman_rho);
    }
    let per_seed = format!("combo rho {rho:.3?} rr@25% {rr:.3?}; zero rho {zero_rho:.3?}");
    let (m_rho, m_rr, m_zero) = (median(&mut rho), median(&mut rr), median(&mut zero_rho));
    let detail = format!(
        "median rho {m_rho:.3} (>= 0.5), rr@25% {m_rr:.3} (>= 0.5), zero-task rho {m_zero:.3} (< combo); \
         slowest scoring {slowest:.0}s (< 900s); {per_seed}"
    );
    ensure(m_rho >= 0.5 && m_rr >= 0.5 && m_zero < m_rho && slowest < 900.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn c7_weighted_loss() -> Outcome {
    let mut rng = Seed(7).rng();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let oracle: f64 = losses
            .iter()
            .enumerate()
            .map(|(i, l)| l / 2f64.powi((n - (i + 1)) as i32))
            .sum();
        let got = EvalScore::from_losses(losses.clone()).weighted;
        ensure(got == weighted_loss(&losses), || "weighted_loss and EvalScore disagree".into())?;
        let rel = (got - oracle).abs() / oracle.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure(rel <= 8.0 * f64::EPSILON, || format!("{losses:?}: {got} vs {oracle}"))?;
    }
    let s = EvalScore::from_losses(vec![1.0, 1.0, 1.0]).weighted;
    ensure(s == 1.75, || format!("(1,1,1) weighted {s}"))?;
    let s = EvalScore::from_losses(vec![4.0, 2.0, 1.0]).weighted;
    ensure(s == 3.0, || format!("(4,2,1) weighted {s}"))?;
    Ok(format!("10000 fuzzed cases, max relative error {worst:.1e}; N=3 weights (1/4, 1/2, 1)"))
}

// ---------------------------------------------------------------- 8

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_regnas"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("`regnas {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn c8_nas() -> Outcome {
    let start = Instant::now();
    let (bench_path, bench) = desk_bench()?;
    let dir = tempfile::tempdir().map_err(err)?;
    let bench_arg = bench_path.canonicalize().map_err(err)?;
    let top = top_k_count(bench.len(), 0.2);
    let mut hits = 0;
    let mut lines = vec![];
    for seed in 1..=3 {
        let out = format!("nas{seed}.json");
        let j = jobs().to_string();
        let s = seed.to_string();
        run_cli(
            dir.path(),
            &["nas-search", "--bench", bench_arg.to_str().unwrap(), "--space", "bench", "--seed", &s, "--jobs", &j, "--out", &out],
        )?;
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(&out)).map_err(err)?).map_err(err)?;
        let rank = v["best_rank"].as_u64().ok_or("missing best_rank")? as usize;
        let metric = v["best_metric"].as_f64().ok_or("missing best_metric")?;
        let optimum = v["optimum_metric"].as_f64().ok_or("missing optimum")?;
        let regret = v["final_regret"].as_f64().ok_or("missing regret")?;
        // accuracy is higher-better, so the loss view is its negation
        ensure(regret == -metric - -optimum, || format!("seed {seed}: regret {regret} != L - L*"))?;
        let mut trace = csv::Reader::from_path(dir.path().join(format!("nas{seed}.regret.csv"))).map_err(err)?;
        let regrets: Vec<f64> = trace
            .records()
            .map(|r| r.map_err(err).and_then(|r| r[6].parse::<f64>().map_err(err)))
            .collect::<Result<_, _>>()?;
        ensure(regrets.len() == 400, || format!("seed {seed}: {} trace rows", regrets.len()))?;
        ensure(regrets.iter().all(|&r| r >= 0.0) && regrets.last() == Some(&regret), || {
            format!("seed {seed}: regret trace inconsistent")
        })?;
        hits += (rank <= top) as usize;
        lines.push(format!("seed {seed}: {} rank {rank} regret {regret:.4}", v["best_id"].as_str().unwrap_or("?")));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{hits}/3 seeds in top {top} of {}; {}; {secs:.0}s", bench.len(), lines.join("; "));
    ensure(hits >= 2 && secs < 1800.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

/// Primary outputs of a run directory by file name; manifests excluded.
fn outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in walk(dir)? {
        let name = entry.strip_prefix(dir).map_err(err)?.to_string_lossy().into_owned();
        if !name.ends_with("manifest.json") {
            files.insert(name, fs::read(&entry).map_err(err)?);
        }
    }
    Ok(files)
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let mut out = vec![];
    for e in fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn same_outputs(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Result<(), String> {
    ensure(a.keys().eq(b.keys()), || format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys()))?;
    for (name, bytes) in a {
        if name.ends_with(".svg") {
            let count = |v: &[u8]| String::from_utf8_lossy(v).matches("<circle").count();
            ensure(count(bytes) == count(&b[name]), || format!("{name}: point counts differ"))?;
        } else {
            ensure(*bytes == b[name], || format!("{name} differs"))?;
        }
    }
    Ok(())
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    let runs: Vec<(&str, Vec<&str>, &str)> = vec![
        (
            "gen-bench",
            vec!["gen-bench", "--size", "3", "--seed", "2", "--epochs", "1", "--train-size", "64", "--test-size", "32"],
            "bench.csv",
        ),
        ("import-bench", vec!["import-bench", "--input", "../bench.csv", "--lower-better"], "imported.csv"),
        ("rank", vec!["rank", "--bench", "../bench.csv", "--iterations", "3"], "rank.csv"),
        (
            "task-search",
            vec!["task-search", "--bench", "../bench.csv", "--probes", "3", "--P", "2", "--S", "1", "--T", "2", "--proxy-iterations", "2"],
            "task.json",
        ),
        (
            "nas-search",
            vec!["nas-search", "--bench", "../bench.csv", "--iterations", "2", "--P", "3", "--S", "2", "--T", "3"],
            "nas.json",
        ),
        ("signals", vec!["signals", "--max-channels", "2", "--format", "both"], "maps"),
        ("eval-arch", vec!["eval-arch", "--bench", "../bench.csv", "--iterations", "3"], "eval.json"),
        ("rnn-rank", vec!["rnn-rank", "--size", "3", "--iterations", "3"], "rnn.csv"),
    ];
    let mut checked = 0;
    for (name, args, out) in runs {
        let dirs = ["first", "replay1", "replay8"].map(|d| root.join(name).join(d));
        for d in &dirs {
            fs::create_dir_all(d).map_err(err)?;
        }
        let mut args: Vec<String> = args.iter().map(|s| s.replace("../", "../../")).collect();
        if name == "eval-arch" {
            let bench = fs::read_to_string(root.join("bench.csv")).map_err(err)?;
            let first = bench.lines().nth(1).ok_or("empty bench")?.split(',').next().unwrap_or_default().to_string();
            args.extend(["--arch".into(), first]);
        }
        let flag = if name == "signals" { "--dump" } else { "--out" };
        args.extend([flag.into(), out.into()]);
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        run_cli(&dirs[0], &argv)?;
        let manifest = dirs[0].join(if name == "signals" {
            format!("{out}/manifest.json")
        } else {
            Path::new(out).with_extension("manifest.json").to_string_lossy().into_owned()
        });
        let manifest = manifest.to_str().ok_or("path")?.to_string();
        for (d, j) in [(&dirs[1], "1"), (&dirs[2], "8")] {
            run_cli(d, &["replay", &manifest, "--out", out, "--jobs", j])?;
        }
        let base = outputs(&dirs[0])?;
        ensure(!base.is_empty(), || format!("{name}: no outputs"))?;
        same_outputs(&base, &outputs(&dirs[1])?).map_err(|e| format!("{name} replay: {e}"))?;
        same_outputs(&base, &outputs(&dirs[2])?).map_err(|e| format!("{name} replay --jobs 8: {e}"))?;
        checked += base.len();
        if name == "gen-bench" {
            fs::copy(dirs[0].join("bench.csv"), root.join("bench.csv")).map_err(err)?;
            fs::copy(dirs[0].join("bench.meta.json"), root.join("bench.meta.json")).map_err(err)?;
        }
    }
    Ok(format!("8 subcommands, {checked} output files identical at --jobs 1 and --jobs 8 replays"))
}
