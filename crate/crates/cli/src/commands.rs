use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::index;
use serde::Serialize;
use serde_json::{json, Value};

use regnas::arch::{CnnGenotype, MacroConfig};
use regnas::bench::{build_bench_table, BenchConfig, BenchTable};
use regnas::evolution::EvolutionConfig;
use regnas::experiment::{default_proxy_images, nas_search, rank_bench, seeded_task};
use regnas::images::load_image_dir;
use regnas::metrics::{kendall_tau, retrieving_rate, spearman_rho};
use regnas::nn::Tensor;
use regnas::proxy::{prepare_batch, score_rnn_population, train_regression_cnn_traced, ProxyScorer, ProxyTaskConfig, RnnProxyConfig};
use regnas::rng::Seed;
use regnas::rnn::{sample_rnn_genotype, RnnGenotype};
use regnas::signals::{map_of, write_csv_grid, write_pgm};
use regnas::task::{mutate_task, sample_task, task_fitness};

use crate::args::*;
use crate::svg::scatter;

/// What a finished command recorded for its manifest.
pub struct Outcome {
    pub config: Value,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_bench(path: &Path) -> Result<BenchTable> {
    BenchTable::load(path).with_context(|| format!("loading bench table {}", path.display()))
}

/// A preset name, or the path of a task JSON file.
pub fn load_task(spec: &str) -> Result<ProxyTaskConfig> {
    let path = Path::new(spec);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        let task: ProxyTaskConfig = serde_json::from_str(&text).with_context(|| format!("parsing task {spec}"))?;
        task.validate()?;
        Ok(task)
    } else {
        ProxyTaskConfig::preset(spec).with_context(|| format!("{spec:?} is neither a task file nor a preset"))
    }
}

/// The seeded task and the input batch it is scored on.
fn resolve_proxy(args: &ProxyArgs) -> Result<(ProxyTaskConfig, Tensor<f32>)> {
    let mut task = load_task(&args.task)?;
    if let Some(n) = args.iterations {
        task.iterations = n;
    }
    let task = seeded_task(&task, Seed(args.seed));
    let images = match &args.images {
        Some(dir) => load_image_dir(dir, task.batch_size)?,
        None => default_proxy_images(task.batch_size, Seed(args.seed)),
    };
    Ok((task, images))
}

pub fn gen_bench(a: &GenBenchArgs) -> Result<Outcome> {
    let mut cfg = BenchConfig::new(a.size, a.seed);
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(n) = a.train_size {
        cfg.dataset.train_size = n;
    }
    if let Some(n) = a.test_size {
        cfg.dataset.test_size = n;
    }
    if let Some(n) = a.noise {
        cfg.dataset.noise = n;
    }
    let table = build_bench_table(&a.out, &cfg, a.jobs, |id, acc| eprintln!("trained {id}: accuracy {acc:.4}"))?;
    let (best_id, best) = table.best().map(|(i, v)| (i.to_string(), v)).unwrap_or_default();
    println!("{} architectures in {}; best {best_id} at {best:.4}", table.len(), a.out.display());
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        seed: a.seed,
        outputs: vec![a.out.clone(), regnas::bench::sidecar_path(&a.out)],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

pub fn import_bench(a: &ImportBenchArgs) -> Result<Outcome> {
    let table = BenchTable::import(&a.input, &a.source, !a.lower_better)
        .with_context(|| format!("importing {}", a.input.display()))?;
    table.save(&a.out)?;
    println!("imported {} rows into {}", table.len(), a.out.display());
    Ok(Outcome {
        config: serde_json::to_value(&table.meta)?,
        seed: 0,
        outputs: vec![a.out.clone(), regnas::bench::sidecar_path(&a.out)],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

pub fn rank(a: &RankArgs) -> Result<Outcome> {
    let bench = load_bench(&a.bench)?;
    let (task, images) = resolve_proxy(&a.proxy)?;
    let macro_cfg = MacroConfig::default();
    let (rows, summary) = rank_bench(&task, &bench, &macro_cfg, &images, a.proxy.jobs, a.top)?;

    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let mut header = vec!["id".to_string(), "metric".into(), "weighted".into()];
    header.extend((1..=task.stages.len()).map(|i| format!("loss_stage{i}")));
    header.push("diverged".into());
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.id.clone(), r.metric.to_string(), r.weighted.to_string()];
        rec.extend(r.per_stage_loss.iter().map(f64::to_string));
        rec.push(r.diverged.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let summary_path = sibling(&a.out, "summary.json");
    write_json(&summary_path, &summary)?;
    let svg_path = sibling(&a.out, "svg");
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.weighted.is_finite() && r.weighted > 0.0)
        .map(|r| (r.metric, r.weighted.log10()))
        .collect();
    let title = format!("task {}  rho={:.3}  tau={:.3}", summary.task_id, summary.spearman_rho, summary.kendall_tau);
    fs::write(&svg_path, scatter(&points, "groundtruth metric", "log10 proxy loss", &title))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome {
        config: json!({ "task": task, "macro": macro_cfg, "bench_meta": bench.meta }),
        seed: a.proxy.seed,
        outputs: vec![a.out.clone(), summary_path, svg_path],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

#[derive(Serialize)]
struct TaskTraceLine {
    birth: usize,
    iteration: Option<usize>,
    task_id: String,
    rho: f64,
    best_rho: f64,
}

pub fn task_search(a: &TaskSearchArgs) -> Result<Outcome> {
    let bench = load_bench(&a.bench)?;
    let members = bench.cnn_genotypes()?;
    if a.probes == 0 || a.probes > members.len() {
        bail!("--probes must lie in 1..={} for this bench", members.len());
    }
    let master = Seed(a.seed);
    let probes: Vec<CnnGenotype> = index::sample(&mut master.derive("probes").rng(), members.len(), a.probes)
        .into_iter()
        .map(|i| members[i])
        .collect();
    let macro_cfg = MacroConfig::default();
    let cfg = EvolutionConfig {
        population: a.population,
        sample: a.sample,
        iterations: a.iterations,
        maximize: true,
    };
    let failure = RefCell::new(None);
    let mut images: HashMap<usize, Tensor<f32>> = HashMap::new();
    let fitness = |tasks: &[ProxyTaskConfig]| -> Vec<f64> {
        tasks
            .iter()
            .map(|t| {
                let imgs = images
                    .entry(t.batch_size)
                    .or_insert_with(|| default_proxy_images(t.batch_size, master));
                match task_fitness(t, &probes, &bench, &macro_cfg, imgs, master.derive("proxy"), a.jobs) {
                    Ok(rho) => {
                        eprintln!("task {}: rho {rho:.4}", t.id());
                        rho
                    }
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                }
            })
            .collect()
    };
    let stages = macro_cfg.stages();
    let result = regnas::evolution::evolve(
        &cfg,
        &mut master.derive("task-search").rng(),
        |rng| {
            let mut t = sample_task(stages, rng);
            if let Some(n) = a.proxy_iterations {
                t.iterations = n;
            }
            t
        },
        mutate_task,
        fitness,
        |_, _, _| {},
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }

    let trace_path = sibling(&a.out, "trace.jsonl");
    let mut trace = create(&trace_path)?;
    for (birth, ind) in result.history.iter().enumerate() {
        let line = TaskTraceLine {
            birth,
            iteration: birth.checked_sub(a.population),
            task_id: ind.genome.id(),
            rho: ind.fitness,
            best_rho: result.best_trace[birth],
        };
        writeln!(trace, "{}", serde_json::to_string(&line)?)?;
    }
    trace.flush()?;
    write_json(&a.out, &result.best.genome)?;
    let summary_path = sibling(&a.out, "summary.json");
    let summary = json!({
        "best_task_id": result.best.genome.id(),
        "best_rho": result.best.fitness,
        "evaluated": result.history.len(),
        "probes": probes.iter().map(CnnGenotype::id).collect::<Vec<_>>(),
    });
    write_json(&summary_path, &summary)?;
    println!("best task {} with rho {:.4}", result.best.genome.id(), result.best.fitness);
    Ok(Outcome {
        config: json!({ "evolution": cfg, "macro": macro_cfg, "bench_meta": bench.meta, "probes": a.probes }),
        seed: a.seed,
        outputs: vec![a.out.clone(), trace_path, summary_path],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

pub fn nas(a: &NasSearchArgs) -> Result<Outcome> {
    let bench = load_bench(&a.bench)?;
    let (task, images) = resolve_proxy(&a.proxy)?;
    let macro_cfg = MacroConfig::default();
    let mut scorer = ProxyScorer::new(macro_cfg.clone(), task.clone(), &images, a.proxy.jobs)?;
    let cfg = EvolutionConfig {
        population: a.population,
        sample: a.sample,
        iterations: a.generations,
        maximize: false,
    };
    let mut outcome = nas_search(&mut scorer, &bench, a.space.into(), &cfg, Seed(a.proxy.seed))?;

    let trace_path = sibling(&a.out, "regret.csv");
    let mut w = csv::Writer::from_writer(create(&trace_path)?);
    w.write_record(["iteration", "child_id", "child_score", "best_id", "best_score", "best_metric", "regret"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &outcome.steps {
        w.write_record([
            s.iteration.to_string(),
            s.child_id.clone(),
            s.child_score.to_string(),
            s.best_id.clone(),
            s.best_score.to_string(),
            opt(s.best_metric),
            opt(s.regret),
        ])?;
    }
    w.flush()?;
    outcome.steps.clear();
    write_json(&a.out, &outcome)?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(Outcome {
        config: json!({ "task": task, "macro": macro_cfg, "evolution": cfg, "space": a.space, "bench_meta": bench.meta }),
        seed: a.proxy.seed,
        outputs: vec![a.out.clone(), trace_path],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

pub fn signals(a: &SignalsArgs) -> Result<Outcome> {
    let mut task = seeded_task(&load_task(&a.task)?, Seed(a.seed));
    task.batch_size = a.batch;
    let macro_cfg = MacroConfig::default();
    let images = default_proxy_images(a.batch, Seed(a.seed));
    let batch = prepare_batch(&task, &macro_cfg, &images)?;
    fs::create_dir_all(&a.dump).with_context(|| format!("creating {}", a.dump.display()))?;
    let mut outputs = Vec::new();
    for (si, target) in batch.targets.iter().enumerate() {
        let Some(t) = target else { continue };
        let (b, channels, _, _) = t.dims4()?;
        for bi in 0..b {
            for c in 0..channels.min(a.max_channels) {
                let map = map_of(t, bi, c)?;
                let stem = format!("stage{}_b{bi}_c{c}", si + 1);
                if matches!(a.format, MapFormat::Csv | MapFormat::Both) {
                    let p = a.dump.join(format!("{stem}.csv"));
                    let mut f = create(&p)?;
                    write_csv_grid(&mut f, &map)?;
                    f.flush()?;
                    outputs.push(p);
                }
                if matches!(a.format, MapFormat::Pgm | MapFormat::Both) {
                    let p = a.dump.join(format!("{stem}.pgm"));
                    let mut f = create(&p)?;
                    write_pgm(&mut f, &map)?;
                    f.flush()?;
                    outputs.push(p);
                }
            }
        }
    }
    println!("wrote {} maps to {}", outputs.len(), a.dump.display());
    Ok(Outcome {
        config: json!({ "task": task, "macro": macro_cfg }),
        seed: a.seed,
        outputs,
        manifest: a.dump.join("manifest.json"),
    })
}

pub fn eval_arch(a: &EvalArchArgs) -> Result<Outcome> {
    let geno: CnnGenotype = a.arch.parse()?;
    let (task, images) = resolve_proxy(&a.proxy)?;
    let macro_cfg = MacroConfig::default();
    let batch = prepare_batch(&task, &macro_cfg, &images)?;
    let out = train_regression_cnn_traced(&geno, &macro_cfg, &task, &batch)?;
    let metric = match &a.bench {
        Some(p) => load_bench(p)?.get(&geno.id()),
        None => None,
    };
    let report = json!({
        "arch": geno.id(),
        "task_id": task.id(),
        "weighted": out.score.weighted,
        "per_stage_loss": out.score.per_stage_loss,
        "diverged": out.score.diverged,
        "metric": metric,
        "train_losses": out.train_losses,
    });
    write_json(&a.out, &report)?;
    println!(
        "{}: weighted loss {} (per stage {:?}){}",
        geno.id(),
        out.score.weighted,
        out.score.per_stage_loss,
        metric.map(|m| format!(", groundtruth {m}")).unwrap_or_default()
    );
    Ok(Outcome {
        config: json!({ "task": task, "macro": macro_cfg }),
        seed: a.proxy.seed,
        outputs: vec![a.out.clone()],
        manifest: sibling(&a.out, "manifest.json"),
    })
}

fn sample_distinct_rnns(size: usize, seed: Seed) -> Result<Vec<RnnGenotype>> {
    let mut rng = seed.rng();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    for _ in 0..size.saturating_mul(100).max(100) {
        if out.len() == size {
            break;
        }
        let g = sample_rnn_genotype(&mut rng)?;
        if seen.insert(g.clone()) {
            out.push(g);
        }
    }
    if out.len() < size {
        bail!("could only sample {} distinct cells", out.len());
    }
    Ok(out)
}

pub fn rnn_rank(a: &RnnRankArgs) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str::<RnnProxyConfig>(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => RnnProxyConfig::default(),
    };
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    cfg.seed = Seed(a.seed).derive("proxy");
    let bench = a.bench.as_deref().map(load_bench).transpose()?;
    let genotypes: Vec<RnnGenotype> = match &bench {
        Some(b) => b
            .rows()
            .iter()
            .map(|(id, _)| id.parse().with_context(|| format!("{id} is not a recurrent cell id")))
            .collect::<Result<_>>()?,
        None => sample_distinct_rnns(a.size, Seed(a.seed).derive("rnn-sample"))?,
    };
    let losses = score_rnn_population(&genotypes, &cfg, a.jobs)?;

    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record(["id", "loss", "metric"])?;
    for (g, l) in genotypes.iter().zip(&losses) {
        let metric = bench.as_ref().and_then(|b| b.get(&g.to_string()));
        w.write_record([g.to_string(), l.to_string(), metric.map(|m| m.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    let mut outputs = vec![a.out.clone()];
    if let Some(b) = &bench {
        let pred: Vec<f64> = losses.iter().map(|l| -l).collect();
        let truth = genotypes
            .iter()
            .map(|g| b.oriented(&g.to_string()))
            .collect::<regnas::Result<Vec<_>>>()?;
        let summary = json!({
            "architectures": genotypes.len(),
            "spearman_rho": spearman_rho(&pred, &truth)?,
            "kendall_tau": kendall_tau(&pred, &truth)?,
            "top_fraction": a.top,
            "retrieving_rate": retrieving_rate(&pred, &truth, a.top)?,
        });
        let p = sibling(&a.out, "summary.json");
        write_json(&p, &summary)?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
        outputs.push(p);
    } else {
        let finite = losses.iter().filter(|l| l.is_finite()).count();
        println!("scored {} cells ({finite} finite) into {}", genotypes.len(), a.out.display());
    }
    Ok(Outcome {
        config: json!({ "proxy": cfg }),
        seed: a.seed,
        outputs,
        manifest: sibling(&a.out, "manifest.json"),
    })
}
