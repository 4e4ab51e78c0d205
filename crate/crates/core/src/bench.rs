//! Desk-scale groundtruth: a procedural 8-class image dataset, full training
//! of sampled architectures, and persisted benchmark tables.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{build_classifier, CnnGenotype, MacroConfig, SPACE_SIZE};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_loss, Graph, Optimizer, OptimizerConfig, Tensor};
use crate::rng::Seed;
use crate::rnn::RnnGenotype;

pub const CLASSES: usize = 8;

pub const CLASS_NAMES: [&str; CLASSES] = [
    "stripes-low",
    "stripes-high",
    "checker-small",
    "checker-large",
    "radial",
    "dots-sparse",
    "dots-dense",
    "solid",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub image_size: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_size: 2048,
            test_size: 512,
            image_size: 32,
            noise: 0.35,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledImages {
    /// `n × 3 × s × s`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx` gathered into one batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let plane: usize = self.images.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * plane);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * plane..(i + 1) * plane]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = idx.len();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_vec(&shape, data).expect("gathered rows match shape"), labels)
    }
}

#[derive(Clone, Debug)]
pub struct ProceduralDataset {
    pub train: LabeledImages,
    pub test: LabeledImages,
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Foreground and background colors at least 0.35 apart on average.
fn color_pair<R: Rng + ?Sized>(rng: &mut R) -> ([f64; 3], [f64; 3]) {
    loop {
        let (a, b) = (random_color(rng), random_color(rng));
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0;
        if gap >= 0.35 {
            return (a, b);
        }
    }
}

/// Grayscale pattern in `[0, 1]` for one instance of `class`.
fn pattern<R: Rng + ?Sized>(class: usize, s: usize, rng: &mut R) -> Vec<f64> {
    let mut p = vec![0.0; s * s];
    let stripes = |p: &mut [f64], f: f64, rng: &mut R| {
        let theta = rng.random_range(0.0..PI);
        let phi = rng.random_range(0.0..2.0 * PI);
        let (c, sn) = (theta.cos(), theta.sin());
        for y in 0..s {
            for x in 0..s {
                let u = x as f64 * c + y as f64 * sn;
                p[y * s + x] = 0.5 + 0.5 * (2.0 * PI * f * u + phi).sin();
            }
        }
    };
    let checker = |p: &mut [f64], cell: usize, rng: &mut R| {
        let (ox, oy) = (rng.random_range(0..cell * 2), rng.random_range(0..cell * 2));
        for y in 0..s {
            for x in 0..s {
                p[y * s + x] = (((x + ox) / cell + (y + oy) / cell) % 2) as f64;
            }
        }
    };
    let dots = |p: &mut [f64], count: usize, radius: f64, rng: &mut R| {
        for _ in 0..count {
            let (cx, cy) = (rng.random_range(0.0..s as f64), rng.random_range(0.0..s as f64));
            for y in 0..s {
                for x in 0..s {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    if d2 <= radius * radius {
                        p[y * s + x] = 1.0;
                    }
                }
            }
        }
    };
    match class {
        0 => {
            let f = rng.random_range(0.05..0.09);
            stripes(&mut p, f, rng)
        }
        1 => {
            let f = rng.random_range(0.16..0.24);
            stripes(&mut p, f, rng)
        }
        2 => {
            let cell = rng.random_range(2..=3);
            checker(&mut p, cell, rng)
        }
        3 => {
            let cell = rng.random_range(6..=8);
            checker(&mut p, cell, rng)
        }
        4 => {
            let (cx, cy) = (rng.random_range(0.0..s as f64), rng.random_range(0.0..s as f64));
            let r = rng.random_range(12.0..24.0);
            for y in 0..s {
                for x in 0..s {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    p[y * s + x] = (d / r).min(1.0);
                }
            }
        }
        5 => {
            let n = rng.random_range(5..=9);
            dots(&mut p, n, 1.6, rng)
        }
        6 => {
            let n = rng.random_range(30..=45);
            dots(&mut p, n, 1.1, rng)
        }
        _ => p.fill(rng.random_range(0.3..0.7)),
    }
    p
}

fn render<R: Rng + ?Sized>(class: usize, s: usize, noise: f64, rng: &mut R, out: &mut [f32]) {
    let p = pattern(class, s, rng);
    let (fg, bg) = color_pair(rng);
    let plane = s * s;
    for c in 0..3 {
        for (i, &v) in p.iter().enumerate() {
            let n: f64 = StandardNormal.sample(rng);
            let pixel = bg[c] + (fg[c] - bg[c]) * v + noise * n;
            out[c * plane + i] = pixel.clamp(0.0, 1.0) as f32;
        }
    }
}

/// `n` class-balanced images in shuffled order. Image `i` is drawn from
/// `seed.child(i)`, so any prefix is reproducible on its own.
pub fn gen_split(cfg: &DatasetConfig, n: usize, seed: Seed) -> LabeledImages {
    let s = cfg.image_size;
    let plane = 3 * s * s;
    let mut labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    labels.shuffle(&mut seed.derive("order").rng());
    let mut data = vec![0.0f32; n * plane];
    data.par_chunks_mut(plane)
        .zip(labels.par_iter())
        .enumerate()
        .for_each(|(i, (out, &class))| render(class, s, cfg.noise, &mut seed.child(i as u64).rng(), out));
    LabeledImages {
        images: Tensor::from_vec(&[n, 3, s, s], data).expect("sized above"),
        labels,
    }
}

pub fn gen_dataset(cfg: &DatasetConfig, seed: Seed) -> ProceduralDataset {
    ProceduralDataset {
        train: gen_split(cfg, cfg.train_size, seed.derive("train")),
        test: gen_split(cfg, cfg.test_size, seed.derive("test")),
    }
}

/// A fixed batch of `b` procedural images for proxy scoring.
pub fn proxy_images(cfg: &DatasetConfig, b: usize, seed: Seed) -> Tensor<f32> {
    gen_split(cfg, b, seed.derive("proxy-batch")).images
}

/// Full-training recipe for groundtruth accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundtruthConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for GroundtruthConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// Trains `graph` (one input, logits output) with cosine-decayed SGD and
/// returns its test accuracy. Evaluation uses batch statistics in batches
/// of `batch_size`.
pub fn train_classifier(
    graph: &mut Graph<f32>,
    data: &ProceduralDataset,
    cfg: &GroundtruthConfig,
    seed: Seed,
) -> Result<f64> {
    graph.init_params(&mut seed.derive("init").rng());
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = (cfg.epochs * steps_per_epoch).max(1);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(cfg.lr, cfg.weight_decay, cfg.momentum));
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed.derive("shuffle").rng();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            opt.set_lr(cfg.lr * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos()));
            let (x, y) = data.train.gather(chunk);
            let cache = graph.forward(&[x])?;
            let (_, grad) = cross_entropy_loss(cache.output(0), &y)?;
            let grads = graph.backward(&cache, &[grad])?;
            opt.step(graph.params_mut(), &grads);
            step += 1;
        }
    }
    evaluate_classifier(graph, &data.test, cfg.batch_size)
}

pub fn evaluate_classifier(graph: &Graph<f32>, split: &LabeledImages, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..split.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch_size) {
        let (x, y) = split.gather(chunk);
        let cache = graph.forward(&[x])?;
        let logits = cache.output(0);
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&y) {
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            correct += (pred == label) as usize;
        }
    }
    Ok(correct as f64 / split.len().max(1) as f64)
}

/// Test accuracy of `geno` with a GAP + linear head. Degenerate genotypes
/// and diverged runs score 0.
pub fn train_groundtruth(
    geno: &CnnGenotype,
    macro_cfg: &MacroConfig,
    data: &ProceduralDataset,
    cfg: &GroundtruthConfig,
    seed: Seed,
) -> Result<f64> {
    let mut graph = match build_classifier::<f32>(geno, macro_cfg, CLASSES) {
        Ok(g) => g,
        Err(Error::Degenerate(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    match train_classifier(&mut graph, data, cfg, seed) {
        Err(Error::Diverged(_)) => Ok(0.0),
        other => other,
    }
}

/// Fixed three-layer CNN used to calibrate dataset difficulty.
pub fn reference_cnn(classes: usize) -> Graph<f32> {
    let mut g = Graph::new();
    let mut x = g.input(0);
    let mut cin = 3;
    for (i, cout) in [16, 32, 64].into_iter().enumerate() {
        if i > 0 {
            x = g.avg_pool(x, 2, 2, 0);
        }
        let c = g.conv2d(x, cin, cout, 3, 1, 1);
        let b = g.batch_norm(c, cout);
        x = g.relu(b);
        cin = cout;
    }
    let p = g.global_avg_pool(x);
    let logits = g.linear(p, cin, classes, true);
    g.set_outputs(vec![logits]);
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub source: String,
    pub higher_better: bool,
    pub seed: u64,
    pub config_hash: String,
}

/// Genotype id → metric, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub meta: BenchMeta,
    rows: Vec<(String, f64)>,
    index: HashMap<String, usize>,
}

/// `bench.csv` → `bench.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn parse_metric(id: &str, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("metric {raw:?} for id {id:?} is not a number")))
}

/// Whether `id` names a genotype of either space.
pub fn is_known_genotype_id(id: &str) -> bool {
    id.parse::<CnnGenotype>().is_ok() || id.parse::<RnnGenotype>().is_ok()
}

impl BenchTable {
    pub fn new(meta: BenchMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, metric: f64) -> Result<()> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.rows.len());
        self.rows.push((id, metric));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.rows[i].1)
    }

    pub fn require(&self, id: &str) -> Result<f64> {
        self.get(id).ok_or_else(|| Error::MissingGroundtruth(id.to_string()))
    }

    /// Metric oriented so that higher is better.
    pub fn oriented(&self, id: &str) -> Result<f64> {
        let v = self.require(id)?;
        Ok(if self.meta.higher_better { v } else { -v })
    }

    /// Best raw metric in the table (the optimum `L*`).
    pub fn best(&self) -> Option<(&str, f64)> {
        let sign = if self.meta.higher_better { 1.0 } else { -1.0 };
        self.rows
            .iter()
            .max_by(|a, b| (sign * a.1).total_cmp(&(sign * b.1)).then(b.0.cmp(&a.0)))
            .map(|(id, v)| (id.as_str(), *v))
    }

    pub fn cnn_genotypes(&self) -> Result<Vec<CnnGenotype>> {
        self.rows.iter().map(|(id, _)| id.parse()).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "metric"])?;
        for (id, m) in &self.rows {
            w.write_record([id.as_str(), &m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the CSV and its metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(path)?)?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    fn read_rows(path: &Path, meta: BenchMeta, require_known_ids: bool) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "metric" {
            return Err(Error::Parse(format!("{}: header must be `id,metric`", path.display())));
        }
        let mut table = Self::new(meta);
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), line + 2)))?;
            let id = rec[0].trim();
            if require_known_ids && !is_known_genotype_id(id) {
                return Err(Error::Parse(format!("{}: unknown genotype id {id:?}", path.display())));
            }
            table.insert(id, parse_metric(id, &rec[1])?)?;
        }
        Ok(table)
    }

    /// Loads a CSV written by [`BenchTable::save`] together with its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = sidecar_path(path);
        let meta: BenchMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| {
            Error::Parse(format!("{}: cannot read metadata sidecar: {e}", meta_path.display()))
        })?)
        .map_err(|e| Error::Parse(format!("{}: {e}", meta_path.display())))?;
        Self::read_rows(path, meta, true)
    }

    /// Imports an external `id,metric` CSV, validating every id.
    pub fn import(path: &Path, source: &str, higher_better: bool) -> Result<Self> {
        let meta = BenchMeta {
            source: source.to_string(),
            higher_better,
            seed: 0,
            config_hash: String::new(),
        };
        Self::read_rows(path, meta, true)
    }
}

/// Everything that determines a bench table's contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub size: usize,
    pub seed: u64,
    pub macro_cfg: MacroConfig,
    pub dataset: DatasetConfig,
    pub training: GroundtruthConfig,
}

impl BenchConfig {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            seed,
            macro_cfg: MacroConfig::default(),
            dataset: DatasetConfig::default(),
            training: GroundtruthConfig::default(),
        }
    }

    /// Hash of everything except the size, so a larger table can extend a smaller one.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "seed": self.seed,
            "macro": self.macro_cfg,
            "dataset": self.dataset,
            "training": self.training,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn meta(&self) -> BenchMeta {
        BenchMeta {
            source: "procedural".into(),
            higher_better: true,
            seed: self.seed,
            config_hash: self.config_hash(),
        }
    }
}

/// `size` distinct non-degenerate genotypes, uniform without replacement.
pub fn sample_bench_genotypes(size: usize, seed: Seed) -> Result<Vec<CnnGenotype>> {
    let valid: Vec<CnnGenotype> = (0..SPACE_SIZE)
        .map(|i| CnnGenotype::from_index(i).expect("index in range"))
        .filter(CnnGenotype::is_valid)
        .collect();
    if size > valid.len() {
        return Err(Error::InvalidSpec(format!(
            "bench size {size} exceeds the {} valid genotypes",
            valid.len()
        )));
    }
    let mut rng = seed.rng();
    Ok(rand::seq::index::sample(&mut rng, valid.len(), size)
        .into_iter()
        .map(|i| valid[i])
        .collect())
}

/// Builds (or resumes) the bench table at `path`. Rows already present are
/// kept; missing ones are trained `jobs` at a time and appended in sample
/// order, so an interrupted build resumes to the identical table.
pub fn build_bench_table(
    path: &Path,
    cfg: &BenchConfig,
    jobs: usize,
    mut progress: impl FnMut(&str, f64),
) -> Result<BenchTable> {
    let meta = cfg.meta();
    let sample = sample_bench_genotypes(cfg.size, Seed(cfg.seed).derive("bench-sample"))?;
    let mut table = if path.exists() {
        let existing = BenchTable::load(path)?;
        if existing.meta != meta {
            return Err(Error::InvalidSpec(format!(
                "{} was built with a different configuration (hash {} vs {})",
                path.display(),
                existing.meta.config_hash,
                meta.config_hash
            )));
        }
        let wanted: HashSet<String> = sample.iter().map(CnnGenotype::id).collect();
        if let Some((id, _)) = existing.rows().iter().find(|(id, _)| !wanted.contains(id)) {
            return Err(Error::InvalidSpec(format!("{} holds {id}, which is not in the sample", path.display())));
        }
        existing
    } else {
        let t = BenchTable::new(meta);
        t.save(path)?;
        t
    };
    // rewrite so the file holds exactly the recovered rows in sample order
    let mut ordered = BenchTable::new(table.meta.clone());
    for g in &sample {
        if let Some(v) = table.get(&g.id()) {
            ordered.insert(g.id(), v)?;
        }
    }
    table = ordered;
    table.save(path)?;

    let missing: Vec<CnnGenotype> = sample.iter().filter(|g| table.get(&g.id()).is_none()).copied().collect();
    if missing.is_empty() {
        return Ok(table);
    }
    let data = gen_dataset(&cfg.dataset, Seed(cfg.seed).derive("dataset"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let gt_seed = Seed(cfg.seed).derive("groundtruth");
    for chunk in missing.chunks(jobs.max(1)) {
        let accs: Vec<f64> = pool.install(|| {
            chunk
                .par_iter()
                .map(|g| train_groundtruth(g, &cfg.macro_cfg, &data, &cfg.training, gt_seed.derive(&g.id())))
                .collect::<Result<_>>()
        })?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        for (g, acc) in chunk.iter().zip(accs) {
            writeln!(file, "{},{}", g.id(), acc)?;
            table.insert(g.id(), acc)?;
            progress(&g.id(), acc);
        }
        file.flush()?;
    }
    Ok(table)
}
