//! Dataset difficulty and cost calibration.
//!
//! Trains the fixed reference CNN on the procedural dataset and times one
//! proxy evaluation and one groundtruth run.

use std::time::Instant;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use regnas::arch::{CellOp, CnnGenotype, MacroConfig};
use regnas::bench::{
    gen_dataset, proxy_images, reference_cnn, train_classifier, train_groundtruth, DatasetConfig, GroundtruthConfig,
    CLASSES,
};
use regnas::proxy::{prepare_batch, train_regression_cnn_traced, ProxyTaskConfig};
use regnas::rng::Seed;

fn main() -> regnas::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(DatasetConfig::default().noise);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let dcfg = DatasetConfig { noise, ..Default::default() };
    let gcfg = GroundtruthConfig { epochs, ..Default::default() };
    let macro_cfg = MacroConfig::default();

    let t = Instant::now();
    let data = gen_dataset(&dcfg, Seed(1));
    println!("dataset: {:.2}s", t.elapsed().as_secs_f64());

    let task = ProxyTaskConfig::combo();
    let images = proxy_images(&dcfg, task.batch_size, Seed(1));
    let batch = prepare_batch(&task, &macro_cfg, &images)?;
    for op in [CellOp::Skip, CellOp::Conv1x1, CellOp::Conv3x3] {
        let g = CnnGenotype::uniform(op);
        let t = Instant::now();
        let out = train_regression_cnn_traced(&g, &macro_cfg, &task, &batch)?;
        println!(
            "proxy {g}: weighted {:.4} first {:.4} last {:.4} in {:.2}s",
            out.score.weighted,
            out.train_losses.first().unwrap_or(&0.0),
            out.train_losses.last().unwrap_or(&0.0),
            t.elapsed().as_secs_f64()
        );
    }

    if args.get(3).is_some_and(|a| a == "proxy-only") {
        return Ok(());
    }
    let t = Instant::now();
    let mut reference = reference_cnn(CLASSES);
    let acc = train_classifier(&mut reference, &data, &gcfg, Seed(1))?;
    println!("reference cnn: acc {acc:.4} in {:.1}s", t.elapsed().as_secs_f64());

    for op in [CellOp::Skip, CellOp::Conv3x3] {
        let g = CnnGenotype::uniform(op);
        let t = Instant::now();
        let acc = train_groundtruth(&g, &macro_cfg, &data, &gcfg, Seed(1))?;
        println!("groundtruth {g}: acc {acc:.4} in {:.1}s", t.elapsed().as_secs_f64());
    }
    Ok(())
}
