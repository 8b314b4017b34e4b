//! Desk-scale protocol dry run: full model vs the CS-NL-ablated variant vs
//! the bicubic baseline on held-out synthetic textures.
use csnln::*;

fn run(dir: &std::path::Path, tag: &str, csnl: bool, lr: f64, halve: usize, batch: usize, crop: usize, epochs: usize) -> Option<f64> {
    let mut cfg = config::TrainConfig::default();
    cfg.batch = batch;
    cfg.crop = crop;
    cfg.lr = lr;
    cfg.halve_every = halve;
    cfg.epochs = epochs;
    cfg.steps_per_epoch = 50;
    cfg.seed = 0;
    cfg.csnl = csnl;
    cfg.train_dir = dir.join("train");
    cfg.val_dir = Some(dir.join("val"));
    cfg.out_dir = dir.join(tag);
    let t0 = std::time::Instant::now();
    let outcome = train::train(&cfg, None).unwrap();
    println!(
        "{tag}: best {:?} final loss {:?} in {:.1} min",
        outcome.best_val_psnr,
        outcome.final_mean_loss,
        t0.elapsed().as_secs_f64() / 60.0
    );
    outcome.best_val_psnr
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let halve: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let batch: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let crop: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(16);
    let epochs: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(40);
    let full_only = args.get(6).is_some();
    let dir = std::path::PathBuf::from(format!("/tmp/desk_{lr}_{halve}_{batch}_{crop}_{epochs}"));
    let _ = std::fs::remove_dir_all(&dir);
    synth::write_dataset(dir.join("train"), 6, 64, 100).unwrap();
    synth::write_dataset(dir.join("val"), 3, 64, 200).unwrap();
    let (val_images, _) = train::load_dataset::<f32>(dir.join("val"), 2).unwrap();
    let baseline = train::bicubic_baseline_psnr(&val_images, 2).unwrap();
    println!("bicubic baseline: {baseline:.3} dB (lr {lr}, halve {halve}, batch {batch}, crop {crop}, epochs {epochs})");
    let full = run(&dir, "full", true, lr, halve, batch, crop, epochs);
    if full_only {
        println!(
            "full {:.3} baseline {baseline:.3} margin {:+.3}",
            full.unwrap(),
            full.unwrap() - baseline
        );
        return;
    }
    let ablated = run(&dir, "ablated", false, lr, halve, batch, crop, epochs);
    println!(
        "full {:.3} ablated {:.3} baseline {baseline:.3} margin {:+.3} ordering_ok {}",
        full.unwrap(),
        ablated.unwrap(),
        full.unwrap() - baseline,
        ablated.unwrap() <= full.unwrap()
    );
}
