use csnln::*;
fn main() {
    for (batch, crop) in [(2usize, 16usize), (4, 24), (4, 32), (8, 32), (16, 48)] {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path().join("train"), 4, 64, 100).unwrap();
        let mut cfg = config::TrainConfig::default();
        cfg.batch = batch; cfg.crop = crop; cfg.epochs = 1; cfg.steps_per_epoch = 6;
        cfg.train_dir = dir.path().join("train");
        cfg.val_dir = None;
        cfg.out_dir = dir.path().join("run");
        let t0 = std::time::Instant::now();
        train::train(&cfg, None).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("batch {batch} crop {crop}: {:.3} s/step -> 4000 steps = {:.1} min",
                 dt / 6.0, dt / 6.0 * 4000.0 / 60.0);
    }
}
