//! The training loop: patch sampling, dihedral augmentation, the Adam
//! schedule, CSV logging, and bit-exact checkpoint resume.
//!
//! Training runs at 32-bit, matching the checkpoint precision, so saving
//! and reloading is lossless and `train(k epochs)` followed by `train(m
//! more)` reproduces `train(k+m)` bit for bit. Each optimizer step draws
//! its batch from a stream derived from the run seed and the global step
//! index alone, never from loop history, which is what makes resume exact.
//!
//! Checkpoints hold the model parameters under their own names plus
//! `adam.m.*` / `adam.v.*` moments and `meta.*` scalars (epoch, global
//! step, optimizer step, best validation PSNR). The metrics log is an
//! append-only CSV `epoch,step,loss,lr,val_psnr` with one row per epoch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::adam::{adam_step, AdamState};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::imgio;
use crate::metrics::psnr;
use crate::network::{forward, l1_loss, CsnlnParams};
use crate::resample::bicubic_down;
use crate::rng::Stream;
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Stream id for optimizer step `k`; odd ids so init (0) and any fixed
/// auxiliary streams never collide with a step.
pub const fn step_stream(k: u64) -> u64 {
    2 * k + 1
}

/// The schedule: halve the initial rate every `halve_every` epochs.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr * 0.5f64.powi((epoch / config.halve_every) as i32)
}

/// Apply dihedral transform `variant` in 0..8: rotate 90 degrees
/// counter-clockwise `variant % 4` times, then mirror horizontally if
/// `variant >= 4`.
pub fn dihedral<E: Element>(t: &Tensor<E>, variant: u8) -> Result<Tensor<E>> {
    if variant >= 8 {
        return Err(Error::invalid(
            "dihedral",
            format!("variant must be in 0..8, got {variant}"),
        ));
    }
    let mut out = t.clone();
    for _ in 0..variant % 4 {
        let s = out.shape();
        let prev = out;
        out = Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| {
            prev.at(n, c, x, s.w - 1 - y)
        })?;
    }
    if variant >= 4 {
        let s = out.shape();
        let prev = out;
        out = Tensor::from_fn(s, |n, c, y, x| prev.at(n, c, y, s.w - 1 - x))?;
    }
    Ok(out)
}

/// The variant that undoes `dihedral(_, variant)`. Mirrored variants are
/// their own inverse; pure rotations invert to the complementary rotation.
pub fn dihedral_inverse(variant: u8) -> u8 {
    if variant >= 4 {
        variant
    } else {
        (4 - variant) % 4
    }
}

/// Draw one of the 8 dihedral variants uniformly and apply it to both
/// halves of an LR/HR pair.
pub fn augment<E: Element>(
    lr: &Tensor<E>,
    hr: &Tensor<E>,
    st: &mut Stream,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let variant = st.below(8) as u8;
    Ok((dihedral(lr, variant)?, dihedral(hr, variant)?))
}

/// Load every PNG in `dir` (sorted by file name), keeping images at least
/// `min_side` on both sides; smaller ones produce a warning string instead.
/// An empty or unreadable directory, or one with no usable image, is an
/// error.
pub fn load_dataset<E: Element>(
    dir: impl AsRef<Path>,
    min_side: usize,
) -> Result<(Vec<Tensor<E>>, Vec<String>)> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PNG files in {}", dir.display())));
    }
    let mut images = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let img = imgio::load_png(&path)?;
        if img.width < min_side || img.height < min_side {
            warnings.push(format!(
                "skipping {}: {}x{} is smaller than the {min_side} pixel crop",
                path.display(),
                img.width,
                img.height
            ));
            continue;
        }
        images.push(imgio::image_to_tensor(&img));
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no image in {} is at least {min_side}x{min_side}",
            dir.display()
        )));
    }
    Ok((images, warnings))
}

/// Snap values to the 8-bit grid (clamp, scale, round), the convention for
/// LR inputs so that training matches inference on files.
pub fn quantize<E: Element>(t: &Tensor<E>) -> Result<Tensor<E>> {
    Tensor::from_fn(t.shape(), |n, c, y, x| {
        let v = t.at(n, c, y, x).as_f64().clamp(0.0, 1.0);
        E::from_f64((v * 255.0).round() / 255.0)
    })
}

/// Sample an aligned batch: HR crops of `config.crop`, augmented, with LR
/// generated by bicubic downscale and snapped to the 8-bit grid. Per item
/// the draws are image index, crop corner y, corner x, then the
/// augmentation variant, in that order.
pub fn sample_batch<E: Element>(
    images: &[Tensor<E>],
    config: &TrainConfig,
    st: &mut Stream,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if images.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let crop = config.crop;
    let mut lrs = Vec::with_capacity(config.batch);
    let mut hrs = Vec::with_capacity(config.batch);
    for _ in 0..config.batch {
        let img = &images[st.below(images.len())];
        let s = img.shape();
        if s.h < crop || s.w < crop {
            return Err(Error::Dataset(format!(
                "dataset image {} is smaller than the crop {crop}",
                s
            )));
        }
        let y0 = st.below(s.h - crop + 1);
        let x0 = st.below(s.w - crop + 1);
        let hr = Tensor::from_fn(Shape::new(1, 3, crop, crop), |_, c, y, x| {
            img.at(0, c, y0 + y, x0 + x)
        })?;
        let lr = quantize(&bicubic_down(&hr, config.scale)?)?;
        let (lr, hr) = augment(&lr, &hr, st)?;
        lrs.push(lr);
        hrs.push(hr);
    }
    let lr_side = crop / config.scale;
    let lr = Tensor::from_fn(Shape::new(config.batch, 3, lr_side, lr_side), |n, c, y, x| {
        lrs[n].at(0, c, y, x)
    })?;
    let hr = Tensor::from_fn(Shape::new(config.batch, 3, crop, crop), |n, c, y, x| {
        hrs[n].at(0, c, y, x)
    })?;
    Ok((lr, hr))
}

/// Mean Y-channel PSNR of the model over whole validation images, border
/// crop `scale. Images are trimmed to a multiple of the scale first.
pub fn validate_psnr(params: &CsnlnParams<f32>, images: &[Tensor<f32>]) -> Result<f64> {
    let scale = params.config.scale;
    let mut sum = 0.0;
    for img in images {
        let s = img.shape();
        let (th, tw) = (s.h - s.h % scale, s.w - s.w % scale);
        let hr = Tensor::from_fn(Shape::new(1, 3, th, tw), |_, c, y, x| img.at(0, c, y, x))?;
        let lr = quantize(&bicubic_down(&hr, scale)?)?;
        let sr = forward(None, &lr, params)?;
        let sr_y = imgio::image_to_y::<f64>(&imgio::tensor_to_image(&sr)?);
        let hr_y = imgio::image_to_y::<f64>(&imgio::tensor_to_image(&hr)?);
        sum += psnr(&sr_y, &hr_y, scale)?;
    }
    Ok(sum / images.len() as f64)
}

/// Plain bicubic upscaling baseline under the identical protocol.
pub fn bicubic_baseline_psnr(images: &[Tensor<f32>], scale: usize) -> Result<f64> {
    let mut sum = 0.0;
    for img in images {
        let s = img.shape();
        let (th, tw) = (s.h - s.h % scale, s.w - s.w % scale);
        let hr = Tensor::from_fn(Shape::new(1, 3, th, tw), |_, c, y, x| img.at(0, c, y, x))?;
        let lr = quantize(&bicubic_down(&hr, scale)?)?;
        let up = crate::resample::bicubic_resize(&lr, th, tw)?;
        let up_y = imgio::image_to_y::<f64>(&imgio::tensor_to_image(&up)?);
        let hr_y = imgio::image_to_y::<f64>(&imgio::tensor_to_image(&hr)?);
        sum += psnr(&up_y, &hr_y, scale)?;
    }
    Ok(sum / images.len() as f64)
}

/// What a finished (or zero-epoch) run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub global_step: u64,
    pub final_mean_loss: Option<f64>,
    pub best_val_psnr: Option<f64>,
    pub last_path: PathBuf,
    pub best_path: Option<PathBuf>,
    pub log_path: PathBuf,
    pub warnings: Vec<String>,
}

const BEST_SENTINEL_NONE: f64 = -1.0;
const BEST_CAP: f64 = 1e6;

fn meta_scalar(v: f64) -> Tensor<f32> {
    Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![v as f32]).expect("finite meta value")
}

/// Architecture fields stored alongside the weights so a checkpoint is
/// self-describing: inference and evaluation rebuild the model without the
/// original config file.
pub fn arch_meta(mc: &crate::network::ModelConfig) -> Vec<(String, Tensor<f32>)> {
    let b = &mc.branches;
    let flags = (b.local as usize) | (b.isnl as usize) << 1 | (b.csnl as usize) << 2;
    [
        ("meta.arch.scale", mc.scale),
        ("meta.arch.t", mc.t),
        ("meta.arch.c", mc.c),
        ("meta.arch.ce", mc.ce),
        ("meta.arch.grid_y", mc.grid.0),
        ("meta.arch.grid_x", mc.grid.1),
        ("meta.arch.patch", mc.patch),
        ("meta.arch.candidate_stride", mc.candidate_stride),
        ("meta.arch.branches", flags),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), meta_scalar(v as f64)))
    .collect()
}

/// Reconstruct the architecture from checkpoint metadata.
pub fn arch_from_checkpoint(
    map: &BTreeMap<String, Tensor<f32>>,
) -> Result<crate::network::ModelConfig> {
    let get = |key: &str| -> Result<usize> {
        let t = map
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
        Ok(t.data()[0] as usize)
    };
    let flags = get("meta.arch.branches")?;
    let mc = crate::network::ModelConfig {
        scale: get("meta.arch.scale")?,
        t: get("meta.arch.t")?,
        c: get("meta.arch.c")?,
        ce: get("meta.arch.ce")?,
        grid: (get("meta.arch.grid_y")?, get("meta.arch.grid_x")?),
        patch: get("meta.arch.patch")?,
        candidate_stride: get("meta.arch.candidate_stride")?,
        branches: crate::sem::SemBranches {
            local: flags & 1 != 0,
            isnl: flags & 2 != 0,
            csnl: flags & 4 != 0,
        },
    };
    mc.validate()?;
    Ok(mc)
}

/// Rebuild a model from a self-describing checkpoint (weights only; training
/// state is ignored). The entry point for inference and evaluation.
pub fn model_from_checkpoint(map: &BTreeMap<String, Tensor<f32>>) -> Result<CsnlnParams<f32>> {
    let mc = arch_from_checkpoint(map)?;
    let mut params = CsnlnParams::<f32>::init(mc, 0)?;
    let weights: BTreeMap<String, Tensor<f32>> = map
        .iter()
        .filter(|(k, _)| !k.starts_with("adam.") && !k.starts_with("meta."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    params.load_named(&weights)?;
    Ok(params)
}

fn full_state(
    params: &CsnlnParams<f32>,
    adam: &AdamState<f32>,
    epoch_done: usize,
    global_step: u64,
    best: Option<f64>,
) -> BTreeMap<String, Tensor<f32>> {
    let mut map: BTreeMap<String, Tensor<f32>> = params.named().into_iter().collect();
    map.extend(arch_meta(&params.config));
    for (name, m) in &adam.m {
        map.insert(format!("adam.m.{name}"), m.clone());
    }
    for (name, v) in &adam.v {
        map.insert(format!("adam.v.{name}"), v.clone());
    }
    map.insert("meta.adam_step".into(), meta_scalar(adam.step as f64));
    map.insert("meta.epoch".into(), meta_scalar(epoch_done as f64));
    map.insert("meta.global_step".into(), meta_scalar(global_step as f64));
    let best_stored = match best {
        Some(b) => b.min(BEST_CAP),
        None => BEST_SENTINEL_NONE,
    };
    map.insert("meta.best_psnr".into(), meta_scalar(best_stored));
    map
}

fn restore_state(
    params: &mut CsnlnParams<f32>,
    map: &BTreeMap<String, Tensor<f32>>,
) -> Result<(AdamState<f32>, usize, u64, Option<f64>)> {
    let mut param_entries = BTreeMap::new();
    let mut adam = AdamState::new();
    let mut meta = BTreeMap::new();
    for (name, t) in map {
        if let Some(rest) = name.strip_prefix("adam.m.") {
            adam.m.insert(rest.to_string(), t.clone());
        } else if let Some(rest) = name.strip_prefix("adam.v.") {
            adam.v.insert(rest.to_string(), t.clone());
        } else if name.starts_with("meta.") {
            if t.shape() != Shape::new(1, 1, 1, 1) {
                return Err(Error::Checkpoint(format!("{name} must be a scalar")));
            }
            meta.insert(name.clone(), t.data()[0] as f64);
        } else {
            param_entries.insert(name.clone(), t.clone());
        }
    }
    params.load_named(&param_entries)?;
    let need = |key: &str| {
        meta.get(key)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))
    };
    adam.step = need("meta.adam_step")? as u64;
    let epoch_done = need("meta.epoch")? as usize;
    let global_step = need("meta.global_step")? as u64;
    let best_raw = need("meta.best_psnr")?;
    let best = if best_raw < 0.0 { None } else { Some(best_raw) };
    Ok((adam, epoch_done, global_step, best))
}

/// Run (or continue) a training run. With `resume`, parameters, optimizer
/// moments and counters come from the checkpoint and the loop continues at
/// the next epoch; everything else is rebuilt from the config, so the
/// continuation is bit-identical to a run that never stopped.
pub fn train(config: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let (train_images, warnings) = load_dataset::<f32>(&config.train_dir, config.crop)?;
    let val_images: Option<Vec<Tensor<f32>>> = match &config.val_dir {
        Some(dir) => Some(load_dataset::<f32>(dir, config.scale)?.0),
        None => None,
    };

    let mut params = CsnlnParams::<f32>::init(config.model_config(), config.seed)?;
    let mut adam = AdamState::new();
    let mut start_epoch = 0usize;
    let mut global_step = 0u64;
    let mut best: Option<f64> = None;
    if let Some(path) = resume {
        let map = load_checkpoint::<f32>(path)?;
        let ckpt_arch = arch_from_checkpoint(&map)?;
        if ckpt_arch != config.model_config() {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {ckpt_arch:?} does not match the config's {:?}",
                config.model_config()
            )));
        }
        let (a, e, g, b) = restore_state(&mut params, &map)?;
        adam = a;
        start_epoch = e;
        global_step = g;
        best = b;
    }

    let log_path = config.out_dir.join("metrics.csv");
    if !log_path.exists() {
        std::fs::write(&log_path, "epoch,step,loss,lr,val_psnr\n")?;
    }
    let last_path = config.out_dir.join("last.ckpt");
    let best_path = config.out_dir.join("best.ckpt");
    let mut wrote_best = best.is_some();
    let mut final_mean_loss = None;

    for epoch in start_epoch..config.epochs {
        let lr = lr_at(epoch, config);
        let mut loss_sum = 0.0f64;
        for _ in 0..config.steps_per_epoch {
            let mut st = Stream::new(config.seed, step_stream(global_step));
            let (lr_batch, hr_batch) = sample_batch(&train_images, config, &mut st)?;
            let tape = GradTape::new();
            let sr = forward(Some(&tape), &lr_batch, &params)?;
            let loss = l1_loss(Some(&tape), &sr, &hr_batch)?;
            loss_sum += loss.data()[0] as f64;
            let store = tape.backward(&loss)?;
            let mut grads = BTreeMap::new();
            for (name, t) in params.named() {
                if let Some(g) = store.get(&t) {
                    grads.insert(name, g.clone());
                }
            }
            let mut slots = params.named_mut();
            adam_step(&mut slots, &grads, &mut adam, lr)?;
            global_step += 1;
        }
        let mean_loss = loss_sum / config.steps_per_epoch as f64;
        final_mean_loss = Some(mean_loss);

        let val = match &val_images {
            Some(images) => Some(validate_psnr(&params, images)?),
            None => None,
        };
        if let Some(v) = val {
            if best.map_or(true, |b| v > b) {
                best = Some(v);
                save_checkpoint(&best_path, &full_state(&params, &adam, epoch + 1, global_step, best))?;
                wrote_best = true;
            }
        }
        let val_field = val.map_or(String::new(), |v| format!("{v}"));
        let line = format!("{epoch},{global_step},{mean_loss},{lr},{val_field}\n");
        append(&log_path, &line)?;
        save_checkpoint(&last_path, &full_state(&params, &adam, epoch + 1, global_step, best))?;
    }

    if start_epoch >= config.epochs {
        // Zero epochs to run: still leave a loadable checkpoint of the
        // initialization (or of the resumed state).
        save_checkpoint(
            &last_path,
            &full_state(&params, &adam, start_epoch, global_step, best),
        )?;
    }

    Ok(TrainOutcome {
        epochs_run: config.epochs.saturating_sub(start_epoch),
        global_step,
        final_mean_loss,
        best_val_psnr: best,
        last_path,
        best_path: wrote_best.then_some(best_path),
        log_path,
        warnings,
    })
}

fn append(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::synth::write_dataset;

    fn desk_config(dir: &Path) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.preset = Preset::Toy;
        cfg.scale = 2;
        cfg.batch = 2;
        cfg.crop = 16;
        cfg.epochs = 2;
        cfg.steps_per_epoch = 2;
        cfg.halve_every = 1;
        cfg.seed = 11;
        cfg.train_dir = dir.join("train");
        cfg.val_dir = Some(dir.join("val"));
        cfg.out_dir = dir.join("run");
        cfg
    }

    fn with_data(dir: &Path) -> TrainConfig {
        write_dataset(dir.join("train"), 3, 64, 100).unwrap();
        write_dataset(dir.join("val"), 2, 64, 200).unwrap();
        desk_config(dir)
    }

    #[test]
    fn lr_schedule_anchors() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(149, &cfg), 1e-4);
        assert_eq!(lr_at(150, &cfg), 5e-5);
        assert_eq!(lr_at(449, &cfg), 2.5e-5);
    }

    #[test]
    fn dihedral_identity_inverse_and_period() {
        let mut st = Stream::new(1, 29);
        let t = Tensor::from_fn(Shape::new(1, 2, 3, 5), |_, _, _, _| st.uniform()).unwrap();
        assert_eq!(dihedral(&t, 0).unwrap().data(), t.data());
        for v in 0..8u8 {
            let once = dihedral(&t, v).unwrap();
            let back = dihedral(&once, dihedral_inverse(v)).unwrap();
            assert_eq!(back.shape(), t.shape());
            assert_eq!(back.data(), t.data(), "variant {v}");
        }
        // Rotating four times is the identity.
        let mut r = t.clone();
        for _ in 0..4 {
            r = dihedral(&r, 1).unwrap();
        }
        assert_eq!(r.data(), t.data());
        assert!(dihedral(&t, 8).is_err());
    }

    #[test]
    fn dihedral_rotation_geometry() {
        // 2x2 marker: [[1,2],[3,4]]. CCW rotation sends the right column up.
        let t = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = dihedral(&t, 1).unwrap();
        assert_eq!(r.data(), &[2.0, 4.0, 1.0, 3.0]);
        let f = dihedral(&t, 4).unwrap();
        assert_eq!(f.data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn augment_is_uniform_over_variants() {
        let t = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut st = Stream::new(77, 5);
        let mut counts = [0usize; 8];
        for _ in 0..8000 {
            let (a, _) = augment(&t, &t, &mut st).unwrap();
            // Identify the variant by where values 1 and 2 landed.
            let d = a.data();
            let variant = (0..8u8)
                .find(|&v| dihedral(&t, v).unwrap().data() == d)
                .unwrap();
            counts[variant as usize] += 1;
        }
        for (v, &c) in counts.iter().enumerate() {
            assert!((950..=1050).contains(&c), "variant {v}: {c}");
        }
    }

    #[test]
    fn augment_applies_same_transform_to_both() {
        let mut st = Stream::new(3, 31);
        let lr = Tensor::from_fn(Shape::new(1, 3, 4, 4), |_, _, _, _| st.uniform()).unwrap();
        let hr = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, _, _, _| st.uniform()).unwrap();
        let mut draw = Stream::new(9, 33);
        let (la, ha) = augment(&lr, &hr, &mut draw).unwrap();
        let mut redraw = Stream::new(9, 33);
        let v = redraw.below(8) as u8;
        assert_eq!(la.data(), dihedral(&lr, v).unwrap().data());
        assert_eq!(ha.data(), dihedral(&hr, v).unwrap().data());
    }

    #[test]
    fn sample_batch_shapes_alignment_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = with_data(dir.path());
        let (images, warnings) = load_dataset::<f32>(&cfg.train_dir, cfg.crop).unwrap();
        assert!(warnings.is_empty());
        let mut st = Stream::new(5, 41);
        let (lr, hr) = sample_batch(&images, &cfg, &mut st).unwrap();
        assert_eq!(lr.shape(), Shape::new(2, 3, 8, 8));
        assert_eq!(hr.shape(), Shape::new(2, 3, 16, 16));
        // Same stream position: identical batch.
        let mut st2 = Stream::new(5, 41);
        let (lr2, hr2) = sample_batch(&images, &cfg, &mut st2).unwrap();
        assert_eq!(lr.data(), lr2.data());
        assert_eq!(hr.data(), hr2.data());
        // LR is the quantized bicubic downscale of HR, augmented together:
        // recompute from the un-augmented draws.
        let mut st3 = Stream::new(5, 41);
        for item in 0..cfg.batch {
            let img = &images[st3.below(images.len())];
            let y0 = st3.below(64 - 16 + 1);
            let x0 = st3.below(64 - 16 + 1);
            let hr_crop = Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, c, y, x| {
                img.at(0, c, y0 + y, x0 + x)
            })
            .unwrap();
            let lr_crop = quantize(&bicubic_down(&hr_crop, 2).unwrap()).unwrap();
            let v = st3.below(8) as u8;
            let want_hr = dihedral(&hr_crop, v).unwrap();
            let want_lr = dihedral(&lr_crop, v).unwrap();
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        assert_eq!(hr.at(item, c, y, x), want_hr.at(0, c, y, x));
                    }
                }
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(lr.at(item, c, y, x), want_lr.at(0, c, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_loading_skips_small_and_errors_on_empty() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("mixed");
        write_dataset(&data, 2, 64, 1).unwrap();
        let tiny = crate::synth::texture_image(32, 9).unwrap();
        imgio::save_png(data.join("tiny.png"), &tiny).unwrap();
        let (images, warnings) = load_dataset::<f32>(&data, 48).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("tiny.png"));

        let empty = dir.path().join("none");
        std::fs::create_dir_all(&empty).unwrap();
        assert!(load_dataset::<f32>(&empty, 8).is_err());
        // Only too-small images is an error as well.
        assert!(load_dataset::<f32>(&data, 128).is_err());
    }

    #[test]
    fn zero_epoch_train_checkpoints_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = with_data(dir.path());
        cfg.epochs = 0;
        let outcome = train(&cfg, None).unwrap();
        assert_eq!(outcome.epochs_run, 0);
        assert_eq!(outcome.global_step, 0);
        let map = load_checkpoint::<f32>(&outcome.last_path).unwrap();
        let init = CsnlnParams::<f32>::init(cfg.model_config(), cfg.seed).unwrap();
        for (name, t) in init.named() {
            assert_eq!(map[&name].data(), t.data(), "{name}");
        }
        assert_eq!(map["meta.global_step"].data()[0], 0.0);

        // The checkpoint is self-describing: arch metadata round-trips and
        // the model rebuilds without the config.
        assert_eq!(arch_from_checkpoint(&map).unwrap(), cfg.model_config());
        let rebuilt = model_from_checkpoint(&map).unwrap();
        for ((an, at), (bn, bt)) in rebuilt.named().iter().zip(init.named().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data());
        }
    }

    #[test]
    fn resume_rejects_mismatched_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = with_data(dir.path());
        cfg.epochs = 1;
        let outcome = train(&cfg, None).unwrap();
        let mut other = cfg.clone();
        other.epochs = 2;
        other.csnl = false;
        let err = train(&other, Some(&outcome.last_path)).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn fixed_seed_training_is_bit_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = with_data(dir.path());
        let a = train(&cfg, None).unwrap();
        let bytes_a = std::fs::read(&a.last_path).unwrap();
        let log_a = std::fs::read_to_string(&a.log_path).unwrap();

        let mut cfg_b = cfg.clone();
        cfg_b.out_dir = dir.path().join("run_b");
        let b = train(&cfg_b, None).unwrap();
        assert_eq!(std::fs::read(&b.last_path).unwrap(), bytes_a);
        assert_eq!(std::fs::read_to_string(&b.log_path).unwrap(), log_a);
    }

    #[test]
    fn resume_matches_uninterrupted_run_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = with_data(dir.path());

        // Straight run: 2 epochs.
        let straight = train(&cfg, None).unwrap();
        let straight_bytes = std::fs::read(&straight.last_path).unwrap();

        // Stop after 1 epoch, then resume to 2.
        let mut first = cfg.clone();
        first.out_dir = dir.path().join("run_split");
        first.epochs = 1;
        let part = train(&first, None).unwrap();
        let mut second = first.clone();
        second.epochs = 2;
        let done = train(&second, Some(&part.last_path)).unwrap();
        assert_eq!(done.epochs_run, 1);
        assert_eq!(std::fs::read(&done.last_path).unwrap(), straight_bytes);

        // The stitched log equals the straight log.
        let log_straight = std::fs::read_to_string(&straight.log_path).unwrap();
        let log_split = std::fs::read_to_string(&done.log_path).unwrap();
        assert_eq!(log_split, log_straight);
    }

    #[test]
    fn training_reduces_the_loss() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = with_data(dir.path());
        cfg.epochs = 10;
        cfg.steps_per_epoch = 5;
        cfg.batch = 2;
        cfg.crop = 16;
        cfg.lr = 1e-3;
        cfg.val_dir = None;
        let outcome = train(&cfg, None).unwrap();
        let log = std::fs::read_to_string(&outcome.log_path).unwrap();
        let losses: Vec<f64> = log
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(losses.len(), 10);
        let early = losses[0];
        let late = losses[8..].iter().sum::<f64>() / 2.0;
        assert!(
            late < early,
            "mean L1 did not improve: first {early}, late {late}"
        );
    }

    #[test]
    fn csv_has_header_and_well_formed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = with_data(dir.path());
        let outcome = train(&cfg, None).unwrap();
        let log = std::fs::read_to_string(&outcome.log_path).unwrap();
        let mut lines = log.lines();
        assert_eq!(lines.next().unwrap(), "epoch,step,loss,lr,val_psnr");
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0].parse::<usize>().unwrap(), i);
            assert_eq!(fields[1].parse::<u64>().unwrap(), ((i + 1) * 2) as u64);
            fields[2].parse::<f64>().unwrap();
            fields[3].parse::<f64>().unwrap();
            fields[4].parse::<f64>().unwrap(); // val_psnr present here
        }
        assert!(outcome.best_val_psnr.is_some());
        assert!(outcome.best_path.is_some());
    }
}
