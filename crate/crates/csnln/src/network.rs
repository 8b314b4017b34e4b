//! The recurrent super-resolution network: a two-conv head, `T` recurrences
//! of one shared mining cell, and a single reconstruction convolution over
//! the concatenated per-step features.
//!
//! Each step maps the LR feature map through the cell to an HR feature map
//! `H_i`, then a two-layer CNN (stride-s first, so it lands back at LR)
//! produces the next recurrence input `L_i`. All `T` steps share the same
//! cell parameters; the parameter count does not depend on `T`. The `H_i`
//! are concatenated along channels and one linear 3x3 convolution maps the
//! `T*C`-channel stack to the 3-channel SR image. There is no global skip
//! connection and no activation after the tail.
//!
//! Images and feature maps live in `[0,1]`-ranged reals (nothing clamps
//! feature values; the range statement is about image conventions at the
//! boundaries).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops;
use crate::rng::{Stream, STREAM_INIT};
use crate::sem::{self, SemBranches, SemParams};
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Architecture hyperparameters. `t` is the recurrence count, `c` the
/// feature width, `ce` the embedded width inside attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub scale: usize,
    pub t: usize,
    pub c: usize,
    pub ce: usize,
    pub grid: (usize, usize),
    pub patch: usize,
    pub candidate_stride: usize,
    pub branches: SemBranches,
}

impl ModelConfig {
    /// Small enough for 64-bit finite-difference checks in seconds, big
    /// enough to learn the synthetic textures.
    pub fn toy(scale: usize) -> Self {
        ModelConfig {
            scale,
            t: 2,
            c: 16,
            ce: 8,
            grid: (1, 1),
            patch: 3,
            candidate_stride: 1,
            branches: SemBranches::default(),
        }
    }

    /// The full-size preset: T=12, C=128, C_e=64.
    pub fn paper(scale: usize) -> Self {
        ModelConfig {
            scale,
            t: 12,
            c: 128,
            ce: 64,
            grid: (2, 2),
            patch: 3,
            candidate_stride: 1,
            branches: SemBranches::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        sem::projection_kernel(self.scale)?;
        if self.t == 0 {
            return Err(Error::Config("recurrence count t must be >= 1".into()));
        }
        if self.c == 0 || self.ce == 0 || self.ce > self.c {
            return Err(Error::Config(format!(
                "channel widths must satisfy 1 <= ce <= c, got c={} ce={}",
                self.c, self.ce
            )));
        }
        Ok(())
    }
}

/// All learnable tensors of the network plus the architecture they belong
/// to.
#[derive(Clone, Debug)]
pub struct CsnlnParams<E: Element> {
    pub config: ModelConfig,
    pub head_w1: Tensor<E>,
    pub head_b1: Tensor<E>,
    pub head_slope: Tensor<E>,
    pub head_w2: Tensor<E>,
    pub head_b2: Tensor<E>,
    pub sem: SemParams<E>,
    pub out_w1: Tensor<E>,
    pub out_b1: Tensor<E>,
    pub out_slope: Tensor<E>,
    pub out_w2: Tensor<E>,
    pub out_b2: Tensor<E>,
    pub tail_w: Tensor<E>,
    pub tail_b: Tensor<E>,
}

impl<E: Element> CsnlnParams<E> {
    /// Fresh parameters, deterministic in `seed`. Weights are uniform with a
    /// fan-in bound, biases zero, activation slopes 0.25; tensors are drawn
    /// in a fixed order (head, cell, out, tail) from the init stream of the
    /// seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let st = &mut Stream::new(seed, STREAM_INIT);
        let c = config.c;
        let head_w1 = sem::init_weight(st, Shape::new(c, 3, 3, 3), 3 * 9);
        let head_b1 = sem::zero_param(Shape::new(1, c, 1, 1));
        let head_slope = sem::slope_param(c);
        let head_w2 = sem::init_weight(st, Shape::new(c, c, 3, 3), c * 9);
        let head_b2 = sem::zero_param(Shape::new(1, c, 1, 1));
        let sem = SemParams::init(
            config.scale,
            c,
            config.ce,
            config.grid,
            config.patch,
            config.candidate_stride,
            config.branches,
            st,
        )?;
        let out_w1 = sem::init_weight(st, Shape::new(c, c, 3, 3), c * 9);
        let out_b1 = sem::zero_param(Shape::new(1, c, 1, 1));
        let out_slope = sem::slope_param(c);
        let out_w2 = sem::init_weight(st, Shape::new(c, c, 3, 3), c * 9);
        let out_b2 = sem::zero_param(Shape::new(1, c, 1, 1));
        let tail_w = sem::init_weight(st, Shape::new(3, config.t * c, 3, 3), config.t * c * 9);
        let tail_b = sem::zero_param(Shape::new(1, 3, 1, 1));
        Ok(CsnlnParams {
            config,
            head_w1,
            head_b1,
            head_slope,
            head_w2,
            head_b2,
            sem,
            out_w1,
            out_b1,
            out_slope,
            out_w2,
            out_b2,
            tail_w,
            tail_b,
        })
    }

    /// All learnable tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = vec![
            ("head.conv1.weight".to_string(), self.head_w1.clone()),
            ("head.conv1.bias".to_string(), self.head_b1.clone()),
            ("head.slope".to_string(), self.head_slope.clone()),
            ("head.conv2.weight".to_string(), self.head_w2.clone()),
            ("head.conv2.bias".to_string(), self.head_b2.clone()),
        ];
        for (name, t) in self.sem.named() {
            out.push((format!("sem.{name}"), t));
        }
        out.extend([
            ("out.conv1.weight".to_string(), self.out_w1.clone()),
            ("out.conv1.bias".to_string(), self.out_b1.clone()),
            ("out.slope".to_string(), self.out_slope.clone()),
            ("out.conv2.weight".to_string(), self.out_w2.clone()),
            ("out.conv2.bias".to_string(), self.out_b2.clone()),
            ("tail.weight".to_string(), self.tail_w.clone()),
            ("tail.bias".to_string(), self.tail_b.clone()),
        ]);
        out
    }

    /// Mutable handles in the same order as [`CsnlnParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out: Vec<(String, &mut Tensor<E>)> = vec![
            ("head.conv1.weight".to_string(), &mut self.head_w1),
            ("head.conv1.bias".to_string(), &mut self.head_b1),
            ("head.slope".to_string(), &mut self.head_slope),
            ("head.conv2.weight".to_string(), &mut self.head_w2),
            ("head.conv2.bias".to_string(), &mut self.head_b2),
        ];
        for (name, t) in self.sem.named_mut() {
            out.push((format!("sem.{name}"), t));
        }
        out.push(("out.conv1.weight".to_string(), &mut self.out_w1));
        out.push(("out.conv1.bias".to_string(), &mut self.out_b1));
        out.push(("out.slope".to_string(), &mut self.out_slope));
        out.push(("out.conv2.weight".to_string(), &mut self.out_w2));
        out.push(("out.conv2.bias".to_string(), &mut self.out_b2));
        out.push(("tail.weight".to_string(), &mut self.tail_w));
        out.push(("tail.bias".to_string(), &mut self.tail_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.shape().count()).sum()
    }

    /// Replace every tensor from a name-to-tensor map, typically read from a
    /// checkpoint. The map must cover the parameter set exactly, with
    /// matching shapes.
    pub fn load_named(&mut self, map: &BTreeMap<String, Tensor<E>>) -> Result<()> {
        let mut slots = self.named_mut();
        if map.len() != slots.len() {
            return Err(Error::Checkpoint(format!(
                "parameter set mismatch: checkpoint has {} tensors, model needs {}",
                map.len(),
                slots.len()
            )));
        }
        for (name, slot) in slots.iter_mut() {
            let loaded = map.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint is missing tensor {name}"))
            })?;
            if loaded.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {} but the model expects {}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            **slot = loaded.to_param();
        }
        Ok(())
    }
}

/// Two 3x3 convolutions with an activation between: `(n,3,h,w)` image to
/// `(n,C,h,w)` initial features.
pub fn head<E: Element>(
    tape: Option<&GradTape<E>>,
    image: &Tensor<E>,
    p: &CsnlnParams<E>,
) -> Result<Tensor<E>> {
    if image.shape().c != 3 {
        return Err(Error::shape(
            "head",
            format!("expected a 3-channel image, got {}", image.shape()),
        ));
    }
    let a = ops::conv2d(tape, image, &p.head_w1, Some(&p.head_b1), 1, 1)?;
    let a = ops::prelu(tape, &a, &p.head_slope)?;
    ops::conv2d(tape, &a, &p.head_w2, Some(&p.head_b2), 1, 1)
}

/// The HR-to-LR return path after each cell: stride-s 3x3 conv, activation,
/// 3x3 conv. Pad 1 makes the strided output exactly `h x w` for every
/// supported scale.
fn out_cnn<E: Element>(
    tape: Option<&GradTape<E>>,
    h: &Tensor<E>,
    p: &CsnlnParams<E>,
) -> Result<Tensor<E>> {
    let a = ops::conv2d(tape, h, &p.out_w1, Some(&p.out_b1), p.config.scale, 1)?;
    let a = ops::prelu(tape, &a, &p.out_slope)?;
    ops::conv2d(tape, &a, &p.out_w2, Some(&p.out_b2), 1, 1)
}

/// One recurrence: `(H_i, L_i)` from `L_{i-1}`.
pub fn step<E: Element>(
    tape: Option<&GradTape<E>>,
    l_prev: &Tensor<E>,
    p: &CsnlnParams<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let h = sem::sem_forward(tape, l_prev, &p.sem)?;
    let l = out_cnn(tape, &h, p)?;
    Ok((h, l))
}

/// Full network: `(n,3,h,w)` LR image to `(n,3,s*h,s*w)` SR image.
pub fn forward<E: Element>(
    tape: Option<&GradTape<E>>,
    image: &Tensor<E>,
    p: &CsnlnParams<E>,
) -> Result<Tensor<E>> {
    let mut l = head(tape, image, p)?;
    let mut hs = Vec::with_capacity(p.config.t);
    for _ in 0..p.config.t {
        let (h, l_next) = step(tape, &l, p)?;
        hs.push(h);
        l = l_next;
    }
    let refs: Vec<&Tensor<E>> = hs.iter().collect();
    let cat = ops::concat(tape, &refs, 1)?;
    ops::conv2d(tape, &cat, &p.tail_w, Some(&p.tail_b), 1, 1)
}

/// Mean absolute error over all elements.
pub fn l1_loss<E: Element>(
    tape: Option<&GradTape<E>>,
    sr: &Tensor<E>,
    hr: &Tensor<E>,
) -> Result<Tensor<E>> {
    ops::mean_abs_diff(tape, sr, hr)
}

/// Finite-difference checks through the whole network at a tiny
/// configuration, against the input and a parameter from each section.
/// f64 only.
pub fn gradient_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, finite_diff_check_at, CheckReport, GRADCHECK_EPS};

    let config = ModelConfig {
        scale: 2,
        t: 2,
        c: 8,
        ce: 4,
        grid: (1, 1),
        patch: 3,
        candidate_stride: 1,
        branches: SemBranches::default(),
    };
    let params = CsnlnParams::<f64>::init(config, 7)?;
    let mut st = Stream::new(20240820, 41);
    let x = Tensor::from_fn(Shape::new(1, 3, 6, 6), |_, _, _, _| st.uniform())?;
    let mask = Tensor::from_fn(Shape::new(1, 3, 12, 12), |_, _, _, _| st.uniform_symmetric(1.0))?;
    let scalar = |t: Option<&GradTape<f64>>, v: &Tensor<f64>| -> Result<Tensor<f64>> {
        ops::sum_all(t, &ops::mul(t, v, &mask)?)
    };

    let mut out = Vec::new();
    let eps = GRADCHECK_EPS;

    let pc = params.clone();
    let e = finite_diff_check(|t, xx| scalar(t, &forward(t, xx, &pc)?), &x, eps)?;
    out.push(CheckReport::new("network/input", e));

    let cases: [(&str, Box<dyn Fn(&mut CsnlnParams<f64>) -> &mut Tensor<f64>>); 3] = [
        ("network/head.conv1.weight", Box::new(|p| &mut p.head_w1)),
        ("network/tail.weight", Box::new(|p| &mut p.tail_w)),
        ("network/out.conv1.weight", Box::new(|p| &mut p.out_w1)),
    ];
    for (name, pick) in cases {
        let pc = params.clone();
        let xc = x.clone();
        let value = {
            let mut tmp = params.clone();
            pick(&mut tmp).clone()
        };
        let e = finite_diff_check_at(
            |t, ww| {
                let mut p = pc.clone();
                *pick(&mut p) = ww.clone();
                scalar(t, &forward(t, &xc, &p)?)
            },
            &value,
            eps,
            &sem::subsample(value.shape().count(), 24),
        )?;
        out.push(CheckReport::new(name, e));
    }

    // A shared-cell parameter, reached from both recurrence steps.
    let pc = params.clone();
    let xc = x.clone();
    let fuse_w = params.sem.fusion.as_ref().unwrap().weight.clone();
    let e = finite_diff_check_at(
        |t, ww| {
            let mut p = pc.clone();
            p.sem.fusion.as_mut().unwrap().weight = ww.clone();
            scalar(t, &forward(t, &xc, &p)?)
        },
        &fuse_w,
        eps,
        &sem::subsample(fuse_w.shape().count(), 24),
    )?;
    out.push(CheckReport::new("network/sem.fuse.weight", e));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::GradTape;

    fn toy() -> CsnlnParams<f64> {
        CsnlnParams::init(ModelConfig::toy(2), 5).unwrap()
    }

    fn random_image(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut st = Stream::new(seed, 19);
        Tensor::from_fn(shape, |_, _, _, _| st.uniform()).unwrap()
    }

    #[test]
    fn head_shape_and_zero_propagation() {
        let p = toy();
        let x = random_image(Shape::new(2, 3, 7, 9), 1);
        let l0 = head(None, &x, &p).unwrap();
        assert_eq!(l0.shape(), Shape::new(2, 16, 7, 9));
        let zeros = Tensor::zeros(Shape::new(1, 3, 5, 5));
        let out = head(None, &zeros, &p).unwrap();
        assert!(out.max_abs_diff(&Tensor::zeros(out.shape())) < 1e-15);
        let bad = Tensor::<f64>::zeros(Shape::new(1, 4, 5, 5));
        assert!(head(None, &bad, &p).is_err());
    }

    #[test]
    fn step_shapes_and_purity() {
        let p = toy();
        let l = random_image(Shape::new(1, 16, 6, 6), 2);
        let (h, l_next) = step(None, &l, &p).unwrap();
        assert_eq!(h.shape(), Shape::new(1, 16, 12, 12));
        assert_eq!(l_next.shape(), Shape::new(1, 16, 6, 6));
        let (h2, l2) = step(None, &l, &p).unwrap();
        assert_eq!(h.data(), h2.data());
        assert_eq!(l_next.data(), l2.data());
    }

    #[test]
    fn forward_shape_and_determinism() {
        let p = toy();
        let x = random_image(Shape::new(1, 3, 6, 8), 3);
        let a = forward(None, &x, &p).unwrap();
        assert_eq!(a.shape(), Shape::new(1, 3, 12, 16));
        let b = forward(None, &x, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_t1_is_head_cell_tail() {
        let mut config = ModelConfig::toy(2);
        config.t = 1;
        let p = CsnlnParams::<f64>::init(config, 6).unwrap();
        let x = random_image(Shape::new(1, 3, 6, 6), 4);
        let got = forward(None, &x, &p).unwrap();
        let l0 = head(None, &x, &p).unwrap();
        let h1 = sem::sem_forward(None, &l0, &p.sem).unwrap();
        let want = ops::conv2d(None, &h1, &p.tail_w, Some(&p.tail_b), 1, 1).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn parameter_count_is_independent_of_t() {
        let mut c2 = ModelConfig::toy(2);
        c2.t = 2;
        let mut c5 = ModelConfig::toy(2);
        c5.t = 5;
        let p2 = CsnlnParams::<f64>::init(c2, 7).unwrap();
        let p5 = CsnlnParams::<f64>::init(c5, 7).unwrap();
        assert_eq!(p2.named().len(), p5.named().len());
        // Only the tail widens with t (its input is the t*C concat).
        let diff = p5.param_count() - p2.param_count();
        assert_eq!(diff, (5 - 2) * 16 * 3 * 9);
    }

    #[test]
    fn paper_preset_parameter_count() {
        let p = CsnlnParams::<f32>::init(ModelConfig::paper(2), 0).unwrap();
        let count = p.param_count();
        assert_eq!(count, 2_454_915);
        assert!((2_000_000..=4_500_000).contains(&count));
    }

    /// The gradient reaching the shared cell equals the sum of the gradients
    /// from runs where only one step's use of the cell is tracked.
    #[test]
    fn shared_cell_gradient_accumulates_across_steps() {
        let p = toy();
        let x = random_image(Shape::new(1, 3, 6, 6), 8);
        let mask = random_image(Shape::new(1, 3, 12, 12), 9);

        let run = |sem1: &SemParams<f64>, sem2: &SemParams<f64>| -> Vec<f64> {
            let tape = GradTape::new();
            let t = Some(&tape);
            let l0 = head(t, &x, &p).unwrap();
            let h1 = sem::sem_forward(t, &l0, sem1).unwrap();
            let l1 = out_cnn(t, &h1, &p).unwrap();
            let h2 = sem::sem_forward(t, &l1, sem2).unwrap();
            let cat = ops::concat(t, &[&h1, &h2], 1).unwrap();
            let sr = ops::conv2d(t, &cat, &p.tail_w, Some(&p.tail_b), 1, 1).unwrap();
            let loss = ops::sum_all(t, &ops::mul(t, &sr, &mask).unwrap()).unwrap();
            let grads = tape.backward(&loss).unwrap();
            let sem_used = if sem1.csnl.as_ref().unwrap().attention.theta.requires_grad() {
                sem1
            } else {
                sem2
            };
            grads
                .expect(&sem_used.csnl.as_ref().unwrap().attention.theta)
                .unwrap()
                .data()
                .to_vec()
        };

        let detached = {
            let mut d = p.sem.clone();
            for (_, t) in d.named_mut() {
                *t = t.detached();
            }
            d
        };
        let full = run(&p.sem, &p.sem);
        let only_first = run(&p.sem, &detached);
        let only_second = run(&detached, &p.sem);
        for i in 0..full.len() {
            let summed = only_first[i] + only_second[i];
            assert!(
                (full[i] - summed).abs() < 1e-9,
                "coordinate {i}: {} vs {summed}",
                full[i]
            );
        }
    }

    #[test]
    fn l1_loss_values_and_gradient() {
        let a = random_image(Shape::new(1, 3, 4, 4), 10);
        let same = l1_loss(None, &a, &a).unwrap();
        assert_eq!(same.data()[0], 0.0);

        let shifted = Tensor::from_fn(a.shape(), |n, c, y, x| a.at(n, c, y, x) + 0.5).unwrap();
        let half = l1_loss(None, &shifted, &a).unwrap();
        assert!((half.data()[0] - 0.5).abs() < 1e-12);

        // Away from ties the gradient is sign(sr - hr)/count.
        let tape = GradTape::new();
        let sr = shifted.to_param();
        let loss = l1_loss(Some(&tape), &sr, &a).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let g = grads.expect(&sr).unwrap();
        for &v in g.data() {
            assert!((v - 1.0 / 48.0).abs() < 1e-15);
        }
        let b = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        assert!(l1_loss(None, &a, &b).is_err());
    }

    #[test]
    fn named_roundtrip_and_errors() {
        let p = toy();
        let map: BTreeMap<String, Tensor<f64>> = p.named().into_iter().collect();
        let mut q = CsnlnParams::<f64>::init(ModelConfig::toy(2), 99).unwrap();
        q.load_named(&map).unwrap();
        for ((an, at), (bn, bt)) in p.named().iter().zip(q.named().iter()) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data());
            assert!(bt.requires_grad());
        }

        let mut missing = map.clone();
        missing.remove("tail.weight");
        assert!(q.load_named(&missing).is_err());

        let mut wrong = map.clone();
        wrong.insert("tail.weight".into(), Tensor::zeros(Shape::new(1, 1, 1, 1)));
        assert!(q.load_named(&wrong).is_err());

        let mut extra = map.clone();
        extra.insert("bogus".into(), Tensor::zeros(Shape::new(1, 1, 1, 1)));
        assert!(q.load_named(&extra).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::toy(2).validate().is_ok());
        assert!(ModelConfig::toy(5).validate().is_err());
        let mut c = ModelConfig::toy(2);
        c.t = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(2);
        c.ce = 32;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gradient_suite_passes() {
        for report in gradient_suite().unwrap() {
            assert!(
                report.pass,
                "{} failed with rel err {}",
                report.name, report.max_rel_err
            );
        }
    }
}
