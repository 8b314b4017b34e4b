//! The self-exemplar mining cell: three branches over the same LR feature
//! map, fused by mutual projection into one HR feature map.
//!
//! * Local branch: the identity pathway; keeps the raw features `F_L = L`.
//! * In-scale branch: region-grid non-local attention followed by a stride-s
//!   deconvolution, `F_I = deconv(isnl(L))`.
//! * Cross-scale branch: patch cross-scale attention, which is natively
//!   upscaling, `F_C = csnl(L)`.
//!
//! Fusion happens in two corrective stages built on residual shortcuts:
//! [`mutual_project`] reconciles the two non-local branches,
//! `F_IC = F_I + prelu(conv(F_I - F_C))`, and [`back_project`] folds the
//! local evidence back in, `H = F_IC + prelu(up(F_L - down(F_IC)))`, with a
//! stride-s convolution down and a stride-s deconvolution up. Zeroing the
//! correction weights collapses each stage to its shortcut, which the tests
//! pin down.
//!
//! Every branch is optional so ablations genuinely remove parameters, with
//! the collapsed wirings: no in-scale branch makes `F_IC = F_C`, no
//! cross-scale branch makes `F_IC = F_I`, no local branch makes `H = F_IC`.
//! At least one non-local branch must exist; a cell with neither has no
//! upscaling path and is rejected at construction.

use crate::attention::{self, AttentionParams, PsiMode};
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Stream;
use crate::tape::GradTape;
use crate::tensor::{Element, Shape, Tensor};

/// Init gain of the cross-scale matching embeddings; see [`SemParams::init`].
pub const CSNL_EMBED_GAIN: f64 = 5.0;

/// Kernel size and padding of the stride-`scale` projection convolutions and
/// deconvolutions; chosen per scale so that down- and upscaling invert each
/// other's spatial extents exactly.
pub fn projection_kernel(scale: usize) -> Result<(usize, usize)> {
    match scale {
        2 => Ok((6, 2)),
        3 => Ok((9, 3)),
        4 => Ok((8, 2)),
        other => Err(Error::invalid(
            "projection_kernel",
            format!("unsupported scale {other}: projections are defined for 2, 3, 4"),
        )),
    }
}

/// Uniform init over `[-gain/sqrt(fan_in), gain/sqrt(fan_in)]`, registered
/// as a gradient leaf.
pub(crate) fn init_weight_gain<E: Element>(
    st: &mut Stream,
    shape: Shape,
    fan_in: usize,
    gain: f64,
) -> Tensor<E> {
    let bound = gain / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_, _, _, _| E::from_f64(st.uniform_symmetric(bound)))
        .expect("finite init")
        .to_param()
}

pub(crate) fn init_weight<E: Element>(st: &mut Stream, shape: Shape, fan_in: usize) -> Tensor<E> {
    init_weight_gain(st, shape, fan_in, 1.0)
}

pub(crate) fn zero_param<E: Element>(shape: Shape) -> Tensor<E> {
    Tensor::zeros(shape).to_param()
}

pub(crate) fn slope_param<E: Element>(c: usize) -> Tensor<E> {
    Tensor::full(Shape::new(1, c, 1, 1), E::from_f64(0.25))
        .expect("finite slope")
        .to_param()
}

/// In-scale branch: attention plus its upscaling deconvolution.
#[derive(Clone, Debug)]
pub struct IsnlBranch<E: Element> {
    pub attention: AttentionParams<E>,
    /// Deconvolution weight `(C, C, k, k)` with the per-scale projection
    /// kernel geometry.
    pub up_weight: Tensor<E>,
    pub up_bias: Tensor<E>,
}

/// Cross-scale branch: the patch attention is the whole branch.
#[derive(Clone, Debug)]
pub struct CsnlBranch<E: Element> {
    pub attention: AttentionParams<E>,
}

/// Mutual-projection correction between the two non-local branches.
#[derive(Clone, Debug)]
pub struct FusionParams<E: Element> {
    /// 3x3 convolution over the branch residual.
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub slope: Tensor<E>,
}

/// Back-projection of the local branch: stride-s down, corrective stride-s
/// up.
#[derive(Clone, Debug)]
pub struct ProjectionParams<E: Element> {
    pub down_weight: Tensor<E>,
    pub down_bias: Tensor<E>,
    pub up_weight: Tensor<E>,
    pub up_bias: Tensor<E>,
    pub slope: Tensor<E>,
}

/// Which branches a cell carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SemBranches {
    pub local: bool,
    pub isnl: bool,
    pub csnl: bool,
}

impl Default for SemBranches {
    fn default() -> Self {
        SemBranches { local: true, isnl: true, csnl: true }
    }
}

/// All parameters of one cell. One instance is shared across every recurrence
/// step of the network.
#[derive(Clone, Debug)]
pub struct SemParams<E: Element> {
    pub scale: usize,
    pub isnl: Option<IsnlBranch<E>>,
    pub csnl: Option<CsnlBranch<E>>,
    pub fusion: Option<FusionParams<E>>,
    pub projection: Option<ProjectionParams<E>>,
}

impl<E: Element> SemParams<E> {
    /// Fresh cell parameters. `c`/`ce` are the feature and embedded channel
    /// counts, `grid` the in-scale region partition, `patch` and
    /// `candidate_stride` the cross-scale sampling geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        scale: usize,
        c: usize,
        ce: usize,
        grid: (usize, usize),
        patch: usize,
        candidate_stride: usize,
        branches: SemBranches,
        st: &mut Stream,
    ) -> Result<Self> {
        let (k, _) = projection_kernel(scale)?;
        if !branches.isnl && !branches.csnl {
            return Err(Error::Config(
                "a cell needs at least one non-local branch: both isnl and csnl are disabled"
                    .into(),
            ));
        }
        // Theta and delta start as one shared random sketch: with tied
        // embeddings the attention logits approximate raw feature
        // correlation from the first step (independent draws instead give
        // zero-mean noise logits that take many steps to organize), and the
        // two matrices decouple freely as training proceeds. The cross-scale
        // pair is additionally widened: its queries are downscale-weakened,
        // and at unit gain their logit spread is so small that the softmax
        // starts out flat and the paste is an uninformative candidate
        // average that gradients are slow to escape.
        let tied = |st: &mut Stream, gain: f64| {
            let theta = init_weight_gain::<E>(st, Shape::new(ce, c, 1, 1), c, gain);
            let delta = theta.to_param();
            (theta, delta)
        };
        let isnl = if branches.isnl {
            let (theta, delta) = tied(st, 1.0);
            let attention = AttentionParams::new(
                theta,
                delta,
                PsiMode::Learned(init_weight(st, Shape::new(c, c, 1, 1), c)),
                1,
                1,
                1,
                grid,
            )?;
            Some(IsnlBranch {
                attention,
                up_weight: init_weight(st, Shape::new(c, c, k, k), c * k * k),
                up_bias: zero_param(Shape::new(1, c, 1, 1)),
            })
        } else {
            None
        };
        let csnl = if branches.csnl {
            let (theta, delta) = tied(st, CSNL_EMBED_GAIN);
            let attention = AttentionParams::new(
                theta,
                delta,
                PsiMode::Identity,
                scale,
                patch,
                candidate_stride,
                (1, 1),
            )?;
            Some(CsnlBranch { attention })
        } else {
            None
        };
        let fusion = if branches.isnl && branches.csnl {
            Some(FusionParams {
                weight: init_weight(st, Shape::new(c, c, 3, 3), c * 9),
                bias: zero_param(Shape::new(1, c, 1, 1)),
                slope: slope_param(c),
            })
        } else {
            None
        };
        let projection = if branches.local {
            Some(ProjectionParams {
                down_weight: init_weight(st, Shape::new(c, c, k, k), c * k * k),
                down_bias: zero_param(Shape::new(1, c, 1, 1)),
                up_weight: init_weight(st, Shape::new(c, c, k, k), c * k * k),
                up_bias: zero_param(Shape::new(1, c, 1, 1)),
                slope: slope_param(c),
            })
        } else {
            None
        };
        Ok(SemParams { scale, isnl, csnl, fusion, projection })
    }

    pub fn channels(&self) -> usize {
        let att = self
            .isnl
            .as_ref()
            .map(|b| &b.attention)
            .or(self.csnl.as_ref().map(|b| &b.attention))
            .expect("at least one non-local branch");
        att.channels()
    }

    pub fn branches(&self) -> SemBranches {
        SemBranches {
            local: self.projection.is_some(),
            isnl: self.isnl.is_some(),
            csnl: self.csnl.is_some(),
        }
    }

    /// All learnable tensors with their names, in a fixed order.
    pub fn named(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        let att = |prefix: &str, a: &AttentionParams<E>, out: &mut Vec<(String, Tensor<E>)>| {
            out.push((format!("{prefix}.theta"), a.theta.clone()));
            out.push((format!("{prefix}.delta"), a.delta.clone()));
            if let PsiMode::Learned(w) = &a.psi {
                out.push((format!("{prefix}.psi"), w.clone()));
            }
        };
        if let Some(b) = &self.isnl {
            att("isnl", &b.attention, &mut out);
            out.push(("isnl.up.weight".into(), b.up_weight.clone()));
            out.push(("isnl.up.bias".into(), b.up_bias.clone()));
        }
        if let Some(b) = &self.csnl {
            att("csnl", &b.attention, &mut out);
        }
        if let Some(f) = &self.fusion {
            out.push(("fuse.weight".into(), f.weight.clone()));
            out.push(("fuse.bias".into(), f.bias.clone()));
            out.push(("fuse.slope".into(), f.slope.clone()));
        }
        if let Some(p) = &self.projection {
            out.push(("proj.down.weight".into(), p.down_weight.clone()));
            out.push(("proj.down.bias".into(), p.down_bias.clone()));
            out.push(("proj.up.weight".into(), p.up_weight.clone()));
            out.push(("proj.up.bias".into(), p.up_bias.clone()));
            out.push(("proj.slope".into(), p.slope.clone()));
        }
        out
    }

    /// Mutable handles in the same order as [`SemParams::named`].
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out: Vec<(String, &mut Tensor<E>)> = Vec::new();
        if let Some(b) = &mut self.isnl {
            out.push(("isnl.theta".into(), &mut b.attention.theta));
            out.push(("isnl.delta".into(), &mut b.attention.delta));
            if let PsiMode::Learned(w) = &mut b.attention.psi {
                out.push(("isnl.psi".into(), w));
            }
            out.push(("isnl.up.weight".into(), &mut b.up_weight));
            out.push(("isnl.up.bias".into(), &mut b.up_bias));
        }
        if let Some(b) = &mut self.csnl {
            out.push(("csnl.theta".into(), &mut b.attention.theta));
            out.push(("csnl.delta".into(), &mut b.attention.delta));
            if let PsiMode::Learned(w) = &mut b.attention.psi {
                out.push(("csnl.psi".into(), w));
            }
        }
        if let Some(f) = &mut self.fusion {
            out.push(("fuse.weight".into(), &mut f.weight));
            out.push(("fuse.bias".into(), &mut f.bias));
            out.push(("fuse.slope".into(), &mut f.slope));
        }
        if let Some(p) = &mut self.projection {
            out.push(("proj.down.weight".into(), &mut p.down_weight));
            out.push(("proj.down.bias".into(), &mut p.down_bias));
            out.push(("proj.up.weight".into(), &mut p.up_weight));
            out.push(("proj.up.bias".into(), &mut p.up_bias));
            out.push(("proj.slope".into(), &mut p.slope));
        }
        out
    }
}

/// The identity pathway.
pub fn branch_local<E: Element>(l: &Tensor<E>) -> Tensor<E> {
    l.clone()
}

/// In-scale attention then upscaling deconvolution: `(n, C, s*h, s*w)`.
pub fn branch_isnl<E: Element>(
    tape: Option<&GradTape<E>>,
    l: &Tensor<E>,
    branch: &IsnlBranch<E>,
    scale: usize,
) -> Result<Tensor<E>> {
    let (_, pad) = projection_kernel(scale)?;
    let a = attention::in_scale_nonlocal(tape, l, &branch.attention)?;
    ops::conv_transpose2d(tape, &a, &branch.up_weight, Some(&branch.up_bias), scale, pad)
}

/// Cross-scale attention; natively `(n, C, s*h, s*w)`.
pub fn branch_csnl<E: Element>(
    tape: Option<&GradTape<E>>,
    l: &Tensor<E>,
    branch: &CsnlBranch<E>,
) -> Result<Tensor<E>> {
    attention::cross_scale_patch(tape, l, &branch.attention)
}

/// `F_IC = F_I + prelu(conv(F_I - F_C))`: the in-scale estimate corrected by
/// a learned function of its disagreement with the cross-scale estimate.
pub fn mutual_project<E: Element>(
    tape: Option<&GradTape<E>>,
    f_i: &Tensor<E>,
    f_c: &Tensor<E>,
    fusion: &FusionParams<E>,
) -> Result<Tensor<E>> {
    let r = ops::sub(tape, f_i, f_c)?;
    let conv = ops::conv2d(tape, &r, &fusion.weight, Some(&fusion.bias), 1, 1)?;
    let act = ops::prelu(tape, &conv, &fusion.slope)?;
    ops::add(tape, &act, f_i)
}

/// `H = F_IC + prelu(up(F_L - down(F_IC)))`: project the fused HR feature
/// down, compare with the local evidence, and push the corrective residual
/// back up.
pub fn back_project<E: Element>(
    tape: Option<&GradTape<E>>,
    f_l: &Tensor<E>,
    f_ic: &Tensor<E>,
    proj: &ProjectionParams<E>,
    scale: usize,
) -> Result<Tensor<E>> {
    let (_, pad) = projection_kernel(scale)?;
    let down = ops::conv2d(tape, f_ic, &proj.down_weight, Some(&proj.down_bias), scale, pad)?;
    let e = ops::sub(tape, f_l, &down)?;
    let up = ops::conv_transpose2d(tape, &e, &proj.up_weight, Some(&proj.up_bias), scale, pad)?;
    let act = ops::prelu(tape, &up, &proj.slope)?;
    ops::add(tape, &act, f_ic)
}

/// One full cell: branches, mutual projection, back projection. Disabled
/// branches collapse to the shortcuts described in the module docs.
pub fn sem_forward<E: Element>(
    tape: Option<&GradTape<E>>,
    l: &Tensor<E>,
    params: &SemParams<E>,
) -> Result<Tensor<E>> {
    let f_ic = match (&params.isnl, &params.csnl) {
        (Some(i), Some(c)) => {
            let f_i = branch_isnl(tape, l, i, params.scale)?;
            let f_c = branch_csnl(tape, l, c)?;
            let fusion = params.fusion.as_ref().ok_or_else(|| {
                Error::Config("cell has both non-local branches but no fusion parameters".into())
            })?;
            mutual_project(tape, &f_i, &f_c, fusion)?
        }
        (Some(i), None) => branch_isnl(tape, l, i, params.scale)?,
        (None, Some(c)) => branch_csnl(tape, l, c)?,
        (None, None) => {
            return Err(Error::Config("cell has no non-local branch".into()));
        }
    };
    match &params.projection {
        Some(proj) => back_project(tape, &branch_local(l), &f_ic, proj, params.scale),
        None => Ok(f_ic),
    }
}

/// Finite-difference checks through the cell: input and a representative
/// parameter from each stage. f64 only.
pub fn gradient_suite() -> Result<Vec<crate::gradcheck::CheckReport>> {
    use crate::gradcheck::{finite_diff_check, finite_diff_check_at, CheckReport, GRADCHECK_EPS};

    let mut st = Stream::new(20240819, 31);
    let params = SemParams::<f64>::init(2, 4, 2, (2, 2), 3, 1, SemBranches::default(), &mut st)?;
    let x = Tensor::from_fn(Shape::new(1, 4, 6, 6), |_, _, _, _| st.uniform_symmetric(1.0))?;
    let mask = Tensor::from_fn(Shape::new(1, 4, 12, 12), |_, _, _, _| st.uniform_symmetric(1.0))?;
    let scalar = |t: Option<&GradTape<f64>>, v: &Tensor<f64>| -> Result<Tensor<f64>> {
        ops::sum_all(t, &ops::mul(t, v, &mask)?)
    };

    let mut out = Vec::new();
    let eps = GRADCHECK_EPS;

    let pc = params.clone();
    let e = finite_diff_check(|t, xx| scalar(t, &sem_forward(t, xx, &pc)?), &x, eps)?;
    out.push(CheckReport::new("sem_forward/input", e));

    let pc = params.clone();
    let xc = x.clone();
    let fuse_w = params.fusion.as_ref().unwrap().weight.clone();
    let e = finite_diff_check_at(
        |t, ww| {
            let mut p = pc.clone();
            p.fusion.as_mut().unwrap().weight = ww.clone();
            scalar(t, &sem_forward(t, &xc, &p)?)
        },
        &fuse_w,
        eps,
        &subsample(fuse_w.shape().count(), 36),
    )?;
    out.push(CheckReport::new("sem_forward/fuse.weight", e));

    let pc = params.clone();
    let xc = x.clone();
    let up_w = params.projection.as_ref().unwrap().up_weight.clone();
    let e = finite_diff_check_at(
        |t, ww| {
            let mut p = pc.clone();
            p.projection.as_mut().unwrap().up_weight = ww.clone();
            scalar(t, &sem_forward(t, &xc, &p)?)
        },
        &up_w,
        eps,
        &subsample(up_w.shape().count(), 36),
    )?;
    out.push(CheckReport::new("sem_forward/proj.up.weight", e));

    let pc = params.clone();
    let xc = x.clone();
    let theta = params.csnl.as_ref().unwrap().attention.theta.clone();
    let e = finite_diff_check(
        |t, th| {
            let mut p = pc.clone();
            p.csnl.as_mut().unwrap().attention.theta = th.clone();
            scalar(t, &sem_forward(t, &xc, &p)?)
        },
        &theta,
        eps,
    )?;
    out.push(CheckReport::new("sem_forward/csnl.theta", e));

    let pc = params.clone();
    let xc = x.clone();
    let slope = params.projection.as_ref().unwrap().slope.clone();
    let e = finite_diff_check(
        |t, sl| {
            let mut p = pc.clone();
            p.projection.as_mut().unwrap().slope = sl.clone();
            scalar(t, &sem_forward(t, &xc, &p)?)
        },
        &slope,
        eps,
    )?;
    out.push(CheckReport::new("sem_forward/proj.slope", e));

    Ok(out)
}

/// Evenly spread coordinate subsample for finite-difference checks on large
/// tensors.
pub(crate) fn subsample(count: usize, want: usize) -> Vec<usize> {
    if count <= want {
        return (0..count).collect();
    }
    (0..want).map(|i| i * count / want).collect()
}
