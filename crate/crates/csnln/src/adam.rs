//! Adam optimizer with bias correction, keyed by parameter name.
//!
//! Moments are plain tensors shaped like their parameters and live outside
//! the autodiff graph; the whole update is elementwise arithmetic on raw
//! buffers. State serializes through the checkpoint format under `adam.m.*`
//! and `adam.v.*` names so training resumes bit-exactly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter, plus the shared step count.
#[derive(Clone, Debug, Default)]
pub struct AdamState<E: Element> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<E>>,
    pub v: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> AdamState<E> {
    pub fn new() -> Self {
        AdamState { step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }
}

/// One optimizer step over `(name, parameter)` pairs with their gradients.
///
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`, then
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)` with the usual
/// `1 - beta^t` bias corrections. Parameters without a gradient entry this
/// step are left untouched (their moments do not decay either; every
/// parameter of this network receives a gradient every step, so the case
/// only arises in targeted tests).
///
/// The update is staged for every parameter and validated before anything
/// is committed: a non-finite value anywhere (a NaN gradient, or moment
/// overflow at 32-bit) aborts the whole step with no state change.
pub fn adam_step<E: Element>(
    params: &mut [(String, &mut Tensor<E>)],
    grads: &BTreeMap<String, Tensor<E>>,
    state: &mut AdamState<E>,
    lr: f64,
) -> Result<()> {
    let t = (state.step + 1) as i32;
    let b1 = E::from_f64(ADAM_BETA1);
    let b2 = E::from_f64(ADAM_BETA2);
    let one = E::one();
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let lr_e = E::from_f64(lr);
    let eps = E::from_f64(ADAM_EPS);

    let mut staged: Vec<(usize, Vec<E>, Vec<E>, Vec<E>)> = Vec::new();
    for (idx, (name, param)) in params.iter().enumerate() {
        let g = match grads.get(name) {
            Some(g) => g,
            None => continue,
        };
        if g.shape() != param.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "gradient for {name} has shape {} but the parameter is {}",
                    g.shape(),
                    param.shape()
                ),
            ));
        }
        let zeros;
        let m_prev = match state.m.get(name) {
            Some(m) => m.data(),
            None => {
                zeros = vec![E::zero(); param.shape().count()];
                &zeros
            }
        };
        let zeros_v;
        let v_prev = match state.v.get(name) {
            Some(v) => v.data(),
            None => {
                zeros_v = vec![E::zero(); param.shape().count()];
                &zeros_v
            }
        };
        let mut md = Vec::with_capacity(m_prev.len());
        let mut vd = Vec::with_capacity(v_prev.len());
        let mut pd = Vec::with_capacity(param.shape().count());
        let mut finite = true;
        for i in 0..param.shape().count() {
            let gi = g.data()[i];
            let mi = b1 * m_prev[i] + (one - b1) * gi;
            let vi = b2 * v_prev[i] + (one - b2) * gi * gi;
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            let pi = param.data()[i] - lr_e * m_hat / (v_hat.sqrt() + eps);
            finite &= mi.is_finite() && vi.is_finite() && pi.is_finite();
            md.push(mi);
            vd.push(vi);
            pd.push(pi);
        }
        if !finite {
            return Err(Error::NonFinite { op: "adam_step" });
        }
        staged.push((idx, md, vd, pd));
    }

    state.step += 1;
    for (idx, md, vd, pd) in staged {
        let (name, param) = &mut params[idx];
        let shape = param.shape();
        state.m.insert(name.clone(), Tensor::from_vec(shape, md)?);
        state.v.insert(name.clone(), Tensor::from_vec(shape, vd)?);
        **param = Tensor::from_vec(shape, pd)?.to_param();
    }
    Ok(())
}
