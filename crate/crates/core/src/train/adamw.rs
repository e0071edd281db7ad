use crate::error::{shape_err, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

use super::TrainConfig;

/// First and second moments per parameter, and the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One AdamW update. Decay is decoupled (`p ← p − lr·wd·p`) and applies only
/// to parameters flagged for it. Gradients are checked before anything is
/// modified, so a non-finite gradient leaves parameters and state intact.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(shape_err(
            "adamw",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (p, g) in params.params().iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(shape_err(
                "adamw",
                format!("{}: gradient {:?} vs parameter {:?}", p.name, g.shape(), p.value.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {} is not finite", p.name)));
        }
    }

    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shrink = if params.param(id).decay {
            1.0 - lr * cfg.weight_decay
        } else {
            1.0
        };
        let p = params.get_mut(id).data_mut();
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (i, g) in grads[k].data().iter().enumerate() {
            let g = g.as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = T::from_f64(p[i].as_f64() * shrink - step);
        }
    }
    Ok(())
}

/// Scale all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::from_f64(v.as_f64() * s);
            }
        }
    }
    norm
}
