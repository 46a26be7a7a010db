//! Training losses and their gradients, generic over the float type so the
//! gradients can be checked in double precision.
//!
//! Both losses average over every element, i.e. over frames, channels and
//! pixels (and the batch when one is present).

use ndarray::{ArrayD, ArrayViewD, Zip};
use num_traits::Float;

use crate::{NetError, Result};

pub const BCE_EPS: f64 = 1e-7;

fn check<F>(pred: &ArrayViewD<F>, target: &ArrayViewD<F>) -> Result<F>
where
    F: Float,
{
    if pred.shape() != target.shape() {
        return Err(NetError::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Err(NetError::Shape("loss over an empty array".into()));
    }
    Ok(F::from(pred.len()).unwrap())
}

fn eps<F: Float>() -> F {
    F::from(BCE_EPS).unwrap()
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn loss_ce<F: Float>(pred: ArrayViewD<F>, target: ArrayViewD<F>) -> Result<F> {
    let n = check(&pred, &target)?;
    let (lo, hi) = (eps::<F>(), F::one() - eps::<F>());
    let mut sum = F::zero();
    Zip::from(&pred).and(&target).for_each(|&q, &p| {
        let q = q.max(lo).min(hi);
        sum = sum + p * q.ln() + (F::one() - p) * (F::one() - q).ln();
    });
    Ok(-sum / n)
}

/// Gradient of [`loss_ce`] with respect to the prediction; zero where the
/// clamp is active.
pub fn loss_ce_grad<F: Float>(pred: ArrayViewD<F>, target: ArrayViewD<F>) -> Result<ArrayD<F>> {
    let n = check(&pred, &target)?;
    let (lo, hi) = (eps::<F>(), F::one() - eps::<F>());
    Ok(Zip::from(&pred).and(&target).map_collect(|&q, &p| {
        if q < lo || q > hi {
            F::zero()
        } else {
            -(p / q - (F::one() - p) / (F::one() - q)) / n
        }
    }))
}

/// Gradient of the cross-entropy with respect to the logits when the
/// prediction is `sigmoid(logit)`: `(sigmoid(z) - p) / n`.
pub fn bce_logit_grad(prob: &[f32], target: &[f32], out: &mut [f32], n: f32) {
    for ((o, &q), &p) in out.iter_mut().zip(prob).zip(target) {
        *o = (q - p) / n;
    }
}

/// Mean squared error.
pub fn loss_mse<F: Float>(pred: ArrayViewD<F>, target: ArrayViewD<F>) -> Result<F> {
    let n = check(&pred, &target)?;
    let mut sum = F::zero();
    Zip::from(&pred).and(&target).for_each(|&a, &b| {
        let d = a - b;
        sum = sum + d * d;
    });
    Ok(sum / n)
}

pub fn loss_mse_grad<F: Float>(pred: ArrayViewD<F>, target: ArrayViewD<F>) -> Result<ArrayD<F>> {
    let n = check(&pred, &target)?;
    let two = F::from(2.0).unwrap();
    Ok(Zip::from(&pred).and(&target).map_collect(|&a, &b| two * (a - b) / n))
}
