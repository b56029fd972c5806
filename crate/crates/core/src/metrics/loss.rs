//! Segment-level training objectives.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Additive smoothing in the numerator and denominator of the dice ratio.
pub const DICE_SMOOTHING: f64 = 1e-7;

/// Lower clamp applied to probabilities before taking the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DiceVariant {
    /// `1 - mean_k (2 sum_n y p + eps) / (sum_n y + sum_n p + eps)`
    #[default]
    PerClass,
    /// `1 - (2/K) sum_kn y p / sum_kn (y + p)`; bottoms out at `1 - 1/K`.
    Pooled,
}

fn check_pair<F: Element>(y: &Tensor<F>, p: &Tensor<F>) -> Result<usize> {
    if y.shape() != p.shape() {
        return Err(Error::Dimension(format!(
            "targets {:?} and predictions {:?} differ in shape",
            y.shape(),
            p.shape()
        )));
    }
    y.shape()
        .last()
        .copied()
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Dimension("loss inputs need a class axis".into()))
}

/// Value and gradient w.r.t. `p` of the dice loss.
pub fn dice_with_grad<F: Element>(y: &Tensor<F>, p: &Tensor<F>, variant: DiceVariant) -> Result<(F, Vec<F>)> {
    let k = check_pair(y, p)?;
    let (yd, pd) = (y.data(), p.data());
    let mut inter = vec![F::zero(); k];
    let mut ysum = vec![F::zero(); k];
    let mut psum = vec![F::zero(); k];
    for (yr, pr) in yd.chunks(k).zip(pd.chunks(k)) {
        for c in 0..k {
            inter[c] += yr[c] * pr[c];
            ysum[c] += yr[c];
            psum[c] += pr[c];
        }
    }
    let kf = F::lit(k as f64);
    let two = F::lit(2.0);
    let mut grad = vec![F::zero(); yd.len()];
    let value = match variant {
        DiceVariant::PerClass => {
            let eps = F::lit(DICE_SMOOTHING);
            let mut mean_dice = F::zero();
            let mut coef = vec![(F::zero(), F::zero()); k];
            for c in 0..k {
                let num = two * inter[c] + eps;
                let den = ysum[c] + psum[c] + eps;
                mean_dice += num / den;
                // d dice_c / d p_nc = 2 y_nc / den - num / den^2
                coef[c] = (two / den, num / (den * den));
            }
            for (g, yr) in grad.chunks_mut(k).zip(yd.chunks(k)) {
                for c in 0..k {
                    g[c] = -(coef[c].0 * yr[c] - coef[c].1) / kf;
                }
            }
            F::one() - mean_dice / kf
        }
        DiceVariant::Pooled => {
            let s: F = inter.iter().copied().sum();
            let d: F = ysum.iter().copied().sum::<F>() + psum.iter().copied().sum::<F>();
            let scale = two / kf;
            for (g, &yv) in grad.iter_mut().zip(yd) {
                *g = -scale * (yv / d - s / (d * d));
            }
            F::one() - scale * s / d
        }
    };
    Ok((value, grad))
}

/// Value and gradient w.r.t. `p` of the mean negative log-likelihood.
pub fn cross_entropy_with_grad<F: Element>(y: &Tensor<F>, p: &Tensor<F>) -> Result<(F, Vec<F>)> {
    let k = check_pair(y, p)?;
    let n = F::lit((y.len() / k) as f64);
    let clamp = F::lit(LOG_CLAMP);
    let mut value = F::zero();
    let mut grad = vec![F::zero(); y.len()];
    for ((g, &yv), &pv) in grad.iter_mut().zip(y.data()).zip(p.data()) {
        if yv != F::zero() {
            value -= yv * pv.max(clamp).ln();
            if pv > clamp {
                *g = -yv / (pv * n);
            }
        }
    }
    Ok((value / n, grad))
}

pub fn dice_loss<F: Element>(tape: &mut Tape<F>, y: &Tensor<F>, p: &Var<F>) -> Result<Var<F>> {
    dice_loss_with(tape, y, p, DiceVariant::PerClass)
}

pub fn dice_loss_with<F: Element>(
    tape: &mut Tape<F>,
    y: &Tensor<F>,
    p: &Var<F>,
    variant: DiceVariant,
) -> Result<Var<F>> {
    let (v, g) = dice_with_grad(y, p.value(), variant)?;
    tape.loss(p, v, g)
}

pub fn cross_entropy<F: Element>(tape: &mut Tape<F>, y: &Tensor<F>, p: &Var<F>) -> Result<Var<F>> {
    let (v, g) = cross_entropy_with_grad(y, p.value())?;
    tape.loss(p, v, g)
}

/// One-hot encodes class indices into `[..., k]`.
pub fn one_hot<F: Element>(labels: &[usize], k: usize) -> Result<Vec<F>> {
    let mut out = vec![F::zero(); labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Label(format!("class {l} out of range for {k} classes")));
        }
        out[i * k + l] = F::one();
    }
    Ok(out)
}
