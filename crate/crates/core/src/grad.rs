//! Closed-form logit gradients of softmax quantities and a central-difference
//! oracle to check them against.

use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::policy::{Dist, VocabId};

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Entries whose magnitude is at or below this floor are not compared
/// relatively.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `∂f/∂z_k` for every logit of one context.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGradient {
    pub dz: Vec<f64>,
}

impl LogitGradient {
    pub fn zeros(vocab_size: usize) -> Self {
        LogitGradient {
            dz: vec![0.0; vocab_size],
        }
    }

    pub fn len(&self) -> usize {
        self.dz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dz.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.dz.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.dz.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.dz.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        LogitGradient {
            dz: self.dz.iter().map(|v| v * c).collect(),
        }
    }

    pub fn dot(&self, other: &LogitGradient) -> f64 {
        self.dz.iter().zip(&other.dz).map(|(a, b)| a * b).sum()
    }

    pub fn cosine(&self, other: &LogitGradient) -> f64 {
        self.dot(other) / (self.norm() * other.norm())
    }
}

impl Add for &LogitGradient {
    type Output = LogitGradient;

    fn add(self, rhs: &LogitGradient) -> LogitGradient {
        LogitGradient {
            dz: self.dz.iter().zip(&rhs.dz).map(|(a, b)| a + b).collect(),
        }
    }
}

impl AddAssign<&LogitGradient> for LogitGradient {
    fn add_assign(&mut self, rhs: &LogitGradient) {
        for (a, b) in self.dz.iter_mut().zip(&rhs.dz) {
            *a += b;
        }
    }
}

/// `∇_z log π(target)`: `δ_{k,target} − π(k)`.
pub fn grad_log_prob(dist: &Dist, target: VocabId) -> Result<LogitGradient> {
    dist.check_token(target)?;
    let dz = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(k, p)| if k == target.0 { 1.0 - p } else { -p })
        .collect();
    Ok(LogitGradient { dz })
}

/// `∇_z π(target)`: `π(target)·(δ_{k,target} − π(k))`.
///
/// Off the target this is `−π(target)·π(k)`: the mass freed by lowering the
/// target flows to each other token in proportion to its current probability.
pub fn grad_prob(dist: &Dist, target: VocabId) -> Result<LogitGradient> {
    dist.check_token(target)?;
    let pt = dist.prob(target);
    let dz = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if k == target.0 {
                pt * (1.0 - p)
            } else {
                -pt * p
            }
        })
        .collect();
    Ok(LogitGradient { dz })
}

/// Membership mask for a token set; rejects out-of-range ids.
pub(crate) fn member_mask(vocab_size: usize, set: &[VocabId]) -> Result<Vec<bool>> {
    let mut mask = vec![false; vocab_size];
    for t in set {
        if t.0 >= vocab_size {
            return Err(Error::invalid(format!(
                "token {} out of range for vocabulary of size {vocab_size}",
                t.0
            )));
        }
        mask[t.0] = true;
    }
    Ok(mask)
}

/// `∇_z Σ_{j∈set} π(j)`.
///
/// In-set coordinates get `π(k)·(1 − P_safe)`; out-of-set coordinates get the
/// softmax coupling term `−π(k)·P_safe`.
pub fn grad_support_mass(dist: &Dist, set: &[VocabId]) -> Result<LogitGradient> {
    if set.is_empty() {
        return Err(Error::Domain(
            "support-mass gradient over an empty token set".into(),
        ));
    }
    let mask = member_mask(dist.len(), set)?;
    let p_safe: f64 = dist
        .probs()
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| p)
        .sum();
    let dz = dist
        .probs()
        .iter()
        .zip(&mask)
        .map(|(p, in_set)| {
            if *in_set {
                p * (1.0 - p_safe)
            } else {
                -p * p_safe
            }
        })
        .collect();
    Ok(LogitGradient { dz })
}

/// Central differences `(f(z + h e_k) − f(z − h e_k)) / 2h` per coordinate.
pub fn finite_diff<F>(loss: F, logits: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut z = logits.to_vec();
    let mut out = Vec::with_capacity(z.len());
    for k in 0..z.len() {
        let orig = z[k];
        z[k] = orig + h;
        let plus = loss(&z)?;
        z[k] = orig - h;
        let minus = loss(&z)?;
        z[k] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "non-finite loss around coordinate {k}: f(+h)={plus}, f(-h)={minus}"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Largest per-entry relative error `|a − b| / max(|a|, |b|)` over entries
/// where `max(|a|, |b|) > floor`. Entries at or below the floor must agree to
/// within `floor` absolutely; otherwise the result is infinite.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale > floor {
                (a - b).abs() / scale
            } else if (a - b).abs() <= floor {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Scale-aware relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`. Entries near
/// zero are judged against the gradient's overall scale rather than their own,
/// so finite-difference roundoff on cancelling entries does not dominate. When
/// both vectors are within `floor` of zero they must agree to within `floor`.
pub fn normwise_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = inf_norm(analytic).max(inf_norm(numeric));
    if scale > floor {
        diff / scale
    } else if diff <= floor {
        0.0
    } else {
        f64::INFINITY
    }
}
