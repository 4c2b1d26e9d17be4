//! Finite-difference verification of every analytic gradient.
//!
//! Each case draws logits `z ~ N(0, 1)` with `V` cycling through
//! [`VOCAB_SIZES`], evaluates the analytic kernel at `softmax(z)`, and compares
//! it with central differences of the corresponding scalar at step
//! [`FD_STEP`] under [`normwise_relative_error`]. Surrogate cases are redrawn
//! until the relevant ratio lies at least [`CLIP_MARGIN`] inside the trust
//! window, so every comparison is made on the smooth, unclipped branch.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::anchor::{build_anchor, grad_anchor_ratio};
use crate::error::{Error, Result};
use crate::grad::{
    finite_diff, grad_log_prob, grad_prob, grad_support_mass, normwise_relative_error, FD_STEP,
    REL_ERR_FLOOR,
};
use crate::objectives::{kl_penalty, method_token_update, Method, MethodConfig};
use crate::policy::{softmax, Dist, VocabId};
use crate::rng::{self, LabRng};

pub const VOCAB_SIZES: [usize; 4] = [2, 4, 8, 32];

/// Minimum distance of a surrogate's ratio from either clip boundary.
pub const CLIP_MARGIN: f64 = 1e-3;

/// Redraw budget per surrogate case.
const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelCheck {
    pub kernel: String,
    pub cases: usize,
    pub max_rel_error: f64,
}

fn normal_vec(rng: &mut LabRng, v: usize) -> Vec<f64> {
    (0..v)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn token(rng: &mut LabRng, v: usize) -> VocabId {
    VocabId(rng.random_range(0..v))
}

fn nonempty_subset(rng: &mut LabRng, v: usize) -> Vec<VocabId> {
    loop {
        let set: Vec<VocabId> = (0..v)
            .filter(|_| rng.random_bool(0.5))
            .map(VocabId)
            .collect();
        if !set.is_empty() {
            return set;
        }
    }
}

fn compare(analytic: &[f64], loss: impl Fn(&[f64]) -> Result<f64>, z: &[f64]) -> Result<f64> {
    let numeric = finite_diff(loss, z, FD_STEP)?;
    Ok(normwise_relative_error(analytic, &numeric, REL_ERR_FLOOR))
}

/// One random case of a closed-form kernel; returns its max relative error.
fn kernel_case(kernel: &str, rng: &mut LabRng, v: usize) -> Result<f64> {
    let z = normal_vec(rng, v);
    let d = softmax(&z)?;
    match kernel {
        "log_prob" => {
            let t = token(rng, v);
            compare(
                &grad_log_prob(&d, t)?.dz,
                |z| Ok(softmax(z)?.prob(t).ln()),
                &z,
            )
        }
        "prob" => {
            let t = token(rng, v);
            compare(&grad_prob(&d, t)?.dz, |z| Ok(softmax(z)?.prob(t)), &z)
        }
        "support_mass" => {
            let set = nonempty_subset(rng, v);
            compare(
                &grad_support_mass(&d, &set)?.dz,
                |z| Ok(softmax(z)?.mass(&set)),
                &z,
            )
        }
        "anchor_ratio" => {
            let reference = softmax(&normal_vec(rng, v))?;
            loop {
                let t = token(rng, v);
                let k = rng.random_range(1..=v);
                match build_anchor(&reference, &d, t, k) {
                    Ok(a) => {
                        let g = grad_anchor_ratio(&d, &a)?;
                        return compare(
                            &g.dz,
                            |z| Ok(softmax(z)?.mass(&a.anchor_set) / a.z_ref_mass),
                            &z,
                        );
                    }
                    Err(Error::DegenerateAnchor { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        "kl" => {
            let reference = softmax(&normal_vec(rng, v))?;
            let (_, g) = kl_penalty(&d, &reference)?;
            compare(&g.dz, |z| Ok(kl_penalty(&softmax(z)?, &reference)?.0), &z)
        }
        other => Err(Error::invalid(format!("unknown kernel `{other}`"))),
    }
}

/// The ratio whose position inside the trust window decides clipping.
fn gating_ratio(update: &crate::objectives::TokenUpdate, policy: &Dist, old: &Dist) -> f64 {
    match &update.apo {
        Some(apo) if update.advantage < 0.0 => apo.rectified_ratio,
        _ => policy.prob(update.token) / old.prob(update.token),
    }
}

fn surrogate_case(method: Method, rng: &mut LabRng, v: usize) -> Result<f64> {
    let cfg = MethodConfig {
        anchor_k: rng.random_range(1..=v),
        ..MethodConfig::for_method(method)
    };
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    for _ in 0..MAX_REDRAWS {
        let z = normal_vec(rng, v);
        // π_old is a small perturbation of π_θ so ratios start near 1.
        let z_old: Vec<f64> = z
            .iter()
            .map(|x| x + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let reference = softmax(&normal_vec(rng, v))?;
        let (policy, old) = (softmax(&z)?, softmax(&z_old)?);
        let t = token(rng, v);
        let a: f64 = rng.sample::<f64, _>(StandardNormal);
        let update = method_token_update(&policy, &old, &reference, t, a, &cfg)?;
        let r = gating_ratio(&update, &policy, &old);
        if update.clipped || r - lo < CLIP_MARGIN || hi - r < CLIP_MARGIN {
            continue;
        }
        let loss = |z: &[f64]| {
            Ok(method_token_update(&softmax(z)?, &old, &reference, t, a, &cfg)?.surrogate_value)
        };
        return compare(&update.gradient.dz, loss, &z);
    }
    Err(Error::OracleFailure(format!(
        "no unclipped {method} case within {MAX_REDRAWS} draws"
    )))
}

pub const KERNELS: [&str; 5] = ["log_prob", "prob", "support_mass", "anchor_ratio", "kl"];

/// Runs `cases` random cases per kernel and per method surrogate. Rows are
/// the five kernels followed by one `surrogate_<method>` row per method.
pub fn run_suite(cases: usize, seed: u64) -> Result<Vec<KernelCheck>> {
    let mut rows = Vec::new();
    for (i, kernel) in KERNELS.iter().enumerate() {
        let mut r = rng::stream(seed, 100 + i as u64);
        let mut worst: f64 = 0.0;
        for c in 0..cases {
            worst = worst.max(kernel_case(
                kernel,
                &mut r,
                VOCAB_SIZES[c % VOCAB_SIZES.len()],
            )?);
        }
        rows.push(KernelCheck {
            kernel: kernel.to_string(),
            cases,
            max_rel_error: worst,
        });
    }
    for (i, method) in Method::ALL.iter().enumerate() {
        let mut r = rng::stream(seed, 200 + i as u64);
        let mut worst: f64 = 0.0;
        for c in 0..cases {
            worst = worst.max(surrogate_case(
                *method,
                &mut r,
                VOCAB_SIZES[c % VOCAB_SIZES.len()],
            )?);
        }
        rows.push(KernelCheck {
            kernel: format!("surrogate_{method}"),
            cases,
            max_rel_error: worst,
        });
    }
    Ok(rows)
}
