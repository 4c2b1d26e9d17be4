//! Per-token surrogate objectives and their exact logit gradients.
//!
//! All gradients are ascent directions of the surrogate the trainer maximises.
//! The old policy and the reference are treated as constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anchor::{build_anchor, grad_anchor_ratio, AnchorContext};
use crate::error::{Error, Result};
use crate::grad::{grad_log_prob, grad_prob, LogitGradient};
use crate::policy::{Dist, VocabId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grpo,
    GrpoKl,
    GrpoKlErrorOnly,
    Nsr,
    Apo,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Grpo,
        Method::GrpoKl,
        Method::GrpoKlErrorOnly,
        Method::Nsr,
        Method::Apo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::GrpoKl => "grpo_kl",
            Method::GrpoKlErrorOnly => "grpo_kl_error_only",
            Method::Nsr => "nsr",
            Method::Apo => "apo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Method selector plus every coefficient the surrogates use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    /// Clip ratio ε.
    pub clip_eps: f64,
    /// APO push coefficient λ.
    pub push_coef: f64,
    /// APO pull coefficient β.
    pub pull_coef: f64,
    /// Safe-manifold size K.
    pub anchor_k: usize,
    pub kl_coef: f64,
    /// Logit-space SGD step η.
    pub learning_rate: f64,
    /// Rollouts per group N.
    pub group_size: usize,
    /// Floor added to the group standard deviation.
    pub adv_eps: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            method: Method::Grpo,
            clip_eps: 0.2,
            push_coef: 1.05,
            pull_coef: 0.1,
            anchor_k: 8,
            kl_coef: 0.01,
            learning_rate: 0.5,
            group_size: 8,
            adv_eps: 1e-6,
        }
    }
}

impl MethodConfig {
    pub fn for_method(method: Method) -> Self {
        MethodConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad("clip_eps must be > 0");
        }
        if !(self.push_coef > 0.0 && self.push_coef.is_finite()) {
            return bad("push_coef must be > 0");
        }
        if !(self.pull_coef >= 0.0 && self.pull_coef.is_finite()) {
            return bad("pull_coef must be >= 0");
        }
        if self.anchor_k < 1 {
            return bad("anchor_k must be >= 1");
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad("kl_coef must be >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.adv_eps > 0.0 && self.adv_eps.is_finite()) {
            return bad("adv_eps must be > 0");
        }
        Ok(())
    }
}

/// Push/pull breakdown of an APO negative-advantage update.
#[derive(Clone, Debug, PartialEq)]
pub struct ApoTerms {
    /// `π_θ(y)/π_old(y)`.
    pub push_ratio: f64,
    /// `None` when the exclusive anchor set was empty and the update fell
    /// back to push-only.
    pub anchor: Option<AnchorContext>,
    pub rectified_ratio: f64,
    /// `A · λ · ∇push_ratio`, zero when clipped.
    pub push_gradient: LogitGradient,
    /// `−A · β · ∇r_anchor`, zero when clipped or degenerate.
    pub pull_gradient: LogitGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenUpdate {
    pub token: VocabId,
    pub advantage: f64,
    pub surrogate_value: f64,
    pub gradient: LogitGradient,
    pub clipped: bool,
    pub degenerate_anchor: bool,
    pub apo: Option<ApoTerms>,
}

/// Group-relative advantages `(R − mean) / (popstd + adv_eps)`; a group with
/// identical rewards gets all zeros.
pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Vec<f64> {
    let n = rewards.len();
    if n == 0 || rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; n];
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = var.sqrt() + adv_eps;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
///
/// Returns `(value, d value / d ratio, clipped)`. A tie between the two
/// branches takes the unclipped one.
pub fn grpo_token_loss(ratio: f64, advantage: f64, cfg: &MethodConfig) -> (f64, f64, bool) {
    let eps = cfg.clip_eps;
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage, false)
    } else {
        (clipped, 0.0, true)
    }
}

/// `λ · push_ratio − β · anchor_ratio`.
pub fn apo_rectified_ratio(push_ratio: f64, anchor_ratio: f64, cfg: &MethodConfig) -> f64 {
    cfg.push_coef * push_ratio - cfg.pull_coef * anchor_ratio
}

/// Trust-region gated surrogate for the rectified ratio: `r̃·A` inside
/// `[1−ε, 1+ε]`, the constant `clip(r̃)·A` outside, so the gradient is exactly
/// zero whenever `r̃` leaves the window on either side.
fn apo_gated_loss(rectified: f64, advantage: f64, cfg: &MethodConfig) -> (f64, f64, bool) {
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    if (lo..=hi).contains(&rectified) {
        (rectified * advantage, advantage, false)
    } else {
        (rectified.clamp(lo, hi) * advantage, 0.0, true)
    }
}

fn check_shapes(policy: &Dist, old: &Dist, reference: &Dist, token: VocabId) -> Result<()> {
    if policy.len() != old.len() || policy.len() != reference.len() {
        return Err(Error::invalid(
            "policy, old and reference distributions differ in size",
        ));
    }
    policy.check_token(token)
}

fn push_ratio_and_grad(policy: &Dist, old: &Dist, token: VocabId) -> Result<(f64, LogitGradient)> {
    let old_p = old.prob(token);
    if old_p <= 0.0 {
        return Err(Error::Domain(format!(
            "token {token} has zero probability under π_old"
        )));
    }
    let ratio = policy.prob(token) / old_p;
    let grad = grad_prob(policy, token)?.scaled(1.0 / old_p);
    Ok((ratio, grad))
}

fn grpo_update(
    policy: &Dist,
    old: &Dist,
    token: VocabId,
    advantage: f64,
    cfg: &MethodConfig,
) -> Result<TokenUpdate> {
    let (ratio, ratio_grad) = push_ratio_and_grad(policy, old, token)?;
    let (value, slope, clipped) = grpo_token_loss(ratio, advantage, cfg);
    Ok(TokenUpdate {
        token,
        advantage,
        surrogate_value: value,
        gradient: ratio_grad.scaled(slope),
        clipped,
        degenerate_anchor: false,
        apo: None,
    })
}

/// APO per-token update. Non-negative advantages take the plain clipped GRPO
/// path; negative ones use the rectified ratio with an exclusive anchor.
pub fn apo_token_update(
    policy: &Dist,
    old: &Dist,
    reference: &Dist,
    token: VocabId,
    advantage: f64,
    cfg: &MethodConfig,
) -> Result<TokenUpdate> {
    check_shapes(policy, old, reference, token)?;
    if advantage >= 0.0 {
        return grpo_update(policy, old, token, advantage, cfg);
    }
    let (push_ratio, push_grad) = push_ratio_and_grad(policy, old, token)?;
    let anchor = match build_anchor(reference, policy, token, cfg.anchor_k) {
        Ok(a) => Some(a),
        Err(Error::DegenerateAnchor { .. }) => None,
        Err(e) => return Err(e),
    };
    let (rectified, pull_grad) = match &anchor {
        Some(a) => (
            apo_rectified_ratio(push_ratio, a.anchor_ratio, cfg),
            grad_anchor_ratio(policy, a)?,
        ),
        // Push-only fallback: β acts as 0 for this token.
        None => (
            cfg.push_coef * push_ratio,
            LogitGradient::zeros(policy.len()),
        ),
    };
    let (value, slope, clipped) = apo_gated_loss(rectified, advantage, cfg);
    let push_gradient = push_grad.scaled(slope * cfg.push_coef);
    let pull_gradient = if anchor.is_some() {
        pull_grad.scaled(-slope * cfg.pull_coef)
    } else {
        pull_grad
    };
    let gradient = &push_gradient + &pull_gradient;
    Ok(TokenUpdate {
        token,
        advantage,
        surrogate_value: value,
        gradient,
        clipped,
        degenerate_anchor: anchor.is_none(),
        apo: Some(ApoTerms {
            push_ratio,
            anchor,
            rectified_ratio: rectified,
            push_gradient,
            pull_gradient,
        }),
    })
}

/// Exact `D_KL(π_θ ‖ π_ref)` over the vocabulary and its logit gradient
/// `π_θ(k)·(ln(π_θ(k)/π_ref(k)) − D_KL)`.
pub fn kl_penalty(policy: &Dist, reference: &Dist) -> Result<(f64, LogitGradient)> {
    if policy.len() != reference.len() {
        return Err(Error::invalid(
            "policy and reference distributions differ in size",
        ));
    }
    let mut log_ratio = vec![0.0; policy.len()];
    let mut kl = 0.0;
    for (k, (p, q)) in policy.probs().iter().zip(reference.probs()).enumerate() {
        if *p > 0.0 {
            if *q <= 0.0 {
                return Err(Error::Domain(format!(
                    "reference assigns zero probability to token {k} where the policy has {p}"
                )));
            }
            log_ratio[k] = (p / q).ln();
            kl += p * log_ratio[k];
        }
    }
    let dz = policy
        .probs()
        .iter()
        .zip(&log_ratio)
        .map(|(p, lr)| if *p > 0.0 { p * (lr - kl) } else { 0.0 })
        .collect();
    Ok((kl, LogitGradient { dz }))
}

fn with_kl(
    mut update: TokenUpdate,
    policy: &Dist,
    reference: &Dist,
    coef: f64,
) -> Result<TokenUpdate> {
    let (kl, kl_grad) = kl_penalty(policy, reference)?;
    update.surrogate_value -= coef * kl;
    update.gradient += &kl_grad.scaled(-coef);
    Ok(update)
}

/// Dispatches to the configured method.
///
/// - `grpo`: clipped surrogate only.
/// - `grpo_kl`: clipped surrogate minus `kl_coef · KL` at every token.
/// - `grpo_kl_error_only`: the KL term only on negative-advantage tokens.
/// - `nsr`: nothing for `A ≥ 0`; for `A < 0` unclipped descent on
///   `log π_θ(y)` weighted by `|A|`, i.e. the surrogate `A · log π_θ(y)`.
/// - `apo`: [`apo_token_update`].
pub fn method_token_update(
    policy: &Dist,
    old: &Dist,
    reference: &Dist,
    token: VocabId,
    advantage: f64,
    cfg: &MethodConfig,
) -> Result<TokenUpdate> {
    check_shapes(policy, old, reference, token)?;
    match cfg.method {
        Method::Grpo => grpo_update(policy, old, token, advantage, cfg),
        Method::GrpoKl => with_kl(
            grpo_update(policy, old, token, advantage, cfg)?,
            policy,
            reference,
            cfg.kl_coef,
        ),
        Method::GrpoKlErrorOnly => {
            let update = grpo_update(policy, old, token, advantage, cfg)?;
            if advantage < 0.0 {
                with_kl(update, policy, reference, cfg.kl_coef)
            } else {
                Ok(update)
            }
        }
        Method::Nsr => {
            let (value, gradient) = if advantage < 0.0 {
                let p = policy.prob(token);
                if p <= 0.0 {
                    return Err(Error::Domain(format!(
                        "token {token} has zero probability under π_θ"
                    )));
                }
                (
                    advantage * p.ln(),
                    grad_log_prob(policy, token)?.scaled(advantage),
                )
            } else {
                (0.0, LogitGradient::zeros(policy.len()))
            };
            Ok(TokenUpdate {
                token,
                advantage,
                surrogate_value: value,
                gradient,
                clipped: false,
                degenerate_anchor: false,
                apo: None,
            })
        }
        Method::Apo => apo_token_update(policy, old, reference, token, advantage, cfg),
    }
}
