//! Closed-form single-step dynamics and a single-context bandit harness for
//! the collapse/recovery behaviour of softmax policy gradients.

use std::fmt::Write as _;

use rand::Rng;

use crate::anchor::top_k;
use crate::error::{Error, Result};
use crate::grad::{grad_log_prob, grad_prob, grad_support_mass};
use crate::objectives::{group_advantages, method_token_update, Method, MethodConfig};
use crate::policy::{sample_token, softmax, Dist, VocabId};
use crate::rng;

/// Logits are clamped from below here so that `π → 0` never produces NaN.
pub const LOGIT_FLOOR: f64 = -700.0;

const IDENTITY_TOL: f64 = 1e-12;

pub const CSV_HEADER: &str = "scenario,step,quantity,value";

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsRecord {
    pub step: usize,
    pub quantity: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsReport {
    pub scenario: String,
    pub records: Vec<DynamicsRecord>,
}

impl DynamicsReport {
    pub fn new(scenario: impl Into<String>) -> Self {
        DynamicsReport {
            scenario: scenario.into(),
            records: Vec::new(),
        }
    }

    /// Appends a record; every value must be finite.
    pub fn push(&mut self, step: usize, quantity: impl Into<String>, value: f64) -> Result<()> {
        let quantity = quantity.into();
        if !value.is_finite() {
            return Err(Error::Invariant(format!(
                "{}: non-finite {quantity} = {value} at step {step}",
                self.scenario
            )));
        }
        self.records.push(DynamicsRecord {
            step,
            quantity,
            value,
        });
        Ok(())
    }

    /// Values of one quantity in record order.
    pub fn series(&self, quantity: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.quantity == quantity)
            .map(|r| r.value)
            .collect()
    }

    pub fn last(&self, quantity: &str) -> Option<f64> {
        self.series(quantity).last().copied()
    }

    /// CSV rows without a header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.scenario, r.step, r.quantity, r.value
            );
        }
        out
    }
}

/// Renders several reports under one [`CSV_HEADER`].
pub fn reports_to_csv(reports: &[DynamicsReport]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_rows());
    }
    out
}

/// Logit change of an unsampled valid token when a competing token receives
/// advantage `A > 0`: `η·A·∂log π(sampled)/∂z_valid = −η·A·π_valid`.
pub fn passive_suppression_step(
    logits: &[f64],
    sampled: VocabId,
    valid: VocabId,
    advantage: f64,
    eta: f64,
) -> Result<f64> {
    if sampled == valid {
        return Err(Error::invalid("sampled and valid tokens must differ"));
    }
    if !(advantage > 0.0) {
        return Err(Error::invalid(
            "passive suppression needs a positive advantage",
        ));
    }
    let dist = softmax(logits)?;
    dist.check_token(valid)?;
    Ok(eta * advantage * grad_log_prob(&dist, sampled)?.dz[valid.0])
}

/// Recovery push `η·C·π_valid` received by a valid token when an error token
/// carrying penalty `C` is pushed down, next to the dominant path's
/// `η·C·(1 − π_valid)`. Fails if either is not linear in its probability or
/// if the dominant token does not out-gain the valid one.
pub fn vanishing_recovery_sweep(
    pi_valid: &[f64],
    penalty: f64,
    eta: f64,
) -> Result<DynamicsReport> {
    if !(penalty > 0.0) {
        return Err(Error::invalid("penalty must be positive"));
    }
    let mut report = DynamicsReport::new("vanishing_recovery");
    let mut slope: Option<f64> = None;
    for (i, &p) in pi_valid.iter().enumerate() {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("π_valid = {p} outside [0, 1)")));
        }
        let delta_valid = eta * penalty * p;
        let pi_path = 1.0 - p;
        let delta_path = eta * penalty * pi_path;
        if p > 0.0 {
            let s = delta_valid / p;
            let s0 = *slope.get_or_insert(s);
            if (s - s0).abs() > IDENTITY_TOL * s0.abs().max(1.0) {
                return Err(Error::Invariant(format!(
                    "recovery not linear: slope {s} vs {s0}"
                )));
            }
        }
        if pi_path > p && !(delta_path > delta_valid) {
            return Err(Error::Invariant(format!(
                "dominant path gained less than the valid token at π = {p}"
            )));
        }
        report.push(i, "pi_valid", p)?;
        report.push(i, "delta_valid", delta_valid)?;
        report.push(i, "pi_path", pi_path)?;
        report.push(i, "delta_path", delta_path)?;
    }
    Ok(report)
}

fn ratios_match(g: &[f64], p: &[f64], i: usize, j: usize) -> bool {
    if g[j] == 0.0 || p[j] == 0.0 {
        return true;
    }
    let (gr, pr) = (g[i] / g[j], p[i] / p[j]);
    (gr - pr).abs() <= IDENTITY_TOL * pr.abs().max(1.0)
}

/// Per-token logit gradients of the two recovery mechanisms when `error_token`
/// is penalized: the policy-gradient squeeze `∇π(y_err)` and the support
/// gradient `∇Σ_{S} π`. Each closed form is evaluated twice (inline and via
/// the gradient kernels) and the structural properties are asserted.
pub fn redistribution_compare(
    dist: &Dist,
    error_token: VocabId,
    anchor_set: &[VocabId],
) -> Result<DynamicsReport> {
    dist.check_token(error_token)?;
    if anchor_set.contains(&error_token) {
        return Err(Error::invalid("error token must not be in the anchor set"));
    }
    let p = dist.probs();
    let pg = grad_prob(dist, error_token)?;
    let apo = grad_support_mass(dist, anchor_set)?;
    let p_err = dist.prob(error_token);
    let p_safe = dist.mass(anchor_set);
    let in_set: Vec<usize> = anchor_set.iter().map(|t| t.0).collect();

    let mut report = DynamicsReport::new("redistribution");
    report.push(0, "p_err", p_err)?;
    report.push(0, "p_safe", p_safe)?;
    for (k, &pk) in p.iter().enumerate() {
        let pg_inline = if k == error_token.0 {
            p_err * (1.0 - pk)
        } else {
            -p_err * pk
        };
        let apo_inline = if in_set.contains(&k) {
            pk * (1.0 - p_safe)
        } else {
            -pk * p_safe
        };
        if (pg_inline - pg.dz[k]).abs() > IDENTITY_TOL
            || (apo_inline - apo.dz[k]).abs() > IDENTITY_TOL
        {
            return Err(Error::Invariant(format!(
                "closed form and kernel disagree at token {k}"
            )));
        }
        if k != error_token.0 && pg.dz[k].abs() > p_err {
            return Err(Error::Invariant(format!(
                "squeeze on token {k} exceeds π(y_err)"
            )));
        }
        if in_set.contains(&k) && pk > 0.0 && 1.0 - p_safe > 0.0 && !(apo.dz[k] > 0.0) {
            return Err(Error::Invariant(format!(
                "support gradient vanished on token {k} with P_safe < 1"
            )));
        }
        report.push(k, "pg_gradient", pg.dz[k])?;
        report.push(k, "apo_gradient", apo.dz[k])?;
    }
    for (a, &i) in in_set.iter().enumerate() {
        for &j in &in_set[a + 1..] {
            let pg_ok = i == error_token.0 || j == error_token.0 || ratios_match(&pg.dz, p, i, j);
            if !pg_ok || !ratios_match(&apo.dz, p, i, j) {
                return Err(Error::Invariant(format!(
                    "ranking not preserved between tokens {i} and {j}"
                )));
            }
        }
    }
    Ok(report)
}

/// How the bandit harness turns rewards into advantages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvantageMode {
    /// Group-normalized, as in the trainer.
    Group,
    /// Unnormalized `R − mean(R)`.
    RawReinforce,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditConfig {
    pub method: MethodConfig,
    pub steps: usize,
    pub inner_epochs: usize,
    pub advantage_mode: AdvantageMode,
}

impl BanditConfig {
    pub fn new(method: MethodConfig, steps: usize) -> Self {
        BanditConfig {
            method,
            steps,
            inner_epochs: 2,
            advantage_mode: AdvantageMode::Group,
        }
    }
}

fn record_bandit_state(
    report: &mut DynamicsReport,
    step: usize,
    dist: &Dist,
    valid: &[VocabId],
    manifold: &[VocabId],
) -> Result<()> {
    for v in valid {
        report.push(step, format!("pi_{}", v.0), dist.prob(*v))?;
    }
    report.push(step, "valid_mass", dist.mass(valid))?;
    report.push(step, "entropy", dist.entropy())?;
    report.push(step, "p_safe", dist.mass(manifold))
}

/// On-policy single-context bandit: each step samples `group_size` tokens,
/// rewards membership in `valid`, and applies `inner_epochs` token-mean
/// updates of the configured method against the frozen sampling policy. The
/// reference (for anchoring and KL) is the initial policy.
pub fn collapse_trajectory<R: Rng + ?Sized>(
    logits: &[f64],
    valid: &[VocabId],
    cfg: &BanditConfig,
    rng: &mut R,
) -> Result<DynamicsReport> {
    cfg.method.validate()?;
    if cfg.inner_epochs < 1 {
        return Err(Error::InvalidConfig("inner_epochs must be >= 1".into()));
    }
    let reference = softmax(logits)?;
    if valid.is_empty() {
        return Err(Error::invalid("valid set must be nonempty"));
    }
    for v in valid {
        reference.check_token(*v)?;
    }
    let manifold = top_k(&reference, cfg.method.anchor_k)?.members;
    let mut z = logits.to_vec();
    let mut report = DynamicsReport::new(format!("collapse_{}", cfg.method.method));
    record_bandit_state(&mut report, 0, &reference, valid, &manifold)?;

    let n = cfg.method.group_size;
    for step in 1..=cfg.steps {
        let old = softmax(&z)?;
        let tokens: Vec<VocabId> = (0..n).map(|_| sample_token(&old, rng)).collect();
        let rewards: Vec<f64> = tokens
            .iter()
            .map(|t| if valid.contains(t) { 1.0 } else { 0.0 })
            .collect();
        let advantages = match cfg.advantage_mode {
            AdvantageMode::Group => group_advantages(&rewards, cfg.method.adv_eps),
            AdvantageMode::RawReinforce => {
                let mean = rewards.iter().sum::<f64>() / n as f64;
                rewards.iter().map(|r| r - mean).collect()
            }
        };
        if advantages.iter().any(|a| *a != 0.0) {
            for _ in 0..cfg.inner_epochs {
                let current = softmax(&z)?;
                let mut grad = vec![0.0; z.len()];
                for (t, a) in tokens.iter().zip(&advantages) {
                    let u = method_token_update(&current, &old, &reference, *t, *a, &cfg.method)?;
                    for (g, d) in grad.iter_mut().zip(&u.gradient.dz) {
                        *g += d;
                    }
                }
                let scale = cfg.method.learning_rate / n as f64;
                for (zk, g) in z.iter_mut().zip(&grad) {
                    *zk = (*zk + scale * g).max(LOGIT_FLOOR);
                }
            }
        }
        record_bandit_state(&mut report, step, &softmax(&z)?, valid, &manifold)?;
    }
    Ok(report)
}

/// The scenarios run by the `dynamics` command: a recovery sweep, a
/// redistribution comparison, and GRPO vs APO bandit trajectories.
pub fn standard_suite(seed: u64, bandit_steps: usize) -> Result<Vec<DynamicsReport>> {
    let sweep: Vec<f64> = (0..10).map(|i| 10f64.powi(-i)).map(|p| p * 0.5).collect();
    let mut reports = vec![vanishing_recovery_sweep(&sweep, 1.0, 0.1)?];

    let dist = Dist::new(vec![0.6, 0.2, 0.1, 0.05, 0.05])?;
    reports.push(redistribution_compare(
        &dist,
        VocabId(0),
        &[VocabId(1), VocabId(2)],
    )?);

    // Two equally likely valid tokens and six weak distractors.
    let mut logits = vec![0.45f64.ln(); 2];
    logits.extend(std::iter::repeat_n((0.1f64 / 6.0).ln(), 6));
    let valid = [VocabId(0), VocabId(1)];
    for method in [Method::Grpo, Method::Apo] {
        let cfg = BanditConfig::new(
            MethodConfig {
                anchor_k: 4,
                ..MethodConfig::for_method(method)
            },
            bandit_steps,
        );
        let mut r = rng::stream(seed, rng::BANDIT_STREAM);
        reports.push(collapse_trajectory(&logits, &valid, &cfg, &mut r)?);
    }
    Ok(reports)
}
