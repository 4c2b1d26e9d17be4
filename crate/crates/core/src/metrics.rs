//! Evaluation metrics over frozen policy snapshots.
//!
//! Self-BLEU convention used by [`diversity_score`]: each sample is scored as
//! a hypothesis against the other `K − 1` samples as references. For every
//! order `n = 1..=n_max` that fits the hypothesis (`n ≤ len`), the modified
//! precision is `Σ_g min(c_hyp(g), max_ref c_ref(g)) / Σ_g c_hyp(g)`; BLEU is
//! the unweighted geometric mean of those precisions (zero if any is zero, no
//! smoothing) times the brevity penalty `exp(1 − r/c)` when `c < r`, where `c`
//! is the hypothesis length and `r` the closest reference length (shorter on
//! ties). Diversity is `1 − mean BLEU`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::top_k;
use crate::env::TreeSet;
use crate::error::{Error, Result};
use crate::objectives::kl_penalty;
use crate::policy::{ContextId, LogitTable, PolicySnapshot, VocabId};

/// Default maximum n-gram order for Self-BLEU.
pub const SELF_BLEU_ORDER: usize = 4;

pub const CSV_HEADER: &str = "step,pass1,passK,entropy,maxprob,diversity,support_mass,kl,eval_K";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub pass_at_1: f64,
    pub pass_at_k: f64,
    /// Mean token entropy in nats.
    pub mean_entropy: f64,
    pub mean_max_prob: f64,
    pub diversity_score: f64,
    pub support_mass: f64,
    pub kl_to_ref: f64,
    pub eval_k: usize,
}

impl MetricRecord {
    /// Names of the real-valued fields, in CSV order.
    pub const VALUE_FIELDS: [&'static str; 7] = [
        "pass1",
        "passK",
        "entropy",
        "maxprob",
        "diversity",
        "support_mass",
        "kl",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.pass_at_1,
            self.pass_at_k,
            self.mean_entropy,
            self.mean_max_prob,
            self.diversity_score,
            self.support_mass,
            self.kl_to_ref,
        ]
    }

    pub fn to_csv_row(&self) -> String {
        let v = self.values();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step, v[0], v[1], v[2], v[3], v[4], v[5], v[6], self.eval_k
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 9 {
            return Err(Error::invalid(format!(
                "metrics row has {} fields, expected 9",
                fields.len()
            )));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad integer `{s}`: {e}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad real `{s}`: {e}")))
        };
        Ok(MetricRecord {
            step: int(fields[0])?,
            pass_at_1: real(fields[1])?,
            pass_at_k: real(fields[2])?,
            mean_entropy: real(fields[3])?,
            mean_max_prob: real(fields[4])?,
            diversity_score: real(fields[5])?,
            support_mass: real(fields[6])?,
            kl_to_ref: real(fields[7])?,
            eval_k: int(fields[8])?,
        })
    }
}

/// Renders records as CSV with [`CSV_HEADER`].
pub fn records_to_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses CSV written by [`records_to_csv`]; lines starting with `#` are skipped.
pub fn records_from_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::invalid(format!(
                "metrics CSV must start with `{CSV_HEADER}`"
            )))
        }
    }
    lines.map(MetricRecord::from_csv_row).collect()
}

/// `(pass@1, pass@K)` from per-prompt reward lists of equal length `K`.
pub fn pass_metrics(rewards: &[Vec<f64>]) -> Result<(f64, f64)> {
    let k = rewards.first().map(Vec::len).unwrap_or(0);
    if k == 0 || rewards.iter().any(|r| r.len() != k) {
        return Err(Error::invalid(
            "pass metrics need K >= 1 rewards for every prompt",
        ));
    }
    let total: f64 = rewards.iter().flatten().sum();
    let pass1 = total / (k * rewards.len()) as f64;
    let solved = rewards
        .iter()
        .filter(|r| r.iter().any(|v| *v > 0.0))
        .count();
    Ok((pass1, solved as f64 / rewards.len() as f64))
}

/// Mean entropy (nats) and mean max-probability over visited contexts,
/// counted with multiplicity.
pub fn entropy_and_maxprob(policy: &LogitTable, visited: &[ContextId]) -> Result<(f64, f64)> {
    if visited.is_empty() {
        return Err(Error::invalid("no visited contexts"));
    }
    let (mut h, mut m) = (0.0, 0.0);
    for ctx in visited {
        let d = policy.dist(*ctx)?;
        h += d.entropy();
        m += d.max_prob();
    }
    let n = visited.len() as f64;
    Ok((h / n, m / n))
}

fn ngram_counts(seq: &[VocabId], n: usize) -> HashMap<&[VocabId], usize> {
    let mut counts = HashMap::new();
    for g in seq.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// BLEU of `hyp` against `refs` under the convention in the module docs.
pub fn sentence_bleu(hyp: &[VocabId], refs: &[&[VocabId]], n_max: usize) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let orders = n_max.min(hyp.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let hyp_counts = ngram_counts(hyp, n);
        let mut max_ref: HashMap<&[VocabId], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = hyp.len() + 1 - n;
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c = hyp.len() as f64;
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|len| (len.abs_diff(hyp.len()), *len))
        .expect("nonempty refs") as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

/// `1 − mean Self-BLEU` over `samples`.
pub fn diversity_score(samples: &[Vec<VocabId>], n_max: usize) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Domain("diversity needs at least two samples".into()));
    }
    if n_max < 1 {
        return Err(Error::invalid("Self-BLEU order must be >= 1"));
    }
    let mut total = 0.0;
    for (i, hyp) in samples.iter().enumerate() {
        let refs: Vec<&[VocabId]> = samples
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, s)| s.as_slice())
            .collect();
        total += sentence_bleu(hyp, &refs, n_max);
    }
    Ok((1.0 - total / samples.len() as f64).clamp(0.0, 1.0))
}

/// Mean over `contexts` of the policy mass inside `TopK(π_ref)`.
pub fn support_mass(
    policy: &LogitTable,
    reference: &LogitTable,
    k: usize,
    contexts: &[ContextId],
) -> Result<f64> {
    if policy.vocab_size() != reference.vocab_size() {
        return Err(Error::invalid("policy and reference vocabularies differ"));
    }
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts to average over"));
    }
    let mut total = 0.0;
    for ctx in contexts {
        let manifold = top_k(&reference.dist(*ctx)?, k)?;
        let mass = if manifold.len() == policy.vocab_size() {
            1.0
        } else {
            policy.dist(*ctx)?.mass(&manifold.members)
        };
        total += mass;
    }
    Ok(total / contexts.len() as f64)
}

/// Mean exact `D_KL(π_θ ‖ π_ref)` over `contexts`.
pub fn kl_to_ref(
    policy: &LogitTable,
    reference: &LogitTable,
    contexts: &[ContextId],
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts to average over"));
    }
    let mut total = 0.0;
    for ctx in contexts {
        total += kl_penalty(&policy.dist(*ctx)?, &reference.dist(*ctx)?)?.0;
    }
    Ok(total / contexts.len() as f64)
}

/// Samples `eval_k` rollouts per tree under `policy` and computes every
/// metric. Per-context metrics average over visited steps with multiplicity;
/// diversity averages the per-tree scores.
pub fn evaluate<R: Rng + ?Sized>(
    step: usize,
    policy: &PolicySnapshot,
    trees: &TreeSet,
    eval_k: usize,
    support_k: usize,
    rng: &mut R,
) -> Result<MetricRecord> {
    if eval_k < 2 {
        return Err(Error::InvalidConfig("eval_samples_k must be >= 2".into()));
    }
    let mut rewards = Vec::with_capacity(trees.trees().len());
    let mut visited = Vec::new();
    let mut diversity = 0.0;
    for tree in trees.trees() {
        let mut prompt_rewards = Vec::with_capacity(eval_k);
        let mut samples = Vec::with_capacity(eval_k);
        for _ in 0..eval_k {
            let tr = tree.rollout(policy, rng)?;
            prompt_rewards.push(tr.reward);
            visited.extend_from_slice(&tr.contexts);
            samples.push(tr.tokens);
        }
        diversity += diversity_score(&samples, SELF_BLEU_ORDER)?;
        rewards.push(prompt_rewards);
    }
    let (pass_at_1, pass_at_k) = pass_metrics(&rewards)?;
    let table = policy.table();
    let (mean_entropy, mean_max_prob) = entropy_and_maxprob(table, &visited)?;
    Ok(MetricRecord {
        step,
        pass_at_1,
        pass_at_k,
        mean_entropy,
        mean_max_prob,
        diversity_score: diversity / trees.trees().len() as f64,
        support_mass: support_mass(table, trees.reference(), support_k, &visited)?,
        kl_to_ref: kl_to_ref(table, trees.reference(), &visited)?,
        eval_k,
    })
}
