//! Tabular softmax policies.
//!
//! A [`LogitTable`] maps every context (a node of the reasoning tree, i.e. a
//! prefix) to a length-`V` vector of logits. The live policy, the frozen
//! sampling policy and the reference policy are all instances of it.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token index into a fixed vocabulary `[0, V)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VocabId(pub usize);

impl VocabId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VocabId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque identifier of a conditioning prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextId(pub usize);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Absolute tolerance on `Σ probs = 1`.
pub const DIST_SUM_TOL: f64 = 1e-9;

/// A probability distribution over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution over an empty vocabulary"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!(
                "probability {p} is not a finite non-negative number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Dist { probs })
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Dist {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: VocabId) -> f64 {
        self.probs[token.0]
    }

    pub fn check_token(&self, token: VocabId) -> Result<()> {
        if token.0 >= self.probs.len() {
            return Err(Error::invalid(format!(
                "token {} out of range for vocabulary of size {}",
                token.0,
                self.probs.len()
            )));
        }
        Ok(())
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Total probability of a set of tokens.
    pub fn mass(&self, tokens: &[VocabId]) -> f64 {
        tokens.iter().map(|t| self.probs[t.0]).sum()
    }
}

/// Numerically stabilised softmax (the max logit is subtracted first).
pub fn softmax(logits: &[f64]) -> Result<Dist> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty logit vector"));
    }
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {z}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Dist {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Draws one token by inverse-CDF sampling of a single uniform variate.
pub fn sample_token<R: Rng + ?Sized>(dist: &Dist, rng: &mut R) -> VocabId {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
            cumulative += p;
            if u < cumulative {
                return VocabId(i);
            }
        }
    }
    // u landed in the rounding gap above the accumulated total.
    VocabId(last_positive)
}

/// Per-context logits over a shared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitTable {
    vocab_size: usize,
    entries: BTreeMap<ContextId, Vec<f64>>,
}

impl LogitTable {
    pub fn new(vocab_size: usize) -> Self {
        LogitTable {
            vocab_size,
            entries: BTreeMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, ctx: ContextId) -> bool {
        self.entries.contains_key(&ctx)
    }

    pub fn contexts(&self) -> impl Iterator<Item = ContextId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ContextId, &[f64])> + '_ {
        self.entries.iter().map(|(c, z)| (*c, z.as_slice()))
    }

    pub fn insert(&mut self, ctx: ContextId, logits: Vec<f64>) -> Result<()> {
        self.check_logits(&logits)?;
        self.entries.insert(ctx, logits);
        Ok(())
    }

    pub fn logits(&self, ctx: ContextId) -> Result<&[f64]> {
        self.entries
            .get(&ctx)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown context {ctx}")))
    }

    pub fn dist(&self, ctx: ContextId) -> Result<Dist> {
        softmax(self.logits(ctx)?)
    }

    /// `z[ctx] += scale * delta`, rejecting updates that would leave a
    /// non-finite logit behind. The table is untouched on error.
    pub fn add_scaled(&mut self, ctx: ContextId, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.vocab_size {
            return Err(Error::invalid(format!(
                "update of length {} for vocabulary of size {}",
                delta.len(),
                self.vocab_size
            )));
        }
        let z = self
            .entries
            .get_mut(&ctx)
            .ok_or_else(|| Error::invalid(format!("unknown context {ctx}")))?;
        let updated: Vec<f64> = z.iter().zip(delta).map(|(z, d)| z + scale * d).collect();
        if updated.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "update at context {ctx} produced a non-finite logit"
            )));
        }
        *z = updated;
        Ok(())
    }

    /// Merges the contexts of `other` into `self`. Context ids must not collide.
    pub fn merge(&mut self, other: &LogitTable) -> Result<()> {
        if other.vocab_size != self.vocab_size {
            return Err(Error::invalid(
                "cannot merge tables with different vocabularies",
            ));
        }
        for (ctx, z) in &other.entries {
            if self.entries.contains_key(ctx) {
                return Err(Error::invalid(format!(
                    "context {ctx} present in both tables"
                )));
            }
            self.entries.insert(*ctx, z.clone());
        }
        Ok(())
    }

    fn check_logits(&self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.vocab_size {
            return Err(Error::invalid(format!(
                "logit vector of length {} for vocabulary of size {}",
                logits.len(),
                self.vocab_size
            )));
        }
        if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {z}")));
        }
        Ok(())
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// V=<int>
    /// ctx=<id> z=<v0>,<v1>,...
    /// ```
    ///
    /// Logits are written as `{:.16e}` (17 significant digits), which
    /// round-trips every finite `f64` exactly. Contexts appear in ascending id.
    pub fn to_text(&self) -> String {
        let mut out = format!("V={}\n", self.vocab_size);
        for (ctx, z) in &self.entries {
            let _ = write!(out, "ctx={} z=", ctx.0);
            for (i, v) in z.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse_lines(text.lines().enumerate().map(|(i, l)| (i + 1, l)))
    }

    /// Parses from `(line_number, line)` pairs; used by the tree format, which
    /// embeds a table after its own header.
    pub(crate) fn parse_lines<'a>(
        mut lines: impl Iterator<Item = (usize, &'a str)>,
    ) -> Result<Self> {
        let (line_no, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::parse(1, "missing `V=<int>` header"))?;
        let vocab_size: usize = header
            .trim()
            .strip_prefix("V=")
            .ok_or_else(|| Error::parse(line_no, "expected `V=<int>` header"))?
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad vocabulary size: {e}")))?;
        if vocab_size == 0 {
            return Err(Error::parse(line_no, "vocabulary size must be positive"));
        }
        let mut table = LogitTable::new(vocab_size);
        for (line_no, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (ctx_part, z_part) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse(line_no, "expected `ctx=<id> z=<values>`"))?;
            let ctx: usize = ctx_part
                .strip_prefix("ctx=")
                .ok_or_else(|| Error::parse(line_no, "expected `ctx=<id>`"))?
                .parse()
                .map_err(|e| Error::parse(line_no, format!("bad context id: {e}")))?;
            let values = z_part
                .trim()
                .strip_prefix("z=")
                .ok_or_else(|| Error::parse(line_no, "expected `z=<values>`"))?;
            let logits = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(line_no, format!("bad logit: {e}")))?;
            if table.entries.contains_key(&ContextId(ctx)) {
                return Err(Error::parse(line_no, format!("duplicate context {ctx}")));
            }
            table
                .insert(ContextId(ctx), logits)
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
        }
        Ok(table)
    }
}

/// Deep, immutable copy of a policy. Cloning the snapshot is cheap and all
/// clones share the same frozen table.
#[derive(Clone, Debug)]
pub struct PolicySnapshot {
    table: Arc<LogitTable>,
}

impl PolicySnapshot {
    pub fn table(&self) -> &LogitTable {
        &self.table
    }

    pub fn dist(&self, ctx: ContextId) -> Result<Dist> {
        self.table.dist(ctx)
    }
}

pub fn snapshot(policy: &LogitTable) -> PolicySnapshot {
    PolicySnapshot {
        table: Arc::new(policy.clone()),
    }
}
