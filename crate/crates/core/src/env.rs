//! Synthetic reasoning trees with verifiable rewards.
//!
//! A tree of depth `D` and branching `B` has one context per prefix of length
//! `< D`; the vocabulary is the set of `B` children. Contexts are numbered in
//! breadth-first order: the prefix `(t_1, …, t_m)` maps to
//!
//! ```text
//! offset + (B^m − 1)/(B − 1) + Σ_i t_i · B^(m−i)
//! ```
//!
//! A leaf (full length-`D` sequence) earns reward 1 iff it is one of the
//! tree's valid leaves.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchor::top_k;
use crate::error::{Error, Result};
use crate::policy::{sample_token, ContextId, LogitTable, PolicySnapshot, VocabId};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub depth: usize,
    pub branching: usize,
    pub num_valid_leaves: usize,
    /// Logit bonus for children that lead to at least one valid leaf.
    pub ref_concentration: f64,
    /// Standard deviation of the Gaussian logit jitter.
    #[serde(default)]
    pub ref_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        if self.branching < 2 {
            return Err(Error::InvalidConfig("branching must be >= 2".into()));
        }
        let leaves = leaf_count(self.depth, self.branching)
            .ok_or_else(|| Error::InvalidConfig("branching^depth overflows".into()))?;
        if self.num_valid_leaves < 1 || self.num_valid_leaves > leaves {
            return Err(Error::InvalidConfig(format!(
                "num_valid_leaves must be in [1, {leaves}], got {}",
                self.num_valid_leaves
            )));
        }
        if !(self.ref_concentration.is_finite() && self.ref_concentration >= 0.0) {
            return Err(Error::InvalidConfig(
                "ref_concentration must be finite and >= 0".into(),
            ));
        }
        if !(self.ref_noise.is_finite() && self.ref_noise >= 0.0) {
            return Err(Error::InvalidConfig(
                "ref_noise must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn leaf_count(depth: usize, branching: usize) -> Option<usize> {
    branching.checked_pow(u32::try_from(depth).ok()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasoningTree {
    depth: usize,
    branching: usize,
    offset: usize,
    /// Valid leaves as base-B codes, most significant token first.
    valid_leaves: BTreeSet<usize>,
    ref_policy: LogitTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tokens: Vec<VocabId>,
    pub contexts: Vec<ContextId>,
    pub old_log_probs: Vec<f64>,
    pub reward: f64,
}

/// Teacher-forced Top-K recall for one `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageRow {
    pub k: usize,
    pub recall: f64,
    pub loss_rate: f64,
}

impl ReasoningTree {
    /// Builds a tree from explicit parts. Context ids start at `offset`.
    pub fn from_parts(
        depth: usize,
        branching: usize,
        valid_leaves: &[Vec<VocabId>],
        ref_policy: LogitTable,
        offset: usize,
    ) -> Result<Self> {
        let mut tree = ReasoningTree {
            depth,
            branching,
            offset,
            valid_leaves: BTreeSet::new(),
            ref_policy,
        };
        if depth < 1 || branching < 2 {
            return Err(Error::invalid("tree needs depth >= 1 and branching >= 2"));
        }
        if tree.ref_policy.vocab_size() != branching {
            return Err(Error::invalid(
                "reference vocabulary must equal the branching factor",
            ));
        }
        for leaf in valid_leaves {
            let code = tree.leaf_code(leaf)?;
            tree.valid_leaves.insert(code);
        }
        if tree.valid_leaves.is_empty() {
            return Err(Error::invalid("tree needs at least one valid leaf"));
        }
        for ctx in tree.context_ids() {
            let d = tree.ref_policy.dist(ctx)?;
            if d.probs().iter().any(|p| *p <= 0.0) {
                return Err(Error::invalid(format!(
                    "reference is not strictly positive at context {ctx}"
                )));
            }
        }
        if tree.ref_policy.len() != tree.num_contexts() {
            return Err(Error::invalid(
                "reference table has contexts outside the tree",
            ));
        }
        Ok(tree)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn vocab_size(&self) -> usize {
        self.branching
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn ref_policy(&self) -> &LogitTable {
        &self.ref_policy
    }

    pub fn num_valid_leaves(&self) -> usize {
        self.valid_leaves.len()
    }

    /// Number of contexts, `(B^D − 1)/(B − 1)`.
    pub fn num_contexts(&self) -> usize {
        self.level_start(self.depth)
    }

    pub fn root(&self) -> ContextId {
        ContextId(self.offset)
    }

    pub fn context_ids(&self) -> impl Iterator<Item = ContextId> + '_ {
        (0..self.num_contexts()).map(move |i| ContextId(self.offset + i))
    }

    fn level_start(&self, level: usize) -> usize {
        (self.branching.pow(level as u32) - 1) / (self.branching - 1)
    }

    /// Context reached after emitting `prefix` (`|prefix| < D`).
    pub fn context_of(&self, prefix: &[VocabId]) -> Result<ContextId> {
        if prefix.len() >= self.depth {
            return Err(Error::invalid(format!(
                "prefix of length {} has no context in a depth-{} tree",
                prefix.len(),
                self.depth
            )));
        }
        let mut pos = 0usize;
        for t in prefix {
            self.check_token(*t)?;
            pos = pos * self.branching + t.0;
        }
        Ok(ContextId(
            self.offset + self.level_start(prefix.len()) + pos,
        ))
    }

    fn check_token(&self, t: VocabId) -> Result<()> {
        if t.0 >= self.branching {
            return Err(Error::invalid(format!(
                "token {t} outside vocabulary of size {}",
                self.branching
            )));
        }
        Ok(())
    }

    fn leaf_code(&self, tokens: &[VocabId]) -> Result<usize> {
        if tokens.len() != self.depth {
            return Err(Error::invalid(format!(
                "sequence of length {} for a depth-{} tree",
                tokens.len(),
                self.depth
            )));
        }
        let mut code = 0usize;
        for t in tokens {
            self.check_token(*t)?;
            code = code * self.branching + t.0;
        }
        Ok(code)
    }

    fn decode_leaf(&self, mut code: usize) -> Vec<VocabId> {
        let mut out = vec![VocabId(0); self.depth];
        for slot in out.iter_mut().rev() {
            *slot = VocabId(code % self.branching);
            code /= self.branching;
        }
        out
    }

    pub fn valid_leaves(&self) -> Vec<Vec<VocabId>> {
        self.valid_leaves
            .iter()
            .map(|c| self.decode_leaf(*c))
            .collect()
    }

    /// Binary verifiable reward.
    pub fn verify(&self, tokens: &[VocabId]) -> Result<f64> {
        let code = self.leaf_code(tokens)?;
        Ok(if self.valid_leaves.contains(&code) {
            1.0
        } else {
            0.0
        })
    }

    /// Samples one root-to-leaf trajectory under `policy`.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        policy: &PolicySnapshot,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let mut tokens = Vec::with_capacity(self.depth);
        let mut contexts = Vec::with_capacity(self.depth);
        let mut old_log_probs = Vec::with_capacity(self.depth);
        let mut pos = 0usize;
        for level in 0..self.depth {
            let ctx = ContextId(self.offset + self.level_start(level) + pos);
            let dist = policy.dist(ctx)?;
            let tok = sample_token(&dist, rng);
            contexts.push(ctx);
            old_log_probs.push(dist.prob(tok).ln());
            tokens.push(tok);
            pos = pos * self.branching + tok.0;
        }
        let reward = if self.valid_leaves.contains(&pos) {
            1.0
        } else {
            0.0
        };
        Ok(Trajectory {
            tokens,
            contexts,
            old_log_probs,
            reward,
        })
    }

    /// Teacher-forced Top-K recall of `model` along every valid leaf: the
    /// fraction of `(leaf, step)` pairs whose true next token lies in the
    /// model's Top-K at the ground-truth prefix.
    pub fn oracle_coverage(
        &self,
        model: &LogitTable,
        k_values: &[usize],
    ) -> Result<Vec<CoverageRow>> {
        if model.vocab_size() != self.branching {
            return Err(Error::invalid("model vocabulary differs from the tree's"));
        }
        if let Some(k) = k_values.iter().find(|k| **k < 1 || **k > self.branching) {
            return Err(Error::invalid(format!(
                "K = {k} outside [1, {}]",
                self.branching
            )));
        }
        let mut hits = vec![0usize; k_values.len()];
        let mut total = 0usize;
        for leaf in self.valid_leaves() {
            for step in 0..self.depth {
                let ctx = self.context_of(&leaf[..step])?;
                let dist = model.dist(ctx)?;
                let truth = leaf[step];
                for (h, k) in hits.iter_mut().zip(k_values) {
                    if top_k(&dist, *k)?.contains(truth) {
                        *h += 1;
                    }
                }
                total += 1;
            }
        }
        Ok(k_values
            .iter()
            .zip(hits)
            .map(|(k, h)| {
                let recall = h as f64 / total as f64;
                CoverageRow {
                    k: *k,
                    recall,
                    loss_rate: 1.0 - recall,
                }
            })
            .collect())
    }

    /// Text form: `D=<int> B=<int>`, one comma-separated valid leaf per line,
    /// then the reference policy in the logit-table format.
    pub fn to_text(&self) -> String {
        let mut out = format!("D={} B={}\n", self.depth, self.branching);
        for leaf in self.valid_leaves() {
            let line: Vec<String> = leaf.iter().map(|t| t.0.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out.push_str(&self.ref_policy.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing `D=<int> B=<int>` header"))?;
        let mut depth = None;
        let mut branching = None;
        for field in header.split_whitespace() {
            let parse = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| Error::parse(line_no, format!("bad header value `{v}`: {e}")))
            };
            if let Some(v) = field.strip_prefix("D=") {
                depth = Some(parse(v)?);
            } else if let Some(v) = field.strip_prefix("B=") {
                branching = Some(parse(v)?);
            } else {
                return Err(Error::parse(
                    line_no,
                    format!("unexpected header field `{field}`"),
                ));
            }
        }
        let (depth, branching) = depth
            .zip(branching)
            .ok_or_else(|| Error::parse(line_no, "header needs both D= and B="))?;
        let mut leaves = Vec::new();
        while let Some((line_no, line)) = lines.peek().copied() {
            if line.trim_start().starts_with("V=") {
                break;
            }
            lines.next();
            if line.trim().is_empty() {
                continue;
            }
            let leaf = line
                .split(',')
                .map(|t| t.trim().parse::<usize>().map(VocabId))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(line_no, format!("bad leaf token: {e}")))?;
            leaves.push(leaf);
        }
        let table = LogitTable::parse_lines(lines)?;
        ReasoningTree::from_parts(depth, branching, &leaves, table, 0)
    }
}

/// Generates a tree: valid leaves drawn uniformly without replacement, and a
/// reference whose logit at each context is `ref_concentration` for children
/// leading to a valid leaf plus `ref_noise · N(0, 1)` jitter. Draws come from
/// [`rng::TREE_STREAM`] of `cfg.seed`.
pub fn generate_tree(cfg: &EnvConfig) -> Result<ReasoningTree> {
    generate_tree_at(cfg, 0)
}

/// Like [`generate_tree`] but numbering contexts from `offset`.
pub fn generate_tree_at(cfg: &EnvConfig, offset: usize) -> Result<ReasoningTree> {
    cfg.validate()?;
    let (depth, branching) = (cfg.depth, cfg.branching);
    let total = leaf_count(depth, branching).expect("validated");
    let mut rng = rng::stream(cfg.seed, rng::TREE_STREAM);
    let mut codes: Vec<usize> =
        rand::seq::index::sample(&mut rng, total, cfg.num_valid_leaves).into_vec();
    codes.sort_unstable();

    // Every prefix (level, position) on the way to some valid leaf.
    let mut live: HashSet<(usize, usize)> = HashSet::new();
    for code in &codes {
        for level in 0..=depth {
            live.insert((level, code / branching.pow((depth - level) as u32)));
        }
    }

    let mut table = LogitTable::new(branching);
    let mut ctx = offset;
    for level in 0..depth {
        for pos in 0..branching.pow(level as u32) {
            let mut logits = vec![0.0; branching];
            for (t, z) in logits.iter_mut().enumerate() {
                if live.contains(&(level + 1, pos * branching + t)) {
                    *z += cfg.ref_concentration;
                }
                let jitter: f64 = rng.sample(StandardNormal);
                *z += cfg.ref_noise * jitter;
            }
            table.insert(ContextId(ctx), logits)?;
            ctx += 1;
        }
    }
    let tree = ReasoningTree {
        depth,
        branching,
        offset,
        valid_leaves: codes.into_iter().collect(),
        ref_policy: table,
    };
    Ok(tree)
}

/// Several trees sharing one logit table, with disjoint context ranges. Each
/// tree plays the role of one prompt.
#[derive(Clone, Debug)]
pub struct TreeSet {
    trees: Vec<ReasoningTree>,
    reference: LogitTable,
}

impl TreeSet {
    pub fn generate(envs: &[EnvConfig]) -> Result<Self> {
        let mut trees = Vec::with_capacity(envs.len());
        let mut offset = 0;
        for env in envs {
            let tree = generate_tree_at(env, offset)?;
            offset += tree.num_contexts();
            trees.push(tree);
        }
        Self::from_trees(trees)
    }

    pub fn from_trees(trees: Vec<ReasoningTree>) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::InvalidConfig("at least one environment is required".into()))?;
        let mut reference = LogitTable::new(first.vocab_size());
        for tree in &trees {
            if tree.vocab_size() != first.vocab_size() {
                return Err(Error::InvalidConfig(
                    "all trees must share one branching factor".into(),
                ));
            }
            reference.merge(tree.ref_policy())?;
        }
        Ok(TreeSet { trees, reference })
    }

    pub fn trees(&self) -> &[ReasoningTree] {
        &self.trees
    }

    pub fn reference(&self) -> &LogitTable {
        &self.reference
    }

    pub fn vocab_size(&self) -> usize {
        self.reference.vocab_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{snapshot, softmax};

    fn small(seed: u64) -> EnvConfig {
        EnvConfig {
            depth: 3,
            branching: 3,
            num_valid_leaves: 4,
            ref_concentration: 1.0,
            ref_noise: 0.3,
            seed,
        }
    }

    #[test]
    fn single_level_reference_example() {
        // With one valid leaf {2}, the only valid child gets the bonus.
        let cfg = EnvConfig {
            depth: 1,
            branching: 4,
            num_valid_leaves: 1,
            ref_concentration: 3f64.ln(),
            ref_noise: 0.0,
            seed: 0,
        };
        let mut seed = 0;
        let tree = loop {
            let t = generate_tree(&EnvConfig {
                seed,
                ..cfg.clone()
            })
            .unwrap();
            if t.valid_leaves() == vec![vec![VocabId(2)]] {
                break t;
            }
            seed += 1;
        };
        let d = tree.ref_policy().dist(tree.root()).unwrap();
        let expect = [1.0 / 6.0, 1.0 / 6.0, 0.5, 1.0 / 6.0];
        for (a, b) in d.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_concentration_and_noise_is_uniform() {
        let t = generate_tree(&EnvConfig {
            ref_concentration: 0.0,
            ref_noise: 0.0,
            ..small(3)
        })
        .unwrap();
        for ctx in t.context_ids() {
            let d = t.ref_policy().dist(ctx).unwrap();
            assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_tree(&small(9)).unwrap(),
            generate_tree(&small(9)).unwrap()
        );
        assert_ne!(
            generate_tree(&small(9)).unwrap(),
            generate_tree(&small(10)).unwrap()
        );
    }

    #[test]
    fn invalid_configs() {
        let too_many = EnvConfig {
            num_valid_leaves: 28,
            ..small(0)
        };
        assert!(matches!(
            generate_tree(&too_many),
            Err(Error::InvalidConfig(_))
        ));
        assert!(generate_tree(&EnvConfig {
            depth: 0,
            ..small(0)
        })
        .is_err());
        assert!(generate_tree(&EnvConfig {
            branching: 1,
            ..small(0)
        })
        .is_err());
        assert!(generate_tree(&EnvConfig {
            num_valid_leaves: 27,
            ..small(0)
        })
        .is_ok());
    }

    #[test]
    fn verify_counts_match_enumeration() {
        let t = generate_tree(&small(4)).unwrap();
        let mut count = 0;
        for code in 0..27usize {
            let toks = vec![VocabId(code / 9), VocabId(code / 3 % 3), VocabId(code % 3)];
            count += t.verify(&toks).unwrap() as usize;
        }
        assert_eq!(count, 4);
        for leaf in t.valid_leaves() {
            assert_eq!(t.verify(&leaf).unwrap(), 1.0);
        }
        assert!(t.verify(&[VocabId(0)]).is_err());
        assert!(t.verify(&[VocabId(0), VocabId(0), VocabId(5)]).is_err());
    }

    #[test]
    fn context_numbering_is_breadth_first() {
        let t = generate_tree(&small(0)).unwrap();
        assert_eq!(t.num_contexts(), 13);
        assert_eq!(t.context_of(&[]).unwrap(), ContextId(0));
        assert_eq!(t.context_of(&[VocabId(2)]).unwrap(), ContextId(3));
        assert_eq!(
            t.context_of(&[VocabId(1), VocabId(2)]).unwrap(),
            ContextId(4 + 5)
        );
        assert!(t.context_of(&[VocabId(0); 3]).is_err());
        let ids: Vec<_> = t.context_ids().collect();
        assert_eq!(ids, (0..13).map(ContextId).collect::<Vec<_>>());
    }

    #[test]
    fn reference_is_strictly_positive_and_valid_leaves_reachable() {
        let t = generate_tree(&small(1)).unwrap();
        for ctx in t.context_ids() {
            assert!(t
                .ref_policy()
                .dist(ctx)
                .unwrap()
                .probs()
                .iter()
                .all(|p| *p > 0.0));
        }
        assert_eq!(t.ref_policy().len(), t.num_contexts());
    }

    #[test]
    fn rollout_records_consistent_trajectories() {
        let t = generate_tree(&small(2)).unwrap();
        let snap = snapshot(t.ref_policy());
        let mut r = rng::stream(1, 1);
        for _ in 0..50 {
            let tr = t.rollout(&snap, &mut r).unwrap();
            assert_eq!(tr.reward, t.verify(&tr.tokens).unwrap());
            for (i, ctx) in tr.contexts.iter().enumerate() {
                assert_eq!(*ctx, t.context_of(&tr.tokens[..i]).unwrap());
                let lp = snap.dist(*ctx).unwrap().prob(tr.tokens[i]).ln();
                assert!((lp - tr.old_log_probs[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_policy_rolls_out_deterministically() {
        let t = generate_tree(&small(5)).unwrap();
        let mut model = LogitTable::new(3);
        for ctx in t.context_ids() {
            model.insert(ctx, vec![-700.0, 0.0, -700.0]).unwrap();
        }
        let snap = snapshot(&model);
        let mut r = rng::stream(0, 0);
        for _ in 0..20 {
            assert_eq!(
                t.rollout(&snap, &mut r).unwrap().tokens,
                vec![VocabId(1); 3]
            );
        }
    }

    #[test]
    fn uniform_rollouts_hit_quarter_of_leaves() {
        // D = 2, B = 4, 4 valid leaves: exact success probability 4/16.
        let cfg = EnvConfig {
            depth: 2,
            branching: 4,
            num_valid_leaves: 4,
            ref_concentration: 0.0,
            ref_noise: 0.0,
            seed: 8,
        };
        let t = generate_tree(&cfg).unwrap();
        let snap = snapshot(t.ref_policy());
        let mut r = rng::stream(21, 1);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| t.rollout(&snap, &mut r).unwrap().reward)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 0.02, "{mean}");
    }

    #[test]
    fn exhaustive_leaf_probabilities_sum_to_one() {
        let t = generate_tree(&small(6)).unwrap();
        let mut total = 0.0;
        for code in 0..27usize {
            let toks = [VocabId(code / 9), VocabId(code / 3 % 3), VocabId(code % 3)];
            let mut p = 1.0;
            for i in 0..3 {
                let ctx = t.context_of(&toks[..i]).unwrap();
                p *= t.ref_policy().dist(ctx).unwrap().prob(toks[i]);
            }
            total += p;
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_of_one_hot_model_on_two_leaves() {
        // Leaves (0,1) and (0,2) share a length-1 prefix; a model that is
        // one-hot along (0,1) (and on token 1 elsewhere) recalls (2 + 1)/4.
        let mut reference = LogitTable::new(3);
        for c in 0..4 {
            reference.insert(ContextId(c), vec![0.0; 3]).unwrap();
        }
        let leaves = vec![vec![VocabId(0), VocabId(1)], vec![VocabId(0), VocabId(2)]];
        let t = ReasoningTree::from_parts(2, 3, &leaves, reference, 0).unwrap();
        let mut model = LogitTable::new(3);
        model
            .insert(ContextId(0), vec![0.0, -700.0, -700.0])
            .unwrap();
        for c in 1..4 {
            model
                .insert(ContextId(c), vec![-700.0, 0.0, -700.0])
                .unwrap();
        }
        let rows = t.oracle_coverage(&model, &[1, 2, 3]).unwrap();
        assert!((rows[0].recall - 0.75).abs() < 1e-15);
        assert!((rows[0].loss_rate - 0.25).abs() < 1e-15);
        assert_eq!(rows[2].recall, 1.0);
        assert!(rows[1].recall >= rows[0].recall);
        assert!(t.oracle_coverage(&model, &[4]).is_err());
        assert!(t.oracle_coverage(&model, &[0]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = generate_tree(&small(12)).unwrap();
        let back = ReasoningTree::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(ReasoningTree::from_text("D=2\n").is_err());
        assert!(matches!(
            ReasoningTree::from_text("D=1 B=2\n0,x\nV=2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn tree_sets_use_disjoint_contexts() {
        let set = TreeSet::generate(&[small(1), small(2)]).unwrap();
        assert_eq!(set.trees()[1].root(), ContextId(13));
        assert_eq!(set.reference().len(), 26);
        let leaf = &set.trees()[1].valid_leaves()[0];
        assert_eq!(set.trees()[1].verify(leaf).unwrap(), 1.0);
        let ctx = set.trees()[1].context_of(&leaf[..1]).unwrap();
        assert!(ctx.0 >= 13);
        let z = set.reference().logits(ctx).unwrap();
        assert_eq!(
            softmax(z).unwrap(),
            set.trees()[1].ref_policy().dist(ctx).unwrap()
        );
    }
}
