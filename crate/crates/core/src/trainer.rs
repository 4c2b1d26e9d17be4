//! On-policy training loop over reasoning trees.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Trajectory, TreeSet};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricRecord};
use crate::objectives::{group_advantages, method_token_update, MethodConfig};
use crate::policy::{snapshot, ContextId, Dist, LogitTable, PolicySnapshot};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: MethodConfig,
    /// One tree per entry; each tree is one prompt.
    pub envs: Vec<EnvConfig>,
    pub total_steps: usize,
    /// Groups of `group_size` rollouts drawn per tree per step.
    pub groups_per_step: usize,
    pub inner_epochs: usize,
    pub eval_every: usize,
    pub eval_samples_k: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(method: MethodConfig, env: EnvConfig) -> Self {
        TrainConfig {
            method,
            envs: vec![env],
            total_steps: 300,
            groups_per_step: 4,
            inner_epochs: 2,
            eval_every: 25,
            eval_samples_k: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.envs.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one environment is required".into(),
            ));
        }
        for env in &self.envs {
            env.validate()?;
        }
        if self.groups_per_step < 1 {
            return Err(Error::InvalidConfig("groups_per_step must be >= 1".into()));
        }
        if self.inner_epochs < 1 {
            return Err(Error::InvalidConfig("inner_epochs must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        if self.eval_samples_k < 2 {
            return Err(Error::InvalidConfig("eval_samples_k must be >= 2".into()));
        }
        Ok(())
    }
}

/// `N` rollouts from one root with their group-relative advantages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGroup {
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl TrajectoryGroup {
    pub fn new(trajectories: Vec<Trajectory>, adv_eps: f64) -> Self {
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
        let advantages = group_advantages(&rewards, adv_eps);
        TrajectoryGroup {
            trajectories,
            advantages,
        }
    }

    /// True when every advantage is zero.
    pub fn is_degenerate(&self) -> bool {
        self.advantages.iter().all(|a| *a == 0.0)
    }
}

/// Counters from [`apply_groups`], summed over every inner epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub token_updates: usize,
    pub clipped: usize,
    pub degenerate_anchors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub frac_clipped: f64,
    pub degenerate_anchors: usize,
    pub wallclock_ms: f64,
}

struct DistCache<'a> {
    table: &'a LogitTable,
    cache: HashMap<ContextId, Dist>,
}

impl<'a> DistCache<'a> {
    fn new(table: &'a LogitTable) -> Self {
        DistCache {
            table,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, ctx: ContextId) -> Result<&Dist> {
        if !self.cache.contains_key(&ctx) {
            let d = self.table.dist(ctx)?;
            self.cache.insert(ctx, d);
        }
        Ok(&self.cache[&ctx])
    }
}

/// Applies `inner_epochs` token-mean gradient-ascent steps for `groups`.
///
/// Zero-variance groups are dropped. Each epoch evaluates every kept token
/// against the current policy and the frozen `old` snapshot, averages the
/// per-token surrogate gradients over all kept tokens, and moves each logit
/// by `learning_rate` times that mean.
pub fn apply_groups(
    policy: &mut LogitTable,
    old: &PolicySnapshot,
    reference: &LogitTable,
    groups: &[TrajectoryGroup],
    method: &MethodConfig,
    inner_epochs: usize,
) -> Result<UpdateCounts> {
    let kept: Vec<&TrajectoryGroup> = groups.iter().filter(|g| !g.is_degenerate()).collect();
    let total_tokens: usize = kept
        .iter()
        .flat_map(|g| &g.trajectories)
        .map(|t| t.tokens.len())
        .sum();
    let mut counts = UpdateCounts::default();
    if total_tokens == 0 {
        return Ok(counts);
    }
    let mut old_dists = DistCache::new(old.table());
    let mut ref_dists = DistCache::new(reference);
    let scale = method.learning_rate / total_tokens as f64;
    for _ in 0..inner_epochs {
        let mut current = DistCache::new(policy);
        let mut acc: BTreeMap<ContextId, Vec<f64>> = BTreeMap::new();
        for group in &kept {
            for (traj, adv) in group.trajectories.iter().zip(&group.advantages) {
                for (ctx, token) in traj.contexts.iter().zip(&traj.tokens) {
                    let p = current.get(*ctx)?.clone();
                    let update = method_token_update(
                        &p,
                        old_dists.get(*ctx)?,
                        ref_dists.get(*ctx)?,
                        *token,
                        *adv,
                        method,
                    )?;
                    if let Some(anchor) = update.apo.as_ref().and_then(|a| a.anchor.as_ref()) {
                        if anchor.contains(*token) {
                            return Err(Error::Invariant(format!(
                                "token {token} is inside its own anchor set at context {ctx}"
                            )));
                        }
                    }
                    counts.token_updates += 1;
                    counts.clipped += usize::from(update.clipped);
                    counts.degenerate_anchors += usize::from(update.degenerate_anchor);
                    let slot = acc.entry(*ctx).or_insert_with(|| vec![0.0; p.len()]);
                    for (s, g) in slot.iter_mut().zip(&update.gradient.dz) {
                        *s += g;
                    }
                }
            }
        }
        for (ctx, g) in &acc {
            policy.add_scaled(*ctx, g, scale)?;
        }
    }
    Ok(counts)
}

/// Samples `groups_per_step` groups per tree from a snapshot of `policy`, then
/// applies [`apply_groups`].
pub fn train_step<R: Rng + ?Sized>(
    policy: &mut LogitTable,
    trees: &TreeSet,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut R,
) -> Result<StepStats> {
    let start = Instant::now();
    let old = snapshot(policy);
    let mut groups = Vec::with_capacity(trees.trees().len() * cfg.groups_per_step);
    let mut reward_sum = 0.0;
    let mut n = 0usize;
    for tree in trees.trees() {
        for _ in 0..cfg.groups_per_step {
            let mut trajs = Vec::with_capacity(cfg.method.group_size);
            for _ in 0..cfg.method.group_size {
                let t = tree.rollout(&old, rng)?;
                reward_sum += t.reward;
                n += 1;
                trajs.push(t);
            }
            groups.push(TrajectoryGroup::new(trajs, cfg.method.adv_eps));
        }
    }
    let counts = apply_groups(
        policy,
        &old,
        trees.reference(),
        &groups,
        &cfg.method,
        cfg.inner_epochs,
    )?;
    let frac_clipped = if counts.token_updates == 0 {
        0.0
    } else {
        counts.clipped as f64 / counts.token_updates as f64
    };
    Ok(StepStats {
        step,
        mean_reward: reward_sum / n as f64,
        frac_clipped,
        degenerate_anchors: counts.degenerate_anchors,
        wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub records: Vec<MetricRecord>,
    pub steps: Vec<StepStats>,
    pub final_policy: LogitTable,
}

impl ExperimentRun {
    /// Step statistics as JSON lines.
    pub fn steps_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step stats serialize"));
            out.push('\n');
        }
        out
    }
}

fn eval_at(
    step: usize,
    policy: &LogitTable,
    trees: &TreeSet,
    cfg: &TrainConfig,
) -> Result<MetricRecord> {
    let mut r = rng::eval_stream(cfg.seed, step);
    evaluate(
        step,
        &snapshot(policy),
        trees,
        cfg.eval_samples_k,
        cfg.method.anchor_k,
        &mut r,
    )
}

/// Trains from the reference policy, evaluating at step 0, every
/// `eval_every` steps, and after the final step.
pub fn run_experiment(cfg: &TrainConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let trees = TreeSet::generate(&cfg.envs)?;
    let mut policy = trees.reference().clone();
    let mut train_rng = rng::stream(cfg.seed, rng::TRAIN_STREAM);
    let mut records = vec![eval_at(0, &policy, &trees, cfg)?];
    let mut steps = Vec::with_capacity(cfg.total_steps);
    for step in 1..=cfg.total_steps {
        steps.push(train_step(&mut policy, &trees, cfg, step, &mut train_rng)?);
        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            records.push(eval_at(step, &policy, &trees, cfg)?);
        }
    }
    Ok(ExperimentRun {
        records,
        steps,
        final_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_tree;
    use crate::objectives::Method;

    fn env(seed: u64) -> EnvConfig {
        EnvConfig {
            depth: 2,
            branching: 4,
            num_valid_leaves: 3,
            ref_concentration: 1.0,
            ref_noise: 0.2,
            seed,
        }
    }

    fn cfg(method: Method) -> TrainConfig {
        TrainConfig {
            total_steps: 6,
            eval_every: 3,
            eval_samples_k: 8,
            groups_per_step: 2,
            ..TrainConfig::new(MethodConfig::for_method(method), env(1))
        }
    }

    fn sample_groups(
        trees: &TreeSet,
        policy: &LogitTable,
        n_groups: usize,
        seed: u64,
    ) -> Vec<TrajectoryGroup> {
        let snap = snapshot(policy);
        let mut r = rng::stream(seed, 9);
        (0..n_groups)
            .map(|_| {
                let t = (0..8)
                    .map(|_| trees.trees()[0].rollout(&snap, &mut r).unwrap())
                    .collect();
                TrajectoryGroup::new(t, 1e-6)
            })
            .collect()
    }

    #[test]
    fn first_epoch_push_ratios_are_one() {
        let trees = TreeSet::generate(&[env(2)]).unwrap();
        let policy = trees.reference().clone();
        let old = snapshot(&policy);
        for g in sample_groups(&trees, &policy, 4, 1) {
            for (t, a) in g.trajectories.iter().zip(&g.advantages) {
                for (ctx, tok) in t.contexts.iter().zip(&t.tokens) {
                    let d = policy.dist(*ctx).unwrap();
                    let u = method_token_update(
                        &d,
                        &old.dist(*ctx).unwrap(),
                        &trees.reference().dist(*ctx).unwrap(),
                        *tok,
                        *a,
                        &MethodConfig::for_method(Method::Apo),
                    )
                    .unwrap();
                    if let Some(apo) = u.apo {
                        assert_eq!(apo.push_ratio, 1.0);
                    }
                    assert!(!u.clipped || *a < 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_variance_groups_leave_policy_bitwise_unchanged() {
        let trees = TreeSet::generate(&[env(3)]).unwrap();
        let mut policy = trees.reference().clone();
        let before = policy.clone();
        let old = snapshot(&policy);
        let mut groups = sample_groups(&trees, &policy, 3, 2);
        for g in &mut groups {
            for t in &mut g.trajectories {
                t.reward = 0.0;
            }
            *g = TrajectoryGroup::new(g.trajectories.clone(), 1e-6);
        }
        let c = apply_groups(
            &mut policy,
            &old,
            trees.reference(),
            &groups,
            &MethodConfig::default(),
            2,
        )
        .unwrap();
        assert_eq!(c, UpdateCounts::default());
        assert_eq!(policy, before);
    }

    #[test]
    fn replicated_groups_give_the_same_update() {
        let trees = TreeSet::generate(&[env(4)]).unwrap();
        let base = trees.reference().clone();
        let groups = sample_groups(&trees, &base, 3, 3);
        let mut tripled = groups.clone();
        tripled.extend(groups.iter().cloned());
        tripled.extend(groups.iter().cloned());
        for method in Method::ALL {
            let m = MethodConfig::for_method(method);
            let (mut a, mut b) = (base.clone(), base.clone());
            apply_groups(&mut a, &snapshot(&base), trees.reference(), &groups, &m, 2).unwrap();
            apply_groups(&mut b, &snapshot(&base), trees.reference(), &tripled, &m, 2).unwrap();
            for ((_, za), (_, zb)) in a.iter().zip(b.iter()) {
                for (x, y) in za.iter().zip(zb) {
                    assert!((x - y).abs() < 1e-12, "{method}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn grpo_kl_at_reference_matches_grpo_for_one_epoch() {
        let trees = TreeSet::generate(&[env(5)]).unwrap();
        let base = trees.reference().clone();
        let groups = sample_groups(&trees, &base, 4, 4);
        let (mut a, mut b) = (base.clone(), base.clone());
        let grpo = MethodConfig::for_method(Method::Grpo);
        let kl = MethodConfig::for_method(Method::GrpoKl);
        apply_groups(
            &mut a,
            &snapshot(&base),
            trees.reference(),
            &groups,
            &grpo,
            1,
        )
        .unwrap();
        apply_groups(&mut b, &snapshot(&base), trees.reference(), &groups, &kl, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_experiment_eval_points_and_determinism() {
        let c = cfg(Method::Apo);
        let run = run_experiment(&c).unwrap();
        let steps: Vec<usize> = run.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 6]);
        assert_eq!(run.steps.len(), 6);
        assert_eq!(run_experiment(&c).unwrap().records, run.records);

        let c7 = TrainConfig {
            total_steps: 7,
            ..c.clone()
        };
        let steps: Vec<usize> = run_experiment(&c7)
            .unwrap()
            .records
            .iter()
            .map(|r| r.step)
            .collect();
        assert_eq!(steps, vec![0, 3, 6, 7]);

        let c0 = TrainConfig {
            total_steps: 0,
            ..c
        };
        let run0 = run_experiment(&c0).unwrap();
        assert_eq!(run0.records.len(), 1);
        assert!(run0.steps.is_empty());
        assert_eq!(run0.records[0].kl_to_ref, 0.0);
    }

    #[test]
    fn degenerate_anchors_are_counted_not_fatal() {
        // K = 1 and a reference whose Top-1 token is an error: every sampled
        // error at the root has an empty exclusive anchor.
        let env = (0..)
            .map(|seed| EnvConfig {
                depth: 1,
                branching: 4,
                num_valid_leaves: 1,
                ref_concentration: 0.0,
                ref_noise: 2.0,
                seed,
            })
            .find(|e| {
                let tree = generate_tree(e).unwrap();
                let top =
                    crate::anchor::top_k(&tree.ref_policy().dist(tree.root()).unwrap(), 1).unwrap();
                tree.verify(&top.members).unwrap() == 0.0
            })
            .unwrap();
        let c = TrainConfig {
            method: MethodConfig {
                anchor_k: 1,
                ..MethodConfig::for_method(Method::Apo)
            },
            envs: vec![env],
            total_steps: 20,
            ..cfg(Method::Apo)
        };
        let run = run_experiment(&c).unwrap();
        assert!(
            run.steps
                .iter()
                .map(|s| s.degenerate_anchors)
                .sum::<usize>()
                > 0
        );
        let line = run.steps_jsonl().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expect = vec![
            "step",
            "mean_reward",
            "frac_clipped",
            "degenerate_anchors",
            "wallclock_ms",
        ];
        expect.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, expect);
    }
}
