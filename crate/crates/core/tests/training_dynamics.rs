//! Directional Monte-Carlo checks of the trainer and the bandit harness.

use anchorlab_core::dynamics::{collapse_trajectory, BanditConfig};
use anchorlab_core::env::{EnvConfig, TreeSet};
use anchorlab_core::objectives::{Method, MethodConfig};
use anchorlab_core::policy::LogitTable;
use anchorlab_core::rng::{stream, BANDIT_STREAM, TRAIN_STREAM};
use anchorlab_core::trainer::{train_step, TrainConfig};
use anchorlab_core::VocabId;

fn valid_leaf_prob(trees: &TreeSet, policy: &LogitTable) -> f64 {
    let tree = &trees.trees()[0];
    let leaf = &tree.valid_leaves()[0];
    (0..leaf.len())
        .map(|i| {
            policy
                .dist(tree.context_of(&leaf[..i]).unwrap())
                .unwrap()
                .prob(leaf[i])
        })
        .product()
}

#[test]
fn grpo_raises_the_single_valid_leaf_probability() {
    let mut initial = 0.0;
    let mut fin = 0.0;
    let seeds = 10;
    for seed in 0..seeds {
        let env = EnvConfig {
            depth: 3,
            branching: 4,
            num_valid_leaves: 1,
            ref_concentration: 1.0,
            ref_noise: 0.3,
            seed,
        };
        let cfg = TrainConfig {
            total_steps: 200,
            seed,
            ..TrainConfig::new(MethodConfig::for_method(Method::Grpo), env)
        };
        let trees = TreeSet::generate(&cfg.envs).unwrap();
        let mut policy = trees.reference().clone();
        initial += valid_leaf_prob(&trees, &policy) / seeds as f64;
        let mut r = stream(seed, TRAIN_STREAM);
        for step in 1..=cfg.total_steps {
            train_step(&mut policy, &trees, &cfg, step, &mut r).unwrap();
        }
        fin += valid_leaf_prob(&trees, &policy) / seeds as f64;
    }
    assert!(fin > initial, "{initial} -> {fin}");
}

#[test]
fn exclusive_anchoring_holds_throughout_apo_training() {
    // apply_groups returns an invariant error if any token sits in its own
    // anchor set; a full run must therefore succeed.
    for k in [1, 2, 4, 8] {
        let env = EnvConfig {
            depth: 3,
            branching: 8,
            num_valid_leaves: 4,
            ref_concentration: 1.5,
            ref_noise: 0.5,
            seed: k as u64,
        };
        let cfg = TrainConfig {
            total_steps: 30,
            ..TrainConfig::new(
                MethodConfig {
                    anchor_k: k,
                    ..MethodConfig::for_method(Method::Apo)
                },
                env,
            )
        };
        anchorlab_core::trainer::run_experiment(&cfg).unwrap();
    }
}

fn bandit(
    method: Method,
    logits: &[f64],
    valid: &[VocabId],
    steps: usize,
    seed: u64,
) -> anchorlab_core::dynamics::DynamicsReport {
    let cfg = BanditConfig::new(MethodConfig::for_method(method), steps);
    collapse_trajectory(logits, valid, &cfg, &mut stream(seed, BANDIT_STREAM)).unwrap()
}

#[test]
fn single_valid_token_improves_on_average_for_every_method() {
    let logits = [0.0, 0.5, 0.2, -0.3, 0.1, 0.0];
    let valid = [VocabId(3)];
    for method in Method::ALL {
        let seeds = 20;
        let steps = 60;
        let mut mean = vec![0.0; steps + 1];
        for seed in 0..seeds {
            for (m, p) in mean
                .iter_mut()
                .zip(bandit(method, &logits, &valid, steps, seed).series("pi_3"))
            {
                *m += p / seeds as f64;
            }
        }
        // Mean trend: each ten-step window ends at least where it started.
        for w in mean.chunks(10).collect::<Vec<_>>().windows(2) {
            assert!(w[1][0] >= w[0][0] - 1e-12, "{method}: {mean:?}");
        }
        assert!(mean[steps] > mean[0], "{method}");
    }
}

#[test]
fn grpo_squeezes_one_of_two_valid_tokens() {
    let mut logits = vec![0.45f64.ln(); 2];
    logits.extend(std::iter::repeat_n((0.1f64 / 6.0).ln(), 6));
    let valid = [VocabId(0), VocabId(1)];
    let seeds = 15;
    let mut squeezed = 0;
    for seed in 0..seeds {
        let report = bandit(Method::Grpo, &logits, &valid, 500, seed);
        let last_min = report
            .last("pi_0")
            .unwrap()
            .min(report.last("pi_1").unwrap());
        squeezed += usize::from(last_min < 0.45);
    }
    assert!(2 * squeezed > seeds as usize, "{squeezed}/{seeds}");
}

#[test]
fn bandit_runs_are_seed_deterministic() {
    let logits = [0.3, -0.1, 0.0, 0.7];
    let valid = [VocabId(0), VocabId(2)];
    assert_eq!(
        bandit(Method::Apo, &logits, &valid, 50, 4),
        bandit(Method::Apo, &logits, &valid, 50, 4)
    );
}
