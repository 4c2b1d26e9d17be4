use anchorlab_core::env::{generate_tree, EnvConfig, ReasoningTree};
use anchorlab_core::policy::{snapshot, LogitTable};
use anchorlab_core::rng::stream;
use anchorlab_core::{ContextId, VocabId};
use rand::Rng;

fn decode(code: usize, depth: usize, b: usize) -> Vec<VocabId> {
    let mut out = vec![VocabId(0); depth];
    let mut c = code;
    for slot in out.iter_mut().rev() {
        *slot = VocabId(c % b);
        c /= b;
    }
    out
}

fn leaf_prob(tree: &ReasoningTree, table: &LogitTable, leaf: &[VocabId]) -> f64 {
    (0..leaf.len())
        .map(|i| {
            table
                .dist(tree.context_of(&leaf[..i]).unwrap())
                .unwrap()
                .prob(leaf[i])
        })
        .product()
}

fn random_policy(tree: &ReasoningTree, seed: u64) -> LogitTable {
    let mut r = stream(seed, 77);
    let mut t = LogitTable::new(tree.vocab_size());
    for ctx in tree.context_ids() {
        t.insert(
            ctx,
            (0..tree.vocab_size())
                .map(|_| r.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap();
    }
    t
}

#[test]
fn exhaustive_enumeration_matches_monte_carlo() {
    for (depth, b, leaves, seed) in [(3, 4, 5, 1u64), (4, 3, 10, 2), (2, 8, 3, 3)] {
        let cfg = EnvConfig {
            depth,
            branching: b,
            num_valid_leaves: leaves,
            ref_concentration: 1.2,
            ref_noise: 0.5,
            seed,
        };
        let tree = generate_tree(&cfg).unwrap();
        for table in [tree.ref_policy().clone(), random_policy(&tree, seed)] {
            let total_leaves = b.pow(depth as u32);
            let mut mass = 0.0;
            let mut expected = 0.0;
            for code in 0..total_leaves {
                let leaf = decode(code, depth, b);
                let p = leaf_prob(&tree, &table, &leaf);
                mass += p;
                expected += p * tree.verify(&leaf).unwrap();
            }
            assert!((mass - 1.0).abs() < 1e-9);

            let snap = snapshot(&table);
            let mut r = stream(seed, 5);
            let n = 20_000;
            let mc = (0..n)
                .map(|_| tree.rollout(&snap, &mut r).unwrap().reward)
                .sum::<f64>()
                / n as f64;
            let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!(
                (mc - expected).abs() <= 3.0 * sigma + 1e-12,
                "{mc} vs {expected} (σ {sigma})"
            );
        }
    }
}

#[test]
fn every_valid_leaf_is_reachable_under_the_reference() {
    for seed in 0..10 {
        let tree = generate_tree(&EnvConfig {
            depth: 4,
            branching: 8,
            num_valid_leaves: 8,
            ref_concentration: 1.5,
            ref_noise: 1.0,
            seed,
        })
        .unwrap();
        for leaf in tree.valid_leaves() {
            assert!(leaf_prob(&tree, tree.ref_policy(), &leaf) > 0.0);
        }
    }
}

/// Recall by sorting the whole distribution at every teacher-forced step.
fn brute_force_recall(tree: &ReasoningTree, model: &LogitTable, k: usize) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for leaf in tree.valid_leaves() {
        for step in 0..leaf.len() {
            let probs = model
                .dist(tree.context_of(&leaf[..step]).unwrap())
                .unwrap()
                .probs()
                .to_vec();
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
            hits += usize::from(order[..k].contains(&leaf[step].0));
            total += 1;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn coverage_matches_sort_oracle_and_is_monotone() {
    for seed in 0..8 {
        let tree = generate_tree(&EnvConfig {
            depth: 3,
            branching: 8,
            num_valid_leaves: 6,
            ref_concentration: 1.0,
            ref_noise: 1.0,
            seed,
        })
        .unwrap();
        for model in [tree.ref_policy().clone(), random_policy(&tree, seed)] {
            let ks: Vec<usize> = (1..=8).collect();
            let rows = tree.oracle_coverage(&model, &ks).unwrap();
            let mut prev = 0.0;
            for row in &rows {
                assert_eq!(row.recall, brute_force_recall(&tree, &model, row.k));
                assert!(row.recall >= prev);
                prev = row.recall;
            }
            assert_eq!(rows.last().unwrap().recall, 1.0);
        }
    }
}

#[test]
fn one_hot_model_recall_counts_shared_prefix() {
    // Two valid leaves in a D = 2 tree sharing no prefix: a model one-hot
    // along the first leaf recalls (D + 0) / 2D at Top-1.
    let b = 4;
    let mut reference = LogitTable::new(b);
    for c in 0..5 {
        reference.insert(ContextId(c), vec![0.0; b]).unwrap();
    }
    let leaves = vec![vec![VocabId(0), VocabId(1)], vec![VocabId(2), VocabId(3)]];
    let tree = ReasoningTree::from_parts(2, b, &leaves, reference, 0).unwrap();
    let mut model = LogitTable::new(b);
    let one_hot = |t: usize| {
        (0..b)
            .map(|k| if k == t { 0.0 } else { -1000.0 })
            .collect::<Vec<_>>()
    };
    model.insert(ContextId(0), one_hot(0)).unwrap();
    for c in 1..5 {
        model.insert(ContextId(c), one_hot(1)).unwrap();
    }
    let rows = tree.oracle_coverage(&model, &[1]).unwrap();
    assert_eq!(rows[0].recall, 0.5);
}

#[test]
fn tree_text_round_trip_preserves_behaviour() {
    let tree = generate_tree(&EnvConfig {
        depth: 3,
        branching: 5,
        num_valid_leaves: 7,
        ref_concentration: 0.7,
        ref_noise: 0.9,
        seed: 4,
    })
    .unwrap();
    let back = ReasoningTree::from_text(&tree.to_text()).unwrap();
    assert_eq!(back, tree);
    let (a, b) = (snapshot(tree.ref_policy()), snapshot(back.ref_policy()));
    let (mut r1, mut r2) = (stream(1, 1), stream(1, 1));
    for _ in 0..100 {
        assert_eq!(
            tree.rollout(&a, &mut r1).unwrap(),
            back.rollout(&b, &mut r2).unwrap()
        );
    }
}
