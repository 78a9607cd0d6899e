use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::gradient_check;
use crate::testutil::{labels, random_hypergraph};

fn stats_from_weights(w: &[f64]) -> IncidenceStats {
    IncidenceStats::from_duplication(w.iter().map(|x| Some(x.exp())).collect()).unwrap()
}

#[test]
fn hand_evaluated_probabilities() {
    let stats = stats_from_weights(&[0.0, 1.0, 2.0]);
    let mut policy = MaskingPolicy { p_node: 0.3, p_tau: 0.5, direction: MaskDirection::Formula };
    let p = node_mask_probabilities(&stats, &policy);
    let expected = [0.5, 0.3, 0.0];
    for (a, b) in p.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{p:?}");
    }
    policy.direction = MaskDirection::Prose;
    let p = node_mask_probabilities(&stats, &policy);
    for (a, b) in p.iter().zip([0.0, 0.3, 0.5]) {
        assert!((a - b).abs() < 1e-12, "{p:?}");
    }
}

#[test]
fn equal_weights_give_uniform_probabilities() {
    let stats = stats_from_weights(&[0.4, 0.4, 0.4]);
    for (p_node, p_tau) in [(0.3, 0.7), (0.9, 0.2)] {
        let p = node_mask_probabilities(&stats, &MaskingPolicy { p_node, p_tau, ..Default::default() });
        assert!(p.iter().all(|&x| x == p_node.min(p_tau)));
    }
    let with_isolated =
        IncidenceStats::from_duplication(vec![Some(2.0), None, Some(1.0)]).unwrap();
    assert_eq!(node_mask_probabilities(&with_isolated, &MaskingPolicy::default())[1], 0.0);
}

proptest! {
    #[test]
    fn probabilities_are_capped_and_monotone(
        w in prop::collection::vec(0.0f64..3.0, 2..30),
        p_node in 0.0f64..=1.0,
        p_tau in 0.0f64..=1.0,
    ) {
        let stats = stats_from_weights(&w);
        let policy = MaskingPolicy { p_node, p_tau, direction: MaskDirection::Formula };
        let p = node_mask_probabilities(&stats, &policy);
        for &x in &p {
            prop_assert!((0.0..=p_tau).contains(&x));
        }
        let weights: Vec<f64> = stats.log_weight.iter().map(|x| x.unwrap()).collect();
        for i in 0..w.len() {
            for j in 0..w.len() {
                if weights[i] < weights[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}

#[test]
fn soft_vectors_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let d = gumbel_softmax_sample([0.3, -1.2, 2.0], 1.0, &mut rng);
        assert!((d.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.soft.iter().all(|&g| g > 0.0));
        let argmax = (0..3).fold(0, |b, k| if d.soft[k] > d.soft[b] { k } else { b });
        assert_eq!(d.op.index(), argmax);
    }
}

#[test]
fn hard_operation_frequencies_follow_softmax() {
    let alpha = [0.5, -0.25, 1.0];
    let mut expected = alpha;
    softmax_in_place(&mut expected);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 3];
    let draws = 100_000;
    for _ in 0..draws {
        counts[gumbel_softmax_sample(alpha, 0.7, &mut rng).op.index()] += 1;
    }
    for k in 0..3 {
        let freq = counts[k] as f64 / draws as f64;
        assert!((freq - expected[k]).abs() < 0.01, "op {k}: {freq} vs {}", expected[k]);
    }
}

#[test]
fn low_temperature_concentrates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let d = gumbel_softmax_sample([0.1, 0.2, 0.3], 1e-6, &mut rng);
        assert!(d.soft.iter().cloned().fold(0.0, f64::max) > 0.99);
    }
}

fn sampler(hg: &Hypergraph, config: AugmentConfig) -> ViewSampler {
    ViewSampler::new(hg, config).unwrap()
}

#[test]
fn identity_augmentation_returns_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hg = random_hypergraph(&mut rng, 15, 10, 0.3, &[4]);
    let config = AugmentConfig {
        masking: MaskingPolicy { p_node: 0.0, ..Default::default() },
        fixed_op: Some(EdgeOp::Preserve),
        ..Default::default()
    };
    let alpha = vec![[0.0; 3]; 10];
    let pair = sampler(&hg, config).sample_pair(&hg, &alpha, &mut rng).unwrap();
    for view in [&pair.a, &pair.b] {
        assert_eq!(view.hypergraph, hg);
        assert_eq!(view.edge_ids, (0..10).collect::<Vec<_>>());
        assert!(view.node_mask.iter().all(|&m| !m));
    }
}

#[test]
fn removed_edge_is_absent_and_others_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hg = random_hypergraph(&mut rng, 12, 6, 0.4, &[]);
    let config = AugmentConfig { masking: MaskingPolicy { p_node: 0.0, ..Default::default() }, ..Default::default() };
    let mut alpha = vec![[1e3, 0.0, 0.0]; 6];
    alpha[2] = [0.0, 1e3, 0.0];
    let view = sampler(&hg, config).sample_view(&hg, &alpha, &mut rng).unwrap();
    assert_eq!(view.edge_ids, vec![0, 1, 3, 4, 5]);
    for (i, &e) in view.edge_ids.iter().enumerate() {
        assert_eq!(view.hypergraph.nodes_of_edge(i), hg.nodes_of_edge(e));
    }
    assert_eq!(view.ops[2], EdgeOp::Remove);
}

#[test]
fn empirical_mask_frequencies_match_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hg = random_hypergraph(&mut rng, 14, 9, 0.35, &[]);
    let config = AugmentConfig { fixed_op: Some(EdgeOp::Preserve), ..Default::default() };
    let s = sampler(&hg, config);
    assert!(s.probabilities().iter().any(|&p| p > 0.1));
    let alpha = vec![[0.0; 3]; 9];
    let trials = 10_000;
    let mut counts = vec![0usize; 14];
    for _ in 0..trials {
        for (v, &m) in s.attempt(&hg, &alpha, &mut rng).unwrap().unwrap().node_mask.iter().enumerate() {
            counts[v] += m as usize;
        }
    }
    for v in 0..14 {
        let freq = counts[v] as f64 / trials as f64;
        assert!((freq - s.probabilities()[v]).abs() < 0.02, "node {v}: {freq} vs {}", s.probabilities()[v]);
    }
}

#[test]
fn losing_every_edge_errors_after_retries() {
    let hg = Hypergraph::from_edge_lists(labels(2), vec![("p".into(), vec![0, 1])]).unwrap();
    let config = AugmentConfig { fixed_op: Some(EdgeOp::Remove), ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    match sampler(&hg, config).sample_view(&hg, &[[0.0; 3]], &mut rng) {
        Err(Error::EmptyView { attempts }) => assert_eq!(attempts, 11),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn fixed_seed_fixes_the_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hg = random_hypergraph(&mut rng, 20, 12, 0.3, &[]);
    let alpha: Vec<[f64; 3]> = (0..12).map(|e| [0.1 * e as f64, 0.0, -0.2]).collect();
    let s = sampler(&hg, AugmentConfig::default());
    let a = s.sample_pair(&hg, &alpha, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let b = s.sample_pair(&hg, &alpha, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.debug_json(), b.debug_json());
    assert_ne!(a.a, a.b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn views_only_delete_incidences(seed in 0u64..10_000, n in 2usize..16, m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hg = random_hypergraph(&mut rng, n, m, 0.4, &[]);
        let alpha: Vec<[f64; 3]> = (0..m).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let config = AugmentConfig { max_resamples: 50, ..Default::default() };
        if let Ok(pair) = sampler(&hg, config).sample_pair(&hg, &alpha, &mut rng) {
            for view in [&pair.a, &pair.b] {
                prop_assert_eq!(view.hypergraph.node_count(), n);
                for (i, &e) in view.edge_ids.iter().enumerate() {
                    prop_assert!(view.ops[e] != EdgeOp::Remove);
                    for &v in view.hypergraph.nodes_of_edge(i) {
                        prop_assert!(hg.contains(v, e));
                        prop_assert!(!view.node_mask[v]);
                    }
                    if view.ops[e] == EdgeOp::Preserve {
                        let expected: Vec<usize> =
                            hg.nodes_of_edge(e).iter().copied().filter(|&v| !view.node_mask[v]).collect();
                        prop_assert_eq!(view.hypergraph.nodes_of_edge(i), expected.as_slice());
                    }
                }
            }
        }
    }
}

#[test]
fn straight_through_gates_are_unit_with_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hg = random_hypergraph(&mut rng, 8, 5, 0.5, &[]);
    let mut store = ParamStore::<f64>::new();
    let aug = EdgeAugmentor::new(&mut store, 4, &mut rng).unwrap();
    let x_e = Tensor::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let alpha = aug.logits(&store, &x_e).unwrap();
    let config = AugmentConfig { masking: MaskingPolicy { p_node: 0.0, ..Default::default() }, ..Default::default() };
    let view = sampler(&hg, config).sample_view(&hg, &alpha, &mut rng).unwrap();
    let mut g = Graph::new();
    let gates = aug.gates(&mut g, &store, &x_e, &view, 0.8).unwrap();
    assert_eq!(g.value(gates).rows(), view.edge_ids.len());
    assert!(g.value(gates).data().iter().all(|&x| (x - 1.0).abs() < 1e-12));

    let weights: Vec<f64> = (0..view.edge_ids.len()).map(|i| 1.0 + i as f64).collect();
    let w = g.constant(Tensor::from_vec(weights.len(), 1, weights.clone()).unwrap()).unwrap();
    let prod = g.mul(gates, w).unwrap();
    let loss = g.sum(prod).unwrap();
    store.zero_grad();
    g.backward(loss, &mut store).unwrap();
    let gate_grad = store.grad(aug.weight()).clone();
    assert!(gate_grad.data().iter().any(|&x| x != 0.0));

    // d(p / p0) = d log p at p = p0: compare against the log-probability of
    // the chosen operation, itself checked by finite differences.
    let picks: std::sync::Arc<[(usize, usize)]> = view.edge_ids.iter().map(|&e| (e, view.ops[e].index())).collect();
    let err = gradient_check(&mut store, 1e-6, 12, &mut rng, |g, s| {
        let x = g.constant(x_e.clone())?;
        let wv = g.param(s, aug.weight())?;
        let a = g.matmul(x, wv)?;
        let noise = g.constant(Tensor::from_vec(5, 3, view.noise.iter().flatten().copied().collect())?)?;
        let logits = g.add(a, noise)?;
        let scaled = g.scale(logits, 1.0 / 0.8)?;
        let logp = g.row_log_softmax(scaled)?;
        let chosen = g.pick(logp, picks.clone())?;
        let w = g.constant(Tensor::from_vec(weights.len(), 1, weights.clone())?)?;
        let prod = g.mul(chosen, w)?;
        g.sum(prod)
    })
    .unwrap();
    assert!(err < 1e-6);
    for (a, b) in gate_grad.data().iter().zip(store.grad(aug.weight()).data()) {
        assert!((a - b).abs() < 1e-10);
    }
}
