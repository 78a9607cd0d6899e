use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::augment::{EdgeOp, MaskingPolicy};
use crate::numerics::gradient_check;
use crate::testutil::random_hypergraph;

const ORTHO_PAIR: f64 = 0.313_261_687_518_222_8; // −ln(e / (e + 1))

fn rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn constant(g: &mut Graph, r: &[Vec<f64>]) -> Var {
    g.constant(Tensor::from_rows(r).unwrap()).unwrap()
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

#[test]
fn pair_loss_hand_values() {
    let x = vec![1.0, 2.0, -0.5];
    assert_eq!(contrastive_pair(&x, 0, &[vec![0.3, 0.1, 0.0]], 0.5).unwrap(), 0.0);
    let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let l = contrastive_pair(&[1.0, 1.0], 0, &c, 0.7).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-15);
    assert!(matches!(contrastive_pair(&[0.0, 0.0], 0, &c, 1.0), Err(Error::ZeroVector(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let cands = rows(&mut rng, 5, 4);
        let x = rows(&mut rng, 1, 4).remove(0);
        assert!(contrastive_pair(&x, rng.random_range(0..5), &cands, 0.3).unwrap() >= 0.0);
    }
}

#[test]
fn info_nce_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let anchors = rows(&mut rng, 4, 6);
    let cands = rows(&mut rng, 7, 6);
    let pairs: Vec<(usize, usize)> = vec![(0, 3), (1, 1), (3, 6), (2, 0), (0, 5)];
    let expected = pairs.iter().map(|&(r, c)| contrastive_pair(&anchors[r], c, &cands, 0.4).unwrap()).sum::<f64>()
        / pairs.len() as f64;
    let mut g = Graph::new();
    let (a, c) = (constant(&mut g, &anchors), constant(&mut g, &cands));
    let l = info_nce(&mut g, a, c, pairs.into(), 0.4).unwrap();
    assert!((scalar(&g, l) - expected).abs() < 1e-12);
}

#[test]
fn sim_loss_examples() {
    let d = 32;
    let mut a = vec![vec![0.0; d], vec![0.5; d]];
    let b = a.clone();
    a[0][0] = 1.0;
    let mut g = Graph::new();
    let (va, vb) = (constant(&mut g, &a), constant(&mut g, &b));
    let l = loss_sim(&mut g, va, vb).unwrap();
    assert!((scalar(&g, l) - 0.015625).abs() < 1e-15);
    let same = loss_sim(&mut g, vb, vb).unwrap();
    assert_eq!(scalar(&g, same), 0.0);
    let (sa, sb) = (g.scale(va, 3.0).unwrap(), g.scale(vb, 3.0).unwrap());
    let scaled = loss_sim(&mut g, sa, sb).unwrap();
    assert!((scalar(&g, scaled) - 9.0 * scalar(&g, l)).abs() < 1e-14);
    let empty = constant(&mut g, &[]);
    assert!(matches!(loss_sim(&mut g, empty, empty), Err(Error::DisjointViews(_))));
}

#[test]
fn orthonormal_tables_give_the_two_term_value() {
    let e = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
    let mut g = Graph::new();
    let (a, b) = (constant(&mut g, &e), constant(&mut g, &e));
    let hyper = loss_hyper(&mut g, a, b, 1.0).unwrap();
    let sym = loss_symmetric(&mut g, a, b, 1.0).unwrap();
    assert!((scalar(&g, hyper) - ORTHO_PAIR).abs() < 1e-12);
    assert!((scalar(&g, sym) - ORTHO_PAIR).abs() < 1e-12);
    let (a1, b1) = (constant(&mut g, &e[..1]), constant(&mut g, &e[1..]));
    let single = loss_hyper(&mut g, a1, b1, 1.0).unwrap();
    assert_eq!(scalar(&g, single), 0.0);
    let single = loss_symmetric(&mut g, a1, b1, 1.0).unwrap();
    assert_eq!(scalar(&g, single), 0.0);
}

#[test]
fn symmetric_edge_loss_averages_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (ea, eb) = (rows(&mut rng, 5, 4), rows(&mut rng, 5, 4));
        let mut g = Graph::new();
        let (a, b) = (constant(&mut g, &ea), constant(&mut g, &eb));
        let ab = loss_hyper(&mut g, a, b, 0.5).unwrap();
        let ba = loss_hyper(&mut g, b, a, 0.5).unwrap();
        let e = loss_symmetric(&mut g, a, b, 0.5).unwrap();
        assert!((scalar(&g, e) - 0.5 * (scalar(&g, ab) + scalar(&g, ba))).abs() < 1e-14);
        let order = [3, 1, 4, 0, 2];
        let pa: Vec<Vec<f64>> = order.iter().map(|&i| ea[i].clone()).collect();
        let pb: Vec<Vec<f64>> = order.iter().map(|&i| eb[i].clone()).collect();
        let (pa, pb) = (constant(&mut g, &pa), constant(&mut g, &pb));
        let permuted = loss_hyper(&mut g, pa, pb, 0.5).unwrap();
        assert!((scalar(&g, permuted) - scalar(&g, ab)).abs() < 1e-14);
    }
}

fn membership_oracle(na: &[Vec<f64>], nb: &[Vec<f64>], ea: &[Vec<f64>], eb: &[Vec<f64>], m: &[(usize, usize)], tau: f64) -> f64 {
    let mut s = 0.0;
    for &(v, e) in m {
        s += contrastive_pair(&na[v], e, eb, tau).unwrap() + contrastive_pair(&nb[v], e, ea, tau).unwrap();
    }
    s / (2 * m.len()) as f64
}

fn membership(na: &[Vec<f64>], nb: &[Vec<f64>], ea: &[Vec<f64>], eb: &[Vec<f64>], m: &[(usize, usize)], tau: f64) -> f64 {
    let mut g = Graph::new();
    let n = (constant(&mut g, na), constant(&mut g, nb));
    let e = (constant(&mut g, ea), constant(&mut g, eb));
    let l = loss_membership(&mut g, n, e, m.into(), tau).unwrap();
    scalar(&g, l)
}

#[test]
fn membership_loss_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (na, nb, ea, eb) = (rows(&mut rng, 3, 4), rows(&mut rng, 3, 4), rows(&mut rng, 2, 4), rows(&mut rng, 2, 4));
    let m = [(0, 0), (1, 0), (1, 1), (2, 1)];
    let value = membership(&na, &nb, &ea, &eb, &m, 0.5);
    assert!((value - membership_oracle(&na, &nb, &ea, &eb, &m, 0.5)).abs() < 1e-12);

    // Listing every membership twice leaves the mean unchanged.
    let doubled: Vec<(usize, usize)> = m.iter().chain(m.iter()).copied().collect();
    assert!((membership(&na, &nb, &ea, &eb, &doubled, 0.5) - value).abs() < 1e-12);

    // A disjoint copy of the hypergraph with copied embeddings doubles every
    // candidate pool, positive included, so each term rises by exactly ln 2.
    let dup = |t: &[Vec<f64>]| t.iter().chain(t.iter()).cloned().collect::<Vec<_>>();
    let copied: Vec<(usize, usize)> = m.iter().copied().chain(m.iter().map(|&(v, e)| (v + 3, e + 2))).collect();
    let (dna, dnb, dea, deb) = (dup(&na), dup(&nb), dup(&ea), dup(&eb));
    let dup_value = membership(&dna, &dnb, &dea, &deb, &copied, 0.5);
    assert!((dup_value - membership_oracle(&dna, &dnb, &dea, &deb, &copied, 0.5)).abs() < 1e-12);
    assert!((dup_value - value - 2f64.ln()).abs() < 1e-12);

    let one = vec![vec![0.2, 0.9, -0.1, 0.4]];
    assert_eq!(membership(&one, &one, &one, &one, &[(0, 0)], 0.5), 0.0);
}

fn random_rotation(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

fn rotate(t: &[Vec<f64>], r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    t.iter().map(|row| (0..r.len()).map(|j| row.iter().zip(r).map(|(x, rr)| x * rr[j]).sum()).collect()).collect()
}

fn all_losses(na: &[Vec<f64>], nb: &[Vec<f64>], ea: &[Vec<f64>], eb: &[Vec<f64>], align: &Alignment) -> LossReport {
    let mut g = Graph::new();
    let a = ViewEncoding { nodes: constant(&mut g, na), edges: constant(&mut g, ea) };
    let b = ViewEncoding { nodes: constant(&mut g, nb), edges: constant(&mut g, eb) };
    let terms = contrastive_losses(&mut g, a, b, align, &ContrastiveConfig::default()).unwrap();
    LossReport::read(&g, &terms)
}

#[test]
fn losses_are_rotation_invariant_and_sum_to_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let align = Alignment {
        nodes: vec![0, 2, 3, 5],
        edges: vec![(0, 1), (2, 0), (3, 3)],
        memberships: vec![(0, 0), (1, 0), (2, 1), (3, 2), (1, 2)],
    };
    for _ in 0..5 {
        let d = 6;
        let (na, nb, ea, eb) = (rows(&mut rng, 6, d), rows(&mut rng, 6, d), rows(&mut rng, 4, d), rows(&mut rng, 4, d));
        let base = all_losses(&na, &nb, &ea, &eb, &align);
        let sum = base.sim + base.hyper + base.node + base.edge + base.membership;
        assert!((base.total - sum).abs() < 1e-12);
        assert!(base.hyper >= 0.0 && base.node >= 0.0 && base.edge >= 0.0 && base.membership >= 0.0);
        let r = random_rotation(&mut rng, d);
        let rot = all_losses(&rotate(&na, &r), &rotate(&nb, &r), &rotate(&ea, &r), &rotate(&eb, &r), &align);
        for ((name, x), (_, y)) in base.named().iter().zip(rot.named()) {
            assert!((x - y).abs() < 1e-9, "{name}: {x} vs {y}");
        }
    }
}

fn frozen_pair(seed: u64, n: usize, m: usize) -> (Hypergraph, ViewPair) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hg = random_hypergraph(&mut rng, n, m, 0.6, &[]);
    let config = AugmentConfig { masking: MaskingPolicy { p_node: 0.2, ..Default::default() }, ..Default::default() };
    let alpha = vec![[1.0, -1.0, 0.0]; m];
    let pair = ViewSampler::new(&hg, config).unwrap().sample_pair(&hg, &alpha, &mut rng).unwrap();
    (hg, pair)
}

#[test]
fn alignment_counts_surviving_incidences() {
    for seed in 0..20 {
        let (hg, pair) = frozen_pair(seed, 10, 6);
        let align = Alignment::between(&pair.a, &pair.b);
        let mut k = 0;
        for e in 0..hg.edge_count() {
            let (Some(ia), Some(ib)) =
                (pair.a.edge_ids.iter().position(|&x| x == e), pair.b.edge_ids.iter().position(|&x| x == e))
            else {
                continue;
            };
            for &v in hg.nodes_of_edge(e) {
                k += (pair.a.hypergraph.contains(v, ia) && pair.b.hypergraph.contains(v, ib)) as usize;
            }
        }
        assert_eq!(align.memberships.len(), k);
        for &v in &align.nodes {
            assert!(pair.a.node_present(v) && pair.b.node_present(v));
        }
    }
}

#[test]
fn total_loss_gradient_check() {
    let (hg, pair) = frozen_pair(5, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = EncoderConfig { d_hi: 8, heads: 2, layers: 2, ..Default::default() };
    let mut state = EncoderState::<f64>::init(cfg, hg.node_labels().to_vec(), &mut rng).unwrap();
    let encoder = state.encoder.clone();
    let align = Alignment::between(&pair.a, &pair.b);
    assert!(!align.memberships.is_empty());
    let err = gradient_check(&mut state.params, 1e-6, 150, &mut rng, |g, s| {
        let st = EncoderState { encoder: encoder.clone(), params: s.clone() };
        let terms = encode_pair(g, &st, None, &pair, &align, &ContrastiveConfig::default(), None)?;
        Ok(terms.total)
    })
    .unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

fn tiny_config() -> UnsupervisedConfig {
    UnsupervisedConfig {
        encoder: EncoderConfig { d_hi: 8, heads: 2, layers: 1, ..Default::default() },
        epochs: 4,
        batch_size: Some(6),
        optimizer: OptimizerConfig::adam(1e-2),
        ..Default::default()
    }
}

#[test]
fn training_is_finite_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hg = random_hypergraph(&mut rng, 15, 16, 0.3, &[]);
    let config = tiny_config();
    let (a, run_a) = fit_unsupervised::<f64>(&hg, &config, 11).unwrap();
    let (b, run_b) = fit_unsupervised::<f64>(&hg, &config, 11).unwrap();
    assert_eq!(run_a.loss_trace.len(), 4);
    assert!(run_a.loss_trace.iter().all(|l| l.is_finite()));
    assert_eq!(run_a, run_b);
    for (p, q) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.value, q.value);
    }
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.save(dir_a.path(), serde_json::Value::Null).unwrap();
    b.save(dir_b.path(), serde_json::Value::Null).unwrap();
    for f in ["checkpoint.json", "checkpoint.bin"] {
        assert_eq!(std::fs::read(dir_a.path().join(f)).unwrap(), std::fs::read(dir_b.path().join(f)).unwrap());
    }
    let (c, _) = fit_unsupervised::<f64>(&hg, &config, 12).unwrap();
    assert_ne!(c.params.iter().next().unwrap().value, a.params.iter().next().unwrap().value);
}

#[test]
fn identity_augmentation_has_zero_alignment_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hg = random_hypergraph(&mut rng, 12, 10, 0.3, &[]);
    let mut config = tiny_config();
    config.augment.masking.p_node = 0.0;
    config.augment.fixed_op = Some(EdgeOp::Preserve);
    let (_, run) = fit_unsupervised::<f64>(&hg, &config, 3).unwrap();
    assert!(run.component_traces["sim"].iter().all(|&s| s == 0.0));
    assert!(run.component_traces["total"].iter().all(|&s| s > 0.0));
}

#[test]
fn learnable_augmentor_receives_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hg = random_hypergraph(&mut rng, 12, 10, 0.3, &[]);
    let mut config = tiny_config();
    for (learnable, moves) in [(false, false), (true, true)] {
        config.augment.learnable = learnable;
        let (state, _) = fit_unsupervised::<f64>(&hg, &config, 4).unwrap();
        let mut init = ParamStoreProbe::init(&hg, &config, 4);
        let w = init.take("augmentor.w");
        assert_eq!(state.params.value_by_name("augmentor.w").unwrap() != &w, moves);
    }
}

/// Recreates the initial parameters of a run.
struct ParamStoreProbe(crate::numerics::ParamStore<f64>);

impl ParamStoreProbe {
    fn init(hg: &Hypergraph, config: &UnsupervisedConfig, seed: u64) -> Self {
        let mut rng = substream(seed, "encoder-init");
        let mut state = EncoderState::<f64>::init(config.encoder, hg.node_labels().to_vec(), &mut rng).unwrap();
        EdgeAugmentor::new(&mut state.params, config.encoder.d_hi, &mut rng).unwrap();
        Self(state.params)
    }

    fn take(&mut self, name: &str) -> Tensor {
        self.0.value_by_name(name).unwrap().clone()
    }
}
