use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::gradient_check;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

fn random_hypergraph(rng: &mut impl Rng, n: usize, m: usize, isolated: &[usize]) -> Hypergraph {
    let edges = (0..m)
        .map(|e| {
            let mut members: Vec<usize> =
                (0..n).filter(|v| !isolated.contains(v) && rng.random_bool(0.3)).collect();
            if members.is_empty() {
                members.push((0..n).find(|v| !isolated.contains(v)).unwrap());
            }
            (format!("p{e}"), members)
        })
        .collect();
    Hypergraph::from_edge_lists(labels(n), edges).unwrap()
}

fn small_config() -> EncoderConfig {
    EncoderConfig { d_hi: 8, heads: 2, layers: 2, ..Default::default() }
}

// Straight-line reference over plain vectors and a dense incidence matrix.
mod oracle {
    use super::*;

    pub type Mat = Vec<Vec<f64>>;

    fn mat(t: &Tensor) -> Mat {
        t.to_rows_f64()
    }

    fn mm(a: &Mat, b: &Mat) -> Mat {
        a.iter()
            .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
            .collect()
    }

    fn block(store: &ParamStore, prefix: &str, cfg: &EncoderConfig, xs: &Mat) -> Vec<f64> {
        let p = |s: &str| mat(store.value_by_name(&format!("{prefix}.{s}")).unwrap());
        let dk = cfg.d_k();
        let mut concat: Mat = vec![Vec::new(); xs.len()];
        for h in 0..cfg.heads {
            let q = mm(xs, &p(&format!("head{h}.wq")));
            let k = mm(xs, &p(&format!("head{h}.wk")));
            let v = mm(xs, &p(&format!("head{h}.wv")));
            for i in 0..xs.len() {
                let scores: Vec<f64> = (0..xs.len())
                    .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = ex.iter().sum();
                for c in 0..dk {
                    concat[i].push((0..xs.len()).map(|j| ex[j] / z * v[j][c]).sum());
                }
            }
        }
        let proj = mm(&concat, &p("out.w"));
        let (b, gamma, beta) = (&p("out.b")[0], &p("ln.gamma")[0], &p("ln.beta")[0]);
        let d = cfg.d_hi;
        let mut pooled = vec![0.0; d];
        for i in 0..xs.len() {
            let r: Vec<f64> = (0..d).map(|c| xs[i][c] + proj[i][c] + b[c]).collect();
            let mu = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d as f64;
            for c in 0..d {
                pooled[c] += ((r[c] - mu) / (var + cfg.layer_norm_eps).sqrt() * gamma[c] + beta[c]) / xs.len() as f64;
            }
        }
        pooled
    }

    pub fn forward(store: &ParamStore, cfg: &EncoderConfig, hg: &Hypergraph) -> (Mat, Mat) {
        let (n, m) = (hg.node_count(), hg.edge_count());
        let inc: Vec<Vec<bool>> = (0..n).map(|v| (0..m).map(|e| hg.contains(v, e)).collect()).collect();
        let mut xv = mat(store.value_by_name("encoder.node_table").unwrap());
        let mut xe = Vec::new();
        for l in 0..cfg.layers {
            xe = (0..m)
                .map(|e| {
                    let xs: Mat = (0..n).filter(|&v| inc[v][e]).map(|v| xv[v].clone()).collect();
                    block(store, &format!("encoder.layer{l}.v2e"), cfg, &xs)
                })
                .collect();
            xv = (0..n)
                .map(|v| {
                    if !inc[v].iter().any(|&b| b) {
                        return xv[v].clone();
                    }
                    let mut xs = vec![xv[v].clone()];
                    xs.extend((0..m).filter(|&e| inc[v][e]).map(|e| xe[e].clone()));
                    block(store, &format!("encoder.layer{l}.e2v"), cfg, &xs)
                })
                .collect();
        }
        (xv, xe)
    }
}

fn max_abs_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.to_rows_f64()
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn forward_matches_dense_reference() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hg = random_hypergraph(&mut rng, 20, 8, &[3, 17]);
        let cfg = EncoderConfig { d_hi: 12, heads: 3, layers: 2, ..Default::default() };
        let state = EncoderState::<f64>::init(cfg, labels(20), &mut rng).unwrap();
        let (nodes, edges) = state.embed(&hg).unwrap();
        let (rn, re) = oracle::forward(&state.params, &cfg, &hg);
        assert!(max_abs_diff(&edges, &re) < 1e-9);
        assert!(max_abs_diff(&nodes, &rn) < 1e-9);
        assert_eq!(state.embed_edges(&hg).unwrap(), edges);
    }
}

#[test]
fn isolated_nodes_keep_their_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hg = random_hypergraph(&mut rng, 10, 4, &[0, 9]);
    let state = EncoderState::<f64>::init(small_config(), labels(10), &mut rng).unwrap();
    let (nodes, _) = state.embed(&hg).unwrap();
    let table = state.params.value(state.encoder.node_table());
    assert_eq!(nodes.row(0), table.row(0));
    assert_eq!(nodes.row(9), table.row(9));
    assert_ne!(nodes.row(1), table.row(1));
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hg = random_hypergraph(&mut rng, 9, 5, &[4]);
    let mut state = EncoderState::<f64>::init(small_config(), labels(9), &mut rng).unwrap();
    let (encoder, hg_ref) = (state.encoder.clone(), &hg);
    let weights: Vec<f64> = (0..(9 + 5) * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let err = gradient_check(&mut state.params, 1e-6, 200, &mut rng, |g, s| {
        let out = encoder.forward(g, s, hg_ref, true, None)?;
        let both = g.concat_rows(&[out.nodes.unwrap(), out.edges])?;
        let w = g.constant(Tensor::from_vec(14, 8, weights.clone())?)?;
        let prod = g.mul(both, w)?;
        g.sum(prod)
    })
    .unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn node_relabelling_does_not_change_edge_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 12;
    let hg = random_hypergraph(&mut rng, n, 6, &[]);
    let state = EncoderState::<f64>::init(small_config(), labels(n), &mut rng).unwrap();
    let edges = state.embed_edges(&hg).unwrap();

    // perm[old] = new
    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    perm.swap(0, 5);
    let mut new_labels = vec![String::new(); n];
    for (old, &new) in perm.iter().enumerate() {
        new_labels[new] = hg.node_labels()[old].clone();
    }
    let permuted_edges = (0..hg.edge_count())
        .map(|e| (hg.edge_labels()[e].clone(), hg.nodes_of_edge(e).iter().map(|&v| perm[v]).collect()))
        .collect();
    let hg2 = Hypergraph::from_edge_lists(new_labels.clone(), permuted_edges).unwrap();
    let mut params = state.params.clone();
    let table = state.encoder.node_table();
    let old_table = state.params.value(table).clone();
    for (old, &new) in perm.iter().enumerate() {
        params.get_mut(table).value.row_mut(new).copy_from_slice(old_table.row(old));
    }
    let encoder = HypergraphEncoder::from_store(*state.encoder.config(), new_labels, &params).unwrap();
    let edges2 = EncoderState { encoder, params }.embed_edges(&hg2).unwrap();
    assert!(max_abs_diff(&edges, &edges2.to_rows_f64()) < 1e-12);
}

#[test]
fn edge_order_permutes_edge_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hg = random_hypergraph(&mut rng, 10, 6, &[]);
    let state = EncoderState::<f64>::init(small_config(), labels(10), &mut rng).unwrap();
    let edges = state.embed_edges(&hg).unwrap();
    let order = [3, 0, 5, 1, 4, 2];
    let reordered = hg.select_edges(&order);
    let edges2 = state.embed_edges(&reordered).unwrap();
    for (i, &e) in order.iter().enumerate() {
        for (a, b) in edges2.row(i).iter().zip(edges.row(e)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn set_attention_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = small_config();
    let state = EncoderState::<f64>::init(cfg, labels(4), &mut rng).unwrap();
    let block = &state.encoder.layers()[0].to_edge;
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
    let y = set_attention(&mut g, &state.params, block, x, &cfg).unwrap();
    let order = [4, 2, 0, 3, 1];
    let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let xs = g.constant(Tensor::from_rows(&shuffled).unwrap()).unwrap();
    let ys = set_attention(&mut g, &state.params, block, xs, &cfg).unwrap();
    for (i, &o) in order.iter().enumerate() {
        for (a, b) in g.value(ys).row(i).iter().zip(g.value(y).row(o)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let empty = g.constant(Tensor::zeros(0, 8)).unwrap();
    assert!(matches!(set_attention(&mut g, &state.params, block, empty, &cfg), Err(Error::EmptySet(_))));
}

#[test]
fn checkpoint_round_trip_reproduces_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let hg = random_hypergraph(&mut rng, 10, 5, &[]);
    let state = EncoderState::<f64>::init(small_config(), labels(10), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    state.save(dir.path(), serde_json::json!({"note": 1})).unwrap();
    let (loaded, extra) = EncoderState::<f64>::load(dir.path()).unwrap();
    assert_eq!(extra["note"], 1);
    assert_eq!(loaded.encoder, state.encoder);
    assert_eq!(loaded.embed_edges(&hg).unwrap(), state.embed_edges(&hg).unwrap());
}

#[test]
fn single_precision_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hg = random_hypergraph(&mut rng, 10, 5, &[]);
    let state = EncoderState::<f64>::init(small_config(), labels(10), &mut rng).unwrap();
    let single = EncoderState::<f32> {
        encoder: state.encoder.clone(),
        params: {
            let mut p = ParamStore::<f32>::new();
            for param in state.params.iter() {
                p.register(param.name.clone(), param.value.cast()).unwrap();
            }
            p
        },
    };
    let a = state.embed_edges(&hg).unwrap();
    let b = single.embed_edges(&hg).unwrap().cast::<f64>();
    assert!(max_abs_diff(&a, &b.to_rows_f64()) < 1e-4);
}

#[test]
fn patient_embedding_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hg = random_hypergraph(&mut rng, 6, 3, &[]);
    let state = EncoderState::<f64>::init(small_config(), labels(6), &mut rng).unwrap();
    let edges = state.embed_edges(&hg).unwrap();
    assert_eq!(patient_embedding(&edges, &hg, "p2").unwrap(), edges.row(2));
    assert!(matches!(patient_embedding(&edges, &hg, "nobody"), Err(Error::UnknownPatient(_))));
}

#[test]
fn config_validation() {
    assert!(EncoderConfig { d_hi: 3, heads: 4, ..Default::default() }.validate().is_err());
    assert!(EncoderConfig { layers: 0, ..Default::default() }.validate().is_err());
    assert!(EncoderConfig::default().validate().is_ok());
    assert_eq!(EncoderConfig::default().d_k(), 8);
}

#[test]
fn single_edge_single_layer_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = EncoderConfig { layers: 1, ..small_config() };
    let hg = Hypergraph::from_edge_lists(labels(3), vec![("p0".into(), vec![0, 2])]).unwrap();
    let state = EncoderState::<f64>::init(cfg, labels(3), &mut rng).unwrap();
    let table = state.params.value(state.encoder.node_table());
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[table.row(0).to_vec(), table.row(2).to_vec()]).unwrap()).unwrap();
    let rows = set_attention(&mut g, &state.params, &state.encoder.layers()[0].to_edge, x, &cfg).unwrap();
    let expected: Vec<f64> = (0..8).map(|c| (g.value(rows).get(0, c) + g.value(rows).get(1, c)) / 2.0).collect();
    let edges = state.embed_edges(&hg).unwrap();
    for (a, b) in edges.row(0).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn duplicate_patients_get_identical_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let hg = Hypergraph::from_edge_lists(
        labels(6),
        vec![("a".into(), vec![0, 1, 4]), ("b".into(), vec![2, 3]), ("a2".into(), vec![0, 1, 4])],
    )
    .unwrap();
    let state = EncoderState::<f64>::init(small_config(), labels(6), &mut rng).unwrap();
    let edges = state.embed_edges(&hg).unwrap();
    assert_eq!(edges.row(0), edges.row(2));
    assert_eq!(state.embed_edges(&hg).unwrap(), edges);
}

#[test]
fn pooled_set_output_ignores_member_order() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let cfg = small_config();
        let state = EncoderState::<f64>::init(cfg, labels(2), &mut rng).unwrap();
        let block = &state.encoder.layers()[1].to_node;
        let n = rng.random_range(1..=9);
        let table: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&table).unwrap()).unwrap();
        let pooled: Vec<Vec<f64>> = [(0..n).collect::<Vec<_>>(), order]
            .into_iter()
            .map(|members| {
                let sets = Arc::new(SetIndex::from_sets([members]));
                let rows = block.apply(&mut g, &state.params, x, &sets, &cfg, None).unwrap();
                let p = g.segment_mean(rows, sets).unwrap();
                g.value(p).row(0).to_vec()
            })
            .collect();
        for (a, b) in pooled[0].iter().zip(&pooled[1]) {
            assert!((a - b).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn information_travels_at_most_two_hops_per_layer() {
    // Path hypergraph 0-1-2-3-4-5 with edges {i, i+1}, plus a separate component {6, 7}.
    let mut edges: Vec<(String, Vec<usize>)> = (0..5).map(|i| (format!("p{i}"), vec![i, i + 1])).collect();
    edges.push(("q".into(), vec![6, 7]));
    let hg = Hypergraph::from_edge_lists(labels(8), edges).unwrap();
    for (layers, reachable) in [(1usize, 2usize), (2, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(layers as u64);
        let cfg = EncoderConfig { layers, ..small_config() };
        let mut state = EncoderState::<f64>::init(cfg, labels(8), &mut rng).unwrap();
        let mut g = Graph::new();
        let out = state.encoder.forward(&mut g, &state.params, &hg, false, None).unwrap();
        let first = g.pick(out.edges, (0..8).map(|c| (0, c)).collect()).unwrap();
        let w = g.constant(Tensor::from_vec(8, 1, (0..8).map(|c| 1.0 + c as f64).collect()).unwrap()).unwrap();
        let prod = g.mul(first, w).unwrap();
        let loss = g.sum(prod).unwrap();
        state.params.zero_grad();
        g.backward(loss, &mut state.params).unwrap();
        let grad = state.params.grad(state.encoder.node_table());
        for v in 0..8 {
            let touched = grad.row(v).iter().any(|&x| x != 0.0);
            assert_eq!(touched, v < reachable, "L={layers} node {v}");
        }
    }
}
