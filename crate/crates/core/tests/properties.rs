use std::collections::{BTreeMap, BTreeSet};

use dccl::dataset::{self, EmbeddingSet, Label, SplitSpec};
use dccl::encoder::{self, EncoderConfig, EncoderGrads, EncoderParams, OptimState};
use dccl::eval::hungarian_accuracy;
use dccl::infomap::{self, ConceptionAssignment, MapEquationState};
use dccl::losses;
use dccl::memory::ConceptionMemory;
use dccl::simgraph::{build_consolidated_graph, GraphConfig, SimilarityGraph};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-1.0f64..1.0, rows * cols).prop_filter_map("zero row", move |v| {
        let m = Array2::from_shape_vec((rows, cols), v).unwrap();
        m.rows().into_iter().all(|r| r.dot(&r) > 1e-6).then_some(m)
    })
}

fn unit(mut m: Array2<f64>) -> Array2<f64> {
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

fn labels_strategy(n: usize) -> impl Strategy<Value = Vec<Label>> {
    proptest::collection::vec(prop_oneof![Just(None), (0usize..3).prop_map(Some)], n)
        .prop_map(|v| v.into_iter().map(|c| c.map_or(Label::Unlabeled, Label::Known)).collect())
}

fn edge_set(g: &SimilarityGraph) -> BTreeMap<(usize, usize), f64> {
    g.undirected_edges().map(|e| ((e.i, e.j), e.weight)).collect()
}

fn random_graph(seed: u64, n: usize) -> SimilarityGraph {
    let mut r = dccl::rng::seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(0.4) {
                edges.push((i, j, r.random_range(0.05..1.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1, 1.0));
    }
    SimilarityGraph::from_undirected(n, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_is_seeded_and_counts_follow_the_ceiling_rule(
        classes in 2usize..7, per_class in 1usize..12, class_frac in 0.1f64..0.9, inst_frac in 0.1f64..0.9, seed in 0u64..1000
    ) {
        let n = classes * per_class;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let emb = EmbeddingSet::new(Array2::from_shape_fn((n, 2), |(i, j)| (i + j + 1) as f64)).unwrap();
        let spec = SplitSpec { labeled_class_fraction: class_frac, labeled_instance_fraction: inst_frac, seed };
        let a = dataset::make_gcd_split(emb.clone(), &labels, &spec);
        let b = dataset::make_gcd_split(emb, &labels, &spec);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a.labels, &b.labels);
                let expected: usize = a.labeled_classes.iter().map(|_| (inst_frac * per_class as f64 - 1e-9).ceil() as usize).sum();
                prop_assert_eq!(a.num_labeled(), expected);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "split is not deterministic"),
        }
    }

    #[test]
    fn graph_respects_label_rules(x in matrix(9, 3), labels in labels_strategy(9), tau in 0.3f64..0.95, k in 1usize..8) {
        let cfg = GraphConfig { tau_f: tau, knn_k: k };
        let g = build_consolidated_graph(&labels, x.view(), &cfg).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i == j { continue; }
                match (labels[i], labels[j]) {
                    (Label::Known(a), Label::Known(b)) if a == b => prop_assert!(g.weight(i, j).is_some()),
                    (Label::Known(_), Label::Known(_)) => prop_assert!(g.weight(i, j).is_none()),
                    _ => if let Some(w) = g.weight(i, j) { prop_assert!(w > tau) },
                }
                prop_assert_eq!(g.weight(i, j), g.weight(j, i));
            }
        }
    }

    #[test]
    fn graph_is_ordering_invariant(x in matrix(8, 4), labels in labels_strategy(8), seed in 0u64..1000) {
        let mut perm: Vec<usize> = (0..8).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut dccl::rng::seeded(seed));
        let xp = x.select(ndarray::Axis(0), &perm);
        let lp: Vec<Label> = perm.iter().map(|&p| labels[p]).collect();
        let cfg = GraphConfig { tau_f: 0.6, knn_k: 3 };
        let g = build_consolidated_graph(&labels, x.view(), &cfg).unwrap();
        let gp = build_consolidated_graph(&lp, xp.view(), &cfg).unwrap();
        let mapped: BTreeMap<(usize, usize), f64> = edge_set(&gp)
            .into_iter()
            .map(|((a, b), w)| {
                let (i, j) = (perm[a], perm[b]);
                ((i.min(j), i.max(j)), w)
            })
            .collect();
        let original = edge_set(&g);
        prop_assert_eq!(original.keys().collect::<Vec<_>>(), mapped.keys().collect::<Vec<_>>());
        for (key, w) in &original {
            prop_assert!((w - mapped[key]).abs() < 1e-12);
        }
    }

    #[test]
    fn codelength_ignores_labels_of_modules_and_nodes(seed in 0u64..10_000, n in 3usize..9) {
        let g = random_graph(seed, n);
        let mut r = dccl::rng::seeded(seed + 1);
        let part: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let base = MapEquationState::evaluate(&g, &part).unwrap().codelength;
        let renamed: Vec<usize> = part.iter().map(|&m| 7 - m).collect();
        prop_assert!((MapEquationState::evaluate(&g, &renamed).unwrap().codelength - base).abs() < 1e-12);

        let perm: Vec<usize> = (0..n).rev().collect();
        let edges = g.undirected_edges().map(|e| (perm[e.i], perm[e.j], e.weight));
        let gp = SimilarityGraph::from_undirected(n, edges.collect::<Vec<_>>()).unwrap();
        let mut part_p = vec![0; n];
        for i in 0..n {
            part_p[perm[i]] = part[i];
        }
        prop_assert!((MapEquationState::evaluate(&gp, &part_p).unwrap().codelength - base).abs() < 1e-12);
    }

    #[test]
    fn clustering_beats_trivial_partitions_and_only_improves(seed in 0u64..10_000, n in 2usize..30) {
        let g = random_graph(seed, n);
        let mut trace = Vec::new();
        let p = infomap::cluster_traced(&g, seed, &mut |l| trace.push(l));
        let l = infomap::codelength(&g, &p).unwrap();
        let one = infomap::codelength(&g, &ConceptionAssignment::from_modules(&vec![0; n])).unwrap();
        let single = infomap::codelength(&g, &ConceptionAssignment::singletons(n)).unwrap();
        prop_assert!(l <= one.min(single) + 1e-9);
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", trace);
    }

    #[test]
    fn memory_rows_stay_unit_length(x in matrix(6, 3), updates in proptest::collection::vec((0usize..3, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..60), eta in 0.0f64..0.99) {
        let assignment = ConceptionAssignment::from_modules(&[0, 0, 1, 1, 2, 2]);
        let mut mem = match ConceptionMemory::initialize(x.view(), &assignment, eta) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        for (c, a, b, d) in updates {
            let v = ndarray::array![a, b, d];
            if v.dot(&v) < 1e-6 { continue; }
            let v = &v / v.dot(&v).sqrt();
            mem.momentum_update(v.view(), c).unwrap();
        }
        for r in mem.reps().rows() {
            let n = r.dot(&r).sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
        }
        prop_assert_eq!(mem.reps().dim(), (3, 3));
    }

    #[test]
    fn dispersion_ignores_the_order_of_sampled_conceptions(x in matrix(6, 4), tau in 0.0f64..0.9) {
        let reps = unit(x);
        let ids = [0, 0, 1, 1, 2, 2];
        let a = losses::dispersion_loss(reps.view(), &ids, &[0, 1, 2], tau, true).unwrap();
        let b = losses::dispersion_loss(reps.view(), &ids, &[2, 0, 1], tau, true).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!((&a.grad - &b.grad).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn instance_loss_ignores_batch_order(x in matrix(10, 4), labels in labels_strategy(5), seed in 0u64..1000) {
        let p = unit(x);
        let mut perm: Vec<usize> = (0..5).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut dccl::rng::seeded(seed));
        let rows: Vec<usize> = perm.iter().copied().chain(perm.iter().map(|&i| i + 5)).collect();
        let pp = p.select(ndarray::Axis(0), &rows);
        let lp: Vec<Label> = perm.iter().map(|&i| labels[i]).collect();
        let a = losses::instance_loss(p.view(), &labels, 0.35, 0.07, 0.05).unwrap();
        let b = losses::instance_loss(pp.view(), &lp, 0.35, 0.07, 0.05).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_cluster_names_and_splits_by_weight(
        pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..80), shift in 1usize..50
    ) {
        let predicted: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let old: BTreeSet<usize> = [0, 1, 2].into();
        let a = hungarian_accuracy(&predicted, &truth, &old).unwrap();
        let renamed: Vec<usize> = predicted.iter().map(|&p| (p * 7 + shift) % 101).collect();
        let b = hungarian_accuracy(&renamed, &truth, &old).unwrap();
        prop_assert_eq!(a.acc_all, b.acc_all);
        let n = (a.num_old + a.num_new) as f64;
        let weighted = (a.num_old as f64 * a.acc_old + a.num_new as f64 * a.acc_new) / n;
        prop_assert!((weighted - a.acc_all).abs() < 1e-12);
        if a.num_old > 0 && a.num_new > 0 {
            prop_assert!(a.acc_all >= a.acc_old.min(a.acc_new) - 1e-12);
            prop_assert!(a.acc_all <= a.acc_old.max(a.acc_new) + 1e-12);
        }
        for v in [a.acc_all, a.acc_old, a.acc_new] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let mut seen = BTreeSet::new();
        prop_assert!(a.matching.iter().all(|&(_, class)| seen.insert(class)));
    }

    #[test]
    fn binary_embeddings_round_trip(x in matrix(5, 7)) {
        let set = EmbeddingSet::new(x).unwrap();
        let mut buf = Vec::new();
        dataset::write_binary(&mut buf, &set).unwrap();
        prop_assert_eq!(buf.len(), 16 + 4 * 5 * 7);
        let back = dataset::read_binary(&mut buf.as_slice()).unwrap();
        for (a, b) in set.data().iter().zip(back.data().iter()) {
            prop_assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn labels_round_trip(labels in labels_strategy(20)) {
        let text = dataset::format_labels(&labels);
        prop_assert_eq!(dataset::parse_labels(&text, 20).unwrap(), labels);
    }
}

#[test]
fn small_sgd_step_descends() {
    let cfg = EncoderConfig {
        input_dim: 6,
        extractor_hidden: vec![8],
        feature_dim: 5,
        head_hidden: vec![6],
        projection_dim: 7,
    };
    let loss_cfg = losses::LossConfig::default();
    for trial in 0..20u64 {
        let mut r = dccl::rng::seeded(trial);
        let mut params = EncoderParams::init(&cfg, trial).unwrap();
        let views = Array2::from_shape_fn((8, 6), |_| r.random_range(-1.0..1.0));
        let conc = Array2::from_shape_fn((6, 6), |_| r.random_range(-1.0..1.0));
        let ids = [0, 0, 1, 1, 2, 2];
        let protos = unit(Array2::from_shape_fn((3, 5), |_| r.random_range(-1.0..1.0)));
        let labels = [Label::Known(0), Label::Unlabeled, Label::Known(0), Label::Unlabeled];
        let total = |p: &EncoderParams| {
            let a = encoder::forward(p, views.view()).unwrap();
            let b = encoder::forward(p, conc.view()).unwrap();
            let li = losses::instance_loss(a.projections.view(), &labels, loss_cfg.lambda, loss_cfg.tau_s, loss_cfg.tau_l).unwrap();
            let lc = losses::conception_loss(b.features.view(), &ids, protos.view(), loss_cfg.tau_c, false).unwrap();
            let ld = losses::dispersion_loss(b.features.view(), &ids, &[0, 1, 2], loss_cfg.tau_m, true).unwrap();
            let t = losses::total_loss(Some(&li), Some(&lc), Some(&ld), loss_cfg.alpha, loss_cfg.beta).unwrap();
            let mut g = EncoderGrads::zeros_like(p);
            g.accumulate(&encoder::backward(p, &a, None, t.grad_projections.as_ref().map(|g| g.view())).unwrap());
            g.accumulate(&encoder::backward(p, &b, t.grad_features.as_ref().map(|g| g.view()), None).unwrap());
            (t.value, g)
        };
        let (before, grads) = total(&params);
        let mut opt = OptimState::new(&params, 1e-4, 1e-4, 0.0, 1);
        encoder::sgd_step(&mut params, &grads, &mut opt).unwrap();
        let (after, _) = total(&params);
        assert!(after < before, "trial {trial}: {before} -> {after}");
    }
}
