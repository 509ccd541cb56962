use proptest::prelude::*;
use spdhash_core::covpool::{pool_forward, SpectrumPolicy};
use spdhash_core::hashnet::{Parameters, RelaxedCode};
use spdhash_core::linalg::{spd_log_oracle, svd, sym, Matrix};
use spdhash_core::objective::{batch_objective, ObjectiveConfig};
use spdhash_core::retrieval::{hamming, mean_ap, Query, RetrievalIndex};
use spdhash_core::trainer::{sgd_step, SgdConfig};
use spdhash_core::{BinaryCode, Modality, ModelShape};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn code(len: usize) -> impl Strategy<Value = BinaryCode> {
    prop::collection::vec(any::<bool>(), len).prop_map(|b| BinaryCode::from_bits(&b))
}

/// Objective recomputed from its definition with plain loops.
fn brute_objective(codes: &[Vec<f64>], labels: &[u32], mods: &[Modality], cfg: &ObjectiveConfig) -> f64 {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let n = codes.len();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for u in 0..n {
        for v in 0..n {
            for w in 0..n {
                if labels[v] != labels[u] || labels[w] == labels[u] || v == u {
                    continue;
                }
                let term = if mods[v] != mods[u] && mods[w] != mods[u] {
                    0
                } else if mods[v] == mods[u] && mods[w] == mods[u] {
                    if mods[u] == Modality::Image { 1 } else { 2 }
                } else {
                    continue;
                };
                let l = (cfg.alpha + d2(&codes[u], &codes[v]) - d2(&codes[u], &codes[w])).max(0.0);
                sums[term] += l;
                counts[term] += 1;
            }
        }
    }
    let mean = |t: usize| if counts[t] == 0 { 0.0 } else { sums[t] / counts[t] as f64 };
    mean(0) + cfg.lambda1 * mean(1) + cfg.lambda2 * mean(2)
}

/// Smallest |alpha + d(u,v) - d(u,w)| over all triplets, so that finite
/// differences can stay clear of hinge kinks.
fn min_margin(codes: &[Vec<f64>], labels: &[u32], alpha: f64) -> f64 {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let n = codes.len();
    let mut best = f64::INFINITY;
    for u in 0..n {
        for v in 0..n {
            for w in 0..n {
                if v != u && labels[v] == labels[u] && labels[w] != labels[u] {
                    best = best.min((alpha + d2(&codes[u], &codes[v]) - d2(&codes[u], &codes[w])).abs());
                }
            }
        }
    }
    best
}

fn batch() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u32>, Vec<Modality>)> {
    (2usize..9, 1usize..6).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(prop::collection::vec(0.01f64..0.99, k), n),
            prop::collection::vec(0u32..3, n),
            prop::collection::vec(any::<bool>(), n)
                .prop_map(|b| b.into_iter().map(|v| if v { Modality::Image } else { Modality::Video }).collect()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamming_is_a_metric(a in code(70), b in code(70), c in code(70)) {
        let ab = hamming(&a, &b).unwrap();
        prop_assert_eq!(ab, hamming(&b, &a).unwrap());
        prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
    }

    #[test]
    fn sym_is_symmetric_and_idempotent(a in matrix(5, 5)) {
        let s = sym(&a).unwrap();
        prop_assert_eq!(s.transpose(), s.clone());
        prop_assert_eq!(sym(&s).unwrap(), s);
    }

    #[test]
    fn svd_reconstructs(rows in 1usize..7, cols in 1usize..9, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
        let f = svd(&a).unwrap();
        prop_assert!(f.reconstruct().max_abs_diff(&a).unwrap() < 1e-10);
        let utu = f.u.tr_matmul(&f.u).unwrap();
        let vtv = f.v.tr_matmul(&f.v).unwrap();
        prop_assert!(utu.max_abs_diff(&Matrix::identity(rows)).unwrap() < 1e-10);
        prop_assert!(vtv.max_abs_diff(&Matrix::identity(cols)).unwrap() < 1e-10);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]) && f.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn pooled_matrix_matches_eigen_log(m in 1usize..5, d in 5usize..8, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let cache = pool_forward(&x, 1e-3).unwrap();
        let c = x.tr_matmul(&x).unwrap().add(&Matrix::identity(d).scale(1e-3)).unwrap();
        let oracle = spd_log_oracle(&c).unwrap();
        prop_assert!(cache.y.max_abs_diff(&oracle).unwrap() < 1e-8);
        prop_assert_eq!(cache.y.transpose(), cache.y.clone());
    }

    #[test]
    fn objective_matches_brute_force_and_finite_differences((codes, labels, mods) in batch(), alpha in 0.1f64..2.0) {
        prop_assume!(min_margin(&codes, &labels, alpha) > 1e-3);
        let cfg = ObjectiveConfig { alpha, lambda1: 0.7, lambda2: 1.3 };
        let relaxed: Vec<RelaxedCode> = codes.iter().cloned().map(RelaxedCode).collect();
        let obj = batch_objective(&relaxed, &labels, &mods, &cfg).unwrap();
        let brute = brute_objective(&codes, &labels, &mods, &cfg);
        prop_assert!((obj.total - brute).abs() <= 1e-12 * brute.max(1.0));
        prop_assert!(obj.total >= 0.0);
        let h = 1e-6;
        for i in 0..codes.len() {
            for k in 0..codes[i].len() {
                let mut p = codes.clone();
                p[i][k] += h;
                let mut q = codes.clone();
                q[i][k] -= h;
                let num = (brute_objective(&p, &labels, &mods, &cfg) - brute_objective(&q, &labels, &mods, &cfg)) / (2.0 * h);
                let ana = obj.code_grads[i][k];
                prop_assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1.0), "{i},{k}: {ana} vs {num}");
            }
        }
    }

    #[test]
    fn retrieval_matches_brute_force(
        db in prop::collection::vec((code(10), 0u32..4), 1..30),
        queries in prop::collection::vec((code(10), 0u32..4), 1..10),
    ) {
        let labels: Vec<u32> = db.iter().map(|x| x.1).collect();
        let codes: Vec<BinaryCode> = db.iter().map(|x| x.0.clone()).collect();
        let ids: Vec<u64> = (0..db.len() as u64).rev().collect();
        let index = RetrievalIndex::build(codes, labels.clone(), ids.clone(), Modality::Video).unwrap();
        let qs: Vec<Query> = queries
            .iter()
            .enumerate()
            .filter(|(_, q)| labels.contains(&q.1))
            .map(|(i, q)| Query { id: i as u64, label: q.1, code: q.0.clone() })
            .collect();
        let mut expected = 0.0;
        for q in &qs {
            let mut order: Vec<(u32, u64, u32)> = db
                .iter()
                .zip(&ids)
                .map(|((c, l), &id)| {
                    let d = c.bits().iter().zip(q.code.bits()).filter(|(a, b)| **a != *b).count() as u32;
                    (d, id, *l)
                })
                .collect();
            order.sort();
            let (mut hits, mut acc) = (0.0, 0.0);
            for (rank, &(_, _, l)) in order.iter().enumerate() {
                if l == q.label {
                    hits += 1.0;
                    acc += hits / (rank + 1) as f64;
                }
            }
            expected += acc / hits;
        }
        if !qs.is_empty() {
            expected /= qs.len() as f64;
        }
        let got = mean_ap(&qs, &index).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn ranking_is_permutation_invariant(
        db in prop::collection::vec(code(8), 1..20),
        q in code(8),
        rot in 0usize..20,
    ) {
        let n = db.len();
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
        let ids: Vec<u64> = (0..n as u64).collect();
        let a = RetrievalIndex::build(db.clone(), labels.clone(), ids.clone(), Modality::Image).unwrap();
        let r = rot % n;
        fn rotate<T: Clone>(v: &[T], r: usize) -> Vec<T> {
            v[r..].iter().chain(&v[..r]).cloned().collect()
        }
        let b = RetrievalIndex::build(rotate(&db, r), rotate(&labels, r), rotate(&ids, r), Modality::Image).unwrap();
        prop_assert_eq!(a.query(&q).unwrap(), b.query(&q).unwrap());
    }

    #[test]
    fn biases_are_sgd_fixed_points(seed in any::<u64>(), lr in 1e-5f64..1e-1, wd in 0.0f64..1e-2) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shape = ModelShape {
            input_dim: 3,
            feature_dim: 2,
            code_len: 4,
            epsilon: 1e-3,
            activation: Default::default(),
        };
        let mut params = Parameters::zeros(&shape);
        for (_, t, _) in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let before = params.clone();
        let grads = Parameters::zeros(&shape);
        let mut vel = Parameters::zeros(&shape);
        let cfg = SgdConfig { learning_rate: lr, momentum: 0.9, weight_decay: wd };
        sgd_step(&mut params, &grads, &mut vel, &cfg).unwrap();
        for ((_, a, is_weight), (_, b, _)) in params.tensors().into_iter().zip(before.tensors()) {
            if !is_weight {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn clamp_policy_never_errors_on_repeated_values() {
    let x = Matrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let cache = pool_forward(&x, 1e-3).unwrap();
    let dy = Matrix::identity(3);
    assert!(spdhash_core::covpool::pool_backward(&cache, &dy, SpectrumPolicy::Error).is_err());
    let g = spdhash_core::covpool::pool_backward(&cache, &dy, SpectrumPolicy::Clamp).unwrap();
    assert!(g.is_finite());
}
