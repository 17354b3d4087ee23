use pointgr_testkit as common;

use common::rng;
use pointgr_core::graph::{build_edge_features, knn_bruteforce, knn_indexed, multiscale_graph, NeighborGraph};
use proptest::prelude::*;
use rand::Rng;

/// Full sort of every other point by (distance, index), self prepended.
fn sort_oracle(x: &[f64], dims: usize, k: usize) -> Vec<Vec<u32>> {
    let n = x.len() / dims;
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..dims).map(|c| (x[i * dims + c] - x[j * dims + c]).powi(2)).sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            std::iter::once(i as u32)
                .chain(others.iter().take(k - 1).map(|&(_, j)| j as u32))
                .collect()
        })
        .collect()
}

fn random_cloud(seed: u64, n: usize, dims: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * dims).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn rows(g: &NeighborGraph) -> Vec<Vec<u32>> {
    g.rows().map(|r| r.to_vec()).collect()
}

#[test]
fn bruteforce_matches_sort_oracle_200_points() {
    let x = random_cloud(1, 200, 3);
    let g = knn_bruteforce(&x, 3, 20).unwrap();
    assert_eq!(rows(&g), sort_oracle(&x, 3, 20));
}

#[test]
fn bruteforce_matches_sort_oracle_in_feature_space() {
    let x = random_cloud(2, 64, 17);
    let g = knn_bruteforce(&x, 17, 9).unwrap();
    assert_eq!(rows(&g), sort_oracle(&x, 17, 9));
}

#[test]
fn graph_invariants_hold() {
    let x = random_cloud(3, 150, 3);
    let g = knn_indexed(&x, 3, 12).unwrap();
    for (i, row) in g.rows().enumerate() {
        assert_eq!(row[0] as usize, i);
        let mut seen = row.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 12);
        let d: Vec<f64> = row
            .iter()
            .map(|&j| pointgr_core::graph::squared_distance(&x[i * 3..i * 3 + 3], &x[j as usize * 3..j as usize * 3 + 3]))
            .collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn indexed_equals_bruteforce_on_tie_heavy_grids() {
    // integer lattice: many exactly equal distances
    for (side, k) in [(5usize, 7usize), (6, 19), (4, 64)] {
        let mut x = Vec::new();
        for a in 0..side {
            for b in 0..side {
                for c in 0..side {
                    x.extend_from_slice(&[a as f32, b as f32, c as f32]);
                }
            }
        }
        assert_eq!(knn_indexed(&x, 3, k).unwrap(), knn_bruteforce(&x, 3, k).unwrap(), "side {side}");
    }
}

#[test]
fn indexed_equals_bruteforce_with_duplicates() {
    let mut r = rng(9);
    let base: Vec<f32> = (0..60).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut x = base.clone();
    x.extend_from_slice(&base);
    x.extend_from_slice(&base[..30]);
    for k in [1, 2, 5, 13] {
        assert_eq!(knn_indexed(&x, 3, k).unwrap(), knn_bruteforce(&x, 3, k).unwrap());
    }
}

#[test]
fn edge_features_match_loop_oracle() {
    let x = random_cloud(16, 16, 4);
    let g = knn_bruteforce(&x, 4, 3).unwrap();
    let e = build_edge_features(&x, 4, &g).unwrap();
    for i in 0..16 {
        for j in 0..3 {
            let nb = g.row(i)[j] as usize;
            for c in 0..4 {
                assert_eq!(e.point_part(i, j)[c], x[i * 4 + c]);
                assert_eq!(e.offset_part(i, j)[c], x[i * 4 + c] - x[nb * 4 + c]);
            }
        }
        assert!(e.offset_part(i, 0).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn multiscale_output_shape() {
    let x = random_cloud(5, 30, 6);
    let (g, e) = multiscale_graph(&x, 6, 4).unwrap();
    assert_eq!(g.k(), 4);
    assert_eq!(e.shape(), [30, 4, 12]);
    assert_eq!(e.features.len(), 30 * 4 * 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn indexed_is_exact(seed in 0u64..10_000, n in 1usize..400, kf in 0.0f64..1.0) {
        let k = 1 + ((n.min(64) - 1) as f64 * kf) as usize;
        let x: Vec<f32> = random_cloud(seed, n, 3).iter().map(|&v| v as f32).collect();
        prop_assert_eq!(knn_indexed(&x, 3, k).unwrap(), knn_bruteforce(&x, 3, k).unwrap());
    }

    #[test]
    fn permutation_equivariance(seed in 0u64..10_000, n in 2usize..80, kf in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * kf) as usize;
        let x = random_cloud(seed, n, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut r = rng(seed + 1);
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        // permuted[p] = x[perm[p]]
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| x[p * 3..p * 3 + 3].to_vec()).collect();
        let mut inverse = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u32;
        }
        let g = knn_bruteforce(&x, 3, k).unwrap();
        let gp = knn_bruteforce(&permuted, 3, k).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            let expect: Vec<u32> = g.row(old).iter().map(|&j| inverse[j as usize]).collect();
            prop_assert_eq!(gp.row(new), &expect[..]);
        }
    }

    #[test]
    fn offsets_are_translation_invariant(seed in 0u64..10_000, t in proptest::array::uniform3(-100.0f64..100.0)) {
        let x = random_cloud(seed, 24, 3);
        let shifted: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + t[i % 3]).collect();
        let g = knn_bruteforce(&x, 3, 5).unwrap();
        let a = build_edge_features(&x, 3, &g).unwrap();
        let b = build_edge_features(&shifted, 3, &g).unwrap();
        for i in 0..24 {
            for j in 0..5 {
                for c in 0..3 {
                    prop_assert!((a.offset_part(i, j)[c] - b.offset_part(i, j)[c]).abs() <= 1e-12 * (1.0 + t[c].abs()));
                }
            }
        }
    }
}
