//! Scalar reference computations checked against the library routines.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvg_core::config::Config;
use tvg_core::inference::{local_maxima, recall_at_n, score_curve, temporal_iou, GroundingResult, Segment};
use tvg_core::language::{combine_language, loss_cel, loss_dqa, loss_language, loss_mse};
use tvg_core::pseudo::{gaussian_affinity, ncut_bipartition};
use tvg_core::tensor::Matrix;
use tvg_core::video::{loss_cls, loss_trip, specific_attention, triplet_selection, VideoDims, VideoModel};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn cross_entropy_matches_log_sum_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let p = rand_mat(&mut rng, 3, 7);
        let tokens: Vec<usize> = (0..3).map(|_| rng.gen_range(0..7)).collect();
        let mut want = 0.0;
        for (i, &tok) in tokens.iter().enumerate() {
            let row = p.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            want += lse - row[tok];
        }
        let got = loss_cel(&p, &tokens).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn saturated_truth_costs_nearly_nothing() {
    let mut p = Matrix::zeros(1, 9);
    p[(0, 4)] = 50.0;
    assert!(loss_cel(&p, &[4]).unwrap() < 1e-20);
}

#[test]
fn diversity_loss_matches_dense_gram() {
    let unit = Matrix::row_vector(&[0.5, 0.5, 0.5, 0.5]);
    assert!((loss_dqa(&unit, 0.5) - 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (n, d) = (rng.gen_range(1..5), rng.gen_range(1..7));
        let e = rand_mat(&mut rng, n, d);
        let lambda = rng.gen_range(0.05..1.0);
        let mut sq = 0.0;
        for a in 0..d {
            for b in 0..d {
                let mut g = 0.0;
                for k in 0..n {
                    g += e[(k, a)] * e[(k, b)];
                }
                if a == b {
                    g -= lambda;
                }
                sq += g * g;
            }
        }
        assert!((loss_dqa(&e, lambda) - sq.sqrt()).abs() < 1e-10);
    }
}

#[test]
fn mse_and_weighted_sum_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = Config {
        alpha_w: 0.3,
        beta_w: 0.7,
        lambda: 0.4,
        ..Config::default()
    };
    assert_eq!(combine_language(2.0, 1.0, 4.0, &Config::default()), 4.5);
    for _ in 0..20 {
        let d = rng.gen_range(1..9);
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / d as f64;
        let mse = loss_mse(&a, &b).unwrap();
        assert!((mse - want).abs() < 1e-14);

        let p = rand_mat(&mut rng, 4, 6);
        let tokens = [1, 0, 5, 2];
        let e = rand_mat(&mut rng, 2, 3);
        let total = loss_language(&p, &tokens, &e, &a, &b, &cfg).unwrap();
        let parts = loss_cel(&p, &tokens).unwrap() + 0.3 * mse + 0.7 * loss_dqa(&e, 0.4);
        assert!((total - parts).abs() < 1e-12);
    }
}

/// Minimum and maximum selections by exhaustive scan, then the hinge sum.
fn triplet_oracle(f: &Matrix, labels: &[f64], margin: f64) -> f64 {
    let t = f.rows();
    let d = |a: usize, b: usize| 1.0 - cos(f.row(a), f.row(b));
    let fg: Vec<usize> = (0..t).filter(|&i| labels[i] == 1.0).collect();
    let bg: Vec<usize> = (0..t).filter(|&i| labels[i] == 0.0).collect();
    if fg.len() < 2 || bg.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &u in &fg {
        let near = fg.iter().filter(|&&v| v != u).map(|&v| d(u, v)).fold(f64::INFINITY, f64::min);
        let far = bg.iter().map(|&o| d(u, o)).fold(f64::NEG_INFINITY, f64::max);
        total += (near - far + margin).max(0.0);
    }
    total
}

#[test]
fn triplet_loss_matches_exhaustive_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let t = rng.gen_range(2..9);
        let f = rand_mat(&mut rng, t, 4);
        let labels: Vec<f64> = (0..t).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        let margin = rng.gen_range(0.0..1.0);
        let got = loss_trip(&f, &labels, margin);
        assert!((got - triplet_oracle(&f, &labels, margin)).abs() < 1e-12);
    }
}

#[test]
fn triplet_selection_picks_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let f = rand_mat(&mut rng, 7, 3);
    let dist = Matrix::from_fn(7, 7, |a, b| 1.0 - cos(f.row(a), f.row(b)));
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    for (u, v, o) in triplet_selection(&dist, &labels).unwrap() {
        for c in [0, 2, 3, 6].into_iter().filter(|&c| c != u) {
            assert!(dist[(u, v)] <= dist[(u, c)]);
        }
        for c in [1, 4, 5] {
            assert!(dist[(u, o)] >= dist[(u, c)]);
        }
    }
}

#[test]
fn grounding_loss_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let (n_c, t) = (2, 3);
        let a = Matrix::from_fn(n_c, t, |_, _| rng.gen_range(0.0..1.0));
        let fore: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = Matrix::from_fn(n_c, t, |_, _| f64::from(u8::from(rng.gen_bool(0.5))));
        let mut want = 0.0;
        for j in 0..n_c {
            for s in 0..t {
                let h = (a[(j, s)] * fore[s]).clamp(1e-7, 1.0 - 1e-7);
                want -= y[(j, s)] * h.ln() + (1.0 - y[(j, s)]) * (1.0 - h).ln();
            }
        }
        assert!((loss_cls(&a, &fore, &y).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn score_curve_matches_scalar_formula() {
    let cfg = Config {
        necks: 2,
        clusters: 2,
        neck_dim: 3,
        joint_dim: 8,
        attention_heads: 2,
        centers_per_batch: 1,
        ..Config::default()
    };
    let model = VideoModel::new(VideoDims::new(&cfg, 5), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let frames = rand_mat(&mut rng, 6, 5);
    let e = rand_mat(&mut rng, 2, 3);

    let f_hat = model.encode_frames(&frames).unwrap();
    let fore = model.foreground_attention(&frames).unwrap().a_fore;
    let mut want = vec![1.0; 6];
    for i in 0..2 {
        let c = model.project_centers(i, &e.row_matrix(i)).unwrap();
        let logits: Vec<f64> = (0..6)
            .map(|t| (0..8).map(|k| c[(0, k)] * f_hat[(t, k)]).sum())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let m: Vec<f64> = (0..6).map(|t| logits[t].exp() / z * fore[t]).collect();
        let z2: f64 = m.iter().map(|x| x.exp()).sum();
        for t in 0..6 {
            want[t] *= m[t].exp() / z2;
        }
    }
    let got = score_curve(&model, &e, &frames).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn three_peaks_found_by_enumeration() {
    let scores = [0.1, 0.4, 0.2, 0.2, 0.7, 0.7, 0.3, 0.1, 0.5];
    let brute: Vec<usize> = (0..scores.len())
        .filter(|&t| {
            // leftmost index of a plateau strictly above both neighbours
            let mut r = t;
            while r + 1 < scores.len() && scores[r + 1] == scores[t] {
                r += 1;
            }
            (t == 0 || scores[t - 1] < scores[t]) && (r + 1 == scores.len() || scores[r + 1] < scores[t])
        })
        .collect();
    assert_eq!(brute, vec![1, 4, 8]);
    assert_eq!(local_maxima(&scores), brute);
}

#[test]
fn recall_matches_hand_count() {
    // Ten queries with ground truth [10,29]; hits are the ones with IoU > 0.5.
    let preds = [
        (10, 29), // 1.0
        (12, 31), // 18/22
        (0, 9),   // 0
        (20, 39), // 10/30
        (15, 29), // 15/20
        (10, 19), // 10/20, exactly 0.5
        (5, 30),  // 20/26
        (29, 40), // 1/31
        (11, 28), // 18/20
        (0, 63),  // 20/64
    ];
    let truth = (0..10).map(|q| (format!("q{q}"), Segment::new(10, 29, 1.0))).collect();
    let results: Vec<GroundingResult> = preds
        .iter()
        .enumerate()
        .map(|(q, &(s, e))| GroundingResult {
            video_id: format!("v{q}"),
            query_id: format!("q{q}"),
            segments: vec![Segment::new(s, e, 1.0)],
        })
        .collect();
    assert_eq!(recall_at_n(&results, &truth, 1, 0.5).unwrap(), 50.0);
    assert_eq!(recall_at_n(&results, &truth, 1, 0.3).unwrap(), 80.0);
}

#[test]
fn affinity_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let p = rand_mat(&mut rng, 5, 3);
    let w = gaussian_affinity(&p, 0.8).unwrap();
    for s in 0..5 {
        for t in 0..5 {
            let mut d2 = 0.0;
            for k in 0..3 {
                d2 += (p[(s, k)] - p[(t, k)]).powi(2);
            }
            assert!((w[(s, t)] - (-d2 / (2.0 * 0.64)).exp()).abs() < 1e-15);
        }
    }
}

fn ncut_value(w: &Matrix, sides: &[u8]) -> f64 {
    let n = w.rows();
    let (mut cut, mut vol0, mut vol1) = (0.0, 0.0, 0.0);
    for s in 0..n {
        for t in 0..n {
            if sides[s] != sides[t] {
                cut += w[(s, t)];
            }
            if sides[s] == 0 {
                vol0 += w[(s, t)];
            } else {
                vol1 += w[(s, t)];
            }
        }
    }
    cut / 2.0 / vol0 + cut / 2.0 / vol1
}

#[test]
fn ncut_beats_every_contiguous_split_on_block_affinities() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(2..10), rng.gen_range(2..10));
        let n = a + b;
        let high = rng.gen_range(0.6..1.0);
        let low = rng.gen_range(0.0..0.1);
        let w = Matrix::from_fn(n, n, |s, t| {
            if s == t {
                1.0
            } else if (s < a) == (t < a) {
                high
            } else {
                low
            }
        });
        let got = ncut_value(&w, &ncut_bipartition(&w).unwrap().sides);
        for k in 1..n {
            let split: Vec<u8> = (0..n).map(|s| u8::from(s >= k)).collect();
            assert!(got <= ncut_value(&w, &split) + 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn attention_rows_are_distributions(n_c in 1usize..6, t in 1usize..30, d in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let att = specific_attention(&rand_mat(&mut rng, n_c, d), &rand_mat(&mut rng, t, d)).unwrap();
        for j in 0..n_c {
            let sa: f64 = att.a.row(j).iter().sum();
            let sb: f64 = att.b.row(j).iter().sum();
            prop_assert!((sa - 1.0).abs() < 1e-9);
            prop_assert!((sb - (t as f64 - 1.0) / t as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in 0usize..50, la in 0usize..20, b in 0usize..50, lb in 0usize..20) {
        let x = Segment::new(a, a + la, 0.0);
        let y = Segment::new(b, b + lb, 0.0);
        let v = temporal_iou(&x, &y);
        prop_assert_eq!(v, temporal_iou(&y, &x));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v == 1.0, x.start == y.start && x.end == y.end);
        prop_assert_eq!(v == 0.0, !x.overlaps(&y));
    }
}
