//! The invariant and gradient suite behind `tvg selfcheck` and the
//! acceptance tests. The clustering oracles here share no code with the
//! routines they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax, Graph};
use crate::clustering::kmeans;
use crate::config::Config;
use crate::data::EmbeddingTable;
use crate::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use crate::inference::{combine_scores, grow_segment, recall_at_n, temporal_iou, top_n_segments, GroundingResult, Segment};
use crate::language::{combine_language, loss_cel, loss_dqa, LanguageDims, LanguageModel};
use crate::pseudo::{gaussian_affinity, init_pseudo_labels, ncut_bipartition, EIGEN_RESIDUAL_BOUND};
use crate::tensor::Matrix;
use crate::video::{
    combine_video, compose_activity, loss_cls, loss_sab, loss_trip, specific_attention, BatchVideo, Sign, VideoDims,
    VideoModel,
};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Worst gradient-check result of one loss over many seeds.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: &'static str,
    pub seeds: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst coordinate.
    pub worst: (f64, f64),
    pub checked: usize,
    pub excluded: usize,
}

impl LossGradients {
    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= GRADIENT_TOLERANCE
    }
}

pub const LANGUAGE_LOSSES: [&str; 4] = ["L_cel", "L_mse", "L_dqa", "L_w"];
pub const VIDEO_LOSSES: [&str; 4] = ["L_sab", "L_trip", "L_cls", "L_v"];

fn grad_opts() -> GradCheckOptions {
    GradCheckOptions {
        max_coords_per_param: Some(12),
        ..GradCheckOptions::default()
    }
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn fold(loss: &'static str, reports: &[GradCheckReport]) -> LossGradients {
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    LossGradients {
        loss,
        seeds: reports.len(),
        max_rel_error: worst.map_or(0.0, |r| r.max_rel_error),
        worst: worst.map_or((0.0, 0.0), |r| (r.worst_analytic, r.worst_numeric)),
        checked: reports.iter().map(|r| r.checked).sum(),
        excluded: reports.iter().map(|r| r.excluded.len()).sum(),
    }
}

/// Gradient checks of the four language losses against every parameter
/// tensor of a small random model (`d_r = 8`, `d_e = 6`, `N_e = 2`,
/// `N_w = 11`, `L = 4`).
pub fn language_gradients(seeds: usize) -> Vec<LossGradients> {
    let mut per_loss: Vec<Vec<GradCheckReport>> = vec![Vec::new(); 4];
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let cfg = Config {
            necks: 2,
            neck_dim: 6,
            mlp_hidden: 5,
            sentence_dim: 8,
            max_query_len: 4,
            lambda: rng.gen_range(0.2..1.0),
            ..Config::default()
        };
        let words = (0..9).map(|i| format!("w{i}")).collect();
        let table = EmbeddingTable::new(words, rand_mat(&mut rng, 9, 3)).unwrap();
        let model = LanguageModel::new(LanguageDims::new(&cfg, &table), seed);
        let batch: Vec<Vec<usize>> = (0..2)
            .map(|_| {
                let len = rng.gen_range(1..=4);
                (0..len).map(|_| rng.gen_range(0..table.vocab_size())).collect()
            })
            .collect();
        let refs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
        for (k, slot) in per_loss.iter_mut().enumerate() {
            let report = gradient_check(
                &model.store,
                |g: &mut Graph<'_>| {
                    let fwd = model.forward(g, &table, &refs);
                    let parts = model.batch_loss(g, &fwd, &refs, &cfg);
                    [parts.cel, parts.mse, parts.dqa, parts.total][k]
                },
                &grad_opts(),
            );
            slot.push(report);
        }
    }
    LANGUAGE_LOSSES
        .iter()
        .zip(&per_loss)
        .map(|(name, reports)| fold(name, reports))
        .collect()
}

/// Gradient checks of the four video losses against every parameter tensor
/// of a small random model (`T ≤ 5`, `N_c ≤ 3`, `d_e' = 8`).
pub fn video_gradients(seeds: usize) -> Vec<LossGradients> {
    let mut per_loss: Vec<Vec<GradCheckReport>> = vec![Vec::new(); 4];
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n_c = rng.gen_range(2..=3);
        let cfg = Config {
            necks: 2,
            clusters: n_c,
            neck_dim: 3,
            joint_dim: 8,
            attention_heads: 2,
            centers_per_batch: 2,
            ..Config::default()
        };
        let d_v = 4;
        let model = VideoModel::new(VideoDims::new(&cfg, d_v), seed).unwrap();
        let centers = rand_mat(&mut rng, n_c, cfg.neck_dim);
        let videos: Vec<(Matrix, Matrix)> = (0..2)
            .map(|_| {
                let t = rng.gen_range(3..=5);
                let frames = rand_mat(&mut rng, t, d_v);
                // Every row keeps two foreground frames and one background frame.
                let labels = Matrix::from_fn(n_c, t, |_, c| if c < 2 { 1.0 } else { 0.0 });
                let mut labels = labels;
                for j in 0..n_c {
                    for c in 3..t {
                        labels.row_mut(j)[c] = f64::from(rng.gen_bool(0.5));
                    }
                    labels.row_mut(j).swap(0, rng.gen_range(0..t));
                }
                (frames, labels)
            })
            .collect();
        let batch: Vec<BatchVideo<'_>> = videos
            .iter()
            .map(|(frames, labels)| BatchVideo { frames, labels })
            .collect();
        let sampled: Vec<usize> = (0..cfg.centers_per_batch).collect();
        for (k, slot) in per_loss.iter_mut().enumerate() {
            let report = gradient_check(
                &model.store,
                |g: &mut Graph<'_>| {
                    let out = model.batch_loss(g, 1, &centers, &sampled, &batch, &cfg);
                    let p = out.parts;
                    [p.sab, p.trip, p.cls, p.total][k]
                },
                &grad_opts(),
            );
            slot.push(report);
        }
    }
    VIDEO_LOSSES
        .iter()
        .zip(&per_loss)
        .map(|(name, reports)| fold(name, reports))
        .collect()
}

/// Largest deviation of `A_spe` row sums from 1 and of `B_spe` row sums from
/// `(T−1)/T` over `shapes` random shapes, plus whether every `A_spe` entry
/// was strictly positive.
pub fn attention_invariants(shapes: usize, seed: u64) -> (f64, f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dev_a, mut dev_b, mut positive) = (0.0f64, 0.0f64, true);
    for _ in 0..shapes {
        let (n_c, t, d) = (rng.gen_range(1..=8), rng.gen_range(1..=40), rng.gen_range(1..=16));
        let scale = rng.gen_range(0.1..4.0);
        let c = Matrix::from_fn(n_c, d, |_, _| scale * rng.gen_range(-1.0..1.0));
        let f = Matrix::from_fn(t, d, |_, _| scale * rng.gen_range(-1.0..1.0));
        let att = specific_attention(&c, &f).unwrap();
        for j in 0..n_c {
            let sa: f64 = att.a.row(j).iter().sum();
            let sb: f64 = att.b.row(j).iter().sum();
            dev_a = dev_a.max((sa - 1.0).abs());
            dev_b = dev_b.max((sb - (t as f64 - 1.0) / t as f64).abs());
            positive &= att.a.row(j).iter().all(|&x| x > 0.0);
        }
    }
    (dev_a, dev_b, positive)
}

fn two_blobs(rng: &mut ChaCha8Rng, sizes: (usize, usize), dim: usize, separation: f64, noise: f64) -> (Matrix, Vec<usize>) {
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dir.iter_mut().for_each(|x| *x *= separation / norm);
    let n = sizes.0 + sizes.1;
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= sizes.0)).collect();
    let normal = rand_distr::Normal::new(0.0, noise).unwrap();
    let points = Matrix::from_fn(n, dim, |i, k| {
        use rand_distr::Distribution;
        labels[i] as f64 * dir[k] + normal.sample(rng)
    });
    (points, labels)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|s| (0..a.len()).all(|t| (a[s] == a[t]) == (b[s] == b[t])))
}

/// Seeds (out of `seeds`) in which K-means with `k = 2` recovers two planted
/// blobs separated by ten noise standard deviations.
pub fn kmeans_blob_recovery(seeds: usize) -> usize {
    (0..seeds as u64)
        .filter(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + s);
            let sizes = (rng.gen_range(3..=20), rng.gen_range(3..=20));
            let dim = rng.gen_range(2..=5);
            let (points, labels) = two_blobs(&mut rng, sizes, dim, 10.0, 1.0);
            kmeans(&points, 2, s, 8).is_ok_and(|km| same_partition(&km.assignments, &labels))
        })
        .count()
}

/// Smallest inertia over every assignment of the rows to `k` nonempty clusters.
pub fn exhaustive_inertia(points: &Matrix, k: usize) -> f64 {
    let n = points.rows();
    let mut assign = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        if counts.iter().all(|&c| c > 0) {
            let mut total = 0.0;
            for (cl, &count) in counts.iter().enumerate() {
                for col in 0..points.cols() {
                    let mean = (0..n).filter(|&i| assign[i] == cl).map(|i| points[(i, col)]).sum::<f64>() / count as f64;
                    total += (0..n)
                        .filter(|&i| assign[i] == cl)
                        .map(|i| (points[(i, col)] - mean).powi(2))
                        .sum::<f64>();
                }
            }
            best = best.min(total);
        }
        // Odometer increment; the first point is pinned to cluster 0 by symmetry.
        let mut pos = n - 1;
        loop {
            if pos == 0 {
                return best;
            }
            assign[pos] += 1;
            if assign[pos] < k {
                break;
            }
            assign[pos] = 0;
            pos -= 1;
        }
    }
}

/// Seeds in which 8-restart K-means on at most 12 points reaches the
/// exhaustive optimum within 1e-9.
pub fn kmeans_exhaustive(seeds: usize) -> usize {
    (0..seeds as u64)
        .filter(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + s);
            let k = rng.gen_range(2..=3);
            let n = rng.gen_range(k + 2..=12);
            let points = rand_mat(&mut rng, n, 2);
            let best = exhaustive_inertia(&points, k);
            kmeans(&points, k, s, 8).is_ok_and(|km| (km.inertia - best).abs() <= 1e-9)
        })
        .count()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns) in ascending order.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(x, x)].total_cmp(&m[(y, y)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Partition from the Jacobi oracle: second eigenvector of `L_sym`,
/// thresholded at zero, with the side of vertex 0 labelled 0.
pub fn oracle_bipartition(w: &Matrix) -> Vec<u8> {
    let n = w.rows();
    let deg: Vec<f64> = (0..n).map(|s| (0..n).map(|t| w[(s, t)]).sum()).collect();
    let lap = Matrix::from_fn(n, n, |s, t| {
        f64::from(u8::from(s == t)) - w[(s, t)] / (deg[s] * deg[t]).sqrt()
    });
    let (_, vectors) = jacobi_eigen(&lap);
    let anchor = vectors[(0, 1)] > 0.0;
    (0..n).map(|s| u8::from((vectors[(s, 1)] > 0.0) != anchor)).collect()
}

/// Seeds in which the N-cut bipartition of planted two-blob affinities equals
/// the Jacobi oracle's partition, and the largest eigen residual seen.
pub fn ncut_oracle(seeds: usize) -> (usize, f64) {
    let mut agree = 0;
    let mut worst = 0.0f64;
    for s in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + s);
        let sizes = (rng.gen_range(2..=15), rng.gen_range(2..=15));
        let dim = rng.gen_range(2..=6);
        let (points, _) = two_blobs(&mut rng, sizes, dim, 6.0, 1.0);
        let w = gaussian_affinity(&points, 2.0).unwrap();
        let Ok(bp) = ncut_bipartition(&w) else {
            continue;
        };
        worst = worst.max(bp.residual);
        if bp.sides == oracle_bipartition(&w) {
            agree += 1;
        }
    }
    (agree, worst)
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> CheckOutcome {
    CheckOutcome::new(name, (got - want).abs() <= tol, format!("got {got}, expected {want} (tol {tol:e})"))
}

/// The closed-form and hand-worked cases listed for each operation.
pub fn closed_form_cases() -> Vec<CheckOutcome> {
    let cfg = Config::default();
    let mut out = Vec::new();

    out.push(close(
        "L_cel uniform scores = L ln N_w",
        loss_cel(&Matrix::zeros(6, 40), &[1, 5, 9, 0, 39, 2]).unwrap(),
        6.0 * 40f64.ln(),
        1e-9,
    ));
    let lambda = cfg.lambda;
    out.push(close("L_dqa zero matrix = λ√d_e", loss_dqa(&Matrix::zeros(4, 7), lambda), lambda * 7f64.sqrt(), 1e-9));
    out.push(close(
        "L_w with zero weights = L_cel",
        combine_language(2.0, 1.0, 4.0, &Config { alpha_w: 0.0, beta_w: 0.0, ..cfg.clone() }),
        2.0,
        0.0,
    ));

    // Two videos, J = 1: d(p1,p2) = 0.3, d(p_v,n_v) = 0.9.
    let a = 0.7f64.acos();
    let b = 0.1f64.acos();
    let unit = |t: f64| Matrix::row_vector(&[t.cos(), t.sin()]);
    let pos = [unit(0.0), unit(a)];
    let neg = [unit(-b), unit(a + b)];
    let sab_cfg = Config { tau1: 1e-4, tau2: 1e-4, theta: 1.0, ..cfg.clone() };
    out.push(close("L_sab hand-worked batch = 0.5998", loss_sab(&pos, &neg, &sab_cfg).unwrap(), 0.5998, 1e-6));
    let same = [unit(0.4), unit(0.4)];
    out.push(close(
        "L_sab identical videos: L_sim = 0",
        loss_sab(&same, &neg, &Config { theta: 0.0, ..sab_cfg.clone() }).unwrap(),
        0.0,
        1e-12,
    ));

    let identical = Matrix::from_fn(5, 3, |_, c| c as f64 + 1.0);
    let labels = [1.0, 1.0, 0.0, 1.0, 0.0];
    out.push(close("L_trip identical frames = #anchors·τ3", loss_trip(&identical, &labels, 0.5), 1.5, 1e-12));

    let a_spe = Matrix::row_vector(&[0.5, 0.5]);
    out.push(close(
        "L_cls Y=1, h=0.5 contributes ln 2",
        loss_cls(&a_spe, &[1.0, 0.0], &Matrix::row_vector(&[1.0, 0.0])).unwrap(),
        // The h=0 frame is clamped to 1e-7.
        2f64.ln() - (1.0 - 1e-7f64).ln(),
        1e-12,
    ));
    let v_cfg = Config { alpha_v: 0.5, beta_v: 0.5, ..cfg.clone() };
    out.push(close("L_v components (1,2,4) = 4", combine_video(1.0, 2.0, 4.0, &v_cfg), 4.0, 0.0));

    let att = specific_attention(&Matrix::row_vector(&[0.3, -0.2]), &Matrix::row_vector(&[1.0, 2.0])).unwrap();
    out.push(CheckOutcome::new(
        "T=1 attention: A = 1, B = 0",
        att.a[(0, 0)] == 1.0 && att.b[(0, 0)] == 0.0,
        format!("A = {}, B = {}", att.a[(0, 0)], att.b[(0, 0)]),
    ));
    let c = Matrix::row_vector(&[1.0, -2.0, 0.5]);
    let f = Matrix::from_rows(&[vec![0.2, 0.1, -0.4], vec![-1.0, 0.3, 0.0]]);
    let att = specific_attention(&c.transpose().transpose(), &f).unwrap();
    let logits: Vec<f64> = (0..2).map(|t| (0..3).map(|k| c[(0, k)] * f[(t, k)]).sum()).collect();
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let dev = (0..2)
        .map(|t| (att.a[(0, t)] - (logits[t] - max).exp() / z).abs())
        .fold(0.0, f64::max);
    out.push(CheckOutcome::new("attention matches hand softmax", dev < 1e-12, format!("max deviation {dev:e}")));

    let uniform = specific_attention(&Matrix::zeros(1, 3), &Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64)).unwrap();
    let f4 = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64);
    let neg = compose_activity(&uniform, &f4, 0, Sign::Negative).unwrap();
    let mean: Vec<f64> = (0..3).map(|c| (0..4).map(|r| f4[(r, c)]).sum::<f64>() / 4.0).collect();
    let dev = neg.iter().zip(&mean).map(|(x, m)| (x - 0.75 * m).abs()).fold(0.0, f64::max);
    out.push(CheckOutcome::new("uniform row, T=4: S̃^n = (3/4)·mean", dev < 1e-12, format!("max deviation {dev:e}")));

    let pts = Matrix::from_rows(&[vec![0.0, 0.0], vec![2f64.sqrt() * 1.5, 0.0]]);
    out.push(close("affinity at distance σ√2 = e^{-1}", gaussian_affinity(&pts, 1.5).unwrap()[(0, 1)], (-1f64).exp(), 1e-15));

    let mut w = Matrix::from_fn(6, 6, |s, t| if (s < 3) == (t < 3) { 1.0 } else { 1e-6 });
    for s in 0..6 {
        w[(s, s)] = 1.0;
    }
    let sides = ncut_bipartition(&w).unwrap().sides;
    out.push(CheckOutcome::new("two 3-cliques split into cliques", sides == vec![0, 0, 0, 1, 1, 1], format!("{sides:?}")));

    let f2 = Matrix::from_rows(&[vec![1.0, 0.5, -0.3], vec![-0.2, 0.9, 0.4]]);
    let y = init_pseudo_labels(&f2, &[1.0, 0.5], None).unwrap();
    out.push(CheckOutcome::new("T=2, center = frame 0 → labels (1,0)", y == vec![1, 0], format!("{y:?}")));

    let iou = temporal_iou(&Segment::new(10, 20, 0.0), &Segment::new(15, 25, 0.0));
    out.push(close("IoU [10,20] vs [15,25] = 6/16", iou, 0.375, 1e-15));
    let g = grow_segment(&[0.1, 0.5, 1.0, 0.55, 0.1], 2, 0.9);
    out.push(CheckOutcome::new("grow from peak at 0.9 stays [2,2]", (g.start, g.end) == (2, 2), format!("{g:?}")));
    let peaks = top_n_segments(&[0.1, 0.9, 0.1, 0.1, 0.9, 0.1], 5, 0.95);
    out.push(CheckOutcome::new(
        "two equal peaks → both, smaller start first",
        peaks.len() == 2 && peaks[0].start == 1 && peaks[1].start == 4,
        format!("{peaks:?}"),
    ));
    let uniform_scores = combine_scores(&[vec![0.25; 4]], &[0.7; 4]);
    let dev = uniform_scores.iter().map(|s| (s - 0.25).abs()).fold(0.0, f64::max);
    out.push(CheckOutcome::new("uniform attention → scores 1/T", dev < 1e-15, format!("max deviation {dev:e}")));
    let s = softmax(&[0.1, 0.4, 0.2]);
    let both = combine_scores(&[vec![0.1, 0.4, 0.2], vec![0.1, 0.4, 0.2]], &[1.0; 3]);
    let dev = both.iter().zip(&s).map(|(b, x)| (b - x * x).abs()).fold(0.0, f64::max);
    out.push(CheckOutcome::new("two identical necks → s ⊙ s", dev < 1e-15, format!("max deviation {dev:e}")));

    let truth = [("q".to_string(), Segment::new(0, 9, 0.0))].into_iter().collect();
    let hit = |seg: Segment| GroundingResult {
        video_id: "v".into(),
        query_id: "q".into(),
        segments: vec![seg],
    };
    // [0,11] vs [0,9]: IoU 10/12 > 0.5; [5,14] vs [0,9]: IoU 5/15 < 0.5.
    out.push(close("R@1 with one IoU 0.83 hit = 100", recall_at_n(&[hit(Segment::new(0, 11, 1.0))], &truth, 1, 0.5).unwrap(), 100.0, 0.0));
    // [0,4] vs [0,9]: IoU exactly 0.5 counts as a miss.
    out.push(close("IoU exactly θ is a miss", recall_at_n(&[hit(Segment::new(0, 4, 1.0))], &truth, 1, 0.5).unwrap(), 0.0, 0.0));
    out
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub gradient_seeds: usize,
    pub attention_shapes: usize,
    pub cluster_seeds: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            gradient_seeds: 20,
            attention_shapes: 1000,
            cluster_seeds: 100,
        }
    }
}

/// Every check, in a fixed order.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for g in language_gradients(opts.gradient_seeds)
        .into_iter()
        .chain(video_gradients(opts.gradient_seeds))
    {
        out.push(CheckOutcome::new(
            format!("gradient {}", g.loss),
            g.passes(),
            format!(
                "max rel error {:.2e} (analytic {:.6e}, numeric {:.6e}) over {} seeds, {} coordinates checked, {} excluded at kinks",
                g.max_rel_error, g.worst.0, g.worst.1, g.seeds, g.checked, g.excluded
            ),
        ));
    }
    let (dev_a, dev_b, positive) = attention_invariants(opts.attention_shapes, 6000);
    out.push(CheckOutcome::new(
        "A_spe rows sum to 1, B_spe rows to (T-1)/T",
        dev_a <= 1e-6 && dev_b <= 1e-6 && positive,
        format!("max deviations {dev_a:.1e} / {dev_b:.1e} over {} shapes", opts.attention_shapes),
    ));
    let n = opts.cluster_seeds;
    let blobs = kmeans_blob_recovery(n);
    out.push(CheckOutcome::new("k-means recovers planted blobs", blobs == n, format!("{blobs}/{n} seeds")));
    let exact = kmeans_exhaustive(n);
    out.push(CheckOutcome::new(
        "k-means reaches exhaustive optimum",
        exact * 100 >= 95 * n,
        format!("{exact}/{n} seeds"),
    ));
    let (agree, residual) = ncut_oracle(n);
    out.push(CheckOutcome::new(
        "N-cut matches dense eigen oracle",
        agree == n && residual <= EIGEN_RESIDUAL_BOUND,
        format!("{agree}/{n} seeds, max residual {residual:.1e}"),
    ));
    out.extend(closed_form_cases());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_small_matrix() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]]);
        let (values, _) = jacobi_eigen(&a);
        let want = [2.0 - 2f64.sqrt(), 2.0, 2.0 + 2f64.sqrt()];
        for (v, w) in values.iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
    }

    #[test]
    fn exhaustive_inertia_of_two_pairs() {
        let p = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]);
        assert!((exhaustive_inertia(&p, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_forms_hold() {
        for c in closed_form_cases() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
