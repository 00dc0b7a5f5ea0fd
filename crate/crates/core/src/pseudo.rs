//! Frame-level binary labels from a normalized-cut bipartition.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use rayon::prelude::*;

use crate::archive::{Archive, TensorDtype};
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, squared_distance, Matrix};

pub const EIGEN_RESIDUAL_BOUND: f64 = 1e-8;

/// `W_st = exp(−‖x_s − x_t‖² / 2σ²)`
pub fn gaussian_affinity(points: &Matrix, sigma: f64) -> Result<Matrix> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let n = points.rows();
    let denom = 2.0 * sigma * sigma;
    let mut w = Matrix::identity(n);
    for s in 0..n {
        for t in s + 1..n {
            let v = (-squared_distance(points.row(s), points.row(t)) / denom).exp();
            w.row_mut(s)[t] = v;
            w.row_mut(t)[s] = v;
        }
    }
    Ok(w)
}

/// Median of the pairwise distances, ignoring zeros when any nonzero exists.
pub fn median_pairwise_distance(points: &Matrix) -> f64 {
    let n = points.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for s in 0..n {
        for t in s + 1..n {
            d.push(squared_distance(points.row(s), points.row(t)).sqrt());
        }
    }
    let mut nz: Vec<f64> = d.iter().copied().filter(|&x| x > 0.0).collect();
    if nz.is_empty() {
        return 0.0;
    }
    let all_positive = nz.len() == d.len();
    let v = if all_positive { &mut d } else { &mut nz };
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[derive(Debug, Clone)]
pub struct Bipartition {
    /// 0 for the side holding index 0, 1 for the other side.
    pub sides: Vec<u8>,
    pub fiedler: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
}

/// Second eigenvector of `I − D^{-1/2} W D^{-1/2}`, thresholded at zero.
pub fn ncut_bipartition(w: &Matrix) -> Result<Bipartition> {
    let n = w.rows();
    if w.cols() != n {
        return Err(Error::Shape(format!("affinity must be square, got {:?}", w.shape())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("bipartition needs at least two vertices".into()));
    }
    for s in 0..n {
        for t in 0..n {
            let v = w[(s, t)];
            if !(v >= 0.0) || (v - w[(t, s)]).abs() > 1e-12 {
                return Err(Error::InvalidArgument("affinity must be symmetric and nonnegative".into()));
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|s| w.row(s).iter().sum()).collect();
    if let Some(s) = deg.iter().position(|&d| d <= 0.0) {
        return Err(Error::InvalidArgument(format!("vertex {s} has zero affinity sum")));
    }
    let connected = (0..n).any(|s| (0..n).any(|t| s != t && w[(s, t)] > 0.0));
    if !connected {
        return Err(Error::InvalidArgument("affinity graph is fully disconnected".into()));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let lap = Array2::from_shape_fn((n, n), |(s, t)| {
        let id = if s == t { 1.0 } else { 0.0 };
        id - inv_sqrt[s] * w[(s, t)] * inv_sqrt[t]
    });
    let (values, vectors) = lap
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Divergence(format!("eigen decomposition failed: {e}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let k = order[1];
    let lambda = values[k];
    let v = vectors.column(k).to_owned();
    let residual = (lap.dot(&v) - &v * lambda).mapv(|x| x * x).sum().sqrt();
    assert!(
        residual <= EIGEN_RESIDUAL_BOUND,
        "eigen residual {residual:e} exceeds {EIGEN_RESIDUAL_BOUND:e}"
    );
    let fiedler: Vec<f64> = v.iter().copied().collect();
    let positive = |x: f64| x > 0.0;
    let anchor = positive(fiedler[0]);
    let sides = fiedler.iter().map(|&x| u8::from(positive(x) != anchor)).collect();
    Ok(Bipartition {
        sides,
        fiedler,
        eigenvalue: lambda,
        residual,
    })
}

/// `cut/vol(A) + cut/vol(B)`
pub fn ncut_value(w: &Matrix, sides: &[u8]) -> f64 {
    let n = w.rows();
    let (mut cut, mut vol) = (0.0, [0.0, 0.0]);
    for s in 0..n {
        for t in 0..n {
            let a = w[(s, t)];
            vol[sides[s] as usize] += a;
            if sides[s] != sides[t] {
                cut += a;
            }
        }
    }
    cut *= 0.5;
    if vol[0] == 0.0 || vol[1] == 0.0 {
        return f64::INFINITY;
    }
    cut / vol[0] + cut / vol[1]
}

fn all_rows_equal(f: &Matrix) -> bool {
    (1..f.rows()).all(|t| f.row(t) == f.row(0))
}

fn padded_cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let pad = |x: &[f64]| {
        let mut v = x.to_vec();
        v.resize(n, 0.0);
        v
    };
    cosine_similarity(&pad(a), &pad(b), 1e-12)
}

/// Frame partition for one video, shared by every center.
#[derive(Debug, Clone)]
pub enum FramePartition {
    /// `T = 1` or constant features: every frame is positive.
    Degenerate,
    Split(Vec<u8>),
}

/// Partition of the rows of `f`. Appending the same center to every frame
/// leaves all pairwise distances unchanged, so this equals the partition of
/// `[f_t ; c]` for any `c`.
pub fn partition_frames(f: &Matrix, sigma: Option<f64>) -> Result<FramePartition> {
    if f.rows() < 2 {
        return Ok(FramePartition::Degenerate);
    }
    if all_rows_equal(f) {
        log::warn!("constant-feature video: labels fall back to all ones");
        return Ok(FramePartition::Degenerate);
    }
    let sigma = sigma.unwrap_or_else(|| median_pairwise_distance(f));
    let w = gaussian_affinity(f, sigma)?;
    Ok(FramePartition::Split(ncut_bipartition(&w)?.sides))
}

/// Orients a two-sided partition: the side whose mean row is closer in cosine
/// to `c` becomes 1. Ties go to the smaller side, then to the side without frame 0.
pub fn orient(f: &Matrix, partition: &FramePartition, c: &[f64]) -> Vec<u8> {
    let sides = match partition {
        FramePartition::Degenerate => return vec![1; f.rows()],
        FramePartition::Split(s) => s,
    };
    let members = |side: u8| -> Vec<usize> { (0..f.rows()).filter(|&t| sides[t] == side).collect() };
    let (a, b) = (members(0), members(1));
    if b.is_empty() {
        return vec![1; f.rows()];
    }
    let sim_a = padded_cosine(&f.mean_rows(&a), c);
    let sim_b = padded_cosine(&f.mean_rows(&b), c);
    let positive = if (sim_a - sim_b).abs() > 1e-12 {
        if sim_a > sim_b {
            0
        } else {
            1
        }
    } else if a.len() < b.len() {
        0
    } else {
        1
    };
    sides.iter().map(|&s| u8::from(s == positive)).collect()
}

/// Labels for one video and one center, partitioning `[f_t ; c]` directly.
pub fn init_pseudo_labels(f: &Matrix, c: &[f64], sigma: Option<f64>) -> Result<Vec<u8>> {
    if f.rows() == 1 {
        return Ok(vec![1]);
    }
    if all_rows_equal(f) {
        log::warn!("constant-feature video: labels fall back to all ones");
        return Ok(vec![1; f.rows()]);
    }
    let joined = Matrix::from_fn(f.rows(), f.cols() + c.len(), |t, k| {
        if k < f.cols() {
            f[(t, k)]
        } else {
            c[k - f.cols()]
        }
    });
    let sigma = sigma.unwrap_or_else(|| median_pairwise_distance(&joined));
    let w = gaussian_affinity(&joined, sigma)?;
    let part = FramePartition::Split(ncut_bipartition(&w)?.sides);
    Ok(orient(f, &part, c))
}

/// Same rule on learned features `F̂` and projected centers.
pub fn update_pseudo_labels(f_hat: &Matrix, c_hat: &[f64], sigma: Option<f64>) -> Result<Vec<u8>> {
    init_pseudo_labels(f_hat, c_hat, sigma)
}

/// `N_c × T` labels (0/1) for each center against one video.
pub fn label_matrix(f: &Matrix, centers: &Matrix, sigma: Option<f64>) -> Result<Matrix> {
    let part = partition_frames(f, sigma)?;
    let mut y = Matrix::zeros(centers.rows(), f.rows());
    for j in 0..centers.rows() {
        let row = orient(f, &part, centers.row(j));
        for (dst, &v) in y.row_mut(j).iter_mut().zip(&row) {
            *dst = v as f64;
        }
    }
    Ok(y)
}

/// Labels for every video (outer) and neck index (inner).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStore {
    pub video_ids: Vec<String>,
    /// `labels[v][i]` is `N_c × T_v`.
    pub labels: Vec<Vec<Matrix>>,
}

impl LabelStore {
    /// Computes `label_matrix` per (video, neck) in parallel. `features[v][i]`
    /// is the frame representation of video `v` used at neck index `i`, and
    /// `centers[i]` the matching centers.
    pub fn compute(
        video_ids: Vec<String>,
        features: &[Vec<&Matrix>],
        centers: &[&Matrix],
        sigma: Option<f64>,
    ) -> Result<Self> {
        let labels = features
            .par_iter()
            .map(|per_neck| {
                per_neck
                    .iter()
                    .zip(centers)
                    .map(|(f, c)| label_matrix(f, c, sigma))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { video_ids, labels })
    }

    /// Fraction of entries that differ.
    pub fn change_rate(&self, other: &LabelStore) -> f64 {
        let (mut diff, mut total) = (0usize, 0usize);
        for (a, b) in self.labels.iter().flatten().zip(other.labels.iter().flatten()) {
            total += a.len();
            diff += a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| x != y).count();
        }
        if total == 0 {
            0.0
        } else {
            diff as f64 / total as f64
        }
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("labels");
        a.meta.insert("video_ids".into(), self.video_ids.join("\n"));
        a.meta.insert("necks".into(), self.labels.first().map_or(0, Vec::len).to_string());
        for (v, per_neck) in self.video_ids.iter().zip(&self.labels) {
            for (i, y) in per_neck.iter().enumerate() {
                a.insert(format!("{v}#{i}"), TensorDtype::U8, y.clone());
            }
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let video_ids: Vec<String> = a
            .meta_value("video_ids")?
            .split('\n')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let necks: usize = a
            .meta_value("necks")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad neck count".into()))?;
        let mut labels = Vec::with_capacity(video_ids.len());
        for v in &video_ids {
            labels.push(
                (0..necks)
                    .map(|i| a.require(&format!("{v}#{i}")).cloned())
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { video_ids, labels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load_kind(path, "labels")?)
    }

    pub fn to_tensors(&self, prefix: &str) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        for (v, per_neck) in self.labels.iter().enumerate() {
            for (i, y) in per_neck.iter().enumerate() {
                out.insert(format!("{prefix}{v}.{i}"), y.clone());
            }
        }
        out
    }

    pub fn from_tensors(
        video_ids: Vec<String>,
        necks: usize,
        tensors: &BTreeMap<String, Matrix>,
        prefix: &str,
    ) -> Result<Self> {
        let mut labels = Vec::with_capacity(video_ids.len());
        for v in 0..video_ids.len() {
            let mut per_neck = Vec::with_capacity(necks);
            for i in 0..necks {
                let key = format!("{prefix}{v}.{i}");
                per_neck.push(
                    tensors
                        .get(&key)
                        .cloned()
                        .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {key}")))?,
                );
            }
            labels.push(per_neck);
        }
        Ok(Self { video_ids, labels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affinity_plug_in_values() {
        let sigma = 0.7;
        let p = Matrix::from_rows(&[vec![0.0, 0.0], vec![sigma * 2f64.sqrt(), 0.0], vec![0.0, 0.0]]);
        let w = gaussian_affinity(&p, sigma).unwrap();
        assert!((w[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(w[(0, 2)], 1.0);
        assert_eq!(w[(1, 1)], 1.0);
        assert!(gaussian_affinity(&p, 0.0).is_err());
        assert!(gaussian_affinity(&p, -1.0).is_err());
    }

    #[test]
    fn two_points_split() {
        let p = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        let b = ncut_bipartition(&gaussian_affinity(&p, 1.0).unwrap()).unwrap();
        assert_eq!(b.sides, vec![0, 1]);
    }

    #[test]
    fn cliques_are_separated() {
        let mut w = Matrix::filled(6, 6, 1e-6);
        for s in 0..6 {
            for t in 0..6 {
                if (s < 3) == (t < 3) {
                    w.row_mut(s)[t] = 1.0;
                }
            }
        }
        let b = ncut_bipartition(&w).unwrap();
        assert_eq!(b.sides, vec![0, 0, 0, 1, 1, 1]);
        assert!(b.residual <= EIGEN_RESIDUAL_BOUND);
    }

    #[test]
    fn bad_affinities_rejected() {
        let mut w = Matrix::identity(3);
        assert!(ncut_bipartition(&w).is_err());
        w.row_mut(2)[2] = 0.0;
        w.row_mut(0)[1] = 0.5;
        w.row_mut(1)[0] = 0.5;
        assert!(ncut_bipartition(&w).is_err());
    }

    #[test]
    fn two_regimes_with_center_near_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 1.0];
        let f = Matrix::from_fn(12, 3, |t, k| {
            let base = if (4..9).contains(&t) { a[k] } else { b[k] };
            base + rng.gen_range(-0.05..0.05)
        });
        let y = init_pseudo_labels(&f, &[0.9, 0.1, 0.0], None).unwrap();
        let expected: Vec<u8> = (0..12).map(|t| u8::from((4..9).contains(&t))).collect();
        assert_eq!(y, expected);
    }

    #[test]
    fn constant_and_single_frame_videos() {
        assert_eq!(init_pseudo_labels(&Matrix::filled(5, 2, 0.3), &[1.0], None).unwrap(), vec![1; 5]);
        assert_eq!(init_pseudo_labels(&Matrix::filled(1, 2, 0.3), &[1.0], None).unwrap(), vec![1]);
    }

    #[test]
    fn center_equal_to_first_frame() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        assert_eq!(init_pseudo_labels(&f, &[1.0, 2.0, 0.0], None).unwrap(), vec![1, 0]);
    }

    #[test]
    fn cached_partition_matches_direct_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let f = Matrix::from_fn(9, 4, |_, _| rng.gen_range(-1.0..1.0));
            let centers = Matrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
            let y = label_matrix(&f, &centers, None).unwrap();
            for j in 0..3 {
                let direct = init_pseudo_labels(&f, centers.row(j), None).unwrap();
                let row: Vec<u8> = y.row(j).iter().map(|&x| x as u8).collect();
                assert_eq!(row, direct);
            }
        }
    }

    #[test]
    fn store_round_trip_and_change_rate() {
        let a = LabelStore {
            video_ids: vec!["v0".into(), "v1".into()],
            labels: vec![
                vec![Matrix::from_rows(&[vec![1.0, 0.0, 1.0]])],
                vec![Matrix::from_rows(&[vec![0.0, 0.0]])],
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.tvga");
        a.save(&p).unwrap();
        let back = LabelStore::load(&p).unwrap();
        assert_eq!(back, a);
        let mut b = a.clone();
        b.labels[1][0].row_mut(0)[1] = 1.0;
        assert!((a.change_rate(&b) - 0.2).abs() < 1e-15);
        let t = LabelStore::from_tensors(a.video_ids.clone(), 1, &a.to_tensors("y."), "y.").unwrap();
        assert_eq!(t, a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn affinity_symmetric_unit_diagonal(seed in 0u64..10_000, n in 1usize..8, sigma in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0));
            let w = gaussian_affinity(&p, sigma).unwrap();
            for s in 0..n {
                prop_assert_eq!(w[(s, s)], 1.0);
                for t in 0..n {
                    prop_assert_eq!(w[(s, t)], w[(t, s)]);
                    prop_assert!(w[(s, t)] >= 0.0 && w[(s, t)] <= 1.0);
                    // exp underflows past ~745
                    let e = squared_distance(p.row(s), p.row(t)) / (2.0 * sigma * sigma);
                    if e < 700.0 {
                        prop_assert!(w[(s, t)] > 0.0);
                    }
                }
            }
        }

        #[test]
        fn labels_invariant_to_common_scaling(seed in 0u64..10_000, scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Matrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sigma = 0.8;
            let y = init_pseudo_labels(&f, &c, Some(sigma)).unwrap();
            let cs: Vec<f64> = c.iter().map(|x| x * scale).collect();
            let ys = init_pseudo_labels(&f.scale(scale), &cs, Some(sigma * scale)).unwrap();
            prop_assert_eq!(&y, &ys);
            prop_assert_eq!(y, init_pseudo_labels(&f, &c, Some(sigma)).unwrap());
        }
    }
}
