//! K-means over the neck features of a query corpus.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::archive::{Archive, TensorDtype};
use crate::config::{CenterMode, Config};
use crate::error::{Error, Result};
use crate::language::NeckSet;
use crate::tensor::{squared_distance, Matrix};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest(centers: &Matrix, p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..centers.rows() {
        let d = squared_distance(centers.row(j), p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn inertia(points: &Matrix, centers: &Matrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &j)| squared_distance(points.row(i), centers.row(j)))
        .sum()
}

fn assign(points: &Matrix, centers: &Matrix) -> Vec<usize> {
    (0..points.rows()).map(|i| nearest(centers, points.row(i)).0).collect()
}

/// Greedy k-means++: each new center is the best of `2 + ⌊ln k⌋` candidates
/// drawn with probability proportional to D², judged by the resulting potential.
fn plus_plus_init(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = points.rows();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.gen_range(0..m);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| squared_distance(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = m - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                chosen
            } else {
                rng.gen_range(0..m)
            };
            let next: Vec<f64> = d2
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(squared_distance(points.row(i), points.row(pick))))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least two trials");
        centers.row_mut(c).copy_from_slice(points.row(pick));
        d2 = next;
    }
    centers
}

/// Recomputes means; an empty cluster takes the point farthest from its current center.
fn update_centers(points: &Matrix, k: usize, assignments: &mut [usize], centers: &Matrix) -> Matrix {
    let d = points.cols();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let mut far = (usize::MAX, -1.0);
        for (i, &a) in assignments.iter().enumerate() {
            if counts[a] < 2 {
                continue;
            }
            let dist = squared_distance(points.row(i), centers.row(a));
            if dist > far.1 {
                far = (i, dist);
            }
        }
        assignments[far.0] = empty;
    }
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &x) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        sums.row_mut(j).iter_mut().for_each(|x| *x *= inv);
    }
    sums
}

fn lloyd(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignments = assign(points, &centers);
    let mut last = inertia(points, &centers, &assignments);
    let scale = points.as_slice().iter().map(|x| x * x).sum::<f64>().max(1.0);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        centers = update_centers(points, k, &mut assignments, &centers);
        let after_update = inertia(points, &centers, &assignments);
        assert!(after_update <= last + 1e-12 * scale, "k-means inertia increased in update step");
        let next = assign(points, &centers);
        let after_assign = inertia(points, &centers, &next);
        assert!(after_assign <= after_update + 1e-12 * scale, "k-means inertia increased in assignment step");
        last = after_assign;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    if iterations == MAX_ITERATIONS {
        centers = update_centers(points, k, &mut assignments, &centers);
    }
    let inertia = inertia(points, &centers, &assignments);
    KMeans {
        centers,
        assignments,
        inertia,
        iterations,
    }
}

/// Best of `restarts` k-means++ runs (lowest inertia, ties to the earliest restart).
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    let m = points.rows();
    if k == 0 || m < k {
        return Err(Error::InvalidArgument(format!("k-means needs 1 <= k <= points, got k={k}, points={m}")));
    }
    if let Some((r, c)) = points.first_non_finite() {
        return Err(Error::NonFinite { row: r, col: c });
    }
    let runs: Vec<KMeans> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, k, &mut rng)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).unwrap())
}

/// `N_e` sets of `N_c` centers plus per-query assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBank {
    pub mode: CenterMode,
    pub query_ids: Vec<String>,
    /// One `N_c × d_e` matrix per neck index.
    pub centers: Vec<Matrix>,
    /// `assignments[i][q]` is the cluster of query `q` at neck index `i`.
    pub assignments: Vec<Vec<usize>>,
    pub inertia: Vec<f64>,
}

impl ClusterBank {
    pub fn necks(&self) -> usize {
        self.centers.len()
    }

    pub fn clusters(&self) -> usize {
        self.centers.first().map_or(0, Matrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Matrix::cols)
    }

    pub fn assignment(&self, neck: usize, query_id: &str) -> Option<usize> {
        let q = self.query_ids.iter().position(|x| x == query_id)?;
        Some(self.assignments[neck][q])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::new("clusters");
        a.meta.insert("mode".into(), self.mode.as_str().into());
        a.meta.insert("query_ids".into(), self.query_ids.join("\n"));
        a.meta.insert(
            "inertia".into(),
            self.inertia.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
        );
        for (i, c) in self.centers.iter().enumerate() {
            a.insert(format!("centers.{i}"), TensorDtype::F64, c.clone());
            let asg: Vec<f64> = self.assignments[i].iter().map(|&x| x as f64).collect();
            a.insert(format!("assign.{i}"), TensorDtype::F64, Matrix::from_vec(1, asg.len(), asg));
        }
        a.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a = Archive::load_kind(path, "clusters")?;
        let mode = a.meta_value("mode")?.parse()?;
        let query_ids: Vec<String> = a
            .meta_value("query_ids")?
            .split('\n')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let inertia = a
            .meta_value("inertia")?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::format(path, "bad inertia list")))
            .collect::<Result<Vec<_>>>()?;
        let mut centers = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..inertia.len() {
            centers.push(a.require(&format!("centers.{i}"))?.clone());
            let asg = a.require(&format!("assign.{i}"))?;
            assignments.push(asg.as_slice().iter().map(|&x| x as usize).collect());
        }
        Ok(Self {
            mode,
            query_ids,
            centers,
            assignments,
            inertia,
        })
    }

    /// `query_id,neck,cluster`
    pub fn assignment_table(&self) -> String {
        let mut s = String::from("query_id,neck,cluster\n");
        for (i, asg) in self.assignments.iter().enumerate() {
            for (q, &c) in asg.iter().enumerate() {
                let _ = writeln!(s, "{},{i},{c}", self.query_ids[q]);
            }
        }
        s
    }
}

/// Clusters every neck index independently. `Sample` replaces each centroid
/// with a random member of its cluster; `Random` skips clustering and takes
/// `N_c` distinct queries' necks.
pub fn build_cluster_bank(necks: &NeckSet, cfg: &Config) -> Result<ClusterBank> {
    let k = cfg.clusters;
    if necks.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} queries cannot form {k} clusters",
            necks.len()
        )));
    }
    let mut centers = Vec::new();
    let mut assignments = Vec::new();
    let mut inertias = Vec::new();
    for i in 0..necks.neck_count() {
        let points = necks.neck_points(i);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c1u64);
        rng.set_stream(i as u64);
        let km = kmeans(&points, k, cfg.seed.wrapping_add(i as u64), cfg.kmeans_restarts)?;
        let chosen = match cfg.center_mode {
            CenterMode::Center => km.centers.clone(),
            CenterMode::Sample => {
                let mut c = Matrix::zeros(k, points.cols());
                for j in 0..k {
                    let members: Vec<usize> = (0..points.rows()).filter(|&q| km.assignments[q] == j).collect();
                    let &q = members.choose(&mut rng).expect("clusters are non-empty");
                    c.row_mut(j).copy_from_slice(points.row(q));
                }
                c
            }
            CenterMode::Random => points.select_rows(&index::sample(&mut rng, points.rows(), k).into_vec()),
        };
        let asg = assign(&points, &chosen);
        inertias.push(inertia(&points, &chosen, &asg));
        centers.push(chosen);
        assignments.push(asg);
    }
    Ok(ClusterBank {
        mode: cfg.center_mode,
        query_ids: necks.ids.clone(),
        centers,
        assignments,
        inertia: inertias,
    })
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assignments: &[usize], labels: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *table.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    hits as f64 / assignments.len().max(1) as f64
}
