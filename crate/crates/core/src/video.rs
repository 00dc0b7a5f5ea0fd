//! Frame encoder, the specific and foreground attention branches, and the
//! video-side losses.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{Checkpoint, RngState};
use crate::autodiff::{softmax_rows, Graph, ParamId, ParamStore, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::nn::{restore_tensors, store_tensors, uniform_init, Linear};
use crate::tensor::{cosine_similarity, Matrix};

pub const COSINE_EPS: f64 = 1e-8;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoDims {
    pub feature_dim: usize,
    pub neck_dim: usize,
    pub joint_dim: usize,
    pub heads: usize,
    pub necks: usize,
}

impl VideoDims {
    pub fn new(cfg: &Config, feature_dim: usize) -> Self {
        Self {
            feature_dim,
            neck_dim: cfg.neck_dim,
            joint_dim: cfg.joint_dim,
            heads: cfg.attention_heads,
            necks: cfg.necks,
        }
    }
}

pub struct VideoModel {
    pub store: ParamStore,
    pub dims: VideoDims,
    frame_proj: Linear,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    center_proj: Vec<Linear>,
    conv1: Linear,
    conv2: Linear,
    fore_head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecificAttention {
    /// `N_c × T`, row-stochastic.
    pub a: Matrix,
    /// `(1 − A) / T`
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundOutputs {
    /// `T × d_e'`
    pub features: Matrix,
    pub a_fore: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

impl VideoModel {
    pub fn new(dims: VideoDims, seed: u64) -> Result<Self> {
        if dims.heads == 0 || dims.joint_dim % dims.heads != 0 {
            return Err(Error::Config(format!(
                "joint_dim {} must be a multiple of attention_heads {}",
                dims.joint_dim, dims.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut store = ParamStore::new();
        let d = dims.joint_dim;
        let frame_proj = Linear::new(&mut store, "frame_proj", dims.feature_dim, d, &mut rng);
        let wq = store.add("attn.wq", uniform_init(&mut rng, d, d, d));
        let wk = store.add("attn.wk", uniform_init(&mut rng, d, d, d));
        let wv = store.add("attn.wv", uniform_init(&mut rng, d, d, d));
        let wo = store.add("attn.wo", uniform_init(&mut rng, d, d, d));
        let center_proj = (0..dims.necks)
            .map(|i| Linear::new(&mut store, &format!("center_proj{i}"), dims.neck_dim, d, &mut rng))
            .collect();
        let conv1 = Linear::new(&mut store, "fore.conv1", 3 * dims.feature_dim, d, &mut rng);
        let conv2 = Linear::new(&mut store, "fore.conv2", 3 * d, d, &mut rng);
        let fore_head = Linear::new(&mut store, "fore.head", d, 1, &mut rng);
        Ok(Self {
            store,
            dims,
            frame_proj,
            wq,
            wk,
            wv,
            wo,
            center_proj,
            conv1,
            conv2,
            fore_head,
        })
    }

    pub fn zero_foreground_head(&mut self) {
        self.fore_head.zero(&mut self.store);
    }

    pub fn zero_attention_output(&mut self) {
        self.store.get_mut(self.wo).as_mut_slice().fill(0.0);
    }

    fn check_frames(&self, f: &Matrix) -> Result<()> {
        if f.rows() == 0 || f.cols() != self.dims.feature_dim {
            return Err(Error::Shape(format!(
                "frames are {:?}, model expects T × {}",
                f.shape(),
                self.dims.feature_dim
            )));
        }
        Ok(())
    }

    /// Affine projection, then one multi-head self-attention layer with a residual.
    pub fn encode_frames_graph(&self, g: &mut Graph<'_>, f: Var) -> Var {
        let x = self.frame_proj.forward(g, f);
        let (wq, wk, wv, wo) = (g.param(self.wq), g.param(self.wk), g.param(self.wv), g.param(self.wo));
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let dh = self.dims.joint_dim / self.dims.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.dims.heads);
        for h in 0..self.dims.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            heads.push(g.matmul(a, vh));
        }
        let o = g.concat_cols(&heads);
        let o = g.matmul(o, wo);
        g.add(x, o)
    }

    pub fn project_centers_graph(&self, g: &mut Graph<'_>, neck: usize, centers: Var) -> Var {
        self.center_proj[neck].forward(g, centers)
    }

    /// `A = softmax_rows(Ĉ F̂ᵀ)`, `B = (1 − A)/T`.
    pub fn specific_attention_graph(g: &mut Graph<'_>, c_hat: Var, f_hat: Var) -> (Var, Var) {
        let t = g.shape(f_hat).0 as f64;
        let logits = g.matmul_t(c_hat, f_hat);
        let a = g.softmax_rows(logits);
        let b = g.scale(a, -1.0 / t);
        let b = g.add_scalar(b, 1.0 / t);
        (a, b)
    }

    /// Returns `(F̃, A_fore)` with `A_fore` as a `T × 1` column.
    pub fn foreground_graph(&self, g: &mut Graph<'_>, f: Var) -> (Var, Var) {
        let w = g.temporal_window(f, 1);
        let h = self.conv1.forward(g, w);
        let h = g.tanh(h);
        let w2 = g.temporal_window(h, 1);
        let ft = self.conv2.forward(g, w2);
        let s = self.fore_head.forward(g, ft);
        let a = g.sigmoid(s);
        (ft, a)
    }

    pub fn encode_frames(&self, f: &Matrix) -> Result<Matrix> {
        self.check_frames(f)?;
        let mut g = Graph::new(&self.store);
        let fv = g.constant(f.clone());
        let out = self.encode_frames_graph(&mut g, fv);
        Ok(g.value(out).clone())
    }

    pub fn project_centers(&self, neck: usize, centers: &Matrix) -> Result<Matrix> {
        if neck >= self.dims.necks || centers.cols() != self.dims.neck_dim {
            return Err(Error::Shape(format!(
                "neck {neck} with centers {:?}; model has {} necks of dim {}",
                centers.shape(),
                self.dims.necks,
                self.dims.neck_dim
            )));
        }
        let mut g = Graph::new(&self.store);
        let c = g.constant(centers.clone());
        let out = self.project_centers_graph(&mut g, neck, c);
        Ok(g.value(out).clone())
    }

    pub fn foreground_attention(&self, f: &Matrix) -> Result<ForegroundOutputs> {
        self.check_frames(f)?;
        let mut g = Graph::new(&self.store);
        let fv = g.constant(f.clone());
        let (ft, a) = self.foreground_graph(&mut g, fv);
        Ok(ForegroundOutputs {
            features: g.value(ft).clone(),
            a_fore: g.value(a).as_slice().to_vec(),
        })
    }

    pub fn to_checkpoint(&self, cfg: &Config, iteration: usize, rng: &ChaCha8Rng) -> Checkpoint {
        Checkpoint {
            iteration,
            config: cfg.clone(),
            rng: RngState::capture(rng),
            tensors: store_tensors(&self.store, "video."),
            extra: BTreeMap::from([
                ("model".to_string(), "video".to_string()),
                ("feature_dim".to_string(), self.dims.feature_dim.to_string()),
            ]),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.extra.get("model").map(String::as_str) != Some("video") {
            return Err(Error::InvalidArgument("not a video model checkpoint".into()));
        }
        let feature_dim = ckpt
            .extra
            .get("feature_dim")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::InvalidArgument("checkpoint lacks feature_dim".into()))?;
        let mut model = Self::new(VideoDims::new(&ckpt.config, feature_dim), ckpt.config.seed)?;
        restore_tensors(&mut model.store, &ckpt.tensors, "video.")?;
        Ok(model)
    }
}

pub fn specific_attention(c_hat: &Matrix, f_hat: &Matrix) -> Result<SpecificAttention> {
    if c_hat.cols() != f_hat.cols() {
        return Err(Error::Shape(format!(
            "centers have dim {}, frames {}",
            c_hat.cols(),
            f_hat.cols()
        )));
    }
    let t = f_hat.rows() as f64;
    let a = softmax_rows(&c_hat.matmul_t(f_hat));
    let b = a.map(|x| (1.0 - x) / t);
    Ok(SpecificAttention { a, b })
}

/// `A[j,:] F̂` or `B[j,:] F̂`.
pub fn compose_activity(att: &SpecificAttention, f_hat: &Matrix, j: usize, sign: Sign) -> Result<Vec<f64>> {
    let w = match sign {
        Sign::Positive => &att.a,
        Sign::Negative => &att.b,
    };
    if j >= w.rows() {
        return Err(Error::InvalidArgument(format!("center {j} out of range {}", w.rows())));
    }
    if w.cols() != f_hat.rows() {
        return Err(Error::Shape("attention width differs from frame count".into()));
    }
    Ok(w.row_matrix(j).matmul(f_hat).into_vec())
}

/// `Σ_j Σ_v Σ_{u≠v} (max[d(p_v,p_u) − τ1, 0] + θ·max[d(p_v,p_u) − d(p_v,n_v) + τ2, 0])`
/// where `pos[v]` and `neg[v]` are `J × d` blocks of composed activities.
pub fn sab_graph(g: &mut Graph<'_>, pos: &[Var], neg: &[Var], cfg: &Config) -> Var {
    let z = pos.len();
    let mut terms = Vec::new();
    for v in 0..z {
        let d_pn = g.cosine_distance(pos[v], neg[v], COSINE_EPS);
        for u in 0..z {
            if u == v {
                continue;
            }
            let d_pp = g.cosine_distance(pos[v], pos[u], COSINE_EPS);
            let sim = g.add_scalar(d_pp, -cfg.tau1);
            let sim = g.relu(sim);
            let dis = g.sub(d_pp, d_pn);
            let dis = g.add_scalar(dis, cfg.tau2);
            let dis = g.relu(dis);
            let dis = g.scale(dis, cfg.theta);
            let both = g.add(sim, dis);
            terms.push(g.sum(both));
        }
    }
    if terms.is_empty() {
        return g.constant(Matrix::zeros(1, 1));
    }
    let cat = g.concat_rows(&terms);
    g.sum(cat)
}

fn pairwise_cosine_distance(f: &Matrix) -> Matrix {
    let t = f.rows();
    Matrix::from_fn(t, t, |a, b| 1.0 - cosine_similarity(f.row(a), f.row(b), COSINE_EPS))
}

/// Anchor/positive/negative frame indices for one label row, or `None` when
/// the row has fewer than two foreground or no background frames.
pub fn triplet_selection(dist: &Matrix, labels: &[f64]) -> Option<Vec<(usize, usize, usize)>> {
    let fg: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] > 0.5).collect();
    let bg: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] <= 0.5).collect();
    if fg.len() < 2 || bg.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(fg.len());
    for &u in &fg {
        let mut v = usize::MAX;
        for &c in &fg {
            if c != u && (v == usize::MAX || dist[(u, c)] < dist[(u, v)]) {
                v = c;
            }
        }
        let mut o = bg[0];
        for &c in &bg {
            if dist[(u, c)] > dist[(u, o)] {
                o = c;
            }
        }
        out.push((u, v, o));
    }
    Some(out)
}

fn selector(rows: &[usize], t: usize) -> Matrix {
    let mut s = Matrix::zeros(rows.len(), t);
    for (r, &c) in rows.iter().enumerate() {
        s.row_mut(r)[c] = 1.0;
    }
    s
}

/// Triplet hinge over every label row in `labels` (`J × T`). Returns the loss
/// and the number of rows skipped as degenerate.
pub fn trip_graph(g: &mut Graph<'_>, f_tilde: Var, labels: &Matrix, tau3: f64) -> (Var, usize) {
    let t = g.shape(f_tilde).0;
    let dist = pairwise_cosine_distance(g.value(f_tilde));
    let mut triples = Vec::new();
    let mut skipped = 0;
    for j in 0..labels.rows() {
        match triplet_selection(&dist, labels.row(j)) {
            Some(tr) => triples.extend(tr),
            None => skipped += 1,
        }
    }
    if triples.is_empty() {
        return (g.constant(Matrix::zeros(1, 1)), skipped);
    }
    for &(u, v, o) in &triples {
        g.note_choice(u * t * t + v * t + o);
    }
    let pick = |g: &mut Graph<'_>, idx: Vec<usize>| {
        let s = g.constant(selector(&idx, t));
        g.matmul(s, f_tilde)
    };
    let fu = pick(g, triples.iter().map(|x| x.0).collect());
    let fv = pick(g, triples.iter().map(|x| x.1).collect());
    let fo = pick(g, triples.iter().map(|x| x.2).collect());
    let d_pos = g.cosine_distance(fu, fv, COSINE_EPS);
    let d_neg = g.cosine_distance(fu, fo, COSINE_EPS);
    let h = g.sub(d_pos, d_neg);
    let h = g.add_scalar(h, tau3);
    let h = g.relu(h);
    (g.sum(h), skipped)
}

/// BCE of `h[j,t] = A[j,t]·A_fore[t]` against `labels` (`N_c × T`).
pub fn cls_graph(g: &mut Graph<'_>, a: Var, a_fore: Var, labels: &Matrix) -> Var {
    let row = g.transpose(a_fore);
    let h = g.mul_row(a, row);
    g.bce_sum(h, labels.clone(), BCE_CLAMP)
}

#[derive(Debug, Clone, Copy)]
pub struct VideoLossParts<T> {
    pub cls: T,
    pub sab: T,
    pub trip: T,
    pub total: T,
}

pub fn combine_video(cls: f64, sab: f64, trip: f64, cfg: &Config) -> f64 {
    cls + cfg.alpha_v * sab + cfg.beta_v * trip
}

/// One batch item: frames plus current labels for the active neck index.
pub struct BatchVideo<'a> {
    pub frames: &'a Matrix,
    /// `N_c × T`
    pub labels: &'a Matrix,
}

pub struct BatchLoss {
    pub parts: VideoLossParts<Var>,
    pub degenerate_triplets: usize,
}

impl VideoModel {
    /// Summed `L_v` over the batch for neck index `neck`, with `sampled`
    /// center indices used by the specific-branch and triplet terms.
    pub fn batch_loss(
        &self,
        g: &mut Graph<'_>,
        neck: usize,
        centers: &Matrix,
        sampled: &[usize],
        batch: &[BatchVideo<'_>],
        cfg: &Config,
    ) -> BatchLoss {
        let c = g.constant(centers.clone());
        let c_hat = self.project_centers_graph(g, neck, c);
        let pick = g.constant(selector(sampled, centers.rows()));
        let mut pos = Vec::with_capacity(batch.len());
        let mut neg = Vec::with_capacity(batch.len());
        let mut cls_terms = Vec::with_capacity(batch.len());
        let mut trip_terms = Vec::with_capacity(batch.len());
        let mut degenerate = 0;
        for item in batch {
            let f = g.constant(item.frames.clone());
            let f_hat = self.encode_frames_graph(g, f);
            let (a, b) = Self::specific_attention_graph(g, c_hat, f_hat);
            let a_j = g.matmul(pick, a);
            let b_j = g.matmul(pick, b);
            pos.push(g.matmul(a_j, f_hat));
            neg.push(g.matmul(b_j, f_hat));
            let (f_tilde, a_fore) = self.foreground_graph(g, f);
            cls_terms.push(cls_graph(g, a, a_fore, item.labels));
            let (trip, skipped) = trip_graph(g, f_tilde, &item.labels.select_rows(sampled), cfg.tau3);
            degenerate += skipped;
            trip_terms.push(trip);
        }
        let cat = g.concat_rows(&cls_terms);
        let cls = g.sum(cat);
        let cat = g.concat_rows(&trip_terms);
        let trip = g.sum(cat);
        let sab = sab_graph(g, &pos, &neg, cfg);
        let wsab = g.scale(sab, cfg.alpha_v);
        let wtrip = g.scale(trip, cfg.beta_v);
        let rest = g.add(wsab, wtrip);
        let total = g.add(cls, rest);
        BatchLoss {
            parts: VideoLossParts { cls, sab, trip, total },
            degenerate_triplets: degenerate,
        }
    }

    /// `F̂`, `A_spe` and `A_fore` for one video against neck-`neck` centers.
    pub fn attention_maps(&self, neck: usize, centers: &Matrix, frames: &Matrix) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let c_hat = self.project_centers(neck, centers)?;
        let f_hat = self.encode_frames(frames)?;
        let att = specific_attention(&c_hat, &f_hat)?;
        let fore = self.foreground_attention(frames)?;
        Ok((f_hat, att.a, fore.a_fore))
    }
}

fn eval_scalar(build: impl FnOnce(&mut Graph<'_>) -> Var) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let v = build(&mut g);
    g.scalar(v)
}

/// Value of the specific-branch loss for explicit composed activities.
pub fn loss_sab(pos: &[Matrix], neg: &[Matrix], cfg: &Config) -> Result<f64> {
    if pos.len() < 2 || pos.len() != neg.len() {
        return Err(Error::InvalidArgument("loss_sab needs Z >= 2 matching blocks".into()));
    }
    Ok(eval_scalar(|g| {
        let p: Vec<Var> = pos.iter().map(|m| g.constant(m.clone())).collect();
        let n: Vec<Var> = neg.iter().map(|m| g.constant(m.clone())).collect();
        sab_graph(g, &p, &n, cfg)
    }))
}

pub fn loss_trip(f_tilde: &Matrix, labels: &[f64], tau3: f64) -> f64 {
    eval_scalar(|g| {
        let f = g.constant(f_tilde.clone());
        trip_graph(g, f, &Matrix::row_vector(labels), tau3).0
    })
}

pub fn loss_cls(a_spe: &Matrix, a_fore: &[f64], labels: &Matrix) -> Result<f64> {
    if a_spe.shape() != labels.shape() || a_fore.len() != a_spe.cols() {
        return Err(Error::Shape("loss_cls operands disagree".into()));
    }
    Ok(eval_scalar(|g| {
        let a = g.constant(a_spe.clone());
        let f = g.constant(Matrix::from_vec(a_fore.len(), 1, a_fore.to_vec()));
        cls_graph(g, a, f, labels)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> VideoModel {
        let cfg = Config {
            necks: 2,
            neck_dim: 3,
            joint_dim: 8,
            ..Config::default()
        };
        VideoModel::new(VideoDims::new(&cfg, 5), 1).unwrap()
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_frame_attention_is_residual_of_value_path() {
        let m = small();
        let f = Matrix::row_vector(&[0.1, -0.3, 0.7, 0.0, 1.0]);
        let x = f.matmul(m.store.get(m.frame_proj.w)).zip_map(m.store.get(m.frame_proj.b), |a, b| a + b);
        let v = x.matmul(m.store.get(m.wv)).matmul(m.store.get(m.wo));
        let expected = x.zip_map(&v, |a, b| a + b);
        let out = m.encode_frames(&f).unwrap();
        for (a, b) in out.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_mat(&mut rng, 6, 5);
        let perm = [3, 0, 5, 1, 4, 2];
        let out = m.encode_frames(&f).unwrap();
        let out_p = m.encode_frames(&f.select_rows(&perm)).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            for (a, b) in out_p.row(r).iter().zip(out.row(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(out, m.encode_frames(&f).unwrap());
    }

    #[test]
    fn specific_attention_cases() {
        let att = specific_attention(&Matrix::filled(3, 2, 0.4), &Matrix::row_vector(&[1.0, 2.0])).unwrap();
        assert!(att.a.as_slice().iter().all(|&x| x == 1.0));
        assert!(att.b.as_slice().iter().all(|&x| x == 0.0));
        let c = Matrix::row_vector(&[0.0, 1.0]);
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![-2.0, 0.0], vec![5.0, 0.0]]);
        let att = specific_attention(&c, &f).unwrap();
        assert!(att.a.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn compose_cases() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 4.0], vec![2.0, 2.0]]);
        let onehot = SpecificAttention {
            a: Matrix::row_vector(&[0.0, 0.0, 1.0, 0.0]),
            b: Matrix::row_vector(&[0.25, 0.25, 0.0, 0.25]),
        };
        assert_eq!(compose_activity(&onehot, &f, 0, Sign::Positive).unwrap(), vec![0.0, 4.0]);
        let uniform = SpecificAttention {
            a: Matrix::filled(1, 4, 0.25),
            b: Matrix::filled(1, 4, 0.75 / 4.0),
        };
        let mean = f.mean_rows(&[0, 1, 2, 3]);
        let p = compose_activity(&uniform, &f, 0, Sign::Positive).unwrap();
        let n = compose_activity(&uniform, &f, 0, Sign::Negative).unwrap();
        for k in 0..2 {
            assert!((p[k] - mean[k]).abs() < 1e-15);
            assert!((n[k] - 0.75 * mean[k]).abs() < 1e-15);
        }
        assert!(compose_activity(&uniform, &f, 1, Sign::Positive).is_err());
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = small();
        m.zero_foreground_head();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = m.foreground_attention(&rand_mat(&mut rng, 7, 5)).unwrap();
        assert!(out.a_fore.iter().all(|&x| x == 0.5));
        assert_eq!(out.features.shape(), (7, 8));
    }

    #[test]
    fn constant_video_has_constant_interior_foreground() {
        let m = small();
        let f = Matrix::from_fn(9, 5, |_, c| c as f64 * 0.2 - 0.3);
        let out = m.foreground_attention(&f).unwrap();
        for t in 2..7 {
            assert!((out.a_fore[t] - out.a_fore[2]).abs() < 1e-14);
        }
        assert!(out.a_fore.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn trip_all_identical_frames() {
        let f = Matrix::filled(5, 3, 0.7);
        let y = [1.0, 1.0, 0.0, 1.0, 0.0];
        assert!((loss_trip(&f, &y, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(loss_trip(&f, &[1.0, 0.0, 0.0, 0.0, 0.0], 0.5), 0.0);
        assert_eq!(loss_trip(&f, &[1.0; 5], 0.5), 0.0);
    }

    #[test]
    fn cls_half_probability_costs_ln2() {
        let v = loss_cls(&Matrix::filled(1, 1, 1.0), &[0.5], &Matrix::filled(1, 1, 1.0)).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = loss_cls(&Matrix::filled(1, 1, 1e-9), &[0.5], &Matrix::filled(1, 1, 0.0)).unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn video_loss_weighted_sum() {
        let cfg = Config {
            alpha_v: 0.0,
            beta_v: 0.0,
            ..Config::default()
        };
        assert_eq!(combine_video(1.0, 2.0, 4.0, &cfg), 1.0);
        assert_eq!(combine_video(1.0, 2.0, 4.0, &Config::default()), 4.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = Config {
            necks: 2,
            neck_dim: 3,
            joint_dim: 8,
            ..Config::default()
        };
        let m = VideoModel::new(VideoDims::new(&cfg, 5), 1).unwrap();
        let rng = ChaCha8Rng::seed_from_u64(0);
        let back = VideoModel::from_checkpoint(&m.to_checkpoint(&cfg, 2, &rng)).unwrap();
        assert_eq!(store_tensors(&back.store, ""), store_tensors(&m.store, ""));
    }
}
