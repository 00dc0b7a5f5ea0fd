//! Iterative learning of the video module against refreshed pseudo labels.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archive::Checkpoint;
use crate::autodiff::Graph;
use crate::clustering::ClusterBank;
use crate::config::Config;
use crate::data::FrameFeatureSequence;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::pseudo::{label_matrix, LabelStore};
use crate::tensor::Matrix;
use crate::video::{BatchVideo, VideoDims, VideoModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub neck: usize,
    pub step: usize,
    pub cls: f64,
    pub sab: f64,
    pub trip: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeckMetrics {
    pub iteration: usize,
    pub neck: usize,
    pub mean_cls: f64,
    pub mean_sab: f64,
    pub mean_trip: f64,
    pub change_rate: f64,
    pub degenerate_triplets: usize,
}

pub fn metrics_csv(metrics: &[NeckMetrics]) -> String {
    let mut s = String::from("iteration,neck,mean_l_cls,mean_l_sab,mean_l_trip,label_change_rate\n");
    for m in metrics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m.iteration, m.neck, m.mean_cls, m.mean_sab, m.mean_trip, m.change_rate
        );
    }
    s
}

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("iteration,neck,step,l_cls,l_sab,l_trip,l_v\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iteration, r.neck, r.step, r.cls, r.sab, r.trip, r.total
        );
    }
    s
}

/// Everything needed to continue a run.
pub struct TrainState {
    pub model: VideoModel,
    pub optimizer: Adam,
    pub labels: LabelStore,
    pub rng: ChaCha8Rng,
    /// Completed outer iterations.
    pub iteration: usize,
    pub history: Vec<StepRecord>,
    pub metrics: Vec<NeckMetrics>,
}

const LABEL_PREFIX: &str = "labels.";

impl TrainState {
    pub fn to_checkpoint(&self, cfg: &Config) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint(cfg, self.iteration, &self.rng);
        ckpt.tensors.extend(self.optimizer.to_tensors(&self.model.store, "adam."));
        ckpt.tensors.extend(self.labels.to_tensors(LABEL_PREFIX));
        ckpt.extra.insert("video_ids".into(), self.labels.video_ids.join("\n"));
        ckpt.extra.insert("history".into(), history_csv(&self.history));
        ckpt.extra.insert("metrics".into(), metrics_csv(&self.metrics));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let model = VideoModel::from_checkpoint(ckpt)?;
        let mut optimizer = Adam::new(ckpt.config.lr_video);
        optimizer.restore(&model.store, &ckpt.tensors, "adam.")?;
        let video_ids: Vec<String> = ckpt
            .extra
            .get("video_ids")
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no label store".into()))?
            .split('\n')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let labels = LabelStore::from_tensors(video_ids, ckpt.config.necks, &ckpt.tensors, LABEL_PREFIX)?;
        let history = parse_history(ckpt.extra.get("history").map_or("", String::as_str))?;
        let metrics = parse_metrics(ckpt.extra.get("metrics").map_or("", String::as_str))?;
        Ok(Self {
            model,
            optimizer,
            labels,
            rng: ckpt.rng.restore(),
            iteration: ckpt.iteration,
            history,
            metrics,
        })
    }
}

fn parse_rows(text: &str, cols: usize) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v = l
                .split(',')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidArgument(format!("bad history row {l}")))?;
            if v.len() != cols {
                return Err(Error::InvalidArgument(format!("bad history row {l}")));
            }
            Ok(v)
        })
        .collect()
}

fn parse_history(text: &str) -> Result<Vec<StepRecord>> {
    Ok(parse_rows(text, 7)?
        .into_iter()
        .map(|r| StepRecord {
            iteration: r[0] as usize,
            neck: r[1] as usize,
            step: r[2] as usize,
            cls: r[3],
            sab: r[4],
            trip: r[5],
            total: r[6],
        })
        .collect())
}

fn parse_metrics(text: &str) -> Result<Vec<NeckMetrics>> {
    Ok(parse_rows(text, 6)?
        .into_iter()
        .map(|r| NeckMetrics {
            iteration: r[0] as usize,
            neck: r[1] as usize,
            mean_cls: r[2],
            mean_sab: r[3],
            mean_trip: r[4],
            change_rate: r[5],
            degenerate_triplets: 0,
        })
        .collect())
}

fn check_inputs(videos: &[FrameFeatureSequence], bank: &ClusterBank, cfg: &Config) -> Result<()> {
    if videos.is_empty() {
        return Err(Error::Empty("no training videos".into()));
    }
    if bank.necks() != cfg.necks || bank.dim() != cfg.neck_dim {
        return Err(Error::Shape(format!(
            "cluster bank has {} necks of dim {}, config expects {} of dim {}",
            bank.necks(),
            bank.dim(),
            cfg.necks,
            cfg.neck_dim
        )));
    }
    if cfg.centers_per_batch > bank.clusters() {
        return Err(Error::Config(format!(
            "cannot sample {} centers from {}",
            cfg.centers_per_batch,
            bank.clusters()
        )));
    }
    Ok(())
}

/// Labels from raw frames and raw centers.
pub fn initial_labels(videos: &[FrameFeatureSequence], bank: &ClusterBank, cfg: &Config) -> Result<LabelStore> {
    let features: Vec<Vec<&Matrix>> = videos
        .iter()
        .map(|v| vec![&v.features; bank.necks()])
        .collect();
    let centers: Vec<&Matrix> = bank.centers.iter().collect();
    LabelStore::compute(
        videos.iter().map(|v| v.video_id.clone()).collect(),
        &features,
        &centers,
        cfg.ncut_sigma,
    )
}

/// Labels of every video at one neck index, from learned `F̂` and projected centers.
pub fn refreshed_labels(model: &VideoModel, videos: &[FrameFeatureSequence], neck: usize, centers: &Matrix, cfg: &Config) -> Result<Vec<Matrix>> {
    use rayon::prelude::*;
    let c_hat = model.project_centers(neck, centers)?;
    videos
        .par_iter()
        .map(|v| {
            let f_hat = model.encode_frames(&v.features)?;
            label_matrix(&f_hat, &c_hat, cfg.ncut_sigma)
        })
        .collect()
}

pub fn init_state(videos: &[FrameFeatureSequence], bank: &ClusterBank, cfg: &Config) -> Result<TrainState> {
    cfg.validate()?;
    check_inputs(videos, bank, cfg)?;
    let dim = videos[0].dim();
    let model = VideoModel::new(VideoDims::new(cfg, dim), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    Ok(TrainState {
        model,
        optimizer: Adam::new(cfg.lr_video),
        labels: initial_labels(videos, bank, cfg)?,
        rng,
        iteration: 0,
        history: Vec::new(),
        metrics: Vec::new(),
    })
}

/// One outer iteration: for each neck index, a pass over all videos in
/// batches of `Z`, then a label refresh at that neck index.
pub fn run_iteration(state: &mut TrainState, videos: &[FrameFeatureSequence], bank: &ClusterBank, cfg: &Config) -> Result<()> {
    let iteration = state.iteration + 1;
    let z = cfg.videos_per_batch.max(1);
    for neck in 0..cfg.necks {
        let centers = &bank.centers[neck];
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut state.rng);
        let (mut sum_cls, mut sum_sab, mut sum_trip, mut degenerate) = (0.0, 0.0, 0.0, 0);
        let steps = order.len().div_ceil(z);
        for (step, chunk) in order.chunks(z).enumerate() {
            let sampled = index::sample(&mut state.rng, centers.rows(), cfg.centers_per_batch).into_vec();
            let batch: Vec<BatchVideo<'_>> = chunk
                .iter()
                .map(|&v| BatchVideo {
                    frames: &videos[v].features,
                    labels: &state.labels.labels[v][neck],
                })
                .collect();
            let (vals, grads, skipped) = {
                let mut g = Graph::new(&state.model.store);
                let out = state.model.batch_loss(&mut g, neck, centers, &sampled, &batch, cfg);
                let p = out.parts;
                let mean = g.scale(p.total, 1.0 / chunk.len() as f64);
                let vals = [g.scalar(p.cls), g.scalar(p.sab), g.scalar(p.trip), g.scalar(p.total)];
                (vals, g.backward(mean), out.degenerate_triplets)
            };
            if !vals.iter().all(|x| x.is_finite()) || !grads.is_finite() {
                let ids: Vec<&str> = chunk.iter().map(|&v| videos[v].video_id.as_str()).collect();
                return Err(Error::Divergence(format!(
                    "video loss at iteration {iteration}, neck {neck}, step {step}; batch {}",
                    ids.join(",")
                )));
            }
            state.optimizer.step(&mut state.model.store, &grads);
            sum_cls += vals[0];
            sum_sab += vals[1];
            sum_trip += vals[2];
            degenerate += skipped;
            state.history.push(StepRecord {
                iteration,
                neck,
                step,
                cls: vals[0],
                sab: vals[1],
                trip: vals[2],
                total: vals[3],
            });
        }
        let fresh = refreshed_labels(&state.model, videos, neck, centers, cfg)?;
        let (mut diff, mut total) = (0usize, 0usize);
        for (v, y) in fresh.into_iter().enumerate() {
            let old = &state.labels.labels[v][neck];
            total += y.len();
            diff += y.as_slice().iter().zip(old.as_slice()).filter(|(a, b)| a != b).count();
            state.labels.labels[v][neck] = y;
        }
        let n = steps.max(1) as f64;
        let m = NeckMetrics {
            iteration,
            neck,
            mean_cls: sum_cls / n,
            mean_sab: sum_sab / n,
            mean_trip: sum_trip / n,
            change_rate: if total == 0 { 0.0 } else { diff as f64 / total as f64 },
            degenerate_triplets: degenerate,
        };
        log::info!(
            "iteration {iteration} neck {neck}: L_cls {:.4} L_sab {:.4} L_trip {:.4} label change {:.4}",
            m.mean_cls,
            m.mean_sab,
            m.mean_trip,
            m.change_rate
        );
        state.metrics.push(m);
    }
    state.iteration = iteration;
    Ok(())
}

/// Runs iterations until `cfg.iterations` are complete. `observe` is called
/// after each iteration with the state (e.g. to checkpoint or audit labels).
pub fn run_training(
    state: &mut TrainState,
    videos: &[FrameFeatureSequence],
    bank: &ClusterBank,
    cfg: &Config,
    mut observe: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    check_inputs(videos, bank, cfg)?;
    if state.labels.video_ids.len() != videos.len()
        || state.labels.video_ids.iter().zip(videos).any(|(a, v)| *a != v.video_id)
    {
        return Err(Error::InvalidArgument("label store does not match the video set".into()));
    }
    while state.iteration < cfg.iterations {
        run_iteration(state, videos, bank, cfg)?;
        observe(state)?;
    }
    Ok(())
}
