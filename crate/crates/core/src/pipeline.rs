//! End-to-end runs over a corpus: language model, cluster bank, video
//! module, grounding and evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::clustering::{build_cluster_bank, ClusterBank};
use crate::config::Config;
use crate::data::{EmbeddingTable, FrameFeatureSequence, QueryTokens};
use crate::error::{Error, Result};
use crate::inference::{score_curve, top_n_segments, EvalTable, GroundingResult, Segment};
use crate::language::{train_language_model, LanguageModel, NeckSet, TraceRow};
use crate::pseudo::LabelStore;
use crate::synth::{random_baseline, PlantedTruth, SyntheticCorpus, SyntheticSpec};
use crate::trainer::{init_state, run_training, NeckMetrics, StepRecord, TrainState};
use crate::video::VideoModel;

pub struct Trained {
    pub language: LanguageModel,
    pub language_trace: Vec<TraceRow>,
    pub necks: NeckSet,
    pub bank: ClusterBank,
    pub state: TrainState,
}

/// Training sees only frame features and query tokens. `observe` runs after
/// every video-module iteration.
pub fn train_pipeline(
    videos: &[FrameFeatureSequence],
    queries: &[QueryTokens],
    table: &EmbeddingTable,
    cfg: &Config,
    mut observe: impl FnMut(&ClusterBank, &TrainState) -> Result<()>,
) -> Result<Trained> {
    let lang = train_language_model(queries, table, cfg)?;
    let necks = lang.model.export_necks(queries, table)?;
    let bank = build_cluster_bank(&necks, cfg)?;
    let mut state = init_state(videos, &bank, cfg)?;
    run_training(&mut state, videos, &bank, cfg, |s| observe(&bank, s))?;
    Ok(Trained {
        language: lang.model,
        language_trace: lang.trace,
        necks,
        bank,
        state,
    })
}

/// Grounds each query in its paired video. `pairs` holds `(video index, query index)`.
pub fn ground_queries(
    model: &VideoModel,
    necks: &NeckSet,
    videos: &[FrameFeatureSequence],
    queries: &[QueryTokens],
    pairs: &[(usize, usize)],
    cfg: &Config,
) -> Result<Vec<GroundingResult>> {
    pairs
        .par_iter()
        .map(|&(v, q)| {
            let qid = &queries[q].query_id;
            let e = necks
                .get(qid)
                .ok_or_else(|| Error::InvalidArgument(format!("no necks for query {qid}")))?;
            let scores = score_curve(model, e, &videos[v].features)?;
            Ok(GroundingResult {
                video_id: videos[v].video_id.clone(),
                query_id: qid.clone(),
                segments: top_n_segments(&scores, cfg.top_n, cfg.threshold),
            })
        })
        .collect()
}

/// Mean percentage of frames where the label row of the query's own cluster
/// matches the planted mask, over all (query, neck index) pairs.
pub fn label_agreement(labels: &LabelStore, bank: &ClusterBank, truth: &[PlantedTruth]) -> Result<f64> {
    let index: BTreeMap<&str, usize> = labels
        .video_ids
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for p in truth {
        let v = *index
            .get(p.video_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("no labels for video {}", p.video_id)))?;
        for (i, y) in labels.labels[v].iter().enumerate() {
            let j = bank
                .assignment(i, &p.query_id)
                .ok_or_else(|| Error::MissingGroundTruth(vec![p.query_id.clone()]))?;
            for t in 0..y.cols() {
                let inside = t >= p.segment.start && t <= p.segment.end;
                hit += usize::from((y[(j, t)] > 0.5) == inside);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("no labelled frames to compare".into()));
    }
    Ok(100.0 * hit as f64 / total as f64)
}

pub fn truth_map(truth: &[PlantedTruth]) -> BTreeMap<String, Segment> {
    truth.iter().map(|p| (p.query_id.clone(), p.segment)).collect()
}

pub struct BenchmarkReport {
    pub agreement: Vec<f64>,
    pub eval: EvalTable,
    pub results: Vec<GroundingResult>,
    pub metrics: Vec<NeckMetrics>,
    pub history: Vec<StepRecord>,
    pub seconds: f64,
}

pub fn truth_pairs(corpus: &SyntheticCorpus) -> Vec<(usize, usize)> {
    let vids: BTreeMap<&str, usize> = corpus
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.video_id.as_str(), i))
        .collect();
    let qids: BTreeMap<&str, usize> = corpus
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| (q.query_id.as_str(), i))
        .collect();
    corpus
        .truth
        .iter()
        .map(|p| (vids[p.video_id.as_str()], qids[p.query_id.as_str()]))
        .collect()
}

/// Full synthetic run: train, track label agreement per iteration, ground
/// every planted query and evaluate.
pub fn run_benchmark(corpus: &SyntheticCorpus, cfg: &Config) -> Result<BenchmarkReport> {
    let clock = Instant::now();
    let mut agreement = Vec::new();
    let trained = train_pipeline(&corpus.videos, &corpus.queries, &corpus.table, cfg, |bank, s| {
        agreement.push(label_agreement(&s.labels, bank, &corpus.truth)?);
        log::info!("iteration {}: label agreement {:.2}", s.iteration, agreement[agreement.len() - 1]);
        Ok(())
    })?;
    let results = ground_queries(
        &trained.state.model,
        &trained.necks,
        &corpus.videos,
        &corpus.queries,
        &truth_pairs(corpus),
        cfg,
    )?;
    let eval = EvalTable::compute(&results, &truth_map(&corpus.truth))?;
    Ok(BenchmarkReport {
        agreement,
        eval,
        results,
        metrics: trained.state.metrics.clone(),
        history: trained.state.history.clone(),
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Monte-Carlo R@1 IoU=θ of the random baseline over `draws` independent runs.
pub fn random_baseline_recall(corpus: &SyntheticCorpus, spec: &SyntheticSpec, theta: f64, draws: usize) -> Result<f64> {
    let pairs: Vec<(String, String, usize)> = corpus
        .truth
        .iter()
        .map(|p| {
            let t = corpus
                .videos
                .iter()
                .find(|v| v.video_id == p.video_id)
                .map_or(0, FrameFeatureSequence::frames);
            (p.video_id.clone(), p.query_id.clone(), t)
        })
        .collect();
    let truth = truth_map(&corpus.truth);
    let total: f64 = (0..draws)
        .into_par_iter()
        .map(|d| {
            let r = random_baseline(&pairs, spec, 1, d as u64);
            crate::inference::recall_at_n(&r, &truth, 1, theta)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / draws.max(1) as f64)
}

/// Settings used for the desk-scale synthetic benchmark.
pub fn benchmark_config() -> Config {
    Config {
        necks: 4,
        clusters: 8,
        neck_dim: 16,
        mlp_hidden: 32,
        joint_dim: 64,
        sentence_dim: 32,
        attention_heads: 4,
        max_query_len: 10,
        language_epochs: 30,
        language_batch: 16,
        lr_language: 5e-3,
        lr_video: 2e-3,
        ..Config::default()
    }
}
