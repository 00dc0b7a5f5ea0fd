//! Test-time grounding by peak growing, and the R@N / IoU metric.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::softmax;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::video::{specific_attention, VideoModel};

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl Segment {
    pub fn new(start: usize, end: usize, score: f64) -> Self {
        assert!(start <= end, "segment start {start} after end {end}");
        Self { start, end, score }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Segment) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// `[start/fps, (end+1)/fps)` in seconds.
    pub fn seconds(&self, fps: f64) -> (f64, f64) {
        (self.start as f64 / fps, (self.end + 1) as f64 / fps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingResult {
    pub video_id: String,
    pub query_id: String,
    pub segments: Vec<Segment>,
}

/// Per neck: softmax over time of `A_spe[i,:] ⊙ A_fore`; then the entrywise
/// product over necks.
pub fn combine_scores(per_neck_attention: &[Vec<f64>], a_fore: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; a_fore.len()];
    for a in per_neck_attention {
        let m: Vec<f64> = a.iter().zip(a_fore).map(|(x, y)| x * y).collect();
        for (o, s) in out.iter_mut().zip(softmax(&m)) {
            *o *= s;
        }
    }
    out
}

/// Uses the query's own necks `E` (`N_e × d_e`) as centers.
pub fn score_curve(model: &VideoModel, e: &Matrix, frames: &Matrix) -> Result<Vec<f64>> {
    if e.rows() != model.dims.necks {
        return Err(Error::Shape(format!(
            "query has {} necks, model expects {}",
            e.rows(),
            model.dims.necks
        )));
    }
    let f_hat = model.encode_frames(frames)?;
    let fore = model.foreground_attention(frames)?;
    let mut per_neck = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        let c_hat = model.project_centers(i, &e.row_matrix(i))?;
        per_neck.push(specific_attention(&c_hat, &f_hat)?.a.into_vec());
    }
    Ok(combine_scores(&per_neck, &fore.a_fore))
}

/// Adds a neighbour `n` of boundary `b` while `score(n)/score(b) ≥ threshold`.
pub fn grow_segment(scores: &[f64], seed: usize, threshold: f64) -> Segment {
    let (mut start, mut end) = (seed, seed);
    loop {
        let mut grew = false;
        if start > 0 && scores[start - 1] / scores[start] >= threshold {
            start -= 1;
            grew = true;
        }
        if end + 1 < scores.len() && scores[end + 1] / scores[end] >= threshold {
            end += 1;
            grew = true;
        }
        if !grew {
            break;
        }
    }
    Segment::new(start, end, scores[seed])
}

/// Leftmost index of every plateau that is strictly above its neighbours.
pub fn local_maxima(scores: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < scores.len() {
        let mut r = t;
        while r + 1 < scores.len() && scores[r + 1] == scores[t] {
            r += 1;
        }
        let left_ok = t == 0 || scores[t - 1] < scores[t];
        let right_ok = r + 1 == scores.len() || scores[r + 1] < scores[t];
        if left_ok && right_ok {
            out.push(t);
        }
        t = r + 1;
    }
    out
}

/// Grows the `n` highest local maxima; a candidate overlapping an already
/// kept (higher-scored) segment is dropped.
pub fn top_n_segments(scores: &[f64], n: usize, threshold: f64) -> Vec<Segment> {
    let mut peaks = local_maxima(scores);
    peaks.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    peaks.truncate(n);
    let mut kept: Vec<Segment> = Vec::new();
    for p in peaks {
        let s = grow_segment(scores, p, threshold);
        if kept.iter().all(|k| !k.overlaps(&s)) {
            kept.push(s);
        }
    }
    kept
}

/// Intersection over union of inclusive frame intervals.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Percentage of queries with an IoU strictly above `theta` among the first `n` segments.
pub fn recall_at_n(results: &[GroundingResult], truth: &BTreeMap<String, Segment>, n: usize, theta: f64) -> Result<f64> {
    let missing: Vec<String> = results
        .iter()
        .filter(|r| !truth.contains_key(&r.query_id))
        .map(|r| r.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let hits = results
        .iter()
        .filter(|r| {
            let gt = &truth[&r.query_id];
            r.segments.iter().take(n).any(|s| temporal_iou(s, gt) > theta)
        })
        .count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

pub const EVAL_NS: [usize; 2] = [1, 5];
pub const EVAL_IOUS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    /// `(n, iou, recall)`
    pub rows: Vec<(usize, f64, f64)>,
}

impl EvalTable {
    pub fn compute(results: &[GroundingResult], truth: &BTreeMap<String, Segment>) -> Result<Self> {
        let mut rows = Vec::new();
        for n in EVAL_NS {
            for iou in EVAL_IOUS {
                rows.push((n, iou, recall_at_n(results, truth, n, iou)?));
            }
        }
        Ok(Self { rows })
    }

    pub fn get(&self, n: usize, iou: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == n && r.1 == iou).map(|r| r.2)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,iou,recall\n");
        for (n, iou, r) in &self.rows {
            let _ = writeln!(s, "R@{n},{iou},{r:.4}");
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::from("        ");
        for iou in EVAL_IOUS {
            let _ = write!(s, "  IoU={iou:<4}");
        }
        s.push('\n');
        for n in EVAL_NS {
            let _ = write!(s, "R@{n:<6}");
            for iou in EVAL_IOUS {
                let _ = write!(s, "  {:>8.2}", self.get(n, iou).unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        s
    }
}

pub fn results_to_csv(results: &[GroundingResult]) -> String {
    let mut s = String::from("video_id,query_id,rank,start,end,score\n");
    for r in results {
        for (k, seg) in r.segments.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{:e}", r.video_id, r.query_id, k + 1, seg.start, seg.end, seg.score);
        }
    }
    s
}

fn fields<'a>(line: &'a str, n: usize, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != n {
        return Err(Error::format(path, format!("line {lineno}: expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(s: &str, path: &Path, lineno: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, format!("line {lineno}: cannot parse {s:?}")))
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<GroundingResult>> {
    let mut out: Vec<GroundingResult> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, 6, path, lineno + 1)?;
        let seg = Segment::new(num(f[3], path, lineno + 1)?, num(f[4], path, lineno + 1)?, num(f[5], path, lineno + 1)?);
        match out.last_mut() {
            Some(r) if r.query_id == f[1] && r.video_id == f[0] => r.segments.push(seg),
            _ => out.push(GroundingResult {
                video_id: f[0].to_string(),
                query_id: f[1].to_string(),
                segments: vec![seg],
            }),
        }
    }
    Ok(out)
}

pub fn load_results(path: &Path) -> Result<Vec<GroundingResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}

/// `video_id,query_id,start,end`
pub fn truth_to_csv(truth: &[(String, String, Segment)]) -> String {
    let mut s = String::from("video_id,query_id,start,end\n");
    for (v, q, seg) in truth {
        let _ = writeln!(s, "{v},{q},{},{}", seg.start, seg.end);
    }
    s
}

/// Ground truth keyed by query id, plus the video id of each query.
pub fn parse_truth(text: &str, path: &Path) -> Result<(BTreeMap<String, Segment>, BTreeMap<String, String>)> {
    let mut segs = BTreeMap::new();
    let mut videos = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line, 4, path, lineno + 1)?;
        let seg = Segment::new(num(f[2], path, lineno + 1)?, num(f[3], path, lineno + 1)?, 1.0);
        segs.insert(f[1].to_string(), seg);
        videos.insert(f[1].to_string(), f[0].to_string());
    }
    Ok((segs, videos))
}

pub fn load_truth(path: &Path) -> Result<(BTreeMap<String, Segment>, BTreeMap<String, String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_truth(&text, path)
}
