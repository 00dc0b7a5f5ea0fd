//! Synthetic grounding corpus with planted segments, and a random baseline.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{EmbeddingTable, FrameFeatureSequence, QueryTokens};
use crate::error::{Error, Result};
use crate::inference::{GroundingResult, Segment};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// K
    pub atoms: usize,
    pub words_per_atom: usize,
    pub videos: usize,
    pub frames: usize,
    pub segment_min: f64,
    pub segment_max: f64,
    pub feature_dim: usize,
    pub noise: f64,
    /// Std of a per-video offset added to every frame of that video.
    pub scene_std: f64,
    /// Std of a component shared by all prototypes.
    pub activity_shift: f64,
    pub word_dim: usize,
    pub query_min_len: usize,
    pub query_max_len: usize,
    /// Planted segments (each with its own query) per video.
    pub segments_per_video: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            atoms: 8,
            words_per_atom: 6,
            videos: 200,
            frames: 64,
            segment_min: 0.1,
            segment_max: 0.3,
            feature_dim: 32,
            noise: 0.5,
            scene_std: 0.0,
            activity_shift: 0.0,
            word_dim: 16,
            query_min_len: 4,
            query_max_len: 8,
            segments_per_video: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.atoms < 2 {
            return bad(format!("atoms must be >= 2, got {}", self.atoms));
        }
        if !(self.segment_min > 0.0 && self.segment_min <= self.segment_max && self.segment_max < 1.0) {
            return bad(format!(
                "segment fractions must satisfy 0 < min <= max < 1, got {} and {}",
                self.segment_min, self.segment_max
            ));
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise std must be >= 0, got {}", self.noise));
        }
        if !(self.scene_std >= 0.0 && self.activity_shift >= 0.0) {
            return bad("scene_std and activity_shift must be >= 0".into());
        }
        if self.words_per_atom == 0 || self.videos == 0 || self.feature_dim == 0 || self.word_dim == 0 {
            return bad("words_per_atom, videos, feature_dim and word_dim must be positive".into());
        }
        if self.query_min_len == 0 || self.query_min_len > self.query_max_len {
            return bad("query lengths must satisfy 1 <= min <= max".into());
        }
        let (lo, hi) = self.length_range();
        if lo == 0 || hi * self.segments_per_video.max(1) > self.frames {
            return bad(format!(
                "segment lengths {lo}..={hi} frames do not fit {} segment(s) in T = {}",
                self.segments_per_video, self.frames
            ));
        }
        Ok(())
    }

    /// Smallest and largest planted length in frames.
    pub fn length_range(&self) -> (usize, usize) {
        let t = self.frames as f64;
        ((self.segment_min * t).round() as usize, (self.segment_max * t).round() as usize)
    }

    fn draw_length<R: Rng>(&self, rng: &mut R) -> usize {
        let frac = rng.gen_range(self.segment_min..=self.segment_max);
        ((frac * self.frames as f64).round() as usize).max(1)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("cannot parse {k} = {v}")))
        }
        match key {
            "atoms" => self.atoms = p(key, value)?,
            "words_per_atom" => self.words_per_atom = p(key, value)?,
            "videos" => self.videos = p(key, value)?,
            "frames" => self.frames = p(key, value)?,
            "segment_min" => self.segment_min = p(key, value)?,
            "segment_max" => self.segment_max = p(key, value)?,
            "feature_dim" => self.feature_dim = p(key, value)?,
            "noise" => self.noise = p(key, value)?,
            "scene_std" => self.scene_std = p(key, value)?,
            "activity_shift" => self.activity_shift = p(key, value)?,
            "word_dim" => self.word_dim = p(key, value)?,
            "query_min_len" => self.query_min_len = p(key, value)?,
            "query_max_len" => self.query_max_len = p(key, value)?,
            "segments_per_video" => self.segments_per_video = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            other => return Err(Error::Config(format!("unknown spec key {other}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got {line}")))?;
            s.set(k.trim(), v.trim())?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        format!(
            "atoms = {}\nwords_per_atom = {}\nvideos = {}\nframes = {}\nsegment_min = {:?}\nsegment_max = {:?}\n\
             feature_dim = {}\nnoise = {:?}\nscene_std = {:?}\nactivity_shift = {:?}\nword_dim = {}\nquery_min_len = {}\nquery_max_len = {}\n\
             segments_per_video = {}\nseed = {}\n",
            self.atoms,
            self.words_per_atom,
            self.videos,
            self.frames,
            self.segment_min,
            self.segment_max,
            self.feature_dim,
            self.noise,
            self.scene_std,
            self.activity_shift,
            self.word_dim,
            self.query_min_len,
            self.query_max_len,
            self.segments_per_video,
            self.seed
        )
    }
}

/// Evaluation-only record pairing a query with its planted segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub video_id: String,
    pub query_id: String,
    pub atom: usize,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub videos: Vec<FrameFeatureSequence>,
    pub queries: Vec<QueryTokens>,
    pub table: EmbeddingTable,
    pub truth: Vec<PlantedTruth>,
    pub prototypes: Matrix,
}

/// Atom prototypes are a shared component plus a standard normal vector.
/// Every frame of a video carries that video's scene offset plus noise, and
/// planted frames add the prototype on top. Each query is drawn from
/// its atom's private vocabulary.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let noise = Normal::new(0.0, spec.noise).unwrap();
    let mut prototypes = Matrix::from_fn(spec.atoms, spec.feature_dim, |_, _| std_normal.sample(&mut rng));
    // Scene offsets and the shared component use their own stream so that
    // setting both to zero leaves every other draw unchanged.
    let mut extra = ChaCha8Rng::seed_from_u64(spec.seed);
    extra.set_stream(1);
    let shared: Vec<f64> = (0..spec.feature_dim)
        .map(|_| spec.activity_shift * std_normal.sample(&mut extra))
        .collect();
    for k in 0..spec.atoms {
        for (x, m) in prototypes.row_mut(k).iter_mut().zip(&shared) {
            *x += m;
        }
    }

    let n_words = spec.atoms * spec.words_per_atom;
    let words: Vec<String> = (0..n_words)
        .map(|w| format!("a{}w{}", w / spec.words_per_atom, w % spec.words_per_atom))
        .collect();
    let emb = Matrix::from_fn(n_words, spec.word_dim, |_, _| std_normal.sample(&mut rng));
    let table = EmbeddingTable::new(words, emb)?;

    let mut videos = Vec::with_capacity(spec.videos);
    let mut queries = Vec::new();
    let mut truth = Vec::new();
    let t = spec.frames;
    for v in 0..spec.videos {
        let video_id = format!("v{v:04}");
        let mut f = Matrix::from_fn(t, spec.feature_dim, |_, _| noise.sample(&mut rng));
        let scene: Vec<f64> = (0..spec.feature_dim)
            .map(|_| spec.scene_std * std_normal.sample(&mut extra))
            .collect();
        for row in 0..t {
            for (x, s) in f.row_mut(row).iter_mut().zip(&scene) {
                *x += s;
            }
        }
        let mut taken: Vec<Segment> = Vec::new();
        for _ in 0..spec.segments_per_video.max(1) {
            let atom = rng.gen_range(0..spec.atoms);
            let seg = loop {
                let len = spec.draw_length(&mut rng);
                let start = rng.gen_range(0..=t - len);
                let s = Segment::new(start, start + len - 1, 1.0);
                if taken.iter().all(|o| !o.overlaps(&s)) {
                    break s;
                }
            };
            for row in seg.start..=seg.end {
                for (x, p) in f.row_mut(row).iter_mut().zip(prototypes.row(atom)) {
                    *x += p;
                }
            }
            taken.push(seg);
            let len = rng.gen_range(spec.query_min_len..=spec.query_max_len);
            let tokens = (0..len)
                .map(|_| atom * spec.words_per_atom + rng.gen_range(0..spec.words_per_atom))
                .collect();
            let query_id = format!("q{}", queries.len());
            queries.push(QueryTokens::new(query_id.clone(), tokens)?);
            truth.push(PlantedTruth {
                video_id: video_id.clone(),
                query_id,
                atom,
                segment: seg,
            });
        }
        videos.push(FrameFeatureSequence::new(video_id, f)?);
    }
    Ok(SyntheticCorpus {
        videos,
        queries,
        table,
        truth,
        prototypes,
    })
}

impl SyntheticCorpus {
    pub fn query_text(&self) -> String {
        let mut s = String::new();
        for q in &self.queries {
            let words: Vec<&str> = q.tokens.iter().map(|&t| self.table.word(t)).collect();
            let _ = writeln!(s, "{}", words.join(" "));
        }
        s
    }

    pub fn truth_csv(&self) -> String {
        let rows: Vec<(String, String, Segment)> = self
            .truth
            .iter()
            .map(|p| (p.video_id.clone(), p.query_id.clone(), p.segment))
            .collect();
        crate::inference::truth_to_csv(&rows)
    }

    pub fn atoms_csv(&self) -> String {
        let mut s = String::from("query_id,video_id,atom\n");
        for p in &self.truth {
            let _ = writeln!(s, "{},{},{}", p.query_id, p.video_id, p.atom);
        }
        s
    }

    /// Per-frame 0/1 mask of the planted segment for each truth record.
    pub fn masks(&self) -> Vec<Vec<u8>> {
        self.truth
            .iter()
            .map(|p| {
                let t = self.videos.iter().find(|v| v.video_id == p.video_id).map_or(0, |v| v.frames());
                (0..t).map(|f| u8::from(f >= p.segment.start && f <= p.segment.end)).collect()
            })
            .collect()
    }

    /// Writes `features/*.tvgm`, `queries.txt`, `embeddings.txt`, `truth.csv`,
    /// `atoms.csv` and `spec.txt` under `dir`.
    pub fn write(&self, dir: &Path, spec: &SyntheticSpec) -> Result<()> {
        let feat = dir.join("features");
        std::fs::create_dir_all(&feat).map_err(|e| Error::io(&feat, e))?;
        for v in &self.videos {
            crate::data::save_frame_features(&feat.join(format!("{}.tvgm", v.video_id)), v)?;
        }
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("queries.txt", self.query_text())?;
        put("embeddings.txt", self.table.to_text())?;
        put("truth.csv", self.truth_csv())?;
        put("atoms.csv", self.atoms_csv())?;
        put("spec.txt", spec.to_text())?;
        Ok(())
    }
}

/// `n` uniformly random segments per query, with lengths drawn from the
/// spec's range. `pairs` holds `(video_id, query_id, T)`.
pub fn random_baseline(pairs: &[(String, String, usize)], spec: &SyntheticSpec, n: usize, seed: u64) -> Vec<GroundingResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    pairs
        .iter()
        .map(|(v, q, t)| {
            let segments = (0..n)
                .map(|_| {
                    let frac = rng.gen_range(spec.segment_min..=spec.segment_max);
                    let len = ((frac * *t as f64).round() as usize).clamp(1, *t);
                    let start = rng.gen_range(0..=t - len);
                    Segment::new(start, start + len - 1, 0.0)
                })
                .collect();
            GroundingResult {
                video_id: v.clone(),
                query_id: q.clone(),
                segments,
            }
        })
        .collect()
}
