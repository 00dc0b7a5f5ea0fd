//! Frame features, vocabulary embeddings and query corpora.
//!
//! Frame features live in a small binary container:
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"TVGM"
//! 4       4     version (u32 LE, currently 1)
//! 8       4     dtype   (u32 LE: 1 = f32, 2 = f64)
//! 12      8     rows    (u64 LE)
//! 20      8     cols    (u64 LE)
//! 28      ..    row-major payload, little endian
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"TVGM";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

pub fn encode_matrix(m: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * dtype.width());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    out
}

/// Decodes a matrix container; `path` is only used in error messages.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(Matrix, Dtype)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than the matrix header"));
    }
    if &bytes[0..4] != MATRIX_MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MATRIX_VERSION,
        });
    }
    let code = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let dtype = Dtype::from_code(code)
        .ok_or_else(|| Error::format(path, format!("unknown dtype code {code}")))?;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "declared shape overflows"))?;
    let w = dtype.width();
    if payload.len() != expected * w {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len() / w,
        });
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((Matrix::from_vec(rows, cols, data), dtype))
}

pub fn write_matrix(path: &Path, m: &Matrix, dtype: Dtype) -> Result<()> {
    let bytes = encode_matrix(m, dtype);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_matrix(&bytes, path)?.0)
}

/// Per-video `T × d_v` frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    pub features: Matrix,
}

impl FrameFeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Empty("a video needs at least one frame".into()));
        }
        if let Some((row, col)) = features.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self {
            video_id: video_id.into(),
            features,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Reads one feature container; the video id is the file stem.
pub fn load_frame_features(path: &Path) -> Result<FrameFeatureSequence> {
    let m = read_matrix(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FrameFeatureSequence::new(id, m)
}

pub fn save_frame_features(path: &Path, seq: &FrameFeatureSequence) -> Result<()> {
    write_matrix(path, &seq.features, Dtype::F32)
}

/// Loads every `*.tvgm` file in `dir`, sorted by file name.
pub fn load_feature_dir(dir: &Path) -> Result<Vec<FrameFeatureSequence>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tvgm"))
        .collect();
    paths.sort();
    let seqs = paths
        .iter()
        .map(|p| load_frame_features(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = seqs.first() {
        if let Some(bad) = seqs.iter().find(|s| s.dim() != first.dim()) {
            return Err(Error::Shape(format!(
                "video {} has feature dim {}, corpus uses {}",
                bad.video_id,
                bad.dim(),
                first.dim()
            )));
        }
    }
    Ok(seqs)
}

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Frozen word embeddings with reserved UNK and PAD rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    rows: Matrix,
    unk: usize,
    pad: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` pairs. `<unk>` and `<pad>` are
    /// appended (zero vectors) when absent.
    pub fn new(words: Vec<String>, rows: Matrix) -> Result<Self> {
        if words.len() != rows.rows() {
            return Err(Error::Shape(format!(
                "{} words but {} embedding rows",
                words.len(),
                rows.rows()
            )));
        }
        if let Some((row, col)) = rows.first_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        let dim = rows.cols();
        let mut words = words;
        let mut data = rows.into_vec();
        for reserved in [UNK_TOKEN, PAD_TOKEN] {
            if !words.iter().any(|w| w == reserved) {
                words.push(reserved.to_string());
                data.extend(std::iter::repeat(0.0).take(dim));
            }
        }
        let rows = Matrix::from_vec(words.len(), dim, data);
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary word {w}")));
            }
        }
        let unk = index[UNK_TOKEN];
        let pad = index[PAD_TOKEN];
        if words.len() < 2 {
            return Err(Error::InvalidArgument("vocabulary needs at least 2 entries".into()));
        }
        Ok(Self {
            words,
            index,
            rows,
            unk,
            pad,
        })
    }

    /// Parses whitespace-separated `word v1 v2 ... vd` lines.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let vals = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("embedding line {}: bad value {p}", n + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(Error::Shape(format!(
                        "embedding line {} has {} values, expected {d}",
                        n + 1,
                        vals.len()
                    )))
                }
                _ => {}
            }
            words.push(word.to_string());
            data.extend(vals);
        }
        let dim = dim.ok_or_else(|| Error::Empty("embedding file has no entries".into()))?;
        let rows = Matrix::from_vec(words.len(), dim, data);
        Self::new(words, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.words.iter().enumerate() {
            s.push_str(w);
            for x in self.rows.row(i) {
                s.push(' ');
                s.push_str(&format!("{x:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.unk)
    }

    pub fn vector(&self, idx: usize) -> &[f64] {
        self.rows.row(idx)
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// `L × d_w` matrix of the embeddings of `tokens`.
    pub fn embed(&self, tokens: &[usize]) -> Matrix {
        self.rows.select_rows(tokens)
    }
}

/// One query as vocabulary indices, at its true (unpadded) length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTokens {
    pub query_id: String,
    pub tokens: Vec<usize>,
}

impl QueryTokens {
    pub fn new(query_id: impl Into<String>, tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("query has no tokens".into()));
        }
        Ok(Self {
            query_id: query_id.into(),
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens right-padded with `pad` to `l_max`.
    pub fn padded(&self, l_max: usize, pad: usize) -> Vec<usize> {
        let mut t = self.tokens.clone();
        t.truncate(l_max);
        t.resize(l_max, pad);
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCorpus {
    pub queries: Vec<QueryTokens>,
    pub skipped_empty: usize,
    pub unk_count: usize,
    pub truncated: usize,
}

/// Tokenizes one query per line. Query ids are `q<line>` with 0-based line
/// numbers of the source file, so they stay stable when blank lines are
/// skipped.
pub fn parse_query_corpus(text: &str, table: &EmbeddingTable, l_max: usize) -> Result<QueryCorpus> {
    let mut corpus = QueryCorpus {
        queries: Vec::new(),
        skipped_empty: 0,
        unk_count: 0,
        truncated: 0,
    };
    for (n, line) in text.lines().enumerate() {
        let mut tokens: Vec<usize> = line.split_whitespace().map(|w| table.lookup(w)).collect();
        if tokens.is_empty() {
            corpus.skipped_empty += 1;
            continue;
        }
        if tokens.len() > l_max {
            tokens.truncate(l_max);
            corpus.truncated += 1;
        }
        corpus.unk_count += tokens.iter().filter(|&&t| t == table.unk()).count();
        corpus.queries.push(QueryTokens::new(format!("q{n}"), tokens)?);
    }
    if corpus.queries.is_empty() {
        return Err(Error::Empty("query corpus contains no queries".into()));
    }
    if corpus.skipped_empty > 0 {
        warn!("skipped {} empty query lines", corpus.skipped_empty);
    }
    if corpus.unk_count > 0 {
        warn!("{} out-of-vocabulary tokens mapped to {UNK_TOKEN}", corpus.unk_count);
    }
    Ok(corpus)
}

pub fn load_query_corpus(path: &Path, table: &EmbeddingTable, l_max: usize) -> Result<QueryCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::format(path, format!("query corpus is not valid UTF-8: {e}")))?;
    parse_query_corpus(&text, table, l_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(words: &[&str]) -> EmbeddingTable {
        let rows = Matrix::from_fn(words.len(), 2, |r, c| (r * 2 + c) as f64);
        EmbeddingTable::new(words.iter().map(|w| w.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn small_feature_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v1.tvgm");
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        write_matrix(&p, &m, Dtype::F32).unwrap();
        let seq = load_frame_features(&p).unwrap();
        assert_eq!(seq.video_id, "v1");
        assert_eq!(seq.features.shape(), (3, 2));
        assert_eq!(seq.features, m);
    }

    #[test]
    fn truncated_payload_is_a_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tvgm");
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let bytes = encode_matrix(&m, Dtype::F32);
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match load_frame_features(&p) {
            Err(Error::SizeMismatch { expected, actual }) => {
                assert_eq!((expected, actual), (6, 5));
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn injected_nan_is_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tvgm");
        let mut m = Matrix::zeros(4, 3);
        m[(2, 1)] = f64::NAN;
        write_matrix(&p, &m, Dtype::F32).unwrap();
        match load_frame_features(&p) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (2, 1)),
            other => panic!("expected non-finite rejection, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_frame_features(Path::new("/nonexistent/x.tvgm")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn large_random_matrix_round_trips_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let m = Matrix::from_fn(128, 500, |_, _| (rng.gen::<f32>() * 10.0 - 5.0) as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.tvgm");
        write_matrix(&p, &m, Dtype::F32).unwrap();
        let back = read_matrix(&p).unwrap();
        assert!(m
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    proptest! {
        #[test]
        fn f64_container_round_trips_exactly(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 1e6 - 5e5);
            let bytes = encode_matrix(&m, Dtype::F64);
            let (back, dt) = decode_matrix(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(dt, Dtype::F64);
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn reserved_tokens_are_appended() {
        let t = table(&["a", "b"]);
        assert_eq!(t.lookup("a"), 0);
        assert_eq!(t.lookup("b"), 1);
        assert_eq!(t.unk(), 2);
        assert_eq!(t.pad(), 3);
        assert_eq!(t.vector(t.pad()), &[0.0, 0.0]);
    }

    #[test]
    fn corpus_tokenization_rules() {
        let t = table(&["a", "b"]);
        let c = parse_query_corpus("a b\n\na zzz\n", &t, 10).unwrap();
        assert_eq!(c.queries.len(), 2);
        assert_eq!(c.queries[0].tokens, vec![0, 1]);
        assert_eq!(c.queries[1].tokens, vec![0, t.unk()]);
        assert_eq!(c.queries[1].query_id, "q2");
        assert_eq!(c.skipped_empty, 1);
        assert_eq!(c.unk_count, 1);

        let long = "a b a b a b a b a b b b";
        let c = parse_query_corpus(long, &t, 10).unwrap();
        assert_eq!(c.queries[0].tokens, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(c.truncated, 1);
        assert_eq!(c.queries[0].padded(12, t.pad())[10..], [t.pad(), t.pad()]);
    }

    #[test]
    fn empty_or_binary_corpus_is_rejected() {
        let t = table(&["a"]);
        assert!(matches!(parse_query_corpus("\n \n", &t, 10), Err(Error::Empty(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.txt");
        std::fs::write(&p, [0xffu8, 0xfe, 0x00, 0x41]).unwrap();
        assert!(matches!(load_query_corpus(&p, &t, 10), Err(Error::Format { .. })));
    }

    #[test]
    fn embedding_text_round_trip() {
        let t = table(&["x", "y", "z"]);
        let back = EmbeddingTable::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
    }
}
