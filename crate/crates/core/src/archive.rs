//! Multi-tensor container used for checkpoints, neck exports, cluster banks,
//! pseudo-label bitmaps and attention dumps.
//!
//! ```text
//! magic      b"TVGA"
//! version    u32 LE
//! kind       str            (u32 LE length + UTF-8 bytes)
//! n_meta     u32 LE, then n_meta × (key str, value str)
//! n_tensors  u32 LE, then n_tensors × record
//!   record:  name str, dtype u8 (1 = f32, 2 = f64, 3 = u8), rows u64, cols u64, payload
//! checksum   SHA-256 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"TVGA";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorDtype {
    F32,
    F64,
    /// Bytes; values are stored as `x as u8` and restricted to 0..=255.
    U8,
}

impl TensorDtype {
    fn code(self) -> u8 {
        match self {
            Self::F32 => 1,
            Self::F64 => 2,
            Self::U8 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, (TensorDtype, Matrix)>,
}

impl Archive {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, dtype: TensorDtype, m: Matrix) {
        self.tensors.insert(name.into(), (dtype, m));
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.tensor(name)
            .ok_or_else(|| Error::InvalidArgument(format!("archive has no tensor {name}")))
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("archive has no meta key {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (dtype, m)) in &self.tensors {
            put_str(&mut out, name);
            out.push(dtype.code());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &x in m.as_slice() {
                match dtype {
                    TensorDtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    TensorDtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
                    TensorDtype::U8 => out.push(x as u8),
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 + 32 || &bytes[0..4] != ARCHIVE_MAGIC {
            return Err(Error::format(path, "not an archive (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 4, path };
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        let kind = r.string()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let code = r.take(1)?[0];
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::format(path, "tensor shape overflows"))?;
            let (dtype, data): (TensorDtype, Vec<f64>) = match code {
                1 => (
                    TensorDtype::F32,
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                        .collect(),
                ),
                2 => (
                    TensorDtype::F64,
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                3 => (
                    TensorDtype::U8,
                    r.take(n)?.iter().map(|&b| b as f64).collect(),
                ),
                other => return Err(Error::format(path, format!("unknown dtype {other}"))),
            };
            tensors.insert(name, (dtype, Matrix::from_vec(rows, cols, data)));
        }
        if r.pos != body.len() {
            return Err(Error::format(path, "trailing bytes after last tensor"));
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the `kind` tag.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let a = Self::load(path)?;
        if a.kind != kind {
            return Err(Error::format(
                path,
                format!("expected a {kind} archive, found {}", a.kind),
            ));
        }
        Ok(a)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "archive truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let path = self.path;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(path, "invalid UTF-8 in archive string"))
    }
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn encode(&self) -> String {
        format!(
            "{}:{}:{}",
            hex::encode(self.seed),
            self.stream,
            self.word_pos
        )
    }

    fn decode(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed rng state {s}"));
        let mut parts = s.split(':');
        let seed_hex = parts.next().ok_or_else(bad)?;
        let seed: [u8; 32] = hex::decode(seed_hex)
            .map_err(|_| bad())?
            .try_into()
            .map_err(|_| bad())?;
        let stream = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let word_pos = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Self {
            seed,
            stream,
            word_pos,
        })
    }
}

/// Named parameter tensors plus the state needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub config: Config,
    pub rng: RngState,
    pub tensors: BTreeMap<String, Matrix>,
    /// Free-form extra fields (e.g. which model the tensors belong to).
    pub extra: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("checkpoint");
        a.meta.insert("iteration".into(), self.iteration.to_string());
        a.meta.insert("config".into(), self.config.to_text());
        a.meta.insert("rng".into(), self.rng.encode());
        for (k, v) in &self.extra {
            a.meta.insert(format!("extra.{k}"), v.clone());
        }
        for (name, m) in &self.tensors {
            a.insert(name.clone(), TensorDtype::F64, m.clone());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let iteration = a
            .meta_value("iteration")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad iteration counter".into()))?;
        let config = Config::from_text(a.meta_value("config")?)?;
        let rng = RngState::decode(a.meta_value("rng")?)?;
        let extra = a
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let tensors = a
            .tensors
            .iter()
            .map(|(k, (_, m))| (k.clone(), m.clone()))
            .collect();
        Ok(Self {
            iteration,
            config,
            rng,
            tensors,
            extra,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.to_archive().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_archive(&Archive::load_kind(path, "checkpoint")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _: u64 = rng.gen();
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "w".to_string(),
            Matrix::from_fn(3, 4, |_, _| rng.gen::<f64>() - 0.5),
        );
        tensors.insert("b".to_string(), Matrix::row_vector(&[1e-300, -0.0, 7.25]));
        Checkpoint {
            iteration: 3,
            config: Config::default(),
            rng: RngState::capture(&rng),
            tensors,
            extra: BTreeMap::from([("model".to_string(), "video".to_string())]),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tvga");
        let c = sample();
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.iteration, 3);
        for (k, m) in &c.tensors {
            let b = &back.tensors[k];
            assert!(m
                .as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, c);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: [u64; 3] = rng.gen();
        let state = RngState::capture(&rng);
        let expected: Vec<u64> = (0..4).map(|_| rng.gen()).collect();
        let mut resumed = RngState::decode(&state.encode()).unwrap().restore();
        let got: Vec<u64> = (0..4).map(|_| resumed.gen()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn corruption_is_detected_by_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tvga");
        save_checkpoint(&p, &sample()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checksum)));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = sample().to_archive().to_bytes();
        bytes.truncate(bytes.len() - 32);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        let err = Archive::from_bytes(&bytes, Path::new("mem")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
        assert!(matches!(err, Error::VersionMismatch { found: 7, expected: 1 }));
    }

    #[test]
    fn u8_tensors_store_bitmaps() {
        let mut a = Archive::new("labels");
        let m = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        a.insert("v#0", TensorDtype::U8, m.clone());
        let back = Archive::from_bytes(&a.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.tensor("v#0"), Some(&m));
        assert_eq!(back.kind, "labels");
    }
}
