//! Corpus handling: catalog manifests, enrollment embeddings, speaker-purity
//! segment cleaning and on-the-fly mixture simulation.

mod sim;

pub use sim::{
    apply_rir, derive_example_seed, mix_at_snr, simulate_example, Draws, MixCategory, MixtureSpec,
    SimulationConfig,
};

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, Waveform};
use crate::error::{Error, Result};

/// Segment length used by the speaker-purity cleanup.
pub const CLEAN_SEGMENT_S: f64 = 3.0;
/// Cosine-similarity threshold below which segments are dropped.
pub const CLEAN_THRESHOLD: f64 = 0.6;

const EMBED_MAGIC: &[u8; 8] = b"BSRNNEMB";

/// A speaker embedding consumed from a file (or an external extractor).
/// Normalized to unit L2 norm on load.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentEmbedding {
    pub vector: Vec<f32>,
    pub source_id: String,
}

impl EnrollmentEmbedding {
    pub fn new(mut vector: Vec<f32>, source_id: impl Into<String>) -> Result<Self> {
        let norm = vector.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Catalog("embedding has zero or non-finite norm".into()));
        }
        for v in vector.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(EnrollmentEmbedding {
            vector,
            source_id: source_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Cosine similarity (both sides are unit-normalized on load).
    pub fn cosine(&self, other: &EnrollmentEmbedding) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    /// File layout: 8-byte magic, u32 dimension, u32 reserved, then f32
    /// little-endian values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != EMBED_MAGIC {
            return Err(Error::Catalog(format!("{path:?}: not an embedding file")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() != 16 + 4 * dim {
            return Err(Error::Catalog(format!(
                "{path:?}: expected {dim} values, file length {}",
                bytes.len()
            )));
        }
        let vector: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(vector, path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(16 + 4 * self.vector.len());
        bytes.extend_from_slice(EMBED_MAGIC);
        bytes.extend_from_slice(&(self.vector.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        for &v in &self.vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Keeps the 3-second segments whose embedding stays close to the enrollment.
///
/// `segment_embeddings` must cover `floor(len/3s)` full segments plus the
/// final partial segment when it is at least one second long. Segments with
/// cosine similarity `>= threshold` are kept (a score of exactly 0.6 stays).
pub fn clean_segments(
    utterance: &Waveform,
    enrollment: &EnrollmentEmbedding,
    segment_embeddings: &[EnrollmentEmbedding],
    threshold: f64,
) -> Result<Vec<usize>> {
    let seg_len = (CLEAN_SEGMENT_S * utterance.sample_rate as f64).round() as usize;
    let full = utterance.len() / seg_len;
    let rem = utterance.len() % seg_len;
    let min_tail = utterance.sample_rate as usize; // 1 second
    let expected = full + usize::from(rem >= min_tail);
    if segment_embeddings.len() != expected {
        return Err(Error::Catalog(format!(
            "expected {expected} segment embeddings for {} samples, got {}",
            utterance.len(),
            segment_embeddings.len()
        )));
    }
    Ok(segment_embeddings
        .iter()
        .enumerate()
        .filter(|(_, e)| enrollment.cosine(e) >= threshold)
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Speech,
    Noise,
    Rir,
    Interferer,
}

/// One line of the catalog manifest (JSON lines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub kind: SourceKind,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
}

/// Parsed manifest with per-kind indices. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub records: Vec<CatalogRecord>,
    by_kind: HashMap<SourceKind, Vec<usize>>,
    base_dir: PathBuf,
}

impl Catalog {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let record: CatalogRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Catalog(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(record);
        }
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(Self::from_records(records, base_dir))
    }

    pub fn from_records(records: Vec<CatalogRecord>, base_dir: PathBuf) -> Self {
        let mut by_kind: HashMap<SourceKind, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            by_kind.entry(r.kind).or_default().push(i);
        }
        Catalog {
            records,
            by_kind,
            base_dir,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let line = serde_json::to_string(r)?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn of_kind(&self, kind: SourceKind) -> &[usize] {
        self.by_kind.get(&kind).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn resolve(&self, record: &CatalogRecord) -> PathBuf {
        self.resolve_path(&record.path)
    }

    pub fn resolve_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Catalog plus a thread-safe waveform cache, for repeated simulation draws.
pub struct SourcePool {
    pub catalog: Catalog,
    cache: Mutex<HashMap<usize, Arc<Waveform>>>,
}

impl SourcePool {
    pub fn new(catalog: Catalog) -> Self {
        SourcePool {
            catalog,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn count(&self, kind: SourceKind) -> usize {
        self.catalog.of_kind(kind).len()
    }

    /// The `idx`-th source of a kind, loaded and cached.
    pub fn waveform(&self, kind: SourceKind, idx: usize) -> Result<Arc<Waveform>> {
        let indices = self.catalog.of_kind(kind);
        let record_idx = *indices.get(idx).ok_or_else(|| {
            Error::Simulation(format!("no {kind:?} source at index {idx} ({} present)", indices.len()))
        })?;
        {
            let cache = self.cache.lock().unwrap();
            if let Some(w) = cache.get(&record_idx) {
                return Ok(w.clone());
            }
        }
        let record = &self.catalog.records[record_idx];
        let wave = Arc::new(read_wav(self.catalog.resolve(record))?);
        self.cache.lock().unwrap().insert(record_idx, wave.clone());
        Ok(wave)
    }

    pub fn record(&self, kind: SourceKind, idx: usize) -> Option<&CatalogRecord> {
        self.catalog
            .of_kind(kind)
            .get(idx)
            .map(|&i| &self.catalog.records[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_round_trip_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spk.emb");
        let e = EnrollmentEmbedding::new(vec![3.0, 4.0], "spk").unwrap();
        assert!((e.vector[0] - 0.6).abs() < 1e-6);
        assert!((e.vector[1] - 0.8).abs() < 1e-6);
        e.save(&path).unwrap();
        let back = EnrollmentEmbedding::load(&path).unwrap();
        assert_eq!(back.vector, e.vector);

        assert!(EnrollmentEmbedding::new(vec![0.0; 4], "zero").is_err());
    }

    #[test]
    fn clean_segments_threshold_semantics() {
        let sr = 16_000u32;
        // 7.5 seconds: two full 3 s segments + 1.5 s tail (>= 1 s, kept).
        let utterance = Waveform::new(vec![0.1; (7.5 * sr as f64) as usize], sr);
        let enroll = EnrollmentEmbedding::new(vec![1.0, 0.0], "e").unwrap();

        let same = EnrollmentEmbedding::new(vec![1.0, 0.0], "s").unwrap();
        let ortho = EnrollmentEmbedding::new(vec![0.0, 1.0], "o").unwrap();
        // cosine exactly 0.6 (kept: the threshold is inclusive)
        let at_limit = EnrollmentEmbedding::new(vec![0.6, 0.8], "l").unwrap();

        let kept = clean_segments(
            &utterance,
            &enroll,
            &[same.clone(), ortho.clone(), at_limit.clone()],
            CLEAN_THRESHOLD,
        )
        .unwrap();
        assert_eq!(kept, vec![0, 2]);

        // wrong embedding count is a catalog error
        assert!(clean_segments(&utterance, &enroll, &[same, ortho], CLEAN_THRESHOLD).is_err());

        // 7.3 s: the 1.3 s tail still counts; 6.5 s: 0.5 s tail dropped.
        let u73 = Waveform::new(vec![0.1; (7.3 * sr as f64) as usize], sr);
        let embeds = vec![
            EnrollmentEmbedding::new(vec![1.0, 0.0], "a").unwrap(),
            EnrollmentEmbedding::new(vec![1.0, 0.0], "b").unwrap(),
            EnrollmentEmbedding::new(vec![1.0, 0.0], "c").unwrap(),
        ];
        assert_eq!(clean_segments(&u73, &enroll, &embeds, 0.6).unwrap().len(), 3);
        let u65 = Waveform::new(vec![0.1; (6.5 * sr as f64) as usize], sr);
        assert_eq!(
            clean_segments(&u65, &enroll, &embeds[..2], 0.6).unwrap().len(),
            2
        );
    }

    #[test]
    fn catalog_parses_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"kind\": \"speech\", \"path\": \"a.wav\", \"speaker_id\": \"s1\"}\n",
                "\n",
                "# comment line\n",
                "{\"kind\": \"noise\", \"path\": \"n.wav\"}\n",
            ),
        )
        .unwrap();
        let catalog = Catalog::load(&path).unwrap();
        assert_eq!(catalog.records.len(), 2);
        assert_eq!(catalog.of_kind(SourceKind::Speech).len(), 1);
        assert_eq!(catalog.of_kind(SourceKind::Noise).len(), 1);
        assert_eq!(catalog.of_kind(SourceKind::Rir).len(), 0);
        // relative resolution
        let resolved = catalog.resolve(&catalog.records[0]);
        assert!(resolved.starts_with(dir.path()));

        std::fs::write(&path, "{\"kind\": \"speech\"}\n{bad json}\n").unwrap();
        match Catalog::load(&path) {
            Err(Error::Catalog(msg)) => assert!(msg.contains(":1:"), "{msg}"),
            other => panic!("expected catalog error, got {other:?}"),
        }
    }
}
