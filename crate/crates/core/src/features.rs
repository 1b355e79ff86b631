//! Per-video segment features in the `MHG1` binary container, and the JSON
//! Lines dataset manifest that indexes them.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! b"MHG1"
//! u32 version (= 1), u32 n_segments, u32 d_visual, u32 d_audio, u32 d_text, u32 n_spans
//! f32[n * d_visual]  visual, row-major
//! f32[n * d_audio]   audio
//! f32[n * d_text]    text
//! (f64 start_s, f64 end_s)[n_spans]
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::modality::Modality;
use crate::segment::Span;

pub const MAGIC: &[u8; 4] = b"MHG1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:?}, expected \"MHG1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}, expected {VERSION}")]
    Version(u32),
    #[error("file shorter than the {HEADER_LEN}-byte header ({0} bytes)")]
    ShortHeader(usize),
    #[error("{modality} width mismatch: expected {expected}, found {found}")]
    Dimension {
        modality: Modality,
        expected: usize,
        found: usize,
    },
    #[error("payload is {found} bytes but the header implies {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("non-finite value in {0} block")]
    NonFinite(Modality),
    #[error("sentence span {index} is invalid ({start}, {end})")]
    BadSpan { index: usize, start: f64, end: f64 },
    #[error("a video needs at least one segment")]
    NoSegments,
    #[error("{modality} block has {found} rows, expected {expected}")]
    RowCount {
        modality: Modality,
        expected: usize,
        found: usize,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("video `{0}` is not in the manifest")]
    UnknownVideo(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Raw (pre-projection) feature widths per modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureWidths {
    pub visual: usize,
    pub audio: usize,
    pub text: usize,
}

impl Default for FeatureWidths {
    /// Vision-transformer frames, 40 MFCCs, and BERT paragraph embeddings.
    fn default() -> Self {
        Self {
            visual: 768,
            audio: 40,
            text: 768,
        }
    }
}

impl FeatureWidths {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.visual,
            Modality::Audio => self.audio,
            Modality::Text => self.text,
        }
    }
}

/// Raw embeddings of one video, one row per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFeatures {
    pub visual: Tensor<f32>,
    pub audio: Tensor<f32>,
    pub text: Tensor<f32>,
    pub sentence_spans: Vec<Span>,
}

impl SegmentFeatures {
    pub fn new(
        visual: Tensor<f32>,
        audio: Tensor<f32>,
        text: Tensor<f32>,
        sentence_spans: Vec<Span>,
    ) -> Result<Self, FeatureError> {
        let f = Self {
            visual,
            audio,
            text,
            sentence_spans,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn n_segments(&self) -> usize {
        self.visual.rows()
    }

    pub fn block(&self, m: Modality) -> &Tensor<f32> {
        match m {
            Modality::Visual => &self.visual,
            Modality::Audio => &self.audio,
            Modality::Text => &self.text,
        }
    }

    pub fn widths(&self) -> FeatureWidths {
        FeatureWidths {
            visual: self.visual.cols(),
            audio: self.audio.cols(),
            text: self.text.cols(),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let n = self.n_segments();
        if n == 0 {
            return Err(FeatureError::NoSegments);
        }
        for m in Modality::ALL {
            let b = self.block(m);
            if !b.is_matrix() || b.rows() != n {
                return Err(FeatureError::RowCount {
                    modality: m,
                    expected: n,
                    found: b.rows(),
                });
            }
            if !b.all_finite() {
                return Err(FeatureError::NonFinite(m));
            }
        }
        for (index, s) in self.sentence_spans.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite() && s.start <= s.end) {
                return Err(FeatureError::BadSpan {
                    index,
                    start: s.start,
                    end: s.end,
                });
            }
        }
        Ok(())
    }

    /// Checks raw widths against what a model expects.
    pub fn check_widths(&self, expected: &FeatureWidths) -> Result<(), FeatureError> {
        for m in Modality::ALL {
            let found = self.block(m).cols();
            if found != expected.get(m) {
                return Err(FeatureError::Dimension {
                    modality: m,
                    expected: expected.get(m),
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n_segments();
        let w = self.widths();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * (w.visual + w.audio + w.text) + 16 * self.sentence_spans.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, n as u32, w.visual as u32, w.audio as u32, w.text as u32, self.sentence_spans.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for m in Modality::ALL {
            for x in self.block(m).data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for s in &self.sentence_spans {
            out.extend_from_slice(&s.start.to_le_bytes());
            out.extend_from_slice(&s.end.to_le_bytes());
        }
        out
    }

    /// Parses and validates a container. `expected` pins the raw widths; pass
    /// `None` to accept whatever the header declares.
    pub fn from_bytes(bytes: &[u8], expected: Option<&FeatureWidths>) -> Result<Self, FeatureError> {
        if bytes.len() < HEADER_LEN {
            return Err(FeatureError::ShortHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(FeatureError::BadMagic(magic));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
        let version = field(0) as u32;
        if version != VERSION {
            return Err(FeatureError::Version(version));
        }
        let n = field(1);
        let widths = FeatureWidths {
            visual: field(2),
            audio: field(3),
            text: field(4),
        };
        let n_spans = field(5);
        if n == 0 {
            return Err(FeatureError::NoSegments);
        }
        if let Some(exp) = expected {
            for m in Modality::ALL {
                if widths.get(m) != exp.get(m) {
                    return Err(FeatureError::Dimension {
                        modality: m,
                        expected: exp.get(m),
                        found: widths.get(m),
                    });
                }
            }
        }
        for m in Modality::ALL {
            if widths.get(m) == 0 {
                return Err(FeatureError::Dimension {
                    modality: m,
                    expected: expected.map_or(1, |e| e.get(m)),
                    found: 0,
                });
            }
        }
        let floats = n
            .checked_mul(widths.visual + widths.audio + widths.text)
            .and_then(|x| x.checked_mul(4));
        let expected_len = floats
            .and_then(|f| f.checked_add(n_spans.checked_mul(16)?))
            .and_then(|p| p.checked_add(HEADER_LEN));
        let found = bytes.len();
        match expected_len {
            Some(e) if e == found => {}
            e => {
                return Err(FeatureError::PayloadLength {
                    expected: e.unwrap_or(usize::MAX).saturating_sub(HEADER_LEN),
                    found: found - HEADER_LEN,
                })
            }
        }

        let mut offset = HEADER_LEN;
        let mut read_block = |m: Modality| -> Result<Tensor<f32>, FeatureError> {
            let count = n * widths.get(m);
            let data: Vec<f32> = bytes[offset..offset + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += 4 * count;
            if data.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite(m));
            }
            Ok(Tensor::matrix(n, widths.get(m), data))
        };
        let visual = read_block(Modality::Visual)?;
        let audio = read_block(Modality::Audio)?;
        let text = read_block(Modality::Text)?;
        let spans = bytes[offset..]
            .chunks_exact(16)
            .map(|c| {
                Span::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Self::new(visual, audio, text, spans)
    }
}

pub fn write_features(features: &SegmentFeatures, path: &Path) -> Result<(), FeatureError> {
    features.validate()?;
    fs::write(path, features.to_bytes()).map_err(io_err(path))
}

pub fn read_features(path: &Path, expected: Option<&FeatureWidths>) -> Result<SegmentFeatures, FeatureError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    SegmentFeatures::from_bytes(&bytes, expected)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub label: u8,
    pub feature_path: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    video_id: String,
    label: i64,
    feature_path: String,
    duration_s: f64,
    #[serde(default)]
    fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative feature paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// `(non-hate, hate)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let hate = self.entries.iter().filter(|e| e.label == 1).count();
        (self.entries.len() - hate, hate)
    }

    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.feature_path)
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))
    }
}

/// Parses manifest lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(text: &str, root: PathBuf) -> Result<DatasetManifest, FeatureError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| FeatureError::Manifest { line: line_no, message };
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if raw.label != 0 && raw.label != 1 {
            return Err(bad(format!("label must be 0 or 1, got {}", raw.label)));
        }
        if !(raw.duration_s.is_finite() && raw.duration_s > 0.0) {
            return Err(bad(format!("duration_s must be positive, got {}", raw.duration_s)));
        }
        if raw.video_id.is_empty() {
            return Err(bad("empty video_id".into()));
        }
        if !seen.insert(raw.video_id.clone()) {
            return Err(bad(format!("duplicate video_id `{}`", raw.video_id)));
        }
        entries.push(ManifestEntry {
            video_id: raw.video_id,
            label: raw.label as u8,
            feature_path: raw.feature_path,
            duration_s: raw.duration_s,
            fold: raw.fold,
        });
    }
    Ok(DatasetManifest { root, entries })
}

/// Reads a manifest and checks that every feature file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, FeatureError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, root)?;
    for (i, e) in manifest.entries.iter().enumerate() {
        let p = manifest.feature_path(e);
        if !p.is_file() {
            return Err(FeatureError::Manifest {
                line: i + 1,
                message: format!("feature file {} does not exist", p.display()),
            });
        }
    }
    Ok(manifest)
}

pub fn load_video_features(
    manifest: &DatasetManifest,
    video_id: &str,
    expected: Option<&FeatureWidths>,
) -> Result<SegmentFeatures, FeatureError> {
    let entry = manifest
        .entry(video_id)
        .ok_or_else(|| FeatureError::UnknownVideo(video_id.to_string()))?;
    read_features(&manifest.feature_path(entry), expected)
}

/// A manifest with every video's features loaded and validated.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub features: Vec<SegmentFeatures>,
}

impl Dataset {
    pub fn load(manifest: DatasetManifest, expected: Option<&FeatureWidths>) -> Result<Self, FeatureError> {
        let features = manifest
            .entries
            .iter()
            .map(|e| read_features(&manifest.feature_path(e), expected))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { manifest, features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.manifest.entries[i].label
    }

    pub fn labels(&self) -> Vec<u8> {
        self.manifest.labels()
    }
}
