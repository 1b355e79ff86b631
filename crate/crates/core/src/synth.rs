//! Planted-signal datasets in the on-disk feature format.
//!
//! Every segment of every video is Gaussian background noise. A hateful
//! video additionally carries a fixed per-modality "hate signature" on all
//! segments of a few randomly chosen instances. The planted instance
//! indices are written to a sidecar so explanations can be scored.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::features::{write_features, DatasetManifest, FeatureError, FeatureWidths, ManifestEntry, SegmentFeatures};
use crate::modality::Modality;
use crate::segment::{InstancePartition, SegmentError, Span};
use crate::train::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PLANTED_FILE: &str = "planted.jsonl";
pub const FEATURE_DIR: &str = "features";

/// Seconds per segment in generated manifests.
const SEGMENT_SECONDS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub n_segments: usize,
    pub n_instances: usize,
    /// Fraction of hateful videos; the count is rounded to the nearest integer.
    pub hate_ratio: f64,
    /// Instances per hateful video that carry the signature.
    pub hateful_instance_count: usize,
    /// Signature size in units of the per-dimension noise scale: the planted
    /// vector is `signal_strength * sqrt(width) * u` for a unit vector `u`.
    pub signal_strength: f64,
    pub noise_std: f64,
    pub modality_carriers: Vec<Modality>,
    pub seed: u64,
    pub widths: FeatureWidths,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 200,
            n_segments: 12,
            n_instances: 4,
            hate_ratio: 0.4,
            hateful_instance_count: 1,
            signal_strength: 2.0,
            noise_std: 1.0,
            modality_carriers: Modality::ALL.to_vec(),
            seed: 0,
            widths: FeatureWidths::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        InstancePartition::new(self.n_segments, self.n_instances)?;
        if self.n_videos < 2 {
            return bad(format!("n_videos must be at least 2, got {}", self.n_videos));
        }
        if !(self.hate_ratio > 0.0 && self.hate_ratio < 1.0) {
            return bad(format!("hate_ratio must lie in (0, 1), got {}", self.hate_ratio));
        }
        if self.hateful_instance_count == 0 || self.hateful_instance_count > self.n_instances {
            return bad(format!(
                "hateful_instance_count must lie in [1, {}], got {}",
                self.n_instances, self.hateful_instance_count
            ));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad(format!("signal_strength must be finite and non-negative, got {}", self.signal_strength));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        if Modality::ALL.iter().any(|&m| self.widths.get(m) == 0) {
            return bad("feature widths must be positive".into());
        }
        Ok(())
    }

    pub fn n_hateful(&self) -> usize {
        ((self.n_videos as f64 * self.hate_ratio).round() as usize).clamp(1, self.n_videos - 1)
    }
}

/// Ground truth for one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRecord {
    pub video_id: String,
    /// Sorted instance indices in `[0, K)`; empty for non-hateful videos.
    pub planted_instances: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub video_ids: Vec<String>,
    pub features: Vec<SegmentFeatures>,
    pub labels: Vec<u8>,
    pub planted: Vec<PlantedRecord>,
}

pub fn video_id(i: usize) -> String {
    format!("synth_{i:05}")
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates the dataset in memory. Videos are produced in parallel, each
/// from its own derived seed, so the output does not depend on scheduling.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let partition = InstancePartition::new(spec.n_segments, spec.n_instances)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let signatures: Vec<Vec<f64>> = Modality::ALL
        .iter()
        .map(|&m| {
            let width = spec.widths.get(m);
            let scale = spec.signal_strength * (width as f64).sqrt();
            unit_vector(width, &mut rng).into_iter().map(|x| x * scale).collect()
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.n_videos).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0u8; spec.n_videos];
    for &i in &order[..spec.n_hateful()] {
        labels[i] = 1;
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::Spec(e.to_string()))?;
    let videos: Vec<(SegmentFeatures, PlantedRecord)> = (0..spec.n_videos)
        .into_par_iter()
        .map(|v| -> Result<_, SynthError> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, v as u64]));
            let mut planted = if labels[v] == 1 {
                index::sample(&mut rng, spec.n_instances, spec.hateful_instance_count).into_vec()
            } else {
                Vec::new()
            };
            planted.sort_unstable();
            let mut planted_segment = vec![false; spec.n_segments];
            for &i in &planted {
                for s in partition.segments(i) {
                    planted_segment[s] = true;
                }
            }
            let blocks: Vec<Tensor<f32>> = Modality::ALL
                .iter()
                .map(|&m| {
                    let width = spec.widths.get(m);
                    let carries = spec.modality_carriers.contains(&m);
                    let mut data = Vec::with_capacity(spec.n_segments * width);
                    for &hit in &planted_segment {
                        for j in 0..width {
                            let mut x = noise.sample(&mut rng);
                            if hit && carries {
                                x += signatures[m.index()][j];
                            }
                            data.push(x as f32);
                        }
                    }
                    Tensor::matrix(spec.n_segments, width, data)
                })
                .collect();
            // one transcript sentence per instance
            let spans = (0..spec.n_instances)
                .map(|i| {
                    let seg = partition.segments(i);
                    Span::new(seg.start as f64 * SEGMENT_SECONDS + 0.1, seg.end as f64 * SEGMENT_SECONDS - 0.1)
                })
                .collect();
            let [visual, audio, text]: [Tensor<f32>; 3] = blocks.try_into().expect("three modalities");
            let features = SegmentFeatures::new(visual, audio, text, spans)?;
            Ok((
                features,
                PlantedRecord {
                    video_id: video_id(v),
                    planted_instances: planted,
                },
            ))
        })
        .collect::<Result<_, _>>()?;

    let (features, planted): (Vec<_>, Vec<_>) = videos.into_iter().unzip();
    Ok(SynthData {
        video_ids: (0..spec.n_videos).map(video_id).collect(),
        features,
        labels,
        planted,
    })
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `features/<id>.mhg`, `manifest.jsonl` and the `planted.jsonl`
/// sidecar under `out_dir`, creating it if needed.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<(DatasetManifest, SynthData), SynthError> {
    let data = generate(spec)?;
    let feature_dir = out_dir.join(FEATURE_DIR);
    fs::create_dir_all(&feature_dir).map_err(io(&feature_dir))?;
    let duration = spec.n_segments as f64 * SEGMENT_SECONDS;
    let mut entries = Vec::with_capacity(data.features.len());
    for ((id, f), &label) in data.video_ids.iter().zip(&data.features).zip(&data.labels) {
        let rel = format!("{FEATURE_DIR}/{id}.mhg");
        write_features(f, &out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            video_id: id.clone(),
            label,
            feature_path: rel,
            duration_s: duration,
            fold: None,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;

    let sidecar = out_dir.join(PLANTED_FILE);
    let mut text = String::new();
    for r in &data.planted {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(&sidecar, text).map_err(io(&sidecar))?;
    Ok((manifest, data))
}

/// Reads a `planted.jsonl` sidecar.
pub fn read_planted(path: &Path) -> Result<Vec<PlantedRecord>, SynthError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SynthError::Spec(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}
