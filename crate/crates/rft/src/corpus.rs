//! Dataset plumbing: tab-separated manifests, SNR-controlled noise
//! mixing, stereo batch assembly and batch feature extraction.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rft_core::compensation::StereoBatch;
use rft_core::frontend::{extract_lmfb, extract_mfcc, AudioBuffer, FeatureSequence, FrontendConfig};

use crate::formats::write_features;
use crate::wav::read_wav;
use crate::{Result, RftError};

/// Which stage of the front end a batch operation should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Lmfb,
    Mfcc13,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "lmfb" => Ok(Stage::Lmfb),
            "mfcc" | "mfcc13" => Ok(Stage::Mfcc13),
            other => Err(RftError::Config(format!("unknown stage '{other}' (use lmfb or mfcc)"))),
        }
    }
}

pub fn extract_stage(audio: &AudioBuffer, cfg: &FrontendConfig, stage: Stage) -> Result<FeatureSequence> {
    Ok(match stage {
        Stage::Lmfb => extract_lmfb(audio, cfg)?,
        Stage::Mfcc13 => extract_mfcc(audio, cfg)?,
    })
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub peer: Option<String>,
    pub condition: String,
    pub snr: String,
}

/// Line-oriented manifest: `id<TAB>path<TAB>peer<TAB>condition<TAB>snr`,
/// with `-` marking absent fields. Paths are resolved relative to the
/// manifest file's directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| RftError::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(RftError::Format(format!(
                    "{}:{}: expected 5 tab-separated fields, found {}",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )));
            }
            let opt = |s: &str| if s == "-" { None } else { Some(s.to_string()) };
            entries.push(ManifestEntry {
                id: fields[0].to_string(),
                path: base.join(fields[1]),
                peer: opt(fields[2]),
                condition: opt(fields[3]).unwrap_or_else(|| "-".into()),
                snr: opt(fields[4]).unwrap_or_else(|| "-".into()),
            });
        }
        let m = Manifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(RftError::Format(format!("duplicate manifest id '{}'", e.id)));
            }
        }
        let by_id: HashMap<&str, &ManifestEntry> =
            self.entries.iter().map(|e| (e.id.as_str(), e)).collect();
        for e in &self.entries {
            if let Some(peer) = &e.peer {
                match by_id.get(peer.as_str()) {
                    None => {
                        return Err(RftError::Format(format!(
                            "manifest id '{}' names unknown peer '{peer}'",
                            e.id
                        )))
                    }
                    Some(p) => {
                        if p.peer.as_deref() != Some(e.id.as_str()) {
                            return Err(RftError::Format(format!(
                                "stereo peers '{}' and '{peer}' do not resolve bidirectionally",
                                e.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Stereo pairs as (clean, noisy) entries. The member without an SNR
    /// tag (or tagged "clean") is treated as the clean side; otherwise
    /// the first-listed member is.
    pub fn stereo_pairs(&self) -> Result<Vec<(&ManifestEntry, &ManifestEntry)>> {
        let mut done = HashSet::new();
        let mut pairs = Vec::new();
        for e in &self.entries {
            let peer_id = match &e.peer {
                Some(p) => p,
                None => {
                    return Err(RftError::Format(format!(
                        "manifest id '{}' has no stereo peer",
                        e.id
                    )))
                }
            };
            if done.contains(e.id.as_str()) {
                continue;
            }
            let peer = self.get(peer_id).expect("validated peer");
            done.insert(e.id.as_str());
            done.insert(peer.id.as_str());
            let e_clean = e.snr == "-" || e.snr == "clean";
            let p_clean = peer.snr == "-" || peer.snr == "clean";
            if e_clean && !p_clean {
                pairs.push((e, peer));
            } else if p_clean && !e_clean {
                pairs.push((peer, e));
            } else {
                pairs.push((e, peer));
            }
        }
        Ok(pairs)
    }
}

/// Additive noise mixing at a target SNR. The gain scales the noise so
/// that 10 log10(P_clean / P_noise) hits `snr_db` with powers measured
/// over the full utterance; `snr_db = f64::INFINITY` returns the clean
/// signal unchanged. A seeded offset picks the noise segment, tiling the
/// noise when it is shorter than the speech.
pub fn mix_noise(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    seed: u64,
) -> Result<AudioBuffer> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(clean.clone());
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(RftError::Format(format!(
            "sample rate mismatch: clean {} Hz vs noise {} Hz",
            clean.sample_rate, noise.sample_rate
        )));
    }
    let n = clean.samples.len();
    let nn = noise.samples.len();
    if n == 0 || nn == 0 {
        return Err(RftError::Format("empty audio".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..nn);
    let segment: Vec<f64> = (0..n).map(|i| noise.samples[(offset + i) % nn]).collect();
    let p_clean: f64 = clean.samples.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let p_noise: f64 = segment.iter().map(|s| s * s).sum::<f64>() / n as f64;
    if p_clean <= 0.0 || p_noise <= 0.0 {
        return Err(RftError::Format("zero-power signal in noise mixing".into()));
    }
    // 10 log10(p_clean / (g^2 p_noise)) = snr_db
    let g = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut clipped = 0usize;
    let samples: Vec<f64> = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(c, w)| {
            let v = c + g * w;
            if !(-1.0..=1.0).contains(&v) {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0)
        })
        .collect();
    if clipped as f64 > 0.01 * n as f64 {
        log::warn!(
            "noise mixing clipped {clipped} of {n} samples ({:.1}%)",
            100.0 * clipped as f64 / n as f64
        );
    }
    Ok(AudioBuffer::new(samples, clean.sample_rate))
}

/// A stereo batch annotated with its manifest tags.
pub struct TaggedBatch {
    pub clean_id: String,
    pub noisy_id: String,
    pub condition: String,
    pub snr: String,
    pub batch: StereoBatch,
}

/// Runs the front end on both members of each stereo pair.
pub fn build_stereo_batches(
    manifest: &Manifest,
    cfg: &FrontendConfig,
    stage: Stage,
) -> Result<Vec<TaggedBatch>> {
    let mut out = Vec::new();
    for (clean_e, noisy_e) in manifest.stereo_pairs()? {
        let clean = extract_stage(&read_wav(&clean_e.path)?, cfg, stage)?;
        let noisy = extract_stage(&read_wav(&noisy_e.path)?, cfg, stage)?;
        if clean.n_frames() != noisy.n_frames() {
            return Err(RftError::Format(format!(
                "frame count mismatch for stereo pair '{}'/'{}': {} vs {}",
                clean_e.id,
                noisy_e.id,
                clean.n_frames(),
                noisy.n_frames()
            )));
        }
        out.push(TaggedBatch {
            clean_id: clean_e.id.clone(),
            noisy_id: noisy_e.id.clone(),
            condition: noisy_e.condition.clone(),
            snr: noisy_e.snr.clone(),
            batch: StereoBatch::new(clean, noisy)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ExtractSummary {
    pub total: usize,
    pub written: usize,
    pub failures: Vec<ExtractFailure>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Serialize)]
pub struct ExtractFailure {
    pub id: String,
    pub error: String,
}

/// Extracts one RFT1 archive per manifest entry into `out_dir`,
/// named `<id>.rft`. Failures are reported per file; the batch
/// continues.
pub fn extract_corpus(
    manifest: &Manifest,
    cfg: &FrontendConfig,
    stage: Stage,
    out_dir: &Path,
) -> Result<ExtractSummary> {
    fs::create_dir_all(out_dir).map_err(|e| RftError::io(out_dir.display().to_string(), e))?;
    let start = std::time::Instant::now();
    let results: Vec<std::result::Result<(), ExtractFailure>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<()> {
                let audio = read_wav(&e.path)?;
                let seq = extract_stage(&audio, cfg, stage)?;
                write_features(&out_dir.join(format!("{}.rft", e.id)), &seq)
            };
            run().map_err(|err| ExtractFailure { id: e.id.clone(), error: err.to_string() })
        })
        .collect();
    let total = results.len();
    let failures: Vec<ExtractFailure> = results.into_iter().filter_map(|r| r.err()).collect();
    Ok(ExtractSummary {
        total,
        written: total - failures.len(),
        failures,
        elapsed_ms: start.elapsed().as_millis(),
    })
}
