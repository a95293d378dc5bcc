//! Shared helpers for integration tests: synthetic speech-like audio and
//! stereo corpus generation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rft::corpus::mix_noise;
use rft::wav::write_wav;
use rft_core::frontend::AudioBuffer;

pub const SAMPLE_RATE: u32 = 8000;

/// Speech-like synthetic utterance: a few random harmonics with a slow
/// envelope plus a little wideband excitation.
pub fn synth_utterance(rng: &mut ChaCha8Rng, n_samples: usize) -> AudioBuffer {
    let n_partials = 4;
    let partials: Vec<(f64, f64, f64)> = (0..n_partials)
        .map(|_| {
            (
                120.0 + rng.gen::<f64>() * 1500.0,
                rng.gen::<f64>() * std::f64::consts::TAU,
                0.3 + rng.gen::<f64>() * 0.7,
            )
        })
        .collect();
    let env_rate = 1.0 + rng.gen::<f64>() * 3.0;
    let samples: Vec<f64> = (0..n_samples)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = 0.55 + 0.45 * (std::f64::consts::TAU * env_rate * t).sin();
            let tone: f64 = partials
                .iter()
                .map(|(f, p, a)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
            let hiss = rng.gen::<f64>() * 2.0 - 1.0;
            0.08 * env * tone + 0.005 * hiss
        })
        .collect();
    AudioBuffer::new(samples, SAMPLE_RATE)
}

pub fn white_noise(rng: &mut ChaCha8Rng, n_samples: usize, amp: f64) -> AudioBuffer {
    AudioBuffer::new(
        (0..n_samples).map(|_| amp * (rng.gen::<f64>() * 2.0 - 1.0)).collect(),
        SAMPLE_RATE,
    )
}

/// Writes a stereo corpus under `dir`: per utterance a clean WAV and one
/// noisy peer per SNR, plus `manifest.tsv`. Returns the manifest path.
pub fn make_stereo_corpus(
    dir: &Path,
    n_utts: usize,
    utt_samples: usize,
    snrs_db: &[f64],
    seed: u64,
) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = white_noise(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd), 4 * utt_samples, 0.1);
    let mut lines = Vec::new();
    for u in 0..n_utts {
        let clean = synth_utterance(&mut rng, utt_samples);
        let clean_name = format!("u{u:03}.wav");
        write_wav(&dir.join(&clean_name), &clean).unwrap();
        // re-read so features are computed from the quantized samples on
        // both sides of each pair
        let clean_q = rft::wav::read_wav(&dir.join(&clean_name)).unwrap();
        for &snr in snrs_db {
            let noisy = mix_noise(&clean_q, &noise, snr, seed.wrapping_add(u as u64)).unwrap();
            let noisy_name = format!("u{u:03}_snr{snr:.0}.wav");
            write_wav(&dir.join(&noisy_name), &noisy).unwrap();
            let clean_id = format!("u{u:03}_c{snr:.0}");
            let noisy_id = format!("u{u:03}_n{snr:.0}");
            lines.push(format!("{clean_id}\t{clean_name}\t{noisy_id}\t-\t-"));
            lines.push(format!("{noisy_id}\t{noisy_name}\t{clean_id}\twhite\t{snr:.0}"));
        }
    }
    let manifest = dir.join("manifest.tsv");
    fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    manifest
}
