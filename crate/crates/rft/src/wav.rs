//! PCM WAV ingestion and emission. Mono 16-bit little-endian only;
//! samples are normalized by 1/32768.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use rft_core::frontend::AudioBuffer;

use crate::{Result, RftError};

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path)
        .map_err(|e| RftError::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(RftError::Format(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(RftError::Format(format!(
            "{}: expected 16-bit PCM, found {}-bit {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(|e| RftError::Format(format!("{}: {e}", path.display())))?;
    let scaled: Vec<f64> = samples.iter().map(|&s| f64::from(s) / 32768.0).collect();
    Ok(AudioBuffer::new(scaled, spec.sample_rate))
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)
        .map_err(|e| RftError::Format(format!("{}: {e}", path.display())))?;
    for &s in &audio.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(q)
            .map_err(|e| RftError::Format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| RftError::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}
