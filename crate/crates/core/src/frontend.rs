//! Audio front end: pre-emphasis, framing/windowing, magnitude spectra,
//! Mel filterbank, LMFB and lifted MFCC features with deltas and cepstral
//! mean subtraction.
//!
//! The chain is: pre-emphasis (1 - 0.97 z^-1) -> 25 ms Hamming frames at
//! 100 fps with per-frame mean subtraction -> |DFT| -> 23 equal-gain
//! triangular Mel filters floored at 1.0 -> natural log (LMFB) ->
//! orthonormal DCT-II truncated to 13 coefficients -> sinusoidal lifter ->
//! optional deltas/accelerations and CMS.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// PCM audio normalized to [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioBuffer { samples, sample_rate }
    }
}

/// What a [`FeatureSequence`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Log Mel filterbank outputs (non-negative when the Mel floor is >= 1).
    Lmfb,
    /// Lifted cepstra C0..C12.
    Mfcc,
    /// Statics + deltas + accelerations after CMS.
    Composite,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Lmfb => 0,
            FeatureKind::Mfcc => 1,
            FeatureKind::Composite => 2,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(FeatureKind::Lmfb),
            1 => Ok(FeatureKind::Mfcc),
            2 => Ok(FeatureKind::Composite),
            _ => Err(Error::Usage(format!("unknown feature kind code {c}"))),
        }
    }
}

/// Time-ordered matrix of per-frame feature vectors (frames are rows).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub frames: Mat,
    pub kind: FeatureKind,
    pub frame_period_ms: f64,
}

impl FeatureSequence {
    pub fn new(frames: Mat, kind: FeatureKind, frame_period_ms: f64) -> Self {
        FeatureSequence { frames, kind, frame_period_ms }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Front-end configuration. The defaults follow the usual 8 kHz telephone
/// speech setup: 25 ms Hamming frames at 100 fps, pre-emphasis 0.97,
/// 23 Mel filters floored at 1.0, 13 cepstra, lifter Q = 22.
#[derive(Debug, Clone)]
pub struct FrontendConfig {
    pub frame_length_ms: u32,
    pub frame_rate_fps: u32,
    pub preemphasis: f64,
    pub n_mel_filters: usize,
    pub mel_floor: f64,
    pub n_cepstra: usize,
    pub lifter_coeff: u32,
    pub dft_size: usize,
    /// Delta regression half-window (K); deltas span t-K..t+K.
    pub delta_window: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            frame_length_ms: 25,
            frame_rate_fps: 100,
            preemphasis: 0.97,
            n_mel_filters: 23,
            mel_floor: 1.0,
            n_cepstra: 13,
            lifter_coeff: 22,
            dft_size: 256,
            delta_window: 2,
        }
    }
}

impl FrontendConfig {
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (sample_rate as usize * self.frame_length_ms as usize) / 1000
    }

    pub fn hop(&self, sample_rate: u32) -> usize {
        sample_rate as usize / self.frame_rate_fps as usize
    }

    pub fn frame_period_ms(&self) -> f64 {
        1000.0 / self.frame_rate_fps as f64
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if (sample_rate as u64 * self.frame_length_ms as u64) % 1000 != 0 {
            return Err(Error::Config(format!(
                "frame_length_ms {} does not yield an integer sample count at {} Hz",
                self.frame_length_ms, sample_rate
            )));
        }
        if self.frame_rate_fps == 0 || sample_rate % self.frame_rate_fps != 0 {
            return Err(Error::Config(format!(
                "frame_rate_fps {} does not yield an integer hop at {} Hz",
                self.frame_rate_fps, sample_rate
            )));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(Error::Config(format!("preemphasis {} outside [0,1)", self.preemphasis)));
        }
        if self.n_cepstra > self.n_mel_filters {
            return Err(Error::Config(format!(
                "n_cepstra {} exceeds n_mel_filters {}",
                self.n_cepstra, self.n_mel_filters
            )));
        }
        if !self.dft_size.is_power_of_two() {
            return Err(Error::Config(format!("dft_size {} is not a power of two", self.dft_size)));
        }
        if self.dft_size < self.frame_len(sample_rate) {
            return Err(Error::Config(format!(
                "dft_size {} smaller than frame length {}",
                self.dft_size,
                self.frame_len(sample_rate)
            )));
        }
        if self.lifter_coeff == 0 {
            return Err(Error::Config("lifter_coeff must be positive".into()));
        }
        Ok(())
    }
}

/// First-order pre-emphasis filter: out[n] = in[n] - coeff * in[n-1].
pub fn preemphasize(audio: &AudioBuffer, coeff: f64) -> AudioBuffer {
    let mut out = Vec::with_capacity(audio.samples.len());
    let mut prev = 0.0;
    for &s in &audio.samples {
        out.push(s - coeff * prev);
        prev = s;
    }
    AudioBuffer::new(out, audio.sample_rate)
}

fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * libm::cos(2.0 * core::f64::consts::PI * n as f64 / (len - 1) as f64))
        .collect()
}

/// Splits the signal into overlapping frames; each frame is mean subtracted
/// and then Hamming windowed. Frames that would overrun the signal are
/// dropped; a signal shorter than one frame yields zero frames.
pub fn frame_and_window(audio: &AudioBuffer, cfg: &FrontendConfig) -> Vec<Vec<f64>> {
    let len = cfg.frame_len(audio.sample_rate);
    let hop = cfg.hop(audio.sample_rate);
    if len == 0 || audio.samples.len() < len {
        return Vec::new();
    }
    let window = hamming(len);
    let n_frames = (audio.samples.len() - len) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let chunk = &audio.samples[k * hop..k * hop + len];
        let mean: f64 = chunk.iter().sum::<f64>() / len as f64;
        frames.push(chunk.iter().zip(&window).map(|(s, w)| (s - mean) * w).collect());
    }
    frames
}

/// In-place iterative radix-2 FFT.
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * core::f64::consts::PI / len as f64;
        let (wr, wi) = (libm::cos(ang), libm::sin(ang));
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Magnitude of the zero-padded DFT; returns `dft_size/2 + 1` bins.
pub fn magnitude_spectrum(frame: &[f64], dft_size: usize) -> Result<Vec<f64>> {
    if !dft_size.is_power_of_two() {
        return Err(Error::Config(format!("dft_size {dft_size} is not a power of two")));
    }
    if dft_size < frame.len() {
        return Err(Error::Config(format!(
            "dft_size {dft_size} smaller than frame length {}",
            frame.len()
        )));
    }
    let mut re = vec![0.0; dft_size];
    let mut im = vec![0.0; dft_size];
    re[..frame.len()].copy_from_slice(frame);
    fft_radix2(&mut re, &mut im);
    Ok((0..dft_size / 2 + 1).map(|b| libm::sqrt(re[b] * re[b] + im[b] * im[b])).collect())
}

/// Mel scale: mel(f) = 2595 log10(1 + f / 700).
pub fn mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

/// Inverse of [`mel`].
pub fn mel_inv(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Builds the triangular Mel filterbank matrix (n_mel_filters x bins).
/// Filter centers are uniformly spaced on the Mel scale between 0 Hz and
/// Nyquist; adjacent triangles overlap at each other's centers and every
/// row is scaled to peak gain 1.0.
pub fn mel_filterbank_matrix(cfg: &FrontendConfig, sample_rate: u32) -> Result<Mat> {
    let bins = cfg.dft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let r = cfg.n_mel_filters;
    let mel_hi = mel(nyquist);
    // r+2 mel-uniform edge points; filter i peaks at point i+1
    let points: Vec<f64> = (0..r + 2).map(|i| mel_hi * i as f64 / (r + 1) as f64).collect();
    let mut fb = Mat::zeros(r, bins);
    for i in 0..r {
        let (lo, center, hi) = (points[i], points[i + 1], points[i + 2]);
        let mut peak = 0.0f64;
        for b in 0..bins {
            let fm = mel(b as f64 * sample_rate as f64 / cfg.dft_size as f64);
            let w = if fm <= lo || fm >= hi {
                0.0
            } else if fm <= center {
                (fm - lo) / (center - lo)
            } else {
                (hi - fm) / (hi - center)
            };
            fb[(i, b)] = w;
            peak = peak.max(w);
        }
        if peak <= 0.0 {
            return Err(Error::Config(format!(
                "mel filter {i} covers no DFT bin; reduce n_mel_filters or raise dft_size"
            )));
        }
        // equal gain: scale the row so its maximum is exactly 1.0
        let inv = 1.0 / peak;
        for b in 0..bins {
            fb[(i, b)] *= inv;
        }
    }
    Ok(fb)
}

/// Floored log filterbank outputs: out[r] = ln(max(filter_r . spectrum, floor)).
pub fn lmfb(spectrum: &[f64], filterbank: &Mat, mel_floor: f64) -> Vec<f64> {
    filterbank
        .mul_vec(spectrum)
        .into_iter()
        .map(|e| libm::log(e.max(mel_floor)))
        .collect()
}

/// Orthonormal DCT-II matrix (n_cepstra x n_mel): row 0 scaled by
/// sqrt(1/N), the rest by sqrt(2/N), so D D^T = I.
pub fn dct_matrix(n_cepstra: usize, n_mel: usize) -> Mat {
    let n = n_mel as f64;
    Mat::from_fn(n_cepstra, n_mel, |i, j| {
        let scale = if i == 0 { libm::sqrt(1.0 / n) } else { libm::sqrt(2.0 / n) };
        scale * libm::cos(core::f64::consts::PI * i as f64 * (j as f64 + 0.5) / n)
    })
}

/// Sinusoidal lifter weights diag(1 + (Q/2) sin(pi i / Q)) for i in 0..n.
pub fn lifter_weights(q: u32, n: usize) -> Vec<f64> {
    let qf = q as f64;
    (0..n).map(|i| 1.0 + qf / 2.0 * libm::sin(core::f64::consts::PI * i as f64 / qf)).collect()
}

/// Per-frame c = L D v: truncating DCT-II followed by the sinusoidal lifter.
pub fn dct_and_lifter(lmfb_seq: &FeatureSequence, cfg: &FrontendConfig) -> Result<FeatureSequence> {
    if lmfb_seq.kind != FeatureKind::Lmfb {
        return Err(Error::Usage("dct_and_lifter expects an LMFB sequence".into()));
    }
    if lmfb_seq.dim() != cfg.n_mel_filters {
        return Err(Error::Dimension {
            expected: cfg.n_mel_filters,
            got: lmfb_seq.dim(),
            what: "LMFB dimension",
        });
    }
    let dct = dct_matrix(cfg.n_cepstra, cfg.n_mel_filters);
    let lift = lifter_weights(cfg.lifter_coeff, cfg.n_cepstra);
    let mut out = Mat::zeros(lmfb_seq.n_frames(), cfg.n_cepstra);
    for t in 0..lmfb_seq.n_frames() {
        let c = dct.mul_vec(lmfb_seq.frames.row(t));
        let row = out.row_mut(t);
        for i in 0..cfg.n_cepstra {
            row[i] = lift[i] * c[i];
        }
    }
    Ok(FeatureSequence::new(out, FeatureKind::Mfcc, lmfb_seq.frame_period_ms))
}

fn delta(seq: &Mat, k_win: usize) -> Mat {
    let (n, d) = (seq.rows(), seq.cols());
    let denom: f64 = 2.0 * (1..=k_win).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |t: isize| -> usize { t.clamp(0, n as isize - 1) as usize };
    Mat::from_fn(n, d, |t, j| {
        let mut num = 0.0;
        for k in 1..=k_win {
            let ahead = seq[(clamp(t as isize + k as isize), j)];
            let behind = seq[(clamp(t as isize - k as isize), j)];
            num += k as f64 * (ahead - behind);
        }
        num / denom
    })
}

/// Appends delta and acceleration coefficients (regression window K with
/// edge replication) and applies per-utterance cepstral mean subtraction
/// over all output dimensions.
pub fn add_deltas_and_cms(mfcc_seq: &FeatureSequence, k_win: usize) -> Result<FeatureSequence> {
    if mfcc_seq.kind != FeatureKind::Mfcc {
        return Err(Error::Usage("add_deltas_and_cms expects an MFCC sequence".into()));
    }
    let n = mfcc_seq.n_frames();
    if n == 0 {
        return Err(Error::Usage("add_deltas_and_cms needs at least one frame".into()));
    }
    let d = mfcc_seq.dim();
    let vel = delta(&mfcc_seq.frames, k_win);
    let acc = delta(&vel, k_win);
    let mut out = Mat::zeros(n, 3 * d);
    for t in 0..n {
        out.row_mut(t)[..d].copy_from_slice(mfcc_seq.frames.row(t));
        out.row_mut(t)[d..2 * d].copy_from_slice(vel.row(t));
        out.row_mut(t)[2 * d..].copy_from_slice(acc.row(t));
    }
    for j in 0..3 * d {
        let mean: f64 = (0..n).map(|t| out[(t, j)]).sum::<f64>() / n as f64;
        for t in 0..n {
            out[(t, j)] -= mean;
        }
    }
    Ok(FeatureSequence::new(out, FeatureKind::Composite, mfcc_seq.frame_period_ms))
}

/// Full chain from audio to LMFB features.
pub fn extract_lmfb(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<FeatureSequence> {
    cfg.validate(audio.sample_rate)?;
    let pre = preemphasize(audio, cfg.preemphasis);
    let frames = frame_and_window(&pre, cfg);
    let fb = mel_filterbank_matrix(cfg, audio.sample_rate)?;
    let mut rows = Vec::with_capacity(frames.len());
    for frame in &frames {
        let spec = magnitude_spectrum(frame, cfg.dft_size)?;
        rows.push(lmfb(&spec, &fb, cfg.mel_floor));
    }
    let mat = if rows.is_empty() {
        Mat::zeros(0, cfg.n_mel_filters)
    } else {
        Mat::from_rows(&rows)
    };
    Ok(FeatureSequence::new(mat, FeatureKind::Lmfb, cfg.frame_period_ms()))
}

/// Full chain from audio to lifted 13-dim MFCCs.
pub fn extract_mfcc(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<FeatureSequence> {
    let lmfb_seq = extract_lmfb(audio, cfg)?;
    dct_and_lifter(&lmfb_seq, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: &[f64]) -> AudioBuffer {
        AudioBuffer::new(samples.to_vec(), 8000)
    }

    #[test]
    fn preemphasis_impulse_response() {
        let out = preemphasize(&buf(&[1.0, 0.0, 0.0]), 0.97);
        assert_eq!(out.samples, vec![1.0, -0.97, 0.0]);
    }

    #[test]
    fn preemphasis_zeros_and_steps() {
        let out = preemphasize(&buf(&[0.0; 5]), 0.97);
        assert!(out.samples.iter().all(|&s| s == 0.0));
        let out = preemphasize(&buf(&[1.0, 1.0, 1.0]), 0.97);
        for (got, want) in out.samples.iter().zip([1.0, 0.03, 0.03]) {
            assert!((got - want).abs() < 1e-12);
        }
        let empty = preemphasize(&buf(&[]), 0.97);
        assert!(empty.samples.is_empty());
    }

    #[test]
    fn frame_counts_at_8khz() {
        let cfg = FrontendConfig::default();
        assert_eq!(frame_and_window(&buf(&vec![0.1; 200]), &cfg).len(), 1);
        assert_eq!(frame_and_window(&buf(&vec![0.1; 199]), &cfg).len(), 0);
        assert_eq!(frame_and_window(&buf(&vec![0.1; 280]), &cfg).len(), 2);
    }

    #[test]
    fn frames_are_mean_subtracted_and_windowed() {
        let cfg = FrontendConfig::default();
        // constant signal: mean subtraction zeroes the frame entirely
        let frames = frame_and_window(&buf(&vec![0.5; 200]), &cfg);
        assert!(frames[0].iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn magnitude_spectrum_edge_cases() {
        let zeros = magnitude_spectrum(&[0.0; 64], 64).unwrap();
        assert_eq!(zeros.len(), 33);
        assert!(zeros.iter().all(|&m| m == 0.0));
        // impulse has flat magnitude 1
        let mut imp = [0.0; 64];
        imp[0] = 1.0;
        let spec = magnitude_spectrum(&imp, 64).unwrap();
        assert!(spec.iter().all(|&m| (m - 1.0).abs() < 1e-12));
        assert!(magnitude_spectrum(&[0.0; 10], 48).is_err());
    }

    #[test]
    fn magnitude_spectrum_sinusoid_concentrates() {
        // bin-8 sinusoid over a rectangular window of the full DFT length
        let n = 64usize;
        let frame: Vec<f64> = (0..n)
            .map(|t| libm::cos(2.0 * core::f64::consts::PI * 8.0 * t as f64 / n as f64))
            .collect();
        let spec = magnitude_spectrum(&frame, n).unwrap();
        assert!((spec[8] - n as f64 / 2.0).abs() < 1e-9);
        for (b, &m) in spec.iter().enumerate() {
            if b != 8 {
                assert!(m < 1e-9, "leakage at bin {b}: {m}");
            }
        }
    }

    #[test]
    fn mel_formula_values() {
        assert_eq!(mel(0.0), 0.0);
        assert!((mel(700.0) - 2595.0 * libm::log10(2.0)).abs() < 1e-9);
        assert!((mel(700.0) - 781.177).abs() < 1e-2);
        assert!((mel_inv(mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_rows_peak_at_one() {
        let cfg = FrontendConfig::default();
        let fb = mel_filterbank_matrix(&cfg, 8000).unwrap();
        assert_eq!(fb.rows(), 23);
        assert_eq!(fb.cols(), 129);
        for i in 0..fb.rows() {
            let row = fb.row(i);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            assert!((max - 1.0).abs() < 1e-12, "row {i} peak {max}");
            assert_eq!(row.iter().filter(|&&w| w == max).count(), 1, "row {i} peak not unique");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn filterbank_too_many_filters_errors() {
        let cfg = FrontendConfig { n_mel_filters: 200, dft_size: 64, ..Default::default() };
        assert!(mel_filterbank_matrix(&cfg, 8000).is_err());
    }

    #[test]
    fn lmfb_flooring() {
        let cfg = FrontendConfig::default();
        let fb = mel_filterbank_matrix(&cfg, 8000).unwrap();
        let zero_spec = vec![0.0; fb.cols()];
        let out = lmfb(&zero_spec, &fb, 1.0);
        assert_eq!(out.len(), 23);
        assert!(out.iter().all(|&v| v == 0.0));
        // a filter output of exactly e^2 should give 2 under the natural log
        let id = Mat::identity(3);
        let out = lmfb(&[libm::exp(2.0), 1.0, 0.5], &id, 1.0);
        assert!((out[0] - 2.0).abs() < 1e-12);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 0.0); // floored
    }

    #[test]
    fn dct_rows_orthonormal() {
        let d = dct_matrix(13, 23);
        let g = d.matmul(&d.transpose());
        for i in 0..13 {
            for j in 0..13 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_and_lifter_basics() {
        let cfg = FrontendConfig::default();
        let zero = FeatureSequence::new(Mat::zeros(2, 23), FeatureKind::Lmfb, 10.0);
        let out = dct_and_lifter(&zero, &cfg).unwrap();
        assert_eq!(out.dim(), 13);
        assert!(out.frames.data().iter().all(|&v| v == 0.0));
        // constant vector: only C0 survives
        let cst = FeatureSequence::new(Mat::from_fn(1, 23, |_, _| 3.0), FeatureKind::Lmfb, 10.0);
        let out = dct_and_lifter(&cst, &cfg).unwrap();
        assert!(out.frames[(0, 0)].abs() > 1.0);
        for i in 1..13 {
            assert!(out.frames[(0, i)].abs() < 1e-10, "C{i} nonzero");
        }
        // wrong kind is a usage error
        let mfcc = FeatureSequence::new(Mat::zeros(1, 23), FeatureKind::Mfcc, 10.0);
        assert!(dct_and_lifter(&mfcc, &cfg).is_err());
    }

    #[test]
    fn dct_matches_direct_summation_oracle() {
        let cfg = FrontendConfig::default();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let v: Vec<f64> = (0..23).map(|_| next() * 4.0 - 2.0).collect();
        let seq = FeatureSequence::new(Mat::from_rows(&[v.clone()]), FeatureKind::Lmfb, 10.0);
        let out = dct_and_lifter(&seq, &cfg).unwrap();
        let lift = lifter_weights(22, 13);
        for i in 0..13 {
            // naive O(D^2) DCT-II with orthonormal scaling
            let scale = if i == 0 { (1.0f64 / 23.0).sqrt() } else { (2.0f64 / 23.0).sqrt() };
            let direct: f64 = (0..23)
                .map(|j| {
                    v[j] * (core::f64::consts::PI * i as f64 * (j as f64 + 0.5) / 23.0).cos()
                })
                .sum::<f64>()
                * scale;
            assert!((out.frames[(0, i)] - lift[i] * direct).abs() < 1e-10);
        }
    }

    #[test]
    fn deltas_and_cms() {
        // constant sequence: everything zero after CMS
        let cst = FeatureSequence::new(Mat::from_fn(10, 13, |_, j| j as f64), FeatureKind::Mfcc, 10.0);
        let out = add_deltas_and_cms(&cst, 2).unwrap();
        assert_eq!(out.dim(), 39);
        assert!(out.frames.data().iter().all(|&v| v.abs() < 1e-12));
        // linear ramp: interior deltas equal the slope
        let ramp = FeatureSequence::new(Mat::from_fn(20, 1, |t, _| 0.5 * t as f64), FeatureKind::Mfcc, 10.0);
        let vel = delta(&ramp.frames, 2);
        for t in 2..18 {
            assert!((vel[(t, 0)] - 0.5).abs() < 1e-12);
        }
        // zero column means for arbitrary input
        let arb = FeatureSequence::new(
            Mat::from_fn(7, 3, |t, j| libm::sin(t as f64 * 1.3 + j as f64)),
            FeatureKind::Mfcc,
            10.0,
        );
        let out = add_deltas_and_cms(&arb, 2).unwrap();
        for j in 0..out.dim() {
            let mean: f64 = (0..7).map(|t| out.frames[(t, j)]).sum::<f64>() / 7.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = FrontendConfig::default();
        let audio = AudioBuffer::new(
            (0..1600).map(|t| libm::sin(t as f64 * 0.05) * 0.3).collect(),
            8000,
        );
        let a = extract_mfcc(&audio, &cfg).unwrap();
        let b = extract_mfcc(&audio, &cfg).unwrap();
        assert_eq!(a.frames.data(), b.frames.data());
        assert!(a.n_frames() > 0);
    }

    #[test]
    fn lmfb_outputs_nonnegative() {
        let cfg = FrontendConfig::default();
        let audio = AudioBuffer::new(
            (0..2400).map(|t| libm::sin(t as f64 * 0.21) * 0.8).collect(),
            8000,
        );
        let seq = extract_lmfb(&audio, &cfg).unwrap();
        assert!(seq.frames.data().iter().all(|&v| v >= 0.0));
    }
}
