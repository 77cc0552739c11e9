//! DTMF keypad map and tone synthesis.
//!
//! The keypad is the 4x4 Q.23 grid: rows `123A / 456B / 789C / *0#D`, each
//! key being the sum of one low-group (row) and one high-group (column) sine.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Low-group (row) frequencies in Hz.
pub const ROW_FREQS: [f64; 4] = [697.0, 770.0, 852.0, 941.0];
/// High-group (column) frequencies in Hz.
pub const COL_FREQS: [f64; 4] = [1209.0, 1336.0, 1477.0, 1633.0];

/// Sample rates the codec accepts. Anything else is rejected, never resampled.
pub const SUPPORTED_RATES: [u32; 3] = [8000, 16000, 44100];

/// Lowest rate that keeps the top column tone 10% under Nyquist.
pub const MIN_SAMPLE_RATE: f64 = 2.0 * 1633.0 * 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("sample rate {0} Hz is below the {MIN_SAMPLE_RATE} Hz minimum")]
    SampleRateTooLow(u32),
    #[error("unsupported sample rate {0} Hz (supported: 8000, 16000, 44100)")]
    UnsupportedSampleRate(u32),
    #[error("tone amplitudes sum to {0}, exceeding full scale")]
    AmplitudeOverflow(f64),
    #[error("invalid tone parameters: {0}")]
    InvalidParams(&'static str),
    #[error("sample {value} at index {index} is outside [-1, 1]")]
    Clipping { index: usize, value: f64 },
    #[error("key sequence is empty")]
    EmptySequence,
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("invalid key character {0:?}")]
    InvalidKey(char),
}

/// One of the 16 keys of the DTMF keypad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DtmfKey {
    One,
    Two,
    Three,
    A,
    Four,
    Five,
    Six,
    B,
    Seven,
    Eight,
    Nine,
    C,
    Star,
    Zero,
    Pound,
    D,
}

impl DtmfKey {
    /// All keys in keypad order, row by row.
    pub const ALL: [DtmfKey; 16] = [
        DtmfKey::One,
        DtmfKey::Two,
        DtmfKey::Three,
        DtmfKey::A,
        DtmfKey::Four,
        DtmfKey::Five,
        DtmfKey::Six,
        DtmfKey::B,
        DtmfKey::Seven,
        DtmfKey::Eight,
        DtmfKey::Nine,
        DtmfKey::C,
        DtmfKey::Star,
        DtmfKey::Zero,
        DtmfKey::Pound,
        DtmfKey::D,
    ];

    /// Position on the keypad as `(row, column)`.
    pub fn grid_position(self) -> (usize, usize) {
        let idx = self as usize;
        (idx / 4, idx % 4)
    }

    pub fn from_grid(row: usize, col: usize) -> Option<DtmfKey> {
        if row < 4 && col < 4 {
            Some(Self::ALL[row * 4 + col])
        } else {
            None
        }
    }

    pub fn as_char(self) -> char {
        b"123A456B789C*0#D"[self as usize] as char
    }

    pub fn from_char(c: char) -> Option<DtmfKey> {
        let c = c.to_ascii_uppercase();
        Self::ALL.iter().copied().find(|k| k.as_char() == c)
    }

    /// Parses a string of key characters, e.g. `"123A*#"`.
    pub fn parse_sequence(s: &str) -> Result<Vec<DtmfKey>, SignalError> {
        s.chars()
            .map(|c| DtmfKey::from_char(c).ok_or(SignalError::InvalidKey(c)))
            .collect()
    }
}

impl fmt::Display for DtmfKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for DtmfKey {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => DtmfKey::from_char(c).ok_or(SignalError::InvalidKey(c)),
            (Some(c), Some(_)) => Err(SignalError::InvalidKey(c)),
            (None, _) => Err(SignalError::InvalidKey(' ')),
        }
    }
}

impl Serialize for DtmfKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for DtmfKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Row and column frequency of `key`, in Hz.
pub fn key_tone_pair(key: DtmfKey) -> (f64, f64) {
    let (row, col) = key.grid_position();
    (ROW_FREQS[row], COL_FREQS[col])
}

/// A validated sample rate from [`SUPPORTED_RATES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SampleRate(u32);

impl SampleRate {
    pub const TELEPHONY: SampleRate = SampleRate(8000);

    pub fn new(hz: u32) -> Result<Self, SignalError> {
        if (hz as f64) < MIN_SAMPLE_RATE {
            Err(SignalError::SampleRateTooLow(hz))
        } else if SUPPORTED_RATES.contains(&hz) {
            Ok(SampleRate(hz))
        } else {
            Err(SignalError::UnsupportedSampleRate(hz))
        }
    }

    pub fn hz(self) -> u32 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = SampleRate> {
        SUPPORTED_RATES.iter().map(|&hz| SampleRate(hz))
    }

    /// Number of samples covering `ms` milliseconds (rounded to nearest).
    pub fn samples_for_ms(self, ms: f64) -> usize {
        (ms * self.0 as f64 / 1000.0).round() as usize
    }
}

impl TryFrom<u32> for SampleRate {
    type Error = SignalError;

    fn try_from(hz: u32) -> Result<Self, Self::Error> {
        SampleRate::new(hz)
    }
}

impl From<SampleRate> for u32 {
    fn from(rate: SampleRate) -> u32 {
        rate.0
    }
}

impl Default for SampleRate {
    fn default() -> Self {
        SampleRate::TELEPHONY
    }
}

/// Tone shape and timing for synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToneParams {
    /// Linear peak amplitude of the low-group tone.
    pub amplitude: f64,
    /// High-group level minus low-group level, dB.
    pub twist_db: f64,
    pub duration_ms: f64,
    pub pause_ms: f64,
}

impl Default for ToneParams {
    fn default() -> Self {
        ToneParams {
            amplitude: 0.4,
            twist_db: 0.0,
            duration_ms: 80.0,
            pause_ms: 80.0,
        }
    }
}

impl ToneParams {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(SignalError::InvalidParams("amplitude must lie in [0, 1]"));
        }
        if !(self.duration_ms > 0.0) || !self.duration_ms.is_finite() {
            return Err(SignalError::InvalidParams("duration_ms must be positive"));
        }
        if !(self.pause_ms >= 0.0) || !self.pause_ms.is_finite() {
            return Err(SignalError::InvalidParams("pause_ms must be non-negative"));
        }
        if !self.twist_db.is_finite() {
            return Err(SignalError::InvalidParams("twist_db must be finite"));
        }
        Ok(())
    }

    /// Peak amplitude of the high-group tone.
    pub fn high_amplitude(&self) -> f64 {
        self.amplitude * libm::pow(10.0, self.twist_db / 20.0)
    }
}

/// Mono audio with samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    rate: SampleRate,
}

impl SampleBuffer {
    /// Builds a buffer, rejecting any sample outside [-1, 1] (or NaN).
    pub fn new(samples: Vec<f64>, rate: SampleRate) -> Result<Self, SignalError> {
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(SignalError::Clipping { index, value });
        }
        Ok(SampleBuffer { samples, rate })
    }

    pub fn silence(len: usize, rate: SampleRate) -> Self {
        SampleBuffer {
            samples: vec![0.0; len],
            rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate.hz() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean-square power.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Appends `other`; both buffers must share a rate.
    pub fn extend_from(&mut self, other: &SampleBuffer) {
        debug_assert_eq!(self.rate, other.rate);
        self.samples.extend_from_slice(&other.samples);
    }

    pub fn append_silence(&mut self, len: usize) {
        self.samples.resize(self.samples.len() + len, 0.0);
    }
}

fn tone_samples(key: DtmfKey, params: &ToneParams, rate: SampleRate) -> Vec<f64> {
    let (f_low, f_high) = key_tone_pair(key);
    let a_low = params.amplitude;
    let a_high = params.high_amplitude();
    let fs = rate.hz() as f64;
    let n = rate.samples_for_ms(params.duration_ms);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            a_low * libm::sin(2.0 * std::f64::consts::PI * f_low * t)
                + a_high * libm::sin(2.0 * std::f64::consts::PI * f_high * t)
        })
        .collect()
}

/// Synthesizes one key press: `duration_ms` of the two-tone sum, both phases
/// starting at zero.
pub fn synthesize_key(
    key: DtmfKey,
    params: &ToneParams,
    sample_rate: u32,
) -> Result<SampleBuffer, SignalError> {
    let rate = SampleRate::new(sample_rate)?;
    params.validate()?;
    let total = params.amplitude + params.high_amplitude();
    if total > 1.0 {
        return Err(SignalError::AmplitudeOverflow(total));
    }
    SampleBuffer::new(tone_samples(key, params, rate), rate)
}

/// Synthesizes a key sequence as `pause, tone, pause, tone, ..., tone, pause`.
pub fn synthesize_sequence(
    keys: &[DtmfKey],
    params: &ToneParams,
    sample_rate: u32,
) -> Result<SampleBuffer, SignalError> {
    if keys.is_empty() {
        return Err(SignalError::EmptySequence);
    }
    let rate = SampleRate::new(sample_rate)?;
    let pause = rate.samples_for_ms(params.pause_ms);
    let mut out = SampleBuffer::silence(pause, rate);
    for (i, &key) in keys.iter().enumerate() {
        if i > 0 {
            out.append_silence(pause);
        }
        out.extend_from(&synthesize_key(key, params, sample_rate)?);
    }
    out.append_silence(pause);
    Ok(out)
}

fn normal_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Adds seeded white Gaussian noise at the requested signal-to-noise ratio.
///
/// The noise realization is rescaled so its mean-square power is exactly
/// `signal_power / 10^(snr_db/10)`. `snr_db = +inf` returns the input.
/// Fails with [`SignalError::Clipping`] if the sum leaves [-1, 1].
pub fn mix_noise(buffer: &SampleBuffer, snr_db: f64, seed: u64) -> Result<SampleBuffer, SignalError> {
    if buffer.is_empty() {
        return Err(SignalError::EmptyBuffer);
    }
    if snr_db == f64::INFINITY {
        return Ok(buffer.clone());
    }
    let target_power = buffer.power() / libm::pow(10.0, snr_db / 10.0);
    let noise = scaled_noise(buffer.len(), target_power, seed);
    let mixed = buffer
        .samples()
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + n)
        .collect();
    SampleBuffer::new(mixed, buffer.rate())
}

/// Noise-only buffer whose RMS level is `level_dbfs` relative to full scale 1.0.
pub fn white_noise(
    len: usize,
    level_dbfs: f64,
    seed: u64,
    rate: SampleRate,
) -> Result<SampleBuffer, SignalError> {
    let rms = libm::pow(10.0, level_dbfs / 20.0);
    SampleBuffer::new(scaled_noise(len, rms * rms, seed), rate)
}

fn scaled_noise(len: usize, target_power: f64, seed: u64) -> Vec<f64> {
    let mut noise = normal_noise(len, seed);
    let mean = noise.iter().sum::<f64>() / len as f64;
    noise.iter_mut().for_each(|n| *n -= mean);
    let power = noise.iter().map(|n| n * n).sum::<f64>() / len as f64;
    let scale = if power > 0.0 {
        (target_power / power).sqrt()
    } else {
        0.0
    };
    noise.iter_mut().for_each(|n| *n *= scale);
    noise
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_pairs_from_keypad_map() {
        assert_eq!(key_tone_pair(DtmfKey::One), (697.0, 1209.0));
        assert_eq!(key_tone_pair(DtmfKey::Five), (770.0, 1336.0));
        assert_eq!(key_tone_pair(DtmfKey::D), (941.0, 1633.0));
        assert_eq!(key_tone_pair(DtmfKey::Zero), (941.0, 1336.0));
        assert_eq!(key_tone_pair(DtmfKey::Star), (941.0, 1209.0));
    }

    #[test]
    fn pairs_are_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for key in DtmfKey::ALL {
            let (lo, hi) = key_tone_pair(key);
            assert!(ROW_FREQS.contains(&lo));
            assert!(COL_FREQS.contains(&hi));
            assert!(seen.insert((lo as u32, hi as u32)));
            let (r, c) = key.grid_position();
            assert_eq!(DtmfKey::from_grid(r, c), Some(key));
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn key_chars_round_trip() {
        let s: String = DtmfKey::ALL.iter().map(|k| k.as_char()).collect();
        assert_eq!(s, "123A456B789C*0#D");
        assert_eq!(DtmfKey::parse_sequence(&s).unwrap(), DtmfKey::ALL.to_vec());
        assert_eq!(DtmfKey::from_char('b'), Some(DtmfKey::B));
        assert_eq!(DtmfKey::parse_sequence("12x"), Err(SignalError::InvalidKey('x')));
    }

    #[test]
    fn synthesized_lengths() {
        let p = ToneParams {
            duration_ms: 40.0,
            ..Default::default()
        };
        assert_eq!(synthesize_key(DtmfKey::One, &p, 8000).unwrap().len(), 320);
        let p = ToneParams {
            duration_ms: 100.0,
            ..Default::default()
        };
        assert_eq!(synthesize_key(DtmfKey::Five, &p, 8000).unwrap().len(), 800);
    }

    #[test]
    fn zero_amplitude_is_silence() {
        let p = ToneParams {
            amplitude: 0.0,
            ..Default::default()
        };
        let buf = synthesize_key(DtmfKey::Nine, &p, 8000).unwrap();
        assert_eq!(buf.len(), 640);
        assert!(buf.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn sequence_layout() {
        let p = ToneParams {
            duration_ms: 60.0,
            pause_ms: 60.0,
            ..Default::default()
        };
        let buf = synthesize_sequence(&[DtmfKey::One, DtmfKey::Two], &p, 8000).unwrap();
        assert_eq!(buf.len(), 2400);

        let single = synthesize_sequence(&[DtmfKey::Six], &p, 8000).unwrap();
        let tone = synthesize_key(DtmfKey::Six, &p, 8000).unwrap();
        assert_eq!(&single.samples()[480..960], tone.samples());
        assert!(single.samples()[..480].iter().all(|&s| s == 0.0));
        assert!(single.samples()[960..].iter().all(|&s| s == 0.0));

        assert_eq!(
            synthesize_sequence(&[], &p, 8000),
            Err(SignalError::EmptySequence)
        );
    }

    #[test]
    fn rate_and_amplitude_errors() {
        let p = ToneParams::default();
        assert_eq!(
            synthesize_key(DtmfKey::One, &p, 3000),
            Err(SignalError::SampleRateTooLow(3000))
        );
        assert_eq!(
            synthesize_key(DtmfKey::One, &p, 22050),
            Err(SignalError::UnsupportedSampleRate(22050))
        );
        let loud = ToneParams {
            amplitude: 0.6,
            ..Default::default()
        };
        assert!(matches!(
            synthesize_key(DtmfKey::One, &loud, 8000),
            Err(SignalError::AmplitudeOverflow(_))
        ));
    }

    #[test]
    fn twist_sets_high_group_level() {
        let p = ToneParams {
            amplitude: 0.3,
            twist_db: 6.0,
            ..Default::default()
        };
        let ratio_db = 20.0 * (p.high_amplitude() / p.amplitude).log10();
        assert!((ratio_db - 6.0).abs() < 1e-12);
    }

    #[test]
    fn noise_identity_and_determinism() {
        let buf = synthesize_key(DtmfKey::Four, &ToneParams::default(), 8000).unwrap();
        assert_eq!(mix_noise(&buf, f64::INFINITY, 1).unwrap(), buf);
        let a = mix_noise(&buf, 20.0, 42).unwrap();
        let b = mix_noise(&buf, 20.0, 42).unwrap();
        assert_eq!(a, b);
        let c = mix_noise(&buf, 20.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn measured_snr_matches_request() {
        let p = ToneParams {
            amplitude: 0.2,
            duration_ms: 1000.0,
            ..Default::default()
        };
        let clean = synthesize_key(DtmfKey::Eight, &p, 8000).unwrap();
        for snr in [10.0, 20.0, 30.0] {
            let noisy = mix_noise(&clean, snr, 7).unwrap();
            let noise_power = noisy
                .samples()
                .iter()
                .zip(clean.samples())
                .map(|(n, s)| (n - s).powi(2))
                .sum::<f64>()
                / clean.len() as f64;
            let measured = 10.0 * (clean.power() / noise_power).log10();
            assert!((measured - snr).abs() < 0.5, "snr {snr}: measured {measured}");
        }
    }

    #[test]
    fn clipping_is_an_error() {
        let rate = SampleRate::TELEPHONY;
        assert!(matches!(
            SampleBuffer::new(vec![0.0, 1.5], rate),
            Err(SignalError::Clipping { index: 1, .. })
        ));
        assert!(SampleBuffer::new(vec![f64::NAN], rate).is_err());
    }
}
