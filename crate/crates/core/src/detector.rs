//! Software DTMF receiver in the style of the MT8870.
//!
//! A Goertzel bank measures the eight band frequencies per block. A block is
//! classified as a key only when one row and one column tone together dominate
//! the band energy, neither group has a near tie, and the twist is bounded.
//! Classified blocks drive a steering state machine with accept and release
//! guard counts, so every sustained press yields exactly one event.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{DtmfKey, SampleBuffer, SampleRate, COL_FREQS, ROW_FREQS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("target {target} Hz is at or above Nyquist for {sample_rate} Hz")]
    FrequencyAboveNyquist { target: f64, sample_rate: f64 },
    #[error("block must hold at least 2 samples")]
    BlockTooShort,
    #[error("block has {got} samples, detector expects {expected}")]
    BlockSizeMismatch { expected: usize, got: usize },
    #[error("chunk sampled at {got} Hz fed to a detector running at {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("invalid detector config: {0}")]
    InvalidConfig(&'static str),
}

/// The 4-bit code the receiver places on its Q1..Q4 outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Code4(u8);

impl Code4 {
    pub fn new(bits: u8) -> Option<Code4> {
        (bits < 16).then_some(Code4(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Q4..Q1 as a four character binary string, e.g. `"1010"`.
    pub fn binary(self) -> String {
        format!("{:04b}", self.0)
    }

    /// Individual output lines, Q1 (LSB) first.
    pub fn lines(self) -> [bool; 4] {
        [0, 1, 2, 3].map(|i| self.0 >> i & 1 == 1)
    }
}

impl fmt::Display for Code4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.0)
    }
}

/// Receiver output map: digits 1-9 are their own value, 0 is 10, then
/// `*`, `#`, A, B, C follow as 11..15 and D wraps to 0.
pub fn key_to_code(key: DtmfKey) -> Code4 {
    use DtmfKey::*;
    Code4(match key {
        One => 1,
        Two => 2,
        Three => 3,
        Four => 4,
        Five => 5,
        Six => 6,
        Seven => 7,
        Eight => 8,
        Nine => 9,
        Zero => 10,
        Star => 11,
        Pound => 12,
        A => 13,
        B => 14,
        C => 15,
        D => 0,
    })
}

pub fn code_to_key(code: Code4) -> DtmfKey {
    const BY_CODE: [DtmfKey; 16] = [
        DtmfKey::D,
        DtmfKey::One,
        DtmfKey::Two,
        DtmfKey::Three,
        DtmfKey::Four,
        DtmfKey::Five,
        DtmfKey::Six,
        DtmfKey::Seven,
        DtmfKey::Eight,
        DtmfKey::Nine,
        DtmfKey::Zero,
        DtmfKey::Star,
        DtmfKey::Pound,
        DtmfKey::A,
        DtmfKey::B,
        DtmfKey::C,
    ];
    BY_CODE[code.0 as usize]
}

/// DFT bin the Goertzel filter evaluates for `target`.
pub fn goertzel_bin(block_len: usize, sample_rate: f64, target: f64) -> usize {
    (block_len as f64 * target / sample_rate).round() as usize
}

/// Squared magnitude of DFT bin `k` via the Goertzel recurrence.
pub fn goertzel_power_at_bin(block: &[f64], k: usize) -> f64 {
    let n = block.len() as f64;
    let coeff = 2.0 * libm::cos(2.0 * PI * k as f64 / n);
    let (mut s1, mut s2) = (0.0, 0.0);
    for &x in block {
        let s0 = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    (s1 * s1 + s2 * s2 - coeff * s1 * s2).max(0.0)
}

/// Goertzel power of `block` at the bin nearest to `target` Hz.
pub fn goertzel_power(block: &[f64], sample_rate: f64, target: f64) -> Result<f64, DetectorError> {
    if block.len() < 2 {
        return Err(DetectorError::BlockTooShort);
    }
    if target >= sample_rate / 2.0 {
        return Err(DetectorError::FrequencyAboveNyquist {
            target,
            sample_rate,
        });
    }
    Ok(goertzel_power_at_bin(block, goertzel_bin(block.len(), sample_rate, target)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Samples per analysis block.
    pub block_size: usize,
    /// Consecutive agreeing blocks before a digit is declared.
    pub accept_blocks: u32,
    /// Consecutive no-tone blocks before the receiver re-arms.
    pub release_blocks: u32,
    /// Minimum share of the eight-band energy held by the winning pair.
    pub rel_threshold: f64,
    /// Largest accepted |column level - row level|, dB.
    pub twist_limit_db: f64,
    /// Pair energy floor as a fraction of a full-scale sine's bin power.
    pub silence_floor: f64,
    /// Runner-up within this many dB of the winner in either group rejects the block.
    pub tie_margin_db: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            block_size: 205,
            accept_blocks: 2,
            release_blocks: 2,
            rel_threshold: 0.8,
            twist_limit_db: 8.0,
            silence_floor: 1e-6,
            tie_margin_db: 1.0,
        }
    }
}

impl DetectorConfig {
    /// Default thresholds with the 205-sample/8 kHz block scaled to `rate`.
    pub fn for_rate(rate: SampleRate) -> Self {
        DetectorConfig::default().scaled_to(rate)
    }

    /// Treats `block_size` as an 8 kHz block and rescales it for `rate`.
    pub fn scaled_to(mut self, rate: SampleRate) -> Self {
        self.block_size =
            (self.block_size as f64 * rate.hz() as f64 / 8000.0).round() as usize;
        self
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.block_size < 2 {
            return Err(DetectorError::InvalidConfig("block_size must be at least 2"));
        }
        if self.accept_blocks < 1 || self.release_blocks < 1 {
            return Err(DetectorError::InvalidConfig(
                "accept_blocks and release_blocks must be at least 1",
            ));
        }
        if !(self.rel_threshold > 0.0 && self.rel_threshold < 1.0) {
            return Err(DetectorError::InvalidConfig("rel_threshold must lie in (0, 1)"));
        }
        if !(self.twist_limit_db >= 0.0) {
            return Err(DetectorError::InvalidConfig("twist_limit_db must be non-negative"));
        }
        if !(self.silence_floor >= 0.0) || !(self.tie_margin_db >= 0.0) {
            return Err(DetectorError::InvalidConfig(
                "silence_floor and tie_margin_db must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Goertzel powers at the four row and four column frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPowers {
    pub rows: [f64; 4],
    pub cols: [f64; 4],
}

impl BandPowers {
    pub fn measure(block: &[f64], sample_rate: f64) -> BandPowers {
        let n = block.len();
        let at = |f: f64| goertzel_power_at_bin(block, goertzel_bin(n, sample_rate, f));
        BandPowers {
            rows: ROW_FREQS.map(at),
            cols: COL_FREQS.map(at),
        }
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().chain(&self.cols).sum()
    }
}

/// Index of the strongest entry and whether the runner-up is within `margin_db`.
fn strongest(powers: &[f64; 4], margin_db: f64) -> (usize, bool) {
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]));
    let (best, second) = (powers[order[0]], powers[order[1]]);
    let tied = second > 0.0 && best <= second * libm::pow(10.0, margin_db / 10.0);
    (order[0], tied)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockClass {
    Key(DtmfKey),
    NoTone,
}

impl BlockClass {
    pub fn key(self) -> Option<DtmfKey> {
        match self {
            BlockClass::Key(k) => Some(k),
            BlockClass::NoTone => None,
        }
    }
}

fn classify_samples(block: &[f64], sample_rate: f64, cfg: &DetectorConfig) -> BlockClass {
    let powers = BandPowers::measure(block, sample_rate);
    let (row, row_tied) = strongest(&powers.rows, cfg.tie_margin_db);
    let (col, col_tied) = strongest(&powers.cols, cfg.tie_margin_db);
    if row_tied || col_tied {
        return BlockClass::NoTone;
    }
    let (p_row, p_col) = (powers.rows[row], powers.cols[col]);
    let pair = p_row + p_col;
    let half = block.len() as f64 / 2.0;
    if pair <= cfg.silence_floor * half * half {
        return BlockClass::NoTone;
    }
    if pair < cfg.rel_threshold * powers.total() {
        return BlockClass::NoTone;
    }
    if p_row <= 0.0 || p_col <= 0.0 {
        return BlockClass::NoTone;
    }
    let twist_db = 10.0 * libm::log10(p_col / p_row);
    if twist_db.abs() > cfg.twist_limit_db {
        return BlockClass::NoTone;
    }
    match DtmfKey::from_grid(row, col) {
        Some(key) => BlockClass::Key(key),
        None => BlockClass::NoTone,
    }
}

/// Classifies one analysis block.
pub fn classify_block(block: &SampleBuffer, cfg: &DetectorConfig) -> Result<BlockClass, DetectorError> {
    if block.len() != cfg.block_size {
        return Err(DetectorError::BlockSizeMismatch {
            expected: cfg.block_size,
            got: block.len(),
        });
    }
    Ok(classify_samples(block.samples(), block.rate().hz() as f64, cfg))
}

/// One validated key press.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderEvent {
    pub onset_sample: u64,
    pub key: DtmfKey,
    #[serde(rename = "code_binary", with = "code_binary")]
    pub code: Code4,
    /// Samples from onset to the block that latched the digit.
    pub duration_samples: u64,
}

impl DecoderEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

mod code_binary {
    use super::Code4;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(code: &Code4, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&code.binary())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Code4, D::Error> {
        let s = String::deserialize(d)?;
        u8::from_str_radix(&s, 2)
            .ok()
            .filter(|_| s.len() == 4)
            .and_then(Code4::new)
            .ok_or_else(|| serde::de::Error::custom(format!("bad 4-bit code {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Armed,
    Qualifying { key: DtmfKey, count: u32, onset: u64 },
    Latched { key: DtmfKey },
    Releasing { key: DtmfKey, count: u32 },
}

/// Streaming receiver state for one audio stream.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    rate: SampleRate,
    phase: Phase,
    residual: Vec<f64>,
    /// Absolute index of the first sample in `residual`.
    block_start: u64,
    emitted: u64,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, rate: SampleRate) -> Result<Self, DetectorError> {
        cfg.validate()?;
        Ok(Detector {
            cfg,
            rate,
            phase: Phase::Armed,
            residual: Vec::with_capacity(cfg.block_size),
            block_start: 0,
            emitted: 0,
        })
    }

    /// Detector with default thresholds for `rate`.
    pub fn with_defaults(rate: SampleRate) -> Self {
        Detector::new(DetectorConfig::for_rate(rate), rate).expect("default config is valid")
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn rate(&self) -> SampleRate {
        self.rate
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn residual_len(&self) -> usize {
        self.residual.len()
    }

    /// Samples consumed so far, including the buffered partial block.
    pub fn position(&self) -> u64 {
        self.block_start + self.residual.len() as u64
    }

    /// Feeds a chunk of any size; returns the events it completed.
    pub fn push_samples(&mut self, chunk: &SampleBuffer) -> Result<Vec<DecoderEvent>, DetectorError> {
        if chunk.rate() != self.rate {
            return Err(DetectorError::SampleRateMismatch {
                expected: self.rate.hz(),
                got: chunk.rate().hz(),
            });
        }
        Ok(self.push_slice(chunk.samples()))
    }

    /// Same as [`Detector::push_samples`] for raw samples at the detector's rate.
    pub fn push_slice(&mut self, mut samples: &[f64]) -> Vec<DecoderEvent> {
        let mut events = Vec::new();
        let n = self.cfg.block_size;
        while !samples.is_empty() {
            let take = (n - self.residual.len()).min(samples.len());
            self.residual.extend_from_slice(&samples[..take]);
            samples = &samples[take..];
            if self.residual.len() == n {
                let class = classify_samples(&self.residual, self.rate.hz() as f64, &self.cfg);
                if let Some(event) = self.advance(class) {
                    events.push(event);
                }
                self.residual.clear();
                self.block_start += n as u64;
            }
        }
        events
    }

    fn advance(&mut self, class: BlockClass) -> Option<DecoderEvent> {
        let accept = self.cfg.accept_blocks;
        let release = self.cfg.release_blocks;
        let (phase, latched) = match (self.phase, class.key()) {
            (Phase::Armed, None) => (Phase::Armed, false),
            (Phase::Qualifying { .. }, None) => (Phase::Armed, false),
            (Phase::Qualifying { key, count, onset }, Some(k)) if k == key => {
                qualify(key, count + 1, onset, accept)
            }
            (Phase::Armed | Phase::Qualifying { .. }, Some(k)) => {
                qualify(k, 1, self.block_start, accept)
            }
            (Phase::Latched { key } | Phase::Releasing { key, .. }, Some(k)) if k == key => {
                (Phase::Latched { key }, false)
            }
            // A different digit without an intervening gap is not a new press.
            (Phase::Latched { key } | Phase::Releasing { key, .. }, Some(_)) => {
                (Phase::Releasing { key, count: 0 }, false)
            }
            (Phase::Latched { key }, None) => (release_step(key, 1, release), false),
            (Phase::Releasing { key, count }, None) => (release_step(key, count + 1, release), false),
        };
        let onset = match self.phase {
            Phase::Qualifying { key, onset, .. } if latched && class.key() == Some(key) => onset,
            _ => self.block_start,
        };
        self.phase = phase;
        if !latched {
            return None;
        }
        let key = class.key().expect("latching requires a key block");
        self.emitted += 1;
        Some(DecoderEvent {
            onset_sample: onset,
            key,
            code: key_to_code(key),
            duration_samples: self.block_start + self.cfg.block_size as u64 - onset,
        })
    }

    /// Returns to the armed state and drops any buffered partial block.
    pub fn reset(&mut self) {
        self.block_start += self.residual.len() as u64;
        self.residual.clear();
        self.phase = Phase::Armed;
    }
}

fn qualify(key: DtmfKey, count: u32, onset: u64, accept: u32) -> (Phase, bool) {
    if count >= accept {
        (Phase::Latched { key }, true)
    } else {
        (Phase::Qualifying { key, count, onset }, false)
    }
}

fn release_step(key: DtmfKey, count: u32, release: u32) -> Phase {
    if count >= release {
        Phase::Armed
    } else {
        Phase::Releasing { key, count }
    }
}

/// Decodes a whole buffer with default thresholds for its rate.
pub fn decode_buffer(buffer: &SampleBuffer) -> Vec<DecoderEvent> {
    Detector::with_defaults(buffer.rate()).push_slice(buffer.samples())
}

pub fn decode_buffer_with(buffer: &SampleBuffer, cfg: DetectorConfig) -> Result<Vec<DecoderEvent>, DetectorError> {
    Ok(Detector::new(cfg, buffer.rate())?.push_slice(buffer.samples()))
}
