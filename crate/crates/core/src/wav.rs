//! Minimal PCM16 mono WAV reader/writer.
//!
//! Files are written with the canonical 44-byte header. The reader walks the
//! RIFF chunk list, so files with extra chunks (LIST, fact, ...) still load.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::signal::{SampleBuffer, SampleRate};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated or malformed file: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const FULL_SCALE: f64 = 32768.0;

/// Converts a normalized sample to PCM16, clamped symmetrically to ±32767.
pub fn to_pcm16(sample: f64) -> i16 {
    (sample * FULL_SCALE).round().clamp(-32767.0, 32767.0) as i16
}

pub fn from_pcm16(sample: i16) -> f64 {
    sample as f64 / FULL_SCALE
}

/// Encodes a buffer as a complete WAV file image.
pub fn encode(buffer: &SampleBuffer) -> Vec<u8> {
    let data_len = (buffer.len() * 2) as u32;
    let rate = buffer.rate().hz();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in buffer.samples() {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_file(path: impl AsRef<Path>, buffer: &SampleBuffer) -> Result<(), WavError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode(buffer))?;
    Ok(())
}

fn u16_at(bytes: &[u8], at: usize) -> Result<u16, WavError> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or(WavError::Malformed("short fmt chunk"))
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32, WavError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(WavError::Malformed("short header"))
}

/// Decodes a PCM16 mono WAV image at one of the supported rates.
pub fn decode(bytes: &[u8]) -> Result<SampleBuffer, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                let body = bytes
                    .get(body_start..body_start + len)
                    .ok_or(WavError::Malformed("fmt chunk past end of file"))?;
                format = Some((
                    u16_at(body, 0)?,
                    u16_at(body, 2)?,
                    u32_at(body, 4)?,
                    u16_at(body, 14)?,
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or(WavError::Malformed("data chunk before fmt chunk"))?;
                if tag != 1 {
                    return Err(WavError::UnsupportedFormat(format!(
                        "format tag {tag} (only PCM is supported)"
                    )));
                }
                if channels != 1 {
                    return Err(WavError::UnsupportedFormat(format!(
                        "{channels} channels (only mono is supported)"
                    )));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedFormat(format!(
                        "{bits}-bit samples (only 16-bit is supported)"
                    )));
                }
                let rate = SampleRate::new(rate)
                    .map_err(|e| WavError::UnsupportedFormat(e.to_string()))?;
                // Tolerate a data length that overruns the file, as some writers do.
                let end = (body_start + len).min(bytes.len());
                let samples = bytes[body_start..end]
                    .chunks_exact(2)
                    .map(|b| from_pcm16(i16::from_le_bytes([b[0], b[1]])))
                    .collect();
                return SampleBuffer::new(samples, rate)
                    .map_err(|_| WavError::Malformed("sample out of range"));
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_start + len + (len & 1);
    }
    Err(WavError::Malformed("no data chunk"))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<SampleBuffer, WavError> {
    decode(&fs::read(path)?)
}
