//! Session service message schema (version 1).
//!
//! Every message is one JSON object carried in one WebSocket text frame:
//!
//! ```json
//! {"v":1,"seq":7,"kind":"KeyPress","payload":{"key":"2"}}
//! ```
//!
//! `seq` is strictly increasing per connection and direction. The server's
//! sequence is gapless. Client kinds: `KeyPress`, `AudioChunk`,
//! `ConfigUpdate`. Server kinds: `StateSnapshot`, `EventNotice`, `Error`.

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ArmCommand, Handled, Outcome, Snapshot};
use crate::detector::DecoderEvent;
use crate::signal::{DtmfKey, SampleBuffer, SampleRate};
use crate::wav::{from_pcm16, to_pcm16};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest decoded PCM payload of one `AudioChunk`, bytes.
pub const MAX_AUDIO_CHUNK_BYTES: usize = 64 * 1024;
/// Largest accepted text frame.
pub const MAX_FRAME_BYTES: usize = 4 * MAX_AUDIO_CHUNK_BYTES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("sequence number {got} does not follow {last}")]
    Sequence { last: u64, got: u64 },
    #[error("audio chunk of {0} bytes exceeds the 64 KiB limit")]
    ChunkTooLarge(usize),
    #[error("bad audio chunk: {0}")]
    BadAudio(String),
    #[error("snapshot rate {0} Hz outside 1..=60")]
    BadRate(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<B> {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum ClientBody {
    KeyPress {
        key: DtmfKey,
    },
    /// Base64 PCM16 little-endian mono samples at `sample_rate`.
    AudioChunk {
        sample_rate: u32,
        pcm16: String,
    },
    ConfigUpdate {
        snapshot_hz: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventNotice {
    #[serde(flatten)]
    pub event: DecoderEvent,
    pub command: ArmCommand,
    pub outcome: Outcome,
}

impl EventNotice {
    pub fn new(event: DecoderEvent, handled: Handled) -> EventNotice {
        EventNotice {
            event,
            command: handled.command,
            outcome: handled.outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "payload")]
pub enum ServerBody {
    StateSnapshot(Snapshot),
    EventNotice(EventNotice),
    Error { reason: String },
}

impl ServerBody {
    pub fn is_snapshot(&self) -> bool {
        matches!(self, ServerBody::StateSnapshot(_))
    }
}

pub fn encode_server(seq: u64, body: &ServerBody) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        seq,
        body,
    })
    .expect("server message serializes")
}

pub fn encode_client(seq: u64, body: &ClientBody) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        seq,
        body,
    })
    .expect("client message serializes")
}

/// Parses and validates one client frame. `last_seq` is the previous accepted
/// sequence number on this connection.
pub fn decode_client(text: &str, last_seq: Option<u64>) -> Result<Envelope<ClientBody>, ProtocolError> {
    if text.len() > MAX_FRAME_BYTES {
        return Err(ProtocolError::Malformed(format!("frame of {} bytes is too large", text.len())));
    }
    let msg: Envelope<ClientBody> =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if msg.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(msg.v));
    }
    if let Some(last) = last_seq {
        if msg.seq <= last {
            return Err(ProtocolError::Sequence { last, got: msg.seq });
        }
    }
    match &msg.body {
        ClientBody::ConfigUpdate { snapshot_hz } if !(1..=60).contains(snapshot_hz) => {
            Err(ProtocolError::BadRate(*snapshot_hz))
        }
        _ => Ok(msg),
    }
}

pub fn encode_audio(buffer: &SampleBuffer) -> ClientBody {
    let bytes: Vec<u8> = buffer
        .samples()
        .iter()
        .flat_map(|&s| to_pcm16(s).to_le_bytes())
        .collect();
    ClientBody::AudioChunk {
        sample_rate: buffer.rate().hz(),
        pcm16: base64::engine::general_purpose::STANDARD.encode(bytes),
    }
}

/// Decodes an `AudioChunk` payload, enforcing the size bound.
pub fn decode_audio(sample_rate: u32, pcm16: &str) -> Result<SampleBuffer, ProtocolError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(pcm16)
        .map_err(|e| ProtocolError::BadAudio(e.to_string()))?;
    if bytes.len() > MAX_AUDIO_CHUNK_BYTES {
        return Err(ProtocolError::ChunkTooLarge(bytes.len()));
    }
    if bytes.len() % 2 != 0 {
        return Err(ProtocolError::BadAudio("odd number of PCM bytes".into()));
    }
    let rate = SampleRate::new(sample_rate).map_err(|e| ProtocolError::BadAudio(e.to_string()))?;
    let samples = bytes
        .chunks_exact(2)
        .map(|b| from_pcm16(i16::from_le_bytes([b[0], b[1]])))
        .collect();
    SampleBuffer::new(samples, rate).map_err(|e| ProtocolError::BadAudio(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_key, ToneParams};

    #[test]
    fn client_message_shape() {
        let text = encode_client(3, &ClientBody::KeyPress { key: DtmfKey::Two });
        assert_eq!(text, r#"{"v":1,"seq":3,"kind":"KeyPress","payload":{"key":"2"}}"#);
        let back = decode_client(&text, Some(2)).unwrap();
        assert_eq!(back.body, ClientBody::KeyPress { key: DtmfKey::Two });
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(decode_client("{", None), Err(ProtocolError::Malformed(_))));
        let text = encode_client(3, &ClientBody::KeyPress { key: DtmfKey::Two });
        assert_eq!(
            decode_client(&text, Some(3)),
            Err(ProtocolError::Sequence { last: 3, got: 3 })
        );
        let v2 = text.replace(r#""v":1"#, r#""v":2"#);
        assert_eq!(decode_client(&v2, None), Err(ProtocolError::Version(2)));
        let unknown = r#"{"v":1,"seq":1,"kind":"Teleport","payload":{}}"#;
        assert!(decode_client(unknown, None).is_err());
        let fast = encode_client(1, &ClientBody::ConfigUpdate { snapshot_hz: 61 });
        assert_eq!(decode_client(&fast, None), Err(ProtocolError::BadRate(61)));
    }

    #[test]
    fn audio_round_trip_and_bound() {
        let tone = synthesize_key(DtmfKey::Nine, &ToneParams::default(), 8000).unwrap();
        let ClientBody::AudioChunk { sample_rate, pcm16 } = encode_audio(&tone) else {
            unreachable!()
        };
        let back = decode_audio(sample_rate, &pcm16).unwrap();
        assert_eq!(back.len(), tone.len());

        let big = SampleBuffer::silence(MAX_AUDIO_CHUNK_BYTES / 2 + 1, tone.rate());
        let ClientBody::AudioChunk { sample_rate, pcm16 } = encode_audio(&big) else {
            unreachable!()
        };
        assert!(matches!(
            decode_audio(sample_rate, &pcm16),
            Err(ProtocolError::ChunkTooLarge(_))
        ));
    }
}
