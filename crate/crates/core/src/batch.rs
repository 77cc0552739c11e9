//! Batch evaluation over many independent inputs: codec sweeps, bulk
//! decoding and episode runs. Each item is independent, so these fan out
//! through [`crate::par`].

use crate::config::Config;
use crate::controller::{run_episode, ControllerError, Episode, ScriptEntry};
use crate::detector::{decode_buffer, goertzel_power_at_bin, DecoderEvent};
use crate::par::{self, Execution};
use crate::signal::{mix_noise, synthesize_sequence, DtmfKey, SampleBuffer, SignalError, ToneParams};

/// Result of one synthesize-then-decode loopback.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecOutcome {
    pub key: DtmfKey,
    pub sample_rate: u32,
    pub snr_db: f64,
    pub twist_db: f64,
    pub decoded: Vec<DtmfKey>,
}

impl CodecOutcome {
    pub fn exact(&self) -> bool {
        self.decoded == [self.key]
    }
}

/// One loopback case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecCase {
    pub key: DtmfKey,
    pub sample_rate: u32,
    pub params: ToneParams,
    /// `f64::INFINITY` for a clean signal.
    pub snr_db: f64,
    pub seed: u64,
}

pub fn loopback(case: &CodecCase) -> Result<CodecOutcome, SignalError> {
    let clean = synthesize_sequence(&[case.key], &case.params, case.sample_rate)?;
    let buf = mix_noise(&clean, case.snr_db, case.seed)?;
    Ok(CodecOutcome {
        key: case.key,
        sample_rate: case.sample_rate,
        snr_db: case.snr_db,
        twist_db: case.params.twist_db,
        decoded: decode_buffer(&buf).into_iter().map(|e| e.key).collect(),
    })
}

pub fn run_codec_cases(
    cases: &[CodecCase],
    exec: Execution,
) -> Vec<Result<CodecOutcome, SignalError>> {
    par::map(cases, exec, loopback)
}

/// Every key at every rate with clean default tones.
pub fn codec_matrix(rates: &[u32], params: &ToneParams, exec: Execution) -> Vec<Result<CodecOutcome, SignalError>> {
    let cases: Vec<CodecCase> = rates
        .iter()
        .flat_map(|&sample_rate| {
            DtmfKey::ALL.into_iter().map(move |key| CodecCase {
                key,
                sample_rate,
                params: *params,
                snr_db: f64::INFINITY,
                seed: 0,
            })
        })
        .collect();
    run_codec_cases(&cases, exec)
}

pub fn decode_many(buffers: &[SampleBuffer], exec: Execution) -> Vec<Vec<DecoderEvent>> {
    par::map(buffers, exec, decode_buffer)
}

/// Goertzel power of each block at its bin.
pub fn goertzel_many(blocks: &[(Vec<f64>, usize)], exec: Execution) -> Vec<f64> {
    par::map(blocks, exec, |(block, k)| goertzel_power_at_bin(block, *k))
}

/// A headless run request.
#[derive(Debug, Clone)]
pub struct EpisodeJob {
    pub script: Vec<ScriptEntry>,
    pub config: Config,
    pub duration_s: f64,
    pub dt: f64,
}

pub fn run_episodes(jobs: &[EpisodeJob], exec: Execution) -> Vec<Result<Episode, ControllerError>> {
    par::map(jobs, exec, |j| run_episode(&j.script, &j.config, j.duration_s, j.dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_exact_and_mode_independent() {
        let seq = codec_matrix(&[8000], &ToneParams::default(), Execution::Sequential);
        let par = codec_matrix(&[8000], &ToneParams::default(), Execution::Parallel);
        assert_eq!(seq, par);
        assert!(seq.iter().all(|o| o.as_ref().unwrap().exact()));
    }
}
