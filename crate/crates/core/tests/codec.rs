use std::f64::consts::PI;

use dtmf_arm::batch::{codec_matrix, run_codec_cases, CodecCase};
use dtmf_arm::detector::{
    decode_buffer, goertzel_bin, goertzel_power_at_bin, key_to_code, code_to_key, Code4, Detector,
    DecoderEvent,
};
use dtmf_arm::par::Execution;
use dtmf_arm::signal::{
    key_tone_pair, synthesize_sequence, white_noise, DtmfKey, SampleBuffer, SampleRate, ToneParams,
    COL_FREQS, ROW_FREQS, SUPPORTED_RATES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dft_power(block: &[f64], k: usize) -> f64 {
    let n = block.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, x) in block.iter().enumerate() {
        let w = -2.0 * PI * k as f64 * i as f64 / n;
        re += x * w.cos();
        im += x * w.sin();
    }
    re * re + im * im
}

fn two_tone(f_lo: f64, f_hi: f64, a_lo: f64, a_hi: f64, phase: (f64, f64), n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            a_lo * (2.0 * PI * f_lo * t + phase.0).sin() + a_hi * (2.0 * PI * f_hi * t + phase.1).sin()
        })
        .collect()
}

fn block_size(rate: u32) -> usize {
    (205.0 * rate as f64 / 8000.0).round() as usize
}

#[test]
fn every_key_decodes_at_every_rate() {
    for outcome in codec_matrix(&SUPPORTED_RATES, &ToneParams::default(), Execution::default()) {
        let o = outcome.unwrap();
        assert!(o.exact(), "{:?} at {} Hz decoded as {:?}", o.key, o.sample_rate, o.decoded);
    }
}

#[test]
fn output_code_table() {
    let table = [
        ('1', 0b0001),
        ('2', 0b0010),
        ('3', 0b0011),
        ('4', 0b0100),
        ('5', 0b0101),
        ('6', 0b0110),
        ('7', 0b0111),
        ('8', 0b1000),
        ('9', 0b1001),
        ('0', 0b1010),
        ('*', 0b1011),
        ('#', 0b1100),
        ('A', 0b1101),
        ('B', 0b1110),
        ('C', 0b1111),
        ('D', 0b0000),
    ];
    for (c, bits) in table {
        let key = DtmfKey::from_char(c).unwrap();
        assert_eq!(key_to_code(key).bits(), bits, "key {c}");
        assert_eq!(code_to_key(Code4::new(bits).unwrap()), key);
    }
    assert_eq!(key_to_code(DtmfKey::Zero).binary(), "1010");
    assert_eq!(key_to_code(DtmfKey::D).binary(), "0000");
}

#[test]
fn dominant_bins_match_tone_pair() {
    for rate in SUPPORTED_RATES {
        let n = block_size(rate);
        let fs = rate as f64;
        for key in DtmfKey::ALL {
            let (lo, hi) = key_tone_pair(key);
            let block = two_tone(lo, hi, 0.4, 0.4, (0.0, 0.0), n, fs);
            let best = |freqs: &[f64; 4]| {
                (0..4)
                    .max_by(|&a, &b| {
                        let pa = dft_power(&block, goertzel_bin(n, fs, freqs[a]));
                        let pb = dft_power(&block, goertzel_bin(n, fs, freqs[b]));
                        pa.total_cmp(&pb)
                    })
                    .unwrap()
            };
            assert_eq!((best(&ROW_FREQS), best(&COL_FREQS)), key.grid_position(), "{key:?} at {rate}");
        }
    }
}

#[test]
fn goertzel_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6163);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rate = SUPPORTED_RATES[rng.random_range(0..3)];
        let fs = rate as f64;
        let n = block_size(rate);
        let key = DtmfKey::ALL[rng.random_range(0..16)];
        let (lo, hi) = key_tone_pair(key);
        let phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let block = two_tone(lo, hi, rng.random_range(0.05..0.5), rng.random_range(0.05..0.5), phase, n, fs);
        for f in [lo, hi] {
            let k = goertzel_bin(n, fs, f);
            let (g, d) = (goertzel_power_at_bin(&block, k), dft_power(&block, k));
            worst = worst.max((g - d).abs() / d);
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn single_sine_bin_power() {
    let n = 205;
    let block = two_tone(697.0, 0.0, 1.0, 0.0, (0.0, 0.0), n, 8000.0);
    let k = goertzel_bin(n, 8000.0, 697.0);
    assert_eq!(k, 18);
    let g = goertzel_power_at_bin(&block, k);
    let d = dft_power(&block, k);
    assert!((g - d).abs() / d < 1e-9);
}

#[test]
fn leakage_at_top_column() {
    // 1633 Hz falls between bins at 8 kHz; the captured share of a unit sine's
    // ideal (N/2)^2 power is a fixed property of the block length.
    let n = 205;
    let block = two_tone(1633.0, 0.0, 1.0, 0.0, (0.0, 0.0), n, 8000.0);
    let k = goertzel_bin(n, 8000.0, 1633.0);
    assert_eq!(k, 42);
    let share = goertzel_power_at_bin(&block, k) / (n as f64 / 2.0).powi(2);
    assert!(share > 0.9 && share <= 1.0, "share {share}");
}

#[test]
fn decodes_with_noise_and_twist() {
    let mut cases = Vec::new();
    for rate in SUPPORTED_RATES {
        for (i, key) in DtmfKey::ALL.into_iter().enumerate() {
            cases.push(CodecCase {
                key,
                sample_rate: rate,
                params: ToneParams::default(),
                snr_db: 20.0,
                seed: 1000 + i as u64,
            });
            for twist_db in [-6.0, 6.0] {
                cases.push(CodecCase {
                    key,
                    sample_rate: rate,
                    params: ToneParams {
                        amplitude: 0.3,
                        twist_db,
                        ..Default::default()
                    },
                    snr_db: f64::INFINITY,
                    seed: 0,
                });
            }
        }
    }
    for o in run_codec_cases(&cases, Execution::default()) {
        let o = o.unwrap();
        assert!(o.exact(), "{o:?}");
    }
}

#[test]
fn noise_alone_never_keys() {
    for rate in SampleRate::all() {
        for seed in 0..3 {
            let noise = white_noise(5 * rate.hz() as usize, -20.0, seed, rate).unwrap();
            assert!(decode_buffer(&noise).is_empty(), "{} Hz seed {seed}", rate.hz());
        }
    }
}

#[test]
fn single_tones_never_key() {
    for rate in SUPPORTED_RATES {
        let fs = rate as f64;
        for f in ROW_FREQS.iter().chain(&COL_FREQS) {
            let s = two_tone(*f, 0.0, 0.8, 0.0, (0.0, 0.0), rate as usize / 2, fs);
            let buf = SampleBuffer::new(s, SampleRate::new(rate).unwrap()).unwrap();
            assert!(decode_buffer(&buf).is_empty(), "{f} Hz at {rate}");
        }
    }
}

fn chunked(buffer: &SampleBuffer, chunk: usize) -> Vec<DecoderEvent> {
    let mut det = Detector::with_defaults(buffer.rate());
    buffer
        .samples()
        .chunks(chunk)
        .flat_map(|c| det.push_slice(c))
        .collect()
}

#[test]
fn chunking_does_not_change_events() {
    let keys = DtmfKey::parse_sequence("123A456B789C*0#D").unwrap();
    for rate in SUPPORTED_RATES {
        let buf = synthesize_sequence(&keys, &ToneParams::default(), rate).unwrap();
        let whole = decode_buffer(&buf);
        assert_eq!(whole.iter().map(|e| e.key).collect::<Vec<_>>(), keys);
        for chunk in [1, 7, 64, 1024] {
            assert_eq!(chunked(&buf, chunk), whole, "chunk {chunk} at {rate}");
        }
    }
}

#[test]
fn event_json_line() {
    let buf = synthesize_sequence(&[DtmfKey::Zero], &ToneParams::default(), 8000).unwrap();
    let events = decode_buffer(&buf);
    assert_eq!(events.len(), 1);
    let line = events[0].to_json_line();
    assert!(line.contains(r#""key":"0""#) && line.contains(r#""code_binary":"1010""#), "{line}");
}
