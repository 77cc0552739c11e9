use dtmf_arm::controller::{parse_script, run_episode, ArmCommand, Outcome, Session, SessionMode};
use dtmf_arm::detector::{key_to_code, DecoderEvent};
use dtmf_arm::signal::{synthesize_sequence, DtmfKey, ToneParams};
use dtmf_arm::Config;
use proptest::prelude::*;

fn connected() -> Session {
    let mut s = Session::new(Config::default()).unwrap();
    s.connect();
    s
}

fn event(key: DtmfKey, onset: u64) -> DecoderEvent {
    DecoderEvent {
        onset_sample: onset,
        key,
        code: key_to_code(key),
        duration_samples: 410,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn estop_holds_drives_off_until_recovery(
        stream in prop::collection::vec((0usize..16, 0usize..4), 1..60),
    ) {
        let mut s = connected();
        let mut latched = false;
        for (i, (k, steps)) in stream.into_iter().enumerate() {
            let key = DtmfKey::ALL[k];
            let h = s.handle_event(&event(key, i as u64 * 1000));
            match h.command {
                ArmCommand::EmergencyStop => latched = true,
                ArmCommand::Stop | ArmCommand::Home => latched = false,
                _ if latched => prop_assert_eq!(h.outcome, Outcome::IgnoredInEStop),
                _ => {}
            }
            prop_assert_eq!(s.mode() == SessionMode::EStopped, latched);
            for _ in 0..=steps {
                s.advance().unwrap();
                if latched {
                    prop_assert!(s.arm().drives.iter().all(|d| !d.mode.is_driving() && d.current_ma == 0.0));
                }
            }
        }
        prop_assert!(s.log().windows(2).all(|w| w[0].time <= w[1].time));
    }
}

#[test]
fn key_presses_and_audio_give_the_same_log() {
    let keys = DtmfKey::parse_sequence("2#6*25").unwrap();
    let mut by_key = connected();
    for &k in &keys {
        by_key.key_press(k).unwrap();
    }
    // key_press queues tone then pause; the synthesized sequence starts with a pause.
    let params = ToneParams::default();
    let mut by_audio = connected();
    let audio = synthesize_sequence(&keys, &params, 8000).unwrap();
    let lead = by_audio.rate().samples_for_ms(params.pause_ms);
    let mut by_key_lead = connected();
    by_key_lead
        .audio_chunk(&dtmf_arm::SampleBuffer::silence(lead, by_key_lead.rate()))
        .unwrap();
    for &k in &keys {
        by_key_lead.key_press(k).unwrap();
    }
    by_audio.audio_chunk(&audio).unwrap();
    for _ in 0..300 {
        by_key.advance().unwrap();
        by_audio.advance().unwrap();
        by_key_lead.advance().unwrap();
    }
    let commands = |s: &Session| s.log().iter().map(|e| (e.key, e.command, e.outcome)).collect::<Vec<_>>();
    assert_eq!(commands(&by_key), commands(&by_audio));
    assert_eq!(by_key_lead.log(), by_audio.log());
    assert_eq!(by_key.log().len(), keys.len());
}

#[test]
fn forward_for_two_seconds() {
    let script = parse_script("0 2\n2 5\n").unwrap();
    let cfg = Config::default();
    let ep = run_episode(&script, &cfg, 4.0, 0.01).unwrap();
    let commands: Vec<_> = ep.log.iter().map(|e| e.command).collect();
    assert_eq!(commands, [ArmCommand::BaseForward, ArmCommand::Stop]);
    // Both presses latch after the same detector delay, so it cancels.
    let moved = ep.final_snapshot().base.x;
    let block = 0.2 * 205.0 / 8000.0;
    assert!((moved - 0.4).abs() <= block, "moved {moved}");
    let latency = ep.log[0].time;
    assert!(latency > 0.0 && latency < 0.1, "latency {latency}");
}

#[test]
fn estop_then_forward_is_ignored() {
    let mut s = connected();
    s.handle_event(&event(DtmfKey::Star, 0));
    let h = s.handle_event(&event(DtmfKey::Two, 2000));
    assert_eq!(h.outcome, Outcome::IgnoredInEStop);
    for _ in 0..50 {
        s.advance().unwrap();
    }
    assert_eq!(s.arm().base.x, 0.0);
    s.handle_event(&event(DtmfKey::Five, 4000));
    assert_eq!(s.mode(), SessionMode::Connected);
}

#[test]
fn episodes_are_reproducible() {
    let script = parse_script("0 2\n0.5 4\n1.5 1\n2.5 3\n3 5\n").unwrap();
    let cfg = Config::default();
    let a = run_episode(&script, &cfg, 5.0, 0.01).unwrap();
    let b = run_episode(&script, &cfg, 5.0, 0.01).unwrap();
    assert_eq!(a.trace_jsonl(), b.trace_jsonl());
}
