use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dtmf_arm::controller::{episode_duration, parse_script, run_episode};
use dtmf_arm::detector::decode_buffer_with;
use dtmf_arm::signal::{mix_noise, synthesize_sequence, DtmfKey};
use dtmf_arm::{wav, Config};

/// DTMF teleoperation toolkit: tone encoder/decoder, headless arm simulator
/// and session server.
#[derive(Parser, Debug)]
#[command(name = "dtmf-arm", version)]
struct Cli {
    /// TOML configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sample rate in Hz (8000, 16000 or 44100); overrides the config.
    #[arg(long, global = true)]
    rate: Option<u32>,
    /// Noise seed for `encode --snr`.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a key sequence to a 16-bit mono WAV file.
    Encode {
        /// Keys from 0-9, *, #, A-D.
        #[arg(value_parser = non_empty)]
        keys: String,
        #[arg(short, long)]
        out: PathBuf,
        /// Add white noise at this signal-to-noise ratio, dB.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Decode a WAV file; prints the keys, then one JSON event per line.
    /// Exits 3 if no key is found.
    Decode { input: PathBuf },
    /// Run an episode script headless and write its trace.
    Simulate {
        script: PathBuf,
        /// Trace output, one JSON snapshot per line.
        #[arg(short, long, default_value = "trace.jsonl")]
        out: PathBuf,
        /// Payload report output; printed to stdout if unset.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Overrides the run length, seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Serve teleoperation sessions over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
    },
}

fn non_empty(s: &str) -> Result<String, String> {
    if s.is_empty() {
        Err("at least one key is required".into())
    } else {
        Ok(s.to_string())
    }
}

const NO_EVENTS: u8 = 3;
const FAILURE: u8 = 2;

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(rate) = cli.rate {
        cfg.sample_rate = rate;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn encode(cfg: &Config, seed: u64, keys: &str, out: &Path, snr: Option<f64>) -> Result<()> {
    let keys = DtmfKey::parse_sequence(keys)?;
    let mut buf = synthesize_sequence(&keys, &cfg.tone, cfg.sample_rate)?;
    if let Some(snr) = snr {
        buf = mix_noise(&buf, snr, seed)?;
    }
    wav::write_file(out, &buf).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn decode(cfg: &Config, input: &Path) -> Result<bool> {
    let buf = wav::read_file(input).with_context(|| format!("reading {}", input.display()))?;
    let events = decode_buffer_with(&buf, cfg.detector.scaled_to(buf.rate()))?;
    let keys: String = events.iter().map(|e| e.key.as_char()).collect();
    println!("{keys}");
    for e in &events {
        println!("{}", e.to_json_line());
    }
    Ok(!events.is_empty())
}

fn simulate(cfg: &Config, script: &Path, out: &Path, report: Option<&Path>, duration: Option<f64>) -> Result<()> {
    let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
    let entries = parse_script(&text).with_context(|| format!("in {}", script.display()))?;
    let duration = duration.unwrap_or_else(|| episode_duration(&entries, cfg));
    let episode = run_episode(&entries, cfg, duration, cfg.episode.dt)?;
    fs::write(out, episode.trace_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    let report_json = episode.report_json();
    match report {
        Some(path) => fs::write(path, report_json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{report_json}"),
    }
    for entry in &episode.log {
        eprintln!("{:>8.3}s  {}  {:<12} {:?}", entry.time, entry.key, entry.command, entry.outcome);
    }
    Ok(())
}

fn serve(cfg: Config, bind: &str) -> Result<()> {
    let server = dtmf_arm_service::serve(bind, cfg)?;
    eprintln!("listening on ws://{}", server.local_addr());
    server.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Encode { keys, out, snr } => encode(&cfg, cli.seed, keys, out, *snr)?,
        Command::Decode { input } => {
            if cli.rate.is_some() {
                bail!("--rate does not apply to decode; the WAV header sets the rate");
            }
            return decode(&cfg, input);
        }
        Command::Simulate {
            script,
            out,
            report,
            duration,
        } => simulate(&cfg, script, out, report.as_deref(), *duration)?,
        Command::Serve { bind } => serve(cfg, bind)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(NO_EVENTS),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}
