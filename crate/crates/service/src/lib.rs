//! WebSocket session service.
//!
//! Each connection is one [`Session`] running in simulated real time. The
//! connection thread owns the socket; a second thread steps the session and
//! posts outgoing messages to a bounded outbox. When a slow client lets the
//! outbox fill, the oldest queued snapshot is dropped; event notices never
//! are. Sequence numbers are assigned as messages are written, so they stay
//! gapless. Message schema: [`dtmf_arm::protocol`].

use std::collections::VecDeque;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use dtmf_arm::controller::Session;
use dtmf_arm::protocol::{decode_audio, decode_client, encode_server, ClientBody, EventNotice, ServerBody};
use dtmf_arm::signal::{DtmfKey, SampleBuffer};
use dtmf_arm::Config;
use thiserror::Error;
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

const POLL: Duration = Duration::from_millis(2);
/// Most plant steps taken in one pass before checking for input.
const MAX_CATCH_UP: u32 = 100;
/// Outbox length above which queued snapshots are discarded.
pub const OUTBOX_CAPACITY: usize = 64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A running server. Dropping it does not stop the server; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        let _ = self.acceptor.join();
    }

    /// Stops accepting, sends each session its final snapshot, closes the
    /// connections and waits for their threads.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
    }
}

/// Binds `addr` and serves sessions built from `cfg` until shut down.
pub fn serve(addr: impl ToSocketAddrs, cfg: Config) -> Result<ServerHandle, ServiceError> {
    cfg.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let acceptor = thread::spawn(move || accept_loop(listener, cfg, flag));
    Ok(ServerHandle { addr, stop, acceptor })
}

fn accept_loop(listener: TcpListener, cfg: Config, stop: Arc<AtomicBool>) {
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let cfg = cfg.clone();
                let stop = stop.clone();
                sessions.push(thread::spawn(move || {
                    let _ = run_connection(stream, cfg, stop);
                }));
            }
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
        sessions.retain(|h| !h.is_finished());
    }
    for h in sessions {
        let _ = h.join();
    }
}

/// Bounded queue between the simulation and the socket writer.
#[derive(Debug, Default)]
pub struct Outbox {
    items: VecDeque<ServerBody>,
    capacity: usize,
    dropped: u64,
    /// Set once the simulation has posted its last message.
    finished: bool,
}

impl Outbox {
    pub fn new(capacity: usize) -> Outbox {
        Outbox {
            capacity,
            ..Outbox::default()
        }
    }

    pub fn push(&mut self, body: ServerBody) {
        if self.items.len() >= self.capacity {
            if let Some(i) = self.items.iter().position(ServerBody::is_snapshot) {
                self.items.remove(i);
                self.dropped += 1;
            }
        }
        self.items.push_back(body);
    }

    pub fn drain(&mut self) -> Vec<ServerBody> {
        self.items.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Snapshots discarded so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

enum Input {
    Key(DtmfKey),
    Audio(SampleBuffer),
    SnapshotRate(u32),
}

fn run_connection(stream: TcpStream, cfg: Config, stop: Arc<AtomicBool>) -> Result<(), ServiceError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;

    let outbox = Arc::new(Mutex::new(Outbox::new(OUTBOX_CAPACITY)));
    let (tx, rx) = mpsc::channel();
    let sim = {
        let outbox = outbox.clone();
        let stop = stop.clone();
        thread::spawn(move || simulate(cfg, rx, outbox, stop))
    };
    let result = pump(&mut ws, tx, &outbox);
    let _ = sim.join();
    if result.is_ok() {
        // Flush whatever the simulation posted on its way out.
        let _ = write_all(&mut ws, &outbox, &mut 0);
    }
    result
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn write_all(ws: &mut WebSocket<TcpStream>, outbox: &Mutex<Outbox>, seq: &mut u64) -> tungstenite::Result<bool> {
    let (items, finished) = {
        let mut o = outbox.lock().expect("outbox lock");
        (o.drain(), o.finished)
    };
    for body in items {
        ws.send(Message::text(encode_server(*seq, &body)))?;
        *seq += 1;
    }
    Ok(finished)
}

fn fail(ws: &mut WebSocket<TcpStream>, seq: u64, reason: String) {
    let _ = ws.send(Message::text(encode_server(seq, &ServerBody::Error { reason })));
    let _ = ws.close(Some(CloseFrame {
        code: CloseCode::Policy,
        reason: "protocol error".into(),
    }));
    let _ = ws.flush();
}

/// Socket side of a connection: forwards validated client input to the
/// simulation and writes queued messages. Returns when either side is done.
fn pump(ws: &mut WebSocket<TcpStream>, tx: Sender<Input>, outbox: &Mutex<Outbox>) -> Result<(), ServiceError> {
    let mut seq = 0u64;
    let mut last_seq: Option<u64> = None;
    loop {
        let finished = match write_all(ws, outbox, &mut seq) {
            Ok(f) => f,
            Err(_) => return Ok(()),
        };
        if finished {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match parse_input(&text, last_seq) {
                Ok((s, input)) => {
                    last_seq = Some(s);
                    if tx.send(input).is_err() {
                        return Ok(());
                    }
                }
                Err(reason) => {
                    drop(tx);
                    let _ = write_all(ws, outbox, &mut seq);
                    fail(ws, seq, reason);
                    return Ok(());
                }
            },
            Ok(Message::Binary(_)) => {
                drop(tx);
                let _ = write_all(ws, outbox, &mut seq);
                fail(ws, seq, "binary frames are not part of the protocol".into());
                return Ok(());
            }
            Ok(Message::Close(_)) => {
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => return Ok(()),
        }
    }
}

fn parse_input(text: &str, last_seq: Option<u64>) -> Result<(u64, Input), String> {
    let msg = decode_client(text, last_seq).map_err(|e| e.to_string())?;
    let input = match msg.body {
        ClientBody::KeyPress { key } => Input::Key(key),
        ClientBody::AudioChunk { sample_rate, pcm16 } => {
            Input::Audio(decode_audio(sample_rate, &pcm16).map_err(|e| e.to_string())?)
        }
        ClientBody::ConfigUpdate { snapshot_hz } => Input::SnapshotRate(snapshot_hz),
    };
    Ok((msg.seq, input))
}

/// Simulation side: steps the session against the wall clock and posts
/// events and snapshots. Stops when the socket side goes away or the server
/// shuts down; in the latter case the last message is the final snapshot.
fn simulate(cfg: Config, rx: Receiver<Input>, outbox: Arc<Mutex<Outbox>>, stop: Arc<AtomicBool>) {
    let post = |body: ServerBody| outbox.lock().expect("outbox lock").push(body);
    let finish = || outbox.lock().expect("outbox lock").finished = true;

    let mut snapshot_hz = cfg.service.snapshot_hz;
    let mut session = match Session::new(cfg) {
        Ok(s) => s,
        Err(e) => {
            post(ServerBody::Error { reason: e.to_string() });
            finish();
            return;
        }
    };
    session.connect();
    let dt = session.dt();
    let started = Instant::now();
    post(ServerBody::StateSnapshot(session.snapshot()));
    let mut next_snapshot = 1.0 / snapshot_hz as f64;

    loop {
        if stop.load(Ordering::SeqCst) {
            post(ServerBody::StateSnapshot(session.snapshot()));
            finish();
            return;
        }
        let input = match rx.recv_timeout(Duration::from_millis(1)) {
            Ok(input) => Some(input),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => return,
        };
        let applied = match input {
            Some(Input::Key(key)) => session.key_press(key),
            Some(Input::Audio(chunk)) => session.audio_chunk(&chunk),
            Some(Input::SnapshotRate(hz)) => {
                snapshot_hz = hz;
                Ok(())
            }
            None => Ok(()),
        };
        if let Err(e) = applied {
            post(ServerBody::Error { reason: e.to_string() });
            finish();
            return;
        }

        let due = (started.elapsed().as_secs_f64() / dt) as u64;
        let mut budget = MAX_CATCH_UP;
        while session.steps() < due && budget > 0 {
            match session.advance() {
                Ok(handled) => {
                    for (event, h) in handled {
                        post(ServerBody::EventNotice(EventNotice::new(event, h)));
                    }
                }
                Err(e) => {
                    post(ServerBody::Error { reason: e.to_string() });
                    finish();
                    return;
                }
            }
            budget -= 1;
        }
        if session.clock() >= next_snapshot {
            post(ServerBody::StateSnapshot(session.snapshot()));
            next_snapshot = session.clock() + 1.0 / snapshot_hz as f64;
        }
    }
}
