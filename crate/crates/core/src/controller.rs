//! Firmware stand-in: turns decoded 4-bit codes into arm motion.
//!
//! A [`Session`] is one call. Audio enters through [`Session::key_press`] or
//! [`Session::audio_chunk`], the detector turns it into events, each event is
//! mapped to an [`ArmCommand`], and [`Session::advance`] steps the plant.
//! Motion commands latch: they stay active until `Stop` or a command that
//! contradicts them on the same channel (base, arm, gripper).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::actuation::{
    step_plant, ActuationError, ArmState, BasePose, DriveState, HBridgeInput, PayloadObject,
    PlantCommand, ServoTargets, SupplyLimits,
};
use crate::config::Config;
use crate::detector::{key_to_code, Code4, DecoderEvent, Detector, DetectorError};
use crate::kinematics::{
    forward_kinematics, planar_ik, planar_tip, ElbowBranch, JointState, PlanarTarget,
    Pose,
};
use crate::signal::{synthesize_key, DtmfKey, SampleBuffer, SampleRate, SignalError};
use crate::statics::{payload_check, PayloadVerdict, StaticsError};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error(transparent)]
    Statics(#[from] StaticsError),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("invalid episode: {0}")]
    Episode(String),
    #[error("home pose is not reachable: {0}")]
    Home(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArmCommand {
    BaseForward,
    BaseBackward,
    TurnLeft,
    TurnRight,
    ArmUp,
    ArmDown,
    GripClose,
    GripOpen,
    Stop,
    Home,
    EmergencyStop,
    SpeedToggle,
    Reserved(DtmfKey),
}

impl ArmCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ArmCommand::BaseForward => "BaseForward",
            ArmCommand::BaseBackward => "BaseBackward",
            ArmCommand::TurnLeft => "TurnLeft",
            ArmCommand::TurnRight => "TurnRight",
            ArmCommand::ArmUp => "ArmUp",
            ArmCommand::ArmDown => "ArmDown",
            ArmCommand::GripClose => "GripClose",
            ArmCommand::GripOpen => "GripOpen",
            ArmCommand::Stop => "Stop",
            ArmCommand::Home => "Home",
            ArmCommand::EmergencyStop => "EmergencyStop",
            ArmCommand::SpeedToggle => "SpeedToggle",
            ArmCommand::Reserved(_) => "Reserved",
        }
    }

    /// Parses a command name; `Reserved` binds to `key`.
    pub fn parse(name: &str, key: DtmfKey) -> Option<ArmCommand> {
        Some(match name {
            "BaseForward" => ArmCommand::BaseForward,
            "BaseBackward" => ArmCommand::BaseBackward,
            "TurnLeft" => ArmCommand::TurnLeft,
            "TurnRight" => ArmCommand::TurnRight,
            "ArmUp" => ArmCommand::ArmUp,
            "ArmDown" => ArmCommand::ArmDown,
            "GripClose" => ArmCommand::GripClose,
            "GripOpen" => ArmCommand::GripOpen,
            "Stop" => ArmCommand::Stop,
            "Home" => ArmCommand::Home,
            "EmergencyStop" => ArmCommand::EmergencyStop,
            "SpeedToggle" => ArmCommand::SpeedToggle,
            "Reserved" => ArmCommand::Reserved(key),
            _ => return None,
        })
    }

    fn recovers_from_estop(&self) -> bool {
        matches!(self, ArmCommand::Stop | ArmCommand::Home)
    }
}

impl fmt::Display for ArmCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArmCommand::Reserved(k) => write!(f, "Reserved({k})"),
            other => f.write_str(other.name()),
        }
    }
}

impl Serialize for ArmCommand {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Code-indexed command table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMap([ArmCommand; 16]);

impl Default for KeyMap {
    fn default() -> Self {
        let mut map = KeyMap(std::array::from_fn(|bits| {
            let code = Code4::new(bits as u8).expect("index below 16");
            ArmCommand::Reserved(crate::detector::code_to_key(code))
        }));
        use ArmCommand::*;
        for (c, cmd) in [
            ('2', BaseForward),
            ('8', BaseBackward),
            ('4', TurnLeft),
            ('6', TurnRight),
            ('1', ArmUp),
            ('7', ArmDown),
            ('3', GripClose),
            ('9', GripOpen),
            ('5', Stop),
            ('0', Home),
            ('*', EmergencyStop),
            ('#', SpeedToggle),
        ] {
            map.set(DtmfKey::from_char(c).expect("keypad char"), cmd);
        }
        map
    }
}

impl KeyMap {
    pub fn command(&self, code: Code4) -> ArmCommand {
        self.0[code.bits() as usize]
    }

    pub fn set(&mut self, key: DtmfKey, cmd: ArmCommand) {
        self.0[key_to_code(key).bits() as usize] = cmd;
    }

    pub fn entries(&self) -> impl Iterator<Item = (DtmfKey, ArmCommand)> + '_ {
        DtmfKey::ALL.into_iter().map(|k| (k, self.command(key_to_code(k))))
    }
}

/// Looks up the command for a decoded code under `map`.
pub fn map_code_to_command(map: &KeyMap, code: Code4) -> ArmCommand {
    map.command(code)
}

impl Serialize for KeyMap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(16))?;
        for (key, cmd) in self.entries() {
            m.serialize_entry(&key.to_string(), cmd.name())?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for KeyMap {
    /// Accepts a partial table; unlisted keys keep their defaults.
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = std::collections::BTreeMap::<String, String>::deserialize(d)?;
        let mut map = KeyMap::default();
        for (k, name) in raw {
            let key = DtmfKey::from_str(&k).map_err(D::Error::custom)?;
            let cmd = ArmCommand::parse(&name, key)
                .ok_or_else(|| D::Error::custom(format!("unknown command {name:?} for key {k}")))?;
            map.set(key, cmd);
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionMode {
    Idle,
    Connected,
    EStopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedLevel {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Applied,
    IgnoredInEStop,
    IgnoredWhileIdle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogEntry {
    /// Simulated time the digit latched, seconds.
    pub time: f64,
    pub key: DtmfKey,
    #[serde(serialize_with = "code_bits")]
    pub code: Code4,
    pub command: ArmCommand,
    pub outcome: Outcome,
}

fn code_bits<S: Serializer>(code: &Code4, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&code.binary())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BaseMotion {
    Stopped,
    Forward,
    Backward,
    Left,
    Right,
}

impl BaseMotion {
    fn bridges(self) -> (HBridgeInput, HBridgeInput) {
        match self {
            BaseMotion::Stopped => (HBridgeInput::BRAKE, HBridgeInput::BRAKE),
            BaseMotion::Forward => (HBridgeInput::FORWARD, HBridgeInput::FORWARD),
            BaseMotion::Backward => (HBridgeInput::REVERSE, HBridgeInput::REVERSE),
            BaseMotion::Left => (HBridgeInput::REVERSE, HBridgeInput::FORWARD),
            BaseMotion::Right => (HBridgeInput::FORWARD, HBridgeInput::REVERSE),
        }
    }
}

/// One immutable frame of session state, as written to traces and sent to
/// observers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub mode: SessionMode,
    pub speed: SpeedLevel,
    pub joints: JointState,
    pub base: BasePose,
    pub drives: [DriveState; 2],
    pub over_current_events: u64,
    pub tip: [f64; 3],
    /// Elbow, wrist and tip in the arm's vertical plane.
    pub linkage: [(f64, f64); 3],
    pub payload: Option<PayloadObject>,
    pub torque_margin: [f64; 3],
    pub last_event: Option<LastEvent>,
    pub supply: SupplyLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LastEvent {
    pub key: DtmfKey,
    #[serde(serialize_with = "code_bits")]
    pub code: Code4,
}

impl Snapshot {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }
}

/// Result of [`Session::handle_event`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handled {
    pub command: ArmCommand,
    pub outcome: Outcome,
}

/// One teleoperation call: detector, firmware state and arm plant.
#[derive(Debug, Clone)]
pub struct Session {
    cfg: Config,
    detector: Detector,
    arm: ArmState,
    mode: SessionMode,
    speed: SpeedLevel,
    steps: u64,
    dt: f64,
    clock: f64,
    log: Vec<LogEntry>,
    audio: VecDeque<f64>,
    samples_fed: u64,
    base_motion: BaseMotion,
    /// -1, 0 or +1 vertical jog of the arm target.
    jog: i8,
    arm_target: PlanarTarget,
    servo_targets: ServoTargets,
    last_event: Option<LastEvent>,
}

impl Session {
    /// New idle session with the arm at its home pose.
    pub fn new(cfg: Config) -> Result<Session, ControllerError> {
        cfg.validate().map_err(|e| ControllerError::Episode(e.to_string()))?;
        let rate = cfg.sample_rate();
        let detector = Detector::new(cfg.detector.scaled_to(rate), rate)?;
        let home = cfg.home_joints();
        let mut arm = ArmState::new(home, &cfg.plant);
        arm.supply = cfg.supply;
        arm.payload = cfg.scene.object.map(|o| PayloadObject {
            mass: o.mass,
            position: o.position,
            held: false,
        });
        Ok(Session {
            detector,
            mode: SessionMode::Idle,
            speed: SpeedLevel::High,
            steps: 0,
            dt: cfg.episode.dt,
            clock: 0.0,
            log: Vec::new(),
            audio: VecDeque::new(),
            samples_fed: 0,
            base_motion: BaseMotion::Stopped,
            jog: 0,
            arm_target: planar_tip(&home, &cfg.geometry),
            servo_targets: arm.servo_positions(),
            last_event: None,
            arm,
            cfg,
        })
    }

    /// Marks the call as established; events are ignored until then.
    pub fn connect(&mut self) {
        if self.mode == SessionMode::Idle {
            self.mode = SessionMode::Connected;
        }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn arm(&self) -> &ArmState {
        &self.arm
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn speed(&self) -> SpeedLevel {
        self.speed
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Plant steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn rate(&self) -> SampleRate {
        self.detector.rate()
    }

    /// Queues the synthesized tone for `key` followed by the configured pause.
    pub fn key_press(&mut self, key: DtmfKey) -> Result<(), ControllerError> {
        let tone = synthesize_key(key, &self.cfg.tone, self.rate().hz())?;
        self.audio.extend(tone.samples());
        let pause = self.rate().samples_for_ms(self.cfg.tone.pause_ms);
        self.audio.extend(std::iter::repeat_n(0.0, pause));
        Ok(())
    }

    /// Queues raw audio at the session's sample rate.
    pub fn audio_chunk(&mut self, chunk: &SampleBuffer) -> Result<(), ControllerError> {
        if chunk.rate() != self.rate() {
            return Err(DetectorError::SampleRateMismatch {
                expected: self.rate().hz(),
                got: chunk.rate().hz(),
            }
            .into());
        }
        self.audio.extend(chunk.samples());
        Ok(())
    }

    pub fn queued_audio(&self) -> usize {
        self.audio.len()
    }

    fn speed_scale(&self) -> f64 {
        match self.speed {
            SpeedLevel::High => 1.0,
            SpeedLevel::Low => self.cfg.controller.low_speed_scale,
        }
    }

    fn freeze_arm(&mut self) {
        self.jog = 0;
        self.arm_target = planar_tip(&self.arm.joints, &self.cfg.geometry);
        self.servo_targets = self.arm.servo_positions();
    }

    fn retarget_arm(&mut self, target: PlanarTarget) -> bool {
        match planar_ik(&target, self.arm.joints.g, &self.cfg.geometry, ElbowBranch::Up) {
            Ok((shoulder, elbow)) => {
                self.arm_target = target;
                self.servo_targets.shoulder = shoulder;
                self.servo_targets.elbow = elbow;
                true
            }
            Err(_) => false,
        }
    }

    /// Applies one decoded digit at the current session time.
    pub fn handle_event(&mut self, e: &DecoderEvent) -> Handled {
        let time = (e.onset_sample + e.duration_samples) as f64 / self.rate().hz() as f64;
        self.handle_event_at(e, time)
    }

    fn handle_event_at(&mut self, e: &DecoderEvent, time: f64) -> Handled {
        let command = self.cfg.keymap.command(e.code);
        let outcome = match self.mode {
            SessionMode::Idle => Outcome::IgnoredWhileIdle,
            SessionMode::EStopped if !command.recovers_from_estop() => Outcome::IgnoredInEStop,
            _ => {
                self.apply(command);
                Outcome::Applied
            }
        };
        // Keep the log ordered even if a caller injects an out-of-order event.
        let time = self.log.last().map_or(time, |last| time.max(last.time));
        self.log.push(LogEntry {
            time,
            key: e.key,
            code: e.code,
            command,
            outcome,
        });
        self.last_event = Some(LastEvent {
            key: e.key,
            code: e.code,
        });
        Handled { command, outcome }
    }

    fn apply(&mut self, command: ArmCommand) {
        match command {
            ArmCommand::BaseForward => self.base_motion = BaseMotion::Forward,
            ArmCommand::BaseBackward => self.base_motion = BaseMotion::Backward,
            ArmCommand::TurnLeft => self.base_motion = BaseMotion::Left,
            ArmCommand::TurnRight => self.base_motion = BaseMotion::Right,
            ArmCommand::ArmUp => self.jog = 1,
            ArmCommand::ArmDown => self.jog = -1,
            ArmCommand::GripClose => self.servo_targets.aperture = 0.0,
            ArmCommand::GripOpen => self.servo_targets.aperture = 1.0,
            ArmCommand::Stop => {
                self.mode = SessionMode::Connected;
                self.base_motion = BaseMotion::Stopped;
                self.freeze_arm();
            }
            ArmCommand::Home => {
                self.mode = SessionMode::Connected;
                self.base_motion = BaseMotion::Stopped;
                self.jog = 0;
                let home = self.cfg.home_joints();
                self.arm_target = planar_tip(&home, &self.cfg.geometry);
                self.servo_targets = ServoTargets {
                    shoulder: home.theta_shoulder,
                    elbow: home.theta_elbow,
                    aperture: home.aperture,
                };
            }
            ArmCommand::EmergencyStop => {
                self.mode = SessionMode::EStopped;
                self.base_motion = BaseMotion::Stopped;
                self.freeze_arm();
            }
            ArmCommand::SpeedToggle => {
                self.speed = match self.speed {
                    SpeedLevel::High => SpeedLevel::Low,
                    SpeedLevel::Low => SpeedLevel::High,
                }
            }
            ArmCommand::Reserved(_) => {}
        }
    }

    /// Bridge and servo commands the plant will receive on the next step.
    pub fn plant_command(&self) -> PlantCommand {
        let (left, right) = if self.mode == SessionMode::EStopped {
            (HBridgeInput::COAST, HBridgeInput::COAST)
        } else {
            self.base_motion.bridges()
        };
        PlantCommand {
            left,
            right,
            wheel_scale: self.speed_scale(),
            servos: self.servo_targets,
        }
    }

    /// True if anything is commanded to move.
    pub fn motion_commanded(&self) -> bool {
        let cmd = self.plant_command();
        let driving = |inp: HBridgeInput| inp == HBridgeInput::FORWARD || inp == HBridgeInput::REVERSE;
        let servos = self.arm.servo_positions();
        driving(cmd.left)
            || driving(cmd.right)
            || self.jog != 0
            || cmd.servos.shoulder != servos.shoulder
            || cmd.servos.elbow != servos.elbow
            || cmd.servos.aperture != servos.aperture
    }

    fn update_jog(&mut self, dt: f64) {
        if self.jog == 0 {
            return;
        }
        let geo = self.cfg.geometry;
        let floor = self.cfg.controller.floor_z - geo.l1;
        let dz = self.jog as f64 * self.cfg.controller.jog_speed * self.speed_scale() * dt;
        let target = PlanarTarget {
            r: self.arm_target.r,
            z_rel: (self.arm_target.z_rel + dz).max(floor),
        };
        // An unreachable target leaves the last reachable one in place.
        if target.z_rel != self.arm_target.z_rel {
            self.retarget_arm(target);
        }
    }

    /// Advances simulated time by one step: feeds the due audio to the
    /// detector, applies events, then steps the plant.
    pub fn advance(&mut self) -> Result<Vec<(DecoderEvent, Handled)>, ControllerError> {
        let rate = self.rate().hz() as f64;
        let due = ((self.steps + 1) as f64 * self.dt * rate).round() as u64;
        let n = due.saturating_sub(self.samples_fed) as usize;
        let take = n.min(self.audio.len());
        let mut chunk: Vec<f64> = self.audio.drain(..take).collect();
        chunk.resize(n, 0.0);
        self.samples_fed += n as u64;

        let mut handled = Vec::new();
        for event in self.detector.push_slice(&chunk) {
            let h = self.handle_event(&event);
            handled.push((event, h));
        }

        self.update_jog(self.dt);
        let cmd = self.plant_command();
        self.arm = step_plant(&self.arm, &cmd, self.dt, &self.cfg.plant, &self.cfg.geometry)?;
        self.steps += 1;
        self.clock = self.steps as f64 * self.dt;
        Ok(handled)
    }

    pub fn held_mass(&self) -> f64 {
        self.arm
            .payload
            .filter(|p| p.held)
            .map_or(0.0, |p| p.mass)
    }

    /// Payload verdict for the current pose with `payload` kg at the tip.
    pub fn payload_report(&self, payload: f64) -> Result<PayloadVerdict, StaticsError> {
        let s = &self.cfg.statics;
        payload_check(
            &self.arm.joints,
            &self.cfg.geometry,
            &s.link_masses,
            payload,
            &s.motor_limits,
            &s.constants(),
        )
    }

    pub fn snapshot(&self) -> Snapshot {
        let geo = &self.cfg.geometry;
        let torque_margin = self
            .payload_report(self.held_mass())
            .map(|v| v.margins())
            .unwrap_or([f64::NAN; 3]);
        Snapshot {
            step: self.steps,
            t: self.clock,
            mode: self.mode,
            speed: self.speed,
            joints: self.arm.joints,
            base: self.arm.base,
            drives: self.arm.drives,
            over_current_events: self.arm.over_current_events,
            tip: self.arm.tip_world(geo),
            linkage: crate::kinematics::planar_chain(&self.arm.joints, geo),
            payload: self.arm.payload,
            torque_margin,
            last_event: self.last_event,
            supply: self.arm.supply,
        }
    }

    /// Tip pose in the arm's own frame.
    pub fn tip_pose(&self) -> Pose {
        forward_kinematics(&self.arm.joints, &self.cfg.geometry)
    }
}

/// A timed key press in an episode script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScriptEntry {
    pub time_s: f64,
    pub key: DtmfKey,
}

/// Parses `<time_s> <key>` lines. Blank lines and lines starting with `//`
/// are skipped (`#` is a key, so it cannot start a comment).
pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, ControllerError> {
    let mut entries: Vec<ScriptEntry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let err = |message: String| ControllerError::Script { line, message };
        let mut parts = trimmed.split_whitespace();
        let (Some(t), Some(k), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `<time_s> <key>`, got {trimmed:?}")));
        };
        let time_s: f64 = t
            .parse()
            .map_err(|_| err(format!("bad time {t:?}")))?;
        if !(time_s >= 0.0 && time_s.is_finite()) {
            return Err(err(format!("time must be a non-negative number, got {t}")));
        }
        let key = DtmfKey::from_str(k).map_err(|_| err(format!("bad key {k:?}")))?;
        if let Some(prev) = entries.last() {
            if time_s < prev.time_s {
                return Err(err(format!("time {time_s} goes backwards (previous {})", prev.time_s)));
            }
        }
        entries.push(ScriptEntry { time_s, key });
    }
    Ok(entries)
}

/// Renders the keyed audio for a script over `duration_s` seconds.
pub fn script_audio(
    script: &[ScriptEntry],
    cfg: &Config,
    duration_s: f64,
) -> Result<SampleBuffer, ControllerError> {
    let rate = cfg.sample_rate();
    let total = rate.samples_for_ms(duration_s * 1000.0);
    let mut samples = vec![0.0; total];
    let pause = rate.samples_for_ms(cfg.tone.pause_ms);
    let mut free_from = 0usize;
    for entry in script {
        let start = (entry.time_s * rate.hz() as f64).round() as usize;
        if start < free_from {
            return Err(ControllerError::Episode(format!(
                "press of {} at {} s overlaps the previous tone and its {} ms pause",
                entry.key, entry.time_s, cfg.tone.pause_ms
            )));
        }
        let tone = synthesize_key(entry.key, &cfg.tone, rate.hz())?;
        for (i, s) in tone.samples().iter().enumerate() {
            if let Some(slot) = samples.get_mut(start + i) {
                *slot = *s;
            }
        }
        free_from = start + tone.len() + pause;
    }
    Ok(SampleBuffer::new(samples, rate)?)
}

/// Full record of one headless run.
#[derive(Debug, Clone)]
pub struct Episode {
    /// State after each step; `snapshots[0]` is the initial state.
    pub snapshots: Vec<Snapshot>,
    pub log: Vec<LogEntry>,
    pub final_report: PayloadVerdict,
    pub rated_report: PayloadVerdict,
}

impl Episode {
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.snapshots {
            out.push_str(&s.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("episode has an initial snapshot")
    }

    /// Structured payload report for the final pose.
    pub fn report_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            final_pose: &'a JointState,
            held: &'a PayloadVerdict,
            rated: &'a PayloadVerdict,
        }
        serde_json::to_string_pretty(&Report {
            final_pose: &self.final_snapshot().joints,
            held: &self.final_report,
            rated: &self.rated_report,
        })
        .expect("report serializes")
    }
}

/// Run length for a script: the configured duration, else the last press
/// plus its tone and `settle_s`.
pub fn episode_duration(script: &[ScriptEntry], cfg: &Config) -> f64 {
    cfg.episode.duration_s.unwrap_or_else(|| {
        let last = script.last().map_or(0.0, |e| e.time_s + cfg.tone.duration_ms / 1000.0);
        last + cfg.episode.settle_s
    })
}

/// Runs a script through the whole chain: synthesis, detection, control and
/// plant. Identical inputs give bit-identical traces.
pub fn run_episode(
    script: &[ScriptEntry],
    cfg: &Config,
    duration_s: f64,
    dt: f64,
) -> Result<Episode, ControllerError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(ControllerError::Episode(format!("dt {dt} outside (0, 0.1]")));
    }
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(ControllerError::Episode(format!("bad duration {duration_s}")));
    }
    if script.windows(2).any(|w| w[1].time_s < w[0].time_s) {
        return Err(ControllerError::Episode("script times must be non-decreasing".into()));
    }
    let mut cfg = cfg.clone();
    cfg.episode.dt = dt;
    let audio = script_audio(script, &cfg, duration_s)?;
    let mut session = Session::new(cfg)?;
    session.connect();
    session.audio_chunk(&audio)?;

    let steps = (duration_s / dt).round() as u64;
    let mut snapshots = Vec::with_capacity(steps as usize + 1);
    snapshots.push(session.snapshot());
    for _ in 0..steps {
        session.advance()?;
        snapshots.push(session.snapshot());
    }
    let final_report = session.payload_report(session.held_mass())?;
    let rated_report = session.payload_report(session.config().statics.rated_payload)?;
    Ok(Episode {
        snapshots,
        log: session.log,
        final_report,
        rated_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::key_to_code;

    fn event(key: DtmfKey, at: u64) -> DecoderEvent {
        DecoderEvent {
            onset_sample: at,
            key,
            code: key_to_code(key),
            duration_samples: 410,
        }
    }

    fn session() -> Session {
        let mut s = Session::new(Config::default()).unwrap();
        s.connect();
        s
    }

    #[test]
    fn default_map() {
        let map = KeyMap::default();
        let cmd = |c: char| map_code_to_command(&map, key_to_code(DtmfKey::from_char(c).unwrap()));
        assert_eq!(cmd('2'), ArmCommand::BaseForward);
        assert_eq!(cmd('*'), ArmCommand::EmergencyStop);
        assert_eq!(cmd('0'), ArmCommand::Home);
        assert_eq!(cmd('D'), ArmCommand::Reserved(DtmfKey::D));
        let entries: Vec<_> = map.entries().collect();
        assert_eq!(entries.len(), 16);
    }

    #[test]
    fn keymap_partial_override() {
        let map: KeyMap = toml::from_str("A = \"Home\"\n2 = \"TurnLeft\"").unwrap();
        assert_eq!(map.command(key_to_code(DtmfKey::A)), ArmCommand::Home);
        assert_eq!(map.command(key_to_code(DtmfKey::Two)), ArmCommand::TurnLeft);
        assert_eq!(map.command(key_to_code(DtmfKey::Eight)), ArmCommand::BaseBackward);
        assert!(toml::from_str::<KeyMap>("2 = \"Fly\"").is_err());
    }

    #[test]
    fn forward_then_stop() {
        let mut s = session();
        s.handle_event(&event(DtmfKey::Two, 0));
        let cmd = s.plant_command();
        assert_eq!((cmd.left, cmd.right), (HBridgeInput::FORWARD, HBridgeInput::FORWARD));
        s.handle_event(&event(DtmfKey::Five, 8000));
        let cmd = s.plant_command();
        assert_eq!((cmd.left, cmd.right), (HBridgeInput::BRAKE, HBridgeInput::BRAKE));
        assert!(!s.motion_commanded());
    }

    #[test]
    fn estop_latches() {
        let mut s = session();
        s.handle_event(&event(DtmfKey::Two, 0));
        s.handle_event(&event(DtmfKey::Star, 1000));
        assert_eq!(s.mode(), SessionMode::EStopped);
        let h = s.handle_event(&event(DtmfKey::Two, 2000));
        assert_eq!(h.outcome, Outcome::IgnoredInEStop);
        assert!(!s.motion_commanded());
        assert_eq!(s.log().last().unwrap().outcome, Outcome::IgnoredInEStop);
        s.handle_event(&event(DtmfKey::Five, 3000));
        assert_eq!(s.mode(), SessionMode::Connected);
    }

    #[test]
    fn idle_session_ignores_events() {
        let mut s = Session::new(Config::default()).unwrap();
        let h = s.handle_event(&event(DtmfKey::Two, 0));
        assert_eq!(h.outcome, Outcome::IgnoredWhileIdle);
        assert!(!s.motion_commanded());
    }

    #[test]
    fn speed_toggle_halves_wheel_speed() {
        let mut s = session();
        s.handle_event(&event(DtmfKey::Pound, 0));
        assert_eq!(s.speed(), SpeedLevel::Low);
        assert_eq!(s.plant_command().wheel_scale, 0.5);
        s.handle_event(&event(DtmfKey::Pound, 10));
        assert_eq!(s.speed(), SpeedLevel::High);
    }

    #[test]
    fn arm_down_stops_at_floor() {
        let mut s = session();
        s.handle_event(&event(DtmfKey::Seven, 0));
        for _ in 0..400 {
            s.advance().unwrap();
        }
        let tip = s.arm().tip_world(&s.config().geometry);
        assert!(tip[2].abs() < 1e-9, "tip z {}", tip[2]);
    }

    #[test]
    fn script_parsing() {
        let text = "// demo\n0.0 2\n\n1.5 #\n2 *\n";
        let script = parse_script(text).unwrap();
        assert_eq!(script.len(), 3);
        assert_eq!(script[1].key, DtmfKey::Pound);
        match parse_script("0 2\n1 x\n") {
            Err(ControllerError::Script { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_script("1 2\n0.5 3"),
            Err(ControllerError::Script { line: 2, .. })
        ));
        assert!(matches!(parse_script("1"), Err(ControllerError::Script { line: 1, .. })));
    }

    #[test]
    fn overlapping_presses_rejected() {
        let script = parse_script("0 2\n0.1 5").unwrap();
        assert!(matches!(
            script_audio(&script, &Config::default(), 1.0),
            Err(ControllerError::Episode(_))
        ));
    }

    #[test]
    fn empty_script_leaves_arm_at_rest() {
        let ep = run_episode(&[], &Config::default(), 1.0, 0.01).unwrap();
        assert_eq!(ep.snapshots.len(), 101);
        let first = &ep.snapshots[0];
        let last = ep.final_snapshot();
        assert_eq!(first.joints, last.joints);
        assert_eq!(first.base, last.base);
        assert!(ep.log.is_empty());
    }
}
