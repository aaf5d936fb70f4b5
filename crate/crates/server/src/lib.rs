//! Live session server.
//!
//! One operator connects over WebSocket, streams hand samples and receives
//! state updates at the perception rate. Client timestamps drive the
//! simulation; the wall clock only paces the broadcast.

pub mod cli;

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use vine_teleop::gesture::{calibrate, HandSample, MIN_CALIBRATION_SAMPLES};
use vine_teleop::nalgebra::{Vector2, Vector3};
use vine_teleop::protocol::{ClientMessage, ServerMessage};
use vine_teleop::session::{Session, SessionConfig, SessionReport};
use vine_teleop::trace::{TraceEntry, TraceRecorder};

/// How long a socket read waits before the loop checks the broadcast clock.
const READ_TIMEOUT: Duration = Duration::from_millis(2);
/// Span of buffered samples a calibration averages (s).
const CALIBRATION_WINDOW: f64 = 0.1;
/// Buffered samples kept for calibration.
const BUFFER_CAPACITY: usize = 1024;

pub fn bind(cfg: &SessionConfig) -> Result<TcpListener> {
    TcpListener::bind(&cfg.listen).with_context(|| format!("cannot listen on {}", cfg.listen))
}

/// Fixed-period schedule anchored at its start time; missed periods collapse
/// into one due tick instead of bursting.
#[derive(Debug)]
pub struct BroadcastClock {
    period: Duration,
    next: Instant,
}

impl BroadcastClock {
    pub fn new(rate_hz: f64, now: Instant) -> Self {
        let period = Duration::from_secs_f64(1.0 / rate_hz);
        Self { period, next: now + period }
    }

    pub fn due(&mut self, now: Instant) -> bool {
        if now < self.next {
            return false;
        }
        while self.next <= now {
            self.next += self.period;
        }
        true
    }

    pub fn next(&self) -> Instant {
        self.next
    }
}

/// Recent hand samples, for calibrating from the last 0.1 s.
#[derive(Debug, Default)]
pub struct SampleBuffer {
    samples: VecDeque<HandSample>,
}

impl SampleBuffer {
    pub fn push(&mut self, s: HandSample) {
        if self.samples.len() == BUFFER_CAPACITY {
            self.samples.pop_front();
        }
        self.samples.push_back(s);
    }

    /// Samples from the last 0.1 s, widened to at least the calibration
    /// minimum when the stream is sparse.
    pub fn recent(&self) -> Vec<HandSample> {
        let Some(last) = self.samples.back() else {
            return Vec::new();
        };
        let in_window = self
            .samples
            .iter()
            .rev()
            .take_while(|s| last.t - s.t < CALIBRATION_WINDOW - 1e-9)
            .count();
        let n = in_window.max(MIN_CALIBRATION_SAMPLES).min(self.samples.len());
        self.samples.iter().skip(self.samples.len() - n).copied().collect()
    }
}

enum Flow {
    Continue,
    Finish,
}

struct Live {
    session: Session,
    buffer: SampleBuffer,
    recorder: Option<TraceRecorder>,
    record_path: Option<std::path::PathBuf>,
    calibrated: bool,
}

impl Live {
    fn record(&mut self, entry: TraceEntry) -> Result<()> {
        if let Some(path) = &self.record_path {
            if self.recorder.is_none() {
                info!("recording to {}", path.display());
                self.recorder = Some(TraceRecorder::create(path)?);
            }
        }
        if let Some(r) = &mut self.recorder {
            r.append(&entry)?;
        }
        Ok(())
    }

    /// Applies one client message. `Err` strings go back as error frames.
    fn handle(&mut self, text: &str) -> Result<Flow, String> {
        let msg = ClientMessage::parse(text).map_err(|e| e.to_string())?;
        match msg {
            ClientMessage::Hand { t, p, grip, .. } => {
                let s = HandSample::new(t, Vector3::from(p), grip).map_err(|e| e.to_string())?;
                self.buffer.push(s);
                if self.calibrated {
                    self.session.ingest(&s).map_err(|e| e.to_string())?;
                    self.record(TraceEntry::Sample(s)).map_err(|e| e.to_string())?;
                    if self.session.goal_reached() {
                        return Ok(Flow::Finish);
                    }
                }
            }
            ClientMessage::Calibrate { facing, .. } => {
                let cal = calibrate(&self.buffer.recent(), Vector2::from(facing))
                    .map_err(|e| e.to_string())?;
                self.session.calibrate(cal).map_err(|e| e.to_string())?;
                self.calibrated = true;
                info!("calibrated: neutral {:?}, facing {:?}", cal.neutral.as_slice(), facing);
                self.record(TraceEntry::Calibration(cal)).map_err(|e| e.to_string())?;
            }
            ClientMessage::End { .. } => return Ok(Flow::Finish),
        }
        Ok(Flow::Continue)
    }
}

#[allow(clippy::result_large_err)]
fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_json()))
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

/// Serves one operator session on `listener` until the operator ends it or
/// the goal tower stands, then returns the report. A disconnect pauses the
/// session until the next client connects.
pub fn serve(cfg: &SessionConfig, listener: TcpListener) -> Result<SessionReport> {
    let mut live = Live {
        session: Session::from_config(cfg)?,
        buffer: SampleBuffer::default(),
        recorder: None,
        record_path: cfg.record.clone(),
        calibrated: false,
    };
    info!("listening on {}", listener.local_addr()?);
    loop {
        let (stream, peer) = listener.accept().context("accept failed")?;
        info!("operator connected from {peer}");
        let mut ws = match tungstenite::accept(stream) {
            Ok(ws) => ws,
            Err(e) => {
                warn!("handshake with {peer} failed: {e}");
                continue;
            }
        };
        ws.get_mut().set_read_timeout(Some(READ_TIMEOUT))?;
        ws.get_mut().set_nodelay(true)?;
        match run_connection(cfg, &mut live, &mut ws) {
            Ok(true) => {
                let report = live.session.finish()?;
                let _ = send(&mut ws, &ServerMessage::State(live.session.latest_state().clone()));
                let _ = send(&mut ws, &ServerMessage::report(report.clone()));
                let _ = ws.close(None);
                let _ = ws.flush();
                if let Some(r) = live.recorder.take() {
                    let path = r.finish()?;
                    info!("recording saved to {}", path.display());
                }
                info!(
                    "session finished: tower {}, success {}",
                    report.tower_height, report.success
                );
                return Ok(report);
            }
            Ok(false) => info!("operator disconnected; session paused"),
            Err(e) => warn!("connection error: {e}; session paused"),
        }
    }
}

/// Returns `Ok(true)` when the session should finish, `Ok(false)` on a
/// disconnect.
fn run_connection(
    cfg: &SessionConfig,
    live: &mut Live,
    ws: &mut WebSocket<TcpStream>,
) -> Result<bool> {
    let mut clock = BroadcastClock::new(cfg.perception_rate, Instant::now());
    loop {
        // read until idle or the next broadcast is due
        while Instant::now() < clock.next() {
            match ws.read() {
                Ok(Message::Text(text)) => match live.handle(text.as_str()) {
                    Ok(Flow::Continue) => {}
                    Ok(Flow::Finish) => return Ok(true),
                    Err(msg) => {
                        debug!("rejected message: {msg}");
                        send(ws, &ServerMessage::error(msg))?;
                    }
                },
                Ok(Message::Binary(_)) => {
                    send(ws, &ServerMessage::error("binary frames are not supported"))?;
                }
                Ok(Message::Close(_)) => return Ok(false),
                Ok(_) => {}
                Err(e) if is_timeout(&e) => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Ok(false)
                }
                Err(tungstenite::Error::Protocol(e)) => {
                    warn!("protocol error: {e}");
                    return Ok(false);
                }
                Err(e) => bail!(e),
            }
        }
        if clock.due(Instant::now()) {
            match send(ws, &ServerMessage::State(live.session.latest_state().clone())) {
                Ok(()) => {}
                Err(e) if is_timeout(&e) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Ok(false)
                }
                Err(e) => bail!(e),
            }
        }
    }
}
