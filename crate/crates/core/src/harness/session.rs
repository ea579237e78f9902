//! Newline-delimited JSON session protocol for interactive clients.
//!
//! Each request is one JSON object with a `"type"` field; each reply is one
//! JSON object. Consecutive queued `drag_seed` requests are coalesced so
//! only the newest one is answered.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::evaluation::{boundary_pixels, dice, hausdorff};
use crate::imaging::{load_image, load_mask, BinaryMask, GrayImage, Point2D};
use crate::segmenter::{diameters_of_points, segment, SeedInput, SegmentParams, SegmentationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Load,
    SetSeed,
    DragSeed,
    AddHelper,
    ClearHelpers,
    Finalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub timestamp_ms: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Value,
}

/// Record of one lesion's interaction, enough to replay it offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub lesion_id: String,
    pub image_path: PathBuf,
    pub params: SegmentParams,
    #[serde(default)]
    pub spacing_mm: Option<f64>,
    pub events: Vec<SessionEvent>,
    pub satisfied: bool,
    pub total_interaction_ms: f64,
}

impl SessionLog {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Protocol(format!("session log {}: {m}", self.lesion_id)));
        if self.events.windows(2).any(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
            return bad("events out of time order");
        }
        let finals = self.events.iter().filter(|e| e.kind == EventKind::Finalize).count();
        if finals != 1 || self.events.last().map(|e| e.kind) != Some(EventKind::Finalize) {
            return bad("needs exactly one finalize, as the last event");
        }
        let first_seed = self.events.iter().find(|e| e.kind == EventKind::SetSeed);
        let Some(first_seed) = first_seed else {
            return bad("no set_seed event");
        };
        let end = self.events.last().map(|e| e.timestamp_ms).unwrap_or(0.0);
        if (end - first_seed.timestamp_ms - self.total_interaction_ms).abs() > 1e-6 {
            return bad("total_interaction_ms disagrees with the event times");
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let log: SessionLog =
            serde_json::from_str(&text).map_err(|e| Error::format(path, format!("session log: {e}")))?;
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Protocol(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Seed and helper list after each event; shared by the live session and
/// replay so both see identical inputs.
#[derive(Debug, Clone, PartialEq, Default)]
struct InteractionState {
    seed: Option<Point2D>,
    helpers: Vec<Point2D>,
}

impl InteractionState {
    fn input(&self) -> Option<SeedInput> {
        self.seed.map(|s| SeedInput::with_helpers(s, self.helpers.clone()))
    }

    /// State after `kind` with point `p`, or an error if the event needs a seed.
    fn after(&self, kind: EventKind, p: Option<Point2D>) -> Result<Self> {
        let mut next = self.clone();
        let need_seed = || Error::Protocol("no seed placed yet".into());
        let need_point = || Error::Protocol("missing x/y".into());
        match kind {
            EventKind::SetSeed => {
                next.seed = Some(p.ok_or_else(need_point)?);
                next.helpers.clear();
            }
            EventKind::DragSeed => {
                next.seed = Some(p.ok_or_else(need_point)?);
            }
            EventKind::AddHelper => {
                self.seed.ok_or_else(need_seed)?;
                next.helpers.push(p.ok_or_else(need_point)?);
            }
            EventKind::ClearHelpers => {
                self.seed.ok_or_else(need_seed)?;
                next.helpers.clear();
            }
            EventKind::Load | EventKind::Finalize => {}
        }
        Ok(next)
    }
}

fn event_point(payload: &Value) -> Option<Point2D> {
    Some(Point2D::new(payload.get("x")?.as_f64()?, payload.get("y")?.as_f64()?))
}

/// Seed and helpers in effect at the log's finalize.
pub fn replay_input(log: &SessionLog) -> Result<SeedInput> {
    log.validate()?;
    let mut state = InteractionState::default();
    for ev in &log.events {
        state = state.after(ev.kind, event_point(&ev.payload))?;
    }
    state
        .input()
        .ok_or_else(|| Error::Protocol("session log ends without a seed".into()))
}

/// Re-runs the segmentation a session finalized with.
pub fn replay(log: &SessionLog) -> Result<(SeedInput, SegmentationResult)> {
    let input = replay_input(log)?;
    let mut img = load_image(&log.image_path)?;
    if log.spacing_mm.is_some() {
        img = img.with_spacing(log.spacing_mm)?;
    }
    let res = segment(&img, &input, &log.params)?;
    Ok((input, res))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionConfig {
    pub params: SegmentParams,
    /// Overrides the spacing read from image metadata.
    pub spacing_mm: Option<f64>,
    /// Finalized session logs are appended to `sessions.ndjson` here.
    pub log_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Request {
    LoadImage {
        path: PathBuf,
        #[serde(default)]
        lesion_id: Option<String>,
        #[serde(default)]
        reference_mask: Option<PathBuf>,
    },
    SetSeed {
        x: f64,
        y: f64,
    },
    DragSeed {
        x: f64,
        y: f64,
    },
    AddHelper {
        x: f64,
        y: f64,
    },
    ClearHelpers,
    Finalize {
        satisfied: bool,
    },
}

struct Lesion {
    id: String,
    path: PathBuf,
    image: GrayImage,
    reference: Option<BinaryMask>,
    state: InteractionState,
    events: Vec<SessionEvent>,
    last: Option<SegmentationResult>,
}

/// One client's protocol state.
pub struct Session {
    config: SessionConfig,
    clock: Instant,
    last_ms: f64,
    lesion: Option<Lesion>,
    /// Finalized logs, oldest first.
    pub finished: Vec<SessionLog>,
}

fn error_reply(id: &Value, err: &Error) -> Value {
    json!({"type": "error", "id": id, "reason": err.reason(), "message": err.to_string()})
}

fn point_json(p: &Point2D) -> Value {
    json!([p.x, p.y])
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        Self {
            config,
            clock: Instant::now(),
            last_ms: 0.0,
            lesion: None,
            finished: Vec::new(),
        }
    }

    /// Event time: the client's `t_ms` if given, else ms since session start.
    fn timestamp(&mut self, client: Option<f64>) -> Result<f64> {
        let t = match client {
            Some(t) if t.is_finite() => t,
            Some(_) => return Err(Error::Protocol("t_ms must be finite".into())),
            None => self.clock.elapsed().as_secs_f64() * 1000.0,
        };
        if t < self.last_ms {
            return Err(Error::Protocol(format!(
                "t_ms {t} earlier than previous event {}",
                self.last_ms
            )));
        }
        Ok(t)
    }

    /// Handles one request line and returns the reply object.
    pub fn handle_line(&mut self, line: &str) -> Value {
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return error_reply(&Value::Null, &Error::Protocol(format!("malformed JSON: {e}"))),
        };
        self.handle_value(value)
    }

    pub fn handle_value(&mut self, value: Value) -> Value {
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        let client_t = value.get("t_ms").and_then(Value::as_f64);
        let request: Request = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => return error_reply(&id, &Error::Protocol(format!("bad request: {e}"))),
        };
        match self.dispatch(request, client_t) {
            Ok(mut reply) => {
                reply["id"] = id;
                reply
            }
            Err(e) => error_reply(&id, &e),
        }
    }

    fn dispatch(&mut self, request: Request, client_t: Option<f64>) -> Result<Value> {
        match request {
            Request::LoadImage {
                path,
                lesion_id,
                reference_mask,
            } => self.load(path, lesion_id, reference_mask, client_t),
            Request::SetSeed { x, y } => self.interact(EventKind::SetSeed, Some(Point2D::new(x, y)), client_t),
            Request::DragSeed { x, y } => self.interact(EventKind::DragSeed, Some(Point2D::new(x, y)), client_t),
            Request::AddHelper { x, y } => self.interact(EventKind::AddHelper, Some(Point2D::new(x, y)), client_t),
            Request::ClearHelpers => self.interact(EventKind::ClearHelpers, None, client_t),
            Request::Finalize { satisfied } => self.finalize(satisfied, client_t),
        }
    }

    fn load(&mut self, path: PathBuf, id: Option<String>, reference: Option<PathBuf>, t: Option<f64>) -> Result<Value> {
        let path = fs::canonicalize(&path).map_err(|e| Error::io(&path, e))?;
        let mut image = load_image(&path)?;
        if self.config.spacing_mm.is_some() {
            image = image.with_spacing(self.config.spacing_mm)?;
        }
        let reference = match reference {
            Some(p) => {
                let m = load_mask(&p)?;
                if m.width() != image.width() || m.height() != image.height() {
                    return Err(Error::DimensionMismatch(
                        "reference mask and image differ in size".into(),
                    ));
                }
                Some(m)
            }
            None => None,
        };
        let t = self.timestamp(t)?;
        self.last_ms = t;
        let id = id.unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        let reply = json!({
            "type": "image",
            "lesion_id": id,
            "width": image.width(),
            "height": image.height(),
            "spacing_mm": image.spacing_mm(),
        });
        self.lesion = Some(Lesion {
            events: vec![SessionEvent {
                timestamp_ms: t,
                kind: EventKind::Load,
                payload: json!({"path": path}),
            }],
            id,
            path,
            image,
            reference,
            state: InteractionState::default(),
            last: None,
        });
        Ok(reply)
    }

    fn interact(&mut self, kind: EventKind, p: Option<Point2D>, t: Option<f64>) -> Result<Value> {
        let t = self.timestamp(t)?;
        let params = self.config.params;
        let lesion = self
            .lesion
            .as_mut()
            .ok_or_else(|| Error::Protocol("no image loaded".into()))?;
        let next = lesion.state.after(kind, p)?;
        let input = next
            .input()
            .ok_or_else(|| Error::Protocol("no seed placed yet".into()))?;
        let res = segment(&lesion.image, &input, &params)?;
        let payload = match p {
            Some(p) => json!({"x": p.x, "y": p.y}),
            None => json!({}),
        };
        lesion.state = next;
        lesion.events.push(SessionEvent {
            timestamp_ms: t,
            kind,
            payload,
        });
        self.last_ms = t;
        let reply = contour_reply(&input, &res);
        lesion.last = Some(res);
        Ok(reply)
    }

    fn finalize(&mut self, satisfied: bool, t: Option<f64>) -> Result<Value> {
        let t = self.timestamp(t)?;
        let lesion = self
            .lesion
            .as_ref()
            .ok_or_else(|| Error::Protocol("no image loaded".into()))?;
        let res = lesion
            .last
            .as_ref()
            .ok_or_else(|| Error::Protocol("finalize before any segmentation".into()))?;
        let first_seed = lesion
            .events
            .iter()
            .find(|e| e.kind == EventKind::SetSeed)
            .map(|e| e.timestamp_ms)
            .ok_or_else(|| Error::Protocol("finalize before set_seed".into()))?;
        let mut events = lesion.events.clone();
        events.push(SessionEvent {
            timestamp_ms: t,
            kind: EventKind::Finalize,
            payload: json!({"satisfied": satisfied}),
        });
        let log = SessionLog {
            lesion_id: lesion.id.clone(),
            image_path: lesion.path.clone(),
            params: self.config.params,
            spacing_mm: self.config.spacing_mm,
            events,
            satisfied,
            total_interaction_ms: t - first_seed,
        };
        let mut record = json!({
            "lesion_id": log.lesion_id,
            "satisfied": satisfied,
            "time_semi": log.total_interaction_ms / 1000.0,
            "time_manual": Value::Null,
            "compute_ms": res.elapsed * 1000.0,
            "diameter_a": res.diameters.a,
            "diameter_b": res.diameters.b,
            "diameter_a_mm": res.diameter_a_mm(),
            "diameter_b_mm": res.diameter_b_mm(),
            "dsc": Value::Null,
            "hd": Value::Null,
            "diam_a_diff": Value::Null,
            "diam_b_diff": Value::Null,
        });
        if let Some(reference) = &lesion.reference {
            let pts: Vec<Point2D> = boundary_pixels(reference)
                .into_iter()
                .map(|(x, y)| Point2D::new(x as f64, y as f64))
                .collect();
            let dm = diameters_of_points(&pts);
            record["dsc"] = json!(dice(reference, &res.mask)?);
            record["hd"] = json!(hausdorff(reference, &res.mask)?);
            record["diam_a_diff"] = json!((dm.a - res.diameters.a).abs());
            record["diam_b_diff"] = json!((dm.b - res.diameters.b).abs());
        }
        if let Some(dir) = &self.config.log_dir {
            append_log(dir, &log)?;
        }
        let reply = json!({
            "type": "finalized",
            "record": record,
            "contour": res.contour.vertices().iter().map(point_json).collect::<Vec<_>>(),
            "session_log": log,
        });
        self.last_ms = t;
        self.lesion = None;
        self.finished.push(log);
        Ok(reply)
    }
}

fn contour_reply(input: &SeedInput, res: &SegmentationResult) -> Value {
    json!({
        "type": "contour",
        "seed": point_json(&input.seed),
        "helpers": input.helpers.iter().map(point_json).collect::<Vec<_>>(),
        "vertices": res.contour.vertices().iter().map(point_json).collect::<Vec<_>>(),
        "cut_index": res.cut_index,
        "diameters": res.diameters,
        "diameter_a_mm": res.diameter_a_mm(),
        "diameter_b_mm": res.diameter_b_mm(),
        "dropped_helpers": res.dropped_helpers,
        "compute_ms": res.elapsed * 1000.0,
    })
}

fn append_log(dir: &Path, log: &SessionLog) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sessions.ndjson");
    let line = serde_json::to_string(log).map_err(|e| Error::Protocol(e.to_string()))?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

enum Incoming {
    Line(String),
    Failed(String),
}

fn spawn_reader<R: BufRead + Send + 'static>(reader: R) -> Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in reader.lines() {
            let msg = match line {
                Ok(l) => Incoming::Line(l),
                Err(e) => Incoming::Failed(e.to_string()),
            };
            let failed = matches!(msg, Incoming::Failed(_));
            if tx.send(msg).is_err() || failed {
                break;
            }
        }
    });
    rx
}

fn is_drag(v: &Value) -> bool {
    v.get("type").and_then(Value::as_str) == Some("drag_seed")
}

/// Serves one client until end of input. Returns the number of requests
/// answered. Transport failures end the loop with a protocol error.
pub fn serve<R, W>(reader: R, mut writer: W, session: &mut Session) -> Result<usize>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let rx = spawn_reader(reader);
    let mut pending: Option<Incoming> = None;
    let mut answered = 0usize;
    loop {
        let msg = match pending.take() {
            Some(m) => m,
            None => match rx.recv() {
                Ok(m) => m,
                Err(_) => break,
            },
        };
        let line = match msg {
            Incoming::Line(l) => l,
            Incoming::Failed(e) => return Err(Error::Protocol(format!("read failed: {e}"))),
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(mut value) => {
                if is_drag(&value) {
                    // newest-wins: skip drags superseded by queued drags
                    loop {
                        match rx.try_recv() {
                            Ok(Incoming::Line(next)) => match serde_json::from_str::<Value>(&next) {
                                Ok(v) if is_drag(&v) => {
                                    log::debug!("coalesced drag_seed");
                                    value = v;
                                }
                                _ => {
                                    pending = Some(Incoming::Line(next));
                                    break;
                                }
                            },
                            Ok(failed) => {
                                pending = Some(failed);
                                break;
                            }
                            Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
                        }
                    }
                }
                session.handle_value(value)
            }
            Err(e) => error_reply(&Value::Null, &Error::Protocol(format!("malformed JSON: {e}"))),
        };
        let text = serde_json::to_string(&reply).map_err(|e| Error::Protocol(e.to_string()))?;
        writeln!(writer, "{text}")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))?;
        answered += 1;
    }
    Ok(answered)
}

/// Accepts clients one at a time on `listener`, each with a fresh session.
/// Stops after `max_clients` connections when given.
pub fn serve_tcp(listener: TcpListener, config: SessionConfig, max_clients: Option<usize>) -> Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream.map_err(|e| Error::Protocol(format!("accept failed: {e}")))?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        log::info!("client {peer} connected");
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Protocol(format!("socket clone failed: {e}")))?;
        let mut session = Session::new(config.clone());
        match serve(std::io::BufReader::new(reader), &stream, &mut session) {
            Ok(n) => log::info!("client {peer} done after {n} requests"),
            Err(e) => log::warn!("client {peer}: {e}"),
        }
        if max_clients.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}
