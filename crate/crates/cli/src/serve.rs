//! Teleoperation server.
//!
//! Messages are JSON objects `{type, session, seq, payload}`, each preceded
//! by its byte length as a big-endian u32. Clients send `create` and
//! `controls`; the server answers with `ack` or `error` and streams
//! `snapshot` messages for every session the connection created or joined.
//! A slow reader only ever receives the latest snapshot.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use flowbot_core::assembly::AssemblySpec;
use flowbot_core::teleop::{Ack, ControlFrame, Session, SessionConfig, Snapshot, DEFAULT_TICK_RATE};
use flowbot_core::PortRole;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

pub const MAX_MESSAGE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: &str, session: Option<String>, seq: u64, payload: Value) -> Self {
        Envelope {
            kind: kind.into(),
            session,
            seq,
            payload,
        }
    }

    fn error(session: Option<String>, seq: u64, kind: &str, message: impl std::fmt::Display) -> Self {
        Envelope::new("error", session, seq, json!({"kind": kind, "message": message.to_string()}))
    }
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, msg: &Envelope) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len()).context("message too large")?;
    w.write_all(&len.to_be_bytes()).await?;
    w.write_all(&body).await?;
    w.flush().await?;
    Ok(())
}

/// Next raw message body, or `None` on a clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    anyhow::ensure!(len <= MAX_MESSAGE_BYTES, "message of {len} bytes exceeds the limit");
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await?;
    Ok(Some(body))
}

pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Envelope>> {
    match read_frame(r).await? {
        Some(body) => Ok(Some(serde_json::from_slice(&body)?)),
        None => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub tick_rate: f64,
    /// Each session logs to this path with its id inserted before the extension.
    pub record: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            tick_rate: DEFAULT_TICK_RATE,
            record: None,
        }
    }
}

/// Log path of one session: `run.jsonl` becomes `run.s1.jsonl`.
pub fn record_path(base: &Path, session: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{session}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{session}"),
    };
    base.with_file_name(name)
}

type Published = Arc<std::result::Result<Snapshot, String>>;

#[derive(Clone)]
struct Handle {
    controls: mpsc::Sender<(ControlFrame, oneshot::Sender<Ack>)>,
    snapshots: watch::Receiver<Published>,
    ports: Vec<String>,
    limbs: Vec<String>,
    tick_rate: f64,
}

struct Registry {
    sessions: Mutex<HashMap<String, Handle>>,
    next_id: AtomicU64,
    options: ServeOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreatePayload {
    #[serde(default)]
    spec: Option<AssemblySpec>,
    #[serde(default)]
    tick_rate: Option<f64>,
    #[serde(default)]
    join: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsPayload {
    roles: IndexMap<String, PortRole>,
    #[serde(default)]
    timestamp: f64,
}

/// Accepts connections until the listener fails.
pub async fn serve(listener: TcpListener, options: ServeOptions) -> Result<()> {
    let registry = Arc::new(Registry {
        sessions: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
        options,
    });
    loop {
        let (socket, _) = listener.accept().await?;
        socket.set_nodelay(true)?;
        let registry = registry.clone();
        tokio::spawn(async move {
            if let Err(e) = connection(socket, registry).await {
                eprintln!("{}", json!({"event": "connection_error", "message": format!("{e:#}")}));
            }
        });
    }
}

fn start_session(registry: &Registry, spec: AssemblySpec, tick_rate: f64) -> Result<(String, Handle)> {
    let id = format!("s{}", registry.next_id.fetch_add(1, Ordering::Relaxed));
    let mut session = Session::new(SessionConfig {
        id: id.clone(),
        spec,
        tick_rate,
        solver: Default::default(),
        transient: Default::default(),
    })?;
    if let Some(base) = &registry.options.record {
        let path = record_path(base, &id);
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        session.record_to(Box::new(std::io::BufWriter::new(file)))?;
    }
    let limbs = session.latest().limbs.iter().map(|l| l.name.clone()).collect();
    let (ctl_tx, ctl_rx) = mpsc::channel(64);
    let (snap_tx, snap_rx) = watch::channel(Arc::new(Ok(session.latest().clone())));
    let handle = Handle {
        controls: ctl_tx,
        snapshots: snap_rx,
        ports: session.ports(),
        limbs,
        tick_rate,
    };
    tokio::spawn(step_loop(session, ctl_rx, snap_tx));
    Ok((id, handle))
}

/// The only writer of a session: applies queued frames and steps on the clock.
async fn step_loop(
    mut session: Session,
    mut controls: mpsc::Receiver<(ControlFrame, oneshot::Sender<Ack>)>,
    snapshots: watch::Sender<Published>,
) {
    let mut clock = tokio::time::interval(Duration::from_secs_f64(session.dt()));
    clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    clock.tick().await;
    loop {
        tokio::select! {
            biased;
            msg = controls.recv() => match msg {
                Some((frame, reply)) => {
                    let _ = reply.send(session.apply_controls(&frame));
                }
                None => break,
            },
            _ = clock.tick() => {
                let published = session.tick().map_err(|e| e.to_string());
                let failed = published.is_err();
                snapshots.send_replace(Arc::new(published));
                if failed {
                    break;
                }
            }
        }
    }
}

fn subscribe(out: mpsc::Sender<Envelope>, mut rx: watch::Receiver<Published>, session: String) {
    tokio::spawn(async move {
        rx.mark_changed();
        while rx.changed().await.is_ok() {
            let published = rx.borrow_and_update().clone();
            let msg = match published.as_ref() {
                Ok(s) => Envelope::new("snapshot", Some(session.clone()), s.tick, json!(s)),
                Err(e) => Envelope::error(Some(session.clone()), 0, "simulation", e),
            };
            let stop = msg.kind == "error";
            if out.send(msg).await.is_err() || stop {
                break;
            }
        }
    });
}

async fn connection(socket: tokio::net::TcpStream, registry: Arc<Registry>) -> Result<()> {
    let (mut reader, mut writer) = socket.into_split();
    let (out_tx, mut out_rx) = mpsc::channel::<Envelope>(16);
    let writer_task = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if write_message(&mut writer, &msg).await.is_err() {
                break;
            }
        }
    });
    let mut owned: Vec<String> = Vec::new();
    let result = async {
        while let Some(body) = read_frame(&mut reader).await? {
            let reply = match serde_json::from_slice::<Envelope>(&body) {
                Ok(msg) => handle_message(&registry, msg, &out_tx, &mut owned).await,
                Err(e) => Some(Envelope::error(None, 0, "bad_request", e)),
            };
            let Some(reply) = reply else { continue };
            if out_tx.send(reply).await.is_err() {
                break;
            }
        }
        anyhow::Ok(())
    }
    .await;
    {
        let mut sessions = registry.sessions.lock().expect("registry lock");
        for id in owned {
            sessions.remove(&id);
        }
    }
    drop(out_tx);
    let _ = writer_task.await;
    result
}

async fn handle_message(
    registry: &Registry,
    msg: Envelope,
    out: &mpsc::Sender<Envelope>,
    owned: &mut Vec<String>,
) -> Option<Envelope> {
    let seq = msg.seq;
    Some(match msg.kind.as_str() {
        "create" => {
            let payload: CreatePayload = match serde_json::from_value(msg.payload) {
                Ok(p) => p,
                Err(e) => return Some(Envelope::error(None, seq, "bad_request", e)),
            };
            let (id, handle) = match (payload.spec, payload.join) {
                (Some(spec), None) => {
                    let rate = payload.tick_rate.unwrap_or(registry.options.tick_rate);
                    match start_session(registry, spec, rate) {
                        Ok((id, handle)) => {
                            registry
                                .sessions
                                .lock()
                                .expect("registry lock")
                                .insert(id.clone(), handle.clone());
                            owned.push(id.clone());
                            (id, handle)
                        }
                        Err(e) => return Some(Envelope::error(None, seq, "invalid_spec", format!("{e:#}"))),
                    }
                }
                (None, Some(id)) => {
                    let found = registry.sessions.lock().expect("registry lock").get(&id).cloned();
                    match found {
                        Some(h) => (id, h),
                        None => return Some(Envelope::error(Some(id.clone()), seq, "not_found", format!("no session `{id}`"))),
                    }
                }
                _ => return Some(Envelope::error(None, seq, "bad_request", "create needs exactly one of `spec` or `join`")),
            };
            let reply = Envelope::new(
                "ack",
                Some(id.clone()),
                seq,
                json!({"status": "created", "ports": handle.ports, "limbs": handle.limbs, "tick_rate": handle.tick_rate}),
            );
            // The ack is queued before the first snapshot.
            if out.send(reply).await.is_ok() {
                subscribe(out.clone(), handle.snapshots.clone(), id);
            }
            return None;
        }
        "controls" => {
            let Some(id) = msg.session.clone() else {
                return Some(Envelope::error(None, seq, "bad_request", "controls need a session"));
            };
            let payload: ControlsPayload = match serde_json::from_value(msg.payload) {
                Ok(p) => p,
                Err(e) => return Some(Envelope::error(Some(id), seq, "bad_request", e)),
            };
            let handle = registry.sessions.lock().expect("registry lock").get(&id).cloned();
            let Some(handle) = handle else {
                return Some(Envelope::error(Some(id.clone()), seq, "not_found", format!("no session `{id}`")));
            };
            let frame = ControlFrame {
                seq,
                timestamp: payload.timestamp,
                roles: payload.roles,
            };
            let (tx, rx) = oneshot::channel();
            if handle.controls.send((frame, tx)).await.is_err() {
                return Some(Envelope::error(Some(id), seq, "not_found", "session has stopped"));
            }
            match rx.await {
                Ok(ack) => Envelope::new("ack", Some(id), seq, json!(ack)),
                Err(_) => Envelope::error(Some(id), seq, "not_found", "session has stopped"),
            }
        }
        other => Envelope::error(msg.session, seq, "bad_request", format!("unknown message type `{other}`")),
    })
}

/// Binds and serves until interrupted.
pub async fn run(bind: &str, port: u16, options: ServeOptions) -> Result<()> {
    let listener = TcpListener::bind((bind, port))
        .await
        .with_context(|| format!("binding {bind}:{port}"))?;
    println!("{}", json!({"listening": listener.local_addr()?.to_string()}));
    serve(listener, options).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_paths_carry_the_session() {
        assert_eq!(record_path(Path::new("/tmp/run.jsonl"), "s2"), Path::new("/tmp/run.s2.jsonl"));
        assert_eq!(record_path(Path::new("log"), "s1"), Path::new("log.s1"));
    }

    #[tokio::test]
    async fn frames_round_trip() {
        let msg = Envelope::new("controls", Some("s1".into()), 7, json!({"roles": {}}));
        let mut buf = Vec::new();
        write_message(&mut buf, &msg).await.unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        let mut r = buf.as_slice();
        assert_eq!(read_message(&mut r).await.unwrap(), Some(msg));
        assert_eq!(read_message(&mut r).await.unwrap(), None);
    }
}
