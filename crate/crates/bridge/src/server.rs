//! Single-client session server.
//!
//! Per connection an ingest task validates `state` frames and publishes the
//! freshest positions into a watch cell; the control loop takes exactly one
//! snapshot per control period, runs a protocol step and pushes an `agents`
//! frame. A writer task owns the socket sink.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use shoalguide_core::analytics::{bhattacharyya_distance, directional_histograms, occupancy_of, DEFAULT_BINS};
use shoalguide_core::session::{write_log, LogError, SessionError, SessionLog, SessionPolicies, SessionRunner, SourceKind};
use shoalguide_core::{RunConfig, Vec2};

use crate::protocol::{validate_state, ClientMsg, ErrorCode, ServerMsg, SessionSummary, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("network: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("client handshake failed: {0}")]
    Handshake(String),
    #[error("invalid bridge config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    /// Expected client state rate.
    pub state_rate_hz: f64,
    /// Wall-clock time between control steps.
    pub control_period: Duration,
    /// Steps pause once the freshest snapshot is older than this.
    pub staleness_limit: Duration,
    pub hello_timeout: Duration,
    /// Step once per received state frame instead of on a timer. Makes a
    /// scripted replay deterministic.
    pub lockstep: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            state_rate_hz: 10.0,
            control_period: Duration::from_millis(1200),
            staleness_limit: Duration::from_millis(1000),
            hello_timeout: Duration::from_secs(10),
            lockstep: false,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if !(self.state_rate_hz > 0.0) {
            return Err(BridgeError::Config("state rate must be positive".into()));
        }
        if self.control_period.as_secs_f64() < 1.0 / self.state_rate_hz {
            return Err(BridgeError::Config(
                "control period must not be shorter than the state period".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    seq: u64,
    fish: Vec<Vec2>,
    received: Instant,
}

enum Outgoing {
    Frame(ServerMsg),
    Close,
}

pub struct BridgeServer {
    listener: TcpListener,
}

impl BridgeServer {
    pub async fn bind(addr: SocketAddr) -> Result<Self, BridgeError> {
        Ok(BridgeServer {
            listener: TcpListener::bind(addr).await?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, BridgeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Serve one session to completion or disconnect. The (possibly
    /// partial) log is written to `log_path` when given.
    pub async fn run(
        self,
        config: &RunConfig,
        policies: SessionPolicies,
        bridge: &BridgeConfig,
        log_path: Option<&Path>,
    ) -> Result<SessionLog, BridgeError> {
        bridge.validate()?;
        let runner = SessionRunner::new(config, policies)?;
        let (stream, _) = self.listener.accept().await?;
        let refuser = tokio::spawn(refuse_others(self.listener));
        let result = session(stream, runner, config, bridge, log_path).await;
        refuser.abort();
        result
    }
}

async fn refuse_others(listener: TcpListener) {
    while let Ok((stream, _)) = listener.accept().await {
        tokio::spawn(async move {
            if let Ok(mut ws) = tokio_tungstenite::accept_async(stream).await {
                let msg = ServerMsg::error(ErrorCode::Busy, "a session is already in progress");
                let _ = ws.send(Message::text(msg.to_text())).await;
                let _ = ws.close(None).await;
            }
        });
    }
}

async fn writer(
    mut sink: futures_util::stream::SplitSink<WebSocketStream<TcpStream>, Message>,
    mut rx: mpsc::UnboundedReceiver<Outgoing>,
) {
    while let Some(out) = rx.recv().await {
        match out {
            Outgoing::Frame(msg) => {
                if sink.send(Message::text(msg.to_text())).await.is_err() {
                    break;
                }
            }
            Outgoing::Close => {
                let _ = sink.close().await;
                break;
            }
        }
    }
}

async fn session(
    stream: TcpStream,
    mut runner: SessionRunner,
    config: &RunConfig,
    bridge: &BridgeConfig,
    log_path: Option<&Path>,
) -> Result<SessionLog, BridgeError> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (sink, mut source) = ws.split();
    let (out_tx, out_rx) = mpsc::unbounded_channel();
    let writer_task = tokio::spawn(writer(sink, out_rx));
    let n_real = config.sim.n_real;

    let hello = tokio::time::timeout(bridge.hello_timeout, source.next()).await;
    let handshake = match hello {
        Ok(Some(Ok(Message::Text(text)))) => match serde_json::from_str::<ClientMsg>(&text) {
            Ok(ClientMsg::Hello { protocol, n_real: n, .. }) => {
                if protocol != PROTOCOL_VERSION {
                    Err((ErrorCode::Protocol, format!("protocol {protocol} unsupported, server speaks {PROTOCOL_VERSION}")))
                } else if n != n_real {
                    Err((ErrorCode::FishCount, format!("session expects {n_real} fish, client announced {n}")))
                } else {
                    Ok(())
                }
            }
            Ok(_) => Err((ErrorCode::Protocol, "first frame must be hello".to_string())),
            Err(e) => Err((ErrorCode::Malformed, format!("unparseable frame: {e}"))),
        },
        Ok(_) => Err((ErrorCode::Protocol, "expected a hello text frame".to_string())),
        Err(_) => Err((ErrorCode::Protocol, "no hello before timeout".to_string())),
    };
    if let Err((code, message)) = handshake {
        let _ = out_tx.send(Outgoing::Frame(ServerMsg::error(code, message.clone())));
        let _ = out_tx.send(Outgoing::Close);
        let _ = writer_task.await;
        return Err(BridgeError::Handshake(message));
    }

    let (snap_tx, mut snap_rx) = watch::channel::<Option<Snapshot>>(None);
    let ingest_out = out_tx.clone();
    let ingest: JoinHandle<()> = tokio::spawn(async move {
        let mut last_seq = None;
        while let Some(frame) = source.next().await {
            let text = match frame {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(Message::Ping(_) | Message::Pong(_) | Message::Frame(_)) => continue,
                Ok(Message::Binary(_)) => {
                    let _ = ingest_out.send(Outgoing::Frame(ServerMsg::error(ErrorCode::Malformed, "binary frames are not accepted")));
                    let _ = ingest_out.send(Outgoing::Close);
                    break;
                }
            };
            match serde_json::from_str::<ClientMsg>(&text) {
                Ok(ClientMsg::State { seq, fish, .. }) => match validate_state(seq, &fish, n_real, last_seq) {
                    Ok(()) => {
                        last_seq = Some(seq);
                        snap_tx.send_replace(Some(Snapshot {
                            seq,
                            fish,
                            received: Instant::now(),
                        }));
                    }
                    Err(rej) => {
                        let _ = ingest_out.send(Outgoing::Frame(rej.to_msg()));
                    }
                },
                Ok(ClientMsg::Hello { .. }) => {
                    let _ = ingest_out.send(Outgoing::Frame(ServerMsg::error(ErrorCode::Protocol, "duplicate hello")));
                }
                Err(e) => {
                    let _ = ingest_out.send(Outgoing::Frame(ServerMsg::error(ErrorCode::Malformed, format!("unparseable frame: {e}"))));
                    let _ = ingest_out.send(Outgoing::Close);
                    break;
                }
            }
        }
        // dropping snap_tx tells the control loop the client is gone
    });

    let started = Instant::now();
    let start_stamp = time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .ok();
    let step_duration = config.protocol.step_duration;
    let mut ticker = tokio::time::interval(bridge.control_period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut consumed_seq: Option<u64> = None;
    let mut disconnected = false;

    while !runner.is_done() {
        let snapshot = if bridge.lockstep {
            match snap_rx.changed().await {
                Ok(()) => snap_rx.borrow_and_update().clone(),
                Err(_) => {
                    disconnected = true;
                    break;
                }
            }
        } else {
            ticker.tick().await;
            if snap_rx.has_changed().is_err() {
                disconnected = true;
                break;
            }
            snap_rx.borrow_and_update().clone()
        };
        let fresh = snapshot
            .filter(|s| bridge.lockstep || s.received.elapsed() <= bridge.staleness_limit);
        let Some(snap) = fresh else {
            let _ = out_tx.send(Outgoing::Frame(stale_frame(&runner)));
            continue;
        };
        if bridge.lockstep && consumed_seq == Some(snap.seq) {
            continue;
        }
        consumed_seq = Some(snap.seq);
        let time = if bridge.lockstep {
            runner.step_index() as f64 * step_duration
        } else {
            started.elapsed().as_secs_f64()
        };
        let record = runner.begin_step(&snap.fish, time)?.clone();
        runner.advance_agents();
        let occupancy = occupancy_of(runner.records().iter().map(|r| (r.centroid().x, r.target_end)));
        let frame = ServerMsg::Agents {
            protocol: PROTOCOL_VERSION,
            step: record.step,
            target_end: record.target_end,
            agents: record.agents,
            images: record.images,
            next_agents: runner.agent_positions(),
            reward: Some(record.reward),
            occupancy,
            stale: false,
        };
        let _ = out_tx.send(Outgoing::Frame(frame));
    }

    let total_steps = config.protocol.total_steps;
    let log = runner.finish(SourceKind::Live, start_stamp);
    if let Some(path) = log_path {
        write_log(&log, path)?;
    }
    if !disconnected {
        let frame = ServerMsg::End {
            summary: summarize(&log, total_steps),
            log_path: log_path.map(|p| p.display().to_string()),
        };
        let _ = out_tx.send(Outgoing::Frame(frame));
        let _ = out_tx.send(Outgoing::Close);
    }
    drop(out_tx);
    ingest.abort();
    let _ = writer_task.await;
    Ok(log)
}

fn stale_frame(runner: &SessionRunner) -> ServerMsg {
    let last = runner.records().last();
    let agents = runner.agent_positions();
    ServerMsg::Agents {
        protocol: PROTOCOL_VERSION,
        step: runner.step_index(),
        target_end: runner.current_target(),
        agents: agents.clone(),
        images: last.map(|r| r.images.clone()).unwrap_or_default(),
        next_agents: agents,
        reward: last.map(|r| r.reward),
        occupancy: occupancy_of(runner.records().iter().map(|r| (r.centroid().x, r.target_end))),
        stale: true,
    }
}

/// End-of-session metrics over whatever was recorded.
pub fn summarize(log: &SessionLog, total_steps: usize) -> SessionSummary {
    let logs = std::slice::from_ref(log);
    let bhattacharyya = directional_histograms(logs, DEFAULT_BINS)
        .ok()
        .and_then(|(l, r)| bhattacharyya_distance(&l, &r).ok());
    SessionSummary {
        steps: log.records.len(),
        total_steps,
        occupancy: occupancy_of(log.records.iter().map(|r| (r.centroid().x, r.target_end))),
        bhattacharyya,
        complete: log.records.len() == total_steps,
    }
}

/// Convenience wrapper: bind, serve one session, return its log.
pub async fn serve(
    addr: SocketAddr,
    config: &RunConfig,
    policies: SessionPolicies,
    bridge: &BridgeConfig,
    log_path: Option<PathBuf>,
) -> Result<SessionLog, BridgeError> {
    let server = BridgeServer::bind(addr).await?;
    server.run(config, policies, bridge, log_path.as_deref()).await
}
