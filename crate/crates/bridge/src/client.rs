//! Minimal headless client, used for scripted replays and tests.

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use shoalguide_core::Vec2;

use crate::protocol::{ClientMsg, ServerMsg, PROTOCOL_VERSION};
use crate::server::BridgeError;

pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl Client {
    pub async fn connect(url: &str) -> Result<Self, BridgeError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Client { ws })
    }

    pub async fn send(&mut self, msg: &ClientMsg) -> Result<(), BridgeError> {
        let text = serde_json::to_string(msg).expect("client frames serialize");
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    pub async fn send_raw(&mut self, text: &str) -> Result<(), BridgeError> {
        self.ws.send(Message::text(text.to_string())).await?;
        Ok(())
    }

    pub async fn hello(&mut self, n_real: usize, name: &str) -> Result<(), BridgeError> {
        self.send(&ClientMsg::Hello {
            protocol: PROTOCOL_VERSION,
            n_real,
            client: name.to_string(),
        })
        .await
    }

    /// Next server frame; `None` once the connection is closed.
    pub async fn recv(&mut self) -> Option<ServerMsg> {
        while let Some(frame) = self.ws.next().await {
            match frame {
                Ok(Message::Text(t)) => return serde_json::from_str(&t).ok(),
                Ok(Message::Close(_)) | Err(_) => return None,
                Ok(_) => continue,
            }
        }
        None
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// Everything a replay saw from the server.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ReplayTranscript {
    pub agents: Vec<ServerMsg>,
    pub errors: Vec<ServerMsg>,
    pub end: Option<ServerMsg>,
}

/// Play `frames` against a lockstep server: send one state frame, wait for
/// the matching `agents` frame, repeat; then collect the `end` frame.
pub async fn replay_lockstep(url: &str, frames: &[Vec<Vec2>]) -> Result<ReplayTranscript, BridgeError> {
    let mut client = Client::connect(url).await?;
    let n_real = frames.first().map_or(0, |f| f.len());
    client.hello(n_real, "replay").await?;
    let mut out = ReplayTranscript::default();
    for (i, fish) in frames.iter().enumerate() {
        client
            .send(&ClientMsg::State {
                seq: i as u64 + 1,
                t_ms: i as u64 * 100,
                fish: fish.clone(),
            })
            .await?;
        loop {
            match client.recv().await {
                Some(msg @ ServerMsg::Agents { step, stale: false, .. }) if step == i => {
                    out.agents.push(msg);
                    break;
                }
                Some(msg @ ServerMsg::Error { .. }) => out.errors.push(msg),
                Some(msg @ ServerMsg::End { .. }) => {
                    out.end = Some(msg);
                    return Ok(out);
                }
                Some(_) => {}
                None => return Ok(out),
            }
        }
    }
    while let Some(msg) = client.recv().await {
        match msg {
            ServerMsg::End { .. } => {
                out.end = Some(msg);
                break;
            }
            ServerMsg::Error { .. } => out.errors.push(msg),
            _ => {}
        }
    }
    client.close().await;
    Ok(out)
}
