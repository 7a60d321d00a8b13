//! Websocket service: one session per connection.

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio_tungstenite::tungstenite::Message;

use super::protocol::{ClientFrame, ErrorCode, ServerFrame};
use super::{Models, Session, SessionConfig};
use crate::error::{Error, Result};
use crate::model::EmotionVA;
use crate::pipeline::{ingest_midi, Ingested, Song};

/// Songs on offer and the shared models.
#[derive(Debug)]
pub struct ServerState {
    pub songs: BTreeMap<String, Song>,
    pub models: Arc<Models>,
    pub config: SessionConfig,
}

/// Protocol state of one connection, independent of the transport.
#[derive(Debug)]
pub struct Connection {
    state: Arc<ServerState>,
    config: SessionConfig,
    session: Option<Session>,
}

impl Connection {
    pub fn new(state: Arc<ServerState>) -> Self {
        let config = state.config;
        Connection { state, config, session: None }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<ServerFrame> {
        match serde_json::from_str::<ClientFrame>(text) {
            Ok(frame) => self.handle(frame),
            Err(e) => vec![ServerFrame::error(ErrorCode::BadFrame, e.to_string())],
        }
    }

    pub fn handle(&mut self, frame: ClientFrame) -> Vec<ServerFrame> {
        match frame {
            ClientFrame::SelectSong { id, midi } => {
                let song = match (id, midi) {
                    (Some(id), _) => match self.state.songs.get(&id) {
                        Some(s) => s.clone(),
                        None => return vec![ServerFrame::error(ErrorCode::UnknownSong, format!("no song {id:?}"))],
                    },
                    (None, Some(b64)) => match decode_song(&b64) {
                        Ok(s) => s,
                        Err(e) => return vec![ServerFrame::error(ErrorCode::BadMidi, e.to_string())],
                    },
                    (None, None) => return vec![ServerFrame::error(ErrorCode::BadFrame, "select_song needs id or midi")],
                };
                match Session::open(song, self.config, self.state.models.clone()) {
                    Ok(s) => {
                        self.session = Some(s);
                        Vec::new()
                    }
                    Err(e) => vec![ServerFrame::error(ErrorCode::BadMidi, e.to_string())],
                }
            }
            ClientFrame::SetConfig { fusion, backend, granularity } => {
                let mut cfg = self.config;
                cfg.fusion = fusion.unwrap_or(cfg.fusion);
                cfg.backend = backend.unwrap_or(cfg.backend);
                cfg.granularity = granularity.unwrap_or(cfg.granularity);
                if let Some(s) = &mut self.session {
                    if let Err(e) = s.set_config(cfg) {
                        return vec![ServerFrame::error(ErrorCode::Config, e.to_string())];
                    }
                } else if cfg.backend == super::BackendKind::Neural && self.state.models.neural.is_none() {
                    return vec![ServerFrame::error(ErrorCode::Config, "no generator parameters are loaded")];
                }
                self.config = cfg;
                Vec::new()
            }
            ClientFrame::Target { v, a } => {
                if !v.is_finite() || !a.is_finite() {
                    return vec![ServerFrame::error(ErrorCode::BadFrame, "target must be finite")];
                }
                let Some(session) = &mut self.session else {
                    return vec![ServerFrame::error(ErrorCode::NoSong, "select a song first")];
                };
                if session.is_finished() {
                    return vec![ServerFrame::EndOfSong {}];
                }
                match session.step(EmotionVA::new(v, a)) {
                    Ok(step) => {
                        let mut out = vec![ServerFrame::segment(&step, session.song())];
                        if session.is_finished() {
                            out.push(ServerFrame::EndOfSong {});
                            out.push(ServerFrame::metrics(&step.metrics_so_far, session.steps_done()));
                        }
                        out
                    }
                    Err(e) => vec![ServerFrame::error(ErrorCode::StepFailed, e.to_string())],
                }
            }
        }
    }
}

fn decode_song(b64: &str) -> Result<Song> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|e| Error::Invalid(format!("base64: {e}")))?;
    match ingest_midi(&bytes)? {
        Ingested::Song { song, .. } => Ok(song),
        Ingested::Rejected(r) => Err(Error::Invalid(format!("song rejected: {r:?}"))),
    }
}

async fn handle_connection(stream: TcpStream, state: Arc<ServerState>) -> Result<()> {
    let peer = stream.peer_addr().ok();
    let ws = tokio_tungstenite::accept_async(stream).await.map_err(|e| Error::Transport(e.to_string()))?;
    debug!("session opened for {peer:?}");
    let (mut tx, mut rx) = ws.split();
    let mut conn = Connection::new(state);
    while let Some(msg) = rx.next().await {
        let msg = msg.map_err(|e| Error::Transport(e.to_string()))?;
        let frames = match msg {
            Message::Text(text) => {
                // session steps are CPU-bound
                let (c, frames) = tokio::task::spawn_blocking(move || {
                    let f = conn.handle_text(&text);
                    (conn, f)
                })
                .await
                .map_err(|e| Error::Transport(e.to_string()))?;
                conn = c;
                frames
            }
            Message::Binary(_) => vec![ServerFrame::error(ErrorCode::BadFrame, "binary frames are not accepted")],
            Message::Close(_) => break,
            _ => continue,
        };
        for f in frames {
            tx.send(Message::Text(serde_json::to_string(&f)?)).await.map_err(|e| Error::Transport(e.to_string()))?;
        }
    }
    debug!("session closed for {peer:?}");
    Ok(())
}

/// Accepts connections on `listener` until it fails.
pub async fn serve_listener(listener: TcpListener, state: Arc<ServerState>) -> Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let state = state.clone();
        tokio::spawn(async move {
            if let Err(e) = handle_connection(stream, state).await {
                warn!("connection ended with error: {e}");
            }
        });
    }
}

pub async fn serve(addr: impl ToSocketAddrs, state: Arc<ServerState>) -> Result<()> {
    let listener = TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    serve_listener(listener, state).await
}
