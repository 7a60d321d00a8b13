//! Starts the websocket service on a local port and plays one song through it.

use std::collections::BTreeMap;
use std::sync::Arc;

use emoarrange::stream::protocol::{ClientFrame, ServerFrame};
use emoarrange::stream::{serve_listener, Models, ServerState, SessionConfig};
use emoarrange::synth::demo_song;
use futures_util::{SinkExt, StreamExt};
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> emoarrange::Result<()> {
    let state = Arc::new(ServerState {
        songs: BTreeMap::from([("demo".to_owned(), demo_song())]),
        models: Arc::new(Models::untrained()?),
        config: SessionConfig::default(),
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(serve_listener(listener, state));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}")).await.map_err(|e| emoarrange::Error::Transport(e.to_string()))?;
    let send = |f: ClientFrame| Message::Text(serde_json::to_string(&f).unwrap());
    ws.send(send(ClientFrame::SelectSong { id: Some("demo".into()), midi: None })).await.unwrap();
    ws.send(Message::Text("{\"type\":\"target\",\"v\":\"high\"}".into())).await.unwrap();
    let mut step = 0;
    ws.send(send(ClientFrame::Target { v: 0.6, a: 0.4 })).await.unwrap();
    while let Some(Ok(Message::Text(text))) = ws.next().await {
        match serde_json::from_str::<ServerFrame>(&text)? {
            ServerFrame::Segment { bar_index, notes, recognized, latency_ms, .. } => {
                println!("bar {bar_index:>2}: {} notes, recognized ({:+.2}, {:+.2}), {latency_ms:.1} ms", notes.len(), recognized.v, recognized.a);
                step += 1;
                let v = if step % 2 == 0 { 0.6 } else { -0.6 };
                ws.send(send(ClientFrame::Target { v, a: 0.4 })).await.unwrap();
            }
            ServerFrame::Error { code, msg } => println!("error {code:?}: {msg}"),
            ServerFrame::EndOfSong {} => println!("end of song"),
            ServerFrame::Metrics { overall, similarity, rtfit, .. } => {
                println!("overall {overall:.3}, similarity {similarity:.3}, rtfit {rtfit:.3}");
                break;
            }
        }
    }
    Ok(())
}
