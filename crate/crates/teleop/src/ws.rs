//! One WebSocket connection: parse client frames, forward commands, relay
//! replies and telemetry.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, Utf8Bytes, WebSocket};
use futures::{SinkExt, StreamExt};
use palmgrip_core::protocol::{
    parse_client_message, to_json, Incoming, RejectReason, Reply, ServerMessage,
    CLOSE_PROTOCOL_VIOLATION,
};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::mpsc::error::TrySendError;
use tokio::sync::{mpsc, oneshot};

use crate::hub::{SessionEvent, Submission};

/// Handles shared by every connection.
#[derive(Clone)]
pub struct Channels {
    pub sessions: mpsc::UnboundedSender<SessionEvent>,
    pub commands: mpsc::Sender<Submission>,
    pub rate_hz: u32,
    pub next_conn: Arc<AtomicU64>,
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(Utf8Bytes::from(to_json(msg)))
}

pub async fn handle(socket: WebSocket, ch: Channels) {
    let conn = ch.next_conn.fetch_add(1, Ordering::Relaxed);
    let (outbox, mut inbox) = mpsc::unbounded_channel();
    let (welcome_tx, welcome_rx) = oneshot::channel();
    if ch
        .sessions
        .send(SessionEvent::Connect {
            conn,
            outbox,
            welcome: welcome_tx,
        })
        .is_err()
    {
        return;
    }
    let Ok(welcome) = welcome_rx.await else {
        return;
    };
    let (mut sink, mut stream) = socket.split();
    let mut telemetry = welcome.telemetry;
    let greeting = [
        ServerMessage::Hello {
            role: welcome.role,
            rate_hz: ch.rate_hz,
        },
        ServerMessage::Replay {
            frames: welcome.replay,
        },
    ];
    let mut ok = true;
    for m in &greeting {
        ok &= sink.send(text(m)).await.is_ok();
    }
    tracing::debug!(conn, role = ?welcome.role, "connected");

    while ok {
        tokio::select! {
            frame = stream.next() => {
                let msg = match frame {
                    Some(Ok(m)) => m,
                    _ => break,
                };
                let body = match msg {
                    Message::Text(t) => t,
                    Message::Close(_) => break,
                    Message::Ping(_) | Message::Pong(_) => continue,
                    Message::Binary(_) => {
                        close(&mut sink, "binary frames are not part of the protocol").await;
                        break;
                    }
                };
                match parse_client_message(body.as_str()) {
                    Incoming::Command(env) => {
                        let sub = Submission { conn, id: env.id, command: env.command };
                        match ch.commands.try_send(sub) {
                            Ok(()) => {}
                            Err(TrySendError::Full(sub)) => {
                                let reply = Reply::rejected(sub.id, RejectReason::Busy, vec!["command queue full".into()]);
                                ok = sink.send(text(&ServerMessage::Reply(reply))).await.is_ok();
                            }
                            Err(TrySendError::Closed(_)) => break,
                        }
                    }
                    Incoming::Reject(reply) => {
                        ok = sink.send(text(&ServerMessage::Reply(reply))).await.is_ok();
                    }
                    Incoming::Violation(reason) => {
                        close(&mut sink, &reason).await;
                        break;
                    }
                }
            }
            out = inbox.recv() => match out {
                Some(m) => ok = sink.send(text(&m)).await.is_ok(),
                None => break,
            },
            frame = telemetry.recv() => match frame {
                Ok(t) => ok = sink.send(Message::Text(Utf8Bytes::from(&*t))).await.is_ok(),
                Err(RecvError::Lagged(n)) => tracing::debug!(conn, n, "telemetry lagged"),
                Err(RecvError::Closed) => break,
            },
        }
    }
    let _ = ch.sessions.send(SessionEvent::Disconnect { conn });
    tracing::debug!(conn, "disconnected");
}

async fn close<S>(sink: &mut S, reason: &str)
where
    S: SinkExt<Message> + Unpin,
{
    // close reasons are limited to 123 bytes
    let mut end = reason.len().min(120);
    while !reason.is_char_boundary(end) {
        end -= 1;
    }
    let frame = CloseFrame {
        code: CLOSE_PROTOCOL_VIOLATION,
        reason: Utf8Bytes::from(&reason[..end]),
    };
    let _ = sink.send(Message::Close(Some(frame))).await;
}
