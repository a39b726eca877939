//! The control loop task. It alone owns the [`Controller`]; connections talk
//! to it through channels.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::sync::Arc;
use std::time::Duration;

use palmgrip_core::controller::Controller;
use palmgrip_core::protocol::{
    to_json, Command, RejectReason, Reply, ReplyStatus, Role, ServerMessage, TelemetryFrame,
};
use serde::Serialize;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::{Instant, MissedTickBehavior};

use crate::config::ServiceConfig;

pub type ConnId = u64;

/// A command from a connection, already parsed.
#[derive(Debug)]
pub struct Submission {
    pub conn: ConnId,
    pub id: u64,
    pub command: Command,
}

/// What a new connection gets back from the loop.
pub struct Welcome {
    pub role: Role,
    pub replay: Vec<TelemetryFrame>,
    pub telemetry: broadcast::Receiver<Arc<str>>,
}

pub enum SessionEvent {
    Connect {
        conn: ConnId,
        outbox: mpsc::UnboundedSender<ServerMessage>,
        welcome: oneshot::Sender<Welcome>,
    },
    Disconnect {
        conn: ConnId,
    },
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine<'a> {
    Connect {
        t_ms: u64,
        conn: ConnId,
        role: Role,
    },
    Disconnect {
        t_ms: u64,
        conn: ConnId,
    },
    Command {
        t_ms: u64,
        conn: ConnId,
        id: u64,
        command: &'a Command,
    },
    Reply {
        t_ms: u64,
        conn: ConnId,
        reply: &'a Reply,
    },
    Telemetry {
        frame: &'a TelemetryFrame,
    },
}

struct Client {
    outbox: mpsc::UnboundedSender<ServerMessage>,
    role: Role,
}

pub struct Hub {
    controller: Controller,
    rate_hz: u32,
    time_scale: f64,
    replay_len: usize,
    // BTreeMap: connection ids grow, so iteration order is connection order
    clients: BTreeMap<ConnId, Client>,
    // controller ids are assigned here so clients can reuse ids freely
    routes: HashMap<u64, (ConnId, u64)>,
    next_internal: u64,
    replay: VecDeque<TelemetryFrame>,
    telemetry: broadcast::Sender<Arc<str>>,
    last_ts: Option<u64>,
    started: Instant,
    trace: Option<BufWriter<File>>,
}

impl Hub {
    pub fn new(controller: Controller, cfg: &ServiceConfig, trace: Option<File>) -> Self {
        let (telemetry, _) = broadcast::channel(cfg.replay_frames.max(16) * 2);
        Self {
            controller,
            rate_hz: cfg.rate_hz,
            time_scale: cfg.time_scale,
            replay_len: cfg.replay_frames,
            clients: BTreeMap::new(),
            routes: HashMap::new(),
            next_internal: 0,
            replay: VecDeque::new(),
            telemetry,
            last_ts: None,
            started: Instant::now(),
            trace: trace.map(BufWriter::new),
        }
    }

    fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn log(&mut self, line: TraceLine<'_>) {
        if let Some(w) = self.trace.as_mut() {
            let res = serde_json::to_writer(&mut *w, &line)
                .map_err(std::io::Error::from)
                .and_then(|_| w.write_all(b"\n"));
            if let Err(e) = res {
                tracing::warn!("trace write failed, disabling trace: {e}");
                self.trace = None;
            }
        }
    }

    fn send(&mut self, conn: ConnId, msg: ServerMessage) {
        if let Some(c) = self.clients.get(&conn) {
            // a closed outbox means the connection is on its way out
            let _ = c.outbox.send(msg);
        }
    }

    fn deliver(&mut self, replies: Vec<Reply>) {
        let t_ms = self.elapsed_ms();
        for mut reply in replies {
            let Some(&(conn, client_id)) = self.routes.get(&reply.id) else {
                continue;
            };
            if reply.status != ReplyStatus::Accepted {
                // completed or rejected is the last reply for an id
                self.routes.remove(&reply.id);
            }
            reply.id = client_id;
            self.log(TraceLine::Reply {
                t_ms,
                conn,
                reply: &reply,
            });
            self.send(conn, ServerMessage::Reply(reply));
        }
    }

    fn operator(&self) -> Option<ConnId> {
        self.clients
            .iter()
            .find(|(_, c)| c.role == Role::Operator)
            .map(|(id, _)| *id)
    }

    fn set_role(&mut self, conn: ConnId, role: Role) {
        if let Some(c) = self.clients.get_mut(&conn) {
            c.role = role;
            let _ = c.outbox.send(ServerMessage::Role { role });
        }
    }

    /// Promotes the oldest observer other than `except`.
    fn promote(&mut self, except: Option<ConnId>) {
        let next = self
            .clients
            .iter()
            .find(|(id, c)| c.role == Role::Observer && Some(**id) != except)
            .map(|(id, _)| *id);
        if let Some(id) = next {
            self.set_role(id, Role::Operator);
        }
    }

    pub fn on_session(&mut self, event: SessionEvent) {
        match event {
            SessionEvent::Connect {
                conn,
                outbox,
                welcome,
            } => {
                let role = if self.operator().is_none() {
                    Role::Operator
                } else {
                    Role::Observer
                };
                self.clients.insert(conn, Client { outbox, role });
                let t_ms = self.elapsed_ms();
                self.log(TraceLine::Connect { t_ms, conn, role });
                let _ = welcome.send(Welcome {
                    role,
                    replay: self.replay.iter().cloned().collect(),
                    telemetry: self.telemetry.subscribe(),
                });
            }
            SessionEvent::Disconnect { conn } => {
                let t_ms = self.elapsed_ms();
                self.log(TraceLine::Disconnect { t_ms, conn });
                if let Some(c) = self.clients.remove(&conn) {
                    if c.role == Role::Operator {
                        self.promote(None);
                    }
                }
                self.routes.retain(|_, (c, _)| *c != conn);
            }
        }
    }

    pub fn on_submission(&mut self, sub: Submission) {
        let t_ms = self.elapsed_ms();
        self.log(TraceLine::Command {
            t_ms,
            conn: sub.conn,
            id: sub.id,
            command: &sub.command,
        });
        let is_operator = self
            .clients
            .get(&sub.conn)
            .is_some_and(|c| c.role == Role::Operator);
        if !is_operator {
            let reply = Reply::rejected(
                sub.id,
                RejectReason::NotOperator,
                vec!["this connection is an observer".into()],
            );
            self.log(TraceLine::Reply {
                t_ms,
                conn: sub.conn,
                reply: &reply,
            });
            self.send(sub.conn, ServerMessage::Reply(reply));
            return;
        }
        let release = matches!(sub.command, Command::Release);
        let internal = self.next_internal;
        self.next_internal += 1;
        self.routes.insert(internal, (sub.conn, sub.id));
        let replies = self.controller.submit(internal, sub.command);
        let accepted = replies.iter().any(|r| r.status == ReplyStatus::Accepted);
        self.deliver(replies);
        if release && accepted {
            self.set_role(sub.conn, Role::Observer);
            self.promote(Some(sub.conn));
        }
    }

    /// Advances the controller and publishes one frame.
    pub fn on_tick(&mut self, dt: Duration) {
        let replies = self
            .controller
            .tick(dt.as_secs_f64() * 1000.0 * self.time_scale);
        self.deliver(replies);
        let mut ts = self.elapsed_ms();
        if let Some(prev) = self.last_ts {
            ts = ts.max(prev + 1);
        }
        self.last_ts = Some(ts);
        let frame = self.controller.telemetry(ts);
        self.log(TraceLine::Telemetry { frame: &frame });
        if let Some(w) = self.trace.as_mut() {
            let _ = w.flush();
        }
        let text: Arc<str> = to_json(&ServerMessage::Telemetry(frame.clone())).into();
        // no subscribers is fine
        let _ = self.telemetry.send(text);
        self.replay.push_back(frame);
        while self.replay.len() > self.replay_len {
            self.replay.pop_front();
        }
    }

    pub fn period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate_hz as f64)
    }

    /// Runs until both inbound channels close.
    pub async fn run(
        mut self,
        mut sessions: mpsc::UnboundedReceiver<SessionEvent>,
        mut commands: mpsc::Receiver<Submission>,
    ) {
        let mut ticker = tokio::time::interval(self.period());
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut last = Instant::now();
        let (mut sessions_open, mut commands_open) = (true, true);
        while sessions_open || commands_open {
            tokio::select! {
                biased;
                ev = sessions.recv(), if sessions_open => match ev {
                    Some(ev) => self.on_session(ev),
                    None => sessions_open = false,
                },
                sub = commands.recv(), if commands_open => match sub {
                    Some(sub) => self.on_submission(sub),
                    None => commands_open = false,
                },
                now = ticker.tick() => {
                    self.on_tick(now - last);
                    last = now;
                }
            }
        }
    }
}
