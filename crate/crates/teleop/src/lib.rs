//! WebSocket teleoperation service for the simulated gripper.
//!
//! One control loop task owns the [`Controller`] and therefore the gripper
//! state. Connections reach it over a bounded command channel (a full
//! channel answers `rejected(busy)`) and receive telemetry from a broadcast
//! channel at the configured rate. The first connection is the operator;
//! later ones observe until the operator releases the role or leaves.
//!
//! Endpoints: `GET /ws` (WebSocket) and `GET /healthz`.

pub mod config;
pub mod hub;
mod ws;

use std::net::SocketAddr;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use axum::extract::{State, WebSocketUpgrade};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use palmgrip_core::controller::Controller;
use palmgrip_core::world::World;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

pub use config::ServiceConfig;
use hub::Hub;
use ws::Channels;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("trace file {path}: {source}")]
    Trace {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

async fn healthz() -> &'static str {
    "ok"
}

async fn upgrade(ws: WebSocketUpgrade, State(ch): State<Channels>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| ws::handle(socket, ch))
}

/// A running service. Dropping it leaves the tasks running; call
/// [`Server::shutdown`] to stop them.
pub struct Server {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    http: JoinHandle<std::io::Result<()>>,
    hub: JoinHandle<()>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = (&mut self.http).await;
        self.hub.abort();
        let _ = (&mut self.hub).await;
    }

    /// Waits until the HTTP server stops.
    pub async fn wait(mut self) -> Result<(), ServeError> {
        let res = (&mut self.http).await;
        self.hub.abort();
        match res {
            Ok(r) => r.map_err(ServeError::from),
            Err(e) => Err(ServeError::Io(std::io::Error::other(e))),
        }
    }
}

/// Binds the listener and starts the control loop and HTTP tasks.
pub async fn spawn(cfg: ServiceConfig, world: World) -> Result<Server, ServeError> {
    cfg.validate()?;
    let trace = match &cfg.trace {
        Some(path) => Some(
            std::fs::File::create(path).map_err(|source| ServeError::Trace {
                path: path.display().to_string(),
                source,
            })?,
        ),
        None => None,
    };
    let listener = TcpListener::bind(&cfg.bind)
        .await
        .map_err(|source| ServeError::Bind {
            addr: cfg.bind.clone(),
            source,
        })?;
    let addr = listener.local_addr()?;

    let controller = Controller::new(world).with_capacity(cfg.queue_capacity);
    let (sessions_tx, sessions_rx) = mpsc::unbounded_channel();
    let (commands_tx, commands_rx) = mpsc::channel(cfg.queue_capacity);
    let hub = tokio::spawn(Hub::new(controller, &cfg, trace).run(sessions_rx, commands_rx));

    let channels = Channels {
        sessions: sessions_tx,
        commands: commands_tx,
        rate_hz: cfg.rate_hz,
        next_conn: Arc::new(AtomicU64::new(0)),
    };
    let app = Router::new()
        .route("/healthz", get(healthz))
        .route("/ws", get(upgrade))
        .with_state(channels);
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await
    });
    tracing::info!(%addr, rate_hz = cfg.rate_hz, "teleop service listening");
    Ok(Server {
        addr,
        stop: Some(stop_tx),
        http,
        hub,
    })
}

/// Runs the service until the process is stopped.
pub async fn serve(cfg: ServiceConfig, world: World) -> Result<(), ServeError> {
    spawn(cfg, world).await?.wait().await
}
