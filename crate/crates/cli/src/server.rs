//! Live control and telemetry service.
//!
//! One engine thread owns the simulation and drains a command queue at
//! every step boundary. Frames and telemetry are published through
//! latest-value channels; each client forwards them at its own subscribed
//! rate, so a slow client only ever misses values and never holds up the
//! engine.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use reef_core::config::set_param;
use reef_core::metrics::{diversity, msc_of_channel};
use reef_core::substrate::{DisplayNorm, ENERGY, INFRASTRUCTURE};
use reef_core::{save_snapshot, Brush, SimState};
use tokio::sync::{oneshot, watch};

use crate::protocol::{encode_frame, parse_client, ClientMessage, ServerMessage, Stream, Telemetry};

pub struct ServeOptions {
    pub state: SimState,
    pub bind: String,
    pub port: u16,
    pub display: DisplayNorm,
    pub msc_channel: String,
    pub snapshot_dir: PathBuf,
    pub start_paused: bool,
}

enum EngineCommand {
    Control(ClientMessage, oneshot::Sender<ServerMessage>),
    Hello(oneshot::Sender<ServerMessage>),
    Shutdown,
}

/// Requested rates per client, so the engine renders no more often than
/// the fastest subscriber needs.
#[derive(Default)]
struct Demand {
    frame: HashMap<u64, u32>,
    telemetry: HashMap<u64, u32>,
}

impl Demand {
    fn max(map: &HashMap<u64, u32>) -> u32 {
        map.values().copied().max().unwrap_or(0)
    }
}

struct Shared {
    commands: Mutex<mpsc::Sender<EngineCommand>>,
    frames: watch::Receiver<Option<Bytes>>,
    telemetry: watch::Receiver<Option<Telemetry>>,
    demand: Arc<Mutex<Demand>>,
    next_client: AtomicU64,
}

impl Shared {
    async fn request(&self, make: impl FnOnce(oneshot::Sender<ServerMessage>) -> EngineCommand) -> ServerMessage {
        let (tx, rx) = oneshot::channel();
        if self.commands.lock().unwrap().send(make(tx)).is_err() {
            return ServerMessage::error("simulation has stopped");
        }
        rx.await.unwrap_or_else(|_| ServerMessage::error("simulation has stopped"))
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    engine: Option<JoinHandle<SimState>>,
    commands: mpsc::Sender<EngineCommand>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections, stop the engine and return its state.
    pub async fn shutdown(mut self) -> Result<SimState, String> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.finish().await
    }

    /// Serve until `signal` resolves, then shut down.
    pub async fn run_until(mut self, signal: impl std::future::Future<Output = ()>) -> Result<SimState, String> {
        signal.await;
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.finish().await
    }

    async fn finish(mut self) -> Result<SimState, String> {
        let served = (&mut self.server).await;
        let _ = self.commands.send(EngineCommand::Shutdown);
        let engine = self.engine.take().expect("engine joined once");
        let state = tokio::task::spawn_blocking(move || engine.join())
            .await
            .map_err(|e| e.to_string())?
            .map_err(|_| "engine thread panicked".to_string())?;
        served.map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
        Ok(state)
    }
}

pub async fn start(opts: ServeOptions) -> Result<ServerHandle, String> {
    let listener = tokio::net::TcpListener::bind((opts.bind.as_str(), opts.port))
        .await
        .map_err(|e| format!("cannot bind {}:{}: {e}", opts.bind, opts.port))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;

    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (frame_tx, frame_rx) = watch::channel(None);
    let (tele_tx, tele_rx) = watch::channel(None);
    let demand = Arc::new(Mutex::new(Demand::default()));
    let engine = Engine {
        state: opts.state,
        display: opts.display,
        msc_channel: opts.msc_channel,
        snapshot_dir: opts.snapshot_dir,
        paused: opts.start_paused,
        pending: 0,
        recent: VecDeque::new(),
        frames: frame_tx,
        telemetry: tele_tx,
        demand: demand.clone(),
        last_frame: None,
        last_frame_step: None,
        last_telemetry: None,
    };
    let engine = std::thread::Builder::new()
        .name("reef-engine".into())
        .spawn(move || engine.run(cmd_rx))
        .map_err(|e| e.to_string())?;

    let shared = Arc::new(Shared {
        commands: Mutex::new(cmd_tx.clone()),
        frames: frame_rx,
        telemetry: tele_rx,
        demand,
        next_client: AtomicU64::new(0),
    });
    let app = Router::new()
        .route("/", get(|| async { "reef control service: connect a WebSocket to /ws\n" }))
        .route("/ws", get(upgrade))
        .with_state(shared);
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        stop: Some(stop_tx),
        server,
        engine: Some(engine),
        commands: cmd_tx,
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

fn period(fps: u32) -> Duration {
    Duration::from_secs_f64(1.0 / fps.max(1) as f64)
}

async fn send_json(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn client(mut socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let hello = shared.request(EngineCommand::Hello).await;
    if !send_json(&mut socket, &hello).await {
        return;
    }
    let mut frames = shared.frames.clone();
    frames.mark_unchanged();
    let mut frame_fps = 0u32;
    let mut tele_fps = 0u32;
    let mut frame_tick = tokio::time::interval(period(1));
    let mut tele_tick = tokio::time::interval(period(1));
    for t in [&mut frame_tick, &mut tele_tick] {
        t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    }

    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        if !send_json(&mut socket, &ServerMessage::error("binary messages are not accepted")).await {
                            break;
                        }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match parse_client(text.as_str()) {
                    Err(msg) => ServerMessage::error(msg),
                    Ok(ClientMessage::Subscribe { stream, fps }) => {
                        let mut demand = shared.demand.lock().unwrap();
                        let (map, local, tick) = match stream {
                            Stream::Frame => (&mut demand.frame, &mut frame_fps, &mut frame_tick),
                            Stream::Telemetry => (&mut demand.telemetry, &mut tele_fps, &mut tele_tick),
                        };
                        *local = fps.min(120);
                        if *local == 0 {
                            map.remove(&id);
                        } else {
                            map.insert(id, *local);
                            *tick = tokio::time::interval(period(*local));
                            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
                        }
                        ServerMessage::Ack
                    }
                    Ok(msg) => shared.request(|tx| EngineCommand::Control(msg, tx)).await,
                };
                if !send_json(&mut socket, &reply).await {
                    break;
                }
            }
            _ = frame_tick.tick(), if frame_fps > 0 => {
                if frames.has_changed().unwrap_or(false) {
                    let frame = frames.borrow_and_update().clone();
                    if let Some(bytes) = frame {
                        if socket.send(Message::Binary(bytes)).await.is_err() {
                            break;
                        }
                    }
                }
            }
            _ = tele_tick.tick(), if tele_fps > 0 => {
                let latest = shared.telemetry.borrow().clone();
                if let Some(t) = latest {
                    if !send_json(&mut socket, &ServerMessage::Telemetry(t)).await {
                        break;
                    }
                }
            }
        }
    }
    let mut demand = shared.demand.lock().unwrap();
    demand.frame.remove(&id);
    demand.telemetry.remove(&id);
}

struct Engine {
    state: SimState,
    display: DisplayNorm,
    msc_channel: String,
    snapshot_dir: PathBuf,
    paused: bool,
    /// Steps still owed to `step` commands while paused.
    pending: u64,
    /// Completion times of steps within the last second.
    recent: VecDeque<Instant>,
    frames: watch::Sender<Option<Bytes>>,
    telemetry: watch::Sender<Option<Telemetry>>,
    demand: Arc<Mutex<Demand>>,
    last_frame: Option<Instant>,
    last_frame_step: Option<u64>,
    last_telemetry: Option<Instant>,
}

const IDLE_WAIT: Duration = Duration::from_millis(10);

impl Engine {
    fn run(mut self, commands: mpsc::Receiver<EngineCommand>) -> SimState {
        loop {
            loop {
                match commands.try_recv() {
                    Ok(EngineCommand::Shutdown) | Err(TryRecvError::Disconnected) => return self.state,
                    Ok(cmd) => self.handle(cmd),
                    Err(TryRecvError::Empty) => break,
                }
            }
            if !self.paused || self.pending > 0 {
                match self.state.step() {
                    Ok(_) => {
                        if self.paused {
                            self.pending -= 1;
                        }
                        let now = Instant::now();
                        self.recent.push_back(now);
                    }
                    Err(e) => {
                        eprintln!("simulation halted: {e}");
                        self.paused = true;
                        self.pending = 0;
                    }
                }
            } else {
                match commands.recv_timeout(IDLE_WAIT) {
                    Ok(EngineCommand::Shutdown) | Err(RecvTimeoutError::Disconnected) => return self.state,
                    Ok(cmd) => self.handle(cmd),
                    Err(RecvTimeoutError::Timeout) => {}
                }
            }
            self.publish();
        }
    }

    fn handle(&mut self, cmd: EngineCommand) {
        match cmd {
            EngineCommand::Hello(reply) => {
                let _ = reply.send(ServerMessage::Hello {
                    width: self.state.substrate.width(),
                    height: self.state.substrate.height(),
                    step: self.state.step_counter(),
                    paused: self.paused,
                });
            }
            EngineCommand::Control(msg, reply) => {
                let _ = reply.send(self.apply(msg));
            }
            EngineCommand::Shutdown => {}
        }
    }

    fn apply(&mut self, msg: ClientMessage) -> ServerMessage {
        match msg {
            ClientMessage::Pause => {
                self.paused = true;
                self.pending = 0;
            }
            ClientMessage::Resume => {
                self.paused = false;
                self.pending = 0;
            }
            ClientMessage::Step { n } => {
                if !self.paused {
                    return ServerMessage::error("pause the simulation before stepping");
                }
                self.pending = self.pending.saturating_add(n);
            }
            ClientMessage::SetParam { path, value } => {
                let result = match path.as_str() {
                    "display.energy" | "display.infrastructure" => {
                        if !(value > 0.0) || !value.is_finite() {
                            Err(format!("{path} must be > 0"))
                        } else {
                            if path == "display.energy" {
                                self.display.energy = value as f32;
                            } else {
                                self.display.infrastructure = value as f32;
                            }
                            Ok(())
                        }
                    }
                    _ => set_param(&mut self.state, &path, value).map_err(|e| e.to_string()),
                };
                if let Err(msg) = result {
                    return ServerMessage::error(msg);
                }
            }
            ClientMessage::Brush { tool, x, y, radius, amount } => {
                let (w, h) = (self.state.substrate.width(), self.state.substrate.height());
                if x >= w || y >= h {
                    return ServerMessage::error(format!("brush center ({x}, {y}) is outside the {w}x{h} grid"));
                }
                let radius = radius.min(w.max(h));
                if let Err(e) = self.state.apply_brush(&Brush { tool, x, y, radius, amount }) {
                    return ServerMessage::error(e.to_string());
                }
                // Interventions show up in telemetry without waiting for a tick.
                self.last_telemetry = None;
            }
            ClientMessage::Snapshot => {
                let path = self
                    .snapshot_dir
                    .join(format!("snapshot-{:08}.crls", self.state.step_counter()));
                return match save_snapshot(&self.state, &path) {
                    Ok(()) => ServerMessage::SnapshotSaved { path: path.display().to_string() },
                    Err(e) => ServerMessage::error(format!("{}: {e}", path.display())),
                };
            }
            ClientMessage::GetParams => {
                let mut values: BTreeMap<String, f64> =
                    reef_core::config::param_values(&self.state).into_iter().collect();
                values.insert("display.energy".into(), self.display.energy as f64);
                values.insert("display.infrastructure".into(), self.display.infrastructure as f64);
                return ServerMessage::Params { values };
            }
            ClientMessage::Subscribe { .. } => {}
        }
        ServerMessage::Ack
    }

    fn publish(&mut self) {
        let now = Instant::now();
        while self.recent.front().is_some_and(|t| now - *t > Duration::from_secs(1)) {
            self.recent.pop_front();
        }
        let (frame_fps, tele_fps) = {
            let d = self.demand.lock().unwrap();
            (Demand::max(&d.frame), Demand::max(&d.telemetry))
        };
        let step = self.state.step_counter();
        let due = |last: Option<Instant>, fps: u32| fps > 0 && last.is_none_or(|t| now - t >= period(fps));
        if due(self.last_frame, frame_fps) && self.last_frame_step != Some(step) {
            let frame = self.state.substrate.render_rgb(&self.display);
            self.frames.send_replace(Some(Bytes::from(encode_frame(step, &frame))));
            self.last_frame = Some(now);
            self.last_frame_step = Some(step);
        }
        if due(self.last_telemetry, tele_fps) {
            self.telemetry.send_replace(Some(self.sample(self.recent.len() as f64)));
            self.last_telemetry = Some(now);
        }
    }

    fn sample(&self, fps: f64) -> Telemetry {
        let s = &self.state;
        let total = |name: &str| {
            s.substrate
                .plane(name, 0)
                .map(|p| p.iter().map(|&v| v as f64).sum())
                .unwrap_or(0.0)
        };
        let r = &s.evolution;
        let div = diversity(&s.pool, r.c1, r.c2, r.c3);
        let msc = msc_of_channel(&s.substrate, &self.msc_channel, 0).map(|m| m.total).unwrap_or(0.0);
        Telemetry {
            step: s.step_counter(),
            fps,
            live_genomes: div.live_genomes,
            total_energy: total(ENERGY),
            total_infrastructure: total(INFRASTRUCTURE),
            msc,
            mean_distance: div.mean_distance,
        }
    }
}
