//! Interactive simulation service.
//!
//! A dedicated thread owns the [`Simulator`]. Between frames it drains the
//! command queue in arrival order, advances the simulation and publishes the
//! newest rendered frame. Network handlers only read the published frame and
//! enqueue commands, so a slow client never stalls the simulation.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use log::{info, warn};
use sandsim_core::{Image, Painting, RegionPlan, ScriptEvent};
use sandsim_physics::Simulator;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

use crate::commands::{script_for, simulator_for};
use crate::protocol::{encode_frame, Command, ErrorMessage, Limits};
use crate::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub step: u64,
    pub time: f64,
    pub particle_count: usize,
    pub initial_particle_count: usize,
    pub pending_events: usize,
    pub paused: bool,
    pub width: usize,
    pub height: usize,
    /// Number of frames published so far.
    pub frame: u64,
}

struct Published {
    image: Image,
    frame: Bytes,
    summary: StateSummary,
}

struct Request {
    command: Command,
    reply: oneshot::Sender<Result<serde_json::Value, String>>,
}

#[derive(Clone)]
struct App {
    commands: mpsc::Sender<Request>,
    latest: watch::Receiver<Arc<Published>>,
    limits: Limits,
    push_period: Duration,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    server: JoinHandle<()>,
    sim: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops accepting connections and joins the simulation thread.
    pub async fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.abort();
        let _ = (&mut self.server).await;
        if let Some(t) = self.sim.take() {
            let _ = tokio::task::spawn_blocking(move || t.join()).await;
        }
    }
}

struct SimLoop {
    sim: Simulator,
    events: Vec<ScriptEvent>,
    paused: bool,
    steps_per_frame: usize,
    period: Duration,
    frames: u64,
}

impl SimLoop {
    fn apply(&mut self, command: &Command) -> Result<serde_json::Value, String> {
        let err = |e: sandsim_physics::PhysicsError| e.to_string();
        Ok(match command {
            Command::Smear { .. } => {
                let touched = self.sim.smear_canvas(&command.smear().expect("smear command")).map_err(err)?;
                json!({ "touched": touched })
            }
            Command::DepositStroke { stroke_id, stroke } => {
                let s = match (stroke_id, stroke) {
                    (Some(id), _) => self
                        .sim
                        .painting()
                        .stroke(*id)
                        .cloned()
                        .ok_or_else(|| format!("unknown stroke {id}"))?,
                    (None, Some(s)) => s.clone(),
                    (None, None) => return Err("nothing to deposit".into()),
                };
                json!({ "deposited": self.sim.deposit_stroke(&s).map_err(err)? })
            }
            Command::Pause => {
                self.paused = true;
                json!({})
            }
            Command::Resume => {
                self.paused = false;
                json!({})
            }
            Command::Reset => {
                self.sim.reset();
                json!({ "particle_count": self.sim.particle_count() })
            }
            Command::SetParam { key, value } => {
                self.sim.set_param(key, *value).map_err(err)?;
                json!({ "key": key, "value": value })
            }
            Command::PlayScript { start, end } => {
                let slice = self.events.get(*start..*end).ok_or("script range out of bounds")?;
                self.sim.queue_events(slice.iter().copied());
                json!({ "queued": end - start })
            }
        })
    }

    fn publish(&mut self, tx: &watch::Sender<Arc<Published>>) {
        self.frames += 1;
        let image = self.sim.render();
        let frame = Bytes::from(encode_frame(&image));
        let p = self.sim.painting();
        let summary = StateSummary {
            step: self.sim.state.steps,
            time: self.sim.state.time,
            particle_count: self.sim.particle_count(),
            initial_particle_count: self.sim.initial_particle_count(),
            pending_events: self.sim.pending_events(),
            paused: self.paused,
            width: p.width,
            height: p.height,
            frame: self.frames,
        };
        tx.send_replace(Arc::new(Published { image, frame, summary }));
    }

    fn run(mut self, rx: mpsc::Receiver<Request>, tx: watch::Sender<Arc<Published>>, stop: Arc<AtomicBool>) {
        while !stop.load(Ordering::SeqCst) {
            let started = Instant::now();
            loop {
                match rx.try_recv() {
                    Ok(req) => {
                        let outcome = self.apply(&req.command);
                        let _ = req.reply.send(outcome);
                    }
                    Err(mpsc::TryRecvError::Empty) => break,
                    Err(mpsc::TryRecvError::Disconnected) => return,
                }
            }
            if !self.paused {
                for _ in 0..self.steps_per_frame {
                    match self.sim.step() {
                        Ok(r) if r.escaped > 0 => warn!("{} particles escaped the domain", r.escaped),
                        Ok(_) => {}
                        Err(e) => warn!("simulation step failed: {e}"),
                    }
                }
            }
            self.publish(&tx);
            if let Some(rest) = self.period.checked_sub(started.elapsed()) {
                thread::sleep(rest);
            }
        }
    }
}

/// Binds `addr` and starts serving `painting`, which must already be
/// classified against `plan`.
pub async fn start(
    painting: &Painting,
    plan: &RegionPlan,
    progressive: bool,
    settings: &Settings,
    addr: SocketAddr,
) -> Result<ServerHandle> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    let addr = listener.local_addr()?;
    let serve_cfg = settings.serve;
    let period = Duration::from_secs_f64(1.0 / serve_cfg.frame_rate);
    let events = script_for(painting, plan, serve_cfg.frame_rate.round().max(1.0) as u32, serve_cfg.kernels_per_frame)?.events;
    let sim = simulator_for(painting, plan, progressive, settings)?;
    let mut sim_loop = SimLoop {
        sim,
        events,
        paused: false,
        steps_per_frame: serve_cfg.steps_per_frame,
        period,
        frames: 0,
    };
    let limits = Limits {
        width: painting.width,
        height: painting.height,
        script_events: sim_loop.events.len(),
    };

    let (frame_tx, frame_rx) = watch::channel(Arc::new(Published {
        image: Image::new(0, 0),
        frame: Bytes::new(),
        summary: StateSummary {
            step: 0,
            time: 0.0,
            particle_count: 0,
            initial_particle_count: 0,
            pending_events: 0,
            paused: false,
            width: 0,
            height: 0,
            frame: 0,
        },
    }));
    sim_loop.publish(&frame_tx);
    let (cmd_tx, cmd_rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let sim_stop = stop.clone();
    let sim = thread::Builder::new()
        .name("sandsim-sim".into())
        .spawn(move || sim_loop.run(cmd_rx, frame_tx, sim_stop))?;

    let app = App {
        commands: cmd_tx,
        latest: frame_rx,
        limits,
        push_period: period,
    };
    let router = Router::new()
        .route("/state", get(get_state))
        .route("/frame", get(get_frame))
        .route("/ws", get(ws_upgrade))
        .with_state(app);
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            warn!("server stopped: {e}");
        }
    });
    info!("serving on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        server,
        sim: Some(sim),
    })
}

async fn get_state(State(app): State<App>) -> Json<StateSummary> {
    Json(app.latest.borrow().summary)
}

async fn get_frame(State(app): State<App>) -> Response {
    let latest = app.latest.borrow().clone();
    match latest.image.png_bytes() {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(app): State<App>) -> Response {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn submit(app: &App, text: &str) -> String {
    let outcome = match Command::parse(text, &app.limits) {
        Err(e) => Err(e),
        Ok(command) => {
            let (reply, rx) = oneshot::channel();
            let name = serde_json::to_value(&command).ok().and_then(|v| v["type"].as_str().map(str::to_owned));
            if app.commands.send(Request { command, reply }).is_err() {
                Err("simulation has stopped".to_string())
            } else {
                match rx.await {
                    Ok(Ok(mut detail)) => {
                        detail["type"] = json!("ack");
                        detail["command"] = json!(name);
                        Ok(detail)
                    }
                    Ok(Err(e)) => Err(e),
                    Err(_) => Err("simulation has stopped".to_string()),
                }
            }
        }
    };
    match outcome {
        Ok(v) => v.to_string(),
        Err(message) => serde_json::to_string(&ErrorMessage { message }).expect("error serializes"),
    }
}

async fn client(mut socket: WebSocket, app: App) {
    let mut tick = tokio::time::interval(app.push_period);
    tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let latest = app.latest.clone();
    loop {
        tokio::select! {
            _ = tick.tick() => {
                let frame = latest.borrow().frame.clone();
                if socket.send(Message::Binary(frame)).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = submit(&app, text.as_str()).await;
                    if socket.send(Message::Text(reply.into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    let reply = serde_json::to_string(&ErrorMessage { message: "commands must be JSON text".into() })
                        .expect("error serializes");
                    if socket.send(Message::Text(reply.into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}
