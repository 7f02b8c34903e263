//! HTTP slice server.
//!
//! `GET /info`, `GET /slice?…` and, with a ground-truth volume, `GET /gt_slice?…`.
//! The checkpoint loads on a background thread; requests arriving before it
//! is ready get 503.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};

use anyhow::Context;
use serde_json::json;
use slicesplat::data::{load_volume, sample_slice, Volume};
use slicesplat::trainer::{load_checkpoint, Checkpoint};
use slicesplat::SliceImage;
use tiny_http::{Header, Method, Response, Server};

use crate::args::{PoseArgs, ServeArgs};
use crate::commands::{pose_from_args, render_view, view_spec};
use crate::image::{encode_f32, encode_pgm};

pub struct Scene {
    pub checkpoint: Checkpoint,
    pub volume: Option<Volume>,
}

pub enum LoadState {
    Loading,
    Ready(Arc<Scene>),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
    /// Extra headers, e.g. image dimensions for raw payloads.
    pub headers: Vec<(&'static str, String)>,
}

impl Reply {
    fn json(status: u16, value: serde_json::Value) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: value.to_string().into_bytes(),
            headers: Vec::new(),
        }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Self::json(status, json!({ "error": msg.into() }))
    }
}

fn percent_decode(s: &str) -> Result<String, String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => out.push(b' '),
            b'%' => {
                let hex = bytes.get(i + 1..i + 3).ok_or("truncated percent escape")?;
                let v = u8::from_str_radix(std::str::from_utf8(hex).map_err(|e| e.to_string())?, 16)
                    .map_err(|_| "bad percent escape".to_string())?;
                out.push(v);
                i += 2;
            }
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8(out).map_err(|_| "query is not UTF-8".to_string())
}

fn parse_query(q: &str) -> Result<HashMap<String, String>, String> {
    let mut map = HashMap::new();
    for part in q.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').unwrap_or((part, ""));
        let (k, v) = (percent_decode(k)?, percent_decode(v)?);
        if map.insert(k.clone(), v).is_some() {
            return Err(format!("parameter '{k}' given twice"));
        }
    }
    Ok(map)
}

const SLICE_KEYS: [&str; 11] = ["rx", "ry", "rz", "tx", "ty", "tz", "matrix", "w", "h", "spacing", "fmt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Pgm,
    F32,
}

fn num<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, String> {
    q.get(key)
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("parameter '{key}' has invalid value '{v}'")))
        .transpose()
}

struct SliceRequest {
    pose: PoseArgs,
    w: Option<usize>,
    h: Option<usize>,
    spacing: Option<f64>,
    fmt: Format,
}

fn parse_slice_request(query: &str) -> Result<SliceRequest, String> {
    let q = parse_query(query)?;
    if let Some(k) = q.keys().find(|k| !SLICE_KEYS.contains(&k.as_str())) {
        return Err(format!("unknown parameter '{k}'"));
    }
    let angle = |k: &str| num::<f64>(&q, k).map(|v| v.unwrap_or(0.0));
    let pose = PoseArgs {
        rx: angle("rx")?,
        ry: angle("ry")?,
        rz: angle("rz")?,
        tx: angle("tx")?,
        ty: angle("ty")?,
        tz: angle("tz")?,
        matrix: q.get("matrix").cloned(),
    };
    let fmt = match q.get("fmt").map(String::as_str) {
        None | Some("pgm") => Format::Pgm,
        Some("f32") => Format::F32,
        Some(other) => return Err(format!("unknown fmt '{other}' (pgm or f32)")),
    };
    Ok(SliceRequest {
        pose,
        w: num(&q, "w")?,
        h: num(&q, "h")?,
        spacing: num(&q, "spacing")?,
        fmt,
    })
}

fn image_reply(img: &SliceImage, fmt: Format) -> Reply {
    let (content_type, body) = match fmt {
        Format::Pgm => ("image/x-portable-graymap", encode_pgm(img)),
        Format::F32 => ("application/octet-stream", encode_f32(img)),
    };
    Reply {
        status: 200,
        content_type,
        body,
        headers: vec![("X-Slice-Width", img.width.to_string()), ("X-Slice-Height", img.height.to_string())],
    }
}

fn info(scene: &Scene) -> Reply {
    let m = &scene.checkpoint.meta;
    Reply::json(
        200,
        json!({
            "n_gaussians": scene.checkpoint.cloud.len(),
            "world_bounds_mm": m.world_bounds_mm,
            "default_spec": m.default_view,
            "ground_truth": scene.volume.is_some(),
        }),
    )
}

fn slice(scene: &Scene, query: &str, ground_truth: bool) -> Reply {
    let req = match parse_slice_request(query) {
        Ok(r) => r,
        Err(e) => return Reply::error(400, e),
    };
    let spec = match pose_from_args(&req.pose).and_then(|p| view_spec(&scene.checkpoint, p, req.w, req.h, req.spacing)) {
        Ok(s) => s,
        Err(e) => return Reply::error(400, format!("{e:#}")),
    };
    if ground_truth {
        return match &scene.volume {
            Some(vol) => image_reply(&sample_slice(vol, &spec), req.fmt),
            None => Reply::error(404, "no ground-truth volume loaded"),
        };
    }
    match render_view(&scene.checkpoint, &spec) {
        Ok(img) => image_reply(&img, req.fmt),
        Err(e) => Reply::error(500, format!("{e:#}")),
    }
}

/// Routes one request target (`/path?query`).
pub fn respond(target: &str, state: &LoadState) -> Reply {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    if !matches!(path, "/info" | "/slice" | "/gt_slice") {
        return Reply::error(404, format!("no such endpoint '{path}'"));
    }
    let scene = match state {
        LoadState::Loading => return Reply::error(503, "checkpoint is still loading"),
        LoadState::Failed(e) => return Reply::error(500, format!("checkpoint failed to load: {e}")),
        LoadState::Ready(s) => s,
    };
    match path {
        "/info" => info(scene),
        "/slice" => slice(scene, query, false),
        _ => slice(scene, query, true),
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub checkpoint: PathBuf,
    pub volume: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub threads: usize,
}

pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    state: Arc<RwLock<LoadState>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_ready(&self) -> bool {
        matches!(*self.state.read().unwrap(), LoadState::Ready(_))
    }

    /// Blocks until every worker exits.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        self.join();
    }
}

fn load_scene(cfg: &ServerConfig) -> anyhow::Result<Scene> {
    let checkpoint = load_checkpoint(&cfg.checkpoint).with_context(|| format!("loading {}", cfg.checkpoint.display()))?;
    let volume = cfg
        .volume
        .as_ref()
        .map(|v| load_volume(v).with_context(|| format!("loading volume {}", v.display())))
        .transpose()?;
    Ok(Scene { checkpoint, volume })
}

fn to_response(reply: Reply) -> Response<std::io::Cursor<Vec<u8>>> {
    let mut resp = Response::from_data(reply.body).with_status_code(reply.status);
    let mut add = |k: &str, v: &str| {
        resp.add_header(Header::from_bytes(k.as_bytes(), v.as_bytes()).expect("static header is valid"));
    };
    add("Content-Type", reply.content_type);
    add("Access-Control-Allow-Origin", "*");
    add("Access-Control-Expose-Headers", "X-Slice-Width, X-Slice-Height");
    for (k, v) in &reply.headers {
        add(k, v);
    }
    resp
}

/// Binds the socket, starts loading the checkpoint and spawns the workers.
pub fn start(cfg: ServerConfig) -> anyhow::Result<ServerHandle> {
    let server = Arc::new(
        Server::http((cfg.host.as_str(), cfg.port)).map_err(|e| anyhow::anyhow!("binding {}:{}: {e}", cfg.host, cfg.port))?,
    );
    let addr = server
        .server_addr()
        .to_ip()
        .context("server is not bound to an IP address")?;
    let state = Arc::new(RwLock::new(LoadState::Loading));
    {
        let state = Arc::clone(&state);
        let cfg = cfg.clone();
        thread::spawn(move || {
            let next = match load_scene(&cfg) {
                Ok(scene) => LoadState::Ready(Arc::new(scene)),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    LoadState::Failed(format!("{e:#}"))
                }
            };
            *state.write().unwrap() = next;
        });
    }
    let workers = (0..cfg.threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    let reply = if *request.method() == Method::Get {
                        let guard = state.read().unwrap();
                        respond(request.url(), &guard)
                    } else {
                        Reply::error(405, "only GET is supported")
                    };
                    let _ = request.respond(to_response(reply));
                }
            })
        })
        .collect();
    Ok(ServerHandle { addr, server, workers, state })
}

pub fn cmd_serve(a: &ServeArgs) -> anyhow::Result<()> {
    let handle = start(ServerConfig {
        checkpoint: a.checkpoint.clone(),
        volume: a.volume.clone(),
        host: a.host.clone(),
        port: a.port,
        threads: a.threads,
    })?;
    eprintln!("listening on http://{}", handle.addr());
    handle.join();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_parsing() {
        let q = parse_query("rx=10&tz=-2.5&fmt=f32&matrix=1%2C0").unwrap();
        assert_eq!(q["rx"], "10");
        assert_eq!(q["tz"], "-2.5");
        assert_eq!(q["matrix"], "1,0");
        assert!(parse_query("rx=1&rx=2").is_err());
        assert!(parse_query("a=%G1").is_err());
    }

    #[test]
    fn slice_request_validation() {
        assert!(parse_slice_request("rx=abc").is_err());
        assert!(parse_slice_request("bogus=1").is_err());
        assert!(parse_slice_request("fmt=png").is_err());
        let r = parse_slice_request("rx=5&w=32&fmt=f32").unwrap();
        assert_eq!((r.pose.rx, r.w, r.fmt), (5.0, Some(32), Format::F32));
    }

    #[test]
    fn loading_and_unknown_paths() {
        assert_eq!(respond("/info", &LoadState::Loading).status, 503);
        assert_eq!(respond("/nope", &LoadState::Loading).status, 404);
        assert_eq!(respond("/slice", &LoadState::Failed("x".into())).status, 500);
    }
}
