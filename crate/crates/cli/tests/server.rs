//! HTTP server against real sockets.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use slicesplat::data::{make_axial_stack, make_phantom, save_volume, PhantomKind};
use slicesplat::trainer::checkpoint::encode_checkpoint;
use slicesplat::trainer::{save_checkpoint, train, Checkpoint, TrainConfig, TrainContext, ViewDefaults};
use slicesplat::Volume;
use slicesplat_cli::args::{PoseArgs, RenderArgs};
use slicesplat_cli::commands::cmd_render;
use slicesplat_cli::server::{start, ServerConfig, ServerHandle};
use tempfile::TempDir;

fn checkpoint_for(vol: &Volume, iterations: usize) -> Checkpoint {
    let ds = make_axial_stack(vol, 2, 0.0, 0).unwrap();
    let config = TrainConfig {
        n_gaussians: 300,
        iterations,
        ..TrainConfig::default()
    };
    let ctx = TrainContext {
        bounds: Some(vol.world_bounds()),
        ..Default::default()
    };
    let out = train(&ds, &config, &ctx, |_| {}).unwrap();
    out.checkpoint(
        &config,
        ViewDefaults {
            width: vol.width(),
            height: vol.height(),
            spacing: vol.spacing,
        },
    )
}

fn serve(ckpt: &Path, volume: Option<&Path>) -> ServerHandle {
    start(ServerConfig {
        checkpoint: ckpt.to_path_buf(),
        volume: volume.map(Path::to_path_buf),
        host: "127.0.0.1".into(),
        port: 0,
        threads: 4,
    })
    .unwrap()
}

fn wait_ready(h: &ServerHandle) {
    let deadline = Instant::now() + Duration::from_secs(60);
    while !h.is_ready() {
        assert!(Instant::now() < deadline, "server never became ready");
        thread::sleep(Duration::from_millis(10));
    }
}

/// Status, headers and body; non-2xx statuses are not errors here.
fn get(url: &str) -> (u16, Option<String>, Vec<u8>) {
    let resp = match ureq::get(url).timeout(Duration::from_secs(60)).call() {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{url}: {e}"),
    };
    let status = resp.status();
    let width = resp.header("X-Slice-Width").map(str::to_string);
    let mut body = Vec::new();
    resp.into_reader().read_to_end(&mut body).unwrap();
    (status, width, body)
}

fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

#[test]
fn info_reports_clinical_scale_bounds() {
    let dir = TempDir::new().unwrap();
    let vol = make_phantom(PhantomKind::Shells, [160; 3], 0.6, 1).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&checkpoint_for(&vol, 1), &path).unwrap();
    let h = serve(&path, None);
    wait_ready(&h);
    let (status, _, body) = get(&format!("http://{}/info", h.addr()));
    assert_eq!(status, 200);
    let info = json(&body);
    for k in 0..3 {
        assert!((info["world_bounds_mm"][0][k].as_f64().unwrap() + 48.0).abs() < 1e-9);
        assert!((info["world_bounds_mm"][1][k].as_f64().unwrap() - 48.0).abs() < 1e-9);
    }
    assert_eq!(info["default_spec"]["width"], 160);
    assert_eq!(info["ground_truth"], false);
    h.shutdown();
}

#[test]
fn slices_match_cli_render_and_errors_are_json() {
    let dir = TempDir::new().unwrap();
    let vol = make_phantom(PhantomKind::Blobs, [24; 3], 0.6, 4).unwrap();
    let (ckpt_path, vol_path) = (dir.path().join("m.ckpt"), dir.path().join("vol"));
    save_checkpoint(&checkpoint_for(&vol, 40), &ckpt_path).unwrap();
    save_volume(&vol, &vol_path).unwrap();
    let h = serve(&ckpt_path, Some(&vol_path));
    wait_ready(&h);
    let base = format!("http://{}", h.addr());

    let (status, width, served) = get(&format!("{base}/slice?fmt=f32"));
    assert_eq!((status, width.as_deref()), (200, Some("24")));
    let raw = dir.path().join("id.f32");
    cmd_render(&RenderArgs {
        checkpoint: ckpt_path.clone(),
        pose: PoseArgs::default(),
        width: None,
        height: None,
        spacing: None,
        output: dir.path().join("id.pgm"),
        raw: Some(raw.clone()),
    })
    .unwrap();
    assert_eq!(fs::read(&raw).unwrap(), served);
    let (_, _, pgm) = get(&format!("{base}/slice"));
    assert_eq!(fs::read(dir.path().join("id.pgm")).unwrap(), pgm);

    let (status, _, gt) = get(&format!("{base}/gt_slice?rx=10&tz=-1.5&w=16&h=8&fmt=f32"));
    assert_eq!((status, gt.len()), (200, 16 * 8 * 4));

    for (query, code) in [
        ("/slice?rx=abc", 400),
        ("/slice?bogus=1", 400),
        ("/slice?rx=1&rx=2", 400),
        ("/slice?fmt=png", 400),
        ("/slice?w=100000", 400),
        ("/slice?matrix=1,2,3", 400),
        ("/volume", 404),
    ] {
        let (status, _, body) = get(&format!("{base}{query}"));
        assert_eq!(status, code, "{query}");
        assert!(json(&body)["error"].is_string(), "{query}");
    }
    let resp = ureq::post(&format!("{base}/slice")).call();
    assert!(matches!(resp, Err(ureq::Error::Status(405, _))));
    h.shutdown();
}

#[test]
fn concurrent_identical_requests_get_identical_bodies() {
    let dir = TempDir::new().unwrap();
    let vol = make_phantom(PhantomKind::Blobs, [24; 3], 0.6, 5).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&checkpoint_for(&vol, 40), &path).unwrap();
    let h = serve(&path, None);
    wait_ready(&h);
    let url = format!("http://{}/slice?rx=15&ry=-30&rz=45&tx=0.5&fmt=f32&w=48&h=40", h.addr());
    let bodies: Vec<Vec<u8>> = thread::scope(|s| {
        let handles: Vec<_> = (0..16).map(|_| s.spawn(|| get(&url).2)).collect();
        handles.into_iter().map(|t| t.join().unwrap()).collect()
    });
    assert_eq!(bodies[0].len(), 48 * 40 * 4);
    assert!(bodies.iter().all(|b| *b == bodies[0]));

    let (status, _, _) = get(&format!("http://{}/gt_slice", h.addr()));
    assert_eq!(status, 404);
    h.shutdown();
}

#[test]
fn requests_before_load_completes_get_503() {
    let dir = TempDir::new().unwrap();
    let fifo = dir.path().join("pending.ckpt");
    assert!(Command::new("mkfifo").arg(&fifo).status().unwrap().success());
    // loading blocks on opening the FIFO until a writer appears
    let h = serve(&fifo, None);
    let base = format!("http://{}", h.addr());
    let (status, _, body) = get(&format!("{base}/info"));
    assert_eq!(status, 503);
    assert!(json(&body)["error"].as_str().unwrap().contains("loading"));
    assert_eq!(get(&format!("{base}/slice")).0, 503);

    let vol = make_phantom(PhantomKind::Blobs, [16; 3], 0.6, 6).unwrap();
    let bytes = encode_checkpoint(&checkpoint_for(&vol, 5)).unwrap();
    fs::OpenOptions::new().write(true).open(&fifo).unwrap().write_all(&bytes).unwrap();
    wait_ready(&h);
    assert_eq!(get(&format!("{base}/info")).0, 200);
    h.shutdown();
}
