//! An in-process echo bridge: the oracle in f32 behind the HTTP protocol.

mod common;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::*;
use mirage_core::bridge::{
    run_conformance, BridgeBackend, DecodeResponse, EncodeRequest, LatentResponse, LatentWire, SegmentRequest,
    SegmentResponse, VelocityRequest, VelocityResponse,
};
use mirage_core::imageio::{image_from_base64, mask_to_png_bytes, png_base64};
use mirage_core::oracle::{Codec, OracleBackend};
use mirage_core::{
    BackendDescriptor, Condition, CoreError, DenoiserBackend, EditSession, Grid, Image, PixelMask, SessionConfig,
    Strategy,
};
use serde_json::json;

struct Reply(u16, String);

fn bad(msg: impl ToString) -> Reply {
    Reply(400, json!({ "error": msg.to_string() }).to_string())
}

fn ok<T: serde::Serialize>(v: &T) -> Reply {
    Reply(200, serde_json::to_string(v).unwrap())
}

fn handle(oracle: &OracleBackend, path: &str, body: &str) -> Reply {
    let descriptor = BackendDescriptor {
        name: "echo-stub".into(),
        vae_factor: 1,
        patch: 1,
        schedule: Default::default(),
        supports_variable_size: true,
        canvas: None,
        dtype: "f32".into(),
        roundtrip_tolerance: 0.0,
    };
    match path {
        "/descriptor" => ok(&descriptor),
        "/encode" => {
            let Ok(req) = serde_json::from_str::<EncodeRequest>(body) else { return bad("malformed body") };
            let img: Image<f32> = match image_from_base64(&req.image) {
                Ok(i) => i,
                Err(e) => return bad(e),
            };
            let z = DenoiserBackend::<f32>::encode(oracle, &img).unwrap();
            ok(&LatentResponse { latent: LatentWire::from_grid(&z) })
        }
        "/decode" => {
            let Ok(req) = serde_json::from_str::<LatentResponse>(body) else { return bad("malformed body") };
            let z: Grid<f32> = match req.latent.to_grid() {
                Ok(z) => z,
                Err(e) => return bad(e),
            };
            let img = DenoiserBackend::<f32>::decode(oracle, &z).unwrap();
            ok(&DecodeResponse { image: png_base64(&img).unwrap() })
        }
        "/velocity" => {
            let Ok(req) = serde_json::from_str::<VelocityRequest>(body) else { return bad("malformed body") };
            let z: Grid<f32> = match req.latent.to_grid() {
                Ok(z) => z,
                Err(e) => return bad(e),
            };
            let img: Image<f32> = match image_from_base64(&req.image) {
                Ok(i) => i,
                Err(e) => return bad(e),
            };
            if z.shape().height != img.height() as usize || z.shape().width != img.width() as usize {
                return bad("latent does not match image");
            }
            let noise: Option<Grid<f32>> = req.noise.and_then(|n| n.to_grid().ok());
            let Ok(cond) = Condition::new(img, req.instruction) else { return bad("empty instruction") };
            match oracle.predict_velocity(&z, req.s, &cond, noise.as_ref()) {
                Ok(v) => ok(&VelocityResponse { velocity: LatentWire::from_grid(&v) }),
                Err(e) => Reply(422, json!({ "error": e.to_string() }).to_string()),
            }
        }
        "/segment" => {
            let Ok(req) = serde_json::from_str::<SegmentRequest>(body) else { return bad("malformed body") };
            let img: Image<f32> = match image_from_base64(&req.image) {
                Ok(i) => i,
                Err(e) => return bad(e),
            };
            let masks = req
                .boxes
                .iter()
                .map(|b| {
                    let m = PixelMask::from_box(img.width(), img.height(), b).unwrap();
                    base64_encode(&mask_to_png_bytes(&m).unwrap())
                })
                .collect();
            ok(&SegmentResponse { masks })
        }
        _ => Reply(404, "{}".into()),
    }
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Starts the stub on an ephemeral port and returns its base URL.
fn spawn_stub() -> String {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let addr = server.server_addr().to_ip().unwrap();
    let oracle = OracleBackend::new(Codec::Identity, 1);
    for _ in 0..4 {
        let server = Arc::clone(&server);
        let oracle = oracle.clone();
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let Reply(status, text) = handle(&oracle, req.url(), &body);
                let resp = tiny_http::Response::from_string(text).with_status_code(status).with_header(
                    "Content-Type: application/json".parse::<tiny_http::Header>().unwrap(),
                );
                let _ = req.respond(resp);
            }
        });
    }
    format!("http://{addr}")
}

fn connect() -> BridgeBackend {
    BridgeBackend::connect(&spawn_stub(), None, Duration::from_secs(10)).unwrap()
}

#[test]
fn echo_stub_passes_conformance() {
    let bridge = connect();
    let checks = run_conformance(&bridge);
    assert!(checks.len() >= 6);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    let d: BackendDescriptor = DenoiserBackend::<f64>::descriptor(&bridge);
    assert_eq!((d.vae_factor, d.patch, d.supports_variable_size), (1, 1, true));
}

#[test]
fn status_codes_surface_as_bridge_status() {
    let bridge = connect();
    let (img, _) = three_squares();
    let wrong = Grid::<f64>::zeros(mirage_core::Shape::new(3, 2, 2).unwrap());
    let c = Condition::new(img, "noop").unwrap();
    let err = DenoiserBackend::<f64>::predict_velocity(&bridge, &wrong, 0.5, &c, None).unwrap_err();
    assert!(matches!(err, CoreError::BridgeStatus { status: 400, .. }), "{err:?}");
}

#[test]
fn segment_returns_box_masks() {
    let bridge = connect();
    let (img, boxes) = three_squares();
    let masks = bridge.segment(&img, &boxes[..2]).unwrap();
    assert_eq!(masks.len(), 2);
    assert_eq!(masks[0], PixelMask::from_box(64, 64, &boxes[0]).unwrap());
    assert!(bridge.segment(&img, &[]).unwrap().is_empty());
}

#[test]
fn synthetic_edit_through_bridge() {
    let bridge = connect();
    let (img, boxes) = three_squares();
    let regions = vec![
        region(&img, &boxes[0], "set_color to (1,0,0)", 1),
        region(&img, &boxes[2], "set_color to (0,0,1)", 1),
    ];
    let config = SessionConfig {
        steps: 50,
        rho: 0.6,
        strategy: Strategy::Both,
        seed: 7,
        trace: false,
    };
    let mut s = EditSession::new(
        img.clone(),
        "set_color the leftmost square to (1,0,0); set_color the rightmost square to (0,0,1)",
        regions,
        &config,
        &bridge,
    )
    .unwrap();
    let (out, report) = s.run().unwrap();
    assert_eq!(report.backend, "echo-stub");
    let mut bg: f64 = 0.0;
    for y in 0..64 {
        for x in 0..64 {
            if !inside_any(&[boxes[0], boxes[2]], x, y) {
                for c in 0..3 {
                    bg = bg.max((out.pixel(x, y)[c] - img.pixel(x, y)[c]).abs());
                }
            }
        }
    }
    assert!(bg <= 1e-6, "background drift {bg}");
    // Region colors come back through 8-bit PNG.
    assert!(max_region_error(&out, &boxes[0], [1.0, 0.0, 0.0]) <= 0.5 / 255.0);
    assert!(max_region_error(&out, &boxes[2], [0.0, 0.0, 1.0]) <= 0.5 / 255.0);
}
