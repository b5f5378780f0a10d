//! HTTP client for an out-of-process model bridge.
//!
//! Every body is UTF-8 JSON. Latents travel as an explicit `[C, H, W]` shape
//! plus base64 little-endian `f32` data; images as base64 PNG.

use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendDescriptor, Condition, DenoiserBackend};
use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;
use crate::imageio::{image_from_base64, mask_from_png_bytes, png_base64};
use crate::metrics::PixelMask;
use crate::scalar::Scalar;
use crate::tensor::{Grid, Image, Shape};

/// Wire form of a latent grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentWire {
    pub shape: [usize; 3],
    pub data: String,
}

impl LatentWire {
    pub fn from_grid<S: Scalar>(grid: &Grid<S>) -> Self {
        let shape = grid.shape();
        let mut bytes = Vec::with_capacity(4 * shape.len());
        for v in grid.values() {
            bytes.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        Self {
            shape: [shape.channels, shape.height, shape.width],
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn to_grid<S: Scalar>(&self) -> Result<Grid<S>> {
        let shape = Shape::new(self.shape[0], self.shape[1], self.shape[2])?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(self.data.as_bytes())
            .map_err(|e| CoreError::Codec(format!("latent payload: {e}")))?;
        if bytes.len() != 4 * shape.len() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} bytes for {shape}", 4 * shape.len()),
                actual: format!("{} bytes", bytes.len()),
            });
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Grid::new(shape, values)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LatentResponse {
    pub latent: LatentWire,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VelocityRequest {
    pub latent: LatentWire,
    pub s: f64,
    pub image: String,
    pub instruction: String,
    /// Starting noise of the branch. Bridges are free to ignore it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<LatentWire>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VelocityResponse {
    pub velocity: LatentWire,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks: Vec<String>,
}

/// A bridge reached over HTTP. The descriptor is fetched once at connect time.
#[derive(Debug, Clone)]
pub struct BridgeBackend {
    base: String,
    agent: ureq::Agent,
    token: Option<String>,
    descriptor: BackendDescriptor,
}

impl BridgeBackend {
    pub fn connect(url: &str, token: Option<String>, timeout: Duration) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut bridge = Self {
            base: url.trim_end_matches('/').to_string(),
            agent,
            token,
            descriptor: BackendDescriptor {
                name: String::new(),
                vae_factor: 1,
                patch: 1,
                schedule: Default::default(),
                supports_variable_size: true,
                canvas: None,
                dtype: String::new(),
                roundtrip_tolerance: 0.0,
            },
        };
        bridge.descriptor = bridge.fetch_descriptor()?;
        bridge.descriptor.validate()?;
        log::info!("connected to bridge {} ({})", bridge.base, bridge.descriptor.name);
        Ok(bridge)
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    pub fn fetch_descriptor(&self) -> Result<BackendDescriptor> {
        self.call("/descriptor", &json!({}))
    }

    /// Posts `body` and returns the status and raw text, whatever the status.
    pub fn post_raw(&self, path: &str, body: &Value) -> Result<(u16, String)> {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| CoreError::BridgeConnection(format!("{}{path}: {e}", self.base)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CoreError::BridgeConnection(format!("{}{path}: {e}", self.base)))?;
        Ok((status, text))
    }

    fn call<B: Serialize, T: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<T> {
        let body = serde_json::to_value(body).map_err(|e| CoreError::Codec(e.to_string()))?;
        let (status, text) = self.post_raw(path, &body)?;
        if !(200..300).contains(&status) {
            return Err(CoreError::BridgeStatus { status, body: text });
        }
        serde_json::from_str(&text)
            .map_err(|e| CoreError::Backend(format!("{path}: malformed response: {e}")))
    }

    /// One bitmap per box at image resolution.
    pub fn segment<S: Scalar>(&self, image: &Image<S>, boxes: &[BoundingBox]) -> Result<Vec<PixelMask>> {
        let resp: SegmentResponse = self.call(
            "/segment",
            &SegmentRequest {
                image: png_base64(image)?,
                boxes: boxes.to_vec(),
            },
        )?;
        if resp.masks.len() != boxes.len() {
            return Err(CoreError::Backend(format!(
                "/segment returned {} masks for {} boxes",
                resp.masks.len(),
                boxes.len()
            )));
        }
        resp.masks
            .iter()
            .map(|m| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(m.trim())
                    .map_err(|e| CoreError::Codec(e.to_string()))?;
                let mask = mask_from_png_bytes(&bytes)?;
                if mask.width() != image.width() || mask.height() != image.height() {
                    return Err(CoreError::Backend(format!(
                        "mask is {}x{}, image is {}x{}",
                        mask.width(),
                        mask.height(),
                        image.width(),
                        image.height()
                    )));
                }
                Ok(mask)
            })
            .collect()
    }
}

impl<S: Scalar> DenoiserBackend<S> for BridgeBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn encode(&self, image: &Image<S>) -> Result<Grid<S>> {
        let resp: LatentResponse = self.call(
            "/encode",
            &EncodeRequest {
                image: png_base64(image)?,
            },
        )?;
        resp.latent.to_grid()
    }

    fn decode(&self, latent: &Grid<S>) -> Result<Image<S>> {
        let resp: DecodeResponse = self.call("/decode", &json!({ "latent": LatentWire::from_grid(latent) }))?;
        image_from_base64(&resp.image)
    }

    fn predict_velocity(
        &self,
        latent: &Grid<S>,
        s: f64,
        condition: &Condition<S>,
        noise: Option<&Grid<S>>,
    ) -> Result<Grid<S>> {
        let resp: VelocityResponse = self.call(
            "/velocity",
            &VelocityRequest {
                latent: LatentWire::from_grid(latent),
                s,
                image: png_base64(&condition.image)?,
                instruction: condition.instruction.clone(),
                noise: noise.map(LatentWire::from_grid),
            },
        )?;
        let v: Grid<S> = resp.velocity.to_grid()?;
        if v.shape() != latent.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: latent.shape().to_string(),
                actual: v.shape().to_string(),
            });
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Protocol checks any bridge must pass before the engine relies on it.
pub fn run_conformance(bridge: &BridgeBackend) -> Vec<ConformanceCheck> {
    let mut out = Vec::new();
    let mut check = |name: &str, r: Result<String>| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        out.push(ConformanceCheck {
            name: name.into(),
            passed,
            detail,
        });
    };
    let d = bridge.descriptor.clone();
    let fail = |m: String| Err(CoreError::Backend(m));

    check("descriptor_stable", (|| {
        let a = bridge.fetch_descriptor()?;
        let b = bridge.fetch_descriptor()?;
        if a == b && a == d { Ok(a.name.to_string()) } else { fail("descriptor changed between calls".into()) }
    })());

    let (w, h) = match d.canvas {
        Some([w, h]) if !d.supports_variable_size => (w, h),
        _ => (4 * d.padding_multiple(), 2 * d.padding_multiple()),
    };
    let probe = Image::<f64>::from_fn(w, h, |x, y| {
        [(x % 7) as f64 / 7.0, (y % 5) as f64 / 5.0, 0.5]
    });

    check("encode_shape", (|| {
        let img = probe.clone()?;
        let z: Grid<f64> = DenoiserBackend::<f64>::encode(bridge, &img)?;
        let f = d.vae_factor as usize;
        let (hh, ww) = (h as usize / f, w as usize / f);
        if z.shape().height == hh && z.shape().width == ww {
            Ok(z.shape().to_string())
        } else {
            fail(format!("latent {} for {w}x{h} image with factor {f}", z.shape()))
        }
    })());

    check("roundtrip_tolerance", (|| {
        let img = probe.clone()?;
        let z: Grid<f64> = DenoiserBackend::<f64>::encode(bridge, &img)?;
        let back = DenoiserBackend::<f64>::decode(bridge, &z)?;
        let err = img
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // PNG quantization on the wire adds up to half a code value.
        let allowed = d.roundtrip_tolerance + 0.5 / 255.0 + 1e-9;
        if err <= allowed { Ok(format!("max error {err:.3e}")) } else { fail(format!("max error {err:.3e} > {allowed:.3e}")) }
    })());

    check("velocity_shape", (|| {
        let img = probe.clone()?;
        let z: Grid<f64> = DenoiserBackend::<f64>::encode(bridge, &img)?;
        let c = Condition::new(img, "noop")?;
        let v = DenoiserBackend::<f64>::predict_velocity(bridge, &z, 0.5, &c, None)?;
        Ok(v.shape().to_string())
    })());

    check("malformed_encode_is_400", (|| {
        let (status, _) = bridge.post_raw("/encode", &json!({ "image": "not a png" }))?;
        if status == 400 { Ok("400".into()) } else { fail(format!("status {status}")) }
    })());

    check("velocity_shape_mismatch_is_4xx", (|| {
        let img = probe.clone()?;
        let bogus = Grid::<f64>::zeros(Shape::new(1, 1, 1)?);
        let body = serde_json::to_value(VelocityRequest {
            latent: LatentWire { shape: [3, 1, 1], data: LatentWire::from_grid(&bogus).data },
            s: 0.5,
            image: png_base64(&img)?,
            instruction: "noop".into(),
            noise: None,
        })
        .map_err(|e| CoreError::Codec(e.to_string()))?;
        let (status, _) = bridge.post_raw("/velocity", &body)?;
        if status == 400 || status == 422 { Ok(status.to_string()) } else { fail(format!("status {status}")) }
    })());

    if d.vae_factor > 1 {
        check("tiny_image_is_422", (|| {
            let tiny = Image::<f64>::filled(1, 1, [0.5; 3])?;
            let (status, _) = bridge.post_raw("/encode", &json!({ "image": png_base64(&tiny)? }))?;
            if status == 422 { Ok("422".into()) } else { fail(format!("status {status}")) }
        })());
    }

    check("concurrent_velocity", (|| {
        let img = probe.clone()?;
        let z: Grid<f64> = DenoiserBackend::<f64>::encode(bridge, &img)?;
        let c = Condition::new(img, "noop")?;
        let (a, b) = std::thread::scope(|scope| {
            let ha = scope.spawn(|| DenoiserBackend::<f64>::predict_velocity(bridge, &z, 0.5, &c, None));
            let hb = scope.spawn(|| DenoiserBackend::<f64>::predict_velocity(bridge, &z, 0.5, &c, None));
            (ha.join(), hb.join())
        });
        match (a, b) {
            (Ok(Ok(a)), Ok(Ok(b))) if a == b => Ok("two in-flight calls agree".into()),
            (Ok(Ok(_)), Ok(Ok(_))) => fail("concurrent calls disagree".into()),
            (Ok(Err(e)), _) | (_, Ok(Err(e))) => Err(e),
            _ => fail("worker panicked".into()),
        }
    })());

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_wire_roundtrip() {
        let g = Grid::<f64>::from_fn(Shape::new(2, 3, 4).unwrap(), |c, y, x| (c * 12 + y * 4 + x) as f64 * 0.25 - 3.0)
            .unwrap();
        let w = LatentWire::from_grid(&g);
        assert_eq!(w.shape, [2, 3, 4]);
        assert_eq!(w.to_grid::<f64>().unwrap(), g);
        let json = serde_json::to_string(&w).unwrap();
        let back: LatentWire = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn latent_wire_is_little_endian_f32() {
        let g = Grid::<f64>::filled(Shape::new(1, 1, 1).unwrap(), 1.0);
        let w = LatentWire::from_grid(&g);
        let bytes = base64::engine::general_purpose::STANDARD.decode(w.data).unwrap();
        assert_eq!(bytes, 1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_rejected() {
        let w = LatentWire {
            shape: [1, 2, 2],
            data: base64::engine::general_purpose::STANDARD.encode([0u8; 8]),
        };
        assert!(matches!(w.to_grid::<f64>(), Err(CoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn unreachable_bridge_is_connection_error() {
        let err = BridgeBackend::connect("http://127.0.0.1:9", None, Duration::from_secs(2)).unwrap_err();
        assert!(matches!(err, CoreError::BridgeConnection(_)), "{err:?}");
    }
}
