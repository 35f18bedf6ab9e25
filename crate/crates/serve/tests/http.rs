use std::net::SocketAddr;
use std::sync::Arc;

use plfn::geometry::{EncodingConfig, RigidTransform};
use plfn::pronet::{ArchSpec, ProgressiveMlp};
use plfn::renderer::{LightFieldModel, RenderPolicy};
use plfn::streamfmt::pack;
use plfn_serve::{ModelService, RenderRequest};

async fn spawn(bytes: Vec<u8>) -> SocketAddr {
    let service = Arc::new(ModelService::from_bytes(bytes).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum_serve(listener, service).await });
    addr
}

async fn axum_serve(listener: tokio::net::TcpListener, service: Arc<ModelService>) {
    plfn_serve::serve_listener(listener, service).await.unwrap();
}

fn default_model_bytes() -> Vec<u8> {
    let m = LightFieldModel::new(
        ProgressiveMlp::init(ArchSpec::default(), 1).unwrap(),
        EncodingConfig::default(),
        None,
    );
    pack(&m).unwrap()
}

fn small_model_bytes() -> Vec<u8> {
    let arch = ArchSpec {
        lod_widths: vec![4, 8, 12, 16],
        num_weight_layers: 5,
        ..ArchSpec::default()
    };
    let m = LightFieldModel::new(ProgressiveMlp::init(arch, 2).unwrap(), EncodingConfig::default(), None);
    pack(&m).unwrap()
}

fn request(policy: RenderPolicy) -> RenderRequest {
    let pose = RigidTransform::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
    let pose: [f64; 12] = pose.to_row_major_3x4().try_into().unwrap();
    RenderRequest {
        pose,
        width: 32,
        height: 24,
        fx: 34.0,
        fy: 34.0,
        cx: 16.0,
        cy: 12.0,
        policy,
        output: Default::default(),
    }
}

#[tokio::test]
async fn health_and_meta() {
    let addr = spawn(small_model_bytes()).await;
    let r = reqwest::get(format!("http://{addr}/healthz")).await.unwrap();
    assert_eq!(r.status(), 200);
    let meta: serde_json::Value = reqwest::get(format!("http://{addr}/model/meta"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(meta["arch"]["lod_widths"], serde_json::json!([4, 8, 12, 16]));
    assert_eq!(meta["chunks"].as_array().unwrap().len(), 4);
    assert!(meta["chunks"][0]["crc32"].is_u64());
}

#[tokio::test]
async fn chunk_downloads_sum_to_the_payload() {
    let bytes = default_model_bytes();
    let addr = spawn(bytes.clone()).await;
    let client = reqwest::Client::new();
    let mut total = 0u64;
    let mut payload = Vec::new();
    for k in 1..=4 {
        let r = client.get(format!("http://{addr}/model/chunk/{k}")).send().await.unwrap();
        assert_eq!(r.status(), 200);
        total += r.content_length().unwrap();
        payload.extend_from_slice(&r.bytes().await.unwrap());
    }
    assert_eq!(total, 8_464_400);
    let header = plfn::streamfmt::read_meta(&bytes).unwrap().header_bytes as usize;
    assert_eq!(payload, bytes[header..]);
}

#[tokio::test]
async fn unknown_chunks_are_404() {
    let addr = spawn(small_model_bytes()).await;
    for k in ["5", "0", "abc", "-1"] {
        let r = reqwest::get(format!("http://{addr}/model/chunk/{k}")).await.unwrap();
        assert_eq!(r.status(), 404, "chunk {k}");
    }
}

#[tokio::test]
async fn render_matches_local_render() {
    let bytes = small_model_bytes();
    let local = ModelService::from_bytes(bytes.clone()).unwrap();
    let addr = spawn(bytes).await;
    let req = request(RenderPolicy::fixed(4));
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/render"))
        .json(&req)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers()["content-type"], "image/png");
    let macs: u64 = r.headers()["x-plfn-network-macs"].to_str().unwrap().parse().unwrap();
    assert!(r.headers().contains_key("x-plfn-total-ms"));
    let png = r.bytes().await.unwrap();
    let out = local.render(&req).unwrap();
    assert_eq!(out.timing.network_macs, macs);
    assert_eq!(png.as_ref(), out.image.to_png().unwrap().as_slice());
}

#[tokio::test]
async fn lod_map_output() {
    let addr = spawn(small_model_bytes()).await;
    let mut req = request(RenderPolicy::fixed(2));
    req.output = plfn_serve::OutputKind::LodMap;
    let r = reqwest::Client::new()
        .post(format!("http://{addr}/render"))
        .json(&req)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers()["x-plfn-lod-histogram"], "0,0,768,0,0");
}

#[tokio::test]
async fn concurrent_identical_requests_are_identical() {
    let addr = spawn(small_model_bytes()).await;
    let client = reqwest::Client::new();
    let req = request(RenderPolicy {
        mode: plfn::renderer::LodMode::Dithered {
            from_lod: 1,
            to_lod: 4,
            fraction: 0.4,
            frame_seed: 9,
        },
        use_occupancy: false,
        occupancy_threshold: 0.1,
        reduced_precision: false,
    });
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let c = client.clone();
            let req = req.clone();
            tokio::spawn(async move {
                c.post(format!("http://{addr}/render"))
                    .json(&req)
                    .send()
                    .await
                    .unwrap()
                    .bytes()
                    .await
                    .unwrap()
            })
        })
        .collect();
    let mut outs = Vec::new();
    for t in tasks {
        outs.push(t.await.unwrap());
    }
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let addr = spawn(small_model_bytes()).await;
    let client = reqwest::Client::new();
    let good = serde_json::to_value(request(RenderPolicy::fixed(1))).unwrap();

    let cases: Vec<(serde_json::Value, &str)> = vec![
        ({ let mut v = good.clone(); v.as_object_mut().unwrap().remove("fy"); v }, "fy"),
        ({ let mut v = good.clone(); v["width"] = "wide".into(); v }, "width"),
        ({ let mut v = good.clone(); v["pose"] = serde_json::json!([1, 2, 3]); v }, "pose"),
        ({ let mut v = good.clone(); v["policy"]["lod"] = serde_json::json!(9); v }, "policy"),
        ({ let mut v = good.clone(); v["policy"]["mode"] = "spiral".into(); v }, "policy"),
    ];
    for (body, field) in cases {
        let r = client.post(format!("http://{addr}/render")).json(&body).send().await.unwrap();
        assert_eq!(r.status(), 400, "{field}");
        let err: serde_json::Value = r.json().await.unwrap();
        let got = err["field"].as_str().unwrap();
        assert!(got.starts_with(field), "{field}: {err}");
    }
    let r = client
        .post(format!("http://{addr}/render"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
}
