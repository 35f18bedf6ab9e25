use plfn::geometry::{EncodingConfig, RigidTransform, Camera, ScaleDivisor};
use plfn::pronet::{ArchSpec, ProgressiveMlp};
use plfn::renderer::{
    benchmark, lod_map_for_policy, render, render_at_lod, LightFieldModel, LodMode, RenderPolicy,
};
use plfn::streamfmt::{load_prefix, pack, read_meta};

fn small_arch() -> ArchSpec {
    ArchSpec {
        input_dim: 24,
        output_dim: 4,
        num_weight_layers: 5,
        lod_widths: vec![4, 8, 12, 16],
    }
}

fn camera(w: u32, h: u32) -> Camera {
    let pose = RigidTransform::look_at([0.0, 0.5, -4.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
    Camera::new(w, h, 1.4 * h as f64, 1.4 * h as f64, w as f64 / 2.0, h as f64 / 2.0, pose).unwrap()
}

fn occupancy_net(seed: u64) -> ProgressiveMlp<f32> {
    let arch = ArchSpec {
        input_dim: 24,
        output_dim: 1,
        num_weight_layers: 3,
        lod_widths: vec![16],
    };
    ProgressiveMlp::init(arch, seed).unwrap()
}

fn model() -> LightFieldModel {
    LightFieldModel::new(
        ProgressiveMlp::init(small_arch(), 5).unwrap(),
        EncodingConfig::default(),
        Some(occupancy_net(6)),
    )
}

fn bits(img: &plfn::dataset::RgbaImage) -> Vec<u64> {
    img.as_raw().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn prefix_loaded_model_renders_identically() {
    let m = model();
    let bytes = pack(&m).unwrap();
    let meta = read_meta(&bytes).unwrap();
    let cam = camera(24, 18);
    for k in 1..=4 {
        let loaded = load_prefix(&bytes[..meta.prefix_len(k) as usize], k).unwrap();
        for j in 1..=k {
            let a = render_at_lod(&m.net, &cam, m.net.lod(j).unwrap(), &m.encoding).unwrap();
            let b = render_at_lod(&loaded.net, &cam, loaded.net.lod(j).unwrap(), &loaded.encoding).unwrap();
            assert_eq!(bits(&a), bits(&b), "prefix {k} level {j}");
        }
    }
}

#[test]
fn mixed_lod_render_matches_per_level_renders() {
    let m = model();
    let cam = camera(32, 24);
    let policy = RenderPolicy {
        mode: LodMode::Foveated {
            gaze_px: [10.0, 8.0],
            radii: vec![4.0, 9.0, 15.0],
        },
        use_occupancy: false,
        occupancy_threshold: 0.1,
        reduced_precision: false,
    };
    let out = render(&m, &cam, &policy).unwrap();
    let per_level: Vec<_> = (1..=4)
        .map(|k| render_at_lod(&m.net, &cam, m.net.lod(k).unwrap(), &m.encoding).unwrap())
        .collect();
    for y in 0..24 {
        for x in 0..32 {
            let k = out.lod_map.get(x, y) as usize;
            assert_eq!(out.image.get(x, y), per_level[k - 1].get(x, y));
        }
    }
    let hist = out.timing.pixels_per_lod.clone();
    assert_eq!(hist.iter().sum::<usize>(), 32 * 24);
    let expected_macs: u64 = (1..=4)
        .map(|k| hist[k] as u64 * small_arch().macs_per_ray(small_arch().lod(k).unwrap()))
        .sum();
    assert_eq!(out.timing.network_macs, expected_macs);
}

#[test]
fn occupancy_skips_pixels_below_threshold() {
    let m = model();
    let cam = camera(20, 16);
    let base = render(&m, &cam, &RenderPolicy::fixed(4)).unwrap();
    // thresholds near 0 keep everything; near 1 skip everything
    let keep = render(&m, &cam, &RenderPolicy::fixed(4).with_occupancy(1e-9)).unwrap();
    assert_eq!(bits(&keep.image), bits(&base.image));
    let skip = render(&m, &cam, &RenderPolicy::fixed(4).with_occupancy(1.0 - 1e-9)).unwrap();
    assert_eq!(skip.timing.pixels_per_lod[0], 320);
    assert_eq!(skip.timing.network_macs, 0);
    assert!(skip.image.as_raw().iter().all(|v| *v == 0.0));
    assert!(skip.timing.occupancy_macs > 0);
}

#[test]
fn occupancy_without_a_classifier_is_rejected() {
    let m = LightFieldModel::new(ProgressiveMlp::init(small_arch(), 5).unwrap(), EncodingConfig::default(), None);
    assert!(render(&m, &camera(8, 8), &RenderPolicy::fixed(1).with_occupancy(0.1)).is_err());
}

#[test]
fn reduced_precision_stays_close() {
    let m = model();
    let cam = camera(16, 12);
    let full = render(&m, &cam, &RenderPolicy::fixed(4)).unwrap().image;
    let mut p = RenderPolicy::fixed(4);
    p.reduced_precision = true;
    let half = render(&m, &cam, &p).unwrap().image;
    let worst = full
        .as_raw()
        .iter()
        .zip(half.as_raw())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst > 0.0 && worst < 1e-2, "{worst}");
}

#[test]
fn dithered_map_counts() {
    let arch = small_arch();
    let cam = camera(40, 30);
    for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let p = RenderPolicy {
            mode: LodMode::Dithered {
                from_lod: 2,
                to_lod: 3,
                fraction: f,
                frame_seed: 4,
            },
            use_occupancy: false,
            occupancy_threshold: 0.1,
            reduced_precision: false,
        };
        let map = lod_map_for_policy(&cam, &p, &arch).unwrap();
        let h = map.histogram(4);
        assert_eq!(h[3], (f * 1200.0_f64).round() as usize);
        assert_eq!(h[2] + h[3], 1200);
    }
}

#[test]
fn benchmark_reports_discarding_warmup() {
    let m = model();
    let cams = [camera(64, 48), camera(64, 48)];
    let s = benchmark(&m, &cams, m.net.lod(2).unwrap(), ScaleDivisor::QUARTER, 3, false).unwrap();
    assert_eq!(s.frames, 4);
    assert_eq!(s.network_macs_per_pass, 2 * 16 * 12 * small_arch().macs_per_ray(small_arch().lod(2).unwrap()));
    assert!(s.ms_p50 <= s.ms_p95);
    assert!(benchmark(&m, &cams, m.net.lod(2).unwrap(), ScaleDivisor::QUARTER, 2, false).is_err());
}

#[test]
fn timing_report_serializes() {
    let m = model();
    let out = render(&m, &camera(8, 8), &RenderPolicy::fixed(1)).unwrap();
    let v: serde_json::Value = serde_json::to_value(&out.timing).unwrap();
    for key in ["ray_generation_ms", "occupancy_ms", "network_ms", "total_ms", "network_macs", "pixels_per_lod"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let png = out.lod_map.to_png(4).unwrap();
    assert_eq!(&png[1..4], b"PNG");
}
