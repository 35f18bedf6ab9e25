use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde_json::json;

use plfn::dataset::{load_dataset_with_levels, synthesize, write_dataset, Dataset, Split};
use plfn::eval::{evaluate, Reference};
use plfn::geometry::{scale_intrinsics, Camera, ScaleDivisor};
use plfn::renderer::{self, benchmark, LightFieldModel, LodMode, RenderPolicy};
use plfn::streamfmt::{pack as pack_model, read_meta, read_model, write_model};
use plfn::train::{train_occupancy, train_with_callback, OccupancyConfig};
use plfn_serve::ModelService;

use crate::config::{parse_list, read_json, write_json, CameraSpec, CliResult, RunConfig, SynthFile};
use crate::{BenchArgs, EvalArgs, PackArgs, RenderArgs, ServeArgs, SynthArgs, TrainArgs};

const SYNTH_LEVELS: usize = 4;

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn parse_split(s: &str) -> CliResult<Split> {
    Ok(s.parse()?)
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> CliResult {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn synth(a: SynthArgs) -> CliResult {
    let mut file: SynthFile = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthFile::default(),
    };
    let s = &mut file.synth;
    if let Some(v) = a.views {
        s.views = v;
    }
    if let Some(v) = a.width {
        s.width = v;
    }
    if let Some(v) = a.height {
        s.height = v;
    }
    if let Some(v) = a.supersample {
        s.supersample = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.stripe_periods {
        file.scene.stripe_periods = v;
    }
    let t = Instant::now();
    let dataset = synthesize(&file.scene, &file.synth, SYNTH_LEVELS)?;
    let manifest = write_dataset(&dataset, &a.out)?;
    info!("{} views in {:.1}s", dataset.views.len(), t.elapsed().as_secs_f64());
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.train.mode = m.parse()?;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.validate_every {
        cfg.train.validate_every = v;
    }
    if let Some(w) = &a.widths {
        cfg.arch.lod_widths = parse_list(w, "width")?;
    }
    if let Some(v) = a.layers {
        cfg.arch.num_weight_layers = v;
    }
    if a.occupancy && cfg.occupancy.is_none() {
        cfg.occupancy = Some(OccupancyConfig::default());
    }
    cfg.arch.validate()?;
    cfg.train.validate()?;

    let dataset = load_dataset_with_levels(&a.dataset, cfg.arch.num_lods())?;
    create_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;

    let log_path = a.out.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| format!("{}: {e}", log_path.display()))?,
    );
    let mut log_err = None;
    let started = Instant::now();
    let outcome = train_with_callback(&dataset, &cfg.arch, &cfg.train, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(format!("{}: {e}", log_path.display()).into());
    }
    let occupancy = match &cfg.occupancy {
        Some(oc) => {
            info!("training occupancy network");
            Some(train_occupancy(&dataset, oc)?)
        }
        None => None,
    };
    let model = LightFieldModel::new(outcome.net, cfg.train.encoding, occupancy);
    let model_path = a.out.join("model.plfn");
    write_model(&model, &model_path)?;

    let last = outcome.log.last();
    let manifest = json!({
        "command": "train",
        "created_unix": unix_seconds(),
        "dataset": a.dataset,
        "config": cfg,
        "param_counts": (1..=cfg.arch.num_lods())
            .map(|k| cfg.arch.lod(k).map(|l| cfg.arch.param_count(l)))
            .collect::<plfn::Result<Vec<_>>>()?,
        "epochs": outcome.log.len(),
        "final_loss": last.map(|r| r.loss),
        "final_val_psnr": last.and_then(|r| r.val_psnr.clone()),
        "train_seconds": started.elapsed().as_secs_f64(),
        "outputs": {
            "model": "model.plfn",
            "log": "train_log.jsonl",
            "config": "config.json",
        },
    });
    write_json(&a.out.join("run.json"), &manifest)?;
    println!("{}", model_path.display());
    Ok(())
}

fn load_for_model(model: &LightFieldModel, manifest: &Path) -> CliResult<Dataset> {
    Ok(load_dataset_with_levels(manifest, model.arch().num_lods())?)
}

pub fn eval(a: EvalArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let dataset = load_for_model(&model, &a.dataset)?;
    let reference = match a.reference.as_str() {
        "pyramid" => Reference::Pyramid,
        "oracle" => Reference::Oracle { supersample: a.supersample },
        other => return Err(format!("unknown reference '{other}' (pyramid, oracle)").into()),
    };
    let split = parse_split(&a.split)?;
    let report = evaluate(&model.net, &model.encoding, &dataset, split, reference)?;
    emit(a.out.as_deref(), &serde_json::to_value(&report)?)
}

fn policy_from_flags(a: &RenderArgs) -> CliResult<RenderPolicy> {
    if let Some(p) = &a.policy {
        return read_json(p);
    }
    let modes = [a.lod.is_some(), a.foveated.is_some(), a.dither.is_some(), a.distance.is_some()];
    if modes.iter().filter(|m| **m).count() > 1 {
        return Err("choose one of --lod, --foveated, --dither, --distance".into());
    }
    let mode = if let Some(g) = &a.foveated {
        let g: Vec<f64> = parse_list(g, "gaze")?;
        if g.len() != 2 {
            return Err("--foveated takes x,y".into());
        }
        let radii = parse_list(a.radii.as_deref().unwrap_or_default(), "radius")?;
        LodMode::Foveated { gaze_px: [g[0], g[1]], radii }
    } else if let Some(d) = &a.dither {
        let v: Vec<f64> = parse_list(d, "dither")?;
        if v.len() != 3 && v.len() != 4 {
            return Err("--dither takes from,to,fraction[,seed]".into());
        }
        LodMode::Dithered {
            from_lod: v[0] as usize,
            to_lod: v[1] as usize,
            fraction: v[2],
            frame_seed: v.get(3).copied().unwrap_or(0.0) as u64,
        }
    } else if let Some(d) = &a.distance {
        let v: Vec<f64> = parse_list(d, "distance")?;
        if v.len() != 5 {
            return Err("--distance takes cx,cy,cz,radius,train_height_px".into());
        }
        LodMode::Distance {
            object_center: [v[0], v[1], v[2]],
            object_radius: v[3],
            train_full_height_px: v[4],
        }
    } else {
        LodMode::Fixed { lod: a.lod.unwrap_or(1) }
    };
    let mut policy = RenderPolicy::fixed(1);
    policy.mode = mode;
    if let Some(t) = a.occupancy {
        policy = policy.with_occupancy(t);
    }
    policy.reduced_precision = a.half;
    Ok(policy)
}

fn render_camera(a: &RenderArgs) -> CliResult<Camera> {
    let cam = if let Some(p) = &a.camera {
        read_json::<CameraSpec>(p)?.camera()?
    } else if let (Some(name), Some(manifest)) = (&a.view, &a.dataset) {
        let m = plfn::dataset::Manifest::read(manifest)?;
        let v = m
            .views
            .iter()
            .find(|v| &v.name == name)
            .ok_or_else(|| format!("no view named '{name}' in {}", manifest.display()))?;
        v.camera()?
    } else {
        return Err("give --camera or --view with --dataset".into());
    };
    Ok(scale_intrinsics(&cam, ScaleDivisor::new(a.scale)?)?)
}

pub fn render(a: RenderArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let cam = render_camera(&a)?;
    let mut policy = policy_from_flags(&a)?;
    if a.policy.is_none() && a.lod.is_none() {
        if let LodMode::Fixed { .. } = policy.mode {
            policy.mode = LodMode::Fixed { lod: model.arch().num_lods() };
        }
    }
    let out = renderer::render(&model, &cam, &policy)?;
    create_dir(&a.out)?;
    out.image.save_png(&a.out.join("frame.png"))?;
    let map_path = a.out.join("lod_map.png");
    std::fs::write(&map_path, out.lod_map.to_png(model.arch().num_lods())?)
        .map_err(|e| format!("{}: {e}", map_path.display()))?;
    let timing = json!({
        "width": cam.width_px,
        "height": cam.height_px,
        "policy": policy,
        "lod_histogram": out.lod_map.histogram(model.arch().num_lods()),
        "timing": out.timing,
    });
    write_json(&a.out.join("timing.json"), &timing)?;
    info!("rendered {}x{} in {:.1} ms", cam.width_px, cam.height_px, out.timing.total_ms);
    Ok(())
}

pub fn bench(a: BenchArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let dataset = load_for_model(&model, &a.dataset)?;
    let split = parse_split(&a.split)?;
    let cams: Vec<Camera> = dataset.indices(split).iter().map(|&i| dataset.views[i].camera).collect();
    if a.occupancy && model.occupancy.is_none() {
        return Err("--occupancy given but the model has no occupancy network".into());
    }
    let lods: Vec<usize> = parse_list(&a.lods, "lod")?;
    let scales: Vec<u32> = parse_list(&a.scales, "scale")?;
    let mut rows = Vec::new();
    for &s in &scales {
        for &k in &lods {
            let stats = benchmark(&model, &cams, model.net.lod(k)?, ScaleDivisor::new(s)?, a.reps, a.occupancy)?;
            info!("lod {k} at 1/{s}: {:.2} ms mean", stats.ms_mean);
            rows.push(stats);
        }
    }
    let report = json!({
        "model": a.model,
        "split": split.as_str(),
        "cameras": cams.len(),
        "repetitions": a.reps,
        "use_occupancy": a.occupancy,
        "threads": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        "results": rows,
    });
    emit(a.out.as_deref(), &report)
}

pub fn pack(a: PackArgs) -> CliResult {
    let mut model = read_model(&a.checkpoint)?;
    if a.drop_occupancy {
        model.occupancy = None;
    }
    if let Some(manifest) = &a.occupancy_dataset {
        let cfg: OccupancyConfig = match &a.occupancy_config {
            Some(p) => read_json(p)?,
            None => OccupancyConfig { encoding: model.encoding, ..Default::default() },
        };
        let dataset = load_for_model(&model, manifest)?;
        model.occupancy = Some(train_occupancy(&dataset, &cfg)?);
    }
    let bytes = pack_model(&model)?;
    std::fs::write(&a.out, &bytes).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let meta = read_meta(&bytes)?;
    let mib = |b: u64| b as f64 / (1024.0 * 1024.0);
    let levels: Vec<_> = (1..=meta.chunks.len())
        .map(|k| {
            json!({
                "lod": k,
                "chunk_bytes": meta.chunks[k - 1].length,
                "payload_bytes": meta.payload_bytes(k),
                "prefix_bytes": meta.prefix_len(k),
                "prefix_mib": mib(meta.prefix_len(k)),
            })
        })
        .collect();
    let summary = json!({
        "out": a.out,
        "total_bytes": meta.total_len(),
        "header_bytes": meta.header_bytes,
        "occupancy_bytes": meta.occupancy.as_ref().map(|o| o.length),
        "levels": levels,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn serve(a: ServeArgs) -> CliResult {
    let bytes = std::fs::read(&a.model).map_err(|e| format!("{}: {e}", a.model.display()))?;
    let service = ModelService::from_bytes(bytes)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind).await?;
        info!("listening on http://{}", listener.local_addr()?);
        plfn_serve::serve_listener(listener, Arc::new(service)).await
    })?;
    Ok(())
}
