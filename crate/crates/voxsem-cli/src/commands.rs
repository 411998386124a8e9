//! Subcommand implementations. Every output file is written atomically and
//! each run drops its resolved configuration beside its outputs, so a rerun
//! with the same inputs reproduces every byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use voxsem_core::check;
use voxsem_core::error::{Error, Result};
use voxsem_core::fcm::CompletionContext;
use voxsem_core::fusion::{
    evaluate, train, ClassSource, EvalStats, FusionHyper, FusionModel, TrainConfig, TrainLog,
};
use voxsem_core::grid::{ClassTable, GridSpec, LabelVolume, MaskVolume, NUM_CLASSES};
use voxsem_core::io::{load_volume, save_volume, write_atomic, VgridVolume};
use voxsem_core::loss::ProbVolume;
use voxsem_core::metrics::{
    prob_histogram, sc_metrics, ssc_iou, EvalMask,
};
use voxsem_core::project::{project_features, surface_mask, FeatureImage};
use voxsem_core::scenes::{make_dataset, SceneDataset, SceneSpec};
use voxsem_core::tsdf::{tsdf_encode, VisibilityVolume};

use crate::config::{
    camera_from_config, camera_to_config, grid_from_config, Config, GRID_KEYS,
};

/// Effective seed: CLI flag beats `VOXSEM_SEED`, which beats the config.
pub fn resolve_seed(flag: Option<u64>, cfg: Option<&Config>, default: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(raw) = std::env::var("VOXSEM_SEED") {
        return raw
            .parse()
            .map_err(|_| Error::Domain(format!("VOXSEM_SEED: cannot parse `{raw}`")));
    }
    match cfg {
        Some(c) => c.get_or("seed", default),
        None => Ok(default),
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_resolved(out: &Path, cfg: &Config) -> Result<()> {
    write_atomic(&sibling(out, "resolved.cfg"), cfg.resolved_text().as_bytes())
}

fn load_labels(path: &Path) -> Result<LabelVolume> {
    load_volume(path)?.into_labels()
}

fn load_mask(path: &Path) -> Result<MaskVolume> {
    let labels = load_labels(path)?;
    MaskVolume::new(
        *labels.spec(),
        labels.values().iter().map(|&v| v != 0).collect(),
    )
}

fn load_probs(path: &Path) -> Result<ProbVolume> {
    match load_volume(path)? {
        VgridVolume::Prob {
            channels,
            spec,
            data,
        } => {
            // stored in f32; renormalize per voxel before rebuilding
            let voxels = spec.len();
            let mut probs = vec![0f64; channels * voxels];
            for lin in 0..voxels {
                let mut sum = 0f64;
                for k in 0..channels {
                    sum += data[k * voxels + lin].max(0.0) as f64;
                }
                for k in 0..channels {
                    probs[k * voxels + lin] = if sum > 0.0 {
                        data[k * voxels + lin].max(0.0) as f64 / sum
                    } else {
                        1.0 / channels as f64
                    };
                }
            }
            ProbVolume::from_probs(spec, channels, probs)
        }
        other => Err(Error::Shape(format!(
            "expected a probability volume, found kind {}",
            other.kind()
        ))),
    }
}

pub fn cmd_tsdf(
    depth: &Path,
    cam: &Path,
    spec: &Path,
    trunc: f32,
    out: &Path,
) -> Result<()> {
    let cam_cfg = Config::from_file(cam)?;
    let camera = camera_from_config(&cam_cfg)?;
    let grid_cfg = Config::from_file(spec)?;
    let grid = grid_from_config(&grid_cfg)?;
    let depth_img = voxsem_core::io::read_depth_png(depth)?;
    let tsdf = tsdf_encode(&depth_img, &camera, &grid, trunc)?;
    save_volume(
        out,
        &VgridVolume::Tsdf {
            spec: grid,
            data: tsdf.values().to_vec(),
        },
    )?;
    save_volume(
        &sibling(out, "vis.vgrid"),
        &VgridVolume::from_labels(&tsdf.visibility().to_labels()),
    )?;
    let mut resolved = Config::default();
    resolved.set("depth", depth.display());
    resolved.set("cam", cam.display());
    resolved.set("spec", spec.display());
    resolved.set("trunc", trunc);
    write_resolved(out, &resolved)
}

pub fn cmd_project(
    feat: &Path,
    depth: &Path,
    cam: &Path,
    spec: &Path,
    out: &Path,
    mask_out: Option<&Path>,
) -> Result<()> {
    let camera = camera_from_config(&Config::from_file(cam)?)?;
    let grid = grid_from_config(&Config::from_file(spec)?)?;
    let depth_img = voxsem_core::io::read_depth_png(depth)?;
    let feat_img = FeatureImage::from_vgrid(&load_volume(feat)?)?;
    let (volume, counts) = project_features(&feat_img, &depth_img, &camera, &grid)?;
    save_volume(out, &VgridVolume::from_feature(&volume))?;
    if let Some(mask_path) = mask_out {
        let mask = surface_mask(&counts);
        let labels: Vec<u8> = mask.values().iter().map(|&b| b as u8).collect();
        save_volume(
            mask_path,
            &VgridVolume::Label {
                spec: grid,
                data: labels,
            },
        )?;
    }
    let mut resolved = Config::default();
    resolved.set("feat", feat.display());
    resolved.set("depth", depth.display());
    resolved.set("cam", cam.display());
    resolved.set("spec", spec.display());
    write_resolved(out, &resolved)
}

pub fn cmd_fcm(
    features: &Path,
    classes: &Path,
    vis: &Path,
    occ: &Path,
    out: &Path,
) -> Result<()> {
    let feat = load_volume(features)?.into_feature()?;
    let class_map = load_labels(classes)?;
    let visible = load_mask(vis)?;
    let occluded = load_mask(occ)?;
    let ctx = CompletionContext::new(class_map, visible, occluded)?;
    let completed = voxsem_core::fcm::complete_features(&feat, &ctx)?;
    save_volume(out, &VgridVolume::from_feature(&completed))?;
    let mut resolved = Config::default();
    resolved.set("features", features.display());
    resolved.set("classes", classes.display());
    resolved.set("vis", vis.display());
    resolved.set("occ", occ.display());
    write_resolved(out, &resolved)
}

pub fn cmd_eval(
    pred: &Path,
    gt: &Path,
    tsdf: &Path,
    vis: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let pred_labels = load_labels(pred)?;
    let gt_labels = load_labels(gt)?;
    let vis_path = match vis {
        Some(p) => p.to_path_buf(),
        None => sibling(tsdf, "vis.vgrid"),
    };
    if !vis_path.exists() {
        return Err(Error::State(format!(
            "visibility volume {} not found; `voxsem tsdf` writes it beside the TSDF",
            vis_path.display()
        )));
    }
    let visibility = VisibilityVolume::from_labels(&load_labels(&vis_path)?)?;
    let mask = EvalMask::from_parts(&visibility, &gt_labels)?;

    let ssc = ssc_iou(&pred_labels, &gt_labels, &mask)?;
    let occupancy = MaskVolume::new(
        *pred_labels.spec(),
        pred_labels.values().iter().map(|&v| v != 0).collect(),
    )?;
    let sc = sc_metrics(&occupancy, &gt_labels, &mask)?;

    let mut csv = String::from("name,precision,recall,iou\n");
    let _ = writeln!(csv, "SC,{},{},{}", sc.precision, sc.recall, sc.iou);
    for (i, iou) in ssc.per_class.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},,,{}",
            ClassTable::name(i + 1).expect("semantic class"),
            iou
        );
    }
    let _ = writeln!(csv, "mIoU,,,{}", ssc.mean);
    write_atomic(out, csv.as_bytes())?;

    let mut meta = String::new();
    let _ = writeln!(meta, "ignore_mask = applied (gt label 255 excluded everywhere, including SC recall)");
    let _ = writeln!(meta, "pred = {}", pred.display());
    let _ = writeln!(meta, "gt = {}", gt.display());
    let _ = writeln!(meta, "visibility = {}", vis_path.display());
    write_atomic(&sibling(out, "meta"), meta.as_bytes())
}

pub fn cmd_hist(
    probs: &Path,
    gt: &Path,
    class: usize,
    bins: usize,
    out: &Path,
) -> Result<()> {
    let p = load_probs(probs)?;
    let g = load_labels(gt)?;
    let h = prob_histogram(&p, &g, class, bins)?;
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in h.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            i as f64 / bins as f64,
            (i + 1) as f64 / bins as f64,
            count
        );
    }
    write_atomic(out, csv.as_bytes())
}

pub fn cmd_gradcheck(seed: u64, classes: usize, voxels: usize) -> Result<()> {
    if classes < 2 || !(10..=10_000).contains(&voxels) {
        return Err(Error::Domain(
            "gradcheck needs classes >= 2 and voxels in 10..=10000".into(),
        ));
    }
    let (probs, gt) = check::random_loss_instance(seed, classes, voxels);
    let ce = check::cross_entropy_fd_error(&probs, &gt);
    let cel = check::classwise_entropy_fd_error(&probs, &gt);
    println!("cross_entropy        max_rel_err = {ce:.3e}");
    println!("classwise_entropy    max_rel_err = {cel:.3e}");
    let mut worst = ce.max(cel);
    for (name, rel) in check::primitive_gradcheck(seed) {
        println!("{name:<20} max_rel_err = {rel:.3e}");
        worst = worst.max(rel);
    }
    if worst > check::GRAD_TOL {
        return Err(Error::Domain(format!(
            "worst relative error {worst:.3e} exceeds {:.0e}",
            check::GRAD_TOL
        )));
    }
    println!("all gradients within {:.0e}", check::GRAD_TOL);
    Ok(())
}

pub const SCENE_KEYS: &[&str] = &[
    "dims",
    "voxel_size",
    "origin",
    "image",
    "objects_min",
    "objects_max",
    "channels",
    "noise_sigma",
    "trunc",
];

/// Scene generator settings from a config file, toy defaults elsewhere.
pub fn scene_spec_from_config(cfg: &Config) -> Result<SceneSpec> {
    let mut spec = SceneSpec::toy();
    if cfg.get("dims").is_some() {
        let mut grid_cfg = Config::default();
        for key in GRID_KEYS {
            if let Some(v) = cfg.get(key) {
                grid_cfg.set(key, v);
            }
        }
        spec.grid = grid_from_config(&grid_cfg)?;
    }
    let image: usize = cfg.get_or("image", 32)?;
    spec.image_size = (image, image);
    spec.object_count = (cfg.get_or("objects_min", 1)?, cfg.get_or("objects_max", 3)?);
    let channels: usize = cfg.get_or("channels", 8)?;
    let sigma: f64 = cfg.get_or("noise_sigma", 0.1)?;
    if channels != spec.feature_dim || (sigma - spec.noise_sigma).abs() > 1e-12 {
        spec.feature_dim = channels;
        spec.noise_sigma = sigma;
        spec.palette = voxsem_core::scenes::make_palette(channels, sigma, 0x9a1e77);
    }
    spec.truncation = cfg.get_or("trunc", 3.0 * spec.grid.voxel_size)?;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_scenes(spec_path: &Path, n: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = Config::from_file(spec_path)?;
    cfg.check_keys(SCENE_KEYS)?;
    let spec = scene_spec_from_config(&cfg)?;
    let seed = resolve_seed(seed, Some(&cfg), 7)?;
    std::fs::create_dir_all(out)?;
    let dataset = make_dataset(&spec, n, seed)?;
    let mut split = String::from("sample,split\n");
    for (i, sample) in dataset.samples.iter().enumerate() {
        let stem = out.join(format!("s{i:04}"));
        voxsem_core::io::write_depth_png(&sibling(&stem, "depth.png"), &sample.depth)?;
        save_volume(&sibling(&stem, "gt.vgrid"), &VgridVolume::from_labels(&sample.gt))?;
        save_volume(
            &sibling(&stem, "tsdf.vgrid"),
            &VgridVolume::Tsdf {
                spec: spec.grid,
                data: sample.tsdf.values().to_vec(),
            },
        )?;
        save_volume(
            &sibling(&stem, "tsdf.vis.vgrid"),
            &VgridVolume::from_labels(&sample.tsdf.visibility().to_labels()),
        )?;
        save_volume(&sibling(&stem, "rf1.vgrid"), &VgridVolume::from_feature(&sample.rf1))?;
        save_volume(&sibling(&stem, "feat.vgrid"), &sample.feat.to_vgrid())?;
        write_atomic(
            &sibling(&stem, "cam.cfg"),
            camera_to_config(&sample.cam).resolved_text().as_bytes(),
        )?;
        let _ = writeln!(
            split,
            "s{i:04},{}",
            if i < dataset.train_count { "train" } else { "val" }
        );
    }
    write_atomic(&out.join("split.csv"), split.as_bytes())?;
    let mut resolved = cfg.clone();
    resolved.set("seed", seed);
    resolved.set("n", n);
    write_atomic(&out.join("resolved.cfg"), resolved.resolved_text().as_bytes())
}

pub const TRAIN_KEYS: &[&str] = &[
    "dims",
    "voxel_size",
    "origin",
    "image",
    "objects_min",
    "objects_max",
    "channels",
    "noise_sigma",
    "trunc",
    "scenes",
    "epochs",
    "batch",
    "base_lr",
    "momentum",
    "weight_decay",
    "lambda1",
    "lambda2",
    "seed",
    "fcm",
    "reuse",
    "class_source",
    "warmup",
    "bins",
    "ce_empty_weight",
    "eval_every",
];

pub struct TrainSetup {
    pub scene_spec: SceneSpec,
    pub scenes: usize,
    pub hyper: FusionHyper,
    pub train_cfg: TrainConfig,
    pub bins: usize,
}

pub fn train_setup_from_config(cfg: &Config, seed_flag: Option<u64>) -> Result<TrainSetup> {
    cfg.check_keys(TRAIN_KEYS)?;
    let scene_spec = scene_spec_from_config(cfg)?;
    let seed = resolve_seed(seed_flag, Some(cfg), 7)?;
    let class_source = match cfg.get_or("class_source", "argmax".to_string())?.as_str() {
        "argmax" => ClassSource::Stage1Argmax,
        "gt" => ClassSource::GroundTruth,
        other => {
            return Err(Error::Domain(format!(
                "class_source must be `argmax` or `gt`, got `{other}`"
            )))
        }
    };
    let hyper = FusionHyper {
        channels: scene_spec.feature_dim,
        num_classes: NUM_CLASSES,
        activation: voxsem_core::fusion::Activation::Relu,
        fcm_enabled: cfg.get_or("fcm", 1u8)? != 0,
        reuse_tsdf: cfg.get_or("reuse", 1u8)? != 0,
        class_source,
    };
    let train_cfg = TrainConfig {
        epochs: cfg.get_or("epochs", 12)?,
        batch_size: cfg.get_or("batch", 2)?,
        base_lr: cfg.get_or("base_lr", 0.1)?,
        momentum: cfg.get_or("momentum", 0.9)?,
        weight_decay: cfg.get_or("weight_decay", 0.0005)?,
        lambda1: cfg.get_or("lambda1", 0.5)?,
        lambda2: cfg.get_or("lambda2", 0.5)?,
        seed,
        stage1_warmup_epochs: cfg.get_or("warmup", 0)?,
        ce_empty_weight: cfg.get_or("ce_empty_weight", 1.0)?,
        eval_every: cfg.get_or("eval_every", 1)?,
    };
    Ok(TrainSetup {
        scene_spec,
        scenes: cfg.get_or("scenes", 40)?,
        hyper,
        train_cfg,
        bins: cfg.get_or("bins", 100)?,
    })
}

fn eval_cell(stats: &Option<EvalStats>, f: impl Fn(&EvalStats) -> String) -> String {
    stats.as_ref().map(&f).unwrap_or_default()
}

pub fn train_log_csv(log: &TrainLog) -> String {
    let mut csv = String::from(
        "epoch,lr,train_loss,ce1,le1,ce2,le2,val_miou_pre,val_miou_ref,\
         val_sc_iou_pre,val_sc_iou_ref,val_consistency_pre,val_consistency_ref,\
         val_mid_mass_pre,val_mid_mass_ref,occluded_mismatch,tape_bytes\n",
    );
    for e in &log.epochs {
        let refined = |f: fn(&voxsem_core::fusion::StageStats) -> f64| {
            eval_cell(&e.val, |v| {
                v.refined.as_ref().map(|s| f(s).to_string()).unwrap_or_default()
            })
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.ce1,
            e.le1,
            e.ce2,
            e.le2,
            eval_cell(&e.val, |v| v.preliminary.miou.to_string()),
            refined(|s| s.miou),
            eval_cell(&e.val, |v| v.preliminary.sc.iou.to_string()),
            refined(|s| s.sc.iou),
            eval_cell(&e.val, |v| v.preliminary.consistency_occluded.to_string()),
            refined(|s| s.consistency_occluded),
            eval_cell(&e.val, |v| v.preliminary.mid_mass.to_string()),
            refined(|s| s.mid_mass),
            eval_cell(&e.val, |v| v.occluded_mismatch.to_string()),
            e.tape_bytes,
        );
    }
    csv
}

fn histogram_csv(
    model: &FusionModel,
    dataset: &SceneDataset,
    bins: usize,
    refined: bool,
) -> Result<String> {
    let mut per_class = vec![vec![0u64; bins]; NUM_CLASSES];
    for sample in dataset.val() {
        let (pre, re) = model.predict(sample)?;
        let probs = if refined { re.unwrap_or(pre) } else { pre };
        for c in 0..NUM_CLASSES {
            let h = prob_histogram(&probs, &sample.gt, c, bins)?;
            for (slot, v) in per_class[c].iter_mut().zip(h) {
                *slot += v;
            }
        }
    }
    let mut csv = String::from("class,bin_lo,bin_hi,count\n");
    for (c, hist) in per_class.iter().enumerate() {
        for (i, count) in hist.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                ClassTable::name(c).expect("class in table"),
                i as f64 / bins as f64,
                (i + 1) as f64 / bins as f64,
                count
            );
        }
    }
    Ok(csv)
}

pub fn cmd_train_demo(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = Config::from_file(config)?;
    let setup = train_setup_from_config(&cfg, seed)?;
    std::fs::create_dir_all(out)?;

    let dataset = make_dataset(&setup.scene_spec, setup.scenes, setup.train_cfg.seed)?;
    let mut model = FusionModel::new(setup.hyper.clone(), setup.train_cfg.seed);
    let log = train(&mut model, &dataset, &setup.train_cfg)?;

    write_atomic(&out.join("log.csv"), train_log_csv(&log).as_bytes())?;
    if !dataset.val().is_empty() {
        write_atomic(
            &out.join("hist_pre.csv"),
            histogram_csv(&model, &dataset, setup.bins, false)?.as_bytes(),
        )?;
        if setup.hyper.fcm_enabled {
            write_atomic(
                &out.join("hist_ref.csv"),
                histogram_csv(&model, &dataset, setup.bins, true)?.as_bytes(),
            )?;
        }
    }

    let params_dir = out.join("params");
    std::fs::create_dir_all(&params_dir)?;
    let mut shapes = String::from("name,shape\n");
    let unit = GridSpec::new([1, 1, 1], 1.0, [0.0; 3])?;
    for p in model.params() {
        let file = format!("{}.vgrid", p.name.replace('.', "_"));
        save_volume(
            &params_dir.join(&file),
            &VgridVolume::Feature {
                channels: p.value.numel(),
                spec: unit,
                data: p.value.data.iter().map(|&v| v as f32).collect(),
            },
        )?;
        let shape = p
            .value
            .shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(shapes, "{},{}", p.name, shape);
    }
    write_atomic(&params_dir.join("shapes.csv"), shapes.as_bytes())?;

    let mut resolved = cfg.clone();
    resolved.set("seed", setup.train_cfg.seed);
    write_atomic(&out.join("resolved.cfg"), resolved.resolved_text().as_bytes())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "final: loss {:.4}, val mIoU pre {} ref {}",
            last.train_loss,
            eval_cell(&last.val, |v| format!("{:.4}", v.preliminary.miou)),
            eval_cell(&last.val, |v| v
                .refined
                .as_ref()
                .map(|s| format!("{:.4}", s.miou))
                .unwrap_or_default()),
        );
    }
    Ok(())
}

/// One ablation variant.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub fcm: bool,
    pub reuse: bool,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Plan lines look like `C = fcm=1 reuse=1 lambda1=0.5 lambda2=0.5`.
pub fn parse_plan(text: &str) -> Result<Vec<Variant>> {
    let cfg = Config::parse(text)?;
    let mut variants = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, _) = line.split_once('=').expect("validated by Config::parse");
        let name = name.trim().to_string();
        let spec = cfg.get(&name).expect("key from the same parse");
        let mut v = Variant {
            name: name.clone(),
            fcm: true,
            reuse: true,
            lambda1: 0.0,
            lambda2: 0.0,
        };
        for token in spec.split_whitespace() {
            let Some((k, raw)) = token.split_once('=') else {
                return Err(Error::Domain(format!(
                    "variant `{name}`: expected key=value tokens, got `{token}`"
                )));
            };
            match k {
                "fcm" => v.fcm = raw != "0",
                "reuse" => v.reuse = raw != "0",
                "lambda1" => {
                    v.lambda1 = raw.parse().map_err(|_| {
                        Error::Domain(format!("variant `{name}`: bad lambda1 `{raw}`"))
                    })?
                }
                "lambda2" => {
                    v.lambda2 = raw.parse().map_err(|_| {
                        Error::Domain(format!("variant `{name}`: bad lambda2 `{raw}`"))
                    })?
                }
                other => {
                    return Err(Error::Domain(format!(
                        "variant `{name}`: unknown field `{other}`"
                    )))
                }
            }
        }
        variants.push(v);
    }
    Ok(variants)
}

pub const ABLATE_CSV_HEADER: &str = "variant,fcm,reuse,lambda1,lambda2,pre_miou,ref_miou,\
     pre_sc_iou,ref_sc_iou,pre_consistency,ref_consistency,pre_mid_mass,ref_mid_mass,\
     tape_peak_bytes";

/// Train one variant on a shared dataset and produce its CSV row.
pub fn run_variant(
    variant: &Variant,
    dataset: &SceneDataset,
    base: &TrainSetup,
) -> Result<String> {
    let hyper = FusionHyper {
        fcm_enabled: variant.fcm,
        reuse_tsdf: variant.reuse,
        ..base.hyper.clone()
    };
    let cfg = TrainConfig {
        lambda1: variant.lambda1,
        lambda2: variant.lambda2,
        ..base.train_cfg.clone()
    };
    let mut model = FusionModel::new(hyper, cfg.seed);
    let log = train(&mut model, dataset, &cfg)?;
    let stats = evaluate(&model, dataset.val())?;
    let refined = |f: fn(&voxsem_core::fusion::StageStats) -> f64| {
        stats
            .refined
            .as_ref()
            .map(|s| f(s).to_string())
            .unwrap_or_default()
    };
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        variant.name,
        variant.fcm as u8,
        variant.reuse as u8,
        variant.lambda1,
        variant.lambda2,
        stats.preliminary.miou,
        refined(|s| s.miou),
        stats.preliminary.sc.iou,
        refined(|s| s.sc.iou),
        stats.preliminary.consistency_occluded,
        refined(|s| s.consistency_occluded),
        stats.preliminary.mid_mass,
        refined(|s| s.mid_mass),
        log.peak_tape_bytes,
    ))
}

pub fn cmd_ablate(config: &Path, plan: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = Config::from_file(config)?;
    let setup = train_setup_from_config(&cfg, seed)?;
    let variants = parse_plan(&std::fs::read_to_string(plan)?)?;
    std::fs::create_dir_all(out)?;

    // one dataset for the whole plan: identical bits for every variant
    let dataset = make_dataset(&setup.scene_spec, setup.scenes, setup.train_cfg.seed)?;

    let mut csv = format!("{ABLATE_CSV_HEADER}\n");
    for variant in &variants {
        let started = std::time::Instant::now();
        match run_variant(variant, &dataset, &setup) {
            Ok(row) => {
                let _ = writeln!(csv, "{row}");
                println!(
                    "variant {}: done in {:.1}s",
                    variant.name,
                    started.elapsed().as_secs_f64()
                );
            }
            Err(e) => {
                eprintln!("variant {} failed: {e}", variant.name);
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},,,,,,,,,",
                    variant.name,
                    variant.fcm as u8,
                    variant.reuse as u8,
                    variant.lambda1,
                    variant.lambda2
                );
            }
        }
    }
    write_atomic(&out.join("comparison.csv"), csv.as_bytes())?;
    let mut resolved = cfg.clone();
    resolved.set("seed", setup.train_cfg.seed);
    write_atomic(&out.join("resolved.cfg"), resolved.resolved_text().as_bytes())?;
    write_atomic(
        &out.join("plan.resolved.cfg"),
        std::fs::read_to_string(plan)?.as_bytes(),
    )
}
