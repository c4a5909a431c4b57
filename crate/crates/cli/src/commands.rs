use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdp_core::diffusion::{smoothed_tail, ActionChunk, BetaSchedule, TrainConfig};
use cdp_core::geometry::{
    adapt_state, default_catalog, derive_adaptation, find_config, load_catalog, unadapt_state,
    ManipulatorConfig, RobotState,
};
use cdp_core::pipeline::{Mode, SessionOptions};
use cdp_core::policy::{train_policy, PolicyModel};
use cdp_core::projection::{
    compile_constraints, project_horizon, write_correction_csv, ActionLayout, CumulativeMode,
    NormStats, DEFAULT_EPS_SAFE, DEFAULT_EPS_TASK,
};
use cdp_core::sim::{
    generate_demos, sweep_configs, DemoDataset, PlatformShift, TaskKind, WorldConfig,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::exit::usage;
use crate::{
    AdaptArgs, CatalogArgs, EvalArgs, GenDemosArgs, MarginArgs, ModeArg, PlotExportArgs,
    ProjectArgs, ShiftArg, TrainArgs,
};

fn catalog(args: &CatalogArgs) -> Result<Vec<ManipulatorConfig>> {
    match &args.catalog {
        Some(p) => load_catalog(p).with_context(|| format!("reading catalog {}", p.display())),
        None => Ok(default_catalog()),
    }
}

fn world_config(path: Option<&Path>, kind: TaskKind) -> Result<WorldConfig> {
    let Some(p) = path else {
        return Ok(WorldConfig::for_task(kind));
    };
    let text =
        fs::read_to_string(p).with_context(|| format!("reading world config {}", p.display()))?;
    let w: WorldConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing world config {}", p.display()))?;
    if w.kind != kind {
        return Err(usage(format!(
            "world config is for {} but the task is {}",
            w.kind.name(),
            kind.name()
        )));
    }
    w.validate()?;
    Ok(w)
}

fn parse_state(v: &[f64]) -> Result<RobotState> {
    if v.len() != RobotState::DIM {
        return Err(usage(format!(
            "--state needs {} comma-separated values, got {}",
            RobotState::DIM,
            v.len()
        )));
    }
    Ok(RobotState::from_slice(v))
}

fn margins(m: &MarginArgs) -> Result<(f64, f64, CumulativeMode)> {
    let eps_safe = m.eps_safe.unwrap_or(DEFAULT_EPS_SAFE);
    let eps_task = m.eps_task.unwrap_or(DEFAULT_EPS_TASK);
    if !(eps_safe > 0.0) || !(eps_task > 0.0) {
        return Err(usage("margins must be > 0"));
    }
    let mode = if m.as_printed {
        CumulativeMode::AsPrinted
    } else {
        CumulativeMode::CorrectedPrefix
    };
    Ok((eps_safe, eps_task, mode))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn gen_demos(a: GenDemosArgs) -> Result<()> {
    let kind: TaskKind = a.task.parse()?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let cat = catalog(&a.catalog)?;
    let base = find_config(&cat, &a.base)?;
    let world = world_config(a.world.as_deref(), kind)?;
    let ds = generate_demos(&world, base, a.n, a.noise, a.seed)?;
    ds.save(&a.out)?;
    let sidecar = sidecar_path(&a.out);
    fs::write(&sidecar, serde_json::to_string_pretty(&ds.stats(1e-3)?)?)?;
    let steps: Vec<usize> = ds.demos.iter().map(|d| d.actions.len()).collect();
    let total: usize = steps.iter().sum();
    println!(
        "{} demos of {} on {}: {} steps (min {}, max {}, mean {:.1})",
        ds.demos.len(),
        kind.name(),
        base.id(),
        total,
        steps.iter().min().unwrap_or(&0),
        steps.iter().max().unwrap_or(&0),
        total as f64 / steps.len() as f64
    );
    log::info!("wrote {} and {}", a.out.display(), sidecar.display());
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or("demos".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.stats.json"))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let text =
        fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let ds =
        DemoDataset::from_json(&text).with_context(|| format!("parsing {}", a.data.display()))?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        horizon: a.horizon.unwrap_or(defaults.horizon),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        seed: a.seed,
        ..defaults
    };
    if config.horizon == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(usage(
            "horizon, batch size and learning rate must be positive",
        ));
    }
    if config.epochs == 0 {
        log::warn!("--epochs 0: the model keeps its initial weights");
    }
    let model = train_policy(&ds, a.steps, BetaSchedule::default(), &config)?;
    model.save(&a.out)?;
    if let Some(p) = &a.loss_csv {
        let mut w = csv::Writer::from_writer(create(p)?);
        w.write_record(["epoch", "loss"])?;
        for (i, l) in model.report.epoch_losses.iter().enumerate() {
            w.serialize((i, l))?;
        }
        w.flush()?;
    }
    let tail = smoothed_tail(&model.report.epoch_losses, 20).unwrap_or(model.report.final_loss);
    println!(
        "trained on {} examples for {} epochs: loss {:.4} -> {:.4} (last-20 mean {:.4})",
        model.report.num_examples,
        config.epochs,
        model.report.initial_loss,
        model.report.final_loss,
        tail
    );
    Ok(())
}

/// One executed step of one evaluation episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub config: String,
    pub mode: Mode,
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub d_base: f64,
    pub d_novel: f64,
    pub t: usize,
    pub position: [f64; 3],
    pub rotation: [f64; 3],
    pub gripper_width: f64,
    pub corrected: bool,
    pub nu: Vec<f64>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model =
        PolicyModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let cat = catalog(&a.catalog)?;
    let configs: Vec<ManipulatorConfig> = if a.configs.is_empty() {
        cat.clone()
    } else {
        a.configs
            .iter()
            .map(|id| find_config(&cat, id).cloned())
            .collect::<cdp_core::Result<_>>()?
    };
    check_base(&model, &cat)?;
    let mut world = world_config(a.world.as_deref(), model.task)?;
    if let Some(h) = a.platform_height {
        world.platform_height = h;
    }
    if let Some(s) = a.platform_shift {
        world.platform_shift = match s {
            ShiftArg::EpisodeWide => PlatformShift::EpisodeWide,
            ShiftArg::PlaceOnly => PlatformShift::PlaceOnly,
        };
    }
    let (eps_safe, eps_task, cumulative) = margins(&a.margins)?;
    let defaults = SessionOptions::default();
    let opts = SessionOptions {
        substeps: a.substeps.unwrap_or(defaults.substeps),
        projection_window: a.window.unwrap_or(defaults.projection_window),
        eps_safe,
        eps_task,
        cumulative,
        ..defaults
    };
    let modes = match a.mode {
        ModeArg::WithAp => vec![Mode::WithAp],
        ModeArg::WithoutAp => vec![Mode::WithoutAp],
        ModeArg::Both => vec![Mode::WithAp, Mode::WithoutAp],
    };
    if a.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let report = sweep_configs(
        &configs,
        &model.parts(),
        &world,
        &modes,
        a.episodes,
        a.seed,
        &opts,
    )?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    report.write_table_csv(create(&a.out_dir.join("results.csv"))?)?;
    report.write_counts_csv(create(&a.out_dir.join("counts.csv"))?)?;
    let mut traces = create(&a.out_dir.join("traces.jsonl"))?;
    let by_id: BTreeMap<String, &ManipulatorConfig> = configs.iter().map(|c| (c.id(), c)).collect();
    let mut episode_of: HashMap<(String, Mode), usize> = HashMap::new();
    for (id, mode, r) in &report.episodes {
        let e = episode_of.entry((id.clone(), *mode)).or_insert(0);
        for rec in &r.trace {
            let line = TraceLine {
                config: id.clone(),
                mode: *mode,
                episode: *e,
                seed: r.seed,
                success: r.success,
                d_base: model.base_config.tcp_arm_length,
                d_novel: by_id[id].tcp_arm_length,
                t: rec.t,
                position: rec.position,
                rotation: rec.rotation,
                gripper_width: rec.gripper_width,
                corrected: rec.corrected,
                nu: rec.nu.clone(),
            };
            serde_json::to_writer(&mut traces, &line)?;
            traces.write_all(b"\n")?;
        }
        *e += 1;
    }
    traces.flush()?;
    for o in &report.outcomes {
        println!(
            "{:<20} {:<10} {:>3}/{:<3} {:.2}",
            o.config_id,
            o.mode.name(),
            o.successes,
            o.episodes,
            o.success_rate()
        );
    }
    log::info!("wrote results to {}", a.out_dir.display());
    Ok(())
}

/// The catalog must agree with the model on the base configuration's geometry.
fn check_base(model: &PolicyModel, cat: &[ManipulatorConfig]) -> Result<()> {
    let b = &model.base_config;
    if let Some(c) = cat.iter().find(|c| c.id() == b.id()) {
        if (c.tcp_arm_length - b.tcp_arm_length).abs() > 1e-9
            || (c.ee_base_height - b.ee_base_height).abs() > 1e-9
        {
            return Err(usage(format!(
                "catalog entry {} (d {}, height {}) disagrees with the model's base (d {}, height {})",
                c.id(),
                c.tcp_arm_length,
                c.ee_base_height,
                b.tcp_arm_length,
                b.ee_base_height
            )));
        }
    }
    Ok(())
}

pub fn adapt(a: AdaptArgs) -> Result<()> {
    let cat = catalog(&a.catalog)?;
    let base = find_config(&cat, &a.base)?;
    let novel = find_config(&cat, &a.novel)?;
    let state = parse_state(&a.state)?;
    let params = derive_adaptation(base, novel)?;
    let out = if a.inverse {
        unadapt_state(&state, &params, &novel.gripper, &base.gripper)?
    } else {
        adapt_state(&state, &params, &novel.gripper, &base.gripper)?
    };
    let v = serde_json::json!({ "params": params, "state": out });
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ChunkFile {
    layout: ActionLayout,
    actions: Vec<Vec<f64>>,
}

pub fn project(a: ProjectArgs) -> Result<()> {
    let cat = catalog(&a.catalog)?;
    let base = find_config(&cat, &a.base)?;
    let novel = find_config(&cat, &a.novel)?;
    let raw = parse_state(&a.state)?;
    let text =
        fs::read_to_string(&a.chunk).with_context(|| format!("reading {}", a.chunk.display()))?;
    let file: ChunkFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.chunk.display()))?;
    let horizon = file.actions.len();
    let dim = file.layout.dim();
    if horizon == 0 || file.actions.iter().any(|r| r.len() != dim) {
        return Err(usage(format!(
            "chunk needs at least one row of {dim} values"
        )));
    }
    let (eps_safe, eps_task, cumulative) = margins(&a.margins)?;
    let cs = compile_constraints(base, novel, eps_safe, eps_task, horizon, &file.layout)?
        .with_cumulative(cumulative);
    let params = derive_adaptation(base, novel)?;
    let start = adapt_state(&raw, &params, &novel.gripper, &base.gripper)?;
    let flat: Vec<f64> = file.actions.iter().flatten().copied().collect();
    let chunk = ActionChunk::new(ndarray_from(horizon, dim, flat)?)?;
    let stats = NormStats::identity(dim);
    let (out, corr) = project_horizon(&start, &chunk, &stats, &cs)?;
    if let Some(p) = &a.csv {
        write_correction_csv(create(p)?, &chunk.latent, &corr, &file.layout)?;
    }
    let result = serde_json::json!({
        "layout": file.layout,
        "actions": out.latent.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "nu": corr.steps.iter().map(|s| s.nu).collect::<Vec<_>>(),
        "correction_norm": corr.norm(),
    });
    let text = serde_json::to_string_pretty(&result)?;
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn ndarray_from(rows: usize, cols: usize, v: Vec<f64>) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), v).map_err(|e| usage(e.to_string()))
}

fn trace_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(usage(format!("no traces at {}", path.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Default)]
struct Pair {
    with: Option<TraceLine>,
    without: Option<TraceLine>,
}

/// Tilt the base arm would need for the same lateral offset.
fn base_equivalent(line: &TraceLine) -> Option<f64> {
    let arg = line.d_novel * line.rotation[0].sin() / line.d_base;
    (arg.abs() <= 1.0).then(|| arg.asin())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn plot_export(a: PlotExportArgs) -> Result<()> {
    let files = trace_files(&a.traces)?;
    let mut lines = Vec::new();
    for f in &files {
        for (i, line) in BufReader::new(File::open(f)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", f.display(), i + 1))?;
            lines.push(parsed);
        }
    }
    if lines.is_empty() {
        return Err(usage(format!(
            "no trace records under {}",
            a.traces.display()
        )));
    }
    let mut pairs: BTreeMap<(String, usize, usize), Pair> = BTreeMap::new();
    for l in &lines {
        let slot = pairs.entry((l.config.clone(), l.episode, l.t)).or_default();
        match l.mode {
            Mode::WithAp => slot.with = Some(l.clone()),
            Mode::WithoutAp => slot.without = Some(l.clone()),
        }
    }
    fs::create_dir_all(&a.out_dir)?;
    let mut overlay = csv::Writer::from_writer(create(&a.out_dir.join("overlay.csv"))?);
    overlay.write_record([
        "config",
        "episode",
        "t",
        "z_with_ap",
        "z_without_ap",
        "theta_x_with_ap",
        "theta_x_without_ap",
        "theta_x_base_with_ap",
        "d_novel",
        "d_base",
    ])?;
    for ((config, episode, t), p) in &pairs {
        let w = p.with.as_ref();
        let wo = p.without.as_ref();
        let d = w.or(wo).expect("pair has at least one side");
        overlay.write_record([
            config.clone(),
            episode.to_string(),
            t.to_string(),
            opt(w.map(|l| l.position[2])),
            opt(wo.map(|l| l.position[2])),
            opt(w.map(|l| l.rotation[0])),
            opt(wo.map(|l| l.rotation[0])),
            opt(w.and_then(base_equivalent)),
            d.d_novel.to_string(),
            d.d_base.to_string(),
        ])?;
    }
    overlay.flush()?;

    let mut corr = csv::Writer::from_writer(create(&a.out_dir.join("corrections.csv"))?);
    corr.write_record([
        "config",
        "mode",
        "episode",
        "t",
        "corrected",
        "nu_z",
        "nu_rx",
        "nu_norm",
    ])?;
    for l in &lines {
        let at = |i: usize| l.nu.get(i).copied().unwrap_or(0.0);
        let norm = l.nu.iter().map(|v| v * v).sum::<f64>().sqrt();
        corr.serialize((
            &l.config,
            l.mode.name(),
            l.episode,
            l.t,
            l.corrected,
            at(2),
            at(3),
            norm,
        ))?;
    }
    corr.flush()?;
    println!(
        "{} records from {} file(s), {} aligned rows",
        lines.len(),
        files.len(),
        pairs.len()
    );
    Ok(())
}
