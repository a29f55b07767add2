use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ringflow_core::dataset::{generate_dataset, load_dataset, save_dataset, split, Dataset, SplitDataset};
use ringflow_core::energy::{
    divergence_matrix, export_histogram, normalize_all, sample_energies, DivergenceReport, Normalization,
};
use ringflow_core::predictor::{
    load_checkpoint, rollout, save_checkpoint, train, ConvSpec, Optimizer, PredictorConfig, PredictorModel,
};
use ringflow_core::rng::derive_seed;
use ringflow_core::{
    side_by_side, simulate, simulate_from, DeltaMode, ModelParams, PgmFormat, SimulationConfig, TimeSpaceDiagram,
};
use serde::Serialize;

use crate::args::*;

/// A problem with the requested settings, reported with exit status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl fmt::Display) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("--{flag} is required (on the command line or in the config file)")))
}

fn seed_or_entropy(value: Option<u64>, flag: &str) -> Option<u64> {
    Some(value.unwrap_or_else(|| {
        let s = rand::random::<u64>() & MAX_SEED;
        eprintln!("{flag}: {s} (drawn from entropy)");
        s
    }))
}

/// Prints the settings actually used, as a config file that reproduces the run.
fn echo(section: &str, physics: Option<&PhysicsArgs>, args: &impl Serialize) -> Result<()> {
    let mut table = toml::Table::new();
    if let Some(p) = physics {
        table.insert("model".into(), toml::Value::try_from(p)?);
    }
    table.insert(section.into(), toml::Value::try_from(args)?);
    eprint!("# effective configuration\n{}", toml::to_string(&table)?);
    Ok(())
}

fn resolve_physics(p: PhysicsArgs) -> (PhysicsArgs, ModelParams, DeltaMode) {
    let d = ModelParams::default();
    let params = ModelParams {
        k0: p.k0.unwrap_or(d.k0),
        b: p.b.unwrap_or(d.b),
        beta: p.beta.unwrap_or(d.beta),
        a0: p.a0.unwrap_or(d.a0),
        look_ahead: p.look_ahead.unwrap_or(d.look_ahead),
        density: p.density.unwrap_or(d.density),
    };
    let mode = p.delta_mode.unwrap_or_default();
    let echoed = PhysicsArgs {
        k0: Some(params.k0),
        b: Some(params.b),
        beta: Some(params.beta),
        a0: Some(params.a0),
        look_ahead: Some(params.look_ahead),
        density: Some(params.density),
        delta_mode: Some(mode),
    };
    (echoed, params, mode)
}

fn pgm_format(f: Option<ImageFormat>) -> PgmFormat {
    match f.unwrap_or(ImageFormat::P5) {
        ImageFormat::P5 => PgmFormat::P5,
        ImageFormat::P2 => PgmFormat::P2,
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn write_diagram(d: &TimeSpaceDiagram, path: &Path, format: PgmFormat) -> Result<()> {
    if is_csv(path) {
        d.write_csv(path)
    } else {
        d.write_pgm(path, format)
    }
    .with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn simulate_cmd(args: SimulateArgs, physics: PhysicsArgs) -> Result<()> {
    let (physics, model, delta_mode) = resolve_physics(physics);
    let args = SimulateArgs {
        sites: args.sites.or(Some(100)),
        steps: args.steps.or(Some(200)),
        seed: seed_or_entropy(args.seed, "seed"),
        format: args.format.or(Some(ImageFormat::P5)),
        ..args
    };
    echo("simulate", Some(&physics), &args)?;
    let out = required(args.out.clone(), "out")?;
    let cfg = SimulationConfig {
        model,
        n_sites: args.sites.unwrap(),
        n_steps: args.steps.unwrap(),
        seed: args.seed.unwrap(),
        delta_mode,
    };
    cfg.validate().map_err(usage)?;
    let diagram = simulate(&cfg)?;
    write_diagram(&diagram, &out, pgm_format(args.format))?;
    eprintln!("wrote {} ({} steps, {} sites)", out.display(), diagram.n_steps(), diagram.n_sites());
    Ok(())
}

fn matrix_csv(sizes: &[usize], m: &[Vec<DivergenceReport>], pick: fn(&DivergenceReport) -> f64) -> String {
    let mut out = String::from("n");
    for n in sizes {
        out.push_str(&format!(",{n}"));
    }
    out.push('\n');
    for (n, row) in sizes.iter().zip(m) {
        out.push_str(&n.to_string());
        for r in row {
            out.push_str(&format!(",{}", pick(r)));
        }
        out.push('\n');
    }
    out
}

/// Writes `hist_n<N>.csv` per size plus `divergence_ks.csv` and
/// `divergence_l1.csv`; returns the largest pairwise KS statistic.
fn energy_scaling(
    sizes: &[usize],
    samples: usize,
    mode: Normalization,
    params: &ModelParams,
    seed: u64,
    dir: &Path,
) -> Result<f64> {
    ensure_dir(dir)?;
    let drawn = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| sample_energies(n, params.density, samples, params, derive_seed(seed, k as u64)))
        .collect::<ringflow_core::Result<Vec<_>>>()?;
    let dists = normalize_all(&drawn, mode)?;
    for d in &dists {
        export_histogram(d, dir.join(format!("hist_n{}.csv", d.n_sites)))?;
    }
    let m = divergence_matrix(&dists)?;
    fs::write(dir.join("divergence_ks.csv"), matrix_csv(sizes, &m, |r| r.ks))?;
    fs::write(dir.join("divergence_l1.csv"), matrix_csv(sizes, &m, |r| r.l1))?;
    Ok(m.iter().flatten().map(|r| r.ks).fold(0.0, f64::max))
}

pub fn analyze_energy_cmd(args: EnergyArgs, physics: PhysicsArgs) -> Result<()> {
    let (physics, params, _) = resolve_physics(physics);
    let args = EnergyArgs {
        sizes: args.sizes.or_else(|| Some(vec![30, 60, 120, 240, 600])),
        samples: args.samples.or(Some(3200)),
        normalization: args.normalization.or(Some(Normalization::PerSiteZScore)),
        seed: seed_or_entropy(args.seed, "seed"),
        ..args
    };
    echo("analyze-energy", Some(&physics), &args)?;
    let out = required(args.out.clone(), "out")?;
    let sizes = args.sizes.unwrap();
    if sizes.is_empty() {
        return Err(usage("--sizes needs at least one ring size"));
    }
    for &n in &sizes {
        params.validate_for(n).map_err(usage)?;
    }
    let samples = args.samples.unwrap();
    if samples < 1 {
        return Err(usage("--samples must be at least 1"));
    }
    let max_ks = energy_scaling(&sizes, samples, args.normalization.unwrap(), &params, args.seed.unwrap(), &out)?;
    eprintln!("max pairwise KS statistic {max_ks:.4}; wrote {}", out.display());
    Ok(())
}

pub fn gen_dataset_cmd(args: DatasetArgs, physics: PhysicsArgs) -> Result<()> {
    let (physics, params, mode) = resolve_physics(physics);
    let args = DatasetArgs {
        runs: args.runs.or(Some(1000)),
        sites: args.sites.or(Some(50)),
        window: args.window.or(Some(30)),
        seed: seed_or_entropy(args.seed, "seed"),
        ..args
    };
    echo("gen-dataset", Some(&physics), &args)?;
    let out = required(args.out.clone(), "out")?;
    let (runs, n, w) = (args.runs.unwrap(), args.sites.unwrap(), args.window.unwrap());
    if runs < 1 || w < 1 {
        return Err(usage("--runs and --window must be at least 1"));
    }
    params.validate_for(n).map_err(usage)?;
    let ds = generate_dataset(runs, n, w, &params, mode, args.seed.unwrap())?;
    save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(csv) = &args.csv {
        fs::write(csv, ds.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    eprintln!("wrote {} samples of {w}x{n} to {}", ds.len(), out.display());
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--ratio must lie in (0, 1), got {ratio}")))
    }
}

pub fn split_cmd(args: SplitArgs) -> Result<()> {
    let data = required(args.data.clone(), "data")?;
    let args = SplitArgs {
        ratio: args.ratio.or(Some(0.2)),
        seed: seed_or_entropy(args.seed, "seed"),
        train_out: args.train_out.or_else(|| Some(sibling(&data, "train.trmc"))),
        test_out: args.test_out.or_else(|| Some(sibling(&data, "test.trmc"))),
        ..args
    };
    echo("split", None, &args)?;
    check_ratio(args.ratio.unwrap())?;
    let s = split(&load(&data)?, args.ratio.unwrap(), args.seed.unwrap())?;
    let (train_out, test_out) = (args.train_out.unwrap(), args.test_out.unwrap());
    save_dataset(&s.train, &train_out)?;
    save_dataset(&s.test, &test_out)?;
    eprintln!(
        "wrote {} training samples to {} and {} held-out samples to {}",
        s.train.len(),
        train_out.display(),
        s.test.len(),
        test_out.display()
    );
    Ok(())
}

fn predictor_config(args: &TrainArgs, data: &Dataset) -> PredictorConfig {
    let base = match args.preset.unwrap_or(Preset::Default) {
        Preset::Default => PredictorConfig::default(),
        Preset::Compact => PredictorConfig::compact(),
    };
    let optimizer = match (args.optimizer, base.optimizer) {
        (Some(OptimizerKind::Adam), Optimizer::Adam { .. }) | (None, _) => base.optimizer,
        (Some(OptimizerKind::Adam), _) => Optimizer::adam(),
        (Some(OptimizerKind::Momentum), _) => Optimizer::default(),
    };
    let optimizer = match (optimizer, args.momentum) {
        (Optimizer::Momentum { .. }, Some(m)) => Optimizer::Momentum { momentum: m },
        (o, _) => o,
    };
    let conv = |c: ConvSpec| ConvSpec {
        kernel_width: args.kernel_width.unwrap_or(c.kernel_width),
        channels: args.channels.unwrap_or(c.channels),
    };
    PredictorConfig {
        n_sites: data.n_sites,
        window: data.window,
        conv: [conv(base.conv[0]), conv(base.conv[1])],
        dense_in: args.dense_in.unwrap_or(base.dense_in),
        dropout_rate: args.dropout.unwrap_or(base.dropout_rate),
        lstm_hidden: args.lstm_hidden.unwrap_or(base.lstm_hidden),
        alpha: args.alpha.unwrap_or(base.alpha),
        learning_rate: args.learning_rate.unwrap_or(base.learning_rate),
        epochs: args.epochs.unwrap_or(base.epochs),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        init_seed: args.init_seed.unwrap_or(base.init_seed),
        optimizer,
        grad_clip: args.grad_clip.unwrap_or(base.grad_clip),
    }
}

/// The flags that reproduce `cfg`, for the echoed configuration.
fn echo_train_args(args: TrainArgs, cfg: &PredictorConfig) -> TrainArgs {
    let (optimizer, momentum) = match cfg.optimizer {
        Optimizer::Momentum { momentum } => (OptimizerKind::Momentum, Some(momentum)),
        Optimizer::Adam { .. } => (OptimizerKind::Adam, None),
    };
    TrainArgs {
        epochs: Some(cfg.epochs),
        alpha: Some(cfg.alpha),
        learning_rate: Some(cfg.learning_rate),
        optimizer: Some(optimizer),
        momentum,
        batch_size: Some(cfg.batch_size),
        dropout: Some(cfg.dropout_rate),
        dense_in: Some(cfg.dense_in),
        kernel_width: Some(cfg.conv[0].kernel_width),
        channels: Some(cfg.conv[0].channels),
        lstm_hidden: Some(cfg.lstm_hidden),
        grad_clip: Some(cfg.grad_clip),
        init_seed: Some(cfg.init_seed),
        ..args
    }
}

fn fit(model: PredictorModel, split: &SplitDataset, history: Option<&Path>) -> Result<PredictorModel> {
    let (model, hist) = train(model, split, |m| {
        eprintln!(
            "epoch {:>4}  train loss {:.4} acc {:.4}  held-out loss {:.4} acc {:.4}",
            m.epoch, m.train_loss, m.train_accuracy, m.test_loss, m.test_accuracy
        )
    })?;
    if let Some(path) = history {
        fs::write(path, hist.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(model)
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let data_path = required(args.data.clone(), "data")?;
    let data = load(&data_path)?;
    let split = match &args.test {
        Some(test) => SplitDataset {
            test: load(test)?,
            train_indices: (0..data.len()).collect(),
            test_indices: Vec::new(),
            train: data.clone(),
            ratio: 0.0,
            seed: 0,
        },
        None => {
            let ratio = args.ratio.unwrap_or(0.2);
            check_ratio(ratio)?;
            let seed = seed_or_entropy(args.split_seed, "split-seed").unwrap();
            split(&data, ratio, seed)?
        }
    };
    let args = TrainArgs {
        ratio: args.test.is_none().then_some(split.ratio),
        split_seed: args.test.is_none().then_some(split.seed),
        init_seed: seed_or_entropy(args.init_seed, "init-seed"),
        preset: args.preset.or(Some(Preset::Default)),
        ..args
    };
    let cfg = predictor_config(&args, &data);
    let args = echo_train_args(args, &cfg);
    echo("train", None, &args)?;
    let out = required(args.out.clone(), "out")?;
    let model = PredictorModel::new(cfg).map_err(usage)?;
    let model = fit(model, &split, args.history.as_deref())?;
    save_checkpoint(&model, &out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Per-step vehicle count and agreement of a rollout against the truth.
fn rollout_report(pred: &TimeSpaceDiagram, truth: &TimeSpaceDiagram, window: usize) -> String {
    let mut out = String::from("step,true_count,predicted_count,accuracy\n");
    for t in window..pred.n_rows().min(truth.n_rows()) {
        let (p, q) = (pred.row(t), truth.row(t));
        let hits = p.iter().zip(q).filter(|(a, b)| a == b).count();
        out.push_str(&format!(
            "{},{},{},{}\n",
            t + 1 - window,
            q.iter().filter(|&&b| b == 1).count(),
            p.iter().filter(|&&b| b == 1).count(),
            hits as f64 / p.len() as f64
        ));
    }
    out
}

pub fn predict_cmd(args: PredictArgs) -> Result<()> {
    let args = PredictArgs {
        horizon: args.horizon.or(Some(30)),
        format: args.format.or(Some(ImageFormat::P5)),
        ..args
    };
    let model_path = required(args.model.clone(), "model")?;
    let input = required(args.input.clone(), "input")?;
    let out = required(args.out.clone(), "out")?;
    let args = PredictArgs {
        compare: match &args.truth {
            Some(_) => args.compare.or_else(|| Some(sibling(&out, "compare.pgm"))),
            None => args.compare,
        },
        ..args
    };
    echo("predict", None, &args)?;
    let model = load_checkpoint(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let seed = TimeSpaceDiagram::read_csv(&input).with_context(|| format!("reading {}", input.display()))?;
    let w = model.config.window;
    if seed.n_rows() < w || seed.n_sites() != model.config.n_sites {
        return Err(usage(format!(
            "--input has {} rows of {} sites; the model needs at least {w} rows of {}",
            seed.n_rows(),
            seed.n_sites(),
            model.config.n_sites
        )));
    }
    // only the most recent W rows feed the model
    let seed = seed.slice_rows(seed.n_rows() - w, seed.n_rows())?;
    let horizon = args.horizon.unwrap();
    let pred = rollout(&model, &seed, horizon)?;
    let format = pgm_format(args.format);
    write_diagram(&pred, &out, format)?;
    eprintln!("wrote {} ({} rows)", out.display(), pred.n_rows());

    if let Some(truth_path) = &args.truth {
        let truth = TimeSpaceDiagram::read_csv(truth_path).with_context(|| format!("reading {}", truth_path.display()))?;
        let truth = if truth.n_rows() == horizon {
            let mut full = seed.clone();
            for row in truth.rows() {
                full.push_bits(row).map_err(usage)?;
            }
            full
        } else if truth.n_rows() == w + horizon {
            if truth.slice_rows(0, w)? != seed {
                return Err(usage("the first rows of --truth differ from the seed window"));
            }
            truth
        } else {
            return Err(usage(format!(
                "--truth has {} rows; expected {horizon} (continuation) or {} (seed + continuation)",
                truth.n_rows(),
                w + horizon
            )));
        };
        let compare = args.compare.unwrap();
        side_by_side(&[&truth, &pred], 2)?
            .write(&compare, format)
            .with_context(|| format!("writing {}", compare.display()))?;
        eprint!("{}", rollout_report(&pred, &truth, w));
        eprintln!("wrote {}", compare.display());
    }
    Ok(())
}

pub fn reproduce_cmd(args: ReproduceArgs, physics: PhysicsArgs) -> Result<()> {
    let (physics, params, mode) = resolve_physics(physics);
    let args = ReproduceArgs {
        out: args.out.or_else(|| Some(PathBuf::from("reproduce"))),
        seed: args.seed.or(Some(2024)),
        epochs: args.epochs.or(Some(PredictorConfig::compact().epochs)),
        ..args
    };
    echo("reproduce", Some(&physics), &args)?;
    let experiment = required(args.experiment, "experiment")?;
    let (dir, seed) = (args.out.clone().unwrap(), args.seed.unwrap());
    ensure_dir(&dir)?;
    let run = |e: Experiment| experiment == e || experiment == Experiment::All;

    if run(Experiment::EnergyScaling) {
        let sizes = [30, 60, 120, 240, 600];
        for &n in &sizes {
            params.validate_for(n).map_err(usage)?;
        }
        let max_ks = energy_scaling(&sizes, 3200, Normalization::PerSiteZScore, &params, seed, &dir.join("energy"))?;
        eprintln!("energy scaling: max pairwise KS {max_ks:.4}");
    }
    if !(run(Experiment::Training) || run(Experiment::Rollout)) {
        return Ok(());
    }

    params.validate_for(50).map_err(usage)?;
    let data = generate_dataset(1000, 50, 30, &params, mode, seed)?;
    save_dataset(&data, dir.join("dataset.trmc"))?;
    let split = split(&data, 0.2, seed)?;
    let model_path = dir.join("model.trnn");
    let model = match (&args.model, run(Experiment::Training)) {
        (Some(path), false) => load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?,
        _ => {
            let cfg = PredictorConfig {
                epochs: args.epochs.unwrap(),
                init_seed: seed,
                ..PredictorConfig::compact()
            };
            let model = fit(PredictorModel::new(cfg).map_err(usage)?, &split, Some(&dir.join("history.csv")))?;
            save_checkpoint(&model, &model_path)?;
            model
        }
    };

    if run(Experiment::Rollout) {
        let first = &split.test.samples[0];
        let rows: Vec<Vec<u8>> = first.input.chunks(data.n_sites).map(<[u8]>::to_vec).collect();
        let window = TimeSpaceDiagram::from_rows(&rows)?;
        let horizon = 30;
        let cfg = SimulationConfig {
            model: params,
            n_sites: data.n_sites,
            n_steps: horizon,
            seed: derive_seed(seed, split.test_indices[0] as u64),
            delta_mode: mode,
        };
        let future = simulate_from(&window.config(window.n_rows() - 1), &cfg)?;
        let mut truth = window.clone();
        for t in 1..=horizon {
            truth.push_bits(future.row(t))?;
        }
        let pred = rollout(&model, &window, horizon)?;
        window.write_csv(dir.join("rollout_seed.csv"))?;
        truth.write_csv(dir.join("rollout_truth.csv"))?;
        pred.write_csv(dir.join("rollout_pred.csv"))?;
        side_by_side(&[&truth, &pred], 2)?.write(dir.join("rollout_compare.pgm"), PgmFormat::P5)?;
        fs::write(dir.join("rollout_report.csv"), rollout_report(&pred, &truth, window.n_rows()))?;
        eprintln!("rollout: wrote rollout_compare.pgm and rollout_report.csv");
    }
    eprintln!("artifacts in {}", dir.display());
    Ok(())
}
