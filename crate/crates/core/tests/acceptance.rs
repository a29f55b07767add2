//! End-to-end acceptance run: seven criteria, one result line each.
//!
//! Run with `cargo test -p ringflow-core --test acceptance`. Artifacts
//! (histograms, the rollout comparison image) go to
//! `target/tmp/acceptance/`. The process exits non-zero if any criterion
//! fails.

mod common;

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use ringflow_core::dataset::{decode_dataset, encode_dataset, generate_dataset, split, Dataset, SplitDataset};
use ringflow_core::energy::{divergence_matrix, export_histogram, normalize_all, sample_energies, Normalization};
use ringflow_core::engine::{sweep_in_place, DeltaMode};
use ringflow_core::predictor::{
    decode_checkpoint, encode_checkpoint, evaluate, rollout, train, ConvSpec, Optimizer, PredictorConfig,
    PredictorModel,
};
use ringflow_core::rng::{derive_seed, rng_from_seed};
use ringflow_core::*;

use common::{gradient_errors, oracle_delta, random_sample, tiny_config, FD_TOL};

/// Frozen from oracle runs over 8 seeds (observed maximum 0.044).
const KS_THRESHOLD: f64 = 0.06;
const DATA_SEED: u64 = 2024;
const SPLIT_SEED: u64 = 7;
const TRUTH_SEED: u64 = 99;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn artifacts() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn conservation_and_forward_motion() -> Outcome {
    let sizes = [30, 50, 100];
    let densities = [0.2, 0.5, 0.8];
    let mut violations = Vec::new();
    for run in 0..100u64 {
        let n = sizes[run as usize % 3];
        let density = densities[(run as usize / 3) % 3];
        let model = ModelParams {
            density,
            ..ModelParams::default()
        };
        let mut rng = rng_from_seed(derive_seed(1, run));
        let mut cfg = random_initial(n, density, &mut rng).unwrap();
        let n0 = cfg.vehicle_count();
        for t in 0..200 {
            let before = cfg.bits().to_vec();
            sweep_in_place(&mut cfg, &model, DeltaMode::ExchangeDelta, &mut rng);
            let after = cfg.bits();
            if cfg.vehicle_count() != n0 {
                violations.push(format!("run {run} step {t}: count {} != {n0}", cfg.vehicle_count()));
            }
            // a site may only empty by handing its vehicle to the next site,
            // and only fill by receiving from the previous one
            for i in 0..n {
                let next = (i + 1) % n;
                let prev = (i + n - 1) % n;
                let left = before[i] == 1 && after[i] == 0;
                let filled = before[i] == 0 && after[i] == 1;
                if left && !(before[next] == 0 && after[next] == 1) {
                    violations.push(format!("run {run} step {t}: vehicle at {i} did not move forward"));
                }
                if filled && !(before[prev] == 1 && after[prev] == 0) {
                    violations.push(format!("run {run} step {t}: site {i} filled from behind"));
                }
            }
        }
    }
    let detail = match violations.first() {
        None => "100 runs x 200 sweeps, N in {30,50,100}, density in {0.2,0.5,0.8}".into(),
        Some(v) => format!("{} violations, first: {v}", violations.len()),
    };
    outcome(violations.is_empty(), detail)
}

fn metropolis_oracle() -> Outcome {
    // (vehicles, ring size, beta, a0); the move under test is the legal move
    // with the lowest index, so the scan reaches it before anything changes
    let cases: [(&[usize], usize, f64, f64); 5] = [
        (&[0], 10, 1.0, 0.6),
        (&[0, 1, 2], 12, 1.0, 1.0),
        (&[0, 1, 2], 12, 0.3, 1.0),
        (&[0, 2, 3, 4], 14, 1.0, 0.5),
        (&[0, 1], 12, 2.0, 0.9),
    ];
    const TRIALS: usize = 100_000;
    let mut worst_sigma: f64 = 0.0;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut rng = rng_from_seed(3);
    for (k, (vehicles, n, beta, a0)) in cases.iter().enumerate() {
        let params = ModelParams {
            beta: *beta,
            a0: *a0,
            ..ModelParams::default()
        };
        let cfg = RingConfiguration::with_vehicles(*n, vehicles).unwrap();
        let bits = cfg.bits();
        let i = (0..*n)
            .find(|&i| bits[i] == 1 && bits[(i + 1) % n] == 0)
            .unwrap_or_else(|| panic!("case {k} has no legal move"));
        let dh = oracle_delta(bits, i, params.k0, params.look_ahead);
        let p = (a0 * (-beta * dh).exp()).min(1.0);
        let mut accepted = 0usize;
        for _ in 0..TRIALS {
            let mut c = cfg.clone();
            sweep_in_place(&mut c, &params, DeltaMode::ExchangeDelta, &mut rng);
            accepted += usize::from(c.get(i) == 0 && c.get(i + 1) == 1);
        }
        let rate = accepted as f64 / TRIALS as f64;
        let sigma = (p * (1.0 - p) / TRIALS as f64).sqrt();
        let z = if sigma > 0.0 {
            (rate - p).abs() / sigma
        } else if rate == p {
            0.0
        } else {
            f64::INFINITY
        };
        worst_sigma = worst_sigma.max(z);
        pass &= z <= 3.0;
        lines.push(format!("dH={dh:.4} p={p:.4} obs={rate:.4}"));
    }

    let mut worst_rel: f64 = 0.0;
    let mut checked = 0;
    let mut rng = rng_from_seed(4);
    while checked < 1000 {
        let n = rng.random_range(8..80);
        let look_ahead = rng.random_range(2..n.min(12));
        let params = ModelParams {
            k0: rng.random_range(0.1..3.0),
            b: rng.random_range(-2.0..2.0),
            look_ahead,
            ..ModelParams::default()
        };
        let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let movers: Vec<usize> = (0..n).filter(|&i| bits[i] == 1 && bits[(i + 1) % n] == 0).collect();
        if movers.is_empty() {
            continue;
        }
        let i = movers[rng.random_range(0..movers.len())];
        let got = exchange_delta(&RingConfiguration::from_bits(&bits).unwrap(), i, &params).unwrap();
        let want = oracle_delta(&bits, i, params.k0, look_ahead);
        // an exact zero change has no relative scale; measure it against k0
        let scale = if want == 0.0 { params.k0 } else { want.abs() };
        worst_rel = worst_rel.max((got - want).abs() / scale);
        checked += 1;
    }
    pass &= worst_rel <= 1e-12;
    outcome(
        pass,
        format!(
            "worst deviation {worst_sigma:.2} sigma over 5x1e5 trials [{}]; dH worst rel err {worst_rel:.1e} on 1000 moves",
            lines.join("; ")
        ),
    )
}

fn scale_invariance() -> Outcome {
    let sizes = [30, 60, 120, 240, 600];
    let params = ModelParams::default();
    let samples: Vec<_> = sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| sample_energies(n, 0.5, 3200, &params, derive_seed(11, k as u64)).unwrap())
        .collect();
    let dists = normalize_all(&samples, Normalization::PerSiteZScore).unwrap();
    let dir = artifacts();
    for d in &dists {
        export_histogram(d, dir.join(format!("energy_hist_n{}.csv", d.n_sites))).unwrap();
    }
    let m = divergence_matrix(&dists).unwrap();
    let mut worst = (0.0, 0, 0);
    for i in 0..sizes.len() {
        for j in i + 1..sizes.len() {
            if m[i][j].ks > worst.0 {
                worst = (m[i][j].ks, sizes[i], sizes[j]);
            }
        }
    }
    // the raw energies must not look alike; otherwise the test has no power
    let raw = normalize_all(&[samples[0].clone(), samples[4].clone()], Normalization::PerSite).unwrap();
    let raw_ks = divergence_matrix(&raw).unwrap()[0][1].ks;
    outcome(
        worst.0 < KS_THRESHOLD && raw_ks > KS_THRESHOLD,
        format!(
            "max pairwise KS {:.4} (N={} vs N={}) < {KS_THRESHOLD}; unstandardized per-site KS 30 vs 600 = {raw_ks:.3}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let model = PredictorModel::new(tiny_config()).unwrap();
    let mut worst = ("", 0.0);
    for seed in 0..3 {
        let sample = random_sample(&model.config, 100 + seed);
        for mask in [None, Some(7 + seed)] {
            for (name, err) in gradient_errors(&model, &sample, mask) {
                if err > worst.1 {
                    worst = (name, err);
                }
            }
        }
    }
    outcome(
        worst.1 <= FD_TOL,
        format!("worst relative error {:.2e} ({}) over all 11 tensors", worst.1, worst.0),
    )
}

fn acceptance_config() -> PredictorConfig {
    PredictorConfig {
        n_sites: 50,
        window: 30,
        conv: [
            ConvSpec {
                kernel_width: 7,
                channels: 8,
            },
            ConvSpec {
                kernel_width: 7,
                channels: 8,
            },
        ],
        dense_in: 4,
        lstm_hidden: 8,
        dropout_rate: 0.25,
        alpha: 0.001,
        optimizer: Optimizer::adam(),
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 6,
        init_seed: 1,
        ..PredictorConfig::default()
    }
}

fn corpus(mode: DeltaMode) -> (ModelParams, SplitDataset) {
    let params = ModelParams::default();
    let ds = generate_dataset(1000, 50, 30, &params, mode, DATA_SEED).unwrap();
    (params, split(&ds, 0.2, SPLIT_SEED).unwrap())
}

/// Expected per-site accuracy of the best possible predictor, estimated
/// by sampling the next sweep from each held-out window's last row.
fn bayes_ceiling(data: &Dataset, params: &ModelParams, mode: DeltaMode) -> f64 {
    const DRAWS: usize = 400;
    let n = data.n_sites;
    let mut total = 0.0;
    let mut rng = rng_from_seed(5);
    for s in &data.samples {
        let last = RingConfiguration::from_bits(s.input_row(data.window - 1)).unwrap();
        let mut occupied = vec![0usize; n];
        for _ in 0..DRAWS {
            let mut c = last.clone();
            sweep_in_place(&mut c, params, mode, &mut rng);
            for (o, &b) in occupied.iter_mut().zip(c.bits()) {
                *o += b as usize;
            }
        }
        total += occupied
            .iter()
            .map(|&o| {
                let p = o as f64 / DRAWS as f64;
                p.max(1.0 - p)
            })
            .sum::<f64>()
            / n as f64;
    }
    total / data.len() as f64
}

fn train_model(split: &SplitDataset) -> (PredictorModel, f64) {
    let t0 = Instant::now();
    let (model, _) = train(PredictorModel::new(acceptance_config()).unwrap(), split, |m| {
        eprintln!(
            "    epoch {:>2}  train loss {:.4} acc {:.4}  held-out loss {:.4} acc {:.4}",
            m.epoch, m.train_loss, m.train_accuracy, m.test_loss, m.test_accuracy
        )
    })
    .unwrap();
    (model, t0.elapsed().as_secs_f64())
}

fn training_convergence(split: &SplitDataset, model: &PredictorModel, params: &ModelParams, secs: f64) -> Outcome {
    let tr = evaluate(model, &split.train).unwrap();
    let te = evaluate(model, &split.test).unwrap();
    let ceiling = bayes_ceiling(&split.test, params, DeltaMode::ExchangeDelta);
    outcome(
        tr.accuracy >= 0.99 && te.accuracy >= 0.90,
        format!(
            "train acc {:.4} (need >= 0.99), held-out acc {:.4} (need >= 0.90); sampled Bayes ceiling {ceiling:.4}; training took {:.0}s",
            tr.accuracy, te.accuracy, secs
        ),
    )
}

struct RolloutCheck {
    count_ok: bool,
    accuracy_ok: bool,
    worst_count_dev: f64,
    worst_accuracy: f64,
}

fn seed_window(split: &SplitDataset, k: usize) -> TimeSpaceDiagram {
    let s = &split.test.samples[k];
    let rows: Vec<Vec<u8>> = s.input.chunks(split.test.n_sites).map(<[u8]>::to_vec).collect();
    TimeSpaceDiagram::from_rows(&rows).unwrap()
}

/// True continuation of a seed window: the seed rows plus `horizon` sweeps
/// from its last row.
fn continuation(seed: &TimeSpaceDiagram, horizon: usize, params: &ModelParams, mode: DeltaMode, stream: u64) -> TimeSpaceDiagram {
    let last = seed.config(seed.n_rows() - 1);
    let cfg = SimulationConfig {
        model: *params,
        n_sites: seed.n_sites(),
        n_steps: horizon,
        seed: stream,
        delta_mode: mode,
    };
    let future = simulate_from(&last, &cfg).unwrap();
    let mut out = seed.clone();
    for t in 1..=horizon {
        out.push_bits(future.row(t)).unwrap();
    }
    out
}

fn compare_rollout(pred: &TimeSpaceDiagram, truth: &TimeSpaceDiagram, window: usize) -> RolloutCheck {
    let mut check = RolloutCheck {
        count_ok: true,
        accuracy_ok: true,
        worst_count_dev: 0.0,
        worst_accuracy: 1.0,
    };
    for t in window..truth.n_rows() {
        let (p, q) = (pred.row(t), truth.row(t));
        let true_count = q.iter().filter(|&&b| b == 1).count() as f64;
        let count = p.iter().filter(|&&b| b == 1).count() as f64;
        let dev = (count - true_count).abs() / true_count.max(1.0);
        let acc = p.iter().zip(q).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
        check.worst_count_dev = check.worst_count_dev.max(dev);
        check.worst_accuracy = check.worst_accuracy.min(acc);
        check.count_ok &= dev <= 0.10;
        check.accuracy_ok &= acc > 0.5;
    }
    check
}

fn rollout_replication(split: &SplitDataset, model: &PredictorModel, params: &ModelParams) -> Outcome {
    let t0 = Instant::now();
    let w = split.test.window;
    let seed = seed_window(split, 0);
    let stream = derive_seed(TRUTH_SEED, split.test_indices[0] as u64);
    let truth = continuation(&seed, 30, params, DeltaMode::ExchangeDelta, stream);
    let pred = rollout(model, &seed, 30).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let shape_ok = pred.n_rows() == 60 && pred.n_sites() == 50;
    let image = side_by_side(&[&truth, &pred], 2).unwrap();
    let path = artifacts().join("rollout_truth_vs_pred.pgm");
    image.write(&path, PgmFormat::P5).unwrap();
    let c = compare_rollout(&pred, &truth, w);

    // context: how often the same conditions hold over every held-out seed,
    // for the model and for a second exact simulation of the same window
    let (mut model_ok, mut twin_ok) = (0, 0);
    for k in 0..split.test.len() {
        let s = seed_window(split, k);
        let idx = split.test_indices[k] as u64;
        let truth = continuation(&s, 30, params, DeltaMode::ExchangeDelta, derive_seed(TRUTH_SEED, idx));
        let twin = continuation(&s, 30, params, DeltaMode::ExchangeDelta, derive_seed(TRUTH_SEED ^ 1, idx));
        let m = compare_rollout(&rollout(model, &s, 30).unwrap(), &truth, w);
        let o = compare_rollout(&twin, &truth, w);
        model_ok += usize::from(m.count_ok && m.accuracy_ok);
        twin_ok += usize::from(o.count_ok && o.accuracy_ok);
    }
    outcome(
        shape_ok && c.count_ok && c.accuracy_ok,
        format!(
            "{}x{} diagram; worst count deviation {:.3} (need <= 0.10), worst per-row accuracy {:.3} (need > 0.5); \
             both hold on {model_ok}/{} held-out seeds (exact-simulator twin: {twin_ok}); rollout took {secs:.1}s; image {}",
            pred.n_rows(),
            pred.n_sites(),
            c.worst_count_dev,
            c.worst_accuracy,
            split.test.len(),
            path.display()
        ),
    )
}

fn literal_dynamics_note() -> String {
    let (params, split) = corpus(DeltaMode::LiteralSiteH);
    let distinct: HashSet<Vec<u8>> = split
        .train
        .samples
        .iter()
        .map(|s| {
            // canonical rotation of the target row
            let n = s.target.len();
            (0..n)
                .map(|r| (0..n).map(|i| s.target[(i + r) % n]).collect::<Vec<u8>>())
                .min()
                .unwrap()
        })
        .collect();
    let cfg = PredictorConfig {
        epochs: 2,
        ..acceptance_config()
    };
    let (model, _) = train(PredictorModel::new(cfg).unwrap(), &split, |_| {}).unwrap();
    let tr = evaluate(&model, &split.train).unwrap();
    let te = evaluate(&model, &split.test).unwrap();
    let seed = seed_window(&split, 0);
    let truth = continuation(&seed, 30, &params, DeltaMode::LiteralSiteH, 0);
    let c = compare_rollout(&rollout(&model, &seed, 30).unwrap(), &truth, split.test.window);
    format!(
        "site-energy acceptance: {} distinct targets up to rotation, 2 epochs -> train acc {:.4}, held-out {:.4}; \
         rollout worst count dev {:.3}, worst per-row acc {:.3}",
        distinct.len(),
        tr.accuracy,
        te.accuracy,
        c.worst_count_dev,
        c.worst_accuracy
    )
}

fn determinism_and_formats() -> Outcome {
    let mut problems = Vec::new();
    let params = ModelParams::default();
    let gen = || generate_dataset(40, 24, 6, &params, DeltaMode::ExchangeDelta, 17).unwrap();
    let (a, b) = (encode_dataset(&gen()).unwrap(), encode_dataset(&gen()).unwrap());
    if a != b {
        problems.push("dataset bytes differ between identical runs".to_string());
    }
    if decode_dataset(&a).unwrap() != gen() {
        problems.push("dataset round trip is not exact".into());
    }

    let split = split(&gen(), 0.25, 1).unwrap();
    let cfg = PredictorConfig {
        n_sites: 24,
        window: 6,
        epochs: 2,
        ..acceptance_config()
    };
    let fit = || {
        let (m, _) = train(PredictorModel::new(cfg).unwrap(), &split, |_| {}).unwrap();
        encode_checkpoint(&m).unwrap()
    };
    let (c1, c2) = (fit(), fit());
    if c1 != c2 {
        problems.push("checkpoint bytes differ between identical runs".into());
    }
    if encode_checkpoint(&decode_checkpoint(&c1).unwrap()).unwrap() != c1 {
        problems.push("checkpoint round trip is not exact".into());
    }

    let sim = SimulationConfig {
        model: params,
        n_sites: 40,
        n_steps: 60,
        seed: 8,
        delta_mode: DeltaMode::ExchangeDelta,
    };
    let image = || simulate(&sim).unwrap().to_pgm(PgmFormat::P5);
    if image() != image() {
        problems.push("image bytes differ between identical runs".into());
    }

    for (what, bytes, decode) in [
        ("dataset", &a, (|b: &[u8]| decode_dataset(b).err()) as fn(&[u8]) -> Option<CoreError>),
        ("checkpoint", &c1, |b: &[u8]| decode_checkpoint(b).err()),
    ] {
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0x20;
        let mut long = bytes.clone();
        long.push(0);
        let kinds = [
            decode(&bad_magic),
            decode(&bytes[..bytes.len() - 1]),
            decode(&bytes[..5]),
            decode(&long),
        ];
        let ok = matches!(kinds[0], Some(CoreError::BadMagic { .. }))
            && matches!(kinds[1], Some(CoreError::Truncated(_)))
            && matches!(kinds[2], Some(CoreError::Truncated(_)))
            && matches!(kinds[3], Some(CoreError::LengthMismatch { .. }));
        if !ok {
            problems.push(format!("{what} corruption errors: {kinds:?}"));
        }
    }
    let detail = if problems.is_empty() {
        "dataset, checkpoint and PGM bytes reproducible; exact round trips; BadMagic / Truncated / LengthMismatch distinct".into()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, run: impl FnOnce() -> Outcome) {
    let t0 = Instant::now();
    let o = run();
    println!(
        "criterion {id} {name:<28} {}  [{:.1}s] {}",
        if o.pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64(),
        o.detail
    );
    results.push(o.pass);
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(&mut results, 1, "conservation & motion", conservation_and_forward_motion);
    report(&mut results, 2, "metropolis acceptance", metropolis_oracle);
    report(&mut results, 3, "scale invariance", scale_invariance);
    report(&mut results, 4, "gradient correctness", gradient_correctness);

    let (params, split) = corpus(DeltaMode::ExchangeDelta);
    let (model, secs) = train_model(&split);
    report(&mut results, 5, "training convergence", || {
        training_convergence(&split, &model, &params, secs)
    });
    report(&mut results, 6, "rollout", || rollout_replication(&split, &model, &params));
    println!("  note: {}", literal_dynamics_note());
    report(&mut results, 7, "determinism & formats", determinism_and_formats);

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
