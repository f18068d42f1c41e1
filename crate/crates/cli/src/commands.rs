use std::fs;
use std::io::Write;
use std::path::Path;

use qpadapt::checkpoint::Checkpoint;
use qpadapt::codec::{noise_power_scan, prepare_dataset, DataSource, DatasetSpec, NoiseScanConfig, SampleStore, Split};
use qpadapt::metrics::{bd_rate, sweep_qp, write_sweep_csv, RdPoint, SweepCurve, SweepModel};
use qpadapt::train::{train_strategy, write_loss_log};
use qpadapt::wiener::{
    adapt_filter, expected_mse, numeric_deviation, perturbation_check, refinement_sweep, write_report_csv, SpectralModel,
};
use qpadapt::Mode;

use crate::config::{parse_qps, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{EvalArgs, GenDataArgs, OracleArgs, TrainArgs};

fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} is not a directory", path.display())))
    }
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let source = match &a.images {
        Some(dir) => {
            require_dir(dir)?;
            DataSource::Directory(dir.clone())
        }
        None => DataSource::Synthetic {
            seed: a.seed,
            count: a.count,
            size: a.size,
        },
    };
    let spec = DatasetSpec {
        source,
        patch: a.patch,
        qps: parse_qps(&a.qps)?,
        val_count: a.val_count,
        block_size: 8,
    };
    let store = prepare_dataset(&spec)?;
    store.save(&a.out)?;
    println!("qp  train  val  rate_bits");
    for &qp in &store.qps {
        println!(
            "{qp:>2}  {:>5}  {:>3}  {:.0}",
            store.sample_count(Some(Split::Train), qp),
            store.sample_count(Some(Split::Val), qp),
            store.rate_bits(Split::Train, qp) + store.rate_bits(Split::Val, qp)
        );
    }
    println!("{} samples of {}x{} written to {}", store.total_samples(), store.patch, store.patch, a.out.display());
    Ok(())
}

pub fn run_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let text = |v: &Option<String>| v.clone();
    let flags: [(&str, Option<String>); 13] = [
        ("model", text(&a.model)),
        ("model_size", a.model_size.map(|v| v.to_string())),
        ("mode", text(&a.mode)),
        ("strategy", text(&a.strategy)),
        ("qps", text(&a.qps)),
        ("data", a.data.as_ref().map(|p| p.display().to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("iterations", a.iterations.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("precision", text(&a.precision)),
        ("crop", a.crop.map(|v| v.to_string())),
        ("out", a.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = run_config(a)?;
    // Validates everything but the QP list before reading the store.
    cfg.train_config(&[])?;
    let store = SampleStore::load(cfg.data.as_deref().expect("checked by train_config"))?;
    let tc = cfg.train_config(&store.qps)?;
    tc.validate(store.patch)?;
    let out = cfg.out.as_deref().expect("checked by train_config");
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let models = train_strategy(&store, &tc)?;
    for m in models {
        let ck = Checkpoint {
            label: m.label.clone(),
            seed: m.seed,
            iterations: m.iterations as u64,
            qps: m.qps.clone(),
            net: m.net,
        };
        let path = out.join(format!("{}.qfck", m.label));
        ck.save(&path)?;
        write_file(&out.join(format!("{}.loss.csv", m.label)), write_loss_log(&m.losses).as_bytes())?;
        let first = m.losses.first().map_or(f64::NAN, |r| r.loss);
        let last = m.losses.last().map_or(f64::NAN, |r| r.loss);
        println!(
            "{}: {} parameters, {} iterations, loss {first:.6} -> {last:.6}, saved {}",
            m.label,
            ck.net.param_count(),
            m.iterations,
            path.display()
        );
    }
    Ok(())
}

fn load_checkpoints(a: &EvalArgs) -> CliResult<Vec<Checkpoint>> {
    let mode: Option<Mode> = a.mode.as_deref().map(str::parse).transpose()?;
    a.checkpoints
        .iter()
        .map(|path| {
            if !path.is_file() {
                return Err(CliError::Io(format!("checkpoint {} does not exist", path.display())));
            }
            let ck = Checkpoint::load(path)?;
            match mode {
                Some(m) if m != ck.mode() => {
                    if ck.mode() == Mode::Vanilla && m == Mode::QpAdaptive {
                        Ok(Checkpoint::load_as(path, m)?)
                    } else {
                        Err(CliError::usage(format!("{} holds a {} model, expected {m}", path.display(), ck.mode())))
                    }
                }
                _ => Ok(ck),
            }
        })
        .collect()
}

fn sweep(a: &EvalArgs, checkpoints: &[Checkpoint]) -> CliResult<Vec<SweepCurve>> {
    require_dir(&a.data)?;
    let store = SampleStore::load(&a.data)?;
    let qps = match &a.qps {
        Some(q) => parse_qps(q)?,
        None => store.qps.clone(),
    };
    if let Some(qp) = qps.iter().find(|q| !store.qps.contains(q)) {
        return Err(CliError::usage(format!("dataset has no samples at QP {qp} (has {:?})", store.qps)));
    }
    let split = match a.split.as_deref() {
        Some("train") => Split::Train,
        Some("val") => Split::Val,
        Some(other) => return Err(CliError::usage(format!("unknown split `{other}` (train, val)"))),
        None if store.has_split(Split::Val) => Split::Val,
        None => Split::Train,
    };
    if !store.has_split(split) {
        return Err(CliError::usage(format!("dataset has no {split} split")));
    }
    let models: Vec<SweepModel<f32>> = checkpoints.iter().map(|c| SweepModel { label: c.label.clone(), net: &c.net }).collect();
    Ok(sweep_qp(&models, &store, split, &qps)?)
}

fn emit_csv(a: &EvalArgs, curves: &[SweepCurve]) -> CliResult<()> {
    let csv = write_sweep_csv(curves)?;
    match &a.out {
        Some(path) => write_file(path, csv.as_bytes()),
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
            Ok(())
        }
    }
}

fn fmt_gain(g: Option<f64>) -> String {
    g.map_or_else(|| "n/a".into(), |g| format!("{g:+.3}"))
}

pub fn eval(a: &EvalArgs, many: bool) -> CliResult<()> {
    if !many && a.checkpoints.len() != 1 {
        return Err(CliError::usage("eval takes exactly one checkpoint; use sweep for several"));
    }
    let checkpoints = load_checkpoints(a)?;
    let curves = sweep(a, &checkpoints)?;
    emit_csv(a, &curves)?;
    if a.out.is_some() {
        for c in &curves {
            let gains: Vec<String> = c.points.iter().map(|p| format!("qp{} {}", p.qp, fmt_gain(p.gain_db()))).collect();
            println!("{:24} {:12} {}  mean {}", c.model, c.mode.as_str(), gains.join("  "), fmt_gain(c.mean_gain()));
        }
    }
    Ok(())
}

/// BD-rate of `filtered` against `reference`, both drawn from sweep points.
fn curve_bd(reference: &SweepCurve, reference_filtered: bool, test: &SweepCurve) -> Option<f64> {
    let pick = |c: &SweepCurve, filtered: bool| -> Option<Vec<RdPoint>> {
        c.points
            .iter()
            .map(|p| {
                let psnr = if filtered { p.psnr_filtered } else { p.psnr_anchor };
                psnr.db().map(|db| RdPoint::new(p.rate_bits, db))
            })
            .collect()
    };
    bd_rate(&pick(reference, reference_filtered)?, &pick(test, true)?).ok()
}

pub fn compare(a: &EvalArgs) -> CliResult<()> {
    let checkpoints = load_checkpoints(a)?;
    let curves = sweep(a, &checkpoints)?;
    if a.out.is_some() {
        emit_csv(a, &curves)?;
    }
    let reference = &curves[0];
    let fmt_bd = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{v:+.2}%"));
    println!(
        "{:24} {:12} {:>9} {:>10} {:>12} {:>14}",
        "model", "mode", "params", "gain (dB)", "BD vs anchor", "BD vs first"
    );
    for (ck, c) in checkpoints.iter().zip(&curves) {
        println!(
            "{:24} {:12} {:>9} {:>10} {:>12} {:>14}",
            c.model,
            c.mode.as_str(),
            ck.net.param_count(),
            fmt_gain(c.mean_gain()),
            fmt_bd(curve_bd(c, false, c)),
            fmt_bd(curve_bd(reference, true, c)),
        );
    }
    Ok(())
}

fn check(ok: bool, line: String, failures: &mut Vec<String>) {
    println!("{} {line}", if ok { "ok  " } else { "FAIL" });
    if !ok {
        failures.push(line);
    }
}

pub fn oracle(a: &OracleArgs) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::usage("--bins must be positive"));
    }
    let mut failures = Vec::new();

    let mut violations = 0;
    let mut deviation: f64 = 0.0;
    for i in 0..a.spectra as u64 {
        let m = SpectralModel::random(a.seed.wrapping_add(i), a.bins);
        violations += perturbation_check(&m, a.trials, 0.1, a.seed.wrapping_add(1000 + i))?.violations;
        deviation = deviation.max(numeric_deviation(&m)?);
    }
    check(
        violations == 0,
        format!("optimality: {violations} of {} perturbations beat the adapted filter", a.spectra * a.trials),
        &mut failures,
    );
    check(
        deviation <= 1e-8,
        format!("optimality: largest gap to numerical minimization {deviation:.2e}"),
        &mut failures,
    );

    let counts: Vec<usize> = std::iter::successors(Some(2usize), |b| Some(b * 2)).take_while(|&b| b <= a.bins).collect();
    if counts.len() >= 2 {
        let sweep = refinement_sweep(&SpectralModel::smooth(a.seed, a.bins), &counts)?;
        let text: Vec<String> = sweep.iter().map(|(b, d)| format!("{b}:{d:.3e}")).collect();
        check(
            sweep.windows(2).all(|w| w[1].1 < w[0].1),
            format!("sub-band refinement: {}", text.join(" ")),
            &mut failures,
        );
    }

    let qps: Vec<i32> = (22..=37).collect();
    let scan = noise_power_scan(
        &qps,
        &NoiseScanConfig {
            seed: a.seed,
            coefficients: a.coefficients,
            ..NoiseScanConfig::default()
        },
    )?;
    let (lo, hi) = scan.bin_slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    check(
        (1.9..=2.1).contains(&scan.slope) && lo >= 1.8 && hi <= 2.2,
        format!("noise power: slope {:.4}, per-band [{lo:.4}, {hi:.4}] over QP 22-37", scan.slope),
        &mut failures,
    );

    let mut report = SpectralModel::random(a.seed, a.bins);
    if a.zero_noise {
        report = report.with_noise(vec![0.0; a.bins])?;
    }
    let mse = expected_mse(&report, &adapt_filter(&report)?)?;
    println!("report spectrum: expected mse {mse}");
    if let Some(path) = &a.out {
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report)?;
        write_file(path, &buf)?;
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join("; ")))
    }
}
