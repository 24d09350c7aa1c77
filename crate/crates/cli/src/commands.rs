//! The subcommands, callable as library functions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use d2gp::analysis::{
    convergence_csv, convergence_report, jacobian_fd, preconditioned_gram_spectrum, psnr, SpectrumReport,
    DEFAULT_FD_EPSILON, DEFAULT_RANK_THRESHOLD,
};
use d2gp::distill::{history_csv, train_npo, DistillSession, EpochLosses};
use d2gp::io::{weights, write_pgm};
use d2gp::solver::{pnp_fista, SolverRun, Trace};
use d2gp::Tensor;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io_err, Context, Result};
use crate::experiment::{Experiment, Method, Seeds};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    label: &'a str,
    crate_version: &'a str,
    config: &'a ExperimentConfig,
    seeds: Seeds,
    parameters: usize,
    train_images: usize,
    test_images: usize,
    note: &'a str,
}

const DATA_NOTE: &str = "desk-scale synthetic or manifest data replaces the large public datasets";

fn write_manifest(exp: &Experiment, command: &str, label: &str, parameters: usize) -> Result<PathBuf> {
    let m = RunManifest {
        command,
        label,
        crate_version: env!("CARGO_PKG_VERSION"),
        config: &exp.config,
        seeds: exp.seeds(),
        parameters,
        train_images: exp.train.len(),
        test_images: exp.test.len(),
        note: DATA_NOTE,
    };
    let path = exp.config.out_dir.join(format!("{label}_manifest.json"));
    write(
        &path,
        &(serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"),
    )?;
    Ok(path)
}

/// Writes the student and teacher measurements of both splits to
/// `measurements.d2gpw`.
pub fn simulate(exp: &Experiment) -> Result<PathBuf> {
    let dir = &exp.config.out_dir;
    create_dir(dir)?;
    let mut named = Vec::new();
    for (tag, split) in [("train", &exp.train), ("test", &exp.test)] {
        for (i, (ys, yt)) in split.y_student.iter().zip(&split.y_teacher).enumerate() {
            named.push((format!("{tag}.student.{i:05}"), ys.clone()));
            named.push((format!("{tag}.teacher.{i:05}"), yt.clone()));
        }
    }
    let path = dir.join("measurements.d2gpw");
    weights::save(&path, &named).context(path.display().to_string())?;
    write_manifest(exp, "simulate", "measurements", 0)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub label: String,
    pub weights: PathBuf,
    pub history: Vec<EpochLosses>,
    pub parameters: usize,
}

/// Trains the configured variant. Output files are named after the run
/// label: `d2gp`, `supervised` (network with only the supervised loss) or
/// the variant name.
pub fn train(exp: &Experiment) -> Result<TrainOutcome> {
    let cfg = &exp.config;
    let label = cfg.train_label()?;
    let precond = exp.init(cfg.variant()?)?;
    let session = DistillSession::new(exp.distill_problem(), cfg.kd_config()?, precond).context("train")?;
    let trained = train_npo(session).context("train")?;
    create_dir(&cfg.out_dir)?;
    let path = exp.weights_path(&label);
    weights::save(&path, &trained.preconditioner.params().to_named()).context(path.display().to_string())?;
    write(
        &cfg.out_dir.join(format!("{label}_loss.csv")),
        &history_csv(&trained.history),
    )?;
    write(
        &cfg.out_dir.join(format!("{label}_config.json")),
        &(cfg.to_json() + "\n"),
    )?;
    let parameters = trained.preconditioner.parameter_count();
    write_manifest(exp, "train", &label, parameters)?;
    Ok(TrainOutcome {
        label,
        weights: path,
        history: trained.history,
        parameters,
    })
}

/// Runs one method over the test split with traces against ground truth.
pub fn run_method(exp: &Experiment, method: &Method) -> Result<Vec<SolverRun>> {
    let (op, cfg, ys) = if method.is_teacher() {
        (&exp.teacher_op, &exp.teacher, &exp.test.y_teacher)
    } else {
        (&exp.student_op, &exp.student, &exp.test.y_student)
    };
    ys.iter()
        .zip(&exp.test.images)
        .map(|(y, x)| pnp_fista(method.preconditioner(), op, y, cfg, &exp.prox, Some(x)).context(method.name()))
        .collect()
}

fn mean_psnr(runs: &[SolverRun], images: &[Tensor]) -> Result<f64> {
    let mut sum = 0.0;
    for (r, x) in runs.iter().zip(images) {
        sum += psnr(&r.final_x, x, 1.0).context("psnr")?;
    }
    Ok(sum / runs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub psnr_mean: f64,
    pub params: usize,
    /// `params / npo_params`.
    pub ratio: f64,
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("method,psnr_mean,params,ratio\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{},{}", r.method, r.psnr_mean, r.params, r.ratio);
    }
    out
}

/// Mean test PSNR, parameter count and ratio to the network per method;
/// writes `benchmark.csv` and `traces/<method>.csv`.
pub fn benchmark(exp: &Experiment, methods: &[String]) -> Result<Vec<BenchmarkRow>> {
    let dir = &exp.config.out_dir;
    // resolve everything first so a missing weights file fails before any work
    let resolved = methods.iter().map(|m| exp.resolve(m)).collect::<Result<Vec<_>>>()?;
    let npo = exp.npo_parameters()?;
    let mut rows = Vec::with_capacity(resolved.len());
    if !resolved.is_empty() {
        create_dir(&dir.join("traces"))?;
    }
    for method in &resolved {
        let runs = run_method(exp, method)?;
        let traces: Vec<Trace> = runs.iter().map(|r| r.trace.clone()).collect();
        let mean = Trace::mean(&traces).context("trace")?;
        write(
            &dir.join("traces").join(format!("{}.csv", method.name())),
            &mean.to_csv(),
        )?;
        let params = method.preconditioner().parameter_count();
        rows.push(BenchmarkRow {
            method: method.name().into(),
            psnr_mean: mean_psnr(&runs, &exp.test.images)?,
            params,
            ratio: params as f64 / npo as f64,
        });
    }
    create_dir(dir)?;
    write(&dir.join("benchmark.csv"), &benchmark_csv(&rows))?;
    Ok(rows)
}

/// Writes each method's test reconstructions to `recon/<method>/` as PGM;
/// returns the mean PSNR per method.
pub fn reconstruct(exp: &Experiment, methods: &[String]) -> Result<Vec<(String, f64)>> {
    let side = exp.config.image_side;
    let mut out = Vec::new();
    for name in methods {
        let method = exp.resolve(name)?;
        let runs = run_method(exp, &method)?;
        let dir = exp.config.out_dir.join("recon").join(method.name());
        create_dir(&dir)?;
        for (i, r) in runs.iter().enumerate() {
            let img = r.final_x.clone().reshape(&[side, side]).context("reshape")?;
            let path = dir.join(format!("test_{i:05}.pgm"));
            write_pgm(&path, &img).context(path.display().to_string())?;
        }
        out.push((method.name().to_string(), mean_psnr(&runs, &exp.test.images)?));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AnalyzeRow {
    pub method: String,
    pub spectrum: SpectrumReport,
}

/// Side of the Jacobian block exported per method.
pub const JACOBIAN_CROP: usize = 32;

/// Linearizes each method's preconditioner at its final reconstruction of
/// the first test image (iteration index `K`) and reports the spectrum of
/// `J H^T H`. Writes `spectrum_<m>.csv`, `jacobian_<m>.csv`,
/// `conditioning.csv` and `convergence.csv`.
pub fn analyze(exp: &Experiment, methods: &[String]) -> Result<Vec<AnalyzeRow>> {
    let dir = &exp.config.out_dir;
    create_dir(dir)?;
    let k = exp.config.solver.iterations;
    let first = exp.test.images.first().expect("test split is non-empty");
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for name in methods {
        let method = exp.resolve(name)?;
        let (op, cfg, y) = if method.is_teacher() {
            (&exp.teacher_op, &exp.teacher, &exp.test.y_teacher[0])
        } else {
            (&exp.student_op, &exp.student, &exp.test.y_student[0])
        };
        let p = method.preconditioner();
        let run = pnp_fista(p, op, y, cfg, &exp.prox, Some(first)).context(name.as_str())?;
        let j = jacobian_fd(p, &run.final_x, DEFAULT_FD_EPSILON, k).context(name.as_str())?;
        let spectrum = preconditioned_gram_spectrum(&j, op, DEFAULT_RANK_THRESHOLD).context(name.as_str())?;
        write(&dir.join(format!("spectrum_{name}.csv")), &spectrum.to_csv())?;
        write(&dir.join(format!("jacobian_{name}.csv")), &j.to_csv(JACOBIAN_CROP))?;
        rows.push(AnalyzeRow {
            method: name.clone(),
            spectrum,
        });
        runs.push(run);
    }
    let mut table = String::from("method,condition_number,rank\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{:e},{}",
            r.method, r.spectrum.condition_number, r.spectrum.rank
        );
    }
    write(&dir.join("conditioning.csv"), &table)?;
    let labels: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    let conv = convergence_report(&runs, &labels).context("convergence")?;
    write(&dir.join("convergence.csv"), &convergence_csv(&conv))?;
    Ok(rows)
}
