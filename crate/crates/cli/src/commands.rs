//! Command implementations for the benchmark harness.

use crate::config::{Config, ConfigError};
use crate::record::{write_csv, RunRecord};
use angsync::angle::AngleMatrix;
use angsync::eval::{ane, mse_k_detailed};
use angsync::gnn::{
    projected_gradient, save_checkpoint, train, LossKind, PgdConfig, TrainConfig,
};
use angsync::graph::{build_hermitian, OffsetGraph};
use angsync::losses::{cycle_loss, upset_loss_of};
use angsync::snl::{run_pipeline, CloudShape, ShiftMode, SnlConfig};
use angsync::spectral::{gpm_from_spectral, spectral_rn_sync, spectral_sync, trivial_solution};
use angsync::synth::{gen_offset_graph, GroundTruthOption, MeasurementModel, SyntheticConfig};
use angsync::{io as gio, GroundTruth};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

/// Worker-count cap for parallel sweeps.
pub const WORKERS_ENV: &str = "ANGSYNC_WORKERS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configs or input files; exit code 1.
    Usage(String),
    /// Numerical failure at runtime; exit code 2.
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<angsync::Error> for CliError {
    fn from(e: angsync::Error) -> Self {
        use angsync::Error as E;
        match &e {
            E::EigenNonConvergence { .. }
            | E::Diverged { .. }
            | E::Numerical(_)
            | E::Connectivity(_)
            | E::Degenerate(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Solver selection shared by `solve`, `sweep` and `snl`.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Spectral,
    SpectralRn,
    Gpm,
    Trivial,
    Gnn(LossKind),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Spectral => "spectral",
            Method::SpectralRn => "spectral_rn",
            Method::Gpm => "gpm",
            Method::Trivial => "trivial",
            Method::Gnn(_) => "gnn",
        }
    }

    pub fn loss_name(&self) -> String {
        match self {
            Method::Gnn(kind) => kind.to_string(),
            _ => String::new(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "spectral" => Ok(Method::Spectral),
            "spectral_rn" => Ok(Method::SpectralRn),
            "gpm" => Ok(Method::Gpm),
            "trivial" => Ok(Method::Trivial),
            other => {
                if let Some(loss) = other.strip_prefix("gnn-") {
                    let kind: LossKind = loss
                        .parse()
                        .map_err(|e: angsync::Error| CliError::Usage(e.to_string()))?;
                    Ok(Method::Gnn(kind))
                } else {
                    Err(CliError::Usage(format!(
                        "unknown method '{other}' (expected spectral|spectral_rn|gpm|trivial|gnn-<loss>)"
                    )))
                }
            }
        }
    }
}

/// Training knobs shared by the gnn method everywhere it appears.
#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub pgd_steps: usize,
    /// Train without projected gradient steps, then apply them once to the
    /// trained angles.
    pub post_process: bool,
}

impl Default for TrainOpts {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainOpts {
            epochs: t.max_epochs,
            patience: t.patience,
            lr: t.lr,
            weight_decay: t.weight_decay,
            pgd_steps: PgdConfig::default().steps,
            post_process: false,
        }
    }
}

impl TrainOpts {
    fn from_config(cfg: &Config) -> Result<Self> {
        let d = TrainOpts::default();
        Ok(TrainOpts {
            epochs: cfg.get_or("epochs", d.epochs)?,
            patience: cfg.get_or("patience", d.patience)?,
            lr: cfg.get_or("lr", d.lr)?,
            weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
            pgd_steps: cfg.get_or("pgd_steps", d.pgd_steps)?,
            post_process: cfg.get_or("post_process", false)?,
        })
    }
}

/// Run one solver on one graph.
pub fn run_method(
    g: &OffsetGraph,
    k: usize,
    method: &Method,
    seed: u64,
    opts: &TrainOpts,
    features: Option<&AngleMatrix>,
) -> Result<AngleMatrix> {
    Ok(match method {
        Method::Spectral => spectral_sync(g, k)?,
        Method::SpectralRn => spectral_rn_sync(g, k)?,
        Method::Gpm => gpm_from_spectral(g, k)?,
        Method::Trivial => trivial_solution(g.n(), k),
        Method::Gnn(kind) => {
            let tcfg = TrainConfig {
                lr: opts.lr,
                weight_decay: opts.weight_decay,
                max_epochs: opts.epochs,
                patience: opts.patience.min(opts.epochs),
                loss: *kind,
                seed,
            };
            if opts.post_process {
                let out = train(g, features, k, &tcfg, &PgdConfig::with_steps(0))?;
                let h = build_hermitian(g);
                projected_gradient(&out.angles, h.matrix(), &PgdConfig::with_steps(opts.pgd_steps))?
            } else {
                train(g, features, k, &tcfg, &PgdConfig::with_steps(opts.pgd_steps))?.angles
            }
        }
    })
}

/// `(mse, per-set mse, upset, cycle)` of an estimate on one graph.
type Metrics = (Option<f64>, Vec<f64>, Option<f64>, Option<f64>);

fn metrics(
    g: &OffsetGraph,
    angles: &AngleMatrix,
    truth: Option<&GroundTruth>,
) -> Result<Metrics> {
    let upset = upset_loss_of(g, angles).ok();
    let cyc = cycle_loss(g, angles).ok();
    match truth {
        Some(t) => {
            let (total, per_set) = mse_k_detailed(angles, &t.angles)?;
            Ok((Some(total), per_set, upset, cyc))
        }
        None => Ok((None, Vec::new(), upset, cyc)),
    }
}

fn synthetic_config(cfg: &Config) -> Result<SyntheticConfig> {
    let model: MeasurementModel = cfg
        .raw("model")
        .unwrap_or("ero")
        .parse()
        .map_err(|e: angsync::Error| CliError::Usage(e.to_string()))?;
    let option = GroundTruthOption::from_index(cfg.get_or("option", 1u32)?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(SyntheticConfig {
        model,
        n: cfg.get_or("n", 360usize)?,
        p: cfg.get_or("p", 0.15f64)?,
        k: cfg.get_or("k", 1usize)?,
        eta: cfg.get_or("eta", 0.0f64)?,
        option,
        seed: cfg.get_or("seed", 0u64)?,
    })
}

/// `gen`: synthetic instance to `<out>.graph` and `<out>.truth`.
pub fn cmd_gen(config: &Path, sets: &[String], out: &Path) -> Result<()> {
    let mut cfg = Config::from_file(config)?;
    cfg.apply_overrides(sets)?;
    let scfg = synthetic_config(&cfg)?;
    let (graph, truth) = gen_offset_graph(&scfg)?;
    let graph_path = out.with_extension("graph");
    let truth_path = out.with_extension("truth");
    gio::write_graph(&graph_path, &graph, scfg.k)?;
    gio::write_truth(&truth_path, &truth, &graph)?;
    println!(
        "wrote {} ({} nodes, {} edges) and {}",
        graph_path.display(),
        graph.n(),
        graph.edge_count(),
        truth_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_solve(
    graph_path: &Path,
    method: &Method,
    k_override: Option<usize>,
    truth_path: Option<&Path>,
    out: Option<&Path>,
    record_path: Option<&Path>,
    opts: &TrainOpts,
    seed: u64,
    timing: bool,
) -> Result<()> {
    let (graph, file_k) = gio::read_graph(graph_path)?;
    let k = k_override.unwrap_or(file_k);
    let truth = truth_path.map(gio::read_truth).transpose()?;
    let start = Instant::now();
    let angles = run_method(&graph, k, method, seed, opts, None)?;
    let runtime = start.elapsed().as_secs_f64();
    let (total_mse, per_set, upset, cyc) = metrics(&graph, &angles, truth.as_ref())?;
    if let Some(out) = out {
        gio::write_angles(out, &angles)?;
    }
    let record = RunRecord {
        model: "file".into(),
        n: graph.n(),
        p: 0.0,
        k,
        eta: 0.0,
        option: 0,
        seed,
        method: method.name().into(),
        loss: method.loss_name(),
        mse: total_mse,
        per_set_mse: per_set,
        ane: None,
        upset,
        cycle: cyc,
        runtime_s: timing.then_some(runtime),
    };
    if !record.is_finite() {
        return Err(CliError::Numerical("non-finite metric in run record".into()));
    }
    if let Some(path) = record_path {
        write_csv(path, std::slice::from_ref(&record))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mse_text = total_mse.map_or("n/a".into(), |v| format!("{v:.6}"));
    println!(
        "method={} n={} k={k} mse={} upset={} cycle={}",
        method.name(),
        graph.n(),
        mse_text,
        upset.map_or("n/a".into(), |v| format!("{v:.6}")),
        cyc.map_or("n/a".into(), |v| format!("{v:.6}")),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    graph_path: &Path,
    loss: LossKind,
    k_override: Option<usize>,
    seeds: &[u64],
    truth_path: Option<&Path>,
    features_path: Option<&Path>,
    out: &Path,
    record_path: Option<&Path>,
    opts: &TrainOpts,
    timing: bool,
) -> Result<()> {
    let (graph, file_k) = gio::read_graph(graph_path)?;
    let k = k_override.unwrap_or(file_k);
    let truth = truth_path.map(gio::read_truth).transpose()?;
    let features = features_path.map(gio::read_angles).transpose()?;
    let mut records = Vec::new();
    for &seed in seeds {
        let tcfg = TrainConfig {
            lr: opts.lr,
            weight_decay: opts.weight_decay,
            max_epochs: opts.epochs,
            patience: opts.patience.min(opts.epochs),
            loss,
            seed,
        };
        let start = Instant::now();
        let train_steps = if opts.post_process { 0 } else { opts.pgd_steps };
        let outcome = train(
            &graph,
            features.as_ref(),
            k,
            &tcfg,
            &PgdConfig::with_steps(train_steps),
        )?;
        let angles = if opts.post_process {
            let h = build_hermitian(&graph);
            projected_gradient(&outcome.angles, h.matrix(), &PgdConfig::with_steps(opts.pgd_steps))?
        } else {
            outcome.angles.clone()
        };
        let runtime = start.elapsed().as_secs_f64();

        let angle_path = out.with_extension(format!("seed{seed}.angles"));
        let ckpt_path = out.with_extension(format!("seed{seed}.ckpt"));
        gio::write_angles(&angle_path, &angles)?;
        save_checkpoint(&ckpt_path, &outcome)?;

        let (total_mse, per_set, upset, cyc) = metrics(&graph, &angles, truth.as_ref())?;
        println!(
            "seed {seed}: best epoch {} loss {:.6} mse {} -> {}",
            outcome.best_epoch,
            outcome.best_loss,
            total_mse.map_or("n/a".into(), |v| format!("{v:.6}")),
            angle_path.display()
        );
        let record = RunRecord {
            model: "file".into(),
            n: graph.n(),
            p: 0.0,
            k,
            eta: 0.0,
            option: 0,
            seed,
            method: "gnn".into(),
            loss: loss.to_string(),
            mse: total_mse,
            per_set_mse: per_set,
            ane: None,
            upset,
            cycle: cyc,
            runtime_s: timing.then_some(runtime),
        };
        if !record.is_finite() {
            return Err(CliError::Numerical("non-finite metric in run record".into()));
        }
        records.push(record);
    }
    if let Some(path) = record_path {
        write_csv(path, &records).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

struct SweepJob {
    scfg: SyntheticConfig,
    method: Method,
}

/// `sweep`: cross-product of configuration lists x seeds x methods, with
/// deterministic row order regardless of scheduling.
pub fn cmd_sweep(config: &Path, sets: &[String], out: &Path) -> Result<()> {
    let mut cfg = Config::from_file(config)?;
    cfg.apply_overrides(sets)?;
    let opts = TrainOpts::from_config(&cfg)?;
    let timing = matches!(cfg.raw("timing"), Some("wall"));

    let models: Vec<MeasurementModel> = cfg
        .list::<String>("model")?
        .unwrap_or_else(|| vec!["ero".into()])
        .iter()
        .map(|s| s.parse().map_err(|e: angsync::Error| CliError::Usage(e.to_string())))
        .collect::<Result<_>>()?;
    let ns: Vec<usize> = cfg.list("n")?.unwrap_or_else(|| vec![360]);
    let ps: Vec<f64> = cfg.list("p")?.unwrap_or_else(|| vec![0.15]);
    let ks: Vec<usize> = cfg.list("k")?.unwrap_or_else(|| vec![1]);
    let etas: Vec<f64> = cfg.list("eta")?.unwrap_or_else(|| vec![0.0]);
    let options: Vec<u32> = cfg.list("option")?.unwrap_or_else(|| vec![1]);
    let seeds: Vec<u64> = cfg.list("seeds")?.unwrap_or_else(|| vec![0]);
    let methods: Vec<Method> = cfg
        .list::<String>("methods")?
        .unwrap_or_else(|| vec!["spectral".into()])
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for &model in &models {
        for &n in &ns {
            for &p in &ps {
                for &k in &ks {
                    for &eta in &etas {
                        for &option in &options {
                            for &seed in &seeds {
                                for method in &methods {
                                    jobs.push(SweepJob {
                                        scfg: SyntheticConfig {
                                            model,
                                            n,
                                            p,
                                            k,
                                            eta,
                                            option: GroundTruthOption::from_index(option)
                                                .map_err(|e| CliError::Usage(e.to_string()))?,
                                            seed,
                                        },
                                        method: method.clone(),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }

    let workers = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .clamp(1, jobs.len());

    let results: Mutex<Vec<Option<std::result::Result<RunRecord, String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::Relaxed);
                if idx >= jobs.len() {
                    break;
                }
                let job = &jobs[idx];
                let outcome = run_sweep_job(job, &opts, timing);
                results.lock().unwrap()[idx] = Some(outcome.map_err(|e| e.to_string()));
            });
        }
    });

    let collected = results.into_inner().unwrap();
    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for (idx, slot) in collected.into_iter().enumerate() {
        match slot.expect("every job ran") {
            Ok(r) => records.push(r),
            Err(msg) => {
                let job = &jobs[idx];
                failures.push(format!(
                    "row {idx} ({} n={} p={} k={} eta={} seed={} {}): {msg}",
                    job.scfg.model.name(),
                    job.scfg.n,
                    job.scfg.p,
                    job.scfg.k,
                    job.scfg.eta,
                    job.scfg.seed,
                    job.method.name()
                ));
            }
        }
    }
    write_csv(out, &records).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("wrote {} rows to {}", records.len(), out.display());
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        return Err(CliError::Numerical(format!(
            "{} of {} sweep rows failed",
            failures.len(),
            jobs.len()
        )));
    }
    Ok(())
}

fn run_sweep_job(job: &SweepJob, opts: &TrainOpts, timing: bool) -> Result<RunRecord> {
    let (graph, truth) = gen_offset_graph(&job.scfg)?;
    let start = Instant::now();
    let angles = run_method(&graph, job.scfg.k, &job.method, job.scfg.seed, opts, None)?;
    let runtime = start.elapsed().as_secs_f64();
    let (total_mse, per_set, upset, cyc) = metrics(&graph, &angles, Some(&truth))?;
    let record = RunRecord {
        model: job.scfg.model.name().into(),
        n: job.scfg.n,
        p: job.scfg.p,
        k: job.scfg.k,
        eta: job.scfg.eta,
        option: job.scfg.option.index(),
        seed: job.scfg.seed,
        method: job.method.name().into(),
        loss: job.method.loss_name(),
        mse: total_mse,
        per_set_mse: per_set,
        ane: None,
        upset,
        cycle: cyc,
        runtime_s: timing.then_some(runtime),
    };
    if !record.is_finite() {
        return Err(CliError::Numerical("non-finite metric".into()));
    }
    Ok(record)
}

/// `snl`: full localization pipeline with the chosen synchronizer.
pub fn cmd_snl(
    config: &Path,
    sets: &[String],
    out: &Path,
    record_path: Option<&Path>,
) -> Result<()> {
    let mut cfg = Config::from_file(config)?;
    cfg.apply_overrides(sets)?;
    let opts = TrainOpts::from_config(&cfg)?;
    let timing = matches!(cfg.raw("timing"), Some("wall"));
    let shape: CloudShape = cfg
        .raw("shape")
        .unwrap_or("uniform")
        .parse()
        .map_err(|e: angsync::Error| CliError::Usage(e.to_string()))?;
    let shift_mode = match cfg.raw("shift").unwrap_or("wrapped") {
        "wrapped" => ShiftMode::WrappedMean,
        "circular" => ShiftMode::CircularMean,
        other => {
            return Err(CliError::Usage(format!(
                "unknown shift mode '{other}' (expected wrapped|circular)"
            )))
        }
    };
    let scfg = SnlConfig {
        shape,
        n: cfg.get_or("n", 400usize)?,
        seed: cfg.get_or("seed", 0u64)?,
        k_patch: cfg.get_or("k_patch", 50usize)?,
        k_thres: cfg.get_or("k_thres", 6usize)?,
        eta: cfg.get_or("eta", 0.0f64)?,
        option: GroundTruthOption::from_index(cfg.get_or("option", 1u32)?)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        shift_mode,
    };
    let method: Method = cfg.raw("method").unwrap_or("spectral").parse()?;
    let seed = scfg.seed;

    let start = Instant::now();
    let method_ref = &method;
    let opts_ref = &opts;
    let report = run_pipeline(&scfg, &move |g| {
        run_method(g, 1, method_ref, seed, opts_ref, None)
            .map_err(|e| angsync::Error::Numerical(e.to_string()))
    })?;
    let runtime = start.elapsed().as_secs_f64();

    let cloud_path = out.with_extension("cloud");
    gio::write_cloud(&cloud_path, &report.recovered, Some(report.ane))?;

    let rot_est = AngleMatrix::from_column(report.estimated_rotations.clone());
    let rot_truth = AngleMatrix::from_column(report.patch_rotations.clone());
    let (rot_mse, per_set) = mse_k_detailed(&rot_est, &rot_truth)
        .map(|(v, p)| (Some(v), p))
        .unwrap_or((None, Vec::new()));
    let upset = upset_loss_of(&report.patch_graph, &rot_est).ok();
    let cyc = cycle_loss(&report.patch_graph, &rot_est).ok();
    let check = ane(&report.recovered, &report.truth)?;
    debug_assert!((check - report.ane).abs() < 1e-12);

    let record = RunRecord {
        model: match shape {
            CloudShape::UniformSquare => "uniform".into(),
            CloudShape::GaussianMixture => "mixture".into(),
        },
        n: scfg.n,
        p: 0.0,
        k: 1,
        eta: scfg.eta,
        option: scfg.option.index(),
        seed,
        method: method.name().into(),
        loss: method.loss_name(),
        mse: rot_mse,
        per_set_mse: per_set,
        ane: Some(report.ane),
        upset,
        cycle: cyc,
        runtime_s: timing.then_some(runtime),
    };
    if !record.is_finite() {
        return Err(CliError::Numerical("non-finite metric in run record".into()));
    }
    if let Some(path) = record_path {
        write_csv(path, std::slice::from_ref(&record))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    println!(
        "ane={:.6} rotation_mse={} components={} -> {}",
        report.ane,
        rot_mse.map_or("n/a".into(), |v| format!("{v:.6}")),
        report.components,
        cloud_path.display()
    );
    Ok(())
}

/// Shared parse helper for `--seeds`.
pub fn parse_seed_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .map(|item| {
            item.trim()
                .parse::<u64>()
                .map_err(|_| format!("bad seed '{item}'"))
        })
        .collect()
}

/// Output prefix helper: `gen`-style commands write `<prefix>.<ext>`.
pub fn prefix_path(prefix: &str) -> PathBuf {
    PathBuf::from(prefix)
}
