//! Batch driver for the near-field channel toolkit: reproducible experiments
//! from a scene JSON to plot-ready CSV/JSON files.
//!
//! Exit codes: 0 success, 2 configuration/validation errors, 3 numerical
//! failures.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nfield::correlation::{assemble_matrix, relative_error, AssemblyMode, CorrelationMatrix};
use nfield::dof::DofReport;
use nfield::error::Error as NfError;
use nfield::estimators::{
    run_sweep, summarize_sweep, Method, NfsConfig, SweepConfig,
};
use nfield::field::{eigen_system, ChannelSampler, SampleMethod};
use nfield::fitting::{
    decode, fit_loss, initial_guess_from_spectrum, quasi_newton_fit, ray_cluster_target,
    read_ray_table, FitProblem,
};
use nfield::scene::SceneConfig;
use nfield::wavenumber::{classify_regime, detect_peaks, expected_spectrum};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "nfield", about = "Near-field random-field channel experiments", version)]
struct Cli {
    /// Scene description JSON (wavelength, array, scatterers).
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Base seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the correlation matrix (closed form and/or quadrature oracle).
    Correlate(CorrelateArgs),
    /// Draw channel realizations from the scene's correlation matrix.
    Sample(SampleArgs),
    /// Expected wavenumber power spectrum and detected peaks.
    Spectrum(SpectrumArgs),
    /// Eigenvalue decay, effective DoF, bandwidth and cap bounds.
    Dof(DofArgs),
    /// Extended Rayleigh-distance regime per scatterer.
    Classify,
    /// Monte Carlo estimator comparison over an SNR grid.
    Sweep(SweepArgs),
    /// Quasi-Newton fit of the cluster model to a target correlation.
    Fit(FitArgs),
}

#[derive(Args)]
struct CorrelateArgs {
    /// analytic, oracle, or both.
    #[arg(long, default_value = "analytic")]
    mode: String,
    /// Relative quadrature tolerance for the oracle path.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct SampleArgs {
    /// Number of realizations (seeds seed..seed+draws).
    #[arg(long, default_value_t = 1)]
    draws: u64,
    /// Rescale the correlation to tr(R) = dim before sampling.
    #[arg(long)]
    normalize_trace: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Peak gate relative to the spectrum mean.
    #[arg(long, default_value_t = 3.0)]
    eta: f64,
}

#[derive(Args)]
struct DofArgs {
    /// Eigenvalue-mass threshold for the effective DoF count.
    #[arg(long, default_value_t = 0.99)]
    threshold: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma list of ls, omp:<L>, subspace, subspace-weighted, nfs.
    #[arg(long, default_value = "ls,subspace,subspace-weighted,nfs")]
    methods: String,
    /// Comma list of SNR points in dB.
    #[arg(long, default_value = "0,5,10,15,20")]
    snr_db: String,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    /// Peak gate of the spectrum-reconstruction estimator.
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    /// Fixed reconstruction distance (m).
    #[arg(long, default_value_t = 100.0)]
    nfs_distance: f64,
    /// Fixed reconstruction radius (m).
    #[arg(long, default_value_t = 2.0)]
    nfs_radius: f64,
    /// Fixed reconstruction concentration exponent.
    #[arg(long, default_value_t = 0.0)]
    nfs_concentration: f64,
    /// Codebook grid as AZxELxRINGS (e.g. 16x16x4).
    #[arg(long, default_value = "16x16x4")]
    codebook: String,
    /// Rescale the correlation to tr(R) = dim before sampling (per-element
    /// unit power, matching the y = sqrt(P) h + n convention).
    #[arg(long, default_value_t = true)]
    normalize_trace: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Target correlation matrix CSV (as written by `correlate`).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Ray table CSV (power,azimuth_deg,elevation_deg) synthesized into a
    /// far-field target.
    #[arg(long)]
    ray_table: Option<PathBuf>,
    /// Number of model clusters.
    #[arg(long, default_value_t = 1)]
    clusters: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Seed distance for spectrum-based initialization (m).
    #[arg(long, default_value_t = 100.0)]
    init_distance: f64,
    /// Seed radius for spectrum-based initialization (m).
    #[arg(long, default_value_t = 2.0)]
    init_radius: f64,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_exit(&err))
        }
    }
}

/// 2 for configuration/validation problems, 3 for numerical failures.
fn classify_exit(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(nf) = cause.downcast_ref::<NfError>() {
            return match nf {
                NfError::InvalidArgument(_)
                | NfError::Parse(_)
                | NfError::DimMismatch { .. }
                | NfError::Io(_) => 2,
                NfError::QuadratureNotConverged { .. }
                | NfError::Indefinite(_)
                | NfError::DegenerateGeometry(_)
                | NfError::Numerical(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output dir {}", cli.out.display()))?;

    let scene = || -> anyhow::Result<SceneConfig> {
        let path = cli
            .scene
            .as_ref()
            .ok_or_else(|| NfError::InvalidArgument("--scene is required".into()))?;
        if !path.exists() {
            return Err(NfError::InvalidArgument(format!(
                "scene file not found: {}",
                path.display()
            ))
            .into());
        }
        Ok(SceneConfig::load(path)?)
    };

    match &cli.command {
        Command::Correlate(args) => cmd_correlate(&scene()?, &cli.out, args),
        Command::Sample(args) => cmd_sample(&scene()?, &cli.out, cli.seed, args),
        Command::Spectrum(args) => cmd_spectrum(&scene()?, &cli.out, args),
        Command::Dof(args) => cmd_dof(&scene()?, &cli.out, args),
        Command::Classify => cmd_classify(&scene()?, &cli.out),
        Command::Sweep(args) => cmd_sweep(&scene()?, &cli.out, cli.seed, args),
        Command::Fit(args) => cmd_fit(&scene()?, &cli.out, args),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CorrelateSummary {
    format_version: u32,
    dim: usize,
    mode: String,
    /// `||R_analytic - R_oracle||_F^2 / ||R_oracle||_F^2` when both were built.
    rel_error: Option<f64>,
}

fn cmd_correlate(scene: &SceneConfig, out: &Path, args: &CorrelateArgs) -> anyhow::Result<()> {
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let (analytic, oracle) = match args.mode.as_str() {
        "analytic" => (Some(assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?), None),
        "oracle" => {
            (None, Some(assemble_matrix(&kernel, &array, AssemblyMode::Oracle { tol: args.tol })?))
        }
        "both" => (
            Some(assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?),
            Some(assemble_matrix(&kernel, &array, AssemblyMode::Oracle { tol: args.tol })?),
        ),
        other => {
            return Err(NfError::InvalidArgument(format!(
                "--mode must be analytic, oracle, or both; got {other}"
            ))
            .into())
        }
    };
    if let Some(m) = &analytic {
        m.save_csv(out.join("corr_analytic.csv"))?;
        m.save_binary(out.join("corr_analytic.bin"))?;
    }
    if let Some(m) = &oracle {
        m.save_csv(out.join("corr_oracle.csv"))?;
        m.save_binary(out.join("corr_oracle.bin"))?;
    }
    let rel = match (&analytic, &oracle) {
        (Some(a), Some(o)) => Some(relative_error(a, o)?),
        _ => None,
    };
    write_json(
        &out.join("error_summary.json"),
        &CorrelateSummary {
            format_version: FORMAT_VERSION,
            dim: array.len(),
            mode: args.mode.clone(),
            rel_error: rel,
        },
    )
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(scene: &SceneConfig, out: &Path, seed: u64, args: &SampleArgs) -> anyhow::Result<()> {
    if args.draws == 0 {
        return Err(NfError::InvalidArgument("--draws must be >= 1".into()).into());
    }
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let mut r = assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?;
    if args.normalize_trace {
        r = r.scaled_to_trace(array.len() as f64)?;
    }
    let sampler = ChannelSampler::new(&r, SampleMethod::Cholesky)?;
    for k in 0..args.draws {
        let draw = sampler.draw(seed + k);
        let path = out.join(format!("realization_{}.csv", seed + k));
        let file = std::fs::File::create(&path)?;
        draw.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// spectrum
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PeakOut {
    ky: f64,
    kz: f64,
    value: f64,
    row: usize,
    col: usize,
}

#[derive(Serialize)]
struct PeaksSummary {
    format_version: u32,
    eta: f64,
    peaks: Vec<PeakOut>,
}

fn cmd_spectrum(scene: &SceneConfig, out: &Path, args: &SpectrumArgs) -> anyhow::Result<()> {
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let wave = scene.wave()?;
    let r = assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?;
    let grid = expected_spectrum(&r, &array, wave)?;
    let file = std::fs::File::create(out.join("spectrum.csv"))?;
    grid.write_csv(std::io::BufWriter::new(file))?;
    let peaks = detect_peaks(&grid, args.eta);
    write_json(
        &out.join("peaks.json"),
        &PeaksSummary {
            format_version: FORMAT_VERSION,
            eta: args.eta,
            peaks: peaks
                .iter()
                .map(|p| PeakOut { ky: p.ky, kz: p.kz, value: p.value, row: p.row, col: p.col })
                .collect(),
        },
    )
}

// ---------------------------------------------------------------------------
// dof
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DofOut {
    format_version: u32,
    threshold: f64,
    /// One report per scatterer (bandwidth/cap bounds are per-cluster;
    /// the eigen data is shared).
    per_cluster: Vec<DofReport>,
}

fn cmd_dof(scene: &SceneConfig, out: &Path, args: &DofArgs) -> anyhow::Result<()> {
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let wave = scene.wave()?;
    let r = assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?;
    let eigs = eigen_system(&r)?;
    let rm = array.max_radius();
    let mut per_cluster = Vec::new();
    for c in kernel.clusters() {
        per_cluster.push(DofReport::build(
            &eigs,
            args.threshold,
            c.radius(),
            rm,
            c.distance(),
            wave,
        )?);
    }
    write_json(
        &out.join("dof_report.json"),
        &DofOut { format_version: FORMAT_VERSION, threshold: args.threshold, per_cluster },
    )?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in eigs.eigenvalues().iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(out.join("eigenvalues.csv"), csv)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ClassifyOut {
    format_version: u32,
    array_radius: f64,
    clusters: Vec<nfield::wavenumber::FieldRegime>,
}

fn cmd_classify(scene: &SceneConfig, out: &Path) -> anyhow::Result<()> {
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let wave = scene.wave()?;
    let rm = array.max_radius();
    let clusters: Result<Vec<_>, _> = kernel
        .clusters()
        .iter()
        .map(|c| classify_regime(c.radius(), rm, c.distance(), wave))
        .collect();
    write_json(
        &out.join("classify.json"),
        &ClassifyOut { format_version: FORMAT_VERSION, array_radius: rm, clusters: clusters? },
    )
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SweepOut {
    format_version: u32,
    trials: u64,
    base_seed: u64,
    summary: Vec<nfield::estimators::SweepSummary>,
}

fn parse_methods(spec: &str) -> anyhow::Result<Vec<Method>> {
    let mut methods = Vec::new();
    for token in spec.split(',') {
        let token = token.trim();
        let m = match token {
            "ls" => Method::Ls,
            "subspace" => Method::Subspace { weighted: false },
            "subspace-weighted" => Method::Subspace { weighted: true },
            "nfs" => Method::Nfs,
            other => {
                let Some(l) = other.strip_prefix("omp:") else {
                    return Err(NfError::InvalidArgument(format!("unknown method {other}")).into());
                };
                let paths: usize = l
                    .parse()
                    .map_err(|e| NfError::InvalidArgument(format!("bad omp path count: {e}")))?;
                if paths == 0 {
                    return Err(
                        NfError::InvalidArgument("omp path count must be >= 1".into()).into()
                    );
                }
                Method::Omp { paths }
            }
        };
        methods.push(m);
    }
    Ok(methods)
}

fn parse_grid(spec: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<&str> = spec.split('x').collect();
    if parts.len() != 3 {
        return Err(
            NfError::InvalidArgument(format!("codebook grid must be AxExR, got {spec}")).into()
        );
    }
    let p = |s: &str| -> anyhow::Result<usize> {
        Ok(s.parse::<usize>()
            .map_err(|e| NfError::InvalidArgument(format!("bad codebook grid: {e}")))?)
    };
    Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
}

fn cmd_sweep(scene: &SceneConfig, out: &Path, seed: u64, args: &SweepArgs) -> anyhow::Result<()> {
    let methods = parse_methods(&args.methods)?;
    let snr_db: Result<Vec<f64>, _> = args
        .snr_db
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let snr_db = snr_db.map_err(|e| NfError::InvalidArgument(format!("bad snr grid: {e}")))?;
    if args.trials == 0 {
        return Err(NfError::InvalidArgument("--trials must be >= 1".into()).into());
    }
    let kernel = scene.kernel()?;
    let array = scene.array()?;
    let wave = scene.wave()?;
    let mut r = assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?;
    if args.normalize_trace {
        r = r.scaled_to_trace(array.len() as f64)?;
    }
    let cfg = SweepConfig {
        methods,
        snr_db,
        trials: args.trials,
        base_seed: seed,
        nfs: NfsConfig {
            eta: args.eta,
            distance: args.nfs_distance,
            radius: args.nfs_radius,
            concentration: args.nfs_concentration,
        },
        codebook_grid: parse_grid(&args.codebook)?,
    };
    let records = run_sweep(&r, &array, wave, &cfg)?;
    let mut csv = String::from("method,snr_db,trial,nmse,seed\n");
    for rec in &records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.method, rec.snr_db, rec.trial, rec.nmse, rec.seed
        ));
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    write_json(
        &out.join("summary.json"),
        &SweepOut {
            format_version: FORMAT_VERSION,
            trials: args.trials,
            base_seed: seed,
            summary: summarize_sweep(&records),
        },
    )
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct FittedCluster {
    center: [f64; 3],
    normal: [f64; 3],
    radius: f64,
    concentration: f64,
    power: f64,
}

#[derive(Serialize)]
struct FitOut {
    format_version: u32,
    converged: bool,
    final_loss: f64,
    iterations: usize,
    curvature_skips: usize,
    clusters: Vec<FittedCluster>,
}

fn cmd_fit(scene: &SceneConfig, out: &Path, args: &FitArgs) -> anyhow::Result<()> {
    let array = scene.array()?;
    let wave = scene.wave()?;
    let target = if let Some(path) = &args.target {
        CorrelationMatrix::load_csv(path)?
    } else if let Some(path) = &args.ray_table {
        let rays = read_ray_table(std::fs::File::open(path)?)?;
        ray_cluster_target(&rays, &array, wave)?
    } else {
        let kernel = scene.kernel()?;
        assemble_matrix(&kernel, &array, AssemblyMode::Analytic)?
    };
    let problem = FitProblem::new(target, array, wave, args.clusters)?;
    let defaults = NfsConfig {
        distance: args.init_distance,
        radius: args.init_radius,
        ..NfsConfig::default()
    };
    let x0 = initial_guess_from_spectrum(&problem, &defaults)?;
    let (x, trace) = quasi_newton_fit(&problem, &x0, args.max_iter, args.tol)?;
    let final_loss = fit_loss(&x, &problem)?;
    let clusters = decode(&x, args.clusters)?
        .iter()
        .map(|c| FittedCluster {
            center: c.center().as_array(),
            normal: c.normal().as_array(),
            radius: c.radius(),
            concentration: c.concentration(),
            power: c.power(),
        })
        .collect();
    write_json(
        &out.join("fit_result.json"),
        &FitOut {
            format_version: FORMAT_VERSION,
            converged: trace.converged,
            final_loss,
            iterations: trace.iterates.len() - 1,
            curvature_skips: trace.curvature_skips,
            clusters,
        },
    )?;
    let file = std::fs::File::create(out.join("fit_trace.csv"))?;
    trace.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}
