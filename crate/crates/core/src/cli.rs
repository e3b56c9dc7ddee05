//! The `zmatch` command line.
//!
//! Each subcommand resolves a [`RunConfig`], runs on a worker pool sized by
//! `--deterministic` / `ZMATCH_THREADS`, writes its files, and prints one
//! JSON document on stdout. Failures print `{"error": {...}}` on stderr and
//! exit with 2 for usage errors and 1 for everything else.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Serialize;
use serde_json::{json, Value};

use crate::alignment::{align_best_of, start_set, Overlap};
use crate::cloud::PointCloud;
use crate::config::{parse_override, worker_count, FileDigest, Manifest, RunConfig};
use crate::diagnostics::{
    bench_csv, control_fixture, determinant_ratio, fit_slope, gimbal_comparison, gimbal_fixture,
    path_csv, runtime_bench, slerp_hessian_path, sphere_csv, sphere_study, symmetry_csv,
    symmetry_scan, BenchSuite,
};
use crate::error::Error;
use crate::fixtures::{self, CrescentSpec};
use crate::io::{load_cloud, save_cloud, save_json, save_text};
use crate::loss::{
    evaluate_loss, finite_difference_gradient, oracle_alignment, total_gradient, LossConfig,
};
use crate::metrics::{invariance_report, Metric};
use crate::optimize::{direct_optimize, prepare_target};
use crate::rng::{stream, streams};
use crate::zernike::project_moments;

#[derive(Debug, Parser)]
#[command(
    name = "zmatch",
    version,
    about = "Rotation-invariant 3D shape matching with Zernike moments"
)]
pub struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set loss.lambda=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run seed (shorthand for `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker, so every reduction runs in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Where to write the run manifest. Defaults to next to the main output.
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a fixture cloud.
    Gen(GenArgs),
    /// Project a cloud onto the Zernike basis.
    Project(ProjectArgs),
    /// Find the rotation taking one cloud's spectrum onto another's.
    Align(AlignArgs),
    /// Evaluate the matching loss.
    Loss(LossArgs),
    /// Compare the analytic gradient with finite differences.
    GradCheck(GradCheckArgs),
    /// Deform a cloud toward a target by gradient descent.
    Optimize(OptimizeArgs),
    /// Invariance table of the baseline metrics and the matching loss.
    Metrics(MetricsArgs),
    /// Hessian conditioning and gimbal-lock probes.
    Diagnose(DiagnoseArgs),
    /// Runtime scaling benchmarks.
    Bench(BenchArgs),
}

/// Truncation flags shared by the spectral commands.
#[derive(Debug, Args)]
pub struct BasisArgs {
    #[arg(long = "nmax")]
    pub n_max: Option<usize>,
    #[arg(long = "lmax")]
    pub l_max: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Sphere,
    Ellipsoid,
    Crescent,
    Bunny,
    WeightedBunny,
    RingEllipsoid,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub shape: Shape,
    /// Point count (all shapes but the sphere).
    #[arg(long)]
    pub n: Option<usize>,
    /// Shell size of the sphere.
    #[arg(long)]
    pub n_shell: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Normalization radius; the cloud's own largest radius by default.
    #[arg(long)]
    pub r_max: Option<f64>,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub evolved: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Random restarts in addition to the identity.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the evolved cloud rotated into the target frame.
    #[arg(long)]
    pub aligned_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub evolved: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Also check the weight gradient.
    #[arg(long)]
    pub weights: bool,
    /// Largest accepted relative component error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Base cloud; the bunny fixture when omitted.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Metrics to evaluate (all by default).
    #[arg(long = "metric", value_parser = parse_metric)]
    pub metrics: Vec<Metric>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Probe {
    Sphere,
    Symmetry,
    Gimbal,
    Path,
    All,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum, default_value_t = Probe::All)]
    pub probe: Probe,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suites to run (all by default).
    #[arg(long = "suite", value_parser = parse_suite)]
    pub suites: Vec<BenchSuite>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| {
        let names: Vec<_> = Metric::ALL.iter().map(|m| m.name()).collect();
        format!("unknown metric '{s}', expected one of {}", names.join(", "))
    })
}

fn parse_suite(s: &str) -> Result<BenchSuite, String> {
    BenchSuite::parse(s).map_err(|e| e.to_string())
}

/// Errors surfaced to the caller with their exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
    /// A check that ran to completion and did not pass.
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Run(Error::InvalidConfig(_) | Error::InvalidTruncation { .. }) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Check(_) => "check_failed",
            Failure::Run(e) => match e {
                Error::InvalidCloud(_) => "invalid_cloud",
                Error::InvalidScale(_) => "invalid_scale",
                Error::InvalidAxis(_) => "invalid_axis",
                Error::NonUnitQuaternion(_) => "non_unit_quaternion",
                Error::InvalidTruncation { .. } => "invalid_truncation",
                Error::InadmissibleIndex { .. } => "inadmissible_index",
                Error::TruncationMismatch(_) => "truncation_mismatch",
                Error::NotTangent(_) => "not_tangent",
                Error::AlignmentDiverged { .. } => "alignment_diverged",
                Error::DegenerateHessian => "degenerate_hessian",
                Error::OptimizationDiverged { .. } => "optimization_diverged",
                Error::SizeMismatch(_) => "size_mismatch",
                Error::InvalidConfig(_) => "invalid_config",
                Error::Parse { .. } => "parse",
                Error::Io(_) => "io",
                Error::Json(_) => "json",
            },
        }
    }

    pub fn to_json(&self) -> Value {
        let message = match self {
            Failure::Usage(m) | Failure::Check(m) => m.clone(),
            Failure::Run(e) => e.to_string(),
        };
        let mut body =
            json!({ "kind": self.kind(), "message": message, "exit_code": self.exit_code() });
        if let Failure::Run(Error::Parse { line, .. }) = self {
            body["line"] = json!(line);
        }
        json!({ "error": body })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let f = Failure::Usage(e.render().to_string().trim().to_string());
            let _ = writeln!(err, "{}", f.to_json());
            return f.exit_code();
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, argv) {
        Ok(doc) => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&doc).unwrap_or_default()
            );
            0
        }
        Err(f) => {
            let _ = writeln!(err, "{}", f.to_json());
            f.exit_code()
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Project(_) => "project",
            Command::Align(_) => "align",
            Command::Loss(_) => "loss",
            Command::GradCheck(_) => "grad-check",
            Command::Optimize(_) => "optimize",
            Command::Metrics(_) => "metrics",
            Command::Diagnose(_) => "diagnose",
            Command::Bench(_) => "bench",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Gen(_) | Command::Diagnose(_) | Command::Bench(_) => vec![],
            Command::Project(a) => vec![&a.cloud],
            Command::Align(a) => vec![&a.evolved, &a.target],
            Command::Loss(a) => vec![&a.evolved, &a.target],
            Command::GradCheck(a) => vec![&a.cloud, &a.target],
            Command::Optimize(a) => vec![&a.init, &a.target],
            Command::Metrics(a) => a.cloud.iter().map(PathBuf::as_path).collect(),
        }
    }

    /// Config overrides implied by the command's own flags.
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut o = Vec::new();
        let basis = |b: &BasisArgs, o: &mut Vec<(String, Value)>| {
            if let Some(n) = b.n_max {
                o.push(("basis.n_max".into(), json!(n)));
            }
            if let Some(l) = b.l_max {
                o.push(("basis.l_max".into(), json!(l)));
            }
        };
        match self {
            Command::Gen(a) => {
                if let Some(n) = a.n {
                    o.push(("gen.n".into(), json!(n)));
                }
                if let Some(n) = a.n_shell {
                    o.push(("gen.n_shell".into(), json!(n)));
                }
            }
            Command::Project(a) => basis(&a.basis, &mut o),
            Command::Align(a) => {
                basis(&a.basis, &mut o);
                if let Some(r) = a.restarts {
                    o.push(("loss.multi_start".into(), json!(r + 1)));
                }
            }
            Command::Loss(a) => basis(&a.basis, &mut o),
            Command::GradCheck(a) => basis(&a.basis, &mut o),
            Command::Optimize(a) => {
                basis(&a.basis, &mut o);
                if let Some(s) = a.max_steps {
                    o.push(("optimize.max_steps".into(), json!(s)));
                }
            }
            Command::Metrics(_) | Command::Diagnose(_) | Command::Bench(_) => {}
        }
        o
    }
}

/// Files produced by a command, with the manifest's default location.
struct Outputs {
    files: Vec<PathBuf>,
    manifest_default: Option<PathBuf>,
}

impl Outputs {
    fn file(path: &Path) -> Self {
        let mut m = path.as_os_str().to_owned();
        m.push(".manifest.json");
        Self {
            files: vec![path.to_path_buf()],
            manifest_default: Some(PathBuf::from(m)),
        }
    }

    fn dir(dir: &Path, names: &[&str]) -> Self {
        Self {
            files: names.iter().map(|n| dir.join(n)).collect(),
            manifest_default: Some(dir.join("manifest.json")),
        }
    }

    fn none() -> Self {
        Self {
            files: vec![],
            manifest_default: None,
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn execute(cli: &Cli, argv: Vec<String>) -> Outcome<Value> {
    let mut overrides = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(("seed".to_string(), json!(s)));
    }
    overrides.extend(cli.command.overrides());
    for s in &cli.overrides {
        overrides.push(parse_override(s)?);
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if cli.deterministic {
        cfg.bench.parallel = false;
    }
    let threads = worker_count(cli.deterministic)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Run(Error::InvalidConfig(format!("thread pool: {e}"))))?;

    let mut manifest = Manifest::new(
        cli.command.name(),
        argv,
        &cfg,
        cli.deterministic,
        pool.current_num_threads(),
    );
    for p in cli.command.inputs() {
        manifest.inputs.push(FileDigest::of(p)?);
    }

    let (result, outputs) = pool.install(|| dispatch(&cli.command, &cfg))?;

    let manifest_path = cli.manifest.clone().or(outputs.manifest_default);
    let written: Vec<&PathBuf> = outputs.files.iter().chain(manifest_path.iter()).collect();
    for w in &written {
        if cli.command.inputs().iter().any(|i| same_file(i, w)) {
            // Too late to undo the command's own files, but the input was only
            // ever opened for reading; refusing here keeps the manifest off it.
            return Err(Failure::Usage(format!(
                "output {} would overwrite an input",
                w.display()
            )));
        }
    }
    manifest.outputs = outputs
        .files
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    let mut doc = json!({
        "command": cli.command.name(),
        "config_hash": manifest.config_hash,
        "seed": cfg.seed,
        "result": result,
        "outputs": manifest.outputs,
    });
    match manifest_path {
        Some(p) => {
            save_json(&manifest, &p)?;
            doc["manifest"] = json!(p.display().to_string());
        }
        None => doc["manifest"] = serde_json::to_value(&manifest).map_err(Error::from)?,
    }
    Ok(doc)
}

fn check_outputs(cmd: &Command) -> Outcome<()> {
    let outs: Vec<&Path> = match cmd {
        Command::Gen(a) => vec![&a.out],
        Command::Project(a) => vec![&a.out],
        Command::Align(a) => a
            .out
            .iter()
            .chain(a.aligned_out.iter())
            .map(PathBuf::as_path)
            .collect(),
        Command::Loss(a) => a.out.iter().map(PathBuf::as_path).collect(),
        Command::GradCheck(a) => a.out.iter().map(PathBuf::as_path).collect(),
        Command::Optimize(a) => vec![&a.out_dir],
        Command::Metrics(a) => vec![&a.out_dir],
        Command::Diagnose(a) => vec![&a.out_dir],
        Command::Bench(a) => vec![&a.out],
    };
    for o in outs {
        if cmd.inputs().iter().any(|i| same_file(i, o)) {
            return Err(Failure::Usage(format!(
                "output {} would overwrite an input",
                o.display()
            )));
        }
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Outcome<Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    check_outputs(cmd)?;
    match cmd {
        Command::Gen(a) => gen(a, cfg),
        Command::Project(a) => project(a, cfg),
        Command::Align(a) => align(a, cfg),
        Command::Loss(a) => loss(a, cfg),
        Command::GradCheck(a) => grad_check(a, cfg),
        Command::Optimize(a) => optimize(a, cfg),
        Command::Metrics(a) => metrics(a, cfg),
        Command::Diagnose(a) => diagnose(a, cfg),
        Command::Bench(a) => bench(a, cfg),
    }
}

fn gen(a: &GenArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let g = &cfg.gen;
    let seed = cfg.seed;
    let cloud = match a.shape {
        Shape::Sphere => fixtures::gen_sphere_cloud(g.n_shell, seed)?,
        Shape::Ellipsoid => fixtures::ellipsoid(g.n, g.semi_axes, seed)?,
        Shape::Crescent => fixtures::crescent(&CrescentSpec {
            n: g.n,
            elongation: g.elongation,
            bend_radius: g.bend_radius,
            variant: g.crescent_variant,
            symmetric: false,
            seed,
        })?,
        Shape::Bunny => fixtures::bunny(g.n, seed)?,
        Shape::WeightedBunny => fixtures::weighted_bunny(g.n, seed)?,
        Shape::RingEllipsoid => fixtures::ring_ellipsoid(g.n_rings, g.n_phi, g.elongation, seed)?,
    };
    save_cloud(&cloud, &a.out)?;
    let result = json!({
        "points": cloud.len(),
        "max_radius": cloud.max_radius(),
        "weighted": cloud.weights().iter().any(|&w| w != 1.0),
    });
    Ok((result, Outputs::file(&a.out)))
}

fn project(a: &ProjectArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let basis = cfg.basis.build()?;
    let cloud = load_cloud(&a.cloud)?;
    let normalized = match a.r_max {
        Some(r) => cloud.normalize_to_unit_ball(r)?,
        None => cloud.normalize_self()?,
    };
    let moments = project_moments(&basis, &normalized)?;
    save_json(&moments, &a.out)?;
    let result = json!({
        "n_spec": moments.n_spec(),
        "dims": moments.dims(),
        "r_max": normalized.scale,
        "out_of_ball_fraction": normalized.out_of_ball_fraction,
    });
    Ok((result, Outputs::file(&a.out)))
}

fn align(a: &AlignArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let basis = cfg.basis.build()?;
    let evolved = load_cloud(&a.evolved)?;
    let target = load_cloud(&a.target)?;
    let prep = prepare_target(&basis, &target)?;
    let c_evol = project_moments(&basis, &evolved.normalize_to_unit_ball(prep.r_max)?)?;
    let overlap = Overlap::new(&c_evol, &prep.moments)?;
    let mut rng = stream(cfg.seed, streams::ALIGN_INIT);
    let starts = start_set(cfg.loss.multi_start, None, &mut rng);
    let res = align_best_of(&overlap, &starts, &cfg.alignment)?;
    let r = res.q_star.to_rotation_matrix();
    let (axis, angle) = axis_angle(&res.q_star);
    let mut result = json!({
        "q_star": res.q_star,
        "rotation_matrix": [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]],
        "axis": axis,
        "angle_degrees": angle,
        "iterations": res.iterations,
        "converged": res.converged,
        "final_overlap": res.final_overlap,
        "starts": starts.len(),
    });
    let mut outputs = Outputs::none();
    if let Some(p) = &a.aligned_out {
        // Rotate about the evolved center, then move onto the target center.
        let com = evolved.center_of_mass();
        let aligned = evolved
            .translate(&-com)
            .rotate(&res.q_star)
            .translate(&target.center_of_mass());
        save_cloud(&aligned, p)?;
        outputs = Outputs::file(p);
    }
    if let Some(p) = &a.out {
        save_json(&result, p)?;
        outputs.files.insert(0, p.clone());
        outputs.manifest_default = Outputs::file(p).manifest_default;
    }
    result["evolved_points"] = json!(evolved.len());
    Ok((result, outputs))
}

fn axis_angle(q: &crate::rotation::UnitQuaternion) -> ([f64; 3], f64) {
    // Canonical half of the double cover: w ≥ 0 gives an angle in [0°, 180°].
    let q = if q.w() < 0.0 { q.neg() } else { *q };
    let v = Vector3::new(q.x(), q.y(), q.z());
    let s = v.norm();
    let angle = 2.0 * s.atan2(q.w());
    let axis = if s > 0.0 { v / s } else { Vector3::x() };
    ([axis.x, axis.y, axis.z], angle.to_degrees())
}

fn load_pair(
    evolved: &Path,
    target: &Path,
    cfg: &RunConfig,
) -> Outcome<(
    crate::ZernikeBasis,
    PointCloud,
    crate::optimize::PreparedTarget,
)> {
    let basis = cfg.basis.build()?;
    let x = load_cloud(evolved)?;
    let t = load_cloud(target)?;
    let prep = prepare_target(&basis, &t)?;
    Ok((basis, x, prep))
}

fn loss(a: &LossArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let (basis, x, prep) = load_pair(&a.evolved, &a.target, cfg)?;
    let (value, res) = evaluate_loss(&basis, &x, &prep.moments, prep.r_max, &cfg.loss, None)?;
    let result = json!({
        "loss": value,
        "q_star": res.q_star,
        "alignment_iterations": res.iterations,
        "alignment_converged": res.converged,
        "final_overlap": res.final_overlap,
        "target_r_max": prep.r_max,
    });
    let outputs = match &a.out {
        Some(p) => {
            save_json(&result, p)?;
            Outputs::file(p)
        }
        None => Outputs::none(),
    };
    Ok((result, outputs))
}

fn grad_check(a: &GradCheckArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    if !(a.h > 0.0 && a.h.is_finite()) || !(a.tolerance > 0.0) {
        return Err(Failure::Usage(
            "--h and --tolerance must be positive".into(),
        ));
    }
    let (basis, x, prep) = load_pair(&a.cloud, &a.target, cfg)?;
    let loss_cfg = LossConfig {
        alignment: oracle_alignment(&cfg.loss.alignment),
        ..cfg.loss.clone()
    };
    let g = total_gradient(&basis, &x, &prep.moments, prep.r_max, &loss_cfg, None)?;
    let (fd, evaluations) = finite_difference_gradient(
        &basis,
        &x,
        &prep.moments,
        prep.r_max,
        &loss_cfg,
        a.h,
        Some(g.q_star),
        a.weights,
    )?;
    let err = if a.weights {
        g.max_relative_error(&fd)
    } else {
        let unweighted = crate::loss::LossGradient {
            grad_weights: vec![0.0; g.grad_weights.len()],
            ..g.clone()
        };
        unweighted.max_relative_error(&fd)
    };
    let result = json!({
        "max_relative_error": err,
        "tolerance": a.tolerance,
        "within_tolerance": err <= a.tolerance,
        "loss": g.value,
        "loss_evaluations": evaluations,
        "implicit_term_norm": g.implicit_term_norm,
        "pinv_rank": g.pinv_rank,
    });
    let outputs = match &a.out {
        Some(p) => {
            save_json(&result, p)?;
            Outputs::file(p)
        }
        None => Outputs::none(),
    };
    if err > a.tolerance {
        return Err(Failure::Check(format!(
            "max relative gradient error {err:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Ok((result, outputs))
}

fn optimize(a: &OptimizeArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let (basis, x0, prep) = load_pair(&a.init, &a.target, cfg)?;
    let traj = direct_optimize(&basis, &x0, &prep, &cfg.optimize, &cfg.loss)?;
    fs::create_dir_all(&a.out_dir).map_err(Error::from)?;
    let mut names = vec!["trajectory.jsonl", "learning_curve.csv", "final.csv"];
    traj.write_jsonl(std::io::BufWriter::new(
        fs::File::create(a.out_dir.join(names[0])).map_err(Error::from)?,
    ))?;
    traj.write_csv(fs::File::create(a.out_dir.join(names[1])).map_err(Error::from)?)?;
    save_cloud(&traj.final_cloud, a.out_dir.join(names[2]))?;
    let snapshot_names: Vec<String> = traj
        .snapshots
        .iter()
        .map(|s| format!("snapshot_{:06}.csv", s.step))
        .collect();
    for (s, name) in traj.snapshots.iter().zip(&snapshot_names) {
        save_cloud(&s.cloud, a.out_dir.join(name))?;
    }
    names.extend(snapshot_names.iter().map(String::as_str));
    let result = json!({
        "steps": traj.records.len(),
        "converged": traj.converged,
        "initial_loss": traj.records.first().map(|r| r.loss),
        "final_loss": traj.final_loss(),
    });
    Ok((result, Outputs::dir(&a.out_dir, &names)))
}

fn metrics(a: &MetricsArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let p = &cfg.metrics;
    let base = match &a.cloud {
        Some(path) => load_cloud(path)?,
        None => fixtures::bunny(p.n_points, p.seed)?,
    };
    let which = if a.metrics.is_empty() {
        Metric::ALL.to_vec()
    } else {
        a.metrics.clone()
    };
    let report = invariance_report(&base, &which, p)?;
    let flags: Vec<_> = which.iter().filter_map(|&m| report.flags(m)).collect();
    fs::create_dir_all(&a.out_dir).map_err(Error::from)?;
    let names = ["invariance.csv", "flags.json"];
    save_text(&report.to_csv(), a.out_dir.join(names[0]))?;
    save_json(&flags, a.out_dir.join(names[1]))?;
    let result = json!({ "params_hash": report.params_hash, "flags": to_value(&flags)? });
    Ok((result, Outputs::dir(&a.out_dir, &names)))
}

fn diagnose(a: &DiagnoseArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let d = &cfg.diagnose;
    let basis = d.basis.build()?;
    let run = |p: Probe| a.probe == Probe::All || a.probe == p;
    fs::create_dir_all(&a.out_dir).map_err(Error::from)?;
    let mut names = Vec::new();
    let mut result = json!({});
    if run(Probe::Sphere) {
        let rows = sphere_study(d.n_shell, d.elongation, d.noise_sigma, &d.seeds, &basis)?;
        save_text(&sphere_csv(&rows), a.out_dir.join("sphere.csv"))?;
        names.push("sphere.csv");
        result["sphere_determinant_ratio"] = json!(determinant_ratio(&rows));
    }
    if run(Probe::Symmetry) {
        let rows = symmetry_scan(&d.n_phis, d.n_rings, d.ring_elongation, &basis, cfg.seed)?;
        save_text(&symmetry_csv(&rows), a.out_dir.join("symmetry.csv"))?;
        names.push("symmetry.csv");
        let separation: Vec<f64> = rows
            .iter()
            .map(|r| {
                let [_, l2, l3] = r.report.tangent_eigenvalues;
                (l2 / l3).abs()
            })
            .collect();
        result["symmetry_separation"] = json!(separation);
    }
    if run(Probe::Gimbal) || run(Probe::Path) {
        let cloud = fixtures::bunny(d.gimbal_points, cfg.seed)?;
        if run(Probe::Gimbal) {
            for (label, (src, dst)) in
                [("gimbal", gimbal_fixture()), ("control", control_fixture())]
            {
                let tr = gimbal_comparison(&src, &dst, &cloud, &basis, &d.alignment)?;
                let name = if label == "gimbal" {
                    "gimbal.csv"
                } else {
                    "gimbal_control.csv"
                };
                save_text(&tr.to_csv(), a.out_dir.join(name))?;
                names.push(name);
                result[label] = json!({
                    "max_overlap": tr.max_overlap,
                    "quaternion_final": tr.quaternion.final_overlap,
                    "euler_final": tr.euler.final_overlap,
                    "quaternion_iterations": tr.quaternion.iterations,
                    "euler_iterations": tr.euler.iterations,
                });
            }
        }
        if run(Probe::Path) {
            let (qa, qb) = gimbal_fixture();
            let pts = slerp_hessian_path(&qa, &qb, d.path_steps, &cloud, &basis)?;
            save_text(&path_csv(&pts), a.out_dir.join("path.csv"))?;
            names.push("path.csv");
            let range = |f: &dyn Fn(&crate::diagnostics::PathPoint) -> f64| {
                let v: Vec<f64> = pts.iter().map(|p| f(p).abs()).collect();
                let max = v.iter().copied().fold(0.0, f64::max);
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                json!({ "min_abs": min, "max_abs": max })
            };
            result["path"] = json!({
                "quaternion_determinant": range(&|p| p.quaternion_determinant),
                "euler_determinant": range(&|p| p.euler_determinant),
            });
        }
    }
    save_json(&result, a.out_dir.join("summary.json"))?;
    names.push("summary.json");
    Ok((result, Outputs::dir(&a.out_dir, &names)))
}

fn bench(a: &BenchArgs, cfg: &RunConfig) -> Outcome<(Value, Outputs)> {
    let suites = if a.suites.is_empty() {
        BenchSuite::ALL.to_vec()
    } else {
        a.suites.clone()
    };
    let records = runtime_bench(&suites, &cfg.bench)?;
    save_text(&bench_csv(&records)?, &a.out)?;
    let slope = |op: &str| fit_slope(&records, op);
    let result = json!({
        "records": records.len(),
        "implicit_gradient_slope_ms_per_iteration": slope("implicit_gradient"),
        "fd_gradient_slope_ms_per_iteration": slope("fd_gradient"),
    });
    Ok((result, Outputs::file(&a.out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(
            std::iter::once("zmatch").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn bad_flags_exit_with_usage_json() {
        let (code, _, err) = run_capture(&["gen", "--shape", "torus", "--out", "x.csv"]);
        assert_eq!(code, 2);
        let v: Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"]["kind"], "usage");
        let (code, _, _) = run_capture(&["frobnicate"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn invalid_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.csv");
        let (code, _, err) = run_capture(&[
            "gen",
            "--shape",
            "sphere",
            "--set",
            "gen.n_shell=0",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2, "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = run_capture(&[
            "project",
            "--cloud",
            dir.path().join("nope.csv").to_str().unwrap(),
            "--out",
            dir.path().join("m.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        let v: Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"]["kind"], "io");
    }

    #[test]
    fn gen_writes_cloud_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("b.csv");
        let (code, stdout, err) = run_capture(&[
            "gen",
            "--shape",
            "weighted-bunny",
            "--n",
            "200",
            "--seed",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        let doc: Value = serde_json::from_str(&stdout).unwrap();
        assert_eq!(doc["result"]["points"], 200);
        assert_eq!(doc["result"]["weighted"], true);
        let c = load_cloud(&out).unwrap();
        assert!(c.weights().iter().all(|&w| w == 1.0 || w == 2.0));
        let m: Manifest = serde_json::from_str(
            &fs::read_to_string(dir.path().join("b.csv.manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(m.seed, 2);
        assert_eq!(m.config_hash, m.config.hash());
        assert_eq!(m.command, "gen");
    }

    #[test]
    fn output_may_not_overwrite_input() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.csv");
        save_cloud(&fixtures::bunny(50, 1).unwrap(), &c).unwrap();
        let before = fs::read(&c).unwrap();
        let (code, _, _) = run_capture(&[
            "project",
            "--cloud",
            c.to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        assert_eq!(fs::read(&c).unwrap(), before);
    }

    #[test]
    fn axis_angle_is_canonical() {
        let q = crate::rotation::UnitQuaternion::from_axis_angle(&Vector3::z(), 3.0).unwrap();
        let (axis, deg) = axis_angle(&q.neg());
        assert!((deg - 3f64.to_degrees()).abs() < 1e-9);
        assert!((axis[2] - 1.0).abs() < 1e-12);
    }
}
