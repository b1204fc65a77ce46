//! Command implementations: each builds the core objects from the effective
//! configuration, runs, writes its data file(s) plus a manifest, and returns
//! a printable summary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nlhomog_core::cell::{
    self, eval_supercritical, euler_lagrange_residual, relaxed_supercritical, CellProblem, CellResult,
    LambdaSweep, MeshPolicy, Regime, RelaxedResult,
};
use nlhomog_core::densities::{reflection_defect, CoefficientField, DensitySpec, GrowthMode};
use nlhomog_core::gamma::{
    run_schedule, EpsDeltaSchedule, GammaGridPolicy, GammaRun, ScheduleTarget,
};
use nlhomog_core::kernels::{check_assumptions, p_moment, truncate, AssumptionReport, Kernel, PMoments, Quadrature};
use nlhomog_core::optimizer::{Algorithm, OptimizerOptions};
use nlhomog_core::torus::TorusGrid;

use crate::config::{ConfigError, RunConfig};
use crate::outputs::{fmt_f64, write_csv, write_field, write_manifest};

/// Top-level CLI error; carries the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Config(String),
    /// Exit code 2.
    Numerical(String),
    /// Exit code 2.
    Io(String),
    /// Exit code 3.
    Verification(usize),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Verification(n) => write!(f, "verification failed: {n} criterion(s) violated"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<nlhomog_core::Error> for CliError {
    fn from(e: nlhomog_core::Error) -> Self {
        match e {
            nlhomog_core::Error::InvalidParameter(m) | nlhomog_core::Error::Unsupported(m) => {
                CliError::Config(m)
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Files written and human-readable summary lines of one command run.
pub struct CommandOutput {
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn build_quadrature(cfg: &RunConfig) -> CliResult<Quadrature> {
    Ok(Quadrature::build(
        cfg.get_usize("grid.d")?,
        cfg.get_f64("kernel.t")?,
        cfg.get_usize("quad.base")?,
        cfg.get_usize("quad.grading")?,
    )?)
}

pub fn build_kernel(cfg: &RunConfig, quad: &Quadrature) -> CliResult<Kernel> {
    let name = cfg.get("kernel.name");
    let d = cfg.get_usize("grid.d")?;
    let t = cfg.get_f64("kernel.t")?;
    let r0 = cfg.get_f64("kernel.r0")?;
    if name == "file" {
        let path = cfg.get("kernel.file");
        if path.is_empty() {
            return Err(CliError::Config("kernel.name = file requires kernel.file".into()));
        }
        let text = fs::read_to_string(path)?;
        return Ok(Kernel::tabulated_from_csv(quad, &text, 1.0, r0)?);
    }
    Ok(Kernel::by_name(name, d, t, r0)?)
}

fn coefficient(cfg: &RunConfig, which: &str) -> CliResult<CoefficientField> {
    let d = cfg.get_usize("grid.d")?;
    let cells = cfg.get_usize(&format!("density.{which}.cells"))?;
    let raw = cfg.get(&format!("density.{which}.values")).to_string();
    let values = if let Some(path) = raw.strip_prefix("file:") {
        // Row-major cell values from a comma-separated file.
        let text = fs::read_to_string(path.trim())?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| CliError::Config(format!("coefficient file: {e}"))))
            .collect::<CliResult<Vec<f64>>>()?
    } else {
        RunConfig::parse(&format!("density.{which}.values = {raw}\n"))?
            .get_f64_list(&format!("density.{which}.values"))?
    };
    Ok(CoefficientField::new(d, cells, values)?)
}

pub fn build_density(cfg: &RunConfig) -> CliResult<DensitySpec> {
    if cfg.get("density.kind") != "separable" {
        return Err(CliError::Config(format!(
            "unknown density.kind `{}` (the file format supports `separable`)",
            cfg.get("density.kind")
        )));
    }
    let a = coefficient(cfg, "a")?;
    let b = coefficient(cfg, "b")?;
    let p = cfg.get_f64("density.p")?;
    let m = cfg.get_usize("density.m")?;
    let growth = match cfg.get("density.growth_mode") {
        "strict" => GrowthMode::Strict,
        "affine" => GrowthMode::Affine,
        other => return Err(CliError::Config(format!("density.growth_mode `{other}` is not strict|affine"))),
    };
    Ok(DensitySpec::separable(a, b, p, m)?.with_growth_mode(growth))
}

pub fn build_matrix(cfg: &RunConfig) -> CliResult<Vec<f64>> {
    let m = cfg.get_usize("density.m")?;
    let d = cfg.get_usize("grid.d")?;
    let vals = cfg.get_f64_list("matrix.values")?;
    if vals.len() != m * d {
        return Err(CliError::Config(format!(
            "matrix.values needs {} entries (m x d), got {}",
            m * d,
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn build_opts(cfg: &RunConfig) -> CliResult<OptimizerOptions> {
    let p = cfg.get_f64("density.p")?;
    let mut opts = OptimizerOptions::for_exponent(p);
    match cfg.get("optimizer.tol_grad") {
        "auto" => {}
        raw => {
            opts.tol_grad = raw
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("optimizer.tol_grad: {e}")))?
        }
    }
    opts.max_iter = cfg.get_usize("optimizer.max_iter")?;
    opts.algorithm = match cfg.get("optimizer.algorithm") {
        "accelerated_gradient" => Algorithm::AcceleratedGradient,
        "nonlinear_cg" => Algorithm::NonlinearCg,
        other => {
            return Err(CliError::Config(format!(
                "optimizer.algorithm `{other}` is not accelerated_gradient|nonlinear_cg"
            )))
        }
    };
    opts.restart_every = cfg.get_usize("optimizer.restart_every")?;
    Ok(opts)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `kappa`: moment and assumption report of the configured kernel.
pub struct KappaReport {
    pub moments: PMoments,
    pub assumptions: AssumptionReport,
    pub reflection_defect: f64,
    pub tail_estimate: f64,
}

pub fn cmd_kappa(cfg: &RunConfig, out: &Path) -> CliResult<(KappaReport, CommandOutput)> {
    ensure_dir(out)?;
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let p = cfg.get_f64("density.p")?;
    let moments = p_moment(&kernel, p, &quad)?;
    let assumptions = check_assumptions(&kernel, p, &quad);
    let tail_estimate = if kernel.support_radius().is_none() {
        truncate(&kernel, cfg.get_f64("kernel.t")?, p, cfg.get_usize("quad.tail_probe")?)?.1
    } else {
        0.0
    };
    let defect = reflection_defect(&kernel, &density, 256, cfg.get_u64("seed")?);

    let rows = vec![vec![
        fmt_f64(moments.full),
        fmt_f64(moments.directional),
        fmt_f64(assumptions.mass),
        assumptions.rho1_ok.to_string(),
        fmt_f64(assumptions.symmetry_defect),
        assumptions.divergence_flag.to_string(),
        fmt_f64(tail_estimate),
        fmt_f64(defect),
    ]];
    let csv = write_csv(
        out,
        "kappa.csv",
        &[
            "kappa_full",
            "kappa_dir",
            "mass",
            "rho1_ok",
            "symmetry_defect",
            "divergence_flag",
            "tail_estimate",
            "reflection_defect",
        ],
        &rows,
    )?;
    let manifest = write_manifest(out, "kappa", cfg)?;
    let report = KappaReport { moments, assumptions, reflection_defect: defect, tail_estimate };
    let summary = vec![
        format!("kappa_full = {}", fmt_f64(report.moments.full)),
        format!("kappa_dir = {}", fmt_f64(report.moments.directional)),
        format!("mass = {} (divergence_flag = {})", fmt_f64(report.assumptions.mass), report.assumptions.divergence_flag),
    ];
    Ok((report, CommandOutput { summary, files: vec![csv, manifest] }))
}

fn regime_from(cfg: &RunConfig) -> CliResult<Regime> {
    match cfg.get("cell.regime") {
        "local" => Ok(Regime::Local),
        "nonlocal" => Ok(Regime::Nonlocal { lambda: cfg.get_f64("cell.lambda")? }),
        "supercritical" => Ok(Regime::Supercritical),
        other => Err(CliError::Config(format!(
            "cell.regime `{other}` is not local|nonlocal|supercritical"
        ))),
    }
}

pub fn build_cell_problem(cfg: &RunConfig) -> CliResult<CellProblem> {
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let matrix = build_matrix(cfg)?;
    let grid = TorusGrid::new(cfg.get_usize("grid.d")?, cfg.get_usize("grid.n")?)?;
    let opts = build_opts(cfg)?;
    Ok(CellProblem::new(regime_from(cfg)?, matrix, density, kernel, quad, grid, opts)?)
}

fn cell_row(regime: &str, lambda: &str, r: &CellResult, grid_n: usize) -> Vec<String> {
    vec![
        regime.to_string(),
        lambda.to_string(),
        fmt_f64(r.value),
        fmt_f64(r.jensen_lower),
        fmt_f64(r.affine_upper),
        grid_n.to_string(),
        r.iterations.to_string(),
        fmt_f64(r.grad_norm),
        r.flags.join(";"),
    ]
}

pub fn cmd_cell(cfg: &RunConfig, out: &Path) -> CliResult<(CellResult, CommandOutput)> {
    ensure_dir(out)?;
    let prob = build_cell_problem(cfg)?;
    let result = prob.solve()?;
    let regime = cfg.get("cell.regime").to_string();
    let lambda = if regime == "nonlocal" { cfg.get("cell.lambda").to_string() } else { regime.clone() };
    let csv = write_csv(
        out,
        "cell.csv",
        &["regime", "lambda", "value", "jensen_lower", "affine_upper", "grid_n", "iterations", "grad_norm", "flags"],
        &[cell_row(&regime, &lambda, &result, cfg.get_usize("grid.n")?)],
    )?;
    let field = write_field(out, "minimizer.csv", prob.matrix(), &result.minimizer)?;
    let manifest = write_manifest(out, "cell", cfg)?;
    let summary = vec![format!(
        "f({}) = {}  [jensen {}, affine {}, iterations {}, grad {}]",
        regime,
        fmt_f64(result.value),
        fmt_f64(result.jensen_lower),
        fmt_f64(result.affine_upper),
        result.iterations,
        fmt_f64(result.grad_norm)
    )];
    Ok((result, CommandOutput { summary, files: vec![csv, field, manifest] }))
}

pub fn sweep_policy(cfg: &RunConfig) -> CliResult<MeshPolicy> {
    Ok(MeshPolicy {
        resolve_factor: cfg.get_f64("sweep.resolve_factor")?,
        n_min: cfg.get_usize("sweep.n_min")?,
        n_max: cfg.get_usize("sweep.n_max")?,
        endpoint_n: cfg.get_usize("sweep.endpoint_n")?,
    })
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> CliResult<(LambdaSweep, CommandOutput)> {
    ensure_dir(out)?;
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let matrix = build_matrix(cfg)?;
    let opts = build_opts(cfg)?;
    let policy = sweep_policy(cfg)?;
    let lambdas = cfg.get_f64_list("sweep.lambdas")?;
    let sweep = cell::sweep(&lambdas, &matrix, &density, &kernel, &quad, &policy, &opts)?;

    let header =
        ["lambda", "value", "jensen_lower", "affine_upper", "grid_n", "iterations", "grad_norm", "flags"];
    let mut rows = Vec::new();
    let local = &sweep.endpoint_local;
    rows.push(vec![
        "0".to_string(),
        fmt_f64(local.value),
        fmt_f64(local.jensen_lower),
        fmt_f64(local.affine_upper),
        policy.endpoint_n.to_string(),
        local.iterations.to_string(),
        fmt_f64(local.grad_norm),
        join_flags(&local.flags, "endpoint_local"),
    ]);
    for e in &sweep.entries {
        rows.push(vec![
            fmt_f64(e.lambda),
            fmt_f64(e.value),
            fmt_f64(e.jensen_lower),
            fmt_f64(e.affine_upper),
            e.grid_n.to_string(),
            e.iterations.to_string(),
            fmt_f64(e.grad_norm),
            e.flags.join(";"),
        ]);
    }
    rows.push(vec![
        "inf".to_string(),
        fmt_f64(sweep.endpoints.1),
        "nan".to_string(),
        fmt_f64(sweep.endpoints.1),
        policy.endpoint_n.to_string(),
        "0".to_string(),
        "0".to_string(),
        "endpoint_supercritical".to_string(),
    ]);
    let csv = write_csv(out, "sweep.csv", &header, &rows)?;
    let manifest = write_manifest(out, "sweep", cfg)?;
    let summary = vec![format!(
        "sweep over {} lambdas: f_0 = {}, f_inf = {}",
        sweep.entries.len(),
        fmt_f64(sweep.endpoints.0),
        fmt_f64(sweep.endpoints.1)
    )];
    Ok((sweep, CommandOutput { summary, files: vec![csv, manifest] }))
}

fn join_flags(flags: &[String], extra: &str) -> String {
    let mut all: Vec<&str> = flags.iter().map(|s| s.as_str()).collect();
    all.push(extra);
    all.join(";")
}

pub fn cmd_fsup(cfg: &RunConfig, out: &Path) -> CliResult<(f64, CommandOutput)> {
    ensure_dir(out)?;
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let matrix = build_matrix(cfg)?;
    let grid = TorusGrid::new(cfg.get_usize("grid.d")?, cfg.get_usize("grid.n")?)?;
    let value = eval_supercritical(&matrix, &density, &kernel, &quad, &grid)?;
    let csv = write_csv(
        out,
        "fsup.csv",
        &["value", "grid_n"],
        &[vec![fmt_f64(value), cfg.get("grid.n").to_string()]],
    )?;
    let manifest = write_manifest(out, "fsup", cfg)?;
    let summary = vec![format!("f_inf = {}", fmt_f64(value))];
    Ok((value, CommandOutput { summary, files: vec![csv, manifest] }))
}

pub fn cmd_relaxed(cfg: &RunConfig, out: &Path) -> CliResult<(RelaxedResult, CommandOutput)> {
    ensure_dir(out)?;
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let matrix = build_matrix(cfg)?;
    let opts = build_opts(cfg)?;
    let n = cfg.get_usize("relaxed.n")?;
    let r = relaxed_supercritical(&matrix, &density, &kernel, &quad, n, &opts)?;
    let fm: Vec<String> = r.kernel_first_moment.iter().map(|v| fmt_f64(*v)).collect();
    let csv = write_csv(
        out,
        "relaxed.csv",
        &["f0", "inf_value", "gap", "first_moment", "iterations", "grad_norm", "flags"],
        &[vec![
            fmt_f64(r.f0),
            fmt_f64(r.inf_value),
            fmt_f64(r.gap),
            fm.join(";"),
            r.iterations.to_string(),
            fmt_f64(r.grad_norm),
            if r.converged { String::new() } else { "unconverged".to_string() },
        ]],
    )?;
    let field = write_field(out, "vminimizer.csv", &matrix, &r.minimizer)?;
    let manifest = write_manifest(out, "relaxed", cfg)?;
    let summary = vec![format!(
        "relaxed: F(0) = {}, inf = {}, gap = {}, first moment = [{}]",
        fmt_f64(r.f0),
        fmt_f64(r.inf_value),
        fmt_f64(r.gap),
        fm.join(", ")
    )];
    Ok((r, CommandOutput { summary, files: vec![csv, field, manifest] }))
}

fn schedule_from(cfg: &RunConfig) -> CliResult<EpsDeltaSchedule> {
    let eps = cfg.get_f64_list("schedule.eps")?;
    let delta = cfg.get_f64_list("schedule.delta")?;
    if eps.len() != delta.len() {
        return Err(CliError::Config("schedule.eps and schedule.delta must have equal length".into()));
    }
    let target = match cfg.get("schedule.target") {
        "inf" => ScheduleTarget::Infinite,
        raw => {
            let v = raw
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("schedule.target: {e}")))?;
            if v == 0.0 {
                ScheduleTarget::Zero
            } else {
                ScheduleTarget::Finite(v)
            }
        }
    };
    Ok(EpsDeltaSchedule::new(eps.into_iter().zip(delta).collect(), target)?)
}

pub fn cmd_gamma(cfg: &RunConfig, out: &Path) -> CliResult<(GammaRun, CommandOutput)> {
    ensure_dir(out)?;
    let quad = build_quadrature(cfg)?;
    let kernel = build_kernel(cfg, &quad)?;
    let density = build_density(cfg)?;
    let matrix = build_matrix(cfg)?;
    let opts = build_opts(cfg)?;
    let schedule = schedule_from(cfg)?;
    let policy = GammaGridPolicy {
        resolve_factor: cfg.get_f64("gamma.resolve_factor")?,
        n_max: cfg.get_usize("gamma.n_max")?,
    };
    let t_layer = cfg.get_f64("gamma.t_layer")?;
    let run = run_schedule(&schedule, &matrix, t_layer, &density, &kernel, &quad, &opts, &policy)?;

    let header =
        ["j", "eps", "delta", "ratio", "grid_n", "min_value", "normalized", "reference", "rel_dev", "flags"];
    let rows: Vec<Vec<String>> = run
        .entries
        .iter()
        .map(|e| {
            vec![
                e.index.to_string(),
                fmt_f64(e.eps),
                fmt_f64(e.delta),
                fmt_f64(e.ratio),
                e.grid_n.to_string(),
                fmt_f64(e.min_value),
                fmt_f64(e.normalized),
                fmt_f64(e.reference),
                fmt_f64(e.rel_dev),
                e.flags.join(";"),
            ]
        })
        .collect();
    let csv = write_csv(out, "gamma.csv", &header, &rows)?;
    let manifest = write_manifest(out, "gamma", cfg)?;
    let mut summary = vec![format!("reference f = {}", fmt_f64(run.reference))];
    if let Some(last) = run.entries.iter().filter(|e| e.flags.is_empty()).next_back() {
        summary.push(format!(
            "final entry: normalized = {}, rel_dev = {}",
            fmt_f64(last.normalized),
            fmt_f64(last.rel_dev)
        ));
    }
    Ok((run, CommandOutput { summary, files: vec![csv, manifest] }))
}

pub fn cmd_elres(cfg: &RunConfig, out: &Path) -> CliResult<(f64, CommandOutput)> {
    ensure_dir(out)?;
    let prob = build_cell_problem(cfg)?;
    if !matches!(prob.regime(), Regime::Nonlocal { .. }) {
        return Err(CliError::Config("elres needs cell.regime = nonlocal".into()));
    }
    let result = prob.solve()?;
    let residual = euler_lagrange_residual(&result, &prob)?;
    let csv = write_csv(
        out,
        "elres.csv",
        &["lambda", "residual", "optimizer_grad_norm", "tol_grad"],
        &[vec![
            cfg.get("cell.lambda").to_string(),
            fmt_f64(residual),
            fmt_f64(result.grad_norm),
            fmt_f64(build_opts(cfg)?.tol_grad),
        ]],
    )?;
    let manifest = write_manifest(out, "elres", cfg)?;
    let summary = vec![format!(
        "stationarity residual = {} (optimizer projected gradient {})",
        fmt_f64(residual),
        fmt_f64(result.grad_norm)
    )];
    Ok((residual, CommandOutput { summary, files: vec![csv, manifest] }))
}
