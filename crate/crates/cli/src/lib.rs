//! Driver behind the `dvolt` binary: configuration, subcommands and
//! reproducible artifacts.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use delay_volterra::adjoint::{AdjointOptions, KernelPolicy};
use delay_volterra::control::{
    default_v_grid, gradient_check, necessary_mp_residual, random_directions, sufficient_mp_check,
    NecessaryReport, SufficientReport,
};
use delay_volterra::malliavin::{
    clark_ocone_reconstruct, default_bump, duality_check, standard_functionals, Basis,
};
use delay_volterra::{
    build_grid, catalog_problem, default_params, optimize, sample_brownian, simulate_state, solve_adjoint,
    ControlPath, Model, OptimizerSettings, Params, TimeGrid,
};
use thiserror::Error;

pub use config::{load_config, parse_config, Command, ConfigError, RunConfig};
pub use output::{num, Artifact, ErrorRecord, Manifest, Table};

/// Names the output directory when `out` is unset; the fallback is `dvolt-out`.
pub const OUT_DIR_ENV: &str = "DVOLT_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] delay_volterra::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Invalid(_) => "invalid-input",
            RunError::Core(e) => e.kind(),
            RunError::Csv(_) => "csv",
            RunError::Io(_) => "io",
        }
    }
}

fn core<E: Into<delay_volterra::Error>>(e: E) -> RunError {
    RunError::Core(e.into())
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub out_dir: Option<PathBuf>,
    pub artifacts: Vec<String>,
    /// Human-readable report for stdout.
    pub report: String,
    pub error: Option<ErrorRecord>,
}

/// Fills unspecified catalog parameters with their defaults. A CUSTOM_POLY
/// run with no coefficients uses the demo problem.
pub fn resolve_params(problem: &str, given: &Params) -> Params {
    let bounds_only = given.keys().all(|k| k == "u_min" || k == "u_max");
    if problem == "CUSTOM_POLY" && !bounds_only {
        return given.clone();
    }
    let mut p = default_params(problem);
    p.extend(given.iter().map(|(k, v)| (k.clone(), *v)));
    p
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("dvolt-out"))
}

/// Everything validated before any file is touched.
struct Setup {
    grid: TimeGrid,
    model: Option<Model>,
    control: Option<ControlPath>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, RunError> {
    let (grid, delay) = build_grid(cfg.horizon, cfg.steps, cfg.delta).map_err(core)?;
    if cfg.paths == 0 {
        return Err(RunError::Invalid("M must be at least 1".into()));
    }
    if !(1..=4).contains(&cfg.degree) {
        return Err(RunError::Invalid(format!("degree {} outside 1..=4", cfg.degree)));
    }
    if cfg.threads == Some(0) {
        return Err(RunError::Invalid("threads must be at least 1".into()));
    }
    if !cfg.command.needs_problem() {
        return Ok(Setup {
            grid,
            model: None,
            control: None,
        });
    }
    let name = cfg.problem.as_deref().unwrap_or_default();
    let spec = catalog_problem(name, &resolve_params(name, &cfg.params)).map_err(core)?;
    let model = Model::new(spec, grid, delay);
    let control = match &cfg.control {
        Some(path) => read_control(path, cfg.steps)?,
        None => ControlPath::constant(cfg.steps, cfg.u0),
    };
    model.check_control(&control).map_err(core)?;
    Ok(Setup {
        grid,
        model: Some(model),
        control: Some(control),
    })
}

/// Reads the `u` column of a control CSV such as the one `optimize` writes.
pub fn read_control(path: &Path, steps: usize) -> Result<ControlPath, RunError> {
    let bad = |msg: String| RunError::Invalid(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let col = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .position(|h| h == "u")
        .ok_or_else(|| bad("no `u` column".into()))?;
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let v = rec
            .get(col)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| bad(format!("bad value on record {}", values.len() + 1)))?;
        values.push(v);
    }
    if values.len() != steps {
        return Err(bad(format!("{} values for N = {steps}", values.len())));
    }
    Ok(ControlPath::unchecked(values))
}

/// Result of one subcommand before anything is written.
struct Produced {
    code: i32,
    artifacts: Vec<Artifact>,
    report: String,
    failure: Option<String>,
}

impl Produced {
    fn ok(artifacts: Vec<Artifact>, report: String) -> Self {
        Self {
            code: EXIT_OK,
            artifacts,
            report,
            failure: None,
        }
    }

    fn verdict(artifacts: Vec<Artifact>, report: String, passed: bool, what: &str) -> Self {
        Self {
            code: if passed { EXIT_OK } else { EXIT_FAILED },
            artifacts,
            report,
            failure: (!passed).then(|| format!("{what} failed")),
        }
    }
}

fn adjoint_options(cfg: &RunConfig) -> AdjointOptions {
    AdjointOptions {
        basis: Basis::with_state(cfg.degree),
        ridge: cfg.ridge,
        kernel: if cfg.full_kernel { KernelPolicy::Full } else { KernelPolicy::Auto },
        ..AdjointOptions::default()
    }
}

fn settings(cfg: &RunConfig) -> OptimizerSettings {
    OptimizerSettings {
        eta0: cfg.eta0,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        adjoint: adjoint_options(cfg),
        freeze_adjoint: cfg.freeze_adjoint,
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn simulate(cfg: &RunConfig, model: &Model, u: &ControlPath) -> Result<Produced, RunError> {
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let x = simulate_state(model, u, &w).map_err(core)?;
    let k = model.k() as isize;
    let n = model.steps() as isize;
    let table = if cfg.summary {
        let mut t = Table::new("state_summary.csv", &["time", "mean", "sd"])?;
        for i in -k..=n {
            let (mean, sd) = delay_volterra::paths::mean_sd(&x.at_index(i));
            t.row([num(model.grid.time(i)), num(mean), num(sd)])?;
        }
        t
    } else {
        let mut t = Table::new("state.csv", &["path", "time", "X"])?;
        for m in 0..x.paths() {
            for i in -k..=n {
                t.row([m.to_string(), num(model.grid.time(i)), num(x.at(m, i))])?;
            }
        }
        t
    };
    let (j, se) = delay_volterra::forward::cost(model, u, &x);
    Ok(Produced::ok(vec![table.finish()?], format!("J = {} (stderr {})\n", num(j), num(se))))
}

fn adjoint(cfg: &RunConfig, model: &Model, u: &ControlPath) -> Result<Produced, RunError> {
    use delay_volterra::paths::{mean, mean_sd};
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let x = simulate_state(model, u, &w).map_err(core)?;
    let sol = solve_adjoint(model, u, &x, &w, &adjoint_options(cfg)).map_err(core)?;
    let n = model.steps();
    let mut t = Table::new("adjoint.csv", &["time", "mean_p", "sd_p", "mean_diag_q"])?;
    for i in 0..=n {
        let (mp, sp) = mean_sd(&sol.p_at(i));
        let q = if i < n {
            num(mean(&sol.q_pair(i + 1, i).map_err(core)?))
        } else {
            String::new()
        };
        t.row([num(model.grid.t(i)), num(mp), num(sp), q])?;
    }
    let mut artifacts = vec![t.finish()?];
    if cfg.full_kernel {
        let mut kt = Table::new("kernel.csv", &["a", "m", "t_a", "s_m", "mean_q", "sd_q"])?;
        for a in 0..=n {
            for m in 0..n {
                if let Ok(q) = sol.q_pair(a, m) {
                    let (mq, sq) = mean_sd(&q);
                    kt.row([
                        a.to_string(),
                        m.to_string(),
                        num(model.grid.t(a)),
                        num(model.grid.t(m)),
                        num(mq),
                        num(sq),
                    ])?;
                }
            }
        }
        artifacts.push(kt.finish()?);
    }
    Ok(Produced::ok(artifacts, format!("adjoint solved on {} paths, k = {}\n", cfg.paths, model.k())))
}

fn control_table(model: &Model, u: &ControlPath) -> Result<Artifact, RunError> {
    let mut t = Table::new("control.csv", &["time", "u"])?;
    for (j, v) in u.values().iter().enumerate() {
        t.row([num(model.grid.t(j)), num(*v)])?;
    }
    Ok(t.finish()?)
}

fn residual_table(report: &NecessaryReport) -> Result<Artifact, RunError> {
    let mut t = Table::new("residual.csv", &["time", "residual", "stderr"])?;
    for (time, r, se) in &report.rows {
        t.row([num(*time), num(*r), num(*se)])?;
    }
    Ok(t.finish()?)
}

fn run_optimizer(
    cfg: &RunConfig,
    model: &Model,
    u0: &ControlPath,
) -> Result<(delay_volterra::OptimizerState, Vec<Artifact>), RunError> {
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let state = optimize(model, u0, &w, &settings(cfg)).map_err(core)?;
    let mut h = Table::new("history.csv", &["iter", "J", "stderr", "grad_norm", "eta"])?;
    for r in &state.history {
        h.row([r.iter.to_string(), num(r.j), num(r.stderr), num(r.grad_norm), num(r.eta)])?;
    }
    Ok((state.clone(), vec![control_table(model, &state.u)?, h.finish()?]))
}

fn optimize_cmd(cfg: &RunConfig, model: &Model, u0: &ControlPath) -> Result<Produced, RunError> {
    let (state, mut artifacts) = run_optimizer(cfg, model, u0)?;
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let resid = necessary_mp_residual(model, &state.u, &w, &adjoint_options(cfg)).map_err(core)?;
    artifacts.push(residual_table(&resid)?);
    let last = state.history.last().copied();
    let report = format!(
        "status {:?} after {} iterations; J = {}; projected grad norm = {}; max residual = {} (max stderr {})\n",
        state.status,
        state.iteration,
        last.map_or(String::new(), |r| num(r.j)),
        last.map_or(String::new(), |r| num(r.grad_norm)),
        num(resid.max_residual),
        num(resid.max_stderr),
    );
    let code = state.status.code();
    Ok(Produced {
        code,
        artifacts,
        report,
        failure: (code != 0).then(|| format!("optimizer status {:?}", state.status)),
    })
}

fn verify_duality(cfg: &RunConfig, grid: &TimeGrid) -> Result<Produced, RunError> {
    let w = sample_brownian(grid, cfg.paths, cfg.seed);
    let bump = default_bump(grid);
    let phis: [(&str, Vec<f64>); 2] = [
        ("1", vec![1.0; grid.steps()]),
        ("t", (0..grid.steps()).map(|j| grid.t(j)).collect()),
    ];
    let header = ["functional", "phi", "lhs", "rhs", "gap", "stderr", "pass"];
    let mut t = Table::new("duality.csv", &header)?;
    let mut rows = Vec::new();
    let mut all = true;
    for (name, f) in standard_functionals(grid) {
        for (pname, phi) in &phis {
            let r = duality_check(f.as_ref(), phi, &w, Basis::brownian(cfg.degree), cfg.ridge, bump).map_err(core)?;
            let pass = r.passes(4.0);
            all &= pass;
            let row = vec![
                name.to_string(),
                pname.to_string(),
                num(r.lhs),
                num(r.rhs),
                num(r.gap),
                num(r.stderr),
                flag(pass).to_string(),
            ];
            t.row(&row)?;
            rows.push(row);
        }
    }
    Ok(Produced::verdict(
        vec![t.finish()?],
        output::render_table(&header, &rows),
        all,
        "duality check",
    ))
}

fn verify_clark_ocone(cfg: &RunConfig, grid: &TimeGrid) -> Result<Produced, RunError> {
    let w = sample_brownian(grid, cfg.paths, cfg.seed);
    let bump = default_bump(grid);
    let header = ["functional", "lhs", "rhs", "gap", "stderr", "pass"];
    let mut t = Table::new("clark_ocone.csv", &["functional", "rms", "bound", "gap", "stderr", "pass"])?;
    let mut rows = Vec::new();
    let mut all = true;
    for (name, f) in standard_functionals(grid) {
        let r = clark_ocone_reconstruct(f.as_ref(), &w, Basis::brownian(cfg.degree), cfg.ridge, bump).map_err(core)?;
        let bound = if name == "B(T)^2" {
            (2.0 * grid.horizon() * grid.dt()).sqrt()
        } else {
            0.0
        };
        let pass = r.rms <= bound + 4.0 * r.rms_stderr + 1e-9;
        all &= pass;
        let row = vec![
            name.to_string(),
            num(r.rms),
            num(bound),
            num(r.rms - bound),
            num(r.rms_stderr),
            flag(pass).to_string(),
        ];
        t.row(&row)?;
        rows.push(row);
    }
    Ok(Produced::verdict(
        vec![t.finish()?],
        output::render_table(&header, &rows),
        all,
        "Clark-Ocone check",
    ))
}

fn maximality_table(report: &SufficientReport, model: &Model) -> Result<Artifact, RunError> {
    let mut t = Table::new(
        "maximality.csv",
        &["time", "u_hat", "argmax", "h_hat", "h_max", "tolerance", "maximal", "max_second_difference"],
    )?;
    for r in &report.rows {
        t.row([
            num(model.grid.t(r.index)),
            num(r.u_hat),
            num(r.argmax),
            num(r.h_hat),
            num(r.h_max),
            num(r.tolerance),
            r.maximal.to_string(),
            r.max_second_difference.map(num).unwrap_or_default(),
        ])?;
    }
    Ok(t.finish()?)
}

fn verify_mp(cfg: &RunConfig, model: &Model, u0: &ControlPath) -> Result<Produced, RunError> {
    let mut artifacts = Vec::new();
    let u = if cfg.control.is_some() {
        u0.clone()
    } else {
        let (state, arts) = run_optimizer(cfg, model, u0)?;
        artifacts.extend(arts);
        state.u
    };
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let opts = adjoint_options(cfg);
    let nec = necessary_mp_residual(model, &u, &w, &opts).map_err(core)?;
    let grid = default_v_grid(&model.spec.bounds, cfg.v_points);
    let suf = sufficient_mp_check(model, &u, &w, &grid, &opts).map_err(core)?;
    artifacts.push(residual_table(&nec)?);
    artifacts.push(maximality_table(&suf, model)?);
    let necessary = nec.passes(cfg.mp_tol, 4.0);
    let (maximal, concave) = (suf.all_maximal(), suf.concave());
    let report = format!(
        "necessary: max residual {} <= {} + 4 * {}: {}\nsufficient: maximal at every index: {}; concave: {}\n",
        num(nec.max_residual),
        num(cfg.mp_tol),
        num(nec.max_stderr),
        flag(necessary),
        flag(maximal),
        flag(concave),
    );
    Ok(Produced::verdict(
        artifacts,
        report,
        necessary && maximal && concave,
        "maximum-principle check",
    ))
}

fn grad_check(cfg: &RunConfig, model: &Model, u: &ControlPath) -> Result<Produced, RunError> {
    let w = sample_brownian(&model.grid, cfg.paths, cfg.seed);
    let betas = random_directions(model.steps(), cfg.directions, cfg.seed.wrapping_add(1));
    let rows =
        gradient_check(model, u, &w, &betas, cfg.eps, 4.0, 1e-3, &adjoint_options(cfg)).map_err(core)?;
    let header = ["beta_id", "adjoint", "adjoint_stderr", "fd", "fd_stderr", "gap", "bound", "pass"];
    let mut t = Table::new("grad_check.csv", &header)?;
    let mut shown = Vec::new();
    for r in &rows {
        let row = vec![
            r.id.to_string(),
            num(r.adjoint),
            num(r.adjoint_stderr),
            num(r.fd),
            num(r.fd_stderr),
            num(r.gap),
            num(r.bound),
            flag(r.pass).to_string(),
        ];
        t.row(&row)?;
        shown.push(row);
    }
    let all = rows.iter().all(|r| r.pass);
    Ok(Produced::verdict(
        vec![t.finish()?],
        output::render_table(&header, &shown),
        all,
        "gradient check",
    ))
}

fn dispatch(cfg: &RunConfig, s: &Setup) -> Result<Produced, RunError> {
    let need = || {
        s.model
            .as_ref()
            .zip(s.control.as_ref())
            .ok_or_else(|| RunError::Invalid("a problem is required".into()))
    };
    match cfg.command {
        Command::Simulate => need().and_then(|(m, u)| simulate(cfg, m, u)),
        Command::Adjoint => need().and_then(|(m, u)| adjoint(cfg, m, u)),
        Command::Optimize => need().and_then(|(m, u)| optimize_cmd(cfg, m, u)),
        Command::VerifyMp => need().and_then(|(m, u)| verify_mp(cfg, m, u)),
        Command::GradCheck => need().and_then(|(m, u)| grad_check(cfg, m, u)),
        Command::VerifyDuality => verify_duality(cfg, &s.grid),
        Command::VerifyClarkOcone => verify_clark_ocone(cfg, &s.grid),
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs one subcommand and writes its artifacts plus `manifest.json`.
///
/// Invalid input exits with 2 before anything is written. Failed checks exit
/// with 1 and the optimizer exits with its status code.
pub fn run(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    let invalid = |e: RunError| Outcome {
        code: EXIT_INVALID,
        out_dir: None,
        artifacts: Vec::new(),
        report: String::new(),
        error: Some(ErrorRecord {
            kind: e.kind().into(),
            message: e.to_string(),
        }),
    };
    let s = match setup(cfg) {
        Ok(s) => s,
        Err(e) => return invalid(e),
    };
    let produced = match in_pool(cfg.threads, || dispatch(cfg, &s)) {
        Ok(r) => r,
        Err(e) => return invalid(e),
    };
    let dir = output_dir(cfg);
    let (code, artifacts, report, error) = match produced {
        Ok(p) => (
            p.code,
            p.artifacts,
            p.report,
            p.failure.map(|message| ErrorRecord {
                kind: "verification".into(),
                message,
            }),
        ),
        Err(e) => (
            EXIT_FAILED,
            Vec::new(),
            String::new(),
            Some(ErrorRecord {
                kind: e.kind().into(),
                message: e.to_string(),
            }),
        ),
    };
    let mut error = error;
    let mut code = code;
    let written = std::fs::create_dir_all(&dir).and_then(|_| artifacts.iter().try_for_each(|a| a.write_to(&dir)));
    if let Err(e) = written {
        code = EXIT_FAILED;
        error = Some(ErrorRecord {
            kind: "io".into(),
            message: format!("{}: {e}", dir.display()),
        });
    }
    let manifest = Manifest {
        command: cfg.command.name().into(),
        status: if code == 0 { "ok".into() } else { "error".into() },
        exit_code: code,
        seed: cfg.seed,
        threads: cfg.threads,
        versions: [
            ("dvolt".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("delay-volterra".to_string(), delay_volterra::VERSION.to_string()),
        ]
        .into_iter()
        .collect(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: cfg.to_config_string(),
        files: artifacts.iter().map(|a| (a.name.clone(), a.sha256())).collect(),
        error: error.clone(),
    };
    let _ = std::fs::write(dir.join("manifest.json"), manifest.to_json());
    Outcome {
        code,
        out_dir: Some(dir),
        artifacts: artifacts.into_iter().map(|a| a.name).collect(),
        report,
        error,
    }
}
