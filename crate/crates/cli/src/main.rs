use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use delay_volterra_cli::{load_config, run, Command, EXIT_INVALID};

#[derive(Parser)]
#[command(name = "dvolt", version, about = "Delayed stochastic Volterra control: simulation, adjoint, optimization and checks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate the state paths.
    Simulate(Flags),
    /// Solve the adjoint equation along a control.
    Adjoint(Flags),
    /// Projected gradient ascent on the reward.
    Optimize(Flags),
    /// Check the duality formula on the standard functionals.
    VerifyDuality(Flags),
    /// Check the Clark-Ocone reconstruction on the standard functionals.
    VerifyClarkOcone(Flags),
    /// Necessary and sufficient maximum-principle checks.
    VerifyMp(Flags),
    /// Compare the adjoint gradient with finite differences.
    GradCheck(Flags),
}

#[derive(Args)]
struct Flags {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Problem parameter, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<String>,
    /// Time steps.
    #[arg(long = "N")]
    steps: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// Monte Carlo paths.
    #[arg(long = "M")]
    paths: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Regression polynomial degree (1 to 4).
    #[arg(long)]
    degree: Option<String>,
    #[arg(long)]
    ridge: Option<String>,
    #[arg(long)]
    eta0: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// Output directory (default: $DVOLT_OUT_DIR, then ./dvolt-out).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<String>,
    /// Constant control used when no control file is given.
    #[arg(long)]
    u0: Option<String>,
    /// Control CSV with a `u` column.
    #[arg(long)]
    control: Option<String>,
    /// Finite-difference step for grad-check.
    #[arg(long)]
    eps: Option<String>,
    /// Number of random directions for grad-check.
    #[arg(long)]
    directions: Option<String>,
    /// Residual tolerance for verify-mp.
    #[arg(long = "mp-tol")]
    mp_tol: Option<String>,
    /// Control grid size for the maximality scan.
    #[arg(long = "v-points")]
    v_points: Option<String>,
    /// Emit (time, mean, sd) instead of every path.
    #[arg(long)]
    summary: bool,
    /// Materialize every kernel pair.
    #[arg(long = "full-kernel")]
    full_kernel: bool,
    /// Keep the starting adjoint for every iteration (diagnostics only).
    #[arg(long = "freeze-adjoint")]
    freeze_adjoint: bool,
}

impl Flags {
    fn overrides(&self, command: Command) -> Result<Vec<(String, String)>, String> {
        let mut out = vec![("command".to_string(), command.name().to_string())];
        let scalar = [
            ("problem", &self.problem),
            ("T", &self.horizon),
            ("N", &self.steps),
            ("delta", &self.delta),
            ("M", &self.paths),
            ("seed", &self.seed),
            ("degree", &self.degree),
            ("ridge", &self.ridge),
            ("eta0", &self.eta0),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("out", &self.out),
            ("threads", &self.threads),
            ("u0", &self.u0),
            ("control", &self.control),
            ("eps", &self.eps),
            ("directions", &self.directions),
            ("mp_tol", &self.mp_tol),
            ("v_points", &self.v_points),
        ];
        for (k, v) in scalar {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        for p in &self.params {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| format!("--param expects KEY=VALUE, found `{p}`"))?;
            out.push((format!("param.{}", k.trim()), v.trim().to_string()));
        }
        for (k, on) in [
            ("summary", self.summary),
            ("full_kernel", self.full_kernel),
            ("freeze_adjoint", self.freeze_adjoint),
        ] {
            if on {
                out.push((k.to_string(), "true".to_string()));
            }
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Adjoint(f) => (Command::Adjoint, f),
        Sub::Optimize(f) => (Command::Optimize, f),
        Sub::VerifyDuality(f) => (Command::VerifyDuality, f),
        Sub::VerifyClarkOcone(f) => (Command::VerifyClarkOcone, f),
        Sub::VerifyMp(f) => (Command::VerifyMp, f),
        Sub::GradCheck(f) => (Command::GradCheck, f),
    };
    let cfg = flags
        .overrides(command)
        .and_then(|o| load_config(flags.config.as_deref(), &o).map_err(|e| e.to_string()));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dvolt: {e}");
            return ExitCode::from(EXIT_INVALID as u8);
        }
    };
    let outcome = run(&cfg);
    print!("{}", outcome.report);
    if let Some(e) = &outcome.error {
        eprintln!("dvolt: {} error: {}", e.kind, e.message);
    }
    if let Some(dir) = &outcome.out_dir {
        eprintln!("dvolt: wrote {} file(s) and manifest.json to {}", outcome.artifacts.len(), dir.display());
    }
    ExitCode::from(outcome.code as u8)
}
