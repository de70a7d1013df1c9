//! `skewheat` binary: kernel verification, Monte Carlo simulation, and
//! diffusivity-control optimization over one flat `key=value` config
//! namespace.
//!
//! Every subcommand resolves its configuration (defaults, then the
//! `SKEWHEAT_OUT_DIR` environment variable, then `--config FILE`, then
//! flags), writes `manifest.txt` with the fully resolved values *before*
//! computing anything, and then writes its CSV products into the output
//! directory.  Exit codes: 0 on success, 1 on numerical non-convergence
//! (diagnostics are still written), 2 on configuration errors.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use config::{render_manifest, ConfigError, Diffusion, Drift, IcKind, Preset, RunConfig, Solver};
use skewheat::control::{
    optimize, ControlTrajectory, ControlledMaterialLaw, CostSpec, OptimizeConfig,
};
use skewheat::discretization::{sample_paths, SpaceTimeGrid};
use skewheat::kernel::CompositeMedium;
use skewheat::linear::{solve_linear, InitialCondition, StateField};
use skewheat::picard::{euler_maruyama_solve, picard_solve, CoeffFn, CoefficientSpec};
use skewheat::verify::{default_media, run_checks};
use skewheat::Error as LibError;

/// Command failure with its process exit code.
#[derive(Debug)]
enum AppError {
    /// Bad or inconsistent configuration. Exit code 2.
    Config(String),
    /// Numerical failure or I/O trouble after the manifest. Exit code 1.
    Runtime(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.0)
    }
}

impl From<LibError> for AppError {
    fn from(e: LibError) -> Self {
        match e {
            // Constructor/consistency failures are configuration problems:
            // the message names the offending argument.
            LibError::InvalidArgument { .. } | LibError::Inconsistent(_) => {
                AppError::Config(e.to_string())
            }
            LibError::NoConvergence { .. } | LibError::LineSearchFailed { .. } => {
                AppError::Runtime(e.to_string())
            }
        }
    }
}

macro_rules! overrides {
    ($( $field:ident : $help:literal ),* $(,)?) => {
        /// Per-key overrides. Every flag mirrors a config key exactly
        /// (same name, same value syntax), so a manifest line `k=v`
        /// and a flag `--k v` are interchangeable.
        #[derive(Args, Debug, Default, Clone)]
        struct Overrides {
            /// Flat key=value config file, applied before any flags.
            #[arg(long, value_name = "FILE")]
            config: Option<PathBuf>,
            $(
                #[arg(long = stringify!($field), value_name = "VALUE", help = $help)]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
                $( if let Some(v) = &self.$field { cfg.set(stringify!($field), v)?; } )*
                Ok(())
            }
        }
    };
}

overrides! {
    a1: "Diffusivity of the left material (x <= 0) [default: 1]",
    a2: "Diffusivity of the right material (x > 0) [default: 4]",
    rho1: "Density of the left material [default: 1]",
    rho2: "Density of the right material [default: 1]",
    x_min: "Left edge of the spatial domain [default: -4]",
    x_max: "Right edge of the spatial domain [default: 4]",
    nx: "Number of spatial grid nodes [default: 41]",
    t_horizon: "Final time [default: 1]",
    nt: "Number of time steps [default: 100]",
    n_paths: "Number of Monte Carlo paths [default: 2000]",
    seed: "Base seed of the counter-based noise generator [default: 42]",
    solver: "simulate backend: linear | picard | euler-oracle [default: linear]",
    sigma0: "Additive noise amplitude [default: 0.5]",
    drift: "Drift family: none | decay [default: none]",
    drift_rate: "Decay rate r in b(y) = -r*y [default: 1]",
    diffusion: "Noise family: constant | proportional [default: constant]",
    diffusion_slope: "Slope s in sigma(y) = s*y [default: 0.1]",
    tol: "Fixed-point tolerance of the picard solver [default: 0.000001]",
    max_iter: "Iteration budget of the picard solver [default: 25]",
    ic: "Initial profile: zero | const | bump [default: zero]",
    ic_height: "Initial profile amplitude [default: 1]",
    ic_width: "Gaussian width of the bump profile [default: 0.6]",
    out_dir: "Output directory; SKEWHEAT_OUT_DIR overrides the default [default: out]",
    write_paths: "Write the per-path field CSV: true | false [default: false]",
    snapshot_times: "Comma-separated output times; empty means every step [default: empty]",
    preset: "Cost preset: temp-control | heat-storage [default: temp-control]",
    theta: "Control-effort weight of the temp-control cost [default: 0.5]",
    gamma: "Terminal weight of the temp-control cost [default: 0.5]",
    gamma1: "Running state weight of the heat-storage cost [default: 1]",
    gamma2: "Control-effort weight of the heat-storage cost [default: 0.5]",
    gamma3: "Terminal weight of the heat-storage cost [default: 0]",
    u_min: "Lower edge of the admissible control box [default: 0.1]",
    u_max: "Upper edge of the admissible control box [default: 2]",
    u0: "Initial constant control iterate [default: 0.8]",
    cost_x_min: "Left edge of the running/terminal cost window [default: -1]",
    cost_x_max: "Right edge of the running/terminal cost window [default: 1]",
    eta0: "Initial descent step length [default: 0.1]",
    gtol: "Gradient sup-norm stopping threshold [default: 0.0001]",
    max_outer: "Outer descent iteration budget [default: 100]",
    armijo_c: "Armijo acceptance fraction [default: 0.0001]",
    max_backtracks: "Step-halving budget per descent iteration [default: 30]",
    constant_control: "Restrict to constant-in-time controls: true | false [default: false]",
}

#[derive(Parser)]
#[command(
    name = "skewheat",
    version,
    about = "Stochastic heat flow across a two-material interface: \
             closed-form kernel checks, Monte Carlo simulation, and \
             adjoint-based diffusivity control"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the kernel and generator invariant suite; write kernel_checks.csv
    #[command(name = "verify-kernel")]
    VerifyKernel(Overrides),
    /// Sample the stochastic heat flow; write snapshot statistics
    Simulate(Overrides),
    /// Projected gradient descent on the diffusivity control
    Optimize(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Cmd::VerifyKernel(a) => ("verify-kernel", a),
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Optimize(a) => ("optimize", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: &str, args: &Overrides) -> Result<(), AppError> {
    let env_out = std::env::var("SKEWHEAT_OUT_DIR").ok();
    let mut cfg = RunConfig::default();
    if let Some(dir) = &env_out {
        cfg.out_dir = dir.clone();
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    args.apply(&mut cfg)?;
    cfg.validate()?;

    // The library constructors double as validators; both run before any
    // file is written so a bad config never leaves a stale manifest.
    let medium = CompositeMedium::new(cfg.a1, cfg.a2, cfg.rho1, cfg.rho2)?;
    let grid = SpaceTimeGrid::new(cfg.x_min, cfg.x_max, cfg.nx, cfg.t_horizon, cfg.nt)?;

    let out_dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&out_dir)
        .map_err(|e| AppError::Runtime(format!("cannot create `{}`: {e}", out_dir.display())))?;
    let manifest = render_manifest(
        &cfg,
        command,
        medium.lambda(),
        grid.dx(),
        grid.dt(),
        env_out.as_deref(),
    );
    write_text(&out_dir.join("manifest.txt"), &manifest)?;

    match command {
        "verify-kernel" => cmd_verify(&medium, &out_dir),
        "simulate" => cmd_simulate(&cfg, &medium, &grid, &out_dir),
        "optimize" => cmd_optimize(&cfg, &grid, &out_dir),
        _ => unreachable!("subcommand names are fixed above"),
    }
}

/// Runs the invariant suite on the standard medium panel, plus the
/// configured medium when it is not already on the panel.
fn cmd_verify(medium: &CompositeMedium, out_dir: &Path) -> Result<(), AppError> {
    let mut media = default_media();
    let on_panel = media.iter().any(|(_, m)| *m == *medium);
    if !on_panel {
        media.push(("custom".to_string(), *medium));
    }
    let rows = run_checks(&media)?;

    let mut text = String::from("check_name,medium_id,max_abs_error,tolerance,pass\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.check_name, r.medium_id, r.max_abs_error, r.tolerance, r.pass
        ));
    }
    let path = out_dir.join("kernel_checks.csv");
    write_text(&path, &text)?;

    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    println!("wrote {} ({} checks, {} failed)", path.display(), rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        for r in &failed {
            eprintln!(
                "FAIL {} on {}: error {:.3e} exceeds tolerance {:.3e}",
                r.check_name, r.medium_id, r.max_abs_error, r.tolerance
            );
        }
        Err(AppError::Runtime(format!("{} kernel checks failed", failed.len())))
    }
}

/// Simulates the flow with the configured solver and writes the sampled
/// initial profile, snapshot statistics, and (optionally) the raw field.
fn cmd_simulate(
    cfg: &RunConfig,
    medium: &CompositeMedium,
    grid: &SpaceTimeGrid,
    out_dir: &Path,
) -> Result<(), AppError> {
    let ic = build_ic(cfg)?;
    let snaps = resolve_snapshots(cfg, grid)?;

    let profile = ic.sample(grid)?;
    let mut ic_text = String::from("x,value\n");
    for (j, v) in profile.values().iter().enumerate() {
        ic_text.push_str(&format!("{},{}\n", grid.node(j), v));
    }
    write_text(&out_dir.join("ic.csv"), &ic_text)?;

    let paths = sample_paths(cfg.seed, grid, cfg.n_paths)?;
    let field = match cfg.solver {
        Solver::Linear => solve_linear(medium, &ic, cfg.sigma0, grid, &paths, &snaps)?,
        Solver::EulerOracle => {
            let coeffs = build_coeffs(cfg)?;
            euler_maruyama_solve(medium, &coeffs, &ic, grid, &paths, &snaps)?
        }
        Solver::Picard => {
            let coeffs = build_coeffs(cfg)?;
            match picard_solve(medium, &coeffs, &ic, grid, &paths, cfg.tol, cfg.max_iter, &snaps) {
                Ok((field, diag)) => {
                    write_picard_diagnostics(out_dir, &diag.increments)?;
                    field
                }
                Err(LibError::NoConvergence { iterations, last, tol, history }) => {
                    write_picard_diagnostics(out_dir, &history)?;
                    return Err(AppError::Runtime(format!(
                        "picard iteration did not converge after {iterations} iterations \
                         (last increment {last:.3e}, tol {tol:.3e}); \
                         diagnostics written to picard_diagnostics.csv"
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
    };

    let stats_path = out_dir.join("stats.csv");
    write_text(&stats_path, &render_stats(grid, &field))?;
    println!(
        "wrote {} ({} snapshots x {} nodes, {} paths)",
        stats_path.display(),
        field.snapshot_steps().len(),
        grid.nx(),
        cfg.n_paths
    );

    if cfg.write_paths {
        let field_path = out_dir.join("field.csv");
        write_text(&field_path, &render_field(grid, &field))?;
        println!("wrote {}", field_path.display());
    }
    Ok(())
}

fn render_stats(grid: &SpaceTimeGrid, field: &StateField) -> String {
    let mut text = String::from("t,x,mean,variance,stderr\n");
    for (si, &step) in field.snapshot_steps().iter().enumerate() {
        let t = grid.time(step);
        for j in 0..grid.nx() {
            let (mean, variance, stderr) = field.stats_at(si, j);
            text.push_str(&format!("{},{},{},{},{}\n", t, grid.node(j), mean, variance, stderr));
        }
    }
    text
}

fn render_field(grid: &SpaceTimeGrid, field: &StateField) -> String {
    let mut text = String::from("path,t,x,Y\n");
    for p in 0..field.n_paths() {
        let path_id = field.first_path() + p;
        for (si, &step) in field.snapshot_steps().iter().enumerate() {
            let t = grid.time(step);
            let row = field.slice(p, si);
            for j in 0..grid.nx() {
                text.push_str(&format!("{},{},{},{}\n", path_id, t, grid.node(j), row[j]));
            }
        }
    }
    text
}

fn write_picard_diagnostics(out_dir: &Path, increments: &[f64]) -> Result<(), AppError> {
    let mut text = String::from("iteration,h_n\n");
    for (i, h) in increments.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, h));
    }
    let path = out_dir.join("picard_diagnostics.csv");
    write_text(&path, &text)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs the projected descent and writes the per-iteration trace and the
/// final control trajectory.
fn cmd_optimize(cfg: &RunConfig, grid: &SpaceTimeGrid, out_dir: &Path) -> Result<(), AppError> {
    let law = ControlledMaterialLaw::linear_in_u(cfg.u_min, cfg.u_max)?;
    let coeffs = build_coeffs(cfg)?;
    let window = (cfg.cost_x_min, cfg.cost_x_max);
    let cost = match cfg.preset {
        Preset::TempControl => CostSpec::temperature_control(cfg.theta, cfg.gamma, window)?,
        Preset::HeatStorage => {
            CostSpec::heat_storage(cfg.gamma1, cfg.gamma2, cfg.gamma3, window)?
        }
    };
    let ic = build_ic(cfg)?;
    let paths = sample_paths(cfg.seed, grid, cfg.n_paths)?;
    let u0 = ControlTrajectory::constant(&law, cfg.u0, grid.nt()).map_err(|_| {
        AppError::Config(format!(
            "key `u0`: {} lies outside the control box [{}, {}]",
            cfg.u0, cfg.u_min, cfg.u_max
        ))
    })?;
    let opt_cfg = OptimizeConfig {
        eta0: cfg.eta0,
        armijo_c: cfg.armijo_c,
        gtol: cfg.gtol,
        max_outer: cfg.max_outer,
        max_backtracks: cfg.max_backtracks,
        constant_control: cfg.constant_control,
    };
    let outcome = optimize(&law, &coeffs, &cost, &ic, grid, &paths, &u0, &opt_cfg)?;

    let mut trace = String::from("iter,J,J_stderr,grad_inf_norm,step\n");
    for r in &outcome.trace {
        trace.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter, r.j, r.j_stderr, r.grad_inf_norm, r.step
        ));
    }
    write_text(&out_dir.join("descent_trace.csv"), &trace)?;

    let mut ctrl = String::from("t,u\n");
    for k in 0..grid.nt() {
        ctrl.push_str(&format!("{},{}\n", grid.time(k), outcome.control.value(k)));
    }
    write_text(&out_dir.join("optimal_control.csv"), &ctrl)?;

    println!(
        "final cost {} (stderr {}) after {} descent records",
        outcome.cost,
        outcome.cost_stderr,
        outcome.trace.len()
    );
    if outcome.line_search_failed {
        return Err(AppError::Runtime(
            "line search exhausted its backtracks; the best iterate found was written".to_string(),
        ));
    }
    if !outcome.converged {
        println!("note: iteration budget reached before the gradient threshold");
    }
    Ok(())
}

fn build_ic(cfg: &RunConfig) -> Result<InitialCondition, AppError> {
    Ok(match cfg.ic {
        IcKind::Zero => InitialCondition::zero(),
        IcKind::Const => InitialCondition::constant(cfg.ic_height),
        IcKind::Bump => InitialCondition::bump(cfg.ic_height, cfg.ic_width).map_err(|_| {
            AppError::Config(format!(
                "key `ic_width`: bump profile needs a positive width, got {}",
                cfg.ic_width
            ))
        })?,
    })
}

/// Assembles drift/noise coefficients with certified Lipschitz and growth
/// constants for the chosen families.
fn build_coeffs(cfg: &RunConfig) -> Result<CoefficientSpec, AppError> {
    let rate = cfg.drift_rate;
    let slope = cfg.diffusion_slope;
    let s0 = cfg.sigma0;
    let (b, b_lip): (CoeffFn, f64) = match cfg.drift {
        Drift::None => (Arc::new(|_, _, _, _| 0.0), 0.0),
        Drift::Decay => (Arc::new(move |_, _, y, _| -rate * y), rate),
    };
    let (sigma, sig_lip, sig_growth): (CoeffFn, f64, f64) = match cfg.diffusion {
        Diffusion::Constant => (Arc::new(move |_, _, _, _| s0), 0.0, s0.abs()),
        Diffusion::Proportional => (Arc::new(move |_, _, y, _| slope * y), slope, slope),
    };
    Ok(CoefficientSpec::new(
        b,
        sigma,
        b_lip.max(sig_lip),
        b_lip.max(sig_growth),
    )?)
}

/// Maps requested output times onto grid steps; empty means every step.
fn resolve_snapshots(cfg: &RunConfig, grid: &SpaceTimeGrid) -> Result<Vec<usize>, AppError> {
    if cfg.snapshot_times.is_empty() {
        return Ok((0..=grid.nt()).collect());
    }
    let dt = grid.dt();
    let mut steps = Vec::with_capacity(cfg.snapshot_times.len());
    for &t in &cfg.snapshot_times {
        let k = (t / dt).round();
        let on_grid = (t - k * dt).abs() <= 1e-9 * grid.t_horizon().max(1.0);
        if !on_grid || k < 0.0 || k as usize > grid.nt() {
            return Err(AppError::Config(format!(
                "key `snapshot_times`: {t} is not a grid time (dt = {dt}, horizon {})",
                grid.t_horizon()
            )));
        }
        steps.push(k as usize);
    }
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    fs::write(path, text)
        .map_err(|e| AppError::Runtime(format!("cannot write `{}`: {e}", path.display())))
}
