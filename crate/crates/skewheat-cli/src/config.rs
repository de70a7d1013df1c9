//! Run configuration: a flat `key=value` namespace shared by every
//! subcommand.
//!
//! Values are resolved in a strict precedence order — built-in defaults,
//! then the `SKEWHEAT_OUT_DIR` environment variable (for `out_dir` only),
//! then the `--config` file, then command-line flags — with later sources
//! overriding earlier ones.  Every run echoes the fully resolved
//! configuration into `manifest.txt` in the output directory *before* any
//! computation starts, so a manifest can always be replayed as a config
//! file.  Unknown keys and unparsable values are rejected with a message
//! that names the offending key.

use std::fmt;
use std::path::Path;

/// Configuration failure: the message names the offending key or line.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = std::result::Result<T, ConfigError>;

/// Which solver backs the `simulate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Exact kernel propagation of the additive-noise flow.
    Linear,
    /// Mild-solution fixed point for state-dependent coefficients.
    Picard,
    /// Semi-implicit time stepping, used as an independent cross-check.
    EulerOracle,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Linear => "linear",
            Solver::Picard => "picard",
            Solver::EulerOracle => "euler-oracle",
        })
    }
}

/// Initial-profile family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    Zero,
    Const,
    Bump,
}

impl fmt::Display for IcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IcKind::Zero => "zero",
            IcKind::Const => "const",
            IcKind::Bump => "bump",
        })
    }
}

/// Drift family for the nonlinear solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drift {
    None,
    Decay,
}

impl fmt::Display for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Drift::None => "none",
            Drift::Decay => "decay",
        })
    }
}

/// Noise-coefficient family for the nonlinear solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diffusion {
    Constant,
    Proportional,
}

impl fmt::Display for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diffusion::Constant => "constant",
            Diffusion::Proportional => "proportional",
        })
    }
}

/// Cost-functional preset for the `optimize` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    TempControl,
    HeatStorage,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::TempControl => "temp-control",
            Preset::HeatStorage => "heat-storage",
        })
    }
}

/// Fully typed run configuration; one flat namespace for all subcommands.
/// Keys not consumed by a given command are still validated and echoed.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // Two-material medium.
    pub a1: f64,
    pub a2: f64,
    pub rho1: f64,
    pub rho2: f64,
    // Space-time grid.
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_horizon: f64,
    pub nt: usize,
    // Monte Carlo sampling.
    pub n_paths: usize,
    pub seed: u64,
    // Dynamics.
    pub solver: Solver,
    pub sigma0: f64,
    pub drift: Drift,
    pub drift_rate: f64,
    pub diffusion: Diffusion,
    pub diffusion_slope: f64,
    pub tol: f64,
    pub max_iter: usize,
    // Initial condition.
    pub ic: IcKind,
    pub ic_height: f64,
    pub ic_width: f64,
    // Output.
    pub out_dir: String,
    pub write_paths: bool,
    pub snapshot_times: Vec<f64>,
    // Control problem.
    pub preset: Preset,
    pub theta: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub u0: f64,
    pub cost_x_min: f64,
    pub cost_x_max: f64,
    pub eta0: f64,
    pub gtol: f64,
    pub max_outer: usize,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub constant_control: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        // The default grid keeps the semi-implicit optimizer's adjoint
        // stable: dt * max diffusivity / dx^2 = 0.01 * 3 / 0.04 = 0.75 < 1
        // for the default control box [0.1, 2].
        RunConfig {
            a1: 1.0,
            a2: 4.0,
            rho1: 1.0,
            rho2: 1.0,
            x_min: -4.0,
            x_max: 4.0,
            nx: 41,
            t_horizon: 1.0,
            nt: 100,
            n_paths: 2000,
            seed: 42,
            solver: Solver::Linear,
            sigma0: 0.5,
            drift: Drift::None,
            drift_rate: 1.0,
            diffusion: Diffusion::Constant,
            diffusion_slope: 0.1,
            tol: 1e-6,
            max_iter: 25,
            ic: IcKind::Zero,
            ic_height: 1.0,
            ic_width: 0.6,
            out_dir: "out".to_string(),
            write_paths: false,
            snapshot_times: Vec::new(),
            preset: Preset::TempControl,
            theta: 0.5,
            gamma: 0.5,
            gamma1: 1.0,
            gamma2: 0.5,
            gamma3: 0.0,
            u_min: 0.1,
            u_max: 2.0,
            u0: 0.8,
            cost_x_min: -1.0,
            cost_x_max: 1.0,
            eta0: 0.1,
            gtol: 1e-4,
            max_outer: 100,
            armijo_c: 1e-4,
            max_backtracks: 30,
            constant_control: false,
        }
    }
}

fn bad(key: &str, value: &str, wanted: &str) -> ConfigError {
    ConfigError(format!("key `{key}`: cannot parse `{value}` as {wanted}"))
}

fn parse_f64(key: &str, v: &str) -> CfgResult<f64> {
    let x: f64 = v.parse().map_err(|_| bad(key, v, "a number"))?;
    if !x.is_finite() {
        return Err(ConfigError(format!("key `{key}`: value must be finite, got `{v}`")));
    }
    Ok(x)
}

fn parse_usize(key: &str, v: &str) -> CfgResult<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> CfgResult<u64> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_bool(key: &str, v: &str) -> CfgResult<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "`true` or `false`")),
    }
}

/// Comma-separated list of floats; the empty string is the empty list.
fn parse_times(key: &str, v: &str) -> CfgResult<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|part| parse_f64(key, part.trim())).collect()
}

impl RunConfig {
    /// Assigns one key from its string form. Unknown keys and unparsable
    /// values produce an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> CfgResult<()> {
        match key {
            "a1" => self.a1 = parse_f64(key, value)?,
            "a2" => self.a2 = parse_f64(key, value)?,
            "rho1" => self.rho1 = parse_f64(key, value)?,
            "rho2" => self.rho2 = parse_f64(key, value)?,
            "x_min" => self.x_min = parse_f64(key, value)?,
            "x_max" => self.x_max = parse_f64(key, value)?,
            "nx" => self.nx = parse_usize(key, value)?,
            "t_horizon" => self.t_horizon = parse_f64(key, value)?,
            "nt" => self.nt = parse_usize(key, value)?,
            "n_paths" => self.n_paths = parse_usize(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "solver" => {
                self.solver = match value {
                    "linear" => Solver::Linear,
                    "picard" => Solver::Picard,
                    "euler-oracle" => Solver::EulerOracle,
                    _ => return Err(bad(key, value, "`linear`, `picard`, or `euler-oracle`")),
                }
            }
            "sigma0" => self.sigma0 = parse_f64(key, value)?,
            "drift" => {
                self.drift = match value {
                    "none" => Drift::None,
                    "decay" => Drift::Decay,
                    _ => return Err(bad(key, value, "`none` or `decay`")),
                }
            }
            "drift_rate" => self.drift_rate = parse_f64(key, value)?,
            "diffusion" => {
                self.diffusion = match value {
                    "constant" => Diffusion::Constant,
                    "proportional" => Diffusion::Proportional,
                    _ => return Err(bad(key, value, "`constant` or `proportional`")),
                }
            }
            "diffusion_slope" => self.diffusion_slope = parse_f64(key, value)?,
            "tol" => self.tol = parse_f64(key, value)?,
            "max_iter" => self.max_iter = parse_usize(key, value)?,
            "ic" => {
                self.ic = match value {
                    "zero" => IcKind::Zero,
                    "const" => IcKind::Const,
                    "bump" => IcKind::Bump,
                    _ => return Err(bad(key, value, "`zero`, `const`, or `bump`")),
                }
            }
            "ic_height" => self.ic_height = parse_f64(key, value)?,
            "ic_width" => self.ic_width = parse_f64(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            "write_paths" => self.write_paths = parse_bool(key, value)?,
            "snapshot_times" => self.snapshot_times = parse_times(key, value)?,
            "preset" => {
                self.preset = match value {
                    "temp-control" => Preset::TempControl,
                    "heat-storage" => Preset::HeatStorage,
                    _ => return Err(bad(key, value, "`temp-control` or `heat-storage`")),
                }
            }
            "theta" => self.theta = parse_f64(key, value)?,
            "gamma" => self.gamma = parse_f64(key, value)?,
            "gamma1" => self.gamma1 = parse_f64(key, value)?,
            "gamma2" => self.gamma2 = parse_f64(key, value)?,
            "gamma3" => self.gamma3 = parse_f64(key, value)?,
            "u_min" => self.u_min = parse_f64(key, value)?,
            "u_max" => self.u_max = parse_f64(key, value)?,
            "u0" => self.u0 = parse_f64(key, value)?,
            "cost_x_min" => self.cost_x_min = parse_f64(key, value)?,
            "cost_x_max" => self.cost_x_max = parse_f64(key, value)?,
            "eta0" => self.eta0 = parse_f64(key, value)?,
            "gtol" => self.gtol = parse_f64(key, value)?,
            "max_outer" => self.max_outer = parse_usize(key, value)?,
            "armijo_c" => self.armijo_c = parse_f64(key, value)?,
            "max_backtracks" => self.max_backtracks = parse_usize(key, value)?,
            "constant_control" => self.constant_control = parse_bool(key, value)?,
            _ => return Err(ConfigError(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys with their resolved values, in fixed alphabetical order —
    /// the manifest and any future serialization both rely on this order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let times = self
            .snapshot_times
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("a1", self.a1.to_string()),
            ("a2", self.a2.to_string()),
            ("armijo_c", self.armijo_c.to_string()),
            ("constant_control", self.constant_control.to_string()),
            ("cost_x_max", self.cost_x_max.to_string()),
            ("cost_x_min", self.cost_x_min.to_string()),
            ("diffusion", self.diffusion.to_string()),
            ("diffusion_slope", self.diffusion_slope.to_string()),
            ("drift", self.drift.to_string()),
            ("drift_rate", self.drift_rate.to_string()),
            ("eta0", self.eta0.to_string()),
            ("gamma", self.gamma.to_string()),
            ("gamma1", self.gamma1.to_string()),
            ("gamma2", self.gamma2.to_string()),
            ("gamma3", self.gamma3.to_string()),
            ("gtol", self.gtol.to_string()),
            ("ic", self.ic.to_string()),
            ("ic_height", self.ic_height.to_string()),
            ("ic_width", self.ic_width.to_string()),
            ("max_backtracks", self.max_backtracks.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("max_outer", self.max_outer.to_string()),
            ("n_paths", self.n_paths.to_string()),
            ("nt", self.nt.to_string()),
            ("nx", self.nx.to_string()),
            ("out_dir", self.out_dir.clone()),
            ("preset", self.preset.to_string()),
            ("rho1", self.rho1.to_string()),
            ("rho2", self.rho2.to_string()),
            ("seed", self.seed.to_string()),
            ("sigma0", self.sigma0.to_string()),
            ("snapshot_times", times),
            ("solver", self.solver.to_string()),
            ("t_horizon", self.t_horizon.to_string()),
            ("theta", self.theta.to_string()),
            ("tol", self.tol.to_string()),
            ("u0", self.u0.to_string()),
            ("u_max", self.u_max.to_string()),
            ("u_min", self.u_min.to_string()),
            ("write_paths", self.write_paths.to_string()),
            ("x_max", self.x_max.to_string()),
            ("x_min", self.x_min.to_string()),
        ]
    }

    /// Cross-key checks that the library would not report under the
    /// config key's own name.
    pub fn validate(&self) -> CfgResult<()> {
        let positives: [(&str, f64); 2] = [("drift_rate", self.drift_rate), ("diffusion_slope", self.diffusion_slope)];
        for (key, v) in positives {
            if v < 0.0 {
                return Err(ConfigError(format!("key `{key}`: must be >= 0, got {v}")));
            }
        }
        if self.n_paths == 0 {
            return Err(ConfigError("key `n_paths`: must be at least 1".to_string()));
        }
        if !(self.tol > 0.0) {
            return Err(ConfigError(format!("key `tol`: must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(ConfigError("key `max_iter`: must be at least 1".to_string()));
        }
        for (key, t) in self.snapshot_times.iter().map(|t| ("snapshot_times", t)) {
            if !(*t >= 0.0) {
                return Err(ConfigError(format!("key `{key}`: times must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    /// Applies a flat `key=value` config file. Blank lines and lines
    /// starting with `#` are ignored; within the file, later assignments
    /// to the same key win, matching the global precedence rule.
    pub fn apply_file(&mut self, path: &Path) -> CfgResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config file `{}`: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!(
                    "config file `{}` line {}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim();
            // Manifests double as config files: their echo lines (the
            // command and the derived/environment blocks) are not settings.
            if key == "command" || key.starts_with("derived.") || key.starts_with("env.") {
                continue;
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }
}

/// Renders the manifest: the command, every resolved key in alphabetical
/// order, derived grid/medium quantities, and the raw environment echo.
pub fn render_manifest(
    cfg: &RunConfig,
    command: &str,
    lambda: f64,
    dx: f64,
    dt: f64,
    env_out_dir: Option<&str>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("command={command}\n"));
    for (key, value) in cfg.entries() {
        out.push_str(&format!("{key}={value}\n"));
    }
    out.push_str(&format!("derived.dt={dt}\n"));
    out.push_str(&format!("derived.dx={dx}\n"));
    out.push_str(&format!("derived.lambda={lambda}\n"));
    match env_out_dir {
        Some(v) => out.push_str(&format!("env.SKEWHEAT_OUT_DIR={v}\n")),
        None => out.push_str("env.SKEWHEAT_OUT_DIR=(unset)\n"),
    }
    out
}
