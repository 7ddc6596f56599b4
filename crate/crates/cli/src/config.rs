//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, keys are namespaced with
//! dots (`grid.n`, `sim.t_end`). Every omitted optional key gets a documented
//! default, and the fully resolved config can be re-serialized with
//! [`ExperimentConfig::to_flat`]; re-loading that text yields an identical
//! config, which is what makes the emitted manifests reproducible inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nlthresh_core::criteria::Nonlinearity;
use nlthresh_core::grid::Grid;
use nlthresh_core::kernels::Kernel;
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Laplace { rate: f64 },
    Cauchy { scale: f64 },
    PowerLaw { alpha: f64, x0: f64 },
    WeibullTail { alpha: f64, lambda: f64, rho: f64 },
    LogNormalTail { gamma: f64, lambda: f64, rho: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> nlthresh_core::Result<Kernel> {
        match *self {
            KernelSpec::Gaussian { sigma } => Kernel::gaussian(sigma),
            KernelSpec::Laplace { rate } => Kernel::laplace(rate),
            KernelSpec::Cauchy { scale } => Kernel::cauchy(scale),
            KernelSpec::PowerLaw { alpha, x0 } => Kernel::power_law(alpha, x0),
            KernelSpec::WeibullTail { alpha, lambda, rho } => {
                Kernel::weibull_tail(alpha, lambda, rho)
            }
            KernelSpec::LogNormalTail { gamma, lambda, rho } => {
                Kernel::log_normal_tail(gamma, lambda, rho)
            }
        }
    }

    fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplace { .. } => "laplace",
            KernelSpec::Cauchy { .. } => "cauchy",
            KernelSpec::PowerLaw { .. } => "power-law",
            KernelSpec::WeibullTail { .. } => "weibull-tail",
            KernelSpec::LogNormalTail { .. } => "log-normal-tail",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ReactionSpec {
    Cubic { r: f64, theta: f64 },
    Ignition { r: f64, theta: f64 },
}

impl ReactionSpec {
    pub fn build(&self) -> nlthresh_core::Result<Nonlinearity> {
        match *self {
            ReactionSpec::Cubic { r, theta } => Nonlinearity::cubic_bistable(r, theta),
            ReactionSpec::Ignition { r, theta } => Nonlinearity::ignition(r, theta),
        }
    }
}

/// Everything a command needs, with library defaults already applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub reaction: ReactionSpec,
    pub grid_half_extent: f64,
    pub grid_n: usize,
    pub plateau_eps: f64,
    pub plateau_level: f64,
    pub sim_t_end: f64,
    pub sim_dt: Option<f64>,
    pub sim_margin_e: f64,
    pub sim_margin_p: f64,
    pub sim_w_prop: Option<f64>,
    pub sim_sample_interval: Option<f64>,
    pub crit_m: f64,
    pub crit_alpha: Option<f64>,
    pub crit_eps_list: Vec<f64>,
    pub crit_levels: Vec<f64>,
    pub threshold_tol: f64,
    pub threshold_max_sims: usize,
    pub threshold_l_init: Option<f64>,
    pub sweep_eps: Vec<f64>,
    pub fit_log_power: f64,
    pub fit_exp_log_power: f64,
    pub tails_orders: Vec<usize>,
    pub tails_levels: Vec<f64>,
    pub wave_alpha: f64,
    pub wave_q0: Option<f64>,
    pub wave_q1: Option<f64>,
    pub seed: u64,
    pub out_dir: Option<String>,
}

pub fn default_sweep_eps() -> Vec<f64> {
    // Seven log-spaced heights from 1e-1 down to 1e-3.
    (0..7).map(|k| 10f64.powf(-1.0 - k as f64 / 3.0)).collect()
}

impl ExperimentConfig {
    pub fn grid(&self) -> nlthresh_core::Result<Grid> {
        Grid::new(self.grid_half_extent, self.grid_n)
    }

    pub fn sim_options(&self) -> nlthresh_core::simulator::SimOptions {
        nlthresh_core::simulator::SimOptions {
            dt: self.sim_dt,
            margin_e: self.sim_margin_e,
            margin_p: self.sim_margin_p,
            w_prop: self.sim_w_prop,
            sample_interval: self.sim_sample_interval,
        }
    }

    pub fn bisect_options(&self) -> nlthresh_core::thresholds::BisectOpts {
        nlthresh_core::thresholds::BisectOpts {
            tol: self.threshold_tol,
            max_sims: self.threshold_max_sims,
            t_end: self.sim_t_end,
            x_extent: Some(self.grid_half_extent),
            grid_n: self.grid_n,
            l_init: self.threshold_l_init,
        }
    }

    /// Serializes the resolved config back into the flat format. Optional
    /// keys that resolved to "let the library decide" are omitted, so the
    /// output re-loads to an identical config.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kernel.family = {}", self.kernel.family_name());
        match self.kernel {
            KernelSpec::Gaussian { sigma } => {
                let _ = writeln!(s, "kernel.sigma = {sigma}");
            }
            KernelSpec::Laplace { rate } => {
                let _ = writeln!(s, "kernel.rate = {rate}");
            }
            KernelSpec::Cauchy { scale } => {
                let _ = writeln!(s, "kernel.scale = {scale}");
            }
            KernelSpec::PowerLaw { alpha, x0 } => {
                let _ = writeln!(s, "kernel.alpha = {alpha}");
                let _ = writeln!(s, "kernel.x0 = {x0}");
            }
            KernelSpec::WeibullTail { alpha, lambda, rho } => {
                let _ = writeln!(s, "kernel.alpha = {alpha}");
                let _ = writeln!(s, "kernel.lambda = {lambda}");
                let _ = writeln!(s, "kernel.rho = {rho}");
            }
            KernelSpec::LogNormalTail { gamma, lambda, rho } => {
                let _ = writeln!(s, "kernel.gamma = {gamma}");
                let _ = writeln!(s, "kernel.lambda = {lambda}");
                let _ = writeln!(s, "kernel.rho = {rho}");
            }
        }
        let (kind, r, theta) = match self.reaction {
            ReactionSpec::Cubic { r, theta } => ("cubic", r, theta),
            ReactionSpec::Ignition { r, theta } => ("ignition", r, theta),
        };
        let _ = writeln!(s, "reaction.kind = {kind}");
        let _ = writeln!(s, "reaction.r = {r}");
        let _ = writeln!(s, "reaction.theta = {theta}");
        let _ = writeln!(s, "grid.half_extent = {}", self.grid_half_extent);
        let _ = writeln!(s, "grid.n = {}", self.grid_n);
        let _ = writeln!(s, "plateau.eps = {}", self.plateau_eps);
        let _ = writeln!(s, "plateau.level = {}", self.plateau_level);
        let _ = writeln!(s, "sim.t_end = {}", self.sim_t_end);
        if let Some(v) = self.sim_dt {
            let _ = writeln!(s, "sim.dt = {v}");
        }
        let _ = writeln!(s, "sim.margin_e = {}", self.sim_margin_e);
        let _ = writeln!(s, "sim.margin_p = {}", self.sim_margin_p);
        if let Some(v) = self.sim_w_prop {
            let _ = writeln!(s, "sim.w_prop = {v}");
        }
        if let Some(v) = self.sim_sample_interval {
            let _ = writeln!(s, "sim.sample_interval = {v}");
        }
        let _ = writeln!(s, "crit.m = {}", self.crit_m);
        if let Some(v) = self.crit_alpha {
            let _ = writeln!(s, "crit.alpha = {v}");
        }
        let _ = writeln!(s, "crit.eps_list = {}", join_f64(&self.crit_eps_list));
        let _ = writeln!(s, "crit.levels = {}", join_f64(&self.crit_levels));
        let _ = writeln!(s, "threshold.tol = {}", self.threshold_tol);
        let _ = writeln!(s, "threshold.max_sims = {}", self.threshold_max_sims);
        if let Some(v) = self.threshold_l_init {
            let _ = writeln!(s, "threshold.l_init = {v}");
        }
        let _ = writeln!(s, "sweep.eps = {}", join_f64(&self.sweep_eps));
        let _ = writeln!(s, "fit.log_power = {}", self.fit_log_power);
        let _ = writeln!(s, "fit.exp_log_power = {}", self.fit_exp_log_power);
        let orders: Vec<String> = self.tails_orders.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "tails.orders = {}", orders.join(", "));
        let _ = writeln!(s, "tails.levels = {}", join_f64(&self.tails_levels));
        let _ = writeln!(s, "wave.alpha = {}", self.wave_alpha);
        if let Some(v) = self.wave_q0 {
            let _ = writeln!(s, "wave.q0 = {v}");
        }
        if let Some(v) = self.wave_q1 {
            let _ = writeln!(s, "wave.q1 = {v}");
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "out.dir = {dir}");
        }
        s
    }

    /// The resolved pairs as a sorted map, for the JSON manifest.
    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.to_flat()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

fn join_f64(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
    parts.join(", ")
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        line: 0,
        msg: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, path: &str) -> Result<ExperimentConfig, CliError> {
    let err = |line: usize, msg: String| CliError::Config {
        path: path.to_string(),
        line,
        msg,
    };
    let mut pairs: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
            return Err(err(line_no, format!("malformed key `{key}`")));
        }
        if value.is_empty() {
            return Err(err(line_no, format!("key `{key}` has an empty value; omit the key to use its default")));
        }
        if let Some((prev_line, _)) = pairs.get(&key) {
            return Err(err(line_no, format!("duplicate key `{key}` (first set on line {prev_line})")));
        }
        pairs.insert(key, (line_no, value));
    }

    let mut take = |key: &str| pairs.remove(key);
    let f64_of = |key: &str, (line, v): (usize, String)| {
        v.parse::<f64>()
            .map_err(|e| err(line, format!("invalid value `{v}` for `{key}`: {e}")))
    };
    let usize_of = |key: &str, (line, v): (usize, String)| {
        v.parse::<usize>()
            .map_err(|e| err(line, format!("invalid value `{v}` for `{key}`: {e}")))
    };
    let u64_of = |key: &str, (line, v): (usize, String)| {
        v.parse::<u64>()
            .map_err(|e| err(line, format!("invalid value `{v}` for `{key}`: {e}")))
    };
    let f64_list_of = |key: &str, (line, v): (usize, String)| {
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| err(line, format!("invalid list entry `{}` for `{key}`: {e}", p.trim())))
            })
            .collect::<Result<Vec<f64>, CliError>>()
    };
    let usize_list_of = |key: &str, (line, v): (usize, String)| {
        v.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| err(line, format!("invalid list entry `{}` for `{key}`: {e}", p.trim())))
            })
            .collect::<Result<Vec<usize>, CliError>>()
    };

    macro_rules! opt_f64 {
        ($key:expr) => {
            match take($key) {
                Some(pv) => Some(f64_of($key, pv)?),
                None => None,
            }
        };
    }
    macro_rules! f64_or {
        ($key:expr, $default:expr) => {
            match take($key) {
                Some(pv) => f64_of($key, pv)?,
                None => $default,
            }
        };
    }

    let (fam_line, family) = take("kernel.family")
        .ok_or_else(|| err(0, "missing required key `kernel.family`".into()))?;
    let kernel = match family.as_str() {
        "gaussian" => KernelSpec::Gaussian { sigma: f64_or!("kernel.sigma", 1.0) },
        "laplace" => KernelSpec::Laplace { rate: f64_or!("kernel.rate", 1.0) },
        "cauchy" => KernelSpec::Cauchy { scale: f64_or!("kernel.scale", 1.0) },
        "power-law" => KernelSpec::PowerLaw {
            alpha: f64_or!("kernel.alpha", 3.0),
            x0: f64_or!("kernel.x0", 1.0),
        },
        "weibull-tail" => KernelSpec::WeibullTail {
            alpha: f64_or!("kernel.alpha", 0.5),
            lambda: f64_or!("kernel.lambda", 1.0),
            rho: f64_or!("kernel.rho", 0.0),
        },
        "log-normal-tail" => KernelSpec::LogNormalTail {
            gamma: f64_or!("kernel.gamma", 2.0),
            lambda: f64_or!("kernel.lambda", 1.0),
            rho: f64_or!("kernel.rho", 0.0),
        },
        other => {
            return Err(err(fam_line, format!(
                "unknown kernel family `{other}` (expected gaussian, laplace, cauchy, power-law, weibull-tail or log-normal-tail)"
            )))
        }
    };

    let (kind_line, kind) = take("reaction.kind")
        .ok_or_else(|| err(0, "missing required key `reaction.kind`".into()))?;
    let r = f64_or!("reaction.r", 1.0);
    let theta = f64_or!("reaction.theta", 0.3);
    let reaction = match kind.as_str() {
        "cubic" => ReactionSpec::Cubic { r, theta },
        "ignition" => ReactionSpec::Ignition { r, theta },
        other => {
            return Err(err(kind_line, format!(
                "unknown reaction kind `{other}` (expected cubic or ignition)"
            )))
        }
    };

    let cfg = ExperimentConfig {
        kernel,
        reaction,
        grid_half_extent: f64_or!("grid.half_extent", 200.0),
        grid_n: match take("grid.n") {
            Some(pv) => usize_of("grid.n", pv)?,
            None => 8192,
        },
        plateau_eps: f64_or!("plateau.eps", 0.1),
        plateau_level: f64_or!("plateau.level", 10.0),
        sim_t_end: f64_or!("sim.t_end", 120.0),
        sim_dt: opt_f64!("sim.dt"),
        sim_margin_e: f64_or!("sim.margin_e", 0.05),
        sim_margin_p: f64_or!("sim.margin_p", 0.05),
        sim_w_prop: opt_f64!("sim.w_prop"),
        sim_sample_interval: opt_f64!("sim.sample_interval"),
        crit_m: f64_or!("crit.m", 0.5),
        crit_alpha: opt_f64!("crit.alpha"),
        crit_eps_list: match take("crit.eps_list") {
            Some(pv) => f64_list_of("crit.eps_list", pv)?,
            None => vec![0.1],
        },
        crit_levels: match take("crit.levels") {
            Some(pv) => f64_list_of("crit.levels", pv)?,
            None => vec![5.0, 10.0, 20.0, 40.0],
        },
        threshold_tol: f64_or!("threshold.tol", 0.05),
        threshold_max_sims: match take("threshold.max_sims") {
            Some(pv) => usize_of("threshold.max_sims", pv)?,
            None => 40,
        },
        threshold_l_init: opt_f64!("threshold.l_init"),
        sweep_eps: match take("sweep.eps") {
            Some(pv) => f64_list_of("sweep.eps", pv)?,
            None => default_sweep_eps(),
        },
        fit_log_power: f64_or!("fit.log_power", 2.0),
        fit_exp_log_power: f64_or!("fit.exp_log_power", 2.0),
        tails_orders: match take("tails.orders") {
            Some(pv) => usize_list_of("tails.orders", pv)?,
            None => vec![1, 2, 4, 8, 16, 32],
        },
        tails_levels: match take("tails.levels") {
            Some(pv) => f64_list_of("tails.levels", pv)?,
            None => vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
        },
        wave_alpha: f64_or!("wave.alpha", 0.75),
        wave_q0: opt_f64!("wave.q0"),
        wave_q1: opt_f64!("wave.q1"),
        seed: match take("seed") {
            Some(pv) => u64_of("seed", pv)?,
            None => 0,
        },
        out_dir: take("out.dir").map(|(_, v)| v),
    };

    if let Some((key, (line, _))) = pairs.iter().next() {
        return Err(err(*line, format!("unknown key `{key}`")));
    }
    Ok(cfg)
}
