//! One function per subcommand. Each builds its inputs from the resolved
//! config, runs the corresponding library routines and writes CSV tables
//! through [`OutDir`] so every artifact carries the config hash.

use nlthresh_core::convops::ConvPowerSet;
use nlthresh_core::convops::discretize;
use nlthresh_core::criteria;
use nlthresh_core::kernels::{Family, Kernel, TailClass, default_fit_grid};
use nlthresh_core::simulator::{self, Verdict};
use nlthresh_core::tailtheory;
use nlthresh_core::thresholds::{self, ScalingModel, SweepOpts, SweepRow};
use nlthresh_core::waves;

use crate::config::ExperimentConfig;
use crate::output::{OutDir, csv_err, num, opt_num};
use crate::CliError;

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Extinction => "extinction",
        Verdict::Propagation => "propagation",
        Verdict::Undecided => "undecided",
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
}

pub fn analyze_kernel(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let spread = k.spread_scale();

    let mut w = out.csv("fourier.csv", &["xi", "j_hat", "one_minus_j_hat"])?;
    for xi in linspace(0.0, 10.0 / spread, 201) {
        w.write_record([num(xi), num(k.fourier(xi)), num(k.one_minus_fourier(xi))])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = out.csv("summary.csv", &["quantity", "value"])?;
    let mut row = |name: &str, value: String| w.write_record([name.to_string(), value]).map_err(csv_err);
    row("family", k.label())?;
    let (beta_fit, a_fit) = k.fit_expansion(&default_fit_grid())?;
    row("beta_fit", num(beta_fit))?;
    row("a_fit", num(a_fit))?;
    if let Ok((beta, a)) = k.expansion_params() {
        row("beta", num(beta))?;
        row("a", num(a))?;
    }
    let meta = *k.meta();
    row("m1", opt_num(meta.m1))?;
    row("m2", opt_num(meta.m2))?;
    row("exp_bounded", meta.exp_bounded.to_string())?;
    row("spread_scale", num(spread))?;
    row("interquartile_range", num(k.interquartile_range()))?;
    for mult in [1.0, 2.0, 5.0, 10.0] {
        row(&format!("tail_mass({})", mult * spread), num(k.tail_mass_1(mult * spread)))?;
    }
    w.flush()?;

    // Log-mgf and rate tables only make sense below the abscissa where the
    // exponential moments diverge; probe for it, then sample strictly inside.
    let mut w = out.csv("lambda.csv", &["s", "log_mgf"])?;
    if meta.exp_bounded {
        let mut s_hi = 0.5 / spread;
        while k.log_mgf(s_hi).is_finite() && k.log_mgf(s_hi) < 50.0 {
            s_hi *= 2.0;
        }
        let mut lo = 0.5 * s_hi;
        let mut hi = s_hi;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if k.log_mgf(mid).is_finite() && k.log_mgf(mid) < 50.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for s in linspace(0.0, lo, 81) {
            w.write_record([num(s), num(k.log_mgf(s))]).map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = out.csv("rate.csv", &["x", "rate"])?;
    if meta.exp_bounded {
        for x in linspace(0.0, 5.0 * spread, 81) {
            match k.rate_function(x) {
                Ok(v) => w.write_record([num(x), num(v)]).map_err(csv_err)?,
                Err(_) => break,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn tail_class_of(k: &Kernel) -> Option<TailClass> {
    match *k.family() {
        Family::PowerLaw { alpha, .. } => Some(TailClass::RegularlyVarying { alpha }),
        Family::WeibullTail { alpha, lambda, rho, .. } => {
            Some(TailClass::WeibullType { alpha, lambda, rho })
        }
        Family::LogNormalTail { gamma, lambda, rho, .. } => {
            Some(TailClass::LogNormalType { gamma, lambda, rho })
        }
        _ => None,
    }
}

pub fn tails(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let g = cfg.grid()?;
    let orders = &cfg.tails_orders;
    let levels = &cfg.tails_levels;
    let max_i = *orders.iter().max().ok_or_else(|| {
        CliError::Invalid("tails.orders must not be empty".into())
    })?;
    let powers = ConvPowerSet::compute(&discretize(&k, g)?, max_i)?;

    let stable_c = tailtheory::fit_stable_constant(&k, levels).ok();
    let nagaev_c = tailtheory::fit_nagaev_constant(&k, g, orders, levels).ok();
    let tc = tail_class_of(&k);

    let mut w = out.csv(
        "tails.csv",
        &[
            "i", "level", "r", "r_at_i_level", "mass_loss", "durrett", "cramer_at_i_level",
            "stable", "nagaev", "mikosch_threshold", "mikosch_bound",
        ],
    )?;
    for &i in orders {
        for &level in levels {
            // Readings turn blank where the window cannot resolve them
            // (level beyond X/2, or escaped mass dominating the tail).
            let r = powers.tail_mass(i, level).ok();
            let r_scaled = powers.tail_mass(i, i as f64 * level).ok();
            let loss = powers.mass_loss(i)?;
            let durrett = tailtheory::durrett_bound(&k, i, level);
            let cramer = tailtheory::cramer_bound(&k, i, level).ok();
            let stable = stable_c
                .and_then(|c| tailtheory::stable_asymptotic(&k, i, level, c).ok());
            let nagaev = nagaev_c.map(|c| {
                let r1_half = k.tail_mass_1(level / 2.0);
                tailtheory::nagaev_bound(i, level, r1_half, c)
            });
            let (mik_thr, mik_bound) = match &tc {
                Some(tc) => match tailtheory::mikosch_regime_check(&k, tc, i, level, g) {
                    Ok(rep) => (
                        Some(tailtheory::mikosch_threshold(i, tc)),
                        Some(rep.bound_value),
                    ),
                    Err(_) => (None, None),
                },
                None => (None, None),
            };
            w.write_record([
                i.to_string(),
                num(level),
                opt_num(r),
                opt_num(r_scaled),
                num(loss),
                num(durrett),
                opt_num(cramer),
                opt_num(stable),
                opt_num(nagaev),
                opt_num(mik_thr),
                opt_num(mik_bound),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn check_criteria(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let f = cfg.reaction.build()?;
    let g = cfg.grid()?;
    let alpha = cfg.crit_alpha.unwrap_or(0.5 * (f.delta() - f.theta()));

    let mut w = out.csv(
        "criteria.csv",
        &[
            "kind", "eps", "level", "satisfied", "witness_t", "lhs", "rhs",
            "truncation_bound", "window_lo", "window_hi", "error",
        ],
    )?;
    for &eps in &cfg.crit_eps_list {
        for &level in &cfg.crit_levels {
            let reports = [
                ("extinction", criteria::extinction_holds(&k, &f, eps, level, g)),
                (
                    "propagation",
                    criteria::propagation_holds(&k, &f, eps, level, cfg.crit_m, alpha, g),
                ),
            ];
            for (kind, result) in reports {
                let record = match result {
                    Ok(rep) => [
                        kind.to_string(),
                        num(eps),
                        num(level),
                        rep.satisfied.to_string(),
                        num(rep.witness_t),
                        num(rep.lhs),
                        num(rep.rhs),
                        num(rep.truncation_bound),
                        rep.window.0.to_string(),
                        rep.window.1.to_string(),
                        String::new(),
                    ],
                    Err(e) => [
                        kind.to_string(),
                        num(eps),
                        num(level),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        e.to_string(),
                    ],
                };
                w.write_record(record).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let f = cfg.reaction.build()?;
    let g = cfg.grid()?;
    let u0 = simulator::initial_plateau(f.theta(), cfg.plateau_eps, cfg.plateau_level, g)?;
    let (summary, outcome) = simulator::simulate(&k, &f, &u0, cfg.sim_t_end, &cfg.sim_options())?;

    let mut w = out.csv("trajectory.csv", &["t", "sup", "inf", "mass", "front_right"])?;
    for row in &summary.rows {
        w.write_record([
            num(row.t),
            num(row.sup),
            num(row.inf),
            num(row.mass),
            opt_num(row.front_right),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = out.csv(
        "outcome.csv",
        &[
            "verdict", "t_decided", "sup_at_decision", "plateau_width",
            "front_speed_estimate", "saturated",
        ],
    )?;
    w.write_record([
        verdict_label(outcome.verdict).to_string(),
        num(outcome.t_decided),
        num(outcome.sup_at_decision),
        num(outcome.plateau_width),
        opt_num(outcome.front_speed_estimate),
        outcome.saturated.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

const THRESHOLD_HEADER: [&str; 10] = [
    "eps", "l_ext_lo", "l_ext_hi", "l_prop_lo", "l_prop_hi", "undecided_gap",
    "criterion_l_ext_lower", "criterion_l_prop_upper", "n_sims", "error",
];

fn threshold_record(row: &SweepRow) -> [String; 10] {
    match &row.estimate {
        Some(est) => [
            num(row.eps),
            num(est.l_ext.0),
            num(est.l_ext.1),
            num(est.l_prop.0),
            num(est.l_prop.1),
            num(est.undecided_gap),
            opt_num(est.criterion_l_ext_lower),
            opt_num(est.criterion_l_prop_upper),
            est.n_sims.to_string(),
            String::new(),
        ],
        None => [
            num(row.eps),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            row.error.clone().unwrap_or_default(),
        ],
    }
}

pub fn find_threshold(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let f = cfg.reaction.build()?;
    let est = thresholds::find_thresholds(
        &k,
        &f,
        cfg.plateau_eps,
        &cfg.sim_options(),
        &cfg.bisect_options(),
    )?;
    let row = SweepRow { eps: cfg.plateau_eps, estimate: Some(est), error: None };
    let mut w = out.csv("threshold.csv", &THRESHOLD_HEADER)?;
    w.write_record(threshold_record(&row)).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

pub fn sweep(
    cfg: &ExperimentConfig,
    threads: usize,
    verbose: bool,
    out: &mut OutDir,
) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let f = cfg.reaction.build()?;
    let opts = SweepOpts { sim: cfg.sim_options(), bisect: cfg.bisect_options() };

    let rows = if threads <= 1 {
        thresholds::sweep(&k, &f, &cfg.sweep_eps, &opts)?
    } else {
        sweep_parallel(&k, &f, &cfg.sweep_eps, &opts, threads)?
    };
    if verbose {
        for row in &rows {
            match &row.estimate {
                Some(est) => eprintln!(
                    "eps={}: ext ({}, {}), prop ({}, {}), {} sims",
                    row.eps, est.l_ext.0, est.l_ext.1, est.l_prop.0, est.l_prop.1, est.n_sims
                ),
                None => eprintln!("eps={}: {}", row.eps, row.error.as_deref().unwrap_or("failed")),
            }
        }
    }

    let mut w = out.csv("sweep.csv", &THRESHOLD_HEADER)?;
    for row in &rows {
        w.write_record(threshold_record(row)).map_err(csv_err)?;
    }
    w.flush()?;

    // Scaling fits on the certified-extinct side of the bracket against the
    // plateau excess, in long form: one (model, quantity, value) row each.
    let table: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.estimate.as_ref().map(|e| (r.eps, e.l_ext.1)))
        .collect();
    let models = [
        ("power_of_inv_eps", ScalingModel::PowerOfInvEps),
        ("log", ScalingModel::Log),
        ("log_power", ScalingModel::LogPower(cfg.fit_log_power)),
        ("exp_log_power", ScalingModel::ExpLogPower(cfg.fit_exp_log_power)),
    ];
    let mut w = out.csv("fits.csv", &["model", "quantity", "value"])?;
    for (name, model) in models {
        match (model, thresholds::fit_scaling(&table, model)) {
            (_, Ok(fit)) => {
                if let ScalingModel::LogPower(p) = model {
                    w.write_record([name.to_string(), "shape_power".into(), num(p)])
                        .map_err(csv_err)?;
                }
                if let ScalingModel::ExpLogPower(gam) = model {
                    w.write_record([name.to_string(), "shape_gamma".into(), num(gam)])
                        .map_err(csv_err)?;
                }
                w.write_record([name.to_string(), "r_squared".into(), num(fit.r_squared)])
                    .map_err(csv_err)?;
                for (key, value) in &fit.fitted {
                    w.write_record([name.to_string(), key.clone(), num(*value)])
                        .map_err(csv_err)?;
                }
            }
            (_, Err(e)) => {
                w.write_record([name.to_string(), "error".into(), e.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Distributes heights over a scoped worker pool; rows are stitched back in
/// input order, so the emitted table is identical to the sequential one.
fn sweep_parallel(
    k: &Kernel,
    f: &criteria::Nonlinearity,
    eps_list: &[f64],
    opts: &SweepOpts,
    threads: usize,
) -> Result<Vec<SweepRow>, CliError> {
    for pair in eps_list.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(nlthresh_core::Error::BadLevels(format!(
                "sweep heights must be strictly decreasing, got {} then {}",
                pair[0], pair[1]
            ))
            .into());
        }
    }
    let workers = threads.min(eps_list.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let chunks: Vec<Vec<(usize, SweepRow)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut got = Vec::new();
                    loop {
                        let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if idx >= eps_list.len() {
                            break;
                        }
                        let eps = eps_list[idx];
                        let row =
                            match thresholds::find_thresholds(k, f, eps, &opts.sim, &opts.bisect) {
                                Ok(est) => SweepRow { eps, estimate: Some(est), error: None },
                                Err(e) => {
                                    SweepRow { eps, estimate: None, error: Some(e.to_string()) }
                                }
                            };
                        got.push((idx, row));
                    }
                    got
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows: Vec<Option<SweepRow>> = (0..eps_list.len()).map(|_| None).collect();
    for (idx, row) in chunks.into_iter().flatten() {
        rows[idx] = Some(row);
    }
    Ok(rows.into_iter().map(|r| r.expect("every sweep height processed")).collect())
}

pub fn wave(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<(), CliError> {
    let k = cfg.kernel.build()?;
    let f = cfg.reaction.build()?;
    let g = cfg.grid()?;
    let w = waves::extract_profile(&k, &f, g)?;
    let residual = waves::profile_residual(&k, &f, &w);
    let (margin_left, margin_right) = waves::integrability_margins(&w);
    let overrides = waves::SubsolutionOverrides {
        q0: cfg.wave_q0,
        q1: cfg.wave_q1,
        t_max: None,
        tab_len: None,
    };
    let sp = waves::build_subsolution(&w, &f, cfg.wave_alpha, overrides)?;

    let z_max = w.u.grid().half_extent();
    let t_end = (0.5 * sp.horizon()).min(20.0);
    let t_grid: Vec<f64> = linspace(0.0, t_end, 11);
    let x_max = -sp.xi0 + sp.c * t_end + 2.0 * z_max;
    let x_grid: Vec<f64> = linspace(-x_max, x_max, 2001);
    let sub_residual = waves::check_subsolution(&k, &f, &w, &sp, &t_grid, &x_grid);

    let mut csv = out.csv("profile.csv", &["z", "u"])?;
    let zg = w.u.grid();
    for (z, v) in zg.nodes().zip(w.u.values()) {
        csv.write_record([num(z), num(*v)]).map_err(csv_err)?;
    }
    csv.flush()?;

    let mut csv = out.csv("wave.csv", &["quantity", "value"])?;
    let rows = [
        ("speed", w.c),
        ("speed_rel_err", w.speed_rel_err),
        ("profile_residual_sup", residual),
        ("margin_left", margin_left),
        ("margin_right", margin_right),
        ("alpha", cfg.wave_alpha),
        ("q0", sp.q0),
        ("q1", sp.q1),
        ("mu", sp.mu),
        ("delta", sp.delta),
        ("b", sp.b),
        ("s0", sp.s0),
        ("eta0", sp.eta0),
        ("xi0", sp.xi0),
        ("vartheta", sp.vartheta),
        ("checked_horizon", t_end),
        ("subsolution_residual_max", sub_residual),
    ];
    for (name, value) in rows {
        csv.write_record([name.to_string(), num(value)]).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}
