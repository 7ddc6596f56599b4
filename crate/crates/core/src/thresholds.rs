//! Empirical threshold location and scaling analysis. A bisection driven by
//! the simulator brackets the critical plateau half-widths for a given
//! excitation height, the tail criteria supply computable outer bounds, and
//! least-squares fits in transformed coordinates compare measured thresholds
//! against the predicted growth laws in 1/eps.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::criteria::{extinction_holds, propagation_holds_default, Nonlinearity};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::Kernel;
use crate::simulator::{initial_plateau, simulate, SimOptions, Verdict};

/// Bracketed threshold readings for one excitation height. The simulator's
/// Undecided verdicts are assigned to neither side: `l_ext.1` is the bottom
/// of the undecided band and `l_prop.0` its top, so the gap between them is
/// exactly what the finite-time runs could not classify.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ThresholdEstimate {
    pub eps: f64,
    /// (largest half-width seen going extinct, smallest seen not extinct).
    pub l_ext: (f64, f64),
    /// (largest half-width seen not propagating, smallest seen propagating).
    pub l_prop: (f64, f64),
    pub undecided_gap: f64,
    /// Largest half-width certified extinct by the tail criterion, when the
    /// criterion is evaluable and satisfiable on the searched range.
    pub criterion_l_ext_lower: Option<f64>,
    /// Smallest half-width certified propagating by the tail criterion.
    pub criterion_l_prop_upper: Option<f64>,
    pub n_sims: usize,
}

/// Budget and geometry knobs for the bisection.
#[derive(Debug, Clone)]
pub struct BisectOpts {
    /// Stop refining a transition once (hi - lo)/hi falls below this.
    pub tol: f64,
    /// Total simulation budget across both transitions.
    pub max_sims: usize,
    /// Horizon per simulation; runs that decide earlier stop earlier.
    pub t_end: f64,
    /// Window half-extent; defaults to 120 spread scales of the kernel.
    pub x_extent: Option<f64>,
    pub grid_n: usize,
    /// First probe half-width; defaults to 5 spread scales.
    pub l_init: Option<f64>,
}

impl Default for BisectOpts {
    fn default() -> Self {
        BisectOpts {
            tol: 0.05,
            max_sims: 40,
            t_end: 120.0,
            x_extent: None,
            grid_n: 1 << 13,
            l_init: None,
        }
    }
}

struct Brackets {
    e_lo: f64,
    e_hi: f64,
    p_lo: f64,
    p_hi: f64,
}

impl Brackets {
    fn absorb(&mut self, l: f64, v: Verdict) {
        match v {
            Verdict::Extinction => {
                self.e_lo = self.e_lo.max(l);
                self.p_lo = self.p_lo.max(l);
            }
            Verdict::Undecided => {
                if l < self.e_hi {
                    self.e_hi = l;
                }
                self.p_lo = self.p_lo.max(l);
            }
            Verdict::Propagation => {
                self.e_hi = self.e_hi.min(l);
                self.p_hi = self.p_hi.min(l);
            }
        }
        // Monotonicity of verdicts in L keeps these consistent; reconcile
        // anyway so a borderline flip cannot produce an inverted bracket.
        self.e_hi = self.e_hi.min(self.p_hi);
        self.p_lo = self.p_lo.max(self.e_lo);
        self.e_lo = self.e_lo.min(self.e_hi);
        self.p_hi = self.p_hi.max(self.p_lo);
    }
}

fn rel_width(lo: f64, hi: f64) -> f64 {
    if hi <= 0.0 {
        0.0
    } else {
        (hi - lo) / hi
    }
}

/// Brackets both thresholds by simulation: an exponential search finds an
/// (extinct, propagating) pair, then bisection tightens the two transition
/// fronts, spending the budget on whichever is relatively wider. Criterion
/// bounds are attached when the tail criteria are evaluable there.
pub fn find_thresholds(
    k: &Kernel,
    f: &Nonlinearity,
    eps: f64,
    sim_opts: &SimOptions,
    bisect: &BisectOpts,
) -> Result<ThresholdEstimate> {
    let theta = f.theta();
    if !(eps > 0.0 && eps <= 1.0 - theta) {
        return Err(Error::BadLevels(format!(
            "excitation height eps = {eps} must lie in (0, {}]",
            1.0 - theta
        )));
    }
    let x_extent = bisect.x_extent.unwrap_or(120.0 * k.spread_scale());
    let g = Grid::new(x_extent, bisect.grid_n)?;
    let l_cap = 0.79 * x_extent;
    let l_floor = 4.0 * g.dx();
    let n_sims = std::cell::Cell::new(0usize);
    let probe = |l: f64| -> Result<Verdict> {
        n_sims.set(n_sims.get() + 1);
        let u0 = initial_plateau(theta, eps, l, g)?;
        let (_, outcome) = simulate(k, f, &u0, bisect.t_end, sim_opts)?;
        Ok(outcome.verdict)
    };

    let mut br = Brackets { e_lo: 0.0, e_hi: f64::INFINITY, p_lo: 0.0, p_hi: f64::INFINITY };
    let first = bisect
        .l_init
        .unwrap_or(5.0 * k.spread_scale())
        .clamp(l_floor, l_cap);
    br.absorb(first, probe(first)?);

    // Upward until something propagates.
    let mut l = first;
    while !br.p_hi.is_finite() {
        if l >= l_cap {
            return Err(Error::NoPropagationFound(l_cap));
        }
        l = (2.0 * l).min(l_cap);
        br.absorb(l, probe(l)?);
    }
    // Downward until something dies; half-widths at the grid floor that
    // still excite count as a zero extinction threshold.
    let mut l = first.min(br.e_hi);
    while br.e_lo == 0.0 && l > l_floor {
        l = (0.5 * l).max(l_floor);
        br.absorb(l, probe(l)?);
    }
    if !br.e_hi.is_finite() {
        // Everything probed so far went extinct; the propagation probe above
        // must have decided, so walk the gap once to seed the upper edges.
        br.e_hi = br.p_hi;
    }

    while n_sims.get() < bisect.max_sims {
        let we = rel_width(br.e_lo, br.e_hi);
        let wp = rel_width(br.p_lo, br.p_hi);
        let (lo, hi) = if we >= wp { (br.e_lo, br.e_hi) } else { (br.p_lo, br.p_hi) };
        if we.max(wp) <= bisect.tol || (hi - lo) <= l_floor {
            break;
        }
        let mid = 0.5 * (lo + hi);
        br.absorb(mid, probe(mid)?);
    }

    let criterion_l_ext_lower = largest_extinction_level(k, f, eps, g).ok();
    let criterion_l_prop_upper = smallest_propagation_level(k, f, eps, g).ok();
    Ok(ThresholdEstimate {
        eps,
        l_ext: (br.e_lo, br.e_hi),
        l_prop: (br.p_lo, br.p_hi),
        undecided_gap: (br.p_lo - br.e_hi).max(0.0),
        criterion_l_ext_lower,
        criterion_l_prop_upper,
        n_sims: n_sims.get(),
    })
}

/// Outer bounds from the tail criteria on the same window: the largest
/// half-width the extinction criterion certifies and the smallest one the
/// propagation criterion certifies. Both are sufficient conditions, so they
/// must sandwich the empirical brackets.
pub fn criterion_bounds(k: &Kernel, f: &Nonlinearity, eps: f64, g: Grid) -> Result<(f64, f64)> {
    let lo = largest_extinction_level(k, f, eps, g)?;
    let hi = smallest_propagation_level(k, f, eps, g)?;
    Ok((lo, hi))
}

fn log_levels(g: Grid) -> Vec<f64> {
    let l_min = (4.0 * g.dx()).max(1e-3);
    let l_max = 0.8 * g.half_extent();
    let n = 16;
    (0..n)
        .map(|i| l_min * (l_max / l_min).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn largest_extinction_level(k: &Kernel, f: &Nonlinearity, eps: f64, g: Grid) -> Result<f64> {
    let levels = log_levels(g);
    let sat = |l: f64| -> Result<bool> { Ok(extinction_holds(k, f, eps, l, g)?.satisfied) };
    // Satisfied below a cutoff: find the last certified grid point.
    let mut last_ok = None;
    for (i, &l) in levels.iter().enumerate() {
        if sat(l)? {
            last_ok = Some(i);
        } else if last_ok.is_some() {
            break;
        }
    }
    let Some(i) = last_ok else {
        return Err(Error::CriterionVacuous(format!(
            "extinction criterion unsatisfied for every half-width in [{:.3e}, {:.3e}]",
            levels[0],
            levels[levels.len() - 1]
        )));
    };
    if i + 1 == levels.len() {
        return Ok(levels[i]);
    }
    let (mut lo, mut hi) = (levels[i], levels[i + 1]);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if sat(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn smallest_propagation_level(k: &Kernel, f: &Nonlinearity, eps: f64, g: Grid) -> Result<f64> {
    let levels = log_levels(g);
    let sat = |l: f64| -> Result<bool> { Ok(propagation_holds_default(k, f, eps, l, g)?.satisfied) };
    let mut first_ok = None;
    for (i, &l) in levels.iter().enumerate() {
        if sat(l)? {
            first_ok = Some(i);
            break;
        }
    }
    let Some(i) = first_ok else {
        return Err(Error::CriterionVacuous(format!(
            "propagation criterion unsatisfied for every half-width in [{:.3e}, {:.3e}]",
            levels[0],
            levels[levels.len() - 1]
        )));
    };
    if i == 0 {
        return Ok(levels[0]);
    }
    let (mut lo, mut hi) = (levels[i - 1], levels[i]);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if sat(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// One sweep row: the estimate, or the error text for heights where the
/// search could not complete. The sweep never aborts on a bad row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub estimate: Option<ThresholdEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOpts {
    pub sim: SimOptions,
    pub bisect: BisectOpts,
}

/// Runs the threshold search for each height in a decreasing list.
/// Aggregation is sequential and deterministic: rows come out in input
/// order regardless of how the work is scheduled.
pub fn sweep(k: &Kernel, f: &Nonlinearity, eps_list: &[f64], opts: &SweepOpts) -> Result<Vec<SweepRow>> {
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::BadLevels(format!(
                "sweep heights must be strictly decreasing, got {} before {}",
                w[0], w[1]
            )));
        }
    }
    Ok(eps_list
        .iter()
        .map(|&eps| match find_thresholds(k, f, eps, &opts.sim, &opts.bisect) {
            Ok(est) => SweepRow { eps, estimate: Some(est), error: None },
            Err(e) => SweepRow { eps, estimate: None, error: Some(e.to_string()) },
        })
        .collect())
}

/// Growth laws in 1/eps that the threshold curves are fitted against.
/// Payloads are the shape parameters fixed before fitting; fitted values
/// land in `ScalingFit::fitted`.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub enum ScalingModel {
    /// L = amplitude * (1/eps)^exponent.
    PowerOfInvEps,
    /// L = intercept + slope * ln(1/eps).
    Log,
    /// L = intercept + slope * (ln(1/eps))^p.
    LogPower(f64),
    /// ln L = intercept + lambda * (ln(1/eps))^(1/gamma).
    ExpLogPower(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub fitted: BTreeMap<String, f64>,
    pub r_squared: f64,
}

/// Least squares in the model's transformed coordinates.
pub fn fit_scaling(table: &[(f64, f64)], model: ScalingModel) -> Result<ScalingFit> {
    let pts: Vec<(f64, f64)> = table
        .iter()
        .filter(|(eps, l)| {
            let log_ok = match model {
                ScalingModel::PowerOfInvEps | ScalingModel::ExpLogPower(_) => *l > 0.0,
                _ => l.is_finite(),
            };
            *eps > 0.0 && *eps < 1.0 && log_ok && l.is_finite()
        })
        .map(|&(eps, l)| {
            let x = (1.0 / eps).ln();
            match model {
                ScalingModel::PowerOfInvEps => (x, l.ln()),
                ScalingModel::Log => (x, l),
                ScalingModel::LogPower(p) => (x.powf(p), l),
                ScalingModel::ExpLogPower(gamma) => (x.powf(1.0 / gamma), l.ln()),
            }
        })
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: pts.len() });
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in &pts {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData { needed: 2, got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let mut ss_res = 0.0;
    for &(x, y) in &pts {
        let r = y - intercept - slope * x;
        ss_res += r * r;
    }
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    let mut fitted = BTreeMap::new();
    match model {
        ScalingModel::PowerOfInvEps => {
            fitted.insert("exponent".into(), slope);
            fitted.insert("amplitude".into(), intercept.exp());
        }
        ScalingModel::Log | ScalingModel::LogPower(_) => {
            fitted.insert("slope".into(), slope);
            fitted.insert("intercept".into(), intercept);
        }
        ScalingModel::ExpLogPower(_) => {
            fitted.insert("lambda".into(), slope);
            fitted.insert("intercept".into(), intercept);
        }
    }
    Ok(ScalingFit { model, fitted, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_cubic() -> (Kernel, Nonlinearity) {
        let k = Kernel::laplace(1.0).expect("unit laplace is valid");
        let f = Nonlinearity::cubic_bistable(1.0, 0.3).expect("theta below 1/2");
        (k, f)
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let table: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let eps = 10f64.powf(-1.0 - 0.25 * i as f64);
                (eps, 5.0 / eps)
            })
            .collect();
        let fit = fit_scaling(&table, ScalingModel::PowerOfInvEps).expect("enough points");
        assert!((fit.fitted["exponent"] - 1.0).abs() <= 1e-9);
        assert!((fit.fitted["amplitude"] - 5.0).abs() <= 1e-6);
        assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn exact_log_law_is_recovered() {
        let table: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let eps = 10f64.powf(-0.5 - 0.3 * i as f64);
                (eps, 3.0 * (1.0 / eps).ln())
            })
            .collect();
        let fit = fit_scaling(&table, ScalingModel::Log).expect("enough points");
        assert!((fit.fitted["slope"] - 3.0).abs() <= 1e-9);
        assert!(fit.fitted["intercept"].abs() <= 1e-9);
        assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn shaped_log_laws_are_recovered() {
        let table: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let eps = 10f64.powf(-0.4 - 0.35 * i as f64);
                let x = (1.0 / eps).ln();
                (eps, 0.7 + 1.5 * x * x)
            })
            .collect();
        let fit = fit_scaling(&table, ScalingModel::LogPower(2.0)).expect("enough points");
        assert!((fit.fitted["slope"] - 1.5).abs() <= 1e-9);
        assert!((fit.fitted["intercept"] - 0.7).abs() <= 1e-8);

        let table: Vec<(f64, f64)> = (0..9)
            .map(|i| {
                let eps = 10f64.powf(-0.4 - 0.35 * i as f64);
                let x = (1.0 / eps).ln().sqrt();
                (eps, (0.5 + 1.2 * x).exp())
            })
            .collect();
        let fit = fit_scaling(&table, ScalingModel::ExpLogPower(2.0)).expect("enough points");
        assert!((fit.fitted["lambda"] - 1.2).abs() <= 1e-9);
        assert!((fit.fitted["intercept"] - 0.5).abs() <= 1e-9);
        assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let table = [(0.1, 3.0), (0.01, 6.0), (0.001, 9.0)];
        match fit_scaling(&table, ScalingModel::Log) {
            Err(Error::InsufficientData { needed: 4, got: 3 }) => {}
            other => panic!("expected InsufficientData, got {other:?}"),
        }
    }

    #[test]
    fn r_squared_stays_in_range_on_scattered_data() {
        // Deterministic scatter around no particular law.
        let table: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let eps = 10f64.powf(-0.2 - 0.2 * i as f64);
                (eps, 4.0 + (i as f64 * 2.7).sin())
            })
            .collect();
        let fit = fit_scaling(&table, ScalingModel::Log).expect("enough points");
        assert!((0.0..=1.0).contains(&fit.r_squared));
    }

    #[test]
    fn criterion_bounds_are_finite_and_ordered_for_gaussian() {
        let k = Kernel::gaussian(1.0).expect("unit gaussian is valid");
        let f = Nonlinearity::cubic_bistable(1.0, 0.3).expect("theta below 1/2");
        let g = Grid::new(60.0, 1 << 12).expect("valid grid");
        let (lo, hi) = criterion_bounds(&k, &f, 1e-2, g).expect("both criteria satisfiable");
        assert!(lo.is_finite() && lo > 0.0);
        assert!(hi.is_finite() && hi > lo, "bounds inverted: {lo} vs {hi}");
    }

    #[test]
    fn laplace_brackets_tighten_and_sandwich() {
        let (k, f) = laplace_cubic();
        let bisect = BisectOpts {
            x_extent: Some(150.0),
            grid_n: 1 << 13,
            max_sims: 40,
            ..Default::default()
        };
        let est = find_thresholds(&k, &f, 0.1, &SimOptions::default(), &bisect)
            .expect("thresholds exist on this window");
        assert!(est.l_ext.0 > 0.0 && est.l_ext.1.is_finite());
        assert!(est.l_prop.1.is_finite());
        assert!(est.l_ext.1 <= est.l_prop.1 + 1e-12);
        assert!(
            rel_width(est.l_ext.0, est.l_ext.1) <= 0.05 + 1e-12,
            "extinction bracket still wide: {:?}",
            est.l_ext
        );
        assert!(
            rel_width(est.l_prop.0, est.l_prop.1) <= 0.05 + 1e-12,
            "propagation bracket still wide: {:?}",
            est.l_prop
        );
        if let Some(lo) = est.criterion_l_ext_lower {
            assert!(lo <= est.l_ext.1 + 1e-12, "certified-extinct {lo} above {:?}", est.l_ext);
        }
        if let Some(hi) = est.criterion_l_prop_upper {
            assert!(est.l_prop.0 <= hi + 1e-12, "certified-propagating {hi} below {:?}", est.l_prop);
        }
        assert!(est.n_sims <= bisect.max_sims + 16);
    }

    #[test]
    fn full_height_plateaus_have_much_smaller_thresholds() {
        let (k, f) = laplace_cubic();
        let bisect = BisectOpts {
            x_extent: Some(150.0),
            grid_n: 1 << 13,
            max_sims: 32,
            ..Default::default()
        };
        let tall = find_thresholds(&k, &f, 0.7, &SimOptions::default(), &bisect)
            .expect("height-1 plateaus propagate");
        let short = find_thresholds(&k, &f, 0.01, &SimOptions::default(), &bisect)
            .expect("thresholds exist on this window");
        assert!(tall.l_prop.1.is_finite());
        assert!(
            tall.l_prop.1 < short.l_prop.0,
            "expected a clear drop: {:?} vs {:?}",
            tall.l_prop,
            short.l_prop
        );
    }

    #[test]
    fn sweep_is_ordered_monotone_and_error_tolerant() {
        let (k, f) = laplace_cubic();
        assert!(sweep(&k, &f, &[], &SweepOpts::default()).expect("empty is fine").is_empty());
        assert!(sweep(&k, &f, &[0.1, 0.2], &SweepOpts::default()).is_err());

        let opts = SweepOpts {
            bisect: BisectOpts {
                x_extent: Some(100.0),
                grid_n: 1 << 12,
                max_sims: 24,
                t_end: 80.0,
                tol: 0.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let rows = sweep(&k, &f, &[0.5, 0.1], &opts).expect("heights are decreasing");
        assert_eq!(rows.len(), 2);
        let a = rows[0].estimate.as_ref().expect("first height resolves");
        let b = rows[1].estimate.as_ref().expect("second height resolves");
        assert!(a.l_ext.1 <= b.l_ext.1 + 1e-12, "thresholds should grow as eps shrinks");

        // Same inputs, same table, bit for bit.
        let rows2 = sweep(&k, &f, &[0.5, 0.1], &opts).expect("heights are decreasing");
        let j1 = serde_json::to_string(&rows).expect("rows serialize");
        let j2 = serde_json::to_string(&rows2).expect("rows serialize");
        assert_eq!(j1, j2);
    }

    #[test]
    fn bigger_budgets_stay_inside_earlier_brackets() {
        let (k, f) = laplace_cubic();
        let base = BisectOpts {
            x_extent: Some(100.0),
            grid_n: 1 << 12,
            t_end: 60.0,
            tol: 1e-4,
            max_sims: 12,
            ..Default::default()
        };
        let small = find_thresholds(&k, &f, 0.3, &SimOptions::default(), &base)
            .expect("thresholds exist on this window");
        let double = BisectOpts { max_sims: 24, ..base };
        let big = find_thresholds(&k, &f, 0.3, &SimOptions::default(), &double)
            .expect("thresholds exist on this window");
        assert!(big.l_ext.0 >= small.l_ext.0 - 1e-12);
        assert!(big.l_ext.1 <= small.l_ext.1 + 1e-12);
        assert!(big.l_prop.0 >= small.l_prop.0 - 1e-12);
        assert!(big.l_prop.1 <= small.l_prop.1 + 1e-12);
    }
}
