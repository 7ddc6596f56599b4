//! Traveling-front tools: profile extraction from long runs of the evolution,
//! a residual check against the wave equation J*U - U - cU' + f(U) = 0, tail
//! integrability margins, and a comparison sub-solution assembled from the
//! measured profile. The sub-solution is the certificate that an excited
//! plateau keeps expanding: it starts below the plateau and its residual
//! against the evolution operator stays nonpositive.

use serde::Serialize;

use crate::convops::{discretize, ConvEngine};
use crate::criteria::Nonlinearity;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::kernels::Kernel;
use crate::simulator::{front_position, initial_plateau, step_with};

/// Measured traveling front. Values are anchored so that U(0) = 1/2, rise
/// from ~0 on the left to ~1 on the right, and are monotone after an
/// isotonic projection of the time-averaged shape.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    /// Front speed from a linear fit of the anchor position over the
    /// trailing half of the run. Positive for an expanding excited region.
    pub c: f64,
    /// Relative standard error of the speed fit.
    pub speed_rel_err: f64,
    /// Profile values on a centered z grid.
    pub u: GridField,
}

impl WaveProfile {
    /// Shape and range checks: monotone within 1e-4 and settled at both ends.
    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::NoWave("fitted speed is not finite".into()));
        }
        let vals = self.u.values();
        let mut worst_drop = 0.0f64;
        for j in 1..vals.len() {
            worst_drop = worst_drop.max(vals[j - 1] - vals[j]);
        }
        if worst_drop > 1e-4 {
            return Err(Error::NoWave(format!(
                "profile not monotone: max decrease {worst_drop:.2e}"
            )));
        }
        if vals[0] > 0.05 {
            return Err(Error::NoWave(format!(
                "left end did not settle near 0: U = {:.3}",
                vals[0]
            )));
        }
        let right = *vals.last().expect("grid is nonempty");
        if right < 0.95 {
            return Err(Error::NoWave(format!(
                "right end did not settle near 1: U = {right:.3}"
            )));
        }
        Ok(())
    }

    /// Profile value at z, extended by its end values outside the grid.
    pub fn value_at(&self, z: f64) -> f64 {
        let vals = self.u.values();
        lerp_ext(self.u.grid(), vals, z, vals[0], vals[vals.len() - 1])
    }

    /// Smallest z with U(z) >= level, by linear interpolation.
    pub fn level_crossing(&self, level: f64) -> Result<f64> {
        let g = self.u.grid();
        let vals = self.u.values();
        let j = vals
            .iter()
            .position(|&v| v >= level)
            .ok_or(Error::NoCrossing(level))?;
        if j == 0 {
            return Ok(g.node(0));
        }
        let (a, b) = (vals[j - 1], vals[j]);
        if b > a {
            Ok(g.node(j - 1) + g.dx() * (level - a) / (b - a))
        } else {
            Ok(g.node(j))
        }
    }
}

/// Extracts the traveling front of the expanding excited region by running
/// the evolution from a wide plateau at height 1, fitting the anchor
/// position over the trailing half of the run, and averaging the recentred
/// front shape over the same window. Needs a kernel with a finite first
/// moment; heavy-tailed kernels accelerate and have no coherent front.
pub fn extract_profile(k: &Kernel, f: &Nonlinearity, g: Grid) -> Result<WaveProfile> {
    extract_profile_side(k, f, g, true)
}

fn no_wave(msg: impl Into<String>) -> Error {
    Error::NoWave(msg.into())
}

/// Position of the left edge of the excited region: smallest x with
/// u(x) >= level, interpolated.
fn left_front(u: &GridField, level: f64) -> Result<f64> {
    let g = u.grid();
    let vals = u.values();
    let j = vals
        .iter()
        .position(|&v| v >= level)
        .ok_or(Error::NoCrossing(level))?;
    if j == 0 {
        return Ok(g.node(0));
    }
    let (a, b) = (vals[j - 1], vals[j]);
    if b > a {
        Ok(g.node(j - 1) + g.dx() * (level - a) / (b - a))
    } else {
        Ok(g.node(j))
    }
}

fn anchor_of(u: &GridField, level: f64, right: bool) -> Result<f64> {
    if right {
        front_position(u, level)
    } else {
        left_front(u, level)
    }
}

/// Least-squares line fit; returns (slope, relative standard error of the
/// slope). A frozen trajectory gives 0/0 and therefore a NaN relative error.
fn fit_line(ts: &[f64], ps: &[f64]) -> (f64, f64) {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let pm = ps.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&t, &p) in ts.iter().zip(ps.iter()) {
        sxx += (t - tm) * (t - tm);
        sxy += (t - tm) * (p - pm);
    }
    let slope = sxy / sxx;
    let icept = pm - slope * tm;
    let mut ss_res = 0.0;
    for (&t, &p) in ts.iter().zip(ps.iter()) {
        let r = p - icept - slope * t;
        ss_res += r * r;
    }
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, se / slope.abs())
}

fn extract_profile_side(
    k: &Kernel,
    f: &Nonlinearity,
    g: Grid,
    right_front: bool,
) -> Result<WaveProfile> {
    let x_max = g.half_extent();
    let kd = discretize(k, g)?;
    let mut engine = ConvEngine::with_base(&kd.field);
    let u0 = initial_plateau(f.theta(), 1.0 - f.theta(), 0.2 * x_max, g)?;
    let dt = 0.5 / (1.0 + f.lipschitz());
    let every = (0.5 / dt).ceil() as usize;
    let sample_dt = every as f64 * dt;
    let t_cap = 400.0;
    let stop_front = 0.7 * x_max;
    let level = 0.5;

    // Pass 1: track the anchor until it nears the window edge or the time
    // cap. Losing the crossing means the state decayed, hence no front.
    let mut u = u0.clone();
    let mut scratch = GridField::zeros(g);
    let mut anchors = vec![anchor_of(&u, level, right_front)?];
    loop {
        if anchors.len() as f64 * sample_dt > t_cap {
            break;
        }
        for _ in 0..every {
            step_with(&mut engine, &u, dt, f, &mut scratch)?;
            std::mem::swap(&mut u, &mut scratch);
        }
        let p = anchor_of(&u, level, right_front)
            .map_err(|_| no_wave("the excited region decayed before a front settled"))?;
        anchors.push(p);
        if p.abs() >= stop_front {
            break;
        }
    }
    let s_total = anchors.len();
    if s_total < 12 {
        return Err(no_wave(
            "too few samples before the front reached the window edge",
        ));
    }

    // Speed fit over the trailing half, in the rightward mirror coordinate
    // so both sides report the same positive speed.
    let half = s_total / 2;
    let ts: Vec<f64> = (half..s_total).map(|i| i as f64 * sample_dt).collect();
    let ps: Vec<f64> = anchors[half..]
        .iter()
        .map(|&p| if right_front { p } else { -p })
        .collect();
    let span = ps.last().expect("nonempty") - ps.first().expect("nonempty");
    if span.abs() < 5.0 * g.dx() {
        return Err(no_wave(
            "front moved less than five cells over the fit window; speed indistinguishable from zero",
        ));
    }
    let (c, rel_err) = fit_line(&ts, &ps);
    if !(rel_err <= 0.1) {
        return Err(no_wave(format!(
            "speed fit relative error {rel_err:.2} exceeds 10%; front not settled"
        )));
    }
    if c <= 0.0 {
        return Err(no_wave(format!("front recedes: fitted speed {c:.3e}")));
    }

    // Pass 2: replay the same trajectory, averaging the shape around the
    // recorded anchors over the trailing half. The profile coordinate points
    // from the unexcited side (z < 0) into the excited side (z > 0).
    let z_half = 0.3 * x_max;
    let nz = (((2.0 * z_half / g.dx()).round() as usize).clamp(64, 2048) / 2) * 2;
    let zg = Grid::new(z_half, nz)?;
    let mut u = u0;
    let mut acc = vec![0.0f64; nz];
    for (i, &p) in anchors.iter().enumerate().skip(1) {
        for _ in 0..every {
            step_with(&mut engine, &u, dt, f, &mut scratch)?;
            std::mem::swap(&mut u, &mut scratch);
        }
        if i >= half {
            for (j, a) in acc.iter_mut().enumerate() {
                let z = zg.node(j);
                let x = if right_front { p - z } else { p + z };
                *a += u.interp(x);
            }
        }
    }
    let m = (s_total - half) as f64;
    for a in &mut acc {
        *a /= m;
    }

    // Monotone projection, then recentre so that U(0) = 1/2 exactly.
    let mono = isotonic(&acc);
    let cross = {
        let field = GridField::from_values(zg, mono.clone())?;
        let w = WaveProfile { c, speed_rel_err: rel_err, u: field };
        w.level_crossing(0.5)
            .map_err(|_| no_wave("averaged shape never reaches level 1/2"))?
    };
    let vals: Vec<f64> = (0..nz)
        .map(|j| {
            lerp_ext(zg, &mono, zg.node(j) + cross, mono[0], mono[nz - 1]).clamp(0.0, 1.0)
        })
        .collect();
    let w = WaveProfile {
        c,
        speed_rel_err: rel_err,
        u: GridField::from_values(zg, vals)?,
    };
    w.validate()?;
    Ok(w)
}

/// Pool-adjacent-violators projection onto nondecreasing sequences.
fn isotonic(vals: &[f64]) -> Vec<f64> {
    let mut level: Vec<f64> = Vec::with_capacity(vals.len());
    let mut count: Vec<usize> = Vec::with_capacity(vals.len());
    for &v in vals {
        let mut lv = v;
        let mut ct = 1usize;
        while let Some(&prev) = level.last() {
            if prev <= lv {
                break;
            }
            let pc = count.pop().expect("stacks stay in sync");
            let pv = level.pop().expect("stacks stay in sync");
            lv = (pv * pc as f64 + lv * ct as f64) / (pc + ct) as f64;
            ct += pc;
        }
        level.push(lv);
        count.push(ct);
    }
    let mut out = Vec::with_capacity(vals.len());
    for (lv, ct) in level.iter().zip(count.iter()) {
        out.extend(std::iter::repeat(*lv).take(*ct));
    }
    out
}

/// Linear interpolation with caller-chosen constant extension on each side.
fn lerp_ext(g: Grid, vals: &[f64], z: f64, left: f64, right: f64) -> f64 {
    let pos = (z + g.half_extent()) / g.dx();
    if pos <= 0.0 {
        return left;
    }
    if pos >= (vals.len() - 1) as f64 {
        return right;
    }
    let j = pos.floor() as usize;
    let t = pos - j as f64;
    vals[j] * (1.0 - t) + vals[j + 1] * t
}

fn centered_diff(vals: &[f64], dz: f64) -> Vec<f64> {
    let n = vals.len();
    let mut d = vec![0.0; n];
    for j in 1..n - 1 {
        d[j] = (vals[j + 1] - vals[j - 1]) / (2.0 * dz);
    }
    d[0] = (vals[1] - vals[0]) / dz;
    d[n - 1] = (vals[n - 1] - vals[n - 2]) / dz;
    d
}

/// Sup-norm of J*U - U - cU' + f(U) over the central 80% of the profile
/// grid. The convolution is a direct quadrature against the kernel density
/// with the profile extended by its end values; what the grid cannot see is
/// folded in through the kernel's exact tail masses.
pub fn profile_residual(k: &Kernel, f: &Nonlinearity, w: &WaveProfile) -> f64 {
    let g = w.u.grid();
    let n = g.len();
    let dz = g.dx();
    let z_max = g.half_extent();
    let vals = w.u.values();
    let u_left = vals[0];
    let u_right = vals[n - 1];
    let du = centered_diff(vals, dz);
    let lo = n / 10;
    let hi = n - n / 10;
    let mut worst = 0.0f64;
    for i in lo..hi {
        let zi = g.node(i);
        let mut conv = 0.0;
        for (j, &v) in vals.iter().enumerate() {
            conv += k.eval(zi - g.node(j)) * v;
        }
        conv *= dz;
        // u(z) = u_right for z > z_max and u_left for z < -z_max.
        conv += u_right * 0.5 * k.tail_mass_1(z_max - zi);
        conv += u_left * 0.5 * k.tail_mass_1(z_max + zi);
        let r = conv - vals[i] - w.c * du[i] + f.eval_extended(vals[i]);
        worst = worst.max(r.abs());
    }
    worst
}

/// Integral of U over the left half and of 1 - U over the right half of the
/// profile grid, each extended beyond the window by a fitted exponential
/// tail. Finiteness of these margins is what licenses the shift budget of
/// the sub-solution construction.
pub fn integrability_margins(w: &WaveProfile) -> (f64, f64) {
    let g = w.u.grid();
    let n = g.len();
    let dz = g.dx();
    let vals = w.u.values();
    // The origin node belongs to both halves at half weight, so reflecting
    // the profile swaps the two readings exactly.
    let mid = n / 2;
    let left_sum: f64 =
        (vals[..mid].iter().sum::<f64>() + 0.5 * vals[mid]) * dz;
    let right_sum: f64 = (0.5 * (1.0 - vals[mid])
        + vals[mid + 1..].iter().map(|v| 1.0 - v).sum::<f64>())
        * dz;

    // Log-linear fit on an outer band; a failed fit contributes nothing,
    // which keeps the margins finite and is conservative for the swap test.
    let band: Vec<(f64, f64)> = (n / 20..n / 8)
        .filter(|&j| vals[j] > 1e-14)
        .map(|j| (g.node(j), vals[j].ln()))
        .collect();
    let left_tail = tail_extrapolation(&band, vals[0]);
    let band: Vec<(f64, f64)> = (n - n / 8..n - n / 20)
        .filter(|&j| 1.0 - vals[j] > 1e-14)
        .map(|j| (-g.node(j), (1.0 - vals[j]).ln()))
        .collect();
    let right_tail = tail_extrapolation(&band, 1.0 - vals[n - 1]);
    (left_sum + left_tail, right_sum + right_tail)
}

/// Mass beyond the window edge of an exponential fitted to (z, ln v) pairs:
/// edge value divided by the fitted decay rate.
fn tail_extrapolation(band: &[(f64, f64)], edge_value: f64) -> f64 {
    if band.len() < 4 || edge_value <= 0.0 {
        return 0.0;
    }
    let zs: Vec<f64> = band.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = band.iter().map(|p| p.1).collect();
    let (rate, _) = fit_line(&zs, &ls);
    if rate > 1e-9 {
        edge_value / rate
    } else {
        0.0
    }
}

/// Everything needed to evaluate the comparison sub-solution
/// u(t, x) = U(x + ct - xi(t)) + U(-x + ct - xi(t)) - 1 - q(t).
#[derive(Debug, Clone, Serialize)]
pub struct SubsolutionParams {
    pub q0: f64,
    pub q1: f64,
    /// Decay rate of the reaction against downward shifts near u = 1 and
    /// u = 0: f(u - s) - f(u) >= mu * s on both bands for s up to q1.
    pub mu: f64,
    /// Half-width of the bands around 0 and 1 on which `mu` is certified.
    pub delta: f64,
    /// Linear overbound slope: f(u) <= b (1 - u) on [0, 1].
    pub b: f64,
    pub xi0: f64,
    pub s0: f64,
    /// Closed-form cap on the total shift eta(t).
    pub eta0: f64,
    /// Front speed inherited from the profile.
    pub c: f64,
    /// Minimum profile slope over the middle band {delta <= U <= 1 - delta}.
    pub vartheta: f64,
    /// Lipschitz constant of the reaction on the range the middle band visits.
    pub lip_mid: f64,
    t_max: f64,
    q_tab: Vec<f64>,
    eta_tab: Vec<f64>,
    h_tab: Vec<f64>,
}

impl SubsolutionParams {
    fn lerp_tab(&self, tab: &[f64], t: f64) -> f64 {
        let nt = tab.len();
        let pos = (t / self.t_max) * (nt - 1) as f64;
        if pos <= 0.0 {
            return tab[0];
        }
        if pos >= (nt - 1) as f64 {
            return tab[nt - 1];
        }
        let j = pos.floor() as usize;
        let s = pos - j as f64;
        tab[j] * (1.0 - s) + tab[j + 1] * s
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.lerp_tab(&self.q_tab, t)
    }

    /// 1 - U(ct + s0), the lag of the front behind its pinned right tail.
    pub fn h_at(&self, t: f64) -> f64 {
        self.lerp_tab(&self.h_tab, t)
    }

    /// q'(t) through the defining balance law, not a difference quotient.
    pub fn q_prime_at(&self, t: f64) -> f64 {
        -self.mu * self.q_at(t) + self.b * self.h_at(t)
    }

    pub fn eta_at(&self, t: f64) -> f64 {
        self.lerp_tab(&self.eta_tab, t)
    }

    pub fn eta_prime_at(&self, t: f64) -> f64 {
        (self.lip_mid * self.h_at(t) + (self.lip_mid + self.mu) * self.q_at(t)) / self.vartheta
    }

    pub fn xi_at(&self, t: f64) -> f64 {
        self.xi0 + self.eta_at(t)
    }

    /// End of the tabulated horizon; evaluations beyond it clamp.
    pub fn horizon(&self) -> f64 {
        self.t_max
    }

    pub fn table(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.q_tab, &self.eta_tab, &self.h_tab)
    }
}

/// Optional overrides for the construction; `None` fields use the defaults
/// (q0 and q1 at the 25% and 75% points of (1 - alpha, 1 - theta)).
#[derive(Debug, Clone, Default)]
pub struct SubsolutionOverrides {
    pub q0: Option<f64>,
    pub q1: Option<f64>,
    pub t_max: Option<f64>,
    pub tab_len: Option<usize>,
}

/// Worst reaction decay rate against downward shifts, over u in [lo, hi]
/// and shift sizes up to s_max: min of (f(u - s) - f(u)) / s on a lattice,
/// including the s -> 0 limit -f'(u).
fn band_rate(f: &Nonlinearity, lo: f64, hi: f64, s_max: f64) -> f64 {
    let nu = 61;
    let ns = 121;
    let mut worst = f64::INFINITY;
    for iu in 0..nu {
        let u = lo + (hi - lo) * iu as f64 / (nu - 1) as f64;
        let d = -(f.eval_extended(u + 5e-7) - f.eval_extended(u - 5e-7)) / 1e-6;
        worst = worst.min(d);
        for is in 1..=ns {
            let s = s_max * is as f64 / ns as f64;
            worst = worst.min((f.eval_extended(u - s) - f.eval_extended(u)) / s);
        }
    }
    worst
}

/// Smallest slope b with f(u) <= b (1 - u) on [0, 1], padded for lattice
/// slack. Padding upward is safe: it only makes q(t) larger.
fn linear_overbound(f: &Nonlinearity) -> f64 {
    let n = 8192;
    let mut worst = 0.0f64;
    for j in 0..n {
        let u = j as f64 / n as f64;
        worst = worst.max(f.eval_extended(u) / (1.0 - u));
    }
    worst = worst.max(f.eval_extended(1.0 - 1e-6) / 1e-6);
    worst * 1.0001 + 1e-12
}

/// Builds the comparison sub-solution for a plateau of height alpha from a
/// measured rightward front. Selects the band (mu, delta) by maximizing mu
/// over a ladder of band widths, the overbound slope b, and the pinning
/// offset s0; then tabulates q(t) and the shift eta(t) and caps the total
/// shift by the closed-form eta0.
pub fn build_subsolution(
    w: &WaveProfile,
    f: &Nonlinearity,
    alpha: f64,
    overrides: SubsolutionOverrides,
) -> Result<SubsolutionParams> {
    w.validate()?;
    let theta = f.theta();
    if !(alpha > theta && alpha <= 1.0) {
        return Err(Error::BadLevels(format!(
            "plateau height {alpha} must lie in (theta, 1] = ({theta}, 1]"
        )));
    }
    if w.c <= 0.0 {
        return Err(Error::ConstructionFailed(format!(
            "needs a rightward front, got speed {:.3e}",
            w.c
        )));
    }
    let q0 = overrides.q0.unwrap_or(1.0 - alpha + 0.25 * (alpha - theta));
    let q1 = overrides.q1.unwrap_or(1.0 - alpha + 0.75 * (alpha - theta));
    if !(1.0 - alpha < q0 && q0 < q1 && q1 < 1.0 - theta) {
        return Err(Error::BadLevels(format!(
            "need 1 - alpha < q0 < q1 < 1 - theta, got q0 = {q0}, q1 = {q1}"
        )));
    }

    // Band search: the rate must hold both near u = 1 (where the shifted
    // front sits) and near u = 0 (ahead of it). The lattice minimum is
    // shaved by 0.1% to cover curvature between lattice nodes.
    let mut mu = 0.0f64;
    let mut delta = 0.0f64;
    for j in 1..=30 {
        let d = 0.01 * j as f64;
        let r = band_rate(f, 1.0 - d, 1.0, q1).min(band_rate(f, 0.0, d, q1));
        if r > mu {
            mu = r;
            delta = d;
        }
    }
    if mu <= 0.0 {
        return Err(Error::ConstructionFailed(
            "no decay rate mu > 0: f(u - s) - f(u) >= mu s fails near u = 1 \
             for every band width on the ladder"
                .into(),
        ));
    }
    mu *= 0.999;

    let b = linear_overbound(f);

    // Middle band geometry. The index range is widened by one node on each
    // side so interpolated slopes inside the band never undercut vartheta.
    let g = w.u.grid();
    let vals = w.u.values();
    let n = g.len();
    let du = centered_diff(vals, g.dx());
    let first = vals.iter().position(|&v| v >= delta);
    let last = vals.iter().rposition(|&v| v <= 1.0 - delta);
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::ConstructionFailed(format!(
            "middle band {delta} <= U <= {} is empty on the profile grid",
            1.0 - delta
        )));
    };
    let a = first.saturating_sub(1).max(1);
    let z = (last + 1).min(n - 2);
    if a > z {
        return Err(Error::ConstructionFailed(
            "middle band collapsed to a single cell".into(),
        ));
    }
    let vartheta = du[a..=z].iter().cloned().fold(f64::INFINITY, f64::min);
    if vartheta <= 0.0 {
        return Err(Error::ConstructionFailed(format!(
            "profile slope vanishes on the middle band (min {vartheta:.2e})"
        )));
    }

    // Lipschitz constant of f on the range the middle case visits.
    let lo_u = delta - q1;
    let hi_u = 1.0 - delta;
    let m = 4001;
    let mut lip_mid = 0.0f64;
    for j in 0..m {
        let u = lo_u + (hi_u - lo_u) * j as f64 / (m - 1) as f64;
        let d = (f.eval_extended(u + 5e-7) - f.eval_extended(u - 5e-7)) / 1e-6;
        lip_mid = lip_mid.max(d.abs());
    }

    // Pinning offset: the right tail at s0 must leave room for the full
    // relaxation budget of q.
    let need = (q1 - q0) / (1.0 + b / mu);
    let mut s0 = None;
    for j in 0..n {
        let zj = g.node(j);
        if zj > 0.0 && 1.0 - vals[j] <= need {
            s0 = Some(zj);
            break;
        }
    }
    let Some(s0) = s0 else {
        return Err(Error::ConstructionFailed(format!(
            "no s0 on the profile grid satisfies (1 + b/mu)(1 - U(s0)) + q0 <= q1; \
             needs 1 - U <= {need:.3e}, best available {:.3e}",
            1.0 - vals[n - 1]
        )));
    };

    // Tail weight ahead of the front, with its off-grid extrapolation; this
    // is the integral that keeps the total shift finite.
    let (_, i1) = integrability_margins(w);

    let c = w.c;
    let z_max = g.half_extent();
    let t_max = overrides
        .t_max
        .unwrap_or((2.0 * (z_max - s0) / c).max(20.0 / mu).max(50.0));
    let nt = overrides.tab_len.unwrap_or(4096).max(16);
    let dt = t_max / (nt - 1) as f64;

    let h_tab: Vec<f64> = (0..nt)
        .map(|i| 1.0 - w.value_at(c * (i as f64 * dt) + s0))
        .collect();

    // g' = -mu g + h by an exponential midpoint rule, then q = q0 e^{-mu t}
    // + b g and the shift rate vartheta eta' = lip_mid h + (lip_mid + mu) q.
    let decay = (-mu * dt).exp();
    let half_decay = (-mu * dt * 0.5).exp();
    let mut g_tab = vec![0.0f64; nt];
    for i in 1..nt {
        let tm = (i as f64 - 0.5) * dt;
        let h_mid = 1.0 - w.value_at(c * tm + s0);
        g_tab[i] = g_tab[i - 1] * decay + dt * half_decay * h_mid;
    }
    let q_tab: Vec<f64> = (0..nt)
        .map(|i| q0 * (-mu * i as f64 * dt).exp() + b * g_tab[i])
        .collect();
    let rate = |h: f64, q: f64| (lip_mid * h + (lip_mid + mu) * q) / vartheta;
    let mut eta_tab = vec![0.0f64; nt];
    for i in 1..nt {
        let r0 = rate(h_tab[i - 1], q_tab[i - 1]);
        let r1 = rate(h_tab[i], q_tab[i]);
        eta_tab[i] = eta_tab[i - 1] + 0.5 * dt * (r0 + r1);
    }

    let eta0 = (lip_mid * i1 / c + (lip_mid + mu) * (q0 / mu + b * i1 / (c * mu))) / vartheta;
    let eta_end = *eta_tab.last().expect("tab is nonempty");
    if eta_end > eta0 * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::ConstructionFailed(format!(
            "tabulated shift eta({t_max:.1}) = {eta_end:.3e} exceeds its cap eta0 = {eta0:.3e}"
        )));
    }
    let xi0 = -(s0 + eta0);

    Ok(SubsolutionParams {
        q0,
        q1,
        mu,
        delta,
        b,
        xi0,
        s0,
        eta0,
        c,
        vartheta,
        lip_mid,
        t_max,
        q_tab,
        eta_tab,
        h_tab,
    })
}

/// The sub-solution itself. Symmetric in x and below 1 - q(t) everywhere.
pub fn subsolution_value(w: &WaveProfile, sp: &SubsolutionParams, t: f64, x: f64) -> f64 {
    let shift = sp.c * t - sp.xi_at(t);
    w.value_at(x + shift) + w.value_at(-x + shift) - 1.0 - sp.q_at(t)
}

struct ResidualSurvey {
    /// Band U_- >= 1 - delta (behind both fronts).
    high: (usize, f64),
    /// Band U_- <= delta (ahead of the near front).
    low: (usize, f64),
    /// Middle band, where the shift rate eta' does the work.
    mid: (usize, f64),
}

impl ResidualSurvey {
    fn overall(&self) -> f64 {
        self.high.1.max(self.low.1).max(self.mid.1)
    }
}

fn residual_survey(
    f: &Nonlinearity,
    w: &WaveProfile,
    sp: &SubsolutionParams,
    t_grid: &[f64],
    x_grid: &[f64],
) -> ResidualSurvey {
    let zg = w.u.grid();
    let vals = w.u.values();
    let du = centered_diff(vals, zg.dx());
    let mut high = (0usize, f64::NEG_INFINITY);
    let mut low = (0usize, f64::NEG_INFINITY);
    let mut mid = (0usize, f64::NEG_INFINITY);
    for &t in t_grid {
        let q = sp.q_at(t);
        let qp = sp.q_prime_at(t);
        let etap = sp.eta_prime_at(t);
        let shift = sp.c * t - sp.xi_at(t);
        for &x in x_grid {
            let zp = x + shift;
            let zm = -x + shift;
            let up = w.value_at(zp);
            let um = w.value_at(zm);
            let dup = lerp_ext(zg, &du, zp, 0.0, 0.0);
            let dum = lerp_ext(zg, &du, zm, 0.0, 0.0);
            let uu = up + um - 1.0 - q;
            let r = -etap * (dup + dum) + f.eval_extended(up) + f.eval_extended(um)
                - f.eval_extended(uu)
                - qp;
            let near = up.min(um);
            let slot = if near >= 1.0 - sp.delta {
                &mut high
            } else if near <= sp.delta {
                &mut low
            } else {
                &mut mid
            };
            slot.0 += 1;
            slot.1 = slot.1.max(r);
        }
    }
    ResidualSurvey { high, low, mid }
}

/// Max over the given grids of the evolution residual of the sub-solution,
/// with the time derivative taken through the chain rule on the tabulated
/// q, eta and the profile slope. A correct construction keeps this at or
/// below roundoff-plus-interpolation level; anything positive and large
/// means the certificate is broken.
pub fn check_subsolution(
    k: &Kernel,
    f: &Nonlinearity,
    w: &WaveProfile,
    sp: &SubsolutionParams,
    t_grid: &[f64],
    x_grid: &[f64],
) -> f64 {
    // The kernel's shape is already baked into the measured profile; the
    // argument pins the call to the pair that produced it.
    debug_assert!(k.tail_mass_1(0.0) > 0.9, "kernel must be a probability density");
    residual_survey(f, w, sp, t_grid, x_grid).overall()
}
