//! Convolution powers of a kernel on a grid and the jump part of the
//! fundamental solution.
//!
//! All convolutions are linear (zero extension outside the grid) computed by
//! FFT with 2x zero padding, so no wraparound can occur in a single product
//! of window-supported fields. Mass pushed past the window in a product is
//! measured exactly and accumulated per power as `mass_loss`; tail readings
//! add it back as a conservative correction, since mass beyond X is in
//! particular mass beyond any level L <= X.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::kernels::Kernel;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

/// Kernel sampled on a grid. The interior is renormalized to carry exactly
/// 1 - R1(X); the remaining tail mass is recorded, never folded back in.
#[derive(Clone, Debug)]
pub struct DiscreteKernel {
    pub field: GridField,
    pub tail_deficit: f64,
}

/// Largest analytic tail mass beyond the grid tolerated at discretization.
pub const MAX_TAIL_DEFICIT: f64 = 0.01;

pub fn discretize(k: &Kernel, grid: Grid) -> Result<DiscreteKernel> {
    let deficit = k.tail_mass_1(grid.half_extent());
    if deficit > MAX_TAIL_DEFICIT {
        return Err(Error::ExtentTooSmall(format!(
            "kernel {} leaves {deficit:.3e} mass beyond X={} (limit {MAX_TAIL_DEFICIT})",
            k.label(),
            grid.half_extent()
        )));
    }
    let mut field = GridField::from_fn(grid, |x| k.eval(x));
    let raw = field.mass();
    let scale = (1.0 - deficit) / raw;
    for v in field.values_mut() {
        *v *= scale;
    }
    Ok(DiscreteKernel { field, tail_deficit: deficit })
}

/// Shared FFT plans plus an optional cached kernel spectrum. One engine per
/// grid; cloning is cheap (plans are reference counted).
pub struct ConvEngine {
    grid: Grid,
    n2: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    khat: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    buf2: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Clone for ConvEngine {
    fn clone(&self) -> Self {
        ConvEngine {
            grid: self.grid,
            n2: self.n2,
            fft: self.fft.clone(),
            ifft: self.ifft.clone(),
            khat: self.khat.clone(),
            buf: vec![Complex::default(); self.n2],
            buf2: vec![Complex::default(); self.n2],
            scratch: vec![Complex::default(); self.scratch.len()],
        }
    }
}

impl ConvEngine {
    /// Engine with the spectrum of `base` cached as the fixed left factor.
    pub fn with_base(base: &GridField) -> Self {
        let grid = base.grid();
        let n2 = 2 * grid.len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n2);
        let ifft = planner.plan_fft_inverse(n2);
        let need = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        let mut eng = ConvEngine {
            grid,
            n2,
            fft,
            ifft,
            khat: vec![Complex::default(); n2],
            buf: vec![Complex::default(); n2],
            buf2: vec![Complex::default(); n2],
            scratch: vec![Complex::default(); need],
        };
        eng.load_padded(base.values());
        eng.fft.process_with_scratch(&mut eng.buf, &mut eng.scratch);
        eng.khat.copy_from_slice(&eng.buf);
        eng
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn load_padded(&mut self, values: &[f64]) {
        for (slot, v) in self.buf.iter_mut().zip(values) {
            *slot = Complex::new(*v, 0.0);
        }
        for slot in self.buf.iter_mut().skip(values.len()) {
            *slot = Complex::default();
        }
    }

    /// out = (base * u)(window), linear convolution with zero extension.
    /// Returns the mass that landed outside the window. Negative round-off
    /// is clamped to zero before the escape measurement.
    pub fn convolve_base(&mut self, u: &[f64], out: &mut [f64]) -> f64 {
        self.convolve_base_inner(u);
        self.extract_window(out, true)
    }

    /// out = (base * u)(window) without the nonnegativity clamp, for signed
    /// fields such as simulator states. Returns the signed out-of-window
    /// sum.
    pub fn convolve_signed(&mut self, u: &[f64], out: &mut [f64]) -> f64 {
        self.convolve_base_inner(u);
        self.extract_window(out, false)
    }

    fn convolve_base_inner(&mut self, u: &[f64]) {
        self.load_padded(u);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = self.grid.dx() / self.n2 as f64;
        for (slot, k) in self.buf.iter_mut().zip(&self.khat) {
            *slot = *slot * *k * scale;
        }
        self.ifft.process_with_scratch(&mut self.buf, &mut self.scratch);
    }

    /// out = (a * b)(window) for two window-supported fields.
    pub fn convolve_pair(&mut self, a: &[f64], b: &[f64], out: &mut [f64]) -> f64 {
        self.load_padded(a);
        std::mem::swap(&mut self.buf, &mut self.buf2);
        self.load_padded(b);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        std::mem::swap(&mut self.buf, &mut self.buf2);
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = self.grid.dx() / self.n2 as f64;
        for (slot, other) in self.buf.iter_mut().zip(&self.buf2) {
            *slot = *slot * *other * scale;
        }
        self.ifft.process_with_scratch(&mut self.buf, &mut self.scratch);
        self.extract_window(out, true)
    }

    /// The product of two length-n windows lives on 2n slots whose physical
    /// origin is -2X; window index j corresponds to slot j + n/2. The clamp
    /// flag zeroes negative values first: right for probability densities,
    /// where negatives are round-off, wrong for signed fields.
    fn extract_window(&mut self, out: &mut [f64], clamp: bool) -> f64 {
        let n = self.grid.len();
        let dx = self.grid.dx();
        if clamp {
            for slot in self.buf.iter_mut() {
                if slot.re < 0.0 {
                    slot.re = 0.0;
                }
            }
        }
        let mut escaped = 0.0;
        for (m, slot) in self.buf.iter().enumerate() {
            if m < n / 2 || m >= n / 2 + n {
                escaped += slot.re;
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.buf[j + n / 2].re;
        }
        escaped * dx
    }
}

/// Default cap on the largest convolution power a window may request.
pub const MAX_POWER: usize = 8192;

/// Convolution powers J^{*1} .. J^{*up_to} with per-power escaped mass.
pub struct ConvPowerSet {
    powers: Vec<GridField>,
    mass_loss: Vec<f64>,
}

impl ConvPowerSet {
    pub fn compute(base: &DiscreteKernel, up_to: usize) -> Result<Self> {
        if up_to == 0 || up_to > MAX_POWER {
            return Err(Error::Overflow(format!(
                "requested power window 1..={up_to} outside 1..={MAX_POWER}"
            )));
        }
        let grid = base.field.grid();
        let mut eng = ConvEngine::with_base(&base.field);
        let mut powers = Vec::with_capacity(up_to);
        let mut mass_loss = Vec::with_capacity(up_to);
        powers.push(base.field.clone());
        mass_loss.push(base.tail_deficit);
        let mut out = vec![0.0; grid.len()];
        for _ in 1..up_to {
            let prev = powers.last().unwrap();
            eng.convolve_base(prev.values(), &mut out);
            let f = GridField::from_values(grid, out.clone())?;
            mass_loss.push((1.0 - f.mass()).max(0.0));
            powers.push(f);
        }
        Ok(ConvPowerSet { powers, mass_loss })
    }

    pub fn max_power(&self) -> usize {
        self.powers.len()
    }

    pub fn power(&self, i: usize) -> Result<&GridField> {
        if i == 0 || i > self.powers.len() {
            return Err(Error::Overflow(format!(
                "power {i} outside computed window 1..={}",
                self.powers.len()
            )));
        }
        Ok(&self.powers[i - 1])
    }

    /// Total mass unaccounted for on the window at power i (discretization
    /// deficit plus everything pushed past +-X up to that power).
    pub fn mass_loss(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.mass_loss.len() {
            return Err(Error::Overflow(format!(
                "power {i} outside computed window 1..={}",
                self.mass_loss.len()
            )));
        }
        Ok(self.mass_loss[i - 1])
    }

    /// R_i(level) with the escaped-mass correction added in. Errors when the
    /// level exceeds X/2 or when the correction dominates the reading.
    pub fn tail_mass(&self, i: usize, level: f64) -> Result<f64> {
        let (on_grid, loss) = self.tail_mass_parts(i, level)?;
        let result = on_grid + loss;
        if loss > 0.1 * result && result > 0.0 {
            return Err(Error::ExtentTooSmall(format!(
                "escaped mass {loss:.3e} dominates tail reading {result:.3e} at power {i}, level {level}"
            )));
        }
        Ok(result)
    }

    /// (on-grid tail sum, escaped mass) without the domination guard. The
    /// first component alone is a lower estimate of R_i(level), the sum a
    /// conservative upper-leaning estimate.
    pub fn tail_mass_parts(&self, i: usize, level: f64) -> Result<(f64, f64)> {
        let p = self.power(i)?;
        let x = p.grid().half_extent();
        if level > 0.5 * x {
            return Err(Error::ExtentTooSmall(format!(
                "tail level {level} beyond half extent {x}/2"
            )));
        }
        if level < 0.0 {
            return Err(Error::BadLevels(format!("tail level must be >= 0, got {level}")));
        }
        Ok((p.tail_sum(level), self.mass_loss[i - 1]))
    }
}

/// Streaming alternative to `ConvPowerSet` for long chains: keeps only the
/// latest power and records, for each power, the window tail readings at a
/// fixed set of levels plus the cumulative geometric loss (discretization
/// deficit and measured FFT window escape, not arithmetic mass drift).
/// Memory stays O(n + levels * powers).
pub struct TailChain {
    eng: ConvEngine,
    field: GridField,
    out: Vec<f64>,
    deficit: f64,
    levels: Vec<f64>,
    lo: Vec<Vec<f64>>,
    loss: Vec<f64>,
}

impl TailChain {
    pub fn new(base: &DiscreteKernel, levels: &[f64]) -> Result<Self> {
        let grid = base.field.grid();
        for &level in levels {
            if !(0.0..=0.5 * grid.half_extent()).contains(&level) {
                return Err(Error::ExtentTooSmall(format!(
                    "tail level {level} outside [0, {}/2]",
                    grid.half_extent()
                )));
            }
        }
        let mut chain = TailChain {
            eng: ConvEngine::with_base(&base.field),
            field: base.field.clone(),
            out: vec![0.0; grid.len()],
            deficit: base.tail_deficit,
            levels: levels.to_vec(),
            lo: vec![Vec::new(); levels.len()],
            loss: Vec::new(),
        };
        chain.record(base.tail_deficit);
        Ok(chain)
    }

    fn record(&mut self, loss: f64) {
        for (readings, &level) in self.lo.iter_mut().zip(&self.levels) {
            readings.push(self.field.tail_sum(level));
        }
        self.loss.push(loss);
    }

    /// Largest power recorded so far; at least 1 by construction.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn extend(&mut self, up_to: usize) -> Result<()> {
        if up_to > MAX_POWER {
            return Err(Error::Overflow(format!(
                "requested power window 1..={up_to} outside 1..={MAX_POWER}"
            )));
        }
        while self.len() < up_to {
            let escaped = self.eng.convolve_base(self.field.values(), &mut self.out);
            self.field.values_mut().copy_from_slice(&self.out);
            let loss = self.loss.last().unwrap() + self.deficit + escaped;
            self.record(loss);
        }
        Ok(())
    }

    /// Window-only tail reading for power i at the level_idx-th level: a
    /// lower estimate of R_i(level).
    pub fn lo(&self, level_idx: usize, i: usize) -> f64 {
        self.lo[level_idx][i - 1]
    }

    /// Cumulative unseen mass at power i; lo + loss leans above R_i(level).
    pub fn loss(&self, i: usize) -> f64 {
        self.loss[i - 1]
    }

    pub fn hi(&self, level_idx: usize, i: usize) -> f64 {
        self.lo(level_idx, i) + self.loss(i)
    }
}

/// i-th convolution power by binary exponentiation of window-truncated
/// products (square-and-multiply on the field, FFT per product). The second
/// component is the accumulated geometric escape: discretization deficit plus
/// every product's measured out-of-window mass, so it tracks true mass beyond
/// +-X rather than arithmetic drift of the total.
pub fn conv_power_with_loss(base: &DiscreteKernel, i: usize) -> Result<(GridField, f64)> {
    if i == 0 || i > MAX_POWER {
        return Err(Error::Overflow(format!("power {i} outside 1..={MAX_POWER}")));
    }
    let grid = base.field.grid();
    let mut eng = ConvEngine::with_base(&base.field);
    let mut out = vec![0.0; grid.len()];
    let mut acc: Option<(Vec<f64>, f64)> = None;
    let mut square: Vec<f64> = base.field.values().to_vec();
    let mut d_sq = base.tail_deficit;
    let mut bits = i;
    loop {
        if bits & 1 == 1 {
            acc = Some(match acc {
                None => (square.clone(), d_sq),
                Some((a, d_a)) => {
                    let esc = eng.convolve_pair(&a, &square, &mut out);
                    (out.clone(), d_a + d_sq + esc)
                }
            });
        }
        bits >>= 1;
        if bits == 0 {
            break;
        }
        let esc = eng.convolve_pair(&square.clone(), &square, &mut out);
        square.copy_from_slice(&out);
        d_sq = 2.0 * d_sq + esc;
    }
    let (values, loss) = acc.expect("i >= 1");
    Ok((GridField::from_values(grid, values)?, loss))
}

pub fn conv_power(base: &DiscreteKernel, i: usize) -> Result<GridField> {
    conv_power_with_loss(base, i).map(|(f, _)| f)
}

/// Poisson(t) weight e^{-t} t^i / i!, in log space so large t is safe.
pub fn poisson_weight(t: f64, i: usize) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (-t + i as f64 * t.ln() - ln_gamma(i as f64 + 1.0)).exp()
}

/// Explicit bound e^{-t} sum_{i=1}^{m} t^i/i! <= e^{-t} m (e t / m)^m,
/// valid for m < t.
pub fn poisson_lower_block_bound(t: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    (-t + m.ln() + m * (1.0 + t.ln() - m.ln())).exp()
}

/// Explicit bound e^{-t} sum_{i=n}^{inf} t^i/i! <= e^{-t} (e t / n)^n n/(n - e t),
/// valid for n > e t.
pub fn poisson_upper_tail_bound(t: f64, n: usize) -> f64 {
    let nf = n as f64;
    let et = std::f64::consts::E * t;
    if nf <= et {
        return f64::INFINITY;
    }
    (-t + nf * (1.0 + t.ln() - nf.ln())).exp() * nf / (nf - et)
}

/// Smallest N > e t whose explicit Poisson tail bound is <= tol.
pub fn poisson_window(t: f64, tol: f64) -> (usize, f64) {
    let mut n = (std::f64::consts::E * t).ceil() as usize + 1;
    n = n.max(2);
    loop {
        let b = poisson_upper_tail_bound(t, n);
        if b <= tol || n > 10 * MAX_POWER {
            return (n, b);
        }
        n += 1;
    }
}

/// The jump part of the fundamental solution at time t:
/// psi(t, .) = e^{-t} sum_{i=1}^{N} (t^i / i!) J^{*i}, with N chosen so the
/// omitted Poisson tail is below `tol`.
pub struct PsiField {
    pub field: GridField,
    /// Largest convolution power summed.
    pub window: usize,
    /// Explicit bound on the omitted Poisson tail mass.
    pub remainder: f64,
    /// Poisson-weighted escaped mass over the summed powers.
    pub escaped: f64,
}

pub fn psi(k: &Kernel, t: f64, grid: Grid, tol: f64) -> Result<PsiField> {
    let base = discretize(k, grid)?;
    let (n, _) = poisson_window(t, tol);
    let powers = ConvPowerSet::compute(&base, n)?;
    psi_from_powers(&powers, t, tol)
}

pub fn psi_from_powers(powers: &ConvPowerSet, t: f64, tol: f64) -> Result<PsiField> {
    if !(t >= 0.0) {
        return Err(Error::BadLevels(format!("time must be >= 0, got {t}")));
    }
    let (n, remainder) = poisson_window(t, tol);
    if n > powers.max_power() {
        return Err(Error::Overflow(format!(
            "time {t} needs powers up to {n}, window holds {}",
            powers.max_power()
        )));
    }
    let grid = powers.power(1)?.grid();
    let mut field = GridField::zeros(grid);
    let mut escaped = 0.0;
    for i in 1..=n {
        let w = poisson_weight(t, i);
        if w == 0.0 {
            continue;
        }
        let p = powers.power(i)?;
        for (slot, v) in field.values_mut().iter_mut().zip(p.values()) {
            *slot += w * v;
        }
        escaped += w * powers.mass_loss(i)?;
    }
    Ok(PsiField { field, window: n, remainder, escaped })
}

/// u(t) = e^{-t} u0 + (psi(t) * u0), the action of the fundamental solution
/// of the linear part d/dt u = J*u - u on initial data u0 (zero extension).
pub fn apply_fundamental(k: &Kernel, t: f64, u0: &GridField, tol: f64) -> Result<GridField> {
    let p = psi(k, t, u0.grid(), tol)?;
    apply_psi(&p, t, u0)
}

pub fn apply_psi(p: &PsiField, t: f64, u0: &GridField) -> Result<GridField> {
    let grid = u0.grid();
    if grid != p.field.grid() {
        return Err(Error::InvalidKernel("psi grid does not match field grid".into()));
    }
    let mut eng = ConvEngine::with_base(&p.field);
    let mut out = vec![0.0; grid.len()];
    eng.convolve_base(u0.values(), &mut out);
    let decay = (-t).exp();
    for (o, v) in out.iter_mut().zip(u0.values()) {
        *o += decay * v;
    }
    GridField::from_values(grid, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;

    fn laplace_grid() -> (Kernel, Grid) {
        (Kernel::laplace(1.0).unwrap(), Grid::new(50.0, 4096).unwrap())
    }

    #[test]
    fn discretize_mass_and_deficit() {
        let (k, g) = laplace_grid();
        let d = discretize(&k, g).unwrap();
        assert!((d.tail_deficit - (-50.0f64).exp()).abs() < 1e-18);
        assert!((d.field.mass() - (1.0 - d.tail_deficit)).abs() < 1e-12);
        assert!(d.field.asymmetry() < 1e-15);
    }

    #[test]
    fn discretize_rejects_fat_tail_on_short_grid() {
        let k = Kernel::cauchy(1.0).unwrap();
        let g = Grid::new(50.0, 4096).unwrap();
        // R1(50) = (2/pi) atan(1/50) ~ 0.0127 > 0.01.
        assert!(matches!(discretize(&k, g), Err(Error::ExtentTooSmall(_))));
        let g_ok = Grid::new(100.0, 8192).unwrap();
        assert!(discretize(&k, g_ok).is_ok());
    }

    #[test]
    fn first_power_is_identity() {
        let (k, g) = laplace_grid();
        let d = discretize(&k, g).unwrap();
        let p1 = conv_power(&d, 1).unwrap();
        for (a, b) in p1.values().iter().zip(d.field.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fft_matches_direct_quadratic_convolution() {
        // O(n^2) oracle: c_j = dx * sum_k v_k v_m with m = j - k + n/2.
        let k = Kernel::laplace(1.0).unwrap();
        let g = Grid::new(30.0, 512).unwrap();
        let d = discretize(&k, g).unwrap();
        let n = g.len();
        let dx = g.dx();
        let v = d.field.values();
        let mut oracle = vec![0.0; n];
        for j in 0..n {
            let mut s = 0.0;
            for k_ in 0..n {
                let m = j as isize - k_ as isize + (n / 2) as isize;
                if (0..n as isize).contains(&m) {
                    s += v[k_] * v[m as usize];
                }
            }
            oracle[j] = s * dx;
        }
        let got = conv_power(&d, 2).unwrap();
        let sup = got
            .values()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 1e-9, "sup deviation {sup}");
    }

    #[test]
    fn binary_and_iterative_powers_agree() {
        let (k, g) = laplace_grid();
        let d = discretize(&k, g).unwrap();
        let set = ConvPowerSet::compute(&d, 5).unwrap();
        for i in [2usize, 3, 5] {
            let a = conv_power(&d, i).unwrap();
            let b = set.power(i).unwrap();
            let sup = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(sup < 1e-12, "power {i}: {sup}");
        }
    }

    #[test]
    fn gaussian_powers_add_variances() {
        let g = Grid::new(40.0, 4096).unwrap();
        let k1 = Kernel::gaussian(1.0).unwrap();
        let k2 = Kernel::gaussian(2.0).unwrap();
        let four = conv_power(&discretize(&k1, g).unwrap(), 4).unwrap();
        let direct = discretize(&k2, g).unwrap();
        let sup = four
            .values()
            .iter()
            .zip(direct.field.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 1e-6, "sup {sup}");
    }

    #[test]
    fn power_mass_is_multiplicative() {
        let (k, g) = laplace_grid();
        let d = discretize(&k, g).unwrap();
        let set = ConvPowerSet::compute(&d, 8).unwrap();
        let m1 = d.field.mass();
        for i in 1..=8usize {
            let mi = set.power(i).unwrap().mass();
            assert!(
                (mi - m1.powi(i as i32)).abs() <= 1e-8 * i as f64,
                "power {i}: {mi} vs {}",
                m1.powi(i as i32)
            );
        }
    }

    #[test]
    fn tail_of_powers_closed_forms() {
        // Gaussian: J^{*i} is a centered gaussian with variance i.
        let g = Grid::new(60.0, 8192).unwrap();
        let k = Kernel::gaussian(1.0).unwrap();
        let set = ConvPowerSet::compute(&discretize(&k, g).unwrap(), 4).unwrap();
        use statrs::function::erf::erfc;
        for (i, level) in [(2usize, 1.5f64), (4, 2.0)] {
            let exact = erfc(level / (2.0 * i as f64).sqrt());
            let got = set.tail_mass(i, level).unwrap();
            assert!((got - exact).abs() < 1e-5, "i={i}: {got} vs {exact}");
        }
        // Laplace 2-fold density is (1+|x|) e^{-|x|} / 4; its two-sided tail
        // integral is (2+L) e^{-L} / 2.
        let (k, g) = laplace_grid();
        let set = ConvPowerSet::compute(&discretize(&k, g).unwrap(), 2).unwrap();
        let level = 5.0f64;
        let exact = 0.5 * (2.0 + level) * (-level).exp();
        let got = set.tail_mass(2, level).unwrap();
        assert!((got - exact).abs() < 1e-5, "{got} vs {exact}");
    }

    #[test]
    fn tail_reading_guards() {
        let (k, g) = laplace_grid();
        let set = ConvPowerSet::compute(&discretize(&k, g).unwrap(), 2).unwrap();
        assert!(set.tail_mass(2, 26.0).is_err());
        assert!((set.tail_mass(1, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(set.power(3).is_err());
    }

    #[test]
    fn psi_mass_identity() {
        let (k, g) = laplace_grid();
        for t in [0.5, 1.0, 5.0] {
            let p = psi(&k, t, g, 1e-8).unwrap();
            let expect = 1.0 - (-t).exp();
            assert!(
                (p.field.mass() - expect).abs() <= 1e-8 + 1e-6,
                "t={t}: {} vs {expect}",
                p.field.mass()
            );
            assert!(p.field.asymmetry() < 1e-12);
        }
    }

    #[test]
    fn psi_tiny_time_is_tiny() {
        let (k, g) = laplace_grid();
        let p = psi(&k, 1e-8, g, 1e-12).unwrap();
        assert!(p.field.mass() <= 1e-7);
    }

    #[test]
    fn psi_matches_compound_poisson_monte_carlo() {
        // Oracle: S = X_1 + ... + X_N, N ~ Poisson(t) conditioned on N >= 1,
        // X_k iid gaussian. Density estimated by central bins.
        use rand::Rng;
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let k = Kernel::gaussian(1.0).unwrap();
        let g = Grid::new(60.0, 4096).unwrap();
        let t = 2.0;
        let p = psi(&k, t, g, 1e-10).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n_samples = 2_000_000usize;
        let h = 0.1;
        let centers = [0.0f64, 1.0, 2.0];
        let mut counts = [0usize; 3];
        let mut kept = 0usize;
        for _ in 0..n_samples {
            // Poisson by inversion; t is small so this is fast.
            let mut acc = (-t).exp();
            let u: f64 = rng.random();
            let mut cum = acc;
            let mut n_jumps = 0usize;
            while u > cum {
                n_jumps += 1;
                acc *= t / n_jumps as f64;
                cum += acc;
            }
            if n_jumps == 0 {
                continue;
            }
            kept += 1;
            let mut s = 0.0;
            for _ in 0..n_jumps {
                s += normal.sample(&mut rng);
            }
            for (c, cnt) in centers.iter().zip(counts.iter_mut()) {
                if (s - c).abs() <= 0.5 * h {
                    *cnt += 1;
                }
            }
        }
        assert!(kept > 0);
        for (c, cnt) in centers.iter().zip(counts) {
            let p_hat = cnt as f64 / n_samples as f64;
            let dens = p_hat / h;
            let se = (p_hat * (1.0 - p_hat) / n_samples as f64).sqrt() / h;
            let got = p.field.interp(*c);
            assert!(
                (got - dens).abs() <= 3.0 * se + 5e-4,
                "x={c}: field {got}, mc {dens}, se {se}"
            );
        }
    }

    #[test]
    fn fundamental_solution_preserves_constants_in_the_interior() {
        let (k, g) = laplace_grid();
        let u0 = GridField::from_fn(g, |_| 1.0);
        let ut = apply_fundamental(&k, 1.0, &u0, 1e-8).unwrap();
        for (j, x) in g.nodes().enumerate() {
            if x.abs() <= 25.0 {
                assert!((ut.values()[j] - 1.0).abs() < 1e-6, "at {x}: {}", ut.values()[j]);
            }
        }
    }

    #[test]
    fn fundamental_solution_semigroup_property() {
        let (k, g) = laplace_grid();
        let u0 = GridField::from_fn(g, |x| if x.abs() < 3.0 { 0.8 } else { 0.0 });
        let tol = 1e-8;
        let one = apply_fundamental(&k, 2.0, &u0, tol).unwrap();
        let two = apply_fundamental(&k, 1.25, &one, tol).unwrap();
        let direct = apply_fundamental(&k, 3.25, &u0, tol).unwrap();
        let sup = two
            .values()
            .iter()
            .zip(direct.values())
            .enumerate()
            .filter(|(j, _)| g.node(*j).abs() < 25.0)
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 2.0 * tol + 1e-9, "semigroup deviation {sup}");
    }

    #[test]
    fn fundamental_solution_is_monotone_and_symmetric() {
        let (k, g) = laplace_grid();
        let lo = GridField::from_fn(g, |x| if x.abs() < 2.0 { 0.3 } else { 0.0 });
        let hi = GridField::from_fn(g, |x| if x.abs() < 2.5 { 0.4 } else { 0.0 });
        let a = apply_fundamental(&k, 1.5, &lo, 1e-8).unwrap();
        let b = apply_fundamental(&k, 1.5, &hi, 1e-8).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(x <= &(y + 1e-12));
        }
        assert!(a.asymmetry() < 1e-12);
    }

    #[test]
    fn tail_chain_matches_power_set() {
        let (k, g) = laplace_grid();
        let d = discretize(&k, g).unwrap();
        let set = ConvPowerSet::compute(&d, 6).unwrap();
        let mut chain = TailChain::new(&d, &[0.0, 3.0]).unwrap();
        chain.extend(6).unwrap();
        for i in 1..=6usize {
            let (lo, _) = set.tail_mass_parts(i, 3.0).unwrap();
            assert!((chain.lo(1, i) - lo).abs() < 1e-12, "power {i}");
            // Geometric loss tracking vs mass-deficit tracking agree up to
            // arithmetic drift.
            assert!(
                (chain.loss(i) - set.mass_loss(i).unwrap()).abs() < 1e-10,
                "power {i}: {} vs {}",
                chain.loss(i),
                set.mass_loss(i).unwrap()
            );
        }
        assert!(TailChain::new(&d, &[30.0]).is_err());
    }

    #[test]
    fn poisson_window_bounds_hold() {
        for &t in &[0.5, 5.0, 40.0] {
            let (n, bound) = poisson_window(t, 1e-9);
            assert!(n as f64 > std::f64::consts::E * t);
            assert!(bound <= 1e-9);
            // Direct tail sum dominates by construction of the bound.
            let tail: f64 = (n..n + 2000).map(|i| poisson_weight(t, i)).sum();
            assert!(tail <= bound, "t={t}: tail {tail} bound {bound}");
        }
    }
}
