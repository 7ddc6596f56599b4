//! Randomized invariants over the public surface: kernel symmetry and
//! transform bounds, convolution mass accounting, order preservation of the
//! time stepper, window selection, and scaling-fit round trips. Case counts
//! are kept small on the FFT-backed properties; the scalar ones run wide.

use proptest::prelude::*;

use nlthresh_core::convops::{discretize, poisson_upper_tail_bound, poisson_weight, psi, ConvEngine};
use nlthresh_core::criteria::{propagation_t, series_window, Nonlinearity};
use nlthresh_core::grid::{Grid, GridField};
use nlthresh_core::kernels::Kernel;
use nlthresh_core::simulator::{initial_plateau, step_with};
use nlthresh_core::thresholds::{fit_scaling, ScalingModel};

fn kernel_strategy() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.3f64..3.0).prop_map(|s| Kernel::gaussian(s).expect("positive width")),
        (0.3f64..3.0).prop_map(|r| Kernel::laplace(r).expect("positive rate")),
        (0.3f64..3.0).prop_map(|s| Kernel::cauchy(s).expect("positive scale")),
        ((2.1f64..4.0), (0.5f64..2.0))
            .prop_map(|(a, x0)| Kernel::power_law(a, x0).expect("exponent above 2")),
    ]
}

/// Same families restricted so the heavy tails keep under the 1% deficit
/// guard on the small X = 40 window the FFT properties run on.
fn window_safe_kernel_strategy() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.3f64..2.0).prop_map(|s| Kernel::gaussian(s).expect("positive width")),
        (0.3f64..2.0).prop_map(|r| Kernel::laplace(r).expect("positive rate")),
        (0.3f64..0.55).prop_map(|s| Kernel::cauchy(s).expect("positive scale")),
        ((2.5f64..4.0), (0.5f64..1.0))
            .prop_map(|(a, x0)| Kernel::power_law(a, x0).expect("exponent above 2")),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_even_nonnegative_with_bounded_transform(
        k in kernel_strategy(),
        x in 0.0f64..40.0,
        xi in 1e-3f64..20.0,
    ) {
        let (right, left) = (k.eval(x), k.eval(-x));
        prop_assert!(right >= 0.0);
        prop_assert!((right - left).abs() <= 1e-15 * right.max(1e-300));
        let omf = k.one_minus_fourier(xi);
        prop_assert!(omf >= 0.0, "transform above 1 at xi = {xi}: 1 - j^ = {omf}");
        prop_assert!(omf <= 2.0 + 1e-12, "transform below -1 at xi = {xi}: 1 - j^ = {omf}");
        prop_assert!(k.one_minus_fourier(0.0).abs() <= 1e-12);
    }

    #[test]
    fn tail_mass_decreases_from_one_to_zero(
        k in kernel_strategy(),
        l in 0.0f64..30.0,
        step in 0.1f64..10.0,
    ) {
        let near = k.tail_mass_1(l);
        let far = k.tail_mass_1(l + step);
        prop_assert!((0.0..=1.0).contains(&near));
        prop_assert!(far <= near + 1e-12, "tail grew from {near} to {far}");
    }

    #[test]
    fn poisson_weights_form_a_distribution_and_the_tail_bound_covers(
        t in 0.1f64..80.0,
        n_extra in 1usize..40,
    ) {
        let n = (std::f64::consts::E * t).ceil() as usize + n_extra;
        let head: f64 = (0..n).map(|i| poisson_weight(t, i)).sum();
        prop_assert!(head <= 1.0 + 1e-12);
        let bound = poisson_upper_tail_bound(t, n);
        prop_assert!(bound.is_finite() && bound >= 0.0);
        prop_assert!(head + bound >= 1.0 - 1e-12, "window plus tail bound only covers {}", head + bound);
    }

    #[test]
    fn series_window_sits_strictly_inside_the_admissible_range(
        r in 0.05f64..0.95,
        t in 5.0f64..100.0,
    ) {
        let (m, n, gamma) = series_window(t, r);
        prop_assert!(gamma > 0.0 && gamma < 1.0);
        prop_assert!(gamma * (1.0 - gamma.ln()) < 1.0 - r, "gamma = {gamma} not strict at r = {r}");
        prop_assert_eq!(m, (gamma * t).floor() as usize);
        prop_assert_eq!(n, (3.0 * t).floor() as usize + 1);
        prop_assert!((n as f64) > std::f64::consts::E * t);
    }

    #[test]
    fn reaching_time_inverts_the_tilted_growth(
        alpha in 0.05f64..0.45,
        frac in 0.01f64..0.99,
        r in 0.05f64..1.0,
    ) {
        let eps = frac * 2.0 * alpha;
        let t = propagation_t(eps, alpha, r).expect("eps below 2 alpha");
        prop_assert!(t >= 0.0);
        let grown = 0.5 * eps * (r * t).exp();
        prop_assert!((grown - alpha).abs() <= 1e-12 * alpha);
    }

    #[test]
    fn power_fit_round_trips_synthetic_thresholds(
        expo in 0.3f64..2.5,
        amp in 0.1f64..100.0,
    ) {
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|k| {
                let eps = 10f64.powf(-1.0 - k as f64 / 3.0);
                (eps, amp * eps.powf(-expo))
            })
            .collect();
        let fit = fit_scaling(&pts, ScalingModel::PowerOfInvEps).expect("finite points");
        prop_assert!((fit.fitted["exponent"] - expo).abs() <= 1e-9);
        prop_assert!((fit.fitted["amplitude"] - amp).abs() <= 1e-6 * amp);
        prop_assert!(fit.r_squared >= 1.0 - 1e-12);
    }

    #[test]
    fn log_fit_round_trips_synthetic_thresholds(
        slope in 0.1f64..50.0,
        intercept in -10.0f64..10.0,
    ) {
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|k| {
                let eps = 10f64.powf(-1.0 - k as f64 / 3.0);
                (eps, intercept + slope * (1.0 / eps).ln())
            })
            .collect();
        let fit = fit_scaling(&pts, ScalingModel::Log).expect("finite points");
        prop_assert!((fit.fitted["slope"] - slope).abs() <= 1e-9 * slope.max(1.0));
        prop_assert!((fit.fitted["intercept"] - intercept).abs() <= 1e-8);
    }

    #[test]
    fn plateau_data_is_symmetric_with_exact_mass(
        theta in 0.05f64..0.6,
        eps in 0.01f64..0.39,
        level in 1.0f64..30.0,
    ) {
        let g = Grid::new(100.0, 512).expect("valid grid");
        let u = initial_plateau(theta, eps, level, g).expect("plateau fits");
        let h = theta + eps;
        // Cell averaging leaves at most the two edge cells at partial height;
        // everything else is 0 or the full plateau height, and the mass comes
        // out exact because the partial cells make up the difference.
        let mut partial = 0usize;
        for (j, &v) in u.values().iter().enumerate() {
            prop_assert!(v >= 0.0 && v <= h * (1.0 + 1e-15));
            if v > 1e-15 && v < h * (1.0 - 1e-15) {
                partial += 1;
            }
            if j > 0 {
                let mirrored = u.values()[g.len() - j];
                prop_assert!((v - mirrored).abs() <= 1e-15);
            }
        }
        prop_assert!(partial <= 2, "{partial} cells at partial height");
        prop_assert!((u.sup() - h).abs() <= 1e-15);
        prop_assert!((u.mass() - 2.0 * level * h).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_accounts_for_every_unit_of_mass(
        k in window_safe_kernel_strategy(),
        heights in proptest::collection::vec(0.0f64..1.0, 256),
    ) {
        let g = Grid::new(40.0, 256).expect("valid grid");
        let disc = discretize(&k, g).expect("tails fit the window");
        let u = GridField::from_values(g, heights).expect("matching length");
        let mut engine = ConvEngine::with_base(&disc.field);
        let mut out = vec![0.0; g.len()];
        let escaped = engine.convolve_base(u.values(), &mut out);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
        let out_mass: f64 = out.iter().sum::<f64>() * g.dx();
        let in_mass = u.mass() * (1.0 - disc.tail_deficit);
        prop_assert!(
            (out_mass + escaped - in_mass).abs() <= 1e-9,
            "mass drifted: {out_mass} + {escaped} vs {in_mass}"
        );
    }

    #[test]
    fn convolving_even_data_stays_even_up_to_the_unpaired_edge_cell(
        k in window_safe_kernel_strategy(),
        bump in 0.2f64..1.0,
        width in 1.0f64..15.0,
    ) {
        let g = Grid::new(40.0, 256).expect("valid grid");
        let disc = discretize(&k, g).expect("tails fit the window");
        let u = GridField::from_fn(g, |x| if x.abs() <= width { bump } else { 0.0 });
        let mut engine = ConvEngine::with_base(&disc.field);
        let mut out = vec![0.0; g.len()];
        engine.convolve_base(u.values(), &mut out);
        // Node 0 sits at -X with no +X partner, so windowed convolution is
        // only even up to the kernel mass at the window edge. Any asymmetry
        // beyond that envelope would be a real engine defect.
        let vals = disc.field.values();
        let edge = vals[0].max(vals[g.len() - 1]);
        let budget = 1e-12 + 8.0 * edge * (2.0 * width * bump + g.dx());
        for j in 1..g.len() {
            let diff = (out[j] - out[g.len() - j]).abs();
            prop_assert!(
                diff <= budget,
                "asymmetry {diff:.3e} above the edge budget {budget:.3e} at node {j}"
            );
        }
    }

    #[test]
    fn time_stepping_preserves_order_and_the_unit_interval(
        k in window_safe_kernel_strategy(),
        theta in 0.1f64..0.45,
        lo_h in 0.0f64..0.6,
        hi_extra in 0.0f64..0.39,
        lo_l in 2.0f64..12.0,
        hi_extra_l in 0.0f64..10.0,
    ) {
        let g = Grid::new(40.0, 256).expect("valid grid");
        let f = Nonlinearity::cubic_bistable(1.0, theta).expect("theta below 1/2");
        let lower = GridField::from_fn(g, |x| if x.abs() <= lo_l { lo_h } else { 0.0 });
        let upper = GridField::from_fn(g, |x| {
            if x.abs() <= lo_l + hi_extra_l { (lo_h + hi_extra).min(1.0) } else { 0.0 }
        });
        let disc = discretize(&k, g).expect("tails fit the window");
        let mut engine = ConvEngine::with_base(&disc.field);
        let dt = 0.3 / (1.0 + f.lipschitz());
        let (mut u, mut v) = (lower, upper);
        let mut scratch = GridField::zeros(g);
        for _ in 0..10 {
            step_with(&mut engine, &u, dt, &f, &mut scratch).expect("dt under the bound");
            std::mem::swap(&mut u, &mut scratch);
            step_with(&mut engine, &v, dt, &f, &mut scratch).expect("dt under the bound");
            std::mem::swap(&mut v, &mut scratch);
        }
        for (a, b) in u.values().iter().zip(v.values()) {
            prop_assert!(a <= &(b + 1e-12), "ordering broke: {a} above {b}");
            prop_assert!(*a >= -1e-12 && *b <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn jump_part_mass_matches_the_closed_form_within_the_reported_remainder(
        rate in 0.5f64..3.0,
        t in 0.1f64..8.0,
    ) {
        let k = Kernel::laplace(rate).expect("positive rate");
        let g = Grid::new(60.0, 1024).expect("valid grid");
        let p = psi(&k, t, g, 1e-8).expect("window fits");
        let err = (p.field.mass() - (1.0 - (-t).exp())).abs();
        prop_assert!(
            err <= 1e-8 + p.escaped + 1e-10,
            "mass error {err:.3e} above remainder budget"
        );
    }
}
