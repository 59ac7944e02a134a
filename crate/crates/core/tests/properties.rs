use std::sync::OnceLock;

use proptest::prelude::*;

use coupled_waveguides::bohmian::{sample_positions, VelocityField};
use coupled_waveguides::config::RunConfig;
use coupled_waveguides::dynamics::{self, two_level_oracle};
use coupled_waveguides::eigensolver::{
    build_hamiltonian, solve_lowest, FreeParameter, ModePair, PotentialSpec,
};
use coupled_waveguides::Grid1D;

fn default_modes() -> &'static (ModePair, f64) {
    static MODES: OnceLock<(ModePair, f64)> = OnceLock::new();
    MODES.get_or_init(|| {
        let cfg = RunConfig::default();
        let pot = cfg.potential().unwrap();
        let modes =
            coupled_waveguides::eigensolver::solve_modes(&cfg.grid().unwrap(), &pot).unwrap();
        (modes, pot.mass)
    })
}

fn velocity_field() -> &'static VelocityField {
    static FIELD: OnceLock<VelocityField> = OnceLock::new();
    FIELD.get_or_init(|| {
        let cfg = RunConfig::default();
        let (modes, mass) = default_modes();
        VelocityField::new(modes, *mass, &cfg.stencil().unwrap(), cfg.numerics.eps_rho)
    })
}

fn positive() -> impl Strategy<Value = f64> {
    (-30.0f64..30.0).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_text_round_trips(
        n in (1usize..5000).prop_map(|k| 2 * k + 1),
        extent in positive(),
        mass in positive(),
        sep in 0.0f64..100.0,
        w0 in positive(),
        v0 in positive(),
        e in positive(),
        seed in any::<u64>(),
        n_traj in 1usize..1_000_000,
        eps in 1e-300f64..1.0,
        order in prop::sample::select(vec![2usize, 4, 6, 8]),
        mass_free in any::<bool>(),
        dir in "[a-z][a-z0-9_/]{0,12}",
    ) {
        let mut cfg = RunConfig::default();
        cfg.grid.n_points = n;
        cfg.grid.half_extent_um = extent;
        cfg.potential.mass_kg = mass;
        cfg.potential.well_separation_um = sep;
        cfg.potential.well_frequency_rad_per_s = w0;
        cfg.longitudinal.step_height_j = v0;
        cfg.longitudinal.beam_energy_j = e;
        cfg.numerics.seed = seed;
        cfg.numerics.n_traj = n_traj;
        cfg.numerics.eps_rho = eps;
        cfg.numerics.stencil_order = order;
        cfg.calibration.free_parameter = if mass_free { FreeParameter::Mass } else { FreeParameter::WellFrequency };
        cfg.output.directory = dir;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn harmonic_levels_match_half_integers(mass in 0.2f64..5.0, w0 in 0.2f64..5.0) {
        let width = 1.0 / (mass * w0).sqrt();
        let grid = Grid1D::symmetric(4001, 12.0 * width).unwrap();
        let pot = PotentialSpec::new(mass, 0.0, w0, 0.0, 0.0).unwrap();
        let levels = solve_lowest(&build_hamiltonian(&grid, &pot).unwrap(), 4).unwrap();
        for (n, p) in levels.iter().enumerate() {
            let exact = w0 * (n as f64 + 0.5);
            prop_assert!((p.energy - exact).abs() / exact < 1e-4, "level {} {} vs {}", n, p.energy, exact);
        }
    }

    #[test]
    fn norm_and_populations_over_the_period(q in 0.0f64..1.0) {
        let (modes, _) = default_modes();
        let t = q * modes.period();
        let rho = dynamics::density(&dynamics::evolve(modes, t));
        prop_assert!(rho.iter().all(|&r| r >= 0.0));
        prop_assert!((modes.grid.integrate(&rho) - 1.0).abs() < 1e-10);
        let p = dynamics::populations_at(modes, t);
        prop_assert!((p.p_plus + p.p_minus - 1.0).abs() < 1e-10);
        let (_, down) = two_level_oracle(modes.j0, t);
        prop_assert!((p.p_minus - down).abs() < 1e-2);
    }

    #[test]
    fn velocity_field_symmetries(y in -20.0f64..20.0, q in 0.001f64..0.499) {
        let field = velocity_field();
        let period = field.period();
        let t = q * period;
        let v = field.velocity(y, t).unwrap();
        let back = field.velocity(y, period - t).unwrap();
        let shifted = field.velocity(-y, t + 0.5 * period).unwrap();
        prop_assume!(!v.flagged && !back.flagged && !shifted.flagged);
        let scale = v.value.abs().max(1e-12);
        prop_assert!((back.value + v.value).abs() <= 1e-6 * scale);
        prop_assert!((shifted.value + v.value).abs() <= 1e-6 * scale);
    }

    #[test]
    fn systematic_samples_follow_the_cdf(centre in -3.0f64..3.0, width in 0.5f64..3.0, seed in any::<u64>(), n in 10usize..2000) {
        let grid = Grid1D::symmetric(2001, 15.0).unwrap();
        let rho: Vec<f64> = grid.points().iter().map(|y| (-((y - centre) / width).powi(2) / 2.0).exp()).collect();
        let ys = sample_positions(&grid, &rho, n, seed).unwrap();
        prop_assert_eq!(ys.len(), n);
        prop_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
        let h = grid.spacing();
        let mut cdf = vec![0.0];
        for i in 1..rho.len() {
            let last = cdf[i - 1];
            cdf.push(last + 0.5 * h * (rho[i - 1] + rho[i]));
        }
        let total = *cdf.last().unwrap();
        // exact CDF of the piecewise-linear density
        let at = |y: f64| {
            let i = (((y - grid.y_min()) / h).floor() as usize).min(rho.len() - 2);
            let s = y - grid.y(i);
            (cdf[i] + rho[i] * s + (rho[i + 1] - rho[i]) * s * s / (2.0 * h)) / total
        };
        let u0 = at(ys[0]) * n as f64;
        prop_assert!((0.0..1.0 + 1e-6).contains(&u0));
        for (j, &y) in ys.iter().enumerate() {
            let expected = (j as f64 + u0) / n as f64;
            prop_assert!((at(y) - expected).abs() < 1e-9, "sample {} at {}", j, y);
        }
    }
}
