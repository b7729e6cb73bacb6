use proptest::prelude::*;

use sdde_core::analysis::{gronwall_constant, maximal_function, radii_grid, SampledFunction};
use sdde_core::girsanov::{ess_from_log_weights, girsanov_weight};
use sdde_core::models::{DelayMeasure, DiffusionField, Drift, Kernel, KernelDrift, ModelSpec, PointwiseDrift};
use sdde_core::solver::{coupled_paths, driftless_path_with_increments, euler_maruyama};
use sdde_core::zvonkin::{gradient_bound, select_delta, solve_backward_pde, PdeGrid};
use sdde_core::{PathSegment, SamplePath, SolverConfig, TimeGrid};

const H: f64 = 0.125;

fn grid(r_steps: usize, main_steps: usize) -> TimeGrid {
    TimeGrid::new(r_steps as f64 * H, main_steps as f64 * H, H).unwrap()
}

fn path_strategy(dim: usize) -> impl Strategy<Value = SamplePath> {
    (1usize..6, 1usize..10).prop_flat_map(move |(rs, ms)| {
        let g = grid(rs, ms);
        (
            prop::collection::vec(-1e3f64..1e3, g.n_nodes() * dim),
            prop::collection::vec(-10f64..10.0, g.n_main() * dim),
        )
            .prop_map(move |(s, w)| SamplePath::new(g, dim, s, w).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_sup_norm_is_window_max(path in path_strategy(2), pick in 0usize..100) {
        let g = *path.grid();
        let k = pick % (g.n_main() + 1);
        let t = g.main_time(k);
        let seg = path.segment_at(t).unwrap();
        let expect = (0..g.n_nodes())
            .filter(|&n| g.time(n) >= t - g.r() - 1e-12 && g.time(n) <= t + 1e-12)
            .map(|n| path.state(n).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        prop_assert_eq!(seg.sup_norm(), expect);
    }

    #[test]
    fn appending_constant_steps_keeps_segments(path in path_strategy(1), extra in 1usize..5) {
        let g = *path.grid();
        let long = TimeGrid::new(g.r(), g.horizon() + extra as f64 * H, H).unwrap();
        let mut states = path.states().to_vec();
        let last = *states.last().unwrap();
        states.extend(std::iter::repeat_n(last, extra));
        let mut incs = path.increments().to_vec();
        incs.extend(std::iter::repeat_n(0.0, extra));
        let longer = SamplePath::new(long, 1, states, incs).unwrap();
        for k in 0..=g.n_main() {
            let t = g.main_time(k);
            prop_assert_eq!(path.segment_at(t).unwrap(), longer.segment_at(t).unwrap());
        }
        let end = longer.segment_at(long.horizon()).unwrap();
        prop_assert_eq!(end.current(), &[last][..]);
    }

    #[test]
    fn csv_round_trip_is_exact(path in path_strategy(2)) {
        let text = path.to_csv_string();
        let back = SamplePath::from_csv(&text).unwrap();
        prop_assert_eq!(back.states(), path.states());
        prop_assert_eq!(back.increments(), path.increments());
        prop_assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn drift_reads_only_the_window(
        a in prop::collection::vec(-5f64..5.0, 17),
        b in prop::collection::vec(-5f64..5.0, 8),
        which in 0usize..3,
    ) {
        // r = 1, h = 1/8: paths agree on the last 9 nodes = [t - r, t]
        let g = TimeGrid::new(1.0, 1.0, H).unwrap();
        let mut other = a.clone();
        other[..8].copy_from_slice(&b);
        let p = SamplePath::new(g, 1, a, vec![0.0; 8]).unwrap();
        let q = SamplePath::new(g, 1, other, vec![0.0; 8]).unwrap();
        let drift = match which {
            0 => Drift::SgnDelay,
            1 => Drift::Kernel(KernelDrift::new(Kernel::Tanh, DelayMeasure::uniform(-1.0, -0.5, 2.0))),
            _ => Drift::Affine { slope: -0.7, offset: 0.2 },
        };
        let k = g.n_main();
        prop_assert_eq!(
            drift.evaluate(1.0, &p.segment_view(k)).unwrap(),
            drift.evaluate(1.0, &q.segment_view(k)).unwrap()
        );
    }

    #[test]
    fn strict_past_part_ignores_the_recent_window(
        a in prop::collection::vec(-5f64..5.0, 9),
        b in prop::collection::vec(-5f64..5.0, 4),
    ) {
        let m = ModelSpec::kernel(1, 1.0, Kernel::Tanh, DelayMeasure::uniform(-1.0, -0.5, 2.0), 1.0).unwrap();
        prop_assert_eq!(m.strict_past_lag(), Some(0.5));
        let mut other = a.clone();
        // nodes strictly inside (-1/2, 0]
        other[5..].copy_from_slice(&b);
        let x = PathSegment::from_values(H, 1, a).unwrap();
        let y = PathSegment::from_values(H, 1, other).unwrap();
        let part = m.drift.strict_past_part().unwrap();
        prop_assert_eq!(part.evaluate(0.0, &x.view()).unwrap(), part.evaluate(0.0, &y.view()).unwrap());
    }

    #[test]
    fn kernel_drift_is_linear(
        xs in prop::collection::vec(-3f64..3.0, 9),
        c1 in -2f64..2.0,
        c2 in -2f64..2.0,
        lag in 0usize..9,
    ) {
        let seg = PathSegment::from_values(H, 1, xs).unwrap();
        let v = seg.view();
        let lag = -(lag as f64) * H;
        let mu = DelayMeasure::uniform(-1.0, -0.25, 1.5);
        let eval = |k: Kernel, m: DelayMeasure| KernelDrift::new(k, m).evaluate(0.3, &v).unwrap()[0];
        let combo = Kernel::custom(move |_, x| c1 * x.tanh() + c2 * x);
        let lhs = eval(combo, mu.clone());
        let rhs = c1 * eval(Kernel::Tanh, mu.clone()) + c2 * eval(Kernel::Identity, mu.clone());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        let both = DelayMeasure { atoms: DelayMeasure::atom(lag, c1).atoms, density: mu.density };
        let lhs = eval(Kernel::Tanh, both);
        let rhs = eval(Kernel::Tanh, DelayMeasure::atom(lag, c1)) + eval(Kernel::Tanh, mu);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn initial_segment_is_copied(xs in prop::collection::vec(-2f64..2.0, 9), seed in any::<u64>()) {
        let g = TimeGrid::new(1.0, 0.5, H).unwrap();
        let x0 = PathSegment::from_values(H, 1, xs).unwrap();
        let cfg = SolverConfig::new(g, seed, 1).unwrap();
        let p = euler_maruyama(&ModelSpec::sgn_delay(), &x0, &cfg, &cfg.driver(0)).unwrap();
        prop_assert_eq!(&p.states()[..9], x0.values());
    }

    #[test]
    fn additive_noise_cancels_in_coupled_differences(
        shift in -1f64..1.0,
        seed in any::<u64>(),
    ) {
        let g = TimeGrid::new(1.0, 2.0, H).unwrap();
        let m = ModelSpec::kernel(1, 1.0, Kernel::Tanh, DelayMeasure::uniform(-1.0, -0.5, 2.0), 0.8).unwrap();
        let x0 = PathSegment::constant(&g, &[0.1]).unwrap();
        let y0 = x0.shifted(&[shift]).unwrap();
        let cfg = SolverConfig::new(g, seed, 1).unwrap();
        let pair = coupled_paths(&m, &x0, &y0, &cfg, &cfg.driver(0)).unwrap();
        for k in 0..g.n_main() {
            let bx = m.drift.evaluate(g.main_time(k), &pair.x.segment_view(k)).unwrap()[0];
            let by = m.drift.evaluate(g.main_time(k), &pair.y.segment_view(k)).unwrap()[0];
            let d0 = pair.y.main_state(k)[0] - pair.x.main_state(k)[0];
            let d1 = pair.y.main_state(k + 1)[0] - pair.x.main_state(k + 1)[0];
            prop_assert!((d1 - (d0 + H * (by - bx))).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_drift_weight_survives_coarsening(
        beta in -2f64..2.0,
        fine in prop::collection::vec(-0.5f64..0.5, 16),
    ) {
        let m = ModelSpec::pointwise(1, 1.0, PointwiseDrift::constant(beta), 1.0).unwrap();
        let gf = TimeGrid::new(1.0, 1.0, 1.0 / 16.0).unwrap();
        let gc = TimeGrid::new(1.0, 1.0, 1.0 / 8.0).unwrap();
        let coarse: Vec<f64> = fine.chunks(2).map(|c| c[0] + c[1]).collect();
        let run = |g: TimeGrid, w: Vec<f64>| {
            let x0 = PathSegment::constant(&g, &[0.0]).unwrap();
            let cfg = SolverConfig::new(g, 0, 1).unwrap();
            let p = driftless_path_with_increments(&m, &x0, &cfg, w).unwrap();
            girsanov_weight(&m, &p).unwrap().log_weight
        };
        let lf = run(gf, fine.clone());
        let lc = run(gc, coarse);
        let exact = beta * fine.iter().sum::<f64>() - 0.5 * beta * beta;
        prop_assert!((lf - lc).abs() < 1e-12);
        prop_assert!((lf - exact).abs() < 1e-12);
    }

    #[test]
    fn ess_is_shift_invariant_and_bounded(lw in prop::collection::vec(-30f64..30.0, 1..50), c in -100f64..100.0) {
        let e = ess_from_log_weights(&lw).unwrap();
        let shifted: Vec<f64> = lw.iter().map(|v| v + c).collect();
        let e2 = ess_from_log_weights(&shifted).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= lw.len() as f64 + 1e-9);
        prop_assert!((e - e2).abs() <= 1e-9 * e);
    }

    #[test]
    fn maximal_function_is_monotone_and_homogeneous(
        base in prop::collection::vec(0f64..3.0, 41),
        bump in prop::collection::vec(0f64..1.0, 41),
        c in 0.01f64..100.0,
        xi in 10usize..31,
    ) {
        let phi = SampledFunction::new(-2.0, 0.1, base.clone()).unwrap();
        let above = SampledFunction::new(-2.0, 0.1, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
        let scaled = phi.map(|v| c * v).unwrap();
        let x = -2.0 + xi as f64 * 0.1;
        let radii = radii_grid(0.1, 0.9);
        let m = maximal_function(&phi, x, &radii).unwrap();
        prop_assert!(m <= maximal_function(&above, x, &radii).unwrap() + 1e-12);
        prop_assert!((maximal_function(&scaled, x, &radii).unwrap() - c * m).abs() <= 1e-12 * (1.0 + c * m));
    }

    #[test]
    fn nonnegative_drift_gives_nonnegative_solution(
        level in 0f64..2.0,
        scale in 0f64..2.0,
        center in -1f64..1.0,
        alpha in 0.1f64..0.9,
    ) {
        let g = PdeGrid::new(3.0, 0.05, 0.0, 0.2, 0.005).unwrap();
        let b = move |_: f64, x: f64| level + PointwiseDrift::PowerSingular { scale, center, alpha }.value(x).min(5.0);
        let sol = sdde_core::zvonkin::solve_backward_pde_with(|_, _| 1.0, b, &g).unwrap();
        prop_assert!(sol.row(g.nt()).iter().all(|&v| v == 0.0));
        prop_assert!(sol.values().iter().all(|&v| v >= 0.0), "min {}", sol.values().iter().cloned().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn gronwall_constant_matches_high_precision_values() {
    // 40-digit evaluations of (4 min 1/p) pi p / sin(pi p)
    let frozen = [
        (0.137065, 4.126_339_573_310_517),
        (0.560084, 3.198_403_438_250_481),
        (0.662299, 3.599_423_574_198_403),
        (0.411108, 3.268_206_224_882_363),
        (0.298494, 3.896_660_199_063_795_5),
        (0.177449, 4.214_949_843_708_637),
        (0.705434, 3.932_568_813_143_710_4),
        (0.949019, 19.699_262_775_697_502),
        (0.5261, 3.152_183_212_471_982_6),
        (0.529862, 3.155_468_286_620_141_3),
        (0.05754, 4.021_867_866_464_153),
        (0.724535, 4.126_323_748_436_261),
        (0.808503, 5.550_841_889_765_65),
        (0.626335, 3.406_382_971_485_155_2),
        (0.762933, 4.634_976_448_508_257),
        (0.641743, 3.481_058_447_616_511),
        (0.065844, 4.028_669_049_925_996),
        (0.008195, 4.000_441_916_265_589),
        (0.888669, 9.168_004_098_553_151),
        (0.472375, 3.153_460_971_690_335),
    ];
    for (p, c) in frozen {
        let v = gronwall_constant(p).unwrap();
        assert!((v - c).abs() < 1e-12, "p = {p}: {v} vs {c}");
    }
}

#[test]
fn certified_windows_reassert() {
    let tpl = PdeGrid::new(2.0, 0.01, 0.0, 1.0, 2e-4).unwrap();
    let sigma = DiffusionField::identity();
    let b = PointwiseDrift::sign(2.0);
    let rep = select_delta(&sigma, &b, 1.0, &tpl).unwrap();
    assert!(rep.delta < 1.0 && !rep.windows.is_empty());
    for w in &rep.windows {
        assert!((w.end - w.start - rep.delta).abs() < 1e-12);
        let g = tpl.with_window(w.start, w.end).unwrap();
        let sol = solve_backward_pde(&sigma, &b, &g).unwrap();
        assert!(gradient_bound(&sol) <= 0.5);
        assert_eq!(gradient_bound(&sol), w.max_gradient);
    }
}

#[test]
fn validators_are_pure() {
    use sdde_core::models::{check_condition_driftc1, check_lipschitz};
    let g = TimeGrid::new(1.0, 1.0, H).unwrap();
    let m = ModelSpec::sgn_delay().with_square_envelope(|_, _| 1.0, 0.0, 0.0);
    let cfg = SolverConfig::new(g, 3, 4).unwrap();
    let x0 = PathSegment::constant(&g, &[0.2]).unwrap();
    let probes: Vec<SamplePath> = (0..4).map(|i| euler_maruyama(&m, &x0, &cfg, &cfg.driver(i)).unwrap()).collect();
    assert_eq!(check_condition_driftc1(&m, &probes).unwrap(), check_condition_driftc1(&m, &probes).unwrap());
    let pts: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..5).map(|i| (0.1 * i as f64, vec![i as f64 - 2.0], vec![0.3 * i as f64 + 0.1])).collect();
    let field = DiffusionField::custom(|_, x, out| out[0] = 1.0 + 0.5 * x[0].sin());
    assert_eq!(check_lipschitz(&field, &pts, 1.0).unwrap(), check_lipschitz(&field, &pts, 1.0).unwrap());
}
