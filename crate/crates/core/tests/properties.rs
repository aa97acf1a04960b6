use lasso_dual::array::{
    build_ula_dictionary, coherence, make_uniform_grid, mutual_coherence, synthesize, PowerUnit,
    SourceScene, SteeringDictionary,
};
use lasso_dual::duality::{
    check_kkt, dual_active_set, dual_from_primal, l0_l1_gap, l1_conjugate_infimum, l1_split_value,
    primal_active_set, restrict_l0, unbounded_direction, KktTolerances, DEFAULT_EPSILON,
    DEFAULT_EPSILON_MU,
};
use lasso_dual::lasso::{solve, LassoProblem, SolverOptions, WeightMatrix};
use lasso_dual::regpath::{
    mu_max, prediction_bound, select_mu, sweep_path, Algorithm, PathOptions, PeakMode,
    SelectorOptions, StepKind,
};
use lasso_dual::{CVector, Complex64};
use proptest::prelude::*;

const SENSORS: usize = 16;
const ATOMS: usize = 64;

fn dictionary() -> SteeringDictionary {
    build_ula_dictionary(&make_uniform_grid(ATOMS).unwrap(), SENSORS).unwrap()
}

fn complex_vec(parts: &[(f64, f64)]) -> CVector {
    CVector::from_iterator(parts.len(), parts.iter().map(|&(re, im)| Complex64::new(re, im)))
}

/// Random sparse scene on the grid plus noise at a given SNR.
fn instance(
    dict: &SteeringDictionary,
    bins: &[usize],
    powers: &[f64],
    phases: &[f64],
    snr_db: f64,
    seed: u64,
) -> CVector {
    let doas: Vec<f64> = bins.iter().map(|&b| dict.grid().angle_deg(b)).collect();
    let scene = SourceScene::new(doas, powers.to_vec(), PowerUnit::Linear, phases.to_vec()).unwrap();
    let sigma2 = lasso_dual::array::sigma_for_snr(dict, &scene, snr_db).unwrap();
    synthesize(dict, &scene, sigma2, seed).unwrap().y
}

fn scene_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>, f64, u64)> {
    (1usize..=4)
        .prop_flat_map(|k| {
            (
                proptest::collection::btree_set(0..ATOMS, k),
                proptest::collection::vec(0.5f64..10.0, k),
                proptest::collection::vec(-3.1f64..3.1, k),
                prop_oneof![Just(10.0), Just(20.0), Just(40.0)],
                any::<u64>(),
            )
        })
        .prop_map(|(bins, powers, phases, snr, seed)| {
            (bins.into_iter().collect(), powers, phases, snr, seed)
        })
}

fn tight() -> SolverOptions {
    SolverOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_iterations: 200_000,
        ..SolverOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coherence_is_conjugate_symmetric(i in 0..ATOMS, j in 0..ATOMS) {
        let d = dictionary();
        let a = coherence(&d, i, j).unwrap();
        let b = coherence(&d, j, i).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-15);
    }

    #[test]
    fn mutual_coherence_ignores_column_phases(phases in proptest::collection::vec(-3.2f64..3.2, 12)) {
        let d = build_ula_dictionary(&make_uniform_grid(12).unwrap(), 8).unwrap();
        let mut rotated = d.matrix().clone();
        for (m, ph) in phases.iter().enumerate() {
            let r = Complex64::from_polar(1.0, *ph);
            for n in 0..8 {
                rotated[(n, m)] *= r;
            }
        }
        let r = SteeringDictionary::from_matrix(d.grid().clone(), rotated).unwrap();
        prop_assert!((mutual_coherence(&d) - mutual_coherence(&r)).abs() <= 1e-14);
    }

    #[test]
    fn dual_map_is_affine(
        x1 in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), ATOMS),
        x2 in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), ATOMS),
        w in proptest::collection::vec(0.2f64..3.0, ATOMS),
        yv in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), SENSORS),
    ) {
        let d = dictionary();
        let weights = WeightMatrix::new(w).unwrap();
        let (x1, x2, y) = (complex_vec(&x1), complex_vec(&x2), complex_vec(&yv));
        let u1 = dual_from_primal(&d, &weights, &y, &x1, 1.0).unwrap().u;
        let u2 = dual_from_primal(&d, &weights, &y, &x2, 1.0).unwrap().u;
        let a = d.matrix();
        let predicted = weights.apply_inverse(&(a.adjoint() * (a * (&x1 - &x2)))) * Complex64::new(-2.0, 0.0);
        prop_assert!((&u1 - &u2 - predicted).norm() <= 1e-10 * (1.0 + u1.norm()));
    }

    #[test]
    fn conjugate_of_l1_is_an_indicator(
        u in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 10),
        z in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 10),
        mu in 0.1f64..4.0,
        boost in 1.001f64..3.0,
        k in 0usize..10,
    ) {
        // Inside the box the infimum is 0 and every z gives a non-negative value.
        let mut inside = complex_vec(&u);
        let peak = inside.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-12);
        inside *= Complex64::new(mu / peak * 0.999, 0.0);
        prop_assert_eq!(l1_conjugate_infimum(&inside, mu), 0.0);
        prop_assert!(l1_split_value(&inside, &complex_vec(&z), mu) >= -1e-12);
        prop_assert!(unbounded_direction(&inside, mu).is_none());

        // One coordinate outside: the value decreases without bound along the
        // returned direction.
        let mut outside = inside.clone();
        outside[k] = Complex64::from_polar(mu * boost, 0.7);
        prop_assert_eq!(l1_conjugate_infimum(&outside, mu), f64::NEG_INFINITY);
        let dir = unbounded_direction(&outside, mu).unwrap();
        let v1 = l1_split_value(&outside, &(&dir * Complex64::new(1.0, 0.0)), mu);
        let v2 = l1_split_value(&outside, &(&dir * Complex64::new(1e6, 0.0)), mu);
        prop_assert!(v1 < 0.0);
        prop_assert!(v2 < 1e5 * v1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_solutions_satisfy_optimality((bins, powers, phases, snr, seed) in scene_strategy(), frac in 0.05f64..0.9) {
        let d = dictionary();
        let w = WeightMatrix::identity(ATOMS);
        let y = instance(&d, &bins, &powers, &phases, snr, seed);
        let mu = frac * mu_max(&d, &w, &y).unwrap();
        let sol = solve(&LassoProblem::new(&d, &w, &y, mu).unwrap(), &SolverOptions::default()).unwrap();
        prop_assert!(sol.converged);
        let report = check_kkt(&d, &w, &y, &sol.x, mu, &KktTolerances::default()).unwrap();
        prop_assert!(report.pass, "{report:?}");

        let u = dual_from_primal(&d, &w, &y, &sol.x, mu).unwrap();
        let primal = primal_active_set(&sol.x, DEFAULT_EPSILON);
        let dual = dual_active_set(&u.u, mu, DEFAULT_EPSILON_MU);
        prop_assert!(primal.iter().all(|m| dual.contains(m)), "{primal:?} vs {dual:?}");
    }

    #[test]
    fn gap_identity_on_support((bins, powers, phases, snr, seed) in scene_strategy(), frac in 0.1f64..0.8) {
        let d = dictionary();
        let w = WeightMatrix::identity(ATOMS);
        let y = instance(&d, &bins, &powers, &phases, snr, seed);
        let mu = frac * mu_max(&d, &w, &y).unwrap();
        let sol = solve(&LassoProblem::new(&d, &w, &y, mu).unwrap(), &tight()).unwrap();
        let set = primal_active_set(&sol.x, 1e-9);
        prop_assume!(!set.is_empty() && set.len() <= SENSORS);
        let x_l0 = restrict_l0(&d, &set, &y).unwrap();
        let x_l1 = CVector::from_iterator(set.len(), set.iter().map(|&m| sol.x[m]));
        let phases: Vec<f64> = set.iter().map(|&m| sol.x[m].arg()).collect();
        let gap = l0_l1_gap(&d, &w, &set, mu, &phases).unwrap();
        let a_m = d.restrict(&set);
        let residual = &a_m * (x_l0 - x_l1) - &a_m * gap.delta;
        prop_assert!(residual.norm() <= 1e-4 * y.norm(), "{}", residual.norm());
    }

    #[test]
    fn solution_scales_with_data((bins, powers, phases, snr, seed) in scene_strategy(), frac in 0.1f64..0.8, c in 0.2f64..5.0) {
        let d = dictionary();
        let w = WeightMatrix::identity(ATOMS);
        let y = instance(&d, &bins, &powers, &phases, snr, seed);
        let mu = frac * mu_max(&d, &w, &y).unwrap();
        let base = solve(&LassoProblem::new(&d, &w, &y, mu).unwrap(), &tight()).unwrap();
        let cy = &y * Complex64::new(c, 0.0);
        let scaled = solve(&LassoProblem::new(&d, &w, &cy, c * mu).unwrap(), &tight()).unwrap();
        let err = (&scaled.x - &base.x * Complex64::new(c, 0.0)).norm();
        prop_assert!(err <= 1e-8 * c * base.x.norm().max(1e-300), "{err}");
    }

    #[test]
    fn noiseless_synthesis_is_exact(bins in proptest::collection::btree_set(0..ATOMS, 1..5), amp in 0.1f64..4.0) {
        let d = dictionary();
        let bins: Vec<usize> = bins.into_iter().collect();
        let doas: Vec<f64> = bins.iter().map(|&b| d.grid().angle_deg(b)).collect();
        let scene = SourceScene::in_phase(doas, vec![amp; bins.len()], PowerUnit::Linear).unwrap();
        let snap = synthesize(&d, &scene, 0.0, 0).unwrap();
        prop_assert_eq!(&snap.truth.bins, &bins);
        prop_assert_eq!((&snap.y - d.matrix() * &snap.truth.x).norm(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn selector_traces_are_consistent((bins, powers, phases, _snr, seed) in scene_strategy(), alg in prop_oneof![Just(Algorithm::OrderRecursive), Just(Algorithm::Fast), Just(Algorithm::Dual)]) {
        let d = dictionary();
        let w = WeightMatrix::identity(ATOMS);
        let y = instance(&d, &bins, &powers, &phases, 30.0, seed);
        let opts = SelectorOptions::default();
        let Ok(r) = select_mu(&d, &w, &y, bins.len(), alg, &opts) else {
            // Close or weak sources may leave the order unreachable; nothing to check.
            return Ok(());
        };
        prop_assert_eq!(r.sets.primal.len(), bins.len());
        let steps: Vec<f64> = r.trace.iter().filter(|t| t.kind != StepKind::Bisection).map(|t| t.mu).collect();
        prop_assert!(steps.windows(2).all(|p| p[1] < p[0]), "{steps:?}");
        let bound = prediction_bound(&r.trace, PeakMode::LocalMaxima, opts.epsilon_mu, 1e-6);
        prop_assert!(bound.holds, "{bound:?}");
    }

    #[test]
    fn path_samples_are_consistent((bins, powers, phases, snr, seed) in scene_strategy()) {
        let d = dictionary();
        let w = WeightMatrix::identity(ATOMS);
        let y = instance(&d, &bins, &powers, &phases, snr, seed);
        let top = mu_max(&d, &w, &y).unwrap();
        let grid: Vec<f64> = (0..12).map(|k| top * (1.05 - 0.08 * k as f64)).collect();
        // At the default 1e-8 stop, dual errors reach a few 1e-7 of mu; the box check needs margin.
        let opts = PathOptions {
            solver: SolverOptions { abs_tol: 1e-10, rel_tol: 1e-10, ..SolverOptions::default() },
            ..PathOptions::default()
        };
        let path = sweep_path(&d, &w, &y, &grid, &opts).unwrap();
        for s in &path.samples {
            prop_assert!(s.sets.nested());
            let peak = s.u.iter().map(|c| c.norm()).fold(0.0, f64::max);
            prop_assert!(peak <= s.mu * (1.0 + 1e-6));
        }
        prop_assert!(path.samples[0].sets.primal.is_empty());
    }
}

#[test]
fn selectors_agree_on_incoherent_support() {
    // 32 sensors, 90-angle grid: pairwise |coh| < 0.1 on these bins.
    let d = build_ula_dictionary(&make_uniform_grid(90).unwrap(), 32).unwrap();
    let w = WeightMatrix::identity(90);
    let bins = [20usize, 40, 50, 60];
    for (i, &a) in bins.iter().enumerate() {
        for &b in &bins[i + 1..] {
            assert!(coherence(&d, a, b).unwrap().norm() < 0.1);
        }
    }
    for seed in 0..5 {
        let doas: Vec<f64> = bins.iter().map(|&b| d.grid().angle_deg(b)).collect();
        let scene = SourceScene::new(doas, vec![4.0, 2.0, 6.0, 3.0], PowerUnit::Linear, vec![0.3, -1.0, 2.0, 0.0])
            .unwrap();
        let y = synthesize(&d, &scene, 0.01, seed).unwrap().y;
        let opts = SelectorOptions::default();
        let sets: Vec<Vec<usize>> = [Algorithm::OrderRecursive, Algorithm::Fast, Algorithm::Dual]
            .into_iter()
            .map(|alg| select_mu(&d, &w, &y, 4, alg, &opts).unwrap().sets.primal)
            .collect();
        assert_eq!(sets[0], bins.to_vec(), "seed {seed}");
        assert_eq!(sets[0], sets[1], "seed {seed}");
        assert_eq!(sets[0], sets[2], "seed {seed}");
    }
}
