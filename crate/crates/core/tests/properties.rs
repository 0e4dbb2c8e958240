use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhfs_core::container::{read_orbitals, write_orbitals};
use rhfs_core::dynamics::{evolve, EvolutionConfig, SimState};
use rhfs_core::ed::{build_hamiltonian, oracle_run, reduced_density_1, slater_vector, evolve_exact, FockBasis, ModeModel};
use rhfs_core::linalg::hermitian_eigen;
use rhfs_core::semiclassics::{growth_fit, wigner_transform, VelocityGrid};
use rhfs_core::spectral::{apply_kinetic, convolve_potential};
use rhfs_core::vlasov::{vlasov_evolve, MASS_TOLERANCE};
use rhfs_core::{hf_energy, make_grid, DispersionKind, Field, Grid, OrbitalSet, PotentialSpec};

fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
    (0..grid.len())
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Random orthonormal orbitals, smoothed so they are well resolved.
fn random_orbitals(grid: &Grid, n: usize, rng: &mut ChaCha8Rng) -> OrbitalSet {
    let width = grid.box_length() / 8.0;
    let fields = (0..n)
        .map(|_| {
            let raw = random_field(grid, rng);
            let hat = grid.forward(&raw);
            let damped: Field = hat
                .iter()
                .enumerate()
                .map(|(k, c)| c * (-(grid.momentum_norm(k) * width).powi(2) / 8.0).exp())
                .collect();
            grid.inverse(&damped)
        })
        .collect();
    OrbitalSet::new_unchecked(grid.clone(), fields).unwrap().reorthonormalize().unwrap()
}

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (1usize..=3, 0.5f64..2.0).prop_map(|(dim, eps)| {
        let n = [64, 16, 8][dim - 1];
        make_grid(dim, n, 2.0 * std::f64::consts::PI, eps).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transform_round_trip(grid in grid_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_field(&grid, &mut rng);
        let back = grid.inverse(&grid.forward(&f));
        let err = f.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = f.iter().map(|a| a.norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12 * scale);
    }

    #[test]
    fn kinetic_operator_is_self_adjoint(grid in grid_strategy(), m0 in 0.1f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g) = (random_field(&grid, &mut rng), random_field(&grid, &mut rng));
        for disp in [DispersionKind::Relativistic { m0 }, DispersionKind::NonRelativistic { m0 }, DispersionKind::Massless] {
            let kf = apply_kinetic(&f, &grid, &disp).unwrap();
            let kg = apply_kinetic(&g, &grid, &disp).unwrap();
            let lhs = grid.inner(&f, &kg) - grid.inner(&kf, &g);
            prop_assert!(lhs.norm() <= 1e-10 * grid.norm(&f) * grid.norm(&g));
        }
    }

    #[test]
    fn relativistic_symbol_bounds(eps in 0.01f64..2.0, m0 in 0.05f64..5.0) {
        let grid = make_grid(1, 256, 8.0, eps).unwrap();
        let rel = grid.symbol_table(&DispersionKind::Relativistic { m0 });
        let nonrel = grid.symbol_table(&DispersionKind::NonRelativistic { m0 });
        for k in 0..grid.len() {
            let q = eps * grid.momentum_norm(k);
            prop_assert!(rel[k] >= m0.max(q));
            let diff = nonrel[k] - rel[k];
            prop_assert!(diff >= -1e-12 * rel[k]);
            prop_assert!(diff <= q.powi(4) / (8.0 * m0.powi(3)) * (1.0 + 1e-12) + 1e-12 * rel[k]);
        }
    }

    #[test]
    fn convolution_of_real_density_is_real(grid in grid_strategy(), g in -2.0f64..2.0, s in 0.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pot = PotentialSpec::gaussian(&grid, g, s).unwrap();
        let rho: Field = (0..grid.len()).map(|_| Complex64::new(rng.random_range(0.0..1.0), 0.0)).collect();
        // an error would mean an imaginary part above tolerance
        let out = convolve_potential(&rho, &grid, &pot).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn position_commutator_is_gauge_invariant(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 64, 8.0, 0.25).unwrap();
        let orbitals = random_orbitals(&grid, n, &mut rng);
        let phases: Vec<Complex64> = (0..n).map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..6.3))).collect();
        let a = orbitals.commutator_with_position(0).trace_norm().unwrap();
        let b = orbitals.with_phases(&phases).commutator_with_position(0).trace_norm().unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300));
    }

    #[test]
    fn trace_norm_is_invariant_under_plane_wave_conjugation(seed in any::<u64>(), q in -10i64..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 64, 8.0, 0.25).unwrap();
        let orbitals = random_orbitals(&grid, 3, &mut rng);
        let comm = orbitals.commutator_with_position(0);
        let k = grid.flat_from_dual([q, 0, 0]);
        let phase: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::from_polar(1.0, grid.momentum(k, 0) * grid.position(i, 0)))
            .collect();
        let a = comm.trace_norm().unwrap();
        let b = comm.conjugated_by_multiplication(&phase).trace_norm().unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn exchange_matches_mode_sum(seed in any::<u64>(), n in 1usize..4, s in 0.2f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 16, 6.0, 0.5).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.7, s).unwrap();
        let orbitals = random_orbitals(&grid, n, &mut rng);
        let g = random_field(&grid, &mut rng);
        let a = orbitals.apply_exchange(&pot, &g).unwrap();
        let b = orbitals.apply_exchange_mode_sum(&pot, &g).unwrap();
        let diff = grid.norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
        prop_assert!(diff <= 1e-8 * grid.norm(&a).max(1e-300));
    }

    #[test]
    fn energy_is_bounded_below_by_rest_mass(seed in any::<u64>(), n in 1usize..6, g in 0.0f64..3.0, m0 in 0.2f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 64, 8.0, 0.25).unwrap();
        let pot = PotentialSpec::gaussian(&grid, g, 0.8).unwrap();
        let orbitals = random_orbitals(&grid, n, &mut rng);
        let e = hf_energy(&orbitals, &pot, &DispersionKind::Relativistic { m0 }).unwrap();
        prop_assert!(e >= n as f64 * m0 * (1.0 - 1e-12));
    }

    #[test]
    fn growth_envelope_covers_its_data(seed in any::<u64>(), c in -0.5f64..2.0, noise in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| 3.0 * (c * t).exp() * (1.0 + rng.random_range(0.0..=noise)))
            .collect();
        let fit = growth_fit(&times, &values, 10, 0.1).unwrap();
        for (t, v) in times.iter().zip(&values) {
            prop_assert!(*v <= 1.1 * fit.envelope(*t, 10, 0.1) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn wigner_position_marginal_is_the_density(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 64, 8.0, 0.25).unwrap();
        let orbitals = random_orbitals(&grid, n, &mut rng);
        let w = wigner_transform(&orbitals, VelocityGrid::for_grid(&grid)).unwrap();
        let rho = orbitals.reduced_density();
        let marginal = w.position_marginal();
        for (a, b) in rho.iter().zip(&marginal) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn vlasov_conserves_mass(seed in any::<u64>(), g in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 32, 8.0, 0.25).unwrap();
        let orbitals = random_orbitals(&grid, 2, &mut rng);
        let w = wigner_transform(&orbitals, VelocityGrid::for_grid(&grid)).unwrap();
        let pot = PotentialSpec::gaussian(&grid, g, 1.0).unwrap();
        let run = vlasov_evolve(w, &pot, 1.0, 1e-2, 0.2, 5).unwrap();
        prop_assert!(run.max_mass_step <= MASS_TOLERANCE);
    }

    #[test]
    fn container_round_trip_is_bitwise(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = make_grid(1, 32, 5.0, 0.3).unwrap();
        let orbitals = random_orbitals(&grid, n, &mut rng);
        let mut buf = Vec::new();
        write_orbitals(&mut buf, &orbitals).unwrap();
        let back = read_orbitals(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.grid(), orbitals.grid());
        prop_assert_eq!(back.orbitals(), orbitals.orbitals());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exact_dynamics_respects_pauli_and_hermiticity(n in 1usize..4, coupling in 0.0f64..1.0, width in 0.3f64..1.5, t in 0.0f64..1.0) {
        let model = ModeModel::gaussian(8, 6.0, 0.5, DispersionKind::Relativistic { m0: 1.0 }, coupling, width).unwrap();
        let basis = FockBasis::new(8, n).unwrap();
        let h = build_hamiltonian(&basis, &model).unwrap();
        prop_assert!(h.hermiticity_residual() <= 1e-14);
        let psi0 = slater_vector(&basis, &model.fermi_sea(n).unwrap()).unwrap();
        let psi = evolve_exact(&psi0, &h, t, 0.5).unwrap();
        prop_assert!((psi.norm() - 1.0).abs() <= 1e-9);
        let (eigs, _) = hermitian_eigen(reduced_density_1(&psi, &basis));
        prop_assert!(eigs.iter().all(|e| *e >= -1e-10 && *e <= 1.0 + 1e-10));
        let trace: f64 = eigs.iter().sum();
        prop_assert!((trace - n as f64).abs() <= 1e-10);
    }

    #[test]
    fn single_particle_exact_and_mean_field_agree(coupling in 0.0f64..1.0, width in 0.3f64..1.5) {
        let model = ModeModel::gaussian(10, 6.0, 0.5, DispersionKind::Relativistic { m0: 1.0 }, coupling, width).unwrap();
        let run = oracle_run(&model, 1, 1.0, 200, 20).unwrap();
        prop_assert!(run.gap.iter().all(|g| *g <= 1e-9));
    }
}

#[test]
fn massless_evolution_conserves_energy_and_trace() {
    let grid = make_grid(1, 128, 8.0, 0.125).unwrap();
    let pot = PotentialSpec::gaussian(&grid, 0.5, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let orbitals = random_orbitals(&grid, 4, &mut rng);
    let cfg = EvolutionConfig::new(2e-3, 0.5, DispersionKind::Massless);
    let (_, series) = evolve(SimState::new(orbitals, &pot, cfg).unwrap(), 10, &mut []).unwrap();
    let e0 = series.energy[0];
    let drift = series.energy.iter().map(|e| (e - e0).abs() / e0.abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-6 * 0.5, "{drift}");
    assert!(series.extra["trace"].iter().all(|t| (t - 4.0).abs() <= 1e-9));
    assert!(series.extra["projection_residual"].iter().all(|p| *p <= 1e-8));
}
