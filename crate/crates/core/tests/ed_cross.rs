use num_complex::Complex64;
use rhfs_core::density::OrbitalSet;
use rhfs_core::dynamics::{evolve, EvolutionConfig, SimState};
use rhfs_core::ed::{ModeHartreeFock, ModeModel};
use rhfs_core::linalg::{frobenius_sq, CMatrix};
use rhfs_core::{make_grid, DispersionKind, PotentialSpec};

const REL: DispersionKind = DispersionKind::Relativistic { m0: 1.0 };

/// Plane-wave coefficients `f̂(k) = L^{-1/2} ∫ f e^{-ipx}` in mode order.
fn mode_density(orbitals: &OrbitalSet) -> CMatrix {
    let grid = orbitals.grid();
    let m = grid.points_per_dim();
    let coeffs: Vec<Vec<Complex64>> = orbitals
        .orbitals()
        .iter()
        .map(|f| {
            let hat = grid.forward(f);
            (0..m)
                .map(|i| {
                    let k = i as i64 - (m / 2) as i64;
                    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    hat[k.rem_euclid(m as i64) as usize] * (sign * grid.spacing() / grid.box_length().sqrt())
                })
                .collect()
        })
        .collect();
    CMatrix::from_fn(m, m, |a, b| coeffs.iter().map(|c| c[a] * c[b].conj()).sum())
}

#[test]
fn mode_space_hartree_fock_matches_grid_propagator() {
    let (m, l, eps, n) = (16, 7.0, 0.4, 3);
    let grid = make_grid(1, m, l, eps).unwrap();
    let pot = PotentialSpec::gaussian(&grid, 0.8, 0.6).unwrap();
    let model = ModeModel::gaussian(m, l, eps, REL, 0.8, 0.6).unwrap();
    // an off-centre determinant so the dynamics is not stationary
    let modes = [6, 8, 11];
    let flat: Vec<usize> = modes.iter().map(|&i| grid.flat_from_dual([i as i64 - (m / 2) as i64, 0, 0])).collect();
    let start = OrbitalSet::plane_waves(&grid, &flat).unwrap();
    let mut hf = ModeHartreeFock::from_modes(&model, &modes).unwrap();
    assert!(frobenius_sq(&(mode_density(&start) - hf.density_matrix())) < 1e-24);

    // mix the orbitals with a fixed unitary so ω is not diagonal in modes
    let mixer = CMatrix::from_fn(m, m, |r, c| Complex64::new(((r * 3 + c) % 5) as f64 * 0.1, ((r + c) % 2) as f64 * 0.05));
    let kick: CMatrix = (&mixer + mixer.adjoint()) * Complex64::new(0.0, -0.3);
    let unitary = kick.exp();
    hf.orbitals = &unitary * &hf.orbitals;
    let rotated: Vec<Vec<Complex64>> = (0..n)
        .map(|j| {
            let col: Vec<Complex64> = (0..m)
                .map(|i| {
                    let k = i as i64 - (m / 2) as i64;
                    hf.orbitals[(i, j)] * if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 }
                })
                .collect();
            // back to grid values: f(x_a) = L^{-1/2} Σ f̂(k) e^{ipx_a}
            let mut spectrum = vec![Complex64::new(0.0, 0.0); m];
            for (i, c) in col.iter().enumerate() {
                let k = i as i64 - (m / 2) as i64;
                spectrum[k.rem_euclid(m as i64) as usize] = *c;
            }
            grid.inverse(&spectrum).into_iter().map(|v| v * (m as f64 / l.sqrt())).collect()
        })
        .collect();
    let start = OrbitalSet::new(grid.clone(), rotated).unwrap();
    assert!(frobenius_sq(&(mode_density(&start) - hf.density_matrix())) < 1e-24);

    let (dt, steps) = (2e-3, 250);
    let cfg = EvolutionConfig {
        reortho_every: 1000,
        ..EvolutionConfig::new(dt, dt * steps as f64, REL)
    };
    let (end, _) = evolve(SimState::new(start, &pot, cfg).unwrap(), steps, &mut []).unwrap();
    for _ in 0..steps {
        hf.step(dt);
    }
    let diff = frobenius_sq(&(mode_density(&end.orbitals) - hf.density_matrix()));
    assert!(diff < 1e-18, "{diff}");
}
