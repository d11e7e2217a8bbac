//! Cross-subsystem identities: quantum truncation against classical
//! ensembles, variational minimality, and the structural density-matrix
//! relations.

use bose2d_core::classical::{
    estimate_partition_z, generate_ensemble, moment_matrix, SamplingPlan,
};
use bose2d_core::compare::schatten_norm_real;
use bose2d_core::gibbs::{
    free_energy_functional, gibbs_state, reduced_density_matrix,
    reduced_density_matrix_via_partial_trace, truncation_control, BlockVectors, GibbsOptions,
    TruncationSettings,
};
use bose2d_core::model::{bose_particle_number, ModeSet, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gibbs_minimality_against_randomized_perturbations() {
    let modes = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
    let w = Potential::gaussian(0.9, 0.02, &modes).unwrap();
    let (kappa, t, lambda) = (0.8, 1.5, 0.5);
    let caps = [14u16, 14, 14];
    let sol = gibbs_state(&modes, &w, kappa, t, lambda, &caps, &GibbsOptions::default()).unwrap();
    let state = sol.to_spectral_state();
    let f_gibbs = free_energy_functional(&state, &modes, &w, kappa, t, lambda).unwrap();
    assert!((f_gibbs - sol.free_energy).abs() <= 1e-8 * sol.free_energy.abs());

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    // Random reweightings of the spectrum.
    for _ in 0..14 {
        let eps: f64 = rng.gen_range(0.02..0.3);
        let noise: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut i = 0;
        let perturbed = state.reweighted(|_, p| {
            let x = p * (eps * noise[i % noise.len()]).exp();
            i += 1;
            x
        });
        let f = free_energy_functional(&perturbed, &modes, &w, kappa, t, lambda).unwrap();
        assert!(
            f >= f_gibbs - 1e-10 * f_gibbs.abs().max(1.0),
            "perturbed functional {f} below gibbs {f_gibbs}"
        );
        checked += 1;
    }
    // Temperature tilts.
    for scale in [0.8, 0.9, 1.1, 1.25] {
        let perturbed = state.reweighted(|_, p| p.powf(1.0 / scale));
        let f = free_energy_functional(&perturbed, &modes, &w, kappa, t, lambda).unwrap();
        assert!(f > f_gibbs, "tilt {scale}: {f} <= {f_gibbs}");
        checked += 1;
    }
    // Basis rotations inside dense momentum blocks.
    for angle in [0.1f64, 0.4, 0.9] {
        let mut rotated = state.clone();
        let mut touched = false;
        for sector in &mut rotated.sectors {
            for block in &mut sector.blocks {
                if let BlockVectors::Dense(v) = &mut block.vectors {
                    if v.ncols() >= 2 && !touched {
                        let (c, s) = (angle.cos(), angle.sin());
                        let col0 = v.column(0).clone_owned();
                        let col1 = v.column(1).clone_owned();
                        v.set_column(0, &(&col0 * c + &col1 * s));
                        v.set_column(1, &(&col1 * c - &col0 * s));
                        touched = true;
                    }
                }
            }
        }
        assert!(touched);
        let f = free_energy_functional(&rotated, &modes, &w, kappa, t, lambda).unwrap();
        assert!(f > f_gibbs, "rotation {angle}: {f} <= {f_gibbs}");
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn density_matrix_identities_on_interacting_config() {
    let modes = ModeSet::ball(1.0).unwrap();
    let w = Potential::gaussian(1.0, 0.02, &modes).unwrap();
    let caps = [10u16, 3, 3, 3, 3];
    let sol = gibbs_state(&modes, &w, 1.0, 1.2, 0.4, &caps, &GibbsOptions::default()).unwrap();
    for k in 1..=2u32 {
        let a = reduced_density_matrix(&sol, k).unwrap();
        let b = reduced_density_matrix_via_partial_trace(&sol, k).unwrap();
        let gap = (&a.matrix - &b.matrix).abs().max();
        assert!(gap < 1e-10, "k={k} correlator vs partial trace gap {gap}");
        let expect = sol.expected_binomial(k);
        assert!((a.trace - expect).abs() < 1e-10, "trace {} vs E[C(N,{k})] {expect}", a.trace);
        assert!(a.hermiticity_error() < 1e-12);
        assert!(a.min_eigenvalue() > -1e-10 * a.trace.max(1.0));
    }
    let g1 = reduced_density_matrix(&sol, 1).unwrap();
    assert!((g1.trace - sol.expected_n).abs() < 1e-10);
}

#[test]
fn free_energy_decreases_with_temperature() {
    let modes = ModeSet::from_pairs([(0, 0)]).unwrap();
    let w = Potential::constant(1.0, &modes).unwrap();
    let caps = [160u16];
    // Fixed (lambda, nu, e0): entropy positivity makes F decreasing in T.
    let mut last = f64::INFINITY;
    for t in [0.5, 1.0, 2.0, 4.0] {
        let sol = bose2d_core::gibbs::gibbs_state_with_offsets(
            &modes,
            &w,
            1.0,
            t,
            1.0,
            -0.3,
            0.0,
            &caps,
            &GibbsOptions::default(),
        )
        .unwrap();
        assert!(sol.free_energy < last, "F({t}) = {} not below {last}", sol.free_energy);
        last = sol.free_energy;
    }
}

#[test]
fn single_mode_semiclassics_shrink_with_temperature() {
    // Small version of the mean-field line: the free-energy gap and the
    // scaled one-body gap both shrink from T = 4 to T = 16.
    let modes = ModeSet::from_pairs([(0, 0)]).unwrap();
    let w = Potential::constant(1.0, &modes).unwrap();
    let kappa = 1.0;
    let z_exact = (-0.5f64).exp() * (std::f64::consts::PI / 2.0).sqrt();

    let plan = SamplingPlan { master_seed: 77, streams: 8, samples: 300_000 };
    let ens = generate_ensemble(&modes, &w, kappa, &plan, None).unwrap();
    let (z_mc, z_se) = estimate_partition_z(&ens).unwrap();
    assert!((z_mc - z_exact).abs() < 4.0 * z_se);
    let m1 = moment_matrix(&ens, 1, &modes).unwrap();

    let mut fe_gaps = Vec::new();
    let mut dm_gaps = Vec::new();
    for t in [4.0, 16.0] {
        let sol = truncation_control(&modes, &w, kappa, t, 1.0 / t, &TruncationSettings::default())
            .unwrap()
            .solution;
        let sol0 = truncation_control(&modes, &w, kappa, t, 0.0, &TruncationSettings::default())
            .unwrap()
            .solution;
        let delta_f = (sol.free_energy - sol0.free_energy) / t;
        fe_gaps.push((delta_f + z_exact.ln()).abs());
        let g1 = reduced_density_matrix(&sol, 1).unwrap();
        let diff = nalgebra::DMatrix::from_element(1, 1, g1.matrix[(0, 0)] / t - m1[(0, 0)].re);
        dm_gaps.push(schatten_norm_real(&diff, 2.0).unwrap());
    }
    assert!(fe_gaps[1] < fe_gaps[0], "fe gaps {fe_gaps:?}");
    assert!(dm_gaps[1] < dm_gaps[0], "dm gaps {dm_gaps:?}");
}

#[test]
fn particle_number_growth_is_t_log_t_like() {
    // On a lattice comfortably larger than the thermal shell the doubling
    // ratio stays near 2 with a logarithmic excess.
    let t = 100.0f64;
    let radius = (100.0 * t).sqrt() / (2.0 * std::f64::consts::PI);
    let modes = ModeSet::ball(radius.ceil()).unwrap();
    let n1 = bose_particle_number(&modes, 1.0, t).unwrap();
    let n2 = bose_particle_number(&modes, 1.0, 2.0 * t).unwrap();
    let ratio = n2 / n1;
    assert!(ratio > 1.9 && ratio < 2.3, "ratio {ratio}");
}
