//! Built-in check suite: closed-form values, fast oracles and structural
//! identities, one line per check. Fully seeded, so two runs print the same
//! report. The hidden `--inject-counterterm-bias` flag corrupts the
//! interaction baseline on purpose; the suite must catch it.

use std::process::ExitCode;

use bose2d_core::classical::{
    estimate_partition_z, generate_ensemble, interaction_energy, moment_matrix,
    sample_free_field, wick_cauchy_check, FieldSample, InteractionKernel, SamplingPlan,
};
use bose2d_core::compare::{convergence_report, schatten_norm, ComparisonRow, DmGap, VerdictSettings};
use bose2d_core::fock::{
    apply_ladder, assemble_hamiltonian, enumerate_sector, number_and_momentum, Ladder,
};
use bose2d_core::gibbs::{
    free_energy_functional, gibbs_state, reduced_density_matrix,
    reduced_density_matrix_via_partial_trace, truncation_control, GibbsOptions,
    TruncationSettings,
};
use bose2d_core::model::{
    bose_particle_number, counterterm_density, coupling_schedule, ModeSet, Potential,
};
use bose2d_core::nalgebra::{DMatrix, DVector};
use bose2d_core::num_complex::Complex64;
use bose2d_core::rand::SeedableRng;
use bose2d_core::rand_chacha::ChaCha8Rng;

type CheckResult = Result<String, String>;

struct Ctx {
    counterterm_bias: f64,
}

fn approx(actual: f64, expected: f64, tol: f64, what: &str) -> CheckResult {
    let scale = expected.abs().max(1.0);
    if (actual - expected).abs() <= tol * scale {
        Ok(format!("{what} = {actual:.12e}"))
    } else {
        Err(format!("{what} = {actual:.12e}, expected {expected:.12e} (tol {tol:.1e})"))
    }
}

fn single_mode() -> ModeSet {
    ModeSet::from_pairs([(0, 0)]).unwrap()
}

fn ball1() -> ModeSet {
    ModeSet::ball(1.0).unwrap()
}

fn check_counterterm_values(_ctx: &Ctx) -> CheckResult {
    let c1 = counterterm_density(&single_mode(), 1.0, None).map_err(|e| e.to_string())?;
    approx(c1, 1.0, 1e-15, "c(single)")?;
    let c5 = counterterm_density(&ball1(), 1.0, None).map_err(|e| e.to_string())?;
    let oracle = 1.0 + 4.0 / (4.0 * std::f64::consts::PI.powi(2) + 1.0);
    approx(c5, oracle, 1e-14, "c(ball1)")
}

fn check_counterterm_monotone(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let mut last = f64::INFINITY;
    for exp in 0..6 {
        let c = counterterm_density(&s, 10f64.powi(exp), None).map_err(|e| e.to_string())?;
        if !(c < last && c > 0.0) {
            return Err(format!("not strictly decreasing at kappa = 1e{exp}"));
        }
        last = c;
    }
    Ok(format!("c -> {last:.3e} at kappa = 1e5"))
}

fn check_bose_number(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let n1 = bose_particle_number(&s, 1.0, 1.0).map_err(|e| e.to_string())?;
    approx(n1, 1.0 / (1f64.exp() - 1.0), 1e-14, "N0(T=1)")?;
    let n100 = bose_particle_number(&s, 1.0, 100.0).map_err(|e| e.to_string())?;
    approx(n100, 99.50083333194445, 1e-12, "N0(T=100)")
}

fn check_bose_density_limit(_ctx: &Ctx) -> CheckResult {
    let s = ModeSet::ball(2.0).unwrap();
    let c = counterterm_density(&s, 1.0, None).map_err(|e| e.to_string())?;
    let g3 = (bose_particle_number(&s, 1.0, 1e3).map_err(|e| e.to_string())? / 1e3 - c).abs();
    let g4 = (bose_particle_number(&s, 1.0, 1e4).map_err(|e| e.to_string())? / 1e4 - c).abs();
    if g4 < g3 && g4 < 1e-3 * c {
        Ok(format!("relative gap {:.2e} -> {:.2e}", g3 / c, g4 / c))
    } else {
        Err(format!("N0/T does not approach the counterterm: {g3:.3e} -> {g4:.3e}"))
    }
}

fn check_schedule(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let wz = Potential::zero(&s);
    let (nu, e0) = coupling_schedule(&s, &wz, 2.0, 3.0, 1.5).map_err(|e| e.to_string())?;
    if (nu, e0) != (-2.0, 0.0) {
        return Err(format!("zero potential gave ({nu}, {e0})"));
    }
    let w = Potential::constant(1.0, &s).unwrap();
    let (nu, e0) = coupling_schedule(&s, &w, 1.0, 1.0, 0.0).map_err(|e| e.to_string())?;
    if (nu, e0) != (-1.0, 0.0) {
        return Err(format!("lambda = 0 gave ({nu}, {e0})"));
    }
    let (nu, e0) = coupling_schedule(&s, &w, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    approx(nu, -0.4180232931306736, 1e-12, "nu")?;
    approx(e0, 0.1693484436692329, 1e-12, "E0")
}

fn check_sector_enumeration(_ctx: &Ctx) -> CheckResult {
    let s3 = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
    let b = enumerate_sector(&s3, 2, None).map_err(|e| e.to_string())?;
    if b.dim() != 6 || b.state(0) != [2, 0, 0] || b.state(5) != [0, 0, 2] {
        return Err("3-mode n=2 enumeration out of order".into());
    }
    let vac = enumerate_sector(&s3, 0, None).map_err(|e| e.to_string())?;
    if vac.dim() != 1 {
        return Err("vacuum sector is not a single state".into());
    }
    let b5 = enumerate_sector(&ball1(), 3, None).map_err(|e| e.to_string())?;
    if b5.dim() != 35 {
        return Err(format!("5-mode n=3 sector has {} states, expected 35", b5.dim()));
    }
    Ok("orders and sizes as expected".into())
}

fn check_ladder(_ctx: &Ctx) -> CheckResult {
    if apply_ladder(&[0u16], 0, Ladder::Annihilate, None)
        .map_err(|e| e.to_string())?
        .is_some()
    {
        return Err("annihilating the vacuum did not vanish".into());
    }
    let (_, amp) = apply_ladder(&[3u16], 0, Ladder::Create, None)
        .map_err(|e| e.to_string())?
        .ok_or("create failed")?;
    approx(amp, 2.0, 1e-15, "a^dag |3>")?;
    let (down, a1) = apply_ladder(&[5u16], 0, Ladder::Annihilate, None)
        .map_err(|e| e.to_string())?
        .ok_or("annihilate failed")?;
    let (_, a2) = apply_ladder(&down, 0, Ladder::Create, None)
        .map_err(|e| e.to_string())?
        .ok_or("create failed")?;
    approx(a1 * a2, 5.0, 1e-15, "a^dag a |5>")
}

fn check_hamiltonian_single_mode(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let w = Potential::constant(1.0, &s).unwrap();
    let b = enumerate_sector(&s, 2, None).unwrap();
    let h = assemble_hamiltonian(&b, &s, &w, 1.0).map_err(|e| e.to_string())?.to_dense();
    approx(h[(0, 0)], 1.0, 1e-14, "pair energy n=2")
}

fn check_hamiltonian_hermitian(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let w = Potential::gaussian(0.9, 0.015, &s).unwrap();
    let b = enumerate_sector(&s, 3, None).unwrap();
    let h = assemble_hamiltonian(&b, &s, &w, 0.8).map_err(|e| e.to_string())?;
    let asym = h.asymmetry();
    if asym < 1e-12 {
        Ok(format!("max asymmetry {asym:.2e}"))
    } else {
        Err(format!("asymmetry {asym:.2e}"))
    }
}

fn check_momentum_commutator(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let w = Potential::gaussian(1.0, 0.02, &s).unwrap();
    let b = enumerate_sector(&s, 3, None).unwrap();
    let h = assemble_hamiltonian(&b, &s, &w, 0.9).map_err(|e| e.to_string())?.to_dense();
    let nm = number_and_momentum(&b, &s);
    let mut worst = 0.0f64;
    for p in &nm.momentum {
        let pd = p.to_dense();
        let comm = &h * &pd - &pd * &h;
        worst = worst.max(comm.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    }
    if worst < 1e-10 {
        Ok(format!("max |[H,P]| = {worst:.2e}"))
    } else {
        Err(format!("commutator {worst:.2e}"))
    }
}

fn check_eint_baseline(ctx: &Ctx) -> CheckResult {
    // Vacuum-field baseline: E_int[0] = w(0) c^2 / 2 exactly, and every
    // sampled energy is non-negative. A corrupted counterterm shifts the
    // baseline and must fail here.
    let s = single_mode();
    let w = Potential::constant(1.0, &s).unwrap();
    let kernel = InteractionKernel::new(&s, &w, 1.0, None).map_err(|e| e.to_string())?;
    let c = kernel.counterterm() + ctx.counterterm_bias;
    let zero = FieldSample { amps: vec![Complex64::new(0.0, 0.0)] };
    let e = kernel.energy_with_counterterm(&zero, c);
    if e < 0.0 {
        return Err(format!("vacuum energy {e} < 0"));
    }
    approx(e, 0.5, 1e-12, "E_int[0]")?;
    let one = FieldSample { amps: vec![Complex64::new(1.0, 0.0)] };
    approx(kernel.energy_with_counterterm(&one, c), 0.0, 1e-12, "E_int[|u|=1]")?;
    let two = FieldSample { amps: vec![Complex64::new(2.0, 0.0)] };
    approx(kernel.energy_with_counterterm(&two, c), 4.5, 1e-12, "E_int[|u|=2]")
}

fn check_eint_quartic_oracle(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let w = Potential::gaussian(0.9, 0.01, &s).unwrap();
    let kappa = 0.8;
    let c = counterterm_density(&s, kappa, None).unwrap();
    let w0 = w.at_zero().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = sample_free_field(&s, kappa, &mut rng).unwrap();
        let fast = interaction_energy(&u, &s, &w, kappa, None).map_err(|e| e.to_string())?;
        // Independent quadruple-sum oracle with the counterterm expanded.
        let mut quartic = Complex64::new(0.0, 0.0);
        for qt in s.transfers() {
            let wv = w.value(qt).unwrap();
            for (pi, p) in s.modes().iter().enumerate() {
                let Some(pki) =
                    s.index_of(bose2d_core::model::Mode::new(p.m.0 + qt.0, p.m.1 + qt.1))
                else {
                    continue;
                };
                for (qi, q) in s.modes().iter().enumerate() {
                    let Some(qki) =
                        s.index_of(bose2d_core::model::Mode::new(q.m.0 - qt.0, q.m.1 - qt.1))
                    else {
                        continue;
                    };
                    quartic +=
                        wv * u.amps[pki].conj() * u.amps[qki].conj() * u.amps[pi] * u.amps[qi];
                }
            }
        }
        let mass: f64 = u.amps.iter().map(|a| a.norm_sqr()).sum();
        let slow = 0.5 * quartic.re - w0 * c * mass + 0.5 * w0 * c * c;
        worst = worst.max((fast - slow).abs() / slow.abs().max(1e-12));
        if fast < 0.0 {
            return Err(format!("negative interaction energy {fast}"));
        }
    }
    if worst < 1e-12 {
        Ok(format!("max relative gap {worst:.2e} over 20 samples"))
    } else {
        Err(format!("oracle mismatch {worst:.2e}"))
    }
}

fn check_sampler_determinism(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let mut r1 = ChaCha8Rng::seed_from_u64(1);
    let mut r2 = ChaCha8Rng::seed_from_u64(1);
    let a = sample_free_field(&s, 1.0, &mut r1).unwrap();
    let b = sample_free_field(&s, 1.0, &mut r2).unwrap();
    if a == b {
        Ok("identical draws for identical seeds".into())
    } else {
        Err("same seed produced different samples".into())
    }
}

fn check_z_free(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let w = Potential::zero(&s);
    let plan = SamplingPlan { master_seed: 2, streams: 2, samples: 200 };
    let ens = generate_ensemble(&s, &w, 1.0, &plan, None).map_err(|e| e.to_string())?;
    let (z, se) = estimate_partition_z(&ens).map_err(|e| e.to_string())?;
    if z == 1.0 && se == 0.0 {
        Ok("z = 1 exactly".into())
    } else {
        Err(format!("z = {z} +- {se}"))
    }
}

fn z_quadrature_oracle() -> f64 {
    fn f(t: f64) -> f64 {
        (-t - 0.5 * (t - 1.0) * (t - 1.0)).exp()
    }
    fn simpson(a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn adapt(a: f64, b: f64, whole: f64, eps: f64) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simpson(a, m), simpson(m, b));
        if (l + r - whole).abs() < 15.0 * eps {
            l + r + (l + r - whole) / 15.0
        } else {
            adapt(a, m, l, eps / 2.0) + adapt(m, b, r, eps / 2.0)
        }
    }
    adapt(0.0, 40.0, simpson(0.0, 40.0), 1e-13)
}

fn check_z_quadrature(_ctx: &Ctx) -> CheckResult {
    let oracle = z_quadrature_oracle();
    approx(oracle, 0.7601734505331404, 1e-10, "quadrature z")?;
    let s = single_mode();
    let w = Potential::constant(1.0, &s).unwrap();
    let plan = SamplingPlan { master_seed: 5, streams: 8, samples: 200_000 };
    let ens = generate_ensemble(&s, &w, 1.0, &plan, None).map_err(|e| e.to_string())?;
    let (z, se) = estimate_partition_z(&ens).map_err(|e| e.to_string())?;
    if (z - oracle).abs() < 3.0 * se {
        Ok(format!("MC z = {z:.6} vs quadrature {oracle:.6} ({:.1} se)", (z - oracle).abs() / se))
    } else {
        Err(format!("MC z = {z} vs quadrature {oracle} (se {se:.2e})"))
    }
}

fn check_gibbs_geometric(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let w = Potential::zero(&s);
    let sol = gibbs_state(&s, &w, 1.0, 1.0, 0.0, &[120u16], &GibbsOptions::default())
        .map_err(|e| e.to_string())?;
    approx(sol.z, 1.5819767068693265, 1e-12, "Z (free)")?;
    approx(sol.free_energy, -0.4586751453870819, 1e-10, "F (free)")?;
    approx(sol.expected_n, 1.0 / (1f64.exp() - 1.0), 1e-12, "<N>")
}

fn check_gibbs_series_oracle(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let w = Potential::constant(1.0, &s).unwrap();
    let sol = gibbs_state(&s, &w, 1.0, 1.0, 1.0, &[60u16], &GibbsOptions::default())
        .map_err(|e| e.to_string())?;
    let nu = 1.0 / (1f64.exp() - 1.0) - 1.0;
    let mut z = 0.0;
    for n in 0..=60u32 {
        z += (-(0.5 * n as f64 * (n as f64 - 1.0) - nu * n as f64)).exp();
    }
    approx(sol.z, z, 1e-10, "Z (interacting series)")
}

fn check_bose_einstein_rdm(_ctx: &Ctx) -> CheckResult {
    let s = ball1();
    let w = Potential::zero(&s);
    let settings = TruncationSettings { epsilon_z: 1e-10, ..Default::default() };
    let sol = truncation_control(&s, &w, 1.0, 2.0, 0.0, &settings)
        .map_err(|e| e.to_string())?
        .solution;
    let g1 = reduced_density_matrix(&sol, 1).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, mode) in s.modes().iter().enumerate() {
        let be = 1.0 / (((mode.kinetic() + 1.0) / 2.0).exp() - 1.0);
        worst = worst.max((g1.matrix[(i, i)] - be).abs() / be.max(1e-12));
    }
    if worst < 1e-8 {
        Ok(format!("max relative gap {worst:.2e}"))
    } else {
        Err(format!("Bose occupation gap {worst:.2e}"))
    }
}

fn check_moment_wick(_ctx: &Ctx) -> CheckResult {
    let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
    let w = Potential::zero(&s);
    let plan = SamplingPlan { master_seed: 37, streams: 8, samples: 200_000 };
    let ens = generate_ensemble(&s, &w, 1.0, &plan, None).map_err(|e| e.to_string())?;
    let n = ens.len() as f64;
    let m2 = moment_matrix(&ens, 2, &s).map_err(|e| e.to_string())?;
    let basis = enumerate_sector(&s, 2, None).unwrap();
    let sigma: Vec<f64> = s.modes().iter().map(|m| 1.0 / (m.kinetic() + 1.0)).collect();
    let i_double = basis.index_of(&[0, 2, 0]).unwrap();
    let expect = 2.0 * sigma[1] * sigma[1];
    let se = 20f64.sqrt() * sigma[1] * sigma[1] / n.sqrt();
    if (m2[(i_double, i_double)].re - expect).abs() > 4.0 * se {
        return Err(format!(
            "E|u0|^4: {} vs {expect} (se {se:.2e})",
            m2[(i_double, i_double)].re
        ));
    }
    let i_pair = basis.index_of(&[1, 1, 0]).unwrap();
    let expect_pair = 2.0 * sigma[0] * sigma[1];
    let se_pair = 12f64.sqrt() * sigma[0] * sigma[1] / n.sqrt();
    if (m2[(i_pair, i_pair)].re - expect_pair).abs() > 4.0 * se_pair {
        return Err(format!(
            "pair moment: {} vs {expect_pair} (se {se_pair:.2e})",
            m2[(i_pair, i_pair)].re
        ));
    }
    Ok("k = 2 moments match the Gaussian pairing values".into())
}

fn check_rdm_identities(_ctx: &Ctx) -> CheckResult {
    let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
    let w = Potential::gaussian(0.8, 0.01, &s).unwrap();
    let sol = gibbs_state(&s, &w, 0.9, 1.5, 0.6, &[12u16, 12, 12], &GibbsOptions::default())
        .map_err(|e| e.to_string())?;
    for k in 1..=2u32 {
        let a = reduced_density_matrix(&sol, k).map_err(|e| e.to_string())?;
        let b = reduced_density_matrix_via_partial_trace(&sol, k).map_err(|e| e.to_string())?;
        let gap = (&a.matrix - &b.matrix).abs().max();
        if gap > 1e-10 {
            return Err(format!("route disagreement {gap:.2e} at k = {k}"));
        }
        let expect = sol.expected_binomial(k);
        if (a.trace - expect).abs() > 1e-10 {
            return Err(format!("trace identity broken at k = {k}: {} vs {expect}", a.trace));
        }
    }
    Ok("correlator = partial trace, tr G^(k) = E[binom(N,k)]".into())
}

fn check_variational_minimality(_ctx: &Ctx) -> CheckResult {
    let s = single_mode();
    let w = Potential::constant(1.0, &s).unwrap();
    let (kappa, t, lambda) = (1.0, 2.0, 0.5);
    let sol = gibbs_state(&s, &w, kappa, t, lambda, &[80u16], &GibbsOptions::default())
        .map_err(|e| e.to_string())?;
    let state = sol.to_spectral_state();
    let f = free_energy_functional(&state, &s, &w, kappa, t, lambda).map_err(|e| e.to_string())?;
    approx(f, sol.free_energy, 1e-8, "functional at the Gibbs state")?;
    for scale in [0.9, 1.1] {
        let p = state.reweighted(|_, q| q.powf(1.0 / scale));
        let fp = free_energy_functional(&p, &s, &w, kappa, t, lambda).map_err(|e| e.to_string())?;
        if fp <= f {
            return Err(format!("perturbed functional {fp} <= {f}"));
        }
    }
    Ok("perturbed states sit strictly above".into())
}

fn check_schatten(_ctx: &Ctx) -> CheckResult {
    let m = DMatrix::<Complex64>::from_diagonal(&DVector::from_vec(vec![
        Complex64::new(3.0, 0.0),
        Complex64::new(-4.0, 0.0),
    ]));
    approx(schatten_norm(&m, 1.0).map_err(|e| e.to_string())?, 7.0, 1e-12, "S1")?;
    approx(schatten_norm(&m, 2.0).map_err(|e| e.to_string())?, 5.0, 1e-12, "S2")?;
    let id = DMatrix::<Complex64>::identity(2, 2);
    approx(schatten_norm(&id, 2.0).map_err(|e| e.to_string())?, 2f64.sqrt(), 1e-12, "S2(I)")
}

fn check_wick_trivial(_ctx: &Ctx) -> CheckResult {
    let s = ModeSet::ball(2.0).unwrap();
    let plan = SamplingPlan { master_seed: 3, streams: 4, samples: 1000 };
    let w = Potential::gaussian(1.0, 0.02, &s).unwrap();
    let t = wick_cauchy_check(&s, &[1.0, 1.0], &w, 1.0, &plan).map_err(|e| e.to_string())?;
    if t.gaps[0].l1_mean != 0.0 {
        return Err("identical cutoffs produced a non-zero gap".into());
    }
    let wz = Potential::zero(&s);
    let t = wick_cauchy_check(&s, &[1.0, 2.0], &wz, 1.0, &plan).map_err(|e| e.to_string())?;
    if t.gaps[0].l1_mean != 0.0 || t.per_radius[1].eint_mean != 0.0 {
        return Err("zero potential produced non-zero energies".into());
    }
    Ok("identical cutoffs and zero potential give exact zeros".into())
}

fn check_report_synthetic(_ctx: &Ctx) -> CheckResult {
    let row = |t: f64, g: f64| ComparisonRow {
        temperature: t,
        lambda: 1.0 / t,
        nu: 0.0,
        e0: 0.0,
        delta_f: g,
        neg_log_z: 0.0,
        neg_log_z_se: 0.0,
        dm_gaps: vec![DmGap { k: 1, p: 2.0, value: g, se: 0.0 }],
        g_s1: g,
        g_s1_se: 0.0,
    };
    let mut settings = VerdictSettings::default();
    settings.tolerances.insert("fe_gap".into(), 0.15);
    let good = [row(4.0, 0.4), row(8.0, 0.2), row(16.0, 0.1)];
    let r = convergence_report(&good, &settings).map_err(|e| e.to_string())?;
    if !r.overall_pass {
        return Err("decaying synthetic rows did not pass".into());
    }
    let bad = [row(4.0, 0.1), row(8.0, 0.3), row(16.0, 0.2)];
    let r = convergence_report(&bad, &settings).map_err(|e| e.to_string())?;
    if r.overall_pass {
        return Err("non-monotone synthetic rows passed".into());
    }
    Ok("pass and fail verdicts as constructed".into())
}

pub fn run(counterterm_bias: f64) -> ExitCode {
    let ctx = Ctx { counterterm_bias };
    let checks: Vec<(&str, fn(&Ctx) -> CheckResult)> = vec![
        ("counterterm_values", check_counterterm_values),
        ("counterterm_monotone", check_counterterm_monotone),
        ("bose_number", check_bose_number),
        ("bose_density_limit", check_bose_density_limit),
        ("coupling_schedule", check_schedule),
        ("sector_enumeration", check_sector_enumeration),
        ("ladder_operators", check_ladder),
        ("hamiltonian_single_mode", check_hamiltonian_single_mode),
        ("hamiltonian_hermitian", check_hamiltonian_hermitian),
        ("momentum_commutator", check_momentum_commutator),
        ("eint_positivity_baseline", check_eint_baseline),
        ("eint_quartic_oracle", check_eint_quartic_oracle),
        ("sampler_determinism", check_sampler_determinism),
        ("z_free_theory", check_z_free),
        ("z_quadrature_oracle", check_z_quadrature),
        ("gibbs_geometric_series", check_gibbs_geometric),
        ("gibbs_series_oracle", check_gibbs_series_oracle),
        ("bose_einstein_rdm", check_bose_einstein_rdm),
        ("moment_wick_values", check_moment_wick),
        ("rdm_identities", check_rdm_identities),
        ("variational_minimality", check_variational_minimality),
        ("schatten_values", check_schatten),
        ("wick_trivial_cases", check_wick_trivial),
        ("report_synthetic", check_report_synthetic),
    ];
    let mut failures = Vec::new();
    for (name, check) in &checks {
        match check(&ctx) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failures.push(*name);
            }
        }
    }
    if failures.is_empty() {
        println!("selftest: {} checks passed", checks.len());
        ExitCode::SUCCESS
    } else {
        println!("selftest: {} of {} checks failed: {}", failures.len(), checks.len(), failures.join(", "));
        ExitCode::from(1)
    }
}
