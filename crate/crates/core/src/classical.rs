//! The classical (nonlinear) field ensemble.
//!
//! Under the free measure the Fourier amplitudes are independent complex
//! Gaussians, `u(k) = g_k / sqrt(|k|^2 + kappa)` with `E|g_k|^2 = 1`. The
//! renormalized interaction of a sample is
//!
//! `E_int[u] = (1/2) sum_q w(q) |rho(q)|^2`,
//! `rho(q) = sum_k u(k+q) conj(u(k)) - c * [q = 0]`,
//!
//! where `c` is the free-field mass density over the selected modes and the
//! transfer sum keeps exactly the terms whose four modes all lie in the
//! cutoff set, mirroring the quantum truncation. Since `w >= 0` the energy
//! is a sum of non-negative terms, so every sample weight `exp(-E_int)` lies
//! in (0, 1] and the interacting measure is realized by importance
//! reweighting of independent free-field draws. Streams are seeded from
//! (master seed, stream index) and merged in stream order, which makes the
//! ensemble bit-identical regardless of worker count.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{enumerate_sector, SectorBasis};
use crate::model::{counterterm_density, ModeSet, Potential};

/// One classical field configuration: a complex amplitude per mode, in the
/// canonical mode order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub amps: Vec<Complex64>,
}

/// Draw one free-field sample: independent complex Gaussians scaled by
/// `1/sqrt(|k|^2 + kappa)`, so `E|u(k)|^2 = 1/(|k|^2 + kappa)`.
pub fn sample_free_field<R: Rng + ?Sized>(
    modes: &ModeSet,
    kappa: f64,
    rng: &mut R,
) -> Result<FieldSample> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    let amps = modes
        .modes()
        .iter()
        .map(|mode| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let scale = (0.5 / (mode.kinetic() + kappa)).sqrt();
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    Ok(FieldSample { amps })
}

/// Precomputed index structure for evaluating interaction energies fast:
/// the selected cutoff modes, one pair list per momentum transfer (with the
/// +q/-q pair collapsed), and the counterterm.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    selected: Vec<usize>,
    zero_weight: f64,
    groups: Vec<TransferGroup>,
    counterterm: f64,
}

#[derive(Debug, Clone)]
struct TransferGroup {
    /// `w(q)` times 2 for the +q/-q pairing (q != 0 only).
    weight: f64,
    /// (index of k+q, index of k) into the full amplitude vector.
    pairs: Vec<(u32, u32)>,
}

impl InteractionKernel {
    pub fn new(
        modes: &ModeSet,
        potential: &Potential,
        kappa: f64,
        sub_cutoff: Option<f64>,
    ) -> Result<Self> {
        let counterterm = counterterm_density(modes, kappa, sub_cutoff)?;
        let selected = modes.cutoff_indices(sub_cutoff);
        let in_sel: std::collections::BTreeSet<usize> = selected.iter().copied().collect();

        let mut zero_weight = 0.0;
        let mut groups = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for &i in &selected {
            for &j in &selected {
                let a = modes.modes()[i].m;
                let b = modes.modes()[j].m;
                let q = (a.0 - b.0, a.1 - b.1);
                if q == (0, 0) {
                    zero_weight = potential.value(q)?;
                    continue;
                }
                // Keep one representative of each +q/-q pair.
                let canon = q.max((-q.0, -q.1));
                if !seen.insert(canon) {
                    continue;
                }
                let w = potential.value(canon)?;
                let mut pairs = Vec::new();
                for &k in &selected {
                    let km = modes.modes()[k].m;
                    let kq = crate::model::Mode::new(km.0 + canon.0, km.1 + canon.1);
                    if let Some(out) = modes.index_of(kq) {
                        if in_sel.contains(&out) {
                            pairs.push((out as u32, k as u32));
                        }
                    }
                }
                if w != 0.0 && !pairs.is_empty() {
                    groups.push(TransferGroup { weight: 2.0 * w, pairs });
                }
            }
        }
        Ok(InteractionKernel { selected, zero_weight, groups, counterterm })
    }

    pub fn counterterm(&self) -> f64 {
        self.counterterm
    }

    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }

    /// Renormalized interaction energy of one sample; non-negative.
    pub fn energy(&self, u: &FieldSample) -> f64 {
        self.energy_with_counterterm(u, self.counterterm)
    }

    /// Unsubtracted interaction (no Wick counterterm).
    pub fn energy_unsubtracted(&self, u: &FieldSample) -> f64 {
        self.energy_with_counterterm(u, 0.0)
    }

    /// Energy with an explicit counterterm value; the production value is
    /// `self.counterterm()`.
    pub fn energy_with_counterterm(&self, u: &FieldSample, counterterm: f64) -> f64 {
        let amps = &u.amps;
        let mass: f64 = self.selected.iter().map(|&i| amps[i].norm_sqr()).sum();
        let rho0 = mass - counterterm;
        let mut energy = 0.5 * self.zero_weight * rho0 * rho0;
        for group in &self.groups {
            let mut rho = Complex64::new(0.0, 0.0);
            for &(out, inp) in &group.pairs {
                rho += amps[out as usize] * amps[inp as usize].conj();
            }
            energy += 0.5 * group.weight * rho.norm_sqr();
        }
        energy
    }
}

/// Renormalized interaction energy of one sample over the (sub-)cutoff set.
pub fn interaction_energy(
    u: &FieldSample,
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    sub_cutoff: Option<f64>,
) -> Result<f64> {
    if u.amps.len() != modes.len() {
        return Err(Error::usage(format!(
            "sample has {} amplitudes for {} modes",
            u.amps.len(),
            modes.len()
        )));
    }
    Ok(InteractionKernel::new(modes, potential, kappa, sub_cutoff)?.energy(u))
}

/// How to draw an ensemble: reproducibility is a function of exactly these
/// fields plus the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    pub master_seed: u64,
    pub streams: u32,
    pub samples: usize,
}

impl SamplingPlan {
    /// Per-stream sample counts: as even as possible, deterministic.
    pub fn stream_sizes(&self) -> Vec<usize> {
        let s = self.streams.max(1) as usize;
        let base = self.samples / s;
        let extra = self.samples % s;
        (0..s).map(|i| base + usize::from(i < extra)).collect()
    }

    /// The deterministic generator of stream `i`.
    pub fn stream_rng(&self, stream: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(stream as u64);
        rng
    }
}

/// Free-field samples with their interaction energies and reweighting
/// weights `exp(-E_int)`, stored stream-contiguously.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    pub samples: Vec<FieldSample>,
    pub energies: Vec<f64>,
    pub weights: Vec<f64>,
    pub master_seed: u64,
    pub stream_count: u32,
    stream_offsets: Vec<usize>,
}

impl WeightedEnsemble {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn stream_range(&self, stream: u32) -> std::ops::Range<usize> {
        self.stream_offsets[stream as usize]..self.stream_offsets[stream as usize + 1]
    }
}

/// Draw the weighted ensemble for the interacting measure over `modes`.
/// Streams run in parallel; the merge order is fixed by stream index.
pub fn generate_ensemble(
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    plan: &SamplingPlan,
    sub_cutoff: Option<f64>,
) -> Result<WeightedEnsemble> {
    if plan.samples == 0 {
        return Err(Error::usage("sampling plan requests zero samples"));
    }
    if plan.streams == 0 {
        return Err(Error::usage("sampling plan requests zero streams"));
    }
    let kernel = InteractionKernel::new(modes, potential, kappa, sub_cutoff)?;
    let sizes = plan.stream_sizes();
    let per_stream: Vec<(Vec<FieldSample>, Vec<f64>)> = (0..plan.streams)
        .into_par_iter()
        .map(|stream| {
            let mut rng = plan.stream_rng(stream);
            let n = sizes[stream as usize];
            let mut samples = Vec::with_capacity(n);
            let mut energies = Vec::with_capacity(n);
            for _ in 0..n {
                let u = sample_free_field(modes, kappa, &mut rng)
                    .expect("kappa validated by kernel construction");
                let e = kernel.energy(&u);
                debug_assert!(e >= 0.0);
                energies.push(e);
                samples.push(u);
            }
            (samples, energies)
        })
        .collect();

    let mut samples = Vec::with_capacity(plan.samples);
    let mut energies = Vec::with_capacity(plan.samples);
    let mut stream_offsets = Vec::with_capacity(plan.streams as usize + 1);
    stream_offsets.push(0);
    for (s, e) in per_stream {
        samples.extend(s);
        energies.extend(e);
        stream_offsets.push(samples.len());
    }
    let weights: Vec<f64> = energies.iter().map(|&e| (-e).exp()).collect();
    Ok(WeightedEnsemble {
        samples,
        energies,
        weights,
        master_seed: plan.master_seed,
        stream_count: plan.streams,
        stream_offsets,
    })
}

/// Normalization estimate `z = E[exp(-E_int)]` with its standard error
/// (sample standard deviation over sqrt(n)).
pub fn estimate_partition_z(ensemble: &WeightedEnsemble) -> Result<(f64, f64)> {
    if ensemble.is_empty() {
        return Err(Error::usage("cannot estimate z from an empty ensemble"));
    }
    let n = ensemble.len() as f64;
    let mean = ensemble.weights.iter().sum::<f64>() / n;
    if ensemble.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var =
        ensemble.weights.iter().map(|&w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Per-stream z estimates (mean weight within each stream).
pub fn per_stream_z(ensemble: &WeightedEnsemble) -> Vec<f64> {
    (0..ensemble.stream_count)
        .map(|s| {
            let r = ensemble.stream_range(s);
            let n = r.len().max(1) as f64;
            ensemble.weights[r].iter().sum::<f64>() / n
        })
        .collect()
}

/// Symmetric-tensor coefficient `c_n(u) = sqrt(k!/prod n_m!) prod u(m)^n_m`
/// for an occupation vector of total k.
fn tensor_coefficient(occ: &[u16], amps: &[Complex64], k: u32) -> Complex64 {
    let mut norm = factorial(k as u64);
    let mut value = Complex64::new(1.0, 0.0);
    for (m, &n) in occ.iter().enumerate() {
        if n > 0 {
            norm /= factorial(n as u64);
            value *= amps[m].powu(n as u32);
        }
    }
    value * norm.sqrt()
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn moment_matrix_over(
    ensemble: &WeightedEnsemble,
    basis: &SectorBasis,
    k: u32,
    range: std::ops::Range<usize>,
) -> DMatrix<Complex64> {
    let dim = basis.dim();
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    let mut coeff = vec![Complex64::new(0.0, 0.0); dim];
    let mut total_weight = 0.0;
    for idx in range {
        let w = ensemble.weights[idx];
        total_weight += w;
        let amps = &ensemble.samples[idx].amps;
        for (i, occ) in basis.states().enumerate() {
            coeff[i] = tensor_coefficient(occ, amps, k);
        }
        for i in 0..dim {
            for j in 0..dim {
                acc[(i, j)] += w * coeff[i] * coeff[j].conj();
            }
        }
    }
    if total_weight > 0.0 {
        acc /= Complex64::new(total_weight, 0.0);
    }
    // Return the Hermitian part; the estimator is Hermitian in expectation.
    let herm = acc.adjoint();
    (acc + herm) * Complex64::new(0.5, 0.0)
}

/// Weighted estimate of the k-th classical moment matrix
/// `M_k[n,n'] = E_mu[c_n(u) conj(c_n'(u))]` on the k-particle occupation
/// basis (same ordering as `fock::enumerate_sector`).
pub fn moment_matrix(
    ensemble: &WeightedEnsemble,
    k: u32,
    modes: &ModeSet,
) -> Result<DMatrix<Complex64>> {
    if k == 0 {
        return Err(Error::usage("moment matrix order k must be >= 1"));
    }
    if ensemble.is_empty() {
        return Err(Error::usage("cannot build moment matrices from an empty ensemble"));
    }
    if ensemble.samples[0].amps.len() != modes.len() {
        return Err(Error::usage(format!(
            "ensemble samples carry {} amplitudes but the mode set has {}",
            ensemble.samples[0].amps.len(),
            modes.len()
        )));
    }
    let basis = enumerate_sector(modes, k, None)?;
    Ok(moment_matrix_over(ensemble, &basis, k, 0..ensemble.len()))
}

/// One moment-matrix estimate per stream, for error propagation into norms.
pub fn per_stream_moment_matrices(
    ensemble: &WeightedEnsemble,
    k: u32,
    modes: &ModeSet,
) -> Result<Vec<DMatrix<Complex64>>> {
    if k == 0 {
        return Err(Error::usage("moment matrix order k must be >= 1"));
    }
    let basis = enumerate_sector(modes, k, None)?;
    Ok((0..ensemble.stream_count)
        .into_par_iter()
        .map(|s| moment_matrix_over(ensemble, &basis, k, ensemble.stream_range(s)))
        .collect())
}

/// Row of the cutoff-convergence table: statistics of one cutoff radius.
#[derive(Debug, Clone)]
pub struct RadiusStats {
    pub radius: f64,
    pub n_modes: usize,
    pub eint_mean: f64,
    pub eint_se: f64,
    pub unsub_mean: f64,
    pub unsub_se: f64,
    pub min_energy: f64,
}

/// L1 distance between the energies at two consecutive cutoffs, under
/// common random numbers.
#[derive(Debug, Clone)]
pub struct GapStats {
    pub lower_radius: f64,
    pub upper_radius: f64,
    pub l1_mean: f64,
    pub l1_se: f64,
}

#[derive(Debug, Clone)]
pub struct WickTable {
    pub per_radius: Vec<RadiusStats>,
    pub gaps: Vec<GapStats>,
    pub samples: usize,
    pub streams: u32,
}

/// Probe the L1 Cauchy property of the renormalized interaction along a
/// nested family of cutoff balls, using common random numbers: each sample
/// is drawn once on the full set and evaluated at every cutoff.
pub fn wick_cauchy_check(
    modes: &ModeSet,
    radii: &[f64],
    potential: &Potential,
    kappa: f64,
    plan: &SamplingPlan,
) -> Result<WickTable> {
    if radii.is_empty() {
        return Err(Error::usage("wick check needs at least one radius"));
    }
    for pair in radii.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::usage(format!(
                "cutoff radii must be nested (non-decreasing), got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    if plan.samples == 0 || plan.streams == 0 {
        return Err(Error::usage("wick check needs a non-empty sampling plan"));
    }
    let kernels: Vec<InteractionKernel> = radii
        .iter()
        .map(|&r| InteractionKernel::new(modes, potential, kappa, Some(r)))
        .collect::<Result<_>>()?;

    let n_r = radii.len();
    let sizes = plan.stream_sizes();
    struct StreamAcc {
        eint_mean: Vec<f64>,
        unsub_mean: Vec<f64>,
        gap_mean: Vec<f64>,
        min_energy: Vec<f64>,
    }
    let accs: Vec<StreamAcc> = (0..plan.streams)
        .into_par_iter()
        .map(|stream| {
            let mut rng = plan.stream_rng(stream);
            let n = sizes[stream as usize];
            let mut eint = vec![0.0; n_r];
            let mut unsub = vec![0.0; n_r];
            let mut gap = vec![0.0; n_r.saturating_sub(1)];
            let mut min_energy = vec![f64::INFINITY; n_r];
            let mut e = vec![0.0; n_r];
            for _ in 0..n {
                let u = sample_free_field(modes, kappa, &mut rng)
                    .expect("kappa validated by kernel construction");
                for (i, kern) in kernels.iter().enumerate() {
                    e[i] = kern.energy(&u);
                    assert!(e[i] >= 0.0, "renormalized interaction energy must be >= 0");
                    eint[i] += e[i];
                    unsub[i] += kern.energy_unsubtracted(&u);
                    min_energy[i] = min_energy[i].min(e[i]);
                }
                for i in 1..n_r {
                    gap[i - 1] += (e[i] - e[i - 1]).abs();
                }
            }
            let scale = 1.0 / n.max(1) as f64;
            for v in eint.iter_mut().chain(&mut unsub).chain(&mut gap) {
                *v *= scale;
            }
            StreamAcc { eint_mean: eint, unsub_mean: unsub, gap_mean: gap, min_energy }
        })
        .collect();

    let combine = |pick: &dyn Fn(&StreamAcc) -> &[f64], len: usize| -> Vec<(f64, f64)> {
        (0..len)
            .map(|i| {
                let vals: Vec<f64> = accs.iter().map(|a| pick(a)[i]).collect();
                mean_and_se(&vals)
            })
            .collect()
    };
    let eint = combine(&|a: &StreamAcc| &a.eint_mean, n_r);
    let unsub = combine(&|a: &StreamAcc| &a.unsub_mean, n_r);
    let gaps = combine(&|a: &StreamAcc| &a.gap_mean, n_r.saturating_sub(1));

    let per_radius = (0..n_r)
        .map(|i| RadiusStats {
            radius: radii[i],
            n_modes: kernels[i].n_selected(),
            eint_mean: eint[i].0,
            eint_se: eint[i].1,
            unsub_mean: unsub[i].0,
            unsub_se: unsub[i].1,
            min_energy: accs.iter().map(|a| a.min_energy[i]).fold(f64::INFINITY, f64::min),
        })
        .collect();
    let gaps = gaps
        .into_iter()
        .enumerate()
        .map(|(i, (m, se))| GapStats {
            lower_radius: radii[i],
            upper_radius: radii[i + 1],
            l1_mean: m,
            l1_se: se,
        })
        .collect();
    Ok(WickTable { per_radius, gaps, samples: plan.samples, streams: plan.streams })
}

/// Mean of stream-level means, with the spread across streams as its
/// standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
