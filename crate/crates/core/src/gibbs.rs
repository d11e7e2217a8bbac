//! Exact grand-canonical Gibbs states on the truncated Fock space.
//!
//! Each particle-number sector is split into total-momentum blocks (the
//! Hamiltonian commutes with both) and diagonalized densely. Sector weights
//! `sum_j exp(-(E_nj - nu*n)/T)` are combined under a global log-sum-exp
//! shift, giving the partition function, the free energy
//! `F = -T log Z + E0` and the expected particle number. Eigenvectors are
//! kept only for sectors whose Gibbs weight share exceeds a retention
//! threshold; everything downstream (reduced density matrices, functional
//! evaluations, cap diagnostics) runs over those retained sectors, whose
//! missing weight is orders of magnitude below any tolerance used here.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{
    assemble_block_dense, enumerate_sector, momentum_blocks, HamiltonianTerms, SectorBasis,
};
use crate::model::{coupling_schedule, ModeSet, Potential};

/// Eigenvectors of one momentum block. `Identity` marks diagonal blocks
/// (free theory), where the eigenvectors are the occupation states
/// themselves and a stored matrix would be waste.
#[derive(Debug, Clone)]
pub enum BlockVectors {
    Identity,
    Dense(DMatrix<f64>),
}

/// Spectral data of one momentum block of one sector.
#[derive(Debug, Clone)]
pub struct MomentumBlock {
    pub momentum: (i64, i64),
    /// Sector-local indices of the block's occupation states.
    pub state_idx: Vec<u32>,
    pub eigvals: Vec<f64>,
    pub vectors: BlockVectors,
}

/// Basis and spectral detail of a retained sector.
#[derive(Debug, Clone)]
pub struct SectorDetail {
    pub basis: SectorBasis,
    pub blocks: Vec<MomentumBlock>,
}

#[derive(Debug, Clone)]
pub struct SectorSolution {
    pub n: u32,
    pub dim: usize,
    /// All eigenvalues of the sector Hamiltonian (unsorted across blocks).
    pub eigvals: Vec<f64>,
    /// Gibbs weight share of the sector, `w_n / Z`.
    pub weight_share: f64,
    /// Present when the share exceeded the retention threshold.
    pub detail: Option<SectorDetail>,
}

/// Behaviour knobs for the solver itself.
#[derive(Debug, Clone, Copy)]
pub struct GibbsOptions {
    /// Sectors above this dimension abort with a truncation error rather
    /// than silently degrade exactness.
    pub max_sector_dim: usize,
    /// Sectors with smaller weight share do not keep eigenvectors.
    pub vector_retention: f64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        GibbsOptions { max_sector_dim: 5000, vector_retention: 1e-17 }
    }
}

/// Full solution of one grand-canonical configuration.
#[derive(Debug, Clone)]
pub struct GibbsSolution {
    pub modes: ModeSet,
    pub temperature: f64,
    pub lambda: f64,
    pub nu: f64,
    pub e0: f64,
    pub kappa: f64,
    pub caps: Vec<u16>,
    pub sectors: Vec<SectorSolution>,
    pub log_z: f64,
    pub z: f64,
    pub free_energy: f64,
    pub expected_n: f64,
    /// Weight share of the top (largest-n) sector.
    pub tail_share: f64,
    /// Per mode: Gibbs probability that the occupation sits at its cap,
    /// and at cap - 1; the growth signal for truncation control.
    pub cap_hit: Vec<f64>,
    pub cap_next: Vec<f64>,
    min_shifted: f64,
    z_tilde: f64,
}

impl GibbsSolution {
    /// Normalized Gibbs probability of an eigenstate with shifted energy
    /// `x - min_shift` where `x = E - nu*n`.
    fn gibbs_prob(&self, shifted: f64) -> f64 {
        (-shifted / self.temperature).exp() / self.z_tilde
    }

    fn prob_of(&self, eigval: f64, n: u32) -> f64 {
        self.gibbs_prob(eigval - self.nu * n as f64 - self.min_shifted)
    }

    /// `E[binom(N, k)]` over the sector weights.
    pub fn expected_binomial(&self, k: u32) -> f64 {
        self.sectors.iter().map(|s| binomial_f64(s.n, k) * s.weight_share).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub k: u32,
    pub matrix: DMatrix<f64>,
    pub trace: f64,
}

impl DensityMatrix {
    pub fn hermiticity_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..i {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

fn binomial_f64(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut acc = 1.0f64;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

struct RawSector {
    n: u32,
    dim: usize,
    eigvals: Vec<f64>,
}

fn solve_sector_eigvals(
    modes: &ModeSet,
    caps: &[u16],
    terms: Option<&HamiltonianTerms>,
    kinetic: &HamiltonianTerms,
    lambda: f64,
    n: u32,
    max_dim: usize,
) -> Result<RawSector> {
    let basis = enumerate_sector(modes, n, Some(caps))?;
    let dim = basis.dim();
    if dim > max_dim {
        return Err(Error::Truncation(format!(
            "sector n = {n} has dimension {dim} > limit {max_dim}; shrink the mode set or caps, \
             or raise max_sector_dim"
        )));
    }
    let mut eigvals = Vec::with_capacity(dim);
    match terms {
        None => {
            for occ in basis.states() {
                eigvals.push(kinetic.kinetic_energy(occ));
            }
        }
        Some(t) => {
            for (_, block) in momentum_blocks(&basis, modes) {
                let h = assemble_block_dense(&basis, &block, t, lambda);
                eigvals.extend(h.symmetric_eigenvalues().iter());
            }
        }
    }
    Ok(RawSector { n, dim, eigvals })
}

fn solve_sector_detail(
    modes: &ModeSet,
    caps: &[u16],
    terms: Option<&HamiltonianTerms>,
    kinetic: &HamiltonianTerms,
    lambda: f64,
    n: u32,
) -> Result<SectorDetail> {
    let basis = enumerate_sector(modes, n, Some(caps))?;
    let mut blocks = Vec::new();
    for (momentum, state_idx) in momentum_blocks(&basis, modes) {
        let (eigvals, vectors) = match terms {
            None => {
                let vals: Vec<f64> = state_idx
                    .iter()
                    .map(|&i| kinetic.kinetic_energy(basis.state(i as usize)))
                    .collect();
                (vals, BlockVectors::Identity)
            }
            Some(t) => {
                let h = assemble_block_dense(&basis, &state_idx, t, lambda);
                let eig = h.symmetric_eigen();
                (eig.eigenvalues.iter().copied().collect(), BlockVectors::Dense(eig.eigenvectors))
            }
        };
        blocks.push(MomentumBlock { momentum, state_idx, eigvals, vectors });
    }
    Ok(SectorDetail { basis, blocks })
}

/// Solve the grand-canonical Gibbs state with `(nu, E0)` taken from the
/// coupling schedule for `(kappa, T, lambda)`.
pub fn gibbs_state(
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    temperature: f64,
    lambda: f64,
    caps: &[u16],
    options: &GibbsOptions,
) -> Result<GibbsSolution> {
    let (nu, e0) = coupling_schedule(modes, potential, kappa, temperature, lambda)?;
    gibbs_state_with_offsets(modes, potential, kappa, temperature, lambda, nu, e0, caps, options)
}

/// Solve with explicit chemical potential and energy offset. For a
/// non-interacting model `nu` must be negative, otherwise the uncapped
/// partition sum diverges on the zero mode and growing caps would chase a
/// non-existent limit.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_state_with_offsets(
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    temperature: f64,
    lambda: f64,
    nu: f64,
    e0: f64,
    caps: &[u16],
    options: &GibbsOptions,
) -> Result<GibbsSolution> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature = {temperature} must be finite and > 0"
        )));
    }
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    if caps.len() != modes.len() {
        return Err(Error::usage(format!(
            "caps length {} does not match mode count {}",
            caps.len(),
            modes.len()
        )));
    }
    let interacting = lambda > 0.0 && potential.iter().any(|(_, v)| v != 0.0);
    if !interacting && nu >= 0.0 {
        return Err(Error::Divergence(format!(
            "free model with nu = {nu} >= 0: the zero-mode occupation has no finite \
             grand-canonical limit"
        )));
    }
    let kinetic = HamiltonianTerms::new(modes, &Potential::zero(modes))?;
    let terms = if interacting { Some(HamiltonianTerms::new(modes, potential)?) } else { None };

    let n_max: u64 = caps.iter().map(|&c| c as u64).sum();
    if n_max > u16::MAX as u64 {
        return Err(Error::Truncation(format!(
            "total cap {n_max} exceeds the supported occupation range"
        )));
    }

    // Phase A: eigenvalues of every sector.
    let raw: Vec<RawSector> = (0..=n_max as u32)
        .into_par_iter()
        .map(|n| {
            solve_sector_eigvals(
                modes,
                caps,
                terms.as_ref(),
                &kinetic,
                lambda,
                n,
                options.max_sector_dim,
            )
        })
        .collect::<Result<_>>()?;

    // Global shift and per-sector weights.
    let mut min_shifted = f64::INFINITY;
    for s in &raw {
        for &e in &s.eigvals {
            min_shifted = min_shifted.min(e - nu * s.n as f64);
        }
    }
    let weights: Vec<f64> = raw
        .iter()
        .map(|s| {
            s.eigvals
                .iter()
                .map(|&e| (-(e - nu * s.n as f64 - min_shifted) / temperature).exp())
                .sum()
        })
        .collect();
    let z_tilde: f64 = weights.iter().sum();
    if !(z_tilde > 0.0) || !z_tilde.is_finite() {
        return Err(Error::Divergence(format!("partition accumulator {z_tilde} is not usable")));
    }
    let log_z = z_tilde.ln() - min_shifted / temperature;
    let z = log_z.exp();
    let free_energy = -temperature * log_z + e0;
    let expected_n: f64 =
        raw.iter().zip(&weights).map(|(s, &w)| s.n as f64 * w / z_tilde).sum();
    let tail_share = weights.last().map_or(0.0, |w| w / z_tilde);

    // Phase B: eigenvectors for the sectors that carry weight.
    let retained: Vec<usize> = (0..raw.len())
        .filter(|&i| raw[i].dim > 0 && weights[i] / z_tilde > options.vector_retention)
        .collect();
    let details: Vec<(usize, SectorDetail)> = retained
        .into_par_iter()
        .map(|i| {
            solve_sector_detail(modes, caps, terms.as_ref(), &kinetic, lambda, raw[i].n)
                .map(|d| (i, d))
        })
        .collect::<Result<_>>()?;

    let mut sectors: Vec<SectorSolution> = raw
        .into_iter()
        .zip(&weights)
        .map(|(s, &w)| SectorSolution {
            n: s.n,
            dim: s.dim,
            eigvals: s.eigvals,
            weight_share: w / z_tilde,
            detail: None,
        })
        .collect();
    for (i, d) in details {
        sectors[i].detail = Some(d);
    }

    let mut solution = GibbsSolution {
        modes: modes.clone(),
        temperature,
        lambda,
        nu,
        e0,
        kappa,
        caps: caps.to_vec(),
        sectors,
        log_z,
        z,
        free_energy,
        expected_n,
        tail_share,
        cap_hit: vec![0.0; modes.len()],
        cap_next: vec![0.0; modes.len()],
        min_shifted,
        z_tilde,
    };
    let (hit, next) = cap_marginals(&solution);
    solution.cap_hit = hit;
    solution.cap_next = next;
    Ok(solution)
}

/// Probability mass sitting exactly at each mode's cap (and one below),
/// accumulated over the retained sectors.
fn cap_marginals(sol: &GibbsSolution) -> (Vec<f64>, Vec<f64>) {
    let n_modes = sol.modes.len();
    let mut hit = vec![0.0; n_modes];
    let mut next = vec![0.0; n_modes];
    for sector in &sol.sectors {
        let Some(detail) = &sector.detail else { continue };
        for block in &detail.blocks {
            for (local, &gidx) in block.state_idx.iter().enumerate() {
                let p_state: f64 = match &block.vectors {
                    BlockVectors::Identity => sol.prob_of(block.eigvals[local], sector.n),
                    BlockVectors::Dense(v) => block
                        .eigvals
                        .iter()
                        .enumerate()
                        .map(|(j, &e)| {
                            sol.prob_of(e, sector.n) * v[(local, j)] * v[(local, j)]
                        })
                        .sum(),
                };
                let occ = detail.basis.state(gidx as usize);
                for (m, &nm) in occ.iter().enumerate() {
                    let cap = sol.caps[m];
                    if nm == cap {
                        hit[m] += p_state;
                    }
                    if cap > 0 && nm + 1 == cap {
                        next[m] += p_state;
                    }
                }
            }
        }
    }
    (hit, next)
}

/// Closed-form free energy of the non-interacting model at `nu = -kappa`:
/// `F0 = T * sum_k log(1 - exp(-(|k|^2 + kappa)/T))`.
pub fn free_energy_noninteracting(modes: &ModeSet, kappa: f64, temperature: f64) -> Result<f64> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature = {temperature} must be finite and > 0"
        )));
    }
    let sum: f64 = modes
        .modes()
        .iter()
        .map(|m| ln_one_minus_exp((m.kinetic() + kappa) / temperature))
        .sum();
    Ok(temperature * sum)
}

/// `log(1 - exp(-x))` for `x > 0`, accurate at both ends.
fn ln_one_minus_exp(x: f64) -> f64 {
    if x < 0.693 {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}

/// A sector-diagonal mixed state in spectral form: probabilities attached to
/// orthonormal vectors living inside momentum blocks.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub sectors: Vec<SpectralSector>,
}

#[derive(Debug, Clone)]
pub struct SpectralSector {
    pub n: u32,
    pub basis: SectorBasis,
    pub blocks: Vec<SpectralBlock>,
}

#[derive(Debug, Clone)]
pub struct SpectralBlock {
    pub state_idx: Vec<u32>,
    pub probs: Vec<f64>,
    pub vectors: BlockVectors,
}

impl SpectralState {
    pub fn trace(&self) -> f64 {
        self.sectors
            .iter()
            .flat_map(|s| s.blocks.iter())
            .flat_map(|b| b.probs.iter())
            .sum()
    }

    /// Map the probabilities through `f` and renormalize to unit trace.
    pub fn reweighted(&self, mut f: impl FnMut(u32, f64) -> f64) -> SpectralState {
        let mut out = self.clone();
        let mut total = 0.0;
        for s in &mut out.sectors {
            for b in &mut s.blocks {
                for p in &mut b.probs {
                    *p = f(s.n, *p);
                    total += *p;
                }
            }
        }
        for s in &mut out.sectors {
            for b in &mut s.blocks {
                for p in &mut b.probs {
                    *p /= total;
                }
            }
        }
        out
    }
}

impl GibbsSolution {
    /// The retained part of the Gibbs state in spectral form. Its trace
    /// differs from 1 by the dropped weight, far below every tolerance in
    /// this crate.
    pub fn to_spectral_state(&self) -> SpectralState {
        let sectors = self
            .sectors
            .iter()
            .filter_map(|s| {
                let detail = s.detail.as_ref()?;
                let blocks = detail
                    .blocks
                    .iter()
                    .map(|b| SpectralBlock {
                        state_idx: b.state_idx.clone(),
                        probs: b.eigvals.iter().map(|&e| self.prob_of(e, s.n)).collect(),
                        vectors: b.vectors.clone(),
                    })
                    .collect();
                Some(SpectralSector { n: s.n, basis: detail.basis.clone(), blocks })
            })
            .collect();
        SpectralState { sectors }
    }
}

/// Grand-canonical free-energy functional
/// `tr[(H - nu*N) G] + T tr[G log G] + E0` on a sector-diagonal state in
/// spectral form, with `0 log 0 = 0`. The state must have unit trace.
pub fn free_energy_functional(
    state: &SpectralState,
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    temperature: f64,
    lambda: f64,
) -> Result<f64> {
    let trace = state.trace();
    if (trace - 1.0).abs() > 1e-8 {
        return Err(Error::usage(format!(
            "state trace {trace} is not 1 within 1e-8; normalize before evaluating"
        )));
    }
    let (nu, e0) = coupling_schedule(modes, potential, kappa, temperature, lambda)?;
    let interacting = lambda > 0.0 && potential.iter().any(|(_, v)| v != 0.0);
    let kinetic = HamiltonianTerms::new(modes, &Potential::zero(modes))?;
    let terms = if interacting { Some(HamiltonianTerms::new(modes, potential)?) } else { None };

    let mut energy = 0.0;
    let mut entropy_sum = 0.0;
    for sector in &state.sectors {
        for block in &sector.blocks {
            let h = terms
                .as_ref()
                .map(|t| assemble_block_dense(&sector.basis, &block.state_idx, t, lambda));
            for (j, &p) in block.probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let exp_h = match (&h, &block.vectors) {
                    (Some(hm), BlockVectors::Identity) => hm[(j, j)],
                    (Some(hm), BlockVectors::Dense(v)) => {
                        let col = v.column(j);
                        (hm * col).dot(&col)
                    }
                    (None, BlockVectors::Identity) => {
                        kinetic.kinetic_energy(sector.basis.state(block.state_idx[j] as usize))
                    }
                    (None, BlockVectors::Dense(v)) => {
                        let col = v.column(j);
                        block
                            .state_idx
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| {
                                kinetic.kinetic_energy(sector.basis.state(g as usize))
                                    * col[i]
                                    * col[i]
                            })
                            .sum()
                    }
                };
                energy += p * (exp_h - nu * sector.n as f64);
                entropy_sum += p * p.ln();
            }
        }
    }
    Ok(energy + temperature * entropy_sum + e0)
}

/// Remove `t_m` particles per mode from `occ` into `out`; returns the
/// squared amplitude (falling factorial product), or `None` when a mode
/// runs empty.
fn annihilate_string(occ: &[u16], t: &[u16], out: &mut Vec<u16>) -> Option<f64> {
    out.clear();
    out.extend_from_slice(occ);
    let mut prod = 1.0f64;
    for (m, &tm) in t.iter().enumerate() {
        for _ in 0..tm {
            let n = out[m];
            if n == 0 {
                return None;
            }
            prod *= n as f64;
            out[m] = n - 1;
        }
    }
    Some(prod)
}

/// Add `t_m` particles per mode to `occ` in place; returns the squared
/// amplitude.
fn create_string(occ: &mut [u16], t: &[u16]) -> f64 {
    let mut prod = 1.0f64;
    for (m, &tm) in t.iter().enumerate() {
        for _ in 0..tm {
            occ[m] += 1;
            prod *= occ[m] as f64;
        }
    }
    prod
}

fn occ_factorial(occ: &[u16]) -> f64 {
    occ.iter()
        .map(|&n| (1..=n as u64).map(|i| i as f64).product::<f64>())
        .product()
}

/// `prod_m s_m! / (s_m - t_m)!` as an exact small product.
fn falling_product(s: &[u16], t: &[u16]) -> f64 {
    let mut acc = 1.0f64;
    for (&sm, &tm) in s.iter().zip(t) {
        for i in 0..tm {
            acc *= (sm - i) as f64;
        }
    }
    acc
}

/// Reduced k-body density matrix via normal-ordered correlators:
/// entry `(t', t)` is
/// `(prod_m t_m! t'_m!)^{-1/2} * tr[prod (a^dag)^{t'} prod a^{t} G]`,
/// normalized so that `tr G^(k) = E[binom(N, k)]`.
pub fn reduced_density_matrix(sol: &GibbsSolution, k: u32) -> Result<DensityMatrix> {
    if k == 0 {
        return Err(Error::usage("reduced density matrix order k must be >= 1"));
    }
    let max_n = sol.sectors.iter().filter(|s| s.dim > 0).map(|s| s.n).max().unwrap_or(0);
    if k > max_n {
        return Err(Error::usage(format!(
            "k = {k} exceeds the largest retained sector {max_n}"
        )));
    }
    let kbasis = enumerate_sector(&sol.modes, k, None)?;
    let dim = kbasis.dim();

    // Momentum of each k-occupation: only momentum-conserving entry pairs
    // can be non-zero for a state commuting with total momentum.
    let kmom: Vec<(i64, i64)> = kbasis
        .states()
        .map(|occ| {
            let mut p = (0i64, 0i64);
            for (n, mode) in occ.iter().zip(sol.modes.modes()) {
                p.0 += *n as i64 * mode.m.0 as i64;
                p.1 += *n as i64 * mode.m.1 as i64;
            }
            p
        })
        .collect();
    let prefactor: Vec<f64> = kbasis.states().map(|occ| occ_factorial(occ).sqrt()).collect();

    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    let mut scratch: Vec<u16> = Vec::new();
    for sector in &sol.sectors {
        if sector.n < k {
            continue;
        }
        let Some(detail) = &sector.detail else { continue };
        for block in &detail.blocks {
            let local: HashMap<u32, usize> =
                block.state_idx.iter().enumerate().map(|(l, &g)| (g, l)).collect();
            let probs: Vec<f64> =
                block.eigvals.iter().map(|&e| sol.prob_of(e, sector.n)).collect();
            for ti in 0..dim {
                for tj in 0..dim {
                    if kmom[ti] != kmom[tj] {
                        continue;
                    }
                    let t_in = kbasis.state(ti);
                    let t_out = kbasis.state(tj);
                    let mut acc = 0.0f64;
                    for (li, &gi) in block.state_idx.iter().enumerate() {
                        let occ = detail.basis.state(gi as usize);
                        let Some(pa) = annihilate_string(occ, t_in, &mut scratch) else {
                            continue;
                        };
                        let pc = create_string(&mut scratch, t_out);
                        let Some(g_out) = detail.basis.index_of(&scratch) else { continue };
                        let Some(&lo) = local.get(&(g_out as u32)) else { continue };
                        let amp = (pa * pc).sqrt();
                        match &block.vectors {
                            BlockVectors::Identity => {
                                if li == lo {
                                    acc += probs[li] * amp;
                                }
                            }
                            BlockVectors::Dense(v) => {
                                for (j, &p) in probs.iter().enumerate() {
                                    if p > 0.0 {
                                        acc += p * amp * v[(li, j)] * v[(lo, j)];
                                    }
                                }
                            }
                        }
                    }
                    matrix[(tj, ti)] += acc / (prefactor[ti] * prefactor[tj]);
                }
            }
        }
    }
    let trace = (0..dim).map(|i| matrix[(i, i)]).sum();
    Ok(DensityMatrix { k, matrix, trace })
}

/// Symmetric partial trace of one n-sector density block down to k
/// particles (no binomial factor): entry
/// `(t, t') = sum_{s,s'} D[s,s'] / binom(n,k) * sqrt(s!/(r! t!)) *
/// sqrt(s'!/(r! t'!))` over `r = s - t = s' - t' >= 0`.
pub fn partial_trace_reduction(
    density: &DMatrix<f64>,
    basis: &SectorBasis,
    modes: &ModeSet,
    k: u32,
) -> Result<DMatrix<f64>> {
    let n = basis.particle_number();
    if k > n {
        return Err(Error::usage(format!("cannot trace an n = {n} block down to k = {k}")));
    }
    if density.nrows() != basis.dim() || density.ncols() != basis.dim() {
        return Err(Error::usage(format!(
            "density block is {}x{} but the sector has dimension {}",
            density.nrows(),
            density.ncols(),
            basis.dim()
        )));
    }
    let kbasis = enumerate_sector(modes, k, None)?;
    let dim = kbasis.dim();
    let inv_binom = 1.0 / binomial_f64(n, k);

    let mut out = DMatrix::<f64>::zeros(dim, dim);
    let mut r = vec![0u16; modes.len()];
    let mut s_other = vec![0u16; modes.len()];
    for (si, s) in basis.states().enumerate() {
        for (ti, t) in kbasis.states().enumerate() {
            if s.iter().zip(t).any(|(&a, &b)| a < b) {
                continue;
            }
            for (m, (&a, &b)) in s.iter().zip(t).enumerate() {
                r[m] = a - b;
            }
            let left = falling_product(s, t).sqrt() / occ_factorial(t).sqrt();
            for (tj, t2) in kbasis.states().enumerate() {
                for (m, (&rm, &b)) in r.iter().zip(t2).enumerate() {
                    s_other[m] = rm + b;
                }
                let Some(sj) = basis.index_of(&s_other) else { continue };
                let d = density[(si, sj)];
                if d == 0.0 {
                    continue;
                }
                let right = falling_product(&s_other, t2).sqrt() / occ_factorial(t2).sqrt();
                out[(ti, tj)] += d * inv_binom * left * right;
            }
        }
    }
    Ok(out)
}

/// Reduced k-body density matrix through the partial-trace route,
/// `G^(k) = sum_n binom(n,k) tr_{n->k}[G_n]`: the independent
/// cross-implementation of [`reduced_density_matrix`]. Builds dense sector
/// blocks, so keep it to modest sector dimensions.
pub fn reduced_density_matrix_via_partial_trace(
    sol: &GibbsSolution,
    k: u32,
) -> Result<DensityMatrix> {
    if k == 0 {
        return Err(Error::usage("reduced density matrix order k must be >= 1"));
    }
    let kbasis = enumerate_sector(&sol.modes, k, None)?;
    let dim = kbasis.dim();
    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    for sector in &sol.sectors {
        if sector.n < k {
            continue;
        }
        let Some(detail) = &sector.detail else { continue };
        let d = detail.basis.dim();
        let mut block_density = DMatrix::<f64>::zeros(d, d);
        for block in &detail.blocks {
            let probs: Vec<f64> =
                block.eigvals.iter().map(|&e| sol.prob_of(e, sector.n)).collect();
            match &block.vectors {
                BlockVectors::Identity => {
                    for (l, &g) in block.state_idx.iter().enumerate() {
                        block_density[(g as usize, g as usize)] += probs[l];
                    }
                }
                BlockVectors::Dense(v) => {
                    for (li, &gi) in block.state_idx.iter().enumerate() {
                        for (lj, &gj) in block.state_idx.iter().enumerate() {
                            let mut acc = 0.0;
                            for (j, &p) in probs.iter().enumerate() {
                                acc += p * v[(li, j)] * v[(lj, j)];
                            }
                            block_density[(gi as usize, gj as usize)] += acc;
                        }
                    }
                }
            }
        }
        let reduced = partial_trace_reduction(&block_density, &detail.basis, &sol.modes, k)?;
        matrix += reduced * binomial_f64(sector.n, k);
    }
    let trace = (0..dim).map(|i| matrix[(i, i)]).sum();
    Ok(DensityMatrix { k, matrix, trace })
}

/// Tolerances and budget of occupation-cap growth.
#[derive(Debug, Clone, Copy)]
pub struct TruncationSettings {
    /// Successive partition functions must agree to this relative precision.
    pub epsilon_z: f64,
    /// Admissible weight share of the top sector.
    pub epsilon_tail: f64,
    pub max_sector_dim: usize,
    pub max_rounds: u32,
}

impl Default for TruncationSettings {
    fn default() -> Self {
        TruncationSettings {
            epsilon_z: 1e-8,
            epsilon_tail: 1e-10,
            max_sector_dim: 5000,
            max_rounds: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruncationRound {
    pub caps: Vec<u16>,
    pub log_z: f64,
    pub tail_share: f64,
}

/// Result of cap growth: the certified caps, the solution computed at them,
/// and the per-round trace.
#[derive(Debug)]
pub struct TruncationOutcome {
    pub caps: Vec<u16>,
    pub solution: GibbsSolution,
    pub rounds: Vec<TruncationRound>,
}

/// Grow per-mode occupation caps geometrically until the partition function
/// is stable to `epsilon_z` and the top sector carries less than
/// `epsilon_tail` of the weight.
///
/// Starting caps are `ceil(8T/kappa)` for the zero mode and
/// `max(4, ceil(8T/(|k|^2+kappa)))` elsewhere. A mode doubles when the Gibbs
/// mass at its cap extrapolates to a relative tail above
/// `epsilon_z / (4 |S|)`; when nothing is flagged, a confirmation round
/// enlarges every cap by half and requires the partition function to move by
/// less than `epsilon_z`.
pub fn truncation_control(
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    temperature: f64,
    lambda: f64,
    settings: &TruncationSettings,
) -> Result<TruncationOutcome> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    let options =
        GibbsOptions { max_sector_dim: settings.max_sector_dim, ..GibbsOptions::default() };
    let n_modes = modes.len();
    let mut caps: Vec<u16> = modes
        .modes()
        .iter()
        .map(|m| {
            let denom = if m.is_zero() { kappa } else { m.kinetic() + kappa };
            let c = (8.0 * temperature / denom).ceil();
            let c = if m.is_zero() { c } else { c.max(4.0) };
            c.min(u16::MAX as f64) as u16
        })
        .collect();

    let flag_threshold = settings.epsilon_z / (4.0 * n_modes as f64);
    let mut rounds = Vec::new();
    let mut prev_log_z: Option<f64> = None;
    for _round in 0..settings.max_rounds {
        let sol = gibbs_state(modes, potential, kappa, temperature, lambda, &caps, &options)?;
        rounds.push(TruncationRound {
            caps: caps.clone(),
            log_z: sol.log_z,
            tail_share: sol.tail_share,
        });

        let mut flags = vec![false; n_modes];
        for m in 0..n_modes {
            let hit = sol.cap_hit[m];
            let nxt = sol.cap_next[m];
            let tail_est = if hit <= 0.0 {
                0.0
            } else if nxt <= 0.0 || hit >= nxt {
                f64::INFINITY
            } else {
                let ratio = hit / nxt;
                hit * ratio / (1.0 - ratio)
            };
            flags[m] = tail_est > flag_threshold;
        }
        let any_flag = flags.iter().any(|&f| f);
        let z_stable = prev_log_z
            .map(|p| ((sol.log_z - p).exp() - 1.0).abs() <= settings.epsilon_z)
            .unwrap_or(false);
        let tail_ok = sol.tail_share < settings.epsilon_tail;

        if !any_flag && tail_ok && z_stable {
            return Ok(TruncationOutcome { caps, solution: sol, rounds });
        }

        if any_flag {
            for (m, grow) in flags.iter().enumerate() {
                if *grow {
                    caps[m] = caps[m].saturating_mul(2).max(caps[m].saturating_add(1));
                }
            }
        } else if !tail_ok {
            // Tail mass concentrates where occupations sit at their caps.
            let worst = (0..n_modes)
                .max_by(|&a, &b| sol.cap_hit[a].total_cmp(&sol.cap_hit[b]))
                .unwrap_or(0);
            caps[worst] = caps[worst].saturating_mul(2).max(caps[worst].saturating_add(1));
        } else {
            // Nothing flagged: enlarge everything by half to certify Z.
            for c in caps.iter_mut() {
                *c = c.saturating_add((*c / 2).max(1));
            }
        }
        prev_log_z = Some(sol.log_z);
    }
    Err(Error::Truncation(format!(
        "cap growth did not stabilize within {} rounds (last caps {:?}, eps_z {}, eps_tail {})",
        settings.max_rounds, caps, settings.epsilon_z, settings.epsilon_tail
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{enumerate_sector, momentum_blocks};
    use crate::model::{ModeSet, Potential};
    use approx::assert_relative_eq;

    fn single_mode() -> ModeSet {
        ModeSet::from_pairs([(0, 0)]).unwrap()
    }

    #[test]
    fn free_single_mode_matches_geometric_series() {
        let s = single_mode();
        let w = Potential::zero(&s);
        let caps = [200u16];
        let sol = gibbs_state(&s, &w, 1.0, 1.0, 0.0, &caps, &GibbsOptions::default()).unwrap();
        let exact_z = 1.0 / (1.0 - (-1.0f64).exp());
        assert_relative_eq!(sol.z, exact_z, max_relative = 1e-12);
        assert_relative_eq!(sol.free_energy, -0.4586751453870819, max_relative = 1e-10);
        let be = 1.0 / (1.0f64.exp() - 1.0);
        assert_relative_eq!(sol.expected_n, be, max_relative = 1e-12);
        let total: f64 = sol.sectors.iter().map(|x| x.weight_share).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-13);
    }

    #[test]
    fn free_model_with_nonnegative_nu_diverges() {
        let s = single_mode();
        let w = Potential::zero(&s);
        let caps = [10u16];
        let r = gibbs_state_with_offsets(
            &s,
            &w,
            1.0,
            1.0,
            0.0,
            0.5,
            0.0,
            &caps,
            &GibbsOptions::default(),
        );
        assert!(matches!(r, Err(Error::Divergence(_))));
        // Through the schedule, lambda = 0 always yields nu = -kappa < 0.
        assert!(gibbs_state(&s, &w, 1.0, 1.0, 0.0, &caps, &GibbsOptions::default()).is_ok());
    }

    #[test]
    fn interacting_single_mode_matches_series_oracle() {
        let s = single_mode();
        let w = Potential::constant(1.0, &s).unwrap();
        let caps = [60u16];
        let t = 1.0;
        let sol = gibbs_state(&s, &w, 1.0, t, 1.0, &caps, &GibbsOptions::default()).unwrap();
        // Independent scalar series: E_n = n(n-1)/2, nu from the schedule.
        let n0 = 1.0 / (1.0f64.exp() - 1.0);
        let nu = n0 - 1.0;
        let mut z = 0.0;
        for n in 0..=60u32 {
            let e = 0.5 * n as f64 * (n as f64 - 1.0);
            z += (-(e - nu * n as f64) / t).exp();
        }
        assert_relative_eq!(sol.z, z, max_relative = 1e-10);
        assert_relative_eq!(sol.nu, nu, max_relative = 1e-12);
    }

    #[test]
    fn noninteracting_free_energy_closed_form() {
        let s = ModeSet::ball(1.0).unwrap();
        let f0 = free_energy_noninteracting(&s, 1.0, 1.0).unwrap();
        let mut expect = 0.0;
        for m in s.modes() {
            expect += (1.0 - (-(m.kinetic() + 1.0)).exp()).ln();
        }
        assert_relative_eq!(f0, expect, max_relative = 1e-13);

        let sm = single_mode();
        let f_sm = free_energy_noninteracting(&sm, 1.0, 1.0).unwrap();
        assert_relative_eq!(f_sm, -0.4586751453870819, max_relative = 1e-12);

        // T -> 0: vanishes from below.
        let tiny = free_energy_noninteracting(&sm, 1.0, 0.05).unwrap();
        let tinier = free_energy_noninteracting(&sm, 1.0, 0.02).unwrap();
        assert!(tiny < 0.0 && tiny > -1e-3);
        assert!(tinier < 0.0 && tinier > tiny);

        // Additive over disjoint mode subsets.
        let a = ModeSet::from_pairs([(0, 0)]).unwrap();
        let f_all = free_energy_noninteracting(&s, 0.7, 2.0).unwrap();
        let f_zero = free_energy_noninteracting(&a, 0.7, 2.0).unwrap();
        let shell: f64 = s
            .modes()
            .iter()
            .filter(|m| !m.is_zero())
            .map(|m| 2.0 * (1.0 - (-(m.kinetic() + 0.7) / 2.0).exp()).ln())
            .sum();
        assert_relative_eq!(f_all, f_zero + shell, max_relative = 1e-12);
    }

    #[test]
    fn functional_reproduces_free_energy_and_is_minimal() {
        let s = single_mode();
        let w = Potential::constant(1.0, &s).unwrap();
        let caps = [80u16];
        let sol = gibbs_state(&s, &w, 1.0, 2.0, 0.5, &caps, &GibbsOptions::default()).unwrap();
        let state = sol.to_spectral_state();
        let f = free_energy_functional(&state, &s, &w, 1.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(f, sol.free_energy, max_relative = 1e-8);

        for scale in [0.9, 1.1] {
            let perturbed = state.reweighted(|_, p| p.powf(1.0 / scale));
            let fp = free_energy_functional(&perturbed, &s, &w, 1.0, 2.0, 0.5).unwrap();
            assert!(fp > f, "perturbed {fp} <= gibbs {f}");
        }
    }

    #[test]
    fn functional_on_vacuum_returns_e0() {
        let s = single_mode();
        let w = Potential::constant(1.0, &s).unwrap();
        let basis = enumerate_sector(&s, 0, Some(&[5u16])).unwrap();
        let state = SpectralState {
            sectors: vec![SpectralSector {
                n: 0,
                basis,
                blocks: vec![SpectralBlock {
                    state_idx: vec![0],
                    probs: vec![1.0],
                    vectors: BlockVectors::Identity,
                }],
            }],
        };
        let (_, e0) = crate::model::coupling_schedule(&s, &w, 1.0, 2.0, 0.5).unwrap();
        let f = free_energy_functional(&state, &s, &w, 1.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(f, e0, max_relative = 1e-14);
    }

    #[test]
    fn functional_rejects_unnormalized_states() {
        let s = single_mode();
        let w = Potential::zero(&s);
        let basis = enumerate_sector(&s, 1, Some(&[5u16])).unwrap();
        let state = SpectralState {
            sectors: vec![SpectralSector {
                n: 1,
                basis,
                blocks: vec![SpectralBlock {
                    state_idx: vec![0],
                    probs: vec![0.5],
                    vectors: BlockVectors::Identity,
                }],
            }],
        };
        assert!(free_energy_functional(&state, &s, &w, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn partial_trace_of_pure_pair_state() {
        // |1_p, 1_q> with p != q: binom(2,1) tr_{2->1} = |p><p| + |q><q|.
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let basis = enumerate_sector(&s, 2, Some(&[4u16, 4, 4])).unwrap();
        let idx = basis.index_of(&[1, 1, 0]).unwrap();
        let d = basis.dim();
        let mut density = DMatrix::<f64>::zeros(d, d);
        density[(idx, idx)] = 1.0;
        let g1 = partial_trace_reduction(&density, &basis, &s, 1).unwrap();
        let kbasis = enumerate_sector(&s, 1, None).unwrap();
        let p = kbasis.index_of(&[1, 0, 0]).unwrap();
        let q = kbasis.index_of(&[0, 1, 0]).unwrap();
        assert_relative_eq!(g1[(p, p)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(g1[(q, q)], 0.5, max_relative = 1e-14);
        let scaled = g1 * binomial_f64(2, 1);
        assert_relative_eq!(scaled.trace(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn partial_trace_identity_and_scalar_edges() {
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let basis = enumerate_sector(&s, 2, Some(&[3u16, 3, 3])).unwrap();
        let d = basis.dim();
        let mut density = DMatrix::<f64>::zeros(d, d);
        let mut seed = 1u64;
        let mut randf = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for i in 0..d {
            for j in 0..=i {
                let v = randf();
                density[(i, j)] = v;
                density[(j, i)] = v;
            }
        }
        let tr: f64 = density.trace();

        let same = partial_trace_reduction(&density, &basis, &s, 2).unwrap();
        for i in 0..d {
            for j in 0..d {
                assert_relative_eq!(same[(i, j)], density[(i, j)], epsilon = 1e-12);
            }
        }
        let scalar = partial_trace_reduction(&density, &basis, &s, 0).unwrap();
        assert_eq!(scalar.nrows(), 1);
        assert_relative_eq!(scalar[(0, 0)], tr, max_relative = 1e-12);
        assert!(partial_trace_reduction(&density, &basis, &s, 3).is_err());
    }

    #[test]
    fn reduced_density_free_theory_is_bose_einstein() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = Potential::zero(&s);
        let settings = TruncationSettings { epsilon_z: 1e-10, ..Default::default() };
        let outcome = truncation_control(&s, &w, 1.0, 2.0, 0.0, &settings).unwrap();
        let g1 = reduced_density_matrix(&outcome.solution, 1).unwrap();
        for (i, mode) in s.modes().iter().enumerate() {
            let be = 1.0 / (((mode.kinetic() + 1.0) / 2.0).exp() - 1.0);
            assert_relative_eq!(g1.matrix[(i, i)], be, max_relative = 1e-8);
            for j in 0..s.len() {
                if i != j {
                    assert!(g1.matrix[(i, j)].abs() < 1e-12);
                }
            }
        }
        assert_relative_eq!(g1.trace, outcome.solution.expected_n, epsilon = 1e-10);
        assert!(g1.hermiticity_error() < 1e-12);
        assert!(g1.min_eigenvalue() > -1e-10 * g1.trace.max(1.0));
    }

    #[test]
    fn correlator_and_partial_trace_routes_agree() {
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let w = Potential::gaussian(0.8, 0.01, &s).unwrap();
        let caps = [12u16, 12, 12];
        let sol = gibbs_state(&s, &w, 0.9, 1.5, 0.6, &caps, &GibbsOptions::default()).unwrap();
        for k in 1..=2u32 {
            let a = reduced_density_matrix(&sol, k).unwrap();
            let b = reduced_density_matrix_via_partial_trace(&sol, k).unwrap();
            let diff = (&a.matrix - &b.matrix).abs().max();
            assert!(diff < 1e-10, "k = {k} route gap {diff}");
            assert_relative_eq!(a.trace, sol.expected_binomial(k), epsilon = 1e-10);
            assert!(a.hermiticity_error() < 1e-12);
            assert!(a.min_eigenvalue() > -1e-10 * a.trace.max(1.0));
        }
    }

    #[test]
    fn momentum_blocks_cover_interacting_sector() {
        // Safety net: blocks of the interacting solve reproduce the full
        // sector spectrum.
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let w = Potential::constant(0.7, &s).unwrap();
        let basis = enumerate_sector(&s, 3, Some(&[6u16, 6, 6])).unwrap();
        let full = crate::fock::assemble_hamiltonian(&basis, &s, &w, 0.5).unwrap().to_dense();
        let mut all_vals: Vec<f64> = full.symmetric_eigenvalues().iter().copied().collect();
        let terms = HamiltonianTerms::new(&s, &w).unwrap();
        let mut block_vals = Vec::new();
        for (_, members) in momentum_blocks(&basis, &s) {
            let h = assemble_block_dense(&basis, &members, &terms, 0.5);
            block_vals.extend(h.symmetric_eigenvalues().iter().copied());
        }
        all_vals.sort_by(f64::total_cmp);
        block_vals.sort_by(f64::total_cmp);
        assert_eq!(all_vals.len(), block_vals.len());
        for (a, b) in all_vals.iter().zip(&block_vals) {
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn truncation_control_converges_on_free_single_mode() {
        let s = single_mode();
        let w = Potential::zero(&s);
        let settings = TruncationSettings::default();
        let outcome = truncation_control(&s, &w, 1.0, 4.0, 0.0, &settings).unwrap();
        let exact_z = 1.0 / (1.0 - (-0.25f64).exp());
        assert_relative_eq!(outcome.solution.z, exact_z, max_relative = 1e-8);
        assert!(outcome.solution.tail_share < settings.epsilon_tail);
    }

    #[test]
    fn truncation_control_handles_positive_nu() {
        // kappa small enough that nu = w0*lambda*N0 - kappa > 0; the quartic
        // dominates and the sum still converges.
        let s = single_mode();
        let w = Potential::constant(1.0, &s).unwrap();
        let outcome =
            truncation_control(&s, &w, 0.5, 2.0, 1.0, &TruncationSettings::default()).unwrap();
        assert!(outcome.solution.nu > 0.0, "nu = {}", outcome.solution.nu);
        assert!(outcome.solution.tail_share < 1e-10);
    }

    #[test]
    fn tightening_epsilon_never_shrinks_caps() {
        let s = single_mode();
        let w = Potential::constant(1.0, &s).unwrap();
        let loose = TruncationSettings { epsilon_z: 1e-6, ..Default::default() };
        let tight = TruncationSettings { epsilon_z: 1e-7, ..Default::default() };
        let a = truncation_control(&s, &w, 1.0, 2.0, 0.5, &loose).unwrap();
        let b = truncation_control(&s, &w, 1.0, 2.0, 0.5, &tight).unwrap();
        for (ca, cb) in a.caps.iter().zip(&b.caps) {
            assert!(cb >= ca);
        }
    }

    #[test]
    fn oversized_sectors_error_out() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = Potential::constant(1.0, &s).unwrap();
        let caps = [40u16, 40, 40, 40, 40];
        let opts = GibbsOptions { max_sector_dim: 100, ..Default::default() };
        let r = gibbs_state(&s, &w, 1.0, 1.0, 0.1, &caps, &opts);
        assert!(matches!(r, Err(Error::Truncation(_))));
    }
}
