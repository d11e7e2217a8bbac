//! Truncated bosonic Fock spaces over a finite mode set.
//!
//! A fixed-particle-number sector is spanned by occupation vectors
//! `n = (n_1, .., n_M)` with `sum n_m = n`, optionally with per-mode caps.
//! Ladder operators act with the usual amplitudes `a|n> = sqrt(n)|n-1>`,
//! `a^dag|n> = sqrt(n+1)|n+1>`, and the grand-canonical Hamiltonian is
//!
//! `H = sum_m |k_m|^2 a^dag_m a_m
//!    + (lambda/2) sum_{k,p,q} w(k) a^dag_{p+k} a^dag_{q-k} a_p a_q`
//!
//! where every quartic term whose four modes do not all lie in the active
//! set is dropped. The conjugate of an admissible term is admissible, so the
//! truncation preserves Hermiticity; all matrix elements are real.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ModeSet, Potential};

/// Occupation numbers per mode, in the canonical mode order.
pub type Occupation = Vec<u16>;

/// All occupation vectors of one particle-number sector, enumerated with the
/// first mode's count decreasing (so `[(2,0), (1,1), (0,2)]` for two modes
/// and two particles). The order is the shared basis convention for every
/// matrix in the crate.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    n: u32,
    n_modes: usize,
    caps: Option<Vec<u16>>,
    states: Vec<u16>, // flat, row-major, dim * n_modes
}

impl SectorBasis {
    pub fn particle_number(&self) -> u32 {
        self.n
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn dim(&self) -> usize {
        if self.n_modes == 0 {
            0
        } else {
            self.states.len() / self.n_modes
        }
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.states[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u16]> {
        self.states.chunks_exact(self.n_modes.max(1))
    }

    pub fn caps(&self) -> Option<&[u16]> {
        self.caps.as_deref()
    }

    /// Position of an occupation vector, or `None` when it is not in the
    /// sector (wrong total or over a cap).
    pub fn index_of(&self, occ: &[u16]) -> Option<usize> {
        if occ.len() != self.n_modes {
            return None;
        }
        let dim = self.dim();
        let mut lo = 0usize;
        let mut hi = dim;
        while lo < hi {
            let mid = (lo + hi) / 2;
            // States are stored in descending lexicographic order.
            match occ.cmp(self.state(mid)) {
                Ordering::Equal => return Some(mid),
                Ordering::Greater => hi = mid,
                Ordering::Less => lo = mid + 1,
            }
        }
        None
    }
}

/// Enumerate the n-particle sector over `modes`, honoring per-mode caps when
/// given. Complete, duplicate-free, ordered with the leading mode count
/// decreasing.
pub fn enumerate_sector(modes: &ModeSet, n: u32, caps: Option<&[u16]>) -> Result<SectorBasis> {
    let n_modes = modes.len();
    if let Some(c) = caps {
        if c.len() != n_modes {
            return Err(Error::usage(format!(
                "caps length {} does not match mode count {}",
                c.len(),
                n_modes
            )));
        }
    }
    if n > u16::MAX as u32 {
        return Err(Error::usage(format!("sector number {n} exceeds occupation range")));
    }
    // Suffix cap sums bound how many particles the remaining modes can hold.
    let mut suffix = vec![0u64; n_modes + 1];
    for i in (0..n_modes).rev() {
        let cap = caps.map_or(u16::MAX as u64, |c| c[i] as u64);
        suffix[i] = suffix[i + 1].saturating_add(cap);
    }
    let mut states = Vec::new();
    let mut current = vec![0u16; n_modes];
    fill(&mut states, &mut current, 0, n as u64, caps, &suffix);
    Ok(SectorBasis { n, n_modes, caps: caps.map(<[u16]>::to_vec), states })
}

fn fill(
    out: &mut Vec<u16>,
    current: &mut [u16],
    mode: usize,
    remaining: u64,
    caps: Option<&[u16]>,
    suffix: &[u64],
) {
    if mode == current.len() {
        if remaining == 0 {
            out.extend_from_slice(current);
        }
        return;
    }
    if remaining > suffix[mode] {
        return;
    }
    let cap = caps.map_or(u16::MAX as u64, |c| c[mode] as u64);
    let hi = remaining.min(cap);
    let lo = remaining.saturating_sub(suffix[mode + 1]);
    let mut k = hi;
    loop {
        current[mode] = k as u16;
        fill(out, current, mode + 1, remaining - k, caps, suffix);
        if k == lo {
            break;
        }
        k -= 1;
    }
    current[mode] = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Create,
    Annihilate,
}

/// Apply a single ladder operator. Annihilation of an empty mode and
/// creation past the cap return `Ok(None)`; an out-of-range mode index is a
/// usage error.
pub fn apply_ladder(
    state: &[u16],
    mode_idx: usize,
    kind: Ladder,
    cap: Option<u16>,
) -> Result<Option<(Occupation, f64)>> {
    if mode_idx >= state.len() {
        return Err(Error::usage(format!(
            "mode index {mode_idx} outside the {}-mode set",
            state.len()
        )));
    }
    let n = state[mode_idx];
    match kind {
        Ladder::Annihilate => {
            if n == 0 {
                return Ok(None);
            }
            let mut next = state.to_vec();
            next[mode_idx] = n - 1;
            Ok(Some((next, (n as f64).sqrt())))
        }
        Ladder::Create => {
            if let Some(c) = cap {
                if n >= c {
                    return Ok(None);
                }
            }
            let mut next = state.to_vec();
            next[mode_idx] = n + 1;
            Ok(Some((next, (n as f64 + 1.0).sqrt())))
        }
    }
}

/// One admissible quartic term `coeff * a^dag_{p_out} a^dag_{q_out} a_p a_q`.
#[derive(Debug, Clone, Copy)]
pub struct QuarticTerm {
    pub coeff: f64,
    pub p: usize,
    pub q: usize,
    pub p_out: usize,
    pub q_out: usize,
}

/// Precomputed action of the Hamiltonian on occupation vectors: kinetic
/// energies per mode plus the list of admissible quartic terms (all four
/// participating modes inside the active set).
#[derive(Debug, Clone)]
pub struct HamiltonianTerms {
    pub kinetic: Vec<f64>,
    pub quartic: Vec<QuarticTerm>,
}

impl HamiltonianTerms {
    pub fn new(modes: &ModeSet, potential: &Potential) -> Result<Self> {
        potential.covers(modes)?;
        let kinetic: Vec<f64> = modes.modes().iter().map(|m| m.kinetic()).collect();
        let mut quartic = Vec::new();
        for qt in modes.transfers() {
            let coeff = potential.value(qt)?;
            if coeff == 0.0 {
                continue;
            }
            for (p, mp) in modes.modes().iter().enumerate() {
                let p_out = match modes.index_of(crate::model::Mode::new(mp.m.0 + qt.0, mp.m.1 + qt.1)) {
                    Some(i) => i,
                    None => continue,
                };
                for (q, mq) in modes.modes().iter().enumerate() {
                    let q_out =
                        match modes.index_of(crate::model::Mode::new(mq.m.0 - qt.0, mq.m.1 - qt.1)) {
                            Some(i) => i,
                            None => continue,
                        };
                    quartic.push(QuarticTerm { coeff, p, q, p_out, q_out });
                }
            }
        }
        Ok(HamiltonianTerms { kinetic, quartic })
    }

    /// Diagonal kinetic energy of one occupation vector.
    pub fn kinetic_energy(&self, occ: &[u16]) -> f64 {
        occ.iter().zip(&self.kinetic).map(|(&n, &e)| n as f64 * e).sum()
    }

    /// Apply one quartic term to `occ`; returns the image occupation and the
    /// real ladder amplitude, or `None` when an annihilation hits zero.
    /// Caps are enforced by the caller through basis membership.
    pub fn apply_quartic(term: &QuarticTerm, occ: &[u16], scratch: &mut Vec<u16>) -> Option<f64> {
        scratch.clear();
        scratch.extend_from_slice(occ);
        let mut prod = scratch[term.q] as u64;
        if prod == 0 {
            return None;
        }
        scratch[term.q] -= 1;
        let np = scratch[term.p] as u64;
        if np == 0 {
            return None;
        }
        prod *= np;
        scratch[term.p] -= 1;
        scratch[term.q_out] += 1;
        prod *= scratch[term.q_out] as u64;
        scratch[term.p_out] += 1;
        prod *= scratch[term.p_out] as u64;
        Some((prod as f64).sqrt())
    }
}

/// Sparse real operator on one sector basis; entries are (row, col, value)
/// sorted by column then row, which makes assembly reproducible.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub dim: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseOperator {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r as usize, c as usize)] += v;
        }
        m
    }

    /// Largest deviation from symmetry, `max |A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.to_dense();
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((d[(i, j)] - d[(j, i)]).abs());
            }
        }
        worst
    }
}

fn assemble(
    basis: &SectorBasis,
    terms: &HamiltonianTerms,
    lambda: f64,
    include_kinetic: bool,
) -> SparseOperator {
    let dim = basis.dim();
    let mut entries = Vec::new();
    let mut scratch = Vec::new();
    let mut col_acc: BTreeMap<u32, f64> = BTreeMap::new();
    for col in 0..dim {
        col_acc.clear();
        let occ = basis.state(col);
        if include_kinetic {
            let e = terms.kinetic_energy(occ);
            if e != 0.0 {
                col_acc.insert(col as u32, e);
            }
        }
        if lambda != 0.0 {
            for term in &terms.quartic {
                if let Some(amp) = HamiltonianTerms::apply_quartic(term, occ, &mut scratch) {
                    if let Some(row) = basis.index_of(&scratch) {
                        *col_acc.entry(row as u32).or_insert(0.0) +=
                            0.5 * lambda * term.coeff * amp;
                    }
                }
            }
        }
        for (&row, &v) in &col_acc {
            if v != 0.0 {
                entries.push((row, col as u32, v));
            }
        }
    }
    SparseOperator { dim, entries }
}

/// Full grand-canonical Hamiltonian on one sector.
pub fn assemble_hamiltonian(
    basis: &SectorBasis,
    modes: &ModeSet,
    potential: &Potential,
    lambda: f64,
) -> Result<SparseOperator> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda = {lambda} must be finite and >= 0")));
    }
    let terms = HamiltonianTerms::new(modes, potential)?;
    Ok(assemble(basis, &terms, lambda, true))
}

/// Interaction part alone (lambda factored out, no kinetic term); used to
/// probe positive semi-definiteness of the truncated quartic.
pub fn assemble_interaction(
    basis: &SectorBasis,
    modes: &ModeSet,
    potential: &Potential,
) -> Result<SparseOperator> {
    let terms = HamiltonianTerms::new(modes, potential)?;
    Ok(assemble(basis, &terms, 1.0, false))
}

/// Assemble the Hamiltonian restricted to a subset of sector states (a
/// momentum block), as a dense matrix in the subset's own indexing. Terms
/// leaving the subset are dropped; for momentum blocks nothing leaves.
pub fn assemble_block_dense(
    basis: &SectorBasis,
    block: &[u32],
    terms: &HamiltonianTerms,
    lambda: f64,
) -> DMatrix<f64> {
    let d = block.len();
    let mut local = std::collections::HashMap::with_capacity(d * 2);
    for (loc, &gidx) in block.iter().enumerate() {
        local.insert(gidx, loc);
    }
    let mut h = DMatrix::zeros(d, d);
    let mut scratch = Vec::new();
    for (loc, &gidx) in block.iter().enumerate() {
        let occ = basis.state(gidx as usize);
        h[(loc, loc)] += terms.kinetic_energy(occ);
        if lambda != 0.0 {
            for term in &terms.quartic {
                if let Some(amp) = HamiltonianTerms::apply_quartic(term, occ, &mut scratch) {
                    if let Some(row_g) = basis.index_of(&scratch) {
                        if let Some(&row) = local.get(&(row_g as u32)) {
                            h[(row, loc)] += 0.5 * lambda * term.coeff * amp;
                        }
                    }
                }
            }
        }
    }
    h
}

/// Group the sector states by total momentum `sum_m n_m * m` (in mode-lattice
/// units). The Hamiltonian never connects different groups, so each group
/// diagonalizes independently. Groups are ordered by momentum key.
pub fn momentum_blocks(basis: &SectorBasis, modes: &ModeSet) -> Vec<((i64, i64), Vec<u32>)> {
    let mut groups: BTreeMap<(i64, i64), Vec<u32>> = BTreeMap::new();
    for (i, occ) in basis.states().enumerate() {
        let mut p = (0i64, 0i64);
        for (n, mode) in occ.iter().zip(modes.modes()) {
            p.0 += *n as i64 * mode.m.0 as i64;
            p.1 += *n as i64 * mode.m.1 as i64;
        }
        groups.entry(p).or_default().push(i as u32);
    }
    groups.into_iter().collect()
}

/// Diagonal particle-number and total-momentum operators on a sector.
/// `momentum` holds one diagonal operator per torus direction, in units of
/// `2*pi` (the physical momentum is `2*pi` times the stored value).
pub struct NumberMomentum {
    pub number: SparseOperator,
    pub momentum: [SparseOperator; 2],
}

pub fn number_and_momentum(basis: &SectorBasis, modes: &ModeSet) -> NumberMomentum {
    let dim = basis.dim();
    let n_val = basis.particle_number() as f64;
    let mut number = Vec::with_capacity(dim);
    let mut px = Vec::with_capacity(dim);
    let mut py = Vec::with_capacity(dim);
    for (i, occ) in basis.states().enumerate() {
        number.push((i as u32, i as u32, n_val));
        let mut p = (0.0f64, 0.0f64);
        for (n, mode) in occ.iter().zip(modes.modes()) {
            p.0 += *n as f64 * mode.m.0 as f64;
            p.1 += *n as f64 * mode.m.1 as f64;
        }
        px.push((i as u32, i as u32, p.0));
        py.push((i as u32, i as u32, p.1));
    }
    NumberMomentum {
        number: SparseOperator { dim, entries: number },
        momentum: [SparseOperator { dim, entries: px }, SparseOperator { dim, entries: py }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModeSet;
    use approx::assert_relative_eq;

    fn binomial(n: u64, k: u64) -> u64 {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut acc = 1u128;
        for i in 0..k {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        acc as u64
    }

    #[test]
    fn sector_order_matches_convention() {
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        // Two "modes" worth of content checked via a 2-mode set is impossible
        // (symmetry needs the zero mode), so check the documented 3-mode order.
        let b = enumerate_sector(&s, 2, None).unwrap();
        let got: Vec<Vec<u16>> = b.states().map(<[u16]>::to_vec).collect();
        assert_eq!(
            got,
            vec![
                vec![2, 0, 0],
                vec![1, 1, 0],
                vec![1, 0, 1],
                vec![0, 2, 0],
                vec![0, 1, 1],
                vec![0, 0, 2],
            ]
        );
        for (i, occ) in b.states().enumerate() {
            assert_eq!(b.index_of(occ), Some(i));
        }
    }

    #[test]
    fn vacuum_sector_is_single_state() {
        let s = ModeSet::ball(1.0).unwrap();
        let b = enumerate_sector(&s, 0, None).unwrap();
        assert_eq!(b.dim(), 1);
        assert!(b.state(0).iter().all(|&n| n == 0));
    }

    #[test]
    fn sector_sizes_match_stars_and_bars() {
        let s = ModeSet::ball(1.0).unwrap(); // 5 modes
        let b = enumerate_sector(&s, 3, None).unwrap();
        assert_eq!(b.dim() as u64, binomial(3 + 5 - 1, 5 - 1));
        assert_eq!(b.dim(), 35);
        for n in 0..6u32 {
            let b = enumerate_sector(&s, n, None).unwrap();
            assert_eq!(b.dim() as u64, binomial(n as u64 + 4, 4));
        }
    }

    #[test]
    fn sector_respects_caps() {
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let caps = [1u16, 5, 1];
        let b = enumerate_sector(&s, 3, Some(&caps)).unwrap();
        for occ in b.states() {
            assert!(occ[0] <= 1 && occ[2] <= 1);
            assert_eq!(occ.iter().map(|&n| n as u32).sum::<u32>(), 3);
        }
        // 3 = a + b + c with a,c <= 1: (1,1,1), (1,2,0), (0,3,0), (0,2,1)
        assert_eq!(b.dim(), 4);
    }

    #[test]
    fn ladder_amplitudes() {
        let state = [3u16, 0];
        assert!(apply_ladder(&state, 1, Ladder::Annihilate, None).unwrap().is_none());
        let (up, amp) = apply_ladder(&state, 0, Ladder::Create, None).unwrap().unwrap();
        assert_eq!(up, vec![4, 0]);
        assert_relative_eq!(amp, 2.0, max_relative = 1e-15);
        assert!(apply_ladder(&state, 5, Ladder::Create, None).is_err());
        assert!(apply_ladder(&[3u16], 0, Ladder::Create, Some(3)).unwrap().is_none());

        // Number operator a^dag a on n = 5.
        let five = [5u16];
        let (down, a1) = apply_ladder(&five, 0, Ladder::Annihilate, None).unwrap().unwrap();
        let (back, a2) = apply_ladder(&down, 0, Ladder::Create, None).unwrap().unwrap();
        assert_eq!(back, vec![5]);
        assert_relative_eq!(a1 * a2, 5.0, max_relative = 1e-15);
    }

    #[test]
    fn single_mode_interaction_is_pair_counting() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        let w = crate::model::Potential::constant(1.0, &s).unwrap();
        for n in 0..6u32 {
            let b = enumerate_sector(&s, n, None).unwrap();
            let h = assemble_hamiltonian(&b, &s, &w, 1.0).unwrap().to_dense();
            let expect = 0.5 * n as f64 * (n as f64 - 1.0);
            assert_relative_eq!(h[(0, 0)], expect, epsilon = 1e-12);
        }
        let b2 = enumerate_sector(&s, 2, None).unwrap();
        let h = assemble_hamiltonian(&b2, &s, &w, 1.0).unwrap().to_dense();
        assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn free_hamiltonian_is_kinetic_diagonal() {
        let s = ModeSet::from_pairs([(-1, 0), (0, 0), (1, 0)]).unwrap();
        let w = crate::model::Potential::constant(1.0, &s).unwrap();
        let b = enumerate_sector(&s, 1, None).unwrap();
        let h = assemble_hamiltonian(&b, &s, &w, 0.0).unwrap().to_dense();
        let idx = b.index_of(&[0, 0, 1]).unwrap();
        assert_relative_eq!(h[(idx, idx)], 4.0 * std::f64::consts::PI.powi(2), max_relative = 1e-14);
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn hamiltonian_is_symmetric_on_random_sector() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = crate::model::Potential::gaussian(0.8, 0.01, &s).unwrap();
        let b = enumerate_sector(&s, 3, None).unwrap();
        let h = assemble_hamiltonian(&b, &s, &w, 0.7).unwrap();
        assert!(h.asymmetry() < 1e-12);
    }

    #[test]
    fn assembly_is_deterministic() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = crate::model::Potential::constant(0.5, &s).unwrap();
        let b = enumerate_sector(&s, 2, None).unwrap();
        let h1 = assemble_hamiltonian(&b, &s, &w, 0.3).unwrap();
        let h2 = assemble_hamiltonian(&b, &s, &w, 0.3).unwrap();
        assert_eq!(h1.entries, h2.entries);
    }

    #[test]
    fn number_momentum_and_commutator() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = crate::model::Potential::gaussian(1.0, 0.02, &s).unwrap();
        let b0 = enumerate_sector(&s, 0, None).unwrap();
        let nm0 = number_and_momentum(&b0, &s);
        assert_eq!(nm0.number.to_dense()[(0, 0)], 0.0);
        assert_eq!(nm0.momentum[0].to_dense()[(0, 0)], 0.0);

        // A +p/-p pair carries zero total momentum.
        let b2 = enumerate_sector(&s, 2, None).unwrap();
        let pair = b2.index_of(&[1, 0, 0, 0, 1]).unwrap();
        let nm2 = number_and_momentum(&b2, &s);
        assert_eq!(nm2.momentum[0].to_dense()[(pair, pair)], 0.0);
        assert_eq!(nm2.momentum[1].to_dense()[(pair, pair)], 0.0);
        assert_eq!(nm2.number.to_dense()[(pair, pair)], 2.0);

        let b3 = enumerate_sector(&s, 3, None).unwrap();
        let h = assemble_hamiltonian(&b3, &s, &w, 0.9).unwrap().to_dense();
        let nm3 = number_and_momentum(&b3, &s);
        for p in &nm3.momentum {
            let pd = p.to_dense();
            let comm = &h * &pd - &pd * &h;
            assert!(comm.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn momentum_blocks_partition_the_sector() {
        let s = ModeSet::ball(1.0).unwrap();
        let b = enumerate_sector(&s, 3, None).unwrap();
        let blocks = momentum_blocks(&b, &s);
        let total: usize = blocks.iter().map(|(_, v)| v.len()).sum();
        assert_eq!(total, b.dim());

        // No Hamiltonian entry may connect different blocks.
        let w = crate::model::Potential::constant(1.0, &s).unwrap();
        let h = assemble_hamiltonian(&b, &s, &w, 1.0).unwrap();
        let mut key = vec![(0i64, 0i64); b.dim()];
        for (k, members) in &blocks {
            for &i in members {
                key[i as usize] = *k;
            }
        }
        for &(r, c, _) in &h.entries {
            assert_eq!(key[r as usize], key[c as usize]);
        }
    }

    #[test]
    fn block_dense_matches_sparse_restriction() {
        let s = ModeSet::ball(1.0).unwrap();
        let w = crate::model::Potential::gaussian(0.6, 0.015, &s).unwrap();
        let b = enumerate_sector(&s, 2, None).unwrap();
        let terms = HamiltonianTerms::new(&s, &w).unwrap();
        let full = assemble_hamiltonian(&b, &s, &w, 0.4).unwrap().to_dense();
        for (_, members) in momentum_blocks(&b, &s) {
            let dense = assemble_block_dense(&b, &members, &terms, 0.4);
            for (li, &gi) in members.iter().enumerate() {
                for (lj, &gj) in members.iter().enumerate() {
                    assert_relative_eq!(
                        dense[(li, lj)],
                        full[(gi as usize, gj as usize)],
                        epsilon = 1e-13
                    );
                }
            }
        }
    }
}
