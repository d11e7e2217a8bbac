//! Mode sets, dispersion, pair potentials and the coupled coupling schedule.
//!
//! Everything lives on the unit 2-torus, so momenta are `k = 2*pi*(m1, m2)`
//! with integer `(m1, m2)` and kinetic energy `|k|^2 = 4*pi^2*(m1^2 + m2^2)`.
//! All lattice sums (counterterm, expected particle number, interaction
//! transfers) run over one finite, negation-symmetric mode set containing the
//! zero mode, shared verbatim between the quantum and classical sides.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A single Fourier mode on the unit torus, indexed by its integer pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub m: (i32, i32),
}

impl Mode {
    pub fn new(m1: i32, m2: i32) -> Self {
        Mode { m: (m1, m2) }
    }

    /// Wavevector `2*pi*(m1, m2)`.
    pub fn wavevector(&self) -> [f64; 2] {
        [2.0 * PI * self.m.0 as f64, 2.0 * PI * self.m.1 as f64]
    }

    /// Kinetic energy `|k|^2 = 4*pi^2*(m1^2 + m2^2)`; zero iff `m = (0,0)`.
    pub fn kinetic(&self) -> f64 {
        let (m1, m2) = self.m;
        4.0 * PI * PI * (m1 as f64 * m1 as f64 + m2 as f64 * m2 as f64)
    }

    pub fn is_zero(&self) -> bool {
        self.m == (0, 0)
    }

    pub fn negated(&self) -> Mode {
        Mode::new(-self.m.0, -self.m.1)
    }
}

/// Ordered finite set of distinct modes, closed under negation and
/// containing the zero mode. The order is lexicographic on `(m1, m2)` and is
/// the canonical basis order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSet {
    modes: Vec<Mode>,
}

impl ModeSet {
    /// Build from explicit integer pairs. Deduplicates, sorts canonically and
    /// validates symmetry and the presence of the zero mode.
    pub fn from_pairs<I: IntoIterator<Item = (i32, i32)>>(pairs: I) -> Result<Self> {
        let mut modes: Vec<Mode> = pairs.into_iter().map(|(a, b)| Mode::new(a, b)).collect();
        modes.sort();
        modes.dedup();
        let set = ModeSet { modes };
        set.validate()?;
        Ok(set)
    }

    /// All modes with `m1^2 + m2^2 <= radius^2` (the mode-lattice ball).
    pub fn ball(radius: f64) -> Result<Self> {
        if radius < 0.0 || !radius.is_finite() {
            return Err(Error::domain(format!("ball radius {radius} must be finite and >= 0")));
        }
        let r2 = radius * radius;
        let rmax = radius.floor() as i32;
        let mut pairs = Vec::new();
        for m1 in -rmax..=rmax {
            for m2 in -rmax..=rmax {
                if (m1 * m1 + m2 * m2) as f64 <= r2 + 1e-12 {
                    pairs.push((m1, m2));
                }
            }
        }
        Self::from_pairs(pairs)
    }

    fn validate(&self) -> Result<()> {
        if !self.modes.iter().any(Mode::is_zero) {
            return Err(Error::config("mode set must contain the zero mode (0,0)"));
        }
        for mode in &self.modes {
            if self.index_of(mode.negated()).is_none() {
                return Err(Error::config(format!(
                    "mode set is not symmetric: contains {:?} but not its negation",
                    mode.m
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn index_of(&self, mode: Mode) -> Option<usize> {
        self.modes.binary_search(&mode).ok()
    }

    /// Indices of the modes inside the lattice ball `m1^2+m2^2 <= radius^2`,
    /// or all indices when no radius is given.
    pub fn cutoff_indices(&self, radius: Option<f64>) -> Vec<usize> {
        match radius {
            None => (0..self.modes.len()).collect(),
            Some(r) => {
                let r2 = r * r + 1e-12;
                self.modes
                    .iter()
                    .enumerate()
                    .filter(|(_, mode)| {
                        let (a, b) = mode.m;
                        (a * a + b * b) as f64 <= r2
                    })
                    .map(|(i, _)| i)
                    .collect()
            }
        }
    }

    /// True if `other` contains every mode of `self`.
    pub fn is_subset_of(&self, other: &ModeSet) -> bool {
        self.modes.iter().all(|m| other.index_of(*m).is_some())
    }

    /// All distinct momentum-transfer differences `k - k'` between members.
    pub fn transfers(&self) -> Vec<(i32, i32)> {
        let mut set = std::collections::BTreeSet::new();
        for a in &self.modes {
            for b in &self.modes {
                set.insert((a.m.0 - b.m.0, a.m.1 - b.m.1));
            }
        }
        set.into_iter().collect()
    }
}

/// Even, non-negative pair potential given by its Fourier coefficients on
/// momentum-transfer space. Stored as an explicit table over integer
/// transfer vectors.
#[derive(Debug, Clone)]
pub struct Potential {
    table: BTreeMap<(i32, i32), f64>,
}

impl Potential {
    /// Build from an explicit transfer table; validates sign, evenness and
    /// finiteness.
    pub fn from_table<I: IntoIterator<Item = ((i32, i32), f64)>>(entries: I) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (q, v) in entries {
            if !v.is_finite() {
                return Err(Error::config(format!("w({},{}) = {v} is not finite", q.0, q.1)));
            }
            if v < 0.0 {
                return Err(Error::config(format!("w({},{}) = {v} must be >= 0", q.0, q.1)));
            }
            if let Some(prev) = table.insert(q, v) {
                if prev != v {
                    return Err(Error::config(format!(
                        "conflicting entries for w({},{}): {prev} vs {v}",
                        q.0, q.1
                    )));
                }
            }
        }
        // Evenness: fill the mirror image when absent, reject when it disagrees.
        let keys: Vec<(i32, i32)> = table.keys().copied().collect();
        for q in keys {
            let neg = (-q.0, -q.1);
            let v = table[&q];
            match table.get(&neg) {
                None => {
                    table.insert(neg, v);
                }
                Some(&u) if u != v => {
                    return Err(Error::config(format!(
                        "potential is not even: w({},{}) = {v} but w({},{}) = {u}",
                        q.0, q.1, neg.0, neg.1
                    )));
                }
                _ => {}
            }
        }
        Ok(Potential { table })
    }

    /// Constant coefficient `w0` on every transfer reachable within `modes`.
    pub fn constant(w0: f64, modes: &ModeSet) -> Result<Self> {
        Self::from_table(modes.transfers().into_iter().map(|q| (q, w0)))
    }

    /// Gaussian decay `w0 * exp(-alpha*|k_q|^2)` on every reachable transfer.
    pub fn gaussian(w0: f64, alpha: f64, modes: &ModeSet) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::config(format!("gaussian alpha {alpha} is not finite")));
        }
        Self::from_table(modes.transfers().into_iter().map(|q| {
            let ksq = 4.0 * PI * PI * ((q.0 * q.0 + q.1 * q.1) as f64);
            (q, w0 * (-alpha * ksq).exp())
        }))
    }

    /// Identically-zero potential on the reachable transfers (free theory).
    pub fn zero(modes: &ModeSet) -> Self {
        Self::constant(0.0, modes).expect("zero table is always valid")
    }

    pub fn value(&self, q: (i32, i32)) -> Result<f64> {
        self.table.get(&q).copied().ok_or_else(|| {
            Error::config(format!("potential table has no entry for transfer ({},{})", q.0, q.1))
        })
    }

    /// Coefficient at zero transfer; required by the coupling schedule.
    pub fn at_zero(&self) -> Result<f64> {
        self.value((0, 0))
    }

    /// Check the table covers every difference `k - k'` within `modes`.
    pub fn covers(&self, modes: &ModeSet) -> Result<()> {
        for q in modes.transfers() {
            self.value(q)?;
        }
        Ok(())
    }

    /// Reporting sum `sum_q (1+|k_q|^2)^{1/2} * w(q)`, finite by construction.
    pub fn weighted_sum(&self) -> f64 {
        self.table
            .iter()
            .map(|(&(a, b), &v)| {
                let ksq = 4.0 * PI * PI * ((a * a + b * b) as f64);
                (1.0 + ksq).sqrt() * v
            })
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((i32, i32), f64)> + '_ {
        self.table.iter().map(|(&q, &v)| (q, v))
    }
}

/// Free-field mass density `sum_{|m| <= cutoff} 1/(|k|^2 + kappa)` over the
/// selected modes: the Wick counterterm subtracted from `|u(x)|^2`.
///
/// On the torus this expectation is x-independent, so a single scalar is the
/// whole story.
pub fn counterterm_density(modes: &ModeSet, kappa: f64, sub_cutoff: Option<f64>) -> Result<f64> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    let sum = modes
        .cutoff_indices(sub_cutoff)
        .into_iter()
        .map(|i| 1.0 / (modes.modes()[i].kinetic() + kappa))
        .sum();
    Ok(sum)
}

/// Expected particle number of the non-interacting Gibbs state at chemical
/// potential `-kappa`: `sum_k 1/(exp((|k|^2+kappa)/T) - 1)`.
pub fn bose_particle_number(modes: &ModeSet, kappa: f64, temperature: f64) -> Result<f64> {
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::domain(format!(
            "temperature = {temperature} must be finite and > 0"
        )));
    }
    let sum = modes
        .modes()
        .iter()
        .map(|mode| {
            let x = (mode.kinetic() + kappa) / temperature;
            1.0 / x.exp_m1()
        })
        .sum();
    Ok(sum)
}

/// Chemical potential and energy offset tied to the interaction strength:
/// `nu = w(0)*lambda*N0(T) - kappa`, `E0 = lambda*w(0)*N0(T)^2 / 2`,
/// with `N0` summed over the active mode set.
pub fn coupling_schedule(
    modes: &ModeSet,
    potential: &Potential,
    kappa: f64,
    temperature: f64,
    lambda: f64,
) -> Result<(f64, f64)> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda = {lambda} must be finite and >= 0")));
    }
    let n0 = bose_particle_number(modes, kappa, temperature)?;
    let w0 = potential.at_zero()?;
    let nu = w0 * lambda * n0 - kappa;
    let e0 = 0.5 * lambda * w0 * n0 * n0;
    Ok((nu, e0))
}

/// How the coupling follows the temperature across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaRule {
    /// `lambda = 1/T` (the mean-field line `lambda*T = 1`).
    InverseT,
    /// One explicit coupling per scheduled temperature.
    Explicit(Vec<f64>),
}

/// One resolved point of the sweep.
#[derive(Debug, Clone, Copy)]
pub struct SchedulePoint {
    pub temperature: f64,
    pub lambda: f64,
    pub nu: f64,
    pub e0: f64,
}

/// The coupled (kappa, T, lambda) schedule of a sweep.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kappa: f64,
    pub temperatures: Vec<f64>,
    pub lambda_rule: LambdaRule,
}

impl Schedule {
    pub fn new(kappa: f64, temperatures: Vec<f64>, lambda_rule: LambdaRule) -> Result<Self> {
        if kappa <= 0.0 || !kappa.is_finite() {
            return Err(Error::domain(format!("kappa = {kappa} must be finite and > 0")));
        }
        if temperatures.is_empty() {
            return Err(Error::config("schedule needs at least one temperature"));
        }
        for &t in &temperatures {
            if t <= 0.0 || !t.is_finite() {
                return Err(Error::domain(format!("temperature {t} must be finite and > 0")));
            }
        }
        if let LambdaRule::Explicit(ref ls) = lambda_rule {
            if ls.len() != temperatures.len() {
                return Err(Error::config(format!(
                    "{} explicit lambdas for {} temperatures",
                    ls.len(),
                    temperatures.len()
                )));
            }
            for &l in ls {
                if l < 0.0 || !l.is_finite() {
                    return Err(Error::domain(format!("lambda {l} must be finite and >= 0")));
                }
            }
        }
        Ok(Schedule { kappa, temperatures, lambda_rule })
    }

    pub fn lambda_at(&self, idx: usize) -> f64 {
        match &self.lambda_rule {
            LambdaRule::InverseT => 1.0 / self.temperatures[idx],
            LambdaRule::Explicit(ls) => ls[idx],
        }
    }

    /// Resolve (nu, E0) for every scheduled temperature.
    pub fn points(&self, modes: &ModeSet, potential: &Potential) -> Result<Vec<SchedulePoint>> {
        self.temperatures
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let lambda = self.lambda_at(i);
                let (nu, e0) = coupling_schedule(modes, potential, self.kappa, t, lambda)?;
                Ok(SchedulePoint { temperature: t, lambda, nu, e0 })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn five_modes() -> ModeSet {
        ModeSet::ball(1.0).unwrap()
    }

    #[test]
    fn mode_kinetic_energy() {
        assert_eq!(Mode::new(0, 0).kinetic(), 0.0);
        assert_relative_eq!(Mode::new(1, 0).kinetic(), 4.0 * PI * PI, max_relative = 1e-15);
        assert_relative_eq!(Mode::new(-2, 1).kinetic(), 20.0 * PI * PI, max_relative = 1e-15);
    }

    #[test]
    fn mode_set_canonical_order_and_symmetry() {
        let s = ModeSet::from_pairs([(1, 0), (0, 0), (-1, 0), (0, 1), (0, -1)]).unwrap();
        let ms: Vec<(i32, i32)> = s.modes().iter().map(|m| m.m).collect();
        assert_eq!(ms, vec![(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]);
        assert!(ModeSet::from_pairs([(0, 0), (1, 0)]).is_err());
        assert!(ModeSet::from_pairs([(1, 0), (-1, 0)]).is_err());
    }

    #[test]
    fn ball_sizes() {
        assert_eq!(ModeSet::ball(0.0).unwrap().len(), 1);
        assert_eq!(ModeSet::ball(1.0).unwrap().len(), 5);
        assert_eq!(ModeSet::ball(2.0).unwrap().len(), 13);
        assert_eq!(ModeSet::ball(5.0).unwrap().len(), 81);
    }

    #[test]
    fn counterterm_single_mode() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        assert_eq!(counterterm_density(&s, 1.0, None).unwrap(), 1.0);
        assert!(counterterm_density(&s, 0.0, None).is_err());
        assert!(counterterm_density(&s, -1.0, None).is_err());
    }

    #[test]
    fn counterterm_five_modes_matches_direct_sum() {
        let s = five_modes();
        // Independent oracle: term-by-term summation in the canonical order.
        let oracle: f64 = s.modes().iter().map(|m| 1.0 / (m.kinetic() + 1.0)).sum();
        let c = counterterm_density(&s, 1.0, None).unwrap();
        assert_relative_eq!(c, oracle, max_relative = 1e-15);
        assert_relative_eq!(c, 1.0 + 4.0 / (4.0 * PI * PI + 1.0), max_relative = 1e-14);
        assert_abs_diff_eq!(c, 1.09882, epsilon = 1e-5);
    }

    #[test]
    fn counterterm_decreases_to_zero_in_kappa() {
        let s = five_modes();
        let mut last = f64::INFINITY;
        for exp in 0..8 {
            let kappa = 10f64.powi(exp);
            let c = counterterm_density(&s, kappa, None).unwrap();
            assert!(c < last && c > 0.0);
            last = c;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn counterterm_additive_over_disjoint_subsets() {
        let s = ModeSet::ball(2.0).unwrap();
        let inner = counterterm_density(&s, 0.7, Some(1.0)).unwrap();
        let all = counterterm_density(&s, 0.7, None).unwrap();
        let shell: f64 = s
            .modes()
            .iter()
            .filter(|m| {
                let (a, b) = m.m;
                (a * a + b * b) > 1
            })
            .map(|m| 1.0 / (m.kinetic() + 0.7))
            .sum();
        assert_relative_eq!(inner + shell, all, max_relative = 1e-14);
    }

    #[test]
    fn bose_number_frozen_values() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        // Oracle: direct evaluation of 1/(e^{kappa/T} - 1).
        assert_relative_eq!(
            bose_particle_number(&s, 1.0, 1.0).unwrap(),
            1.0 / (1f64.exp() - 1.0),
            max_relative = 1e-14
        );
        assert_abs_diff_eq!(bose_particle_number(&s, 1.0, 1.0).unwrap(), 0.581977, epsilon = 1e-6);
        assert_relative_eq!(
            bose_particle_number(&s, 1.0, 100.0).unwrap(),
            99.50083333194445,
            max_relative = 1e-12
        );
        assert!(bose_particle_number(&s, 1.0, 0.0).is_err());
        assert!(bose_particle_number(&s, 0.0, 1.0).is_err());
    }

    #[test]
    fn bose_number_over_t_approaches_counterterm() {
        let s = ModeSet::ball(2.0).unwrap();
        let c = counterterm_density(&s, 0.5, None).unwrap();
        let gap3 = (bose_particle_number(&s, 0.5, 1e3).unwrap() / 1e3 - c).abs() / c;
        let gap4 = (bose_particle_number(&s, 0.5, 1e4).unwrap() / 1e4 - c).abs() / c;
        assert!(gap4 < gap3);
        assert!(gap4 < 1e-3);
    }

    #[test]
    fn bose_number_monotone_in_t_and_kappa() {
        let s = five_modes();
        let mut last = 0.0;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let n = bose_particle_number(&s, 1.0, t).unwrap();
            assert!(n > last);
            last = n;
        }
        let mut last = f64::INFINITY;
        for kappa in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let n = bose_particle_number(&s, kappa, 2.0).unwrap();
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn schedule_trivial_cases() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        let w_zero = Potential::zero(&s);
        let (nu, e0) = coupling_schedule(&s, &w_zero, 2.0, 3.0, 1.5).unwrap();
        assert_eq!((nu, e0), (-2.0, 0.0));
        let w_one = Potential::constant(1.0, &s).unwrap();
        let (nu, e0) = coupling_schedule(&s, &w_one, 2.0, 3.0, 0.0).unwrap();
        assert_eq!((nu, e0), (-2.0, 0.0));
    }

    #[test]
    fn schedule_single_mode_frozen() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        let w = Potential::constant(1.0, &s).unwrap();
        let (nu, e0) = coupling_schedule(&s, &w, 1.0, 1.0, 1.0).unwrap();
        // Oracle: nu = N0 - 1 and e0 = N0^2/2 with N0 = 1/(e - 1).
        let n0 = 1.0 / (1f64.exp() - 1.0);
        assert_relative_eq!(nu, n0 - 1.0, max_relative = 1e-14);
        assert_relative_eq!(e0, 0.5 * n0 * n0, max_relative = 1e-14);
        assert_abs_diff_eq!(nu, -0.418023, epsilon = 1e-6);
        assert_abs_diff_eq!(e0, 0.169349, epsilon = 1e-6);
    }

    #[test]
    fn potential_families() {
        let s = five_modes();
        let w = Potential::constant(0.3, &s).unwrap();
        assert_eq!(w.at_zero().unwrap(), 0.3);
        assert_eq!(w.value((1, 1)).unwrap(), 0.3);
        assert!(w.value((7, 7)).is_err());
        w.covers(&s).unwrap();

        let g = Potential::gaussian(1.0, 0.02, &s).unwrap();
        let k2 = 4.0 * PI * PI;
        assert_relative_eq!(g.value((1, 0)).unwrap(), (-0.02 * k2).exp(), max_relative = 1e-14);
        assert_eq!(g.value((1, 0)).unwrap(), g.value((-1, 0)).unwrap());
        assert!(g.weighted_sum().is_finite());

        assert!(Potential::from_table([((1, 0), -1.0)]).is_err());
        assert!(Potential::from_table([((1, 0), 1.0), ((-1, 0), 2.0)]).is_err());
        assert!(Potential::from_table([((0, 0), f64::NAN)]).is_err());
    }

    #[test]
    fn schedule_validation_and_points() {
        let s = ModeSet::from_pairs([(0, 0)]).unwrap();
        let w = Potential::constant(1.0, &s).unwrap();
        let sched = Schedule::new(1.0, vec![4.0, 8.0], LambdaRule::InverseT).unwrap();
        let pts = sched.points(&s, &w).unwrap();
        assert_eq!(pts.len(), 2);
        assert_relative_eq!(pts[0].lambda, 0.25, max_relative = 1e-15);
        assert!(Schedule::new(0.0, vec![1.0], LambdaRule::InverseT).is_err());
        assert!(Schedule::new(1.0, vec![], LambdaRule::InverseT).is_err());
        assert!(Schedule::new(1.0, vec![1.0], LambdaRule::Explicit(vec![1.0, 2.0])).is_err());
    }
}
