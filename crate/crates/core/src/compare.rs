//! Quantum-vs-classical convergence quantities along the sweep.
//!
//! For each scheduled temperature (with `lambda*T` pinned to the mean-field
//! line) the pipeline solves the interacting and free quantum models,
//! estimates the classical normalization and moment matrices from one shared
//! weighted ensemble, and assembles three families of gaps:
//!
//! - the free-energy gap `(F_lambda - F_0)/T` against `-log z`,
//! - Schatten-p norms of `(k!/T^k) G^(k) - M_k(mu)`,
//! - the trace norm of the subtracted one-body difference
//!   `(1/T)(G^(1)_lambda - G^(1)_0) - (M_1(mu) - M_1(mu_0))`.
//!
//! Error bars for every measure-side quantity come from the spread of
//! stream-level estimates. The verdict report checks each tracked gap for
//! monotone decrease within error bars, a terminal tolerance, and fits an
//! empirical log-log decay slope.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::classical::{
    estimate_partition_z, generate_ensemble, mean_and_se, moment_matrix,
    per_stream_moment_matrices, per_stream_z, SamplingPlan, WeightedEnsemble,
};
use crate::error::{Error, Result};
use crate::gibbs::{
    reduced_density_matrix, truncation_control, DensityMatrix, GibbsSolution, TruncationSettings,
};
use crate::model::{LambdaRule, ModeSet, Potential};

/// Schatten p-norm `(sum_i sigma_i^p)^(1/p)` over singular values; `p = 1`
/// is the trace norm.
pub fn schatten_norm(matrix: &DMatrix<Complex64>, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::usage(format!("schatten exponent p = {p} must be >= 1")));
    }
    let sv = matrix.clone().svd(false, false).singular_values;
    if p.is_infinite() {
        return Ok(sv.iter().fold(0.0f64, |a, &b| a.max(b)));
    }
    Ok(sv.iter().map(|&s| s.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// Real-matrix convenience wrapper around [`schatten_norm`].
pub fn schatten_norm_real(matrix: &DMatrix<f64>, p: f64) -> Result<f64> {
    schatten_norm(&complexify(matrix), p)
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Everything needed to run the sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub modes: ModeSet,
    pub potential: Potential,
    pub kappa: f64,
    pub temperatures: Vec<f64>,
    pub lambda_rule: LambdaRule,
    pub sampling: SamplingPlan,
    pub truncation: TruncationSettings,
    /// Density-matrix orders to compare (k = 1 is always computed).
    pub k_list: Vec<u32>,
    /// Schatten exponents for the k-body gaps.
    pub p_list: Vec<f64>,
}

/// One scaled density-matrix gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DmGap {
    pub k: u32,
    pub p: f64,
    pub value: f64,
    pub se: f64,
}

/// Per-temperature record of the theorem quantities.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub temperature: f64,
    pub lambda: f64,
    pub nu: f64,
    pub e0: f64,
    /// `(F_lambda - F_0)/T`.
    pub delta_f: f64,
    pub neg_log_z: f64,
    pub neg_log_z_se: f64,
    pub dm_gaps: Vec<DmGap>,
    pub g_s1: f64,
    pub g_s1_se: f64,
}

impl ComparisonRow {
    /// `|delta_F + log z|`: the free-energy convergence gap.
    pub fn fe_gap(&self) -> f64 {
        (self.delta_f - self.neg_log_z).abs()
    }

    pub fn dm_gap(&self, k: u32, p: f64) -> Option<&DmGap> {
        self.dm_gaps.iter().find(|g| g.k == k && g.p == p)
    }
}

/// A row either computed or aborted with a diagnostic; one failure does not
/// abort the sweep.
#[derive(Debug, Clone)]
pub enum RowResult {
    Row(ComparisonRow),
    Failed { temperature: f64, lambda: f64, message: String },
}

/// Summary of one quantum solve, for serialization.
#[derive(Debug, Clone)]
pub struct GibbsSummary {
    pub temperature: f64,
    pub lambda: f64,
    pub nu: f64,
    pub e0: f64,
    pub log_z: f64,
    pub free_energy: f64,
    pub expected_n: f64,
    pub tail_share: f64,
    pub caps: Vec<u16>,
}

impl GibbsSummary {
    fn from_solution(sol: &GibbsSolution) -> Self {
        GibbsSummary {
            temperature: sol.temperature,
            lambda: sol.lambda,
            nu: sol.nu,
            e0: sol.e0,
            log_z: sol.log_z,
            free_energy: sol.free_energy,
            expected_n: sol.expected_n,
            tail_share: sol.tail_share,
            caps: sol.caps.clone(),
        }
    }
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<RowResult>,
    pub summaries: Vec<GibbsSummary>,
}

/// Classical-side estimates shared by every row (the interacting measure
/// does not depend on the temperature).
struct ClassicalSide {
    neg_log_z: f64,
    neg_log_z_se: f64,
    moments: BTreeMap<u32, DMatrix<Complex64>>,
    stream_moments: BTreeMap<u32, Vec<DMatrix<Complex64>>>,
    m1_free_exact: DMatrix<Complex64>,
}

fn classical_side(spec: &SweepSpec, k_set: &[u32]) -> Result<ClassicalSide> {
    let ensemble: WeightedEnsemble = generate_ensemble(
        &spec.modes,
        &spec.potential,
        spec.kappa,
        &spec.sampling,
        None,
    )?;
    let (z, _) = estimate_partition_z(&ensemble)?;
    let stream_z = per_stream_z(&ensemble);
    let (_, z_se) = mean_and_se(&stream_z);
    let neg_log_z = -z.ln();
    let neg_log_z_se = z_se / z;

    let mut moments = BTreeMap::new();
    let mut stream_moments = BTreeMap::new();
    for &k in k_set {
        moments.insert(k, moment_matrix(&ensemble, k, &spec.modes)?);
        stream_moments.insert(k, per_stream_moment_matrices(&ensemble, k, &spec.modes)?);
    }

    let dim = spec.modes.len();
    let mut m1_free_exact = DMatrix::<Complex64>::zeros(dim, dim);
    for (i, mode) in spec.modes.modes().iter().enumerate() {
        m1_free_exact[(i, i)] = Complex64::new(1.0 / (mode.kinetic() + spec.kappa), 0.0);
    }
    Ok(ClassicalSide { neg_log_z, neg_log_z_se, moments, stream_moments, m1_free_exact })
}

fn factorial_f64(k: u32) -> f64 {
    (1..=k as u64).map(|i| i as f64).product()
}

fn build_row(
    spec: &SweepSpec,
    temperature: f64,
    lambda: f64,
    classical: &ClassicalSide,
    summaries: &mut Vec<GibbsSummary>,
) -> Result<ComparisonRow> {
    let sol_l = truncation_control(
        &spec.modes,
        &spec.potential,
        spec.kappa,
        temperature,
        lambda,
        &spec.truncation,
    )?
    .solution;
    let sol_0 = truncation_control(
        &spec.modes,
        &spec.potential,
        spec.kappa,
        temperature,
        0.0,
        &spec.truncation,
    )?
    .solution;
    summaries.push(GibbsSummary::from_solution(&sol_l));
    summaries.push(GibbsSummary::from_solution(&sol_0));

    let delta_f = (sol_l.free_energy - sol_0.free_energy) / temperature;

    // Scaled k-body gaps.
    let mut dm_gaps = Vec::new();
    let mut g1_l: Option<DensityMatrix> = None;
    for &k in &spec.k_list {
        let gk = reduced_density_matrix(&sol_l, k)?;
        let scale = factorial_f64(k) / temperature.powi(k as i32);
        let scaled = complexify(&gk.matrix) * Complex64::new(scale, 0.0);
        let m_k = &classical.moments[&k];
        let streams = &classical.stream_moments[&k];
        for &p in &spec.p_list {
            let value = schatten_norm(&(&scaled - m_k), p)?;
            let stream_vals: Vec<f64> = streams
                .iter()
                .map(|m| schatten_norm(&(&scaled - m), p))
                .collect::<Result<_>>()?;
            let (_, se) = mean_and_se(&stream_vals);
            dm_gaps.push(DmGap { k, p, value, se });
        }
        if k == 1 {
            g1_l = Some(gk);
        }
    }
    let g1_l = match g1_l {
        Some(g) => g,
        None => reduced_density_matrix(&sol_l, 1)?,
    };
    let g1_0 = reduced_density_matrix(&sol_0, 1)?;

    // Subtracted one-body difference, assembled before taking the norm.
    let quantum =
        (complexify(&g1_l.matrix) - complexify(&g1_0.matrix)) / Complex64::new(temperature, 0.0);
    let m1 = &classical.moments[&1];
    let assemble_s1 = |m1_est: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        &quantum - &(m1_est - &classical.m1_free_exact)
    };
    let g_s1 = schatten_norm(&assemble_s1(m1), 1.0)?;
    let stream_vals: Vec<f64> = classical.stream_moments[&1]
        .iter()
        .map(|m| schatten_norm(&assemble_s1(m), 1.0))
        .collect::<Result<_>>()?;
    let (_, g_s1_se) = mean_and_se(&stream_vals);

    Ok(ComparisonRow {
        temperature,
        lambda,
        nu: sol_l.nu,
        e0: sol_l.e0,
        delta_f,
        neg_log_z: classical.neg_log_z,
        neg_log_z_se: classical.neg_log_z_se,
        dm_gaps,
        g_s1,
        g_s1_se,
    })
}

/// Run the full sweep: quantum solves per scheduled temperature against one
/// shared classical ensemble. Truncation or numerical failures abort the
/// affected row with a diagnostic, not the sweep.
pub fn theorem_quantities(spec: &SweepSpec) -> Result<SweepOutput> {
    if spec.temperatures.is_empty() {
        return Err(Error::config("sweep schedule has no temperatures"));
    }
    if let LambdaRule::Explicit(ls) = &spec.lambda_rule {
        if ls.len() != spec.temperatures.len() {
            return Err(Error::config(format!(
                "{} explicit lambdas for {} temperatures",
                ls.len(),
                spec.temperatures.len()
            )));
        }
    }
    spec.potential.covers(&spec.modes)?;
    for pair in spec.temperatures.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::config(format!(
                "temperatures must be strictly increasing, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    let mut k_set: Vec<u32> = spec.k_list.clone();
    if !k_set.contains(&1) {
        k_set.push(1);
    }
    k_set.sort_unstable();
    k_set.dedup();
    let classical = classical_side(spec, &k_set)?;

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, &t) in spec.temperatures.iter().enumerate() {
        let lambda = match &spec.lambda_rule {
            LambdaRule::InverseT => 1.0 / t,
            LambdaRule::Explicit(ls) => ls[i],
        };
        match build_row(spec, t, lambda, &classical, &mut summaries) {
            Ok(row) => rows.push(RowResult::Row(row)),
            Err(e) => rows.push(RowResult::Failed {
                temperature: t,
                lambda,
                message: e.to_string(),
            }),
        }
    }
    Ok(SweepOutput { rows, summaries })
}

/// Verdict configuration: critical value for the error-bar allowance and
/// terminal tolerances per tracked quantity (absent means monotonicity-only).
#[derive(Debug, Clone)]
pub struct VerdictSettings {
    pub z_crit: f64,
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for VerdictSettings {
    fn default() -> Self {
        VerdictSettings { z_crit: 2.576, tolerances: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityVerdict {
    pub name: String,
    pub values: Vec<f64>,
    pub error_bars: Vec<f64>,
    pub monotone_decreasing: bool,
    pub terminal_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub terminal_ok: bool,
    /// Least-squares slope of log(gap) against log(T).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictReport {
    pub n_rows: usize,
    pub quantities: Vec<QuantityVerdict>,
    pub overall_pass: bool,
}

fn fit_log_slope(ts: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

fn judge(
    name: &str,
    ts: &[f64],
    values: &[f64],
    error_bars: &[f64],
    settings: &VerdictSettings,
) -> QuantityVerdict {
    let mut monotone = true;
    for i in 1..values.len() {
        let allowed = settings.z_crit
            * (error_bars[i - 1] * error_bars[i - 1] + error_bars[i] * error_bars[i]).sqrt();
        if values[i] > values[i - 1] + allowed {
            monotone = false;
        }
    }
    let terminal_value = *values.last().unwrap_or(&f64::NAN);
    let tolerance = settings.tolerances.get(name).copied();
    let terminal_ok = tolerance.map_or(true, |tol| terminal_value <= tol);
    let slope = fit_log_slope(ts, values);
    QuantityVerdict {
        name: name.to_string(),
        values: values.to_vec(),
        error_bars: error_bars.to_vec(),
        monotone_decreasing: monotone,
        terminal_value,
        tolerance,
        terminal_ok,
        slope,
        pass: monotone && terminal_ok,
    }
}

/// Aggregate the sweep rows into per-quantity convergence verdicts.
pub fn convergence_report(
    rows: &[ComparisonRow],
    settings: &VerdictSettings,
) -> Result<VerdictReport> {
    if rows.len() < 3 {
        return Err(Error::usage(format!(
            "convergence report needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    for pair in rows.windows(2) {
        if pair[1].temperature <= pair[0].temperature {
            return Err(Error::usage("rows must be keyed by strictly increasing temperature"));
        }
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.temperature).collect();
    let mut quantities = Vec::new();

    let fe: Vec<f64> = rows.iter().map(ComparisonRow::fe_gap).collect();
    let fe_se: Vec<f64> = rows.iter().map(|r| r.neg_log_z_se).collect();
    quantities.push(judge("fe_gap", &ts, &fe, &fe_se, settings));

    for gap in &rows[0].dm_gaps {
        let name = dm_gap_name(gap.k, gap.p);
        let vals: Vec<f64> = rows
            .iter()
            .map(|r| r.dm_gap(gap.k, gap.p).map_or(f64::NAN, |g| g.value))
            .collect();
        let ses: Vec<f64> = rows
            .iter()
            .map(|r| r.dm_gap(gap.k, gap.p).map_or(f64::NAN, |g| g.se))
            .collect();
        quantities.push(judge(&name, &ts, &vals, &ses, settings));
    }

    let s1: Vec<f64> = rows.iter().map(|r| r.g_s1).collect();
    let s1_se: Vec<f64> = rows.iter().map(|r| r.g_s1_se).collect();
    quantities.push(judge("g_s1", &ts, &s1, &s1_se, settings));

    let overall_pass = quantities.iter().all(|q| q.pass);
    Ok(VerdictReport { n_rows: rows.len(), quantities, overall_pass })
}

/// Canonical column/quantity name for a (k, p) gap, e.g. `g_k1_p2`.
pub fn dm_gap_name(k: u32, p: f64) -> String {
    if p.fract() == 0.0 {
        format!("g_k{k}_p{}", p as i64)
    } else {
        format!("g_k{k}_p{p}")
    }
}
