//! Pipeline stages behind the subcommands. `sweep` is the composition of
//! the individual stages with a shared seed, so running them separately
//! reproduces its artifacts byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bose2d_core::classical::{
    estimate_partition_z, generate_ensemble, wick_cauchy_check, SamplingPlan,
};
use bose2d_core::compare::{
    convergence_report, theorem_quantities, ComparisonRow, GibbsSummary, RowResult,
    VerdictReport, VerdictSettings,
};
use bose2d_core::gibbs::truncation_control;
use bose2d_core::model::{LambdaRule, ModeSet};

use crate::config::{build, load_config, sweep_spec, BuiltConfig, LoadedConfig};
use crate::output;
use crate::{CliError, Overrides};

struct Stage {
    built: BuiltConfig,
    hash: String,
    out_dir: PathBuf,
}

fn prepare(config_path: &Path, overrides: &Overrides) -> Result<Stage, CliError> {
    let LoadedConfig { raw, config } = load_config(config_path)?;
    let mut built = build(&config)?;
    if let Some(seed) = overrides.seed {
        built.sampling.master_seed = seed;
    }
    if let Some(streams) = overrides.streams {
        if streams == 0 {
            return Err(CliError::Config("--streams must be > 0".into()));
        }
        built.sampling.streams = streams;
    }
    if let Some(samples) = overrides.samples {
        if samples == 0 {
            return Err(CliError::Config("--samples must be > 0".into()));
        }
        built.sampling.samples = samples;
    }
    let out_dir = overrides
        .out
        .clone()
        .or_else(|| built.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    // The hash covers the config bytes and the effective overrides.
    let mut hashed = raw.clone();
    hashed.extend_from_slice(
        format!(
            "\n# effective seed={} streams={} samples={}",
            built.sampling.master_seed, built.sampling.streams, built.sampling.samples
        )
        .as_bytes(),
    );
    let hash = output::config_hash(&hashed);
    Ok(Stage { built, hash, out_dir })
}

fn print_verdict(report: &VerdictReport) {
    for q in &report.quantities {
        let status = if q.pass { "pass" } else { "FAIL" };
        let slope = q.slope.map_or(String::from("n/a"), |s| format!("{s:.3}"));
        let tol = q.tolerance.map_or(String::from("-"), |t| format!("{t}"));
        println!(
            "{status} {name}: terminal {terminal:.6e} (tolerance {tol}), monotone {mono}, slope {slope}",
            name = q.name,
            terminal = q.terminal_value,
            mono = q.monotone_decreasing,
        );
    }
    println!("overall: {}", if report.overall_pass { "pass" } else { "FAIL" });
}

pub fn sweep(config_path: &Path, overrides: &Overrides) -> Result<ExitCode, CliError> {
    let Stage { built, hash, out_dir } = prepare(config_path, overrides)?;
    let spec = sweep_spec(&built);
    let outcome = theorem_quantities(&spec)?;

    output::write_text(
        &out_dir.join("gibbs_summary.csv"),
        &output::gibbs_summary_csv(&outcome.summaries, &hash),
    )?;
    output::write_text(
        &out_dir.join("comparison.csv"),
        &output::comparison_csv(&outcome.rows, &built.k_list, &built.p_list, &hash),
    )?;
    if built.dump_ensemble {
        let ensemble = generate_ensemble(
            &built.modes,
            &built.potential,
            built.kappa,
            &built.sampling,
            None,
        )?;
        output::write_text(&out_dir.join("ensemble.csv"), &output::ensemble_csv(&ensemble, &hash))?;
    }

    let mut failed = 0usize;
    let rows: Vec<ComparisonRow> = outcome
        .rows
        .iter()
        .filter_map(|r| match r {
            RowResult::Row(row) => Some(row.clone()),
            RowResult::Failed { temperature, message, .. } => {
                eprintln!("row t = {temperature} failed: {message}");
                failed += 1;
                None
            }
        })
        .collect();
    if rows.len() < 3 {
        return Err(CliError::Config(format!(
            "verdict needs at least 3 comparison rows, got {} ({} failed)",
            rows.len(),
            failed
        )));
    }
    let report = convergence_report(&rows, &built.verdict)?;
    output::write_text(&out_dir.join("verdict.json"), &output::verdict_json(&report, &hash)?)?;
    print_verdict(&report);
    Ok(if report.overall_pass && failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn classical_sample(config_path: &Path, overrides: &Overrides) -> Result<ExitCode, CliError> {
    let Stage { built, hash, out_dir } = prepare(config_path, overrides)?;
    let ensemble = generate_ensemble(
        &built.modes,
        &built.potential,
        built.kappa,
        &built.sampling,
        None,
    )?;
    let (z, se) = estimate_partition_z(&ensemble)?;
    output::write_text(
        &out_dir.join("classical_summary.csv"),
        &output::classical_summary_csv(z, se, ensemble.len(), ensemble.stream_count, &hash),
    )?;
    if built.dump_ensemble {
        output::write_text(&out_dir.join("ensemble.csv"), &output::ensemble_csv(&ensemble, &hash))?;
    }
    println!("z = {} +- {} from {} samples", z, se, ensemble.len());
    Ok(ExitCode::SUCCESS)
}

pub fn quantum_exact(config_path: &Path, overrides: &Overrides) -> Result<ExitCode, CliError> {
    let Stage { built, hash, out_dir } = prepare(config_path, overrides)?;
    let mut summaries: Vec<GibbsSummary> = Vec::new();
    for (i, &t) in built.temperatures.iter().enumerate() {
        let lambda = match &built.lambda_rule {
            LambdaRule::InverseT => 1.0 / t,
            LambdaRule::Explicit(ls) => ls[i],
        };
        for l in [lambda, 0.0] {
            let sol = truncation_control(
                &built.modes,
                &built.potential,
                built.kappa,
                t,
                l,
                &built.truncation,
            )?
            .solution;
            summaries.push(GibbsSummary {
                temperature: sol.temperature,
                lambda: sol.lambda,
                nu: sol.nu,
                e0: sol.e0,
                log_z: sol.log_z,
                free_energy: sol.free_energy,
                expected_n: sol.expected_n,
                tail_share: sol.tail_share,
                caps: sol.caps.clone(),
            });
        }
    }
    output::write_text(
        &out_dir.join("gibbs_summary.csv"),
        &output::gibbs_summary_csv(&summaries, &hash),
    )?;
    println!("wrote {} quantum summaries", summaries.len());
    Ok(ExitCode::SUCCESS)
}

pub fn wick_check(config_path: &Path, overrides: &Overrides) -> Result<ExitCode, CliError> {
    let Stage { built, hash, out_dir } = prepare(config_path, overrides)?;
    let wick = built
        .wick
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no [wick] section".into()))?;
    let max_radius = wick.radii.last().copied().unwrap_or(0.0);
    let modes = ModeSet::ball(max_radius)?;
    // The potential must cover the wider transfer set of the wick ball.
    let loaded = load_config(config_path)?;
    let potential = crate::config::rebuild_potential(&loaded.config.potential, &modes)?;
    let plan = SamplingPlan {
        master_seed: built.sampling.master_seed,
        streams: wick.streams.unwrap_or(built.sampling.streams),
        samples: overrides.samples.unwrap_or(wick.samples),
    };
    let table = wick_cauchy_check(&modes, &wick.radii, &potential, built.kappa, &plan)?;
    output::write_text(&out_dir.join("wick_check.csv"), &output::wick_csv(&table, &hash))?;
    for r in &table.per_radius {
        println!(
            "radius {:>4}: modes {:>4}, E_int mean {:.6e}, unsubtracted mean {:.6e}, min {:.3e}",
            r.radius, r.n_modes, r.eint_mean, r.unsub_mean, r.min_energy
        );
    }
    for g in &table.gaps {
        println!(
            "L1 gap {} -> {}: {:.6e} +- {:.2e}",
            g.lower_radius, g.upper_radius, g.l1_mean, g.l1_se
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn report(dir: &Path, config_path: Option<&Path>) -> Result<ExitCode, CliError> {
    let csv_path = dir.join("comparison.csv");
    let text = std::fs::read_to_string(&csv_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", csv_path.display())))?;
    let (rows, hash) = output::parse_comparison_csv(&text)?;
    let settings = match config_path {
        Some(p) => {
            let loaded = load_config(p)?;
            build(&loaded.config)?.verdict
        }
        None => VerdictSettings::default(),
    };
    let report = convergence_report(&rows, &settings)?;
    output::write_text(&dir.join("verdict.json"), &output::verdict_json(&report, &hash)?)?;
    print_verdict(&report);
    Ok(if report.overall_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
