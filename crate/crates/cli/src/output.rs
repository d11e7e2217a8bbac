//! Deterministic artifact writers: CSV with 17-significant-digit floats and
//! a traceability header, JSON verdicts.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use bose2d_core::classical::WickTable;
use bose2d_core::compare::{dm_gap_name, ComparisonRow, GibbsSummary, RowResult, VerdictReport};

use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn config_hash(raw: &[u8]) -> String {
    let digest = Sha256::digest(raw);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn header_line(hash: &str) -> String {
    format!("# bose2d v{TOOL_VERSION} config_sha256={hash}")
}

/// 17 significant digits; round-trips every f64 value bit-exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", parent.display())))?;
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn caps_field(caps: &[u16]) -> String {
    caps.iter().map(u16::to_string).collect::<Vec<_>>().join(";")
}

pub fn comparison_csv(
    rows: &[RowResult],
    k_list: &[u32],
    p_list: &[f64],
    hash: &str,
) -> String {
    let mut out = String::new();
    out.push_str(&header_line(hash));
    out.push('\n');
    out.push_str("t,lambda,nu,e0,delta_f,neg_log_z,neg_log_z_se,fe_gap");
    for &k in k_list {
        for &p in p_list {
            let name = dm_gap_name(k, p);
            let _ = write!(out, ",{name},{name}_se");
        }
    }
    out.push_str(",g_s1,g_s1_se\n");
    for row in rows {
        match row {
            RowResult::Row(r) => {
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(r.temperature),
                    fmt_f64(r.lambda),
                    fmt_f64(r.nu),
                    fmt_f64(r.e0),
                    fmt_f64(r.delta_f),
                    fmt_f64(r.neg_log_z),
                    fmt_f64(r.neg_log_z_se),
                    fmt_f64(r.fe_gap()),
                );
                for &k in k_list {
                    for &p in p_list {
                        match r.dm_gap(k, p) {
                            Some(g) => {
                                let _ = write!(out, ",{},{}", fmt_f64(g.value), fmt_f64(g.se));
                            }
                            None => out.push_str(",,"),
                        }
                    }
                }
                let _ = writeln!(out, ",{},{}", fmt_f64(r.g_s1), fmt_f64(r.g_s1_se));
            }
            RowResult::Failed { temperature, lambda, message } => {
                let _ = writeln!(
                    out,
                    "# row t={} lambda={} FAILED: {message}",
                    fmt_f64(*temperature),
                    fmt_f64(*lambda)
                );
            }
        }
    }
    out
}

pub fn gibbs_summary_csv(summaries: &[GibbsSummary], hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&header_line(hash));
    out.push('\n');
    out.push_str("t,lambda,nu,e0,log_z,z,f,n_expected,tail_share,caps\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.temperature),
            fmt_f64(s.lambda),
            fmt_f64(s.nu),
            fmt_f64(s.e0),
            fmt_f64(s.log_z),
            fmt_f64(s.log_z.exp()),
            fmt_f64(s.free_energy),
            fmt_f64(s.expected_n),
            fmt_f64(s.tail_share),
            caps_field(&s.caps),
        );
    }
    out
}

pub fn classical_summary_csv(
    z: f64,
    se: f64,
    n_samples: usize,
    n_streams: u32,
    hash: &str,
) -> String {
    let mut out = String::new();
    out.push_str(&header_line(hash));
    out.push('\n');
    out.push_str("z,z_se,n_samples,n_streams,neg_log_z,neg_log_z_se\n");
    let _ = writeln!(
        out,
        "{},{},{n_samples},{n_streams},{},{}",
        fmt_f64(z),
        fmt_f64(se),
        fmt_f64(-z.ln()),
        fmt_f64(se / z),
    );
    out
}

pub fn ensemble_csv(
    ensemble: &bose2d_core::classical::WeightedEnsemble,
    hash: &str,
) -> String {
    let mut out = String::new();
    out.push_str(&header_line(hash));
    out.push('\n');
    out.push_str("stream,sample,e_int,weight\n");
    for stream in 0..ensemble.stream_count {
        let range = ensemble.stream_range(stream);
        for (i, idx) in range.enumerate() {
            let _ = writeln!(
                out,
                "{stream},{i},{},{}",
                fmt_f64(ensemble.energies[idx]),
                fmt_f64(ensemble.weights[idx]),
            );
        }
    }
    out
}

pub fn wick_csv(table: &WickTable, hash: &str) -> String {
    let mut out = String::new();
    out.push_str(&header_line(hash));
    out.push('\n');
    out.push_str(
        "radius,n_modes,e_int_mean,e_int_se,unsub_mean,unsub_se,min_energy,l1_gap_prev,l1_gap_se\n",
    );
    for (i, r) in table.per_radius.iter().enumerate() {
        let (gap, gap_se) = if i == 0 {
            (String::new(), String::new())
        } else {
            let g = &table.gaps[i - 1];
            (fmt_f64(g.l1_mean), fmt_f64(g.l1_se))
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{gap},{gap_se}",
            fmt_f64(r.radius),
            r.n_modes,
            fmt_f64(r.eint_mean),
            fmt_f64(r.eint_se),
            fmt_f64(r.unsub_mean),
            fmt_f64(r.unsub_se),
            fmt_f64(r.min_energy),
        );
    }
    out
}

pub fn verdict_json(report: &VerdictReport, hash: &str) -> Result<String, CliError> {
    #[derive(serde::Serialize)]
    struct Envelope<'a> {
        tool_version: &'static str,
        config_sha256: &'a str,
        #[serde(flatten)]
        report: &'a VerdictReport,
    }
    serde_json::to_string_pretty(&Envelope { tool_version: TOOL_VERSION, config_sha256: hash, report })
        .map_err(|e| CliError::Io(format!("serializing verdict: {e}")))
        .map(|mut s| {
            s.push('\n');
            s
        })
}

/// Parse a comparison.csv back into rows (for the report stage). Returns the
/// rows and the config hash recorded in the header.
pub fn parse_comparison_csv(text: &str) -> Result<(Vec<ComparisonRow>, String), CliError> {
    let mut hash = String::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(pos) = rest.find("config_sha256=") {
                hash = rest[pos + "config_sha256=".len()..].trim().to_string();
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(line.split(',').map(str::to_string).collect());
            continue;
        }
        let cols = header.as_ref().unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(CliError::Config(format!(
                "comparison.csv row has {} fields for {} columns",
                fields.len(),
                cols.len()
            )));
        }
        let get = |name: &str| -> Result<f64, CliError> {
            let i = cols
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| CliError::Config(format!("comparison.csv lacks column {name}")))?;
            fields[i]
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("column {name}: {e}")))
        };
        let mut dm_gaps = Vec::new();
        for c in cols.iter() {
            if let Some(spec) = c.strip_prefix("g_k") {
                if c.ends_with("_se") {
                    continue;
                }
                let mut parts = spec.split("_p");
                let k: u32 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| CliError::Config(format!("bad gap column {c}")))?;
                let p: f64 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| CliError::Config(format!("bad gap column {c}")))?;
                let value = get(c)?;
                let se = get(&format!("{c}_se"))?;
                dm_gaps.push(bose2d_core::compare::DmGap { k, p, value, se });
            }
        }
        rows.push(ComparisonRow {
            temperature: get("t")?,
            lambda: get("lambda")?,
            nu: get("nu")?,
            e0: get("e0")?,
            delta_f: get("delta_f")?,
            neg_log_z: get("neg_log_z")?,
            neg_log_z_se: get("neg_log_z_se")?,
            dm_gaps,
            g_s1: get("g_s1")?,
            g_s1_se: get("g_s1_se")?,
        });
    }
    if header.is_none() {
        return Err(CliError::Config("comparison.csv has no header row".into()));
    }
    Ok((rows, hash))
}
