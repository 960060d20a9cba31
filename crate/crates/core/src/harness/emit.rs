//! CSV and JSON output. Every CSV starts with one `#` comment line carrying a
//! timestamp; everything after it is the reproducible body.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::summary::ClaimVerdict;
use super::{FailedTrial, SolverSummary, TrialRecord};
use crate::error::{Error, Result};
use crate::solvers::SolverKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidInput(format!("unknown format '{other}' (csv or json)"))),
        }
    }
}

const BASE_COLUMNS: [&str; 12] =
    ["schema", "point", "trial", "seed", "resamples", "d", "lambda", "tau0", "gamma", "cond_target", "solve_rel_residual", "b_overlap"];
const SPECTRAL_COLUMNS: [&str; 9] =
    ["nu", "lam_max_a", "lam_min_a", "cond_a", "lam1_m", "norm_w", "event_ea_holds", "trace_res1", "trace_res2"];
const TRANSFER_COLUMNS: [&str; 8] = [
    "transfer_eps",
    "transfer_l",
    "transfer_t",
    "transfer_trace_dev",
    "transfer_event_holds",
    "transfer_bound",
    "transfer_deviation",
    "transfer_ok",
];
const DECOMPOSITION_COLUMNS: [&str; 12] = [
    "denom",
    "uR1u",
    "uR2u",
    "zR1z",
    "zR2z",
    "uR1z",
    "uR2z",
    "uA2z",
    "trace_r1",
    "overlap_assembled",
    "overlap_predicted",
    "overlap_empirical",
];
const SOLVER_COLUMNS: [&str; 13] = [
    "error",
    "queries_used",
    "rel_err",
    "f_gap",
    "overlap",
    "residual",
    "truncated",
    "converged",
    "lmin_est",
    "lmax_est",
    "phi_queries",
    "phi_final",
    "orth_err",
];

/// Column order of the records CSV.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = BASE_COLUMNS.iter().chain(&SPECTRAL_COLUMNS).chain(&TRANSFER_COLUMNS).chain(&DECOMPOSITION_COLUMNS).map(|s| s.to_string()).collect();
    for k in SolverKind::ALL {
        h.extend(SOLVER_COLUMNS.iter().map(|c| format!("{}_{c}", k.name())));
    }
    h
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn blanks(n: usize) -> impl Iterator<Item = String> {
    std::iter::repeat_n(String::new(), n)
}

fn solver_cells(s: Option<&SolverSummary>) -> Vec<String> {
    let Some(s) = s else {
        return blanks(SOLVER_COLUMNS.len()).collect();
    };
    vec![
        s.error.clone().unwrap_or_default(),
        opt(s.queries_used),
        opt(s.rel_err),
        opt(s.f_gap),
        opt(s.overlap),
        opt(s.residual),
        opt(s.truncated),
        opt(s.converged),
        opt(s.lmin_est),
        opt(s.lmax_est),
        opt(s.phi_queries),
        opt(s.phi_final),
        opt(s.orthonormality_error),
    ]
}

pub fn csv_row(r: &TrialRecord) -> Vec<String> {
    let mut row = vec![
        r.schema.clone(),
        r.point.to_string(),
        r.trial.to_string(),
        r.seed.to_string(),
        r.resamples.to_string(),
        r.d.to_string(),
        r.lambda.to_string(),
        r.tau0.to_string(),
        r.gamma.to_string(),
        r.cond_target.to_string(),
        r.solve_rel_residual.to_string(),
        r.b_overlap.to_string(),
    ];
    match &r.spectral {
        Some(s) => row.extend([
            s.nu.to_string(),
            s.lam_max_a.to_string(),
            s.lam_min_a.to_string(),
            opt(s.cond_a),
            s.lam1_m.to_string(),
            s.norm_w.to_string(),
            s.event_ea_holds.to_string(),
            opt(s.trace_res1),
            opt(s.trace_res2),
        ]),
        None => row.extend(blanks(SPECTRAL_COLUMNS.len())),
    }
    match &r.transfer {
        Some(t) => row.extend([
            t.eps.to_string(),
            t.l.to_string(),
            t.t.to_string(),
            t.trace_dev.to_string(),
            t.event_holds.to_string(),
            t.check.bound.to_string(),
            t.check.deviation.to_string(),
            t.check.ok.to_string(),
        ]),
        None => row.extend(blanks(TRANSFER_COLUMNS.len())),
    }
    match &r.decomposition {
        Some(d) => row.extend(
            [d.denom, d.u_r1_u, d.u_r2_u, d.z_r1_z, d.z_r2_z, d.u_r1_z, d.u_r2_z, d.u_a2_z, d.trace_r1, d.assembled, d.predicted, d.empirical]
                .iter()
                .map(|x| x.to_string()),
        ),
        None => row.extend(blanks(DECOMPOSITION_COLUMNS.len())),
    }
    for k in SolverKind::ALL {
        row.extend(solver_cells(r.solvers.iter().find(|s| s.solver == k)));
    }
    row
}

pub fn timestamp_line() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("# hardquad {} generated_at_unix={secs}", crate::SCHEMA_VERSION)
}

/// The reproducible part of an emitted CSV: everything after the leading comment line.
pub fn diffable_body(text: &str) -> &str {
    if text.starts_with('#') {
        text.split_once('\n').map_or("", |(_, rest)| rest)
    } else {
        text
    }
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>, path: &Path) -> Result<String> {
    let err = |e: csv::Error| Error::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let body = w.into_inner().map_err(|e| err(e.into_error().into()))?;
    Ok(format!("{}\n{}", timestamp_line(), String::from_utf8_lossy(&body)))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_records_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    write_file(path, &csv_text(&csv_header(), records.iter().map(csv_row), path)?)
}

pub fn write_failures_csv(path: &Path, failures: &[FailedTrial]) -> Result<()> {
    let header: Vec<String> = ["point", "trial", "seeds", "reason"].iter().map(|s| s.to_string()).collect();
    let rows = failures.iter().map(|f| {
        let seeds: Vec<String> = f.seeds.iter().map(|s| s.to_string()).collect();
        vec![f.point.to_string(), f.trial.to_string(), seeds.join(" "), f.reason.clone()]
    });
    write_file(path, &csv_text(&header, rows, path)?)
}

/// One row per (point, trial, threshold): the first query count reaching the threshold.
pub fn write_curve_csv(path: &Path, records: &[TrialRecord], kind: SolverKind) -> Result<()> {
    let header: Vec<String> = ["point", "trial", "solver", "threshold", "queries"].iter().map(|s| s.to_string()).collect();
    let rows = records.iter().flat_map(|r| {
        r.solvers.iter().filter(|s| s.solver == kind).flat_map(move |s| {
            s.curve
                .iter()
                .map(move |c| vec![r.point.to_string(), r.trial.to_string(), kind.name().to_string(), c.threshold.to_string(), opt(c.queries)])
        })
    });
    write_file(path, &csv_text(&header, rows, path)?)
}

pub fn claims_header() -> Vec<String> {
    [
        "claim",
        "verdict",
        "successes",
        "trials",
        "required_trials",
        "required_successes",
        "frequency",
        "threshold",
        "margin",
        "statistic",
        "q05",
        "median",
        "q95",
        "description",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn write_claims_csv(path: &Path, claims: &[ClaimVerdict]) -> Result<()> {
    let rows = claims.iter().map(|c| {
        vec![
            c.claim.clone(),
            c.verdict.as_str().to_string(),
            c.successes.to_string(),
            c.trials.to_string(),
            c.required_trials.to_string(),
            c.required_successes.to_string(),
            opt(c.frequency),
            c.threshold.to_string(),
            c.margin.to_string(),
            opt(c.statistic),
            opt(c.quantiles.map(|q| q.q05)),
            opt(c.quantiles.map(|q| q.median)),
            opt(c.quantiles.map(|q| q.q95)),
            c.description.clone(),
        ]
    });
    write_file(path, &csv_text(&claims_header(), rows, path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsDocument {
    pub schema: String,
    pub records: Vec<TrialRecord>,
    #[serde(default)]
    pub failures: Vec<FailedTrial>,
}

pub fn write_json(path: &Path, records: &[TrialRecord], failures: &[FailedTrial]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let doc = RecordsDocument { schema: crate::SCHEMA_VERSION.into(), records: records.to_vec(), failures: failures.to_vec() };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    write_file(path, &text)
}

pub fn read_json(path: &Path) -> Result<RecordsDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: RecordsDocument = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    if doc.schema != crate::SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!("{}: schema {} (expected {})", path.display(), doc.schema, crate::SCHEMA_VERSION)));
    }
    Ok(doc)
}

/// Write `<stem>.csv` or `<stem>.json`, the failures file, and one curve file per solver present.
pub fn emit(dir: &Path, stem: &str, records: &[TrialRecord], failures: &[FailedTrial], format: Format) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            let p = dir.join(format!("{stem}.csv"));
            write_records_csv(&p, records)?;
            written.push(p);
            let p = dir.join(format!("{stem}_failures.csv"));
            write_failures_csv(&p, failures)?;
            written.push(p);
        }
        Format::Json => {
            let p = dir.join(format!("{stem}.json"));
            write_json(&p, records, failures)?;
            written.push(p);
        }
    }
    for k in SolverKind::ALL {
        if records.iter().any(|r| r.solvers.iter().any(|s| s.solver == k)) {
            let p = dir.join(format!("{stem}_curve_{}.csv", k.name()));
            write_curve_csv(&p, records, k)?;
            written.push(p);
        }
    }
    Ok(written)
}
