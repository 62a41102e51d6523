//! Report files: a JSON document, an RFC-4180 CSV of every series and a
//! plotting script stub.
//!
//! Files are named `{experiment}-{config_hash}-{master_seed}.{ext}` and each
//! one carries the config hash, master seed and format version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::dynamics::ControlSchedule;
use crate::error::Result;
use crate::experiments::ExperimentReport;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// A finished run: the report plus any result tables that are not series.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub report: ExperimentReport,
    pub results: BTreeMap<String, Value>,
    pub schedule: Option<ControlSchedule>,
}

impl RunArtifacts {
    pub fn new(report: ExperimentReport) -> Self {
        Self { report, results: BTreeMap::new(), schedule: None }
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(value).expect("serializable result"));
    }
}

#[derive(Serialize)]
struct Document<'a> {
    format_version: u32,
    experiment: &'a str,
    config_hash: &'a str,
    master_seed: u64,
    passed: bool,
    parameters: &'a BTreeMap<String, Value>,
    verdicts: &'a [crate::experiments::Verdict],
    series: &'a [crate::experiments::Series],
    results: &'a BTreeMap<String, Value>,
    notes: &'a [String],
}

pub fn file_stem(experiment: &str, config_hash: &str, master_seed: u64) -> String {
    format!("{experiment}-{config_hash}-{master_seed}")
}

pub fn to_json(artifacts: &RunArtifacts) -> Result<String> {
    let r = &artifacts.report;
    let doc = Document {
        format_version: REPORT_FORMAT_VERSION,
        experiment: &r.name,
        config_hash: &r.config_hash,
        master_seed: r.master_seed,
        passed: r.passed(),
        parameters: &r.parameters,
        verdicts: &r.verdicts,
        series: &r.series,
        results: &artifacts.results,
        notes: &r.notes,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

fn number(v: f64) -> String {
    format!("{v:?}")
}

pub fn series_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let version = REPORT_FORMAT_VERSION.to_string();
    let seed = report.master_seed.to_string();
    w.write_record(["series", "t", "value", "stderr", "config_hash", "master_seed", "format_version"])
        .map_err(std::io::Error::from)?;
    for s in &report.series {
        for p in &s.points {
            w.write_record([
                s.name.as_str(),
                &number(p.t),
                &number(p.value),
                &number(p.stderr),
                &report.config_hash,
                &seed,
                &version,
            ])
            .map_err(std::io::Error::from)?;
        }
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// One row per knot: `t, zeta_1, …, zeta_J`.
pub fn schedule_csv(schedule: &ControlSchedule, config_hash: &str, master_seed: u64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend((1..=schedule.n_profiles()).map(|j| format!("zeta_{j}")));
    header.extend(["config_hash", "master_seed", "format_version"].map(String::from));
    w.write_record(&header).map_err(std::io::Error::from)?;
    for (t, amplitudes) in schedule.knots().iter().zip(schedule.coeffs()) {
        let mut row = vec![number(*t)];
        row.extend(amplitudes.iter().map(|a| number(*a)));
        row.extend([config_hash.to_string(), master_seed.to_string(), REPORT_FORMAT_VERSION.to_string()]);
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn plot_script(csv_name: &str, config_hash: &str, master_seed: u64) -> String {
    format!(
        r#"# Plot every series in {csv_name}.
# config_hash={config_hash} master_seed={master_seed} format_version={REPORT_FORMAT_VERSION}
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
series = defaultdict(lambda: ([], [], []))
with open(path, newline="") as f:
    for row in csv.DictReader(f):
        t, v, e = series[row["series"]]
        t.append(float(row["t"]))
        v.append(float(row["value"]))
        e.append(float(row["stderr"]))

fig, axes = plt.subplots(len(series), 1, figsize=(7, 2.5 * max(1, len(series))), squeeze=False)
for ax, (name, (t, v, e)) in zip(axes[:, 0], sorted(series.items())):
    ax.errorbar(t, v, yerr=e, marker="o", ms=3, capsize=2)
    ax.set_title(name)
    ax.set_xlabel("t")
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=120)
"#
    )
}

/// Writes the JSON, CSV and plot files (plus a schedule CSV if present).
pub fn write_report(out_dir: &Path, artifacts: &RunArtifacts) -> Result<Vec<PathBuf>> {
    let r = &artifacts.report;
    let stem = file_stem(&r.name, &r.config_hash, r.master_seed);
    let mut files = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    put(format!("{stem}.json"), to_json(artifacts)?.as_bytes())?;
    put(format!("{stem}.csv"), &series_csv(r)?)?;
    put(format!("{stem}.py"), plot_script(&format!("{stem}.csv"), &r.config_hash, r.master_seed).as_bytes())?;
    if let Some(schedule) = &artifacts.schedule {
        put(format!("{stem}-schedule.csv"), &schedule_csv(schedule, &r.config_hash, r.master_seed)?)?;
    }
    Ok(files)
}
