//! Columnar output: CSV tables per run, a JSON manifest per scenario, and a
//! verifier that recomputes the provenance hashes.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::SeedRun;
use crate::record::RunRecord;
use crate::scenario::{parse_scenario, KeyPolicy, Scenario};

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HASH_PREFIX: &str = "# scenario_hash=";

/// Tables written for every successful run.
pub const TABLES: [&str; 5] = ["timeseries.csv", "products.csv", "firms.csv", "fits.csv", "metrics.csv"];

const BASE_COLUMNS: [&str; 11] = [
    "step",
    "tau[short]",
    "t[long]",
    "total_sales[per_short]",
    "mean_price[real]",
    "consumers[per_agent]",
    "n_products[count]",
    "n_firms[count]",
    "revenue[currency_per_time]",
    "cost[currency_per_time]",
    "profit[currency_per_time]",
];

fn extra_unit(name: &str) -> &'static str {
    match name {
        "log_sales_variance" => "ln2",
        "profit_ratio_exact" | "profit_ratio_perturbed" => "ratio",
        "first_purchase" | "multiple_purchase" | "replacement" => "per_long",
        "cumulative_output" => "per_agent",
        "unit_cost" => "real",
        "size_regime" => "label",
        "price_variance" => "real2",
        _ => "-",
    }
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(path: PathBuf, hash: &str, header: &[String]) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{HASH_PREFIX}{hash}").map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header).map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        Ok(Self { path, writer })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer.write_record(fields).map_err(|e| Error::Csv {
            path: self.path.clone(),
            source: e,
        })
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Writes the time-series, cross-section, fit and metric tables of one run
/// into `dir`. Every table starts with a `# scenario_hash=` line followed by
/// a header row whose column names carry their units in brackets.
pub fn emit_tables(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &record.provenance.scenario_hash;

    let extras: BTreeSet<&String> = record.snapshots.iter().flat_map(|s| s.aggregate.extra.keys()).collect();
    let mut header = strings(BASE_COLUMNS);
    header.extend(extras.iter().map(|k| format!("{k}[{}]", extra_unit(k))));
    let mut t = Table::create(dir.join("timeseries.csv"), hash, &header)?;
    for s in &record.snapshots {
        let a = &s.aggregate;
        let mut row = vec![
            s.step.to_string(),
            num(s.tau),
            num(s.t),
            num(a.total_sales),
            num(a.mean_price),
            num(a.consumers),
            num(a.n_products),
            num(a.n_firms),
            num(a.revenue),
            num(a.cost),
            num(a.profit),
        ];
        row.extend(extras.iter().map(|k| a.extra.get(*k).map_or(String::new(), |v| num(*v))));
        t.row(&row)?;
    }
    t.finish()?;

    let mut t = Table::create(
        dir.join("products.csv"),
        hash,
        &strings([
            "id",
            "sales[per_short]",
            "inventory[per_agent]",
            "price[real]",
            "price_dev[real]",
            "fitness[per_short]",
        ]),
    )?;
    for p in record.final_snapshot().map_or(&[][..], |s| &s.products[..]) {
        t.row(&[
            p.id.0.to_string(),
            num(p.sales),
            num(p.inventory),
            num(p.price),
            num(p.price_dev),
            num(p.fitness),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(
        dir.join("firms.csv"),
        hash,
        &strings(["id", "size[per_short]", "n_products[count]", "cash_cow[id]"]),
    )?;
    for f in &record.firms {
        t.row(&[
            f.id.0.to_string(),
            num(f.sales),
            f.n_products.to_string(),
            f.cash_cow.map_or(String::new(), |c| c.0.to_string()),
        ])?;
    }
    t.finish()?;

    let mut t = Table::create(
        dir.join("fits.csv"),
        hash,
        &strings([
            "label",
            "family",
            "param",
            "value[-]",
            "stderr[-]",
            "loglik[nats]",
            "n[count]",
            "ks_statistic[-]",
            "p_value[-]",
            "converged",
        ]),
    )?;
    for fit in &record.fits {
        let r = &fit.result;
        let (ks, p) = r.gof.map_or((String::new(), String::new()), |g| (num(g.ks_statistic), num(g.p_value)));
        for est in r.estimates() {
            t.row(&[
                fit.label.clone(),
                r.family().name().to_string(),
                est.name.to_string(),
                num(est.value),
                num(est.stderr),
                num(r.loglik),
                r.n.to_string(),
                ks.clone(),
                p.clone(),
                r.converged.to_string(),
            ])?;
        }
    }
    t.finish()?;

    let mut t = Table::create(dir.join("metrics.csv"), hash, &strings(["name", "value[-]"]))?;
    for (k, v) in &record.metrics {
        t.row(&[k.clone(), num(*v)])?;
    }
    t.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub dir: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// SHA-256 of each table, keyed by file name.
    #[serde(default)]
    pub files: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_hash: String,
    pub code_version: String,
    pub runs: Vec<ManifestRun>,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes the canonical scenario, one table directory per successful run and
/// the manifest. Failed runs are listed in the manifest with their error.
pub fn write_outputs(scenario: &Scenario, runs: &[SeedRun], out: &Path) -> Result<Manifest> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scenario_path = out.join(SCENARIO_FILE);
    fs::write(&scenario_path, scenario.to_toml()?).map_err(|e| Error::io(&scenario_path, e))?;
    let mut manifest = Manifest {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        runs: Vec::new(),
    };
    for run in runs {
        let dir = run.dir_name();
        let mut entry = ManifestRun {
            seed: run.seed,
            variant: run.variant.clone(),
            dir: dir.clone(),
            status: RunStatus::Ok,
            error: None,
            files: Default::default(),
            diagnostics: Vec::new(),
        };
        match &run.outcome {
            Ok(record) => {
                let path = out.join(&dir);
                emit_tables(record, &path)?;
                for name in TABLES {
                    entry.files.insert(name.to_string(), file_sha256(&path.join(name))?);
                }
                entry.diagnostics = record.diagnostics.clone();
            }
            Err(e) => {
                entry.status = RunStatus::Failed;
                entry.error = Some(e.to_string());
            }
        }
        manifest.runs.push(entry);
    }
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub files_checked: usize,
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes the scenario hash from the stored scenario and checks it
/// against the manifest, the hash line of every table and the table digests.
pub fn verify_outputs(dir: &Path) -> Result<VerifyReport> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let scenario_path = dir.join(SCENARIO_FILE);
    let scenario_text = fs::read_to_string(&scenario_path).map_err(|e| Error::io(&scenario_path, e))?;
    let scenario = parse_scenario(&scenario_text, &scenario_path.display().to_string(), KeyPolicy::Strict)?.scenario;
    let hash = scenario.hash()?;

    let mut report = VerifyReport::default();
    if hash != manifest.scenario_hash {
        report.mismatches.push(format!(
            "{}: scenario hash {hash} differs from manifest {}",
            scenario_path.display(),
            manifest.scenario_hash
        ));
    }
    for run in manifest.runs.iter().filter(|r| r.status == RunStatus::Ok) {
        for (name, digest) in &run.files {
            let path = dir.join(&run.dir).join(name);
            report.files_checked += 1;
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut first = String::new();
            BufReader::new(file).read_line(&mut first).map_err(|e| Error::io(&path, e))?;
            match first.trim_end().strip_prefix(HASH_PREFIX) {
                Some(h) if h == hash => {}
                Some(h) => report
                    .mismatches
                    .push(format!("{}: embedded hash {h} differs from {hash}", path.display())),
                None => report.mismatches.push(format!("{}: missing hash line", path.display())),
            }
            let actual = file_sha256(&path)?;
            if &actual != digest {
                report
                    .mismatches
                    .push(format!("{}: content digest changed", path.display()));
            }
        }
    }
    Ok(report)
}

/// Reads one numeric column of a table written by [`emit_tables`] (or any
/// CSV with a header row; `#` lines are skipped). The column may be named
/// with or without its bracketed unit.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?
        .clone();
    let idx = headers
        .iter()
        .position(|h| h == column || h.split('[').next() == Some(column))
        .ok_or_else(|| Error::param("column", format!("'{column}' not found in {}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.into(),
            source: e,
        })?;
        let field = rec.get(idx).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        out.push(field.parse::<f64>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            message: format!("row {}: '{field}' is not a number", line + 1),
        })?);
    }
    Ok(out)
}
