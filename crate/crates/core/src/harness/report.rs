use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::format_epsilon;
use crate::harness::run::RunManifest;
use crate::mia::AttackKind;
use crate::models::ModelFamily;

pub const REPORT_CSV_HEADER: &str =
    "epsilon,family,seed,attack,Acc,Prec,TPR,FPR,AUC,ADV,frechet,beta_hat,beta_bound,adv_bound,vacuous";

/// One report line; `seed` is `None` on aggregated rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "crate::serde_inf")]
    pub epsilon: f64,
    pub family: ModelFamily,
    pub seed: Option<u64>,
    pub attack: AttackKind,
    pub accuracy: f64,
    pub precision: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub auc: f64,
    pub advantage: f64,
    pub frechet: Option<f64>,
    /// Expectation-form empirical β̂.
    pub beta_hat: Option<f64>,
    pub beta_bound: Option<f64>,
    pub adv_bound: Option<f64>,
    pub vacuous: Option<bool>,
}

impl ReportRow {
    pub fn from_manifest(m: &RunManifest) -> Self {
        let b = m.bounds.as_ref();
        Self {
            epsilon: m.config.epsilon,
            family: m.config.family,
            seed: Some(m.config.seed),
            attack: m.config.attack,
            accuracy: m.metrics.accuracy,
            precision: m.metrics.precision,
            tpr: m.metrics.tpr,
            fpr: m.metrics.fpr,
            auc: m.metrics.auc,
            advantage: m.metrics.advantage,
            frechet: m.frechet,
            beta_hat: b.and_then(|b| b.empirical.as_ref()).map(|e| e.beta_mean),
            beta_bound: b.map(|b| b.beta_stated),
            adv_bound: b.map(|b| b.advantage_bound),
            vacuous: b.map(|b| b.vacuous),
        }
    }

    fn key(&self) -> (ModelFamily, std::cmp::Reverse<OrdF64>, Option<u64>) {
        (
            self.family,
            std::cmp::Reverse(OrdF64(self.epsilon)),
            self.seed,
        )
    }

    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            format_epsilon(self.epsilon),
            self.family,
            self.seed
                .map(|s| s.to_string())
                .unwrap_or_else(|| "mean".into()),
            self.attack,
            self.accuracy,
            self.precision,
            self.tpr,
            self.fpr,
            self.auc,
            self.advantage,
            opt(self.frechet),
            opt(self.beta_hat),
            opt(self.beta_bound),
            opt(self.adv_bound),
            self.vacuous.map(|v| v.to_string()).unwrap_or_default(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Per-run rows, sorted by family then ε descending.
pub fn report_rows(manifests: &[RunManifest]) -> Result<Vec<ReportRow>> {
    if manifests.is_empty() {
        return Err(Error::InvalidArgument(
            "report needs at least one manifest".into(),
        ));
    }
    let mut rows: Vec<ReportRow> = manifests.iter().map(ReportRow::from_manifest).collect();
    rows.sort_by_key(ReportRow::key);
    Ok(rows)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_opt(rows: &[&ReportRow], f: impl Fn(&ReportRow) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

/// One row per (family, ε) with every numeric column averaged over seeds.
/// `ADV` is recomputed as mean TPR − mean FPR, which equals the mean of the
/// per-seed advantages. A cell is vacuous when any of its runs is.
pub fn summarize(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(ModelFamily, std::cmp::Reverse<OrdF64>), Vec<&ReportRow>> =
        BTreeMap::new();
    for r in rows {
        groups
            .entry((r.family, std::cmp::Reverse(OrdF64(r.epsilon))))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let tpr = mean(g.iter().map(|r| r.tpr));
            let fpr = mean(g.iter().map(|r| r.fpr));
            ReportRow {
                epsilon: g[0].epsilon,
                family: g[0].family,
                seed: None,
                attack: g[0].attack,
                accuracy: mean(g.iter().map(|r| r.accuracy)),
                precision: mean(g.iter().map(|r| r.precision)),
                tpr,
                fpr,
                auc: mean(g.iter().map(|r| r.auc)),
                advantage: tpr - fpr,
                frechet: mean_opt(&g, |r| r.frechet),
                beta_hat: mean_opt(&g, |r| r.beta_hat),
                beta_bound: mean_opt(&g, |r| r.beta_bound),
                adv_bound: mean_opt(&g, |r| r.adv_bound),
                vacuous: g
                    .iter()
                    .map(|r| r.vacuous)
                    .collect::<Option<Vec<_>>>()
                    .map(|v| v.iter().any(|&x| x)),
            }
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

/// Fixed-width text table with the same columns as the CSV.
pub fn report_table(rows: &[ReportRow]) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(v) if v.is_infinite() => "inf".to_string(),
        Some(v) if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) => format!("{v:.2e}"),
        Some(v) => format!("{v:.3}"),
        None => "-".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} {:<9} {:>4} {:<9} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "eps",
        "family",
        "seed",
        "attack",
        "Acc",
        "Prec",
        "TPR",
        "FPR",
        "AUC",
        "ADV",
        "frechet",
        "beta_hat",
        "beta_bnd",
        "2QLb",
        "vacuous"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>5} {:<9} {:>4} {:<9} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>9} {:>9} {:>9} {:>9} {:>8}",
            format_epsilon(r.epsilon),
            r.family.to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            r.attack.to_string(),
            r.accuracy,
            r.precision,
            r.tpr,
            r.fpr,
            r.auc,
            r.advantage,
            fmt(r.frechet),
            fmt(r.beta_hat),
            fmt(r.beta_bound),
            fmt(r.adv_bound),
            r.vacuous.map(|v| if v { "yes" } else { "no" }).unwrap_or("-"),
        );
    }
    out
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub table: PathBuf,
    pub summary_csv: PathBuf,
}

/// Writes `report.csv` (per run), `summary.csv` (seed means) and
/// `report.txt` (both, as aligned tables) into `dir`.
pub fn emit_report(manifests: &[RunManifest], dir: &Path) -> Result<ReportFiles> {
    let rows = report_rows(manifests)?;
    let summary = summarize(&rows);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        csv: dir.join("report.csv"),
        table: dir.join("report.txt"),
        summary_csv: dir.join("summary.csv"),
    };
    let text = format!("{}\n{}", report_table(&rows), report_table(&summary));
    for (path, body) in [
        (&files.csv, report_csv(&rows)),
        (&files.summary_csv, report_csv(&summary)),
        (&files.table, text),
    ] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}
