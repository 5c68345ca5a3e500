use std::fs;
use std::path::Path;

use super::commands::{find_summaries, no_runs, RunSummary};
use super::config::Method;
use crate::error::Result;

/// A rendered table: header plus rows of already-formatted cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_markdown(&self) -> String {
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        let mut s = line(&self.header);
        s.push_str(&line(&vec!["---".to_string(); self.header.len()]));
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn methods_present(runs: &[RunSummary]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| runs.iter().any(|r| r.methods.iter().any(|s| s.method == *m)))
        .collect()
}

/// Mean and std of the normalized score per method, one row per run.
pub fn score_table(runs: &[RunSummary]) -> Table {
    let methods = methods_present(runs);
    let mut header = vec!["experiment".to_string(), "environment".into(), "n_o".into(), "behavior".into()];
    header.extend(methods.iter().map(|m| m.to_string()));
    let rows = runs
        .iter()
        .map(|r| {
            let mut row = vec![r.name.clone(), r.environment.clone(), r.n_o.to_string(), format!("{:.3}", r.normalization.behavior_score)];
            row.extend(methods.iter().map(|m| {
                r.methods
                    .iter()
                    .find(|s| s.method == *m)
                    .map(|s| format!("{:.3} ± {:.3}", s.mean_score, s.std_score))
                    .unwrap_or_else(|| "-".into())
            }));
            row
        })
        .collect();
    Table { header, rows }
}

/// Median score per method against behavior quality, best behavior first.
pub fn tier_table(runs: &[RunSummary]) -> Table {
    let methods = methods_present(runs);
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by(|a, b| b.normalization.behavior_score.total_cmp(&a.normalization.behavior_score));
    let mut header = vec!["experiment".to_string(), "behavior".into()];
    header.extend(methods.iter().map(|m| format!("{m} (median)")));
    let rows = sorted
        .iter()
        .map(|r| {
            let mut row = vec![r.name.clone(), format!("{:.3}", r.normalization.behavior_score)];
            row.extend(methods.iter().map(|m| {
                r.methods
                    .iter()
                    .find(|s| s.method == *m)
                    .map(|s| format!("{:.3}", s.median_score))
                    .unwrap_or_else(|| "-".into())
            }));
            row
        })
        .collect();
    Table { header, rows }
}

/// Aggregates every summary under `dir` into `report.md`, `scores.csv` and
/// `tiers.csv` in `out`.
pub fn cmd_report(dir: &Path, out: &Path) -> Result<(Table, Table)> {
    if !dir.is_dir() {
        return Err(no_runs(dir));
    }
    let runs: Vec<RunSummary> = find_summaries(dir)?.into_iter().map(|(_, s)| s).collect();
    if runs.is_empty() {
        return Err(no_runs(dir));
    }
    let scores = score_table(&runs);
    let tiers = tier_table(&runs);
    fs::create_dir_all(out)?;
    let md = format!(
        "# Normalized scores\n\nMean ± std over seeds.\n\n{}\n# Score against behavior quality\n\nMedian over seeds.\n\n{}",
        scores.to_markdown(),
        tiers.to_markdown()
    );
    fs::write(out.join("report.md"), md)?;
    fs::write(out.join("scores.csv"), scores.to_csv()?)?;
    fs::write(out.join("tiers.csv"), tiers.to_csv()?)?;
    Ok((scores, tiers))
}
