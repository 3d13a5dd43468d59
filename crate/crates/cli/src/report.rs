//! `report`: collects `metrics.json` files into a comparison table and a
//! long-format plot table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::train::RunRecord;
use crate::{fmt_float, mean_sd, CliError};

/// A table column: one dataset profile at one imbalance ratio.
#[derive(Debug, Clone, PartialEq, PartialOrd)]
pub struct Column {
    pub profile: String,
    pub imb_ratio: f64,
}

impl Column {
    fn key(&self) -> String {
        format!("{}@{}", self.profile, self.imb_ratio)
    }
}

/// Test balanced error of the validation-selected grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub params: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    /// Family name and one optional cell per column.
    pub rows: Vec<(String, Vec<Option<Cell>>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    pub runs: Vec<RunRecord>,
    /// Run directories without usable metrics, and failed runs.
    pub missing: Vec<String>,
}

fn collect(
    dir: &Path,
    runs: &mut Vec<(PathBuf, RunRecord)>,
    missing: &mut Vec<String>,
) -> Result<(), CliError> {
    let metrics = dir.join("metrics.json");
    if metrics.is_file() {
        let text = fs::read_to_string(&metrics)?;
        match serde_json::from_str::<RunRecord>(&text) {
            Ok(r) => runs.push((dir.to_path_buf(), r)),
            Err(e) => missing.push(format!("{}: unreadable metrics ({e})", dir.display())),
        }
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    let mut any_dir = false;
    for e in entries.iter().filter(|e| e.is_dir()) {
        any_dir = true;
        collect(e, runs, missing)?;
    }
    // a seed directory holds files but no metrics
    if !any_dir && dir.join("history.csv").is_file() {
        missing.push(format!("{}: no metrics.json", dir.display()));
    }
    Ok(())
}

/// Reads every run under `dirs`, in sorted path order.
pub fn load_runs(dirs: &[PathBuf]) -> Result<(Vec<RunRecord>, Vec<String>), CliError> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for d in dirs {
        if !d.is_dir() {
            missing.push(format!("{}: not a directory", d.display()));
            continue;
        }
        collect(d, &mut found, &mut missing)?;
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    found.dedup_by(|a, b| a.0 == b.0);
    for (path, r) in &found {
        if !r.is_ok() {
            let why = r.error.as_deref().unwrap_or("failed");
            missing.push(format!("{}: {why}", path.display()));
        }
    }
    Ok((found.into_iter().map(|(_, r)| r).collect(), missing))
}

/// Groups runs into family × (profile, ratio) cells. Within a cell the grid
/// point with the lowest mean validation balanced error wins; points with
/// a failed seed are skipped.
pub fn build_table(runs: &[RunRecord]) -> Table {
    let mut columns: Vec<Column> = Vec::new();
    let mut families = BTreeSet::new();
    // (family, column key) -> params -> records
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<&RunRecord>>> = BTreeMap::new();
    for r in runs {
        let col = Column {
            profile: r.profile.clone(),
            imb_ratio: r.imb_ratio,
        };
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        families.insert(r.family.clone());
        groups
            .entry((r.family.clone(), col.key()))
            .or_default()
            .entry(r.params.clone())
            .or_default()
            .push(r);
    }
    columns.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let rows = families
        .into_iter()
        .map(|family| {
            let cells = columns
                .iter()
                .map(|col| {
                    let points = groups.get(&(family.clone(), col.key()))?;
                    let mut best: Option<(f64, Cell)> = None;
                    for (params, recs) in points {
                        if recs.iter().any(|r| !r.is_ok()) {
                            continue;
                        }
                        let vals: Vec<f64> =
                            recs.iter().filter_map(|r| r.val_balanced_error).collect();
                        let tests: Vec<f64> =
                            recs.iter().filter_map(|r| r.test_balanced_error).collect();
                        if vals.len() != recs.len() || tests.len() != recs.len() {
                            continue;
                        }
                        let v = mean_sd(&vals).0;
                        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                            let (mean, sd) = mean_sd(&tests);
                            best = Some((
                                v,
                                Cell {
                                    params: params.clone(),
                                    mean,
                                    sd,
                                    n: tests.len(),
                                },
                            ));
                        }
                    }
                    best.map(|(_, c)| c)
                })
                .collect();
            (family, cells)
        })
        .collect();
    Table { columns, rows }
}

pub const TABLE_HEADER: &str =
    "family,profile,imb_ratio,params,n_seeds,test_balanced_error_mean,test_balanced_error_sd";
pub const PLOT_HEADER: &str = "family,params,profile,imb_ratio,seed,class,test_error";

/// One line per family and column; a cell without runs leaves the last four
/// fields blank.
pub fn table_csv(table: &Table) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for (family, cells) in &table.rows {
        for (col, cell) in table.columns.iter().zip(cells) {
            let _ = write!(s, "{family},{},{},", col.profile, fmt_float(col.imb_ratio));
            match cell {
                Some(c) => {
                    let _ = writeln!(
                        s,
                        "{},{},{},{}",
                        c.params,
                        c.n,
                        fmt_float(c.mean),
                        fmt_float(c.sd)
                    );
                }
                None => s.push_str(",,,\n"),
            }
        }
    }
    s
}

fn field<T: std::str::FromStr>(v: &str, line: usize) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("table line {line}: bad field `{v}`")))
}

/// Parses [`table_csv`] output back into a table.
pub fn parse_table_csv(text: &str) -> Result<Table, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(TABLE_HEADER) {
        return Err(CliError::Config("table: unexpected header".into()));
    }
    let mut columns: Vec<Column> = Vec::new();
    let mut rows: Vec<(String, Vec<Option<Cell>>)> = Vec::new();
    let mut parsed = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(CliError::Config(format!(
                "table line {}: expected 7 fields",
                i + 2
            )));
        }
        let col = Column {
            profile: f[1].to_string(),
            imb_ratio: field(f[2], i + 2)?,
        };
        let cell = if f[3].is_empty() && f[4].is_empty() {
            None
        } else {
            Some(Cell {
                params: f[3].to_string(),
                n: field(f[4], i + 2)?,
                mean: field(f[5], i + 2)?,
                sd: field(f[6], i + 2)?,
            })
        };
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        parsed.push((f[0].to_string(), col, cell));
    }
    for (family, col, cell) in parsed {
        let k = columns
            .iter()
            .position(|c| *c == col)
            .expect("column recorded");
        if rows.last().is_none_or(|(f, _)| *f != family) {
            rows.push((family, vec![None; columns.len()]));
        }
        let cells = &mut rows.last_mut().expect("row pushed").1;
        cells.resize(columns.len(), None);
        cells[k] = cell;
    }
    for (_, cells) in &mut rows {
        cells.resize(columns.len(), None);
    }
    Ok(Table { columns, rows })
}

/// Long format: the balanced error (`class` = `all`) and every per-class
/// error of each successful run.
pub fn plot_csv(runs: &[RunRecord]) -> String {
    let mut s = format!("{PLOT_HEADER}\n");
    for r in runs.iter().filter(|r| r.is_ok()) {
        let prefix = format!(
            "{},{},{},{},{}",
            r.family,
            r.params,
            r.profile,
            fmt_float(r.imb_ratio),
            r.seed
        );
        if let Some(b) = r.test_balanced_error {
            let _ = writeln!(s, "{prefix},all,{}", fmt_float(b));
        }
        for (k, e) in r.test_per_class_error.iter().flatten().enumerate() {
            let _ = writeln!(s, "{prefix},{},{}", k + 1, fmt_float(*e));
        }
    }
    s
}

pub fn report_dir(out: &Path) -> PathBuf {
    out.join("report")
}

/// Writes `report/{table.csv, plot.csv, missing.txt}` under `out`.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<Report, CliError> {
    let (runs, missing) = load_runs(dirs)?;
    let table = build_table(&runs);
    let dir = report_dir(out);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("table.csv"), table_csv(&table))?;
    fs::write(dir.join("plot.csv"), plot_csv(&runs))?;
    let mut m = String::new();
    for line in &missing {
        m.push_str(line);
        m.push('\n');
    }
    fs::write(dir.join("missing.txt"), m)?;
    Ok(Report {
        table,
        runs,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::RunStatus;

    fn run(family: &str, params: &str, seed: u64, val: f64, test: f64) -> RunRecord {
        RunRecord {
            hash: format!("{family}{params}"),
            family: family.into(),
            params: params.into(),
            profile: "longtail".into(),
            imb_ratio: 100.0,
            seed,
            status: RunStatus::Ok,
            error: None,
            val_balanced_error: Some(val),
            test_balanced_error: Some(test),
            test_per_class_error: Some(vec![test, test]),
            test_accuracy: None,
            train_final_loss: Some(0.1),
        }
    }

    #[test]
    fn two_families_give_two_rows() {
        let t = build_table(&[
            run("ce", "", 0, 0.3, 0.31),
            run("gla", "q=0.5", 0, 0.2, 0.22),
        ]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].1[0].as_ref().unwrap().sd, 0.0);
    }

    #[test]
    fn validation_picks_the_point() {
        let runs = [
            run("gla", "q=0", 0, 0.3, 0.1),
            run("gla", "q=0", 1, 0.3, 0.1),
            run("gla", "q=0.5", 0, 0.2, 0.4),
            run("gla", "q=0.5", 1, 0.2, 0.2),
        ];
        let cell = build_table(&runs).rows[0].1[0].clone().unwrap();
        assert_eq!(cell.params, "q=0.5");
        assert!((cell.mean - 0.3).abs() < 1e-15);
        assert!((cell.sd - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn table_round_trips_with_blanks() {
        let mut other = run("ce", "", 0, 0.3, 0.31);
        other.profile = "step".into();
        let t = build_table(&[other, run("gla", "q=0.1", 0, 0.2, 0.1 + 0.2)]);
        assert!(t.rows[0].1[0].is_none());
        assert_eq!(parse_table_csv(&table_csv(&t)).unwrap(), t);
    }
}
