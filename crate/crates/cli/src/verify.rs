//! Re-checks run directories against their manifests and golden checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::runner::{config_hash, sha256_hex, Manifest, MANIFEST, SERIES_CSV};
use crate::scenario::{Checkpoint, Window};
use crate::table::Table;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub run: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    /// Fixed-width pass/fail table.
    pub fn render(&self) -> String {
        let wr = self.results.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        let wc = self.results.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<wr$}  {:<wc$}  result  detail\n", "run", "check");
        for r in &self.results {
            let verdict = if r.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{:<wr$}  {:<wc$}  {verdict:<6}  {}\n", r.run, r.check, r.detail));
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {} failed\n", self.results.len(), failed));
        out
    }
}

/// Run directories under `path`: `path` itself if it holds a manifest, else its direct children that do.
pub fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.join(MANIFEST).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Verification(format!(
            "no {MANIFEST} in {} or its subdirectories",
            path.display()
        )));
    }
    Ok(dirs)
}

/// Verifies every run under `path`. Only unreadable inputs are errors; failed checks land in the report.
pub fn verify_path(path: &Path) -> Result<Report, CliError> {
    let mut report = Report::default();
    let mut tables = TableCache::default();
    for dir in run_dirs(path)? {
        verify_dir(&dir, &mut tables, &mut report);
    }
    Ok(report)
}

#[derive(Default)]
struct TableCache {
    loaded: BTreeMap<PathBuf, Result<Table, String>>,
}

impl TableCache {
    fn get(&mut self, dir: &Path) -> Result<&Table, String> {
        self.loaded
            .entry(dir.to_path_buf())
            .or_insert_with(|| {
                let path = dir.join(SERIES_CSV);
                let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                Table::from_csv(&text).map_err(|e| format!("{}: {e}", path.display()))
            })
            .as_ref()
            .map_err(|e| e.clone())
    }
}

fn verify_dir(dir: &Path, tables: &mut TableCache, report: &mut Report) {
    let fallback = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut push = |run: &str, check: String, passed: bool, detail: String| {
        report.results.push(CheckResult {
            run: run.to_string(),
            check,
            passed,
            detail,
        })
    };
    let manifest: Manifest = match fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => {
            push(&fallback, "manifest".into(), false, format!("unreadable {MANIFEST}: {e}"));
            return;
        }
    };
    let run = manifest.name.as_str();

    let recomputed = config_hash(&manifest.scenario);
    let ok = recomputed == manifest.config_sha256;
    push(
        run,
        "config hash".into(),
        ok,
        if ok { "matches".into() } else { format!("recorded {}, recomputed {recomputed}", manifest.config_sha256) },
    );

    for (file, expected) in &manifest.files {
        let check = format!("file {file}");
        match fs::read(dir.join(file)) {
            Err(_) => push(run, check, false, format!("missing file {file}")),
            Ok(bytes) => {
                let actual = sha256_hex(&bytes);
                if &actual == expected {
                    push(run, check, true, "hash matches".into());
                } else {
                    push(run, check, false, format!("hash mismatch in {file}"));
                }
            }
        }
    }

    let table = match tables.get(dir) {
        Ok(t) => t.clone(),
        Err(e) => {
            push(run, "series".into(), false, e);
            return;
        }
    };
    let expected = manifest.scenario.output_columns();
    let ok = table.columns == expected;
    push(
        run,
        "columns".into(),
        ok,
        if ok { format!("{} columns", expected.len()) } else { format!("expected {expected:?}, found {:?}", table.columns) },
    );

    let root = dir.parent().unwrap_or(Path::new("."));
    for cp in &manifest.scenario.checkpoints {
        let (passed, detail) = match evaluate(cp, &table, root, tables) {
            Ok(v) => v,
            Err(e) => (false, e),
        };
        push(run, label(cp), passed, detail);
    }
}

/// Short human-readable name of a checkpoint.
pub fn label(cp: &Checkpoint) -> String {
    match cp {
        Checkpoint::Value { column, at, .. } => format!("value {column}@{at}"),
        Checkpoint::Range { column, .. } => format!("range {column}"),
        Checkpoint::Dominates {
            column, reference, run, ..
        } => match run {
            Some(r) => format!("{column} >= {r}.{reference}"),
            None => format!("{column} >= {reference}"),
        },
        Checkpoint::Decreasing { column, .. } => format!("decreasing {column}"),
        Checkpoint::NonMonotonic { column, .. } => format!("non-monotonic {column}"),
        Checkpoint::Agrees { column, at, run, .. } => format!("{column}@{at} ~ {run}"),
        Checkpoint::GainExceeds {
            column, other_run, ..
        } => format!("gain {column} > {other_run}"),
    }
}

fn col(t: &Table, name: &str) -> Result<Vec<f64>, String> {
    t.column(name).ok_or_else(|| format!("column `{name}` not found"))
}

fn at(t: &Table, name: &str, x: f64) -> Result<f64, String> {
    let k = t.row_at(x).ok_or_else(|| format!("no sample at {x}"))?;
    Ok(col(t, name)?[k])
}

fn rows(t: &Table, w: &Window) -> Vec<usize> {
    match w {
        Some([lo, hi]) => t.window(*lo, *hi),
        None => (0..t.index_values.len()).collect(),
    }
}

fn sibling<'a>(root: &Path, run: &str, tables: &'a mut TableCache) -> Result<&'a Table, String> {
    let dir = root.join(run);
    if !dir.join(MANIFEST).is_file() {
        return Err(format!("referenced run `{run}` not found next to this one"));
    }
    tables.get(&dir)
}

fn evaluate(cp: &Checkpoint, t: &Table, root: &Path, tables: &mut TableCache) -> Result<(bool, String), String> {
    Ok(match cp {
        Checkpoint::Value { column, at: x, value, tol } => {
            let v = at(t, column, *x)?;
            let dev = (v - value).abs();
            (dev <= *tol, format!("{v:.6} vs {value} ± {tol}"))
        }
        Checkpoint::Range { column, min, max, window } => {
            let c = col(t, column)?;
            let ks = rows(t, window);
            if ks.is_empty() {
                return Err("empty window".into());
            }
            let lo = ks.iter().map(|&k| c[k]).fold(f64::INFINITY, f64::min);
            let hi = ks.iter().map(|&k| c[k]).fold(f64::NEG_INFINITY, f64::max);
            (lo >= *min && hi <= *max, format!("spans [{lo:.6}, {hi:.6}]"))
        }
        Checkpoint::Dominates {
            column,
            reference,
            run,
            window,
            strict,
        } => {
            let c = col(t, column)?;
            let other = match run {
                Some(r) => sibling(root, r, tables)?.clone(),
                None => t.clone(),
            };
            let r = col(&other, reference)?;
            let ks = rows(t, window);
            if ks.is_empty() {
                return Err("empty window".into());
            }
            let mut margin = f64::INFINITY;
            let mut worst_t = 0.0;
            for k in ks {
                let x = t.index_values[k];
                let j = other.row_at(x).ok_or_else(|| format!("reference has no sample at {x}"))?;
                let m = c[k] - r[j];
                if m < margin {
                    margin = m;
                    worst_t = x;
                }
            }
            let ok = if *strict { margin > 0.0 } else { margin >= 0.0 };
            (ok, format!("min margin {margin:.3e} at {worst_t}"))
        }
        Checkpoint::Decreasing { column, window } => {
            let c = col(t, column)?;
            let ks = rows(t, window);
            let bad = ks.windows(2).find(|p| c[p[1]] >= c[p[0]]);
            match bad {
                None => (true, format!("{} samples", ks.len())),
                Some(p) => (false, format!("rises at {}", t.index_values[p[1]])),
            }
        }
        Checkpoint::NonMonotonic { column, window } => {
            let c = col(t, column)?;
            let ks = rows(t, window);
            let diffs: Vec<f64> = ks.windows(2).map(|p| c[p[1]] - c[p[0]]).collect();
            let up = diffs.iter().cloned().fold(0.0, f64::max);
            let down = diffs.iter().cloned().fold(0.0, f64::min);
            (
                up > 1e-12 && down < -1e-12,
                format!("largest rise {up:.3e}, largest fall {down:.3e}"),
            )
        }
        Checkpoint::Agrees { column, at: x, run, tol } => {
            let mine = at(t, column, *x)?;
            let theirs = at(sibling(root, run, tables)?, column, *x)?;
            let dev = (mine - theirs).abs();
            (dev <= *tol, format!("differ by {dev:.3e} (tol {tol})"))
        }
        Checkpoint::GainExceeds {
            column,
            at: x,
            baseline_run,
            other_run,
            other_column,
            other_baseline_run,
        } => {
            let g1 = at(t, column, *x)? - at(sibling(root, baseline_run, tables)?, column, *x)?;
            let g2 = at(sibling(root, other_run, tables)?, other_column, *x)?
                - at(sibling(root, other_baseline_run, tables)?, other_column, *x)?;
            (g1 > g2, format!("gain {g1:.4} vs {g2:.4}"))
        }
    })
}
