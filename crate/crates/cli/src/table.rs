//! Column-oriented results and their file formats.

use rotqec::lindblad::TimeSeries;
use serde::{Deserialize, Serialize};

/// A sampled table whose first column is the independent variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// Name of the independent variable, usually `time`.
    pub index: String,
    pub columns: Vec<String>,
    pub index_values: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn from_series(series: &TimeSeries) -> Self {
        Table {
            index: "time".into(),
            columns: series.columns.clone(),
            index_values: series.times.clone(),
            rows: series.rows.clone(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Keeps only `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Table {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.columns.iter().position(|c| c == n).expect("column validated"))
            .collect();
        Table {
            index: self.index.clone(),
            columns: names.to_vec(),
            index_values: self.index_values.clone(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&k| r[k]).collect()).collect(),
        }
    }

    /// Replaces the index with exact grid values; the sample count must match.
    pub fn with_index(mut self, values: Vec<f64>) -> Table {
        assert_eq!(values.len(), self.index_values.len(), "grid length mismatch");
        self.index_values = values;
        self
    }

    fn write(&self, sep: char, header_prefix: &str) -> String {
        let mut out = format!("{header_prefix}{}", self.index);
        for c in &self.columns {
            out.push(sep);
            out.push_str(c);
        }
        out.push('\n');
        for (t, row) in self.index_values.iter().zip(&self.rows) {
            out.push_str(&t.to_string());
            for v in row {
                out.push(sep);
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        self.write(',', "")
    }

    /// Whitespace-separated with a `#` header line, readable by gnuplot.
    pub fn to_dat(&self) -> String {
        self.write(' ', "# ")
    }

    pub fn from_csv(text: &str) -> Result<Table, String> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or("empty file")?;
        let mut names = header.split(',').map(|s| s.trim().to_string());
        let index = names.next().filter(|s| !s.is_empty()).ok_or("missing index column")?;
        let columns: Vec<String> = names.collect();
        let mut table = Table {
            index,
            columns,
            index_values: Vec::new(),
            rows: Vec::new(),
        };
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            if vals.len() != table.columns.len() + 1 {
                return Err(format!(
                    "line {}: expected {} fields, found {}",
                    n + 1,
                    table.columns.len() + 1,
                    vals.len()
                ));
            }
            table.index_values.push(vals[0]);
            table.rows.push(vals[1..].to_vec());
        }
        Ok(table)
    }

    /// Indices whose index value lies in `[lo, hi]`, with a small slack for rounding.
    pub fn window(&self, lo: f64, hi: f64) -> Vec<usize> {
        let eps = 1e-9 * hi.abs().max(1.0);
        (0..self.index_values.len())
            .filter(|&k| self.index_values[k] >= lo - eps && self.index_values[k] <= hi + eps)
            .collect()
    }

    /// Row closest to `at`, if one lies within `1e-9` relative.
    pub fn row_at(&self, at: f64) -> Option<usize> {
        let eps = 1e-9 * at.abs().max(1.0);
        self.index_values.iter().position(|&t| (t - at).abs() <= eps)
    }
}

/// JSON mirror of a table, with column-keyed arrays.
#[derive(Debug, Serialize)]
pub struct TableJson<'a> {
    pub scenario: &'a str,
    pub index: &'a str,
    pub columns: &'a [String],
    pub values: serde_json::Map<String, serde_json::Value>,
}

impl<'a> TableJson<'a> {
    pub fn new(scenario: &'a str, table: &'a Table) -> Self {
        let mut values = serde_json::Map::new();
        values.insert(table.index.clone(), serde_json::json!(table.index_values));
        for (k, c) in table.columns.iter().enumerate() {
            let col: Vec<f64> = table.rows.iter().map(|r| r[k]).collect();
            values.insert(c.clone(), serde_json::json!(col));
        }
        TableJson {
            scenario,
            index: &table.index,
            columns: &table.columns,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table {
            index: "time".into(),
            columns: vec!["a".into(), "b".into()],
            index_values: vec![0.0, 0.1, 0.2],
            rows: vec![vec![1.0, 2.0], vec![0.5, 1e-17], vec![0.25, -3.0]],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let back = Table::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = Table::from_csv("time,a\n0,1\n0.1\n").unwrap_err();
        assert!(err.contains("line 3"), "{err}");
        assert!(Table::from_csv("").is_err());
    }

    #[test]
    fn select_and_window() {
        let t = sample().select(&["b".to_string()]);
        assert_eq!(t.column("b").unwrap(), vec![2.0, 1e-17, -3.0]);
        assert_eq!(t.window(0.05, 0.2), vec![1, 2]);
        assert_eq!(t.row_at(0.1), Some(1));
        assert_eq!(t.row_at(0.15), None);
    }

    #[test]
    fn dat_has_a_comment_header() {
        assert!(sample().to_dat().starts_with("# time a b\n0 1 2\n"));
    }
}
