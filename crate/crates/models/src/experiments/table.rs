//! Metric x region table with one column per synthetic fraction.

use std::fmt::Write as _;

use glioaug_core::metrics::report::SegMetric;
use glioaug_core::Region;

use crate::error::{Error, Result};

/// Column header of a fraction: `Brats`, `Brats + 1/4 GAN`, ..., `Brats + All GAN`.
pub fn fraction_label(fraction: f64) -> String {
    if fraction == 0.0 {
        return "Brats".into();
    }
    if fraction == 1.0 {
        return "Brats + All GAN".into();
    }
    for q in 2..=16u32 {
        let p = fraction * q as f64;
        if (p - p.round()).abs() < 1e-9 {
            let p = p.round() as u32;
            let g = gcd(p, q);
            return format!("Brats + {}/{} GAN", p / g, q / g);
        }
    }
    format!("Brats + {fraction} GAN")
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub fraction: f64,
    pub label: String,
    pub complete: bool,
    /// Why the column is incomplete.
    pub note: Option<String>,
}

impl Column {
    pub fn new(fraction: f64) -> Self {
        Column {
            fraction,
            label: fraction_label(fraction),
            complete: true,
            note: None,
        }
    }

    pub fn failed(fraction: f64, note: impl Into<String>) -> Self {
        Column {
            complete: false,
            note: Some(note.into()),
            ..Column::new(fraction)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub metric: SegMetric,
    pub region: Region,
    /// One value per column; `None` where undefined or the run failed.
    pub values: Vec<Option<f64>>,
}

/// Rows in DSC, Sens., Spec., HD order, each over ET, WT, TC.
pub fn row_keys() -> Vec<(SegMetric, Region)> {
    SegMetric::ALL
        .iter()
        .flat_map(|&m| Region::ALL.iter().map(move |&r| (m, r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCount {
    pub label: String,
    pub count: usize,
    /// Some credited row was shared with another column.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tie {
    pub metric: SegMetric,
    pub region: Region,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCount {
    pub columns: Vec<ColumnCount>,
    pub ties: Vec<Tie>,
}

impl BestCount {
    pub fn count(&self, label: &str) -> Option<usize> {
        self.columns.iter().find(|c| c.label == label).map(|c| c.count)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let _ = writeln!(out, "{}\t{}{}", c.label, c.count, if c.tied { " (tie)" } else { "" });
        }
        for t in &self.ties {
            let _ = writeln!(out, "tie {} {}: {}", t.metric.label(), t.region, t.columns.join(", "));
        }
        out
    }
}

impl ResultTable {
    /// Table over `columns` with values from `value(column index, metric, region)`.
    pub fn build(columns: Vec<Column>, mut value: impl FnMut(usize, SegMetric, Region) -> Option<f64>) -> Self {
        let rows = row_keys()
            .into_iter()
            .map(|(metric, region)| Row {
                metric,
                region,
                values: (0..columns.len()).map(|c| value(c, metric, region)).collect(),
            })
            .collect();
        ResultTable { columns, rows }
    }

    pub fn row(&self, metric: SegMetric, region: Region) -> Option<&Row> {
        self.rows.iter().find(|r| r.metric == metric && r.region == region)
    }

    /// Every column complete and every cell defined.
    pub fn is_complete(&self) -> bool {
        self.rows.len() == row_keys().len()
            && self.columns.iter().all(|c| c.complete)
            && self
                .rows
                .iter()
                .all(|r| r.values.len() == self.columns.len() && r.values.iter().all(Option::is_some))
    }

    /// Indices of the best defined values of a row (lowest HD, highest otherwise).
    pub fn best_columns(&self, row: &Row) -> Vec<usize> {
        let defined = row.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)));
        let best = if row.metric.minimized() {
            defined.clone().map(|(_, v)| v).reduce(f64::min)
        } else {
            defined.clone().map(|(_, v)| v).reduce(f64::max)
        };
        match best {
            Some(b) => defined.filter(|&(_, v)| v == b).map(|(i, _)| i).collect(),
            None => Vec::new(),
        }
    }

    /// Best-per-row tally; ties credit every tied column.
    pub fn count_best(&self) -> Result<BestCount> {
        if !self.is_complete() {
            let missing: Vec<&str> = self
                .columns
                .iter()
                .enumerate()
                .filter(|(i, c)| !c.complete || self.rows.iter().any(|r| r.values.get(*i).copied().flatten().is_none()))
                .map(|(_, c)| c.label.as_str())
                .collect();
            return Err(Error::Invalid(format!("table is incomplete: {}", missing.join(", "))));
        }
        let mut columns: Vec<ColumnCount> = self
            .columns
            .iter()
            .map(|c| ColumnCount {
                label: c.label.clone(),
                count: 0,
                tied: false,
            })
            .collect();
        let mut ties = Vec::new();
        for row in &self.rows {
            let best = self.best_columns(row);
            for &i in &best {
                columns[i].count += 1;
                columns[i].tied |= best.len() > 1;
            }
            if best.len() > 1 {
                ties.push(Tie {
                    metric: row.metric,
                    region: row.region,
                    columns: best.iter().map(|&i| self.columns[i].label.clone()).collect(),
                });
            }
        }
        Ok(BestCount { columns, ties })
    }

    /// `metric,region,<column labels>...,best`; undefined cells are `NA`,
    /// the `best` field joins the best column labels with `|`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,region");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.label);
        }
        out.push_str(",best\n");
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.metric.label(), row.region);
            for v in &row.values {
                match v {
                    Some(v) => write!(out, ",{v}"),
                    None => write!(out, ",NA"),
                }
                .expect("string write");
            }
            let best: Vec<&str> = self
                .best_columns(row)
                .into_iter()
                .map(|i| self.columns[i].label.as_str())
                .collect();
            let _ = writeln!(out, ",{}", best.join("|"));
        }
        out
    }

    /// Inverse of [`ResultTable::to_csv`] for the values; fractions come
    /// from the column labels (`Brats` is 0, `All` is 1).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Invalid("empty table".into()))?.split(',').collect();
        if header.len() < 3 || header[0] != "metric" || header[1] != "region" {
            return Err(Error::Invalid("table header must start with metric,region".into()));
        }
        let labels: Vec<&str> = header[2..].iter().copied().filter(|l| *l != "best").collect();
        let columns = labels
            .iter()
            .map(|l| {
                let mut c = Column::new(label_fraction(l)?);
                c.label = l.to_string();
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 2 + labels.len() {
                return Err(Error::Invalid(format!("short table row {line:?}")));
            }
            let metric = SegMetric::ALL
                .into_iter()
                .find(|m| m.label() == f[0])
                .ok_or_else(|| Error::Invalid(format!("unknown metric {:?}", f[0])))?;
            let region: Region = f[1].parse()?;
            let values = f[2..2 + labels.len()]
                .iter()
                .map(|s| match *s {
                    "NA" => Ok(None),
                    s => s
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Invalid(format!("bad table value {s:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row { metric, region, values });
        }
        let mut table = ResultTable { columns, rows };
        let keys = row_keys();
        table
            .rows
            .sort_by_key(|r| keys.iter().position(|k| *k == (r.metric, r.region)));
        Ok(table)
    }

    /// Aligned text: HD to one decimal, the rest to three; best values
    /// marked `*`, incomplete columns marked `(incomplete)`.
    pub fn render(&self) -> String {
        let headers: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                if c.complete {
                    c.label.clone()
                } else {
                    format!("{} (incomplete)", c.label)
                }
            })
            .collect();
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let best = self.best_columns(row);
                row.values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| match v {
                        None => "NA".to_string(),
                        Some(v) => {
                            let mark = if best.contains(&i) { "*" } else { "" };
                            if row.metric.minimized() {
                                format!("{v:.1}{mark}")
                            } else {
                                format!("{v:.3}{mark}")
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| cells.iter().map(|r| r[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
            .collect();
        let lead = self.rows.iter().map(|r| r.metric.label().len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<lead$}  {:<6}", "Data", "");
        for (h, w) in headers.iter().zip(&widths) {
            let _ = write!(out, "  {h:<w$}");
        }
        out = out.trim_end().to_string();
        out.push('\n');
        for (k, (row, cells)) in self.rows.iter().zip(&cells).enumerate() {
            let metric = if k == 0 || self.rows[k - 1].metric != row.metric {
                row.metric.label()
            } else {
                ""
            };
            let mut line = format!("{metric:<lead$}  {:<6}", row.region.to_string());
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(line, "  {c:<w$}");
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        for c in self.columns.iter().filter(|c| !c.complete) {
            let _ = writeln!(out, "{}: {}", c.label, c.note.as_deref().unwrap_or("incomplete"));
        }
        out
    }
}

fn label_fraction(label: &str) -> Result<f64> {
    let bad = || Error::Invalid(format!("cannot read a fraction from column {label:?}"));
    let label = label.trim();
    if label == "Brats" {
        return Ok(0.0);
    }
    let inner = label
        .strip_prefix("Brats")
        .and_then(|s| s.trim_start().strip_prefix('+'))
        .and_then(|s| s.trim().strip_suffix("GAN"))
        .map(str::trim)
        .ok_or_else(bad)?;
    if inner == "All" {
        return Ok(1.0);
    }
    match inner.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| bad())?;
            let q: f64 = q.trim().parse().map_err(|_| bad())?;
            Ok(p / q)
        }
        None => inner.parse().map_err(|_| bad()),
    }
}
