//! Aggregation of per-case reports into mean ± sd tables and CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labels::Region;
use crate::scalar::Scalar;
use crate::volume::Modality;

use super::image::ImageQuality;
use super::seg::SegMetricReport;

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd<T> {
    pub mean: T,
    pub sd: T,
    pub n: usize,
}

pub fn mean_sd<T: Scalar>(values: &[T]) -> Result<MeanSd<T>> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty list".into()));
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let sd = if values.len() > 1 {
        let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
        (ss / (n - T::one())).sqrt()
    } else {
        T::zero()
    };
    Ok(MeanSd {
        mean,
        sd,
        n: values.len(),
    })
}

impl<T: Scalar> fmt::Display for MeanSd<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(3);
        write!(f, "{:.p$}±{:.p$}", self.mean, self.sd, p = p)
    }
}

/// Image agreement of one case, keyed by modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageQualityReport<T> {
    pub case_id: String,
    pub modalities: BTreeMap<Modality, ImageQuality<T>>,
}

pub const IMAGE_COLUMNS: [&str; 4] = ["MSE", "MAE", "PSNR", "SSIM"];

/// One row per modality; columns in [`IMAGE_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageQualityTable<T> {
    pub rows: Vec<(Modality, [MeanSd<T>; 4])>,
}

pub fn aggregate_image<T: Scalar>(reports: &[ImageQualityReport<T>]) -> Result<ImageQualityTable<T>> {
    if reports.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty list".into()));
    }
    let mut rows = Vec::new();
    for m in Modality::IMAGES {
        let q: Vec<&ImageQuality<T>> = reports.iter().filter_map(|r| r.modalities.get(&m)).collect();
        if q.is_empty() {
            continue;
        }
        let col = |f: fn(&ImageQuality<T>) -> T| mean_sd(&q.iter().map(|x| f(x)).collect::<Vec<_>>());
        rows.push((m, [col(|x| x.mse)?, col(|x| x.mae)?, col(|x| x.psnr_db)?, col(|x| x.ssim)?]));
    }
    Ok(ImageQualityTable { rows })
}

impl<T: Scalar> ImageQualityTable<T> {
    pub fn render(&self) -> String {
        let mut out = format!("\t{}\n", IMAGE_COLUMNS.join("\t"));
        for (m, cells) in &self.rows {
            let cells: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{m}\t{}", cells.join("\t"));
        }
        out
    }
}

/// Segmentation metrics in table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SegMetric {
    Dsc,
    Sensitivity,
    Specificity,
    Hd95,
}

impl SegMetric {
    pub const ALL: [SegMetric; 4] = [SegMetric::Dsc, SegMetric::Sensitivity, SegMetric::Specificity, SegMetric::Hd95];

    pub fn label(self) -> &'static str {
        match self {
            SegMetric::Dsc => "DSC",
            SegMetric::Sensitivity => "Sens.",
            SegMetric::Specificity => "Spec.",
            SegMetric::Hd95 => "HD (mm)",
        }
    }

    /// Whether smaller values are better.
    pub fn minimized(self) -> bool {
        self == SegMetric::Hd95
    }

    pub fn of<T: Copy>(self, m: &super::seg::RegionMetrics<T>) -> Option<T> {
        match self {
            SegMetric::Dsc => Some(m.dsc),
            SegMetric::Sensitivity => m.sensitivity,
            SegMetric::Specificity => m.specificity,
            SegMetric::Hd95 => m.hd95_mm,
        }
    }
}

/// Mean ± sd of each metric/region over the cases where it is defined.
/// `None` cells had no defined value.
pub type SegSummary<T> = BTreeMap<(SegMetric, Region), Option<MeanSd<T>>>;

pub fn aggregate_seg<T: Scalar>(reports: &[SegMetricReport<T>]) -> Result<SegSummary<T>> {
    if reports.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty list".into()));
    }
    let mut out = BTreeMap::new();
    for metric in SegMetric::ALL {
        for region in Region::ALL {
            let v: Vec<T> = reports
                .iter()
                .filter_map(|r| r.regions.get(&region).and_then(|m| metric.of(m)))
                .collect();
            out.insert((metric, region), if v.is_empty() { None } else { Some(mean_sd(&v)?) });
        }
    }
    Ok(out)
}

pub const SEG_CSV_HEADER: &str = "case_id,region,dsc,sensitivity,specificity,hd95_mm";

fn cell<T: Scalar>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Per-case rows, then `mean` and `sd` footer rows per region. Undefined values are `NA`.
pub fn seg_reports_csv<T: Scalar>(reports: &[SegMetricReport<T>]) -> Result<String> {
    let summary = aggregate_seg(reports)?;
    let mut out = format!("{SEG_CSV_HEADER}\n");
    for r in reports {
        for region in Region::ALL {
            if let Some(m) = r.regions.get(&region) {
                let _ = writeln!(
                    out,
                    "{},{region},{},{},{},{}",
                    r.case_id,
                    m.dsc,
                    cell(m.sensitivity),
                    cell(m.specificity),
                    cell(m.hd95_mm)
                );
            }
        }
    }
    for (tag, pick) in [("mean", 0), ("sd", 1)] {
        for region in Region::ALL {
            let vals: Vec<String> = SegMetric::ALL
                .iter()
                .map(|&m| cell(summary[&(m, region)].map(|s| if pick == 0 { s.mean } else { s.sd })))
                .collect();
            let _ = writeln!(out, "{tag},{region},{}", vals.join(","));
        }
    }
    Ok(out)
}

/// Parses the per-case rows written by [`seg_reports_csv`], skipping footers.
pub fn parse_seg_reports_csv<T: Scalar>(text: &str) -> Result<Vec<SegMetricReport<T>>> {
    let mut out: Vec<SegMetricReport<T>> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Invalid(format!("line {}: expected 6 fields", n + 1)));
        }
        if f[0] == "mean" || f[0] == "sd" {
            continue;
        }
        let num = |s: &str| -> Result<Option<T>> {
            if s == "NA" {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(|v| Some(T::lit(v)))
                .map_err(|_| Error::Invalid(format!("line {}: bad number {s:?}", n + 1)))
        };
        let region: Region = f[1].parse()?;
        let metrics = super::seg::RegionMetrics {
            dsc: num(f[2])?.ok_or_else(|| Error::Invalid(format!("line {}: dsc missing", n + 1)))?,
            sensitivity: num(f[3])?,
            specificity: num(f[4])?,
            hd95_mm: num(f[5])?,
        };
        match out.last_mut() {
            Some(r) if r.case_id == f[0] => {
                r.regions.insert(region, metrics);
            }
            _ => out.push(SegMetricReport {
                case_id: f[0].to_string(),
                regions: BTreeMap::from([(region, metrics)]),
            }),
        }
    }
    Ok(out)
}
