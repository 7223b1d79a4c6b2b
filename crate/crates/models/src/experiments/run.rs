//! Training and evaluation of every ablation column, persisted under a
//! content-addressed run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use glioaug_core::io::{load_dataset, Naming};
use glioaug_core::labels::region_mask;
use glioaug_core::metrics::report::{aggregate_seg, parse_seg_reports_csv, seg_reports_csv};
use glioaug_core::metrics::SegMetricReport;
use glioaug_core::{BinaryMask, PatientCase, Region, Scalar};
use sha2::{Digest, Sha256};

use super::config::{AblationConfig, DataSources};
use super::subsets::make_subsets;
use super::table::{Column, ResultTable};
use crate::error::{Error, Result};
use crate::segnet::{predict_case, train_unet, Enhancement, PredictOptions, SegCheckpoint};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_FILE: &str = "data.txt";
pub const SEEDS_FILE: &str = "seeds.csv";
pub const STATUS_FILE: &str = "status.txt";
pub const SUBSET_FILE: &str = "subset.txt";
pub const CASES_FILE: &str = "cases.csv";
pub const TAU_FILE: &str = "tau.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_TXT: &str = "table.txt";
const COMPLETE: &str = "complete";

/// Cases of one ablation.
#[derive(Debug, Clone)]
pub struct AblationData<T> {
    pub real: Vec<PatientCase<T>>,
    pub synthetic: Vec<PatientCase<T>>,
    /// Labelled cases every column is evaluated on; also used for model selection.
    pub validation: Vec<PatientCase<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub dir: PathBuf,
    pub table: ResultTable,
    /// Synthetic ids of each column.
    pub subsets: Vec<(f64, Vec<String>)>,
}

fn select<T: Scalar>(dir: &Path, ids: &[String], role: &str) -> Result<Vec<PatientCase<T>>> {
    if dir.as_os_str().is_empty() {
        return Ok(Vec::new());
    }
    let all: Vec<PatientCase<T>> = load_dataset(dir, Naming::Auto)?;
    if ids.is_empty() {
        return Ok(all);
    }
    let mut by_id: BTreeMap<String, PatientCase<T>> = all.into_iter().map(|c| (c.id().to_string(), c)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| Error::Invalid(format!("{role} case {id} not found in {}", dir.display())))
        })
        .collect()
}

/// Loads the cases named by `sources`.
pub fn load_data<T: Scalar>(sources: &DataSources) -> Result<AblationData<T>> {
    Ok(AblationData {
        real: select(&sources.real_dir, &sources.real_cases, "real")?,
        synthetic: select(&sources.synthetic_dir, &sources.synthetic_cases, "synthetic")?,
        validation: select(&sources.validation_dir, &sources.validation_cases, "validation")?,
    })
}

/// U-Net seed of one region and repeat; shared by all columns so that they
/// differ only in their training data. Kept below 2^63 so it fits a TOML
/// integer.
pub fn unet_seed(seed: u64, region: Region, repeat: usize) -> u64 {
    let h = Sha256::digest(format!("unet/{seed}/{region}/{repeat}").as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) >> 1
}

fn hash_case<T: Scalar>(h: &mut Sha256, role: &str, c: &PatientCase<T>) {
    h.update(format!("{role}/{}\n", c.id()).as_bytes());
    for v in c.volumes().values().chain(c.labels()) {
        h.update(format!("{}/{:?}/{:?}\n", v.modality(), v.shape(), v.spacing()).as_bytes());
        for x in v.data() {
            h.update(x.as_f64().to_le_bytes());
        }
    }
}

/// Hex digest of the configuration (without paths) and the case contents.
pub fn run_hash<T: Scalar>(config: &AblationConfig, data: &AblationData<T>) -> String {
    let mut stripped = config.clone();
    stripped.output_dir = PathBuf::new();
    stripped.data = DataSources::default();
    let mut h = Sha256::new();
    h.update(stripped.to_toml().as_bytes());
    for (role, cases) in [("real", &data.real), ("synthetic", &data.synthetic), ("validation", &data.validation)] {
        for c in cases {
            hash_case(&mut h, role, c);
        }
    }
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn column_dir(fraction: f64) -> String {
    format!("fraction_{fraction:.4}")
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn reference_masks<T: Scalar>(case: &PatientCase<T>) -> Result<BTreeMap<Region, BinaryMask>> {
    let labels = case
        .labels()
        .ok_or_else(|| Error::Invalid(format!("validation case {} has no labels", case.id())))?;
    Region::ALL
        .iter()
        .map(|&r| Ok((r, region_mask(labels, r)?.mask)))
        .collect()
}

fn run_column<T: Scalar>(
    config: &AblationConfig,
    train: &[PatientCase<T>],
    validation: &[PatientCase<T>],
    dir: &Path,
    label: &str,
    log: &mut dyn FnMut(&str),
) -> Result<()> {
    let opts = PredictOptions {
        pad_crop: true,
        enhancement: config.enhancement_threshold.map_or(Enhancement::Otsu, Enhancement::Fixed),
    };
    for repeat in 0..config.repeats {
        let rep_dir = dir.join(format!("rep{repeat}"));
        let mut models = BTreeMap::new();
        for region in Region::ALL {
            let mut cfg = config.segnet.clone();
            cfg.training.seed = unet_seed(config.seed, region, repeat);
            let ck: SegCheckpoint<T> = train_unet(train, validation, region, &cfg)?;
            log(&format!(
                "{label} {region} repeat {repeat}: best epoch {} val loss {:.4}",
                ck.best_epoch, ck.val_loss_history[ck.best_epoch]
            ));
            fs::create_dir_all(&rep_dir).map_err(|e| Error::io(&rep_dir, e))?;
            ck.save(&rep_dir.join(format!("{region}.unet")))?;
            models.insert(region, ck);
        }
        let mut reports = Vec::with_capacity(validation.len());
        let mut taus = String::from("case_id,tau\n");
        for case in validation {
            let out = predict_case(&models, case, &opts)?;
            let pred: BTreeMap<Region, BinaryMask> = out.masks().into_iter().map(|(r, m)| (r, m.clone())).collect();
            let sp = case.spacing();
            let spacing = [T::lit(sp[0]), T::lit(sp[1]), T::lit(sp[2])];
            reports.push(SegMetricReport::evaluate(case.id(), &reference_masks(case)?, &pred, spacing)?);
            let _ = writeln!(taus, "{},{}", case.id(), out.tau.map_or("NA".to_string(), |t| t.to_string()));
        }
        write(&rep_dir.join(CASES_FILE), &seg_reports_csv(&reports)?)?;
        write(&rep_dir.join(TAU_FILE), &taus)?;
    }
    Ok(())
}

/// Trains the three U-Nets of every column on `real` plus the column's
/// synthetic subset, evaluates them on `validation` and writes everything
/// under `<output_dir>/<run_hash>/`. A failing column is recorded and the
/// others still run.
pub fn run_ablation<T: Scalar>(
    config: &AblationConfig,
    data: &AblationData<T>,
    log: &mut dyn FnMut(&str),
) -> Result<AblationRun> {
    config.validate()?;
    if data.real.is_empty() {
        return Err(Error::Invalid("no real training cases".into()));
    }
    if data.validation.is_empty() {
        return Err(Error::Invalid("no validation cases".into()));
    }
    let columns = config.columns();
    if data.synthetic.is_empty() && columns.iter().any(|&f| f > 0.0) {
        return Err(Error::Invalid("synthetic fractions requested but no synthetic cases".into()));
    }
    let dir = config.output_dir.join(run_hash(config, data));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join(CONFIG_FILE), &config.to_toml())?;

    let mut listing = String::new();
    for (role, cases) in [("real", &data.real), ("synthetic", &data.synthetic), ("validation", &data.validation)] {
        let ids: Vec<&str> = cases.iter().map(|c| c.id()).collect();
        let _ = writeln!(listing, "{role}: {}", ids.join(" "));
    }
    write(&dir.join(DATA_FILE), &listing)?;

    let mut seeds = String::from("region,repeat,seed\n");
    for repeat in 0..config.repeats {
        for region in Region::ALL {
            let _ = writeln!(seeds, "{region},{repeat},{}", unet_seed(config.seed, region, repeat));
        }
    }
    write(&dir.join(SEEDS_FILE), &seeds)?;

    let ids: Vec<String> = data.synthetic.iter().map(|c| c.id().to_string()).collect();
    let subsets = make_subsets(&ids, &columns, config.seed)?;
    for (fraction, subset) in &subsets {
        let cdir = dir.join(column_dir(*fraction));
        let label = super::table::fraction_label(*fraction);
        write(&cdir.join(SUBSET_FILE), &subset.iter().map(|s| format!("{s}\n")).collect::<String>())?;
        let mut train = data.real.clone();
        train.extend(data.synthetic.iter().filter(|c| subset.iter().any(|s| s == c.id())).cloned());
        log(&format!("{label}: {} real + {} synthetic cases", data.real.len(), subset.len()));
        let status = match run_column(config, &train, &data.validation, &cdir, &label, log) {
            Ok(()) => COMPLETE.to_string(),
            Err(e) => {
                log(&format!("{label} failed: {e}"));
                format!("failed: {e}")
            }
        };
        write(&cdir.join(STATUS_FILE), &format!("{status}\n"))?;
    }
    let table = regenerate_table(&dir)?;
    write(&dir.join(TABLE_CSV), &table.to_csv())?;
    write(&dir.join(TABLE_TXT), &table.render())?;
    Ok(AblationRun { dir, table, subsets })
}

/// Rebuilds the table of a run directory from its per-case CSVs; cells are
/// means over validation cases (and repeats) where the metric is defined.
pub fn regenerate_table(dir: &Path) -> Result<ResultTable> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config = AblationConfig::from_toml(&text)?;
    let mut columns = Vec::new();
    let mut summaries = Vec::new();
    for fraction in config.columns() {
        let cdir = dir.join(column_dir(fraction));
        let status = fs::read_to_string(cdir.join(STATUS_FILE)).unwrap_or_else(|_| "missing".into());
        let status = status.trim();
        if status != COMPLETE {
            columns.push(Column::failed(fraction, status));
            summaries.push(None);
            continue;
        }
        let mut reports: Vec<SegMetricReport<f64>> = Vec::new();
        for repeat in 0..config.repeats {
            let p = cdir.join(format!("rep{repeat}")).join(CASES_FILE);
            let csv = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            reports.extend(parse_seg_reports_csv::<f64>(&csv)?);
        }
        summaries.push(Some(aggregate_seg(&reports)?));
        columns.push(Column::new(fraction));
    }
    Ok(ResultTable::build(columns, |c, m, r| {
        summaries[c]
            .as_ref()
            .and_then(|s| s[&(m, r)])
            .map(|ms| ms.mean)
    }))
}
