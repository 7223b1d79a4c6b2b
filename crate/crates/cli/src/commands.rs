use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context, Result};
use glioaug_core::brainmap::{build_case_maps, save_brainmap};
use glioaug_core::io::native::header_path;
use glioaug_core::io::{load_case, load_dataset, read_volume, save_case, save_dataset, write_volume, Naming};
use glioaug_core::labels::region_mask;
use glioaug_core::metrics::report::seg_reports_csv;
use glioaug_core::metrics::SegMetricReport;
use glioaug_core::phantom::generate_cohort;
use glioaug_core::{BinaryMask, Modality, Region, Shape3};
use glioaug_models::augnet::synth::{load_request_maps, read_transforms};
use glioaug_models::augnet::{synthesize_case, train_pairs, training_pairs, AugCheckpoint, AugConfig, SynthesisRequest};
use glioaug_models::experiments::{load_data, run_ablation, AblationConfig, ResultTable};
use glioaug_models::segnet::{
    predict_case, train_on_samples, training_samples, validation_samples, Enhancement, PredictOptions, SegCheckpoint,
    SegConfig,
};
use glioaug_review::AppState;

/// File extension of GAN checkpoints in a checkpoint directory (`T2.gan`).
pub const GAN_EXT: &str = "gan";
/// File extension of U-Net checkpoints in a checkpoint directory (`WT.unet`).
pub const UNET_EXT: &str = "unet";

/// Stem of a predicted region mask: `<case_id>_<REGION>`.
pub fn prediction_stem(case_id: &str, region: Region) -> String {
    format!("{case_id}_{region}")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn run_phantom(count: usize, seed: u64, dir: &Path, shape: Shape3, out: &mut dyn Write) -> Result<()> {
    let cases = generate_cohort::<f32>(count, shape, seed)?;
    save_dataset(&cases, dir)?;
    writeln!(out, "wrote {count} phantom cases of shape {shape:?} to {}", dir.display())?;
    Ok(())
}

pub fn run_maps(data: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let cases = load_dataset::<f32>(data, Naming::Auto)?;
    let mut written = 0;
    for case in &cases {
        if case.labels().is_none() {
            eprintln!("skipping unlabelled case {}", case.id());
            continue;
        }
        for (m, map) in build_case_maps(case)? {
            save_brainmap(&map, dir, &format!("{}_{m}", case.id()), case.spacing())?;
        }
        written += 1;
    }
    writeln!(out, "wrote brain maps of {written} cases to {}", dir.display())?;
    Ok(())
}

pub fn run_train_gan(modality: Modality, config: Option<&Path>, data: &Path, path: &Path, out: &mut dyn Write) -> Result<()> {
    if !modality.is_image() {
        bail!("{modality} is not an MR sequence");
    }
    let config = match config {
        Some(p) => AugConfig::from_toml(&read_text(p)?)?,
        None => AugConfig::default(),
    };
    let cases = load_dataset::<f32>(data, Naming::Auto)?;
    let (pairs, scale) = training_pairs(&cases, modality, &config)?;
    eprintln!("{modality}: {} training slices from {} cases", pairs.len(), cases.len());
    let per_epoch = pairs.len().div_ceil(config.training.batch_size).max(1);
    let ckpt = train_pairs(&pairs, modality, &config, scale, &mut |r| {
        if (r.step + 1) % per_epoch == 0 {
            eprintln!(
                "epoch {} step {} d {:.4} pixel {:.4} adversarial {:.4}",
                r.step / per_epoch,
                r.step,
                r.d_loss,
                r.pixel,
                r.adversarial
            );
        }
    })?;
    ckpt.save(path)?;
    writeln!(out, "saved {modality} checkpoint ({} epochs) to {}", ckpt.epoch, path.display())?;
    Ok(())
}

pub fn run_synthesize(ckpt_dir: &Path, maps: &Path, transforms: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let mut ckpts = BTreeMap::new();
    for m in Modality::IMAGES {
        let p = ckpt_dir.join(format!("{m}.{GAN_EXT}"));
        ckpts.insert(m, AugCheckpoint::<f32>::load(&p).with_context(|| format!("loading {}", p.display()))?);
    }
    let entries = read_transforms(transforms)?;
    for (n, e) in entries.iter().enumerate() {
        let (maps, spacing) = load_request_maps(maps, &e.map_id)?;
        let request = SynthesisRequest {
            id: format!("syn{:04}_{}", n + 1, e.map_id),
            maps,
            spacing,
            transform: e.transform,
            reference: None,
        };
        let case = synthesize_case(&ckpts, &request)?;
        save_case(&case, &dir.join(case.id()))?;
        eprintln!("synthesized {}", case.id());
    }
    writeln!(out, "wrote {} synthetic cases to {}", entries.len(), dir.display())?;
    Ok(())
}

pub fn run_train_unet(
    region: Region,
    config: Option<&Path>,
    train: &Path,
    val: &Path,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let config = match config {
        Some(p) => SegConfig::from_toml(&read_text(p)?)?,
        None => SegConfig::default(),
    };
    let train_cases = load_dataset::<f32>(train, Naming::Auto)?;
    let val_cases = load_dataset::<f32>(val, Naming::Auto)?;
    if train_cases.is_empty() || val_cases.is_empty() {
        bail!("training and validation directories must hold at least one case each");
    }
    let train_s = training_samples(&train_cases, region, &config)?;
    let val_s = validation_samples(&val_cases, region, &config)?;
    eprintln!("{region}: {} training and {} validation slices", train_s.len(), val_s.len());
    let ckpt = train_on_samples(&train_s, &val_s, region, &config, &mut |e, t, v| {
        eprintln!("epoch {e} train {t:.4} val {v:.4}");
    })?;
    ckpt.save(path)?;
    writeln!(out, "saved {region} U-Net (best epoch {}) to {}", ckpt.best_epoch, path.display())?;
    Ok(())
}

pub fn run_predict(ckpts: &Path, case_dir: &Path, dir: &Path, threshold: Option<f64>, out: &mut dyn Write) -> Result<()> {
    let mut models = BTreeMap::new();
    for r in Region::ALL {
        let p = ckpts.join(format!("{r}.{UNET_EXT}"));
        models.insert(r, SegCheckpoint::<f32>::load(&p).with_context(|| format!("loading {}", p.display()))?);
    }
    let case = load_case::<f32>(case_dir, Naming::Auto)?;
    let opts = PredictOptions {
        enhancement: threshold.map_or(Enhancement::Otsu, Enhancement::Fixed),
        ..PredictOptions::default()
    };
    let pred = predict_case(&models, &case, &opts)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut extra = BTreeMap::new();
    extra.insert("case".to_string(), case.id().to_string());
    extra.insert("tau".to_string(), pred.tau.map_or_else(|| "NA".to_string(), |t| t.to_string()));
    for (r, mask) in pred.masks() {
        extra.insert("region".to_string(), r.to_string());
        write_volume(dir, &prediction_stem(case.id(), r), &mask.to_volume::<f32>(case.spacing())?, &extra)?;
    }
    writeln!(
        out,
        "{}: WT {} ET {} TC {} voxels, tau {}",
        case.id(),
        pred.wt.count(),
        pred.et.count(),
        pred.tc.count(),
        extra["tau"]
    )?;
    Ok(())
}

pub fn run_evaluate(pred: &Path, reference: &Path, path: &Path, out: &mut dyn Write) -> Result<()> {
    let cases = load_dataset::<f32>(reference, Naming::Auto)?;
    let mut reports = Vec::new();
    for case in &cases {
        let Some(labels) = case.labels() else {
            bail!("reference case {} has no labels", case.id());
        };
        let mut refs = BTreeMap::new();
        let mut preds = BTreeMap::new();
        for r in Region::ALL {
            refs.insert(r, region_mask(labels, r)?.mask);
            let hdr = header_path(pred, &prediction_stem(case.id(), r));
            let (v, _) = read_volume::<f32>(&hdr).with_context(|| format!("reading {}", hdr.display()))?;
            preds.insert(r, BinaryMask::from_volume(&v));
        }
        reports.push(SegMetricReport::evaluate(case.id(), &refs, &preds, case.spacing())?);
    }
    if reports.is_empty() {
        bail!("no reference cases in {}", reference.display());
    }
    let csv = seg_reports_csv(&reports)?;
    std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    writeln!(out, "evaluated {} cases into {}", reports.len(), path.display())?;
    for line in csv.lines().filter(|l| l.starts_with("mean,")) {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn run_ablate(config: &Path, count_best: bool, out: &mut dyn Write) -> Result<()> {
    let config = AblationConfig::from_file(config)?;
    let data = load_data::<f32>(&config.data)?;
    let run = run_ablation(&config, &data, &mut |msg| eprintln!("{msg}"))?;
    writeln!(out, "run directory {}", run.dir.display())?;
    write!(out, "{}", run.table.render())?;
    if count_best {
        match run.table.count_best() {
            Ok(c) => write!(out, "{}", c.render())?,
            Err(e) => writeln!(out, "no tally: {e}")?,
        }
    }
    if !run.table.is_complete() {
        bail!("ablation finished with an incomplete table");
    }
    Ok(())
}

pub fn run_count_best(table: &Path, out: &mut dyn Write) -> Result<()> {
    let table = ResultTable::from_csv(&read_text(table)?)?;
    write!(out, "{}", table.count_best()?.render())?;
    Ok(())
}

pub fn run_serve(addr: SocketAddr, sessions: &Path, images: &Path) -> Result<()> {
    let state = AppState::open(sessions, images)?;
    eprintln!("{} stored sessions; listening on http://{addr}", state.store().len());
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(glioaug_review::serve(addr, state))?;
    Ok(())
}
