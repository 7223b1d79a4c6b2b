use glioaug_core::metrics::report::SegMetric;
use glioaug_core::phantom::{generate_phantom, PhantomSpec};
use glioaug_core::{PatientCase, Region};
use glioaug_models::experiments::*;
use proptest::prelude::*;

/// Five-column validation table with two ties.
const REFERENCE_TABLE: &str = "\
metric,region,Brats,Brats + 1/4 GAN,Brats + 1/2 GAN,Brats + 3/4 GAN,Brats + All GAN
DSC,ET,0.559,0.506,0.607,0.520,0.607
DSC,WT,0.818,0.789,0.817,0.841,0.828
DSC,TC,0.648,0.638,0.701,0.664,0.683
Sens.,ET,0.704,0.795,0.843,0.782,0.621
Sens.,WT,0.887,0.899,0.887,0.829,0.796
Sens.,TC,0.662,0.740,0.751,0.769,0.648
Spec.,ET,0.985,0.985,0.989,0.985,0.990
Spec.,WT,0.987,0.979,0.987,0.994,0.994
Spec.,TC,0.992,0.990,0.994,0.991,0.995
HD (mm),ET,11.8,16.2,11.2,13.7,8.5
HD (mm),WT,17.0,23.1,17.0,11.4,11.7
HD (mm),TC,17.4,22.2,17.0,16.8,13.4
";

#[test]
fn reference_table_tally() {
    let table = ResultTable::from_csv(REFERENCE_TABLE).unwrap();
    assert!(table.is_complete());
    assert_eq!(table.rows.len(), 12);
    let c = table.count_best().unwrap();
    let counts: Vec<usize> = c.columns.iter().map(|c| c.count).collect();
    assert_eq!(counts, vec![0, 1, 3, 4, 6]);
    let et_dsc = c
        .ties
        .iter()
        .find(|t| t.metric == SegMetric::Dsc && t.region == Region::Et)
        .unwrap();
    assert_eq!(et_dsc.columns, vec!["Brats + 1/2 GAN", "Brats + All GAN"]);
    assert!(c.columns[2].tied && c.columns[4].tied);
    assert_eq!(c.columns.iter().map(|c| c.count).sum::<usize>(), 14);
}

#[test]
fn table_file_round_trip() {
    let table = ResultTable::from_csv(REFERENCE_TABLE).unwrap();
    assert_eq!(ResultTable::from_csv(&table.to_csv()).unwrap(), table);
    let text = table.render();
    assert!(text.lines().nth(1).unwrap().contains("0.607*"));
    assert!(text.lines().nth(10).unwrap().contains("8.5*"));
}

fn argbest(values: &[f64], minimize: bool) -> Vec<usize> {
    let mut best = values[0];
    for &v in values {
        if (minimize && v < best) || (!minimize && v > best) {
            best = v;
        }
    }
    (0..values.len()).filter(|&i| values[i] == best).collect()
}

proptest! {
    #[test]
    fn subsets_nest(
        ids in prop::collection::vec("[a-d]{1,3}", 1..40),
        seed in any::<u64>(),
    ) {
        let fractions = DEFAULT_FRACTIONS;
        let subsets = make_subsets(&ids, &fractions, seed).unwrap();
        for w in subsets.windows(2) {
            prop_assert!(w[1].1.starts_with(&w[0].1));
        }
        for (f, s) in &subsets {
            prop_assert_eq!(s.len(), (f * ids.len() as f64).ceil() as usize);
        }
        let mut all = subsets.last().unwrap().1.clone();
        let mut sorted = ids.clone();
        all.sort();
        sorted.sort();
        prop_assert_eq!(all, sorted);
        prop_assert_eq!(&subsets, &make_subsets(&ids, &fractions, seed).unwrap());
    }

    #[test]
    fn markers_match_brute_force(cells in prop::collection::vec(0u8..4, 12 * 4)) {
        let cols = [0.0, 0.5, 0.75, 1.0].into_iter().map(Column::new).collect();
        let keys: Vec<(SegMetric, Region)> = SegMetric::ALL
            .iter()
            .flat_map(|&m| Region::ALL.iter().map(move |&r| (m, r)))
            .collect();
        let table = ResultTable::build(cols, |c, m, r| {
            let k = keys.iter().position(|&x| x == (m, r)).unwrap();
            Some(cells[k * 4 + c] as f64 / 4.0)
        });
        let counts = table.count_best().unwrap();
        let mut expect = [0usize; 4];
        for row in &table.rows {
            let values: Vec<f64> = row.values.iter().map(|v| v.unwrap()).collect();
            let best = argbest(&values, row.metric == SegMetric::Hd95);
            prop_assert_eq!(table.best_columns(row), best.clone());
            for i in best {
                expect[i] += 1;
            }
        }
        let got: Vec<usize> = counts.columns.iter().map(|c| c.count).collect();
        prop_assert_eq!(got, expect.to_vec());
        prop_assert!(expect.iter().sum::<usize>() >= 12);
    }
}

fn phantoms(prefix: &str, n: usize, seed: u64) -> Vec<PatientCase<f32>> {
    (0..n)
        .map(|i| generate_phantom(&PhantomSpec::random(format!("{prefix}{i}"), [16, 16, 6], seed + i as u64)).unwrap())
        .collect()
}

fn tiny_config(out: &std::path::Path) -> AblationConfig {
    let mut c = AblationConfig {
        fractions: vec![0.0, 0.5, 1.0],
        seed: 7,
        output_dir: out.to_path_buf(),
        ..AblationConfig::default()
    };
    c.segnet.unet.base_features = 2;
    c.segnet.unet.resolution = 16;
    c.segnet.training.epochs = 1;
    c
}

#[test]
fn ablation_end_to_end_is_reproducible() {
    let data = AblationData {
        real: phantoms("real", 2, 1),
        synthetic: phantoms("syn", 4, 50),
        validation: phantoms("val", 2, 100),
    };
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let a = run_ablation(&tiny_config(a_dir.path()), &data, &mut |m| lines.push(m.to_string())).unwrap();
    assert!(!lines.is_empty());
    assert_eq!(a.table.columns.len(), 3);
    assert!(a.table.columns.iter().all(|c| c.complete));
    assert_eq!(a.table.rows.len(), 12);
    // Barely trained nets may predict no ET, leaving its HD95 undefined.
    for row in a.table.rows.iter().filter(|r| r.metric != SegMetric::Hd95) {
        assert!(row.values.iter().all(Option::is_some), "{}", a.table.render());
    }
    assert_eq!(a.subsets[1].1.len(), 2);
    assert!(a.subsets[2].1.starts_with(&a.subsets[1].1));

    for f in ["config.toml", "seeds.csv", "data.txt", "table.csv", "table.txt"] {
        assert!(a.dir.join(f).is_file(), "{f}");
    }
    let col = a.dir.join("fraction_0.5000");
    assert_eq!(std::fs::read_to_string(col.join("status.txt")).unwrap().trim(), "complete");
    for r in ["WT", "ET", "TC"] {
        assert!(col.join("rep0").join(format!("{r}.unet")).is_file());
    }
    assert_eq!(regenerate_table(&a.dir).unwrap(), a.table);
    let csv = std::fs::read_to_string(a.dir.join("table.csv")).unwrap();
    assert_eq!(ResultTable::from_csv(&csv).unwrap(), a.table);

    let b = run_ablation(&tiny_config(b_dir.path()), &data, &mut |_| {}).unwrap();
    assert_eq!(a.dir.file_name(), b.dir.file_name());
    assert_eq!(a.table, b.table);
    assert_eq!(csv, std::fs::read_to_string(b.dir.join("table.csv")).unwrap());
}

#[test]
fn failed_column_is_flagged() {
    let mut synthetic = phantoms("syn", 2, 50);
    // Unlabelled synthetic cases cannot be trained on.
    synthetic = synthetic
        .into_iter()
        .map(|c| PatientCase::new(c.id(), c.volumes().clone(), None, c.provenance()).unwrap())
        .collect();
    let data = AblationData {
        real: phantoms("real", 1, 1),
        synthetic,
        validation: phantoms("val", 1, 100),
    };
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.fractions = vec![0.0, 1.0];
    let run = run_ablation(&cfg, &data, &mut |_| {}).unwrap();
    assert!(run.table.columns[0].complete);
    assert!(!run.table.columns[1].complete);
    assert!(run.table.columns[1].note.as_deref().unwrap().starts_with("failed"));
    assert!(run.table.count_best().is_err());
    assert!(run.table.render().contains("(incomplete)"));
    assert_eq!(regenerate_table(&run.dir).unwrap(), run.table);
}

#[test]
fn missing_synthetic_cases_are_rejected() {
    let data = AblationData {
        real: phantoms("real", 1, 1),
        synthetic: Vec::new(),
        validation: phantoms("val", 1, 100),
    };
    let dir = tempfile::tempdir().unwrap();
    assert!(run_ablation(&tiny_config(dir.path()), &data, &mut |_| {}).is_err());
    let mut real_only = tiny_config(dir.path());
    real_only.fractions = vec![0.0];
    let run = run_ablation(&real_only, &data, &mut |_| {}).unwrap();
    assert_eq!(run.table.columns.len(), 1);
}

#[test]
fn data_loads_from_directories() {
    let root = tempfile::tempdir().unwrap();
    let real = phantoms("real", 2, 1);
    glioaug_core::io::save_dataset(&real, &root.path().join("real")).unwrap();
    let sources = DataSources {
        real_dir: root.path().join("real"),
        real_cases: vec!["real1".into()],
        ..DataSources::default()
    };
    let data = load_data::<f32>(&sources).unwrap();
    assert_eq!(data.real.len(), 1);
    assert_eq!(data.real[0].id(), "real1");
    assert!(data.synthetic.is_empty());
    let bad = DataSources {
        real_cases: vec!["nope".into()],
        ..sources
    };
    assert!(load_data::<f32>(&bad).is_err());
}
