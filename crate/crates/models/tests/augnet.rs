use std::collections::BTreeMap;

use glioaug_core::brainmap::{build_brainmap, manipulate, ScaleBounds, MAP_CLASSES};
use glioaug_core::labels::{region_mask, Region};
use glioaug_core::phantom::{generate_phantom, PhantomSpec};
use glioaug_core::{BrainMap, Image2, LesionTransform, Modality, PatientCase};
use glioaug_models::augnet::losses::generator_adv_loss;
use glioaug_models::augnet::*;
use glioaug_models::Error;
use glioaug_nn::gradcheck::{check_smooth, nonzero_coordinates};
use glioaug_nn::{Binding, Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(top: usize) -> AugConfig {
    let mut c = AugConfig::default();
    c.generator.top_resolution = top;
    c.training.epochs = 2;
    c.training.batch_size = 2;
    c.training.slices_per_case = 4;
    c.training.seed = 5;
    c
}

fn phantom(top: usize, seed: u64) -> PatientCase<f64> {
    generate_phantom(&PhantomSpec::centered("p", [top, top, 8], seed)).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image2<f64> {
    Image2::new(1, h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

#[test]
fn total_generator_loss_gradient_matches_finite_differences() {
    let cfg = tiny_config(16);
    let gen = Generator::new(&cfg.generator).unwrap();
    let disc = PatchDiscriminator::new(&cfg.discriminator);
    let ext = FeatureExtractor::<f64>::new(&cfg.extractor);
    let gstore = gen.init::<f64>(11);
    let dstore = disc.init::<f64>(12);
    let case = phantom(16, 3);
    let (pairs, _) = training_pairs(&[case], Modality::T1ce, &cfg).unwrap();
    let pairs = &pairs[..2];
    let pyr: Vec<_> = pairs.iter().map(|p| gen.pyramid(&p.map).unwrap()).collect();
    let levels = gen.encode::<f64>(&pyr).unwrap();
    let targets: Vec<Image2<f64>> = pairs.iter().map(|p| p.target.clone()).collect();
    let real = Tensor::from_images(&targets).unwrap();
    let weights = LossWeights {
        perceptual: vec![0.7, 0.5, 0.3, 0.2],
        pixel: 1.0,
        adversarial: 0.05,
    };
    let run = |store: &ParamStore<f64>, trainable: bool| {
        let mut g = Graph::new();
        let lv: Vec<_> = levels.iter().map(|t| g.input(t.clone())).collect();
        let mut p = if trainable { Binding::trainable(store) } else { Binding::frozen(store) };
        let fake = gen.forward(&mut g, &mut p, &lv);
        let m = g.input(levels.last().unwrap().clone());
        let r = g.input(real.clone());
        let t = generator_terms(&mut g, &disc, &dstore, &ext, fake, r, m, &weights);
        let value = (g.value(t.total).item(), g.branch_fingerprint());
        let grads = trainable.then(|| {
            let gr = g.backward(t.total);
            p.grads(&g, &gr)
        });
        (value, grads)
    };

    let (_, analytic) = run(&gstore, true);
    let analytic = analytic.unwrap();
    let live = nonzero_coordinates(&analytic, 99);
    let (samples, _) = check_smooth(&gstore, &live, 10, 1e-3, |s| run(s, false).0, &analytic);
    assert_eq!(samples.len(), 10);
    for s in &samples {
        assert!(s.rel_error(1e-12) < 1e-3, "{s:?}");
    }
}

#[test]
fn generator_adversarial_gradient_wrt_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut g = Graph::new();
    let x = g.param(Tensor::new([1, 1, 4, 4], logits.clone()).unwrap());
    let l = generator_adv_loss(&mut g, x);
    let grads = g.backward(l);
    let analytic = grads.get(x).unwrap().data().to_vec();
    let h = 1e-5;
    for i in 0..16 {
        let mut up = logits.clone();
        up[i] += h;
        let mut down = logits.clone();
        down[i] -= h;
        let num = (adversarial_from_logits(&up, &up).1 - adversarial_from_logits(&down, &down).1) / (2.0 * h);
        let rel = (num - analytic[i]).abs() / analytic[i].abs().max(1e-12);
        assert!(rel < 1e-4, "logit {i}: {num} vs {}", analytic[i]);
    }
}

// Direct-loop reimplementation of the extractor for the perceptual oracle.
fn conv3x3_relu(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], b: &[f64], oc: usize) -> Vec<f64> {
    let mut out = vec![0.0; oc * h * w];
    for o in 0..oc {
        for r in 0..h {
            for q in 0..w {
                let mut s = b[o];
                for i in 0..c {
                    for dr in 0..3 {
                        for dq in 0..3 {
                            let (rr, qq) = (r as isize + dr as isize - 1, q as isize + dq as isize - 1);
                            if rr >= 0 && qq >= 0 && (rr as usize) < h && (qq as usize) < w {
                                s += wt[((o * c + i) * 3 + dr) * 3 + dq] * x[(i * h + rr as usize) * w + qq as usize];
                            }
                        }
                    }
                }
                out[(o * h + r) * w + q] = s.max(0.0);
            }
        }
    }
    out
}

fn pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * h * w / 4);
    for i in 0..c {
        for r in 0..h / 2 {
            for q in 0..w / 2 {
                let at = |dr: usize, dq: usize| x[(i * h + 2 * r + dr) * w + 2 * q + dq];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

fn oracle_features(ext: &FeatureExtractor<f64>, img: &Image2<f64>) -> Vec<Vec<f64>> {
    let (_, mut h, mut w) = img.dims();
    const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
    const STD: [f64; 3] = [0.229, 0.224, 0.225];
    let mut x: Vec<f64> = (0..3)
        .flat_map(|c| img.data().iter().map(move |&v| (v - MEAN[c]) / STD[c]))
        .collect();
    let mut c = 3;
    let mut feats = Vec::new();
    for block in 1..=4 {
        let wt = ext.params().param(&format!("block{block}.weight")).unwrap();
        let b = ext.params().param(&format!("block{block}.bias")).unwrap();
        let oc = wt.shape()[0];
        x = pool2(&conv3x3_relu(&x, c, h, w, wt.data(), b.data(), oc), oc, h, w);
        c = oc;
        h /= 2;
        w /= 2;
        feats.push(x.clone());
    }
    feats
}

#[test]
fn perceptual_loss_matches_independent_extraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ext = FeatureExtractor::<f64>::new(&ExtractorConfig::default());
    let a = random_image(&mut rng, 64, 64);
    let b = random_image(&mut rng, 64, 64);
    let weights = [1.0, 0.5, 2.0, 0.25];
    let fa = oracle_features(&ext, &a);
    let fb = oracle_features(&ext, &b);
    let expected: f64 = (0..4)
        .map(|i| weights[i] * fa[i].iter().zip(&fb[i]).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    let got = perceptual_loss(&a, &b, &ext, &FEATURE_LAYERS, &weights).unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected.abs(), "{got} vs {expected}");
    assert!(got > 0.0);
    let single = perceptual_loss(&a, &b, &ext, &["pool2"], &[1.0]).unwrap();
    let e2: f64 = fa[1].iter().zip(&fb[1]).map(|(x, y)| (x - y).abs()).sum();
    assert!((single - e2).abs() <= 1e-9 * e2);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let cfg = tiny_config(16);
    let cases = vec![phantom(16, 1), phantom(16, 2)];
    let a = train_augnet(&cases, Modality::T2, &cfg).unwrap();
    let b = train_augnet(&cases, Modality::T2, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.steps.len(), 2 * 4);
    assert_eq!(a.history.epochs.len(), 2);
    assert_eq!(a.epoch, 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t2.gan");
    a.save(&path).unwrap();
    let back = AugCheckpoint::<f64>::load(&path).unwrap();
    assert_eq!(back, a);
    let as_f32 = AugCheckpoint::<f32>::load(&path).unwrap();
    assert_eq!(as_f32.modality, Modality::T2);
    assert_eq!(as_f32.history, a.history);
}

#[test]
fn zero_epochs_returns_initialization() {
    let mut cfg = tiny_config(16);
    cfg.training.epochs = 0;
    let ck = train_augnet(&[phantom(16, 1)], Modality::Flair, &cfg).unwrap();
    assert!(ck.history.steps.is_empty() && ck.history.epochs.is_empty());
    let other = train_augnet(&[phantom(16, 1)], Modality::Flair, &cfg).unwrap();
    assert_eq!(ck.generator, other.generator);
    assert_eq!(ck.generator.num_params(), Generator::new(&cfg.generator).unwrap().init::<f64>(0).num_params());
}

#[test]
fn non_finite_loss_aborts_with_term_and_step() {
    let cfg = tiny_config(16);
    let (mut pairs, scale) = training_pairs(&[phantom(16, 1)], Modality::T1, &cfg).unwrap();
    pairs[0].target.data_mut()[3] = f64::NAN;
    let err = train_pairs(&pairs, Modality::T1, &cfg, scale, &mut |_| {}).unwrap_err();
    match err {
        Error::Diverged { term, step, value } => {
            assert_eq!(term, "discriminator");
            assert!(step < 2);
            assert!(value.is_nan());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn unlabelled_cases_rejected() {
    let case = phantom(16, 1);
    let vols = case.volumes().clone();
    let bare = PatientCase::new("bare", vols, None, glioaug_core::Provenance::Real).unwrap();
    assert!(train_augnet(&[bare], Modality::T1, &tiny_config(16)).is_err());
}

fn trained_set(top: usize) -> (PatientCase<f64>, BTreeMap<Modality, AugCheckpoint<f64>>) {
    let mut cfg = tiny_config(top);
    cfg.training.epochs = 1;
    let case = phantom(top, 9);
    let ckpts = Modality::IMAGES
        .iter()
        .map(|&m| (m, train_augnet(std::slice::from_ref(&case), m, &cfg).unwrap()))
        .collect();
    (case, ckpts)
}

fn request<'a>(case: &'a PatientCase<f64>, id: &str, t: LesionTransform) -> SynthesisRequest<'a, f64> {
    let maps: BTreeMap<Modality, BrainMap> = Modality::IMAGES
        .iter()
        .map(|&m| (m, build_brainmap(case.volume(m).unwrap(), case.labels()).unwrap()))
        .collect();
    SynthesisRequest {
        id: id.into(),
        maps,
        spacing: case.spacing(),
        transform: t,
        reference: Some(case),
    }
}

#[test]
fn synthesis_produces_labelled_cases() {
    let (case, ckpts) = trained_set(16);
    let reqs: Vec<_> = (0..3)
        .map(|i| request(&case, &format!("syn{i}"), LesionTransform::IDENTITY))
        .collect();
    let out = synthesize_dataset(&ckpts, &reqs).unwrap();
    assert_eq!(out.len(), 3);
    for (c, r) in out.iter().zip(&reqs) {
        assert_eq!(c.shape(), case.shape());
        assert_eq!(c.provenance(), glioaug_core::Provenance::Synthetic);
        assert_eq!(c.labels().unwrap().data(), case.labels().unwrap().data());
        assert_eq!(c.id(), r.id);
        for m in Modality::IMAGES {
            assert!(c.metadata.contains_key(&format!("ssim_{m}")), "{:?}", c.metadata);
            let v = c.volume(m).unwrap();
            let brain = build_brainmap(case.volume(m).unwrap(), case.labels()).unwrap();
            for (i, &x) in v.data().iter().enumerate() {
                assert_eq!(x == 0.0, brain.label(i) == 0);
            }
        }
    }

    let moved = request(&case, "moved", LesionTransform::translation(2.0, -1.0));
    let syn = synthesize_case(&ckpts, &moved).unwrap();
    let expected = manipulate(&moved.maps[&Modality::T1], &moved.transform, ScaleBounds::default()).unwrap();
    let wt = region_mask(syn.labels().unwrap(), Region::Wt).unwrap();
    let exp_wt: Vec<bool> = expected.tumor().iter().map(|&t| t != 0).collect();
    assert_eq!(wt.mask.data(), &exp_wt[..]);

    let mut partial = ckpts.clone();
    partial.remove(&Modality::T2);
    assert!(matches!(
        synthesize_dataset(&partial, &reqs),
        Err(Error::MissingCheckpoint(Modality::T2))
    ));
}

#[test]
fn one_hot_channel_count_matches_generator_input() {
    let cfg = tiny_config(16);
    let gen = Generator::new(&cfg.generator).unwrap();
    let map = BrainMap::from_parts([16, 16, 1], vec![1; 256], vec![0; 256], Modality::T1).unwrap();
    let levels = gen.encode::<f32>(&[gen.pyramid(&map).unwrap()]).unwrap();
    assert_eq!(levels.len(), 3);
    assert!(levels.iter().all(|t| t.c() == MAP_CLASSES));
    assert_eq!(levels[2].shape(), [1, MAP_CLASSES, 16, 16]);
}
