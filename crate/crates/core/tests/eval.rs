use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcpc_gan::config::RunConfig;
use vqcpc_gan::dsp::SpectroTensor;
use vqcpc_gan::eval::{
    evaluate, fad, train_inception, InceptionCheckpoint, InceptionConfig, InceptionModel, InceptionTrainConfig,
    LabeledSpectro, MetricReport,
};
use vqcpc_gan::train::{GanDataset, GanExample, GanTrainer, GeneratorCheckpoint};
use vqcpc_gan::Error;

const BINS: usize = 128;
const FRAMES: usize = 8;
const PITCHES: [u8; 6] = [50, 52, 55, 57, 60, 64];
const FAMILIES: [&str; 3] = ["brass", "keyboard", "string"];

/// Pitch picks a bright band in the lower half, family a band in the upper
/// half; everything else is noise.
fn toy_clip(rng: &mut ChaCha8Rng, p: usize, f: usize, noise: f64) -> LabeledSpectro {
    let mut data = vec![0.0; 2 * BINS * FRAMES];
    for bin in 0..BINS {
        let lit = (bin / 8 == 1 + p) || (bin / 16 == 5 + f);
        for t in 0..FRAMES {
            let base = if lit { 0.6 } else { -0.6 };
            data[bin * FRAMES + t] = base + noise * rng.random_range(-1.0..1.0);
            data[BINS * FRAMES + bin * FRAMES + t] = rng.random_range(-1.0..1.0);
        }
    }
    LabeledSpectro {
        spectro: SpectroTensor::new(2, BINS, FRAMES, data).unwrap(),
        pitch: PITCHES[p],
        family: FAMILIES[f].to_string(),
    }
}

fn toy_set(seed: u64, n: usize, noise: f64) -> Vec<LabeledSpectro> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| toy_clip(&mut rng, i % PITCHES.len(), (i / 2) % FAMILIES.len(), noise)).collect()
}

fn toy_config() -> InceptionConfig {
    InceptionConfig {
        freq_bins: BINS,
        embed_dim: 128,
        pitches: PITCHES.to_vec(),
        families: FAMILIES.iter().map(|s| s.to_string()).collect(),
    }
}

fn train_cfg(steps: usize) -> InceptionTrainConfig {
    InceptionTrainConfig {
        steps,
        batch_size: 12,
        learning_rate: 1e-3,
        seed: 4,
    }
}

#[test]
fn classifier_separates_a_toy_dataset() {
    let (model, report) = train_inception(&toy_config(), &toy_set(1, 96, 0.3), &toy_set(2, 60, 0.3), &train_cfg(150)).unwrap();
    assert!(report.pitch_accuracy > 0.9, "{report:?}");
    assert!(report.family_accuracy > 0.9, "{report:?}");
    assert_eq!(model.accuracy(&toy_set(2, 60, 0.3)).unwrap(), (report.pitch_accuracy, report.family_accuracy));
}

#[test]
fn untrained_classifier_is_near_chance() {
    let (_, report) = train_inception(&toy_config(), &toy_set(1, 12, 0.3), &toy_set(2, 120, 0.3), &train_cfg(0)).unwrap();
    let chance = 1.0 / PITCHES.len() as f64;
    assert!(report.pitch_accuracy <= 2.5 * chance, "{report:?}");
}

#[test]
fn same_seed_gives_identical_parameters() {
    let data = toy_set(1, 24, 0.3);
    let (a, _) = train_inception(&toy_config(), &data, &[], &train_cfg(5)).unwrap();
    let (b, _) = train_inception(&toy_config(), &data, &[], &train_cfg(5)).unwrap();
    for (x, y) in a.vs.vars().iter().zip(b.vs.vars()) {
        assert_eq!(x.to_vec(), y.to_vec(), "{}", x.name());
    }
}

#[test]
fn single_class_vocabularies_are_rejected() {
    let mut cfg = toy_config();
    cfg.pitches = vec![60];
    let err = train_inception(&cfg, &toy_set(1, 4, 0.3), &[], &train_cfg(1)).err().unwrap();
    assert!(matches!(err, Error::EmptyDataset(_)), "{err}");
    let mut cfg = toy_config();
    cfg.families.truncate(1);
    assert!(InceptionModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn embedding_contract() {
    let model = InceptionModel::new(&toy_config(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut clips: Vec<SpectroTensor> = toy_set(3, 5, 0.3).into_iter().map(|c| c.spectro).collect();
    clips.push(clips[1].clone());
    // A longer clip in the middle exercises variable-length batching.
    clips.insert(2, SpectroTensor::filled(2, BINS, 3 * FRAMES, 0.1));
    let set = model.embed(&clips).unwrap();
    assert_eq!(set.len(), 7);
    assert_eq!(set.vectors.len(), 7 * 128);
    assert_eq!(set.pitch_probs.len(), 7 * PITCHES.len());
    assert_eq!(set.family_probs.len(), 7 * FAMILIES.len());
    assert_eq!(set.row(1), set.row(6));
    for row in set.pitch_probs.chunks(PITCHES.len()).chain(set.family_probs.chunks(FAMILIES.len())) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let bad = SpectroTensor::filled(2, 64, FRAMES, 0.0);
    assert!(matches!(model.embed(&[bad]), Err(Error::Geometry(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (model, report) = train_inception(&toy_config(), &toy_set(1, 24, 0.3), &toy_set(2, 12, 0.3), &train_cfg(3)).unwrap();
    let ck = InceptionCheckpoint {
        model,
        report: Some(report),
    };
    let path = dir.path().join("cls.ckpt");
    ck.save(&path).unwrap();
    let back = InceptionCheckpoint::load(&path).unwrap();
    assert_eq!(back.fingerprint(), ck.fingerprint());
    assert_eq!(back.report, Some(report));
    let clips: Vec<SpectroTensor> = toy_set(5, 4, 0.3).into_iter().map(|c| c.spectro).collect();
    assert_eq!(back.model.embed(&clips).unwrap(), ck.model.embed(&clips).unwrap());
}

#[test]
fn real_split_is_closer_than_degraded_real() {
    let (model, _) = train_inception(&toy_config(), &toy_set(1, 96, 0.3), &[], &train_cfg(150)).unwrap();
    let real: Vec<SpectroTensor> = toy_set(7, 120, 0.3).into_iter().map(|c| c.spectro).collect();
    let (half_a, half_b) = real.split_at(60);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let degraded: Vec<SpectroTensor> = half_b
        .iter()
        .map(|s| {
            let mut d = s.clone();
            for v in &mut d.data {
                *v = (*v + rng.random_range(-0.8..0.8)).clamp(-1.0, 1.0);
            }
            d
        })
        .collect();
    let ea = model.embed(half_a).unwrap();
    let eb = model.embed(half_b).unwrap();
    let ed = model.embed(&degraded).unwrap();
    let self_fad = fad(&ea.vectors, &eb.vectors, ea.dim).unwrap();
    let degraded_fad = fad(&ea.vectors, &ed.vectors, ea.dim).unwrap();
    assert!(self_fad < 0.1 * degraded_fad, "self {self_fad} vs degraded {degraded_fad}");
}

/// A tiny GAN geometry whose final grid matches the toy classifier input.
fn tiny_run() -> RunConfig {
    RunConfig::desk()
        .with_overrides(&[
            "fft_size=256",
            "clip_samples=512",
            "gan_base_freq=64",
            "gan_feature_maps=[64, 64]",
            "gan_batch_sizes=[2, 2]",
            "gan_feature_divisor=16",
            "gan_global_hidden=4",
        ])
        .unwrap()
}

fn tiny_generator(dir: &std::path::Path) -> (GeneratorCheckpoint, Vec<GanExample>) {
    let cfg = tiny_run();
    assert_eq!(cfg.frames(), FRAMES);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let examples: Vec<GanExample> = toy_set(9, 12, 0.3)
        .into_iter()
        .enumerate()
        .map(|(i, c)| GanExample {
            source_id: format!("clip{i}"),
            pitch: c.pitch,
            spectro: c.spectro,
            tokens: (0..FRAMES).map(|_| rng.random_range(0..cfg.vqcpc_codebook_size as u8)).collect(),
        })
        .collect();
    let data = GanDataset::new(examples.clone()).unwrap();
    let path = dir.join("gan.ckpt");
    GanTrainer::new(&data, &cfg).unwrap().save(&path).unwrap();
    (GeneratorCheckpoint::load(&path).unwrap(), examples)
}

#[test]
fn evaluation_report_is_bounded_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (generator, real) = tiny_generator(dir.path());
    let (model, report) = train_inception(&toy_config(), &toy_set(1, 48, 0.3), &[], &train_cfg(20)).unwrap();
    let cls = InceptionCheckpoint {
        model,
        report: Some(report),
    };
    let a = evaluate(&generator, &real, &cls, 10, 3).unwrap();
    assert_eq!(a.n_samples, 10);
    assert!((1.0 - 1e-9..=PITCHES.len() as f64 + 1e-9).contains(&a.pis), "{a:?}");
    assert!((1.0 - 1e-9..=FAMILIES.len() as f64 + 1e-9).contains(&a.iis), "{a:?}");
    assert!(a.fad >= 0.0 && a.kid.is_finite());
    assert_eq!(a, evaluate(&generator, &real, &cls, 10, 3).unwrap());
    assert_ne!(a, evaluate(&generator, &real, &cls, 10, 4).unwrap());
    assert_eq!(a.to_tsv().split('\t').count(), MetricReport::HEADER.split('\t').count());
    assert!(evaluate(&generator, &real, &cls, 1, 3).is_err());
}
