use pdalign::pipeline::{
    generate_dataset, sample_pairs, ComparisonRecord, DifferenceSource, FilterStatus, GenerationOptions, RejectReason,
};
use pdalign::toyworld::{generate_world, ToyWorld, ToyWorldConfig};
use pdalign::train::{
    checkpoint, encode_text, ensemble_weights, fit, fit_captions, EncoderParams, EncoderSpec, LossKind, TrainConfig,
};
use pdalign::Error;

struct Setup {
    world: ToyWorld,
    records: Vec<ComparisonRecord>,
    init: EncoderParams,
}

fn setup(sigma: f64) -> Setup {
    let world =
        generate_world(&ToyWorldConfig { n_items: 30, noise_sigma: sigma, seed: 4, ..Default::default() }).unwrap();
    let items = world.records();
    let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    let pairs = sample_pairs(&ids, 16, 4).unwrap();
    let records = generate_dataset(&DifferenceSource::Oracle, &items, &pairs, &GenerationOptions::default()).unwrap();
    let spec = EncoderSpec { vocab: 512, token_dim: 16, hidden: vec![24], dim: 32, ..Default::default() };
    let init = EncoderParams::init(spec, 9).unwrap();
    Setup { world, records, init }
}

fn quick() -> TrainConfig {
    TrainConfig { lr: 2.0, epochs: 6, batch_size: 64, ..Default::default() }
}

#[test]
fn loss_goes_down() {
    let s = setup(0.05);
    for loss in [LossKind::Contrastive, LossKind::Mse] {
        let (_, log) = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { loss, ..quick() }).unwrap();
        assert_eq!(log.epochs.len(), 6);
        assert_eq!(log.rows, s.records.len());
        let first = log.epochs[0].mean_loss;
        let last = log.epochs.last().unwrap().mean_loss;
        assert!(last < first, "{loss}: {first} -> {last}");
    }
}

#[test]
fn learning_rate_decays_per_epoch() {
    let s = setup(0.05);
    let cfg = TrainConfig { lr: 1.0, lr_gamma: 0.5, epochs: 4, ..quick() };
    let (_, log) = fit(s.init.clone(), &s.records, &s.world.images, &cfg).unwrap();
    let lrs: Vec<f64> = log.epochs.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![1.0, 0.5, 0.25, 0.125]);
}

#[test]
fn zero_epochs_is_identity() {
    let s = setup(0.05);
    let (out, log) = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { epochs: 0, ..quick() }).unwrap();
    assert_eq!(checkpoint::to_bytes(&out), checkpoint::to_bytes(&s.init));
    assert!(log.epochs.is_empty());
}

#[test]
fn training_is_deterministic() {
    let s = setup(0.05);
    let a = fit(s.init.clone(), &s.records, &s.world.images, &quick()).unwrap();
    let b = fit(s.init.clone(), &s.records, &s.world.images, &quick()).unwrap();
    assert_eq!(checkpoint::to_bytes(&a.0), checkpoint::to_bytes(&b.0));
    assert_eq!(a.1, b.1);
    let c = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { seed: 1, ..quick() }).unwrap();
    assert_ne!(checkpoint::to_bytes(&a.0), checkpoint::to_bytes(&c.0));
}

#[test]
fn worker_count_changes_only_rounding() {
    let s = setup(0.05);
    let one = fit(s.init.clone(), &s.records, &s.world.images, &quick()).unwrap().0;
    let four = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { workers: 4, ..quick() }).unwrap().0;
    let again = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { workers: 4, ..quick() }).unwrap().0;
    assert_eq!(checkpoint::to_bytes(&four), checkpoint::to_bytes(&again));
    let worst = one
        .tensors()
        .iter()
        .zip(four.tensors())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "workers changed weights by {worst}");
}

#[test]
fn image_table_is_not_touched() {
    let s = setup(0.05);
    let before = s.world.images.to_bytes();
    fit(s.init.clone(), &s.records, &s.world.images, &quick()).unwrap();
    assert_eq!(s.world.images.to_bytes(), before);
}

#[test]
fn rejected_records_are_ignored() {
    let s = setup(0.05);
    let mut noisy = s.records.clone();
    for r in noisy.iter_mut().step_by(3) {
        r.difference_text = "#include <x>".into();
        r.filter_status = FilterStatus::Rejected { reason: RejectReason::ContainsInclude };
    }
    let usable: Vec<ComparisonRecord> = noisy.iter().filter(|r| r.is_usable()).cloned().collect();
    let a = fit(s.init.clone(), &noisy, &s.world.images, &quick()).unwrap();
    let b = fit(s.init.clone(), &usable, &s.world.images, &quick()).unwrap();
    assert_eq!(a.1.rows, usable.len());
    assert_eq!(checkpoint::to_bytes(&a.0), checkpoint::to_bytes(&b.0));
}

#[test]
fn identical_images_are_skipped() {
    let s = setup(0.0);
    let (_, log) = fit(s.init.clone(), &s.records, &s.world.images, &TrainConfig { epochs: 1, ..quick() }).unwrap();
    let same = s
        .records
        .iter()
        .filter(|r| s.world.item(&r.id_a).unwrap().attributes == s.world.item(&r.id_b).unwrap().attributes)
        .count();
    assert!(same > 0);
    assert_eq!(log.skipped_zero_difference, same);
    assert_eq!(log.rows + same, s.records.len());
}

#[test]
fn unknown_record_id_is_a_data_error() {
    let s = setup(0.05);
    let mut recs = s.records.clone();
    recs[0].id_b = "missing".into();
    assert!(matches!(fit(s.init.clone(), &recs, &s.world.images, &quick()), Err(Error::Data(_))));
}

#[test]
fn invalid_config_is_rejected() {
    let s = setup(0.05);
    for cfg in [
        TrainConfig { tau: 0.0, ..quick() },
        TrainConfig { lr: -1.0, ..quick() },
        TrainConfig { batch_size: 1, ..quick() },
        TrainConfig { lr_gamma: 1.5, ..quick() },
        TrainConfig { workers: 0, ..quick() },
    ] {
        assert!(matches!(fit(s.init.clone(), &s.records, &s.world.images, &cfg), Err(Error::Config(_))));
    }
}

#[test]
fn diverging_run_reports_numerical_error() {
    let s = setup(0.05);
    let cfg = TrainConfig { lr: 1e300, loss: LossKind::Mse, ..quick() };
    let r = fit(s.init.clone(), &s.records, &s.world.images, &cfg);
    assert!(matches!(r, Err(Error::Numerical(_))), "{:?}", r.map(|x| x.1));
}

#[test]
fn caption_pretraining_keeps_position_table() {
    let s = setup(0.05);
    let captions: Vec<(String, String)> = s.world.items.iter().map(|i| (i.id.clone(), i.caption.clone())).collect();
    let cfg = TrainConfig { train_positional: false, batch_size: 16, ..quick() };
    let (out, log) = fit_captions(s.init.clone(), &captions, &s.world.images, &cfg).unwrap();
    assert_eq!(out.position_table, s.init.position_table);
    assert_ne!(out.token_table, s.init.token_table);
    assert!(log.epochs.last().unwrap().mean_loss < log.epochs[0].mean_loss);
}

#[test]
fn ensemble_averages_weights() {
    let s = setup(0.05);
    let other = EncoderParams::init(s.init.spec.clone(), 10).unwrap();
    let mid = ensemble_weights(&s.init, &other).unwrap();
    for ((m, a), b) in mid.tensors().iter().zip(s.init.tensors()).zip(other.tensors()) {
        for ((x, y), z) in m.iter().zip(a).zip(b) {
            assert!((x - (y + z) / 2.0).abs() < 1e-15);
        }
    }
    let same = ensemble_weights(&s.init, &s.init).unwrap();
    assert_eq!(checkpoint::to_bytes(&same), checkpoint::to_bytes(&s.init));
    let linear = EncoderParams::init(EncoderSpec::default(), 0).unwrap();
    assert!(ensemble_weights(&s.init, &linear).is_err());
}

#[test]
fn checkpoint_round_trips_through_a_file() {
    let s = setup(0.05);
    let (trained, _) = fit(s.init.clone(), &s.records, &s.world.images, &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.ckpt");
    checkpoint::save(&trained, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    for text in
        ["a photo of a cat", "The first image has attributes of red, while the second image has attributes of blue"]
    {
        assert_eq!(encode_text(&trained, text).unwrap(), encode_text(&back, text).unwrap());
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
}
