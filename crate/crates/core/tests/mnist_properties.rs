//! Properties of a briefly trained MNIST network. Skipped (with a note)
//! when the IDX files are not present; run `scripts/fetch-mnist.sh`.

use std::path::PathBuf;
use std::sync::OnceLock;

use pufbnn::attack::{eval_with_wrong_key, eval_without_key};
use pufbnn::bnn::{evaluate, BnnModel, EncodedSet};
use pufbnn::crossbar::{CrossbarModel, DeviceModel};
use pufbnn::format::{decode_model, encode_model};
use pufbnn::protection::{protect, Challenge, KeyMode, PufDevice, SchemeId};
use pufbnn::trainer::{finalize, load_mnist, train_ste, ShadowModel, Split, TrainConfig};

struct Trained {
    shadow: ShadowModel,
    model: BnnModel,
    test: EncodedSet,
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// One epoch on the full training set, shared by every test.
fn trained() -> Option<&'static Trained> {
    static CELL: OnceLock<Option<Trained>> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = mnist_dir();
        let Ok(train) = load_mnist(&dir, Split::Train) else {
            eprintln!("MNIST not found in {}; skipping", dir.display());
            return None;
        };
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let test = load_mnist(&dir, Split::Test).unwrap().binarize(config.t_pix);
        let outcome = train_ste(&config, &train.binarize(config.t_pix), &test, |_| {}).unwrap();
        let model = finalize(&outcome.shadow).unwrap();
        Some(Trained {
            shadow: outcome.shadow,
            model,
            test,
        })
    })
    .as_ref()
}

fn subset(t: &Trained) -> EncodedSet {
    t.test.truncated(2000)
}

#[test]
fn dataset_shapes() {
    let dir = mnist_dir();
    let Ok(train) = load_mnist(&dir, Split::Train) else {
        return;
    };
    let test = load_mnist(&dir, Split::Test).unwrap();
    assert_eq!((train.len(), train.rows(), train.cols()), (60000, 28, 28));
    assert_eq!((test.len(), test.rows(), test.cols()), (10000, 28, 28));
    assert!(train.labels().iter().all(|&l| l < 10));
}

#[test]
fn integer_model_tracks_shadow_model() {
    let Some(t) = trained() else { return };
    let shadow = t.shadow.accuracy(&t.test).unwrap();
    let integer = evaluate(&t.model, &t.test).unwrap();
    assert!(integer > 0.9, "{integer}");
    assert!((shadow - integer).abs() <= 0.01, "shadow {shadow} vs integer {integer}");
}

#[test]
fn export_round_trip_is_lossless() {
    let Some(t) = trained() else { return };
    let bytes = encode_model(&t.model);
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, t.model);
    assert_eq!(encode_model(&back), bytes);
}

#[test]
fn noisy_crossbar_stays_close_to_digital() {
    let Some(t) = trained() else { return };
    let set = subset(t);
    let digital = evaluate(&t.model, &set).unwrap();
    let xbar = CrossbarModel::map(&t.model, &DeviceModel::new(1.0, 0.05, 0.02, 1).unwrap());
    let analog = evaluate(&xbar, &set).unwrap();
    assert!(
        (digital - analog).abs() <= 0.02,
        "digital {digital} vs crossbar {analog}"
    );
}

#[test]
fn wrong_device_and_wrong_keys() {
    let Some(t) = trained() else { return };
    let set = subset(t);
    let device = PufDevice::from_secret([7; 32]);
    let thief = PufDevice::from_secret([8; 32]);
    let pm = protect(
        &t.model,
        &device,
        Challenge::from_hex("00c0ffee").unwrap(),
        &[SchemeId::RowSwapInv; 3],
        KeyMode::Independent,
    )
    .unwrap();

    let baseline = evaluate(&t.model, &set).unwrap();
    assert_eq!(evaluate(&pm.unlock(&device).unwrap(), &set).unwrap(), baseline);
    let wrong = evaluate(&pm.unlock(&thief).unwrap(), &set).unwrap();
    assert!(wrong <= 0.15, "{wrong}");
    assert!(eval_without_key(&pm, &set).unwrap() <= 0.2);

    let all = pm.key_length_bits();
    let means: Vec<f64> = [1, 8, 64, all]
        .iter()
        .map(|&k| eval_with_wrong_key(&pm, &device, &set, k, 5, 11).unwrap().mean)
        .collect();
    for pair in means.windows(2) {
        assert!(pair[1] <= pair[0], "{means:?}");
    }
    assert!(means[3] <= 0.2, "{means:?}");
}
