use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tca::autoenc::AeModel;
use tca::data::load_idx;
use tca::data::persist::{load_model, peek_kind, save_model};
use tca::data::subset;
use tca::dbn::DbnModel;
use tca::experiments::{load_splits, DataConfig};
use tca::rbm::RbmModel;
use tca::{BaseKind, Error, TcaParams};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist389")
        .join(name)
}

#[test]
fn vendored_idx_files_parse() {
    let ds = load_idx(data("images-idx3-ubyte"), data("labels-idx1-ubyte")).unwrap();
    assert_eq!(ds.len(), 3000);
    assert_eq!(ds.image_shape(), (28, 28));
    assert_eq!(ds.dim(), 784);
    assert_eq!(ds.classes(), &[3, 8, 9]);
    assert!(ds.images().iter().all(|&v| (0.0..=1.0).contains(&v)));
    for c in [3u8, 8, 9] {
        assert_eq!(ds.labels().iter().filter(|&&l| l == c).count(), 1000);
    }
}

#[test]
fn splits_are_disjoint_balanced_and_dithered() {
    let cfg = DataConfig {
        images: data("images-idx3-ubyte"),
        labels: data("labels-idx1-ubyte"),
        per_class: 50,
        ..DataConfig::default()
    };
    let (train, held_out) = load_splits(&cfg).unwrap();
    assert_eq!((train.len(), held_out.len()), (150, 150));
    let raw = load_idx(&cfg.images, &cfg.labels).unwrap();
    let clean = subset(&raw, &[3, 8, 9], 50, 0).unwrap();
    assert_eq!(clean.labels(), train.labels());
    // dithering perturbs pixels but keeps them in [0, 1]
    assert_ne!(clean.images(), train.images());
    assert!(train.images().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let again = load_splits(&cfg).unwrap();
    assert_eq!(again.0.images(), train.images());
    assert_eq!(again.1.images(), held_out.images());
}

#[test]
fn truncated_and_mislabelled_idx_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = fs::read(data("images-idx3-ubyte")).unwrap();
    let cut = dir.path().join("cut");
    fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let e = load_idx(&cut, data("labels-idx1-ubyte")).unwrap_err();
    assert!(matches!(e, Error::Truncated { .. }), "{e}");

    let swapped = load_idx(data("labels-idx1-ubyte"), data("images-idx3-ubyte")).unwrap_err();
    assert!(matches!(swapped, Error::BadMagic { .. }), "{swapped}");

    let missing = load_idx(dir.path().join("absent"), data("labels-idx1-ubyte")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

fn tiny_rbm(rng: &mut ChaCha8Rng, visible: usize, hidden: usize) -> RbmModel {
    use rand::Rng;
    let w = Array2::from_shape_fn((visible, hidden), |_| rng.random_range(-0.5..0.5));
    let a = Array1::from_shape_fn(visible, |_| rng.random_range(-0.5..0.5));
    let b = Array1::from_shape_fn(hidden, |_| rng.random_range(-0.5..0.5));
    let t = TcaParams::new(
        BaseKind::Ted,
        Array2::from_shape_fn((hidden, 3), |_| rng.random_range(-1.0..1.0)),
        Array2::from_shape_fn((hidden, 3), |_| rng.random_range(-1.0..1.0)),
    )
    .unwrap();
    RbmModel::new(w, a, b, BaseKind::Ted, t).unwrap()
}

#[test]
fn model_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let rbm = tiny_rbm(&mut rng, 6, 4);
    let p = dir.path().join("rbm.tcam");
    save_model(&p, &rbm).unwrap();
    assert_eq!(peek_kind(&p).unwrap(), "rbm");
    assert_eq!(load_model::<RbmModel>(&p).unwrap(), rbm);

    let stack = tiny_rbm(&mut rng, 6, 4);
    let top = tiny_rbm(&mut rng, 4 + 3, 5);
    let dbn = DbnModel::new(vec![stack], top, vec![3, 8, 9]).unwrap();
    let p = dir.path().join("dbn.tcam");
    save_model(&p, &dbn).unwrap();
    assert_eq!(peek_kind(&p).unwrap(), "dbn");
    assert_eq!(load_model::<DbnModel>(&p).unwrap(), dbn);

    let ae = AeModel::init(&[6, 3, 6], 1, BaseKind::Ted, 2, None, &mut rng).unwrap();
    let p = dir.path().join("aec.tcam");
    save_model(&p, &ae).unwrap();
    assert_eq!(peek_kind(&p).unwrap(), "aec");
    let back: AeModel = load_model(&p).unwrap();
    assert_eq!(back, ae);

    // loading under the wrong kind is a schema error
    assert!(matches!(load_model::<RbmModel>(&p), Err(Error::Schema(_))));
}

#[test]
fn model_file_version_and_corruption_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.tcam");
    let t = TcaParams::identity(BaseKind::SigmoidBernoulli, 2, 2).unwrap();
    save_model(&p, &t).unwrap();
    let text = fs::read_to_string(&p).unwrap();

    fs::write(&p, text.replacen("v1", "v9", 1)).unwrap();
    assert!(matches!(
        load_model::<TcaParams>(&p),
        Err(Error::Version(_))
    ));

    let cut: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
    fs::write(&p, cut).unwrap();
    assert!(load_model::<TcaParams>(&p).is_err());
}
