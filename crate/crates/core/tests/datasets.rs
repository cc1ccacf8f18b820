use std::fs;
use std::path::Path;

use cutnmix::datasets::cifar::{
    encode, read_cifar10, read_cifar100, CifarLayout, CIFAR100_TEST_FILE, CIFAR100_TRAIN_FILE,
    CIFAR100_TRAIN_RECORDS, CIFAR10_TEST_FILE, CIFAR10_TRAIN_FILES, IMAGE_BYTES, RECORDS_PER_FILE,
};
use cutnmix::datasets::{export, make_synthetic, DatasetKind, DatasetSpec, Split, SyntheticParams};
use cutnmix::Error;

/// `n` synthetic records, repeating a small rendered set.
fn tiled(n: usize, num_classes: usize, coarse: bool) -> Split {
    let params = SyntheticParams { n_train: 200, n_test: 1, seed: 9, difficulty: 0.6 };
    let (base, _) = make_synthetic(num_classes, &params).unwrap();
    let mut s = Split::default();
    for i in 0..n {
        let k = i % base.len();
        s.pixels.extend_from_slice(base.image_bytes(k));
        s.labels.push(base.labels[k]);
    }
    if coarse {
        s.coarse = Some(s.labels.iter().map(|l| l / 5).collect());
    }
    s
}

fn write_cifar10(dir: &Path) -> Vec<Vec<u8>> {
    let mut files = Vec::new();
    for (i, name) in CIFAR10_TRAIN_FILES.iter().chain([&CIFAR10_TEST_FILE]).enumerate() {
        let mut split = tiled(RECORDS_PER_FILE, 10, false);
        split.pixels.iter_mut().for_each(|p| *p = p.wrapping_add(i as u8));
        let bytes = encode(&split, CifarLayout::Cifar10);
        fs::write(dir.join(name), &bytes).unwrap();
        files.push(bytes);
    }
    files
}

#[test]
fn cifar10_files_have_exact_sizes_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_cifar10(dir.path());
    for f in &files {
        assert_eq!(f.len(), 30_730_000);
    }
    let (train, test) = read_cifar10(dir.path()).unwrap();
    assert_eq!((train.len(), test.len()), (50_000, 10_000));
    let reencoded = encode(&train, CifarLayout::Cifar10);
    assert_eq!(reencoded, files[..5].concat());
    assert_eq!(encode(&test, CifarLayout::Cifar10), files[5]);
}

#[test]
fn cifar10_reader_rejects_wrong_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_cifar10(dir.path());
    let victim = dir.path().join(CIFAR10_TRAIN_FILES[2]);
    for len in [files[2].len() - 3073, files[2].len() - 1, files[2].len() + 1] {
        let mut b = files[2].clone();
        b.resize(len, 0);
        fs::write(&victim, &b).unwrap();
        match read_cifar10(dir.path()) {
            Err(Error::Format { path, .. }) => assert_eq!(path, victim),
            other => panic!("length {len}: {other:?}"),
        }
    }
}

#[test]
fn cifar100_files_have_exact_sizes_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("cifar-100-binary");
    fs::create_dir(&nested).unwrap();
    let train = tiled(CIFAR100_TRAIN_RECORDS, 100, true);
    let test = tiled(RECORDS_PER_FILE, 100, true);
    let train_bytes = encode(&train, CifarLayout::Cifar100);
    let test_bytes = encode(&test, CifarLayout::Cifar100);
    assert_eq!(train_bytes.len(), 153_700_000);
    assert_eq!(test_bytes.len(), 30_740_000);
    fs::write(nested.join(CIFAR100_TRAIN_FILE), &train_bytes).unwrap();
    fs::write(nested.join(CIFAR100_TEST_FILE), &test_bytes).unwrap();

    let (tr, te) = read_cifar100(dir.path()).unwrap();
    assert_eq!(tr, train);
    assert_eq!(te, test);
    assert_eq!(encode(&tr, CifarLayout::Cifar100), train_bytes);

    fs::write(nested.join(CIFAR100_TEST_FILE), &test_bytes[..test_bytes.len() - 3074]).unwrap();
    assert!(matches!(read_cifar100(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn labels_out_of_range_are_rejected() {
    let mut s = tiled(4, 10, false);
    s.labels[3] = 10;
    let bytes = encode(&s, CifarLayout::Cifar10);
    let err = cutnmix::datasets::cifar::decode(&bytes, CifarLayout::Cifar10, 10, Path::new("x")).unwrap_err();
    assert!(err.to_string().contains("record 3"), "{err}");
}

#[test]
fn exported_synthetic_data_loads_back_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        synthetic: SyntheticParams { n_train: 120, n_test: 40, seed: 2, difficulty: 0.6 },
        ..Default::default()
    };
    let (data, _) = spec.load().unwrap();
    for layout in [CifarLayout::Cifar10, CifarLayout::Cifar100] {
        let out = dir.path().join(format!("{layout:?}"));
        export(&data, layout, &out).unwrap();
        let train_len = fs::metadata(out.join("train.bin")).unwrap().len() as usize;
        assert_eq!(train_len, 120 * (layout.label_bytes() + IMAGE_BYTES));
        let back = DatasetSpec {
            kind: DatasetKind::Exported,
            path: Some(out.clone()),
            ..Default::default()
        };
        let (loaded, resolved) = back.load().unwrap();
        assert_eq!(loaded.train.pixels, data.train.pixels);
        assert_eq!(loaded.train.labels, data.train.labels);
        assert_eq!(loaded.test.pixels, data.test.pixels);
        assert_eq!(loaded.test.labels, data.test.labels);
        assert_eq!(loaded.norm, data.norm);
        assert_eq!(resolved.num_classes, 10);
    }
}
