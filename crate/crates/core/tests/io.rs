mod common;

use common::*;
use vdt_core::adapters::checkpoint::Checkpoint;
use vdt_core::io::{read_json, write_dataset, write_json, DatasetManifest, ImageSet, LoadedDataset};
use vdt_core::{split_base_new, Error};

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1);
    let bank = random_bank(&mut r, 3, 4, 8);
    let test = random_features(&mut r, 9, &bank);
    let train = random_features(&mut r, 6, &bank);
    let split = split_base_new(bank.class_names(), "toy", 0).unwrap();
    let path = write_dataset(dir.path(), "toy", &bank, &test, Some(&train), Some(&split)).unwrap();

    let ds = LoadedDataset::open(&path).unwrap();
    ds.validate().unwrap();
    assert_eq!(ds.bank().unwrap(), bank);
    assert_eq!(ds.images(ImageSet::Test).unwrap(), test);
    assert_eq!(ds.images(ImageSet::Train).unwrap(), train);
    assert_eq!(ds.split().unwrap(), Some(split));
}

#[test]
fn ragged_banks_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(2);
    let bank = loop {
        let b = random_bank(&mut r, 4, 5, 6);
        if b.blocks().iter().any(|x| x.len() != b.block(0).len()) {
            break b;
        }
    };
    let test = random_features(&mut r, 4, &bank);
    let path = write_dataset(dir.path(), "toy", &bank, &test, None, None).unwrap();
    let ds = LoadedDataset::open(&path).unwrap();
    assert_eq!(ds.bank().unwrap().num_classes(), 4);
    // without a train set the test images double as the few-shot pool
    assert_eq!(ds.images(ImageSet::Train).unwrap(), test);
}

#[test]
fn text_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(3);
    let bank = attributed_bank(&mut r, 2, 3, 4);
    let test = random_features(&mut r, 2, &bank);
    let path = write_dataset(dir.path(), "toy", &bank, &test, None, None).unwrap();
    let mut m: DatasetManifest = read_json(&path).unwrap();
    m.sentences[1].texts.pop();
    m.sentences[1].attributes = None;
    write_json(&path, &m).unwrap();
    let err = LoadedDataset::open(&path).unwrap().bank().unwrap_err();
    assert!(matches!(err, Error::DimMismatch { .. }), "{err:?}");
}

#[test]
fn missing_embedding_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let bank = random_bank(&mut r, 2, 3, 4);
    let test = random_features(&mut r, 2, &bank);
    let path = write_dataset(dir.path(), "toy", &bank, &test, None, None).unwrap();
    std::fs::remove_file(dir.path().join("sentences_0001.emb")).unwrap();
    let err = LoadedDataset::open(&path).unwrap().bank().unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)), "{err:?}");
}

#[test]
fn checkpoint_round_trip_rounds_to_storage() {
    let dir = tempfile::tempdir().unwrap();
    let p = random_params(8, 2, 5);
    let path = dir.path().join("adapter.vdta");
    Checkpoint::attention(p.clone(), 5, 0.3).save(&path).unwrap();
    let (back, beta) = Checkpoint::load(&path).unwrap().into_attention().unwrap();
    assert_eq!(beta, 0.3);
    assert_eq!(back.heads, 2);
    for (a, b) in back.w_q.iter().zip(&p.w_q) {
        assert_eq!(*a, *b as f32 as f64);
    }
}
