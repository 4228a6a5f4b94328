use eaf_data::{list_ids, load_sample, write_sample_dir, DataError, ModalityKind, ModalityMode};
use eaf_polarimetry::{AolpConvention, IntensityQuad};
use ndarray::{Array2, Array3};

fn constant_quad(h: usize, w: usize, v: f64) -> IntensityQuad {
    let p = || Array3::from_elem((h, w, 3), v);
    IntensityQuad::new(p(), p(), p(), p()).unwrap()
}

#[test]
fn unpolarized_scene_loads_flat() {
    let dir = tempfile::tempdir().unwrap();
    let quad = constant_quad(8, 8, 0.5);
    let label = Array2::<usize>::zeros((8, 8));
    write_sample_dir(dir.path(), "train", "a", &quad, &label).unwrap();
    let s = load_sample(
        dir.path(),
        "train",
        "a",
        ModalityMode::AolpDolp,
        9,
        AolpConvention::S1OverS2,
    )
    .unwrap();
    assert!(s.rgb.iter().all(|&v| (v - 0.5).abs() < 1e-3));
    assert_eq!(s.modality.len(), 2);
    assert_eq!(s.modality[0].kind, ModalityKind::Aolp);
    assert_eq!(s.modality[1].kind, ModalityKind::Dolp);
    assert!(s.modality[0].plane.iter().all(|&v| v.abs() < 1e-3), "aolp");
    assert!(s.modality[1].plane.iter().all(|&v| v.abs() < 1e-3), "dolp");
    assert_eq!(list_ids(dir.path(), "train").unwrap(), vec!["a"]);
}

#[test]
fn label_out_of_range_is_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let quad = constant_quad(4, 4, 0.5);
    let mut label = Array2::<usize>::zeros((4, 4));
    label[[1, 1]] = 9;
    write_sample_dir(dir.path(), "train", "bad", &quad, &label).unwrap();
    let r = load_sample(
        dir.path(),
        "train",
        "bad",
        ModalityMode::Aolp,
        9,
        AolpConvention::S1OverS2,
    );
    assert!(matches!(r, Err(DataError::LabelOutOfRange { id: 9, .. })));
}

#[test]
fn missing_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let quad = constant_quad(4, 4, 0.5);
    let label = Array2::<usize>::zeros((4, 4));
    write_sample_dir(dir.path(), "train", "c", &quad, &label).unwrap();
    std::fs::remove_file(dir.path().join("train/c/i135.png")).unwrap();
    let r = load_sample(
        dir.path(),
        "train",
        "c",
        ModalityMode::Aolp,
        9,
        AolpConvention::S1OverS2,
    );
    match r {
        Err(DataError::MissingFile(p)) => assert!(p.contains("i135.png"), "{p}"),
        other => panic!("expected MissingFile, got {other:?}"),
    }
}
