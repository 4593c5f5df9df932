use mbdcnn::data::*;
use mbdcnn::tensor::Grid;

fn small() -> SyntheticConfig {
    SyntheticConfig {
        num_seg: 12,
        num_cls: 9,
        image_size: 48,
        seed: 5,
        ..SyntheticConfig::default()
    }
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let a = generate_synthetic_dataset(&small()).unwrap();
    let b = generate_synthetic_dataset(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic_dataset(&SyntheticConfig { seed: 6, ..small() }).unwrap();
    assert_ne!(a.seg[0].image, c.seg[0].image);
}

#[test]
fn masks_are_exact_ellipse_membership() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    for (s, l) in ds.seg.iter().zip(&ds.seg_lesions) {
        let n = s.mask.width();
        for (i, &y) in s.mask.values().iter().enumerate() {
            let (row, col) = (i / n, i % n);
            let inside = l.radius2(col as f64 + 0.5, row as f64 + 0.5) <= 1.0;
            assert_eq!(y == 1, inside, "{} pixel {i}", s.id);
        }
        assert!(s.mask.lesion_count() > 0 && s.mask.lesion_count() < n * n);
    }
}

#[test]
fn classes_cycle_and_images_stay_in_range() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    assert_eq!((ds.seg.len(), ds.cls.len()), (12, 9));
    for (i, s) in ds.cls.iter().enumerate() {
        assert_eq!(s.label, i % 3);
        assert_eq!((s.image.height(), s.image.width(), s.image.channels()), (48, 48, 3));
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn lesions_are_darker_than_skin() {
    let ds = generate_synthetic_dataset(&SyntheticConfig { num_seg: 30, ..small() }).unwrap();
    let mut darker = 0;
    for s in &ds.seg {
        let (mut inside, mut outside) = ((0.0, 0), (0.0, 0));
        for (i, &y) in s.mask.values().iter().enumerate() {
            let lum: f32 = (0..3).map(|c| s.image.plane(c)[i]).sum();
            let acc = if y == 1 { &mut inside } else { &mut outside };
            acc.0 += lum as f64;
            acc.1 += 1;
        }
        darker += (inside.0 / (inside.1 as f64) < outside.0 / (outside.1 as f64)) as usize;
    }
    assert!(darker >= 27, "only {darker}/30 lesions darker than background");
}

#[test]
fn invalid_generator_settings_are_config_errors() {
    for bad in [
        SyntheticConfig { num_classes: 4, ..small() },
        SyntheticConfig { image_size: 4, ..small() },
        SyntheticConfig { lesion_axes_range: [0.3, 0.1], ..small() },
        SyntheticConfig { lesion_axes_range: [0.1, 0.6], ..small() },
        SyntheticConfig { noise_level: -1.0, ..small() },
    ] {
        assert_eq!(generate_synthetic_dataset(&bad).unwrap_err().exit_code(), 3);
    }
}

#[test]
fn export_then_load_round_trips() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_seg_dataset(&dir.path().join("seg"), &ds.seg, &ds.class_names).unwrap();
    export_cls_dataset(&dir.path().join("cls"), &ds.cls, &ds.class_names).unwrap();
    let ids = list_image_ids(&dir.path().join("seg")).unwrap();
    let seg = load_seg_dataset(&dir.path().join("seg"), &ids).unwrap();
    assert_eq!(seg.len(), ds.seg.len());
    for (a, b) in seg.iter().zip(&ds.seg) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        // 8-bit storage.
        let err = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6, "{err}");
    }
    let cls = load_cls_dataset(
        &dir.path().join("cls"),
        &dir.path().join("cls").join(LABELS_FILE),
        &ds.class_names,
    )
    .unwrap();
    assert_eq!(cls.iter().map(|s| s.label).collect::<Vec<_>>(), ds.cls.iter().map(|s| s.label).collect::<Vec<_>>());
}

#[test]
fn unknown_class_label_is_an_ingestion_error() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_cls_dataset(dir.path(), &ds.cls, &ds.class_names).unwrap();
    let labels = dir.path().join(LABELS_FILE);
    let text = std::fs::read_to_string(&labels).unwrap().replace("speckled", "melanoma");
    std::fs::write(&labels, text).unwrap();
    assert_eq!(load_cls_dataset(dir.path(), &labels, &ds.class_names).unwrap_err().exit_code(), 5);
}

#[test]
fn warps_keep_mask_and_maps_aligned() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    let config = AugmentationConfig {
        target_size: [32, 32],
        whitening: false,
        ..AugmentationConfig::default()
    };
    for (i, s) in ds.seg.iter().enumerate() {
        // The same mask as a soft map at a coarser resolution must land where
        // the warped mask does.
        let soft = Grid::new(48, 48, s.mask.values().iter().map(|&v| v as f32).collect()).unwrap();
        let coarse = resize_grid(&soft, 24, 24);
        let params = draw_params(&config, &mut augment_rng(1, &s.id, i));
        let w = apply_params(&s.image, &[soft, coarse], Some(&s.mask), &params, [32, 32]);
        let mask = w.mask.unwrap();
        for aux in &w.aux {
            let agree = mask
                .values()
                .iter()
                .zip(aux.values())
                .filter(|(m, a)| (**m == 1) == (**a >= 0.5))
                .count();
            assert!(agree as f64 >= 0.93 * 1024.0, "{}: {agree}/1024", s.id);
        }
    }
}

#[test]
fn identity_draw_only_resizes() {
    let ds = generate_synthetic_dataset(&small()).unwrap();
    let s = &ds.seg[0];
    let w = apply_params(&s.image, &[], Some(&s.mask), &AugmentParams::identity(), [48, 48]);
    assert_eq!(w.image, s.image);
    assert_eq!(w.mask.as_ref(), Some(&s.mask));
}
