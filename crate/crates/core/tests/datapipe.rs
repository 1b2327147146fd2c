use image::{Rgb, RgbImage};
use proptest::prelude::*;
use psyn_core::data::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn disk(size: u32, cx: f64, cy: f64, r: f64) -> Mask {
    Mask::from_fn(size, size, |x, y| {
        (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r
    })
}

/// Brute force: distance from every pixel to every set pixel.
fn dilate_oracle(m: &Mask, r: u32) -> Mask {
    let set: Vec<(i64, i64)> = m.iter_set().map(|(x, y)| (x as i64, y as i64)).collect();
    let r2 = (r as i64).pow(2);
    Mask::from_fn(m.width(), m.height(), |x, y| {
        set.iter()
            .any(|&(sx, sy)| (sx - x as i64).pow(2) + (sy - y as i64).pow(2) <= r2)
    })
}

fn random_mask(w: u32, h: u32, p: f64, seed: u64) -> Mask {
    let mut r = rng(seed);
    Mask::from_fn(w, h, |_, _| r.random_bool(p))
}

#[test]
fn single_pixel_dilated_by_10_has_317_pixels() {
    // lattice points with x²+y² <= 100
    let lattice = (-10i64..=10)
        .flat_map(|y| (-10i64..=10).map(move |x| (x, y)))
        .filter(|(x, y)| x * x + y * y <= 100)
        .count();
    assert_eq!(lattice, 317);
    let mut m = Mask::new(41, 41);
    m.set(20, 20, true);
    assert_eq!(dilate_mask(&m, 10).count(), lattice);
}

#[test]
fn dilation_radius_zero_is_identity() {
    let m = random_mask(20, 15, 0.2, 1);
    assert_eq!(dilate_mask(&m, 0), m);
}

#[test]
fn dilation_matches_brute_force() {
    for (seed, r) in [(1, 1), (2, 3), (3, 5), (4, 10)] {
        let m = random_mask(30, 24, 0.03, seed);
        assert_eq!(dilate_mask(&m, r), dilate_oracle(&m, r), "seed {seed} radius {r}");
    }
    let blob = disk(48, 20.0, 25.0, 9.0);
    assert_eq!(dilate_mask(&blob, 10), dilate_oracle(&blob, 10));
}

#[test]
fn dilation_semigroup_within_discretization() {
    for (size, r, a, b) in [(64u32, 6.0, 4u32, 6u32), (160, 40.0, 4, 6), (256, 60.0, 3, 7)] {
        let c = size as f64 / 2.0;
        let m = disk(size, c, c, r);
        let twice = dilate_mask(&dilate_mask(&m, a), b);
        let once = dilate_mask(&m, a + b);
        // on the lattice the composite can only lose boundary pixels (triangle inequality),
        // and never more than one pixel deep
        assert!(once.contains(&twice).unwrap());
        assert!(dilate_mask(&twice, 1).contains(&once).unwrap());
        let j = twice.jaccard(&once).unwrap();
        // the lost one-pixel rim is only negligible for full-size polyps
        if size == 256 {
            assert!(j >= 0.99, "jaccard {j}");
        }
    }
}

#[test]
fn assign_values_34() {
    let va = assign_values(34).unwrap();
    let v = va.values();
    assert_eq!(v.len(), 34);
    assert_eq!((v[0], v[33]), (0, 255));
    assert_eq!(v[17], (255.0f64 * 17.0 / 33.0).round() as u8);
    assert_eq!(v[17], 131);
    assert!(v.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(assign_values(2).unwrap().values(), &[0, 255]);
    assert!(assign_values(1).is_err());
    assert!(assign_values(257).is_err());
    assert_eq!(assign_values(256).unwrap().values()[200], 200);
}

#[test]
fn augment_identity_and_full_turn() {
    let m = disk(64, 28.0, 36.0, 10.0);
    assert_eq!(augment_mask(&m, &AugmentParams::IDENTITY).unwrap(), m);
    let turn = AugmentParams {
        rotation_deg: 360.0,
        ..AugmentParams::IDENTITY
    };
    assert!(augment_mask(&m, &turn).unwrap().jaccard(&m).unwrap() >= 0.95);
}

#[test]
fn augment_scale_two_quadruples_area() {
    let m = disk(64, 32.0, 32.0, 5.0);
    let p = AugmentParams {
        scale: 2.0,
        ..AugmentParams::IDENTITY
    };
    let ratio = augment_mask(&m, &p).unwrap().count() as f64 / m.count() as f64;
    assert!((ratio - 4.0).abs() <= 0.6, "area ratio {ratio}");
}

#[test]
fn augment_random_is_seeded_and_nonempty() {
    let m = disk(64, 32.0, 32.0, 8.0);
    let a = augment_mask_random(&m, &AugmentRanges::default(), &mut rng(3)).unwrap();
    let b = augment_mask_random(&m, &AugmentRanges::default(), &mut rng(3)).unwrap();
    assert_eq!(a, b);
    for seed in 0..50 {
        assert!(!augment_mask_random(&m, &AugmentRanges::default(), &mut rng(seed)).unwrap().is_empty());
    }
    assert!(augment_mask_random(&Mask::new(8, 8), &AugmentRanges::default(), &mut rng(0)).is_err());
}

#[test]
fn placement_against_empty_polyp_takes_first_draw() {
    let shape = disk(10, 5.0, 5.0, 4.0);
    let polyp = Mask::new(32, 32);
    let spec = place_nonoverlapping(&shape, &polyp, &mut rng(0), 1).unwrap();
    let mut r = rng(0);
    let expect = (r.random_range(0..=22u32), r.random_range(0..=22u32));
    assert_eq!(spec.offset, expect);
}

#[test]
fn placement_impossible_is_an_error() {
    let shape = disk(10, 5.0, 5.0, 4.0);
    let full = Mask::from_fn(32, 32, |_, _| true);
    let err = place_nonoverlapping(&shape, &full, &mut rng(0), DEFAULT_PLACEMENT_ATTEMPTS).unwrap_err();
    assert!(err.to_string().contains("shrink"));
    assert!(place_nonoverlapping(&disk(40, 20.0, 20.0, 15.0), &Mask::new(32, 32), &mut rng(0), 10).is_err());
}

#[test]
fn ten_thousand_placements_never_overlap() {
    let shape = disk(8, 4.0, 4.0, 3.5);
    let half = Mask::from_fn(64, 64, |x, _| x < 32);
    let mut r = rng(9);
    for _ in 0..10_000 {
        let spec = place_nonoverlapping(&shape, &half, &mut r, DEFAULT_PLACEMENT_ATTEMPTS).unwrap();
        let placed = spec.frame_mask(64, 64).unwrap();
        assert_eq!(placed.intersection_count(&half).unwrap(), 0);
    }
}

#[test]
fn compose_overwrites_only_the_region() {
    let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8 * 10, y as u8 * 10, 77]));
    let spec = MaskSpec::new(disk(6, 3.0, 3.0, 2.5), 255, (5, 7)).unwrap();
    let out = compose_condition(&img, &spec).unwrap();
    let region = spec.frame_mask(16, 16).unwrap();
    for (x, y, px) in out.enumerate_pixels() {
        if region.get(x, y) {
            assert_eq!(px.0, [255; 3]);
        } else {
            assert_eq!(px, img.get_pixel(x, y));
        }
    }
    let off = MaskSpec::new(disk(6, 3.0, 3.0, 2.5), 0, (12, 0)).unwrap();
    assert!(compose_condition(&img, &off).is_err());
    assert!(MaskSpec::new(Mask::new(3, 3), 10, (0, 0)).is_err());
}

#[test]
fn fixtures_cycle_ids_and_cover_blobs() {
    let f = make_fixtures(8, 64, 4, 1).unwrap();
    assert_eq!(f.len(), 8);
    let ids: Vec<usize> = f.iter().map(|s| s.polyp_id).collect();
    assert_eq!(ids, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    for s in &f {
        s.validate().unwrap();
        // every pixel inside the mask carries the blob's red channel, every outside one does not
        for (x, y, px) in s.image.enumerate_pixels() {
            if s.mask.get(x, y) {
                assert!(px[0] >= 200, "mask pixel not on blob");
            }
        }
    }
    assert_eq!(make_fixtures(8, 64, 4, 1).unwrap(), f);
    assert_ne!(make_fixtures(8, 64, 4, 2).unwrap(), f);
    assert!(make_fixtures(0, 64, 4, 1).is_err());
}

fn luminance(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

#[test]
fn fixture_blob_contrast_exceeds_20() {
    for s in make_fixtures(32, 32, 8, 5).unwrap() {
        let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
        for (x, y, px) in s.image.enumerate_pixels() {
            if s.mask.get(x, y) {
                a += luminance(px);
                na += 1;
            } else {
                b += luminance(px);
                nb += 1;
            }
        }
        let diff = a / na as f64 - b / nb as f64;
        assert!(diff > 20.0, "{}: contrast {diff}", s.source_name);
    }
}

#[test]
fn p2n_pairs_differ_only_inside_region_off_polyp() {
    let f = make_fixtures(4, 32, 4, 3).unwrap();
    let mut r = rng(4);
    for trial in 0..1000 {
        let s = &f[trial % 4];
        let pair = build_p2n_sample(s, &mut r).unwrap();
        assert_eq!(pair.target, s.image);
        assert_eq!(pair.region.intersection_count(&s.mask).unwrap(), 0);
        for (x, y, px) in pair.condition.enumerate_pixels() {
            if pair.region.get(x, y) {
                assert_eq!(px.0, [255; 3]);
            } else {
                assert_eq!(px, s.image.get_pixel(x, y));
            }
        }
    }
}

#[test]
fn n2p_values_follow_identity() {
    let f = make_fixtures(8, 32, 4, 3).unwrap();
    let va = assign_values(34).unwrap();
    for s in &f {
        let pair = build_n2p_sample(s, &va).unwrap();
        let v = va.get(s.polyp_id).unwrap();
        for (x, y) in s.mask.iter_set() {
            assert_eq!(pair.condition.get_pixel(x, y).0, [v; 3]);
        }
    }
    let mut s = f[0].clone();
    s.polyp_id = 33;
    let pair = build_n2p_sample(&s, &va).unwrap();
    let (x, y) = s.mask.iter_set().next().unwrap();
    assert_eq!(pair.condition.get_pixel(x, y).0, [255; 3]);
    s.polyp_id = 34;
    assert!(build_n2p_sample(&s, &va).is_err());
}

#[test]
fn dataset_roundtrip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let f = make_fixtures(6, 32, 3, 8).unwrap();
    let (images, masks, ids) = write_dataset(&f, dir.path()).unwrap();
    let back = load_dataset(&images, &masks, Some(&ids)).unwrap();
    assert_eq!(back, f);
    let no_ids = load_dataset(&images, &masks, None).unwrap();
    assert_eq!(no_ids.iter().map(|s| s.polyp_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);

    let bad_map = dir.path().join("bad.csv");
    std::fs::write(&bad_map, "filename,polyp_id\nfixture_0000.png,0\nghost.png,1\n").unwrap();
    let err = load_dataset(&images, &masks, Some(&bad_map)).unwrap_err();
    assert!(err.to_string().contains("ghost.png"));

    std::fs::remove_file(masks.join("fixture_0002.png")).unwrap();
    let err = load_dataset(&images, &masks, None).unwrap_err();
    assert!(err.to_string().contains("fixture_0002.png"));

    let empty = tempfile::tempdir().unwrap();
    assert!(load_dataset(empty.path(), empty.path(), None).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dilation_is_superset(seed in any::<u64>(), r in 0u32..6) {
        let m = random_mask(20, 20, 0.05, seed);
        let d = dilate_mask(&m, r);
        prop_assert!(d.contains(&m).unwrap());
        prop_assert_eq!(d, dilate_oracle(&m, r));
    }

    #[test]
    fn value_assignment_is_monotone(k in 2usize..=256) {
        let va = assign_values(k).unwrap();
        let v = va.values();
        prop_assert_eq!(v.len(), k);
        prop_assert_eq!(v[0], 0);
        prop_assert_eq!(v[k - 1], 255);
        prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn p2n_construction_is_reproducible(seed in any::<u64>()) {
        let f = make_fixtures(1, 32, 1, 0).unwrap();
        let a = build_p2n_sample(&f[0], &mut rng(seed)).unwrap();
        let b = build_p2n_sample(&f[0], &mut rng(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
