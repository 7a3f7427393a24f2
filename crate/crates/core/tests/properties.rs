use autodiff::{DType, Rng, Tensor};
use fcfp::coords::{bilinear_sample, center_of, nearest_index, nearest_sample, pixel_center, Coord};
use fcfp::data::{Dataset, SyntheticSpec};
use fcfp::io::checkpoint::{decode, encode, Entry};
use fcfp::io::netpbm::{encode_pgm, parse_pgm, GrayImage};
use fcfp::metrics::{dice_score, hd95};
use fcfp::pyramid::{pa_sample, subcell_coords, subcell_offsets, voting_weights};
use fcfp::query::{QueryQuadruple, TauConfig};
use proptest::prelude::*;

fn random_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    rng.uniform_tensor(&[c, h, w], 1.0)
}

proptest! {
    #[test]
    fn nearest_is_idempotent_at_centers(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let map = random_map(&mut rng, 2, h, w);
        let (r, c) = (rng.below(h), rng.below(w));
        let s = nearest_sample(&map, center_of(r, c, h, w));
        prop_assert_eq!((s.row, s.col), (r, c));
        prop_assert_eq!(s.p_star, center_of(r, c, h, w));
        let again = nearest_sample(&map, s.p_star);
        prop_assert_eq!(again.p_star, s.p_star);
    }

    #[test]
    fn nearest_index_minimizes_distance(v in -1.0f64..=1.0, n in 1usize..40) {
        let i = nearest_index(v, n);
        let d = (pixel_center(i, n) - v).abs();
        for j in 0..n {
            prop_assert!(d <= (pixel_center(j, n) - v).abs() + 1e-12);
        }
    }

    #[test]
    fn bilinear_of_constant_is_constant(h in 1usize..8, w in 1usize..8, k in -5.0f64..5.0, x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let map = Tensor::full([1, h, w], k);
        let v = bilinear_sample(&map, Coord::new(x, y));
        prop_assert!((v[0] - k).abs() <= 1e-12);
    }

    #[test]
    fn subcells_tile_the_cell(w in 1e-3f64..2.0, h in 1e-3f64..2.0, s in 1usize..5) {
        let offs = subcell_offsets(w, h, s);
        prop_assert_eq!(offs.len(), s * s);
        let mx: f64 = offs.iter().map(|o| o.0).sum::<f64>() / offs.len() as f64;
        let my: f64 = offs.iter().map(|o| o.1).sum::<f64>() / offs.len() as f64;
        prop_assert!(mx.abs() < 1e-12 && my.abs() < 1e-12);
        prop_assert!(offs.iter().all(|o| o.0.abs() < w / 2.0 && o.1.abs() < h / 2.0));
    }

    #[test]
    fn voting_weights_normalize_and_follow_permutations(
        codes in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 3), 4),
        shift in 1usize..4,
    ) {
        let a = voting_weights(&codes);
        let sum: f64 = a.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let mut rotated = codes.clone();
        rotated.rotate_left(shift);
        let b = voting_weights(&rotated);
        for i in 0..4 {
            prop_assert!((b[i] - a[(i + shift) % 4]).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregated_code_and_coordinate(
        h in 2usize..16, w in 2usize..16, x in -1.0f64..1.0, y in -1.0f64..1.0,
        cw in 0.01f64..1.0, ch in 0.01f64..1.0, seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let map = random_map(&mut rng, 3, h, w);
        let p = Coord::new(x, y);
        let r = pa_sample(&map, p, (cw, ch), 2, true);
        let subs: Vec<_> = subcell_coords(p, cw, ch, 2).into_iter().map(|q| nearest_sample(&map, q)).collect();
        for c in 0..3 {
            let mean = subs.iter().map(|s| s.z_star[c]).sum::<f64>() / 4.0;
            prop_assert!((r.z_pa[c] - mean).abs() < 1e-12);
        }
        let (lo_x, hi_x) = subs.iter().fold((f64::MAX, f64::MIN), |a, s| (a.0.min(s.p_star.x), a.1.max(s.p_star.x)));
        let (lo_y, hi_y) = subs.iter().fold((f64::MAX, f64::MIN), |a, s| (a.0.min(s.p_star.y), a.1.max(s.p_star.y)));
        prop_assert!(r.p_pa.x >= lo_x - 1e-12 && r.p_pa.x <= hi_x + 1e-12);
        prop_assert!(r.p_pa.y >= lo_y - 1e-12 && r.p_pa.y <= hi_y + 1e-12);
    }

    #[test]
    fn queries_stay_in_open_ranges(
        raw in prop::collection::vec(-1e4f64..1e4, 12),
        tau1 in -5.0f64..0.0, tau2 in 0.1f64..3.0,
    ) {
        let tau = TauConfig::symmetric(tau1, tau2);
        let (lo, hi) = tau.w_range();
        for q in QueryQuadruple::from_raw(&raw, 3, &tau) {
            prop_assert!(q.dx > -1.0 && q.dx < 1.0 && q.dy > -1.0 && q.dy < 1.0);
            prop_assert!(q.w > lo && q.w < hi && q.h > lo && q.h < hi, "{q:?}");
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..5), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let entries: Vec<Entry> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i % 2 == 0 {
                    Entry::from_tensor(&format!("t{i}"), &rng.uniform_tensor::<f32>(s, 3.0))
                } else {
                    Entry::from_tensor(&format!("t{i}"), &rng.uniform_tensor::<f64>(s, 3.0))
                }
            })
            .collect();
        let bytes = encode(&entries).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &entries);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
        prop_assert_eq!(back[0].dtype, DType::F32);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let img = GrayImage { width: w, height: h, pixels: (0..w * h).map(|_| rng.below(256) as u8).collect() };
        prop_assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn metric_ranges_and_symmetry(bits in prop::collection::vec(any::<(bool, bool)>(), 48)) {
        let a: Vec<bool> = bits.iter().map(|b| b.0).collect();
        let b: Vec<bool> = bits.iter().map(|b| b.1).collect();
        let d = dice_score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice_score(&b, &a));
        prop_assert_eq!(dice_score(&a, &a), 1.0);
        let h = hd95(&a, &b, 6, 8);
        prop_assert!(h >= 0.0);
        prop_assert_eq!(h, hd95(&b, &a, 6, 8));
        prop_assert_eq!(hd95(&a, &a, 6, 8), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dataset_regenerates_bitwise(seed in any::<u64>(), classes in 2usize..5) {
        let spec = SyntheticSpec { seed, count: 3, size: 32, classes, ..SyntheticSpec::default() };
        let a = Dataset::generate(&spec).unwrap();
        let b = Dataset::generate(&spec).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            prop_assert_eq!(&x.pixels, &y.pixels);
            prop_assert_eq!(&x.mask, &y.mask);
            prop_assert!(x.mask.iter().all(|&m| (m as usize) < classes));
        }
    }
}
