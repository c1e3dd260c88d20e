use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use weaklp::covering::{admissible_intervals, check_vitali, verify_5j_cover, vitali_select, weighted_energy, PiecewiseConstantField};
use weaklp::maximal::{disk_rect_area, hl_maximal, GriddedFunction};
use weaklp::quadrature::k_closed_form;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vitali_cover_and_energy_chain(seed in any::<u64>(), cells in 4usize..48, gamma in 0.25f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = PiecewiseConstantField::random(cells, 4, &mut rng);
        let family = admissible_intervals(&f, gamma).unwrap();
        let cover = vitali_select(&family);
        prop_assert!(check_vitali(&family, &cover).passed());
        prop_assert_eq!(verify_5j_cover(&f, gamma, &cover).violations, 0);
        prop_assert!(weighted_energy(&f, gamma, &cover).chain_holds());
    }

    #[test]
    fn disk_rect_area_is_bounded_and_additive(
        cx in -2.0f64..2.0, cy in -2.0f64..2.0, r in 0.01f64..3.0,
        x0 in -2.0f64..0.0, w in 0.1f64..2.0, split in 0.0f64..1.0, y0 in -2.0f64..0.0, hgt in 0.1f64..2.0,
    ) {
        let (x1, y1) = (x0 + w, y0 + hgt);
        let xm = x0 + split * w;
        let whole = disk_rect_area([cx, cy], r, x0, x1, y0, y1);
        prop_assert!(whole >= -1e-12);
        prop_assert!(whole <= (std::f64::consts::PI * r * r).min(w * hgt) + 1e-12);
        let parts = disk_rect_area([cx, cy], r, x0, xm, y0, y1) + disk_rect_area([cx, cy], r, xm, x1, y0, y1);
        prop_assert!((whole - parts).abs() <= 1e-10 * (1.0 + whole));
    }

    #[test]
    fn maximal_function_dominates_and_is_sublinear(
        a in prop::collection::vec(-3.0f64..3.0, 3..40),
        shift in prop::collection::vec(-3.0f64..3.0, 40),
    ) {
        let n = a.len();
        let b: Vec<f64> = shift[..n].to_vec();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let grid = |v: Vec<f64>| GriddedFunction::new(vec![0.0], 0.125, vec![n], v).unwrap();
        let (ma, mb, ms) = (hl_maximal(&grid(a.clone())), hl_maximal(&grid(b)), hl_maximal(&grid(sum)));
        for i in 0..n {
            prop_assert!(ma.values[i] + 1e-12 >= a[i].abs());
            prop_assert!(ms.values[i] <= ma.values[i] + mb.values[i] + 1e-12);
        }
    }

    #[test]
    fn k_constant_is_positive_and_decreasing_in_dim(p in 1.0f64..6.0) {
        for dim in 1..4 {
            let (k, next) = (k_closed_form(p, dim), k_closed_form(p, dim + 1));
            prop_assert!(k > 0.0 && next > 0.0);
            // Averages of |cos|^p over the sphere shrink as N grows.
            prop_assert!(next / weaklp::quadrature::sphere_area(dim + 1) < k / weaklp::quadrature::sphere_area(dim));
        }
    }
}
