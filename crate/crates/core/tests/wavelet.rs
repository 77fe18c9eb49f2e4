use gseal_core::renderer::Image;
use gseal_core::wavelet::{dwt2, dwt2_with, idwt2, ll, ll_levels, Normalization, SubbandSet};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f64..2.0, 3 * h * w).prop_map(move |d| Image::new(h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn perfect_reconstruction(img in image(8, 12)) {
        for norm in [Normalization::Averaging, Normalization::Orthonormal] {
            let back = idwt2(&dwt2_with(&img, norm).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&img) <= 1e-12);
        }
    }

    #[test]
    fn ll_is_linear(x in image(6, 4), y in image(6, 4), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mix = Image::new(6, 4, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (lx, ly, lm) = (ll(&x).unwrap(), ll(&y).unwrap(), ll(&mix).unwrap());
        for i in 0..lm.data.len() {
            prop_assert!((lm.data[i] - a * lx.data[i] - b * ly.data[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn orthonormal_variant_preserves_energy(img in image(4, 8)) {
        let e: f64 = img.data.iter().map(|v| v * v).sum();
        let s = dwt2_with(&img, Normalization::Orthonormal).unwrap();
        prop_assert!((s.energy() - e).abs() <= 1e-9 * e.max(1.0));
    }

    #[test]
    fn synthesis_is_linear(x in image(4, 4), y in image(4, 4)) {
        let (sx, sy) = (dwt2(&x).unwrap(), dwt2(&y).unwrap());
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + q).collect::<Vec<_>>();
        let sum = SubbandSet {
            ll: add(&sx.ll, &sy.ll),
            lh: add(&sx.lh, &sy.lh),
            hl: add(&sx.hl, &sy.hl),
            hh: add(&sx.hh, &sy.hh),
            ..sx.clone()
        };
        let lhs = idwt2(&sum).unwrap();
        let (ix, iy) = (idwt2(&sx).unwrap(), idwt2(&sy).unwrap());
        for i in 0..lhs.data.len() {
            prop_assert!((lhs.data[i] - ix.data[i] - iy.data[i]).abs() <= 1e-9);
        }
    }
}

#[test]
fn constant_image_has_no_detail() {
    let img = Image::filled(8, 8, [0.3, 0.7, 1.0]);
    let s = dwt2(&img).unwrap();
    assert!(s.lh.iter().chain(&s.hl).chain(&s.hh).all(|&v| v == 0.0));
    assert_eq!(s.ll_image(), Image::filled(4, 4, [0.3, 0.7, 1.0]));
    assert_eq!(ll_levels(&img, 2).unwrap(), Image::filled(2, 2, [0.3, 0.7, 1.0]));
}

#[test]
fn constant_ll_and_zero_details_reconstruct_constant() {
    let s = dwt2(&Image::filled(4, 6, [0.0; 3])).unwrap();
    let s = SubbandSet { ll: vec![0.4; s.ll.len()], ..s };
    assert_eq!(idwt2(&s).unwrap(), Image::filled(4, 6, [0.4; 3]));
}
