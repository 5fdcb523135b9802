use proptest::prelude::*;
use sted::events::{decode_stev, encode_stev, voxelize, Event, EventStream};
use sted::geometry::{pixel_shuffle, pixel_unshuffle, warp_tensor, ImageTensor, Role};
use sted::losses::{l_dblr, l_tv};
use sted::metrics::{bad_pixel_ratio, epe, psnr, ssim};
use sted::tensor::Tensor;

fn tensor(shape: [usize; 4], lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn stream(w: u16, h: u16, t1: u64) -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0..=t1, 0..w, 0..h, any::<bool>()), 0..120).prop_map(move |raw| {
        let mut events: Vec<Event> = raw
            .into_iter()
            .map(|(t, x, y, p)| Event { t, x, y, p: if p { 1 } else { -1 } })
            .collect();
        events.sort_by_key(|e| (e.t, e.y, e.x));
        EventStream::new(w as usize, h as usize, 0, t1, events).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_one_on_identity(a in tensor([1, 3, 12, 12], 0.0, 1.0), b in tensor([1, 3, 12, 12], 0.0, 1.0)) {
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_ignores_common_offset(a in tensor([1, 1, 6, 6], 0.0, 1.0), b in tensor([1, 1, 6, 6], 0.0, 1.0), c in -1.0..1.0f64) {
        let p = psnr(&a, &b, 1.0).unwrap();
        let q = psnr(&a.map(|v| v + c), &b.map(|v| v + c), 1.0).unwrap();
        prop_assert!((p - q).abs() < 1e-6);
    }

    #[test]
    fn losses_are_non_negative(a in tensor([1, 2, 5, 5], -1.0, 1.0), b in tensor([1, 2, 5, 5], -1.0, 1.0)) {
        let d = l_dblr(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(l_dblr(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        prop_assert!(l_tv(&a) >= 0.0);
        prop_assert!((l_tv(&a.map(|v| v + 3.0)) - l_tv(&a)).abs() < 1e-12);
    }

    #[test]
    fn voxel_mass_is_conserved(s in stream(5, 4, 900), bins in 1usize..8) {
        let v = voxelize(&s, bins).unwrap();
        prop_assert!((v.total_mass() - s.polarity_sum() as f64).abs() < 1e-9);
        let flipped = voxelize(&s.flipped(), bins).unwrap();
        prop_assert!((flipped.total_mass() + v.total_mass()).abs() < 1e-9);
    }

    #[test]
    fn stev_round_trip(s in stream(9, 7, 5000)) {
        prop_assert_eq!(decode_stev(&encode_stev(&s)).unwrap(), s);
    }

    #[test]
    fn zero_disparity_warp_is_identity(src in tensor([2, 3, 4, 7], -5.0, 5.0)) {
        let out = warp_tensor(&src, &Tensor::zeros([2, 1, 4, 7])).unwrap();
        prop_assert_eq!(out.data(), src.data());
    }

    #[test]
    fn warp_is_linear_in_the_source(
        a in tensor([1, 2, 3, 8], -1.0, 1.0),
        b in tensor([1, 2, 3, 8], -1.0, 1.0),
        d in tensor([1, 1, 3, 8], -4.0, 4.0),
        k in -2.0..2.0f64,
    ) {
        let sum = a.zip_map(&b, |x, y| x + k * y).unwrap();
        let lhs = warp_tensor(&sum, &d).unwrap();
        let (wa, wb) = (warp_tensor(&a, &d).unwrap(), warp_tensor(&b, &d).unwrap());
        for i in 0..lhs.numel() {
            prop_assert!((lhs.data()[i] - (wa.data()[i] + k * wb.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn unshuffle_then_shuffle_round_trips(t in tensor([1, 3, 8, 12], 0.0, 1.0), r in prop::sample::select(vec![1usize, 2, 4])) {
        let img = ImageTensor::new(t.cast(), Role::Feature).unwrap();
        let back = pixel_shuffle(&pixel_unshuffle(&img, r).unwrap(), r).unwrap();
        prop_assert_eq!(back.tensor().data(), img.tensor().data());
    }

    #[test]
    fn disparity_errors_are_symmetric_and_ordered(a in tensor([1, 1, 5, 6], 0.0, 8.0), b in tensor([1, 1, 5, 6], 0.0, 8.0)) {
        prop_assert!((epe(&a, &b, None).unwrap() - epe(&b, &a, None).unwrap()).abs() < 1e-12);
        let r1 = bad_pixel_ratio(&a, &b, 1.0, None).unwrap();
        let r3 = bad_pixel_ratio(&a, &b, 3.0, None).unwrap();
        let r5 = bad_pixel_ratio(&a, &b, 5.0, None).unwrap();
        prop_assert!(r1 >= r3 && r3 >= r5);
        prop_assert!((0.0..=100.0).contains(&r1));
    }
}
