//! Randomized property tests over the numeric core: normalization and
//! conservation laws, adjoint identities, exact round trips, and metric
//! axioms, on arbitrary small shapes.

use proptest::prelude::*;

use csnln::attention::{correlation_map, cross_scale_patch, in_scale_nonlocal, naive_cross_scale};
use csnln::ops;
use csnln::rng::Stream;
use csnln::train::{dihedral, dihedral_inverse, lr_at};
use csnln::{AttentionParams, Shape, Tensor, TrainConfig};

fn tensor_strategy(
    n: impl Strategy<Value = usize>,
    c: impl Strategy<Value = usize>,
    h: impl Strategy<Value = usize>,
    w: impl Strategy<Value = usize>,
) -> impl Strategy<Value = Tensor<f64>> {
    (n, c, h, w, any::<u64>()).prop_map(|(n, c, h, w, seed)| {
        let mut st = Stream::new(seed, 71);
        Tensor::from_fn(Shape::new(n, c, h, w), |_, _, _, _| st.uniform_symmetric(2.0)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        x in tensor_strategy(1..3usize, 1..6usize, 1..5usize, 1..5usize),
        shift in -3.0f64..3.0,
    ) {
        let s = ops::softmax(None, &x, 1).unwrap();
        let d = s.shape();
        for n in 0..d.n {
            for y in 0..d.h {
                for xx in 0..d.w {
                    let sum: f64 = (0..d.c).map(|c| s.at(n, c, y, xx)).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
        let shifted = Tensor::from_fn(x.shape(), |n, c, y, xx| x.at(n, c, y, xx) + shift).unwrap();
        let s2 = ops::softmax(None, &shifted, 1).unwrap();
        prop_assert!(s.max_abs_diff(&s2) < 1e-9);
    }

    #[test]
    fn extract_then_normalized_fold_is_identity(
        x in tensor_strategy(1..3usize, 1..3usize, 3..9usize, 3..9usize),
        p in 1..4usize,
        stride in 1..4usize,
        pad in 0..3usize,
    ) {
        prop_assume!(stride <= p && pad < p);
        let patches = ops::extract_patches(None, &x, p, stride, pad).unwrap();
        let (folded, counts) =
            ops::fold_patches(None, &patches, x.shape().h, x.shape().w, p, stride, pad).unwrap();
        // Coverage can still fail for extreme geometry; skip those draws.
        let recip = match ops::recip_counts(&counts) {
            Ok(r) => r,
            Err(_) => return Ok(()),
        };
        let normalized = ops::mul_broadcast(None, &folded, &recip).unwrap();
        prop_assert!(normalized.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn dihedral_round_trip_and_value_preservation(
        x in tensor_strategy(1..2usize, 1..3usize, 2..6usize, 2..6usize),
        v in 0..8u8,
    ) {
        let t = dihedral(&x, v).unwrap();
        // Every variant permutes the pixels of each channel.
        let mut a: Vec<u64> = x.data().iter().map(|f| f.to_bits()).collect();
        let mut b: Vec<u64> = t.data().iter().map(|f| f.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let back = dihedral(&t, dihedral_inverse(v)).unwrap();
        prop_assert_eq!(back.data(), x.data());
    }

    #[test]
    fn psnr_axioms(
        h in 5..10usize,
        w in 5..10usize,
        sa in any::<u64>(),
        sb in any::<u64>(),
    ) {
        let fill = |seed: u64| {
            let mut st = Stream::new(seed, 71);
            Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, _, _| st.uniform() * 255.0).unwrap()
        };
        let (a, b) = (fill(sa), fill(sb));
        let ab = csnln::metrics::psnr(&a, &b, 0).unwrap();
        let ba = csnln::metrics::psnr(&b, &a, 0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9 || (ab.is_infinite() && ba.is_infinite()));
        prop_assert!(csnln::metrics::psnr(&a, &a, 0).unwrap().is_infinite());
        // Doubling the error lowers PSNR (strictly, unless identical).
        let further = Tensor::from_fn(a.shape(), |n, c, y, x| {
            a.at(n, c, y, x) + 2.0 * (b.at(n, c, y, x) - a.at(n, c, y, x))
        }).unwrap();
        let worse = csnln::metrics::psnr(&a, &further, 0).unwrap();
        if ab.is_finite() {
            prop_assert!(worse < ab);
        }
    }

    #[test]
    fn rgb_to_y_range_and_affinity(
        h in 2..5usize,
        w in 2..5usize,
        sp in any::<u64>(),
        sq in any::<u64>(),
        alpha in 0.0f64..1.0,
    ) {
        let fill = |seed: u64| {
            let mut st = Stream::new(seed, 71);
            Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| st.uniform() * 255.0).unwrap()
        };
        let (p, q) = (fill(sp), fill(sq));
        let yp = csnln::imgio::rgb_to_y(&p).unwrap();
        for &v in yp.data() {
            prop_assert!((16.0 - 1e-9..=235.0 + 1e-9).contains(&v));
        }
        let mix = Tensor::from_fn(p.shape(), |n, c, y, x| {
            alpha * p.at(n, c, y, x) + (1.0 - alpha) * q.at(n, c, y, x)
        }).unwrap();
        let ymix = csnln::imgio::rgb_to_y(&mix).unwrap();
        let yq = csnln::imgio::rgb_to_y(&q).unwrap();
        let want = Tensor::from_fn(ymix.shape(), |n, c, y, x| {
            alpha * yp.at(n, c, y, x) + (1.0 - alpha) * yq.at(n, c, y, x)
        }).unwrap();
        prop_assert!(ymix.max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn bicubic_constant_exact_and_overshoot_bounded(
        x in tensor_strategy(1..2usize, 1..3usize, 4..9usize, 4..9usize),
        oh in 2..12usize,
        ow in 2..12usize,
        k in -5.0f64..5.0,
    ) {
        let constant = Tensor::full(x.shape(), k).unwrap();
        let resized = csnln::resample::bicubic_resize(&constant, oh, ow).unwrap();
        for &v in resized.data() {
            prop_assert!((v - k).abs() < 1e-9);
        }
        // Catmull-Rom overshoot stays within a modest fraction of the range.
        let y = csnln::resample::bicubic_resize(&x, oh, ow).unwrap();
        let lo = x.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 0.3 * (hi - lo) + 1e-9;
        for &v in y.data() {
            prop_assert!(v >= lo - slack && v <= hi + slack);
        }
    }

    #[test]
    fn lr_schedule_is_nonincreasing_and_halves(
        lr in 1e-6f64..1e-2,
        halve in 1..20usize,
        e in 0..100usize,
    ) {
        let mut cfg = TrainConfig::default();
        cfg.lr = lr;
        cfg.halve_every = halve;
        prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        prop_assert_eq!(lr_at(e + halve, &cfg), lr_at(e, &cfg) * 0.5);
    }

    #[test]
    fn checkpoint_round_trip_arbitrary_maps(
        entries in proptest::collection::btree_map(
            "[a-z][a-z0-9._]{0,12}",
            (1..3usize, 1..4usize, 1..4usize, 1..4usize, any::<u64>()),
            0..5,
        ),
    ) {
        let map: std::collections::BTreeMap<String, Tensor<f32>> = entries
            .into_iter()
            .map(|(name, (n, c, h, w, seed))| {
                let mut st = Stream::new(seed, 73);
                let t = Tensor::from_fn(Shape::new(n, c, h, w), |_, _, _, _| {
                    st.uniform_symmetric(3.0) as f32
                })
                .unwrap();
                (name, t)
            })
            .collect();
        let bytes = csnln::checkpoint::checkpoint_to_bytes(&map).unwrap();
        let back: std::collections::BTreeMap<String, Tensor<f32>> =
            csnln::checkpoint::checkpoint_from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), map.len());
        for (name, t) in &map {
            prop_assert_eq!(back[name].data(), t.data());
        }
        prop_assert_eq!(csnln::checkpoint::checkpoint_to_bytes(&back).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    /// Conservation: on constant inputs every attention variant returns the
    /// constant, and correlation maps are a probability distribution.
    #[test]
    fn attention_conserves_constants_and_normalizes(
        c in 1..3usize,
        h in 6..11usize,
        w in 6..11usize,
        s in 2..4usize,
        p in prop::sample::select(vec![1usize, 3]),
        k in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        prop_assume!(h / s >= p && w / s >= p);
        let params = AttentionParams::identity(c, s, p, 1, (2, 2)).unwrap();
        let constant = Tensor::full(Shape::new(1, c, h, w), k).unwrap();

        let cs = cross_scale_patch(None, &constant, &params).unwrap();
        prop_assert_eq!(cs.shape(), Shape::new(1, c, s * h, s * w));
        for &v in cs.data() {
            prop_assert!((v - k).abs() < 1e-6);
        }
        let nv = naive_cross_scale(None, &constant, &params).unwrap();
        for &v in nv.data() {
            prop_assert!((v - k).abs() < 1e-6);
        }
        let is = in_scale_nonlocal(None, &constant, &params).unwrap();
        for &v in is.data() {
            prop_assert!((v - k).abs() < 1e-6);
        }

        // Random input: the per-query candidate weights sum to one.
        let mut st = Stream::new(seed, 75);
        let x = Tensor::from_fn(Shape::new(1, c, h, w), |_, _, _, _| st.uniform()).unwrap();
        let map = correlation_map(&x, &params, (h / 2, w / 2)).unwrap();
        let total: f64 = map.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        for &v in map.data() {
            prop_assert!(v >= 0.0);
        }
    }

    /// Transposed convolution is the adjoint of convolution on geometries
    /// where the shapes invert exactly.
    #[test]
    fn conv_adjoint_identity(
        cin in 1..3usize,
        cout in 1..3usize,
        k in 1..4usize,
        stride in 1..3usize,
        pad in 0..2usize,
        m in 1..3usize,
        seed in any::<u64>(),
    ) {
        prop_assume!(k > pad);
        // Input size with (d + 2*pad - k) divisible by stride.
        let d = k + (m - 1) * stride + 2 * pad - 2 * pad;
        let d = if d + 2 * pad < k { k } else { d };
        prop_assume!((d + 2 * pad - k) % stride == 0);
        let mut st = Stream::new(seed, 77);
        let x = Tensor::from_fn(Shape::new(1, cin, d, d), |_, _, _, _| st.uniform_symmetric(1.0)).unwrap();
        let wt = Tensor::from_fn(Shape::new(cout, cin, k, k), |_, _, _, _| st.uniform_symmetric(1.0)).unwrap();
        let y = ops::conv2d(None, &x, &wt, None, stride, pad).unwrap();
        let g = Tensor::from_fn(y.shape(), |_, _, _, _| st.uniform_symmetric(1.0)).unwrap();
        // The same weight buffer serves both directions; the transpose reads
        // its leading axis as the input channels.
        let back = ops::conv_transpose2d(None, &g, &wt, None, stride, pad).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum()
        };
        let lhs = dot(&y, &g);
        let rhs = dot(&x, &back);
        prop_assert!((lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }
}
