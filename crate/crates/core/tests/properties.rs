//! Property tests over randomly generated inputs.

use std::path::Path;

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vidgeo::attention::{build_mask, run_masked, run_partition, AttentionWeights, ChunkPartition};
use vidgeo::geometry::ValidMask;
use vidgeo::io::{decode, encode, AnyTensor};
use vidgeo::losses::{normal_loss, solve_scale, weighted_median};
use vidgeo::metrics::{align_scale_seq, depth_metrics, lower_median};
use vidgeo::refine::{poisson_prior, PoissonConfig, SparseDepth};
use vidgeo::{Tensor, Tensor64};

fn lengths() -> impl Strategy<Value = Vec<usize>> {
    vec(1usize..5, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunk_mask_is_a_block_lower_triangular_preorder(lens in lengths()) {
        let p = ChunkPartition::new(lens).unwrap();
        let m = build_mask(&p);
        let n = p.num_frames();
        for i in 0..n {
            prop_assert!(m.get(i, i));
            for j in 0..n {
                // a frame sees everything before it and nothing past its chunk
                if j < i { prop_assert!(m.get(i, j)); }
                if m.get(i, j) && !m.get(j, i) { prop_assert!(j < i); }
                for k in 0..n {
                    if m.get(i, j) && m.get(j, k) { prop_assert!(m.get(i, k)); }
                }
            }
        }
        let visible: usize = p.lengths().iter().scan(0, |seen, &l| { *seen += l; Some(l * *seen) }).sum();
        let count = (0..n).map(|i| (0..n).filter(|&j| m.get(i, j)).count()).sum::<usize>();
        prop_assert_eq!(count, visible);
    }

    #[test]
    fn cached_chunks_match_masked_pass(lens in lengths(), seed in any::<u64>(), tpf in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = ChunkPartition::new(lens).unwrap();
        let layers = vec![AttentionWeights::random(8, 2, &mut rng).unwrap(), AttentionWeights::random(8, 2, &mut rng).unwrap()];
        let x = Tensor::from_fn([p.num_frames() * tpf, 8], |i| ((i * 7919 % 113) as f32 / 56.0) - 1.0);
        let cached = run_partition(&layers, &x, tpf, &p, None).unwrap().outputs;
        let masked = run_masked(&layers, &x, tpf, &p).unwrap();
        prop_assert!(cached.max_abs_diff(&masked).unwrap() <= 1e-5);
    }

    #[test]
    fn weighted_median_minimizes_weighted_l1(pairs in vec((-10.0f64..10.0, 0.01f64..5.0), 1..30)) {
        let m = weighted_median(pairs.clone()).unwrap();
        let cost = |s: f64| pairs.iter().map(|(r, w)| w * (s - r).abs()).sum::<f64>();
        let best = cost(m);
        for (r, _) in &pairs {
            prop_assert!(best <= cost(*r) + 1e-9 * (1.0 + best));
        }
    }

    #[test]
    fn scale_solution_is_inverse_to_prediction_scale(
        vals in vec(0.1f64..3.0, 12), noise in vec(0.8f64..1.2, 12), k in 0.05f64..20.0,
    ) {
        let pred = Tensor64::new([1, 3, 2, 2], vals.clone()).unwrap();
        let gt = Tensor64::new([1, 3, 2, 2], vals.iter().zip(&noise).map(|(v, n)| 2.0 * v * n).collect()).unwrap();
        let depth = Tensor64::full([1, 2, 2], 2.0);
        let valid = ValidMask::full([1, 2, 2], true);
        let s = solve_scale(&pred, &gt, &depth, &valid).unwrap().s;
        let sk = solve_scale(&pred.map(|x| k * x), &gt, &depth, &valid).unwrap().s;
        prop_assert!((sk * k - s).abs() <= 1e-9 * s);
    }

    #[test]
    fn tensor_files_round_trip_any_bits(dims in vec(0usize..4, 0..4), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let t: AnyTensor = Tensor::new(dims.clone(), (0..n).map(|_| f32::from_bits(rng.gen())).collect()).unwrap().into();
        let bytes = encode(&t).unwrap();
        prop_assert_eq!(bytes.len(), 10 + 8 * dims.len() + 4 * n);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_files_are_rejected(cut in 0usize..30) {
        let t: AnyTensor = Tensor::new([2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap().into();
        let bytes = encode(&t).unwrap();
        prop_assume!(cut < bytes.len());
        prop_assert!(decode(&bytes[..cut], Path::new("mem")).is_err());
    }

    #[test]
    fn lower_median_splits_the_sample(mut v in vec(-100.0f64..100.0, 1..40)) {
        let m = lower_median(&mut v.clone()).unwrap();
        v.sort_by(f64::total_cmp);
        prop_assert_eq!(m, v[(v.len() - 1) / 2]);
        prop_assert!(v.iter().filter(|&&x| x <= m).count() * 2 >= v.len());
    }

    #[test]
    fn aligned_depth_metrics_ignore_prediction_scale(
        gt in vec(0.5f64..10.0, 16), noise in vec(0.7f64..1.4, 16), k in 0.01f64..100.0,
    ) {
        let gt_t = Tensor64::new([16], gt.clone()).unwrap();
        let pred = Tensor64::new([16], gt.iter().zip(&noise).map(|(g, n)| g * n).collect()).unwrap();
        let mask = ValidMask::full([16], true);
        let a = depth_metrics(&pred, &gt_t, &mask, align_scale_seq(&pred, &gt_t, &mask).unwrap()).unwrap();
        let scaled = pred.map(|x| k * x);
        let b = depth_metrics(&scaled, &gt_t, &mask, align_scale_seq(&scaled, &gt_t, &mask).unwrap()).unwrap();
        prop_assert!((a.rel - b.rel).abs() <= 1e-9);
        prop_assert_eq!(a.delta1, b.delta1);
        prop_assert!(a.rel >= 0.0 && (0.0..=1.0).contains(&a.delta1));
    }

    #[test]
    fn normal_loss_is_an_angle(a in vec(-1.0f64..1.0, 12), b in vec(-1.0f64..1.0, 12)) {
        let pred = Tensor64::new([1, 3, 2, 2], a).unwrap();
        let gt = Tensor64::new([1, 3, 2, 2], b).unwrap();
        if let Ok(lv) = normal_loss(&pred, &gt, &ValidMask::full([1, 2, 2], true)) {
            prop_assert!((0.0..=std::f64::consts::PI).contains(&lv.loss));
            prop_assert!(lv.grad.all_finite());
        }
    }

    #[test]
    fn poisson_prior_scales_with_its_inputs(
        mono in vec(0.5f32..2.0, 25), obs in vec(prop::option::of(1.0f32..4.0), 25), k in 0.1f32..10.0,
    ) {
        prop_assume!(obs.iter().any(Option::is_some));
        let valid = ValidMask::new([1, 5, 5], obs.iter().map(Option::is_some).collect()).unwrap();
        let values = Tensor::new([1, 5, 5], obs.iter().map(|o| o.unwrap_or(0.0)).collect()).unwrap();
        let mono_t = Tensor::new([1, 5, 5], mono).unwrap();
        let cfg = PoissonConfig { cg_tol: 1e-10, ..Default::default() };
        let base = poisson_prior(&SparseDepth::new(values.clone(), valid.clone()).unwrap(), &mono_t, &cfg).unwrap();
        let scaled = poisson_prior(
            &SparseDepth::new(values.map(|v| k * v), valid).unwrap(),
            &mono_t.map(|m| k * m),
            &cfg,
        )
        .unwrap();
        for (a, b) in base.prior.data().iter().zip(scaled.prior.data()) {
            prop_assert!(*a > 0.0);
            prop_assert!((b / (k * a) - 1.0).abs() <= 1e-4);
        }
    }
}
