use candle_core::{Device, Tensor};
use ndarray::Array3;
use npvp::config::{Stage, TrainConfig};
use npvp::datagen::{split_clip, SplitSpec, Task};
use npvp::losses::gaussian_kl;
use npvp::metrics::{psnr, ssim};
use npvp::predictor::EventDistribution;
use npvp::training::lr_at;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = (usize, SplitSpec)> {
    (4usize..=24).prop_flat_map(|len| {
        prop_oneof![
            (1..len).prop_map(move |c| (
                len,
                SplitSpec::Vfp {
                    context: c,
                    targets: len - c
                }
            )),
            (1..len).prop_map(move |c| (
                len,
                SplitSpec::Vpe {
                    targets: len - c,
                    context: c
                }
            )),
            (1..len - 2, 1usize..3).prop_map(move |(p, f)| {
                let f = f.min(len - p - 1);
                (
                    len,
                    SplitSpec::Vfi {
                        past: p,
                        future: f,
                        targets: len - p - f,
                    },
                )
            }),
            (1..len)
                .prop_flat_map(move |lo| (Just(lo), lo..len))
                .prop_map(move |(lo, hi)| {
                    (
                        len,
                        SplitSpec::Vrc {
                            min_context: lo,
                            max_context: hi,
                        },
                    )
                }),
        ]
    })
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_in_range((len, spec) in spec_strategy(), seed in any::<u64>()) {
        let s = split_clip(len, &spec, seed).unwrap();
        prop_assert!(!s.context_idx.is_empty());
        prop_assert!(!s.target_idx.is_empty());
        for i in &s.context_idx {
            prop_assert!(*i < len);
            prop_assert!(!s.target_idx.contains(i));
        }
        for i in &s.target_idx {
            prop_assert!(*i < len);
        }
        prop_assert_eq!(s.task, spec.task());
        if let SplitSpec::Vrc { min_context, max_context } = spec {
            prop_assert!((min_context..=max_context).contains(&s.context_idx.len()));
            prop_assert_eq!(s.context_idx.len() + s.target_idx.len(), len);
            prop_assert_eq!(&s, &split_clip(len, &spec, seed).unwrap());
        }
        if s.task == Task::Vfi {
            let first = s.target_idx[0];
            let last = *s.target_idx.last().unwrap();
            prop_assert!(s.context_idx.iter().any(|&c| c < first));
            prop_assert!(s.context_idx.iter().any(|&c| c > last));
        }
    }

    #[test]
    fn kl_is_non_negative(
        mq in prop::collection::vec(-3.0f64..3.0, 6),
        mp in prop::collection::vec(-3.0f64..3.0, 6),
        sq in prop::collection::vec(0.01f64..4.0, 6),
        sp in prop::collection::vec(0.01f64..4.0, 6),
    ) {
        let t = |v: &[f64]| Tensor::from_slice(v, (2, 3, 1), &Device::Cpu).unwrap();
        let q = EventDistribution { mu: t(&mq), sigma: t(&sq) };
        let p = EventDistribution { mu: t(&mp), sigma: t(&sp) };
        let kl: f64 = gaussian_kl(&q, &p).unwrap().to_scalar().unwrap();
        prop_assert!(kl >= -1e-12);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), a1 in 0.01f32..0.2, extra in 0.01f32..0.2) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let base = Array3::from_shape_fn((16, 16, 1), |_| rng.gen_range(0.3f32..0.7));
        let signs = Array3::from_shape_fn((16, 16, 1), |_| if rng.gen::<bool>() { 1.0f32 } else { -1.0 });
        let a2 = a1 + extra;
        let n1 = &base + &(&signs * a1);
        let n2 = &base + &(&signs * a2);
        let p1 = psnr(base.view(), n1.view(), 1.0).unwrap();
        let p2 = psnr(base.view(), n2.view(), 1.0).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn ssim_identity_symmetry_and_range(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Array3::from_shape_fn((20, 20, 1), |_| rng.gen_range(0.1f32..0.8));
        let b = Array3::from_shape_fn((20, 20, 1), |_| rng.gen_range(0.1f32..0.8));
        prop_assert!((ssim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-12);
        let s0 = ssim(a.view(), b.view()).unwrap();
        let s1 = ssim(b.view(), a.view()).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s0));
    }

    #[test]
    fn schedule_stays_in_range(step in 0u64..100_000, spe in 1usize..50) {
        let cfg = TrainConfig::full(Stage::Predictor);
        let lr = lr_at(step, spe, &cfg);
        prop_assert!(lr >= cfg.lr_min && lr <= cfg.lr_max);
    }
}

#[test]
fn schedule_jumps_only_at_restarts() {
    let cfg = TrainConfig::full(Stage::Predictor);
    let spe = 4;
    let period = (cfg.restart_period * spe) as u64;
    for step in 1..3 * period {
        let jump = lr_at(step, spe, &cfg) - lr_at(step - 1, spe, &cfg);
        if step % period == 0 {
            assert!(jump > 0.9 * (cfg.lr_max - cfg.lr_min));
        } else {
            assert!(jump <= 0.0 && jump.abs() < 1e-2 * (cfg.lr_max - cfg.lr_min));
        }
    }
}
