//! Cross-module checks: phantom → sampling → rendering → training.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicesplat::data::{
    blobs_cloud, blobs_volume, make_axial_stack, make_phantom, sample_slice, PhantomKind, DEFAULT_BLOBS,
};
use slicesplat::gradients::ParamGradients;
use slicesplat::metrics::{evaluate_views, ssim};
use slicesplat::model::DEFAULT_BETA;
use slicesplat::rasterizer::{chi_square_3, cull, bounding_box_chi2, RenderOptions};
use slicesplat::trainer::{
    densify_prune_resample, init_cloud, train, AdamState, GradStats, HeuristicParams, LearningRates, TrainConfig,
    TrainContext,
};
use slicesplat::{rasterize, render_slice, ExecMode, GaussianCloud, ProbePose, SliceSpec};

fn opts() -> RenderOptions {
    RenderOptions::new(0.9999, ExecMode::Deterministic)
}

#[test]
fn generating_cloud_reproduces_sampled_slices() {
    let dims = [64; 3];
    let cloud = blobs_cloud(dims, 0.6, 21, DEFAULT_BLOBS).unwrap();
    let vol = blobs_volume(&cloud, dims, 0.6).unwrap();
    let cloud32 = cloud.cast::<f32>();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..6 {
        let pose = ProbePose::from_euler_zyx_deg(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-180.0..180.0),
            [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-4.0..4.0)],
        );
        // stay inside the volume so trilinear sampling has data everywhere
        let spec = SliceSpec::new(24, 24, 0.6, pose).unwrap();
        let rendered = render_slice(&cloud32, &spec, &opts()).unwrap();
        let sampled = sample_slice(&vol, &spec);
        let worst = rendered
            .pixels
            .iter()
            .zip(&sampled.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 2e-2, "max abs difference {worst}");
    }
}

#[test]
fn generating_cloud_scores_high_on_every_family() {
    let dims = [32; 3];
    let cloud = blobs_cloud(dims, 0.6, 3, 6).unwrap();
    let vol = blobs_volume(&cloud, dims, 0.6).unwrap();
    let report = evaluate_views(&cloud.cast(), &vol, 8, &opts()).unwrap();
    for f in [report.axial, report.coronal, report.sagittal] {
        assert!(f.ssim_mean >= 0.98, "{f:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn culled_gaussians_stay_below_truncation_factor(
        seed in any::<u64>(),
        p in prop::sample::select(vec![0.9, 0.95, 0.99]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = ProbePose::from_euler_zyx_deg(
            rng.random_range(-90.0..90.0),
            rng.random_range(-90.0..90.0),
            rng.random_range(-180.0..180.0),
            [0.0, 0.0, 0.0],
        );
        let spec = SliceSpec::new(24, 24, 1.0, pose).unwrap();
        let mut cloud = GaussianCloud::<f64>::empty(DEFAULT_BETA);
        for _ in 0..40 {
            let local = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-8.0..8.0)];
            let raw = [
                rng.random_range(0.3..1.2),
                rng.random_range(0.3..1.2),
                rng.random_range(0.3..1.2),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ];
            cloud.push(pose.transform_point(&local), raw, 0.0, rng.random_range(-2.0..2.0));
        }
        let chi2 = chi_square_3(p).unwrap();
        let accepted = rasterize(&cloud, &spec, &RenderOptions::new(p, ExecMode::Sequential)).unwrap().accepted;
        for i in (0..cloud.len()).filter(|i| !accepted.contains(i)) {
            let l = cloud.l_factor(i);
            let lm = l.matrix();
            let limit = cloud.alpha(i) * (-0.5 * chi2).exp();
            for v in 0..spec.height {
                for u in 0..spec.width {
                    let x = spec.pixel_to_world(u, v);
                    let d = [x[0] - cloud.means[i][0], x[1] - cloud.means[i][1], x[2] - cloud.means[i][2]];
                    let q: f64 = (0..3).map(|c| {
                        let s: f64 = (0..3).map(|r| lm[r][c] * d[r]).sum();
                        s * s
                    }).sum();
                    let w = cloud.alpha(i) * (-0.5 * q).exp();
                    prop_assert!(w <= limit * (1.0 + 1e-9), "gaussian {} pixel ({}, {}): {} > {}", i, u, v, w, limit);
                }
            }
        }
    }

    #[test]
    fn cull_matches_box_straddle_for_centred_slices(z in -12.0f64..12.0, sigma in 0.5f64..4.0) {
        let spec = SliceSpec::new(16, 16, 1.0, ProbePose::identity()).unwrap();
        let chi2 = chi_square_3(0.95).unwrap();
        let b = bounding_box_chi2(&[0.0, 0.0, z], &[sigma * sigma; 3], chi2);
        let expected = z.abs() <= chi2.sqrt() * sigma;
        prop_assert_eq!(cull(&[b], &spec)[0], expected);
    }
}

#[test]
fn heuristics_keep_the_cloud_renderable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let config = TrainConfig {
        n_gaussians: 400,
        ..TrainConfig::default()
    };
    let bounds = ([-1.0; 3], [1.0; 3]);
    let mut cloud = init_cloud(&config, &bounds, &mut rng).unwrap();
    let mut adam = AdamState::new(cloud.len());
    let spec = SliceSpec::new(32, 32, 2.0 / 31.0, ProbePose::axial(0.1)).unwrap();
    let params = HeuristicParams {
        prune_alpha_threshold: 0.01,
        prune_scale: 0.5,
        densify_grad_threshold: 0.5,
        split_scale: 0.05,
        max_gaussians: 800,
        densify: true,
    };
    for round in 0..15 {
        let n = cloud.len();
        let mut grads = ParamGradients::<f32>::zeros(n);
        for g in grads.d_means.iter_mut() {
            *g = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        }
        for g in grads.d_l_raw.iter_mut() {
            *g = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        }
        for g in grads.d_opacity_raw.iter_mut() {
            *g = rng.random_range(-3.0..3.0);
        }
        adam.step(&mut cloud, &grads, &LearningRates::uniform(0.05)).unwrap();
        let mut stats = GradStats::new(n);
        stats.record(&grads, &(0..n).collect::<Vec<_>>());
        densify_prune_resample(&mut cloud, &stats, &mut adam, &params, &mut rng);
        assert_eq!(adam.len(), cloud.len(), "round {round}");
        assert!(cloud.len() <= params.max_gaussians);
        cloud.validate().unwrap();
        let img = render_slice(&cloud, &spec, &opts()).unwrap();
        assert!(img.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)), "round {round}");
    }
}

#[test]
fn training_loss_falls_and_parameters_stay_valid() {
    let vol = make_phantom(PhantomKind::Blobs, [24; 3], 0.6, 8).unwrap();
    let ds = make_axial_stack(&vol, 12, 0.0, 0).unwrap();
    let ctx = TrainContext {
        bounds: Some(vol.world_bounds()),
        ..Default::default()
    };
    let mut deltas: Vec<Vec<f64>> = Vec::new();
    for seed in 0..5u64 {
        let config = TrainConfig {
            n_gaussians: 600,
            iterations: 1000,
            seed,
            ..TrainConfig::default()
        };
        let mut losses = Vec::new();
        let out = train(&ds, &config, &ctx, |e| losses.push(e.loss)).unwrap();
        // one entry per 100 iterations: windows of 500 iterations are 5 entries apart
        deltas.push(losses.windows(6).map(|w| w[5] - w[0]).collect());

        let cloud = &out.cloud;
        cloud.validate().unwrap();
        let strictly_inside = |v: f64| v > 0.0 && v < 1.0;
        let cloud64 = cloud.cast::<f64>();
        for i in 0..cloud.len() {
            assert!(strictly_inside(cloud64.alpha(i)) && strictly_inside(cloud64.intensity(i)));
        }
        assert!(strictly_inside(cloud64.bg_alpha()) && strictly_inside(cloud64.bg_intensity()));
    }
    for w in 0..deltas[0].len() {
        let mut d: Vec<f64> = deltas.iter().map(|s| s[w]).collect();
        d.sort_by(f64::total_cmp);
        assert!(d[2] < 0.0, "window {w}: median change {}", d[2]);
    }
}

#[test]
fn trained_slice_resembles_its_target() {
    let vol = make_phantom(PhantomKind::Blobs, [24; 3], 0.6, 8).unwrap();
    let ds = make_axial_stack(&vol, 24, 0.0, 0).unwrap();
    let config = TrainConfig {
        n_gaussians: 2000,
        iterations: 600,
        ..TrainConfig::default()
    };
    let ctx = TrainContext {
        bounds: Some(vol.world_bounds()),
        ..Default::default()
    };
    let out = train(&ds, &config, &ctx, |_| {}).unwrap();
    let target = &ds.slices[12];
    let img = render_slice(&out.cloud, &target.spec(), &RenderOptions::new(config.p_mass, ExecMode::Deterministic)).unwrap();
    let score = ssim(&img, target).unwrap();
    assert!(score >= 0.9, "ssim {score}");
}
