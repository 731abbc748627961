use nlcontrol::propagate::TimeGrid;
use nlcontrol_cli::config::{RunSpec, TrialSpec};
use nlcontrol_cli::presets;
use proptest::prelude::*;

// TOML integers are i64, so seeds above i64::MAX cannot be written.
proptest! {
    #[test]
    fn toml_round_trip(lambda in 1e-3f64..1e7, scale in 0.1f64..10.0, n in 1u32..=2, iters in 1usize..500,
                       peak in -0.05f64..0.05, center in 0.0f64..1.0, fwhm in 0.01f64..1.0, seed in 0u64..=i64::MAX as u64) {
        let mut spec = presets::load("fig5").unwrap();
        spec.opt.lambda = lambda;
        spec.opt.lambda_scale = scale;
        spec.opt.n = n;
        spec.opt.max_iters = iters;
        spec.seed = seed;
        spec.trial = Some(TrialSpec::Gaussian { peak, center, fwhm, start: 0.0, end: 1.0 });
        let text = toml::to_string(&spec).unwrap();
        prop_assert_eq!(RunSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn random_trials_are_seeded_and_pinned(seed in any::<u64>(), peak in 1e-4f64..0.1, modes in 1usize..8) {
        let grid = TimeGrid::new(100.0, 64).unwrap();
        let t = TrialSpec::Random { peak, modes };
        let a = t.build(grid, seed).unwrap();
        prop_assert_eq!(&a, &t.build(grid, seed).unwrap());
        prop_assert_eq!(a.samples[0], 0.0);
        prop_assert_eq!(a.samples[64], 0.0);
        prop_assert!(a.peak() <= peak * modes as f64 + 1e-15);
    }
}

#[test]
fn truncated_gaussian_is_zero_outside_its_window() {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let t = TrialSpec::Gaussian {
        peak: 1.0,
        center: 0.5,
        fwhm: 0.5,
        start: 0.245,
        end: 0.755,
    };
    let f = t.build(grid, 0).unwrap();
    for (i, e) in f.samples.iter().enumerate() {
        let inside = (25..=75).contains(&i);
        assert_eq!(*e != 0.0, inside, "node {i}");
    }
}
