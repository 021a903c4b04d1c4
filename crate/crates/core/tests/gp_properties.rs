use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vcvforge::gpr::{ani_init, fit, population_variance, FitConfig, StartPoint};
use vcvforge::kernels::KernelHyperparams;
use vcvforge::market_data::{synchronize_and_fill, to_log_returns};
use vcvforge::pipeline::{ordinals, PipelineConfig};
use vcvforge::synthetic::{generate_panel, PanelSpec};

#[test]
fn white_noise_is_absorbed_by_the_noise_term() {
    let xs: Vec<f64> = (0..500).map(f64::from).collect();
    let mut good = 0;
    let mut log = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let y: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = population_variance(&y);
        let m = fit(
            &xs,
            &y,
            &FitConfig {
                seed,
                ..FitConfig::default()
            },
        )
        .unwrap();
        let p = m.params;
        let noise_ok = (p.noise_variance / v - 1.0).abs() <= 0.15;
        let signal_small = p.signal_variance <= 0.05 * v;
        good += usize::from(noise_ok && signal_small);
        log.push(format!(
            "sn2/v={:.3} sf2/v={:.2e}",
            p.noise_variance / v,
            p.signal_variance / v
        ));
    }
    assert!(good >= 18, "{good}/20: {log:?}");
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-3 * a.abs().max(b.abs())
}

/// Same variances; the lengthscale only matters while the signal term is
/// non-negligible next to the noise.
fn same_optimum(a: &KernelHyperparams, b: &KernelHyperparams) -> bool {
    let negligible = a.signal_variance.max(b.signal_variance) <= 1e-4 * a.noise_variance;
    close(a.noise_variance, b.noise_variance)
        && close(a.signal_variance, b.signal_variance)
        && (negligible || close(a.lengthscale, b.lengthscale))
}

#[test]
fn ani_start_is_never_worse_than_a_tiny_noise_start() {
    let prices = generate_panel(&PanelSpec::default()).unwrap();
    let panel = to_log_returns(&synchronize_and_fill(&prices).unwrap()).unwrap();
    let plans = PipelineConfig::default().plan(&panel).unwrap();
    for plan in &plans {
        let dates = &panel.dates[plan.train.clone()];
        let xs = ordinals(dates, dates[0]);
        for a in 0..panel.n_assets() {
            let y = &panel.column(a)[plan.train.clone()];
            let (ani, _) = ani_init(y).unwrap();
            let tiny = KernelHyperparams::new(
                ani.signal_variance,
                ani.lengthscale,
                1e-6 * ani.noise_variance,
            );
            let run = |start| {
                fit(
                    &xs,
                    y,
                    &FitConfig {
                        restarts: 0,
                        start,
                        ..FitConfig::default()
                    },
                )
            };
            let from_ani = run(StartPoint::Ani).unwrap();
            // A start that cannot be factorised is strictly worse.
            if let Ok(from_tiny) = run(StartPoint::Fixed(tiny)) {
                assert!(
                    from_ani.lml >= from_tiny.lml - 1e-6
                        || same_optimum(&from_ani.params, &from_tiny.params),
                    "{} split {}: ANI {} {:?} < tiny {} {:?}",
                    panel.asset_ids[a],
                    plan.split_id,
                    from_ani.lml,
                    from_ani.params,
                    from_tiny.lml,
                    from_tiny.params
                );
            }
        }
    }
}

#[test]
fn fitted_hyperparameters_stay_in_bounds_and_improve_on_the_start() {
    let prices = generate_panel(&PanelSpec::default()).unwrap();
    let panel = to_log_returns(&synchronize_and_fill(&prices).unwrap()).unwrap();
    let rows = 0..400;
    let xs = ordinals(&panel.dates[rows.clone()], panel.dates[0]);
    for a in 0..panel.n_assets() {
        let y = &panel.column(a)[rows.clone()];
        let m = fit(&xs, y, &FitConfig::default()).unwrap();
        assert!(m.bounds.contains(&m.params), "{:?}", m.params);
        assert!(m.lml >= m.trace.start_lml - 1e-9);
        assert_eq!(m.jitter_applied, 0.0);
        assert_eq!(m.trace.runs.len(), 3);
    }
}
