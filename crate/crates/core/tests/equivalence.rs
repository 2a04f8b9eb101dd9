use priorcal::adaptation::{
    estimate_model_prior, resolve_target_prior, solve_beta_fixed_point, FixedPointConfig, TargetPriorSpec,
};
use priorcal::calibration::{apply_affine, fit_affine, loss_gradient, CalibrationMode, FitConfig};
use priorcal::scores::{normalize_scores, PosteriorMatrix, PriorVector};
use priorcal::synthgen::{generate, SynthConfig};

fn dataset(k: usize, seed: u64) -> (PosteriorMatrix, priorcal::scores::LabelVector) {
    let bias: Vec<f64> = (0..k).map(|j| if j % 3 == 0 { 0.8 } else { -0.3 * (j % 2) as f64 }).collect();
    let cfg = SynthConfig { model_bias: bias, ..SynthConfig::new(k, 200, seed).unwrap() };
    let (scores, labels) = generate(&cfg).unwrap();
    (normalize_scores(&scores), labels)
}

#[test]
fn fixed_point_matches_alpha_one_logistic_regression() {
    for (k, seed) in [(2, 1), (4, 2), (6, 3), (14, 4), (4, 5)] {
        let (p, y) = dataset(k, seed);
        let target =
            resolve_target_prior(&TargetPriorSpec::Empirical { labels: y.clone(), smoothing: 0.0 }, k).unwrap();
        let fp = solve_beta_fixed_point(&p, &target, &FixedPointConfig::default()).unwrap();
        assert!(fp.converged, "k={k}: {} iterations", fp.iterations_used);

        let fit = fit_affine(&p, &y, CalibrationMode::AlphaFixedOne, &FitConfig::default()).unwrap();
        assert!(fit.converged, "k={k}: fit after {} iterations", fit.iterations);
        let lr = apply_affine(&p, &fit.params).unwrap();

        let max_diff = fp.adapted.values().iter().zip(lr.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_diff < 1e-4, "k={k}: max diff {max_diff}");

        // The fixed point is a zero of the alpha = 1 gradient in beta.
        let params = priorcal::calibration::AffineParams {
            mode: CalibrationMode::AlphaFixedOne,
            alpha: 1.0,
            beta: fp.beta.clone(),
        };
        let g = loss_gradient(&p, &y, &params).unwrap();
        assert!(g.beta.iter().all(|b| b.abs() < 1e-6), "k={k}: {:?}", g.beta);
    }
}

#[test]
fn naive_and_iterative_agree_on_first_step() {
    let (p, _) = dataset(6, 11);
    let target = PriorVector::uniform(6).unwrap();
    let one = FixedPointConfig { max_iterations: 1, ..Default::default() };
    let first = solve_beta_fixed_point(&p, &target, &one).unwrap();
    let m = estimate_model_prior(&p).unwrap();
    let expected: Vec<f64> = target.probs().iter().zip(m.probs()).map(|(t, m)| t.ln() - m.ln()).collect();
    assert_eq!(first.beta, expected);
}
