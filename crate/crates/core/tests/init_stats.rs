use fsl_core::prng::{init_scores, init_weights, InitKind, RngStream};

fn moments(xs: &[f32]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Sample mean and variance within three standard errors of `var_want`
/// (zero-mean target). `kurtosis` is E[x^4]/sigma^4 of the target law.
fn check(xs: &[f32], var_want: f64, kurtosis: f64) {
    let n = xs.len() as f64;
    let (mean, var) = moments(xs);
    let se_mean = (var_want / n).sqrt();
    let se_var = var_want * ((kurtosis - 1.0) / n).sqrt();
    assert!(mean.abs() < 3.0 * se_mean, "mean {mean} vs se {se_mean}");
    assert!((var - var_want).abs() < 3.0 * se_var, "var {var} vs {var_want} (se {se_var})");
}

#[test]
fn kaiming_normal_variance() {
    let w = init_weights(300, 200, InitKind::KaimingNormal, &mut RngStream::new(1)).unwrap();
    check(w.as_slice(), 2.0 / 200.0, 3.0);
}

#[test]
fn glorot_normal_variance() {
    let w = init_weights(300, 200, InitKind::GlorotNormal, &mut RngStream::new(2)).unwrap();
    check(w.as_slice(), 2.0 / 500.0, 3.0);
}

#[test]
fn kaiming_uniform_bounds_and_variance() {
    let w = init_weights(300, 200, InitKind::KaimingUniform, &mut RngStream::new(3)).unwrap();
    let bound = (6.0f64 / 200.0).sqrt() as f32;
    assert!(w.as_slice().iter().all(|&x| x.abs() <= bound));
    // U(-b, b): variance b^2/3, kurtosis 9/5.
    check(w.as_slice(), 2.0 / 200.0, 1.8);
}

#[test]
fn signed_constant_takes_two_values() {
    let w = init_weights(100, 50, InitKind::SignedKaimingConstant, &mut RngStream::new(4)).unwrap();
    let sigma = (2.0f64 / 50.0).sqrt() as f32;
    assert!(w.as_slice().iter().all(|&x| x == sigma || x == -sigma));
    let pos = w.as_slice().iter().filter(|&&x| x > 0.0).count() as f64;
    let n = w.len() as f64;
    assert!((pos / n - 0.5).abs() < 3.0 * (0.25 / n).sqrt());
}

#[test]
fn scores_are_kaiming_uniform() {
    let s = init_scores(64, 32, &mut RngStream::new(5)).unwrap();
    let w = init_weights(64, 32, InitKind::KaimingUniform, &mut RngStream::new(5)).unwrap();
    assert_eq!(s, w);
}

#[test]
fn zero_fan_rejected() {
    assert!(init_weights(0, 3, InitKind::KaimingNormal, &mut RngStream::new(0)).is_err());
    assert!(init_weights(3, 0, InitKind::KaimingNormal, &mut RngStream::new(0)).is_err());
}
