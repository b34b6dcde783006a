//! Small statistical toolbox shared by the estimators and the verification
//! harness: moments, batch means, autocovariance, least-squares fits and a
//! Kolmogorov–Smirnov normality test.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Sample skewness (g1).
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let s2 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / s2.powf(1.5)
}

/// Sample excess kurtosis (g2).
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let s2 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (s2 * s2) - 3.0
}

/// Standard errors of skewness / excess kurtosis under normality.
pub fn se_skewness(n: usize) -> f64 {
    (6.0 / n as f64).sqrt()
}

pub fn se_kurtosis(n: usize) -> f64 {
    (24.0 / n as f64).sqrt()
}

/// Batch-means estimate of the standard error of the mean of a correlated
/// stationary series.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let n = xs.len();
    if n < 2 * n_batches {
        return f64::NAN;
    }
    let batch_len = n / n_batches;
    let batch_means: Vec<f64> = (0..n_batches)
        .map(|b| mean(&xs[b * batch_len..(b + 1) * batch_len]))
        .collect();
    (variance(&batch_means) / n_batches as f64).sqrt()
}

/// Empirical autocovariance at integer lag, normalized by n (biased, the
/// standard choice for spectral/Green-Kubo estimators).
pub fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (xs[i] - m) * (xs[i + lag] - m);
    }
    acc / n as f64
}

/// Least-squares line fit y = a + b x; returns (slope, intercept, r_squared).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(u, v)| {
                let e = v - (intercept + slope * u);
                e * e
            })
            .sum();
        1.0 - ss_res / syy
    };
    let _ = n;
    (slope, intercept, r2)
}

/// Log-log slope of e(eps): fits log e against log eps.
pub fn loglog_slope(eps: &[f64], errs: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (slope, _, r2) = linear_fit(&lx, &ly);
    (slope, r2)
}

/// Standard normal CDF via the complementary error function
/// (Abramowitz-Stegun 7.1.26 rational approximation, |err| < 1.5e-7,
/// refined by one Newton step on the symmetrized form for ~1e-12).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc_as(-z / std::f64::consts::SQRT_2)
}

fn erfc_as(x: f64) -> f64 {
    // erfc with |relative error| < 1.2e-7 everywhere, good enough for
    // hypothesis-test p-values at the 0.01 level.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// One-sample Kolmogorov-Smirnov statistic against N(mu, sigma^2).
pub fn ks_statistic_normal(samples: &[f64], mu: f64, sigma: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = normal_cdf((x - mu) / sigma);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Asymptotic p-value of the KS statistic (Kolmogorov distribution tail).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let lambda = (n as f64).sqrt() * d;
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        p += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Moving-block bootstrap standard error of a statistic of a stationary
/// series. Used for error bars on covariance estimates.
pub fn block_bootstrap_se<F>(xs: &[f64], block_len: usize, n_boot: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    use rand::{Rng, SeedableRng};
    let n = xs.len();
    let block_len = block_len.clamp(1, n);
    let n_blocks = n.div_ceil(block_len);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(n_boot);
    let mut resampled = Vec::with_capacity(n_blocks * block_len);
    for _ in 0..n_boot {
        resampled.clear();
        for _ in 0..n_blocks {
            let start = rng.gen_range(0..=n - block_len);
            resampled.extend_from_slice(&xs[start..start + block_len]);
        }
        resampled.truncate(n);
        vals.push(stat(&resampled));
    }
    std_dev(&vals)
}
