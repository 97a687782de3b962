//! Small sample-statistics helpers shared by the diagnostics, ingest and
//! Monte Carlo modules.
//!
//! Conventions are fixed so tests can be exact: standard deviation uses the
//! n-1 denominator; skewness and kurtosis use n-denominator central moments;
//! `kurtosis_raw` is `m4/m2^2` (9 for the unit exponential) and
//! `kurtosis_excess` subtracts 3. Degenerate inputs report NaN.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

pub fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    if is_constant(x) {
        return 0.0;
    }
    let m = mean(x);
    let ss = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (ss / (n as f64 - 1.0)).sqrt()
}

fn central_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m, m2 / n, m3 / n, m4 / n)
}

pub fn skewness(x: &[f64]) -> f64 {
    if is_constant(x) {
        return f64::NAN;
    }
    let (_, m2, m3, _) = central_moments(x);
    if m2 <= 0.0 {
        return f64::NAN;
    }
    m3 / m2.powf(1.5)
}

pub fn kurtosis_raw(x: &[f64]) -> f64 {
    if is_constant(x) {
        return f64::NAN;
    }
    let (_, m2, _, m4) = central_moments(x);
    if m2 <= 0.0 {
        return f64::NAN;
    }
    m4 / (m2 * m2)
}

pub fn kurtosis_excess(x: &[f64]) -> f64 {
    kurtosis_raw(x) - 3.0
}

/// Type-7 percentile (linear interpolation of order statistics), `p` in [0,1].
pub fn percentile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sample autocorrelations at lags `1..=max_lag` (denominator is the lag-0
/// sum of squares).
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    let mut out = Vec::with_capacity(max_lag);
    for k in 1..=max_lag {
        if k >= n || denom <= 0.0 {
            out.push(0.0);
            continue;
        }
        let num: f64 = (k..n).map(|t| (x[t] - m) * (x[t - k] - m)).sum();
        out.push(num / denom);
    }
    out
}

/// One-sample Kolmogorov-Smirnov statistic against the CDF `cdf`.
/// `sorted` must be sorted ascending.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Approximate one-sample KS critical value at significance `alpha`
/// (Stephens' small-sample correction of the Kolmogorov asymptote).
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    // K_alpha = sqrt(-ln(alpha/2)/2)
    let k_alpha = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let sqrt_n = (n as f64).sqrt();
    k_alpha / (sqrt_n + 0.12 + 0.11 / sqrt_n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_triple() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(mean(&x), 2.0);
        assert_eq!(sample_sd(&x), 1.0);
        assert_eq!(skewness(&x), 0.0);
    }

    #[test]
    fn degenerate_reports_nan() {
        let x = [4.2; 10];
        assert_eq!(sample_sd(&x), 0.0);
        assert!(skewness(&x).is_nan());
        assert!(kurtosis_raw(&x).is_nan());
    }

    #[test]
    fn percentiles_type7() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_type7(&x, 0.5), 2.5);
        assert_eq!(percentile_type7(&x, 0.0), 1.0);
        assert_eq!(percentile_type7(&x, 1.0), 4.0);
        let odd = [10.0, 20.0, 30.0];
        assert_eq!(percentile_type7(&odd, 0.5), 20.0);
    }

    #[test]
    fn ks_statistic_uniform_grid() {
        // points at (i+0.5)/n under U(0,1): D = 0.5/n
        let n = 100;
        let pts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&pts, |x| x);
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_critical_magnitudes() {
        // 1% asymptotic constant is ~1.628
        let c = ks_critical(10_000, 0.01);
        assert!((c * 100.0 - 1.628).abs() < 0.01);
    }

    #[test]
    fn acf_of_constant_is_zero() {
        let x = [3.0; 50];
        assert!(acf(&x, 5).iter().all(|&r| r == 0.0));
    }
}
