//! Model validation and comparison: generalized Cox-Snell residuals,
//! residual summaries, Ljung-Box tests, QQ plots with simulated envelopes,
//! information criteria, and quantile forecasting with MSE scoring.

use rand::Rng as _;

use crate::acd::{self, DurationSeries, ParamVector, PathInit};
use crate::dist;
use crate::error::{Error, Result};
use crate::specfun::ProbLevel;
use crate::stats;

/// Generalized Cox-Snell residuals `-log S(y_t | past)`; unit-exponential
/// under a correctly specified model. `capped` counts deep-tail observations
/// whose survival underflowed and were pinned at the documented ceiling.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualSeries {
    pub values: Vec<f64>,
    pub capped: usize,
}

/// Residuals of a fitted skew-QBS-ACD model.
pub fn gcs_residuals(
    y: &DurationSeries,
    theta_hat: &ParamVector,
    init: &PathInit,
) -> Result<ResidualSeries> {
    let path = acd::quantile_path_with(y, theta_hat, init)?;
    let mut values = Vec::with_capacity(y.len());
    let mut capped = 0;
    for t in 0..y.len() {
        let p = theta_hat.dist_at(path.xi[t])?;
        let s = dist::survival(y.values()[t], &p)?;
        if s < dist::SURVIVAL_UNDERFLOW {
            values.push(-dist::SURVIVAL_UNDERFLOW.ln());
            capped += 1;
        } else {
            values.push(-s.ln());
        }
    }
    Ok(ResidualSeries { values, capped })
}

/// Four-number residual summary: mean, standard deviation, skewness and raw
/// kurtosis (the convention under which the unit exponential reports 9).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn residual_summary(r: &ResidualSeries) -> ResidualSummary {
    ResidualSummary {
        mean: stats::mean(&r.values),
        sd: stats::sample_sd(&r.values),
        skewness: stats::skewness(&r.values),
        kurtosis: stats::kurtosis_raw(&r.values),
    }
}

/// Ljung-Box portmanteau test result.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
    pub df: usize,
    /// True when the degrees of freedom had to be floored at 1.
    pub df_floored: bool,
}

/// Ljung-Box statistic `Q = n(n+2) sum_k r_k^2/(n-k)` with a chi-square
/// p-value on `lags - fitted_params` degrees of freedom, floored at 1.
pub fn ljung_box(x: &[f64], lags: usize, fitted_params: usize) -> Result<LjungBox> {
    let n = x.len();
    if lags >= n {
        return Err(Error::domain(format!(
            "lags ({lags}) must be below the sample size ({n})"
        )));
    }
    let r = stats::acf(x, lags);
    let nf = n as f64;
    let q: f64 = nf
        * (nf + 2.0)
        * r.iter()
            .enumerate()
            .map(|(k1, &rk)| rk * rk / (nf - (k1 + 1) as f64))
            .sum::<f64>();
    let df_floored = lags <= fitted_params;
    let df = lags.saturating_sub(fitted_params).max(1);
    // chi-square survival via the regularized upper incomplete gamma
    let p_value = if q <= 0.0 {
        1.0
    } else {
        1.0 - statrs::function::gamma::gamma_lr(df as f64 / 2.0, q / 2.0)
    };
    Ok(LjungBox {
        statistic: q,
        p_value,
        lags,
        df,
        df_floored,
    })
}

/// Simulated envelope for a QQ plot of unit-exponential residuals.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnvelopeBand {
    /// Blom-type theoretical quantiles `-log(1 - (i - 0.375)/(n + 0.25))`.
    pub theoretical: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub observed_sorted: Vec<f64>,
    pub level: f64,
}

impl EnvelopeBand {
    /// Fraction of observed order statistics falling outside the band.
    pub fn fraction_outside(&self) -> f64 {
        let n = self.observed_sorted.len();
        let outside = self
            .observed_sorted
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(o, (lo, hi))| *o < lo || *o > hi)
            .count();
        outside as f64 / n as f64
    }
}

/// Build a pointwise envelope from `reps` simulated unit-exponential samples
/// of the residuals' size.
pub fn qq_envelope<R: rand::Rng + ?Sized>(
    r: &ResidualSeries,
    reps: usize,
    level: ProbLevel,
    rng: &mut R,
) -> Result<EnvelopeBand> {
    if reps < 19 {
        return Err(Error::domain(format!(
            "envelope needs at least 19 replicates, got {reps}"
        )));
    }
    let n = r.values.len();
    let mut sims: Vec<Vec<f64>> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut s: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sims.push(s);
    }
    let lo_p = (1.0 - level.get()) / 2.0;
    let hi_p = 1.0 - lo_p;
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut column = vec![0.0; reps];
    for i in 0..n {
        for (k, s) in sims.iter().enumerate() {
            column[k] = s[i];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(stats::percentile_type7(&column, lo_p));
        upper.push(stats::percentile_type7(&column, hi_p));
    }
    let nf = n as f64;
    let theoretical = (1..=n)
        .map(|i| -(1.0 - (i as f64 - 0.375) / (nf + 0.25)).ln())
        .collect();
    let mut observed_sorted = r.values.clone();
    observed_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EnvelopeBand {
        theoretical,
        lower,
        upper,
        observed_sorted,
        level: level.get(),
    })
}

/// `(aic, bic) = (-2 ll + 2k, -2 ll + k log n)`.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let aic = -2.0 * loglik + 2.0 * k as f64;
    let bic = -2.0 * loglik + k as f64 * (n as f64).ln();
    (aic, bic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    InSample,
    OutOfSample,
}

/// Quantile forecasts and their mean squared error against realizations.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ForecastResult {
    /// 0-based time indices of the evaluation window.
    pub indices: Vec<usize>,
    pub predicted: Vec<f64>,
    pub realized: Vec<f64>,
    pub mse: f64,
}

/// Conditional-quantile forecasts.
///
/// `InSample` evaluates the fitted path over the whole series. `OutOfSample`
/// keeps `theta_hat` frozen (the caller fits it on the first `split` fraction)
/// and rolls the recursion through the holdout with realized lagged durations,
/// so every prediction is one-step-ahead; the MSE covers only the holdout.
pub fn forecast_quantile(
    y: &DurationSeries,
    theta_hat: &ParamVector,
    split: f64,
    mode: ForecastMode,
    init: &PathInit,
) -> Result<ForecastResult> {
    let n = y.len();
    let path = acd::quantile_path_with(y, theta_hat, init)?;
    let start = match mode {
        ForecastMode::InSample => 0,
        ForecastMode::OutOfSample => {
            if !(split > 0.0 && split < 1.0) {
                return Err(Error::domain(format!(
                    "split must lie in (0,1), got {split}"
                )));
            }
            ((n as f64) * split).ceil() as usize
        }
    };
    if start >= n {
        return Err(Error::InsufficientData(
            "no observations left in the evaluation window".into(),
        ));
    }
    let indices: Vec<usize> = (start..n).collect();
    let predicted: Vec<f64> = indices.iter().map(|&t| path.xi[t]).collect();
    let realized: Vec<f64> = indices.iter().map(|&t| y.values()[t]).collect();
    let mse = predicted
        .iter()
        .zip(&realized)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / indices.len() as f64;
    Ok(ForecastResult {
        indices,
        predicted,
        realized,
        mse,
    })
}
