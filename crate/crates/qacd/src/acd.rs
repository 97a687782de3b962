//! The ACD core: conditional-quantile recursion, observed-data
//! log-likelihood, analytic score and Hessian, observed-information standard
//! errors, stationarity and model moments.
//!
//! The conditional quantile follows the log-linear recursion
//!
//! ```text
//! log xi_t = varpi + sum_j rho_j log xi_{t-j} + sum_j sigma_j y_{t-j} / xi_{t-j}
//! ```
//!
//! and each duration is conditionally skew-QBS with that quantile. Score and
//! Hessian are exact: parameters enter the per-observation log-density only
//! through `eta(alpha, lambda)`, `log xi_t` and an explicit `1/alpha` factor,
//! so all derivatives reduce to the per-parameter log-scale sensitivity
//! `s_g = eta_g/eta - (d_g log xi_t)/2` plus first- and second-order
//! recursions for `d log xi_t` run alongside the path.

use nalgebra::{DMatrix, DVector};

use crate::dist::{self, SkewQbsParams};
use crate::error::{Error, Result};
use crate::specfun::{self, mills, ProbLevel};
use crate::stats;

/// Lag orders of the recursion: `r` autoregressive log-quantile lags and `s`
/// duration-feedback lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelOrder {
    pub r: usize,
    pub s: usize,
}

impl ModelOrder {
    pub fn new(r: usize, s: usize) -> Self {
        ModelOrder { r, s }
    }
    /// Companion dimension `max(r, s)`.
    pub fn p(&self) -> usize {
        self.r.max(self.s)
    }
    /// Number of free parameters `r + s + 3`.
    pub fn dim(&self) -> usize {
        self.r + self.s + 3
    }
}

/// Full parameter vector `(alpha, varpi, rho_1..r, sigma_1..s, lambda)` with
/// its fixed quantile level `q`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamVector {
    pub alpha: f64,
    pub varpi: f64,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda: f64,
    pub q: f64,
}

impl ParamVector {
    pub fn new(
        alpha: f64,
        varpi: f64,
        rho: Vec<f64>,
        sigma: Vec<f64>,
        lambda: f64,
        q: ProbLevel,
    ) -> Result<Self> {
        let pv = ParamVector {
            alpha,
            varpi,
            rho,
            sigma,
            lambda,
            q: q.get(),
        };
        pv.validate()?;
        Ok(pv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::domain(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !self.varpi.is_finite() || !self.lambda.is_finite() {
            return Err(Error::domain("varpi and lambda must be finite".into()));
        }
        if self.rho.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::domain("rho and sigma must be finite".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::domain(format!("q must lie in (0,1), got {}", self.q)));
        }
        Ok(())
    }

    pub fn order(&self) -> ModelOrder {
        ModelOrder::new(self.rho.len(), self.sigma.len())
    }

    pub fn dim(&self) -> usize {
        self.order().dim()
    }

    /// `delta = lambda / sqrt(1 + lambda^2)`.
    pub fn delta(&self) -> f64 {
        self.lambda / (1.0 + self.lambda * self.lambda).sqrt()
    }

    pub fn prob_level(&self) -> ProbLevel {
        ProbLevel::new(self.q).expect("validated at construction")
    }

    /// Flattened `[alpha, varpi, rho.., sigma.., lambda]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.alpha);
        v.push(self.varpi);
        v.extend_from_slice(&self.rho);
        v.extend_from_slice(&self.sigma);
        v.push(self.lambda);
        v
    }

    pub fn from_flat(flat: &[f64], order: ModelOrder, q: ProbLevel) -> Result<Self> {
        if flat.len() != order.dim() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                order.dim(),
                flat.len()
            )));
        }
        ParamVector::new(
            flat[0],
            flat[1],
            flat[2..2 + order.r].to_vec(),
            flat[2 + order.r..2 + order.r + order.s].to_vec(),
            flat[order.dim() - 1],
            q,
        )
    }

    /// Skew-QBS parameters at a given conditional quantile value.
    pub fn dist_at(&self, xi: f64) -> Result<SkewQbsParams> {
        SkewQbsParams::new(self.alpha, xi, self.lambda, self.prob_level())
    }

    /// Rescale the whole quantile path by `kappa` without changing the path
    /// shape: `varpi += (1 - sum rho) log kappa`, `sigma *= kappa`.
    pub fn rescale_xi(&self, kappa: f64) -> ParamVector {
        let mut out = self.clone();
        let rho_sum: f64 = self.rho.iter().sum();
        out.varpi += (1.0 - rho_sum) * kappa.ln();
        for s in &mut out.sigma {
            *s *= kappa;
        }
        out
    }
}

/// Strictly positive observed durations.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DurationSeries {
    y: Vec<f64>,
}

impl DurationSeries {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InsufficientData("empty duration series".into()));
        }
        if let Some((i, &v)) = y
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0) || !v.is_finite())
        {
            return Err(Error::domain(format!(
                "duration at index {i} must be positive and finite, got {v}"
            )));
        }
        Ok(DurationSeries { y })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mean(&self) -> f64 {
        stats::mean(&self.y)
    }

    /// Sample quantile (type-7).
    pub fn quantile(&self, q: ProbLevel) -> f64 {
        let mut sorted = self.y.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        stats::percentile_type7(&sorted, q.get())
    }

    /// First `k` observations as a new series.
    pub fn head(&self, k: usize) -> Result<DurationSeries> {
        DurationSeries::new(self.y[..k.min(self.y.len())].to_vec())
    }
}

/// The conditional quantile sequence produced by the recursion.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QuantilePath {
    pub xi: Vec<f64>,
}

/// Pre-sample initialization of the recursion.
///
/// `Fixed` pins both the pre-sample quantile and pre-sample durations to one
/// value (the contract of [`quantile_path`]). `SampleStats` uses the sample
/// q-quantile for the pre-sample quantile and the sample mean for pre-sample
/// durations. `UnconditionalLevel` starts the path at its fixed point
/// `exp(varpi / (1 - sum rho))` with pre-sample durations at the sample mean;
/// that point rescales exactly under [`ParamVector::rescale_xi`], which makes
/// fits invariant to relabeling of the quantile level and is what the fitting
/// layer defaults to.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PathInit {
    Fixed(f64),
    SampleStats,
    UnconditionalLevel,
}

/// Resolved pre-sample state: `x0 = log xi_0`, pre-sample duration `y0`, and
/// derivatives of `x0` in the dynamics parameters (nonzero only when the init
/// itself depends on them).
#[derive(Debug, Clone)]
pub(crate) struct ResolvedInit {
    x0: f64,
    y0: f64,
    dx0: Vec<f64>,
    d2x0: Vec<f64>, // d_dyn x d_dyn row-major
}

impl PathInit {
    pub(crate) fn resolve(&self, y: &DurationSeries, theta: &ParamVector) -> Result<ResolvedInit> {
        let order = theta.order();
        let d_dyn = 1 + order.r + order.s;
        let mut dx0 = vec![0.0; d_dyn];
        let mut d2x0 = vec![0.0; d_dyn * d_dyn];
        match self {
            PathInit::Fixed(v) => {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(Error::domain(format!("init must be positive, got {v}")));
                }
                Ok(ResolvedInit {
                    x0: v.ln(),
                    y0: *v,
                    dx0,
                    d2x0,
                })
            }
            PathInit::SampleStats => Ok(ResolvedInit {
                x0: y.quantile(theta.prob_level()).ln(),
                y0: y.mean(),
                dx0,
                d2x0,
            }),
            PathInit::UnconditionalLevel => {
                let rho_sum: f64 = theta.rho.iter().sum();
                let one_m = 1.0 - rho_sum;
                if one_m.abs() < 1e-8 {
                    return Err(Error::Overflow(
                        "unconditional level undefined: sum of rho at 1".into(),
                    ));
                }
                let x0 = theta.varpi / one_m;
                dx0[0] = 1.0 / one_m;
                for k in 0..order.r {
                    dx0[1 + k] = theta.varpi / (one_m * one_m);
                    d2x0[k + 1] = 1.0 / (one_m * one_m); // row 0, col 1+k
                    d2x0[(k + 1) * d_dyn] = 1.0 / (one_m * one_m);
                    for j in 0..order.r {
                        d2x0[(k + 1) * d_dyn + (j + 1)] =
                            2.0 * theta.varpi / (one_m * one_m * one_m);
                    }
                }
                Ok(ResolvedInit {
                    x0,
                    y0: y.mean(),
                    dx0,
                    d2x0,
                })
            }
        }
    }
}

// log xi above this means xi beyond 1e300.
const LOG_XI_OVERFLOW: f64 = 690.77552789821368;

/// Run the conditional-quantile recursion with both pre-sample quantile and
/// pre-sample durations pinned at `init`. Explosive paths are an error, never
/// silently produced.
pub fn quantile_path(y: &DurationSeries, theta: &ParamVector, init: f64) -> Result<QuantilePath> {
    quantile_path_with(y, theta, &PathInit::Fixed(init))
}

/// Run the recursion under an explicit initialization policy.
pub fn quantile_path_with(
    y: &DurationSeries,
    theta: &ParamVector,
    init: &PathInit,
) -> Result<QuantilePath> {
    theta.validate()?;
    let ri = init.resolve(y, theta)?;
    let xs = log_path(y.values(), theta, &ri)?;
    Ok(QuantilePath {
        xi: xs.iter().map(|x| x.exp()).collect(),
    })
}

fn log_path(y: &[f64], theta: &ParamVector, ri: &ResolvedInit) -> Result<Vec<f64>> {
    let n = y.len();
    let mut xs = Vec::with_capacity(n);
    for t in 0..n {
        let mut x = theta.varpi;
        for (j, &rho_j) in theta.rho.iter().enumerate() {
            x += rho_j * lag(&xs, t, j + 1, ri.x0);
        }
        for (j, &sig_j) in theta.sigma.iter().enumerate() {
            let xl = lag(&xs, t, j + 1, ri.x0);
            let yl = lag_y(y, t, j + 1, ri.y0);
            x += sig_j * yl * (-xl).exp();
        }
        if !(x < LOG_XI_OVERFLOW) {
            return Err(Error::Overflow(format!(
                "conditional quantile exceeded 1e300 at t = {t} (explosive recursion)"
            )));
        }
        xs.push(x);
    }
    Ok(xs)
}

#[inline]
fn lag(xs: &[f64], t: usize, j: usize, x0: f64) -> f64 {
    if t >= j {
        xs[t - j]
    } else {
        x0
    }
}

#[inline]
fn lag_y(y: &[f64], t: usize, j: usize, y0: f64) -> f64 {
    if t >= j {
        y[t - j]
    } else {
        y0
    }
}

// eta and its first/second derivatives in (alpha, lambda).
struct EtaPack {
    eta: f64,
    d_alpha: f64,
    d_lambda: f64,
    d_aa: f64,
    d_al: f64,
    d_ll: f64,
}

fn eta_pack(alpha: f64, lambda: f64, q: ProbLevel) -> Result<EtaPack> {
    let k = specfun::sn_quantile(q, lambda)?;
    // dk/dlambda by implicit differentiation of F_SN(k; lambda) = q:
    // k' = mills(lambda k) / (1 + lambda^2); one more pass gives k''.
    let m = lambda * k;
    let mills_m = mills(m);
    let one_l2 = 1.0 + lambda * lambda;
    let kp = mills_m / one_l2;
    let mills_prime = -mills_m * (m + mills_m);
    let kpp = mills_prime * (k + lambda * kp) / one_l2 - 2.0 * lambda * kp / one_l2;

    let g = alpha * k;
    let root = (g * g + 4.0).sqrt();
    let eta = g + root;
    let e_g = eta / root;
    let e_gg = 4.0 / (root * root * root);
    Ok(EtaPack {
        eta,
        d_alpha: k * e_g,
        d_lambda: alpha * kp * e_g,
        d_aa: k * k * e_gg,
        d_al: kp * e_g + k * e_gg * alpha * kp,
        d_ll: alpha * kpp * e_g + (alpha * kp) * (alpha * kp) * e_gg,
    })
}

const LN_DENSITY_CONST: f64 = -0.22579135264472741; // ln 2 - ln sqrt(2 pi)

#[derive(Clone, Copy, PartialEq)]
enum Want {
    LogLik,
    Score,
    Hessian,
}

struct Evaluated {
    ll: f64,
    score: Option<DVector<f64>>,
    hessian: Option<DMatrix<f64>>,
}

// One pass over the data computing the log-likelihood and, when requested,
// the exact score and Hessian.
fn evaluate(
    y: &DurationSeries,
    theta: &ParamVector,
    init: &PathInit,
    want: Want,
) -> Result<Evaluated> {
    theta.validate()?;
    let order = theta.order();
    let d = order.dim();
    let d_dyn = 1 + order.r + order.s;
    let lam = theta.lambda;
    let alpha = theta.alpha;
    let ep = eta_pack(alpha, lam, theta.prob_level())?;
    let ri = init.resolve(y, theta)?;
    let yv = y.values();
    let n = yv.len();

    let need_grad = want != Want::LogLik;
    let need_hess = want == Want::Hessian;

    let mut xs: Vec<f64> = Vec::with_capacity(n);
    let mut dxs: Vec<Vec<f64>> = if need_grad { Vec::with_capacity(n) } else { Vec::new() };
    let mut d2xs: Vec<Vec<f64>> = if need_hess { Vec::with_capacity(n) } else { Vec::new() };

    let mut ll = 0.0;
    let mut score = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);

    let mut dx = vec![0.0; d_dyn];
    let mut d2x = vec![0.0; d_dyn * d_dyn];
    let mut s_g = vec![0.0; d];
    let mut t_gd = vec![0.0; d * d];
    let mut a_g = vec![0.0; d];
    let mut ap_g = vec![0.0; d];
    let mut m_g = vec![0.0; d];

    let il = d - 1; // lambda index

    for t in 0..n {
        // path recursion with derivative states
        let mut x = theta.varpi;
        if need_grad {
            dx.iter_mut().for_each(|v| *v = 0.0);
            dx[0] = 1.0;
        }
        if need_hess {
            d2x.iter_mut().for_each(|v| *v = 0.0);
        }
        for (j, &rho_j) in theta.rho.iter().enumerate() {
            let (xl, dxl, d2xl) = lag_state(&xs, &dxs, &d2xs, t, j + 1, &ri);
            x += rho_j * xl;
            if need_grad {
                for i in 0..d_dyn {
                    dx[i] += rho_j * dxl[i];
                }
                dx[1 + j] += xl;
            }
            if need_hess {
                for i in 0..d_dyn * d_dyn {
                    d2x[i] += rho_j * d2xl[i];
                }
                let row = 1 + j;
                for i in 0..d_dyn {
                    d2x[row * d_dyn + i] += dxl[i];
                    d2x[i * d_dyn + row] += dxl[i];
                }
            }
        }
        for (j, &sig_j) in theta.sigma.iter().enumerate() {
            let (xl, dxl, d2xl) = lag_state(&xs, &dxs, &d2xs, t, j + 1, &ri);
            let yl = lag_y(yv, t, j + 1, ri.y0);
            let e = yl * (-xl).exp();
            let isig = 1 + order.r + j;
            x += sig_j * e;
            if need_grad {
                for i in 0..d_dyn {
                    dx[i] -= sig_j * e * dxl[i];
                }
                dx[isig] += e;
            }
            if need_hess {
                for gi in 0..d_dyn {
                    for di in 0..d_dyn {
                        d2x[gi * d_dyn + di] -=
                            sig_j * e * (d2xl[gi * d_dyn + di] - dxl[gi] * dxl[di]);
                    }
                }
                for i in 0..d_dyn {
                    d2x[isig * d_dyn + i] -= e * dxl[i];
                    d2x[i * d_dyn + isig] -= e * dxl[i];
                }
            }
        }
        if !(x < LOG_XI_OVERFLOW) {
            return Err(Error::Overflow(format!(
                "conditional quantile exceeded 1e300 at t = {t} (explosive recursion)"
            )));
        }
        xs.push(x);
        if need_grad {
            dxs.push(dx.clone());
        }
        if need_hess {
            d2xs.push(d2x.clone());
        }

        // per-observation log-density and derivatives
        let yt = yv[t];
        let xi = x.exp();
        let w = (yt * ep.eta * ep.eta / (4.0 * xi)).sqrt();
        let v = 1.0 / w;
        let a = (w - v) / alpha;
        let ap = (w + v) / (2.0 * alpha * yt);
        let m = lam * a;

        ll += LN_DENSITY_CONST - 0.5 * a * a + specfun::ln_std_normal_cdf(m) + ap.ln();
        if !need_grad {
            continue;
        }

        s_g.iter_mut().for_each(|v| *v = 0.0);
        s_g[0] = ep.d_alpha / ep.eta;
        s_g[il] = ep.d_lambda / ep.eta;
        for i in 0..d_dyn {
            s_g[1 + i] = -0.5 * dxs[t][i];
        }

        for g in 0..d {
            a_g[g] = 2.0 * yt * ap * s_g[g];
            ap_g[g] = a / (2.0 * yt) * s_g[g];
        }
        a_g[0] -= a / alpha;
        ap_g[0] -= ap / alpha;

        for g in 0..d {
            m_g[g] = lam * a_g[g];
        }
        m_g[il] += a;

        let mills_m = mills(m);
        for g in 0..d {
            score[g] += -a * a_g[g] + mills_m * m_g[g] + ap_g[g] / ap;
        }
        if !need_hess {
            continue;
        }

        t_gd.iter_mut().for_each(|v| *v = 0.0);
        let e2 = ep.eta * ep.eta;
        t_gd[0] = ep.d_aa / ep.eta - ep.d_alpha * ep.d_alpha / e2;
        t_gd[il] = ep.d_al / ep.eta - ep.d_alpha * ep.d_lambda / e2;
        t_gd[il * d] = t_gd[il];
        t_gd[il * d + il] = ep.d_ll / ep.eta - ep.d_lambda * ep.d_lambda / e2;
        for gi in 0..d_dyn {
            for di in 0..d_dyn {
                t_gd[(1 + gi) * d + (1 + di)] = -0.5 * d2xs[t][gi * d_dyn + di];
            }
        }

        let mills_prime = -mills_m * (m + mills_m);
        for g in 0..d {
            for dd in 0..d {
                let mut a_gd = 2.0 * yt * ap_g[dd] * s_g[g] + 2.0 * yt * ap * t_gd[g * d + dd];
                let mut ap_gd = a_g[dd] / (2.0 * yt) * s_g[g] + a / (2.0 * yt) * t_gd[g * d + dd];
                if g == 0 {
                    a_gd -= a_g[dd] / alpha;
                    ap_gd -= ap_g[dd] / alpha;
                    if dd == 0 {
                        a_gd += a / (alpha * alpha);
                        ap_gd += ap / (alpha * alpha);
                    }
                }
                let mut m_gd = lam * a_gd;
                if g == il {
                    m_gd += a_g[dd];
                }
                if dd == il {
                    m_gd += a_g[g];
                }
                hess[(g, dd)] += -a_g[g] * a_g[dd] - a * a_gd
                    + mills_prime * m_g[g] * m_g[dd]
                    + mills_m * m_gd
                    + ap_gd / ap
                    - ap_g[g] * ap_g[dd] / (ap * ap);
            }
        }
    }

    if !ll.is_finite() {
        ll = f64::NEG_INFINITY;
    }
    Ok(Evaluated {
        ll,
        score: need_grad.then_some(score),
        hessian: need_hess.then_some(hess),
    })
}

fn lag_state<'a>(
    xs: &'a [f64],
    dxs: &'a [Vec<f64>],
    d2xs: &'a [Vec<f64>],
    t: usize,
    j: usize,
    ri: &'a ResolvedInit,
) -> (f64, &'a [f64], &'a [f64]) {
    if t >= j {
        let i = t - j;
        (
            xs[i],
            if dxs.is_empty() { &ri.dx0 } else { &dxs[i] },
            if d2xs.is_empty() { &ri.d2x0 } else { &d2xs[i] },
        )
    } else {
        (ri.x0, &ri.dx0, &ri.d2x0)
    }
}

/// Observed-data log-likelihood. Overflow of the quantile recursion is an
/// error; a non-finite accumulated value is reported as `-inf` so optimizers
/// can reject the point.
pub fn loglik(y: &DurationSeries, theta: &ParamVector, init: &PathInit) -> Result<f64> {
    Ok(evaluate(y, theta, init, Want::LogLik)?.ll)
}

/// Analytic score (gradient of the log-likelihood) in the parameter order
/// `[alpha, varpi, rho.., sigma.., lambda]`.
pub fn score(y: &DurationSeries, theta: &ParamVector, init: &PathInit) -> Result<Vec<f64>> {
    Ok(evaluate(y, theta, init, Want::Score)?
        .score
        .expect("requested")
        .as_slice()
        .to_vec())
}

/// Log-likelihood and score in one pass.
pub fn loglik_score(
    y: &DurationSeries,
    theta: &ParamVector,
    init: &PathInit,
) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(y, theta, init, Want::Score)?;
    Ok((e.ll, e.score.expect("requested").as_slice().to_vec()))
}

/// Analytic Hessian of the log-likelihood.
pub fn hessian(y: &DurationSeries, theta: &ParamVector, init: &PathInit) -> Result<DMatrix<f64>> {
    Ok(evaluate(y, theta, init, Want::Hessian)?
        .hessian
        .expect("requested"))
}

/// Standard errors from the observed information: square roots of the
/// diagonal of `(-H)^{-1}` at `theta_hat`.
pub fn observed_info_se(
    y: &DurationSeries,
    theta_hat: &ParamVector,
    init: &PathInit,
) -> Result<Vec<f64>> {
    let h = hessian(y, theta_hat, init)?;
    let neg_h = -h;
    let sym = 0.5 * (&neg_h + neg_h.transpose());
    match nalgebra::Cholesky::new(sym.clone()) {
        Some(ch) => {
            let inv = ch.inverse();
            Ok((0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect())
        }
        None => {
            let eig = nalgebra::SymmetricEigen::new(sym);
            let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            Err(Error::Singular {
                condition: max / min,
                context: "negative Hessian is not positive definite at theta_hat".into(),
            })
        }
    }
}

/// Stationarity summary: the companion matrix built from `rho`, its spectral
/// radius, and the moving-average-type weights entering the moment formulas.
#[derive(Debug, Clone)]
pub struct StationaritySpec {
    pub omega: DMatrix<f64>,
    pub lambda_max: f64,
    pub stationary: bool,
    /// `phi_0 = 1, phi_l = sum_j rho_j phi_{l-j}`.
    pub phi_weights: Vec<f64>,
    /// `theta_l = sum_j sigma_j phi_{l-j}`, starting at lag 1.
    pub theta_weights: Vec<f64>,
}

/// Truncation length for the weight sequences and moment products.
pub const WEIGHT_TRUNCATION: usize = 200;

/// Build the companion matrix from `rho` (padded to `p = max(r, s)`), compute
/// its spectral radius and the weight sequences.
pub fn check_stationarity(theta: &ParamVector) -> StationaritySpec {
    let order = theta.order();
    let p = order.p();
    let rho_at = |j: usize| -> f64 { theta.rho.get(j).copied().unwrap_or(0.0) };
    let sigma_at = |j: usize| -> f64 { theta.sigma.get(j).copied().unwrap_or(0.0) };

    let omega = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            m[(0, j)] = rho_at(j);
        }
        for i in 1..p {
            m[(i, i - 1)] = 1.0;
        }
        m
    };
    let lambda_max = if p == 0 {
        0.0
    } else {
        omega
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    };

    let j_max = WEIGHT_TRUNCATION;
    let mut phi = vec![0.0; j_max + 1];
    phi[0] = 1.0;
    for l in 1..=j_max {
        let mut acc = 0.0;
        for j in 1..=l.min(p) {
            acc += rho_at(j - 1) * phi[l - j];
        }
        phi[l] = acc;
    }
    let mut theta_w = vec![0.0; j_max + 1];
    for l in 1..=j_max {
        let mut acc = 0.0;
        for j in 1..=l.min(p) {
            acc += sigma_at(j - 1) * phi[l - j];
        }
        theta_w[l] = acc;
    }

    StationaritySpec {
        omega,
        lambda_max,
        stationary: lambda_max < 1.0,
        phi_weights: phi,
        theta_weights: theta_w[1..].to_vec(),
    }
}

// E[exp(s rho) rho^m]-style integral against the unit-quantile innovation
// density, with the divergence guard needed for MGF factors.
fn innovation_expectation(
    p: &SkewQbsParams,
    s: f64,
    m_power: i32,
    guard_tail: bool,
) -> Result<f64> {
    if guard_tail && s > 0.0 {
        let y_star = dist::quantile(ProbLevel::new(1.0 - 1e-5).unwrap(), p)?;
        let g = |y: f64| (s * y).exp() * y.powi(m_power) * dist::pdf(y, p).unwrap_or(0.0);
        if g(1.05 * y_star) > g(y_star) {
            return Err(Error::NonExistence(format!(
                "MGF factor E[exp({s:.3e} rho)] diverges (integrand increasing in the tail)"
            )));
        }
    }
    dist::integrate_against_pdf(p, |y| (s * y).exp() * y.powi(m_power), 1e-11)
}

/// m-th unconditional moment of the ACD model:
/// `E[rho^m] exp(m varpi / (1 - sum rho)) prod_j E[exp(m theta_j rho)]`,
/// the innovation following the unit-quantile skew-QBS distribution, with the
/// product truncated at `j_trunc` terms (early-stopped once log-factors drop
/// below 1e-12).
pub fn acd_moment(m: u32, theta: &ParamVector, j_trunc: usize) -> Result<f64> {
    if m == 0 {
        return Ok(1.0);
    }
    let spec = check_stationarity(theta);
    if !spec.stationary {
        return Err(Error::NonExistence(format!(
            "moments require spectral radius < 1, got {:.6}",
            spec.lambda_max
        )));
    }
    let innov = SkewQbsParams::new(theta.alpha, 1.0, theta.lambda, theta.prob_level())?;
    let mu_m = innovation_expectation(&innov, 0.0, m as i32, false)?;
    let rho_sum: f64 = theta.rho.iter().sum();
    let mut log_prod = 0.0;
    for &th_j in spec.theta_weights.iter().take(j_trunc) {
        if th_j == 0.0 {
            continue;
        }
        let factor = innovation_expectation(&innov, m as f64 * th_j, 0, true)?;
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonExistence(format!(
                "MGF factor evaluated to {factor}"
            )));
        }
        let lf = factor.ln();
        log_prod += lf;
        if lf.abs() < 1e-12 {
            break;
        }
    }
    Ok(mu_m * (m as f64 * theta.varpi / (1.0 - rho_sum)).exp() * log_prod.exp())
}

/// Dispersion bound of the model: `(1 + delta_Y, 1 + delta^2)` where `delta`
/// is the innovation's coefficient of variation; the first never falls below
/// the second.
pub fn dispersion_index(theta: &ParamVector, j_trunc: usize) -> Result<(f64, f64)> {
    let spec = check_stationarity(theta);
    if !spec.stationary {
        return Err(Error::NonExistence(format!(
            "dispersion index requires spectral radius < 1, got {:.6}",
            spec.lambda_max
        )));
    }
    let innov = SkewQbsParams::new(theta.alpha, 1.0, theta.lambda, theta.prob_level())?;
    let mu1 = innovation_expectation(&innov, 0.0, 1, false)?;
    let mu2 = innovation_expectation(&innov, 0.0, 2, false)?;
    let delta2 = (mu2 - mu1 * mu1) / (mu1 * mu1);

    let mut log_ratio = 0.0;
    for &th_j in spec.theta_weights.iter().take(j_trunc) {
        if th_j == 0.0 {
            continue;
        }
        let f2 = innovation_expectation(&innov, 2.0 * th_j, 0, true)?;
        let f1 = innovation_expectation(&innov, th_j, 0, true)?;
        let inc = f2.ln() - 2.0 * f1.ln();
        log_ratio += inc;
        if f2.ln().abs() < 1e-12 {
            break;
        }
    }
    Ok(((1.0 + delta2) * log_ratio.exp(), 1.0 + delta2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(v: f64) -> ProbLevel {
        ProbLevel::new(v).unwrap()
    }

    fn theta_rs11(alpha: f64, varpi: f64, rho: f64, sigma: f64, lambda: f64, q: f64) -> ParamVector {
        ParamVector::new(alpha, varpi, vec![rho], vec![sigma], lambda, pl(q)).unwrap()
    }

    fn simulate_for_test(theta: &ParamVector, n: usize, seed: u64) -> DurationSeries {
        use rand::SeedableRng;
        let mut rng = crate::Rng::seed_from_u64(seed);
        crate::mcstudy::simulate_series(theta, n, &PathInit::UnconditionalLevel, 50, &mut rng)
            .unwrap()
    }

    #[test]
    fn static_path_is_constant() {
        let y = DurationSeries::new(vec![0.5, 2.0, 1.0, 0.3]).unwrap();
        let theta = ParamVector::new(0.5, 0.4, vec![], vec![], 0.0, pl(0.5)).unwrap();
        let path = quantile_path(&y, &theta, 1.0).unwrap();
        for v in &path.xi {
            assert!((v - 0.4_f64.exp()).abs() < 1e-15);
        }
        // init unused when no lags reach back
        let path2 = quantile_path(&y, &theta, 2.0).unwrap();
        assert_eq!(path.xi, path2.xi);
    }

    #[test]
    fn three_step_hand_recursion() {
        let y = DurationSeries::new(vec![1.0, 2.0, 1.0]).unwrap();
        let theta = theta_rs11(0.5, 0.2, 0.7, 0.1, 0.0, 0.5);
        let path = quantile_path(&y, &theta, 1.0).unwrap();
        let xi1 = (0.2 + 0.7 * 0.0 + 0.1 * 1.0 / 1.0_f64).exp();
        let xi2 = (0.2 + 0.7 * xi1.ln() + 0.1 * 1.0 / xi1).exp();
        let xi3 = (0.2 + 0.7 * xi2.ln() + 0.1 * 2.0 / xi2).exp();
        assert!((path.xi[0] - xi1).abs() < 1e-15);
        assert!((path.xi[1] - xi2).abs() < 1e-14);
        assert!((path.xi[2] - xi3).abs() < 1e-14);
    }

    #[test]
    fn explosive_recursion_is_reported() {
        let y = DurationSeries::new(vec![1.0; 400]).unwrap();
        let theta = theta_rs11(0.5, 2.5, 1.9, 0.0, 0.0, 0.5);
        match quantile_path(&y, &theta, 1.0) {
            Err(Error::Overflow(_)) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn single_point_loglik_matches_density() {
        let y = DurationSeries::new(vec![1.3]).unwrap();
        let theta = ParamVector::new(0.5, 0.4, vec![], vec![], -0.7, pl(0.3)).unwrap();
        let ll = loglik(&y, &theta, &PathInit::Fixed(1.0)).unwrap();
        let p = theta.dist_at(0.4_f64.exp()).unwrap();
        assert!((ll - dist::ln_pdf(1.3, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let truth = theta_rs11(0.5, 0.2, 0.7, 0.1, -0.5, 0.35);
        let y = simulate_for_test(&truth, 200, 42);
        for init in [
            PathInit::Fixed(1.3),
            PathInit::UnconditionalLevel,
            PathInit::SampleStats,
        ] {
            for trial in 0..3 {
                let mut theta = truth.clone();
                theta.alpha += 0.03 * (trial as f64 - 1.0);
                theta.varpi -= 0.02 * trial as f64;
                theta.rho[0] -= 0.04 * trial as f64;
                theta.sigma[0] += 0.01 * trial as f64;
                theta.lambda += 0.15 * (trial as f64 - 1.0);
                let sc = score(&y, &theta, &init).unwrap();
                let flat = theta.to_flat();
                for i in 0..flat.len() {
                    let h = 2e-6 * (1.0 + flat[i].abs());
                    let mut up = flat.clone();
                    up[i] += h;
                    let mut dn = flat.clone();
                    dn[i] -= h;
                    let tu = ParamVector::from_flat(&up, theta.order(), pl(0.35)).unwrap();
                    let td = ParamVector::from_flat(&dn, theta.order(), pl(0.35)).unwrap();
                    let fd = (loglik(&y, &tu, &init).unwrap() - loglik(&y, &td, &init).unwrap())
                        / (2.0 * h);
                    let rel = (sc[i] - fd).abs() / fd.abs().max(1e-4);
                    assert!(
                        rel < 1e-5,
                        "init {init:?} trial {trial} param {i}: {} vs {fd}",
                        sc[i]
                    );
                }
            }
        }
    }

    #[test]
    fn hessian_matches_score_differences_and_is_symmetric() {
        let truth = theta_rs11(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let y = simulate_for_test(&truth, 200, 7);
        let init = PathInit::UnconditionalLevel;
        let h_mat = hessian(&y, &truth, &init).unwrap();
        let max_h = h_mat.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let asym = (&h_mat - h_mat.transpose())
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b.abs()));
        assert!(asym < 1e-8 * max_h, "asymmetry {asym}");

        let flat = truth.to_flat();
        for i in 0..flat.len() {
            let h = 2e-6 * (1.0 + flat[i].abs());
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let tu = ParamVector::from_flat(&up, truth.order(), pl(0.5)).unwrap();
            let td = ParamVector::from_flat(&dn, truth.order(), pl(0.5)).unwrap();
            let su = score(&y, &tu, &init).unwrap();
            let sd = score(&y, &td, &init).unwrap();
            for j in 0..flat.len() {
                let fd = (su[j] - sd[j]) / (2.0 * h);
                let rel = (h_mat[(j, i)] - fd).abs() / fd.abs().max(1e-2);
                assert!(rel < 1e-4, "entry ({j},{i}): {} vs {fd}", h_mat[(j, i)]);
            }
        }
    }

    #[test]
    fn rescale_xi_scales_path_exactly_under_unconditional_init() {
        let theta = theta_rs11(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let y = simulate_for_test(&theta, 300, 3);
        let init = PathInit::UnconditionalLevel;
        let kappa = 1.7;
        let scaled = theta.rescale_xi(kappa);
        let p1 = quantile_path_with(&y, &theta, &init).unwrap();
        let p2 = quantile_path_with(&y, &scaled, &init).unwrap();
        for (a, b) in p1.xi.iter().zip(&p2.xi) {
            assert!((b / a - kappa).abs() < 1e-12 * kappa);
        }
        let base = loglik(&y, &theta, &init).unwrap();
        let undone = scaled.rescale_xi(1.0 / kappa);
        let ll2 = loglik(&y, &undone, &init).unwrap();
        assert!((base - ll2).abs() < 1e-9);
    }

    #[test]
    fn observed_info_se_finite_and_deterministic() {
        let truth = theta_rs11(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let y = simulate_for_test(&truth, 800, 11);
        let init = PathInit::UnconditionalLevel;
        let se1 = observed_info_se(&y, &truth, &init).unwrap();
        let se2 = observed_info_se(&y, &truth, &init).unwrap();
        assert_eq!(se1, se2);
        assert!(se1.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn stationarity_companion_cases() {
        let t1 = theta_rs11(0.5, 0.1, 0.7, 0.05, 0.0, 0.5);
        let s1 = check_stationarity(&t1);
        assert!((s1.lambda_max - 0.7).abs() < 1e-12);
        assert!(s1.stationary);

        let t2 = theta_rs11(0.5, 0.1, 1.0, 0.05, 0.0, 0.5);
        let s2 = check_stationarity(&t2);
        assert!((s2.lambda_max - 1.0).abs() < 1e-12);
        assert!(!s2.stationary);

        // r = 2: largest root modulus of z^2 - 0.5 z - 0.3
        let t3 = ParamVector::new(0.5, 0.1, vec![0.5, 0.3], vec![0.05], 0.0, pl(0.5)).unwrap();
        let s3 = check_stationarity(&t3);
        let root = (0.5 + (0.25_f64 + 1.2).sqrt()) / 2.0;
        assert!(
            (s3.lambda_max - root).abs() < 1e-10,
            "{} vs {root}",
            s3.lambda_max
        );
    }

    #[test]
    fn theta_weights_geometric_for_order_one() {
        let t = theta_rs11(0.5, 0.1, 0.6, 0.2, 0.0, 0.5);
        let s = check_stationarity(&t);
        for (j, &w) in s.theta_weights.iter().take(10).enumerate() {
            let expect = 0.2 * 0.6_f64.powi(j as i32);
            assert!((w - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_collapses_without_feedback() {
        // sigma = 0, rho = 0: E[Y] = E[rho_t] exp(varpi)
        let t = ParamVector::new(0.5, 0.3, vec![0.0], vec![0.0], -0.5, pl(0.5)).unwrap();
        let m1 = acd_moment(1, &t, 200).unwrap();
        let innov = SkewQbsParams::new(0.5, 1.0, -0.5, pl(0.5)).unwrap();
        let mu1 = dist::integrate_against_pdf(&innov, |y| y, 1e-11).unwrap();
        assert!((m1 - mu1 * 0.3_f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn moment_requires_stationarity() {
        let t = theta_rs11(0.5, 0.1, 1.05, 0.05, 0.0, 0.5);
        assert!(matches!(acd_moment(1, &t, 100), Err(Error::NonExistence(_))));
    }

    #[test]
    fn mgf_divergence_detected() {
        // feedback strong enough that exp(theta_1 rho) is not integrable
        // against the innovation's exponential-type tail
        let t = theta_rs11(1.0, 0.1, 0.0, 3.0, 0.0, 0.5);
        assert!(matches!(acd_moment(1, &t, 50), Err(Error::NonExistence(_))));
    }

    #[test]
    fn dispersion_index_bound() {
        let t = theta_rs11(0.5, 0.2, 0.7, 0.05, -0.5, 0.5);
        let (lhs, rhs) = dispersion_index(&t, 200).unwrap();
        assert!(lhs >= rhs - 1e-10, "{lhs} < {rhs}");
    }

    #[test]
    fn moment_truncation_stability() {
        let t = theta_rs11(0.5, 0.2, 0.7, 0.05, -0.5, 0.5);
        let a = acd_moment(1, &t, 100).unwrap();
        let b = acd_moment(1, &t, 200).unwrap();
        assert!((a - b).abs() / b.abs() < 1e-3);
    }
}
