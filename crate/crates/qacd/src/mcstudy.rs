//! Monte Carlo harness: simulate skew-QBS-ACD series, run replicated fits,
//! and tabulate estimator and residual statistics.
//!
//! Replications execute independently (optionally in parallel) with seeds
//! derived from the base seed by a counter-based split, so results are
//! bit-reproducible regardless of the worker count; aggregation is a
//! deterministic fold in replication order.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::acd::{DurationSeries, ParamVector, PathInit};
use crate::diagnostics::{self, ResidualSummary};
use crate::error::{Error, Result};
use crate::estimate::{self, EcmConfig};
use crate::stats;

/// One simulation cell: generating parameters and a sample size.
#[derive(Debug, Clone)]
pub struct McCell {
    pub label: String,
    pub theta: ParamVector,
    pub n: usize,
}

/// A full study design over one or more cells.
#[derive(Debug, Clone)]
pub struct McDesign {
    pub cells: Vec<McCell>,
    pub replications: usize,
    pub base_seed: u64,
    /// Discarded pre-sample observations per simulated series.
    pub burn_in: usize,
    pub ecm: EcmConfig,
}

impl McDesign {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::domain("a study needs at least 2 replications".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::domain("a study needs at least one cell".into()));
        }
        if let Some(c) = self.cells.iter().find(|c| c.n < 50) {
            return Err(Error::domain(format!(
                "cell '{}' has n = {} below the minimum of 50",
                c.label, c.n
            )));
        }
        Ok(())
    }
}

/// Simulate a series of length `n` from the model: at each step the
/// conditional quantile comes from the recursion on the realized past, a
/// skew-normal innovation is drawn through its half-normal/normal
/// representation, and the duration is its quantile-anchored transform.
/// The first `burn_in` observations are discarded.
pub fn simulate_series<R: rand::Rng + ?Sized>(
    theta: &ParamVector,
    n: usize,
    init: &PathInit,
    burn_in: usize,
    rng: &mut R,
) -> Result<DurationSeries> {
    theta.validate()?;
    if n == 0 {
        return Err(Error::domain("cannot simulate an empty series".into()));
    }
    let order = theta.order();
    let delta = theta.delta();
    let root = (1.0 - delta * delta).sqrt();
    let eta = crate::dist::eta(theta.alpha, theta.lambda, theta.prob_level())?;

    // resolve the pre-sample state; data-dependent policies fall back to the
    // unconditional level because there is no observed sample yet
    let rho_sum: f64 = theta.rho.iter().sum();
    let (x0, y0) = match init {
        PathInit::Fixed(v) => (v.ln(), *v),
        _ => {
            if (1.0 - rho_sum).abs() < 1e-8 {
                return Err(Error::Overflow(
                    "unconditional level undefined: sum of rho at 1".into(),
                ));
            }
            let x0 = theta.varpi / (1.0 - rho_sum);
            (x0, x0.exp())
        }
    };

    let total = n + burn_in;
    let mut xs: Vec<f64> = Vec::with_capacity(total);
    let mut ys: Vec<f64> = Vec::with_capacity(total);
    for t in 0..total {
        let mut x = theta.varpi;
        for (j, &rho_j) in theta.rho.iter().enumerate() {
            let xl = if t > j { xs[t - j - 1] } else { x0 };
            x += rho_j * xl;
        }
        for (j, &sig_j) in theta.sigma.iter().enumerate() {
            let (xl, yl) = if t > j {
                (xs[t - j - 1], ys[t - j - 1])
            } else {
                (x0, y0)
            };
            x += sig_j * yl * (-xl).exp();
        }
        if !(x < 690.0) {
            return Err(Error::Overflow(format!(
                "conditional quantile exceeded 1e300 at t = {t} during simulation"
            )));
        }
        let u: f64 = StandardNormal.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        let sn = delta * u.abs() + root * z;
        let g = theta.alpha * sn;
        let tform = g + (g * g + 4.0).sqrt();
        let y = x.exp() / (eta * eta) * tform * tform;
        xs.push(x);
        ys.push(y);
        let _ = order;
    }
    DurationSeries::new(ys.split_off(burn_in))
}

/// Summary of one estimator across replications.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McParamStats {
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub skewness: f64,
    /// Excess kurtosis of the estimator draws.
    pub kurtosis: f64,
}

/// Per-cell aggregation of a parameter-recovery study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McCellSummary {
    pub label: String,
    pub n: usize,
    pub q: f64,
    pub params: Vec<McParamStats>,
    pub included: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct McSummary {
    pub cells: Vec<McCellSummary>,
    pub replications: usize,
}

/// Per-cell aggregation of residual summaries (means across replications).
#[derive(Debug, Clone, serde::Serialize)]
pub struct McResidualCell {
    pub label: String,
    pub n: usize,
    pub q: f64,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub included: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct McResidualSummary {
    pub cells: Vec<McResidualCell>,
    pub replications: usize,
}

// counter-based per-replication seed: avalanche the (base, index) pair so
// parallel execution order cannot matter
fn replication_seed(base: u64, cell: usize, rep: usize) -> u64 {
    let mut z = base
        ^ (cell as u64).wrapping_mul(0x9E3779B97F4A7C15)
        ^ (rep as u64).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct Replication {
    theta_hat: Option<Vec<f64>>,
    residual: Option<ResidualSummary>,
}

fn run_replication(design: &McDesign, cell_idx: usize, rep: usize) -> Replication {
    let cell = &design.cells[cell_idx];
    let seed = replication_seed(design.base_seed, cell_idx, rep);
    let mut rng = crate::Rng::seed_from_u64(seed);
    let failed = Replication {
        theta_hat: None,
        residual: None,
    };
    let Ok(y) = simulate_series(
        &cell.theta,
        cell.n,
        &PathInit::UnconditionalLevel,
        design.burn_in,
        &mut rng,
    ) else {
        return failed;
    };
    let q = cell.theta.prob_level();
    let order = cell.theta.order();
    let Ok(start) = estimate::starting_values(&y, q, order) else {
        return failed;
    };
    let Ok(report) = estimate::fit_ecm(&y, q, order, &design.ecm, &start) else {
        return failed;
    };
    if !report.converged {
        return failed;
    }
    let Some(theta_hat) = report.theta else {
        return failed;
    };
    let residual = diagnostics::gcs_residuals(&y, &theta_hat, &design.ecm.init)
        .ok()
        .map(|r| diagnostics::residual_summary(&r));
    Replication {
        theta_hat: Some(theta_hat.to_flat()),
        residual,
    }
}

fn param_names(theta: &ParamVector) -> Vec<String> {
    let order = theta.order();
    let mut names = vec!["alpha".to_string(), "varpi".to_string()];
    for j in 1..=order.r {
        names.push(format!("rho{j}"));
    }
    for j in 1..=order.s {
        names.push(format!("sigma{j}"));
    }
    names.push("lambda".to_string());
    names
}

/// Run the full study once, producing both the estimator table and the
/// residual table from the same fitted replications.
pub fn run_study(design: &McDesign) -> Result<(McSummary, McResidualSummary)> {
    design.validate()?;
    let mut cells = Vec::with_capacity(design.cells.len());
    let mut res_cells = Vec::with_capacity(design.cells.len());
    for (ci, cell) in design.cells.iter().enumerate() {
        let reps: Vec<Replication> = (0..design.replications)
            .into_par_iter()
            .map(|rep| run_replication(design, ci, rep))
            .collect();
        let estimates: Vec<&Vec<f64>> = reps.iter().filter_map(|r| r.theta_hat.as_ref()).collect();
        let failures = design.replications - estimates.len();
        if failures * 2 > design.replications {
            return Err(Error::Convergence(format!(
                "cell '{}': {} of {} replications failed",
                cell.label, failures, design.replications
            )));
        }
        let truth = cell.theta.to_flat();
        let names = param_names(&cell.theta);
        let mut params = Vec::with_capacity(truth.len());
        for (i, name) in names.iter().enumerate() {
            let draws: Vec<f64> = estimates.iter().map(|e| e[i]).collect();
            let mean = stats::mean(&draws);
            let bias = mean - truth[i];
            let rmse = (draws
                .iter()
                .map(|v| (v - truth[i]) * (v - truth[i]))
                .sum::<f64>()
                / draws.len() as f64)
                .sqrt();
            params.push(McParamStats {
                name: name.clone(),
                true_value: truth[i],
                mean,
                bias,
                rmse,
                skewness: stats::skewness(&draws),
                kurtosis: stats::kurtosis_excess(&draws),
            });
        }
        cells.push(McCellSummary {
            label: cell.label.clone(),
            n: cell.n,
            q: cell.theta.q,
            params,
            included: estimates.len(),
            failures,
        });

        let residuals: Vec<&ResidualSummary> =
            reps.iter().filter_map(|r| r.residual.as_ref()).collect();
        let agg = |f: fn(&ResidualSummary) -> f64| -> f64 {
            let vals: Vec<f64> = residuals.iter().map(|r| f(r)).collect();
            stats::mean(&vals)
        };
        res_cells.push(McResidualCell {
            label: cell.label.clone(),
            n: cell.n,
            q: cell.theta.q,
            mean: agg(|r| r.mean),
            sd: agg(|r| r.sd),
            skewness: agg(|r| r.skewness),
            kurtosis: agg(|r| r.kurtosis),
            included: residuals.len(),
            failures: design.replications - residuals.len(),
        });
    }
    Ok((
        McSummary {
            cells,
            replications: design.replications,
        },
        McResidualSummary {
            cells: res_cells,
            replications: design.replications,
        },
    ))
}

/// Estimator recovery study: simulate, fit, aggregate mean/bias/RMSE and the
/// shape coefficients of every estimator.
pub fn run_parameter_study(design: &McDesign) -> Result<McSummary> {
    Ok(run_study(design)?.0)
}

/// Residual calibration study: simulate, fit, and average the four residual
/// summary statistics across replications.
pub fn run_residual_study(design: &McDesign) -> Result<McResidualSummary> {
    Ok(run_study(design)?.1)
}

/// Render the estimator table as CSV: one row per (cell, parameter, statistic).
pub fn parameter_study_csv(summary: &McSummary) -> String {
    let mut out = String::from("cell,n,q,parameter,statistic,value\n");
    for cell in &summary.cells {
        for p in &cell.params {
            for (stat, value) in [
                ("true", p.true_value),
                ("mean", p.mean),
                ("bias", p.bias),
                ("rmse", p.rmse),
                ("skewness", p.skewness),
                ("kurtosis", p.kurtosis),
            ] {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    cell.label, cell.n, cell.q, p.name, stat, value
                ));
            }
        }
    }
    out
}

/// Render the residual table as CSV: one row per (cell, statistic).
pub fn residual_study_csv(summary: &McResidualSummary) -> String {
    let mut out = String::from("cell,n,q,statistic,value\n");
    for cell in &summary.cells {
        for (stat, value) in [
            ("mean", cell.mean),
            ("sd", cell.sd),
            ("skewness", cell.skewness),
            ("kurtosis", cell.kurtosis),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                cell.label, cell.n, cell.q, stat, value
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::ProbLevel;

    fn pl(v: f64) -> ProbLevel {
        ProbLevel::new(v).unwrap()
    }

    fn theta(alpha: f64, varpi: f64, rho: f64, sigma: f64, lambda: f64, q: f64) -> ParamVector {
        ParamVector::new(alpha, varpi, vec![rho], vec![sigma], lambda, pl(q)).unwrap()
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let t = theta(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let mut r1 = crate::Rng::seed_from_u64(9);
        let mut r2 = crate::Rng::seed_from_u64(9);
        let y1 = simulate_series(&t, 100, &PathInit::UnconditionalLevel, 20, &mut r1).unwrap();
        let y2 = simulate_series(&t, 100, &PathInit::UnconditionalLevel, 20, &mut r2).unwrap();
        assert_eq!(y1.values(), y2.values());
    }

    #[test]
    fn quantile_fraction_matches_level() {
        // fraction of y_t at or below the conditional quantile is about q
        let t = theta(0.5, 0.2, 0.7, 0.1, -0.5, 0.2);
        let mut rng = crate::Rng::seed_from_u64(3);
        let n = 50_000;
        let y = simulate_series(&t, n, &PathInit::UnconditionalLevel, 100, &mut rng).unwrap();
        let path = crate::acd::quantile_path_with(&y, &t, &PathInit::UnconditionalLevel).unwrap();
        let frac = y
            .values()
            .iter()
            .zip(&path.xi)
            .filter(|(y, xi)| y <= xi)
            .count() as f64
            / n as f64;
        assert!(
            (frac - 0.2).abs() < 4.0 * (0.2 * 0.8 / n as f64).sqrt() + 0.01,
            "fraction {frac}"
        );
    }

    #[test]
    fn iid_static_case_matches_distribution() {
        // rho = sigma = 0, lambda = 0, q = 0.5: iid Birnbaum-Saunders draws
        let t = ParamVector::new(0.5, 0.3, vec![], vec![], 0.0, pl(0.5)).unwrap();
        let mut rng = crate::Rng::seed_from_u64(14);
        let y = simulate_series(&t, 20_000, &PathInit::UnconditionalLevel, 0, &mut rng).unwrap();
        let p = t.dist_at(0.3_f64.exp()).unwrap();
        let mut sorted = y.values().to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = stats::ks_statistic(&sorted, |v| crate::dist::cdf(v, &p).unwrap());
        assert!(d < stats::ks_critical(20_000, 0.01), "KS {d}");
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for cell in 0..3 {
            for rep in 0..100 {
                assert!(seen.insert(replication_seed(42, cell, rep)));
            }
        }
    }

    #[test]
    fn degenerate_two_rep_study_bias() {
        // tiny study exercising the aggregation identities
        let t = theta(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let design = McDesign {
            cells: vec![McCell {
                label: "tiny".into(),
                theta: t.clone(),
                n: 300,
            }],
            replications: 2,
            base_seed: 7,
            burn_in: 50,
            ecm: EcmConfig::default(),
        };
        let (summary, res) = run_study(&design).unwrap();
        let cell = &summary.cells[0];
        assert_eq!(cell.included + cell.failures, 2);
        for p in &cell.params {
            // rmse^2 = bias^2 + variance (n-denominator), exactly
            let draws_var = p.rmse * p.rmse - p.bias * p.bias;
            assert!(draws_var >= -1e-10 * p.rmse * p.rmse);
            assert!(p.rmse >= p.bias.abs() - 1e-12);
        }
        assert_eq!(res.cells[0].included + res.cells[0].failures, 2);
        // CSV emitters include every cell row
        let csv1 = parameter_study_csv(&summary);
        assert!(csv1.lines().count() > 1 + 5 * 5);
        let csv2 = residual_study_csv(&res);
        assert_eq!(csv2.lines().count(), 1 + 4);
    }

    #[test]
    fn study_is_bit_reproducible() {
        let t = theta(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let mk = || McDesign {
            cells: vec![McCell {
                label: "c".into(),
                theta: t.clone(),
                n: 200,
            }],
            replications: 3,
            base_seed: 11,
            burn_in: 30,
            ecm: EcmConfig::default(),
        };
        let a = run_parameter_study(&mk()).unwrap();
        let b = run_parameter_study(&mk()).unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            for (pa, pb) in ca.params.iter().zip(&cb.params) {
                assert_eq!(pa.mean.to_bits(), pb.mean.to_bits());
                assert_eq!(pa.rmse.to_bits(), pb.rmse.to_bits());
            }
        }
    }

    #[test]
    fn design_validation() {
        let t = theta(0.5, 0.2, 0.7, 0.1, -0.5, 0.5);
        let bad = McDesign {
            cells: vec![McCell {
                label: "x".into(),
                theta: t,
                n: 10,
            }],
            replications: 2,
            base_seed: 0,
            burn_in: 0,
            ecm: EcmConfig::default(),
        };
        assert!(bad.validate().is_err());
    }
}
