//! Quasi-Newton maximization: BFGS with a strong-Wolfe line search.
//!
//! The objective is supplied as a closure returning the function value and
//! gradient; infeasible points signal themselves with `f = -inf`, which the
//! line search treats as a rejected step. Everything here maximizes (the
//! likelihood convention of the crate); internally the update formulas are
//! the usual descent ones applied to `-f`.

/// Options for [`bfgs_max`].
#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the gradient sup-norm falls below this.
    pub grad_tol: f64,
    /// Stop once the improvement in `f` falls below this.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 300,
            grad_tol: 1e-8,
            f_tol: 1e-12,
        }
    }
}

/// Result of a BFGS run. `converged` means the gradient or improvement
/// tolerance was met; otherwise the best iterate found is still returned.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failures: usize,
    /// Objective value after each accepted iteration.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Maximize `f` from `x0`. The closure returns `(value, gradient)`; a value
/// of `-inf` (or NaN) marks the point infeasible.
pub fn bfgs_max(
    mut fg: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    opts: &BfgsOptions,
) -> BfgsResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut trace = vec![f];
    let mut line_search_failures = 0;

    if !f.is_finite() {
        return BfgsResult {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: false,
            line_search_failures: 1,
            trace,
        };
    }

    // inverse Hessian approximation (of the negated objective)
    let mut h_inv = vec![0.0; n * n];
    for i in 0..n {
        h_inv[i * n + i] = 1.0;
    }

    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        iterations += 1;
        if sup_norm(&g) <= opts.grad_tol {
            converged = true;
            break;
        }
        // direction d = H_inv * g (ascent)
        let mut d = vec![0.0; n];
        for i in 0..n {
            d[i] = (0..n).map(|j| h_inv[i * n + j] * g[j]).sum();
        }
        let mut slope = dot(&g, &d);
        if slope <= 0.0 {
            // reset to steepest ascent
            h_inv.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                h_inv[i * n + i] = 1.0;
            }
            d.copy_from_slice(&g);
            slope = dot(&g, &d);
            if slope <= 0.0 {
                break;
            }
        }

        match wolfe_line_search(&mut fg, &x, f, &g, &d, slope) {
            Some((step, fx, gx, xn)) => {
                // BFGS update with s = step * d, yk = gx - g (gradient of f;
                // for the negated problem signs cancel in the update)
                let s: Vec<f64> = d.iter().map(|v| v * step).collect();
                let yk: Vec<f64> = gx.iter().zip(&g).map(|(a, b)| b - a).collect(); // -(gx - g)
                let sy = dot(&s, &yk);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yk, &yk).sqrt() {
                    bfgs_update(&mut h_inv, &s, &yk);
                }
                let improvement = fx - f;
                x = xn;
                f = fx;
                g = gx;
                trace.push(f);
                if improvement.abs() <= opts.f_tol * (1.0 + f.abs()) {
                    converged = true;
                    break;
                }
            }
            None => {
                line_search_failures += 1;
                break;
            }
        }
    }

    BfgsResult {
        x,
        f,
        grad: g,
        iterations,
        converged,
        line_search_failures,
        trace,
    }
}

// Strong Wolfe line search (maximization): find step with
// f(x+a d) >= f + c1 a slope  and |g(x+a d).d| <= c2 |slope|.
fn wolfe_line_search(
    fg: &mut impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
    f0: f64,
    _g0: &[f64],
    d: &[f64],
    slope: f64,
) -> Option<(f64, f64, Vec<f64>, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let eval = |fg: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>), a: f64| {
        let xn: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let (fa, ga) = fg(&xn);
        (fa, ga, xn)
    };

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut a = 1.0;
    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for i in 0..30 {
        let (fa, ga, xn) = eval(fg, a);
        if fa.is_finite() {
            if best.as_ref().map_or(true, |b| fa > b.1) {
                best = Some((a, fa, ga.clone(), xn.clone()));
            }
            let armijo = fa >= f0 + C1 * a * slope;
            if !armijo || (i > 0 && fa <= f_prev) {
                return zoom(fg, x, f0, d, slope, a_prev, f_prev, a, best);
            }
            let da = dot(&ga, d);
            if da.abs() <= C2 * slope.abs() {
                return Some((a, fa, ga, xn));
            }
            if da <= 0.0 {
                return zoom(fg, x, f0, d, slope, a, fa, a_prev, best);
            }
            a_prev = a;
            f_prev = fa;
            a *= 2.0;
        } else {
            // infeasible: shrink toward the last good point
            a = 0.5 * (a_prev + a);
            if a - a_prev < 1e-16 {
                break;
            }
        }
    }
    best.map(|(a, fa, ga, xn)| (a, fa, ga, xn)).filter(|b| b.1 > f0)
}

#[allow(clippy::too_many_arguments)]
fn zoom(
    fg: &mut impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope: f64,
    mut lo: f64,
    mut f_lo: f64,
    mut hi: f64,
    mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)>,
) -> Option<(f64, f64, Vec<f64>, Vec<f64>)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let a = 0.5 * (lo + hi);
        let xn: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + a * di).collect();
        let (fa, ga) = fg(&xn);
        if fa.is_finite() && best.as_ref().map_or(true, |b| fa > b.1) {
            best = Some((a, fa, ga.clone(), xn.clone()));
        }
        if !fa.is_finite() || fa < f0 + C1 * a * slope || fa <= f_lo {
            hi = a;
        } else {
            let da = dot(&ga, d);
            if da.abs() <= C2 * slope.abs() {
                return Some((a, fa, ga, xn));
            }
            if da * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = a;
            f_lo = fa;
        }
        if (hi - lo).abs() < 1e-14 {
            break;
        }
    }
    best.filter(|b| b.1 > f0)
}

fn bfgs_update(h_inv: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let sy = dot(s, y);
    let rho = 1.0 / sy;
    // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let mut hy = vec![0.0; n];
    for i in 0..n {
        hy[i] = (0..n).map(|j| h_inv[i * n + j] * y[j]).sum();
    }
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h_inv[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

/// Wrap a value-only objective with central finite differences so it fits the
/// `(value, gradient)` interface.
pub fn with_numeric_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    rel_step: f64,
) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
    move |x: &[f64]| {
        let fx = f(x);
        let mut g = vec![0.0; x.len()];
        if fx.is_finite() {
            for i in 0..x.len() {
                let h = rel_step * (1.0 + x[i].abs());
                let mut up = x.to_vec();
                up[i] += h;
                let mut dn = x.to_vec();
                dn[i] -= h;
                let (fu, fd) = (f(&up), f(&dn));
                g[i] = if fu.is_finite() && fd.is_finite() {
                    (fu - fd) / (2.0 * h)
                } else if fu.is_finite() {
                    (fu - fx) / h
                } else if fd.is_finite() {
                    (fx - fd) / h
                } else {
                    0.0
                };
            }
        }
        (fx, g)
    }
}
