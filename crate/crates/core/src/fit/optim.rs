//! Box-constrained quasi-Newton maximization with finite-difference
//! derivatives.
//!
//! BFGS on the inverse Hessian with an Armijo backtracking line search;
//! iterates are projected onto the box and coordinates pinned at a bound are
//! frozen while the gradient pushes outward. A few Newton steps with a
//! finite-difference Hessian finish the job once BFGS stalls.

use nalgebra::{DMatrix, DVector};

/// `cbrt(machine epsilon)`, the usual central-difference step scale.
pub fn fd_step_scale() -> f64 {
    f64::EPSILON.cbrt()
}

fn step_for(x: f64) -> f64 {
    fd_step_scale() * x.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn at_lower(&self, x: &[f64], i: usize) -> bool {
        x[i] <= self.lower[i]
    }

    pub fn at_upper(&self, x: &[f64], i: usize) -> bool {
        x[i] >= self.upper[i]
    }

    pub fn at_bound(&self, x: &[f64], i: usize) -> bool {
        self.at_lower(x, i) || self.at_upper(x, i)
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Projected-gradient norm reported as converged.
    pub gtol: f64,
    pub newton_polish: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            newton_polish: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient of `f`, falling back to one-sided
/// differences at the box edges or where `f` is not finite.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64, bounds: &Bounds) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = step_for(x[i]);
        let up = x[i] + h <= bounds.upper[i];
        let down = x[i] - h >= bounds.lower[i];
        let fp = if up {
            probe[i] = x[i] + h;
            f(&probe)
        } else {
            f64::NAN
        };
        let fm = if down {
            probe[i] = x[i] - h;
            f(&probe)
        } else {
            f64::NAN
        };
        probe[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => f64::NAN,
        };
    }
    g
}

/// Central-difference Hessian of `f` over the coordinates in `free`, with
/// per-coordinate steps `steps`.
pub fn fd_hessian<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    free: &[usize],
    steps: &[f64],
) -> DMatrix<f64> {
    let k = free.len();
    let mut h = DMatrix::zeros(k, k);
    let mut probe = x.to_vec();
    for a in 0..k {
        let i = free[a];
        let hi = steps[i];
        probe[i] = x[i] + hi;
        let fp = f(&probe);
        probe[i] = x[i] - hi;
        let fm = f(&probe);
        probe[i] = x[i];
        h[(a, a)] = (fp - 2.0 * fx + fm) / (hi * hi);
        for b in 0..a {
            let j = free[b];
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                probe[i] = x[i] + si * hi;
                probe[j] = x[j] + sj * hj;
                let v = f(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

pub fn default_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| step_for(*v)).collect()
}

/// Gradient with components zeroed where the bound is active and the
/// gradient points out of the box (ascent direction).
pub fn projected_gradient(g: &[f64], x: &[f64], bounds: &Bounds) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            if (bounds.at_lower(x, i) && gi < 0.0) || (bounds.at_upper(x, i) && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` from `x0` inside `bounds`. Returns `None` if `f(x0)` is
/// not finite.
pub fn maximize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    bounds: &Bounds,
    opts: &OptimOptions,
) -> Option<OptimOutcome> {
    let dim = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut fx = f(&x);
    if !fx.is_finite() {
        return None;
    }
    let mut g = fd_gradient(f, &x, fx, bounds);
    if g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // inverse Hessian of -f
    let mut hinv = DMatrix::<f64>::identity(dim, dim);
    let mut scaled = false;
    let mut iterations = 0;
    // BFGS stops well below the reporting tolerance so the polish rarely
    // has much to do
    let inner_tol = opts.gtol * 1e-2;

    while iterations < opts.max_iter {
        let pg = projected_gradient(&g, &x, bounds);
        if norm(&pg) < inner_tol {
            break;
        }
        iterations += 1;
        // ascent direction d = H^{-1} g for -f
        let gv = DVector::from_column_slice(&g);
        let mut d: Vec<f64> = (&hinv * &gv).iter().copied().collect();
        for (i, di) in d.iter_mut().enumerate() {
            if (bounds.at_lower(&x, i) && *di < 0.0) || (bounds.at_upper(&x, i) && *di > 0.0) {
                *di = 0.0;
            }
        }
        if dot(&d, &g) <= 0.0 {
            hinv = DMatrix::identity(dim, dim);
            scaled = false;
            d = pg.clone();
        }
        // unit-length first step until curvature information exists
        if !scaled && norm(&d) > 1.0 {
            let s = 1.0 / norm(&d);
            d.iter_mut().for_each(|v| *v *= s);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            bounds.clamp(&mut xn);
            let fnew = f(&xn);
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if fnew.is_finite() && fnew >= fx + 1e-4 * dot(&g, &s) {
                accepted = Some((xn, fnew, s));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, s)) = accepted else {
            break;
        };
        let gn = fd_gradient(f, &xn, fnew, bounds);
        if gn.iter().any(|v| !v.is_finite()) {
            break;
        }
        // curvature pair for -f
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if !scaled {
                let yy = dot(&y, &y);
                hinv = DMatrix::identity(dim, dim) * (sy / yy);
                scaled = true;
            }
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(dim, dim);
            let left = &i - rho * &sv * yv.transpose();
            let right = &i - rho * &yv * sv.transpose();
            hinv = &left * &hinv * &right + rho * &sv * sv.transpose();
        }
        let progress = fnew - fx;
        x = xn;
        fx = fnew;
        g = gn;
        if progress <= 1e-15 * fx.abs().max(1.0) && norm(&s) < 1e-12 {
            break;
        }
    }

    for _ in 0..opts.newton_polish {
        let pg = projected_gradient(&g, &x, bounds);
        if norm(&pg) < inner_tol {
            break;
        }
        let free: Vec<usize> = (0..dim).filter(|&i| !bounds.at_bound(&x, i)).collect();
        if free.is_empty() {
            break;
        }
        let steps = default_steps(&x);
        let safe = free
            .iter()
            .all(|&i| x[i] - steps[i] >= bounds.lower[i] && x[i] + steps[i] <= bounds.upper[i]);
        if !safe {
            break;
        }
        let h = fd_hessian(f, &x, fx, &free, &steps);
        let neg = -h;
        let Some(chol) = neg.cholesky() else {
            break;
        };
        let gfree = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let delta = chol.solve(&gfree);
        let mut step = 1.0;
        let mut improved = None;
        for _ in 0..30 {
            let mut xn = x.clone();
            for (a, &i) in free.iter().enumerate() {
                xn[i] += step * delta[a];
            }
            bounds.clamp(&mut xn);
            let fnew = f(&xn);
            if fnew.is_finite() && fnew >= fx {
                let gn = fd_gradient(f, &xn, fnew, bounds);
                if gn.iter().all(|v| v.is_finite())
                    && norm(&projected_gradient(&gn, &xn, bounds)) < norm(&pg)
                {
                    improved = Some((xn, fnew, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = improved else {
            break;
        };
        x = xn;
        fx = fnew;
        g = gn;
        iterations += 1;
    }

    let gradient_norm = norm(&projected_gradient(&g, &x, bounds));
    Some(OptimOutcome {
        converged: gradient_norm < opts.gtol,
        x,
        value: fx,
        gradient: g,
        gradient_norm,
        iterations,
    })
}
