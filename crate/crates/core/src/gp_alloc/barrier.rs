//! Log-barrier interior-point method for geometric programs in convex
//! (log-sum-exp) form, with a phase-I slack problem for feasibility.

use nalgebra::{DMatrix, DVector};

use super::Posynomial;

/// `log Σ exp(A y + c)` for one posynomial.
#[derive(Debug, Clone)]
pub(crate) struct Lse {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl Lse {
    pub(crate) fn from_posynomial(p: &Posynomial, n: usize) -> Self {
        let mut a = DMatrix::zeros(p.terms.len(), n);
        let mut c = DVector::zeros(p.terms.len());
        for (i, t) in p.terms.iter().enumerate() {
            c[i] = t.coeff.ln();
            for (j, e) in t.exps.iter().enumerate() {
                a[(i, j)] = *e;
            }
        }
        Self { a, c }
    }

    pub(crate) fn value(&self, y: &DVector<f64>) -> f64 {
        let v = &self.a * y + &self.c;
        let m = v.max();
        m + v.map(|x| (x - m).exp()).sum().ln()
    }

    fn eval(&self, y: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let v = &self.a * y + &self.c;
        let m = v.max();
        let w = v.map(|x| (x - m).exp());
        let s = w.sum();
        let p = w / s;
        let g = self.a.transpose() * &p;
        let ap = DMatrix::from_fn(self.a.nrows(), self.a.ncols(), |i, j| self.a[(i, j)] * p[i]);
        let h = self.a.transpose() * ap - &g * g.transpose();
        (m + s.ln(), g, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    pub gap_tol: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, newton_tol: 1e-9, max_newton: 2000 }
    }
}

/// `minimize cᵀz` subject to `lse_i(y) − slack·s ≤ 0` and `lo ≤ y ≤ hi`,
/// where `z = (y, s)` when `slack` is set and `z = y` otherwise.
pub(crate) struct Problem<'a> {
    pub cons: &'a [Lse],
    pub lo: &'a DVector<f64>,
    pub hi: &'a DVector<f64>,
    pub c: DVector<f64>,
    pub slack: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub z: DVector<f64>,
    pub newton_steps: usize,
    pub gap: f64,
    /// Lagrangian gradient with barrier multipliers, relative to its
    /// largest term.
    pub kkt: f64,
    pub converged: bool,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.lo.len()
    }

    fn dim(&self) -> usize {
        self.n() + usize::from(self.slack)
    }

    fn num_ineq(&self) -> usize {
        self.cons.len() + 2 * self.n()
    }

    fn s(&self, z: &DVector<f64>) -> f64 {
        if self.slack {
            z[self.n()]
        } else {
            0.0
        }
    }

    fn strictly_feasible(&self, z: &DVector<f64>) -> bool {
        let y = z.rows(0, self.n()).into_owned();
        (0..self.n()).all(|j| y[j] > self.lo[j] && y[j] < self.hi[j])
            && self.cons.iter().all(|g| g.value(&y) - self.s(z) < 0.0)
    }

    fn phi(&self, t: f64, z: &DVector<f64>) -> f64 {
        let n = self.n();
        let y = z.rows(0, n).into_owned();
        let mut f = t * self.c.dot(z);
        for j in 0..n {
            f -= (self.hi[j] - y[j]).ln() + (y[j] - self.lo[j]).ln();
        }
        for g in self.cons {
            f -= (self.s(z) - g.value(&y)).ln();
        }
        f
    }

    /// Lagrangian gradient (barrier gradient over `t`) relative to the
    /// largest single term in it.
    fn kkt_relative(&self, t: f64, z: &DVector<f64>) -> f64 {
        let n = self.n();
        let y = z.rows(0, n).into_owned();
        let (g, _) = self.grad_hess(t, z);
        let mut scale = t * self.c.amax();
        for j in 0..n {
            scale = scale.max(1.0 / (self.hi[j] - y[j])).max(1.0 / (y[j] - self.lo[j]));
        }
        for c in self.cons {
            let (v, gy, _) = c.eval(&y);
            scale = scale.max(gy.amax().max(1.0) / (self.s(z) - v));
        }
        g.amax() / scale
    }

    fn grad_hess(&self, t: f64, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let d = self.dim();
        let y = z.rows(0, n).into_owned();
        let mut grad = &self.c * t;
        let mut hess = DMatrix::zeros(d, d);
        for j in 0..n {
            let (u, l) = (self.hi[j] - y[j], y[j] - self.lo[j]);
            grad[j] += 1.0 / u - 1.0 / l;
            hess[(j, j)] += 1.0 / (u * u) + 1.0 / (l * l);
        }
        for g in self.cons {
            let (v, gy, hy) = g.eval(&y);
            let r = self.s(z) - v; // > 0
            // −ln(s − F): ∇ = (∇F, −1)/r, ∇² = ∇²F/r + ∇(F−s)∇(F−s)ᵀ/r²
            let mut gz = DVector::zeros(d);
            gz.rows_mut(0, n).copy_from(&gy);
            if self.slack {
                gz[n] = -1.0;
            }
            grad += &gz / r;
            let mut top = hess.view_mut((0, 0), (n, n));
            top += hy / r;
            hess += &gz * gz.transpose() / (r * r);
        }
        (grad, hess)
    }

    /// Damped Newton on the barrier function at fixed `t`.
    fn center(&self, t: f64, z: &mut DVector<f64>, opts: &BarrierOptions, budget: &mut usize, stop_below: Option<f64>) -> bool {
        let (mut prev_dec2, mut stalled) = (f64::INFINITY, 0);
        loop {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            let (g, h) = self.grad_hess(t, z);
            let step = solve_spd(h, &g);
            let dec2 = -g.dot(&step);
            if dec2 / 2.0 <= opts.newton_tol {
                return true;
            }
            // Near the boundary the Hessian is a sum of rank-one terms many
            // decades apart, and roundoff in the flat directions turns
            // quadratic convergence linear. Once in the quadratic region,
            // a decrement that stops halving is as centered as it gets.
            stalled = if dec2 < 1e-3 && dec2 > 0.5 * prev_dec2 { stalled + 1 } else { 0 };
            if stalled >= 5 {
                return true;
            }
            prev_dec2 = dec2;
            let f0 = self.phi(t, z);
            let mut alpha = 1.0;
            loop {
                let cand = &*z + &step * alpha;
                let f1 = if self.strictly_feasible(&cand) { self.phi(t, &cand) } else { f64::INFINITY };
                // in the quadratic region the predicted decrease can fall
                // below the resolution of f itself; take the full step then
                let roundoff = alpha == 1.0 && dec2 < 1e-3 && f1 <= f0 + 64.0 * f64::EPSILON * f0.abs().max(1.0);
                if f1 <= f0 - 0.25 * alpha * dec2 || roundoff {
                    *z = cand;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    // no progress possible in floating point
                    return true;
                }
            }
            if let Some(th) = stop_below {
                if self.s(z) < th {
                    return true;
                }
            }
        }
    }

    pub(crate) fn solve(&self, z0: DVector<f64>, opts: &BarrierOptions, stop_below: Option<f64>) -> BarrierOutcome {
        let mut z = z0;
        let mut budget = opts.max_newton;
        let mut t = 1.0;
        let m = self.num_ineq() as f64;
        let mut converged = false;
        loop {
            if !self.center(t, &mut z, opts, &mut budget, stop_below) {
                break;
            }
            if stop_below.is_some_and(|th| self.s(&z) < th) || m / t < opts.gap_tol {
                converged = true;
                break;
            }
            t *= 10.0;
        }
        BarrierOutcome {
            newton_steps: opts.max_newton - budget,
            gap: m / t,
            kkt: self.kkt_relative(t, &z),
            z,
            converged,
        }
    }
}

/// Solves `H x = −g` for a symmetric positive definite `H`. Near active
/// constraints the diagonal spans many decades, so the system is
/// equilibrated first; a small ridge is added if the factorization fails.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let d = h.diagonal().map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt());
    let mut hs = h;
    for i in 0..hs.nrows() {
        for j in 0..hs.ncols() {
            hs[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = g.component_mul(&d);
    let mut ridge = 0.0;
    loop {
        let mut hr = hs.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            return -ch.solve(&gs).component_mul(&d);
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
    }
}

/// Phase I: minimizes the largest constraint value over the box. Returns a
/// strictly feasible `y` when the optimum slack is negative.
pub(crate) fn phase_one(
    cons: &[Lse],
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    y0: &DVector<f64>,
    opts: &BarrierOptions,
) -> (Option<DVector<f64>>, f64, usize) {
    let n = lo.len();
    let max_f = cons.iter().map(|g| g.value(y0)).fold(f64::NEG_INFINITY, f64::max);
    if max_f < 0.0 {
        return (Some(y0.clone()), max_f, 0);
    }
    let mut z0 = DVector::zeros(n + 1);
    z0.rows_mut(0, n).copy_from(y0);
    z0[n] = max_f + 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let p = Problem { cons, lo, hi, c, slack: true };
    // stop as soon as the slack is safely negative
    let out = p.solve(z0, opts, Some(-1e-3));
    let y = out.z.rows(0, n).into_owned();
    let worst = cons.iter().map(|g| g.value(&y)).fold(f64::NEG_INFINITY, f64::max);
    ((worst < 0.0).then_some(y), worst, out.newton_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_alloc::Monomial;

    fn mono(c: f64, e: &[f64]) -> Monomial {
        Monomial { coeff: c, exps: e.to_vec() }
    }

    #[test]
    fn lse_gradient_and_hessian_match_differences() {
        let p = Posynomial { terms: vec![mono(2.0, &[1.0, -0.5]), mono(0.3, &[-2.0, 1.0]), mono(1.5, &[0.0, 0.0])] };
        let l = Lse::from_posynomial(&p, 2);
        let y = DVector::from_vec(vec![0.3, -0.7]);
        let (v, g, h) = l.eval(&y);
        let x = y.map(f64::exp);
        assert!((v - p.eval(x.as_slice()).ln()).abs() < 1e-13);
        let e = 1e-6;
        for j in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += e;
            ym[j] -= e;
            assert!(((l.value(&yp) - l.value(&ym)) / (2.0 * e) - g[j]).abs() < 1e-8);
            let gp = l.eval(&yp).1;
            let gm = l.eval(&ym).1;
            for i in 0..2 {
                assert!(((gp[i] - gm[i]) / (2.0 * e) - h[(i, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn textbook_gp() {
        // maximize x·y s.t. x + 2y ≤ 4 ⇒ x = 2, y = 1.
        // in "maximize t" form: t/(x y) ≤ 1, x/4 + y/2 ≤ 1
        let cons = [
            Lse::from_posynomial(&Posynomial { terms: vec![mono(1.0, &[-1.0, -1.0, 1.0])] }, 3),
            Lse::from_posynomial(&Posynomial { terms: vec![mono(0.25, &[1.0, 0.0, 0.0]), mono(0.5, &[0.0, 1.0, 0.0])] }, 3),
        ];
        let lo = DVector::from_element(3, -20.0);
        let hi = DVector::from_element(3, 20.0);
        let y0 = DVector::from_vec(vec![0.0, 0.0, -1.0]);
        let (y, _, _) = phase_one(&cons, &lo, &hi, &y0, &BarrierOptions::default());
        let p = Problem { cons: &cons, lo: &lo, hi: &hi, c: DVector::from_vec(vec![0.0, 0.0, -1.0]), slack: false };
        let out = p.solve(y.unwrap(), &BarrierOptions::default(), None);
        assert!(out.converged);
        let x = out.z.map(f64::exp);
        assert!((x[0] - 2.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6 && (x[2] - 2.0).abs() < 1e-6, "{x}");
    }

    #[test]
    fn phase_one_detects_infeasibility() {
        // x ≤ 1/2 and 1/x ≤ 1 cannot both hold
        let cons = [
            Lse::from_posynomial(&Posynomial { terms: vec![mono(2.0, &[1.0])] }, 1),
            Lse::from_posynomial(&Posynomial { terms: vec![mono(1.0, &[-1.0])] }, 1),
        ];
        let lo = DVector::from_element(1, -10.0);
        let hi = DVector::from_element(1, 10.0);
        let (y, worst, _) = phase_one(&cons, &lo, &hi, &DVector::from_element(1, 3.0), &BarrierOptions::default());
        assert!(y.is_none());
        assert!((worst - 0.5 * 2f64.ln()).abs() < 1e-4, "{worst}");
    }
}
