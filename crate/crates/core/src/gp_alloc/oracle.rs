//! Independent reference solutions for the power allocation GP, used to
//! check the interior-point path.

use nalgebra::DVector;

use super::barrier::{phase_one, BarrierOptions, Lse};
use super::{ConstraintKind, GpInstance, Monomial, Posynomial};
use crate::sinr_bounds::{gamma_c_from_gains, gamma_v_from_gains, SchemeKind};

/// Is `φ′ = level` attainable? Folds φ′ into the coefficients and asks
/// phase I for a strictly feasible power vector.
pub fn feasible_at(gp: &GpInstance, level: f64) -> bool {
    let j = gp.objective;
    let n = gp.num_vars() - 1;
    let mut cons = Vec::new();
    for c in &gp.constraints {
        let terms: Vec<Monomial> = c
            .poly
            .terms
            .iter()
            .map(|t| {
                let mut e = t.exps.clone();
                let ej = e.remove(j);
                Monomial { coeff: t.coeff * level.powf(ej), exps: e }
            })
            .collect();
        if terms.iter().all(|t| t.exps.iter().all(|&e| e == 0.0)) {
            if terms.iter().map(|t| t.coeff).sum::<f64>() >= 1.0 {
                return false;
            }
            continue;
        }
        cons.push(Lse::from_posynomial(&Posynomial { terms }, n));
    }
    let lo = DVector::from_iterator(n, gp.lower[..j].iter().map(|v| v.ln()));
    let hi = DVector::from_iterator(n, gp.upper[..j].iter().map(|v| v.ln()));
    let y0 = (&lo + &hi) / 2.0;
    phase_one(&cons, &lo, &hi, &y0, &BarrierOptions::default()).0.is_some()
}

/// Largest attainable `φ′` by bisection on feasibility, to relative
/// precision `rel_tol`. `None` when even the floor is unattainable.
pub fn bisection_oracle(gp: &GpInstance, rel_tol: f64) -> Option<f64> {
    let mut lo = gp.floor * (1.0 + 1e-9);
    if !feasible_at(gp, lo) {
        return None;
    }
    let mut hi = lo * 2.0;
    while feasible_at(gp, hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Some(lo);
        }
    }
    while hi / lo > 1.0 + rel_tol {
        let mid = (lo * hi).sqrt();
        if feasible_at(gp, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Exhaustive log-grid search for RP instances. Under RP every bound
/// depends on the products `u = p·q` only and is invariant to scaling all
/// of them together, so one product can be pinned at its cap `P_max²` and
/// the rest searched on a log grid, followed by zooming around the best
/// cell. Returns the best `min_r Γ_r` meeting the CUE targets and floor.
pub fn grid_oracle_rp(gp: &GpInstance, points: usize, zoom_rounds: usize) -> Option<f64> {
    assert_eq!(gp.scheme.kind(), SchemeKind::Rp, "the product reduction only holds for RP");
    let lay = gp.layout;
    let np = lay.pairs;
    let dims = np + lay.cues;
    let cap = |i: usize| if i < np { gp.params.max_v } else { gp.params.max_c };
    let lo: Vec<f64> = (0..dims).map(|i| (super::POWER_FLOOR * cap(i)).powi(2).ln()).collect();
    let hi: Vec<f64> = (0..dims).map(|i| cap(i).powi(2).ln()).collect();

    let score = |lu: &[f64]| -> f64 {
        let u: Vec<f64> = lu.iter().map(|v| v.exp()).collect();
        let mut a = lay.allocation(&vec![0.0; lay.len()]);
        for i in 0..np {
            a.p_v[i] = u[i].sqrt();
            a.q_v[i] = u[i].sqrt();
        }
        for k in 0..lay.cues {
            a.p_c[k] = u[np + k].sqrt();
            a.q_c[k] = u[np + k].sqrt();
        }
        let (Ok(gv), Ok(gc)) = (gamma_v_from_gains(&gp.gains, &a, &gp.scheme), gamma_c_from_gains(&gp.gains, &a, &gp.scheme))
        else {
            return f64::NEG_INFINITY;
        };
        if gc.iter().any(|&g| g < gp.params.theta_c) {
            return f64::NEG_INFINITY;
        }
        gv.into_iter().fold(f64::INFINITY, f64::min)
    };

    let mut best = f64::NEG_INFINITY;
    for pin in 0..dims {
        let free: Vec<usize> = (0..dims).filter(|&i| i != pin).collect();
        let mut cur: Vec<f64> = (0..dims).map(|i| 0.5 * (lo[i] + hi[i])).collect();
        cur[pin] = hi[pin];
        let mut span: Vec<f64> = (0..dims).map(|i| hi[i] - lo[i]).collect();
        let mut centre = cur.clone();
        let mut local = f64::NEG_INFINITY;
        for round in 0..=zoom_rounds {
            let axes: Vec<Vec<f64>> = free
                .iter()
                .map(|&i| {
                    let (a, b) = if round == 0 {
                        (lo[i], hi[i])
                    } else {
                        ((centre[i] - span[i]).max(lo[i]), (centre[i] + span[i]).min(hi[i]))
                    };
                    (0..points).map(|k| a + (b - a) * k as f64 / (points - 1) as f64).collect()
                })
                .collect();
            let mut idx = vec![0usize; free.len()];
            loop {
                for (d, &i) in free.iter().enumerate() {
                    cur[i] = axes[d][idx[d]];
                }
                let s = score(&cur);
                if s > local {
                    local = s;
                    centre = cur.clone();
                }
                // odometer increment
                let mut d = 0;
                while d < idx.len() {
                    idx[d] += 1;
                    if idx[d] < points {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == idx.len() {
                    break;
                }
            }
            for &i in &free {
                let step = if round == 0 { hi[i] - lo[i] } else { 2.0 * span[i] };
                span[i] = step / (points - 1) as f64;
            }
        }
        best = best.max(local);
    }
    (best.is_finite() && best >= gp.floor).then_some(best)
}

/// Fraction of pair constraints that are active (posynomial within
/// `slack` of 1) at `x`.
pub fn active_pairs(gp: &GpInstance, x: &[f64], slack: f64) -> usize {
    gp.constraints
        .iter()
        .filter(|c| matches!(c.kind, ConstraintKind::Pair(_)) && c.poly.eval(x) >= 1.0 - slack)
        .count()
}
