//! Max-min information power allocation for one drop, cast as a geometric
//! program in the variables `(p^V, q^V, p^C, q^C, φ′)` and solved by an
//! interior-point method in log space.

mod barrier;
pub mod oracle;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_design::FrameDesign;
use crate::geometry::{ScenarioConfig, Topology};
use crate::pathloss::FadingModel;
use crate::sinr_bounds::{
    gamma_c_from_gains, gamma_v_from_gains, LinkGains, PilotScheme, PowerAllocation, SchemeKind, SinrError,
};

use barrier::{phase_one, BarrierOptions, Lse, Problem};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("drop has no V2V pairs: nothing to maximize")]
    EmptyDrop,
    #[error("pair {0} sees no interference: its SINR bound is unbounded")]
    Unbounded(usize),
    #[error("malformed GP: {0}")]
    Malformed(String),
    #[error(transparent)]
    Sinr(#[from] SinrError),
}

/// `coeff · Π x_j^{exps_j}` with `coeff > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Posynomial {
    pub terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.exps.iter().zip(x).map(|(e, v)| if *e == 0.0 { 1.0 } else { v.powf(*e) }).product::<f64>())
            .sum()
    }

    fn validate(&self, n: usize) -> Result<(), GpError> {
        if self.terms.is_empty() {
            return Err(GpError::Malformed("empty posynomial".into()));
        }
        for t in &self.terms {
            if !(t.coeff > 0.0 && t.coeff.is_finite()) || t.exps.len() != n || t.exps.iter().any(|e| !e.is_finite()) {
                return Err(GpError::Malformed(format!("bad monomial {t:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ConstraintKind {
    Pair(usize),
    Cue(usize),
    Floor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConstraint {
    pub kind: ConstraintKind,
    pub poly: Posynomial,
}

/// Index map of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub pairs: usize,
    pub cues: usize,
}

impl VarLayout {
    pub fn p_v(&self, i: usize) -> usize {
        i
    }
    pub fn q_v(&self, i: usize) -> usize {
        self.pairs + i
    }
    pub fn p_c(&self, k: usize) -> usize {
        2 * self.pairs + k
    }
    pub fn q_c(&self, k: usize) -> usize {
        2 * self.pairs + self.cues + k
    }
    pub fn phi(&self) -> usize {
        2 * self.pairs + 2 * self.cues
    }
    pub fn len(&self) -> usize {
        self.phi() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.len());
        v.extend((0..self.pairs).map(|i| format!("p_v[{i}]")));
        v.extend((0..self.pairs).map(|i| format!("q_v[{i}]")));
        v.extend((0..self.cues).map(|k| format!("p_c[{k}]")));
        v.extend((0..self.cues).map(|k| format!("q_c[{k}]")));
        v.push("phi_prime".into());
        v
    }

    pub fn allocation(&self, x: &[f64]) -> PowerAllocation {
        PowerAllocation {
            p_v: x[..self.pairs].to_vec(),
            q_v: x[self.pairs..2 * self.pairs].to_vec(),
            p_c: x[2 * self.pairs..2 * self.pairs + self.cues].to_vec(),
            q_c: x[2 * self.pairs + self.cues..self.phi()].to_vec(),
        }
    }
}

/// Per-drop inputs of the allocation besides geometry and frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocParams {
    /// Linear CUE SINR target.
    pub theta_c: f64,
    pub max_v: f64,
    pub max_c: f64,
}

impl AllocParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self { theta_c: cfg.cue_sinr_thresholds.alloc, max_v: cfg.max_power_v, max_c: cfg.max_power_c() }
    }
}

/// Default duality-gap target (in log φ′). Much tighter and the constraint
/// slacks fall to where log-space roundoff dominates the barrier gradient.
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Smallest positive power, relative to the cap.
pub const POWER_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpInstance {
    pub layout: VarLayout,
    pub names: Vec<String>,
    /// Maximize this variable (φ′).
    pub objective: usize,
    pub constraints: Vec<GpConstraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub scheme: PilotScheme,
    pub gains: LinkGains,
    pub params: AllocParams,
    /// `2^{b/√λ} − 1`: the φ′ of zero information.
    pub floor: f64,
    pub lambda: f64,
    pub b: f64,
}

impl GpInstance {
    pub fn num_vars(&self) -> usize {
        self.layout.len()
    }

    pub fn count(&self, pred: impl Fn(ConstraintKind) -> bool) -> usize {
        self.constraints.iter().filter(|c| pred(c.kind)).count()
    }

    /// Largest constraint posynomial value at `x` (≤ 1 means feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.poly.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn zero_exps(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

pub fn build_gp(
    topo: &Topology,
    fading: &FadingModel,
    frame: &FrameDesign,
    params: AllocParams,
) -> Result<GpInstance, GpError> {
    let gains = LinkGains::from_topology(topo, fading)?;
    let scheme = frame.pilot_scheme(gains.num_cues())?;
    build_gp_from_gains(gains, scheme, frame.b, params)
}

pub fn build_gp_from_gains(
    gains: LinkGains,
    scheme: PilotScheme,
    b: f64,
    params: AllocParams,
) -> Result<GpInstance, GpError> {
    let (np, nc) = (gains.num_pairs(), gains.num_cues());
    if np == 0 {
        return Err(GpError::EmptyDrop);
    }
    let lay = VarLayout { pairs: np, cues: nc };
    let n = lay.len();
    let sp = scheme.kind() == SchemeKind::Sp;
    let tau = scheme.tau();
    let mut constraints = Vec::with_capacity(np + nc + 1);

    for r in 0..np {
        let own = tau * gains.v2v[r][r] * gains.v2v[r][r];
        let mut terms = Vec::new();
        // φ′ · (interference monomial) / (τ p_r q_r β_rr²)
        let mut push = |coeff: f64, var_a: usize, pow_a: f64, var_b: Option<usize>| {
            let mut e = zero_exps(n);
            e[lay.phi()] = 1.0;
            e[lay.p_v(r)] -= 1.0;
            e[lay.q_v(r)] -= 1.0;
            e[var_a] += pow_a;
            if let Some(vb) = var_b {
                e[vb] += 1.0;
            }
            terms.push(Monomial { coeff: coeff / own, exps: e });
        };
        for t in 0..np {
            let b2 = gains.v2v[r][t] * gains.v2v[r][t];
            if t != r {
                push(b2, lay.p_v(t), 1.0, Some(lay.q_v(t)));
            }
            if sp {
                push(b2, lay.p_v(t), 2.0, None);
            }
        }
        for k in 0..nc {
            let b2 = gains.c2v[r][k] * gains.c2v[r][k];
            push(b2, lay.p_c(k), 1.0, Some(lay.q_c(k)));
            if sp {
                push(b2, lay.p_c(k), 2.0, None);
            }
        }
        if terms.is_empty() {
            return Err(GpError::Unbounded(r));
        }
        constraints.push(GpConstraint { kind: ConstraintKind::Pair(r), poly: Posynomial { terms } });
    }

    for k in 0..nc {
        let own = tau * gains.c2b[k] * gains.c2b[k] / params.theta_c;
        let mut terms = Vec::new();
        let mut push = |coeff: f64, var_a: usize, pow_a: f64, var_b: Option<usize>| {
            let mut e = zero_exps(n);
            e[lay.p_c(k)] -= 1.0;
            e[lay.q_c(k)] -= 1.0;
            e[var_a] += pow_a;
            if let Some(vb) = var_b {
                e[vb] += 1.0;
            }
            terms.push(Monomial { coeff: coeff / own, exps: e });
        };
        for t in 0..np {
            let b2 = gains.v2b[t] * gains.v2b[t];
            push(b2, lay.p_v(t), 1.0, Some(lay.q_v(t)));
            if sp {
                push(b2, lay.p_v(t), 2.0, None);
            }
        }
        if sp {
            for j in 0..nc {
                push(gains.c2b[j] * gains.c2b[j], lay.p_c(j), 2.0, None);
            }
        }
        constraints.push(GpConstraint { kind: ConstraintKind::Cue(k), poly: Posynomial { terms } });
    }

    let lambda = scheme.lambda();
    let floor = 2f64.powf(b / lambda.sqrt()) - 1.0;
    let mut e = zero_exps(n);
    e[lay.phi()] = -1.0;
    constraints.push(GpConstraint { kind: ConstraintKind::Floor, poly: Posynomial { terms: vec![Monomial { coeff: floor, exps: e }] } });

    let cap = scheme.power_cap_fraction();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for j in 0..lay.phi() {
        let pmax = if j < 2 * np { params.max_v } else { params.max_c };
        lower.push(POWER_FLOOR * pmax);
        upper.push(cap * pmax);
    }
    // numerical guard rails on φ′ only; the floor constraint is the real bound
    lower.push(floor * 1e-3);
    upper.push(1e15);

    let gp = GpInstance {
        layout: lay,
        names: lay.names(),
        objective: lay.phi(),
        constraints,
        lower,
        upper,
        scheme,
        gains,
        params,
        floor,
        lambda,
        b,
    };
    for c in &gp.constraints {
        c.poly.validate(n)?;
    }
    Ok(gp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub status: AllocStatus,
    pub alloc: PowerAllocation,
    pub phi_prime: f64,
    /// Guaranteed information bits per pair.
    pub phi: f64,
    pub gamma_v: Vec<f64>,
    pub gamma_c: Vec<f64>,
    pub newton_steps: usize,
    pub duality_gap: f64,
    pub kkt_residual: f64,
    /// Largest constraint posynomial at the returned point.
    pub max_constraint: f64,
}

impl AllocationResult {
    pub fn min_gamma_v(&self) -> f64 {
        self.gamma_v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn lse_constraints(gp: &GpInstance) -> Vec<Lse> {
    gp.constraints.iter().map(|c| Lse::from_posynomial(&c.poly, gp.num_vars())).collect()
}

fn log_box(gp: &GpInstance) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_iterator(gp.num_vars(), gp.lower.iter().map(|v| v.ln())),
        DVector::from_iterator(gp.num_vars(), gp.upper.iter().map(|v| v.ln())),
    )
}

/// Interior starting point: powers at half their cap, φ′ at 90% of the
/// smallest pair bound there.
pub fn initial_point(gp: &GpInstance) -> Vec<f64> {
    let mut x: Vec<f64> = gp.upper.iter().map(|u| 0.5 * u).collect();
    let a = gp.layout.allocation(&x);
    let g = gamma_v_from_gains(&gp.gains, &a, &gp.scheme).map(|v| v.into_iter().fold(f64::INFINITY, f64::min));
    let phi = g.unwrap_or(gp.floor) * 0.9;
    let j = gp.objective;
    x[j] = phi.clamp(gp.lower[j] * 1.01, gp.upper[j] * 0.99);
    x
}

fn finish(gp: &GpInstance, x: Vec<f64>, status: AllocStatus, steps: usize, gap: f64, kkt: f64) -> Result<AllocationResult, GpError> {
    let alloc = gp.layout.allocation(&x);
    let gamma_v = gamma_v_from_gains(&gp.gains, &alloc, &gp.scheme)?;
    let gamma_c = gamma_c_from_gains(&gp.gains, &alloc, &gp.scheme)?;
    let phi_prime = x[gp.objective];
    Ok(AllocationResult {
        status,
        phi: recover_phi_raw(phi_prime, gp.lambda, gp.b),
        max_constraint: gp.max_violation(&x),
        alloc,
        phi_prime,
        gamma_v,
        gamma_c,
        newton_steps: steps,
        duality_gap: gap,
        kkt_residual: kkt,
    })
}

/// Solves the GP to duality gap `tol` (in log φ′).
pub fn solve_gp(gp: &GpInstance, tol: f64) -> Result<AllocationResult, GpError> {
    let opts = BarrierOptions { gap_tol: tol, ..Default::default() };
    let cons = lse_constraints(gp);
    let (lo, hi) = log_box(gp);
    let y0 = DVector::from_iterator(gp.num_vars(), initial_point(gp).into_iter().map(f64::ln));
    let (start, _, p1_steps) = phase_one(&cons, &lo, &hi, &y0, &opts);
    let Some(start) = start else {
        let x: Vec<f64> = y0.iter().map(|v| v.exp()).collect();
        return finish(gp, x, AllocStatus::Infeasible, p1_steps, f64::INFINITY, f64::INFINITY);
    };
    let mut c = DVector::zeros(gp.num_vars());
    c[gp.objective] = -1.0;
    let prob = Problem { cons: &cons, lo: &lo, hi: &hi, c, slack: false };
    let out = prob.solve(start, &opts, None);
    let status = if out.converged { AllocStatus::Optimal } else { AllocStatus::MaxIter };
    let x: Vec<f64> = out.z.iter().map(|v| v.exp()).collect();
    finish(gp, x, status, p1_steps + out.newton_steps, out.gap, out.kkt)
}

fn recover_phi_raw(phi_prime: f64, lambda: f64, b: f64) -> f64 {
    lambda * phi_prime.ln_1p() / std::f64::consts::LN_2 - b * lambda.sqrt()
}

/// Information bits `φ` corresponding to `φ′`.
pub fn recover_phi(result: &AllocationResult, frame: &FrameDesign) -> f64 {
    recover_phi_raw(result.phi_prime, frame.lambda(), frame.b)
}

/// Inverse of [`recover_phi`]: the SINR level `φ′` delivering `φ` bits.
pub fn phi_prime_for(phi: f64, lambda: f64, b: f64) -> f64 {
    ((phi + b * lambda.sqrt()) / lambda).exp2() - 1.0
}

/// Unoptimized reference: every variable at its cap.
pub fn equal_power(gp: &GpInstance) -> Result<AllocationResult, GpError> {
    let mut x = gp.upper.clone();
    let a = gp.layout.allocation(&x);
    let g = gamma_v_from_gains(&gp.gains, &a, &gp.scheme)?;
    x[gp.objective] = g.into_iter().fold(f64::INFINITY, f64::min);
    let ok = gp.constraints.iter().all(|c| c.kind == ConstraintKind::Floor || c.poly.eval(&x) <= 1.0 + 1e-12);
    let status = if ok { AllocStatus::Optimal } else { AllocStatus::Infeasible };
    finish(gp, x, status, 0, f64::NAN, f64::NAN)
}
