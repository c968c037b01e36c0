//! Minimum frame size `ζ` (symbols per coherence block) and, for RP, the
//! pilot fraction `η` so that every V2V pair can carry the target payload
//! under the worst-case SINR bounds while CUEs keep their SINR floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbl::{backoff, FblError};
use crate::geometry::{RoadId, ScenarioConfig};
use crate::pathloss::OmegaTable;
use crate::sinr_bounds::{PilotScheme, SchemeKind, SinrError, WorstCase};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("{what} did not converge after {iterations} iterations; last bracket [{lo:.6e}, {hi:.6e}]")]
    NonConvergence { what: &'static str, iterations: usize, lo: f64, hi: f64 },
    #[error("no road carries V2V traffic; nothing to design for")]
    NoTraffic,
    #[error("interference-free worst case on road {0}: the V2V bound is unbounded")]
    Unbounded(u8),
    #[error("payload target must be positive, got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Fbl(#[from] FblError),
    #[error(transparent)]
    Sinr(#[from] SinrError),
}

/// Value of `f − Θ̄` and its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpEval {
    pub value: f64,
    pub d_zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpEval {
    pub value: f64,
    pub d_zeta: f64,
    pub d_eta: f64,
    pub d_eta2: f64,
}

const LN2: f64 = std::f64::consts::LN_2;

/// `ζ log₂(1+āζ) − b√ζ − Θ̄` and its `ζ`-derivative.
pub fn f_sp(zeta: f64, a: f64, b: f64, theta: f64) -> SpEval {
    let s = a * zeta;
    SpEval {
        value: zeta * s.ln_1p() / LN2 - b * zeta.sqrt() - theta,
        d_zeta: s.ln_1p() / LN2 + s / ((1.0 + s) * LN2) - b / (2.0 * zeta.sqrt()),
    }
}

/// `(1−η)ζ log₂(1+āηζ) − b√((1−η)ζ) − Θ̄` with its partials.
pub fn f_rp(eta: f64, zeta: f64, a: f64, b: f64, theta: f64) -> RpEval {
    let m = (1.0 - eta) * zeta;
    let s = a * eta * zeta;
    let l = s.ln_1p() / LN2;
    let sm = m.sqrt();
    let h_z = (1.0 - eta) * l + m * a * eta / ((1.0 + s) * LN2);
    let g_z = b * (1.0 - eta) / (2.0 * sm);
    let h_e = -zeta * l + m * a * zeta / ((1.0 + s) * LN2);
    let g_e = -b * zeta / (2.0 * sm);
    let h_ee = -2.0 * a * zeta * zeta / ((1.0 + s) * LN2) - m * a * a * zeta * zeta / ((1.0 + s) * (1.0 + s) * LN2);
    let g_ee = -b * zeta * zeta / (4.0 * m * sm);
    RpEval { value: m * l - b * sm - theta, d_zeta: h_z - g_z, d_eta: h_e - g_e, d_eta2: h_ee - g_ee }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    /// Longest Newton run in `ζ` across roads and bisection steps.
    pub zeta_newton_max: usize,
    /// Longest Newton run in `η`.
    pub eta_newton_max: usize,
    /// Bisection steps on `η` (RP only), max over roads.
    pub bisection_steps: usize,
    /// Final `η^max − η^min`, max over roads.
    pub eta_bracket: f64,
}

/// One `η` bisection step on the binding road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub step: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDesign {
    pub scheme: SchemeKind,
    /// Pilot fraction (RP only).
    pub eta: Option<f64>,
    /// Reported frame size: the ceiling of `zeta_lower`.
    pub zeta: f64,
    /// Continuous minimum frame size.
    pub zeta_lower: f64,
    pub a_rp: [f64; 4],
    pub a_sp: [f64; 4],
    pub b: f64,
    /// Road whose pairs set the frame size; `None` when the CUE floor binds.
    pub binding_road: Option<RoadId>,
    /// The CUE requirement, not the V2V one, sets the frame.
    pub cue_limited: bool,
    /// Every road and the CUE bound meet their targets at the rounded frame.
    pub constraints_met: bool,
    pub stats: SolverStats,
    /// Bisection history of the binding road (RP only).
    #[serde(default)]
    pub trace: Vec<BisectionStep>,
}

impl FrameDesign {
    /// Pilot scheme at the reported (rounded) frame size.
    pub fn pilot_scheme(&self, num_cues: usize) -> Result<PilotScheme, SinrError> {
        match self.scheme {
            SchemeKind::Sp => PilotScheme::sp(self.zeta, num_cues),
            SchemeKind::Rp => PilotScheme::rp(self.eta.unwrap_or(0.0) * self.zeta, self.zeta, num_cues),
        }
    }

    pub fn lambda(&self) -> f64 {
        match self.scheme {
            SchemeKind::Sp => self.zeta,
            SchemeKind::Rp => (1.0 - self.eta.unwrap_or(0.0)) * self.zeta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub zeta_star_lower: f64,
    /// Coherence bandwidth (Hz).
    pub b_c: f64,
    /// Minimum latency (s).
    pub l_min: f64,
}

impl FeasibleRegion {
    pub fn contains(&self, latency: f64, bandwidth: f64) -> bool {
        bandwidth <= self.b_c && latency * bandwidth >= self.zeta_star_lower
    }

    /// Latency on the region boundary at bandwidth `bw ≤ B_C`.
    pub fn boundary_latency(&self, bw: f64) -> f64 {
        self.zeta_star_lower / bw
    }
}

pub fn feasible_region(frame: &FrameDesign, b_c: f64) -> FeasibleRegion {
    FeasibleRegion { zeta_star_lower: frame.zeta_lower, b_c, l_min: frame.zeta_lower / b_c }
}

const MAX_NEWTON: usize = 200;
const MAX_BISECTION: usize = 64;

/// Newton's method on `g` inside the sign-change bracket `[lo, hi]`, with a
/// bisection step whenever the iterate would leave the bracket. Stops when
/// successive iterates differ by at most `tol`.
fn safeguarded_newton<G: Fn(f64) -> (f64, f64)>(
    g: G,
    x0: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    what: &'static str,
) -> Result<(f64, usize), FrameError> {
    let lo_sign = g(lo).0 > 0.0;
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    for it in 1..=MAX_NEWTON {
        let (v, d) = g(x);
        if v == 0.0 {
            return Ok((x, it));
        }
        if (v > 0.0) == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - v / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= tol {
            return Ok((next, it));
        }
        x = next;
    }
    Err(FrameError::NonConvergence { what, iterations: MAX_NEWTON, lo, hi })
}

/// Root in `ζ` of an increasing-then-convex surplus with value `−Θ̄` at 0.
fn zeta_root<F: Fn(f64) -> (f64, f64)>(f: F, x0: f64, tol: f64, what: &'static str) -> Result<(f64, usize), FrameError> {
    let lo = 1e-9;
    let mut hi = x0.max(1.0);
    while f(hi).0 <= 0.0 {
        hi *= 2.0;
        if hi > 1e15 {
            return Err(FrameError::NonConvergence { what, iterations: 0, lo, hi });
        }
    }
    safeguarded_newton(f, x0, lo, hi, tol, what)
}

const ETA_GRID: usize = 256;

/// Interior maximizer of `f_RP(·, ζ)`. A coarse scan isolates the global
/// maximum (the surplus also has a spurious stationary point very close to
/// `η = 1`, inside the negative-information region), then Newton on the
/// `η`-derivative refines it.
fn eta_argmax(zeta: f64, a: f64, b: f64, theta: f64, start: f64, tol: f64) -> Result<(f64, usize), FrameError> {
    let at = |e: f64| f_rp(e, zeta, a, b, theta);
    let best = (1..ETA_GRID)
        .map(|i| i as f64 / ETA_GRID as f64)
        .max_by(|x, y| at(*x).value.total_cmp(&at(*y).value))
        .expect("grid is non-empty");
    let cell = 1.0 / ETA_GRID as f64;
    let mut lo = (best - cell).max(1e-12);
    let mut hi = (best + cell).min(1.0 - 1e-12);
    // a flat or monotone cell edge: shrink towards the best grid point
    if at(lo).d_eta <= 0.0 {
        lo = best;
    }
    if at(hi).d_eta >= 0.0 {
        hi = best;
    }
    if lo >= hi {
        return Ok((best, 0));
    }
    safeguarded_newton(|e| { let r = at(e); (r.d_eta, r.d_eta2) }, start, lo, hi, tol, "η-maximization")
}

struct RoadRp {
    eta: f64,
    zeta: f64,
    newton_zeta: usize,
    newton_eta: usize,
    steps: usize,
    bracket: f64,
    trace: Vec<BisectionStep>,
}

fn solve_road_rp(a: f64, b: f64, theta: f64, cue_product: f64, cfg: &ScenarioConfig) -> Result<RoadRp, FrameError> {
    let (mu_z, mu_e) = (cfg.tolerances.zeta, cfg.tolerances.eta);
    let (mut e_min, mut e_max) = (0.0_f64, 1.0_f64);
    let mut out = RoadRp { eta: 0.5, zeta: 0.0, newton_zeta: 0, newton_eta: 0, steps: 0, bracket: 1.0, trace: Vec::new() };
    for w in 1..=MAX_BISECTION {
        let eta_w = 0.5 * (e_min + e_max);
        let start = if cue_product > 0.0 { cue_product / eta_w } else { 1.0 };
        let (zeta_w, nz) = zeta_root(
            |z| { let r = f_rp(eta_w, z, a, b, theta); (r.value, r.d_zeta) },
            start,
            mu_z,
            "ζ-Newton (RP)",
        )?;
        let (eta_p, ne) = eta_argmax(zeta_w, a, b, theta, eta_w, mu_e)?;
        if eta_p <= eta_w {
            e_max = eta_w;
        } else {
            e_min = eta_w;
        }
        let mut trace = std::mem::take(&mut out.trace);
        trace.push(BisectionStep { step: w, eta_min: e_min, eta_max: e_max, eta: eta_p, zeta: zeta_w });
        out = RoadRp {
            trace,
            eta: eta_p,
            zeta: zeta_w,
            newton_zeta: out.newton_zeta.max(nz),
            newton_eta: out.newton_eta.max(ne),
            steps: w,
            bracket: e_max - e_min,
        };
        if e_max - e_min <= mu_e {
            return Ok(out);
        }
    }
    Err(FrameError::NonConvergence { what: "η-bisection", iterations: MAX_BISECTION, lo: e_min, hi: e_max })
}

fn prepare(cfg: &ScenarioConfig, om: &OmegaTable) -> Result<(WorstCase, Vec<RoadId>, f64, f64), FrameError> {
    let theta = cfg.info_threshold;
    if !(theta > 0.0) {
        return Err(FrameError::Threshold(theta));
    }
    let roads: Vec<RoadId> = RoadId::ALL.into_iter().filter(|u| cfg.avg_density[u.index()] > 0.0).collect();
    if roads.is_empty() {
        return Err(FrameError::NoTraffic);
    }
    let wc = WorstCase::new(cfg, om);
    if let Some(u) = roads.iter().find(|u| wc.d[u.index()] <= 0.0) {
        return Err(FrameError::Unbounded(u.get()));
    }
    Ok((wc, roads, theta, backoff(cfg.reliability)?))
}

fn coeffs(wc: &WorstCase) -> ([f64; 4], [f64; 4]) {
    (RoadId::ALL.map(|u| wc.a(SchemeKind::Rp, u)), RoadId::ALL.map(|u| wc.a(SchemeKind::Sp, u)))
}

// rounding slack: the continuous root is only known to μ_ζ
fn meets(value: f64, cfg: &ScenarioConfig) -> bool {
    value >= -1e-6 * cfg.info_threshold
}

pub fn solve_frame_sp(cfg: &ScenarioConfig, om: &OmegaTable) -> Result<FrameDesign, FrameError> {
    let (wc, roads, theta, b) = prepare(cfg, om)?;
    let (a_rp, a_sp) = coeffs(&wc);
    let floor = wc.sp_cue_floor(cfg.cue_sinr_thresholds.frame);
    let mut stats = SolverStats::default();
    let mut best: Option<(RoadId, f64)> = None;
    for &u in &roads {
        let a = a_sp[u.index()];
        let (z, it) = zeta_root(|z| { let r = f_sp(z, a, b, theta); (r.value, r.d_zeta) }, floor, cfg.tolerances.zeta, "ζ-Newton (SP)")?;
        stats.zeta_newton_max = stats.zeta_newton_max.max(it);
        if best.is_none_or(|(_, bz)| z > bz) {
            best = Some((u, z));
        }
    }
    let (road, zv) = best.expect("at least one road");
    let cue_limited = floor > zv;
    let zeta_lower = zv.max(floor);
    let zeta = zeta_lower.ceil();
    let constraints_met =
        roads.iter().all(|u| meets(f_sp(zeta, a_sp[u.index()], b, theta).value, cfg)) && zeta >= floor;
    Ok(FrameDesign {
        scheme: SchemeKind::Sp,
        eta: None,
        zeta,
        zeta_lower,
        a_rp,
        a_sp,
        b,
        binding_road: (!cue_limited).then_some(road),
        cue_limited,
        constraints_met,
        stats,
        trace: Vec::new(),
    })
}

pub fn solve_frame_rp(cfg: &ScenarioConfig, om: &OmegaTable) -> Result<FrameDesign, FrameError> {
    let (wc, roads, theta, b) = prepare(cfg, om)?;
    let (a_rp, a_sp) = coeffs(&wc);
    let p_c = wc.rp_cue_product(cfg.cue_sinr_thresholds.frame);
    let mut stats = SolverStats::default();
    let mut best: Option<(RoadId, RoadRp)> = None;
    for &u in &roads {
        let r = solve_road_rp(a_rp[u.index()], b, theta, p_c, cfg)?;
        stats.zeta_newton_max = stats.zeta_newton_max.max(r.newton_zeta);
        stats.eta_newton_max = stats.eta_newton_max.max(r.newton_eta);
        stats.bisection_steps = stats.bisection_steps.max(r.steps);
        stats.eta_bracket = stats.eta_bracket.max(r.bracket);
        if best.as_ref().is_none_or(|(_, bz)| r.zeta > bz.zeta) {
            best = Some((u, r));
        }
    }
    let (road, v) = best.expect("at least one road");
    let p_v = v.eta * v.zeta;
    let (eta, zeta_lower, cue_limited) = if p_v >= p_c {
        (v.eta, v.zeta, false)
    } else {
        let z = p_c / v.eta;
        let (e, it) = eta_argmax(z, a_rp[road.index()], b, theta, v.eta, cfg.tolerances.eta)?;
        stats.eta_newton_max = stats.eta_newton_max.max(it);
        // The maximizer of f at the stretched frame can sit below the pilot
        // length the CUEs need; raising η to P_C/ζ restores it and keeps
        // the V2V target since f grows with ζ at η^V.
        (e.max(v.eta), z, true)
    };
    let zeta = zeta_lower.ceil();
    let constraints_met = roads.iter().all(|u| meets(f_rp(eta, zeta, a_rp[u.index()], b, theta).value, cfg))
        && eta * zeta >= p_c * (1.0 - 1e-9);
    Ok(FrameDesign {
        scheme: SchemeKind::Rp,
        eta: Some(eta),
        zeta,
        zeta_lower,
        a_rp,
        a_sp,
        b,
        binding_road: Some(road),
        cue_limited,
        constraints_met,
        stats,
        trace: v.trace,
    })
}

/// RP at a prescribed frame size: `η` maximizes the surplus of the
/// weakest road, raised if needed so the CUE pilots fit.
pub fn rp_at_frame(cfg: &ScenarioConfig, om: &OmegaTable, zeta: f64) -> Result<FrameDesign, FrameError> {
    let (wc, roads, theta, b) = prepare(cfg, om)?;
    let (a_rp, a_sp) = coeffs(&wc);
    let p_c = wc.rp_cue_product(cfg.cue_sinr_thresholds.frame);
    let road = *roads.iter().min_by(|x, y| a_rp[x.index()].total_cmp(&a_rp[y.index()])).expect("at least one road");
    let (e, it) = eta_argmax(zeta, a_rp[road.index()], b, theta, 0.5, cfg.tolerances.eta)?;
    let eta = e.max(p_c / zeta).min(1.0);
    let constraints_met = eta < 1.0 && roads.iter().all(|u| meets(f_rp(eta, zeta, a_rp[u.index()], b, theta).value, cfg));
    Ok(FrameDesign {
        scheme: SchemeKind::Rp,
        eta: Some(eta),
        zeta,
        zeta_lower: zeta,
        a_rp,
        a_sp,
        b,
        binding_road: Some(road),
        cue_limited: eta > e,
        constraints_met,
        stats: SolverStats { eta_newton_max: it, ..Default::default() },
        trace: Vec::new(),
    })
}

pub fn solve_frame(cfg: &ScenarioConfig, om: &OmegaTable, kind: SchemeKind) -> Result<FrameDesign, FrameError> {
    match kind {
        SchemeKind::Rp => solve_frame_rp(cfg, om),
        SchemeKind::Sp => solve_frame_sp(cfg, om),
    }
}

/// Brute-force references for the frame solvers.
pub mod oracle {
    use super::*;

    /// Central difference with one Richardson step, accurate to O(h⁴).
    pub fn central(f: impl Fn(f64) -> f64, x: f64, scale: f64) -> f64 {
        let h = 1e-3 * scale;
        let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    }

    /// First `ζ` on a grid of spacing `step` where the SP surplus is
    /// non-negative.
    pub fn sp_grid_first(a: f64, b: f64, theta: f64, step: f64) -> Option<f64> {
        (1..(1e7 / step) as usize).map(|i| i as f64 * step).find(|&z| f_sp(z, a, b, theta).value >= 0.0)
    }

    /// Minimal `ζ` over an `η` grid of spacing 5e-4 meeting every road and
    /// the CUE pilot product, each point solved by plain bisection. Returns
    /// `(ζ, η)`.
    pub fn rp_grid_min(cfg: &ScenarioConfig, om: &OmegaTable, fd: &FrameDesign) -> (f64, f64) {
        let wc = WorstCase::new(cfg, om);
        let p_c = wc.rp_cue_product(cfg.cue_sinr_thresholds.frame);
        let theta = cfg.info_threshold;
        let roads: Vec<usize> = (0..4).filter(|&u| cfg.avg_density[u] > 0.0).collect();
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..2000 {
            let eta = i as f64 * 5e-4;
            let ok = |z: f64| roads.iter().all(|&u| f_rp(eta, z, fd.a_rp[u], fd.b, theta).value >= 0.0) && eta * z >= p_c;
            let (mut lo, mut hi) = (1e-6, 1e7);
            if !ok(hi) {
                continue;
            }
            // feasibility in ζ is monotone past the root
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    hi = mid
                } else {
                    lo = mid
                }
            }
            if hi < best.0 {
                best = (hi, eta);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::central;
    use super::*;
    use proptest::prelude::*;

    const B: f64 = 6.152_95;

    fn om() -> OmegaTable {
        OmegaTable {
            v2v_n1: 7.7628e-4,
            v2v_n2: 4.4795e-8,
            v2v_n3: 1.1218e-14,
            v2v_p1: 50714.26,
            c2v_n: 6.8356e-6,
            v2b_n: 5.4890e-13,
            c2b_n: 7.6555e-13,
            c2b_p: 1.95686e12,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn sp_limits_and_convexity() {
        assert!((f_sp(1e-14, 0.1, B, 256.0).value + 256.0).abs() < 1e-5);
        let v: Vec<f64> = (1..2000).map(|i| f_sp(i as f64 * 0.5, 0.01, B, 256.0).value).collect();
        assert!(v.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] > 0.0));
    }

    #[test]
    fn rp_vanishes_at_full_pilot() {
        let r = f_rp(1.0 - 1e-15, 300.0, 0.01, B, 256.0);
        assert!((r.value + 256.0).abs() < 1e-5);
    }

    #[test]
    fn rp_single_interior_maximum_where_information_is_positive() {
        for zeta in [150.0, 300.0, 1000.0] {
            let pts: Vec<RpEval> = (1..20000).map(|i| f_rp(i as f64 / 20000.0, zeta, 0.01, B, 0.0)).collect();
            let live: Vec<f64> = pts.iter().filter(|r| r.value > 0.0).map(|r| r.d_eta).collect();
            assert!(!live.is_empty());
            let changes = live.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
            assert_eq!(changes, 1, "ζ = {zeta}");
        }
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(eta in 0.05f64..0.95, zeta in 20.0f64..3000.0, a in 1e-3f64..1.0) {
            let s = f_sp(zeta, a, B, 256.0);
            prop_assert!(rel(s.d_zeta, central(|z| f_sp(z, a, B, 256.0).value, zeta, zeta)) < 1e-6);
            let r = f_rp(eta, zeta, a, B, 256.0);
            prop_assert!(rel(r.d_zeta, central(|z| f_rp(eta, z, a, B, 256.0).value, zeta, zeta)) < 1e-6);
            prop_assert!(rel(r.d_eta, central(|e| f_rp(e, zeta, a, B, 256.0).value, eta, eta.min(1.0 - eta))) < 1e-6);
            prop_assert!(rel(r.d_eta2, central(|e| f_rp(e, zeta, a, B, 256.0).d_eta, eta, eta.min(1.0 - eta))) < 1e-6);
        }
    }

    #[test]
    fn sp_root_matches_grid_scan() {
        let cfg = ScenarioConfig::default();
        let fd = solve_frame_sp(&cfg, &om()).unwrap();
        assert!(fd.constraints_met);
        let road = fd.binding_road.unwrap();
        let a = fd.a_sp[road.index()];
        let first = oracle::sp_grid_first(a, fd.b, 256.0, 0.1).unwrap();
        assert!(fd.zeta_lower <= first + 1e-4 && fd.zeta_lower > first - 0.1 - 1e-4);
        assert_eq!(fd.zeta, fd.zeta_lower.ceil());
    }

    #[test]
    fn rp_matches_two_dimensional_grid() {
        for cfg in [ScenarioConfig::default(), ScenarioConfig { num_cues: 10, ..ScenarioConfig::default().with_density(0.005) }] {
            let fd = solve_frame_rp(&cfg, &om()).unwrap();
            let (zg, eg) = oracle::rp_grid_min(&cfg, &om(), &fd);
            assert!(fd.constraints_met);
            assert!(fd.zeta_lower <= zg * (1.0 + 1e-6), "solver {} grid {zg}", fd.zeta_lower);
            assert!(fd.zeta_lower >= zg * (1.0 - 1e-3), "solver {} grid {zg}", fd.zeta_lower);
            assert!((fd.eta.unwrap() - eg).abs() < 0.01);
        }
    }

    #[test]
    fn convergence_counts() {
        let cfg = ScenarioConfig { num_cues: 10, ..ScenarioConfig::default().with_density(0.005) };
        for kind in [SchemeKind::Rp, SchemeKind::Sp] {
            let fd = solve_frame(&cfg, &om(), kind).unwrap();
            assert!(fd.stats.zeta_newton_max < 100);
            assert!(fd.stats.eta_newton_max < 100);
            assert!(fd.stats.bisection_steps < 20);
            assert!(fd.stats.eta_bracket <= cfg.tolerances.eta);
        }
    }

    #[test]
    fn raising_target_raises_frame() {
        let mut cfg = ScenarioConfig::default();
        let base = solve_frame_sp(&cfg, &om()).unwrap().zeta_lower;
        cfg.info_threshold = 512.0;
        assert!(solve_frame_sp(&cfg, &om()).unwrap().zeta_lower > base);
    }

    #[test]
    fn sp_not_longer_than_rp_and_monotone_in_density() {
        let mut prev = (0.0, 0.0);
        for i in 0..10 {
            let cfg = ScenarioConfig::default().with_density(0.001 * (i + 1) as f64);
            let sp = solve_frame_sp(&cfg, &om()).unwrap().zeta_lower;
            let rp = solve_frame_rp(&cfg, &om()).unwrap().zeta_lower;
            assert!(sp <= rp);
            assert!(sp >= prev.0 && rp >= prev.1);
            prev = (sp, rp);
        }
    }

    #[test]
    fn cue_floor_can_bind() {
        let cfg = ScenarioConfig {
            cue_sinr_thresholds: crate::geometry::CueSinrThresholds { frame: 1e3, alloc: 10.0 },
            ..Default::default()
        };
        let sp = solve_frame_sp(&cfg, &om()).unwrap();
        assert!(sp.cue_limited && sp.binding_road.is_none() && sp.constraints_met);
        let rp = solve_frame_rp(&cfg, &om()).unwrap();
        assert!(rp.cue_limited && rp.constraints_met);
        let (zg, _) = oracle::rp_grid_min(&cfg, &om(), &rp);
        assert!(rp.zeta_lower >= zg * (1.0 - 1e-3));
    }

    #[test]
    fn region_values() {
        let mut fd = solve_frame_sp(&ScenarioConfig::default(), &om()).unwrap();
        fd.zeta_lower = 166.0;
        let r = feasible_region(&fd, 500e3);
        assert!((r.l_min - 0.332e-3).abs() < 1e-15);
        fd.zeta_lower = 246.0;
        let r = feasible_region(&fd, 500e3);
        assert!((r.l_min - 0.492e-3).abs() < 1e-15);
        for bw in [1e4, 7.3e4, 2e5, 5e5] {
            assert!((r.boundary_latency(bw) * bw / 246.0 - 1.0).abs() <= 4.0 * f64::EPSILON);
            assert!(r.contains(r.boundary_latency(bw) * 1.001, bw));
        }
        assert!(!r.contains(1.0, 6e5));
    }

    #[test]
    fn empty_roads_rejected() {
        let cfg = ScenarioConfig::default().with_density(0.0);
        assert!(matches!(solve_frame_sp(&cfg, &om()), Err(FrameError::NoTraffic)));
    }
}
