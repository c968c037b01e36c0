//! SINR lower bounds for V2V pairs and CUEs under regular (RP) and
//! superimposed (SP) pilots.
//!
//! Three tiers live here:
//! * the pilot-collision-conditional asymptotic SINR `γ(χ)` for one draw
//!   of the random pilot assignment,
//! * the per-drop bound `Γ` obtained by averaging `1/γ` over the pilot law
//!   (this is what the power allocation optimizes),
//! * the worst-case bound `Γ̄` further averaged over positions and
//!   densities through the Ω table (this is what frame design uses).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{relation, RoadId, RoadRelation, ScenarioConfig, Topology};
use crate::pathloss::{FadingModel, OmegaTable, PathlossError};

#[derive(Debug, Error)]
pub enum SinrError {
    #[error("invalid pilot scheme: {0}")]
    Scheme(String),
    #[error("invalid power allocation: {0}")]
    Allocation(String),
    #[error("{kind} {index} has an empty interference sum: SINR bound is unbounded")]
    Unbounded { kind: &'static str, index: usize },
    #[error(transparent)]
    Pathloss(#[from] PathlossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Rp,
    Sp,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Rp => "RP",
            SchemeKind::Sp => "SP",
        })
    }
}

/// Pilot layout of one coherence block of `τ_SP` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PilotScheme {
    /// `τ_RP` dedicated pilot symbols followed by `τ_SP − τ_RP` data symbols.
    Rp { tau_rp: f64, tau_sp: f64 },
    /// Pilots superimposed on data over all `τ_SP` symbols.
    Sp { tau_sp: f64 },
}

impl PilotScheme {
    pub fn rp(tau_rp: f64, tau_sp: f64, num_cues: usize) -> Result<Self, SinrError> {
        if !(tau_rp >= 1.0 && tau_rp >= num_cues as f64 && tau_rp < tau_sp && tau_sp.is_finite()) {
            return Err(SinrError::Scheme(format!(
                "RP needs max(K, 1) ≤ τ_RP < τ_SP, got K = {num_cues}, τ_RP = {tau_rp}, τ_SP = {tau_sp}"
            )));
        }
        Ok(PilotScheme::Rp { tau_rp, tau_sp })
    }

    pub fn sp(tau_sp: f64, num_cues: usize) -> Result<Self, SinrError> {
        if !(tau_sp >= 1.0 && tau_sp >= num_cues as f64 && tau_sp.is_finite()) {
            return Err(SinrError::Scheme(format!("SP needs τ_SP ≥ max(K, 1), got K = {num_cues}, τ_SP = {tau_sp}")));
        }
        Ok(PilotScheme::Sp { tau_sp })
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            PilotScheme::Rp { .. } => SchemeKind::Rp,
            PilotScheme::Sp { .. } => SchemeKind::Sp,
        }
    }

    /// Pilot length, i.e. the size of the orthogonal pilot set.
    pub fn tau(&self) -> f64 {
        match *self {
            PilotScheme::Rp { tau_rp, .. } => tau_rp,
            PilotScheme::Sp { tau_sp } => tau_sp,
        }
    }

    /// Data blocklength λ.
    pub fn lambda(&self) -> f64 {
        match *self {
            PilotScheme::Rp { tau_rp, tau_sp } => tau_sp - tau_rp,
            PilotScheme::Sp { tau_sp } => tau_sp,
        }
    }

    /// Box bound on every power variable relative to its maximum.
    pub fn power_cap_fraction(&self) -> f64 {
        match self {
            PilotScheme::Rp { .. } => 1.0,
            PilotScheme::Sp { .. } => 0.5,
        }
    }
}

/// Signal (`p`) and pilot (`q`) powers in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p_v: Vec<f64>,
    pub q_v: Vec<f64>,
    pub p_c: Vec<f64>,
    pub q_c: Vec<f64>,
}

impl PowerAllocation {
    /// Every variable at the same fraction of its cap.
    pub fn uniform(pairs: usize, cues: usize, pv: f64, pc: f64) -> Self {
        Self { p_v: vec![pv; pairs], q_v: vec![pv; pairs], p_c: vec![pc; cues], q_c: vec![pc; cues] }
    }

    pub fn validate(&self, scheme: &PilotScheme, max_v: f64, max_c: f64) -> Result<(), SinrError> {
        if self.p_v.len() != self.q_v.len() || self.p_c.len() != self.q_c.len() {
            return Err(SinrError::Allocation("p and q vectors differ in length".into()));
        }
        let f = scheme.power_cap_fraction() * (1.0 + 1e-9);
        let ok = |v: &[f64], cap: f64| v.iter().all(|&x| x.is_finite() && x >= 0.0 && x <= cap * f);
        if !ok(&self.p_v, max_v) || !ok(&self.q_v, max_v) || !ok(&self.p_c, max_c) || !ok(&self.q_c, max_c) {
            return Err(SinrError::Allocation(format!("powers must lie in [0, {}·P_max]", scheme.power_cap_fraction())));
        }
        Ok(())
    }

    fn check_dims(&self, gains: &LinkGains) -> Result<(), SinrError> {
        if self.p_v.len() != gains.num_pairs()
            || self.q_v.len() != gains.num_pairs()
            || self.p_c.len() != gains.num_cues()
            || self.q_c.len() != gains.num_cues()
        {
            return Err(SinrError::Allocation(format!(
                "allocation sized for {} pairs / {} CUEs, drop has {} / {}",
                self.p_v.len(),
                self.p_c.len(),
                gains.num_pairs(),
                gains.num_cues()
            )));
        }
        Ok(())
    }
}

/// Large-scale gains of one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGains {
    /// `v2v[r][t]`: transmitter of pair `t` to receiver of pair `r`.
    pub v2v: Vec<Vec<f64>>,
    /// `c2v[r][k]`: CUE `k` to receiver of pair `r`.
    pub c2v: Vec<Vec<f64>>,
    /// V2V transmitter to BS.
    pub v2b: Vec<f64>,
    /// CUE to BS.
    pub c2b: Vec<f64>,
}

impl LinkGains {
    pub fn from_topology(topo: &Topology, fading: &FadingModel) -> Result<Self, SinrError> {
        let v2v = topo
            .pairs
            .iter()
            .map(|r| topo.pairs.iter().map(|t| fading.beta(r.rx.dist(t.tx))).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let c2v = topo
            .pairs
            .iter()
            .map(|r| topo.cues.iter().map(|c| fading.beta(r.rx.dist(*c))).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let v2b = topo.pairs.iter().map(|t| fading.beta(t.tx.norm())).collect::<Result<Vec<_>, _>>()?;
        let c2b = topo.cues.iter().map(|c| fading.beta(c.norm())).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { v2v, c2v, v2b, c2b })
    }

    pub fn num_pairs(&self) -> usize {
        self.v2b.len()
    }

    pub fn num_cues(&self) -> usize {
        self.c2b.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub v: Vec<f64>,
    pub c: Vec<f64>,
}

/// Denominator `Φ` of the per-drop V2V bound for pair `r`, so that
/// `Γ = τ p_r q_r β_rr² / Φ`.
pub fn phi_v(g: &LinkGains, a: &PowerAllocation, kind: SchemeKind, r: usize) -> f64 {
    let mut s = 0.0;
    for t in 0..g.num_pairs() {
        let b2 = g.v2v[r][t] * g.v2v[r][t];
        if t != r {
            s += a.p_v[t] * a.q_v[t] * b2;
        }
        if kind == SchemeKind::Sp {
            s += a.p_v[t] * a.p_v[t] * b2;
        }
    }
    for k in 0..g.num_cues() {
        let b2 = g.c2v[r][k] * g.c2v[r][k];
        s += a.p_c[k] * a.q_c[k] * b2;
        if kind == SchemeKind::Sp {
            s += a.p_c[k] * a.p_c[k] * b2;
        }
    }
    s
}

/// Denominator of the per-drop CUE bound for CUE `k`.
pub fn phi_c(g: &LinkGains, a: &PowerAllocation, kind: SchemeKind) -> f64 {
    let mut s = 0.0;
    for t in 0..g.num_pairs() {
        let b2 = g.v2b[t] * g.v2b[t];
        s += a.p_v[t] * a.q_v[t] * b2;
        if kind == SchemeKind::Sp {
            s += a.p_v[t] * a.p_v[t] * b2;
        }
    }
    if kind == SchemeKind::Sp {
        for k in 0..g.num_cues() {
            s += a.p_c[k] * a.p_c[k] * g.c2b[k] * g.c2b[k];
        }
    }
    s
}

pub fn gamma_v_from_gains(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme) -> Result<Vec<f64>, SinrError> {
    a.check_dims(g)?;
    (0..g.num_pairs())
        .map(|r| {
            let phi = phi_v(g, a, scheme.kind(), r);
            if phi <= 0.0 {
                return Err(SinrError::Unbounded { kind: "V2V pair", index: r });
            }
            Ok(scheme.tau() * a.p_v[r] * a.q_v[r] * g.v2v[r][r] * g.v2v[r][r] / phi)
        })
        .collect()
}

pub fn gamma_c_from_gains(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme) -> Result<Vec<f64>, SinrError> {
    a.check_dims(g)?;
    let phi = phi_c(g, a, scheme.kind());
    (0..g.num_cues())
        .map(|k| {
            if phi <= 0.0 {
                return Err(SinrError::Unbounded { kind: "CUE", index: k });
            }
            Ok(scheme.tau() * a.p_c[k] * a.q_c[k] * g.c2b[k] * g.c2b[k] / phi)
        })
        .collect()
}

/// Per-drop V2V bound `Γ^V` for every pair.
pub fn gamma_v_instance(
    topo: &Topology,
    fading: &FadingModel,
    alloc: &PowerAllocation,
    scheme: &PilotScheme,
) -> Result<Vec<f64>, SinrError> {
    gamma_v_from_gains(&LinkGains::from_topology(topo, fading)?, alloc, scheme)
}

/// Per-drop CUE bound `Γ^C` for every CUE.
pub fn gamma_c_instance(
    topo: &Topology,
    fading: &FadingModel,
    alloc: &PowerAllocation,
    scheme: &PilotScheme,
) -> Result<Vec<f64>, SinrError> {
    gamma_c_from_gains(&LinkGains::from_topology(topo, fading)?, alloc, scheme)
}

/// Outcome of the random pilot draw as seen by one V2V receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct VCollisions {
    /// `pairs[t]`: transmitter `t` shares the pilot (ignored for `t = r`).
    pub pairs: Vec<bool>,
    /// CUE sharing the pilot, if any. CUE pilots are mutually orthogonal so
    /// at most one can collide.
    pub cue: Option<usize>,
}

/// Asymptotic (`N → ∞`) SINR of pair `r` for one pilot draw.
pub fn gamma_v_given(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme, r: usize, chi: &VCollisions) -> f64 {
    let q = a.q_v[r];
    let mut den = 0.0;
    for t in 0..g.num_pairs() {
        let b2 = g.v2v[r][t] * g.v2v[r][t];
        if t != r && chi.pairs[t] {
            den += a.p_v[t] * a.q_v[t] / q * b2;
        }
        if scheme.kind() == SchemeKind::Sp {
            den += a.p_v[t] * a.p_v[t] / (scheme.tau() * q) * b2;
        }
    }
    for k in 0..g.num_cues() {
        let b2 = g.c2v[r][k] * g.c2v[r][k];
        if chi.cue == Some(k) {
            den += a.p_c[k] * a.q_c[k] / q * b2;
        }
        if scheme.kind() == SchemeKind::Sp {
            den += a.p_c[k] * a.p_c[k] / (scheme.tau() * q) * b2;
        }
    }
    a.p_v[r] * g.v2v[r][r] * g.v2v[r][r] / den
}

/// Asymptotic (`M → ∞`) SINR of CUE `k`; `chi[t]` marks V2V transmitters on
/// CUE `k`'s pilot.
pub fn gamma_c_given(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme, k: usize, chi: &[bool]) -> f64 {
    let q = a.q_c[k];
    let mut den = 0.0;
    for t in 0..g.num_pairs() {
        let b2 = g.v2b[t] * g.v2b[t];
        if chi[t] {
            den += a.p_v[t] * a.q_v[t] / q * b2;
        }
        if scheme.kind() == SchemeKind::Sp {
            den += a.p_v[t] * a.p_v[t] / (scheme.tau() * q) * b2;
        }
    }
    if scheme.kind() == SchemeKind::Sp {
        for j in 0..g.num_cues() {
            den += a.p_c[j] * a.p_c[j] / (scheme.tau() * q) * g.c2b[j] * g.c2b[j];
        }
    }
    a.p_c[k] * g.c2b[k] * g.c2b[k] / den
}

/// Exact expectations of `1/γ` and `log₂(1+γ)` over the random pilot law
/// for pair `r`, by enumerating every collision pattern. Exponential in the
/// number of other pairs; meant for drops of up to ~16 pairs.
pub fn pilot_law_moments_v(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme, r: usize) -> (f64, f64) {
    let n = g.num_pairs();
    let k = g.num_cues();
    let p = 1.0 / scheme.tau();
    let others: Vec<usize> = (0..n).filter(|&t| t != r).collect();
    let mut e_inv = 0.0;
    let mut e_rate = 0.0;
    let mut chi = VCollisions { pairs: vec![false; n], cue: None };
    for cue in std::iter::once(None).chain((0..k).map(Some)) {
        let w_cue = if cue.is_some() { p } else { 1.0 - k as f64 * p };
        chi.cue = cue;
        for mask in 0u64..(1u64 << others.len()) {
            let mut w = w_cue;
            for (bit, &t) in others.iter().enumerate() {
                let hit = mask >> bit & 1 == 1;
                chi.pairs[t] = hit;
                w *= if hit { p } else { 1.0 - p };
            }
            let gam = gamma_v_given(g, a, scheme, r, &chi);
            e_inv += w / gam;
            e_rate += w * (1.0 + gam).log2();
        }
    }
    (e_inv, e_rate)
}

/// As [`pilot_law_moments_v`] for CUE `k`.
pub fn pilot_law_moments_c(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme, k: usize) -> (f64, f64) {
    let n = g.num_pairs();
    let p = 1.0 / scheme.tau();
    let mut chi = vec![false; n];
    let mut e_inv = 0.0;
    let mut e_rate = 0.0;
    for mask in 0u64..(1u64 << n) {
        let mut w = 1.0;
        for (t, c) in chi.iter_mut().enumerate() {
            *c = mask >> t & 1 == 1;
            w *= if *c { p } else { 1.0 - p };
        }
        let gam = gamma_c_given(g, a, scheme, k, &chi);
        e_inv += w / gam;
        e_rate += w * (1.0 + gam).log2();
    }
    (e_inv, e_rate)
}

/// Worst-case interference coefficients derived from the Ω table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    /// Common interference sum `D_u` for a receiver on each road.
    pub d: [f64; 4],
    /// `Σ_u ρ_u S_R Ω^V2B_N Ω^C2B_P`: V2V load on the CUE bound.
    pub cue_v2v: f64,
    /// `K ψ² Ω^C2B_N Ω^C2B_P`: own-signal load on the SP CUE bound.
    pub cue_self: f64,
    pub psi: f64,
}

impl WorstCase {
    pub fn new(cfg: &ScenarioConfig, om: &OmegaTable) -> Self {
        let s = cfg.road_area();
        let psi = cfg.power_ratio;
        let k = cfg.num_cues as f64;
        let mut d = [0.0; 4];
        for u in RoadId::ALL {
            let mut sum = 0.0;
            for j in RoadId::ALL {
                let rho_s = cfg.avg_density[j.index()] * s;
                sum += match relation(u, j) {
                    // the receiver's own pair is not an interferer; the
                    // clamp keeps sparse roads from going negative
                    RoadRelation::Same => (rho_s - 2.0).max(0.0) * om.v2v_n1,
                    RoadRelation::Perpendicular => rho_s * om.v2v_n2,
                    RoadRelation::Parallel => rho_s * om.v2v_n3,
                };
            }
            sum += 2.0 * k * psi * psi * om.c2v_n;
            d[u.index()] = sum * om.v2v_p1;
        }
        let cue_v2v = cfg.avg_density.iter().map(|r| r * s).sum::<f64>() * om.v2b_n * om.c2b_p;
        let cue_self = k * psi * psi * om.c2b_n * om.c2b_p;
        Self { d, cue_v2v, cue_self, psi }
    }

    /// Merging coefficient `ā` with `Γ̄ = ā·τ` for the given scheme
    /// (`τ = τ_RP` for RP, `τ_SP` for SP).
    pub fn a(&self, kind: SchemeKind, road: RoadId) -> f64 {
        let d = self.d[road.index()];
        match kind {
            SchemeKind::Rp => 2.0 / d,
            SchemeKind::Sp => 1.0 / (1.0 + d),
        }
    }

    /// CUE frame-design floor for SP: smallest `ζ` with `Γ̄^C ≥ Θ̄`.
    pub fn sp_cue_floor(&self, theta_bar: f64) -> f64 {
        (self.cue_v2v + self.cue_self) * theta_bar / (self.psi * self.psi)
    }

    /// CUE requirement for RP as the pilot-length product `η ζ = τ_RP`.
    pub fn rp_cue_product(&self, theta_bar: f64) -> f64 {
        self.cue_v2v * theta_bar / (2.0 * self.psi * self.psi)
    }
}

/// Worst-case V2V bound per road. For RP, `τ_RP = η ζ` and `η ∈ (0, 1)`;
/// for SP `η` is ignored.
pub fn gamma_v_worstcase(cfg: &ScenarioConfig, om: &OmegaTable, kind: SchemeKind, eta: f64, zeta: f64) -> [f64; 4] {
    let wc = WorstCase::new(cfg, om);
    let tau = match kind {
        SchemeKind::Rp => eta * zeta,
        SchemeKind::Sp => zeta,
    };
    RoadId::ALL.map(|u| wc.a(kind, u) * tau)
}

/// Worst-case CUE bound (identical for every CUE).
pub fn gamma_c_worstcase(cfg: &ScenarioConfig, om: &OmegaTable, kind: SchemeKind, eta: f64, zeta: f64) -> f64 {
    let wc = WorstCase::new(cfg, om);
    let psi2 = wc.psi * wc.psi;
    match kind {
        SchemeKind::Rp => 2.0 * eta * zeta * psi2 / wc.cue_v2v,
        SchemeKind::Sp => zeta * psi2 / (wc.cue_v2v + wc.cue_self),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, V2vPair};

    fn two_pair_drop() -> Topology {
        let r = |i| RoadId::new(i).unwrap();
        Topology {
            pairs: vec![
                V2vPair { road: r(1), rx: Point::new(0.0, -100.0), tx: Point::new(12.0, -100.0) },
                V2vPair { road: r(2), rx: Point::new(100.0, 10.0), tx: Point::new(100.0, -2.0) },
            ],
            cues: vec![Point::new(-50.0, -94.0)],
        }
    }

    fn model() -> FadingModel {
        FadingModel::new(1e-3, 3.0).unwrap()
    }

    #[test]
    fn scheme_invariants() {
        assert!(PilotScheme::rp(4.0, 10.0, 4).is_ok());
        assert!(PilotScheme::rp(3.0, 10.0, 4).is_err());
        assert!(PilotScheme::rp(10.0, 10.0, 4).is_err());
        assert!(PilotScheme::sp(0.5, 0).is_err());
        assert_eq!(PilotScheme::rp(4.0, 10.0, 4).unwrap().lambda(), 6.0);
        assert_eq!(PilotScheme::sp(10.0, 4).unwrap().lambda(), 10.0);
    }

    #[test]
    fn single_pair_rp_is_unbounded() {
        let mut t = two_pair_drop();
        t.pairs.truncate(1);
        t.cues.clear();
        let a = PowerAllocation::uniform(1, 0, 0.1, 0.1);
        let s = PilotScheme::rp(2.0, 10.0, 0).unwrap();
        assert!(matches!(gamma_v_instance(&t, &model(), &a, &s), Err(SinrError::Unbounded { .. })));
    }

    #[test]
    fn no_pairs_rp_cue_is_unbounded_and_sp_reduces() {
        let t = Topology { pairs: vec![], cues: vec![Point::new(-50.0, -94.0)] };
        let a = PowerAllocation { p_v: vec![], q_v: vec![], p_c: vec![0.03], q_c: vec![0.07] };
        let rp = PilotScheme::rp(2.0, 10.0, 1).unwrap();
        assert!(matches!(gamma_c_instance(&t, &model(), &a, &rp), Err(SinrError::Unbounded { .. })));
        let sp = PilotScheme::sp(20.0, 1).unwrap();
        let g = gamma_c_instance(&t, &model(), &a, &sp).unwrap()[0];
        assert!((g / (20.0 * 0.07 / 0.03) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pairs_have_equal_gamma() {
        let r = |i| RoadId::new(i).unwrap();
        // mirror images across x = 0
        let t = Topology {
            pairs: vec![
                V2vPair { road: r(1), rx: Point::new(-20.0, -100.0), tx: Point::new(-32.0, -100.0) },
                V2vPair { road: r(1), rx: Point::new(20.0, -100.0), tx: Point::new(32.0, -100.0) },
            ],
            cues: vec![],
        };
        let a = PowerAllocation::uniform(2, 0, 0.05, 0.05);
        let s = PilotScheme::sp(50.0, 0).unwrap();
        let g = gamma_v_instance(&t, &model(), &a, &s).unwrap();
        assert!((g[0] / g[1] - 1.0).abs() < 1e-12);
    }

    /// Term-by-term re-summation straight from the bound's definition.
    fn oracle_v(t: &Topology, a: &PowerAllocation, s: &PilotScheme) -> Vec<f64> {
        let b = |p: Point, q: Point| 1e-3 * p.dist(q).powi(-3);
        let sp = s.kind() == SchemeKind::Sp;
        (0..t.pairs.len())
            .map(|r| {
                let rx = t.pairs[r].rx;
                let mut phi = 0.0;
                for (i, tx) in t.pairs.iter().enumerate() {
                    let g2 = b(rx, tx.tx).powi(2);
                    if i != r {
                        phi += a.p_v[i] * a.q_v[i] * g2;
                    }
                    if sp {
                        phi += a.p_v[i].powi(2) * g2;
                    }
                }
                for (k, c) in t.cues.iter().enumerate() {
                    let g2 = b(rx, *c).powi(2);
                    phi += a.p_c[k] * a.q_c[k] * g2 + if sp { a.p_c[k].powi(2) * g2 } else { 0.0 };
                }
                s.tau() * a.p_v[r] * a.q_v[r] * b(rx, t.pairs[r].tx).powi(2) / phi
            })
            .collect()
    }

    fn oracle_c(t: &Topology, a: &PowerAllocation, s: &PilotScheme) -> Vec<f64> {
        let bs = |p: Point| 1e-3 * p.norm().powi(-3);
        let sp = s.kind() == SchemeKind::Sp;
        let mut den = 0.0;
        for (i, pr) in t.pairs.iter().enumerate() {
            den += a.p_v[i] * a.q_v[i] * bs(pr.tx).powi(2);
            if sp {
                den += a.p_v[i].powi(2) * bs(pr.tx).powi(2);
            }
        }
        if sp {
            for (k, c) in t.cues.iter().enumerate() {
                den += a.p_c[k].powi(2) * bs(*c).powi(2);
            }
        }
        t.cues.iter().enumerate().map(|(k, c)| s.tau() * a.p_c[k] * a.q_c[k] * bs(*c).powi(2) / den).collect()
    }

    #[test]
    fn instance_matches_resummation() {
        let cfg = ScenarioConfig { num_cues: 1, ..Default::default() };
        for seed in 0..20 {
            let mut rng = crate::rng::seeded(seed);
            let t = crate::geometry::sample_topology(&cfg, [1, 1, 0, 0], &mut rng).unwrap();
            let a = PowerAllocation {
                p_v: vec![0.03, 0.11],
                q_v: vec![0.17, 0.05],
                p_c: vec![0.09],
                q_c: vec![0.13],
            };
            for s in [PilotScheme::rp(4.0, 30.0, 1).unwrap(), PilotScheme::sp(30.0, 1).unwrap()] {
                let g = gamma_v_instance(&t, &model(), &a, &s).unwrap();
                for (x, y) in g.iter().zip(oracle_v(&t, &a, &s)) {
                    assert!((x / y - 1.0).abs() < 1e-12);
                }
                let c = gamma_c_instance(&t, &model(), &a, &s).unwrap();
                for (x, y) in c.iter().zip(oracle_c(&t, &a, &s)) {
                    assert!((x / y - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rp_is_scale_invariant_sp_is_not() {
        let t = two_pair_drop();
        let a = PowerAllocation { p_v: vec![0.03, 0.11], q_v: vec![0.17, 0.05], p_c: vec![0.09], q_c: vec![0.13] };
        let mut b = a.clone();
        for v in [&mut b.p_v, &mut b.q_v, &mut b.p_c, &mut b.q_c] {
            v.iter_mut().for_each(|x| *x *= 3.7);
        }
        let rp = PilotScheme::rp(4.0, 30.0, 1).unwrap();
        let (x, y) = (gamma_v_instance(&t, &model(), &a, &rp).unwrap(), gamma_v_instance(&t, &model(), &b, &rp).unwrap());
        for (u, v) in x.iter().zip(&y) {
            assert!((u / v - 1.0).abs() < 1e-13);
        }
        // SP: all terms scale as c², so Γ is invariant there too; only the
        // squared-signal terms distinguish SP from RP
        let sp = PilotScheme::sp(30.0, 1).unwrap();
        let (x, y) = (gamma_v_instance(&t, &model(), &a, &sp).unwrap(), gamma_v_instance(&t, &model(), &b, &sp).unwrap());
        for (u, v) in x.iter().zip(&y) {
            assert!((u / v - 1.0).abs() < 1e-13);
        }
        // doubling only the signal powers changes SP through p² terms
        let mut c = a.clone();
        c.p_v.iter_mut().for_each(|x| *x *= 2.0);
        let g = LinkGains::from_topology(&t, &model()).unwrap();
        for r in 0..2 {
            let base_rp = phi_v(&g, &a, SchemeKind::Rp, r);
            let base_sp = phi_v(&g, &a, SchemeKind::Sp, r);
            let new_rp = phi_v(&g, &c, SchemeKind::Rp, r);
            let new_sp = phi_v(&g, &c, SchemeKind::Sp, r);
            let sq: f64 = (0..2).map(|t| (c.p_v[t].powi(2) - a.p_v[t].powi(2)) * g.v2v[r][t].powi(2)).sum();
            assert!(((new_sp - base_sp) - (new_rp - base_rp) - sq).abs() < 1e-12 * new_sp);
        }
    }

    #[test]
    fn pilot_average_matches_bound_exactly() {
        let t = two_pair_drop();
        let g = LinkGains::from_topology(&t, &model()).unwrap();
        let a = PowerAllocation { p_v: vec![0.03, 0.11], q_v: vec![0.17, 0.05], p_c: vec![0.09], q_c: vec![0.13] };
        for s in [PilotScheme::rp(4.0, 30.0, 1).unwrap(), PilotScheme::sp(30.0, 1).unwrap()] {
            let gv = gamma_v_from_gains(&g, &a, &s).unwrap();
            for (r, gam) in gv.iter().enumerate() {
                let (e_inv, e_rate) = pilot_law_moments_v(&g, &a, &s, r);
                assert!((e_inv * gam - 1.0).abs() < 1e-12);
                assert!(e_rate >= (1.0 + gam).log2());
            }
            let gc = gamma_c_from_gains(&g, &a, &s).unwrap();
            let (e_inv, e_rate) = pilot_law_moments_c(&g, &a, &s, 0);
            assert!((e_inv * gc[0] - 1.0).abs() < 1e-12);
            assert!(e_rate >= (1.0 + gc[0]).log2());
        }
    }

    fn om() -> OmegaTable {
        OmegaTable {
            v2v_n1: 7.76e-4,
            v2v_n2: 4.48e-8,
            v2v_n3: 1.12e-14,
            v2v_p1: 5.07e4,
            c2v_n: 6.84e-6,
            v2b_n: 5.49e-13,
            c2b_n: 7.66e-13,
            c2b_p: 1.96e12,
        }
    }

    #[test]
    fn worst_case_limits_and_monotonicity() {
        let cfg = ScenarioConfig::default();
        for kind in [SchemeKind::Rp, SchemeKind::Sp] {
            let tiny = gamma_v_worstcase(&cfg, &om(), kind, 0.5, 1e-9);
            assert!(tiny.iter().all(|&g| g < 1e-9));
            let a = gamma_v_worstcase(&cfg, &om(), kind, 0.3, 100.0);
            let b = gamma_v_worstcase(&cfg, &om(), kind, 0.3, 101.0);
            assert!(a.iter().zip(&b).all(|(x, y)| y > x));
        }
        let x = gamma_v_worstcase(&cfg, &om(), SchemeKind::Rp, 0.5, 100.0);
        assert_eq!(x, gamma_v_worstcase(&cfg, &om(), SchemeKind::Rp, 0.5, 100.0));
    }

    #[test]
    fn cue_bound_large_psi_limit() {
        let cfg = ScenarioConfig { power_ratio: 1e8, ..Default::default() };
        let g = gamma_c_worstcase(&cfg, &om(), SchemeKind::Sp, 0.0, 100.0);
        let lim = 100.0 / (cfg.num_cues as f64 * om().c2b_n * om().c2b_p);
        assert!((g / lim - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sparse_road_never_goes_negative() {
        let cfg = ScenarioConfig::default().with_density(0.001);
        let wc = WorstCase::new(&cfg, &om());
        assert!(wc.d.iter().all(|&d| d > 0.0));
    }
}
