//! Antenna-level Monte Carlo of pilot assignment, LMMSE estimation and MRC
//! combining, used to check the large-array SINR expressions.
//!
//! Pilots are orthogonal, so the projection `Y a*/√τ` onto a transmitter's
//! pilot is simulated directly: it is the sum of `√(qτ)·g` over every
//! transmitter sharing that pilot, plus (SP only) the data leaking into the
//! projection, `√p·g·x` with `x ~ CN(0,1)`, plus `CN(0, σ²I)` noise. The
//! data phase after pilot cancellation is the same for both schemes.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fbl::{info_bits, FblError};
use crate::geometry::{
    place_transmitter, receiver_rect, road_rect, sidewalk_rects, GeometryError, Rect, RoadId, ScenarioConfig, Topology,
    V2vPair, MAX_TX_ATTEMPTS,
};
use crate::rng::{derive_seed, seeded, SimRng};
use crate::sinr_bounds::{
    gamma_c_given, gamma_c_from_gains, gamma_v_from_gains, gamma_v_given, LinkGains, PilotScheme, PowerAllocation,
    SchemeKind, SinrError, VCollisions,
};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("{cues} CUEs need distinct pilots but only {tau} exist")]
    TooFewPilots { cues: usize, tau: usize },
    #[error("invalid link configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sinr(#[from] SinrError),
    #[error(transparent)]
    Fbl(#[from] FblError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDrawConfig {
    /// V2V receive antennas.
    pub n_rx: usize,
    /// BS antennas.
    pub m_bs: usize,
    /// Noise power (W).
    pub noise: f64,
    /// Channel draws per SINR estimate.
    pub draws: usize,
}

impl Default for LinkDrawConfig {
    fn default() -> Self {
        // thermal noise over 500 kHz at −174 dBm/Hz
        Self { n_rx: 256, m_bs: 256, noise: 10f64.powf(-20.4) * 5e5, draws: 2000 }
    }
}

impl LinkDrawConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.n_rx == 0 || self.m_bs == 0 {
            return Err(LinkError::Config("antenna counts must be at least 1".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(LinkError::Config(format!("noise power must be positive, got {}", self.noise)));
        }
        if self.draws < 10 {
            return Err(LinkError::Config("need at least 10 draws".into()));
        }
        if self.n_rx < 64 {
            log::warn!("N = {} is small; channel hardening is weak and the large-array SINR is optimistic", self.n_rx);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotAssignment {
    pub tau: usize,
    pub pairs: Vec<usize>,
    pub cues: Vec<usize>,
}

impl PilotAssignment {
    pub fn v_collisions(&self, r: usize) -> VCollisions {
        let me = self.pairs[r];
        VCollisions {
            pairs: self.pairs.iter().enumerate().map(|(t, &p)| t != r && p == me).collect(),
            cue: self.cues.iter().position(|&p| p == me),
        }
    }

    pub fn c_collisions(&self, k: usize) -> Vec<bool> {
        self.pairs.iter().map(|&p| p == self.cues[k]).collect()
    }

    /// An assignment realizing `chi` as seen by pair `r`. Pilots of
    /// non-colliding pairs are chosen to avoid `r`'s pilot.
    pub fn for_pattern(num_cues: usize, tau: usize, r: usize, chi: &VCollisions) -> Result<Self, LinkError> {
        if tau <= num_cues && chi.cue.is_none() {
            return Err(LinkError::TooFewPilots { cues: num_cues + 1, tau });
        }
        let mine = chi.cue.unwrap_or(num_cues);
        let other = (mine + 1) % tau;
        let pairs = (0..chi.pairs.len()).map(|t| if t == r || chi.pairs[t] { mine } else { other }).collect();
        Ok(Self { tau, pairs, cues: (0..num_cues).collect() })
    }
}

/// CUEs take `K` distinct pilots; each V2V transmitter picks uniformly.
pub fn assign_pilots<R: Rng + ?Sized>(num_pairs: usize, num_cues: usize, tau: usize, rng: &mut R) -> Result<PilotAssignment, LinkError> {
    if num_cues > tau || tau == 0 {
        return Err(LinkError::TooFewPilots { cues: num_cues, tau });
    }
    let cues = sample(rng, tau, num_cues).into_vec();
    let pairs = (0..num_pairs).map(|_| rng.random_range(0..tau)).collect();
    Ok(PilotAssignment { tau, pairs, cues })
}

/// Integer pilot-set size used at antenna level.
pub fn pilot_count(scheme: &PilotScheme) -> usize {
    scheme.tau().round().max(1.0) as usize
}

pub fn cn<R: Rng + ?Sized>(rng: &mut R) -> C {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    C::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
}

fn cn_vec<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Vec<C> {
    (0..n).map(|_| cn(rng) * scale).collect()
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[C]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Whose signal a receiver wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Target {
    Pair(usize),
    Cue(usize),
}

/// Large-scale view of one receiver: gains from every transmitter.
#[derive(Debug, Clone)]
struct RxView {
    antennas: usize,
    beta_pairs: Vec<f64>,
    beta_cues: Vec<f64>,
    target: Target,
}

impl RxView {
    fn new(g: &LinkGains, target: Target, cfg: &LinkDrawConfig) -> Self {
        match target {
            Target::Pair(r) => Self { antennas: cfg.n_rx, beta_pairs: g.v2v[r].clone(), beta_cues: g.c2v[r].clone(), target },
            Target::Cue(_) => Self { antennas: cfg.m_bs, beta_pairs: g.v2b.clone(), beta_cues: g.c2b.clone(), target },
        }
    }
}

/// Small-scale channels into one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct RxChannels {
    pub pairs: Vec<Vec<C>>,
    pub cues: Vec<Vec<C>>,
}

/// One realization of every channel in a drop plus the pilot draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// Channels into each V2V receiver.
    pub v2v: Vec<RxChannels>,
    /// Channels into the BS.
    pub bs: RxChannels,
    pub pilots: PilotAssignment,
}

fn sample_rx<R: Rng + ?Sized>(v: &RxView, rng: &mut R) -> RxChannels {
    RxChannels {
        pairs: v.beta_pairs.iter().map(|b| cn_vec(v.antennas, b.sqrt(), rng)).collect(),
        cues: v.beta_cues.iter().map(|b| cn_vec(v.antennas, b.sqrt(), rng)).collect(),
    }
}

impl ChannelDraw {
    pub fn sample<R: Rng + ?Sized>(g: &LinkGains, pilots: PilotAssignment, cfg: &LinkDrawConfig, rng: &mut R) -> Self {
        let v2v = (0..g.num_pairs()).map(|r| sample_rx(&RxView::new(g, Target::Pair(r), cfg), rng)).collect();
        let bs = sample_rx(&RxView::new(g, Target::Cue(0), cfg), rng);
        Self { v2v, bs, pilots }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub g_hat: Vec<C>,
    pub omega: f64,
}

fn estimate_one<R: Rng + ?Sized>(
    v: &RxView,
    ch: &RxChannels,
    a: &PowerAllocation,
    scheme: &PilotScheme,
    pilots: &PilotAssignment,
    noise: f64,
    rng: &mut R,
) -> Estimate {
    let tau = scheme.tau();
    let sp = scheme.kind() == SchemeKind::Sp;
    let (my_pilot, q_own, beta_own) = match v.target {
        Target::Pair(r) => (pilots.pairs[r], a.q_v[r], v.beta_pairs[r]),
        Target::Cue(k) => (pilots.cues[k], a.q_c[k], v.beta_cues[k]),
    };
    let mut b = cn_vec(v.antennas, noise.sqrt(), rng);
    let mut den = noise;
    let add = |b: &mut Vec<C>, g: &[C], w: C| b.iter_mut().zip(g).for_each(|(x, y)| *x += y * w);
    for (t, g) in ch.pairs.iter().enumerate() {
        if pilots.pairs[t] == my_pilot {
            add(&mut b, g, C::from((a.q_v[t] * tau).sqrt()));
            den += a.q_v[t] * tau * v.beta_pairs[t];
        }
        if sp {
            add(&mut b, g, cn(rng) * a.p_v[t].sqrt());
            den += a.p_v[t] * v.beta_pairs[t];
        }
    }
    for (k, g) in ch.cues.iter().enumerate() {
        if pilots.cues[k] == my_pilot {
            add(&mut b, g, C::from((a.q_c[k] * tau).sqrt()));
            den += a.q_c[k] * tau * v.beta_cues[k];
        }
        if sp {
            add(&mut b, g, cn(rng) * a.p_c[k].sqrt());
            den += a.p_c[k] * v.beta_cues[k];
        }
    }
    let omega = q_own * tau * beta_own / den;
    let s = omega / (q_own * tau).sqrt();
    b.iter_mut().for_each(|x| *x *= s);
    Estimate { g_hat: b, omega }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub v2v: Vec<Estimate>,
    pub cue: Vec<Estimate>,
}

/// LMMSE estimates of every V2V direct channel and every CUE-to-BS channel.
pub fn lmmse_estimate<R: Rng + ?Sized>(
    draw: &ChannelDraw,
    g: &LinkGains,
    a: &PowerAllocation,
    scheme: &PilotScheme,
    cfg: &LinkDrawConfig,
    rng: &mut R,
) -> Estimates {
    let v2v = (0..g.num_pairs())
        .map(|r| estimate_one(&RxView::new(g, Target::Pair(r), cfg), &draw.v2v[r], a, scheme, &draw.pilots, cfg.noise, rng))
        .collect();
    let cue = (0..g.num_cues())
        .map(|k| estimate_one(&RxView::new(g, Target::Cue(k), cfg), &draw.bs, a, scheme, &draw.pilots, cfg.noise, rng))
        .collect();
    Estimates { v2v, cue }
}

/// Per-draw sufficient statistics of the MRC output.
#[derive(Debug, Clone)]
struct Moments {
    own: C,
    power: f64,
}

fn draw_moments(v: &RxView, a: &PowerAllocation, scheme: &PilotScheme, pilots: &PilotAssignment, noise: f64, rng: &mut SimRng) -> Moments {
    let ch = sample_rx(v, rng);
    let est = estimate_one(v, &ch, a, scheme, pilots, noise, rng);
    let gh = &est.g_hat;
    let own_ch = match v.target {
        Target::Pair(r) => &ch.pairs[r],
        Target::Cue(k) => &ch.cues[k],
    };
    let own_p = match v.target {
        Target::Pair(r) => a.p_v[r],
        Target::Cue(k) => a.p_c[k],
    };
    let mut power = noise * norm2(gh);
    for (t, g) in ch.pairs.iter().enumerate() {
        power += a.p_v[t] * dot(gh, g).norm_sqr();
    }
    for (k, g) in ch.cues.iter().enumerate() {
        power += a.p_c[k] * dot(gh, g).norm_sqr();
    }
    Moments { own: dot(gh, own_ch) * own_p.sqrt(), power }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrCompare {
    pub empirical: f64,
    pub std_err: f64,
    /// Large-array SINR for the same pilot draw.
    pub asymptotic: f64,
}

impl SinrCompare {
    pub fn rel_err(&self) -> f64 {
        (self.empirical - self.asymptotic).abs() / self.asymptotic
    }
}

const BATCHES: usize = 10;

/// Use-and-then-forget SINR: `|E[ĝᴴg]|²p` over the mean post-combining
/// power minus that coherent part, averaged over draws. The coherent part
/// uses the unbiased estimate `|mean|² − var/n`.
fn uatf(m: &[Moments]) -> f64 {
    let n = m.len() as f64;
    let mean: C = m.iter().map(|x| x.own).sum::<C>() / n;
    let var = m.iter().map(|x| (x.own - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    let total = m.iter().map(|x| x.power).sum::<f64>() / n;
    let des = (mean.norm_sqr() - var / n).max(f64::MIN_POSITIVE);
    des / (total - des)
}

fn measure(v: &RxView, a: &PowerAllocation, scheme: &PilotScheme, pilots: &PilotAssignment, cfg: &LinkDrawConfig, seed: u64) -> (f64, f64) {
    let moments: Vec<Moments> = (0..cfg.draws)
        .into_par_iter()
        .map(|i| draw_moments(v, a, scheme, pilots, cfg.noise, &mut seeded(derive_seed(seed, i as u64))))
        .collect();
    let gamma = uatf(&moments);
    let per = moments.len() / BATCHES;
    let batch: Vec<f64> = moments.chunks(per).take(BATCHES).map(uatf).collect();
    let mb = batch.iter().sum::<f64>() / batch.len() as f64;
    let var = batch.iter().map(|g| (g - mb).powi(2)).sum::<f64>() / (batch.len() - 1) as f64;
    (gamma, (var / batch.len() as f64).sqrt())
}

/// Exact finite-array value of the same decomposition. With `e_t` the
/// projection weight of transmitter `t` and `D` the LMMSE denominator,
/// `E|ĝᴴg_t|² ∝ e_t N² β_t² + N β_t D`, so the large-array form gains
/// `(Σ p_t β_t + σ²) D / N` in its denominator.
pub fn finite_sinr(g: &LinkGains, a: &PowerAllocation, scheme: &PilotScheme, pilots: &PilotAssignment, cfg: &LinkDrawConfig, target: Target) -> f64 {
    let v = RxView::new(g, target, cfg);
    let tau = scheme.tau();
    let sp = scheme.kind() == SchemeKind::Sp;
    let mine = match target {
        Target::Pair(r) => pilots.pairs[r],
        Target::Cue(k) => pilots.cues[k],
    };
    let tx = a
        .p_v
        .iter()
        .zip(&a.q_v)
        .zip(&pilots.pairs)
        .zip(&v.beta_pairs)
        .chain(a.p_c.iter().zip(&a.q_c).zip(&pilots.cues).zip(&v.beta_cues))
        .map(|(((&p, &q), &pil), &b)| {
            let e = if pil == mine { q * tau } else { 0.0 } + if sp { p } else { 0.0 };
            (p, e, b)
        });
    let (mut coh, mut spread, mut den) = (0.0, 0.0, cfg.noise);
    for (p, e, b) in tx {
        coh += p * e * b * b;
        spread += p * b;
        den += e * b;
    }
    let own = match target {
        Target::Pair(r) => a.p_v[r] * a.q_v[r] * tau * v.beta_pairs[r].powi(2),
        Target::Cue(k) => a.p_c[k] * a.q_c[k] * tau * v.beta_cues[k].powi(2),
    };
    let n = v.antennas as f64;
    own / (coh - own + (spread + cfg.noise) * den / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSinr {
    pub v: Vec<SinrCompare>,
    pub c: Vec<SinrCompare>,
}

/// Empirical SINR of every pair and CUE for a fixed pilot draw, next to
/// the large-array value for that draw.
pub fn empirical_sinr(
    g: &LinkGains,
    a: &PowerAllocation,
    scheme: &PilotScheme,
    pilots: &PilotAssignment,
    cfg: &LinkDrawConfig,
    seed: u64,
) -> Result<EmpiricalSinr, LinkError> {
    cfg.validate()?;
    let v = (0..g.num_pairs())
        .map(|r| {
            let (e, se) = measure(&RxView::new(g, Target::Pair(r), cfg), a, scheme, pilots, cfg, derive_seed(seed, r as u64));
            SinrCompare { empirical: e, std_err: se, asymptotic: gamma_v_given(g, a, scheme, r, &pilots.v_collisions(r)) }
        })
        .collect();
    let c = (0..g.num_cues())
        .map(|k| {
            let s = derive_seed(seed, (1 << 32) + k as u64);
            let (e, se) = measure(&RxView::new(g, Target::Cue(k), cfg), a, scheme, pilots, cfg, s);
            SinrCompare { empirical: e, std_err: se, asymptotic: gamma_c_given(g, a, scheme, k, &pilots.c_collisions(k)) }
        })
        .collect();
    Ok(EmpiricalSinr { v, c })
}

/// Pilot-law averages for one link: exact over the collision patterns,
/// Monte Carlo over the channels within each pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenRow {
    pub target: Target,
    /// `E_χ[1/γ_emp]`.
    pub mean_inv_empirical: f64,
    /// `E_χ[1/γ]` from the exact finite-array expression.
    pub mean_inv_finite: f64,
    /// `1/Γ` from the per-drop bound.
    pub inv_bound: f64,
    /// `E_χ[log₂(1+γ_emp)]`.
    pub mean_rate_empirical: f64,
    /// Finite-blocklength bound per data symbol, `Ĩ/λ`.
    pub rate_bound: f64,
}

impl JensenRow {
    pub fn holds(&self) -> bool {
        self.mean_inv_empirical >= self.inv_bound
    }
}

/// Compares the finite-array link with the per-drop bound `Γ` over the
/// random pilot law. Patterns are enumerated, so keep drops small.
pub fn jensen_check(
    g: &LinkGains,
    a: &PowerAllocation,
    scheme: &PilotScheme,
    epsilon: f64,
    cfg: &LinkDrawConfig,
    seed: u64,
) -> Result<Vec<JensenRow>, LinkError> {
    cfg.validate()?;
    let lambda = scheme.lambda();
    let bound = |gamma: f64| info_bits(gamma, lambda, epsilon).map(|i| i / lambda);
    let tau = pilot_count(scheme);
    let (np, nc) = (g.num_pairs(), g.num_cues());
    let p = 1.0 / tau as f64;
    let gv = gamma_v_from_gains(g, a, scheme)?;
    let gc = gamma_c_from_gains(g, a, scheme)?;
    let mut rows = Vec::new();
    let mut stream = 0u64;
    for r in 0..np {
        let view = RxView::new(g, Target::Pair(r), cfg);
        let others: Vec<usize> = (0..np).filter(|&t| t != r).collect();
        let (mut inv, mut rate, mut fin) = (0.0, 0.0, 0.0);
        for cue in std::iter::once(None).chain((0..nc).map(Some)) {
            let w_cue = if cue.is_some() { p } else { 1.0 - nc as f64 * p };
            if w_cue <= 0.0 {
                continue;
            }
            for mask in 0u64..(1u64 << others.len()) {
                let mut chi = VCollisions { pairs: vec![false; np], cue };
                let mut w = w_cue;
                for (bit, &t) in others.iter().enumerate() {
                    chi.pairs[t] = mask >> bit & 1 == 1;
                    w *= if chi.pairs[t] { p } else { 1.0 - p };
                }
                let pilots = PilotAssignment::for_pattern(nc, tau, r, &chi)?;
                stream += 1;
                let (ge, _) = measure(&view, a, scheme, &pilots, cfg, derive_seed(seed, stream));
                fin += w / finite_sinr(g, a, scheme, &pilots, cfg, Target::Pair(r));
                inv += w / ge;
                rate += w * ge.ln_1p() / std::f64::consts::LN_2;
            }
        }
        rows.push(JensenRow { target: Target::Pair(r), mean_inv_empirical: inv, mean_inv_finite: fin, inv_bound: 1.0 / gv[r], mean_rate_empirical: rate, rate_bound: bound(gv[r])? });
    }
    for k in 0..nc {
        let view = RxView::new(g, Target::Cue(k), cfg);
        let (mut inv, mut rate, mut fin) = (0.0, 0.0, 0.0);
        for mask in 0u64..(1u64 << np) {
            let mut w = 1.0;
            let mut pairs = vec![0usize; np];
            for (t, slot) in pairs.iter_mut().enumerate() {
                let hit = mask >> t & 1 == 1;
                w *= if hit { p } else { 1.0 - p };
                *slot = if hit { k } else { (k + 1) % tau };
            }
            if w == 0.0 {
                continue;
            }
            let pilots = PilotAssignment { tau, pairs, cues: (0..nc).collect() };
            stream += 1;
            let (ge, _) = measure(&view, a, scheme, &pilots, cfg, derive_seed(seed, stream));
            fin += w / finite_sinr(g, a, scheme, &pilots, cfg, Target::Cue(k));
            inv += w / ge;
            rate += w * ge.ln_1p() / std::f64::consts::LN_2;
        }
        rows.push(JensenRow { target: Target::Cue(k), mean_inv_empirical: inv, mean_inv_finite: fin, inv_bound: 1.0 / gc[k], mean_rate_empirical: rate, rate_bound: bound(gc[k])? });
    }
    Ok(rows)
}

/// Sample variance of `gᴴg/(Nβ)` for `g ~ CN(0, βI_N)`.
pub fn hardening_variance(n: usize, draws: usize, seed: u64) -> f64 {
    let xs: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i as u64));
            norm2(&cn_vec(n, 1.0, &mut rng)) / n as f64
        })
        .collect();
    let m = xs.iter().sum::<f64>() / draws as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64
}

/// Mean of `|g₁ᴴg₂|/N` for independent `g_i ~ CN(0, β_i I_N)`.
pub fn cross_correlation(n: usize, beta1: f64, beta2: f64, draws: usize, seed: u64) -> f64 {
    let s: f64 = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, i as u64));
            let a = cn_vec(n, beta1.sqrt(), &mut rng);
            let b = cn_vec(n, beta2.sqrt(), &mut rng);
            dot(&a, &b).norm() / n as f64
        })
        .sum();
    s / draws as f64
}

/// A drop with every node inside one `span`-metre stretch of road 1 and
/// its adjacent sidewalk, so co-pilot interferers are strong. The
/// large-array SINR drops terms of relative order `1/N`, which only stay
/// negligible when pilot contamination dominates.
pub fn clustered_drop(cfg: &ScenarioConfig, pairs: usize, cues: usize, span: f64, rng: &mut SimRng) -> Result<Topology, GeometryError> {
    let road = RoadId::new(1)?;
    let rx_area = receiver_rect(cfg, road);
    let x0 = rx_area.x0 + (rx_area.width() - span).max(0.0) * rng.random::<f64>();
    let window = Rect::new(x0, x0 + span, f64::NEG_INFINITY, f64::INFINITY);
    let rx_area = rx_area.intersect(&window);
    let walk = sidewalk_rects(cfg)[0].intersect(&window);
    let full = road_rect(cfg, road);
    let mut topo = Topology::default();
    for _ in 0..pairs {
        let rx = rx_area.sample(rng);
        let tx = place_transmitter(rx, cfg.pair_separation, &full, rng)
            .ok_or(GeometryError::TransmitterPlacement { road: 1, attempts: MAX_TX_ATTEMPTS })?;
        topo.pairs.push(V2vPair { road, rx, tx });
    }
    topo.cues = (0..cues).map(|_| walk.sample(rng)).collect();
    Ok(topo)
}

/// Least-squares slope of `log y` against `log x`, with its R².
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, ScenarioConfig};
    use crate::pathloss::FadingModel;

    fn gains(t: &Topology) -> LinkGains {
        LinkGains::from_topology(t, &FadingModel::new(1e-3, 3.0).unwrap()).unwrap()
    }

    fn one_pair() -> Topology {
        let r = RoadId::new(1).unwrap();
        Topology { pairs: vec![V2vPair { road: r, rx: Point::new(0.0, -100.0), tx: Point::new(12.0, -100.0) }], cues: vec![] }
    }

    #[test]
    fn pilot_collision_frequencies() {
        let mut rng = seeded(11);
        let tau = 8;
        let n = 200_000;
        let (mut fixed, mut pair) = (0usize, 0usize);
        for _ in 0..n {
            let a = assign_pilots(2, 3, tau, &mut rng).unwrap();
            fixed += usize::from(a.pairs[0] == 5);
            pair += usize::from(a.pairs[0] == a.pairs[1]);
            let mut c = a.cues.clone();
            c.sort_unstable();
            c.dedup();
            assert_eq!(c.len(), 3);
        }
        for hits in [fixed, pair] {
            let f = hits as f64 / n as f64;
            assert!((f * tau as f64 - 1.0).abs() < 0.02, "{f}");
        }
        let full = assign_pilots(1, 6, 6, &mut rng).unwrap();
        let mut c = full.cues.clone();
        c.sort_unstable();
        assert_eq!(c, (0..6).collect::<Vec<_>>());
        assert!(assign_pilots(1, 7, 6, &mut rng).is_err());
    }

    #[test]
    fn high_snr_estimate_is_consistent() {
        let t = one_pair();
        let g = gains(&t);
        let beta = g.v2v[0][0];
        // qτβ/σ² = 1e6
        let scheme = PilotScheme::rp(10.0, 100.0, 0).unwrap();
        let a = PowerAllocation::uniform(1, 0, 0.1, 0.1);
        let cfg = LinkDrawConfig { noise: 0.1 * 10.0 * beta / 1e6, ..Default::default() };
        let mut rng = seeded(4);
        let pilots = assign_pilots(1, 0, 10, &mut rng).unwrap();
        let d = ChannelDraw::sample(&g, pilots, &cfg, &mut rng);
        let e = lmmse_estimate(&d, &g, &a, &scheme, &cfg, &mut rng);
        let gt = &d.v2v[0].pairs[0];
        let err: Vec<C> = e.v2v[0].g_hat.iter().zip(gt).map(|(x, y)| x - y).collect();
        assert!((norm2(&err) / norm2(gt)).sqrt() < 1e-2);
        assert!(e.v2v[0].omega > 0.0 && e.v2v[0].omega <= 1.0);
    }

    #[test]
    fn estimation_error_is_orthogonal() {
        let r = |i| RoadId::new(i).unwrap();
        let t = Topology {
            pairs: vec![
                V2vPair { road: r(1), rx: Point::new(0.0, -100.0), tx: Point::new(12.0, -100.0) },
                V2vPair { road: r(1), rx: Point::new(30.0, -99.0), tx: Point::new(18.0, -101.0) },
            ],
            cues: vec![Point::new(5.0, -94.0)],
        };
        let g = gains(&t);
        let a = PowerAllocation { p_v: vec![0.1, 0.05], q_v: vec![0.08, 0.1], p_c: vec![0.1], q_c: vec![0.02] };
        for scheme in [PilotScheme::rp(4.0, 100.0, 1).unwrap(), PilotScheme::sp(20.0, 1).unwrap()] {
            let cfg = LinkDrawConfig { n_rx: 16, m_bs: 16, noise: 1e-9, draws: 10_000 };
            let pilots = PilotAssignment { tau: pilot_count(&scheme), pairs: vec![0, 0], cues: vec![0] };
            let vals: Vec<(C, f64)> = (0..cfg.draws)
                .map(|i| {
                    let mut rng = seeded(derive_seed(77, i as u64));
                    let d = ChannelDraw::sample(&g, pilots.clone(), &cfg, &mut rng);
                    let e = lmmse_estimate(&d, &g, &a, &scheme, &cfg, &mut rng);
                    let gh = &e.v2v[0].g_hat;
                    let diff: Vec<C> = d.v2v[0].pairs[0].iter().zip(gh).map(|(x, y)| x - y).collect();
                    (dot(gh, &diff), e.v2v[0].omega)
                })
                .collect();
            let n = vals.len() as f64;
            let mean: C = vals.iter().map(|v| v.0).sum::<C>() / n;
            let var_re = vals.iter().map(|v| (v.0.re - mean.re).powi(2)).sum::<f64>() / (n - 1.0);
            let var_im = vals.iter().map(|v| (v.0.im - mean.im).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.re.abs() <= 3.0 * (var_re / n).sqrt(), "{scheme:?} {mean}");
            assert!(mean.im.abs() <= 3.0 * (var_im / n).sqrt());
            assert!(vals.iter().all(|v| v.1 > 0.0 && v.1 <= 1.0));
        }
    }

    #[test]
    fn array_gain_is_linear_in_n() {
        let t = one_pair();
        let g = gains(&t);
        let a = PowerAllocation::uniform(1, 0, 0.1, 0.1);
        let scheme = PilotScheme::rp(4.0, 100.0, 0).unwrap();
        let pilots = PilotAssignment { tau: 4, pairs: vec![0], cues: vec![] };
        // noise comparable to the received power so the SNR is finite
        let noise = 0.1 * g.v2v[0][0];
        let ns = [64.0, 128.0, 256.0];
        let snr: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let cfg = LinkDrawConfig { n_rx: n as usize, m_bs: 16, noise, draws: 4000 };
                empirical_sinr(&g, &a, &scheme, &pilots, &cfg, 5).unwrap().v[0].empirical
            })
            .collect();
        let (slope, r2) = loglog_slope(&ns, &snr);
        assert!((slope - 1.0).abs() < 0.1 && r2 > 0.99, "{slope} {r2} {snr:?}");
    }

    #[test]
    fn hardening_and_orthogonality() {
        let ns = [16.0, 64.0, 256.0];
        let v: Vec<f64> = ns.iter().map(|&n| hardening_variance(n as usize, 20_000, 9)).collect();
        let (slope, _) = loglog_slope(&ns, &v);
        assert!((slope + 1.0).abs() < 0.1, "{slope}");
        let (b1, b2) = (2e-7, 5e-8);
        assert!(cross_correlation(256, b1, b2, 2000, 3) < 0.15 * (b1 * b2).sqrt());
    }

    #[test]
    fn monte_carlo_matches_exact_finite_array_value() {
        let cfg = ScenarioConfig { num_cues: 1, ..Default::default() };
        let fading = FadingModel::from_config(&cfg);
        let lc = LinkDrawConfig { draws: 4000, n_rx: 64, m_bs: 64, ..Default::default() };
        for seed in 0..4 {
            let t = crate::geometry::sample_topology(&cfg, [2, 1, 0, 0], &mut seeded(seed)).unwrap();
            let g = LinkGains::from_topology(&t, &fading).unwrap();
            let a = PowerAllocation { p_v: vec![0.1, 0.05, 0.2], q_v: vec![0.2, 0.1, 0.03], p_c: vec![0.1], q_c: vec![0.04] };
            for scheme in [PilotScheme::rp(4.0, 100.0, 1).unwrap(), PilotScheme::sp(16.0, 1).unwrap()] {
                let p = PilotAssignment { tau: pilot_count(&scheme), pairs: vec![0, 0, 1], cues: vec![0] };
                let e = empirical_sinr(&g, &a, &scheme, &p, &lc, seed).unwrap();
                let targets = (0..3).map(Target::Pair).chain([Target::Cue(0)]);
                for (c, tg) in e.v.iter().chain(&e.c).zip(targets) {
                    let exact = finite_sinr(&g, &a, &scheme, &p, &lc, tg);
                    assert!((c.empirical - exact).abs() <= 4.0 * c.std_err + 0.01 * exact, "{seed} {tg:?} {c:?} {exact}");
                    let huge = LinkDrawConfig { n_rx: 1 << 52, m_bs: 1 << 52, ..lc };
                    let lim = finite_sinr(&g, &a, &scheme, &p, &huge, tg);
                    if c.asymptotic.is_finite() {
                        assert!((lim / c.asymptotic - 1.0).abs() < 1e-6, "{lim} {}", c.asymptotic);
                    } else {
                        assert!(lim > 1e6 * c.empirical);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let g = gains(&one_pair());
        let a = PowerAllocation::uniform(1, 0, 0.1, 0.1);
        let s = PilotScheme::sp(50.0, 0).unwrap();
        let p = PilotAssignment { tau: 50, pairs: vec![3], cues: vec![] };
        let cfg = LinkDrawConfig { draws: 200, n_rx: 32, ..Default::default() };
        assert_eq!(empirical_sinr(&g, &a, &s, &p, &cfg, 1).unwrap(), empirical_sinr(&g, &a, &s, &p, &cfg, 1).unwrap());
    }
}
