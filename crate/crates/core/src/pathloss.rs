//! Large-scale fading `β = θ d^{-α}` and the table of path-loss moments Ω
//! that the worst-case SINR bounds are built from.
//!
//! Every Ω entry is `E[d^{±2α}]` for `d` the distance between two points
//! drawn uniformly from two rectangles (or one point and the BS). The
//! production path integrates over the difference vector `Δ = a − b`, whose
//! density is the product of two trapezoids, so each entry is a 2-D
//! adaptive quadrature. The Monte Carlo estimator is the independent oracle.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{receiver_rect, road_rect, sidewalk_rects, RoadId, Rect, ScenarioConfig, SeparationMoment};
use crate::quad::{integrate_2d, QuadOptions, QuadratureError};
use crate::rng::{derive_seed, seeded, SimRng};

#[derive(Debug, Error)]
pub enum PathlossError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid fading model: θ = {theta}, α = {alpha}")]
    InvalidModel { theta: f64, alpha: f64 },
    #[error("Ω entry {entry}: {source}")]
    Quadrature { entry: OmegaEntry, source: QuadratureError },
    #[error("Monte Carlo needs at least {min} samples, got {got}")]
    TooFewSamples { min: u64, got: u64 },
    #[error("Ω table entry {0} is not a positive finite number")]
    InvalidTable(OmegaEntry),
    #[error("cache I/O at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("Ω table JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingModel {
    pub theta: f64,
    pub alpha: f64,
}

impl FadingModel {
    pub fn new(theta: f64, alpha: f64) -> Result<Self, PathlossError> {
        if theta > 0.0 && theta.is_finite() && alpha > 2.0 && alpha.is_finite() {
            Ok(Self { theta, alpha })
        } else {
            Err(PathlossError::InvalidModel { theta, alpha })
        }
    }

    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self { theta: cfg.pathloss_const, alpha: cfg.pathloss_exp }
    }

    pub fn beta(&self, d: f64) -> Result<f64, PathlossError> {
        beta(self, d)
    }
}

pub fn beta(model: &FadingModel, d: f64) -> Result<f64, PathlossError> {
    if d > 0.0 {
        Ok(model.theta * d.powf(-model.alpha))
    } else {
        Err(PathlossError::NonPositiveDistance(d))
    }
}

/// Path-loss moments. `N` entries are `E[d^{-2α}]` (m^{-2α}), `P` entries
/// `E[d^{2α}]` (m^{2α}).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaTable {
    /// Interferer on the receiver's own road, outside its protection square.
    pub v2v_n1: f64,
    /// Interferer on a perpendicular road, averaged over the two neighbours.
    pub v2v_n2: f64,
    /// Interferer on the parallel road.
    pub v2v_n3: f64,
    /// Desired link.
    pub v2v_p1: f64,
    pub c2v_n: f64,
    pub v2b_n: f64,
    pub c2b_n: f64,
    pub c2b_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OmegaEntry {
    V2vN1,
    V2vN2,
    V2vN3,
    V2vP1,
    C2vN,
    V2bN,
    C2bN,
    C2bP,
}

impl std::fmt::Display for OmegaEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OmegaEntry::V2vN1 => "v2v_n1",
            OmegaEntry::V2vN2 => "v2v_n2",
            OmegaEntry::V2vN3 => "v2v_n3",
            OmegaEntry::V2vP1 => "v2v_p1",
            OmegaEntry::C2vN => "c2v_n",
            OmegaEntry::V2bN => "v2b_n",
            OmegaEntry::C2bN => "c2b_n",
            OmegaEntry::C2bP => "c2b_p",
        };
        f.write_str(s)
    }
}

impl OmegaEntry {
    pub const ALL: [OmegaEntry; 8] = [
        OmegaEntry::V2vN1,
        OmegaEntry::V2vN2,
        OmegaEntry::V2vN3,
        OmegaEntry::V2vP1,
        OmegaEntry::C2vN,
        OmegaEntry::V2bN,
        OmegaEntry::C2bN,
        OmegaEntry::C2bP,
    ];
}

impl OmegaTable {
    pub fn get(&self, e: OmegaEntry) -> f64 {
        match e {
            OmegaEntry::V2vN1 => self.v2v_n1,
            OmegaEntry::V2vN2 => self.v2v_n2,
            OmegaEntry::V2vN3 => self.v2v_n3,
            OmegaEntry::V2vP1 => self.v2v_p1,
            OmegaEntry::C2vN => self.c2v_n,
            OmegaEntry::V2bN => self.v2b_n,
            OmegaEntry::C2bN => self.c2b_n,
            OmegaEntry::C2bP => self.c2b_p,
        }
    }

    pub fn get_mut(&mut self, e: OmegaEntry) -> &mut f64 {
        match e {
            OmegaEntry::V2vN1 => &mut self.v2v_n1,
            OmegaEntry::V2vN2 => &mut self.v2v_n2,
            OmegaEntry::V2vN3 => &mut self.v2v_n3,
            OmegaEntry::V2vP1 => &mut self.v2v_p1,
            OmegaEntry::C2vN => &mut self.c2v_n,
            OmegaEntry::V2bN => &mut self.v2b_n,
            OmegaEntry::C2bN => &mut self.c2b_n,
            OmegaEntry::C2bP => &mut self.c2b_p,
        }
    }

    pub fn validate(&self) -> Result<(), PathlossError> {
        for e in OmegaEntry::ALL {
            let v = self.get(e);
            if !(v.is_finite() && v > 0.0) {
                return Err(PathlossError::InvalidTable(e));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, PathlossError> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}

/// Quadrature result with the per-entry absolute error estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaQuadrature {
    pub table: OmegaTable,
    pub error: OmegaTable,
}

/// Monte Carlo estimate with per-entry standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaEstimate {
    pub table: OmegaTable,
    pub std_err: OmegaTable,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Moment {
    /// `E[d^{-2α}]`, zero inside the `r_P` square when `exclude` is set.
    Neg { exclude: Option<f64> },
    /// `E[d^{2α}]`, zero beyond `cutoff` when set.
    Pos { cutoff: Option<f64> },
}

impl Moment {
    fn eval(self, dx: f64, dy: f64, alpha: f64) -> f64 {
        let d2 = dx * dx + dy * dy;
        match self {
            Moment::Neg { exclude } => {
                if let Some(rp) = exclude {
                    if dx.abs() < rp && dy.abs() < rp {
                        return 0.0;
                    }
                }
                d2.powf(-alpha)
            }
            Moment::Pos { cutoff } => {
                if let Some(r) = cutoff {
                    if d2 > r * r {
                        return 0.0;
                    }
                }
                d2.powf(alpha)
            }
        }
    }
}

/// Overlap length of `[a1, b1]` with `[a2, b2]` shifted by `s`: the
/// un-normalized density of `x1 − x2 = s`.
fn overlap(a1: f64, b1: f64, a2: f64, b2: f64, s: f64) -> f64 {
    ((b2 + s).min(b1) - (a2 + s).max(a1)).max(0.0)
}

/// `E[h(a − b)]` for `a ~ U(r1)`, `b ~ U(r2)` by 2-D quadrature over Δ.
fn pair_quadrature(r1: &Rect, r2: &Rect, m: Moment, alpha: f64, opts: QuadOptions) -> Result<(f64, f64), QuadratureError> {
    let (xlo, xhi) = (r1.x0 - r2.x1, r1.x1 - r2.x0);
    let (ylo, yhi) = (r1.y0 - r2.y1, r1.y1 - r2.y0);
    let mut xb = vec![r1.x0 - r2.x0, r1.x1 - r2.x1, 0.0];
    let mut yb = vec![r1.y0 - r2.y0, r1.y1 - r2.y1, 0.0];
    let (mut ylo_c, mut yhi_c) = (ylo, yhi);
    match m {
        Moment::Neg { exclude: Some(rp) } => {
            xb.extend([-rp, rp]);
            yb.extend([-rp, rp]);
        }
        Moment::Pos { cutoff: Some(r) } => {
            ylo_c = ylo.max(-r);
            yhi_c = yhi.min(r);
        }
        _ => {}
    }
    let norm = r1.area() * r2.area();
    let f = |dx: f64, dy: f64| {
        m.eval(dx, dy, alpha) * overlap(r1.x0, r1.x1, r2.x0, r2.x1, dx) * overlap(r1.y0, r1.y1, r2.y0, r2.y1, dy)
    };
    let inner = |dy: f64| -> Vec<(f64, f64, Vec<f64>)> {
        let (mut a, mut b) = (xlo, xhi);
        match m {
            Moment::Pos { cutoff: Some(r) } => {
                let h = (r * r - dy * dy).max(0.0).sqrt();
                a = a.max(-h);
                b = b.min(h);
            }
            Moment::Neg { exclude: Some(rp) } if dy.abs() < rp => {
                return vec![(a, b.min(-rp), xb.clone()), (a.max(rp), b, xb.clone())];
            }
            _ => {}
        }
        vec![(a, b, xb.clone())]
    };
    let q = integrate_2d(f, inner, ylo_c, yhi_c, &yb, opts)?;
    Ok((q.value / norm, q.error / norm))
}

/// `E[h(a)]` for `a ~ U(r)` with the BS at the origin.
fn point_quadrature(r: &Rect, m: Moment, alpha: f64, opts: QuadOptions) -> Result<(f64, f64), QuadratureError> {
    let q = integrate_2d(
        |x, y| m.eval(x, y, alpha),
        |_| vec![(r.x0, r.x1, vec![0.0])],
        r.y0,
        r.y1,
        &[0.0],
        opts,
    )?;
    Ok((q.value / r.area(), q.error / r.area()))
}

/// All region pairs that make up each entry. Every entry is the plain
/// average of its parts; road 1 stands in for every receiver road by the
/// rotational symmetry of the grid.
struct Layout {
    parts: Vec<(OmegaEntry, Part)>,
}

#[derive(Clone, Copy)]
enum Part {
    Pair { r1: Rect, r2: Rect, m: Moment },
    Point { r: Rect, m: Moment },
}

impl Layout {
    fn new(cfg: &ScenarioConfig) -> Self {
        let rp = cfg.protection_half_length;
        let road = |i: u8| receiver_rect(cfg, RoadId::new(i).expect("road id"));
        let rx = road(1);
        let walks = sidewalk_rects(cfg);
        let neg = Moment::Neg { exclude: None };
        let pos = Moment::Pos { cutoff: None };
        let mut parts = vec![
            (OmegaEntry::V2vN1, Part::Pair { r1: rx, r2: rx, m: Moment::Neg { exclude: Some(rp) } }),
            (OmegaEntry::V2vN2, Part::Pair { r1: rx, r2: road(2), m: neg }),
            (OmegaEntry::V2vN2, Part::Pair { r1: rx, r2: road(4), m: neg }),
            (OmegaEntry::V2vN3, Part::Pair { r1: rx, r2: road(3), m: neg }),
            (
                OmegaEntry::V2bN,
                Part::Point { r: road_rect(cfg, RoadId::new(1).expect("road id")), m: neg },
            ),
        ];
        if cfg.separation_moment == SeparationMoment::Integral {
            parts.push((
                OmegaEntry::V2vP1,
                Part::Pair { r1: rx, r2: rx, m: Moment::Pos { cutoff: Some(cfg.pair_separation) } },
            ));
        }
        for w in walks {
            parts.push((OmegaEntry::C2vN, Part::Pair { r1: rx, r2: w, m: neg }));
            parts.push((OmegaEntry::C2bN, Part::Point { r: w, m: neg }));
            parts.push((OmegaEntry::C2bP, Part::Point { r: w, m: pos }));
        }
        Self { parts }
    }

    fn count(&self, e: OmegaEntry) -> usize {
        self.parts.iter().filter(|(x, _)| *x == e).count()
    }
}

fn fixed_p1(cfg: &ScenarioConfig) -> f64 {
    cfg.pair_separation.powf(2.0 * cfg.pathloss_exp)
}

/// Deterministic Ω table by adaptive quadrature (relative tolerance 1e-8).
pub fn omega_quadrature(cfg: &ScenarioConfig) -> Result<OmegaQuadrature, PathlossError> {
    omega_quadrature_with(cfg, QuadOptions { rel_tol: 1e-8, abs_tol: 0.0, max_panels: 2000 })
}

pub fn omega_quadrature_with(cfg: &ScenarioConfig, opts: QuadOptions) -> Result<OmegaQuadrature, PathlossError> {
    let layout = Layout::new(cfg);
    let alpha = cfg.pathloss_exp;
    let results: Vec<(OmegaEntry, Result<(f64, f64), QuadratureError>)> = layout
        .parts
        .par_iter()
        .map(|(e, part)| {
            let r = match part {
                Part::Pair { r1, r2, m } => pair_quadrature(r1, r2, *m, alpha, opts),
                Part::Point { r, m } => point_quadrature(r, *m, alpha, opts),
            };
            (*e, r)
        })
        .collect();
    let mut table = zero_table();
    let mut error = zero_table();
    for (e, r) in results {
        let (v, err) = r.map_err(|source| PathlossError::Quadrature { entry: e, source })?;
        let n = layout.count(e) as f64;
        *table.get_mut(e) += v / n;
        *error.get_mut(e) += err / n;
    }
    if cfg.separation_moment == SeparationMoment::Fixed {
        table.v2v_p1 = fixed_p1(cfg);
    }
    table.validate()?;
    Ok(OmegaQuadrature { table, error })
}

fn zero_table() -> OmegaTable {
    OmegaTable { v2v_n1: 0.0, v2v_n2: 0.0, v2v_n3: 0.0, v2v_p1: 0.0, c2v_n: 0.0, v2b_n: 0.0, c2b_n: 0.0, c2b_p: 0.0 }
}

// Importance sampling for the pair moments. The receiver is drawn from a
// mixture of its rectangle (weight 1/3) and nested slabs of it lying
// within growing margins of the other region (2/3 shared evenly), so the
// few metres where d^{-2α} concentrates are sampled at every scale. For
// negative moments the second point comes from an even mixture of its
// rectangle and a radial law around the receiver with planar density
// ∝ r^{1-2α} on [r_min, R], where r_min is the smallest admissible
// distance from the receiver. The uniform components bound every weight
// by 6.
const RADIAL_MAX: f64 = 400.0;
const HOT_MARGINS: [f64; 5] = [1.5, 3.0, 6.0, 12.0, 24.0];
const BLOCK: u64 = 1 << 15;

#[derive(Clone, Copy)]
struct Radial {
    r_min: f64,
    k: f64,
    c: f64,
}

impl Radial {
    fn new(r_min: f64, alpha: f64) -> Self {
        let k = 2.0 * alpha - 1.0;
        let c = (k - 2.0) / (std::f64::consts::TAU * (r_min.powf(2.0 - k) - RADIAL_MAX.powf(2.0 - k)));
        Self { r_min, k, c }
    }

    fn density(&self, r: f64) -> f64 {
        if (self.r_min..=RADIAL_MAX).contains(&r) {
            self.c * r.powf(-self.k)
        } else {
            0.0
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        // r^{2-k} is uniform between its values at the two radii
        let e = 2.0 - self.k;
        let (s0, s1) = (self.r_min.powf(e), RADIAL_MAX.powf(e));
        let r = (s0 + rng.random::<f64>() * (s1 - s0)).powf(1.0 / e);
        let t = rng.random::<f64>() * std::f64::consts::TAU;
        (r * t.cos(), r * t.sin())
    }
}

fn dist_to_rect(p: crate::geometry::Point, r: &Rect) -> f64 {
    let dx = (r.x0 - p.x).max(p.x - r.x1).max(0.0);
    let dy = (r.y0 - p.y).max(p.y - r.y1).max(0.0);
    dx.hypot(dy)
}

/// Receiver proposal: `(weight, region)` components summing to one.
fn receiver_mixture(r1: &Rect, r2: &Rect) -> Vec<(f64, Rect)> {
    let hot: Vec<Rect> = HOT_MARGINS
        .iter()
        .map(|&m| r1.intersect(&Rect::new(r2.x0 - m, r2.x1 + m, r2.y0 - m, r2.y1 + m)))
        .filter(|h| !h.is_empty() && h.area() < r1.area())
        .collect();
    if hot.is_empty() {
        return vec![(1.0, *r1)];
    }
    let w = 2.0 / 3.0 / hot.len() as f64;
    std::iter::once((1.0 / 3.0, *r1)).chain(hot.into_iter().map(|h| (w, h))).collect()
}

fn pair_sample(r1: &Rect, r2: &Rect, mix: &[(f64, Rect)], m: Moment, alpha: f64, rng: &mut SimRng) -> f64 {
    let mut u: f64 = rng.random();
    let mut pick = &mix[mix.len() - 1].1;
    for (w, h) in mix {
        if u < *w {
            pick = h;
            break;
        }
        u -= w;
    }
    let a = pick.sample(rng);
    let q_a: f64 = mix.iter().filter(|(_, h)| h.contains(a)).map(|(w, h)| w / h.area()).sum();
    let f = 1.0 / (r1.area() * r2.area());
    let radial = match m {
        Moment::Neg { exclude } => {
            let r_min = dist_to_rect(a, r2).max(exclude.unwrap_or(0.0));
            (r_min > 0.0).then(|| Radial::new(r_min, alpha))
        }
        Moment::Pos { .. } => None,
    };
    let Some(radial) = radial else {
        let b = r2.sample(rng);
        return f / (q_a / r2.area()) * m.eval(a.x - b.x, a.y - b.y, alpha);
    };
    let b = if rng.random::<bool>() {
        r2.sample(rng)
    } else {
        let (dx, dy) = radial.sample(rng);
        crate::geometry::Point::new(a.x + dx, a.y + dy)
    };
    if !r2.contains(b) {
        return 0.0;
    }
    let q_b = 0.5 / r2.area() + 0.5 * radial.density(a.dist(b));
    f / (q_a * q_b) * m.eval(a.x - b.x, a.y - b.y, alpha)
}

fn point_sample(r: &Rect, m: Moment, alpha: f64, rng: &mut SimRng) -> f64 {
    let p = r.sample(rng);
    m.eval(p.x, p.y, alpha)
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    fn mean_se(&self) -> (f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }
}

pub const MIN_MC_SAMPLES: u64 = 10_000;

/// Monte Carlo estimate of every Ω entry with `n` samples per entry. Parts
/// of an entry (e.g. the two perpendicular roads) split the budget evenly.
pub fn omega_montecarlo(cfg: &ScenarioConfig, n: u64, rng: &mut SimRng) -> Result<OmegaEstimate, PathlossError> {
    if n < MIN_MC_SAMPLES {
        return Err(PathlossError::TooFewSamples { min: MIN_MC_SAMPLES, got: n });
    }
    let layout = Layout::new(cfg);
    let alpha = cfg.pathloss_exp;
    let master: u64 = rng.random();
    let mut table = zero_table();
    let mut var = zero_table();
    for (idx, (e, part)) in layout.parts.iter().enumerate() {
        let k = layout.count(*e) as u64;
        let per_part = n.div_ceil(k);
        let blocks = per_part.div_ceil(BLOCK);
        let part_seed = derive_seed(master, idx as u64);
        let mix = match part {
            Part::Pair { r1, r2, .. } => receiver_mixture(r1, r2),
            Part::Point { .. } => Vec::new(),
        };
        let acc: Vec<Moments> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = seeded(derive_seed(part_seed, b));
                let len = BLOCK.min(per_part - b * BLOCK);
                let mut m = Moments::default();
                for _ in 0..len {
                    let v = match part {
                        Part::Pair { r1, r2, m } => pair_sample(r1, r2, &mix, *m, alpha, &mut rng),
                        Part::Point { r, m } => point_sample(r, *m, alpha, &mut rng),
                    };
                    m.push(v);
                }
                m
            })
            .collect();
        let total = acc.into_iter().fold(Moments::default(), Moments::merge);
        let (mean, se) = total.mean_se();
        let kf = k as f64;
        *table.get_mut(*e) += mean / kf;
        *var.get_mut(*e) += (se / kf).powi(2);
    }
    let mut std_err = var;
    for e in OmegaEntry::ALL {
        *std_err.get_mut(e) = var.get(e).sqrt();
    }
    if cfg.separation_moment == SeparationMoment::Fixed {
        table.v2v_p1 = fixed_p1(cfg);
        std_err.v2v_p1 = 0.0;
    }
    Ok(OmegaEstimate { table, std_err, samples: n })
}

/// Hex SHA-256 over the fields Ω depends on.
pub fn geometry_key(cfg: &ScenarioConfig) -> String {
    let key = serde_json::json!({
        "road_length": cfg.road_length,
        "road_width": cfg.road_width,
        "sidewalk_width": cfg.sidewalk_width,
        "pair_separation": cfg.pair_separation,
        "protection_half_length": cfg.protection_half_length,
        "pathloss_exp": cfg.pathloss_exp,
        "separation_moment": cfg.separation_moment,
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

/// On-disk cache of quadrature tables keyed by [`geometry_key`].
#[derive(Debug, Clone)]
pub struct OmegaCache {
    dir: PathBuf,
}

impl OmegaCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, cfg: &ScenarioConfig) -> PathBuf {
        self.dir.join(format!("omega-{}.json", &geometry_key(cfg)[..16]))
    }

    pub fn load(&self, cfg: &ScenarioConfig) -> Option<OmegaTable> {
        let path = self.path_for(cfg);
        let text = std::fs::read_to_string(&path).ok()?;
        match OmegaTable::from_json_str(&text) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("ignoring unreadable Ω cache {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, cfg: &ScenarioConfig, table: &OmegaTable) -> Result<PathBuf, PathlossError> {
        let path = self.path_for(cfg);
        let io = |source| PathlossError::Io { path: path.clone(), source };
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(table)?).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        Ok(path)
    }

    pub fn get_or_compute(&self, cfg: &ScenarioConfig) -> Result<OmegaTable, PathlossError> {
        if let Some(t) = self.load(cfg) {
            return Ok(t);
        }
        let t = omega_quadrature(cfg)?.table;
        self.store(cfg, &t)?;
        Ok(t)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn beta_values() {
        let m = FadingModel::new(1e-3, 3.0).unwrap();
        assert_eq!(m.beta(1.0).unwrap(), 1e-3);
        assert!((m.beta(10.0).unwrap() - 1e-6).abs() < 1e-18);
        assert!((m.beta(100.0).unwrap() - 1e-9).abs() < 1e-21);
        assert!(m.beta(0.0).is_err());
        assert!(m.beta(-1.0).is_err());
        assert!(FadingModel::new(1e-3, 2.0).is_err());
    }

    #[test]
    fn overlap_is_a_trapezoid() {
        // two unit intervals: triangle of height 1 on [-1, 1]
        assert_eq!(overlap(0.0, 1.0, 0.0, 1.0, 0.0), 1.0);
        assert!((overlap(0.0, 1.0, 0.0, 1.0, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(overlap(0.0, 1.0, 0.0, 1.0, 1.5), 0.0);
    }

    #[test]
    fn fixed_separation_moment() {
        let c = ScenarioConfig { separation_moment: SeparationMoment::Fixed, ..cfg() };
        let t = omega_quadrature(&c).unwrap().table;
        assert_eq!(t.v2v_p1, 2_985_984.0);
    }

    #[test]
    fn c2b_moments_against_closed_form() {
        // E[(x²+y²)^3] over a rectangle has a closed polynomial form
        let c = cfg();
        let t = omega_quadrature(&c).unwrap().table;
        let r = sidewalk_rects(&c)[0];
        let mom = |a: f64, b: f64, k: i32| (b.powi(k + 1) - a.powi(k + 1)) / ((k + 1) as f64 * (b - a));
        let (x0, x1, y0, y1) = (r.x0, r.x1, r.y0, r.y1);
        let e = mom(x0, x1, 6) + 3.0 * mom(x0, x1, 4) * mom(y0, y1, 2) + 3.0 * mom(x0, x1, 2) * mom(y0, y1, 4) + mom(y0, y1, 6);
        assert!((t.c2b_p / e - 1.0).abs() < 1e-9, "{} vs {e}", t.c2b_p);
    }

    #[test]
    fn jensen_product() {
        let t = omega_quadrature(&cfg()).unwrap().table;
        assert!(t.c2b_n * t.c2b_p >= 1.0);
    }

    #[test]
    fn larger_exponent_shrinks_inter_road_moment() {
        let a = omega_quadrature(&cfg()).unwrap().table;
        let b = omega_quadrature(&ScenarioConfig { pathloss_exp: 6.0, ..cfg() }).unwrap().table;
        assert!(b.v2v_n2 < a.v2v_n2);
        assert!(b.c2b_p > a.c2b_p);
    }

    #[test]
    fn same_road_moment_blows_up_without_protection() {
        let mut prev = 0.0;
        for k in 0..5 {
            let rp = 2f64.powi(-k);
            let t = omega_quadrature(&ScenarioConfig { protection_half_length: rp, ..cfg() }).unwrap().table;
            assert!(t.v2v_n1 > 8.0 * prev, "r_P = {rp}: {} after {prev}", t.v2v_n1);
            prev = t.v2v_n1;
        }
    }

    #[test]
    fn mc_lower_bound_on_positive_moment() {
        let est = omega_montecarlo(&cfg(), 20_000, &mut seeded(3)).unwrap();
        let c = cfg();
        let dmin = sidewalk_rects(&c).iter().map(|r| r.y0.abs().min(r.y1.abs()).min(r.x0.abs().min(r.x1.abs()))).fold(f64::INFINITY, f64::min);
        assert!(est.table.c2b_p >= dmin.powf(2.0 * c.pathloss_exp));
        assert!(omega_montecarlo(&c, 10, &mut seeded(3)).is_err());
    }

    #[test]
    fn cache_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = OmegaCache::new(dir.path());
        let c = cfg();
        let t = cache.get_or_compute(&c).unwrap();
        assert_eq!(cache.load(&c), Some(t));
        std::fs::write(cache.path_for(&c), "{not json").unwrap();
        assert_eq!(cache.load(&c), None);
        assert_eq!(cache.get_or_compute(&c).unwrap(), t);
        let other = ScenarioConfig { pair_separation: 10.0, ..c.clone() };
        assert_ne!(cache.path_for(&other), cache.path_for(&c));
        // densities do not enter the key
        assert_eq!(cache.path_for(&c.clone().with_density(0.01)), cache.path_for(&c));
    }
}
