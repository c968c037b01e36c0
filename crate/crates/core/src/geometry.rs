//! Urban grid scenario: four roads wound around a square building block
//! with the base station at its centre, a sidewalk ring inside the block
//! for cellular users, and random drops of V2V pairs on the roads.
//!
//! Coordinates are metres with the BS at the origin. Road 1 runs along the
//! bottom of the block, `x ∈ [-(L-W)/2, (L+W)/2]`, `y ∈ [-(L+W)/2, -(L-W)/2]`;
//! roads 2, 3 and 4 are successive 90° counter-clockwise rotations of it,
//! so the four roads tile the ring around the block like a pinwheel.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("invalid road id {0}, expected 1..=4")]
    InvalidRoad(u8),
    #[error("road {road} cannot host a receiver after the protection shrink")]
    RoadTooNarrow { road: u8 },
    #[error("could not place a transmitter on road {road} after {attempts} attempts")]
    TransmitterPlacement { road: u8, attempts: usize },
    #[error("topology audit failed: {0}")]
    Audit(String),
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which half of the per-pair correlated path-loss moment is used for the
/// desired link `E[d^{2α}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeparationMoment {
    /// Integrate `d^{2α}` over receiver/transmitter positions with
    /// `d ≤ r_V` against the product of the uniform road densities.
    #[default]
    Integral,
    /// Every pair is exactly `r_V` apart, so the moment is `r_V^{2α}`.
    Fixed,
}

/// Iteration tolerances of the frame design loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub zeta: f64,
    pub eta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { zeta: 1e-4, eta: 1e-4 }
    }
}

/// Linear CUE SINR thresholds: `frame` applies to the worst-case frame
/// design, `alloc` to the per-drop power allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueSinrThresholds {
    pub frame: f64,
    pub alloc: f64,
}

impl Default for CueSinrThresholds {
    fn default() -> Self {
        Self { frame: db_to_linear(5.0), alloc: db_to_linear(10.0) }
    }
}

/// Static scenario parameters. Lengths in metres, powers in watts, SINR
/// thresholds linear, densities in vehicles/m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub road_length: f64,
    pub road_width: f64,
    pub sidewalk_width: f64,
    pub pair_separation: f64,
    pub protection_half_length: f64,
    pub avg_density: [f64; 4],
    pub num_cues: usize,
    pub pathloss_const: f64,
    pub pathloss_exp: f64,
    pub max_power_v: f64,
    pub power_ratio: f64,
    pub reliability: f64,
    /// Payload each pair must deliver per frame, bits.
    pub info_threshold: f64,
    pub cue_sinr_thresholds: CueSinrThresholds,
    pub coherence_bandwidth: f64,
    pub tolerances: Tolerances,
    #[serde(default)]
    pub separation_moment: SeparationMoment,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road_length: 200.0,
            road_width: 8.0,
            sidewalk_width: 3.0,
            pair_separation: 12.0,
            protection_half_length: 1.0,
            avg_density: [0.0025; 4],
            num_cues: 4,
            pathloss_const: 1e-3,
            pathloss_exp: 3.0,
            max_power_v: 0.2,
            power_ratio: 1.0,
            reliability: 1e-5,
            info_threshold: 256.0,
            cue_sinr_thresholds: CueSinrThresholds::default(),
            coherence_bandwidth: 500e3,
            tolerances: Tolerances::default(),
            separation_moment: SeparationMoment::Integral,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl ScenarioConfig {
    /// Parses and validates a JSON document. Unknown fields are rejected.
    pub fn from_json_str(s: &str) -> Result<Self, GeometryError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidConfig(m.to_string()));
        let all_finite = [
            self.road_length,
            self.road_width,
            self.sidewalk_width,
            self.pair_separation,
            self.protection_half_length,
            self.pathloss_const,
            self.pathloss_exp,
            self.max_power_v,
            self.power_ratio,
            self.reliability,
            self.info_threshold,
            self.cue_sinr_thresholds.frame,
            self.cue_sinr_thresholds.alloc,
            self.coherence_bandwidth,
            self.tolerances.zeta,
            self.tolerances.eta,
        ]
        .iter()
        .chain(self.avg_density.iter())
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("all numeric fields must be finite");
        }
        if !(self.road_length > self.road_width && self.road_width > 0.0) {
            return bad("need road_length > road_width > 0");
        }
        if self.sidewalk_width <= 0.0 {
            return bad("sidewalk_width must be positive");
        }
        if self.sidewalk_width * 2.0 >= self.road_length - self.road_width {
            return bad("sidewalk ring does not fit inside the building block");
        }
        let rp = self.protection_half_length;
        if !(rp > 0.0 && 2.0 * rp < self.road_length.min(self.road_width)) {
            return bad("need 0 < 2*protection_half_length < min(road_length, road_width)");
        }
        if !(self.pair_separation > 0.0 && self.pair_separation < self.road_length) {
            return bad("need 0 < pair_separation < road_length");
        }
        if self.avg_density.iter().any(|&r| r < 0.0) {
            return bad("densities must be non-negative");
        }
        if !(self.reliability > 0.0 && self.reliability < 0.5) {
            return bad("reliability must lie in (0, 0.5)");
        }
        if self.pathloss_exp <= 2.0 {
            return bad("pathloss_exp must exceed 2");
        }
        let positive = [
            self.pathloss_const,
            self.max_power_v,
            self.power_ratio,
            self.info_threshold,
            self.cue_sinr_thresholds.frame,
            self.cue_sinr_thresholds.alloc,
            self.coherence_bandwidth,
            self.tolerances.zeta,
            self.tolerances.eta,
        ];
        if positive.iter().any(|&v| v <= 0.0) {
            return bad("power, threshold, bandwidth and tolerance fields must be positive");
        }
        Ok(())
    }

    /// Area of one road, `S_R = A_RL · A_RW`.
    pub fn road_area(&self) -> f64 {
        self.road_length * self.road_width
    }

    pub fn max_power_c(&self) -> f64 {
        self.max_power_v * self.power_ratio
    }

    /// Mean number of V2V pairs on a road of the given density.
    pub fn mean_pairs(&self, density: f64) -> f64 {
        density * self.road_area() / 2.0
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.avg_density = [density; 4];
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn shrink(&self, by: f64) -> Rect {
        Rect::new(self.x0 + by, self.x1 - by, self.y0 + by, self.y1 - by)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn centroid(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Rotation by 90° counter-clockwise about the origin.
    pub fn rotate_ccw(&self) -> Rect {
        Rect::new(-self.y1, -self.y0, self.x0, self.x1)
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.max(other.x0),
            self.x1.min(other.x1),
            self.y0.max(other.y0),
            self.y1.min(other.y1),
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(
            self.x0 + self.width() * rng.random::<f64>(),
            self.y0 + self.height() * rng.random::<f64>(),
        )
    }
}

/// Road index 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RoadId(u8);

impl RoadId {
    pub const ALL: [RoadId; 4] = [RoadId(1), RoadId(2), RoadId(3), RoadId(4)];

    pub fn new(id: u8) -> Result<Self, GeometryError> {
        if (1..=4).contains(&id) {
            Ok(Self(id))
        } else {
            Err(GeometryError::InvalidRoad(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index, handy for per-road arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl TryFrom<u8> for RoadId {
    type Error = GeometryError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        RoadId::new(v)
    }
}

impl From<RoadId> for u8 {
    fn from(r: RoadId) -> u8 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoadRelation {
    Same,
    Perpendicular,
    Parallel,
}

pub fn road_relation(u: u8, j: u8) -> Result<RoadRelation, GeometryError> {
    let (u, j) = (RoadId::new(u)?, RoadId::new(j)?);
    Ok(relation(u, j))
}

pub(crate) fn relation(u: RoadId, j: RoadId) -> RoadRelation {
    match (u.0 + 4 - j.0) % 4 {
        0 => RoadRelation::Same,
        2 => RoadRelation::Parallel,
        _ => RoadRelation::Perpendicular,
    }
}

/// Full road rectangle.
pub fn road_rect(cfg: &ScenarioConfig, road: RoadId) -> Rect {
    let (l, w) = (cfg.road_length, cfg.road_width);
    let mut r = Rect::new(-(l - w) / 2.0, (l + w) / 2.0, -(l + w) / 2.0, -(l - w) / 2.0);
    for _ in 1..road.get() {
        r = r.rotate_ccw();
    }
    r
}

/// Support of V2V receivers: the road shrunk by the protection half-length.
pub fn receiver_rect(cfg: &ScenarioConfig, road: RoadId) -> Rect {
    road_rect(cfg, road).shrink(cfg.protection_half_length)
}

/// Sidewalk ring just inside the building block, split into four disjoint
/// strips of `(A_RL - A_RW - A_SW) × A_SW`.
pub fn sidewalk_rects(cfg: &ScenarioConfig) -> [Rect; 4] {
    let h = (cfg.road_length - cfg.road_width) / 2.0;
    let s = cfg.sidewalk_width;
    let bottom = Rect::new(-h, h - s, -h, -h + s);
    let right = bottom.rotate_ccw();
    let top = right.rotate_ccw();
    let left = top.rotate_ccw();
    [bottom, right, top, left]
}

pub fn sidewalk_area(cfg: &ScenarioConfig) -> f64 {
    sidewalk_rects(cfg).iter().map(Rect::area).sum()
}

/// Draws the number of pairs on one road: Poisson with mean `ρ A_RL A_RW / 2`.
pub fn sample_pair_count<R: Rng + ?Sized>(
    density: f64,
    road_length: f64,
    road_width: f64,
    rng: &mut R,
) -> usize {
    let mean = density * road_length * road_width / 2.0;
    if mean <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("positive finite Poisson mean");
    poisson.sample(rng) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2vPair {
    pub road: RoadId,
    pub rx: Point,
    pub tx: Point,
}

/// One realized drop. The BS sits at the origin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Topology {
    pub pairs: Vec<V2vPair>,
    pub cues: Vec<Point>,
}

impl Topology {
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_cues(&self) -> usize {
        self.cues.len()
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for p in &self.pairs {
            c[p.road.index()] += 1;
        }
        c
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.cues.is_empty()
    }

    /// Checks every placement postcondition of [`sample_topology`].
    pub fn audit(&self, cfg: &ScenarioConfig) -> Result<(), GeometryError> {
        let fail = |m: String| Err(GeometryError::Audit(m));
        for (i, p) in self.pairs.iter().enumerate() {
            if !receiver_rect(cfg, p.road).contains(p.rx) {
                return fail(format!("receiver {i} outside its shrunk road"));
            }
            if !road_rect(cfg, p.road).contains(p.tx) {
                return fail(format!("transmitter {i} outside its road"));
            }
            let sep = p.rx.dist(p.tx);
            if (sep - cfg.pair_separation).abs() > 1e-9 * cfg.pair_separation {
                return fail(format!("pair {i} separation {sep} != {}", cfg.pair_separation));
            }
        }
        let walks = sidewalk_rects(cfg);
        for (k, c) in self.cues.iter().enumerate() {
            if !walks.iter().any(|r| r.contains(*c)) {
                return fail(format!("CUE {k} outside the sidewalk ring"));
            }
        }
        Ok(())
    }
}

pub(crate) const MAX_TX_ATTEMPTS: usize = 10_000;

/// Places `counts[u]` pairs on road `u+1` and `cfg.num_cues` CUEs on the
/// sidewalk. Receivers are uniform on the shrunk road; each transmitter sits
/// at a uniform bearing `r_V` away, resampled until it lands on the road.
pub fn sample_topology(
    cfg: &ScenarioConfig,
    counts: [usize; 4],
    rng: &mut SimRng,
) -> Result<Topology, GeometryError> {
    let mut topo = Topology::default();
    for road in RoadId::ALL {
        let n = counts[road.index()];
        if n == 0 {
            continue;
        }
        let support = receiver_rect(cfg, road);
        if support.is_empty() {
            return Err(GeometryError::RoadTooNarrow { road: road.get() });
        }
        let full = road_rect(cfg, road);
        for _ in 0..n {
            let rx = support.sample(rng);
            let tx = place_transmitter(rx, cfg.pair_separation, &full, rng)
                .ok_or(GeometryError::TransmitterPlacement { road: road.get(), attempts: MAX_TX_ATTEMPTS })?;
            topo.pairs.push(V2vPair { road, rx, tx });
        }
    }
    topo.cues = (0..cfg.num_cues).map(|_| sample_sidewalk(cfg, rng)).collect();
    Ok(topo)
}

pub(crate) fn place_transmitter<R: Rng + ?Sized>(rx: Point, sep: f64, road: &Rect, rng: &mut R) -> Option<Point> {
    for _ in 0..MAX_TX_ATTEMPTS {
        let bearing = rng.random::<f64>() * std::f64::consts::TAU;
        let tx = Point::new(rx.x + sep * bearing.cos(), rx.y + sep * bearing.sin());
        if road.contains(tx) {
            return Some(tx);
        }
    }
    None
}

pub fn sample_sidewalk<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Point {
    // strips have equal area
    let strips = sidewalk_rects(cfg);
    strips[rng.random_range(0..4)].sample(rng)
}

/// Full random drop: Poisson counts from the config densities, then positions.
pub fn sample_drop(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Topology, GeometryError> {
    let mut counts = [0; 4];
    for (c, &rho) in counts.iter_mut().zip(cfg.avg_density.iter()) {
        *c = sample_pair_count(rho, cfg.road_length, cfg.road_width, rng);
    }
    sample_topology(cfg, counts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn road_layout_tiles_the_ring() {
        let cfg = ScenarioConfig::default();
        let r1 = road_rect(&cfg, RoadId(1));
        assert_eq!(r1, Rect::new(-96.0, 104.0, -104.0, -96.0));
        assert_eq!(road_rect(&cfg, RoadId(2)), Rect::new(96.0, 104.0, -96.0, 104.0));
        assert_eq!(road_rect(&cfg, RoadId(3)), Rect::new(-104.0, 96.0, 96.0, 104.0));
        assert_eq!(road_rect(&cfg, RoadId(4)), Rect::new(-104.0, -96.0, -104.0, 96.0));
        let total: f64 = RoadId::ALL.iter().map(|&r| road_rect(&cfg, r).area()).sum();
        assert!((total - (208.0f64.powi(2) - 192.0f64.powi(2))).abs() < 1e-9);
    }

    #[test]
    fn sidewalk_strip_area_matches_density_normalizer() {
        let cfg = ScenarioConfig::default();
        for r in sidewalk_rects(&cfg) {
            assert!((r.area() - 189.0 * 3.0).abs() < 1e-9);
        }
        assert!((sidewalk_area(&cfg) - (192.0f64.powi(2) - 186.0f64.powi(2))).abs() < 1e-9);
    }

    #[test]
    fn relations() {
        assert_eq!(road_relation(1, 1).unwrap(), RoadRelation::Same);
        assert_eq!(road_relation(1, 3).unwrap(), RoadRelation::Parallel);
        assert_eq!(road_relation(1, 2).unwrap(), RoadRelation::Perpendicular);
        assert_eq!(road_relation(1, 4).unwrap(), RoadRelation::Perpendicular);
        assert!(road_relation(0, 1).is_err());
        assert!(road_relation(1, 5).is_err());
        for u in 1..=4 {
            let mut counts = [0; 3];
            for j in 1..=4 {
                let r = road_relation(u, j).unwrap();
                assert_eq!(r, road_relation(j, u).unwrap());
                counts[match r {
                    RoadRelation::Same => 0,
                    RoadRelation::Perpendicular => 1,
                    RoadRelation::Parallel => 2,
                }] += 1;
            }
            assert_eq!(counts, [1, 2, 1]);
        }
    }

    #[test]
    fn zero_density_gives_zero_pairs() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(sample_pair_count(0.0, 200.0, 8.0, &mut rng), 0);
        }
    }

    #[test]
    fn default_density_means_four_pairs_per_road() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.mean_pairs(0.005) - 4.0).abs() < 1e-12);
        assert!((4.0 * cfg.mean_pairs(0.005) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_moments() {
        let mut rng = seeded(7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_pair_count(0.0025, 200.0, 8.0, &mut rng) as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
        let ratio = var / mean;
        assert!((0.97..=1.03).contains(&ratio), "var/mean {ratio}");
    }

    #[test]
    fn empty_drop() {
        let cfg = ScenarioConfig { num_cues: 0, ..Default::default() };
        let topo = sample_topology(&cfg, [0; 4], &mut seeded(3)).unwrap();
        assert!(topo.is_empty());
    }

    #[test]
    fn receiver_positions_are_uniform() {
        let cfg = ScenarioConfig::default();
        let mut rng = seeded(11);
        for road in RoadId::ALL {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let n = 10_000;
            for _ in 0..n {
                let t = sample_topology(&ScenarioConfig { num_cues: 0, ..cfg.clone() }, one_on(road), &mut rng).unwrap();
                sx += t.pairs[0].rx.x;
                sy += t.pairs[0].rx.y;
            }
            let c = receiver_rect(&cfg, road).centroid();
            let (mx, my) = (sx / n as f64, sy / n as f64);
            // 1% of the road length
            assert!((mx - c.x).abs() < 2.0 && (my - c.y).abs() < 2.0, "road {road:?}: ({mx},{my}) vs {c:?}");
        }
    }

    fn one_on(road: RoadId) -> [usize; 4] {
        let mut c = [0; 4];
        c[road.index()] = 1;
        c
    }

    #[test]
    fn narrow_road_is_rejected_by_config() {
        let cfg = ScenarioConfig { road_width: 2.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let mut v = serde_json::to_value(ScenarioConfig::default()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ScenarioConfig::from_json_str(&v.to_string()).is_err());
        let ok = ScenarioConfig::from_json_str(&ScenarioConfig::default().to_json_string()).unwrap();
        assert_eq!(ok, ScenarioConfig::default());
    }

    proptest::proptest! {
        #[test]
        fn every_drop_passes_audit(seed in proptest::prelude::any::<u64>()) {
            let cfg = ScenarioConfig::default().with_density(0.005);
            let topo = sample_drop(&cfg, &mut seeded(seed)).unwrap();
            proptest::prop_assert!(topo.audit(&cfg).is_ok());
            proptest::prop_assert_eq!(topo.num_cues(), cfg.num_cues);
        }
    }
}
