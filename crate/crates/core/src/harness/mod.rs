//! Experiment driver: seeded sweeps and drops written as CSV plus a JSON
//! summary, and the validation suites.

pub mod validate;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frame_design::{rp_at_frame, solve_frame, FrameDesign, FrameError};
use crate::geometry::{db_to_linear, linear_to_db, sample_drop, sample_topology, GeometryError, ScenarioConfig, Topology};
use crate::gp_alloc::{build_gp, equal_power, solve_gp, AllocParams, AllocStatus, AllocationResult, DEFAULT_GAP_TOL};
use crate::link_mc::{clustered_drop, empirical_sinr, finite_sinr, pilot_count, LinkDrawConfig, PilotAssignment, Target};
use crate::pathloss::{omega_quadrature, FadingModel, OmegaCache, OmegaTable, PathlossError};
use crate::rng::{derive_seed, seeded};
use crate::scheduler::{ModelPlanner, Scheduler, SchedulerConfig, TrafficReport};
use crate::sinr_bounds::{LinkGains, PowerAllocation, SchemeKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Pathloss(#[from] PathlossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Schedule(#[from] crate::scheduler::SchedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Convergence,
    DensitySweep,
    ReliabilitySweep,
    BandwidthSweep,
    Cdf,
    LinkValidation,
    ScheduleTrace,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Convergence => "convergence",
            ExperimentId::DensitySweep => "density_sweep",
            ExperimentId::ReliabilitySweep => "reliability_sweep",
            ExperimentId::BandwidthSweep => "bandwidth_sweep",
            ExperimentId::Cdf => "cdf",
            ExperimentId::LinkValidation => "link_validation",
            ExperimentId::ScheduleTrace => "schedule_trace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Per-road density (vehicles/m²), applied to all roads.
    Density,
    /// Target error probability ε.
    Reliability,
    /// System bandwidth (Hz).
    Bandwidth,
    NumCues,
    /// CUE SINR target of the frame design (dB).
    CueThresholdDb,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Density => "density",
            Axis::Reliability => "reliability",
            Axis::Bandwidth => "bandwidth_hz",
            Axis::NumCues => "num_cues",
            Axis::CueThresholdDb => "cue_threshold_db",
        }
    }

    fn unit(self) -> &'static str {
        match self {
            Axis::Density => "vehicles/m^2",
            Axis::Reliability => "probability",
            Axis::Bandwidth => "Hz",
            Axis::NumCues => "count",
            Axis::CueThresholdDb => "dB",
        }
    }

    /// `cfg` with this axis set to `v`. Bandwidth leaves the scenario alone.
    pub fn apply(self, cfg: &ScenarioConfig, v: f64) -> Result<ScenarioConfig, HarnessError> {
        let mut c = cfg.clone();
        match self {
            Axis::Density => c.avg_density = [v; 4],
            Axis::Reliability => c.reliability = v,
            Axis::Bandwidth => {}
            Axis::NumCues => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(HarnessError::Spec(format!("num_cues must be a non-negative integer, got {v}")));
                }
                c.num_cues = v as usize;
            }
            Axis::CueThresholdDb => c.cue_sinr_thresholds.frame = db_to_linear(v),
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl Sweep {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::Spec(format!("{} sweep has no values", self.axis.name())));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Spec(format!("{} sweep values must be finite", self.axis.name())));
        }
        if self.values.windows(2).any(|w| w[1] < w[0]) {
            return Err(HarnessError::Spec(format!("{} sweep values must be sorted", self.axis.name())));
        }
        if self.axis == Axis::Bandwidth && self.values.iter().any(|&v| v <= 0.0) {
            return Err(HarnessError::Spec("bandwidths must be positive".into()));
        }
        Ok(())
    }
}

/// Report stream synthesized for `schedule_trace`: the sweep values are a
/// density sequence, each held for `reports_per_value` reports spaced
/// `interval` seconds apart, each report carrying a fresh drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub interval: f64,
    pub reports_per_value: usize,
    pub scheme: SchemeKind,
    pub scheduler: SchedulerConfig,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { interval: 1e-3, reports_per_value: 20, scheme: SchemeKind::Sp, scheduler: SchedulerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub config: ScenarioConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Second axis: one curve per value.
    #[serde(default)]
    pub series: Option<Sweep>,
    #[serde(default = "one")]
    pub num_drops: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub link: LinkDrawConfig,
    #[serde(default)]
    pub schedule: ScheduleSpec,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            config: ScenarioConfig::default(),
            sweep: None,
            series: None,
            num_drops: 1,
            seed: 0,
            link: LinkDrawConfig::default(),
            schedule: ScheduleSpec::default(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.config.validate()?;
        if self.num_drops == 0 {
            return Err(HarnessError::Spec("num_drops must be at least 1".into()));
        }
        for s in self.sweep.iter().chain(&self.series) {
            s.validate()?;
        }
        let needs = match self.experiment {
            ExperimentId::DensitySweep => Some(Axis::Density),
            ExperimentId::ReliabilitySweep => Some(Axis::Reliability),
            ExperimentId::BandwidthSweep => Some(Axis::Bandwidth),
            ExperimentId::ScheduleTrace => Some(Axis::Density),
            _ => None,
        };
        if let Some(axis) = needs {
            match &self.sweep {
                Some(s) if s.axis == axis => {}
                _ => return Err(HarnessError::Spec(format!("{} needs a {} sweep", self.experiment.name(), axis.name()))),
            }
        }
        if self.experiment == ExperimentId::ScheduleTrace && !(self.schedule.interval > 0.0 && self.schedule.reports_per_value > 0) {
            return Err(HarnessError::Spec("schedule needs a positive interval and report count".into()));
        }
        if self.experiment == ExperimentId::LinkValidation {
            self.link.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
        }
        Ok(())
    }

    /// Scenario for each series value (or just the base config).
    fn series_configs(&self) -> Result<Vec<(Option<f64>, ScenarioConfig)>, HarnessError> {
        match &self.series {
            None => Ok(vec![(None, self.config.clone())]),
            Some(s) => s.values.iter().map(|&v| Ok((Some(v), s.axis.apply(&self.config, v)?))).collect(),
        }
    }
}

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

/// Ω tables by geometry, memoized and optionally persisted.
pub struct OmegaStore {
    disk: Option<OmegaCache>,
    fixed: Option<OmegaTable>,
    memo: Mutex<HashMap<String, OmegaTable>>,
}

impl OmegaStore {
    pub fn in_memory() -> Self {
        Self { disk: None, fixed: None, memo: Mutex::default() }
    }

    pub fn with_cache(dir: impl Into<PathBuf>) -> Self {
        Self { disk: Some(OmegaCache::new(dir)), ..Self::in_memory() }
    }

    /// Always returns `table`, whatever the geometry.
    pub fn fixed(table: OmegaTable) -> Self {
        Self { fixed: Some(table), ..Self::in_memory() }
    }

    pub fn get(&self, cfg: &ScenarioConfig) -> Result<OmegaTable, PathlossError> {
        if let Some(t) = &self.fixed {
            return Ok(t.clone());
        }
        let key = crate::pathloss::geometry_key(cfg);
        if let Some(t) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(t.clone());
        }
        let t = match &self.disk {
            Some(c) => c.get_or_compute(cfg)?,
            None => omega_quadrature(cfg)?.table,
        };
        self.memo.lock().expect("memo lock").insert(key, t.clone());
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub unit: &'static str,
}

const fn col(name: &'static str, unit: &'static str) -> Column {
    Column { name, unit }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: Vec<Column>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|c| c.name))?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn scheme_name(k: SchemeKind) -> String {
    match k {
        SchemeKind::Rp => "rp".into(),
        SchemeKind::Sp => "sp".into(),
    }
}

/// A sweep point or drop that failed; the rest of the run continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub index: usize,
    pub label: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub table: Table,
    pub errors: Vec<PointError>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: ExperimentId,
    pub config_hash: String,
    pub seed: u64,
    pub num_drops: usize,
    pub wall_time_s: f64,
    pub rows: usize,
    pub columns: Vec<Column>,
    pub errors: Vec<PointError>,
    pub metrics: BTreeMap<String, f64>,
}

pub fn run_experiment(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    match spec.experiment {
        ExperimentId::Convergence => convergence(spec, omega),
        ExperimentId::DensitySweep | ExperimentId::ReliabilitySweep => frame_sweep(spec, omega),
        ExperimentId::BandwidthSweep => bandwidth_sweep(spec, omega),
        ExperimentId::Cdf => cdf(spec, omega),
        ExperimentId::LinkValidation => link_validation(spec),
        ExperimentId::ScheduleTrace => schedule_trace(spec, omega),
    }
}

/// Runs `spec` and writes `<name>.csv` and `<name>.summary.json` into `dir`.
pub fn run_to_dir(spec: &ExperimentSpec, omega: &OmegaStore, dir: &Path) -> Result<(ExperimentOutput, Summary), HarnessError> {
    let t0 = Instant::now();
    let out = run_experiment(spec, omega)?;
    std::fs::create_dir_all(dir)?;
    let name = spec.experiment.name();
    out.table.write_csv(std::fs::File::create(dir.join(format!("{name}.csv")))?)?;
    let summary = Summary {
        experiment: spec.experiment,
        config_hash: config_hash(&spec.config),
        seed: spec.seed,
        num_drops: spec.num_drops,
        wall_time_s: t0.elapsed().as_secs_f64(),
        rows: out.table.rows.len(),
        columns: out.table.columns.clone(),
        errors: out.errors.clone(),
        metrics: out.metrics.clone(),
    };
    std::fs::write(dir.join(format!("{name}.summary.json")), serde_json::to_string_pretty(&summary)?)?;
    Ok((out, summary))
}

const SCHEMES: [SchemeKind; 2] = [SchemeKind::Sp, SchemeKind::Rp];

fn convergence(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    let series_name = spec.series.as_ref().map_or("series", |s| s.axis.name());
    let mut out = ExperimentOutput {
        table: Table::new(vec![
            col(series_name, spec.series.as_ref().map_or("", |s| s.axis.unit())),
            col("scheme", ""),
            col("step", "iteration"),
            col("eta_min", "fraction"),
            col("eta_max", "fraction"),
            col("eta", "fraction"),
            col("zeta", "symbols"),
        ]),
        ..Default::default()
    };
    for (i, (sv, cfg)) in spec.series_configs()?.into_iter().enumerate() {
        let om = omega.get(&cfg)?;
        for kind in SCHEMES {
            match solve_frame(&cfg, &om, kind) {
                Ok(fd) if kind == SchemeKind::Sp => out.table.push(vec![
                    opt(sv),
                    scheme_name(kind),
                    fd.stats.zeta_newton_max.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    num(fd.zeta_lower),
                ]),
                Ok(fd) => {
                    for s in &fd.trace {
                        out.table.push(vec![
                            opt(sv),
                            scheme_name(kind),
                            s.step.to_string(),
                            num(s.eta_min),
                            num(s.eta_max),
                            num(s.eta),
                            num(s.zeta),
                        ]);
                    }
                    out.metrics.insert(format!("rp_bisection_steps_{i}"), fd.stats.bisection_steps as f64);
                }
                Err(e) => out.errors.push(PointError { index: i, label: scheme_name(kind), message: e.to_string() }),
            }
        }
    }
    Ok(out)
}

fn frame_columns(first: Column, second: Column) -> Vec<Column> {
    vec![
        first,
        second,
        col("scheme", ""),
        col("zeta_lower", "symbols"),
        col("zeta", "symbols"),
        col("eta", "fraction"),
        col("latency_ms", "ms"),
        col("cue_limited", "bool"),
        col("constraints_met", "bool"),
    ]
}

fn frame_row(sv: Option<f64>, x: f64, fd: &FrameDesign, b_c: f64) -> Vec<String> {
    vec![
        opt(sv),
        num(x),
        scheme_name(fd.scheme),
        num(fd.zeta_lower),
        num(fd.zeta),
        opt(fd.eta),
        num(fd.zeta / b_c * 1e3),
        fd.cue_limited.to_string(),
        fd.constraints_met.to_string(),
    ]
}

/// Frame size against density or reliability, one curve per series value
/// and scheme. Latency is `ζ/B_C`.
fn frame_sweep(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    let sweep = spec.sweep.as_ref().expect("validated");
    let series = spec.series.as_ref();
    let mut out = ExperimentOutput {
        table: Table::new(frame_columns(
            col(series.map_or("series", |s| s.axis.name()), series.map_or("", |s| s.axis.unit())),
            col(sweep.axis.name(), sweep.axis.unit()),
        )),
        ..Default::default()
    };
    let mut idx = 0;
    for (sv, base) in spec.series_configs()? {
        for &x in &sweep.values {
            let cfg = sweep.axis.apply(&base, x)?;
            let om = omega.get(&cfg)?;
            for kind in SCHEMES {
                match solve_frame(&cfg, &om, kind) {
                    Ok(fd) => out.table.push(frame_row(sv, x, &fd, cfg.coherence_bandwidth)),
                    Err(e) => out.errors.push(PointError { index: idx, label: format!("{}={x}", sweep.axis.name()), message: e.to_string() }),
                }
                idx += 1;
            }
        }
    }
    Ok(out)
}

/// Latency `ζ_{*,L}/B` along the feasible-region boundary; bandwidths past
/// the coherence bandwidth are flagged infeasible.
fn bandwidth_sweep(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    let sweep = spec.sweep.as_ref().expect("validated");
    let cfg = &spec.config;
    let om = omega.get(cfg)?;
    let mut out = ExperimentOutput {
        table: Table::new(vec![
            col("scheme", ""),
            col("bandwidth_hz", "Hz"),
            col("latency_ms", "ms"),
            col("latency_bandwidth", "symbols"),
            col("feasible", "bool"),
        ]),
        ..Default::default()
    };
    for (i, kind) in SCHEMES.into_iter().enumerate() {
        match solve_frame(cfg, &om, kind) {
            Ok(fd) => {
                for &b in &sweep.values {
                    let l = fd.zeta_lower / b;
                    out.table.push(vec![scheme_name(kind), num(b), num(l * 1e3), num(l * b), (b <= cfg.coherence_bandwidth).to_string()]);
                }
                out.metrics.insert(format!("{}_min_latency_ms", scheme_name(kind)), fd.zeta_lower / cfg.coherence_bandwidth * 1e3);
            }
            Err(e) => out.errors.push(PointError { index: i, label: scheme_name(kind), message: e.to_string() }),
        }
    }
    Ok(out)
}

/// One frame variant evaluated on one drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfVariant {
    pub name: &'static str,
    pub status: AllocStatus,
    /// Information bits per pair under the optimized allocation.
    pub v2v_bits: Vec<f64>,
    pub cue_sinr_db: Vec<f64>,
    pub min_bits: f64,
    pub equal_status: AllocStatus,
    pub equal_min_bits: f64,
}

fn bits(gamma: f64, fd: &FrameDesign) -> f64 {
    let l = fd.lambda();
    l * gamma.ln_1p() / std::f64::consts::LN_2 - fd.b * l.sqrt()
}

fn min_bits(r: &AllocationResult, fd: &FrameDesign) -> f64 {
    bits(r.min_gamma_v(), fd)
}

/// Optimized and equal-power allocations for one drop under each frame.
pub fn cdf_drop(cfg: &ScenarioConfig, frames: &[(&'static str, FrameDesign)], topo: &Topology) -> Result<Vec<CdfVariant>, String> {
    let fading = FadingModel::from_config(cfg);
    frames
        .iter()
        .map(|(name, fd)| {
            let gp = build_gp(topo, &fading, fd, AllocParams::from_config(cfg)).map_err(|e| e.to_string())?;
            let r = solve_gp(&gp, DEFAULT_GAP_TOL).map_err(|e| e.to_string())?;
            let eq = equal_power(&gp).map_err(|e| e.to_string())?;
            Ok(CdfVariant {
                name,
                status: r.status,
                v2v_bits: r.gamma_v.iter().map(|&g| bits(g, fd)).collect(),
                cue_sinr_db: r.gamma_c.iter().map(|&g| linear_to_db(g)).collect(),
                min_bits: min_bits(&r, fd),
                equal_status: eq.status,
                equal_min_bits: min_bits(&eq, fd),
            })
        })
        .collect()
}

/// The three frames compared in the CDFs: RP and SP at their own optimal
/// sizes, and RP squeezed into the SP frame size.
pub fn cdf_frames(cfg: &ScenarioConfig, om: &OmegaTable) -> Result<Vec<(&'static str, FrameDesign)>, FrameError> {
    let sp = solve_frame(cfg, om, SchemeKind::Sp)?;
    let rp = solve_frame(cfg, om, SchemeKind::Rp)?;
    let rp_sp = rp_at_frame(cfg, om, sp.zeta)?;
    Ok(vec![("rp", rp), ("rp_at_sp_frame", rp_sp), ("sp", sp)])
}

/// Drop `i` of a run, seeded by `derive_seed(master, i)`.
pub fn nth_drop(cfg: &ScenarioConfig, master: u64, i: usize) -> Result<Topology, GeometryError> {
    sample_drop(cfg, &mut seeded(derive_seed(master, i as u64)))
}

/// Per-variant properties of the optimized allocation against the
/// equal-power baseline, over drops where the optimizer succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfProperties {
    pub optimal_drops: usize,
    /// Share of optimal drops whose weakest pair gets the target bits.
    pub frac_meeting_target: f64,
    /// Every quantile of the optimized min-bits CDF is at least the
    /// baseline's.
    pub dominates: bool,
    /// Largest baseline-over-optimized quantile gap (bits).
    pub worst_quantile_gap: f64,
}

pub fn cdf_properties(drops: &[Vec<CdfVariant>], variant: &str, target_bits: f64) -> CdfProperties {
    let sel: Vec<&CdfVariant> = drops.iter().flatten().filter(|v| v.name == variant && v.status == AllocStatus::Optimal).collect();
    let mut opt: Vec<f64> = sel.iter().map(|v| v.min_bits).collect();
    let mut eq: Vec<f64> = sel.iter().map(|v| v.equal_min_bits).collect();
    opt.sort_by(f64::total_cmp);
    eq.sort_by(f64::total_cmp);
    let worst = opt.iter().zip(&eq).map(|(o, e)| e - o).fold(f64::NEG_INFINITY, f64::max);
    CdfProperties {
        optimal_drops: sel.len(),
        frac_meeting_target: opt.iter().filter(|&&b| b >= target_bits).count() as f64 / sel.len().max(1) as f64,
        dominates: worst <= 0.0,
        worst_quantile_gap: worst,
    }
}

fn cdf(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    let cfg = &spec.config;
    let frames = cdf_frames(cfg, &omega.get(cfg)?)?;
    let results: Vec<Result<Vec<CdfVariant>, String>> = (0..spec.num_drops)
        .into_par_iter()
        .map(|i| {
            let topo = nth_drop(cfg, spec.seed, i).map_err(|e| e.to_string())?;
            cdf_drop(cfg, &frames, &topo)
        })
        .collect();
    let mut out = ExperimentOutput {
        table: Table::new(vec![
            col("drop", "index"),
            col("variant", ""),
            col("allocation", ""),
            col("status", ""),
            col("metric", ""),
            col("index", "link"),
            col("value", "bits or dB"),
        ]),
        ..Default::default()
    };
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(vs) => {
                for v in &vs {
                    let st = serde_json::to_value(v.status)?.as_str().unwrap_or_default().to_string();
                    let est = serde_json::to_value(v.equal_status)?.as_str().unwrap_or_default().to_string();
                    let mut push = |alloc: &str, status: &str, metric: &str, j: usize, x: f64| {
                        out.table.push(vec![i.to_string(), v.name.into(), alloc.into(), status.into(), metric.into(), j.to_string(), num(x)])
                    };
                    for (j, &b) in v.v2v_bits.iter().enumerate() {
                        push("optimized", &st, "v2v_bits", j, b);
                    }
                    for (j, &s) in v.cue_sinr_db.iter().enumerate() {
                        push("optimized", &st, "cue_sinr_db", j, s);
                    }
                    push("optimized", &st, "min_bits", 0, v.min_bits);
                    push("equal_power", &est, "min_bits", 0, v.equal_min_bits);
                }
                ok.push(vs);
            }
            Err(m) => out.errors.push(PointError { index: i, label: format!("drop {i}"), message: m }),
        }
    }
    for (name, _) in &frames {
        let p = cdf_properties(&ok, name, cfg.info_threshold);
        out.metrics.insert(format!("{name}_optimal_drops"), p.optimal_drops as f64);
        out.metrics.insert(format!("{name}_frac_meeting_target"), p.frac_meeting_target);
        out.metrics.insert(format!("{name}_dominates_equal_power"), f64::from(u8::from(p.dominates)));
    }
    Ok(out)
}

/// Result of one link-level drop under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRow {
    pub drop: usize,
    pub scheme: SchemeKind,
    pub target: Target,
    pub empirical: f64,
    pub std_err: f64,
    pub asymptotic: f64,
    pub finite: f64,
}

impl LinkRow {
    pub fn rel_err(&self) -> f64 {
        (self.empirical - self.asymptotic).abs() / self.asymptotic
    }
}

/// Clustered 2-pair, 1-CUE drops with every transmitter on one pilot, pairs
/// at a quarter of their cap and the CUE at half, simulated under both schemes at the
/// default frame sizes.
pub fn link_fixed_drops(cfg: &ScenarioConfig, om: &OmegaTable, lc: &LinkDrawConfig, drops: usize, seed: u64) -> Result<Vec<LinkRow>, HarnessError> {
    let cfg = ScenarioConfig { num_cues: 1, ..cfg.clone() };
    let fading = FadingModel::from_config(&cfg);
    let mut schemes = Vec::new();
    for k in SCHEMES {
        schemes.push(solve_frame(&cfg, om, k)?.pilot_scheme(1).map_err(|e| HarnessError::Spec(e.to_string()))?);
    }
    let mut rows = Vec::new();
    for d in 0..drops {
        let topo = clustered_drop(&cfg, 2, 1, 40.0, &mut seeded(derive_seed(seed, d as u64)))?;
        let g = LinkGains::from_topology(&topo, &fading).map_err(|e| HarnessError::Spec(e.to_string()))?;
        let a = PowerAllocation::uniform(2, 1, 0.25 * cfg.max_power_v, 0.5 * cfg.max_power_c());
        for s in &schemes {
            let pilots = PilotAssignment { tau: pilot_count(s), pairs: vec![0, 0], cues: vec![0] };
            let e = empirical_sinr(&g, &a, s, &pilots, lc, derive_seed(seed ^ 0x11, d as u64)).map_err(|e| HarnessError::Spec(e.to_string()))?;
            let targets = [Target::Pair(0), Target::Pair(1), Target::Cue(0)];
            for (c, t) in e.v.iter().chain(&e.c).zip(targets) {
                rows.push(LinkRow {
                    drop: d,
                    scheme: s.kind(),
                    target: t,
                    empirical: c.empirical,
                    std_err: c.std_err,
                    asymptotic: c.asymptotic,
                    finite: finite_sinr(&g, &a, s, &pilots, lc, t),
                });
            }
        }
    }
    Ok(rows)
}

fn link_validation(spec: &ExperimentSpec) -> Result<ExperimentOutput, HarnessError> {
    let om = omega_quadrature(&spec.config)?.table;
    let rows = link_fixed_drops(&spec.config, &om, &spec.link, spec.num_drops, spec.seed)?;
    let mut out = ExperimentOutput {
        table: Table::new(vec![
            col("drop", "index"),
            col("scheme", ""),
            col("link", ""),
            col("empirical_sinr", "linear"),
            col("std_err", "linear"),
            col("asymptotic_sinr", "linear"),
            col("finite_array_sinr", "linear"),
            col("rel_err", "fraction"),
        ]),
        ..Default::default()
    };
    for r in &rows {
        let link = match r.target {
            Target::Pair(i) => format!("pair{i}"),
            Target::Cue(k) => format!("cue{k}"),
        };
        out.table.push(vec![
            r.drop.to_string(),
            scheme_name(r.scheme),
            link,
            num(r.empirical),
            num(r.std_err),
            num(r.asymptotic),
            num(r.finite),
            num(r.rel_err()),
        ]);
    }
    out.metrics.insert("max_rel_err".into(), rows.iter().map(LinkRow::rel_err).fold(0.0, f64::max));
    out.metrics.insert("links".into(), rows.len() as f64);
    Ok(out)
}

/// Synthetic report stream for `schedule_trace`.
pub fn synth_reports(spec: &ExperimentSpec) -> Result<Vec<TrafficReport>, HarnessError> {
    let sweep = spec.sweep.as_ref().expect("validated");
    let mut out = Vec::new();
    let mut i = 0usize;
    for &rho in &sweep.values {
        let cfg = Axis::Density.apply(&spec.config, rho)?;
        for _ in 0..spec.schedule.reports_per_value {
            let mut rng = seeded(derive_seed(spec.seed, i as u64));
            // counts jitter around the mean, so the refreshed drop is new every time
            let topo = sample_drop(&cfg, &mut rng)?;
            let jitter = 1.0 + 0.02 * (rng.random::<f64>() - 0.5);
            out.push(TrafficReport { time: i as f64 * spec.schedule.interval, density: [rho * jitter; 4], topology: Some(topo) });
            i += 1;
        }
    }
    Ok(out)
}

fn schedule_trace(spec: &ExperimentSpec, omega: &OmegaStore) -> Result<ExperimentOutput, HarnessError> {
    let planner = ModelPlanner { scenario: spec.config.clone(), omega: omega.get(&spec.config)?, kind: spec.schedule.scheme };
    let mut s = Scheduler::new(spec.schedule.scheduler, planner)?;
    let reports = synth_reports(spec)?;
    let mut out = ExperimentOutput {
        table: Table::new(vec![
            col("t", "s"),
            col("action", ""),
            col("zeta", "symbols"),
            col("eta", "fraction"),
            col("t_c", "s"),
            col("t_ra", "s"),
        ]),
        ..Default::default()
    };
    for (i, r) in reports.iter().enumerate() {
        match s.step(r) {
            Ok(actions) => {
                for row in s.trace_rows(r.time, &actions) {
                    let action = serde_json::to_value(row.action)?.as_str().unwrap_or_default().to_string();
                    out.table.push(vec![num(row.t), action, opt(row.zeta), opt(row.eta), num(row.t_c), num(row.t_ra)]);
                }
            }
            Err(e) => out.errors.push(PointError { index: i, label: format!("t={}", r.time), message: e.to_string() }),
        }
    }
    out.metrics.insert("epochs".into(), s.state.epoch as f64);
    Ok(out)
}

/// Drop with `pairs` pairs spread uniformly over the roads and `cues` CUEs.
pub fn small_drop(cfg: &ScenarioConfig, pairs: usize, cues: usize, seed: u64) -> Result<Topology, GeometryError> {
    let mut rng = seeded(seed);
    let mut counts = [0usize; 4];
    for _ in 0..pairs {
        counts[rng.random_range(0..4)] += 1;
    }
    sample_topology(&ScenarioConfig { num_cues: cues, ..cfg.clone() }, counts, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> ExperimentSpec {
        ExperimentSpec::from_json_str(json).unwrap()
    }

    #[test]
    fn spec_parsing_and_validation() {
        let s = spec(r#"{"experiment":"density_sweep","sweep":{"axis":"density","values":[0.001,0.002]},"config":{"num_cues":10}}"#);
        assert_eq!(s.config.num_cues, 10);
        assert_eq!(s.config.road_length, 200.0);
        for bad in [
            r#"{"experiment":"density_sweep"}"#,
            r#"{"experiment":"density_sweep","sweep":{"axis":"density","values":[0.002,0.001]}}"#,
            r#"{"experiment":"cdf","num_drops":0}"#,
            r#"{"experiment":"cdf","bogus":1}"#,
            r#"{"experiment":"nope"}"#,
        ] {
            assert!(ExperimentSpec::from_json_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn density_sweep_ordering_and_determinism() {
        let s = spec(
            r#"{"experiment":"density_sweep","sweep":{"axis":"density","values":[0.001,0.004,0.007,0.01]},
                "series":{"axis":"num_cues","values":[10,50]}}"#,
        );
        let store = OmegaStore::in_memory();
        let a = run_experiment(&s, &store).unwrap();
        assert!(a.errors.is_empty(), "{:?}", a.errors);
        assert_eq!(a.table.to_csv_string(), run_experiment(&s, &store).unwrap().table.to_csv_string());
        assert_eq!(a.table.rows.len(), 16);
        for series in ["10", "50"] {
            for scheme in ["sp", "rp"] {
                let z: Vec<f64> = a.table.rows.iter().filter(|r| r[0] == series && r[2] == scheme).map(|r| r[3].parse().unwrap()).collect();
                assert!(z.windows(2).all(|w| w[0] <= w[1]), "{series} {scheme} {z:?}");
            }
        }
    }

    #[test]
    fn reliability_plateau_for_sp_at_high_cue_target() {
        let s = spec(
            r#"{"experiment":"reliability_sweep","sweep":{"axis":"reliability","values":[1e-7,1e-6,1e-5,1e-4,1e-3]},
                "series":{"axis":"cue_threshold_db","values":[8]},"config":{"num_cues":50,"avg_density":[0.001,0.001,0.001,0.001]}}"#,
        );
        let out = run_experiment(&s, &OmegaStore::in_memory()).unwrap();
        let sp: Vec<&Vec<String>> = out.table.rows.iter().filter(|r| r[2] == "sp").collect();
        assert!(sp.iter().all(|r| r[7] == "true"), "{sp:?}");
        assert!(sp.windows(2).all(|w| w[0][4] == w[1][4]));
    }

    #[test]
    fn bandwidth_boundary_product_constant() {
        let s = spec(r#"{"experiment":"bandwidth_sweep","sweep":{"axis":"bandwidth","values":[1e5,2.5e5,5e5,1e6]}}"#);
        let out = run_experiment(&s, &OmegaStore::in_memory()).unwrap();
        for scheme in ["sp", "rp"] {
            let lb: Vec<f64> = out.table.rows.iter().filter(|r| r[0] == scheme).map(|r| r[3].parse().unwrap()).collect();
            assert!(lb.windows(2).all(|w| ((w[0] - w[1]) / w[0]).abs() <= 4.0 * f64::EPSILON));
        }
        assert_eq!(out.table.rows.iter().filter(|r| r[4] == "false").count(), 2);
    }

    #[test]
    fn drop_seeds_do_not_depend_on_count() {
        let cfg = ScenarioConfig::default();
        assert_eq!(nth_drop(&cfg, 9, 3).unwrap(), nth_drop(&cfg, 9, 3).unwrap());
        let s5 = ExperimentSpec { num_drops: 5, ..ExperimentSpec::new(ExperimentId::Cdf) };
        let s3 = ExperimentSpec { num_drops: 3, ..s5.clone() };
        let store = OmegaStore::in_memory();
        let (a, b) = (run_experiment(&s5, &store).unwrap(), run_experiment(&s3, &store).unwrap());
        let prefix = |o: &ExperimentOutput| o.table.rows.iter().filter(|r| r[0].parse::<usize>().unwrap() < 3).cloned().collect::<Vec<_>>();
        assert_eq!(prefix(&a), prefix(&b));
        assert!(!b.table.rows.is_empty());
    }

    #[test]
    fn artifacts_written_with_headers() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(r#"{"experiment":"convergence","config":{"num_cues":10,"avg_density":[0.005,0.005,0.005,0.005]}}"#);
        let (out, summary) = run_to_dir(&s, &OmegaStore::in_memory(), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
        assert!(text.starts_with("series,scheme,step,eta_min,eta_max,eta,zeta\n"));
        assert_eq!(summary.rows, out.table.rows.len());
        assert_eq!(summary.config_hash.len(), 64);
        let js: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("convergence.summary.json")).unwrap()).unwrap();
        assert_eq!(js["columns"][6]["unit"], "symbols");
    }

    #[test]
    fn schedule_trace_runs() {
        let s = spec(
            r#"{"experiment":"schedule_trace","sweep":{"axis":"density","values":[0.0025,0.004]},
                "schedule":{"reports_per_value":6,"interval":0.002},"config":{"num_cues":2}}"#,
        );
        let out = run_experiment(&s, &OmegaStore::in_memory()).unwrap();
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        assert_eq!(out.metrics["epochs"], 2.0);
        assert!(out.table.rows.iter().any(|r| r[1] == "reallocate_power"));
    }
}
