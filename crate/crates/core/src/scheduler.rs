//! Semi-persistent scheduling: frames are redesigned at density epochs and
//! powers are refreshed once the running policy outlives the channel
//! coherence time.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_design::{solve_frame, FrameDesign, FrameError};
use crate::geometry::{ScenarioConfig, Topology};
use crate::gp_alloc::{build_gp, solve_gp, AllocParams, AllocationResult, GpError, DEFAULT_GAP_TOL};
use crate::pathloss::{FadingModel, OmegaTable};
use crate::sinr_bounds::SchemeKind;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("report at t = {got} s is not newer than t = {last} s")]
    Stale { got: f64, last: f64 },
    #[error("invalid report: {0}")]
    Report(String),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("invalid scheduler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Average speed as a function of density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityLaw {
    /// Greenshields: `v = v_f (1 − ρ/ρ_max)`, clamped at zero.
    Linear { free_flow: f64, jam_density: f64 },
}

impl Default for VelocityLaw {
    fn default() -> Self {
        // 60 km/h free flow; jam at one car per 7 m in each of two lanes on an 8 m road
        VelocityLaw::Linear { free_flow: 60.0 / 3.6, jam_density: 2.0 / (7.0 * 8.0) }
    }
}

impl VelocityLaw {
    pub fn velocity(&self, rho: f64) -> f64 {
        match *self {
            VelocityLaw::Linear { free_flow, jam_density } => (free_flow * (1.0 - rho / jam_density)).max(0.0),
        }
    }

    fn validate(&self) -> Result<(), SchedError> {
        match *self {
            VelocityLaw::Linear { free_flow, jam_density } if free_flow > 0.0 && jam_density > 0.0 => Ok(()),
            _ => Err(SchedError::Config(format!("velocity law needs positive parameters: {self:?}"))),
        }
    }
}

/// `T_C = √(9 c² / (16π f_C² v²))`. A static scene (`v = 0`) gives
/// `f64::INFINITY`.
pub fn coherence_time_for_velocity(v: f64, carrier_hz: f64) -> f64 {
    if v <= 0.0 {
        return f64::INFINITY;
    }
    (9.0 * SPEED_OF_LIGHT.powi(2) / (16.0 * std::f64::consts::PI * carrier_hz.powi(2) * v * v)).sqrt()
}

pub fn coherence_time(rho: f64, law: &VelocityLaw, carrier_hz: f64) -> f64 {
    coherence_time_for_velocity(law.velocity(rho), carrier_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub carrier_hz: f64,
    pub velocity: VelocityLaw,
    /// Relative density change that starts a new epoch.
    pub epoch_threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { carrier_hz: 2e9, velocity: VelocityLaw::default(), epoch_threshold: 0.1 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(SchedError::Config(format!("carrier frequency must be positive, got {}", self.carrier_hz)));
        }
        if !(self.epoch_threshold >= 0.0) {
            return Err(SchedError::Config(format!("epoch threshold must be non-negative, got {}", self.epoch_threshold)));
        }
        self.velocity.validate()
    }

    /// The fastest road decorrelates first, so it sets the refresh period.
    pub fn coherence_time(&self, density: &[f64; 4]) -> f64 {
        density.iter().map(|&r| coherence_time(r, &self.velocity, self.carrier_hz)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficReport {
    /// Seconds.
    pub time: f64,
    /// Per-road density (vehicles/m²).
    pub density: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
}

impl TrafficReport {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !self.time.is_finite() {
            return Err(SchedError::Report(format!("timestamp {} is not finite", self.time)));
        }
        if let Some(r) = self.density.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(SchedError::Report(format!("density {r} must be finite and non-negative")));
        }
        Ok(())
    }
}

/// Parses line-delimited JSON reports. Blank lines are skipped.
pub fn parse_reports<R: BufRead>(input: R) -> Result<Vec<TrafficReport>, SchedError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrafficReport = serde_json::from_str(&line).map_err(|source| SchedError::Parse { line: i + 1, source })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RunAlgorithm1,
    BroadcastPilotAllocation,
    ReallocatePower,
    Maintain,
}

/// Executes the solves the state machine asks for.
pub trait Planner {
    fn design(&mut self, density: &[f64; 4]) -> Result<FrameDesign, SchedError>;
    fn allocate(&mut self, frame: &FrameDesign, topo: &Topology) -> Result<AllocationResult, SchedError>;
}

/// Planner backed by the frame solver and the GP.
#[derive(Debug, Clone)]
pub struct ModelPlanner {
    pub scenario: ScenarioConfig,
    pub omega: OmegaTable,
    pub kind: SchemeKind,
}

impl Planner for ModelPlanner {
    fn design(&mut self, density: &[f64; 4]) -> Result<FrameDesign, SchedError> {
        let cfg = ScenarioConfig { avg_density: *density, ..self.scenario.clone() };
        Ok(solve_frame(&cfg, &self.omega, self.kind)?)
    }

    fn allocate(&mut self, frame: &FrameDesign, topo: &Topology) -> Result<AllocationResult, SchedError> {
        let gp = build_gp(topo, &FadingModel::from_config(&self.scenario), frame, AllocParams::from_config(&self.scenario))?;
        Ok(solve_gp(&gp, DEFAULT_GAP_TOL)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleState {
    pub frame: Option<FrameDesign>,
    pub alloc: Option<AllocationResult>,
    /// How long the current power policy has been running (s).
    pub t_ra: f64,
    /// Coherence time at the latest density (s).
    pub t_c: f64,
    pub epoch: u64,
    pub last_time: Option<f64>,
    pub last_density: Option<[f64; 4]>,
    pub topology: Option<Topology>,
}

/// One row of the action trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub action: Action,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    pub t_c: f64,
    pub t_ra: f64,
}

pub struct Scheduler<P> {
    pub cfg: SchedulerConfig,
    pub state: ScheduleState,
    pub planner: P,
}

impl<P: Planner> Scheduler<P> {
    pub fn new(cfg: SchedulerConfig, planner: P) -> Result<Self, SchedError> {
        cfg.validate()?;
        Ok(Self { cfg, state: ScheduleState::default(), planner })
    }

    fn is_epoch(&self, density: &[f64; 4]) -> bool {
        let Some(last) = self.state.last_density else { return true };
        density.iter().zip(&last).any(|(&new, &old)| (new - old).abs() > self.cfg.epoch_threshold * old || (old == 0.0 && new != 0.0))
    }

    /// Advances the clock to the report and applies the scheduling rules.
    /// A density epoch redesigns the frame and re-solves powers for the
    /// new pilot set; a location refresh after the policy has outlived
    /// `T_C` re-solves powers and restarts the clock.
    pub fn step(&mut self, report: &TrafficReport) -> Result<Vec<Action>, SchedError> {
        report.validate()?;
        if let Some(last) = self.state.last_time {
            if report.time <= last {
                return Err(SchedError::Stale { got: report.time, last });
            }
            self.state.t_ra += report.time - last;
        }
        self.state.last_time = Some(report.time);
        if let Some(t) = &report.topology {
            self.state.topology = Some(t.clone());
        }

        let mut actions = Vec::new();
        if self.is_epoch(&report.density) {
            let frame = self.planner.design(&report.density)?;
            if let Some(t) = &self.state.topology {
                self.state.alloc = Some(self.planner.allocate(&frame, t)?);
            }
            self.state.frame = Some(frame);
            self.state.last_density = Some(report.density);
            self.state.t_c = self.cfg.coherence_time(&report.density);
            self.state.epoch += 1;
            actions.extend([Action::RunAlgorithm1, Action::BroadcastPilotAllocation]);
        }
        if let (Some(t), Some(frame)) = (&report.topology, &self.state.frame) {
            if self.state.t_ra > self.state.t_c {
                self.state.alloc = Some(self.planner.allocate(frame, t)?);
                self.state.t_ra = 0.0;
                actions.push(Action::ReallocatePower);
            }
        }
        if actions.is_empty() {
            actions.push(Action::Maintain);
        }
        Ok(actions)
    }

    pub fn trace_rows(&self, t: f64, actions: &[Action]) -> Vec<TraceRow> {
        let f = self.state.frame.as_ref();
        actions
            .iter()
            .map(|&action| TraceRow { t, action, zeta: f.map(|f| f.zeta), eta: f.and_then(|f| f.eta), t_c: self.state.t_c, t_ra: self.state.t_ra })
            .collect()
    }

    pub fn run(&mut self, reports: &[TrafficReport]) -> Result<Vec<TraceRow>, SchedError> {
        let mut rows = Vec::new();
        for r in reports {
            let a = self.step(r)?;
            rows.extend(self.trace_rows(r.time, &a));
        }
        Ok(rows)
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), SchedError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_design::SolverStats;
    use crate::gp_alloc::AllocStatus;
    use crate::sinr_bounds::PowerAllocation;

    #[derive(Default)]
    struct Counting {
        designs: usize,
        allocs: usize,
    }

    impl Planner for Counting {
        fn design(&mut self, _: &[f64; 4]) -> Result<FrameDesign, SchedError> {
            self.designs += 1;
            Ok(FrameDesign {
                scheme: SchemeKind::Sp,
                eta: None,
                zeta: 100.0,
                zeta_lower: 99.5,
                a_rp: [0.0; 4],
                a_sp: [0.0; 4],
                b: 6.0,
                binding_road: None,
                cue_limited: false,
                constraints_met: true,
                stats: SolverStats::default(),
                trace: vec![],
            })
        }

        fn allocate(&mut self, _: &FrameDesign, _: &Topology) -> Result<AllocationResult, SchedError> {
            self.allocs += 1;
            Ok(AllocationResult {
                status: AllocStatus::Optimal,
                alloc: PowerAllocation::uniform(0, 0, 0.0, 0.0),
                phi_prime: 1.0,
                phi: 1.0,
                gamma_v: vec![],
                gamma_c: vec![],
                newton_steps: 0,
                duality_gap: 0.0,
                kkt_residual: 0.0,
                max_constraint: 0.0,
            })
        }
    }

    fn report(t: f64, rho: f64, refresh: bool) -> TrafficReport {
        TrafficReport { time: t, density: [rho; 4], topology: refresh.then(Topology::default) }
    }

    #[test]
    fn coherence_time_values() {
        let t = coherence_time_for_velocity(60.0 / 3.6, 2e9);
        assert!((t - 3.80e-3).abs() < 0.01e-3, "{t}");
        assert!((coherence_time_for_velocity(60.0 / 3.6, 4e9) * 2.0 / t - 1.0).abs() < 1e-12);
        assert!(coherence_time_for_velocity(0.0, 2e9).is_infinite());
        let law = VelocityLaw::Linear { free_flow: 10.0, jam_density: 0.01 };
        assert!(coherence_time(0.01, &law, 2e9).is_infinite());
        assert!(coherence_time(0.005, &law, 2e9) > coherence_time(0.001, &law, 2e9));
    }

    fn fixed_tc(tc: f64) -> SchedulerConfig {
        // free flow chosen so that T_C at zero density equals `tc`
        let v = (9.0 * SPEED_OF_LIGHT.powi(2) / (16.0 * std::f64::consts::PI * 4e18 * tc * tc)).sqrt();
        SchedulerConfig { carrier_hz: 2e9, velocity: VelocityLaw::Linear { free_flow: v, jam_density: 1.0 }, epoch_threshold: 0.1 }
    }

    #[test]
    fn maintain_inside_coherence_time() {
        let mut s = Scheduler::new(fixed_tc(3.8e-3), Counting::default()).unwrap();
        assert_eq!(s.step(&report(0.0, 0.0, true)).unwrap(), vec![Action::RunAlgorithm1, Action::BroadcastPilotAllocation]);
        assert_eq!(s.step(&report(1e-3, 0.0, true)).unwrap(), vec![Action::Maintain]);
        assert_eq!(s.step(&report(2e-3, 0.0, false)).unwrap(), vec![Action::Maintain]);
    }

    #[test]
    fn reallocation_every_fourth_report() {
        let mut s = Scheduler::new(fixed_tc(3.8e-3), Counting::default()).unwrap();
        assert!((s.cfg.coherence_time(&[0.0; 4]) - 3.8e-3).abs() < 1e-12);
        let mut at = Vec::new();
        for i in 0..=40 {
            let a = s.step(&report(i as f64 * 1e-3, 0.0, true)).unwrap();
            if a.contains(&Action::ReallocatePower) {
                at.push(i);
            }
        }
        assert_eq!(at, (1..=10).map(|k| 4 * k).collect::<Vec<_>>());
        assert_eq!(s.planner.designs, 1);
    }

    #[test]
    fn epochs_redesign_only_on_density_change() {
        let mut s = Scheduler::new(fixed_tc(3.8e-3), Counting::default()).unwrap();
        s.step(&report(0.0, 0.0025, false)).unwrap();
        assert_eq!(s.step(&report(1.0, 0.0026, true)).unwrap(), vec![Action::ReallocatePower]);
        let a = s.step(&report(2.0, 0.003, true)).unwrap();
        assert_eq!(&a[..2], &[Action::RunAlgorithm1, Action::BroadcastPilotAllocation]);
        assert_eq!(s.state.epoch, 2);
        assert_eq!(s.planner.designs, 2);
    }

    #[test]
    fn stale_and_invalid_reports_rejected() {
        let mut s = Scheduler::new(SchedulerConfig::default(), Counting::default()).unwrap();
        s.step(&report(1.0, 0.001, false)).unwrap();
        assert!(matches!(s.step(&report(1.0, 0.001, false)), Err(SchedError::Stale { .. })));
        assert!(s.step(&report(2.0, -1.0, false)).is_err());
    }

    #[test]
    fn reallocations_spaced_beyond_coherence_time_and_deterministic() {
        let stream: Vec<TrafficReport> = (0..500)
            .map(|i| {
                let t = i as f64 * 7e-4 + if i % 3 == 0 { 1e-4 } else { 0.0 };
                report(t, 0.0025 * (1.0 + 0.3 * ((i / 100) as f64)), i % 2 == 0)
            })
            .collect();
        let run = || {
            let mut s = Scheduler::new(SchedulerConfig::default(), Counting::default()).unwrap();
            s.run(&stream).unwrap()
        };
        let rows = run();
        assert_eq!(rows, run());
        let re: Vec<&TraceRow> = rows.iter().filter(|r| r.action == Action::ReallocatePower).collect();
        assert!(re.len() > 10);
        for w in re.windows(2) {
            assert!(w[1].t - w[0].t > w[0].t_c, "{:?}", w);
        }
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,action,zeta,eta,t_c,t_ra\n"));
    }

    #[test]
    fn report_stream_parsing() {
        let text = "{\"time\":0.0,\"density\":[0.001,0.001,0.001,0.001]}\n\n{\"time\":0.001,\"density\":[0.002,0,0,0],\"topology\":{\"pairs\":[],\"cues\":[]}}\n";
        let r = parse_reports(text.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[1].topology.is_some());
        let bad = "{\"time\":0.0,\"density\":[1,1,1]}\n";
        assert!(matches!(parse_reports(bad.as_bytes()), Err(SchedError::Parse { line: 1, .. })));
        let neg = "{\"time\":0.0,\"density\":[1,1,1,-1]}\n";
        assert!(matches!(parse_reports(neg.as_bytes()), Err(SchedError::Report(_))));
    }
}
