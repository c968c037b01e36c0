use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use urllc::frame_design::solve_frame;
use urllc::geometry::{ScenarioConfig, Topology};
use urllc::gp_alloc::{build_gp, recover_phi, solve_gp, AllocParams, DEFAULT_GAP_TOL};
use urllc::harness::validate::{validate, SuiteId, ValidateOptions};
use urllc::harness::{nth_drop, run_to_dir, ExperimentId, ExperimentSpec, OmegaStore, Summary};
use urllc::link_mc::LinkDrawConfig;
use urllc::pathloss::{omega_montecarlo, FadingModel, OmegaEntry, OmegaTable};
use urllc::rng::seeded;
use urllc::scheduler::{parse_reports, write_trace_csv, ModelPlanner, Scheduler, SchedulerConfig};
use urllc::sinr_bounds::SchemeKind;

#[derive(Parser)]
#[command(name = "urllc", version, about = "Frame design, power allocation and validation for V2V URLLC underlay networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Scenario precedence: built-in defaults, then `--config`, then flags.
#[derive(Args)]
struct Global {
    /// Scenario config JSON; missing fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every drop and draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Persist Ω tables here, keyed by geometry.
    #[arg(long, global = true)]
    omega_cache: Option<PathBuf>,
    /// Density on every road (vehicles/m²).
    #[arg(long, global = true)]
    density: Option<f64>,
    /// Number of cellular users sharing the band.
    #[arg(long, global = true)]
    num_cues: Option<usize>,
    /// Target error probability.
    #[arg(long, global = true)]
    reliability: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Sp,
    Rp,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Sp => SchemeKind::Sp,
            SchemeArg::Rp => SchemeKind::Rp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Omega,
    Derivatives,
    Gp,
    Link,
    Frame,
}

impl From<SuiteArg> for SuiteId {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Omega => SuiteId::Omega,
            SuiteArg::Derivatives => SuiteId::Derivatives,
            SuiteArg::Gp => SuiteId::Gp,
            SuiteArg::Link => SuiteId::Link,
            SuiteArg::Frame => SuiteId::Frame,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Ω table by quadrature, optionally checked against Monte Carlo.
    Omega {
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Minimum frame size and pilot split.
    Frame {
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Max-min power allocation for one drop.
    Allocate {
        /// Topology JSON; a seeded random drop when absent.
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sp")]
        scheme: SchemeArg,
    },
    /// Runs an experiment spec (JSON).
    Sweep {
        spec: PathBuf,
    },
    /// Per-drop CDF data under the three frame variants.
    Cdf {
        #[arg(long, default_value_t = 500)]
        drops: usize,
    },
    /// Link-level Monte Carlo against the closed-form SINR.
    ValidateLink {
        #[arg(long, default_value_t = 20)]
        drops: usize,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        antennas: Option<usize>,
    },
    /// Replays a line-delimited JSON traffic report stream.
    Schedule {
        /// Report file, or `-` for stdin.
        reports: PathBuf,
        #[arg(long, value_enum, default_value = "sp")]
        scheme: SchemeArg,
        #[arg(long)]
        carrier_hz: Option<f64>,
    },
    /// Runs the oracle suites; exits 2 when any check fails.
    Validate {
        #[arg(long = "suite", value_enum)]
        suites: Vec<SuiteArg>,
        /// Ω table under test (JSON); the quadrature table when absent.
        #[arg(long)]
        omega: Option<PathBuf>,
        /// Smaller sample sizes for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl Global {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_json_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(d) = self.density {
            cfg.avg_density = [d; 4];
        }
        if let Some(k) = self.num_cues {
            cfg.num_cues = k;
        }
        if let Some(e) = self.reliability {
            cfg.reliability = e;
        }
    }

    fn store(&self) -> OmegaStore {
        match &self.omega_cache {
            Some(d) => OmegaStore::with_cache(d),
            None => OmegaStore::in_memory(),
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let p = self.out.join(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

fn print_summary(s: &Summary, out: &Path) {
    println!("{}: {} rows, {} errors, {:.2} s -> {}", s.experiment.name(), s.rows, s.errors.len(), s.wall_time_s, out.display());
    for (k, v) in &s.metrics {
        println!("  {k} = {v}");
    }
    for e in &s.errors {
        println!("  error at {} ({}): {}", e.index, e.label, e.message);
    }
}

fn experiment(g: &Global, spec: ExperimentSpec) -> Result<ExitCode> {
    let (_, summary) = run_to_dir(&spec, &g.store(), &g.out)?;
    print_summary(&summary, &g.out);
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    match cli.cmd {
        Cmd::Omega { samples } => {
            let cfg = g.scenario()?;
            let table = g.store().get(&cfg)?;
            let p = g.write("omega.json", &serde_json::to_string_pretty(&table)?)?;
            println!("{}", serde_json::to_string_pretty(&table)?);
            if let Some(n) = samples {
                let mc = omega_montecarlo(&cfg, n, &mut seeded(seed))?;
                for e in OmegaEntry::ALL {
                    let (q, m) = (table.get(e), mc.table.get(e));
                    println!("{e:8} quadrature {q:.6e}  monte carlo {m:.6e} ± {:.1e}  rel {:+.4}", mc.std_err.get(e), m / q - 1.0);
                }
            }
            info!("wrote {}", p.display());
        }
        Cmd::Frame { scheme } => {
            let cfg = g.scenario()?;
            let om = g.store().get(&cfg)?;
            let kinds = match scheme {
                Some(s) => vec![s.into()],
                None => vec![SchemeKind::Sp, SchemeKind::Rp],
            };
            let mut all = Vec::new();
            for k in kinds {
                let fd = solve_frame(&cfg, &om, k)?;
                println!(
                    "{k}: zeta = {} (continuous {:.4}), eta = {}, latency = {:.4} ms, cue_limited = {}",
                    fd.zeta,
                    fd.zeta_lower,
                    fd.eta.map_or("-".into(), |e| format!("{e:.4}")),
                    fd.zeta / cfg.coherence_bandwidth * 1e3,
                    fd.cue_limited
                );
                all.push(fd);
            }
            g.write("frame.json", &serde_json::to_string_pretty(&all)?)?;
        }
        Cmd::Allocate { topology, scheme } => {
            let cfg = g.scenario()?;
            let topo: Topology = match &topology {
                Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => nth_drop(&cfg, seed, 0)?,
            };
            topo.audit(&cfg)?;
            let om = g.store().get(&cfg)?;
            let fd = solve_frame(&cfg, &om, scheme.into())?;
            let gp = build_gp(&topo, &FadingModel::from_config(&cfg), &fd, AllocParams::from_config(&cfg))?;
            let res = solve_gp(&gp, DEFAULT_GAP_TOL)?;
            println!(
                "{:?}: {} pairs, {} CUEs, phi = {:.2} bits, {} Newton steps",
                res.status,
                topo.num_pairs(),
                topo.num_cues(),
                recover_phi(&res, &fd),
                res.newton_steps
            );
            g.write("allocation.json", &serde_json::to_string_pretty(&res)?)?;
        }
        Cmd::Sweep { spec } => {
            let mut s = ExperimentSpec::from_json_str(&read(&spec)?).with_context(|| format!("parsing {}", spec.display()))?;
            if g.config.is_some() {
                s.config = g.scenario()?;
            } else {
                g.apply(&mut s.config);
            }
            if let Some(seed) = g.seed {
                s.seed = seed;
            }
            return experiment(g, s);
        }
        Cmd::Cdf { drops } => {
            let s = ExperimentSpec { config: g.scenario()?, num_drops: drops, seed, ..ExperimentSpec::new(ExperimentId::Cdf) };
            return experiment(g, s);
        }
        Cmd::ValidateLink { drops, draws, antennas } => {
            let mut link = LinkDrawConfig::default();
            if let Some(d) = draws {
                link.draws = d;
            }
            if let Some(n) = antennas {
                link.n_rx = n;
                link.m_bs = n;
            }
            let s = ExperimentSpec { config: g.scenario()?, num_drops: drops, seed, link, ..ExperimentSpec::new(ExperimentId::LinkValidation) };
            return experiment(g, s);
        }
        Cmd::Schedule { reports, scheme, carrier_hz } => {
            let cfg = g.scenario()?;
            let parsed = if reports.as_os_str() == "-" {
                parse_reports(std::io::stdin().lock())?
            } else {
                let f = std::fs::File::open(&reports).with_context(|| format!("opening {}", reports.display()))?;
                parse_reports(BufReader::new(f))?
            };
            let mut sc = SchedulerConfig::default();
            if let Some(f) = carrier_hz {
                sc.carrier_hz = f;
            }
            let planner = ModelPlanner { omega: g.store().get(&cfg)?, scenario: cfg, kind: scheme.into() };
            let rows = Scheduler::new(sc, planner)?.run(&parsed)?;
            std::fs::create_dir_all(&g.out)?;
            let p = g.out.join("schedule_trace.csv");
            write_trace_csv(&rows, std::fs::File::create(&p)?)?;
            write_trace_csv(&rows, std::io::stdout().lock())?;
            info!("wrote {}", p.display());
        }
        Cmd::Validate { suites, omega, quick } => {
            let cfg = g.scenario()?;
            let table: Option<OmegaTable> = match &omega {
                Some(p) => Some(OmegaTable::from_json_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?),
                None => None,
            };
            let mut opts = ValidateOptions { seed, ..Default::default() };
            if !suites.is_empty() {
                opts.suites = suites.into_iter().map(Into::into).collect();
            }
            if quick {
                opts.omega_samples = 1_000_000;
                opts.gp_drops = 10;
                opts.link_drops = 4;
                opts.jensen_drops = 10;
                opts.hardening_draws = 5_000;
            }
            let report = validate(&cfg, table.as_ref(), &opts);
            for s in &report.suites {
                println!("[{}] {:?} ({:.1} s)", if s.passed { "PASS" } else { "FAIL" }, s.suite, s.runtime_s);
                for c in &s.checks {
                    let op = match c.bound {
                        urllc::harness::validate::Bound::AtMost => "<=",
                        urllc::harness::validate::Bound::AtLeast => ">=",
                    };
                    println!("  [{}] {}: {:.3e} {op} {:.3e}  {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.measured, c.tolerance, c.detail);
                }
            }
            println!("total {:.1} s", report.runtime_s);
            g.write("validation.json", &serde_json::to_string_pretty(&report)?)?;
            if !report.passed {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses `args` and runs the command: 0 on success, 1 on usage or
/// runtime errors, 2 when validation finds a failing check.
fn exit_code<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    exit_code(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global(args: &[&str]) -> Global {
        let mut v = vec!["urllc"];
        v.extend_from_slice(args);
        v.push("frame");
        Cli::try_parse_from(v).unwrap().global
    }

    fn path(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("cfg.json");
        std::fs::write(&f, r#"{"num_cues": 10, "reliability": 1e-6}"#).unwrap();
        assert_eq!(global(&[]).scenario().unwrap().num_cues, 4);
        let from_file = global(&["--config", path(&f)]).scenario().unwrap();
        assert_eq!((from_file.num_cues, from_file.reliability), (10, 1e-6));
        let flagged = global(&["--config", path(&f), "--num-cues", "20", "--density", "0.005"]).scenario().unwrap();
        assert_eq!((flagged.num_cues, flagged.reliability, flagged.avg_density), (20, 1e-6, [0.005; 4]));
    }

    #[test]
    fn usage_and_config_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = path(dir.path());
        assert_eq!(exit_code(["urllc", "no-such-command"]), ExitCode::from(1));
        assert_eq!(exit_code(["urllc", "--out", out, "--config", "/nonexistent.json", "frame"]), ExitCode::from(1));
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"num_cues": 4, "typo": 1}"#).unwrap();
        assert_eq!(exit_code(["urllc", "--out", out, "--config", path(&bad), "frame"]), ExitCode::from(1));
        assert_eq!(exit_code(["urllc", "--out", out, "--reliability", "2", "frame"]), ExitCode::from(1));
        assert_eq!(exit_code(["urllc", "--help"]), ExitCode::SUCCESS);
    }

    #[test]
    fn frame_writes_both_designs() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(exit_code(["urllc", "--out", path(dir.path()), "frame"]), ExitCode::SUCCESS);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("frame.json")).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
    }

    #[test]
    fn corrupt_omega_fails_validation_with_code_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = urllc::pathloss::omega_quadrature(&ScenarioConfig::default()).unwrap().table;
        *table.get_mut(OmegaEntry::V2vN1) *= 1.05;
        let f = dir.path().join("omega.json");
        std::fs::write(&f, serde_json::to_string(&table).unwrap()).unwrap();
        let out = path(dir.path());
        let args = ["urllc", "--out", out, "validate", "--suite", "omega", "--quick", "--omega", path(&f)];
        assert_eq!(exit_code(args), ExitCode::from(2));
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("validation.json")).unwrap()).unwrap();
        assert_eq!(report["passed"], false);
        assert_eq!(exit_code(["urllc", "--out", out, "validate", "--suite", "frame", "--suite", "derivatives"]), ExitCode::SUCCESS);
    }

    #[test]
    fn schedule_reads_a_report_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("reports.jsonl");
        std::fs::write(&f, "{\"time\": 0.0, \"density\": [0.0025, 0.0025, 0.0025, 0.0025]}\n\n{\"time\": 0.001, \"density\": [0.005, 0.005, 0.005, 0.005]}\n").unwrap();
        assert_eq!(exit_code(["urllc", "--out", path(dir.path()), "schedule", path(&f)]), ExitCode::SUCCESS);
        let trace = std::fs::read_to_string(dir.path().join("schedule_trace.csv")).unwrap();
        assert!(trace.starts_with("t,action,zeta,eta,t_c,t_ra"));
        assert_eq!(trace.matches("run_algorithm1").count(), 2);
        std::fs::write(&f, "{\"time\": 1.0, \"density\": [-1, 0, 0, 0]}\n").unwrap();
        assert_eq!(exit_code(["urllc", "--out", path(dir.path()), "schedule", path(&f)]), ExitCode::from(1));
    }

    #[test]
    fn sweep_spec_seed_flag_wins() {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("spec.json");
        std::fs::write(&spec, r#"{"experiment": "density_sweep", "seed": 3, "sweep": {"axis": "density", "values": [0.001, 0.002]}}"#).unwrap();
        assert_eq!(exit_code(["urllc", "--out", path(dir.path()), "--seed", "9", "sweep", path(&spec)]), ExitCode::SUCCESS);
        let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("density_sweep.summary.json")).unwrap()).unwrap();
        assert_eq!(s["seed"], 9);
    }
}
