//! The five batch commands. Each validates its config completely, then
//! computes, then writes its artifacts, so a rejected config leaves nothing
//! behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mlfe_core::cayley::{self, CayleySolution, StationarityReport};
use mlfe_core::chain::{self, ChainReport, TransferOperator};
use mlfe_core::flow::{self, FlowConfig, FlowState, StepDiagnostics};
use mlfe_core::functionals::{self, FunctionalReport};
use mlfe_core::particles::{self, Moments, ParticleEnsemble};
use mlfe_core::{Axis, JointDensity, PotentialPair, RootDensity};
use serde_json::json;

use crate::config::{InitConfig, RunConfig};
use crate::io::{self, event, Csv};
use crate::svg::{self, Panel, Series, PALETTE};
use crate::{CliError, CliResult};

pub const FLOW_HEADER: [&str; 6] = ["t", "h_kappa", "i_kappa", "h_hat2", "mass", "second_moment"];
pub const PARTICLES_HEADER: [&str; 6] = ["t", "mean0", "var0", "cov01", "se_var0", "se_cov01"];
pub const CHAIN_HEADER: [&str; 5] = ["n", "log_z", "per_site_log_z", "lift_entropy", "lift_entropy_per_site"];

/// Window in which the mixture comparison looks for increases of `Ĥ₂`.
pub const CONTRAST_WINDOW: (f64, f64) = (0.05, 1.0);

/// Worst conservation and symmetry numbers seen over a flow run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conservation {
    pub steps: usize,
    pub max_raw_mass_defect: f64,
    pub min_value: f64,
    pub max_leaf_exchange_defect: f64,
    pub max_edge_symmetry_defect: f64,
}

impl Default for Conservation {
    fn default() -> Self {
        Self {
            steps: 0,
            max_raw_mass_defect: 0.0,
            min_value: f64::INFINITY,
            max_leaf_exchange_defect: 0.0,
            max_edge_symmetry_defect: 0.0,
        }
    }
}

impl Conservation {
    pub fn record(&mut self, d: &StepDiagnostics) {
        self.steps += 1;
        self.max_raw_mass_defect = self.max_raw_mass_defect.max(d.raw_mass_defect);
        self.min_value = self.min_value.min(d.min_value);
        self.max_leaf_exchange_defect = self.max_leaf_exchange_defect.max(d.leaf_exchange_defect);
        self.max_edge_symmetry_defect = self.max_edge_symmetry_defect.max(d.edge_symmetry_defect);
    }

    fn to_json(self) -> serde_json::Value {
        json!({
            "steps": self.steps,
            "max_raw_mass_defect": self.max_raw_mass_defect,
            "min_value": self.min_value,
            "max_leaf_exchange_defect": self.max_leaf_exchange_defect,
            "max_edge_symmetry_defect": self.max_edge_symmetry_defect,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub ledger: Vec<FunctionalReport>,
    pub conservation: Conservation,
    pub final_state: FlowState,
}

#[derive(Debug, Clone)]
pub struct CompareMrf {
    pub flow: FlowRun,
    /// Largest step-to-step increase of `H_κ` over the whole run.
    pub h_kappa_max_increase: f64,
    /// Largest increase of `Ĥ₂` between rows inside [`CONTRAST_WINDOW`].
    pub h_hat2_max_increase: f64,
}

#[derive(Debug, Clone)]
pub struct CayleyRun {
    pub solution: CayleySolution,
    pub stationarity: StationarityReport,
    pub i_kappa_joint: f64,
    pub variance: f64,
    pub oracle_variance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub rows: Vec<ChainReport>,
    pub h_star: f64,
    pub lambda_max: f64,
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn gaussian_root(axis: Axis, mean: f64, var: f64) -> CliResult<RootDensity> {
    Ok(RootDensity::from_fn(axis, |x| (-(x - mean) * (x - mean) / (2.0 * var)).exp())?)
}

/// Stationary law from the Picard solver, started at the uniform density.
fn solve_stationary(cfg: &RunConfig, pair: &PotentialPair, axis: Axis) -> CliResult<CayleySolution> {
    let start = Instant::now();
    let sol = cayley::solve_fixed_point(pair, &RootDensity::uniform(axis), &cfg.cayley_config()?)?;
    event("cayley_solved", json!({"iterations": sol.iterations, "residual_linf": sol.residual_linf, "ms": elapsed_ms(start)}));
    Ok(sol)
}

/// Checks that an init can be built, reading any density file it names.
/// Returns the loaded density so it is not read twice.
fn prepare_init(cfg: &RunConfig, axis: Axis) -> CliResult<Option<JointDensity>> {
    match cfg.init()? {
        InitConfig::Cayley { path: Some(p) } => {
            let d = io::read_joint(p)?;
            if d.kappa() != cfg.kappa || d.axis() != &axis {
                return Err(CliError::validation(format!("{}: grid or kappa differs from the config", p.display())));
            }
            Ok(Some(d))
        }
        _ => Ok(None),
    }
}

fn initial_joint(cfg: &RunConfig, pair: &PotentialPair, axis: Axis, loaded: Option<JointDensity>) -> CliResult<JointDensity> {
    if let Some(d) = loaded {
        return Ok(d);
    }
    Ok(match *cfg.init()? {
        InitConfig::GaussianProduct { mean, var } => JointDensity::gaussian_product(axis, cfg.kappa, mean, var)?,
        InitConfig::GaussianMixture { m, var } => JointDensity::gaussian_mixture(axis, cfg.kappa, m, var)?,
        InitConfig::Cayley { .. } => solve_stationary(cfg, pair, axis)?.joint,
    })
}

fn ledger_csv(ledger: &[FunctionalReport]) -> Csv {
    let mut csv = Csv::new(&FLOW_HEADER);
    for r in ledger {
        csv.floats(&[r.t, r.h_kappa, r.i_kappa, r.h_hat2.unwrap_or(f64::NAN), r.mass, r.second_moment]);
    }
    csv
}

fn write_svg(path: &Path, panels: &[Panel]) -> CliResult<()> {
    io::write_atomic(path, svg::render(panels).as_bytes())
}

fn functional_panels(ledger: &[FunctionalReport]) -> Vec<Panel> {
    let h: Vec<_> = ledger.iter().map(|r| (r.t, r.h_kappa)).collect();
    let hh: Vec<_> = ledger.iter().filter_map(|r| r.h_hat2.map(|v| (r.t, v))).collect();
    vec![
        Panel::new("sparse free energy", "t", "H_kappa").with(Series::new("H_kappa", h, PALETTE[0])),
        Panel::new("edge free energy", "t", "H_hat2").with(Series::new("H_hat2", hh, PALETTE[1])),
    ]
}

/// Validated inputs of a flow run.
struct FlowPlan {
    pair: PotentialPair,
    axis: Axis,
    cfg: FlowConfig,
    snapshot_every: Option<usize>,
    loaded: Option<JointDensity>,
}

fn plan_flow(cfg: &RunConfig) -> CliResult<FlowPlan> {
    let pair = cfg.pair()?;
    let axis = cfg.axis()?;
    let flow_cfg = cfg.flow_config()?;
    let loaded = prepare_init(cfg, axis)?;
    Ok(FlowPlan { pair, axis, cfg: flow_cfg, snapshot_every: cfg.flow_section()?.snapshot_every, loaded })
}

fn run_flow(cfg: &RunConfig, plan: FlowPlan, out: &Path) -> CliResult<FlowRun> {
    let init = initial_joint(cfg, &plan.pair, plan.axis, plan.loaded)?;
    io::create_dir(out)?;
    let steps = plan.cfg.steps();
    let report_every = (steps / 10).max(1);
    let start = Instant::now();
    event("flow_start", json!({"steps": steps, "points": plan.axis.points(), "kappa": cfg.kappa}));
    let mut conservation = Conservation::default();
    let mut snapshot_error = None;
    let state = flow::run_with(&plan.pair, init, &plan.cfg, |s, d| {
        conservation.record(d);
        if d.step % report_every == 0 {
            event("flow_progress", json!({"step": d.step, "t": s.t, "ms": elapsed_ms(start)}));
        }
        if plan.snapshot_every.is_some_and(|k| d.step % k == 0) && snapshot_error.is_none() {
            let path = out.join(format!("density_{:06}.bin", d.step));
            snapshot_error = io::write_joint(&path, &s.density).err();
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    ledger_csv(&state.ledger).write(&out.join("flow_timeseries.csv"))?;
    io::write_joint(&out.join("density_final.bin"), &state.density)?;
    io::write_json(&out.join("diagnostics.json"), &conservation.to_json())?;
    write_svg(&out.join("flow.svg"), &functional_panels(&state.ledger))?;
    event("flow_done", json!({"ms": elapsed_ms(start), "rows": state.ledger.len()}));
    Ok(FlowRun { ledger: state.ledger.clone(), conservation, final_state: state })
}

pub fn flow(cfg: &RunConfig, out: &Path) -> CliResult<FlowRun> {
    let plan = plan_flow(cfg)?;
    run_flow(cfg, plan, out)
}

/// Largest increase between consecutive rows of a series.
pub fn max_increase(series: &[(f64, f64)]) -> f64 {
    series.windows(2).map(|w| w[1].1 - w[0].1).fold(0.0, f64::max)
}

pub fn compare_mrf(cfg: &RunConfig, out: &Path) -> CliResult<CompareMrf> {
    if cfg.kappa != 2 {
        return Err(CliError::validation("compare-mrf needs kappa = 2"));
    }
    if !matches!(cfg.init()?, InitConfig::GaussianMixture { .. }) {
        return Err(CliError::validation("compare-mrf needs a gaussian_mixture init"));
    }
    let plan = plan_flow(cfg)?;
    let run = run_flow(cfg, plan, out)?;
    let h: Vec<_> = run.ledger.iter().map(|r| (r.t, r.h_kappa)).collect();
    let (lo, hi) = CONTRAST_WINDOW;
    let hh: Vec<_> = run
        .ledger
        .iter()
        .filter(|r| r.t > lo - 1e-12 && r.t < hi + 1e-12)
        .filter_map(|r| r.h_hat2.map(|v| (r.t, v)))
        .collect();
    let result = CompareMrf { h_kappa_max_increase: max_increase(&h), h_hat2_max_increase: max_increase(&hh), flow: run };
    let h0 = result.flow.ledger.first().map_or(0.0, |r| r.h_kappa);
    io::write_json(
        &out.join("compare_mrf.json"),
        &json!({
            "h_kappa_initial": h0,
            "h_kappa_max_increase": result.h_kappa_max_increase,
            "h_hat2_max_increase": result.h_hat2_max_increase,
            "h_hat2_window": [lo, hi],
        }),
    )?;
    let mut panels = functional_panels(&result.flow.ledger);
    panels[0].title = format!("H_kappa, max increase {:.1e}", result.h_kappa_max_increase);
    panels[1].title = format!("H_hat2, max increase {:.1e}", result.h_hat2_max_increase);
    write_svg(&out.join("compare_mrf.svg"), &panels)?;
    Ok(result)
}

pub fn cayley(cfg: &RunConfig, out: &Path) -> CliResult<CayleyRun> {
    let pair = cfg.pair()?;
    let axis = cfg.axis()?;
    let solver = cfg.cayley_config()?;
    let init = match cfg.init {
        None | Some(InitConfig::Cayley { path: None }) => RootDensity::uniform(axis),
        Some(InitConfig::GaussianProduct { mean, var }) => gaussian_root(axis, mean, var)?,
        Some(_) => return Err(CliError::validation("cayley starts from uniform or a gaussian_product init")),
    };
    let start = Instant::now();
    let solution = cayley::solve_fixed_point(&pair, &init, &solver)?;
    let stationarity = cayley::stationarity_residuals(&pair, &solution)?;
    let i_kappa_joint = functionals::i_kappa(&pair, &solution.joint)?;
    let variance = solution.nu0.variance();
    let oracle_variance = cayley::gaussian_oracle_variance(&pair).ok();
    event("cayley_done", json!({"iterations": solution.iterations, "ms": elapsed_ms(start)}));

    io::create_dir(out)?;
    let mut csv = Csv::new(&["x", "nu0"]);
    for (x, v) in axis.nodes().into_iter().zip(solution.nu0.values()) {
        csv.floats(&[x, *v]);
    }
    csv.write(&out.join("nu0.csv"))?;
    io::write_json(
        &out.join("residuals.json"),
        &json!({
            "iterations": solution.iterations,
            "residual_linf": solution.residual_linf,
            "gradient_identity": stationarity.gradient_identity,
            "i_kappa": stationarity.i_kappa,
            "conditional_drift": stationarity.conditional_drift,
            "i_kappa_joint": i_kappa_joint,
            "variance": variance,
            "oracle_variance": oracle_variance,
        }),
    )?;
    io::write_joint(&out.join("joint.bin"), &solution.joint)?;
    let pts: Vec<_> = axis.nodes().into_iter().zip(solution.nu0.values().iter().copied()).collect();
    write_svg(&out.join("nu0.svg"), &[Panel::new("stationary root marginal", "x", "nu0").with(Series::new("nu0", pts, PALETTE[0]))])?;
    Ok(CayleyRun { solution, stationarity, i_kappa_joint, variance, oracle_variance })
}

pub fn chain(cfg: &RunConfig, n_list: Option<Vec<usize>>, out: &Path) -> CliResult<ChainRun> {
    if cfg.kappa != 2 {
        return Err(CliError::validation("chain needs kappa = 2"));
    }
    let pair = cfg.pair()?;
    let axis = cfg.axis()?;
    let n_list = match n_list {
        Some(l) => l,
        None => cfg.n_list()?,
    };
    let loaded = match cfg.init {
        Some(_) => prepare_init(cfg, axis)?,
        None => None,
    };
    let density = match cfg.init {
        Some(_) => initial_joint(cfg, &pair, axis, loaded)?,
        None => solve_stationary(cfg, &pair, axis)?.joint,
    };
    let start = Instant::now();
    let op = TransferOperator::new(&pair, axis)?;
    let lambda_max = op.lambda_max()?;
    let h_star = op.h_star()?;
    let rows = chain::chain_report(&pair, &density, &n_list)?;
    let h2 = functionals::h_kappa(&pair, &density)?;
    event("chain_done", json!({"rows": rows.len(), "ms": elapsed_ms(start)}));

    io::create_dir(out)?;
    let mut csv = Csv::new(&CHAIN_HEADER);
    for r in &rows {
        let mut cells = vec![r.n.to_string()];
        cells.extend([r.log_z, r.per_site_log_z, r.lift_entropy, r.lift_entropy_per_site].map(io::fmt_f64));
        csv.row(&cells);
    }
    csv.write(&out.join("chain_report.csv"))?;
    io::write_json(&out.join("h_star.json"), &json!({"h_star": h_star, "lambda_max": lambda_max, "h2": h2}))?;
    let per_site: Vec<_> = rows.iter().map(|r| (r.n as f64, -r.per_site_log_z)).collect();
    let lift: Vec<_> = rows.iter().map(|r| (r.n as f64, r.lift_entropy_per_site)).collect();
    let limit: Vec<_> = rows.iter().map(|r| (r.n as f64, h2 - h_star)).collect();
    write_svg(
        &out.join("chain.svg"),
        &[
            Panel::new("free energy per site", "n", "-log Z / (2n+1)")
                .with(Series::new("per site", per_site, PALETTE[0]))
                .with(Series::new("h_star", rows.iter().map(|r| (r.n as f64, h_star)).collect(), PALETTE[1])),
            Panel::new("lift entropy per site", "n", "H / (2n+1)")
                .with(Series::new("lift", lift, PALETTE[0]))
                .with(Series::new("H2 - h_star", limit, PALETTE[1])),
        ],
    )?;
    Ok(ChainRun { rows, h_star, lambda_max })
}

pub fn particles(cfg: &RunConfig, out: &Path) -> CliResult<Vec<Moments>> {
    let pair = cfg.pair()?;
    let axis = cfg.axis()?;
    let (p, run) = cfg.particle_setup()?;
    let init = cfg.particle_init()?;
    let start = Instant::now();
    event("particles_start", json!({"n": p.n, "steps": run.steps(), "seed": p.seed}));
    let ensemble = ParticleEnsemble::sample(cfg.kappa, &axis, p.n, p.seed, init)?;
    let rows = particles::moment_series(&pair, ensemble, &run)?;
    event("particles_done", json!({"rows": rows.len(), "ms": elapsed_ms(start)}));

    io::create_dir(out)?;
    let mut csv = Csv::new(&PARTICLES_HEADER);
    for m in &rows {
        csv.floats(&[m.t, m.mean0, m.var0, m.cov01, m.se_var0, m.se_cov01]);
    }
    csv.write(&out.join("particles_timeseries.csv"))?;
    let var: Vec<_> = rows.iter().map(|m| (m.t, m.var0)).collect();
    let cov: Vec<_> = rows.iter().map(|m| (m.t, m.cov01)).collect();
    write_svg(
        &out.join("particles.svg"),
        &[
            Panel::new("root variance", "t", "var").with(Series::new("var0", var, PALETTE[0])),
            Panel::new("root-leaf covariance", "t", "cov").with(Series::new("cov01", cov, PALETTE[1])),
        ],
    )?;
    Ok(rows)
}

/// Which command to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Flow,
    Cayley,
    Chain,
    Particles,
    CompareMrf,
}

/// Loads the config and dispatches; used by the binary.
pub fn execute(command: Command, config: &Path, out: Option<&Path>, n_list: Option<&str>) -> CliResult<PathBuf> {
    let cfg = RunConfig::load(config)?;
    let n_list = n_list.map(crate::config::parse_n_list).transpose()?;
    let dir = io::out_dir(out, cfg.out_dir.as_deref());
    match command {
        Command::Flow => flow(&cfg, &dir).map(drop),
        Command::Cayley => cayley(&cfg, &dir).map(drop),
        Command::Chain => chain(&cfg, n_list, &dir).map(drop),
        Command::Particles => particles(&cfg, &dir).map(drop),
        Command::CompareMrf => compare_mrf(&cfg, &dir).map(drop),
    }?;
    Ok(dir)
}
