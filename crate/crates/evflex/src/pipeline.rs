//! Run stages and their outputs.
//!
//! | mode       | stages                                   |
//! |------------|------------------------------------------|
//! | `base`     | base case                                |
//! | `flex`     | plan                                     |
//! | `validate` | plan (unless areas are given), validate  |
//! | `payment`  | plan (unless areas are given), payment   |
//! | `full`     | base case, plan, validate, payment, report |
//!
//! Everything is computed before the output directory is touched, so a
//! failed run leaves no partial results behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use evflex_core::conic::{ConicBackend, ExactnessReport};
use evflex_core::flexarea::mismatch_ecdf;
use evflex_core::netmodel::{ChargingPoolSpec, NetworkModel};
use evflex_core::scenario::ScenarioSet;
use evflex_core::sopf::{BuildOptions, ModelMode};
use evflex_core::validate::montecarlo::LIMIT_SLACK;
use evflex_core::validate::powerflow::{period_loads, power_flow_period, PowerFlowOptions};
use evflex_core::validate::{DistributionSummary, PaymentReport, ValidationReport};
use evflex_core::{
    build_sopf, check_exactness, extract_solution, flexibility_areas, generate_scenarios, solve_misocp, BetaSpec,
    FlexibilityArea, SolveReport, SopfSolution,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig, SolverBlock};
use crate::error::RunError;
use crate::io::{self, IoError};
use crate::montecarlo::{ecdf_points, validate_areas};
use crate::payment::settle_areas;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Inputs {
    pub net: NetworkModel,
    pub pools: Vec<ChargingPoolSpec>,
    network_sha256: String,
    pools_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String, RunError> {
    let bytes = fs::read(path).map_err(|source| RunError::Input(IoError::Read { path: path.into(), source }))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_inputs(config: &RunConfig) -> Result<Inputs, RunError> {
    let net = io::load_network(&config.paths.network).map_err(RunError::Input)?;
    let pools = io::load_pools(&config.paths.pools, &net).map_err(RunError::Input)?;
    Ok(Inputs {
        network_sha256: file_hash(&config.paths.network)?,
        pools_sha256: file_hash(&config.paths.pools)?,
        net,
        pools,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProgramSize {
    pub variables: usize,
    pub rows: usize,
    pub cones: usize,
    pub binaries: usize,
}

pub struct Solved {
    pub solution: SopfSolution,
    pub report: SolveReport,
    pub size: ProgramSize,
}

/// Builds and solves one case of the model.
pub fn solve_case<B: ConicBackend>(
    inputs: &Inputs,
    set: &ScenarioSet,
    mode: ModelMode,
    solver: &SolverBlock,
    backend: &B,
) -> Result<Solved, RunError> {
    let stage = match mode {
        ModelMode::Flex => "plan",
        ModelMode::Base => "base case",
    };
    let started = Instant::now();
    let build = BuildOptions { mode, ..solver.build_options() };
    let prog = build_sopf(&inputs.net, &inputs.pools, set, &build).map_err(|source| RunError::Build { stage, source })?;
    let size = ProgramSize {
        variables: prog.variables.len(),
        rows: prog.rows.len(),
        cones: prog.cones.len(),
        binaries: prog.binary_count(),
    };
    log::info!("{stage}: {} variables, {} rows, {} cones, {} binaries", size.variables, size.rows, size.cones, size.binaries);
    let (x, report) =
        solve_misocp(backend, &prog, &solver.solver_options()).map_err(|source| RunError::Solve { stage, source })?;
    for w in &report.warnings {
        log::warn!("{stage}: {w}");
    }
    let solution = extract_solution(&prog, &x, &report).map_err(|source| RunError::Extract { stage, source })?;
    log::info!("{stage}: {:?} objective {:.6} in {:.1} s", report.status, solution.objective, started.elapsed().as_secs_f64());
    Ok(Solved { solution, report, size })
}

pub struct Planned {
    pub solved: Solved,
    pub exactness: ExactnessReport,
    pub areas: Vec<FlexibilityArea>,
}

pub fn plan<B: ConicBackend>(
    inputs: &Inputs,
    set: &ScenarioSet,
    config: &RunConfig,
    backend: &B,
) -> Result<Planned, RunError> {
    let solved = solve_case(inputs, set, ModelMode::Flex, &config.solver, backend)?;
    let exactness = check_exactness(&solved.solution, config.solver.exactness_tol);
    if !exactness.is_exact() {
        log::warn!(
            "plan: relaxation not exact (max cone gap {:e}, {} binding upper voltages)",
            exactness.max_gap,
            exactness.binding_upper_voltage.len()
        );
    }
    let areas = flexibility_areas(&solved.solution, &config.beta)?;
    Ok(Planned { solved, exactness, areas })
}

/// Per-period operating point of a solved case, recomputed with the sweep
/// power flow from the pool draws of every scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub case: &'static str,
    pub period: usize,
    pub min_v_mean: f64,
    pub min_v_worst: f64,
    /// Current on the first branch leaving the substation, A.
    pub sub_current_mean_a: f64,
    pub sub_current_worst_a: f64,
    pub sub_current_cap_a: f64,
    pub max_loading_worst: f64,
    pub pool_kw_mean: f64,
    /// Scenarios whose sweep converged.
    pub converged: usize,
}

pub fn operating_trace(inputs: &Inputs, solution: &SopfSolution, case: &'static str) -> Vec<TraceRow> {
    let net = &inputs.net;
    let base = net.base();
    let nodes: Vec<usize> = inputs.pools.iter().map(|p| p.node).collect();
    let sub = net.branches().iter().position(|b| b.from == net.substation()).unwrap_or(0);
    let options = PowerFlowOptions::default();
    (0..net.periods())
        .map(|t| {
            let mut row = TraceRow {
                case,
                period: t,
                min_v_mean: 0.0,
                min_v_worst: f64::INFINITY,
                sub_current_mean_a: 0.0,
                sub_current_worst_a: 0.0,
                sub_current_cap_a: base.pu_to_amp(net.branches()[sub].current_cap),
                max_loading_worst: 0.0,
                pool_kw_mean: 0.0,
                converged: 0,
            };
            for w in 0..solution.scenarios {
                let pi = solution.probabilities[w];
                let kw: Vec<f64> = (0..nodes.len()).map(|s| solution.pool_draw_kw(s, t, w)).collect();
                row.pool_kw_mean += pi * kw.iter().sum::<f64>();
                let (p, q) = period_loads(net, &nodes, &kw, t);
                let Ok(st) = power_flow_period(net, &p, &q, &options) else { continue };
                let v = st.min_voltage();
                let amp = base.pu_to_amp(st.i_sq[sub].max(0.0).sqrt());
                row.converged += 1;
                row.min_v_mean += pi * v;
                row.min_v_worst = row.min_v_worst.min(v);
                row.sub_current_mean_a += pi * amp;
                row.sub_current_worst_a = row.sub_current_worst_a.max(amp);
                row.max_loading_worst = row.max_loading_worst.max(st.max_loading(net));
            }
            row
        })
        .collect()
}

pub struct PaymentRun {
    pub beta: Option<f64>,
    pub report: PaymentReport,
}

/// Everything a run produced, before it is written.
#[derive(Default)]
pub struct RunResults {
    pub scenarios: Option<ScenarioSet>,
    pub base: Option<Solved>,
    pub plan: Option<Planned>,
    pub areas: Vec<FlexibilityArea>,
    pub traces: Vec<TraceRow>,
    pub validation: Option<ValidationReport>,
    pub payments: Vec<PaymentRun>,
}

fn uniform_beta(beta: &BetaSpec) -> Option<f64> {
    match beta {
        BetaSpec::Scalar(b) => Some(*b),
        BetaSpec::Table(_) => None,
    }
}

/// Runs the stages selected by `config.mode` without writing anything.
pub fn execute<B: ConicBackend + Sync>(config: &RunConfig, inputs: &Inputs, backend: &B) -> Result<RunResults, RunError> {
    let net = &inputs.net;
    let pools = &inputs.pools;
    config.beta.validate(pools.len(), net.periods())?;
    let mode = config.mode;
    let given_areas = match (&config.paths.areas, mode) {
        (Some(path), Mode::Validate | Mode::Payment) => Some(io::read_areas_csv(path, pools).map_err(RunError::Input)?),
        _ => None,
    };
    if given_areas.is_some() && config.payment.betas.is_some() && mode == Mode::Payment {
        return Err(crate::config::ConfigError::Invalid("payment.betas needs a planning run, not an areas file".into()).into());
    }
    let needs_plan = matches!(mode, Mode::Flex | Mode::Full) || given_areas.is_none() && mode != Mode::Base;
    let needs_base = matches!(mode, Mode::Base | Mode::Full);

    let mut out = RunResults::default();
    if needs_plan || needs_base {
        out.scenarios =
            Some(generate_scenarios(pools, config.scenarios.count, config.scenarios.seed, net.periods(), net.delta_t())?);
    }
    if needs_base {
        let solved = solve_case(inputs, out.scenarios.as_ref().unwrap(), ModelMode::Base, &config.solver, backend)?;
        out.traces.extend(operating_trace(inputs, &solved.solution, "base"));
        out.base = Some(solved);
    }
    if needs_plan {
        let planned = plan(inputs, out.scenarios.as_ref().unwrap(), config, backend)?;
        out.traces.extend(operating_trace(inputs, &planned.solved.solution, "flex"));
        out.areas = planned.areas.clone();
        out.plan = Some(planned);
    } else if let Some(areas) = given_areas {
        out.areas = areas;
    }

    if matches!(mode, Mode::Validate | Mode::Full) {
        let started = Instant::now();
        let report = validate_areas(net, pools, &out.areas, config.validation.sims, config.validation.seed)?;
        log::info!(
            "validation: {} sims, violation frequency {:.4} in {:.1} s",
            report.sims,
            report.violation_freq,
            started.elapsed().as_secs_f64()
        );
        out.validation = Some(report);
    }

    if matches!(mode, Mode::Payment | Mode::Full) {
        let started = Instant::now();
        let set = generate_scenarios(pools, config.payment.scenarios, config.payment.seed, net.periods(), net.delta_t())?;
        let build = config.solver.build_options();
        let solver = config.solver.solver_options();
        let levels: Vec<(Option<f64>, Vec<FlexibilityArea>)> = match (&config.payment.betas, &out.plan) {
            (Some(betas), Some(planned)) => betas
                .iter()
                .map(|&b| Ok((Some(b), flexibility_areas(&planned.solved.solution, &BetaSpec::Scalar(b))?)))
                .collect::<Result<_, RunError>>()?,
            _ => vec![(uniform_beta(&config.beta).filter(|_| out.plan.is_some()), out.areas.clone())],
        };
        for (beta, areas) in levels {
            let report = settle_areas(net, pools, &areas, &set, &build, &solver, backend)?;
            log::info!("payment: beta {beta:?} median {:.3}", report.total.median);
            out.payments.push(PaymentRun { beta, report });
        }
        log::info!("payment: {:.1} s", started.elapsed().as_secs_f64());
    }
    Ok(out)
}

/// Output directory that remembers what was written.
struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.path(name);
        io::write_json(&path, value).map_err(RunError::Output)
    }

    fn table<R: Serialize>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<(), RunError> {
        let path = self.path(name);
        io::write_table(&path, header, rows).map_err(RunError::Output)
    }
}

#[derive(Serialize)]
struct AreaRecord<'a> {
    pool: &'a str,
    period: usize,
    lower_kw: f64,
    upper_kw: f64,
    beta: f64,
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    case: &'static str,
    program: ProgramSize,
    objective: f64,
    expected_flex_cost: f64,
    max_energy_residual: f64,
    max_cone_gap: f64,
    report: &'a SolveReport,
}

impl<'a> SolveSummary<'a> {
    fn of(case: &'static str, s: &'a Solved) -> Self {
        Self {
            case,
            program: s.size,
            objective: s.solution.objective,
            expected_flex_cost: s.solution.expected_flex_cost(),
            max_energy_residual: s.solution.max_energy_residual(),
            max_cone_gap: s.solution.max_cone_gap(),
            report: &s.report,
        }
    }
}

#[derive(Serialize)]
struct PaymentRecord<'a> {
    beta: Option<f64>,
    scenarios: usize,
    total: &'a DistributionSummary,
    pools: Vec<(&'a str, &'a DistributionSummary)>,
}

#[derive(Serialize)]
struct ManifestFile {
    file: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct ManifestInput {
    role: &'static str,
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    scenarios: u64,
    validation: u64,
    payment: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    tool: &'static str,
    tool_version: &'static str,
    mode: Mode,
    seeds: Seeds,
    config: &'a RunConfig,
    inputs: Vec<ManifestInput>,
    outputs: Vec<ManifestFile>,
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Configuration as recorded in the manifest: paths reduced to file names
/// so that the manifest does not depend on where the run happened.
fn portable(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    c.paths.network = file_name(&c.paths.network).into();
    c.paths.pools = file_name(&c.paths.pools).into();
    c.paths.out = ".".into();
    c.paths.areas = c.paths.areas.as_deref().map(|a| file_name(a).into());
    c
}

fn summary_json(inputs: &Inputs, config: &RunConfig, r: &RunResults) -> serde_json::Value {
    use serde_json::json;
    let trace = |case: &'static str| r.traces.iter().filter(move |row| row.case == case);
    let periods_where = |case: &'static str, f: &dyn Fn(&TraceRow) -> bool| trace(case).filter(|row| f(row)).map(|row| row.period).collect::<Vec<_>>();
    let v_min = inputs.net.v_min();
    let case_summary = |case: &'static str, solved: &Solved| {
        json!({
            "objective": solved.solution.objective,
            "expected_flex_cost": solved.solution.expected_flex_cost(),
            "status": solved.report.status,
            "min_voltage": trace(case).map(|row| row.min_v_worst).fold(f64::INFINITY, f64::min),
            "max_substation_current_a": trace(case).map(|row| row.sub_current_worst_a).fold(0.0, f64::max),
            "max_loading": trace(case).map(|row| row.max_loading_worst).fold(0.0, f64::max),
            "undervoltage_periods": periods_where(case, &|row| row.min_v_worst < v_min - LIMIT_SLACK),
            "overcurrent_periods": periods_where(case, &|row| row.sub_current_worst_a > row.sub_current_cap_a * (1.0 + LIMIT_SLACK)),
        })
    };
    json!({
        "network": inputs.net.name(),
        "pools": inputs.pools.iter().map(|p| p.pool_id.as_str()).collect::<Vec<_>>(),
        "scenarios": config.scenarios.count,
        "beta": config.beta,
        "base": r.base.as_ref().map(|s| case_summary("base", s)),
        "flex": r.plan.as_ref().map(|p| {
            let mut v = case_summary("flex", &p.solved);
            v["max_cone_gap"] = json!(p.exactness.max_gap);
            v["exact"] = json!(p.exactness.is_exact());
            v
        }),
        "validation": r.validation.as_ref().map(|v| json!({
            "sims": v.sims,
            "failed_sims": v.failed_sims,
            "violation_freq": v.violation_freq,
            "voltage_violation_freq": v.voltage_violation_freq,
            "current_violation_freq": v.current_violation_freq,
        })),
        "payment": r.payments.iter().map(|p| json!({
            "beta": p.beta,
            "median": p.report.total.median,
            "iqr": [p.report.total.q1, p.report.total.q3],
            "interval_90": [p.report.total.p05, p.report.total.p95],
        })).collect::<Vec<_>>(),
    })
}

/// Writes the results of a run and its manifest. Returns the written file
/// names, manifest last.
pub fn write_outputs(config: &RunConfig, inputs: &Inputs, r: &RunResults) -> Result<Vec<String>, RunError> {
    let dir = config.paths.out.clone();
    fs::create_dir_all(&dir).map_err(|source| RunError::Output(IoError::Write { path: dir.clone(), source }))?;
    let mut w = Writer { dir, files: Vec::new() };
    let pools = &inputs.pools;

    if let Some(set) = &r.scenarios {
        let path = w.path("scenarios.csv");
        io::write_scenarios_csv(&path, set).map_err(RunError::Output)?;
    }
    if let Some(base) = &r.base {
        w.json("base_solve.json", &SolveSummary::of("base", base))?;
    }
    if !r.traces.is_empty() {
        w.table(
            "traces.csv",
            &[
                "case",
                "period",
                "min_v_mean",
                "min_v_worst",
                "sub_current_mean_a",
                "sub_current_worst_a",
                "sub_current_cap_a",
                "max_loading_worst",
                "pool_kw_mean",
                "converged",
            ],
            &r.traces,
        )?;
    }
    if let Some(p) = &r.plan {
        let sol = &p.solved.solution;
        w.json("solve_report.json", &SolveSummary::of("flex", &p.solved))?;
        w.json("exactness.json", &p.exactness)?;
        let mut rows = Vec::new();
        for (s, pool) in pools.iter().enumerate() {
            for t in 0..sol.periods {
                let m = &sol.mismatch_kw[s][t];
                let mean: f64 = m.iter().zip(&sol.probabilities).map(|(v, pi)| v * pi).sum();
                let max = m.iter().copied().fold(0.0, f64::max);
                rows.push((pool.pool_id.as_str(), t, sol.reserve_kw[s][t], mean, max));
            }
        }
        w.table("reserve.csv", &["pool", "period", "reserve_kw", "mismatch_mean_kw", "mismatch_max_kw"], rows)?;
        let mut ecdf_rows = Vec::new();
        for (s, pool) in pools.iter().enumerate() {
            for t in 0..sol.periods {
                let f = mismatch_ecdf(sol, s, t)?;
                for (v, c) in f.values.iter().zip(&f.cumulative) {
                    ecdf_rows.push((pool.pool_id.as_str(), t, *v, *c));
                }
            }
        }
        w.table("ecdf.csv", &["pool", "period", "value_kw", "cumulative"], ecdf_rows)?;
    }
    if r.plan.is_some() {
        let path = w.path("areas.csv");
        io::write_areas_csv(&path, &r.areas, pools).map_err(RunError::Output)?;
        let records: Vec<AreaRecord> = r
            .areas
            .iter()
            .map(|a| AreaRecord {
                pool: &pools[a.pool].pool_id,
                period: a.period,
                lower_kw: a.lower_kw,
                upper_kw: a.upper_kw,
                beta: a.beta,
            })
            .collect();
        w.json("areas.json", &records)?;
    }
    if let Some(v) = &r.validation {
        w.json("validation.json", v)?;
        let rows = v.periods.iter().map(|p| {
            (
                p.period,
                p.min_v.mean,
                p.min_v.min,
                p.max_i.mean,
                p.max_i.max,
                p.max_loading.mean,
                p.max_loading.max,
                p.voltage_violation_freq,
                p.current_violation_freq,
            )
        });
        w.table(
            "validation_periods.csv",
            &[
                "period",
                "min_v_mean",
                "min_v_min",
                "max_i_mean_pu",
                "max_i_max_pu",
                "max_loading_mean",
                "max_loading_max",
                "voltage_violation_freq",
                "current_violation_freq",
            ],
            rows,
        )?;
        let ok = || v.outcomes.iter().filter(|o| o.converged);
        let min_v = ecdf_points(ok().map(|o| o.min_v.iter().copied().fold(f64::INFINITY, f64::min)));
        let loading = ecdf_points(ok().map(|o| o.max_loading.iter().copied().fold(0.0, f64::max)));
        let rows = min_v.iter().map(|&(x, c)| ("min_v", x, c)).chain(loading.iter().map(|&(x, c)| ("max_loading", x, c)));
        w.table("validation_ecdf.csv", &["metric", "value", "cumulative"], rows)?;
    }
    if !r.payments.is_empty() {
        let records: Vec<PaymentRecord> = r
            .payments
            .iter()
            .map(|p| PaymentRecord {
                beta: p.beta,
                scenarios: p.report.scenarios.len(),
                total: &p.report.total,
                pools: pools.iter().map(|s| s.pool_id.as_str()).zip(&p.report.pools).collect(),
            })
            .collect();
        w.json("payment.json", &records)?;
        let rows = r.payments.iter().flat_map(|p| {
            p.report.scenarios.iter().enumerate().map(move |(k, s)| (p.beta, k, s.revenue, s.cost, s.total))
        });
        w.table("payment.csv", &["beta", "scenario", "revenue", "cost", "total"], rows)?;
    }
    if config.mode == Mode::Full {
        w.json("report.json", &summary_json(inputs, config, r))?;
    }

    let mut outputs = Vec::new();
    for name in &w.files {
        let path = w.dir.join(name);
        let bytes = fs::read(&path).map_err(|source| RunError::Output(IoError::Read { path: path.clone(), source }))?;
        outputs.push(ManifestFile { file: name.clone(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
    }
    outputs.sort_by(|a, b| a.file.cmp(&b.file));
    let mut inputs_list = vec![
        ManifestInput { role: "network", file: file_name(&config.paths.network), sha256: inputs.network_sha256.clone() },
        ManifestInput { role: "pools", file: file_name(&config.paths.pools), sha256: inputs.pools_sha256.clone() },
    ];
    if let Some(a) = config.paths.areas.as_deref().filter(|_| r.plan.is_none()) {
        inputs_list.push(ManifestInput { role: "areas", file: file_name(a), sha256: file_hash(a)? });
    }
    let manifest = Manifest {
        format: "evflex-manifest",
        version: 1,
        tool: env!("CARGO_PKG_NAME"),
        tool_version: TOOL_VERSION,
        mode: config.mode,
        seeds: Seeds { scenarios: config.scenarios.seed, validation: config.validation.seed, payment: config.payment.seed },
        config: &portable(config),
        inputs: inputs_list,
        outputs,
    };
    w.json("manifest.json", &manifest)?;
    Ok(w.files)
}

/// Validates the configuration, runs it and writes the outputs.
pub fn run<B: ConicBackend + Sync>(config: &RunConfig, backend: &B) -> Result<Vec<String>, RunError> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let results = execute(config, &inputs, backend)?;
    write_outputs(config, &inputs, &results)
}
