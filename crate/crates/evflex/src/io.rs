//! Input files and CSV exports.
//!
//! Network file (`evflex-network`, version 1):
//!
//! ```json
//! {
//!   "format": "evflex-network", "version": 1, "name": "feeder",
//!   "bases": { "s_base_kva": 1000, "v_base_kv": 11 },
//!   "limits": { "v_min": 0.95, "v_max": 1.05, "v_substation": 1.0 },
//!   "horizon": { "periods": 24, "delta_t_h": 1.0 },
//!   "units": { "impedance": "ohm", "current": "amp", "power": "kw" },
//!   "substation": "1",
//!   "nodes": ["1", "2"],
//!   "branches": [ { "from": "1", "to": "2", "r": 0.5, "x": 0.3, "i_max": 88 } ],
//!   "demand_profiles": { "2": { "p": [...], "q": [...] } }
//! }
//! ```
//!
//! Voltages are always pu. `i_max` may be omitted for an uncapped branch;
//! nodes absent from `demand_profiles` carry no load.
//!
//! Pools file (`evflex-pools`, version 1): a list of pools, each with a
//! node id, capacity and price (scalar or one value per period), a utility
//! `{alpha, h, b}` and its tasks. Task fields missing from a task are taken
//! from the file's `task_defaults`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use evflex_core::netmodel::{NetworkError, NetworkParts};
use evflex_core::scenario::ScenarioSet;
use evflex_core::utility::UtilityError;
use evflex_core::{Branch, ChargingPoolSpec, FlexibilityArea, NetworkModel, PerUnitBase, TaskSpec, UtilityFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), message: message.into() }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.into(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.into(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Write { path: path.into(), source })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpedanceUnit {
    Ohm,
    Pu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurrentUnit {
    Amp,
    Pu,
}

/// `kw` covers kvar for reactive demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerUnit {
    Kw,
    Pu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub impedance: ImpedanceUnit,
    pub current: CurrentUnit,
    pub power: PowerUnit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bases {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default = "one")]
    pub v_substation: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub periods: usize,
    #[serde(default = "one")]
    pub delta_t_h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub bases: Bases,
    pub limits: Limits,
    pub horizon: Horizon,
    pub units: Units,
    pub substation: String,
    pub nodes: Vec<String>,
    pub branches: Vec<BranchRecord>,
    pub demand_profiles: BTreeMap<String, DemandProfile>,
}

pub const NETWORK_FORMAT: &str = "evflex-network";
pub const POOLS_FORMAT: &str = "evflex-pools";

impl NetworkFile {
    pub fn into_model(self, path: &Path) -> Result<NetworkModel, IoError> {
        if self.format != NETWORK_FORMAT || self.version != 1 {
            return Err(invalid(path, format!("expected {NETWORK_FORMAT} version 1")));
        }
        let base = PerUnitBase::new(self.bases.s_base_kva * 1e3, self.bases.v_base_kv * 1e3)
            .map_err(|e| invalid(path, e.to_string()))?;
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let node = |id: &str| index.get(id).copied().ok_or_else(|| invalid(path, format!("unknown node {id:?}")));
        let z = |v: f64| match self.units.impedance {
            ImpedanceUnit::Ohm => base.ohm_to_pu(v),
            ImpedanceUnit::Pu => v,
        };
        let amp = |v: f64| match self.units.current {
            CurrentUnit::Amp => base.amp_to_pu(v),
            CurrentUnit::Pu => v,
        };
        let pw = |v: f64| match self.units.power {
            PowerUnit::Kw => base.kw_to_pu(v),
            PowerUnit::Pu => v,
        };
        let mut branches = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            branches.push(Branch {
                from: node(&b.from)?,
                to: node(&b.to)?,
                resistance: z(b.r),
                reactance: z(b.x),
                current_cap: b.i_max.map_or(f64::INFINITY, amp),
            });
        }
        let periods = self.horizon.periods;
        let mut demand_p = vec![vec![0.0; periods]; self.nodes.len()];
        let mut demand_q = vec![vec![0.0; periods]; self.nodes.len()];
        for (id, profile) in &self.demand_profiles {
            let i = node(id)?;
            if profile.p.len() != periods || profile.q.len() != periods {
                return Err(invalid(path, format!("demand profile of node {id:?} must have {periods} entries")));
            }
            demand_p[i] = profile.p.iter().map(|&v| pw(v)).collect();
            demand_q[i] = profile.q.iter().map(|&v| pw(v)).collect();
        }
        let parts = NetworkParts {
            name: self.name,
            substation: node(&self.substation)?,
            node_ids: self.nodes,
            branches,
            base_demand_p: demand_p,
            base_demand_q: demand_q,
            v_min: self.limits.v_min,
            v_max: self.limits.v_max,
            v_substation: self.limits.v_substation,
            base,
            periods,
            delta_t: self.horizon.delta_t_h,
        };
        NetworkModel::new(parts).map_err(|e: NetworkError| invalid(path, e.to_string()))
    }
}

pub fn load_network(path: &Path) -> Result<NetworkModel, IoError> {
    read_json::<NetworkFile>(path)?.into_model(path)
}

/// One value for every period or an explicit profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    PerPeriod(Vec<f64>),
}

impl Profile {
    fn expand(&self, periods: usize) -> Option<Vec<f64>> {
        match self {
            Profile::Constant(v) => Some(vec![*v; periods]),
            Profile::PerPeriod(v) if v.len() == periods => Some(v.clone()),
            Profile::PerPeriod(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDefaults {
    pub mean_arrival: Option<f64>,
    pub mean_duration_rate: Option<f64>,
    pub e_min_kwh: Option<f64>,
    pub e_max_kwh: Option<f64>,
    pub x_max_kw: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    #[serde(flatten)]
    pub fields: TaskDefaults,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityRecord {
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRecord {
    pub id: String,
    pub node: String,
    pub p_max_kw: Profile,
    pub energy_price: Profile,
    pub utility: UtilityRecord,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolsFile {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub task_defaults: TaskDefaults,
    pub pools: Vec<PoolRecord>,
}

impl PoolsFile {
    pub fn into_specs(self, net: &NetworkModel, path: &Path) -> Result<Vec<ChargingPoolSpec>, IoError> {
        if self.format != POOLS_FORMAT || self.version != 1 {
            return Err(invalid(path, format!("expected {POOLS_FORMAT} version 1")));
        }
        let periods = net.periods();
        let d = &self.task_defaults;
        let mut out = Vec::with_capacity(self.pools.len());
        for p in self.pools {
            let node = net.node_index(&p.node).ok_or_else(|| invalid(path, format!("pool {}: unknown node {:?}", p.id, p.node)))?;
            let shape = |name: &str| invalid(path, format!("pool {}: {name} must be a number or {periods} values", p.id));
            let p_max_kw = p.p_max_kw.expand(periods).ok_or_else(|| shape("p_max_kw"))?;
            let energy_price = p.energy_price.expand(periods).ok_or_else(|| shape("energy_price"))?;
            let utility = UtilityFunction::new(p.utility.alpha, p.utility.h, p.utility.b)
                .map_err(|e: UtilityError| invalid(path, format!("pool {}: utility: {e}", p.id)))?;
            let mut tasks = Vec::with_capacity(p.tasks.len());
            for t in p.tasks {
                let f = &t.fields;
                let pick = |own: Option<f64>, default: Option<f64>, name: &str| {
                    own.or(default).ok_or_else(|| invalid(path, format!("pool {} task {}: missing {name}", p.id, t.id)))
                };
                tasks.push(TaskSpec {
                    task_id: t.id.clone(),
                    mean_arrival: pick(f.mean_arrival, d.mean_arrival, "mean_arrival")?,
                    mean_duration_rate: pick(f.mean_duration_rate, d.mean_duration_rate, "mean_duration_rate")?,
                    e_min_kwh: pick(f.e_min_kwh, d.e_min_kwh, "e_min_kwh")?,
                    e_max_kwh: pick(f.e_max_kwh, d.e_max_kwh, "e_max_kwh")?,
                    x_max_kw: pick(f.x_max_kw, d.x_max_kw, "x_max_kw")?,
                });
            }
            let spec = ChargingPoolSpec { pool_id: p.id, node, p_max_kw, energy_price, utility, tasks };
            spec.validate(net).map_err(|e| invalid(path, e.to_string()))?;
            out.push(spec);
        }
        let mut ids: Vec<&str> = out.iter().map(|p| p.pool_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(path, format!("duplicate pool id {:?}", w[0])));
        }
        Ok(out)
    }
}

pub fn load_pools(path: &Path, net: &NetworkModel) -> Result<Vec<ChargingPoolSpec>, IoError> {
    read_json::<PoolsFile>(path)?.into_specs(net, path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    // Headers are written explicitly; struct rows must not add their own.
    Ok(csv::WriterBuilder::new().has_headers(false).from_path(path)?)
}

/// `scenario,pool,task,arrival,departure,energy_kwh`, scenario-major.
pub fn write_scenarios_csv(path: &Path, set: &ScenarioSet) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["scenario", "pool", "task", "arrival", "departure", "energy_kwh"])?;
    for s in 0..set.count {
        for (n, task) in set.tasks.iter().enumerate() {
            let r = &set.realizations[n][s];
            w.serialize((s, &task.pool_id, &task.task_id, r.arrival, r.departure, r.energy_kwh))?;
        }
    }
    w.flush().map_err(|source| IoError::Write { path: path.into(), source })
}

/// `pool,period,lower_kw,upper_kw,beta`
pub fn write_areas_csv(path: &Path, areas: &[FlexibilityArea], pools: &[ChargingPoolSpec]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["pool", "period", "lower_kw", "upper_kw", "beta"])?;
    for a in areas {
        w.serialize((&pools[a.pool].pool_id, a.period, a.lower_kw, a.upper_kw, a.beta))?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.into(), source })
}

/// Writes `header` then `rows`; every row must match the header width.
pub fn write_table<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| IoError::Write { path: path.into(), source })
}

#[derive(Debug, Deserialize)]
struct AreaRow {
    pool: String,
    period: usize,
    lower_kw: f64,
    upper_kw: f64,
    beta: f64,
}

/// Reads an areas CSV written by [`write_areas_csv`].
pub fn read_areas_csv(path: &Path, pools: &[ChargingPoolSpec]) -> Result<Vec<FlexibilityArea>, IoError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: AreaRow = row?;
        let pool = pools
            .iter()
            .position(|p| p.pool_id == row.pool)
            .ok_or_else(|| invalid(path, format!("unknown pool {:?}", row.pool)))?;
        out.push(FlexibilityArea { pool, period: row.period, beta: row.beta, lower_kw: row.lower_kw, upper_kw: row.upper_kw });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(units: &str, r: f64, i_max: f64, p: f64) -> String {
        format!(
            r#"{{"format":"evflex-network","version":1,"name":"t",
            "bases":{{"s_base_kva":1000,"v_base_kv":11}},
            "limits":{{"v_min":0.95,"v_max":1.05}},
            "horizon":{{"periods":2}},
            "units":{units},
            "substation":"a","nodes":["a","b"],
            "branches":[{{"from":"a","to":"b","r":{r},"x":{r},"i_max":{i_max}}}],
            "demand_profiles":{{"b":{{"p":[{p},{p}],"q":[0,0]}}}}}}"#
        )
    }

    fn parse(text: &str) -> Result<NetworkModel, IoError> {
        let file: NetworkFile = serde_json::from_str(text).unwrap();
        file.into_model(Path::new("mem"))
    }

    #[test]
    fn physical_units_convert_to_pu() {
        let net = parse(&two_bus(r#"{"impedance":"ohm","current":"amp","power":"kw"}"#, 12.1, 52.48638810814779, 100.0)).unwrap();
        let b = &net.branches()[0];
        assert!((b.resistance - 0.1).abs() < 1e-12);
        assert!((b.current_cap - 1.0).abs() < 1e-12);
        assert!((net.base_demand_p(1, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pu_units_pass_through() {
        let net = parse(&two_bus(r#"{"impedance":"pu","current":"pu","power":"pu"}"#, 0.1, 2.0, 0.3)).unwrap();
        assert_eq!(net.branches()[0].resistance, 0.1);
        assert_eq!(net.branches()[0].current_cap, 2.0);
        assert_eq!(net.base_demand_p(1, 1), 0.3);
    }

    #[test]
    fn unknown_unit_is_rejected() {
        let text = two_bus(r#"{"impedance":"mohm","current":"pu","power":"pu"}"#, 0.1, 2.0, 0.3);
        assert!(serde_json::from_str::<NetworkFile>(&text).is_err());
    }

    #[test]
    fn constant_profiles_expand() {
        assert_eq!(Profile::Constant(2.0).expand(3), Some(vec![2.0; 3]));
        assert_eq!(Profile::PerPeriod(vec![1.0]).expand(3), None);
    }
}
