//! Charging-task scenarios.
//!
//! Per task and scenario: arrival ~ Poisson(η^a) clamped to `[0, T-2]`,
//! duration ~ Exp(η^d) hours rounded up to whole periods (at least one) and
//! clamped so that departure ≤ T, energy ~ U(e₁, e₂) capped at what the
//! task can absorb at full power before departure. Scenarios are
//! equiprobable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::ChargingPoolSpec;
use crate::rng::{keyed_stream, stable_hash, Field};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario count must be at least 1")]
    NoScenarios,
    #[error("horizon must have at least 2 periods and a positive period length")]
    Horizon,
    #[error("task {task}: {reason}")]
    InvalidTask { task: String, reason: &'static str },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    /// Expected arrival period η^a.
    pub mean_arrival: f64,
    /// Rate of the exponential charging duration η^d, 1/h.
    pub mean_duration_rate: f64,
    pub e_min_kwh: f64,
    pub e_max_kwh: f64,
    pub x_max_kw: f64,
}

impl TaskSpec {
    pub fn validate(&self, horizon: usize) -> Result<(), ScenarioError> {
        let err = |reason| Err(ScenarioError::InvalidTask { task: self.task_id.clone(), reason });
        if !(self.mean_arrival >= 0.0 && self.mean_arrival < horizon as f64) {
            return err("mean arrival must lie in [0, horizon)");
        }
        if !(self.mean_duration_rate > 0.0 && self.mean_duration_rate.is_finite()) {
            return err("duration rate must be positive");
        }
        if !(self.e_min_kwh >= 0.0 && self.e_min_kwh <= self.e_max_kwh && self.e_max_kwh.is_finite()) {
            return err("energy range must satisfy 0 <= e_min <= e_max");
        }
        if !(self.x_max_kw > 0.0 && self.x_max_kw.is_finite()) {
            return err("maximum charging power must be positive");
        }
        Ok(())
    }
}

/// One realization `(a, d, E)`: the task is plugged in during periods
/// `a..d` (departure exclusive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub arrival: usize,
    pub departure: usize,
    pub energy_kwh: f64,
}

impl Realization {
    pub fn is_present(&self, period: usize) -> bool {
        self.arrival <= period && period < self.departure
    }
}

/// Unclamped draws behind a realization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawDraw {
    pub arrival: u64,
    pub duration_h: f64,
    pub energy_kwh: f64,
}

/// Identifies a task inside a [`ScenarioSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRef {
    pub pool: usize,
    pub pool_id: String,
    pub task_id: String,
    pub x_max_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub count: usize,
    pub seed: u64,
    pub horizon: usize,
    pub delta_t: f64,
    pub probabilities: Vec<f64>,
    /// Tasks in pool order, then task order within the pool.
    pub tasks: Vec<TaskRef>,
    /// `[task][scenario]`
    pub realizations: Vec<Vec<Realization>>,
}

impl ScenarioSet {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Indices of the tasks belonging to `pool`.
    pub fn tasks_of_pool(&self, pool: usize) -> impl Iterator<Item = usize> + '_ {
        self.tasks.iter().enumerate().filter(move |(_, t)| t.pool == pool).map(|(n, _)| n)
    }

    /// Keeps the listed scenarios, renormalizing their probabilities.
    pub fn subset(&self, scenarios: &[usize]) -> ScenarioSet {
        let total: f64 = scenarios.iter().map(|&w| self.probabilities[w]).sum();
        ScenarioSet {
            count: scenarios.len(),
            seed: self.seed,
            horizon: self.horizon,
            delta_t: self.delta_t,
            probabilities: scenarios.iter().map(|&w| self.probabilities[w] / total).collect(),
            tasks: self.tasks.clone(),
            realizations: self
                .realizations
                .iter()
                .map(|per_task| scenarios.iter().map(|&w| per_task[w]).collect())
                .collect(),
        }
    }
}

/// Draws the raw (unclamped) arrival, duration and energy of one task in
/// one scenario.
pub fn raw_draw(task: &TaskSpec, task_key: u64, scenario: usize, seed: u64) -> RawDraw {
    let w = scenario as u64;
    let arrival = if task.mean_arrival > 0.0 {
        let poisson = Poisson::new(task.mean_arrival).expect("validated positive mean");
        let v: f64 = poisson.sample(&mut keyed_stream(seed, task_key, w, Field::Arrival));
        v as u64
    } else {
        0
    };
    let exp = Exp::new(task.mean_duration_rate).expect("validated positive rate");
    let duration_h = exp.sample(&mut keyed_stream(seed, task_key, w, Field::Duration));
    let mut rng = keyed_stream(seed, task_key, w, Field::Energy);
    let energy_kwh = if task.e_max_kwh > task.e_min_kwh {
        rng.random_range(task.e_min_kwh..=task.e_max_kwh)
    } else {
        task.e_min_kwh
    };
    RawDraw { arrival, duration_h, energy_kwh }
}

/// Applies the clamping and feasibility rules to a raw draw.
pub fn realize(raw: &RawDraw, x_max_kw: f64, horizon: usize, delta_t: f64) -> Realization {
    let arrival = (raw.arrival as usize).min(horizon - 2);
    let periods = libm::ceil(raw.duration_h / delta_t).max(1.0);
    let departure = if periods >= (horizon - arrival) as f64 {
        horizon
    } else {
        arrival + periods as usize
    };
    let deliverable = x_max_kw * (departure - arrival) as f64 * delta_t;
    Realization { arrival, departure, energy_kwh: raw.energy_kwh.min(deliverable) }
}

/// Key for a task's random streams.
pub fn task_key(pool_id: &str, task_id: &str) -> u64 {
    stable_hash(&[pool_id, task_id])
}

pub fn generate_scenarios(
    pools: &[ChargingPoolSpec],
    count: usize,
    seed: u64,
    horizon: usize,
    delta_t: f64,
) -> Result<ScenarioSet, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::NoScenarios);
    }
    if horizon < 2 || !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(ScenarioError::Horizon);
    }
    let mut tasks = Vec::new();
    let mut realizations = Vec::new();
    for (s, pool) in pools.iter().enumerate() {
        for task in &pool.tasks {
            task.validate(horizon)?;
            let key = task_key(&pool.pool_id, &task.task_id);
            let per_scenario = (0..count)
                .map(|w| realize(&raw_draw(task, key, w, seed), task.x_max_kw, horizon, delta_t))
                .collect();
            tasks.push(TaskRef {
                pool: s,
                pool_id: pool.pool_id.clone(),
                task_id: task.task_id.clone(),
                x_max_kw: task.x_max_kw,
            });
            realizations.push(per_scenario);
        }
    }
    Ok(ScenarioSet {
        count,
        seed,
        horizon,
        delta_t,
        probabilities: vec![1.0 / count as f64; count],
        tasks,
        realizations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub pool_id: String,
    pub task_id: String,
    /// Expected arrival period.
    pub mean_arrival: f64,
    /// Expected plug-in duration, hours.
    pub mean_duration_h: f64,
    pub mean_energy_kwh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub tasks: Vec<TaskSummary>,
    /// Expected number of plugged-in tasks per period.
    pub plugged_in: Vec<f64>,
}

pub fn scenario_stats(set: &ScenarioSet) -> ScenarioSummary {
    let mut plugged_in = vec![0.0; set.horizon];
    let tasks = set
        .tasks
        .iter()
        .zip(&set.realizations)
        .map(|(task, per_scenario)| {
            let (mut a, mut d, mut e) = (0.0, 0.0, 0.0);
            for (r, &pi) in per_scenario.iter().zip(&set.probabilities) {
                a += pi * r.arrival as f64;
                d += pi * (r.departure - r.arrival) as f64 * set.delta_t;
                e += pi * r.energy_kwh;
                for slot in &mut plugged_in[r.arrival..r.departure] {
                    *slot += pi;
                }
            }
            TaskSummary {
                pool_id: task.pool_id.clone(),
                task_id: task.task_id.clone(),
                mean_arrival: a,
                mean_duration_h: d,
                mean_energy_kwh: e,
            }
        })
        .collect();
    ScenarioSummary { tasks, plugged_in }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::UtilityFunction;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn task(id: &str, arrival: f64, rate: f64) -> TaskSpec {
        TaskSpec {
            task_id: id.to_string(),
            mean_arrival: arrival,
            mean_duration_rate: rate,
            e_min_kwh: 0.0,
            e_max_kwh: 100.0,
            x_max_kw: 22.0,
        }
    }

    fn pool(tasks: Vec<TaskSpec>) -> ChargingPoolSpec {
        ChargingPoolSpec {
            pool_id: "p".into(),
            node: 1,
            p_max_kw: vec![200.0; 24],
            energy_price: vec![0.2; 24],
            utility: UtilityFunction::new(vec![0.0, 10_000.0], vec![1.0], vec![0.0]).unwrap(),
            tasks,
        }
    }

    #[test]
    fn equiprobable_scenarios() {
        let set = generate_scenarios(&[pool(vec![task("a", 8.0, 0.25)])], 500, 1, 24, 1.0).unwrap();
        assert_eq!(set.probabilities.len(), 500);
        assert!(set.probabilities.iter().all(|&p| p == 1.0 / 500.0));
        assert!((set.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_is_clipped_to_full_power_delivery() {
        let raw = RawDraw { arrival: 5, duration_h: 1.3, energy_kwh: 100.0 };
        let r = realize(&raw, 22.0, 24, 1.0);
        assert_eq!((r.arrival, r.departure), (5, 7));
        assert_eq!(r.energy_kwh, 44.0);
    }

    #[test]
    fn clamps_keep_the_window_nonempty() {
        let r = realize(&RawDraw { arrival: 40, duration_h: 0.01, energy_kwh: 1.0 }, 22.0, 24, 1.0);
        assert_eq!((r.arrival, r.departure), (22, 23));
        let r = realize(&RawDraw { arrival: 20, duration_h: 1e9, energy_kwh: 1.0 }, 22.0, 24, 1.0);
        assert_eq!((r.arrival, r.departure), (20, 24));
    }

    #[test]
    fn same_seed_same_set() {
        let pools = [pool(vec![task("a", 8.0, 0.25), task("b", 18.0, 0.5)])];
        let a = generate_scenarios(&pools, 50, 42, 24, 1.0).unwrap();
        let b = generate_scenarios(&pools, 50, 42, 24, 1.0).unwrap();
        assert_eq!(a, b);
        let c = generate_scenarios(&pools, 50, 43, 24, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn draws_do_not_depend_on_task_order() {
        let fwd = [pool(vec![task("a", 8.0, 0.25), task("b", 18.0, 0.5)])];
        let rev = [pool(vec![task("b", 18.0, 0.5), task("a", 8.0, 0.25)])];
        let a = generate_scenarios(&fwd, 20, 3, 24, 1.0).unwrap();
        let b = generate_scenarios(&rev, 20, 3, 24, 1.0).unwrap();
        assert_eq!(a.realizations[0], b.realizations[1]);
    }

    #[test]
    fn rejects_zero_count_and_bad_tasks() {
        assert_eq!(
            generate_scenarios(&[pool(vec![task("a", 8.0, 0.25)])], 0, 1, 24, 1.0).unwrap_err(),
            ScenarioError::NoScenarios
        );
        assert!(matches!(
            generate_scenarios(&[pool(vec![task("a", 30.0, 0.25)])], 1, 1, 24, 1.0),
            Err(ScenarioError::InvalidTask { .. })
        ));
    }

    #[test]
    fn poisson_arrival_mean() {
        // 10⁵ draws, η^a = 18: the sample mean lies within 3·sqrt(η/N).
        let t = task("a", 18.0, 0.25);
        let key = task_key("p", "a");
        let n = 100_000;
        let mean = (0..n).map(|w| raw_draw(&t, key, w, 9).arrival as f64).sum::<f64>() / n as f64;
        assert!((mean - 18.0).abs() <= 3.0 * (18.0f64 / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn stats_single_and_pair() {
        let mk = |rs: Vec<Realization>| ScenarioSet {
            count: rs.len(),
            seed: 0,
            horizon: 8,
            delta_t: 1.0,
            probabilities: vec![1.0 / rs.len() as f64; rs.len()],
            tasks: vec![TaskRef { pool: 0, pool_id: "p".into(), task_id: "a".into(), x_max_kw: 22.0 }],
            realizations: vec![rs],
        };
        let one = scenario_stats(&mk(vec![Realization { arrival: 2, departure: 5, energy_kwh: 30.0 }]));
        assert_eq!(one.tasks[0].mean_arrival, 2.0);
        assert_eq!(one.tasks[0].mean_duration_h, 3.0);
        assert_eq!(one.tasks[0].mean_energy_kwh, 30.0);
        assert_eq!(one.plugged_in, vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let two = scenario_stats(&mk(vec![
            Realization { arrival: 2, departure: 5, energy_kwh: 30.0 },
            Realization { arrival: 4, departure: 6, energy_kwh: 10.0 },
        ]));
        assert_eq!(two.tasks[0].mean_arrival, 3.0);
    }

    proptest! {
        #[test]
        fn realizations_are_feasible(
            arrival in 0.0..23.9f64,
            rate in 0.05..5.0f64,
            x_max in 1.0..50.0f64,
            seed in 0u64..1000,
        ) {
            let mut t = task("a", arrival, rate);
            t.x_max_kw = x_max;
            let set = generate_scenarios(&[pool(vec![t])], 64, seed, 24, 1.0).unwrap();
            for r in &set.realizations[0] {
                prop_assert!(r.arrival < r.departure && r.departure <= 24);
                prop_assert!(r.energy_kwh >= 0.0);
                prop_assert!(r.energy_kwh <= x_max * (r.departure - r.arrival) as f64);
            }
        }
    }
}
