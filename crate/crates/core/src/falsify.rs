//! Guided simulation: simulated annealing over a box of scalar and signal
//! parameters, used to bound the dynamic uncertainty and to collect
//! well-spread training data.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cfnn::TrainingSet;
use crate::dynamics::{simulate_closed_loop, simulate_lft, DiscreteLinearModel, NonlinearSystem};
use crate::envelope::{normalize_to_unit, Hyperrectangle, Ml2Accumulator};
use crate::error::{Error, Result};
use crate::lpvlft::LftSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    PiecewiseConstant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDim {
    pub name: String,
    pub control_points: usize,
    pub lower: f64,
    pub upper: f64,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub scalars: Vec<ScalarDim>,
    pub signals: Vec<SignalDim>,
    pub horizon: f64,
    pub tau: f64,
}

/// A point of a [`SearchSpace`] expanded onto the sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub scalars: Vec<f64>,
    /// `signals[k][c]`: channel `c` at step `k`.
    pub signals: Vec<Vec<f64>>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let finite = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.scalars.iter().any(|s| !finite(s.lower, s.upper))
            || self.signals.iter().any(|s| !finite(s.lower, s.upper) || s.control_points == 0)
        {
            return Err(Error::Config("search space has invalid bounds or control points".into()));
        }
        if !(self.tau > 0.0 && self.horizon >= self.tau) {
            return Err(Error::Config("search space needs horizon >= tau > 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.scalars.len() + self.signals.iter().map(|s| s.control_points).sum::<usize>()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.tau).round() as usize
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        let mut b: Vec<[f64; 2]> = self.scalars.iter().map(|s| [s.lower, s.upper]).collect();
        for s in &self.signals {
            b.extend(std::iter::repeat_n([s.lower, s.upper], s.control_points));
        }
        b
    }

    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.scalars.iter().map(|s| s.name.clone()).collect();
        for s in &self.signals {
            l.extend((1..=s.control_points).map(|j| format!("{}_{j}", s.name)));
        }
        l
    }

    pub fn decode(&self, point: &[f64]) -> Decoded {
        let ns = self.scalars.len();
        let steps = self.steps();
        let mut signals = vec![vec![0.0; self.signals.len()]; steps];
        let mut offset = ns;
        for (c, s) in self.signals.iter().enumerate() {
            let cp = &point[offset..offset + s.control_points];
            for (k, row) in signals.iter_mut().enumerate() {
                row[c] = match s.interpolation {
                    Interpolation::PiecewiseConstant => cp[(k * cp.len() / steps).min(cp.len() - 1)],
                    Interpolation::Linear => {
                        if cp.len() == 1 || steps == 1 {
                            cp[0]
                        } else {
                            let t = k as f64 * (cp.len() - 1) as f64 / (steps - 1) as f64;
                            let j = (t.floor() as usize).min(cp.len() - 2);
                            let f = t - j as f64;
                            cp[j] * (1.0 - f) + cp[j + 1] * f
                        }
                    }
                };
            }
            offset += s.control_points;
        }
        Decoded { scalars: point[..ns].to_vec(), signals }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealingConfig {
    pub restarts: usize,
    pub initial_step: f64,
    pub final_step: f64,
    /// Initial temperature relative to `|f|` at the start of each restart.
    pub initial_temperature: f64,
    pub final_temperature_ratio: f64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            initial_step: 0.3,
            final_step: 0.01,
            initial_temperature: 0.1,
            final_temperature_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub evaluation: usize,
    pub restart: usize,
    pub point: Vec<f64>,
    /// `None` when the oracle failed at this point.
    pub value: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub log: Vec<LogEntry>,
}

pub fn write_log_csv<W: Write>(log: &[LogEntry], labels: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["evaluation".to_string(), "restart".to_string()];
    header.extend(labels.iter().cloned());
    header.extend(["objective".to_string(), "accepted".to_string()]);
    w.write_record(&header)?;
    for e in log {
        let mut rec = vec![e.evaluation.to_string(), e.restart.to_string()];
        rec.extend(e.point.iter().map(|v| format!("{v:e}")));
        rec.push(e.value.map_or(String::new(), |v| format!("{v:e}")));
        rec.push(u8::from(e.accepted).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn geometric(start: f64, end: f64, i: usize, len: usize) -> f64 {
    if len <= 1 {
        return start;
    }
    start * (end / start).powf(i as f64 / (len - 1) as f64)
}

/// Maximizes `oracle` over `bounds` with `budget` evaluations split evenly
/// across uniformly restarted annealing chains.
pub fn optimize<F>(
    bounds: &[[f64; 2]],
    budget: usize,
    config: &AnnealingConfig,
    seed: u64,
    mut oracle: F,
) -> Result<Outcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::Config("falsification budget must be at least 1".into()));
    }
    let d = bounds.len();
    let to_point = |unit: &[f64]| -> Vec<f64> {
        unit.iter().zip(bounds).map(|(t, b)| b[0] + t * (b[1] - b[0])).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let restarts = config.restarts.clamp(1, budget);
    let mut log = Vec::with_capacity(budget);
    let mut best: Option<(Vec<f64>, f64)> = None;

    let mut evaluate = |unit: &[f64], restart: usize, log: &mut Vec<LogEntry>| -> Option<f64> {
        let point = to_point(unit);
        let value = match oracle(&point) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(_) => None,
            Err(e) => {
                log::debug!("oracle failed at evaluation {}: {e}", log.len());
                None
            }
        };
        log.push(LogEntry { evaluation: log.len(), restart, point, value, accepted: false });
        value
    };

    for r in 0..restarts {
        let len = budget / restarts + usize::from(r < budget % restarts);
        let mut current: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let mut current_value = evaluate(&current, r, &mut log);
        if current_value.is_some() {
            log.last_mut().expect("logged").accepted = true;
        }
        let t0 = config.initial_temperature * current_value.map_or(1.0, f64::abs).max(1e-300);
        for i in 1..len {
            let step = geometric(config.initial_step, config.final_step, i - 1, len - 1);
            let temp = geometric(t0, t0 * config.final_temperature_ratio, i - 1, len - 1);
            let candidate: Vec<f64> = current
                .iter()
                .map(|x| {
                    let z: f64 = rng.sample(StandardNormal);
                    reflect(x + step * z)
                })
                .collect();
            let u: f64 = rng.random();
            let value = evaluate(&candidate, r, &mut log);
            let accept = match (value, current_value) {
                (None, _) => false,
                (Some(_), None) => true,
                (Some(v), Some(c)) => v >= c || u < ((v - c) / temp).exp(),
            };
            if accept {
                log.last_mut().expect("logged").accepted = true;
                current = candidate;
                current_value = value;
            }
        }
    }
    for e in &log {
        if let Some(v) = e.value {
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((e.point.clone(), v));
            }
        }
    }
    let (best_point, best_value) =
        best.ok_or_else(|| Error::Domain("every oracle evaluation failed".into()))?;
    Ok(Outcome { best_point, best_value, log })
}

/// Folds a coordinate back into `[0, 1]`.
fn reflect(x: f64) -> f64 {
    let mut t = x.rem_euclid(2.0);
    if t > 1.0 {
        t = 2.0 - t;
    }
    t
}

/// Uniform random search with the same budget, as a baseline.
pub fn random_search<F>(bounds: &[[f64; 2]], budget: usize, seed: u64, mut oracle: F) -> f64
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..budget {
        let p: Vec<f64> = bounds.iter().map(|b| b[0] + rng.random::<f64>() * (b[1] - b[0])).collect();
        if let Ok(v) = oracle(&p) {
            if v.is_finite() {
                best = best.max(v);
            }
        }
    }
    best
}

/// Output error between an original and a model closed loop driven by the
/// same disturbance, both started at zero.
pub trait ErrorSystem {
    fn error_outputs(&self, disturbance: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// `sqrt(sum_k ||v_k||^2)`.
pub fn signal_norm(signal: &[Vec<f64>]) -> f64 {
    signal.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundOutcome {
    pub bound: f64,
    pub max_ratio: f64,
    pub safety_factor: f64,
    pub search: Outcome,
}

/// Largest `||delta y|| / ||d||` found by annealing, times `safety_factor`.
pub fn bound_dynamic_uncertainty(
    system: &dyn ErrorSystem,
    space: &SearchSpace,
    budget: usize,
    config: &AnnealingConfig,
    seed: u64,
    safety_factor: f64,
) -> Result<BoundOutcome> {
    space.validate()?;
    let search = optimize(&space.bounds(), budget, config, seed, |p| {
        let d = space.decode(p).signals;
        let dn = signal_norm(&d);
        if dn == 0.0 {
            return Err(Error::Domain("zero disturbance".into()));
        }
        Ok(signal_norm(&system.error_outputs(&d)?) / dn)
    })?;
    Ok(BoundOutcome {
        bound: search.best_value * safety_factor,
        max_ratio: search.best_value,
        safety_factor,
        search,
    })
}

/// Maps a deviation sample `[x; u]` of the nonlinear loop to LFT parameters.
pub type Scheduling<'a> = dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a;

/// Nonlinear plant vs LFT model, both under `u = -K x_bar + d`. The model is
/// scheduled along the nonlinear trajectory, clamped to its parameter bounds.
pub struct ClosedLoopComparison<'a> {
    pub system: &'a dyn NonlinearSystem,
    pub linear: &'a DiscreteLinearModel,
    pub gain: &'a DMatrix<f64>,
    pub closed_model: LftSystem,
    pub scheduling: &'a Scheduling<'a>,
    pub step: f64,
}

impl<'a> ClosedLoopComparison<'a> {
    pub fn new(
        system: &'a dyn NonlinearSystem,
        linear: &'a DiscreteLinearModel,
        gain: &'a DMatrix<f64>,
        model: &LftSystem,
        scheduling: &'a Scheduling<'a>,
        step: f64,
    ) -> Self {
        Self {
            system,
            linear,
            gain,
            closed_model: model.with_state_feedback(gain),
            scheduling,
            step,
        }
    }
}

impl ErrorSystem for ClosedLoopComparison<'_> {
    fn error_outputs(&self, disturbance: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.system.state_dim();
        let nl = simulate_closed_loop(self.system, self.linear, self.gain, &vec![0.0; n], disturbance, self.step)?;
        let params: Vec<Vec<f64>> = nl
            .inputs
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let z: Vec<f64> = nl.states[k].iter().chain(u).copied().collect();
                let rho = (self.scheduling)(&z);
                rho.iter()
                    .zip(&self.closed_model.blocks)
                    .map(|(v, b)| v.clamp(b.value_bounds[0], b.value_bounds[1]))
                    .collect()
            })
            .collect();
        let model = simulate_lft(&self.closed_model, &params, disturbance, &vec![0.0; n])?;
        Ok(nl
            .outputs
            .iter()
            .zip(&model.outputs)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub budget: usize,
    /// Runs whose spread `V_i` falls below this are rejected.
    pub spread_threshold: f64,
    /// Stop selecting once this many samples are collected.
    pub target_samples: usize,
    /// Keep every `decimation`-th step of each run.
    pub decimation: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self { budget: 200, spread_threshold: 1.0, target_samples: 4000, decimation: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    pub evaluation: usize,
    pub spread: f64,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CoverageOutcome {
    pub set: TrainingSet,
    pub search: Outcome,
    pub database: Vec<CoverageRun>,
    /// Database indices in the order they were selected.
    pub selected: Vec<usize>,
    /// Discrepancy of the accumulated cloud after each selection.
    pub discrepancy_path: Vec<f64>,
}

/// In-envelope deviation samples `[x; u]` of one closed-loop run, with the
/// spread `V = sum ||x_bar||^2` over them.
#[allow(clippy::too_many_arguments)]
pub fn coverage_run(
    system: &dyn NonlinearSystem,
    linear: &DiscreteLinearModel,
    gain: &DMatrix<f64>,
    envelope: &Hyperrectangle,
    x0: &[f64],
    disturbance: &[Vec<f64>],
    decimation: usize,
    step: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = system.state_dim();
    let traj = simulate_closed_loop(system, linear, gain, x0, disturbance, step)?;
    let mut spread = 0.0;
    let mut kept = Vec::new();
    for (k, u) in traj.inputs.iter().enumerate() {
        let z: Vec<f64> = traj.states[k].iter().chain(u).copied().collect();
        if !envelope.contains(&z) {
            continue;
        }
        spread += z[..n].iter().map(|v| v * v).sum::<f64>();
        if k % decimation.max(1) == 0 {
            kept.push(z);
        }
    }
    Ok((spread, kept))
}

/// Collects closed-loop runs that maximize spread, rejects those below the
/// threshold, and greedily selects whole runs that lower the discrepancy of
/// the accumulated (envelope-normalized) cloud.
///
/// Scalar dimensions of `space`, when there are `n` of them, are initial
/// deviations; otherwise runs start at the operating point.
#[allow(clippy::too_many_arguments)]
pub fn generate_coverage_data(
    system: &dyn NonlinearSystem,
    linear: &DiscreteLinearModel,
    gain: &DMatrix<f64>,
    envelope: &Hyperrectangle,
    space: &SearchSpace,
    config: &CoverageConfig,
    annealing: &AnnealingConfig,
    seed: u64,
    step: f64,
) -> Result<CoverageOutcome> {
    space.validate()?;
    let n = system.state_dim();
    let mut database: Vec<CoverageRun> = Vec::new();
    let mut evaluation = 0usize;
    let search = optimize(&space.bounds(), config.budget, annealing, seed, |p| {
        let index = evaluation;
        evaluation += 1;
        let decoded = space.decode(p);
        let x0 = if decoded.scalars.len() == n { decoded.scalars.clone() } else { vec![0.0; n] };
        let (spread, samples) =
            coverage_run(system, linear, gain, envelope, &x0, &decoded.signals, config.decimation, step)?;
        if spread >= config.spread_threshold && spread > 0.0 && !samples.is_empty() {
            database.push(CoverageRun { evaluation: index, spread, samples });
        }
        Ok(spread)
    })?;
    if database.is_empty() {
        return Err(Error::InsufficientCoverage(format!(
            "no run reached spread {}; lower the threshold",
            config.spread_threshold
        )));
    }

    let normalized: Vec<Vec<Vec<f64>>> = database
        .iter()
        .map(|r| normalize_to_unit(&r.samples, envelope))
        .collect::<Result<_>>()?;
    let (selected, discrepancy_path) = greedy_selection(&normalized, envelope.dim(), config.target_samples);

    let mut set = TrainingSet {
        samples: Vec::new(),
        trajectory: Vec::new(),
        labels: envelope.labels.clone(),
    };
    for &i in &selected {
        for s in &database[i].samples {
            set.samples.push(s.clone());
            set.trajectory.push(database[i].evaluation);
        }
    }
    Ok(CoverageOutcome { set, search, database, selected, discrepancy_path })
}

/// Greedy run selection by discrepancy decrease. Pairwise kernel sums between
/// runs are computed once and reused.
pub fn greedy_selection(runs: &[Vec<Vec<f64>>], dim: usize, target: usize) -> (Vec<usize>, Vec<f64>) {
    let count = runs.len();
    let self_sum: Vec<f64> = runs.iter().map(|r| Ml2Accumulator::cross_sum(r, r)).collect();
    let single: Vec<f64> = runs
        .iter()
        .map(|r| r.iter().map(|p| Ml2Accumulator::single_term(p)).sum())
        .collect();
    let mut cross_to_selected = vec![0.0; count];
    let mut used = vec![false; count];
    let mut acc = Ml2Accumulator::new(dim);
    let mut selected = Vec::new();
    let mut path = Vec::new();
    while acc.count() < target {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..count).filter(|&i| !used[i]) {
            let v = acc.value_with(runs[i].len(), single[i], self_sum[i], cross_to_selected[i]);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        let Some((i, v)) = best else { break };
        if acc.count() > 0 && v >= acc.value() {
            break;
        }
        acc.add_block(&runs[i], self_sum[i], Some(cross_to_selected[i]));
        used[i] = true;
        selected.push(i);
        path.push(v);
        for j in (0..count).filter(|&j| !used[j]) {
            cross_to_selected[j] += Ml2Accumulator::cross_sum(&runs[i], &runs[j]);
        }
    }
    (selected, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_one_returns_the_evaluated_point() {
        let out = optimize(&[[-1.0, 1.0]; 3], 1, &AnnealingConfig::default(), 4, |p| Ok(p[0])).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best_point, out.log[0].point);
    }

    #[test]
    fn failed_points_consume_budget() {
        let out = optimize(&[[0.0, 1.0]; 2], 50, &AnnealingConfig::default(), 1, |p| {
            if p[0] > 0.5 {
                Err(Error::Domain("nope".into()))
            } else {
                Ok(p[1])
            }
        })
        .unwrap();
        assert_eq!(out.log.len(), 50);
        assert!(out.log.iter().any(|e| e.value.is_none()));
    }

    #[test]
    fn same_seed_same_log() {
        let f = |p: &[f64]| Ok(-(p[0] - 0.3).powi(2) - p[1].abs());
        let a = optimize(&[[-1.0, 1.0]; 2], 80, &AnnealingConfig::default(), 7, f).unwrap();
        let b = optimize(&[[-1.0, 1.0]; 2], 80, &AnnealingConfig::default(), 7, f).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn piecewise_constant_decoding() {
        let space = SearchSpace {
            scalars: vec![],
            signals: vec![SignalDim {
                name: "d".into(),
                control_points: 2,
                lower: -1.0,
                upper: 1.0,
                interpolation: Interpolation::PiecewiseConstant,
            }],
            horizon: 0.4,
            tau: 0.1,
        };
        let d = space.decode(&[0.5, -0.25]);
        let flat: Vec<f64> = d.signals.iter().map(|s| s[0]).collect();
        assert_eq!(flat, vec![0.5, 0.5, -0.25, -0.25]);
    }

    #[test]
    fn reflection_stays_in_unit_interval() {
        for x in [-2.3, -0.1, 0.0, 0.5, 1.0, 1.7, 3.2] {
            let r = reflect(x);
            assert!((0.0..=1.0).contains(&r), "{x} -> {r}");
        }
    }
}
