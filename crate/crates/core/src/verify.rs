//! Sampled certification of a control policy against the MPC it replaces.
//!
//! Violations are data: every check reports counts and worst margins instead
//! of failing early.

use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{Constants, MpcProblem};
use crate::nn::ReluNet;
use crate::pipeline::{sample_states, Domain, InputMap, Regime};
use crate::scaling::{delta2, recover_control, ScalingParams};

/// Input membership tolerance.
pub const INPUT_TOL: f64 = 1e-8;
/// Slack on the error-bound check.
pub const BOUND_SLACK: f64 = 1e-8;
/// Relative slack on `v(x+) <= gamma`.
pub const GAMMA_SLACK: f64 = 1e-8;

pub trait Policy: Sync {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// The exact MPC law; infeasible states map to zero input.
pub struct MpcPolicy<'a>(pub &'a MpcProblem);

impl Policy for MpcPolicy<'_> {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.0.solve(x)?.u)
    }
}

/// A trained network behind the input map it was trained with.
#[derive(Debug, Clone)]
pub struct NnPolicy {
    pub net: ReluNet,
    pub map: InputMap,
}

impl NnPolicy {
    pub fn new(net: ReluNet, map: InputMap) -> Result<Self> {
        if map.regime == Regime::NonUniform && map.scaling.is_none() {
            return Err(Error::Validation("non-uniform policy needs scaling parameters".into()));
        }
        Ok(NnPolicy { net, map })
    }
}

impl Policy for NnPolicy {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.net.forward(&self.map.apply(x))?;
        Ok(match (self.map.regime, &self.map.scaling) {
            (Regime::NonUniform, Some(p)) => recover_control(&out, x, p),
            _ => out,
        })
    }
}

/// Wraps a policy and adds a constant input offset.
pub struct Offset<P> {
    pub inner: P,
    pub offset: DVector<f64>,
}

impl<P: Policy> Policy for Offset<P> {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inner.control(x)? + &self.offset)
    }
}

/// Allowed deviation from `u_mpc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorBound {
    Uniform { delta1: f64 },
    NonUniform(ScalingParams),
}

impl ErrorBound {
    pub fn at(&self, x: &DVector<f64>) -> f64 {
        match self {
            ErrorBound::Uniform { delta1 } => *delta1,
            ErrorBound::NonUniform(p) => delta2(x, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub n_samples: usize,
    pub seed: u64,
    /// Samples with `u not in U`.
    pub input_violations: usize,
    /// Largest `max_i (H_i u - h_i) / |H_i|` (negative when strictly inside).
    pub max_input_violation: f64,
    /// Samples with `|u - u_mpc| > bound`.
    pub error_violations: usize,
    /// Largest `|u - u_mpc| - bound`.
    pub max_error_vs_bound: f64,
    pub max_error: f64,
    /// Samples with `x+` infeasible or `v(x+) > gamma`.
    pub invariance_failures: usize,
    pub max_successor_value: f64,
}

impl PointwiseReport {
    pub fn passed(&self) -> bool {
        self.input_violations == 0 && self.error_violations == 0 && self.invariance_failures == 0
    }
}

/// Check input admissibility, the error bound and one-step invariance of
/// `V(gamma)` on `n` fresh samples of `X_inv`.
pub fn check_pointwise<P: Policy>(
    prob: &MpcProblem,
    constants: &Constants,
    policy: &P,
    bound: &ErrorBound,
    n: usize,
    seed: u64,
) -> Result<PointwiseReport> {
    let sample = sample_states(prob, constants, n, seed, Domain::Invariant)?;
    let u_set = prob.u_set();
    let rows: Vec<(f64, f64, f64, bool, f64)> = sample
        .states
        .par_iter()
        .zip(&sample.evals)
        .map(|(x, e)| {
            let u = policy.control(x)?;
            let in_margin = u_set.signed_distance_bound(&u);
            let err = (&u - &e.u).norm();
            let next = prob.solve(&prob.step(x, &u))?;
            let ok_next = next.feasible && next.v <= constants.gamma * (1.0 + GAMMA_SLACK);
            Ok((in_margin, err, err - bound.at(x), ok_next, next.v))
        })
        .collect::<Result<_>>()?;
    let mut r = PointwiseReport {
        n_samples: n,
        seed,
        input_violations: 0,
        max_input_violation: f64::NEG_INFINITY,
        error_violations: 0,
        max_error_vs_bound: f64::NEG_INFINITY,
        max_error: 0.0,
        invariance_failures: 0,
        max_successor_value: 0.0,
    };
    for (in_margin, err, gap, ok_next, v_next) in rows {
        r.max_input_violation = r.max_input_violation.max(in_margin);
        r.input_violations += usize::from(in_margin > INPUT_TOL);
        r.max_error = r.max_error.max(err);
        r.max_error_vs_bound = r.max_error_vs_bound.max(gap);
        r.error_violations += usize::from(gap > BOUND_SLACK);
        r.invariance_failures += usize::from(!ok_next);
        r.max_successor_value = r.max_successor_value.max(v_next);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    StateOutside,
    InputOutside,
    MpcInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 .. x_T`.
    pub states: Vec<DVector<f64>>,
    /// `u_k` = policy at `x_k`, for every stored state.
    pub inputs: Vec<DVector<f64>>,
    /// `v_mpc(x_k)`; `inf` where the MPC is infeasible.
    pub values: Vec<f64>,
    pub violations: Vec<(usize, ViolationKind)>,
}

/// Closed loop `x+ = A x + B pi(x)` for `steps` steps. Leaving `X` is recorded
/// and the simulation continues.
pub fn rollout<P: Policy>(prob: &MpcProblem, policy: &P, x0: &DVector<f64>, steps: usize) -> Result<Trajectory> {
    let mut t = Trajectory {
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        values: Vec::with_capacity(steps + 1),
        violations: Vec::new(),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        if !prob.x_set().contains(&x, 1e-12)? {
            t.violations.push((k, ViolationKind::StateOutside));
        }
        let e = prob.solve(&x)?;
        if !e.feasible {
            t.violations.push((k, ViolationKind::MpcInfeasible));
        }
        let u = policy.control(&x)?;
        if !prob.u_set().contains(&u, INPUT_TOL)? {
            t.violations.push((k, ViolationKind::InputOutside));
        }
        let next = prob.step(&x, &u);
        t.states.push(std::mem::replace(&mut x, next));
        t.inputs.push(u);
        t.values.push(e.v);
    }
    Ok(t)
}

/// `a_0 = gamma`, `a_{k+1} = (1 - c3/c2) a_k + c4 sqrt(a_k/c1) delta1 + c5 delta1^2`.
pub fn lyapunov_sequence(gamma: f64, constants: &Constants, delta1: f64, steps: usize) -> Result<Vec<f64>> {
    let limit = constants.c7 * gamma.sqrt();
    if !(delta1 >= 0.0 && delta1 < limit) {
        return Err(Error::Precondition(format!(
            "delta1 = {delta1} must lie in [0, c7 sqrt(gamma)) = [0, {limit}) (delta_bar bound)"
        )));
    }
    let mut a = Vec::with_capacity(steps + 1);
    a.push(gamma);
    for k in 0..steps {
        a.push(constants.lyapunov_step(a[k], delta1));
    }
    Ok(a)
}

/// Where a trajectory is expected to end up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `v_mpc <= level`.
    Sublevel { level: f64 },
    /// `|x| <= radius`.
    Ball { radius: f64 },
}

impl Target {
    /// `V(c6 delta1^2)` for a uniform bound.
    pub fn uniform(constants: &Constants, delta1: f64) -> Self {
        Target::Sublevel { level: constants.c6 * delta1 * delta1 }
    }

    fn contains(&self, x: &DVector<f64>, v: f64) -> bool {
        match *self {
            Target::Sublevel { level } => v <= level,
            Target::Ball { radius } => x.norm() <= radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// First step inside the target (`None` if never).
    pub time_to_entry: Option<usize>,
    /// Inside the target at every step from the first entry on.
    pub stays_after_entry: bool,
    pub tail_mean_state_norm: f64,
    /// `sum_k x_k'Q x_k + u_k'R u_k` over applied inputs.
    pub cumulative_cost: f64,
    pub final_v: f64,
    pub violations: usize,
}

pub fn convergence_metrics(prob: &MpcProblem, traj: &Trajectory, target: &Target, tail_len: usize) -> Result<Metrics> {
    let len = traj.states.len();
    if tail_len == 0 || len < tail_len {
        return Err(Error::Precondition(format!("trajectory of {len} states is shorter than the tail {tail_len}")));
    }
    let inside: Vec<bool> = traj.states.iter().zip(&traj.values).map(|(x, v)| target.contains(x, *v)).collect();
    let time_to_entry = inside.iter().position(|b| *b);
    let stays_after_entry = time_to_entry.is_some_and(|k| inside[k..].iter().all(|b| *b));
    let tail_mean_state_norm = traj.states[len - tail_len..].iter().map(|x| x.norm()).sum::<f64>() / tail_len as f64;
    let cumulative_cost = traj.states[..len - 1]
        .iter()
        .zip(&traj.inputs)
        .map(|(x, u)| prob.stage_cost(x, u))
        .sum();
    Ok(Metrics {
        time_to_entry,
        stays_after_entry,
        tail_mean_state_norm,
        cumulative_cost,
        final_v: *traj.values.last().unwrap(),
        violations: traj.violations.len(),
    })
}

/// Steps where `v(x+) > (1 - c3/c2) v(x) + c4 |x| delta1 + c5 delta1^2 + slack`.
pub fn one_step_decrease_failures(traj: &Trajectory, constants: &Constants, delta1: f64, slack: f64) -> usize {
    let c = constants;
    (0..traj.states.len() - 1)
        .filter(|&k| {
            let v = traj.values[k];
            let rhs = (1.0 - c.c3 / c.c2) * v + c.c4 * traj.states[k].norm() * delta1 + c.c5 * delta1 * delta1;
            traj.values[k + 1] > rhs + slack
        })
        .count()
}

/// Steps where `v(x_k) > a_k`.
pub fn dominance_failures(traj: &Trajectory, seq: &[f64]) -> usize {
    traj.values.iter().zip(seq).filter(|(v, a)| v > a).count()
}

/// Parallel rollouts in input order.
pub fn simulate_many<P: Policy>(
    prob: &MpcProblem,
    policy: &P,
    x0s: &[DVector<f64>],
    steps: usize,
    target: &Target,
    tail_len: usize,
) -> Result<Vec<(Trajectory, Metrics)>> {
    x0s.par_iter()
        .map(|x0| {
            let t = rollout(prob, policy, x0, steps)?;
            let m = convergence_metrics(prob, &t, target, tail_len)?;
            Ok((t, m))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub n_rollouts: usize,
    pub steps: usize,
    pub target: Target,
    pub entered: usize,
    pub entered_and_stayed: usize,
    pub max_time_to_entry: Option<usize>,
    pub median_tail_mean_state_norm: f64,
    pub total_violations: usize,
}

impl RolloutSummary {
    pub fn from_runs(runs: &[(Trajectory, Metrics)], steps: usize, target: Target) -> Self {
        let mut tails: Vec<f64> = runs.iter().map(|r| r.1.tail_mean_state_norm).collect();
        RolloutSummary {
            n_rollouts: runs.len(),
            steps,
            target,
            entered: runs.iter().filter(|r| r.1.time_to_entry.is_some()).count(),
            entered_and_stayed: runs.iter().filter(|r| r.1.stays_after_entry).count(),
            max_time_to_entry: runs.iter().filter_map(|r| r.1.time_to_entry).max(),
            median_tail_mean_state_norm: median(&mut tails),
            total_violations: runs.iter().map(|r| r.1.violations).sum(),
        }
    }

    pub fn passed(&self) -> bool {
        self.entered_and_stayed == self.n_rollouts && self.total_violations == 0
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// CSV with columns `traj, step, x_0.., u_0.., v`.
pub fn write_trajectories(path: &Path, trajs: &[&Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let nx = trajs.first().map_or(0, |t| t.states[0].len());
    let nu = trajs.first().map_or(0, |t| t.inputs[0].len());
    let mut header = vec!["traj".to_string(), "step".to_string()];
    header.extend((0..nx).map(|i| format!("x_{i}")));
    header.extend((0..nu).map(|i| format!("u_{i}")));
    header.push("v".into());
    w.write_record(&header)?;
    for (id, t) in trajs.iter().enumerate() {
        for k in 0..t.states.len() {
            let mut row = vec![id.to_string(), k.to_string()];
            row.extend(t.states[k].iter().map(|v| format!("{v:?}")));
            row.extend(t.inputs[k].iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", t.values[k]));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::estimate_constants;
    use std::sync::OnceLock;

    fn desk() -> &'static (MpcProblem, Constants) {
        static DESK: OnceLock<(MpcProblem, Constants)> = OnceLock::new();
        DESK.get_or_init(|| {
            let prob = MpcProblem::double_integrator().unwrap();
            let c = estimate_constants(&prob, 2000, 3, 1.1).unwrap();
            (prob, c)
        })
    }

    #[test]
    fn exact_policy_has_no_violations() {
        let (prob, c) = desk();
        let r = check_pointwise(prob, c, &MpcPolicy(prob), &ErrorBound::Uniform { delta1: c.delta_bar }, 300, 8).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.max_error, 0.0);
    }

    #[test]
    fn offset_policy_breaks_the_bound_everywhere() {
        let (prob, c) = desk();
        let delta1 = 1e-3;
        let p = Offset { inner: MpcPolicy(prob), offset: DVector::from_element(1, 2.0 * delta1) };
        let r = check_pointwise(prob, c, &p, &ErrorBound::Uniform { delta1 }, 200, 8).unwrap();
        assert_eq!(r.error_violations, 200);
        assert!(!r.passed());
    }

    #[test]
    fn mpc_rollout_decreases_value() {
        let (prob, c) = desk();
        let x0 = DVector::from_column_slice(&[-3.0, 1.5]);
        let t = rollout(prob, &MpcPolicy(prob), &x0, 60).unwrap();
        assert!(t.violations.is_empty());
        for k in 0..60 {
            let x = &t.states[k];
            assert!(t.values[k + 1] - t.values[k] <= -c.c3 * x.norm_squared() + 1e-9);
        }
        let m = convergence_metrics(prob, &t, &Target::Ball { radius: 1e-3 }, 12).unwrap();
        assert!(m.tail_mean_state_norm < 1e-6);
        assert!(m.stays_after_entry);
    }

    #[test]
    fn origin_stays_put() {
        let (prob, _) = desk();
        let t = rollout(prob, &MpcPolicy(prob), &DVector::zeros(2), 10).unwrap();
        assert!(t.states.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn constant_trajectory_never_enters() {
        let (prob, _) = desk();
        let x = DVector::from_column_slice(&[1.0, 0.0]);
        let t = Trajectory {
            states: vec![x.clone(); 20],
            inputs: vec![DVector::zeros(1); 20],
            values: vec![1.0; 20],
            violations: vec![],
        };
        let m = convergence_metrics(prob, &t, &Target::Sublevel { level: 0.5 }, 12).unwrap();
        assert_eq!(m.time_to_entry, None);
        assert!(!m.stays_after_entry);
    }

    #[test]
    fn zero_error_sequence_is_geometric() {
        let (_, c) = desk();
        let a = lyapunov_sequence(c.gamma, c, 0.0, 10).unwrap();
        for (k, ak) in a.iter().enumerate() {
            let expect = c.gamma * (1.0 - c.c3 / c.c2).powi(k as i32);
            assert!((ak - expect).abs() <= 1e-12 * c.gamma);
        }
        let err = lyapunov_sequence(c.gamma, c, c.delta_limit() * 1.01, 10).unwrap_err();
        assert!(err.to_string().contains("delta_bar"));
    }

    #[test]
    fn trajectory_csv_layout() {
        let (prob, _) = desk();
        let t = rollout(prob, &MpcPolicy(prob), &DVector::from_column_slice(&[1.0, 0.5]), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trajectories(&path, &[&t]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "traj,step,x_0,x_1,u_0,v");
        assert_eq!(lines.count(), 4);
    }
}
