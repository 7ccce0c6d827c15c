mod common;

use std::sync::OnceLock;

use nalgebra::DVector;
use relu_mpc::mpc::{estimate_constants, Constants, MpcProblem};
use relu_mpc::pipeline::{self, Domain};
use relu_mpc::scaling::{self, ScalingParams};
use relu_mpc::verify::{self, ErrorBound, Policy, RolloutSummary, Target};
use relu_mpc::Result;

fn desk() -> &'static (MpcProblem, Constants) {
    static DESK: OnceLock<(MpcProblem, Constants)> = OnceLock::new();
    DESK.get_or_init(|| {
        let prob = MpcProblem::double_integrator().unwrap();
        let c = estimate_constants(&prob, 10_000, 0, 1.1).unwrap();
        (prob, c)
    })
}

fn sign(x: &DVector<f64>) -> f64 {
    if (x[0] * 12.9898 + x[1] * 78.233).sin() >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Tightened-set target pushed by exactly `eps`: what a network meeting the
/// uniform training budget could output.
struct UniformSurrogate<'a> {
    prob: &'a MpcProblem,
    eps: f64,
}

impl Policy for UniformSurrogate<'_> {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.prob.solve(x)?.u;
        let target = scaling::project_tightened(&u, self.eps, self.prob.u_set())?;
        Ok(target.add_scalar(sign(x) * self.eps))
    }
}

/// Scaled target pushed by `eps` in the network's output space, then mapped
/// back through the output scaling.
struct ScaledSurrogate<'a> {
    prob: &'a MpcProblem,
    params: ScalingParams,
}

impl Policy for ScaledSurrogate<'_> {
    fn control(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.prob.solve(x)?.u;
        let target = scaling::scaled_target(x, &u, &self.params, self.prob.u_set())?;
        let out = target.add_scalar(sign(x) * self.params.eps);
        Ok(scaling::recover_control(&out, x, &self.params))
    }
}

#[test]
fn uniform_budget_certifies_pointwise_and_in_closed_loop() {
    let (prob, c) = desk();
    let delta1 = c.delta_bar;
    let eps = pipeline::uniform_eps(delta1, c);
    let policy = UniformSurrogate { prob, eps };
    let report = verify::check_pointwise(prob, c, &policy, &ErrorBound::Uniform { delta1 }, 2000, 31).unwrap();
    assert!(report.passed(), "{report:?}");

    let target = Target::uniform(c, delta1);
    let x0s = pipeline::sample_states(prob, c, 40, 32, Domain::Invariant).unwrap().states;
    let runs = verify::simulate_many(prob, &policy, &x0s, 200, &target, 12).unwrap();
    let summary = RolloutSummary::from_runs(&runs, 200, target);
    assert!(summary.passed(), "{summary:?}");

    let seq = verify::lyapunov_sequence(c.gamma, c, delta1, 200).unwrap();
    for (t, _) in &runs {
        assert_eq!(verify::dominance_failures(t, &seq), 0);
        assert_eq!(verify::one_step_decrease_failures(t, c, delta1, 1e-8), 0);
    }
}

#[test]
fn scaled_budget_certifies_and_decreases_outside_inner_ball() {
    let (prob, c) = desk();
    let params = ScalingParams::new(c.c8, 0.2 * c.delta_bar, c.delta_bar, pipeline::uniform_eps(c.delta_bar, c)).unwrap();
    params.validate_for(prob.u_set()).unwrap();
    let policy = ScaledSurrogate { prob, params };
    let report = verify::check_pointwise(prob, c, &policy, &ErrorBound::NonUniform(params), 2000, 41).unwrap();
    assert!(report.passed(), "{report:?}");

    let inner = params.radii().0;
    let x0s = pipeline::sample_states(prob, c, 30, 42, Domain::Invariant).unwrap().states;
    for x0 in &x0s {
        let t = verify::rollout(prob, &policy, x0, 150).unwrap();
        assert!(t.violations.is_empty(), "{:?}", t.violations);
        for k in 0..t.values.len() - 1 {
            if t.states[k].norm() >= inner {
                assert!(t.values[k + 1] < t.values[k], "no decrease at step {k}");
            }
        }
    }
}

#[test]
fn offset_beyond_budget_is_flagged() {
    let (prob, c) = desk();
    let delta1 = c.delta_bar;
    let policy = verify::Offset {
        inner: verify::MpcPolicy(prob),
        offset: DVector::from_element(1, 3.0 * delta1),
    };
    let report = verify::check_pointwise(prob, c, &policy, &ErrorBound::Uniform { delta1 }, 500, 51).unwrap();
    assert!(!report.passed());
    assert_eq!(report.error_violations, 500);
    assert!(report.input_violations > 0);
}
