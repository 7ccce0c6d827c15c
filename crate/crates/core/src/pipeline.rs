//! Training data for both error regimes, persisted as CSV plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::normalize_domain;
use crate::error::{Error, Result};
use crate::mpc::{Constants, MpcProblem, PolicyEval};
use crate::scaling::{project_tightened, scaled_target, t_forward, t_inverse, ScalingParams};

/// Give up when a single index needs more draws than this.
pub const MAX_DRAWS_PER_SAMPLE: usize = 1_000_000;
pub const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Uniform,
    NonUniform,
}

/// Where training states come from: the invariant sublevel set, or every
/// MPC-feasible state of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    #[default]
    Invariant,
    StateSet,
}

#[derive(Debug, Clone)]
pub struct StateSample {
    pub states: Vec<DVector<f64>>,
    pub evals: Vec<PolicyEval>,
    pub drawn: usize,
}

impl StateSample {
    pub fn acceptance(&self) -> f64 {
        self.states.len() as f64 / self.drawn.max(1) as f64
    }
}

fn accept(eval: &PolicyEval, gamma: f64, domain: Domain) -> bool {
    eval.feasible
        && match domain {
            Domain::Invariant => eval.v <= gamma,
            Domain::StateSet => true,
        }
}

/// Rejection sampling from the bounding box of `X`. Index `i` draws from its
/// own generator seeded with `seed + i` until one state is accepted.
pub fn sample_states(prob: &MpcProblem, constants: &Constants, n: usize, seed: u64, domain: Domain) -> Result<StateSample> {
    let (lo, hi) = prob.x_set().bounding_box();
    let per: Vec<(DVector<f64>, PolicyEval, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            for draws in 1..=MAX_DRAWS_PER_SAMPLE {
                let x = DVector::from_fn(lo.len(), |k, _| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>());
                let e = prob.solve(&x)?;
                if accept(&e, constants.gamma, domain) {
                    return Ok((x, e, draws));
                }
            }
            Err(Error::Sampling(format!(
                "index {i}: no accepted state in {MAX_DRAWS_PER_SAMPLE} draws; gamma is likely misestimated"
            )))
        })
        .collect::<Result<_>>()?;
    let drawn = per.iter().map(|p| p.2).sum::<usize>();
    if drawn >= MAX_DRAWS_PER_SAMPLE && (n as f64) / (drawn as f64) < MIN_ACCEPTANCE {
        return Err(Error::Sampling(format!("acceptance rate {} below {MIN_ACCEPTANCE}", n as f64 / drawn as f64)));
    }
    let (states, evals): (Vec<_>, Vec<_>) = per.into_iter().map(|(x, e, _)| (x, e)).unzip();
    Ok(StateSample { states, evals, drawn })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub regime: Regime,
    pub domain: Domain,
    /// Tightening budget of the fitted target.
    pub eps: f64,
    /// Uniform error bound (uniform regime).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingParams>,
    /// Half-width of the cube mapped onto `[0,1]^n` before the network.
    pub input_radius: f64,
    pub seed: u64,
    pub problem_hash: String,
    pub n_samples: usize,
    pub drawn: usize,
}

/// Columns of `inputs` and `targets` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub meta: DatasetMeta,
}

/// Network input for a raw state, as recorded in the dataset meta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub regime: Regime,
    pub input_radius: f64,
    pub scaling: Option<ScalingParams>,
}

impl InputMap {
    pub fn from_meta(meta: &DatasetMeta) -> Self {
        InputMap {
            regime: meta.regime,
            input_radius: meta.input_radius,
            scaling: meta.scaling,
        }
    }

    /// Affine normalization of `x` (or `T(x)`); extrapolates outside the cube.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = match (self.regime, &self.scaling) {
            (Regime::NonUniform, Some(p)) => t_forward(x, p),
            _ => x.clone(),
        };
        z.map(|v| v / (2.0 * self.input_radius) + 0.5)
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_map(&self) -> InputMap {
        InputMap::from_meta(&self.meta)
    }

    pub fn check_problem(&self, prob: &MpcProblem) -> Result<()> {
        if self.meta.problem_hash != prob.hash() {
            return Err(Error::Validation("dataset was built for a different problem (hash mismatch)".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.ncols() != self.targets.ncols() {
            return Err(Error::Validation("dataset inputs and targets differ in length".into()));
        }
        if !self.targets.iter().chain(self.inputs.iter()).all(|v| v.is_finite()) {
            return Err(Error::Validation("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    /// Write `path` (CSV) and its sidecar [`meta_path`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let nin = self.inputs.nrows();
        let nout = self.targets.nrows();
        let header: Vec<String> = (0..nin).map(|i| format!("x_{i}")).chain((0..nout).map(|i| format!("y_{i}"))).collect();
        w.write_record(&header)?;
        for j in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .column(j)
                .iter()
                .chain(self.targets.column(j).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let nin = header.iter().filter(|h| h.starts_with("x_")).count();
        let nout = header.len() - nin;
        if nin == 0 || nout == 0 || header.iter().take(nin).any(|h| !h.starts_with("x_")) {
            return Err(Error::Validation(format!("{}: header must be x_0.., y_0..", path.display())));
        }
        let mut cols_in = Vec::new();
        let mut cols_out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("{}: bad number {field:?}", path.display())))?;
                if k < nin {
                    cols_in.push(v)
                } else {
                    cols_out.push(v)
                }
            }
        }
        let n = cols_in.len() / nin;
        let ds = Dataset {
            inputs: DMatrix::from_column_slice(nin, n, &cols_in),
            targets: DMatrix::from_column_slice(nout, n, &cols_out),
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// `data.csv` -> `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn stack(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r])
}

/// Tightening budget `eps = delta1 d(U) / (2 D(U))` for a uniform bound.
pub fn uniform_eps(delta1: f64, constants: &Constants) -> f64 {
    delta1 * constants.u_inradius / (2.0 * constants.u_radius)
}

/// Uniform regime: inputs are normalized states, targets `Pi_{U'(eps)}(u_mpc(x))`.
pub fn build_uniform_dataset(
    prob: &MpcProblem,
    constants: &Constants,
    delta1: f64,
    n: usize,
    seed: u64,
    domain: Domain,
) -> Result<Dataset> {
    let eps = uniform_eps(delta1, constants);
    if !(delta1 > 0.0) || eps >= constants.u_inradius {
        return Err(Error::Validation(format!("delta1 = {delta1} gives eps = {eps}, which empties U")));
    }
    let sample = sample_states(prob, constants, n, seed, domain)?;
    let radius = input_radius(constants, prob, domain);
    let inputs: Vec<_> = sample
        .states
        .iter()
        .map(|x| normalize_domain(x, radius))
        .collect::<Result<_>>()?;
    let targets: Vec<_> = sample
        .evals
        .par_iter()
        .map(|e| project_tightened(&e.u, eps, prob.u_set()))
        .collect::<Result<_>>()?;
    let ds = Dataset {
        inputs: stack(&inputs, prob.nx()),
        targets: stack(&targets, prob.nu()),
        meta: DatasetMeta {
            regime: Regime::Uniform,
            domain,
            eps,
            delta1: Some(delta1),
            scaling: None,
            input_radius: radius,
            seed,
            problem_hash: prob.hash(),
            n_samples: n,
            drawn: sample.drawn,
        },
    };
    ds.validate()?;
    Ok(ds)
}

fn input_radius(constants: &Constants, prob: &MpcProblem, domain: Domain) -> f64 {
    match domain {
        Domain::Invariant => constants.xinv_radius,
        Domain::StateSet => {
            let (lo, hi) = prob.x_set().bounding_box();
            lo.abs().max().max(hi.abs().max())
        }
    }
}

/// Non-uniform regime: inputs are `T(x)` normalized over the ball of radius
/// `D(X_inv) + offset`, targets are the scaled, state-aware projections.
pub fn build_scaled_dataset(
    prob: &MpcProblem,
    constants: &Constants,
    params: &ScalingParams,
    n: usize,
    seed: u64,
    domain: Domain,
) -> Result<Dataset> {
    params.validate_for(prob.u_set())?;
    let sample = sample_states(prob, constants, n, seed, domain)?;
    let radius = params.image_radius(input_radius(constants, prob, domain));
    let inputs: Vec<_> = sample
        .states
        .iter()
        .map(|x| normalize_domain(&t_forward(x, params), radius))
        .collect::<Result<_>>()?;
    let targets: Vec<_> = sample
        .states
        .par_iter()
        .zip(&sample.evals)
        .map(|(x, e)| scaled_target(x, &e.u, params, prob.u_set()))
        .collect::<Result<_>>()?;
    let ds = Dataset {
        inputs: stack(&inputs, prob.nx()),
        targets: stack(&targets, prob.nu()),
        meta: DatasetMeta {
            regime: Regime::NonUniform,
            domain,
            eps: params.eps,
            delta1: None,
            scaling: Some(*params),
            input_radius: radius,
            seed,
            problem_hash: prob.hash(),
            n_samples: n,
            drawn: sample.drawn,
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Largest central-difference Jacobian norm of `f` over `points`.
pub fn max_jacobian_norm<F>(points: &[DVector<f64>], step: f64, f: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>> + Sync,
{
    let norms: Vec<f64> = points
        .par_iter()
        .map(|x| {
            let mut cols = Vec::with_capacity(x.len());
            for j in 0..x.len() {
                let mut xp = x.clone();
                xp[j] += step;
                let mut xm = x.clone();
                xm[j] -= step;
                match (f(&xp)?, f(&xm)?) {
                    (Some(a), Some(b)) => cols.push((a - b) / (2.0 * step)),
                    _ => return Ok(0.0),
                }
            }
            Ok(crate::mpc::spectral_norm(&DMatrix::from_columns(&cols)))
        })
        .collect::<Result<_>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Sampled Lipschitz estimates of the scaled target over `T(states)` and of
/// `u_mpc` over `states`, both by central differences with `step`.
pub fn scaled_lipschitz(prob: &MpcProblem, params: &ScalingParams, states: &[DVector<f64>], step: f64) -> Result<(f64, f64)> {
    let policy = |x: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        let e = prob.solve(x)?;
        Ok(e.feasible.then_some(e.u))
    };
    let l_mpc = max_jacobian_norm(states, step, policy)?;
    let images: Vec<_> = states.iter().map(|x| t_forward(x, params)).collect();
    let l_scaled = max_jacobian_norm(&images, step, |y| {
        let x = t_inverse(y, params);
        match policy(&x)? {
            Some(u) => Ok(Some(scaled_target(&x, &u, params, prob.u_set())?)),
            None => Ok(None),
        }
    })?;
    Ok((l_scaled, l_mpc))
}
