//! Fitting a flow proposal by minimizing the KL-bound objective
//! `E_{s0 ~ U}[ -log |det J_f(s0)| + n log ||A f(s0)|| ]` with Adam.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Checkpoint, GradStore, RngState};
use crate::error::{Error, Result};
use crate::estimators::{check_operator, kl_bound_estimate, log_norm_n, relative_abs_diff, vde_estimate};
use crate::flows::{FlowSpec, ForwardPass, SphericalFlow, MAX_RESAMPLES};
use crate::operators::{LinearOperator, OperatorHandle};
use crate::sphere::{sample_uniform_batch, stable_norm};

/// Consecutive iterations above `initial + DIVERGENCE_NATS` that abort a run.
pub const DIVERGENCE_PATIENCE: usize = 100;
pub const DIVERGENCE_NATS: f64 = 10.0;

/// Held-out evaluation seeds are offset from the training seed by this.
const EVAL_SEED_OFFSET: u64 = 0x00e7_a100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 2k iterations, batch 256.
    Desk,
    /// 10k iterations, batch 1024.
    PaperDense,
    /// 40k iterations, batch 1024.
    PaperConv,
}

impl Profile {
    pub fn iterations(self) -> usize {
        match self {
            Profile::Desk => 2_000,
            Profile::PaperDense => 10_000,
            Profile::PaperConv => 40_000,
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Profile::Desk => 256,
            Profile::PaperDense | Profile::PaperConv => 1024,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper-dense" => Ok(Profile::PaperDense),
            "paper-conv" => Ok(Profile::PaperConv),
            other => Err(Error::Invalid(format!("unknown profile `{other}` (desk, paper-dense, paper-conv)"))),
        }
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    100.0
}
fn default_eval_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Held-out evaluation every this many iterations (0: never).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Fixture name or operator file.
    pub operator: String,
    pub flow: FlowSpec,
}

impl TrainConfig {
    pub fn for_profile(profile: Profile, operator: &str, flow: FlowSpec, seed: u64) -> Self {
        Self {
            iterations: profile.iterations(),
            batch_size: profile.batch_size(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip_norm: default_clip(),
            seed,
            checkpoint_every: 1000,
            eval_every: 0,
            eval_samples: default_eval_samples(),
            operator: operator.to_string(),
            flow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("iterations and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Invalid("learning_rate and clip_norm must be > 0".into()));
        }
        self.flow.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Flow used by default for an operator: the autoregressive spline flow for
/// 3x3 problems, the coupling Möbius flow otherwise.
pub fn default_flow_spec(n: usize) -> FlowSpec {
    if n == 3 {
        FlowSpec::autoregressive_cover()
    } else {
        FlowSpec::coupling(n)
    }
}

/// One line of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub elapsed_secs: f64,
    pub eval_kl_bound: Option<f64>,
    pub eval_rel_abs_diff: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

impl TrainTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// The run stopped early; the returned flow holds the last good parameters.
    Aborted { iteration: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub flow: SphericalFlow,
    pub trace: TrainTrace,
    pub status: TrainStatus,
    /// Iterations whose update was applied.
    pub steps: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64, operator: Option<String>) -> Checkpoint {
        Checkpoint::new(&self.flow, self.steps, RngState { seed, stream: self.steps as u64, word_pos: 0 }, operator)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Per-row `n log ||A s||` and its gradient `n A^T A s / ||A s||^2`.
fn operator_terms<A: LinearOperator + ?Sized>(op: &A, points: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let n = op.dim();
    let rows: Vec<(f64, Vec<f64>)> = (0..points.nrows())
        .into_par_iter()
        .map(|r| {
            let s = points.row(r);
            let s = s.as_slice().expect("standard layout");
            let mut a_s = vec![0.0; n];
            op.apply(s, &mut a_s);
            let norm = stable_norm(&a_s);
            let mut grad = vec![0.0; n];
            op.apply_transpose(&a_s, &mut grad);
            let scale = n as f64 / (norm * norm);
            grad.iter_mut().for_each(|g| *g *= scale);
            (n as f64 * norm.ln(), grad)
        })
        .collect();
    let mut grads = Array2::zeros((points.nrows(), n));
    let mut vals = Vec::with_capacity(rows.len());
    for (r, (v, g)) in rows.into_iter().enumerate() {
        vals.push(v);
        grads.row_mut(r).iter_mut().zip(g).for_each(|(d, x)| *d = x);
    }
    (vals, grads)
}

/// Batch mean of the objective without recording.
pub fn objective_batch<A: LinearOperator + ?Sized>(op: &A, flow: &SphericalFlow, s0: ArrayView2<'_, f64>) -> Result<f64> {
    let pass = flow.forward_batch(s0, false)?;
    if pass.any_failed() {
        return Err(Error::Pole("objective batch contains a pole point".into()));
    }
    let mut scratch = vec![0.0; op.dim()];
    let total: f64 = pass
        .points
        .rows()
        .into_iter()
        .zip(&pass.logdet)
        .map(|(row, ld)| log_norm_n(op, row.as_slice().expect("standard layout"), &mut scratch) - ld)
        .sum();
    Ok(total / s0.nrows() as f64)
}

/// Batch mean of the objective and its gradient with respect to the flow
/// parameters. The base points are treated as constants.
pub fn objective_and_grad<A: LinearOperator + ?Sized>(
    op: &A,
    flow: &SphericalFlow,
    s0: ArrayView2<'_, f64>,
) -> Result<(f64, GradStore)> {
    let pass = flow.forward_batch(s0, true)?;
    objective_and_grad_of_pass(op, flow, &pass)
}

fn objective_and_grad_of_pass<A: LinearOperator + ?Sized>(
    op: &A,
    flow: &SphericalFlow,
    pass: &ForwardPass,
) -> Result<(f64, GradStore)> {
    if pass.any_failed() {
        return Err(Error::Pole("objective batch contains a pole point".into()));
    }
    let rows = pass.points.nrows();
    let w = 1.0 / rows as f64;
    let (vals, mut d_points) = operator_terms(op, pass.points.view());
    let value = vals.iter().zip(&pass.logdet).map(|(v, ld)| v - ld).sum::<f64>() * w;
    d_points.mapv_inplace(|g| g * w);
    let mut grads = flow.params().zero_grads();
    flow.backward(pass, d_points.view(), &vec![-w; rows], grads.as_mut_slice())?;
    Ok((value, grads))
}

/// Draws the batch for `iteration` and runs a recorded forward pass,
/// redrawing rows that hit a pole.
fn training_pass(flow: &SphericalFlow, batch: usize, seed: u64, iteration: usize) -> Result<ForwardPass> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let mut s0 = sample_uniform_batch(flow.dim(), batch, &mut rng)?;
    for _ in 0..MAX_RESAMPLES {
        let pass = flow.forward_batch(s0.view(), true)?;
        let bad: Vec<usize> = (0..batch).filter(|r| pass.failed[*r]).collect();
        if bad.is_empty() {
            return Ok(pass);
        }
        let fresh = sample_uniform_batch(flow.dim(), bad.len(), &mut rng)?;
        for (k, r) in bad.into_iter().enumerate() {
            s0.row_mut(r).assign(&fresh.row(k));
        }
    }
    Err(Error::Pole(format!("iteration {iteration}: batch kept hitting chart poles")))
}

/// Runs the configured number of Adam steps. `checkpoint`, when given,
/// is rewritten at the configured cadence and at the end (including after
/// an abort, with the last good parameters).
pub fn train(config: &TrainConfig, op: &OperatorHandle, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let oracle = check_operator(op)?;
    if config.flow.n != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: config.flow.n });
    }
    let mut flow = SphericalFlow::with_seed(&config.flow, config.seed)?;
    let mut adam = Adam::new(flow.params().len(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut trace = TrainTrace::default();
    let start = Instant::now();
    let mut initial = None;
    let mut above = 0usize;
    let mut status = TrainStatus::Completed;
    let mut steps = 0;
    let save = |flow: &SphericalFlow, steps: usize| -> Result<()> {
        if let Some(path) = checkpoint {
            let rng = RngState { seed: config.seed, stream: steps as u64, word_pos: 0 };
            Checkpoint::new(flow, steps, rng, Some(config.operator.clone())).save(path)?;
        }
        Ok(())
    };
    for it in 0..config.iterations {
        let result = training_pass(&flow, config.batch_size, config.seed, it)
            .and_then(|pass| objective_and_grad_of_pass(op, &flow, &pass));
        let (value, mut grads) = match result {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => {
                status = TrainStatus::Aborted { iteration: it, reason: format!("non-finite value in {what}") };
                break;
            }
            Err(e) => return Err(e),
        };
        let grad_norm = grads.norm();
        if !value.is_finite() || !grad_norm.is_finite() {
            status = TrainStatus::Aborted { iteration: it, reason: "non-finite objective or gradient".into() };
            break;
        }
        let init = *initial.get_or_insert(value);
        above = if value > init + DIVERGENCE_NATS { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            status = TrainStatus::Aborted {
                iteration: it,
                reason: format!("objective above initial + {DIVERGENCE_NATS} for {DIVERGENCE_PATIENCE} iterations"),
            };
            break;
        }
        if grad_norm > config.clip_norm {
            grads.scale(config.clip_norm / grad_norm);
        }
        let mut record = TrainRecord {
            iteration: it,
            objective: value,
            grad_norm,
            elapsed_secs: start.elapsed().as_secs_f64(),
            eval_kl_bound: None,
            eval_rel_abs_diff: None,
        };
        if config.eval_every > 0 && it % config.eval_every == 0 {
            let eval_seed = config.seed.wrapping_add(EVAL_SEED_OFFSET).wrapping_add(it as u64);
            record.eval_kl_bound = Some(kl_bound_estimate(op, &flow, config.eval_samples, eval_seed)?.value);
            let vde = vde_estimate(op, &flow, config.eval_samples, eval_seed)?;
            record.eval_rel_abs_diff = Some(relative_abs_diff(vde.det_estimate, oracle.abs_det())?);
        }
        trace.records.push(record);
        adam.step(flow.params_mut().values_mut(), grads.as_slice());
        steps = it + 1;
        if config.checkpoint_every > 0 && steps % config.checkpoint_every == 0 {
            save(&flow, steps)?;
        }
    }
    if let TrainStatus::Aborted { .. } = status {
        // the last applied update may be the one that went bad
        if flow.params().values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters after abort".into()));
        }
    }
    save(&flow, steps)?;
    Ok(TrainOutcome { flow, trace, status, steps })
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self { checkpoint: dir.join("checkpoint.json"), trace: dir.join("trace.csv") }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::load_fixture;

    #[test]
    fn identity_objective_matches_plain_evaluation() {
        let op = load_fixture("A2").unwrap();
        let flow = SphericalFlow::with_seed(&FlowSpec::coupling(10), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s0 = sample_uniform_batch(10, 100, &mut rng).unwrap();
        let (v, _) = objective_and_grad(&op, &flow, s0.view()).unwrap();
        let plain = objective_batch(&op, &flow, s0.view()).unwrap();
        assert_eq!(v.to_bits(), plain.to_bits());
        let mut scratch = vec![0.0; 10];
        let direct: f64 = s0.rows().into_iter().map(|r| log_norm_n(&op, r.as_slice().unwrap(), &mut scratch)).sum::<f64>() / 100.0;
        assert_eq!(v.to_bits(), direct.to_bits());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[5.0, -0.1]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-7);
    }

    #[test]
    fn profile_names() {
        assert_eq!("paper-conv".parse::<Profile>().unwrap(), Profile::PaperConv);
        assert!("huge".parse::<Profile>().is_err());
    }
}
