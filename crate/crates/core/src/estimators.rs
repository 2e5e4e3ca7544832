//! Monte Carlo and importance-sampled (VDE) estimates of `|det A|`, the
//! KL-bound estimate of `log |det A|`, and error statistics.
//!
//! Samples are drawn in chunks of [`CHUNK`]; chunk `c` uses ChaCha8 stream
//! `c` under the caller's seed and partial results are reduced in chunk
//! order, so every estimate depends only on `(seed, N)`.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{SphericalFlow, MAX_RESAMPLES};
use crate::operators::{exact_logabsdet, LinearOperator, LogAbsDet, OperatorHandle};
use crate::sphere::{sample_uniform_batch, stable_norm};

/// Samples per RNG stream.
pub const CHUNK: usize = 1024;

/// Largest per-sample log integrand that `exp` can represent.
const MAX_LOG_TERM: f64 = 709.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Vde,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::Vde => "vde",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub n_samples: usize,
    pub det_estimate: f64,
    pub log_det_estimate: f64,
    /// Sample mean of the integrand, an unbiased estimate of `1 / |det A|`.
    pub inv_det_estimate: f64,
    pub weight_mean: f64,
    /// Sample variance of the integrand (denominator `N - 1`, zero when `N = 1`).
    pub weight_variance: f64,
    /// `weight_variance / weight_mean^2`; scale free.
    pub relative_variance: f64,
    pub ess: f64,
    pub rel_abs_diff: Option<f64>,
    /// KL-bound estimate of `log |det A|` from the same samples (VDE only).
    pub kl_bound: Option<f64>,
    pub seed: u64,
}

impl EstimateReport {
    /// Standard error of `inv_det_estimate`.
    pub fn inv_det_std_error(&self) -> f64 {
        (self.weight_variance / self.n_samples as f64).sqrt()
    }

    /// Fills `rel_abs_diff` against a known determinant.
    pub fn with_truth(mut self, abs_det: f64) -> Result<Self> {
        self.rel_abs_diff = Some(relative_abs_diff(self.det_estimate, abs_det)?);
        Ok(self)
    }
}

/// Per-sample quantities: `log_terms[i] = logdet_i - n log ||A s_i||`.
#[derive(Debug, Clone)]
pub struct SampleTerms {
    pub log_terms: Vec<f64>,
    /// `log |det J_f(s0_i)|`; all zero for MC.
    pub logdet: Vec<f64>,
    /// `n log ||A s_i||`.
    pub log_norm_n: Vec<f64>,
}

/// Rejects singular or non-finite operators using the LU oracle.
pub fn check_operator(op: &OperatorHandle) -> Result<LogAbsDet> {
    let oracle = oracle_logabsdet(op);
    if oracle.is_singular() || !oracle.logabs.is_finite() {
        return Err(Error::Singular);
    }
    Ok(oracle)
}

/// Exact `log |det A|` by LU on the materialized matrix.
pub fn oracle_logabsdet<A: LinearOperator + ?Sized>(op: &A) -> LogAbsDet {
    exact_logabsdet(&op.materialize())
}

/// `n log ||A s||` for one point.
pub fn log_norm_n<A: LinearOperator + ?Sized>(op: &A, s: &[f64], scratch: &mut [f64]) -> f64 {
    op.apply(s, scratch);
    s.len() as f64 * stable_norm(scratch).ln()
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Draws chunk `c` and pushes it through `flow` (if any); pole hits are
/// replaced by fresh draws from the same stream.
fn chunk_points(
    n: usize,
    count: usize,
    flow: Option<&SphericalFlow>,
    seed: u64,
    chunk: usize,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut rng = chunk_rng(seed, chunk);
    let s0 = sample_uniform_batch(n, count, &mut rng)?;
    let Some(flow) = flow else {
        return Ok((s0, vec![0.0; count]));
    };
    let mut pass = flow.forward_batch(s0.view(), false)?;
    for _ in 0..MAX_RESAMPLES {
        let bad: Vec<usize> = (0..count).filter(|r| pass.failed[*r]).collect();
        if bad.is_empty() {
            return Ok((pass.points, pass.logdet));
        }
        let fresh = sample_uniform_batch(n, bad.len(), &mut rng)?;
        let redo = flow.forward_batch(fresh.view(), false)?;
        for (k, r) in bad.iter().enumerate() {
            if !redo.failed[k] {
                pass.points.row_mut(*r).assign(&redo.points.row(k));
                pass.logdet[*r] = redo.logdet[k];
                pass.failed[*r] = false;
            }
        }
    }
    Err(Error::Pole(format!("chunk {chunk}: no valid sample after {MAX_RESAMPLES} redraws")))
}

/// Evaluates the integrand on `samples` draws, from the uniform law when
/// `flow` is `None` and from the flow's pushforward otherwise.
pub fn sample_terms<A: LinearOperator + ?Sized>(
    op: &A,
    flow: Option<&SphericalFlow>,
    samples: usize,
    seed: u64,
) -> Result<SampleTerms> {
    let n = op.dim();
    if samples == 0 {
        return Err(Error::Invalid("sample count must be >= 1".into()));
    }
    if let Some(f) = flow {
        if f.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: f.dim() });
        }
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(samples - c * CHUNK);
            let (points, logdet) = chunk_points(n, count, flow, seed, c)?;
            let mut scratch = vec![0.0; n];
            let norms = points.rows().into_iter().map(|row| log_norm_n(op, row.as_slice().expect("standard layout"), &mut scratch)).collect();
            Ok((logdet, norms))
        })
        .collect();
    let mut out = SampleTerms {
        log_terms: Vec::with_capacity(samples),
        logdet: Vec::with_capacity(samples),
        log_norm_n: Vec::with_capacity(samples),
    };
    for part in parts {
        let (logdet, norms) = part?;
        out.logdet.extend(logdet);
        out.log_norm_n.extend(norms);
    }
    for (i, (ld, ln)) in out.logdet.iter().zip(&out.log_norm_n).enumerate() {
        let t = ld - ln;
        if !ln.is_finite() || t > MAX_LOG_TERM {
            return Err(Error::WeightOverflow { index: i, log_norm_n: *ln });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("importance weight of sample {i}")));
        }
        out.log_terms.push(t);
    }
    Ok(out)
}

/// Reduces per-sample log integrands to a report.
pub fn report_from_terms(method: Method, terms: &SampleTerms, seed: u64) -> EstimateReport {
    let t = &terms.log_terms;
    let count = t.len() as f64;
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = t.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = scaled.iter().sum();
    let sum_sq: f64 = scaled.iter().map(|v| v * v).sum();
    let mean_scaled = sum / count;
    let log_inv = m + mean_scaled.ln();
    let var_scaled = if t.len() > 1 {
        scaled.iter().map(|v| (v - mean_scaled).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    let inv_det = log_inv.exp();
    let kl_bound = (method == Method::Vde).then(|| {
        terms.logdet.iter().zip(&terms.log_norm_n).map(|(ld, ln)| ln - ld).sum::<f64>() / count
    });
    EstimateReport {
        method,
        n_samples: t.len(),
        det_estimate: 1.0 / inv_det,
        log_det_estimate: -log_inv,
        inv_det_estimate: inv_det,
        weight_mean: inv_det,
        weight_variance: var_scaled * (2.0 * m).exp(),
        relative_variance: var_scaled / (mean_scaled * mean_scaled),
        ess: sum * sum / sum_sq,
        rel_abs_diff: None,
        kl_bound,
        seed,
    }
}

/// Naive estimator: mean of `||A s_i||^{-n}` over uniform `s_i`.
pub fn mc_estimate(op: &OperatorHandle, samples: usize, seed: u64) -> Result<EstimateReport> {
    if let OperatorHandle::Dense(_) = op {
        check_operator(op)?;
    }
    let terms = sample_terms(op, None, samples, seed)?;
    Ok(report_from_terms(Method::Mc, &terms, seed))
}

/// Importance-sampled estimator with the flow as proposal. The base draws
/// are the ones [`mc_estimate`] uses for the same seed.
pub fn vde_estimate(op: &OperatorHandle, flow: &SphericalFlow, samples: usize, seed: u64) -> Result<EstimateReport> {
    if let OperatorHandle::Dense(_) = op {
        check_operator(op)?;
    }
    let terms = sample_terms(op, Some(flow), samples, seed)?;
    Ok(report_from_terms(Method::Vde, &terms, seed))
}

/// Monte Carlo value of the KL bound with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBound {
    pub value: f64,
    pub variance: f64,
    pub std_error: f64,
}

/// Mean of `-log |det J_f(s0)| + n log ||A f(s0)||` over uniform `s0`;
/// an upper bound on `log |det A|` in expectation.
pub fn kl_bound_estimate(op: &OperatorHandle, flow: &SphericalFlow, samples: usize, seed: u64) -> Result<KlBound> {
    let terms = sample_terms(op, Some(flow), samples, seed)?;
    let vals: Vec<f64> = terms.logdet.iter().zip(&terms.log_norm_n).map(|(ld, ln)| ln - ld).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("KL-bound term of sample {i}")));
    }
    let count = vals.len() as f64;
    let value = vals.iter().sum::<f64>() / count;
    let variance = if vals.len() > 1 { vals.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (count - 1.0) } else { 0.0 };
    Ok(KlBound { value, variance, std_error: (variance / count).sqrt() })
}

pub fn relative_abs_diff(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::Invalid("relative difference against a zero truth".into()));
    }
    Ok((estimate - truth).abs() / truth.abs())
}

/// Mean and sample standard deviation (denominator `trials - 1`) of
/// `runner(0), ..., runner(trials - 1)`.
pub fn repeated_trial_stats<F>(mut runner: F, trials: usize) -> Result<(f64, f64)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if trials < 2 {
        return Err(Error::Invalid(format!("need at least 2 trials, got {trials}")));
    }
    let vals = (0..trials).map(&mut runner).collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&vals))
}

/// Mean and sample standard deviation; the deviation is zero for one value.
pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    let count = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / count;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    (mean, var.sqrt())
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub fixture: String,
    pub method: Method,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub seed: u64,
    pub det_estimate: f64,
    pub log_det_estimate: f64,
    pub rel_abs_diff: Option<f64>,
    pub ess: f64,
}

impl ResultRow {
    pub fn new(fixture: &str, report: &EstimateReport) -> Self {
        Self {
            fixture: fixture.to_string(),
            method: report.method,
            n_samples: report.n_samples,
            seed: report.seed,
            det_estimate: report.det_estimate,
            log_det_estimate: report.log_det_estimate,
            rel_abs_diff: report.rel_abs_diff,
            ess: report.ess,
        }
    }
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`append_rows`].
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FlowSpec;
    use crate::operators::{load_fixture, DenseOperator};

    #[test]
    fn identity_operator_has_zero_variance() {
        let op: OperatorHandle = DenseOperator::identity(10).into();
        let r = mc_estimate(&op, 500, 1).unwrap();
        assert!((r.inv_det_estimate - 1.0).abs() < 1e-13);
        assert!(r.weight_variance < 1e-25);
    }

    #[test]
    fn isotropic_scaling() {
        let op: OperatorHandle = DenseOperator::identity(10).scaled(2.0).into();
        let r = mc_estimate(&op, 300, 4).unwrap();
        assert!((r.det_estimate - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn vde_equals_mc_at_identity() {
        let op = load_fixture("A1").unwrap();
        let flow = SphericalFlow::with_seed(&FlowSpec::coupling(10), 9).unwrap();
        for n in [1, 100, 1500] {
            let mc = mc_estimate(&op, n, 5).unwrap();
            let vde = vde_estimate(&op, &flow, n, 5).unwrap();
            assert_eq!(mc.det_estimate.to_bits(), vde.det_estimate.to_bits());
            assert_eq!(mc.log_det_estimate.to_bits(), vde.log_det_estimate.to_bits());
        }
    }

    #[test]
    fn rel_abs_diff_cases() {
        assert!((relative_abs_diff(520.0, 520.36).unwrap() - 0.000_691_8).abs() < 1e-6);
        assert_eq!(relative_abs_diff(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(relative_abs_diff(6.0, 3.0).unwrap(), 1.0);
        assert!(relative_abs_diff(1.0, 0.0).is_err());
    }

    #[test]
    fn trial_stats() {
        let vals = [1.0, 2.0, 3.0];
        assert_eq!(repeated_trial_stats(|i| Ok(vals[i]), 3).unwrap(), (2.0, 1.0));
        assert_eq!(repeated_trial_stats(|_| Ok(4.5), 5).unwrap(), (4.5, 0.0));
        assert!(repeated_trial_stats(|_| Ok(1.0), 1).is_err());
    }

    #[test]
    fn singular_operator_is_rejected() {
        let op: OperatorHandle = DenseOperator::diagonal(&[1.0, 0.0, 2.0]).into();
        assert!(matches!(mc_estimate(&op, 10, 0), Err(Error::Singular)));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let op = load_fixture("cover3x3").unwrap();
        let r = mc_estimate(&op, 100, 2).unwrap().with_truth(oracle_logabsdet(&op).abs_det()).unwrap();
        append_rows(&path, &[ResultRow::new("cover3x3", &r)]).unwrap();
        append_rows(&path, &[ResultRow::new("cover3x3", &r)]).unwrap();
        let rows = read_rows(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], ResultRow::new("cover3x3", &r));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("fixture,method,N,seed,det_estimate,log_det_estimate,rel_abs_diff,ess"));
    }
}
