//! Normalizing flows on `S^{n-1}` built from Möbius circle transforms and
//! rational-quadratic splines in the cylinder chart.

mod layer;
pub mod moebius;
pub mod spline;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{adjoint_of, Layout, MlpTrace, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::sphere::{self, log_uniform_density, SpherePoint};
use layer::{autoregressive_plan, coupling_plan, FlowLayer};

pub use moebius::{CircleTransform, MoebiusCircle, MAX_CENTER_RADIUS};
pub use spline::{RqSpline, SplineDomain};

/// How coordinates are split into conditioning and transformed sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Masking {
    Coupling,
    Autoregressive,
}

/// Transform used for the angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircleKind {
    Moebius,
    Spline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionerSpec {
    pub hidden: Vec<usize>,
}

impl Default for ConditionerSpec {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

fn default_centers() -> usize {
    12
}

fn default_true() -> bool {
    true
}

/// Flow architecture, as read from JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub n: usize,
    pub n_layers: usize,
    pub masking: Masking,
    pub circle: CircleKind,
    #[serde(default = "default_centers")]
    pub n_centers: usize,
    pub n_bins: usize,
    #[serde(default)]
    pub conditioner: ConditionerSpec,
    /// Conjugate each layer by a fixed random rotation.
    #[serde(default = "default_true")]
    pub rotations: bool,
}

impl FlowSpec {
    /// Coupling flow used for the dense and convolution experiments:
    /// 8 layers, 12 Möbius centers, 16 spline bins.
    pub fn coupling(n: usize) -> Self {
        Self {
            n,
            n_layers: 8,
            masking: Masking::Coupling,
            circle: CircleKind::Moebius,
            n_centers: 12,
            n_bins: 16,
            conditioner: ConditionerSpec::default(),
            rotations: true,
        }
    }

    /// Autoregressive flow used for the 3x3 cover matrix: 6 layers,
    /// splines with 32 bins on both the angle and the interval.
    pub fn autoregressive_cover() -> Self {
        Self {
            n: 3,
            n_layers: 6,
            masking: Masking::Autoregressive,
            circle: CircleKind::Spline,
            n_centers: 12,
            n_bins: 32,
            conditioner: ConditionerSpec::default(),
            rotations: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Invalid(format!("flow dimension must be >= 2, got {}", self.n)));
        }
        if self.n_layers == 0 || self.n_bins == 0 || (self.circle == CircleKind::Moebius && self.n_centers == 0) {
            return Err(Error::Invalid("n_layers, n_bins and n_centers must be positive".into()));
        }
        if self.n_bins as f64 * spline::MIN_BIN_FRACTION >= 1.0 {
            return Err(Error::Invalid(format!("too many bins: {}", self.n_bins)));
        }
        Ok(())
    }
}

const ROTATION_SEED: u64 = 0x5eed_0f_7a7e;

/// Haar-ish orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn random_rotation(n: usize, layer: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(ROTATION_SEED);
    rng.set_stream(layer as u64);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let norm = sphere::stable_norm(&v);
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

/// Per-layer state kept by a recorded forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    input: Array2<f64>,
    mlp: Vec<MlpTrace>,
}

/// Output of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `f(s0)` as rows.
    pub points: Array2<f64>,
    /// `log |det J_f(s0)|` with respect to surface measure.
    pub logdet: Vec<f64>,
    /// Rows that hit a chart pole or the measure floor; their `points`
    /// and `logdet` are not meaningful.
    pub failed: Vec<bool>,
    traces: Vec<LayerTrace>,
}

impl ForwardPass {
    pub fn any_failed(&self) -> bool {
        self.failed.iter().any(|f| *f)
    }
}

/// Retries allowed when a uniform draw lands on a chart pole.
pub const MAX_RESAMPLES: usize = 100;

/// A flow architecture together with its parameters.
#[derive(Debug, Clone)]
pub struct SphericalFlow {
    spec: FlowSpec,
    layers: Vec<FlowLayer>,
    params: ParamStore,
}

impl SphericalFlow {
    /// Builds the architecture with identity-initialized parameters
    /// (hidden layers drawn from seed 0).
    pub fn new(spec: &FlowSpec) -> Result<Self> {
        Self::with_seed(spec, 0)
    }

    pub fn with_seed(spec: &FlowSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut layout = Layout::new();
        let layers = (0..spec.n_layers)
            .map(|l| {
                let plan = match spec.masking {
                    Masking::Coupling => coupling_plan(spec.n, l),
                    Masking::Autoregressive => autoregressive_plan(spec.n, l),
                };
                let rotation = spec.rotations.then(|| random_rotation(spec.n, l));
                FlowLayer::new(spec, plan, rotation, &mut layout, &format!("layer{l}"))
            })
            .collect();
        let mut flow = Self { spec: spec.clone(), layers, params: ParamStore::zeros(layout) };
        flow.params = flow.init_params(seed);
        Ok(flow)
    }

    pub fn with_params(spec: &FlowSpec, params: ParamStore) -> Result<Self> {
        let mut flow = Self::new(spec)?;
        if params.layout() != flow.params.layout() {
            return Err(Error::Invalid("parameter layout does not match the flow architecture".into()));
        }
        flow.params = params;
        Ok(flow)
    }

    /// Hidden layers drawn from `seed`; every head zero.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::zeros(self.params.layout().clone());
        for layer in &self.layers {
            for step in &layer.steps {
                step.conditioner.init(p.values_mut(), &mut rng);
            }
        }
        p
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.n
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Overwrites the parameters with draws from `U(-scale, scale)`,
    /// heads included. Used to get a non-trivial flow in tests and demos.
    pub fn randomize<G: Rng>(&mut self, rng: &mut G, scale: f64) {
        for v in self.params.values_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }

    /// True when every layer has a zero head, i.e. the flow is exactly the identity.
    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| l.is_identity(self.params.values()))
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.spec.n {
            return Err(Error::DimensionMismatch { expected: self.spec.n, got });
        }
        Ok(())
    }

    /// Batched forward pass. Layers whose heads are all zero are exact
    /// identities and pass points through untouched. With `record` set
    /// the pass keeps what [`SphericalFlow::backward`] needs.
    pub fn forward_batch(&self, s0: ArrayView2<'_, f64>, record: bool) -> Result<ForwardPass> {
        self.check_dim(s0.ncols())?;
        let params = self.params.values();
        let rows = s0.nrows();
        let mut points = s0.to_owned();
        let mut logdet = vec![0.0; rows];
        let mut failed = vec![false; rows];
        let mut traces = Vec::new();
        for layer in &self.layers {
            let identity = layer.is_identity(params);
            if identity && !record {
                continue;
            }
            let coords: Vec<Option<Vec<f64>>> = (0..rows)
                .into_par_iter()
                .map(|r| {
                    if failed[r] {
                        return None;
                    }
                    layer.coords(points.row(r).as_slice().expect("standard layout")).ok()
                })
                .collect();
            let mut mlp = Vec::with_capacity(layer.steps.len());
            for step in &layer.steps {
                let mut feats = Array2::zeros((rows, step.conditioner.in_dim()));
                for (r, c) in coords.iter().enumerate() {
                    if let Some(c) = c {
                        for (dst, v) in feats.row_mut(r).iter_mut().zip(step.features(c)) {
                            *dst = v;
                        }
                    }
                }
                mlp.push(step.conditioner.forward_batch(params, feats)?);
            }
            let input = record.then(|| points.clone());
            if !identity {
                let results: Vec<Option<(Vec<f64>, f64)>> = (0..rows)
                    .into_par_iter()
                    .map(|r| {
                        let c = coords[r].as_ref()?;
                        let raws: Vec<&[f64]> =
                            mlp.iter().map(|t| t.output().row(r).to_slice().expect("standard layout")).collect();
                        layer.apply(c, &raws).ok()
                    })
                    .collect();
                for (r, res) in results.into_iter().enumerate() {
                    match res {
                        Some((out, ld)) => {
                            points.row_mut(r).iter_mut().zip(out).for_each(|(d, v)| *d = v);
                            logdet[r] += ld;
                        }
                        None => failed[r] = true,
                    }
                }
            } else {
                for (r, c) in coords.iter().enumerate() {
                    if c.is_none() {
                        failed[r] = true;
                    }
                }
            }
            if let Some(input) = input {
                traces.push(LayerTrace { input, mlp });
            }
        }
        Ok(ForwardPass { points, logdet, failed, traces })
    }

    /// Reverse pass for a recorded [`ForwardPass`]. `d_points` and
    /// `d_logdet` are the adjoints of the outputs; parameter gradients are
    /// added to `grads`. Failed rows must carry zero adjoints.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_points: ArrayView2<'_, f64>,
        d_logdet: &[f64],
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        if pass.traces.len() != self.layers.len() {
            return Err(Error::Invalid("forward pass was not recorded".into()));
        }
        let n = self.spec.n;
        let rows = pass.points.nrows();
        let params = self.params.values();
        let mut d_s = d_points.to_owned();
        for (layer, trace) in self.layers.iter().zip(&pass.traces).rev() {
            let out_dims: Vec<usize> = layer.steps.iter().map(|s| s.conditioner.out_dim()).collect();
            // sweep 1: transforms, with the raw conditioner outputs as leaves
            let per_row: Vec<Result<Option<(Vec<f64>, Vec<f64>)>>> = (0..rows)
                .into_par_iter()
                .map_init(
                    || Tape::with_capacity(8192),
                    |tape, r| {
                        if pass.failed[r] {
                            return Ok(None);
                        }
                        tape.clear();
                        row_transform_adjoint(
                            tape,
                            layer,
                            trace,
                            r,
                            d_s.row(r).as_slice().expect("standard layout"),
                            d_logdet[r],
                        )
                        .map(Some)
                    },
                )
                .collect();
            let mut d_raw: Vec<Array2<f64>> = out_dims.iter().map(|d| Array2::zeros((rows, *d))).collect();
            let mut d_in = Array2::zeros((rows, n));
            for (r, res) in per_row.into_iter().enumerate() {
                if let Some((raw_adj, s_adj)) = res? {
                    let mut off = 0;
                    for (k, d) in out_dims.iter().enumerate() {
                        d_raw[k].row_mut(r).iter_mut().zip(&raw_adj[off..off + d]).for_each(|(a, b)| *a = *b);
                        off += d;
                    }
                    d_in.row_mut(r).iter_mut().zip(s_adj).for_each(|(a, b)| *a = b);
                }
            }
            // conditioner networks
            let d_feat: Vec<Array2<f64>> = layer
                .steps
                .iter()
                .zip(&trace.mlp)
                .zip(d_raw)
                .map(|((step, t), d)| step.conditioner.backward_batch(params, t, d, grads))
                .collect();
            // sweep 2: features back to the layer input
            if layer.steps.iter().any(|s| s.conditioner.in_dim() > 0) {
                let extra: Vec<Option<Vec<f64>>> = (0..rows)
                    .into_par_iter()
                    .map_init(
                        || Tape::with_capacity(1024),
                        |tape, r| {
                            if pass.failed[r] {
                                return None;
                            }
                            tape.clear();
                            Some(row_feature_adjoint(tape, layer, trace, r, &d_feat))
                        },
                    )
                    .collect();
                for (r, e) in extra.into_iter().enumerate() {
                    if let Some(e) = e {
                        d_in.row_mut(r).iter_mut().zip(e).for_each(|(a, b)| *a += b);
                    }
                }
            }
            d_s = d_in;
        }
        Ok(d_s)
    }

    /// Forward map and log-determinant over any [`Real`], with every layer
    /// evaluated (no identity skipping). `params` replaces the stored values.
    pub fn forward_generic<R: Real>(&self, params: &[R], s0: &[R]) -> Result<(Vec<R>, R)> {
        self.check_dim(s0.len())?;
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: params.len() });
        }
        let mut s = s0.to_vec();
        let mut logdet = R::cst(0.0);
        for layer in &self.layers {
            let c = layer.coords(&s)?;
            let raws = layer
                .steps
                .iter()
                .map(|step| step.conditioner.forward(params, &step.features(&c)))
                .collect::<Result<Vec<_>>>()?;
            let raw_refs: Vec<&[R]> = raws.iter().map(|v| v.as_slice()).collect();
            let (out, ld) = layer.apply(&c, &raw_refs)?;
            s = out;
            logdet = logdet + ld;
        }
        Ok((s, logdet))
    }

    /// `(f(s0), log |det J_f(s0)|)` for one point.
    pub fn flow_forward(&self, s0: &SpherePoint) -> Result<(SpherePoint, f64)> {
        self.check_dim(s0.dim())?;
        let pass = self.forward_batch(ArrayView2::from_shape((1, self.spec.n), s0.as_slice()).expect("one row"), false)?;
        if pass.failed[0] {
            return Err(Error::Pole("flow_forward hit a chart pole or the measure floor".into()));
        }
        Ok((SpherePoint::from_unit(pass.points.row(0).to_vec()), pass.logdet[0]))
    }

    /// Inverse map: returns `f^{-1}(s)` and `log |det J_f|` at that point.
    pub fn flow_inverse(&self, s: &SpherePoint) -> Result<(SpherePoint, f64)> {
        self.check_dim(s.dim())?;
        let params = self.params.values();
        let mut point = s.as_slice().to_vec();
        let mut logdet = 0.0;
        for layer in self.layers.iter().rev() {
            if layer.is_identity(params) {
                continue;
            }
            let c_out = layer.coords(&point)?;
            layer::check_measure_floor(&c_out)?;
            let mut c = c_out.clone();
            for (k, step) in layer.steps.iter().enumerate() {
                let raw = step.conditioner.forward(params, &step.features(&c))?;
                logdet += layer.invert_step(k, &mut c, &raw)?;
            }
            logdet += sphere::log_measure(&c_out[1..]) - sphere::log_measure(&c[1..]);
            point = layer.point(&c);
        }
        Ok((SpherePoint::new(point)?, logdet))
    }

    /// `log q(s)` for the pushforward of the uniform law.
    pub fn flow_log_density(&self, s: &SpherePoint) -> Result<f64> {
        let (_, logdet) = self.flow_inverse(s)?;
        Ok(log_uniform_density(self.spec.n) - logdet)
    }

    /// Draws `s ~ q` and returns it with `log q(s)`. Pole hits are
    /// redrawn up to [`MAX_RESAMPLES`] times.
    pub fn flow_sample<G: RngCore>(&self, rng: &mut G) -> Result<(SpherePoint, f64)> {
        for _ in 0..MAX_RESAMPLES {
            let s0 = sphere::sample_uniform(self.spec.n, rng)?;
            match self.flow_forward(&s0) {
                Ok((s, logdet)) => return Ok((s, log_uniform_density(self.spec.n) - logdet)),
                Err(Error::Pole(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Pole(format!("no valid sample after {MAX_RESAMPLES} draws")))
    }
}

/// Sweep 1 for one row: returns the adjoints of the raw conditioner
/// outputs (steps concatenated) and the direct part of the adjoint of the
/// layer input.
fn row_transform_adjoint(
    tape: &Tape,
    layer: &FlowLayer,
    trace: &LayerTrace,
    r: usize,
    d_out: &[f64],
    d_logdet: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s_in = trace.input.row(r);
    let u = layer.rotate(s_in.as_slice().expect("standard layout"), false);
    let u_vars = tape.vars(&u);
    let (theta, z) = sphere::cylinder_of(&u_vars)?;
    let mut c = Vec::with_capacity(z.len() + 1);
    c.push(theta);
    c.extend(z);
    let raw_vars: Vec<Vec<Var<'_>>> = trace
        .mlp
        .iter()
        .map(|t| tape.vars(t.output().row(r).as_slice().expect("standard layout")))
        .collect();
    let raw_refs: Vec<&[Var<'_>]> = raw_vars.iter().map(|v| v.as_slice()).collect();
    let (v, ld) = layer.apply_frame(&c, &raw_refs)?;
    // the output is R^T v, so the adjoint of v is R d_out
    let d_v = layer.rotate(d_out, false);
    let mut seeds: Vec<(Var<'_>, f64)> = v.iter().copied().zip(d_v).collect();
    seeds.push((ld, d_logdet));
    let mut adj = Vec::new();
    tape.backward_into(&seeds, &mut adj);
    tape.check()?;
    let raw_adj = raw_vars.iter().flatten().map(|x| adjoint_of(&adj, *x)).collect();
    let d_u: Vec<f64> = u_vars.iter().map(|x| adjoint_of(&adj, *x)).collect();
    Ok((raw_adj, layer.rotate(&d_u, true)))
}

/// Sweep 2 for one row: pulls the conditioner input adjoints back to the
/// layer input.
fn row_feature_adjoint(tape: &Tape, layer: &FlowLayer, trace: &LayerTrace, r: usize, d_feat: &[Array2<f64>]) -> Vec<f64> {
    let u = layer.rotate(trace.input.row(r).as_slice().expect("standard layout"), false);
    let u_vars = tape.vars(&u);
    let Ok((theta, z)) = sphere::cylinder_of(&u_vars) else {
        return vec![0.0; u.len()];
    };
    let mut c = Vec::with_capacity(z.len() + 1);
    c.push(theta);
    c.extend(z);
    let mut seeds = Vec::new();
    for (step, d) in layer.steps.iter().zip(d_feat) {
        for (f, w) in step.features(&c).into_iter().zip(d.row(r)) {
            seeds.push((f, *w));
        }
    }
    let mut adj = Vec::new();
    tape.backward_into(&seeds, &mut adj);
    let d_u: Vec<f64> = u_vars.iter().map(|x| adjoint_of(&adj, *x)).collect();
    layer.rotate(&d_u, true)
}
