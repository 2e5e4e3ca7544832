use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Real, Tape, Var};
use crate::error::{Error, Result};

/// One named block of parameters inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Ordered registry of contiguous, non-overlapping segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its range in the flat vector.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> Range<usize> {
        let seg = Segment { name: name.into(), offset: self.len(), shape: shape.to_vec() };
        let r = seg.range();
        self.segments.push(seg);
        r
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.size())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Checks contiguity; used when a layout comes from disk.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.offset != next {
                return Err(Error::Invalid(format!("segment `{}` starts at {} (expected {next})", s.name, s.offset)));
            }
            next += s.size();
        }
        Ok(())
    }
}

/// Flat vector of every trainable parameter plus its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    layout: Layout,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_parts(layout: Layout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch { expected: layout.len(), got: values.len() });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }

    pub fn zero_grads(&self) -> GradStore {
        GradStore { grads: vec![0.0; self.values.len()] }
    }
}

/// Gradient accumulator with the same layout as a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    grads: Vec<f64>,
}

impl GradStore {
    pub fn from_vec(grads: Vec<f64>) -> Self {
        Self { grads }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grads
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds another accumulator of the same length.
    pub fn accumulate(&mut self, other: &GradStore) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.grads.iter_mut().for_each(|g| *g *= c);
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Records `objective` on a fresh tape with every parameter as a leaf and
/// returns its value together with the exact gradient.
pub fn value_and_grad<F>(params: &ParamStore, objective: F) -> Result<(f64, GradStore)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves = tape.vars(params.values());
    let out = objective(&leaves);
    tape.check()?;
    let value = out.value();
    if !value.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let adj = tape.gradient(out);
    let grads = leaves.iter().map(|v| adj.wrt(*v)).collect();
    Ok((value, GradStore { grads }))
}
