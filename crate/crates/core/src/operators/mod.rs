//! Linear operators seen only through matrix-vector products, plus an exact
//! LU oracle and the embedded fixture matrices.

pub mod fixtures;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A square linear map on `R^n`.
///
/// Estimators only ever call [`LinearOperator::apply`]; training additionally
/// needs the transpose product to pull gradients back through `A`.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// `out = A x` without validation. Both slices have length `dim()`.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `out = A^T y` without validation.
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);

    /// Checked matrix-vector product.
    fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matvec input at index {i}")));
        }
        let mut out = vec![0.0; n];
        self.apply(x, &mut out);
        Ok(out)
    }

    /// Dense matrix whose column `j` is `A e_j`.
    fn materialize(&self) -> DenseOperator {
        let n = self.dim();
        let mut entries = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                entries[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        DenseOperator { n, entries }
    }
}

/// Row-major dense `n x n` matrix.
#[derive(Clone, PartialEq)]
pub struct DenseOperator {
    n: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for DenseOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseOperator").field("n", &self.n).finish_non_exhaustive()
    }
}

impl DenseOperator {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Invalid("empty matrix".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::NotSquare { rows: n, row: i, cols: row.len() });
            }
            entries.extend_from_slice(row);
        }
        Self::from_row_major(n, entries)
    }

    pub fn from_row_major(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry ({}, {})", i / n, i % n)));
        }
        Ok(Self { n, entries })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            entries[i * n + i] = *d;
        }
        Self { n, entries }
    }

    /// `c * A`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, entries: self.entries.iter().map(|v| c * v).collect() }
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &DenseOperator) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                for j in 0..n {
                    entries[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (o, row) in out.iter_mut().zip(self.entries.chunks_exact(self.n)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (yi, row) in y.iter().zip(self.entries.chunks_exact(self.n)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }

    fn materialize(&self) -> DenseOperator {
        self.clone()
    }
}

/// Whether the filter is slid as-is (cross-correlation, the deep-learning
/// convention) or flipped by 180 degrees first (true convolution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Correlation,
    Convolution,
}

/// A 3x3 filter applied to a square single-channel image with zero padding
/// and stride 1. Pixels are indexed row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOperator {
    filter: [[f64; 3]; 3],
    image_side: usize,
    orientation: Orientation,
}

impl ConvOperator {
    pub fn new(filter: [[f64; 3]; 3], image_side: usize, orientation: Orientation) -> Result<Self> {
        if image_side == 0 {
            return Err(Error::Invalid("image_side must be positive".into()));
        }
        if filter.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution filter".into()));
        }
        Ok(Self { filter, image_side, orientation })
    }

    pub fn filter(&self) -> &[[f64; 3]; 3] {
        &self.filter
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn with_orientation(&self, orientation: Orientation) -> Self {
        Self { orientation, ..self.clone() }
    }

    /// Filter tap applied to the neighbour at offset `(da, db)` in `-1..=1`.
    fn tap(&self, da: isize, db: isize) -> f64 {
        let (a, b) = match self.orientation {
            Orientation::Correlation => (da + 1, db + 1),
            Orientation::Convolution => (1 - da, 1 - db),
        };
        self.filter[a as usize][b as usize]
    }

    fn neighbours(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let side = self.image_side as isize;
        (-1isize..=1).flat_map(move |da| (-1isize..=1).map(move |db| (da, db))).filter_map(move |(da, db)| {
            let (ii, jj) = (i as isize + da, j as isize + db);
            (ii >= 0 && ii < side && jj >= 0 && jj < side)
                .then(|| ((ii * side + jj) as usize, self.tap(da, db)))
        })
    }
}

impl LinearOperator for ConvOperator {
    fn dim(&self) -> usize {
        self.image_side * self.image_side
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let side = self.image_side;
        for i in 0..side {
            for j in 0..side {
                out[i * side + j] = self.neighbours(i, j).map(|(c, w)| w * x[c]).sum();
            }
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let side = self.image_side;
        for i in 0..side {
            for j in 0..side {
                let yr = y[i * side + j];
                for (c, w) in self.neighbours(i, j) {
                    out[c] += w * yr;
                }
            }
        }
    }
}

/// Any operator the crate knows how to build from a fixture name or file.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorHandle {
    Dense(DenseOperator),
    Conv(ConvOperator),
}

impl OperatorHandle {
    /// Scaled copy; convolution operators are materialized first.
    pub fn scaled(&self, c: f64) -> OperatorHandle {
        OperatorHandle::Dense(self.materialize().scaled(c))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: OperatorFile = serde_json::from_str(s)?;
        file.build()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = match self {
            OperatorHandle::Dense(d) => OperatorFile::Dense { entries: d.to_rows() },
            OperatorHandle::Conv(c) => OperatorFile::Conv {
                filter: c.filter.iter().map(|r| r.to_vec()).collect(),
                image_side: c.image_side,
                orientation: c.orientation,
            },
        };
        Ok(serde_json::to_string(&file)?)
    }
}

impl From<DenseOperator> for OperatorHandle {
    fn from(d: DenseOperator) -> Self {
        OperatorHandle::Dense(d)
    }
}

impl From<ConvOperator> for OperatorHandle {
    fn from(c: ConvOperator) -> Self {
        OperatorHandle::Conv(c)
    }
}

impl LinearOperator for OperatorHandle {
    fn dim(&self) -> usize {
        match self {
            OperatorHandle::Dense(d) => d.dim(),
            OperatorHandle::Conv(c) => c.dim(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            OperatorHandle::Dense(d) => d.apply(x, out),
            OperatorHandle::Conv(c) => c.apply(x, out),
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        match self {
            OperatorHandle::Dense(d) => d.apply_transpose(y, out),
            OperatorHandle::Conv(c) => c.apply_transpose(y, out),
        }
    }

    fn materialize(&self) -> DenseOperator {
        match self {
            OperatorHandle::Dense(d) => d.clone(),
            OperatorHandle::Conv(c) => c.materialize(),
        }
    }
}

/// On-disk operator description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OperatorFile {
    Dense {
        entries: Vec<Vec<f64>>,
    },
    Conv {
        filter: Vec<Vec<f64>>,
        image_side: usize,
        #[serde(default)]
        orientation: Orientation,
    },
}

impl OperatorFile {
    pub fn build(&self) -> Result<OperatorHandle> {
        match self {
            OperatorFile::Dense { entries } => Ok(DenseOperator::from_rows(entries)?.into()),
            OperatorFile::Conv { filter, image_side, orientation } => {
                if filter.len() != 3 || filter.iter().any(|r| r.len() != 3) {
                    return Err(Error::Invalid("convolution filter must be 3x3".into()));
                }
                let mut k = [[0.0; 3]; 3];
                for (dst, src) in k.iter_mut().zip(filter) {
                    dst.copy_from_slice(src);
                }
                Ok(ConvOperator::new(k, *image_side, *orientation)?.into())
            }
        }
    }
}

/// Sign and log-magnitude of a determinant. A singular matrix has
/// `sign == 0` and `logabs == -inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAbsDet {
    pub sign: i8,
    pub logabs: f64,
}

impl LogAbsDet {
    pub fn is_singular(&self) -> bool {
        self.sign == 0
    }

    pub fn abs_det(&self) -> f64 {
        self.logabs.exp()
    }
}

/// LU decomposition with partial pivoting.
pub fn exact_logabsdet(op: &DenseOperator) -> LogAbsDet {
    let n = op.n;
    let mut lu = op.entries.clone();
    let mut sign = 1i8;
    let mut logabs = 0.0;
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|r| (r, lu[r * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return LogAbsDet { sign: 0, logabs: f64::NEG_INFINITY };
        }
        if p != k {
            for c in 0..n {
                lu.swap(k * n + c, p * n + c);
            }
            sign = -sign;
        }
        let pivot = lu[k * n + k];
        if pivot < 0.0 {
            sign = -sign;
        }
        logabs += pivot.abs().ln();
        for r in k + 1..n {
            let factor = lu[r * n + k] / pivot;
            if factor != 0.0 {
                for c in k + 1..n {
                    lu[r * n + c] -= factor * lu[k * n + c];
                }
            }
        }
    }
    LogAbsDet { sign, logabs }
}

/// Names accepted by [`load_fixture`].
pub const FIXTURE_NAMES: [&str; 9] =
    ["A1", "A2", "A3", "A4", "A5", "cover3x3", "conv_filter", "conv16", "identity10"];

/// Operators printed in the appendix. `conv_filter` and `conv16` both name
/// the 16x16 convolution built from the published filter on a 4x4 image.
pub fn load_fixture(name: &str) -> Result<OperatorHandle> {
    use fixtures::*;
    let dense = |rows: &[[f64; 10]; 10]| -> Result<OperatorHandle> { Ok(DenseOperator::from_rows(rows)?.into()) };
    match name {
        "A1" => dense(&A1),
        "A2" => dense(&A2),
        "A3" => dense(&A3),
        "A4" => dense(&A4),
        "A5" => dense(&A5),
        "cover3x3" => Ok(DenseOperator::from_rows(&COVER_3X3)?.into()),
        "conv_filter" | "conv16" => {
            Ok(ConvOperator::new(CONV_FILTER, CONV_IMAGE_SIDE, Orientation::Correlation)?.into())
        }
        "identity10" => Ok(DenseOperator::identity(10).into()),
        other => Err(Error::UnknownFixture(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cofactor_det(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> =
                    m[1..].iter().map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, v)| *v).collect()).collect();
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s * m[0][j] * cofactor_det(&minor)
            })
            .sum()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    fn sliding_window(k: &[[f64; 3]; 3], img: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = img.len() as isize;
        let mut out = vec![vec![0.0; s as usize]; s as usize];
        for i in 0..s {
            for j in 0..s {
                let mut acc = 0.0;
                for a in 0..3isize {
                    for b in 0..3isize {
                        let (y, x) = (i + a - 1, j + b - 1);
                        if y >= 0 && y < s && x >= 0 && x < s {
                            acc += k[a as usize][b as usize] * img[y as usize][x as usize];
                        }
                    }
                }
                out[i as usize][j as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn identity_and_diagonal_matvec() {
        let id = DenseOperator::identity(3);
        assert_eq!(id.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let d = DenseOperator::diagonal(&[2.0, 3.0]);
        assert_eq!(d.matvec(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn matvec_rejects_bad_input() {
        let id = DenseOperator::identity(3);
        assert!(matches!(id.matvec(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(id.matvec(&[1.0, f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn from_rows_rejects_non_square() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(DenseOperator::from_rows(&rows), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn conv_one_hot_matches_sliding_window() {
        let conv = ConvOperator::new(fixtures::CONV_FILTER, 4, Orientation::Correlation).unwrap();
        let mut x = vec![0.0; 16];
        x[4 + 1] = 1.0;
        let got = conv.matvec(&x).unwrap();
        let img: Vec<Vec<f64>> = x.chunks(4).map(<[f64]>::to_vec).collect();
        let want: Vec<f64> = sliding_window(&fixtures::CONV_FILTER, &img).concat();
        assert_eq!(got, want);
        assert_eq!(got.iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    fn conv_random_image_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ConvOperator::new(fixtures::CONV_FILTER, 5, Orientation::Correlation).unwrap();
        let img: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let got = conv.matvec(&img.concat()).unwrap();
        let want = sliding_window(&fixtures::CONV_FILTER, &img).concat();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn conv_rows_have_at_most_nine_nonzeros() {
        let w = load_fixture("conv16").unwrap().materialize();
        assert_eq!(w.dim(), 16);
        for r in 0..16 {
            assert!(w.row(r).iter().filter(|v| **v != 0.0).count() <= 9);
        }
    }

    #[test]
    fn transpose_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for op in [load_fixture("conv16").unwrap(), load_fixture("A2").unwrap()] {
            let n = op.dim();
            let dense = op.materialize();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut got = vec![0.0; n];
            op.apply_transpose(&y, &mut got);
            for j in 0..n {
                let want: f64 = (0..n).map(|i| dense.get(i, j) * y[i]).sum();
                assert!((got[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv16_determinant_matches_published_value() {
        let w = load_fixture("conv16").unwrap().materialize();
        let d = exact_logabsdet(&w);
        assert!((d.abs_det() - 7.71).abs() / 7.71 < 0.02, "|det W| = {}", d.abs_det());
        assert!((d.logabs - 2.04).abs() < 0.05);
    }

    #[test]
    fn flipped_filter_preserves_abs_det() {
        let k = fixtures::CONV_FILTER;
        let mut flipped = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                flipped[a][b] = k[2 - a][2 - b];
            }
        }
        let base = exact_logabsdet(&ConvOperator::new(k, 4, Orientation::Correlation).unwrap().materialize());
        let flip = exact_logabsdet(&ConvOperator::new(flipped, 4, Orientation::Correlation).unwrap().materialize());
        let conv = exact_logabsdet(&ConvOperator::new(k, 4, Orientation::Convolution).unwrap().materialize());
        assert!((base.logabs - flip.logabs).abs() < 1e-10);
        assert!((base.logabs - conv.logabs).abs() < 1e-10);
    }

    #[test]
    fn materialize_dense_is_identity_map() {
        let a = load_fixture("A3").unwrap().materialize();
        assert_eq!(a.materialize(), a);
    }

    #[test]
    fn lu_identity_and_singular() {
        let d = exact_logabsdet(&DenseOperator::identity(10));
        assert_eq!(d, LogAbsDet { sign: 1, logabs: 0.0 });
        let s = DenseOperator::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        let d = exact_logabsdet(&s);
        assert_eq!(d.sign, 0);
        assert_eq!(d.logabs, f64::NEG_INFINITY);
    }

    #[test]
    fn lu_matches_cofactor_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2, 3, 4] {
            for _ in 0..50 {
                let rows = random_rows(&mut rng, n);
                let want = cofactor_det(&rows);
                let got = exact_logabsdet(&DenseOperator::from_rows(&rows).unwrap());
                let signed = got.sign as f64 * got.logabs.exp();
                assert!((signed - want).abs() <= 1e-10 * want.abs(), "n={n}: {signed} vs {want}");
            }
        }
    }

    #[test]
    fn lu_is_multiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in [3, 6, 10] {
            let a = DenseOperator::from_rows(&random_rows(&mut rng, n)).unwrap();
            let b = DenseOperator::from_rows(&random_rows(&mut rng, n)).unwrap();
            let ab = exact_logabsdet(&a.matmul(&b).unwrap());
            let (da, db) = (exact_logabsdet(&a), exact_logabsdet(&b));
            assert!((ab.logabs - da.logabs - db.logabs).abs() < 1e-8);
            assert_eq!(ab.sign, da.sign * db.sign);
        }
    }

    #[test]
    fn fixtures_match_published_determinants() {
        for (name, published) in fixtures::PUBLISHED_ABS_DETS {
            let d = exact_logabsdet(&load_fixture(name).unwrap().materialize());
            assert!((d.abs_det() - published).abs() / published < 0.05, "{name}: {}", d.abs_det());
        }
    }

    #[test]
    fn fixture_entries_as_printed() {
        let cover = load_fixture("cover3x3").unwrap().materialize();
        assert_eq!(cover.row(0), &[-0.7056, 0.6741, -0.5454]);
        match load_fixture("conv_filter").unwrap() {
            OperatorHandle::Conv(c) => assert_eq!(c.filter()[1][1], 1.393),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_fixture("A9"), Err(Error::UnknownFixture(_))));
    }

    #[test]
    fn json_operator_files() {
        let d = OperatorHandle::from_json_str(r#"{"type":"dense","entries":[[2,0],[0,3]]}"#).unwrap();
        assert_eq!(d.matvec(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        let c = OperatorHandle::from_json_str(
            r#"{"type":"conv","filter":[[0,0,0],[0,1,0],[0,0,0]],"image_side":3}"#,
        )
        .unwrap();
        assert_eq!(c.dim(), 9);
        assert_eq!(c.materialize(), DenseOperator::identity(9));
        let back = OperatorHandle::from_json_str(&c.to_json_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(OperatorHandle::from_json_str(r#"{"type":"dense","entries":[[1,2]]}"#).is_err());
    }
}
