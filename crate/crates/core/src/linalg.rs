//! Dense real kernels: column normalization, cosine Gram matrices, symmetric
//! eigenvalues, singular values and Hadamard products.
//!
//! Samples are stored column-wise, so a feature matrix is `d x N` with one
//! column per sample.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Columns with norm at or below this are rejected by [`normalize_columns`].
pub const ZERO_NORM: f64 = 1e-12;
/// Eigenvalues of a Gram matrix below this are treated as a non-PSD input.
pub const PSD_FLOOR: f64 = -1e-8;
const SYMMETRY_TOL: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-9;

const EIG_EPS: f64 = 1e-15;
const MAX_ITER: usize = 10_000;

/// A `d x N` real matrix, one column per sample, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        check_finite(&data)?;
        Ok(Self { data, labels: None })
    }

    /// Attaches per-sample labels. When `classes` is `None` the class count is
    /// taken to be `max(label) + 1`.
    pub fn with_labels(
        data: DMatrix<f64>,
        labels: Vec<usize>,
        classes: Option<usize>,
    ) -> Result<Self> {
        check_finite(&data)?;
        if labels.len() != data.ncols() {
            return Err(Error::LabelCount {
                expected: data.ncols(),
                got: labels.len(),
            });
        }
        if let Some(classes) = classes {
            if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    classes,
                });
            }
        }
        Ok(Self {
            data,
            labels: Some(labels),
        })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::EmptyMatrix { rows: 0, cols: 0 });
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels().ok_or(Error::MissingLabels)
    }

    /// `max(label) + 1`, or `None` when unlabeled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Keeps the listed columns (and their labels) in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let data = self.data.select_columns(indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self { data, labels }
    }
}

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() == 0 || data.ncols() == 0 {
        return Err(Error::EmptyMatrix {
            rows: data.nrows(),
            cols: data.ncols(),
        });
    }
    for col in 0..data.ncols() {
        for row in 0..data.nrows() {
            if !data[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Nonnegative values in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
    source_dim: usize,
}

impl Spectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Count of values above `rel_tol * max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let max = self.values.first().copied().unwrap_or(0.0);
        if max <= 0.0 {
            return 0;
        }
        self.values.iter().filter(|&&v| v > rel_tol * max).count()
    }

    fn from_unsorted(mut values: Vec<f64>, source_dim: usize) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        values.resize(source_dim, 0.0);
        Self { values, source_dim }
    }
}

/// Symmetric, unit-diagonal PSD matrix of pairwise cosine similarities.
///
/// The spectrum is computed eagerly on construction, which is also where
/// the PSD invariant gets checked.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    data: DMatrix<f64>,
    spectrum: Spectrum,
}

impl GramMatrix {
    /// Validates symmetry, unit diagonal and PSD-ness (up to [`PSD_FLOOR`]).
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let n = data.nrows();
        if n != data.ncols() || n == 0 {
            return Err(Error::NotSquare {
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        check_finite(&data)?;
        for i in 0..n {
            let d = data[(i, i)];
            if (d - 1.0).abs() > DIAGONAL_TOL {
                return Err(Error::BadDiagonal { index: i, value: d });
            }
            for j in (i + 1)..n {
                let gap = (data[(i, j)] - data[(j, i)]).abs();
                if gap > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        let data = symmetrize(&data);
        let spectrum = eigenvalues(&data)?;
        Ok(Self { data, spectrum })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is a valid Gram matrix")
    }

    pub fn ones(n: usize) -> Self {
        Self::new(DMatrix::from_element(n, n, 1.0)).expect("all-ones is a valid Gram matrix")
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Simultaneous row/column permutation: `out[i][j] = self[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim();
        if perm.len() != n {
            return Err(Error::DimensionMismatch(n, perm.len()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| self.data[(perm[i], perm[j])]))
    }
}

/// `(K + K^T) / 2`
pub fn symmetrize(k: &DMatrix<f64>) -> DMatrix<f64> {
    (k + k.transpose()) * 0.5
}

/// Scales every column to unit Euclidean norm. Labels pass through.
pub fn normalize_columns(z: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (data, _) = normalized_with_norms(z.data())?;
    Ok(FeatureMatrix {
        data,
        labels: z.labels.clone(),
    })
}

/// Column-normalized copy of `z` together with the original column norms.
pub(crate) fn normalized_with_norms(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.ncols());
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm <= ZERO_NORM {
            return Err(Error::ZeroNormColumn(j));
        }
        col /= norm;
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Cosine Gram matrix `Ẑᵀ Ẑ` of the column-normalized features.
pub fn gram(z: &FeatureMatrix) -> Result<GramMatrix> {
    gram_of(z.data())
}

pub(crate) fn gram_of(z: &DMatrix<f64>) -> Result<GramMatrix> {
    let (zn, _) = normalized_with_norms(z)?;
    let mut k = zn.tr_mul(&zn);
    // rounding can leave the diagonal a few ulps off 1
    k.fill_diagonal(1.0);
    GramMatrix::new(k)
}

/// Eigenvalues of a Gram matrix, descending and clamped at zero.
pub fn eigh(k: &GramMatrix) -> Spectrum {
    k.spectrum.clone()
}

/// Eigenvalues of a symmetric matrix, descending, with values in
/// `[PSD_FLOOR, 0)` clamped to zero.
pub(crate) fn eigenvalues(sym: &DMatrix<f64>) -> Result<Spectrum> {
    let n = sym.nrows();
    let eig = SymmetricEigen::try_new(sym.clone(), EIG_EPS, MAX_ITER).ok_or(Error::EigFailure)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if let Some(&min) = values.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < PSD_FLOOR {
            return Err(Error::NegativeEigenvalue(min));
        }
    }
    for v in values.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(Spectrum::from_unsorted(values, n))
}

/// Full eigendecomposition of a symmetric matrix without the PSD check.
pub(crate) fn symmetric_eigen(sym: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(symmetrize(sym), EIG_EPS, MAX_ITER).ok_or(Error::EigFailure)
}

/// Singular values, descending, `min(d, N)` of them.
pub fn singular_values(z: &FeatureMatrix) -> Result<Spectrum> {
    singular_values_of(z.data())
}

pub(crate) fn singular_values_of(z: &DMatrix<f64>) -> Result<Spectrum> {
    let k = z.nrows().min(z.ncols());
    let svd = if z.nrows() >= z.ncols() {
        thin_svd(z)?
    } else {
        thin_svd(&z.transpose())?
    };
    Ok(Spectrum::from_unsorted(svd.sigma, k))
}

/// `a = U diag(sigma) Vᵀ` for a matrix with at least as many rows as
/// columns; `sigma` is descending.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_SWEEPS: usize = 80;

/// One-sided Jacobi SVD.
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::DimensionMismatch(m, n));
    }
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailure);
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, w.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut u = DMatrix::zeros(m, n);
    let mut v_sorted = DMatrix::zeros(n, n);
    for (k, &(j, sigma)) in order.iter().enumerate() {
        if sigma > 0.0 {
            u.set_column(k, &(w.column(j) / sigma));
        }
        v_sorted.set_column(k, &v.column(j));
    }
    Ok(ThinSvd {
        u,
        sigma: order.into_iter().map(|(_, s)| s).collect(),
        v: v_sorted,
    })
}

/// Entrywise product. The result is re-validated as a Gram matrix (Schur
/// product theorem guarantees PSD in exact arithmetic).
pub fn hadamard(k1: &GramMatrix, k2: &GramMatrix) -> Result<GramMatrix> {
    if k1.dim() != k2.dim() {
        return Err(Error::DimensionMismatch(k1.dim(), k2.dim()));
    }
    GramMatrix::new(k1.data.component_mul(&k2.data))
}
