//! Dense complex matrix plumbing shared by every algebraic module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Subspaces of matrices of a
//! fixed shape are carried as Frobenius-orthonormal bases, which is enough to
//! decide spans, containment and ranks at a relative tolerance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ComplexMatrix = DMatrix<Complex64>;

pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("equation list is empty")]
    EmptyEquations,
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
}

/// Comparison threshold. Scaled by the largest norm in play, but never below
/// `eps` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    eps: f64,
}

impl Tolerance {
    pub fn new(eps: f64) -> Result<Self, MatrixError> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Self { eps })
        } else {
            Err(MatrixError::InvalidTolerance(eps))
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `eps * max(1, scale)`.
    pub fn threshold(&self, scale: f64) -> f64 {
        self.eps * scale.max(1.0)
    }

    pub fn accepts(&self, residual: f64, scale: f64) -> bool {
        residual <= self.threshold(scale)
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS }
    }
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn shape(m: &ComplexMatrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

pub fn zeros(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(rows, cols)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

/// Matrix unit `e_{ij}` of the given shape.
pub fn matrix_unit(rows: usize, cols: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = zeros(rows, cols);
    m[(i, j)] = c(1.0, 0.0);
    m
}

pub fn from_real_rows(rows: &[&[f64]]) -> ComplexMatrix {
    let r = rows.len();
    let cols = rows.first().map_or(0, |row| row.len());
    ComplexMatrix::from_fn(r, cols, |i, j| c(rows[i][j], 0.0))
}

pub fn frobenius_norm(m: &ComplexMatrix) -> f64 {
    m.norm()
}

/// `trace(a* b)`.
pub fn frobenius_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Largest singular value.
pub fn spectral_norm(m: &ComplexMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if let Some((_, s, _)) = fast_svd(m) {
        return largest(&s);
    }
    let tall = if m.nrows() < m.ncols() { m.adjoint() } else { m.clone() };
    largest(&column_norms(&jacobi(&tall).0))
}

/// Eigenvalues of the Hermitian part `(m + m*)/2`, ascending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>, MatrixError> {
    require_square(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let h = (m + m.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

fn require_square(m: &ComplexMatrix) -> Result<(), MatrixError> {
    if m.nrows() != m.ncols() {
        return Err(MatrixError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub fn is_hermitian(m: &ComplexMatrix, tol: Tolerance) -> Result<bool, MatrixError> {
    require_square(m)?;
    Ok(tol.accepts(frobenius_norm(&(m - m.adjoint())), frobenius_norm(m)))
}

/// Hermitian within `tol` and smallest eigenvalue `>= -tol * max(1, |m|)`.
pub fn is_positive(m: &ComplexMatrix, tol: Tolerance) -> Result<bool, MatrixError> {
    if !is_hermitian(m, tol)? {
        return Ok(false);
    }
    let ev = hermitian_eigenvalues(m)?;
    let min = ev.first().copied().unwrap_or(0.0);
    Ok(min >= -tol.threshold(spectral_norm(m)))
}

/// Column-major flattening; the inverse of [`unvec`].
pub fn vec_of(m: &ComplexMatrix) -> DVector<Complex64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[Complex64], rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(rows, cols, v)
}

fn stack_columns(len: usize, vectors: &[DVector<Complex64>]) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(len, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        out.set_column(j, v);
    }
    out
}

/// One-sided Jacobi SVD: returns `(w, v)` with `a v = w`, `v` unitary and the
/// columns of `w` mutually orthogonal, so their norms are the singular values.
///
/// nalgebra's SVD can return wrong factors on rank-deficient or triangular
/// input, while plane rotations stay accurate.
fn jacobi(a: &DMatrix<Complex64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        let top = largest(&column_norms(&w));
        let floor = (f64::EPSILON * top).powi(2);
        for i in 0..n {
            for j in i + 1..n {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dotc(&w.column(j));
                let g = gamma.norm();
                if alpha <= floor || beta <= floor || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let x = m[(r, i)];
                        let y = m[(r, j)] * phase.conj();
                        m[(r, i)] = x * cs - y * sn;
                        m[(r, j)] = x * sn + y * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

fn column_norms(w: &DMatrix<Complex64>) -> Vec<f64> {
    (0..w.ncols()).map(|j| w.column(j).norm()).collect()
}

type Svd = (DMatrix<Complex64>, Vec<f64>, DMatrix<Complex64>);

/// nalgebra's SVD `a = u diag(s) v*`, kept only when the factors check out.
fn fast_svd(a: &DMatrix<Complex64>) -> Option<Svd> {
    let svd = a.clone().svd(true, true);
    let (u, v) = (svd.u?, svd.v_t?.adjoint());
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    if s.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let p = s.len();
    let mut us = u.clone();
    for (j, &x) in s.iter().enumerate() {
        us.column_mut(j).scale_mut(x);
    }
    let defect = (us * v.adjoint() - a).norm() / a.norm().max(f64::MIN_POSITIVE);
    let eye = DMatrix::<Complex64>::identity(p, p);
    let ortho = (u.adjoint() * &u - &eye).norm().max((v.adjoint() * &v - &eye).norm());
    (defect <= 1e-12 && ortho <= 1e-12).then_some((u, s, v))
}

fn largest(s: &[f64]) -> f64 {
    s.iter().copied().fold(0.0, f64::max)
}

/// Orthonormal basis (columns) of the column space of `g`, rank decided at
/// `eps * max(1, sigma_max)`.
pub fn orthonormal_range(g: &DMatrix<Complex64>, tol: Tolerance) -> DMatrix<Complex64> {
    if g.ncols() == 0 || g.nrows() == 0 {
        return DMatrix::zeros(g.nrows(), 0);
    }
    if g.nrows() > 2 * g.ncols() {
        let qr = g.clone().qr();
        return qr.q() * orthonormal_range(&qr.r(), tol);
    }
    if let Some((u, s, _)) = fast_svd(g) {
        let thr = tol.threshold(largest(&s));
        let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > thr).collect();
        return DMatrix::from_fn(g.nrows(), keep.len(), |r, j| u[(r, keep[j])]);
    }
    if g.nrows() > g.ncols() {
        let qr = g.clone().qr();
        return qr.q() * orthonormal_range(&qr.r(), tol);
    }
    // g = v w*, so the range is spanned by v against nonzero columns of w
    let (w, v) = jacobi(&g.adjoint());
    let sigma = column_norms(&w);
    let thr = tol.threshold(largest(&sigma));
    let mut keep: Vec<usize> = (0..sigma.len()).filter(|&i| sigma[i] > thr).collect();
    keep.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let mut q = DMatrix::zeros(g.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        q.set_column(j, &v.column(i));
    }
    q
}

/// Numerical rank at the relative tolerance.
pub fn rank(g: &DMatrix<Complex64>, tol: Tolerance) -> usize {
    orthonormal_range(g, tol).ncols()
}

/// Orthonormal basis (columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<Complex64>, tol: Tolerance) -> DMatrix<Complex64> {
    let k = m.ncols();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() > 2 * k {
        return null_space(&m.clone().qr().r(), tol);
    }
    // a thin SVD only yields min(rows, cols) right vectors, so pad to k rows
    let padded = if m.nrows() < k {
        let mut p = DMatrix::zeros(k, k);
        p.view_mut((0, 0), (m.nrows(), k)).copy_from(m);
        p
    } else {
        m.clone()
    };
    if let Some((_, s, v)) = fast_svd(&padded) {
        let thr = tol.threshold(largest(&s));
        let null: Vec<usize> = (0..k).filter(|&i| s[i] <= thr).collect();
        return DMatrix::from_fn(k, null.len(), |r, j| v[(r, null[j])]);
    }
    if m.nrows() > k {
        return null_space(&m.clone().qr().r(), tol);
    }
    let (w, v) = jacobi(m);
    let sigma = column_norms(&w);
    let thr = tol.threshold(largest(&sigma));
    let null: Vec<usize> = (0..k).filter(|&i| sigma[i] <= thr).collect();
    let mut out = DMatrix::zeros(k, null.len());
    for (j, &i) in null.iter().enumerate() {
        out.set_column(j, &v.column(i));
    }
    out
}

/// A linear subspace of `rows x cols` complex matrices with a
/// Frobenius-orthonormal basis.
#[derive(Debug, Clone)]
pub struct MatrixSubspace {
    rows: usize,
    cols: usize,
    basis: Vec<ComplexMatrix>,
    // columns are the vectorized basis elements
    frame: DMatrix<Complex64>,
}

impl MatrixSubspace {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            basis: Vec::new(),
            frame: DMatrix::zeros(rows * cols, 0),
        }
    }

    /// All `rows x cols` matrices, with the matrix units as basis.
    pub fn full(rows: usize, cols: usize) -> Self {
        let mut basis = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                basis.push(matrix_unit(rows, cols, i, j));
            }
        }
        Self {
            rows,
            cols,
            basis,
            frame: DMatrix::identity(rows * cols, rows * cols),
        }
    }

    /// Orthonormal basis of the complex span of `generators`.
    pub fn span(
        rows: usize,
        cols: usize,
        generators: &[ComplexMatrix],
        tol: Tolerance,
    ) -> Result<Self, MatrixError> {
        for g in generators {
            if shape(g) != (rows, cols) {
                return Err(MatrixError::ShapeMismatch {
                    expected: (rows, cols),
                    found: shape(g),
                });
            }
        }
        let vectors: Vec<_> = generators.iter().map(vec_of).collect();
        let frame = orthonormal_range(&stack_columns(rows * cols, &vectors), tol);
        Ok(Self::from_frame(rows, cols, frame))
    }

    fn from_frame(rows: usize, cols: usize, frame: DMatrix<Complex64>) -> Self {
        let basis = (0..frame.ncols())
            .map(|j| unvec(frame.column(j).as_slice(), rows, cols))
            .collect();
        Self {
            rows,
            cols,
            basis,
            frame,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_zero(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    /// The basis as orthonormal columns of column-major vectors.
    pub fn frame(&self) -> &DMatrix<Complex64> {
        &self.frame
    }

    fn check_shape(&self, m: &ComplexMatrix) -> Result<(), MatrixError> {
        if shape(m) != (self.rows, self.cols) {
            return Err(MatrixError::ShapeMismatch {
                expected: (self.rows, self.cols),
                found: shape(m),
            });
        }
        Ok(())
    }

    /// Coordinates of the orthogonal projection of `m` in the stored basis.
    pub fn coordinates(&self, m: &ComplexMatrix) -> Result<DVector<Complex64>, MatrixError> {
        self.check_shape(m)?;
        Ok(self.frame.ad_mul(&vec_of(m)))
    }

    pub fn from_coordinates(&self, coords: &[Complex64]) -> ComplexMatrix {
        let mut out = zeros(self.rows, self.cols);
        for (b, &x) in self.basis.iter().zip(coords) {
            out += b * x;
        }
        out
    }

    pub fn project(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, MatrixError> {
        let coords = self.coordinates(m)?;
        Ok(unvec((&self.frame * coords).as_slice(), self.rows, self.cols))
    }

    /// `|m - proj(m)|_F`.
    pub fn residual(&self, m: &ComplexMatrix) -> Result<f64, MatrixError> {
        Ok(frobenius_norm(&(m - self.project(m)?)))
    }

    /// `|m - proj(m)|_F <= eps * max(1, |m|_F)`.
    pub fn contains(&self, m: &ComplexMatrix, tol: Tolerance) -> Result<bool, MatrixError> {
        let r = self.residual(m)?;
        Ok(tol.accepts(r, frobenius_norm(m)))
    }

    pub fn contains_subspace(&self, other: &MatrixSubspace, tol: Tolerance) -> Result<bool, MatrixError> {
        for b in &other.basis {
            if !self.contains(b, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn same_as(&self, other: &MatrixSubspace, tol: Tolerance) -> Result<bool, MatrixError> {
        Ok(self.dim() == other.dim() && self.contains_subspace(other, tol)?)
    }

    /// Image under conjugate transpose.
    pub fn adjoint(&self) -> MatrixSubspace {
        let basis: Vec<_> = self.basis.iter().map(|b| b.adjoint()).collect();
        let vectors: Vec<_> = basis.iter().map(vec_of).collect();
        MatrixSubspace {
            rows: self.cols,
            cols: self.rows,
            frame: stack_columns(self.rows * self.cols, &vectors),
            basis,
        }
    }

    /// Span of all products `a * b` of basis elements.
    pub fn product_span(&self, other: &MatrixSubspace, tol: Tolerance) -> Result<MatrixSubspace, MatrixError> {
        if self.cols != other.rows {
            return Err(MatrixError::ShapeMismatch {
                expected: (self.cols, other.cols),
                found: other.shape(),
            });
        }
        let products: Vec<_> = self
            .basis
            .iter()
            .flat_map(|a| other.basis.iter().map(move |b| a * b))
            .collect();
        MatrixSubspace::span(self.rows, other.cols, &products, tol)
    }

    /// A random element (uniform coordinates in the unit square).
    pub fn random_element<R: Rng>(&self, rng: &mut R) -> ComplexMatrix {
        let coords: Vec<_> = (0..self.dim()).map(|_| random_scalar(rng)).collect();
        self.from_coordinates(&coords)
    }
}

pub fn random_scalar<R: Rng>(rng: &mut R) -> Complex64 {
    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| random_scalar(rng))
}

/// Random unitary from the QR factorization of a random matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> ComplexMatrix {
    let m = random_matrix(rng, n, n);
    m.qr().q()
}

/// A linear map between matrix spaces, stored as a matrix on vectorized
/// inputs.
#[derive(Debug, Clone)]
pub struct LinearMap {
    in_shape: (usize, usize),
    out_shape: (usize, usize),
    matrix: DMatrix<Complex64>,
}

impl LinearMap {
    pub fn in_shape(&self) -> (usize, usize) {
        self.in_shape
    }

    pub fn out_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    /// Tabulates `f` on matrix units.
    pub fn from_fn(
        in_shape: (usize, usize),
        out_shape: (usize, usize),
        f: impl Fn(&ComplexMatrix) -> ComplexMatrix,
    ) -> Result<Self, MatrixError> {
        let (r, c) = in_shape;
        let mut matrix = DMatrix::zeros(out_shape.0 * out_shape.1, r * c);
        for j in 0..c {
            for i in 0..r {
                let out = f(&matrix_unit(r, c, i, j));
                if shape(&out) != out_shape {
                    return Err(MatrixError::ShapeMismatch {
                        expected: out_shape,
                        found: shape(&out),
                    });
                }
                matrix.set_column(j * r + i, &vec_of(&out));
            }
        }
        Ok(Self {
            in_shape,
            out_shape,
            matrix,
        })
    }

    pub fn identity(shape: (usize, usize)) -> Self {
        let n = shape.0 * shape.1;
        Self {
            in_shape: shape,
            out_shape: shape,
            matrix: DMatrix::identity(n, n),
        }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &LinearMap) -> Result<LinearMap, MatrixError> {
        if inner.out_shape != self.in_shape {
            return Err(MatrixError::ShapeMismatch {
                expected: self.in_shape,
                found: inner.out_shape,
            });
        }
        Ok(Self {
            in_shape: inner.in_shape,
            out_shape: self.out_shape,
            matrix: &self.matrix * &inner.matrix,
        })
    }

    /// Matrix acting on column-major vectorizations.
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn apply(&self, m: &ComplexMatrix) -> Result<ComplexMatrix, MatrixError> {
        if shape(m) != self.in_shape {
            return Err(MatrixError::ShapeMismatch {
                expected: self.in_shape,
                found: shape(m),
            });
        }
        let v = &self.matrix * vec_of(m);
        Ok(unvec(v.as_slice(), self.out_shape.0, self.out_shape.1))
    }
}

/// Least-squares solution of a family of linear constraints `L(in_i) = out_i`.
#[derive(Debug, Clone)]
pub struct SpanSolution {
    pub map: LinearMap,
    /// `max_i |L(in_i) - out_i|_F / max(1, |out_i|_F)`.
    pub residual: f64,
}

/// Minimum-norm least-squares linear map sending each input to its output.
/// A small residual certifies that the assignment extends to a well-defined
/// linear map on the span of the inputs.
pub fn solve_on_span(
    equations: &[(ComplexMatrix, ComplexMatrix)],
    tol: Tolerance,
) -> Result<SpanSolution, MatrixError> {
    let (first_in, first_out) = equations.first().ok_or(MatrixError::EmptyEquations)?;
    let in_shape = shape(first_in);
    let out_shape = shape(first_out);
    for (i, o) in equations {
        if shape(i) != in_shape {
            return Err(MatrixError::ShapeMismatch {
                expected: in_shape,
                found: shape(i),
            });
        }
        if shape(o) != out_shape {
            return Err(MatrixError::ShapeMismatch {
                expected: out_shape,
                found: shape(o),
            });
        }
    }
    let ins: Vec<_> = equations.iter().map(|(i, _)| vec_of(i)).collect();
    let outs: Vec<_> = equations.iter().map(|(_, o)| vec_of(o)).collect();
    let a = stack_columns(in_shape.0 * in_shape.1, &ins);
    let b = stack_columns(out_shape.0 * out_shape.1, &outs);
    let matrix = &b * pseudo_inverse(&a, tol);
    let map = LinearMap {
        in_shape,
        out_shape,
        matrix,
    };
    let mut residual: f64 = 0.0;
    for (i, o) in equations {
        let r = frobenius_norm(&(map.apply(i)? - o)) / frobenius_norm(o).max(1.0);
        residual = residual.max(r);
    }
    Ok(SpanSolution { map, residual })
}

/// Moore-Penrose pseudo-inverse with a relative singular value cutoff.
pub fn pseudo_inverse(a: &DMatrix<Complex64>, tol: Tolerance) -> DMatrix<Complex64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    if a.nrows() > 2 * a.ncols() {
        let qr = a.clone().qr();
        return pseudo_inverse(&qr.r(), tol) * qr.q().adjoint();
    }
    if let Some((u, s, v)) = fast_svd(a) {
        let thr = tol.threshold(largest(&s));
        let mut out = DMatrix::zeros(a.ncols(), a.nrows());
        for (k, &x) in s.iter().enumerate() {
            if x > thr {
                out += v.column(k) * u.column(k).adjoint() * Complex64::new(1.0 / x, 0.0);
            }
        }
        return out;
    }
    if a.nrows() > a.ncols() {
        let qr = a.clone().qr();
        return pseudo_inverse(&qr.r(), tol) * qr.q().adjoint();
    }
    let (w, v) = jacobi(a);
    let sigma = column_norms(&w);
    let thr = tol.threshold(largest(&sigma));
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in sigma.iter().enumerate() {
        if s > thr {
            out += v.column(k) * w.column(k).adjoint() * Complex64::new(1.0 / (s * s), 0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&identity(3)) - 1.0).abs() < 1e-14);
        let m = from_real_rows(&[&[0.0, 2.0], &[0.0, 0.0]]);
        assert!((spectral_norm(&m) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_matches_gram_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 3, 8, 20] {
            let m = random_matrix(&mut rng, n, n);
            let gram = m.adjoint() * &m;
            let top = *hermitian_eigenvalues(&gram).unwrap().last().unwrap();
            let s = spectral_norm(&m);
            assert!((s * s - top).abs() <= 1e-10 * top, "n={n}");
        }
    }

    #[test]
    fn positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 4, 4);
        assert!(is_positive(&(a.adjoint() * &a), tol()).unwrap());
        let d = from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(!is_positive(&d, tol()).unwrap());
        assert!(is_positive(&zeros(3, 3), tol()).unwrap());
        assert_eq!(
            is_positive(&zeros(2, 3), tol()),
            Err(MatrixError::NotSquare { rows: 2, cols: 3 })
        );
    }

    #[test]
    fn span_dimensions() {
        let i2 = identity(2);
        assert_eq!(MatrixSubspace::span(2, 2, &[i2.clone(), i2.scale(2.0)], tol()).unwrap().dim(), 1);
        let units: Vec<_> = (0..2)
            .flat_map(|i| (0..2).map(move |j| matrix_unit(2, 2, i, j)))
            .collect();
        assert_eq!(MatrixSubspace::span(2, 2, &units, tol()).unwrap().dim(), 4);
        assert_eq!(MatrixSubspace::span(2, 2, &[zeros(2, 2)], tol()).unwrap().dim(), 0);
        assert!(matches!(
            MatrixSubspace::span(2, 2, &[zeros(2, 3)], tol()),
            Err(MatrixError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn containment() {
        let s = MatrixSubspace::span(2, 2, &[identity(2), matrix_unit(2, 2, 0, 1)], tol()).unwrap();
        for b in s.basis() {
            assert!(s.contains(b, tol()).unwrap());
        }
        assert!(!s.contains(&matrix_unit(2, 2, 1, 0), tol()).unwrap());
        let mut near = s.basis()[0].clone();
        near[(1, 0)] += c(1e-12, 0.0);
        // residual is exactly the off-span perturbation
        assert!((s.residual(&near).unwrap() - 1e-12).abs() < 1e-15);
        assert!(s.contains(&near, tol()).unwrap());
    }

    #[test]
    fn solve_consistent_and_inconsistent() {
        let i2 = identity(2);
        let sol = solve_on_span(&[(i2.clone(), i2.clone()), (i2.scale(2.0), i2.scale(2.0))], tol()).unwrap();
        assert!(sol.residual < 1e-14);
        assert!((sol.map.apply(&i2).unwrap() - &i2).norm() < 1e-14);

        // closed form: L(I) = 1.5 I, residual |0.5 I| / |I| = 0.5
        let sol = solve_on_span(&[(i2.clone(), i2.clone()), (i2.clone(), i2.scale(2.0))], tol()).unwrap();
        assert!((sol.residual - 0.5).abs() < 1e-12);
        assert!(matches!(solve_on_span(&[], tol()), Err(MatrixError::EmptyEquations)));
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let n = null_space(&m, tol());
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
    }

    #[test]
    fn tolerance_rejects_nonpositive() {
        assert!(Tolerance::new(0.0).is_err());
        assert!(Tolerance::new(f64::NAN).is_err());
        assert_eq!(Tolerance::new(1e-9).unwrap(), Tolerance::default());
    }

    #[test]
    fn range_and_null_space_of_rank_deficient_products() {
        for seed in 0..400 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 1 + seed as usize % 3;
            let (rows, cols) = [(8, 6), (3, 7), (5, 5)][seed as usize % 3];
            let g = random_matrix(&mut rng, rows, k) * random_matrix(&mut rng, k, cols);
            // triangular factors of low-rank products are a hard case
            for g in [g.clone(), g.adjoint().qr().r().adjoint()] {
                let q = orthonormal_range(&g, tol());
                assert_eq!(q.ncols(), k);
                assert!((q.adjoint() * &q - identity(k)).norm() < 1e-12);
                assert!((&q * q.adjoint() * &g - &g).norm() < 1e-9);
                let ns = null_space(&g, tol());
                assert_eq!(ns.ncols(), g.ncols() - k);
                assert!((&g * &ns).norm() < 1e-9);
                let pi = pseudo_inverse(&g, tol());
                assert!((&g * &pi * &g - &g).norm() < 1e-9);
                assert!((&pi * &g * &pi - &pi).norm() < 1e-9 * (1.0 + pi.norm()));
                let top = orthonormal_range(&(g.adjoint() * &g), tol()).ncols();
                assert_eq!(top, k);
            }
        }
    }

    #[test]
    fn jacobi_factors_any_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (rows, cols, k) in [(3, 4, 1), (6, 3, 2), (5, 5, 5), (4, 7, 2)] {
            let a = random_matrix(&mut rng, rows, k) * random_matrix(&mut rng, k, cols);
            for a in [a.clone(), a.adjoint().qr().r().adjoint()] {
                let (w, v) = jacobi(&a);
                assert!((v.adjoint() * &v - identity(v.ncols())).norm() < 1e-12);
                assert!((&a * &v - &w).norm() < 1e-12);
                let gram = w.adjoint() * &w;
                let off = gram.clone() - DMatrix::from_diagonal(&gram.diagonal());
                assert!(off.norm() < 1e-12 * (1.0 + gram.norm()));
                let nonzero = column_norms(&w).iter().filter(|&&x| x > 1e-9).count();
                assert_eq!(nonzero, k.min(rows).min(cols));
            }
        }
    }
}
