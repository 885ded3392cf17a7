//! Concrete finite-dimensional C*-algebras and Hilbert modules.
//!
//! An algebra is a `*`-closed subspace of `n x n` matrices. A right Hilbert
//! `A`-module is a subspace `V` of `m x n` matrices with `V A ⊆ V` and
//! `u* v ∈ A`; its inner product is `⟨u, v⟩ = u* v`, so positivity and
//! definiteness hold automatically. In finite dimensions `K(V) = L(V)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::matrixcore::{
    self, frobenius_norm, null_space, shape, solve_on_span, vec_of, ComplexMatrix, MatrixError,
    MatrixSubspace, Tolerance,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BimoduleError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("algebra is not closed under products (basis pair {0}, {1})")]
    NotClosedUnderProduct(usize, usize),
    #[error("algebra is not closed under adjoints (basis element {0})")]
    NotClosedUnderAdjoint(usize),
    #[error("algebra has no unit (residual {0:e})")]
    NoUnit(f64),
    #[error("inner product of basis elements {0} and {1} leaves the algebra")]
    InnerProductEscapesAlgebra(usize, usize),
    #[error("module basis element {0} times algebra basis element {1} leaves the module")]
    ModuleNotClosed(usize, usize),
    #[error("left action of algebra basis element {1} on module basis element {0} leaves the module")]
    LeftActionNotClosed(usize, usize),
    #[error("modules are over different algebras")]
    AlgebraMismatch,
    #[error("tensor factors have incompatible coefficient algebras")]
    IncompatibleAlgebras,
    #[error("module is not full")]
    NotFull,
    #[error("identification map is not bijective (rank {rank}, tensor dim {tensor_dim}, compacts dim {compacts_dim})")]
    NotBijective {
        rank: usize,
        tensor_dim: usize,
        compacts_dim: usize,
    },
}

/// A unital `*`-subalgebra of `n x n` matrices.
#[derive(Debug, Clone)]
pub struct FinDimCStar {
    n: usize,
    carrier: MatrixSubspace,
    unit: ComplexMatrix,
}

impl FinDimCStar {
    /// Span of `generators`, checked to be a unital `*`-algebra.
    pub fn new(n: usize, generators: &[ComplexMatrix], tol: Tolerance) -> Result<Self, BimoduleError> {
        Self::from_subspace(MatrixSubspace::span(n, n, generators, tol)?, tol)
    }

    pub fn from_subspace(carrier: MatrixSubspace, tol: Tolerance) -> Result<Self, BimoduleError> {
        let (n, cols) = carrier.shape();
        if n != cols {
            return Err(MatrixError::NotSquare { rows: n, cols }.into());
        }
        let basis = carrier.basis();
        for (i, a) in basis.iter().enumerate() {
            if !carrier.contains(&a.adjoint(), tol)? {
                return Err(BimoduleError::NotClosedUnderAdjoint(i));
            }
            let products: Vec<_> = basis.iter().map(|b| vec_of(&(a * b))).collect();
            let products = DMatrix::from_columns(&products);
            let residual = &products - carrier.frame() * carrier.frame().ad_mul(&products);
            for j in 0..basis.len() {
                if !tol.accepts(residual.column(j).norm(), products.column(j).norm()) {
                    return Err(BimoduleError::NotClosedUnderProduct(i, j));
                }
            }
        }
        let unit = find_unit(&carrier, tol)?;
        Ok(Self { n, carrier, unit })
    }

    pub fn scalars() -> Self {
        Self::matrix_algebra(1)
    }

    /// All `n x n` matrices.
    pub fn matrix_algebra(n: usize) -> Self {
        Self {
            n,
            carrier: MatrixSubspace::full(n, n),
            unit: matrixcore::identity(n),
        }
    }

    /// `M_{k_1} ⊕ ... ⊕ M_{k_r}` as block-diagonal matrices.
    pub fn block_diagonal(sizes: &[usize]) -> Self {
        let n: usize = sizes.iter().sum();
        let mut gens = Vec::new();
        let mut offset = 0;
        for &k in sizes {
            for i in 0..k {
                for j in 0..k {
                    gens.push(matrixcore::matrix_unit(n, n, offset + i, offset + j));
                }
            }
            offset += k;
        }
        Self {
            n,
            carrier: MatrixSubspace::span(n, n, &gens, Tolerance::default()).expect("shapes agree"),
            unit: matrixcore::identity(n),
        }
    }

    /// `Q A Q*` for a unitary `Q`.
    pub fn conjugate(&self, q: &ComplexMatrix) -> Self {
        let gens: Vec<_> = self.carrier.basis().iter().map(|b| q * b * q.adjoint()).collect();
        Self {
            n: self.n,
            carrier: MatrixSubspace::span(self.n, self.n, &gens, Tolerance::default()).expect("shapes agree"),
            unit: q * &self.unit * q.adjoint(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }

    pub fn carrier(&self) -> &MatrixSubspace {
        &self.carrier
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        self.carrier.basis()
    }

    pub fn unit(&self) -> &ComplexMatrix {
        &self.unit
    }

    pub fn contains(&self, m: &ComplexMatrix, tol: Tolerance) -> Result<bool, MatrixError> {
        self.carrier.contains(m, tol)
    }

    pub fn same_as(&self, other: &FinDimCStar, tol: Tolerance) -> bool {
        self.n == other.n && self.carrier.same_as(&other.carrier, tol).unwrap_or(false)
    }

    /// Dimension of `{z ∈ A : z a = a z for all a ∈ S}` for a list `S`.
    pub fn commutant_dim(&self, others: &[ComplexMatrix], tol: Tolerance) -> usize {
        // cut the candidates down one element at a time; they stay orthonormal
        let mut candidates = self.basis().to_vec();
        for a in others {
            if candidates.is_empty() {
                break;
            }
            let comms: Vec<_> = candidates.iter().map(|z| vec_of(&(z * a - a * z))).collect();
            let system = DMatrix::from_columns(&comms);
            let null = null_space(&system, tol);
            candidates = (0..null.ncols())
                .map(|j| {
                    let mut z = matrixcore::zeros(self.n, self.n);
                    for (k, c) in candidates.iter().enumerate() {
                        z += c * null[(k, j)];
                    }
                    z
                })
                .collect();
        }
        candidates.len()
    }

    pub fn center_dim(&self, tol: Tolerance) -> usize {
        self.commutant_dim(self.basis(), tol)
    }

    pub fn is_commutative(&self, tol: Tolerance) -> bool {
        self.center_dim(tol) == self.dim()
    }
}

/// The unit of a `*`-subalgebra is the projection onto the joint range of
/// its elements.
fn find_unit(carrier: &MatrixSubspace, tol: Tolerance) -> Result<ComplexMatrix, BimoduleError> {
    let (n, _) = carrier.shape();
    let basis = carrier.basis();
    if basis.is_empty() {
        return Ok(matrixcore::zeros(n, n));
    }
    let mut joint = DMatrix::<Complex64>::zeros(n, n * basis.len());
    for (i, b) in basis.iter().enumerate() {
        joint.view_mut((0, i * n), (n, n)).copy_from(b);
    }
    let q = matrixcore::orthonormal_range(&joint, tol);
    let unit = carrier.project(&(&q * q.adjoint()))?;
    let mut residual: f64 = 0.0;
    for b in basis {
        residual = residual.max(frobenius_norm(&(&unit * b - b))).max(frobenius_norm(&(b * &unit - b)));
    }
    if !tol.accepts(residual, 1.0) {
        return Err(BimoduleError::NoUnit(residual));
    }
    Ok(unit)
}

/// A right Hilbert module over a concrete algebra.
#[derive(Debug, Clone)]
pub struct HilbertModule {
    algebra: FinDimCStar,
    carrier: MatrixSubspace,
}

impl HilbertModule {
    /// Validates closure under the right action and that inner products land
    /// in the algebra.
    pub fn new(carrier: MatrixSubspace, algebra: FinDimCStar, tol: Tolerance) -> Result<Self, BimoduleError> {
        let (rows, cols) = carrier.shape();
        if cols != algebra.size() {
            return Err(MatrixError::ShapeMismatch {
                expected: (rows, algebra.size()),
                found: (rows, cols),
            }
            .into());
        }
        let basis = carrier.basis();
        for (i, u) in basis.iter().enumerate() {
            for (j, v) in basis.iter().enumerate() {
                if !algebra.contains(&(u.adjoint() * v), tol)? {
                    return Err(BimoduleError::InnerProductEscapesAlgebra(i, j));
                }
            }
        }
        for (i, u) in basis.iter().enumerate() {
            for (j, a) in algebra.basis().iter().enumerate() {
                if !carrier.contains(&(u * a), tol)? {
                    return Err(BimoduleError::ModuleNotClosed(i, j));
                }
            }
        }
        Ok(Self { algebra, carrier })
    }

    /// `A` as a module over itself.
    pub fn over_itself(algebra: &FinDimCStar) -> Self {
        Self {
            algebra: algebra.clone(),
            carrier: algebra.carrier().clone(),
        }
    }

    /// `n x 1` columns over the scalars.
    pub fn column(n: usize) -> Self {
        Self {
            algebra: FinDimCStar::scalars(),
            carrier: MatrixSubspace::full(n, 1),
        }
    }

    pub fn zero(rows: usize, algebra: &FinDimCStar) -> Self {
        Self {
            algebra: algebra.clone(),
            carrier: MatrixSubspace::zero(rows, algebra.size()),
        }
    }

    pub fn algebra(&self) -> &FinDimCStar {
        &self.algebra
    }

    pub fn carrier(&self) -> &MatrixSubspace {
        &self.carrier
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        self.carrier.basis()
    }

    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }

    pub fn rows(&self) -> usize {
        self.carrier.shape().0
    }

    pub fn inner(&self, u: &ComplexMatrix, v: &ComplexMatrix) -> ComplexMatrix {
        u.adjoint() * v
    }

    /// Span of the inner products is the whole algebra.
    pub fn is_full(&self, tol: Tolerance) -> bool {
        let basis = self.basis();
        let values: Vec<_> = basis
            .iter()
            .flat_map(|u| basis.iter().map(move |v| u.adjoint() * v))
            .collect();
        let n = self.algebra.size();
        match MatrixSubspace::span(n, n, &values, tol) {
            Ok(s) => s.same_as(self.algebra.carrier(), tol).unwrap_or(false),
            Err(_) => false,
        }
    }

    /// Smallest Gram eigenvalue of the basis under `trace ⟨u, v⟩`; positive
    /// for a genuine basis.
    pub fn gram_min_eigenvalue(&self) -> f64 {
        let basis = self.basis();
        if basis.is_empty() {
            return 0.0;
        }
        let g = DMatrix::from_fn(basis.len(), basis.len(), |i, j| self.inner(&basis[i], &basis[j]).trace());
        matrixcore::hermitian_eigenvalues(&g)
            .map(|ev| ev.first().copied().unwrap_or(0.0))
            .unwrap_or(0.0)
    }
}

/// Free-function form of [`HilbertModule::new`].
pub fn make_module(generators: &[ComplexMatrix], algebra: &FinDimCStar, tol: Tolerance) -> Result<HilbertModule, BimoduleError> {
    let rows = generators.first().map_or(0, |g| g.nrows());
    let carrier = MatrixSubspace::span(rows, algebra.size(), generators, tol)?;
    HilbertModule::new(carrier, algebra.clone(), tol)
}

fn same_algebra(a: &FinDimCStar, b: &FinDimCStar, tol: Tolerance) -> bool {
    a.same_as(b, tol)
}

/// `θ_{u,v}: w ↦ u ⟨v, w⟩`, realized as the matrix `u v*`.
pub fn theta(
    target: &HilbertModule,
    u: &ComplexMatrix,
    source: &HilbertModule,
    v: &ComplexMatrix,
    tol: Tolerance,
) -> Result<ComplexMatrix, BimoduleError> {
    if !same_algebra(target.algebra(), source.algebra(), tol) {
        return Err(BimoduleError::AlgebraMismatch);
    }
    if shape(u).1 != shape(v).1 {
        return Err(MatrixError::ShapeMismatch {
            expected: shape(u),
            found: shape(v),
        }
        .into());
    }
    Ok(u * v.adjoint())
}

/// `K(V, U)`: operators `V -> U` spanned by the `θ_{u,v}`.
#[derive(Debug, Clone)]
pub struct CompactOperatorSpace {
    pub carrier: MatrixSubspace,
}

impl CompactOperatorSpace {
    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }
}

pub fn compacts(source: &HilbertModule, target: &HilbertModule, tol: Tolerance) -> Result<CompactOperatorSpace, BimoduleError> {
    if !same_algebra(target.algebra(), source.algebra(), tol) {
        return Err(BimoduleError::AlgebraMismatch);
    }
    let thetas: Vec<_> = target
        .basis()
        .iter()
        .flat_map(|u| source.basis().iter().map(move |v| u * v.adjoint()))
        .collect();
    Ok(CompactOperatorSpace {
        carrier: MatrixSubspace::span(target.rows(), source.rows(), &thetas, tol)?,
    })
}

/// The left module `V*` of conjugate transposes.
#[derive(Debug, Clone)]
pub struct DualModule {
    algebra: FinDimCStar,
    carrier: MatrixSubspace,
}

impl DualModule {
    pub fn carrier(&self) -> &MatrixSubspace {
        &self.carrier
    }

    pub fn algebra(&self) -> &FinDimCStar {
        &self.algebra
    }

    /// Left inner product, linear in the first variable: `x y*`.
    pub fn inner(&self, x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
        x * y.adjoint()
    }

    /// Dualizing again gives back a right module.
    pub fn dual(&self) -> HilbertModule {
        HilbertModule {
            algebra: self.algebra.clone(),
            carrier: self.carrier.adjoint(),
        }
    }
}

pub fn dual_module(v: &HilbertModule) -> DualModule {
    DualModule {
        algebra: v.algebra.clone(),
        carrier: v.carrier.adjoint(),
    }
}

/// Concrete `B`-`A` bimodule data: a right Hilbert `A`-module carrying a
/// left `B`-action by matrix multiplication.
#[derive(Debug, Clone)]
pub struct Bimodule {
    left: FinDimCStar,
    module: HilbertModule,
}

impl Bimodule {
    pub fn new(left: FinDimCStar, module: HilbertModule, tol: Tolerance) -> Result<Self, BimoduleError> {
        if left.size() != module.rows() {
            return Err(BimoduleError::IncompatibleAlgebras);
        }
        for (i, v) in module.basis().iter().enumerate() {
            for (j, b) in left.basis().iter().enumerate() {
                if !module.carrier().contains(&(b * v), tol)? {
                    return Err(BimoduleError::LeftActionNotClosed(i, j));
                }
            }
        }
        Ok(Self { left, module })
    }

    /// Left Hilbert `B`-module structure: `v w*` lands in `B` and spans it.
    pub fn is_left_full(&self, tol: Tolerance) -> bool {
        let basis = self.module.basis();
        let values: Vec<_> = basis
            .iter()
            .flat_map(|u| basis.iter().map(move |v| u * v.adjoint()))
            .collect();
        let n = self.left.size();
        match MatrixSubspace::span(n, n, &values, tol) {
            Ok(s) => s.same_as(self.left.carrier(), tol).unwrap_or(false),
            Err(_) => false,
        }
    }

    /// Full on both sides with left inner products inside `B`.
    pub fn is_equivalence(&self, tol: Tolerance) -> bool {
        let basis = self.module.basis();
        let left_values_ok = basis.iter().all(|u| {
            basis
                .iter()
                .all(|v| self.left.contains(&(u * v.adjoint()), tol).unwrap_or(false))
        });
        left_values_ok && self.is_left_full(tol) && self.module.is_full(tol)
    }

    pub fn left(&self) -> &FinDimCStar {
        &self.left
    }

    pub fn right(&self) -> &FinDimCStar {
        self.module.algebra()
    }

    pub fn module(&self) -> &HilbertModule {
        &self.module
    }

    /// `V*` as an `A`-`B` bimodule.
    pub fn dual(&self) -> Bimodule {
        Bimodule {
            left: self.module.algebra().clone(),
            module: HilbertModule {
                algebra: self.left.clone(),
                carrier: self.module.carrier().adjoint(),
            },
        }
    }

    /// `B` as a `B`-`B` bimodule.
    pub fn identity(algebra: &FinDimCStar) -> Bimodule {
        Bimodule {
            left: algebra.clone(),
            module: HilbertModule::over_itself(algebra),
        }
    }
}

/// `U ⊗_B V` as the quotient of the algebraic tensor product by the null
/// space of its Gram form.
///
/// The `A`-valued form `⟨u⊗v, u'⊗v'⟩ = v* ⟨u, u'⟩ v'` is positive, and the
/// trace is faithful on positive matrices, so its null space is that of the
/// scalar form `trace(v* u* u' v')`. The quotient basis is stored as
/// eigenvectors of that scalar Gram matrix.
#[derive(Debug, Clone)]
pub struct BalancedTensor {
    left_basis: Vec<ComplexMatrix>,
    right_basis: Vec<ComplexMatrix>,
    right_algebra: FinDimCStar,
    gram: DMatrix<Complex64>,
    quotient: DMatrix<Complex64>,
    inner: DMatrix<Complex64>,
    balancing_residual: f64,
}

impl BalancedTensor {
    pub fn dim(&self) -> usize {
        self.quotient.ncols()
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    /// Inner product matrix of the quotient basis.
    pub fn inner(&self) -> &DMatrix<Complex64> {
        &self.inner
    }

    /// Largest Gram norm of `ub ⊗ v - u ⊗ bv` over basis elements.
    pub fn balancing_residual(&self) -> f64 {
        self.balancing_residual
    }

    /// Smallest eigenvalue of the Gram form before the quotient.
    pub fn gram_min_eigenvalue(&self) -> f64 {
        matrixcore::hermitian_eigenvalues(&self.gram)
            .map(|ev| ev.first().copied().unwrap_or(0.0))
            .unwrap_or(0.0)
    }

    /// Smallest eigenvalue of the inner product after the quotient.
    pub fn quotient_min_eigenvalue(&self) -> f64 {
        matrixcore::hermitian_eigenvalues(&self.inner)
            .map(|ev| ev.first().copied().unwrap_or(0.0))
            .unwrap_or(0.0)
    }

    /// `Σ q_{ij} u_i v_j` for the `k`-th quotient basis vector.
    pub fn realize(&self, k: usize) -> ComplexMatrix {
        let q = self.right_basis.len();
        let (rows, cols) = (
            self.left_basis.first().map_or(0, |u| u.nrows()),
            self.right_basis.first().map_or(0, |v| v.ncols()),
        );
        let mut out = matrixcore::zeros(rows, cols);
        for (i, u) in self.left_basis.iter().enumerate() {
            for (j, v) in self.right_basis.iter().enumerate() {
                let coeff = self.quotient[(i * q + j, k)];
                if coeff != Complex64::new(0.0, 0.0) {
                    out += u * v * coeff;
                }
            }
        }
        out
    }

    /// The tensor product as a concrete right module over the right algebra,
    /// via `u ⊗ v ↦ u v`.
    pub fn as_module(&self, tol: Tolerance) -> Result<HilbertModule, BimoduleError> {
        let rows = self.left_basis.first().map_or(0, |u| u.nrows());
        let images: Vec<_> = (0..self.dim()).map(|k| self.realize(k)).collect();
        let carrier = MatrixSubspace::span(rows, self.right_algebra.size(), &images, tol)?;
        HilbertModule::new(carrier, self.right_algebra.clone(), tol)
    }
}

pub fn balanced_tensor(u: &HilbertModule, v: &Bimodule, tol: Tolerance) -> Result<BalancedTensor, BimoduleError> {
    if u.algebra().size() != v.left().size() || !same_algebra(u.algebra(), v.left(), tol) {
        return Err(BimoduleError::IncompatibleAlgebras);
    }
    let left_basis = u.basis().to_vec();
    let right_basis = v.module().basis().to_vec();
    let (p, q) = (left_basis.len(), right_basis.len());
    let products: Vec<ComplexMatrix> = left_basis
        .iter()
        .flat_map(|a| right_basis.iter().map(move |b| a * b))
        .collect();
    let gram = DMatrix::from_fn(p * q, p * q, |r, s| matrixcore::frobenius_inner(&products[r], &products[s]));

    let (quotient, inner) = if p * q == 0 {
        (DMatrix::zeros(p * q, 0), DMatrix::zeros(0, 0))
    } else {
        let h = (&gram + gram.adjoint()).scale(0.5);
        let eig = h.symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
        let thr = tol.threshold(top);
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > thr).collect();
        let mut quotient = DMatrix::zeros(p * q, keep.len());
        for (j, &i) in keep.iter().enumerate() {
            quotient.set_column(j, &eig.eigenvectors.column(i));
        }
        let inner = quotient.adjoint() * &gram * &quotient;
        (quotient, inner)
    };

    // ub ⊗ v - u ⊗ bv must be null
    let mut balancing_residual: f64 = 0.0;
    for (i, a) in left_basis.iter().enumerate() {
        for b in u.algebra().basis() {
            let left_coords = u.carrier().coordinates(&(a * b))?;
            for (j, w) in right_basis.iter().enumerate() {
                let right_coords = v.module().carrier().coordinates(&(b * w))?;
                let mut xi = nalgebra::DVector::<Complex64>::zeros(p * q);
                for k in 0..p {
                    xi[k * q + j] += left_coords[k];
                }
                for l in 0..q {
                    xi[i * q + l] -= right_coords[l];
                }
                let norm2 = (xi.adjoint() * &gram * &xi)[(0, 0)].re.max(0.0);
                balancing_residual = balancing_residual.max(norm2.sqrt());
            }
        }
    }

    Ok(BalancedTensor {
        left_basis,
        right_basis,
        right_algebra: v.right().clone(),
        gram,
        quotient,
        inner,
        balancing_residual,
    })
}

/// The map `w ⊗ v* ↦ θ_{w,v}` from `W ⊗_A V*` onto `K(V, W)`.
#[derive(Debug, Clone)]
pub struct CompactsIdentification {
    pub tensor: BalancedTensor,
    pub compacts: CompactOperatorSpace,
    /// Images of the quotient basis vectors.
    pub images: Vec<ComplexMatrix>,
    /// Largest deviation between the tensor inner product and the Frobenius
    /// inner product of the images.
    pub isometry_residual: f64,
}

pub fn identify_compacts(w: &HilbertModule, v: &HilbertModule, tol: Tolerance) -> Result<CompactsIdentification, BimoduleError> {
    if !same_algebra(w.algebra(), v.algebra(), tol) {
        return Err(BimoduleError::AlgebraMismatch);
    }
    if !w.is_full(tol) || !v.is_full(tol) {
        return Err(BimoduleError::NotFull);
    }
    let v_dual = Bimodule {
        left: v.algebra().clone(),
        module: HilbertModule {
            // the right coefficients of V* play no role in the quotient
            algebra: FinDimCStar::matrix_algebra(v.rows()),
            carrier: v.carrier().adjoint(),
        },
    };
    let tensor = balanced_tensor(w, &v_dual, tol)?;
    let images: Vec<_> = (0..tensor.dim()).map(|k| tensor.realize(k)).collect();
    let compacts = compacts(v, w, tol)?;
    let rank = MatrixSubspace::span(w.rows(), v.rows(), &images, tol)?.dim();
    let mut isometry_residual: f64 = 0.0;
    for (a, x) in images.iter().enumerate() {
        for (b, y) in images.iter().enumerate() {
            let d = matrixcore::frobenius_inner(x, y) - tensor.inner()[(a, b)];
            isometry_residual = isometry_residual.max(d.norm());
        }
    }
    if rank != tensor.dim() || rank != compacts.dim() || !compacts.carrier.contains_subspace(
        &MatrixSubspace::span(w.rows(), v.rows(), &images, tol)?,
        tol,
    )? {
        return Err(BimoduleError::NotBijective {
            rank,
            tensor_dim: tensor.dim(),
            compacts_dim: compacts.dim(),
        });
    }
    Ok(CompactsIdentification {
        tensor,
        compacts,
        images,
        isometry_residual,
    })
}

/// Outcome of comparing `K(U ⊗_B V)` with `K(U)`.
#[derive(Debug, Clone)]
pub struct CompactsChain {
    pub tensor_compacts_dim: usize,
    pub left_compacts_dim: usize,
    /// Least-squares residual of `θ_{uv, u'v'} ↦ θ_{u (v v'*), u'}`.
    pub well_defined_residual: f64,
    /// Largest defect of multiplicativity and adjoint preservation.
    pub homomorphism_residual: f64,
    pub injective: bool,
}

/// Builds the isomorphism `K(U ⊗_B V) -> K(U)` for an equivalence bimodule
/// `V`, on the spanning operators `θ_{u⊗v, u'⊗v'} ↦ θ_{u ⟨v, v'⟩_B, u'}`.
pub fn compacts_chain(u: &HilbertModule, v: &Bimodule, tol: Tolerance) -> Result<CompactsChain, BimoduleError> {
    let tensor = balanced_tensor(u, v, tol)?;
    let uv = tensor.as_module(tol)?;
    let k_uv = compacts(&uv, &uv, tol)?;
    let k_u = compacts(u, u, tol)?;
    let mut equations = Vec::new();
    for a in u.basis() {
        for b in v.module().basis() {
            for a2 in u.basis() {
                for b2 in v.module().basis() {
                    let source = (a * b) * (a2 * b2).adjoint();
                    let target = (a * (b * b2.adjoint())) * a2.adjoint();
                    equations.push((source, target));
                }
            }
        }
    }
    let (well_defined_residual, homomorphism_residual, injective) = if equations.is_empty() {
        (0.0, 0.0, k_u.dim() == 0)
    } else {
        let sol = solve_on_span(&equations, tol)?;
        let mut hom: f64 = 0.0;
        let basis = k_uv.carrier.basis();
        let mut images = Vec::with_capacity(basis.len());
        for x in basis {
            let fx = sol.map.apply(x)?;
            hom = hom.max(frobenius_norm(&(sol.map.apply(&x.adjoint())? - fx.adjoint())));
            for y in basis {
                let fy = sol.map.apply(y)?;
                hom = hom.max(frobenius_norm(&(sol.map.apply(&(x * y))? - &fx * fy)));
            }
            images.push(fx);
        }
        let image = MatrixSubspace::span(u.rows(), u.rows(), &images, tol)?;
        (sol.residual, hom, image.dim() == basis.len())
    };
    Ok(CompactsChain {
        tensor_compacts_dim: k_uv.dim(),
        left_compacts_dim: k_u.dim(),
        well_defined_residual,
        homomorphism_residual,
        injective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::{c, matrix_unit};

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn algebra_units() {
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        assert_eq!(diag.dim(), 2);
        assert!((diag.unit() - matrixcore::identity(2)).norm() < 1e-12);
        // corner algebra: unit is e11, not the identity
        let corner = FinDimCStar::new(2, &[matrix_unit(2, 2, 0, 0)], tol()).unwrap();
        assert!((corner.unit() - matrix_unit(2, 2, 0, 0)).norm() < 1e-12);
        assert!(matches!(
            FinDimCStar::new(2, &[matrix_unit(2, 2, 0, 1)], tol()),
            Err(BimoduleError::NotClosedUnderAdjoint(0))
        ));
    }

    #[test]
    fn center_dimensions() {
        assert_eq!(FinDimCStar::matrix_algebra(3).center_dim(tol()), 1);
        assert_eq!(FinDimCStar::block_diagonal(&[1, 2, 2]).center_dim(tol()), 3);
    }

    #[test]
    fn module_examples() {
        let col = HilbertModule::column(3);
        assert_eq!(col.dim(), 3);
        assert!(col.is_full(tol()));
        let m2 = FinDimCStar::matrix_algebra(2);
        let m2_mod = make_module(m2.basis(), &m2, tol()).unwrap();
        assert!(m2_mod.is_full(tol()));
        assert!(!HilbertModule::zero(2, &m2).is_full(tol()));

        // over C·I, e11 has inner product e11, which is not scalar
        let scalar_i = FinDimCStar::new(2, &[matrixcore::identity(2)], tol()).unwrap();
        assert_eq!(
            make_module(&[matrix_unit(2, 2, 0, 0)], &scalar_i, tol()).unwrap_err(),
            BimoduleError::InnerProductEscapesAlgebra(0, 0)
        );
        // a row over the diagonal algebra is not closed under the action
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        let row = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let row_mod = make_module(std::slice::from_ref(&row), &diag, tol()).unwrap();
        assert_eq!(row_mod.dim(), 1);
        let both = ComplexMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(make_module(&[both], &diag, tol()).is_err());
    }

    #[test]
    fn theta_examples() {
        let col = HilbertModule::column(2);
        let u = ComplexMatrix::from_column_slice(2, 1, &[c(0.6, 0.0), c(0.0, 0.8)]);
        let p = theta(&col, &u, &col, &u, tol()).unwrap();
        assert!((&p * &p - &p).norm() < 1e-12);
        assert!((p.adjoint() - &p).norm() < 1e-12);
        assert!((p.trace().re - 1.0).abs() < 1e-12);
        let v = ComplexMatrix::from_column_slice(2, 1, &[c(1.0, 2.0), c(-1.0, 0.5)]);
        let t_uv = theta(&col, &u, &col, &v, tol()).unwrap();
        let t_vu = theta(&col, &v, &col, &u, tol()).unwrap();
        assert!((t_uv.adjoint() - t_vu).norm() < 1e-12);
        let zero = matrixcore::zeros(2, 1);
        assert!(theta(&col, &zero, &col, &v, tol()).unwrap().norm() == 0.0);
        let m2 = HilbertModule::over_itself(&FinDimCStar::matrix_algebra(2));
        assert_eq!(
            theta(&col, &u, &m2, &matrixcore::identity(2), tol()).unwrap_err(),
            BimoduleError::AlgebraMismatch
        );
    }

    #[test]
    fn compact_dimensions() {
        let col = HilbertModule::column(3);
        assert_eq!(compacts(&col, &col, tol()).unwrap().dim(), 9);
        let m2 = HilbertModule::over_itself(&FinDimCStar::matrix_algebra(2));
        assert_eq!(compacts(&m2, &m2, tol()).unwrap().dim(), 4);
        let zero = HilbertModule::zero(2, &FinDimCStar::scalars());
        assert_eq!(compacts(&zero, &col, tol()).unwrap().dim(), 0);
    }

    #[test]
    fn dual_identities() {
        let diag = FinDimCStar::matrix_algebra(2);
        let v = HilbertModule::over_itself(&diag);
        let dual = dual_module(&v);
        for a in diag.basis() {
            for x in v.basis() {
                let lhs = a * x.adjoint();
                let rhs = (x * a.adjoint()).adjoint();
                assert!((lhs - rhs).norm() < 1e-12);
            }
        }
        for x in v.basis() {
            for y in v.basis() {
                let lhs = dual.inner(&x.adjoint(), &y.adjoint());
                assert!((lhs - v.inner(x, y)).norm() < 1e-12);
            }
        }
        assert!(dual.dual().carrier().same_as(v.carrier(), tol()).unwrap());
        let col_dual = dual_module(&HilbertModule::column(3));
        assert_eq!(col_dual.carrier().shape(), (1, 3));
        assert_eq!(col_dual.carrier().dim(), 3);
    }

    #[test]
    fn tensor_dimensions() {
        let m3 = FinDimCStar::matrix_algebra(3);
        let row = HilbertModule::new(MatrixSubspace::full(1, 3), m3.clone(), tol()).unwrap();
        let col = Bimodule::new(m3.clone(), HilbertModule::column(3), tol()).unwrap();
        let t = balanced_tensor(&row, &col, tol()).unwrap();
        assert_eq!(t.dim(), 1);
        assert!(t.balancing_residual() < 1e-12);
        assert!(t.gram_min_eigenvalue() > -1e-12);
        assert!(t.quotient_min_eigenvalue() > 1e-9);

        // B ⊗_B V ≅ V
        let b = FinDimCStar::block_diagonal(&[1, 2]);
        let v = Bimodule::identity(&b);
        let t = balanced_tensor(&HilbertModule::over_itself(&b), &v, tol()).unwrap();
        assert_eq!(t.dim(), b.dim());

        let m2 = FinDimCStar::matrix_algebra(2);
        assert_eq!(
            balanced_tensor(&row, &Bimodule::identity(&m2), tol()).unwrap_err(),
            BimoduleError::IncompatibleAlgebras
        );
    }

    #[test]
    fn compacts_identification() {
        let m2 = FinDimCStar::matrix_algebra(2);
        let a = HilbertModule::over_itself(&m2);
        let id = identify_compacts(&a, &a, tol()).unwrap();
        assert_eq!(id.tensor.dim(), m2.dim());
        assert!(id.isometry_residual < 1e-9);

        let col = HilbertModule::column(3);
        let id = identify_compacts(&col, &col, tol()).unwrap();
        assert_eq!(id.tensor.dim(), 9);
        assert_eq!(id.compacts.dim(), 9);

        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        let half = make_module(&[matrix_unit(2, 2, 0, 0)], &diag, tol()).unwrap();
        assert!(!half.is_full(tol()));
        let whole = HilbertModule::over_itself(&diag);
        assert_eq!(identify_compacts(&whole, &half, tol()).unwrap_err(), BimoduleError::NotFull);
    }
}
