//! The reduced C*-algebra of a Fell bundle over a finite groupoid.
//!
//! Sections are finitely supported, so the convolution algebra is already
//! complete and unital. The norm comes from the regular representations on
//! `V_x = ⊕_{s(γ)=x} E_γ`, realized as stacked `N_x x n_x` matrices with
//! `N_x = Σ_{s(γ)=x} n_{r(γ)}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bimodule::{BimoduleError, FinDimCStar, HilbertModule};
use crate::fellbundle::{pullback, BundleError, ConcreteFellBundle};
use crate::groupoid::{self, Arrow, ArrowSubset, GroupoidError};
use crate::matrixcore::{
    self, frobenius_norm, orthonormal_range, spectral_norm, ComplexMatrix, MatrixError, MatrixSubspace, Tolerance,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Bimodule(#[from] BimoduleError),
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error("sections live over different bundles")]
    BundleMismatch,
    #[error("expected {expected} values, found {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("value at arrow {arrow} leaves its fiber (residual {residual:e})")]
    NotInFiber { arrow: Arrow, residual: f64 },
    #[error("support is not a Γ-set")]
    NotANormalizer,
    #[error("section has a nonzero value off the units, at arrow {0}")]
    NotUnitSupported(Arrow),
    #[error("groupoid is not principal")]
    NotPrincipal,
    #[error("fiber over {0} is not one-dimensional")]
    NotLineBundle(Arrow),
}

/// A section of a concrete bundle: one fiber element per arrow.
#[derive(Debug, Clone)]
pub struct Section<'a> {
    bundle: &'a ConcreteFellBundle,
    values: Vec<ComplexMatrix>,
}

impl<'a> Section<'a> {
    /// Checks that every value lies in its fiber.
    pub fn new(bundle: &'a ConcreteFellBundle, values: Vec<ComplexMatrix>, tol: Tolerance) -> Result<Self, AlgebraError> {
        let n = bundle.groupoid().len();
        if values.len() != n {
            return Err(AlgebraError::WrongLength {
                expected: n,
                found: values.len(),
            });
        }
        for (a, v) in values.iter().enumerate() {
            let residual = bundle.fiber(a).residual(v)?;
            if !tol.accepts(residual, frobenius_norm(v)) {
                return Err(AlgebraError::NotInFiber { arrow: a, residual });
            }
        }
        Ok(Self { bundle, values })
    }

    pub fn zero(bundle: &'a ConcreteFellBundle) -> Self {
        let values = bundle
            .groupoid()
            .arrows()
            .map(|a| {
                let (r, c) = bundle.fiber_shape(a);
                matrixcore::zeros(r, c)
            })
            .collect();
        Self { bundle, values }
    }

    /// `m` at `γ`, zero elsewhere.
    pub fn single(bundle: &'a ConcreteFellBundle, g: Arrow, m: ComplexMatrix, tol: Tolerance) -> Result<Self, AlgebraError> {
        let mut values = Self::zero(bundle).values;
        values[g] = m;
        Self::new(bundle, values, tol)
    }

    /// The unit of each `E_x` at `x`, zero off the units.
    pub fn unit(bundle: &'a ConcreteFellBundle, tol: Tolerance) -> Result<Self, AlgebraError> {
        Self::from_unit_function(bundle, &vec![Complex64::new(1.0, 0.0); bundle.groupoid().units().len()], tol)
    }

    /// `g(x) 1_{E_x}` at each unit; `g` is listed in unit order.
    pub fn from_unit_function(
        bundle: &'a ConcreteFellBundle,
        g: &[Complex64],
        tol: Tolerance,
    ) -> Result<Self, AlgebraError> {
        let units = bundle.groupoid().units();
        if g.len() != units.len() {
            return Err(AlgebraError::WrongLength {
                expected: units.len(),
                found: g.len(),
            });
        }
        let mut s = Self::zero(bundle);
        for (&x, &v) in units.iter().zip(g) {
            s.values[x] = bundle.unit_algebra(x, tol)?.unit() * v;
        }
        Ok(s)
    }

    /// Gaussian coordinates in every fiber.
    pub fn random<R: Rng>(bundle: &'a ConcreteFellBundle, rng: &mut R) -> Self {
        let values = bundle
            .groupoid()
            .arrows()
            .map(|a| bundle.random_fiber_element(a, rng))
            .collect();
        Self { bundle, values }
    }

    /// Random values on the given arrows, zero elsewhere.
    pub fn random_supported<R: Rng>(bundle: &'a ConcreteFellBundle, support: &[Arrow], rng: &mut R) -> Self {
        let mut s = Self::zero(bundle);
        for &a in support {
            s.values[a] = bundle.random_fiber_element(a, rng);
        }
        s
    }

    /// One section per fiber basis element, arrow by arrow.
    pub fn standard_basis(bundle: &'a ConcreteFellBundle) -> Vec<Self> {
        let mut out = Vec::with_capacity(bundle.total_dim());
        for a in bundle.groupoid().arrows() {
            for b in bundle.fiber(a).basis() {
                let mut s = Self::zero(bundle);
                s.values[a] = b.clone();
                out.push(s);
            }
        }
        out
    }

    pub fn bundle(&self) -> &'a ConcreteFellBundle {
        self.bundle
    }

    pub fn value(&self, g: Arrow) -> &ComplexMatrix {
        &self.values[g]
    }

    pub fn values(&self) -> &[ComplexMatrix] {
        &self.values
    }

    /// Arrows where the value is nonzero at tolerance.
    pub fn support(&self, tol: Tolerance) -> Vec<Arrow> {
        let scale = self.values.iter().map(frobenius_norm).fold(0.0, f64::max);
        self.bundle
            .groupoid()
            .arrows()
            .filter(|&a| frobenius_norm(&self.values[a]) > tol.threshold(scale))
            .collect()
    }

    pub fn is_zero(&self, tol: Tolerance) -> bool {
        self.values.iter().all(|v| frobenius_norm(v) <= tol.eps())
    }

    pub fn add(&self, other: &Section<'a>) -> Result<Section<'a>, AlgebraError> {
        same_bundle(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Section {
            bundle: self.bundle,
            values,
        })
    }

    pub fn sub(&self, other: &Section<'a>) -> Result<Section<'a>, AlgebraError> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> Section<'a> {
        Section {
            bundle: self.bundle,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `max_γ |f(γ) - g(γ)|_F`.
    pub fn distance(&self, other: &Section<'a>) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| frobenius_norm(&(a - b)))
            .fold(0.0, f64::max)
    }

    /// `max_γ |f(γ)|_F`, the scale used in relative comparisons.
    pub fn max_entry_norm(&self) -> f64 {
        self.values.iter().map(frobenius_norm).fold(0.0, f64::max)
    }
}

fn same_bundle(f: &Section<'_>, g: &Section<'_>) -> Result<(), AlgebraError> {
    if std::ptr::eq(f.bundle, g.bundle) {
        Ok(())
    } else {
        Err(AlgebraError::BundleMismatch)
    }
}

/// `(fg)(γ) = Σ_{γ=αβ} f(α) g(β)`.
pub fn convolve<'a>(f: &Section<'a>, g: &Section<'a>) -> Result<Section<'a>, AlgebraError> {
    same_bundle(f, g)?;
    let gr = f.bundle.groupoid();
    let mut out = Section::zero(f.bundle);
    for (a, b) in gr.composable_pairs() {
        let ab = gr.compose(a, b).expect("composable");
        out.values[ab] += &f.values[a] * &g.values[b];
    }
    Ok(out)
}

/// `f*(γ) = f(γ*)*`.
pub fn involute<'a>(f: &Section<'a>) -> Section<'a> {
    let gr = f.bundle.groupoid();
    Section {
        bundle: f.bundle,
        values: gr.arrows().map(|a| f.values[gr.inverse(a)].adjoint()).collect(),
    }
}

/// The restriction `P(f)` to the unit space.
pub fn restrict<'a>(f: &Section<'a>) -> Section<'a> {
    let mut out = Section::zero(f.bundle);
    for &x in f.bundle.groupoid().units() {
        out.values[x] = f.values[x].clone();
    }
    out
}

/// `⟨f, g⟩ = P(f* g)`, with value `Σ_{s(γ)=x} f(γ)* g(γ)` at `x`.
pub fn inner_product<'a>(f: &Section<'a>, g: &Section<'a>) -> Result<Section<'a>, AlgebraError> {
    same_bundle(f, g)?;
    let gr = f.bundle.groupoid();
    let mut out = Section::zero(f.bundle);
    for a in gr.arrows() {
        out.values[gr.source(a)] += f.values[a].adjoint() * &g.values[a];
    }
    Ok(out)
}

/// `|f|_2 = |⟨f, f⟩|^{1/2}`.
pub fn l2_norm(f: &Section<'_>) -> f64 {
    let ip = inner_product(f, f).expect("same bundle");
    f.bundle
        .groupoid()
        .units()
        .iter()
        .map(|&x| spectral_norm(&ip.values[x]))
        .fold(0.0, f64::max)
        .sqrt()
}

/// `max_γ |f(γ)|`.
pub fn sup_norm(f: &Section<'_>) -> f64 {
    f.values.iter().map(spectral_norm).fold(0.0, f64::max)
}

/// `V_x = ⊕_{s(γ)=x} E_γ` as stacked matrices, a right Hilbert `E_x`-module.
#[derive(Debug, Clone)]
pub struct RegularModule {
    unit: Arrow,
    blocks: Vec<Block>,
    rows: usize,
    carrier: MatrixSubspace,
    algebra: FinDimCStar,
}

/// Position of `E_γ` inside `V_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub arrow: Arrow,
    pub offset: usize,
    pub rows: usize,
}

impl RegularModule {
    pub fn unit(&self) -> Arrow {
        self.unit
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_of(&self, g: Arrow) -> Option<&Block> {
        self.blocks.iter().find(|b| b.arrow == g)
    }

    /// `N_x`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn carrier(&self) -> &MatrixSubspace {
        &self.carrier
    }

    pub fn algebra(&self) -> &FinDimCStar {
        &self.algebra
    }

    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }

    /// Stacks per-block values `c_γ` into an element of `V_x`.
    pub fn embed(&self, parts: &[(Arrow, ComplexMatrix)]) -> ComplexMatrix {
        let mut out = matrixcore::zeros(self.rows, self.algebra.size());
        for (g, m) in parts {
            let b = self.block_of(*g).expect("arrow with source x");
            out.view_mut((b.offset, 0), (b.rows, m.ncols())).copy_from(m);
        }
        out
    }

    /// The block of `v` over `γ`.
    pub fn component(&self, v: &ComplexMatrix, g: Arrow) -> ComplexMatrix {
        let b = self.block_of(g).expect("arrow with source x");
        v.view((b.offset, 0), (b.rows, v.ncols())).into_owned()
    }

    /// The carrier as a [`HilbertModule`] over `E_x`; validates the
    /// inner product `⟨c, d⟩ = Σ_γ c_γ* d_γ` lands in `E_x`.
    pub fn as_hilbert_module(&self, tol: Tolerance) -> Result<HilbertModule, AlgebraError> {
        Ok(HilbertModule::new(self.carrier.clone(), self.algebra.clone(), tol)?)
    }

    /// Orthonormal basis of the column span of `V_x`, the Hilbert space on
    /// which `π_x` is faithful.
    pub fn column_frame(&self, tol: Tolerance) -> DMatrix<Complex64> {
        let n = self.algebra.size();
        let basis = self.carrier.basis();
        let mut cols = DMatrix::zeros(self.rows, basis.len() * n);
        for (k, b) in basis.iter().enumerate() {
            cols.view_mut((0, k * n), (self.rows, n)).copy_from(b);
        }
        orthonormal_range(&cols, tol)
    }
}

pub fn fiber_module(e: &ConcreteFellBundle, x: Arrow, tol: Tolerance) -> Result<RegularModule, AlgebraError> {
    let g = e.groupoid();
    let mut blocks = Vec::new();
    let mut rows = 0;
    for a in g.arrows_with_source(x) {
        let r = e.unit_dim(g.range(a));
        blocks.push(Block {
            arrow: a,
            offset: rows,
            rows: r,
        });
        rows += r;
    }
    let n = e.unit_dim(x);
    let mut gens = Vec::new();
    for b in &blocks {
        for m in e.fiber(b.arrow).basis() {
            let mut v = matrixcore::zeros(rows, n);
            v.view_mut((b.offset, 0), (b.rows, n)).copy_from(m);
            gens.push(v);
        }
    }
    let carrier = MatrixSubspace::span(rows, n, &gens, tol)?;
    Ok(RegularModule {
        unit: x,
        blocks,
        rows,
        carrier,
        algebra: e.unit_algebra(x, tol)?,
    })
}

/// `π_x(f)`: block `(γ, β)` is `f(γβ*)`.
pub fn represent(f: &Section<'_>, v: &RegularModule) -> ComplexMatrix {
    let g = f.bundle.groupoid();
    let mut out = matrixcore::zeros(v.rows, v.rows);
    for bg in &v.blocks {
        for bb in &v.blocks {
            let a = g.compose(bg.arrow, g.inverse(bb.arrow)).expect("common source");
            out.view_mut((bg.offset, bb.offset), (bg.rows, bb.rows))
                .copy_from(&f.values[a]);
        }
    }
    out
}

/// The regular modules of a bundle with their faithful frames, built once
/// and reused for norms.
#[derive(Debug, Clone)]
pub struct RegularRepresentation {
    modules: Vec<RegularModule>,
    frames: Vec<DMatrix<Complex64>>,
}

impl RegularRepresentation {
    pub fn new(e: &ConcreteFellBundle, tol: Tolerance) -> Result<Self, AlgebraError> {
        let modules = e
            .groupoid()
            .units()
            .iter()
            .map(|&x| fiber_module(e, x, tol))
            .collect::<Result<Vec<_>, _>>()?;
        let frames = modules.iter().map(|m| m.column_frame(tol)).collect();
        Ok(Self { modules, frames })
    }

    pub fn modules(&self) -> &[RegularModule] {
        &self.modules
    }

    /// `π_x(f)` restricted to the column span of `V_x`.
    pub fn compressed(&self, f: &Section<'_>, k: usize) -> ComplexMatrix {
        let q = &self.frames[k];
        q.adjoint() * represent(f, &self.modules[k]) * q
    }

    /// `max_x |π_x(f)|`.
    pub fn norm(&self, f: &Section<'_>) -> f64 {
        (0..self.modules.len())
            .map(|k| spectral_norm(&(represent(f, &self.modules[k]) * &self.frames[k])))
            .fold(0.0, f64::max)
    }

    /// `⊕_x π_x(f)` on the faithful frames.
    pub fn block_diagonal(&self, f: &Section<'_>) -> ComplexMatrix {
        let size: usize = self.frames.iter().map(|q| q.ncols()).sum();
        let mut out = matrixcore::zeros(size, size);
        let mut off = 0;
        for k in 0..self.modules.len() {
            let h = self.frames[k].ncols();
            out.view_mut((off, off), (h, h)).copy_from(&self.compressed(f, k));
            off += h;
        }
        out
    }

    pub fn size(&self) -> usize {
        self.frames.iter().map(|q| q.ncols()).sum()
    }
}

/// `|f| = max_x |π_x(f)|`.
pub fn operator_norm(f: &Section<'_>, tol: Tolerance) -> Result<f64, AlgebraError> {
    Ok(RegularRepresentation::new(f.bundle, tol)?.norm(f))
}

/// `⊕_x π_x(C(E))` as a concrete C*-algebra.
#[derive(Debug, Clone)]
pub struct AlgebraImage {
    rep: RegularRepresentation,
    algebra: FinDimCStar,
    basis_images: Vec<ComplexMatrix>,
    faithful_rank: usize,
    total_dim: usize,
}

impl AlgebraImage {
    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn center_dim(&self, tol: Tolerance) -> usize {
        self.algebra.center_dim(tol)
    }

    pub fn algebra(&self) -> &FinDimCStar {
        &self.algebra
    }

    /// Side length of the block-diagonal matrices.
    pub fn size(&self) -> usize {
        self.algebra.size()
    }

    pub fn representation(&self) -> &RegularRepresentation {
        &self.rep
    }

    /// Images of [`Section::standard_basis`], in order.
    pub fn basis_images(&self) -> &[ComplexMatrix] {
        &self.basis_images
    }

    pub fn image(&self, f: &Section<'_>) -> ComplexMatrix {
        self.rep.block_diagonal(f)
    }

    /// Rank of the standard basis images; equals `Σ dim E_γ` exactly when
    /// the representation is injective.
    pub fn faithful_rank(&self) -> usize {
        self.faithful_rank
    }

    pub fn is_faithful(&self) -> bool {
        self.faithful_rank == self.total_dim
    }
}

pub fn algebra_image(e: &ConcreteFellBundle, tol: Tolerance) -> Result<AlgebraImage, AlgebraError> {
    let rep = RegularRepresentation::new(e, tol)?;
    let basis_images: Vec<ComplexMatrix> = Section::standard_basis(e)
        .iter()
        .map(|s| rep.block_diagonal(s))
        .collect();
    let size = rep.size();
    let span = MatrixSubspace::span(size, size, &basis_images, tol)?;
    let faithful_rank = span.dim();
    let algebra = FinDimCStar::from_subspace(span, tol)?;
    Ok(AlgebraImage {
        rep,
        algebra,
        basis_images,
        faithful_rank,
        total_dim: e.total_dim(),
    })
}

/// Support inside a Γ-set.
pub fn is_normalizer(f: &Section<'_>, tol: Tolerance) -> bool {
    let g = f.bundle.groupoid();
    let support = f.support(tol);
    match ArrowSubset::new(g, support) {
        Ok(u) => groupoid::is_gamma_set(&u),
        Err(_) => false,
    }
}

/// `f* g f` for unit-supported `g` and a normalizer `f`; certified to be
/// unit-supported.
pub fn normalizer_compression<'a>(
    g: &Section<'a>,
    f: &Section<'a>,
    tol: Tolerance,
) -> Result<Section<'a>, AlgebraError> {
    same_bundle(f, g)?;
    if !is_normalizer(f, tol) {
        return Err(AlgebraError::NotANormalizer);
    }
    let gr = f.bundle.groupoid();
    for a in gr.arrows().filter(|&a| !gr.is_unit(a)) {
        if frobenius_norm(&g.values[a]) > tol.eps() {
            return Err(AlgebraError::NotUnitSupported(a));
        }
    }
    let out = convolve(&convolve(&involute(f), g)?, f)?;
    let scale = out.max_entry_norm();
    for a in gr.arrows().filter(|&a| !gr.is_unit(a)) {
        if !tol.accepts(frobenius_norm(&out.values[a]), scale) {
            return Err(AlgebraError::NotUnitSupported(a));
        }
    }
    Ok(out)
}

/// Left multiplication by a function on the unit space:
/// `(gf)(γ) = g(r(γ)) f(γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    // unit order
    values: Vec<Complex64>,
}

pub fn multiplier_from_unit_function(g: &[Complex64]) -> Multiplier {
    Multiplier { values: g.to_vec() }
}

impl Multiplier {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn apply<'a>(&self, f: &Section<'a>) -> Section<'a> {
        let gr = f.bundle.groupoid();
        let values = gr
            .arrows()
            .map(|a| {
                let k = gr.unit_index(gr.range(a)).expect("unit");
                &f.values[a] * self.values[k]
            })
            .collect();
        Section {
            bundle: f.bundle,
            values,
        }
    }

    /// The adjoint multiplier `conj(g)`.
    pub fn adjoint(&self) -> Multiplier {
        Multiplier {
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    /// `g(x) 1_{E_x}`; left convolution by it is [`Multiplier::apply`].
    pub fn as_section<'a>(&self, e: &'a ConcreteFellBundle, tol: Tolerance) -> Result<Section<'a>, AlgebraError> {
        Section::from_unit_function(e, &self.values, tol)
    }

    /// Commutes with every element of the algebra image.
    pub fn is_central(&self, image: &AlgebraImage, e: &ConcreteFellBundle, tol: Tolerance) -> Result<bool, AlgebraError> {
        let m = image.image(&self.as_section(e, tol)?);
        Ok(image
            .basis_images()
            .iter()
            .all(|b| tol.accepts(frobenius_norm(&(&m * b - b * &m)), frobenius_norm(b))))
    }
}

/// Maximum residuals from [`check_expectation`].
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ExpectationReport {
    pub samples: usize,
    /// Most negative eigenvalue of `⟨f, f⟩(x)`, relative to `|f|²`.
    pub min_inner_eigenvalue: f64,
    /// `max |P(f)| / |f|`.
    pub max_projection_ratio: f64,
    /// `|P(afb) - aP(f)b|` for unit-supported `a`, `b`, relative.
    pub max_bimodule_residual: f64,
    /// `min |P(f*f)| / |f|²` over nonzero samples.
    pub min_faithfulness_ratio: f64,
    /// `max (|f|_∞ - |f|_2) / |f|`.
    pub max_sup_l2_excess: f64,
    /// `max (|f|_2 - |f|) / |f|`.
    pub max_l2_operator_excess: f64,
    /// `|f*P(b)f - P(f*bf)|` for single-arrow normalizers `f`, relative.
    pub max_normalizer_residual: f64,
}

impl ExpectationReport {
    pub fn passes(&self, tol: Tolerance) -> bool {
        let eps = tol.eps();
        self.min_inner_eigenvalue >= -eps
            && self.max_projection_ratio <= 1.0 + eps
            && self.max_bimodule_residual <= eps
            && self.min_faithfulness_ratio > eps
            && self.max_sup_l2_excess <= eps
            && self.max_l2_operator_excess <= eps
            && self.max_normalizer_residual <= eps
    }
}

/// Random-sample checks that `P` is a faithful conditional expectation and
/// of the chain `|f|_∞ ≤ |f|_2 ≤ |f|`.
pub fn check_expectation<R: Rng>(
    e: &ConcreteFellBundle,
    samples: usize,
    rng: &mut R,
    tol: Tolerance,
) -> Result<ExpectationReport, AlgebraError> {
    let rep = RegularRepresentation::new(e, tol)?;
    let gr = e.groupoid();
    let mut r = ExpectationReport {
        samples,
        min_inner_eigenvalue: 0.0,
        max_projection_ratio: 0.0,
        max_bimodule_residual: 0.0,
        min_faithfulness_ratio: f64::INFINITY,
        max_sup_l2_excess: f64::NEG_INFINITY,
        max_l2_operator_excess: f64::NEG_INFINITY,
        max_normalizer_residual: 0.0,
    };
    let units: Vec<Arrow> = gr.units().to_vec();
    let nonzero: Vec<Arrow> = gr.arrows().filter(|&a| e.fiber(a).dim() > 0).collect();
    for k in 0..samples {
        let f = Section::random(e, rng);
        let norm = rep.norm(&f);
        if norm <= tol.eps() {
            continue;
        }
        let n2 = norm * norm;

        let ip = inner_product(&f, &f)?;
        for &x in &units {
            if let Some(&ev) = matrixcore::hermitian_eigenvalues(&ip.values[x])?.first() {
                r.min_inner_eigenvalue = r.min_inner_eigenvalue.min(ev / n2);
            }
        }

        let p = restrict(&f);
        r.max_projection_ratio = r.max_projection_ratio.max(rep.norm(&p) / norm);

        let a = Section::random_supported(e, &units, rng);
        let b = Section::random_supported(e, &units, rng);
        let lhs = restrict(&convolve(&convolve(&a, &f)?, &b)?);
        let rhs = convolve(&convolve(&a, &p)?, &b)?;
        let scale = norm * rep.norm(&a) * rep.norm(&b);
        r.max_bimodule_residual = r.max_bimodule_residual.max(lhs.distance(&rhs) / scale.max(f64::MIN_POSITIVE));

        let pff = restrict(&convolve(&involute(&f), &f)?);
        r.min_faithfulness_ratio = r.min_faithfulness_ratio.min(rep.norm(&pff) / n2);

        let (sup, l2) = (sup_norm(&f), l2_norm(&f));
        r.max_sup_l2_excess = r.max_sup_l2_excess.max((sup - l2) / norm);
        r.max_l2_operator_excess = r.max_l2_operator_excess.max((l2 - norm) / norm);

        if !nonzero.is_empty() {
            let arrow = nonzero[k % nonzero.len()];
            let h = Section::random_supported(e, &[arrow], rng);
            let lhs = convolve(&convolve(&involute(&h), &p)?, &h)?;
            let rhs = restrict(&convolve(&convolve(&involute(&h), &f)?, &h)?);
            let scale = rep.norm(&h).powi(2) * norm;
            r.max_normalizer_residual = r.max_normalizer_residual.max(lhs.distance(&rhs) / scale.max(f64::MIN_POSITIVE));
        }
    }
    if !r.min_faithfulness_ratio.is_finite() {
        r.min_faithfulness_ratio = 0.0;
    }
    if !r.max_sup_l2_excess.is_finite() {
        r.max_sup_l2_excess = 0.0;
        r.max_l2_operator_excess = 0.0;
    }
    Ok(r)
}

/// A section regarded as a vector of `L²(E)`; the embedding is the
/// identity on values.
#[derive(Debug, Clone)]
pub struct L2Vector<'a> {
    section: Section<'a>,
}

impl L2Vector<'_> {
    pub fn norm(&self) -> f64 {
        l2_norm(&self.section)
    }

    pub fn is_zero(&self, tol: Tolerance) -> bool {
        self.section.is_zero(tol)
    }

    pub fn values(&self) -> &[ComplexMatrix] {
        self.section.values()
    }
}

pub fn embed_l2<'a>(f: &Section<'a>) -> L2Vector<'a> {
    L2Vector { section: f.clone() }
}

/// Norm comparison between a subbundle and its ambient bundle.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IsometryReport {
    pub samples: usize,
    pub subgroupoid_arrows: usize,
    /// `max | |f|_D - |f|_E | / max(1, |f|_E)`.
    pub max_relative_gap: f64,
}

impl IsometryReport {
    pub fn passes(&self, norm_tol: f64) -> bool {
        self.max_relative_gap <= norm_tol
    }
}

/// Compares norms of random sections supported in a subgroupoid `Ω`,
/// computed in `C*_r(E|_Ω)` and in `C*_r(E)`.
pub fn subbundle_inclusion_isometric<R: Rng>(
    omega: &[Arrow],
    e: &ConcreteFellBundle,
    samples: usize,
    rng: &mut R,
    tol: Tolerance,
) -> Result<IsometryReport, AlgebraError> {
    let (sub, inclusion) = groupoid::subgroupoid(e.groupoid(), omega)?;
    let d = pullback(&inclusion, e, tol)?;
    let rep_d = RegularRepresentation::new(&d, tol)?;
    let rep_e = RegularRepresentation::new(e, tol)?;
    let mut gap: f64 = 0.0;
    for _ in 0..samples {
        let f = Section::random(&d, rng);
        let mut ext = Section::zero(e);
        for w in sub.arrows() {
            ext.values[inclusion.apply(w)] = f.values[w].clone();
        }
        let (nd, ne) = (rep_d.norm(&f), rep_e.norm(&ext));
        gap = gap.max((nd - ne).abs() / ne.max(1.0));
    }
    Ok(IsometryReport {
        samples,
        subgroupoid_arrows: sub.len(),
        max_relative_gap: gap,
    })
}

/// Image of the unit-supported sections of a line bundle over a principal
/// groupoid.
#[derive(Debug, Clone)]
pub struct DiagonalSubalgebra {
    pub carrier: MatrixSubspace,
    /// Dimension of its commutant inside the algebra image.
    pub relative_commutant_dim: usize,
}

impl DiagonalSubalgebra {
    pub fn dim(&self) -> usize {
        self.carrier.dim()
    }

    /// Maximal abelian: abelian and equal to its relative commutant.
    pub fn is_masa(&self) -> bool {
        self.relative_commutant_dim == self.carrier.dim()
    }
}

pub fn diagonal_subalgebra(
    e: &ConcreteFellBundle,
    image: &AlgebraImage,
    tol: Tolerance,
) -> Result<DiagonalSubalgebra, AlgebraError> {
    let gr = e.groupoid();
    if !gr.is_principal() {
        return Err(AlgebraError::NotPrincipal);
    }
    if let Some(a) = gr.arrows().find(|&a| e.fiber(a).dim() != 1) {
        return Err(AlgebraError::NotLineBundle(a));
    }
    let gens: Vec<ComplexMatrix> = gr
        .units()
        .iter()
        .map(|&x| Section::single(e, x, e.fiber(x).basis()[0].clone(), tol).map(|s| image.image(&s)))
        .collect::<Result<_, _>>()?;
    let size = image.size();
    let carrier = MatrixSubspace::span(size, size, &gens, tol)?;
    let relative_commutant_dim = image.algebra().commutant_dim(carrier.basis(), tol);
    Ok(DiagonalSubalgebra {
        carrier,
        relative_commutant_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bimodule::Bimodule;
    use crate::fellbundle::{from_bimodule, line_bundle, over_trivial};
    use crate::groupoid::{cyclic_table, from_group, pair_groupoid, trivial, DELTA, DELTA_STAR, DELTA_UNIT_0, DELTA_UNIT_1};
    use crate::matrixcore::{c, from_real_rows};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn delta_scalars() -> ConcreteFellBundle {
        from_bimodule(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap()
    }

    fn scalar(v: f64) -> ComplexMatrix {
        from_real_rows(&[&[v]])
    }

    #[test]
    fn unit_section_is_neutral_and_self_adjoint() {
        let e = delta_scalars();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Section::unit(&e, tol()).unwrap();
        let g = Section::random(&e, &mut rng);
        assert!(convolve(&u, &g).unwrap().distance(&g) < 1e-12);
        assert!(involute(&u).distance(&u) < 1e-12);
    }

    #[test]
    fn delta_matrix_units_multiply() {
        let e = delta_scalars();
        let f = Section::single(&e, DELTA, scalar(1.0), tol()).unwrap();
        let g = Section::single(&e, DELTA_STAR, scalar(1.0), tol()).unwrap();
        let fg = convolve(&f, &g).unwrap();
        let expected = Section::single(&e, DELTA_UNIT_1, scalar(1.0), tol()).unwrap();
        assert!(fg.distance(&expected) < 1e-12);
    }

    #[test]
    fn disjoint_supports_on_trivial_groupoid() {
        let e = over_trivial(&[FinDimCStar::scalars(), FinDimCStar::scalars()], tol()).unwrap();
        let f = Section::single(&e, 0, scalar(1.0), tol()).unwrap();
        let g = Section::single(&e, 1, scalar(1.0), tol()).unwrap();
        assert!(convolve(&f, &g).unwrap().is_zero(tol()));
    }

    #[test]
    fn restriction_and_inner_product_on_delta() {
        let e = delta_scalars();
        let f = Section::single(&e, DELTA, scalar(2.0), tol()).unwrap();
        assert!(restrict(&f).is_zero(tol()));
        let pff = restrict(&convolve(&involute(&f), &f).unwrap());
        assert!((pff.value(DELTA_UNIT_0)[(0, 0)] - c(4.0, 0.0)).norm() < 1e-12);
        let ip = inner_product(&f, &f).unwrap();
        assert!((ip.value(DELTA_UNIT_0)[(0, 0)] - c(4.0, 0.0)).norm() < 1e-12);
        assert!(ip.value(DELTA_UNIT_1)[(0, 0)].norm() < 1e-12);
        assert!((l2_norm(&f) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fiber_module_shapes() {
        let e = delta_scalars();
        let v = fiber_module(&e, DELTA_UNIT_0, tol()).unwrap();
        let arrows: Vec<Arrow> = v.blocks().iter().map(|b| b.arrow).collect();
        assert_eq!(arrows, vec![DELTA_UNIT_0, DELTA]);
        assert_eq!(v.dim(), 2);
        assert!(v.as_hilbert_module(tol()).unwrap().is_full(tol()));

        let p3 = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        for &x in p3.groupoid().units() {
            assert_eq!(fiber_module(&p3, x, tol()).unwrap().dim(), 3);
        }
    }

    #[test]
    fn delta_representation_is_the_linking_picture() {
        // under V_0 = span{e_0, e_δ}, π_0(f) = [[f(0), f(δ*)], [f(δ), f(1)]]
        let e = delta_scalars();
        let v = fiber_module(&e, DELTA_UNIT_0, tol()).unwrap();
        let vals = [1.0, 2.0, 3.0, 4.0];
        let f = Section::new(&e, vals.iter().map(|&x| scalar(x)).collect(), tol()).unwrap();
        let pi = represent(&f, &v);
        let expected = from_real_rows(&[&[1.0, 4.0], &[3.0, 2.0]]);
        assert!((pi - expected).norm() < 1e-12);
    }

    #[test]
    fn norms_of_desk_examples() {
        let m2 = over_trivial(&[FinDimCStar::matrix_algebra(2)], tol()).unwrap();
        let f = Section::single(&m2, 0, from_real_rows(&[&[3.0, 0.0], &[0.0, 1.0]]), tol()).unwrap();
        assert!((operator_norm(&f, tol()).unwrap() - 3.0).abs() < 1e-9);

        let z2 = line_bundle(&from_group(&cyclic_table(2)).unwrap(), tol()).unwrap();
        // the fiber basis of E_g is a unimodular multiple of the swap; align phases
        let e0 = z2.fiber(0).basis()[0].clone();
        let g0 = z2.fiber(1).basis()[0].clone();
        let id_coeff = 1.0 / e0[(0, 0)];
        let swap_coeff = 1.0 / g0[(0, 1)];
        let f = Section::new(&z2, vec![e0 * id_coeff, g0 * swap_coeff], tol()).unwrap();
        assert!((operator_norm(&f, tol()).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn algebra_images() {
        let img = algebra_image(&delta_scalars(), tol()).unwrap();
        assert_eq!((img.dim(), img.center_dim(tol())), (4, 1));
        assert!(img.is_faithful());

        let triv = over_trivial(&[FinDimCStar::matrix_algebra(2), FinDimCStar::scalars()], tol()).unwrap();
        let img = algebra_image(&triv, tol()).unwrap();
        assert_eq!((img.dim(), img.center_dim(tol())), (5, 2));

        let p3 = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let img = algebra_image(&p3, tol()).unwrap();
        assert_eq!((img.dim(), img.center_dim(tol())), (9, 1));
    }

    #[test]
    fn normalizers() {
        let e = delta_scalars();
        let on_delta = Section::single(&e, DELTA, scalar(2.0), tol()).unwrap();
        assert!(is_normalizer(&on_delta, tol()));
        assert!(is_normalizer(&Section::unit(&e, tol()).unwrap(), tol()));
        let g = Section::single(&e, DELTA_UNIT_1, scalar(1.0), tol()).unwrap();
        let out = normalizer_compression(&g, &on_delta, tol()).unwrap();
        assert!((out.value(DELTA_UNIT_0)[(0, 0)] - c(4.0, 0.0)).norm() < 1e-12);

        let z2 = line_bundle(&from_group(&cyclic_table(2)).unwrap(), tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let both = Section::random(&z2, &mut rng);
        assert!(!is_normalizer(&both, tol()));
        let u = Section::unit(&z2, tol()).unwrap();
        assert_eq!(normalizer_compression(&u, &both, tol()).unwrap_err(), AlgebraError::NotANormalizer);
    }

    #[test]
    fn unit_function_multipliers() {
        let e = delta_scalars();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Section::random(&e, &mut rng);
        let one = multiplier_from_unit_function(&[c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(one.apply(&f).distance(&f) < 1e-12);
        let p0 = multiplier_from_unit_function(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let killed = p0.apply(&f);
        for a in e.groupoid().arrows() {
            let expected = if e.groupoid().range(a) == DELTA_UNIT_1 { 0.0 } else { 1.0 };
            assert!((frobenius_norm(killed.value(a)) - expected * frobenius_norm(f.value(a))).abs() < 1e-12);
        }
        // left convolution by the unit-supported section agrees
        let via_section = convolve(&p0.as_section(&e, tol()).unwrap(), &f).unwrap();
        assert!(via_section.distance(&killed) < 1e-12);
        let img = algebra_image(&e, tol()).unwrap();
        assert!(!p0.is_central(&img, &e, tol()).unwrap());
        assert!(one.is_central(&img, &e, tol()).unwrap());
    }

    #[test]
    fn expectation_on_delta() {
        let e = delta_scalars();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = check_expectation(&e, 100, &mut rng, tol()).unwrap();
        assert!(report.passes(tol()), "{report:?}");
        assert!(report.max_projection_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn isometric_inclusions() {
        let e = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let units = e.groupoid().units().to_vec();
        let r = subbundle_inclusion_isometric(&units, &e, 20, &mut rng, tol()).unwrap();
        assert!(r.passes(1e-8), "{r:?}");
        let all: Vec<Arrow> = e.groupoid().arrows().collect();
        let r = subbundle_inclusion_isometric(&all, &e, 20, &mut rng, tol()).unwrap();
        assert!(r.max_relative_gap < 1e-12);
    }

    #[test]
    fn diagonal_masa() {
        let e = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let img = algebra_image(&e, tol()).unwrap();
        let d = diagonal_subalgebra(&e, &img, tol()).unwrap();
        assert_eq!(d.dim(), 3);
        assert!(d.is_masa());

        let t = line_bundle(&trivial(2), tol()).unwrap();
        let img = algebra_image(&t, tol()).unwrap();
        let d = diagonal_subalgebra(&t, &img, tol()).unwrap();
        assert_eq!(d.dim(), img.dim());

        let z2 = line_bundle(&from_group(&cyclic_table(2)).unwrap(), tol()).unwrap();
        let img = algebra_image(&z2, tol()).unwrap();
        assert_eq!(diagonal_subalgebra(&z2, &img, tol()).unwrap_err(), AlgebraError::NotPrincipal);
    }
}
