//! Strong Morita equivalence certificates from complementary full corners.
//!
//! A full morphism `φ: Γ -> Δ` splits `Γ` into `Γ_0 = φ⁻¹(0)` and
//! `Γ_1 = φ⁻¹(1)`; the indicator functions of their unit spaces give
//! complementary projections in `C*_r(E)` whose corners are `C*_r(E_i)`.
//! Applied to the bundle `D` over `Γ x Δ` this yields the stabilization
//! `C*_r(E) ~ C*_r(Γ ×_σ K(V))`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bimodule::{self, Bimodule, BimoduleError, FinDimCStar, HilbertModule};
use crate::csalgebra::{
    algebra_image, fiber_module, subbundle_inclusion_isometric, AlgebraError, AlgebraImage, IsometryReport,
    RegularModule, Section,
};
use crate::fellbundle::{
    concretize, from_bimodule, pullback, semidirect_abstract, BundleError, ConcreteFellBundle, GroupoidAction,
};
use crate::groupoid::{self, Arrow, FiniteGroupoid, GroupoidError, GroupoidMorphism, DELTA_UNIT_0, DELTA_UNIT_1};
use crate::matrixcore::{
    self, frobenius_norm, solve_on_span, vec_of, ComplexMatrix, MatrixError, MatrixSubspace, Tolerance,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MoritaError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Bimodule(#[from] BimoduleError),
    #[error("bundle is not saturated: E_{0} · E_{1} does not span")]
    NotSaturated(Arrow, Arrow),
    #[error("fiber over {0} is zero")]
    Degenerate(Arrow),
    #[error("morphism is not full")]
    MorphismNotFull,
    #[error("not a projection in the algebra (residual {0:e})")]
    NotAProjection(f64),
    #[error("corner {0} is not full: span has dimension {1} of {2}")]
    FullnessFailed(usize, usize, usize),
    #[error("groupoid is not transitive")]
    NotTransitive,
    #[error("σ is not well defined at arrow {arrow} (residual {residual:e})")]
    WellDefinednessFailed { arrow: Arrow, residual: f64 },
    #[error("tensor dimension mismatch at arrow {arrow}: fiber {fiber}, tensor product {tensor}")]
    TensorDimension { arrow: Arrow, fiber: usize, tensor: usize },
}

fn require_saturated(e: &ConcreteFellBundle, tol: Tolerance) -> Result<(), MoritaError> {
    if let Some(a) = e.groupoid().arrows().find(|&a| e.fiber(a).dim() == 0) {
        return Err(MoritaError::Degenerate(a));
    }
    match e.saturation_witness(tol) {
        Some((a, b)) => Err(MoritaError::NotSaturated(a, b)),
        None => Ok(()),
    }
}

/// Checkable corner data: an ambient algebra, complementary projections
/// and, for each projection, index pairs `(i, j)` with
/// `span{b_i p b_j}` equal to the algebra.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MoritaCertificate {
    pub provenance: String,
    pub size: usize,
    #[serde(with = "crate::io::matrices")]
    pub ambient_basis: Vec<ComplexMatrix>,
    #[serde(with = "crate::io::matrix")]
    pub unit: ComplexMatrix,
    #[serde(with = "crate::io::matrices")]
    pub projections: Vec<ComplexMatrix>,
    pub witnesses: Vec<Vec<[usize; 2]>>,
    pub corner_dims: Vec<usize>,
    pub residuals: CertificateResiduals,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CertificateResiduals {
    /// `max(|p - p*|, |p² - p|)` per projection.
    pub projection: Vec<f64>,
    /// `|p_0 + p_1 - 1|`.
    pub complement: f64,
    /// Rank of the witness products per projection.
    pub fullness_rank: Vec<usize>,
}

/// Outcome of re-verifying a stored certificate.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CertificateCheck {
    pub ambient_dim: usize,
    pub ambient_closed: bool,
    pub projections_ok: bool,
    pub complementary: bool,
    pub full: Vec<bool>,
    pub corner_dims: Vec<usize>,
    pub corner_dims_match: bool,
    pub max_residual: f64,
}

impl CertificateCheck {
    pub fn passes(&self) -> bool {
        self.ambient_closed
            && self.projections_ok
            && self.complementary
            && self.full.iter().all(|&f| f)
            && self.corner_dims_match
    }
}

impl MoritaCertificate {
    /// Recomputes every claim from the stored matrices alone.
    pub fn check(&self, tol: Tolerance) -> Result<CertificateCheck, MoritaError> {
        let n = self.size;
        let ambient = MatrixSubspace::span(n, n, &self.ambient_basis, tol)?;
        let mut max_residual: f64 = 0.0;

        let mut ambient_closed = ambient.dim() == self.ambient_basis.len() && ambient.contains(&self.unit, tol)?;
        'outer: for a in &self.ambient_basis {
            if !ambient.contains(&a.adjoint(), tol)? {
                ambient_closed = false;
                break;
            }
            for b in &self.ambient_basis {
                let r = ambient.residual(&(a * b))?;
                max_residual = max_residual.max(r);
                if !tol.accepts(r, frobenius_norm(&(a * b))) {
                    ambient_closed = false;
                    break 'outer;
                }
            }
        }

        let mut projections_ok = self.projections.len() == 2;
        for p in &self.projections {
            let r = projection_residual(p);
            max_residual = max_residual.max(r);
            projections_ok &= tol.accepts(r, 1.0) && ambient.contains(p, tol)?;
        }
        let complement = if self.projections.len() == 2 {
            frobenius_norm(&(&self.projections[0] + &self.projections[1] - &self.unit))
        } else {
            f64::INFINITY
        };
        max_residual = max_residual.max(complement);
        let complementary = tol.accepts(complement, 1.0);

        let mut full = Vec::new();
        let mut corner_dims = Vec::new();
        for (k, p) in self.projections.iter().enumerate() {
            let products: Vec<ComplexMatrix> = self
                .witnesses
                .get(k)
                .map(|w| {
                    w.iter()
                        .filter(|[i, j]| *i < self.ambient_basis.len() && *j < self.ambient_basis.len())
                        .map(|&[i, j]| &self.ambient_basis[i] * p * &self.ambient_basis[j])
                        .collect()
                })
                .unwrap_or_default();
            let span = MatrixSubspace::span(n, n, &products, tol)?;
            full.push(span.dim() == ambient.dim());
            corner_dims.push(corner(p, &self.ambient_basis, tol)?.dim());
        }
        let corner_dims_match = corner_dims == self.corner_dims;
        Ok(CertificateCheck {
            ambient_dim: ambient.dim(),
            ambient_closed,
            projections_ok,
            complementary,
            full,
            corner_dims,
            corner_dims_match,
            max_residual,
        })
    }
}

fn projection_residual(p: &ComplexMatrix) -> f64 {
    frobenius_norm(&(p - p.adjoint())).max(frobenius_norm(&(p * p - p)))
}

/// `p A p`.
fn corner(p: &ComplexMatrix, basis: &[ComplexMatrix], tol: Tolerance) -> Result<MatrixSubspace, MatrixError> {
    let n = p.nrows();
    let gens: Vec<ComplexMatrix> = basis.iter().map(|b| p * b * p).collect();
    MatrixSubspace::span(n, n, &gens, tol)
}

/// Whether `span{a p b}` is the whole algebra, with a greedy choice of
/// spanning index pairs.
pub fn is_full_corner(
    algebra: &FinDimCStar,
    p: &ComplexMatrix,
    tol: Tolerance,
) -> Result<(bool, Vec<[usize; 2]>), MoritaError> {
    let r = projection_residual(p);
    if !tol.accepts(r, 1.0) || !algebra.contains(p, tol)? {
        return Err(MoritaError::NotAProjection(r));
    }
    let basis = algebra.basis();
    let target = basis.len();
    let n = algebra.size();
    // incremental orthonormal frame of the chosen products
    let mut frame: Vec<nalgebra::DVector<Complex64>> = Vec::new();
    let mut witnesses = Vec::new();
    let select = tol.eps().sqrt();
    'search: for (i, a) in basis.iter().enumerate() {
        let ap = a * p;
        for (j, b) in basis.iter().enumerate() {
            let mut v = vec_of(&(&ap * b));
            let norm = v.norm();
            if norm <= tol.eps() {
                continue;
            }
            for _ in 0..2 {
                for q in &frame {
                    let c = q.dotc(&v);
                    v -= q * c;
                }
            }
            let rest = v.norm();
            if rest > select * norm.max(1.0) {
                frame.push(v / Complex64::new(rest, 0.0));
                witnesses.push([i, j]);
                if frame.len() == target {
                    break 'search;
                }
            }
        }
    }
    let products: Vec<ComplexMatrix> = witnesses.iter().map(|&[i, j]| &basis[i] * p * &basis[j]).collect();
    let rank = MatrixSubspace::span(n, n, &products, tol)?.dim();
    Ok((rank == target, witnesses))
}

fn build_certificate(
    provenance: String,
    algebra: &FinDimCStar,
    projections: [ComplexMatrix; 2],
    tol: Tolerance,
) -> Result<MoritaCertificate, MoritaError> {
    let unit = algebra.unit().clone();
    let mut witnesses = Vec::new();
    let mut ranks = Vec::new();
    let mut corner_dims = Vec::new();
    for (k, p) in projections.iter().enumerate() {
        let (full, w) = is_full_corner(algebra, p, tol)?;
        if !full {
            return Err(MoritaError::FullnessFailed(k, w.len(), algebra.dim()));
        }
        ranks.push(w.len());
        witnesses.push(w);
        corner_dims.push(corner(p, algebra.basis(), tol)?.dim());
    }
    let complement = frobenius_norm(&(&projections[0] + &projections[1] - &unit));
    Ok(MoritaCertificate {
        provenance,
        size: algebra.size(),
        ambient_basis: algebra.basis().to_vec(),
        unit,
        residuals: CertificateResiduals {
            projection: projections.iter().map(projection_residual).collect(),
            complement,
            fullness_rank: ranks,
        },
        projections: projections.to_vec(),
        witnesses,
        corner_dims,
    })
}

/// The linking algebra of an equivalence bimodule, as the reduced algebra
/// of its bundle over `Δ`.
#[derive(Debug, Clone)]
pub struct LinkingAlgebra {
    pub bundle: ConcreteFellBundle,
    pub image: AlgebraImage,
    pub certificate: MoritaCertificate,
}

pub fn linking_algebra(c: &Bimodule, tol: Tolerance) -> Result<LinkingAlgebra, MoritaError> {
    let bundle = from_bimodule(c, tol)?;
    let image = algebra_image(&bundle, tol)?;
    let phi = GroupoidMorphism::identity(bundle.groupoid());
    let [p0, p1] = corner_projections_on(&phi, &bundle, &image, tol)?;
    let certificate = build_certificate("linking algebra of an equivalence bimodule".into(), image.algebra(), [p0, p1], tol)?;
    Ok(LinkingAlgebra {
        bundle,
        image,
        certificate,
    })
}

/// `Γ_i = φ⁻¹(i)` with the restricted bundles `E_i`.
#[derive(Debug, Clone)]
pub struct FullMorphismDecomposition {
    pub phi: GroupoidMorphism,
    pub parts: [FiniteGroupoid; 2],
    pub inclusions: [GroupoidMorphism; 2],
    pub bundles: [ConcreteFellBundle; 2],
}

pub fn decompose(
    phi: &GroupoidMorphism,
    e: &ConcreteFellBundle,
    tol: Tolerance,
) -> Result<FullMorphismDecomposition, MoritaError> {
    if !phi.is_full()? {
        return Err(MoritaError::MorphismNotFull);
    }
    let mut parts = Vec::new();
    let mut inclusions = Vec::new();
    let mut bundles = Vec::new();
    for i in [DELTA_UNIT_0, DELTA_UNIT_1] {
        let (sub, incl) = groupoid::subgroupoid(phi.domain(), &phi.preimage(i))?;
        bundles.push(pullback(&incl, e, tol)?);
        parts.push(sub);
        inclusions.push(incl);
    }
    Ok(FullMorphismDecomposition {
        phi: phi.clone(),
        parts: pair(parts),
        inclusions: pair(inclusions),
        bundles: pair(bundles),
    })
}

fn pair<T>(v: Vec<T>) -> [T; 2] {
    match v.try_into() {
        Ok(p) => p,
        Err(_) => unreachable!("two parts"),
    }
}

fn corner_projections_on(
    phi: &GroupoidMorphism,
    e: &ConcreteFellBundle,
    image: &AlgebraImage,
    tol: Tolerance,
) -> Result<[ComplexMatrix; 2], MoritaError> {
    if !phi.is_full()? {
        return Err(MoritaError::MorphismNotFull);
    }
    let units = e.groupoid().units();
    let mut out = Vec::new();
    for i in [DELTA_UNIT_0, DELTA_UNIT_1] {
        let g: Vec<Complex64> = units
            .iter()
            .map(|&x| Complex64::new(if phi.apply(x) == i { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let s = Section::from_unit_function(e, &g, tol)?;
        out.push(image.image(&s));
    }
    Ok(pair(out))
}

/// Images of the indicator functions of `Γ_0⁰` and `Γ_1⁰`.
pub fn corner_projections(
    dec: &FullMorphismDecomposition,
    e: &ConcreteFellBundle,
    image: &AlgebraImage,
    tol: Tolerance,
) -> Result<[ComplexMatrix; 2], MoritaError> {
    corner_projections_on(&dec.phi, e, image, tol)
}

/// Everything established for one full morphism.
#[derive(Debug, Clone)]
pub struct CornerEquivalence {
    pub certificate: MoritaCertificate,
    pub ambient_dim: usize,
    pub restricted_dims: [usize; 2],
    pub restricted_center_dims: [usize; 2],
    pub corner_center_dims: [usize; 2],
    pub isometry: [IsometryReport; 2],
}

impl CornerEquivalence {
    /// Corners match the restricted algebras and the inclusions are
    /// isometric.
    pub fn passes(&self, tol: Tolerance, norm_tol: f64) -> bool {
        self.certificate.check(tol).map(|c| c.passes()).unwrap_or(false)
            && self.certificate.corner_dims == self.restricted_dims.to_vec()
            && self.corner_center_dims == self.restricted_center_dims
            && self.isometry.iter().all(|r| r.passes(norm_tol))
    }
}

/// `C*_r(E_0)` and `C*_r(E_1)` as complementary full corners of
/// `C*_r(E)`.
pub fn morita_via_full_morphism<R: Rng>(
    phi: &GroupoidMorphism,
    e: &ConcreteFellBundle,
    samples: usize,
    rng: &mut R,
    tol: Tolerance,
) -> Result<CornerEquivalence, MoritaError> {
    require_saturated(e, tol)?;
    let dec = decompose(phi, e, tol)?;
    let image = algebra_image(e, tol)?;
    let projections = corner_projections(&dec, e, &image, tol)?;
    let certificate = build_certificate(
        "complementary full corners from a full morphism onto Δ".into(),
        image.algebra(),
        projections.clone(),
        tol,
    )?;

    let mut restricted_dims = [0; 2];
    let mut restricted_center_dims = [0; 2];
    let mut corner_center_dims = [0; 2];
    let mut isometry = Vec::new();
    for i in 0..2 {
        let sub = algebra_image(&dec.bundles[i], tol)?;
        restricted_dims[i] = sub.dim();
        restricted_center_dims[i] = sub.center_dim(tol);
        let c = corner(&projections[i], image.algebra().basis(), tol)?;
        corner_center_dims[i] = FinDimCStar::from_subspace(c, tol)?.center_dim(tol);
        let arrows: Vec<Arrow> = dec.parts[i].arrows().map(|w| dec.inclusions[i].apply(w)).collect();
        isometry.push(subbundle_inclusion_isometric(&arrows, e, samples, rng, tol)?);
    }
    let isometry = pair(isometry);
    Ok(CornerEquivalence {
        certificate,
        ambient_dim: image.dim(),
        restricted_dims,
        restricted_center_dims,
        corner_center_dims,
        isometry,
    })
}

/// The regular modules `V_x`, indexed by arrow (units only).
fn regular_modules(e: &ConcreteFellBundle, tol: Tolerance) -> Result<Vec<Option<RegularModule>>, MoritaError> {
    let g = e.groupoid();
    let mut out = vec![None; g.len()];
    for &x in g.units() {
        out[x] = Some(fiber_module(e, x, tol)?);
    }
    Ok(out)
}

/// The block permutation `U_γ: C^{N_{s(γ)}} -> C^{N_{r(γ)}}` moving block
/// `μ` of `V_{s(γ)}` to block `μγ*` of `V_{r(γ)}`.
pub fn block_transport(e: &ConcreteFellBundle, vs: &RegularModule, vr: &RegularModule, gamma: Arrow) -> ComplexMatrix {
    let g = e.groupoid();
    let mut u = matrixcore::zeros(vr.rows(), vs.rows());
    for b in vs.blocks() {
        let target = g.compose(b.arrow, g.inverse(gamma)).expect("common source");
        let t = vr.block_of(target).expect("block of V_r");
        for k in 0..b.rows {
            u[(t.offset + k, b.offset + k)] = Complex64::new(1.0, 0.0);
        }
    }
    u
}

/// The bundle `F` with `F_γ = span{v e u*}` for `v ∈ V_{r(γ)}`, `e ∈ E_γ`,
/// `u ∈ V_{s(γ)}`, realized as `N_{r(γ)} x N_{s(γ)}` matrices.
#[derive(Debug, Clone)]
pub struct FBundle {
    pub bundle: ConcreteFellBundle,
    pub modules: Vec<RegularModule>,
}

impl FBundle {
    pub fn module(&self, x: Arrow) -> &RegularModule {
        self.modules.iter().find(|m| m.unit() == x).expect("unit")
    }
}

fn span_products(
    rows: usize,
    cols: usize,
    lefts: &[ComplexMatrix],
    mids: &[ComplexMatrix],
    rights: &[ComplexMatrix],
    tol: Tolerance,
) -> Result<MatrixSubspace, MatrixError> {
    let mut gens = Vec::with_capacity(lefts.len() * mids.len() * rights.len());
    for l in lefts {
        for m in mids {
            let lm = l * m;
            for r in rights {
                gens.push(&lm * r);
            }
        }
    }
    MatrixSubspace::span(rows, cols, &gens, tol)
}

pub fn build_f_bundle(e: &ConcreteFellBundle, tol: Tolerance) -> Result<FBundle, MoritaError> {
    require_saturated(e, tol)?;
    let g = e.groupoid();
    let mods = regular_modules(e, tol)?;
    let module = |x: Arrow| mods[x].as_ref().expect("unit");
    let mut unit_dims = vec![0; g.len()];
    for &x in g.units() {
        unit_dims[x] = module(x).rows();
    }
    let mut fibers = Vec::with_capacity(g.len());
    for a in g.arrows() {
        let (vr, vs) = (module(g.range(a)), module(g.source(a)));
        let adj: Vec<ComplexMatrix> = vs.carrier().basis().iter().map(|u| u.adjoint()).collect();
        fibers.push(span_products(
            vr.rows(),
            vs.rows(),
            vr.carrier().basis(),
            e.fiber(a).basis(),
            &adj,
            tol,
        )?);
    }
    let bundle = ConcreteFellBundle::new(g.clone(), unit_dims, fibers, tol)?;
    require_saturated(&bundle, tol)?;
    Ok(FBundle {
        bundle,
        modules: mods.into_iter().flatten().collect(),
    })
}

/// The action `σ` of `Γ` on `K(V)`: `σ_γ(θ_{ac,b}) = θ_{a,bc*}`.
#[derive(Debug, Clone)]
pub struct ActionSigma {
    pub action: GroupoidAction,
    /// Least-squares residual of the spanning equations per arrow.
    pub residuals: Vec<f64>,
    /// `|σ_γ - Ad(U_γ)|` on `K(V_{s(γ)})`, against the block transport.
    pub transport_residuals: Vec<f64>,
}

impl ActionSigma {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_transport_residual(&self) -> f64 {
        self.transport_residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn derive_action_sigma(e: &ConcreteFellBundle, tol: Tolerance) -> Result<ActionSigma, MoritaError> {
    let f = build_f_bundle(e, tol)?;
    let g = e.groupoid();
    let algebras: Vec<FinDimCStar> = g
        .units()
        .iter()
        .map(|&x| f.bundle.unit_algebra(x, tol))
        .collect::<Result<_, _>>()?;
    let mut maps = Vec::with_capacity(g.len());
    let mut residuals = Vec::with_capacity(g.len());
    let mut transport_residuals = Vec::with_capacity(g.len());
    for gamma in g.arrows() {
        let (x, y) = (g.range(gamma), g.source(gamma));
        let (vr, vs) = (f.module(x), f.module(y));
        let mut equations = Vec::new();
        for alpha in g.arrows_with_source(x) {
            let ag = g.compose(alpha, gamma).expect("composable");
            for a in e.fiber(alpha).basis() {
                let a_in_r = vr.embed(&[(alpha, a.clone())]);
                for c in e.fiber(gamma).basis() {
                    let ac_in_s = vs.embed(&[(ag, a * c)]);
                    for b in vs.carrier().basis() {
                        // b c* regrouped: block μ of V_s becomes block μγ* of V_r
                        let parts: Vec<(Arrow, ComplexMatrix)> = vs
                            .blocks()
                            .iter()
                            .map(|blk| {
                                let target = g.compose(blk.arrow, g.inverse(gamma)).expect("common source");
                                (target, vs.component(b, blk.arrow) * c.adjoint())
                            })
                            .collect();
                        let bc = vr.embed(&parts);
                        equations.push((&ac_in_s * b.adjoint(), &a_in_r * bc.adjoint()));
                    }
                }
            }
        }
        let sol = solve_on_span(&equations, tol)?;
        if !tol.accepts(sol.residual, 1.0) {
            return Err(MoritaError::WellDefinednessFailed {
                arrow: gamma,
                residual: sol.residual,
            });
        }
        let u = block_transport(e, vs, vr, gamma);
        let mut tr: f64 = 0.0;
        for k in algebras[g.unit_index(y).expect("unit")].basis() {
            tr = tr.max(frobenius_norm(&(sol.map.apply(k)? - &u * k * u.adjoint())));
        }
        transport_residuals.push(tr);
        residuals.push(sol.residual);
        maps.push(sol.map);
    }
    let action = GroupoidAction::new(g.clone(), algebras, maps, tol)?;
    Ok(ActionSigma {
        action,
        residuals,
        transport_residuals,
    })
}

/// The bundle `D` over `Γ x Δ`, arrow `(γ, d)` at index `4γ + d`, unit
/// `(x, 0)` on `C^{n_x}` and `(x, 1)` on `C^{N_x}`:
/// `D_{(γ,0)} = E_γ`, `D_{(γ,1)} = F_γ`, `D_{(γ,δ)} = span{v e}`,
/// `D_{(γ,δ*)} = span{e u*}`.
#[derive(Debug, Clone)]
pub struct DBundle {
    pub bundle: ConcreteFellBundle,
    pub projection: GroupoidMorphism,
    pub f: FBundle,
}

pub fn build_d_bundle(e: &ConcreteFellBundle, tol: Tolerance) -> Result<DBundle, MoritaError> {
    let f = build_f_bundle(e, tol)?;
    let g = e.groupoid();
    let (prod, projection) = groupoid::product_with_delta(g);
    let mut unit_dims = vec![0; prod.len()];
    for &x in g.units() {
        unit_dims[4 * x] = e.unit_dim(x);
        unit_dims[4 * x + 1] = f.module(x).rows();
    }
    let mut fibers = Vec::with_capacity(prod.len());
    for a in g.arrows() {
        let (vr, vs) = (f.module(g.range(a)), f.module(g.source(a)));
        let (nr, ns) = (e.unit_dim(g.range(a)), e.unit_dim(g.source(a)));
        let none = [matrixcore::identity(ns)];
        let adj: Vec<ComplexMatrix> = vs.carrier().basis().iter().map(|u| u.adjoint()).collect();
        let v_e = span_products(vr.rows(), ns, vr.carrier().basis(), e.fiber(a).basis(), &none, tol)?;
        let e_u = span_products(nr, vs.rows(), &[matrixcore::identity(nr)], e.fiber(a).basis(), &adj, tol)?;

        for (side, fiber) in [("V ⊗ E", &v_e), ("E ⊗ V*", &e_u)] {
            let tensor = tensor_dim(e, a, vr, vs, side == "V ⊗ E", tol)?;
            if tensor != fiber.dim() {
                return Err(MoritaError::TensorDimension {
                    arrow: a,
                    fiber: fiber.dim(),
                    tensor,
                });
            }
        }
        fibers.push(e.fiber(a).clone());
        fibers.push(f.bundle.fiber(a).clone());
        fibers.push(v_e);
        fibers.push(e_u);
    }
    let bundle = ConcreteFellBundle::new(prod, unit_dims, fibers, tol)?;
    require_saturated(&bundle, tol)?;
    Ok(DBundle { bundle, projection, f })
}

/// `dim(V_{r(γ)} ⊗_{E_{r(γ)}} E_γ)` or `dim(E_γ ⊗_{E_{s(γ)}} V_{s(γ)}*)`
/// from the Gram quotient of the algebraic tensor product.
fn tensor_dim(
    e: &ConcreteFellBundle,
    a: Arrow,
    vr: &RegularModule,
    vs: &RegularModule,
    left: bool,
    tol: Tolerance,
) -> Result<usize, MoritaError> {
    let g = e.groupoid();
    if left {
        let u = vr.as_hilbert_module(tol)?;
        let fiber = HilbertModule::new(e.fiber(a).clone(), e.unit_algebra(g.source(a), tol)?, tol)?;
        let v = Bimodule::new(e.unit_algebra(g.range(a), tol)?, fiber, tol)?;
        Ok(bimodule::balanced_tensor(&u, &v, tol)?.dim())
    } else {
        // E_γ ⊗ V_s* is the adjoint of V_s ⊗ E_γ*
        let u = vs.as_hilbert_module(tol)?;
        let inv = g.inverse(a);
        let fiber = HilbertModule::new(e.fiber(inv).clone(), e.unit_algebra(g.source(inv), tol)?, tol)?;
        let v = Bimodule::new(e.unit_algebra(g.range(inv), tol)?, fiber, tol)?;
        Ok(bimodule::balanced_tensor(&u, &v, tol)?.dim())
    }
}

/// The fiberwise map `F_γ -> Γ ×_σ K(V)`, `X ↦ (γ, U_γ* X)`, checked to be
/// a bijective `*`-homomorphism of bundles.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SemidirectComparison {
    pub dims_match: bool,
    pub injective: bool,
    pub max_product_residual: f64,
    pub max_adjoint_residual: f64,
}

impl SemidirectComparison {
    pub fn passes(&self, tol: Tolerance) -> bool {
        self.dims_match
            && self.injective
            && tol.accepts(self.max_product_residual, 1.0)
            && tol.accepts(self.max_adjoint_residual, 1.0)
    }
}

pub fn compare_with_semidirect(
    e: &ConcreteFellBundle,
    f: &FBundle,
    sigma: &ActionSigma,
    tol: Tolerance,
) -> Result<SemidirectComparison, MoritaError> {
    let g = e.groupoid();
    let abs = semidirect_abstract(&sigma.action, tol)?;
    let conc = concretize(&abs, tol)?;
    let transports: Vec<ComplexMatrix> = g
        .arrows()
        .map(|a| block_transport(e, f.module(g.source(a)), f.module(g.range(a)), a))
        .collect();
    let psi = |a: Arrow, x: &ComplexMatrix| -> Result<ComplexMatrix, MoritaError> {
        let k = transports[a].adjoint() * x;
        let coords = sigma.action.algebra(g.source(a)).carrier().coordinates(&k)?;
        Ok(conc.element(a, coords.as_slice()))
    };

    let mut dims_match = true;
    let mut injective = true;
    for a in g.arrows() {
        let fb = f.bundle.fiber(a);
        dims_match &= fb.dim() == conc.bundle.fiber(a).dim();
        let images = fb.basis().iter().map(|x| psi(a, x)).collect::<Result<Vec<_>, _>>()?;
        let (r, c) = conc.bundle.fiber_shape(a);
        injective &= MatrixSubspace::span(r, c, &images, tol)?.dim() == fb.dim();
    }
    let mut max_product_residual: f64 = 0.0;
    for (a, b) in g.composable_pairs() {
        let ab = g.compose(a, b).expect("composable");
        for x in f.bundle.fiber(a).basis() {
            let px = psi(a, x)?;
            for y in f.bundle.fiber(b).basis() {
                let lhs = psi(ab, &(x * y))?;
                let r = frobenius_norm(&(&lhs - &px * psi(b, y)?));
                max_product_residual = max_product_residual.max(r / frobenius_norm(&lhs).max(1.0));
            }
        }
    }
    let mut max_adjoint_residual: f64 = 0.0;
    for a in g.arrows() {
        for x in f.bundle.fiber(a).basis() {
            let r = frobenius_norm(&(psi(g.inverse(a), &x.adjoint())? - psi(a, x)?.adjoint()));
            max_adjoint_residual = max_adjoint_residual.max(r);
        }
    }
    Ok(SemidirectComparison {
        dims_match,
        injective,
        max_product_residual,
        max_adjoint_residual,
    })
}

/// `C*_r(E) ~ C*_r(Γ ×_σ K(V))` through the corners of `C*_r(D)`.
#[derive(Debug, Clone)]
pub struct Stabilization {
    pub d_fiber_dims: Vec<usize>,
    pub equivalence: CornerEquivalence,
    pub sigma_residual: f64,
    pub sigma_transport_residual: f64,
    pub semidirect: SemidirectComparison,
}

impl Stabilization {
    pub fn passes(&self, tol: Tolerance, norm_tol: f64) -> bool {
        self.equivalence.passes(tol, norm_tol)
            && tol.accepts(self.sigma_residual, 1.0)
            && self.semidirect.passes(tol)
    }
}

pub fn stabilization_equivalence<R: Rng>(
    e: &ConcreteFellBundle,
    samples: usize,
    rng: &mut R,
    tol: Tolerance,
) -> Result<Stabilization, MoritaError> {
    let d = build_d_bundle(e, tol)?;
    let mut equivalence = morita_via_full_morphism(&d.projection, &d.bundle, samples, rng, tol)?;
    equivalence.certificate.provenance = "stabilization through the bundle D over Γ x Δ".into();
    let sigma = derive_action_sigma(e, tol)?;
    let semidirect = compare_with_semidirect(e, &d.f, &sigma, tol)?;
    Ok(Stabilization {
        d_fiber_dims: d.bundle.fibers().iter().map(MatrixSubspace::dim).collect(),
        equivalence,
        sigma_residual: sigma.max_residual(),
        sigma_transport_residual: sigma.max_transport_residual(),
        semidirect,
    })
}

/// `f ↦ π_x(f)` onto `K(V_x)` for a transitive groupoid.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KvIsomorphism {
    pub algebra_dim: usize,
    pub compacts_dim: usize,
    pub image_rank: usize,
    pub max_compacts_residual: f64,
    pub max_adjoint_residual: f64,
}

impl KvIsomorphism {
    pub fn is_bijective(&self) -> bool {
        self.algebra_dim == self.compacts_dim && self.image_rank == self.algebra_dim
    }
}

pub fn kv_isomorphism(e: &ConcreteFellBundle, x: Arrow, tol: Tolerance) -> Result<KvIsomorphism, MoritaError> {
    if !e.groupoid().is_transitive() {
        return Err(MoritaError::NotTransitive);
    }
    require_saturated(e, tol)?;
    let v = fiber_module(e, x, tol)?;
    let module = v.as_hilbert_module(tol)?;
    let k = bimodule::compacts(&module, &module, tol)?;
    let basis = Section::standard_basis(e);
    let mut images = Vec::with_capacity(basis.len());
    let mut max_compacts_residual: f64 = 0.0;
    let mut max_adjoint_residual: f64 = 0.0;
    for s in &basis {
        let p = crate::csalgebra::represent(s, &v);
        max_compacts_residual = max_compacts_residual.max(k.carrier.residual(&p)?);
        let ps = crate::csalgebra::represent(&crate::csalgebra::involute(s), &v);
        max_adjoint_residual = max_adjoint_residual.max(frobenius_norm(&(ps - p.adjoint())));
        images.push(p);
    }
    let n = v.rows();
    let image_rank = MatrixSubspace::span(n, n, &images, tol)?.dim();
    Ok(KvIsomorphism {
        algebra_dim: algebra_image(e, tol)?.dim(),
        compacts_dim: k.dim(),
        image_rank,
        max_compacts_residual,
        max_adjoint_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fellbundle::{compacts_bundle, line_bundle};
    use crate::groupoid::{cyclic_table, from_group, pair_groupoid, trivial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn scalar_linking_algebra_is_m2() {
        let l = linking_algebra(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap();
        assert_eq!(l.image.dim(), 4);
        assert_eq!(l.image.center_dim(tol()), 1);
        assert!(l.certificate.check(tol()).unwrap().passes());
        assert_eq!(l.certificate.corner_dims, vec![1, 1]);
    }

    #[test]
    fn m2_over_itself_links_to_m2_of_m2() {
        let l = linking_algebra(&Bimodule::identity(&FinDimCStar::matrix_algebra(2)), tol()).unwrap();
        assert_eq!(l.image.dim(), 16);
        assert_eq!(l.image.center_dim(tol()), 1);
    }

    #[test]
    fn full_corners_of_small_algebras() {
        let m2 = FinDimCStar::matrix_algebra(2);
        let e11 = matrixcore::matrix_unit(2, 2, 0, 0);
        assert!(is_full_corner(&m2, &e11, tol()).unwrap().0);
        assert!(is_full_corner(&m2, m2.unit(), tol()).unwrap().0);
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        assert!(!is_full_corner(&diag, &e11, tol()).unwrap().0);
        let half = &e11 * matrixcore::c(0.5, 0.0);
        assert!(matches!(is_full_corner(&m2, &half, tol()), Err(MoritaError::NotAProjection(_))));
    }

    #[test]
    fn compacts_one_two_corners() {
        let e = compacts_bundle(&[1, 2], tol()).unwrap();
        let phi = groupoid::find_isomorphism(e.groupoid(), &groupoid::delta()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = morita_via_full_morphism(&phi, &e, 10, &mut rng, tol()).unwrap();
        assert_eq!(out.ambient_dim, 9);
        let mut dims = out.certificate.corner_dims.clone();
        dims.sort();
        assert_eq!(dims, vec![1, 4]);
        assert!(out.passes(tol(), 1e-8));
    }

    #[test]
    fn non_full_morphism_and_unsaturated_bundle() {
        let d = groupoid::delta();
        let constant = GroupoidMorphism::new(d.clone(), d.clone(), vec![0, 0, 0, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scalar_delta = from_bimodule(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap();
        assert_eq!(
            morita_via_full_morphism(&constant, &scalar_delta, 1, &mut rng, tol()).unwrap_err(),
            MoritaError::MorphismNotFull
        );
        let gapped = ConcreteFellBundle::new(
            d.clone(),
            vec![1, 1, 0, 0],
            vec![
                MatrixSubspace::full(1, 1),
                MatrixSubspace::full(1, 1),
                MatrixSubspace::zero(1, 1),
                MatrixSubspace::zero(1, 1),
            ],
            tol(),
        )
        .unwrap();
        let id = GroupoidMorphism::identity(&d);
        assert!(matches!(
            morita_via_full_morphism(&id, &gapped, 1, &mut rng, tol()),
            Err(MoritaError::Degenerate(_))
        ));
    }

    #[test]
    fn sigma_for_z2_line_bundle_is_the_swap() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        let sigma = derive_action_sigma(&e, tol()).unwrap();
        assert!(sigma.max_residual() <= 1e-9);
        assert!(sigma.max_transport_residual() <= 1e-9);
        let alg = sigma.action.algebra(0).clone();
        assert_eq!((alg.dim(), alg.center_dim(tol())), (4, 1));
        for k in alg.basis() {
            assert!((sigma.action.apply(0, k) - k).norm() < 1e-9);
            let twice = sigma.action.apply(1, &sigma.action.apply(1, k));
            assert!((twice - k).norm() < 1e-9);
        }
    }

    #[test]
    fn sigma_composes_on_pair_groupoid() {
        let e = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let sigma = derive_action_sigma(&e, tol()).unwrap();
        let g = e.groupoid();
        for (a, b) in g.composable_pairs() {
            let ab = g.compose(a, b).unwrap();
            let composed = sigma.action.map(a).compose(sigma.action.map(b)).unwrap();
            for k in sigma.action.algebra(g.source(b)).basis() {
                let r = (sigma.action.apply(ab, k) - composed.apply(k).unwrap()).norm();
                assert!(r < 1e-9);
            }
        }
    }

    #[test]
    fn f_bundle_dimensions() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        let f = build_f_bundle(&e, tol()).unwrap();
        assert_eq!(f.bundle.fiber(0).dim(), 4);
        assert_eq!(f.bundle.fiber(1).dim(), 4);

        let p3 = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let f = build_f_bundle(&p3, tol()).unwrap();
        for a in p3.groupoid().arrows() {
            assert_eq!(f.bundle.fiber(a).dim(), 9);
        }

        let t = crate::fellbundle::over_trivial(&[FinDimCStar::matrix_algebra(2)], tol()).unwrap();
        let f = build_f_bundle(&t, tol()).unwrap();
        assert_eq!(f.bundle.fiber(0).dim(), 4);
    }

    #[test]
    fn d_bundle_restricts_to_e_and_f() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        let d = build_d_bundle(&e, tol()).unwrap();
        assert_eq!(d.bundle.total_dim(), 18);
        for a in z2.arrows() {
            assert!(d.bundle.fiber(4 * a).same_as(e.fiber(a), tol()).unwrap());
            assert!(d.bundle.fiber(4 * a + 1).same_as(d.f.bundle.fiber(a), tol()).unwrap());
        }
    }

    #[test]
    fn z2_stabilization() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = stabilization_equivalence(&e, 10, &mut rng, tol()).unwrap();
        assert_eq!(s.equivalence.ambient_dim, 18);
        assert_eq!(s.equivalence.certificate.corner_dims, vec![2, 8]);
        assert!(s.passes(tol(), 1e-8), "{s:?}");
    }

    #[test]
    fn one_point_stabilization_is_linking() {
        let e = line_bundle(&trivial(1), tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = stabilization_equivalence(&e, 5, &mut rng, tol()).unwrap();
        assert_eq!(s.equivalence.ambient_dim, 4);
        assert_eq!(s.equivalence.certificate.corner_dims, vec![1, 1]);
    }

    #[test]
    fn kv_isomorphisms() {
        let p3 = line_bundle(&pair_groupoid(3).unwrap(), tol()).unwrap();
        let k = kv_isomorphism(&p3, 0, tol()).unwrap();
        assert_eq!((k.algebra_dim, k.compacts_dim), (9, 9));
        assert!(k.is_bijective());
        assert!(k.max_compacts_residual < 1e-9 && k.max_adjoint_residual < 1e-9);

        let d = from_bimodule(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap();
        assert!(kv_isomorphism(&d, 0, tol()).unwrap().is_bijective());

        let two = line_bundle(&trivial(2), tol()).unwrap();
        assert_eq!(kv_isomorphism(&two, 0, tol()).unwrap_err(), MoritaError::NotTransitive);
    }

    #[test]
    fn certificate_json_round_trip_and_tamper() {
        let l = linking_algebra(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap();
        let text = serde_json::to_string(&l.certificate).unwrap();
        let back: MoritaCertificate = serde_json::from_str(&text).unwrap();
        assert!(back.check(tol()).unwrap().passes());
        let mut bad = back.clone();
        bad.witnesses[0].truncate(1);
        assert!(!bad.check(tol()).unwrap().passes());
        let mut bad = back;
        bad.projections[1] = bad.projections[0].clone();
        assert!(!bad.check(tol()).unwrap().passes());
    }
}
