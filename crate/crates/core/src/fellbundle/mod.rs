//! Fell bundles over finite groupoids.
//!
//! The canonical form is [`ConcreteFellBundle`]: each unit `x` carries a
//! Hilbert space `C^{n_x}`, each arrow `γ` a subspace `E_γ` of
//! `n_{r(γ)} x n_{s(γ)}` matrices, multiplication is the matrix product and
//! the involution is the conjugate transpose. Bilinearity, associativity,
//! submultiplicativity, the C*-identity and positivity are then automatic;
//! what must be checked is closure of the fibers under these operations and
//! that the unit fibers are unital `*`-algebras.

mod abstract_bundle;
mod action;
mod constructions;

pub use abstract_bundle::{concretize, AbstractFellBundle, Concretized};
pub use action::GroupoidAction;
pub use constructions::{
    compacts_bundle, from_bimodule, from_cocycle, line_bundle, over_trivial, pullback, semidirect, semidirect_abstract,
    Cocycle,
};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bimodule::{BimoduleError, FinDimCStar};
use crate::groupoid::{Arrow, FiniteGroupoid, GroupoidError};
use crate::matrixcore::{self, spectral_norm, ComplexMatrix, MatrixError, MatrixSubspace, Tolerance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BundleError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error(transparent)]
    Bimodule(#[from] BimoduleError),
    #[error("fiber over arrow {arrow} has shape {found:?}, expected {expected:?}")]
    FiberShape {
        arrow: Arrow,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("expected {expected} entries in `{table}`, found {found}")]
    TableLength {
        table: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("product E_{left} · E_{right} leaves E_{product} (basis {left_index}, {right_index}; residual {residual:e})")]
    ClosureViolation {
        left: Arrow,
        right: Arrow,
        product: Arrow,
        left_index: usize,
        right_index: usize,
        residual: f64,
    },
    #[error("involution does not map E_{arrow} onto E_{inverse} (residual {residual:e})")]
    InvolutionViolation { arrow: Arrow, inverse: Arrow, residual: f64 },
    #[error("unit fiber over {unit} is not a unital *-algebra: {reason}")]
    UnitFiberNotStarAlgebra { unit: Arrow, reason: String },
    #[error("bimodule is not full on the {side} side")]
    NotFull { side: &'static str },
    #[error("cocycle identity fails on ({0}, {1}, {2})")]
    CocycleIdentityViolated(Arrow, Arrow, Arrow),
    #[error("cocycle is not normalized at ({0}, {1})")]
    NotNormalized(Arrow, Arrow),
    #[error("cocycle value at ({0}, {1}) is not on the unit circle")]
    NotUnimodular(Arrow, Arrow),
    #[error("action fails condition ({condition}) at arrow {arrow} (residual {residual:e})")]
    ActionInvalid {
        condition: char,
        arrow: Arrow,
        residual: f64,
    },
    #[error("trace on unit fiber {0} is not faithful")]
    TraceNotFaithful(Arrow),
    #[error("regular representation is not injective on fiber {0}")]
    RepresentationNotInjective(Arrow),
    #[error("abstract structure constants fail {law} at {witness:?} (residual {residual:e})")]
    AbstractLaw {
        law: &'static str,
        witness: Vec<Arrow>,
        residual: f64,
    },
    #[error("unit {0} has Hilbert dimension zero")]
    ZeroUnitDimension(usize),
    #[error("bundle lives over a different groupoid than the morphism's codomain")]
    GroupoidMismatch,
}

#[derive(Debug, Clone)]
pub struct ConcreteFellBundle {
    groupoid: FiniteGroupoid,
    // indexed by arrow; meaningful on units only
    unit_dims: Vec<usize>,
    fibers: Vec<MatrixSubspace>,
}

impl ConcreteFellBundle {
    /// Assembles a candidate bundle, checking only fiber shapes. Use
    /// [`validate_fell_bundle`] for the axioms.
    pub fn from_parts(
        groupoid: FiniteGroupoid,
        unit_dims: Vec<usize>,
        fibers: Vec<MatrixSubspace>,
    ) -> Result<Self, BundleError> {
        if unit_dims.len() != groupoid.len() {
            return Err(BundleError::TableLength {
                table: "unit_dims",
                expected: groupoid.len(),
                found: unit_dims.len(),
            });
        }
        if fibers.len() != groupoid.len() {
            return Err(BundleError::TableLength {
                table: "fibers",
                expected: groupoid.len(),
                found: fibers.len(),
            });
        }
        let mut dims = vec![0; groupoid.len()];
        for &x in groupoid.units() {
            dims[x] = unit_dims[x];
        }
        for g in groupoid.arrows() {
            let expected = (dims[groupoid.range(g)], dims[groupoid.source(g)]);
            if fibers[g].shape() != expected {
                return Err(BundleError::FiberShape {
                    arrow: g,
                    expected,
                    found: fibers[g].shape(),
                });
            }
        }
        Ok(Self {
            groupoid,
            unit_dims: dims,
            fibers,
        })
    }

    /// `from_parts` followed by validation.
    pub fn new(
        groupoid: FiniteGroupoid,
        unit_dims: Vec<usize>,
        fibers: Vec<MatrixSubspace>,
        tol: Tolerance,
    ) -> Result<Self, BundleError> {
        let b = Self::from_parts(groupoid, unit_dims, fibers)?;
        validate_fell_bundle(&b, tol)?;
        Ok(b)
    }

    pub fn groupoid(&self) -> &FiniteGroupoid {
        &self.groupoid
    }

    /// Hilbert dimension `n_x` at a unit.
    pub fn unit_dim(&self, x: Arrow) -> usize {
        self.unit_dims[x]
    }

    pub fn unit_dims(&self) -> &[usize] {
        &self.unit_dims
    }

    /// Shape of elements of `E_γ`.
    pub fn fiber_shape(&self, g: Arrow) -> (usize, usize) {
        (
            self.unit_dims[self.groupoid.range(g)],
            self.unit_dims[self.groupoid.source(g)],
        )
    }

    pub fn fiber(&self, g: Arrow) -> &MatrixSubspace {
        &self.fibers[g]
    }

    pub fn fibers(&self) -> &[MatrixSubspace] {
        &self.fibers
    }

    /// `Σ_γ dim E_γ`.
    pub fn total_dim(&self) -> usize {
        self.fibers.iter().map(MatrixSubspace::dim).sum()
    }

    /// `E_x` as a C*-algebra.
    pub fn unit_algebra(&self, x: Arrow, tol: Tolerance) -> Result<FinDimCStar, BundleError> {
        FinDimCStar::from_subspace(self.fibers[x].clone(), tol).map_err(|e| BundleError::UnitFiberNotStarAlgebra {
            unit: x,
            reason: e.to_string(),
        })
    }

    /// The C*-bundle `E⁰`, one algebra per unit in unit order.
    pub fn restrict_to_units(&self, tol: Tolerance) -> Result<Vec<FinDimCStar>, BundleError> {
        self.groupoid.units().iter().map(|&x| self.unit_algebra(x, tol)).collect()
    }

    /// Every fiber is nonzero.
    pub fn is_nondegenerate(&self) -> bool {
        self.fibers.iter().all(|f| f.dim() >= 1)
    }

    /// `E_α · E_β` spans `E_{αβ}` for every composable pair.
    pub fn is_saturated(&self, tol: Tolerance) -> bool {
        self.saturation_witness(tol).is_none()
    }

    /// First composable pair whose products fail to span.
    pub fn saturation_witness(&self, tol: Tolerance) -> Option<(Arrow, Arrow)> {
        self.groupoid.composable_pairs().find(|&(a, b)| {
            let ab = self.groupoid.compose(a, b).expect("composable");
            match self.fibers[a].product_span(&self.fibers[b], tol) {
                Ok(span) => span.dim() != self.fibers[ab].dim(),
                Err(_) => true,
            }
        })
    }

    /// A random element of `E_γ` with Gaussian coordinates.
    pub fn random_fiber_element<R: Rng>(&self, g: Arrow, rng: &mut R) -> ComplexMatrix {
        self.fibers[g].random_element(rng)
    }
}

/// Outcome of [`validate_fell_bundle`].
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValidationReport {
    pub arrows: usize,
    pub composable_pairs: usize,
    pub max_closure_residual: f64,
    pub max_involution_residual: f64,
    pub saturated: bool,
    pub nondegenerate: bool,
}

/// Checks closure of the fibers under products and adjoints and that each
/// unit fiber is a unital `*`-algebra; reports the first violation.
pub fn validate_fell_bundle(bundle: &ConcreteFellBundle, tol: Tolerance) -> Result<ValidationReport, BundleError> {
    let g = bundle.groupoid();
    for a in g.arrows() {
        let expected = bundle.fiber_shape(a);
        if bundle.fiber(a).shape() != expected {
            return Err(BundleError::FiberShape {
                arrow: a,
                expected,
                found: bundle.fiber(a).shape(),
            });
        }
    }

    let mut max_involution_residual: f64 = 0.0;
    for a in g.arrows() {
        let inv = g.inverse(a);
        let (src, dst) = (bundle.fiber(a), bundle.fiber(inv));
        let mut worst: f64 = 0.0;
        for b in src.basis() {
            worst = worst.max(dst.residual(&b.adjoint())?);
        }
        if src.dim() != dst.dim() || !tol.accepts(worst, 1.0) {
            return Err(BundleError::InvolutionViolation {
                arrow: a,
                inverse: inv,
                residual: worst,
            });
        }
        max_involution_residual = max_involution_residual.max(worst);
    }

    for &x in g.units() {
        bundle.unit_algebra(x, tol)?;
    }

    let mut max_closure_residual: f64 = 0.0;
    let mut pairs = 0;
    for (a, b) in g.composable_pairs() {
        pairs += 1;
        let ab = g.compose(a, b).expect("composable");
        let target = bundle.fiber(ab);
        for (i, ea) in bundle.fiber(a).basis().iter().enumerate() {
            for (j, eb) in bundle.fiber(b).basis().iter().enumerate() {
                let prod = ea * eb;
                let residual = target.residual(&prod)?;
                if !tol.accepts(residual, matrixcore::frobenius_norm(&prod)) {
                    return Err(BundleError::ClosureViolation {
                        left: a,
                        right: b,
                        product: ab,
                        left_index: i,
                        right_index: j,
                        residual,
                    });
                }
                max_closure_residual = max_closure_residual.max(residual);
            }
        }
    }

    Ok(ValidationReport {
        arrows: g.len(),
        composable_pairs: pairs,
        max_closure_residual,
        max_involution_residual,
        saturated: bundle.is_saturated(tol),
        nondegenerate: bundle.is_nondegenerate(),
    })
}

/// Randomized checks of the axioms that hold by construction in the matrix
/// model: `e** = e`, `|e*e| = |e|²`, `e*e ≥ 0`, `e* ∈ E_{γ*}`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SpotCheck {
    pub samples: usize,
    pub max_double_involution: f64,
    pub max_cstar_identity: f64,
    pub min_positivity_eigenvalue: f64,
    pub max_involution_membership: f64,
    pub max_unit_fiber_membership: f64,
}

impl SpotCheck {
    /// All residuals within `eps`, relative to the element norms involved.
    pub fn passes(&self, tol: Tolerance) -> bool {
        self.max_double_involution <= tol.eps()
            && self.max_cstar_identity <= tol.eps()
            && self.min_positivity_eigenvalue >= -tol.eps()
            && self.max_involution_membership <= tol.eps()
            && self.max_unit_fiber_membership <= tol.eps()
    }
}

/// Draws `samples` random elements, cycling through the nonzero fibers.
pub fn spot_check<R: Rng>(bundle: &ConcreteFellBundle, samples: usize, rng: &mut R) -> Result<SpotCheck, BundleError> {
    let g = bundle.groupoid();
    let nonzero: Vec<Arrow> = g.arrows().filter(|&a| bundle.fiber(a).dim() > 0).collect();
    let mut out = SpotCheck {
        samples: 0,
        max_double_involution: 0.0,
        max_cstar_identity: 0.0,
        min_positivity_eigenvalue: 0.0,
        max_involution_membership: 0.0,
        max_unit_fiber_membership: 0.0,
    };
    if nonzero.is_empty() {
        return Ok(out);
    }
    for k in 0..samples {
        let a = nonzero[k % nonzero.len()];
        let e = bundle.random_fiber_element(a, rng);
        let norm = spectral_norm(&e).max(f64::MIN_POSITIVE);
        let e_star = e.adjoint();
        let ee = &e_star * &e;
        out.max_double_involution = out
            .max_double_involution
            .max(matrixcore::frobenius_norm(&(e_star.adjoint() - &e)) / norm);
        out.max_cstar_identity = out
            .max_cstar_identity
            .max((spectral_norm(&ee) - norm * norm).abs() / (norm * norm));
        let min_ev = matrixcore::hermitian_eigenvalues(&ee)?
            .first()
            .copied()
            .unwrap_or(0.0);
        out.min_positivity_eigenvalue = out.min_positivity_eigenvalue.min(min_ev / (norm * norm));
        out.max_involution_membership = out
            .max_involution_membership
            .max(bundle.fiber(g.inverse(a)).residual(&e_star)? / norm);
        out.max_unit_fiber_membership = out
            .max_unit_fiber_membership
            .max(bundle.fiber(g.source(a)).residual(&ee)? / (norm * norm));
        out.samples += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupoid::{self, DELTA, DELTA_STAR};
    use crate::matrixcore::matrix_unit;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn delta_with(e_delta: MatrixSubspace, e_delta_star: MatrixSubspace) -> Result<ConcreteFellBundle, BundleError> {
        let d = groupoid::delta();
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        ConcreteFellBundle::new(
            d,
            vec![1, 2, 0, 0],
            vec![
                MatrixSubspace::full(1, 1),
                diag.carrier().clone(),
                e_delta,
                e_delta_star,
            ],
            tol(),
        )
    }

    #[test]
    fn enlarged_fiber_breaks_closure() {
        let e1 = MatrixSubspace::span(2, 1, &[matrix_unit(2, 1, 0, 0)], tol()).unwrap();
        let ok = delta_with(e1.clone(), e1.adjoint()).unwrap();
        assert!(!ok.is_saturated(tol()));
        assert!(ok.is_nondegenerate());

        let all = MatrixSubspace::full(2, 1);
        match delta_with(all.clone(), all.adjoint()) {
            Err(BundleError::ClosureViolation { left, right, .. }) => assert_eq!((left, right), (DELTA, DELTA_STAR)),
            other => panic!("expected closure violation, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_involution_is_reported() {
        let e1 = MatrixSubspace::span(2, 1, &[matrix_unit(2, 1, 0, 0)], tol()).unwrap();
        let e2 = MatrixSubspace::span(1, 2, &[matrix_unit(1, 2, 0, 1)], tol()).unwrap();
        assert!(matches!(
            delta_with(e1, e2),
            Err(BundleError::InvolutionViolation { arrow: DELTA, .. })
        ));
    }

    #[test]
    fn shapes_are_checked() {
        let d = groupoid::delta();
        let err = ConcreteFellBundle::from_parts(
            d,
            vec![1, 1, 0, 0],
            vec![MatrixSubspace::full(1, 1); 3]
                .into_iter()
                .chain([MatrixSubspace::full(2, 1)])
                .collect(),
        )
        .unwrap_err();
        assert!(matches!(err, BundleError::FiberShape { arrow: 3, .. }));
    }

    #[test]
    fn non_algebra_unit_fiber() {
        let t = groupoid::trivial(1);
        let err = ConcreteFellBundle::new(
            t,
            vec![2],
            vec![MatrixSubspace::span(2, 2, &[matrix_unit(2, 2, 0, 1), matrix_unit(2, 2, 1, 0)], tol()).unwrap()],
            tol(),
        )
        .unwrap_err();
        assert!(matches!(err, BundleError::UnitFiberNotStarAlgebra { unit: 0, .. }));
    }
}
