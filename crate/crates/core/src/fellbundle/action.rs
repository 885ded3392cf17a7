use super::BundleError;
use crate::bimodule::FinDimCStar;
use crate::groupoid::{Arrow, FiniteGroupoid};
use crate::matrixcore::{frobenius_norm, ComplexMatrix, LinearMap, MatrixSubspace, Tolerance};

/// An action of a groupoid on a bundle of finite-dimensional C*-algebras
/// over its unit space.
///
/// `α_γ : A_{s(γ)} -> A_{r(γ)}` is stored as a linear map on the ambient
/// matrix spaces; only its restriction to `A_{s(γ)}` matters.
#[derive(Debug, Clone)]
pub struct GroupoidAction {
    groupoid: FiniteGroupoid,
    // unit order
    algebras: Vec<FinDimCStar>,
    maps: Vec<LinearMap>,
}

impl GroupoidAction {
    /// Validates the four action conditions: (a) `α_γ` lands in
    /// `A_{r(γ)}`, (b) it is a `*`-isomorphism, (c) units act trivially,
    /// (d) `α_{γ₁γ₂} = α_{γ₁} ∘ α_{γ₂}`.
    pub fn new(
        groupoid: FiniteGroupoid,
        algebras: Vec<FinDimCStar>,
        maps: Vec<LinearMap>,
        tol: Tolerance,
    ) -> Result<Self, BundleError> {
        if algebras.len() != groupoid.units().len() {
            return Err(BundleError::TableLength {
                table: "algebras",
                expected: groupoid.units().len(),
                found: algebras.len(),
            });
        }
        if maps.len() != groupoid.len() {
            return Err(BundleError::TableLength {
                table: "action maps",
                expected: groupoid.len(),
                found: maps.len(),
            });
        }
        let action = Self {
            groupoid,
            algebras,
            maps,
        };
        action.check(tol)?;
        Ok(action)
    }

    /// Action given pointwise by a function on matrices.
    pub fn from_fn(
        groupoid: FiniteGroupoid,
        algebras: Vec<FinDimCStar>,
        f: impl Fn(Arrow, &ComplexMatrix) -> ComplexMatrix,
        tol: Tolerance,
    ) -> Result<Self, BundleError> {
        let size = |x: Arrow| algebras[groupoid.unit_index(x).expect("unit")].size();
        let maps = groupoid
            .arrows()
            .map(|g| {
                let (ns, nr) = (size(groupoid.source(g)), size(groupoid.range(g)));
                LinearMap::from_fn((ns, ns), (nr, nr), |a| f(g, a))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(groupoid, algebras, maps, tol)
    }

    /// `α_γ(a) = U_γ a U_γ*` with `U_γ` of shape `n_{r(γ)} x n_{s(γ)}`.
    pub fn by_unitaries(
        groupoid: FiniteGroupoid,
        algebras: Vec<FinDimCStar>,
        unitaries: &[ComplexMatrix],
        tol: Tolerance,
    ) -> Result<Self, BundleError> {
        if unitaries.len() != groupoid.len() {
            return Err(BundleError::TableLength {
                table: "unitaries",
                expected: groupoid.len(),
                found: unitaries.len(),
            });
        }
        Self::from_fn(groupoid, algebras, |g, a| &unitaries[g] * a * unitaries[g].adjoint(), tol)
    }

    /// Every arrow acts as the identity; needs `A_{r(γ)} = A_{s(γ)}`.
    pub fn trivial(groupoid: FiniteGroupoid, algebras: Vec<FinDimCStar>, tol: Tolerance) -> Result<Self, BundleError> {
        Self::from_fn(groupoid, algebras, |_, a| a.clone(), tol)
    }

    pub fn groupoid(&self) -> &FiniteGroupoid {
        &self.groupoid
    }

    pub fn algebra(&self, x: Arrow) -> &FinDimCStar {
        &self.algebras[self.groupoid.unit_index(x).expect("unit arrow")]
    }

    pub fn algebras(&self) -> &[FinDimCStar] {
        &self.algebras
    }

    pub fn map(&self, g: Arrow) -> &LinearMap {
        &self.maps[g]
    }

    pub fn apply(&self, g: Arrow, a: &ComplexMatrix) -> ComplexMatrix {
        self.maps[g].apply(a).expect("element of A_{s(γ)}")
    }

    fn check(&self, tol: Tolerance) -> Result<(), BundleError> {
        let g = &self.groupoid;
        let invalid = |condition, arrow, residual| BundleError::ActionInvalid {
            condition,
            arrow,
            residual,
        };
        for a in g.arrows() {
            let (src, dst) = (self.algebra(g.source(a)), self.algebra(g.range(a)));
            let ns = src.size();
            let nr = dst.size();
            if self.maps[a].in_shape() != (ns, ns) || self.maps[a].out_shape() != (nr, nr) {
                return Err(invalid('a', a, f64::INFINITY));
            }
            let images: Vec<ComplexMatrix> = src.basis().iter().map(|b| self.apply(a, b)).collect();
            for img in &images {
                let r = dst.carrier().residual(img)?;
                if !tol.accepts(r, frobenius_norm(img)) {
                    return Err(invalid('a', a, r));
                }
            }

            let span = MatrixSubspace::span(nr, nr, &images, tol)?;
            if span.dim() != src.dim() || src.dim() != dst.dim() {
                return Err(invalid('b', a, (src.dim() as f64 - span.dim() as f64).abs()));
            }
            for (i, x) in src.basis().iter().enumerate() {
                let r = frobenius_norm(&(self.apply(a, &x.adjoint()) - images[i].adjoint()));
                if !tol.accepts(r, 1.0) {
                    return Err(invalid('b', a, r));
                }
                for (j, y) in src.basis().iter().enumerate() {
                    let lhs = self.apply(a, &(x * y));
                    let r = frobenius_norm(&(&lhs - &images[i] * &images[j]));
                    if !tol.accepts(r, frobenius_norm(&lhs)) {
                        return Err(invalid('b', a, r));
                    }
                }
            }
        }
        for &x in g.units() {
            for b in self.algebra(x).basis() {
                let r = frobenius_norm(&(self.apply(x, b) - b));
                if !tol.accepts(r, 1.0) {
                    return Err(invalid('c', x, r));
                }
            }
        }
        for (a, b) in g.composable_pairs() {
            let ab = g.compose(a, b).expect("composable");
            for e in self.algebra(g.source(b)).basis() {
                let lhs = self.apply(ab, e);
                let r = frobenius_norm(&(&lhs - self.apply(a, &self.apply(b, e))));
                if !tol.accepts(r, frobenius_norm(&lhs)) {
                    return Err(invalid('d', ab, r));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupoid::{cyclic_table, from_group};
    use crate::matrixcore::{c, from_real_rows, identity, zeros};

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    #[test]
    fn swap_on_diagonal_is_an_action() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        let swap = from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let act = GroupoidAction::by_unitaries(z2, vec![diag], &[identity(2), swap], tol()).unwrap();
        let a = from_real_rows(&[&[3.0, 0.0], &[0.0, 5.0]]);
        let expected = from_real_rows(&[&[5.0, 0.0], &[0.0, 3.0]]);
        assert!((act.apply(1, &a) - expected).norm() < 1e-12);
    }

    #[test]
    fn phase_twist_breaks_composition() {
        // Ad(diag(1, i)) squares to Ad(diag(1, -1)) which is not the identity on M2
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let mut u = zeros(2, 2);
        u[(0, 0)] = c(1.0, 0.0);
        u[(1, 1)] = c(0.0, 1.0);
        let err = GroupoidAction::by_unitaries(z2, vec![FinDimCStar::matrix_algebra(2)], &[identity(2), u], tol())
            .unwrap_err();
        assert!(matches!(err, BundleError::ActionInvalid { condition: 'd', arrow: 0, .. }));
    }

    #[test]
    fn nontrivial_unit_map_violates_c() {
        let z1 = from_group(&cyclic_table(1)).unwrap();
        let swap = from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let err = GroupoidAction::by_unitaries(z1, vec![FinDimCStar::matrix_algebra(2)], &[swap], tol()).unwrap_err();
        assert!(matches!(err, BundleError::ActionInvalid { condition: 'c', .. }));
    }

    #[test]
    fn map_leaving_target_violates_a() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        let h = from_real_rows(&[&[1.0, 1.0], &[1.0, -1.0]]) * c(1.0 / 2f64.sqrt(), 0.0);
        let err = GroupoidAction::by_unitaries(z2, vec![diag], &[identity(2), h], tol()).unwrap_err();
        assert!(matches!(err, BundleError::ActionInvalid { condition: 'a', arrow: 1, .. }));
    }

    #[test]
    fn non_multiplicative_map_violates_b() {
        let z1 = from_group(&cyclic_table(1)).unwrap();
        let diag = FinDimCStar::block_diagonal(&[1, 1]);
        let err = GroupoidAction::from_fn(z1, vec![diag], |_, a| a * c(2.0, 0.0), tol()).unwrap_err();
        assert!(matches!(err, BundleError::ActionInvalid { condition: 'b', .. }));
    }
}
