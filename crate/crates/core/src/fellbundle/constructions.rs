use num_complex::Complex64;

use super::{concretize, AbstractFellBundle, BundleError, ConcreteFellBundle, GroupoidAction};
use crate::bimodule::{Bimodule, FinDimCStar};
use crate::groupoid::{self, Arrow, FiniteGroupoid, GroupoidMorphism};
use crate::matrixcore::{MatrixSubspace, Tolerance};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A C*-algebra bundle over a finite set, viewed as a bundle over the
/// trivial groupoid.
pub fn over_trivial(algebras: &[FinDimCStar], tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    let g = groupoid::trivial(algebras.len());
    ConcreteFellBundle::new(
        g,
        algebras.iter().map(FinDimCStar::size).collect(),
        algebras.iter().map(|a| a.carrier().clone()).collect(),
        tol,
    )
}

/// The linking bundle of a `B`-`A` equivalence bimodule `C` over `Δ`:
/// `E_0 = A`, `E_1 = B`, `E_δ = C`, `E_δ* = C*`.
pub fn from_bimodule(c: &Bimodule, tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    if !c.module().is_full(tol) {
        return Err(BundleError::NotFull { side: "right" });
    }
    if !c.is_left_full(tol) {
        return Err(BundleError::NotFull { side: "left" });
    }
    let a = c.right();
    let b = c.left();
    ConcreteFellBundle::new(
        groupoid::delta(),
        vec![a.size(), b.size(), 0, 0],
        vec![
            a.carrier().clone(),
            b.carrier().clone(),
            c.module().carrier().clone(),
            c.module().carrier().adjoint(),
        ],
        tol,
    )
}

/// A circle-valued 2-cocycle on a finite groupoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cocycle {
    groupoid: FiniteGroupoid,
    // indexed a * n + b; 1 off composable pairs
    values: Vec<Complex64>,
}

impl Cocycle {
    pub fn trivial(groupoid: FiniteGroupoid) -> Self {
        let n = groupoid.len();
        Self {
            groupoid,
            values: vec![ONE; n * n],
        }
    }

    /// Tabulates `f` on composable pairs.
    pub fn from_fn(groupoid: FiniteGroupoid, f: impl Fn(Arrow, Arrow) -> Complex64) -> Self {
        let mut out = Self::trivial(groupoid);
        let n = out.groupoid.len();
        let pairs: Vec<_> = out.groupoid.composable_pairs().collect();
        for (a, b) in pairs {
            out.values[a * n + b] = f(a, b);
        }
        out
    }

    /// `σ(α, β) = c(α) c(β) / c(αβ)`. Normalized when `c` is 1 on units.
    pub fn coboundary(groupoid: FiniteGroupoid, c: impl Fn(Arrow) -> Complex64) -> Self {
        let g = groupoid.clone();
        Self::from_fn(groupoid, |a, b| c(a) * c(b) / c(g.compose(a, b).expect("composable")))
    }

    pub fn groupoid(&self) -> &FiniteGroupoid {
        &self.groupoid
    }

    pub fn value(&self, a: Arrow, b: Arrow) -> Complex64 {
        self.values[a * self.groupoid.len() + b]
    }

    pub fn set(&mut self, a: Arrow, b: Arrow, v: Complex64) {
        let n = self.groupoid.len();
        self.values[a * n + b] = v;
    }

    /// Unimodular, normalized on units, and
    /// `σ(α,β)σ(αβ,γ) = σ(β,γ)σ(α,βγ)` on composable triples.
    pub fn check(&self, tol: Tolerance) -> Result<(), BundleError> {
        let g = &self.groupoid;
        for (a, b) in g.composable_pairs() {
            if !tol.accepts((self.value(a, b).norm() - 1.0).abs(), 1.0) {
                return Err(BundleError::NotUnimodular(a, b));
            }
        }
        for a in g.arrows() {
            for (x, y) in [(g.range(a), a), (a, g.source(a))] {
                if !tol.accepts((self.value(x, y) - ONE).norm(), 1.0) {
                    return Err(BundleError::NotNormalized(x, y));
                }
            }
        }
        for (a, b) in g.composable_pairs() {
            let ab = g.compose(a, b).expect("composable");
            for c in g.arrows_with_range(g.source(b)) {
                let bc = g.compose(b, c).expect("composable");
                let lhs = self.value(a, b) * self.value(ab, c);
                let rhs = self.value(b, c) * self.value(a, bc);
                if !tol.accepts((lhs - rhs).norm(), 1.0) {
                    return Err(BundleError::CocycleIdentityViolated(a, b, c));
                }
            }
        }
        Ok(())
    }
}

/// Twisted line bundle: `e_α e_β = σ(α,β) e_{αβ}` and
/// `e_γ* = conj(σ(γ,γ*)) e_{γ*}`, realized by its regular representation.
pub fn from_cocycle(sigma: &Cocycle, tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    sigma.check(tol)?;
    let g = sigma.groupoid().clone();
    let dims = vec![1; g.len()];
    let inv = g.clone();
    let abs = AbstractFellBundle::from_fn(
        g,
        dims,
        |a, b, _, _| vec![sigma.value(a, b)],
        |a, _| vec![sigma.value(a, inv.inverse(a)).conj()],
        |_, _| ONE,
        tol,
    )?;
    Ok(concretize(&abs, tol)?.bundle)
}

/// The untwisted line bundle.
pub fn line_bundle(groupoid: &FiniteGroupoid, tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    from_cocycle(&Cocycle::trivial(groupoid.clone()), tol)
}

/// Structure constants of `Γ ×_α A` in orthonormal bases of the `A_x`:
/// the fiber at `γ` is `A_{s(γ)}`, `(γ₁,a₁)(γ₂,a₂) = (γ₁γ₂, α_{γ₂*}(a₁)a₂)`,
/// `(γ,a)* = (γ*, α_γ(a*))`, with normalized matrix traces on unit fibers.
pub fn semidirect_abstract(action: &GroupoidAction, tol: Tolerance) -> Result<AbstractFellBundle, BundleError> {
    let g = action.groupoid();
    let basis = |a: Arrow| action.algebra(g.source(a)).basis();
    let dims = g.arrows().map(|a| basis(a).len()).collect();
    AbstractFellBundle::from_fn(
        g.clone(),
        dims,
        |a, b, i, j| {
            let p = action.apply(g.inverse(b), &basis(a)[i]) * &basis(b)[j];
            coords(action.algebra(g.source(b)).carrier(), &p)
        },
        |a, i| {
            let img = action.apply(a, &basis(a)[i].adjoint());
            coords(action.algebra(g.range(a)).carrier(), &img)
        },
        |x, k| {
            let alg = action.algebra(x);
            alg.basis()[k].trace() / alg.size() as f64
        },
        tol,
    )
}

fn coords(space: &MatrixSubspace, m: &crate::matrixcore::ComplexMatrix) -> Vec<Complex64> {
    space.coordinates(m).expect("shapes agree").iter().copied().collect()
}

/// `Γ ×_α A`, concretized.
pub fn semidirect(action: &GroupoidAction, tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    Ok(concretize(&semidirect_abstract(action, tol)?, tol)?.bundle)
}

/// `E_{(x,y)} = K(C^{n_y}, C^{n_x})` over the pair groupoid on the points.
pub fn compacts_bundle(dims: &[usize], tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    let n = dims.len();
    let g = groupoid::pair_groupoid(n)?;
    if let Some(x) = dims.iter().position(|&d| d == 0) {
        return Err(BundleError::ZeroUnitDimension(x));
    }
    let mut unit_dims = vec![0; n * n];
    for x in 0..n {
        unit_dims[x * n + x] = dims[x];
    }
    let fibers = g
        .arrows()
        .map(|a| MatrixSubspace::full(dims[a / n], dims[a % n]))
        .collect();
    ConcreteFellBundle::new(g, unit_dims, fibers, tol)
}

fn same_structure(a: &FiniteGroupoid, b: &FiniteGroupoid) -> bool {
    a.len() == b.len()
        && a.units() == b.units()
        && a.arrows().all(|x| {
            a.range(x) == b.range(x)
                && a.source(x) == b.source(x)
                && a.inverse(x) == b.inverse(x)
                && a.arrows().all(|y| a.compose(x, y) == b.compose(x, y))
        })
}

/// `j*(E)`: the fiber over `ω` is `E_{j(ω)}`.
pub fn pullback(j: &GroupoidMorphism, e: &ConcreteFellBundle, tol: Tolerance) -> Result<ConcreteFellBundle, BundleError> {
    if !same_structure(j.codomain(), e.groupoid()) {
        return Err(BundleError::GroupoidMismatch);
    }
    let dom = j.domain();
    let mut unit_dims = vec![0; dom.len()];
    for &x in dom.units() {
        unit_dims[x] = e.unit_dim(j.apply(x));
    }
    let fibers = dom.arrows().map(|w| e.fiber(j.apply(w)).clone()).collect();
    ConcreteFellBundle::new(dom.clone(), unit_dims, fibers, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bimodule::HilbertModule;
    use crate::groupoid::{cyclic_table, from_group, DELTA, DELTA_STAR};
    use crate::matrixcore::{c, from_real_rows, identity};

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn klein() -> FiniteGroupoid {
        // (a, b) has index 2a + b
        let table: Vec<Vec<usize>> = (0..4)
            .map(|x| (0..4).map(|y| x ^ y).collect())
            .collect();
        from_group(&table).unwrap()
    }

    fn fiber_dims(e: &ConcreteFellBundle) -> Vec<usize> {
        e.fibers().iter().map(MatrixSubspace::dim).collect()
    }

    #[test]
    fn scalar_linking_bundle() {
        let e = from_bimodule(&Bimodule::identity(&FinDimCStar::scalars()), tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 1, 1, 1]);
        assert!(e.is_saturated(tol()));
    }

    #[test]
    fn column_module_links_scalars_and_m2() {
        let c2 = Bimodule::new(FinDimCStar::matrix_algebra(2), HilbertModule::column(2), tol()).unwrap();
        let e = from_bimodule(&c2, tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 4, 2, 2]);
        assert_eq!(e.fiber_shape(DELTA), (2, 1));
        assert_eq!(e.fiber_shape(DELTA_STAR), (1, 2));
        assert!(e.is_saturated(tol()));
    }

    #[test]
    fn zero_bimodule_is_not_full() {
        let s = FinDimCStar::scalars();
        let zero = Bimodule::new(s.clone(), HilbertModule::zero(1, &s), tol()).unwrap();
        assert_eq!(from_bimodule(&zero, tol()).unwrap_err(), BundleError::NotFull { side: "right" });
    }

    #[test]
    fn trivial_cocycle_on_z2() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 1]);
        assert!(e.is_nondegenerate());
        assert!(e.is_saturated(tol()));
        // regular representation: g acts as the swap
        let g = &e.fiber(1).basis()[0];
        let swap = from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let overlap = crate::matrixcore::frobenius_inner(&swap, g).norm();
        assert!((overlap - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn klein_four_twist() {
        let sigma = Cocycle::from_fn(klein(), |x, y| {
            let (b, cc) = (x & 1, y >> 1);
            if b * cc == 1 {
                c(-1.0, 0.0)
            } else {
                ONE
            }
        });
        sigma.check(tol()).unwrap();
        let e = from_cocycle(&sigma, tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1; 4]);
        // (0,1) and (1,0) anticommute in the twisted algebra
        let u = &e.fiber(1).basis()[0];
        let v = &e.fiber(2).basis()[0];
        assert!((u * v + v * u).norm() < 1e-9);
    }

    #[test]
    fn broken_cocycle_identity() {
        let z3 = from_group(&cyclic_table(3)).unwrap();
        let mut sigma = Cocycle::trivial(z3);
        sigma.set(1, 1, c(0.0, 1.0));
        assert_eq!(sigma.check(tol()).unwrap_err(), BundleError::CocycleIdentityViolated(1, 1, 2));
    }

    #[test]
    fn unnormalized_and_non_unimodular() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let mut sigma = Cocycle::trivial(z2.clone());
        sigma.set(0, 1, c(-1.0, 0.0));
        assert_eq!(sigma.check(tol()).unwrap_err(), BundleError::NotNormalized(0, 1));
        let mut sigma = Cocycle::trivial(z2);
        sigma.set(1, 1, c(2.0, 0.0));
        assert_eq!(sigma.check(tol()).unwrap_err(), BundleError::NotUnimodular(1, 1));
    }

    #[test]
    fn coboundary_is_a_cocycle() {
        let z4 = from_group(&cyclic_table(4)).unwrap();
        let sigma = Cocycle::coboundary(z4, |a| if a == 0 { ONE } else { c(0.0, a as f64).exp() });
        sigma.check(tol()).unwrap();
        assert!(from_cocycle(&sigma, tol()).unwrap().is_saturated(tol()));
    }

    #[test]
    fn semidirect_by_trivial_and_swap_actions() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let act = GroupoidAction::trivial(z2.clone(), vec![FinDimCStar::scalars()], tol()).unwrap();
        let e = semidirect(&act, tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 1]);

        let swap = from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let act = GroupoidAction::by_unitaries(z2, vec![FinDimCStar::block_diagonal(&[1, 1])], &[identity(2), swap], tol())
            .unwrap();
        let e = semidirect(&act, tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![2, 2]);
        let units = e.restrict_to_units(tol()).unwrap();
        assert_eq!(units[0].dim(), 2);
        assert!(units[0].is_commutative(tol()));
    }

    #[test]
    fn compacts_fiber_dimensions() {
        let e = compacts_bundle(&[1, 2], tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 2, 2, 4]);
        assert!(e.is_saturated(tol()) && e.is_nondegenerate());
        assert_eq!(compacts_bundle(&[1, 0], tol()).unwrap_err(), BundleError::ZeroUnitDimension(1));
    }

    #[test]
    fn pullback_along_identity_and_quotient() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = line_bundle(&z2, tol()).unwrap();
        let same = pullback(&GroupoidMorphism::identity(&z2), &e, tol()).unwrap();
        for a in z2.arrows() {
            assert!(same.fiber(a).same_as(e.fiber(a), tol()).unwrap());
        }
        let z4 = from_group(&cyclic_table(4)).unwrap();
        let q = GroupoidMorphism::new(z4.clone(), z2.clone(), vec![0, 1, 0, 1]).unwrap();
        let p = pullback(&q, &e, tol()).unwrap();
        assert_eq!(fiber_dims(&p), vec![1; 4]);
        for a in z4.arrows() {
            assert!(p.fiber(a).same_as(e.fiber(a % 2), tol()).unwrap());
        }
        let wrong = GroupoidMorphism::identity(&z4);
        assert_eq!(pullback(&wrong, &e, tol()).unwrap_err(), BundleError::GroupoidMismatch);
    }

    #[test]
    fn vanishing_fiber_is_degenerate_and_unsaturated() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let e = ConcreteFellBundle::new(
            z2,
            vec![1, 0],
            vec![MatrixSubspace::full(1, 1), MatrixSubspace::zero(1, 1)],
            tol(),
        )
        .unwrap();
        assert!(!e.is_nondegenerate());
        assert!(!e.is_saturated(tol()));
    }

    #[test]
    fn over_trivial_keeps_algebras() {
        let e = over_trivial(&[FinDimCStar::scalars(), FinDimCStar::matrix_algebra(2)], tol()).unwrap();
        assert_eq!(fiber_dims(&e), vec![1, 4]);
        assert_eq!(e.unit_dims(), &[1, 2]);
    }
}
