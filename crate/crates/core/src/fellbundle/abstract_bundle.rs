use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use super::{BundleError, ConcreteFellBundle};
use crate::groupoid::{Arrow, FiniteGroupoid};
use crate::matrixcore::{self, frobenius_norm, ComplexMatrix, MatrixSubspace, Tolerance};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A Fell bundle given by structure constants on fiber bases.
///
/// `e_i^α e_j^β = Σ_k m[k][i][j] e_k^{αβ}`; the involution is conjugate
/// linear, `(Σ c_i e_i^γ)* = Σ_k (J_γ conj(c))_k e_k^{γ*}`; each unit fiber
/// carries a faithful trace `τ_x(e_k^x) = t_k`.
#[derive(Debug, Clone)]
pub struct AbstractFellBundle {
    groupoid: FiniteGroupoid,
    dims: Vec<usize>,
    // row-major [k][i][j] per composable pair, indexed a * n + b
    mult: Vec<Vec<Complex64>>,
    involution: Vec<DMatrix<Complex64>>,
    traces: Vec<Vec<Complex64>>,
}

impl AbstractFellBundle {
    /// Builds and validates structure constants.
    ///
    /// `product(a, b, i, j)` returns the coefficients of `e_i^a e_j^b` in
    /// `E_{ab}`; `star(γ, i)` those of `(e_i^γ)*` in `E_{γ*}`; `trace(x, k)`
    /// is `τ_x(e_k^x)`.
    pub fn from_fn(
        groupoid: FiniteGroupoid,
        dims: Vec<usize>,
        product: impl Fn(Arrow, Arrow, usize, usize) -> Vec<Complex64>,
        star: impl Fn(Arrow, usize) -> Vec<Complex64>,
        trace: impl Fn(Arrow, usize) -> Complex64,
        tol: Tolerance,
    ) -> Result<Self, BundleError> {
        let n = groupoid.len();
        if dims.len() != n {
            return Err(BundleError::TableLength {
                table: "dims",
                expected: n,
                found: dims.len(),
            });
        }
        let mut mult = vec![Vec::new(); n * n];
        for (a, b) in groupoid.composable_pairs() {
            let ab = groupoid.compose(a, b).expect("composable");
            let (da, db, dab) = (dims[a], dims[b], dims[ab]);
            let mut table = vec![ZERO; dab * da * db];
            for i in 0..da {
                for j in 0..db {
                    let coeffs = product(a, b, i, j);
                    if coeffs.len() != dab {
                        return Err(BundleError::TableLength {
                            table: "product",
                            expected: dab,
                            found: coeffs.len(),
                        });
                    }
                    for (k, v) in coeffs.into_iter().enumerate() {
                        table[k * da * db + i * db + j] = v;
                    }
                }
            }
            mult[a * n + b] = table;
        }
        let mut involution = Vec::with_capacity(n);
        for g in groupoid.arrows() {
            let inv = groupoid.inverse(g);
            let mut j = DMatrix::zeros(dims[inv], dims[g]);
            for i in 0..dims[g] {
                let coeffs = star(g, i);
                if coeffs.len() != dims[inv] {
                    return Err(BundleError::TableLength {
                        table: "involution",
                        expected: dims[inv],
                        found: coeffs.len(),
                    });
                }
                for (k, v) in coeffs.into_iter().enumerate() {
                    j[(k, i)] = v;
                }
            }
            involution.push(j);
        }
        let mut traces = vec![Vec::new(); n];
        for &x in groupoid.units() {
            traces[x] = (0..dims[x]).map(|k| trace(x, k)).collect();
        }
        let bundle = Self {
            groupoid,
            dims,
            mult,
            involution,
            traces,
        };
        bundle.check_laws(tol)?;
        Ok(bundle)
    }

    /// Structure constants of a concrete bundle in its orthonormal fiber
    /// bases, with the normalized matrix trace on unit fibers.
    pub fn from_concrete(e: &ConcreteFellBundle, tol: Tolerance) -> Result<Self, BundleError> {
        let g = e.groupoid().clone();
        let dims: Vec<usize> = g.arrows().map(|a| e.fiber(a).dim()).collect();
        let gg = g.clone();
        Self::from_fn(
            g,
            dims,
            |a, b, i, j| {
                let ab = gg.compose(a, b).expect("composable");
                let p = &e.fiber(a).basis()[i] * &e.fiber(b).basis()[j];
                e.fiber(ab).coordinates(&p).expect("shapes agree").iter().copied().collect()
            },
            |a, i| {
                let adj = e.fiber(a).basis()[i].adjoint();
                e.fiber(gg.inverse(a))
                    .coordinates(&adj)
                    .expect("shapes agree")
                    .iter()
                    .copied()
                    .collect()
            },
            |x, k| e.fiber(x).basis()[k].trace() / e.unit_dim(x) as f64,
            tol,
        )
    }

    pub fn groupoid(&self) -> &FiniteGroupoid {
        &self.groupoid
    }

    pub fn fiber_dim(&self, g: Arrow) -> usize {
        self.dims[g]
    }

    /// Coefficients of `x y` for `x ∈ E_a`, `y ∈ E_b`.
    pub fn product(&self, a: Arrow, b: Arrow, x: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
        let ab = self.groupoid.compose(a, b).expect("composable arrows");
        let (da, db, dab) = (self.dims[a], self.dims[b], self.dims[ab]);
        let table = &self.mult[a * self.groupoid.len() + b];
        let mut out = vec![ZERO; dab];
        for (i, &xi) in x.iter().enumerate() {
            if xi == ZERO {
                continue;
            }
            for (j, &yj) in y.iter().enumerate() {
                if yj == ZERO {
                    continue;
                }
                let w = xi * yj;
                for (k, o) in out.iter_mut().enumerate() {
                    *o += table[k * da * db + i * db + j] * w;
                }
            }
        }
        out
    }

    pub fn star(&self, g: Arrow, x: &[Complex64]) -> Vec<Complex64> {
        let conj = DVector::from_iterator(x.len(), x.iter().map(|v| v.conj()));
        (&self.involution[g] * conj).iter().copied().collect()
    }

    pub fn trace(&self, unit: Arrow, x: &[Complex64]) -> Complex64 {
        self.traces[unit].iter().zip(x).map(|(t, v)| t * v).sum()
    }

    fn basis_vector(&self, g: Arrow, i: usize) -> Vec<Complex64> {
        let mut v = vec![ZERO; self.dims[g]];
        v[i] = Complex64::new(1.0, 0.0);
        v
    }

    /// `G[i][j] = τ_{s(β)}((e_i^β)* e_j^β)`.
    fn gram(&self, beta: Arrow) -> DMatrix<Complex64> {
        let d = self.dims[beta];
        let inv = self.groupoid.inverse(beta);
        let src = self.groupoid.source(beta);
        DMatrix::from_fn(d, d, |i, j| {
            let ei_star = self.star(beta, &self.basis_vector(beta, i));
            let p = self.product(inv, beta, &ei_star, &self.basis_vector(beta, j));
            self.trace(src, &p)
        })
    }

    fn check_laws(&self, tol: Tolerance) -> Result<(), BundleError> {
        let g = &self.groupoid;
        let law = |law, witness: Vec<Arrow>, residual| BundleError::AbstractLaw { law, witness, residual };
        let dist = |x: &[Complex64], y: &[Complex64]| -> f64 {
            x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
        };
        let scale = |x: &[Complex64]| x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();

        for a in g.arrows() {
            let inv = g.inverse(a);
            for i in 0..self.dims[a] {
                let e = self.basis_vector(a, i);
                let back = self.star(inv, &self.star(a, &e));
                let r = dist(&back, &e);
                if !tol.accepts(r, 1.0) {
                    return Err(law("e** = e", vec![a], r));
                }
            }
        }
        for (a, b) in g.composable_pairs() {
            let ab = g.compose(a, b).expect("composable");
            for i in 0..self.dims[a] {
                for j in 0..self.dims[b] {
                    let (x, y) = (self.basis_vector(a, i), self.basis_vector(b, j));
                    let lhs = self.star(ab, &self.product(a, b, &x, &y));
                    let rhs = self.product(g.inverse(b), g.inverse(a), &self.star(b, &y), &self.star(a, &x));
                    let r = dist(&lhs, &rhs);
                    if !tol.accepts(r, scale(&lhs)) {
                        return Err(law("(xy)* = y*x*", vec![a, b], r));
                    }
                }
            }
            for c in g.arrows_with_range(g.source(b)) {
                let bc = g.compose(b, c).expect("composable");
                for i in 0..self.dims[a] {
                    for j in 0..self.dims[b] {
                        let xy = self.product(a, b, &self.basis_vector(a, i), &self.basis_vector(b, j));
                        for k in 0..self.dims[c] {
                            let z = self.basis_vector(c, k);
                            let lhs = self.product(ab, c, &xy, &z);
                            let yz = self.product(b, c, &self.basis_vector(b, j), &z);
                            let rhs = self.product(a, bc, &self.basis_vector(a, i), &yz);
                            let r = dist(&lhs, &rhs);
                            if !tol.accepts(r, scale(&lhs)) {
                                return Err(law("associativity", vec![a, b, c], r));
                            }
                        }
                    }
                }
            }
        }
        for &x in g.units() {
            if self.dims[x] == 0 {
                continue;
            }
            let gram = self.gram(x);
            let ev = matrixcore::hermitian_eigenvalues(&gram)?;
            let top = ev.last().copied().unwrap_or(0.0);
            let herm = frobenius_norm(&(&gram - gram.adjoint()));
            if ev[0] <= tol.threshold(top) || !tol.accepts(herm, top) {
                return Err(BundleError::TraceNotFaithful(x));
            }
        }
        Ok(())
    }
}

/// A concretized bundle together with the images of the abstract bases.
#[derive(Debug, Clone)]
pub struct Concretized {
    pub bundle: ConcreteFellBundle,
    /// `images[γ][i]` is the matrix of `e_i^γ`.
    pub images: Vec<Vec<ComplexMatrix>>,
    /// Largest defect of `ρ(xy) = ρ(x)ρ(y)` and `ρ(x*) = ρ(x)*` on bases.
    pub intertwining_residual: f64,
}

impl Concretized {
    /// Matrix of the element with the given coefficients in `E_γ`.
    pub fn element(&self, g: Arrow, coeffs: &[Complex64]) -> ComplexMatrix {
        let (r, c) = self.bundle.fiber_shape(g);
        let mut out = matrixcore::zeros(r, c);
        for (img, &x) in self.images[g].iter().zip(coeffs) {
            out += img * x;
        }
        out
    }
}

/// Realizes an abstract bundle by left multiplication.
///
/// For each unit `x`, `W_x = ⊕_{r(β)=x} E_β` with the inner product
/// `Σ_β τ_{s(β)}(c_β* d_β)`; an element `e ∈ E_α` becomes the operator
/// `W_{s(α)} -> W_{r(α)}`, `c_β ↦ e c_β`, written in orthonormal coordinates.
pub fn concretize(e: &AbstractFellBundle, tol: Tolerance) -> Result<Concretized, BundleError> {
    let g = e.groupoid();
    let n = g.len();

    // orthonormal coordinates y = L* c with G = L L*
    let mut chol_l = Vec::with_capacity(n);
    for beta in g.arrows() {
        if e.dims[beta] == 0 {
            chol_l.push(DMatrix::zeros(0, 0));
            continue;
        }
        let gram = e.gram(beta);
        let herm = (&gram + gram.adjoint()).scale(0.5);
        let l = Cholesky::new(herm)
            .ok_or(BundleError::TraceNotFaithful(g.source(beta)))?
            .unpack();
        chol_l.push(l);
    }
    let l_adj: Vec<DMatrix<Complex64>> = chol_l.iter().map(|l| l.adjoint()).collect();
    let l_adj_inv: Vec<DMatrix<Complex64>> = l_adj
        .iter()
        .enumerate()
        .map(|(beta, m)| {
            if m.is_empty() {
                Ok(m.clone())
            } else {
                m.clone().try_inverse().ok_or(BundleError::TraceNotFaithful(g.source(beta)))
            }
        })
        .collect::<Result<_, _>>()?;

    // block offsets inside W_x
    let mut offset = vec![0; n];
    let mut unit_dims = vec![0; n];
    for &x in g.units() {
        let mut off = 0;
        for beta in g.arrows_with_range(x) {
            offset[beta] = off;
            off += e.dims[beta];
        }
        unit_dims[x] = off;
    }

    let mut images = Vec::with_capacity(n);
    let mut fibers = Vec::with_capacity(n);
    for alpha in g.arrows() {
        let rows = unit_dims[g.range(alpha)];
        let cols = unit_dims[g.source(alpha)];
        let mut mats = Vec::with_capacity(e.dims[alpha]);
        for i in 0..e.dims[alpha] {
            let mut m = matrixcore::zeros(rows, cols);
            let x = e.basis_vector(alpha, i);
            for beta in g.arrows_with_range(g.source(alpha)) {
                let gamma = g.compose(alpha, beta).expect("composable");
                let (db, dg) = (e.dims[beta], e.dims[gamma]);
                if db == 0 || dg == 0 {
                    continue;
                }
                let mut t = DMatrix::<Complex64>::zeros(dg, db);
                for j in 0..db {
                    let col = e.product(alpha, beta, &x, &e.basis_vector(beta, j));
                    for (k, v) in col.into_iter().enumerate() {
                        t[(k, j)] = v;
                    }
                }
                let block = &l_adj[gamma] * t * &l_adj_inv[beta];
                m.view_mut((offset[gamma], offset[beta]), (dg, db)).copy_from(&block);
            }
            mats.push(m);
        }
        let span = MatrixSubspace::span(rows, cols, &mats, tol)?;
        if span.dim() != e.dims[alpha] {
            return Err(BundleError::RepresentationNotInjective(alpha));
        }
        fibers.push(span);
        images.push(mats);
    }

    let bundle = ConcreteFellBundle::from_parts(g.clone(), unit_dims.clone(), fibers)?;

    let mut residual: f64 = 0.0;
    for (a, b) in g.composable_pairs() {
        let ab = g.compose(a, b).expect("composable");
        for i in 0..e.dims[a] {
            for j in 0..e.dims[b] {
                let coeffs = e.product(a, b, &e.basis_vector(a, i), &e.basis_vector(b, j));
                let mut expected = matrixcore::zeros(unit_dims[g.range(ab)], unit_dims[g.source(ab)]);
                for (img, &c) in images[ab].iter().zip(&coeffs) {
                    expected += img * c;
                }
                let got = &images[a][i] * &images[b][j];
                residual = residual.max(frobenius_norm(&(got - expected)));
            }
        }
    }
    for a in g.arrows() {
        let inv = g.inverse(a);
        for i in 0..e.dims[a] {
            let coeffs = e.star(a, &e.basis_vector(a, i));
            let mut expected = matrixcore::zeros(unit_dims[g.range(inv)], unit_dims[g.source(inv)]);
            for (img, &c) in images[inv].iter().zip(&coeffs) {
                expected += img * c;
            }
            residual = residual.max(frobenius_norm(&(images[a][i].adjoint() - expected)));
        }
    }

    super::validate_fell_bundle(&bundle, tol)?;
    Ok(Concretized {
        bundle,
        images,
        intertwining_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groupoid::{cyclic_table, from_group, trivial};
    use crate::matrixcore::c;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn z2_group_algebra() -> AbstractFellBundle {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        AbstractFellBundle::from_fn(
            z2,
            vec![1, 1],
            |_, _, _, _| vec![c(1.0, 0.0)],
            |_, _| vec![c(1.0, 0.0)],
            |_, _| c(1.0, 0.0),
            tol(),
        )
        .unwrap()
    }

    #[test]
    fn regular_representation_of_z2() {
        let conc = concretize(&z2_group_algebra(), tol()).unwrap();
        assert_eq!(conc.bundle.unit_dim(0), 2);
        // e acts as the identity, g as the swap on W_e = E_e ⊕ E_g
        let id = &conc.images[0][0];
        let swap = &conc.images[1][0];
        assert!((id - matrixcore::identity(2)).norm() < 1e-12);
        let expected = crate::matrixcore::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!((swap - expected).norm() < 1e-12);
        assert!(conc.intertwining_residual < 1e-12);
    }

    #[test]
    fn one_point_scalars() {
        let t = trivial(1);
        let a = AbstractFellBundle::from_fn(
            t,
            vec![1],
            |_, _, _, _| vec![c(1.0, 0.0)],
            |_, _| vec![c(1.0, 0.0)],
            |_, _| c(1.0, 0.0),
            tol(),
        )
        .unwrap();
        let conc = concretize(&a, tol()).unwrap();
        assert_eq!(conc.bundle.fiber_shape(0), (1, 1));
    }

    #[test]
    fn unfaithful_trace_is_rejected() {
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let err = AbstractFellBundle::from_fn(
            z2,
            vec![1, 1],
            |_, _, _, _| vec![c(1.0, 0.0)],
            |_, _| vec![c(1.0, 0.0)],
            |_, _| c(0.0, 0.0),
            tol(),
        )
        .unwrap_err();
        assert_eq!(err, BundleError::TraceNotFaithful(0));
    }

    #[test]
    fn non_associative_constants_are_rejected() {
        // e_g e_g = -e, e_e e_g = e_g, but e_g e_e = -e_g: breaks (g e) g = g (e g)
        let z2 = from_group(&cyclic_table(2)).unwrap();
        let err = AbstractFellBundle::from_fn(
            z2,
            vec![1, 1],
            |a, b, _, _| {
                if a == 1 && b == 0 {
                    vec![c(-1.0, 0.0)]
                } else {
                    vec![c(1.0, 0.0)]
                }
            },
            |_, _| vec![c(1.0, 0.0)],
            |_, _| c(1.0, 0.0),
            tol(),
        )
        .unwrap_err();
        assert!(matches!(err, BundleError::AbstractLaw { .. }));
    }
}
