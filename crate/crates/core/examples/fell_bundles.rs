//! Building Fell bundles from the standard constructions and checking the
//! axioms on random fiber elements.

use fellbundle::bimodule::{Bimodule, FinDimCStar};
use fellbundle::fellbundle::{
    compacts_bundle, from_bimodule, line_bundle, over_trivial, pullback, spot_check, validate_fell_bundle,
    ConcreteFellBundle,
};
use fellbundle::groupoid::{self, GroupoidMorphism};
use fellbundle::matrixcore::Tolerance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(name: &str, e: &ConcreteFellBundle, rng: &mut ChaCha8Rng) -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let v = validate_fell_bundle(e, tol)?;
    let s = spot_check(e, 100, rng)?;
    let dims: Vec<_> = e.fibers().iter().map(|f| f.dim()).collect();
    println!(
        "{name:<28} fibers {dims:?} saturated {} C*-identity {:.1e} ok {}",
        v.saturated,
        s.max_cstar_identity,
        s.passes(tol)
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let m2 = FinDimCStar::matrix_algebra(2);
    report("M2 ⊕ C over two points", &over_trivial(&[m2.clone(), FinDimCStar::scalars()], tol)?, &mut rng)?;
    report("M2 as M2-M2 bimodule", &from_bimodule(&Bimodule::identity(&m2), tol)?, &mut rng)?;
    report("compacts (1, 2, 1)", &compacts_bundle(&[1, 2, 1], tol)?, &mut rng)?;

    let z2 = groupoid::from_group(&groupoid::cyclic_table(2))?;
    let z4 = groupoid::from_group(&groupoid::cyclic_table(4))?;
    let line = line_bundle(&z2, tol)?;
    report("Z/2 line bundle", &line, &mut rng)?;
    let j = GroupoidMorphism::new(z4, z2, vec![0, 1, 0, 1])?;
    report("pulled back to Z/4", &pullback(&j, &line, tol)?, &mut rng)?;
    Ok(())
}
