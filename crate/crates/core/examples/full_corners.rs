//! Complementary full corners from a full morphism onto Δ, and the
//! resulting certificate.

use fellbundle::bimodule::{Bimodule, FinDimCStar};
use fellbundle::fellbundle::compacts_bundle;
use fellbundle::groupoid::{delta, find_isomorphism};
use fellbundle::matrixcore::Tolerance;
use fellbundle::morita::{linking_algebra, morita_via_full_morphism};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();

    let link = linking_algebra(&Bimodule::identity(&FinDimCStar::matrix_algebra(2)), tol)?;
    println!("linking algebra of M2: dim {}, corners {:?}", link.image.dim(), link.certificate.corner_dims);

    let e = compacts_bundle(&[1, 2], tol)?;
    let phi = find_isomorphism(e.groupoid(), &delta()).expect("pair(2) is Δ");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eq = morita_via_full_morphism(&phi, &e, 50, &mut rng, tol)?;
    println!(
        "compacts (1, 2): ambient {}, corners {:?}, restricted algebras {:?}",
        eq.ambient_dim, eq.certificate.corner_dims, eq.restricted_dims
    );
    println!("witnesses for corner 0: {:?}", eq.certificate.witnesses[0]);

    let check = eq.certificate.check(tol)?;
    println!("certificate re-verified: {}", check.passes());
    println!("certificate JSON: {} bytes", serde_json::to_string(&eq.certificate)?.len());
    Ok(())
}
