//! Stabilization: the bundle D over Γ x Δ, the action σ on K(V), and the
//! equivalence between C*_r(E) and C*_r(Γ ×_σ K(V)).

use fellbundle::fellbundle::line_bundle;
use fellbundle::groupoid::{cyclic_table, from_group};
use fellbundle::matrixcore::Tolerance;
use fellbundle::morita::{build_d_bundle, derive_action_sigma, stabilization_equivalence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let z2 = from_group(&cyclic_table(2))?;
    let e = line_bundle(&z2, tol)?;

    let sigma = derive_action_sigma(&e, tol)?;
    println!("σ residual {:.1e}", sigma.max_residual());
    let k = &sigma.action.algebra(0).basis()[1];
    println!("σ_g on a basis element of K(V):\n{:.3}", sigma.action.apply(1, k));

    let d = build_d_bundle(&e, tol)?;
    let dims: Vec<_> = d.bundle.fibers().iter().map(|f| f.dim()).collect();
    println!("D fiber dims over Z/2 x Δ: {dims:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = stabilization_equivalence(&e, 50, &mut rng, tol)?;
    println!(
        "ambient {}, corners {:?}, F ≅ Γ ×_σ K(V): {}",
        s.equivalence.ambient_dim,
        s.equivalence.certificate.corner_dims,
        s.semidirect.passes(tol)
    );
    Ok(())
}
