//! Hilbert modules over finite-dimensional C*-algebras: balanced tensor
//! products and compact operators.

use fellbundle::bimodule::{balanced_tensor, compacts, compacts_chain, identify_compacts, Bimodule, FinDimCStar, HilbertModule};
use fellbundle::matrixcore::{MatrixSubspace, Tolerance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let m3 = FinDimCStar::matrix_algebra(3);

    // C^3 as a right M3-module is the row space; M3 acts on columns
    let row = HilbertModule::new(MatrixSubspace::full(1, 3), m3.clone(), tol)?;
    let col = Bimodule::new(m3.clone(), HilbertModule::column(3), tol)?;
    let t = balanced_tensor(&row, &col, tol)?;
    println!("C^3 ⊗_M3 C^3: dim {} (Gram min eigenvalue {:.2e})", t.dim(), t.quotient_min_eigenvalue());

    let b = FinDimCStar::block_diagonal(&[1, 2]);
    let u = HilbertModule::over_itself(&b);
    println!("K(B) for B = C ⊕ M2: dim {}", compacts(&u, &u, tol)?.dim());

    let chain = compacts_chain(&u, &Bimodule::identity(&b), tol)?;
    println!(
        "K(U ⊗ V) = {} vs K(U) = {}, residual {:.1e}",
        chain.tensor_compacts_dim, chain.left_compacts_dim, chain.homomorphism_residual
    );

    let id = identify_compacts(&HilbertModule::column(3), &HilbertModule::column(3), tol)?;
    println!("C^3 ⊗ C^3* -> K(C^3): {} -> {}", id.tensor.dim(), id.compacts.dim());
    Ok(())
}
