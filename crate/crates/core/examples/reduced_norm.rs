//! Sections, convolution and the reduced norm, with the conditional
//! expectation onto the unit fibers.

use fellbundle::csalgebra::{check_expectation, convolve, involute, l2_norm, operator_norm, sup_norm, Section};
use fellbundle::fellbundle::line_bundle;
use fellbundle::groupoid::pair_groupoid;
use fellbundle::matrixcore::Tolerance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = line_bundle(&pair_groupoid(3)?, tol)?;

    let f = Section::random(&e, &mut rng);
    let ff = convolve(&involute(&f), &f)?;
    let (n, n2) = (operator_norm(&f, tol)?, operator_norm(&ff, tol)?);
    println!("|f|_inf {:.4}  |f|_2 {:.4}  |f| {:.4}", sup_norm(&f), l2_norm(&f), n);
    println!("|f*f| - |f|^2 = {:.2e}", n2 - n * n);

    let r = check_expectation(&e, 200, &mut rng, tol)?;
    println!("{r:#?}");
    println!("passes: {}", r.passes(tol));
    Ok(())
}
