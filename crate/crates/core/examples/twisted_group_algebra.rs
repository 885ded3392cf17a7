//! The Klein four group twisted by a nontrivial 2-cocycle: the unitaries
//! for the two generators anticommute and the reduced algebra is M2.

use fellbundle::csalgebra::{algebra_image, convolve, Section};
use fellbundle::fellbundle::{from_cocycle, Cocycle};
use fellbundle::groupoid;
use fellbundle::matrixcore::Tolerance;
use num_complex::Complex64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tol = Tolerance::default();
    let table: Vec<Vec<usize>> = (0..4).map(|x| (0..4).map(|y| x ^ y).collect()).collect();
    let v4 = groupoid::from_group(&table)?;
    let sigma = Cocycle::from_fn(v4, |x, y| {
        Complex64::new(if (x & 1) * (y >> 1) == 1 { -1.0 } else { 1.0 }, 0.0)
    });
    sigma.check(tol)?;
    let e = from_cocycle(&sigma, tol)?;

    let u = Section::single(&e, 1, e.fiber(1).basis()[0].clone(), tol)?;
    let v = Section::single(&e, 2, e.fiber(2).basis()[0].clone(), tol)?;
    let uv = convolve(&u, &v)?;
    let vu = convolve(&v, &u)?;
    println!("|uv + vu| = {:.2e}", uv.add(&vu)?.max_entry_norm());

    let image = algebra_image(&e, tol)?;
    println!("dim {} center {}", image.dim(), image.center_dim(tol));

    let trivial = from_cocycle(&Cocycle::trivial(sigma.groupoid().clone()), tol)?;
    let image = algebra_image(&trivial, tol)?;
    println!("untwisted: dim {} center {}", image.dim(), image.center_dim(tol));
    Ok(())
}
