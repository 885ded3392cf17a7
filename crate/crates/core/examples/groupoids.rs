//! Finite groupoids: the two-point groupoid Δ, pair groupoids, products
//! and full morphisms onto Δ.

use fellbundle::groupoid::{self, delta, find_isomorphism, pair_groupoid, product_with_delta, subgroupoid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = delta();
    println!("Δ: {} arrows, units {:?}, transitive: {}", d.len(), d.units(), d.is_transitive());

    let p = pair_groupoid(3)?;
    println!("pair groupoid on 3 points: {} arrows, principal: {}", p.len(), p.is_principal());
    let (x, y) = (1, 5);
    println!("({}) . ({}) = ({})", p.label(x), p.label(y), p.label(p.compose(x, y).expect("composable")));

    let z3 = groupoid::from_group(&groupoid::cyclic_table(3))?;
    let (prod, proj) = product_with_delta(&z3);
    println!("Z/3 x Δ: {} arrows, projection full: {}", prod.len(), proj.is_full()?);
    let (sheet, _) = subgroupoid(&prod, &proj.preimage(groupoid::DELTA_UNIT_0))?;
    println!("preimage of unit 0: {} arrows", sheet.len());

    let p2 = pair_groupoid(2)?;
    let phi = find_isomorphism(&p2, &d).expect("pair(2) is Δ");
    println!("pair(2) -> Δ: {:?}", phi.table());
    Ok(())
}
