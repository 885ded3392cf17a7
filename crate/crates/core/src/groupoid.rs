//! Finite groupoids as dense integer tables.
//!
//! Arrows are `0..n`; the units are a sorted subset. Composition is an eager
//! `n x n` table, so composability is a lookup and every axiom can be checked
//! exhaustively. Every subset of a finite discrete groupoid is open, so the
//! "open" qualifiers on Γ-sets and subgroupoids carry no extra condition here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Arrow = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupoidError {
    #[error("table `{table}` has length {found}, expected {expected}")]
    TableLength {
        table: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("index {index} out of range in `{table}`")]
    IndexOutOfRange { table: &'static str, index: usize },
    #[error("unit axioms fail at unit {0}")]
    BadUnit(Arrow),
    #[error("inverse axioms fail at arrow {0}")]
    BadInverse(Arrow),
    #[error("composition table disagrees with range/source at pair ({0}, {1})")]
    ComposabilityMismatch(Arrow, Arrow),
    #[error("associativity fails on ({0}, {1}, {2})")]
    NonAssociative(Arrow, Arrow, Arrow),
    #[error("not a group: {0}")]
    NotAGroup(String),
    #[error("pair groupoid needs at least one point")]
    EmptyPairGroupoid,
    #[error("arrow set is not a subgroupoid: {0:?}")]
    NotClosed(ClosureWitness),
    #[error("codomain is not the two-point transitive groupoid")]
    NotDelta,
    #[error("map is not a groupoid morphism: {reason} (arrow {arrow})")]
    NotAMorphism { reason: &'static str, arrow: Arrow },
}

/// Which closure condition a candidate subgroupoid violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureWitness {
    MissingUnit { arrow: Arrow, unit: Arrow },
    MissingInverse(Arrow),
    MissingProduct(Arrow, Arrow),
}

/// The on-disk groupoid format. `compose` lists the composable triples
/// `a . b = c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGroupoid {
    pub arrows: usize,
    pub units: Vec<Arrow>,
    pub range: Vec<Arrow>,
    pub source: Vec<Arrow>,
    pub inverse: Vec<Arrow>,
    pub compose: Vec<[Arrow; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteGroupoid {
    units: Vec<Arrow>,
    is_unit: Vec<bool>,
    range: Vec<Arrow>,
    source: Vec<Arrow>,
    inverse: Vec<Arrow>,
    compose: Vec<Option<Arrow>>,
    labels: Vec<String>,
}

impl FiniteGroupoid {
    /// Validates raw tables, reporting the first violated axiom.
    pub fn validate(raw: &RawGroupoid) -> Result<Self, GroupoidError> {
        let n = raw.arrows;
        for (table, t) in [("range", &raw.range), ("source", &raw.source), ("inverse", &raw.inverse)] {
            if t.len() != n {
                return Err(GroupoidError::TableLength {
                    table,
                    expected: n,
                    found: t.len(),
                });
            }
            if let Some(&index) = t.iter().find(|&&a| a >= n) {
                return Err(GroupoidError::IndexOutOfRange { table, index });
            }
        }
        if let Some(&index) = raw.units.iter().find(|&&a| a >= n) {
            return Err(GroupoidError::IndexOutOfRange { table: "units", index });
        }
        let mut is_unit = vec![false; n];
        for &u in &raw.units {
            is_unit[u] = true;
        }
        let mut units: Vec<Arrow> = raw.units.clone();
        units.sort_unstable();
        units.dedup();

        for &x in &units {
            if raw.range[x] != x || raw.source[x] != x {
                return Err(GroupoidError::BadUnit(x));
            }
        }
        for g in 0..n {
            if !is_unit[raw.range[g]] {
                return Err(GroupoidError::BadUnit(raw.range[g]));
            }
            if !is_unit[raw.source[g]] {
                return Err(GroupoidError::BadUnit(raw.source[g]));
            }
        }

        let mut compose = vec![None; n * n];
        for &[a, b, ab] in &raw.compose {
            for index in [a, b, ab] {
                if index >= n {
                    return Err(GroupoidError::IndexOutOfRange { table: "compose", index });
                }
            }
            if raw.source[a] != raw.range[b] || compose[a * n + b].is_some() {
                return Err(GroupoidError::ComposabilityMismatch(a, b));
            }
            compose[a * n + b] = Some(ab);
        }
        for a in 0..n {
            for b in 0..n {
                if raw.source[a] == raw.range[b] && compose[a * n + b].is_none() {
                    return Err(GroupoidError::ComposabilityMismatch(a, b));
                }
            }
        }

        let labels = match &raw.labels {
            Some(l) if l.len() == n => l.clone(),
            Some(l) => {
                return Err(GroupoidError::TableLength {
                    table: "labels",
                    expected: n,
                    found: l.len(),
                })
            }
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        let g = Self {
            units,
            is_unit,
            range: raw.range.clone(),
            source: raw.source.clone(),
            inverse: raw.inverse.clone(),
            compose,
            labels,
        };

        for a in 0..n {
            if g.compose(g.range[a], a) != Some(a) {
                return Err(GroupoidError::BadUnit(g.range[a]));
            }
            if g.compose(a, g.source[a]) != Some(a) {
                return Err(GroupoidError::BadUnit(g.source[a]));
            }
        }
        for a in 0..n {
            let inv = g.inverse[a];
            if g.compose(a, inv) != Some(g.range[a]) || g.compose(inv, a) != Some(g.source[a]) {
                return Err(GroupoidError::BadInverse(a));
            }
        }
        for a in 0..n {
            for b in 0..n {
                if let Some(ab) = g.compose(a, b) {
                    if g.range[ab] != g.range[a] || g.source[ab] != g.source[b] {
                        return Err(GroupoidError::ComposabilityMismatch(a, b));
                    }
                }
            }
        }
        for (a, b) in g.composable_pairs() {
            let ab = g.compose(a, b).expect("composable");
            for c in g.arrows_with_range(g.source[b]) {
                let bc = g.compose(b, c).expect("composable");
                if g.compose(ab, c) != g.compose(a, bc) {
                    return Err(GroupoidError::NonAssociative(a, b, c));
                }
            }
        }
        Ok(g)
    }

    pub fn to_raw(&self) -> RawGroupoid {
        let numeric = self.labels.iter().enumerate().all(|(i, l)| *l == i.to_string());
        RawGroupoid {
            arrows: self.len(),
            units: self.units.clone(),
            range: self.range.clone(),
            source: self.source.clone(),
            inverse: self.inverse.clone(),
            compose: self
                .composable_pairs()
                .map(|(a, b)| [a, b, self.compose(a, b).expect("composable")])
                .collect(),
            labels: if numeric { None } else { Some(self.labels.clone()) },
        }
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn arrows(&self) -> std::ops::Range<Arrow> {
        0..self.len()
    }

    pub fn units(&self) -> &[Arrow] {
        &self.units
    }

    pub fn is_unit(&self, a: Arrow) -> bool {
        self.is_unit[a]
    }

    pub fn range(&self, a: Arrow) -> Arrow {
        self.range[a]
    }

    pub fn source(&self, a: Arrow) -> Arrow {
        self.source[a]
    }

    pub fn inverse(&self, a: Arrow) -> Arrow {
        self.inverse[a]
    }

    pub fn label(&self, a: Arrow) -> &str {
        &self.labels[a]
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.len());
        self.labels = labels;
        self
    }

    pub fn is_composable(&self, a: Arrow, b: Arrow) -> bool {
        self.source[a] == self.range[b]
    }

    pub fn compose(&self, a: Arrow, b: Arrow) -> Option<Arrow> {
        self.compose[a * self.len() + b]
    }

    pub fn composable_pairs(&self) -> impl Iterator<Item = (Arrow, Arrow)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |a| (0..n).filter(move |&b| self.is_composable(a, b)).map(move |b| (a, b)))
    }

    pub fn arrows_with_source(&self, x: Arrow) -> impl Iterator<Item = Arrow> + '_ {
        self.arrows().filter(move |&a| self.source[a] == x)
    }

    pub fn arrows_with_range(&self, x: Arrow) -> impl Iterator<Item = Arrow> + '_ {
        self.arrows().filter(move |&a| self.range[a] == x)
    }

    /// True if `Γ = Γ⁰`.
    pub fn is_trivial(&self) -> bool {
        self.units.len() == self.len()
    }

    /// No arrows besides units with equal range and source.
    pub fn is_principal(&self) -> bool {
        self.arrows().all(|a| self.is_unit[a] || self.range[a] != self.source[a])
    }

    /// Single orbit on the unit space.
    pub fn is_transitive(&self) -> bool {
        match self.units.first() {
            None => true,
            Some(&x) => self
                .units
                .iter()
                .all(|&y| self.arrows().any(|a| self.source[a] == x && self.range[a] == y)),
        }
    }

    /// The two-point transitive equivalence relation, in any indexing.
    pub fn is_delta(&self) -> bool {
        self.len() == 4
            && self.units.len() == 2
            && self.units.iter().all(|&x| {
                self.units.iter().all(|&y| {
                    self.arrows().filter(|&a| self.source[a] == x && self.range[a] == y).count() == 1
                })
            })
    }

    /// Position of a unit in the sorted unit list.
    pub fn unit_index(&self, x: Arrow) -> Option<usize> {
        self.units.binary_search(&x).ok()
    }
}

fn build(
    n: usize,
    units: Vec<Arrow>,
    range: Vec<Arrow>,
    source: Vec<Arrow>,
    inverse: Vec<Arrow>,
    compose: impl Fn(Arrow, Arrow) -> Arrow,
    labels: Vec<String>,
) -> Result<FiniteGroupoid, GroupoidError> {
    let mut triples = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if source[a] == range[b] {
                triples.push([a, b, compose(a, b)]);
            }
        }
    }
    FiniteGroupoid::validate(&RawGroupoid {
        arrows: n,
        units,
        range,
        source,
        inverse,
        compose: triples,
        labels: Some(labels),
    })
}

pub const DELTA_UNIT_0: Arrow = 0;
pub const DELTA_UNIT_1: Arrow = 1;
/// `δ`, from unit 0 to unit 1.
pub const DELTA: Arrow = 2;
/// `δ*`, from unit 1 to unit 0.
pub const DELTA_STAR: Arrow = 3;

/// `Δ = {0, 1, δ, δ*}` with `s(δ) = 0`, `r(δ) = 1`.
pub fn delta() -> FiniteGroupoid {
    // each arrow is determined by its (range, source) pair
    let ends = [(0, 0), (1, 1), (1, 0), (0, 1)];
    let arrow = |r: usize, s: usize| ends.iter().position(|&e| e == (r, s)).expect("pair");
    build(
        4,
        vec![DELTA_UNIT_0, DELTA_UNIT_1],
        ends.iter().map(|&(r, _)| r).collect(),
        ends.iter().map(|&(_, s)| s).collect(),
        ends.iter().map(|&(r, s)| arrow(s, r)).collect(),
        |a, b| arrow(ends[a].0, ends[b].1),
        vec!["0".into(), "1".into(), "δ".into(), "δ*".into()],
    )
    .expect("Δ is a groupoid")
}

/// A group, given by its multiplication table, as a one-unit groupoid.
pub fn from_group(table: &[Vec<usize>]) -> Result<FiniteGroupoid, GroupoidError> {
    let n = table.len();
    let bad = |why: String| GroupoidError::NotAGroup(why);
    if n == 0 {
        return Err(bad("empty table".into()));
    }
    for row in table {
        if row.len() != n || row.iter().any(|&c| c >= n) {
            return Err(bad("table is not closed".into()));
        }
    }
    let e = (0..n)
        .find(|&e| (0..n).all(|a| table[e][a] == a && table[a][e] == a))
        .ok_or_else(|| bad("no identity".into()))?;
    let mut inverse = vec![0; n];
    for a in 0..n {
        inverse[a] = (0..n)
            .find(|&b| table[a][b] == e && table[b][a] == e)
            .ok_or_else(|| bad(format!("element {a} has no inverse")))?;
    }
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                if table[table[a][b]][c] != table[a][table[b][c]] {
                    return Err(bad(format!("not associative at ({a}, {b}, {c})")));
                }
            }
        }
    }
    build(
        n,
        vec![e],
        vec![e; n],
        vec![e; n],
        inverse,
        |a, b| table[a][b],
        (0..n).map(|i| i.to_string()).collect(),
    )
}

/// Multiplication table of `Z/n`.
pub fn cyclic_table(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect()
}

/// `X x X` on `n` points; arrow `(x, y)` has index `x * n + y`, range `x`,
/// source `y`.
pub fn pair_groupoid(n: usize) -> Result<FiniteGroupoid, GroupoidError> {
    if n == 0 {
        return Err(GroupoidError::EmptyPairGroupoid);
    }
    let idx = |x: usize, y: usize| x * n + y;
    let arrows = n * n;
    build(
        arrows,
        (0..n).map(|x| idx(x, x)).collect(),
        (0..arrows).map(|a| idx(a / n, a / n)).collect(),
        (0..arrows).map(|a| idx(a % n, a % n)).collect(),
        (0..arrows).map(|a| idx(a % n, a / n)).collect(),
        |a, b| idx(a / n, b % n),
        (0..arrows).map(|a| format!("({},{})", a / n, a % n)).collect(),
    )
}

/// The trivial groupoid on `n` points.
pub fn trivial(n: usize) -> FiniteGroupoid {
    build(
        n,
        (0..n).collect(),
        (0..n).collect(),
        (0..n).collect(),
        (0..n).collect(),
        |a, _| a,
        (0..n).map(|i| i.to_string()).collect(),
    )
    .expect("trivial groupoid")
}

/// Componentwise product; arrow `(a, b)` has index `a * |right| + b`.
pub fn product(left: &FiniteGroupoid, right: &FiniteGroupoid) -> FiniteGroupoid {
    let m = right.len();
    let n = left.len() * m;
    let pair = |a: Arrow| (a / m, a % m);
    let idx = |a: Arrow, b: Arrow| a * m + b;
    let mut units = Vec::new();
    for &x in left.units() {
        for &y in right.units() {
            units.push(idx(x, y));
        }
    }
    build(
        n,
        units,
        (0..n).map(|a| idx(left.range(pair(a).0), right.range(pair(a).1))).collect(),
        (0..n).map(|a| idx(left.source(pair(a).0), right.source(pair(a).1))).collect(),
        (0..n).map(|a| idx(left.inverse(pair(a).0), right.inverse(pair(a).1))).collect(),
        |a, b| {
            let (a0, a1) = pair(a);
            let (b0, b1) = pair(b);
            idx(
                left.compose(a0, b0).expect("composable"),
                right.compose(a1, b1).expect("composable"),
            )
        },
        (0..n)
            .map(|a| format!("({},{})", left.label(pair(a).0), right.label(pair(a).1)))
            .collect(),
    )
    .expect("product of groupoids")
}

/// `Γ x Δ` and the projection onto `Δ`. Arrow `(γ, d)` has index `4γ + d`.
pub fn product_with_delta(g: &FiniteGroupoid) -> (FiniteGroupoid, GroupoidMorphism) {
    let d = delta();
    let prod = product(g, &d);
    let map = prod.arrows().map(|a| a % 4).collect();
    let proj = GroupoidMorphism::new(prod.clone(), d, map).expect("projection is a morphism");
    (prod, proj)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupoidMorphism {
    domain: FiniteGroupoid,
    codomain: FiniteGroupoid,
    map: Vec<Arrow>,
}

impl GroupoidMorphism {
    pub fn new(domain: FiniteGroupoid, codomain: FiniteGroupoid, map: Vec<Arrow>) -> Result<Self, GroupoidError> {
        if map.len() != domain.len() {
            return Err(GroupoidError::TableLength {
                table: "map",
                expected: domain.len(),
                found: map.len(),
            });
        }
        if let Some(&index) = map.iter().find(|&&a| a >= codomain.len()) {
            return Err(GroupoidError::IndexOutOfRange { table: "map", index });
        }
        let fail = |reason, arrow| Err(GroupoidError::NotAMorphism { reason, arrow });
        for &x in domain.units() {
            if !codomain.is_unit(map[x]) {
                return fail("unit not sent to a unit", x);
            }
        }
        for a in domain.arrows() {
            if map[domain.range(a)] != codomain.range(map[a]) {
                return fail("does not commute with range", a);
            }
            if map[domain.source(a)] != codomain.source(map[a]) {
                return fail("does not commute with source", a);
            }
            if map[domain.inverse(a)] != codomain.inverse(map[a]) {
                return fail("does not commute with inverse", a);
            }
        }
        for (a, b) in domain.composable_pairs() {
            let ab = domain.compose(a, b).expect("composable");
            if codomain.compose(map[a], map[b]) != Some(map[ab]) {
                return fail("not multiplicative", a);
            }
        }
        Ok(Self { domain, codomain, map })
    }

    pub fn identity(g: &FiniteGroupoid) -> Self {
        Self {
            domain: g.clone(),
            codomain: g.clone(),
            map: g.arrows().collect(),
        }
    }

    pub fn domain(&self) -> &FiniteGroupoid {
        &self.domain
    }

    pub fn codomain(&self) -> &FiniteGroupoid {
        &self.codomain
    }

    pub fn apply(&self, a: Arrow) -> Arrow {
        self.map[a]
    }

    pub fn table(&self) -> &[Arrow] {
        &self.map
    }

    pub fn is_bijective(&self) -> bool {
        let mut seen = vec![false; self.codomain.len()];
        for &b in &self.map {
            if seen[b] {
                return false;
            }
            seen[b] = true;
        }
        seen.iter().all(|&s| s)
    }

    /// Every unit of the domain is the source of an arrow mapped off `Δ⁰`.
    pub fn is_full(&self) -> Result<bool, GroupoidError> {
        if !self.codomain.is_delta() {
            return Err(GroupoidError::NotDelta);
        }
        let d = &self.domain;
        Ok(d
            .units()
            .iter()
            .all(|&x| d.arrows_with_source(x).any(|g| !self.codomain.is_unit(self.map[g]))))
    }

    /// `φ⁻¹(target)` as an arrow list, for a unit `target` of the codomain.
    pub fn preimage(&self, target: Arrow) -> Vec<Arrow> {
        self.domain.arrows().filter(|&a| self.map[a] == target).collect()
    }
}

/// Free-function form of [`GroupoidMorphism::is_full`].
pub fn is_full_morphism(phi: &GroupoidMorphism) -> Result<bool, GroupoidError> {
    phi.is_full()
}

/// A subset of the arrows of a groupoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrowSubset<'a> {
    parent: &'a FiniteGroupoid,
    members: Vec<Arrow>,
}

impl<'a> ArrowSubset<'a> {
    pub fn new(parent: &'a FiniteGroupoid, members: impl IntoIterator<Item = Arrow>) -> Result<Self, GroupoidError> {
        let mut members: Vec<Arrow> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if let Some(&index) = members.iter().find(|&&a| a >= parent.len()) {
            return Err(GroupoidError::IndexOutOfRange { table: "subset", index });
        }
        Ok(Self { parent, members })
    }

    pub fn members(&self) -> &[Arrow] {
        &self.members
    }

    /// Range and source are both injective on the subset.
    pub fn is_gamma_set(&self) -> bool {
        let p = self.parent;
        let injective = |f: &dyn Fn(Arrow) -> Arrow| {
            let mut seen = std::collections::BTreeSet::new();
            self.members.iter().all(|&a| seen.insert(f(a)))
        };
        injective(&|a| p.range(a)) && injective(&|a| p.source(a))
    }
}

pub fn is_gamma_set(subset: &ArrowSubset<'_>) -> bool {
    subset.is_gamma_set()
}

/// The subgroupoid on `arrows` together with its inclusion morphism.
pub fn subgroupoid(g: &FiniteGroupoid, arrows: &[Arrow]) -> Result<(FiniteGroupoid, GroupoidMorphism), GroupoidError> {
    let subset = ArrowSubset::new(g, arrows.iter().copied())?;
    let members = subset.members().to_vec();
    let contains = |a: Arrow| members.binary_search(&a).is_ok();
    let position = |a: Arrow| members.binary_search(&a).expect("member");
    for &a in &members {
        for unit in [g.range(a), g.source(a)] {
            if !contains(unit) {
                return Err(GroupoidError::NotClosed(ClosureWitness::MissingUnit { arrow: a, unit }));
            }
        }
        if !contains(g.inverse(a)) {
            return Err(GroupoidError::NotClosed(ClosureWitness::MissingInverse(a)));
        }
    }
    for &a in &members {
        for &b in &members {
            if let Some(ab) = g.compose(a, b) {
                if !contains(ab) {
                    return Err(GroupoidError::NotClosed(ClosureWitness::MissingProduct(a, b)));
                }
            }
        }
    }
    let k = members.len();
    let sub = build(
        k,
        members.iter().filter(|&&a| g.is_unit(a)).map(|&a| position(a)).collect(),
        members.iter().map(|&a| position(g.range(a))).collect(),
        members.iter().map(|&a| position(g.source(a))).collect(),
        members.iter().map(|&a| position(g.inverse(a))).collect(),
        |i, j| position(g.compose(members[i], members[j]).expect("composable")),
        members.iter().map(|&a| g.label(a).to_string()).collect(),
    )?;
    let inclusion = GroupoidMorphism::new(sub.clone(), g.clone(), members)?;
    Ok((sub, inclusion))
}

/// Backtracking search for an isomorphism `a -> b`.
pub fn find_isomorphism(a: &FiniteGroupoid, b: &FiniteGroupoid) -> Option<GroupoidMorphism> {
    if a.len() != b.len() || a.units().len() != b.units().len() {
        return None;
    }
    let mut map = vec![usize::MAX; a.len()];
    let mut used = vec![false; b.len()];
    fn extend(a: &FiniteGroupoid, b: &FiniteGroupoid, map: &mut Vec<Arrow>, used: &mut Vec<bool>, next: usize) -> bool {
        if next == a.len() {
            return GroupoidMorphism::new(a.clone(), b.clone(), map.clone()).is_ok();
        }
        // units first, so range/source of every later arrow are already placed
        let order: Vec<Arrow> = a.units().iter().copied().chain(a.arrows().filter(|&x| !a.is_unit(x))).collect();
        let g = order[next];
        for cand in b.arrows() {
            if used[cand] || a.is_unit(g) != b.is_unit(cand) {
                continue;
            }
            if !a.is_unit(g) && (map[a.range(g)] != b.range(cand) || map[a.source(g)] != b.source(cand)) {
                continue;
            }
            map[g] = cand;
            used[cand] = true;
            if extend(a, b, map, used, next + 1) {
                return true;
            }
            map[g] = usize::MAX;
            used[cand] = false;
        }
        false
    }
    if extend(a, b, &mut map, &mut used, 0) {
        GroupoidMorphism::new(a.clone(), b.clone(), map).ok()
    } else {
        None
    }
}
