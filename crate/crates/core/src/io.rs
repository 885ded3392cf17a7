//! JSON formats. Complex scalars are `[re, im]`; matrices are row-major
//! nested arrays of scalars. Arrow-keyed maps use decimal arrow indices as
//! keys.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bimodule::{Bimodule, BimoduleError, FinDimCStar, HilbertModule};
use crate::fellbundle::{BundleError, Cocycle, ConcreteFellBundle, GroupoidAction};
use crate::groupoid::{self, Arrow, FiniteGroupoid, GroupoidError, GroupoidMorphism, RawGroupoid};
use crate::matrixcore::{ComplexMatrix, MatrixError, MatrixSubspace, Tolerance};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad key `{0}`")]
    BadKey(String),
    #[error("matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error(transparent)]
    Groupoid(#[from] GroupoidError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Bimodule(#[from] BimoduleError),
}

pub type Scalar = [f64; 2];
pub type MatrixJson = Vec<Vec<Scalar>>;

pub fn matrix_to_json(m: &ComplexMatrix) -> MatrixJson {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

/// An empty list is a `0 x 0` matrix; shapes like `k x 0` use
/// [`matrix_from_json_shaped`].
pub fn matrix_from_json(rows: &MatrixJson) -> Result<ComplexMatrix, IoError> {
    let ncols = rows.first().map_or(0, Vec::len);
    matrix_from_json_shaped(rows, rows.len(), ncols)
}

pub fn matrix_from_json_shaped(rows: &MatrixJson, nrows: usize, ncols: usize) -> Result<ComplexMatrix, IoError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(IoError::RaggedMatrix);
    }
    Ok(ComplexMatrix::from_fn(nrows, ncols, |i, j| {
        let [re, im] = rows[i][j];
        Complex64::new(re, im)
    }))
}

/// `serde(with = ...)` adaptor for a single matrix.
pub mod matrix {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_json(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ComplexMatrix, D::Error> {
        let rows = MatrixJson::deserialize(d)?;
        matrix_from_json(&rows).map_err(serde::de::Error::custom)
    }
}

/// `serde(with = ...)` adaptor for a list of matrices.
pub mod matrices {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &[ComplexMatrix], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(matrix_to_json).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ComplexMatrix>, D::Error> {
        let list = Vec::<MatrixJson>::deserialize(d)?;
        list.iter()
            .map(|m| matrix_from_json(m).map_err(serde::de::Error::custom))
            .collect()
    }
}

fn parse_arrow(key: &str) -> Result<Arrow, IoError> {
    key.trim().parse().map_err(|_| IoError::BadKey(key.to_string()))
}

/// `"(a,b)"` or `"a,b"`.
fn parse_pair(key: &str) -> Result<(Arrow, Arrow), IoError> {
    let inner = key.trim().trim_start_matches('(').trim_end_matches(')');
    let (a, b) = inner.split_once(',').ok_or_else(|| IoError::BadKey(key.to_string()))?;
    Ok((parse_arrow(a)?, parse_arrow(b)?))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String), IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let value = serde_json::from_str(&text)?;
    Ok((value, text))
}

pub fn groupoid_from_raw(raw: &RawGroupoid) -> Result<FiniteGroupoid, IoError> {
    Ok(FiniteGroupoid::validate(raw)?)
}

/// A concrete bundle: each fiber is the span of the listed matrices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BundleFile {
    pub groupoid: RawGroupoid,
    pub unit_dims: BTreeMap<String, usize>,
    #[serde(default)]
    pub fibers: BTreeMap<String, Vec<MatrixJson>>,
}

impl BundleFile {
    pub fn from_bundle(e: &ConcreteFellBundle) -> Self {
        let g = e.groupoid();
        Self {
            groupoid: g.to_raw(),
            unit_dims: g.units().iter().map(|&x| (x.to_string(), e.unit_dim(x))).collect(),
            fibers: g
                .arrows()
                .map(|a| (a.to_string(), e.fiber(a).basis().iter().map(matrix_to_json).collect()))
                .collect(),
        }
    }

    /// Builds the candidate without checking the axioms.
    pub fn to_parts(&self, tol: Tolerance) -> Result<ConcreteFellBundle, IoError> {
        let g = groupoid_from_raw(&self.groupoid)?;
        let mut unit_dims = vec![0; g.len()];
        for (k, &n) in &self.unit_dims {
            let x = parse_arrow(k)?;
            if x >= g.len() || !g.is_unit(x) {
                return Err(IoError::BadKey(k.clone()));
            }
            unit_dims[x] = n;
        }
        let mut gens: Vec<Vec<ComplexMatrix>> = vec![Vec::new(); g.len()];
        for (k, list) in &self.fibers {
            let a = parse_arrow(k)?;
            if a >= g.len() {
                return Err(IoError::BadKey(k.clone()));
            }
            let (r, c) = (unit_dims[g.range(a)], unit_dims[g.source(a)]);
            for m in list {
                gens[a].push(matrix_from_json_shaped(m, r, c).map_err(|_| {
                    IoError::Bundle(BundleError::FiberShape {
                        arrow: a,
                        expected: (r, c),
                        found: (m.len(), m.first().map_or(0, Vec::len)),
                    })
                })?);
            }
        }
        let fibers = g
            .arrows()
            .map(|a| MatrixSubspace::span(unit_dims[g.range(a)], unit_dims[g.source(a)], &gens[a], tol))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConcreteFellBundle::from_parts(g, unit_dims, fibers)?)
    }
}

/// A section `{ "bundle": ..., "values": { γ: matrix } }`; missing arrows
/// are zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectionFile {
    pub bundle: BundleFile,
    pub values: BTreeMap<String, MatrixJson>,
}

impl SectionFile {
    pub fn values_for(&self, e: &ConcreteFellBundle) -> Result<Vec<ComplexMatrix>, IoError> {
        let g = e.groupoid();
        let mut out: Vec<ComplexMatrix> = g
            .arrows()
            .map(|a| {
                let (r, c) = e.fiber_shape(a);
                ComplexMatrix::zeros(r, c)
            })
            .collect();
        for (k, m) in &self.values {
            let a = parse_arrow(k)?;
            if a >= g.len() {
                return Err(IoError::BadKey(k.clone()));
            }
            let (r, c) = e.fiber_shape(a);
            out[a] = matrix_from_json_shaped(m, r, c)?;
        }
        Ok(out)
    }
}

/// `{ "groupoid": ..., "cocycle": { "(a,b)": [re, im] } }`; pairs not
/// listed take the value 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocycleFile {
    pub groupoid: RawGroupoid,
    #[serde(default)]
    pub cocycle: BTreeMap<String, Scalar>,
}

impl CocycleFile {
    pub fn to_cocycle(&self) -> Result<Cocycle, IoError> {
        let g = groupoid_from_raw(&self.groupoid)?;
        let mut sigma = Cocycle::trivial(g.clone());
        for (k, &[re, im]) in &self.cocycle {
            let (a, b) = parse_pair(k)?;
            if a >= g.len() || b >= g.len() || !g.is_composable(a, b) {
                return Err(IoError::BadKey(k.clone()));
            }
            sigma.set(a, b, Complex64::new(re, im));
        }
        Ok(sigma)
    }
}

/// A concrete algebra given by generators of its carrier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlgebraJson {
    pub size: usize,
    pub generators: Vec<MatrixJson>,
}

impl AlgebraJson {
    pub fn to_algebra(&self, tol: Tolerance) -> Result<FinDimCStar, IoError> {
        let gens = self
            .generators
            .iter()
            .map(|m| matrix_from_json_shaped(m, self.size, self.size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FinDimCStar::new(self.size, &gens, tol)?)
    }
}

/// An action by unitaries: `α_γ(a) = U_γ a U_γ*`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionFile {
    pub groupoid: RawGroupoid,
    pub algebras: BTreeMap<String, AlgebraJson>,
    pub unitaries: BTreeMap<String, MatrixJson>,
}

impl ActionFile {
    pub fn to_action(&self, tol: Tolerance) -> Result<GroupoidAction, IoError> {
        let g = groupoid_from_raw(&self.groupoid)?;
        let mut algebras = Vec::with_capacity(g.units().len());
        for &x in g.units() {
            let a = self
                .algebras
                .get(&x.to_string())
                .ok_or_else(|| IoError::BadKey(format!("algebra for unit {x}")))?;
            algebras.push(a.to_algebra(tol)?);
        }
        let size = |x: Arrow| algebras[g.unit_index(x).expect("unit")].size();
        let unitaries = g
            .arrows()
            .map(|a| {
                let m = self
                    .unitaries
                    .get(&a.to_string())
                    .ok_or_else(|| IoError::BadKey(format!("unitary for arrow {a}")))?;
                matrix_from_json_shaped(m, size(g.range(a)), size(g.source(a)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GroupoidAction::by_unitaries(g, algebras, &unitaries, tol)?)
    }
}

/// A `B`-`A` bimodule: `left` is `B`, `right` is `A`, and the module is
/// spanned by the given `|B| x |A|` matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BimoduleFile {
    pub left: AlgebraJson,
    pub right: AlgebraJson,
    pub module: Vec<MatrixJson>,
}

impl BimoduleFile {
    pub fn to_bimodule(&self, tol: Tolerance) -> Result<Bimodule, IoError> {
        let b = self.left.to_algebra(tol)?;
        let a = self.right.to_algebra(tol)?;
        let gens = self
            .module
            .iter()
            .map(|m| matrix_from_json_shaped(m, b.size(), a.size()))
            .collect::<Result<Vec<_>, _>>()?;
        let carrier = MatrixSubspace::span(b.size(), a.size(), &gens, tol)?;
        let module = HilbertModule::new(carrier, a, tol)?;
        Ok(Bimodule::new(b, module, tol)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompactsFile {
    pub dims: Vec<usize>,
}

/// A morphism given by its arrow table; the codomain defaults to `Δ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorphismFile {
    #[serde(default)]
    pub domain: Option<RawGroupoid>,
    #[serde(default)]
    pub codomain: Option<RawGroupoid>,
    pub map: Vec<Arrow>,
}

impl MorphismFile {
    pub fn to_morphism(&self, default_domain: &FiniteGroupoid) -> Result<GroupoidMorphism, IoError> {
        let domain = match &self.domain {
            Some(raw) => groupoid_from_raw(raw)?,
            None => default_domain.clone(),
        };
        let codomain = match &self.codomain {
            Some(raw) => groupoid_from_raw(raw)?,
            None => groupoid::delta(),
        };
        Ok(GroupoidMorphism::new(domain, codomain, self.map.clone())?)
    }
}

/// Any file that determines a concrete bundle, recognized by its keys.
#[derive(Debug, Clone)]
pub enum BundleSource {
    Concrete(BundleFile),
    Cocycle(CocycleFile),
    Semidirect(ActionFile),
    Bimodule(BimoduleFile),
    Compacts(CompactsFile),
}

impl BundleSource {
    pub fn from_value(value: serde_json::Value) -> Result<Self, IoError> {
        let has = |k: &str| value.get(k).is_some();
        Ok(if has("unit_dims") {
            Self::Concrete(serde_json::from_value(value)?)
        } else if has("cocycle") {
            Self::Cocycle(serde_json::from_value(value)?)
        } else if has("unitaries") {
            Self::Semidirect(serde_json::from_value(value)?)
        } else if has("module") {
            Self::Bimodule(serde_json::from_value(value)?)
        } else if has("dims") {
            Self::Compacts(serde_json::from_value(value)?)
        } else {
            return Err(IoError::BadKey("no bundle description found".into()));
        })
    }

    pub fn read(path: &Path) -> Result<(Self, String), IoError> {
        let (value, text) = read_json::<serde_json::Value>(path)?;
        Ok((Self::from_value(value)?, text))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Concrete(_) => "concrete",
            Self::Cocycle(_) => "cocycle",
            Self::Semidirect(_) => "semidirect",
            Self::Bimodule(_) => "bimodule",
            Self::Compacts(_) => "compacts",
        }
    }

    /// Builds and validates the bundle.
    pub fn build(&self, tol: Tolerance) -> Result<ConcreteFellBundle, IoError> {
        Ok(match self {
            Self::Concrete(f) => {
                let e = f.to_parts(tol)?;
                crate::fellbundle::validate_fell_bundle(&e, tol)?;
                e
            }
            Self::Cocycle(f) => crate::fellbundle::from_cocycle(&f.to_cocycle()?, tol)?,
            Self::Semidirect(f) => crate::fellbundle::semidirect(&f.to_action(tol)?, tol)?,
            Self::Bimodule(f) => crate::fellbundle::from_bimodule(&f.to_bimodule(tol)?, tol)?,
            Self::Compacts(f) => crate::fellbundle::compacts_bundle(&f.dims, tol)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fellbundle::compacts_bundle;

    #[test]
    fn matrix_round_trip() {
        let m = ComplexMatrix::from_fn(2, 3, |i, j| Complex64::new(i as f64, j as f64 - 0.5));
        let back = matrix_from_json(&matrix_to_json(&m)).unwrap();
        assert_eq!(m, back);
        assert!(matches!(
            matrix_from_json(&vec![vec![[0.0, 0.0]], vec![]]),
            Err(IoError::RaggedMatrix)
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let tol = Tolerance::default();
        let e = compacts_bundle(&[1, 2], tol).unwrap();
        let file = BundleFile::from_bundle(&e);
        let text = serde_json::to_string(&file).unwrap();
        let back: BundleFile = serde_json::from_str(&text).unwrap();
        let e2 = back.to_parts(tol).unwrap();
        for a in e.groupoid().arrows() {
            assert!(e.fiber(a).same_as(e2.fiber(a), tol).unwrap());
        }
    }

    #[test]
    fn cocycle_keys() {
        assert_eq!(parse_pair("(1,2)").unwrap(), (1, 2));
        assert_eq!(parse_pair(" 3, 0 ").unwrap(), (3, 0));
        assert!(parse_pair("(1;2)").is_err());
    }
}
