//! JSON persistence for models.
//!
//! One document per model. Matrices are flat row-major arrays; every float
//! is rendered in scientific notation with 17 significant digits, which is
//! enough for exact `f64` round-trips, so `load(save(m))` reproduces `m`
//! bit for bit and re-saving yields byte-identical files.
//!
//! Linear Gaussian:
//! `{"kind":"linear_gaussian","nodes":[{"id","dim","W"}...],"edges":[{"i","j","A_ji","A_ij","R","y"}...]}`
//! where `A_ji` multiplies the state of the smaller-id endpoint `i`.
//!
//! GMRF:
//! `{"kind":"gmrf","n":3,"J":[[row,col,value]...],"h":[...]}`
//! with 1-based COO triplets listing every nonzero of `J` (both triangles),
//! sorted by row then column.

use super::{
    EdgeObservation, FactorGraphModel, GmrfModel, LinearGaussianModel, ModelKind, NodeId,
    NodeParams,
};
use crate::numerics::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at {path}: {message}")]
    Json { path: String, message: String },
    #[error("{location}: field {field} has {got} entries, expected {expected}")]
    Dimension {
        location: String,
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("edge ({i}, {j}): endpoints must satisfy 1 <= i < j <= node count")]
    BadEndpoints { i: usize, j: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("missing observation: edge ({i}, {j}) has an empty y")]
    MissingObservation { i: usize, j: usize },
    #[error("node ids must be unique and contiguous from 1")]
    BadNodeIds,
    #[error("J triplet ({row}, {col}) is out of range for n = {n}")]
    TripletOutOfRange { row: usize, col: usize, n: usize },
    #[error("duplicate J triplet ({row}, {col})")]
    DuplicateTriplet { row: usize, col: usize },
    #[error("non-symmetric J: J[{i},{j}] = {a} but J[{j},{i}] = {b}")]
    AsymmetricPrecision { i: usize, j: usize, a: f64, b: f64 },
    #[error("non-finite value in {location}")]
    NonFinite { location: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum ModelFile {
    #[serde(rename = "linear_gaussian")]
    Linear {
        nodes: Vec<NodeFile>,
        edges: Vec<EdgeFile>,
    },
    #[serde(rename = "gmrf")]
    Gmrf {
        n: usize,
        #[serde(rename = "J")]
        j: Vec<(usize, usize, f64)>,
        h: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: usize,
    dim: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    i: usize,
    j: usize,
    #[serde(rename = "A_ji")]
    a_ji: Vec<f64>,
    #[serde(rename = "A_ij")]
    a_ij: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    y: Vec<f64>,
}

/// JSON formatter that renders every float with 17 significant digits.
struct SciFloatFormatter;

impl serde_json::ser::Formatter for SciFloatFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major(
    rows: usize,
    cols: usize,
    data: &[f64],
    location: &str,
    field: &'static str,
) -> Result<Matrix, LoadError> {
    if data.len() != rows * cols {
        return Err(LoadError::Dimension {
            location: location.to_string(),
            field,
            expected: rows * cols,
            got: data.len(),
        });
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

fn to_file(model: &FactorGraphModel) -> ModelFile {
    match model.kind() {
        ModelKind::LinearGaussian(m) => ModelFile::Linear {
            nodes: m
                .nodes
                .iter()
                .map(|p| NodeFile {
                    id: p.id.0,
                    dim: p.dim,
                    w: row_major(&p.prior_cov),
                })
                .collect(),
            edges: m
                .edges
                .iter()
                .map(|e| {
                    let (i, j) = e.endpoints();
                    EdgeFile {
                        i: i.0,
                        j: j.0,
                        a_ji: row_major(e.coeff_of(i)),
                        a_ij: row_major(e.coeff_of(j)),
                        r: row_major(e.noise_cov()),
                        y: e.obs().iter().copied().collect(),
                    }
                })
                .collect(),
        },
        ModelKind::Gmrf(m) => {
            let n = m.len();
            let mut triplets = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    let v = m.precision()[(r, c)];
                    if v != 0.0 {
                        triplets.push((r + 1, c + 1, v));
                    }
                }
            }
            ModelFile::Gmrf {
                n,
                j: triplets,
                h: m.potential().iter().copied().collect(),
            }
        }
    }
}

fn from_file(file: ModelFile) -> Result<FactorGraphModel, LoadError> {
    match file {
        ModelFile::Linear { nodes, edges } => {
            let n = nodes.len();
            let mut ids: Vec<usize> = nodes.iter().map(|p| p.id).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != n || n == 0 || ids[0] != 1 || ids[n - 1] != n {
                return Err(LoadError::BadNodeIds);
            }
            let mut params: Vec<Option<NodeParams>> = vec![None; n];
            for p in &nodes {
                let loc = format!("node {}", p.id);
                let w = from_row_major(p.dim, p.dim, &p.w, &loc, "W")?;
                params[p.id - 1] = Some(NodeParams {
                    id: NodeId(p.id),
                    dim: p.dim,
                    prior_cov: w,
                });
            }
            let params: Vec<NodeParams> = params.into_iter().map(|p| p.unwrap()).collect();
            let mut seen = std::collections::BTreeSet::new();
            let mut obs = Vec::with_capacity(edges.len());
            for e in &edges {
                if e.i == 0 || e.j <= e.i || e.j > n {
                    return Err(LoadError::BadEndpoints { i: e.i, j: e.j });
                }
                if !seen.insert((e.i, e.j)) {
                    return Err(LoadError::DuplicateEdge { i: e.i, j: e.j });
                }
                let m = e.y.len();
                if m == 0 {
                    return Err(LoadError::MissingObservation { i: e.i, j: e.j });
                }
                let loc = format!("edge ({}, {})", e.i, e.j);
                let di = params[e.i - 1].dim;
                let dj = params[e.j - 1].dim;
                let a_ji = from_row_major(m, di, &e.a_ji, &loc, "A_ji")?;
                let a_ij = from_row_major(m, dj, &e.a_ij, &loc, "A_ij")?;
                let r = from_row_major(m, m, &e.r, &loc, "R")?;
                obs.push(EdgeObservation::new(
                    NodeId(e.i),
                    NodeId(e.j),
                    a_ji,
                    a_ij,
                    r,
                    Vector::from_row_slice(&e.y),
                ));
            }
            Ok(FactorGraphModel::new(ModelKind::LinearGaussian(
                LinearGaussianModel {
                    nodes: params,
                    edges: obs,
                },
            )))
        }
        ModelFile::Gmrf { n, j, h } => {
            if h.len() != n {
                return Err(LoadError::Dimension {
                    location: "gmrf".to_string(),
                    field: "h",
                    expected: n,
                    got: h.len(),
                });
            }
            let mut precision = Matrix::zeros(n, n);
            let mut seen = std::collections::BTreeSet::new();
            for &(row, col, value) in &j {
                if row == 0 || col == 0 || row > n || col > n {
                    return Err(LoadError::TripletOutOfRange { row, col, n });
                }
                if !seen.insert((row, col)) {
                    return Err(LoadError::DuplicateTriplet { row, col });
                }
                precision[(row - 1, col - 1)] = value;
            }
            for r in 0..n {
                for c in (r + 1)..n {
                    let (a, b) = (precision[(r, c)], precision[(c, r)]);
                    if a != b {
                        return Err(LoadError::AsymmetricPrecision {
                            i: r + 1,
                            j: c + 1,
                            a,
                            b,
                        });
                    }
                }
            }
            Ok(FactorGraphModel::new(ModelKind::Gmrf(GmrfModel::new(
                precision,
                Vector::from_row_slice(&h),
            ))))
        }
    }
}

/// Serializes any value to JSON bytes with the same float rendering as
/// model files (scientific notation, 17 significant digits), terminated by
/// a newline. Equal inputs produce byte-identical output, so downstream
/// artifacts built with this helper are reproducible.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFloatFormatter);
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

/// Serializes a model to its canonical JSON byte representation.
pub fn to_canonical_bytes(model: &FactorGraphModel) -> Result<Vec<u8>, LoadError> {
    let file = to_file(model);
    let check = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(LoadError::NonFinite {
                location: what.to_string(),
            })
        }
    };
    match model.kind() {
        ModelKind::LinearGaussian(m) => {
            for p in &m.nodes {
                check(p.prior_cov.iter().all(|x| x.is_finite()), "node priors")?;
            }
            for e in &m.edges {
                let fin = e.coeff_of(e.endpoints().0).iter().all(|x| x.is_finite())
                    && e.coeff_of(e.endpoints().1).iter().all(|x| x.is_finite())
                    && e.noise_cov().iter().all(|x| x.is_finite())
                    && e.obs().iter().all(|x| x.is_finite());
                check(fin, "edge data")?;
            }
        }
        ModelKind::Gmrf(m) => {
            check(
                m.precision().iter().all(|x| x.is_finite())
                    && m.potential().iter().all(|x| x.is_finite()),
                "gmrf data",
            )?;
        }
    }
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFloatFormatter);
    file.serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    Ok(out)
}

/// Writes the model as a single JSON document.
pub fn save(model: &FactorGraphModel, path: &Path) -> Result<(), LoadError> {
    let bytes = to_canonical_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|source| LoadError::Write {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| LoadError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a model from JSON bytes. `origin` labels error messages.
pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<FactorGraphModel, LoadError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let file: ModelFile =
        serde_path_to_error::deserialize(&mut de).map_err(|e| LoadError::Json {
            path: origin.to_string(),
            message: format!("{} (at {})", e.inner(), e.path()),
        })?;
    from_file(file)
}

/// Loads a model from a JSON file. Structural problems (shapes, symmetry,
/// edge bookkeeping) are load errors; semantic checks stay in `validate`.
pub fn load(path: &Path) -> Result<FactorGraphModel, LoadError> {
    let bytes = std::fs::read(path).map_err(|source| LoadError::Read {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes, &path.display().to_string())
}
