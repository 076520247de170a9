//! Exact marginals by direct dense solves.
//!
//! These routines ignore the message-passing machinery entirely and build
//! the full joint posterior, so they serve as ground truth for the engine.
//! They are dense and limited to [`MAX_DENSE_DIM`] total state dimensions.

use crate::error::Error;
use crate::model::{FactorGraphModel, NodeId};
use crate::numerics::{self, Matrix, Vector};

/// Largest total state dimension the dense solvers accept.
pub const MAX_DENSE_DIM: usize = 2000;

/// Exact posterior summaries, one entry per node in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMarginals {
    /// Posterior means, indexed by node id minus one.
    pub means: Vec<Vector>,
    /// Posterior covariances, indexed by node id minus one.
    pub covariances: Vec<Matrix>,
}

impl ExactMarginals {
    pub fn mean(&self, node: NodeId) -> &Vector {
        &self.means[node.index()]
    }

    pub fn covariance(&self, node: NodeId) -> &Matrix {
        &self.covariances[node.index()]
    }
}

fn check_size(dim: usize) -> Result<(), Error> {
    if dim > MAX_DENSE_DIM {
        return Err(Error::TooLarge {
            dimension: dim,
            limit: MAX_DENSE_DIM,
        });
    }
    Ok(())
}

/// One Newton-style refinement pass: x <- x + solve(J, h - J x).
/// Cuts the residual of a single Cholesky solve down to round-off even for
/// moderately ill-conditioned J.
fn refine_solve(j: &Matrix, h: &Vector, context: &str) -> Result<Vector, Error> {
    let mut x =
        numerics::solve_spd(j, h).map_err(|e| Error::numerical(context.to_string(), e))?;
    for _ in 0..2 {
        let r = h - j * &x;
        let dx =
            numerics::solve_spd(j, &r).map_err(|e| Error::numerical(context.to_string(), e))?;
        x += dx;
    }
    Ok(x)
}

/// Exact marginals of a GMRF: mean solves `J mu = h`, covariances are the
/// diagonal blocks of `J^-1`. Fails if `J` is not positive definite.
pub fn exact_gmrf(model: &FactorGraphModel) -> Result<ExactMarginals, Error> {
    let gmrf = model.as_gmrf().ok_or(Error::WrongModelKind {
        expected: "gmrf",
    })?;
    let n = gmrf.len();
    check_size(n)?;
    let j = gmrf.precision();
    let mean = refine_solve(j, gmrf.potential(), "gmrf mean solve")?;
    let cov = numerics::invert_spd(j)
        .map_err(|e| Error::numerical("gmrf covariance solve".to_string(), e))?;
    Ok(ExactMarginals {
        means: (0..n).map(|i| Vector::from_element(1, mean[i])).collect(),
        covariances: (0..n)
            .map(|i| Matrix::from_element(1, 1, cov[(i, i)]))
            .collect(),
    })
}

/// Assembles the joint posterior information form of a linear Gaussian model.
///
/// With zero-mean priors `x_i ~ N(0, W_i)` and edge observations
/// `y = A_ji x_i + A_ij x_j + z`, `z ~ N(0, R)`, the posterior over the
/// stacked state is Gaussian with
/// `J = blockdiag(W_i^-1) + sum_e A_e^T R_e^-1 A_e` and
/// `h = sum_e A_e^T R_e^-1 y_e`, where `A_e` is the observation operator of
/// edge `e` laid out over the stacked state.
pub fn posterior_information(model: &FactorGraphModel) -> Result<(Matrix, Vector), Error> {
    let linear = model.as_linear().ok_or(Error::WrongModelKind {
        expected: "linear_gaussian",
    })?;
    let offsets: Vec<usize> = linear
        .nodes
        .iter()
        .scan(0, |acc, p| {
            let off = *acc;
            *acc += p.dim;
            Some(off)
        })
        .collect();
    let total: usize = linear.nodes.iter().map(|p| p.dim).sum();
    check_size(total)?;
    let mut j = Matrix::zeros(total, total);
    let mut h = Vector::zeros(total);
    for p in &linear.nodes {
        let w_inv = numerics::invert_spd(&p.prior_cov)
            .map_err(|e| Error::numerical(format!("prior inverse at node {}", p.id), e))?;
        let off = offsets[p.id.index()];
        j.view_mut((off, off), (p.dim, p.dim)).copy_from(&w_inv);
    }
    for e in &linear.edges {
        let (a, b) = e.endpoints();
        let context = format!("noise inverse on edge ({a}, {b})");
        let r_inv = numerics::invert_spd(e.noise_cov())
            .map_err(|err| Error::numerical(context, err))?;
        let (ca, cb) = (e.coeff_of(a), e.coeff_of(b));
        let (oa, ob) = (offsets[a.index()], offsets[b.index()]);
        let (da, db) = (ca.ncols(), cb.ncols());
        let jaa = ca.transpose() * &r_inv * ca;
        let jbb = cb.transpose() * &r_inv * cb;
        let jab = ca.transpose() * &r_inv * cb;
        for r in 0..da {
            for c in 0..da {
                j[(oa + r, oa + c)] += jaa[(r, c)];
            }
        }
        for r in 0..db {
            for c in 0..db {
                j[(ob + r, ob + c)] += jbb[(r, c)];
            }
        }
        for r in 0..da {
            for c in 0..db {
                j[(oa + r, ob + c)] += jab[(r, c)];
                j[(ob + c, oa + r)] += jab[(r, c)];
            }
        }
        let ha = ca.transpose() * &r_inv * e.obs();
        let hb = cb.transpose() * &r_inv * e.obs();
        for r in 0..da {
            h[oa + r] += ha[r];
        }
        for r in 0..db {
            h[ob + r] += hb[r];
        }
    }
    Ok((numerics::symmetrize(&j), h))
}

/// Exact marginals of a linear Gaussian model via the stacked posterior.
pub fn exact_linear(model: &FactorGraphModel) -> Result<ExactMarginals, Error> {
    let linear = model.as_linear().ok_or(Error::WrongModelKind {
        expected: "linear_gaussian",
    })?;
    let (j, h) = posterior_information(model)?;
    let mean = refine_solve(&j, &h, "posterior mean solve")?;
    let cov = numerics::invert_spd(&j)
        .map_err(|e| Error::numerical("posterior covariance solve".to_string(), e))?;
    let mut off = 0;
    let mut means = Vec::with_capacity(linear.nodes.len());
    let mut covariances = Vec::with_capacity(linear.nodes.len());
    for p in &linear.nodes {
        means.push(mean.rows(off, p.dim).into_owned());
        covariances.push(cov.view((off, off), (p.dim, p.dim)).into_owned());
        off += p.dim;
    }
    Ok(ExactMarginals { means, covariances })
}

/// Exact marginals for either model kind.
pub fn exact_marginals(model: &FactorGraphModel) -> Result<ExactMarginals, Error> {
    if model.is_gmrf() {
        exact_gmrf(model)
    } else {
        exact_linear(model)
    }
}
