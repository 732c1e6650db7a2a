//! The large-ancestor-count Gaussian law of the type-frequency vector.
//!
//! As the number of ancestors N grows, the scaled frequency deviations
//! `W_i = M_tot * sqrt(N) * (delta_i - p_i)` converge jointly to a centered
//! normal vector. This module builds its covariance two ways — through the
//! fluctuation matrix A together with the count correlations, and directly
//! from the count covariances — and exposes the induced finite-N sampling
//! distribution of the frequency vector used by the likelihood.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::moments::{example2_closed_forms, CorrMatrix, MomentTable};

/// The fluctuation matrix: row i maps the standardized count fluctuation
/// of type i into frequency space. Diagonal `sigma_i (1 - p_i)`,
/// off-diagonal `-sigma_i p_j`; every row sums to zero because the
/// proportions sum to one.
pub fn a_matrix(sigma: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let d = sigma.len();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            sigma[i] * (1.0 - p[i])
        } else {
            -sigma[i] * p[j]
        }
    })
}

/// Limit covariance of the first `k` scaled deviations via the correlation
/// route: `D = A_{d x k}^T R A_{d x k}`, symmetrized. Fails when the
/// correlation matrix has undefined entries (some type has zero variance);
/// the covariance route [`limit_cov_closed`] handles those cases.
pub fn limit_cov_via_a(a: &DMatrix<f64>, corr: &CorrMatrix, k: usize) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if k < 1 || k > d {
        return Err(Error::Parameter(format!("k must lie in 1..={d}, got {k}")));
    }
    for i in 0..d {
        for j in 0..d {
            if !corr.is_defined(i, j) {
                return Err(Error::UndefinedCorrelation { i, j });
            }
        }
    }
    let a_slice = a.columns(0, k);
    let product = a_slice.transpose() * &corr.values * a_slice;
    Ok(symmetrized(&product))
}

/// Limit covariance of the first `k` scaled deviations straight from the
/// count covariances:
///
/// ```text
/// d_ij = C_ij + p_i p_j S - p_i rs_j - p_j rs_i
/// ```
///
/// with `rs_i` the i-th row sum of C and `S` its total sum. Never divides
/// by a standard deviation, so zero-variance types need no special case.
pub fn limit_cov_closed(cov: &DMatrix<f64>, p: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    if k < 1 || k > d {
        return Err(Error::Parameter(format!("k must lie in 1..={d}, got {k}")));
    }
    let idx: Vec<usize> = (0..k).collect();
    limit_cov_closed_subset(cov, p, &idx)
}

/// Same as [`limit_cov_closed`] for an arbitrary subset of component
/// indices, covering joint limits of any subcollection of frequencies.
pub fn limit_cov_closed_subset(
    cov: &DMatrix<f64>,
    p: &DVector<f64>,
    indices: &[usize],
) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    for &i in indices {
        if i >= d {
            return Err(Error::TypeIndex { index: i, d });
        }
    }
    let row_sums: Vec<f64> = (0..d).map(|i| cov.row(i).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let k = indices.len();
    let full = DMatrix::from_fn(k, k, |a, b| {
        let (i, j) = (indices[a], indices[b]);
        cov[(i, j)] + p[i] * p[j] * total - p[i] * row_sums[j] - p[j] * row_sums[i]
    });
    Ok(symmetrized(&full))
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// The limiting Gaussian of the frequency vector's first `k` components at
/// a fixed generation, together with its finite-N sampling covariance
/// `cov_limit / (N * M_tot^2)`.
#[derive(Debug, Clone)]
pub struct AsymptoticGaussian {
    pub t: u32,
    pub k: usize,
    /// Expected frequencies (first k proportions).
    pub mean: DVector<f64>,
    /// Covariance of the limiting scaled deviations.
    pub cov_limit: DMatrix<f64>,
    pub n_ancestors: u64,
    pub m_tot: f64,
    /// Sampling covariance of the observed frequency subvector.
    pub cov_delta: DMatrix<f64>,
}

/// Sampling distribution of the first `k` frequencies for `n` ancestors.
/// `k = d` is permitted but singular (frequencies sum to one); the usual
/// choice is `k = d - 1`, dropping the last type.
pub fn delta_distribution(table: &MomentTable, n: u64, k: usize) -> Result<AsymptoticGaussian> {
    if n < 1 {
        return Err(Error::Parameter("ancestor count must be >= 1".into()));
    }
    let p = table
        .p
        .as_ref()
        .ok_or(Error::ZeroPopulation { t: table.t })?;
    let cov_limit = limit_cov_closed(&table.cov, p, k)?;
    let scale = 1.0 / (n as f64 * table.m_tot * table.m_tot);
    let cov_delta = &cov_limit * scale;
    Ok(AsymptoticGaussian {
        t: table.t,
        k,
        mean: DVector::from_fn(k, |i, _| p[i]),
        cov_limit,
        n_ancestors: n,
        m_tot: table.m_tot,
        cov_delta,
    })
}

/// Sampling variance of the type-1 frequency in the two-type progenitor
/// model, from the closed-form moments: the (1,1) limit-covariance entry
/// divided by `N * M_tot^2`.
pub fn s_squared_example2(p1: f64, p2: f64, t: u32, n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Parameter("ancestor count must be >= 1".into()));
    }
    let cf = example2_closed_forms(p1, p2, t)?;
    if !(cf.m_tot > 0.0) {
        return Err(Error::ZeroPopulation { t });
    }
    let d = limit_cov_closed(&cf.covariance(), &cf.proportions(), 1)?;
    Ok(d[(0, 0)] / (n as f64 * cf.m_tot * cf.m_tot))
}
