//! Exact transient moments of the generation process: mean-matrix powers,
//! the second-factorial-moment recurrence, variances/covariances and
//! correlations of type counts from a single type-1 ancestor, type
//! proportions, and extinction probabilities by pgf iteration.
//!
//! All quantities are indexed by generation and describe the embedded
//! discrete-time process; continuous-time specs are handled through
//! [`ProcessSpec::embedded`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::process_model::ProcessSpec;

/// Reject mean-matrix entries beyond this magnitude instead of silently
/// saturating to infinity in supercritical runs.
pub const MEAN_OVERFLOW_LIMIT: f64 = 1e300;

/// `M^t`; entry (i, j) is the expected number of type-j cells at
/// generation t from one type-i ancestor (`M^0` is the identity).
pub fn mean_matrix_power(mean1: &DMatrix<f64>, t: u32) -> Result<DMatrix<f64>> {
    let d = mean1.nrows();
    let mut power = DMatrix::identity(d, d);
    for step in 1..=t {
        power = &power * mean1;
        if power.iter().any(|x| x.abs() > MEAN_OVERFLOW_LIMIT) {
            return Err(Error::Overflow(format!(
                "mean matrix entry exceeds {MEAN_OVERFLOW_LIMIT:e} at generation {step}"
            )));
        }
    }
    Ok(power)
}

/// Second factorial moments at generation `t >= 1`, one symmetric d x d
/// matrix per ancestor type.
///
/// Writing b(u) for the generation-u tensor and m(u) for the mean matrix
/// power, the one-generation extension is
///
/// ```text
/// b^i(u+1) = m(u)^T B^i m(u)  +  sum_l M[i,l] b^l(u)
/// ```
///
/// where `B = b(1)` and `M = m(1)` are the offspring moments: the first
/// term propagates the ancestor's immediate offspring pairs through u more
/// generations, the second accumulates the fluctuations arising below each
/// first-generation child.
pub fn second_moments_recurrence(
    mean1: &DMatrix<f64>,
    fact2_1: &[DMatrix<f64>],
    t: u32,
) -> Result<Vec<DMatrix<f64>>> {
    let d = mean1.nrows();
    if t < 1 {
        return Err(Error::Parameter(
            "second moments recurrence requires t >= 1".into(),
        ));
    }
    let mut b: Vec<DMatrix<f64>> = fact2_1.to_vec();
    let mut mean_power = mean1.clone();
    for step in 1..t {
        let mut next: Vec<DMatrix<f64>> = Vec::with_capacity(d);
        for i in 0..d {
            let mut term = mean_power.transpose() * &fact2_1[i] * &mean_power;
            for l in 0..d {
                term += &b[l] * mean1[(i, l)];
            }
            next.push(term);
        }
        b = next;
        mean_power = &mean_power * mean1;
        if mean_power.iter().any(|x| x.abs() > MEAN_OVERFLOW_LIMIT) {
            return Err(Error::Overflow(format!(
                "mean matrix entry exceeds {MEAN_OVERFLOW_LIMIT:e} at generation {}",
                step + 1
            )));
        }
    }
    Ok(b)
}

/// Correlation matrix with zero-variance types marked undefined rather
/// than propagated as NaN. Entry (i, j) is defined iff both types have
/// strictly positive variance.
#[derive(Debug, Clone)]
pub struct CorrMatrix {
    pub values: DMatrix<f64>,
    /// Per-type flag: true when the type's variance is strictly positive.
    pub defined: Vec<bool>,
}

impl CorrMatrix {
    pub fn from_covariance(cov: &DMatrix<f64>) -> Self {
        let d = cov.nrows();
        let sigma: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
        let defined: Vec<bool> = sigma.iter().map(|&s| s > 0.0).collect();
        let values = DMatrix::from_fn(d, d, |i, j| {
            if i == j && defined[i] {
                1.0
            } else if defined[i] && defined[j] {
                cov[(i, j)] / (sigma[i] * sigma[j])
            } else {
                f64::NAN
            }
        });
        CorrMatrix { values, defined }
    }

    pub fn is_defined(&self, i: usize, j: usize) -> bool {
        self.defined[i] && self.defined[j]
    }

    /// True when every entry is defined (all variances positive).
    pub fn fully_defined(&self) -> bool {
        self.defined.iter().all(|&x| x)
    }
}

/// All transient moments at a fixed generation, ancestor of type 1.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub t: u32,
    /// `M^t`, all ancestor types (the recurrence needs every row).
    pub mean: DMatrix<f64>,
    /// Second factorial moments `b^i_jk(t)` per ancestor type i.
    pub fact2: Vec<DMatrix<f64>>,
    /// Covariance matrix of the counts from one type-1 ancestor; the
    /// diagonal holds the variances.
    pub cov: DMatrix<f64>,
    /// Variances (diagonal of `cov`), clamped at zero.
    pub sigma2: DVector<f64>,
    pub corr: CorrMatrix,
    /// Type proportions `m_1j(t) / M_tot`; `None` when the total mean is 0.
    pub p: Option<DVector<f64>>,
    /// Total expected population from one type-1 ancestor.
    pub m_tot: f64,
    /// Extinction probability from one type-1 ancestor.
    pub q: f64,
}

impl MomentTable {
    /// Assemble every moment at generation `t`.
    pub fn build(spec: &ProcessSpec, t: u32) -> Result<Self> {
        let d = spec.d;
        let offspring = spec.offspring_moments();
        let mean = mean_matrix_power(&offspring.mean, t)?;
        let fact2 = if t == 0 {
            vec![DMatrix::zeros(d, d); d]
        } else {
            second_moments_recurrence(&offspring.mean, &offspring.fact2, t)?
        };
        // Variance and covariance from the type-1 ancestor's row.
        let cov = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                fact2[0][(i, i)] + mean[(0, i)] - mean[(0, i)] * mean[(0, i)]
            } else {
                fact2[0][(i, j)] - mean[(0, i)] * mean[(0, j)]
            }
        });
        let sigma2 = DVector::from_fn(d, |i, _| cov[(i, i)].max(0.0));
        let corr = CorrMatrix::from_covariance(&cov);
        let m_tot: f64 = (0..d).map(|j| mean[(0, j)]).sum();
        let p = if m_tot > 0.0 {
            Some(DVector::from_fn(d, |j, _| mean[(0, j)] / m_tot))
        } else {
            None
        };
        let q = extinction_probability(spec, t)?;
        Ok(MomentTable {
            t,
            mean,
            fact2,
            cov,
            sigma2,
            corr,
            p,
            m_tot,
            q,
        })
    }
}

/// Extinction probability `q(t)` from one type-1 ancestor, by iterating
/// the offspring pgf from the zero vector.
pub fn extinction_probability(spec: &ProcessSpec, t: u32) -> Result<f64> {
    let d = spec.d;
    let mut q = vec![0.0f64; d];
    for _ in 0..t {
        let mut next = vec![0.0f64; d];
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = spec.offspring_pgf(i, &q)?.clamp(0.0, 1.0);
        }
        q = next;
    }
    Ok(q[0])
}

/// `(q(t), q(t)^N)`: extinction of one clone and of the whole population
/// from `n` independent ancestors.
pub fn extinction_probability_n(spec: &ProcessSpec, t: u32, n: u64) -> Result<(f64, f64)> {
    let q = extinction_probability(spec, t)?;
    Ok((q, q.powi(n.min(i32::MAX as u64) as i32)))
}

/// Closed-form generation-`t` moments of the two-type progenitor model,
/// written in terms of `m = 2 p1` and the geometric sum
/// `g_t = 1 + m + ... + m^(t-1)`:
///
/// ```text
/// m11(t) = m^t                      m12(t) = m^(t-1) p2
/// b111(t) = m^t g_t                 b112(t) = p2 m^(t-1) (g_t - 1)
/// b122(t) = p2^2 m^(t-2) (g_t - 1)
/// sigma1^2(t) = m^t (2 - m) g_t
/// sigma2^2(t) = b122(t) + m12(t) - m12(t)^2
/// c12(t) = b112(t) - m11(t) m12(t) = p2 m^(t-1) ((2 - m) g_t - 2)
/// p = m / (m + p2)   (independent of t)
/// ```
///
/// Each formula solves the second-moment recurrence for this model in
/// closed form; the generic pipeline must reproduce them to within
/// accumulation error. At `t = 1` they reduce to the one-step offspring
/// moments `b111 = m`, `sigma1^2 = 4 p1 (1 - p1)`, `c12 = -2 p1 p2`.
#[derive(Debug, Clone, Copy)]
pub struct Example2Moments {
    pub m11: f64,
    pub m12: f64,
    pub b111: f64,
    pub b112: f64,
    pub b122: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub c12: f64,
    /// Expected fraction of type-1 cells, constant over t.
    pub p: f64,
    /// Total mean population `m11 + m12`.
    pub m_tot: f64,
}

impl Example2Moments {
    /// Covariance matrix in the layout used by the generic pipeline.
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[self.sigma1_sq, self.c12, self.c12, self.sigma2_sq],
        )
    }

    pub fn proportions(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.p, 1.0 - self.p])
    }
}

/// Evaluate the closed forms above at generation `t >= 1`.
pub fn example2_closed_forms(p1: f64, p2: f64, t: u32) -> Result<Example2Moments> {
    if !(p1 >= 0.0) || !(p2 >= 0.0) || p1 + p2 > 1.0 + 1e-12 {
        return Err(Error::Parameter(format!(
            "require p1, p2 >= 0 and p1 + p2 <= 1, got ({p1}, {p2})"
        )));
    }
    if t < 1 {
        return Err(Error::Parameter("closed forms require t >= 1".into()));
    }
    let m = 2.0 * p1;
    // Direct summation keeps the near-critical case (m close to 1) exact
    // where the ratio form (m^t - 1)/(m - 1) would cancel badly.
    let mut g = 0.0;
    let mut m_pow = 1.0;
    for _ in 0..t {
        g += m_pow;
        m_pow *= m;
    }
    let m_t = m.powi(t as i32);
    let m_tm1 = if t >= 1 { m.powi(t as i32 - 1) } else { 1.0 };
    let m_tm2 = if t >= 2 {
        m.powi(t as i32 - 2)
    } else if m > 0.0 {
        1.0 / m
    } else {
        0.0 // multiplies (g_1 - 1) = 0 below
    };
    let m11 = m_t;
    let m12 = m_tm1 * p2;
    let b111 = m_t * g;
    let b112 = p2 * m_tm1 * (g - 1.0);
    let b122 = p2 * p2 * m_tm2 * (g - 1.0);
    let sigma1_sq = m_t * (2.0 - m) * g;
    let sigma2_sq = b122 + m12 - m12 * m12;
    let c12 = b112 - m11 * m12;
    let m_tot = m11 + m12;
    let p = if m + p2 > 0.0 { m / (m + p2) } else { f64::NAN };
    Ok(Example2Moments {
        m11,
        m12,
        b111,
        b112,
        b122,
        sigma1_sq,
        sigma2_sq,
        c12,
        p,
        m_tot,
    })
}
