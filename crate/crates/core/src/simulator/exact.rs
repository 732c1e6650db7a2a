//! Exhaustive enumeration of the exact generation-`t` distribution for
//! small processes: every offspring outcome of every cell is expanded and
//! probabilities accumulated, giving an oracle for the moment pipeline
//! that shares no code with it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::process_model::ProcessSpec;

/// Hard cap on the number of distinct count-vectors tracked at any step.
pub const STATE_CAP: usize = 1_000_000;

const MAX_TYPES: usize = 2;
const MAX_ATOMS: usize = 3;
const MAX_TOTAL_OFFSPRING: u64 = 2;
const MAX_GENERATIONS: u32 = 3;

/// Exact distribution of the count vector at a fixed generation, starting
/// from a single type-1 ancestor.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    pub d: usize,
    pub t: u32,
    /// Probability of each reachable count vector. BTreeMap keeps the
    /// accumulation order deterministic.
    pub probabilities: BTreeMap<Vec<u64>, f64>,
}

impl ExactDistribution {
    pub fn total_mass(&self) -> f64 {
        self.probabilities.values().sum()
    }

    /// E{Z_j(t)} for each type j.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for (z, &p) in &self.probabilities {
            for j in 0..self.d {
                m[j] += p * z[j] as f64;
            }
        }
        m
    }

    /// Second factorial moments E{Z_j(t) (Z_k(t) - delta_jk)}.
    pub fn fact2(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.d, self.d);
        for (z, &p) in &self.probabilities {
            for j in 0..self.d {
                for k in 0..self.d {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    b[(j, k)] += p * z[j] as f64 * (z[k] as f64 - delta);
                }
            }
        }
        b
    }

    /// Covariance matrix of the count vector (diagonal holds variances).
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let b = self.fact2();
        DMatrix::from_fn(self.d, self.d, |i, j| {
            if i == j {
                b[(i, i)] + m[i] - m[i] * m[i]
            } else {
                b[(i, j)] - m[i] * m[j]
            }
        })
    }

    /// Probability that the population is empty at generation t.
    pub fn extinction_probability(&self) -> f64 {
        self.probabilities
            .get(&vec![0u64; self.d])
            .copied()
            .unwrap_or(0.0)
    }
}

/// Expand all offspring outcomes of all cells for `t` generations.
///
/// The domain is deliberately tiny (at most two types, three atoms per law,
/// two children per cell, three generations) so the enumeration stays exact
/// and fast; outside it the call fails instead of approximating.
pub fn brute_force_distribution(spec: &ProcessSpec, t: u32) -> Result<ExactDistribution> {
    let d = spec.d;
    if d > MAX_TYPES {
        return Err(Error::OracleDomain(format!(
            "d={d} exceeds the maximum of {MAX_TYPES} types"
        )));
    }
    if t > MAX_GENERATIONS {
        return Err(Error::OracleDomain(format!(
            "t={t} exceeds the maximum of {MAX_GENERATIONS} generations"
        )));
    }
    for (i, law) in spec.offspring.iter().enumerate() {
        if law.atoms.len() > MAX_ATOMS {
            return Err(Error::OracleDomain(format!(
                "offspring law {i} has {} atoms (max {MAX_ATOMS})",
                law.atoms.len()
            )));
        }
        if law.max_total_offspring() > MAX_TOTAL_OFFSPRING {
            return Err(Error::OracleDomain(format!(
                "offspring law {i} produces up to {} children (max {MAX_TOTAL_OFFSPRING})",
                law.max_total_offspring()
            )));
        }
    }

    // Point mass at one type-1 ancestor.
    let mut ancestor = vec![0u64; d];
    ancestor[0] = 1;
    let mut dist: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    dist.insert(ancestor, 1.0);

    for _ in 0..t {
        let mut next: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for (state, &prob) in &dist {
            expand_state(spec, state, prob, &mut next)?;
            if next.len() > STATE_CAP {
                return Err(Error::StateSpace { cap: STATE_CAP });
            }
        }
        dist = next;
    }
    Ok(ExactDistribution {
        d,
        t,
        probabilities: dist,
    })
}

/// Enumerate the joint offspring outcome of every cell in `state` and add
/// the resulting next-generation states to `next`.
fn expand_state(
    spec: &ProcessSpec,
    state: &[u64],
    prob: f64,
    next: &mut BTreeMap<Vec<u64>, f64>,
) -> Result<()> {
    let d = spec.d;
    // Per-type outcomes: (probability weight, contributed children).
    // Cells of one type are exchangeable, so it suffices to enumerate the
    // multinomial split of that type's cells over its atoms.
    let mut per_type: Vec<Vec<(f64, Vec<u64>)>> = Vec::with_capacity(d);
    for (i, &count) in state.iter().enumerate() {
        per_type.push(type_outcomes(spec, i, count));
    }
    // Cartesian product across types.
    let mut acc: Vec<(f64, Vec<u64>)> = vec![(prob, vec![0u64; d])];
    for outcomes in &per_type {
        let mut grown = Vec::with_capacity(acc.len() * outcomes.len());
        for (w, children) in &acc {
            for (wt, contributed) in outcomes {
                let mut total = children.clone();
                for j in 0..d {
                    total[j] = total[j].checked_add(contributed[j]).ok_or_else(|| {
                        Error::Overflow("offspring count exceeded u64 range".into())
                    })?;
                }
                grown.push((w * wt, total));
            }
        }
        acc = grown;
    }
    for (w, z) in acc {
        *next.entry(z).or_insert(0.0) += w;
    }
    Ok(())
}

/// All multinomial splits of `count` cells of type `i` over that type's
/// atoms, with their probabilities and total contributed children.
fn type_outcomes(spec: &ProcessSpec, i: usize, count: u64) -> Vec<(f64, Vec<u64>)> {
    let d = spec.d;
    let atoms = &spec.offspring[i].atoms;
    let mut out = Vec::new();
    let mut split = vec![0u64; atoms.len()];
    enumerate_splits(count, 0, &mut split, &mut |split| {
        let mut weight = multinomial_coefficient(count, split);
        let mut children = vec![0u64; d];
        for (a, &k) in split.iter().enumerate() {
            if k > 0 {
                weight *= atoms[a].p.powi(k as i32);
                for j in 0..d {
                    children[j] += atoms[a].n[j] * k;
                }
            }
        }
        out.push((weight, children));
    });
    out
}

fn enumerate_splits(
    remaining: u64,
    atom: usize,
    split: &mut Vec<u64>,
    visit: &mut impl FnMut(&[u64]),
) {
    if atom + 1 == split.len() {
        split[atom] = remaining;
        visit(split);
        return;
    }
    for k in 0..=remaining {
        split[atom] = k;
        enumerate_splits(remaining - k, atom + 1, split, visit);
    }
}

fn multinomial_coefficient(n: u64, split: &[u64]) -> f64 {
    let mut coeff = factorial(n);
    for &k in split {
        coeff /= factorial(k);
    }
    coeff
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}
