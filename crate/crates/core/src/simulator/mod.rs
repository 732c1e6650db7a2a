//! Seeded Monte Carlo engine: generation-by-generation population
//! simulation from N type-1 ancestors, frequency and scaled-deviation
//! statistics, and ensemble aggregation.
//!
//! Offspring sampling is vectorized per (generation, type): the number of
//! cells choosing each atom is drawn from the multinomial with that type's
//! atom probabilities, which is equal in distribution to sampling cell by
//! cell and runs in constant time per type regardless of population size.

pub mod continuous;
pub mod exact;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::moments::MomentTable;
use crate::process_model::ProcessSpec;
use crate::rng::{derive_seed, rng_from_seed, GENERATOR, SEED_DERIVATION};

/// Population counts at one observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSnapshot {
    /// Generation for discrete runs, clock time for continuous runs.
    pub t: f64,
    pub counts: Vec<u64>,
    pub n_ancestors: u64,
}

impl PopulationSnapshot {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn extinct(&self) -> bool {
        self.total() == 0
    }
}

/// Frequencies of the types among all living cells; `None` on extinction
/// (the fractions are conditioned on a nonempty population).
pub fn fractions(snapshot: &PopulationSnapshot) -> Option<DVector<f64>> {
    let total = snapshot.total();
    if total == 0 {
        return None;
    }
    Some(DVector::from_iterator(
        snapshot.counts.len(),
        snapshot.counts.iter().map(|&z| z as f64 / total as f64),
    ))
}

/// Centered, scaled frequency deviations together with the raw fractions.
#[derive(Debug, Clone)]
pub struct WStatistic {
    /// `w_i = M_tot * sqrt(N) * (delta_i - p_i)`; sums to zero.
    pub w: DVector<f64>,
    pub fractions: DVector<f64>,
}

/// Scaled deviations of a non-extinct snapshot against the exact moments
/// at the same generation.
pub fn w_statistics(snapshot: &PopulationSnapshot, table: &MomentTable) -> Result<WStatistic> {
    debug_assert_eq!(snapshot.t, table.t as f64, "snapshot and table disagree on t");
    let delta = fractions(snapshot).ok_or(Error::Extinct)?;
    let p = table
        .p
        .as_ref()
        .ok_or(Error::ZeroPopulation { t: table.t })?;
    let scale = table.m_tot * (snapshot.n_ancestors as f64).sqrt();
    let w = DVector::from_fn(delta.len(), |i, _| scale * (delta[i] - p[i]));
    Ok(WStatistic {
        w,
        fractions: delta,
    })
}

/// Evolve `n` type-1 ancestors for `t` generations. Deterministic for a
/// fixed `(spec, n, t, seed)`.
pub fn simulate_population(
    spec: &ProcessSpec,
    n: u64,
    t: u32,
    seed: u64,
) -> Result<PopulationSnapshot> {
    if !spec.is_discrete() {
        return Err(Error::DiscreteTimeRequired(
            "generation simulation needs time_mode=discrete (use the embedded process \
             or the continuous engine)"
                .into(),
        ));
    }
    let d = spec.d;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0u64; d];
    counts[0] = n;
    for _ in 0..t {
        if counts.iter().all(|&c| c == 0) {
            break;
        }
        let mut next = vec![0u64; d];
        for i in 0..d {
            let cells = counts[i];
            if cells == 0 {
                continue;
            }
            let split = multinomial_split(&mut rng, cells, &spec.offspring[i]);
            for (atom, &chosen) in spec.offspring[i].atoms.iter().zip(&split) {
                if chosen == 0 {
                    continue;
                }
                for j in 0..d {
                    let born = atom.n[j].checked_mul(chosen).ok_or_else(count_overflow)?;
                    next[j] = next[j].checked_add(born).ok_or_else(count_overflow)?;
                }
            }
        }
        counts = next;
    }
    Ok(PopulationSnapshot {
        t: t as f64,
        counts,
        n_ancestors: n,
    })
}

fn count_overflow() -> Error {
    Error::Overflow("population count exceeded the u64 range".into())
}

/// Draw how many of `cells` cells choose each atom, by sequential
/// conditional binomials over the remaining probability mass.
fn multinomial_split<R: Rng>(
    rng: &mut R,
    cells: u64,
    law: &crate::process_model::OffspringLaw,
) -> Vec<u64> {
    let m = law.atoms.len();
    let mut split = vec![0u64; m];
    let mut remaining = cells;
    let mut mass_left = 1.0f64;
    for (a, atom) in law.atoms.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if a + 1 == m {
            split[a] = remaining;
            break;
        }
        let q = if mass_left > 0.0 {
            (atom.p / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = Binomial::new(remaining, q)
            .expect("conditional probability is clamped to [0,1]")
            .sample(rng);
        split[a] = k;
        remaining -= k;
        mass_left -= atom.p;
    }
    split
}

/// Monte Carlo aggregates over independent replicates.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub replicates: u64,
    pub extinct_count: u64,
    /// Mean fractions over the non-extinct replicates.
    pub mean_fractions: DVector<f64>,
    /// Mean scaled deviations over the non-extinct replicates.
    pub mean_w: DVector<f64>,
    /// Sample covariance (n-1 normalization) of the scaled-deviation
    /// vectors over the non-extinct replicates.
    pub emp_cov_w: DMatrix<f64>,
    /// Seed-derivation record: replicate r was seeded with
    /// `derive_seed(master_seed, r)`.
    pub master_seed: u64,
    pub generator: &'static str,
    pub seed_derivation: &'static str,
}

/// Run `replicates` independent populations and aggregate. Extinct
/// replicates are counted and excluded from the fraction and deviation
/// statistics (the theory conditions on survival).
pub fn monte_carlo(
    spec: &ProcessSpec,
    n: u64,
    t: u32,
    replicates: u64,
    master_seed: u64,
) -> Result<EnsembleSummary> {
    if replicates < 2 {
        return Err(Error::Parameter("need at least 2 replicates".into()));
    }
    let d = spec.d;
    let table = MomentTable::build(spec, t)?;
    let mut w_samples: Vec<DVector<f64>> = Vec::new();
    let mut fraction_sum = DVector::zeros(d);
    let mut extinct_count = 0u64;
    for r in 0..replicates {
        let snapshot = simulate_population(spec, n, t, derive_seed(master_seed, r))?;
        if snapshot.extinct() {
            extinct_count += 1;
            continue;
        }
        let stat = w_statistics(&snapshot, &table)?;
        fraction_sum += &stat.fractions;
        w_samples.push(stat.w);
    }
    let alive = replicates - extinct_count;
    if alive == 0 {
        return Err(Error::AllExtinct { replicates });
    }
    let mean_fractions = fraction_sum / alive as f64;
    let mut mean_w = DVector::zeros(d);
    for w in &w_samples {
        mean_w += w;
    }
    mean_w /= alive as f64;
    let mut emp_cov_w = DMatrix::zeros(d, d);
    if alive >= 2 {
        for w in &w_samples {
            let c = w - &mean_w;
            emp_cov_w += &c * c.transpose();
        }
        emp_cov_w /= (alive - 1) as f64;
    }
    Ok(EnsembleSummary {
        replicates,
        extinct_count,
        mean_fractions,
        mean_w,
        emp_cov_w,
        master_seed,
        generator: GENERATOR,
        seed_derivation: SEED_DERIVATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{extinction_probability, limit_cov_placeholder_never_used};
    use approx::assert_relative_eq;

    fn example2() -> ProcessSpec {
        ProcessSpec::example2(0.25, 0.40, 0.35, None).unwrap()
    }

    #[test]
    fn pure_doubling_is_deterministic() {
        let spec = ProcessSpec::example2(0.0, 1.0, 0.0, None).unwrap();
        let snapshot = simulate_population(&spec, 3, 4, 99).unwrap();
        assert_eq!(snapshot.counts, vec![48, 0]);
        assert!(!snapshot.extinct());
    }

    #[test]
    fn certain_death_is_extinct_after_one_generation() {
        let spec = ProcessSpec::example2(1.0, 0.0, 0.0, None).unwrap();
        let snapshot = simulate_population(&spec, 5, 1, 1).unwrap();
        assert!(snapshot.extinct());
        assert_eq!(snapshot.counts, vec![0, 0]);
    }

    #[test]
    fn identical_seeds_reproduce_identical_snapshots() {
        let spec = example2();
        let a = simulate_population(&spec, 1000, 5, 42).unwrap();
        let b = simulate_population(&spec, 1000, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_population(&spec, 1000, 5, 43).unwrap();
        assert_ne!(a, c, "distinct seeds should differ at this size");
    }

    #[test]
    fn fractions_basics() {
        let snap = |counts: Vec<u64>| PopulationSnapshot {
            t: 1.0,
            counts,
            n_ancestors: 1,
        };
        let f = fractions(&snap(vec![64, 36])).unwrap();
        assert_relative_eq!(f[0], 0.64, epsilon = 1e-15);
        assert_relative_eq!(f[1], 0.36, epsilon = 1e-15);
        assert!(fractions(&snap(vec![0, 0])).is_none());
        let g = fractions(&snap(vec![7, 0])).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn fractions_of_survivors_sum_to_one() {
        let spec = example2();
        for seed in 0..50 {
            let snapshot = simulate_population(&spec, 50, 3, seed).unwrap();
            if let Some(f) = fractions(&snapshot) {
                assert!((f.sum() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn w_vanishes_at_the_mean_and_sums_to_zero() {
        let spec = example2();
        let table = MomentTable::build(&spec, 1).unwrap();
        // Counts sitting exactly on the expected proportions 16:7.
        let snapshot = PopulationSnapshot {
            t: 1.0,
            counts: vec![80, 35],
            n_ancestors: 100,
        };
        let stat = w_statistics(&snapshot, &table).unwrap();
        assert!(stat.w[0].abs() <= 1e-12);
        assert!(stat.w[1].abs() <= 1e-12);

        for seed in 0..20 {
            let snapshot = simulate_population(&spec, 2000, 2, seed).unwrap();
            if snapshot.extinct() {
                continue;
            }
            let stat = w_statistics(&snapshot, &table_at(&spec, 2)).unwrap();
            let bound = 1e-9 * table_at(&spec, 2).m_tot * (2000f64).sqrt();
            assert!(stat.w.sum().abs() <= bound);
        }
    }

    fn table_at(spec: &ProcessSpec, t: u32) -> MomentTable {
        MomentTable::build(spec, t).unwrap()
    }

    #[test]
    fn extinct_snapshot_has_no_w() {
        let spec = ProcessSpec::example2(1.0, 0.0, 0.0, None).unwrap();
        let table = MomentTable::build(&spec, 1).unwrap();
        let snapshot = simulate_population(&spec, 3, 1, 0).unwrap();
        assert!(matches!(
            w_statistics(&snapshot, &table),
            Err(Error::Extinct)
        ));
    }

    #[test]
    fn continuous_spec_is_rejected_by_the_discrete_engine() {
        let spec = ProcessSpec::example2(
            0.25,
            0.40,
            0.35,
            Some((
                crate::process_model::LifespanLaw::Deterministic { tau: 1.0 },
                crate::process_model::LifespanLaw::Deterministic { tau: 1.0 },
            )),
        )
        .unwrap();
        assert!(matches!(
            simulate_population(&spec, 1, 1, 0),
            Err(Error::DiscreteTimeRequired(_))
        ));
        assert!(simulate_population(&spec.embedded(), 1, 1, 0).is_ok());
    }

    #[test]
    fn all_extinct_ensemble_is_an_error() {
        let spec = ProcessSpec::example2(1.0, 0.0, 0.0, None).unwrap();
        assert!(matches!(
            monte_carlo(&spec, 5, 2, 10, 0),
            Err(Error::AllExtinct { replicates: 10 })
        ));
    }

    #[test]
    fn extinction_frequency_tracks_the_pgf_iterate() {
        // Single-ancestor replicates at t=2: extinction probability 0.625.
        let spec = example2();
        let replicates = 4000u64;
        let mut extinct = 0u64;
        for r in 0..replicates {
            if simulate_population(&spec, 1, 2, derive_seed(11, r))
                .unwrap()
                .extinct()
            {
                extinct += 1;
            }
        }
        let q = extinction_probability(&spec, 2).unwrap();
        let freq = extinct as f64 / replicates as f64;
        let bound = 4.0 * (q * (1.0 - q) / replicates as f64).sqrt();
        assert!(
            (freq - q).abs() <= bound,
            "extinction frequency {freq} vs q {q} (bound {bound})"
        );
    }

    #[test]
    fn mean_fractions_approach_the_proportions() {
        let spec = example2();
        let summary = monte_carlo(&spec, 10_000, 3, 1000, 5).unwrap();
        assert!(summary.extinct_count == 0);
        assert!((summary.mean_fractions[0] - 16.0 / 23.0).abs() < 0.005);
        assert_eq!(summary.generator, "chacha8");
        assert_eq!(summary.seed_derivation, "splitmix64");
    }

    #[test]
    fn empirical_w_covariance_tracks_the_limit() {
        let spec = example2();
        let table = MomentTable::build(&spec, 2).unwrap();
        let d = crate::asymptotics::limit_cov_closed(&table.cov, table.p.as_ref().unwrap(), 2)
            .unwrap();
        let summary = monte_carlo(&spec, 500, 2, 4000, 12).unwrap();
        let rel = (summary.emp_cov_w[(0, 0)] - d[(0, 0)]).abs() / d[(0, 0)];
        assert!(rel <= 0.15, "relative error {rel}");
    }

    /// Empirical moments over many single-ancestor replicates agree with
    /// the exhaustive enumeration within four standard errors.
    #[test]
    fn simulation_agrees_with_exhaustive_enumeration() {
        let specs = vec![
            example2(),
            ProcessSpec::new(
                vec!["a".into(), "b".into()],
                vec![
                    crate::process_model::OffspringLaw::new(vec![
                        (0.3, vec![0, 0]),
                        (0.5, vec![1, 1]),
                        (0.2, vec![0, 2]),
                    ]),
                    crate::process_model::OffspringLaw::new(vec![
                        (0.6, vec![0, 1]),
                        (0.4, vec![0, 0]),
                    ]),
                ],
                None,
                crate::process_model::TimeMode::Discrete,
            )
            .unwrap(),
        ];
        let replicates = 100_000u64;
        for (s, spec) in specs.iter().enumerate() {
            let t = 3;
            let oracle = exact::brute_force_distribution(spec, t).unwrap();
            let exact_mean = oracle.mean();
            let exact_cov = oracle.covariance();
            let mut sums = vec![0.0f64; spec.d];
            for r in 0..replicates {
                let snap =
                    simulate_population(spec, 1, t, derive_seed(1000 + s as u64, r)).unwrap();
                for j in 0..spec.d {
                    sums[j] += snap.counts[j] as f64;
                }
            }
            for j in 0..spec.d {
                let emp = sums[j] / replicates as f64;
                let se = (exact_cov[(j, j)] / replicates as f64).sqrt();
                assert!(
                    (emp - exact_mean[j]).abs() <= 4.0 * se.max(1e-9),
                    "spec {s} type {j}: {emp} vs {} (se {se})",
                    exact_mean[j]
                );
            }
        }
    }
}
