//! Process specifications: per-type finite-support offspring laws, optional
//! lifespan laws, validation, and the per-type offspring moments derived
//! from the offspring probability generating functions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Tolerance for the probability-mass-sums-to-one check. After validation,
/// atom probabilities are renormalized by their exact sum so downstream
/// arithmetic sees total mass exactly 1.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// One support point of an offspring law: probability `p` of producing the
/// offspring vector `n` (children per type).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringAtom {
    pub p: f64,
    pub n: Vec<u64>,
}

/// A finite-support offspring distribution for one parent type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffspringLaw {
    pub atoms: Vec<OffspringAtom>,
}

impl OffspringLaw {
    pub fn new(atoms: Vec<(f64, Vec<u64>)>) -> Self {
        OffspringLaw {
            atoms: atoms
                .into_iter()
                .map(|(p, n)| OffspringAtom { p, n })
                .collect(),
        }
    }

    /// Largest total number of children a single cell can produce.
    pub fn max_total_offspring(&self) -> u64 {
        self.atoms
            .iter()
            .map(|a| a.n.iter().sum::<u64>())
            .max()
            .unwrap_or(0)
    }
}

/// Lifespan distribution of one cell type (continuous time only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum LifespanLaw {
    Deterministic { tau: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl LifespanLaw {
    fn validate(&self, path: &str, out: &mut Vec<Violation>) {
        let mut check = |name: &str, v: f64| {
            if !(v > 0.0) || !v.is_finite() {
                out.push(Violation {
                    path: format!("{path}.{name}"),
                    message: format!("must be strictly positive and finite, got {v}"),
                });
            }
        };
        match *self {
            LifespanLaw::Deterministic { tau } => check("tau", tau),
            LifespanLaw::Exponential { rate } => check("rate", rate),
            LifespanLaw::Gamma { shape, scale } => {
                check("shape", shape);
                check("scale", scale);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    Discrete,
    Continuous,
}

/// A full multitype branching-process specification: `d` cell types, one
/// offspring law per type, and (for continuous time) one lifespan law per
/// type. The process starts from ancestors of the first type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub d: usize,
    #[serde(rename = "types")]
    pub type_names: Vec<String>,
    pub offspring: Vec<OffspringLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifespans: Option<Vec<LifespanLaw>>,
    pub time_mode: TimeMode,
}

/// Per-type offspring moments: `mean[(i, j)]` is the expected number of
/// type-`j` children of a type-`i` parent; `fact2[i][(j, k)]` is the second
/// factorial moment E{n_j (n_k - delta_jk)} of a type-`i` parent's
/// offspring vector.
#[derive(Debug, Clone)]
pub struct OffspringMoments {
    pub mean: DMatrix<f64>,
    pub fact2: Vec<DMatrix<f64>>,
}

impl ProcessSpec {
    /// Build and validate a spec in one step; atom probabilities are
    /// renormalized by their exact sum on success.
    pub fn new(
        type_names: Vec<String>,
        offspring: Vec<OffspringLaw>,
        lifespans: Option<Vec<LifespanLaw>>,
        time_mode: TimeMode,
    ) -> Result<Self> {
        let d = type_names.len();
        let spec = ProcessSpec {
            d,
            type_names,
            offspring,
            lifespans,
            time_mode,
        };
        validate_spec(spec)
    }

    pub fn is_discrete(&self) -> bool {
        self.time_mode == TimeMode::Discrete
    }

    /// The discrete-time generation process with the same offspring laws
    /// (lifespans dropped). For a continuous-time spec this is the process
    /// of successive generation sizes.
    pub fn embedded(&self) -> ProcessSpec {
        ProcessSpec {
            d: self.d,
            type_names: self.type_names.clone(),
            offspring: self.offspring.clone(),
            lifespans: None,
            time_mode: TimeMode::Discrete,
        }
    }

    /// Evaluate the offspring probability generating function of type `i`
    /// at the point `s`: sum over atoms of p * prod_k s_k^(n_k).
    pub fn offspring_pgf(&self, i: usize, s: &[f64]) -> Result<f64> {
        if i >= self.d {
            return Err(Error::TypeIndex {
                index: i,
                d: self.d,
            });
        }
        debug_assert_eq!(s.len(), self.d);
        let mut total = 0.0;
        for atom in &self.offspring[i].atoms {
            let mut term = atom.p;
            for (k, &count) in atom.n.iter().enumerate() {
                if count > 0 {
                    term *= s[k].powi(count as i32);
                }
            }
            total += term;
        }
        Ok(total)
    }

    /// First and second factorial moments of every type's offspring law.
    pub fn offspring_moments(&self) -> OffspringMoments {
        let d = self.d;
        let mean = DMatrix::from_fn(d, d, |i, j| {
            self.offspring[i]
                .atoms
                .iter()
                .map(|a| a.p * a.n[j] as f64)
                .sum()
        });
        let fact2 = (0..d)
            .map(|i| {
                DMatrix::from_fn(d, d, |j, k| {
                    self.offspring[i]
                        .atoms
                        .iter()
                        .map(|a| {
                            let nj = a.n[j] as f64;
                            let nk = a.n[k] as f64;
                            let delta = if j == k { 1.0 } else { 0.0 };
                            a.p * nj * (nk - delta)
                        })
                        .sum()
                })
            })
            .collect();
        OffspringMoments { mean, fact2 }
    }

    /// Two-type process with caller-provided offspring laws for both types.
    pub fn example1(law_type1: OffspringLaw, law_type2: OffspringLaw) -> Result<Self> {
        ProcessSpec::new(
            vec!["T1".into(), "T2".into()],
            vec![law_type1, law_type2],
            None,
            TimeMode::Discrete,
        )
    }

    /// Two-type reducible progenitor/differentiated-cell model. A type-1
    /// cell dies with probability `p0`, splits into two type-1 cells with
    /// probability `p1`, or turns into a single type-2 cell with
    /// probability `p2`; type-2 cells produce no offspring. With lifespan
    /// laws the model runs in continuous time, otherwise per generation.
    pub fn example2(
        p0: f64,
        p1: f64,
        p2: f64,
        lifespans: Option<(LifespanLaw, LifespanLaw)>,
    ) -> Result<Self> {
        for (name, v) in [("p0", p0), ("p1", p1), ("p2", p2)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must lie in [0,1], got {v}"
                )));
            }
        }
        let sum = p0 + p1 + p2;
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Parameter(format!(
                "p0+p1+p2 must equal 1 within {PROB_SUM_TOL:e}, got {sum}"
            )));
        }
        let progenitor = OffspringLaw::new(vec![
            (p0, vec![0, 0]),
            (p1, vec![2, 0]),
            (p2, vec![0, 1]),
        ]);
        let differentiated = OffspringLaw::new(vec![(1.0, vec![0, 0])]);
        let (lifespans, time_mode) = match lifespans {
            Some((g1, g2)) => (Some(vec![g1, g2]), TimeMode::Continuous),
            None => (None, TimeMode::Discrete),
        };
        ProcessSpec::new(
            vec!["T1".into(), "T2".into()],
            vec![progenitor, differentiated],
            lifespans,
            time_mode,
        )
    }

    /// Parse a spec from its JSON document form and validate it.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProcessSpec = serde_json::from_str(text)?;
        validate_spec(spec)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    fn collect_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let d = self.d;
        if d < 1 {
            out.push(Violation {
                path: "d".into(),
                message: "at least one type is required".into(),
            });
        }
        if self.type_names.len() != d {
            out.push(Violation {
                path: "types".into(),
                message: format!("expected {d} names, got {}", self.type_names.len()),
            });
        }
        if self.offspring.len() != d {
            out.push(Violation {
                path: "offspring".into(),
                message: format!("expected {d} laws, got {}", self.offspring.len()),
            });
        }
        for (i, law) in self.offspring.iter().enumerate() {
            if law.atoms.is_empty() {
                out.push(Violation {
                    path: format!("offspring[{i}]"),
                    message: "offspring law has no atoms".into(),
                });
                continue;
            }
            let mut sum = 0.0;
            for (a, atom) in law.atoms.iter().enumerate() {
                if !(atom.p >= 0.0) || !atom.p.is_finite() {
                    out.push(Violation {
                        path: format!("offspring[{i}].atoms[{a}].p"),
                        message: format!("probability must be >= 0 and finite, got {}", atom.p),
                    });
                }
                sum += atom.p;
                if atom.n.len() != d {
                    out.push(Violation {
                        path: format!("offspring[{i}].atoms[{a}].n"),
                        message: format!(
                            "offspring vector has length {}, expected {d}",
                            atom.n.len()
                        ),
                    });
                }
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                out.push(Violation {
                    path: format!("offspring[{i}]"),
                    message: format!(
                        "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL:e}"
                    ),
                });
            }
            for a in 0..law.atoms.len() {
                for b in (a + 1)..law.atoms.len() {
                    if law.atoms[a].n == law.atoms[b].n {
                        out.push(Violation {
                            path: format!("offspring[{i}].atoms[{b}].n"),
                            message: format!("duplicate offspring vector {:?}", law.atoms[b].n),
                        });
                    }
                }
            }
        }
        match (&self.lifespans, self.time_mode) {
            (None, TimeMode::Continuous) => out.push(Violation {
                path: "lifespans".into(),
                message: "continuous time mode requires lifespan laws for all types".into(),
            }),
            (Some(ls), _) => {
                if ls.len() != d {
                    out.push(Violation {
                        path: "lifespans".into(),
                        message: format!("expected {d} laws, got {}", ls.len()),
                    });
                }
                for (i, law) in ls.iter().enumerate() {
                    law.validate(&format!("lifespans[{i}]"), &mut out);
                }
            }
            (None, TimeMode::Discrete) => {}
        }
        out
    }

    /// Divide each law's probabilities by their exact sum, then nudge the
    /// largest atom so the floating-point sum is exactly 1.
    fn renormalize(&mut self) {
        for law in &mut self.offspring {
            let sum: f64 = law.atoms.iter().map(|a| a.p).sum();
            if sum > 0.0 {
                for atom in &mut law.atoms {
                    atom.p /= sum;
                }
            }
            for _ in 0..8 {
                let s: f64 = law.atoms.iter().map(|a| a.p).sum();
                if s == 1.0 {
                    break;
                }
                let residual = 1.0 - s;
                if let Some(largest) = law
                    .atoms
                    .iter_mut()
                    .max_by(|a, b| a.p.total_cmp(&b.p))
                {
                    largest.p += residual;
                }
            }
        }
    }
}

/// Validate all spec invariants; on success the returned spec has its atom
/// probabilities renormalized to a total mass of exactly 1 per type.
pub fn validate_spec(mut spec: ProcessSpec) -> Result<ProcessSpec> {
    let violations = spec.collect_violations();
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    spec.renormalize();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn example2_spec() -> ProcessSpec {
        ProcessSpec::example2(0.25, 0.40, 0.35, None).unwrap()
    }

    #[test]
    fn example2_is_valid_and_mass_is_exact() {
        let spec = example2_spec();
        for i in 0..2 {
            let ones = vec![1.0, 1.0];
            assert_eq!(spec.offspring_pgf(i, &ones).unwrap(), 1.0);
        }
    }

    #[test]
    fn probability_mass_error_is_reported() {
        let law = OffspringLaw::new(vec![(0.5, vec![1, 0]), (0.6, vec![0, 1])]);
        let err = ProcessSpec::new(
            vec!["a".into(), "b".into()],
            vec![law, OffspringLaw::new(vec![(1.0, vec![0, 0])])],
            None,
            TimeMode::Discrete,
        )
        .unwrap_err();
        match err {
            Error::InvalidSpec(v) => {
                assert!(v.iter().any(|x| x.message.contains("sum to 1.1")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dimension_and_duplicate_violations() {
        let law = OffspringLaw::new(vec![(0.5, vec![1]), (0.5, vec![1, 0])]);
        let err = ProcessSpec::new(
            vec!["a".into(), "b".into()],
            vec![law.clone(), law],
            None,
            TimeMode::Discrete,
        )
        .unwrap_err();
        let Error::InvalidSpec(v) = err else {
            panic!()
        };
        assert!(v.iter().any(|x| x.message.contains("length 1")));

        let dup = OffspringLaw::new(vec![(0.5, vec![1]), (0.5, vec![1])]);
        let err = ProcessSpec::new(vec!["a".into()], vec![dup], None, TimeMode::Discrete)
            .unwrap_err();
        let Error::InvalidSpec(v) = err else {
            panic!()
        };
        assert!(v.iter().any(|x| x.message.contains("duplicate")));
    }

    #[test]
    fn missing_lifespans_rejected_in_continuous_mode() {
        let law = OffspringLaw::new(vec![(1.0, vec![1])]);
        let err = ProcessSpec::new(vec!["a".into()], vec![law], None, TimeMode::Continuous)
            .unwrap_err();
        let Error::InvalidSpec(v) = err else {
            panic!()
        };
        assert!(v.iter().any(|x| x.path == "lifespans"));
    }

    #[test]
    fn one_type_identity_process_is_valid() {
        let spec = ProcessSpec::new(
            vec!["only".into()],
            vec![OffspringLaw::new(vec![(1.0, vec![1])])],
            None,
            TimeMode::Discrete,
        )
        .unwrap();
        let m = spec.offspring_moments();
        assert_eq!(m.mean[(0, 0)], 1.0);
        assert_eq!(m.fact2[0][(0, 0)], 0.0);
    }

    #[test]
    fn pgf_values_for_example2() {
        let spec = example2_spec();
        assert_relative_eq!(
            spec.offspring_pgf(0, &[0.0, 0.0]).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        // Type 2 produces nothing, so its pgf is identically 1.
        for s in [[0.0, 0.0], [0.3, 0.9], [1.0, 1.0]] {
            assert_eq!(spec.offspring_pgf(1, &s).unwrap(), 1.0);
        }
        assert!(matches!(
            spec.offspring_pgf(2, &[1.0, 1.0]),
            Err(Error::TypeIndex { index: 2, d: 2 })
        ));
    }

    #[test]
    fn offspring_moments_for_example2() {
        let m = example2_spec().offspring_moments();
        assert_relative_eq!(m.mean[(0, 0)], 0.80, epsilon = 1e-15);
        assert_relative_eq!(m.mean[(0, 1)], 0.35, epsilon = 1e-15);
        assert_eq!(m.mean[(1, 0)], 0.0);
        assert_eq!(m.mean[(1, 1)], 0.0);
        assert_relative_eq!(m.fact2[0][(0, 0)], 0.80, epsilon = 1e-15);
        for (j, k) in [(0, 1), (1, 0), (1, 1)] {
            assert_eq!(m.fact2[0][(j, k)], 0.0);
        }
        assert_eq!(m.fact2[1].amax(), 0.0);
    }

    #[test]
    fn hand_expanded_second_factorial_moment() {
        // One type, children 0 or 2 with equal probability:
        // E{n(n-1)} = 0.5*0 + 0.5*2 = 1.
        let spec = ProcessSpec::new(
            vec!["only".into()],
            vec![OffspringLaw::new(vec![(0.5, vec![0]), (0.5, vec![2])])],
            None,
            TimeMode::Discrete,
        )
        .unwrap();
        let m = spec.offspring_moments();
        assert_relative_eq!(m.mean[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.fact2[0][(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fact2_is_symmetric_exactly() {
        let m = example2_spec().offspring_moments();
        for b in &m.fact2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(b[(j, k)], b[(k, j)]);
                }
            }
        }
    }

    /// Offspring mean and second factorial moments must match central
    /// finite differences of the pgf at the all-ones point.
    #[test]
    fn moments_match_pgf_finite_differences() {
        let mut specs = vec![example2_spec()];
        specs.push(
            ProcessSpec::example1(
                OffspringLaw::new(vec![(0.2, vec![0, 0]), (0.5, vec![1, 1]), (0.3, vec![3, 0])]),
                OffspringLaw::new(vec![(0.6, vec![0, 1]), (0.4, vec![2, 2])]),
            )
            .unwrap(),
        );
        let h = 1e-5;
        for spec in &specs {
            let m = spec.offspring_moments();
            let d = spec.d;
            for i in 0..d {
                let pgf = |s: &[f64]| spec.offspring_pgf(i, s).unwrap();
                for j in 0..d {
                    let mut up = vec![1.0; d];
                    let mut dn = vec![1.0; d];
                    up[j] += h;
                    dn[j] -= h;
                    let fd = (pgf(&up) - pgf(&dn)) / (2.0 * h);
                    assert_relative_eq!(fd, m.mean[(i, j)], epsilon = 1e-6);
                    for k in 0..d {
                        let fd2 = if j == k {
                            let mid = vec![1.0; d];
                            (pgf(&up) - 2.0 * pgf(&mid) + pgf(&dn)) / (h * h)
                        } else {
                            let mut pp = vec![1.0; d];
                            let mut pm = vec![1.0; d];
                            let mut mp = vec![1.0; d];
                            let mut mm = vec![1.0; d];
                            pp[j] += h;
                            pp[k] += h;
                            pm[j] += h;
                            pm[k] -= h;
                            mp[j] -= h;
                            mp[k] += h;
                            mm[j] -= h;
                            mm[k] -= h;
                            (pgf(&pp) - pgf(&pm) - pgf(&mp) + pgf(&mm)) / (4.0 * h * h)
                        };
                        // Second factorial moment = second derivative for
                        // j != k; for j == k they coincide as well because
                        // d^2/ds^2 s^n = n(n-1) s^(n-2).
                        assert_relative_eq!(fd2, m.fact2[i][(j, k)], epsilon = 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn builtin_example2_rejects_bad_parameters() {
        assert!(matches!(
            ProcessSpec::example2(0.5, 0.6, 0.2, None),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            ProcessSpec::example2(-0.1, 0.9, 0.2, None),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn json_round_trip_preserves_spec() {
        let spec = ProcessSpec::example2(
            0.25,
            0.40,
            0.35,
            Some((
                LifespanLaw::Deterministic { tau: 1.0 },
                LifespanLaw::Exponential { rate: 2.0 },
            )),
        )
        .unwrap();
        let text = spec.to_json();
        let back = ProcessSpec::from_json(&text).unwrap();
        assert_eq!(spec, back);
        // The documented field names are present.
        assert!(text.contains("\"types\""));
        assert!(text.contains("\"time_mode\""));
        assert!(text.contains("\"kind\""));
    }

    #[test]
    fn renormalization_absorbs_text_round_trip_drift() {
        // Probabilities that sum to 1 only within 1e-12.
        let law = OffspringLaw::new(vec![
            (0.1, vec![0]),
            (0.2, vec![1]),
            (0.7 + 4e-13, vec![2]),
        ]);
        let spec =
            ProcessSpec::new(vec!["x".into()], vec![law], None, TimeMode::Discrete).unwrap();
        let total: f64 = spec.offspring[0].atoms.iter().map(|a| a.p).sum();
        assert_eq!(total, 1.0);
    }
}
