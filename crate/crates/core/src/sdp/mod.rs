//! Semidefinite programs of the form
//!
//! ```text
//! minimize    sum_m Tr(C_m X_m)
//! subject to  sum_m Tr(F_{k,m} X_m) >= b_k,   k = 1..K
//!             X_m Hermitian PSD
//! ```
//!
//! solved by a dense primal-dual interior-point method, plus recovery of
//! rank-one beamformers from the solved blocks.

mod dump;
mod ipm;
mod recovery;

pub use dump::{parse_problem, write_problem};
pub use recovery::{
    extract_rank1, power_control, randomize_and_rescale, uniform_upscale, Recovered, SinrContext,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix};

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// `sum over terms of Tr(F X_block) >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpConstraint {
    pub terms: Vec<(usize, ComplexMatrix)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub objective: Vec<ComplexMatrix>,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    pub fn new(objective: Vec<ComplexMatrix>, constraints: Vec<SdpConstraint>) -> Result<Self> {
        let problem = Self {
            block_dims: objective.iter().map(|c| c.nrows()).collect(),
            objective,
            constraints,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_dims.is_empty() {
            return Err(Error::Invalid("problem has no variables".into()));
        }
        if self.objective.len() != self.block_dims.len() {
            return Err(Error::Dimension(format!(
                "{} objective blocks for {} variables",
                self.objective.len(),
                self.block_dims.len()
            )));
        }
        for (m, (c, &n)) in self.objective.iter().zip(&self.block_dims).enumerate() {
            check_coefficient(c, n, &format!("objective block {m}"))?;
            let scale = c.norm().max(1.0);
            if n > 0 && numerics::min_eigenvalue(&numerics::real_embedding(c)) < -PSD_TOL * scale {
                return Err(Error::Invalid(format!("objective block {m} is not PSD")));
            }
        }
        for (k, con) in self.constraints.iter().enumerate() {
            if !con.rhs.is_finite() {
                return Err(Error::Invalid(format!("constraint {k} has non-finite rhs")));
            }
            for (m, f) in &con.terms {
                let n = *self.block_dims.get(*m).ok_or_else(|| {
                    Error::Dimension(format!("constraint {k} refers to missing variable {m}"))
                })?;
                check_coefficient(f, n, &format!("constraint {k}, variable {m}"))?;
            }
        }
        Ok(())
    }

    /// `sum_m Tr(F_{k,m} X_m)` for each constraint.
    pub fn constraint_values(&self, blocks: &[ComplexMatrix]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|con| {
                con.terms
                    .iter()
                    .map(|(m, f)| numerics::trace_product(f, &blocks[*m]))
                    .sum()
            })
            .collect()
    }

    pub fn objective_value(&self, blocks: &[ComplexMatrix]) -> f64 {
        self.objective
            .iter()
            .zip(blocks)
            .map(|(c, x)| numerics::trace_product(c, x))
            .sum()
    }

    /// Constraint slack relative to the size of its terms; negative means violated.
    pub fn relative_residuals(&self, blocks: &[ComplexMatrix]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|con| {
                let parts: Vec<f64> = con
                    .terms
                    .iter()
                    .map(|(m, f)| numerics::trace_product(f, &blocks[*m]))
                    .collect();
                let lhs: f64 = parts.iter().sum();
                let scale = parts
                    .iter()
                    .map(|p| p.abs())
                    .sum::<f64>()
                    .max(con.rhs.abs())
                    .max(f64::MIN_POSITIVE);
                (lhs - con.rhs) / scale
            })
            .collect()
    }
}

fn check_coefficient(m: &ComplexMatrix, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    numerics::ensure_finite(m, what)?;
    if !numerics::is_hermitian(m, HERMITIAN_TOL * m.norm().max(1.0)) {
        return Err(Error::Invalid(format!("{what} is not Hermitian")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    /// Relative primal and dual residual tolerance.
    pub tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Threshold for the Farkas residual and for `tau / kappa`.
    pub infeasibility_tol: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            gap_tol: 1e-6,
            max_iter: 100,
            infeasibility_tol: 1e-8,
        }
    }
}

/// Dual ray proving primal infeasibility: `y >= 0` with `b^T y = 1` and
/// `sum_k y_k F_k` negative semidefinite up to `residual`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarkasCertificate {
    pub ray: Vec<f64>,
    pub ray_norm: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub blocks: Vec<ComplexMatrix>,
    pub objective_value: f64,
    pub dual_objective: f64,
    pub status: SdpStatus,
    /// `|primal - dual| / max(|primal|, |dual|)`.
    pub duality_gap: f64,
    /// See [`SdpProblem::relative_residuals`].
    pub constraint_residuals: Vec<f64>,
    /// Dual multipliers, one per constraint.
    pub dual: Vec<f64>,
    /// `C_m - sum_k y_k F_{k,m}`.
    pub dual_slacks: Vec<ComplexMatrix>,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub certificate: Option<FarkasCertificate>,
}

pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    problem.validate()?;
    if !(settings.tol > 0.0 && settings.gap_tol > 0.0 && settings.infeasibility_tol > 0.0) {
        return Err(Error::Invalid("solver tolerances must be positive".into()));
    }
    if settings.max_iter == 0 {
        return Err(Error::Invalid("max_iter must be at least 1".into()));
    }
    ipm::solve(problem, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c64;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> ComplexMatrix {
        DMatrix::from_element(1, 1, c64(v, 0.0))
    }

    fn tight() -> SdpSettings {
        SdpSettings {
            tol: 1e-10,
            gap_tol: 1e-10,
            ..SdpSettings::default()
        }
    }

    #[test]
    fn scalar_lp() {
        for (a, b) in [(2.0, 3.0), (0.5, 7.0), (1e3, 1e-3)] {
            let p = SdpProblem::new(
                vec![scalar(1.0)],
                vec![SdpConstraint {
                    terms: vec![(0, scalar(a))],
                    rhs: b,
                }],
            )
            .unwrap();
            let sol = solve(&p, &tight()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal);
            assert_relative_eq!(sol.objective_value, b / a, max_relative = 1e-8);
            assert_relative_eq!(sol.dual[0], 1.0 / a, max_relative = 1e-7);
        }
    }

    fn random_channel(n: usize, rng: &mut impl Rng) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_fn(n, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn single_user_beamforming_matches_mrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1, 2, 5, 8] {
            let g = random_channel(n, &mut rng);
            let (delta, sigma2) = (3.0, 0.2);
            let gamma = numerics::outer(&g);
            let p = SdpProblem::new(
                vec![ComplexMatrix::identity(n, n)],
                vec![SdpConstraint {
                    terms: vec![(0, gamma)],
                    rhs: delta * sigma2,
                }],
            )
            .unwrap();
            let sol = solve(&p, &tight()).unwrap();
            let norm2 = g.norm_squared();
            let power = delta * sigma2 / norm2;
            assert_eq!(sol.status, SdpStatus::Optimal);
            assert_relative_eq!(sol.objective_value, power, max_relative = 1e-8);
            let want = numerics::outer(&g).scale(power / norm2);
            assert!((&sol.blocks[0] - want).norm() <= 1e-6 * power);
        }
    }

    #[test]
    fn negative_trace_constraint_is_infeasible() {
        let p = SdpProblem::new(
            vec![ComplexMatrix::identity(3, 3)],
            vec![SdpConstraint {
                terms: vec![(0, -ComplexMatrix::identity(3, 3))],
                rhs: 1.0,
            }],
        )
        .unwrap();
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.certificate.expect("certificate");
        assert!(cert.residual <= 1e-8);
        assert!(cert.ray.iter().all(|y| *y >= 0.0));
        assert_relative_eq!(cert.ray[0] * 1.0, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn zero_row_with_positive_rhs_is_infeasible() {
        let p = SdpProblem::new(
            vec![ComplexMatrix::identity(2, 2)],
            vec![SdpConstraint {
                terms: vec![(0, ComplexMatrix::zeros(2, 2))],
                rhs: 1.0,
            }],
        )
        .unwrap();
        assert_eq!(solve(&p, &SdpSettings::default()).unwrap().status, SdpStatus::Infeasible);
    }

    #[test]
    fn unconstrained_problem_has_zero_optimum() {
        let p = SdpProblem::new(vec![ComplexMatrix::identity(2, 2)], vec![]).unwrap();
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-8);
    }

    fn two_user_problem(
        channels: &[nalgebra::DVector<Complex64>],
        deltas: &[f64],
        sigma2: f64,
    ) -> SdpProblem {
        let n = channels[0].len();
        let k = channels.len();
        let constraints = (0..k)
            .map(|u| {
                let g = numerics::outer(&channels[u]);
                SdpConstraint {
                    terms: (0..k)
                        .map(|m| (m, if m == u { g.clone() } else { g.scale(-deltas[u]) }))
                        .collect(),
                    rhs: deltas[u] * sigma2,
                }
            })
            .collect();
        SdpProblem::new(vec![ComplexMatrix::identity(n, n); k], constraints).unwrap()
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let chans: Vec<_> = (0..3).map(|_| random_channel(4, &mut rng)).collect();
            let p = two_user_problem(&chans, &[1.0, 2.0, 0.5], 0.1);
            let sol = solve(&p, &SdpSettings::default()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal);
            assert!(sol.duality_gap <= 1e-6);
            assert!(sol.constraint_residuals.iter().all(|r| *r >= -1e-8));
            assert!(sol.dual.iter().all(|y| *y >= -1e-12));
            let scale = sol.objective_value.abs();
            for (x, s) in sol.blocks.iter().zip(&sol.dual_slacks) {
                assert!(numerics::trace_product(x, s) <= 1e-6 * scale);
                assert!(numerics::min_eigenvalue(&numerics::real_embedding(x)) >= -1e-8 * scale);
                assert!(numerics::min_eigenvalue(&numerics::real_embedding(s)) >= -1e-8);
            }
            // Dual slack is C - sum y F.
            for m in 0..3 {
                let mut s = p.objective[m].clone();
                for (con, y) in p.constraints.iter().zip(&sol.dual) {
                    for (b, f) in &con.terms {
                        if *b == m {
                            s -= f.scale(*y);
                        }
                    }
                }
                let err = (s - &sol.dual_slacks[m]).norm();
                assert!(err <= 1e-7 * p.objective[m].norm(), "dual slack mismatch {err}");
            }
        }
    }

    #[test]
    fn channel_scaling_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let chans: Vec<_> = (0..2).map(|_| random_channel(3, &mut rng)).collect();
        let scaled: Vec<_> = chans.iter().map(|g| g.scale(10.0)).collect();
        let a = solve(&two_user_problem(&chans, &[3.0, 3.0], 1.0), &tight()).unwrap();
        let b = solve(&two_user_problem(&scaled, &[3.0, 3.0], 1.0), &tight()).unwrap();
        assert_relative_eq!(a.objective_value / b.objective_value, 100.0, max_relative = 1e-8);
    }

    #[test]
    fn validation_errors() {
        let bad = ComplexMatrix::from_row_slice(2, 2, &[c64(1.0, 0.0), c64(0.0, 1.0), c64(0.0, 1.0), c64(1.0, 0.0)]);
        assert!(SdpProblem::new(vec![bad], vec![]).is_err());
        assert!(SdpProblem::new(vec![-ComplexMatrix::identity(2, 2)], vec![]).is_err());
        let p = SdpProblem {
            block_dims: vec![2],
            objective: vec![ComplexMatrix::identity(2, 2)],
            constraints: vec![SdpConstraint {
                terms: vec![(1, ComplexMatrix::identity(2, 2))],
                rhs: 1.0,
            }],
        };
        assert!(p.validate().is_err());
        let ok = SdpProblem::new(vec![ComplexMatrix::identity(2, 2)], vec![]).unwrap();
        let settings = SdpSettings {
            tol: 0.0,
            ..SdpSettings::default()
        };
        assert!(solve(&ok, &settings).is_err());
    }
}
