//! Beamformer recovery from solved SDP blocks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, ComplexVector};

/// `sqrt(lambda_1) v_1` and `lambda_2 / lambda_1`.
pub fn extract_rank1(block: &ComplexMatrix) -> Result<(ComplexVector, f64)> {
    numerics::principal_rank1(block)
}

/// SINR model shared by all modes: user `k` receives `c_k^H v_m` from beam `m`,
/// and the radiated power of beam `v` is `v^H Z v` (`Z = I` when `cost` is `None`).
#[derive(Debug, Clone)]
pub struct SinrContext {
    pub channels: Vec<ComplexVector>,
    pub targets: Vec<f64>,
    pub noise: Vec<f64>,
    pub cost: Option<ComplexMatrix>,
}

impl SinrContext {
    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    fn check(&self, vectors: &[ComplexVector]) -> Result<()> {
        let k = self.channels.len();
        if self.targets.len() != k || self.noise.len() != k {
            return Err(Error::Dimension("targets/noise do not match channel count".into()));
        }
        if vectors.len() != k {
            return Err(Error::Dimension(format!("{} beams for {k} users", vectors.len())));
        }
        for (v, c) in vectors.iter().zip(&self.channels) {
            if v.len() != c.len() {
                return Err(Error::Dimension(format!(
                    "beam length {} != channel length {}",
                    v.len(),
                    c.len()
                )));
            }
        }
        Ok(())
    }

    pub fn beam_power(&self, v: &ComplexVector) -> f64 {
        match &self.cost {
            Some(z) => v.dotc(&(z * v)).re,
            None => v.norm_squared(),
        }
    }

    pub fn total_power(&self, vectors: &[ComplexVector]) -> f64 {
        vectors.iter().map(|v| self.beam_power(v)).sum()
    }

    pub fn sinrs(&self, vectors: &[ComplexVector]) -> Vec<f64> {
        self.channels
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let gains: Vec<f64> = vectors.iter().map(|v| c.dotc(v).norm_sqr()).collect();
                let interference: f64 = gains
                    .iter()
                    .enumerate()
                    .filter(|(m, _)| *m != k)
                    .map(|(_, g)| g)
                    .sum();
                gains[k] / (interference + self.noise[k])
            })
            .collect()
    }
}

/// Minimum per-beam powers `p` such that beams `sqrt(p_m) d_m` meet every SINR
/// target with equality.
///
/// With `a_km = |c_k^H d_m|^2` the targets read `(I - F) p >= u`, where
/// `F_km = delta_k a_km / a_kk` (`m != k`) and `u_k = delta_k sigma_k^2 / a_kk`.
/// A positive solution of the equality system exists exactly when the targets
/// are attainable, and it is then the componentwise-smallest feasible `p`.
pub fn power_control(ctx: &SinrContext, directions: &[ComplexVector]) -> Result<Vec<f64>> {
    ctx.check(directions)?;
    let k = ctx.num_users();
    let a = DMatrix::from_fn(k, k, |u, m| ctx.channels[u].dotc(&directions[m]).norm_sqr());
    if (0..k).any(|u| !(a[(u, u)] > 0.0)) {
        return Err(Error::Infeasible("a beam has no gain toward its user".into()));
    }
    let mut sys = DMatrix::<f64>::identity(k, k);
    let mut rhs = nalgebra::DVector::zeros(k);
    for u in 0..k {
        for m in 0..k {
            if m != u {
                sys[(u, m)] = -ctx.targets[u] * a[(u, m)] / a[(u, u)];
            }
        }
        rhs[u] = ctx.targets[u] * ctx.noise[u] / a[(u, u)];
    }
    let p = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Infeasible("singular power-control system".into()))?;
    if p.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Infeasible("SINR targets unattainable with these beam directions".into()));
    }
    Ok(p.iter().copied().collect())
}

fn rescale(ctx: &SinrContext, directions: &[ComplexVector]) -> Result<Vec<ComplexVector>> {
    let unit: Vec<ComplexVector> = directions
        .iter()
        .map(|d| {
            let n = d.norm();
            if n > 0.0 {
                d.unscale(n)
            } else {
                d.clone()
            }
        })
        .collect();
    let p = power_control(ctx, &unit)?;
    Ok(unit.iter().zip(&p).map(|(d, p)| d.scale(p.sqrt())).collect())
}

#[derive(Debug, Clone)]
pub struct Recovered {
    pub vectors: Vec<ComplexVector>,
    pub power: f64,
    /// 0 for the principal eigenvectors, otherwise the random trial index.
    pub trial: usize,
}

/// Recovers feasible beams from solved blocks: the principal eigenvectors
/// first, then `trials` Gaussian draws `V Lambda^{1/2} xi` per block. Each
/// candidate set of directions is re-powered with [`power_control`] and the
/// cheapest feasible one is returned.
pub fn randomize_and_rescale<R: Rng>(
    blocks: &[ComplexMatrix],
    ctx: &SinrContext,
    trials: usize,
    rng: &mut R,
) -> Result<Recovered> {
    if blocks.len() != ctx.num_users() {
        return Err(Error::Dimension(format!(
            "{} blocks for {} users",
            blocks.len(),
            ctx.num_users()
        )));
    }
    let eigs: Vec<numerics::HermitianEig> = blocks
        .iter()
        .map(numerics::hermitian_eig)
        .collect::<Result<_>>()?;
    let principal: Vec<ComplexVector> = eigs
        .iter()
        .map(|e| {
            let l = e.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
            e.eigenvectors.column(0).scale(l.sqrt())
        })
        .collect();

    let mut best: Option<Recovered> = None;
    let mut consider = |dirs: Vec<ComplexVector>, trial: usize| {
        if let Ok(vectors) = rescale(ctx, &dirs) {
            let power = ctx.total_power(&vectors);
            if best.as_ref().is_none_or(|b| power < b.power) {
                best = Some(Recovered {
                    vectors,
                    power,
                    trial,
                });
            }
        }
    };
    consider(principal, 0);
    for t in 1..=trials {
        let dirs = eigs
            .iter()
            .map(|e| {
                let n = e.dim();
                let xi = ComplexVector::from_fn(n, |i, _| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    Complex64::new(re, im) * e.eigenvalues[i].max(0.0).sqrt()
                });
                &e.eigenvectors * xi
            })
            .collect();
        consider(dirs, t);
    }
    best.ok_or_else(|| Error::Infeasible("no recovery trial met the SINR targets".into()))
}

/// Scales all beams by one common factor until every SINR target is met, if
/// the interference-limited ceiling allows it.
pub fn uniform_upscale(ctx: &SinrContext, vectors: &[ComplexVector]) -> Result<Vec<ComplexVector>> {
    ctx.check(vectors)?;
    // SINR_k(c) = c^2 s_k / (c^2 i_k + n_k) >= d_k  <=>  c^2 (s_k - d_k i_k) >= d_k n_k.
    let mut c2: f64 = 0.0;
    for (k, ch) in ctx.channels.iter().enumerate() {
        let gains: Vec<f64> = vectors.iter().map(|v| ch.dotc(v).norm_sqr()).collect();
        let signal = gains[k];
        let interference: f64 = gains.iter().sum::<f64>() - signal;
        let margin = signal - ctx.targets[k] * interference;
        if !(margin > 0.0) {
            return Err(Error::Infeasible(format!("user {k} is interference limited")));
        }
        c2 = c2.max(ctx.targets[k] * ctx.noise[k] / margin);
    }
    let c = c2.sqrt();
    Ok(vectors.iter().map(|v| v.scale(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c64;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(n: usize, rng: &mut impl Rng) -> ComplexVector {
        ComplexVector::from_fn(n, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn single_user_rescale_hits_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_cvec(6, &mut rng);
        let ctx = SinrContext {
            channels: vec![g.clone()],
            targets: vec![7.0],
            noise: vec![0.01],
            cost: None,
        };
        let block = numerics::outer(&random_cvec(6, &mut rng)) + numerics::outer(&random_cvec(6, &mut rng));
        let rec = randomize_and_rescale(&[block], &ctx, 10, &mut rng).unwrap();
        let d = &rec.vectors[0];
        let unit = d.unscale(d.norm());
        let expected = 7.0 * 0.01 / g.norm_squared() * (g.norm_squared() / g.dotc(&unit).norm_sqr());
        assert_relative_eq!(rec.power, expected, max_relative = 1e-12);
        assert_relative_eq!(ctx.sinrs(&rec.vectors)[0], 7.0, max_relative = 1e-10);
    }

    #[test]
    fn rank_one_input_is_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_cvec(4, &mut rng);
        let ctx = SinrContext {
            channels: vec![g.clone()],
            targets: vec![1.0],
            noise: vec![1.0],
            cost: None,
        };
        let p = 1.0 / g.norm_squared();
        let x = g.scale(p.sqrt() / g.norm());
        let rec = randomize_and_rescale(&[numerics::outer(&x)], &ctx, 5, &mut rng).unwrap();
        assert_eq!(rec.trial, 0);
        assert_relative_eq!(rec.power, p, max_relative = 1e-10);
        assert!((rec.vectors[0].dotc(&x).norm() - x.norm_squared()).abs() <= 1e-9 * x.norm_squared());
    }

    #[test]
    fn power_control_meets_targets_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let chans: Vec<_> = (0..3).map(|_| random_cvec(5, &mut rng)).collect();
            let ctx = SinrContext {
                channels: chans.clone(),
                targets: vec![0.5, 1.0, 2.0],
                noise: vec![0.1; 3],
                cost: None,
            };
            let dirs: Vec<_> = chans.iter().map(|c| c.unscale(c.norm())).collect();
            if let Ok(p) = power_control(&ctx, &dirs) {
                let beams: Vec<_> = dirs.iter().zip(&p).map(|(d, p)| d.scale(p.sqrt())).collect();
                for (s, t) in ctx.sinrs(&beams).iter().zip(&ctx.targets) {
                    assert_relative_eq!(*s, *t, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn colinear_users_with_high_targets_fail() {
        let g = ComplexVector::from_element(3, c64(1.0, 0.0));
        let ctx = SinrContext {
            channels: vec![g.clone(), g.clone()],
            targets: vec![2.0, 2.0],
            noise: vec![1.0, 1.0],
            cost: None,
        };
        assert!(power_control(&ctx, &[g.clone(), g.clone()]).is_err());
        assert!(uniform_upscale(&ctx, &[g.clone(), g.clone()]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = numerics::outer(&g);
        assert!(randomize_and_rescale(&[block.clone(), block], &ctx, 3, &mut rng).is_err());
    }

    #[test]
    fn uniform_upscale_meets_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chans: Vec<_> = (0..2).map(|_| random_cvec(4, &mut rng)).collect();
        let ctx = SinrContext {
            channels: chans.clone(),
            targets: vec![0.3, 0.3],
            noise: vec![1.0, 1.0],
            cost: None,
        };
        let beams = uniform_upscale(&ctx, &chans).unwrap();
        let s = ctx.sinrs(&beams);
        assert!(s.iter().all(|x| *x >= 0.3 * (1.0 - 1e-12)));
        assert!(s.iter().any(|x| (x - 0.3).abs() <= 1e-10));
    }

    #[test]
    fn weighted_cost_is_used_for_power() {
        let ctx = SinrContext {
            channels: vec![ComplexVector::from_element(2, c64(1.0, 0.0))],
            targets: vec![1.0],
            noise: vec![1.0],
            cost: Some(ComplexMatrix::identity(2, 2).scale(3.0)),
        };
        let v = ComplexVector::from_element(2, c64(1.0, 0.0));
        assert_relative_eq!(ctx.beam_power(&v), 6.0);
    }
}
