//! Fully digital (FD) beamforming and the DMA alternating optimization, with
//! and without the Lorentzian constraint on element weights.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelVector;
use crate::dma::{self, DmaState};
use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, ComplexVector};
use crate::sdp::{self, SdpConstraint, SdpProblem, SdpSettings, SdpStatus, SinrContext};

/// Relative weight of the identity added to `Z` and to the weight-SDP cost.
const COST_REGULARIZATION: f64 = 1e-12;

/// Residual level at which a precoder SDP that ran out of iterations still
/// counts as solved. The recovered beams are re-checked against the SINR
/// targets regardless.
const NEAR_OPTIMAL_RESIDUAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fully digital array at half-wavelength spacing.
    Fd,
    /// Fully digital array at the DMA element spacing.
    Op1,
    Dma,
    /// DMA architecture with unrestricted complex weights.
    Uw,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Fd, Mode::Op1, Mode::Dma, Mode::Uw];

    pub fn is_digital(self) -> bool {
        matches!(self, Mode::Fd | Mode::Op1)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fd => "fd",
            Mode::Op1 => "op1",
            Mode::Dma => "dma",
            Mode::Uw => "uw",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fd" => Ok(Mode::Fd),
            "op1" => Ok(Mode::Op1),
            "dma" => Ok(Mode::Dma),
            "uw" | "op2-uw" => Ok(Mode::Uw),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// SINR threshold for a rate requirement in bits/s/Hz: `2^R - 1`.
pub fn sinr_target(rate_bits: f64) -> f64 {
    rate_bits.exp2() - 1.0
}

#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub channels: Vec<ChannelVector>,
    pub targets: Vec<f64>,
    pub noise_powers: Vec<f64>,
    pub dma: Option<DmaState>,
    pub mode: Mode,
}

impl ScenarioInstance {
    pub fn new(
        channels: Vec<ChannelVector>,
        targets: Vec<f64>,
        noise_powers: Vec<f64>,
        dma: Option<DmaState>,
        mode: Mode,
    ) -> Result<Self> {
        let k = channels.len();
        if k == 0 {
            return Err(Error::Invalid("need at least one user".into()));
        }
        if targets.len() != k || noise_powers.len() != k {
            return Err(Error::Dimension(format!(
                "{k} users but {} targets and {} noise powers",
                targets.len(),
                noise_powers.len()
            )));
        }
        if targets.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Invalid("SINR targets must be positive".into()));
        }
        if noise_powers.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid("noise powers must be positive".into()));
        }
        let n = channels[0].len();
        if n == 0 || channels.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("channels must share a non-zero length".into()));
        }
        if !mode.is_digital() {
            let state = dma
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("mode {mode} needs a DMA state")))?;
            if state.num_elements() != n {
                return Err(Error::Dimension(format!(
                    "channel length {n} != {} DMA elements",
                    state.num_elements()
                )));
            }
            if k > state.num_rf_chains() {
                return Err(Error::Invalid(format!(
                    "{k} users exceed {} RF chains",
                    state.num_rf_chains()
                )));
            }
        }
        Ok(Self {
            channels,
            targets,
            noise_powers,
            dma,
            mode,
        })
    }

    /// Uniform rate requirement and noise power for every user.
    pub fn with_rate(
        channels: Vec<ChannelVector>,
        rate_bits: f64,
        noise_watts: f64,
        dma: Option<DmaState>,
        mode: Mode,
    ) -> Result<Self> {
        let k = channels.len();
        Self::new(
            channels,
            vec![sinr_target(rate_bits); k],
            vec![noise_watts; k],
            dma,
            mode,
        )
    }

    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    /// Number of precoders, `min(K, N_r)` for DMA modes and `K` otherwise.
    pub fn num_streams(&self) -> usize {
        match (&self.dma, self.mode.is_digital()) {
            (Some(d), false) => self.num_users().min(d.num_rf_chains()),
            _ => self.num_users(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformStatus {
    Converged,
    Infeasible,
    MaxIter,
}

impl BeamformStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BeamformStatus::Converged => "converged",
            BeamformStatus::Infeasible => "infeasible",
            BeamformStatus::MaxIter => "max_iter",
        }
    }
}

impl fmt::Display for BeamformStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct BeamformingResult {
    pub precoders: Vec<ComplexVector>,
    pub weights: Option<ComplexVector>,
    pub tx_power_watts: f64,
    pub achieved_sinrs: Vec<f64>,
    pub iterations: usize,
    /// Best feasible power after initialization and after each outer iteration.
    pub power_trace: Vec<f64>,
    pub status: BeamformStatus,
    /// `lambda_2 / lambda_1` of every extracted block, in solve order.
    pub rank_ratios: Vec<f64>,
}

impl BeamformingResult {
    fn infeasible(k: usize, iterations: usize, rank_ratios: Vec<f64>) -> Self {
        Self {
            precoders: Vec::new(),
            weights: None,
            tx_power_watts: f64::NAN,
            achieved_sinrs: vec![0.0; k],
            iterations,
            power_trace: Vec::new(),
            status: BeamformStatus::Infeasible,
            rank_ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub sdp: SdpSettings,
    /// Outer iteration budget `T` of the alternating optimization.
    pub max_outer: usize,
    /// Relative improvement of the best power below which an iteration counts as stalled.
    pub early_stop_tol: f64,
    /// Consecutive stalled iterations before stopping.
    pub early_stop_patience: usize,
    /// Fresh weight initializations tried when the first is infeasible.
    pub init_retries: usize,
    /// Gaussian trials in beam recovery when a block is not rank one.
    pub randomization_trials: usize,
    /// Rank ratio under which a block is treated as rank one.
    pub rank_tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            sdp: SdpSettings {
                tol: 1e-10,
                gap_tol: 1e-9,
                max_iter: 100,
                infeasibility_tol: 1e-8,
            },
            max_outer: 20,
            early_stop_tol: 1e-4,
            early_stop_patience: 3,
            init_retries: 5,
            randomization_trials: 20,
            rank_tol: 1e-6,
            seed: 0,
        }
    }
}

/// Transmit power and per-user SINR of the given beams.
///
/// Digital modes radiate the precoders directly; DMA modes radiate `H Q w_m`,
/// using `weights` when given and the instance's DMA weights otherwise.
pub fn evaluate(
    instance: &ScenarioInstance,
    precoders: &[ComplexVector],
    weights: Option<&ComplexVector>,
) -> Result<(f64, Vec<f64>)> {
    let xs = radiated(instance, precoders, weights)?;
    let power = xs.iter().map(|x| x.norm_squared()).sum();
    let cols: Vec<ComplexVector> = instance.channels.iter().map(|c| c.column()).collect();
    let sinrs = (0..instance.num_users())
        .map(|k| {
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (m, x) in xs.iter().enumerate() {
                let g = cols[k].dotc(x).norm_sqr();
                if m == k {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            signal / (interference + instance.noise_powers[k])
        })
        .collect();
    Ok((power, sinrs))
}

fn radiated(
    instance: &ScenarioInstance,
    precoders: &[ComplexVector],
    weights: Option<&ComplexVector>,
) -> Result<Vec<ComplexVector>> {
    let n = instance.channels[0].len();
    if precoders.len() != instance.num_streams() {
        return Err(Error::Dimension(format!(
            "{} precoders for {} streams",
            precoders.len(),
            instance.num_streams()
        )));
    }
    if instance.mode.is_digital() {
        if precoders.iter().any(|w| w.len() != n) {
            return Err(Error::Dimension(format!("digital precoders must have length {n}")));
        }
        return Ok(precoders.to_vec());
    }
    let base = instance
        .dma
        .as_ref()
        .ok_or_else(|| Error::Invalid("DMA mode without DMA state".into()))?;
    let state = match weights {
        Some(q) => base.with_weights(q.clone())?,
        None => base.clone(),
    };
    precoders.iter().map(|w| state.transmit_vector(w)).collect()
}

/// Degrees of freedom: `N_r N_c M` for digital arrays, `N_r (M + N_c)` for DMAs.
pub fn dof_count(mode: Mode, n_rows: usize, n_cols: usize, streams: usize) -> Result<usize> {
    if n_rows == 0 || n_cols == 0 || streams == 0 {
        return Err(Error::Invalid("degree-of-freedom counts need positive sizes".into()));
    }
    Ok(if mode.is_digital() {
        n_rows * n_cols * streams
    } else {
        n_rows * (streams + n_cols)
    })
}

fn regularized(cost: &ComplexMatrix) -> ComplexMatrix {
    let n = cost.nrows();
    let trace: f64 = (0..n).map(|i| cost[(i, i)].re).sum();
    let scale = if trace > 0.0 { trace / n as f64 } else { 1.0 };
    cost + ComplexMatrix::identity(n, n).scale(COST_REGULARIZATION * scale)
}

struct PrecoderStep {
    solved: bool,
    vectors: Vec<ComplexVector>,
    power: f64,
    rank_ratios: Vec<f64>,
}

/// `min sum Tr(Z W_m)` s.t. `Tr(P_k W_k) - delta_k sum_{m != k} Tr(P_k W_m) >= delta_k sigma_k^2`,
/// followed by beam recovery and power polishing. `Z = None` means identity.
fn precoder_step(
    channels: &[ComplexVector],
    cost: Option<&ComplexMatrix>,
    targets: &[f64],
    noise: &[f64],
    opts: &SolverOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<PrecoderStep>> {
    let n = channels[0].len();
    let k = channels.len();
    let objective = match cost {
        Some(z) => regularized(z),
        None => ComplexMatrix::identity(n, n),
    };
    let gammas: Vec<ComplexMatrix> = channels.iter().map(numerics::outer).collect();
    let constraints = (0..k)
        .map(|u| SdpConstraint {
            terms: (0..k)
                .map(|m| {
                    let f = if m == u {
                        gammas[u].clone()
                    } else {
                        gammas[u].scale(-targets[u])
                    };
                    (m, f)
                })
                .collect(),
            rhs: targets[u] * noise[u],
        })
        .collect();
    let problem = SdpProblem::new(vec![objective; k], constraints)?;
    let sol = sdp::solve(&problem, &opts.sdp)?;
    if sol.status == SdpStatus::Infeasible {
        return Ok(None);
    }
    let rank_ratios = sol
        .blocks
        .iter()
        .map(|b| sdp::extract_rank1(b).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let ctx = SinrContext {
        channels: channels.to_vec(),
        targets: targets.to_vec(),
        noise: noise.to_vec(),
        cost: cost.cloned(),
    };
    let trials = if rank_ratios.iter().all(|r| *r <= opts.rank_tol) {
        0
    } else {
        opts.randomization_trials
    };
    let vectors = match sdp::randomize_and_rescale(&sol.blocks, &ctx, trials, rng) {
        Ok(rec) => rec.vectors,
        Err(_) => {
            let principal = sol
                .blocks
                .iter()
                .map(|b| sdp::extract_rank1(b).map(|(v, _)| v))
                .collect::<Result<Vec<_>>>()?;
            match sdp::uniform_upscale(&ctx, &principal) {
                Ok(v) => v,
                Err(_) => return Ok(None),
            }
        }
    };
    let power = ctx.total_power(&vectors);
    let solved = sol.status == SdpStatus::Optimal
        || (sol.primal_infeasibility <= NEAR_OPTIMAL_RESIDUAL
            && sol.dual_infeasibility <= NEAR_OPTIMAL_RESIDUAL
            && sol.duality_gap <= NEAR_OPTIMAL_RESIDUAL);
    Ok(Some(PrecoderStep {
        solved,
        vectors,
        power,
        rank_ratios,
    }))
}

fn finish(
    instance: &ScenarioInstance,
    precoders: Vec<ComplexVector>,
    weights: Option<ComplexVector>,
    status: BeamformStatus,
    iterations: usize,
    power_trace: Vec<f64>,
    rank_ratios: Vec<f64>,
) -> Result<BeamformingResult> {
    let (tx_power_watts, achieved_sinrs) = evaluate(instance, &precoders, weights.as_ref())?;
    Ok(BeamformingResult {
        precoders,
        weights,
        tx_power_watts,
        achieved_sinrs,
        iterations,
        power_trace,
        status,
        rank_ratios,
    })
}

/// Digital beamforming: one SDP over per-user covariance blocks.
///
/// The element spacing is whatever the instance's channels were built with,
/// so the same call serves both the half-wavelength and the DMA-spacing
/// baselines.
pub fn solve_fd(instance: &ScenarioInstance, opts: &SolverOptions) -> Result<BeamformingResult> {
    if !instance.mode.is_digital() {
        return Err(Error::Invalid(format!("solve_fd called in mode {}", instance.mode)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cols: Vec<ComplexVector> = instance.channels.iter().map(|c| c.column()).collect();
    let k = instance.num_users();
    match precoder_step(&cols, None, &instance.targets, &instance.noise_powers, opts, &mut rng)? {
        None => Ok(BeamformingResult::infeasible(k, 1, Vec::new())),
        Some(step) => {
            let status = if step.solved {
                BeamformStatus::Converged
            } else {
                BeamformStatus::MaxIter
            };
            finish(instance, step.vectors, None, status, 1, vec![step.power], step.rank_ratios)
        }
    }
}

pub fn solve_dma(instance: &ScenarioInstance, opts: &SolverOptions) -> Result<BeamformingResult> {
    if instance.mode != Mode::Dma {
        return Err(Error::Invalid(format!("solve_dma called in mode {}", instance.mode)));
    }
    alternating(instance, opts, false)
}

pub fn solve_uw(instance: &ScenarioInstance, opts: &SolverOptions) -> Result<BeamformingResult> {
    if instance.mode != Mode::Uw {
        return Err(Error::Invalid(format!("solve_uw called in mode {}", instance.mode)));
    }
    alternating(instance, opts, true)
}

/// Dispatches on the instance mode.
pub fn solve(instance: &ScenarioInstance, opts: &SolverOptions) -> Result<BeamformingResult> {
    match instance.mode {
        Mode::Fd | Mode::Op1 => solve_fd(instance, opts),
        Mode::Dma => solve_dma(instance, opts),
        Mode::Uw => solve_uw(instance, opts),
    }
}

#[derive(Clone)]
struct Iterate {
    state: DmaState,
    precoders: Vec<ComplexVector>,
    power: f64,
    certified: bool,
}

fn dma_precoder_step(
    instance: &ScenarioInstance,
    state: &DmaState,
    opts: &SolverOptions,
    rng: &mut ChaCha8Rng,
    rank_ratios: &mut Vec<f64>,
) -> Result<Option<Iterate>> {
    let effective = instance
        .channels
        .iter()
        .map(|c| state.effective_channel(c))
        .collect::<Result<Vec<_>>>()?;
    let z = state.precoder_cost();
    let step = precoder_step(
        &effective,
        Some(&z),
        &instance.targets,
        &instance.noise_powers,
        opts,
        rng,
    )?;
    Ok(step.map(|s| {
        rank_ratios.extend(&s.rank_ratios);
        Iterate {
            state: state.clone(),
            precoders: s.vectors,
            power: s.power,
            certified: s.solved,
        }
    }))
}

/// Weight update for fixed precoders: solves the reduced weight SDP and
/// returns the principal-eigenvector weights.
fn weight_step(
    instance: &ScenarioInstance,
    current: &Iterate,
    opts: &SolverOptions,
    rank_ratios: &mut Vec<f64>,
) -> Result<Option<ComplexVector>> {
    let data = dma::build_weight_sdp(&current.state, &current.precoders, &instance.channels)?;
    let k = instance.num_users();
    let constraints = (0..k)
        .map(|u| {
            let mut f = data.big_c_tilde[u][u].clone();
            for m in (0..k).filter(|m| *m != u) {
                f -= data.big_c_tilde[u][m].scale(instance.targets[u]);
            }
            SdpConstraint {
                terms: vec![(0, numerics::hermitian_part(&f))],
                rhs: instance.targets[u] * instance.noise_powers[u],
            }
        })
        .collect();
    let objective = regularized(&numerics::hermitian_part(&data.total_cost()));
    let problem = SdpProblem::new(vec![objective], constraints)?;
    let sol = sdp::solve(&problem, &opts.sdp)?;
    if sol.status == SdpStatus::Infeasible {
        return Ok(None);
    }
    let (q, ratio) = dma::extract_q_from_sdp(&sol.blocks[0])?;
    rank_ratios.push(ratio);
    if q.norm() == 0.0 || q.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Ok(None);
    }
    Ok(Some(q))
}

/// Alternating optimization of precoders and element weights.
///
/// Starts from random Lorentzian weights, then repeats: weight SDP for the
/// current precoders, principal eigenvector, Lorentzian mapping, precoder SDP
/// for the new weights. The search always continues from the latest mapped
/// iterate, while the returned solution and the power trace track the best
/// feasible iterate found.
///
/// With `unrestricted`, the unmapped eigenvector weights are tried as a second
/// candidate every iteration. The search path and the stopping rule are those
/// of the Lorentzian run, so the result is never worse than it.
fn alternating(instance: &ScenarioInstance, opts: &SolverOptions, unrestricted: bool) -> Result<BeamformingResult> {
    let base = instance
        .dma
        .as_ref()
        .ok_or_else(|| Error::Invalid("DMA mode without DMA state".into()))?;
    let k = instance.num_users();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // Separate stream so candidate solves leave the Lorentzian path unchanged.
    let mut candidate_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    candidate_rng.set_stream(1);
    let mut rank_ratios = Vec::new();

    let mut start = None;
    for _ in 0..=opts.init_retries {
        let init = DmaState::random_lorentzian(base.geometry.clone(), &mut rng)?;
        let init = base.with_weights(init.q_reduced)?;
        if let Some(it) = dma_precoder_step(instance, &init, opts, &mut rng, &mut rank_ratios)? {
            start = Some(it);
            break;
        }
    }
    let Some(start) = start else {
        return Ok(BeamformingResult::infeasible(k, 0, rank_ratios));
    };

    let mut trace = vec![start.power];
    let mut best = start.clone();
    let mut path_best = start.power;
    let mut current = start;
    let mut stalled = 0;
    let mut iterations = 0;
    for _ in 0..opts.max_outer {
        iterations += 1;
        let Some(q_star) = weight_step(instance, &current, opts, &mut rank_ratios)? else {
            // Keeping the previous weights would repeat this iteration exactly.
            trace.push(best.power);
            break;
        };
        if unrestricted {
            // The scale of unconstrained weights is absorbed by the precoders;
            // unit peak magnitude keeps Z well conditioned.
            let peak = q_star.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let state = current.state.with_weights(q_star.unscale(peak))?;
            if let Some(c) = dma_precoder_step(instance, &state, opts, &mut candidate_rng, &mut rank_ratios)? {
                if c.power <= best.power {
                    best = c;
                }
            }
        }
        let state = current.state.with_weights(dma::fit_and_project(&q_star).weights)?;
        let Some(next) = dma_precoder_step(instance, &state, opts, &mut rng, &mut rank_ratios)? else {
            trace.push(best.power);
            break;
        };
        let improvement = (path_best - next.power) / path_best;
        path_best = path_best.min(next.power);
        if next.power <= best.power {
            best = next.clone();
        }
        if improvement < opts.early_stop_tol {
            stalled += 1;
        } else {
            stalled = 0;
        }
        trace.push(best.power);
        current = next;
        if stalled >= opts.early_stop_patience {
            break;
        }
    }

    let status = if best.certified {
        BeamformStatus::Converged
    } else {
        BeamformStatus::MaxIter
    };
    let weights = best.state.q_reduced.clone();
    let solved = ScenarioInstance {
        dma: Some(best.state.clone()),
        ..instance.clone()
    };
    finish(&solved, best.precoders, Some(weights), status, iterations, trace, rank_ratios)
}
