use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Aggregate, ScenarioConfig};
use crate::beamform::{self, BeamformStatus, Mode, ScenarioInstance};
use crate::channel::{channel_vectors, Point3, UserSampler};
use crate::dma::DmaState;
use crate::error::{Error, Result};
use crate::numerics::{dbm_to_watts, watts_to_dbm, ComplexVector};

pub const WORKERS_ENV: &str = "DMABF_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Converged,
    Infeasible,
    MaxIter,
    /// The solve returned an error; see the record message.
    Failed,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Converged => "converged",
            RecordStatus::Infeasible => "infeasible",
            RecordStatus::MaxIter => "max_iter",
            RecordStatus::Failed => "failed",
        }
    }
}

impl From<BeamformStatus> for RecordStatus {
    fn from(s: BeamformStatus) -> Self {
        match s {
            BeamformStatus::Converged => RecordStatus::Converged,
            BeamformStatus::Infeasible => RecordStatus::Infeasible,
            BeamformStatus::MaxIter => RecordStatus::MaxIter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub realization: u64,
    pub mode: Mode,
    pub k: usize,
    pub r_min: f64,
    pub d_x_over_lambda: f64,
    pub user_positions: Vec<Point3>,
    pub status: RecordStatus,
    /// Present only for converged runs.
    pub tx_power_watts: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub achieved_sinrs: Vec<f64>,
    /// `min_k (SINR_k - delta_k) / delta_k`.
    pub min_sinr_margin: Option<f64>,
    pub iterations: usize,
    pub power_trace: Vec<f64>,
    pub wall_ms: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub k: usize,
    pub runs: usize,
    pub converged: usize,
    pub infeasible: usize,
    /// Runs that hit an error or the iteration limit.
    pub failed: usize,
    /// `None` when no run converged.
    pub mean_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub k: usize,
    pub from: Mode,
    pub to: Mode,
    /// Realizations where both modes converged.
    pub common: usize,
    /// `mean(to) - mean(from)` in dB over the common realizations.
    pub mean_gap_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregate: Aggregate,
    pub modes: Vec<ModeSummary>,
    pub gaps: Vec<GapSummary>,
}

impl Summary {
    pub fn mode(&self, mode: Mode, k: usize) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode && m.k == k)
    }

    pub fn gap(&self, from: Mode, to: Mode, k: usize) -> Option<&GapSummary> {
        self.gaps.iter().find(|g| g.from == from && g.to == to && g.k == k)
    }
}

/// Mean power in dBm under the chosen aggregation.
pub fn mean_dbm(watts: &[f64], aggregate: Aggregate) -> Option<f64> {
    if watts.is_empty() {
        return None;
    }
    let n = watts.len() as f64;
    Some(match aggregate {
        Aggregate::Watts => watts_to_dbm(watts.iter().sum::<f64>() / n),
        Aggregate::Db => watts.iter().map(|w| watts_to_dbm(*w)).sum::<f64>() / n,
    })
}

pub fn summarize(records: &[RunRecord], aggregate: Aggregate) -> Summary {
    let mut groups: BTreeMap<(usize, Mode), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.k, r.mode)).or_default().push(r);
    }
    let modes = groups
        .iter()
        .map(|(&(k, mode), rs)| {
            let count = |s: RecordStatus| rs.iter().filter(|r| r.status == s).count();
            let watts: Vec<f64> = rs.iter().filter_map(|r| r.tx_power_watts).collect();
            ModeSummary {
                mode,
                k,
                runs: rs.len(),
                converged: count(RecordStatus::Converged),
                infeasible: count(RecordStatus::Infeasible),
                failed: count(RecordStatus::Failed) + count(RecordStatus::MaxIter),
                mean_power_dbm: mean_dbm(&watts, aggregate),
            }
        })
        .collect();

    let mut gaps = Vec::new();
    let ks: Vec<usize> = groups.keys().map(|(k, _)| *k).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for k in ks {
        let present: Vec<Mode> = groups.keys().filter(|(kk, _)| *kk == k).map(|(_, m)| *m).collect();
        for (i, &from) in present.iter().enumerate() {
            for &to in &present[i + 1..] {
                let power = |m: Mode| -> BTreeMap<u64, f64> {
                    groups[&(k, m)]
                        .iter()
                        .filter_map(|r| r.tx_power_watts.map(|w| (r.realization, w)))
                        .collect()
                };
                let (pf, pt) = (power(from), power(to));
                let common: Vec<u64> = pf.keys().filter(|r| pt.contains_key(r)).copied().collect();
                let wf: Vec<f64> = common.iter().map(|r| pf[r]).collect();
                let wt: Vec<f64> = common.iter().map(|r| pt[r]).collect();
                let mean_gap_db = match (mean_dbm(&wt, aggregate), mean_dbm(&wf, aggregate)) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                };
                gaps.push(GapSummary {
                    k,
                    from,
                    to,
                    common: common.len(),
                    mean_gap_db,
                });
            }
        }
    }
    Summary {
        aggregate,
        modes,
        gaps,
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ScenarioConfig,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

impl Experiment {
    /// Any run that neither converged nor was proven infeasible.
    pub fn has_failures(&self) -> bool {
        self.records
            .iter()
            .any(|r| matches!(r.status, RecordStatus::Failed | RecordStatus::MaxIter))
    }
}

fn worker_count(cfg: &ScenarioConfig) -> Result<usize> {
    if let Some(w) = cfg.workers {
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|w| *w > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        Err(_) => Ok(0),
    }
}

pub(crate) fn with_pool<T: Send>(cfg: &ScenarioConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg)?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Deterministic per-(realization, K) seed for the weight initialization.
fn solver_seed(seed: u64, realization: u64, k: usize) -> u64 {
    let mut z = seed ^ realization.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn user_sampler(cfg: &ScenarioConfig) -> Result<UserSampler> {
    UserSampler::new(
        cfg.zone,
        cfg.fraunhofer_distance(),
        cfg.aperture_m * std::f64::consts::SQRT_2,
        cfg.seed,
    )
}

/// Solves every mode of one realization on the same user draw.
fn run_realization(cfg: &ScenarioConfig, sampler: &UserSampler, realization: u64, k: usize) -> Vec<RunRecord> {
    let users = sampler.sample_realization(realization, k);
    let mut opts = cfg.solver_options();
    opts.seed = solver_seed(cfg.seed, realization, k);
    let noise = dbm_to_watts(cfg.noise_dbm);
    cfg.modes
        .iter()
        .map(|&mode| {
            let start = Instant::now();
            let outcome = solve_mode(cfg, mode, &users, noise, &opts);
            let wall_ms = cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            let mut rec = RunRecord {
                realization,
                mode,
                k,
                r_min: cfg.r_min,
                d_x_over_lambda: cfg.d_x_for(mode),
                user_positions: users.clone(),
                status: RecordStatus::Failed,
                tx_power_watts: None,
                tx_power_dbm: None,
                achieved_sinrs: Vec::new(),
                min_sinr_margin: None,
                iterations: 0,
                power_trace: Vec::new(),
                wall_ms,
                message: None,
            };
            match outcome {
                Ok((res, targets)) => {
                    rec.status = res.status.into();
                    rec.iterations = res.iterations;
                    rec.power_trace = res.power_trace.clone();
                    if res.status == BeamformStatus::Converged {
                        rec.tx_power_watts = Some(res.tx_power_watts);
                        rec.tx_power_dbm = Some(watts_to_dbm(res.tx_power_watts));
                        rec.min_sinr_margin = res
                            .achieved_sinrs
                            .iter()
                            .zip(&targets)
                            .map(|(s, t)| (s - t) / t)
                            .reduce(f64::min);
                    }
                    rec.achieved_sinrs = res.achieved_sinrs;
                }
                Err(e) => rec.message = Some(e.to_string()),
            }
            rec
        })
        .collect()
}

fn solve_mode(
    cfg: &ScenarioConfig,
    mode: Mode,
    users: &[Point3],
    noise: f64,
    opts: &beamform::SolverOptions,
) -> Result<(beamform::BeamformingResult, Vec<f64>)> {
    let geometry = cfg.geometry(mode)?;
    let channels = channel_vectors(&geometry, users, cfg.wavelength())?;
    let dma = if mode.is_digital() {
        None
    } else {
        let n = geometry.num_elements();
        Some(DmaState::new(geometry, ComplexVector::zeros(n))?)
    };
    let instance = ScenarioInstance::with_rate(channels, cfg.r_min, noise, dma, mode)?;
    let res = beamform::solve(&instance, opts)?;
    Ok((res, instance.targets))
}

/// Runs every configured mode and K on `realizations` paired user draws.
///
/// Records come back ordered by K, then realization, then mode in config
/// order, independent of the worker count.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<Experiment> {
    cfg.validate()?;
    let sampler = user_sampler(cfg)?;
    let items: Vec<(usize, u64)> = cfg
        .k
        .iter()
        .flat_map(|&k| (0..cfg.realizations as u64).map(move |r| (k, r)))
        .collect();
    let per_item: Vec<Vec<RunRecord>> = with_pool(cfg, || {
        items
            .par_iter()
            .map(|&(k, r)| run_realization(cfg, &sampler, r, k))
            .collect()
    })?;
    let records: Vec<RunRecord> = per_item.into_iter().flatten().collect();
    let summary = summarize(&records, cfg.aggregate);
    Ok(Experiment {
        config: cfg.clone(),
        records,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    RMin,
    K,
    DX,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "r-min" => Ok(SweepAxis::RMin),
            "k" => Ok(SweepAxis::K),
            "d-x" | "d-x-over-lambda" => Ok(SweepAxis::DX),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::RMin => "r-min",
            SweepAxis::K => "k",
            SweepAxis::DX => "d-x",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub mode: Mode,
    pub k: usize,
    /// Element count of the mode's array at this grid point.
    pub n_elements: usize,
    pub dof: usize,
    pub runs: usize,
    pub converged: usize,
    pub infeasible: usize,
    pub mean_power_dbm: Option<f64>,
}

/// Re-runs the experiment once per value of `axis`, other settings fixed.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<(Vec<SweepRow>, Vec<Experiment>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::new();
    let mut experiments = Vec::new();
    for &value in values {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::RMin => point.r_min = value,
            SweepAxis::DX => point.d_x_over_lambda = value,
            SweepAxis::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("K must be a positive integer, got {value}")));
                }
                point.k = vec![value as usize];
            }
        }
        let exp = run_experiment(&point)?;
        for s in &exp.summary.modes {
            let geo = point.geometry(s.mode)?;
            let streams = if s.mode.is_digital() { s.k } else { s.k.min(geo.n_rows) };
            rows.push(SweepRow {
                axis,
                value,
                mode: s.mode,
                k: s.k,
                n_elements: geo.num_elements(),
                dof: beamform::dof_count(s.mode, geo.n_rows, geo.n_cols, streams)?,
                runs: s.runs,
                converged: s.converged,
                infeasible: s.infeasible,
                mean_power_dbm: s.mean_power_dbm,
            });
        }
        experiments.push(exp);
    }
    Ok((rows, experiments))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub realization: u64,
    /// `delta sigma^2 / ||gamma||^2`.
    pub closed_form_watts: f64,
    pub solved_watts: Option<f64>,
    pub relative_error: Option<f64>,
}

/// Single-user digital solves next to the matched-filter closed form, on the
/// configured user draws and the half-wavelength array.
pub fn oracle(cfg: &ScenarioConfig) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    let sampler = user_sampler(cfg)?;
    let geometry = cfg.geometry(Mode::Fd)?;
    let noise = dbm_to_watts(cfg.noise_dbm);
    let delta = beamform::sinr_target(cfg.r_min);
    let opts = cfg.solver_options();
    let rows: Vec<Result<OracleRow>> = with_pool(cfg, || {
        (0..cfg.realizations as u64)
            .into_par_iter()
            .map(|r| {
                let users = sampler.sample_realization(r, 1);
                let channels = channel_vectors(&geometry, &users, cfg.wavelength())?;
                let closed = delta * noise / channels[0].norm_squared();
                let inst = ScenarioInstance::with_rate(channels, cfg.r_min, noise, None, Mode::Fd)?;
                let res = beamform::solve_fd(&inst, &opts)?;
                let solved = (res.status == BeamformStatus::Converged).then_some(res.tx_power_watts);
                Ok(OracleRow {
                    realization: r,
                    closed_form_watts: closed,
                    solved_watts: solved,
                    relative_error: solved.map(|p| (p - closed).abs() / closed),
                })
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(realization: u64, mode: Mode, watts: Option<f64>) -> RunRecord {
        RunRecord {
            realization,
            mode,
            k: 1,
            r_min: 4.0,
            d_x_over_lambda: 0.5,
            user_positions: vec![],
            status: if watts.is_some() { RecordStatus::Converged } else { RecordStatus::Infeasible },
            tx_power_watts: watts,
            tx_power_dbm: watts.map(watts_to_dbm),
            achieved_sinrs: vec![],
            min_sinr_margin: None,
            iterations: 1,
            power_trace: vec![],
            wall_ms: None,
            message: None,
        }
    }

    #[test]
    fn mean_is_over_watts_by_default() {
        // 1 mW and 100 mW: mean of watts is 50.5 mW (17.03 dBm), mean of dBm is 10 dBm.
        let w = [1e-3, 1e-1];
        assert!((mean_dbm(&w, Aggregate::Watts).unwrap() - watts_to_dbm(0.0505)).abs() < 1e-12);
        assert!((mean_dbm(&w, Aggregate::Db).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mean_dbm(&[], Aggregate::Watts), None);
    }

    #[test]
    fn gaps_use_common_realizations_only() {
        let recs = vec![
            record(0, Mode::Fd, Some(1e-3)),
            record(0, Mode::Dma, Some(2e-3)),
            record(1, Mode::Fd, Some(1.0)),
            record(1, Mode::Dma, None),
        ];
        let s = summarize(&recs, Aggregate::Watts);
        let g = s.gap(Mode::Fd, Mode::Dma, 1).unwrap();
        assert_eq!(g.common, 1);
        assert!((g.mean_gap_db.unwrap() - 10.0 * 2f64.log10()).abs() < 1e-12);
        let dma = s.mode(Mode::Dma, 1).unwrap();
        assert_eq!((dma.converged, dma.infeasible), (1, 1));
        assert_eq!(dma.mean_power_dbm, Some(watts_to_dbm(2e-3)));
    }

    #[test]
    fn all_infeasible_mode_has_no_mean() {
        let s = summarize(&[record(0, Mode::Uw, None)], Aggregate::Watts);
        assert_eq!(s.mode(Mode::Uw, 1).unwrap().mean_power_dbm, None);
    }

    #[test]
    fn solver_seeds_differ() {
        assert_ne!(solver_seed(0, 0, 1), solver_seed(0, 1, 1));
        assert_ne!(solver_seed(0, 0, 1), solver_seed(0, 0, 2));
        assert_eq!(solver_seed(3, 4, 5), solver_seed(3, 4, 5));
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!("r-min".parse::<SweepAxis>().unwrap(), SweepAxis::RMin);
        assert_eq!("d_x".parse::<SweepAxis>().unwrap(), SweepAxis::DX);
        assert!("z".parse::<SweepAxis>().is_err());
    }
}
