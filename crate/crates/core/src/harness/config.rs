use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beamform::{Mode, SolverOptions};
use crate::channel::{fraunhofer_distance, wavelength, ArrayGeometry, Zone};
use crate::error::{Error, Result};
use crate::sdp::SdpSettings;

/// How per-realization powers are averaged before reporting in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// dBm of the mean power in watts.
    Watts,
    /// Mean of the per-realization dBm values.
    Db,
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "watts" => Ok(Aggregate::Watts),
            "db" | "dbm" => Ok(Aggregate::Db),
            other => Err(Error::Config(format!("unknown aggregate '{other}'"))),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Watts => "watts",
            Aggregate::Db => "db",
        })
    }
}

/// Flat experiment configuration. Every key can be set from a TOML file and
/// overridden on the command line with the same name in kebab case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frequency_hz: f64,
    /// Side `D` of the square aperture, meters.
    pub aperture_m: f64,
    /// DMA (and OP1) element spacing along the microstrips.
    pub d_x_over_lambda: f64,
    pub d_y_over_lambda: f64,
    pub gain_exponent: f64,
    pub modes: Vec<Mode>,
    pub k: Vec<usize>,
    /// Rate requirement per user, bits/s/Hz.
    pub r_min: f64,
    pub noise_dbm: f64,
    pub zone: Zone,
    pub realizations: usize,
    pub seed: u64,
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Outer iterations `T` of the alternating optimization.
    pub outer_iterations: usize,
    pub init_retries: usize,
    pub randomization_trials: usize,
    pub aggregate: Aggregate,
    /// Worker threads; `None` uses the `DMABF_WORKERS` variable or all cores.
    pub workers: Option<usize>,
    /// Record wall-clock time per solve. Off by default so output is
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        Self {
            frequency_hz: 28e9,
            aperture_m: 0.025,
            d_x_over_lambda: 0.5,
            d_y_over_lambda: 0.5,
            gain_exponent: 2.0,
            modes: vec![Mode::Fd, Mode::Dma],
            k: vec![1],
            r_min: 4.0,
            noise_dbm: -114.0,
            zone: Zone::Near,
            realizations: 50,
            seed: 0,
            tol: solver.sdp.tol,
            gap_tol: solver.sdp.gap_tol,
            max_iter: solver.sdp.max_iter,
            outer_iterations: solver.max_outer,
            init_retries: solver.init_retries,
            randomization_trials: solver.randomization_trials,
            aggregate: Aggregate::Watts,
            workers: None,
            timing: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frequency_hz", self.frequency_hz),
            ("aperture_m", self.aperture_m),
            ("d_x_over_lambda", self.d_x_over_lambda),
            ("d_y_over_lambda", self.d_y_over_lambda),
            ("tol", self.tol),
            ("gap_tol", self.gap_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gain_exponent >= 0.0 && self.gain_exponent.is_finite()) {
            return Err(Error::Config("gain_exponent must be non-negative".into()));
        }
        if !(self.r_min > 0.0 && self.r_min.is_finite()) {
            // A zero rate makes every SINR target zero and the problem trivial.
            return Err(Error::Config(format!("r_min must be positive, got {}", self.r_min)));
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::Config("noise_dbm must be finite".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return Err(Error::Config("k values must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let dma_rows = self.geometry(Mode::Dma)?.n_rows;
        if self.modes.iter().any(|m| !m.is_digital()) {
            if let Some(k) = self.k.iter().find(|k| **k > dma_rows) {
                return Err(Error::Config(format!(
                    "K = {k} exceeds the {dma_rows} DMA microstrips"
                )));
            }
        }
        for m in &self.modes {
            self.geometry(*m)?;
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.frequency_hz)
    }

    pub fn fraunhofer_distance(&self) -> f64 {
        fraunhofer_distance(self.aperture_m, self.wavelength())
    }

    /// Element spacing along x used by `mode`: half a wavelength for FD and
    /// the configured DMA spacing otherwise.
    pub fn d_x_for(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Fd => 0.5,
            _ => self.d_x_over_lambda,
        }
    }

    pub fn geometry(&self, mode: Mode) -> Result<ArrayGeometry> {
        let l = self.wavelength();
        ArrayGeometry::from_aperture(
            self.aperture_m,
            self.d_x_for(mode) * l,
            self.d_y_over_lambda * l,
            self.gain_exponent,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            sdp: SdpSettings {
                tol: self.tol,
                gap_tol: self.gap_tol,
                max_iter: self.max_iter,
                ..SolverOptions::default().sdp
            },
            max_outer: self.outer_iterations,
            init_retries: self.init_retries,
            randomization_trials: self.randomization_trials,
            ..SolverOptions::default()
        }
    }

    /// Applies `key=value` overrides, where `key` is a field name in snake or
    /// kebab case. Lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn fmt::Display| Error::Config(format!("{key}: {e}"));
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.trim().parse::<T>().map_err(|e| format!("'{v}': {e}"))
        }
        match key.replace('-', "_").as_str() {
            "frequency_hz" => self.frequency_hz = num(value).map_err(|e| bad(&e))?,
            "aperture_m" => self.aperture_m = num(value).map_err(|e| bad(&e))?,
            "d_x_over_lambda" | "d_x" => self.d_x_over_lambda = num(value).map_err(|e| bad(&e))?,
            "d_y_over_lambda" => self.d_y_over_lambda = num(value).map_err(|e| bad(&e))?,
            "gain_exponent" => self.gain_exponent = num(value).map_err(|e| bad(&e))?,
            "modes" => {
                self.modes = value
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "k" => {
                self.k = value
                    .split(',')
                    .map(num::<usize>)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            "r_min" => self.r_min = num(value).map_err(|e| bad(&e))?,
            "noise_dbm" => self.noise_dbm = num(value).map_err(|e| bad(&e))?,
            "zone" => self.zone = value.parse()?,
            "realizations" => self.realizations = num(value).map_err(|e| bad(&e))?,
            "seed" => self.seed = num(value).map_err(|e| bad(&e))?,
            "tol" => self.tol = num(value).map_err(|e| bad(&e))?,
            "gap_tol" => self.gap_tol = num(value).map_err(|e| bad(&e))?,
            "max_iter" => self.max_iter = num(value).map_err(|e| bad(&e))?,
            "outer_iterations" | "t" => self.outer_iterations = num(value).map_err(|e| bad(&e))?,
            "init_retries" => self.init_retries = num(value).map_err(|e| bad(&e))?,
            "randomization_trials" => self.randomization_trials = num(value).map_err(|e| bad(&e))?,
            "aggregate" => self.aggregate = value.parse()?,
            "workers" => self.workers = Some(num(value).map_err(|e| bad(&e))?),
            "timing" => self.timing = num(value).map_err(|e| bad(&e))?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}
