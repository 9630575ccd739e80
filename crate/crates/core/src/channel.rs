//! Planar-array geometry and the line-of-sight spherical-wave channel.
//!
//! Elements sit on a grid centred on the origin of the xy-plane; the array
//! boresight is +z. Microstrip `i` is row `i` of the grid and runs along x, so
//! the flat element index is `i * n_cols + l` (row-major).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ComplexVector;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slack added before flooring element counts so that ratios landing exactly
/// on an integer are not lost to rounding.
const FLOOR_SLACK: f64 = 1e-9;

/// Users closer than this multiple of the aperture diagonal are not sampled.
pub const MIN_RADIUS_DIAGONALS: f64 = 1.2;

pub type Point3 = [f64; 3];

pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz
}

pub fn wavenumber(wavelength: f64) -> f64 {
    2.0 * PI / wavelength
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Number of rows (microstrips).
    pub n_rows: usize,
    /// Elements per row.
    pub n_cols: usize,
    /// Column spacing along x, meters.
    pub d_x: f64,
    /// Row spacing along y, meters.
    pub d_y: f64,
    /// Side length of the square aperture, meters.
    pub aperture_side: f64,
    pub gain_exponent: f64,
    pub element_positions: Vec<Point3>,
}

impl ArrayGeometry {
    /// Grid of `n_rows x n_cols` elements centred on the origin. The aperture
    /// side is taken as the larger grid extent.
    pub fn new(n_rows: usize, n_cols: usize, d_x: f64, d_y: f64, gain_exponent: f64) -> Result<Self> {
        let side = (n_cols as f64 * d_x).max(n_rows as f64 * d_y);
        Self::with_aperture(n_rows, n_cols, d_x, d_y, side, gain_exponent)
    }

    /// Square aperture of side `aperture_side` filled at the given spacings:
    /// `n_rows = floor(D / d_y)` and `n_cols = floor(D / d_x)`. With
    /// `d_y = lambda/2` the row count is `floor(2D / lambda)`.
    pub fn from_aperture(aperture_side: f64, d_x: f64, d_y: f64, gain_exponent: f64) -> Result<Self> {
        if !(aperture_side > 0.0 && d_x > 0.0 && d_y > 0.0) {
            return Err(Error::Invalid(format!(
                "aperture and spacings must be positive (D={aperture_side}, d_x={d_x}, d_y={d_y})"
            )));
        }
        let n_rows = (aperture_side / d_y + FLOOR_SLACK).floor() as usize;
        let n_cols = (aperture_side / d_x + FLOOR_SLACK).floor() as usize;
        Self::with_aperture(n_rows, n_cols, d_x, d_y, aperture_side, gain_exponent)
    }

    fn with_aperture(
        n_rows: usize,
        n_cols: usize,
        d_x: f64,
        d_y: f64,
        aperture_side: f64,
        gain_exponent: f64,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Invalid(format!(
                "array needs at least one element (got {n_rows}x{n_cols})"
            )));
        }
        if !(d_x > 0.0 && d_y > 0.0 && d_x.is_finite() && d_y.is_finite()) {
            return Err(Error::Invalid("element spacings must be positive".into()));
        }
        if !(gain_exponent >= 0.0 && gain_exponent.is_finite()) {
            return Err(Error::Invalid("gain exponent must be non-negative".into()));
        }
        let x0 = 0.5 * (n_cols as f64 - 1.0);
        let y0 = 0.5 * (n_rows as f64 - 1.0);
        let mut element_positions = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for l in 0..n_cols {
                element_positions.push([(l as f64 - x0) * d_x, (i as f64 - y0) * d_y, 0.0]);
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            d_x,
            d_y,
            aperture_side,
            gain_exponent,
            element_positions,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    /// Microstrip (row) that feeds flat element `n`.
    pub fn row_of(&self, n: usize) -> usize {
        n / self.n_cols
    }

    pub fn aperture_diagonal(&self) -> f64 {
        self.aperture_side * std::f64::consts::SQRT_2
    }
}

/// Element power pattern `2(g+1) cos^g(psi)` on the front hemisphere, zero behind.
pub fn element_gain(psi: f64, g: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&psi) {
        return Err(Error::Domain(format!("boresight angle {psi} outside [0, pi]")));
    }
    if psi > FRAC_PI_2 {
        return Ok(0.0);
    }
    Ok(gain_from_cos(psi.cos().max(0.0), g))
}

fn gain_from_cos(cos_psi: f64, g: f64) -> f64 {
    if cos_psi < 0.0 {
        0.0
    } else {
        2.0 * (g + 1.0) * cos_psi.powf(g)
    }
}

/// `2 D^2 / lambda`.
pub fn fraunhofer_distance(aperture_length: f64, wavelength: f64) -> f64 {
    2.0 * aperture_length * aperture_length / wavelength
}

/// Per-user channel: one complex gain per element, in the array's flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub user_index: usize,
    pub user_position: Point3,
    /// `gamma_k(i, l)`: amplitude and phase from element `(i, l)` to the user.
    pub gains: ComplexVector,
}

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Column form `gamma_k` with the received amplitude `gamma_k^H x`, i.e.
    /// the conjugated gains.
    pub fn column(&self) -> ComplexVector {
        self.gains.map(|z| z.conj())
    }

    pub fn norm_squared(&self) -> f64 {
        self.gains.norm_squared()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gains: self.gains.scale(factor),
            ..self.clone()
        }
    }
}

/// Spherical-wave gains from every element of `geometry` to `user`.
pub fn channel_vector(
    geometry: &ArrayGeometry,
    user_index: usize,
    user: Point3,
    wavelength: f64,
) -> Result<ChannelVector> {
    let beta0 = wavenumber(wavelength);
    let mut gains = ComplexVector::zeros(geometry.num_elements());
    for (n, r) in geometry.element_positions.iter().enumerate() {
        let d = [user[0] - r[0], user[1] - r[1], user[2] - r[2]];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if dist == 0.0 {
            return Err(Error::Singularity { element: n });
        }
        let gain = gain_from_cos(d[2] / dist, geometry.gain_exponent);
        if gain == 0.0 {
            continue;
        }
        let amplitude = gain.sqrt() * wavelength / (4.0 * PI * dist);
        gains[n] = Complex64::from_polar(amplitude, -beta0 * dist);
    }
    Ok(ChannelVector {
        user_index,
        user_position: user,
        gains,
    })
}

pub fn channel_vectors(
    geometry: &ArrayGeometry,
    users: &[Point3],
    wavelength: f64,
) -> Result<Vec<ChannelVector>> {
    users
        .iter()
        .enumerate()
        .map(|(k, &u)| channel_vector(geometry, k, u, wavelength))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    /// `0.1 d_F < r < d_F`
    Near,
    /// `d_F < r < 5 d_F`
    Far,
    /// `0.1 d_F < r < 5 d_F`
    Combined,
}

impl Zone {
    /// Radial interval as multiples of the Fraunhofer distance.
    pub fn radial_factors(self) -> (f64, f64) {
        match self {
            Zone::Near => (0.1, 1.0),
            Zone::Far => (1.0, 5.0),
            Zone::Combined => (0.1, 5.0),
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Zone::Near => "near",
            Zone::Far => "far",
            Zone::Combined => "combined",
        })
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "near" => Ok(Zone::Near),
            "far" => Ok(Zone::Far),
            "combined" => Ok(Zone::Combined),
            other => Err(Error::Config(format!("unknown zone '{other}'"))),
        }
    }
}

/// Draws users on half-circles in the xz-plane in front of the array.
///
/// Each realization uses its own ChaCha stream of the same seed, so draws do
/// not depend on the order in which realizations are evaluated.
#[derive(Debug, Clone)]
pub struct UserSampler {
    pub zone: Zone,
    pub fraunhofer_distance: f64,
    pub rng_seed: u64,
    min_radius: f64,
    max_radius: f64,
}

impl UserSampler {
    pub fn new(zone: Zone, fraunhofer_distance: f64, aperture_diagonal: f64, rng_seed: u64) -> Result<Self> {
        let (lo, hi) = zone.radial_factors();
        let min_radius = (lo * fraunhofer_distance).max(MIN_RADIUS_DIAGONALS * aperture_diagonal);
        let max_radius = hi * fraunhofer_distance;
        if !(min_radius < max_radius) {
            return Err(Error::Invalid(format!(
                "empty {zone} zone: radius interval ({min_radius}, {max_radius})"
            )));
        }
        Ok(Self {
            zone,
            fraunhofer_distance,
            rng_seed,
            min_radius,
            max_radius,
        })
    }

    pub fn radial_bounds(&self) -> (f64, f64) {
        (self.min_radius, self.max_radius)
    }

    pub fn rng_for(&self, realization: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(realization);
        rng
    }

    /// `k` users from stream 0.
    pub fn sample_users(&self, k: usize) -> Vec<Point3> {
        self.sample_realization(0, k)
    }

    pub fn sample_realization(&self, realization: u64, k: usize) -> Vec<Point3> {
        let mut rng = self.rng_for(realization);
        self.sample_with(&mut rng, k)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, k: usize) -> Vec<Point3> {
        (0..k)
            .map(|_| {
                let theta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
                let r = rng.random_range(self.min_radius..self.max_radius);
                [r * theta.sin(), 0.0, r * theta.cos()]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lambda_28ghz() -> f64 {
        wavelength(28e9)
    }

    #[test]
    fn element_gain_examples() {
        assert_relative_eq!(element_gain(0.0, 2.0).unwrap(), 6.0);
        assert!(element_gain(FRAC_PI_2, 2.0).unwrap().abs() < 1e-30);
        assert_relative_eq!(element_gain(PI / 3.0, 2.0).unwrap(), 1.5, max_relative = 1e-14);
        assert_eq!(element_gain(2.0, 2.0).unwrap(), 0.0);
        assert!(matches!(element_gain(-0.1, 2.0), Err(Error::Domain(_))));
        assert!(matches!(element_gain(3.2, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn fraunhofer_examples() {
        assert_relative_eq!(lambda_28ghz(), 0.010_706_873_5, max_relative = 1e-8);
        assert_relative_eq!(fraunhofer_distance(0.1, lambda_28ghz()), 1.867_959, max_relative = 1e-6);
        assert_relative_eq!(fraunhofer_distance(1.0, 2.0), 1.0);
        let l = lambda_28ghz();
        assert_relative_eq!(
            fraunhofer_distance(0.2, l),
            4.0 * fraunhofer_distance(0.1, l),
            max_relative = 1e-14
        );
    }

    #[test]
    fn full_scale_array_counts() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::from_aperture(0.1, l / 2.0, l / 2.0, 2.0).unwrap();
        assert_eq!(g.n_rows, 18);
        assert_eq!(g.n_cols, 18);
        assert_eq!(g.num_elements(), 324);
        assert_eq!(g.element_positions.len(), 324);
        assert!(g.element_positions.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn desk_scale_array_counts() {
        let l = lambda_28ghz();
        let counts: Vec<usize> = [2.0, 3.0, 4.0]
            .iter()
            .map(|div| ArrayGeometry::from_aperture(0.025, l / div, l / 2.0, 2.0).unwrap().n_cols)
            .collect();
        assert_eq!(counts, vec![4, 7, 9]);
    }

    #[test]
    fn grid_is_centred_row_major() {
        let g = ArrayGeometry::new(2, 3, 0.5, 1.0, 2.0).unwrap();
        assert_eq!(g.element_positions[g.index(0, 0)], [-0.5, -0.5, 0.0]);
        assert_eq!(g.element_positions[g.index(1, 2)], [0.5, 0.5, 0.0]);
        assert_eq!(g.row_of(4), 1);
        assert!(ArrayGeometry::new(0, 3, 0.5, 0.5, 2.0).is_err());
    }

    #[test]
    fn single_element_on_axis() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::new(1, 1, l / 2.0, l / 2.0, 2.0).unwrap();
        let r = 0.73;
        let ch = channel_vector(&g, 0, [0.0, 0.0, r], l).unwrap();
        let want_mag = 6f64.sqrt() * l / (4.0 * PI * r);
        assert_relative_eq!(ch.gains[0].norm(), want_mag, max_relative = 1e-14);
        let phase = ch.gains[0].arg().rem_euclid(2.0 * PI);
        let want_phase = (-wavenumber(l) * r).rem_euclid(2.0 * PI);
        let diff = (phase - want_phase).abs();
        assert!(diff.min(2.0 * PI - diff) < 1e-9);
    }

    #[test]
    fn user_in_array_plane_sees_nothing() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::new(1, 1, l / 2.0, l / 2.0, 2.0).unwrap();
        let ch = channel_vector(&g, 0, [0.4, 0.0, 0.0], l).unwrap();
        assert_eq!(ch.gains[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn behind_array_is_exact_zero() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::new(2, 2, l / 2.0, l / 2.0, 2.0).unwrap();
        let ch = channel_vector(&g, 0, [0.1, 0.0, -0.3], l).unwrap();
        assert!(ch.gains.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn symmetric_grid_equal_magnitudes() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::new(2, 2, l / 2.0, l / 2.0, 2.0).unwrap();
        let ch = channel_vector(&g, 0, [0.0, 0.0, 0.5], l).unwrap();
        let m0 = ch.gains[0].norm();
        for z in ch.gains.iter() {
            assert_relative_eq!(z.norm(), m0, max_relative = 1e-14);
        }
    }

    #[test]
    fn coincident_user_is_singular() {
        let g = ArrayGeometry::new(1, 2, 0.5, 0.5, 2.0).unwrap();
        let p = g.element_positions[1];
        assert!(matches!(
            channel_vector(&g, 0, p, 0.01),
            Err(Error::Singularity { element: 1 })
        ));
    }

    #[test]
    fn magnitude_matches_pattern_and_distance() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::from_aperture(0.025, l / 3.0, l / 2.0, 2.0).unwrap();
        let user = [0.05, 0.0, 0.08];
        let ch = channel_vector(&g, 0, user, l).unwrap();
        for (n, r) in g.element_positions.iter().enumerate() {
            let d = [user[0] - r[0], user[1] - r[1], user[2] - r[2]];
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let psi = (d[2] / dist).acos();
            let want = element_gain(psi, 2.0).unwrap().sqrt() * l / (4.0 * PI * dist);
            assert_relative_eq!(ch.gains[n].norm(), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn boresight_norm_decays() {
        let l = lambda_28ghz();
        let g = ArrayGeometry::from_aperture(0.025, l / 2.0, l / 2.0, 2.0).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let r = 0.05 * 1.15f64.powi(i);
            let norm = channel_vector(&g, 0, [0.0, 0.0, r], l).unwrap().norm_squared();
            assert!(norm < last);
            last = norm;
        }
    }

    #[test]
    fn sampler_bounds_and_determinism() {
        let l = lambda_28ghz();
        let geo = ArrayGeometry::from_aperture(0.025, l / 2.0, l / 2.0, 2.0).unwrap();
        let df = fraunhofer_distance(0.025, l);
        for zone in [Zone::Near, Zone::Far, Zone::Combined] {
            let s = UserSampler::new(zone, df, geo.aperture_diagonal(), 42).unwrap();
            let (lo, hi) = s.radial_bounds();
            let (flo, fhi) = zone.radial_factors();
            assert!(lo >= flo * df && lo >= MIN_RADIUS_DIAGONALS * geo.aperture_diagonal());
            assert_relative_eq!(hi, fhi * df);
            let pts = s.sample_realization(3, 500);
            for p in &pts {
                assert_eq!(p[1], 0.0);
                let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
                assert!(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
                assert!(p[2] > 0.0);
            }
            assert_eq!(pts, s.sample_realization(3, 500));
            assert_ne!(pts, s.sample_realization(4, 500));
        }
    }

    #[test]
    fn sampler_theta_is_uniform() {
        let s = UserSampler::new(Zone::Combined, 2.0, 0.1, 7).unwrap();
        let mut thetas: Vec<f64> = s
            .sample_users(10_000)
            .iter()
            .map(|p| p[0].atan2(p[2]))
            .collect();
        thetas.sort_by(f64::total_cmp);
        let n = thetas.len() as f64;
        let ks = thetas
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let cdf = (t + FRAC_PI_2) / PI;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn empty_zone_rejected() {
        // Aperture so large the reactive-zone clip exceeds the near-zone edge.
        assert!(UserSampler::new(Zone::Near, 0.1, 1.0, 0).is_err());
    }
}
