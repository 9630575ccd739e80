//! Dynamic metasurface antenna model.
//!
//! Each of the `N_r` microstrips is fed by one RF chain and carries `N_c`
//! radiating elements. The radiated vector for precoder `w` is `H Q w`, where
//! `H` is the diagonal waveguide propagation matrix and `Q` (`N x N_r`) holds
//! element weight `q_n` in row `n`, column `row_of(n)`, and zeros elsewhere.
//! Only the `N` structurally non-zero weights are stored (`q_reduced`).

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{ArrayGeometry, ChannelVector};
use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix, ComplexVector};

const J: Complex64 = Complex64::new(0.0, 1.0);
const CENTER: Complex64 = Complex64::new(0.0, 0.5);
const RADIUS: f64 = 0.5;

/// Tolerance for membership on the Lorentzian circle.
pub const LORENTZIAN_TOL: f64 = 1e-9;

const FIT_PHASES: usize = 64;
const FIT_GOLDEN_ITERS: usize = 80;
/// The scale search spans this many decades below the largest useful scale.
const FIT_DECADES: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DmaState {
    pub geometry: ArrayGeometry,
    /// Distance of each element from its microstrip feed, meters.
    pub element_offsets: Vec<f64>,
    /// Attenuation per microstrip, nepers/m.
    pub alpha: Vec<f64>,
    /// Propagation constant per microstrip, rad/m.
    pub beta: Vec<f64>,
    /// Diagonal of `H`.
    pub h_diag: ComplexVector,
    /// Non-zero entries of `Q` in flat element order.
    pub q_reduced: ComplexVector,
}

impl DmaState {
    /// Lossless, phase-flat waveguides (`H = I`).
    pub fn new(geometry: ArrayGeometry, q_reduced: ComplexVector) -> Result<Self> {
        let rows = geometry.n_rows;
        Self::with_waveguide(geometry, vec![0.0; rows], vec![0.0; rows], q_reduced)
    }

    pub fn with_waveguide(
        geometry: ArrayGeometry,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        q_reduced: ComplexVector,
    ) -> Result<Self> {
        let n = geometry.num_elements();
        if alpha.len() != geometry.n_rows || beta.len() != geometry.n_rows {
            return Err(Error::Dimension(format!(
                "need {} waveguide constants, got alpha={} beta={}",
                geometry.n_rows,
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Invalid("attenuation must be finite and non-negative".into()));
        }
        if q_reduced.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} element weights, got {}",
                q_reduced.len()
            )));
        }
        let element_offsets: Vec<f64> = (0..n)
            .map(|idx| (idx % geometry.n_cols) as f64 * geometry.d_x)
            .collect();
        let h_diag = ComplexVector::from_fn(n, |idx, _| {
            let i = geometry.row_of(idx);
            (-element_offsets[idx] * Complex64::new(alpha[i], beta[i])).exp()
        });
        Ok(Self {
            geometry,
            element_offsets,
            alpha,
            beta,
            h_diag,
            q_reduced,
        })
    }

    /// Weights drawn uniformly on the Lorentzian circle.
    pub fn random_lorentzian<R: Rng>(geometry: ArrayGeometry, rng: &mut R) -> Result<Self> {
        let q = ComplexVector::from_fn(geometry.num_elements(), |_, _| {
            lorentzian_weight(rng.random_range(0.0..2.0 * PI))
        });
        Self::new(geometry, q)
    }

    pub fn with_weights(&self, q_reduced: ComplexVector) -> Result<Self> {
        if q_reduced.len() != self.num_elements() {
            return Err(Error::Dimension(format!(
                "expected {} element weights, got {}",
                self.num_elements(),
                q_reduced.len()
            )));
        }
        Ok(Self {
            q_reduced,
            ..self.clone()
        })
    }

    pub fn num_elements(&self) -> usize {
        self.geometry.num_elements()
    }

    pub fn num_rf_chains(&self) -> usize {
        self.geometry.n_rows
    }

    pub fn is_lorentzian(&self, tol: f64) -> bool {
        self.q_reduced
            .iter()
            .all(|q| (distance_to_circle(*q)) <= tol)
    }

    /// Dense `Q` (`N x N_r`).
    pub fn weight_matrix(&self) -> ComplexMatrix {
        let n = self.num_elements();
        let mut q = ComplexMatrix::zeros(n, self.num_rf_chains());
        for idx in 0..n {
            q[(idx, self.geometry.row_of(idx))] = self.q_reduced[idx];
        }
        q
    }

    /// Dense diagonal `H` (`N x N`).
    pub fn propagation_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&self.h_diag)
    }

    /// `H Q w`, evaluated element-wise from the block structure.
    pub fn transmit_vector(&self, w: &ComplexVector) -> Result<ComplexVector> {
        if w.len() != self.num_rf_chains() {
            return Err(Error::Dimension(format!(
                "precoder length {} != {} microstrips",
                w.len(),
                self.num_rf_chains()
            )));
        }
        Ok(ComplexVector::from_fn(self.num_elements(), |n, _| {
            self.h_diag[n] * self.q_reduced[n] * w[self.geometry.row_of(n)]
        }))
    }

    /// `Z = (HQ)^H HQ`, diagonal with entry `i` the summed `|h q|^2` on microstrip `i`.
    pub fn precoder_cost(&self) -> ComplexMatrix {
        let mut z = ComplexMatrix::zeros(self.num_rf_chains(), self.num_rf_chains());
        for n in 0..self.num_elements() {
            let i = self.geometry.row_of(n);
            z[(i, i)] += Complex64::new((self.h_diag[n] * self.q_reduced[n]).norm_sqr(), 0.0);
        }
        z
    }

    /// Per-user channel seen by the digital precoder: `(gamma_k^H H Q)^H`, so
    /// that `P_k` is its outer product.
    pub fn effective_channel(&self, channel: &ChannelVector) -> Result<ComplexVector> {
        if channel.len() != self.num_elements() {
            return Err(Error::Dimension(format!(
                "channel length {} != {} elements",
                channel.len(),
                self.num_elements()
            )));
        }
        let gamma = channel.column();
        let mut a = ComplexVector::zeros(self.num_rf_chains());
        for n in 0..self.num_elements() {
            a[self.geometry.row_of(n)] += (self.h_diag[n] * self.q_reduced[n]).conj() * gamma[n];
        }
        Ok(a)
    }
}

/// `(j + e^{j phi}) / 2`.
pub fn lorentzian_weight(phi: f64) -> Complex64 {
    (J + Complex64::from_polar(1.0, phi)) * 0.5
}

pub fn distance_to_circle(z: Complex64) -> f64 {
    ((z - CENTER).norm() - RADIUS).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianProjection {
    pub weight: Complex64,
    /// `phi` in `[0, 2 pi)` with `weight = (j + e^{j phi}) / 2`.
    pub phase: f64,
    /// Input was the circle centre, where every point is equally near; the
    /// result is fixed to `phi = pi/2`.
    pub tie: bool,
}

/// Nearest point on the Lorentzian circle.
pub fn lorentzian_project(z: Complex64) -> LorentzianProjection {
    let d = z - CENTER;
    let r = d.norm();
    if r == 0.0 {
        return LorentzianProjection {
            weight: J,
            phase: FRAC_PI_2,
            tie: true,
        };
    }
    let unit = d / r;
    LorentzianProjection {
        weight: CENTER + unit * RADIUS,
        phase: unit.arg().rem_euclid(2.0 * PI),
        tie: false,
    }
}

/// Result of mapping an unconstrained weight vector onto the Lorentzian set.
#[derive(Debug, Clone)]
pub struct LorentzianFit {
    /// Complex scale applied before the entry-wise projection.
    pub scale: Complex64,
    pub weights: ComplexVector,
    /// `sum_n |weights_n - scale q_n|^2 / |scale|^2 ||q||^2`.
    pub relative_misfit: f64,
    pub ties: usize,
}

fn relative_misfit(q: &ComplexVector, scale: Complex64, q_norm2: f64) -> f64 {
    let s2 = scale.norm_sqr();
    q.iter()
        .map(|x| distance_to_circle(scale * x).powi(2))
        .sum::<f64>()
        / (s2 * q_norm2)
}

/// Entry-wise Lorentzian mapping after fitting a complex scale.
///
/// `x = H Q w` is unchanged when `Q` is multiplied by `c` and `w` by `1/c`, so
/// the unconstrained weights are first rescaled by the `c = beta e^{j theta}`
/// that brings them closest to the circle relative to their size: `theta` on a
/// 64-point grid, `beta` by golden-section search on a log scale. The
/// identity scale is always among the candidates.
pub fn fit_and_project(q: &ComplexVector) -> LorentzianFit {
    let q_norm2 = q.norm_squared();
    let max_abs = q.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if q_norm2 == 0.0 || max_abs == 0.0 {
        let projected: Vec<LorentzianProjection> = q.iter().map(|x| lorentzian_project(*x)).collect();
        return LorentzianFit {
            scale: Complex64::new(1.0, 0.0),
            weights: ComplexVector::from_iterator(q.len(), projected.iter().map(|p| p.weight)),
            relative_misfit: 0.0,
            ties: projected.iter().filter(|p| p.tie).count(),
        };
    }

    let mut best_scale = Complex64::new(1.0, 0.0);
    let mut best = relative_misfit(q, best_scale, q_norm2);

    let hi = (1.0 / max_abs).ln();
    let lo = hi - FIT_DECADES * std::f64::consts::LN_10;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for k in 0..FIT_PHASES {
        let rot = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / FIT_PHASES as f64);
        let eval = |s: f64| relative_misfit(q, rot * s.exp(), q_norm2);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..FIT_GOLDEN_ITERS {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = eval(d);
            }
        }
        let (s, f) = if fc < fd { (c, fc) } else { (d, fd) };
        if f < best {
            best = f;
            best_scale = rot * s.exp();
        }
    }

    let projected: Vec<LorentzianProjection> = q
        .iter()
        .map(|x| lorentzian_project(best_scale * x))
        .collect();
    LorentzianFit {
        scale: best_scale,
        weights: ComplexVector::from_iterator(q.len(), projected.iter().map(|p| p.weight)),
        relative_misfit: best,
        ties: projected.iter().filter(|p| p.tie).count(),
    }
}

/// Position of each structurally non-zero weight inside `vec(Q)`.
///
/// `vec(Q)` stacks the `N_r` columns of the `N x N_r` matrix, so weight `n`
/// (row `n`, column `row_of(n)`) sits at `row_of(n) * N + n`. All other
/// `L - N` entries of `vec(Q)` are zero for every admissible `Q`.
pub fn reduction_index_map(geometry: &ArrayGeometry) -> Vec<usize> {
    let n = geometry.num_elements();
    (0..n).map(|idx| geometry.row_of(idx) * n + idx).collect()
}

/// Coefficients of the weight-optimization SDP for fixed precoders.
#[derive(Debug, Clone)]
pub struct WeightSdpData {
    /// Reduced `A~_m` (`N x N`), one per precoder.
    pub a_tilde: Vec<ComplexMatrix>,
    /// `B~_m = A~_m A~_m^H`; `P_Tx = sum_m Tr(B~_m Q~)`.
    pub b_tilde: Vec<ComplexMatrix>,
    /// `c~_{k,m}` indexed `[k][m]`; `y_{k,m} = c~_{k,m}^H q~`.
    pub c_tilde: Vec<Vec<ComplexVector>>,
    /// `C~_{k,m} = c~ c~^H`.
    pub big_c_tilde: Vec<Vec<ComplexMatrix>>,
}

impl WeightSdpData {
    /// `sum_m B~_m`.
    pub fn total_cost(&self) -> ComplexMatrix {
        let n = self.b_tilde.first().map_or(0, |b| b.nrows());
        self.b_tilde
            .iter()
            .fold(ComplexMatrix::zeros(n, n), |acc, b| acc + b)
    }
}

/// Builds `A~_m`, `B~_m`, `c~_{k,m}`, `C~_{k,m}` by reading the rows of
/// `A_m = (w_m^T kron H)^H` and `c_{k,m} = (w_m^T kron gamma_k^H H)^H` that
/// survive the removal of structural zeros of `vec(Q)`.
pub fn build_weight_sdp(
    state: &DmaState,
    precoders: &[ComplexVector],
    channels: &[ChannelVector],
) -> Result<WeightSdpData> {
    let n = state.num_elements();
    let nr = state.num_rf_chains();
    let m_count = precoders.len();
    if m_count != channels.len().min(nr) {
        return Err(Error::Dimension(format!(
            "expected min(K, N_r) = {} precoders, got {m_count}",
            channels.len().min(nr)
        )));
    }
    for w in precoders {
        if w.len() != nr {
            return Err(Error::Dimension(format!("precoder length {} != {nr}", w.len())));
        }
    }
    for ch in channels {
        if ch.len() != n {
            return Err(Error::Dimension(format!("channel length {} != {n}", ch.len())));
        }
    }
    let map = reduction_index_map(&state.geometry);
    let h = &state.h_diag;

    let a_tilde: Vec<ComplexMatrix> = precoders
        .iter()
        .map(|w| {
            // Row j of A_m (j = i*N + p) has entry conj(w_i H_{n,p}) in column n.
            let mut a = ComplexMatrix::zeros(n, n);
            for (row, &j) in map.iter().enumerate() {
                let (i, p) = (j / n, j % n);
                a[(row, p)] = (w[i] * h[p]).conj();
            }
            a
        })
        .collect();
    let b_tilde = a_tilde.iter().map(|a| a * a.adjoint()).collect();

    let c_tilde: Vec<Vec<ComplexVector>> = channels
        .iter()
        .map(|ch| {
            let gamma = ch.column();
            precoders
                .iter()
                .map(|w| {
                    // Entry j = i*N + p of c_{k,m} is conj(w_i (gamma^H H)_p).
                    ComplexVector::from_iterator(
                        n,
                        map.iter().map(|&j| {
                            let (i, p) = (j / n, j % n);
                            (w[i] * gamma[p].conj() * h[p]).conj()
                        }),
                    )
                })
                .collect()
        })
        .collect();
    let big_c_tilde = c_tilde
        .iter()
        .map(|row| row.iter().map(numerics::outer).collect())
        .collect();

    Ok(WeightSdpData {
        a_tilde,
        b_tilde,
        c_tilde,
        big_c_tilde,
    })
}

/// Unconstrained weights from a solved weight SDP: `sqrt(lambda_1) v_1`, and
/// `lambda_2 / lambda_1`.
pub fn extract_q_from_sdp(q_tilde: &ComplexMatrix) -> Result<(ComplexVector, f64)> {
    numerics::principal_rank1(q_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_vector, wavelength};
    use crate::numerics::{c64, kron, trace_product, vec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(n: usize, rng: &mut impl Rng) -> ComplexVector {
        ComplexVector::from_fn(n, |_, _| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn small_state(rng: &mut impl Rng) -> (DmaState, Vec<ChannelVector>) {
        let l = wavelength(28e9);
        let geo = ArrayGeometry::new(2, 3, l / 3.0, l / 2.0, 2.0).unwrap();
        let alpha = vec![rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
        let beta = vec![rng.random_range(0.0..900.0), rng.random_range(0.0..900.0)];
        let q = random_cvec(6, rng);
        let state = DmaState::with_waveguide(geo.clone(), alpha, beta, q).unwrap();
        let channels = (0..2)
            .map(|k| {
                let p = [rng.random_range(-0.2..0.2), 0.0, rng.random_range(0.05..0.4)];
                channel_vector(&geo, k, p, l).unwrap()
            })
            .collect();
        (state, channels)
    }

    #[test]
    fn transmit_vector_block_structure() {
        let geo = ArrayGeometry::new(3, 2, 0.5, 0.5, 2.0).unwrap();
        let ones = ComplexVector::from_element(6, c64(1.0, 0.0));
        let state = DmaState::new(geo.clone(), ones).unwrap();
        let mut e1 = ComplexVector::zeros(3);
        e1[0] = c64(1.0, 0.0);
        let x = state.transmit_vector(&e1).unwrap();
        let want: Vec<f64> = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(x.iter().map(|z| z.re).collect::<Vec<_>>(), want);

        let zero = DmaState::new(geo, ComplexVector::zeros(6)).unwrap();
        let w = ComplexVector::from_element(3, c64(0.3, -2.0));
        assert!(zero.transmit_vector(&w).unwrap().iter().all(|z| *z == c64(0.0, 0.0)));
        assert!(zero.transmit_vector(&ComplexVector::zeros(2)).is_err());
    }

    #[test]
    fn transmit_vector_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (state, _) = small_state(&mut rng);
            let w = random_cvec(2, &mut rng);
            let dense = state.propagation_matrix() * state.weight_matrix() * &w;
            let fast = state.transmit_vector(&w).unwrap();
            assert!((dense - fast).norm() <= 1e-12 * w.norm());
        }
    }

    #[test]
    fn waveguide_is_passive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (state, _) = small_state(&mut rng);
        assert!(state.h_diag.iter().all(|h| h.norm() <= 1.0));
        let geo = state.geometry.clone();
        assert!(DmaState::with_waveguide(geo, vec![-1.0, 0.0], vec![0.0, 0.0], state.q_reduced.clone()).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = lorentzian_project(J);
        assert_relative_eq!((p.weight - J).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.phase, FRAC_PI_2, epsilon = 1e-15);

        let p = lorentzian_project(c64(0.0, 0.0));
        assert!(p.weight.norm() < 1e-15);
        assert_relative_eq!(p.phase, 1.5 * PI, epsilon = 1e-12);

        let p = lorentzian_project(c64(1.0, 0.0));
        assert_relative_eq!(p.weight.re, 0.447_213_595_499_958, epsilon = 1e-12);
        assert_relative_eq!(p.weight.im, 0.276_393_202_250_021, epsilon = 1e-12);
        assert!(!p.tie);

        let p = lorentzian_project(CENTER);
        assert!(p.tie);
        assert_eq!(p.weight, J);
    }

    #[test]
    fn projection_of_one_agrees_with_dense_phase_grid() {
        let z = c64(1.0, 0.0);
        let steps = 1_000_000;
        let best = (0..steps)
            .map(|s| lorentzian_weight(2.0 * PI * s as f64 / steps as f64))
            .min_by(|a, b| (z - a).norm().total_cmp(&(z - b).norm()))
            .unwrap();
        let p = lorentzian_project(z);
        assert!((best - p.weight).norm() < 1e-5);
        assert!((z - p.weight).norm() <= (z - best).norm() + 1e-12);
    }

    #[test]
    fn lorentzian_parametrization() {
        for s in 0..1000 {
            let phi = 2.0 * PI * s as f64 / 1000.0;
            let q = lorentzian_weight(phi);
            assert_relative_eq!((q - CENTER).norm(), 0.5, epsilon = 1e-15);
            assert_relative_eq!(q.norm(), ((phi - FRAC_PI_2) / 2.0).cos().abs(), epsilon = 1e-14);
            let p = lorentzian_project(q);
            assert!((p.weight - q).norm() < 1e-14);
        }
    }

    #[test]
    fn random_lorentzian_state_is_on_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geo = ArrayGeometry::new(4, 4, 0.5, 0.5, 2.0).unwrap();
        let state = DmaState::random_lorentzian(geo, &mut rng).unwrap();
        assert!(state.is_lorentzian(LORENTZIAN_TOL));
    }

    #[test]
    fn fit_generalizes_plain_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let q = random_cvec(12, &mut rng).scale(rng.random_range(0.01..10.0));
            let fit = fit_and_project(&q);
            let plain = relative_misfit(&q, c64(1.0, 0.0), q.norm_squared());
            assert!(fit.relative_misfit <= plain + 1e-15);
            assert!(fit.weights.iter().all(|w| distance_to_circle(*w) < 1e-12));
        }
    }

    #[test]
    fn fit_recovers_scaled_circle_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let on_circle = ComplexVector::from_fn(10, |_, _| lorentzian_weight(rng.random_range(0.0..2.0 * PI)));
        // Rotate by one of the grid phases and shrink: the fit should undo it.
        let c = Complex64::from_polar(0.25, 2.0 * PI * 5.0 / 64.0);
        let q = on_circle.map(|z| z / c);
        let fit = fit_and_project(&q);
        assert!(fit.relative_misfit < 1e-6, "misfit {}", fit.relative_misfit);
    }

    #[test]
    fn index_map_matches_dense_nonzero_pattern() {
        let geo = ArrayGeometry::new(3, 4, 0.5, 0.5, 2.0).unwrap();
        let q = ComplexVector::from_element(12, c64(1.0, 1.0));
        let state = DmaState::new(geo.clone(), q).unwrap();
        let vq = vec(&state.weight_matrix());
        assert_eq!(vq.len(), 3 * 3 * 4);
        let nonzero: Vec<usize> = (0..vq.len()).filter(|&j| vq[j] != c64(0.0, 0.0)).collect();
        assert_eq!(nonzero, reduction_index_map(&geo));
    }

    fn dense_reduction(state: &DmaState, w: &ComplexVector, gamma: &ComplexVector) -> (ComplexMatrix, ComplexVector) {
        let h = state.propagation_matrix();
        let wt = ComplexMatrix::from_row_slice(1, w.len(), w.as_slice());
        let a_full = kron(&wt, &h).adjoint();
        let gh = ComplexMatrix::from_row_slice(1, gamma.len(), (gamma.adjoint() * &h).as_slice());
        let c_full: ComplexVector = kron(&wt, &gh).adjoint().column(0).into_owned();
        // Keep rows where vec(Q) is structurally non-zero.
        let ones = state
            .with_weights(ComplexVector::from_element(state.num_elements(), c64(1.0, 0.0)))
            .unwrap();
        let pattern = vec(&ones.weight_matrix());
        let keep: Vec<usize> = (0..pattern.len()).filter(|&j| pattern[j] != c64(0.0, 0.0)).collect();
        let a_red = ComplexMatrix::from_fn(keep.len(), a_full.ncols(), |r, c| a_full[(keep[r], c)]);
        let c_red = ComplexVector::from_iterator(keep.len(), keep.iter().map(|&j| c_full[j]));
        (a_red, c_red)
    }

    #[test]
    fn reduction_matches_dense_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (state, channels) = small_state(&mut rng);
            let precoders: Vec<ComplexVector> = (0..2).map(|_| random_cvec(2, &mut rng)).collect();
            let data = build_weight_sdp(&state, &precoders, &channels).unwrap();
            for (m, w) in precoders.iter().enumerate() {
                for (k, ch) in channels.iter().enumerate() {
                    let (a_red, c_red) = dense_reduction(&state, w, &ch.column());
                    assert!((&a_red - &data.a_tilde[m]).norm() <= 1e-14 * a_red.norm().max(1e-300));
                    assert!((&c_red - &data.c_tilde[k][m]).norm() <= 1e-14 * c_red.norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn all_zero_precoders_give_zero_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (state, channels) = small_state(&mut rng);
        let precoders = vec![ComplexVector::zeros(2); 2];
        let data = build_weight_sdp(&state, &precoders, &channels).unwrap();
        assert!(data.b_tilde.iter().all(|b| b.norm() == 0.0));
        assert!(data.c_tilde.iter().flatten().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn build_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (state, channels) = small_state(&mut rng);
        let one = vec![random_cvec(2, &mut rng)];
        assert!(build_weight_sdp(&state, &one, &channels).is_err());
        let wrong_len = vec![random_cvec(3, &mut rng); 2];
        assert!(build_weight_sdp(&state, &wrong_len, &channels).is_err());
    }

    #[test]
    fn extract_q_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = random_cvec(6, &mut rng);
        let (got, ratio) = extract_q_from_sdp(&numerics::outer(&q)).unwrap();
        assert!(ratio < 1e-12);
        for i in 0..6 {
            assert_relative_eq!(got[i].norm(), q[i].norm(), max_relative = 1e-9);
        }
        let (_, ratio) = extract_q_from_sdp(&ComplexMatrix::identity(5, 5)).unwrap();
        assert_relative_eq!(ratio, 1.0, epsilon = 1e-14);
        let (z, ratio) = extract_q_from_sdp(&ComplexMatrix::zeros(4, 4)).unwrap();
        assert_eq!(ratio, 0.0);
        assert_eq!(z.norm(), 0.0);

        let noise = random_cvec(36, &mut rng);
        let e = numerics::hermitian_part(&numerics::unvec(&noise, 6, 6).unwrap()).scale(1e-8);
        let (_, ratio) = extract_q_from_sdp(&(numerics::outer(&q) + e)).unwrap();
        assert!(ratio <= 1e-6, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let p = lorentzian_project(c64(re, im)).weight;
            let pp = lorentzian_project(p).weight;
            prop_assert!((p - pp).norm() <= 1e-12);
            prop_assert!(((p - CENTER).norm() - 0.5).abs() <= 1e-15);
        }

        #[test]
        fn reduced_power_and_signal_match_direct(seed in 0u64..5000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (state, channels) = small_state(&mut rng);
            let precoders: Vec<ComplexVector> = (0..2).map(|_| random_cvec(2, &mut rng)).collect();
            let data = build_weight_sdp(&state, &precoders, &channels).unwrap();
            let qq = numerics::outer(&state.q_reduced);
            for (m, w) in precoders.iter().enumerate() {
                let x = state.transmit_vector(w).unwrap();
                let direct = x.norm_squared();
                let reduced = trace_product(&data.b_tilde[m], &qq);
                prop_assert!((direct - reduced).abs() <= 1e-10 * direct);
                for (k, ch) in channels.iter().enumerate() {
                    let y = ch.column().dotc(&x);
                    let y_red = data.c_tilde[k][m].dotc(&state.q_reduced);
                    prop_assert!((y - y_red).norm() <= 1e-10 * y.norm().max(1e-300));
                    let p_rx = trace_product(&data.big_c_tilde[k][m], &qq);
                    prop_assert!((p_rx - y.norm_sqr()).abs() <= 1e-10 * y.norm_sqr().max(1e-300));
                }
            }
        }
    }
}
