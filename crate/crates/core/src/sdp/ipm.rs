//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps.
//!
//! Each Hermitian block enters through its real-symmetric embedding, with
//! coefficients halved so that `<F_r / 2, X_r> = Tr(F X)`. Inequalities get a
//! nonnegative slack each, which also keeps the Schur complement definite.
//! Working form:
//!
//! ```text
//! min <C, X>   s.t.  A(X) - s = b,   X PSD, s >= 0
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{FarkasCertificate, SdpProblem, SdpSettings, SdpSolution, SdpStatus};
use crate::error::{Error, Result};
use crate::numerics::{self, ComplexMatrix};

type Mat = DMatrix<f64>;
type Vector = DVector<f64>;

const STEP_FACTOR: f64 = 0.99;
const MIN_STEP: f64 = 1e-12;
const ABS_GAP_TOL: f64 = 1e-13;

struct Scaled {
    dims: Vec<usize>,
    /// `a[i][b]`, `None` where constraint `i` does not touch block `b`.
    a: Vec<Vec<Option<Mat>>>,
    c: Vec<Mat>,
    b: Vector,
    row_scale: Vec<f64>,
    c_scale: f64,
    x_scale: f64,
    c_norm: f64,
    b_norm: f64,
}

#[derive(Clone)]
struct Iterate {
    x: Vec<Mat>,
    xl: Vector,
    y: Vector,
    s: Vec<Mat>,
    sl: Vector,
    tau: f64,
    kappa: f64,
}

struct BlockScaling {
    r: Mat,
    r_inv: Mat,
    w: Mat,
    lambda: Vector,
}

struct LpScaling {
    /// `sqrt(x / s)`.
    d: Vector,
    lambda: Vector,
}

struct Residuals {
    p: Vector,
    d: Vec<Mat>,
    dl: Vector,
    g: f64,
}

struct Direction {
    dx: Vec<Mat>,
    dxl: Vector,
    dy: Vector,
    ds: Vec<Mat>,
    dsl: Vector,
    dtau: f64,
    dkappa: f64,
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn frob2(blocks: &[Mat], lp: &Vector) -> f64 {
    blocks.iter().map(|m| m.norm_squared()).sum::<f64>() + lp.norm_squared()
}

fn min_eig(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym(m).symmetric_eigenvalues().min()
}

impl Scaled {
    fn new(problem: &SdpProblem) -> Self {
        let dims: Vec<usize> = problem.block_dims.iter().map(|n| 2 * n).collect();
        let nb = dims.len();
        let m = problem.constraints.len();
        let mut a = vec![vec![None; nb]; m];
        let mut b = Vector::zeros(m);
        let mut row_scale = vec![1.0; m];
        for (i, con) in problem.constraints.iter().enumerate() {
            for (blk, f) in &con.terms {
                let e = numerics::real_embedding(f) * 0.5;
                a[i][*blk] = Some(match a[i][*blk].take() {
                    Some(prev) => prev + e,
                    None => e,
                });
            }
            let norm = a[i]
                .iter()
                .flatten()
                .map(|m: &Mat| m.norm_squared())
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                row_scale[i] = norm;
                for m in a[i].iter_mut().flatten() {
                    *m /= norm;
                }
            }
            b[i] = con.rhs / row_scale[i];
        }
        let mut c: Vec<Mat> = problem
            .objective
            .iter()
            .map(|c| numerics::real_embedding(c) * 0.5)
            .collect();
        let c_norm_raw = c.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let c_scale = if c_norm_raw > 0.0 { c_norm_raw } else { 1.0 };
        for m in &mut c {
            *m /= c_scale;
        }
        let bmax = b.amax();
        let x_scale = if bmax > 0.0 { bmax } else { 1.0 };
        b /= x_scale;
        let c_norm = c.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let b_norm = b.norm();
        Self {
            dims,
            a,
            c,
            b,
            row_scale,
            c_scale,
            x_scale,
            c_norm,
            b_norm,
        }
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    /// Barrier parameter count: block orders plus one per slack.
    fn nu(&self) -> f64 {
        (self.dims.iter().sum::<usize>() + self.m()) as f64
    }

    fn apply_a(&self, x: &[Mat], xl: &Vector) -> Vector {
        Vector::from_fn(self.m(), |i, _| {
            self.a[i]
                .iter()
                .zip(x)
                .filter_map(|(a, x)| a.as_ref().map(|a| a.dot(x)))
                .sum::<f64>()
                - xl[i]
        })
    }

    fn apply_at(&self, y: &Vector) -> (Vec<Mat>, Vector) {
        let mut out: Vec<Mat> = self.dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        for (i, row) in self.a.iter().enumerate() {
            for (b, a) in row.iter().enumerate() {
                if let Some(a) = a {
                    out[b] += a * y[i];
                }
            }
        }
        (out, -y)
    }

    fn c_dot(&self, x: &[Mat]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c.dot(x)).sum()
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let p = self.apply_a(&it.x, &it.xl) - &self.b * it.tau;
        let (aty, atyl) = self.apply_at(&it.y);
        let d = aty
            .iter()
            .zip(&it.s)
            .zip(&self.c)
            .map(|((a, s), c)| a + s - c * it.tau)
            .collect();
        let dl = atyl + &it.sl;
        let g = self.c_dot(&it.x) - self.b.dot(&it.y) + it.kappa;
        Residuals { p, d, dl, g }
    }
}

fn block_scaling(x: &Mat, s: &Mat) -> Option<BlockScaling> {
    let lx = Cholesky::<f64, Dyn>::new(sym(x))?.unpack();
    let ls = Cholesky::<f64, Dyn>::new(sym(s))?.unpack();
    let g = ls.transpose() * &lx;
    let svd = g.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return None;
    }
    let inv_sqrt = lambda.map(|l| 1.0 / l.sqrt());
    let mut r = &lx * vt.transpose();
    for (j, f) in inv_sqrt.iter().enumerate() {
        r.column_mut(j).scale_mut(*f);
    }
    let mut r_inv = u.transpose() * ls.transpose();
    for (i, f) in inv_sqrt.iter().enumerate() {
        r_inv.row_mut(i).scale_mut(*f);
    }
    let w = &r * r.transpose();
    Some(BlockScaling { r, r_inv, w, lambda })
}

/// Largest `alpha` with `Lambda + alpha * d_scaled` PSD, for a step already in
/// the scaled frame.
fn block_step(lambda: &Vector, d_scaled: &Mat) -> f64 {
    let inv = lambda.map(|l| 1.0 / l.sqrt());
    let p = Mat::from_fn(d_scaled.nrows(), d_scaled.ncols(), |i, j| {
        inv[i] * d_scaled[(i, j)] * inv[j]
    });
    let e = min_eig(&p);
    if e < 0.0 {
        -1.0 / e
    } else {
        f64::INFINITY
    }
}

fn ratio_step(v: &Vector, dv: &Vector) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn scalar_step(v: f64, dv: f64) -> f64 {
    if dv < 0.0 {
        -v / dv
    } else {
        f64::INFINITY
    }
}

struct Newton<'a> {
    data: &'a Scaled,
    it: &'a Iterate,
    blocks: Vec<BlockScaling>,
    lp: LpScaling,
    chol: Cholesky<f64, Dyn>,
    v: Vector,
    gmb: Vector,
    cwc: f64,
}

impl<'a> Newton<'a> {
    fn new(data: &'a Scaled, it: &'a Iterate) -> Option<Self> {
        let blocks: Vec<BlockScaling> = it
            .x
            .iter()
            .zip(&it.s)
            .map(|(x, s)| block_scaling(x, s))
            .collect::<Option<_>>()?;
        if it.xl.iter().chain(it.sl.iter()).any(|v| !(*v > 0.0)) {
            return None;
        }
        let lp = LpScaling {
            d: it.xl.zip_map(&it.sl, |x, s| (x / s).sqrt()),
            lambda: it.xl.zip_map(&it.sl, |x, s| (x * s).sqrt()),
        };
        let m = data.m();
        // W A_j W for every constraint and block.
        let waw: Vec<Vec<Option<Mat>>> = data
            .a
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&blocks)
                    .map(|(a, sc)| a.as_ref().map(|a| &sc.w * a * &sc.w))
                    .collect()
            })
            .collect();
        let mut schur = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let mut v = 0.0;
                for b in 0..blocks.len() {
                    if let (Some(ai), Some(wj)) = (&data.a[i][b], &waw[j][b]) {
                        v += ai.dot(wj);
                    }
                }
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
            schur[(i, i)] += lp.d[i] * lp.d[i];
        }
        let wcw: Vec<Mat> = blocks
            .iter()
            .zip(&data.c)
            .map(|(sc, c)| &sc.w * c * &sc.w)
            .collect();
        let g = Vector::from_fn(m, |i, _| {
            data.a[i]
                .iter()
                .zip(&wcw)
                .filter_map(|(a, w)| a.as_ref().map(|a| a.dot(w)))
                .sum::<f64>()
        });
        let cwc = data.c_dot(&wcw);
        let chol = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let shift = 1e-14 * schur.diagonal().amax().max(1e-300);
                Cholesky::new(schur + Mat::identity(m, m) * shift)?
            }
        };
        let v = chol.solve(&(&g + &data.b));
        let gmb = &g - &data.b;
        Some(Self {
            data,
            it,
            blocks,
            lp,
            chol,
            v,
            gmb,
            cwc,
        })
    }

    fn direction(&self, res: &Residuals, eta: f64, dx_t: &[Mat], dxl_t: &Vector, dk_t: f64) -> Direction {
        let data = self.data;
        let it = self.it;
        let rd: Vec<Mat> = res.d.iter().map(|d| d * -eta).collect();
        let rdl = &res.dl * -eta;
        let rp = &res.p * -eta;
        let rg = -eta * res.g;

        let t: Vec<Mat> = self
            .blocks
            .iter()
            .zip(&rd)
            .map(|(sc, r)| &sc.w * r * &sc.w)
            .collect();
        let tl = self.lp.d.component_mul(&self.lp.d).component_mul(&rdl);

        let h1 = &rp + data.apply_a(&t, &tl) - data.apply_a(dx_t, dxl_t);
        let h2 = rg + data.c_dot(&t) - data.c_dot(dx_t) - dk_t / it.tau;
        let u = self.chol.solve(&h1);
        let denom = self.gmb.dot(&self.v) - self.cwc - it.kappa / it.tau;
        let dtau = (h2 - self.gmb.dot(&u)) / denom;
        let dy = &u + &self.v * dtau;

        let (aty, atyl) = data.apply_at(&dy);
        let dx: Vec<Mat> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, sc)| {
                let inner = &aty[b] - &data.c[b] * dtau - &rd[b];
                sym(&(&sc.w * inner * &sc.w + &dx_t[b]))
            })
            .collect();
        let d2 = self.lp.d.component_mul(&self.lp.d);
        let dxl = d2.component_mul(&(&atyl - &rdl)) + dxl_t;
        let ds: Vec<Mat> = (0..self.blocks.len())
            .map(|b| sym(&(&rd[b] - &aty[b] + &data.c[b] * dtau)))
            .collect();
        let dsl = &rdl - &atyl;
        let dkappa = (dk_t - it.kappa * dtau) / it.tau;
        Direction {
            dx,
            dxl,
            dy,
            ds,
            dsl,
            dtau,
            dkappa,
        }
    }

    fn scaled_steps(&self, dir: &Direction) -> (Vec<Mat>, Vec<Mat>, Vector, Vector) {
        let dxs = self
            .blocks
            .iter()
            .zip(&dir.dx)
            .map(|(sc, d)| sym(&(&sc.r_inv * d * sc.r_inv.transpose())))
            .collect();
        let dss = self
            .blocks
            .iter()
            .zip(&dir.ds)
            .map(|(sc, d)| sym(&(sc.r.transpose() * d * &sc.r)))
            .collect();
        let dxls = dir.dxl.component_div(&self.lp.d);
        let dsls = dir.dsl.component_mul(&self.lp.d);
        (dxs, dss, dxls, dsls)
    }

    fn max_step(&self, dir: &Direction) -> f64 {
        let (dxs, dss, _, _) = self.scaled_steps(dir);
        let mut alpha = f64::INFINITY;
        for (b, sc) in self.blocks.iter().enumerate() {
            alpha = alpha
                .min(block_step(&sc.lambda, &dxs[b]))
                .min(block_step(&sc.lambda, &dss[b]));
        }
        alpha
            .min(ratio_step(&self.it.xl, &dir.dxl))
            .min(ratio_step(&self.it.sl, &dir.dsl))
            .min(scalar_step(self.it.tau, dir.dtau))
            .min(scalar_step(self.it.kappa, dir.dkappa))
    }

    /// Second-order targets `D_X`, `d_x` for the corrector.
    fn corrector_targets(&self, aff: &Direction, sigma_mu: f64) -> (Vec<Mat>, Vector, f64) {
        let (dxs, dss, dxls, dsls) = self.scaled_steps(aff);
        let dx_t = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, sc)| {
                let n = sc.lambda.len();
                let prod = &dxs[b] * &dss[b];
                let cross = (&prod + prod.transpose()) * 0.5;
                let u = Mat::from_fn(n, n, |i, j| {
                    let mut g = -cross[(i, j)];
                    if i == j {
                        g += sigma_mu - sc.lambda[i] * sc.lambda[i];
                    }
                    2.0 * g / (sc.lambda[i] + sc.lambda[j])
                });
                sym(&(&sc.r * u * sc.r.transpose()))
            })
            .collect();
        let dxl_t = Vector::from_fn(self.lp.d.len(), |i, _| {
            let l = self.lp.lambda[i];
            self.lp.d[i] * (sigma_mu - l * l - dxls[i] * dsls[i]) / l
        });
        let dk_t = sigma_mu - self.it.tau * self.it.kappa - aff.dtau * aff.dkappa;
        (dx_t, dxl_t, dk_t)
    }
}

fn complementarity(it: &Iterate) -> f64 {
    it.x.iter().zip(&it.s).map(|(x, s)| x.dot(s)).sum::<f64>() + it.xl.dot(&it.sl) + it.tau * it.kappa
}

fn take_step(it: &Iterate, dir: &Direction, alpha: f64) -> Iterate {
    Iterate {
        x: it.x.iter().zip(&dir.dx).map(|(x, d)| sym(&(x + d * alpha))).collect(),
        xl: &it.xl + &dir.dxl * alpha,
        y: &it.y + &dir.dy * alpha,
        s: it.s.iter().zip(&dir.ds).map(|(s, d)| sym(&(s + d * alpha))).collect(),
        sl: &it.sl + &dir.dsl * alpha,
        tau: it.tau + alpha * dir.dtau,
        kappa: it.kappa + alpha * dir.dkappa,
    }
}

struct Measures {
    pres: f64,
    dres: f64,
    pobj: f64,
    dobj: f64,
    gap: f64,
}

fn measures(data: &Scaled, it: &Iterate, res: &Residuals) -> Measures {
    let pres = res.p.norm() / (it.tau * (1.0 + data.b_norm));
    let dres = frob2(&res.d, &res.dl).sqrt() / (it.tau * (1.0 + data.c_norm));
    let pobj = data.c_dot(&it.x) / it.tau;
    let dobj = data.b.dot(&it.y) / it.tau;
    let gap = (pobj - dobj).abs() / pobj.abs().max(dobj.abs()).max(1e-300);
    Measures {
        pres,
        dres,
        pobj,
        dobj,
        gap,
    }
}

/// Farkas test on the current `(y, S)`: `b^T y > 0` and `A^* y + S` small.
fn farkas(data: &Scaled, it: &Iterate) -> Option<f64> {
    let bty = data.b.dot(&it.y);
    if !(bty > 0.0) {
        return None;
    }
    let (aty, atyl) = data.apply_at(&it.y);
    let blocks: Vec<Mat> = aty.iter().zip(&it.s).map(|(a, s)| a + s).collect();
    Some(frob2(&blocks, &(atyl + &it.sl)).sqrt() / bty)
}

pub(super) fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    let data = Scaled::new(problem);
    let m = data.m();
    let nu = data.nu();
    let mut it = Iterate {
        x: data.dims.iter().map(|&n| Mat::identity(n, n)).collect(),
        xl: Vector::from_element(m, 1.0),
        y: Vector::zeros(m),
        s: data.dims.iter().map(|&n| Mat::identity(n, n)).collect(),
        sl: Vector::from_element(m, 1.0),
        tau: 1.0,
        kappa: 1.0,
    };

    let mut status = SdpStatus::MaxIter;
    let mut iterations = 0;
    let mut certificate_residual = None;
    loop {
        let res = data.residuals(&it);
        let ms = measures(&data, &it, &res);
        if ms.pres <= settings.tol
            && ms.dres <= settings.tol
            && (ms.gap <= settings.gap_tol || (ms.pobj - ms.dobj).abs() <= ABS_GAP_TOL)
        {
            status = SdpStatus::Optimal;
            break;
        }
        if let Some(f) = farkas(&data, &it) {
            if f <= settings.infeasibility_tol || it.tau <= settings.infeasibility_tol * it.kappa {
                status = SdpStatus::Infeasible;
                certificate_residual = Some(f);
                break;
            }
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let mu = complementarity(&it) / (nu + 1.0);
        let Some(newton) = Newton::new(&data, &it) else {
            break;
        };
        let neg_x: Vec<Mat> = it.x.iter().map(|x| -x).collect();
        let aff = newton.direction(&res, 1.0, &neg_x, &(-&it.xl), -it.tau * it.kappa);
        let alpha_aff = newton.max_step(&aff).min(1.0);
        let mu_aff = complementarity(&take_step(&it, &aff, alpha_aff)) / (nu + 1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let (dx_t, dxl_t, dk_t) = newton.corrector_targets(&aff, sigma * mu);
        let dir = newton.direction(&res, 1.0 - sigma, &dx_t, &dxl_t, dk_t);
        let alpha = (STEP_FACTOR * newton.max_step(&dir)).min(1.0);
        if !(alpha > MIN_STEP) || !alpha.is_finite() {
            break;
        }
        let next = take_step(&it, &dir, alpha);
        if !(next.tau > 0.0 && next.kappa > 0.0) {
            break;
        }
        it = next;
    }

    unscale(problem, &data, &it, status, iterations, certificate_residual)
}

fn unscale(
    problem: &SdpProblem,
    data: &Scaled,
    it: &Iterate,
    status: SdpStatus,
    iterations: usize,
    certificate_residual: Option<f64>,
) -> Result<SdpSolution> {
    let res = data.residuals(it);
    let ms = measures(data, it, &res);
    let (certificate, blocks, dual, dual_slacks) = if status == SdpStatus::Infeasible {
        // Dual ray in original units, normalized to b^T y = 1.
        let raw: Vec<f64> = (0..data.m())
            .map(|i| data.c_scale * it.y[i] / data.row_scale[i])
            .collect();
        let bty: f64 = raw
            .iter()
            .zip(&problem.constraints)
            .map(|(y, c)| y * c.rhs)
            .sum();
        let ray: Vec<f64> = raw.iter().map(|y| (y / bty).max(0.0)).collect();
        let ray_norm = ray.iter().map(|y| y * y).sum::<f64>().sqrt();
        let cert = FarkasCertificate {
            ray,
            ray_norm,
            residual: certificate_residual.unwrap_or(f64::NAN),
        };
        let zeros: Vec<ComplexMatrix> = problem
            .block_dims
            .iter()
            .map(|&n| ComplexMatrix::zeros(n, n))
            .collect();
        (Some(cert), zeros.clone(), vec![0.0; data.m()], zeros)
    } else {
        let blocks: Vec<ComplexMatrix> = it
            .x
            .iter()
            .map(|x| numerics::hermitian_part(&numerics::from_real_embedding(&(x * (data.x_scale / it.tau)))))
            .collect();
        let dual: Vec<f64> = (0..data.m())
            .map(|i| data.c_scale * it.y[i] / (data.row_scale[i] * it.tau))
            .collect();
        let dual_slacks = it
            .s
            .iter()
            .map(|s| numerics::hermitian_part(&numerics::from_real_embedding(&(s * (2.0 * data.c_scale / it.tau)))))
            .collect();
        (None, blocks, dual, dual_slacks)
    };
    if status == SdpStatus::Optimal && blocks.iter().any(|b| b.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return Err(Error::Solver("non-finite solution".into()));
    }
    let objective_value = problem.objective_value(&blocks);
    let dual_objective = if status == SdpStatus::Infeasible {
        f64::NAN
    } else {
        dual.iter().zip(&problem.constraints).map(|(y, c)| y * c.rhs).sum()
    };
    Ok(SdpSolution {
        constraint_residuals: problem.relative_residuals(&blocks),
        blocks,
        objective_value,
        dual_objective,
        status,
        duality_gap: ms.gap,
        dual,
        dual_slacks,
        iterations,
        primal_infeasibility: ms.pres,
        dual_infeasibility: ms.dres,
        certificate,
    })
}
