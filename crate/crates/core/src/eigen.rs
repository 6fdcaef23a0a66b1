//! Effective-fitness eigenelements.
//!
//! For a trait y and renewal weight eta, the fitness Lambda(y, eta) is the
//! unique root of F(y, Lambda) = 1/eta with
//!
//!   F(y, l) = int_0^inf b/A * exp(int_0^x (l - d)/A) dx,
//!
//! the age profile is Q(x) = eta/A * exp(int_0^x (Lambda - d)/A), and the dual
//! profile Phi solves the adjoint problem normalized by int Q Phi = 1. All
//! quadratures run on per-trait node tables with fixed summation order.

use crate::coefficients::{AssumptionBounds, CoefficientSet};
use crate::grid::{AgeGrid, TraitPoint};
use crate::quad::{cumulative_uniform, simpson_weights, QUAD_TOL};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("integral of F does not decay before the age cap (x_cut = {x_cut}, tail {tail:e})")]
    DivergentIntegral { x_cut: f64, tail: f64 },
    #[error(
        "eta = {eta} outside the admissible band [{eta_lo}, {eta_hi}] at y = ({y0}, {y1})"
    )]
    OutOfBracket {
        eta: f64,
        eta_lo: f64,
        eta_hi: f64,
        y0: f64,
        y1: f64,
    },
    #[error("dF/dlambda = {value:e} fell below l_F/2 = {floor:e}: assumption DerF failing")]
    DegenerateDerivative { value: f64, floor: f64 },
    #[error("root finder did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
}

/// Scalars of one eigen solve. Profiles are sampled on demand through the
/// engine so the memoized bundles stay small.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBundle {
    pub eta: f64,
    pub lambda: f64,
    pub dlambda_deta: f64,
    pub grad_y_lambda: TraitPoint,
    pub d2lambda_deta2: f64,
    /// Q at age zero: eta / A(0, y).
    pub q0: f64,
}

/// Admissible renewal-weight band at a fixed trait:
/// eta_lo(y) = 1/F(y, lambda_upper), eta_hi(y) = 1/F(y, lambda_lower).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaBand {
    pub lo: f64,
    pub hi: f64,
}

/// Per-trait quadrature table: Simpson nodes over the birth support with the
/// lambda-independent factors precomputed. One pass per F evaluation.
struct TraitTable {
    weights: Vec<f64>,       // Simpson x (b/A)
    curly: Vec<f64>,         // int 1/A
    dcum: Vec<f64>,          // int d/A
    x_front: f64,            // integration limit (x_bar, or the decayed cut)
    truncated_support: bool, // x_bar was infinite
}

const FRONT_PANELS: usize = 512;
const CAP_FACTOR: f64 = 50.0;

pub struct EigenEngine {
    pub coeffs: CoefficientSet,
    pub bounds: AssumptionBounds,
    pub quad_tol: f64,
    /// Central-difference step for the y-gradient of F.
    pub h_grad: f64,
    tables: RwLock<HashMap<(u64, u64), Arc<TraitTable>>>,
    bundles: RwLock<HashMap<(u64, u64, i64), Arc<EigenBundle>>>,
    bands: RwLock<HashMap<(u64, u64), EtaBand>>,
}

const ETA_QUANTUM: f64 = 1e-6;

impl EigenEngine {
    pub fn new(coeffs: CoefficientSet, bounds: AssumptionBounds, h_grad: f64) -> Self {
        EigenEngine {
            coeffs,
            bounds,
            quad_tol: QUAD_TOL,
            h_grad,
            tables: RwLock::new(HashMap::new()),
            bundles: RwLock::new(HashMap::new()),
            bands: RwLock::new(HashMap::new()),
        }
    }

    fn y_key(y: TraitPoint) -> (u64, u64) {
        (y[0].to_bits(), y[1].to_bits())
    }

    fn table(&self, y: TraitPoint) -> Result<Arc<TraitTable>, EigenError> {
        let key = Self::y_key(y);
        if let Some(t) = self.tables.read().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(self.build_table(y)?);
        let mut w = self.tables.write().unwrap();
        if w.len() > 8192 {
            w.clear();
        }
        w.insert(key, t.clone());
        Ok(t)
    }

    fn build_table(&self, y: TraitPoint) -> Result<TraitTable, EigenError> {
        let x_bar = self.coeffs.x_bar();
        let (x_front, truncated_support) = if x_bar.is_finite() {
            (x_bar, false)
        } else {
            (self.scan_front_cut(y)?, true)
        };
        // segment at breakpoints inside (0, x_front)
        let mut bps: Vec<f64> = vec![0.0];
        for b in self.coeffs.x_breakpoints() {
            if b > 0.0 && b < x_front {
                bps.push(b);
            }
        }
        bps.push(x_front);
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bps.dedup();

        let total = x_front;
        let mut weights = Vec::new();
        let mut curly = Vec::new();
        let mut dcum = Vec::new();
        for seg in bps.windows(2) {
            let len = seg[1] - seg[0];
            let mut n = ((len / total) * FRONT_PANELS as f64).ceil() as usize;
            // long decayed tails need a per-unit-length density floor
            n = n.max(32).max((128.0 * len).ceil() as usize);
            if n % 2 == 1 {
                n += 1;
            }
            let h = len / n as f64;
            let w = simpson_weights(n + 1, h);
            for i in 0..=n {
                let x = seg[0] + i as f64 * h;
                let a = self.coeffs.speed(x, y);
                let b = self.coeffs.birth(x, y);
                weights.push(w[i] * b / a);
                curly.push(self.coeffs.curly_a(x, y));
                dcum.push(self.coeffs.death_integral(x, y));
            }
        }
        Ok(TraitTable {
            weights,
            curly,
            dcum,
            x_front,
            truncated_support,
        })
    }

    /// For unbounded birth support: the smallest x where the F-integrand at
    /// lambda_upper has decayed below 1e-18 relative.
    fn scan_front_cut(&self, y: TraitPoint) -> Result<f64, EigenError> {
        let lam = self.bounds.lambda_upper;
        let cap = CAP_FACTOR;
        let mut x = 1.0;
        let mut peak: f64 = 0.0;
        let integrand = |x: f64| {
            self.coeffs.birth(x, y) / self.coeffs.speed(x, y)
                * (lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y)).exp()
        };
        loop {
            let v = integrand(x);
            peak = peak.max(v);
            if v < 1e-18 * peak.max(1e-300) {
                return Ok(x);
            }
            x *= 2.0;
            if x > cap {
                return Err(EigenError::DivergentIntegral {
                    x_cut: cap,
                    tail: integrand(cap),
                });
            }
        }
    }

    /// F and its first two lambda-derivatives in one pass.
    pub fn f_with_derivs(&self, y: TraitPoint, lam: f64) -> Result<(f64, f64, f64), EigenError> {
        let t = self.table(y)?;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut last = 0.0;
        let mut peak: f64 = 0.0;
        for i in 0..t.weights.len() {
            let e = t.weights[i] * (lam * t.curly[i] - t.dcum[i]).exp();
            s0 += e;
            s1 += e * t.curly[i];
            s2 += e * t.curly[i] * t.curly[i];
            last = e;
            peak = peak.max(e.abs());
        }
        if t.truncated_support && last > 1e-10 * peak.max(1e-300) {
            return Err(EigenError::DivergentIntegral {
                x_cut: t.x_front,
                tail: last,
            });
        }
        Ok((s0, s1, s2))
    }

    pub fn f_value(&self, y: TraitPoint, lam: f64) -> Result<f64, EigenError> {
        Ok(self.f_with_derivs(y, lam)?.0)
    }

    /// Gradient of F in y by central differences with step `h_grad`.
    pub fn grad_y_f(&self, y: TraitPoint, lam: f64) -> Result<TraitPoint, EigenError> {
        let mut g = [0.0, 0.0];
        for axis in 0..self.coeffs.dim {
            let mut yp = y;
            let mut ym = y;
            yp[axis] += self.h_grad;
            ym[axis] -= self.h_grad;
            g[axis] = (self.f_value(yp, lam)? - self.f_value(ym, lam)?) / (2.0 * self.h_grad);
        }
        Ok(g)
    }

    /// Admissible eta band at y (cached).
    pub fn eta_band(&self, y: TraitPoint) -> Result<EtaBand, EigenError> {
        let key = Self::y_key(y);
        if let Some(b) = self.bands.read().unwrap().get(&key) {
            return Ok(*b);
        }
        let f_hi = self.f_value(y, self.bounds.lambda_upper)?;
        let f_lo = self.f_value(y, self.bounds.lambda_lower)?;
        let band = EtaBand {
            lo: 1.0 / f_hi,
            hi: 1.0 / f_lo,
        };
        let mut w = self.bands.write().unwrap();
        if w.len() > 8192 {
            w.clear();
        }
        w.insert(key, band);
        Ok(band)
    }

    /// The unique root of F(y, .) = 1/eta on [lambda_lower, lambda_upper]:
    /// bisection bracket refined by safeguarded Newton.
    pub fn compute_lambda(&self, y: TraitPoint, eta: f64) -> Result<f64, EigenError> {
        let band = self.eta_band(y)?;
        let slack = 1e-9;
        if eta < band.lo * (1.0 - slack) || eta > band.hi * (1.0 + slack) {
            return Err(EigenError::OutOfBracket {
                eta,
                eta_lo: band.lo,
                eta_hi: band.hi,
                y0: y[0],
                y1: y[1],
            });
        }
        let target = 1.0 / eta;
        let mut lo = self.bounds.lambda_lower;
        let mut hi = self.bounds.lambda_upper;
        // F is increasing in lambda: F(lo) <= target <= F(hi)
        let mut lam = 0.5 * (lo + hi);
        let mut residual = f64::INFINITY;
        for _ in 0..200 {
            let (f, fp, _) = self.f_with_derivs(y, lam)?;
            residual = (eta * f - 1.0).abs();
            if residual <= 1e-12 && (hi - lo) <= 1e-12 * lam.abs().max(1.0) {
                return Ok(lam);
            }
            if f > target {
                hi = lam;
            } else {
                lo = lam;
            }
            if (hi - lo) <= 1e-15 * lam.abs().max(1.0) {
                return Ok(lam);
            }
            let newton = lam - (f - target) / fp;
            lam = if fp > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        if residual <= 1e-10 {
            return Ok(lam);
        }
        Err(EigenError::NoConvergence { residual })
    }

    /// dLambda/deta, grad_y Lambda, d2Lambda/deta2 at an admissible (y, eta).
    pub fn lambda_derivatives(
        &self,
        y: TraitPoint,
        eta: f64,
        lam: f64,
    ) -> Result<(f64, TraitPoint, f64), EigenError> {
        let (_f, fp, fpp) = self.f_with_derivs(y, lam)?;
        if fp < 0.5 * self.bounds.l_f {
            return Err(EigenError::DegenerateDerivative {
                value: fp,
                floor: 0.5 * self.bounds.l_f,
            });
        }
        let dlam = -1.0 / (eta * eta * fp);
        let gy = self.grad_y_f(y, lam)?;
        let grad = [-gy[0] / fp, -gy[1] / fp];
        let d2 = 2.0 / (eta.powi(3) * fp) - fpp / (eta.powi(4) * fp.powi(3));
        Ok((dlam, grad, d2))
    }

    /// Concavity margin d2_eta Lambda + d_eta Lambda / eta, in the symmetric
    /// form (F'^2 - F F'') / (F'^3 eta^3) exact at the root.
    pub fn concavity_margin(&self, y: TraitPoint, eta: f64) -> Result<f64, EigenError> {
        let lam = self.compute_lambda(y, eta)?;
        let (f, fp, fpp) = self.f_with_derivs(y, lam)?;
        Ok((fp * fp - f * fpp) / (fp.powi(3) * eta.powi(3)))
    }

    /// Full solve without memoization (used by tables and diagnostics).
    pub fn solve(&self, y: TraitPoint, eta: f64) -> Result<EigenBundle, EigenError> {
        let lam = self.compute_lambda(y, eta)?;
        let (dlam, grad, d2) = self.lambda_derivatives(y, eta, lam)?;
        Ok(EigenBundle {
            eta,
            lambda: lam,
            dlambda_deta: dlam,
            grad_y_lambda: grad,
            d2lambda_deta2: d2,
            q0: eta / self.coeffs.speed(0.0, y),
        })
    }

    /// Memoized solve with eta quantized to 1e-6 (floor) and clamped into the
    /// admissible band. The hot path of the Hamilton-Jacobi solvers.
    pub fn bundle(&self, y: TraitPoint, eta: f64) -> Result<Arc<EigenBundle>, EigenError> {
        let band = self.eta_band(y)?;
        let q = (eta / ETA_QUANTUM).floor() as i64;
        let key = {
            let (a, b) = Self::y_key(y);
            (a, b, q)
        };
        if let Some(b) = self.bundles.read().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let eta_rep = (q as f64 * ETA_QUANTUM).clamp(band.lo, band.hi);
        let bundle = Arc::new(self.solve(y, eta_rep)?);
        let mut w = self.bundles.write().unwrap();
        if w.len() > 262_144 {
            w.clear();
        }
        w.insert(key, bundle.clone());
        Ok(bundle)
    }

    /// Q(x, y, eta) with lambda already solved.
    pub fn q_value(&self, y: TraitPoint, eta: f64, lam: f64, x: f64) -> f64 {
        eta / self.coeffs.speed(x, y)
            * (lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y)).exp()
    }

    /// Q sampled on the age grid nodes.
    pub fn q_profile(&self, y: TraitPoint, eta: f64, lam: f64, age: &AgeGrid) -> Vec<f64> {
        (0..age.n_nodes())
            .map(|i| self.q_value(y, eta, lam, age.x(i)))
            .collect()
    }

    /// Integral of the birth-weighted profile, int b Q dx = eta F(lambda).
    pub fn integral_bq(&self, y: TraitPoint, eta: f64, lam: f64) -> Result<f64, EigenError> {
        Ok(eta * self.f_value(y, lam)?)
    }

    /// Tail-complete integral of g(x) * exp(lam curly - dcum) / A over
    /// [0, infinity), extending by doubling segments until the increment is
    /// negligible.
    fn tail_integral<G: Fn(f64) -> f64>(
        &self,
        y: TraitPoint,
        lam: f64,
        g: G,
    ) -> Result<f64, EigenError> {
        let integrand = |x: f64| {
            g(x) / self.coeffs.speed(x, y)
                * (lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y)).exp()
        };
        let x_bar = self.coeffs.x_bar();
        let scale = if x_bar.is_finite() { x_bar.max(1.0) } else { 1.0 };
        let all_bps = self.coeffs.x_breakpoints();
        let cap = CAP_FACTOR * scale;
        let mut total = 0.0;
        let mut prev = 0.0;
        let mut edge = scale;
        let mut last_seg = f64::INFINITY;
        loop {
            let mut bps: Vec<f64> = vec![prev];
            for &b in &all_bps {
                if b > prev && b < edge {
                    bps.push(b);
                }
            }
            bps.push(edge);
            bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bps.dedup();
            let seg = crate::quad::simpson_piecewise(&integrand, &bps, self.quad_tol).map_err(
                |_| EigenError::DivergentIntegral {
                    x_cut: edge,
                    tail: f64::NAN,
                },
            )?;
            total += seg;
            if prev > 0.0 {
                let floor = self.quad_tol * total.abs().max(1.0);
                // geometric estimate of everything beyond this segment
                let ratio = seg.abs() / last_seg.max(1e-300);
                let remaining = if ratio < 0.9 {
                    seg.abs() * ratio / (1.0 - ratio)
                } else {
                    f64::INFINITY
                };
                if seg.abs() <= floor || remaining <= floor {
                    return Ok(total);
                }
            }
            last_seg = seg.abs();
            prev = edge;
            edge *= 2.0;
            if edge > cap {
                return Err(EigenError::DivergentIntegral {
                    x_cut: cap,
                    tail: seg.abs(),
                });
            }
        }
    }

    /// int Q dx over the full tail.
    pub fn integral_q(&self, y: TraitPoint, eta: f64, lam: f64) -> Result<f64, EigenError> {
        Ok(eta * self.tail_integral(y, lam, |_| 1.0)?)
    }

    /// Alternative eigenvalue formula int (d - eta b) Q / int Q.
    pub fn alt_lambda(&self, y: TraitPoint, eta: f64, lam: f64) -> Result<f64, EigenError> {
        let num = self
            .tail_integral(y, lam, |x| self.coeffs.death(x, y) - eta * self.coeffs.birth(x, y))?;
        let den = self.tail_integral(y, lam, |_| 1.0)?;
        Ok(num / den)
    }

    /// Dual profile Phi on the nodes of `age` (zero beyond the birth support),
    /// together with Phi(0).
    ///
    /// Phi(x) = -dlam * eta * e^{-c(x)} (G(x_bar) - G(x)) with c = lam curly - dcum
    /// and G the cumulative of the F-integrand; Phi(0) = -dlam exactly by the
    /// implicit relation.
    pub fn phi_profile(
        &self,
        y: TraitPoint,
        eta: f64,
        lam: f64,
        dlam: f64,
        age: &AgeGrid,
    ) -> Vec<f64> {
        let x_bar = self.coeffs.x_bar().min(age.x_max());
        let refine = 8usize;
        let k = ((x_bar / age.dx).round() as usize).min(age.n_cells);
        let n_fine = k * refine;
        if n_fine == 0 {
            return vec![0.0; age.n_nodes()];
        }
        let h = x_bar / n_fine as f64;
        let fvals: Vec<f64> = (0..=n_fine)
            .map(|i| {
                let x = i as f64 * h;
                self.coeffs.birth(x, y) / self.coeffs.speed(x, y)
                    * (lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y)).exp()
            })
            .collect();
        let gcum = cumulative_uniform(&fvals, h);
        let g_end = gcum[n_fine];
        let mut phi = vec![0.0; age.n_nodes()];
        for i in 0..age.n_nodes() {
            let x = age.x(i);
            if x >= x_bar {
                break;
            }
            let c = lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y);
            phi[i] = -dlam * eta * (-c).exp() * (g_end - gcum[i * refine]);
        }
        phi
    }

    /// int Q Phi dx on a fine grid over the birth support (should be 1).
    pub fn integral_q_phi(&self, y: TraitPoint, eta: f64) -> Result<f64, EigenError> {
        let lam = self.compute_lambda(y, eta)?;
        let (dlam, _, _) = self.lambda_derivatives(y, eta, lam)?;
        let (xs, w, phi) = self.phi_fine(y, eta, lam, dlam)?;
        let mut s = 0.0;
        for i in 0..xs.len() {
            s += w[i] * self.q_value(y, eta, lam, xs[i]) * phi[i];
        }
        Ok(s)
    }

    /// int Q dPhi/deta dx with dPhi by centered differences in eta.
    pub fn integral_q_dphi(&self, y: TraitPoint, eta: f64, h: f64) -> Result<f64, EigenError> {
        let lam = self.compute_lambda(y, eta)?;
        let lam_p = self.compute_lambda(y, eta + h)?;
        let lam_m = self.compute_lambda(y, eta - h)?;
        let (dlam_p, _, _) = self.lambda_derivatives(y, eta + h, lam_p)?;
        let (dlam_m, _, _) = self.lambda_derivatives(y, eta - h, lam_m)?;
        let (xs, w, phi_p) = self.phi_fine(y, eta + h, lam_p, dlam_p)?;
        let (_, _, phi_m) = self.phi_fine(y, eta - h, lam_m, dlam_m)?;
        let mut s = 0.0;
        for i in 0..xs.len() {
            let dphi = (phi_p[i] - phi_m[i]) / (2.0 * h);
            s += w[i] * self.q_value(y, eta, lam, xs[i]) * dphi;
        }
        Ok(s)
    }

    /// Phi on a fine fixed grid over [0, x_front] plus Simpson weights.
    fn phi_fine(
        &self,
        y: TraitPoint,
        eta: f64,
        lam: f64,
        dlam: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), EigenError> {
        let t = self.table(y)?;
        let n = 2048usize;
        let h = t.x_front / n as f64;
        let fvals: Vec<f64> = (0..=n)
            .map(|i| {
                let x = i as f64 * h;
                self.coeffs.birth(x, y) / self.coeffs.speed(x, y)
                    * (lam * self.coeffs.curly_a(x, y) - self.coeffs.death_integral(x, y)).exp()
            })
            .collect();
        let gcum = cumulative_uniform(&fvals, h);
        let g_end = gcum[n];
        let xs: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let w = simpson_weights(n + 1, h);
        let phi: Vec<f64> = (0..=n)
            .map(|i| {
                let c = lam * self.coeffs.curly_a(xs[i], y) - self.coeffs.death_integral(xs[i], y);
                -dlam * eta * (-c).exp() * (g_end - gcum[i])
            })
            .collect();
        Ok((xs, w, phi))
    }

    /// Drop all memoized bundles (tables are kept; they are y-only).
    pub fn clear_bundles(&self) {
        self.bundles.write().unwrap().clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientModel;

    /// Closed form for the base family: F(lam) = b (e^{lam-d} - 1)/(lam - d).
    fn f_closed(lam: f64, b: f64, d: f64) -> f64 {
        let mu = lam - d;
        if mu.abs() < 1e-14 {
            b
        } else {
            b * (mu.exp() - 1.0) / mu
        }
    }

    fn base_bounds() -> AssumptionBounds {
        AssumptionBounds {
            lambda_lower: -4.0,
            lambda_upper: -0.05,
            eta_lower: 0.8,
            eta_upper: 2.8,
            k0: 2.4,
            l_f: 0.06,
            big_l_f: 1.0,
            delta: 0.3,
        }
    }

    fn base_engine() -> EigenEngine {
        let coeffs = CoefficientSet::new(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            1,
        );
        EigenEngine::new(coeffs, base_bounds(), 0.05)
    }

    const Y0: TraitPoint = [0.0, 0.0];

    #[test]
    fn f_matches_closed_form() {
        let e = base_engine();
        // lam = d makes the exponent vanish: F = 2 exactly
        let f1 = e.f_value(Y0, 1.0).unwrap();
        assert!((f1 - 2.0).abs() < 1e-10, "{f1}");
        // frozen oracle: F(0) = 2 (1 - e^{-1}) = 1.2642411176571153
        let f0 = e.f_value(Y0, 0.0).unwrap();
        assert!((f0 - 1.2642411176571153).abs() < 1e-10, "{f0}");
        for &lam in &[-3.0, -1.0, -0.2] {
            let f = e.f_value(Y0, lam).unwrap();
            assert!((f - f_closed(lam, 2.0, 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn f_zero_birth_is_zero() {
        let coeffs = CoefficientSet::new(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 0.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            1,
        );
        let e = EigenEngine::new(coeffs, base_bounds(), 0.05);
        assert_eq!(e.f_value(Y0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn lambda_root_against_bisection_oracle() {
        // independent oracle: bisection on the closed form down to 1e-12
        let (mut lo, mut hi) = (-4.0f64, -0.05f64);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if f_closed(mid, 2.0, 1.0) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - -0.5936242600400402).abs() < 1e-9); // frozen
        let e = base_engine();
        let lam = e.compute_lambda(Y0, 1.0).unwrap();
        assert!((lam - oracle).abs() < 1e-9, "{lam} vs {oracle}");
    }

    #[test]
    fn lambda_implicit_round_trip() {
        let e = base_engine();
        let lam_star = -0.5;
        let eta_star = 1.0 / e.f_value(Y0, lam_star).unwrap();
        let lam = e.compute_lambda(Y0, eta_star).unwrap();
        assert!((lam - lam_star).abs() < 1e-9);
    }

    #[test]
    fn lambda_monotone_in_eta() {
        let e = base_engine();
        let l1 = e.compute_lambda(Y0, 1.0).unwrap();
        let l2 = e.compute_lambda(Y0, 1.4).unwrap();
        assert!(l2 < l1);
    }

    #[test]
    fn lambda_out_of_bracket() {
        let e = base_engine();
        let band = e.eta_band(Y0).unwrap();
        assert!(matches!(
            e.compute_lambda(Y0, band.hi * 1.1),
            Err(EigenError::OutOfBracket { .. })
        ));
        assert!(matches!(
            e.compute_lambda(Y0, band.lo * 0.9),
            Err(EigenError::OutOfBracket { .. })
        ));
    }

    #[test]
    fn q_profile_constant_coefficients() {
        let e = base_engine();
        let eta = 1.2;
        let lam = e.compute_lambda(Y0, eta).unwrap();
        // Q(0) = eta / A(0)
        assert!((e.q_value(Y0, eta, lam, 0.0) - eta).abs() < 1e-14);
        // constant coefficients: Q(x) = eta e^{(lam - d) x}
        for &x in &[0.3, 0.9, 2.0] {
            let exact = eta * ((lam - 1.0) * x).exp();
            assert!((e.q_value(Y0, eta, lam, x) - exact).abs() < 1e-12);
        }
        // normalization int b Q = 1
        let ibq = e.integral_bq(Y0, eta, lam).unwrap();
        assert!((ibq - 1.0).abs() < 1e-9, "{ibq}");
    }

    #[test]
    fn derivative_formulas_match_finite_differences() {
        let e = base_engine();
        let eta = 1.1;
        let lam = e.compute_lambda(Y0, eta).unwrap();
        let (dlam, grad, d2) = e.lambda_derivatives(Y0, eta, lam).unwrap();
        assert_eq!(grad, [0.0, 0.0]); // y-independent coefficients
        let h = 1e-4;
        let lp = e.compute_lambda(Y0, eta + h).unwrap();
        let lm = e.compute_lambda(Y0, eta - h).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        assert!(
            ((dlam - fd) / dlam).abs() < 1e-6,
            "dlam {dlam} vs fd {fd}"
        );
        let fd2 = (lp - 2.0 * lam + lm) / (h * h);
        assert!(((d2 - fd2) / d2).abs() < 1e-4, "d2 {d2} vs fd {fd2}");
        // sign bound: dlam <= -1/(eta_upper^2 L)
        let bound = -1.0 / (e.bounds.eta_upper.powi(2) * e.bounds.big_l_f);
        assert!(dlam <= bound);
    }

    #[test]
    fn frozen_derivatives_at_eta_one() {
        let e = base_engine();
        let b = e.solve(Y0, 1.0).unwrap();
        assert!((b.dlambda_deta - -2.6845672714463356).abs() < 1e-7, "{}", b.dlambda_deta);
        assert!((b.d2lambda_deta2 - 1.2580750668301217).abs() < 1e-5, "{}", b.d2lambda_deta2);
        let m = e.concavity_margin(Y0, 1.0).unwrap();
        assert!((m - -1.4264922046162138).abs() < 1e-6, "{m}");
    }

    #[test]
    fn concavity_margin_negative_over_band() {
        let e = base_engine();
        let band = e.eta_band(Y0).unwrap();
        for k in 0..=10 {
            let eta = band.lo + (band.hi - band.lo) * k as f64 / 10.0;
            let eta = eta.clamp(band.lo * 1.000001, band.hi * 0.999999);
            let m = e.concavity_margin(Y0, eta).unwrap();
            assert!(m < 0.0, "margin {m} at eta {eta}");
            // Cauchy-Schwarz inside: F'^2 - F F'' <= 0
            let lam = e.compute_lambda(Y0, eta).unwrap();
            let (f, fp, fpp) = e.f_with_derivs(Y0, lam).unwrap();
            assert!(fp * fp - f * fpp <= 1e-12);
        }
    }

    #[test]
    fn phi_boundary_and_normalization() {
        let e = base_engine();
        let eta = 1.0;
        let lam = e.compute_lambda(Y0, eta).unwrap();
        let (dlam, _, _) = e.lambda_derivatives(Y0, eta, lam).unwrap();
        let age = AgeGrid::new(3.0, 0.02);
        let phi = e.phi_profile(Y0, eta, lam, dlam, &age);
        // Phi(0) = -dlam (frozen oracle 2.6845672714463356)
        assert!((phi[0] - -dlam).abs() < 1e-8, "{} vs {}", phi[0], -dlam);
        // zero beyond the birth support
        let i_bar = (1.0 / age.dx).round() as usize;
        for i in i_bar..age.n_nodes() {
            assert_eq!(phi[i], 0.0);
        }
        // int Q Phi = 1
        let iqp = e.integral_q_phi(Y0, eta).unwrap();
        assert!((iqp - 1.0).abs() < 1e-8, "{iqp}");
    }

    #[test]
    fn q_dphi_identity_sign_corrected() {
        // int Q dPhi/deta = d2lam / (2 dlam) — the sign forced by
        // differentiating int Q Phi = 1 (the published formula has the
        // opposite sign; three independent routes agree on this one).
        let e = base_engine();
        let eta = 1.0;
        let lam = e.compute_lambda(Y0, eta).unwrap();
        let (dlam, _, d2) = e.lambda_derivatives(Y0, eta, lam).unwrap();
        let lhs = e.integral_q_dphi(Y0, eta, 1e-4).unwrap();
        let rhs = d2 / (2.0 * dlam);
        assert!((lhs - rhs).abs() < 1e-6, "lhs {lhs} rhs {rhs}");
        // frozen oracle value
        assert!((lhs - -0.23431617456774).abs() < 1e-6, "{lhs}");
    }

    #[test]
    fn alternative_eigenvalue_formula() {
        let e = base_engine();
        for &eta in &[0.9, 1.0, 1.7] {
            let lam = e.compute_lambda(Y0, eta).unwrap();
            let alt = e.alt_lambda(Y0, eta, lam).unwrap();
            assert!((alt - lam).abs() < 1e-7, "eta {eta}: {alt} vs {lam}");
        }
    }

    #[test]
    fn divergent_integral_for_unbounded_birth() {
        // b = e^{0.2 x} style growth cannot be integrated at lam > kappa + d
        let coeffs = CoefficientSet::new(
            CoefficientModel::ExponentialBirth {
                a: 1.0,
                b0: 1.5,
                kappa: 0.5,
                d0: 1.0,
            },
            1,
        );
        let mut bounds = base_bounds();
        bounds.lambda_upper = -0.2;
        let e = EigenEngine::new(coeffs, bounds, 0.05);
        // F closed form: b0 / (kappa + d - lam); fine at lam = -0.2
        let f = e.f_value(Y0, -0.2).unwrap();
        assert!((f - 1.5 / (0.5 + 1.0 + 0.2)).abs() < 1e-8, "{f}");
        // divergence detected when the root-level weight cannot decay:
        let bad = EigenEngine::new(
            CoefficientSet::new(
                CoefficientModel::ExponentialBirth {
                    a: 1.0,
                    b0: 1.5,
                    kappa: 0.5,
                    d0: 1.0,
                },
                1,
            ),
            AssumptionBounds {
                lambda_upper: 2.0, // beyond kappa + d0: integrand grows
                ..base_bounds()
            },
        0.05,
        );
        assert!(matches!(
            bad.f_value(Y0, 2.0),
            Err(EigenError::DivergentIntegral { .. })
        ));
    }

    #[test]
    fn memoized_bundle_matches_exact_solve() {
        let e = base_engine();
        let eta = 1.234567890123;
        let b = e.bundle(Y0, eta).unwrap();
        // quantized to 1e-6 floor
        let exact = e.solve(Y0, (eta / 1e-6).floor() * 1e-6).unwrap();
        assert_eq!(b.lambda, exact.lambda);
        // cache hit returns the same Arc for eta in the same 1e-6 cell
        let b2 = e.bundle(Y0, eta + 2e-8).unwrap();
        assert!(Arc::ptr_eq(&b, &b2));
    }
}
