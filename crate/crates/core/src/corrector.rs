//! Corrector diagnostics and the limiting weight transport.
//!
//! The central claims under test: the recovered corrector p stays between
//! multiples of the instantaneous age profile Q on the birth support, with a
//! bracket controlled by the accumulated variation of sup_y eta, and between
//! the static envelopes built from the fitness band for all ages. The weight
//! gamma solves a transport equation driven by the limit phase.

use crate::coefficients::AssumptionBounds;
use crate::direct::CorrectorGrid;
use crate::eigen::{EigenEngine, EigenError};
use crate::grid::{AgeGrid, TraitGrid};
use crate::hj::{HjFrame, HjRun};
use crate::kernel::KernelQuad;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("CFL violated in the gamma transport: dt = {dt:e}, bound = {bound:e}")]
    CflViolation { dt: f64, bound: f64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Diagnostics of one recorded instant.
#[derive(Debug, Clone, Serialize)]
pub struct FrameDiagnostics {
    pub t: f64,
    /// min/max of p / Q(., eta_eps) over the birth support.
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Comparison-principle bracket from the initial bracket and the
    /// accumulated TV of sup eta.
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    /// min over cells of p - Q_lower and Q_upper - p (>= 0 when the static
    /// envelopes hold for all ages).
    pub envelope_lower_margin: f64,
    pub envelope_upper_margin: f64,
    /// max over probe traits of |iint J - 1|.
    pub j_mass_defect: f64,
    /// max error of the age-zero ratio identity gamma(0) eta = A(0) p(0).
    pub x0_identity_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectorDiagnostics {
    pub frames: Vec<FrameDiagnostics>,
    pub gamma_min_overall: f64,
    pub gamma_max_overall: f64,
    pub within_theory_bracket: bool,
    pub column_integral_min: f64,
    pub column_integral_max: f64,
    /// int Q_upper dx <= gamma_hi eta_hi / (-lambda_upper) check value.
    pub envelope_integral: f64,
    pub envelope_integral_bound: f64,
}

/// The constant K of the comparison-principle bound:
/// |dQ/dt / Q| <= |d eta/dt| (1/eta_lo + |dLambda/deta| K_transport).
pub fn bracket_rate(
    engine: &EigenEngine,
    bounds: &AssumptionBounds,
    grid: &TraitGrid,
    k_transport: f64,
) -> Result<f64, EigenError> {
    let mut dlam_max: f64 = 0.0;
    let stride = (grid.len() / 8).max(1);
    for i in (0..grid.len()).step_by(stride) {
        let y = grid.node(i);
        let band = engine.eta_band(y)?;
        for k in 0..=4 {
            let eta = (band.lo + (band.hi - band.lo) * k as f64 / 4.0)
                .clamp(band.lo * 1.000001, band.hi * 0.999999);
            let lam = engine.compute_lambda(y, eta)?;
            let (dlam, _, _) = engine.lambda_derivatives(y, eta, lam)?;
            dlam_max = dlam_max.max(dlam.abs());
        }
    }
    Ok(1.0 / bounds.eta_lower + dlam_max * k_transport)
}

/// Gamma-ratio and envelope diagnostics at one recorded instant.
///
/// `rec` is the recovered corrector at time `frame.t`, `eta_tv` the
/// accumulated TV of sup eta up to that time, and `(g0_lo, g0_hi)` the
/// initial bracket.
#[allow(clippy::too_many_arguments)]
pub fn check_gamma_bounds(
    engine: &EigenEngine,
    kq: &KernelQuad,
    age: &AgeGrid,
    grid: &TraitGrid,
    rec: &CorrectorGrid,
    frame: &HjFrame,
    epsilon: f64,
    eta_tv: f64,
    rate_k: f64,
    g0: (f64, f64),
    bounds: &AssumptionBounds,
) -> Result<FrameDiagnostics, CorrectorError> {
    let nx = age.n_nodes();
    let x_bar = engine.coeffs.x_bar();
    let i_bar = if x_bar.is_finite() {
        ((x_bar / age.dx).round() as usize).min(age.n_cells)
    } else {
        age.n_cells
    };
    let mut gamma_min = f64::INFINITY;
    let mut gamma_max = f64::NEG_INFINITY;
    let mut env_lo_margin = f64::INFINITY;
    let mut env_hi_margin = f64::INFINITY;
    let mut x0_err = 0.0f64;
    let bracket_lo = g0.0 * (-rate_k * eta_tv).exp();
    let bracket_hi = g0.1 * (rate_k * eta_tv).exp();

    for (j, y) in grid.nodes() {
        let eta = frame.eta[j];
        let lam = engine.compute_lambda(y, eta)?;
        // strong bounds: gamma on the birth support only
        for i in 0..=i_bar {
            let q = engine.q_value(y, eta, lam, age.x(i));
            let g = rec.p[j * nx + i] / q;
            gamma_min = gamma_min.min(g);
            gamma_max = gamma_max.max(g);
        }
        // static envelopes for all ages, with the global weight band:
        // Q_up = bracket_hi * eta_up / A * exp(int (lam_up - d)/A)
        for i in 0..nx {
            let x = age.x(i);
            let a = engine.coeffs.speed(x, y);
            let curly = engine.coeffs.curly_a(x, y);
            let dcum = engine.coeffs.death_integral(x, y);
            let q_up =
                bracket_hi * bounds.eta_upper / a * (bounds.lambda_upper * curly - dcum).exp();
            let q_lo =
                bracket_lo * bounds.eta_lower / a * (bounds.lambda_lower * curly - dcum).exp();
            let p = rec.p[j * nx + i];
            env_hi_margin = env_hi_margin.min(q_up - p);
            env_lo_margin = env_lo_margin.min(p - q_lo);
        }
        // age-zero ratio identity gamma(0) eta = A(0) p(0)
        let q0 = eta / engine.coeffs.speed(0.0, y);
        let g0v = rec.p[j * nx] / q0;
        let lhs = g0v * eta;
        let rhs = engine.coeffs.speed(0.0, y) * rec.p[j * nx];
        x0_err = x0_err.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
    }

    let j_mass_defect = j_mass_defect(engine, kq, grid, frame, epsilon)?;
    Ok(FrameDiagnostics {
        t: frame.t,
        gamma_min,
        gamma_max,
        bracket_lo,
        bracket_hi,
        envelope_lower_margin: env_lo_margin,
        envelope_upper_margin: env_hi_margin,
        j_mass_defect,
        x0_identity_err: x0_err,
    })
}

/// |iint J - 1| at a handful of probe traits:
/// J(x, z) = M(z) e^{dU/eps} b(x, y + eps z) Q(x, y + eps z, eta(y + eps z)) / eta(y),
/// whose (x, z) mass is 1 by the normalization of Q and the definition of eta.
fn j_mass_defect(
    engine: &EigenEngine,
    kq: &KernelQuad,
    grid: &TraitGrid,
    frame: &HjFrame,
    epsilon: f64,
) -> Result<f64, CorrectorError> {
    let n = grid.len();
    let probes = [n / 2, n / 4, (3 * n) / 4];
    let mut worst = 0.0f64;
    for &j in &probes {
        let y = grid.node(j);
        let u_y = grid.interp(&frame.u, y);
        let mass = kq.eval_pairwise(|z| {
            let p = [y[0] + epsilon * z[0], y[1] + epsilon * z[1]];
            let du = (grid.interp(&frame.u, p) - u_y) / epsilon;
            let eta_p = grid.interp(&frame.eta, p);
            // int b Q dx at the displaced trait = eta_p * F(y_p, Lambda)
            let norm = match engine.compute_lambda(p, eta_p) {
                Ok(lam) => match engine.integral_bq(p, eta_p, lam) {
                    Ok(v) => v,
                    Err(_) => f64::NAN,
                },
                Err(_) => 1.0, // displaced trait left the band: dominated region
            };
            du.min(705.0).exp() * norm
        });
        let eta_y = grid.interp(&frame.eta, y);
        worst = worst.max((mass / eta_y - 1.0).abs());
    }
    Ok(worst)
}

/// Combine per-frame diagnostics into the run summary.
pub fn summarize(
    frames: Vec<FrameDiagnostics>,
    column_integrals: (f64, f64),
    envelope_integral: f64,
    envelope_integral_bound: f64,
) -> CorrectorDiagnostics {
    let gamma_min_overall = frames.iter().map(|f| f.gamma_min).fold(f64::INFINITY, f64::min);
    let gamma_max_overall = frames
        .iter()
        .map(|f| f.gamma_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let within = frames
        .iter()
        .all(|f| f.gamma_min >= f.bracket_lo - 1e-9 && f.gamma_max <= f.bracket_hi + 1e-9);
    CorrectorDiagnostics {
        frames,
        gamma_min_overall,
        gamma_max_overall,
        within_theory_bracket: within,
        column_integral_min: column_integrals.0,
        column_integral_max: column_integrals.1,
        envelope_integral,
        envelope_integral_bound,
    }
}

/// Result of the limiting gamma transport.
#[derive(Debug)]
pub struct GammaRun {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// First time the capped reaction coefficient saturated, if ever: the
    /// empirical validity horizon of the limiting equation.
    pub cap_saturation_time: Option<f64>,
}

/// Solve the limiting weight equation on the recorded limit-phase frames:
/// d_t gamma + dLambda/deta (int M z e^{grad U . z} dz) . grad gamma
///             - d_t eta (d2Lambda / (2 dLambda)) gamma = 0.
///
/// Upwind in trait, exact exponential reaction, d_t eta by backward
/// differences between frames; the reaction coefficient is capped at `cap`
/// (saturation logged, never silent).
pub fn solve_gamma(
    engine: &EigenEngine,
    kq: &KernelQuad,
    hj: &HjRun,
    gamma0: Vec<f64>,
    cap: f64,
) -> Result<GammaRun, CorrectorError> {
    let grid = &hj.state.grid;
    let n = grid.len();
    let mut gamma = gamma0;
    let mut times = vec![hj.frames[0].t];
    let mut fields = vec![gamma.clone()];
    let mut cap_saturation_time = None;

    for w in hj.frames.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let dt = cur.t - prev.t;
        if dt <= 0.0 {
            continue;
        }
        let mut next = gamma.clone();
        let mut v_max: f64 = 0.0;
        for i in 0..n {
            let y = grid.node(i);
            let eta = prev.eta[i].max(1e-12);
            let bundle = engine.bundle(y, eta)?;
            // drift velocity from the phase gradient
            let grad = grid.gradient_at(&prev.u, i);
            let mz = kq.exp_moment_z(grad);
            let v = [bundle.dlambda_deta * mz[0], bundle.dlambda_deta * mz[1]];
            for axis in 0..grid.dim {
                v_max = v_max.max(v[axis].abs() / grid.spacing[axis]);
            }
            // upwind transport
            let mut adv = 0.0;
            for axis in 0..grid.dim {
                let (gm, gp) = grid.one_sided(&gamma, i, axis);
                adv += if v[axis] >= 0.0 {
                    v[axis] * gm
                } else {
                    v[axis] * gp
                };
            }
            // reaction: backward-difference d_t eta, capped coefficient
            let deta_dt = (cur.eta[i] - prev.eta[i]) / dt;
            let mut coef = deta_dt * bundle.d2lambda_deta2 / (2.0 * bundle.dlambda_deta);
            if coef.abs() > cap {
                if cap_saturation_time.is_none() {
                    cap_saturation_time = Some(cur.t);
                    log::warn!(
                        "gamma reaction coefficient saturated the cap {cap} at t = {:.4}",
                        cur.t
                    );
                }
                coef = coef.signum() * cap;
            }
            next[i] = (gamma[i] - dt * adv) * (dt * coef).exp();
        }
        if dt * v_max > 0.9 {
            return Err(CorrectorError::CflViolation {
                dt,
                bound: 0.9 / v_max,
            });
        }
        gamma = next;
        times.push(cur.t);
        fields.push(gamma.clone());
    }
    Ok(GammaRun {
        times,
        fields,
        cap_saturation_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AssumptionBounds, CoefficientModel, CoefficientSet};
    use crate::hj::{HjSolver, MonitorConfig};
    use crate::kernel::{KernelKind, MutationKernel};

    fn bounds() -> AssumptionBounds {
        AssumptionBounds {
            lambda_lower: -4.0,
            lambda_upper: -0.05,
            eta_lower: 0.8,
            eta_upper: 2.5,
            k0: 2.4,
            l_f: 0.06,
            big_l_f: 1.0,
            delta: 0.3,
        }
    }

    fn mcfg() -> MonitorConfig {
        MonitorConfig {
            lambda_lower: -4.0,
            lambda_upper: -0.05,
            k0: 2.4,
            lipschitz_growth: 0.0,
            lip_slack: 0.5,
            semiconvex_c: 1.5,
            semiconvex_growth: 1.0,
            semiconvex_slack: 0.5,
            eta_band_slack: 1e-8,
            dtu_slack_per_dt: 1e-6,
        }
    }

    #[test]
    fn gamma_constant_under_stationary_eta() {
        // y-homogeneous scenario: eta stays 1 everywhere, so d_t eta = 0,
        // the drift multiplies grad gamma = 0, and gamma stays put.
        let coeffs = CoefficientSet::new(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            1,
        );
        let engine = EigenEngine::new(coeffs, bounds(), 0.05);
        let k = MutationKernel::new(KernelKind::Gaussian { sigma: vec![0.5] }, 1);
        let kq = KernelQuad::build(&k, 8.0, 1e-12).unwrap();
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let run = solver
            .run(vec![0.0; grid.len()], 0.0, 0.2, 0.05, true)
            .unwrap();
        let g = solve_gamma(&engine, &kq, &run, vec![1.7; grid.len()], 50.0).unwrap();
        assert!(g.cap_saturation_time.is_none());
        let last = g.fields.last().unwrap();
        for v in last {
            assert!((v - 1.7).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn conserved_quantity_at_stationary_concentration_point() {
        // symmetric well with the argmax on a node: eta(t, y*) = 1 for the
        // limit equation, so sqrt(-dLambda) gamma at y* is constant in t
        let coeffs = CoefficientSet::new(
            CoefficientModel::CompactifiedWell {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
                d_well: 0.3,
                well_center: vec![0.0],
                d_skew: 0.0,
            },
            1,
        );
        let engine = EigenEngine::new(coeffs, bounds(), 0.05);
        let k = MutationKernel::new(KernelKind::Gaussian { sigma: vec![0.5] }, 1);
        let kq = KernelQuad::build(&k, 8.0, 1e-12).unwrap();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.05, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| -0.5 * y[0] * y[0]).collect();
        let run = solver.run(u0, 0.0, 0.4, 0.1, true).unwrap();
        let gamma0: Vec<f64> = grid.nodes().map(|(_, y)| 1.0 + 0.2 * y[0]).collect();
        let g = solve_gamma(&engine, &kq, &run, gamma0, 50.0).unwrap();
        let node = grid.len() / 2; // y = 0 on-grid
        let mut series = Vec::new();
        for (k_idx, t) in g.times.iter().enumerate() {
            let eta = run.frames[k_idx].eta[node];
            let b = engine.bundle([0.0, 0.0], eta).unwrap();
            series.push(((-b.dlambda_deta).sqrt() * g.fields[k_idx][node], *t));
        }
        let s0 = series[0].0;
        for (s, t) in &series {
            assert!(
                (s / s0 - 1.0).abs() < 1e-4,
                "drift {} at t {}",
                (s / s0 - 1.0).abs(),
                t
            );
        }
    }
}
