//! The canonical equation for the dominant trait:
//!
//!   dy/dt = (D2U(t, y))^-1 . grad_y Lambda(y, 1) + dLambda/deta (y, 1) int M z dz,
//!
//! integrated by RK4 against the recorded limit-phase frames, with the mass
//! rho = -Lambda(y(t), 1) both evaluated pointwise and integrated
//! independently through its rate equation drho/dt = -grad Lambda . dy/dt.

use crate::eigen::{EigenEngine, EigenError};
use crate::grid::{TraitGrid, TraitPoint};
use crate::hj::{interp_frames, HjRun};
use crate::kernel::KernelQuad;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("Hessian is singular or not negative definite (det = {det:e}) at t = {t}")]
    SingularHessian { det: f64, t: f64 },
    #[error("trajectory left the trait box at t = {t} (y = {y0})")]
    OutOfDomain { t: f64, y0: f64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    /// |det D2U| below threshold or positive direction appeared.
    ConcavityLost,
    /// The recorded argmax jumped by more than 3 grid cells between frames.
    ArgmaxJump,
    /// y(t) got within two nodes of the box boundary.
    DomainExit,
    /// Reached the requested horizon.
    Horizon,
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub y_bar: TraitPoint,
    /// -Lambda(y(t), 1), evaluated.
    pub rho: f64,
    /// rho integrated through the corollary rate equation.
    pub rho_integrated: f64,
    pub lambda_at: f64,
    pub hessian: [[f64; 2]; 2],
    pub det: f64,
}

#[derive(Debug)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub halt: (f64, HaltReason),
}

/// Centered second differences of U at the node nearest to y, symmetrized.
/// Errors out when the point sits within two nodes of a non-periodic edge or
/// the determinant vanishes.
pub fn hessian_at(grid: &TraitGrid, u: &[f64], y: TraitPoint, t: f64) -> Result<[[f64; 2]; 2], DynamicsError> {
    let mut idx = [0usize; 2];
    for axis in 0..grid.dim {
        let q = ((y[axis] - grid.min[axis]) / grid.spacing[axis]).round();
        let j = q.max(0.0) as usize;
        let n = grid.shape[axis];
        if !grid.periodic && (q < 2.0 || j + 2 >= n) {
            return Err(DynamicsError::OutOfDomain { t, y0: y[0] });
        }
        idx[axis] = j.min(n - 1);
    }
    let at = |d0: isize, d1: isize| -> f64 {
        let j0 = (idx[0] as isize + d0) as usize;
        let j1 = if grid.dim == 2 {
            (idx[1] as isize + d1) as usize
        } else {
            0
        };
        u[grid.index(j0, j1)]
    };
    let mut h = [[0.0; 2]; 2];
    let h0 = grid.spacing[0];
    h[0][0] = (at(1, 0) - 2.0 * at(0, 0) + at(-1, 0)) / (h0 * h0);
    if grid.dim == 2 {
        let h1 = grid.spacing[1];
        h[1][1] = (at(0, 1) - 2.0 * at(0, 0) + at(0, -1)) / (h1 * h1);
        let cross = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h0 * h1);
        h[0][1] = cross;
        h[1][0] = cross;
    }
    Ok(h)
}

fn det_2(h: &[[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 2 {
        h[0][0] * h[1][1] - h[0][1] * h[1][0]
    } else {
        h[0][0]
    }
}

fn negative_definite(h: &[[f64; 2]; 2], dim: usize) -> bool {
    if dim == 2 {
        h[0][0] < 0.0 && det_2(h, 2) > 0.0
    } else {
        h[0][0] < 0.0
    }
}

fn solve_2(h: &[[f64; 2]; 2], rhs: TraitPoint, dim: usize) -> Option<TraitPoint> {
    let det = det_2(h, dim);
    if det.abs() < 1e-10 {
        return None;
    }
    if dim == 2 {
        Some([
            (h[1][1] * rhs[0] - h[0][1] * rhs[1]) / det,
            (-h[1][0] * rhs[0] + h[0][0] * rhs[1]) / det,
        ])
    } else {
        Some([rhs[0] / h[0][0], 0.0])
    }
}

pub struct CanonicalIntegrator<'a> {
    pub engine: &'a EigenEngine,
    pub kq: &'a KernelQuad,
    pub hj: &'a HjRun,
}

impl<'a> CanonicalIntegrator<'a> {
    /// Right-hand sides (dy/dt, drho/dt) at (t, y).
    fn rates(&self, t: f64, y: TraitPoint) -> Result<(TraitPoint, f64), DynamicsError> {
        let grid = &self.hj.state.grid;
        let (w, fa, fb) = interp_frames(&self.hj.frames, t);
        let ha = hessian_at(grid, &fa.u, y, t)?;
        let hb = hessian_at(grid, &fb.u, y, t)?;
        let mut h = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                h[r][c] = ha[r][c] + (hb[r][c] - ha[r][c]) * w;
            }
        }
        let det = det_2(&h, grid.dim);
        if !negative_definite(&h, grid.dim) || det.abs() < 1e-10 {
            return Err(DynamicsError::SingularHessian { det, t });
        }
        let lam = self.engine.compute_lambda(y, 1.0)?;
        let (dlam, grad, _) = self.engine.lambda_derivatives(y, 1.0, lam)?;
        let inv_term = solve_2(&h, grad, grid.dim)
            .ok_or(DynamicsError::SingularHessian { det, t })?;
        let m1 = self.kq.first_moment();
        let ydot = [
            inv_term[0] + dlam * m1[0],
            inv_term[1] + dlam * m1[1],
        ];
        // corollary rate: drho/dt = -grad Lambda . dy/dt
        let rho_dot = -(grad[0] * ydot[0] + grad[1] * ydot[1]);
        Ok((ydot, rho_dot))
    }

    /// RK4 march from `y0` up to `t_final` or the validity horizon,
    /// whichever comes first.
    pub fn run(&self, y0: TraitPoint, dt: f64, t_final: f64) -> Result<Trajectory, DynamicsError> {
        let grid = &self.hj.state.grid;
        // precompute frame-to-frame argmax jumps to locate the first "jump"
        // invalidation of the monomorphic ansatz
        let mut jump_horizon = f64::INFINITY;
        for w in self.hj.frames.windows(2) {
            let a = crate::grid::sup_and_argmax(grid, &w[0].u).point;
            let b = crate::grid::sup_and_argmax(grid, &w[1].u).point;
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            if d > 3.0 * grid.spacing[0] {
                jump_horizon = w[1].t;
                break;
            }
        }

        let mut y = y0;
        let mut t = 0.0;
        let lam0 = self.engine.compute_lambda(y, 1.0)?;
        let mut rho_int = -lam0;
        let mut samples = Vec::new();
        let push =
            |samples: &mut Vec<TrajectorySample>, s: &Self, t: f64, y: TraitPoint, rho_int: f64| -> Result<(), DynamicsError> {
                let lam = s.engine.compute_lambda(y, 1.0)?;
                let (w, fa, fb) = interp_frames(&s.hj.frames, t);
                let ha = hessian_at(&s.hj.state.grid, &fa.u, y, t)?;
                let hb = hessian_at(&s.hj.state.grid, &fb.u, y, t)?;
                let mut h = [[0.0; 2]; 2];
                for r in 0..2 {
                    for c in 0..2 {
                        h[r][c] = ha[r][c] + (hb[r][c] - ha[r][c]) * w;
                    }
                }
                samples.push(TrajectorySample {
                    t,
                    y_bar: y,
                    rho: -lam,
                    rho_integrated: rho_int,
                    lambda_at: lam,
                    hessian: h,
                    det: det_2(&h, s.hj.state.grid.dim),
                });
                Ok(())
            };
        push(&mut samples, self, t, y, rho_int)?;

        let n = (t_final / dt).ceil().max(1.0) as usize;
        let dt = t_final / n as f64;
        let mut halt = (t_final, HaltReason::Horizon);
        for _ in 0..n {
            if t + dt > jump_horizon {
                halt = (t, HaltReason::ArgmaxJump);
                break;
            }
            let step = || -> Result<(TraitPoint, f64), DynamicsError> {
                let (k1, r1) = self.rates(t, y)?;
                let y2 = [y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]];
                let (k2, r2) = self.rates(t + 0.5 * dt, y2)?;
                let y3 = [y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]];
                let (k3, r3) = self.rates(t + 0.5 * dt, y3)?;
                let y4 = [y[0] + dt * k3[0], y[1] + dt * k3[1]];
                let (k4, r4) = self.rates(t + dt, y4)?;
                Ok((
                    [
                        y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                        y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                    ],
                    rho_int + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4),
                ))
            };
            match step() {
                Ok((y_new, rho_new)) => {
                    y = y_new;
                    rho_int = rho_new;
                    t += dt;
                    push(&mut samples, self, t, y, rho_int)?;
                }
                Err(DynamicsError::SingularHessian { .. }) => {
                    halt = (t, HaltReason::ConcavityLost);
                    break;
                }
                Err(DynamicsError::OutOfDomain { .. }) => {
                    halt = (t, HaltReason::DomainExit);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Trajectory { samples, halt })
    }
}

/// Route comparison series: canonical ODE vs the phase argmax vs the direct
/// density, plus the constraint residual |int rho - sup U| for both solvers.
#[derive(Debug, Clone, Default)]
pub struct RouteComparison {
    pub times: Vec<f64>,
    pub ode_vs_argmax: Vec<f64>,
    pub ode_vs_centroid: Vec<f64>,
    pub rho_pointwise_vs_integrated: Vec<f64>,
    /// |d/dt rho (finite differences of evaluated rho) - corollary rate|,
    /// relative.
    pub rho_rate_rel_gap: Vec<f64>,
}

pub fn compare_routes(
    traj: &Trajectory,
    hj: &HjRun,
    centroid_series: &[(f64, f64)],
) -> RouteComparison {
    let grid = &hj.state.grid;
    let mut out = RouteComparison::default();
    for (k, s) in traj.samples.iter().enumerate() {
        let (w, fa, fb) = interp_frames(&hj.frames, s.t);
        let am_a = crate::grid::sup_and_argmax(grid, &fa.u).point;
        let am_b = crate::grid::sup_and_argmax(grid, &fb.u).point;
        let am = [
            am_a[0] + (am_b[0] - am_a[0]) * w,
            am_a[1] + (am_b[1] - am_a[1]) * w,
        ];
        let d_argmax = ((s.y_bar[0] - am[0]).powi(2) + (s.y_bar[1] - am[1]).powi(2)).sqrt();
        let centroid = centroid_series
            .iter()
            .min_by(|a, b| {
                (a.0 - s.t)
                    .abs()
                    .partial_cmp(&(b.0 - s.t).abs())
                    .unwrap()
            })
            .map(|(_, c)| *c);
        out.times.push(s.t);
        out.ode_vs_argmax.push(d_argmax);
        out.ode_vs_centroid
            .push(centroid.map(|c| (s.y_bar[0] - c).abs()).unwrap_or(f64::NAN));
        out.rho_pointwise_vs_integrated
            .push((s.rho - s.rho_integrated).abs());
        // centered finite difference of the evaluated rho
        if k > 0 && k + 1 < traj.samples.len() {
            let prev = &traj.samples[k - 1];
            let next = &traj.samples[k + 1];
            let fd = (next.rho - prev.rho) / (next.t - prev.t);
            let rate = (next.rho_integrated - prev.rho_integrated) / (next.t - prev.t);
            let gap = (fd - rate).abs() / rate.abs().max(1e-12);
            out.rho_rate_rel_gap.push(gap);
        }
    }
    out
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
    fn hessian_exact_for_quadratics() {
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.05, false);
        let u: Vec<f64> = grid.nodes().map(|(_, y)| -0.5 * y[0] * y[0]).collect();
        let h = hessian_at(&grid, &u, [0.3, 0.0], 0.0).unwrap();
        assert!((h[0][0] + 1.0).abs() < 1e-10, "{}", h[0][0]);
        // 2-D
        let g2 = TraitGrid::new_2d([-1.0, -1.0], [1.0, 1.0], [0.1, 0.1], false);
        let u2: Vec<f64> = g2
            .nodes()
            .map(|(_, y)| -(y[0] * y[0] + 0.5 * y[0] * y[1] + y[1] * y[1]))
            .collect();
        let h2 = hessian_at(&g2, &u2, [0.0, 0.0], 0.0).unwrap();
        assert!((h2[0][0] + 2.0).abs() < 1e-9);
        assert!((h2[1][1] + 2.0).abs() < 1e-9);
        assert!((h2[0][1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn hessian_quadratic_well_tolerance() {
        // U0 = -(y - 0.3)^2 on a 0.05 grid: second difference -2 within 10 dy^2
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.05, false);
        let u: Vec<f64> = grid
            .nodes()
            .map(|(_, y)| -(y[0] - 0.3) * (y[0] - 0.3))
            .collect();
        let h = hessian_at(&grid, &u, [0.3, 0.0], 0.0).unwrap();
        assert!((h[0][0] + 2.0).abs() < 10.0 * 0.05 * 0.05);
    }

    #[test]
    fn linear_phase_has_singular_hessian() {
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.1, false);
        let u: Vec<f64> = grid.nodes().map(|(_, y)| 0.7 * y[0]).collect();
        let h = hessian_at(&grid, &u, [0.0, 0.0], 0.0).unwrap();
        assert!(h[0][0].abs() < 1e-10);
        assert!(solve_2(&h, [1.0, 0.0], 1).is_none());
    }

    #[test]
    fn stationary_point_stays_put() {
        // symmetric well centered where grad Lambda = 0 and even kernel:
        // y(t) = y0 for all t
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
        let run = solver.run(u0, 0.0, 0.3, 0.05, true).unwrap();
        let integ = CanonicalIntegrator {
            engine: &engine,
            kq: &kq,
            hj: &run,
        };
        // drift term contributes exactly zero for the even kernel
        assert_eq!(kq.first_moment(), [0.0, 0.0]);
        let traj = integ.run([0.0, 0.0], 0.01, 0.3).unwrap();
        for s in &traj.samples {
            assert!(s.y_bar[0].abs() < 1e-10, "{}", s.y_bar[0]);
            assert!((s.rho - s.rho_integrated).abs() < 1e-9);
        }
    }

    #[test]
    fn lyapunov_descent_into_the_well() {
        // well at 0.42-ish with skew, phase initially centered at 0:
        // Lambda(y(t), 1) must decrease and rho = -Lambda increase
        let coeffs = CoefficientSet::new(
            CoefficientModel::CompactifiedWell {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
                d_well: 0.2,
                well_center: vec![0.6],
                d_skew: 0.05,
            },
            1,
        );
        let engine = EigenEngine::new(coeffs, bounds(), 0.05);
        let k = MutationKernel::new(KernelKind::Gaussian { sigma: vec![0.5] }, 1);
        let kq = KernelQuad::build(&k, 8.0, 1e-12).unwrap();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.05, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| -0.5 * y[0] * y[0]).collect();
        let run = solver.run(u0, 0.0, 0.6, 0.05, true).unwrap();
        let integ = CanonicalIntegrator {
            engine: &engine,
            kq: &kq,
            hj: &run,
        };
        let traj = integ.run([0.0, 0.0], 0.005, 0.6).unwrap();
        assert!(traj.samples.len() > 10);
        for w in traj.samples.windows(2) {
            assert!(w[1].lambda_at <= w[0].lambda_at + 1e-8);
            assert!(w[1].rho >= w[0].rho - 1e-8);
        }
        // moved towards the fitness optimum
        let last = traj.samples.last().unwrap();
        assert!(last.y_bar[0] > 0.02, "{}", last.y_bar[0]);
    }
}
