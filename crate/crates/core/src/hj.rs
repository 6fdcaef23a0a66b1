//! The scaled nonlocal Hamilton-Jacobi equation for the phase U and its
//! limit, with runtime monitors for every a-priori estimate: the time
//! derivative bracket, the renewal-weight band, Lipschitz growth, and the
//! semi-convexity floor.
//!
//! The scaled equation advances U by -Lambda(y, eta_eps) per node (no spatial
//! stencil); the limit equation uses a monotone local Lax-Friedrichs scheme
//! for the convex Hamiltonian H(y, p) = -Lambda(y, int M e^{p.z}).

use crate::eigen::{EigenEngine, EigenError, EtaBand};
use crate::grid::{sup_and_argmax, GridMax, TraitGrid, TraitPoint};
use crate::kernel::{KernelError, KernelQuad};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HjError {
    #[error("kernel reach eps*radius = {reach} exceeds the padded box limit {limit}")]
    PaddingExceeded { reach: f64, limit: f64 },
    #[error("renewal weight became non-positive at node {node} (eta = {eta})")]
    EtaNonPositive { node: usize, eta: f64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorKind {
    DtuBracket,
    EtaBand,
    Lipschitz,
    Semiconvexity,
}

#[derive(Debug, Clone)]
pub struct MonitorEvent {
    pub kind: MonitorKind,
    pub t: f64,
    pub node: usize,
    pub value: f64,
    pub bound: f64,
}

/// Soft-monitor accumulator. Breaches are recorded and logged, never fatal;
/// only eta positivity is a hard error.
#[derive(Debug, Clone, Default)]
pub struct Monitors {
    pub dtu_min: f64,
    pub dtu_max: f64,
    pub lipschitz_max: f64,
    pub semiconvexity_min: f64,
    pub eta_tv_accum: f64,
    /// Accumulated sup_y |eta(t+dt, y) - eta(t, y)|: the pointwise rate the
    /// comparison-principle bracket needs.
    pub eta_tv_pointwise_accum: f64,
    pub eta_excursion_max: f64,
    pub dtu_violation_max: f64,
    pub clamp_events: usize,
    pub events: Vec<MonitorEvent>,
}

impl Monitors {
    fn new() -> Self {
        Monitors {
            dtu_min: f64::INFINITY,
            dtu_max: f64::NEG_INFINITY,
            lipschitz_max: 0.0,
            semiconvexity_min: f64::INFINITY,
            ..Default::default()
        }
    }

    fn push(&mut self, ev: MonitorEvent) {
        if self.events.len() < 10_000 {
            log::warn!(
                "monitor breach {:?} at t={:.6} node {}: value {:.6e} vs bound {:.6e}",
                ev.kind,
                ev.t,
                ev.node,
                ev.value,
                ev.bound
            );
            self.events.push(ev);
        }
    }
}

/// Monitor thresholds frozen at run start.
#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub k0: f64,
    pub lipschitz_growth: f64,
    pub lip_slack: f64,
    pub semiconvex_c: f64,
    pub semiconvex_growth: f64,
    pub semiconvex_slack: f64,
    pub eta_band_slack: f64,
    pub dtu_slack_per_dt: f64,
}

#[derive(Debug, Clone)]
pub struct HjState {
    pub grid: TraitGrid,
    pub u: Vec<f64>,
    pub eta_field: Vec<f64>,
    pub lambda_field: Vec<f64>,
    pub t: f64,
    pub epsilon: f64,
    pub monitors: Monitors,
    prev_sup_eta: Option<f64>,
    prev_eta_field: Option<Vec<f64>>,
}

impl HjState {
    pub fn new(grid: TraitGrid, u0: Vec<f64>, epsilon: f64) -> Self {
        let n = u0.len();
        HjState {
            grid,
            u: u0,
            eta_field: vec![f64::NAN; n],
            lambda_field: vec![f64::NAN; n],
            t: 0.0,
            epsilon,
            monitors: Monitors::new(),
            prev_sup_eta: None,
            prev_eta_field: None,
        }
    }

    pub fn sup_and_argmax(&self) -> GridMax {
        sup_and_argmax(&self.grid, &self.u)
    }
}

/// One recorded frame (full fields).
#[derive(Debug, Clone)]
pub struct HjFrame {
    pub t: f64,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Per-step scalar record.
#[derive(Debug, Clone)]
pub struct HjStepRecord {
    pub t: f64,
    pub sup_u: f64,
    pub argmax: TraitPoint,
    pub eta_at_argmax: f64,
    pub lipschitz: f64,
    pub semiconvexity_min: f64,
    pub eta_tv_accum: f64,
    pub eta_tv_pointwise_accum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjHalt {
    /// The eta clamp fired at the running argmax: the scenario left the
    /// admissible band where it matters and we stop rather than guess.
    BandEdgeAtArgmax,
}

#[derive(Debug)]
pub struct HjRun {
    pub frames: Vec<HjFrame>,
    pub steps: Vec<HjStepRecord>,
    pub state: HjState,
    pub dt_nominal: f64,
    pub halt: Option<(f64, HjHalt)>,
}

impl HjRun {
    pub fn frame_at(&self, t: f64) -> Option<&HjFrame> {
        self.frames
            .iter()
            .find(|f| (f.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

pub struct HjSolver<'a> {
    pub engine: &'a EigenEngine,
    pub kq: &'a KernelQuad,
    pub mcfg: MonitorConfig,
    bands: Vec<EtaBand>,
    grid: TraitGrid,
}

impl<'a> HjSolver<'a> {
    pub fn new(
        engine: &'a EigenEngine,
        kq: &'a KernelQuad,
        grid: TraitGrid,
        mcfg: MonitorConfig,
    ) -> Result<Self, HjError> {
        let mut bands = Vec::with_capacity(grid.len());
        for (_, y) in grid.nodes() {
            bands.push(engine.eta_band(y)?);
        }
        Ok(HjSolver {
            engine,
            kq,
            mcfg,
            bands,
            grid,
        })
    }

    pub fn grid(&self) -> &TraitGrid {
        &self.grid
    }

    pub fn band(&self, node: usize) -> EtaBand {
        self.bands[node]
    }

    /// Renewal weight at one node of the scaled equation:
    /// int M(z) exp((U(y + eps z) - U(y)) / eps) dz with linear interpolation
    /// and constant-gradient continuation outside the box.
    pub fn eta_eps(&self, state: &HjState, node: usize) -> f64 {
        let y = state.grid.node(node);
        let u_y = state.u[node];
        let eps = state.epsilon;
        let grid = &state.grid;
        let u = &state.u;
        self.kq.eval_pairwise(|z| {
            let p = [y[0] + eps * z[0], y[1] + eps * z[1]];
            let du = (grid.interp(u, p) - u_y) / eps;
            du.min(705.0).exp()
        })
    }

    /// Clamp eta into the node band, recording excursions and clamp events.
    fn clamp_eta(
        &self,
        mons: &mut Monitors,
        t: f64,
        node: usize,
        eta: f64,
    ) -> Result<f64, HjError> {
        if !(eta > 0.0) {
            return Err(HjError::EtaNonPositive { node, eta });
        }
        let band = self.bands[node];
        let excursion = (band.lo - eta).max(eta - band.hi).max(0.0);
        if excursion > 0.0 {
            mons.clamp_events += 1;
            if excursion > mons.eta_excursion_max {
                mons.eta_excursion_max = excursion;
            }
            if excursion > self.mcfg.eta_band_slack {
                mons.push(MonitorEvent {
                    kind: MonitorKind::EtaBand,
                    t,
                    node,
                    value: eta,
                    bound: if eta > band.hi { band.hi } else { band.lo },
                });
            }
        }
        Ok(eta.clamp(band.lo, band.hi))
    }

    /// Shared post-update monitor scan; advances state.t.
    fn scan_monitors(&self, state: &mut HjState, dt: f64, dtu: &[f64]) {
        let t_new = state.t + dt;
        let mcfg = &self.mcfg;
        let (lo, hi) = (-mcfg.lambda_upper, -mcfg.lambda_lower);
        let slack = mcfg.dtu_slack_per_dt * dt;
        for (i, &v) in dtu.iter().enumerate() {
            if v < state.monitors.dtu_min {
                state.monitors.dtu_min = v;
            }
            if v > state.monitors.dtu_max {
                state.monitors.dtu_max = v;
            }
            let viol = (lo - v).max(v - hi).max(0.0);
            if viol > state.monitors.dtu_violation_max {
                state.monitors.dtu_violation_max = viol;
            }
            if viol > slack {
                let bound = if v < lo { lo } else { hi };
                let ev = MonitorEvent {
                    kind: MonitorKind::DtuBracket,
                    t: t_new,
                    node: i,
                    value: v,
                    bound,
                };
                state.monitors.push(ev);
            }
        }
        // Lipschitz and semiconvexity scans on the updated field
        let mut lip: f64 = 0.0;
        let mut sc_min = f64::INFINITY;
        for i in 0..state.u.len() {
            for axis in 0..state.grid.dim {
                let (pm, pp) = state.grid.one_sided(&state.u, i, axis);
                lip = lip.max(pm.abs()).max(pp.abs());
                if let Some(s) = state.grid.second_difference(&state.u, i, axis) {
                    sc_min = sc_min.min(s);
                }
            }
        }
        let lip_bound = mcfg.k0 + mcfg.lipschitz_growth * t_new + mcfg.lip_slack;
        if lip > lip_bound {
            state.monitors.push(MonitorEvent {
                kind: MonitorKind::Lipschitz,
                t: t_new,
                node: 0,
                value: lip,
                bound: lip_bound,
            });
        }
        let sc_floor =
            -(mcfg.semiconvex_c + mcfg.semiconvex_growth * t_new) - mcfg.semiconvex_slack;
        if sc_min < sc_floor {
            state.monitors.push(MonitorEvent {
                kind: MonitorKind::Semiconvexity,
                t: t_new,
                node: 0,
                value: sc_min,
                bound: sc_floor,
            });
        }
        state.monitors.lipschitz_max = state.monitors.lipschitz_max.max(lip);
        state.monitors.semiconvexity_min = state.monitors.semiconvexity_min.min(sc_min);
        // accumulated total variation of sup_y eta
        let sup_eta = state
            .eta_field
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(prev) = state.prev_sup_eta {
            state.monitors.eta_tv_accum += (sup_eta - prev).abs();
        }
        state.prev_sup_eta = Some(sup_eta);
        if let Some(prev) = &state.prev_eta_field {
            let mut worst = 0.0f64;
            for (a, b) in state.eta_field.iter().zip(prev) {
                worst = worst.max((a - b).abs());
            }
            state.monitors.eta_tv_pointwise_accum += worst;
        }
        state.prev_eta_field = Some(state.eta_field.clone());
        state.t = t_new;
    }

    /// Explicit Euler step of the scaled equation: U <- U - dt Lambda(y, eta_eps).
    pub fn step_eps(&self, state: &mut HjState, dt: f64) -> Result<Option<HjHalt>, HjError> {
        debug_assert!(state.epsilon > 0.0);
        let n = state.u.len();
        let mut etas = vec![0.0; n];
        for (i, slot) in etas.iter_mut().enumerate() {
            *slot = self.eta_eps(state, i);
        }
        let argmax_node = state.sup_and_argmax().node_index;
        let mut halt = None;
        let t = state.t;
        let mut dtu = vec![0.0; n];
        for i in 0..n {
            let clamped = self.clamp_eta(&mut state.monitors, t, i, etas[i])?;
            if clamped != etas[i] && i == argmax_node {
                halt = Some(HjHalt::BandEdgeAtArgmax);
            }
            let bundle = self.engine.bundle(state.grid.node(i), clamped)?;
            state.eta_field[i] = clamped;
            state.lambda_field[i] = bundle.lambda;
            dtu[i] = -bundle.lambda;
        }
        for i in 0..n {
            state.u[i] += dt * dtu[i];
        }
        self.scan_monitors(state, dt, &dtu);
        Ok(halt)
    }

    /// Monotone local Lax-Friedrichs step of the limit equation:
    /// U <- U + dt (H(y, pbar) + sum_k alpha_k/2 (p+_k - p-_k)).
    pub fn step_limit(&self, state: &mut HjState, dt: f64) -> Result<Option<HjHalt>, HjError> {
        debug_assert!(state.epsilon == 0.0);
        let n = state.u.len();
        let argmax_node = state.sup_and_argmax().node_index;
        let mut halt = None;
        let t = state.t;
        let mut dtu = vec![0.0; n];
        let mut etas = vec![0.0; n];
        let mut lams = vec![0.0; n];
        for i in 0..n {
            let y = state.grid.node(i);
            let mut pbar = [0.0, 0.0];
            let mut pminus = [0.0, 0.0];
            let mut pplus = [0.0, 0.0];
            for axis in 0..state.grid.dim {
                let (pm, pp) = state.grid.one_sided(&state.u, i, axis);
                pminus[axis] = pm;
                pplus[axis] = pp;
                pbar[axis] = 0.5 * (pm + pp);
            }
            let eta_raw = self.kq.exp_moment(pbar)?;
            let eta = self.clamp_eta(&mut state.monitors, t, i, eta_raw)?;
            if eta != eta_raw && i == argmax_node {
                halt = Some(HjHalt::BandEdgeAtArgmax);
            }
            let bundle = self.engine.bundle(y, eta)?;
            let mut update = -bundle.lambda;
            for axis in 0..state.grid.dim {
                let alpha = 1.05 * self.hp_bound(y, pbar, pminus[axis], pplus[axis], axis)?;
                update += 0.5 * alpha * (pplus[axis] - pminus[axis]);
            }
            etas[i] = eta;
            lams[i] = bundle.lambda;
            dtu[i] = update;
        }
        for i in 0..n {
            state.u[i] += dt * dtu[i];
            state.eta_field[i] = etas[i];
            state.lambda_field[i] = lams[i];
        }
        self.scan_monitors(state, dt, &dtu);
        Ok(halt)
    }

    /// Fill eta and lambda fields for the current phase without stepping
    /// (used for the initial frame and for initial data of the direct run).
    pub fn evaluate_fields(&self, state: &mut HjState) -> Result<(), HjError> {
        let n = state.u.len();
        let t = state.t;
        for i in 0..n {
            let eta_raw = if state.epsilon > 0.0 {
                self.eta_eps(state, i)
            } else {
                let mut pbar = [0.0, 0.0];
                for axis in 0..state.grid.dim {
                    let (pm, pp) = state.grid.one_sided(&state.u, i, axis);
                    pbar[axis] = 0.5 * (pm + pp);
                }
                self.kq.exp_moment(pbar)?
            };
            let eta = self.clamp_eta(&mut state.monitors, t, i, eta_raw)?;
            let bundle = self.engine.bundle(state.grid.node(i), eta)?;
            state.eta_field[i] = eta;
            state.lambda_field[i] = bundle.lambda;
        }
        Ok(())
    }

    /// Bound on |dH/dp_axis| over the local p-interval. H is convex in p, so
    /// the endpoint values are exact.
    fn hp_bound(
        &self,
        y: TraitPoint,
        pbar: TraitPoint,
        pm: f64,
        pp: f64,
        axis: usize,
    ) -> Result<f64, HjError> {
        let band = self.engine.eta_band(y)?;
        let mut best: f64 = 0.0;
        for &pa in &[pm, pp] {
            let mut p = pbar;
            p[axis] = pa;
            let eta = self.kq.exp_moment(p)?.clamp(band.lo, band.hi);
            let bundle = self.engine.bundle(y, eta)?;
            let mz = self.kq.exp_moment_z(p);
            best = best.max((bundle.dlambda_deta * mz[axis]).abs());
        }
        Ok(best)
    }

    /// Largest |dH/dp| and |dLambda/deta| * eta over the admissible band,
    /// sampled on the grid; drives the time-step policy.
    pub fn wave_speed_bounds(&self) -> Result<(f64, f64), HjError> {
        // p range that keeps eta inside the global band
        let eta_hi = self
            .bands
            .iter()
            .map(|b| b.hi)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p_hat: f64 = 0.0;
        if !self.kq.pair_nodes().1.is_empty() {
            let mut lo = 0.0f64;
            let mut hi = self.kq.p_max.min(1e6);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let m = self.kq.exp_moment([mid, 0.0])?;
                if m > eta_hi {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            p_hat = lo;
        }
        let mut c_wave: f64 = 1e-12;
        let mut c_eta: f64 = 1e-12;
        let stride = (self.grid.len() / 16).max(1);
        for i in (0..self.grid.len()).step_by(stride) {
            let y = self.grid.node(i);
            let band = self.bands[i];
            for k in 0..=8 {
                let p0 = -p_hat + 2.0 * p_hat * k as f64 / 8.0;
                let p = if self.grid.dim == 2 {
                    [p0, 0.5 * p0]
                } else {
                    [p0, 0.0]
                };
                let eta = self.kq.exp_moment(p)?.clamp(band.lo, band.hi);
                let bundle = self.engine.bundle(y, eta)?;
                let mz = self.kq.exp_moment_z(p);
                c_wave = c_wave
                    .max((bundle.dlambda_deta * mz[0]).abs())
                    .max((bundle.dlambda_deta * mz[1]).abs());
                c_eta = c_eta.max(bundle.dlambda_deta.abs() * eta);
            }
        }
        Ok((c_wave, c_eta))
    }

    /// Nominal step from the stability policy (factor 0.25). For the scaled
    /// equation the nonlocal term also caps dt at 0.25 eps / (|dLambda| eta).
    pub fn dt_max(&self, epsilon: f64) -> Result<f64, HjError> {
        let (c_wave, c_eta) = self.wave_speed_bounds()?;
        let mut inv = 0.0;
        for axis in 0..self.grid.dim {
            inv += c_wave / self.grid.spacing[axis];
        }
        let dt_lf = 0.25 / inv;
        if epsilon > 0.0 {
            Ok(dt_lf.min(0.25 * epsilon / c_eta))
        } else {
            Ok(dt_lf)
        }
    }

    /// March to `t_final`, landing exactly on every multiple of
    /// `record_stride` (frames recorded there, or at every step when
    /// `record_all_frames` is set).
    pub fn run(
        &self,
        u0: Vec<f64>,
        epsilon: f64,
        t_final: f64,
        record_stride: f64,
        record_all_frames: bool,
    ) -> Result<HjRun, HjError> {
        if epsilon > 0.0 {
            let reach = epsilon * self.kq.max_radius();
            let limit = 2.0 * self.grid.extent(0).max(if self.grid.dim == 2 {
                self.grid.extent(1)
            } else {
                0.0
            });
            if reach > limit {
                return Err(HjError::PaddingExceeded { reach, limit });
            }
        }
        let mut state = HjState::new(self.grid.clone(), u0, epsilon);
        self.evaluate_fields(&mut state)?;
        let dt_nominal = self.dt_max(epsilon)?;
        let mut frames = Vec::new();
        let mut steps = Vec::new();
        let mut halt: Option<(f64, HjHalt)> = None;

        frames.push(HjFrame {
            t: 0.0,
            u: state.u.clone(),
            eta: state.eta_field.clone(),
        });
        let n_legs = (t_final / record_stride).round().max(1.0) as usize;
        'legs: for leg in 0..n_legs {
            let t_to = record_stride * (leg + 1) as f64;
            let span = t_to - state.t;
            let n = (span / dt_nominal).ceil().max(1.0) as usize;
            let dt = span / n as f64;
            for s in 0..n {
                let h = if epsilon > 0.0 {
                    self.step_eps(&mut state, dt)?
                } else {
                    self.step_limit(&mut state, dt)?
                };
                let gm = state.sup_and_argmax();
                steps.push(HjStepRecord {
                    t: state.t,
                    sup_u: gm.value,
                    argmax: gm.point,
                    eta_at_argmax: state.eta_field[gm.node_index],
                    lipschitz: state.monitors.lipschitz_max,
                    semiconvexity_min: state.monitors.semiconvexity_min,
                    eta_tv_accum: state.monitors.eta_tv_accum,
                    eta_tv_pointwise_accum: state.monitors.eta_tv_pointwise_accum,
                });
                if record_all_frames || s + 1 == n {
                    frames.push(HjFrame {
                        t: state.t,
                        u: state.u.clone(),
                        eta: state.eta_field.clone(),
                    });
                }
                if let Some(hh) = h {
                    halt = Some((state.t, hh));
                    log::warn!("halting at t={:.4}: {:?}", state.t, hh);
                    break 'legs;
                }
            }
        }
        Ok(HjRun {
            frames,
            steps,
            state,
            dt_nominal,
            halt,
        })
    }
}

/// Bracketing frames and the time weight for linear interpolation.
pub fn interp_frames<'f>(frames: &'f [HjFrame], t: f64) -> (f64, &'f HjFrame, &'f HjFrame) {
    if frames.len() == 1 || t <= frames[0].t {
        return (0.0, &frames[0], &frames[0]);
    }
    let last = frames.len() - 1;
    if t >= frames[last].t {
        return (0.0, &frames[last], &frames[last]);
    }
    let mut lo = 0;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if frames[mid].t <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = (t - frames[lo].t) / (frames[hi].t - frames[lo].t);
    (w, &frames[lo], &frames[hi])
}

/// U at (t, y) from frames, linear in t and in y.
pub fn frame_value(grid: &TraitGrid, frames: &[HjFrame], t: f64, y: TraitPoint) -> f64 {
    let (w, a, b) = interp_frames(frames, t);
    let va = grid.interp(&a.u, y);
    let vb = grid.interp(&b.u, y);
    va + (vb - va) * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AssumptionBounds, CoefficientModel, CoefficientSet};
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

    fn uniform_engine() -> EigenEngine {
        EigenEngine::new(
            CoefficientSet::new(
                CoefficientModel::Uniform {
                    a: 1.0,
                    b_amp: 2.0,
                    x_bar: 1.0,
                    d0: 1.0,
                },
                1,
            ),
            bounds(),
            0.05,
        )
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

    fn quad_kernel() -> KernelQuad {
        let k = MutationKernel::new(KernelKind::Gaussian { sigma: vec![0.5] }, 1);
        KernelQuad::build(&k, 8.0, 1e-12).unwrap()
    }

    #[test]
    fn eta_eps_constant_field_is_one() {
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let state = HjState::new(grid.clone(), vec![-0.3; grid.len()], 0.1);
        for &i in &[0, grid.len() / 2, grid.len() - 1] {
            assert_eq!(solver.eta_eps(&state, i), 1.0);
        }
    }

    #[test]
    fn eta_eps_linear_field_matches_moment() {
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.05, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let p = 0.7;
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| p * y[0]).collect();
        let state = HjState::new(grid.clone(), u0, 0.1);
        let expected = kq.exp_moment([p, 0.0]).unwrap();
        // interior node: linear interpolation is exact on a linear field
        let eta = solver.eta_eps(&state, grid.len() / 2);
        assert!((eta - expected).abs() < 1e-12, "{eta} vs {expected}");
        // boundary node: constant-gradient continuation keeps it exact
        let eta0 = solver.eta_eps(&state, 0);
        assert!((eta0 - expected).abs() < 1e-12);
    }

    #[test]
    fn eps_operator_consistent_with_hamiltonian_rate() {
        // for smooth quadratic U, -Lambda(y, eta_eps) -> H(y, dU) at O(eps)
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.05, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| -0.5 * y[0] * y[0]).collect();
        let node = grid.len() / 2; // y = 0, dU = 0
        let h_exact = -engine.compute_lambda([0.0, 0.0], 1.0).unwrap();
        let mut prev_err = f64::INFINITY;
        for &eps in &[0.2, 0.1, 0.05] {
            let state = HjState::new(grid.clone(), u0.clone(), eps);
            let eta = solver.eta_eps(&state, node);
            let lam = engine.compute_lambda([0.0, 0.0], eta).unwrap();
            let err = (-lam - h_exact).abs();
            assert!(err < prev_err, "eps {eps}: err {err} vs prev {prev_err}");
            assert!(err < 1.0 * eps, "eps {eps}: err {err}");
            prev_err = err;
        }
    }

    #[test]
    fn uniform_phase_evolves_exactly_linearly() {
        // y-independent coefficients, U0 = 0: U(t, y) = -Lambda(1) t exactly
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let run = solver
            .run(vec![0.0; grid.len()], 0.1, 0.2, 0.1, false)
            .unwrap();
        let lam1 = engine.compute_lambda([0.0, 0.0], 1.0).unwrap();
        for v in &run.state.u {
            assert!((v - (-lam1) * 0.2).abs() < 1e-9, "{v}");
        }
        assert!(run.state.monitors.events.is_empty());
        assert_eq!(run.state.monitors.clamp_events, 0);
        // limit equation gives the same line
        let run0 = solver
            .run(vec![0.0; grid.len()], 0.0, 0.2, 0.1, false)
            .unwrap();
        for v in &run0.state.u {
            assert!((v - (-lam1) * 0.2).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn self_convergence_in_dt_is_first_order() {
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| -0.4 * y[0] * y[0]).collect();
        let mut s1 = HjState::new(grid.clone(), u0.clone(), 0.1);
        let mut s2 = HjState::new(grid.clone(), u0.clone(), 0.1);
        let dt = 2e-3;
        for _ in 0..50 {
            solver.step_eps(&mut s1, dt).unwrap();
        }
        for _ in 0..100 {
            solver.step_eps(&mut s2, dt / 2.0).unwrap();
        }
        let gap = s1
            .u
            .iter()
            .zip(&s2.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(gap < 2.0 * dt, "gap {gap}");
        assert!(gap > 0.0);
    }

    #[test]
    fn even_symmetry_is_preserved() {
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let u0: Vec<f64> = grid.nodes().map(|(_, y)| -0.5 * y[0] * y[0]).collect();
        for &eps in &[0.1, 0.0] {
            let run = solver.run(u0.clone(), eps, 0.3, 0.1, false).unwrap();
            let u = &run.state.u;
            let n = u.len();
            let worst = (0..n)
                .map(|i| (u[i] - u[n - 1 - i]).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "eps {eps}: asymmetry {worst}");
        }
    }

    #[test]
    fn padding_guard_fires_for_tiny_box() {
        let engine = uniform_engine();
        let kq = quad_kernel();
        let grid = TraitGrid::new_1d(-0.2, 0.2, 0.1, false);
        let solver = HjSolver::new(&engine, &kq, grid.clone(), mcfg()).unwrap();
        let r = solver.run(vec![0.0; grid.len()], 1.0, 0.1, 0.1, false);
        assert!(matches!(r, Err(HjError::PaddingExceeded { .. })));
    }

    #[test]
    fn frame_interpolation_is_linear_in_time() {
        let grid = TraitGrid::new_1d(0.0, 1.0, 0.5, false);
        let frames = vec![
            HjFrame {
                t: 0.0,
                u: vec![0.0, 0.0, 0.0],
                eta: vec![1.0; 3],
            },
            HjFrame {
                t: 1.0,
                u: vec![2.0, 2.0, 2.0],
                eta: vec![1.0; 3],
            },
        ];
        let v = frame_value(&grid, &frames, 0.25, [0.3, 0.0]);
        assert!((v - 0.5).abs() < 1e-14);
    }
}
