//! Model ingredients: aging speed A, birth rate b, death rate d, the largest
//! birth support x_bar, the assumption constants, and the initial data.
//!
//! Registry entries carry closed forms for the cumulative integrals
//! `curly_a(x,y) = int_0^x 1/A` and `death_integral(x,y) = int_0^x d/A`, which
//! keeps the eigenelement quadratures exact up to the outer Simpson rule.
//! Tabulated coefficients fall back to fine cumulative tables.

use crate::grid::TraitPoint;
use crate::quad::cumulative_uniform;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("field {field} returned a non-finite value at (x={x}, y=({y0}, {y1}))")]
    NonEvaluableField {
        field: &'static str,
        x: f64,
        y0: f64,
        y1: f64,
    },
    #[error("assumption violated: {name} (measured {measured:e} at {at})")]
    AssumptionViolated {
        name: String,
        measured: f64,
        at: String,
    },
}

/// Componentwise compactifying map R -> (-1, 1).
#[inline]
pub fn squash(y: f64) -> f64 {
    y / (1.0 + y * y).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CoefficientModel {
    /// y-independent slice of the compactified family:
    /// A = a, b = b_amp on [0, x_bar], d = d0.
    Uniform {
        a: f64,
        b_amp: f64,
        x_bar: f64,
        d0: f64,
    },
    /// The compactified single-well family: constant speed and birth,
    /// d(y) = d0 + d_well * |s(y) - s(c)|^2 + d_skew * s(y_0) with
    /// s the componentwise squash map.
    CompactifiedWell {
        a: f64,
        b_amp: f64,
        x_bar: f64,
        d0: f64,
        d_well: f64,
        well_center: Vec<f64>,
        #[serde(default)]
        d_skew: f64,
    },
    /// Separable speed A(x, y) = a0 (1 + a_slope * min(x, x_bar)) (1 + a_amp s(y0)^2),
    /// with uniform birth/death.
    SeparableSpeed {
        a0: f64,
        a_slope: f64,
        a_amp: f64,
        b_amp: f64,
        x_bar: f64,
        d0: f64,
    },
    /// Unbounded birth support: b = b0 e^{-kappa x}, x_bar = +inf.
    ExponentialBirth {
        a: f64,
        b0: f64,
        kappa: f64,
        d0: f64,
    },
    /// Tabulated on (x, y) knots with bilinear interpolation (trait dim 1).
    Tabulated {
        x_knots: Vec<f64>,
        y_knots: Vec<f64>,
        a_values: Vec<f64>,
        b_values: Vec<f64>,
        d_values: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub model: CoefficientModel,
    pub dim: usize,
    /// Cumulative tables per y for the tabulated model, built lazily.
    tab_resolution: usize,
}

impl CoefficientSet {
    pub fn new(model: CoefficientModel, dim: usize) -> Self {
        CoefficientSet {
            model,
            dim,
            tab_resolution: 32,
        }
    }

    pub fn speed(&self, x: f64, y: TraitPoint) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { a, .. } => *a,
            CoefficientModel::CompactifiedWell { a, .. } => *a,
            CoefficientModel::SeparableSpeed {
                a0,
                a_slope,
                a_amp,
                x_bar,
                ..
            } => {
                let s = squash(y[0]);
                a0 * (1.0 + a_slope * x.min(2.0 * x_bar)) * (1.0 + a_amp * s * s)
            }
            CoefficientModel::ExponentialBirth { a, .. } => *a,
            CoefficientModel::Tabulated { .. } => self.tab_eval(TabField::A, x, y[0]),
        }
    }

    pub fn birth(&self, x: f64, y: TraitPoint) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { b_amp, x_bar, .. }
            | CoefficientModel::CompactifiedWell { b_amp, x_bar, .. }
            | CoefficientModel::SeparableSpeed { b_amp, x_bar, .. } => {
                if x <= *x_bar {
                    *b_amp
                } else {
                    0.0
                }
            }
            CoefficientModel::ExponentialBirth { b0, kappa, .. } => b0 * (-kappa * x).exp(),
            CoefficientModel::Tabulated { .. } => self.tab_eval(TabField::B, x, y[0]),
        }
    }

    pub fn death(&self, _x: f64, y: TraitPoint) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { d0, .. } => *d0,
            CoefficientModel::CompactifiedWell {
                d0,
                d_well,
                well_center,
                d_skew,
                ..
            } => {
                let mut quad = 0.0;
                for axis in 0..self.dim {
                    let c = well_center.get(axis).copied().unwrap_or(0.0);
                    let dssquash = squash(y[axis]) - squash(c);
                    quad += dssquash * dssquash;
                }
                d0 + d_well * quad + d_skew * squash(y[0])
            }
            CoefficientModel::SeparableSpeed { d0, .. } => *d0,
            CoefficientModel::ExponentialBirth { d0, .. } => *d0,
            CoefficientModel::Tabulated { .. } => self.tab_eval(TabField::D, _x, y[0]),
        }
    }

    /// Largest birth support over all traits; may be infinite.
    pub fn x_bar(&self) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { x_bar, .. }
            | CoefficientModel::CompactifiedWell { x_bar, .. }
            | CoefficientModel::SeparableSpeed { x_bar, .. } => *x_bar,
            CoefficientModel::ExponentialBirth { .. } => f64::INFINITY,
            CoefficientModel::Tabulated {
                x_knots, b_values, ..
            } => {
                let ny = self.tab_ny();
                let mut xb = 0.0;
                for (i, &x) in x_knots.iter().enumerate() {
                    for j in 0..ny {
                        if b_values[i * ny + j] > 0.0 {
                            xb = x;
                        }
                    }
                }
                xb
            }
        }
    }

    /// x-locations where the coefficients kink or jump.
    pub fn x_breakpoints(&self) -> Vec<f64> {
        match &self.model {
            CoefficientModel::Uniform { x_bar, .. }
            | CoefficientModel::CompactifiedWell { x_bar, .. } => vec![*x_bar],
            CoefficientModel::SeparableSpeed { x_bar, .. } => vec![*x_bar, 2.0 * x_bar],
            CoefficientModel::ExponentialBirth { .. } => vec![],
            CoefficientModel::Tabulated { x_knots, .. } => x_knots.clone(),
        }
    }

    /// `int_0^x 1/A(x', y) dx'` (closed form where available).
    pub fn curly_a(&self, x: f64, y: TraitPoint) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { a, .. }
            | CoefficientModel::CompactifiedWell { a, .. }
            | CoefficientModel::ExponentialBirth { a, .. } => x / a,
            CoefficientModel::SeparableSpeed {
                a0,
                a_slope,
                a_amp,
                x_bar,
                ..
            } => {
                let s = squash(y[0]);
                let cy = a0 * (1.0 + a_amp * s * s);
                let xk = 2.0 * x_bar;
                if *a_slope == 0.0 {
                    return x / cy;
                }
                if x <= xk {
                    (1.0 + a_slope * x).ln() / (a_slope * cy)
                } else {
                    (1.0 + a_slope * xk).ln() / (a_slope * cy)
                        + (x - xk) / (cy * (1.0 + a_slope * xk))
                }
            }
            CoefficientModel::Tabulated { .. } => self.tab_cumulative(CumField::InvA, x, y[0]),
        }
    }

    /// `int_0^x d(x', y)/A(x', y) dx'` (closed form where available).
    pub fn death_integral(&self, x: f64, y: TraitPoint) -> f64 {
        match &self.model {
            CoefficientModel::Uniform { .. }
            | CoefficientModel::CompactifiedWell { .. }
            | CoefficientModel::ExponentialBirth { .. }
            | CoefficientModel::SeparableSpeed { .. } => {
                // d is x-independent for these models
                self.death(0.0, y) * self.curly_a(x, y)
            }
            CoefficientModel::Tabulated { .. } => self.tab_cumulative(CumField::DOverA, x, y[0]),
        }
    }

    fn tab_ny(&self) -> usize {
        match &self.model {
            CoefficientModel::Tabulated { y_knots, .. } => y_knots.len(),
            _ => 0,
        }
    }

    fn tab_eval(&self, field: TabField, x: f64, y: f64) -> f64 {
        let CoefficientModel::Tabulated {
            x_knots,
            y_knots,
            a_values,
            b_values,
            d_values,
        } = &self.model
        else {
            unreachable!()
        };
        let vals = match field {
            TabField::A => a_values,
            TabField::B => b_values,
            TabField::D => d_values,
        };
        let ny = y_knots.len();
        let (i, tx) = locate_knot(x_knots, x);
        let (j, ty) = locate_knot(y_knots, y);
        let v00 = vals[i * ny + j];
        let v10 = vals[(i + 1).min(x_knots.len() - 1) * ny + j];
        let v01 = vals[i * ny + (j + 1).min(ny - 1)];
        let v11 = vals[(i + 1).min(x_knots.len() - 1) * ny + (j + 1).min(ny - 1)];
        let a = v00 + (v10 - v00) * tx;
        let b = v01 + (v11 - v01) * tx;
        a + (b - a) * ty
    }

    fn tab_cumulative(&self, field: CumField, x: f64, y: f64) -> f64 {
        let CoefficientModel::Tabulated { x_knots, .. } = &self.model else {
            unreachable!()
        };
        // fine uniform subgrid over [0, last knot], linear beyond
        let x_hi = *x_knots.last().unwrap();
        let n = x_knots.len() * self.tab_resolution;
        let h = x_hi / n as f64;
        let integrand = |xq: f64| -> f64 {
            let a = self.tab_eval(TabField::A, xq, y);
            match field {
                CumField::InvA => 1.0 / a,
                CumField::DOverA => self.tab_eval(TabField::D, xq, y) / a,
            }
        };
        let vals: Vec<f64> = (0..=n).map(|i| integrand(i as f64 * h)).collect();
        let cum = cumulative_uniform(&vals, h);
        if x >= x_hi {
            return cum[n] + integrand(x_hi) * (x - x_hi);
        }
        let q = x / h;
        let i = (q.floor() as usize).min(n - 1);
        cum[i] + (cum[i + 1] - cum[i]) * (q - i as f64)
    }
}

#[derive(Clone, Copy)]
enum TabField {
    A,
    B,
    D,
}

#[derive(Clone, Copy)]
enum CumField {
    InvA,
    DOverA,
}

fn locate_knot(knots: &[f64], x: f64) -> (usize, f64) {
    let n = knots.len();
    if n == 1 || x <= knots[0] {
        return (0, 0.0);
    }
    if x >= knots[n - 1] {
        return (n - 2, 1.0);
    }
    let mut i = 0;
    while i + 2 < n && knots[i + 1] <= x {
        i += 1;
    }
    ((i).min(n - 2), (x - knots[i]) / (knots[i + 1] - knots[i]))
}

/// The assumption constants of the model: fitness band, renewal-weight band,
/// initial Lipschitz constant, derivative bounds on F, and the concavity
/// margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionBounds {
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub eta_lower: f64,
    pub eta_upper: f64,
    pub k0: f64,
    pub l_f: f64,
    pub big_l_f: f64,
    pub delta: f64,
}

impl AssumptionBounds {
    /// Worst-case Lipschitz growth rate of U: L / (l eta_lower^2).
    pub fn lipschitz_growth(&self) -> f64 {
        self.big_l_f / (self.l_f * self.eta_lower * self.eta_lower)
    }

    /// Exponential growth bound for the kernel truncation at horizon `t_final`.
    pub fn kernel_growth(&self, t_final: f64) -> f64 {
        self.k0 + self.lipschitz_growth() * t_final
    }
}

/// Initial phase U0 (sup = 0 by construction) and corrector profile p0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub u0: InitialPhase,
    #[serde(default)]
    pub p0: InitialCorrector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialPhase {
    /// U0(y) = -sum_i curvature_i/2 (y_i - center_i)^2.
    QuadraticWell { center: Vec<f64>, curvature: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum InitialCorrector {
    /// p0 = Q(x, y, eta0_eps(y)): gamma0 = 1 exactly.
    #[default]
    EigenProfile,
    /// p0 = gamma0(y) Q with gamma0(y) = 1 + amp (s(y0) - s(center)).
    ScaledEigen { amp: f64, center: f64 },
}

impl InitialCondition {
    pub fn u0(&self, y: TraitPoint, dim: usize) -> f64 {
        match &self.u0 {
            InitialPhase::QuadraticWell { center, curvature } => {
                let mut v = 0.0;
                for axis in 0..dim {
                    let c = center.get(axis).copied().unwrap_or(0.0);
                    let k = curvature.get(axis).copied().unwrap_or(1.0);
                    v -= 0.5 * k * (y[axis] - c) * (y[axis] - c);
                }
                v
            }
        }
    }

    pub fn grad_u0(&self, y: TraitPoint, dim: usize) -> TraitPoint {
        match &self.u0 {
            InitialPhase::QuadraticWell { center, curvature } => {
                let mut g = [0.0, 0.0];
                for axis in 0..dim {
                    let c = center.get(axis).copied().unwrap_or(0.0);
                    let k = curvature.get(axis).copied().unwrap_or(1.0);
                    g[axis] = -k * (y[axis] - c);
                }
                g
            }
        }
    }

    /// Initial corrector weight gamma0(y) relative to the eigenprofile.
    pub fn gamma0(&self, y: TraitPoint) -> f64 {
        match &self.p0 {
            InitialCorrector::EigenProfile => 1.0,
            InitialCorrector::ScaledEigen { amp, center } => {
                1.0 + amp * (squash(y[0]) - squash(*center))
            }
        }
    }

    /// Bracket of gamma0 over all traits.
    pub fn gamma0_bracket(&self) -> (f64, f64) {
        match &self.p0 {
            InitialCorrector::EigenProfile => (1.0, 1.0),
            InitialCorrector::ScaledEigen { amp, center } => {
                let lo = 1.0 - amp.abs() * (1.0 + squash(*center).abs());
                let hi = 1.0 + amp.abs() * (1.0 + squash(*center).abs());
                (lo, hi)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> CoefficientSet {
        CoefficientSet::new(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            1,
        )
    }

    #[test]
    fn uniform_model_fields() {
        let c = base();
        assert_eq!(c.speed(0.3, [0.0, 0.0]), 1.0);
        assert_eq!(c.birth(0.5, [0.2, 0.0]), 2.0);
        assert_eq!(c.birth(1.5, [0.2, 0.0]), 0.0);
        assert_eq!(c.death(0.1, [0.0, 0.0]), 1.0);
        assert_eq!(c.x_bar(), 1.0);
        assert!((c.curly_a(2.0, [0.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!((c.death_integral(2.0, [0.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn well_model_death_minimum_at_center() {
        let c = CoefficientSet::new(
            CoefficientModel::CompactifiedWell {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
                d_well: 0.3,
                well_center: vec![0.3],
                d_skew: 0.0,
            },
            1,
        );
        let d_center = c.death(0.0, [0.3, 0.0]);
        assert!((d_center - 1.0).abs() < 1e-15);
        assert!(c.death(0.0, [1.0, 0.0]) > d_center);
        assert!(c.death(0.0, [-1.0, 0.0]) > d_center);
    }

    #[test]
    fn separable_speed_cumulative_matches_quadrature() {
        let c = CoefficientSet::new(
            CoefficientModel::SeparableSpeed {
                a0: 1.0,
                a_slope: 0.5,
                a_amp: 0.2,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            1,
        );
        let y = [0.7, 0.0];
        for &x in &[0.5, 1.0, 1.7, 2.0, 3.5] {
            let mut bps = vec![0.0];
            if x > 2.0 {
                bps.push(2.0);
            }
            bps.push(x);
            let q = crate::quad::simpson_piecewise(&|t: f64| 1.0 / c.speed(t, y), &bps, 1e-13)
                .unwrap();
            assert!(
                (c.curly_a(x, y) - q).abs() < 1e-11,
                "x={x}: {} vs {}",
                c.curly_a(x, y),
                q
            );
        }
    }

    #[test]
    fn tabulated_reproduces_uniform() {
        let c = CoefficientSet::new(
            CoefficientModel::Tabulated {
                x_knots: vec![0.0, 1.0, 2.0],
                y_knots: vec![-1.0, 1.0],
                a_values: vec![1.0; 6],
                b_values: vec![2.0, 2.0, 2.0, 2.0, 0.0, 0.0],
                d_values: vec![1.0; 6],
            },
            1,
        );
        assert_eq!(c.speed(0.5, [0.0, 0.0]), 1.0);
        assert_eq!(c.x_bar(), 1.0);
        assert!((c.curly_a(1.5, [0.3, 0.0]) - 1.5).abs() < 1e-9);
        assert!((c.death_integral(2.0, [0.3, 0.0]) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn initial_condition_sup_zero_and_gamma_bracket() {
        let init = InitialCondition {
            u0: InitialPhase::QuadraticWell {
                center: vec![0.3],
                curvature: vec![1.0],
            },
            p0: InitialCorrector::ScaledEigen {
                amp: 0.2,
                center: 0.0,
            },
        };
        assert_eq!(init.u0([0.3, 0.0], 1), 0.0);
        assert!(init.u0([1.0, 0.0], 1) < 0.0);
        let (lo, hi) = init.gamma0_bracket();
        assert!(lo < 1.0 && hi > 1.0);
        let g = init.gamma0([0.5, 0.0]);
        assert!(g > lo && g < hi);
    }
}
