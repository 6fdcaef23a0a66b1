//! Assumption validator: every model ingredient is sampled on the scenario
//! grids and checked against the configured constants. Constants the source
//! material never quantifies (the transport constant K, the initial
//! integrability brackets) are measured and reported rather than enforced.

use crate::coefficients::{CoefficientError, InitialCondition};
use crate::eigen::EigenEngine;
use crate::grid::{AgeGrid, TraitGrid};
use crate::kernel::{KernelQuad, MutationKernel};
use crate::quad::simpson_adaptive;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// The measured constant (meaning depends on the check).
    pub measured: f64,
    /// Sample point achieving the worst margin.
    pub worst_at: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, measured: f64, worst_at: String, note: String) {
        self.checks.push(AssumptionCheck {
            name: name.to_string(),
            passed,
            measured,
            worst_at,
            note,
        });
    }
}

/// Sample every assumption; hard failures (positive upper fitness bound,
/// degenerate speed, transport not finite in time) come back as errors, the
/// rest as report entries.
pub fn validate_assumptions(
    engine: &EigenEngine,
    kernel: &MutationKernel,
    kq: &KernelQuad,
    init: &InitialCondition,
    grid: &TraitGrid,
    age: &AgeGrid,
    epsilons: &[f64],
) -> Result<ValidationReport, CoefficientError> {
    let coeffs = &engine.coeffs;
    let bounds = &engine.bounds;
    let mut report = ValidationReport::default();

    // hard: the fitness band must sit strictly below zero
    if bounds.lambda_upper >= 0.0 {
        return Err(CoefficientError::AssumptionViolated {
            name: "lambda_upper < 0".into(),
            measured: bounds.lambda_upper,
            at: "bounds".into(),
        });
    }
    report.push(
        "fitness_band_negative",
        true,
        bounds.lambda_upper,
        "bounds".into(),
        "lambda_lower <= lambda_upper < 0".into(),
    );

    // field positivity on the (x, y) sample
    let mut a_min = f64::INFINITY;
    let mut b_min = f64::INFINITY;
    let mut d_min = f64::INFINITY;
    let mut worst = String::new();
    let x_stride = (age.n_nodes() / 64).max(1);
    for (_, y) in grid.nodes() {
        for i in (0..age.n_nodes()).step_by(x_stride) {
            let x = age.x(i);
            let (a, b, d) = (coeffs.speed(x, y), coeffs.birth(x, y), coeffs.death(x, y));
            for (field, v) in [("A", a), ("b", b), ("d", d)] {
                if !v.is_finite() {
                    return Err(CoefficientError::NonEvaluableField {
                        field: match field {
                            "A" => "speed",
                            "b" => "birth",
                            _ => "death",
                        },
                        x,
                        y0: y[0],
                        y1: y[1],
                    });
                }
            }
            if a < a_min {
                a_min = a;
                worst = format!("(x={x:.3}, y={:.3})", y[0]);
            }
            b_min = b_min.min(b);
            d_min = d_min.min(d);
        }
    }
    if a_min <= 0.0 {
        return Err(CoefficientError::AssumptionViolated {
            name: "A >= A_lower > 0".into(),
            measured: a_min,
            at: worst,
        });
    }
    report.push(
        "speed_lower_bound",
        true,
        a_min,
        worst.clone(),
        "measured A_lower".into(),
    );
    report.push(
        "birth_death_nonnegative",
        b_min >= 0.0 && d_min >= 0.0,
        b_min.min(d_min),
        worst.clone(),
        "b, d >= 0 on the sample".into(),
    );

    // transport outwards the birth support in finite time
    let x_bar = coeffs.x_bar();
    if x_bar.is_finite() {
        let mut k_transport = 0.0f64;
        let mut at = String::new();
        for (_, y) in grid.nodes() {
            let k = coeffs.curly_a(x_bar, y);
            if k > k_transport {
                k_transport = k;
                at = format!("y={:.3}", y[0]);
            }
        }
        report.push(
            "transport_finite_time",
            k_transport.is_finite(),
            k_transport,
            at,
            "measured K = sup_y int_0^x_bar 1/A (reported, not enforced)".into(),
        );
    } else {
        // unbounded support: 1/A must be integrable; sample the growth
        let y = grid.node(grid.len() / 2);
        let probe = coeffs.curly_a(200.0, y) - coeffs.curly_a(100.0, y);
        if probe > 1e-6 {
            return Err(CoefficientError::AssumptionViolated {
                name: "transport-in-finite-time (int 1/A over the birth support)".into(),
                measured: probe,
                at: "x in [100, 200]".into(),
            });
        }
        report.push(
            "transport_finite_time",
            true,
            probe,
            "tail probe".into(),
            "unbounded support with integrable 1/A".into(),
        );
    }

    // birth support definition: b = 0 beyond x_bar
    if x_bar.is_finite() {
        let mut worst_b = 0.0f64;
        for (_, y) in grid.nodes() {
            for k in 1..=8 {
                worst_b = worst_b.max(coeffs.birth(x_bar * (1.0 + 0.2 * k as f64) + 1e-9, y));
            }
        }
        report.push(
            "birth_support",
            worst_b == 0.0,
            worst_b,
            "x > x_bar".into(),
            "b vanishes past the support bound".into(),
        );
    }

    // kernel: probability normalization by independent quadrature
    // (the kernel is a per-axis tensor product, so the mass factorizes)
    if !matches!(kernel.kind, crate::kernel::KernelKind::Delta) {
        let axis_density = |axis: usize, z: f64| -> f64 {
            let s = kernel.sigma(axis);
            match kernel.kind {
                crate::kernel::KernelKind::Gaussian { .. } => {
                    (-z * z / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
                }
                crate::kernel::KernelKind::CompactCosine { radius } => {
                    if z.abs() >= radius {
                        0.0
                    } else {
                        (1.0 + (std::f64::consts::PI * z / radius).cos()) / (2.0 * radius)
                    }
                }
                crate::kernel::KernelKind::Delta => 0.0,
            }
        };
        let mut mass = 1.0;
        for axis in 0..kernel.dim {
            let r = kq.radius[axis];
            mass *= simpson_adaptive(&|z: f64| axis_density(axis, z), -r, r, 1e-12)
                .unwrap_or(f64::NAN);
        }
        report.push(
            "kernel_normalization",
            (mass - 1.0).abs() <= 1e-10,
            (mass - 1.0).abs(),
            "independent quadrature".into(),
            "|int M - 1| <= quad_tol".into(),
        );
        // thin tails: exponential moments finite up to the configured growth
        let p_probe = kq.p_max;
        let m = kq
            .exp_moment(if kernel.dim == 2 {
                [p_probe, p_probe]
            } else {
                [p_probe, 0.0]
            })
            .map(|v| v.is_finite())
            .unwrap_or(false);
        report.push(
            "kernel_thin_tails",
            m,
            p_probe,
            "p = p_max".into(),
            "exponential moment finite at the truncation growth bound".into(),
        );
    }

    // F(y, lambda_upper) and dF finite (sampled)
    let mut f_max = 0.0f64;
    let mut fp_min = f64::INFINITY;
    let mut fp_max = f64::NEG_INFINITY;
    let mut grad_f_max = 0.0f64;
    let mut grad_fp_max = 0.0f64;
    let mut d2f_min = f64::INFINITY;
    let mut margin_max = f64::NEG_INFINITY;
    let mut eta_lo_of_y_min = f64::INFINITY;
    let mut eta_hi_of_y_max = f64::NEG_INFINITY;
    let stride = (grid.len() / 32).max(1);
    let hg = engine.h_grad;
    for i in (0..grid.len()).step_by(stride) {
        let y = grid.node(i);
        for k in 0..=20 {
            let lam = bounds.lambda_lower
                + (bounds.lambda_upper - bounds.lambda_lower) * k as f64 / 20.0;
            let (f, fp, _) = engine.f_with_derivs(y, lam).map_err(|_| {
                CoefficientError::NonEvaluableField {
                    field: "F",
                    x: lam,
                    y0: y[0],
                    y1: y[1],
                }
            })?;
            if k == 20 {
                f_max = f_max.max(f);
            }
            fp_min = fp_min.min(fp);
            fp_max = fp_max.max(fp);
            // y-derivatives by the same centered stencil as the engine
            let mut yp = y;
            let mut ym = y;
            yp[0] += hg;
            ym[0] -= hg;
            let (f_p, fp_p, _) = engine.f_with_derivs(yp, lam).unwrap_or((f, fp, 0.0));
            let (f_m, fp_m, _) = engine.f_with_derivs(ym, lam).unwrap_or((f, fp, 0.0));
            grad_f_max = grad_f_max.max(((f_p - f_m) / (2.0 * hg)).abs());
            grad_fp_max = grad_fp_max.max(((fp_p - fp_m) / (2.0 * hg)).abs());
            d2f_min = d2f_min.min((f_p - 2.0 * f + f_m) / (hg * hg));
        }
        let band = engine.eta_band(y).map_err(|_| CoefficientError::NonEvaluableField {
            field: "eta band",
            x: 0.0,
            y0: y[0],
            y1: y[1],
        })?;
        eta_lo_of_y_min = eta_lo_of_y_min.min(band.lo);
        eta_hi_of_y_max = eta_hi_of_y_max.max(band.hi);
        for k in 1..=9 {
            let eta = band.lo + (band.hi - band.lo) * k as f64 / 10.0;
            if let Ok(m) = engine.concavity_margin(y, eta) {
                margin_max = margin_max.max(m);
            }
        }
    }
    report.push(
        "f_finite_at_upper_fitness",
        f_max.is_finite(),
        f_max,
        "lambda = lambda_upper".into(),
        "F(y, lambda_upper), dF finite".into(),
    );
    report.push(
        "derf_lower",
        fp_min >= bounds.l_f,
        fp_min,
        "sampled band".into(),
        format!("dF/dlambda >= l_F = {}", bounds.l_f),
    );
    report.push(
        "derf_upper",
        fp_max <= bounds.big_l_f,
        fp_max,
        "sampled band".into(),
        format!("dF/dlambda <= L_F = {}", bounds.big_l_f),
    );
    report.push(
        "derf_y_bounds",
        grad_f_max <= bounds.big_l_f && grad_fp_max <= bounds.big_l_f,
        grad_f_max.max(grad_fp_max),
        "sampled band".into(),
        "|grad_y F|, |grad_y dF| <= L_F".into(),
    );
    report.push(
        "f_semiconvex_in_y",
        d2f_min >= -bounds.big_l_f,
        d2f_min,
        "sampled band".into(),
        "d2F/dy2 >= -L_F".into(),
    );
    report.push(
        "concavity_margin",
        margin_max <= -bounds.delta,
        margin_max,
        "sampled band".into(),
        format!("d2_eta Lambda + d_eta Lambda/eta <= -delta = -{}", bounds.delta),
    );
    report.push(
        "eta_band_global",
        eta_lo_of_y_min >= bounds.eta_lower && eta_hi_of_y_max <= bounds.eta_upper,
        eta_lo_of_y_min,
        "band envelope".into(),
        "eta_lower <= eta_lo(y) and eta_hi(y) <= eta_upper".into(),
    );

    // initial conditions
    let u0: Vec<f64> = grid.nodes().map(|(_, y)| init.u0(y, grid.dim)).collect();
    let sup0 = crate::grid::sup_and_argmax(grid, &u0);
    report.push(
        "initial_sup_zero",
        sup0.value.abs() <= 1e-9,
        sup0.value,
        format!("y={:.3}", sup0.point[0]),
        "sup U0 = 0 within grid tolerance".into(),
    );
    let mut lip0 = 0.0f64;
    let mut sc0 = f64::INFINITY;
    for (i, y) in grid.nodes() {
        let g = init.grad_u0(y, grid.dim);
        lip0 = lip0.max(g[0].abs()).max(g[1].abs());
        for axis in 0..grid.dim {
            if let Some(s) = grid.second_difference(&u0, i, axis) {
                sc0 = sc0.min(s);
            }
        }
    }
    report.push(
        "initial_lipschitz",
        lip0 <= bounds.k0,
        lip0,
        "grid scan".into(),
        format!("|grad U0| <= k0 = {}", bounds.k0),
    );
    report.push(
        "initial_semiconvexity",
        sc0.is_finite(),
        sc0,
        "grid scan".into(),
        "measured lower bound -C of D2 U0 (reported)".into(),
    );
    let (g_lo, g_hi) = init.gamma0_bracket();
    let mut g_min = f64::INFINITY;
    let mut g_max = f64::NEG_INFINITY;
    for (_, y) in grid.nodes() {
        let g = init.gamma0(y);
        g_min = g_min.min(g);
        g_max = g_max.max(g);
    }
    report.push(
        "initial_gamma_bracket",
        g_min >= g_lo - 1e-12 && g_max <= g_hi + 1e-12 && g_lo > 0.0,
        g_min,
        "grid scan".into(),
        format!("p0/Q within [{g_lo:.6}, {g_hi:.6}]"),
    );
    // eta0 within the per-trait band, for the limit slope field and each eps
    for &eps in epsilons {
        let mut worst_excess = 0.0f64;
        let mut at = String::new();
        let mut j0 = 0.0;
        let wy = grid.quad_weights();
        for (i, y) in grid.nodes() {
            let eta0 = if eps == 0.0 {
                let g = init.grad_u0(y, grid.dim);
                kq.exp_moment(g).unwrap_or(f64::NAN)
            } else {
                let u_y = init.u0(y, grid.dim);
                kq.eval_pairwise(|z| {
                    let p = [y[0] + eps * z[0], y[1] + eps * z[1]];
                    ((init.u0(p, grid.dim) - u_y) / eps).min(705.0).exp()
                })
            };
            let band = engine.eta_band(y).unwrap();
            let excess = (band.lo - eta0).max(eta0 - band.hi).max(0.0);
            if excess > worst_excess {
                worst_excess = excess;
                at = format!("y={:.3}", y[0]);
            }
            if eps > 0.0 {
                j0 += wy[i] * (init.u0(y, grid.dim) / eps).exp();
            }
        }
        let tag = if eps == 0.0 {
            "initial_eta_band_limit".to_string()
        } else {
            format!("initial_eta_band_eps_{eps}")
        };
        report.push(
            &tag,
            worst_excess <= 1e-9,
            worst_excess,
            at,
            "eta0(y) within [eta_lo(y), eta_hi(y)]".into(),
        );
        if eps > 0.0 {
            report.push(
                &format!("initial_integrability_eps_{eps}"),
                j0.is_finite() && j0 > 0.0,
                j0,
                "trait box".into(),
                "measured J0 = int exp(U0/eps) dy (reported)".into(),
            );
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{
        AssumptionBounds, CoefficientModel, CoefficientSet, InitialCorrector, InitialPhase,
    };
    use crate::kernel::KernelKind;

    fn bounds() -> AssumptionBounds {
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

    fn init() -> InitialCondition {
        InitialCondition {
            u0: InitialPhase::QuadraticWell {
                center: vec![0.3],
                curvature: vec![1.0],
            },
            p0: InitialCorrector::EigenProfile,
        }
    }

    fn setup(model: CoefficientModel, b: AssumptionBounds) -> (EigenEngine, MutationKernel, KernelQuad) {
        let coeffs = CoefficientSet::new(model, 1);
        let engine = EigenEngine::new(coeffs, b, 0.05);
        let kernel = MutationKernel::new(KernelKind::Gaussian { sigma: vec![0.5] }, 1);
        let kq = KernelQuad::build(&kernel, 6.0, 1e-12).unwrap();
        (engine, kernel, kq)
    }

    #[test]
    fn compactified_example_passes_all_checks() {
        let (engine, kernel, kq) = setup(
            CoefficientModel::CompactifiedWell {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
                d_well: 0.3,
                well_center: vec![0.3],
                d_skew: 0.0,
            },
            bounds(),
        );
        let grid = TraitGrid::new_1d(-2.0, 2.0, 0.1, false);
        let age = AgeGrid::new(12.0, 0.05);
        let report = validate_assumptions(
            &engine,
            &kernel,
            &kq,
            &init(),
            &grid,
            &age,
            &[0.2, 0.1, 0.0],
        )
        .unwrap();
        for c in &report.checks {
            assert!(c.passed, "check {} failed: measured {}", c.name, c.measured);
        }
    }

    #[test]
    fn degenerate_speed_fails_hard() {
        let (engine, kernel, kq) = setup(
            CoefficientModel::Uniform {
                a: 0.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            bounds(),
        );
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.5, false);
        let age = AgeGrid::new(4.0, 0.1);
        let r = validate_assumptions(&engine, &kernel, &kq, &init(), &grid, &age, &[0.1]);
        assert!(matches!(
            r,
            Err(CoefficientError::AssumptionViolated { .. })
        ));
    }

    #[test]
    fn unbounded_support_with_nonintegrable_speed_fails() {
        let (engine, kernel, kq) = setup(
            CoefficientModel::ExponentialBirth {
                a: 1.0,
                b0: 1.5,
                kappa: 0.5,
                d0: 1.0,
            },
            AssumptionBounds {
                lambda_upper: -0.2,
                ..bounds()
            },
        );
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.5, false);
        let age = AgeGrid::new(4.0, 0.1);
        let r = validate_assumptions(&engine, &kernel, &kq, &init(), &grid, &age, &[0.1]);
        match r {
            Err(CoefficientError::AssumptionViolated { name, .. }) => {
                assert!(name.contains("transport"), "{name}");
            }
            other => panic!("expected transport violation, got {other:?}"),
        }
    }

    #[test]
    fn positive_upper_fitness_fails_hard() {
        let (engine, kernel, kq) = setup(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            AssumptionBounds {
                lambda_upper: 0.5,
                ..bounds()
            },
        );
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.5, false);
        let age = AgeGrid::new(4.0, 0.1);
        let r = validate_assumptions(&engine, &kernel, &kq, &init(), &grid, &age, &[0.1]);
        assert!(matches!(
            r,
            Err(CoefficientError::AssumptionViolated { .. })
        ));
    }

    #[test]
    fn validator_is_idempotent() {
        let (engine, kernel, kq) = setup(
            CoefficientModel::Uniform {
                a: 1.0,
                b_amp: 2.0,
                x_bar: 1.0,
                d0: 1.0,
            },
            bounds(),
        );
        let grid = TraitGrid::new_1d(-1.0, 1.0, 0.25, false);
        let age = AgeGrid::new(8.0, 0.05);
        let r1 =
            validate_assumptions(&engine, &kernel, &kq, &init(), &grid, &age, &[0.2, 0.1]).unwrap();
        let r2 =
            validate_assumptions(&engine, &kernel, &kq, &init(), &grid, &age, &[0.2, 0.1]).unwrap();
        assert_eq!(r1, r2);
    }
}
