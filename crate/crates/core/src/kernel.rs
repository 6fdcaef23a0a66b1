//! Mutation kernels and their truncated quadrature rules.
//!
//! All registered kernels are even probability densities that vanish faster
//! than any exponential. The quadrature enumerates nodes in ± pairs and sums
//! each pair before accumulating, so even integrands (and in particular the
//! first moment, which is exactly zero) come out bit-symmetric.

use crate::grid::TraitPoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("exponential moment requested at |p| = {p:e} beyond configured p_max = {p_max:e}")]
    MomentOverflow { p: f64, p_max: f64 },
    #[error("kernel quadrature failed to converge (last relative delta {delta:e})")]
    QuadratureNotConverged { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    /// Centered Gaussian with per-axis standard deviation.
    Gaussian { sigma: Vec<f64> },
    /// Raised-cosine bump supported on [-radius, radius] per axis
    /// (tensor product in dimension 2).
    CompactCosine { radius: f64 },
    /// Point mass at the origin: the no-mutation reduction.
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationKernel {
    pub kind: KernelKind,
    pub dim: usize,
}

impl MutationKernel {
    pub fn new(kind: KernelKind, dim: usize) -> Self {
        MutationKernel { kind, dim }
    }

    pub fn sigma(&self, axis: usize) -> f64 {
        match &self.kind {
            KernelKind::Gaussian { sigma } => sigma[axis.min(sigma.len() - 1)],
            KernelKind::CompactCosine { radius } => *radius / 2.0,
            KernelKind::Delta => 0.0,
        }
    }

    /// Unnormalized density along one axis.
    fn density_axis(&self, axis: usize, z: f64) -> f64 {
        match &self.kind {
            KernelKind::Gaussian { .. } => {
                let s = self.sigma(axis);
                (-z * z / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s)
            }
            KernelKind::CompactCosine { radius } => {
                if z.abs() >= *radius {
                    0.0
                } else {
                    (1.0 + (std::f64::consts::PI * z / radius).cos()) / (2.0 * radius)
                }
            }
            KernelKind::Delta => 0.0,
        }
    }

    pub fn density(&self, z: TraitPoint) -> f64 {
        let mut v = self.density_axis(0, z[0]);
        if self.dim == 2 {
            v *= self.density_axis(1, z[1]);
        }
        v
    }

    pub fn is_even(&self) -> bool {
        true // every registered kind is centered and even
    }

    /// Truncation radius along `axis`: smallest R with
    /// `M(z) * exp(growth * |z|) < tail_tol` for all |z| >= R.
    pub fn truncation_radius(&self, axis: usize, growth: f64, tail_tol: f64) -> f64 {
        match &self.kind {
            KernelKind::Delta => 0.0,
            KernelKind::CompactCosine { radius } => *radius,
            KernelKind::Gaussian { .. } => {
                let s = self.sigma(axis);
                let log_norm = ((2.0 * std::f64::consts::PI).sqrt() * s).ln();
                // -R^2/(2 s^2) + g R < ln(tol) + log_norm
                let c = tail_tol.ln() + log_norm;
                let disc = growth * growth * s.powi(4) - 2.0 * s * s * c;
                growth * s * s + disc.max(0.0).sqrt()
            }
        }
    }
}

/// A frozen quadrature rule over the truncated kernel support.
///
/// `pairs` holds nodes with positive leading coordinate; every evaluation
/// visits `(z, -z)` together. Weights are raw (Simpson x density); all
/// moments divide by `mass` so that the constant function integrates to
/// exactly 1.0.
#[derive(Debug, Clone)]
pub struct KernelQuad {
    pub dim: usize,
    pub radius: [f64; 2],
    pub p_max: f64,
    center_w: f64,
    pairs: Vec<(TraitPoint, f64)>,
    mass: f64,
}

impl KernelQuad {
    /// Build the rule for exponential weights up to `exp(p_max |z|)`.
    /// `tail_tol` is the truncation threshold of the weighted density.
    pub fn build(
        kernel: &MutationKernel,
        p_max: f64,
        tail_tol: f64,
    ) -> Result<KernelQuad, KernelError> {
        if matches!(kernel.kind, KernelKind::Delta) {
            return Ok(KernelQuad {
                dim: kernel.dim,
                radius: [0.0, 0.0],
                p_max: f64::INFINITY,
                center_w: 1.0,
                pairs: Vec::new(),
                mass: 1.0,
            });
        }
        let mut radius = [0.0, 0.0];
        for axis in 0..kernel.dim {
            radius[axis] = kernel.truncation_radius(axis, p_max, tail_tol);
        }
        // per-axis node half-counts; refine until the worst-case moment is
        // stable between two resolutions
        let mut halves = [0usize, 0usize];
        for axis in 0..kernel.dim {
            let scale = match kernel.kind {
                KernelKind::Gaussian { .. } => kernel.sigma(axis) / 32.0,
                KernelKind::CompactCosine { radius } => radius / 128.0,
                KernelKind::Delta => unreachable!(),
            };
            halves[axis] = ((radius[axis] / scale).ceil() as usize).max(8);
        }
        let mut rule = Self::assemble(kernel, radius, halves, p_max);
        for _ in 0..4 {
            let finer = Self::assemble(
                kernel,
                radius,
                [halves[0] * 2, halves[1] * 2],
                p_max,
            );
            let a = rule.exp_moment_unchecked(&probe(p_max, kernel.dim));
            let b = finer.exp_moment_unchecked(&probe(p_max, kernel.dim));
            let delta = (a - b).abs() / b.abs().max(1.0);
            if delta < 1e-11 {
                return Ok(finer);
            }
            halves = [halves[0] * 2, halves[1] * 2];
            rule = finer;
        }
        Err(KernelError::QuadratureNotConverged { delta: f64::NAN })
    }

    /// Fixed-density rule without the refinement loop; used by diagnostics
    /// that trade a few digits for many fewer nodes.
    pub fn build_coarse(
        kernel: &MutationKernel,
        p_max: f64,
        tail_tol: f64,
        points_per_scale: usize,
    ) -> KernelQuad {
        if matches!(kernel.kind, KernelKind::Delta) {
            return KernelQuad {
                dim: kernel.dim,
                radius: [0.0, 0.0],
                p_max: f64::INFINITY,
                center_w: 1.0,
                pairs: Vec::new(),
                mass: 1.0,
            };
        }
        let mut radius = [0.0, 0.0];
        let mut halves = [0usize, 0usize];
        for axis in 0..kernel.dim {
            radius[axis] = kernel.truncation_radius(axis, p_max, tail_tol);
            let scale = match kernel.kind {
                KernelKind::Gaussian { .. } => kernel.sigma(axis),
                KernelKind::CompactCosine { radius } => radius / 4.0,
                KernelKind::Delta => unreachable!(),
            };
            halves[axis] =
                ((radius[axis] / scale * points_per_scale as f64).ceil() as usize).max(8);
        }
        Self::assemble(kernel, radius, halves, p_max)
    }

    fn assemble(
        kernel: &MutationKernel,
        radius: [f64; 2],
        halves: [usize; 2],
        p_max: f64,
    ) -> KernelQuad {
        // per-axis Simpson nodes on [-R, R]: 2*halves intervals
        let axis_nodes = |axis: usize| -> Vec<(f64, f64)> {
            let m = halves[axis];
            let h = radius[axis] / m as f64;
            let n = 2 * m; // intervals
            (0..=n)
                .map(|i| {
                    let z = -radius[axis] + i as f64 * h;
                    let w = if i == 0 || i == n {
                        h / 3.0
                    } else if i % 2 == 1 {
                        4.0 * h / 3.0
                    } else {
                        2.0 * h / 3.0
                    };
                    (z, w)
                })
                .collect()
        };
        let n0 = axis_nodes(0);
        let mut center_w = 0.0;
        let mut pairs: Vec<(TraitPoint, f64)> = Vec::new();
        if kernel.dim == 1 {
            let m = halves[0]; // center node index
            center_w = n0[m].1 * kernel.density([0.0, 0.0]);
            // leading-positive nodes are indices m+1..=2m
            for i in (m + 1)..n0.len() {
                let (z, w) = n0[i];
                pairs.push(([z, 0.0], w * kernel.density([z, 0.0])));
            }
        } else {
            let n1 = axis_nodes(1);
            let m0 = halves[0];
            let m1 = halves[1];
            for (i, &(z0, w0)) in n0.iter().enumerate() {
                for (j, &(z1, w1)) in n1.iter().enumerate() {
                    let leading_positive =
                        i > m0 || (i == m0 && j > m1);
                    let w = w0 * w1 * kernel.density([z0, z1]);
                    if i == m0 && j == m1 {
                        center_w = w;
                    } else if leading_positive {
                        pairs.push(([z0, z1], w));
                    }
                }
            }
        }
        let mut rule = KernelQuad {
            dim: kernel.dim,
            radius,
            p_max,
            center_w,
            pairs,
            mass: 1.0,
        };
        rule.mass = rule.eval_pairwise(|_| 1.0);
        rule
    }

    /// Pairwise integral of `f` against the kernel: w0 f(0) + sum w (f(z) + f(-z)),
    /// divided by the rule's own mass. `f(0)` is evaluated once.
    pub fn eval_pairwise<F: Fn(TraitPoint) -> f64>(&self, f: F) -> f64 {
        let mut s = self.center_w * f([0.0, 0.0]);
        for (z, w) in &self.pairs {
            s += w * (f(*z) + f([-z[0], -z[1]]));
        }
        s / self.mass
    }

    /// Like `eval_pairwise` but returns a vector integral.
    pub fn eval_pairwise_vec<F: Fn(TraitPoint) -> [f64; 2]>(&self, f: F) -> [f64; 2] {
        let c = f([0.0, 0.0]);
        let mut s = [self.center_w * c[0], self.center_w * c[1]];
        for (z, w) in &self.pairs {
            let a = f(*z);
            let b = f([-z[0], -z[1]]);
            s[0] += w * (a[0] + b[0]);
            s[1] += w * (a[1] + b[1]);
        }
        [s[0] / self.mass, s[1] / self.mass]
    }

    fn exp_moment_unchecked(&self, p: &TraitPoint) -> f64 {
        self.eval_pairwise(|z| (p[0] * z[0] + p[1] * z[1]).exp())
    }

    /// The exponential moment `int M(z) e^{p.z} dz`.
    pub fn exp_moment(&self, p: TraitPoint) -> Result<f64, KernelError> {
        let mag = p[0].abs().max(p[1].abs());
        if mag > self.p_max {
            return Err(KernelError::MomentOverflow {
                p: mag,
                p_max: self.p_max,
            });
        }
        Ok(self.exp_moment_unchecked(&p))
    }

    /// `int M(z) z e^{p.z} dz` (the p-gradient of the exponential moment).
    pub fn exp_moment_z(&self, p: TraitPoint) -> [f64; 2] {
        self.eval_pairwise_vec(|z| {
            let e = (p[0] * z[0] + p[1] * z[1]).exp();
            [z[0] * e, z[1] * e]
        })
    }

    /// First moment; exactly the zero vector for the even kernels here.
    pub fn first_moment(&self) -> [f64; 2] {
        self.eval_pairwise_vec(|z| [z[0], z[1]])
    }

    /// Largest truncation radius over axes.
    pub fn max_radius(&self) -> f64 {
        self.radius[0].max(self.radius[1])
    }

    /// Nodes with weights (center + both pair members), for callers that
    /// iterate rather than fold. Weights are normalized.
    pub fn nodes(&self) -> Vec<(TraitPoint, f64)> {
        let mut out = Vec::with_capacity(1 + 2 * self.pairs.len());
        out.push(([0.0, 0.0], self.center_w / self.mass));
        for (z, w) in &self.pairs {
            out.push((*z, w / self.mass));
            out.push(([-z[0], -z[1]], w / self.mass));
        }
        out
    }

    /// Pair view: (z, normalized weight) with z the positive-leading member.
    pub fn pair_nodes(&self) -> (f64, Vec<(TraitPoint, f64)>) {
        (
            self.center_w / self.mass,
            self.pairs
                .iter()
                .map(|(z, w)| (*z, w / self.mass))
                .collect(),
        )
    }
}

fn probe(p_max: f64, dim: usize) -> TraitPoint {
    if dim == 2 {
        [p_max, p_max]
    } else {
        [p_max, 0.0]
    }
}
