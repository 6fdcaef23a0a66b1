//! Uniform grids over the trait box and the age axis, with the interpolation
//! and reduction helpers shared by the solvers.
//!
//! Trait points are always carried as `[f64; 2]`; in dimension 1 the second
//! slot is zero and ignored. Fields over the trait box are flat row-major
//! vectors (`j1 * shape[0] + j0` in 2-D, plain index in 1-D).

/// A point in trait space. Slot 1 is unused when `dim == 1`.
pub type TraitPoint = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct TraitGrid {
    pub dim: usize,
    pub min: [f64; 2],
    pub spacing: [f64; 2],
    pub shape: [usize; 2],
    /// Periodic wrap in every trait direction (used by the homogeneous
    /// sanity scenario); otherwise fields continue linearly outside the box.
    pub periodic: bool,
}

impl TraitGrid {
    pub fn new_1d(min: f64, max: f64, dy: f64, periodic: bool) -> Self {
        let n = ((max - min) / dy).round() as usize + 1;
        TraitGrid {
            dim: 1,
            min: [min, 0.0],
            spacing: [dy, 1.0],
            shape: [n, 1],
            periodic,
        }
    }

    pub fn new_2d(min: [f64; 2], max: [f64; 2], dy: [f64; 2], periodic: bool) -> Self {
        let n0 = ((max[0] - min[0]) / dy[0]).round() as usize + 1;
        let n1 = ((max[1] - min[1]) / dy[1]).round() as usize + 1;
        TraitGrid {
            dim: 2,
            min,
            spacing: dy,
            shape: [n0, n1],
            periodic,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn max(&self, axis: usize) -> f64 {
        self.min[axis] + self.spacing[axis] * (self.shape[axis] - 1) as f64
    }

    /// Width of the box along `axis`.
    #[inline]
    pub fn extent(&self, axis: usize) -> f64 {
        self.spacing[axis] * (self.shape[axis] - 1) as f64
    }

    #[inline]
    pub fn index(&self, j0: usize, j1: usize) -> usize {
        j1 * self.shape[0] + j0
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.shape[0], idx / self.shape[0]]
    }

    #[inline]
    pub fn node(&self, idx: usize) -> TraitPoint {
        let [j0, j1] = self.multi_index(idx);
        [
            self.min[0] + j0 as f64 * self.spacing[0],
            self.min[1] + j1 as f64 * self.spacing[1],
        ]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, TraitPoint)> + '_ {
        (0..self.len()).map(move |i| (i, self.node(i)))
    }

    /// Linear (1-D) / bilinear (2-D) interpolation of `field` at `p`.
    /// Outside the box the field is continued linearly with the boundary
    /// gradient, or wrapped when the grid is periodic.
    pub fn interp(&self, field: &[f64], p: TraitPoint) -> f64 {
        debug_assert_eq!(field.len(), self.len());
        match self.dim {
            1 => self.interp_axis0(field, 0, p[0]),
            _ => {
                // interpolate along axis 1 of two axis-0 slices
                let (j1a, j1b, t1) = self.locate(1, p[1]);
                let va = self.interp_axis0(field, j1a, p[0]);
                let vb = self.interp_axis0(field, j1b, p[0]);
                va + (vb - va) * t1
            }
        }
    }

    /// Locate `x` along `axis`: returns bracketing rows and the fractional
    /// weight, implementing wrap or linear continuation.
    pub(crate) fn locate(&self, axis: usize, x: f64) -> (usize, usize, f64) {
        let n = self.shape[axis];
        if n == 1 {
            return (0, 0, 0.0);
        }
        let q = (x - self.min[axis]) / self.spacing[axis];
        if self.periodic {
            let span = (n - 1) as f64;
            let qw = q.rem_euclid(span);
            let j = (qw.floor() as usize).min(n - 2);
            return (j, j + 1, qw - j as f64);
        }
        if q <= 0.0 {
            // continue with the first cell's slope
            return (0, 1, q);
        }
        if q >= (n - 1) as f64 {
            return (n - 2, n - 1, q - (n - 2) as f64);
        }
        let j = (q.floor() as usize).min(n - 2);
        (j, j + 1, q - j as f64)
    }

    fn interp_axis0(&self, field: &[f64], j1: usize, x: f64) -> f64 {
        let (ja, jb, t) = self.locate(0, x);
        let va = field[self.index(ja, j1)];
        let vb = field[self.index(jb, j1)];
        va + (vb - va) * t
    }

    /// Centered gradient at a node (one-sided at non-periodic edges).
    pub fn gradient_at(&self, field: &[f64], idx: usize) -> TraitPoint {
        let [j0, j1] = self.multi_index(idx);
        let mut g = [0.0, 0.0];
        for axis in 0..self.dim {
            let j = if axis == 0 { j0 } else { j1 };
            g[axis] = self.axis_gradient(field, axis, j0, j1, j);
        }
        g
    }

    fn axis_gradient(&self, field: &[f64], axis: usize, j0: usize, j1: usize, j: usize) -> f64 {
        let n = self.shape[axis];
        if n == 1 {
            return 0.0;
        }
        let h = self.spacing[axis];
        let at = |k: usize| -> f64 {
            if axis == 0 {
                field[self.index(k, j1)]
            } else {
                field[self.index(j0, k)]
            }
        };
        if self.periodic {
            let prev = if j == 0 { n - 2 } else { j - 1 };
            let next = if j + 1 >= n { 1 } else { j + 1 };
            return (at(next) - at(prev)) / (2.0 * h);
        }
        if j == 0 {
            (at(1) - at(0)) / h
        } else if j + 1 == n {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(j + 1) - at(j - 1)) / (2.0 * h)
        }
    }

    /// One-sided difference quotients (backward, forward) along `axis` at a
    /// node, continuing with the boundary slope outside the box so that the
    /// two coincide at edges.
    pub fn one_sided(&self, field: &[f64], idx: usize, axis: usize) -> (f64, f64) {
        let [j0, j1] = self.multi_index(idx);
        let n = self.shape[axis];
        if n == 1 {
            return (0.0, 0.0);
        }
        let h = self.spacing[axis];
        let j = if axis == 0 { j0 } else { j1 };
        let at = |k: usize| -> f64 {
            if axis == 0 {
                field[self.index(k, j1)]
            } else {
                field[self.index(j0, k)]
            }
        };
        if self.periodic {
            let prev = if j == 0 { n - 2 } else { j - 1 };
            let next = if j + 1 >= n { 1 } else { j + 1 };
            return ((at(j) - at(prev)) / h, (at(next) - at(j)) / h);
        }
        let backward = if j == 0 {
            (at(1) - at(0)) / h
        } else {
            (at(j) - at(j - 1)) / h
        };
        let forward = if j + 1 == n {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(j + 1) - at(j)) / h
        };
        (backward, forward)
    }

    /// Second difference along `axis`; `None` at non-periodic edges.
    pub fn second_difference(&self, field: &[f64], idx: usize, axis: usize) -> Option<f64> {
        let [j0, j1] = self.multi_index(idx);
        let n = self.shape[axis];
        if n < 3 {
            return None;
        }
        let j = if axis == 0 { j0 } else { j1 };
        let at = |k: usize| -> f64 {
            if axis == 0 {
                field[self.index(k, j1)]
            } else {
                field[self.index(j0, k)]
            }
        };
        let h2 = self.spacing[axis] * self.spacing[axis];
        if self.periodic {
            let prev = if j == 0 { n - 2 } else { j - 1 };
            let next = if j + 1 >= n { 1 } else { j + 1 };
            return Some((at(next) - 2.0 * at(j) + at(prev)) / h2);
        }
        if j == 0 || j + 1 == n {
            return None;
        }
        Some((at(j + 1) - 2.0 * at(j) + at(j - 1)) / h2)
    }

    /// Trapezoid weights over the box (products per axis).
    pub fn quad_weights(&self) -> Vec<f64> {
        let axis_w = |axis: usize| -> Vec<f64> {
            let n = self.shape[axis];
            let h = self.spacing[axis];
            if n == 1 {
                return vec![1.0];
            }
            (0..n)
                .map(|j| if j == 0 || j + 1 == n { 0.5 * h } else { h })
                .collect()
        };
        let w0 = axis_w(0);
        if self.dim == 1 {
            return w0;
        }
        let w1 = axis_w(1);
        let mut w = Vec::with_capacity(self.len());
        for b in &w1 {
            for a in &w0 {
                w.push(a * b);
            }
        }
        w
    }
}

/// Result of a grid argmax with one-step quadratic refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub point: TraitPoint,
    pub node_index: usize,
    /// Number of nodes attaining the discrete maximum (ties broken towards
    /// the smallest point in lexicographic order).
    pub multiplicity: usize,
}

/// Grid maximum refined by fitting a parabola through the three nodes around
/// the discrete argmax along each axis. Exact for quadratics away from edges.
pub fn sup_and_argmax(grid: &TraitGrid, field: &[f64]) -> GridMax {
    let mut best = 0usize;
    for i in 1..field.len() {
        if field[i] > field[best] {
            best = i;
        }
    }
    let tie_tol = 1e-12 * (1.0 + field[best].abs());
    let multiplicity = field
        .iter()
        .filter(|v| (field[best] - **v).abs() <= tie_tol)
        .count();

    let [j0, j1] = grid.multi_index(best);
    let mut point = grid.node(best);
    let mut value = field[best];
    for axis in 0..grid.dim {
        let j = if axis == 0 { j0 } else { j1 };
        let n = grid.shape[axis];
        if n < 3 || j == 0 || j + 1 == n {
            continue;
        }
        let at = |k: usize| -> f64 {
            if axis == 0 {
                field[grid.index(k, j1)]
            } else {
                field[grid.index(j0, k)]
            }
        };
        let (um, u0, up) = (at(j - 1), at(j), at(j + 1));
        let denom = um - 2.0 * u0 + up;
        if denom >= -1e-300 {
            continue; // flat or non-concave: keep the node
        }
        let delta = 0.5 * (um - up) / denom;
        point[axis] += delta * grid.spacing[axis];
        value = value.max(u0 - 0.125 * (um - up) * (um - up) / denom);
    }
    GridMax {
        value,
        point,
        node_index: best,
        multiplicity,
    }
}

/// Uniform grid on the age axis `[0, x_max]` with `n_cells + 1` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid {
    pub dx: f64,
    pub n_cells: usize,
}

impl AgeGrid {
    pub fn new(x_max: f64, dx: f64) -> Self {
        let n_cells = (x_max / dx).round().max(1.0) as usize;
        AgeGrid { dx, n_cells }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    #[inline]
    pub fn x_max(&self) -> f64 {
        self.n_cells as f64 * self.dx
    }

    /// Trapezoid over the nodes.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes());
        let mut s = 0.5 * (values[0] + values[self.n_cells]);
        for v in &values[1..self.n_cells] {
            s += v;
        }
        s * self.dx
    }

    /// Trapezoid restricted to `[0, x_hi]` (x_hi clamped to a node).
    pub fn trapezoid_to(&self, values: &[f64], x_hi: f64) -> f64 {
        let k = ((x_hi / self.dx).round() as usize).min(self.n_cells);
        if k == 0 {
            return 0.0;
        }
        let mut s = 0.5 * (values[0] + values[k]);
        for v in &values[1..k] {
            s += v;
        }
        s * self.dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interp_linear_is_exact() {
        let g = TraitGrid::new_1d(-1.0, 1.0, 0.25, false);
        let f: Vec<f64> = g.nodes().map(|(_, y)| 3.0 * y[0] - 0.5).collect();
        for &y in &[-1.0, -0.3, 0.11, 0.999, 1.0] {
            assert!((g.interp(&f, [y, 0.0]) - (3.0 * y - 0.5)).abs() < 1e-12);
        }
        // linear continuation outside the box
        assert!((g.interp(&f, [1.7, 0.0]) - (3.0 * 1.7 - 0.5)).abs() < 1e-12);
        assert!((g.interp(&f, [-2.3, 0.0]) - (3.0 * -2.3 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn interp_periodic_wraps() {
        let g = TraitGrid::new_1d(0.0, 1.0, 0.25, true);
        let f: Vec<f64> = g
            .nodes()
            .map(|(_, y)| (2.0 * std::f64::consts::PI * y[0]).sin())
            .collect();
        let a = g.interp(&f, [0.1, 0.0]);
        let b = g.interp(&f, [1.1, 0.0]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn argmax_parabola_recovers_vertex() {
        let g = TraitGrid::new_1d(-1.0, 1.0, 0.05, false);
        let f: Vec<f64> = g.nodes().map(|(_, y)| -(y[0] - 0.3) * (y[0] - 0.3)).collect();
        let m = sup_and_argmax(&g, &f);
        assert!((m.point[0] - 0.3).abs() < 2.5e-3, "argmax {}", m.point[0]);
        assert!(m.value.abs() < 1e-6);
        assert_eq!(m.multiplicity, 1);
    }

    #[test]
    fn argmax_constant_field_reports_leftmost_and_ties() {
        let g = TraitGrid::new_1d(-1.0, 1.0, 0.5, false);
        let f = vec![2.0; g.len()];
        let m = sup_and_argmax(&g, &f);
        assert_eq!(m.node_index, 0);
        assert!((m.point[0] + 1.0).abs() < 1e-15);
        assert_eq!(m.multiplicity, g.len());
    }

    #[test]
    fn argmax_two_equal_maxima_leftmost_flagged() {
        let g = TraitGrid::new_1d(0.0, 4.0, 1.0, false);
        let f = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        let m = sup_and_argmax(&g, &f);
        assert_eq!(m.node_index, 1);
        assert_eq!(m.multiplicity, 2);
    }

    #[test]
    fn argmax_2d_refines_both_axes() {
        let g = TraitGrid::new_2d([-1.0, -1.0], [1.0, 1.0], [0.1, 0.1], false);
        let f: Vec<f64> = g
            .nodes()
            .map(|(_, y)| -(y[0] - 0.23) * (y[0] - 0.23) - (y[1] + 0.37) * (y[1] + 0.37))
            .collect();
        let m = sup_and_argmax(&g, &f);
        assert!((m.point[0] - 0.23).abs() < 5e-3);
        assert!((m.point[1] + 0.37).abs() < 5e-3);
    }

    #[test]
    fn trapezoid_weights_integrate_linears() {
        let g = TraitGrid::new_1d(0.0, 2.0, 0.1, false);
        let w = g.quad_weights();
        let f: Vec<f64> = g.nodes().map(|(_, y)| 2.0 * y[0] + 1.0).collect();
        let s: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((s - 6.0).abs() < 1e-12);
    }

    #[test]
    fn age_trapezoid_restriction() {
        let a = AgeGrid::new(2.0, 0.25);
        let vals: Vec<f64> = (0..a.n_nodes()).map(|i| a.x(i)).collect();
        assert!((a.trapezoid(&vals) - 2.0).abs() < 1e-14);
        assert!((a.trapezoid_to(&vals, 1.0) - 0.5).abs() < 1e-14);
    }
}
