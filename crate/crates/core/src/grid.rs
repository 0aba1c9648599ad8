//! Uniform axes, tensor grids, trapezoid quadrature and finite differences.
//!
//! Fields on a [`TensorGrid`] are flat slices in row-major order: axis 0 is the
//! slowest index and the last axis is contiguous, so the linear index of
//! `(i₀, …, i_{r−1})` is `((i₀·n + i₁)·n + …)·n + i_{r−1}`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, KahanSum};

/// Largest supported tensor arity (root plus three leaves).
pub const MAX_ARITY: usize = 4;

/// Default floor applied before taking logarithms of densities.
pub const LOG_FLOOR: f64 = 1e-300;

/// Multi-index into a tensor grid; entries past the arity are zero.
pub type MultiIndex = [usize; MAX_ARITY];

/// A uniform grid `x_i = lower + i·h`, `i = 0..points`, symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    lower: f64,
    upper: f64,
    points: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidAxis("bounds must be finite with lower < upper"));
        }
        if points < 2 {
            return Err(Error::InvalidAxis("at least two points are required"));
        }
        if math::abs(lower + upper) > 1e-12 * (upper - lower) {
            return Err(Error::InvalidAxis("axis must be symmetric about zero"));
        }
        Ok(Self { lower, upper, points })
    }

    /// The axis `[−half_width, half_width]`.
    pub fn symmetric(half_width: f64, points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, points)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    /// Index of the node mirrored through zero.
    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.points - 1 - i
    }
}

/// Composite trapezoid weights; they sum to `upper − lower`.
pub fn trapezoid_weights(axis: &Axis) -> Vec<f64> {
    let h = axis.spacing();
    let mut w = vec![h; axis.points()];
    w[0] = 0.5 * h;
    w[axis.points() - 1] = 0.5 * h;
    w
}

/// Trapezoid integral of samples on an axis.
pub fn integrate_1d(axis: &Axis, values: &[f64]) -> f64 {
    let w = trapezoid_weights(axis);
    let mut s = KahanSum::default();
    for (wi, vi) in w.iter().zip(values) {
        s.add(wi * vi);
    }
    s.value()
}

/// The product grid `axis^arity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorGrid {
    axis: Axis,
    arity: usize,
}

impl TensorGrid {
    pub fn new(axis: Axis, arity: usize) -> Result<Self> {
        if !(1..=MAX_ARITY).contains(&arity) {
            return Err(Error::InvalidParameter("tensor arity must be between 1 and 4"));
        }
        Ok(Self { axis, arity })
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn points(&self) -> usize {
        self.axis.points
    }

    /// Total number of cells, `points^arity`.
    pub fn len(&self) -> usize {
        self.points().pow(self.arity as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear distance between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.points().pow((self.arity - 1 - axis) as u32)
    }

    pub fn to_linear(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.arity);
        let n = self.points();
        index.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn to_multi(&self, mut linear: usize) -> MultiIndex {
        let n = self.points();
        let mut out = [0; MAX_ARITY];
        for k in (0..self.arity).rev() {
            out[k] = linear % n;
            linear /= n;
        }
        out
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.arity {
            return Err(Error::AxisOutOfRange { index: axis, arity: self.arity });
        }
        Ok(())
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch { expected: self.len(), got: len });
        }
        Ok(())
    }

    /// Number of 1-D pencils along any axis.
    pub fn pencil_count(&self) -> usize {
        self.len() / self.points()
    }

    /// Linear index of the first cell of pencil `p` along `axis`.
    #[inline]
    pub fn pencil_start(&self, axis: usize, p: usize) -> usize {
        let stride = self.stride(axis);
        let outer = p / stride;
        let inner = p % stride;
        outer * self.points() * stride + inner
    }

    /// Product quadrature weight of every cell, in linear order.
    pub fn cell_weights(&self) -> Vec<f64> {
        let w = trapezoid_weights(&self.axis);
        let mut out = vec![1.0];
        for _ in 0..self.arity {
            let mut next = Vec::with_capacity(out.len() * w.len());
            for &o in &out {
                next.extend(w.iter().map(|&wi| o * wi));
            }
            out = next;
        }
        out
    }

    /// Trapezoid integral of a field over the whole grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        integrate_weighted(&self.cell_weights(), values)
    }

    /// Coordinates of a cell.
    pub fn coords(&self, linear: usize) -> [f64; MAX_ARITY] {
        let m = self.to_multi(linear);
        let mut x = [0.0; MAX_ARITY];
        for k in 0..self.arity {
            x[k] = self.axis.node(m[k]);
        }
        x
    }
}

/// `Σ wᵢ vᵢ` with compensated summation in index order.
pub fn integrate_weighted(weights: &[f64], values: &[f64]) -> f64 {
    let mut s = KahanSum::default();
    for (w, v) in weights.iter().zip(values) {
        s.add(w * v);
    }
    s.value()
}

/// Second-order finite difference of a field along one axis.
///
/// Central differences in the interior, one-sided three-point stencils on the
/// two boundary planes.
pub fn central_gradient(grid: &TensorGrid, values: &[f64], axis: usize) -> Result<Vec<f64>> {
    grid.check_axis(axis)?;
    grid.check_len(values.len())?;
    let n = grid.points();
    if n < 3 {
        return Err(Error::InvalidAxis("finite differences need at least three points"));
    }
    let inv2h = 0.5 / grid.axis().spacing();
    let stride = grid.stride(axis);
    let mut out = vec![0.0; values.len()];
    for p in 0..grid.pencil_count() {
        let s = grid.pencil_start(axis, p);
        let at = |i: usize| values[s + i * stride];
        out[s] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
        for i in 1..n - 1 {
            out[s + i * stride] = (at(i + 1) - at(i - 1)) * inv2h;
        }
        out[s + (n - 1) * stride] = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
    }
    Ok(out)
}

/// `log(max(v, floor))` elementwise.
pub fn floored_log(values: &[f64], floor: f64) -> Vec<f64> {
    values.iter().map(|&v| math::ln(if v > floor { v } else { floor })).collect()
}

/// Gradient of `log(max(density, floor))` along every axis.
pub fn log_gradient(grid: &TensorGrid, density: &[f64], floor: f64) -> Result<Vec<Vec<f64>>> {
    grid.check_len(density.len())?;
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter("log floor must be positive"));
    }
    let logs = floored_log(density, floor);
    (0..grid.arity()).map(|a| central_gradient(grid, &logs, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_three_points() {
        let axis = Axis::new(-1.0, 1.0, 3).unwrap();
        assert_eq!(trapezoid_weights(&axis), vec![0.5, 1.0, 0.5]);
    }

    #[test]
    fn constant_integrand_is_exact() {
        for points in [2, 9, 64, 257] {
            let axis = Axis::symmetric(4.0, points).unwrap();
            let ones = vec![1.0; points];
            assert!((integrate_1d(&axis, &ones) - 8.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_second_moment() {
        let axis = Axis::symmetric(8.0, 257).unwrap();
        let f: Vec<f64> = axis
            .nodes()
            .iter()
            .map(|&x| x * x * (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt())
            .collect();
        assert!((integrate_1d(&axis, &f) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_asymmetric_or_degenerate_axes() {
        assert!(Axis::new(-1.0, 2.0, 10).is_err());
        assert!(Axis::new(1.0, -1.0, 10).is_err());
        assert!(Axis::new(-1.0, 1.0, 1).is_err());
    }

    #[test]
    fn affine_gradient_is_exact() {
        let axis = Axis::symmetric(4.0, 17).unwrap();
        let grid = TensorGrid::new(axis, 1).unwrap();
        let g = central_gradient(&grid, &axis.nodes(), 0).unwrap();
        assert!(g.iter().all(|&d| (d - 1.0).abs() < 1e-13));
    }

    #[test]
    fn quadratic_central_difference() {
        let axis = Axis::symmetric(2.0, 41).unwrap();
        let grid = TensorGrid::new(axis, 1).unwrap();
        let f: Vec<f64> = axis.nodes().iter().map(|x| x * x).collect();
        let g = central_gradient(&grid, &f, 0).unwrap();
        assert!((axis.node(30) - 1.0).abs() < 1e-14);
        assert!((g[30] - 2.0).abs() < 1e-12);
        // one-sided stencils are exact for quadratics too
        assert!((g[0] + 4.0).abs() < 1e-12);
        assert!((g[40] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sine_gradient_at_origin() {
        let axis = Axis::symmetric(1.0, 41).unwrap();
        let h = axis.spacing();
        assert!((h - 0.05).abs() < 1e-15);
        let grid = TensorGrid::new(axis, 1).unwrap();
        let f: Vec<f64> = axis.nodes().iter().map(|x| x.sin()).collect();
        let g = central_gradient(&grid, &f, 0).unwrap();
        assert!((g[20] - 1.0).abs() < h * h);
    }

    #[test]
    fn gradient_axis_out_of_range() {
        let grid = TensorGrid::new(Axis::symmetric(1.0, 8).unwrap(), 2).unwrap();
        let f = vec![0.0; grid.len()];
        assert!(matches!(central_gradient(&grid, &f, 2), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn log_gradient_of_gaussian() {
        let axis = Axis::symmetric(6.0, 385).unwrap();
        assert!((axis.spacing() - 1.0 / 32.0).abs() < 1e-15);
        let grid = TensorGrid::new(axis, 1).unwrap();
        let f: Vec<f64> = axis.nodes().iter().map(|x| (-0.5 * x * x).exp()).collect();
        let g = log_gradient(&grid, &f, LOG_FLOOR).unwrap();
        for (i, x) in axis.nodes().iter().enumerate() {
            assert!((g[0][i] + x).abs() < 1e-6);
        }
    }

    #[test]
    fn log_gradient_of_constant_and_zero_region() {
        let axis = Axis::symmetric(1.0, 16).unwrap();
        let grid = TensorGrid::new(axis, 2).unwrap();
        let c = vec![0.3; grid.len()];
        let g = log_gradient(&grid, &c, LOG_FLOOR).unwrap();
        assert!(g.iter().flatten().all(|&d| d.abs() < 1e-12));

        let mut z = vec![1.0; grid.len()];
        for v in z.iter_mut().take(grid.len() / 2) {
            *v = 0.0;
        }
        let g = log_gradient(&grid, &z, LOG_FLOOR).unwrap();
        assert!(g.iter().flatten().all(|d| d.is_finite()));
    }

    #[test]
    fn pencils_cover_every_cell_once() {
        let grid = TensorGrid::new(Axis::symmetric(1.0, 5).unwrap(), 3).unwrap();
        for axis in 0..3 {
            let mut hits = vec![0u8; grid.len()];
            for p in 0..grid.pencil_count() {
                let s = grid.pencil_start(axis, p);
                for i in 0..grid.points() {
                    hits[s + i * grid.stride(axis)] += 1;
                }
            }
            assert!(hits.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |points: usize| {
            let axis = Axis::symmetric(2.0, points).unwrap();
            let grid = TensorGrid::new(axis, 1).unwrap();
            let f: Vec<f64> = axis.nodes().iter().map(|x| (1.3 * x).sin()).collect();
            let g = central_gradient(&grid, &f, 0).unwrap();
            axis.nodes()
                .iter()
                .zip(&g)
                .map(|(x, d)| (d - 1.3 * (1.3 * x).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_index_round_trip(points in 2usize..12, arity in 1usize..=4, seed in 0usize..100_000) {
                let grid = TensorGrid::new(Axis::symmetric(1.0, points).unwrap(), arity).unwrap();
                let lin = seed % grid.len();
                let m = grid.to_multi(lin);
                prop_assert_eq!(grid.to_linear(&m[..arity]), lin);
                prop_assert!(m[..arity].iter().all(|&i| i < points));
            }

            #[test]
            fn affine_quadrature_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, points in 2usize..200) {
                let axis = Axis::symmetric(3.0, points).unwrap();
                let f: Vec<f64> = axis.nodes().iter().map(|x| a + b * x).collect();
                prop_assert!((integrate_1d(&axis, &f) - 6.0 * a).abs() < 1e-12 * (1.0 + a.abs() + b.abs()));
            }
        }
    }
}
