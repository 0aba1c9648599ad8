//! Discretised densities on the rooted star and the conditional drift `γ`.
//!
//! A [`JointDensity`] lives on `axis^(1+κ)` with the root on axis 0 and the
//! leaves on axes `1..=κ`. Its edge marginal is the `(0, 1)` marginal.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{integrate_weighted, trapezoid_weights, Axis, TensorGrid, LOG_FLOOR};
use crate::math;
use crate::potentials::PotentialPair;

/// Edge density below which `γ` falls back to `∇U(x)`.
pub const GAMMA_FLOOR: f64 = 1e-14;

fn check_values(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidDensity);
    }
    Ok(())
}

fn normalise(grid: &TensorGrid, values: &mut [f64]) -> Result<()> {
    let mass = grid.integrate(values);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let inv = 1.0 / mass;
    values.iter_mut().for_each(|v| *v *= inv);
    Ok(())
}

/// `∫ v log v` with the convention `0 log 0 = 0` (cells at or below the log floor are skipped).
pub fn entropy_on(grid: &TensorGrid, values: &[f64]) -> f64 {
    let w = grid.cell_weights();
    let terms: Vec<f64> = values
        .iter()
        .map(|&v| if v > LOG_FLOOR { v * math::ln(v) } else { 0.0 })
        .collect();
    integrate_weighted(&w, &terms)
}

fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    math::exp(-0.5 * d * d / var) / math::sqrt(2.0 * core::f64::consts::PI * var)
}

/// Every permutation of the leaf axes `1..=κ`, as a map `new axis k ← old axis perm[k]`.
fn leaf_permutations(kappa: usize) -> &'static [[usize; 4]] {
    const TWO: [[usize; 4]; 2] = [[0, 1, 2, 0], [0, 2, 1, 0]];
    const THREE: [[usize; 4]; 6] = [
        [0, 1, 2, 3],
        [0, 1, 3, 2],
        [0, 2, 1, 3],
        [0, 2, 3, 1],
        [0, 3, 1, 2],
        [0, 3, 2, 1],
    ];
    if kappa == 2 {
        &TWO
    } else {
        &THREE
    }
}

/// One-dimensional density on an axis (the root marginal `ν₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct RootDensity {
    axis: Axis,
    values: Vec<f64>,
}

impl RootDensity {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis.points() {
            return Err(Error::ShapeMismatch { expected: axis.points(), got: values.len() });
        }
        check_values(&values)?;
        Ok(Self { axis, values })
    }

    pub fn from_fn(axis: Axis, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = axis.nodes().into_iter().map(f).collect();
        Self::new(axis, values)?.normalized()
    }

    pub fn uniform(axis: Axis) -> Self {
        let v = 1.0 / (axis.upper() - axis.lower());
        Self { axis, values: vec![v; axis.points()] }
    }

    pub fn normalized(mut self) -> Result<Self> {
        let grid = TensorGrid::new(self.axis, 1)?;
        normalise(&grid, &mut self.values)?;
        Ok(self)
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let w = trapezoid_weights(&self.axis);
        let terms: Vec<f64> = self.axis.nodes().iter().zip(&self.values).map(|(&x, &v)| f(x) * v).collect();
        integrate_weighted(&w, &terms)
    }

    pub fn mass(&self) -> f64 {
        self.moment(|_| 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m) * (x - m)) / self.mass()
    }

    pub fn entropy(&self) -> f64 {
        let grid = TensorGrid::new(self.axis, 1).expect("arity 1 is valid");
        entropy_on(&grid, &self.values)
    }
}

/// Two-variable density `ν̄(x, y)` with `x` on axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDensity {
    grid: TensorGrid,
    values: Vec<f64>,
}

impl EdgeDensity {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        let grid = TensorGrid::new(axis, 2)?;
        grid.check_len(values.len())?;
        check_values(&values)?;
        Ok(Self { grid, values })
    }

    pub fn from_fn(axis: Axis, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let nodes = axis.nodes();
        let values = nodes.iter().flat_map(|&x| nodes.iter().map(move |&y| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(axis, values)?.normalized()
    }

    pub fn normalized(mut self) -> Result<Self> {
        normalise(&self.grid, &mut self.values)?;
        Ok(self)
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn axis(&self) -> &Axis {
        self.grid.axis()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.points() + j]
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn transpose(&self) -> Self {
        let n = self.grid.points();
        let mut t = vec![0.0; self.values.len()];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = self.values[i * n + j];
            }
        }
        Self { grid: self.grid, values: t }
    }

    /// `(ν̄ + ν̄ᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        let t = self.transpose();
        let values = self.values.iter().zip(&t.values).map(|(a, b)| 0.5 * (a + b)).collect();
        Self { grid: self.grid, values }
    }

    /// `max |ν̄(x, y) − ν̄(y, x)|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.points();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max(math::abs(self.values[i * n + j] - self.values[j * n + i]));
            }
        }
        d
    }

    /// Marginal of the first coordinate.
    pub fn first_marginal(&self) -> RootDensity {
        let n = self.grid.points();
        let w = trapezoid_weights(self.grid.axis());
        let values = (0..n).map(|i| integrate_weighted(&w, &self.values[i * n..(i + 1) * n])).collect();
        RootDensity { axis: *self.grid.axis(), values }
    }

    pub fn entropy(&self) -> f64 {
        entropy_on(&self.grid, &self.values)
    }
}

/// Density on `axis^(1+κ)`: the state of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDensity {
    grid: TensorGrid,
    kappa: usize,
    values: Vec<f64>,
}

impl JointDensity {
    /// Wraps non-negative values without normalising them.
    pub fn new(axis: Axis, kappa: usize, values: Vec<f64>) -> Result<Self> {
        if !(kappa == 2 || kappa == 3) {
            return Err(Error::UnsupportedKappa(kappa));
        }
        let grid = TensorGrid::new(axis, kappa + 1)?;
        grid.check_len(values.len())?;
        check_values(&values)?;
        Ok(Self { grid, kappa, values })
    }

    /// Samples `f` at every node and normalises.
    pub fn from_fn(axis: Axis, kappa: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = TensorGrid::new(axis, kappa + 1)?;
        let values = (0..grid.len()).map(|l| f(&grid.coords(l)[..kappa + 1])).collect();
        Self::new(axis, kappa, values)?.normalized()
    }

    /// `N(mean, var)^{⊗(1+κ)}`.
    pub fn gaussian_product(axis: Axis, kappa: usize, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidParameter("variance must be positive"));
        }
        let p: Vec<f64> = axis.nodes().iter().map(|&x| gaussian_pdf(x, mean, var)).collect();
        Self::from_index_fn(axis, kappa, |m| m.iter().map(|&i| p[i]).product())
    }

    /// `½N(m, var)^{⊗(1+κ)} + ½N(−m, var)^{⊗(1+κ)}`.
    pub fn gaussian_mixture(axis: Axis, kappa: usize, m: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidParameter("variance must be positive"));
        }
        let p: Vec<f64> = axis.nodes().iter().map(|&x| gaussian_pdf(x, m, var)).collect();
        let q: Vec<f64> = axis.nodes().iter().map(|&x| gaussian_pdf(x, -m, var)).collect();
        Self::from_index_fn(axis, kappa, |idx| {
            0.5 * idx.iter().map(|&i| p[i]).product::<f64>() + 0.5 * idx.iter().map(|&i| q[i]).product::<f64>()
        })?
        .symmetrize()
    }

    fn from_index_fn(axis: Axis, kappa: usize, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let grid = TensorGrid::new(axis, kappa + 1)?;
        let values = (0..grid.len()).map(|l| f(&grid.to_multi(l)[..kappa + 1])).collect();
        Self::new(axis, kappa, values)?.normalized()
    }

    pub fn normalized(mut self) -> Result<Self> {
        normalise(&self.grid, &mut self.values)?;
        Ok(self)
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn axis(&self) -> &Axis {
        self.grid.axis()
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn permuted(&self, perm: &[usize; 4]) -> Vec<f64> {
        // the permutation only touches the leaf block, so map one block and reuse it per root slab
        let leaves = TensorGrid::new(*self.grid.axis(), self.kappa).expect("valid arity");
        let map: Vec<usize> = (0..leaves.len())
            .map(|l| {
                let m = leaves.to_multi(l);
                let mut t = [0usize; 4];
                for k in 0..self.kappa {
                    t[k] = m[perm[k + 1] - 1];
                }
                leaves.to_linear(&t[..self.kappa])
            })
            .collect();
        let mut out = vec![0.0; self.values.len()];
        for (src, dst) in self.values.chunks_exact(map.len()).zip(out.chunks_exact_mut(map.len())) {
            for (l, &v) in src.iter().enumerate() {
                dst[map[l]] = v;
            }
        }
        out
    }

    /// Average over all leaf permutations, then renormalise.
    pub fn symmetrize(&self) -> Result<Self> {
        let perms = leaf_permutations(self.kappa);
        let mut acc = vec![0.0; self.values.len()];
        for p in perms {
            for (a, v) in acc.iter_mut().zip(self.permuted(p)) {
                *a += v;
            }
        }
        let inv = 1.0 / perms.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Self { grid: self.grid, kappa: self.kappa, values: acc }.normalized()
    }

    /// Projection onto the discrete symmetric set: leaf averaging followed by
    /// iterative proportional fitting of every root–leaf marginal to the
    /// swap-symmetrised edge marginal.
    ///
    /// A sweep multiplies by `Π_v r(x₀, x_v)^ω` with `r = target/edge`. To first
    /// order the off-root error then contracts by `1 − ω(1 + (κ−1)λ)` where
    /// `λ ∈ [0, 1]` is a leaf–leaf correlation eigenvalue; `ω = 2/(κ+1)` bounds
    /// that by `(κ−1)/(κ+1)`. A root-only factor keeps the root marginal
    /// correction exact.
    pub fn project_symmetric(&self) -> Result<Self> {
        const MAX_SWEEPS: usize = 1000;
        let mut s = self.symmetrize()?;
        let target = s.edge_marginal().symmetrized();
        let target_root = target.first_marginal();
        let n = self.grid.points();
        let k = self.kappa as f64;
        let omega = 2.0 / (k + 1.0);
        let root_exponent = (1.0 - omega * k) / k;
        let scale = target.values.iter().copied().fold(0.0, f64::max);
        for _ in 0..MAX_SWEEPS {
            let edge = s.edge_marginal();
            let gap = edge.values.iter().zip(&target.values).map(|(a, b)| math::abs(a - b)).fold(0.0, f64::max);
            if gap <= 1e-13 * scale {
                break;
            }
            let root = edge.first_marginal();
            let mut factor = vec![1.0; n * n];
            for i in 0..n {
                let (rc, rt) = (root.values[i], target_root.values[i]);
                let root_factor = if rc > 0.0 && rt > 0.0 { math::powf(rt / rc, root_exponent) } else { 1.0 };
                for j in 0..n {
                    let (e, t) = (edge.values[i * n + j], target.values[i * n + j]);
                    if e > 0.0 {
                        factor[i * n + j] = math::powf(t / e, omega) * root_factor;
                    }
                }
            }
            s.scale_by_leaf_factors(&factor);
        }
        s.symmetrize()
    }

    /// `ν(x) ← ν(x) · Π_v f(x₀, x_v)` for a factor on the grid square.
    fn scale_by_leaf_factors(&mut self, factor: &[f64]) {
        let n = self.grid.points();
        let slab = n.pow(self.kappa as u32);
        for (i, chunk) in self.values.chunks_exact_mut(slab).enumerate() {
            let f = &factor[i * n..(i + 1) * n];
            match self.kappa {
                2 => {
                    for (j, row) in chunk.chunks_exact_mut(n).enumerate() {
                        for (v, &fk) in row.iter_mut().zip(f) {
                            *v *= f[j] * fk;
                        }
                    }
                }
                _ => {
                    for (j, plane) in chunk.chunks_exact_mut(n * n).enumerate() {
                        for (k, row) in plane.chunks_exact_mut(n).enumerate() {
                            let fjk = f[j] * f[k];
                            for (v, &fl) in row.iter_mut().zip(f) {
                                *v *= fjk * fl;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `max_σ max |ν − ν∘σ|` over leaf permutations.
    pub fn leaf_exchange_defect(&self) -> f64 {
        leaf_permutations(self.kappa)
            .iter()
            .skip(1)
            .map(|p| {
                self.permuted(p).iter().zip(&self.values).map(|(a, b)| math::abs(a - b)).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Marginal of the root and the first leaf.
    pub fn edge_marginal(&self) -> EdgeDensity {
        let n = self.grid.points();
        let inner = n.pow((self.kappa - 1) as u32);
        let w_inner = TensorGrid::new(*self.grid.axis(), self.kappa - 1).expect("valid arity").cell_weights();
        let values = self.values.chunks_exact(inner).map(|c| integrate_weighted(&w_inner, c)).collect();
        EdgeDensity { grid: TensorGrid::new(*self.grid.axis(), 2).expect("valid arity"), values }
    }

    pub fn root_marginal(&self) -> RootDensity {
        let n = self.grid.points();
        let inner = n.pow(self.kappa as u32);
        let w_inner = TensorGrid::new(*self.grid.axis(), self.kappa).expect("valid arity").cell_weights();
        let values = self.values.chunks_exact(inner).map(|c| integrate_weighted(&w_inner, c)).collect();
        RootDensity { axis: *self.grid.axis(), values }
    }

    pub fn entropy(&self) -> f64 {
        entropy_on(&self.grid, &self.values)
    }

    /// `∫ |x|² dν` summed over all `1+κ` coordinates.
    pub fn second_moment(&self) -> f64 {
        let nodes = self.grid.axis().nodes();
        let w = self.grid.cell_weights();
        let terms: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(l, &v)| {
                let m = self.grid.to_multi(l);
                v * m[..self.grid.arity()].iter().map(|&i| nodes[i] * nodes[i]).sum::<f64>()
            })
            .collect();
        integrate_weighted(&w, &terms)
    }

    pub fn admissibility_check(&self) -> AdmissibilityReport {
        AdmissibilityReport {
            mass_defect: math::abs(self.mass() - 1.0),
            entropy: self.entropy(),
            second_moment: self.second_moment(),
            min_value: self.min_value(),
            leaf_exchange_defect: self.leaf_exchange_defect(),
            edge_symmetry_defect: self.edge_marginal().symmetry_defect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityReport {
    pub mass_defect: f64,
    pub entropy: f64,
    pub second_moment: f64,
    pub min_value: f64,
    pub leaf_exchange_defect: f64,
    pub edge_symmetry_defect: f64,
}

impl AdmissibilityReport {
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.leaf_exchange_defect <= tol && self.edge_symmetry_defect <= tol
    }

    pub fn is_admissible(&self) -> bool {
        self.mass_defect < 1e-10 && self.entropy.is_finite() && self.second_moment.is_finite() && self.min_value >= 0.0
    }
}

/// Total variation `½ ∫ |a − b|` of two densities on the same grid.
pub fn tv_distance(a: &JointDensity, b: &JointDensity) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::ShapeMismatch { expected: a.grid.len(), got: b.grid.len() });
    }
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| math::abs(x - y)).collect();
    Ok(0.5 * a.grid.integrate(&diff))
}

/// `γ(x, y) = E[b(X) | X₀ = x, X₁ = y]` on the grid square, `x` on axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaField {
    grid: TensorGrid,
    values: Vec<f64>,
}

impl GammaField {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        let grid = TensorGrid::new(axis, 2)?;
        grid.check_len(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("gamma must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn axis(&self) -> &Axis {
        self.grid.axis()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.points() + j]
    }

    /// `γ(x, y) − ∇U(x) − ∇W(x − y)`: the part carried by the other leaves.
    pub fn interaction_residual(&self, pair: &PotentialPair) -> Vec<f64> {
        let nodes = self.grid.axis().nodes();
        let n = nodes.len();
        self.values
            .iter()
            .enumerate()
            .map(|(l, &g)| {
                let (x, y) = (nodes[l / n], nodes[l % n]);
                g - pair.du(x) - pair.dw(x - y)
            })
            .collect()
    }
}

/// Conditional drift of a leaf-exchangeable density.
///
/// The sum over the other `κ − 1` leaves collapses to `κ − 1` copies of the
/// axis-2 term, which is exact only for symmetrised input.
pub fn gamma_field(pair: &PotentialPair, density: &JointDensity, floor: f64) -> Result<GammaField> {
    if pair.kappa() != density.kappa {
        return Err(Error::InvalidParameter("pair and density disagree on kappa"));
    }
    let kappa = density.kappa;
    let axis = *density.axis();
    let nodes = axis.nodes();
    let n = nodes.len();
    let inner = n.pow((kappa - 1) as u32);
    let z_stride = n.pow((kappa - 2) as u32);
    let w_inner = TensorGrid::new(axis, kappa - 1)?.cell_weights();
    let mut values = vec![0.0; n * n];
    for (cell, chunk) in density.values.chunks_exact(inner).enumerate() {
        let (i, j) = (cell / n, cell % n);
        let x = nodes[i];
        let mut edge = crate::math::KahanSum::default();
        let mut num = crate::math::KahanSum::default();
        for (k, (&v, &w)) in chunk.iter().zip(&w_inner).enumerate() {
            let wv = w * v;
            edge.add(wv);
            num.add(wv * pair.dw(x - nodes[k / z_stride]));
        }
        let edge = edge.value();
        values[cell] = if edge >= floor {
            pair.du(x) + pair.dw(x - nodes[j]) + (kappa - 1) as f64 * num.value() / edge
        } else {
            pair.du(x)
        };
    }
    GammaField::new(axis, values)
}
