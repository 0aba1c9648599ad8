//! Gibbs chain machinery for κ = 2.
//!
//! The chain of length `2n + 1` has pair energy `Q(x, y) = U(x) + U(y) + 2W(x − y)`
//! on each of its `2n` edges and Gibbs density `θⁿ ∝ ∏ e^{−Q/2}`. Its
//! partition function is a power of the quadrature-weighted transfer kernel,
//! and `H₂* = −log λ_max` of that kernel is the limit of `−log Zⁿ/(2n+1)`.
//!
//! The lift `ψⁿ_ν` of a triple law `ν` glues `2n − 1` sliding triples along
//! the `2n − 2` interior pairs:
//! `ψ = ∏_{s=−n+1}^{n−1} ν(x_{s−1}, x_s, x_{s+1}) / ∏_{s=−n+1}^{n−2} ν̄(x_s, x_{s+1})`,
//! with the triple `(a, b, c)` read as root `b` and leaves `a`, `c`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::functionals::h_kappa;
use crate::grid::{central_gradient, floored_log, trapezoid_weights, Axis, TensorGrid, LOG_FLOOR};
use crate::math::{self, KahanSum};
use crate::measures::JointDensity;
use crate::par;
use crate::potentials::{PotentialFamily, PotentialPair};

/// Default cap on the number of cells a brute-force quadrature may visit.
pub const BRUTE_FORCE_BUDGET: u128 = 1 << 31;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

fn require_two(pair: &PotentialPair) -> Result<()> {
    if pair.kappa() != 2 {
        return Err(Error::RequiresKappaTwo(pair.kappa()));
    }
    Ok(())
}

/// `K̃ = diag(√w) e^{−Q/2} diag(√w)` on an axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperator {
    axis: Axis,
    kernel: Vec<f64>,
    sqrt_w: Vec<f64>,
}

impl TransferOperator {
    pub fn new(pair: &PotentialPair, axis: Axis) -> Result<Self> {
        require_two(pair)?;
        let nodes = axis.nodes();
        let n = nodes.len();
        let sqrt_w: Vec<f64> = trapezoid_weights(&axis).into_iter().map(math::sqrt).collect();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                kernel[i * n + j] = sqrt_w[i] * math::exp(-0.5 * pair.q_unchecked(nodes[i], nodes[j])) * sqrt_w[j];
            }
        }
        if kernel.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::PartitionOverflow);
        }
        Ok(Self { axis, kernel, sqrt_w })
    }

    /// The same operator with its kernel multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter("kernel scale must be positive"));
        }
        let mut out = self.clone();
        out.kernel.iter_mut().for_each(|k| *k *= c);
        Ok(out)
    }

    pub fn axis(&self) -> &Axis {
        &self.axis
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        par::map_range(n, |i| {
            let row = &self.kernel[i * n..(i + 1) * n];
            let mut s = KahanSum::default();
            for (k, x) in row.iter().zip(v) {
                s.add(k * x);
            }
            s.value()
        })
    }

    /// `log Zⁿ = log(√wᵀ K̃^{2n} √w)`, rescaling after every product.
    pub fn log_partition(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidParameter("chain half-length must be at least 1"));
        }
        let mut v = self.sqrt_w.clone();
        let mut log_scale = 0.0;
        for _ in 0..2 * n {
            v = self.apply(&v);
            let s = v.iter().copied().fold(0.0, f64::max);
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::PartitionOverflow);
            }
            v.iter_mut().for_each(|x| *x /= s);
            log_scale += math::ln(s);
        }
        let dot: f64 = v.iter().zip(&self.sqrt_w).map(|(a, b)| a * b).sum();
        let out = log_scale + math::ln(dot);
        if !out.is_finite() {
            return Err(Error::PartitionOverflow);
        }
        Ok(out)
    }

    /// Largest eigenvalue by power iteration on the symmetric kernel.
    pub fn lambda_max(&self) -> Result<f64> {
        let n = self.sqrt_w.len();
        let mut v = vec![1.0 / math::sqrt(n as f64); n];
        let mut lambda = 0.0;
        for it in 0..POWER_MAX_ITER {
            let kv = self.apply(&v);
            let next: f64 = kv.iter().zip(&v).map(|(a, b)| a * b).sum();
            let norm = math::sqrt(kv.iter().map(|x| x * x).sum());
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::PartitionOverflow);
            }
            v = kv.into_iter().map(|x| x / norm).collect();
            if it > 0 && math::abs(next - lambda) <= POWER_TOL * next {
                return Ok(next);
            }
            lambda = next;
        }
        Err(Error::PowerIterationStagnation(POWER_MAX_ITER))
    }

    /// `H₂* = −log λ_max`.
    pub fn h_star(&self) -> Result<f64> {
        Ok(-math::ln(self.lambda_max()?))
    }
}

pub fn log_partition(pair: &PotentialPair, axis: Axis, n: usize) -> Result<f64> {
    TransferOperator::new(pair, axis)?.log_partition(n)
}

pub fn h_star_spectral(pair: &PotentialPair, axis: Axis) -> Result<f64> {
    TransferOperator::new(pair, axis)?.h_star()
}

/// Whole-line `log Zⁿ` for the quadratic family: a Gaussian integral with
/// tridiagonal Hessian, determinant by the three-term recurrence.
pub fn gaussian_log_partition(pair: &PotentialPair, n: usize) -> Result<f64> {
    require_two(pair)?;
    let PotentialFamily::Quadratic { alpha, beta } = pair.family() else {
        return Err(Error::InvalidParameter("the Gaussian oracle needs the quadratic family"));
    };
    if n == 0 {
        return Err(Error::InvalidParameter("chain half-length must be at least 1"));
    }
    let (u, w2) = (alpha + beta, -0.5 * beta);
    let sites = 2 * n + 1;
    let diag = |k: usize| if k == 0 || k == sites - 1 { 0.5 * u + w2 } else { u + 2.0 * w2 };
    let off2 = w2 * w2;
    let mut log_det = 0.0;
    let mut ratio = 0.0;
    for k in 0..sites {
        ratio = if k == 0 { diag(0) } else { diag(k) - off2 / ratio };
        if !(ratio > 0.0) {
            return Err(Error::NotCoercive);
        }
        log_det += math::ln(ratio);
    }
    Ok(0.5 * sites as f64 * math::ln(2.0 * core::f64::consts::PI) - 0.5 * log_det)
}

fn check_budget(points: usize, sites: usize, budget: u128) -> Result<()> {
    let cells = (points as u128).checked_pow(sites as u32).unwrap_or(u128::MAX);
    if cells > budget {
        return Err(Error::MemoryBudget { cells, budget });
    }
    Ok(())
}

/// Streams `f(indices, weight)` over every cell of `axis^sites`, one task
/// per first index, partial sums combined in order.
fn brute_sum<const K: usize>(
    axis: &Axis,
    sites: usize,
    f: impl Fn(&[usize], f64) -> [f64; K] + Sync + Send,
) -> [f64; K] {
    let p = axis.points();
    let w = trapezoid_weights(axis);
    let parts = par::map_range(p, |first| {
        let mut idx = vec![0usize; sites];
        idx[0] = first;
        let mut acc = [KahanSum::default(); K];
        loop {
            let weight: f64 = idx.iter().map(|&i| w[i]).product();
            let vals = f(&idx, weight);
            for (a, v) in acc.iter_mut().zip(vals) {
                a.add(v);
            }
            let mut k = sites - 1;
            loop {
                if k == 0 {
                    return acc.map(|a| a.value());
                }
                idx[k] += 1;
                if idx[k] < p {
                    break;
                }
                idx[k] = 0;
                k -= 1;
            }
        }
    });
    let mut total = [KahanSum::default(); K];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            t.add(v);
        }
    }
    total.map(|t| t.value())
}

/// `log Zⁿ` by direct quadrature over all `2n + 1` sites.
pub fn brute_log_partition(pair: &PotentialPair, axis: Axis, n: usize, budget: u128) -> Result<f64> {
    require_two(pair)?;
    let sites = 2 * n + 1;
    check_budget(axis.points(), sites, budget)?;
    let nodes = axis.nodes();
    let p = nodes.len();
    let k: Vec<f64> =
        (0..p * p).map(|l| math::exp(-0.5 * pair.q_unchecked(nodes[l / p], nodes[l % p]))).collect();
    let [z] = brute_sum::<1>(&axis, sites, |idx, wt| [wt * idx.windows(2).map(|e| k[e[0] * p + e[1]]).product::<f64>()]);
    Ok(math::ln(z))
}

/// Triple law `ν(a, b, c)` and its overlap marginal, read off a κ = 2 density.
struct Lift<'a> {
    values: &'a [f64],
    /// `ν̄(a, b) = ∫ ν(a, b, c) dc`: leaf-1/root marginal, left argument first.
    pair: Vec<f64>,
    p: usize,
}

impl<'a> Lift<'a> {
    fn new(density: &'a JointDensity) -> Result<Self> {
        if density.kappa() != 2 {
            return Err(Error::RequiresKappaTwo(density.kappa()));
        }
        let p = density.axis().points();
        let w = trapezoid_weights(density.axis());
        let values = density.values();
        let mut pair = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                let mut s = KahanSum::default();
                for c in 0..p {
                    s.add(w[c] * values[(b * p + a) * p + c]);
                }
                pair[a * p + b] = s.value();
            }
        }
        Ok(Self { values, pair, p })
    }

    #[inline]
    fn triple(&self, a: usize, b: usize, c: usize) -> f64 {
        self.values[(b * self.p + a) * self.p + c]
    }

    /// `ψⁿ_ν` at a full index tuple of length `2n + 1`.
    fn psi(&self, idx: &[usize]) -> f64 {
        let mut num = 1.0;
        for t in idx.windows(3) {
            num *= self.triple(t[0], t[1], t[2]);
        }
        if num == 0.0 {
            return 0.0;
        }
        let mut den = 1.0;
        for e in idx[1..idx.len() - 1].windows(2) {
            den *= self.pair[e[0] * self.p + e[1]];
        }
        num / den
    }
}

/// `H(ψⁿ_ν | θⁿ) = log Zⁿ + (2n−1)∫ν log ν − (2n−2)∫ν̄ log ν̄ + 2n∫g dν`.
pub fn lift_entropy(pair: &PotentialPair, density: &JointDensity, n: usize) -> Result<f64> {
    let op = TransferOperator::new(pair, *density.axis())?;
    lift_entropy_with(pair, &op, density, n)
}

fn lift_entropy_with(pair: &PotentialPair, op: &TransferOperator, density: &JointDensity, n: usize) -> Result<f64> {
    require_two(pair)?;
    if n == 0 {
        return Err(Error::InvalidParameter("chain half-length must be at least 1"));
    }
    let log_z = op.log_partition(n)?;
    let joint = density.entropy();
    let edge = density.edge_marginal().entropy();
    let energy = h_kappa(pair, density)? - joint + edge;
    let n = n as f64;
    Ok(log_z + (2.0 * n - 1.0) * joint - (2.0 * n - 2.0) * edge + 2.0 * n * energy)
}

/// The same relative entropy by quadrature of `ψⁿ_ν log(ψⁿ_ν/θⁿ)` over every site.
pub fn lift_entropy_brute(pair: &PotentialPair, density: &JointDensity, n: usize, budget: u128) -> Result<f64> {
    require_two(pair)?;
    if n < 2 {
        return Err(Error::InvalidParameter("the lift needs n ≥ 2"));
    }
    let axis = *density.axis();
    check_budget(axis.points(), 2 * n + 1, budget)?;
    let log_z = log_partition(pair, axis, n)?;
    let lift = Lift::new(density)?;
    let nodes = axis.nodes();
    let p = nodes.len();
    let half_q: Vec<f64> = (0..p * p).map(|l| 0.5 * pair.q_unchecked(nodes[l / p], nodes[l % p])).collect();
    let [h] = brute_sum::<1>(&axis, 2 * n + 1, |idx, wt| {
        let psi = lift.psi(idx);
        if psi <= LOG_FLOOR {
            return [0.0];
        }
        let energy: f64 = idx.windows(2).map(|e| half_q[e[0] * p + e[1]]).sum();
        [wt * psi * (math::ln(psi) + energy + log_z)]
    });
    Ok(h)
}

/// `max_f |∫ f ψⁿ_ν − ∫ f dν|` over `f ∈ {1, x_v, x_v², x_{v−1}x_{v+1}}` at an interior vertex.
pub fn lift_marginal_check(density: &JointDensity, n: usize, v: isize, budget: u128) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("the lift needs n ≥ 2"));
    }
    if v.unsigned_abs() + 1 > n {
        return Err(Error::InvalidParameter("vertex must be interior"));
    }
    let axis = *density.axis();
    check_budget(axis.points(), 2 * n + 1, budget)?;
    let lift = Lift::new(density)?;
    let nodes = axis.nodes();
    let c = (n as isize + v) as usize;
    let got = brute_sum::<4>(&axis, 2 * n + 1, |idx, wt| {
        let m = wt * lift.psi(idx);
        let x = nodes[idx[c]];
        [m, m * x, m * x * x, m * nodes[idx[c - 1]] * nodes[idx[c + 1]]]
    });
    let grid = density.grid();
    let mut want = [KahanSum::default(); 4];
    for ((l, &val), &wl) in density.values().iter().enumerate().zip(&grid.cell_weights()) {
        let [root, left, right, _] = grid.coords(l);
        let m = wl * val;
        for (s, f) in want.iter_mut().zip([1.0, root, root * root, left * right]) {
            s.add(m * f);
        }
    }
    Ok(got.iter().zip(want).map(|(g, w)| math::abs(g - w.value())).fold(0.0, f64::max))
}

/// Interior-vertex Fisher contribution of the lift at `n = 2`, `v = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherVertex {
    /// `∫ (|Θ₁|² + |Θ₂|²) ψ`.
    pub contribution: f64,
    /// `∫ Θ₁ Θ₂ ψ`.
    pub cross: f64,
    pub theta1: f64,
    pub theta2: f64,
}

/// Splits `∇_{x₀} log(ψ²_ν/θ²)` into the root-drift part
/// `Θ₁ = b(x₋₁, x₀, x₁) + ∂_root log ν(x₋₁, x₀, x₁)` and the neighbour part
/// `Θ₂ = [∂_right log ν(x₋₂, x₋₁, x₀) − ∂₂ log ν̄(x₋₁, x₀)] + [∂_left log ν(x₀, x₁, x₂) − ∂₁ log ν̄(x₀, x₁)]`,
/// and integrates both against `ψ²_ν` on the density's own axis.
pub fn fisher_interior_vertex(pair: &PotentialPair, density: &JointDensity, budget: u128) -> Result<FisherVertex> {
    require_two(pair)?;
    let axis = *density.axis();
    check_budget(axis.points(), 5, budget)?;
    let lift = Lift::new(density)?;
    let grid = density.grid();
    let log_nu = floored_log(density.values(), LOG_FLOOR);
    // joint axes: 0 = root (centre), 1 = left leaf, 2 = right leaf
    let d_root = central_gradient(grid, &log_nu, 0)?;
    let d_left = central_gradient(grid, &log_nu, 1)?;
    let d_right = central_gradient(grid, &log_nu, 2)?;
    let pair_grid = TensorGrid::new(axis, 2)?;
    let log_pair = floored_log(&lift.pair, LOG_FLOOR);
    let d1_pair = central_gradient(&pair_grid, &log_pair, 0)?;
    let d2_pair = central_gradient(&pair_grid, &log_pair, 1)?;
    let nodes = axis.nodes();
    let p = nodes.len();
    let at = |a: usize, b: usize, c: usize| (b * p + a) * p + c;
    let [t1, t2, cross] = brute_sum::<3>(&axis, 5, |idx, wt| {
        let psi = lift.psi(idx);
        if psi <= LOG_FLOOR {
            return [0.0; 3];
        }
        let (xm2, xm1, x0, x1, x2) = (idx[0], idx[1], idx[2], idx[3], idx[4]);
        let b = pair.b(&[nodes[x0], nodes[xm1], nodes[x1]]);
        let theta1 = b + d_root[at(xm1, x0, x1)];
        let theta2 = d_right[at(xm2, xm1, x0)] - d2_pair[xm1 * p + x0] + d_left[at(x0, x1, x2)] - d1_pair[x0 * p + x1];
        let m = wt * psi;
        [m * theta1 * theta1, m * theta2 * theta2, m * theta1 * theta2]
    });
    Ok(FisherVertex { contribution: t1 + t2, cross, theta1: t1, theta2: t2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainReport {
    pub n: usize,
    pub log_z: f64,
    pub per_site_log_z: f64,
    pub h_star_spectral: f64,
    pub lift_entropy: f64,
    pub lift_entropy_per_site: f64,
}

/// One report per chain half-length, sharing a single transfer operator.
pub fn chain_report(pair: &PotentialPair, density: &JointDensity, n_list: &[usize]) -> Result<Vec<ChainReport>> {
    let op = TransferOperator::new(pair, *density.axis())?;
    let h_star = op.h_star()?;
    n_list
        .iter()
        .map(|&n| {
            let log_z = op.log_partition(n)?;
            let lift = lift_entropy_with(pair, &op, density, n)?;
            let sites = (2 * n + 1) as f64;
            Ok(ChainReport {
                n,
                log_z,
                per_site_log_z: log_z / sites,
                h_star_spectral: h_star,
                lift_entropy: lift,
                lift_entropy_per_site: lift / sites,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> PotentialPair {
        PotentialPair::quadratic(2.0, 1.5, 2).unwrap()
    }

    #[test]
    fn partition_matches_tridiagonal_oracle() {
        let axis = Axis::symmetric(7.0, 96).unwrap();
        for n in [1, 4] {
            let got = log_partition(&quad(), axis, n).unwrap();
            let want = gaussian_log_partition(&quad(), n).unwrap();
            assert!(((got - want) / want).abs() < 1e-6, "n={n}: {got} {want}");
        }
    }

    #[test]
    fn brute_force_agrees_at_n1() {
        let axis = Axis::symmetric(6.0, 40).unwrap();
        let a = log_partition(&quad(), axis, 1).unwrap();
        let b = brute_log_partition(&quad(), axis, 1, BRUTE_FORCE_BUDGET).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn decoupled_chain_factorises() {
        let p = PotentialPair::quadratic(2.0, 0.0, 2).unwrap();
        let axis = Axis::symmetric(8.0, 128).unwrap();
        let full = (2.0 * core::f64::consts::PI / 2.0).sqrt().ln();
        let half = (2.0 * core::f64::consts::PI / 1.0).sqrt().ln();
        let n = 3;
        let want = (2 * n - 1) as f64 * full + 2.0 * half;
        assert!((log_partition(&p, axis, n).unwrap() - want).abs() < 1e-10);
        assert!((h_star_spectral(&p, axis).unwrap() + full).abs() < 1e-10);
    }

    #[test]
    fn scaling_the_kernel_shifts_h_star() {
        let op = TransferOperator::new(&quad(), Axis::symmetric(6.0, 64).unwrap()).unwrap();
        let c = 0.37f64;
        let shift = op.scaled(c).unwrap().h_star().unwrap() - op.h_star().unwrap();
        assert!((shift + c.ln()).abs() < 1e-12, "{shift}");
    }

    #[test]
    fn requires_kappa_two() {
        let p = PotentialPair::quadratic(2.0, 1.5, 3).unwrap();
        assert_eq!(TransferOperator::new(&p, Axis::symmetric(6.0, 8).unwrap()).unwrap_err(), Error::RequiresKappaTwo(3));
    }

    #[test]
    fn budget_guard_trips() {
        let axis = Axis::symmetric(6.0, 24).unwrap();
        let nu = JointDensity::gaussian_product(axis, 2, 0.0, 1.0).unwrap();
        assert!(matches!(lift_marginal_check(&nu, 3, 0, 1000), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn lift_of_product_is_normalised() {
        let axis = Axis::symmetric(6.0, 16).unwrap();
        let nu = JointDensity::gaussian_product(axis, 2, 0.0, 1.0).unwrap();
        assert!(lift_marginal_check(&nu, 2, 0, BRUTE_FORCE_BUDGET).unwrap() < 1e-10);
    }
}
