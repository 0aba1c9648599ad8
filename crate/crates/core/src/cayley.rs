//! Stationary root marginals from the Cayley fixed-point equation
//!
//! `ν₀(x)^{1/κ} = Z⁻¹ e^{−U(x)/κ} ∫ e^{−W(x−y) − U(y)/κ} ν₀(y)^{(κ−1)/κ} dy`,
//!
//! solved by damped Picard iteration, plus assembly of the stationary edge
//! and joint laws and the identities they must satisfy.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::functionals::i_kappa;
use crate::grid::{central_gradient, trapezoid_weights, Axis, TensorGrid, LOG_FLOOR};
use crate::math;
use crate::measures::{gamma_field, EdgeDensity, JointDensity, RootDensity, GAMMA_FLOOR};
use crate::par;
use crate::potentials::{PotentialFamily, PotentialPair};

/// Densities below this are excluded from the residual checks.
pub const BULK_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CayleyConfig {
    /// Stop once both the L¹ and the L∞ norm of `T(ν₀) − ν₀` fall below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate in the convex update, in `(0, 1]`.
    pub damping: f64,
}

impl Default for CayleyConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000, damping: 0.5 }
    }
}

impl CayleyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter("tolerance must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter("damping must lie in (0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CayleySolution {
    pub nu0: RootDensity,
    pub z_nu0: f64,
    pub edge: EdgeDensity,
    pub joint: JointDensity,
    /// `‖T(ν₀) − ν₀‖∞` for the undamped map at exit.
    pub residual_linf: f64,
    pub iterations: usize,
}

/// The three stationarity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityReport {
    /// `‖∇log ν₀ + ∇U + κ E[∇W(Y₀ − Y₁) | Y₀ = x]‖∞` on the bulk.
    pub gradient_identity: f64,
    pub i_kappa: f64,
    /// `‖γ(x, y) + ∇ₓ log ν̄(x | y)‖∞` on the bulk of the edge.
    pub conditional_drift: f64,
}

impl StationarityReport {
    pub fn max(&self) -> f64 {
        self.gradient_identity.max(self.i_kappa).max(self.conditional_drift)
    }
}

/// Precomputed pieces of the integral operator.
struct Operator {
    /// `e^{−U(x)/κ}` at the nodes.
    root_factor: Vec<f64>,
    /// Row-major `w_j e^{−W(x_i − y_j) − U(y_j)/κ}`.
    kernel: Vec<f64>,
    weights: Vec<f64>,
    kappa: f64,
}

impl Operator {
    fn new(pair: &PotentialPair, axis: &Axis) -> Self {
        let nodes = axis.nodes();
        let n = nodes.len();
        let kappa = pair.kappa() as f64;
        let weights = trapezoid_weights(axis);
        let root_factor: Vec<f64> = nodes.iter().map(|&x| math::exp(-pair.u(x) / kappa)).collect();
        let rows = par::map_range(n, |i| {
            (0..n).map(|j| weights[j] * math::exp(-pair.w(nodes[i] - nodes[j])) * root_factor[j]).collect::<Vec<f64>>()
        });
        Self { root_factor, kernel: rows.concat(), weights, kappa }
    }

    /// `r = ν₀^{(κ−1)/κ}`.
    fn tilt(&self, nu0: &[f64]) -> Vec<f64> {
        let p = (self.kappa - 1.0) / self.kappa;
        nu0.iter().map(|&v| math::powf(v, p)).collect()
    }

    fn inner(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        par::map_range(n, |i| {
            let row = &self.kernel[i * n..(i + 1) * n];
            let mut s = math::KahanSum::default();
            for (k, x) in row.iter().zip(r) {
                s.add(k * x);
            }
            s.value()
        })
    }

    /// Undamped map, normalised to unit mass. Also returns `Z_{ν₀}`.
    fn apply(&self, nu0: &[f64], iteration: usize) -> Result<(Vec<f64>, f64)> {
        let r = self.tilt(nu0);
        let inner = self.inner(&r);
        let mut z = math::KahanSum::default();
        for i in 0..r.len() {
            z.add(self.weights[i] * self.root_factor[i] * r[i] * inner[i]);
        }
        let mut next: Vec<f64> = self
            .root_factor
            .iter()
            .zip(&inner)
            .map(|(a, b)| math::powf(a * b, self.kappa))
            .collect();
        let mass: f64 = next.iter().zip(&self.weights).map(|(v, w)| v * w).sum();
        if !(mass.is_finite() && mass > 0.0) || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonPositiveIterate(iteration));
        }
        next.iter_mut().for_each(|v| *v /= mass);
        Ok((next, z.value()))
    }
}

fn norms(a: &[f64], b: &[f64], weights: &[f64]) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut linf = 0.0f64;
    for ((x, y), w) in a.iter().zip(b).zip(weights) {
        let d = math::abs(x - y);
        l1 += w * d;
        linf = linf.max(d);
    }
    (l1, linf)
}

/// Damped Picard iteration from `init`.
pub fn solve_fixed_point(pair: &PotentialPair, init: &RootDensity, cfg: &CayleyConfig) -> Result<CayleySolution> {
    cfg.validate()?;
    let axis = *init.axis();
    if init.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("initial root density must be positive"));
    }
    let op = Operator::new(pair, &axis);
    let mut nu0 = init.clone().normalized()?.into_values();
    let mut last = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let (next, _) = op.apply(&nu0, it)?;
        let (l1, linf) = norms(&next, &nu0, &op.weights);
        last = l1;
        if l1 < cfg.tol && linf < cfg.tol {
            return assemble(pair, &op, RootDensity::new(axis, nu0)?, linf, it - 1);
        }
        let d = cfg.damping;
        for (v, n) in nu0.iter_mut().zip(&next) {
            *v = (1.0 - d) * *v + d * n;
        }
    }
    Err(Error::MaxIterExceeded { iterations: cfg.max_iter, last_change: last })
}

/// Builds edge and joint laws from any positive root density, without iterating.
///
/// For a non-fixed-point `ν₀` the result is still a valid joint law, but its
/// root marginal is the edge row sum rather than `ν₀` itself.
pub fn from_root(pair: &PotentialPair, nu0: RootDensity) -> Result<CayleySolution> {
    let axis = *nu0.axis();
    let op = Operator::new(pair, &axis);
    let nu0 = nu0.normalized()?;
    let (next, _) = op.apply(nu0.values(), 0)?;
    let (_, linf) = norms(&next, nu0.values(), &op.weights);
    assemble(pair, &op, nu0, linf, 0)
}

fn assemble(pair: &PotentialPair, op: &Operator, nu0: RootDensity, residual_linf: f64, iterations: usize) -> Result<CayleySolution> {
    let axis = *nu0.axis();
    let n = axis.points();
    let nodes = axis.nodes();
    let r = op.tilt(nu0.values());
    let inner = op.inner(&r);
    let z: f64 = (0..n).map(|i| op.weights[i] * op.root_factor[i] * r[i] * inner[i]).sum();
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::QuadratureDivergence);
    }
    let a: Vec<f64> = op.root_factor.iter().zip(&r).map(|(f, r)| f * r).collect();
    let mut edge = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            edge[i * n + j] = a[i] * a[j] * math::exp(-pair.w(nodes[i] - nodes[j])) / z;
        }
    }
    let edge = EdgeDensity::new(axis, edge)?;
    let joint = conditional_product(&nu0, &edge, pair.kappa(), &op.weights)?;
    Ok(CayleySolution { nu0, z_nu0: z, edge, joint, residual_linf, iterations })
}

/// `ν(x) = ν₀(x₀) ∏_v ν̄(x_v | x₀)` with the discrete row sums as conditioning mass.
fn conditional_product(nu0: &RootDensity, edge: &EdgeDensity, kappa: usize, weights: &[f64]) -> Result<JointDensity> {
    let axis = *nu0.axis();
    let n = axis.points();
    let grid = TensorGrid::new(axis, kappa + 1)?;
    let block = n.pow(kappa as u32);
    let mut values = vec![0.0; grid.len()];
    for (i, slab) in values.chunks_exact_mut(block).enumerate() {
        let row = &edge.values()[i * n..(i + 1) * n];
        let m: f64 = row.iter().zip(weights).map(|(v, w)| v * w).sum();
        if !(m > 0.0) {
            continue;
        }
        let cond: Vec<f64> = row.iter().map(|v| v / m).collect();
        let root = nu0.values()[i];
        for (l, out) in slab.iter_mut().enumerate() {
            let mut p = root;
            let mut rest = l;
            for _ in 0..kappa {
                p *= cond[rest % n];
                rest /= n;
            }
            *out = p;
        }
    }
    JointDensity::new(axis, kappa, values)
}

/// Gradient identity, Fisher information and conditional-drift identity.
pub fn stationarity_residuals(pair: &PotentialPair, sol: &CayleySolution) -> Result<StationarityReport> {
    let axis = *sol.nu0.axis();
    let n = axis.points();
    let nodes = axis.nodes();
    let weights = trapezoid_weights(&axis);
    let kappa = pair.kappa() as f64;
    let line = TensorGrid::new(axis, 1)?;

    let log_nu0: Vec<f64> = sol.nu0.values().iter().map(|&v| math::ln(v.max(LOG_FLOOR))).collect();
    let grad0 = central_gradient(&line, &log_nu0, 0)?;
    let mut gradient_identity = 0.0f64;
    for i in 0..n {
        if sol.nu0.values()[i] <= BULK_FLOOR {
            continue;
        }
        let row = &sol.edge.values()[i * n..(i + 1) * n];
        let (mut m, mut e) = (0.0, 0.0);
        for j in 0..n {
            m += weights[j] * row[j];
            e += weights[j] * row[j] * pair.dw(nodes[i] - nodes[j]);
        }
        let res = grad0[i] + pair.du(nodes[i]) + kappa * e / m;
        gradient_identity = gradient_identity.max(math::abs(res));
    }

    let fisher = i_kappa(pair, &sol.joint)?;

    let gamma = gamma_field(pair, &sol.joint, GAMMA_FLOOR)?;
    let log_edge: Vec<f64> = sol.edge.values().iter().map(|&v| math::ln(v.max(LOG_FLOOR))).collect();
    let grad_edge = central_gradient(sol.edge.grid(), &log_edge, 0)?;
    let mut conditional_drift = 0.0f64;
    for (l, &v) in sol.edge.values().iter().enumerate() {
        if v > BULK_FLOOR {
            conditional_drift = conditional_drift.max(math::abs(gamma.values()[l] + grad_edge[l]));
        }
    }
    Ok(StationarityReport { gradient_identity, i_kappa: fisher, conditional_drift })
}

/// `F = −(U + log ν₀)/κ` at the nodes, so that `ν₀ = e^{−U − κF}` exactly.
pub fn to_lacker_zhang(pair: &PotentialPair, sol: &CayleySolution) -> Vec<f64> {
    let kappa = pair.kappa() as f64;
    sol.nu0
        .axis()
        .nodes()
        .iter()
        .zip(sol.nu0.values())
        .map(|(&x, &v)| -(pair.u(x) + math::ln(v.max(LOG_FLOOR))) / kappa)
        .collect()
}

/// Root density `e^{−U − κF}/Z_F` from node values of `F`.
pub fn lacker_zhang_root(pair: &PotentialPair, axis: Axis, f: &[f64]) -> Result<RootDensity> {
    if f.len() != axis.points() {
        return Err(Error::ShapeMismatch { expected: axis.points(), got: f.len() });
    }
    let kappa = pair.kappa() as f64;
    let values: Vec<f64> = axis.nodes().iter().zip(f).map(|(&x, &fx)| math::exp(-pair.u(x) - kappa * fx)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::QuadratureDivergence);
    }
    RootDensity::new(axis, values)?.normalized().map_err(|_| Error::QuadratureDivergence)
}

/// Inverse of [`to_lacker_zhang`], followed by edge and joint assembly.
pub fn from_lacker_zhang(pair: &PotentialPair, axis: Axis, f: &[f64]) -> Result<CayleySolution> {
    from_root(pair, lacker_zhang_root(pair, axis, f)?)
}

/// Stationary root variance for the quadratic family on the whole line.
///
/// With `ν₀ = N(0, σ²)` the fixed-point map sends Gaussians to Gaussians,
/// `1/σ'² = κ(u/κ + w₂ − w₂²/A)` with `A = w₂ + u/κ + (κ−1)/(κσ²)`,
/// where `U = u x²/2` and `W = w₂ z²/2`. Iterated to a fixed point.
pub fn gaussian_oracle_variance(pair: &PotentialPair) -> Result<f64> {
    let PotentialFamily::Quadratic { alpha, beta } = pair.family() else {
        return Err(Error::InvalidParameter("the Gaussian oracle needs the quadratic family"));
    };
    if !(alpha > math::abs(beta)) {
        return Err(Error::NotCoercive);
    }
    let kappa = pair.kappa() as f64;
    let (u, w2) = (alpha + beta, -0.5 * beta);
    let mut var = 1.0f64;
    for _ in 0..100_000 {
        let a = w2 + u / kappa + (kappa - 1.0) / (kappa * var);
        let prec = kappa * (u / kappa + w2 - w2 * w2 / a);
        if !(prec > 0.0) {
            return Err(Error::NotCoercive);
        }
        let next = 1.0 / prec;
        if math::abs(next - var) <= 1e-15 * var {
            return Ok(next);
        }
        var = next;
    }
    Err(Error::MaxIterExceeded { iterations: 100_000, last_change: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> PotentialPair {
        PotentialPair::quadratic(2.0, 1.5, 2).unwrap()
    }

    #[test]
    fn oracle_variance_is_a_fixed_point() {
        let v = gaussian_oracle_variance(&quad()).unwrap();
        assert!((v - (4.0f64 / 7.0).sqrt()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn decoupled_oracle_is_boltzmann() {
        let p = PotentialPair::quadratic(2.0, 0.0, 3).unwrap();
        assert!((gaussian_oracle_variance(&p).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn decoupled_case_converges_immediately() {
        let p = PotentialPair::quadratic(2.0, 0.0, 2).unwrap();
        let axis = Axis::symmetric(6.0, 129).unwrap();
        let cfg = CayleyConfig { damping: 1.0, ..Default::default() };
        let sol = solve_fixed_point(&p, &RootDensity::uniform(axis), &cfg).unwrap();
        assert!(sol.iterations <= 3, "{}", sol.iterations);
        let exact = RootDensity::from_fn(axis, |x| (-p.u(x)).exp()).unwrap();
        let d = sol.nu0.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-13, "{d}");
    }

    #[test]
    fn quadratic_solution_matches_oracle() {
        let axis = Axis::symmetric(6.0, 129).unwrap();
        let sol = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
        let v = sol.nu0.variance();
        let oracle = gaussian_oracle_variance(&quad()).unwrap();
        assert!(((v - oracle) / oracle).abs() < 1e-3, "{v} {oracle}");
        assert!(sol.iterations < 200);
        assert!((sol.nu0.mass() - 1.0).abs() < 1e-12);
        assert!(sol.edge.symmetry_defect() < 1e-15);
        assert!((sol.edge.mass() - 1.0).abs() < 1e-12);
        assert!((sol.joint.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_root_marginal_is_nu0() {
        let axis = Axis::symmetric(6.0, 33).unwrap();
        let sol = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
        let root = sol.joint.root_marginal();
        let d = root.values().iter().zip(sol.nu0.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
        assert!(sol.joint.leaf_exchange_defect() < 1e-15);
    }

    #[test]
    fn lacker_zhang_round_trip_and_closed_forms() {
        let axis = Axis::symmetric(6.0, 65).unwrap();
        let sol = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
        let f = to_lacker_zhang(&quad(), &sol);
        let back = from_lacker_zhang(&quad(), axis, &f).unwrap();
        let d = back.nu0.values().iter().zip(sol.nu0.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");

        let p = PotentialPair::quadratic(2.0, 0.0, 2).unwrap();
        let zero = lacker_zhang_root(&p, axis, &vec![0.0; 65]).unwrap();
        let boltz = RootDensity::from_fn(axis, |x| (-p.u(x)).exp()).unwrap();
        let d = zero.values().iter().zip(boltz.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-14);
    }

    #[test]
    fn rejects_bad_config_and_nonpositive_init() {
        let axis = Axis::symmetric(6.0, 17).unwrap();
        let bad = CayleyConfig { damping: 0.0, ..Default::default() };
        assert!(solve_fixed_point(&quad(), &RootDensity::uniform(axis), &bad).is_err());
        let mut v = vec![1.0; 17];
        v[3] = 0.0;
        let init = RootDensity::new(axis, v).unwrap();
        assert!(solve_fixed_point(&quad(), &init, &CayleyConfig::default()).is_err());
    }

    #[test]
    fn max_iter_is_reported() {
        let axis = Axis::symmetric(6.0, 33).unwrap();
        let cfg = CayleyConfig { max_iter: 2, ..Default::default() };
        let err = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &cfg).unwrap_err();
        assert!(matches!(err, Error::MaxIterExceeded { iterations: 2, .. }));
    }
}
