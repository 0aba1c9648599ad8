//! Sparse free energy `H_κ`, modified Fisher information `I_κ`, the edge-only
//! functional `Ĥ₂`, and the discrete dissipation residual.
//!
//! Integrands are masked to cells where the density exceeds [`LOG_FLOOR`], so
//! tails contribute zero rather than floor noise.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{central_gradient, floored_log, trapezoid_weights, TensorGrid, LOG_FLOOR};
use crate::math::{self, KahanSum};
use crate::measures::{EdgeDensity, JointDensity};
use crate::par;
use crate::potentials::PotentialPair;

/// Largest swap defect tolerated by [`h_hat2`].
pub const EDGE_SYMMETRY_TOL: f64 = 1e-10;

/// One row of a flow ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalReport {
    pub t: f64,
    pub h_kappa: f64,
    pub i_kappa: f64,
    /// Only evaluated for κ = 2.
    pub h_hat2: Option<f64>,
    /// `−log R_q`, when the coercivity profile exists.
    pub lower_bound: Option<f64>,
    pub mass: f64,
    pub second_moment: f64,
}

/// Sums `f(cell, value)·weight` over every root slab, slabs combined in order.
fn slab_integral(nu: &JointDensity, f: impl Fn(usize, f64) -> f64 + Sync + Send) -> f64 {
    let grid = nu.grid();
    let n = grid.points();
    let slab = grid.len() / n;
    let w1 = trapezoid_weights(grid.axis());
    let inner = TensorGrid::new(*grid.axis(), grid.arity() - 1).expect("valid arity").cell_weights();
    let values = nu.values();
    let parts = par::map_range(n, |i0| {
        let mut s = KahanSum::default();
        for (k, &wk) in inner.iter().enumerate() {
            let l = i0 * slab + k;
            let v = values[l];
            if v > LOG_FLOOR {
                s.add(wk * f(l, v));
            }
        }
        w1[i0] * s.value()
    });
    let mut total = KahanSum::default();
    parts.into_iter().for_each(|p| total.add(p));
    total.value()
}

/// Second-order derivative of `field` along a strided pencil at position `i`.
#[inline]
fn stencil(field: &[f64], l: usize, i: usize, stride: usize, n: usize, inv2h: f64) -> f64 {
    let at = |k: usize| field[l - i * stride + k * stride];
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h
    } else if i == n - 1 {
        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h
    } else {
        (at(i + 1) - at(i - 1)) * inv2h
    }
}

fn check_kappa(pair: &PotentialPair, nu: &JointDensity) -> Result<()> {
    if pair.kappa() != nu.kappa() {
        return Err(Error::InvalidParameter("pair and density disagree on kappa"));
    }
    Ok(())
}

/// `H_κ(ν) = ∫ [log ν − (κ/2) log ν̄(x₀, x₁) + g(x)] ν(dx)`.
pub fn h_kappa(pair: &PotentialPair, nu: &JointDensity) -> Result<f64> {
    check_kappa(pair, nu)?;
    let grid = *nu.grid();
    let n = grid.points();
    let kappa = nu.kappa();
    let nodes = grid.axis().nodes();
    let log_edge = floored_log(nu.edge_marginal().values(), LOG_FLOOR);
    let half_k = 0.5 * kappa as f64;
    let inner = n.pow((kappa - 1) as u32);
    Ok(slab_integral(nu, |l, v| {
        let m = grid.to_multi(l);
        let mut x = [0.0; 4];
        for k in 0..=kappa {
            x[k] = nodes[m[k]];
        }
        v * (math::ln(v) - half_k * log_edge[l / inner] + pair.g(&x[..=kappa]))
    }))
}

/// `I_κ(ν) = ∫ [|b + ∂₀ log ν|² + κ |∂₁ log ν − ∂₁ log ν̄|²] ν(dx)`.
pub fn i_kappa(pair: &PotentialPair, nu: &JointDensity) -> Result<f64> {
    check_kappa(pair, nu)?;
    let grid = *nu.grid();
    let n = grid.points();
    if n < 3 {
        return Err(Error::InvalidAxis("finite differences need at least three points"));
    }
    let kappa = nu.kappa();
    let nodes = grid.axis().nodes();
    let inv2h = 0.5 / grid.axis().spacing();
    let logs = floored_log(nu.values(), LOG_FLOOR);
    let edge_grid = TensorGrid::new(*grid.axis(), 2)?;
    let d1_log_edge = central_gradient(&edge_grid, &floored_log(nu.edge_marginal().values(), LOG_FLOOR), 1)?;
    let (s0, s1) = (grid.stride(0), grid.stride(1));
    let inner = n.pow((kappa - 1) as u32);
    let k = kappa as f64;
    Ok(slab_integral(nu, |l, v| {
        let m = grid.to_multi(l);
        let mut x = [0.0; 4];
        for a in 0..=kappa {
            x[a] = nodes[m[a]];
        }
        let root = pair.b(&x[..=kappa]) + stencil(&logs, l, m[0], s0, n, inv2h);
        let leaf = stencil(&logs, l, m[1], s1, n, inv2h) - d1_log_edge[l / inner];
        v * (root * root + k * leaf * leaf)
    }))
}

/// `Ĥ₂(ν̄) = ∫ [U(x₀) + W(x₀ − x₁) + log ν̄(x₀, x₁) − log ν₀(x₀)] ν̄`.
pub fn h_hat2(pair: &PotentialPair, edge: &EdgeDensity) -> Result<f64> {
    if pair.kappa() != 2 {
        return Err(Error::RequiresKappaTwo(pair.kappa()));
    }
    let defect = edge.symmetry_defect();
    if defect > EDGE_SYMMETRY_TOL {
        return Err(Error::AsymmetricEdge(defect));
    }
    let n = edge.grid().points();
    let nodes = edge.axis().nodes();
    let log_root = floored_log(edge.first_marginal().values(), LOG_FLOOR);
    let w = edge.grid().cell_weights();
    let mut s = KahanSum::default();
    for (l, (&v, &wl)) in edge.values().iter().zip(&w).enumerate() {
        if v > LOG_FLOOR {
            let (i, j) = (l / n, l % n);
            let (x, y) = (nodes[i], nodes[j]);
            s.add(wl * v * (pair.u(x) + pair.w(x - y) + math::ln(v) - log_root[i]));
        }
    }
    Ok(s.value())
}

/// All functionals at one instant.
pub fn evaluate(pair: &PotentialPair, nu: &JointDensity, t: f64) -> Result<FunctionalReport> {
    let h_hat2 = if nu.kappa() == 2 { Some(h_hat2(pair, &nu.edge_marginal())?) } else { None };
    Ok(FunctionalReport {
        t,
        h_kappa: h_kappa(pair, nu)?,
        i_kappa: i_kappa(pair, nu)?,
        h_hat2,
        lower_bound: pair.coercivity_profile(nu.axis()).ok().map(|p| p.lower_bound()),
        mass: nu.mass(),
        second_moment: nu.second_moment(),
    })
}

/// `max_{s<t} |H(t) − H(s) + ∫ₛᵗ I| / max(1, ∫ₛᵗ I)` with trapezoid time integrals.
pub fn dissipation_residual(series: &[FunctionalReport]) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::SeriesTooShort { needed: 3, got: series.len() });
    }
    if series.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::UnsortedSeries);
    }
    let mut cumulative = Vec::with_capacity(series.len());
    let mut acc = KahanSum::default();
    cumulative.push(0.0);
    for w in series.windows(2) {
        acc.add(0.5 * (w[1].t - w[0].t) * (w[0].i_kappa + w[1].i_kappa));
        cumulative.push(acc.value());
    }
    let mut worst: f64 = 0.0;
    for s in 0..series.len() {
        for t in (s + 1)..series.len() {
            let dissipated = cumulative[t] - cumulative[s];
            let gap = series[t].h_kappa - series[s].h_kappa + dissipated;
            worst = worst.max(math::abs(gap) / dissipated.max(1.0));
        }
    }
    Ok(worst)
}
