//! Implicit split Fokker–Planck stepper for the joint law and the companion
//! flow of the edge marginal.
//!
//! Each axis sub-step solves `∂ₜρ = ∂ₓ(∂ₓρ + aρ)` along every pencil with a
//! Scharfetter–Gummel (Chang–Cooper type) flux
//! `F_{i+½} = (B(−z)ρ_{i+1} − B(z)ρ_i)/h`, `z = h·a_{i+½}`, `B(z) = z/(eᶻ − 1)`,
//! zero flux at both ends and implicit Euler in time. The resulting
//! tridiagonal matrix is an M-matrix whose columns sum to the control volumes,
//! so every sub-step is positive and conserves the trapezoid mass exactly.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::functionals::{self, FunctionalReport};
use crate::grid::{trapezoid_weights, Axis, TensorGrid};
use crate::math;
use crate::measures::{gamma_field, EdgeDensity, GammaField, JointDensity, GAMMA_FLOOR};
use crate::par;
use crate::potentials::PotentialPair;

/// Raw mass drift that aborts a run.
pub const MASS_ABORT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    SplitImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    pub symmetrize_every: usize,
    pub scheme: Scheme,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 1.0, output_every: 10, symmetrize_every: 1, scheme: Scheme::SplitImplicit }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidParameter("dt must lie in (0, 0.1]"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter("t_end must be finite and non-negative"));
        }
        if self.output_every == 0 || self.symmetrize_every == 0 {
            return Err(Error::InvalidParameter("output_every and symmetrize_every must be positive"));
        }
        Ok(())
    }

    /// Number of steps, `t_end / dt` rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        let s = self.t_end / self.dt;
        (s + 0.5) as usize
    }
}

/// The flow state `μ_t` together with its conditional drift.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub step: usize,
    pub density: JointDensity,
    /// `γ` of `density`; frozen during the next step.
    pub gamma: GammaField,
    pub ledger: Vec<FunctionalReport>,
}

impl FlowState {
    pub fn new(pair: &PotentialPair, density: JointDensity) -> Result<Self> {
        let gamma = gamma_field(pair, &density, GAMMA_FLOOR)?;
        Ok(Self { t: 0.0, step: 0, density, gamma, ledger: Vec::new() })
    }
}

/// Conservation and symmetry measurements after one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    /// `|mass after the sweeps − mass before|`, measured before renormalisation.
    pub raw_mass_defect: f64,
    pub min_value: f64,
    pub leaf_exchange_defect: f64,
    pub edge_symmetry_defect: f64,
}

/// LU factors of one pencil's implicit matrix: sub-diagonal, modified
/// super-diagonal and inverse pivots of the Thomas elimination.
struct PencilFactor {
    lower: Vec<f64>,
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl PencilFactor {
    fn new(n: usize) -> Self {
        Self { lower: vec![0.0; n], upper: vec![0.0; n], inv_pivot: vec![0.0; n] }
    }

    /// Factorises `w_iρ_i − dt(F_{i+½} − F_{i−½})` for interface drifts `a_mid`
    /// (interface `i` sits between nodes `i` and `i + 1`). Fails with the
    /// row of a non-positive pivot.
    fn factor(&mut self, a_mid: &[f64], w: &[f64], h: f64, dt: f64) -> core::result::Result<(), usize> {
        let n = w.len();
        let r = dt / h;
        let mut prev_upper = 0.0;
        // B(−z) = B(z) + z, so one exponential per interface suffices
        let mut left_bm = 0.0;
        for i in 0..n {
            let mut diag = w[i] + r * left_bm;
            let mut up = 0.0;
            if i + 1 < n {
                let z = h * a_mid[i];
                let bp = math::bernoulli(z);
                let bm = bp + z;
                diag += r * bp;
                up = -r * bm;
                left_bm = bm;
                self.lower[i + 1] = -r * bp;
            }
            let pivot = diag - if i > 0 { self.lower[i] * prev_upper } else { 0.0 };
            if !(pivot > 0.0) {
                return Err(i);
            }
            let inv = 1.0 / pivot;
            self.inv_pivot[i] = inv;
            prev_upper = up * inv;
            self.upper[i] = prev_upper;
        }
        Ok(())
    }

    /// Solves in place; `rho` holds `w_iρ_i` on entry and `ρ_i` on exit.
    fn solve(&self, rho: &mut [f64]) {
        let n = rho.len();
        rho[0] *= self.inv_pivot[0];
        for i in 1..n {
            rho[i] = (rho[i] - self.lower[i] * rho[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rho[i] -= self.upper[i] * rho[i + 1];
        }
    }
}

/// How pencils along an axis share their drift.
enum DriftKey<'a> {
    /// Every pencil has its own drift.
    PerPencil,
    /// `count` distinct drifts, pencil → key given its first cell's multi-index.
    Shared { count: usize, key_of: &'a (dyn Fn(&[usize; 4]) -> usize + Sync) },
}

/// One implicit sub-step along `axis` for every pencil. `drift(m, a_mid)`
/// fills the interface drifts of the pencil whose first cell is `m`.
fn sweep(
    values: &mut [f64],
    grid: &TensorGrid,
    axis: usize,
    dt: f64,
    key: DriftKey<'_>,
    drift: impl Fn(&[usize; 4], &mut [f64]) + Sync + Send,
) -> Result<()> {
    let n = grid.points();
    let h = grid.axis().spacing();
    let w = trapezoid_weights(grid.axis());
    let stride = grid.stride(axis);
    let failed = AtomicUsize::new(usize::MAX);

    // factorise shared drifts once
    let shared: Vec<PencilFactor> = match &key {
        DriftKey::PerPencil => Vec::new(),
        DriftKey::Shared { count, .. } => {
            let mut reps = vec![None; *count];
            for p in 0..grid.pencil_count() {
                let m = grid.to_multi(grid.pencil_start(axis, p));
                let DriftKey::Shared { key_of, .. } = &key else { unreachable!() };
                let k = key_of(&m);
                if reps[k].is_none() {
                    reps[k] = Some(m);
                }
            }
            par::map_range(*count, |k| {
                let mut f = PencilFactor::new(n);
                if let Some(m) = reps[k] {
                    let mut a_mid = vec![0.0; n - 1];
                    drift(&m, &mut a_mid);
                    if let Err(row) = f.factor(&a_mid, &w, h, dt) {
                        failed.store(row, Ordering::Relaxed);
                    }
                }
                f
            })
        }
    };

    let mut buf = vec![0.0; values.len()];
    {
        let src: &[f64] = values;
        let per_task = 64;
        par::for_each_chunk(&mut buf, n * per_task, |task, out| {
            let mut a_mid = vec![0.0; n - 1];
            let mut own = PencilFactor::new(n);
            for (k, pencil) in out.chunks_exact_mut(n).enumerate() {
                let p = task * per_task + k;
                let start = grid.pencil_start(axis, p);
                for (i, v) in pencil.iter_mut().enumerate() {
                    *v = src[start + i * stride] * w[i];
                }
                let m = grid.to_multi(start);
                let factor = match &key {
                    DriftKey::Shared { key_of, .. } => &shared[key_of(&m)],
                    DriftKey::PerPencil => {
                        drift(&m, &mut a_mid);
                        if let Err(row) = own.factor(&a_mid, &w, h, dt) {
                            failed.store(row, Ordering::Relaxed);
                            continue;
                        }
                        &own
                    }
                };
                factor.solve(pencil);
            }
        });
    }
    let row = failed.load(Ordering::Relaxed);
    if row != usize::MAX {
        return Err(Error::TridiagonalFailure(row));
    }
    if stride == 1 {
        values.copy_from_slice(&buf);
    } else {
        for p in 0..grid.pencil_count() {
            let start = grid.pencil_start(axis, p);
            for (i, &v) in buf[p * n..(p + 1) * n].iter().enumerate() {
                values[start + i * stride] = v;
            }
        }
    }
    Ok(())
}

/// Interface midpoints of an axis.
fn midpoints(axis: &Axis) -> Vec<f64> {
    let nodes = axis.nodes();
    nodes.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Fills interface drifts for the equation of a coordinate whose drift is
/// `γ(x, y)` with the partner coordinate `y` at node `j`. The interaction
/// part of `γ` is averaged between neighbouring nodes; `∇U` and `∇W` are
/// evaluated at the interface.
fn gamma_drift(pair: &PotentialPair, mids: &[f64], residual: &[f64], n: usize, y: f64, j: usize, a_mid: &mut [f64]) {
    for (i, (a, &m)) in a_mid.iter_mut().zip(mids).enumerate() {
        *a = pair.du(m) + pair.dw(m - y) + 0.5 * (residual[i * n + j] + residual[(i + 1) * n + j]);
    }
}

/// Advances `state` by one step without measuring diagnostics.
pub fn step(pair: &PotentialPair, state: &FlowState, cfg: &FlowConfig) -> Result<FlowState> {
    step_with_diagnostics(pair, state, cfg).map(|(s, _)| s)
}

/// Advances `state` by one step: freeze `γ`, sweep axes `0, 1, …, κ`, project
/// back onto the symmetric set, recompute `γ`.
pub fn step_with_diagnostics(pair: &PotentialPair, state: &FlowState, cfg: &FlowConfig) -> Result<(FlowState, StepDiagnostics)> {
    cfg.validate()?;
    let density = &state.density;
    let grid = *density.grid();
    let kappa = density.kappa();
    let n = grid.points();
    let nodes = grid.axis().nodes();
    let mids = midpoints(grid.axis());
    let residual = state.gamma.interaction_residual(pair);
    let mass_before = density.mass();

    let mut values = density.values().to_vec();
    sweep(&mut values, &grid, 0, cfg.dt, DriftKey::PerPencil, |m, a_mid| {
        for (a, &x) in a_mid.iter_mut().zip(&mids) {
            *a = m[1..=kappa].iter().fold(pair.du(x), |acc, &j| acc + pair.dw(x - nodes[j]));
        }
    })?;
    // a leaf's drift depends only on the root coordinate
    let by_root = |m: &[usize; 4]| m[0];
    for leaf in 1..=kappa {
        let key = DriftKey::Shared { count: n, key_of: &by_root };
        sweep(&mut values, &grid, leaf, cfg.dt, key, |m, a_mid| {
            gamma_drift(pair, &mids, &residual, n, nodes[m[0]], m[0], a_mid);
        })?;
    }

    let raw = JointDensity::new(*grid.axis(), kappa, values)?;
    let raw_mass_defect = math::abs(raw.mass() - mass_before);
    if !(raw_mass_defect <= MASS_ABORT) {
        return Err(Error::MassDefect(raw_mass_defect));
    }
    let next_step = state.step + 1;
    let density = if next_step.is_multiple_of(cfg.symmetrize_every) { raw.project_symmetric()? } else { raw.normalized()? };
    let diag = StepDiagnostics {
        step: next_step,
        t: state.t + cfg.dt,
        raw_mass_defect,
        min_value: density.min_value(),
        leaf_exchange_defect: density.leaf_exchange_defect(),
        edge_symmetry_defect: density.edge_marginal().symmetry_defect(),
    };
    let gamma = gamma_field(pair, &density, GAMMA_FLOOR)?;
    let next = FlowState { t: diag.t, step: next_step, density, gamma, ledger: state.ledger.clone() };
    Ok((next, diag))
}

/// Runs the flow from `init` to `cfg.t_end`, recording functionals every
/// `output_every` steps and at the end.
pub fn run(pair: &PotentialPair, init: JointDensity, cfg: &FlowConfig) -> Result<FlowState> {
    run_with(pair, init, cfg, |_, _| {})
}

/// As [`run`], calling `observer` after every step.
pub fn run_with(
    pair: &PotentialPair,
    init: JointDensity,
    cfg: &FlowConfig,
    mut observer: impl FnMut(&FlowState, &StepDiagnostics),
) -> Result<FlowState> {
    cfg.validate()?;
    let mut state = FlowState::new(pair, init)?;
    let mut ledger = vec![functionals::evaluate(pair, &state.density, 0.0)?];
    let steps = cfg.steps();
    for k in 1..=steps {
        let (mut next, diag) = step_with_diagnostics(pair, &state, cfg)?;
        // keep t on the exact grid k·dt
        next.t = k as f64 * cfg.dt;
        observer(&next, &diag);
        if k % cfg.output_every == 0 || k == steps {
            ledger.push(functionals::evaluate(pair, &next.density, next.t)?);
        }
        state = next;
    }
    state.ledger = ledger;
    Ok(state)
}

/// Evolves an edge density under drifts `γ(x, y)` for the first coordinate and
/// `γ(y, x)` for the second, with `γ` taken from a recorded series.
///
/// Entry `k` of `gamma_series` must carry time `k·dt` and is frozen during
/// step `k + 1`.
pub fn edge_flow(
    pair: &PotentialPair,
    init: &EdgeDensity,
    gamma_series: &[(f64, GammaField)],
    cfg: &FlowConfig,
) -> Result<EdgeDensity> {
    cfg.validate()?;
    let grid = *init.grid();
    let n = grid.points();
    let nodes = grid.axis().nodes();
    let mids = midpoints(grid.axis());
    let steps = cfg.steps();
    let mut values = init.values().to_vec();
    for k in 0..steps {
        let Some((t, gamma)) = gamma_series.get(k) else {
            return Err(Error::TimeGridMismatch(k));
        };
        let expected = k as f64 * cfg.dt;
        if math::abs(t - expected) > 1e-9 * expected.max(1.0) || gamma.grid() != &grid {
            return Err(Error::TimeGridMismatch(k));
        }
        let residual = gamma.interaction_residual(pair);
        let second = |m: &[usize; 4]| m[1];
        let first = |m: &[usize; 4]| m[0];
        sweep(&mut values, &grid, 0, cfg.dt, DriftKey::Shared { count: n, key_of: &second }, |m, a_mid| {
            gamma_drift(pair, &mids, &residual, n, nodes[m[1]], m[1], a_mid);
        })?;
        sweep(&mut values, &grid, 1, cfg.dt, DriftKey::Shared { count: n, key_of: &first }, |m, a_mid| {
            gamma_drift(pair, &mids, &residual, n, nodes[m[0]], m[0], a_mid);
        })?;
        values = EdgeDensity::new(*grid.axis(), values)?.symmetrized().normalized()?.into_values();
    }
    EdgeDensity::new(*grid.axis(), values)
}
