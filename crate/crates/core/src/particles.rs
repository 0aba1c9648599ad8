//! Euler–Maruyama particle engine with a binned estimator of `γ`.
//!
//! Each particle carries `(X₀, X₁, …, X_κ)`. The root moves with drift `−b(X)`;
//! leaf `v` moves with `−γ̂(X_v, X₀)`, where `γ̂` is built from the whole
//! ensemble before any particle moves. Randomness comes from ChaCha8 streams
//! keyed by `(seed, step, chunk)`, so trajectories do not depend on the
//! thread count.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::math;
use crate::par;
use crate::potentials::PotentialPair;

/// Smallest ensemble the estimator accepts.
pub const MIN_PARTICLES: usize = 1000;

/// Particles sharing one RNG stream within a step.
const CHUNK: usize = 4096;

fn rng_for(seed: u64, step: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((step << 24) ^ chunk as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleConfig {
    pub n: usize,
    pub seed: u64,
    pub bins: usize,
    pub n_min: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self { n: 200_000, seed: 0x5eed, bins: 48, n_min: 20 }
    }
}

/// How initial states are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSampler {
    /// `N(mean, var)` independently in every coordinate.
    GaussianProduct { mean: f64, var: f64 },
    /// `½N(m, var)^{⊗(1+κ)} + ½N(−m, var)^{⊗(1+κ)}`.
    GaussianMixture { m: f64, var: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    kappa: usize,
    lower: f64,
    upper: f64,
    /// Row-major `n × (1+κ)`.
    states: Vec<f64>,
    seed: u64,
    step: u64,
    pub t: f64,
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let mut x = x;
    // a single reflection suffices unless the jump exceeds the box width
    for _ in 0..4 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

impl ParticleEnsemble {
    pub fn new(kappa: usize, axis: &Axis, states: Vec<f64>, seed: u64) -> Result<Self> {
        if !(kappa == 2 || kappa == 3) {
            return Err(Error::UnsupportedKappa(kappa));
        }
        if !states.len().is_multiple_of(kappa + 1) {
            return Err(Error::ShapeMismatch { expected: (states.len() / (kappa + 1) + 1) * (kappa + 1), got: states.len() });
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("particle states must be finite"));
        }
        let (lower, upper) = (axis.lower(), axis.upper());
        let states = states.into_iter().map(|x| reflect(x, lower, upper)).collect();
        Ok(Self { kappa, lower, upper, states, seed, step: 0, t: 0.0 })
    }

    /// Draws `n` particles; the draw uses step index 0 of the seed's streams.
    pub fn sample(kappa: usize, axis: &Axis, n: usize, seed: u64, init: InitSampler) -> Result<Self> {
        let (var, shift) = match init {
            InitSampler::GaussianProduct { mean, var } => (var, (mean, mean)),
            InitSampler::GaussianMixture { m, var } => (var, (m, -m)),
        };
        if !(var > 0.0) {
            return Err(Error::InvalidParameter("variance must be positive"));
        }
        let sd = math::sqrt(var);
        let dim = kappa + 1;
        let mut states = vec![0.0; n * dim];
        par::for_each_chunk(&mut states, CHUNK * dim, |c, rows| {
            let mut rng = rng_for(seed, 0, c);
            for row in rows.chunks_exact_mut(dim) {
                let centre = if rng.random::<bool>() { shift.0 } else { shift.1 };
                for x in row.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = centre + sd * z;
                }
            }
        });
        let mut out = Self::new(kappa, axis, states, seed)?;
        out.step = 1;
        Ok(out)
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.states.len() / (self.kappa + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Root mean and variance, root/leaf covariance averaged over leaves,
    /// each with its Monte Carlo standard error.
    pub fn moments(&self) -> Moments {
        let dim = self.kappa + 1;
        let n = self.len() as f64;
        let mut mean = [0.0f64; 4];
        for row in self.states.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let leaves = self.kappa as f64;
        let (mut s2, mut s4, mut c1, mut c2) = (0.0, 0.0, 0.0, 0.0);
        for row in self.states.chunks_exact(dim) {
            let d0 = row[0] - mean[0];
            let sq = d0 * d0;
            s2 += sq;
            s4 += sq * sq;
            let y = row[1..].iter().zip(&mean[1..]).map(|(x, m)| d0 * (x - m)).sum::<f64>() / leaves;
            c1 += y;
            c2 += y * y;
        }
        let var0 = s2 / n;
        let cov01 = c1 / n;
        Moments {
            t: self.t,
            mean0: mean[0],
            var0,
            cov01,
            se_mean0: math::sqrt(var0 / n),
            se_var0: math::sqrt(((s4 / n) - var0 * var0).max(0.0) / n),
            se_cov01: math::sqrt(((c2 / n) - cov01 * cov01).max(0.0) / n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub t: f64,
    pub mean0: f64,
    pub var0: f64,
    pub cov01: f64,
    pub se_mean0: f64,
    pub se_var0: f64,
    pub se_cov01: f64,
}

/// Binned conditional mean of the other-leaf interaction on the box square.
///
/// Bin `(i, j)` collects, for every particle and leaf `v`, the mean over
/// `w ≠ v` of `∇W(X₀ − X_w)` at `(X₀, X_v)`. Then
/// `γ̂(x, y) = ∇U(x) + ∇W(x − y) + (κ − 1)·R(x, y)` with `R` bilinear between
/// populated bin centres.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedGamma {
    pair: PotentialPair,
    lower: f64,
    width: f64,
    bins: usize,
    n_min: usize,
    sums: Vec<f64>,
    squares: Vec<f64>,
    counts: Vec<usize>,
}

/// Result of one estimator lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaQuery {
    pub value: f64,
    /// No populated bin centre was adjacent to the query point.
    pub fallback: bool,
}

impl BinnedGamma {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        self.counts[i * self.bins + j]
    }

    pub fn is_populated(&self, i: usize, j: usize) -> bool {
        self.count(i, j) >= self.n_min
    }

    pub fn populated_fraction(&self) -> f64 {
        self.counts.iter().filter(|&&c| c >= self.n_min).count() as f64 / self.counts.len() as f64
    }

    pub fn bin_centre(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width
    }

    /// Binned mean of the interaction statistic and its standard error.
    pub fn bin_mean(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        let k = i * self.bins + j;
        let c = self.counts[k];
        if c < self.n_min {
            return None;
        }
        let c = c as f64;
        let mean = self.sums[k] / c;
        let var = (self.squares[k] / c - mean * mean).max(0.0);
        Some((mean, math::sqrt(var / c)))
    }

    /// `γ̂` at the centre of a populated bin, with its standard error.
    pub fn at_bin(&self, i: usize, j: usize) -> Option<(f64, f64)> {
        let (x, y) = (self.bin_centre(i), self.bin_centre(j));
        let scale = (self.pair.kappa() - 1) as f64;
        self.bin_mean(i, j).map(|(m, se)| (self.pair.du(x) + self.pair.dw(x - y) + scale * m, scale * se))
    }

    /// `γ̂(x, y)`, `x` in the root slot.
    pub fn query(&self, x: f64, y: f64) -> GammaQuery {
        let base = self.pair.du(x) + self.pair.dw(x - y);
        let locate = |z: f64| {
            let s = ((z - self.lower) / self.width - 0.5).clamp(0.0, (self.bins - 1) as f64);
            let i = (s as usize).min(self.bins - 2);
            (i, s - i as f64)
        };
        let (i, fx) = locate(x);
        let (j, fy) = locate(y);
        let mut acc = 0.0;
        let mut weight = 0.0;
        for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
            for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                let k = (i + di) * self.bins + (j + dj);
                let c = self.counts[k];
                if c >= self.n_min && wx * wy > 0.0 {
                    acc += wx * wy * self.sums[k] / c as f64;
                    weight += wx * wy;
                }
            }
        }
        if weight > 0.0 {
            GammaQuery { value: base + (self.pair.kappa() - 1) as f64 * acc / weight, fallback: false }
        } else {
            GammaQuery { value: base, fallback: true }
        }
    }
}

/// Builds the estimator from the current ensemble.
pub fn estimate_gamma(pair: &PotentialPair, ensemble: &ParticleEnsemble, bins: usize, n_min: usize) -> Result<BinnedGamma> {
    if ensemble.len() < MIN_PARTICLES {
        return Err(Error::TooFewParticles { needed: MIN_PARTICLES, got: ensemble.len() });
    }
    if pair.kappa() != ensemble.kappa {
        return Err(Error::InvalidParameter("pair and ensemble disagree on kappa"));
    }
    if bins < 2 {
        return Err(Error::InvalidParameter("at least two bins per axis"));
    }
    let kappa = ensemble.kappa;
    let dim = kappa + 1;
    let width = (ensemble.upper - ensemble.lower) / bins as f64;
    let index = |z: f64| (((z - ensemble.lower) / width) as usize).min(bins - 1);
    let mut sums = vec![0.0; bins * bins];
    let mut squares = vec![0.0; bins * bins];
    let mut counts = vec![0usize; bins * bins];
    let others = (kappa - 1) as f64;
    for row in ensemble.states.chunks_exact(dim) {
        let x0 = row[0];
        let i = index(x0);
        let total: f64 = row[1..].iter().map(|&xw| pair.dw(x0 - xw)).sum();
        for &xv in &row[1..] {
            let stat = (total - pair.dw(x0 - xv)) / others;
            let k = i * bins + index(xv);
            sums[k] += stat;
            squares[k] += stat * stat;
            counts[k] += 1;
        }
    }
    Ok(BinnedGamma { pair: *pair, lower: ensemble.lower, width, bins, n_min, sums, squares, counts })
}

/// One Euler–Maruyama step with a frozen estimator, then reflection and a
/// random leaf permutation per particle.
pub fn em_step(pair: &PotentialPair, ensemble: &ParticleEnsemble, dt: f64, estimator: &BinnedGamma) -> Result<ParticleEnsemble> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter("dt must be non-negative"));
    }
    let dim = ensemble.kappa + 1;
    let noise = math::sqrt(2.0 * dt);
    let (lo, hi) = (ensemble.lower, ensemble.upper);
    let (seed, step) = (ensemble.seed, ensemble.step);
    let mut states = ensemble.states.clone();
    par::for_each_chunk(&mut states, CHUNK * dim, |c, rows| {
        let mut rng = rng_for(seed, step, c);
        let mut next = [0.0f64; 4];
        for row in rows.chunks_exact_mut(dim) {
            let x0 = row[0];
            next[0] = x0 - pair.b(row) * dt;
            for (n, &xv) in next[1..dim].iter_mut().zip(&row[1..]) {
                *n = xv - estimator.query(xv, x0).value * dt;
            }
            for (x, n) in row.iter_mut().zip(&next) {
                let z: f64 = rng.sample(StandardNormal);
                *x = reflect(n + noise * z, lo, hi);
            }
            // Fisher–Yates on the leaves
            for k in (2..dim).rev() {
                let j = 1 + rng.random_range(0..k);
                row.swap(k, j);
            }
        }
    });
    Ok(ParticleEnsemble { kappa: ensemble.kappa, lower: lo, upper: hi, states, seed, step: step + 1, t: ensemble.t + dt })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleRun {
    pub dt: f64,
    pub t_end: f64,
    /// Moments are recorded every this many steps, plus at the start and end.
    pub record_every: usize,
    pub bins: usize,
    pub n_min: usize,
}

impl ParticleRun {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 0.5) as usize
    }
}

/// Runs to `t_end` and returns the recorded moment rows.
pub fn moment_series(pair: &PotentialPair, init: ParticleEnsemble, run: &ParticleRun) -> Result<Vec<Moments>> {
    if !(run.dt > 0.0 && run.t_end >= 0.0) || run.record_every == 0 {
        return Err(Error::InvalidParameter("particle run needs dt > 0, t_end ≥ 0 and record_every ≥ 1"));
    }
    let steps = run.steps();
    let mut e = init;
    let mut rows = vec![e.moments()];
    for k in 1..=steps {
        let est = estimate_gamma(pair, &e, run.bins, run.n_min)?;
        e = em_step(pair, &e, run.dt, &est)?;
        e.t = k as f64 * run.dt;
        if k % run.record_every == 0 || k == steps {
            rows.push(e.moments());
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis() -> Axis {
        Axis::symmetric(6.0, 64).unwrap()
    }

    fn product(n: usize, seed: u64) -> ParticleEnsemble {
        ParticleEnsemble::sample(2, &axis(), n, seed, InitSampler::GaussianProduct { mean: 0.0, var: 1.0 }).unwrap()
    }

    #[test]
    fn reflection_stays_in_box() {
        assert_eq!(reflect(6.5, -6.0, 6.0), 5.5);
        assert_eq!(reflect(-7.0, -6.0, 6.0), -5.0);
        assert!((-6.0..=6.0).contains(&reflect(100.0, -6.0, 6.0)));
    }

    #[test]
    fn decoupled_estimator_is_grad_u() {
        let p = PotentialPair::quadratic(2.0, 0.0, 2).unwrap();
        let e = product(20_000, 1);
        let est = estimate_gamma(&p, &e, 48, 20).unwrap();
        for i in 0..48 {
            for j in 0..48 {
                if let Some((g, _)) = est.at_bin(i, j) {
                    assert_eq!(g, p.du(est.bin_centre(i)));
                }
            }
        }
        assert_eq!(est.query(0.3, -1.0).value, p.du(0.3));
    }

    #[test]
    fn empty_region_falls_back() {
        let p = PotentialPair::quadratic(2.0, 1.5, 2).unwrap();
        let est = estimate_gamma(&p, &product(5_000, 2), 48, 20).unwrap();
        let q = est.query(5.9, -5.9);
        assert!(q.fallback);
        assert_eq!(q.value, p.du(5.9) + p.dw(11.8));
        assert!(!est.query(0.0, 0.0).fallback);
    }

    #[test]
    fn too_few_particles_rejected() {
        let p = PotentialPair::quadratic(2.0, 1.5, 2).unwrap();
        assert_eq!(
            estimate_gamma(&p, &product(100, 3), 48, 20).unwrap_err(),
            Error::TooFewParticles { needed: MIN_PARTICLES, got: 100 }
        );
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = PotentialPair::quadratic(2.0, 1.5, 2).unwrap();
        let run = ParticleRun { dt: 1e-2, t_end: 0.05, record_every: 1, bins: 24, n_min: 20 };
        let a = moment_series(&p, product(10_000, 7), &run).unwrap();
        let b = moment_series(&p, product(10_000, 7), &run).unwrap();
        assert_eq!(a, b);
        let c = moment_series(&p, product(10_000, 8), &run).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dt_keeps_marginal_moments() {
        let p = PotentialPair::quadratic(2.0, 1.5, 2).unwrap();
        let e = product(10_000, 4);
        let est = estimate_gamma(&p, &e, 24, 20).unwrap();
        let next = em_step(&p, &e, 0.0, &est).unwrap();
        let (a, b) = (e.moments(), next.moments());
        assert_eq!(a.mean0, b.mean0);
        assert_eq!(a.var0, b.var0);
        assert!((a.cov01 - b.cov01).abs() < 5.0 * a.se_cov01);
    }
}
