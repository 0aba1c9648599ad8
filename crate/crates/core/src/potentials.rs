//! Confinement `U`, interaction `W`, and the derived drift `b`, energy density
//! `g` and pair energy `Q`.
//!
//! Both families use the normalisation `W(0) = 0` and an even `W`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{integrate_1d, Axis};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialFamily {
    /// `U(x) = (α+β)/2 · x²`, `W(x) = −β/4 · x²`.
    Quadratic { alpha: f64, beta: f64 },
    /// `U(x) = a₄x⁴ − a₂x²`, `W(x) = −β/4 · x²`.
    QuarticDoubleWell { a4: f64, a2: f64, beta: f64 },
}

/// A potential family together with the tree degree `κ ∈ {2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialPair {
    family: PotentialFamily,
    kappa: usize,
}

impl PotentialPair {
    pub fn new(family: PotentialFamily, kappa: usize) -> Result<Self> {
        if !(kappa == 2 || kappa == 3) {
            return Err(Error::UnsupportedKappa(kappa));
        }
        match family {
            PotentialFamily::Quadratic { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidParameter("alpha and beta must be finite"));
                }
            }
            PotentialFamily::QuarticDoubleWell { a4, a2, beta } => {
                if !(a4.is_finite() && a2.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidParameter("a4, a2 and beta must be finite"));
                }
                if a4 <= 0.0 {
                    return Err(Error::InvalidParameter("a4 must be positive"));
                }
            }
        }
        Ok(Self { family, kappa })
    }

    pub fn quadratic(alpha: f64, beta: f64, kappa: usize) -> Result<Self> {
        Self::new(PotentialFamily::Quadratic { alpha, beta }, kappa)
    }

    pub fn quartic(a4: f64, a2: f64, beta: f64, kappa: usize) -> Result<Self> {
        Self::new(PotentialFamily::QuarticDoubleWell { a4, a2, beta }, kappa)
    }

    pub fn family(&self) -> PotentialFamily {
        self.family
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    fn beta(&self) -> f64 {
        match self.family {
            PotentialFamily::Quadratic { beta, .. } | PotentialFamily::QuarticDoubleWell { beta, .. } => beta,
        }
    }

    #[inline]
    pub fn u(&self, x: f64) -> f64 {
        match self.family {
            PotentialFamily::Quadratic { alpha, beta } => 0.5 * (alpha + beta) * x * x,
            PotentialFamily::QuarticDoubleWell { a4, a2, .. } => {
                let x2 = x * x;
                a4 * x2 * x2 - a2 * x2
            }
        }
    }

    #[inline]
    pub fn du(&self, x: f64) -> f64 {
        match self.family {
            PotentialFamily::Quadratic { alpha, beta } => (alpha + beta) * x,
            PotentialFamily::QuarticDoubleWell { a4, a2, .. } => 4.0 * a4 * x * x * x - 2.0 * a2 * x,
        }
    }

    #[inline]
    pub fn w(&self, x: f64) -> f64 {
        -0.25 * self.beta() * x * x
    }

    #[inline]
    pub fn dw(&self, x: f64) -> f64 {
        -0.5 * self.beta() * x
    }

    /// `b(x) = ∇U(x₀) + Σ_v ∇W(x₀ − x_v)` for `x = (x₀, x₁, …, x_κ)`.
    pub fn b(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.kappa + 1);
        let x0 = x[0];
        x[1..].iter().fold(self.du(x0), |acc, &xv| acc + self.dw(x0 - xv))
    }

    /// `g(x) = U(x₀) + ½ Σ_v W(x₀ − x_v)`.
    pub fn g(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.kappa + 1);
        let x0 = x[0];
        x[1..].iter().fold(self.u(x0), |acc, &xv| acc + 0.5 * self.w(x0 - xv))
    }

    /// Chain pair energy `Q(x, y) = U(x) + U(y) + 2W(x − y)`; only defined for κ = 2.
    pub fn q(&self, x: f64, y: f64) -> Result<f64> {
        if self.kappa != 2 {
            return Err(Error::RequiresKappaTwo(self.kappa));
        }
        Ok(self.q_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn q_unchecked(&self, x: f64, y: f64) -> f64 {
        self.u(x) + self.u(y) + 2.0 * self.w(x - y)
    }

    /// The coercivity profile `q(x) = c·x²` with
    /// `U(x) + U(y) + κW(x − y) ≥ q(x) + q(y)`, and `R_q = ∫ e^{−q}` on `axis`.
    pub fn coercivity_profile(&self, axis: &Axis) -> Result<CoercivityProfile> {
        let PotentialFamily::Quadratic { alpha, beta } = self.family else {
            return Err(Error::CoercivityUnavailable);
        };
        if alpha <= math::abs(beta) {
            return Err(Error::NotCoercive);
        }
        // U(x)+U(y)+κW(x−y) = a(x²+y²) + 2c·xy with a, c below; 2|c·xy| ≤ |c|(x²+y²).
        let k = self.kappa as f64;
        let a = 0.5 * (alpha + beta) - 0.25 * k * beta;
        let c = 0.25 * k * beta;
        let coefficient = a - math::abs(c);
        if coefficient <= 0.0 {
            return Err(Error::NotCoercive);
        }
        let f: Vec<f64> = axis.nodes().iter().map(|x| math::exp(-coefficient * x * x)).collect();
        Ok(CoercivityProfile { coefficient, r_q: integrate_1d(axis, &f) })
    }
}

/// `q(x) = coefficient · x²` and its partition integral `R_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityProfile {
    pub coefficient: f64,
    pub r_q: f64,
}

impl CoercivityProfile {
    pub fn q(&self, x: f64) -> f64 {
        self.coefficient * x * x
    }

    /// The lower bound `−log R_q` on the sparse free energy.
    pub fn lower_bound(&self) -> f64 {
        -math::ln(self.r_q)
    }
}

/// Lipschitz and coupling constants for the quadratic family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsiConstants {
    pub c_lip0: f64,
    pub c_lip1: f64,
    pub delta0: f64,
    pub delta1: f64,
}

impl LsiConstants {
    /// Both coupling constants are strictly below one.
    pub fn satisfied(&self) -> bool {
        self.delta0 < 1.0 && self.delta1 < 1.0
    }
}

pub fn lsi_constants_quadratic(alpha: f64, beta: f64) -> Result<LsiConstants> {
    if !(alpha > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter("alpha must be positive"));
    }
    let c_lip0 = 2.0 / alpha;
    let c_lip1 = 1.0 / alpha;
    let w2 = 0.5 * math::abs(beta);
    Ok(LsiConstants { c_lip0, c_lip1, delta0: c_lip0 * w2, delta1: 2.0 * c_lip1 * w2 })
}
