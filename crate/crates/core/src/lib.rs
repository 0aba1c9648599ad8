//! Numerical laboratory for the κ-regular Markovian local-field equation.
//!
//! The equation couples a root coordinate `x₀` to `κ` leaf coordinates on the
//! root neighbourhood of a κ-regular tree. The root moves in the drift
//! `b(x) = ∇U(x₀) + Σ ∇W(x₀ − x_v)`; each leaf moves in the conditional drift
//! `γ(x_v, x₀) = E[b(X) | X₀ = x_v, X₁ = x₀]`, which depends on the current law.
//!
//! The crate is `no_std` (with `alloc`) and is organised bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`grid`] | uniform axes, tensor indexing, trapezoid quadrature, finite differences |
//! | [`potentials`] | the potential pair `(U, W)` and the derived `b`, `g`, `Q` |
//! | [`measures`] | discretised joint/edge/root densities, symmetry projections, `γ` |
//! | [`functionals`] | sparse free energy `H_κ`, modified Fisher information `I_κ`, `Ĥ₂` |
//! | [`flow`] | implicit split Fokker–Planck stepper and the edge-marginal companion flow |
//! | [`particles`] | Euler–Maruyama particle engine with a binned `γ` estimator |
//! | [`cayley`] | damped Picard solver for stationary root marginals |
//! | [`chain`] | transfer operator, log-partition and lift-map machinery for κ = 2 |
//!
//! Enable the `parallel` feature to sweep pencils and particles on a rayon
//! pool. Results do not depend on the thread count.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cayley;
pub mod chain;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod measures;
pub mod particles;
pub mod potentials;

mod math;
mod par;

pub use error::{Error, Result};
pub use grid::{Axis, TensorGrid};
pub use measures::{EdgeDensity, GammaField, JointDensity, RootDensity};
pub use potentials::{PotentialFamily, PotentialPair};
