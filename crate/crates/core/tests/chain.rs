mod common;

use mlfe_core::cayley::{solve_fixed_point, CayleyConfig};
use mlfe_core::chain::*;
use mlfe_core::functionals::{h_kappa, i_kappa};
use mlfe_core::{Axis, JointDensity, PotentialPair, RootDensity};
use proptest::prelude::*;

fn quad() -> PotentialPair {
    PotentialPair::quadratic(2.0, 1.5, 2).unwrap()
}

#[test]
fn per_site_log_partition_is_cauchy() {
    let op = TransferOperator::new(&quad(), Axis::symmetric(6.0, 64).unwrap()).unwrap();
    let per_site = |n: usize| op.log_partition(n).unwrap() / (2 * n + 1) as f64;
    let h = op.h_star().unwrap();
    let mut last = f64::INFINITY;
    for n in [4, 8, 16, 32, 64] {
        let gap = (per_site(n) + h).abs();
        assert!(gap < last);
        // the gap is the boundary constant spread over 2n + 1 sites
        assert!(gap * ((2 * n + 1) as f64) < 1.0, "{n} {gap}");
        last = gap;
    }
    assert!((per_site(64) - per_site(32)).abs() < 1.0 / 32.0);
}

#[test]
fn h_star_equals_free_energy_of_the_fixed_point() {
    let axis = Axis::symmetric(6.0, 48).unwrap();
    let sol = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
    let h = h_star_spectral(&quad(), axis).unwrap();
    assert!((h - h_kappa(&quad(), &sol.joint).unwrap()).abs() < 1e-3);
    let lift = lift_entropy(&quad(), &sol.joint, 64).unwrap() / 129.0;
    assert!(lift.abs() < 2e-3, "{lift}");
}

#[test]
fn lift_entropy_formula_matches_brute_force() {
    let axis = Axis::symmetric(6.0, 16).unwrap();
    let nu = JointDensity::gaussian_product(axis, 2, 0.2, 0.8).unwrap();
    let formula = lift_entropy(&quad(), &nu, 2).unwrap();
    let brute = lift_entropy_brute(&quad(), &nu, 2, BRUTE_FORCE_BUDGET).unwrap();
    assert!(((formula - brute) / brute).abs() < 1e-2, "{formula} {brute}");
}

#[test]
fn lift_entropy_per_site_approaches_the_free_energy_gap() {
    let axis = Axis::symmetric(6.0, 48).unwrap();
    let nu = JointDensity::gaussian_product(axis, 2, 0.0, 1.0).unwrap();
    let gap = h_kappa(&quad(), &nu).unwrap() - h_star_spectral(&quad(), axis).unwrap();
    let reports = chain_report(&quad(), &nu, &[16, 64]).unwrap();
    let err: Vec<f64> = reports.iter().map(|r| ((r.lift_entropy_per_site - gap) / gap).abs()).collect();
    assert!(err[1] < err[0] && err[1] < 1e-2, "{err:?}");
}

/// A stationary, non-reversible Markov chain on the grid written as a triple law.
fn markov_triple(axis: Axis) -> JointDensity {
    let p = axis.points();
    let w = mlfe_core::grid::trapezoid_weights(&axis);
    let x = axis.nodes();
    let mut k = vec![0.0; p * p];
    for a in 0..p {
        for b in 0..p {
            // drift to the right makes the chain non-reversible
            let d = x[b] - 0.5 * x[a] - 0.4;
            k[a * p + b] = (-d * d).exp() + 0.05 * (-(x[b] * x[b])).exp();
        }
        let s: f64 = (0..p).map(|b| w[b] * k[a * p + b]).sum();
        (0..p).for_each(|b| k[a * p + b] /= s);
    }
    let mut pi = vec![1.0; p];
    for _ in 0..2000 {
        let next: Vec<f64> = (0..p).map(|b| (0..p).map(|a| w[a] * pi[a] * k[a * p + b]).sum()).collect();
        let m: f64 = next.iter().zip(&w).map(|(v, w)| v * w).sum();
        pi = next.into_iter().map(|v| v / m).collect();
    }
    let mut values = vec![0.0; p * p * p];
    for b in 0..p {
        for a in 0..p {
            for c in 0..p {
                values[(b * p + a) * p + c] = pi[a] * k[a * p + b] * k[b * p + c];
            }
        }
    }
    JointDensity::new(axis, 2, values).unwrap()
}

#[test]
fn lift_reproduces_triple_marginals() {
    let ax24 = Axis::symmetric(6.0, 24).unwrap();
    let nu = JointDensity::gaussian_product(ax24, 2, 0.0, 1.0).unwrap();
    assert!(lift_marginal_check(&nu, 2, 0, BRUTE_FORCE_BUDGET).unwrap() < 1e-6);

    let ax12 = Axis::symmetric(4.0, 12).unwrap();
    let chain = markov_triple(ax12);
    assert!(chain.edge_marginal().symmetry_defect() > 1e-3, "test law should be non-reversible");
    for (n, v) in [(2, 0), (2, 1), (3, -2), (3, 0)] {
        let d = lift_marginal_check(&chain, n, v, BRUTE_FORCE_BUDGET).unwrap();
        assert!(d < 1e-10, "n={n} v={v}: {d}");
    }
}

#[test]
fn fisher_vertex_matches_fisher_information() {
    let axis = Axis::symmetric(6.0, 16).unwrap();
    let nu = JointDensity::gaussian_product(axis, 2, 0.0, 1.0).unwrap();
    let fv = fisher_interior_vertex(&quad(), &nu, BRUTE_FORCE_BUDGET).unwrap();
    let i2 = i_kappa(&quad(), &nu).unwrap();
    assert!(((fv.contribution - i2) / i2).abs() < 3e-2, "{fv:?} {i2}");
    assert!(fv.cross.abs() < 1e-2 * fv.contribution);
    // conditional independence of a product kills the neighbour term
    assert!(fv.theta2 < 1e-12);

    let correlated = JointDensity::from_fn(axis, 2, |x| {
        (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0 + 0.3 * x[0] * (x[1] + x[2])).exp()
    })
    .unwrap();
    let fv = fisher_interior_vertex(&quad(), &correlated, BRUTE_FORCE_BUDGET).unwrap();
    let i2 = i_kappa(&quad(), &correlated).unwrap();
    assert!(((fv.contribution - i2) / i2).abs() < 3e-2, "{fv:?} {i2}");
}

#[test]
fn fisher_vertex_vanishes_at_the_fixed_point() {
    let axis = Axis::symmetric(6.0, 16).unwrap();
    let pi = solve_fixed_point(&quad(), &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap().joint;
    let fv = fisher_interior_vertex(&quad(), &pi, BRUTE_FORCE_BUDGET).unwrap();
    assert!(fv.contribution < 1e-8, "{fv:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transfer_operator_agrees_with_gaussian_oracle(alpha in 1.0f64..4.0, frac in -0.9f64..0.9, n in 1usize..6) {
        let pair = PotentialPair::quadratic(alpha, frac * alpha, 2).unwrap();
        let got = log_partition(&pair, Axis::symmetric(9.0, 120).unwrap(), n).unwrap();
        let want = gaussian_log_partition(&pair, n).unwrap();
        prop_assert!(((got - want) / want.abs().max(1.0)).abs() < 1e-6, "{} {}", got, want);
    }

    #[test]
    fn kernel_scaling_shifts_h_star(c in 0.05f64..20.0) {
        let op = TransferOperator::new(&quad(), Axis::symmetric(6.0, 32).unwrap()).unwrap();
        let shift = op.scaled(c).unwrap().h_star().unwrap() - op.h_star().unwrap();
        prop_assert!((shift + c.ln()).abs() < 1e-10);
    }
}
