mod common;

use mlfe_core::cayley::{
    from_root, gaussian_oracle_variance, lacker_zhang_root, solve_fixed_point, stationarity_residuals, to_lacker_zhang,
    CayleyConfig,
};
use mlfe_core::functionals::i_kappa;
use mlfe_core::{Axis, PotentialPair, RootDensity};

#[test]
fn variance_matches_scalar_oracle_across_the_quadratic_family() {
    let axis = Axis::symmetric(6.0, 129).unwrap();
    for alpha in [1.5, 2.0, 3.0] {
        for beta in [-1.0, 0.5, 1.5] {
            if alpha <= f64::abs(beta) {
                continue;
            }
            for kappa in [2, 3] {
                // κ = 3 needs α > 2β for U(x) + U(y) + 3W(x − y) to stay coercive
                if kappa == 3 && alpha <= 2.0 * beta {
                    continue;
                }
                let pair = PotentialPair::quadratic(alpha, beta, kappa).unwrap();
                let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
                let want = gaussian_oracle_variance(&pair).unwrap();
                let got = sol.nu0.variance();
                assert!(((got - want) / want).abs() < 1e-3, "α={alpha} β={beta} κ={kappa}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn residuals_are_small_and_catch_a_perturbation() {
    let pair = PotentialPair::quadratic(2.0, 1.5, 2).unwrap();
    let axis = Axis::symmetric(6.0, 257).unwrap();
    let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
    let good = stationarity_residuals(&pair, &sol).unwrap();
    assert!(good.max() < 1e-3, "{good:?}");

    let nodes = axis.nodes();
    let bumped: Vec<f64> = sol.nu0.values().iter().zip(&nodes).map(|(v, x)| v * (1.0 + 0.01 * x.sin())).collect();
    let bad = from_root(&pair, RootDensity::new(axis, bumped).unwrap()).unwrap();
    let bad = stationarity_residuals(&pair, &bad).unwrap();
    assert!(bad.gradient_identity > 10.0 * good.gradient_identity);
    assert!(bad.i_kappa > 10.0 * good.i_kappa);
    assert!(bad.conditional_drift > 10.0 * good.conditional_drift);
}

#[test]
fn decoupled_gradient_identity_is_boltzmann() {
    let pair = PotentialPair::quadratic(2.0, 0.0, 3).unwrap();
    let axis = Axis::symmetric(6.0, 65).unwrap();
    let cfg = CayleyConfig { damping: 1.0, ..CayleyConfig::default() };
    let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &cfg).unwrap();
    let r = stationarity_residuals(&pair, &sol).unwrap();
    assert!(r.gradient_identity < 1e-9, "{r:?}");
}

#[test]
fn quartic_double_well_converges() {
    let pair = PotentialPair::quartic(0.25, 0.5, 1.0, 2).unwrap();
    let axis = Axis::symmetric(6.0, 97).unwrap();
    let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
    assert!(sol.residual_linf < 1e-10);
    let v = sol.nu0.values();
    let mirror = v.iter().zip(v.iter().rev()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(mirror < 1e-12, "{mirror}");
    assert!(stationarity_residuals(&pair, &sol).unwrap().max().is_finite());
}

#[test]
fn fisher_information_of_the_fixed_point_shrinks_with_h() {
    let pair = PotentialPair::quartic(0.25, 0.5, 1.0, 2).unwrap();
    let fisher = |n: usize| {
        let axis = Axis::symmetric(5.0, n).unwrap();
        let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &CayleyConfig::default()).unwrap();
        i_kappa(&pair, &sol.joint).unwrap()
    };
    let (coarse, fine) = (fisher(33), fisher(65));
    assert!(fine < coarse, "{coarse} {fine}");
    assert!(coarse / fine > 3.0, "{coarse} {fine}");
}

#[test]
fn lacker_zhang_closed_forms() {
    let pair = PotentialPair::quadratic(2.0, 0.0, 2).unwrap();
    let axis = Axis::symmetric(6.0, 65).unwrap();
    let cfg = CayleyConfig { damping: 1.0, ..CayleyConfig::default() };
    let sol = solve_fixed_point(&pair, &RootDensity::uniform(axis), &cfg).unwrap();
    let f = to_lacker_zhang(&pair, &sol);
    let spread = f.iter().copied().fold(f64::NEG_INFINITY, f64::max) - f.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread < 1e-12, "{spread}");
    let z_u: f64 = {
        let w = mlfe_core::grid::trapezoid_weights(&axis);
        axis.nodes().iter().zip(&w).map(|(x, w)| w * (-pair.u(*x)).exp()).sum()
    };
    assert!((f[0] - z_u.ln() / 2.0).abs() < 1e-12);
    let back = lacker_zhang_root(&pair, axis, &f).unwrap();
    assert!(common::max_abs_diff(back.values(), sol.nu0.values()) < 1e-12);
}
