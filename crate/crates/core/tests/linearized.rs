use std::sync::Arc;

use proptest::prelude::*;
use segfb_core::grid::{ExtensionGrid, ScalarField};
use segfb_core::linearized::*;

fn grid(h: f64) -> Arc<ExtensionGrid> {
    Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h).unwrap())
}

fn smooth(c: [f64; 4]) -> (impl Fn(&[f64]) -> f64 + Sync, impl Fn(&[f64]) -> f64 + Sync) {
    let f1 = move |x: &[f64]| c[0] + 0.2 * x[0] + 0.2 * x[0] * x[0] + c[1] * x[1] + c[2] * x[2];
    let f2 = move |x: &[f64]| c[0] + 0.2 * x[0] + 0.2 * x[0] * x[0] + c[3] * x[1] - 0.1 * x[0] * x[2];
    (f1, f2)
}

#[test]
fn explicit_boundary_data_is_recovered() {
    let g = grid(1.0 / 32.0);
    // the pair reaches 6.7 on the walls; the problem is linear
    let sc = 1.0 / 7.0;
    let v = |x: &[f64]| explicit_minimizer(x, 2).unwrap();
    let b = LinearizedBoundary::from_fns(g.clone(), |x| sc * v(x).0, |x| sc * v(x).1).unwrap();
    let p = solve_linearized(&b, &LinearizedConfig::default()).unwrap();
    assert!(p.converged);
    let e1 = ScalarField::from_fn(g.clone(), |x| v(x).0);
    let e2 = ScalarField::from_fn(g, |x| v(x).1);
    let err = p.g1.scaled(1.0 / sc).max_abs_diff(&e1).max(p.g2.scaled(1.0 / sc).max_abs_diff(&e2));
    assert!(err < 0.05, "{err}");
}

#[test]
fn transmission_holds_along_l() {
    let g = grid(1.0 / 32.0);
    let (f1, f2) = smooth([0.1, -0.3, 0.2, 0.2]);
    let p = solve_linearized(&LinearizedBoundary::from_fns(g, f1, f2).unwrap(), &LinearizedConfig::default()).unwrap();
    assert!(p.converged);
    for x in [-0.4, -0.2, 0.0, 0.2, 0.4] {
        let e = expansion_at(&p, &[x, 0.0], &ExpansionConfig::default()).unwrap();
        assert!(e.transmission_defect <= 0.05, "{e:?}");
    }
}

#[test]
fn ordered_data_gives_ordered_solutions() {
    let g = grid(1.0 / 16.0);
    let cfg = LinearizedConfig::default();
    let corpus = [
        ([0.0, -0.2, 0.1, 0.1], [0.2, -0.2, 0.1, 0.1]),
        ([0.0, 0.1, 0.1, -0.1], [0.0, 0.1, 0.25, -0.1]),
        ([-0.2, 0.0, 0.0, 0.0], [-0.2, 0.0, 0.3, 0.0]),
    ];
    for (lo, hi) in corpus {
        let (a1, a2) = smooth(lo);
        let (b1, b2) = smooth(hi);
        let pl = solve_linearized(&LinearizedBoundary::from_fns(g.clone(), &a1, &a2).unwrap(), &cfg).unwrap();
        let ph = solve_linearized(&LinearizedBoundary::from_fns(g.clone(), &b1, &b2).unwrap(), &cfg).unwrap();
        for idx in 0..g.len() {
            if g.is_box_boundary(idx) {
                assert!(pl.g1.at(idx) <= ph.g1.at(idx) + 1e-12 && pl.g2.at(idx) <= ph.g2.at(idx) + 1e-12);
            }
        }
        for idx in 0..g.len() {
            assert!(pl.g1.at(idx) <= ph.g1.at(idx) + 1e-8, "{:?}", g.point(idx));
            assert!(pl.g2.at(idx) <= ph.g2.at(idx) + 1e-8, "{:?}", g.point(idx));
        }
    }
}

#[test]
fn nonnegative_solves_stay_positive_near_l() {
    let g = grid(1.0 / 16.0);
    let (f1, f2) = smooth([0.35, 0.1, 0.1, -0.1]);
    let p = solve_linearized(&LinearizedBoundary::from_fns(g, f1, f2).unwrap(), &LinearizedConfig::default()).unwrap();
    let norm = p.g1.interpolate(&[0.0, 0.25, 0.0]).unwrap();
    assert!(norm > 0.0);
    let c = min_over_ball(&p, &[0.0, 0.0, 0.0], 0.05).unwrap() / norm;
    println!("Harnack constant on B_0.05: {c:.4}");
    assert!(c > 0.0);
}

#[test]
fn residual_of_converged_solves_is_at_solver_level() {
    let g = grid(1.0 / 16.0);
    let (f1, f2) = smooth([0.1, -0.3, 0.2, 0.2]);
    let p = solve_linearized(&LinearizedBoundary::from_fns(g, f1, f2).unwrap(), &LinearizedConfig::default()).unwrap();
    let r = weighted_harmonic_residual(&p, 0.2);
    assert!(r.g1 < 1e-6 && r.g2 < 1e-6, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn solves_are_linear(a in -0.5f64..0.5, b in -0.5f64..0.5, c in prop::array::uniform4(-0.2f64..0.2)) {
        let g = grid(1.0 / 8.0);
        let cfg = LinearizedConfig::default();
        let (f1, f2) = smooth([0.1, -0.3, 0.2, 0.2]);
        let (q1, q2) = smooth(c);
        let b1 = LinearizedBoundary::from_fns(g.clone(), f1, f2).unwrap();
        let b2 = LinearizedBoundary::from_fns(g.clone(), q1, q2).unwrap();
        let mix = b1.combine(a, &b2, b).unwrap();
        let s1 = solve_linearized(&b1, &cfg).unwrap();
        let s2 = solve_linearized(&b2, &cfg).unwrap();
        let sm = solve_linearized(&mix, &cfg).unwrap();
        for idx in 0..g.len() {
            let lin1 = a * s1.g1.at(idx) + b * s2.g1.at(idx);
            let lin2 = a * s1.g2.at(idx) + b * s2.g2.at(idx);
            prop_assert!((sm.g1.at(idx) - lin1).abs() < 1e-8);
            prop_assert!((sm.g2.at(idx) - lin2).abs() < 1e-8);
        }
    }
}
