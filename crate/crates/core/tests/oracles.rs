//! Numerical results against closed forms computed independently here.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use nlcal::field::Field;
use nlcal::functional::Discretization;
use nlcal::lagrangian::{make_lagrangian, standard_constant, Family, Kernel, LagrangianParams};
use nlcal::mesh::{self, DiscreteFunction, Domain, Growth, QuadratureRule};
use nlcal::nltv::{self, NodeSet};
use nlcal::verify;

/// `(-Δ)^s e^{-x²}` at the origin in one dimension.
fn gaussian_at_origin(s: f64) -> f64 {
    4f64.powf(s) * gamma(s + 0.5) / PI.sqrt()
}

#[test]
fn gaussian_principal_value_converges_to_closed_form() {
    for s in [0.25, 0.5, 0.75] {
        let exact = gaussian_at_origin(s);
        let err = |cells: usize| {
            let d = Domain::interval(-3.0, 3.0, cells);
            let g = DiscreteFunction::from_closed(&d, |p| (-p[0] * p[0]).exp(), Growth::Bounded(1.0), vec![]);
            (mesh::fractional_laplacian_pv(&g, &[0.0, 0.0], s).unwrap() - exact).abs() / exact
        };
        let (a, b) = (err(60), err(120));
        assert!(a < 1e-3, "s = {s}: relative error {a:e}");
        assert!(b <= a.max(1e-10), "s = {s}: {a:e} -> {b:e}");
    }
}

#[test]
fn dense_oracle_matches_gaussian_closed_form() {
    let s = 0.4;
    let v = verify::dense_fractional_laplacian(&|p| (-p[0] * p[0]).exp(), &[0.0, 0.0], 1, s, standard_constant(1, s), 8);
    let exact = gaussian_at_origin(s);
    assert!((v - exact).abs() < 1e-5 * exact, "{v} vs {exact}");
}

#[test]
fn standard_constant_matches_gamma_formula() {
    for s in [0.1, 0.5, 0.9] {
        for n in [1usize, 2] {
            let nf = n as f64;
            let c = s * 4f64.powf(s) * gamma(0.5 * nf + s) / (PI.powf(0.5 * nf) * gamma(1.0 - s));
            assert!((standard_constant(n, s) - c).abs() < 1e-12 * c);
        }
    }
}

#[test]
fn truncated_perimeter_of_a_half_line() {
    // ½∬|1_E(x) - 1_E(y)| 1_{|x-y|<r} over x < 0 < y is r²/2; the cutoff
    // makes the pair quadrature first order
    let k = Kernel::Truncated { radius: 0.5, height: 1.0 };
    let mut last = f64::INFINITY;
    for cells in [100, 200, 400] {
        let d = Domain::interval(-1.0, 1.0, cells);
        let set = NodeSet::half_space(&d, 0, 0.0, true);
        let err = (nltv::nonlocal_perimeter(&k, &d, &set).unwrap() - 0.125).abs();
        assert!(err <= 0.25 * d.h(0), "{cells}: error {err:e}");
        assert!(err < last, "{cells}: error {err:e} after {last:e}");
        last = err;
    }
}

#[test]
fn gaussian_perimeter_of_a_half_line() {
    // ∫₀^∞ z·h·e^{-z²/2σ²} dz = hσ²
    let sigma = 0.2;
    let k = Kernel::Gaussian { sigma, height: 1.0 };
    let d = Domain::interval(-2.0, 2.0, 200);
    let p = nltv::nonlocal_perimeter(&k, &d, &NodeSet::half_space(&d, 0, 0.0, true)).unwrap();
    assert!((p - sigma * sigma).abs() < 1e-3 * sigma * sigma, "{p}");
}

#[test]
fn interval_mean_curvature_under_truncated_kernel() {
    // H_E(x) = ∫ (1_{Eᶜ} - 1_E)(y) K(x - y) dy at the right endpoint of E = (-a, a)
    let (a, r) = (0.3, 0.2);
    let k = Kernel::Truncated { radius: r, height: 1.0 };
    let d = Domain::interval(-1.0, 1.0, 200);
    let set = NodeSet::from_fn(&d, |p| p[0].abs() < a, nltv::SetRule::Constant(false));
    let h = nltv::nonlocal_mean_curvature(&k, &d, &set, &[a, 0.0]).unwrap();
    assert!(h.abs() < 1e-9, "{h}");
    let (a, r) = (0.1, 0.5);
    let k = Kernel::Truncated { radius: r, height: 1.0 };
    let set = NodeSet::from_fn(&d, |p| p[0].abs() < a, nltv::SetRule::Constant(false));
    let h = nltv::nonlocal_mean_curvature(&k, &d, &set, &[a, 0.0]).unwrap();
    assert!((h - (2.0 * r - 4.0 * a)).abs() < 1e-9, "{h}");
}

#[test]
fn quadratic_energy_scales_and_ignores_constants() {
    let spec = make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5)).unwrap();
    let d = Domain::interval(0.0, 1.0, 80);
    let disc = Discretization::new(&spec, &d, &QuadratureRule::default(), Growth::Bounded(2.0)).unwrap();
    let f = |a: f64, b: f64| DiscreteFunction::from_closed(&d, move |p| a * (-4.0 * p[0] * p[0]).exp() + b, Growth::Bounded(2.0), vec![]);
    let e1 = disc.energy(&f(1.0, 0.0)).unwrap().value;
    let e3 = disc.energy(&f(3.0, 0.0)).unwrap().value;
    let shifted = disc.energy(&f(1.0, 0.7)).unwrap().value;
    assert!((e3 - 9.0 * e1).abs() < 1e-12 * e3);
    assert!((shifted - e1).abs() < 1e-12 * e1);
}

#[test]
fn leaf_parameter_inverts_arctan_leaves() {
    let f = Field::arctan_layer(-3.0, 2.0);
    for t in [-2.9, -1.0, 0.0, 0.7, 1.9] {
        for x in [-1.5, 0.0, 0.3, 4.0] {
            let p = [x, 0.0];
            let back = f.leaf_parameter(&p, f.leaf(t, &p)).unwrap();
            assert!((back - t).abs() < 1e-9, "t = {t}, x = {x}: {back}");
        }
    }
}
