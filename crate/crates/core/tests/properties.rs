use proptest::prelude::*;

use nlcal::field::Field;
use nlcal::functional::{Calibrator, Discretization};
use nlcal::gauss;
use nlcal::lagrangian::{make_lagrangian, Family, Kernel, LagrangianParams, Reaction};
use nlcal::mesh::{Domain, QuadratureRule};
use nlcal::nltv::{self, NodeSet, SetRule};
use nlcal::par;
use nlcal::verify::{CompetitorSet, Recipe};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 16, ..ProptestConfig::default() }
}

fn layer_disc(d: &Domain, field: &Field) -> Discretization {
    let spec = make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5).with_reaction(Reaction::SineLayer)).unwrap();
    Discretization::new(&spec, d, &QuadratureRule::default(), field.growth).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn perimeter_is_complement_symmetric(mask in prop::collection::vec(any::<bool>(), 30), outside in any::<bool>()) {
        let d = Domain::interval(0.0, 1.0, 30);
        let nodes = d.interior_nodes();
        let set = NodeSet::from_fn(&d, |p| mask[nodes.iter().position(|n| n == p).unwrap()], SetRule::Constant(outside));
        let k = Kernel::Gaussian { sigma: 0.1, height: 1.0 };
        let p = nltv::nonlocal_perimeter(&k, &d, &set).unwrap();
        let q = nltv::nonlocal_perimeter(&k, &d, &set.complement()).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!((p - q).abs() <= 1e-12 * p.max(1e-300), "{} vs {}", p, q);
        let direct = nltv::nltv_energy(&k, &d, &set.indicator()).unwrap();
        prop_assert_eq!(p.to_bits(), direct.to_bits());
    }

    #[test]
    fn calibration_bounds_energy_from_below(seed in any::<u64>(), amplitude in 0.05f64..0.5) {
        let d = Domain::interval(0.0, 1.0, 40);
        let field = Field::arctan_layer(-3.0, 2.0);
        let disc = layer_disc(&d, &field);
        let cal = Calibrator::new(&disc, &field, -0.5).unwrap();
        let set = CompetitorSet::generate(&field, -0.5, &d, Recipe::Mixed, 3, seed, amplitude);
        for c in &set.members {
            let e = disc.energy(&c.function).unwrap().value;
            let cv = cal.defining(&c.function).unwrap().value;
            prop_assert!(cv <= e + 1e-10 * e.abs().max(1.0), "{}: C = {} > E = {}", c.label, cv, e);
        }
    }

    #[test]
    fn calibration_collapses_on_every_leaf(t in -2.5f64..1.5) {
        let d = Domain::interval(0.0, 1.0, 40);
        let field = Field::arctan_layer(-3.0, 2.0);
        let disc = layer_disc(&d, &field);
        let leaf = field.leaf_function(&d, t);
        let c = Calibrator::new(&disc, &field, t).unwrap().defining(&leaf).unwrap();
        let e = disc.energy(&leaf).unwrap().value;
        prop_assert_eq!(c.breakdown["inner"], 0.0);
        prop_assert!((c.value - e).abs() <= 1e-12 * e.abs());
    }

    #[test]
    fn gauss_is_exact_for_polynomials(n in 1usize..12, coeffs in prop::collection::vec(-2.0f64..2.0, 24), a in -1.0f64..0.0, b in 0.1f64..2.0) {
        let deg = 2 * n - 1;
        let c = &coeffs[..=deg];
        let approx = gauss::integrate(n, a, b, |x| c.iter().rev().fold(0.0, |acc, k| acc * x + k));
        let exact: f64 = c.iter().enumerate().map(|(k, ck)| ck * (b.powi(k as i32 + 1) - a.powi(k as i32 + 1)) / (k as f64 + 1.0)).sum();
        prop_assert!((approx - exact).abs() <= 1e-11 * (1.0 + exact.abs()), "{} vs {}", approx, exact);
    }

    #[test]
    fn affine_leaf_parameter_is_an_inverse(t in -0.9f64..0.9, x in -3.0f64..3.0, slope in 0.1f64..3.0) {
        let f = Field::affine([slope, 0.0], 0.2, -1.0, 1.0);
        let p = [x, 0.0];
        let back = f.leaf_parameter(&p, f.leaf(t, &p)).unwrap();
        prop_assert!((back - t).abs() <= 1e-10);
    }

    #[test]
    fn lambda_grid_partitions_the_range(lo in -5.0f64..0.0, width in 0.01f64..10.0, points in 1usize..300) {
        let hi = lo + width;
        let g = nltv::lambda_grid(lo, hi, points);
        prop_assert_eq!(g.len(), points);
        let total: f64 = g.iter().map(|(_, w)| w).sum();
        prop_assert!((total - width).abs() <= 1e-12 * width.max(1.0));
        prop_assert!(g.iter().all(|(l, _)| *l > lo && *l < hi));
        prop_assert!(g.windows(2).all(|w| w[1].0 > w[0].0));
    }

    #[test]
    fn pairwise_sum_is_accurate(v in prop::collection::vec(-1e3f64..1e3, 0..500)) {
        let naive: f64 = v.iter().sum();
        let bound = v.len() as f64 * f64::EPSILON * v.iter().map(|x| x.abs()).sum::<f64>();
        prop_assert!((par::pairwise_sum(&v) - naive).abs() <= bound.max(1e-12));
    }

    #[test]
    fn sequential_and_parallel_energies_are_bit_equal(seed in any::<u64>()) {
        let d = Domain::interval(0.0, 1.0, 40);
        let field = Field::arctan_layer(-3.0, 2.0);
        let disc = layer_disc(&d, &field);
        let w = &CompetitorSet::generate(&field, -0.5, &d, Recipe::Bumps, 1, seed, 0.3).members[0].function;
        let par_e = disc.energy(w).unwrap().value;
        par::set_force_sequential(true);
        let seq_e = disc.energy(w).unwrap().value;
        par::set_force_sequential(false);
        prop_assert_eq!(par_e.to_bits(), seq_e.to_bits());
    }
}
