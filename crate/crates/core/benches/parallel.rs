use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nlcal::field::Field;
use nlcal::functional::{Calibrator, Discretization};
use nlcal::lagrangian::{make_lagrangian, Family, LagrangianParams, Reaction};
use nlcal::mesh::{Domain, QuadratureRule};
use nlcal::par;
use nlcal::verify::{CompetitorSet, Recipe};

fn modes() -> Vec<(&'static str, bool)> {
    let mut m = vec![("seq", true)];
    if par::parallel_available() {
        m.push(("par", false));
    }
    m
}

fn setup(cells: usize) -> (Discretization, Field, Domain) {
    let spec = make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5).with_reaction(Reaction::SineLayer)).unwrap();
    let d = Domain::interval(0.0, 1.0, cells);
    let field = Field::arctan_layer(-3.0, 2.0);
    let disc = Discretization::new(&spec, &d, &QuadratureRule::default(), field.growth).unwrap();
    (disc, field, d)
}

fn energy(c: &mut Criterion) {
    let mut g = c.benchmark_group("energy");
    for cells in [100, 400] {
        let (disc, field, d) = setup(cells);
        let u = field.leaf_function(&d, -0.5);
        for (name, seq) in modes() {
            par::set_force_sequential(seq);
            g.bench_with_input(BenchmarkId::new(name, cells), &u, |b, u| b.iter(|| disc.energy(u).unwrap().value));
        }
    }
    par::set_force_sequential(false);
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let mut g = c.benchmark_group("calibration-defining");
    g.sample_size(10);
    let (disc, field, d) = setup(100);
    let cal = Calibrator::new(&disc, &field, -0.5).unwrap();
    let w = CompetitorSet::generate(&field, -0.5, &d, Recipe::Bumps, 1, 1, 0.3).members.remove(0).function;
    for (name, seq) in modes() {
        par::set_force_sequential(seq);
        g.bench_function(name, |b| b.iter(|| cal.defining(&w).unwrap().value));
    }
    par::set_force_sequential(false);
    g.finish();
}

criterion_group!(benches, energy, calibration);
criterion_main!(benches);
