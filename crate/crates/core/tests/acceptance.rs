//! Acceptance checks, one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nlcal::field::Field;
use nlcal::functional::{Calibrator, Discretization};
use nlcal::lagrangian::{self, make_lagrangian, Family, Kernel, LagrangianParams, LagrangianSpec, Reaction};
use nlcal::mesh::{self, DiscreteFunction, Domain, Growth, QuadratureRule};
use nlcal::nltv;
use nlcal::verify::{self, CompetitorSet, ProbeConfig, Recipe, Touch};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    ensure(t.elapsed() <= budget, format!("took {:.1?}, budget {budget:?}", t.elapsed()))
}

fn gagliardo() -> LagrangianSpec {
    make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5)).unwrap()
}

fn layer_lagrangian() -> LagrangianSpec {
    make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5).with_reaction(Reaction::SineLayer)).unwrap()
}

fn affine_field() -> Field {
    Field::affine([1.0, 0.0], 0.0, -1.0, 1.0)
}

fn arctan_field() -> Field {
    Field::arctan_layer(-3.0, 2.0)
}

fn unit(cells: usize) -> Domain {
    Domain::interval(0.0, 1.0, cells)
}

/// `refined ≤ max(coarse, floor)`: improvement, or both at roundoff.
fn improves(coarse: f64, refined: f64, floor: f64) -> bool {
    refined <= coarse.max(floor)
}

fn calibration_identity() -> Outcome {
    let t = Instant::now();
    let d = unit(200);
    let spec = gagliardo();
    let field = affine_field();
    let disc = Discretization::new(&spec, &d, &QuadratureRule::default(), field.growth).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for &t0 in &[-0.6, -0.3, 0.0, 0.3, 0.6] {
        let leaf = field.leaf_function(&d, t0);
        let cal = Calibrator::new(&disc, &field, t0).map_err(|e| e.to_string())?;
        let c = cal.defining(&leaf).map_err(|e| e.to_string())?;
        let e = disc.energy(&leaf).map_err(|e| e.to_string())?;
        ensure(c.breakdown["inner"] == 0.0 && c.breakdown["reaction"] == 0.0, format!("calibration term not zero at t = {t0}"))?;
        worst = worst.max((c.value - e.value).abs() / e.value.abs());
    }
    ensure(worst <= 1e-12, format!("relative gap {worst:e}"))?;
    within(t, Duration::from_secs(10))?;
    Ok(format!("worst relative gap {worst:e} over 5 leaves, {:.1?}", t.elapsed()))
}

struct FieldCase {
    name: &'static str,
    spec: LagrangianSpec,
    field: Field,
    t0: f64,
    seed: u64,
}

fn field_cases() -> Vec<FieldCase> {
    vec![
        FieldCase { name: "affine", spec: gagliardo(), field: affine_field(), t0: 0.0, seed: 42 },
        FieldCase { name: "arctan", spec: layer_lagrangian(), field: arctan_field(), t0: -0.5, seed: 7 },
    ]
}

fn competitors(c: &FieldCase, d: &Domain, count: usize) -> CompetitorSet {
    CompetitorSet::generate(&c.field, c.t0, d, Recipe::Mixed, count, c.seed, 0.2)
}

fn calibration_inequality() -> Outcome {
    let t = Instant::now();
    let layer = verify::layer_identity_check(&Domain::interval(-2.0, 2.0, 400), 1e-3).map_err(|e| e.to_string())?;
    ensure(layer.passed(), "layer oracle failed".into())?;
    let rule = QuadratureRule::default();
    let mut out = vec![];
    for c in field_cases() {
        let mut worst = vec![];
        for cells in [200, 400] {
            let d = unit(cells);
            let cert = verify::certify_calibration(&c.spec, &c.field, c.t0, &d, &competitors(&c, &d, 20), &rule);
            let m = cert.detail("bound_worst_relative_margin").unwrap_or(f64::NAN);
            ensure(cert.passed() && m >= -1e-10, format!("{} at {cells} cells: margin {m:e}, {:?}", c.name, cert.verdict))?;
            worst.push(m);
        }
        ensure(worst[1] >= worst[0].min(0.0) - 1e-10, format!("{} worst margin degrades: {worst:?}", c.name))?;
        out.push(format!("{} {:.3e} -> {:.3e}", c.name, worst[0], worst[1]));
    }
    within(t, Duration::from_secs(300))?;
    Ok(format!("worst (E - C)/scale {}, {:.1?}", out.join(", "), t.elapsed()))
}

fn null_lagrangian() -> Outcome {
    let c = &field_cases()[0];
    let rule = QuadratureRule::default();
    let spread = |cells: usize| {
        let d = unit(cells);
        let cert = verify::certify_calibration(&c.spec, &c.field, c.t0, &d, &competitors(c, &d, 10), &rule);
        cert.detail("null_spread").unwrap_or(f64::NAN)
    };
    let (a, b) = (spread(200), spread(400));
    ensure(a <= 1e-3 && b <= 4e-4 && improves(a, b, 1e-12), format!("spread {a:e} -> {b:e}"))?;
    Ok(format!("relative spread {a:e} -> {b:e}"))
}

fn nltv_kernel() -> Kernel {
    Kernel::Truncated { radius: 0.5, height: 1.0 }
}

fn equivalence() -> Outcome {
    let rule = QuadratureRule::default();
    let mut cases = field_cases();
    cases.push(FieldCase {
        name: "nonelliptic",
        spec: lagrangian::nonelliptic_square(1),
        field: affine_field(),
        t0: 0.0,
        seed: 3,
    });
    cases.push(FieldCase {
        name: "total-variation",
        spec: nltv::tv_lagrangian(&nltv_kernel(), 1).map_err(|e| e.to_string())?,
        field: affine_field(),
        t0: 0.0,
        seed: 11,
    });
    let mut out = vec![];
    for c in &cases {
        let mut gaps = vec![];
        for cells in [100, 200] {
            let d = unit(cells);
            let cert = verify::certify_calibration_equivalence(&c.spec, &c.field, c.t0, &d, &competitors(c, &d, 3), &rule);
            ensure(cert.passed(), format!("{} at {cells} cells: {:?}", c.name, cert.counterexample))?;
            gaps.push(cert.detail("worst_gap").unwrap());
        }
        ensure(improves(gaps[0], gaps[1], 1e-12), format!("{} gap grows {gaps:?}", c.name))?;
        out.push(format!("{} {:.2e} -> {:.2e}", c.name, gaps[0], gaps[1]));
    }
    Ok(format!("defining vs alternative gaps {}", out.join(", ")))
}

fn minimality() -> Outcome {
    let rule = QuadratureRule::default();
    let d = unit(200);
    let mut total = 0;
    let mut out = vec![];
    for c in field_cases() {
        let set = competitors(&c, &d, 20);
        total += set.len();
        let m = verify::certify_minimality(&c.spec, &c.field, c.t0, &d, &set, &rule);
        ensure(m.passed() && m.margin >= -1e-10, format!("{}: minimality margin {:e}", c.name, m.margin))?;
        let cal = verify::certify_calibration(&c.spec, &c.field, c.t0, &d, &set, &rule);
        let bound = cal.detail("bound_worst_relative_margin").unwrap();
        ensure((m.margin - bound).abs() <= 1e-6 * bound.abs().max(1e-3), format!("{}: margins disagree {:e} vs {bound:e}", c.name, m.margin))?;
        out.push(format!("{} {:.4e} (calibration {:.4e})", c.name, m.margin, bound));
    }
    ensure(total == 40, format!("{total} competitors"))?;
    Ok(format!("40 competitors, worst (E(w) - E(u))/scale {}", out.join(", ")))
}

fn ellipticity_gate() -> Outcome {
    let bad = lagrangian::nonelliptic_square(1);
    let gate = lagrangian::check_ellipticity(&bad, 64).map(|c| c.passed()).unwrap_or(false);
    ensure(!gate, "non-elliptic square passed the gate".into())?;
    let catalog = lagrangian::elliptic_catalog(1);
    ensure(catalog.len() == 6, format!("{} families", catalog.len()))?;
    for spec in &catalog {
        let ok = lagrangian::check_ellipticity(spec, 64).map(|c| c.passed()).unwrap_or(false);
        ensure(ok, format!("{} failed the gate", spec.id()))?;
    }
    let d = unit(100);
    let field = affine_field();
    let set = CompetitorSet::generate(&field, 0.0, &d, Recipe::Bumps, 500, 3, 0.2);
    let cert = verify::certify_calibration(&bad, &field, 0.0, &d, &set, &QuadratureRule::default());
    let m = cert.detail("bound_worst_relative_margin").unwrap_or(0.0);
    ensure(m < -1e-10, format!("no C > E violation among 500 competitors, worst {m:e}"))?;
    let first = cert.counterexample.as_ref().map(|c| c.description.clone()).unwrap_or_default();
    Ok(format!("gate rejects the square, accepts 6 families; violation '{first}', worst {m:.3e}"))
}

fn energy_comparison() -> Outcome {
    let t = Instant::now();
    let spec = make_lagrangian(
        Family::FractionalQuadratic,
        LagrangianParams::fractional(1, 0.5).with_reaction(Reaction::Tilted { base: Box::new(Reaction::SineLayer), slope: 0.25 }),
    )
    .unwrap();
    let d = Domain::interval(-2.0, 2.0, 400);
    let u = DiscreteFunction::from_closed(&d, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![]);
    let phi = nlcal::field::Paraboloid { center: [0.0, 0.0], value: 0.0, slope: [2.0 / PI, 0.0], opening: 0.5 };
    let nb = ([-1.0, -1.0], [1.0, 1.0]);
    let zero = nlcal::field::sliding_weak_field(&u, phi, nb, 0.25, 0.0).map_err(|e| e.to_string())?;
    let z = verify::energy_comparison_check(&spec, &zero, &verify::DEFAULT_EPS_SCHEDULE).map_err(|e| e.to_string())?;
    ensure(z.margin == 0.0, format!("T = 0 margin {:e}", z.margin))?;
    let (wf, c0) = verify::fit_sliding_field(&spec, &u, phi, nb, 0.25, 0.5).map_err(|e| e.to_string())?;
    let cert = verify::energy_comparison_check(&spec, &wf, &[0.02, 0.01, 0.005, 0.0025]).map_err(|e| e.to_string())?;
    let drop = cert.detail("energy_drop").unwrap();
    let graph = cert.detail("active_graph_measure").unwrap();
    ensure(cert.passed(), format!("inequality fails: margin {:e} tol {:e}", cert.margin, cert.tolerance))?;
    ensure(c0 > 0.0 && drop > 0.0, format!("c0 {c0:e}, drop {drop:e}"))?;
    ensure(drop >= 0.5 * c0 * graph, format!("drop {drop:e} < 0.5 c0 |A| = {:e}", 0.5 * c0 * graph))?;
    within(t, Duration::from_secs(300))?;
    Ok(format!(
        "T = 0 margin 0; T = {:.4e}: margin {:.2e} (tol {:.2e}), drop {drop:.4e} >= 0.5 c0 |A| = {:.4e}",
        wf.t_max,
        cert.margin,
        cert.tolerance,
        0.5 * c0 * graph
    ))
}

fn viscosity() -> Outcome {
    let d = Domain::interval(-2.0, 2.0, 400);
    let u = DiscreteFunction::from_closed(&d, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![]);
    let cfg = ProbeConfig { count: 20, radius: 0.05, ..Default::default() };
    let spec = layer_lagrangian();
    let sup = verify::viscosity_supersolution_test(&spec, &d, &u, &cfg).map_err(|e| e.to_string())?;
    let sub = verify::viscosity_subsolution_test(&spec, &d, &u, &cfg).map_err(|e| e.to_string())?;
    ensure(sup.passed() && sub.passed(), format!("layer margins {:e} / {:e}", sup.margin, sub.margin))?;
    ensure(sup.detail("skipped_points") == Some(0.0), "layer probes skipped points".into())?;

    let s = 0.75;
    let spec = make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, s)).unwrap();
    let d = Domain::interval(-1.0, 1.0, 200);
    let corner = DiscreteFunction::from_closed(&d, |p| p[0].abs(), Growth::Linear { odd: false }, vec![[0.0, 0.0]]);
    let cfg = ProbeConfig { points: vec![[0.0, 0.0]], radius: 0.25, oracle_density: Some(10), ..Default::default() };
    let c = verify::viscosity_supersolution_test(&spec, &d, &corner, &cfg).map_err(|e| e.to_string())?;
    let gap = c.detail("oracle_relative_gap").unwrap_or(f64::INFINITY);
    ensure(!c.passed() && c.margin < 0.0, format!("corner margin {:e}", c.margin))?;
    ensure(gap <= 1e-2, format!("dense oracle gap {gap:e}"))?;
    // φ = g x - q x²/2 inside |x| < r, |x| outside: c (2 q √r - 4 / √r)
    let (q, r) = (cfg.min_opening, 0.5f64);
    let closed = lagrangian::standard_constant(1, s) * (2.0 * q * r.sqrt() - 4.0 / r.sqrt());
    ensure((c.margin - closed).abs() <= 1e-4 * closed.abs(), format!("corner {:e} vs closed form {closed:e}", c.margin))?;
    Ok(format!(
        "layer margins {:.3e} / {:.3e}; corner margin {:.6} (closed form {:.6}, dense oracle gap {gap:.2e})",
        sup.margin, sub.margin, c.margin, closed
    ))
}

fn strong_comparison() -> Outcome {
    let d = unit(40);
    let u = DiscreteFunction::from_closed(&d, |p| 0.4 * (3.0 * p[0]).sin() - 0.1, Growth::Bounded(1.0), vec![]);
    let mut worst = f64::INFINITY;
    for spec in lagrangian::elliptic_catalog(1) {
        for (k, (v, x0)) in verify::ordered_touching_pairs(&u, 100, 2024, 0.5).iter().enumerate() {
            let c = verify::strong_comparison_probe(&spec, &d, &u, v, x0).map_err(|e| format!("{}: {e}", spec.id()))?;
            ensure(c.passed() && c.margin >= -c.tolerance, format!("{} pair {k}: margin {:e}", spec.id(), c.margin))?;
            worst = worst.min(c.margin);
        }
    }
    let field = arctan_field();
    let set = CompetitorSet::generate(&field, -0.5, &d, Recipe::Bumps, 30, 5, 0.2);
    let nodes = d.interior_nodes();
    let mut agree = 0.0f64;
    let mut touched = 0;
    for c in &set.members {
        if let Touch::Interior { t, x, .. } = verify::first_touching_leaf(&field, -0.5, &c.function, &d) {
            let i = nodes.iter().position(|n| *n == x).ok_or("touch off the nodes")?;
            let tx = field.leaf_parameter(&x, c.function.values[i]).map_err(|e| e.to_string())?;
            agree = agree.max((tx - t).abs());
            touched += 1;
        }
    }
    ensure(touched > 0 && agree <= 1e-8, format!("{touched} touches, parameter gap {agree:e}"))?;
    Ok(format!("600 pairs over 6 families, worst margin {worst:.3e}; {touched} touches agree to {agree:.1e}"))
}

fn coarea_and_forms() -> Outcome {
    let t = Instant::now();
    let k = nltv_kernel();
    let field = affine_field();
    let ramp = |d: &Domain| {
        let u = field.leaf_function(d, 0.0);
        let v = d.interior_nodes().iter().zip(&u.values).map(|(p, v)| v + 0.15 * (PI * p[0]).sin()).collect();
        DiscreteFunction::from_values(d, v, u.exterior.clone(), u.growth)
    };
    let d = unit(100);
    let w = ramp(&d);
    let g64 = nltv::coarea_check(&k, &d, &w, 64).map_err(|e| e.to_string())?;
    let g128 = nltv::coarea_check(&k, &d, &w, 128).map_err(|e| e.to_string())?;
    let (a, b) = (g64.detail("relative_gap").unwrap(), g128.detail("relative_gap").unwrap());
    ensure(g64.passed() && a <= 1e-2 && improves(a, b, 1e-12), format!("coarea gaps {a:e} -> {b:e}"))?;
    let mut out = vec![];
    for (name, seed) in [("ramp", None), ("bumps", Some(13u64))] {
        let mut gaps = vec![];
        for (cells, levels) in [(100, 64), (200, 128)] {
            let d = unit(cells);
            let w = match seed {
                None => ramp(&d),
                Some(s) => CompetitorSet::generate(&field, 0.0, &d, Recipe::Bumps, 1, s, 0.3).members[0].function.clone(),
            };
            let f = nltv::nltv_calibration_forms(&k, &d, &field, 0.0, &w, levels).map_err(|e| e.to_string())?;
            gaps.push(f.worst_gap());
        }
        ensure(gaps[0] <= 1e-2 && gaps[1] <= 1e-2 && improves(gaps[0], gaps[1], 1e-12), format!("{name} forms {gaps:?}"))?;
        out.push(format!("{name} {:.2e} -> {:.2e}", gaps[0], gaps[1]));
    }
    within(t, Duration::from_secs(300))?;
    Ok(format!("coarea gap {a:.2e} -> {b:.2e}; three-form gaps {}", out.join(", ")))
}

fn operator_sanity() -> Outcome {
    let d = Domain::interval(-1.0, 1.0, 50);
    let affine = DiscreteFunction::from_closed(&d, |p| 2.0 * p[0] + 1.0, Growth::Linear { odd: true }, vec![]);
    let mut worst = 0.0f64;
    for s in [0.3, 0.5, 0.7] {
        for x in [-0.77, -0.1, 0.0, 0.42, 0.9] {
            let v = mesh::fractional_laplacian_pv(&affine, &[x, 0.0], s).map_err(|e| e.to_string())?;
            worst = worst.max(v.abs());
        }
    }
    ensure(worst <= 1e-6, format!("affine PV {worst:e}"))?;
    let layer = verify::layer_identity_check(&Domain::interval(-2.0, 2.0, 400), 1e-3).map_err(|e| e.to_string())?;
    let dense = layer.detail("dense_oracle_gap").unwrap();
    ensure(dense <= 1e-5, format!("dense oracle disagrees with 1/π at x = 1: {dense:e}"))?;
    ensure(layer.passed(), format!("layer residual {:e}", layer.detail("residual_sup").unwrap()))?;
    Ok(format!(
        "affine PV <= {worst:.1e}; layer residual {:.2e}; dense oracle gap {dense:.1e}",
        layer.detail("residual_sup").unwrap()
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_all(threads: usize, out: &Path) -> Result<(), String> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    ensure(!configs.is_empty(), "no shipped configs".into())?;
    for c in configs {
        let status = Command::new(env!("CARGO_BIN_EXE_nlcal"))
            .args(["--threads", &threads.to_string(), "run", "--config"])
            .arg(&c)
            .arg("--out")
            .arg(out)
            .env_remove(nlcal::cli::OUT_DIR_ENV)
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.code() == Some(0), format!("{} exited {:?}", c.display(), status.code()))?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_all(1, a.path())?;
    run_all(4, b.path())?;
    let mut names: Vec<_> = std::fs::read_dir(a.path()).map_err(|e| e.to_string())?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect();
    names.sort();
    let mut json = 0;
    for n in &names {
        let x = std::fs::read(a.path().join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(n)).map_err(|e| format!("{n:?} missing in second run: {e}"))?;
        ensure(x == y, format!("{n:?} differs between thread counts"))?;
        json += n.to_string_lossy().ends_with(".json") as usize;
    }
    Ok(format!("{json} JSON reports byte-identical with 1 and 4 threads, every config exits 0"))
}

fn main() {
    let criteria: [Check; 12] = [
        ("calibration identity on leaves", calibration_identity),
        ("calibration inequality", calibration_inequality),
        ("null-Lagrangian spread", null_lagrangian),
        ("defining and alternative forms", equivalence),
        ("minimality", minimality),
        ("ellipticity gate", ellipticity_gate),
        ("energy comparison on a weak field", energy_comparison),
        ("viscosity tests", viscosity),
        ("strong comparison probe", strong_comparison),
        ("coarea and calibration forms", coarea_and_forms),
        ("operator sanity", operator_sanity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match r {
            Ok(msg) => println!("criterion {:>2} PASS  {name}: {msg} [{:.1?}]", k + 1, t.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {msg} [{:.1?}]", k + 1, t.elapsed());
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
