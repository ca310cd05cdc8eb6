//! Gauss-Legendre rules on `[-1, 1]` and mapped intervals.

use std::sync::OnceLock;

const MAX_ORDER: usize = 64;

static TABLES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();

fn compute(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Nodes and weights of the `n`-point rule on `[-1, 1]`.
pub fn rule(n: usize) -> (&'static [f64], &'static [f64]) {
    assert!((1..=MAX_ORDER).contains(&n), "Gauss order {n} out of range");
    let t = TABLES.get_or_init(|| (1..=MAX_ORDER).map(compute).collect());
    let (x, w) = &t[n - 1];
    (x, w)
}

/// Integrate `f` over `[a, b]` with the `n`-point rule.
pub fn integrate<F: FnMut(f64) -> f64>(n: usize, a: f64, b: f64, mut f: F) -> f64 {
    let (x, w) = rule(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for k in 0..n {
        acc += w[k] * f(mid + half * x[k]);
    }
    acc * half
}

/// Composite rule over `panels` equal subintervals.
pub fn integrate_composite<F: FnMut(f64) -> f64>(
    n: usize,
    panels: usize,
    a: f64,
    b: f64,
    mut f: F,
) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        acc += integrate(n, lo, lo + h, &mut f);
    }
    acc
}
