//! Manufactured-solution check of the `φ → ψ = rφ` transform and a
//! quadrature check of the tortoise coordinate.

use nullwave::{minkowski, reissner_nordstrom, tilde_transform, Background, PotentialSet};

const TEXTS: [&str; 6] = ["sin(u)*cos(v)", "r/(1+r)", "cos(u+v)", "1/r", "0.3", "exp(-r)"];

fn coefficients(u: f64, v: f64, r: f64) -> [f64; 6] {
    [u.sin() * v.cos(), r / (1.0 + r), (u + v).cos(), 1.0 / r, 0.3, (-r).exp()]
}

// φ = A(u) B(v)
fn phi(u: f64, v: f64) -> f64 {
    (-0.1 * u).exp() * (0.7 * u).cos() * ((0.3 * v).sin() + 2.0)
}

fn phi_jet(u: f64, v: f64) -> (f64, f64, f64, f64) {
    let a = (-0.1 * u).exp() * (0.7 * u).cos();
    let da = (-0.1 * u).exp() * (-0.1 * (0.7 * u).cos() - 0.7 * (0.7 * u).sin());
    let b = (0.3 * v).sin() + 2.0;
    let db = 0.3 * (0.3 * v).cos();
    (a * b, da * b, a * db, da * db)
}

/// The `ψ`-equation residual and `-Ω² r / 4` times the `φ`-equation residual;
/// the two agree for any `φ` when the transform is right.
fn mismatch(bg: &dyn Background<f64>, eps: f64, u: f64, v: f64) -> (f64, f64) {
    let ps = PotentialSet::from_expressions(eps, TEXTS).unwrap();
    let d = 1e-3;
    let r = |u: f64, v: f64| bg.geometry(u, v).r;
    let psi = |u: f64, v: f64| r(u, v) * phi(u, v);

    let r0 = r(u, v);
    let r_u = (r(u + d, v) - r(u - d, v)) / (2.0 * d);
    let r_v = (r(u, v + d) - r(u, v - d)) / (2.0 * d);
    let omega2 = bg.geometry(u, v).omega2;

    let (f, f_u, f_v, f_uv) = phi_jet(u, v);
    let c = coefficients(u, v, r0);
    let (v0, v1, vq) = (eps * c[0] + c[3], eps * c[1] + c[4], eps * c[2] + c[5]);
    let box_phi = -4.0 / omega2 * (f_uv + r_u / r0 * f_v + r_v / r0 * f_u);
    let phi_side = box_phi - (v0 * f + v1 * f_u + vq * r0 * f_v) / (r0 * r0);

    let p = psi(u, v);
    let p_u = (psi(u + d, v) - psi(u - d, v)) / (2.0 * d);
    let p_v = (psi(u, v + d) - psi(u, v - d)) / (2.0 * d);
    let p_uv = (psi(u + d, v + d) - psi(u + d, v - d) - psi(u - d, v + d) + psi(u - d, v - d)) / (4.0 * d * d);
    let t = tilde_transform(&ps, bg, u, v);
    let psi_side = p_uv - (t.s0 * p + t.s1 * p_u + t.sq * r0 * p_v) / (r0 * r0);

    (psi_side, -omega2 * r0 / 4.0 * phi_side)
}

#[test]
fn transform_matches_manufactured_solution_on_minkowski() {
    let bg = minkowski();
    for &(u, v) in &[(1.0, 5.0), (3.0, 40.0), (-2.0, 7.5), (10.0, 13.0)] {
        for eps in [0.0, 0.05, -0.2] {
            let (got, want) = mismatch(&bg, eps, u, v);
            assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "({u},{v}) eps {eps}: {got} vs {want}");
        }
    }
}

#[test]
fn transform_matches_manufactured_solution_on_reissner_nordstrom() {
    for (m, e) in [(1.0, 0.0), (1.0, 0.5), (1.0, 0.95)] {
        let rn = reissner_nordstrom::<f64>(m, e).unwrap();
        for (u, r) in [(0.0, 4.0), (5.0, 8.0), (20.0, 30.0), (-3.0, 100.0)] {
            let v = u + rn.tortoise(r).unwrap();
            let g = rn.geometry(u, v);
            assert!((g.r - r).abs() < 1e-9 * r);
            assert!((g.omega2 - 4.0 * rn.lapse(r)).abs() < 1e-12);
            for eps in [0.0, 0.1] {
                let (got, want) = mismatch(&rn, eps, u, v);
                assert!((got - want).abs() < 1e-6 * (1.0 + want.abs()), "M {m} e {e} r {r}: {got} vs {want}");
            }
        }
    }
}

/// Composite Gauss-Legendre (5 points) on `[a, b]` split into `n` panels.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [0.568_888_888_888_889, 0.478_628_670_499_366, 0.478_628_670_499_366, 0.236_926_885_056_189, 0.236_926_885_056_189];
    let hp = (b - a) / n as f64;
    (0..n)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * hp;
            X.iter().zip(W).map(|(x, w)| w * f(mid + 0.5 * hp * x)).sum::<f64>() * 0.5 * hp
        })
        .sum()
}

#[test]
fn tortoise_differences_match_quadrature_of_inverse_lapse() {
    for (m, e) in [(1.0, 0.0), (1.0, 0.6), (1.0, 0.99), (2.0, 1.0)] {
        let rn = reissner_nordstrom::<f64>(m, e).unwrap();
        let rp = rn.r_plus();
        for (r1, r2) in [(rp + 0.5, rp + 3.0), (3.0 * m, 50.0), (10.0, 1000.0)] {
            let exact = rn.tortoise(r2).unwrap() - rn.tortoise(r1).unwrap();
            let quad = gauss_legendre(|r| 1.0 / rn.lapse(r), r1, r2, 400);
            assert!((exact - quad).abs() < 1e-9 * quad.abs(), "M {m} e {e} [{r1},{r2}]: {exact} vs {quad}");
        }
        let x = rn.tortoise(rp + 1e-6).unwrap();
        let r = rn.radius(x);
        assert!((r - rp - 1e-6).abs() < 1e-12, "near-horizon inversion {r}");
    }
}
