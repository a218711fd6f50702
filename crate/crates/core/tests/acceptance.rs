//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.

use std::io::Write;
use std::time::{Duration, Instant};

use nullwave::background::{reissner_nordstrom, verify_h0, Background, Minkowski, SampleRegion, DEFAULT_H0_CEILING};
use nullwave::cli::{self, RunConfig};
use nullwave::diagnostics::{
    energy_series, energy_series_from_field, gronwall_integral, hardy_check_outgoing, multiplier_identity_residual,
    Identity, SeriesOptions, HARDY_OUTGOING_CONSTANT,
};
use nullwave::evolve::{convergence_order, evolve_mode, Evolution, InitialData, ModeField, NullGrid};
use nullwave::potential::{verify_h1, verify_h3, Builtin, Coefficient, PotentialSet, DEFAULT_POTENTIAL_CEILING};
use nullwave::ratefit::{
    compare_to_theorem, fit_exponent, series_points, upper_envelope, Claim, FitResult, Quantity, Verdict,
};
use rand::{rngs::StdRng, Rng, SeedableRng};

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn within(&mut self, elapsed: Duration, limit: Duration) {
        let ok = elapsed <= limit;
        self.check(ok, format!("runtime {:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()));
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn show(f: &FitResult<f64>) -> String {
    format!(
        "exponent {:.4} ± {:.1e} over [{:.0}, {:.0}] ({} pts, plateau {:.3}), target {:.4}, verdict {}",
        f.exponent,
        f.stderr,
        f.window.0,
        f.window.1,
        f.points,
        f.plateau_quality,
        f.target.unwrap_or(f64::NAN),
        f.verdict.map_or("-".to_string(), |v| v.to_string())
    )
}

// 1 -------------------------------------------------------------------------

fn flat_transport() -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let (center, width) = (10.0, 4.0);
    let data = InitialData::compact(1.0, center, width);
    let grid = NullGrid::new(0.0, 40.0, 0.0, 80.0, 0.05, 4.0).unwrap();
    let field = evolve_mode(&Minkowski, &PotentialSet::zero(), grid, data, 0).unwrap();
    let f = |x: f64| data.outgoing.eval(x);
    let mut worst = 0.0f64;
    for i in 0..field.rows() {
        for j in field.layout.first_valid[i]..field.cols() {
            worst = worst.max((field.psi(i, j) - (f(grid.v(j)) - f(grid.u(i)))).abs());
        }
    }
    out.check(worst <= 1e-12, format!("max |ψ - (F(v) - F(u))| = {worst:.2e} (≤ 1e-12)"));

    let series = energy_series_from_field(&field, &Minkowski, SeriesOptions { stride: 10, ..Default::default() }).unwrap();
    let clear = center + width;
    let after: Vec<f64> = series.records.iter().filter(|r| r.u > clear).map(|r| r.e).collect();
    let nonzero = after.iter().filter(|&&e| e != 0.0).count();
    let before = series.records.iter().filter(|r| r.u < clear - width).all(|r| r.e > 0.0);
    out.check(
        !after.is_empty() && nonzero == 0 && before,
        format!("E(u) == 0 exactly on {} records with u > {clear}; {nonzero} nonzero", after.len()),
    );
    out.within(t.elapsed(), Duration::from_secs(5));
    out
}

// 2 -------------------------------------------------------------------------

fn convergence() -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let rn = reissner_nordstrom(1.0, 0.5).unwrap();
    // The inverse-square case runs on an exterior rectangle: near the centre
    // the solution behaves like r^β with non-integer β, which caps any
    // finite-difference order there.
    let cases: [(&str, &dyn Background<f64>, u32, f64, NullGrid<f64>, InitialData<f64>); 3] = [
        (
            "(a) flat l=1",
            &Minkowski,
            1,
            0.0,
            NullGrid::new(0.0, 40.0, 0.0, 80.0, 0.2, 10.0).unwrap(),
            InitialData::gaussian(1.0, 20.0, 3.0),
        ),
        (
            "(b) Minkowski eps=0.05",
            &Minkowski,
            0,
            0.05,
            NullGrid::new(0.0, 20.0, 30.0, 80.0, 0.1, 30.0).unwrap(),
            InitialData::compact(1.0, 45.0, 8.0),
        ),
        (
            "(c) RN(1, 0.5) eps=0.05",
            &rn,
            0,
            0.05,
            NullGrid::new(0.0, 40.0, 0.0, 80.0, 0.2, 10.0).unwrap(),
            InitialData::gaussian(1.0, 20.0, 3.0),
        ),
    ];
    for (name, bg, ell, eps, grid, data) in cases {
        let ps = PotentialSet::inverse_square(eps);
        let evo = Evolution::new(bg, &ps, grid, data, ell);
        let probes = [(0.5 * (grid.u0 + grid.u_f), grid.v_max - 10.0), (grid.u0 + 0.25 * (grid.u_f - grid.u0), 0.5 * (grid.v0 + grid.v_max) + 10.0)];
        let rep = convergence_order(&evo, &probes, 5).unwrap();
        match rep.order_range() {
            Some((lo, hi)) => out.check(
                lo >= 1.8 && hi <= 2.2,
                format!("{name}: orders in [{lo:.3}, {hi:.3}] (band [1.8, 2.2])"),
            ),
            None => out.check(false, format!("{name}: differences at rounding level, no order")),
        }
    }
    out.within(t.elapsed(), mins(3));
    out
}

// 3 -------------------------------------------------------------------------

fn sharp(eps: f64) -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let ps = PotentialSet::inverse_square(eps);
    let grid = NullGrid::new(0.0, 1000.0, 0.0, 20000.0, 0.1, 2.0).unwrap();
    let evo = Evolution::new(&Minkowski, &ps, grid, InitialData::compact(1.0, 3.0, 2.0), 0);
    let series = energy_series(&evo, SeriesOptions::pointwise_only(10)).unwrap();
    for (q, claim, tol, what) in [
        (Quantity::PointwiseAtR, Claim::Sharp, 0.1, "|φ|(u, v_R(u))"),
        (Quantity::RadiationField, Claim::SharpRadiation, 0.05, "|ψ|(u, v_max)"),
    ] {
        let fit = fit_exponent(&series_points(&series, q, 0.0).unwrap(), None).unwrap();
        let fit = compare_to_theorem(&fit, claim, eps);
        let target = claim.target(eps);
        out.check(
            (fit.exponent - target).abs() <= tol,
            format!("eps={eps} {what}: {} (|Δ| ≤ {tol})", show(&fit)),
        );
    }
    out.within(t.elapsed(), mins(5));
    out
}

fn sharp_benchmark() -> Outcome {
    let mut out = Outcome::new();
    for eps in [0.05, 0.2] {
        let o = sharp(eps);
        out.pass &= o.pass;
        out.lines.extend(o.lines);
    }
    out
}

// 4 -------------------------------------------------------------------------

fn energy_run(ps: &PotentialSet<f64>, ell: u32, h: f64, t_energy: bool) -> nullwave::EnergySeries {
    let grid = NullGrid::new(0.0, 1000.0, 0.0, 1e5, h, 2.0).unwrap();
    let evo = Evolution::new(&Minkowski, ps, grid, InitialData::compact(1.0, 3.0, 2.0), ell);
    let opts = SeriesOptions { stride: (1.0 / h).round() as usize, t_energy, ..Default::default() };
    energy_series(&evo, opts).unwrap()
}

fn theorem_bounds() -> Outcome {
    let mut out = Outcome::new();
    let eps = 0.05;
    let ps = PotentialSet::inverse_square(eps);
    let window = Some((100.0, 1000.0));
    let s0 = energy_run(&ps, 0, 0.2, true);
    let s1 = energy_run(&ps, 1, 0.2, false);
    for (series, q, claim, margin, what) in [
        (&s0, Quantity::Energy, Claim::Energy, 0.3, "energy l=0"),
        (&s0, Quantity::TEnergy, Claim::TEnergy, 0.5, "T-commuted energy l=0"),
        (&s1, Quantity::Energy, Claim::HigherModes, 0.5, "energy l=1"),
        (&s0, Quantity::PointwiseAtR, Claim::PointwiseR, 0.2, "|φ| at r=R l=0"),
    ] {
        let pts = series_points(series, q, 0.05).unwrap();
        match fit_exponent(&pts, window) {
            Ok(fit) => {
                let fit = compare_to_theorem(&fit, claim, eps);
                let bound = claim.target(eps) + margin;
                out.check(
                    fit.exponent <= bound && fit.verdict == Some(Verdict::MeetsBound),
                    format!("{what}: {} (≤ {bound:.2}, meets-bound)", show(&fit)),
                );
            }
            Err(e) => out.check(false, format!("{what}: {e}")),
        }
    }
    out
}

// 5 -------------------------------------------------------------------------

/// `∫_{u1}^{u2} ∫_{R}^{v_max - u} r^k dr du` in closed form.
fn power_double_integral(k: f64, r0: f64, v_max: f64, u1: f64, u2: f64) -> f64 {
    let m = k + 1.0;
    let outer = ((v_max - u1).powf(m + 1.0) - (v_max - u2).powf(m + 1.0)) / (m + 1.0);
    (outer - (u2 - u1) * r0.powf(m)) / m
}

fn hardy_closed_forms(out: &mut Outcome) {
    let r0 = 4.0;
    let (u1, u2, v_max) = (1.0, 5.0, 1210.0);
    let grid = NullGrid::new(0.0, 10.0, 0.0, v_max, 0.05, r0).unwrap();
    let mut worst_rel = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut all = true;
    for a in [0.5f64, 1.0, 2.0] {
        let f = ModeField::from_fn(0, grid, &Minkowski, |u: f64, v: f64| (v - u).powf(-a)).unwrap();
        for q in [0.0, 0.5, 1.0, 1.5] {
            let rep = hardy_check_outgoing(&f, &Minkowski, u1, u2, q, HARDY_OUTGOING_CONSTANT).unwrap();
            let k = q - 3.0 - 2.0 * a;
            let lhs = power_double_integral(k, r0, v_max, u1, u2);
            let rhs = a * a * lhs / (2.0 - q).powi(2) + r0.powf(q - 2.0) * (u2 - u1) * r0.powf(-2.0 * a) / (2.0 - q);
            worst_rel = worst_rel.max(((rep.lhs - lhs) / lhs).abs()).max(((rep.rhs - rhs) / rhs).abs());
            worst_ratio = worst_ratio.max(lhs / rhs);
            all &= rep.pass && !rep.inconclusive && lhs / rhs <= HARDY_OUTGOING_CONSTANT;
        }
    }
    out.check(
        all && worst_rel <= 1e-3,
        format!(
            "Hardy (outgoing), f = r^-a: quadrature vs closed form rel. err {worst_rel:.1e} (≤ 1e-3), \
             worst exact ratio {worst_ratio:.3} (≤ {HARDY_OUTGOING_CONSTANT})"
        ),
    );
}

const REGRESSION_BASE: &str = r#"
name = "regression"
modes = [0, 1]

[background]
kind = "minkowski"

[potential]
epsilon = 0.05
w0 = 1.0

[grid]
u0 = 0.0
uF = 100.0
v0 = 0.0
vmax = 2000.0
h = 0.2
R = 4.0

[data]
family = "compact-polynomial"
center = 6.0
width = 3.0

[diagnostics]
stride = 5
t_energy = true

[checks]
hardy = true
hardy_in = true
iled = true
boundedness = true
boundedness_t = true
"#;

fn regression_configs() -> Vec<(&'static str, String)> {
    let rn = REGRESSION_BASE
        .replace("kind = \"minkowski\"", "kind = \"rn\"\nmass = 1.0\ncharge = 0.5")
        .replace("R = 4.0", "R = 10.0")
        .replace("center = 6.0", "center = 20.0");
    vec![
        ("Minkowski eps=0.05", REGRESSION_BASE.to_string()),
        ("Minkowski eps=0", REGRESSION_BASE.replace("epsilon = 0.05", "epsilon = 0.0")),
        ("Minkowski eps=-0.1", REGRESSION_BASE.replace("epsilon = 0.05", "epsilon = -0.1")),
        ("oscillating w0", REGRESSION_BASE.replace("w0 = 1.0", "w0 = { builtin = \"sin_u_plus_log_r\" }")),
        ("RN(1, 0.5) eps=0.05", rn),
    ]
}

fn gronwall_vs_quadrature(out: &mut Outcome) {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (simpson(f, a, m), simpson(f, m, b));
        if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
            l + r + (l + r - whole) / 15.0
        } else {
            adaptive(f, a, m, l, 0.5 * tol, depth - 1) + adaptive(f, m, b, r, 0.5 * tol, depth - 1)
        }
    }
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = rng.gen_range(0.1..5.0);
        let b = rng.gen_range(0.0..5.0);
        let u1 = rng.gen_range(0.05..10.0);
        let u2 = u1 + rng.gen_range(0.1..100.0);
        let f = |u: f64| 1.0 / (a * u.sqrt() + b);
        let quad = adaptive(&f, u1, u2, simpson(&f, u1, u2), 1e-14, 50);
        worst = worst.max((gronwall_integral(a, b, u1, u2).unwrap() - quad).abs());
    }
    out.check(worst <= 1e-10, format!("gronwall integral vs adaptive Simpson on 20 tuples: max |Δ| = {worst:.1e} (≤ 1e-10)"));
}

fn inequality_suite() -> Outcome {
    let mut out = Outcome::new();
    hardy_closed_forms(&mut out);
    for (name, text) in regression_configs() {
        let cfg = RunConfig::from_toml(&text).unwrap();
        let (report, _) = cli::execute(&cfg).unwrap();
        for m in &report.modes {
            let failed: Vec<String> = m
                .checks
                .iter()
                .filter(|c| !c.pass || c.inconclusive)
                .map(|c| format!("{} ({}) ratio {:.3} C {}", c.name, c.note, c.ratio(), c.constant))
                .collect();
            let worst = m
                .checks
                .iter()
                .map(|c| format!("{} {:.3}/{}", c.name, c.ratio(), c.constant))
                .collect::<Vec<_>>()
                .join(", ");
            out.check(
                failed.is_empty(),
                format!("{name} l={}: {} checks [{worst}]{}", m.ell, m.checks.len(), if failed.is_empty() { String::new() } else { format!(" failing: {}", failed.join("; ")) }),
            );
        }
    }
    gronwall_vs_quadrature(&mut out);
    out
}

// 6 -------------------------------------------------------------------------

fn identity_residuals() -> Outcome {
    let mut out = Outcome::new();
    let ps = PotentialSet::inverse_square(0.05);
    let run = |h: f64| {
        let grid = NullGrid::new(0.0, 12.0, 30.0, 70.0, h, 30.0).unwrap();
        evolve_mode(&Minkowski, &ps, grid, InitialData::gaussian(1.0, 40.0, 2.0), 0).unwrap()
    };
    let (coarse, fine) = (run(0.05), run(0.025));
    for which in [Identity::Rp1, Identity::Rp2] {
        for p in [1.0, 2.0] {
            let a = multiplier_identity_residual(&coarse, &Minkowski, &ps, 2.0, 10.0, p, which).unwrap().relative;
            let b = multiplier_identity_residual(&fine, &Minkowski, &ps, 2.0, 10.0, p, which).unwrap().relative;
            out.check(
                a <= 1e-3 && (3.2..=4.8).contains(&(a / b)),
                format!("{which:?} p={p}: relative residual {a:.2e} at h=0.05 (≤ 1e-3), ratio to h/2 {:.2} ([3.2, 4.8])", a / b),
            );
        }
    }
    out
}

// 7 -------------------------------------------------------------------------

fn assumption_checkers() -> Outcome {
    let mut out = Outcome::new();
    let rn = reissner_nordstrom(1.0, 0.5).unwrap();
    let rho = (rn.tortoise(20.0).unwrap(), rn.tortoise(2000.0).unwrap());
    let h0 = verify_h0(&rn, &SampleRegion::new((0.0, 100.0), rho, 3, 200), DEFAULT_H0_CEILING).unwrap();
    out.check(h0.pass, format!("RN(1, 0.5) satisfies H0: {}", h0.pass));

    let region = SampleRegion::new((1.0, 200.0), (20.0, 2000.0), 41, 64);
    let osc = PotentialSet::with_w0(0.05, Coefficient::parse("w0", "sin(u + log(r))").unwrap());
    let h1 = verify_h1(&osc, &Minkowski, &region, DEFAULT_POTENTIAL_CEILING).unwrap();
    let h3 = verify_h3(&osc, &Minkowski, &region, DEFAULT_POTENTIAL_CEILING).unwrap();
    out.check(h1.pass && !h3.pass, format!("w0 = sin(u + log r): H1 {} (want true), H3 {} (want false)", h1.pass, h3.pass));

    let grow = PotentialSet::with_w0(0.05, Coefficient::parse("w0", "r^0.5").unwrap());
    let h1 = verify_h1(&grow, &Minkowski, &region, DEFAULT_POTENTIAL_CEILING).unwrap();
    out.check(!h1.pass, format!("w0 = r^(1/2): H1 {} (want false)", h1.pass));
    out
}

// 8 -------------------------------------------------------------------------

fn oscillating_potential() -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let eps = 0.05;
    let ps = PotentialSet::with_w0(eps, Coefficient::Builtin(Builtin::SinUPlusLogR));
    let series = energy_run(&ps, 0, 0.25, false);
    let window = Some((30.0, 1000.0));
    for (q, claim, bound, what) in [
        (Quantity::Energy, Claim::Energy, -2.6, "energy"),
        (Quantity::RadiationExtrapolated, Claim::Radiation, -0.8, "radiation field"),
    ] {
        let pts = upper_envelope(&series_points(&series, q, 0.05).unwrap());
        match fit_exponent(&pts, window) {
            Ok(fit) => {
                let fit = compare_to_theorem(&fit, claim, eps);
                out.check(fit.exponent <= bound, format!("{what} (upper envelope): {} (≤ {bound})", show(&fit)));
            }
            Err(e) => out.check(false, format!("{what}: {e}")),
        }
    }
    out.within(t.elapsed(), mins(5));
    out
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "exact flat transport", flat_transport),
        (2, "convergence order", convergence),
        (3, "sharp scale-critical exponents", sharp_benchmark),
        (4, "theorem upper bounds at eps = 0.05", theorem_bounds),
        (5, "inequality property suite", inequality_suite),
        (6, "multiplier-identity residuals", identity_residuals),
        (7, "assumption checkers", assumption_checkers),
        (8, "oscillating-potential robustness", oscillating_potential),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!("criterion {n} ({name}): {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        for l in &o.lines {
            println!("    {l}");
        }
        std::io::stdout().flush().ok();
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
