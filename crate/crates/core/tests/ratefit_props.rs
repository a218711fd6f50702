use nullwave::ratefit::{compare_with, upper_envelope, Tolerance};
use nullwave::{compare_to_theorem, fit_exponent, Claim, Verdict};
use proptest::prelude::*;

fn power_law(c: f64, a: f64, u0: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|k| u0 * 1.05f64.powi(k as i32)).map(|u| (u, c * u.powf(a))).collect()
}

proptest! {
    #[test]
    fn pure_power_laws_are_recovered(c in 1e-6f64..1e6, a in -6.0f64..1.0, u0 in 0.5f64..50.0, n in 20usize..120) {
        let fit = fit_exponent(&power_law(c, a, u0, n), Some((u0, 1e300))).unwrap();
        prop_assert!((fit.exponent - a).abs() < 1e-9, "{} vs {a}", fit.exponent);
        prop_assert!(fit.stderr < 1e-9);
        prop_assert!(fit.plateau_quality < 1e-9);
        prop_assert_eq!(fit.points, n);
    }

    #[test]
    fn fit_is_scale_invariant(a in -5.0f64..0.0, c in 1e-3f64..1e3, lambda in 0.1f64..10.0, wiggle in 0.0f64..0.3) {
        let base: Vec<(f64, f64)> = power_law(1.0, a, 1.0, 80)
            .into_iter()
            .map(|(u, y)| (u, y * (1.0 + wiggle * (3.0 * u.ln()).sin())))
            .collect();
        let window = (2.0, 40.0);
        let f0 = fit_exponent(&base, Some(window)).unwrap();
        let scaled_y: Vec<_> = base.iter().map(|&(u, y)| (u, c * y)).collect();
        let f1 = fit_exponent(&scaled_y, Some(window)).unwrap();
        let scaled_u: Vec<_> = base.iter().map(|&(u, y)| (lambda * u, y)).collect();
        let f2 = fit_exponent(&scaled_u, Some((lambda * window.0, lambda * window.1))).unwrap();
        prop_assert!((f0.exponent - f1.exponent).abs() < 1e-9);
        prop_assert!((f0.stderr - f1.stderr).abs() < 1e-9);
        prop_assert!((f0.exponent - f2.exponent).abs() < 1e-9);
        prop_assert_eq!(f0.points, f2.points);
    }

    #[test]
    fn bound_verdicts_are_monotone_in_the_exponent(eps in -0.2f64..0.2, a in -6.0f64..0.0, da in 0.0f64..2.0) {
        let claims = [Claim::Energy, Claim::Radiation, Claim::PointwiseR, Claim::PointwiseBulk, Claim::TEnergy, Claim::HigherModes];
        for claim in claims {
            let faster = compare_to_theorem(&fit_exponent(&power_law(1.0, a - da, 1.0, 60), None).unwrap(), claim, eps);
            let slower = compare_to_theorem(&fit_exponent(&power_law(1.0, a, 1.0, 60), None).unwrap(), claim, eps);
            if slower.verdict == Some(Verdict::MeetsBound) {
                prop_assert_eq!(faster.verdict, Some(Verdict::MeetsBound), "{:?}", claim);
            }
            let expected = a <= claim.target(eps) + eps.abs().sqrt() + 2.0 * slower.stderr;
            prop_assert_eq!(slower.verdict == Some(Verdict::MeetsBound), expected);
        }
    }

    #[test]
    fn sharp_verdicts_are_symmetric_about_the_target(eps in 0.0f64..0.5, off in -0.3f64..0.3) {
        for (claim, tol) in [(Claim::Sharp, 0.1), (Claim::SharpRadiation, 0.05)] {
            let a = claim.target(eps) + off;
            let fit = compare_to_theorem(&fit_exponent(&power_law(1.0, a, 1.0, 60), None).unwrap(), claim, eps);
            let want = if off.abs() <= tol - 1e-9 { Verdict::SaturatesSharp } else if off.abs() > tol + 1e-9 { Verdict::Fails } else { continue };
            prop_assert_eq!(fit.verdict, Some(want));
        }
    }

    #[test]
    fn envelope_dominates_and_does_not_increase(ys in proptest::collection::vec(-10.0f64..10.0, 1..80)) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(k, &y)| (1.0 + k as f64, y)).collect();
        let env = upper_envelope(&pts);
        prop_assert_eq!(env.len(), pts.len());
        for (k, &(u, m)) in env.iter().enumerate() {
            prop_assert_eq!(u, pts[k].0);
            prop_assert!(m >= pts[k].1.abs());
            if k + 1 < env.len() {
                prop_assert!(env[k + 1].1 <= m);
            }
        }
    }
}

#[test]
fn non_power_law_is_inconclusive_under_any_claim() {
    let pts: Vec<(f64, f64)> = (1..200).map(|k| k as f64).map(|u| (u, (-u / 20.0).exp())).collect();
    let fit = fit_exponent(&pts, None).unwrap();
    assert!(!fit.is_power_law());
    for claim in Claim::ALL {
        let judged = compare_with(&fit, claim, 0.1, Tolerance::Fixed(100.0));
        assert_eq!(judged.verdict, Some(Verdict::Inconclusive), "{claim:?}");
    }
}
