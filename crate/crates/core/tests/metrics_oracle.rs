use mbnf_core::metrics::compute_metrics;
use proptest::prelude::*;

/// Straight-from-the-definitions reference, written independently of the library.
fn reference(curve: &[f64]) -> [Option<f64>; 7] {
    let n = curve.len();
    let rets: Vec<f64> = (1..n).map(|t| curve[t] / curve[t - 1] - 1.0).collect();
    let cum = curve[n - 1] / curve[0] - 1.0;
    let years = rets.len() as f64 / 252.0;
    let ann = (curve[n - 1] / curve[0]).powf(1.0 / years) - 1.0;
    let m = rets.iter().sum::<f64>() / rets.len() as f64;
    let vol = if rets.len() > 1 {
        (rets.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (rets.len() - 1) as f64 * 252.0).sqrt()
    } else {
        0.0
    };
    let mut mdd: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            mdd = mdd.min(curve[j] / curve[i] - 1.0);
        }
    }
    // R^2 = 1 - SS_res / SS_tot of the least-squares line through (t, ln(A_t / A_0))
    let y: Vec<f64> = curve.iter().map(|v| (v / curve[0]).ln()).collect();
    let xs: Vec<f64> = (0..n).map(|t| t as f64).collect();
    let (xm, ym) = (xs.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let slope = xs.iter().zip(&y).map(|(x, v)| (x - xm) * (v - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
    let icpt = ym - slope * xm;
    let ss_res: f64 = xs.iter().zip(&y).map(|(x, v)| (v - icpt - slope * x).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let stability = (n >= 4 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    [
        Some(ann),
        Some(cum),
        Some(vol),
        (vol > 0.0).then(|| ann / vol),
        (mdd < 0.0).then(|| ann / -mdd),
        stability,
        Some(mdd),
    ]
}

fn curves() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-0.05f64..0.05, 4..400), 10.0f64..1e6).prop_map(|(rets, a0)| {
        let mut c = vec![a0];
        for r in rets {
            let last = *c.last().unwrap();
            c.push(last * (1.0 + r));
        }
        c
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn agrees_with_reference(curve in curves()) {
        let got = compute_metrics(&curve).unwrap().values();
        for (k, (g, r)) in got.iter().zip(reference(&curve)).enumerate() {
            match (g, r) {
                (Some(g), Some(r)) => prop_assert!((g - r).abs() <= 1e-9 * r.abs().max(1.0), "metric {k}: {g} vs {r}"),
                (None, None) => {}
                _ => prop_assert!(false, "metric {k}: {g:?} vs {r:?}"),
            }
        }
    }

    #[test]
    fn scale_free(curve in curves(), c in 0.01f64..100.0) {
        let a = compute_metrics(&curve).unwrap();
        let scaled: Vec<f64> = curve.iter().map(|v| v * c).collect();
        let b = compute_metrics(&scaled).unwrap();
        prop_assert!((a.cumulative_return - b.cumulative_return).abs() < 1e-9);
        prop_assert!((a.max_drawdown - b.max_drawdown).abs() < 1e-12);
    }
}

#[test]
fn fixture_values() {
    let m = compute_metrics(&[100.0, 120.0, 90.0, 130.0]).unwrap();
    assert_eq!(m.max_drawdown, -0.25);
    assert_eq!(m.cumulative_return, 0.30);
}
