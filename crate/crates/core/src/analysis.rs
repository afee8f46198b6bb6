//! Loss-landscape sharpness and transition-buffer export.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Mlp, Tape};
use crate::dynamics::{SampleKind, TransitionSample};
use crate::error::{Error, Result};
use crate::flow::FlowModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessResult {
    /// Dominant Hessian eigenvalue (largest magnitude, signed).
    pub lambda_max: f64,
    pub iterations: usize,
    /// `||Hv - lambda v|| / |lambda|` at the last iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Central-difference Hessian-vector product with step `1e-4 * (1 + ||theta||)`.
pub fn hessian_vector<F>(grad: &F, params: &[f64], v: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    let norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
    let eps = 1e-4 * (1.0 + norm);
    let shifted = |sign: f64| -> Vec<f64> { params.iter().zip(v).map(|(p, d)| p + sign * eps * d).collect() };
    let g_plus = grad(&shifted(1.0))?;
    let g_minus = grad(&shifted(-1.0))?;
    if g_plus.len() != params.len() || g_minus.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: g_plus.len(),
        });
    }
    Ok(g_plus.iter().zip(&g_minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Power iteration on the Hessian of the loss whose gradient is `grad`.
/// If `max_iter` runs out, the last estimate is returned with `converged = false`.
pub fn sharpness<F>(grad: &F, params: &[f64], tol: f64, max_iter: usize) -> Result<SharpnessResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + ?Sized,
{
    if params.is_empty() {
        return Err(Error::Empty("parameter vector"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ba4);
    let mut v: Vec<f64> = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut result = SharpnessResult {
        lambda_max: 0.0,
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for it in 1..=max_iter.max(1) {
        let hv = hessian_vector(grad, params, &v)?;
        let lambda: f64 = hv.iter().zip(&v).map(|(a, b)| a * b).sum();
        let hn = norm(&hv);
        if !lambda.is_finite() || !hn.is_finite() {
            return Err(Error::NonFinite("Hessian-vector product".into()));
        }
        let res: f64 = hv.iter().zip(&v).map(|(h, x)| (h - lambda * x).powi(2)).sum::<f64>().sqrt();
        result = SharpnessResult {
            lambda_max: lambda,
            iterations: it,
            residual: if lambda != 0.0 { res / lambda.abs() } else { res },
            converged: false,
        };
        if hn == 0.0 {
            result.converged = true;
            break;
        }
        if result.residual < tol {
            result.converged = true;
            break;
        }
        v = hv.iter().map(|x| x / hn).collect();
    }
    Ok(result)
}

/// Gradient of `mean((net(x) - y)^2)` with respect to the network's parameters.
pub fn mse_grad(net: &Mlp, params: &[f64], inputs: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    let mut net = net.clone();
    net.set_params(params)?;
    let mut grad = vec![0.0; params.len()];
    let mut tape = Tape::default();
    let n = inputs.len() as f64;
    for (x, y) in inputs.iter().zip(targets) {
        net.forward_tape(x, &mut tape)?;
        let err = tape.output()[0] - y;
        net.backward(&tape, &[2.0 * err / n], &mut grad)?;
    }
    Ok(grad)
}

/// Sharpness of a critic's squared-error loss on a fixed regression set.
pub fn critic_sharpness(net: &Mlp, inputs: &[Vec<f64>], targets: &[f64], tol: f64, max_iter: usize) -> Result<SharpnessResult> {
    if inputs.is_empty() {
        return Err(Error::Empty("critic regression set"));
    }
    let grad = |p: &[f64]| mse_grad(net, p, inputs, targets);
    sharpness(&grad, net.params(), tol, max_iter)
}

/// Sharpness of the flow's mean negative log-likelihood on `data`.
pub fn flow_sharpness(flow: &FlowModel, data: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<SharpnessResult> {
    if data.is_empty() {
        return Err(Error::Empty("flow data"));
    }
    let grad = |p: &[f64]| {
        let mut f = flow.clone();
        f.set_params(p)?;
        Ok(f.nll_and_grad(data)?.1)
    };
    sharpness(&grad, &flow.params(), tol, max_iter)
}

/// Writes `kind,s_*,a_*,s_next_*,r,delta_*` with `delta = s_next - s`, real rows first.
pub fn export_buffer(path: &Path, real: &[TransitionSample], model: &[TransitionSample]) -> Result<usize> {
    let first = real.first().or(model.first()).ok_or(Error::Empty("transition buffers"))?;
    let (n_s, n_a) = (first.s.len(), first.a.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["kind".to_string()];
    header.extend((1..=n_s).map(|i| format!("s_{i}")));
    header.extend((1..=n_a).map(|i| format!("a_{i}")));
    header.extend((1..=n_s).map(|i| format!("s_next_{i}")));
    header.push("r".into());
    header.extend((1..=n_s).map(|i| format!("delta_{i}")));
    w.write_record(&header)?;
    let mut rows = 0;
    for x in real.iter().chain(model) {
        if x.s.len() != n_s || x.s_next.len() != n_s || x.a.len() != n_a {
            return Err(Error::DimensionMismatch {
                expected: n_s,
                got: x.s.len(),
            });
        }
        let mut rec = vec![x.kind.as_str().to_string()];
        rec.extend(x.s.iter().chain(&x.a).chain(&x.s_next).map(f64::to_string));
        rec.push(x.r.to_string());
        rec.extend(x.s_next.iter().zip(&x.s).map(|(b, a)| (b - a).to_string()));
        w.write_record(&rec)?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}

/// Reads a file written by [`export_buffer`]; `t` and `done` are not stored and come back as defaults.
pub fn read_buffer_export(path: &Path) -> Result<Vec<(TransitionSample, Vec<f64>)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix) && h[prefix.len()..].parse::<usize>().is_ok()).count();
    let (n_s, n_a) = (count("s_"), count("a_"));
    if header.len() != 2 + 3 * n_s + n_a || header.get(0) != Some("kind") {
        return Err(Error::Parse(format!("unexpected buffer export header in {}", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let kind = match &rec[0] {
            "real" => SampleKind::Real,
            "model" => SampleKind::Model,
            other => return Err(Error::Parse(format!("unknown sample kind {other:?}"))),
        };
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
            .collect::<Result<_>>()?;
        let (s, rest) = vals.split_at(n_s);
        let (a, rest) = rest.split_at(n_a);
        let (s_next, rest) = rest.split_at(n_s);
        let sample = TransitionSample {
            s: s.to_vec(),
            a: a.to_vec(),
            s_next: s_next.to_vec(),
            r: rest[0],
            done: false,
            kind,
            t: 0,
        };
        out.push((sample, rest[1..].to_vec()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(diag: Vec<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
        move |p: &[f64]| Ok(p.iter().zip(&diag).map(|(x, d)| d * x).collect())
    }

    #[test]
    fn diagonal_fixture() {
        let r = sharpness(&quadratic(vec![3.0, 1.0]), &[0.3, -0.2], 1e-9, 500).unwrap();
        assert!((r.lambda_max - 3.0).abs() < 1e-3);
        assert!(r.converged);
    }

    #[test]
    fn identity_hessian() {
        let r = sharpness(&quadratic(vec![1.0; 6]), &[0.0; 6], 1e-9, 50).unwrap();
        assert!((r.lambda_max - 1.0).abs() < 1e-3);
    }

    #[test]
    fn negative_dominant_eigenvalue_keeps_sign() {
        let r = sharpness(&quadratic(vec![-4.0, 1.0]), &[1.0, 1.0], 1e-9, 500).unwrap();
        assert!((r.lambda_max + 4.0).abs() < 1e-3);
    }

    #[test]
    fn flags_non_convergence() {
        let r = sharpness(&quadratic(vec![1.0, 0.999, 0.5]), &[0.0; 3], 1e-12, 3).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn mse_grad_of_linear_model() {
        use crate::diffnet::{Activation, MlpSpec};
        let net = Mlp::new(MlpSpec::new(vec![1, 1], Activation::Identity).unwrap(), vec![2.0, 0.0]).unwrap();
        // loss = mean((w x + b - y)^2) over x = 1, y = 0 -> grad = (2(w+b), 2(w+b)).
        let g = mse_grad(&net, &[2.0, 0.5], &[vec![1.0]], &[0.0]).unwrap();
        assert_eq!(g, vec![5.0, 5.0]);
    }

    fn sample(kind: SampleKind, v: f64) -> TransitionSample {
        TransitionSample {
            s: vec![v, v + 0.1],
            a: vec![0.25],
            s_next: vec![v + 1.0 / 3.0, v - 2.0],
            r: v * 7.0,
            done: false,
            kind,
            t: 0,
        }
    }

    #[test]
    fn export_round_trip() {
        let real: Vec<_> = (0..3).map(|i| sample(SampleKind::Real, i as f64 * 0.37)).collect();
        let model: Vec<_> = (0..2).map(|i| sample(SampleKind::Model, -(i as f64) * 1.9)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.csv");
        assert_eq!(export_buffer(&path, &real, &model).unwrap(), 5);
        let back = read_buffer_export(&path).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.iter().filter(|(x, _)| x.kind == SampleKind::Real).count(), 3);
        for ((x, delta), orig) in back.iter().zip(real.iter().chain(&model)) {
            assert_eq!(x, orig);
            for ((d, b), a) in delta.iter().zip(&x.s_next).zip(&x.s) {
                assert!((d - (b - a)).abs() < 1e-12);
            }
        }
        assert!(matches!(export_buffer(&path, &[], &[]), Err(Error::Empty(_))));
    }
}
