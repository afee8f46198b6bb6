//! Reverse-mode gradients against central finite differences.
//!
//! Hidden layers are ReLU, so a coordinate whose perturbation crosses a kink
//! has no derivative to compare. Such coordinates are recognised by their
//! second differences failing to scale quadratically and are excluded; the tests also bound
//! how many get excluded.

use mbnf_core::diffnet::{Activation, Mlp, MlpSpec};
use mbnf_core::flow::{FlowConfig, FlowModel};
use mbnf_core::sac::{Critic, ObsNormalizer, SacAgent, SacConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-4;

struct Check {
    max_rel: f64,
    compared: usize,
    kinks: usize,
}

/// Five-point central differences, whose truncation error is `O(H^4)`.
fn check_gradient(f: &dyn Fn(&[f64]) -> f64, params: &[f64], grad: &[f64]) -> Check {
    let f0 = f(params);
    let mut p = params.to_vec();
    let mut at = |i: usize, step: f64| {
        p[i] = params[i] + step;
        let v = f(&p);
        p[i] = params[i];
        v
    };
    let mut out = Check {
        max_rel: 0.0,
        compared: 0,
        kinks: 0,
    };
    for i in 0..params.len() {
        let (fp, fm, fp2, fm2) = (at(i, H), at(i, -H), at(i, 2.0 * H), at(i, -2.0 * H));
        // A smooth function's second differences scale by exactly 4 between
        // steps H and 2H up to O(H^4); a kink inside the stencil breaks that.
        let (d1, d2) = (fp - 2.0 * f0 + fm, fp2 - 2.0 * f0 + fm2);
        if (d2 - 4.0 * d1).abs() > 1e-9 * f0.abs().max(1.0) {
            out.kinks += 1;
            continue;
        }
        let fd = (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * H);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(FLOOR);
        out.max_rel = out.max_rel.max(rel);
        out.compared += 1;
    }
    out
}

/// Parameters drawn away from the exact zeros an initializer may produce.
fn random_params(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn mlp_parameter_and_input_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let acts = [Activation::Identity, Activation::Tanh, Activation::Relu];
    let (mut compared, mut kinks, mut worst) = (0, 0, 0.0f64);
    for case in 0..100 {
        let depth = rng.random_range(1..=3);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
        let spec = MlpSpec::new(widths.clone(), acts[case % 3]).unwrap();
        let n = spec.param_count();
        let net = Mlp::new(spec, random_params(n, 0.5, &mut rng)).unwrap();
        let x = normal_vec(widths[0], &mut rng);
        let up = normal_vec(*widths.last().unwrap(), &mut rng);
        let (gp, gx) = net.grad(&x, &up).unwrap();

        let dot = |y: Vec<f64>| y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let by_params = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            dot(n.forward(&x).unwrap())
        };
        let by_input = |xi: &[f64]| dot(net.forward(xi).unwrap());
        for c in [check_gradient(&by_params, net.params(), &gp), check_gradient(&by_input, &x, &gx)] {
            worst = worst.max(c.max_rel);
            compared += c.compared;
            kinks += c.kinks;
        }
    }
    assert!(worst < REL_TOL, "max relative error {worst:e}");
    assert!(kinks * 100 < compared, "{kinks} kinks out of {compared}");
}

#[test]
fn flow_nll_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut compared, mut kinks, mut worst) = (0, 0, 0.0f64);
    for case in 0..100 {
        let dim = 1 + case % 5;
        let cfg = FlowConfig {
            n_layers: rng.random_range(1..=3),
            hidden: vec![rng.random_range(2..=6)],
        };
        let mut flow = FlowModel::new(dim, cfg, &mut rng).unwrap();
        let params = random_params(flow.param_count(), 0.3, &mut rng);
        flow.set_params(&params).unwrap();
        let batch: Vec<Vec<f64>> = (0..4).map(|_| normal_vec(dim, &mut rng)).collect();
        let (_, grad) = flow.nll_and_grad(&batch).unwrap();
        let nll = |p: &[f64]| {
            let mut f = flow.clone();
            f.set_params(p).unwrap();
            -f.mean_log_prob(&batch).unwrap()
        };
        let c = check_gradient(&nll, &params, &grad);
        worst = worst.max(c.max_rel);
        compared += c.compared;
        kinks += c.kinks;
    }
    assert!(worst < REL_TOL, "max relative error {worst:e}");
    assert!(kinks * 100 < compared, "{kinks} kinks out of {compared}");
}

/// `Q(x, a) = sum_j c_j x_j - |a - a*|^2`, smooth in the action.
struct Bowl {
    center: Vec<f64>,
}

impl Critic for Bowl {
    fn value_and_grad(&self, x: &[f64], a: &[f64]) -> mbnf_core::Result<(f64, Vec<f64>)> {
        let lin: f64 = x.iter().enumerate().map(|(i, v)| 0.1 * (i + 1) as f64 * v).sum();
        let q = lin - a.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>();
        Ok((q, a.iter().zip(&self.center).map(|(a, c)| -2.0 * (a - c)).collect()))
    }
}

#[test]
fn actor_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut compared, mut kinks, mut worst) = (0, 0, 0.0f64);
    for case in 0..20 {
        let (obs_dim, act_dim) = (2 + case % 3, 1 + case % 2);
        let cfg = SacConfig {
            hidden: vec![8],
            alpha: 0.1 + 0.05 * case as f64,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(obs_dim, act_dim, cfg, ObsNormalizer::identity(obs_dim), &mut rng).unwrap();
        let params = random_params(agent.policy_net().params().len(), 0.3, &mut rng);
        agent.policy_net_mut().set_params(&params).unwrap();
        let obs: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(obs_dim, &mut rng)).collect();
        let refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
        let critic = Bowl {
            center: vec![0.4; act_dim],
        };
        let seed = rng.random::<u64>();
        let (_, grad) = agent.policy_gradient(&refs, &critic, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let loss = |p: &[f64]| {
            let mut a = agent.clone();
            a.policy_net_mut().set_params(p).unwrap();
            a.policy_gradient(&refs, &critic, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().0.loss
        };
        let c = check_gradient(&loss, &params, &grad);
        worst = worst.max(c.max_rel);
        compared += c.compared;
        kinks += c.kinks;
    }
    assert!(worst < REL_TOL, "max relative error {worst:e}");
    assert!(kinks * 100 < compared, "{kinks} kinks out of {compared}");
}
