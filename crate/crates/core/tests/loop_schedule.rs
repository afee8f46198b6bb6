use mbnf_core::dynamics::{EnsembleConfig, SampleKind};
use mbnf_core::env::{EnvConfig, Market};
use mbnf_core::flow::{FitOptions, FlowConfig};
use mbnf_core::mbrl::{run_loop, LoopConfig, LoopSchedule, ModelKind};
use mbnf_core::sac::SacConfig;
use mbnf_core::synth::{synthetic_market, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(schedule: LoopSchedule) -> LoopConfig {
    LoopConfig {
        schedule,
        env: EnvConfig {
            use_indicators: false,
            ..EnvConfig::default()
        },
        sac: SacConfig {
            hidden: vec![8],
            batch_size: 8,
            ..SacConfig::default()
        },
        flow: FlowConfig {
            n_layers: 2,
            hidden: vec![4],
        },
        flow_fit: FitOptions {
            batch_size: 4,
            ..FitOptions::default()
        },
        ensemble: EnsembleConfig {
            members: 2,
            hidden: vec![4],
            batch_size: 4,
            lr: 1e-3,
        },
    }
}

#[test]
fn buffer_sizes_follow_the_counting_law() {
    let market = Market::new(
        synthetic_market(
            &SynthConfig {
                n_stocks: 2,
                n_days: 40,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let env_steps = rng.random_range(8..=60);
        let refit_every = rng.random_range(5..=env_steps);
        let sched = LoopSchedule {
            env_steps,
            refit_every,
            model_steps: rng.random_range(1..=3),
            updates_per_step: rng.random_range(0..=2),
            horizon: rng.random_range(1..=3),
            rollout_batch: rng.random_range(1..=12),
            warmup: rng.random_range(0..=env_steps),
            env_capacity: rng.random_range(1..=80),
            agent_capacity: rng.random_range(1..=80),
        };
        let kind = if case % 2 == 0 { ModelKind::Mbnf } else { ModelKind::Mbpo };
        let train = 0..rng.random_range(3..=40);
        let out = run_loop(&market, train, &tiny_config(sched.clone()), kind, case, None).unwrap();
        let (want_env, want_agent) = sched.expected_sizes();
        assert_eq!(out.env_buffer.len(), want_env, "case {case}: {sched:?}");
        assert_eq!(out.agent_buffer.len(), want_agent, "case {case}: {sched:?}");
        assert_eq!(out.refits.len(), env_steps / refit_every);
        assert_eq!(out.steps.len(), env_steps);
        assert!(out.env_buffer.iter().all(|x| x.kind == SampleKind::Real));
        assert!(out.agent_buffer.iter().all(|x| x.kind == SampleKind::Model));
        // capacity evicts the oldest real transitions first
        assert_eq!(out.env_buffer.iter().last().unwrap().t, out.steps.last().unwrap().t);
    }
}
