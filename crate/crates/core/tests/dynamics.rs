mod common;

use common::{load_config, small_config};
use pathrl_core::config::ExperimentConfig;
use pathrl_core::rewards::{CenteringKind, Component, RewardWeights};
use pathrl_core::theory::{expected_length, sigmoid, train_stop_only};
use pathrl_core::trainer::{collapse_demo, pretrain, run_warmup, Environment, Trainer};

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Length trend (last fifth minus first fifth) below and above the pooled
/// normalized mean.
fn offset_trends(seed: u64) -> (f64, f64) {
    let cfg = ExperimentConfig::default()
        .with_overrides(&[
            "train.estimator=std",
            "train.lr=5",
            "train.batch_size=32",
            "train.epochs=50",
            "rewards.beta=0",
            "rewards.gamma=0",
        ])
        .unwrap()
        .with_overrides(&[format!("seed={seed}")])
        .unwrap();
    let env = Environment::build(&cfg).unwrap();
    let (prior, _) = pretrain(&cfg, &env).unwrap();
    let stats = run_warmup(&cfg, prior.params(), &env).unwrap();
    let pooled = stats.component_mean(Component::Ioi) / stats.component_std(Component::Ioi);
    let trend = |epsilon: f64| {
        let mut c = cfg.clone();
        c.train.centering = CenteringKind::FixedOffset;
        c.train.epsilon = epsilon;
        let metrics = Trainer::from_prior(&c, env.clone(), prior.clone()).unwrap().run(c.train.epochs).unwrap();
        let k = metrics.len() / 5;
        let tail = mean(metrics[metrics.len() - k..].iter().map(|m| m.mean_length));
        let head = mean(metrics[..k].iter().map(|m| m.mean_length));
        tail - head
    };
    (trend(pooled - 0.3), trend(pooled + 0.3))
}

#[test]
fn fixed_offset_sign_follows_the_pooled_mean() {
    let trends: Vec<(f64, f64)> = std::thread::scope(|s| {
        let hs: Vec<_> = (0..5).map(|seed| s.spawn(move || offset_trends(seed))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (seed, (below, above)) in trends.iter().enumerate() {
        assert!(*below > 0.0, "seed {seed}: offset below mean gave trend {below}");
        assert!(*above < 0.0, "seed {seed}: offset above mean gave trend {above}");
    }
}

/// z-score of the summed change in expected length over a stop-only run.
fn stop_only_drift(offset: f64, seed: u64) -> f64 {
    let run = train_stop_only(0.0, &[1.0; 10], offset, 0.05, 64, 200, seed);
    let lengths: Vec<f64> = std::iter::once(0.0)
        .chain(run.theta.iter().copied())
        .map(|t| expected_length(sigmoid(t), 10).unwrap())
        .collect();
    let inc: Vec<f64> = lengths.windows(2).map(|w| w[1] - w[0]).collect();
    inc.iter().sum::<f64>() / inc.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn exactly_centered_stop_only_has_no_length_drift() {
    for seed in 0..5 {
        let z = stop_only_drift(1.0, seed);
        assert!(z.abs() < 3.0, "seed {seed}: drift z {z}");
    }
    let positive = stop_only_drift(0.8, 0);
    assert!(positive > 3.0, "under-centered control should drift up, z {positive}");
}

#[test]
fn huge_kl_coefficient_pins_policy_to_prior() {
    let mut cfg = small_config(1);
    cfg.train.kl_coef = 1e6;
    cfg.train.lr = 1e-6;
    cfg.train.epochs = 20;
    let mut trainer = Trainer::new(&cfg).unwrap();
    let metrics = trainer.run(cfg.train.epochs).unwrap();
    let last = metrics.last().unwrap();
    assert!(last.mean_kl < 1e-3, "mean KL {}", last.mean_kl);
    assert!(metrics.iter().all(|m| m.mean_kl.is_finite()));
}

#[test]
fn kl_anchor_reduces_drift_at_equal_step_size() {
    let final_kl = |kl_coef: f64| {
        let mut cfg = small_config(1);
        cfg.train.kl_coef = kl_coef;
        cfg.train.lr = 0.02;
        cfg.train.epochs = 20;
        Trainer::new(&cfg).unwrap().run(cfg.train.epochs).unwrap().last().unwrap().mean_kl
    };
    let (free, anchored) = (final_kl(0.0), final_kl(40.0));
    assert!(anchored < 0.5 * free, "anchored KL {anchored} vs free {free}");
}

#[test]
fn collapse_demo_components_have_positive_step_means() {
    let mut cfg = load_config("collapse.toml");
    cfg.train.epochs = 3;
    let runs = collapse_demo(&cfg).unwrap();
    assert_eq!(runs.len(), 6);
    for r in runs.iter().filter(|r| r.centering == CenteringKind::Raw) {
        assert!(r.pooled_mean > 0.0, "{} pooled mean {}", r.component, r.pooled_mean);
        assert_eq!(r.length.len(), 3);
        assert!(r.diversity.iter().all(|d| (0.0..=1.0).contains(d)));
    }
}

#[test]
fn single_reward_weights_select_one_component() {
    let w = RewardWeights::only(Component::Ctr).as_array();
    assert_eq!(w[Component::Ctr.index()], 1.0);
    assert_eq!(w.iter().sum::<f64>(), 1.0);
}

#[test]
fn every_estimator_trains_without_error() {
    for estimator in ["std", "rtg", "grpo", "a2c", "prorl"] {
        for centering in ["raw", "center", "normalize"] {
            let mut cfg = small_config(2)
                .with_overrides(&[format!("train.estimator={estimator}"), format!("train.centering={centering}")])
                .unwrap();
            cfg.train.epochs = 2;
            cfg.critic.hidden = 8;
            cfg.critic.warmup_epochs = 1;
            let metrics = Trainer::new(&cfg).unwrap().run(cfg.train.epochs).unwrap();
            for m in &metrics {
                assert!(m.mean_length.is_finite() && (0.0..=1.0).contains(&m.diversity), "{estimator}/{centering}");
            }
        }
    }
}
