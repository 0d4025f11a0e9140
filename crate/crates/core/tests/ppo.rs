use std::sync::Arc;

use gridmkt::env::Environment;
use gridmkt::harness::Scenario;
use gridmkt::model::validate;
use gridmkt::policy::{rollout, Policy, RandomPolicy};
use gridmkt::ppo::dist::log_prob;
use gridmkt::ppo::update::{loss_and_grad, LossCoeffs};
use gridmkt::ppo::{gae, load_policy, save_policy, train, Batch, Network, ObsScaler, PolicyParams, PpoConfig, PpoPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct GradCase {
    net: Network,
    batch: Batch,
    lower: Vec<f64>,
    upper: Vec<f64>,
    coeffs: LossCoeffs,
}

/// A small random network and a batch whose likelihood ratios straddle both
/// clip edges, kept away from the kinks of the clipped objective.
fn grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs_dim, na, n) = (5, 3, 16);
    let mut net = Network::init(obs_dim, &[6, 5], na, 0.0, &mut rng).unwrap();
    for p in net.params.iter_mut() {
        *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    let lower = vec![-2.0, 0.0, 1.0];
    let upper = vec![3.0, 0.5, 1.0];
    let coeffs = LossCoeffs { clip_eps: 0.2, value_coeff: 0.5, entropy_coeff: 0.3 };
    let mut batch = Batch::new(obs_dim, na);
    while batch.len() < n {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = net.forward(&obs).unwrap();
        let eps: Vec<f64> = (0..na).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..na).map(|j| f.mean[j] + f.log_std[j].exp() * eps[j]).collect();
        let logp = log_prob(&u, &f.mean, &f.log_std, &lower, &upper);
        let old = logp + rng.random_range(-0.4..0.4);
        let ratio = (logp - old).exp();
        if [1.0 - coeffs.clip_eps, 1.0 + coeffs.clip_eps].iter().any(|e| (ratio - e).abs() < 1e-3) {
            continue;
        }
        let adv = rng.random_range(-1.5..1.5);
        batch.push(&obs, &u, &eps, old, adv, rng.random_range(-1.0..1.0));
    }
    GradCase { net, batch, lower, upper, coeffs }
}

fn total_loss(case: &GradCase, net: &Network) -> f64 {
    let idx: Vec<usize> = (0..case.batch.len()).collect();
    loss_and_grad(net, &case.batch, &idx, &case.lower, &case.upper, case.coeffs, None).total
}

fn analytic_grad(case: &GradCase) -> Vec<f64> {
    let idx: Vec<usize> = (0..case.batch.len()).collect();
    let mut g = vec![0.0; case.net.param_count()];
    loss_and_grad(&case.net, &case.batch, &idx, &case.lower, &case.upper, case.coeffs, Some(&mut g));
    g
}

#[test]
fn loss_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let case = grad_case(seed);
        let g = analytic_grad(&case);
        let mut net = case.net.clone();
        for k in 0..net.param_count() {
            let p = net.params[k];
            net.params[k] = p + h;
            let up = total_loss(&case, &net);
            net.params[k] = p - h;
            let down = total_loss(&case, &net);
            net.params[k] = p;
            let fd = (up - down) / (2.0 * h);
            // Floor the denominator where the gradient itself is at the
            // difference quotient's noise level.
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "seed {seed} param {k}: analytic {} fd {fd}", g[k]);
        }
    }
    println!("worst relative gradient error {worst:.2e}");
}

#[test]
fn clip_is_inactive_inside_the_trust_region() {
    let mut case = grad_case(11);
    // Ratio exactly 1 everywhere.
    let idx: Vec<usize> = (0..case.batch.len()).collect();
    for &i in &idx {
        let f = case.net.forward(case.batch.obs(i)).unwrap();
        case.batch.old_logp[i] = log_prob(case.batch.u(i), &f.mean, &f.log_std, &case.lower, &case.upper);
    }
    let g = analytic_grad(&case);
    let wide = GradCase { coeffs: LossCoeffs { clip_eps: 0.999, ..case.coeffs }, ..case };
    assert_eq!(g, analytic_grad(&wide));
}

#[test]
fn clipped_sample_contributes_no_policy_gradient() {
    let case = grad_case(12);
    let mut batch = Batch::new(5, 3);
    let f = case.net.forward(case.batch.obs(0)).unwrap();
    let logp = log_prob(case.batch.u(0), &f.mean, &f.log_std, &case.lower, &case.upper);
    // A > 0 and ρ = e^0.5 > 1 + ε.
    batch.push(case.batch.obs(0), case.batch.u(0), case.batch.eps(0), logp - 0.5, 1.0, f.value);
    let only_policy = GradCase {
        batch,
        coeffs: LossCoeffs { clip_eps: 0.2, value_coeff: 0.0, entropy_coeff: 0.0 },
        ..case
    };
    assert!(analytic_grad(&only_policy).iter().all(|&g| g == 0.0));
}

#[test]
fn gae_matches_direct_summation() {
    let a = gae(&[1.0, 2.0], &[0.0, 0.0, 0.0], 0.5, 0.5).unwrap();
    assert_eq!(a, vec![1.5, 2.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(1..80);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (gamma, lambda) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let fast = gae(&r, &v, gamma, lambda).unwrap();
        for t in 0..n {
            let mut direct = 0.0;
            let mut w = 1.0;
            for k in t..n {
                direct += w * (r[k] + gamma * v[k + 1] - v[k]);
                w *= gamma * lambda;
            }
            assert!((fast[t] - direct).abs() <= 1e-10, "t {t}: {} vs {direct}", fast[t]);
        }
        // γ = λ = 1 telescopes to the return minus the baseline.
        let mc = gae(&r, &v, 1.0, 1.0).unwrap();
        let tail: f64 = r.iter().sum::<f64>() + v[n] - v[0];
        assert!((mc[0] - tail).abs() <= 1e-10);
    }
}

#[test]
fn squashed_density_integrates_to_one() {
    let n = 200_000;
    for &(mean, log_std, lo, hi) in
        &[(0.0, 0.0, -1.0, 1.0), (1.5, -1.0, 0.0, 250e3), (-1.2, -0.2, -30.0, 5.0), (0.3, -2.5, 2.0, 2.5)]
    {
        // Midpoint rule in action space. With std ≤ 1 the density vanishes
        // fast enough at both ends for the rule to converge.
        let w = (hi - lo) / n as f64;
        let mut total = 0.0;
        for k in 0..n {
            let a = lo + w * (k as f64 + 0.5);
            let u = (2.0 * (a - lo) / (hi - lo) - 1.0).atanh();
            total += log_prob(&[u], &[mean], &[log_std], &[lo], &[hi]).exp() * w;
        }
        assert!((total - 1.0).abs() <= 1e-3, "({mean}, {log_std}, {lo}, {hi}): {total}");
    }
}

fn random_params(seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = Scenario::builtin("smoothed").unwrap();
    let system = validate(&sc.system).unwrap();
    let net = Network::init(gridmkt::ppo::obs::obs_dim(&system), &[64, 64], system.layout().dim(), -0.3, &mut rng).unwrap();
    let scaler: ObsScaler = serde_json::from_str(
        r#"{"rt_price": {"mean": 4.1e-5, "std": 1.3e-5}, "lt_price": {"mean": 3.5e-5, "std": 3.5e-5},
            "lt_cap": {"mean": 5e4, "std": 5e4}}"#,
    )
    .unwrap();
    let (lower, upper) = system.static_action_box();
    PolicyParams { net, scaler, lower, upper, reward_scale: 1.7 }
}

#[test]
fn saved_policy_reloads_bit_identically() {
    let params = random_params(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    save_policy(&path, &params).unwrap();
    let loaded = load_policy(&path).unwrap();
    assert_eq!(loaded, params);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let obs: Vec<f64> = (0..params.net.obs_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert_eq!(params.forward(&obs).unwrap(), loaded.forward(&obs).unwrap());
    }
}

#[test]
fn tampered_or_incomplete_policy_files_are_rejected() {
    let params = random_params(7);
    let doc: serde_json::Value = serde_json::from_str(&params.to_json()).unwrap();

    let mut tampered = doc.clone();
    tampered["layers"][1]["shape"][0] = serde_json::json!(65);
    let err = PolicyParams::from_json(&tampered.to_string()).unwrap_err();
    assert!(err.to_string().contains("shape"), "{err}");

    let mut no_scaler = doc.clone();
    no_scaler.as_object_mut().unwrap().remove("scaler");
    let err = PolicyParams::from_json(&no_scaler.to_string()).unwrap_err();
    assert!(err.to_string().contains("scaler"), "{err}");

    let mut short = doc;
    short["layers"][0]["bias"].as_array_mut().unwrap().pop();
    assert!(PolicyParams::from_json(&short.to_string()).is_err());

    let cs = validate(&Scenario::builtin("casestudy").unwrap().system).unwrap();
    assert!(params.check_system(&cs).is_err());
}

fn small_run(steps: usize) -> PpoConfig {
    PpoConfig { total_env_steps: steps, rollout_steps: 192, minibatch_size: 32, epochs_per_batch: 3, seed: 21, ..Default::default() }
}

fn smoothed() -> (Arc<gridmkt::model::ValidatedSystem>, Scenario) {
    let sc = Scenario::builtin("smoothed-sine").unwrap();
    (Arc::new(validate(&sc.system).unwrap()), sc)
}

#[test]
fn zero_learning_rate_leaves_the_policy_unchanged() {
    let (system, sc) = smoothed();
    let eval = [900, 901];
    let untrained = train(&system, &sc.exogenous, &eval, &small_run(0)).unwrap();
    assert_eq!(untrained.env_steps, 0);
    let frozen = train(&system, &sc.exogenous, &eval, &PpoConfig { learning_rate: 0.0, ..small_run(960) }).unwrap();
    assert_eq!(frozen.env_steps, 960);
    assert_eq!(frozen.policy.net, untrained.policy.net);
    assert_eq!(frozen.policy.scaler, untrained.policy.scaler);
    assert_eq!(frozen.final_ratios, untrained.final_ratios);
    let initial = untrained.final_ratios.iter().sum::<f64>() / 2.0;
    assert!(frozen.curve.iter().all(|r| r.oracle_ratio == initial));
}

#[test]
fn training_is_seeded_and_independent_of_worker_count() {
    let (system, sc) = smoothed();
    let cfg = small_run(1152);
    let a = train(&system, &sc.exogenous, &[900], &cfg).unwrap();
    let b = train(&system, &sc.exogenous, &[900], &cfg).unwrap();
    let c = train(&system, &sc.exogenous, &[900], &PpoConfig { workers: 2, ..cfg.clone() }).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.curve, c.curve);
    assert_eq!(a.policy, c.policy);
    let d = train(&system, &sc.exogenous, &[900], &PpoConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(a.policy, d.policy);
    assert_eq!(a.violations, 0);
}

fn episode_rewards(system: &Arc<gridmkt::model::ValidatedSystem>, sc: &Scenario, mut make: impl FnMut(u64) -> Box<dyn Policy>) -> Vec<f64> {
    (0..40u64)
        .map(|k| {
            let trace = Arc::new(sc.exogenous.generate(system, 5000 + k).unwrap());
            let mut env = Environment::new(system.clone(), trace).unwrap();
            rollout(make(k).as_mut(), &mut env).unwrap().log.total_reward()
        })
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn maximal_entropy_policy_performs_like_uniform_random() {
    let (system, sc) = smoothed();
    let cfg = PpoConfig { entropy_coeff: 1e4, learning_rate: 3e-3, ..small_run(9600) };
    let out = train(&system, &sc.exogenous, &[900], &cfg).unwrap();
    let params = Arc::new(out.policy);
    let ppo = episode_rewards(&system, &sc, |k| Box::new(PpoPolicy::sampling(params.clone(), &system, k).unwrap()));
    let random = episode_rewards(&system, &sc, |k| Box::new(RandomPolicy::new(&system, k)));
    let (mp, sp) = mean_se(&ppo);
    let (mr, sr) = mean_se(&random);
    println!("entropy-only policy {mp:.3} ± {sp:.3}, uniform random {mr:.3} ± {sr:.3}");
    assert!((mp - mr).abs() <= 2.0 * (sp * sp + sr * sr).sqrt());
}
