mod common;

use common::{oracle_cartpole_step, random_cartpole_state, random_policy_return};
use kogun::controller::KnowledgeController;
use kogun::envs::{
    cartpole_dynamics, cartpole_reset, delayed_reward_wrap, evaluate, Action, CartPole, CartPoleParams, CartPoleState,
    Environment,
};
use nncore::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dynamics_match_independent_transcription() {
    let p = CartPoleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut states = vec![[0.0; 4]];
    for _ in 0..10_000 {
        let s = random_cartpole_state(&mut rng);
        states.push([s[0], s[1], s[2], s[3] / (2.0 * p.half_length)]);
    }
    for s in states {
        for force in [10.0, -10.0, 0.0, rng.gen_range(-10.0..10.0)] {
            let got = cartpole_dynamics(
                &CartPoleState {
                    x: s[0],
                    x_dot: s[1],
                    theta: s[2],
                    theta_dot: s[3],
                },
                force,
                &p,
            );
            let want = oracle_cartpole_step(s, force);
            for (a, b) in [got.x, got.x_dot, got.theta, got.theta_dot].iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "{s:?} F={force}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn observation_carries_tip_speed() {
    let mut env = CartPole::discrete();
    let obs = env.reset_to(CartPoleState {
        x: 0.1,
        x_dot: -0.2,
        theta: 0.03,
        theta_dot: 0.7,
    });
    assert_eq!(obs, vec![0.1, -0.2, 0.03, 0.7]);
    let mut env = CartPole::new(
        CartPoleParams {
            half_length: 0.25,
            ..Default::default()
        },
        kogun::envs::ForceMode::Discrete,
    )
    .unwrap();
    let obs = env.reset_to(CartPoleState {
        x: 0.0,
        x_dot: 0.0,
        theta: 0.0,
        theta_dot: 0.7,
    });
    assert!((obs[3] - 0.35).abs() < 1e-15);
}

#[test]
fn reset_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let mut sums = [0.0; 4];
    for _ in 0..n {
        let s = cartpole_reset(&mut rng);
        for (i, v) in [s.x, s.x_dot, s.theta, s.theta_dot].iter().enumerate() {
            assert!(v.abs() <= 0.05);
            sums[i] += v;
        }
    }
    // Uniform on [-0.05, 0.05]: sd of the sample mean is 0.05 / sqrt(3 n).
    let bound = 3.0 * 0.05 / (3.0 * n as f64).sqrt();
    for s in sums {
        assert!((s / n as f64).abs() < bound);
    }
    let a: Vec<_> = (0..10).map(|_| cartpole_reset(&mut ChaCha8Rng::seed_from_u64(7))).collect();
    assert!(a.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn unforced_energy_drift_is_small_and_upward() {
    let p = CartPoleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut s = cartpole_reset(&mut rng);
        let e0 = s.energy(&p);
        let mut last = e0;
        for _ in 0..30 {
            s = cartpole_dynamics(&s, 0.0, &p);
            let e = s.energy(&p);
            assert!(last - e <= 0.005 * e0, "dip {} of {e0}", last - e);
            assert!(e - last <= 0.03 * e0, "jump {} of {e0}", e - last);
            last = e;
        }
        assert!(last >= e0 * (1.0 - 0.005));
        assert!(last - e0 <= 0.1 * e0);
    }
}

#[test]
fn delayed_wrapper_conserves_episode_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in [1, 3, 50, 100, 250] {
        let mut plain = CartPole::discrete();
        let mut wrapped = delayed_reward_wrap(CartPole::discrete(), d).unwrap();
        for ep in 0..1000 {
            let seed = ep as u64 * 31 + d as u64;
            plain.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            wrapped.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            let (mut inner_total, mut outer_total, mut steps) = (0.0, 0.0, 0usize);
            loop {
                let a = Action::Discrete(rng.gen_range(0..2));
                let x = plain.step(&a).unwrap();
                let y = wrapped.step(&a).unwrap();
                steps += 1;
                assert_eq!(x.state, y.state);
                assert_eq!(x.done, y.done);
                inner_total += x.reward;
                outer_total += y.reward;
                if !y.done && steps % d != 0 {
                    assert_eq!(y.reward, 0.0);
                }
                if d == 1 {
                    assert_eq!(x.reward, y.reward);
                }
                if x.done {
                    break;
                }
            }
            assert_eq!(inner_total, outer_total, "d={d} episode {ep}");
        }
    }
}

#[test]
fn baseline_returns() {
    let mut env = CartPole::discrete();
    let (always_n, _) = evaluate(&mut |_: &[f64]| Action::Discrete(1), &mut env, 100, 5).unwrap();
    assert!(always_n < 15.0, "{always_n}");

    let random = random_policy_return(&mut env, 10_000, 6);
    assert!((20.0..=25.0).contains(&random), "{random}");

    let mut store = ParamStore::new();
    let c = KnowledgeController::new(&mut store, &kogun::rules::cartpole(), env.spec(), None).unwrap();
    let snap = c.snapshot(&store);
    let (ctrl, _) = evaluate(&mut |s: &[f64]| snap.act(s), &mut env, 100, 7).unwrap();
    assert!(ctrl > 3.0 * random, "{ctrl} vs random {random}");
}

#[test]
fn continuous_rules_balance_better_than_idle() {
    let mut env = CartPole::continuous();
    let mut store = ParamStore::new();
    let c = KnowledgeController::new(&mut store, &kogun::rules::cartpole_continuous(), env.spec(), None).unwrap();
    let snap = c.snapshot(&store);
    let (ctrl, _) = evaluate(&mut |s: &[f64]| snap.act(s), &mut env, 50, 8).unwrap();
    let (idle, _) = evaluate(&mut |_: &[f64]| Action::Continuous(vec![0.0]), &mut env, 50, 8).unwrap();
    assert!(ctrl > idle, "{ctrl} vs {idle}");
}
