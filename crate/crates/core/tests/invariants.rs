use proptest::prelude::*;
use rand::Rng;
use utrack_core::batch::{vreset, vstep, Sequential};
use utrack_core::env::{self, follow_reward, tracking_reward_single, valid_actions, EnvConfig, N_ACTIONS};
use utrack_core::kinematics::{advance, VehicleState};
use utrack_core::ppo::compute_gae;
use utrack_core::rng::stream_rng;
use utrack_core::tracking::{pf_init_ring, RangeMeasurement};

fn small_env(n: usize) -> EnvConfig {
    let mut cfg = EnvConfig { n_agents: n, n_targets: n, horizon: 16, ..Default::default() };
    cfg.pf.n_particles = 64;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracking_reward_is_bounded_and_non_increasing(a in 0.0f64..200.0, b in 0.0f64..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (rl, rh) = (tracking_reward_single(lo, 10.0, 50.0), tracking_reward_single(hi, 10.0, 50.0));
        prop_assert!((0.0..=1.0).contains(&rl) && (0.0..=1.0).contains(&rh));
        prop_assert!(rh <= rl);
    }

    #[test]
    fn follow_reward_is_a_fraction(d in prop::collection::vec(0.0f64..200.0, 1..6)) {
        let r = follow_reward(&d, &EnvConfig::default());
        let k = d.iter().filter(|&&x| x <= 50.0).count() as f64;
        prop_assert!((r - k / d.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn action_mask_is_the_neighbourhood(i in 0u8..5) {
        let m = valid_actions(i).unwrap();
        for k in 0..N_ACTIONS {
            prop_assert_eq!(m[k], (k as i32 - i as i32).abs() <= 1);
        }
    }

    #[test]
    fn noiseless_advance_moves_speed_times_dt(h in -3.0f64..3.0, dh in -0.5f64..0.5, v in 0.1f64..3.0, dt in 1.0f64..60.0) {
        let s = VehicleState::new([0.0, 0.0, 20.0], h, v);
        let n = advance(&s, dh, dt, 0.0);
        let moved = (n.position[0] - s.position[0]).hypot(n.position[1] - s.position[1]);
        prop_assert!((moved - v * dt).abs() < 1e-9 * v * dt.max(1.0));
        prop_assert_eq!(n.position[2], s.position[2]);
    }

    #[test]
    fn gae_returns_equal_advantage_plus_value(seed in 0u64..1000, t_len in 1usize..16, n in 1usize..4) {
        let mut rng = stream_rng(seed);
        let len = t_len * n;
        let r: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.2).collect();
        let boot: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, &boot, 0.99, 0.95);
        for i in 0..len {
            prop_assert!((ret[i] - adv[i] - v[i]).abs() < 1e-12);
        }
        // with lambda = 0 the advantage is the one-step TD error
        let (td, _) = compute_gae(&r, &v, &d, &boot, 0.99, 0.0);
        for t in 0..t_len {
            for e in 0..n {
                let i = t * n + e;
                let next = if t + 1 < t_len { v[i + n] } else { boot[e] };
                let want = r[i] + if d[i] { 0.0 } else { 0.99 * next } - v[i];
                prop_assert!((td[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn particle_weights_stay_normalised(seed in 0u64..500, range in 5.0f64..400.0, noise in 0.5f64..10.0) {
        let m = RangeMeasurement { origin_xy: [0.0, 0.0], range_2d: range, noise_std: noise, step_index: 0 };
        let mut ps = pf_init_ring(&m, 256, 1.0, seed).unwrap();
        ps.predict(30.0, 1.0, 0.05);
        let m2 = RangeMeasurement { origin_xy: [50.0, 0.0], range_2d: range, noise_std: noise, step_index: 1 };
        ps.update(&[m2]);
        let w = ps.as_ref().w;
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let ess = ps.effective_sample_size();
        prop_assert!((1.0 - 1e-9..=256.0 + 1e-9).contains(&ess));
        ps.resample_if_degenerate();
        prop_assert!((ps.as_ref().w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ring_initialisation_matches_the_measured_range() {
    let m = RangeMeasurement { origin_xy: [10.0, -20.0], range_2d: 150.0, noise_std: 3.0, step_index: 0 };
    let ps = pf_init_ring(&m, 2048, 0.5, 9).unwrap();
    let p = ps.as_ref();
    let mean_r: f64 = (0..p.px.len()).map(|i| (p.px[i] - 10.0).hypot(p.py[i] + 20.0)).sum::<f64>() / p.px.len() as f64;
    assert!((mean_r - 150.0).abs() < 1.0, "{mean_r}");
    assert!((0..p.vx.len()).all(|i| p.vx[i].hypot(p.vy[i]) <= 0.5 + 1e-12));
}

#[test]
fn batch_of_one_matches_single_environment() {
    for n in 1..=3 {
        let cfg = small_env(n);
        let (mut bs, mut out) = vreset(&cfg, 1, 5, &Sequential).unwrap();
        let mut state = env::spawn(&cfg, utrack_core::batch::episode_seed(5, 0, 0)).unwrap();
        let mut rng = stream_rng(n as u64);
        for _ in 0..cfg.horizon - 1 {
            let acts: Vec<u8> = out.rudder.iter().map(|&r| (r as i32 + rng.random_range(-1..=1)).clamp(0, 4) as u8).collect();
            vstep(&mut bs, &mut out, &acts, &cfg, &Sequential, &mut ()).unwrap();
            let so = env::step(&mut state, &acts, &cfg).unwrap();
            assert_eq!(so.obs, out.obs);
            assert_eq!(so.reward.to_bits(), out.reward[0].to_bits());
            assert_eq!(so.rudder, out.rudder);
        }
    }
}

#[test]
fn team_sizes_change_token_counts_only() {
    for n in 1..=5 {
        let cfg = small_env(n);
        let mut s = env::spawn(&cfg, 3).unwrap();
        let out = env::observe(&mut s, &cfg);
        assert_eq!(out.n_entities, 2 * n);
        assert_eq!(out.obs.len(), n * 2 * n * env::TOKEN_FEATURES);
        assert_eq!(out.global_state.len(), 2 * n * env::TOKEN_FEATURES);
        assert!(out.obs.iter().all(|x| x.is_finite()));
    }
}
