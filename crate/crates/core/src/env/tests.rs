use super::*;
use crate::rng::stream_rng;
use alloc::vec::Vec;

fn quiet_cfg(n_agents: usize, n_targets: usize) -> EnvConfig {
    let mut cfg = EnvConfig { n_agents, n_targets, comm_drop_prob: 0.0, range_noise_std: 1e-12, ..Default::default() };
    cfg.heading_model.noise_std = 0.0;
    cfg.pf.n_particles = 64;
    cfg
}

fn place(state: &mut WorldState, agents: &[[f64; 3]], targets: &[[f64; 3]]) {
    for (a, p) in state.agents.iter_mut().zip(agents) {
        a.position = *p;
    }
    for (t, p) in state.targets.iter_mut().zip(targets) {
        t.vehicle.position = *p;
    }
}

#[test]
fn rudder_grid() {
    assert_eq!(rudder_angle(0).unwrap(), -0.24);
    assert_eq!(rudder_angle(2).unwrap(), 0.0);
    assert_eq!(rudder_angle(4).unwrap(), 0.24);
    assert!((rudder_angle(1).unwrap() + 0.12).abs() < 1e-15);
    assert!(matches!(rudder_angle(5), Err(Error::Contract(_))));
}

#[test]
fn action_masks() {
    assert_eq!(valid_actions(2).unwrap(), [false, true, true, true, false]);
    assert_eq!(valid_actions(0).unwrap(), [true, true, false, false, false]);
    assert_eq!(valid_actions(4).unwrap(), [false, false, false, true, true]);
    assert!(valid_actions(7).is_err());
}

#[test]
fn tracking_reward_cases() {
    let cfg = EnvConfig::default();
    let r = |e: f64| tracking_reward(&[e], &cfg);
    assert_eq!(r(5.0), 1.0);
    assert_eq!(r(10.0), 1.0);
    assert!((r(30.0) - (-2.0f64).exp()).abs() < 1e-12);
    assert!((r(30.0) - 0.135335).abs() < 1e-6);
    assert!(r(50.0 - 1e-6) < 1e-3);
    assert_eq!(r(60.0), 0.0);
    assert_eq!(r(f64::NAN), 0.0);
    assert_eq!(tracking_reward(&[5.0, 60.0], &cfg), 0.5);
    let mut prev = 1.0;
    for i in 0..=600 {
        let v = r(i as f64 * 0.1);
        assert!(v <= prev + 1e-15);
        prev = v;
    }
}

#[test]
fn follow_reward_cases() {
    let cfg = EnvConfig::default();
    assert_eq!(follow_reward(&[30.0, 70.0], &cfg), 0.5);
    assert_eq!(follow_reward(&[50.0], &cfg), 1.0);
    assert_eq!(follow_reward(&[1.0, 2.0, 3.0], &cfg), 1.0);
    assert_eq!(follow_reward(&[70.0, 30.0], &cfg), follow_reward(&[30.0, 70.0], &cfg));
}

#[test]
fn crash_cases() {
    let v = |x: f64| VehicleState::new([x, 0.0, 0.0], 0.0, 1.0);
    assert!(!crash_check(&[v(0.0)], 10.0));
    assert!(!crash_check(&[v(0.0), v(10.0)], 10.0));
    assert!(crash_check(&[v(0.0), v(5.0)], 10.0));
}

#[test]
fn target_countdown_holds_course() {
    let cfg = EnvConfig::default();
    let mut rng = stream_rng(4);
    let mut t = TargetState { cmd_heading: 0.7, countdown: 3, ..Default::default() };
    for _ in 0..3 {
        let (cmd, c) = target_policy(&t, &cfg, &mut rng);
        assert_eq!(cmd, 0.7);
        t.cmd_heading = cmd;
        t.countdown = c;
    }
    assert_eq!(t.countdown, 0);
    let (cmd, _) = target_policy(&t, &cfg, &mut rng);
    assert_ne!(cmd, 0.7);

    let inf = EnvConfig { target_turn_interval: f64::INFINITY, ..Default::default() };
    let t = TargetState { cmd_heading: 0.2, countdown: sample_turn_countdown(f64::INFINITY, &mut rng), ..Default::default() };
    assert_eq!(target_policy(&t, &inf, &mut rng), (0.2, u32::MAX));
}

#[test]
fn turn_interval_mean() {
    let mut rng = stream_rng(11);
    for mean in [5.0, 20.0] {
        let n = 100_000;
        let s: f64 = (0..n).map(|_| sample_turn_countdown(mean, &mut rng) as f64).sum();
        let m = s / n as f64;
        assert!((m - mean).abs() <= 0.02 * mean, "mean {m} vs {mean}");
    }
}

#[test]
fn straight_line_target_without_turns() {
    let mut cfg = quiet_cfg(1, 1);
    cfg.target_turn_interval = f64::INFINITY;
    let mut s = spawn(&cfg, 3).unwrap();
    let h0 = s.targets[0].vehicle.heading;
    for _ in 0..10 {
        step(&mut s, &[2], &cfg).unwrap();
        assert!((s.targets[0].vehicle.heading - h0).abs() < 1e-12);
    }
}

#[test]
fn spawn_separation_and_depths() {
    let cfg = EnvConfig { n_agents: 2, n_targets: 2, ..Default::default() };
    for seed in 0..50 {
        let s = spawn(&cfg, seed).unwrap();
        let pts: Vec<[f64; 3]> =
            s.agents.iter().map(|a| a.position).chain(s.targets.iter().map(|t| t.vehicle.position)).collect();
        let mut pairs = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                let d = hypot2(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
                assert!((50.0..=200.0).contains(&d), "seed {seed}: {d}");
                pairs += 1;
            }
        }
        assert_eq!(pairs, 6);
        assert!(s.agents.iter().all(|a| a.position[2] == 0.0));
        assert!(s.targets.iter().all(|t| (10.0..=60.0).contains(&t.vehicle.position[2])));
    }
    assert_eq!(spawn(&cfg, 8).unwrap(), spawn(&cfg, 8).unwrap());
    assert_ne!(spawn(&cfg, 8).unwrap().agents, spawn(&cfg, 9).unwrap().agents);
}

#[test]
fn spawn_reports_infeasible_layout() {
    let cfg = EnvConfig { n_agents: 20, n_targets: 20, spawn_min_sep: 90.0, ..Default::default() };
    assert!(matches!(spawn(&cfg, 0), Err(Error::Spawn { n_agents: 20, .. })));
}

#[test]
fn straight_actions_move_speed_times_dt() {
    let cfg = quiet_cfg(2, 1);
    let mut s = spawn(&cfg, 5).unwrap();
    let before = s.agents.clone();
    let bias = heading_delta(&cfg.heading_model, 0.0, 1.0, 30.0).unwrap();
    assert!(bias.abs() < 1e-3);
    step(&mut s, &[2, 2], &cfg).unwrap();
    for (b, a) in before.iter().zip(&s.agents) {
        let d = hypot2(a.position[0] - b.position[0], a.position[1] - b.position[1]);
        assert!((d - 30.0).abs() < 1e-9);
        assert!((wrap_angle(a.heading - b.heading - bias)).abs() < 1e-12);
    }
}

#[test]
fn invalid_action_is_rejected_without_mutation() {
    let cfg = quiet_cfg(1, 1);
    let mut s = spawn(&cfg, 5).unwrap();
    let snapshot = s.clone();
    assert!(matches!(step(&mut s, &[4], &cfg), Err(Error::Contract(_))));
    assert!(matches!(step(&mut s, &[2, 2], &cfg), Err(Error::Contract(_))));
    assert_eq!(s, snapshot);
}

#[test]
fn episode_ends_exactly_at_horizon() {
    let cfg = EnvConfig { horizon: 7, ..quiet_cfg(1, 1) };
    let mut s = spawn(&cfg, 1).unwrap();
    for k in 1..=7 {
        let out = step(&mut s, &[2], &cfg).unwrap();
        assert_eq!(out.done, k == 7);
        assert!(out.reward >= 0.0 && out.reward <= 1.0);
    }
}

#[test]
fn crash_overrides_reward() {
    let cfg = quiet_cfg(2, 1);
    let mut s = spawn(&cfg, 2).unwrap();
    // same heading, 4 m apart: stays 4 m apart after a straight step
    s.agents[0].heading = 0.0;
    s.agents[1].heading = 0.0;
    s.agents[1].position = [s.agents[0].position[0], s.agents[0].position[1] + 4.0, 0.0];
    let out = step(&mut s, &[2, 2], &cfg).unwrap();
    assert!(out.info.collision);
    assert_eq!(out.reward, -1.0);
}

#[test]
fn measurement_gating() {
    let cfg = quiet_cfg(1, 1);
    let mut s = spawn(&cfg, 0).unwrap();
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[451.0, 0.0, 0.0]]);
    phase_measure(&mut s.view_mut(), &cfg);
    assert!(s.meas[0].is_none());
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[100.0, 0.0, 0.0]]);
    phase_measure(&mut s.view_mut(), &cfg);
    let m = s.meas[0].unwrap();
    assert!((m.range_2d - 100.0).abs() < 1e-9);
    // slant range is projected using the known depth
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[40.0, 0.0, 30.0]]);
    phase_measure(&mut s.view_mut(), &cfg);
    assert!((s.meas[0].unwrap().range_2d - 40.0).abs() < 1e-9);

    let drop_all = EnvConfig { comm_drop_prob: 1.0, ..cfg.clone() };
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[100.0, 0.0, 0.0]]);
    for _ in 0..50 {
        phase_measure(&mut s.view_mut(), &drop_all);
        assert!(s.meas[0].is_none());
    }
}

#[test]
fn comms_range_and_ages() {
    let cfg = quiet_cfg(2, 1);
    let mut s = spawn(&cfg, 0).unwrap();
    place(&mut s, &[[0.0, 0.0, 0.0], [1501.0, 0.0, 0.0]], &[[0.0, 100.0, 20.0]]);
    let age = s.contact(0, 1).age;
    phase_comms(&mut s.view_mut(), &cfg);
    assert_eq!(s.contact(0, 1).age, age + 1);
    place(&mut s, &[[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]], &[[0.0, 100.0, 20.0]]);
    phase_comms(&mut s.view_mut(), &cfg);
    assert_eq!(s.contact(0, 1).age, 0);
    assert!(s.contact(0, 1).valid);
    assert_eq!(s.contact(0, 1).position, [100.0, 0.0, 0.0]);

    let single = quiet_cfg(1, 1);
    let mut s1 = spawn(&single, 0).unwrap();
    let before = s1.clone();
    phase_comms(&mut s1.view_mut(), &single);
    assert_eq!(s1.contacts, before.contacts);
    assert_eq!(s1.rng, before.rng);
}

#[test]
fn comms_fuse_partner_measurements() {
    // agent 1 cannot hear the target but receives agent 0's range
    let mut cfg = quiet_cfg(2, 1);
    cfg.detection_range = 150.0;
    let mut s = spawn(&cfg, 0).unwrap();
    place(&mut s, &[[0.0, 0.0, 0.0], [400.0, 0.0, 0.0]], &[[-100.0, 0.0, 0.0]]);
    s.tracks.iter_mut().for_each(|t| *t = Track::default());
    let mut w = s.view_mut();
    phase_measure(&mut w, &cfg);
    phase_filter(&mut w, &cfg, true);
    assert!(!w.tracks[1].initialized);
    phase_comms(&mut w, &cfg);
    assert!(w.tracks[1].initialized);
    assert_eq!(w.tracks[1].estimate.age, 0);
}

#[test]
fn ages_stay_zero_with_perfect_links() {
    let cfg = quiet_cfg(3, 2);
    let mut s = spawn(&cfg, 21).unwrap();
    let mut u = [2u8; 3];
    for k in 0..20 {
        for (i, a) in u.iter_mut().enumerate() {
            *a = if (k + i) % 3 == 0 { 3 } else { 2 };
        }
        step(&mut s, &u, &cfg).unwrap();
        u.iter_mut().zip(&s.agents).for_each(|(a, v)| *a = v.rudder_index);
        let in_range = s.agents.iter().all(|a| {
            s.targets.iter().all(|t| hypot3(a.position[0] - t.vehicle.position[0], a.position[1] - t.vehicle.position[1], t.vehicle.position[2]) <= 450.0)
        });
        if !in_range {
            break;
        }
        for r in 0..3 {
            for q in 0..3 {
                if r != q {
                    assert_eq!(s.contact(r, q).age, 0);
                }
            }
            for t in 0..2 {
                assert_eq!(s.track(r, t).estimate.age, 0);
            }
        }
    }
}

#[test]
fn observation_layout() {
    let cfg = EnvConfig { n_agents: 3, n_targets: 2, comm_range: 0.0, ..Default::default() };
    let mut s = spawn(&cfg, 4).unwrap();
    let out = observe(&mut s, &cfg);
    for a in 0..3 {
        let t = out.obs_tokens(a);
        assert_eq!(t.rows, 5);
        assert_eq!(t.cols, TOKEN_FEATURES);
        let me = t.row(a);
        assert_eq!(&me[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(me[obs::COL_SELF], 1.0);
        for other in (0..3).filter(|&o| o != a) {
            let r = t.row(other);
            // no comms possible
            assert_eq!(r[obs::COL_VALID], 0.0);
            assert_eq!(&r[0..3], &[0.0, 0.0, 0.0]);
            assert_eq!(r[obs::COL_AGENT], 1.0);
        }
        for tg in 3..5 {
            assert_eq!(t.row(tg)[obs::COL_TARGET], 1.0);
        }
    }
    let g = out.global_tokens();
    assert_eq!(g.rows, 5);
    for a in 0..3 {
        let r = g.row(a);
        assert_eq!(r[obs::COL_SPEED], t_self_speed(&out, a));
        assert_eq!(r[obs::COL_POS + 2], 0.0);
    }
}

fn t_self_speed(out: &StepOutput, a: usize) -> f32 {
    out.obs_tokens(a).row(a)[obs::COL_SPEED]
}

#[test]
fn target_token_uses_estimate() {
    let cfg = quiet_cfg(1, 1);
    let mut s = spawn(&cfg, 2).unwrap();
    for _ in 0..3 {
        step(&mut s, &[2], &cfg).unwrap();
    }
    let out = observe(&mut s, &cfg);
    let me = s.agents[0];
    let est = s.track(0, 0).estimate;
    let dx = est.position_xy[0] - me.position[0];
    let dy = est.position_xy[1] - me.position[1];
    let row = out.obs_tokens(0).row(1);
    let fx = (me.heading.cos() * dx + me.heading.sin() * dy) / 1000.0;
    assert!((row[0] as f64 - fx).abs() < 1e-6);
    assert_eq!(row[obs::COL_VALID], 1.0);
    assert!((row[obs::COL_EXTRA] as f64 - est.spread / 100.0).abs() < 1e-6);
}

#[test]
fn lost_after_k_misses() {
    let cfg = quiet_cfg(1, 1);
    let mut s = spawn(&cfg, 0).unwrap();
    assert_eq!(lost_target_check(&s, &cfg), alloc::vec![false]);
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[1000.0, 0.0, 20.0]]);
    for _ in 0..19 {
        phase_measure(&mut s.view_mut(), &cfg);
    }
    assert_eq!(lost_target_check(&s, &cfg), alloc::vec![false]);
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[100.0, 0.0, 20.0]]);
    phase_measure(&mut s.view_mut(), &cfg);
    assert_eq!(lost_target_check(&s, &cfg), alloc::vec![false]);
    place(&mut s, &[[0.0, 0.0, 0.0]], &[[1000.0, 0.0, 20.0]]);
    for _ in 0..20 {
        phase_measure(&mut s.view_mut(), &cfg);
    }
    assert_eq!(lost_target_check(&s, &cfg), alloc::vec![true]);
}

#[test]
fn step_is_deterministic() {
    let cfg = EnvConfig { n_agents: 2, n_targets: 2, ..Default::default() };
    let run = || {
        let mut s = spawn(&cfg, 77).unwrap();
        let mut outs = Vec::new();
        for k in 0..15 {
            let u: Vec<u8> = s.agents.iter().map(|a| if k % 2 == 0 { a.rudder_index.max(1) - 1 } else { a.rudder_index }).collect();
            outs.push(step(&mut s, &u, &cfg).unwrap());
        }
        (s, outs)
    };
    assert_eq!(run(), run());
}

#[test]
fn rewards_in_range_over_random_play() {
    let cfg = EnvConfig { n_agents: 3, n_targets: 2, horizon: 60, ..Default::default() };
    let mut rng = stream_rng(5);
    let mut s = spawn(&cfg, 9).unwrap();
    for _ in 0..60 {
        let u: Vec<u8> = s
            .agents
            .iter()
            .map(|a| {
                let m = valid_actions(a.rudder_index).unwrap();
                let legal: Vec<u8> = (0..5u8).filter(|&i| m[i as usize]).collect();
                legal[rng.random_range(0..legal.len())]
            })
            .collect();
        let out = step(&mut s, &u, &cfg).unwrap();
        assert!(out.reward == -1.0 || (0.0..=1.0).contains(&out.reward));
        assert_eq!(out.info.track_err.len(), 2);
        assert_eq!(out.info.collision, out.reward == -1.0);
        assert!(s.agents.iter().all(|a| a.heading.abs() <= core::f64::consts::PI));
    }
}
