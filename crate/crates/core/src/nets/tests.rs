use super::*;
use crate::rng::stream_rng;
use rand::Rng;

fn random_tokens(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn tiny(hidden: bool) -> NetConfig {
    let mut c = if hidden { NetConfig::actor(8, 2, 1) } else { NetConfig::critic(8, 2, 1) };
    c.in_features = 5;
    c
}

#[test]
fn init_is_deterministic_and_checked() {
    let cfg = NetConfig::actor(16, 4, 2);
    let a: Params<f32> = init_params(cfg, 3).unwrap();
    let b: Params<f32> = init_params(cfg, 3).unwrap();
    let c: Params<f32> = init_params(cfg, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.data, c.data);
    for bl in &a.layout.blocks {
        assert!(bl.ln1_g.of(&a.data).iter().all(|&g| g == 1.0));
        assert!(bl.ln2_g.of(&a.data).iter().all(|&g| g == 1.0));
        assert!(bl.ln1_b.of(&a.data).iter().all(|&g| g == 0.0));
    }
    assert!(a.layout.lnf_g.of(&a.data).iter().all(|&g| g == 1.0));
    assert!(matches!(init_params::<f32>(NetConfig::actor(10, 4, 1), 0), Err(Error::Argument(_))));
    let segs = a.layout.segments();
    assert_eq!(segs.iter().map(|(_, s)| s.len).sum::<usize>(), a.len());
    for w in segs.windows(2) {
        assert_eq!(w[0].1.off + w[0].1.len, w[1].1.off);
    }
}

#[test]
fn actor_outputs_are_finite_and_pure() {
    let p: Params<f64> = init_params(NetConfig::actor(16, 4, 2), 1).unwrap();
    let mut rng = stream_rng(2);
    let x = random_tokens(&mut rng, 4, TOKEN_FEATURES);
    let mut c = Cache::new();
    let mask = [true; 5];
    let a = actor_forward(&p, &x, 4, p.hidden0(), &mask, &mut c).unwrap();
    let h1 = c.hidden_out().to_vec();
    let b = actor_forward(&p, &x, 4, p.hidden0(), &mask, &mut c).unwrap();
    assert_eq!(a, b);
    assert_eq!(h1, c.hidden_out());
    assert!(a.iter().all(|l| l.is_finite()));
    assert!((a.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn single_legal_action_is_certain() {
    let p: Params<f32> = init_params(NetConfig::actor(16, 4, 1), 1).unwrap();
    let x = vec![0.3f32; 2 * TOKEN_FEATURES];
    let mut c = Cache::new();
    let lp = actor_forward(&p, &x, 2, p.hidden0(), &[false, false, true, false, false], &mut c).unwrap();
    assert_eq!(lp[2], 0.0);
    assert!(lp.iter().enumerate().all(|(i, l)| i == 2 || *l == f32::NEG_INFINITY));
    assert_eq!(sample_action(&lp, 0.999), 2);
    assert_eq!(greedy_action(&lp), 2);
    assert!(actor_forward(&p, &x, 2, p.hidden0(), &[false; 5], &mut c).is_err());
}

#[test]
fn uniform_over_three_has_entropy_ln3() {
    let lp = masked_log_softmax(&[0.0f64; 5], &[false, true, true, true, false]).unwrap();
    assert!((entropy(&lp) - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn critic_permutation_and_shape() {
    let p: Params<f64> = init_params(NetConfig::critic(16, 4, 2), 5).unwrap();
    let mut rng = stream_rng(6);
    let mut c = Cache::new();
    for rows in [2usize, 10] {
        let x = random_tokens(&mut rng, rows, TOKEN_FEATURES);
        let v = critic_forward(&p, &x, rows, &mut c).unwrap();
        assert!(v.is_finite());
        let mut perm: Vec<usize> = (0..rows).rev().collect();
        perm.rotate_left(1);
        let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * TOKEN_FEATURES..(i + 1) * TOKEN_FEATURES].to_vec()).collect();
        let vp = critic_forward(&p, &xp, rows, &mut c).unwrap();
        assert!((v - vp).abs() <= 1e-9 * v.abs().max(1.0));
    }
}

#[test]
fn critic_pooling_semantics() {
    let p: Params<f64> = init_params(NetConfig::critic(16, 4, 1), 8).unwrap();
    let mut rng = stream_rng(9);
    let mut c = Cache::new();
    let x = random_tokens(&mut rng, 3, TOKEN_FEATURES);
    let v = critic_forward(&p, &x, 3, &mut c).unwrap();
    // attention and mean pooling both normalize by count, so doubling the
    // whole multiset is invariant; doubling one entity is not
    let mut all = x.clone();
    all.extend_from_slice(&x);
    let v_all = critic_forward(&p, &all, 6, &mut c).unwrap();
    assert!((v - v_all).abs() < 1e-9);
    let mut one = x.clone();
    one.extend_from_slice(&x[..TOKEN_FEATURES]);
    let v_one = critic_forward(&p, &one, 4, &mut c).unwrap();
    assert!((v - v_one).abs() > 1e-6);
}

#[test]
fn layer_norm_rows_are_standardized() {
    let p: Params<f64> = init_params(NetConfig::actor(16, 4, 2), 2).unwrap();
    let mut rng = stream_rng(3);
    let x = random_tokens(&mut rng, 5, TOKEN_FEATURES);
    let mut c = Cache::new();
    actor_forward(&p, &x, 5, p.hidden0(), &[true; 5], &mut c).unwrap();
    let mut count = 0;
    for row in c.normalized_rows() {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let v = row.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / row.len() as f64;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        count += 1;
    }
    assert_eq!(count, 6 * 5);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let p: Params<f64> = init_params(tiny(true), 1).unwrap();
    let mut rng = stream_rng(1);
    let x = random_tokens(&mut rng, 3, 5);
    let mut c = Cache::new();
    forward(&p, &x, 3, Some(p.hidden0()), &mut c).unwrap();
    let mut g = p.zeros_like();
    let mut dh = [1.0; 8];
    backward(&p, &c, &[0.0; 5], Some(&[0.0; 8]), &mut g, &mut Scratch::new(), Some(&mut dh));
    assert!(g.iter().all(|&v| v == 0.0));
    assert!(dh.iter().all(|&v| v == 0.0));
}

#[test]
fn masked_logit_has_zero_gradient() {
    let lp = masked_log_softmax(&[0.3f64, 1.0, -0.2, 0.5, 2.0], &[false, true, true, true, false]).unwrap();
    let g = policy_logit_grad(&lp, 2, 1.0, 0.5);
    assert_eq!(g[0], 0.0);
    assert_eq!(g[4], 0.0);
    // finite-difference check of the legal entries
    let f = |l: &[f64; 5]| {
        let lp = masked_log_softmax(l, &[false, true, true, true, false]).unwrap();
        lp[2] + 0.5 * entropy(&lp)
    };
    let base = [0.3f64, 1.0, -0.2, 0.5, 2.0];
    for j in 1..4 {
        let (mut a, mut b) = (base, base);
        a[j] += 1e-6;
        b[j] -= 1e-6;
        assert!(((f(&a) - f(&b)) / 2e-6 - g[j]).abs() < 1e-7);
    }
}

pub(crate) fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-8
}

/// Scalar probe: a fixed linear functional of the head output and the
/// output hidden token, summed over a short recurrent sequence.
fn probe(p: &Params<f64>, xs: &[Vec<f64>], n: usize, wo: &[f64], wh: &[f64]) -> f64 {
    let mut c = Cache::new();
    let mut h = p.hidden0().to_vec();
    let mut total = 0.0;
    for x in xs {
        forward(p, x, n, p.cfg.hidden_token.then_some(h.as_slice()), &mut c).unwrap();
        total += c.output().iter().zip(wo).map(|(a, b)| a * b).sum::<f64>();
        if p.cfg.hidden_token {
            h = c.hidden_out().to_vec();
        }
    }
    total + h.iter().zip(wh).map(|(a, b)| a * b).sum::<f64>()
}

fn relu_margin(p: &Params<f64>, xs: &[Vec<f64>], n: usize) -> f64 {
    let mut c = Cache::new();
    let mut h = p.hidden0().to_vec();
    let mut m = f64::INFINITY;
    for x in xs {
        forward(p, x, n, p.cfg.hidden_token.then_some(h.as_slice()), &mut c).unwrap();
        m = m.min(c.relu_margin());
        if p.cfg.hidden_token {
            h = c.hidden_out().to_vec();
        }
    }
    m
}

fn analytic(p: &Params<f64>, xs: &[Vec<f64>], n: usize, wo: &[f64], wh: &[f64]) -> Vec<f64> {
    let mut caches = Vec::new();
    let mut h = p.hidden0().to_vec();
    for x in xs {
        let mut c = Cache::new();
        forward(p, x, n, p.cfg.hidden_token.then_some(h.as_slice()), &mut c).unwrap();
        if p.cfg.hidden_token {
            h = c.hidden_out().to_vec();
        }
        caches.push(c);
    }
    let mut g = p.zeros_like();
    let mut s = Scratch::new();
    let d = p.cfg.d_model;
    let mut dh_next = wh.to_vec();
    let mut dh_in = vec![0.0; d];
    for c in caches.iter().rev() {
        if p.cfg.hidden_token {
            backward(p, c, wo, Some(&dh_next), &mut g, &mut s, Some(&mut dh_in));
            dh_next.copy_from_slice(&dh_in);
        } else {
            backward(p, c, wo, None, &mut g, &mut s, None);
        }
    }
    if let Some(seg) = p.layout.hidden0 {
        for (gi, d) in seg.of_mut(&mut g).iter_mut().zip(&dh_next) {
            *gi += d;
        }
    }
    g
}

pub(crate) fn check_gradients(hidden: bool, steps: usize, seed: u64) {
    let cfg = tiny(hidden);
    let mut p: Params<f64> = init_params(cfg, seed).unwrap();
    let mut rng = stream_rng(seed + 100);
    // move layer-norm affine terms and the head away from their init values
    for x in p.data.iter_mut() {
        *x += (rng.random::<f64>() - 0.5) * 0.2;
    }
    let n = 3;
    // finite differences are only an oracle away from ReLU kinks
    let xs = loop {
        let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_tokens(&mut rng, n, cfg.in_features)).collect();
        if relu_margin(&p, &xs, n) > 1e-2 {
            break xs;
        }
    };
    let wo: Vec<f64> = (0..cfg.outputs).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let wh: Vec<f64> = if hidden { (0..cfg.d_model).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect() } else { vec![] };
    let g = analytic(&p, &xs, n, &wo, &wh);
    let eps = 1e-4;
    for i in 0..p.len() {
        let orig = p.data[i];
        p.data[i] = orig + eps;
        let fp = probe(&p, &xs, n, &wo, &wh);
        p.data[i] = orig - eps;
        let fm = probe(&p, &xs, n, &wo, &wh);
        p.data[i] = orig;
        let num = (fp - fm) / (2.0 * eps);
        assert!(rel_close(g[i], num, 1e-3), "param {i}: analytic {} numeric {num}", g[i]);
    }
}

#[test]
fn actor_gradients_match_finite_differences() {
    check_gradients(true, 1, 1);
}

#[test]
fn actor_bptt_gradients_match_finite_differences() {
    check_gradients(true, 3, 2);
}

#[test]
fn critic_gradients_match_finite_differences() {
    check_gradients(false, 1, 3);
}


mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn actor_distribution_ignores_row_order(seed in 0u64..1000, n in 2usize..8, shift in 1usize..7) {
            let p: Params<f64> = init_params(NetConfig::actor(16, 4, 2), seed % 7).unwrap();
            let mut rng = stream_rng(seed);
            let x = random_tokens(&mut rng, n, TOKEN_FEATURES);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(shift % n);
            let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * TOKEN_FEATURES..(i + 1) * TOKEN_FEATURES].to_vec()).collect();
            let mut c = Cache::new();
            let a = actor_forward(&p, &x, n, p.hidden0(), &[true; 5], &mut c).unwrap();
            let ha = c.hidden_out().to_vec();
            let b = actor_forward(&p, &xp, n, p.hidden0(), &[true; 5], &mut c).unwrap();
            let tv: f64 = a.iter().zip(&b).map(|(x, y)| (x.exp() - y.exp()).abs()).sum::<f64>() / 2.0;
            prop_assert!(tv < 1e-5);
            for (u, v) in ha.iter().zip(c.hidden_out()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn critic_value_ignores_row_order(seed in 0u64..1000, n in 1usize..10, shift in 0usize..9) {
            let p: Params<f64> = init_params(NetConfig::critic(16, 4, 2), seed % 5).unwrap();
            let mut rng = stream_rng(seed);
            let x = random_tokens(&mut rng, n, TOKEN_FEATURES);
            let mut perm: Vec<usize> = (0..n).rev().collect();
            perm.rotate_left(shift % n);
            let xp: Vec<f64> = perm.iter().flat_map(|&i| x[i * TOKEN_FEATURES..(i + 1) * TOKEN_FEATURES].to_vec()).collect();
            let mut c = Cache::new();
            let a = critic_forward(&p, &x, n, &mut c).unwrap();
            let b = critic_forward(&p, &xp, n, &mut c).unwrap();
            prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3));
        }
    }
}
