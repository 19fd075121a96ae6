use guide_learn::{
    alpha_loss, bellman_target, clipped_objective, gae, sacp_reward, soft_update, surrogate_ratio, BootstrapConfig,
    PpoConfig, SacConfig, SACP_ZETA,
};
use proptest::prelude::*;

#[test]
fn bellman_target_examples() {
    assert!((bellman_target(1.0, false, 2.0, 0.0, 0.99, 0.2) - 2.98).abs() < 1e-12);
    assert_eq!(bellman_target(1.5, true, 1e9, -7.0, 0.99, 0.2), 1.5);
    assert_eq!(bellman_target(-0.25, false, 3.0, 1.0, 0.0, 0.2), -0.25);
    // Entropy bonus: a lower log-density raises the target.
    let y = bellman_target(0.0, false, 1.0, -2.0, 0.5, 0.1);
    assert!((y - 0.5 * (1.0 + 0.2)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn bellman_target_is_antitone_in_either_critic(
        r in -10.0f64..10.0, q1 in -50.0f64..50.0, q2 in -50.0f64..50.0,
        drop in 0.0f64..20.0, lp in -10.0f64..10.0, gamma in 0.0f64..0.999, alpha in 0.0f64..2.0,
    ) {
        let y = bellman_target(r, false, q1.min(q2), lp, gamma, alpha);
        let y1 = bellman_target(r, false, (q1 - drop).min(q2), lp, gamma, alpha);
        let y2 = bellman_target(r, false, q1.min(q2 - drop), lp, gamma, alpha);
        prop_assert!(y1 <= y && y2 <= y);
    }

    #[test]
    fn polyak_keeps_agreeing_signs(o in prop::collection::vec(-5.0f64..5.0, 1..20), tau in 0.0f64..=1.0, scale in 0.01f64..3.0) {
        let mut t: Vec<f64> = o.iter().map(|v| v * scale).collect();
        soft_update(&o, &mut t, tau).unwrap();
        for (a, b) in o.iter().zip(&t) {
            prop_assert!(a.signum() == b.signum() || *a == 0.0);
        }
    }

    #[test]
    fn clipped_ratio_stays_pessimistic(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, clip in 0.05f64..0.5) {
        let (obj, _) = clipped_objective(ratio, adv, clip);
        prop_assert!(obj <= ratio * adv + 1e-12);
        prop_assert!(obj <= ratio.clamp(1.0 - clip, 1.0 + clip) * adv + 1e-12);
    }

    #[test]
    fn zero_lambda_gae_is_one_step_td(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, any::<bool>(), any::<bool>()), 1..30),
        gamma in 0.0f64..0.999,
    ) {
        let r: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let v: Vec<f64> = rows.iter().map(|x| x.1).collect();
        let nv: Vec<f64> = rows.iter().map(|x| x.2).collect();
        let term: Vec<bool> = rows.iter().map(|x| x.3).collect();
        let ends: Vec<bool> = rows.iter().map(|x| x.3 || x.4).collect();
        let adv = gae(&r, &v, &nv, &term, &ends, gamma, 0.0);
        for t in 0..r.len() {
            let boot = if term[t] { 0.0 } else { nv[t] };
            prop_assert_eq!(adv[t], r[t] + gamma * boot - v[t]);
        }
    }
}

#[test]
fn alpha_loss_examples() {
    let (loss, d) = alpha_loss(&[-3.0], 0.2, -2.0);
    assert!((loss - 1.0).abs() < 1e-12);
    assert!((d - 5.0).abs() < 1e-12);
    assert_eq!(alpha_loss(&[2.0, 2.0], 0.7, -2.0).1, 0.0);
    // Too random (log π below −H̄): descending the derivative lowers α.
    let (_, d) = alpha_loss(&[-1.0, 0.5], 0.3, -2.0);
    assert!(d > 0.0);
    // Too deterministic: α goes up.
    let (_, d) = alpha_loss(&[4.0], 0.3, -2.0);
    assert!(d < 0.0);
}

#[test]
fn soft_update_examples() {
    let mut t = vec![0.0];
    soft_update(&[1.0], &mut t, 0.005).unwrap();
    assert!((t[0] - 0.005).abs() < 1e-15);
    let mut t = vec![-3.0, 4.0];
    soft_update(&[7.0, 8.0], &mut t, 1.0).unwrap();
    assert_eq!(t, vec![7.0, 8.0]);
    // Fixed online parameters: the gap shrinks by (1 − τ) per update.
    let (tau, online) = (0.005, 2.0);
    let mut t = vec![-1.0];
    for n in 1..=500 {
        soft_update(&[online], &mut t, tau).unwrap();
        let gap = (online - -1.0) * (1.0f64 - tau).powi(n);
        assert!(((online - t[0]) - gap).abs() < 1e-12);
    }
}

#[test]
fn sacp_reward_examples() {
    assert!((sacp_reward(1.0, 0.5, 0.4) - 0.8).abs() < 1e-15);
    assert_eq!(sacp_reward(1.3, 0.0, 0.4), 1.3);
    assert_eq!(sacp_reward(1.3, 9.0, 0.0), 1.3);
    assert_eq!(SACP_ZETA, 0.4);
}

#[test]
fn ppo_arithmetic_examples() {
    assert!((surrogate_ratio(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
    assert_eq!(surrogate_ratio(1.5, -1.0, 0.2), 1.5);
    assert!((surrogate_ratio(0.5, -1.0, 0.2) - 0.8).abs() < 1e-15);
    let adv = gae(&[1.0], &[2.0], &[2.0], &[false], &[true], 0.99, 0.95);
    assert!((adv[0] - 0.98).abs() < 1e-12);
    // Two steps: A₀ = δ₀ + γλ·δ₁.
    let adv = gae(&[1.0, 0.0], &[0.5, 0.2], &[0.2, 0.4], &[false, false], &[false, true], 0.9, 0.5);
    let d1 = 0.0 + 0.9 * 0.4 - 0.2;
    let d0 = 1.0 + 0.9 * 0.2 - 0.5;
    assert!((adv[1] - d1).abs() < 1e-12 && (adv[0] - (d0 + 0.45 * d1)).abs() < 1e-12);
}

#[test]
fn configuration_defaults() {
    let s = SacConfig::default();
    assert_eq!(s.gamma, 0.99);
    assert_eq!(s.alpha_init, 0.2);
    assert_eq!(s.target_entropy, -2.0);
    assert_eq!(s.polyak, 0.005);
    assert_eq!(s.batch, 256);
    assert_eq!((s.lr_policy, s.lr_q, s.lr_alpha), (3e-4, 3e-4, 3e-4));
    assert_eq!((s.adam_beta1, s.adam_beta2, s.adam_eps), (0.9, 0.999, 1e-8));
    assert_eq!(s.hidden, vec![256, 256]);
    assert_eq!(s.buffer_capacity, 1_000_000);
    assert_eq!(s.warmup_steps, 1_000);
    assert_eq!((s.mode_temperature_start, s.mode_temperature_end, s.mode_anneal_steps), (1.0, 0.1, 50_000));
    assert!(s.validate().is_ok());
    let p = PpoConfig::default();
    assert_eq!((p.clip, p.epochs_per_update, p.gae_lambda, p.batch, p.lr), (0.2, 10, 0.95, 64, 3e-4));
    assert!(p.validate().is_ok());
    let b = BootstrapConfig::default();
    assert_eq!((b.heads, b.inclusion, b.pessimism), (10, 0.8, 1.0));
    // The dumped configuration reloads to the same values.
    let back: SacConfig = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    let back: SacConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(back, s);
}

#[test]
fn configuration_ranges_are_enforced() {
    for bad in [
        SacConfig { gamma: 1.0, ..SacConfig::default() },
        SacConfig { gamma: -0.1, ..SacConfig::default() },
        SacConfig { polyak: 0.0, ..SacConfig::default() },
        SacConfig { polyak: 1.5, ..SacConfig::default() },
        SacConfig { batch: 0, ..SacConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(SacConfig { polyak: 1.0, gamma: 0.0, ..SacConfig::default() }.validate().is_ok());
    assert!(PpoConfig { clip: 0.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { gae_lambda: 1.1, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { gae_lambda: 1.0, ..PpoConfig::default() }.validate().is_ok());
    assert!(serde_json::from_str::<SacConfig>(r#"{"gama": 0.9}"#).is_err());
}

#[test]
fn temperature_anneals_linearly() {
    let s = SacConfig::default();
    assert_eq!(s.mode_temperature(0), 1.0);
    assert!((s.mode_temperature(25_000) - 0.55).abs() < 1e-12);
    assert!((s.mode_temperature(50_000) - 0.1).abs() < 1e-12);
    assert!((s.mode_temperature(90_000) - 0.1).abs() < 1e-12);
}
