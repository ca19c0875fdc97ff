use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use refcheck_core::analysis::{histogram, modal_share, overlap};
use refcheck_core::model::{prompt_digest, FingerprintSet};
use refcheck_core::sim::{
    ground_truth_diff, AliasRoute, ConcealedSpec, ContextRule, Emission, PoolEntry, RegimeKind, RegimeSpec,
    ScheduledPool, SimRequest, Simulator, WindowPairVerdict,
};
use refcheck_core::time::{Timestamp, VirtualClock};

fn req<'a>(model: &'a str, prompt: &'a str) -> SimRequest<'a> {
    SimRequest {
        model,
        prompt,
        seed: 0,
        account_tag: None,
        region_tag: None,
    }
}

fn pool(prefix: &str, n: usize) -> Vec<PoolEntry> {
    (0..n).map(|i| PoolEntry::new(format!("{prefix}{i:03}"), 1.0)).collect()
}

fn emission_set(es: &[Emission]) -> FingerprintSet {
    es.iter().filter_map(|e| e.fingerprint.clone()).collect()
}

#[test]
fn rotating_pool_modal_share_tracks_max_weight() {
    let mut weights = vec![PoolEntry::new("fp_top", 0.188)];
    weights.extend((1..37).map(|i| PoolEntry::new(format!("fp_{i:03}"), (1.0 - 0.188) / 36.0)));
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let sim = Simulator::new(RegimeSpec::rotating_pool(weights, 41), Arc::new(clock)).unwrap();
    let obs: Vec<_> = (0..11_600).map(|_| sim.draw(&req("m", "p")).observation()).collect();
    let h = histogram(&obs);
    let sampled: FingerprintSet = sim.emissions().iter().filter_map(|e| e.fingerprint.clone()).collect();
    assert_eq!(h.unique(), sampled.len());
    assert!(h.unique() <= 37);
    let (top, share) = modal_share(&h).unwrap();
    assert_eq!(top, "fp_top");
    assert!((share - 0.188).abs() <= 0.02, "share {share}");
}

#[test]
fn alias_routing_covers_target_pool_at_fraction() {
    let models = BTreeMap::from([("gpt-4o-2024-08-06".to_string(), pool("fp_pin_", 129))]);
    let routes = vec![AliasRoute {
        alias: "gpt-4o".into(),
        target: "gpt-4o-2024-08-06".into(),
        fraction: 0.94,
    }];
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let sim = Simulator::new(RegimeSpec::alias_routed(models, routes, 5), Arc::new(clock)).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for _ in 0..11_600 {
        a.push(sim.draw(&req("gpt-4o", "p")));
        b.push(sim.draw(&req("gpt-4o-2024-08-06", "p")));
    }
    let r = overlap(&emission_set(&a), &emission_set(&b));
    assert!((r.b_covered - 0.94).abs() <= 0.03, "b_covered {}", r.b_covered);
}

#[test]
fn pinned_never_emits_a_second_fingerprint() {
    let sim = Simulator::new(
        RegimeSpec::pinned_stable("fp_only", 9),
        Arc::new(VirtualClock::new(Timestamp::from_millis(0))),
    )
    .unwrap();
    for i in 0..2000 {
        let e = sim.draw(&req("any", &format!("prompt {i}")));
        assert_eq!(e.fingerprint.as_deref(), Some("fp_only"));
    }
}

#[test]
fn identical_inputs_identical_emissions() {
    let run = || {
        let clock = VirtualClock::new(Timestamp::from_millis(0));
        let sim = Simulator::new(RegimeSpec::rotating_pool(pool("fp_", 20), 77), Arc::new(clock.clone())).unwrap();
        for i in 0..500 {
            sim.draw(&req("m", if i % 2 == 0 { "a" } else { "b" }));
            clock.advance(Duration::from_millis(10));
        }
        sim.emissions()
    };
    assert_eq!(run(), run());
}

#[test]
fn context_rules_route_by_tag() {
    let rules = vec![ContextRule {
        account_tag: None,
        region_tag: Some("eu".into()),
        pool: vec![PoolEntry::new("fp_eu", 1.0)],
    }];
    let sim = Simulator::new(
        RegimeSpec::context_dependent(vec![PoolEntry::new("fp_us", 1.0)], rules, 3),
        Arc::new(VirtualClock::new(Timestamp::from_millis(0))),
    )
    .unwrap();
    let mut r = req("m", "p");
    r.region_tag = Some("eu");
    assert_eq!(sim.draw(&r).fingerprint.as_deref(), Some("fp_eu"));
    r.region_tag = Some("us");
    assert_eq!(sim.draw(&r).fingerprint.as_deref(), Some("fp_us"));
}

#[test]
fn concealed_update_pins_public_prompts_only() {
    let at = Timestamp::from_millis(10_000);
    let regime = RegimeSpec::concealed_update(
        pool("fp_old_", 5),
        vec![ScheduledPool {
            at,
            pool: pool("fp_new_", 5),
        }],
        ConcealedSpec {
            public_prompt_digests: vec![prompt_digest("public")],
            pinned_fingerprint: "fp_old_000".into(),
        },
        4,
    );
    assert_eq!(regime.kind, RegimeKind::ConcealedUpdate);
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let sim = Simulator::new(regime, Arc::new(clock.clone())).unwrap();
    clock.set(at);
    for _ in 0..50 {
        assert_eq!(sim.draw(&req("m", "public")).fingerprint.as_deref(), Some("fp_old_000"));
        assert!(sim.draw(&req("m", "private")).fingerprint.unwrap().starts_with("fp_new_"));
    }
}

fn ids(es: &[Emission]) -> Vec<u64> {
    es.iter().map(|e| e.request_id).collect()
}

fn windows(sim: &Simulator, clock: &VirtualClock, n: usize, swap_between: bool) -> (Vec<Emission>, Vec<Emission>) {
    let base: Vec<_> = (0..n).map(|_| sim.draw(&req("m", "p"))).collect();
    if swap_between {
        clock.advance(Duration::from_secs(3600));
    }
    let cur: Vec<_> = (0..n).map(|_| sim.draw(&req("m", "p"))).collect();
    (base, cur)
}

#[test]
fn ground_truth_perfect_analyzer_on_pinned() {
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let sim = Simulator::new(RegimeSpec::pinned_stable("fp_a", 1), Arc::new(clock.clone())).unwrap();
    let verdicts: Vec<_> = (0..10)
        .map(|_| {
            let (b, c) = windows(&sim, &clock, 20, false);
            WindowPairVerdict {
                baseline_ids: ids(&b),
                current_ids: ids(&c),
                flagged: emission_set(&b) != emission_set(&c),
            }
        })
        .collect();
    let r = ground_truth_diff(&sim.emissions(), &verdicts).unwrap();
    assert_eq!(r.agreement(), 1.0);
    assert_eq!(r.true_negative, 10);
}

#[test]
fn ground_truth_infinite_threshold_misses_drift() {
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let regime = RegimeSpec::drift(
        pool("fp_a", 5),
        vec![ScheduledPool {
            at: Timestamp::from_millis(1),
            pool: pool("fp_b", 5),
        }],
        2,
    );
    let sim = Simulator::new(regime, Arc::new(clock.clone())).unwrap();
    let (b, c) = windows(&sim, &clock, 30, true);
    let v = WindowPairVerdict {
        baseline_ids: ids(&b),
        current_ids: ids(&c),
        flagged: false,
    };
    let r = ground_truth_diff(&sim.emissions(), &[v]).unwrap();
    assert_eq!((r.false_negative, r.true_positive), (1, 0));
}

#[test]
fn ground_truth_zero_threshold_flags_stationary() {
    let clock = VirtualClock::new(Timestamp::from_millis(0));
    let sim = Simulator::new(RegimeSpec::rotating_pool(pool("fp_", 8), 3), Arc::new(clock.clone())).unwrap();
    let verdicts: Vec<_> = (0..5)
        .map(|_| {
            let (b, c) = windows(&sim, &clock, 30, false);
            WindowPairVerdict {
                baseline_ids: ids(&b),
                current_ids: ids(&c),
                flagged: true,
            }
        })
        .collect();
    let r = ground_truth_diff(&sim.emissions(), &verdicts).unwrap();
    assert_eq!(r.false_positive, 5);
    assert_eq!(r.false_positive_rate(), Some(1.0));
}

#[test]
fn ground_truth_rejects_unknown_ids() {
    let sim = Simulator::new(
        RegimeSpec::pinned_stable("fp_a", 1),
        Arc::new(VirtualClock::new(Timestamp::from_millis(0))),
    )
    .unwrap();
    sim.draw(&req("m", "p"));
    let v = WindowPairVerdict {
        baseline_ids: vec![0],
        current_ids: vec![99],
        flagged: false,
    };
    assert!(ground_truth_diff(&sim.emissions(), &[v]).is_err());
}

#[test]
fn regime_toml_round_trip() {
    let regime = RegimeSpec::drift(
        pool("fp_a", 2),
        vec![ScheduledPool {
            at: Timestamp::from_millis(5_000),
            pool: pool("fp_b", 2),
        }],
        11,
    );
    let text = regime.to_toml();
    assert_eq!(RegimeSpec::from_toml(&text).unwrap(), regime);
}

#[test]
fn invalid_regimes_are_rejected() {
    let mut r = RegimeSpec::rotating_pool(vec![PoolEntry::new("a", -1.0)], 1);
    assert!(r.validate().is_err());
    r.pool = vec![PoolEntry::new("a", f64::INFINITY)];
    assert!(r.validate().is_err());
    let r = RegimeSpec::drift(
        pool("a", 1),
        vec![
            ScheduledPool {
                at: Timestamp::from_millis(5),
                pool: pool("b", 1),
            },
            ScheduledPool {
                at: Timestamp::from_millis(5),
                pool: pool("c", 1),
            },
        ],
        1,
    );
    assert!(r.validate().is_err());
}
