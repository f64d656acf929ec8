use edgedrift::harness::{gain_cdf, positive_gain_fraction, run_scenario, ScenarioConfig, Strategy, StrategyKind};

fn drift(kind: StrategyKind) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::shipped("drift_ab").unwrap().unwrap();
    cfg.strategy = Strategy::new(kind);
    cfg
}

#[test]
fn ams_like_matches_adaptive_accuracy_with_more_downlink() {
    let ams = run_scenario(&drift(StrategyKind::AmsLike)).unwrap();
    let adapt = run_scenario(&drift(StrategyKind::Adaptive)).unwrap();
    assert_eq!(ams.summary.mean_accuracy, adapt.summary.mean_accuracy);
    assert_eq!(ams.summary.up_bytes, adapt.summary.up_bytes);
    assert!(ams.summary.down_bytes > adapt.summary.down_bytes);
}

#[test]
fn noiseless_cloud_only_is_perfect() {
    let run = run_scenario(&drift(StrategyKind::CloudOnly)).unwrap();
    assert_eq!(run.summary.mean_accuracy, 1.0);
    assert!(run.series.rows.iter().all(|r| r.accuracy == 1.0));
    assert_eq!(run.summary.sessions, 0);
}

#[test]
fn edge_only_never_touches_the_link() {
    let run = run_scenario(&drift(StrategyKind::EdgeOnly)).unwrap();
    assert_eq!(run.summary.up_bytes + run.summary.down_bytes, 0);
    assert_eq!(run.summary.sessions, 0);
    assert!(run.series.rows.iter().all(|r| r.avg_fps == 30.0));
}

#[test]
fn adaptive_beats_edge_only_in_most_windows() {
    let adapt = run_scenario(&drift(StrategyKind::Adaptive)).unwrap();
    let edge = run_scenario(&drift(StrategyKind::EdgeOnly)).unwrap();
    let cdf = gain_cdf(&adapt.series, &edge.series).unwrap();
    assert_eq!(cdf.len(), adapt.series.rows.len());
    assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    assert!((cdf.last().unwrap().1 - 1.0).abs() < 1e-12);
    let frac = positive_gain_fraction(&cdf);
    assert!(frac > 0.7, "positive-gain fraction {frac}");
}

#[test]
fn cloud_only_uplink_follows_compression_model() {
    let cfg = drift(StrategyKind::CloudOnly);
    let run = run_scenario(&cfg).unwrap();
    // every frame goes up exactly once, compressed, in batches of one second
    let frames = cfg.duration_frames as f64;
    let per_frame = cfg.transport.compression.bytes_per_raw_frame as f64 / cfg.transport.compression.compression_ratio;
    let payload = frames * per_frame;
    let up = run.summary.up_bytes as f64;
    assert!(up >= payload, "up {up} < payload {payload}");
    assert!(up <= payload * 1.05, "framing overhead too large: {up} vs {payload}");
}

#[test]
fn metrics_are_well_formed() {
    for kind in StrategyKind::ALL {
        let run = run_scenario(&drift(kind)).unwrap();
        run.series.check().unwrap();
        assert_eq!(run.series.rows.len(), 180, "{kind}");
    }
}
