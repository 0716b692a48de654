#[path = "support/log_oracle.rs"]
mod log_oracle;

use shoalguide_core::analytics::{emit_report, five_number, subinterval_stats, DEFAULT_BINS, METRICS_FILE};
use shoalguide_core::config::ObservationMode;
use shoalguide_core::dynamics::mirror_action;
use shoalguide_core::env::{Observation, Observer};
use shoalguide_core::ppo::{Mlp, Policy, PolicyCheckpoint};
use shoalguide_core::rng::make_rng;
use shoalguide_core::session::{read_log, run_session, write_log, SessionLog, SessionPolicies, SimulatedSchool};
use shoalguide_core::{RunConfig, TargetEnd, Vec2};

fn untrained(target: TargetEnd, seed: u64) -> PolicyCheckpoint {
    let mut config = RunConfig::default();
    config.reward.target_end = target;
    config.ppo.hidden = vec![16];
    let mut rng = make_rng(seed, 0);
    PolicyCheckpoint {
        net: Mlp::init(&config.ppo.hidden, &mut rng),
        config,
        curve: Vec::new(),
    }
}

fn session(config: &RunConfig, school_seed: u64) -> SessionLog {
    let p = SessionPolicies::from_checkpoints(&untrained(TargetEnd::Left, 1), &untrained(TargetEnd::Right, 2)).unwrap();
    run_session(config, p, &mut SimulatedSchool::new(&config.sim, school_seed)).unwrap()
}

#[test]
pub fn default_protocol_has_ten_alternating_blocks() {
    let log = session(&RunConfig::default(), 7);
    assert_eq!(log.records.len(), 900);
    let ends: Vec<TargetEnd> = log.records.iter().map(|r| r.target_end).collect();
    for (k, block) in ends.chunks(90).enumerate() {
        let want = if k % 2 == 0 { TargetEnd::Right } else { TargetEnd::Left };
        assert!(block.iter().all(|t| *t == want), "block {k}");
    }
    assert_eq!(ends.chunks(90).count(), 10);
}

/// Linear interpolation between order statistics at `q (n - 1)`.
fn oracle_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let lo_v = *v.select_nth_unstable_by(lo, f64::total_cmp).1;
    let hi_v = *v.select_nth_unstable_by(hi, f64::total_cmp).1;
    lo_v + (h - lo as f64) * (hi_v - lo_v)
}

#[test]
pub fn five_number_summary_matches_order_statistics() {
    let mut r = make_rng(9, 0);
    for _ in 0..1000 {
        let n = 1 + r.below(300);
        let xs: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        let s = five_number(&xs).unwrap();
        let want = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| oracle_quantile(&xs, q));
        let got = [s.min, s.q1, s.median, s.q3, s.max];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
pub fn block_statistics_cover_each_direction_block() {
    let log = session(&RunConfig::default(), 3);
    let stats = subinterval_stats(&log);
    assert_eq!(stats.len(), 10);
    for s in &stats {
        let xs: Vec<f64> = log.records[s.block * 90..(s.block + 1) * 90]
            .iter()
            .flat_map(|r| r.fish.iter().map(|f| f.x))
            .collect();
        assert!((s.stats.median - oracle_quantile(&xs, 0.5)).abs() <= 1e-12);
        assert_eq!(s.target_end, log.records[s.block * 90].target_end);
    }
}

#[test]
pub fn report_matches_independent_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::default();
    let mut texts = Vec::new();
    let mut logs = Vec::new();
    for seed in 0..4 {
        let log = session(&config, 100 + seed);
        let path = dir.path().join(format!("s{seed}.jsonl"));
        write_log(&log, &path).unwrap();
        texts.push(std::fs::read_to_string(&path).unwrap());
        logs.push(read_log(&path).unwrap().0);
    }
    let out = dir.path().join("report");
    let conditions = vec![
        ("pooled".to_string(), logs.clone()),
        ("first".to_string(), logs[..1].to_vec()),
    ];
    let report = emit_report(&conditions, &out, DEFAULT_BINS).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "boxstats_first.tsv",
            "boxstats_pooled.tsv",
            "hist_left_first.tsv",
            "hist_left_pooled.tsv",
            "hist_right_first.tsv",
            "hist_right_pooled.tsv",
            METRICS_FILE,
        ]
    );
    assert_eq!(report.files.len(), 7);

    let tsv = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    for (name, subset) in [("pooled", &texts[..]), ("first", &texts[..1])] {
        let want = log_oracle::metrics(subset, DEFAULT_BINS);
        let row = log_oracle::metrics_row(&tsv, name);
        let num = |k: &str| row[k].parse::<f64>().unwrap();
        assert_eq!(row["steps"].parse::<usize>().unwrap(), want.steps);
        assert_eq!(row["sessions"].parse::<usize>().unwrap(), subset.len());
        assert!((num("target_pct") - want.target_pct).abs() <= 1e-9);
        assert!((num("intermediate_pct") - want.intermediate_pct).abs() <= 1e-9);
        assert!((num("opposite_pct") - want.opposite_pct).abs() <= 1e-9);
        assert!((num("bhattacharyya") - want.bhattacharyya).abs() <= 1e-9);
    }

    let hist = std::fs::read_to_string(out.join("hist_left_pooled.tsv")).unwrap();
    let mut lines = hist.lines();
    assert_eq!(lines.next(), Some("bin_lo\tbin_hi\tdensity"));
    let mass: f64 = lines
        .map(|l| {
            let v: Vec<f64> = l.split('\t').map(|x| x.parse().unwrap()).collect();
            (v[1] - v[0]) * v[2]
        })
        .sum();
    assert!((mass - 1.0).abs() < 1e-9);

    let box_rows = std::fs::read_to_string(out.join("boxstats_pooled.tsv")).unwrap().lines().count();
    assert_eq!(box_rows, 1 + 4 * 10);
}

#[test]
pub fn mirrored_policy_is_the_reflection() {
    let ck = untrained(TargetEnd::Right, 4);
    let policy: Policy = ck.policy();
    let mut r = make_rng(10, 0);
    for _ in 0..500 {
        let obs = Observation {
            reference_point: Vec2::new(r.uniform(), r.uniform()),
            own_position: Vec2::new(r.uniform(), r.uniform()),
        };
        let left = policy.probabilities(&obs, TargetEnd::Left);
        let right = policy.probabilities(&obs.mirrored(), TargetEnd::Right);
        for a in 0..8 {
            assert!((left[a] - right[mirror_action(a)]).abs() <= 1e-15);
        }
        let mut r1 = make_rng(11, 0);
        let mut r2 = make_rng(11, 0);
        let a_left = policy.act(&obs, TargetEnd::Left, false, &mut r1);
        let a_right = policy.act(&obs.mirrored(), TargetEnd::Right, false, &mut r2);
        assert_eq!(a_left, mirror_action(a_right));
    }
}

#[test]
pub fn cluster_observations_follow_the_nearest_blob() {
    let centers = [Vec2::new(0.15, 0.2), Vec2::new(0.8, 0.25), Vec2::new(0.5, 0.85)];
    let mut r = make_rng(12, 0);
    let fish: Vec<Vec2> = (0..30)
        .map(|i| {
            let c = centers[i % 3];
            Vec2::new(c.x + 0.03 * r.normal(), c.y + 0.03 * r.normal())
        })
        .collect();
    let blob_means: Vec<Vec2> = (0..3)
        .map(|k| Vec2::mean(&fish.iter().skip(k).step_by(3).copied().collect::<Vec<_>>()).unwrap())
        .collect();
    // agents listed in a different order from the blobs
    let agents = [Vec2::new(0.55, 0.8), Vec2::new(0.1, 0.1), Vec2::new(0.9, 0.3)];
    let expected = [2, 0, 1];
    for seed in 0..10 {
        let mut observer = Observer::new(ObservationMode::ClusterAssignment, false, make_rng(seed, 1));
        let obs = observer.observe(&fish, &agents).unwrap();
        for (i, o) in obs.iter().enumerate() {
            assert!(o.reference_point.distance(blob_means[expected[i]]) <= 1e-12, "seed {seed} agent {i}");
            assert_eq!(o.own_position, agents[i]);
        }
    }
}
