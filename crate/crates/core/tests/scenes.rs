use std::collections::BTreeMap;

use tigm::eval::{self, ScalingConfig};
use tigm::model::{extract_stream, Cluster, FeatureConfig, FeatureSelector};
use tigm::synth::{self, sample_from_model};
use tigm::tigm::run_stream;
use tigm::{ModelState, Observation, TigmConfig};

fn scene(k: usize, n: usize, seed: u64) -> (Vec<Observation<f64>>, BTreeMap<u64, u64>) {
    let templates = synth::separated_templates(k, 20.0, 1.0);
    let (trajs, gt) = synth::generate_stream(&templates, n, seed).unwrap();
    let obs = extract_stream(&trajs, &FeatureConfig::new(FeatureSelector::StartEnd), 0).unwrap();
    (obs, gt)
}

#[test]
fn sampled_labels_follow_counts() {
    let mut state = ModelState::<f64>::new();
    let mut a = Cluster::singleton(1, &[0.0, 0.0], 0);
    for i in 1..90 {
        a.add(&[(i % 3) as f64, (i % 5) as f64]);
    }
    let mut b = Cluster::singleton(2, &[100.0, 100.0], 0);
    for i in 1..10 {
        b.add(&[100.0 + (i % 2) as f64, 100.0]);
    }
    state.clusters.insert(1, a);
    state.clusters.insert(2, b);
    let draws = sample_from_model(&state, 1000, 3).unwrap();
    let near_a = draws.iter().filter(|o| o.features[0] < 50.0).count() as f64;
    let sigma = (1000.0f64 * 0.9 * 0.1).sqrt();
    assert!((near_a - 900.0).abs() <= 3.0 * sigma, "{near_a} draws from the 90-member cluster");
}

#[test]
fn sampling_round_trip_recovers_cluster_count() {
    let (obs, _) = scene(4, 800, 11);
    let beta = 1.0 + 200f64.ln();
    let (state, _) = run_stream(&obs, TigmConfig::map(beta).unwrap()).unwrap();
    assert_eq!(state.cluster_count(), 4);
    let samples = sample_from_model(&state, 800, 12).unwrap();
    let (again, _) = run_stream(&samples, TigmConfig::map(beta).unwrap()).unwrap();
    assert_eq!(again.cluster_count(), state.cluster_count());
}

#[test]
fn single_path_work_is_n_minus_one() {
    let cfg = ScalingConfig {
        k: 1,
        beta: 20.0,
        seed: 1,
        repeats: 1,
    };
    let rows = eval::scaling_report(&[1, 50, 300], &cfg).unwrap();
    assert_eq!(rows[0].work, 0);
    assert_eq!(rows[1].work, 49);
    assert_eq!(rows[2].work, 299);
    assert!(rows.iter().all(|r| r.clusters == 1));
}

#[test]
fn doubling_n_doubles_work() {
    let cfg = ScalingConfig {
        k: 6,
        beta: 20.0,
        seed: 2,
        repeats: 1,
    };
    let rows = eval::scaling_report(&[500, 1000, 2000], &cfg).unwrap();
    for w in rows.windows(2) {
        let ratio = w[1].work as f64 / w[0].work as f64;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn sweep_is_nearly_monotone() {
    let (obs, gt) = scene(6, 600, 13);
    let betas = eval::parse_grid("0.2:12:0.2").unwrap();
    let rows = eval::beta_sweep(&obs, &betas, TigmConfig::map(1.0).unwrap(), Some(&gt)).unwrap();
    let mut jitter_points = 0;
    for w in rows.windows(2) {
        let rise = w[1].cluster_count as i64 - w[0].cluster_count as i64;
        assert!(rise <= 1, "count rose by {rise} at beta {}", w[1].beta);
        if rise > 0 {
            jitter_points += 1;
        }
    }
    assert!(jitter_points * 10 <= rows.len(), "{jitter_points} rises over {} points", rows.len());
    assert!(rows.iter().all(|r| r.accuracy.is_some()));
}

#[test]
fn sweep_endpoints_shatter_and_collapse() {
    let (obs, _) = scene(3, 120, 14);
    let rows = eval::beta_sweep(&obs, &[1e-4, 1e6], TigmConfig::map(1.0).unwrap(), None).unwrap();
    assert_eq!(rows[0].cluster_count, obs.len());
    assert_eq!(rows[1].cluster_count, 1);
}
