use std::path::Path;

use proptest::prelude::*;

use ivmod_core::campaign::{
    ingest_and_score, read_records, run_to_dir, run_transient, write_records, CampaignConfig,
    CampaignMode, DetectionRecord,
};
use ivmod_core::toy_detector::{generate_scene, infer, DetectorModel, SceneSpec};
use ivmod_core::{BitPolicy, FaultTarget};

fn records(seed: u64, n: usize) -> Vec<DetectionRecord> {
    let model = DetectorModel::analytic();
    (0..n as u64)
        .map(|k| {
            let scene = generate_scene(&SceneSpec::default(), seed.wrapping_add(k)).unwrap();
            DetectionRecord::from_trace(format!("{k}"), &scene, &infer(&model, &scene, None).unwrap())
        })
        .collect()
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn records_scored_against_themselves_are_clean(seed: u64, n in 1usize..6) {
        let recs = records(seed, n);
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let parsed = read_records(buf.as_slice(), "mem").unwrap();
        let report = ingest_and_score(&parsed, &parsed, &CampaignConfig::default()).unwrap();
        prop_assert_eq!(report.summary.rates.sdc_rate, 0.0);
        prop_assert_eq!(report.summary.rates.due_rate, 0.0);
    }

    #[test]
    fn transient_rates_sum_to_one(seed: u64, weight: bool) {
        let cfg = CampaignConfig {
            seed: Some(seed),
            n_injections: 60,
            n_scenes: 8,
            target: if weight { FaultTarget::Weight } else { FaultTarget::Neuron },
            bit_policy: BitPolicy::ExponentOnly,
            workers: 2,
            ..CampaignConfig::for_mode(CampaignMode::Transient)
        };
        let r = run_transient(&cfg).unwrap().summary.rates;
        prop_assert!((r.sdc_rate + r.due_rate + r.benign_rate - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn worker_count_does_not_change_reports(seed: u64, workers in 2usize..9) {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = CampaignConfig {
            seed: Some(seed),
            n_injections: 40,
            n_scenes: 6,
            target: FaultTarget::Weight,
            ..CampaignConfig::for_mode(CampaignMode::Transient)
        };
        cfg.workers = 1;
        run_to_dir(&cfg, &tmp.path().join("a")).unwrap();
        cfg.workers = workers;
        run_to_dir(&cfg, &tmp.path().join("b")).unwrap();
        prop_assert_eq!(read_dir(&tmp.path().join("a")), read_dir(&tmp.path().join("b")));
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let cfg = CampaignConfig::default();
    assert!(matches!(run_transient(&cfg), Err(ivmod_core::Error::Config(_))));
}
