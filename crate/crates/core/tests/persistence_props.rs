use proptest::prelude::*;

use ivmod_core::persistence::{sdc_at_severity, track, TrackerConfig};
use ivmod_core::OccupancyMask;

const W: usize = 24;
const H: usize = 16;

/// Frames of a few rectangles that drift and blink.
fn sequence() -> impl Strategy<Value = Vec<OccupancyMask>> {
    let blob = (0usize..W, 0usize..H, 1usize..6, 1usize..6, -2i32..=2, -1i32..=1, 0.0f64..0.5);
    (prop::collection::vec(blob, 1..4), 15usize..22, any::<u64>()).prop_map(|(blobs, n, salt)| {
        (0..n)
            .map(|t| {
                let mut m = OccupancyMask::new(W, H);
                for (k, &(c0, r0, w, h, dc, dr, p_off)) in blobs.iter().enumerate() {
                    let hash = salt.wrapping_mul(31 + t as u64).wrapping_add(k as u64 * 977) % 1000;
                    if (hash as f64) < p_off * 1000.0 {
                        continue;
                    }
                    let c = (c0 as i32 + dc * t as i32).rem_euclid(W as i32) as usize;
                    let r = (r0 as i32 + dr * t as i32).rem_euclid(H as i32) as usize;
                    for y in r..(r + h).min(H) {
                        for x in c..(c + w).min(W) {
                            m.set(y, x, true);
                        }
                    }
                }
                m
            })
            .collect()
    })
}

fn subset(a: &OccupancyMask, b: &OccupancyMask) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| !*x || *y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lower_m_keeps_more(frames in sequence(), v in 0usize..6, coasting: bool) {
        let loose = track(&frames, &TrackerConfig { m: 10, n: 15, vicinity_px: v, coasting }).unwrap();
        let tight = track(&frames, &TrackerConfig { m: 12, n: 15, vicinity_px: v, coasting }).unwrap();
        for (a, b) in tight.persistent.iter().zip(&loose.persistent) {
            prop_assert!(subset(a, b));
        }
    }

    #[test]
    fn wider_vicinity_keeps_more(frames in sequence(), v in 0usize..6, coasting: bool) {
        let near = track(&frames, &TrackerConfig { m: 8, n: 15, vicinity_px: v, coasting }).unwrap();
        let far = track(&frames, &TrackerConfig { m: 8, n: 15, vicinity_px: v + 3, coasting }).unwrap();
        for (a, b) in near.persistent.iter().zip(&far.persistent) {
            prop_assert!(subset(a, b));
        }
    }

    #[test]
    fn without_coasting_only_occupied_pixels_persist(frames in sequence(), m in 1usize..=15, v in 0usize..6) {
        let out = track(&frames, &TrackerConfig { m, n: 15, vicinity_px: v, coasting: false }).unwrap();
        for (p, f) in out.persistent.iter().zip(&frames) {
            prop_assert!(subset(p, f));
        }
        let coast = track(&frames, &TrackerConfig { m, n: 15, vicinity_px: v, coasting: true }).unwrap();
        for (a, b) in out.persistent.iter().zip(&coast.persistent) {
            prop_assert!(subset(a, b));
        }
    }

    #[test]
    fn warm_up_frames_are_empty(frames in sequence()) {
        let out = track(&frames, &TrackerConfig { m: 1, n: 15, vicinity_px: 0, coasting: true }).unwrap();
        prop_assert!(out.persistent[..14].iter().all(|m| m.is_empty()));
        prop_assert_eq!(out.persistent.len(), frames.len());
    }

    #[test]
    fn severity_verdict_is_antitone(series in prop::collection::vec(prop::option::of(0.0f64..0.3), 0..30)) {
        let levels = [0.0, 0.01, 0.05, 0.1, 0.15, 0.2];
        let hits = sdc_at_severity(&series, &levels);
        for w in hits.windows(2) {
            prop_assert!(w[0].1 || !w[1].1);
        }
    }
}

#[test]
fn short_sequences_and_bad_windows_are_rejected() {
    let frames = vec![OccupancyMask::new(4, 4); 10];
    assert!(track(&frames, &TrackerConfig::fp_default()).is_err());
    let frames = vec![OccupancyMask::new(4, 4); 20];
    assert!(track(&frames, &TrackerConfig { m: 16, ..TrackerConfig::fp_default() }).is_err());
}
