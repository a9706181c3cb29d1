//! Pixel-wise M-out-of-N persistence of fault-induced blobs over a frame
//! sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OccupancyMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub m: usize,
    pub n: usize,
    /// Chebyshev radius searched for persistent neighbours.
    pub vicinity_px: usize,
    /// Keep a pixel alive through frames in which it is momentarily empty.
    pub coasting: bool,
}

impl TrackerConfig {
    /// 10-of-15 with a 50 px vicinity and coasting, for false-positive blobs.
    pub const fn fp_default() -> Self {
        TrackerConfig {
            m: 10,
            n: 15,
            vicinity_px: 50,
            coasting: true,
        }
    }

    /// As [`TrackerConfig::fp_default`] but without coasting; misses do not
    /// coast.
    pub const fn fn_default() -> Self {
        TrackerConfig {
            coasting: false,
            ..Self::fp_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.n {
            return Err(Error::arg(format!(
                "tracker needs 1 <= m <= n, got m={} n={}",
                self.m, self.n
            )));
        }
        Ok(())
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::fp_default()
    }
}

/// Persistent pixels per frame; frames before the first full window are
/// empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersistenceVerdict {
    pub persistent: Vec<OccupancyMask>,
}

/// Summed-area table of a boolean grid, for O(1) window queries.
struct Integral {
    width: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn new(width: usize, height: usize, on: impl Fn(usize) -> bool) -> Self {
        let stride = width + 1;
        let mut sums = vec![0u32; stride * (height + 1)];
        for r in 0..height {
            let mut row = 0u32;
            for c in 0..width {
                row += on(r * width + c) as u32;
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Integral { width, sums }
    }

    /// Count over rows `r0..r1`, cols `c0..c1` (exclusive ends).
    fn window(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u32 {
        let s = self.width + 1;
        self.sums[r1 * s + c1] + self.sums[r0 * s + c0] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0]
    }
}

/// Runs the M/N tracker over a blob sequence.
///
/// At frame `t >= n-1` a pixel is persistent when it was occupied in at
/// least `m` of the last `n` frames and is either occupied now or coasting
/// is enabled, or when it is occupied now with fewer than `m` hits but a
/// pixel within `vicinity_px` (Chebyshev) has at least `m`.
pub fn track(blobs: &[OccupancyMask], cfg: &TrackerConfig) -> Result<PersistenceVerdict> {
    cfg.validate()?;
    if blobs.len() < cfg.n {
        return Err(Error::arg(format!(
            "sequence of {} frames is shorter than the tracker window {}",
            blobs.len(),
            cfg.n
        )));
    }
    let (w, h) = (blobs[0].width(), blobs[0].height());
    if let Some(t) = blobs.iter().position(|b| !b.same_dims(&blobs[0])) {
        return Err(Error::arg(format!(
            "frame {t} is {}x{}, expected {w}x{h}",
            blobs[t].width(),
            blobs[t].height()
        )));
    }

    let mut counts = vec![0usize; w * h];
    let mut persistent = Vec::with_capacity(blobs.len());
    let v = cfg.vicinity_px;
    for t in 0..blobs.len() {
        for (c, &on) in counts.iter_mut().zip(blobs[t].as_slice()) {
            *c += on as usize;
        }
        if t >= cfg.n {
            for (c, &on) in counts.iter_mut().zip(blobs[t - cfg.n].as_slice()) {
                *c -= on as usize;
            }
        }
        if t + 1 < cfg.n {
            persistent.push(OccupancyMask::new(w, h));
            continue;
        }
        let now = blobs[t].as_slice();
        let strong = Integral::new(w, h, |i| counts[i] >= cfg.m);
        let mask = OccupancyMask::from_fn(w, h, |r, c| {
            let i = r * w + c;
            if counts[i] >= cfg.m {
                return now[i] || cfg.coasting;
            }
            if !now[i] {
                return false;
            }
            let (r0, r1) = (r.saturating_sub(v), (r + v + 1).min(h));
            let (c0, c1) = (c.saturating_sub(v), (c + v + 1).min(w));
            strong.window(r0, r1, c0, c1) > 0
        });
        persistent.push(mask);
    }
    Ok(PersistenceVerdict { persistent })
}

/// Denominator of per-frame occupancy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OccupancyReference {
    /// Image size in pixels, for false-positive blobs.
    ImageArea(usize),
    /// Pixel count of the fault-free detections in each frame, for
    /// false-negative blobs.
    PerFrame(Vec<usize>),
}

/// Persistent pixel fraction per frame; `None` where the denominator is 0.
pub fn occupancy_series(
    verdict: &PersistenceVerdict,
    reference: &OccupancyReference,
) -> Result<Vec<Option<f64>>> {
    let frames = &verdict.persistent;
    match reference {
        OccupancyReference::ImageArea(area) => Ok(frames
            .iter()
            .map(|m| (*area > 0).then(|| m.count() as f64 / *area as f64))
            .collect()),
        OccupancyReference::PerFrame(denoms) => {
            if denoms.len() != frames.len() {
                return Err(Error::arg(format!(
                    "{} reference areas for {} frames",
                    denoms.len(),
                    frames.len()
                )));
            }
            Ok(frames
                .iter()
                .zip(denoms)
                .map(|(m, &d)| (d > 0).then(|| (m.count() as f64 / d as f64).min(1.0)))
                .collect())
        }
    }
}

/// Mean over frames with a defined value; `None` if there are none.
pub fn series_mean(series: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = series.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Whether the sequence counts as corrupted at each severity level.
///
/// Level 0 (or below) asks for any persistent pixel in any frame; positive
/// levels compare against the sequence-average occupancy.
pub fn sdc_at_severity(series: &[Option<f64>], levels: &[f64]) -> Vec<(f64, bool)> {
    let any = series.iter().flatten().any(|&v| v > 0.0);
    let avg = series_mean(series);
    levels
        .iter()
        .map(|&l| {
            let hit = if l <= 0.0 {
                any
            } else {
                avg.is_some_and(|a| a > l)
            };
            (l, hit)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames_with(w: usize, h: usize, n: usize, f: impl Fn(usize, usize, usize) -> bool) -> Vec<OccupancyMask> {
        (0..n)
            .map(|t| OccupancyMask::from_fn(w, h, |r, c| f(t, r, c)))
            .collect()
    }

    #[test]
    fn static_pixel_rule() {
        // Pixel (0,0) occupied in frames 0..12 of 15.
        let seq = frames_with(4, 4, 15, |t, r, c| r == 0 && c == 0 && t < 12);
        let cfg = TrackerConfig {
            vicinity_px: 0,
            ..TrackerConfig::fp_default()
        };
        let v = track(&seq, &cfg).unwrap();
        assert!(v.persistent[14].get(0, 0));
        let v = track(&seq, &TrackerConfig { coasting: false, ..cfg }).unwrap();
        assert!(!v.persistent[14].get(0, 0));
        assert!(v.persistent[..14].iter().all(|m| m.is_empty()));
    }

    #[test]
    fn dynamic_pixel_via_vicinity() {
        // Pixel A = (0,0): 9 of 15, occupied now. Pixel B = (0,30): 11 of 15.
        let seq = frames_with(40, 1, 15, |t, _, c| (c == 0 && t >= 6) || (c == 30 && t < 11));
        let v = track(&seq, &TrackerConfig::fp_default()).unwrap();
        assert!(v.persistent[14].get(0, 0));
        let near = TrackerConfig {
            vicinity_px: 29,
            ..TrackerConfig::fp_default()
        };
        assert!(!track(&seq, &near).unwrap().persistent[14].get(0, 0));
    }

    #[test]
    fn errors() {
        let seq = frames_with(2, 2, 5, |_, _, _| true);
        assert!(track(&seq, &TrackerConfig::fp_default()).is_err());
        let mut seq = frames_with(2, 2, 15, |_, _, _| true);
        seq[3] = OccupancyMask::new(3, 2);
        assert!(track(&seq, &TrackerConfig::fp_default()).is_err());
        let bad = TrackerConfig {
            m: 16,
            ..TrackerConfig::fp_default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn series_and_levels() {
        let seq = frames_with(2, 2, 15, |_, r, _| r == 0);
        let v = track(&seq, &TrackerConfig::fp_default()).unwrap();
        let s = occupancy_series(&v, &OccupancyReference::ImageArea(4)).unwrap();
        assert_eq!(s[14], Some(0.5));
        assert_eq!(s[0], Some(0.0));

        let quarter = vec![Some(0.25); 20];
        assert_eq!(sdc_at_severity(&quarter, &[0.0, 0.15]), vec![(0.0, true), (0.15, true)]);
        let zero = vec![Some(0.0); 20];
        assert_eq!(sdc_at_severity(&zero, &[0.0]), vec![(0.0, false)]);
        let tenth = vec![Some(0.1); 20];
        assert_eq!(sdc_at_severity(&tenth, &[0.15]), vec![(0.15, false)]);

        let refs = OccupancyReference::PerFrame(vec![0; 15]);
        assert!(occupancy_series(&v, &refs).unwrap().iter().all(Option::is_none));
        assert!(occupancy_series(&v, &OccupancyReference::PerFrame(vec![1])).is_err());
    }
}
