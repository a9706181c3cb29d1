//! Newline-delimited JSON detection records, one object per image:
//!
//! ```json
//! {"image_id":"0001","width":640,"height":480,
//!  "detections":[{"bbox":[x1,y1,x2,y2],"category":3,"confidence":0.91}],
//!  "ground_truth":[{"bbox":[x1,y1,x2,y2],"category":3}],
//!  "flags":{"nan":false,"inf":false}}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection};
use crate::toy_detector::{InferenceTrace, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordDetection {
    pub bbox: [f64; 4],
    pub category: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordObject {
    pub bbox: [f64; 4],
    pub category: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordFlags {
    pub nan: bool,
    pub inf: bool,
}

/// Accepts string or integer ids.
fn image_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    #[serde(deserialize_with = "image_id")]
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub detections: Vec<RecordDetection>,
    #[serde(default)]
    pub ground_truth: Vec<RecordObject>,
    #[serde(default)]
    pub flags: RecordFlags,
}

/// A record after sanitising: boxes clipped, non-finite boxes dropped and
/// reflected in the flags.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Detection>,
    pub nan: bool,
    pub inf: bool,
}

fn to_box(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

impl DetectionRecord {
    pub fn from_trace(image_id: impl Into<String>, scene: &Scene, trace: &InferenceTrace) -> Self {
        let bbox = |b: &BBox| [b.x1, b.y1, b.x2, b.y2];
        DetectionRecord {
            image_id: image_id.into(),
            width: scene.width,
            height: scene.height,
            detections: trace
                .detections
                .iter()
                .map(|d| RecordDetection {
                    bbox: bbox(&d.bbox),
                    category: d.category,
                    confidence: d.confidence,
                })
                .collect(),
            ground_truth: scene
                .objects
                .iter()
                .map(|o| RecordObject {
                    bbox: bbox(&o.bbox),
                    category: o.category,
                })
                .collect(),
            flags: RecordFlags {
                nan: trace.nan_seen,
                inf: trace.inf_seen,
            },
        }
    }

    pub fn ingest(&self) -> IngestedImage {
        let (w, h) = (self.width as f64, self.height as f64);
        let mut nan = self.flags.nan;
        let mut inf = self.flags.inf;
        let mut detections = Vec::with_capacity(self.detections.len());
        for d in &self.detections {
            let values = d.bbox.iter().chain(std::iter::once(&d.confidence));
            if values.clone().any(|v| v.is_nan()) {
                nan = true;
            } else if values.clone().any(|v| v.is_infinite()) {
                inf = true;
            } else {
                detections.push(Detection::new(to_box(d.bbox).clip(w, h), d.category, d.confidence));
            }
        }
        let ground_truth = self
            .ground_truth
            .iter()
            .map(|g| Detection::ground_truth(to_box(g.bbox).clip(w, h), g.category))
            .collect();
        IngestedImage {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            detections,
            ground_truth,
            nan,
            inf,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("image {} has zero area", self.image_id));
        }
        if let Some(d) = self
            .detections
            .iter()
            .find(|d| d.confidence.is_finite() && !(0.0..=1.0).contains(&d.confidence))
        {
            return Err(format!("confidence {} outside [0, 1]", d.confidence));
        }
        if self.ground_truth.iter().any(|g| g.bbox.iter().any(|v| !v.is_finite())) {
            return Err("ground-truth box with non-finite coordinates".into());
        }
        Ok(())
    }
}

/// Parses newline-delimited records; blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        rec.check().map_err(parse_err)?;
        if !ids.insert(rec.image_id.clone()) {
            return Err(parse_err(format!("duplicate image_id {}", rec.image_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records_file(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_records(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn write_records<W: Write>(mut out: W, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Pairs records by image id, keeping the order of `orig`.
///
/// Every id must occur in both lists; otherwise the error names the
/// offending ids.
pub fn pair_records<'a>(
    orig: &'a [DetectionRecord],
    corr: &'a [DetectionRecord],
) -> Result<Vec<(&'a DetectionRecord, &'a DetectionRecord)>> {
    let by_id: BTreeMap<&str, &DetectionRecord> = corr.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let orig_ids: BTreeSet<&str> = orig.iter().map(|r| r.image_id.as_str()).collect();
    let only_orig: Vec<&str> = orig_ids.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    let only_corr: Vec<&str> = by_id.keys().copied().filter(|id| !orig_ids.contains(id)).collect();
    if !only_orig.is_empty() || !only_corr.is_empty() {
        return Err(Error::Data(format!(
            "unmatched image ids: only in original [{}], only in corrupted [{}]",
            only_orig.join(", "),
            only_corr.join(", ")
        )));
    }
    orig.iter()
        .map(|o| {
            let c = by_id[o.image_id.as_str()];
            if (o.width, o.height) != (c.width, c.height) {
                return Err(Error::Data(format!(
                    "image {} is {}x{} in the original and {}x{} in the corrupted records",
                    o.image_id, o.width, o.height, c.width, c.height
                )));
            }
            Ok((o, c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"image_id":"a","width":100,"height":50,"detections":[{"bbox":[10,10,120,30],"category":1,"confidence":0.9}],"ground_truth":[{"bbox":[10,10,100,30],"category":1}],"flags":{"nan":false,"inf":false}}"#;

    #[test]
    fn parses_and_clips() {
        let recs = read_records(LINE.as_bytes(), "mem").unwrap();
        let img = recs[0].ingest();
        assert_eq!(img.detections[0].bbox, BBox::new(10.0, 10.0, 100.0, 30.0));
        assert!(!img.nan && !img.inf);
    }

    #[test]
    fn integer_ids_and_defaults() {
        let recs = read_records(r#"{"image_id":7,"width":4,"height":4}"#.as_bytes(), "mem").unwrap();
        assert_eq!(recs[0].image_id, "7");
        assert!(recs[0].detections.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{LINE}\n\n{{broken\n");
        match read_records(text.as_bytes(), "f.jsonl") {
            Err(Error::Parse { line, source_name, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(source_name, "f.jsonl");
            }
            other => panic!("{other:?}"),
        }
        let dup = format!("{LINE}\n{LINE}\n");
        assert!(matches!(read_records(dup.as_bytes(), "f"), Err(Error::Parse { line: 2, .. })));
        let bad_conf = LINE.replace("0.9", "1.5");
        assert!(read_records(bad_conf.as_bytes(), "f").is_err());
    }

    #[test]
    fn unmatched_ids_are_listed() {
        let a = read_records(LINE.as_bytes(), "a").unwrap();
        let b = read_records(LINE.replace("\"a\"", "\"b\"").as_bytes(), "b").unwrap();
        let err = pair_records(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[a]") && err.contains("[b]"), "{err}");
        assert_eq!(pair_records(&a, &a).unwrap().len(), 1);
    }

    #[test]
    fn round_trip() {
        let recs = read_records(LINE.as_bytes(), "mem").unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(buf.as_slice(), "mem").unwrap(), recs);
    }
}
