//! Report files. Every mode writes `summary.json` plus CSV tables; the
//! per-image table always has the columns
//!
//! `injection_id, target, layer, coords, bit, mode, image_id, verdict,
//! delta_fp, delta_fn_n, avg_conf_orig, avg_conf_corr, avg_size_orig,
//! avg_size_corr, a_fp_occ, a_fn_vac`
//!
//! with empty cells for undefined values and for fault columns of ingested
//! records.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::runner::{
    IngestReport, PermanentReport, SimulationReport, TransientReport,
};
use crate::error::Result;
use crate::fault_model::FaultDescriptor;
use crate::ivmod_metrics::{ImageEval, SdcReport};

#[derive(Debug, Serialize)]
struct ImageRow<'a> {
    injection_id: Option<usize>,
    target: Option<&'static str>,
    layer: Option<usize>,
    coords: Option<String>,
    bit: Option<u8>,
    mode: Option<&'static str>,
    image_id: &'a str,
    verdict: &'static str,
    delta_fp: i64,
    delta_fn_n: Option<f64>,
    avg_conf_orig: Option<f64>,
    avg_conf_corr: Option<f64>,
    avg_size_orig: Option<f64>,
    avg_size_corr: Option<f64>,
    a_fp_occ: f64,
    a_fn_vac: Option<f64>,
}

impl<'a> ImageRow<'a> {
    fn new(id: Option<usize>, fault: Option<&FaultDescriptor>, eval: &'a ImageEval, r: &SdcReport) -> Self {
        ImageRow {
            injection_id: id,
            target: fault.map(|f| f.target.as_str()),
            layer: fault.map(|f| f.layer),
            coords: fault.map(FaultDescriptor::coords_label),
            bit: fault.map(|f| f.bit.index()),
            mode: fault.map(|f| f.mode.as_str()),
            image_id: &eval.image_id,
            verdict: r.verdict.as_str(),
            delta_fp: r.delta_fp,
            delta_fn_n: r.delta_fn_n,
            avg_conf_orig: r.avg_conf_orig,
            avg_conf_corr: r.avg_conf_corr,
            avg_size_orig: r.avg_size_orig,
            avg_size_corr: r.avg_size_corr,
            a_fp_occ: r.a_fp_occ,
            a_fn_vac: r.a_fn_vac,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(dir.join(name))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Files written for a report, relative to the output directory.
pub trait WriteReport {
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>>;
}

impl WriteReport for TransientReport {
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        write_json(dir, "summary.json", &self.summary)?;
        write_csv(
            dir,
            "injections.csv",
            self.injections
                .iter()
                .map(|r| ImageRow::new(Some(r.injection_id), Some(&r.fault), &r.eval, &r.report)),
        )?;
        write_csv(dir, "per_bit.csv", &self.summary.per_bit)?;
        Ok(names(dir, &["summary.json", "injections.csv", "per_bit.csv"]))
    }
}

fn names(dir: &Path, files: &[&str]) -> Vec<PathBuf> {
    files.iter().map(|f| dir.join(f)).collect()
}

impl WriteReport for IngestReport {
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        write_json(dir, "summary.json", &self.summary)?;
        write_csv(
            dir,
            "images.csv",
            self.images.iter().map(|r| ImageRow::new(None, None, &r.eval, &r.report)),
        )?;
        Ok(names(dir, &["summary.json", "images.csv"]))
    }
}

#[derive(Serialize)]
struct SeriesRow {
    injection_id: usize,
    frame: usize,
    fp_occupancy: Option<f64>,
    fn_vacancy: Option<f64>,
}

impl WriteReport for PermanentReport {
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        write_json(dir, "summary.json", &self.summary)?;

        let levels: Vec<f64> = self.summary.levels.iter().map(|l| l.level).collect();
        let mut w = csv::Writer::from_writer(create(dir, "faults.csv")?);
        let mut header: Vec<String> = [
            "injection_id", "target", "layer", "coords", "bit", "mode", "due", "fp_occupancy",
            "fn_vacancy",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(levels.iter().map(|l| format!("fp_at_{l}")));
        header.extend(levels.iter().map(|l| format!("fn_at_{l}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.faults {
            let mut rec = vec![
                f.injection_id.to_string(),
                f.fault.target.as_str().to_string(),
                f.fault.layer.to_string(),
                f.fault.coords_label(),
                f.fault.bit.index().to_string(),
                f.fault.mode.as_str().to_string(),
                f.due.to_string(),
                opt(f.fp_occupancy),
                opt(f.fn_vacancy),
            ];
            rec.extend(f.fp_at_level.iter().map(|(_, b)| b.to_string()));
            rec.extend(f.fn_at_level.iter().map(|(_, b)| b.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        write_csv(
            dir,
            "series.csv",
            self.faults.iter().flat_map(|f| {
                f.fp_series
                    .iter()
                    .zip(&f.fn_series)
                    .enumerate()
                    .map(|(t, (&fp, &fn_))| SeriesRow {
                        injection_id: f.injection_id,
                        frame: t,
                        fp_occupancy: fp,
                        fn_vacancy: fn_,
                    })
            }),
        )?;
        write_csv(dir, "levels.csv", &self.summary.levels)?;
        write_csv(dir, "per_bit.csv", &self.summary.per_bit)?;
        let mut files = names(
            dir,
            &["summary.json", "faults.csv", "series.csv", "levels.csv", "per_bit.csv"],
        );

        if self.faults.iter().any(|f| !f.fp_masks.is_empty() || !f.fn_masks.is_empty()) {
            let mdir = dir.join("masks");
            fs::create_dir_all(&mdir)?;
            for f in &self.faults {
                for (kind, masks) in [("fp", &f.fp_masks), ("fn", &f.fn_masks)] {
                    if masks.iter().all(|m| m.is_empty()) {
                        continue;
                    }
                    for (t, m) in masks.iter().enumerate() {
                        let name = format!("fault{:04}_{kind}_{t:03}.pgm", f.injection_id);
                        let mut out = create(&mdir, &name)?;
                        m.write_pgm(&mut out)?;
                        out.flush()?;
                        files.push(mdir.join(name));
                    }
                }
            }
        }
        Ok(files)
    }
}

#[derive(Serialize)]
struct CurvePoint<'a> {
    curve: &'a str,
    rank: usize,
    recall: f64,
    precision: f64,
}

#[derive(Serialize)]
struct ApRow<'a> {
    curve: &'a str,
    ap50: f64,
    delta_ap50: f64,
    n_tp: usize,
    n_fp: usize,
}

impl WriteReport for SimulationReport {
    fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        write_json(dir, "summary.json", self)?;
        write_csv(
            dir,
            "pr_curves.csv",
            self.curves.iter().flat_map(|c| {
                c.points.iter().enumerate().map(|(k, &(recall, precision))| CurvePoint {
                    curve: &c.name,
                    rank: k + 1,
                    recall,
                    precision,
                })
            }),
        )?;
        write_csv(
            dir,
            "ap_summary.csv",
            self.curves.iter().map(|c| ApRow {
                curve: &c.name,
                ap50: c.ap50,
                delta_ap50: c.delta_ap50,
                n_tp: c.n_tp,
                n_fp: c.n_fp,
            }),
        )?;
        Ok(names(dir, &["summary.json", "pr_curves.csv", "ap_summary.csv"]))
    }
}
