use std::fs;
use std::io::Write;
use std::path::Path;

use super::{load_rgb, LandmarkFile};
use crate::error::{Error, Result};
use crate::evalmetrics::{lrms, psnr, ssim, LandmarkSet};

/// Metrics for one image pair. `lrms` needs landmark files for both frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lrms: Option<f64>,
}

/// Compares every PNG in `pred_dir` with the same-named PNG in `truth_dir`,
/// in name order. With `landmarks`, `<stem>.json` in both directories feeds
/// LRMS.
pub fn evaluate_directories(pred_dir: &Path, truth_dir: &Path, landmarks: bool, normalize: bool) -> Result<Vec<MetricRow>> {
    for d in [pred_dir, truth_dir] {
        if !d.is_dir() {
            return Err(Error::MissingFile(d.to_path_buf()));
        }
    }
    let mut names: Vec<String> = fs::read_dir(pred_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG files in {}", pred_dir.display())));
    }
    names
        .into_iter()
        .map(|name| {
            let a = load_rgb(&pred_dir.join(&name))?;
            let b = load_rgb(&truth_dir.join(&name))?;
            let lrms = if landmarks {
                let stem = name.trim_end_matches(".png");
                let read = |d: &Path| -> Result<LandmarkSet> {
                    LandmarkSet::new(LandmarkFile::read(&d.join(format!("{stem}.json")))?.to_matrix())
                };
                Some(lrms(&read(pred_dir)?, &read(truth_dir)?, normalize)?)
            } else {
                None
            };
            Ok(MetricRow {
                psnr: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
                lrms,
                name,
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV with one row per frame and a final `mean` row. An infinite PSNR is
/// written as `inf` and makes the mean `inf`.
pub fn write_metrics_csv(mut w: impl Write, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "frame,psnr,ssim,lrms")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.name, r.psnr, r.ssim, cell(r.lrms))?;
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_lrms = rows.iter().map(|r| r.lrms).sum::<Option<f64>>().map(|s| s / n);
    writeln!(w, "mean,{},{},{}", mean(&|r| r.psnr), mean(&|r| r.ssim), cell(mean_lrms))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmodel::synth;

    #[test]
    fn directory_metrics_and_csv() {
        let (pd, td) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let img = synth::texture_image(16, 16, 1);
        img.save(pd.path().join("a.png")).unwrap();
        img.save(td.path().join("a.png")).unwrap();
        let mut shifted = img.clone();
        shifted.pixels_mut().for_each(|p| p.0[0] = p.0[0].saturating_add(10));
        shifted.save(pd.path().join("b.png")).unwrap();
        img.save(td.path().join("b.png")).unwrap();
        let lm = |dx: f64| LandmarkFile { points: vec![[dx, 0.0], [3.0 + dx, 4.0]] };
        for n in ["a", "b"] {
            lm(0.0).write(&td.path().join(format!("{n}.json"))).unwrap();
        }
        lm(0.0).write(&pd.path().join("a.json")).unwrap();
        lm(1.0).write(&pd.path().join("b.json")).unwrap();

        let rows = evaluate_directories(pd.path(), td.path(), true, false).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].psnr, f64::INFINITY);
        assert_eq!(rows[0].ssim, 1.0);
        assert_eq!(rows[1].lrms, Some(1.0));
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,psnr,ssim,lrms");
        assert!(lines[1].starts_with("a.png,inf,1,0"));
        assert!(lines[3].starts_with("mean,inf,"));
    }

    #[test]
    fn missing_partner_is_reported() {
        let (pd, td) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth::texture_image(16, 16, 1).save(pd.path().join("a.png")).unwrap();
        let r = evaluate_directories(pd.path(), td.path(), false, true);
        assert!(matches!(r, Err(Error::MissingFile(_))));
    }
}
