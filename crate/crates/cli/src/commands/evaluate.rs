//! `evaluate`: compare predicted masks against truth masks and emit metric
//! reports (aggregate and per tile).

use std::path::Path;

use anyhow::{bail, Context, Result};

use floodseg_core::mask::{Mask, MaskLabel};
use floodseg_core::metrics::{ConfusionMatrix, MetricsReport};

use crate::commands::{write_effective_config, write_report, ReportRow};
use crate::config::PipelineConfig;
use crate::io_util::{sorted_files_with_extension, write_string_atomic};
use crate::raster::RasterData;

fn load_mask(path: &Path, band: &str) -> Result<Mask> {
    let data = RasterData::load(path).with_context(|| format!("loading {}", path.display()))?;
    let plane = data
        .band(band)
        .ok_or_else(|| anyhow::anyhow!("{} has no {band} band", path.display()))?;
    let labels = plane
        .iter()
        .map(|v| if *v >= 0.5 { MaskLabel::Water } else { MaskLabel::NonWater })
        .collect();
    Ok(Mask::new(data.width, data.height, labels))
}

pub fn run(
    config: &PipelineConfig,
    pred_dir: &Path,
    truth_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    write_effective_config(config, out_dir)?;
    let pred_files = sorted_files_with_extension(pred_dir, "rast")
        .with_context(|| format!("listing {}", pred_dir.display()))?;
    if pred_files.is_empty() {
        bail!("no .rast predictions in {}", pred_dir.display());
    }

    let mut total = ConfusionMatrix::new();
    let mut per_tile = String::from("id,PA,mIoU,FW-IoU\n");
    let mut scored = 0usize;
    for pred_path in &pred_files {
        let stem = pred_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow::anyhow!("bad file name {}", pred_path.display()))?;
        let truth_path = truth_dir.join(format!("{stem}.rast"));
        if !truth_path.exists() {
            bail!("no truth raster for prediction '{stem}' in {}", truth_dir.display());
        }
        // prediction dirs may carry either MASK (predictions) or TRUTH
        // rasters (identity evaluations); accept both
        let pred = load_mask(pred_path, "MASK").or_else(|_| load_mask(pred_path, "TRUTH"))?;
        let truth = load_mask(&truth_path, "TRUTH")?;
        if pred.width != truth.width || pred.height != truth.height {
            bail!("size mismatch for '{stem}'");
        }
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(&pred, &truth);
        let m = MetricsReport::from_matrix(&cm);
        per_tile.push_str(&format!("{stem},{},{},{}\n", m.pa, m.miou, m.fw_iou));
        total.merge(&cm);
        scored += 1;
    }

    let aggregate = MetricsReport::from_matrix(&total);
    write_report(
        out_dir,
        "metrics",
        &[ReportRow {
            method: "segmentation".to_string(),
            metrics: aggregate,
            seconds_per_tile: None,
        }],
    )?;
    write_string_atomic(&out_dir.join("per_tile.csv"), &per_tile)?;
    eprintln!(
        "evaluated {scored} tiles: PA {:.4} mIoU {:.4} FW-IoU {:.4}",
        aggregate.pa, aggregate.miou, aggregate.fw_iou
    );
    Ok(())
}
