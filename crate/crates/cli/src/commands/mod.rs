//! Subcommand implementations and shared training-loop plumbing.

pub mod evaluate;
pub mod predict;
pub mod refine;
pub mod synth;
pub mod train_gan;
pub mod train_seg;

use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use floodseg_core::indices::Raster;
use floodseg_core::mask::Mask;
use floodseg_core::metrics::MetricsReport;

use crate::config::PipelineConfig;
use crate::dataset::{ingest, load_truth, Manifest, Split};
use crate::io_util::write_string_atomic;

/// A dataset scene loaded into memory.
pub struct LoadedScene {
    pub id: String,
    pub raster: Raster,
    pub truth: Mask,
}

pub fn load_split(data_dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<LoadedScene>> {
    let mut scenes = Vec::new();
    for entry in manifest.split_ids(split) {
        scenes.push(LoadedScene {
            id: entry.id.clone(),
            raster: ingest(&data_dir.join(&entry.raster))?,
            truth: load_truth(&data_dir.join(&entry.truth))?,
        });
    }
    if scenes.is_empty() {
        anyhow::bail!("no scenes in split {split:?}");
    }
    Ok(scenes)
}

/// Seeded shuffle of scene indices, chunked into batches. Chunks smaller
/// than `min_batch` are dropped (the patch discriminator needs at least two
/// samples for its batch statistics).
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    min_batch: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(floodseg_core::seeds::derive(seed, "train/shuffle", epoch));
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= min_batch)
        .map(|c| c.to_vec())
        .collect()
}

/// One row of a metrics report table.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds_per_tile: Option<f64>,
}

/// Write a report as `<name>.json` and `<name>.csv` under `out_dir`.
pub fn write_report(out_dir: &Path, name: &str, rows: &[ReportRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Report<'a> {
        rows: &'a [ReportRow],
    }
    let json = serde_json::to_string_pretty(&Report { rows })?;
    write_string_atomic(&out_dir.join(format!("{name}.json")), &json)?;

    let timed = rows.iter().any(|r| r.seconds_per_tile.is_some());
    let mut csv = String::from(if timed {
        "method,PA,mIoU,FW-IoU,seconds_per_tile\n"
    } else {
        "method,PA,mIoU,FW-IoU\n"
    });
    for row in rows {
        if timed {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.method,
                row.metrics.pa,
                row.metrics.miou,
                row.metrics.fw_iou,
                row.seconds_per_tile.map_or(String::from("0"), |s| s.to_string()),
            ));
        } else {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.method, row.metrics.pa, row.metrics.miou, row.metrics.fw_iou,
            ));
        }
    }
    write_string_atomic(&out_dir.join(format!("{name}.csv")), &csv)?;
    Ok(())
}

/// Write the effective configuration next to a command's outputs.
pub fn write_effective_config(config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_string_atomic(&out_dir.join("effective_config.toml"), &config.effective_toml())?;
    Ok(())
}

/// Run `work` over an item range on `threads` OS threads. Each worker
/// receives a disjoint chunk of indices; results are returned in index order.
pub fn parallel_map<T, F>(count: usize, threads: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, count.max(1));
    if threads == 1 {
        return (0..count).map(&work).collect();
    }
    let chunk = count.div_ceil(threads);
    let mut slots: Vec<Option<Result<T>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (t, slot_chunk) in slots.chunks_mut(chunk).enumerate() {
            let work = &work;
            scope.spawn(move || {
                for (k, slot) in slot_chunk.iter_mut().enumerate() {
                    *slot = Some(work(t * chunk + k));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker filled every slot"))
        .collect()
}
