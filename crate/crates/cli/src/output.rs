//! File outputs of headless runs: PNG frames, metrics CSV, snapshots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use reef_core::metrics::{MetricsSample, CSV_HEADER};
use reef_core::substrate::{DisplayNorm, RgbFrame};
use reef_core::{save_snapshot, Hook, SimState};

pub fn write_png(path: &Path, frame: &RgbFrame) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), frame.width as u32, frame.height as u32);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| format!("{}: {e}", path.display()))?;
    w.write_image_data(&frame.pixels)
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Appends one CSV row per sample.
pub struct MetricsWriter {
    out: BufWriter<File>,
    channel: String,
    every: u64,
    last_sample: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path, channel: &str, every: u64, start: u64) -> Result<Self, String> {
        let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{CSV_HEADER}").map_err(|e| e.to_string())?;
        Ok(Self { out, channel: channel.to_string(), every, last_sample: start })
    }

    pub fn sample(&mut self, state: &SimState) -> Result<(), String> {
        let row = MetricsSample::take(state, &self.channel, self.last_sample).map_err(|e| e.to_string())?;
        self.last_sample = row.step;
        writeln!(self.out, "{}", row.csv_row()).map_err(|e| e.to_string())
    }

    pub fn finish(mut self) -> Result<(), String> {
        self.out.flush().map_err(|e| e.to_string())
    }
}

impl Hook for MetricsWriter {
    fn every(&self) -> u64 {
        self.every
    }

    fn on_step(&mut self, state: &SimState) -> Result<(), String> {
        self.sample(state)
    }
}

/// Writes `frame-<step>.png` into a directory.
pub struct FrameWriter {
    pub dir: PathBuf,
    pub every: u64,
    pub norm: DisplayNorm,
}

impl FrameWriter {
    pub fn path_for(&self, step: u64) -> PathBuf {
        self.dir.join(format!("frame-{step:08}.png"))
    }
}

impl Hook for FrameWriter {
    fn every(&self) -> u64 {
        self.every
    }

    fn on_step(&mut self, state: &SimState) -> Result<(), String> {
        write_png(&self.path_for(state.step_counter()), &state.substrate.render_rgb(&self.norm))
    }
}

/// Periodic snapshots named after the final output path: `run.crls`
/// becomes `run-<step>.crls`.
pub struct SnapshotWriter {
    pub base: PathBuf,
    pub every: u64,
}

impl SnapshotWriter {
    pub fn path_for(&self, step: u64) -> PathBuf {
        let stem = self.base.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot");
        let ext = self.base.extension().and_then(|s| s.to_str()).unwrap_or("crls");
        self.base.with_file_name(format!("{stem}-{step:08}.{ext}"))
    }
}

impl Hook for SnapshotWriter {
    fn every(&self) -> u64 {
        self.every
    }

    fn on_step(&mut self, state: &SimState) -> Result<(), String> {
        let path = self.path_for(state.step_counter());
        save_snapshot(state, &path).map_err(|e| format!("{}: {e}", path.display()))
    }
}
