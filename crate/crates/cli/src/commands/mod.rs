//! Command definitions and their implementations.

mod finetune;
mod fit;
mod probe;
mod render;
mod synth;
mod viz;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::record::VERSION;

pub use finetune::{held_out_consistency, load_library, FinetuneArgs, LibraryEntry, LibraryFile};
pub use fit::FitArgs;
pub use probe::{EvalArgs, ProbeArgs, ProbeDataset, ProbeFile, ProbeSampleEntry, Task};
pub use render::{RenderArgs, RenderMode};
pub use synth::SynthArgs;
pub use viz::VizArgs;

#[derive(Debug, Parser)]
#[command(name = "featsplat", version = VERSION, about = "Feature Gaussian splatting toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with posed images and feature maps.
    Synth(SynthArgs),
    /// Fit feature Gaussians to a scene manifest.
    Fit(FitArgs),
    /// Render a checkpoint from a manifest view or a camera file.
    Render(RenderArgs),
    /// Fine-tune the patch encoder on renders of fitted scenes.
    Finetune(FinetuneArgs),
    /// Train a linear segmentation or depth probe.
    Probe(ProbeArgs),
    /// Score a trained probe, or stored predictions, against ground truth.
    Eval(EvalArgs),
    /// Export a PCA (or depth) visualization of a feature map.
    Viz(VizArgs),
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth::run(&a),
        Command::Fit(a) => fit::run(&a),
        Command::Render(a) => render::run(&a),
        Command::Finetune(a) => finetune::run(&a),
        Command::Probe(a) => probe::run_probe(&a),
        Command::Eval(a) => probe::run_eval(&a),
        Command::Viz(a) => viz::run(&a),
    }
}

/// Where a command writes its run record when its output is a single file.
pub fn sidecar_record(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::format(path, e.to_string()))?;
    crate::formats::write_bytes(path, text.as_bytes())
}
