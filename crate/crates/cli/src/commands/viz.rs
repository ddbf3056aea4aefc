use std::path::PathBuf;

use clap::Args;
use featsplat_core::probe::pca_visualize;
use featsplat_core::FeatureImage;
use serde::Serialize;

use super::sidecar_record;
use crate::error::{CliError, CliResult};
use crate::formats::load_fmap;
use crate::manifest::save_png;
use crate::record::{to_value, RunRecord};

#[derive(Debug, Clone, Args, Serialize)]
pub struct VizArgs {
    /// Feature map to visualize. One-channel maps (depth) are min-max
    /// scaled to grey; wider maps are projected on their top three
    /// principal components.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn grey(img: &FeatureImage) -> FeatureImage {
    let (lo, hi) = img.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let data = img.data.iter().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
    FeatureImage { data, ..img.clone() }
}

pub(super) fn run(a: &VizArgs) -> CliResult<()> {
    let f = load_fmap(&a.features)?;
    let img = match f.channels {
        1 => grey(&f),
        c if c >= 3 => pca_visualize(&f)?,
        c => return Err(CliError::Validation(format!("cannot visualize a {c}-channel map"))),
    };
    save_png(&a.out, &img)?;
    let mut record = RunRecord::new("viz", 0, to_value(a));
    record.outputs = vec![a.out.clone()];
    record.save(&sidecar_record(&a.out))
}
