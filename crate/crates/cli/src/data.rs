use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use leafdet::dataio::{expand_manifest, split_dataset, DirSink, Manifest};
use leafdet::ExperimentConfig;

use crate::failure::CmdResult;
use crate::output::{emit, json};
use crate::{Ctx, Format};

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Source manifest; entry paths resolve against its directory.
    #[arg(long = "in", value_name = "MANIFEST")]
    input: PathBuf,
    /// Output directory; receives images/, annotations/ and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Config whose `[augment]` ops replace those of `--config`.
    #[arg(long, value_name = "PATH")]
    ops_config: Option<PathBuf>,
    /// Assign train/val/test to source items before expanding, using the
    /// configured ratios and `--seed`. Existing assignments are replaced.
    #[arg(long)]
    assign_splits: bool,
}

pub fn augment(ctx: &Ctx, a: AugmentArgs) -> CmdResult {
    let augment_cfg = match &a.ops_config {
        Some(p) => ExperimentConfig::load(p)?.augment,
        None => ctx.config.augment.clone(),
    };
    let mut manifest = Manifest::load(&a.input)?;
    if a.assign_splits {
        let ids: Vec<String> = manifest.entries.keys().cloned().collect();
        let split = split_dataset(&ids, augment_cfg.split, ctx.seed)?;
        for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            for id in part {
                manifest.entries.get_mut(id).expect("id from manifest").split = Some(name.to_string());
            }
        }
    }
    let base = a.input.parent().unwrap_or(Path::new("."));
    let mut sink = DirSink::new(&a.out)?;
    let manifest_path = a.out.join("manifest.json");
    let expanded = match expand_manifest(&manifest, base, &augment_cfg.ops, &mut sink) {
        Ok(m) => m,
        Err(failure) => {
            let partial = a.out.join("manifest.partial.json");
            failure.partial.save(&partial)?;
            return Err(anyhow!("{failure}; partial manifest in {}", partial.display()).into());
        }
    };
    expanded.save(&manifest_path)?;
    let text = match ctx.format {
        Format::Json => json(&serde_json::json!({
            "inputs": manifest.len(),
            "outputs": expanded.len(),
            "ops": augment_cfg.ops.iter().map(|o| o.tag()).collect::<Vec<_>>(),
            "manifest": manifest_path,
        })),
        Format::Text => format!(
            "expanded {} items into {} outputs; manifest {}\n",
            manifest.len(),
            expanded.len(),
            manifest_path.display()
        ),
    };
    Ok(emit(None, &text)?)
}
