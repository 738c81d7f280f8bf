//! Runs every pipeline stage on a small synthetic dataset in a scratch
//! directory, the same as `eegdiff --desk run --synth` with overrides.
//!
//! cargo run --release --example pipeline [out_dir]

use eegdiff::pipeline::{run_all, PipelineConfig};

fn main() -> eegdiff::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "pipeline_demo".into());
    let overrides: Vec<String> = [
        format!("paths.data_dir=\"{out}/data\""),
        format!("paths.checkpoint_dir=\"{out}/checkpoints\""),
        format!("paths.report_dir=\"{out}/reports\""),
        "synth.n_per_class=20".into(),
        "ddpm.epochs=15".into(),
        "classify.classifiers=[\"knn\", \"logreg\", \"cnn\"]".into(),
    ]
    .into();
    let cfg = PipelineConfig::layered(&PipelineConfig::desk(), "", &overrides)?;
    run_all(&cfg, true)?;
    let summary = std::fs::read_to_string(cfg.paths.report_dir.join("summary.md"))
        .map_err(|e| eegdiff::Error::InvalidArgument(e.to_string()))?;
    println!("{summary}");
    println!("artifacts under {out}/, hashed in {out}/reports/manifest.json");
    Ok(())
}
