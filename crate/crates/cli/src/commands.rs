use std::path::{Path, PathBuf};

use serde_json::json;
use tps::harness::{self, config_echo, evaluate_run, load_eval_clips, Grid, REPORT_SUFFIX};
use tps::model::SegmentationModel;
use tps::render::{default_palette, render_maps, RenderKind};
use tps::synth::{gen_dataset, Dataset, Split};
use tps::train::{crossframe_pseudo_label, FlowProvider, TrainingData};
use tps::{Error, Result};

use crate::config::RunConfig;

pub fn gen_data(config: &RunConfig) -> Result<()> {
    let dir = config.dataset_path()?;
    let manifest = gen_dataset(&config.generate, dir)?;
    println!(
        "wrote {} clips to {} (content hash {})",
        manifest.clip_count(),
        dir.display(),
        manifest.content_hash()
    );
    Ok(())
}

pub fn train(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let manifest = config.manifest()?;
    let out = config.out_dir()?;
    let data = TrainingData::load(&manifest)?;
    let outcome = harness::train_run(&data, &config.train, out)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "iteration {}: source loss {:.4} target loss {:.4} labelled {:.3}",
            last.iteration, last.loss_source, last.loss_target, last.labelled_pixel_fraction
        );
    }
    println!("run written to {}", out.display());
    Ok(())
}

fn load_model(config: &RunConfig) -> Result<(SegmentationModel, PathBuf)> {
    let path = config.checkpoint_path()?;
    Ok((SegmentationModel::load_checkpoint(&path)?, path))
}

pub fn eval(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let manifest = config.manifest()?;
    let (model, checkpoint) = load_model(config)?;
    let out = match &config.out_dir {
        Some(d) => d.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    let mut echo = config_echo(&config.train, &manifest);
    echo["checkpoint"] = json!(checkpoint);
    let report = evaluate_run(&model, &load_eval_clips(&manifest)?, &config.train, echo)?;
    std::fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
    let path = out.join(format!("target_eval{REPORT_SUFFIX}"));
    harness::write_report(&report, &path)?;
    println!(
        "miou {:.4} temporal consistency {:.4} -> {}",
        report.miou,
        report.temporal_consistency,
        path.display()
    );
    Ok(())
}

pub fn ablate(config: &RunConfig, grid: &str) -> Result<()> {
    config.validate()?;
    let grid = Grid::parse(grid)?;
    let manifest = config.manifest()?;
    let summary = harness::ablate(&manifest, &config.train, grid, config.out_dir()?)?;
    print!("{}", summary.to_table());
    Ok(())
}

/// Prediction, ground truth and cross-frame pseudo labels for one
/// evaluation clip.
pub fn render(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let manifest = config.manifest()?;
    let (model, _) = load_model(config)?;
    let out = config.out_dir()?;
    let palette = match &config.render.palette {
        Some(p) if p.len() != manifest.classes => {
            return Err(Error::Config(format!(
                "field `render.palette` has {} colours for {} classes",
                p.len(),
                manifest.classes
            )))
        }
        Some(p) => p.clone(),
        None => default_palette(manifest.classes),
    };
    let entries = manifest.entries(Split::TargetEval).len();
    let index = config.render.clip;
    if index >= entries {
        return Err(Error::Config(format!(
            "field `render.clip`: index {index} but the evaluation split has {entries} clips"
        )));
    }
    let clip = Dataset { manifest }.load_split(Split::TargetEval)?.swap_remove(index);
    let labels = clip
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config(format!("clip {} has no labels", clip.clip_id)))?;
    let (eta, tau) = (config.train.eta, config.train.tau);
    let mut flows = FlowProvider::new(config.train.flow_source);
    let (mut pred, mut gt, mut pseudo) = (Vec::new(), Vec::new(), Vec::new());
    for t in 1..clip.len() {
        let probs = model.predict_pair(&clip.pair(t)?, &flows.step(&clip, t - 1)?)?;
        pred.push((t, probs.argmax()));
        gt.push((t, labels[t].clone()));
        if t > eta {
            let prev = t - eta;
            let p = crossframe_pseudo_label(
                &model,
                &clip.pair(prev)?,
                &flows.step(&clip, prev - 1)?,
                &flows.span(&clip, prev, t)?,
                tau,
            )?;
            pseudo.push((t, p.labels));
        }
    }
    let mut written = 0;
    for (kind, maps) in [(RenderKind::Pred, &pred), (RenderKind::Gt, &gt), (RenderKind::Pseudo, &pseudo)] {
        written += render_maps(out, kind, maps, &palette)?.len();
    }
    println!("wrote {written} images for clip {} to {}", clip.clip_id, out.display());
    Ok(())
}

pub fn summarize(run_dir: &Path, csv: bool) -> Result<()> {
    let summary = harness::summarize(run_dir)?;
    if csv {
        print!("{}", summary.to_csv());
        if !summary.warnings.is_empty() {
            eprintln!("{} warnings", summary.warnings.len());
        }
    } else {
        print!("{}", summary.to_table());
    }
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    Ok(())
}
