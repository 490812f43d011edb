use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cpn_core::bm::ProposalGrid;
use cpn_core::dataio::{
    load_annotations, load_class_scores, load_features, save_annotations, save_class_scores, save_features,
    synth_dataset, AnnotationSet, ClassScores, FeatureSequence,
};
use cpn_core::eval::{average_map, evaluate_proposals};
use cpn_core::model::{epoch_list, load_model, load_outputs, save_model, save_outputs, train, Network, NetworkOutputs};
use cpn_core::postprocess::{
    assemble_detections, ensemble_maps, infer_proposals, load_detections, load_proposals, rescale_outputs,
    save_detections, save_proposals, video_proposals, DetectionSet, ProposalSet,
};
use cpn_core::preprocess::remove_long_coverage;
use indexmap::IndexMap;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

pub const FEATURE_EXT: &str = "cpnf";
pub const OUTPUT_EXT: &str = "cpno";

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!(cpn_core::Error::NotFound(path.to_path_buf()));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_text(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{FEATURE_EXT}"))
}

fn output_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.{OUTPUT_EXT}"))
}

/// Loads features for the given videos in parallel, keeping their order.
fn load_feature_map<'a>(dir: &Path, ids: impl Iterator<Item = &'a str>) -> Result<IndexMap<String, FeatureSequence>> {
    let ids: Vec<&str> = ids.collect();
    let loaded: Vec<Result<FeatureSequence>> = ids
        .par_iter()
        .map(|id| load_features(feature_path(dir, id)).with_context(|| format!("features of video {id}")))
        .collect();
    ids.into_iter().zip(loaded).map(|(id, seq)| Ok((id.to_string(), seq?))).collect()
}

fn eval_annotations(cfg: &RunConfig) -> Result<AnnotationSet> {
    let path = cfg.paths.annotations();
    require(&path)?;
    Ok(load_annotations(&path)?.filter_subset(cfg.eval.subset))
}

fn optional_class_scores(cfg: &RunConfig) -> Result<Option<ClassScores>> {
    let path = cfg.paths.class_scores();
    if path.exists() {
        Ok(Some(load_class_scores(&path)?))
    } else {
        info!("no class scores at {}; skipping detections", path.display());
        Ok(None)
    }
}

fn detections_for(props: &ProposalSet, scores: &ClassScores, k: usize) -> Result<DetectionSet> {
    let mut dets = DetectionSet::new();
    for (vid, ps) in props.iter() {
        let classes = scores.get(vid).unwrap_or(&[]);
        dets.insert(vid, assemble_detections(ps, classes, k))?;
    }
    Ok(dets)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let data = synth_dataset(&cfg.synth_config())?;
    let (ann_path, feat_dir, score_path) = (cfg.paths.annotations(), cfg.paths.features(), cfg.paths.class_scores());
    for p in [&ann_path, &score_path] {
        if let Some(parent) = p.parent() {
            create_dir(parent)?;
        }
    }
    create_dir(&feat_dir)?;
    save_annotations(&data.annotations, &ann_path)?;
    save_class_scores(&data.class_scores, &score_path)?;
    data.features
        .par_iter()
        .try_for_each(|(id, seq)| save_features(seq, feature_path(&feat_dir, id)))?;
    println!(
        "synth: {} videos, {} instances -> {}",
        data.annotations.len(),
        data.annotations.total_instances(),
        cfg.paths.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EpochListFile<'a> {
    count: usize,
    videos: &'a [String],
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    let path = cfg.paths.annotations();
    require(&path)?;
    let anns = load_annotations(&path)?;
    let kept = if cfg.preprocess.enable_long_removal {
        remove_long_coverage(&anns, cfg.preprocess.theta_long)
    } else {
        anns.clone()
    };
    let list = epoch_list(&anns, &cfg.preprocess);
    create_dir(&cfg.paths.out)?;
    save_annotations(&kept, cfg.paths.out.join("filtered_annotations.json"))?;
    write_json(&EpochListFile { count: list.len(), videos: &list }, &cfg.paths.out.join("epoch_list.json"))?;
    println!(
        "preprocess: {} of {} videos kept, epoch list of {}",
        kept.len(),
        anns.len(),
        list.len()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let (ann_path, feat_dir) = (cfg.paths.annotations(), cfg.paths.features());
    require(&ann_path)?;
    require(&feat_dir)?;
    let model_cfg = cfg.model_config();
    let anns = load_annotations(&ann_path)?;
    let ids: Vec<String> = epoch_list(&anns, &cfg.preprocess);
    let mut unique = ids.clone();
    unique.sort();
    unique.dedup();
    let features = load_feature_map(&feat_dir, unique.iter().map(String::as_str))?;
    if let Some((id, seq)) = features.first() {
        if seq.channels() != model_cfg.input_channels {
            bail!(cpn_core::Error::InfeasibleConfig(format!(
                "model.input_channels is {} but video {id} has {} channels",
                model_cfg.input_channels,
                seq.channels()
            )));
        }
    }
    info!("training on {} epoch entries ({} videos)", ids.len(), features.len());
    let (params, log) = train(&anns, &features, &model_cfg, &cfg.preprocess)?;
    create_dir(&cfg.paths.out)?;
    let model_path = cfg.paths.model();
    save_model(&model_cfg, &params, &model_path)?;
    write_json(&log, &cfg.paths.out.join("train_log.json"))?;
    let last = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
    println!("train: {} epochs, final loss {last:.6} -> {}", log.epochs.len(), model_path.display());
    Ok(())
}

pub fn infer(cfg: &RunConfig) -> Result<()> {
    let (model_path, feat_dir) = (cfg.paths.model(), cfg.paths.features());
    require(&model_path)?;
    require(&feat_dir)?;
    let anns = eval_annotations(cfg)?;
    let (model_cfg, params) = load_model(&model_path)?;
    let net = Network::new(model_cfg)?;
    let features = load_feature_map(&feat_dir, anns.iter().map(|v| v.video_id.as_str()))?;
    let (outputs, props) = infer_proposals(&net, &params, &anns, &features, &cfg.postprocess)?;
    write_run_outputs(cfg, &cfg.paths.out, &outputs, &props)?;
    println!("infer: {} videos -> {}", outputs.len(), cfg.paths.out.display());
    Ok(())
}

fn write_run_outputs(
    cfg: &RunConfig,
    dir: &Path,
    outputs: &IndexMap<String, NetworkOutputs>,
    props: &ProposalSet,
) -> Result<()> {
    let out_dir = dir.join("outputs");
    create_dir(&out_dir)?;
    outputs
        .par_iter()
        .try_for_each(|(id, out)| save_outputs(out, output_path(&out_dir, id)))?;
    save_proposals(props, dir.join("proposals.json"))?;
    if let Some(scores) = optional_class_scores(cfg)? {
        save_detections(&detections_for(props, &scores, cfg.postprocess.top_k)?, dir.join("detections.json"))?;
    }
    Ok(())
}

pub fn eval_proposals(cfg: &RunConfig) -> Result<()> {
    let path = cfg.paths.proposals();
    require(&path)?;
    let anns = eval_annotations(cfg)?;
    let report = evaluate_proposals(&load_proposals(&path)?, &anns)?;
    create_dir(&cfg.paths.out)?;
    write_json(&report, &cfg.paths.out.join("proposal_report.json"))?;
    let table = report.to_table();
    write_text(&table, &cfg.paths.out.join("proposal_report.txt"))?;
    print!("{table}");
    Ok(())
}

pub fn eval_detections(cfg: &RunConfig) -> Result<()> {
    let path = cfg.paths.detections();
    require(&path)?;
    let anns = eval_annotations(cfg)?;
    let report = average_map(&load_detections(&path)?, &anns, &cfg.eval.thresholds)?;
    create_dir(&cfg.paths.out)?;
    write_json(&report, &cfg.paths.out.join("detection_report.json"))?;
    let table = report.to_table();
    write_text(&table, &cfg.paths.out.join("detection_report.txt"))?;
    print!("{table}");
    println!("average mAP {:.2}", 100.0 * report.average_map);
    Ok(())
}

pub fn ensemble(cfg: &RunConfig) -> Result<()> {
    let ens = &cfg.ensemble;
    if ens.inputs.is_empty() {
        bail!(cpn_core::Error::InfeasibleConfig("ensemble.inputs is empty".into()));
    }
    let weights = if ens.weights.is_empty() { vec![1.0; ens.inputs.len()] } else { ens.weights.clone() };
    for dir in &ens.inputs {
        require(&dir.join("outputs"))?;
    }
    let anns = eval_annotations(cfg)?;
    let fused: Vec<Result<(NetworkOutputs, Vec<_>)>> = anns
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|v| {
            let runs = ens
                .inputs
                .iter()
                .map(|dir| Ok(load_outputs(output_path(&dir.join("outputs"), &v.video_id))?))
                .collect::<Result<Vec<_>>>()?;
            let len = ens.len.unwrap_or(runs[0].len());
            let durations = ens.durations.unwrap_or(runs[0].durations());
            let scaled = runs
                .iter()
                .map(|o| rescale_outputs(o, len, durations))
                .collect::<cpn_core::Result<Vec<_>>>()?;
            let out = ensemble_maps(&scaled, &weights)?;
            let grid = ProposalGrid::new(len, durations)?;
            let props = video_proposals(&out, &grid, v.duration, &cfg.postprocess)?;
            Ok((out, props))
        })
        .collect();
    let mut outputs = IndexMap::new();
    let mut props = ProposalSet::new();
    for (v, r) in anns.iter().zip(fused) {
        let (out, ps) = r.with_context(|| format!("ensembling video {}", v.video_id))?;
        props.insert(v.video_id.clone(), ps)?;
        outputs.insert(v.video_id.clone(), out);
    }
    let dir = cfg.paths.out.join("ensemble");
    write_run_outputs(cfg, &dir, &outputs, &props)?;
    println!("ensemble: {} runs, {} videos -> {}", ens.inputs.len(), outputs.len(), dir.display());
    Ok(())
}
