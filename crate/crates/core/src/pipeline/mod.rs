//! Batch pipeline: synthetic data, preprocessing, model training,
//! reconstruction, evaluation, classification and reporting. Every stage
//! persists its effective configuration and refreshes a hashed manifest of
//! all artifacts.

mod config;
mod export;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use config::{
    ClassifyConfig, DataConfig, DdpmConfig, ExportConfig, GenerateConfig, GeneratorKind, InputFormat,
    PathsConfig, PipelineConfig, PreprocessConfig, SynthConfig, SyntheticProtocol, CLASSIFIERS,
};
pub use export::{export_signal_comparison, sha256_hex, write_manifest, ManifestEntry};

use crate::data::{
    load_markers, load_recording, one_second_epoch_len, save_markers, save_recording, segment_epochs,
    split_labels, synthetic_recording, AdjacencyTable, DatasetSplit, EpochSet, Marker, Recording,
    RecordingFormat, SynthParams,
};
use crate::diffusion::{gather_channels, reconstruct_channels, select_items, train_ddpm, ReconstructionJob};
use crate::dsp::{annotate_muscle_artifacts, butterworth_bandpass, drop_contaminated, save_annotations, zscore_channels, BandpassSpec};
use crate::error::{bail, Error, Result};
use crate::eval::{
    classification_report, cross_validate, knn_classify, logistic_regression_train, mse, paired_ttest, pearson,
    ChannelMetric, ClassifierMetric, CnnClassifier, DatasetTag, MetricReport, Standardizer, TTestResult,
    UnetClassifier,
};
use crate::gan::{reconstruct_channels_gan, train_wgan, GanConfig, GanPair};
use crate::nn::{load_checkpoint, save_checkpoint, Tensor};

pub const PREPROCESSED: &str = "preprocessed.eegb";
pub const CLEAN_MARKERS: &str = "clean_markers.csv";
pub const SPLIT: &str = "split.json";
pub const MANIFEST: &str = "manifest.json";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SynthData,
    Preprocess,
    TrainDdpm,
    TrainWgan,
    Generate,
    Evaluate,
    Classify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::SynthData,
        Stage::Preprocess,
        Stage::TrainDdpm,
        Stage::TrainWgan,
        Stage::Generate,
        Stage::Evaluate,
        Stage::Classify,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::Preprocess => "preprocess",
            Stage::TrainDdpm => "train-ddpm",
            Stage::TrainWgan => "train-wgan",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand `{s}`")))
    }
}

/// Process exit status for an error: 2 config, 3 data, 4 runtime. (1 is
/// reserved for command-line usage errors.)
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::MissingChannel(_) => 3,
        _ => 4,
    }
}

/// `error kind=<kind> code=<n> message="<text>"` on one line.
pub fn error_line(err: &Error) -> String {
    let kind = match exit_code(err) {
        2 => "config",
        3 => "data",
        _ => "runtime",
    };
    let msg = err.to_string().replace('\n', " ").replace('"', "'");
    format!("error kind={kind} code={} message=\"{msg}\"", exit_code(err))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn require(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "required input is missing")));
        }
    }
    Ok(())
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(io_err(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train_frac: f64,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
}

/// Preprocessed epochs and their train/test split.
pub struct Prepared {
    pub set: EpochSet,
    pub split: DatasetSplit,
}

/// Concatenates epochs into one continuous recording with markers every
/// epoch length.
pub fn epochs_to_recording(set: &EpochSet) -> Result<(Recording, Vec<Marker>)> {
    let l = set.epoch_len();
    let c = set.channel_names.len();
    let mut data = Array2::zeros((c, l * set.len()));
    let mut markers = Vec::with_capacity(set.len());
    for (k, e) in set.epochs.iter().enumerate() {
        data.slice_mut(ndarray::s![.., k * l..(k + 1) * l]).assign(&e.samples);
        markers.push(Marker {
            start_sample: k * l,
            label: e.label,
        });
    }
    let rec = Recording::new(set.channel_names.clone(), set.sampling_rate_hz, data)?;
    Ok((rec, markers))
}

/// Runs one stage end to end.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    ensure_dir(&cfg.paths.report_dir)?;
    write_text(&cfg.paths.report_dir.join(EFFECTIVE_CONFIG), &cfg.to_toml()?)?;
    match stage {
        Stage::SynthData => synth_data(cfg)?,
        Stage::Preprocess => preprocess(cfg)?,
        Stage::TrainDdpm => train_ddpm_stage(cfg)?,
        Stage::TrainWgan => train_wgan_stage(cfg)?,
        Stage::Generate => generate(cfg)?,
        Stage::Evaluate => evaluate(cfg)?,
        Stage::Classify => classify(cfg)?,
        Stage::Report => report(cfg)?,
    }
    let p = &cfg.paths;
    write_manifest(
        &p.report_dir.join(MANIFEST),
        &[p.data_dir.as_path(), p.checkpoint_dir.as_path(), p.report_dir.as_path()],
    )?;
    Ok(())
}

/// All stages in order; with `synth` the synthetic recording is generated
/// first.
pub fn run_all(cfg: &PipelineConfig, synth: bool) -> Result<()> {
    for stage in Stage::ALL {
        if stage == Stage::SynthData && !synth {
            continue;
        }
        run_stage(stage, cfg)?;
    }
    Ok(())
}

fn synth_data(cfg: &PipelineConfig) -> Result<()> {
    ensure_dir(&cfg.paths.data_dir)?;
    let s = &cfg.synth;
    let params = SynthParams {
        class_amplitude: s.class_amplitude,
        ..SynthParams::default()
    };
    let (rec, markers) = synthetic_recording(&params, s.n_per_class, s.n_classes, s.n_channels, cfg.seed)?;
    save_recording(&cfg.data_path(&cfg.data.recording), &rec)?;
    save_markers(&cfg.data_path(&cfg.data.markers), &markers)
}

/// In-memory synthetic dataset with `n_per_class` epochs per class, passed
/// through the configured band-pass and z-scoring (no artifact rejection).
pub fn synthetic_epoch_set(cfg: &PipelineConfig, n_per_class: usize, seed: u64) -> Result<EpochSet> {
    let s = &cfg.synth;
    let params = SynthParams {
        class_amplitude: s.class_amplitude,
        ..SynthParams::default()
    };
    let (raw, markers) = synthetic_recording(&params, n_per_class, s.n_classes, s.n_channels, seed)?;
    let pp = &cfg.preprocess;
    let spec = BandpassSpec::new(pp.low_hz, pp.high_hz, pp.order, raw.sampling_rate_hz())?;
    let rec = zscore_channels(&butterworth_bandpass(&raw, &spec)?)?;
    let epochs = segment_epochs(&rec, &markers, params.epoch_len)?;
    EpochSet::new(rec.channel_names().to_vec(), rec.sampling_rate_hz(), s.n_classes, epochs)
}

fn preprocess(cfg: &PipelineConfig) -> Result<()> {
    let rec_path = cfg.data_path(&cfg.data.recording);
    let marker_path = cfg.data_path(&cfg.data.markers);
    require(&[rec_path.clone(), marker_path.clone()])?;
    let format = match cfg.data.format {
        InputFormat::Eegb => RecordingFormat::Eegb,
        InputFormat::Csv => RecordingFormat::Csv {
            sampling_rate_hz: cfg.data.sampling_rate_hz,
        },
    };
    let raw = load_recording(&rec_path, format)?;
    let markers = load_markers(&marker_path)?;
    let fs = raw.sampling_rate_hz();
    let epoch_len = one_second_epoch_len(fs);
    let pp = &cfg.preprocess;
    let annotations = if pp.drop_artifacts {
        annotate_muscle_artifacts(&raw, pp.muscle_z)?
    } else {
        Vec::new()
    };
    save_annotations(&cfg.paths.report_dir.join("artifacts.csv"), &annotations)?;
    let kept = drop_contaminated(&markers, epoch_len, &annotations);
    let spec = BandpassSpec::new(pp.low_hz, pp.high_hz, pp.order, fs)?;
    let filtered = zscore_channels(&butterworth_bandpass(&raw, &spec)?)?;
    save_recording(&cfg.paths.data_dir.join(PREPROCESSED), &filtered)?;
    save_markers(&cfg.paths.data_dir.join(CLEAN_MARKERS), &kept)?;
    let labels: Vec<usize> = kept.iter().map(|m| m.label).collect();
    let split = split_labels(&labels, pp.train_frac, cfg.seed)?;
    write_json(
        &cfg.paths.data_dir.join(SPLIT),
        &SplitFile {
            seed: cfg.seed,
            train_frac: pp.train_frac,
            train_indices: split.train_indices,
            test_indices: split.test_indices,
        },
    )?;
    let summary = serde_json::json!({
        "epochs_total": markers.len(),
        "epochs_kept": kept.len(),
        "artifact_spans": annotations.len(),
    });
    write_json(&cfg.paths.report_dir.join("preprocess_summary.json"), &summary)
}

/// Loads the preprocessed epochs and split written by `preprocess`.
pub fn load_prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let d = &cfg.paths.data_dir;
    let (rp, mp, sp) = (d.join(PREPROCESSED), d.join(CLEAN_MARKERS), d.join(SPLIT));
    require(&[rp.clone(), mp.clone(), sp.clone()])?;
    let rec = load_recording(&rp, RecordingFormat::Eegb)?;
    let markers = load_markers(&mp)?;
    let epochs = segment_epochs(&rec, &markers, one_second_epoch_len(rec.sampling_rate_hz()))?;
    let n_classes = cfg.data.n_classes.max(markers.iter().map(|m| m.label + 1).max().unwrap_or(0));
    let set = EpochSet::new(rec.channel_names().to_vec(), rec.sampling_rate_hz(), n_classes, epochs)?;
    let split: SplitFile = read_json(&sp)?;
    if split.train_indices.iter().chain(&split.test_indices).any(|&i| i >= set.len()) {
        bail!(Format, "{}: split indices exceed the {} epochs", sp.display(), set.len());
    }
    Ok(Prepared {
        set,
        split: DatasetSplit {
            train_indices: split.train_indices,
            test_indices: split.test_indices,
            seed: split.seed,
        },
    })
}

fn ddpm_job(cfg: &PipelineConfig, r: usize, row: &crate::data::AdjacencyRow) -> Result<ReconstructionJob> {
    ReconstructionJob::new(row, cfg.ddpm.schedule()?, cfg.ddpm.unet(), cfg.seed.wrapping_add(r as u64))
}

fn gan_config(cfg: &PipelineConfig, r: usize) -> GanConfig {
    GanConfig {
        seed: cfg.wgan.seed.wrapping_add(cfg.seed).wrapping_add(r as u64),
        ..cfg.wgan.clone()
    }
}

fn train_ddpm_stage(cfg: &PipelineConfig) -> Result<()> {
    let prep = load_prepared(cfg)?;
    ensure_dir(&cfg.paths.checkpoint_dir)?;
    let mut log = String::from("target,epoch,loss\n");
    for (r, row) in AdjacencyTable::default().entries().iter().enumerate() {
        let mut job = ddpm_job(cfg, r, row)?;
        let (x0, cond) = job.tensors(&prep.set, &prep.split.train_indices)?;
        let hist = train_ddpm(&mut job, &x0, &cond, &cfg.ddpm.train(cfg.seed.wrapping_add(r as u64)), |_, _| {})?;
        for (e, l) in hist.epoch_losses.iter().enumerate() {
            let _ = writeln!(log, "{},{e},{l:.8}", row.target);
        }
        let path = cfg.paths.checkpoint_dir.join(ReconstructionJob::checkpoint_name(&row.target));
        save_checkpoint(&path, &job.model.store, Some(&hist.optimizer))?;
    }
    write_text(&cfg.paths.report_dir.join("ddpm_training.csv"), &log)
}

fn train_wgan_stage(cfg: &PipelineConfig) -> Result<()> {
    let prep = load_prepared(cfg)?;
    ensure_dir(&cfg.paths.checkpoint_dir)?;
    let mut log = String::from("target,epoch,wasserstein\n");
    for (r, row) in AdjacencyTable::default().entries().iter().enumerate() {
        let mut pair = GanPair::new(row, prep.set.epoch_len(), gan_config(cfg, r), cfg.seed.wrapping_add(r as u64))?;
        let (x0, cond) = pair.tensors(&prep.set, &prep.split.train_indices)?;
        let hist = train_wgan(&mut pair, &x0, &cond, |_, _| {})?;
        for (e, w) in hist.wasserstein.iter().enumerate() {
            let _ = writeln!(log, "{},{e},{w:.8}", row.target);
        }
        pair.save(&cfg.paths.checkpoint_dir.join(GanPair::checkpoint_name(&row.target)))?;
    }
    write_text(&cfg.paths.report_dir.join("wgan_training.csv"), &log)
}

fn kind_name(kind: GeneratorKind) -> &'static str {
    match kind {
        GeneratorKind::Ddpm => "ddpm",
        GeneratorKind::Wgan => "wgan",
    }
}

fn reconstructed_paths(cfg: &PipelineConfig) -> (PathBuf, PathBuf) {
    let k = kind_name(cfg.generate.model);
    let d = &cfg.paths.data_dir;
    (d.join(format!("reconstructed_{k}.eegb")), d.join(format!("reconstructed_{k}_markers.csv")))
}

/// Loads the trained DDPM checkpoints for every table target.
pub fn load_ddpm_models(cfg: &PipelineConfig) -> Result<BTreeMap<String, ReconstructionJob>> {
    let mut models = BTreeMap::new();
    for (r, row) in AdjacencyTable::default().entries().iter().enumerate() {
        let path = cfg.paths.checkpoint_dir.join(ReconstructionJob::checkpoint_name(&row.target));
        require(std::slice::from_ref(&path))?;
        let mut job = ddpm_job(cfg, r, row)?;
        job.model.store.load_named(&load_checkpoint(&path)?.tensors)?;
        models.insert(row.target.clone(), job);
    }
    Ok(models)
}

fn generate(cfg: &PipelineConfig) -> Result<()> {
    let prep = load_prepared(cfg)?;
    let table = AdjacencyTable::default();
    let hybrid = match cfg.generate.model {
        GeneratorKind::Ddpm => {
            let mut models = load_ddpm_models(cfg)?;
            reconstruct_channels(&prep.set, &table, &mut models, cfg.seed, cfg.ddpm.variant)?
        }
        GeneratorKind::Wgan => {
            let mut models = BTreeMap::new();
            for (r, row) in table.entries().iter().enumerate() {
                let path = cfg.paths.checkpoint_dir.join(GanPair::checkpoint_name(&row.target));
                require(std::slice::from_ref(&path))?;
                let mut pair = GanPair::new(row, prep.set.epoch_len(), gan_config(cfg, r), cfg.seed.wrapping_add(r as u64))?;
                pair.load_bytes(&std::fs::read(&path).map_err(io_err(&path))?)?;
                models.insert(row.target.clone(), pair);
            }
            reconstruct_channels_gan(&prep.set, &table, &models, cfg.seed)?
        }
    };
    let (rec, markers) = epochs_to_recording(&hybrid)?;
    let (rp, mp) = reconstructed_paths(cfg);
    save_recording(&rp, &rec)?;
    save_markers(&mp, &markers)
}

fn load_hybrid(cfg: &PipelineConfig, real: &EpochSet) -> Result<EpochSet> {
    let (rp, mp) = reconstructed_paths(cfg);
    require(&[rp.clone(), mp.clone()])?;
    let rec = load_recording(&rp, RecordingFormat::Eegb)?;
    let markers = load_markers(&mp)?;
    let epochs = segment_epochs(&rec, &markers, real.epoch_len())?;
    let set = EpochSet::new(rec.channel_names().to_vec(), rec.sampling_rate_hz(), real.n_classes, epochs)?;
    if set.len() != real.len() || set.channel_names != real.channel_names {
        bail!(Format, "{} does not match the preprocessed epochs", rp.display());
    }
    Ok(set)
}

/// Reconstruction quality of one target over a set of epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionScore {
    pub target: String,
    pub inputs: [String; 2],
    pub mse: f64,
    pub pcc: f64,
    pub baseline_mse: f64,
    pub baseline_pcc: f64,
}

/// MSE/PCC of `hybrid` against `real` for every table target on the epochs
/// at `indices`, with the mean-of-inputs baseline alongside.
pub fn score_reconstructions(real: &EpochSet, hybrid: &EpochSet, table: &AdjacencyTable, indices: &[usize]) -> Result<Vec<ReconstructionScore>> {
    let mut out = Vec::new();
    for row in table.entries() {
        let names = [row.target.clone(), row.inputs[0].clone(), row.inputs[1].clone()];
        let r = gather_channels(real, &names, indices)?;
        let h = gather_channels(hybrid, std::slice::from_ref(&row.target), indices)?;
        let l = real.epoch_len();
        let mut truth = Vec::with_capacity(indices.len() * l);
        let mut base = Vec::with_capacity(indices.len() * l);
        for item in r.data().chunks(3 * l) {
            truth.extend_from_slice(&item[..l]);
            base.extend(item[l..2 * l].iter().zip(&item[2 * l..]).map(|(a, b)| 0.5 * (a + b)));
        }
        out.push(ReconstructionScore {
            target: row.target.clone(),
            inputs: row.inputs.clone(),
            mse: mse(&truth, h.data())?,
            pcc: pearson(&truth, h.data())?,
            baseline_mse: mse(&truth, &base)?,
            baseline_pcc: pearson(&truth, &base)?,
        });
    }
    Ok(out)
}

fn evaluate(cfg: &PipelineConfig) -> Result<()> {
    let prep = load_prepared(cfg)?;
    let hybrid = load_hybrid(cfg, &prep.set)?;
    let table = AdjacencyTable::default();
    let scores = score_reconstructions(&prep.set, &hybrid, &table, &prep.split.test_indices)?;
    let k = kind_name(cfg.generate.model);
    let report = MetricReport {
        per_channel: scores
            .iter()
            .map(|s| ChannelMetric {
                target: s.target.clone(),
                inputs: s.inputs.clone(),
                mse: s.mse,
                pcc: s.pcc,
            })
            .collect(),
        ..Default::default()
    };
    let csv_path = cfg.paths.report_dir.join(format!("reconstruction_{k}.csv"));
    let f = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    report.write_channel_csv(f)?;
    write_json(&cfg.paths.report_dir.join(format!("reconstruction_{k}.json")), &scores)?;

    let channels = if cfg.export.channels.is_empty() {
        table.entries().iter().map(|r| r.target.clone()).collect()
    } else {
        cfg.export.channels.clone()
    };
    let (real_rec, _) = epochs_to_recording(&prep.set)?;
    let (hyb_rec, _) = epochs_to_recording(&hybrid)?;
    let provenance = format!("config sha256 {}", sha256_hex(cfg.to_toml()?.as_bytes()));
    export_signal_comparison(
        &real_rec,
        &hyb_rec,
        &channels,
        cfg.export.window_s,
        cfg.export.smoothing_s,
        &cfg.paths.report_dir.join(format!("signals_{k}")),
        &provenance,
    )?;
    Ok(())
}

fn flat_rows(set: &EpochSet) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..set.len()).collect();
    let x = gather_channels(set, &set.channel_names, &all)?;
    let item = set.channel_names.len() * set.epoch_len();
    Ok(x.data().chunks(item.max(1)).map(<[f64]>::to_vec).collect())
}

fn pick(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

/// Fits `name` on `train_idx` of `train_set` and predicts `test_idx` of
/// `test_set`.
pub fn fit_predict(
    name: &str,
    cfg: &ClassifyConfig,
    train_set: &EpochSet,
    test_set: &EpochSet,
    train_idx: &[usize],
    test_idx: &[usize],
    fold_seed: u64,
) -> Result<Vec<usize>> {
    let labels = train_set.labels();
    let y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    match name {
        "knn" | "logreg" => {
            let tr = flat_rows(train_set)?;
            let te = flat_rows(test_set)?;
            let (a, b) = (pick(&tr, train_idx), pick(&te, test_idx));
            let s = Standardizer::fit(&a)?;
            let (a, b) = (s.transform(&a), s.transform(&b));
            if name == "knn" {
                knn_classify(&a, &y, &b, cfg.knn_k)
            } else {
                let lc = crate::eval::LogRegConfig { seed: cfg.logreg.seed.wrapping_add(fold_seed), ..cfg.logreg.clone() };
                Ok(logistic_regression_train(&a, &y, &lc)?.predict(&b))
            }
        }
        "cnn" | "unet" => {
            let all: Vec<usize> = (0..train_set.len()).collect();
            let xtr = gather_channels(train_set, &train_set.channel_names, &all)?;
            let xte = gather_channels(test_set, &test_set.channel_names, &(0..test_set.len()).collect::<Vec<_>>())?;
            let item = train_set.channel_names.len() * train_set.epoch_len();
            let (a, b): (Tensor, Tensor) = (select_items(&xtr, train_idx, item)?, select_items(&xte, test_idx, item)?);
            let nc = crate::eval::NetTrainConfig { seed: cfg.net.seed.wrapping_add(fold_seed), ..cfg.net.clone() };
            if name == "cnn" {
                CnnClassifier::train(&a, &y, train_set.n_classes, &nc)?.0.predict(&b)
            } else {
                UnetClassifier::train(&a, &y, train_set.n_classes, &nc)?.0.predict(&b)
            }
        }
        other => bail!(Config, "unknown classifier `{other}`"),
    }
}

/// Cross-validated scores of one classifier on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRun {
    pub metric: ClassifierMetric,
}

/// Stratified k-fold evaluation. For `TrainSyntheticTestReal` the model is
/// fitted on the hybrid epochs of the training folds and scored on the real
/// epochs of the test fold.
pub fn evaluate_classifier(
    name: &str,
    cfg: &ClassifyConfig,
    real: &EpochSet,
    hybrid: Option<&EpochSet>,
    seed: u64,
) -> Result<ClassifierMetric> {
    let labels = real.labels();
    let (train_set, test_set, tag) = match (hybrid, cfg.protocol) {
        (None, _) => (real, real, DatasetTag::Original),
        (Some(h), SyntheticProtocol::Hybrid) => (h, h, DatasetTag::Hybrid),
        (Some(h), SyntheticProtocol::TrainSyntheticTestReal) => (h, real, DatasetTag::Synthetic),
    };
    let cv = cross_validate(&labels, cfg.n_folds, seed, |tr, te, k| {
        fit_predict(name, cfg, train_set, test_set, tr, te, k as u64)
    })?;
    let scores = classification_report(&labels, &cv.predictions)?;
    Ok(ClassifierMetric {
        name: name.to_string(),
        dataset_tag: tag,
        scores,
        fold_scores: cv.fold_accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub classifier: String,
    pub ttest: Option<TTestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassificationFile {
    cv_folds: usize,
    results: Vec<ClassifierMetric>,
    comparisons: Vec<Comparison>,
}

fn classify(cfg: &PipelineConfig) -> Result<()> {
    let prep = load_prepared(cfg)?;
    let (rp, _) = reconstructed_paths(cfg);
    let hybrid = if rp.exists() { Some(load_hybrid(cfg, &prep.set)?) } else { None };
    let mut results = Vec::new();
    let mut comparisons = Vec::new();
    for name in &cfg.classify.classifiers {
        let orig = evaluate_classifier(name, &cfg.classify, &prep.set, None, cfg.seed)?;
        let synth = match &hybrid {
            Some(h) => Some(evaluate_classifier(name, &cfg.classify, &prep.set, Some(h), cfg.seed)?),
            None => None,
        };
        if let Some(s) = &synth {
            // folds with identical accuracy give zero variance; report no test
            comparisons.push(Comparison {
                classifier: name.clone(),
                ttest: paired_ttest(&orig.fold_scores, &s.fold_scores).ok(),
            });
        }
        results.push(orig);
        results.extend(synth);
    }
    let report = MetricReport {
        per_classifier: results.clone(),
        cv_folds: cfg.classify.n_folds,
        ..Default::default()
    };
    report.validate()?;
    let csv_path = cfg.paths.report_dir.join("classification.csv");
    let f = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    report.write_classifier_csv(f)?;
    write_json(
        &cfg.paths.report_dir.join("classification.json"),
        &ClassificationFile {
            cv_folds: cfg.classify.n_folds,
            results,
            comparisons,
        },
    )
}

fn report(cfg: &PipelineConfig) -> Result<()> {
    let dir = &cfg.paths.report_dir;
    let k = kind_name(cfg.generate.model);
    let rec_path = dir.join(format!("reconstruction_{k}.json"));
    let cls_path = dir.join("classification.json");
    require(&[rec_path.clone(), cls_path.clone()])?;
    let scores: Vec<ReconstructionScore> = read_json(&rec_path)?;
    let cls: ClassificationFile = read_json(&cls_path)?;
    let report = MetricReport {
        per_channel: scores
            .iter()
            .map(|s| ChannelMetric {
                target: s.target.clone(),
                inputs: s.inputs.clone(),
                mse: s.mse,
                pcc: s.pcc,
            })
            .collect(),
        per_classifier: cls.results,
        cv_folds: cls.cv_folds,
    };
    report.validate()?;
    report.save_json(&dir.join("metrics.json"))?;
    let mut text = String::from("# Results\n\n| target | inputs | MSE | PCC | baseline PCC |\n|---|---|---|---|---|\n");
    for s in &scores {
        let _ = writeln!(
            text,
            "| {} | {}, {} | {:.4} | {:.4} | {:.4} |",
            s.target, s.inputs[0], s.inputs[1], s.mse, s.pcc, s.baseline_pcc
        );
    }
    text.push_str("\n| classifier | dataset | accuracy | precision | recall | F1 |\n|---|---|---|---|---|---|\n");
    for c in &report.per_classifier {
        let s = c.scores;
        let _ = writeln!(
            text,
            "| {} | {:?} | {:.4} | {:.4} | {:.4} | {:.4} |",
            c.name, c.dataset_tag, s.accuracy, s.precision, s.recall, s.f1
        );
    }
    for c in &cls.comparisons {
        match &c.ttest {
            Some(t) => {
                let _ = writeln!(
                    text,
                    "\n{}: paired t = {:.4}, dof = {}, p = {:.4}{}",
                    c.classifier,
                    t.t_statistic,
                    t.degrees_of_freedom,
                    t.p_value,
                    if t.significant_at_0_05 { " (significant at 0.05)" } else { "" }
                );
            }
            None => {
                let _ = writeln!(text, "\n{}: fold differences have zero variance, no t-test", c.classifier);
            }
        }
    }
    write_text(&dir.join("summary.md"), &text)
}
