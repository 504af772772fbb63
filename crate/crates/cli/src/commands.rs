use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::json;

use specs_core::correlation::{bucketed_correlate, correlate, per_image_kendall, BucketOutcome};
use specs_core::embedding::SimilarityPair;
use specs_core::jsonl;
use specs_core::metrics::{score_triplets, PairTable, TableSimilarity};
use specs_core::rng;
use specs_core::segment::{CaptionRecord, SegmentRecord, SegmentRules, Segmenter};
use specs_core::trainer::model::{BUCKETS, EMBED_DIM};
use specs_core::trainer::{
    gradient_check, synth_generate_with, train, write_log_csv, Batch, ImageGroup, MarginMode, ModelSimilarity,
    Objective, SynthParams, TrainSettings, TrainingData,
};
use specs_core::triplet::{forge, forge_stream, ForgeConfig, TripletRecord};
use specs_core::{
    specificity_rate, EmbeddingTable, Error, JudgedSample, LossWeights, ScoredPair, SegmentedCaption, ToyDualEncoder,
    Triplet,
};

use crate::{
    Cli, Command, CorrelateArgs, Format, GradcheckArgs, ScoreArgs, SegmentArgs, SrArgs, SynthArgs, TrainArgs,
    TripletArgs,
};

/// A check that ran to completion and did not pass.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Error kind and exit code. Bad configuration counts as usage.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(e) = err.downcast_ref::<Error>() {
        let code = match e {
            Error::InvalidConfig(_) | Error::BadEdges => 2,
            _ => 1,
        };
        return (e.kind(), code);
    }
    if err.downcast_ref::<CheckFailed>().is_some() {
        return ("CheckFailed", 1);
    }
    if err.downcast_ref::<io::Error>().is_some() {
        return ("Io", 1);
    }
    ("Data", 1)
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Segment(a) => segment(a),
        Command::Triplets(a) => triplets(a, seed),
        Command::Score(a) => score(a),
        Command::Sr(a) => sr(a),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Synth(a) => synth(a, seed),
        Command::Gradcheck(a) => gradcheck(a, seed),
        Command::Correlate(a) => correlate_cmd(a),
    }
}

fn log_config(command: &str, config: serde_json::Value) {
    eprintln!("{}", json!({ "command": command, "config": config }));
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<ToyDualEncoder> {
    ToyDualEncoder::load(path).with_context(|| format!("loading {}", path.display()))
}

fn read_all<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl::read_all(path).with_context(|| format!("reading {}", path.display()))
}

fn read_iter<T: serde::de::DeserializeOwned>(path: &Path) -> Result<impl Iterator<Item = specs_core::Result<T>>> {
    jsonl::read_iter(path.to_path_buf()).with_context(|| format!("opening {}", path.display()))
}

fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let records: Vec<TripletRecord> = read_all(path)?;
    Ok(records.into_iter().map(Triplet::from).collect())
}

fn parse_margin(text: &str) -> Result<MarginMode> {
    if text.eq_ignore_ascii_case("dynamic") {
        return Ok(MarginMode::Dynamic);
    }
    text.parse::<f64>()
        .map(MarginMode::Fixed)
        .map_err(|_| invalid(format!("margin {text:?} is neither `dynamic` nor a number")))
}

fn path_str(p: Option<&PathBuf>) -> serde_json::Value {
    p.map_or(serde_json::Value::Null, |p| json!(p.display().to_string()))
}

fn segment(a: &SegmentArgs) -> Result<()> {
    let rules = SegmentRules { initial_the: !a.no_initial_the, pp_attach: !a.no_pp_attach, pp_lead: !a.no_pp_lead };
    log_config("segment", json!({ "input": a.input, "output": path_str(a.output.as_ref()), "rules": rules }));
    let segmenter = Segmenter::new(rules);
    let mut out = open_output(a.output.as_deref())?;
    for (i, record) in read_iter::<CaptionRecord>(&a.input)?.enumerate() {
        let record = record?;
        let seg =
            segmenter.segment_record(&record).with_context(|| format!("record {} ({})", i + 1, record.image_id))?;
        jsonl::write_record(&mut out, &SegmentRecord::from(&seg))?;
    }
    out.flush()?;
    Ok(())
}

fn triplets(a: &TripletArgs, seed: u64) -> Result<()> {
    let cfg = ForgeConfig { shuffle_rate: a.shuffle_rate, pool_size: a.pool, seed };
    cfg.validate()?;
    log_config("triplets", json!({ "input": a.input, "output": path_str(a.output.as_ref()), "forge": cfg }));
    let mut out = open_output(a.output.as_deref())?;
    let captions = read_iter::<SegmentRecord>(&a.input)?.map(|r| r.and_then(|r| SegmentedCaption::try_from(&r)));
    forge_stream(captions, &cfg, |t| jsonl::write_record(&mut out, &TripletRecord::from(&t)))?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairRecord {
    image_id: String,
    caption_id: String,
    #[serde(default)]
    caption: Option<String>,
}

fn features_of(table: &EmbeddingTable, id: &str) -> Result<Vec<f64>> {
    let f = table.get(id).ok_or_else(|| Error::DataMissing(format!("features for image {id:?}")))?;
    Ok(f.iter().map(|&v| f64::from(v)).collect())
}

fn score(a: &ScoreArgs) -> Result<()> {
    log_config(
        "score",
        json!({
            "pairs": a.pairs, "images": path_str(a.images.as_ref()), "texts": path_str(a.texts.as_ref()),
            "model": path_str(a.model.as_ref()), "features": path_str(a.features.as_ref()),
        }),
    );
    let pairs: Vec<PairRecord> = read_all(&a.pairs)?;
    let mut out = open_output(a.output.as_deref())?;
    match (&a.images, &a.texts, &a.model, &a.features) {
        (Some(images), Some(texts), None, None) => {
            let (images, texts) = (load_table(images)?, load_table(texts)?);
            for p in &pairs {
                let v = images.get(&p.image_id).ok_or_else(|| Error::DataMissing(format!("image {:?}", p.image_id)))?;
                let t = texts
                    .get(&p.caption_id)
                    .ok_or_else(|| Error::DataMissing(format!("caption {:?}", p.caption_id)))?;
                jsonl::write_record(&mut out, &ScoredPair::score(&p.image_id, &p.caption_id, v, t)?)?;
            }
        }
        (None, None, Some(model), Some(features)) => {
            let (model, features) = (load_model(model)?, load_table(features)?);
            for p in &pairs {
                let caption = p.caption.as_deref().ok_or_else(|| {
                    Error::DataMissing(format!("caption text for {:?} (required with --model)", p.caption_id))
                })?;
                let v = model.encode_image(&features_of(&features, &p.image_id)?)?;
                let t = model.encode_text(caption)?;
                jsonl::write_record(&mut out, &ScoredPair::score(&p.image_id, &p.caption_id, &v, &t)?)?;
            }
        }
        _ => return Err(invalid("score needs --images with --texts, or --model with --features")),
    }
    out.flush()?;
    Ok(())
}

fn sr(a: &SrArgs) -> Result<()> {
    let s = &a.source;
    log_config(
        "sr",
        json!({
            "triplets": a.triplets, "images": path_str(s.images.as_ref()), "texts": path_str(s.texts.as_ref()),
            "model": path_str(s.model.as_ref()), "features": path_str(s.features.as_ref()),
            "sims": path_str(s.sims.as_ref()), "format": format!("{:?}", a.format).to_lowercase(),
        }),
    );
    let triplets = load_triplets(&a.triplets)?;
    let scored = match (&s.images, &s.texts, &s.model, &s.features, &s.sims) {
        (Some(i), Some(t), None, None, None) => {
            let (images, texts) = (load_table(i)?, load_table(t)?);
            score_triplets(&triplets, &TableSimilarity { images: &images, texts: &texts })?
        }
        (None, None, Some(m), Some(f), None) => {
            let (model, features) = (load_model(m)?, load_table(f)?);
            score_triplets(&triplets, &ModelSimilarity { model: &model, features: &features })?
        }
        (None, None, None, None, Some(p)) => {
            let table = PairTable::new(read_all::<SimilarityPair>(p)?);
            score_triplets(&triplets, &table)?
        }
        _ => return Err(invalid("sr needs exactly one of --images/--texts, --model/--features or --sims")),
    };
    if let Some(path) = &a.scored {
        jsonl::write_all(path, &scored)?;
    }
    let report = specificity_rate(&scored)?;
    let mut out = open_output(a.output.as_deref())?;
    match a.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string(&report)?)?,
        Format::Csv => {
            writeln!(out, "sr_pos,sr_neg,average,n_pos,n_neg")?;
            writeln!(out, "{},{},{},{},{}", report.sr_pos, report.sr_neg, report.average, report.n_pos, report.n_neg)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut settings = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainSettings::from_toml(&text)?
        }
        None => TrainSettings::default(),
    };
    let cfg = &mut settings.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.holdout {
        cfg.holdout_fraction = v;
    }
    if let Some(m) = &a.margin {
        cfg.margin_mode = parse_margin(m)?;
    }
    let w = &mut settings.weights;
    w.alpha = a.alpha.unwrap_or(w.alpha);
    w.beta = a.beta.unwrap_or(w.beta);
    w.gamma = a.gamma.unwrap_or(w.gamma);
    settings.config.validate()?;
    settings.weights.validate()?;
    log_config(
        "train",
        json!({
            "triplets": a.triplets, "features": a.features, "model_out": a.model_out,
            "log": path_str(a.log.as_ref()), "train": settings.config, "weights": settings.weights,
        }),
    );

    let triplets = load_triplets(&a.triplets)?;
    let features = load_table(&a.features)?;
    let data = TrainingData::assemble(&triplets, &features, settings.config.holdout_fraction)?;
    let (model, log) = train(&data, &settings.config, &settings.weights)?;
    model.save(&a.model_out).with_context(|| format!("writing {}", a.model_out.display()))?;
    if let Some(path) = &a.log {
        let mut out = open_output(Some(path))?;
        write_log_csv(&log, &mut out)?;
        out.flush()?;
    }
    let last = log.last();
    let summary = json!({
        "epochs": log.len(),
        "train_images": data.train.len(),
        "holdout_images": data.holdout.len(),
        "final_loss": last.map(|e| e.loss),
        "holdout": last.and_then(|e| e.holdout),
    });
    println!("{summary}");
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let defaults = SynthParams::default();
    let params = SynthParams {
        noise_std: a.noise.unwrap_or(defaults.noise_std),
        max_units: a.max_units.unwrap_or(defaults.max_units),
    };
    if !(params.noise_std >= 0.0 && params.noise_std.is_finite()) {
        return Err(invalid(format!("noise {} must be non-negative", params.noise_std)));
    }
    log_config(
        "synth",
        json!({
            "images": a.images, "attributes": a.attributes, "noise": params.noise_std,
            "max_units": params.max_units, "seed": seed,
            "features_out": a.features_out, "captions_out": a.captions_out,
        }),
    );
    let corpus = synth_generate_with(a.images, a.attributes, seed, &params)?;
    corpus.features.save(&a.features_out).with_context(|| format!("writing {}", a.features_out.display()))?;
    let records: Vec<SegmentRecord> = corpus.captions.iter().map(SegmentRecord::from).collect();
    jsonl::write_all(&a.captions_out, &records)?;
    let units: usize = corpus.captions.iter().map(|c| c.units.len()).sum();
    println!("{}", json!({ "images": corpus.captions.len(), "units": units }));
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, seed: u64) -> Result<()> {
    use rand::seq::IndexedRandom;

    let defaults = LossWeights::default();
    let weights = LossWeights {
        alpha: a.alpha.unwrap_or(defaults.alpha),
        beta: a.beta.unwrap_or(defaults.beta),
        gamma: a.gamma.unwrap_or(defaults.gamma),
    };
    weights.validate()?;
    let margin = a.margin.as_deref().map_or(Ok(MarginMode::Dynamic), parse_margin)?;
    let objective = Objective { weights, margin, temperature: 0.07 };
    if a.batch_images < 2 {
        return Err(invalid(format!("batch_images {} < 2", a.batch_images)));
    }
    log_config(
        "gradcheck",
        json!({
            "batches": a.batches, "batch_images": a.batch_images, "seed": seed,
            "triplets": path_str(a.triplets.as_ref()), "features": path_str(a.features.as_ref()),
            "model": path_str(a.model.as_ref()), "weights": weights, "margin": margin,
            "tolerance": a.tolerance,
        }),
    );

    let groups: Vec<ImageGroup> = match (&a.triplets, &a.features) {
        (Some(t), Some(f)) => TrainingData::assemble(&load_triplets(t)?, &load_table(f)?, 0.0)?.train,
        _ => {
            let corpus = synth_generate_with(60, 10, seed, &SynthParams::default())?;
            let triplets = forge(&corpus.captions, &ForgeConfig { seed, ..Default::default() })?;
            TrainingData::assemble(&triplets, &corpus.features, 0.0)?.train
        }
    };
    if groups.len() < a.batch_images {
        return Err(Error::DataMissing(format!("{} images, batches need {}", groups.len(), a.batch_images)).into());
    }
    let loaded = a.model.as_deref().map(load_model).transpose()?;
    let feature_dim = groups[0].features.len();
    let mut rng = rng::derive(seed, b"gradcheck");
    let mut results = Vec::with_capacity(a.batches);
    for i in 0..a.batches {
        let picked: Vec<&ImageGroup> = groups.choose_multiple(&mut rng, a.batch_images).collect();
        let batch = Batch::new(&picked, loaded.as_ref().map_or(BUCKETS, |m| m.buckets))?;
        let fresh;
        let model = match &loaded {
            Some(m) => m,
            None => {
                fresh = ToyDualEncoder::with_dims(feature_dim, EMBED_DIM, BUCKETS, seed.wrapping_add(i as u64));
                &fresh
            }
        };
        results.push(gradient_check(model, &batch, &objective)?);
    }
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let pass = worst < a.tolerance;
    let report = json!({
        "max_rel_error": worst,
        "tolerance": a.tolerance,
        "pass": pass,
        "batches": results,
    });
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "{report}")?;
    out.flush()?;
    if !pass {
        return Err(CheckFailed(format!("max relative error {worst:e} >= {:e}", a.tolerance)).into());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct HumanRecord {
    image_id: String,
    caption_id: String,
    human_score: f64,
    #[serde(default)]
    caption_token_count: Option<usize>,
    #[serde(default)]
    caption: Option<String>,
}

fn join_samples(scores: &Path, human: &Path) -> Result<Vec<JudgedSample>> {
    let scored: std::collections::HashMap<(String, String), f64> =
        read_all::<ScoredPair>(scores)?.into_iter().map(|s| ((s.image_id, s.caption_id), s.specs)).collect();
    read_iter::<HumanRecord>(human)?
        .map(|h| {
            let h = h?;
            let key = (h.image_id, h.caption_id);
            let metric_score =
                *scored.get(&key).ok_or_else(|| Error::DataMissing(format!("score for ({:?}, {:?})", key.0, key.1)))?;
            let caption_token_count = match (h.caption_token_count, &h.caption) {
                (Some(n), _) => n,
                (None, Some(text)) => text.split_whitespace().count(),
                (None, None) => {
                    return Err(Error::DataMissing(format!(
                        "caption_token_count or caption for ({:?}, {:?})",
                        key.0, key.1
                    ))
                    .into())
                }
            };
            let (image_id, caption_id) = key;
            Ok(JudgedSample { image_id, caption_id, metric_score, human_score: h.human_score, caption_token_count })
        })
        .collect()
}

struct CsvRow {
    scope: &'static str,
    lo: Option<usize>,
    hi: Option<usize>,
    n: Option<usize>,
    pcc: Option<f64>,
    one_minus_r2: Option<f64>,
    one_minus_r2_ols: Option<f64>,
    kendall_tau: Option<f64>,
    spearman: Option<f64>,
    status: String,
}

const CSV_HEADER: &str = "scope,lo,hi,n,pcc,one_minus_r2,one_minus_r2_ols,kendall_tau,spearman,status";

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl CsvRow {
    fn line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scope,
            cell(self.lo),
            cell(self.hi),
            cell(self.n),
            cell(self.pcc),
            cell(self.one_minus_r2),
            cell(self.one_minus_r2_ols),
            cell(self.kendall_tau),
            cell(self.spearman),
            self.status
        )
    }

    fn report(scope: &'static str, lo: Option<usize>, hi: Option<usize>, r: &specs_core::CorrelationReport) -> Self {
        Self {
            scope,
            lo,
            hi,
            n: Some(r.n),
            pcc: Some(r.pcc),
            one_minus_r2: Some(r.one_minus_r2),
            one_minus_r2_ols: Some(r.one_minus_r2_ols),
            kendall_tau: Some(r.kendall_tau),
            spearman: Some(r.spearman),
            status: "ok".into(),
        }
    }
}

fn correlate_cmd(a: &CorrelateArgs) -> Result<()> {
    log_config(
        "correlate",
        json!({
            "samples": path_str(a.samples.as_ref()), "scores": path_str(a.scores.as_ref()),
            "human": path_str(a.human.as_ref()), "buckets": a.buckets, "per_image": a.per_image,
            "format": format!("{:?}", a.format).to_lowercase(),
        }),
    );
    if a.buckets.as_ref().is_some_and(|e| e.windows(2).any(|w| w[0] >= w[1])) {
        return Err(Error::BadEdges.into());
    }
    let samples = match (&a.samples, &a.scores, &a.human) {
        (Some(s), None, None) => read_all::<JudgedSample>(s)?,
        (None, Some(s), Some(h)) => join_samples(s, h)?,
        _ => return Err(invalid("correlate needs --samples, or --scores with --human")),
    };
    let global = correlate(&samples)?;
    let buckets = a.buckets.as_deref().map(|edges| bucketed_correlate(&samples, edges)).transpose()?;
    let per_image = a.per_image.then(|| per_image_kendall(&samples)).transpose()?;

    let mut out = open_output(a.output.as_deref())?;
    match a.format {
        Format::Json => {
            let mut doc = json!({ "global": global });
            if let Some(b) = &buckets {
                doc["buckets"] = json!(b);
            }
            if let Some(p) = &per_image {
                doc["per_image"] = json!(p);
            }
            writeln!(out, "{doc}")?;
        }
        Format::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            writeln!(out, "{}", CsvRow::report("global", None, None, &global).line())?;
            for b in buckets.iter().flatten() {
                let row = match &b.outcome {
                    BucketOutcome::Ok { report } => CsvRow::report("bucket", Some(b.lo), b.hi, report),
                    BucketOutcome::Skipped { n, reason } => CsvRow {
                        scope: "bucket",
                        lo: Some(b.lo),
                        hi: b.hi,
                        n: Some(*n),
                        pcc: None,
                        one_minus_r2: None,
                        one_minus_r2_ols: None,
                        kendall_tau: None,
                        spearman: None,
                        status: format!("skipped: {}", reason.replace(',', ";")),
                    },
                };
                writeln!(out, "{}", row.line())?;
            }
            if let Some(p) = &per_image {
                let row = CsvRow {
                    scope: "per_image",
                    lo: None,
                    hi: None,
                    n: Some(p.images_used),
                    pcc: None,
                    one_minus_r2: None,
                    one_minus_r2_ols: None,
                    kendall_tau: Some(p.mean_kendall_tau),
                    spearman: None,
                    status: "ok".into(),
                };
                writeln!(out, "{}", row.line())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
