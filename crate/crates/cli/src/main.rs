use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use screenref::corpus::{generate_corpus, Corpus, GeneratorConfig};
use screenref::detect::{Detector, DetectorConfig};
use screenref::eval::{
    evaluate, report_ablation, AblationResult, CategoryOracle, MetricsReport, NoTextOracle, Resolver,
};
use screenref::features::{default_stopwords, feature_vector, FEATURE_DIM, FEATURE_LAYOUT};
use screenref::heuristic::{HeuristicResolver, KeywordLexicon};
use screenref::io::{read_json, read_ndjson, sha256_hex, to_ndjson, write_json, write_ndjson};
use screenref::screen::{Entity, OcrText, Sample};
use screenref::srr::{Explanation, Model, ModelConfig, Prediction};
use screenref::train::{ablate, module_subsets, train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(name = "screenref", version, about = "Resolve references to on-screen entities")]
struct Cli {
    /// Overrides the seed of the generator or trainer config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config: either the subcommand's own config or an object with
    /// `generator`, `detector`, `model` and `train` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Generate {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tag OCR texts of screens with entity categories.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-candidate feature vectors.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a resolver model.
    Train {
        #[command(flatten)]
        t: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score samples with one resolver.
    Resolve {
        #[arg(long, default_value = "heuristic")]
        resolver: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Selection threshold; defaults to the model's.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add module weights, module scores and token attention (srr only).
        #[arg(long)]
        explain: bool,
    },
    /// Compare resolvers on a corpus split.
    Eval {
        #[arg(long, value_delimiter = ',', default_value = "heuristic,srr,cat-oracle,no-text-oracle")]
        resolvers: Vec<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train module subsets and report descriptive top-1 error.
    Ablate {
        #[command(flatten)]
        t: TrainArgs,
        /// One subset, e.g. `cat,loc`; all seven when omitted.
        #[arg(long, value_delimiter = ',')]
        modules: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    train_config: Option<PathBuf>,
}

/// Sections of a combined config file.
#[derive(Default, Deserialize)]
struct Sections {
    generator: Option<Value>,
    detector: Option<Value>,
    model: Option<Value>,
    train: Option<Value>,
}

const SECTION_KEYS: [&str; 4] = ["generator", "detector", "model", "train"];

struct Settings {
    sections: Sections,
    /// The whole file when it is not sectioned.
    bare: Option<Value>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self { sections: Sections::default(), bare: None }) };
        let value: Value = read_json(path)?;
        let sectioned = value.as_object().is_some_and(|o| o.keys().any(|k| SECTION_KEYS.contains(&k.as_str())));
        if sectioned {
            let sections = serde_json::from_value(value).map_err(screenref::Error::from)?;
            Ok(Self { sections, bare: None })
        } else {
            Ok(Self { sections: Sections::default(), bare: Some(value) })
        }
    }

    /// The section, or the bare file when `primary` names this subcommand's own config.
    fn get<T: serde::de::DeserializeOwned + Default>(&self, section: &Option<Value>, primary: bool) -> Result<T> {
        let v = section.as_ref().or(if primary { self.bare.as_ref() } else { None });
        match v {
            Some(v) => Ok(serde_json::from_value(v.clone()).map_err(screenref::Error::from)?),
            None => Ok(T::default()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<screenref::Error>() {
            return if err.is_validation() { 1 } else { 2 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { out_dir } => {
            let mut config: GeneratorConfig = settings.get(&settings.sections.generator, true)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let (corpus, report) = generate_corpus(&config)?;
            corpus.write(&out_dir, &report)?;
            eprintln!(
                "wrote {} train, {} val, {} test samples to {}",
                corpus.train.len(),
                corpus.val.len(),
                corpus.test.len(),
                out_dir.display()
            );
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Detect { input, out } => {
            let config: DetectorConfig = settings.get(&settings.sections.detector, true)?;
            let detector = Detector::new(&config)?;
            let screens: Vec<ScreenInput> = read_ndjson(&input)?;
            let records: Vec<DetectOutput> = screens
                .into_iter()
                .map(|s| DetectOutput { entities: detector.detect_entities(&s.ocr_texts), screen_id: s.id })
                .collect();
            write_ndjson(&out, &records)?;
        }
        Command::Features { input, out } => {
            let samples: Vec<Sample> = read_ndjson(&input)?;
            let stop = default_stopwords();
            let mut text = serde_json::to_string(&FeatureHeader::default())?;
            text.push('\n');
            let mut rows = Vec::new();
            for s in &samples {
                for e in &s.candidates {
                    rows.push(FeatureRow {
                        request_id: s.request.id.clone(),
                        entity_id: e.id,
                        features: feature_vector(s, e, stop),
                    });
                }
            }
            text.push_str(&to_ndjson(&rows)?);
            fs::write(&out, text).map_err(screenref::Error::from)?;
        }
        Command::Train { t, out, history } => {
            let (corpus, model_cfg, train_cfg) = train_inputs(&t, &settings, cli.seed)?;
            let (model, hist) = train_with_progress(&corpus, &model_cfg, &train_cfg, |r| {
                eprintln!(
                    "epoch {:>2}  loss {}  val top-1 err {:.2}  val EM {:.2}",
                    r.epoch,
                    r.train_loss.map_or("-".to_string(), |l| format!("{l:.4}")),
                    r.val_top1_error,
                    r.val_exact_match
                );
            })?;
            model.save(&out)?;
            eprintln!("selected epoch {}; model written to {}", hist.selected_epoch, out.display());
            if let Some(h) = history {
                write_json(h, &hist)?;
            }
        }
        Command::Resolve { resolver, model, lexicon, threshold, input, out, explain } => {
            let samples: Vec<Sample> = read_ndjson(&input)?;
            let model = model.map(Model::load).transpose()?;
            let r = make_resolver(&resolver, model.as_ref(), lexicon.as_deref())?;
            let tau = threshold.or(model.as_ref().map(|m| m.config.threshold)).unwrap_or(ModelConfig::default().threshold);
            if explain && resolver != "srr" {
                bail!(screenref::Error::Config("--explain is only available for the srr resolver".into()));
            }
            let mut records = Vec::with_capacity(samples.len());
            for s in &samples {
                let ids = s.candidates.iter().map(|c| c.id).collect();
                let p = Prediction::from_scores(ids, r.score(s)?, tau)?;
                let explanation = match (&model, explain) {
                    (Some(m), true) => Some(m.explain(s, 0.0)?),
                    _ => None,
                };
                records.push(ResolveOutput { request_id: s.request.id.clone(), prediction: p, explanation });
            }
            write_ndjson(&out, &records)?;
        }
        Command::Eval { resolvers, model, lexicon, corpus, split, threshold, out } => {
            let data = Corpus::load(&corpus)?;
            let samples = data
                .split(&split)
                .ok_or_else(|| screenref::Error::Config(format!("unknown split {split:?}")))?;
            let model_bytes = model.as_ref().map(fs::read).transpose().map_err(screenref::Error::from)?;
            let model = model_bytes.as_deref().map(Model::from_bytes).transpose()?;
            let tau = threshold.or(model.as_ref().map(|m| m.config.threshold)).unwrap_or(ModelConfig::default().threshold);
            let mut reports = Vec::new();
            for name in &resolvers {
                let r = make_resolver(name, model.as_ref(), lexicon.as_deref())?;
                reports.push(evaluate(r.as_ref(), samples, tau)?);
            }
            let report = MetricsReport {
                threshold: tau,
                corpus_sha256: Some(sha256_hex(to_ndjson(samples)?.as_bytes())),
                model_sha256: model_bytes.as_deref().map(sha256_hex),
                resolvers: reports,
            };
            print!("{}", report.table());
            if let Some(o) = out {
                write_json(o, &report)?;
            }
        }
        Command::Ablate { t, modules, out } => {
            let (corpus, model_cfg, train_cfg) = train_inputs(&t, &settings, cli.seed)?;
            let subsets: Vec<Vec<String>> = match modules {
                Some(m) => vec![m],
                None => module_subsets().into_iter().map(|s| s.into_iter().map(String::from).collect()).collect(),
            };
            let mut results: Vec<AblationResult> = Vec::new();
            for s in &subsets {
                let names: Vec<&str> = s.iter().map(String::as_str).collect();
                let (r, _) = ablate(&corpus, &model_cfg, &train_cfg, &names)?;
                eprintln!("{:<14} descriptive top-1 err {:.1}", r.modules.join("+"), r.top1_error());
                results.push(r);
            }
            if results.len() == 7 {
                let report = report_ablation(&results)?;
                print!("{}", report.table());
                if let Some(o) = out {
                    write_json(o, &report)?;
                }
            } else if let Some(o) = out {
                write_json(o, &results)?;
            }
        }
    }
    Ok(())
}

fn train_inputs(t: &TrainArgs, settings: &Settings, seed: Option<u64>) -> Result<(Corpus, ModelConfig, TrainConfig)> {
    let corpus = Corpus::load(&t.corpus)?;
    let model_cfg: ModelConfig = match &t.model_config {
        Some(p) => read_json(p)?,
        None => settings.get(&settings.sections.model, false)?,
    };
    let mut train_cfg: TrainConfig = match &t.train_config {
        Some(p) => read_json(p)?,
        None => settings.get(&settings.sections.train, true)?,
    };
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    Ok((corpus, model_cfg, train_cfg))
}

fn make_resolver<'a>(name: &str, model: Option<&'a Model>, lexicon: Option<&Path>) -> Result<Box<dyn Resolver + 'a>> {
    Ok(match name {
        "heuristic" => {
            let lex = match lexicon {
                Some(p) => KeywordLexicon::load(p)?,
                None => KeywordLexicon::default(),
            };
            Box::new(HeuristicResolver::new(lex, default_stopwords().clone()))
        }
        "srr" => match model {
            Some(m) => Box::new(m.clone()),
            None => bail!(screenref::Error::Config("the srr resolver needs --model".into())),
        },
        "cat-oracle" => Box::new(CategoryOracle),
        "no-text-oracle" => Box::new(NoTextOracle),
        other => bail!(screenref::Error::Config(format!("unknown resolver {other:?}"))),
    })
}

/// A screen before detection; any `entities` already present are ignored.
#[derive(Deserialize)]
struct ScreenInput {
    id: String,
    ocr_texts: Vec<OcrText>,
}

#[derive(Serialize)]
struct DetectOutput {
    screen_id: String,
    entities: Vec<Entity>,
}

#[derive(Serialize)]
struct FeatureHeader {
    layout: Vec<(&'static str, usize)>,
    dim: usize,
}

impl Default for FeatureHeader {
    fn default() -> Self {
        Self { layout: FEATURE_LAYOUT.to_vec(), dim: FEATURE_DIM }
    }
}

#[derive(Serialize)]
struct FeatureRow {
    request_id: String,
    entity_id: u32,
    features: Vec<f64>,
}

#[derive(Serialize)]
struct ResolveOutput {
    request_id: String,
    #[serde(flatten)]
    prediction: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<Explanation>,
}
