// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Every subcommand builds a [`Report`]; with `--out DIR` it is written to
//! `DIR/<subcommand>.json` (plus an SVG for lens, trace and route-stats),
//! otherwise it is printed to stdout. Failures print one JSON line to
//! stderr and exit with 1 (usage), 2 (invalid input) or 3 (runtime).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data_io::report::{
    ActiveVector, BundlePayload, GenerationPayload, GeometryPayload, InterpolationPayload, LensPayload,
    RoutingPayload, SteerPayload, SweepPayload, TracePayload, WordVerdict,
};
use crate::data_io::{
    load_annotations, load_facts, load_insight, load_lexicon, read_report, render_lens_svg, render_routing_bars,
    render_trace_svg, write_report, write_svg, InsightDataset, LensRenderOptions, Metadata, Payload, Report,
};
use crate::error::{Error, Result};
use crate::interpolation::{interpolation_curve, Host, InterpolationSpec, LanguageLexicons};
use crate::lens::{lens_grid, DEFAULT_TOP_K};
use crate::model::{
    generate, load_bundle, plant_association, synthesize_bundle, toy_vocabulary, GenerationRecord, ModelBundle,
    ModelConfig, PLANT_READOUT_GAIN, PLANT_VALUE_GAIN, TOY_WORDS,
};
use crate::routing::{
    check_surface, classify_word_routing, flagged_term_report, routing_report, AnnotatedGrid,
    Dictionary, Lexicon, Segmenter,
};
use crate::steering::{
    build_steering_vector, cosine_profile, evaluate_steering, layer_grid, nudged_similarity, steer_generate, sweep,
    ExtractionRule, Steer, SteeringVector, DEFAULT_LANGUAGE_GAMMA, DEFAULT_TOPIC_GAMMA, LANGUAGE_LAYER_STRIDE,
    TOPIC_LAYER_STRIDE,
};
use crate::tracing::{
    trace_grid, FactProbe, TraceConfig, DEFAULT_MAX_ATTEMPTS, DEFAULT_N_SEEDS, DEFAULT_THRESHOLD_RATIO,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Default sweep gammas.
pub const DEFAULT_SWEEP_GAMMAS: [f64; 5] = [1.0, 2.0, 5.0, 10.0, 20.0];
pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_STEPS: usize = 16;
/// Default seed of `make-toy`.
pub const DEFAULT_TOY_SEED: u64 = 9;

#[derive(Debug, Parser)]
#[command(name = "lingualens", version, about = "Logit lens, causal tracing, steering and interpolation on small transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a toy bundle, optionally with planted facts.
    MakeToy(MakeToyArgs),
    /// Greedy generation.
    Generate(GenerateArgs),
    /// Logit-lens grid over a generation.
    Lens(LensArgs),
    /// Causal tracing of a fact.
    Trace(TraceArgs),
    /// Generate with topic (and optionally language) steering.
    Steer(SteerArgs),
    /// Sweep steering layers and gammas over holdout prompts.
    SteerSweep(SweepArgs),
    /// Cosine geometry of steering vectors across languages.
    Geometry(GeometryArgs),
    /// English-routing statistics from annotated generations.
    RouteStats(RouteArgs),
    /// Hidden-state interpolation between two languages.
    Interpolate(InterpolateArgs),
    /// Draw the figure for an existing report.
    Render(RenderArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::MakeToy(_) => "make-toy",
            Self::Generate(_) => "generate",
            Self::Lens(_) => "lens",
            Self::Trace(_) => "trace",
            Self::Steer(_) => "steer",
            Self::SteerSweep(_) => "steer-sweep",
            Self::Geometry(_) => "geometry",
            Self::RouteStats(_) => "route-stats",
            Self::Interpolate(_) => "interpolate",
            Self::Render(_) => "render",
        }
    }
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory; the report is printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MakeToyArgs {
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOY_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    #[arg(long, default_value_t = 64)]
    max_seq: usize,
    /// Extra whole-word tokens (repeatable).
    #[arg(long = "word")]
    words: Vec<String>,
    /// Plant `SUBJECT=ANSWER` so that " SUBJECT" predicts " ANSWER" (repeatable).
    #[arg(long = "fact")]
    facts: Vec<String>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct LensArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// Lexicon whose English forms are highlighted (and flagged terms marked).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Gray out flagged terms in the figure.
    #[arg(long)]
    mask_flagged: bool,
    /// Lowest layer drawn in the figure.
    #[arg(long, default_value_t = 0)]
    layer_offset: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Prompt text (with --subject and --answer).
    #[arg(long, requires_all = ["subject", "answer"], conflicts_with = "facts")]
    prompt: Option<String>,
    #[arg(long)]
    subject: Option<String>,
    /// Answer text; a leading space is added unless the prompt ends in one.
    #[arg(long)]
    answer: Option<String>,
    /// Facts dataset (with --fact-id and --lang).
    #[arg(long, requires = "fact_id")]
    facts: Option<PathBuf>,
    #[arg(long)]
    fact_id: Option<String>,
    #[arg(long, default_value = "en")]
    lang: String,
    /// Number of noise seeds.
    #[arg(long, default_value_t = DEFAULT_N_SEEDS)]
    seeds: usize,
    /// Base seed the per-trial seeds are derived from.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial noise scale [default: 3 x token-embedding std].
    #[arg(long, conflicts_with = "sigma_auto")]
    sigma: Option<f64>,
    /// Use the default noise scale.
    #[arg(long)]
    sigma_auto: bool,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_RATIO)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Final,
    Mean,
}

impl From<RuleArg> for ExtractionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Final => Self::FinalPosition,
            RuleArg::Mean => Self::MeanOverPositions,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SegmenterArg {
    Whitespace,
    Dictionary,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long, value_enum, default_value = "whitespace")]
    segmenter: SegmenterArg,
    /// Word list (one per line) for the dictionary segmenter.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

/// Where a topic vector comes from: a dataset word, or explicit sentences.
#[derive(Debug, Args)]
struct VectorArgs {
    /// Word/sentence dataset.
    #[arg(long)]
    insight: Option<PathBuf>,
    /// Dataset word id.
    #[arg(long)]
    word: Option<String>,
    /// Language of the sentences.
    #[arg(long, default_value = "en")]
    lang: String,
    /// Positive sentence (repeatable; replaces the dataset).
    #[arg(long = "positive")]
    positive: Vec<String>,
    /// Negative sentence (repeatable).
    #[arg(long = "negative")]
    negative: Vec<String>,
    #[arg(long, value_enum, default_value = "final")]
    rule: RuleArg,
}

#[derive(Debug, Args)]
struct SteerArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    prompt: String,
    #[command(flatten)]
    vector: VectorArgs,
    /// Topic layer [default: n_layers / 2].
    #[arg(long)]
    topic_layer: Option<usize>,
    #[arg(long, alias = "gamma", default_value_t = DEFAULT_TOPIC_GAMMA)]
    topic_gamma: f64,
    /// Add a language vector toward this dataset language.
    #[arg(long, requires = "insight")]
    steer_lang: Option<String>,
    /// Language the language vector points away from.
    #[arg(long, default_value = "en")]
    base_lang: String,
    /// Language layer [default: n_layers / 2].
    #[arg(long)]
    lang_layer: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_LANGUAGE_GAMMA)]
    lang_gamma: f64,
    /// Accepted target form (repeatable) [default: the word's forms].
    #[arg(long = "target")]
    targets: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[command(flatten)]
    segment: SegmentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VectorKind {
    Topic,
    Language,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    insight: PathBuf,
    #[arg(long)]
    word: String,
    /// Language of the topic sentences, or target language of a language vector.
    #[arg(long, default_value = "en")]
    lang: String,
    #[arg(long, value_enum, default_value = "topic")]
    kind: VectorKind,
    /// Source language for language vectors and their prompts.
    #[arg(long, default_value = "en")]
    base_lang: String,
    #[arg(long, value_enum, default_value = "final")]
    rule: RuleArg,
    /// Holdout prompt (repeatable) [default: first prompt of every other word].
    #[arg(long = "prompt")]
    prompts: Vec<String>,
    /// Comma-separated layers [default: every 5th (topic) or 2nd (language) layer].
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Comma-separated gammas [default: 1,2,5,10,20].
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long = "target")]
    targets: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[command(flatten)]
    segment: SegmentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct GeometryArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    insight: PathBuf,
    #[arg(long)]
    word: String,
    #[arg(long)]
    lang_a: String,
    #[arg(long)]
    lang_b: String,
    /// Nudge A toward B by beta times the (B - A) language vector.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value = "final")]
    rule: RuleArg,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct RouteArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    layer_min: usize,
    /// Highest layer examined [default: n_layers].
    #[arg(long)]
    layer_max: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HostArg {
    A,
    B,
}

#[derive(Debug, Args)]
struct InterpolateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Facts dataset (with --fact-id); or give --prompt-a/--prompt-b/--answer.
    #[arg(long, requires = "fact_id")]
    facts: Option<PathBuf>,
    #[arg(long)]
    fact_id: Option<String>,
    #[arg(long, default_value = "en")]
    lang_a: String,
    #[arg(long, default_value = "nl")]
    lang_b: String,
    #[arg(long, conflicts_with = "facts", requires_all = ["prompt_b", "answer"])]
    prompt_a: Option<String>,
    #[arg(long)]
    prompt_b: Option<String>,
    /// Accepted answer (repeatable), counted for language A.
    #[arg(long = "answer")]
    answer: Vec<String>,
    #[arg(long)]
    layer: usize,
    /// Comma-separated alphas [default: 0,0.25,0.5,0.75,1].
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, value_enum, default_value = "a")]
    host: HostArg,
    #[arg(long)]
    instruction: Option<String>,
    /// Word/sentence dataset used as extra language-identification vocabulary.
    #[arg(long)]
    insight: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[command(flatten)]
    segment: SegmentArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Lens, trace or routing report.
    #[arg(long)]
    report: PathBuf,
    /// Figure path [default: report path with .svg].
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    mask_flagged: bool,
    #[arg(long, default_value_t = 0)]
    layer_offset: usize,
}

/// Raw subcommand arguments without `--out`, as recorded in metadata.
fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(2) {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn error_record(code: &str, message: &str, exit: i32) -> String {
    serde_json::json!({ "error": code, "message": message, "exit_code": exit }).to_string()
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let argv: Vec<String> = argv.into_iter().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", error_record("usage", first, EXIT_USAGE));
            return EXIT_USAGE;
        }
    };
    let args = recorded_args(&argv);
    match execute(cli.command, args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let exit = exit_code(&e);
            eprintln!("{}", error_record(e.code(), &e.to_string(), exit));
            exit
        }
    }
}

fn execute(cmd: Command, args: Vec<String>) -> Result<()> {
    let name = cmd.name();
    match cmd {
        Command::MakeToy(a) => make_toy(a, name, args),
        Command::Generate(a) => cmd_generate(a, name, args),
        Command::Lens(a) => cmd_lens(a, name, args),
        Command::Trace(a) => cmd_trace(a, name, args),
        Command::Steer(a) => cmd_steer(a, name, args),
        Command::SteerSweep(a) => cmd_sweep(a, name, args),
        Command::Geometry(a) => cmd_geometry(a, name, args),
        Command::RouteStats(a) => cmd_route(a, name, args),
        Command::Interpolate(a) => cmd_interpolate(a, name, args),
        Command::Render(a) => cmd_render(a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `<name>.json` (and `<name>.svg`) under `out`, or print the report.
fn emit(out: &Option<PathBuf>, name: &str, report: &Report, svg: Option<String>) -> Result<()> {
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_report(report, dir.join(format!("{name}.json")))?;
            if let Some(svg) = svg {
                write_svg(dir.join(format!("{name}.svg")), &svg)?;
            }
        }
        None => print!("{}", report.to_json()?),
    }
    Ok(())
}

fn make_toy(a: MakeToyArgs, name: &str, args: Vec<String>) -> Result<()> {
    let mut facts = Vec::new();
    for f in &a.facts {
        let (s, t) = f
            .split_once('=')
            .filter(|(s, t)| !s.trim().is_empty() && !t.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("--fact {f:?} is not SUBJECT=ANSWER")))?;
        facts.push((s.trim().to_owned(), t.trim().to_owned()));
    }
    let mut words: Vec<&str> = TOY_WORDS.to_vec();
    for w in a.words.iter().map(String::as_str).chain(facts.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()])) {
        if !words.contains(&w) {
            words.push(w);
        }
    }
    let vocab = toy_vocabulary(&words);
    let config = ModelConfig {
        n_layers: a.layers,
        d_model: a.d_model,
        n_heads: a.heads,
        d_ff: a.d_ff,
        vocab_size: vocab.len(),
        max_seq: a.max_seq,
        ..ModelConfig::default()
    };
    let mut bundle = synthesize_bundle(a.seed, config.clone(), vocab)?;
    for (s, t) in &facts {
        let id = |w: &str| {
            bundle
                .vocab()
                .id(&format!(" {w}"))
                .ok_or_else(|| Error::Config(format!("fact word {w:?} is not a single token")))
        };
        let (sid, tid) = (id(s)?, id(t)?);
        bundle = plant_association(&bundle, sid, tid, PLANT_VALUE_GAIN, PLANT_READOUT_GAIN)?;
    }
    bundle.save(&a.out)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![a.seed]),
        Payload::Bundle(BundlePayload {
            seed: a.seed,
            config,
            facts: a.facts.clone(),
        }),
    );
    write_report(&report, a.out.join(format!("{name}.json")))
}

fn cmd_generate(a: GenerateArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let g = generate(&bundle, &a.prompt, a.steps, &[])?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Generation(GenerationPayload {
            generation: GenerationRecord::new(&bundle, &g),
            interventions: g.interventions.clone(),
        }),
    );
    emit(&a.out.out, name, &report, None)
}

fn lens_options(lexicon: Option<&Lexicon>, mask: bool, layer_offset: usize, title: String) -> LensRenderOptions {
    LensRenderOptions {
        title,
        english: lexicon.map(Lexicon::english_forms).unwrap_or_default(),
        flagged: lexicon
            .and_then(|l| l.flagged_terms.clone())
            .map(|f| f.into_iter().collect())
            .unwrap_or_default(),
        mask_flagged: mask,
        layer_offset,
    }
}

fn cmd_lens(a: LensArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let lexicon = a.lexicon.as_ref().map(load_lexicon).transpose()?;
    let g = generate(&bundle, &a.prompt, a.steps, &[])?;
    let grid = lens_grid(&bundle, &g, a.k)?;
    let opts = lens_options(lexicon.as_ref(), a.mask_flagged, a.layer_offset, a.prompt.clone());
    let svg = render_lens_svg(&grid, &opts)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Lens(LensPayload {
            generation: GenerationRecord::new(&bundle, &g),
            grid,
        }),
    );
    emit(&a.out.out, name, &report, Some(svg))
}

fn spaced_answer(prompt: &str, answer: &str) -> String {
    if prompt.ends_with(char::is_whitespace) || answer.starts_with(char::is_whitespace) {
        answer.to_owned()
    } else {
        format!(" {answer}")
    }
}

fn cmd_trace(a: TraceArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let probe = match (&a.prompt, &a.facts) {
        (Some(prompt), None) => {
            let subject = a.subject.as_deref().unwrap_or_default();
            let answer = spaced_answer(prompt, a.answer.as_deref().unwrap_or_default());
            FactProbe::from_text(&bundle, prompt, subject, &answer)?
        }
        (None, Some(path)) => {
            let ds = load_facts(path)?;
            let id = a.fact_id.as_deref().unwrap_or_default();
            let entry = ds
                .entry(id)
                .ok_or_else(|| Error::Dataset(format!("fact {id:?} not in {}", path.display())))?;
            entry.probe(&bundle, &a.lang)?
        }
        _ => return Err(Error::EmptyInput("trace needs --prompt/--subject/--answer or --facts/--fact-id".into())),
    };
    let config = TraceConfig {
        sigma0: a.sigma,
        threshold_ratio: a.threshold,
        n_seeds: a.seeds,
        max_attempts: a.max_attempts,
        seed: a.seed,
        parallel: true,
    };
    let grid = trace_grid(&bundle, &probe, &config)?;
    let svg = render_trace_svg(&grid, &probe.prompt)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, grid.seeds.clone()),
        Payload::Trace(TracePayload {
            prompt: probe.prompt.clone(),
            config,
            grid,
        }),
    );
    emit(&a.out.out, name, &report, Some(svg))
}

fn segmenter(s: &SegmentArgs) -> Result<Segmenter> {
    match s.segmenter {
        SegmenterArg::Whitespace => Ok(Segmenter::Whitespace),
        SegmenterArg::Dictionary => {
            let path = s
                .dictionary
                .as_ref()
                .ok_or_else(|| Error::EmptyInput("--segmenter dictionary needs --dictionary FILE".into()))?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(Segmenter::Dictionary(Dictionary::new(text.lines().map(str::trim))?))
        }
    }
}

fn word_sentences<'a>(ds: &'a InsightDataset, word: &str, lang: &str) -> Result<&'a crate::data_io::LanguageRecord> {
    let entry = ds
        .entry(word)
        .ok_or_else(|| Error::Dataset(format!("word {word:?} not in dataset")))?;
    entry
        .languages
        .get(lang)
        .ok_or_else(|| Error::Dataset(format!("word {word:?} has no language {lang:?}")))
}

/// Topic vector from explicit sentences or from a dataset word.
fn topic_vector(bundle: &ModelBundle, v: &VectorArgs) -> Result<(SteeringVector, Vec<String>)> {
    let rule = v.rule.into();
    if !v.positive.is_empty() || !v.negative.is_empty() {
        let concept = v.word.clone().unwrap_or_else(|| "custom".into());
        let vec = build_steering_vector(bundle, &concept, &v.lang, &v.positive, &v.negative, rule)?;
        return Ok((vec, v.word.iter().cloned().collect()));
    }
    let (Some(path), Some(word)) = (&v.insight, &v.word) else {
        return Err(Error::EmptyInput(
            "steering vector needs --insight and --word, or --positive/--negative sentences".into(),
        ));
    };
    let ds = load_insight(path)?;
    let rec = word_sentences(&ds, word, &v.lang)?;
    let entry = ds.entry(word).expect("checked above");
    let negatives = ds.negatives(entry, &v.lang)?;
    let vec = build_steering_vector(bundle, word, &v.lang, &rec.sentences, &negatives, rule)?;
    Ok((vec, rec.accepted_forms()))
}

/// Language vector: all sentences of `lang` minus all sentences of `base`.
fn language_vector(
    bundle: &ModelBundle,
    ds: &InsightDataset,
    lang: &str,
    base: &str,
    rule: ExtractionRule,
) -> Result<SteeringVector> {
    let collect = |l: &str| -> Vec<String> {
        ds.entries
            .iter()
            .filter_map(|e| e.languages.get(l))
            .flat_map(|r| r.sentences.iter().cloned())
            .collect()
    };
    let (pos, neg) = (collect(lang), collect(base));
    build_steering_vector(bundle, &format!("{lang}-vs-{base}"), lang, &pos, &neg, rule)
}

fn check_layer(bundle: &ModelBundle, layer: usize) -> Result<usize> {
    if layer > bundle.n_layers() {
        return Err(Error::OutOfRange(format!("layer {layer} outside [0, {}]", bundle.n_layers())));
    }
    Ok(layer)
}

fn cmd_steer(a: SteerArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let seg = segmenter(&a.segment)?;
    let (topic, mut forms) = topic_vector(&bundle, &a.vector)?;
    let topic_layer = check_layer(&bundle, a.topic_layer.unwrap_or(bundle.n_layers() / 2))?;
    let lang_vec = match &a.steer_lang {
        Some(l) => {
            let ds = load_insight(a.vector.insight.as_ref().expect("clap requires --insight"))?;
            if let Some(word) = &a.vector.word {
                forms = word_sentences(&ds, word, l)?.accepted_forms();
            }
            Some(language_vector(&bundle, &ds, l, &a.base_lang, a.vector.rule.into())?)
        }
        None => None,
    };
    let lang_layer = check_layer(&bundle, a.lang_layer.unwrap_or(bundle.n_layers() / 2))?;
    if !a.targets.is_empty() {
        forms = a.targets.clone();
    }
    let topic_steer = Steer {
        vector: &topic,
        layer: topic_layer,
        gamma: a.topic_gamma,
    };
    let lang_steer = lang_vec.as_ref().map(|v| Steer {
        vector: v,
        layer: lang_layer,
        gamma: a.lang_gamma,
    });
    let g = steer_generate(&bundle, &a.prompt, topic_steer, lang_steer, a.steps)?;
    if forms.is_empty() {
        return Err(Error::EmptyInput("no target forms; pass --target or --word".into()));
    }
    let outcome = evaluate_steering(&g.text, &forms, &seg)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Steer(SteerPayload {
            topic: ActiveVector {
                vector: topic.clone(),
                layer: topic_layer,
                gamma: a.topic_gamma,
            },
            language: lang_vec.map(|v| ActiveVector {
                vector: v,
                layer: lang_layer,
                gamma: a.lang_gamma,
            }),
            generation: GenerationRecord::new(&bundle, &g),
            target_forms: forms,
            outcome,
        }),
    );
    emit(&a.out.out, name, &report, None)
}

fn cmd_sweep(a: SweepArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let seg = segmenter(&a.segment)?;
    let ds = load_insight(&a.insight)?;
    let entry = ds
        .entry(&a.word)
        .ok_or_else(|| Error::Dataset(format!("word {:?} not in dataset", a.word)))?;
    let rule: ExtractionRule = a.rule.into();
    let (vector, prompt_lang, stride) = match a.kind {
        VectorKind::Topic => {
            let rec = word_sentences(&ds, &a.word, &a.lang)?;
            let neg = ds.negatives(entry, &a.lang)?;
            (
                build_steering_vector(&bundle, &a.word, &a.lang, &rec.sentences, &neg, rule)?,
                a.lang.clone(),
                TOPIC_LAYER_STRIDE,
            )
        }
        VectorKind::Language => (
            language_vector(&bundle, &ds, &a.lang, &a.base_lang, rule)?,
            a.base_lang.clone(),
            LANGUAGE_LAYER_STRIDE,
        ),
    };
    let prompts = if a.prompts.is_empty() {
        match a.kind {
            VectorKind::Topic => ds
                .entries
                .iter()
                .filter(|e| e.word_id != a.word)
                .filter_map(|e| e.languages.get(&prompt_lang).and_then(|r| r.prompts.first().cloned()))
                .collect(),
            VectorKind::Language => word_sentences(&ds, &a.word, &prompt_lang)?.prompts.clone(),
        }
    } else {
        a.prompts.clone()
    };
    let targets = if a.targets.is_empty() {
        word_sentences(&ds, &a.word, &a.lang)?.accepted_forms()
    } else {
        a.targets.clone()
    };
    let layers = if a.layers.is_empty() {
        layer_grid(bundle.n_layers(), stride)
    } else {
        a.layers.clone()
    };
    for &l in &layers {
        check_layer(&bundle, l)?;
    }
    let gammas = if a.gammas.is_empty() {
        DEFAULT_SWEEP_GAMMAS.to_vec()
    } else {
        a.gammas.clone()
    };
    let result = sweep(&bundle, &prompts, &vector, &layers, &gammas, &targets, &seg, a.steps)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Sweep(SweepPayload {
            vector,
            holdout_prompts: prompts,
            target_forms: targets,
            result,
        }),
    );
    emit(&a.out.out, name, &report, None)
}

fn cmd_geometry(a: GeometryArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let ds = load_insight(&a.insight)?;
    let entry = ds
        .entry(&a.word)
        .ok_or_else(|| Error::Dataset(format!("word {:?} not in dataset", a.word)))?;
    let rule: ExtractionRule = a.rule.into();
    let vec_for = |lang: &str| -> Result<SteeringVector> {
        let rec = word_sentences(&ds, &a.word, lang)?;
        let neg = ds.negatives(entry, lang)?;
        build_steering_vector(&bundle, &a.word, lang, &rec.sentences, &neg, rule)
    };
    let (va, vb) = (vec_for(&a.lang_a)?, vec_for(&a.lang_b)?);
    let cosine = cosine_profile(&va, &vb)?;
    let (delta, nudged) = match a.beta {
        Some(beta) => {
            let d = language_vector(&bundle, &ds, &a.lang_b, &a.lang_a, rule)?;
            let n = nudged_similarity(&va, &vb, &d, beta)?;
            (Some(d), Some(n))
        }
        None => (None, None),
    };
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Geometry(GeometryPayload {
            a: va,
            b: vb,
            cosine,
            delta,
            beta: a.beta,
            nudged,
        }),
    );
    emit(&a.out.out, name, &report, None)
}

fn cmd_route(a: RouteArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let annotations = load_annotations(&a.annotations)?;
    let lexicon = load_lexicon(&a.lexicon)?;
    let layer_max = a.layer_max.unwrap_or(bundle.n_layers());
    check_layer(&bundle, layer_max)?;
    if a.layer_min > layer_max {
        return Err(Error::OutOfRange(format!("layer range {}..={layer_max} is empty", a.layer_min)));
    }
    let mut gens = Vec::new();
    for ann in &annotations.generations {
        let g = generate(&bundle, &ann.prompt, annotations.max_steps, &[])?;
        let grid = lens_grid(&bundle, &g, a.k)?;
        let mut words = ann.word_spans();
        for w in &mut words {
            if w.token_positions.end > grid.n_columns() {
                return Err(Error::OutOfRange(format!(
                    "word {:?} spans tokens {:?} but the generation has {}",
                    w.surface,
                    w.token_positions,
                    grid.n_columns()
                )));
            }
            check_surface(w, &grid, |ids| bundle.detokenize(ids))?;
        }
        gens.push((GenerationRecord::new(&bundle, &g), grid, words));
    }
    let items: Vec<AnnotatedGrid<'_>> = gens
        .iter()
        .map(|(_, grid, words)| AnnotatedGrid { grid, words })
        .collect();
    let range = a.layer_min..=layer_max;
    let report_data = routing_report(&items, &lexicon, range.clone())?;
    let mut verdicts = Vec::new();
    for (i, (_, grid, words)) in gens.iter().enumerate() {
        for w in words {
            verdicts.push(WordVerdict {
                generation: i,
                surface: w.surface.clone(),
                pos: w.pos_tag.clone(),
                tokens: [w.token_positions.start, w.token_positions.end],
                verdict: classify_word_routing(w, grid, &lexicon, range.clone())?,
            });
        }
    }
    let flagged_percent = match &lexicon.flagged_terms {
        Some(terms) => {
            let grids: Vec<_> = gens.iter().map(|(_, g, _)| g).collect();
            Some(flagged_term_report(&grids, Some(terms))?)
        }
        None => None,
    };
    let svg = render_routing_bars(&report_data, &format!("English routing ({})", lexicon.language))?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Routing(RoutingPayload {
            report: report_data,
            words: verdicts,
            flagged_percent,
            generations: gens
                .into_iter()
                .map(|(generation, grid, _)| LensPayload { generation, grid })
                .collect(),
        }),
    );
    emit(&a.out.out, name, &report, Some(svg))
}

fn cmd_interpolate(a: InterpolateArgs, name: &str, args: Vec<String>) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let seg = segmenter(&a.segment)?;
    let mut lexicons = LanguageLexicons::new();
    let (prompt_a, prompt_b, answer_sets) = match (&a.facts, &a.prompt_a) {
        (Some(path), None) => {
            let ds = load_facts(path)?;
            let id = a.fact_id.as_deref().unwrap_or_default();
            let entry = ds
                .entry(id)
                .ok_or_else(|| Error::Dataset(format!("fact {id:?} not in {}", path.display())))?;
            lexicons = ds.language_lexicons();
            let mut sets = std::collections::BTreeMap::new();
            sets.insert(a.lang_a.clone(), entry.answers(&a.lang_a)?);
            sets.insert(a.lang_b.clone(), entry.answers(&a.lang_b)?);
            (entry.prompt(&a.lang_a)?, entry.prompt(&a.lang_b)?, sets)
        }
        (None, Some(pa)) => {
            let mut sets = std::collections::BTreeMap::new();
            sets.insert(a.lang_a.clone(), a.answer.clone());
            (pa.clone(), a.prompt_b.clone().unwrap_or_default(), sets)
        }
        _ => {
            return Err(Error::EmptyInput(
                "interpolate needs --facts/--fact-id or --prompt-a/--prompt-b/--answer".into(),
            ))
        }
    };
    if let Some(path) = &a.insight {
        for (lang, words) in load_insight(path)?.language_lexicons() {
            lexicons.entry(lang).or_default().extend(words);
        }
    }
    let lexicons: LanguageLexicons = lexicons
        .into_iter()
        .filter(|(l, _)| *l == a.lang_a || *l == a.lang_b)
        .collect();
    if lexicons.is_empty() {
        return Err(Error::EmptyInput(
            "no language vocabulary; pass --facts or --insight covering both languages".into(),
        ));
    }
    let spec = InterpolationSpec {
        prompt_a,
        prompt_b,
        layer: a.layer,
        alphas: if a.alphas.is_empty() {
            DEFAULT_ALPHAS.to_vec()
        } else {
            a.alphas.clone()
        },
        host: match a.host {
            HostArg::A => Host::A,
            HostArg::B => Host::B,
        },
        answer_sets,
        instruction_prefix: a.instruction.clone(),
    };
    check_layer(&bundle, spec.layer)?;
    let curve = interpolation_curve(&bundle, &spec, &lexicons, &seg, a.steps)?;
    let report = Report::new(
        Metadata::new(bundle.hash(), name, args, vec![]),
        Payload::Interpolation(InterpolationPayload {
            fact_id: a.fact_id.clone(),
            curve,
        }),
    );
    emit(&a.out.out, name, &report, None)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let report = read_report(&a.report)?;
    let lexicon = a.lexicon.as_ref().map(load_lexicon).transpose()?;
    let svg = match &report.payload {
        Payload::Lens(p) => {
            let opts = lens_options(lexicon.as_ref(), a.mask_flagged, a.layer_offset, p.generation.prompt.clone());
            render_lens_svg(&p.grid, &opts)?
        }
        Payload::Trace(p) => render_trace_svg(&p.grid, &p.prompt)?,
        Payload::Routing(p) => render_routing_bars(&p.report, "English routing")?,
        other => {
            return Err(Error::Report(format!("no figure for report kind {:?}", other.kind())));
        }
    };
    let path = a.svg.clone().unwrap_or_else(|| a.report.with_extension("svg"));
    write_svg(path, &svg)
}
