//! `ladderkit`: probe, encode, label, train, predict and evaluate bitrate
//! ladders from one command line.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 partial failure
//! (some sequences or jobs failed; everything that succeeded was written).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ladder_core::bd::{bd_quality, bd_rate, BDOptions, Interpolation};
use ladder_core::codec::{Codec, CodecAdapterConfig, CodecConfig, MockCodecConfig, SequenceSource};
use ladder_core::evaluation::{fixed_ladder, majority_ladder, run_study, FixedLadderConfig, StudyMethod, StudySequence};
use ladder_core::files::{read_json, write_json, LadderFile, RdDataset};
use ladder_core::hull::{build_ladder, class_histogram, histogram_csv, hull_curve, HullOptions, TieBreak};
use ladder_core::orchestrator::{
    assemble_surface, execute_plan, plan_jobs, probe_bounds, BoundsFile, Journal, OrchestratorError, SequenceBounds,
};
use ladder_core::seed::derive_seed_str;
use ladder_core::synthetic::{mock_two_step_surface, sample_content};
use ladder_core::{BitrateLadder, EncodingRecipe, RDCurve, RDPoint, RDSurface, Resolution};
use ladder_predictor::io::{load_model, read_features, save_model, ModelFile};
use ladder_predictor::{
    handcrafted_features, mock_frame_stats, predict_ladder, train, FeatureNormalizer, FeatureSequence, FocalLossConfig,
    FrameStats, TagrnConfig, TrainConfig,
};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "ladderkit", version, about = "Per-title bitrate ladder construction and prediction")]
pub struct Cli {
    /// Encoding recipe JSON (resolutions, target bitrates). Defaults to the
    /// built-in 7-resolution, 10-bitrate HEVC DASH recipe.
    #[arg(long, global = true)]
    pub recipe: Option<PathBuf>,
    /// Codec configuration JSON (`"kind": "mock"` or `"kind": "subprocess"`).
    #[arg(long, global = true)]
    pub codec_config: Option<PathBuf>,
    /// Scratch directory for encode jobs and the resume journal.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Maximum number of concurrent encode jobs / training threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Root seed; every random component derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory (depends on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe every resolution at QP 16 and QP 48 to find admissible bitrates.
    Probe(ProbeArgs),
    /// Run the CBR encodes admitted by the probe bounds; writes one RD dataset
    /// per sequence into --out.
    Encode(EncodeArgs),
    /// Build ground-truth ladders from RD datasets; writes ladders and a
    /// class histogram into --out.
    Label(LabelArgs),
    /// Train the resolution classifier; writes a model file to --out.
    Train(TrainArgs),
    /// Predict ladders for every feature file; writes ladders into --out.
    Predict(PredictArgs),
    /// Compare ladders against the hull of each RD dataset; writes a report
    /// into --out.
    Eval(EvalArgs),
    /// BD-Rate and BD-Quality between two curves.
    Bd(BdArgs),
    /// Generate a seeded mock corpus: manifest, mock codec config and
    /// per-frame statistics.
    MockGen(MockGenArgs),
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Sequence manifest JSON: a list of {sequence_id, path, width, height, fps}.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Bounds file written by `probe`.
    #[arg(long)]
    pub bounds: PathBuf,
    /// Quality metric name stored in the RD datasets.
    #[arg(long, default_value = "vmaf")]
    pub metric: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TieArg {
    Lowest,
    Highest,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Directory of `*.rd.json` datasets.
    #[arg(long)]
    pub rd_dir: PathBuf,
    /// Which resolution wins an exact quality tie.
    #[arg(long, value_enum, default_value = "lowest")]
    pub tie_break: TieArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `<id>.tagf` feature files or `<id>.frames.json` frame statistics.
    #[arg(long)]
    pub features_dir: PathBuf,
    /// Directory of `<id>.ladder.json` ground-truth ladders.
    #[arg(long)]
    pub labels_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 512)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.25)]
    pub dropout: f64,
    /// Scale attention logits by 1/sqrt(D/heads) instead of 1/sqrt(D).
    #[arg(long)]
    pub per_head_scale: bool,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Focal loss focusing parameter.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Weight classes by inverse training frequency instead of uniformly.
    #[arg(long)]
    pub inverse_frequency_alpha: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `*.rd.json` datasets of the evaluated sequences.
    #[arg(long)]
    pub rd_dir: PathBuf,
    /// Ground-truth ladders; built from the RD datasets when omitted.
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
    /// A method to evaluate, as `name=directory-of-ladders`. Repeatable.
    #[arg(long = "method", value_name = "NAME=DIR")]
    pub methods: Vec<String>,
    /// Also evaluate the fixed ladder (built-in mapping unless --fixed-config is given).
    #[arg(long)]
    pub fixed: bool,
    #[arg(long)]
    pub fixed_config: Option<PathBuf>,
    /// Also evaluate the per-bitrate majority ladder of these training labels.
    #[arg(long, value_name = "LABELS_DIR")]
    pub majority_from: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pchip")]
    pub interpolation: InterpolationArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpolationArg {
    Pchip,
    Cubic,
}

impl From<InterpolationArg> for Interpolation {
    fn from(v: InterpolationArg) -> Self {
        match v {
            InterpolationArg::Pchip => Interpolation::PiecewiseCubicHermite,
            InterpolationArg::Cubic => Interpolation::CubicPolynomial,
        }
    }
}

#[derive(Debug, Args)]
pub struct BdArgs {
    /// Test curve: JSON list of {rate_kbps, quality}, or a ladder file with --rd.
    #[arg(long)]
    pub test: PathBuf,
    /// Reference curve: same format as --test; with --rd, defaults to the hull.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// RD dataset; makes --test and --reference ladder files.
    #[arg(long)]
    pub rd: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pchip")]
    pub interpolation: InterpolationArg,
}

#[derive(Debug, Args)]
pub struct MockGenArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Sequence id prefix.
    #[arg(long, default_value = "mock")]
    pub prefix: String,
    /// Measurement noise of the mock encoder.
    #[arg(long, default_value_t = 0.3)]
    pub noise_scale: f64,
    /// Frames of statistics written per sequence.
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    /// Also write two-step RD datasets under `rd/`, skipping probe and encode.
    #[arg(long)]
    pub with_surfaces: bool,
}

/// How a command failed.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid inputs. Exit code 1.
    Config(anyhow::Error),
    /// Some work items failed; the rest was written. Exit code 2.
    Partial(Vec<String>),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e:#}"),
            CliError::Partial(items) => write!(f, "{} item(s) failed:\n  {}", items.len(), items.join("\n  ")),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Config(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Partial(_) => 2,
        }
    }
}

type CmdResult = Result<(), CliError>;

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

pub fn execute(cli: &Cli) -> CmdResult {
    if cli.workers == 0 {
        return Err(anyhow!("--workers must be at least 1").into());
    }
    match &cli.command {
        Command::Probe(a) => cmd_probe(cli, a),
        Command::Encode(a) => cmd_encode(cli, a),
        Command::Label(a) => cmd_label(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Bd(a) => cmd_bd(cli, a),
        Command::MockGen(a) => cmd_mock_gen(cli, a),
    }
}

fn out_path(cli: &Cli) -> anyhow::Result<&Path> {
    cli.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
}

fn load_recipe(cli: &Cli) -> anyhow::Result<EncodingRecipe> {
    let recipe = match &cli.recipe {
        Some(path) => read_json::<EncodingRecipe>(path)?,
        None => EncodingRecipe::dash_hevc(),
    };
    recipe.validate().map_err(|r| anyhow!("invalid recipe: {r}"))?;
    Ok(recipe)
}

fn load_manifest(path: &Path) -> anyhow::Result<Vec<SequenceSource>> {
    let manifest: Vec<SequenceSource> = read_json(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for s in &manifest {
        if !seen.insert(&s.sequence_id) {
            bail!("{}: duplicate sequence_id {}", path.display(), s.sequence_id);
        }
        if s.width == 0 || s.height == 0 || !(s.fps > 0.0) {
            bail!("{}: sequence {} has invalid geometry or frame rate", path.display(), s.sequence_id);
        }
    }
    Ok(manifest)
}

fn find_program(program: &str) -> bool {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}

/// Every configured template must name a program that exists.
fn check_programs(cfg: &CodecAdapterConfig) -> anyhow::Result<()> {
    let templates = [
        ("encode_command_template", Some(cfg.encode_command_template.as_str())),
        ("cqp_command_template", cfg.cqp_command_template.as_deref()),
        ("upscale_command_template", Some(cfg.upscale_command_template.as_str()).filter(|t| !t.is_empty())),
        ("quality_command_template", Some(cfg.quality_command_template.as_str())),
        ("probe_command_template", cfg.probe_command_template.as_deref()),
    ];
    for (name, template) in templates {
        let Some(template) = template else { continue };
        let words = shell_words::split(template).with_context(|| format!("{name} cannot be parsed"))?;
        let program = words.first().ok_or_else(|| anyhow!("{name} is empty"))?;
        if !find_program(program) {
            bail!("{name}: program `{program}` not found");
        }
    }
    Ok(())
}

fn load_codec(cli: &Cli) -> anyhow::Result<Box<dyn Codec>> {
    let path = cli.codec_config.as_deref().ok_or_else(|| anyhow!("--codec-config is required for this command"))?;
    let mut config: CodecConfig = read_json(path)?;
    if let CodecConfig::Subprocess(cfg) = &mut config {
        if let Some(workdir) = &cli.workdir {
            cfg.workdir = workdir.clone();
        }
        cfg.validate().with_context(|| format!("{}", path.display()))?;
        check_programs(cfg).with_context(|| format!("{}", path.display()))?;
    }
    config.build().with_context(|| format!("{}", path.display()))
}

fn cmd_probe(cli: &Cli, args: &ProbeArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let manifest = load_manifest(&args.manifest)?;
    let codec = load_codec(cli)?;
    let mut file = BoundsFile::default();
    let mut failed = Vec::new();
    for source in &manifest {
        let (bounds, failures) = match probe_bounds(source, &recipe, codec.as_ref()) {
            Ok(b) => (b, Vec::new()),
            Err(OrchestratorError::Probe { failures, partial }) => {
                (partial, failures.iter().map(|(r, e)| format!("{r}: {e}")).collect())
            }
            Err(e) => (Vec::new(), vec![e.to_string()]),
        };
        for f in &failures {
            failed.push(format!("{}: {f}", source.sequence_id));
        }
        file.sequences.push(SequenceBounds { sequence_id: source.sequence_id.clone(), bounds, failures });
    }
    write_json(out, &file).map_err(anyhow::Error::from)?;
    info!("probed {} sequences into {}", manifest.len(), out.display());
    partial(failed)
}

fn partial(failed: Vec<String>) -> CmdResult {
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Partial(failed))
    }
}

fn cmd_encode(cli: &Cli, args: &EncodeArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let manifest = load_manifest(&args.manifest)?;
    let bounds: BoundsFile = read_json(&args.bounds).map_err(anyhow::Error::from)?;
    let codec = load_codec(cli)?;
    let sources: BTreeMap<String, SequenceSource> =
        manifest.into_iter().map(|s| (s.sequence_id.clone(), s)).collect();

    let mut failed = Vec::new();
    let mut jobs = Vec::new();
    let mut planned = Vec::new();
    for entry in &bounds.sequences {
        if !sources.contains_key(&entry.sequence_id) {
            return Err(anyhow!("bounds mention {} which is not in the manifest", entry.sequence_id).into());
        }
        if !entry.failures.is_empty() {
            failed.push(format!("{}: probe failed, not encoded", entry.sequence_id));
            continue;
        }
        match plan_jobs(&entry.sequence_id, &entry.bounds, &recipe) {
            Ok(j) => {
                planned.push(entry.sequence_id.clone());
                jobs.extend(j);
            }
            Err(e) => failed.push(format!("{}: {e}", entry.sequence_id)),
        }
    }

    let journal_path = cli.workdir.as_deref().unwrap_or(out).join("journal.jsonl");
    let mut journal = Journal::open(&journal_path).map_err(anyhow::Error::from)?;
    let report = execute_plan(&jobs, &sources, codec.as_ref(), cli.workers, Some(&mut journal))
        .map_err(anyhow::Error::from)?;
    if report.resumed > 0 {
        info!("resumed {} jobs from {}", report.resumed, journal_path.display());
    }
    let mut by_seq: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for (job, point) in &report.results {
        by_seq.entry(job.sequence_id.as_str()).or_default().push((job.clone(), *point));
    }
    let failed_seqs: std::collections::BTreeSet<&str> =
        report.failures.iter().map(|f| f.job_id.split('/').next().unwrap_or("")).collect();
    for f in &report.failures {
        failed.push(format!("{}: {}", f.job_id, f.message));
    }
    for id in &planned {
        if failed_seqs.contains(id.as_str()) {
            continue;
        }
        let results = by_seq.remove(id.as_str()).unwrap_or_default();
        match assemble_surface(id, &args.metric, &recipe, &results) {
            Ok(surface) => {
                let path = out.join(format!("{id}.rd.json"));
                write_json(&path, &RdDataset::from_surface(&surface, &recipe)).map_err(anyhow::Error::from)?;
            }
            Err(e) => failed.push(format!("{id}: {e}")),
        }
    }
    partial(failed)
}

/// `*.<suffix>` files of a directory, sorted by name, keyed by the stem
/// before the suffix.
fn files_with_suffix(dir: &Path, suffix: &str) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(stem) = name.strip_suffix(suffix) {
            found.push((stem.to_string(), path.clone()));
        }
    }
    found.sort();
    Ok(found)
}

fn load_surfaces(dir: &Path, recipe: &EncodingRecipe) -> anyhow::Result<Vec<RDSurface>> {
    let mut out = Vec::new();
    for (_, path) in files_with_suffix(dir, ".rd.json")? {
        let (surface, file_recipe) = RdDataset::load(&path)?;
        if &file_recipe != recipe {
            bail!("{} was produced under a different recipe", path.display());
        }
        out.push(surface);
    }
    if out.is_empty() {
        bail!("no *.rd.json files in {}", dir.display());
    }
    Ok(out)
}

fn load_ladders(dir: &Path, recipe: &EncodingRecipe) -> anyhow::Result<BTreeMap<String, BitrateLadder>> {
    let mut out = BTreeMap::new();
    for (_, path) in files_with_suffix(dir, ".ladder.json")? {
        let (id, ladder) = LadderFile::load(&path, recipe)?;
        out.insert(id, ladder);
    }
    Ok(out)
}

fn cmd_label(cli: &Cli, args: &LabelArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let options = HullOptions {
        tie_break: match args.tie_break {
            TieArg::Lowest => TieBreak::LowestResolution,
            TieArg::Highest => TieBreak::HighestResolution,
        },
        ..Default::default()
    };
    let mut ladders = Vec::new();
    let mut failed = Vec::new();
    for surface in load_surfaces(&args.rd_dir, &recipe)? {
        match build_ladder(&surface, &recipe, options) {
            Ok(ladder) => {
                let path = out.join(format!("{}.ladder.json", surface.sequence_id));
                write_json(&path, &LadderFile::new(surface.sequence_id.clone(), &ladder)).map_err(anyhow::Error::from)?;
                ladders.push(ladder);
            }
            Err(e) => failed.push(format!("{}: {e}", surface.sequence_id)),
        }
    }
    let counts = class_histogram(&ladders, &recipe).map_err(anyhow::Error::from)?;
    let path = out.join("histogram.csv");
    fs::write(&path, histogram_csv(&counts, &recipe)).with_context(|| format!("cannot write {}", path.display()))?;
    partial(failed)
}

/// Features for `id`: a `.tagf` file, else frame statistics run through the
/// handcrafted extractor.
fn load_feature(dir: &Path, id: &str, config: &TagrnConfig) -> anyhow::Result<FeatureSequence> {
    let tagf = dir.join(format!("{id}.tagf"));
    let seq = if tagf.exists() {
        read_features(&tagf)?
    } else {
        let stats_path = dir.join(format!("{id}.frames.json"));
        if !stats_path.exists() {
            bail!("no features for {id} in {}", dir.display());
        }
        let stats: Vec<FrameStats> = read_json(&stats_path)?;
        handcrafted_features(id, &stats, config)?
    };
    if seq.dim() != config.feature_dim {
        bail!("features of {id} are {} wide, the model expects {}", seq.dim(), config.feature_dim);
    }
    Ok(seq)
}

fn feature_ids(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut ids: Vec<String> = files_with_suffix(dir, ".tagf")?
        .into_iter()
        .chain(files_with_suffix(dir, ".frames.json")?)
        .map(|(id, _)| id)
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn thread_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let config = TagrnConfig {
        t_frames: args.frames,
        feature_dim: args.feature_dim,
        heads: args.heads,
        gru_layers: args.layers,
        gru_hidden: args.hidden,
        dropout_p: args.dropout,
        tasks_b: recipe.num_bitrates(),
        classes_r: recipe.num_resolutions(),
        per_head_scale: args.per_head_scale,
        attention_bias: true,
    };
    config.validate().map_err(anyhow::Error::from)?;
    let labels = load_ladders(&args.labels_dir, &recipe)?;
    if labels.is_empty() {
        return Err(anyhow!("no *.ladder.json files in {}", args.labels_dir.display()).into());
    }
    let raw: Vec<(FeatureSequence, BitrateLadder)> = labels
        .iter()
        .map(|(id, ladder)| Ok((load_feature(&args.features_dir, id, &config)?, ladder.clone())))
        .collect::<anyhow::Result<_>>()?;
    let normalizer = FeatureNormalizer::fit(&raw.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>())
        .map_err(anyhow::Error::from)?;
    let data: Vec<(FeatureSequence, BitrateLadder)> = raw
        .into_iter()
        .map(|(f, l)| Ok((normalizer.apply(&f)?, l)))
        .collect::<Result<_, ladder_predictor::PredictorError>>()
        .map_err(anyhow::Error::from)?;

    let tc = TrainConfig {
        epochs: args.epochs,
        lr_initial: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        seed: derive_seed_str(cli.seed, "train"),
    };
    let fl = if args.inverse_frequency_alpha {
        let ladders: Vec<BitrateLadder> = data.iter().map(|(_, l)| l.clone()).collect();
        FocalLossConfig::inverse_frequency(&class_histogram(&ladders, &recipe).map_err(anyhow::Error::from)?, args.gamma)
    } else {
        FocalLossConfig { gamma: args.gamma, alpha: vec![1.0; recipe.num_resolutions()] }
    };
    let (params, history) = thread_pool(cli.workers)?
        .install(|| train(&data, &config, &tc, &fl))
        .map_err(anyhow::Error::from)?;
    let model = ModelFile { config, seed: tc.seed, normalizer: Some(normalizer), params };
    save_model(out, &model).map_err(anyhow::Error::from)?;
    write_json(&out.with_extension("history.json"), &history).map_err(anyhow::Error::from)?;
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let model = load_model(&args.model).map_err(anyhow::Error::from)?;
    if (model.config.tasks_b, model.config.classes_r) != (recipe.num_bitrates(), recipe.num_resolutions()) {
        return Err(anyhow!("model predicts {}×{} classes, recipe is {}×{}", model.config.tasks_b, model.config.classes_r, recipe.num_bitrates(), recipe.num_resolutions()).into());
    }
    let ids = feature_ids(&args.features_dir)?;
    if ids.is_empty() {
        return Err(anyhow!("no feature files in {}", args.features_dir.display()).into());
    }
    let mut failed = Vec::new();
    for id in ids {
        let result = load_feature(&args.features_dir, &id, &model.config).and_then(|f| {
            let f = match &model.normalizer {
                Some(n) => n.apply(&f)?,
                None => f,
            };
            Ok(predict_ladder(f.values.view(), &model.params, &model.config, &recipe)?)
        });
        match result {
            Ok(ladder) => {
                write_json(&out.join(format!("{id}.ladder.json")), &LadderFile::new(id.clone(), &ladder))
                    .map_err(anyhow::Error::from)?;
            }
            Err(e) => failed.push(format!("{id}: {e:#}")),
        }
    }
    partial(failed)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    let surfaces = load_surfaces(&args.rd_dir, &recipe)?;
    let truth = match &args.labels_dir {
        Some(dir) => load_ladders(dir, &recipe)?,
        None => BTreeMap::new(),
    };
    let mut sequences = Vec::new();
    for surface in surfaces {
        let ground_truth = match truth.get(&surface.sequence_id) {
            Some(l) => l.clone(),
            None => build_ladder(&surface, &recipe, HullOptions::default())
                .with_context(|| format!("no usable ground truth for {}", surface.sequence_id))?,
        };
        sequences.push(StudySequence { surface, ground_truth });
    }
    let ids: Vec<String> = sequences.iter().map(|s| s.surface.sequence_id.clone()).collect();
    let constant = |name: &str, ladder: BitrateLadder| StudyMethod {
        name: name.to_string(),
        ladders: ids.iter().map(|id| (id.clone(), ladder.clone())).collect(),
    };

    let mut methods = Vec::new();
    for spec in &args.methods {
        let (name, dir) = spec.split_once('=').ok_or_else(|| anyhow!("--method expects NAME=DIR, got {spec}"))?;
        methods.push(StudyMethod { name: name.to_string(), ladders: load_ladders(Path::new(dir), &recipe)? });
    }
    if args.fixed {
        let mapping = match &args.fixed_config {
            Some(p) => read_json::<FixedLadderConfig>(p).map_err(anyhow::Error::from)?,
            None => FixedLadderConfig::default(),
        };
        methods.push(constant("fixed", fixed_ladder(&recipe, &mapping).map_err(anyhow::Error::from)?));
    }
    if let Some(dir) = &args.majority_from {
        let train: Vec<BitrateLadder> = load_ladders(dir, &recipe)?.into_values().collect();
        let hist = class_histogram(&train, &recipe).map_err(anyhow::Error::from)?;
        methods.push(constant("majority", majority_ladder(&hist, &recipe).map_err(anyhow::Error::from)?));
    }
    if methods.is_empty() {
        return Err(anyhow!("nothing to evaluate: pass --method, --fixed or --majority-from").into());
    }
    let options = BDOptions { interpolation: args.interpolation.into(), ..Default::default() };
    let report = run_study(&recipe, &sequences, &methods, &options);
    let write = |name: &str, text: String| -> anyhow::Result<()> {
        let path = out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    };
    write("report.json", report.to_json())?;
    write("rows.csv", report.rows_csv())?;
    for id in &ids {
        if let Some(csv) = report.plot_csv(id) {
            write(&format!("plots/{id}.csv"), csv)?;
        }
    }
    for s in &report.summary {
        info!("{}: mean BD-Quality {:?}, accuracy {:?}", s.method, s.mean_bd_quality, s.accuracy);
    }
    Ok(())
}

/// One point of a curve file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate_kbps: f64,
    pub quality: f64,
}

#[derive(Debug, Serialize)]
struct BdReport {
    bd_rate_percent: Option<f64>,
    bd_quality: Option<f64>,
    failures: Vec<String>,
}

fn load_curve(path: &Path) -> anyhow::Result<RDCurve> {
    let pts: Vec<CurvePoint> = read_json(path)?;
    let placeholder = Resolution::new(1, 1);
    let points = pts
        .iter()
        .enumerate()
        .map(|(i, p)| RDPoint {
            resolution: placeholder,
            target_bitrate_kbps: i as u32 + 1,
            actual_bitrate_kbps: p.rate_kbps,
            quality: p.quality,
        })
        .collect();
    RDCurve::composite(points).with_context(|| format!("{}", path.display()))
}

fn cmd_bd(cli: &Cli, args: &BdArgs) -> CmdResult {
    let options = BDOptions { interpolation: args.interpolation.into(), ..Default::default() };
    let (test, reference) = match &args.rd {
        Some(rd) => {
            let (surface, recipe) = RdDataset::load(rd).map_err(anyhow::Error::from)?;
            let curve_of = |path: &Path| -> anyhow::Result<RDCurve> {
                let (_, ladder) = LadderFile::load(path, &recipe)?;
                Ok(hull_curve(&surface, &ladder)?)
            };
            let test = curve_of(&args.test)?;
            let reference = match &args.reference {
                Some(p) => curve_of(p)?,
                None => {
                    let truth = build_ladder(&surface, &recipe, HullOptions::default()).map_err(anyhow::Error::from)?;
                    hull_curve(&surface, &truth).map_err(anyhow::Error::from)?
                }
            };
            (test, reference)
        }
        None => {
            let reference = args.reference.as_deref().ok_or_else(|| anyhow!("--reference is required without --rd"))?;
            (load_curve(&args.test)?, load_curve(reference)?)
        }
    };
    // each metric can fail on its own (BD-Rate needs rate monotone in quality)
    let mut failures = Vec::new();
    let mut metric = |name: &str, r: Result<f64, ladder_core::bd::BdError>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            failures.push(format!("{name}: {e}"));
            None
        }
    };
    let result = BdReport {
        bd_rate_percent: metric("bd_rate", bd_rate(&test, &reference, &options)),
        bd_quality: metric("bd_quality", bd_quality(&test, &reference, &options)),
        failures,
    };
    let text = serde_json::to_string_pretty(&result).expect("BD report");
    match &cli.out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{text}"),
    }
    match (result.bd_rate_percent, result.bd_quality) {
        (None, None) => Err(anyhow!("neither metric is defined: {}", result.failures.join("; ")).into()),
        (Some(_), Some(_)) => Ok(()),
        _ => Err(CliError::Partial(result.failures)),
    }
}

fn cmd_mock_gen(cli: &Cli, args: &MockGenArgs) -> CmdResult {
    let out = out_path(cli)?;
    let recipe = load_recipe(cli)?;
    if !(args.noise_scale >= 0.0) || args.count == 0 || args.frames == 0 {
        return Err(anyhow!("--count and --frames must be positive and --noise-scale ≥ 0").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cli.seed, "mock-gen"));
    let mut codec = MockCodecConfig::default();
    let mut manifest = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let id = format!("{}{i:04}", args.prefix);
        let params = sample_content(&mut rng, args.noise_scale);
        let stats = mock_frame_stats(&params, args.frames, params.seed);
        write_json(&out.join("frames").join(format!("{id}.frames.json")), &stats).map_err(anyhow::Error::from)?;
        if args.with_surfaces {
            let surface = mock_two_step_surface(&id, &params, &codec.constants, &recipe).map_err(anyhow::Error::from)?;
            write_json(&out.join("rd").join(format!("{id}.rd.json")), &RdDataset::from_surface(&surface, &recipe))
                .map_err(anyhow::Error::from)?;
        }
        codec.sequences.insert(id.clone(), params);
        manifest.push(SequenceSource {
            sequence_id: id.clone(),
            path: format!("mock://{id}").into(),
            width: 1920,
            height: 1080,
            fps: 24.0,
            frames: Some(args.frames as u64),
        });
    }
    write_json(&out.join("manifest.json"), &manifest).map_err(anyhow::Error::from)?;
    write_json(&out.join("codec.json"), &CodecConfig::Mock(codec)).map_err(anyhow::Error::from)?;
    if args.noise_scale > 0.0 {
        warn!("mock encoder noise is on (scale {}); rate deviations may be logged", args.noise_scale);
    }
    Ok(())
}
