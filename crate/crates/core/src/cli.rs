//! Command-line front end. Every JSON output embeds the exact arguments of
//! the subcommand that produced it; `--threads` is deliberately left out so
//! that outputs do not depend on it.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{self, AnnotationManifest, Taxonomy};
use crate::divergence::{self, ActivityMetric, DivergenceConfig};
use crate::dre::{self, DreTrainConfig, RatioModel};
use crate::ensemble;
use crate::eval::{self, EvalCase, PoolMethod};
use crate::labels::{self, ConceptHypothesis};
use crate::sae::{self, EncodeMode, SaeTrainConfig};
use crate::store::{self, EmbeddingMatrix, ReadOptions};
use crate::synth::{self, SynthConfig};
use crate::text_table::TextEmbeddingTable;
use crate::Direction;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "latcmp", version, about = "Compare two embedding datasets and rank the concepts missing from each")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "subcommand", content = "args")]
pub enum Command {
    /// Rank SAE neurons by activation divergence and label the top ones.
    Diff(DiffArgs),
    /// Train a TopK sparse autoencoder on one or more LDIF matrices.
    SaeTrain(SaeTrainArgs),
    /// Encode an LDIF matrix into dense SAE activations (LDIF).
    SaeEncode(SaeEncodeArgs),
    /// Train the logistic density-ratio head on A versus B.
    DreTrain(DreTrainArgs),
    /// Retrieve the most discriminative samples of each side.
    DreContrast(DreContrastArgs),
    /// Merge a diff report with DRE hypotheses.
    Combine(CombineArgs),
    /// Build one benchmark split from an annotation manifest.
    BenchMake(BenchMakeArgs),
    /// List eligible attribute pairs of a parent label.
    BenchEnumerate(BenchEnumerateArgs),
    /// Relabel a manifest to taxonomy ancestors at a cut depth.
    TaxonomyGroup(TaxonomyGroupArgs),
    /// Score candidate sets against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic pair of datasets with a planted concept.
    Synth(SynthArgs),
    /// Check one or two LDIF matrices.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodeKind {
    Sample,
    Batch,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    Mean,
    NonzeroFrequency,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeOpts {
    /// TopK per sample or across each block of rows.
    #[arg(long, value_enum, default_value = "sample")]
    pub encode_mode: EncodeKind,
    /// Block size for batch encoding.
    #[arg(long, default_value_t = 256)]
    pub batch_rows: usize,
}

impl EncodeOpts {
    fn mode(&self) -> EncodeMode {
        match self.encode_mode {
            EncodeKind::Sample => EncodeMode::SampleTopk,
            EncodeKind::Batch => EncodeMode::BatchTopk {
                batch_rows: self.batch_rows,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DiffArgs {
    /// Dataset A (LDIF).
    #[arg(long)]
    pub a: PathBuf,
    /// Dataset B (LDIF).
    #[arg(long)]
    pub b: PathBuf,
    /// SAE weight prefix.
    #[arg(long)]
    pub sae: PathBuf,
    /// Vocabulary embedding table.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Per-neuron monosemanticity scores (`neuron<TAB>score`).
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// Fraction of neurons kept by monosemanticity score.
    #[arg(long, default_value_t = 0.5)]
    pub mono_keep: f64,
    /// Fraction of most active neurons pruned.
    #[arg(long, default_value_t = 0.10)]
    pub prune_frac: f64,
    /// Activity measure used for pruning.
    #[arg(long, value_enum, default_value = "mean")]
    pub activity: Activity,
    /// Neurons reported per direction.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Vocabulary words per neuron.
    #[arg(long, default_value_t = labels::DEFAULT_WORDS)]
    pub n_words: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeOpts,
    /// Report path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SaeTrainArgs {
    /// Training matrices; rows are concatenated in the given order.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Dictionary size over input dims.
    #[arg(long, default_value_t = 4)]
    pub expansion: usize,
    /// Active neurons per sample.
    #[arg(long, default_value_t = 20)]
    pub topk: usize,
    /// L1 weight on the codes.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Select activations with BatchTopK during training.
    #[arg(long)]
    pub batch_topk: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output weight prefix; a training log is written to `<out>.train.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SaeEncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// SAE weight prefix.
    #[arg(long)]
    pub sae: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeOpts,
    /// Output LDIF of dense activations; the run record goes to `<out>.run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DreTrainArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model path (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DreContrastArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Model written by `dre-train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Samples retrieved per side.
    #[arg(long, default_value_t = dre::DEFAULT_CONTRAST_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CombineArgs {
    /// Report written by `diff`.
    #[arg(long)]
    pub report: PathBuf,
    /// DRE hypothesis file: JSON list of `{direction, text, rank}`.
    #[arg(long)]
    pub hypotheses: Option<PathBuf>,
    /// SAE hypotheses kept per direction.
    #[arg(long, default_value_t = ensemble::DEFAULT_P)]
    pub p: usize,
    /// DRE hypotheses kept per direction.
    #[arg(long, default_value_t = ensemble::DEFAULT_Q)]
    pub q: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchMakeArgs {
    /// JSON-lines manifest of `{"id", "labels"}` records.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub parent: String,
    #[arg(long)]
    pub attr_a: String,
    #[arg(long)]
    pub attr_b: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchEnumerateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub parent: String,
    /// Minimum images an attribute must share with the parent.
    #[arg(long, default_value_t = bench::DEFAULT_MIN_MIX)]
    pub min_mix: usize,
    /// Minimum images carrying the parent.
    #[arg(long, default_value_t = bench::DEFAULT_MIN_PARENT)]
    pub min_parent: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TaxonomyGroupArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON-lines taxonomy of `{"child", "parent"}` edges.
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Deepest ancestor depth kept (roots are depth 0).
    #[arg(long)]
    pub cut_depth: usize,
    /// Output manifest (JSON lines); the run record goes to `<out>.run.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// JSON list of cases `{split_id, group, direction, truth, scarcity, candidates}`.
    #[arg(long)]
    pub cases: PathBuf,
    /// Text embedding table covering every truth and candidate phrase.
    #[arg(long)]
    pub table: PathBuf,
    /// Coverage thresholds (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub thresholds: Vec<f64>,
    /// Aggregation of per-group scarcity correlations.
    #[arg(long, value_enum, default_value = "fisher-z")]
    pub pool: PoolMethod,
    /// Coverage curve CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub dims: usize,
    /// Rows per side.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub n_concepts: usize,
    #[arg(long, default_value_t = 0)]
    pub planted: usize,
    /// Fraction of A rows carrying the planted concept.
    #[arg(long, default_value_t = 0.05)]
    pub prevalence: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving a.ldif, b.ldif, truth.json and vocab.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Marks an error caused by invalid input (exit code 2).
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

trait InputExt<T> {
    fn input(self, what: &str) -> anyhow::Result<T>;
}

impl<T, E: std::fmt::Display> InputExt<T> for std::result::Result<T, E> {
    fn input(self, what: &str) -> anyhow::Result<T> {
        self.map_err(|e| anyhow::Error::new(Invalid(format!("{what}: {e}"))))
    }
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<Invalid>()) {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    run_config: &'a Command,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, run_config: &Command, body: T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&Output { run_config, body })? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_matrix(path: &Path, flag: &str) -> anyhow::Result<EmbeddingMatrix> {
    store::read_matrix(path).input(&format!("--{flag} {}", path.display()))
}

fn load_pair(a: &Path, b: &Path) -> anyhow::Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let (a, b) = (load_matrix(a, "a")?, load_matrix(b, "b")?);
    let report = store::validate_pair(&a, &b);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if !report.is_ok() {
        return Err(invalid(format!("validation failed: {}", report.fatal.join("; "))));
    }
    Ok((a, b))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = &cli.command;
    match cfg {
        Command::Diff(a) => diff(cfg, a),
        Command::SaeTrain(a) => sae_train(cfg, a),
        Command::SaeEncode(a) => sae_encode(cfg, a),
        Command::DreTrain(a) => dre_train(cfg, a),
        Command::DreContrast(a) => dre_contrast(cfg, a),
        Command::Combine(a) => combine(cfg, a),
        Command::BenchMake(a) => bench_make(cfg, a),
        Command::BenchEnumerate(a) => bench_enumerate(cfg, a),
        Command::TaxonomyGroup(a) => taxonomy_group(cfg, a),
        Command::Eval(a) => eval_cmd(cfg, a),
        Command::Synth(a) => synth_cmd(cfg, a),
        Command::Validate(a) => validate(cfg, a),
    }
}

#[derive(Serialize)]
struct DiffReport {
    neuron_scores: Vec<divergence::NeuronScore>,
    hypotheses_a: Vec<ConceptHypothesis>,
    hypotheses_b: Vec<ConceptHypothesis>,
}

fn diff(cfg: &Command, args: &DiffArgs) -> anyhow::Result<()> {
    let (a, b) = load_pair(&args.a, &args.b)?;
    let model = sae::load_sae(&args.sae).input(&format!("--sae {}", args.sae.display()))?;
    let vocab = TextEmbeddingTable::read(&args.vocab).input(&format!("--vocab {}", args.vocab.display()))?;
    if vocab.dims() != model.d() {
        return Err(invalid(format!("--vocab has dims {}, SAE expects {}", vocab.dims(), model.d())));
    }
    if a.cols() != model.d() {
        return Err(invalid(format!("--a has dims {}, SAE expects {}", a.cols(), model.d())));
    }
    let mono = match &args.mono {
        Some(p) => Some(divergence::read_mono_scores(p, model.k()).input(&format!("--mono {}", p.display()))?),
        None => None,
    };
    let za = sae::encode_batch(&a, &model, args.encode.mode()).context("encoding A")?;
    let zb = sae::encode_batch(&b, &model, args.encode.mode()).context("encoding B")?;
    let dcfg = DivergenceConfig {
        mono_keep: args.mono_keep,
        prune_frac: args.prune_frac,
        activity: match args.activity {
            Activity::Mean => ActivityMetric::Mean,
            Activity::NonzeroFrequency => ActivityMetric::NonzeroFrequency,
        },
    };
    let scores = divergence::neuron_divergences(&za, &zb, mono.as_deref(), &dcfg).input("divergence")?;
    let label = |dir| -> anyhow::Result<Vec<ConceptHypothesis>> {
        let ranked = divergence::rank_biased(&scores, dir, args.top_k);
        labels::label_ranked(&model, &vocab, &ranked, dir, args.n_words).context("labelling")
    };
    let report = DiffReport {
        hypotheses_a: label(Direction::A)?,
        hypotheses_b: label(Direction::B)?,
        neuron_scores: scores,
    };
    write_json(&args.out, cfg, report)
}

#[derive(Serialize)]
struct TrainLog {
    d: usize,
    k: usize,
    loss_trace: Vec<f64>,
}

fn sae_train(cfg: &Command, args: &SaeTrainArgs) -> anyhow::Result<()> {
    let mut matrix: Option<EmbeddingMatrix> = None;
    for p in &args.input {
        let m = load_matrix(p, "input")?;
        m.check_finite().input(&format!("--input {}", p.display()))?;
        matrix = Some(match matrix {
            None => m,
            Some(acc) => acc.concat(&m).input("--input")?,
        });
    }
    let matrix = matrix.ok_or_else(|| invalid("--input is required"))?;
    let config = SaeTrainConfig {
        expansion: args.expansion,
        topk: args.topk,
        lambda_sparsity: args.lambda,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        batch_topk: args.batch_topk,
        seed: args.seed,
    };
    let trained = match sae::train_sae(&matrix, &config) {
        Err(e @ crate::Error::Diverged { .. }) => return Err(anyhow!(e).context("sae training")),
        r => r.input("sae training")?,
    };
    sae::save_sae(&trained.model, &args.out).context("writing SAE weights")?;
    let mut log_path = args.out.as_os_str().to_owned();
    log_path.push(".train.json");
    write_json(
        Path::new(&log_path),
        cfg,
        TrainLog {
            d: trained.model.d(),
            k: trained.model.k(),
            loss_trace: trained.loss_trace,
        },
    )
}

#[derive(Serialize)]
struct EncodeOut {
    rows: usize,
    neurons: usize,
    nnz: usize,
}

fn sae_encode(cfg: &Command, args: &SaeEncodeArgs) -> anyhow::Result<()> {
    let m = load_matrix(&args.input, "input")?;
    let model = sae::load_sae(&args.sae).input(&format!("--sae {}", args.sae.display()))?;
    let z = sae::encode_batch(&m, &model, args.encode.mode()).input("encoding")?;
    let dense = EmbeddingMatrix::new(m.ids().clone(), z.neurons(), z.to_dense()).context("assembling activations")?;
    store::write_matrix(&args.out, &dense).context("writing activations")?;
    let mut run_path = args.out.as_os_str().to_owned();
    run_path.push(".run.json");
    write_json(
        Path::new(&run_path),
        cfg,
        EncodeOut {
            rows: z.rows(),
            neurons: z.neurons(),
            nnz: z.nnz(),
        },
    )
}

#[derive(Serialize)]
struct DreModelFile<'a> {
    model: &'a RatioModel,
}

fn dre_train(cfg: &Command, args: &DreTrainArgs) -> anyhow::Result<()> {
    let (a, b) = load_pair(&args.a, &args.b)?;
    let config = DreTrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        l2: args.l2,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let model = match dre::train_ratio(&a, &b, &config) {
        Err(e @ crate::Error::Diverged { .. }) => return Err(anyhow!(e).context("dre training")),
        r => r.input("dre training")?,
    };
    write_json(&args.out, cfg, DreModelFile { model: &model })
}

fn load_ratio_model(path: &Path) -> anyhow::Result<RatioModel> {
    let what = format!("--model {}", path.display());
    let text = std::fs::read_to_string(path).input(&what)?;
    let mut value: serde_json::Value = serde_json::from_str(&text).input(&what)?;
    if let Some(inner) = value.get_mut("model") {
        value = inner.take();
    }
    serde_json::from_value(value).input(&what)
}

fn dre_contrast(cfg: &Command, args: &DreContrastArgs) -> anyhow::Result<()> {
    let (a, b) = load_pair(&args.a, &args.b)?;
    let model = load_ratio_model(&args.model)?;
    let set = dre::top_contrast(&model, &a, &b, args.k).input("contrast")?;
    write_json(&args.out, cfg, set)
}

#[derive(serde::Deserialize)]
struct DiffReportIn {
    hypotheses_a: Vec<ConceptHypothesis>,
    hypotheses_b: Vec<ConceptHypothesis>,
}

#[derive(Serialize)]
struct Combined {
    a: ensemble::CandidateSet,
    b: ensemble::CandidateSet,
}

fn combine(cfg: &Command, args: &CombineArgs) -> anyhow::Result<()> {
    let what = format!("--report {}", args.report.display());
    let text = std::fs::read_to_string(&args.report).input(&what)?;
    let report: DiffReportIn = serde_json::from_str(&text).input(&what)?;
    let dre_hyps = match &args.hypotheses {
        Some(p) => dre::read_hypotheses(p).input(&format!("--hypotheses {}", p.display()))?,
        None => Vec::new(),
    };
    let out = Combined {
        a: ensemble::combine(Direction::A, &report.hypotheses_a, &dre_hyps, args.p, args.q),
        b: ensemble::combine(Direction::B, &report.hypotheses_b, &dre_hyps, args.p, args.q),
    };
    write_json(&args.out, cfg, out)
}

fn load_manifest(path: &Path) -> anyhow::Result<AnnotationManifest> {
    AnnotationManifest::read(path).input(&format!("--manifest {}", path.display()))
}

#[derive(Serialize)]
struct SplitOut {
    split: bench::BenchmarkSplit,
}

fn bench_make(cfg: &Command, args: &BenchMakeArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let split = bench::build_split(&manifest, &args.parent, &args.attr_a, &args.attr_b, args.seed).input("bench-make")?;
    write_json(&args.out, cfg, SplitOut { split })
}

#[derive(Serialize)]
struct PairsOut {
    parent: String,
    parent_count: usize,
    eligible: Vec<String>,
    pairs: Vec<(String, String)>,
}

fn bench_enumerate(cfg: &Command, args: &BenchEnumerateArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let parent_count = manifest.records.iter().filter(|r| r.labels.contains(&args.parent)).count();
    let pairs = bench::enumerate_pairs(&manifest, &args.parent, args.min_mix, args.min_parent);
    let eligible = if parent_count >= args.min_parent {
        bench::eligible_attributes(&manifest, &args.parent, args.min_mix)
    } else {
        Vec::new()
    };
    write_json(
        &args.out,
        cfg,
        PairsOut {
            parent: args.parent.clone(),
            parent_count,
            eligible,
            pairs,
        },
    )
}

#[derive(Serialize)]
struct GroupOut {
    records: usize,
    max_depth: usize,
}

fn taxonomy_group(cfg: &Command, args: &TaxonomyGroupArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let tax = Taxonomy::read(&args.taxonomy).input(&format!("--taxonomy {}", args.taxonomy.display()))?;
    let grouped = bench::group_taxonomy(&manifest, &tax, args.cut_depth).input("taxonomy-group")?;
    grouped.write(&args.out).context("writing grouped manifest")?;
    let mut run_path = args.out.as_os_str().to_owned();
    run_path.push(".run.json");
    write_json(
        Path::new(&run_path),
        cfg,
        GroupOut {
            records: grouped.len(),
            max_depth: tax.max_depth(),
        },
    )
}

fn eval_cmd(cfg: &Command, args: &EvalArgs) -> anyhow::Result<()> {
    let what = format!("--cases {}", args.cases.display());
    let text = std::fs::read_to_string(&args.cases).input(&what)?;
    let cases: Vec<EvalCase> = serde_json::from_str(&text).input(&what)?;
    let table = TextEmbeddingTable::read(&args.table).input(&format!("--table {}", args.table.display()))?;
    let result = eval::evaluate(&cases, &table, &args.thresholds, args.pool).input("eval")?;
    if let Some(csv) = &args.csv {
        std::fs::write(csv, eval::coverage_csv(&result.coverage_thresholds, &result.coverage))
            .with_context(|| format!("writing {}", csv.display()))?;
    }
    write_json(&args.out, cfg, result)
}

#[derive(Serialize)]
struct SynthOut<'a> {
    truth: &'a synth::SynthTruth,
}

fn synth_cmd(cfg: &Command, args: &SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        dims: args.dims,
        n_per_side: args.n,
        n_concepts: args.n_concepts,
        planted_concept: args.planted,
        prevalence: args.prevalence,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let data = synth::gen_planted(&config).input("synth")?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    store::write_matrix(&args.out.join("a.ldif"), &data.a).context("writing a.ldif")?;
    store::write_matrix(&args.out.join("b.ldif"), &data.b).context("writing b.ldif")?;
    synth::concept_vocabulary(&data.truth)
        .and_then(|v| v.write(&args.out.join("vocab.tsv")))
        .context("writing vocab.tsv")?;
    write_json(&args.out.join("truth.json"), cfg, SynthOut { truth: &data.truth })
}

#[derive(Serialize)]
struct MatrixCheck {
    path: PathBuf,
    rows: usize,
    cols: usize,
    non_finite_rows: Vec<usize>,
    duplicate_id: Option<String>,
}

#[derive(Serialize)]
struct ValidateOut {
    ok: bool,
    matrices: Vec<MatrixCheck>,
    pair: Option<store::PairReport>,
}

fn validate(cfg: &Command, args: &ValidateArgs) -> anyhow::Result<()> {
    let open = |p: &Path, flag: &str| {
        store::read_matrix_with(p, ReadOptions { revalidate: false }).input(&format!("--{flag} {}", p.display()))
    };
    let mut mats = vec![open(&args.a, "a")?];
    let mut paths = vec![args.a.clone()];
    if let Some(b) = &args.b {
        mats.push(open(b, "b")?);
        paths.push(b.clone());
    }
    let checks: Vec<MatrixCheck> = mats
        .iter()
        .zip(paths)
        .map(|(m, path)| {
            let mut rows: Vec<usize> = m.non_finite_rows().into_iter().map(|(r, _)| r).collect();
            rows.dedup();
            MatrixCheck {
                path,
                rows: m.rows(),
                cols: m.cols(),
                non_finite_rows: rows,
                duplicate_id: m.ids().first_duplicate().map(str::to_string),
            }
        })
        .collect();
    let pair = (mats.len() == 2).then(|| store::validate_pair(&mats[0], &mats[1]));
    let ok = checks.iter().all(|c| c.non_finite_rows.is_empty() && c.duplicate_id.is_none())
        && pair.as_ref().map_or(true, |p| p.is_ok());
    let out = ValidateOut {
        ok,
        matrices: checks,
        pair,
    };
    match &args.out {
        Some(p) => write_json(p, cfg, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&Output { run_config: cfg, body: &out })?),
    }
    if ok {
        Ok(())
    } else {
        Err(invalid("validation failed"))
    }
}
