use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "voiceind",
    version,
    about = "Voiceprint release under voice-indistinguishability, with privacy and utility audits"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Master seed for every random choice.
    #[arg(long, global = true, env = "VOICEIND_SEED", default_value_t = voiceind::DEFAULT_SEED)]
    pub seed: u64,

    /// Embedding dimension. Defaults to the file's `#%` header, else 512.
    #[arg(long, global = true)]
    pub dim: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Angular distance between two records, or the full matrix as CSV.
    Distance(DistanceArgs),
    /// Perturb one voiceprint and print the selected candidate.
    Perturb(PerturbArgs),
    /// Release utterances (or a whole database) through the mechanism.
    Release(ReleaseCommand),
    /// Exhaustive likelihood-ratio and prior/posterior audits.
    Audit(AuditArgs),
    /// Nearest-neighbor re-identification of released voiceprints.
    Attack(AttackArgs),
    /// Utility/privacy sweep over database size and budget.
    Experiment(ExperimentArgs),
    /// Online perturbation time of both pipelines versus database size.
    Bench(BenchArgs),
    /// Write a synthetic speaker population.
    GenPopulation(GenPopulationArgs),
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// First record id.
    #[arg(long, requires = "b", conflicts_with = "matrix")]
    pub a: Option<String>,
    /// Second record id.
    #[arg(long, requires = "a")]
    pub b: Option<String>,
    /// Dump the full distance matrix as CSV.
    #[arg(long)]
    pub matrix: bool,
    /// Output file (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Id of the input record within the database.
    #[arg(long, conflicts_with = "vector_file", required_unless_present = "vector_file")]
    pub id: Option<String>,
    /// Embedding file holding the input voiceprint.
    #[arg(long)]
    pub vector_file: Option<PathBuf>,
    /// Record to use from --vector-file (default: its first record).
    #[arg(long, requires = "vector_file")]
    pub vector_id: Option<String>,
    #[arg(long)]
    pub epsilon: f64,
    /// Also write the full release distribution as CSV.
    #[arg(long)]
    pub dump_distribution: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Feature,
    Model,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct ReleaseCommand {
    #[command(subcommand)]
    pub action: Option<ReleaseAction>,
    #[command(flatten)]
    pub args: ReleaseArgs,
}

#[derive(Debug, Subcommand)]
pub enum ReleaseAction {
    /// Precompute and serialize a release model (offline phase).
    BuildModel(BuildModelArgs),
}

#[derive(Debug, Args)]
pub struct ReleaseArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Release database (candidate set).
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Prebuilt model (model mode).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Privacy budget (feature mode; in model mode it must match the model).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Utterance voiceprints (default: release every database record).
    #[arg(long)]
    pub utterances: Option<PathBuf>,
    /// Content sidecar (`<id>\t<base64>`) for the utterances.
    #[arg(long)]
    pub content: Option<PathBuf>,
    /// Released voiceprints (default: stdout).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Provenance CSV: utterance id, candidate id, probability.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    /// Synthesized content sidecar.
    #[arg(long)]
    pub content_out: Option<PathBuf>,
    /// Refuse to emit provenance.
    #[arg(long)]
    pub strip_provenance: bool,
    /// One draw per speaker (id prefix before the first `-`).
    #[arg(long)]
    pub sticky: bool,
}

#[derive(Debug, Args)]
pub struct BuildModelArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Build time recorded in the model, seconds since the Unix epoch.
    #[arg(long, env = "SOURCE_DATE_EPOCH", default_value_t = 0)]
    pub built_at: u64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    /// Multiplicative slack on ratio bounds.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Largest database accepted (cost is cubic in n).
    #[arg(long, env = "VOICEIND_AUDIT_CAP", default_value_t = 200)]
    pub cap: usize,
    /// Also run the prior/posterior audit with a uniform prior.
    #[arg(long)]
    pub bayes: bool,
    /// Prior file for the prior/posterior audit: `<id> <probability>` lines.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Structured (JSON) copy of the report.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Original voiceprints; released ids name their true record.
    #[arg(long)]
    pub db: PathBuf,
    /// Released voiceprints.
    #[arg(long)]
    pub released: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Population file (default: synthetic 40-speaker population).
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 40])]
    pub n_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0, 1000.0, 10000.0])]
    pub eps_values: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Measure online wall time (makes output machine dependent).
    #[arg(long)]
    pub timing: bool,
    /// Per-cell means instead of per-trial rows.
    #[arg(long)]
    pub summary: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 1000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Largest n for which a model is built.
    #[arg(long, default_value_t = 2000)]
    pub model_cap: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenPopulationArgs {
    #[arg(long, default_value_t = voiceind::population::DEFAULT_SPEAKERS)]
    pub speakers: usize,
    #[arg(long, default_value_t = 1)]
    pub utterances: usize,
    /// Larger is tighter clustering around each speaker's mean.
    #[arg(long, default_value_t = voiceind::population::DEFAULT_CONCENTRATION)]
    pub concentration: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}
