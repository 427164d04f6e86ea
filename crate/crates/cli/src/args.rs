use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtembed::data::FailureKind;
use mtembed::evaluation::AdapterMode;
use mtembed::task::TaskKind;

#[derive(Debug, Parser)]
#[command(
    name = "mtembed",
    version,
    about = "Train, run and evaluate a toy multi-task embedding model"
)]
pub struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build training and evaluation files from raw records.
    #[command(subcommand)]
    PrepareData(Prepare),
    /// Stage I: masked-language-model pre-training of a fresh model.
    Pretrain(TrainArgs),
    /// Stage II: pair training of the base weights.
    TrainPairs(ContinueArgs),
    /// Stage III: train one task adapter with the base frozen.
    TrainAdapter(AdapterArgs),
    /// Embed `{"id","text"}` lines.
    Encode(EncodeArgs),
    /// Score a checkpoint on retrieval, similarity, classification or clustering data.
    #[command(subcommand)]
    Eval(Eval),
}

#[derive(Debug, Subcommand)]
pub enum Prepare {
    /// Drop pairs whose shorter text is mostly contained in the longer one.
    FilterPairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Add BM25 hard negatives to query/passage pairs.
    MineNegatives {
        #[arg(long)]
        pairs: PathBuf,
        /// `{"id","text"}` passages to mine from.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 7)]
        negatives: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Turn labeled texts into classification tuples.
    ClassTuples {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Convert scored answer threads into tuples with seven negatives.
    QualityConvert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "quality")]
        dataset: String,
        #[arg(long)]
        seed: u64,
    },
    /// Generate templated failure-case records.
    GenFailures {
        #[arg(long, value_parser = parse_kind)]
        kind: FailureKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Template bank JSON; defaults to the built-in bank.
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Write the synthetic 8-topic corpus, its prepared files and a run config.
    ToyCorpus {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to write; defaults to a stage-named file in the config's output_dir.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContinueArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdapterArgs {
    #[command(flatten)]
    pub from: ContinueArgs,
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Adapter to route through; omit for the base model.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Truncation dim; defaults to the model width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Prepend the task's instruction prefix.
    #[arg(long)]
    pub instructions: bool,
    /// Write the binary tensor format instead of JSONL.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct EvalCommon {
    #[arg(long)]
    pub model: PathBuf,
    /// Truncation dim; defaults to the model width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Defaults to the checkpoint file name.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Defaults to the checkpoint's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stamp the report with the current time.
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct RetrievalData {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Adapters {
    /// Separate adapters if present, else the shared one, else none.
    Auto,
    None,
    Shared,
    Separate,
}

impl Adapters {
    pub fn resolve(self, model: &mtembed::encoder::EncoderModel) -> AdapterMode {
        match self {
            Adapters::Auto => AdapterMode::detect(model),
            Adapters::None => AdapterMode::None,
            Adapters::Shared => AdapterMode::Shared,
            Adapters::Separate => AdapterMode::Separate,
        }
    }
}

#[derive(Debug, Args)]
pub struct RetrievalRouting {
    #[arg(long, value_enum, default_value_t = Adapters::Auto)]
    pub adapters: Adapters,
    /// Prepend the query and passage instruction prefixes.
    #[arg(long)]
    pub instructions: bool,
}

#[derive(Debug, Subcommand)]
pub enum Eval {
    /// nDCG@k and mAP over queries, docs and qrels.
    Retrieval {
        #[command(flatten)]
        common: EvalCommon,
        #[command(flatten)]
        data: RetrievalData,
        #[command(flatten)]
        routing: RetrievalRouting,
    },
    /// Spearman correlation between cosine and gold scores.
    Sts {
        #[command(flatten)]
        common: EvalCommon,
        /// `{"q","p","score","scale_max"}` lines.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
    },
    /// Logistic-probe accuracy on labeled texts.
    Classification {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
    },
    /// k-means v-measure on labeled texts.
    Clustering {
        #[command(flatten)]
        common: EvalCommon,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
    },
    /// Retrieval at each truncation dim.
    MrlSweep {
        #[command(flatten)]
        common: EvalCommon,
        #[command(flatten)]
        data: RetrievalData,
        #[command(flatten)]
        routing: RetrievalRouting,
        /// Comma-separated dims; defaults to every dim the model supports.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
    },
    /// nDCG@k for the 1-vs-2 adapter by instruction grid.
    Ablation {
        /// Model trained with one shared retrieval adapter, no prefixes.
        #[arg(long)]
        shared: PathBuf,
        /// One shared adapter, with prefixes.
        #[arg(long)]
        shared_instructions: PathBuf,
        /// Separate query and passage adapters, no prefixes.
        #[arg(long)]
        separate: PathBuf,
        /// Separate adapters, with prefixes.
        #[arg(long)]
        separate_instructions: PathBuf,
        #[command(flatten)]
        data: RetrievalData,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rank each record's gold answer among its eight candidates.
    Failures {
        #[arg(long)]
        model: PathBuf,
        /// Failure records, or tuples with seven negatives when --case is given.
        #[arg(long)]
        input: PathBuf,
        /// Only this kind; tuples are read as records of this kind.
        #[arg(long, value_parser = parse_kind)]
        case: Option<FailureKind>,
        #[command(flatten)]
        routing: RetrievalRouting,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse::<TaskKind>().map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> Result<FailureKind, String> {
    s.parse::<FailureKind>().map_err(|e| e.to_string())
}
