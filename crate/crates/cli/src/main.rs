use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tcqa::adjacency::{BuildOptions, NeuralAdjacencyMatrix, DEFAULT_DELTA, DEFAULT_EPS};
use tcqa::eval::{evaluate, Averaging};
use tcqa::executor::AdapterHops;
use tcqa::kg::{KnowledgeGraph, Split, TypeAnnotations};
use tcqa::kge::{train_kge, KgeConfig, KgeModel};
use tcqa::query::{self, generate_queries, AnswerSplit, IdSpace, Structure, Vocabulary};
use tcqa::trainer::{train_adapter, ParamsFile, TrainConfig, Targets};
use tcqa::type_graphs::TypedEntityRelationGraphs;

#[derive(Parser)]
#[command(name = "tcqa", version, about = "Type-aware fuzzy-logic complex query answering")]
struct Cli {
    /// Worker threads (TCQA_THREADS overrides; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a ComplEx link predictor on the training triples.
    TrainKge(TrainKgeArgs),
    /// Materialize the sparse neural adjacency matrix from a trained model.
    BuildAdjacency(BuildAdjacencyArgs),
    /// Sample labeled queries of the requested structures.
    GenQueries(GenQueriesArgs),
    /// Train calibration and adapter parameters on labeled queries.
    TrainAdapter(TrainAdapterArgs),
    /// Answer queries and print the top-ranked entities.
    Answer(AnswerArgs),
    /// Compute filtered MRR and Hits@K on labeled queries.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct TrainKgeArgs {
    /// Dataset directory (train.tsv, optional valid.tsv/test.tsv) or a single triples file.
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    n3: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildAdjacencyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    triples: PathBuf,
    #[arg(long)]
    types: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
    /// Compute every row instead of only head-compatible ones.
    #[arg(long)]
    no_type_skip: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Args)]
struct GenQueriesArgs {
    #[arg(long)]
    triples: PathBuf,
    /// Comma-separated structure labels, or `all`.
    #[arg(long, default_value = "all")]
    structures: String,
    /// Queries per structure.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum HopsArg {
    All,
    Anchor,
}

impl From<HopsArg> for AdapterHops {
    fn from(h: HopsArg) -> Self {
        match h {
            HopsArg::All => AdapterHops::All,
            HopsArg::Anchor => AdapterHops::AnchorOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetsArg {
    Easy,
    All,
}

#[derive(Args)]
struct TrainAdapterArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    types: PathBuf,
    /// Dataset the matrix was built from; resolves names and builds the type graphs.
    #[arg(long)]
    triples: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.9)]
    lr_decay: f64,
    #[arg(long, default_value = "2i,3i,2in,3in")]
    structures: String,
    #[arg(long, value_enum, default_value_t = HopsArg::All)]
    adapter_hops: HopsArg,
    /// Fit easy answers only, or easy and hard answers of held-out-labeled queries.
    #[arg(long, value_enum, default_value_t = TargetsArg::All)]
    targets: TargetsArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// A JSONL file of queries, or one inline JSON query.
    #[arg(long)]
    query: String,
    /// Dataset for entity and relation names; without it, ids are used.
    #[arg(long)]
    triples: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Print the argmax witness edges behind each answer.
    #[arg(long)]
    trace: bool,
    #[arg(long, value_enum, default_value_t = HopsArg::All)]
    adapter_hops: HopsArg,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    triples: Option<PathBuf>,
    /// Write `<report>.tsv` and `<report>.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Pool all hard answers of a structure instead of averaging per query.
    #[arg(long)]
    flat_average: bool,
    #[arg(long, value_enum, default_value_t = HopsArg::All)]
    adapter_hops: HopsArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::TrainKge(a) => cmd_train_kge(a),
        Command::BuildAdjacency(a) => cmd_build_adjacency(a),
        Command::GenQueries(a) => cmd_gen_queries(a),
        Command::TrainAdapter(a) => cmd_train_adapter(a),
        Command::Answer(a) => cmd_answer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match std::env::var("TCQA_THREADS") {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("invalid TCQA_THREADS value `{v}`"))?),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load_kg(path: &Path) -> Result<KnowledgeGraph> {
    if path.is_dir() {
        Ok(KnowledgeGraph::load_dir(path)?)
    } else {
        let mut kg = KnowledgeGraph::new();
        kg.load_triples(path, Split::Train)?;
        Ok(kg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn parse_structures(list: &str) -> Result<Vec<Structure>> {
    if list.trim() == "all" {
        return Ok(Structure::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.trim().parse::<Structure>().map_err(anyhow::Error::from))
        .collect()
}

fn cmd_train_kge(a: TrainKgeArgs) -> Result<()> {
    let kg = load_kg(&a.triples)?;
    let config = KgeConfig {
        dim: a.dim,
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        n3_weight: a.n3,
        seed: a.seed,
    };
    let (model, report) = train_kge(&kg, &config)?;
    model.save(&a.out)?;
    let mut out = io::stdout().lock();
    writeln!(out, "epoch\tloss")?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(out, "{}\t{l:.6}", e + 1)?;
    }
    Ok(())
}

fn load_graphs(kg: &KnowledgeGraph, types: &Path) -> Result<TypedEntityRelationGraphs> {
    let types = TypeAnnotations::load(types, kg)?;
    if types.skipped_unknown > 0 {
        log::warn!("{} type lines name unknown entities", types.skipped_unknown);
    }
    Ok(TypedEntityRelationGraphs::build(kg, &types)?)
}

fn cmd_build_adjacency(a: BuildAdjacencyArgs) -> Result<()> {
    if !(a.delta > 0.0 && a.delta < 0.5) {
        bail!("--delta must lie in (0, 0.5), got {}", a.delta);
    }
    if a.eps.is_nan() || a.eps < 0.0 {
        bail!("--eps must be non-negative, got {}", a.eps);
    }
    let kg = load_kg(&a.triples)?;
    let model = KgeModel::load(&a.model)?;
    let graphs = load_graphs(&kg, &a.types)?;
    let options = BuildOptions {
        eps: a.eps,
        delta: a.delta,
        type_skip: !a.no_type_skip,
    };
    let matrix = NeuralAdjacencyMatrix::build(&model, &kg, &graphs, options)?;
    matrix.save(&a.out)?;
    let r = matrix.storage_report();
    let mut out = io::stdout().lock();
    writeln!(out, "stored_entries\t{}", r.stored_entries)?;
    writeln!(out, "observed_entries\t{}", r.observed_entries)?;
    writeln!(out, "skipped_rows\t{}", r.skipped_rows)?;
    writeln!(out, "bytes\t{}", r.bytes)?;
    Ok(())
}

fn cmd_gen_queries(a: GenQueriesArgs) -> Result<()> {
    let kg = load_kg(&a.triples)?;
    let split = match a.split {
        SplitArg::Train => AnswerSplit::Train,
        SplitArg::Valid => AnswerSplit::Valid,
        SplitArg::Test => AnswerSplit::Test,
    };
    let mut all = Vec::new();
    for s in parse_structures(&a.structures)? {
        let (qs, report) = generate_queries(&kg, s, a.count, a.seed, split);
        eprintln!("{s}\t{}\t{}", report.produced, report.attempts);
        all.extend(qs);
    }
    let mut out = create(&a.out)?;
    query::write_jsonl(&mut out, &all, &kg)?;
    out.flush()?;
    Ok(())
}

fn read_queries(path: &Path, vocab: &dyn Vocabulary) -> Result<Vec<query::LabeledQuery>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    query::read_jsonl(BufReader::new(file), vocab).with_context(|| format!("reading {}", path.display()))
}

fn cmd_train_adapter(a: TrainAdapterArgs) -> Result<()> {
    let kg = load_kg(&a.triples)?;
    let matrix = NeuralAdjacencyMatrix::load(&a.matrix)?;
    if matrix.num_entities() != kg.num_entities() || matrix.num_relations() != kg.num_relations() {
        bail!(
            "matrix has {} entities and {} relations, dataset has {} and {}",
            matrix.num_entities(),
            matrix.num_relations(),
            kg.num_entities(),
            kg.num_relations()
        );
    }
    let graphs = load_graphs(&kg, &a.types)?;
    let queries = read_queries(&a.queries, &kg)?;
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        structures: parse_structures(&a.structures)?,
        lr_decay: a.lr_decay,
        seed: a.seed,
        hops: a.adapter_hops.into(),
        targets: match a.targets {
            TargetsArg::Easy => Targets::Easy,
            TargetsArg::All => Targets::All,
        },
        ..Default::default()
    };
    let state = train_adapter(&matrix, &graphs, &queries, &config)?;
    let params = ParamsFile {
        calibration: state.calibration,
        adapter: state.adapter,
        graphs,
    };
    params.save(&a.out)?;
    let mut out = io::stdout().lock();
    writeln!(out, "epoch\tloss")?;
    for (e, l) in state.loss_history.iter().enumerate() {
        writeln!(out, "{}\t{l:.6}", e + 1)?;
    }
    Ok(())
}

/// Vocabulary from `--triples`, or bare ids sized to the matrix.
fn vocabulary(triples: Option<&Path>, matrix: &NeuralAdjacencyMatrix) -> Result<Box<dyn Vocabulary>> {
    match triples {
        Some(p) => {
            let kg = load_kg(p)?;
            if kg.num_entities() != matrix.num_entities() || kg.num_relations() != matrix.num_relations() {
                bail!("{} does not match the matrix dimensions", p.display());
            }
            Ok(Box::new(kg))
        }
        None => Ok(Box::new(IdSpace {
            num_entities: matrix.num_entities(),
            num_relations: matrix.num_relations(),
        })),
    }
}

fn entity(vocab: &dyn Vocabulary, e: u32) -> String {
    vocab.entity_label(e).unwrap_or_else(|| e.to_string())
}

fn relation(vocab: &dyn Vocabulary, r: u32) -> String {
    vocab.relation_label(r).unwrap_or_else(|| r.to_string())
}

fn cmd_answer(a: AnswerArgs) -> Result<()> {
    let matrix = NeuralAdjacencyMatrix::load(&a.matrix)?;
    let params = ParamsFile::load(&a.params, &matrix)?;
    let vocab = vocabulary(a.triples.as_deref(), &matrix)?;
    let path = Path::new(&a.query);
    let texts: Vec<String> = if path.is_file() {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        BufReader::new(file)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .collect::<io::Result<_>>()?
    } else {
        vec![a.query.clone()]
    };
    let executor = params.executor(&matrix)?.with_hops(a.adapter_hops.into());
    let mut out = io::stdout().lock();
    writeln!(out, "query\trank\tentity\tscore{}", if a.trace { "\twitnesses" } else { "" })?;
    for (qi, text) in texts.iter().enumerate() {
        let ast = query::parse_query(text, vocab.as_ref()).with_context(|| format!("query {}", qi + 1))?;
        let trace = executor.trace(&ast.root)?;
        for (rank, (e, score)) in trace.output().ranked().into_iter().take(a.topk).enumerate() {
            write!(out, "{qi}\t{}\t{}\t{score:.6}", rank + 1, entity(vocab.as_ref(), e))?;
            if a.trace {
                let hops: Vec<String> = trace
                    .witnesses(e)
                    .into_iter()
                    .map(|(s, r, t)| {
                        format!(
                            "{} -{}-> {}",
                            entity(vocab.as_ref(), s),
                            relation(vocab.as_ref(), r),
                            entity(vocab.as_ref(), t)
                        )
                    })
                    .collect();
                write!(out, "\t{}", hops.join("; "))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let matrix = NeuralAdjacencyMatrix::load(&a.matrix)?;
    let params = ParamsFile::load(&a.params, &matrix)?;
    let vocab = vocabulary(a.triples.as_deref(), &matrix)?;
    let queries = read_queries(&a.queries, vocab.as_ref())?;
    let executor = params.executor(&matrix)?.with_hops(a.adapter_hops.into());
    let averaging = if a.flat_average {
        Averaging::Flat
    } else {
        Averaging::PerQuery
    };
    let report = evaluate(&executor, &queries, averaging)?;
    report.write_tsv(io::stdout().lock())?;
    if let Some(stem) = a.report {
        let tsv = stem.with_extension("tsv");
        let mut out = create(&tsv)?;
        report.write_tsv(&mut out)?;
        out.flush()?;
        let json = stem.with_extension("json");
        fs::write(&json, report.to_json() + "\n").with_context(|| format!("writing {}", json.display()))?;
    }
    Ok(())
}
