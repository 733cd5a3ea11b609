//! `ctxquant`: offline compression and online re-ranking from the command line.
//!
//! Reports go to stdout as `key=value` lines. Exit codes: 0 success,
//! 1 usage error, 2 data error.

mod files;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxquant::baseline::{encode_document, reconstruct_matrix, stage_mse};
use ctxquant::codestore::{self, becr_ratio, space_report, EmbeddingFile, ModelFile, SpaceModel};
use ctxquant::cq::DocIndepTable;
use ctxquant::eval::{self, format_qrels, format_run, Qrels, Run};
use ctxquant::gradcheck::random_gradcheck;
use ctxquant::synth::{gen_corpus, gen_queries, gen_training_queries, SynthConfig, SynthQuery};
use ctxquant::train::{maxsim_teacher, train_cq_logged, FinetuneConfig, LossKind, TrainConfig, WarmupConfig};
use ctxquant::{
    quantize_corpus, rerank, train_pq, train_rq, CqDecoder, DocumentCodes, DocumentDecoder, DocumentTokens,
    EmbeddingMatrix, Error, KMeansConfig, Mode, QuantizerSpec, RerankRequest,
};

/// Relative-error bound for `gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "ctxquant", version, about = "Contextual quantization for late-interaction re-ranking")]
struct Cli {
    /// Worker threads for scoring, encoding and training; results do not depend on it
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus, base table, queries, candidates, qrels and teacher runs
    Synth(SynthArgs),
    /// Train a product quantizer on raw token embeddings
    TrainPq(BaselineArgs),
    /// Train a residual (additive) quantizer on raw token embeddings
    TrainRq(BaselineArgs),
    /// Train the contextual quantizer network
    TrainCq(TrainCqArgs),
    /// Compress a corpus into a code store
    Encode(EncodeArgs),
    /// Decompress a code store back to token embeddings
    Decode(DecodeArgs),
    /// Re-rank candidate documents from a code store
    Rerank(RerankArgs),
    /// Score a TREC run against qrels
    Eval(EvalArgs),
    /// Storage cost of a compressed index versus uncompressed embeddings
    SpaceReport(SpaceArgs),
    /// Compare analytic and finite-difference gradients on random models
    Gradcheck(GradcheckArgs),
    /// Agreement between a teacher run and a student run
    Fidelity(FidelityArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Product,
    Additive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Product => Mode::Product,
            ModeArg::Additive => Mode::Additive,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    PairwiseCe,
    MarginMse,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::PairwiseCe => LossKind::PairwiseCe,
            LossArg::MarginMse => LossKind::MarginMse,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out_dir: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vocabulary size
    #[arg(long = "V", default_value_t = 512)]
    vocab: usize,
    /// Number of documents
    #[arg(long = "Z", default_value_t = 200)]
    docs: usize,
    /// Tokens per document
    #[arg(long = "n", default_value_t = 24)]
    tokens: usize,
    /// Embedding dimension
    #[arg(long = "D", default_value_t = 16)]
    dim: usize,
    /// Norm of the document-specific offset relative to the base row
    #[arg(long, default_value_t = 0.2)]
    delta_scale: f64,
    /// Number of base-embedding clusters (topics)
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    /// Evaluation queries
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// Fine-tuning queries, written only when non-zero
    #[arg(long, default_value_t = 0)]
    train_queries: usize,
    /// Tokens per query
    #[arg(long = "l", default_value_t = 6)]
    query_len: usize,
    /// Relative noise added to query tokens
    #[arg(long, default_value_t = 0.3)]
    query_noise: f64,
    /// Candidates per query, the target included
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    /// Candidates drawn from the target's own topic
    #[arg(long, default_value_t = 10)]
    hard_negatives: usize,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Embedding file to train on
    #[arg(long)]
    input: PathBuf,
    /// Codebook file to write
    #[arg(long)]
    out: PathBuf,
    /// Number of codebooks
    #[arg(long = "M")]
    books: usize,
    /// Codewords per codebook
    #[arg(long = "K")]
    codewords: usize,
    /// Lloyd iterations per k-means run
    #[arg(long, default_value_t = 25)]
    iters: usize,
    /// k-means initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainCqArgs {
    /// Embedding file to train on
    #[arg(long)]
    input: PathBuf,
    /// Document-independent embedding table
    #[arg(long)]
    table: PathBuf,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
    /// Codebook layout: split dimensions (product) or sum full-width codewords (additive)
    #[arg(long, value_enum, default_value_t = ModeArg::Product)]
    mode: ModeArg,
    /// Number of codebooks
    #[arg(long = "M")]
    books: usize,
    /// Codewords per codebook
    #[arg(long = "K")]
    codewords: usize,
    /// Reconstruction warm-up steps
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Warm-up learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Tokens per warm-up batch
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Fine-tuning steps after warm-up
    #[arg(long, default_value_t = 0)]
    finetune_steps: usize,
    /// Fine-tuning learning rate
    #[arg(long, default_value_t = 1e-3)]
    finetune_lr: f64,
    /// Triples per fine-tuning batch
    #[arg(long, default_value_t = 32)]
    pairs: usize,
    /// Fine-tuning loss
    #[arg(long, value_enum, default_value_t = LossArg::MarginMse)]
    loss: LossArg,
    /// Fine-tuning queries (embedding file)
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Teacher run over the fine-tuning queries; its top document is the positive
    #[arg(long)]
    teacher_run: Option<PathBuf>,
    /// Training tokens sampled from the corpus
    #[arg(long, default_value_t = 500_000)]
    sample_size: usize,
    /// Gumbel-softmax temperature
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Add a sinusoidal token-position feature to the encoder input
    #[arg(long)]
    use_position: bool,
    /// Initialization, sampling and noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Embedding file to compress
    #[arg(long)]
    input: PathBuf,
    /// Codebook (PQ/RQ) or network (CQ) file
    #[arg(long)]
    model: PathBuf,
    /// Document-independent table, required for network models
    #[arg(long)]
    table: Option<PathBuf>,
    /// Code store to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Code store to decompress
    #[arg(long)]
    store: PathBuf,
    /// Codebook (PQ/RQ) or network (CQ) file
    #[arg(long)]
    model: PathBuf,
    /// Document-independent table, required for network models
    #[arg(long)]
    table: Option<PathBuf>,
    /// Embedding file to write
    #[arg(long)]
    out: PathBuf,
    /// Original embeddings; reports the reconstruction MSE when given
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RerankArgs {
    /// Code store holding the candidates
    #[arg(long)]
    store: PathBuf,
    /// Codebook (PQ/RQ) or network (CQ) file
    #[arg(long)]
    model: PathBuf,
    /// Document-independent table, required for network models
    #[arg(long)]
    table: Option<PathBuf>,
    /// Query embeddings (embedding file, one entry per query)
    #[arg(long)]
    queries: PathBuf,
    /// `qid docid` lines
    #[arg(long)]
    candidates: PathBuf,
    /// Results kept per query
    #[arg(long = "k", default_value_t = 10)]
    depth: usize,
    /// TREC run file to write
    #[arg(long)]
    out: PathBuf,
    /// Run tag in the last column
    #[arg(long, default_value = "ctxquant")]
    tag: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// TREC run file
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels file
    #[arg(long)]
    qrels: PathBuf,
    /// mrr@N or ndcg@N
    #[arg(long, default_value = "mrr@10")]
    metric: String,
}

#[derive(Debug, Args)]
struct SpaceArgs {
    /// Number of documents
    #[arg(long = "Z")]
    docs: f64,
    /// Mean tokens per document
    #[arg(long = "n")]
    tokens: f64,
    /// Embedding dimension
    #[arg(long = "D")]
    dim: usize,
    /// Number of codebooks
    #[arg(long = "M")]
    books: usize,
    /// Codewords per codebook
    #[arg(long = "K")]
    codewords: usize,
    /// Vocabulary size
    #[arg(long = "V", default_value_t = 32000.0)]
    vocab: f64,
    /// Codebook layout: split dimensions (product) or sum full-width codewords (additive)
    #[arg(long, value_enum, default_value_t = ModeArg::Product)]
    mode: ModeArg,
    /// Bytes per float of the uncompressed baseline (2 or 4)
    #[arg(long, default_value_t = 2)]
    float_bytes: u32,
    /// Bytes per stored token id
    #[arg(long, default_value_t = 2)]
    id_bytes: u32,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// First model seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of codebooks
    #[arg(long = "M", default_value_t = 2)]
    books: usize,
    /// Codewords per codebook
    #[arg(long = "K", default_value_t = 4)]
    codewords: usize,
    /// Embedding dimension
    #[arg(long = "D", default_value_t = 8)]
    dim: usize,
    /// Codebook layout: split dimensions (product) or sum full-width codewords (additive)
    #[arg(long, value_enum, default_value_t = ModeArg::Product)]
    mode: ModeArg,
    /// Random models checked, seeds `seed..seed+models`
    #[arg(long, default_value_t = 1)]
    models: u64,
}

#[derive(Debug, Args)]
struct FidelityArgs {
    /// Run scored on uncompressed embeddings
    #[arg(long)]
    teacher: PathBuf,
    /// Run scored on reconstructed embeddings
    #[arg(long)]
    student: PathBuf,
    /// Tab-separated (query, doc, teacher, student) table to write
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn report(key: &str, value: impl Display) {
    println!("{key}={value}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = configure_threads(cli.threads) {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: u16) -> std::result::Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(usize::from(n))
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(n: u16) -> std::result::Result<(), String> {
    if n > 1 {
        log::warn!("built without the parallel feature; --threads {n} ignored");
    }
    Ok(())
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::TrainPq(a) => train_baseline(a, Mode::Product),
        Command::TrainRq(a) => train_baseline(a, Mode::Additive),
        Command::TrainCq(a) => train_cq_cmd(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::SpaceReport(a) => space(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Fidelity(a) => fidelity(a),
    }
}

fn spec_from(mode: Mode, books: usize, codewords: usize, dim: usize) -> std::result::Result<QuantizerSpec, Failure> {
    QuantizerSpec::new(mode, books, codewords, dim).map_err(|e| usage(format!("--M/--K/--mode: {e}")))
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        seed: a.seed,
        vocab: a.vocab,
        docs: a.docs,
        tokens_per_doc: a.tokens,
        dim: a.dim,
        delta_scale: a.delta_scale,
        cluster_count: a.clusters,
        query_count: a.queries,
        query_len: a.query_len,
        query_noise: a.query_noise,
        candidates: a.candidates,
        hard_negatives: a.hard_negatives,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).map_err(Error::from)?;
    let (table, docs) = gen_corpus(&cfg)?;
    let dir = &a.out_dir;
    codestore::write_embeddings(dir.join("corpus.cqem"), &EmbeddingFile::new(cfg.dim, docs.clone())?)?;
    codestore::write_table(dir.join("table.cqem"), &table)?;
    let queries = gen_queries(&cfg, &docs)?;
    write_query_set(dir, "", &cfg, &queries)?;
    if a.train_queries > 0 {
        let train = gen_training_queries(&cfg, &docs, a.train_queries)?;
        write_query_set(dir, "train_", &cfg, &train)?;
    }
    report("docs", docs.len());
    report("tokens", docs.iter().map(DocumentTokens::len).sum::<usize>());
    report("vocab", table.vocab_size());
    report("queries", queries.len());
    report("train_queries", a.train_queries);
    Ok(())
}

/// `<prefix>queries.cqem`, `<prefix>candidates.txt`, `<prefix>qrels.txt` and `<prefix>teacher.run`.
fn write_query_set(dir: &Path, prefix: &str, cfg: &SynthConfig, queries: &[SynthQuery]) -> ctxquant::Result<()> {
    let entries = queries
        .iter()
        .map(|q| DocumentTokens::new(q.qid, vec![0; q.query.rows()], q.query.clone()))
        .collect::<ctxquant::Result<Vec<_>>>()?;
    codestore::write_embeddings(dir.join(format!("{prefix}queries.cqem")), &EmbeddingFile::new(cfg.dim, entries)?)?;
    let lists: Vec<(u64, Vec<u64>)> = queries.iter().map(|q| (q.qid, q.candidates.clone())).collect();
    files::write_text(&dir.join(format!("{prefix}candidates.txt")), &files::format_candidates(&lists))?;
    let mut qrels = Qrels::new();
    let mut teacher = Run::new();
    for q in queries {
        qrels.insert(q.qid.to_string(), q.target.to_string(), 1);
        teacher.insert_scored(q.qid.to_string(), &q.teacher)?;
    }
    files::write_text(&dir.join(format!("{prefix}qrels.txt")), &format_qrels(&qrels))?;
    files::write_text(&dir.join(format!("{prefix}teacher.run")), &format_run(&teacher, "teacher"))?;
    Ok(())
}

fn train_baseline(a: BaselineArgs, mode: Mode) -> CmdResult {
    let file = codestore::read_embeddings(&a.input)?;
    let spec = spec_from(mode, a.books, a.codewords, file.dim)?;
    let samples = file.flatten();
    let cfg = KMeansConfig::new(a.iters, a.seed);
    let cb = match mode {
        Mode::Product => train_pq(&samples, &spec, &cfg)?,
        Mode::Additive => train_rq(&samples, &spec, &cfg)?,
    };
    codestore::write_codebooks(&a.out, &cb)?;
    let mse = reconstruct_matrix(&cb, &samples)?.mean_squared_error(&samples)?;
    report("mode", mode);
    report("samples", samples.rows());
    report("mse", mse);
    if mode == Mode::Additive {
        for (m, v) in stage_mse(&cb, &samples)?.iter().enumerate() {
            report(&format!("stage{m}_mse"), v);
        }
    }
    Ok(())
}

fn train_cq_cmd(a: TrainCqArgs) -> CmdResult {
    let loss = LossKind::from(a.loss);
    let ranking = a.finetune_steps > 0 && loss != LossKind::Mse;
    if ranking && (a.queries.is_none() || a.teacher_run.is_none()) {
        return Err(usage(format!("--loss {loss} fine-tuning needs --queries and --teacher-run")));
    }
    let cfg = TrainConfig {
        warmup: WarmupConfig {
            lr: a.lr,
            batch: a.batch,
            steps: a.steps,
        },
        finetune: FinetuneConfig {
            lr: a.finetune_lr,
            pairs_per_batch: a.pairs,
            steps: a.finetune_steps,
            loss,
        },
        seed: a.seed,
        sample_size: a.sample_size,
        use_position: a.use_position,
        tau: a.tau,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = codestore::read_embeddings(&a.input)?;
    let table = codestore::read_table(&a.table)?;
    let spec = spec_from(a.mode.into(), a.books, a.codewords, corpus.dim)?;
    let triples = if ranking {
        let queries = codestore::read_embeddings(a.queries.as_ref().expect("checked"))?;
        let run = eval::parse_run(&files::read_text(a.teacher_run.as_ref().expect("checked"))?)?;
        files::triples_from_run(&run, &queries, &corpus.docs)?
    } else {
        Vec::new()
    };
    let (params, log) = train_cq_logged(spec, &corpus.docs, &table, &triples, &maxsim_teacher, &cfg)?;
    codestore::write_model(&a.out, &params)?;
    report("parameters", params.param_count());
    report("triples", triples.len());
    if let Some(l) = log.warmup.last() {
        report("warmup_final_loss", l);
    }
    if let Some(l) = log.finetune.last() {
        report("finetune_final_loss", l);
    }
    Ok(())
}

/// A loaded model ready to decode stores.
enum Loaded {
    Baseline(ctxquant::CodebookSet),
    Network(Box<ctxquant::CQParams>, DocIndepTable),
}

impl Loaded {
    fn open(model: &Path, table: Option<&PathBuf>) -> std::result::Result<Self, Failure> {
        match codestore::read_any_model(model)? {
            ModelFile::Codebooks(cb) => Ok(Loaded::Baseline(cb)),
            ModelFile::Network(p) => {
                let table = table.ok_or_else(|| usage("--table is required for network models"))?;
                Ok(Loaded::Network(Box::new(p), codestore::read_table(table)?))
            }
        }
    }

    fn decoder(&self) -> Box<dyn DocumentDecoder + '_> {
        match self {
            Loaded::Baseline(cb) => Box::new(cb.clone()),
            Loaded::Network(params, table) => Box::new(CqDecoder { params, table }),
        }
    }

    fn encode(&self, docs: &[DocumentTokens]) -> ctxquant::Result<Vec<DocumentCodes>> {
        match self {
            Loaded::Baseline(cb) => ctxquant::par::try_map_slice(docs, |d| encode_document(cb, d)),
            Loaded::Network(params, table) => quantize_corpus(params, docs, table),
        }
    }
}

fn encode(a: EncodeArgs) -> CmdResult {
    let model = Loaded::open(&a.model, a.table.as_ref())?;
    let corpus = codestore::read_embeddings(&a.input)?;
    let codes = model.encode(&corpus.docs)?;
    let spec = *model.decoder().spec();
    codestore::write_store(&a.out, &spec, &codes)?;
    let bytes = std::fs::metadata(&a.out).map_err(Error::from)?.len();
    report("docs", codes.len());
    report("tokens", codes.iter().map(DocumentCodes::len).sum::<usize>());
    report("store_bytes", bytes);
    Ok(())
}

fn decode(a: DecodeArgs) -> CmdResult {
    let model = Loaded::open(&a.model, a.table.as_ref())?;
    let store = codestore::read_store(&a.store)?;
    let decoder = model.decoder();
    let docs = ctxquant::par::try_map_slice(store.docs(), |c| {
        DocumentTokens::new(c.doc_id, c.token_ids.clone(), decoder.reconstruct(c)?)
    })?;
    let dim = store.spec().dim();
    let out = EmbeddingFile::new(dim, docs)?;
    codestore::write_embeddings(&a.out, &out)?;
    report("docs", out.docs.len());
    if let Some(r) = &a.reference {
        let reference = codestore::read_embeddings(r)?;
        let (x, y) = (reference.flatten(), out.flatten());
        report("mse", x.mean_squared_error(&y)?);
    }
    Ok(())
}

fn rerank_cmd(a: RerankArgs) -> CmdResult {
    if a.depth == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let model = Loaded::open(&a.model, a.table.as_ref())?;
    let decoder = model.decoder();
    let store = codestore::read_store(&a.store)?;
    let queries = codestore::read_embeddings(&a.queries)?;
    let by_id = files::queries_by_id(&queries);
    let cands = files::parse_candidates(&files::read_text(&a.candidates)?)?;
    let mut run = Run::new();
    for (qid, candidates) in cands {
        let query: &EmbeddingMatrix = by_id
            .get(&qid)
            .ok_or_else(|| Error::BadParam(format!("candidates name unknown query {qid}")))?;
        let req = RerankRequest {
            query: query.clone(),
            candidates,
            k: a.depth,
        };
        let scored = rerank(&req, &store, decoder.as_ref())?;
        run.insert_scored(qid.to_string(), &scored)?;
    }
    files::write_text(&a.out, &format_run(&run, &a.tag))?;
    report("queries", run.len());
    Ok(())
}

enum Metric {
    Mrr(usize),
    Ndcg(usize),
}

fn parse_metric(s: &str) -> Option<Metric> {
    let (name, k) = s.split_once('@')?;
    let k: usize = k.parse().ok().filter(|&k| k > 0)?;
    match name {
        "mrr" => Some(Metric::Mrr(k)),
        "ndcg" => Some(Metric::Ndcg(k)),
        _ => None,
    }
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let metric = parse_metric(&a.metric)
        .ok_or_else(|| usage(format!("--metric {:?}: expected mrr@N or ndcg@N", a.metric)))?;
    let run = eval::parse_run(&files::read_text(&a.run)?)?;
    let qrels = eval::parse_qrels(&files::read_text(&a.qrels)?)?;
    let value = match metric {
        Metric::Mrr(k) => eval::mrr_at_k(&run, &qrels, k)?,
        Metric::Ndcg(k) => eval::ndcg_at_k(&run, &qrels, k)?,
    };
    println!("{}={value:.4}", a.metric);
    Ok(())
}

fn space(a: SpaceArgs) -> CmdResult {
    if a.dim == 0 || a.books == 0 {
        return Err(usage("--D and --M must be positive"));
    }
    let sub_dim = match Mode::from(a.mode) {
        Mode::Product if !a.dim.is_multiple_of(a.books) => {
            return Err(usage(format!("--D {} is not divisible by --M {}", a.dim, a.books)))
        }
        Mode::Product => a.dim / a.books,
        Mode::Additive => a.dim,
    };
    let model = SpaceModel {
        docs: a.docs,
        mean_tokens: a.tokens,
        vocab: a.vocab,
        dim: a.dim,
        books: a.books,
        codewords: a.codewords,
        sub_dim,
        bytes_per_float: a.float_bytes,
        token_id_bytes: a.id_bytes,
    };
    let r = space_report(&model).map_err(|e| usage(e.to_string()))?;
    report("codebook_bytes", r.codebook_bytes);
    report("doc_indep_bytes", r.doc_indep_bytes);
    report("codes_bytes", r.codes_bytes);
    report("colbert_bytes", r.colbert_baseline_bytes);
    report("compression_ratio", format!("{:.2}", r.ratio_colbert_to_cq));
    report("becr_ratio", format!("{:.2}", becr_ratio(a.books, a.codewords, a.id_bytes)?));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.models == 0 {
        return Err(usage("--models must be at least 1"));
    }
    spec_from(a.mode.into(), a.books, a.codewords, a.dim)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in a.seed..a.seed + a.models {
        let r = random_gradcheck(seed, a.mode.into(), a.books, a.codewords, a.dim)?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    report("models", a.models);
    report("entries", checked);
    report("max_rel_error", format!("{worst:.3e}"));
    let passed = worst < GRADCHECK_TOLERANCE;
    report("passed", passed);
    if passed {
        Ok(())
    } else {
        Err(Failure::Data(Error::BadParam(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        ))))
    }
}

fn fidelity(a: FidelityArgs) -> CmdResult {
    let teacher = eval::parse_run(&files::read_text(&a.teacher)?)?;
    let student = eval::parse_run(&files::read_text(&a.student)?)?;
    let rep = eval::fidelity_report(&teacher, &student)?;
    if let Some(out) = &a.out {
        files::write_text(out, &rep.pairs_table())?;
    }
    report("queries", rep.per_query.len());
    report("pairs", rep.pairs.len());
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.4}"));
    report("median_tau", fmt(rep.median_tau()));
    report("mean_tau", fmt(rep.mean_tau()));
    Ok(())
}
