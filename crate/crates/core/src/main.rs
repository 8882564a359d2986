//! Command-line pipeline: synthetic data, vocabulary/index construction,
//! neural language model training, per-document adaptation, reranking, and
//! TREC-style evaluation. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nnlm_ir::corpus::{
    read_jsonl, read_stopwords, read_trec_sgml, tokenize_filtered, Document, Vocabulary,
};
use nnlm_ir::error::{Error, Result};
use nnlm_ir::eval::{
    delta_report, evaluate_run, map_gmap, read_qrels, read_run, write_run, Run,
};
use nnlm_ir::gradcheck::gradient_check;
use nnlm_ir::huffman::{build_huffman, HuffmanTree};
use nnlm_ir::io::write_atomic;
use nnlm_ir::lm::{CountLM, InvertedIndex, DEFAULT_B, DEFAULT_K1};
use nnlm_ir::nn::{
    load_model, save_model, Arch, DocVector, DocVectorTable, FitScope, MergeMode, NeuralConfig,
    NeuralParams,
};
use nnlm_ir::rerank::{rerank_run, sweep_lambda, MixParams, NeuralScorer, RerankModels};
use nnlm_ir::synth::{generate, SynthConfig};
use nnlm_ir::train::{
    fit_doc_vector, load_word_vectors, pretrain_cbow, train_generic, word_weights,
    RpropConfig, TrainConfig,
};

const CONFIG_ENV: &str = "NNLM_IR_CONFIG";

#[derive(Parser)]
#[command(
    name = "nnlm-ir",
    version,
    about = "Neural language model reranking pipeline"
)]
struct Cli {
    /// TOML config supplying defaults for flags (env: NNLM_IR_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 guarantees deterministic output
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic collection (documents, topics, qrels)
    Synth(SynthArgs),
    /// Build a stem vocabulary from a corpus
    BuildVocab(BuildVocabArgs),
    /// Build a BM25 inverted index from a corpus and vocabulary
    BuildIndex(BuildIndexArgs),
    /// Pretrain word embeddings (bag-of-context) and write them as text
    Pretrain(PretrainArgs),
    /// Train the generic neural language model with mini-batch SGD
    TrainLm(TrainLmArgs),
    /// Fit one adaptation vector per document with resilient backprop
    FitDocvecs(FitDocvecsArgs),
    /// Rescore BM25 candidates with the mixed unigram/neural model
    Rerank(RerankArgs),
    /// Score a run file against relevance judgments (MAP/GMAP)
    Evaluate(EvaluateArgs),
    /// Rerank and evaluate across a list of neural mixture weights
    Sweep(SweepArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Report parameter counts for a model configuration
    Paramcount(ParamcountArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    docs: usize,
    #[arg(long, default_value_t = 50)]
    topics: usize,
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 100)]
    doc_len: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep stems occurring at least this many times
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NeuralArgs {
    /// M1 | M2 | M2Max
    #[arg(long)]
    arch: Option<String>,
    /// Model order; conditions on n-1 previous terms
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m0: Option<usize>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    #[arg(long)]
    kappa: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Neural (min-count filtered) vocabulary
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[command(flatten)]
    neural: NeuralArgs,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[command(flatten)]
    neural: NeuralArgs,
    /// Pretrained word vectors to initialize the embeddings from
    #[arg(long)]
    init_vectors: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitDocvecsArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// sum | product
    #[arg(long, default_value = "sum")]
    mode: String,
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Args)]
struct RerankCommonArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Retrieval vocabulary (unfiltered)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Neural vocabulary the model was trained on
    #[arg(long)]
    neural_vocab: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    docvecs: Option<PathBuf>,
    /// Tab-separated `topic<TAB>query text` file
    #[arg(long)]
    topics: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// BM25 candidates per topic
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    common: RerankCommonArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Second run; also reports the mean per-topic AP difference (run - baseline)
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: RerankCommonArgs,
    /// Comma-separated mixture weights, e.g. 0,0.01,0.1,0.5,1
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Directory receiving one run file per weight
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    dims: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ParamcountArgs {
    #[arg(long)]
    arch: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m0: usize,
    #[arg(long)]
    m1: usize,
    #[arg(long)]
    m2: usize,
    #[arg(long, default_value_t = 1)]
    kappa: usize,
    #[arg(long)]
    vocab_size: u64,
}

/// Optional defaults loaded from a TOML file; command-line flags win.
#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    paths: PathsSection,
    #[serde(default)]
    neural: NeuralSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    mix: MixSection,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    corpus: Option<PathBuf>,
    vocab: Option<PathBuf>,
    neural_vocab: Option<PathBuf>,
    index: Option<PathBuf>,
    model: Option<PathBuf>,
    docvecs: Option<PathBuf>,
    topics: Option<PathBuf>,
    qrels: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct NeuralSection {
    arch: Option<String>,
    n: Option<usize>,
    m0: Option<usize>,
    m1: Option<usize>,
    m2: Option<usize>,
    kappa: Option<usize>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    lr0: Option<f64>,
    decay: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    subsample: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct MixSection {
    lambda: Option<f64>,
    gamma: Option<f64>,
    lambdas: Option<Vec<f64>>,
}

fn load_config(flag: &Option<PathBuf>) -> Result<FileConfig> {
    let path = match flag
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    {
        Some(p) => p,
        None => return Ok(FileConfig::default()),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidArgument(format!("missing required --{flag} (or config entry)")))
}

fn read_corpus(path: &Path, stopwords: &Option<PathBuf>) -> Result<Vec<Document>> {
    let stops: Option<HashSet<String>> = match stopwords {
        Some(p) => Some(read_stopwords(p)?),
        None => None,
    };
    let is_jsonl = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl"));
    if is_jsonl {
        read_jsonl(path, stops.as_ref())
    } else {
        read_trec_sgml(path, stops.as_ref())
    }
}

fn read_topics(path: &Path, stopwords: &Option<PathBuf>) -> Result<BTreeMap<String, Vec<String>>> {
    use std::io::BufRead;
    let stops: Option<HashSet<String>> = match stopwords {
        Some(p) => Some(read_stopwords(p)?),
        None => None,
    };
    let reader = nnlm_ir::io::open_reader(path)?;
    let mut topics = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (topic, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno + 1, "expected `topic<TAB>query text`"))?;
        topics.insert(topic.trim().to_string(), tokenize_filtered(text, stops.as_ref()));
    }
    if topics.is_empty() {
        return Err(Error::Data(format!("no topics in {}", path.display())));
    }
    Ok(topics)
}

fn neural_config(args: &NeuralArgs, cfg: &NeuralSection) -> Result<NeuralConfig> {
    let arch = Arch::parse(
        &args
            .arch
            .clone()
            .or_else(|| cfg.arch.clone())
            .unwrap_or_else(|| "M1".to_string()),
    )?;
    let config = NeuralConfig {
        arch,
        n: args.n.or(cfg.n).unwrap_or(3),
        m0: args.m0.or(cfg.m0).unwrap_or(32),
        m1: args.m1.or(cfg.m1).unwrap_or(32),
        m2: args.m2.or(cfg.m2).unwrap_or(32),
        kappa: args.kappa.or(cfg.kappa).unwrap_or(2),
    };
    config.validate()?;
    Ok(config)
}

fn vocab_tree(vocab: &Vocabulary) -> Result<HuffmanTree> {
    build_huffman(&vocab.frequencies())
}

fn cmd_synth(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.or_else(|| file.paths.out.clone()), "out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let cfg = SynthConfig {
        num_docs: args.docs,
        num_topics: args.topics,
        vocab_size: args.vocab,
        doc_len: args.doc_len,
        seed: args.seed.or(file.train.seed).unwrap_or(42),
        ..SynthConfig::default()
    };
    let coll = generate(&cfg)?;
    let corpus_path = out.join("corpus.jsonl");
    write_atomic(&corpus_path, |w| {
        for doc in &coll.docs {
            let rec = serde_json::json!({
                "doc_id": doc.doc_id,
                "text": doc.tokens.join(" "),
            });
            writeln!(w, "{rec}").map_err(|e| Error::io(&corpus_path, e))?;
        }
        Ok(())
    })?;
    let topics_path = out.join("topics.tsv");
    write_atomic(&topics_path, |w| {
        for (topic, words) in &coll.queries {
            writeln!(w, "{topic}\t{}", words.join(" ")).map_err(|e| Error::io(&topics_path, e))?;
        }
        Ok(())
    })?;
    let qrels_path = out.join("qrels.txt");
    write_atomic(&qrels_path, |w| {
        for (topic, docs) in &coll.qrels.topics {
            for doc in docs {
                writeln!(w, "{topic} 0 {doc} 1").map_err(|e| Error::io(&qrels_path, e))?;
            }
        }
        Ok(())
    })?;
    println!(
        "wrote {} docs, {} topics under {}",
        coll.docs.len(),
        coll.queries.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_vocab(args: BuildVocabArgs, file: &FileConfig) -> Result<()> {
    let corpus = required(args.corpus.or_else(|| file.paths.corpus.clone()), "corpus")?;
    let out = required(args.out.or_else(|| file.paths.vocab.clone()), "out")?;
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::build(&docs, args.min_count)?;
    vocab.save(&out)?;
    println!(
        "{} stems (min count {}) -> {}",
        vocab.len(),
        args.min_count,
        out.display()
    );
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs, file: &FileConfig) -> Result<()> {
    let corpus = required(args.corpus.or_else(|| file.paths.corpus.clone()), "corpus")?;
    let vocab_path = required(args.vocab.or_else(|| file.paths.vocab.clone()), "vocab")?;
    let out = required(args.out.or_else(|| file.paths.index.clone()), "out")?;
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let encoded: Vec<(String, Vec<u32>)> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), vocab.encode(&d.tokens)))
        .collect();
    let index = InvertedIndex::build(&encoded)?;
    index.save(&out)?;
    println!(
        "{} docs, avg length {:.2} -> {}",
        index.num_docs(),
        index.avgdl(),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(args: PretrainArgs, file: &FileConfig) -> Result<()> {
    let corpus = required(args.corpus.or_else(|| file.paths.corpus.clone()), "corpus")?;
    let vocab_path = required(
        args.vocab.or_else(|| file.paths.neural_vocab.clone()),
        "vocab",
    )?;
    let out = required(args.out.or_else(|| file.paths.out.clone()), "out")?;
    let config = neural_config(&args.neural, &file.neural)?;
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let seqs: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(&d.tokens)).collect();
    let tree = vocab_tree(&vocab)?;
    let seed = args.seed.or(file.train.seed).unwrap_or(0);
    let mut params = NeuralParams::init(config, vocab.len(), seed)?;
    pretrain_cbow(&seqs, &mut params, &tree, args.epochs, args.window, args.lr)?;
    write_atomic(&out, |w| {
        writeln!(w, "{} {}", vocab.len(), params.config.m0).map_err(|e| Error::io(&out, e))?;
        for id in 0..vocab.len() {
            let stem = vocab.stem(id as u32).expect("id in range");
            let row = params.embeddings.row(id);
            let values: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{stem} {}", values.join(" ")).map_err(|e| Error::io(&out, e))?;
        }
        Ok(())
    })?;
    println!("{} vectors of dim {} -> {}", vocab.len(), params.config.m0, out.display());
    Ok(())
}

fn cmd_train_lm(args: TrainLmArgs, file: &FileConfig) -> Result<()> {
    let corpus = required(args.corpus.or_else(|| file.paths.corpus.clone()), "corpus")?;
    let vocab_path = required(
        args.vocab.or_else(|| file.paths.neural_vocab.clone()),
        "vocab",
    )?;
    let out = required(args.out.or_else(|| file.paths.model.clone()), "out")?;
    let config = neural_config(&args.neural, &file.neural)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        lr0: args.lr0.or(file.train.lr0).unwrap_or(defaults.lr0),
        decay: args.decay.or(file.train.decay).unwrap_or(defaults.decay),
        batch_size: args
            .batch_size
            .or(file.train.batch_size)
            .unwrap_or(defaults.batch_size),
        max_iters: args.steps.or(file.train.steps).unwrap_or(defaults.max_iters),
        subsample_s: args
            .subsample
            .or(file.train.subsample)
            .unwrap_or(defaults.subsample_s),
        seed: args.seed.or(file.train.seed).unwrap_or(defaults.seed),
    };
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let seqs: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(&d.tokens)).collect();
    let tree = vocab_tree(&vocab)?;
    let weights = word_weights(&vocab, cfg.subsample_s);
    let mut params = NeuralParams::init(config, vocab.len(), cfg.seed)?;
    if let Some(vectors) = &args.init_vectors {
        let n = load_word_vectors(vectors, &vocab, &mut params)?;
        println!("initialized {n} embeddings from {}", vectors.display());
    }
    let trace = train_generic(&seqs, &mut params, &tree, &weights, &cfg)?;
    let stride = (cfg.max_iters / 20).max(1);
    for log in trace
        .iter()
        .filter(|l| l.step % stride == 0 || l.step + 1 == cfg.max_iters)
    {
        println!(
            "step {:>6}  lr {:.6}  nll {:.4}  ppl {:.2}",
            log.step, log.lr, log.nll, log.perplexity
        );
    }
    save_model(&out, &params)?;
    println!("model -> {}", out.display());
    Ok(())
}

fn cmd_fit_docvecs(args: FitDocvecsArgs, file: &FileConfig, threads: usize) -> Result<()> {
    let corpus = required(args.corpus.or_else(|| file.paths.corpus.clone()), "corpus")?;
    let vocab_path = required(
        args.vocab.or_else(|| file.paths.neural_vocab.clone()),
        "vocab",
    )?;
    let model_path = required(args.model.or_else(|| file.paths.model.clone()), "model")?;
    let out = required(args.out.or_else(|| file.paths.docvecs.clone()), "out")?;
    let mode = MergeMode::parse(&args.mode)?;
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let params = load_model(&model_path)?;
    if params.vocab_size() != vocab.len() {
        return Err(Error::Data(format!(
            "model vocabulary size {} does not match vocabulary file ({})",
            params.vocab_size(),
            vocab.len()
        )));
    }
    let tree = vocab_tree(&vocab)?;
    let subsample = args
        .subsample
        .or(file.train.subsample)
        .unwrap_or(TrainConfig::default().subsample_s);
    let weights = word_weights(&vocab, subsample);
    let rprop = RpropConfig::default();
    let encoded: Vec<(String, Vec<u32>)> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), vocab.encode(&d.tokens)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let fits: Vec<Result<(String, nnlm_ir::train::DocFit)>> = pool.install(|| {
        use rayon::prelude::*;
        encoded
            .par_iter()
            .map(|(doc_id, ids)| {
                let fit = fit_doc_vector(ids, &params, &tree, &weights, mode, &rprop)?;
                Ok((doc_id.clone(), fit))
            })
            .collect()
    });

    let mut table = DocVectorTable::new(mode, params.config.state_dim());
    let mut improved = 0usize;
    let mut nonempty = 0usize;
    for fit in fits {
        let (doc_id, fit) = fit?;
        if !fit.empty_doc {
            nonempty += 1;
            if fit.nll < fit.identity_nll {
                improved += 1;
            }
        }
        table.vectors.insert(doc_id, fit.vector.values);
    }
    table.save(&out)?;
    println!(
        "{} vectors ({} of {} non-empty docs improved) -> {}",
        table.vectors.len(),
        improved,
        nonempty,
        out.display()
    );
    Ok(())
}

/// Loads everything reranking needs and computes BM25 candidates per topic.
struct RerankInputs {
    vocab: Vocabulary,
    neural_vocab: Vocabulary,
    params: NeuralParams,
    tree: HuffmanTree,
    coll_lm: CountLM,
    doc_terms: HashMap<String, Vec<u32>>,
    dv_table: Option<DocVectorTable>,
    topics: BTreeMap<String, Vec<String>>,
    candidates: Run,
    gamma: f64,
}

fn load_rerank_inputs(args: &RerankCommonArgs, file: &FileConfig) -> Result<RerankInputs> {
    let corpus = required(
        args.corpus.clone().or_else(|| file.paths.corpus.clone()),
        "corpus",
    )?;
    let vocab_path = required(
        args.vocab.clone().or_else(|| file.paths.vocab.clone()),
        "vocab",
    )?;
    let nvocab_path = required(
        args.neural_vocab
            .clone()
            .or_else(|| file.paths.neural_vocab.clone()),
        "neural-vocab",
    )?;
    let index_path = required(
        args.index.clone().or_else(|| file.paths.index.clone()),
        "index",
    )?;
    let model_path = required(
        args.model.clone().or_else(|| file.paths.model.clone()),
        "model",
    )?;
    let topics_path = required(
        args.topics.clone().or_else(|| file.paths.topics.clone()),
        "topics",
    )?;
    let docs = read_corpus(&corpus, &args.stopwords)?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let neural_vocab = Vocabulary::load(&nvocab_path)?;
    let index = InvertedIndex::load(&index_path)?;
    let params = load_model(&model_path)?;
    if params.vocab_size() != neural_vocab.len() {
        return Err(Error::Data(format!(
            "model vocabulary size {} does not match neural vocabulary ({})",
            params.vocab_size(),
            neural_vocab.len()
        )));
    }
    let tree = vocab_tree(&neural_vocab)?;
    let dv_table = match args.docvecs.clone().or_else(|| file.paths.docvecs.clone()) {
        Some(p) => Some(DocVectorTable::load(&p)?),
        None => None,
    };
    if let Some(t) = &dv_table {
        if t.dim != params.config.state_dim() {
            return Err(Error::Data(format!(
                "document vectors of dim {} do not match model state dim {}",
                t.dim,
                params.config.state_dim()
            )));
        }
    }
    let topics = read_topics(&topics_path, &args.stopwords)?;

    let mut coll_lm = CountLM::new(1)?;
    let mut doc_terms = HashMap::new();
    for d in &docs {
        let ids = vocab.encode(&d.tokens);
        coll_lm.add_sequence(&ids);
        doc_terms.insert(d.doc_id.clone(), ids);
    }

    let mut candidates = Run::new();
    for (topic, stems) in &topics {
        let query_ids = vocab.encode(stems);
        let ranked = index.retrieve_topk(&query_ids, args.top_k, DEFAULT_K1, DEFAULT_B);
        candidates.insert(topic.clone(), ranked);
    }
    let gamma = args.gamma.or(file.mix.gamma).unwrap_or(0.5);

    Ok(RerankInputs {
        vocab,
        neural_vocab,
        params,
        tree,
        coll_lm,
        doc_terms,
        dv_table,
        topics,
        candidates,
        gamma,
    })
}

impl RerankInputs {
    fn models(&self) -> RerankModels<'_> {
        RerankModels {
            retrieval_vocab: &self.vocab,
            coll_lm: &self.coll_lm,
            doc_terms: &self.doc_terms,
            scorer: NeuralScorer {
                params: &self.params,
                tree: &self.tree,
                vocab: &self.neural_vocab,
            },
            dv_table: self.dv_table.as_ref(),
        }
    }

    fn tag(&self, lambda: f64) -> String {
        let mode = self
            .dv_table
            .as_ref()
            .map_or("generic", |t| t.mode.name());
        format!(
            "{}-{}-l{}-g{}",
            self.params.config.arch.name(),
            mode,
            lambda,
            self.gamma
        )
    }
}

fn cmd_rerank(args: RerankArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.or_else(|| file.paths.out.clone()), "out")?;
    let lambda = args.lambda.or(file.mix.lambda).unwrap_or(0.5);
    let inputs = load_rerank_inputs(&args.common, file)?;
    let mix = MixParams {
        lambda,
        gamma: inputs.gamma,
    };
    let run = rerank_run(&inputs.candidates, &inputs.topics, &mix, &inputs.models())?;
    write_run(&out, &run, &inputs.tag(lambda))?;
    println!("{} topics reranked -> {}", run.len(), out.display());
    Ok(())
}

fn print_eval(label: &str, aps: &BTreeMap<String, f64>, skipped: &[String]) -> Result<()> {
    let values: Vec<f64> = aps.values().copied().collect();
    if values.is_empty() {
        return Err(Error::Data("no topics with relevance judgments".into()));
    }
    let (map, gmap) = map_gmap(&values)?;
    println!("{label}: topics={} MAP={map:.4} GMAP={gmap:.4}", aps.len());
    if !skipped.is_empty() {
        println!("{label}: skipped (no judgments): {}", skipped.join(", "));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let run_path = required(args.run, "run")?;
    let qrels_path = required(
        args.qrels.or_else(|| file.paths.qrels.clone()),
        "qrels",
    )?;
    let qrels = read_qrels(&qrels_path)?;
    let run = read_run(&run_path)?;
    let (aps, skipped) = evaluate_run(&run, &qrels);
    print_eval("run", &aps, &skipped)?;
    if let Some(baseline_path) = args.baseline {
        let baseline = read_run(&baseline_path)?;
        let (base_aps, base_skipped) = evaluate_run(&baseline, &qrels);
        print_eval("baseline", &base_aps, &base_skipped)?;
        let delta = delta_report(&aps, &base_aps)?;
        println!("delta: mean AP difference = {delta:.4}");
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, file: &FileConfig) -> Result<()> {
    let out = required(args.out.or_else(|| file.paths.out.clone()), "out")?;
    let qrels_path = required(
        args.qrels.or_else(|| file.paths.qrels.clone()),
        "qrels",
    )?;
    let lambdas = if args.lambdas.is_empty() {
        file.mix
            .lambdas
            .clone()
            .unwrap_or_else(|| vec![0.0, 0.01, 0.1, 0.5, 1.0])
    } else {
        args.lambdas
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let qrels = read_qrels(&qrels_path)?;
    let inputs = load_rerank_inputs(&args.common, file)?;
    let runs = sweep_lambda(
        &inputs.candidates,
        &inputs.topics,
        &lambdas,
        inputs.gamma,
        &inputs.models(),
    )?;
    println!("{:>8}  {:>8}  {:>8}", "lambda", "MAP", "GMAP");
    for (lambda, tag, run) in &runs {
        let path = out.join(format!("run-l{lambda}.txt"));
        write_run(&path, run, tag)?;
        let (aps, _skipped) = evaluate_run(run, &qrels);
        let values: Vec<f64> = aps.values().copied().collect();
        match map_gmap(&values) {
            Ok((map, gmap)) => println!("{lambda:>8}  {map:>8.4}  {gmap:>8.4}"),
            Err(e) => println!("{lambda:>8}  {:>8}  {:>8}  ({e})", "failed", "failed"),
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    for arch in [Arch::M1, Arch::M2, Arch::M2Max] {
        for mode in [None, Some(MergeMode::Sum), Some(MergeMode::Product)] {
            let config = NeuralConfig {
                arch,
                n: 3,
                m0: args.dims,
                m1: args.dims,
                m2: args.dims,
                kappa: 2,
            };
            let mut params = NeuralParams::init(config, args.vocab, args.seed)?;
            // give the zero-initialized output layer some signal to check
            for (name, t) in params.tensors_mut() {
                if name == "hsm" {
                    for (i, v) in t.iter_mut().enumerate() {
                        *v = 0.05 * ((i % 13) as f64 - 6.0);
                    }
                }
            }
            let freqs: Vec<u64> = (1..=args.vocab as u64).collect();
            let tree = build_huffman(&freqs)?;
            let dim = params.config.state_dim();
            let dv = mode.map(|m| {
                let mut d = DocVector::identity(m, dim);
                for (i, v) in d.values.iter_mut().enumerate() {
                    *v += 0.1 * (i as f64 + 1.0);
                }
                d
            });
            let context = vec![1u32, params.padding_id()];
            let target = (args.vocab as u32 / 2).min(args.vocab as u32 - 1);
            let report = gradient_check(
                &mut params,
                &tree,
                &context,
                target,
                dv.as_ref(),
                FitScope::All,
                args.step,
            )?;
            let err = report.max_rel_err();
            worst = worst.max(err);
            println!(
                "{:<6} {:<8} max rel err {err:.3e}",
                arch.name(),
                mode.map_or("generic", |m| m.name()),
            );
        }
    }
    if worst >= args.tolerance {
        return Err(Error::Numerical(format!(
            "max relative error {worst:.3e} exceeds tolerance {:.1e}",
            args.tolerance
        )));
    }
    println!("max relative error {worst:.3e} < {:.1e}", args.tolerance);
    Ok(())
}

fn cmd_paramcount(args: ParamcountArgs) -> Result<()> {
    let config = NeuralConfig {
        arch: Arch::parse(&args.arch)?,
        n: args.n,
        m0: args.m0,
        m1: args.m1,
        m2: args.m2,
        kappa: args.kappa,
    };
    config.validate()?;
    println!(
        "{} phi={} word_hsm={}",
        config.arch.name(),
        config.phi_param_count(),
        config.word_hsm_param_count(args.vocab_size)
    );
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap renders its own message; keep it verbatim
        let _ = e.print();
        std::process::exit(1);
    });
    let cli = match cli {
        Ok(c) => c,
        Err(_) => unreachable!(),
    };
    if cli.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be at least 1".into()));
    }
    let file = load_config(&cli.config)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &file),
        Command::BuildVocab(a) => cmd_build_vocab(a, &file),
        Command::BuildIndex(a) => cmd_build_index(a, &file),
        Command::Pretrain(a) => cmd_pretrain(a, &file),
        Command::TrainLm(a) => cmd_train_lm(a, &file),
        Command::FitDocvecs(a) => cmd_fit_docvecs(a, &file, cli.threads),
        Command::Rerank(a) => cmd_rerank(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Sweep(a) => cmd_sweep(a, &file),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Paramcount(a) => cmd_paramcount(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
