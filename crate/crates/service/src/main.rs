use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use apcg_core::corpus::{
    clean_corpus, linearize_product, make_psg_example, make_sr_example, read_corpus, read_jsonl, split_sentences,
    synthetic_records, tokenize, write_jsonl, CleanRules, LinearizeConfig, PsgConfig, Vocab,
};
use apcg_core::decode::{generate_monolithic, BeamConfig};
use apcg_core::model::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, train, Model, ModelConfig, ModelParams, Precision,
    TrainConfig, TrainObjective, TrainPair,
};
use apcg_core::numerics::AdamConfig;
use apcg_core::quality::{featurize, synthetic_grammar_corpus, train_adaboost, MetricReport};
use apcg_service::bench::{run_bench, BenchReport};
use apcg_service::http::{serve, AppState};
use apcg_service::store::{DescriptionStore, StoreKey};
use apcg_service::{open_service, record_pairs, DataDir, GenerateRequest, ServiceConfig, DATA_DIR_ENV, LISTEN_ENV};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "apcg", version, about = "Product copywriting: corpus, training, generation and serving")]
struct Cli {
    /// Data directory holding corpus, checkpoints and the description store.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus preparation.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Sequence-to-sequence pre-training on unlabelled documents.
    Pretrain(PretrainArgs),
    /// Fine-tune on record/description pairs.
    Finetune(FinetuneArgs),
    /// Generate one description through the service path (cache, filters, queue).
    Generate(GenerateArgs),
    /// Generate, filter and enqueue many skus.
    BatchGenerate(BatchArgs),
    /// Score generations against reference descriptions; prints a TSV table.
    Eval(EvalArgs),
    /// Run the HTTP/JSON service.
    Serve(ServeArgs),
    /// Latency and throughput bench.
    Bench(BenchArgs),
    /// Clean the raw corpus, fine-tune the current model and install it.
    Retrain(RetrainArgs),
    /// Grammar-filter ensemble.
    Grammar {
        #[command(subcommand)]
        command: GrammarCommand,
    },
    /// Appends numbered records to a journal, printing each acknowledgement.
    #[command(hide = true)]
    JournalSoak {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        count: usize,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write a seeded synthetic raw corpus and pre-training documents.
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Normalize and filter the raw corpus.
    Clean {
        #[arg(long)]
        input: Option<PathBuf>,
        /// JSON cleaning rules; defaults apply when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Build the vocabulary from the cleaned corpus and documents.
    Build {
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long, default_value_t = 20_000)]
        max_vocab: usize,
    },
}

#[derive(Subcommand)]
enum GrammarCommand {
    /// Train on a seeded synthetic corpus of well-formed and degenerate texts.
    Train {
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        rounds: usize,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    encoder_layers: usize,
    #[arg(long, default_value_t = 1)]
    decoder_layers: usize,
    #[arg(long, default_value_t = 64)]
    ff_dim: usize,
    #[arg(long, default_value_t = 96)]
    max_positions: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Disable the copy head.
    #[arg(long)]
    no_pointer: bool,
}

impl ModelArgs {
    fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            ff_dim: self.ff_dim,
            max_positions: self.max_positions,
            dropout: self.dropout,
            pointer: !self.no_pointer,
        }
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            clip_norm: (self.clip > 0.0).then_some(self.clip),
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sr,
    Psg,
    Mixed,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    /// Shuffled copies per document for sentence re-ordering.
    #[arg(long, default_value_t = 2)]
    sr_per_doc: usize,
    /// Predict the selected sentences from the rest instead of the reverse.
    #[arg(long)]
    psg_reverse: bool,
    /// Keep the copy head off during pre-training.
    #[arg(long)]
    no_pretrain_pointer: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Starting checkpoint; defaults to the pre-trained one when present.
    #[arg(long)]
    init: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    sku: Option<String>,
    /// JSON file with an inline product record.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct BatchArgs {
    /// File with one sku per line; every catalog sku when omitted.
    #[arg(long)]
    skus: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Records with reference descriptions; the cleaned corpus by default.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "Transformer-Pointer")]
    label: String,
    #[arg(long, default_value_t = 4)]
    beam_size: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Evaluate at most this many records.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = LISTEN_ENV, default_value = "127.0.0.1:8080")]
    listen: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    requests: usize,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// JSON array of latencies in ms to report on instead of measuring.
    #[arg(long)]
    inject: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
}

#[derive(Args)]
struct RetrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// `host:port` of a running service to tell to reload the new checkpoint.
    #[arg(long)]
    notify: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    id: String,
    text: String,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let dir = DataDir::new(&cli.data_dir);
    match cli.command {
        Command::Corpus { command } => corpus(&dir, command),
        Command::Pretrain(args) => pretrain(&dir, args),
        Command::Finetune(args) => finetune(&dir, args),
        Command::Generate(args) => generate(&dir, args),
        Command::BatchGenerate(args) => batch_generate(&dir, args),
        Command::Eval(args) => eval(&dir, args),
        Command::Serve(args) => serve_cmd(&dir, args),
        Command::Bench(args) => bench(&dir, args),
        Command::Retrain(args) => retrain(&dir, args),
        Command::Grammar { command } => grammar(&dir, command),
        Command::JournalSoak { path, count } => journal_soak(&path, count),
    }
}

fn corpus(dir: &DataDir, command: CorpusCommand) -> Result<()> {
    match command {
        CorpusCommand::Synth { n, seed } => {
            let records = synthetic_records(n, seed);
            ensure_parent(&dir.raw_corpus())?;
            write_jsonl(&dir.raw_corpus(), &records)?;
            let docs: Vec<DocumentLine> = records
                .iter()
                .map(|r| DocumentLine {
                    id: r.sku.clone(),
                    text: format!(
                        "{} {} . the {} is {} .",
                        r.description.as_deref().unwrap_or_default(),
                        r.slogan,
                        r.title,
                        r.category
                    ),
                })
                .collect();
            write_jsonl(&dir.documents(), &docs)?;
            println!("wrote {} records to {}", records.len(), dir.raw_corpus().display());
        }
        CorpusCommand::Clean { input, rules } => {
            let input = input.unwrap_or_else(|| dir.raw_corpus());
            let rules: CleanRules = match rules {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => CleanRules::default(),
            };
            let records = read_corpus(&input).with_context(|| format!("reading {}", input.display()))?;
            let (kept, report) = clean_corpus(records, &rules);
            ensure_parent(&dir.clean_corpus())?;
            write_jsonl(&dir.clean_corpus(), &kept)?;
            std::fs::write(dir.clean_report(), serde_json::to_string_pretty(&report)?)?;
            print_json(&report)?;
        }
        CorpusCommand::Build { min_freq, max_vocab } => {
            let records = read_corpus(&dir.clean_corpus()).context("run `corpus clean` first")?;
            let config = LinearizeConfig::default();
            let mut seqs: Vec<Vec<String>> = Vec::new();
            for r in &records {
                seqs.push(linearize_product(r, &config)?);
                if let Some(d) = &r.description {
                    seqs.push(tokenize(d, config.mode));
                }
            }
            if dir.documents().exists() {
                for d in read_jsonl::<DocumentLine>(&dir.documents())? {
                    seqs.push(tokenize(&d.text, config.mode));
                }
            }
            let vocab = Vocab::build(seqs, min_freq, max_vocab)?;
            std::fs::write(dir.vocab(), serde_json::to_string(&vocab)?)?;
            println!("vocabulary of {} tokens written to {}", vocab.len(), dir.vocab().display());
        }
    }
    Ok(())
}

fn load_vocab(dir: &DataDir) -> Result<Vocab> {
    let text = std::fs::read_to_string(dir.vocab()).context("run `corpus build` first")?;
    Ok(serde_json::from_str(&text)?)
}

fn documents(dir: &DataDir) -> Result<Vec<DocumentLine>> {
    if dir.documents().exists() {
        return Ok(read_jsonl(&dir.documents())?);
    }
    let records = read_corpus(&dir.clean_corpus())?;
    Ok(records
        .into_iter()
        .filter_map(|r| {
            r.description.map(|text| DocumentLine {
                id: r.sku,
                text,
            })
        })
        .collect())
}

fn pretrain(dir: &DataDir, args: PretrainArgs) -> Result<()> {
    let vocab = load_vocab(dir)?;
    let mode = LinearizeConfig::default().mode;
    let mut sr = Vec::new();
    let mut psg = Vec::new();
    let mut skipped = 0;
    for (i, d) in documents(dir)?.iter().enumerate() {
        let Ok(doc) = split_sentences(&d.id, &d.text, mode) else {
            skipped += 1;
            continue;
        };
        if doc.m() < 2 {
            skipped += 1;
            continue;
        }
        for k in 0..args.sr_per_doc {
            let seed = args.train.seed ^ ((i as u64) << 8) ^ k as u64;
            sr.push(TrainPair::from(make_sr_example(&doc, seed)?));
        }
        psg.push(TrainPair::from(make_psg_example(&doc, &PsgConfig { reverse: args.psg_reverse })?));
    }
    let (pairs, objective) = match args.objective {
        ObjectiveArg::Sr => (sr, TrainObjective::Sr),
        ObjectiveArg::Psg => (psg, TrainObjective::Psg),
        ObjectiveArg::Mixed => (sr.into_iter().chain(psg).collect(), TrainObjective::Mixed),
    };
    if pairs.is_empty() {
        bail!("no document with at least two sentences");
    }
    let params = ModelParams::random(args.model.config(vocab.len()), args.train.seed)?;
    let mut model = Model::new(params, vocab)?;
    let config = TrainConfig {
        pointer_in_pretraining: !args.no_pretrain_pointer,
        ..args.train.config()
    };
    let report = train(&mut model, &pairs, objective, &config)?;
    ensure_parent(&dir.pretrained())?;
    save_checkpoint(&model, &dir.pretrained(), Precision::F64)?;
    eprintln!("{} examples, {} documents skipped", pairs.len(), skipped);
    print_json(&serde_json::json!({"report": report, "model_version": model.version, "checkpoint": dir.pretrained()}))
}

fn finetune(dir: &DataDir, args: FinetuneArgs) -> Result<()> {
    let vocab = load_vocab(dir)?;
    let init = args.init.clone().or_else(|| dir.pretrained().exists().then(|| dir.pretrained()));
    let mut model = match init {
        Some(p) => load_checkpoint_for(&p, &vocab)?,
        None => Model::new(ModelParams::random(args.model.config(vocab.len()), args.train.seed)?, vocab)?,
    };
    let records = read_corpus(&dir.clean_corpus()).context("run `corpus clean` first")?;
    let pairs = record_pairs(&records, &LinearizeConfig::default())?;
    let report = train(&mut model, &pairs, TrainObjective::Finetune, &args.train.config())?;
    ensure_parent(&dir.model())?;
    save_checkpoint(&model, &dir.model(), Precision::F64)?;
    print_json(&serde_json::json!({"report": report, "model_version": model.version, "checkpoint": dir.model()}))
}

fn generate(dir: &DataDir, args: GenerateArgs) -> Result<()> {
    let service = open_service(dir, ServiceConfig::default())?;
    let record = match &args.record {
        Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let req = GenerateRequest {
        sku: args.sku,
        record,
        beam_size: args.beam_size,
        max_len: args.max_len,
    };
    print_json(&service.generate(&req)?)
}

fn batch_generate(dir: &DataDir, args: BatchArgs) -> Result<()> {
    let service = open_service(dir, ServiceConfig::default())?;
    let skus: Vec<String> = match &args.skus {
        Some(p) => std::fs::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
        None => service.skus(),
    };
    print_json(&service.batch_generate(&skus, args.beam_size)?)
}

fn eval(dir: &DataDir, args: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint.clone().unwrap_or_else(|| dir.model()))?;
    let records = read_corpus(&args.input.clone().unwrap_or_else(|| dir.clean_corpus()))?;
    let lin = LinearizeConfig::default();
    let beam = BeamConfig {
        beam_size: args.beam_size,
        max_len: args.max_len,
        ..BeamConfig::default()
    };
    let mut pairs = Vec::new();
    for r in records.iter().filter(|r| r.description.is_some()).take(args.limit.unwrap_or(usize::MAX)) {
        let source = linearize_product(r, &lin)?;
        let out = generate_monolithic(&model, &source, &beam)?;
        let text = out.first().map(|g| g.tokens.join(" ")).unwrap_or_default();
        pairs.push((text, r.description.clone().unwrap_or_default()));
    }
    if pairs.is_empty() {
        bail!("no records with reference descriptions");
    }
    let report = MetricReport::compute(&pairs)?;
    print!("{}", report.to_tsv(&args.label));
    Ok(())
}

fn serve_cmd(dir: &DataDir, args: ServeArgs) -> Result<()> {
    let service = Arc::new(open_service(dir, ServiceConfig::default())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        eprintln!(
            "listening on {} (model {})",
            listener.local_addr()?,
            service.health().model_version.as_deref().unwrap_or("none")
        );
        serve(
            AppState {
                service,
                data: Some(dir.clone()),
            },
            listener,
        )
        .await?;
        Ok(())
    })
}

fn bench(dir: &DataDir, args: BenchArgs) -> Result<()> {
    if let Some(p) = &args.inject {
        let sample: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        return print_json(&BenchReport::from_injected(&sample)?);
    }
    let service = open_service(dir, ServiceConfig::default())?;
    let skus = service.skus();
    if skus.is_empty() {
        bail!("the catalog is empty");
    }
    let work: Vec<&String> = skus.iter().cycle().take(args.requests).collect();
    let run = run_bench(&work, args.concurrency, |sku| {
        service.generate(&GenerateRequest {
            sku: Some((*sku).clone()),
            beam_size: args.beam_size,
            ..Default::default()
        })
        .map(|_| ())
    })?;
    print_json(&run.report)
}

fn retrain(dir: &DataDir, args: RetrainArgs) -> Result<()> {
    let records = read_corpus(&dir.raw_corpus()).context("no raw corpus")?;
    let (kept, report) = clean_corpus(records, &CleanRules::default());
    write_jsonl(&dir.clean_corpus(), &kept)?;
    let current = if dir.model().exists() { dir.model() } else { dir.pretrained() };
    let mut model = load_checkpoint(&current).with_context(|| format!("loading {}", current.display()))?;
    let pairs = record_pairs(&kept, &LinearizeConfig::default())?;
    let before = model.version.clone();
    let train_report = train(&mut model, &pairs, TrainObjective::Finetune, &args.train.config())?;
    // Written to a temporary file and renamed into place.
    save_checkpoint(&model, &dir.model(), Precision::F64)?;
    let mut out = serde_json::json!({
        "clean": report,
        "train": train_report,
        "previous_version": before,
        "model_version": model.version,
    });
    if let Some(addr) = &args.notify {
        out["reload"] = serde_json::from_str(&post_empty(addr, "/v1/admin/reload")?)
            .unwrap_or(serde_json::Value::Null);
    }
    print_json(&out)
}

/// Minimal HTTP/1.1 POST with an empty body; returns the response body.
fn post_empty(addr: &str, path: &str) -> Result<String> {
    let mut s = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
    write!(s, "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")?;
    let mut resp = String::new();
    s.read_to_string(&mut resp)?;
    let (head, body) = resp.split_once("\r\n\r\n").unwrap_or((&resp, ""));
    if !head.starts_with("HTTP/1.1 200") {
        bail!("reload failed: {}", head.lines().next().unwrap_or_default());
    }
    Ok(body.to_owned())
}

fn grammar(dir: &DataDir, command: GrammarCommand) -> Result<()> {
    let GrammarCommand::Train { n, seed, rounds } = command;
    let train_set = synthetic_grammar_corpus(n, seed);
    let test_set = synthetic_grammar_corpus(n / 2, seed.wrapping_add(1));
    let (xs, ys) = featurize(&train_set, None);
    let ensemble = train_adaboost(&xs, &ys, rounds)?;
    let (tx, ty) = featurize(&test_set, None);
    std::fs::create_dir_all(&dir.root)?;
    std::fs::write(dir.grammar(), serde_json::to_string_pretty(&ensemble)?)?;
    print_json(&serde_json::json!({
        "rounds": ensemble.stumps.len(),
        "train_error": ensemble.error_rate(&xs, &ys),
        "held_out_accuracy": 1.0 - ensemble.error_rate(&tx, &ty),
        "path": dir.grammar(),
    }))
}

fn journal_soak(path: &Path, count: usize) -> Result<()> {
    let store: DescriptionStore<String> = DescriptionStore::open(path)?;
    let start = store.recovery().records;
    let out = std::io::stdout();
    for i in start..start + count {
        store.put(StoreKey::new(format!("sku{}", i % 7), "v1"), format!("value-{i}"))?;
        let mut o = out.lock();
        writeln!(o, "ack {i}")?;
        o.flush()?;
    }
    Ok(())
}
