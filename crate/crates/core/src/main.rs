use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use binadv::asm::{normalize_for_sequence, parse_instruction};
use binadv::attacks::Mode;
use binadv::embedding::{token_corpus, train_skipgram, EmbeddingTable, SkipGramParams};
use binadv::eval::{calibrate_thresholds, load_fixtures, run_experiment, AttackKind, DatasetKind, EvalError, RunConfig, Setting};
use binadv::features::ModelFamily;
use binadv::function::synth::{generate, SynthConfig};
use binadv::function::{load_corpus, write_corpus};
use binadv::models::{labeled_pairs, read_manifest, train_siamese, ModelInput, SimilarityModel, TrainConfig};

#[derive(Parser)]
#[command(name = "binadv", version, about = "Dead-branch adversarial attacks on binary similarity models")]
struct Cli {
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Embed(EmbedCmd),
    #[command(subcommand)]
    Model(ModelCmd),
    #[command(subcommand)]
    Attack(AttackCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Writes a synthetic corpus of function families as JSON lines.
    Synth {
        #[arg(long, default_value_t = 40)]
        families: usize,
        #[arg(long, default_value_t = 4)]
        variants: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Trains skip-gram instruction embeddings on a corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        window: usize,
        #[arg(long, default_value_t = 8)]
        min_count: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the nearest tokens of an instruction.
    Neighbors {
        #[arg(long)]
        embeddings: PathBuf,
        /// Instruction text, e.g. "add rax, rbx".
        #[arg(long)]
        instruction: String,
        #[arg(long, default_value_t = 10)]
        m: usize,
    },
}

#[derive(Args)]
struct ModelSource {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Labeled pairs, alternating similar and dissimilar.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Trains a surrogate on labeled pairs with a siamese objective.
    Train {
        #[arg(long)]
        model: ModelFamily,
        #[command(flatten)]
        source: ModelSource,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the manifest of a weight file.
    Describe {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Estimates success thresholds from similar and dissimilar scores.
    Calibrate {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        source: ModelSource,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Runs an attack grid and writes per-pair and aggregate reports.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "spatial")]
    attack: Vec<AttackKind>,
    #[arg(long)]
    mode: Mode,
    #[arg(long)]
    model: ModelFamily,
    #[arg(long)]
    dataset: DatasetKind,
    /// Repeatable or comma-separated; all four when absent.
    #[arg(long, value_delimiter = ',')]
    setting: Vec<Setting>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.75)]
    r: f64,
    #[arg(long, default_value_t = 10)]
    c: usize,
    #[arg(long, default_value_t = 5)]
    topk: usize,
    #[arg(long, default_value_t = 400)]
    cand: usize,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gcam_iters: Option<usize>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            attacks: self.attack,
            mode: self.mode,
            model: self.model,
            dataset: self.dataset,
            settings: if self.setting.is_empty() { Setting::ALL.to_vec() } else { self.setting },
            tau: self.tau,
            epsilon: self.epsilon,
            r: self.r,
            c: self.c,
            topk: self.topk,
            cand: self.cand,
            pairs: self.pairs,
            seed: self.seed,
            gcam_iters: self.gcam_iters,
            corpus: Some(self.corpus),
            embeddings: self.embeddings,
            weights: self.weights,
            out: self.out,
        }
    }
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn load_table(path: &Option<PathBuf>) -> Result<Option<Arc<EmbeddingTable>>, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => Some(Arc::new(EmbeddingTable::load(p)?)),
        None => None,
    })
}

fn corpus_cmd(cmd: CorpusCmd) -> CliResult {
    let CorpusCmd::Synth { families, variants, seed, out } = cmd;
    let fs = generate(&SynthConfig { families, variants, seed, ..Default::default() });
    let mut w = BufWriter::new(File::create(&out)?);
    write_corpus(&mut w, &fs)?;
    w.flush()?;
    log::info!("wrote {} functions to {}", fs.len(), out.display());
    Ok(())
}

fn embed_cmd(cmd: EmbedCmd) -> CliResult {
    match cmd {
        EmbedCmd::Train { corpus, dim, window, min_count, epochs, seed, out } => {
            let fs = load_corpus(&corpus)?;
            let params = SkipGramParams { dim, window, min_count, epochs, seed, ..Default::default() };
            let table = train_skipgram(&token_corpus(&fs), &params)?;
            table.save(&out)?;
            log::info!("{} tokens of dimension {dim} written to {}", table.len(), out.display());
        }
        EmbedCmd::Neighbors { embeddings, instruction, m } => {
            let table = EmbeddingTable::load(&embeddings)?;
            let token = normalize_for_sequence(&parse_instruction(&instruction)?);
            let mut out = io::stdout().lock();
            for t in table.nearest_neighbors(&token, m)? {
                writeln!(out, "{t}")?;
            }
        }
    }
    Ok(())
}

fn inputs(model: &SimilarityModel, fs: &[binadv::function::BinaryFunction]) -> Vec<ModelInput> {
    let ex = model.extractor();
    fs.iter().map(|f| ModelInput::of(&ex.extract(f))).collect()
}

fn model_cmd(cmd: ModelCmd) -> CliResult {
    match cmd {
        ModelCmd::Train { model, source, epochs, lr, out } => {
            let fs = load_corpus(&source.corpus)?;
            let table = load_table(&source.embeddings)?;
            let mut m = SimilarityModel::new(model, source.seed, table)?;
            let pairs = labeled_pairs(&fs, source.pairs, source.seed);
            let xs = inputs(&m, &fs);
            let report = train_siamese(&mut m, &xs, &pairs, &TrainConfig { epochs, lr, ..Default::default() });
            m.save(&out)?;
            log::info!(
                "loss {:.4} -> {:.4}, weights written to {}",
                report.losses[0],
                report.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        ModelCmd::Describe { weights } => {
            println!("{}", serde_json::to_string_pretty(&read_manifest(&weights)?)?);
        }
        ModelCmd::Calibrate { weights, source } => {
            let fs = load_corpus(&source.corpus)?;
            let m = SimilarityModel::load(&weights, load_table(&source.embeddings)?)?;
            let xs = inputs(&m, &fs);
            let (mut similar, mut dissimilar) = (Vec::new(), Vec::new());
            for p in labeled_pairs(&fs, source.pairs, source.seed) {
                let s = m.sim_inputs(&xs[p.a], &xs[p.b]);
                if p.label > 0.5 {
                    similar.push(s);
                } else {
                    dissimilar.push(s);
                }
            }
            println!("{}", serde_json::to_string_pretty(&calibrate_thresholds(&similar, &dissimilar)?)?);
        }
    }
    Ok(())
}

fn attack_cmd(cmd: AttackCmd) -> CliResult {
    let AttackCmd::Run(args) = cmd;
    let cfg = args.into_config();
    let fx = load_fixtures(&cfg)?;
    let reports = run_experiment(&cfg, &fx)?;
    let mut out = io::stdout().lock();
    writeln!(out, "cell\ta_rate\tm_size\ta_sim\tn_change")?;
    for r in reports {
        let m = r.metrics;
        writeln!(out, "{}\t{:.2}\t{:.2}\t{:.4}\t{:.4}", r.cell, m.a_rate, m.m_size, m.a_sim, m.n_change)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Embed(c) => embed_cmd(c),
        Command::Model(c) => model_cmd(c),
        Command::Attack(c) => attack_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<EvalError>() {
                Some(EvalError::Config { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
