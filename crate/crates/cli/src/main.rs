//! `caco`: train, evaluate and inspect character-level cross-lingual
//! classifiers.
//!
//! Records go to stdout as tab-separated lines (`metric value seed variant`);
//! diagnostics go to stderr. Exit status is 0 on success, 1 for invalid
//! input or configuration, 2 for failures while running.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caco::config::{parse_with_overrides, RunConfig};
use caco::eval::{accuracy, argmax_histogram, word_translate, Metric, Record};
use caco::model::embed_table;
use caco::store::{load_model, save_model};
use caco::synth::{generate, write_pair, SyntheticSpec};
use caco::text::{format_embeddings, load_corpus, load_dictionary, load_parallel, load_word_list, Tokenizer};
use caco::trainer::{select_distill_docs, train, write_distill_cache, EpochLog};
use caco::{Error, ExecMode};
use clap::{Parser, Subcommand};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "caco", version, about = "Character-level cross-lingual document classification")]
struct Cli {
    /// Run single-threaded even when parallel execution is available.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a configuration key, e.g. `--set epochs=20`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Report accuracy of a saved model, or of several seeds of a config.
    Eval {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        model: Option<PathBuf>,
        /// Labeled test corpus; defaults to the config's `test`.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Train and evaluate `--seeds` runs of this configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10, requires = "config")]
        seeds: u64,
        #[arg(long = "set", value_name = "KEY=VALUE", requires = "config")]
        overrides: Vec<String>,
        /// Keep case when tokenizing the test corpus.
        #[arg(long)]
        keep_case: bool,
    },
    /// Nearest-neighbor word translation precision at 1.
    Translate {
        #[arg(long)]
        model: PathBuf,
        /// Source words to embed; defaults to the dictionary's source side.
        #[arg(long)]
        source_words: Option<PathBuf>,
        /// Target candidate words.
        #[arg(long)]
        target_words: PathBuf,
        /// Gold pairs, `source<TAB>target` per line.
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
    },
    /// Write embedder outputs for a word list in the embedding text format.
    EmbedDump {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        words: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic related-language benchmark into a directory.
    GenSynthetic {
        /// TOML generator spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select label-balanced parallel documents and cache reference outputs.
    DistillPrepare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        parallel: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        keep_case: bool,
    },
}

type Res<T> = std::result::Result<T, Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let exec = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn tokenizer(keep_case: bool) -> Tokenizer {
    Tokenizer { lowercase: !keep_case }
}

fn emit(record: Record) {
    println!("{record}");
}

fn run(command: Command, exec: ExecMode) -> Res<()> {
    match command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides, exec),
        Command::Eval {
            model,
            test,
            config,
            seeds,
            overrides,
            keep_case,
        } => match (model, config) {
            (Some(model), _) => {
                let test = test.ok_or_else(|| Error::Config("--test is required with --model".into()))?;
                cmd_eval(&model, &test, keep_case, exec)
            }
            (None, Some(config)) => cmd_eval_seeds(&config, &overrides, test, seeds, exec),
            (None, None) => unreachable!("clap requires one of --model and --config"),
        },
        Command::Translate {
            model,
            source_words,
            target_words,
            dictionary,
            metric,
        } => cmd_translate(&model, source_words.as_deref(), &target_words, &dictionary, metric, exec),
        Command::EmbedDump { model, words, out } => cmd_embed_dump(&model, &words, out.as_deref(), exec),
        Command::GenSynthetic { spec, overrides, out } => cmd_gen_synthetic(spec.as_deref(), &overrides, &out),
        Command::DistillPrepare {
            reference,
            parallel,
            n,
            seed,
            out,
            keep_case,
        } => cmd_distill_prepare(&reference, &parallel, n, seed, &out, keep_case, exec),
    }
}

fn load_config(path: &Path, overrides: &[String], exec: ExecMode) -> Res<RunConfig> {
    let mut cfg = RunConfig::load(path, overrides)?;
    if exec == ExecMode::Sequential {
        cfg.exec = ExecMode::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, content: &[u8]) -> Res<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(content).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_train(config: &Path, overrides: &[String], exec: ExecMode) -> Res<()> {
    let cfg = load_config(config, overrides, exec)?;
    let data = cfg.load_data()?;
    let outcome = train(&cfg.train_config(), &data)?;
    let variant = cfg.variant.to_string();

    if let Some(path) = &cfg.log_out {
        let mut log = String::new();
        for line in cfg.to_toml().lines() {
            log.push_str("# ");
            log.push_str(line);
            log.push('\n');
        }
        log.push_str(EpochLog::HEADER);
        log.push('\n');
        for e in &outcome.log {
            log.push_str(&format!("{e}\n"));
        }
        write_file(path, log.as_bytes())?;
    }
    if let Some(path) = &cfg.model_out {
        save_model(&outcome.model, path, cfg.clwe.as_deref())?;
    }
    if let Some(last) = outcome.log.last() {
        emit(Record {
            metric: "train_loss".into(),
            value: last.losses.total,
            seed: Some(cfg.seed),
            variant: variant.clone(),
        });
    }
    if let Some(test) = cfg.load_test(&outcome.model.labels)? {
        let report = accuracy(&outcome.model, &test, cfg.exec)?;
        emit(Record {
            metric: "accuracy".into(),
            value: report.accuracy(),
            seed: Some(cfg.seed),
            variant,
        });
    }
    Ok(())
}

fn cmd_eval(model: &Path, test: &Path, keep_case: bool, exec: ExecMode) -> Res<()> {
    let model = load_model(model)?;
    let test = load_corpus(test, &model.labels, &tokenizer(keep_case))?;
    let report = accuracy(&model, &test, exec)?;
    emit(Record {
        metric: "accuracy".into(),
        value: report.accuracy(),
        seed: None,
        variant: model.variant.to_string(),
    });
    eprint!("{}", report.confusion_table(&model.labels));
    Ok(())
}

fn cmd_eval_seeds(config: &Path, overrides: &[String], test: Option<PathBuf>, seeds: u64, exec: ExecMode) -> Res<()> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be positive".into()));
    }
    let mut base = load_config(config, overrides, exec)?;
    if let Some(t) = test {
        base.test = Some(t);
    }
    if base.test.is_none() {
        return Err(Error::Config("multi-seed evaluation needs a test corpus".into()));
    }
    let variant = base.variant.to_string();
    let mut values = Vec::new();
    for i in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = base.seed + i;
        let data = cfg.load_data()?;
        let model = train(&cfg.train_config(), &data)?.model;
        let test = cfg.load_test(&model.labels)?.expect("checked above");
        let acc = accuracy(&model, &test, cfg.exec)?.accuracy();
        emit(Record {
            metric: "accuracy".into(),
            value: acc,
            seed: Some(cfg.seed),
            variant: variant.clone(),
        });
        values.push(acc);
    }
    emit(Record {
        metric: "mean_accuracy".into(),
        value: values.iter().sum::<f64>() / values.len() as f64,
        seed: None,
        variant,
    });
    Ok(())
}

fn cmd_translate(
    model: &Path,
    source_words: Option<&Path>,
    target_words: &Path,
    dictionary: &Path,
    metric: Metric,
    exec: ExecMode,
) -> Res<()> {
    let model = load_model(model)?;
    let gold = load_dictionary(dictionary)?;
    let mut sources = match source_words {
        Some(p) => load_word_list(p)?,
        None => Vec::new(),
    };
    // Every gold source word must be embeddable, so they are always included.
    sources.extend(gold.pairs.iter().map(|(s, _)| s.clone()));
    sources.sort();
    sources.dedup();
    let mut targets = load_word_list(target_words)?;
    targets.sort();
    targets.dedup();
    let source_table = embed_table(&model, &sources, exec)?;
    let target_table = embed_table(&model, &targets, exec)?;
    let report = word_translate(&source_table, &target_table, &gold.pairs, metric, exec)?;
    emit(Record {
        metric: format!("p@1_{metric}"),
        value: report.precision_at_1(),
        seed: None,
        variant: model.variant.to_string(),
    });
    Ok(())
}

fn cmd_embed_dump(model: &Path, words: &Path, out: Option<&Path>, exec: ExecMode) -> Res<()> {
    let model = load_model(model)?;
    let mut list = load_word_list(words)?;
    list.sort();
    list.dedup();
    let text = format_embeddings(&embed_table(&model, &list, exec)?);
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen_synthetic(spec: Option<&Path>, overrides: &[String], out: &Path) -> Res<()> {
    let text = match spec {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => String::new(),
    };
    let spec: SyntheticSpec = parse_with_overrides(&text, overrides)?;
    let pair = generate(&spec)?;
    let files = write_pair(&pair, out)?;
    for (name, path) in [
        ("source_train", Some(&files.source_train)),
        ("target_test", Some(&files.target_test)),
        ("dictionary", Some(&files.dictionary)),
        ("embeddings", Some(&files.embeddings)),
        ("target_train", files.target_train.as_ref()),
        ("parallel", files.parallel.as_ref()),
    ] {
        if let Some(p) = path {
            println!("{name}\t{}", p.display());
        }
    }
    Ok(())
}

fn cmd_distill_prepare(
    reference: &Path,
    parallel: &Path,
    n: usize,
    seed: u64,
    out: &Path,
    keep_case: bool,
    exec: ExecMode,
) -> Res<()> {
    let model = load_model(reference)?;
    let pool = load_parallel(parallel, &tokenizer(keep_case))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let selection = select_distill_docs(&model, &pool, n, &mut rng, exec)?;
    write_distill_cache(out, &selection.set)?;
    let histogram = argmax_histogram(&selection.set.references, model.labels.len());
    for (label, count) in histogram.iter().enumerate() {
        println!("selected\t{}\t{count}", model.labels.name(label));
    }
    for w in &selection.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
