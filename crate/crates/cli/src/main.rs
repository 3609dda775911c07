use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pointer_dst::corpus::{build_encoder_input, synth_corpus, write_split, Pointer, Split};
use pointer_dst::encoders::SchemaCache;
use pointer_dst::metrics::{NamedFrame, ReportOptions};
use pointer_dst::model::{KeySpace, Model, ModelConfig, Variant};
use pointer_dst::schema::{load_schema_file, ElementTable};
use pointer_dst::tensor::{grad_check, ParamStore};
use pointer_dst::trainer::{
    ablate, evaluate, gold_replay, load_corpus, load_model, render_ablation, train, training_services, RunConfig,
};
use pointer_dst::{Error, Result};

#[derive(Parser)]
#[command(name = "pdst", version, about = "Schema-guided dialogue state tracking with pointer decoding")]
struct Cli {
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with train/, dev/ and test/ splits, or `synth`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    attention: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    fuzzy_threshold: Option<f64>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus in SGD layout.
    Synth {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; artifacts go to runs/<config-hash>-s<seed>/.
    Train {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate a trained run on a split.
    Eval {
        #[command(flatten)]
        run: RunFlags,
        /// Run directory or checkpoint file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        per_domain: bool,
        #[arg(long)]
        split_categorical: bool,
        /// Score gold frames as predictions instead of decoding.
        #[arg(long)]
        gold_replay: bool,
        /// Where to write eval_report.json and eval_report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode one utterance.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Schema file holding the services to track.
        #[arg(long)]
        schema: PathBuf,
        /// Services to track, comma separated; all services in the schema
        /// file by default.
        #[arg(long)]
        services: Option<String>,
        #[arg(long)]
        utterance: String,
        /// Earlier turns, oldest first.
        #[arg(long)]
        history: Vec<String>,
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Check gradients of the full model on a tiny configuration.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        coords: usize,
    },
    /// Train and test several variants under one seed and corpus.
    Ablate {
        #[command(flatten)]
        run: RunFlags,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: String,
    },
}

fn config(run: &RunFlags) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config(format!("config file {} does not exist", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(d) = &run.data {
        cfg.data = d.clone();
    }
    if let Some(b) = run.beam {
        cfg.model.beam_size = b;
    }
    if let Some(a) = &run.attention {
        cfg.set("attention", a)?;
    }
    if let Some(v) = &run.variant {
        cfg.set("variant", v)?;
    }
    if let Some(t) = run.fuzzy_threshold {
        cfg.fuzzy_threshold = t;
    }
    for o in &run.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_dir_of(checkpoint: &Path) -> (PathBuf, Option<PathBuf>) {
    if checkpoint.is_dir() {
        (checkpoint.to_path_buf(), None)
    } else {
        let dir = checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, Some(checkpoint.to_path_buf()))
    }
}

fn pick_split(corpus: pointer_dst::trainer::Corpus, name: &str) -> Result<(Split, Split)> {
    let chosen = match name {
        "train" => corpus.train.clone(),
        "dev" => corpus.dev,
        "test" => corpus.test,
        _ => return Err(Error::Config(format!("unknown split {name:?}; use train, dev or test"))),
    };
    Ok((corpus.train, chosen))
}

fn cmd_synth(run: &RunFlags, out: &Path) -> Result<()> {
    let cfg = config(run)?;
    let c = synth_corpus(&cfg.synth, cfg.data_seed)?;
    for (name, split) in [("train", &c.train), ("dev", &c.dev), ("test", &c.test)] {
        write_split(&out.join(name), split, 50)?;
    }
    println!(
        "wrote {} / {} / {} dialogues to {}",
        c.train.dialogues.len(),
        c.dev.dialogues.len(),
        c.test.dialogues.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(run: &RunFlags) -> Result<()> {
    let cfg = config(run)?;
    let corpus = load_corpus(&cfg)?;
    let dir = cfg.run_dir();
    let trained = train(&cfg, &corpus, Some(&dir))?;
    let r = &trained.report;
    println!("run directory {}", dir.display());
    println!(
        "steps {}  examples {} (skipped {})  final loss {:.4}  converged {}",
        r.steps,
        r.train_examples,
        r.skipped_examples,
        r.loss_trace.last().copied().unwrap_or(f64::NAN),
        r.converged
    );
    if let (Some(e), Some(j)) = (r.best_epoch, r.best_dev_joint_goal_accuracy) {
        println!("best dev joint goal accuracy {j:.4} at epoch {e}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    run: &RunFlags,
    checkpoint: Option<&Path>,
    split: &str,
    per_domain: bool,
    split_categorical: bool,
    replay: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (cfg, loaded, out_dir) = match checkpoint {
        Some(ck) => {
            let (dir, file) = run_dir_of(ck);
            let (mut cfg, model, store) = load_model(&dir, file.as_deref())?;
            let flags = config(&RunFlags {
                config: None,
                ..run.clone()
            })?;
            if run.data.is_some() {
                cfg.data = flags.data.clone();
            }
            if run.fuzzy_threshold.is_some() {
                cfg.fuzzy_threshold = flags.fuzzy_threshold;
            }
            let mut model = model;
            if let Some(b) = run.beam {
                model.cfg.beam_size = b;
            }
            (cfg, Some((model, store)), out.map(Path::to_path_buf).unwrap_or(dir))
        }
        None if replay => {
            let cfg = config(run)?;
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            (cfg, None, dir)
        }
        None => return Err(Error::Config("eval needs --checkpoint (or --gold-replay)".into())),
    };
    let (train_split, eval_split) = pick_split(load_corpus(&cfg)?, split)?;
    let opts = ReportOptions {
        per_domain,
        split_categorical,
        training_services: training_services(&train_split),
    };
    let report = match (&loaded, replay) {
        (_, true) => gold_replay(&eval_split, &cfg, &opts)?,
        (Some((model, store)), false) => evaluate(model, store, &eval_split, &cfg, &opts)?.0,
        (None, false) => unreachable!(),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    write(&out_dir.join("eval_report.json"), &report.to_json())?;
    let table = report.render();
    write(&out_dir.join("eval_report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_infer(
    checkpoint: &Path,
    schema: &Path,
    services: Option<&str>,
    utterance: &str,
    history: &[String],
    beam: Option<usize>,
) -> Result<()> {
    let (dir, file) = run_dir_of(checkpoint);
    let (cfg, mut model, store) = load_model(&dir, file.as_deref())?;
    if let Some(b) = beam {
        model.cfg.beam_size = b;
    }
    let schemas = load_schema_file(schema)?;
    let chosen: Vec<_> = match services {
        Some(list) => list
            .split(',')
            .map(|s| {
                schemas
                    .iter()
                    .find(|x| x.service_name == s.trim())
                    .ok_or_else(|| Error::Config(format!("service {s:?} is not in {}", schema.display())))
            })
            .collect::<Result<_>>()?,
        None => schemas.iter().collect(),
    };
    let table = ElementTable::build(&chosen, cfg.dontcare);
    let hist: Vec<&str> = history.iter().map(String::as_str).collect();
    let input = build_encoder_input(utterance, &hist, cfg.model.max_len)?;
    let p = model.predict(&store, &mut SchemaCache::new(), &input, &table)?;
    let shown: Vec<String> = p
        .pointers
        .iter()
        .map(|x| match *x {
            Pointer::Marker(m) => format!("{m:?}"),
            Pointer::Schema(i) if i < table.len() => table.display(i),
            Pointer::Token(t) if t < input.len() => input.tokens[t].clone(),
            _ => "<invalid>".into(),
        })
        .collect();
    if let Some(labels) = &p.labels {
        println!("labels   {}", labels.join(" "));
    } else {
        println!("pointers {}", shown.join(" "));
    }
    let frame = NamedFrame::from_frame(&p.frame, &table);
    println!("{}", serde_json::to_string_pretty(&frame).expect("frame serializes"));
    if p.malformed > 0 {
        println!("malformed items skipped: {}", p.malformed);
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, coords: usize) -> Result<bool> {
    let corpus = synth_corpus(&Default::default(), seed)?;
    let pcfg = pointer_dst::corpus::PrepareConfig {
        max_len: 12,
        ..Default::default()
    };
    let data = pointer_dst::corpus::prepare_examples(&corpus.train, &pcfg)?;
    let ex = data
        .examples
        .iter()
        .find(|e| !e.frame.slots.is_empty() && data.table_of(e).len() <= 40)
        .ok_or_else(|| Error::Invalid("no usable example".into()))?;
    let table = data.table_of(ex);
    let vocab = pointer_dst::trainer::build_vocab(&data);
    let keys = KeySpace::from_tables(&data.tables);
    let mut worst = 0.0f64;
    for v in Variant::ALL {
        let mut cfg = ModelConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            max_len: 48,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        v.apply(&mut cfg);
        let mut store = ParamStore::<f64>::new();
        let model = Model::build(cfg, vocab.clone(), keys.clone(), &mut store, seed)?;
        let rep = grad_check(
            &store,
            |g| {
                let schema = if model.seqlabel.is_some() {
                    None
                } else {
                    Some(model.table_reps(g, table, &mut HashMap::new())?)
                };
                model.example_loss(g, &ex.input, table, &ex.target, &ex.frame, schema.as_ref())
            },
            1e-5,
            coords,
            seed,
        )?;
        println!(
            "{:<16} coords {:>4}  max rel error {:.3e}",
            v.name(),
            rep.coords_checked,
            rep.max_rel_error
        );
        worst = worst.max(rep.max_rel_error);
    }
    let ok = worst < 1e-4;
    println!("{} (max relative error {worst:.3e}, threshold 1e-4)", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn cmd_ablate(run: &RunFlags, variants: &str) -> Result<()> {
    let cfg = config(run)?;
    let vs: Vec<Variant> = variants
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Variant::parse)
        .collect::<Result<_>>()?;
    if vs.is_empty() {
        return Err(Error::Config("--variants lists no variant".into()));
    }
    let corpus = load_corpus(&cfg)?;
    let rows = ablate(&cfg, &corpus, &vs, |r| eprintln!("finished {}", r.variant))?;
    let table = render_ablation(&rows);
    let dir = Path::new(&cfg.runs_dir).join(format!("ablate-{}-s{}", cfg.hash(), cfg.seed));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    write(&dir.join("ablation.txt"), &table)?;
    write(
        &dir.join("ablation.json"),
        &serde_json::to_string_pretty(&rows).expect("rows serialize"),
    )?;
    print!("{table}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Synth { run, out } => cmd_synth(run, out),
        Command::Train { run } => cmd_train(run),
        Command::Eval {
            run,
            checkpoint,
            split,
            per_domain,
            split_categorical,
            gold_replay,
            out,
        } => cmd_eval(
            run,
            checkpoint.as_deref(),
            split,
            *per_domain,
            *split_categorical,
            *gold_replay,
            out.as_deref(),
        ),
        Command::Infer {
            checkpoint,
            schema,
            services,
            utterance,
            history,
            beam,
        } => cmd_infer(checkpoint, schema, services.as_deref(), utterance, history, *beam),
        Command::Gradcheck { seed, coords } => match cmd_gradcheck(*seed, *coords) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        Command::Ablate { run, variants } => cmd_ablate(run, variants),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
