//! Run configuration, the training loop, checkpoints and evaluation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attender::AttentionVariant;
use crate::corpus::{
    load_split, prepare_examples, synth_corpus, DialogueExample, PrepareConfig, Prepared, Split, SynthSpec,
    UnalignableMode, Vocab,
};
use crate::encoders::{EncoderKind, SchemaCache};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, MatchMode, NamedFrame, ReportOptions, TurnResult};
use crate::model::{KeySpace, Model, ModelConfig, Prediction, Variant};
use crate::tensor::{
    clip_global_norm, read_checkpoint, write_checkpoint, Adam, AdamConfig, Gradients, Graph, Mode, ParamStore,
};

/// Everything needed to reproduce a run. Read from `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `synth` or a directory holding `train/`, `dev/` and `test/` splits.
    pub data: String,
    pub data_seed: u64,
    pub synth: SynthSpec,
    pub variant: Variant,
    /// Overrides the variant's attention when set.
    pub attention: Option<AttentionVariant>,
    pub model: ModelConfig,
    pub dontcare: bool,
    pub unalignable: UnalignableMode,
    pub single_turn: bool,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 for no limit.
    pub max_steps: usize,
    /// Stop starting new epochs after this many seconds; 0 for no limit.
    pub time_budget: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub eval_every: usize,
    /// Dev turns decoded per evaluation; 0 for all.
    pub eval_limit: usize,
    pub convergence_window: usize,
    pub fuzzy_threshold: f64,
    pub threads: usize,
    pub runs_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: "synth".into(),
            data_seed: 7,
            synth: SynthSpec::default(),
            variant: Variant::Overall,
            attention: None,
            model: ModelConfig::default(),
            dontcare: false,
            unalignable: UnalignableMode::Skip,
            single_turn: false,
            epochs: 60,
            max_steps: 0,
            time_budget: 0.0,
            batch_size: 8,
            lr: 1e-3,
            clip: 5.0,
            eval_every: 5,
            eval_limit: 0,
            convergence_window: 3,
            fuzzy_threshold: 0.95,
            threads: 1,
            runs_dir: "runs".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "data" => self.data = v.to_string(),
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "synth_domains" => self.synth.domains = list(v),
            "synth_unseen" => self.synth.unseen = list(v),
            "synth_train" => self.synth.train_dialogues = parse_num(key, v)?,
            "synth_dev" => self.synth.dev_dialogues = parse_num(key, v)?,
            "synth_test" => self.synth.test_dialogues = parse_num(key, v)?,
            "synth_avg_turns" => self.synth.avg_turns = parse_num(key, v)?,
            "synth_turn_spread" => self.synth.turn_spread = parse_num(key, v)?,
            "variant" => self.variant = Variant::parse(v)?,
            "attention" => self.attention = if v.is_empty() { None } else { Some(AttentionVariant::parse(v)?) },
            "hidden" => m.hidden = parse_num(key, v)?,
            "layers" => m.layers = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "max_len" => m.max_len = parse_num(key, v)?,
            "encoder" => m.encoder_kind = EncoderKind::parse(v)?,
            "dropout" => m.dropout = parse_num(key, v)?,
            "att_hidden" => m.att_hidden = parse_num(key, v)?,
            "shared_embeddings" => m.shared_embeddings = parse_bool(key, v)?,
            "beam" => m.beam_size = parse_num(key, v)?,
            "decode_max_len" => m.decode_max_len = parse_num(key, v)?,
            "constrained" => m.constrained = parse_bool(key, v)?,
            "schema_chunk" => m.schema_chunk = parse_num(key, v)?,
            "dontcare" => self.dontcare = parse_bool(key, v)?,
            "unalignable" => {
                self.unalignable = match v {
                    "skip" => UnalignableMode::Skip,
                    "keep" => UnalignableMode::Keep,
                    _ => return Err(Error::Config(format!("unalignable: expected skip or keep, got {v:?}"))),
                }
            }
            "single_turn" => self.single_turn = parse_bool(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "time_budget" => self.time_budget = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "eval_limit" => self.eval_limit = parse_num(key, v)?,
            "convergence_window" => self.convergence_window = parse_num(key, v)?,
            "fuzzy_threshold" => self.fuzzy_threshold = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "runs_dir" => self.runs_dir = v.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Model configuration after applying the variant and attention override.
    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone();
        self.variant.apply(&mut m);
        if let Some(a) = self.attention {
            m.attention = a;
        }
        m
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            max_len: self.model.max_len,
            dontcare: self.dontcare,
            unalignable: self.unalignable,
            single_turn: self.single_turn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(Error::Config("fuzzy_threshold must lie in [0, 1]".into()));
        }
        if self.eval_every == 0 || self.convergence_window < 2 {
            return Err(Error::Config("eval_every must be >= 1 and convergence_window >= 2".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn render(&self) -> String {
        let m = &self.model;
        let mut kv: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data", self.data.clone()),
            ("data_seed", self.data_seed.to_string()),
            ("synth_domains", self.synth.domains.join(",")),
            ("synth_unseen", self.synth.unseen.join(",")),
            ("synth_train", self.synth.train_dialogues.to_string()),
            ("synth_dev", self.synth.dev_dialogues.to_string()),
            ("synth_test", self.synth.test_dialogues.to_string()),
            ("synth_avg_turns", self.synth.avg_turns.to_string()),
            ("synth_turn_spread", self.synth.turn_spread.to_string()),
            ("variant", self.variant.name().to_string()),
            ("attention", self.attention.map(|a| a.name().to_string()).unwrap_or_default()),
            ("hidden", m.hidden.to_string()),
            ("layers", m.layers.to_string()),
            ("heads", m.heads.to_string()),
            ("max_len", m.max_len.to_string()),
            ("encoder", m.encoder_kind.name().to_string()),
            ("dropout", format!("{:?}", m.dropout)),
            ("att_hidden", m.att_hidden.to_string()),
            ("shared_embeddings", m.shared_embeddings.to_string()),
            ("beam", m.beam_size.to_string()),
            ("decode_max_len", m.decode_max_len.to_string()),
            ("constrained", m.constrained.to_string()),
            ("schema_chunk", m.schema_chunk.to_string()),
            ("dontcare", self.dontcare.to_string()),
            (
                "unalignable",
                match self.unalignable {
                    UnalignableMode::Skip => "skip",
                    UnalignableMode::Keep => "keep",
                }
                .into(),
            ),
            ("single_turn", self.single_turn.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("time_budget", format!("{:?}", self.time_budget)),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("clip", format!("{:?}", self.clip)),
            ("eval_every", self.eval_every.to_string()),
            ("eval_limit", self.eval_limit.to_string()),
            ("convergence_window", self.convergence_window.to_string()),
            ("fuzzy_threshold", format!("{:?}", self.fuzzy_threshold)),
            ("threads", self.threads.to_string()),
            ("runs_dir", self.runs_dir.clone()),
        ];
        kv.sort_by(|a, b| a.0.cmp(b.0));
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Short content hash of everything except the seed and the runs
    /// directory.
    pub fn hash(&self) -> String {
        let text: String = self
            .render()
            .lines()
            .filter(|l| !l.starts_with("seed ") && !l.starts_with("runs_dir ") && !l.starts_with("threads "))
            .map(|l| format!("{l}\n"))
            .collect();
        let d = Sha256::digest(text.as_bytes());
        d.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        Path::new(&self.runs_dir).join(format!("{}-s{}", self.hash(), self.seed))
    }
}

pub struct Corpus {
    pub train: Split,
    pub dev: Split,
    pub test: Split,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if cfg.data == "synth" {
        let c = synth_corpus(&cfg.synth, cfg.data_seed)?;
        return Ok(Corpus {
            train: c.train,
            dev: c.dev,
            test: c.test,
        });
    }
    let dir = Path::new(&cfg.data);
    Ok(Corpus {
        train: load_split(&dir.join("train"))?,
        dev: load_split(&dir.join("dev"))?,
        test: load_split(&dir.join("test"))?,
    })
}

/// Vocabulary over training inputs and all training schema descriptions.
pub fn build_vocab(train: &Prepared) -> Vocab {
    let mut words = BTreeSet::new();
    for ex in &train.examples {
        words.extend(ex.input.tokens.iter().map(String::as_str));
    }
    for t in &train.tables {
        for e in t.elements() {
            words.extend(e.pair.first.iter().map(String::as_str));
            words.extend(e.pair.second.iter().map(String::as_str));
        }
    }
    Vocab::build(words)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub mean_loss: f64,
    pub dev: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub train_examples: usize,
    pub skipped_examples: usize,
    pub loss_trace: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_joint_goal_accuracy: Option<f64>,
    pub converged: bool,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("train report: {e}")))
    }
}

/// Loss fluctuation (max minus min of the last `window` epoch means) below
/// 0.01.
pub fn converged(epoch_means: &[f64], window: usize) -> bool {
    if epoch_means.len() < window {
        return false;
    }
    let tail = &epoch_means[epoch_means.len() - window..];
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo < 0.01
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct TrainState {
    epoch: usize,
    step: usize,
    loss_trace: Vec<f64>,
    epochs: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    best_dev: Option<f64>,
}

pub struct Trained {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub report: TrainReport,
    pub train: Prepared,
}

/// Mean loss over a batch of examples recorded on `g`.
pub fn batch_loss<F: crate::tensor::Scalar>(
    model: &Model,
    g: &mut Graph<'_, F>,
    data: &Prepared,
    batch: &[&DialogueExample],
) -> Result<crate::tensor::Var> {
    let mut blocks = std::collections::HashMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let table = data.table_of(ex);
        let schema = if model.seqlabel.is_some() {
            None
        } else {
            Some(model.table_reps(g, table, &mut blocks)?)
        };
        losses.push(model.example_loss(g, &ex.input, table, &ex.target, &ex.frame, schema.as_ref())?);
    }
    let cat = g.concat_rows(&losses)?;
    let s = g.sum(cat);
    Ok(g.scale(s, 1.0 / batch.len() as f64))
}

/// Build a model for `cfg` with vocabulary and keys derived from `train`.
pub fn init_model(cfg: &RunConfig, train: &Prepared) -> Result<(Model, ParamStore<f32>)> {
    let vocab = build_vocab(train);
    let keys = KeySpace::from_tables(&train.tables);
    let mut store = ParamStore::new();
    let model = Model::build(cfg.model_config(), vocab, keys, &mut store, cfg.seed)?;
    Ok((model, store))
}

fn checkpoint_records(store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Vec<(String, crate::tensor::Tensor<f32>)> {
    let mut recs: Vec<_> = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    if let Some(a) = adam {
        recs.extend(a.export(store));
    }
    recs
}

/// Write the files needed to rebuild a model: vocabulary, key list and
/// configuration.
pub fn save_model_meta(dir: &Path, cfg: &RunConfig, model: &Model) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.vocab.save(&dir.join("vocab.txt"))?;
    let keys = model.keys.elements.join("\n") + "\n";
    fs::write(dir.join("keys.txt"), keys).map_err(|e| Error::io(dir.join("keys.txt"), e))?;
    let p = dir.join("config.txt");
    fs::write(&p, cfg.render()).map_err(|e| Error::io(&p, e))
}

/// Rebuild a model from a run directory and load `checkpoint` (or the best
/// checkpoint of the run).
pub fn load_model(run_dir: &Path, checkpoint: Option<&Path>) -> Result<(RunConfig, Model, ParamStore<f32>)> {
    let cfg = RunConfig::load(&run_dir.join("config.txt"))?;
    let vocab = Vocab::load(&run_dir.join("vocab.txt"))?;
    let kp = run_dir.join("keys.txt");
    let keys_text = fs::read_to_string(&kp).map_err(|e| Error::io(&kp, e))?;
    let keys = KeySpace::from_keys(keys_text.lines().filter(|l| !l.is_empty()).map(String::from).collect());
    let mut store = ParamStore::new();
    let model = Model::build(cfg.model_config(), vocab, keys, &mut store, cfg.seed)?;
    let ck = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| {
        let best = run_dir.join("best.ckpt");
        if best.exists() {
            best
        } else {
            run_dir.join("last.ckpt")
        }
    });
    let recs: Vec<_> = read_checkpoint::<f32>(&ck)?
        .into_iter()
        .filter(|(n, _)| !n.starts_with("adam."))
        .collect();
    store.load_named(recs)?;
    Ok((cfg, model, store))
}

/// Train on `corpus.train`, selecting the best epoch by dev joint goal
/// accuracy. With a run directory, checkpoints and reports are written
/// there and an interrupted run resumes from `last.ckpt`.
pub fn train(cfg: &RunConfig, corpus: &Corpus, run_dir: Option<&Path>) -> Result<Trained> {
    cfg.validate()?;
    let pcfg = cfg.prepare_config();
    let train = prepare_examples(&corpus.train, &pcfg)?;
    if train.examples.is_empty() {
        return Err(Error::Data {
            example: "train".into(),
            msg: "no usable training examples".into(),
        });
    }
    let dev = prepare_examples(&corpus.dev, &pcfg)?;
    let (model, mut store) = init_model(cfg, &train)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut state = TrainState::default();
    let mut best_params: Option<ParamStore<f32>> = None;

    if let Some(dir) = run_dir {
        save_model_meta(dir, cfg, &model)?;
        let last = dir.join("last.ckpt");
        let sp = dir.join("state.json");
        if last.exists() && sp.exists() {
            let mut recs = read_checkpoint::<f32>(&last)?;
            let mut adam_recs: Vec<_> = Vec::new();
            recs.retain(|r| {
                if r.0.starts_with("adam.") {
                    adam_recs.push(r.clone());
                    false
                } else {
                    true
                }
            });
            store.load_named(recs)?;
            adam.import(&store, &mut adam_recs)?;
            let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            state = serde_json::from_str(&text).map_err(|e| Error::Format(format!("state.json: {e}")))?;
            let best = dir.join("best.ckpt");
            if best.exists() {
                let mut b = store.clone();
                b.load_named(read_checkpoint::<f32>(&best)?)?;
                best_params = Some(b);
            }
        }
    }

    let started = Instant::now();
    let mut order: Vec<usize> = (0..train.examples.len()).collect();
    while state.epoch < cfg.epochs {
        if cfg.max_steps > 0 && state.step >= cfg.max_steps {
            break;
        }
        if cfg.time_budget > 0.0 && started.elapsed().as_secs_f64() >= cfg.time_budget {
            break;
        }
        let epoch = state.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9 * (epoch as u64 + 1)));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps > 0 && state.step >= cfg.max_steps {
                break;
            }
            let batch: Vec<&DialogueExample> = chunk.iter().map(|&i| &train.examples[i]).collect();
            let mut g = Graph::new(&store, Mode::Train, cfg.seed.wrapping_mul(1_000_003).wrapping_add(state.step as u64));
            let loss = batch_loss(&model, &mut g, &train, &batch)?;
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    step: state.step,
                    loss: lv,
                });
            }
            g.backward(loss)?;
            let mut grads = Gradients::zeros_like(&store);
            g.accumulate_param_grads(&mut grads);
            drop(g);
            if !grads.is_finite() {
                return Err(Error::Diverged {
                    step: state.step,
                    loss: lv,
                });
            }
            clip_global_norm(&mut grads, cfg.clip);
            adam.update(&mut store, &grads)?;
            state.loss_trace.push(lv);
            state.step += 1;
            sum += lv;
            count += 1;
        }
        state.epoch += 1;
        let mean_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        // the last epoch before a stop is always evaluated
        let stopping = state.epoch == cfg.epochs
            || (cfg.max_steps > 0 && state.step >= cfg.max_steps)
            || (cfg.time_budget > 0.0 && started.elapsed().as_secs_f64() >= cfg.time_budget);
        let dev_report = if state.epoch % cfg.eval_every == 0 || stopping {
            if dev.examples.is_empty() {
                None
            } else {
                let limit = if cfg.eval_limit == 0 { dev.examples.len() } else { cfg.eval_limit.min(dev.examples.len()) };
                let (results, labels) = predict_all(&model, &store, &dev, &dev.examples[..limit])?;
                Some(report_for(&results, labels.as_ref(), cfg, &ReportOptions::default())?)
            }
        } else {
            None
        };
        if let Some(r) = &dev_report {
            if state.best_dev.is_none_or(|b| r.joint_goal_accuracy > b) {
                state.best_dev = Some(r.joint_goal_accuracy);
                state.best_epoch = Some(state.epoch);
                best_params = Some(store.clone());
                if let Some(dir) = run_dir {
                    write_checkpoint(&dir.join("best.ckpt"), &checkpoint_records(&store, None))?;
                }
            }
        }
        state.epochs.push(EpochRecord {
            epoch: state.epoch,
            step: state.step,
            mean_loss,
            dev: dev_report,
        });
        if let Some(dir) = run_dir {
            write_checkpoint(&dir.join("last.ckpt"), &checkpoint_records(&store, Some(&adam)))?;
            let sp = dir.join("state.json");
            let text = serde_json::to_string(&state).expect("state serializes");
            fs::write(&sp, text).map_err(|e| Error::io(&sp, e))?;
        }
    }

    let means: Vec<f64> = state.epochs.iter().map(|e| e.mean_loss).collect();
    let report = TrainReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps: state.step,
        train_examples: train.examples.len(),
        skipped_examples: train.skipped,
        loss_trace: state.loss_trace,
        epochs: state.epochs,
        best_epoch: state.best_epoch,
        best_dev_joint_goal_accuracy: state.best_dev,
        converged: converged(&means, cfg.convergence_window),
    };
    if let Some(dir) = run_dir {
        let p = dir.join("train_report.json");
        fs::write(&p, report.to_json()).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("loss_trace.txt");
        let trace: String = report.loss_trace.iter().map(|l| format!("{l:.6}\n")).collect();
        fs::write(&p, trace).map_err(|e| Error::io(&p, e))?;
    }
    Ok(Trained {
        model,
        store: best_params.unwrap_or(store),
        report,
        train,
    })
}

/// Gold BIO labels and predicted labels, when the model labels sequences.
pub type LabelPairs = (Vec<Vec<String>>, Vec<Vec<String>>);

/// Decode `examples` (which must belong to `data`) in parallel.
pub fn predict_all(
    model: &Model,
    store: &ParamStore<f32>,
    data: &Prepared,
    examples: &[DialogueExample],
) -> Result<(Vec<TurnResult>, Option<LabelPairs>)> {
    let preds: Vec<Prediction> = examples
        .par_iter()
        .map_init(SchemaCache::new, |cache, ex| model.predict(store, cache, &ex.input, data.table_of(ex)))
        .collect::<Result<_>>()?;
    let results = examples
        .iter()
        .zip(&preds)
        .map(|(ex, p)| turn_result(data, ex, p))
        .collect();
    let labels = model.seqlabel.is_some().then(|| {
        let gold = examples
            .iter()
            .map(|ex| {
                let (ids, _) = model.seqlabel_targets(&ex.input, &ex.frame, data.table_of(ex));
                ids.into_iter().map(|i| model.label_name(i)).collect()
            })
            .collect();
        let pred = preds.iter().map(|p| p.labels.clone().unwrap_or_default()).collect();
        (pred, gold)
    });
    Ok((results, labels))
}

pub fn turn_result(data: &Prepared, ex: &DialogueExample, p: &Prediction) -> TurnResult {
    let table = data.table_of(ex);
    TurnResult {
        id: ex.id.clone(),
        services: data.table_services[ex.table].clone(),
        gold: NamedFrame::from_frame(&ex.frame, table),
        pred: NamedFrame::from_frame(&p.frame, table),
        malformed: p.malformed,
    }
}

pub fn report_for(results: &[TurnResult], labels: Option<&LabelPairs>, cfg: &RunConfig, opts: &ReportOptions) -> Result<EvalReport> {
    EvalReport::build(
        results,
        labels.map(|(p, g)| (p.as_slice(), g.as_slice())),
        MatchMode::Fuzzy(cfg.fuzzy_threshold),
        opts,
    )
}

/// Services that occur in training dialogues.
pub fn training_services(train: &Split) -> BTreeSet<String> {
    train.dialogues.iter().flat_map(|d| d.services.iter().cloned()).collect()
}

/// Decode every example of `split` and score it. Gold values that cannot be
/// aligned stay in the gold frames so they count as misses.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    split: &Split,
    cfg: &RunConfig,
    opts: &ReportOptions,
) -> Result<(EvalReport, Vec<TurnResult>)> {
    let pcfg = PrepareConfig {
        unalignable: UnalignableMode::Keep,
        ..cfg.prepare_config()
    };
    let data = prepare_examples(split, &pcfg)?;
    let (results, labels) = predict_all(model, store, &data, &data.examples)?;
    let report = report_for(&results, labels.as_ref(), cfg, opts)?;
    Ok((report, results))
}

/// Score gold frames against themselves; a harness check for the metrics.
pub fn gold_replay(split: &Split, cfg: &RunConfig, opts: &ReportOptions) -> Result<EvalReport> {
    let pcfg = PrepareConfig {
        unalignable: UnalignableMode::Keep,
        ..cfg.prepare_config()
    };
    let data = prepare_examples(split, &pcfg)?;
    let results: Vec<TurnResult> = data
        .examples
        .iter()
        .map(|ex| {
            let f = NamedFrame::from_frame(&ex.frame, data.table_of(ex));
            TurnResult {
                id: ex.id.clone(),
                services: data.table_services[ex.table].clone(),
                gold: f.clone(),
                pred: f,
                malformed: 0,
            }
        })
        .collect();
    report_for(&results, None, cfg, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub turns: usize,
    pub joint_goal_accuracy: f64,
    /// Joint goal accuracy over turns of domains absent from training.
    pub unseen_joint_goal_accuracy: Option<f64>,
    pub intent_accuracy: f64,
    pub slot_f1: Option<f64>,
    pub malformed: usize,
    pub train_steps: usize,
}

/// Joint goal accuracy over the turns whose services were all unseen in
/// training, if there are any.
pub fn unseen_joint_goal_accuracy(results: &[TurnResult], train_services: &BTreeSet<String>, mode: MatchMode) -> Result<Option<f64>> {
    let unseen: Vec<&TurnResult> = results
        .iter()
        .filter(|r| r.services.iter().all(|s| !train_services.contains(s)))
        .collect();
    if unseen.is_empty() {
        return Ok(None);
    }
    let pred: Vec<_> = unseen.iter().map(|r| r.pred.clone()).collect();
    let gold: Vec<_> = unseen.iter().map(|r| r.gold.clone()).collect();
    crate::metrics::joint_goal_accuracy(&pred, &gold, mode).map(Some)
}

/// Train and test each variant under the same seed and corpus.
pub fn ablate(cfg: &RunConfig, corpus: &Corpus, variants: &[Variant], mut on_row: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to compare".into()));
    }
    let train_services = training_services(&corpus.train);
    let opts = ReportOptions {
        per_domain: true,
        training_services: train_services.clone(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &v in variants {
        let mut c = cfg.clone();
        c.variant = v;
        if v == Variant::SeqLabel {
            c.single_turn = true;
        }
        c.validate()?;
        let trained = train(&c, corpus, None)?;
        let (report, results) = evaluate(&trained.model, &trained.store, &corpus.test, &c, &opts)?;
        let row = AblationRow {
            variant: v.name().to_string(),
            turns: report.turns,
            joint_goal_accuracy: report.joint_goal_accuracy,
            unseen_joint_goal_accuracy: unseen_joint_goal_accuracy(&results, &train_services, MatchMode::Fuzzy(c.fuzzy_threshold))?,
            intent_accuracy: report.intent_accuracy,
            slot_f1: report.slot_f1,
            malformed: report.malformed,
            train_steps: trained.report.steps,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let mut s = format!(
        "{:<16} {:>6} {:>9} {:>11} {:>9} {:>8} {:>9}\n",
        "variant", "turns", "joint GA", "unseen JGA", "intent", "slot F1", "malformed"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<16} {:>6} {:>9.4} {:>11} {:>9.4} {:>8} {:>9}\n",
            r.variant,
            r.turns,
            r.joint_goal_accuracy,
            opt(r.unseen_joint_goal_accuracy),
            r.intent_accuracy,
            opt(r.slot_f1),
            r.malformed
        ));
    }
    s
}
