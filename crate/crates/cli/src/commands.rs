use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use duoview::captioner::{
    caption_metrics_csv, load_decoder, save_decoder, train_text_only, write_caption_examples,
    write_caption_predictions, CaptionExample, CaptionPrediction,
};
use duoview::corpus::{read_corpus, write_corpus, Corpus, WorldConfig};
use duoview::encoders::{load_checkpoint, save_checkpoint, EncoderParams, HyperConfig, SubwordVocab};
use duoview::pairing::{read_pairs, write_pairs};
use duoview::zeroshot::{
    activation_map, activation_map_csv, grounding_benchmark, read_prompts, retrieval_benchmark, synthetic_prompts,
    zero_shot_benchmark_with, Frozen, ZeroShotMetrics,
};

use crate::config::{clip_length_label, RunConfig};
use crate::pipeline::{self, Split};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    BuildPairs,
    Train,
    EvalRetrieval,
    EvalGrounding,
    EvalZeroshot { prompts: Option<PathBuf> },
    TrainCaptioner,
    EvalCaption,
    Ablate,
    /// Every stage from `GenData` to `EvalCaption` in order.
    All,
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub force: bool,
    /// Encoder checkpoint directory; `<out>/checkpoint` when unset.
    pub checkpoint: Option<PathBuf>,
}

const METRICS_HEADER: &str = "task,metric,value";
const TASK_ORDER: [&str; 4] = ["retrieval", "grounding", "zeroshot", "zeroshot_random"];

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("missing {what}: {}", path.display())))
    }
}

/// Refuses to touch any existing output unless `force` is set.
fn guard(outputs: &[PathBuf], force: bool) -> Result<(), CliError> {
    match outputs.iter().find(|p| p.exists()) {
        Some(p) if !force => Err(CliError::Validation(format!(
            "{} already exists; pass --force to overwrite",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_metric_rows(path: &Path) -> Result<Vec<(String, String, String)>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.splitn(3, ',');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(m), Some(v)) => rows.push((t.to_string(), m.to_string(), v.to_string())),
            _ => {
                return Err(CliError::Validation(format!("{}:{}: malformed metrics row", path.display(), i + 1)));
            }
        }
    }
    Ok(rows)
}

/// `metrics.csv` is shared by the evaluation commands: each owns the rows of
/// its tasks and may replace them only with `force`.
fn metrics_guard(path: &Path, tasks: &[&str], force: bool) -> Result<(), CliError> {
    let rows = read_metric_rows(path)?;
    match rows.iter().find(|(t, _, _)| tasks.contains(&t.as_str())) {
        Some((t, _, _)) if !force => Err(CliError::Validation(format!(
            "{} already holds {t} rows; pass --force to overwrite",
            path.display()
        ))),
        _ => Ok(()),
    }
}

fn update_metrics(path: &Path, new_rows: &[(&str, String, f64)]) -> Result<(), CliError> {
    let mut rows = read_metric_rows(path)?;
    rows.retain(|(t, _, _)| !new_rows.iter().any(|(nt, _, _)| nt == t));
    rows.extend(new_rows.iter().map(|(t, m, v)| (t.to_string(), m.clone(), format!("{v:.6}"))));
    // Fixed task order, so the file does not depend on which command ran last.
    let rank = |t: &str| TASK_ORDER.iter().position(|o| *o == t).unwrap_or(TASK_ORDER.len());
    rows.sort_by_key(|(t, _, _)| rank(t));
    let mut out = format!("{METRICS_HEADER}\n");
    for (t, m, v) in rows {
        let _ = writeln!(out, "{t},{m},{v}");
    }
    write(path, &out)
}

struct Paths {
    corpus: PathBuf,
    out: PathBuf,
    checkpoint: PathBuf,
}

impl Paths {
    fn new(cfg: &RunConfig, opts: &Options) -> Self {
        Self {
            corpus: cfg.corpus_dir(),
            out: cfg.out_dir.clone(),
            checkpoint: opts.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint")),
        }
    }

    fn world(&self) -> PathBuf {
        self.corpus.join("world.json")
    }

    fn split_file(&self, split: &str) -> PathBuf {
        self.corpus.join(format!("{split}.videos.jsonl"))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn load_world(paths: &Paths) -> Result<WorldConfig, CliError> {
    let p = paths.world();
    require(&p, "world description (run gen-data first)")?;
    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

fn load_split(paths: &Paths, split: &str) -> Result<Corpus, CliError> {
    require(&paths.split_file(split), &format!("{split} corpus (run gen-data first)"))?;
    Ok(read_corpus(&paths.corpus, split)?)
}

fn load_both(paths: &Paths) -> Result<Split, CliError> {
    Ok(Split {
        world: load_world(paths)?,
        train: load_split(paths, "train")?,
        test: load_split(paths, "test")?,
    })
}

struct Checkpoint {
    params: EncoderParams,
    vocab: SubwordVocab,
    hyper: HyperConfig,
}

impl Checkpoint {
    fn load(paths: &Paths) -> Result<Self, CliError> {
        require(&paths.checkpoint.join("params.json"), "encoder checkpoint (run train first)")?;
        let (params, vocab, hyper) = load_checkpoint(&paths.checkpoint)?;
        Ok(Self { params, vocab, hyper })
    }

    fn frozen_with<'a>(&'a self, params: &'a EncoderParams) -> Frozen<'a> {
        Frozen {
            params,
            vocab: &self.vocab,
            hyper: &self.hyper,
        }
    }

    fn frozen(&self) -> Frozen<'_> {
        self.frozen_with(&self.params)
    }
}

/// Runs one command and returns the files it wrote.
pub fn execute(cmd: &Command, cfg: &RunConfig, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let paths = Paths::new(cfg, opts);
    let seed = cfg.seed();
    match cmd {
        Command::GenData => gen_data(cfg, &paths, opts, seed),
        Command::BuildPairs => build_pairs(cfg, &paths, opts, seed),
        Command::Train => train(cfg, &paths, opts, seed),
        Command::EvalRetrieval => eval_retrieval(cfg, &paths, opts),
        Command::EvalGrounding => eval_grounding(cfg, &paths, opts),
        Command::EvalZeroshot { prompts } => eval_zeroshot(&paths, opts, prompts.as_deref(), seed),
        Command::TrainCaptioner => train_captioner(cfg, &paths, opts, seed),
        Command::EvalCaption => eval_caption(&paths, opts),
        Command::Ablate => ablate(cfg, &paths, opts),
        Command::All => {
            let mut written = Vec::new();
            for c in [
                Command::GenData,
                Command::BuildPairs,
                Command::Train,
                Command::EvalRetrieval,
                Command::EvalGrounding,
                Command::EvalZeroshot { prompts: None },
                Command::TrainCaptioner,
                Command::EvalCaption,
            ] {
                written.extend(execute(&c, cfg, opts)?);
            }
            Ok(written)
        }
    }
}

fn gen_data(cfg: &RunConfig, paths: &Paths, opts: &Options, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let outputs = vec![paths.world(), paths.split_file("train"), paths.split_file("test")];
    guard(&outputs, opts.force)?;
    let split = pipeline::generate_data(cfg, seed)?;
    write_corpus(&paths.corpus, "train", &split.train)?;
    write_corpus(&paths.corpus, "test", &split.test)?;
    write(&paths.world(), &serde_json::to_string_pretty(&split.world).expect("world serializes"))?;
    Ok(outputs)
}

fn build_pairs(cfg: &RunConfig, paths: &Paths, opts: &Options, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let outputs = vec![paths.out("pairs.jsonl"), paths.out("pairing_stats.json")];
    guard(&outputs, opts.force)?;
    let train = load_split(paths, "train")?;
    let (pairs, stats) = pipeline::make_pairs(cfg, &train, cfg.clip_length, seed)?;
    fs::create_dir_all(&paths.out).map_err(|e| CliError::io(&paths.out, e))?;
    write_pairs(&outputs[0], &pairs)?;
    write(&outputs[1], &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
    Ok(outputs)
}

fn train(cfg: &RunConfig, paths: &Paths, opts: &Options, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let outputs = vec![paths.checkpoint.join("params.json"), paths.out("train_report.csv")];
    guard(&outputs, opts.force)?;
    let pairs_path = paths.out("pairs.jsonl");
    require(&pairs_path, "pairs (run build-pairs first)")?;
    let pairs = read_pairs(&pairs_path)?;
    let split = Split {
        world: load_world(paths)?,
        train: load_split(paths, "train")?,
        test: Corpus::default(),
    };
    let t = pipeline::train_on_pairs(&split, &pairs, &cfg.hyper, seed)?;
    save_checkpoint(&paths.checkpoint, &t.params, &t.vocab, &t.hyper)?;
    write(&outputs[1], &t.report.to_csv())?;
    Ok(outputs)
}

fn eval_retrieval(cfg: &RunConfig, paths: &Paths, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let out = paths.out("metrics.csv");
    metrics_guard(&out, &["retrieval"], opts.force)?;
    let ck = Checkpoint::load(paths)?;
    let world = load_world(paths)?;
    let test = load_split(paths, "test")?;
    let m = retrieval_benchmark(&test, &world, &ck.frozen(), &cfg.eval.ks)?;
    let mut rows: Vec<(&str, String, f64)> = m.recall.iter().map(|(k, r)| ("retrieval", format!("recall@{k}"), *r)).collect();
    rows.push(("retrieval", "median_rank".into(), m.median_rank as f64));
    rows.push(("retrieval", "n_queries".into(), m.n_queries as f64));
    update_metrics(&out, &rows)?;
    Ok(vec![out])
}

fn eval_grounding(cfg: &RunConfig, paths: &Paths, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let out = paths.out("metrics.csv");
    metrics_guard(&out, &["grounding"], opts.force)?;
    let ck = Checkpoint::load(paths)?;
    let world = load_world(paths)?;
    let test = load_split(paths, "test")?;
    let e = &cfg.eval;
    let m = grounding_benchmark(&test, &world, &ck.frozen(), e.window_s, e.stride_s, e.iou_threshold, &e.ks)?;
    let mut rows: Vec<(&str, String, f64)> = m.recall.iter().map(|(k, r)| ("grounding", format!("recall@{k}"), *r)).collect();
    rows.push(("grounding", "n_queries".into(), m.n_queries as f64));
    update_metrics(&out, &rows)?;
    Ok(vec![out])
}

fn zeroshot_rows<'a>(task: &'a str, m: &ZeroShotMetrics) -> Vec<(&'a str, String, f64)> {
    let t = &m.triplet;
    vec![
        (task, "tool_map".into(), m.tool_map),
        (task, "target_mean_f1".into(), m.target_mean_f1),
        (task, "triplet_ap_i".into(), t.ap_i),
        (task, "triplet_ap_v".into(), t.ap_v),
        (task, "triplet_ap_t".into(), t.ap_t),
        (task, "triplet_ap_iv".into(), t.ap_iv),
        (task, "triplet_ap_it".into(), t.ap_it),
        (task, "triplet_ap_ivt".into(), t.ap_ivt),
        (task, "n_clips".into(), m.n_clips as f64),
    ]
}

fn eval_zeroshot(paths: &Paths, opts: &Options, prompts: Option<&Path>, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let metrics = paths.out("metrics.csv");
    let per_class = paths.out("per_class.csv");
    metrics_guard(&metrics, &["zeroshot", "zeroshot_random"], opts.force)?;
    let ck = Checkpoint::load(paths)?;
    let world = load_world(paths)?;
    let test = load_split(paths, "test")?;
    let actmaps: Vec<PathBuf> = test
        .videos
        .iter()
        .map(|v| paths.out(&format!("actmap_{}.csv", v.video_id)))
        .collect();
    let mut outputs = vec![per_class.clone()];
    outputs.extend(actmaps.iter().cloned());
    guard(&outputs, opts.force)?;
    let sets = match prompts {
        Some(p) => {
            require(p, "prompt file")?;
            read_prompts(p)?
        }
        None => synthetic_prompts(&world),
    };

    // The random baseline is the seeded initialization training started from.
    let random = pipeline::init_params(&ck.vocab, ck.params.feature_dim(), &ck.hyper, seed);
    let trained = zero_shot_benchmark_with(&test, &world, &ck.frozen(), &sets)?;
    let baseline = zero_shot_benchmark_with(&test, &world, &ck.frozen_with(&random), &sets)?;

    let mut csv = String::from("model,task,class_id,name,metric,value\n");
    for (model, m) in [("trained", &trained), ("random", &baseline)] {
        for (c, ap) in &m.tool_ap {
            let _ = writeln!(csv, "{model},tool,{c},{},ap,{ap:.6}", sets[0].classes[*c].name);
        }
        for (c, f1) in m.target_f1.iter().enumerate() {
            let _ = writeln!(csv, "{model},target,{c},{},f1,{f1:.6}", sets[1].classes[c].name);
        }
    }
    write(&per_class, &csv)?;

    for (v, path) in test.videos.iter().zip(&actmaps) {
        let Some(e) = v.event_timeline.first() else { continue };
        let q = ck.frozen().texts(&[world.query_text(e.class_id, e.target_id)])?;
        write(path, &activation_map_csv(&activation_map(v, q.row(0), &ck.params)?))?;
    }

    let mut rows = zeroshot_rows("zeroshot", &trained);
    rows.extend(zeroshot_rows("zeroshot_random", &baseline));
    update_metrics(&metrics, &rows)?;
    outputs.push(metrics);
    Ok(outputs)
}

fn train_captioner(cfg: &RunConfig, paths: &Paths, opts: &Options, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let outputs = vec![paths.out("decoder.json"), paths.out("caption_train_report.csv")];
    guard(&outputs, opts.force)?;
    let ck = Checkpoint::load(paths)?;
    let world = load_world(paths)?;
    let train = load_split(paths, "train")?;
    let sentences = pipeline::event_descriptions(&world, &train);
    let (decoder, report) = train_text_only(&sentences, &ck.frozen(), &cfg.caption, seed)?;
    fs::create_dir_all(&paths.out).map_err(|e| CliError::io(&paths.out, e))?;
    save_decoder(&outputs[0], &decoder, &cfg.caption)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.9}");
    }
    write(&outputs[1], &csv)?;
    Ok(outputs)
}

fn eval_caption(paths: &Paths, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let outputs = vec![
        paths.out("captions_gt.jsonl"),
        paths.out("captions_pred.jsonl"),
        paths.out("caption_metrics.csv"),
    ];
    guard(&outputs, opts.force)?;
    let decoder_path = paths.out("decoder.json");
    require(&decoder_path, "caption decoder (run train-captioner first)")?;
    let (decoder, caption_cfg) = load_decoder(&decoder_path)?;
    let ck = Checkpoint::load(paths)?;
    let split = load_both(paths)?;
    let rows = pipeline::caption_test_events(&split, &decoder, &ck.frozen(), caption_cfg.max_len)?;
    let scores = pipeline::score_rows(&rows)?;
    let gt: Vec<CaptionExample> = rows
        .iter()
        .map(|r| CaptionExample {
            clip_ref: r.clip_ref.clone(),
            reference: r.reference.clone(),
        })
        .collect();
    let pred: Vec<CaptionPrediction> = rows
        .iter()
        .map(|r| CaptionPrediction {
            clip_ref: r.clip_ref.clone(),
            caption: r.caption.clone(),
        })
        .collect();
    write_caption_examples(&outputs[0], &gt)?;
    write_caption_predictions(&outputs[1], &pred)?;
    write(&outputs[2], &caption_metrics_csv(&scores))?;
    Ok(outputs)
}

/// Header and one row per grid cell: recall and median rank averaged over
/// the configured seeds.
pub fn ablation_csv(cfg: &RunConfig) -> Result<String, CliError> {
    let ks = &cfg.eval.ks;
    let mut csv = String::from("views,clip_length,frames,n_seeds");
    for k in ks {
        let _ = write!(csv, ",recall@{k}");
    }
    csv.push_str(",median_rank\n");
    for (views, length, frames) in cfg.ablation.cells() {
        let runs = pipeline::per_seed(&cfg.seeds, |seed| pipeline::ablation_cell(cfg, views, length, frames, seed))?;
        let n = runs.len() as f64;
        let _ = write!(csv, "{},{},{frames},{}", views.name(), clip_length_label(&length), runs.len());
        for &k in ks {
            let mean = runs.iter().map(|m| m.recall_at(k).unwrap_or(0.0)).sum::<f64>() / n;
            let _ = write!(csv, ",{mean:.6}");
        }
        let mr = runs.iter().map(|m| m.median_rank as f64).sum::<f64>() / n;
        let _ = writeln!(csv, ",{mr:.3}");
    }
    Ok(csv)
}

fn ablate(cfg: &RunConfig, paths: &Paths, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let out = paths.out("ablation.csv");
    guard(std::slice::from_ref(&out), opts.force)?;
    let csv = ablation_csv(cfg)?;
    write(&out, &csv)?;
    Ok(vec![out])
}
