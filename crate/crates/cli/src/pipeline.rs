//! The pipeline commands. Each takes the run lock, records the resolved
//! configuration and reads only what earlier stages wrote to the run
//! directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;

use log::{info, warn};
use molmm_chem::smiles::read_smiles_lines;
use molmm_data::record::read_jsonl;
use molmm_data::{curate as curate_dataset, read_caption_file, read_pair_file, CurateInputs, Dataset, Task, TaskRecord};
use molmm_eval::{evaluate, EvalRecord, MetricReport};
use molmm_lm::{generate as lm_generate, train_lm as lm_train, Constraint, LmConfig, LmModel, Sampler, StepLoss, Transcript};
use molmm_text::{bpe_train, BpeVocab, Special};
use molmm_vq::{read_token_dump, train_vq, write_token_dump, TokenRecord, TrainReport, VqModel};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{ensure_parent, from_jsonl, read_file, to_jsonl, write_file, RunDir};
use crate::sequences::{example, prompt_ids, Recognizer, TokenMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Curate,
    TrainBpe,
    TrainVq,
    TrainLm,
    Generate,
    Eval,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Curate,
        Command::TrainBpe,
        Command::TrainVq,
        Command::TrainLm,
        Command::Generate,
        Command::Eval,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Curate => "curate",
            Command::TrainBpe => "train-bpe",
            Command::TrainVq => "train-vq",
            Command::TrainLm => "train-lm",
            Command::Generate => "generate",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// Validates `cfg`, locks its run directory and runs one command. Returns
/// a short summary for the terminal.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate()?;
    if cmd == Command::Curate {
        cfg.validate_inputs()?;
    }
    let dir = RunDir::new(cfg.out_dir());
    let _lock = dir.lock()?;
    // the directory itself is not part of what the run computed
    let recorded = RunConfig { out: None, ..cfg.clone() };
    write_file(&dir.resolved_config(), recorded.to_toml())?;
    match cmd {
        Command::Curate => curate(cfg, &dir),
        Command::TrainBpe => train_bpe(cfg, &dir),
        Command::TrainVq => train_vq_stage(cfg, &dir),
        Command::TrainLm => train_lm(cfg, &dir),
        Command::Generate => generate(cfg, &dir),
        Command::Eval => eval(cfg, &dir),
        Command::Report => report(cfg, &dir),
    }
}

fn curate(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let corpus = read_smiles_lines(&read_file(&cfg.paths.corpus)?);
    let captions = match &cfg.paths.captions {
        Some(p) => read_caption_file(&read_file(p)?),
        None => Vec::new(),
    };
    let pairs = match &cfg.paths.pairs {
        Some(p) => Some(read_pair_file(&read_file(p)?)),
        None => None,
    };
    let ds = curate_dataset(&CurateInputs { corpus, captions, pairs }, &cfg.data)?;
    let out = dir.data();
    if out.exists() {
        fs::remove_dir_all(&out).map_err(CliError::io(&out))?;
    }
    ds.write(&out)?;
    let mut s = format!("{} train, {} test records, {} images\n", ds.train.len(), ds.test.len(), ds.images.len());
    for t in Task::ALL {
        let (a, b) = (ds.train.iter().filter(|r| r.task == t).count(), ds.test.iter().filter(|r| r.task == t).count());
        if a + b > 0 {
            let _ = writeln!(s, "  {:<14} {a:>6} train {b:>5} test", t.name());
        }
    }
    Ok(s)
}

fn read_train(dir: &RunDir, command: &'static str) -> Result<Vec<TaskRecord>, CliError> {
    let path = dir.train_records();
    dir.require(&path, command, "curate")?;
    Ok(read_jsonl(&path)?)
}

fn read_dataset(dir: &RunDir, command: &'static str) -> Result<Dataset, CliError> {
    dir.require(&dir.train_records(), command, "curate")?;
    Ok(Dataset::read(&dir.data())?)
}

fn train_bpe(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let train = read_train(dir, "train-bpe")?;
    let texts: Vec<&str> = train.iter().flat_map(|r| r.texts()).collect();
    let vocab = bpe_train(&texts, cfg.bpe.vocab_size, cfg.vq.n_codes)?;
    write_file(&dir.bpe_vocab(), vocab.to_file_string())?;
    Ok(format!(
        "{} merges from {} texts; {} text ids, {} image ids, {} total\n",
        vocab.merges().len(),
        texts.len(),
        vocab.text_vocab_size(),
        vocab.image_tokens(),
        vocab.total_size()
    ))
}

fn train_vq_stage(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let ds = read_dataset(dir, "train-vq")?;
    let paths: BTreeSet<&str> = ds.train.iter().flat_map(|r| r.image_paths()).collect();
    let images = paths.iter().map(|p| ds.image(p).cloned()).collect::<Result<Vec<_>, _>>()?;
    info!("training the image tokenizer on {} images", images.len());
    let (model, report) = train_vq(&images, &cfg.vq)?;
    ensure_parent(&dir.vq_checkpoint())?;
    model.save(dir.vq_checkpoint())?;
    write_file(&dir.vq_report(), serde_json::to_string(&report)?)?;

    let all: Vec<(&String, _)> = ds.images.iter().collect();
    let mut records = Vec::with_capacity(all.len());
    for chunk in all.chunks(32) {
        let imgs: Vec<_> = chunk.iter().map(|(_, img)| *img).collect();
        for ((path, _), indices) in chunk.iter().zip(model.encode_batch(&imgs)?) {
            records.push(TokenRecord {
                image_id: (*path).clone(),
                indices,
            });
        }
    }
    let mut buf = Vec::new();
    write_token_dump(&records, &mut buf)?;
    write_file(&dir.vq_tokens(), buf)?;
    Ok(vq_summary(&report) + &format!("{} images tokenized\n", records.len()))
}

fn vq_summary(r: &TrainReport) -> String {
    let used = r.usage.iter().filter(|&&c| c > 0).count();
    format!(
        "image tokenizer: {} train / {} val images, {} steps, val rec {:.4} at step {} (untrained {:.4}), {}/{} codes used, {} reseeded\n",
        r.train_count,
        r.val_count,
        r.steps.len(),
        r.best.l_rec,
        r.best.step,
        r.baseline_val_rec,
        used,
        r.usage.len(),
        r.reseeded
    )
}

/// Everything sequence building needs from the earlier stages.
struct Tokenizers {
    vocab: BpeVocab,
    tokens: TokenMap,
    tpi: usize,
}

fn load_tokenizers(cfg: &RunConfig, dir: &RunDir, command: &'static str) -> Result<Tokenizers, CliError> {
    dir.require(&dir.vq_checkpoint(), command, "train-vq")?;
    dir.require(&dir.vq_tokens(), command, "train-vq")?;
    dir.require(&dir.bpe_vocab(), command, "train-bpe")?;
    let vocab = BpeVocab::from_file_str(&read_file(&dir.bpe_vocab())?)?;
    if vocab.image_tokens() != cfg.vq.n_codes {
        return Err(CliError::ConfigInvalid(format!(
            "vocabulary has {} image ids but the image tokenizer has {} codes; rerun train-bpe",
            vocab.image_tokens(),
            cfg.vq.n_codes
        )));
    }
    let path = dir.vq_tokens();
    let file = fs::File::open(&path).map_err(CliError::io(&path))?;
    let tokens = read_token_dump(BufReader::new(file))?.into_iter().map(|r| (r.image_id, r.indices)).collect();
    Ok(Tokenizers {
        vocab,
        tokens,
        tpi: cfg.vq.tokens_per_image(),
    })
}

/// The LM configuration for a vocabulary: sizes from the vocabulary, the
/// rest from the run config.
pub fn lm_config_for(cfg: &LmConfig, vocab: &BpeVocab) -> LmConfig {
    LmConfig {
        vocab: vocab.total_size(),
        image_start: vocab.image_id(0) as usize,
        ..cfg.clone()
    }
}

fn train_lm(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let tk = load_tokenizers(cfg, dir, "train-lm")?;
    let train = read_train(dir, "train-lm")?;
    let lm_cfg = lm_config_for(&cfg.lm, &tk.vocab);
    let mut examples = Vec::with_capacity(train.len());
    let mut dropped = 0;
    for r in &train {
        let ex = example(r, &tk.vocab, &tk.tokens, tk.tpi)?;
        if ex.ids.len() > lm_cfg.context {
            dropped += 1;
        } else {
            examples.push(ex);
        }
    }
    if dropped > 0 {
        warn!("dropped {dropped} train records longer than the {}-token context", lm_cfg.context);
    }
    let mut model = LmModel::new(lm_cfg.clone())?;
    info!("training the language model on {} sequences", examples.len());
    let curve = lm_train(&mut model, &examples, tk.vocab.special(Special::Pad))?.steps;
    ensure_parent(&dir.lm_checkpoint())?;
    model.save(dir.lm_checkpoint())?;
    write_file(&dir.lm_config(), serde_json::to_string_pretty(&lm_cfg)?)?;
    write_file(&dir.lm_curve(), to_jsonl(&curve)?)?;
    Ok(format!("language model: {} sequences ({dropped} over context), {}\n", examples.len(), curve_summary(&curve)))
}

/// Mean answer cross-entropy over the first and last tenth of training.
fn curve_summary(curve: &[StepLoss]) -> String {
    let window = |xs: &[StepLoss]| xs.iter().map(|l| l.ce).sum::<f64>() / xs.len().max(1) as f64;
    let k = (curve.len() / 10).max(1).min(curve.len());
    format!(
        "{} steps, answer ce {:.4} over the first {k}, {:.4} over the last {k}",
        curve.len(),
        window(&curve[..k]),
        window(&curve[curve.len() - k..])
    )
}

/// One generated answer with its token-level transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub task: Task,
    #[serde(flatten)]
    pub transcript: Transcript,
    /// Images decoded from the answer, relative to the generate directory.
    pub images: Vec<String>,
}

fn select_test<'a>(cfg: &RunConfig, test: &'a [TaskRecord]) -> Vec<&'a TaskRecord> {
    let mut out = Vec::new();
    for t in Task::ALL {
        if cfg.task.is_some_and(|want| want != t) {
            continue;
        }
        let mut recs: Vec<&TaskRecord> = test.iter().filter(|r| r.task == t).collect();
        if cfg.generate.max_per_task > 0 {
            recs.truncate(cfg.generate.max_per_task);
        }
        out.extend(recs);
    }
    out
}

/// The ground truth an answer is scored against.
pub fn eval_record(r: &TaskRecord, output: String, output_smiles: Option<String>) -> EvalRecord {
    let reference = match r.task {
        Task::Property2Img => r.texts().collect::<Vec<_>>().join(" "),
        _ => r.answer_text(),
    };
    let reference_smiles = match r.task {
        Task::Img2Img => r.provenance.target_smiles.clone(),
        _ => Some(r.provenance.smiles.clone()),
    };
    EvalRecord {
        id: r.id.clone(),
        task: r.task,
        reference,
        output,
        source_smiles: Some(r.provenance.smiles.clone()),
        reference_smiles,
        output_smiles,
    }
}

fn generate(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let tk = load_tokenizers(cfg, dir, "generate")?;
    dir.require(&dir.lm_checkpoint(), "generate", "train-lm")?;
    dir.require(&dir.lm_config(), "generate", "train-lm")?;
    let ds = read_dataset(dir, "generate")?;
    let lm_cfg: LmConfig = serde_json::from_str(&read_file(&dir.lm_config())?)?;
    let model = LmModel::load(lm_cfg, dir.lm_checkpoint())?;
    let vq = VqModel::load(cfg.vq.clone(), dir.vq_checkpoint())?;
    let recognizer = Recognizer::new(&ds);
    let constraint = Constraint::from_vocab(&tk.vocab, tk.tpi);

    let out = dir.generations();
    if out.exists() {
        fs::remove_dir_all(&out).map_err(CliError::io(&out))?;
    }
    let chosen = select_test(cfg, &ds.test);
    let mut generations = Vec::with_capacity(chosen.len());
    let mut evals = Vec::with_capacity(chosen.len());
    let mut skipped = 0;
    for (i, r) in chosen.iter().enumerate() {
        let prompt = prompt_ids(r, &tk.vocab, &tk.tokens, tk.tpi)?;
        if prompt.len() >= model.config.context {
            warn!("{}: prompt of {} tokens does not fit the context", r.id, prompt.len());
            skipped += 1;
            continue;
        }
        let sampler = if cfg.generate.temperature > 0.0 {
            Sampler::Sample {
                temperature: cfg.generate.temperature,
                top_k: cfg.generate.top_k,
                seed: cfg.seed.wrapping_add(i as u64),
            }
        } else {
            Sampler::Greedy
        };
        let full = lm_generate(&model, &constraint, &prompt, &sampler, cfg.generate.max_new)?;
        let transcript = Transcript::new(&tk.vocab, &prompt, &full);
        let mut images = Vec::new();
        let mut recognized = None;
        for (k, &(start, len)) in transcript.image_token_spans.iter().enumerate() {
            let codes: Option<Vec<usize>> = transcript.output_ids[start..start + len].iter().map(|&id| tk.vocab.image_code(id)).collect();
            let Some(codes) = codes.filter(|c| c.len() == tk.tpi) else { continue };
            let img = vq.tokens_to_image(&codes)?;
            let rel = format!("images/{}_{k}.ppm", r.id);
            write_file(&out.join(&rel), img.to_ppm())?;
            if recognized.is_none() {
                recognized = recognizer.recognize(&img).map(str::to_string);
            }
            images.push(rel);
        }
        evals.push(eval_record(r, transcript.decoded_text.trim().to_string(), recognized));
        generations.push(GenerationRecord {
            id: r.id.clone(),
            task: r.task,
            transcript,
            images,
        });
        if (i + 1) % 25 == 0 {
            info!("generated {}/{}", i + 1, chosen.len());
        }
    }
    write_file(&dir.transcripts(), to_jsonl(&generations)?)?;
    write_file(&dir.eval_records(), to_jsonl(&evals)?)?;
    let n_images: usize = generations.iter().map(|g| g.images.len()).sum();
    Ok(format!("{} answers, {n_images} images, {skipped} prompts over context\n", generations.len()))
}

fn eval(cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    let path = dir.eval_records();
    dir.require(&path, "eval", "generate")?;
    let mut records: Vec<EvalRecord> = from_jsonl(&read_file(&path)?)?;
    if let Some(t) = cfg.task {
        records.retain(|r| r.task == t);
    }
    let train: Vec<String> = if dir.train_records().exists() {
        let set: BTreeSet<String> = read_jsonl(&dir.train_records())?
            .iter()
            .flat_map(|r| r.provenance.molecules().map(str::to_string))
            .collect();
        set.into_iter().collect()
    } else {
        warn!("no curated train split; novelty is measured against an empty set");
        Vec::new()
    };
    let report = evaluate(&records, &train, &cfg.eval);
    write_file(&dir.metrics(), report.to_jsonl())?;
    let table = report.to_table();
    write_file(&dir.metrics_table(), &table)?;
    Ok(table)
}

fn report(_cfg: &RunConfig, dir: &RunDir) -> Result<String, CliError> {
    dir.require(&dir.metrics(), "report", "eval")?;
    let mut s = String::new();
    let test = dir.data().join(molmm_data::record::TEST_FILE);
    if dir.train_records().exists() && test.exists() {
        let (train, test) = (read_jsonl(&dir.train_records())?, read_jsonl(&test)?);
        let _ = writeln!(s, "data: {} train, {} test records", train.len(), test.len());
    }
    if dir.vq_report().exists() {
        let r: TrainReport = serde_json::from_str(&read_file(&dir.vq_report())?)?;
        s.push_str(&vq_summary(&r));
    }
    if dir.lm_curve().exists() {
        let curve: Vec<StepLoss> = from_jsonl(&read_file(&dir.lm_curve())?)?;
        s.push_str(&format!("language model: {}\n", curve_summary(&curve)));
    }
    let metrics = MetricReport::from_jsonl(&read_file(&dir.metrics())?)?;
    s.push('\n');
    s.push_str(&metrics.to_table());
    write_file(&dir.report(), &s)?;
    Ok(s)
}
