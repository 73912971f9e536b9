use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use multisum::corpus::{load_manifest, make_leave_one_out_folds, save_manifest, split_fold, DatasetManifest, FoldPlan};
use multisum::decode::{decode_all, write_summaries_jsonl, DecodedSummary};
use multisum::experiments::{
    assemble_results, corpus_vocabulary, emit_report, enumerate_combos, run_sweep, CellEvaluator, CellResult,
    ExperimentConfig, Preset, ReportFormat, ReportOptions, TaskCombo, TrainingEvaluator,
};
use multisum::model::{ModelMode, MultitaskModel, VocabRef};
use multisum::rouge::{aggregate_scores, score, scores_csv};
use multisum::synthetic;
use multisum::tasks::{
    build_heads_streams, build_text2text_streams, load_msrp_tsv, tfidf_rank, write_concepts_jsonl, ParaphrasePair,
    TaskExample,
};
use multisum::tokenizer::Vocabulary;
use multisum::trainer::{train, NoObserver, TrainConfig, ValidationSet};
use multisum::{Error, Result};

#[derive(Parser)]
#[command(name = "multisum", version, about = "Multitask training for low-resource summarization")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary, folds and task datasets.
    Prepare {
        #[arg(long, required_unless_present = "synthetic")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        msrp: Option<PathBuf>,
        /// Generate a 370-document corpus with the course-mirror split sizes
        /// instead of reading a manifest.
        #[arg(long)]
        synthetic: bool,
        /// Use the records' split field instead of leave-one-group-out folds.
        #[arg(long)]
        split_field: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one task combination on one fold.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        msrp: Option<PathBuf>,
        /// e.g. "A C P", "ALL" or "A".
        #[arg(long, default_value = "A")]
        combo: String,
        /// Held-out group; the first fold when omitted.
        #[arg(long)]
        fold: Option<String>,
        #[arg(long)]
        split_field: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate every combination of a preset on every fold.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        msrp: Option<PathBuf>,
        /// paper-cm, paper-t5, all-subsets or custom:A;A C;ALL
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        split_field: bool,
        #[arg(long)]
        per_fold: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROUGE of decoded summaries against the manifest's references.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        /// JSONL lines with doc_id and summary.
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long, default_value = "decoded")]
        label: String,
    },
    /// Tables from per-cell result files.
    Report {
        /// Directory of cell result JSON files.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        per_fold: bool,
        /// Writes `<out>.md` and `<out>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Prepare {
            manifest,
            msrp,
            synthetic,
            split_field,
            out,
        } => {
            let manifest = if synthetic {
                synthetic::course_mirror_shaped(cfg.seed)?
            } else {
                load_manifest(manifest.expect("required unless synthetic"))?
            };
            prepare(&cfg, &manifest, &load_pairs(msrp.as_deref())?, split_field, &out)
        }
        Command::Train {
            manifest,
            msrp,
            combo,
            fold,
            split_field,
            out,
        } => {
            let manifest = load_manifest(manifest)?;
            let combo = TaskCombo::parse(&combo, cfg.mode)?;
            train_one(&cfg, &manifest, &load_pairs(msrp.as_deref())?, &combo, fold.as_deref(), split_field, &out)
        }
        Command::Sweep {
            manifest,
            msrp,
            preset,
            split_field,
            per_fold,
            out,
        } => {
            let manifest = load_manifest(manifest)?;
            let preset: Preset = preset.as_deref().unwrap_or(&cfg.preset).parse()?;
            sweep(&cfg, &manifest, &load_pairs(msrp.as_deref())?, &preset, split_field, per_fold, &out)
        }
        Command::Score {
            manifest,
            summaries,
            label,
        } => score_file(&load_manifest(manifest)?, &summaries, &label),
        Command::Report {
            results,
            preset,
            per_fold,
            out,
        } => report(&cfg, &results, preset.as_deref(), per_fold, &out),
    }
}

fn load_pairs(path: Option<&Path>) -> Result<Vec<ParaphrasePair>> {
    path.map(load_msrp_tsv).transpose().map(Option::unwrap_or_default)
}

fn folds(manifest: &DatasetManifest, split_field: bool, seed: u64) -> Result<FoldPlan> {
    if split_field {
        split_fold(manifest)
    } else {
        make_leave_one_out_folds(manifest, seed)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn write_examples(path: &Path, examples: &[TaskExample]) -> Result<()> {
    write_with(path, |w| {
        for ex in examples {
            serde_json::to_writer(&mut *w, ex)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn prepare(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    msrp: &[ParaphrasePair],
    split_field: bool,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    let tcfg = cfg.task_config();
    save_manifest(manifest, out.join("manifest.jsonl"))?;
    let vocab = corpus_vocabulary(manifest, msrp, &tcfg.prefixes, cfg.vocab_min_count)?;
    vocab.save(out.join("vocab.txt"))?;
    let plan = folds(manifest, split_field, cfg.seed)?;
    write_file(&out.join("folds.json"), to_json(&plan))?;
    let concepts = tfidf_rank(&manifest.records, tcfg.ngram_max, tcfg.concept_top_k)?;
    write_with(&out.join("concepts.jsonl"), |w| write_concepts_jsonl(&concepts, w))?;
    let all_tasks = multisum::experiments::full_aux(cfg.mode);
    for fold in &plan.folds {
        let dir = out.join(format!("fold-{}", fold.test_group));
        create_dir(&dir)?;
        let docs: Vec<_> = fold.train.iter().map(|&i| manifest.records[i].clone()).collect();
        let streams = match cfg.mode {
            ModelMode::Heads => build_heads_streams(&docs, msrp, &all_tasks, &vocab, &tcfg, cfg.seed)?,
            ModelMode::Text2Text => build_text2text_streams(&docs, msrp, &all_tasks, &vocab, &tcfg, cfg.seed)?,
        };
        for (task, pool) in &streams {
            write_examples(&dir.join(format!("{task}.jsonl")), pool)?;
        }
        info!(
            "fold {}: train {} / val {} / test {}",
            fold.test_group,
            fold.train.len(),
            fold.val.len(),
            fold.test.len()
        );
    }
    Ok(())
}

fn train_one(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    msrp: &[ParaphrasePair],
    combo: &TaskCombo,
    fold: Option<&str>,
    split_field: bool,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    let tcfg = cfg.task_config();
    let vocab = corpus_vocabulary(manifest, msrp, &tcfg.prefixes, cfg.vocab_min_count)?;
    let plan = folds(manifest, split_field, cfg.seed)?;
    let fold = match fold {
        Some(g) => plan
            .folds
            .iter()
            .find(|f| f.test_group == g)
            .ok_or_else(|| Error::Config(format!("no fold holds out `{g}`")))?,
        None => &plan.folds[0],
    };
    let docs = |idx: &[usize]| -> Vec<_> { idx.iter().map(|&i| manifest.records[i].clone()).collect() };
    let train_docs = docs(&fold.train);
    let streams = match cfg.mode {
        ModelMode::Heads => build_heads_streams(&train_docs, msrp, &combo.aux, &vocab, &tcfg, cfg.seed)?,
        ModelMode::Text2Text => build_text2text_streams(&train_docs, msrp, &combo.aux, &vocab, &tcfg, cfg.seed)?,
    };
    let val = ValidationSet::build(&docs(&fold.val), cfg.mode, &vocab, &tcfg)?;
    let test = ValidationSet::build(&docs(&fold.test), cfg.mode, &vocab, &tcfg)?;
    let mut mcfg = cfg.model_config(vocab.len());
    mcfg.tasks = combo.aux.clone();
    let train_cfg = TrainConfig {
        tasks: combo.aux.clone(),
        ..cfg.train_config()
    };
    let outcome = train(MultitaskModel::new(mcfg)?, &streams, &val, &vocab, &train_cfg, &mut NoObserver)?;

    vocab.save(out.join("vocab.txt"))?;
    outcome
        .best
        .to_checkpoint(VocabRef {
            path: Some("vocab.txt".into()),
            size: vocab.len(),
        })
        .save(out.join("checkpoint.json"))?;
    write_with(&out.join("train_log.csv"), |w| outcome.log.write_csv(w))?;
    write_file(&out.join("train_summary.json"), to_json(&outcome.log.summary_json()))?;

    let decoded = decode_test(&outcome.best, &test, &train_cfg, &vocab)?;
    write_with(&out.join("test_summaries.jsonl"), |w| write_summaries_jsonl(&decoded, w))?;
    let scores: Vec<_> = decoded
        .iter()
        .zip(&test.items)
        .map(|(d, item)| (item.group.clone(), score(&d.summary, &item.reference)))
        .collect();
    let agg = aggregate_scores(&scores)?;
    let cell = CellResult {
        combo: combo.clone(),
        fold: fold.test_group.clone(),
        score: agg.mean,
    };
    cell.save(out.join("result.json"))?;
    println!(
        "{} on {}: R1 {:.2} R2 {:.2} RL {:.2} (best epoch {})",
        combo,
        fold.test_group,
        agg.mean.r1.f1 * 100.0,
        agg.mean.r2.f1 * 100.0,
        agg.mean.rl.f1 * 100.0,
        outcome.log.best_epoch.unwrap_or(0)
    );
    Ok(())
}

fn decode_test(
    model: &MultitaskModel,
    test: &ValidationSet,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<Vec<DecodedSummary>> {
    let sources: Vec<_> = test.items.iter().map(|i| (i.doc_id.clone(), i.source.clone())).collect();
    decode_all(model, &sources, &cfg.decode, vocab)
}

/// Records every evaluated cell to disk as it finishes.
struct Recording<'a> {
    inner: TrainingEvaluator<'a>,
    dir: PathBuf,
}

impl CellEvaluator for Recording<'_> {
    fn evaluate(
        &self,
        manifest: &DatasetManifest,
        fold: &multisum::corpus::Fold,
        combo: &TaskCombo,
    ) -> Result<multisum::rouge::RougeScore> {
        let score = self.inner.evaluate(manifest, fold, combo)?;
        let cell = CellResult {
            combo: combo.clone(),
            fold: fold.test_group.clone(),
            score,
        };
        let name = format!("{}__{}.json", slug(&combo.label), slug(&fold.test_group));
        cell.save(self.dir.join(name))?;
        Ok(score)
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn sweep(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    msrp: &[ParaphrasePair],
    preset: &Preset,
    split_field: bool,
    per_fold: bool,
    out: &Path,
) -> Result<()> {
    let combos = enumerate_combos(cfg.mode, preset)?;
    let tcfg = cfg.task_config();
    let vocab = corpus_vocabulary(manifest, msrp, &tcfg.prefixes, cfg.vocab_min_count)?;
    let plan = folds(manifest, split_field, cfg.seed)?;
    let cells_dir = out.join("cells");
    create_dir(&cells_dir)?;
    let evaluator = Recording {
        inner: TrainingEvaluator {
            vocab: &vocab,
            msrp,
            tasks: tcfg,
            train: cfg.train_config(),
            model: cfg.model_config(vocab.len()),
        },
        dir: cells_dir,
    };
    let results = run_sweep(manifest, &plan, &combos, &evaluator, cfg.parallel)?;
    write_reports(&results, per_fold, &out.join("report"))
}

fn write_reports(results: &[multisum::experiments::ExperimentResult], per_fold: bool, out: &Path) -> Result<()> {
    let opts = ReportOptions {
        per_fold,
        title: None,
    };
    let md = emit_report(results, ReportFormat::Markdown, &opts)?;
    let csv = emit_report(results, ReportFormat::Csv, &opts)?;
    write_file(&out.with_extension("md"), &md)?;
    write_file(&out.with_extension("csv"), csv)?;
    print!("{md}");
    Ok(())
}

fn score_file(manifest: &DatasetManifest, summaries: &Path, label: &str) -> Result<()> {
    let text = fs::read_to_string(summaries).map_err(|e| Error::io(summaries, e))?;
    let by_id: BTreeMap<&str, &multisum::corpus::DocumentRecord> =
        manifest.records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    let mut scored = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let malformed = |message: String| Error::MalformedLine {
            path: summaries.display().to_string(),
            line: i + 1,
            message,
        };
        let d: DecodedSummary = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let rec = by_id
            .get(d.doc_id.as_str())
            .ok_or_else(|| malformed(format!("unknown doc_id `{}`", d.doc_id)))?;
        let s = score(&d.summary, &rec.abstractive_ref);
        scored.push((rec.group.clone(), s));
        rows.push((rec.group.clone(), s));
    }
    let agg = aggregate_scores(&scored)?;
    let mut out = scores_csv(rows.iter().map(|(g, s)| (g.as_str(), label, s)));
    for (g, s) in &agg.per_group {
        out.push_str(&format!("{g} (mean),{label},{},{},{}\n", s.r1.f1, s.r2.f1, s.rl.f1));
    }
    let m = agg.mean;
    out.push_str(&format!("ALL (mean of groups),{label},{},{},{}\n", m.r1.f1, m.r2.f1, m.rl.f1));
    print!("{out}");
    Ok(())
}

fn report(cfg: &ExperimentConfig, dir: &Path, preset: Option<&str>, per_fold: bool, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let cells: Vec<CellResult> = paths.iter().map(CellResult::load).collect::<Result<_>>()?;
    let combos = match preset {
        Some(p) => enumerate_combos(cfg.mode, &p.parse()?)?,
        None => {
            let mut seen: Vec<TaskCombo> = Vec::new();
            for c in &cells {
                if !seen.iter().any(|s| s.aux == c.combo.aux) {
                    seen.push(c.combo.clone());
                }
            }
            seen.sort_by(|a, b| a.aux.len().cmp(&b.aux.len()).then_with(|| a.aux.cmp(&b.aux)));
            seen
        }
    };
    let results = assemble_results(&combos, &cells)?;
    write_reports(&results, per_fold, out)
}
