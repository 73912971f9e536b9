//! Task-combination sweeps: which auxiliary tasks to add, how each
//! (combo, fold) cell is evaluated, and deltas against the single-task
//! baseline.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;
pub use report::{emit_report, ReportFormat, ReportOptions};

use crate::corpus::{DatasetManifest, DocumentRecord, Fold, FoldPlan};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelMode, MultitaskModel};
use crate::rouge::RougeScore;
use crate::tasks::{build_heads_streams, build_text2text_streams, ParaphrasePair, PrefixTable, TaskConfig, TaskId};
use crate::tokenizer::{basic_tokenize, build_vocab, Vocabulary};
use crate::trainer::{train, NoObserver, TrainConfig, ValidationSet};

pub const BASELINE_LABEL: &str = "Single task (A)";

/// Auxiliary tasks trained alongside summarization, with a display label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskCombo {
    pub label: String,
    /// Sorted in declared task order.
    pub aux: Vec<TaskId>,
}

impl TaskCombo {
    pub fn new(label: impl Into<String>, mut aux: Vec<TaskId>) -> Self {
        aux.sort();
        aux.dedup();
        Self {
            label: label.into(),
            aux,
        }
    }

    pub fn baseline() -> Self {
        Self::new(BASELINE_LABEL, Vec::new())
    }

    pub fn is_baseline(&self) -> bool {
        self.aux.is_empty()
    }

    /// Canonical label: `A` followed by the auxiliary letters, the baseline
    /// label for no auxiliaries, `ALL` for the mode's full set.
    pub fn canonical(aux: Vec<TaskId>, mode: ModelMode) -> Self {
        let combo = Self::new("", aux);
        let label = if combo.aux.is_empty() {
            BASELINE_LABEL.to_string()
        } else if combo.aux == full_aux(mode) {
            "ALL".to_string()
        } else {
            let mut s = String::from("A");
            for t in &combo.aux {
                s.push(' ');
                s.push(t.letter());
            }
            s
        };
        Self { label, ..combo }
    }

    /// Parses `A C P`, `ALL`, `A` or the baseline label.
    pub fn parse(text: &str, mode: ModelMode) -> Result<Self> {
        let t = text.trim();
        if t.eq_ignore_ascii_case("all") {
            return Ok(Self::canonical(full_aux(mode), mode));
        }
        if t.eq_ignore_ascii_case(BASELINE_LABEL) {
            return Ok(Self::baseline());
        }
        let mut aux = Vec::new();
        for part in t.split(|c: char| c.is_whitespace() || c == '+' || c == ',') {
            if part.is_empty() || part.eq_ignore_ascii_case("a") {
                continue;
            }
            let mut chars = part.chars();
            let task = match (chars.next(), chars.next()) {
                (Some(c), None) => TaskId::from_letter(c.to_ascii_uppercase()),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("bad task combination `{text}`")))?;
            aux.push(task);
        }
        if mode == ModelMode::Text2Text && aux.contains(&TaskId::L) {
            return Err(Error::LanguageModelingInText2Text);
        }
        Ok(Self::canonical(aux, mode))
    }
}

impl fmt::Display for TaskCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Every auxiliary task available in `mode`.
pub fn full_aux(mode: ModelMode) -> Vec<TaskId> {
    match mode {
        ModelMode::Heads => TaskId::AUXILIARY.to_vec(),
        ModelMode::Text2Text => vec![TaskId::E, TaskId::C, TaskId::P],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Preset {
    /// The twelve rows of the course-mirror multitask table.
    PaperCm,
    /// The seven rows of the text-to-text table.
    PaperT5,
    /// Every subset of the mode's auxiliary tasks.
    AllSubsets,
    Custom(Vec<String>),
}

impl FromStr for Preset {
    type Err = Error;

    /// `paper-cm`, `paper-t5`, `all-subsets`, or `custom:A C;A E P;ALL`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper-cm" => Ok(Self::PaperCm),
            "paper-t5" => Ok(Self::PaperT5),
            "all-subsets" => Ok(Self::AllSubsets),
            other => match other.strip_prefix("custom:") {
                Some(list) => Ok(Self::Custom(
                    list.split(';')
                        .map(str::trim)
                        .filter(|x| !x.is_empty())
                        .map(String::from)
                        .collect(),
                )),
                None => Err(Error::UnknownPreset(other.to_string())),
            },
        }
    }
}

pub fn enumerate_combos(mode: ModelMode, preset: &Preset) -> Result<Vec<TaskCombo>> {
    use TaskId::{C, E, L, P};
    let fixed = |rows: &[(&str, &[TaskId])]| -> Result<Vec<TaskCombo>> {
        rows.iter()
            .map(|(label, aux)| {
                let aux = if *label == "ALL" { full_aux(mode) } else { aux.to_vec() };
                if mode == ModelMode::Text2Text && aux.contains(&L) {
                    return Err(Error::LanguageModelingInText2Text);
                }
                Ok(TaskCombo::new(*label, aux))
            })
            .collect()
    };
    match preset {
        Preset::PaperCm => fixed(&[
            (BASELINE_LABEL, &[]),
            ("A C", &[C]),
            ("A E", &[E]),
            ("A P", &[P]),
            ("A L", &[L]),
            ("A E L", &[E, L]),
            ("A E P", &[E, P]),
            ("A E C", &[E, C]),
            ("A C P", &[C, P]),
            ("A L P", &[L, P]),
            ("A L C", &[L, C]),
            ("ALL", &[]),
        ]),
        Preset::PaperT5 => fixed(&[
            ("Single Task (A)", &[]),
            ("A E", &[E]),
            ("A C", &[C]),
            ("A P", &[P]),
            ("A C P", &[C, P]),
            ("A E C", &[E, C]),
            ("ALL", &[]),
        ]),
        Preset::AllSubsets => {
            let aux = full_aux(mode);
            let mut subsets: Vec<Vec<TaskId>> = (0u32..1 << aux.len())
                .map(|mask| {
                    aux.iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, &t)| t)
                        .collect()
                })
                .collect();
            subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            Ok(subsets.into_iter().map(|s| TaskCombo::canonical(s, mode)).collect())
        }
        Preset::Custom(rows) => {
            if rows.is_empty() {
                return Err(Error::Config("custom preset lists no combinations".into()));
            }
            rows.iter().map(|r| TaskCombo::parse(r, mode)).collect()
        }
    }
}

/// Vocabulary over every record and paraphrase pair, plus the text2text
/// prefixes and answers whatever their frequency.
pub fn corpus_vocabulary(
    manifest: &DatasetManifest,
    msrp: &[ParaphrasePair],
    prefixes: &PrefixTable,
    min_count: usize,
) -> Result<Vocabulary> {
    let texts = manifest
        .records
        .iter()
        .flat_map(|r| r.sentences.iter().chain([&r.abstractive_ref]))
        .chain(msrp.iter().flat_map(|p| [&p.first, &p.second]));
    let base = build_vocab(texts, min_count)?;
    let mut tokens: Vec<String> = base.tokens().iter().skip(crate::tokenizer::NUM_SPECIAL).cloned().collect();
    for t in basic_tokenize(&prefixes.vocabulary_text()) {
        if !base.contains(&t) && !tokens.contains(&t) {
            tokens.push(t);
        }
    }
    Vocabulary::from_regular_tokens(tokens)
}

/// Test-set score of one (combo, fold) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub combo: TaskCombo,
    /// Held-out group of the fold.
    pub fold: String,
    pub score: RougeScore,
}

impl CellResult {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedLine {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Trains and scores one cell. Implementations must be deterministic for
/// sweeps to be reproducible.
pub trait CellEvaluator: Sync {
    fn evaluate(&self, manifest: &DatasetManifest, fold: &Fold, combo: &TaskCombo) -> Result<RougeScore>;
}

/// Scores of one combo over every fold, compared with the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub combo: TaskCombo,
    pub per_fold: Vec<(String, RougeScore)>,
    /// Mean over folds.
    pub mean: RougeScore,
    /// `mean - baseline mean` for R1, R2, RL F1.
    pub delta: [f64; 3],
    /// `delta > 0`, per metric.
    pub improved: [bool; 3],
}

/// Groups cells by combo (in `combos` order) and computes deltas against the
/// baseline combo, which must be among them.
pub fn assemble_results(combos: &[TaskCombo], cells: &[CellResult]) -> Result<Vec<ExperimentResult>> {
    let mut by_combo: BTreeMap<&[TaskId], Vec<(String, RougeScore)>> = BTreeMap::new();
    for c in cells {
        by_combo
            .entry(c.combo.aux.as_slice())
            .or_default()
            .push((c.fold.clone(), c.score));
    }
    let baseline = combos
        .iter()
        .find(|c| c.is_baseline())
        .and_then(|c| by_combo.get(c.aux.as_slice()))
        .ok_or(Error::MissingBaseline)?;
    let base_mean = fold_mean(baseline)?;
    combos
        .iter()
        .map(|combo| {
            let per_fold = by_combo
                .get(combo.aux.as_slice())
                .cloned()
                .ok_or_else(|| Error::Config(format!("no results for `{combo}`")))?;
            let mean = fold_mean(&per_fold)?;
            let (m, b) = (mean.f1s(), base_mean.f1s());
            let delta = [m[0] - b[0], m[1] - b[1], m[2] - b[2]];
            Ok(ExperimentResult {
                combo: combo.clone(),
                per_fold,
                mean,
                delta,
                improved: delta.map(|d| d > 0.0),
            })
        })
        .collect()
}

fn fold_mean(per_fold: &[(String, RougeScore)]) -> Result<RougeScore> {
    let scores: Vec<RougeScore> = per_fold.iter().map(|(_, s)| *s).collect();
    RougeScore::mean(&scores).ok_or(Error::Empty("fold results"))
}

/// Evaluates every (combo, fold) cell and compares combos with the
/// baseline. Cells run in parallel when `parallel` is set; results are
/// identical either way.
pub fn run_sweep(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    combos: &[TaskCombo],
    evaluator: &dyn CellEvaluator,
    parallel: bool,
) -> Result<Vec<ExperimentResult>> {
    if !combos.iter().any(TaskCombo::is_baseline) {
        return Err(Error::MissingBaseline);
    }
    let cells: Vec<(&TaskCombo, &Fold)> = combos
        .iter()
        .flat_map(|c| plan.folds.iter().map(move |f| (c, f)))
        .collect();
    let eval = |(combo, fold): &(&TaskCombo, &Fold)| -> Result<CellResult> {
        info!("evaluating `{combo}` on fold {}", fold.test_group);
        Ok(CellResult {
            combo: (*combo).clone(),
            fold: fold.test_group.clone(),
            score: evaluator.evaluate(manifest, fold, combo)?,
        })
    };
    let results: Vec<CellResult> = if parallel {
        cells.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        cells.iter().map(eval).collect::<Result<_>>()?
    };
    assemble_results(combos, &results)
}

/// Evaluator that trains a fresh model per cell and beam-decodes the test
/// documents.
pub struct TrainingEvaluator<'a> {
    pub vocab: &'a Vocabulary,
    pub msrp: &'a [ParaphrasePair],
    pub tasks: TaskConfig,
    pub train: TrainConfig,
    /// Model shape; `tasks`, `mode` and `vocab_size` are filled per cell.
    pub model: ModelConfig,
}

impl TrainingEvaluator<'_> {
    fn docs(manifest: &DatasetManifest, idx: &[usize]) -> Vec<DocumentRecord> {
        idx.iter().map(|&i| manifest.records[i].clone()).collect()
    }
}

impl CellEvaluator for TrainingEvaluator<'_> {
    fn evaluate(&self, manifest: &DatasetManifest, fold: &Fold, combo: &TaskCombo) -> Result<RougeScore> {
        let mode = self.train.mode;
        let train_docs = Self::docs(manifest, &fold.train);
        let streams = match mode {
            ModelMode::Heads => {
                build_heads_streams(&train_docs, self.msrp, &combo.aux, self.vocab, &self.tasks, self.train.seed)?
            }
            ModelMode::Text2Text => {
                build_text2text_streams(&train_docs, self.msrp, &combo.aux, self.vocab, &self.tasks, self.train.seed)?
            }
        };
        let val = ValidationSet::build(&Self::docs(manifest, &fold.val), mode, self.vocab, &self.tasks)?;
        let test = ValidationSet::build(&Self::docs(manifest, &fold.test), mode, self.vocab, &self.tasks)?;
        let mut mcfg = self.model.clone();
        mcfg.mode = mode;
        mcfg.tasks = combo.aux.clone();
        mcfg.encoder.vocab_size = self.vocab.len();
        let tcfg = TrainConfig {
            tasks: combo.aux.clone(),
            ..self.train.clone()
        };
        let outcome = train(MultitaskModel::new(mcfg)?, &streams, &val, self.vocab, &tcfg, &mut NoObserver)?;
        let scored = test.score(&outcome.best, &tcfg.decode, self.vocab)?;
        let scores: Vec<RougeScore> = scored.into_iter().map(|(_, _, s)| s).collect();
        RougeScore::mean(&scores).ok_or(Error::Empty("test set"))
    }
}
