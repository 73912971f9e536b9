use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rouge::{csv_field, RougeScore};

use super::ExperimentResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Also list every fold of every combo.
    pub per_fold: bool,
    pub title: Option<String>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn columns(s: &RougeScore) -> [f64; 4] {
    let [a, b, c] = s.f1s();
    [a, b, c, s.mean_f1()]
}

/// Per-column maxima over the combo means (R1, R2, RL, AVG).
fn column_best(results: &[ExperimentResult]) -> [f64; 4] {
    let mut best = [f64::NEG_INFINITY; 4];
    for r in results {
        for (b, v) in best.iter_mut().zip(columns(&r.mean)) {
            *b = b.max(v);
        }
    }
    best
}

/// Improvement flags of each fold of `r` against the baseline's same fold.
fn fold_flags(r: &ExperimentResult, baseline: Option<&ExperimentResult>) -> Vec<[bool; 3]> {
    r.per_fold
        .iter()
        .map(|(fold, s)| {
            let base = baseline.and_then(|b| b.per_fold.iter().find(|(f, _)| f == fold));
            match base {
                Some((_, b)) => {
                    let (x, y) = (s.f1s(), b.f1s());
                    [x[0] > y[0], x[1] > y[1], x[2] > y[2]]
                }
                None => [false; 3],
            }
        })
        .collect()
}

/// Comparison table with one row per combo. Scores are F1 × 100. Cells
/// above the single-task baseline are marked, as are column maxima.
pub fn emit_report(results: &[ExperimentResult], format: ReportFormat, opts: &ReportOptions) -> Result<String> {
    if results.is_empty() {
        return Err(Error::Empty("experiment results"));
    }
    let best = column_best(results);
    let baseline = results.iter().find(|r| r.combo.is_baseline());
    Ok(match format {
        ReportFormat::Markdown => markdown(results, &best, baseline, opts),
        ReportFormat::Csv => csv(results, &best, baseline, opts),
    })
}

fn markdown(
    results: &[ExperimentResult],
    best: &[f64; 4],
    baseline: Option<&ExperimentResult>,
    opts: &ReportOptions,
) -> String {
    let mut out = String::new();
    if let Some(t) = &opts.title {
        let _ = writeln!(out, "## {t}\n");
    }
    out.push_str("| Model | R1 | R2 | RL | AVG |\n|---|---:|---:|---:|---:|\n");
    for r in results {
        let _ = write!(out, "| {} |", r.combo.label);
        for (i, v) in columns(&r.mean).into_iter().enumerate() {
            let mut cell = pct(v);
            if v == best[i] {
                cell = format!("**{cell}**");
            }
            if i < 3 && r.improved[i] {
                cell.push_str(" +");
            }
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out.push_str(
        "\nScores are F1 x 100. `+` marks a score above the single-task baseline; \
         bold marks the column maximum. AVG is the mean of R1, R2 and RL.\n",
    );
    if opts.per_fold {
        out.push_str("\n| Model | Fold | R1 | R2 | RL | AVG |\n|---|---|---:|---:|---:|---:|\n");
        for r in results {
            for ((fold, s), flags) in r.per_fold.iter().zip(fold_flags(r, baseline)) {
                let _ = write!(out, "| {} | {fold} |", r.combo.label);
                for (i, v) in columns(s).into_iter().enumerate() {
                    let mark = if i < 3 && flags[i] { " +" } else { "" };
                    let _ = write!(out, " {}{mark} |", pct(v));
                }
                out.push('\n');
            }
        }
    }
    out
}

fn csv(
    results: &[ExperimentResult],
    best: &[f64; 4],
    baseline: Option<&ExperimentResult>,
    opts: &ReportOptions,
) -> String {
    let mut out = String::from(
        "model,fold,r1,r2,rl,avg,r1_improved,r2_improved,rl_improved,r1_best,r2_best,rl_best,avg_best\n",
    );
    let mut row = |label: &str, fold: &str, s: &RougeScore, improved: [bool; 3], is_best: [bool; 4]| {
        let v = columns(s);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(label),
            csv_field(fold),
            pct(v[0]),
            pct(v[1]),
            pct(v[2]),
            pct(v[3]),
            improved[0],
            improved[1],
            improved[2],
            is_best[0],
            is_best[1],
            is_best[2],
            is_best[3]
        );
    };
    for r in results {
        let v = columns(&r.mean);
        let is_best = [0, 1, 2, 3].map(|i| v[i] == best[i]);
        row(&r.combo.label, "mean", &r.mean, r.improved, is_best);
    }
    if opts.per_fold {
        for r in results {
            for ((fold, s), flags) in r.per_fold.iter().zip(fold_flags(r, baseline)) {
                row(&r.combo.label, fold, s, flags, [false; 4]);
            }
        }
    }
    out
}
