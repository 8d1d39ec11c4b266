use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use srddl_core::data::{write_matrix_csv, Cohort, SynthConfig, SynthTruth};
use srddl_core::eval::MI_NOTE;
use srddl_core::trainer::{CrossValReport, HistoryRecord, Method, Prediction, SubjectPrediction};
use srddl_core::Matrix;

/// Sentinel for attention cells past the end of a short scan.
pub const ATTENTION_PAD: f64 = -1.0;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_truth(dir: &Path, config: &SynthConfig, seed: u64, cohort: &Cohort, truth: &SynthTruth) -> Result<()> {
    std::fs::create_dir_all(dir.join("loadings")).with_context(|| format!("creating {}", dir.display()))?;
    let summary = serde_json::json!({ "seed": seed, "config": config });
    write(&dir.join("config.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    write_matrix_csv(&dir.join("basis.csv"), &truth.basis)?;
    write_matrix_csv(&dir.join("score_map.csv"), &truth.score_map)?;
    write_matrix_csv(&dir.join("score_offset.csv"), &Matrix::from_row_slice(1, truth.score_offset.len(), &truth.score_offset))?;
    for (s, c) in cohort.subjects.iter().zip(&truth.loadings) {
        write_matrix_csv(&dir.join("loadings").join(format!("{}.csv", s.id())), c)?;
    }
    Ok(())
}

pub fn write_history(path: &Path, fold: Option<usize>, history: &[HistoryRecord]) -> Result<()> {
    let mut s = String::new();
    if fold.is_some() {
        s.push_str("fold,");
    }
    s.push_str(HistoryRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        if let Some(f) = fold {
            write!(s, "{f},")?;
        }
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    write(path, &s)
}

pub fn write_predictions(path: &Path, score_names: &[String], preds: &[(String, Prediction)]) -> Result<()> {
    let mut s = format!("subject_id,{}\n", score_names.join(","));
    for (id, p) in preds {
        let vals: Vec<String> = p.scores.values().into_iter().map(|v| v.map(num).unwrap_or_default()).collect();
        writeln!(s, "{id},{}", vals.join(","))?;
    }
    write(path, &s)
}

fn attention_rows<'a>(rows: impl Iterator<Item = (String, &'a [f64])> + Clone, prefix: &str) -> String {
    let width = rows.clone().map(|(_, a)| a.len()).max().unwrap_or(0);
    let mut s = format!("{prefix}{}\n", (0..width).map(|t| format!("t{t}")).collect::<Vec<_>>().join(","));
    for (lead, a) in rows {
        let cells: Vec<String> = (0..width).map(|t| num(a.get(t).copied().unwrap_or(ATTENTION_PAD))).collect();
        s.push_str(&format!("{lead},{}\n", cells.join(",")));
    }
    s
}

/// Subjects × time attention weights, padded with [`ATTENTION_PAD`].
pub fn write_attention(path: &Path, preds: &[(String, Prediction)]) -> Result<()> {
    let rows = preds.iter().map(|(id, p)| (id.clone(), p.attention.as_slice()));
    write(path, &attention_rows(rows, "subject_id,"))
}

fn loading_rows(s: &mut String, lead: &str, c: &Matrix) -> Result<()> {
    for t in 0..c.nrows() {
        let vals: Vec<String> = c.row(t).iter().map(|v| num(*v)).collect();
        writeln!(s, "{lead},{t},{}", vals.join(","))?;
    }
    Ok(())
}

fn loading_header(prefix: &str, k: usize) -> String {
    format!("{prefix}t,{}\n", (0..k).map(|j| format!("c{j}")).collect::<Vec<_>>().join(","))
}

/// Inferred network-strength time courses, one row per subject and window.
pub fn write_loadings(path: &Path, preds: &[(String, Prediction)]) -> Result<()> {
    let k = preds.first().map(|(_, p)| p.loadings.ncols()).unwrap_or(0);
    let mut s = loading_header("subject_id,", k);
    for (id, p) in preds {
        loading_rows(&mut s, id, &p.loadings)?;
    }
    write(path, &s)
}

pub fn write_crossval(dir: &Path, report: &CrossValReport) -> Result<()> {
    write(&dir.join("metrics.csv"), &report.metrics.to_csv())?;
    write(&dir.join("pooled_metrics.csv"), &report.pooled.to_csv())?;

    let mut hist = format!("fold,{}\n", HistoryRecord::CSV_HEADER);
    for (f, h) in report.histories.iter().enumerate() {
        for r in h {
            writeln!(hist, "{f},{}", r.csv_row())?;
        }
    }
    write(&dir.join("history.csv"), &hist)?;

    let names = &report.score_names;
    let mut preds = format!(
        "method,subject_id,fold,{},{}\n",
        names.iter().map(|n| format!("pred_{n}")).collect::<Vec<_>>().join(","),
        names.iter().map(|n| format!("true_{n}")).collect::<Vec<_>>().join(",")
    );
    for p in &report.predictions {
        let pr: Vec<String> = p.predicted.iter().map(|v| num(*v)).collect();
        let tr: Vec<String> = p.truth.iter().map(|v| v.map(num).unwrap_or_default()).collect();
        writeln!(preds, "{},{},{},{},{}", p.method.name(), p.subject_id, p.fold, pr.join(","), tr.join(","))?;
    }
    write(&dir.join("predictions.csv"), &preds)?;

    let coupled: Vec<&SubjectPrediction> = report.predictions.iter().filter(|p| p.method == Method::Coupled).collect();
    let rows = coupled.iter().map(|p| (format!("{},{}", p.subject_id, p.fold), p.attention.as_slice()));
    write(&dir.join("attention.csv"), &attention_rows(rows, "subject_id,fold,"))?;

    let k = coupled.first().map(|p| p.loadings.ncols()).unwrap_or(0);
    let mut loads = loading_header("subject_id,fold,", k);
    for p in &coupled {
        loading_rows(&mut loads, &format!("{},{}", p.subject_id, p.fold), &p.loadings)?;
    }
    write(&dir.join("loadings.csv"), &loads)?;

    let mut folds = String::from("subject_id,fold\n");
    for (id, f) in &report.assignment.fold_of {
        writeln!(folds, "{id},{f}")?;
    }
    write(&dir.join("folds.csv"), &folds)?;

    let note = format!(
        "{}\nThe pca-lstm baseline weights correlation features by |L_ij| of the off-diagonal Laplacian entries.\nAttention cells past the end of a scan hold {ATTENTION_PAD}.\n",
        MI_NOTE.trim_start_matches("# ")
    );
    write(&dir.join("notes.txt"), &note)
}
