//! Output files: summary table, recall curves, dialog transcripts, training
//! curves and ablation tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::ablate::AblationReport;
use super::eval::{mean_curve, mean_std, recall_at, FoldResult};
use super::HarnessError;
use crate::qdsl::{OracleAnswer, TranscriptLine};
use crate::scene::AttributeSchema;
use crate::trainer::{DialogRecord, EpisodeStats};

/// Rounds reported in the summary table.
pub const REPORTED_ROUNDS: [usize; 3] = [10, 20, 50];

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Creates `dir` (and parents); fails if the path exists and is not a directory.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf, HarnessError> {
    if dir.exists() && !dir.is_dir() {
        return Err(HarnessError::Config(format!("{} exists and is not a directory", dir.display())));
    }
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

/// One evaluated (policy, split) pair.
pub struct EvalRun<'a> {
    pub policy: &'a str,
    pub split: &'a str,
    pub schema: &'a AttributeSchema,
    pub folds: &'a [FoldResult],
}

impl EvalRun<'_> {
    fn stem(&self) -> String {
        format!("{}_{}", self.policy, self.split)
    }

    pub fn budget(&self) -> usize {
        self.folds.first().map_or(0, |f| f.curve.len())
    }

    pub fn curve(&self) -> Vec<f64> {
        let ds: Vec<DialogRecord> = self.folds.iter().flat_map(|f| f.dialogs.iter().cloned()).collect();
        mean_curve(&ds, self.budget())
    }

    pub fn mean_auc(&self) -> f64 {
        mean_std(&self.folds.iter().map(|f| f.auc).collect::<Vec<_>>()).0
    }
}

/// `summary.csv`: one row per fold run, then mean and std rows per (policy, split).
pub fn write_summary(out: &Path, runs: &[EvalRun<'_>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(ensure_dir(out)?.join("summary.csv"))?;
    w.write_record(["policy", "split", "row", "R@10", "R@20", "R@50", "AUC"])?;
    for run in runs {
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); REPORTED_ROUNDS.len() + 1];
        for f in run.folds {
            let mut rec = vec![run.policy.to_string(), run.split.to_string(), format!("r{}f{}", f.repeat, f.fold)];
            for (i, &k) in REPORTED_ROUNDS.iter().enumerate() {
                let v = recall_at(&f.curve, k);
                cols[i].push(v);
                rec.push(fmt(v));
            }
            cols[REPORTED_ROUNDS.len()].push(f.auc);
            rec.push(fmt(f.auc));
            w.write_record(&rec)?;
        }
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let mut rec = vec![run.policy.to_string(), run.split.to_string(), label.to_string()];
            for c in &cols {
                let (m, s) = mean_std(c);
                rec.push(fmt(if pick == 0 { m } else { s }));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `curves/<policy>_<split>.csv` with the round-by-round mean recall.
pub fn write_curve(out: &Path, run: &EvalRun<'_>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(ensure_dir(&out.join("curves"))?.join(format!("{}.csv", run.stem())))?;
    w.write_record(["round", "recall"])?;
    for (t, r) in run.curve().iter().enumerate() {
        w.write_record([(t + 1).to_string(), fmt(*r)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn transcript_line(round: usize, program: &str, answer: &OracleAnswer, schema: &AttributeSchema) -> TranscriptLine {
    TranscriptLine {
        round,
        program: program.to_string(),
        kind: answer.kind(),
        value: match *answer {
            OracleAnswer::Value { concept, value } => Some(format!(
                "{}={}",
                schema.concepts[concept].name,
                schema.value_name(concept, value)
            )),
            _ => None,
        },
    }
}

/// `transcripts/<policy>_<split>_r<repeat>f<fold>.txt`: per image a `#`
/// header, then one tab-separated line per round.
pub fn write_transcripts(out: &Path, run: &EvalRun<'_>) -> Result<(), HarnessError> {
    let dir = ensure_dir(&out.join("transcripts"))?;
    for f in run.folds {
        let path = dir.join(format!("{}_r{}f{}.txt", run.stem(), f.repeat, f.fold));
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        for d in &f.dialogs {
            writeln!(
                file,
                "# image {} scene {} objects {} init_recall {} final_recall {}",
                d.image_index,
                d.scene_id,
                d.num_objects,
                fmt(d.init_recall),
                fmt(d.final_recall)
            )?;
            for r in &d.rounds {
                writeln!(file, "{}", transcript_line(r.round, &r.program, &r.answer, run.schema))?;
            }
        }
        file.flush()?;
    }
    Ok(())
}

/// `visual.csv`: held-out accuracy at each visual checkpoint.
pub fn write_visual(out: &Path, runs: &[EvalRun<'_>]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(ensure_dir(out)?.join("visual.csv"))?;
    w.write_record(["policy", "split", "repeat", "fold", "images", "accuracy"])?;
    for run in runs {
        for f in run.folds {
            for &(images, acc) in &f.visual_accuracy {
                w.write_record([
                    run.policy.to_string(),
                    run.split.to_string(),
                    f.repeat.to_string(),
                    f.fold.to_string(),
                    images.to_string(),
                    fmt(acc),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary, curves and transcripts for every run.
pub fn emit(out: &Path, runs: &[EvalRun<'_>]) -> Result<(), HarnessError> {
    write_summary(out, runs)?;
    for run in runs {
        write_curve(out, run)?;
        write_transcripts(out, run)?;
    }
    if runs.iter().any(|r| r.folds.iter().any(|f| !f.visual_accuracy.is_empty())) {
        write_visual(out, runs)?;
    }
    Ok(())
}

/// `curves/train.csv` with one row per episode.
pub fn write_training_curve(out: &Path, curve: &[EpisodeStats]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(ensure_dir(&out.join("curves"))?.join("train.csv"))?;
    w.write_record([
        "episode",
        "mean_reward",
        "init_recall",
        "final_recall",
        "policy_loss",
        "value_loss",
        "entropy",
        "grad_norm",
        "lr",
    ])?;
    for s in curve {
        w.write_record([
            s.episode.to_string(),
            fmt(s.mean_reward),
            fmt(s.mean_init_recall),
            fmt(s.mean_final_recall),
            fmt(s.policy_loss),
            fmt(s.value_loss),
            fmt(s.entropy),
            fmt(s.grad_norm),
            format!("{:e}", s.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// `ablation/*.csv` plus `ablation/report.json`.
pub fn write_ablation(out: &Path, rep: &AblationReport) -> Result<(), HarnessError> {
    let dir = ensure_dir(&out.join("ablation"))?;
    let paired = |a: &[f64], b: &[f64]| -> Vec<Vec<String>> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(t, (x, y))| vec![(t + 1).to_string(), fmt(*x), fmt(*y)])
            .collect()
    };
    write_rows(
        &dir.join("static_vision.csv"),
        &["round", "full", "static"],
        paired(&rep.full_curve, &rep.static_curve).into_iter(),
    )?;
    write_rows(
        &dir.join("partial_vision.csv"),
        &["round", "fresh", "partial"],
        paired(&rep.mixed_curve, &rep.partial_curve).into_iter(),
    )?;
    write_rows(
        &dir.join("question_types.csv"),
        &["round", "zero_hop", "one_hop", "ambiguous", "invalid"],
        rep.question_types.iter().enumerate().map(|(t, q)| {
            vec![
                (t + 1).to_string(),
                q.zero_hop.to_string(),
                q.one_hop.to_string(),
                q.ambiguous.to_string(),
                q.invalid.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("object_count.csv"),
        &["objects", "final_recall", "dialog_length", "ambiguous_or_invalid"],
        rep.object_counts.iter().map(|r| {
            vec![
                r.objects.to_string(),
                fmt(r.final_recall),
                fmt(r.mean_dialog_length),
                fmt(r.failure_share),
            ]
        }),
    )?;
    write_rows(
        &dir.join("commit_sources.csv"),
        &["image", "vision", "oracle"],
        rep.commit_sources
            .iter()
            .map(|c| vec![c.image_index.to_string(), fmt(c.vision), fmt(c.oracle)]),
    )?;
    let json = serde_json::to_string_pretty(rep).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(dir.join("report.json"), json)?;
    Ok(())
}
