//! Error metrics for destandardized predictions, grouped by true gender.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::manifest::Gender;

fn check(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Empty("metric over zero samples".into()));
    }
    if a != b {
        return Err(Error::Shape(format!("{a} predictions vs {b} targets")));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check(preds.len(), targets.len())?;
    let sq: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check(preds.len(), targets.len())?;
    let abs: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / preds.len() as f64)
}

/// Fraction of rows where `prob >= threshold` agrees with the binary target.
pub fn accuracy(probs: &[f64], targets: &[bool], threshold: f64) -> Result<f64> {
    check(probs.len(), targets.len())?;
    let hits = probs
        .iter()
        .zip(targets)
        .filter(|(p, t)| (**p >= threshold) == **t)
        .count();
    Ok(hits as f64 / probs.len() as f64)
}

/// One evaluated utterance in physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub height_pred: f64,
    pub height_true: f64,
    pub age_pred: f64,
    pub age_true: f64,
    /// Predicted probability of female.
    pub female_prob: f64,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub count: usize,
    pub rmse_height: f64,
    pub mae_height: f64,
    pub rmse_age: f64,
    pub mae_age: f64,
    pub gender_accuracy: f64,
}

/// Metrics per gender group and overall. A group with no members is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub male: Option<GroupMetrics>,
    pub female: Option<GroupMetrics>,
    pub all: Option<GroupMetrics>,
}

pub const GENDER_THRESHOLD: f64 = 0.5;

fn group(rows: &[&EvalRow]) -> Result<Option<GroupMetrics>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let col = |f: fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
    let (hp, ht) = (col(|r| r.height_pred), col(|r| r.height_true));
    let (ap, at) = (col(|r| r.age_pred), col(|r| r.age_true));
    let probs = col(|r| r.female_prob);
    let is_female: Vec<bool> = rows.iter().map(|r| r.gender == Gender::Female).collect();
    Ok(Some(GroupMetrics {
        count: rows.len(),
        rmse_height: rmse(&hp, &ht)?,
        mae_height: mae(&hp, &ht)?,
        rmse_age: rmse(&ap, &at)?,
        mae_age: mae(&ap, &at)?,
        gender_accuracy: accuracy(&probs, &is_female, GENDER_THRESHOLD)?,
    }))
}

pub fn grouped_report(rows: &[EvalRow]) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::Empty("no evaluation rows".into()));
    }
    let male: Vec<&EvalRow> = rows.iter().filter(|r| r.gender == Gender::Male).collect();
    let female: Vec<&EvalRow> = rows.iter().filter(|r| r.gender == Gender::Female).collect();
    let all: Vec<&EvalRow> = rows.iter().collect();
    Ok(MetricsReport {
        male: group(&male)?,
        female: group(&female)?,
        all: group(&all)?,
    })
}

impl MetricsReport {
    fn rows(&self) -> [(&'static str, Option<GroupMetrics>); 3] {
        [("M", self.male), ("F", self.female), ("all", self.all)]
    }

    /// Aligned table: one row per group, height and age RMSE/MAE columns.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<5} {:>6} | {:>11} {:>10} | {:>8} {:>7} | {:>10}",
            "group", "n", "height RMSE", "height MAE", "age RMSE", "age MAE", "gender acc"
        );
        for (name, g) in self.rows() {
            match g {
                Some(g) => {
                    let _ = writeln!(
                        s,
                        "{:<5} {:>6} | {:>11.2} {:>10.2} | {:>8.2} {:>7.2} | {:>10.4}",
                        name, g.count, g.rmse_height, g.mae_height, g.rmse_age, g.mae_age, g.gender_accuracy
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{:<5} {:>6} | {:>11} {:>10} | {:>8} {:>7} | {:>10}",
                        name, 0, "-", "-", "-", "-", "-"
                    );
                }
            }
        }
        s
    }

    /// Comma-separated form; absent groups have empty metric fields.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,count,height_rmse,height_mae,age_rmse,age_mae,gender_accuracy\n");
        for (name, g) in self.rows() {
            match g {
                Some(g) => {
                    let _ = writeln!(
                        s,
                        "{name},{},{},{},{},{},{}",
                        g.count, g.rmse_height, g.mae_height, g.rmse_age, g.mae_age, g.gender_accuracy
                    );
                }
                None => {
                    let _ = writeln!(s, "{name},0,,,,,");
                }
            }
        }
        s
    }
}
