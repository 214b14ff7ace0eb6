use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::callbacks::MetricKind;
use super::TrainError;
use crate::models::Base;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub base: Base,
    pub zoom: u32,
    pub optimizer: String,
    pub learning_rate: f64,
    pub metric: MetricKind,
    pub best_metric: f64,
    /// 1-based.
    pub best_epoch: usize,
    pub checkpoint_path: Option<String>,
}

pub fn write_leaderboard(entries: &[LeaderboardEntry], mut out: impl Write) -> Result<(), TrainError> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_leaderboard(input: impl BufRead) -> Result<Vec<LeaderboardEntry>, TrainError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// One leaderboard display row: architecture / zoom / decile accuracy (%) / RMSE.
/// Missing values print as `-`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderboardRow {
    pub architecture: String,
    pub zoom: u32,
    pub accuracy_pct: Option<f64>,
    pub rmse: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl fmt::Display for LeaderboardRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} / {} / {}", self.architecture, self.zoom, opt(self.accuracy_pct), opt(self.rmse))
    }
}

impl FromStr for LeaderboardRow {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TrainError::BadRow(s.to_string());
        let parts: Vec<&str> = s.split('/').map(str::trim).collect();
        let [arch, zoom, acc, rmse] = parts.as_slice() else { return Err(bad()) };
        if arch.is_empty() {
            return Err(bad());
        }
        let num = |t: &str| -> Result<Option<f64>, TrainError> {
            if t == "-" {
                Ok(None)
            } else {
                t.parse().map(Some).map_err(|_| bad())
            }
        };
        Ok(Self {
            architecture: (*arch).to_string(),
            zoom: zoom.parse().map_err(|_| bad())?,
            accuracy_pct: num(acc)?,
            rmse: num(rmse)?,
        })
    }
}

pub fn base_label(base: Base) -> &'static str {
    match base {
        Base::SepConv => "SepConv",
        Base::Plain => "Plain",
    }
}

/// Best entry per (architecture, zoom) and task, merged into display rows.
pub fn table_rows(entries: &[LeaderboardEntry]) -> Vec<LeaderboardRow> {
    let mut rows: BTreeMap<(&'static str, u32), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.best_metric.is_finite()) {
        let slot = rows.entry((base_label(e.base), e.zoom)).or_default();
        match e.metric {
            MetricKind::Accuracy => {
                let pct = 100.0 * e.best_metric;
                slot.0 = Some(slot.0.map_or(pct, |v: f64| v.max(pct)));
            }
            MetricKind::Rmse => slot.1 = Some(slot.1.map_or(e.best_metric, |v: f64| v.min(e.best_metric))),
        }
    }
    rows.into_iter()
        .map(|((a, zoom), (accuracy_pct, rmse))| LeaderboardRow { architecture: a.into(), zoom, accuracy_pct, rmse })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_row_parses_and_prints() {
        let row: LeaderboardRow = "Xception / 13 / 35.33 / 13.63".parse().unwrap();
        assert_eq!(row.architecture, "Xception");
        assert_eq!(row.zoom, 13);
        assert_eq!(row.accuracy_pct, Some(35.33));
        assert_eq!(row.rmse, Some(13.63));
        assert_eq!(row.to_string(), "Xception / 13 / 35.33 / 13.63");
        assert!("Xception / 13 / 35.33".parse::<LeaderboardRow>().is_err());
        assert!("Xception / z / 1 / 2".parse::<LeaderboardRow>().is_err());
    }

    #[test]
    fn rows_from_entries() {
        let e = |metric, best_metric, zoom| LeaderboardEntry {
            base: Base::SepConv,
            zoom,
            optimizer: "nadam".into(),
            learning_rate: 1e-3,
            metric,
            best_metric,
            best_epoch: 3,
            checkpoint_path: None,
        };
        let rows = table_rows(&[
            e(MetricKind::Accuracy, 0.3533, 13),
            e(MetricKind::Rmse, 13.63, 13),
            e(MetricKind::Rmse, 14.0, 13),
            e(MetricKind::Rmse, 14.18, 14),
        ]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].to_string(), "SepConv / 13 / 35.33 / 13.63");
        assert_eq!(rows[1].to_string(), "SepConv / 14 / - / 14.18");
        let back: LeaderboardRow = rows[1].to_string().parse().unwrap();
        assert_eq!(back, rows[1]);
    }
}
