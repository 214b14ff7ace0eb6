use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Validation metric monitored by the callbacks and by best-epoch retention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Validation RMSE in µg/m³, lower is better.
    Rmse,
    /// Validation decile accuracy, higher is better.
    Accuracy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricGoal {
    Maximize,
    Minimize,
}

impl MetricKind {
    pub fn goal(self) -> MetricGoal {
        match self {
            MetricKind::Rmse => MetricGoal::Minimize,
            MetricKind::Accuracy => MetricGoal::Maximize,
        }
    }
}

impl MetricGoal {
    /// Strict improvement of `candidate` over `best` (no min-delta).
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            MetricGoal::Maximize => candidate > best,
            MetricGoal::Minimize => candidate < best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub metric: MetricKind,
    pub val_metric: f64,
    /// Learning rate in effect during the epoch.
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingHistory {
    pub metric: MetricKind,
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn new(metric: MetricKind) -> Self {
        Self { metric, records: Vec::new() }
    }

    pub fn push(&mut self, train_loss: f64, val_metric: f64, learning_rate: f64) {
        let epoch = self.records.len() + 1;
        self.records.push(EpochRecord { epoch, train_loss, metric: self.metric, val_metric, learning_rate });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of the best record; ties keep the earliest.
    pub fn best_index(&self) -> Option<usize> {
        let goal = self.metric.goal();
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            if best.is_none_or(|b| goal.improves(r.val_metric, self.records[b].val_metric)) {
                best = Some(i);
            }
        }
        best
    }

    /// Trailing epochs without improvement, optionally only counting epochs
    /// from `from` on.
    fn stagnant_since(&self, from: usize) -> usize {
        let Some(best) = self.best_index() else { return 0 };
        self.records.len() - 1 - best.max(from.saturating_sub(1))
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), TrainError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, TrainError> {
        let mut records: Vec<EpochRecord> = Vec::new();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let metric = records.first().map_or(MetricKind::Rmse, |r| r.metric);
        Ok(Self { metric, records })
    }
}

/// Multiply the learning rate by `factor` once the monitored metric has
/// failed to improve for `patience` consecutive epochs since the last
/// reduction. Epochs run at `current_lr` form the current window.
pub fn reduce_lr_on_plateau(history: &TrainingHistory, patience: usize, factor: f64, current_lr: f64) -> f64 {
    if history.is_empty() || patience == 0 {
        return current_lr;
    }
    let window_start = history
        .records
        .iter()
        .rposition(|r| r.learning_rate != current_lr)
        .map_or(0, |i| i + 1);
    if history.stagnant_since(window_start) >= patience {
        current_lr * factor
    } else {
        current_lr
    }
}

/// True once the monitored metric has not improved for `patience`
/// consecutive epochs. Learning-rate reductions do not reset the count.
pub fn early_stop(history: &TrainingHistory, patience: usize) -> bool {
    !history.is_empty() && history.stagnant_since(0) >= patience
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays `metrics` through both callbacks the way the training loop does.
    fn replay(kind: MetricKind, metrics: &[f64], lr: f64) -> (TrainingHistory, Vec<f64>, Option<usize>) {
        let mut h = TrainingHistory::new(kind);
        let mut lr = lr;
        let mut lrs = Vec::new();
        for &m in metrics {
            h.push(0.0, m, lr);
            lr = reduce_lr_on_plateau(&h, 10, 0.1, lr);
            lrs.push(lr);
            if early_stop(&h, 20) {
                let stopped = h.len();
                return (h, lrs, Some(stopped));
            }
        }
        (h, lrs, None)
    }

    #[test]
    fn reduces_after_ten_flat_epochs() {
        // best at epoch 5, epochs 6..15 worse
        let mut m: Vec<f64> = vec![10.0, 9.0, 8.0, 7.0, 6.0];
        m.extend(std::iter::repeat_n(6.5, 10));
        let (_, lrs, _) = replay(MetricKind::Rmse, &m, 1e-3);
        assert_eq!(lrs[13], 1e-3);
        assert!((lrs[14] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut m = vec![0.5];
        m.extend(std::iter::repeat_n(0.4, 8));
        m.push(0.6);
        m.extend(std::iter::repeat_n(0.4, 9));
        let (_, lrs, stop) = replay(MetricKind::Accuracy, &m, 1e-3);
        assert!(lrs.iter().all(|&l| l == 1e-3));
        assert!(stop.is_none());
    }

    #[test]
    fn two_plateaus_and_a_stop() {
        let mut m = vec![1.0];
        m.extend(std::iter::repeat_n(2.0, 25));
        let (h, lrs, stop) = replay(MetricKind::Rmse, &m, 1e-3);
        assert!((lrs[10] - 1e-4).abs() < 1e-18);
        assert!((lrs[19] - 1e-4).abs() < 1e-18);
        assert!((lrs[20] - 1e-5).abs() < 1e-18);
        assert_eq!(stop, Some(21));
        assert_eq!(h.records[20].learning_rate, lrs[19]);
    }

    #[test]
    fn early_stop_rules() {
        let mut h = TrainingHistory::new(MetricKind::Accuracy);
        for _ in 0..19 {
            h.push(0.0, 0.1, 1e-3);
        }
        assert!(!early_stop(&h, 20), "shorter than patience");
        h.push(0.0, 0.1, 1e-3);
        h.push(0.0, 0.1, 1e-3);
        assert!(early_stop(&h, 20));

        let mut h = TrainingHistory::new(MetricKind::Accuracy);
        h.push(0.0, 0.1, 1e-3);
        for _ in 0..18 {
            h.push(0.0, 0.05, 1e-3);
        }
        h.push(0.0, 0.2, 1e-3);
        assert!(!early_stop(&h, 20));
    }

    #[test]
    fn ties_are_not_improvements() {
        assert!(!MetricGoal::Minimize.improves(1.0, 1.0));
        assert!(!MetricGoal::Maximize.improves(1.0, 1.0));
        let mut h = TrainingHistory::new(MetricKind::Rmse);
        for v in [3.0, 2.0, 2.0, 2.0] {
            h.push(0.0, v, 1e-3);
        }
        assert_eq!(h.best_index(), Some(1));
    }

    #[test]
    fn history_jsonl_round_trip() {
        let mut h = TrainingHistory::new(MetricKind::Accuracy);
        h.push(1.25, 0.3, 1e-3);
        h.push(0.75, 0.35, 1e-4);
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        assert_eq!(TrainingHistory::read_jsonl(buf.as_slice()).unwrap(), h);
    }
}
