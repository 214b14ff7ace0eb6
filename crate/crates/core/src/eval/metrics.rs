use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::quantile_sorted;

pub const NUM_CLASSES: usize = 10;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check_pair(preds, truths)?;
    let sse: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// `(r2_cod, r2_corr)`: coefficient of determination and squared Pearson
/// correlation. With constant predictions the correlation term is 0.
pub fn r_squared(preds: &[f64], truths: &[f64]) -> Result<(f64, f64), EvalError> {
    check_pair(preds, truths)?;
    if preds.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: preds.len() });
    }
    let (mp, mt) = (mean(preds), mean(truths));
    let ss_tot: f64 = truths.iter().map(|t| (t - mt).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let ss_res: f64 = preds.iter().zip(truths).map(|(p, t)| (t - p).powi(2)).sum();
    let ss_pred: f64 = preds.iter().map(|p| (p - mp).powi(2)).sum();
    let cov: f64 = preds.iter().zip(truths).map(|(p, t)| (p - mp) * (t - mt)).sum();
    let corr2 = if ss_pred == 0.0 { 0.0 } else { cov * cov / (ss_pred * ss_tot) };
    Ok((1.0 - ss_res / ss_tot, corr2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub one_off_accuracy: f64,
    /// `confusion[t - 1][p - 1]` counts truth `t` predicted as `p`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

pub fn classification_metrics(preds: &[u8], truths: &[u8]) -> Result<ClassificationMetrics, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch { left: preds.len(), right: truths.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let (mut hits, mut near) = (0usize, 0usize);
    for (&p, &t) in preds.iter().zip(truths) {
        for c in [p, t] {
            if !(1..=NUM_CLASSES as u8).contains(&c) {
                return Err(EvalError::ClassOutOfRange(c));
            }
        }
        confusion[t as usize - 1][p as usize - 1] += 1;
        hits += usize::from(p == t);
        near += usize::from(p.abs_diff(t) <= 1);
    }
    let n = preds.len() as f64;
    Ok(ClassificationMetrics { accuracy: hits as f64 / n, one_off_accuracy: near as f64 / n, confusion })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitLine {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub slope_ci_low: f64,
    pub slope_ci_high: f64,
}

/// Ordinary least squares of `y` on `x` with a normal-approximation 95%
/// interval for the slope (meaningful for n ≥ 30).
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<FitLine, EvalError> {
    check_pair(x, y)?;
    let n = x.len();
    if n < 3 {
        return Err(EvalError::TooFew { need: 3, got: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(EvalError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = (ssr / (n - 2) as f64 / sxx).sqrt();
    Ok(FitLine {
        slope,
        intercept,
        slope_se,
        slope_ci_low: slope - Z_95 * slope_se,
        slope_ci_high: slope + Z_95 * slope_se,
    })
}

/// n, mean, SD and deciles of a label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample SD (n − 1 denominator); 0 for a single value.
    pub sd: f64,
    pub min: f64,
    pub deciles: [f64; 9],
    pub max: f64,
}

pub fn describe(values: &[f64]) -> Result<Summary, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(values);
    let n = values.len();
    let sd = if n > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let deciles = std::array::from_fn(|i| quantile_sorted(&sorted, (i + 1) as f64 / 10.0));
    Ok(Summary { n, mean: m, sd, min: sorted[0], deciles, max: sorted[n - 1] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub rmse: Option<f64>,
    pub r2_cod: Option<f64>,
    pub r2_corr: Option<f64>,
    pub accuracy: Option<f64>,
    pub one_off_accuracy: Option<f64>,
    pub confusion: Option<[[u64; NUM_CLASSES]; NUM_CLASSES]>,
    /// Predicted (y) regressed on measured (x).
    pub fit: Option<FitLine>,
}

pub fn regression_report(preds: &[f64], truths: &[f64]) -> Result<EvalReport, EvalError> {
    let s = describe(truths)?;
    let rmse = rmse(preds, truths)?;
    let r2 = r_squared(preds, truths).ok();
    Ok(EvalReport {
        n: s.n,
        mean: s.mean,
        sd: s.sd,
        rmse: Some(rmse),
        r2_cod: r2.map(|r| r.0),
        r2_corr: r2.map(|r| r.1),
        accuracy: None,
        one_off_accuracy: None,
        confusion: None,
        fit: ols_fit(truths, preds).ok(),
    })
}

/// `truths_pm25` supplies n/mean/SD of the measured concentrations.
pub fn classification_report(
    preds: &[u8],
    truths: &[u8],
    truths_pm25: &[f64],
) -> Result<EvalReport, EvalError> {
    let s = describe(truths_pm25)?;
    let m = classification_metrics(preds, truths)?;
    Ok(EvalReport {
        n: s.n,
        mean: s.mean,
        sd: s.sd,
        rmse: None,
        r2_cod: None,
        r2_corr: None,
        accuracy: Some(m.accuracy),
        one_off_accuracy: Some(m.one_off_accuracy),
        confusion: Some(m.confusion),
        fit: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), (1.0, 1.0));
        let (cod, _) = r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(cod, 0.0);
        let (cod, corr) = r_squared(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((cod + 6.0).abs() < 1e-12);
        assert!((corr - 1.0).abs() < 1e-12);
        assert!(matches!(r_squared(&[1.0, 2.0], &[3.0, 3.0]), Err(EvalError::DegenerateVariance)));
    }

    #[test]
    fn classification_examples() {
        let m = classification_metrics(&[1, 2, 10], &[2, 2, 8]).unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.one_off_accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion[1][0], 1);
        assert_eq!(m.confusion[7][9], 1);
        let m = classification_metrics(&[3, 4], &[3, 4]).unwrap();
        assert_eq!((m.accuracy, m.one_off_accuracy), (1.0, 1.0));
        assert_eq!(m.confusion[2][2] + m.confusion[3][3], 2);
        assert!(matches!(classification_metrics(&[0], &[1]), Err(EvalError::ClassOutOfRange(0))));
        assert!(matches!(classification_metrics(&[1], &[11]), Err(EvalError::ClassOutOfRange(11))));
    }

    #[test]
    fn ols_examples() {
        let f = ols_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((f.slope, f.intercept, f.slope_se), (1.0, 0.0, 0.0));
        assert_eq!((f.slope_ci_low, f.slope_ci_high), (1.0, 1.0));
        let f = ols_fit(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        assert!(matches!(ols_fit(&[2.0; 3], &[1.0, 2.0, 3.0]), Err(EvalError::DegenerateX)));
    }

    #[test]
    fn ols_standard_error_by_hand() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 3.0, 5.0, 6.0];
        let f = ols_fit(&x, &y).unwrap();
        // sxx = 5, sxy = 7; residuals 0.1, -0.3, 0.3, -0.1 so ssr = 0.2
        assert!((f.slope - 1.4).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!((f.slope_se - (0.2f64 / 2.0 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn describe_values() {
        let s = describe(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.n, 8);
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
        assert_eq!(describe(&[3.0]).unwrap().sd, 0.0);
    }

    #[test]
    fn report_json_round_trip() {
        let r = regression_report(&[1.0, 2.5, 2.9, 4.2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"rmse\"") && json.contains("\"r2_cod\"") && json.contains("\"r2_corr\""));
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        let c = classification_report(&[1, 2], &[1, 3], &[1.0, 9.0]).unwrap();
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
