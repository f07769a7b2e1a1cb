//! Benchmark metrics comparing predicted and subjective per-condition statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{confidence_interval, mushra_stats, ConfidenceInterval, Family, ScoreDistribution};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least 2 points"));
    }
    Ok(())
}

/// Product-moment correlation. Constant input has no defined correlation and
/// is reported as an error rather than 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined for constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub excerpt_id: String,
    pub condition_id: String,
    pub subjective_mean: f64,
    pub subjective_ci: Option<ConfidenceInterval>,
    pub predicted_mean: f64,
    pub predicted_ci: Option<ConfidenceInterval>,
    pub n_listeners: usize,
}

/// Fraction of conditions whose predicted mean falls outside the subjective
/// 95% interval (both sides; the boundary counts as inside).
pub fn outlier_ratio(results: &[ConditionResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("outlier ratio of an empty result set"));
    }
    let mut outliers = 0usize;
    for r in results {
        let ci = r
            .subjective_ci
            .ok_or_else(|| Error::invalid(format!("{}: missing subjective CI", r.condition_id)))?;
        if !ci.contains(r.predicted_mean) {
            outliers += 1;
        }
    }
    Ok(outliers as f64 / results.len() as f64)
}

fn half_widths(results: &[ConditionResult]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::with_capacity(results.len());
    let mut subj = Vec::with_capacity(results.len());
    for r in results {
        let missing = || Error::invalid(format!("{}: missing CI", r.condition_id));
        pred.push(r.predicted_ci.ok_or_else(missing)?.half_width());
        subj.push(r.subjective_ci.ok_or_else(missing)?.half_width());
    }
    Ok((pred, subj))
}

/// RMSE between predicted and subjective CI half-widths.
pub fn ci_rmse(results: &[ConditionResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("CI RMSE of an empty result set"));
    }
    let (pred, subj) = half_widths(results)?;
    let mse = pred.iter().zip(&subj).map(|(p, s)| (p - s) * (p - s)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanBlock {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub outlier_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiBlock {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_set: String,
    pub n_conditions: usize,
    pub mean: MeanBlock,
    pub ci: CiBlock,
    /// Why a correlation is undefined, if any is.
    pub diagnostics: Vec<String>,
    pub conditions: Vec<ConditionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub condition_id: String,
    pub mu: f64,
    pub log_scale: f64,
    pub family: Family,
}

impl PredictionRow {
    pub fn distribution(&self) -> Result<ScoreDistribution> {
        ScoreDistribution::new(self.family, self.mu, self.log_scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectiveRow {
    pub condition_id: String,
    pub listener_id: String,
    pub score: f64,
}

fn split_id(id: &str) -> (String, String) {
    match id.split_once('/') {
        Some((e, c)) => (e.to_string(), c.to_string()),
        None => (id.to_string(), id.to_string()),
    }
}

/// Builds a result row from a subjective panel and a predicted distribution;
/// the predicted interval uses the panel's own listener count.
pub fn condition_result(condition_id: &str, scores: &[f64], pred: &ScoreDistribution) -> Result<ConditionResult> {
    let (mean, ci) = mushra_stats(scores)
        .map_err(|e| Error::invalid(format!("condition {condition_id}: {e}")))?;
    let n = scores.len();
    let (excerpt_id, cond) = split_id(condition_id);
    Ok(ConditionResult {
        excerpt_id,
        condition_id: cond,
        subjective_mean: mean,
        subjective_ci: Some(ci),
        predicted_mean: pred.mu,
        predicted_ci: Some(confidence_interval(pred.std(), n, pred.mu, 0.95)?),
        n_listeners: n,
    })
}

/// Metric blocks over already assembled per-condition results.
pub fn summarize(test_set: &str, conditions: Vec<ConditionResult>) -> Result<EvalReport> {
    let mut diagnostics = Vec::new();
    let mut defined = |name: &str, r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            diagnostics.push(format!("{name}: {e}"));
            None
        }
    };
    let pm: Vec<f64> = conditions.iter().map(|c| c.predicted_mean).collect();
    let sm: Vec<f64> = conditions.iter().map(|c| c.subjective_mean).collect();
    let (ph, sh) = half_widths(&conditions)?;
    let mean = MeanBlock {
        pearson: defined("mean R_p", pearson(&pm, &sm)),
        spearman: defined("mean R_s", spearman(&pm, &sm)),
        outlier_ratio: outlier_ratio(&conditions)?,
    };
    let ci = CiBlock {
        pearson: defined("CI R_p", pearson(&ph, &sh)),
        spearman: defined("CI R_s", spearman(&ph, &sh)),
        rmse: ci_rmse(&conditions)?,
    };
    Ok(EvalReport {
        test_set: test_set.to_string(),
        n_conditions: conditions.len(),
        mean,
        ci,
        diagnostics,
        conditions,
    })
}

/// Compares predictions with per-listener subjective scores. Conditions are
/// processed in sorted id order, so the report does not depend on input order.
pub fn evaluate(test_set: &str, predictions: &[PredictionRow], subjective: &[SubjectiveRow]) -> Result<EvalReport> {
    let mut panels: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in subjective {
        panels.entry(r.condition_id.as_str()).or_default().push(r.score);
    }
    let mut preds: BTreeMap<&str, &PredictionRow> = BTreeMap::new();
    for p in predictions {
        if preds.insert(p.condition_id.as_str(), p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for {}", p.condition_id)));
        }
    }
    if let Some(id) = preds.keys().find(|id| !panels.contains_key(*id)) {
        return Err(Error::invalid(format!("no subjective scores for condition {id}")));
    }
    if let Some(id) = panels.keys().find(|id| !preds.contains_key(*id)) {
        return Err(Error::invalid(format!("no prediction for condition {id}")));
    }
    if panels.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut conditions = Vec::with_capacity(panels.len());
    for (id, scores) in &mut panels {
        // fixed summation order, independent of row order
        scores.sort_by(f64::total_cmp);
        conditions.push(condition_result(id, scores, &preds[id].distribution()?)?);
    }
    summarize(test_set, conditions)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    read_csv(path.as_ref())
}

pub fn read_subjective(path: impl AsRef<Path>) -> Result<Vec<SubjectiveRow>> {
    read_csv(path.as_ref())
}

pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    crate::harness::write_csv(path.as_ref(), rows)
}

pub fn write_subjective(path: impl AsRef<Path>, rows: &[SubjectiveRow]) -> Result<()> {
    crate::harness::write_csv(path.as_ref(), rows)
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse(match line {
            Some(l) => format!("{}:{l}: {kind:?}", path.display()),
            None => format!("{}: {kind:?}", path.display()),
        }),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{x:.3}"))
}

/// Aligned plaintext summary of both metric blocks.
pub fn render_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "test set: {} ({} conditions)", report.test_set, report.n_conditions);
    let _ = writeln!(s, "{:<6} {:>8} {:>8} {:>8}", "block", "R_p", "R_s", "OR/RMSE");
    let _ = writeln!(
        s,
        "{:<6} {:>8} {:>8} {:>8.3}",
        "mean",
        fmt_opt(report.mean.pearson),
        fmt_opt(report.mean.spearman),
        report.mean.outlier_ratio
    );
    let _ = writeln!(
        s,
        "{:<6} {:>8} {:>8} {:>8.3}",
        "CI",
        fmt_opt(report.ci.pearson),
        fmt_opt(report.ci.spearman),
        report.ci.rmse
    );
    for d in &report.diagnostics {
        let _ = writeln!(s, "note: {d}");
    }
    s
}

/// Scatter of predicted against subjective means with 95% CI bars on both
/// axes, 0-100 on each axis. Values are clamped to the axes for display only.
pub fn render_svg(report: &EvalReport) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 50.0;
    let plot = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + plot * v.clamp(0.0, 100.0) / 100.0;
    let py = |v: f64| SIZE - MARGIN - plot * v.clamp(0.0, 100.0) / 100.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(100.0),
        py(100.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for t in (0..=100).step_by(20) {
        let t = t as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{t}</text>"#,
            px(t),
            SIZE - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{t}</text>"#,
            MARGIN - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">subjective mean</text>"#,
        SIZE / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">predicted mean</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    for c in &report.conditions {
        let (x, y) = (px(c.subjective_mean), py(c.predicted_mean));
        if let Some(ci) = c.subjective_ci {
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#1f77b4"/>"##,
                px(ci.lo),
                px(ci.hi)
            );
        }
        if let Some(ci) = c.predicted_ci {
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#d62728"/>"##,
                py(ci.lo),
                py(ci.hi)
            );
        }
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="black"><title>{}/{}</title></circle>"#,
            xml_escape(&c.excerpt_id),
            xml_escape(&c.condition_id)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_affine_cases() {
        let x = [1.0, 2.0, 4.0, 7.0, 11.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[3.0; 5]).is_err());
        assert!(pearson(&x, &x[..4]).is_err());
    }

    #[test]
    fn spearman_hand_ranked_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [10.0, 10.0, 5.0, 1.0];
        assert_eq!(ranks(&y), vec![3.5, 3.5, 2.0, 1.0]);
        let expected = pearson(&[1.0, 2.0, 3.0, 4.0], &[3.5, 3.5, 2.0, 1.0]).unwrap();
        assert_eq!(spearman(&x, &y).unwrap(), expected);
        let cubes: Vec<f64> = x.iter().map(|v| v * v * v + 5.0).collect();
        assert!((spearman(&x, &cubes).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + spearman(&x, &y).unwrap()).abs() < 1e-15);
    }

    fn result(sm: f64, half: f64, pm: f64, phalf: f64) -> ConditionResult {
        let ci = |m: f64, h: f64| ConfidenceInterval {
            lo: m - h,
            hi: m + h,
            level: 0.95,
            dof: 9,
        };
        ConditionResult {
            excerpt_id: "e".into(),
            condition_id: "c".into(),
            subjective_mean: sm,
            subjective_ci: Some(ci(sm, half)),
            predicted_mean: pm,
            predicted_ci: Some(ci(pm, phalf)),
            n_listeners: 10,
        }
    }

    #[test]
    fn outlier_ratio_counting() {
        let at_center: Vec<_> = (0..4).map(|i| result(20.0 * i as f64, 5.0, 20.0 * i as f64, 4.0)).collect();
        assert_eq!(outlier_ratio(&at_center).unwrap(), 0.0);
        let mut one_out = at_center.clone();
        one_out[2].predicted_mean = 40.0 - 5.5;
        assert_eq!(outlier_ratio(&one_out).unwrap(), 0.25);
        // boundary is inside
        let mut edge = at_center;
        edge[1].predicted_mean = 25.0;
        assert_eq!(outlier_ratio(&edge).unwrap(), 0.0);
        let mut missing = result(1.0, 1.0, 1.0, 1.0);
        missing.subjective_ci = None;
        assert!(outlier_ratio(&[missing]).is_err());
    }

    #[test]
    fn ci_rmse_cases() {
        let same: Vec<_> = (0..3).map(|i| result(10.0 * i as f64, 3.0 + i as f64, 50.0, 3.0 + i as f64)).collect();
        assert_eq!(ci_rmse(&same).unwrap(), 0.0);
        let offset: Vec<_> = (0..3).map(|i| result(10.0, 3.0 + i as f64, 50.0, 1.5 + i as f64)).collect();
        assert!((ci_rmse(&offset).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let panels: Vec<(String, Vec<f64>)> = (0..6)
            .map(|i| {
                let base = 15.0 * i as f64 + 5.0;
                let spread = 1.0 + i as f64;
                (format!("e{i}/c"), (0..12).map(|k| base + spread * ((k % 5) as f64 - 2.0)).collect())
            })
            .collect();
        let subjective: Vec<SubjectiveRow> = panels
            .iter()
            .flat_map(|(id, s)| {
                s.iter().enumerate().map(move |(k, v)| SubjectiveRow {
                    condition_id: id.clone(),
                    listener_id: format!("L{k}"),
                    score: *v,
                })
            })
            .collect();
        let predictions: Vec<PredictionRow> = panels
            .iter()
            .map(|(id, s)| {
                let (m, sd) = crate::prob::mean_std(s);
                PredictionRow {
                    condition_id: id.clone(),
                    mu: m,
                    log_scale: sd.ln(),
                    family: Family::Gaussian,
                }
            })
            .collect();
        let report = evaluate("self", &predictions, &subjective).unwrap();
        assert!((report.mean.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!((report.mean.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(report.mean.outlier_ratio, 0.0);
        assert!(report.ci.rmse < 1e-12);
        assert!((report.ci.spearman.unwrap() - 1.0).abs() < 1e-12);

        let mut shuffled = predictions.clone();
        shuffled.reverse();
        let mut subj_rev = subjective.clone();
        subj_rev.reverse();
        let again = evaluate("self", &shuffled, &subj_rev).unwrap();
        assert_eq!(again.mean, report.mean);

        let mut missing = predictions;
        missing.pop();
        let err = evaluate("self", &missing, &subjective).unwrap_err().to_string();
        assert!(err.contains("e5/c"), "{err}");
    }

    #[test]
    fn svg_has_one_point_per_condition() {
        let conditions = vec![result(30.0, 4.0, 35.0, 3.0), result(70.0, 4.0, 65.0, 5.0)];
        let report = summarize("t", conditions).unwrap();
        let svg = render_svg(&report);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(render_table(&report).contains("mean"));
    }
}
