//! Comparison metrics over best-so-far fitness curves, and the CSV and text
//! reports built from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("curve has no points")]
    EmptyCurve,
    #[error("malformed curve: {0}")]
    Malformed(String),
    #[error("curves have different budgets ({0} vs {1})")]
    BudgetMismatch(u64, u64),
}

pub const TARGET_NOT_REACHED: &str = "target not reached";
pub const CURVE_HEADER: &str = "eval_index,best_fitness";
pub const SUMMARY_HEADER: &str = "task,ga,ar,delta,speedup,lead_fraction";
pub const NOT_REACHED: &str = "n/r";

/// Best-so-far fitness recorded at evaluation indices `1..=budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessCurve {
    points: Vec<(u64, f64)>,
    budget: u64,
}

impl FitnessCurve {
    pub fn new(points: Vec<(u64, f64)>, budget: u64) -> Result<Self, MetricsError> {
        let bad = |m: String| Err(MetricsError::Malformed(m));
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("eval_index {} does not follow {}", w[1].0, w[0].0));
            }
            if w[1].1 < w[0].1 {
                return bad(format!("best_so_far drops at eval_index {}", w[1].0));
            }
        }
        if let Some(&(e, _)) = points.iter().find(|p| p.0 == 0 || p.0 > budget) {
            return bad(format!("eval_index {e} outside 1..={budget}"));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return bad("non-finite fitness".into());
        }
        Ok(FitnessCurve { points, budget })
    }

    /// Best-so-far curve of a fitness sequence in evaluation order; failed
    /// evaluations (`None`) add no point.
    pub fn from_fitness(fitness: &[Option<f64>], budget: u64) -> Result<Self, MetricsError> {
        let mut points = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for (i, f) in fitness.iter().enumerate() {
            if let Some(f) = f {
                best = best.max(*f);
                points.push((i as u64 + 1, best));
            }
        }
        Self::new(points, budget)
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Step-function value at `e`; `None` before the first point.
    pub fn value_at(&self, e: u64) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.0 <= e);
        (idx > 0).then(|| self.points[idx - 1].1)
    }

    /// Values at `e = 1..=budget`.
    pub fn densify(&self) -> Result<Vec<Option<f64>>, MetricsError> {
        if self.points.is_empty() {
            return Err(MetricsError::EmptyCurve);
        }
        Ok((1..=self.budget).map(|e| self.value_at(e)).collect())
    }

    /// Value at the end of the budget.
    pub fn endpoint(&self) -> Result<f64, MetricsError> {
        self.points.last().map(|p| p.1).ok_or(MetricsError::EmptyCurve)
    }

    /// Smallest eval index whose best-so-far is at least `target`.
    pub fn first_reaching(&self, target: f64) -> Option<u64> {
        self.points.iter().find(|p| p.1 >= target).map(|p| p.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for (e, f) in &self.points {
            writeln!(out, "{e},{f}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str, budget: u64) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CURVE_HEADER) {
            return Err(MetricsError::Malformed(format!("expected header `{CURVE_HEADER}`")));
        }
        let mut points = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (e, f) = line.split_once(',').ok_or_else(|| MetricsError::Malformed(format!("bad row `{line}`")))?;
            let e: u64 = e.trim().parse().map_err(|_| MetricsError::Malformed(format!("bad index `{e}`")))?;
            let f: f64 = f.trim().parse().map_err(|_| MetricsError::Malformed(format!("bad fitness `{f}`")))?;
            points.push((e, f));
        }
        Self::new(points, budget)
    }
}

fn shared_budget(a: &FitnessCurve, g: &FitnessCurve) -> Result<u64, MetricsError> {
    if a.budget != g.budget {
        return Err(MetricsError::BudgetMismatch(a.budget, g.budget));
    }
    if a.points.is_empty() || g.points.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    Ok(a.budget)
}

/// Convergence speedup of `a` over the baseline `g`: how much earlier `a`
/// reaches the baseline's endpoint. `None` when `a` never reaches it.
pub fn speedup(a: &FitnessCurve, g: &FitnessCurve) -> Result<Option<f64>, MetricsError> {
    shared_budget(a, g)?;
    let target = g.endpoint()?;
    let e_g = g.first_reaching(target).expect("endpoint is reached by its own curve");
    Ok(a.first_reaching(target).map(|e_a| e_g as f64 / e_a as f64))
}

/// Fraction of eval indices where `a` is strictly ahead of `g`.
pub fn lead_fraction(a: &FitnessCurve, g: &FitnessCurve) -> Result<f64, MetricsError> {
    let budget = shared_budget(a, g)?;
    let ahead = (1..=budget)
        .filter(|&e| matches!((a.value_at(e), g.value_at(e)), (Some(x), Some(y)) if x > y))
        .count();
    Ok(ahead as f64 / budget as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub task: String,
    pub endpoint_a: f64,
    pub endpoint_g: f64,
    pub delta: f64,
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup_reason: Option<String>,
    pub lead_fraction: f64,
}

pub fn compare(task: &str, a: &FitnessCurve, g: &FitnessCurve) -> Result<ComparisonSummary, MetricsError> {
    let s = speedup(a, g)?;
    let endpoint_a = a.endpoint()?;
    let endpoint_g = g.endpoint()?;
    Ok(ComparisonSummary {
        task: task.to_string(),
        endpoint_a,
        endpoint_g,
        delta: endpoint_a - endpoint_g,
        speedup: s,
        speedup_reason: s.is_none().then(|| TARGET_NOT_REACHED.to_string()),
        lead_fraction: lead_fraction(a, g)?,
    })
}

/// A report row: a full comparison, or a single run with no baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportRow {
    Compared(ComparisonSummary),
    Single { task: String, endpoint: f64 },
}

impl From<ComparisonSummary> for ReportRow {
    fn from(s: ComparisonSummary) -> Self {
        ReportRow::Compared(s)
    }
}

fn speedup_text(s: Option<f64>, precise: bool) -> String {
    match s {
        Some(v) if precise => v.to_string(),
        Some(v) => format!("{v:.2}"),
        None => NOT_REACHED.to_string(),
    }
}

/// CSV with full-precision numbers.
pub fn summary_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for row in rows {
        match row {
            ReportRow::Compared(s) => writeln!(
                out,
                "{},{},{},{},{},{}",
                s.task,
                s.endpoint_g,
                s.endpoint_a,
                s.delta,
                speedup_text(s.speedup, true),
                s.lead_fraction
            ),
            ReportRow::Single { task, endpoint } => writeln!(out, "{task},,{endpoint},,,"),
        }
        .unwrap();
    }
    out
}

/// Fixed-width text table: Task, GA, Skills, Delta, S, L.
pub fn summary_table(rows: &[ReportRow]) -> String {
    let mut out = format!("{:<14}{:>8}{:>8}{:>8}{:>7}{:>7}\n", "Task", "GA", "Skills", "Delta", "S", "L");
    for row in rows {
        match row {
            ReportRow::Compared(s) => writeln!(
                out,
                "{:<14}{:>8.2}{:>8.2}{:>+8.2}{:>7}{:>7.2}",
                s.task,
                s.endpoint_g,
                s.endpoint_a,
                s.delta,
                speedup_text(s.speedup, false),
                s.lead_fraction
            ),
            ReportRow::Single { task, endpoint } => {
                writeln!(out, "{:<14}{:>8}{:>8.2}{:>8}{:>7}{:>7}", task, "-", endpoint, "-", "-", "-")
            }
        }
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => summary_csv(rows),
        ReportFormat::Table => summary_table(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(u64, f64)], b: u64) -> FitnessCurve {
        FitnessCurve::new(points.to_vec(), b).unwrap()
    }

    #[test]
    fn densify_steps() {
        let c = curve(&[(1, 2.0), (5, 3.0)], 6);
        let d = c.densify().unwrap();
        assert_eq!(d[2], Some(2.0));
        assert_eq!(d[5], Some(3.0));
        assert_eq!(c.value_at(0), None);
        let one = curve(&[(1, 4.0)], 3);
        assert_eq!(one.densify().unwrap(), vec![Some(4.0); 3]);
        assert_eq!(curve(&[], 3).densify(), Err(MetricsError::EmptyCurve));
    }

    #[test]
    fn malformed_curves_rejected() {
        assert!(FitnessCurve::new(vec![(2, 1.0), (2, 2.0)], 5).is_err());
        assert!(FitnessCurve::new(vec![(1, 2.0), (2, 1.0)], 5).is_err());
        assert!(FitnessCurve::new(vec![(6, 1.0)], 5).is_err());
    }

    #[test]
    fn speedup_cases() {
        let same = curve(&[(1, 1.0), (10, 2.0)], 10);
        assert_eq!(speedup(&same, &same).unwrap(), Some(1.0));
        let low = curve(&[(1, 1.0)], 10);
        assert_eq!(speedup(&low, &same).unwrap(), None);
        let s = compare("x", &low, &same).unwrap();
        assert_eq!(s.speedup_reason.as_deref(), Some(TARGET_NOT_REACHED));
    }

    #[test]
    fn lead_cases() {
        let same = curve(&[(1, 1.0), (10, 2.0)], 10);
        assert_eq!(lead_fraction(&same, &same).unwrap(), 0.0);
        let g = curve(&[(1, 1.0)], 10);
        let last = curve(&[(1, 1.0), (10, 2.0)], 10);
        assert_eq!(lead_fraction(&last, &g).unwrap(), 0.1);
        let late = curve(&[(3, 5.0)], 10);
        assert_eq!(lead_fraction(&late, &g).unwrap(), 0.8);
        assert!(matches!(lead_fraction(&late, &curve(&[(1, 1.0)], 9)), Err(MetricsError::BudgetMismatch(..))));
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = curve(&[(1, 0.1), (4, 2.5)], 8);
        assert_eq!(FitnessCurve::from_csv(&c.to_csv(), 8).unwrap(), c);
        assert!(c.to_csv().starts_with("eval_index,best_fitness\n"));
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(summary_csv(&[]), "task,ga,ar,delta,speedup,lead_fraction\n");
        assert_eq!(summary_table(&[]).lines().count(), 1);
    }

    #[test]
    fn null_speedup_renders_not_reached() {
        let s = compare("t", &curve(&[(1, 1.0)], 2), &curve(&[(1, 2.0)], 2)).unwrap();
        let rows = [ReportRow::from(s)];
        assert!(summary_csv(&rows).contains(",n/r,"));
        assert!(summary_table(&rows).contains("n/r"));
        let json = serde_json::to_value(&rows_summary(&rows)).unwrap();
        assert!(json["speedup"].is_null());
    }

    fn rows_summary(rows: &[ReportRow]) -> ComparisonSummary {
        match &rows[0] {
            ReportRow::Compared(s) => s.clone(),
            ReportRow::Single { .. } => unreachable!(),
        }
    }
}
