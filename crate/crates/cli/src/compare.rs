//! Metric-by-metric comparison of two run manifests.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::error::{CliError, CliResult};
use crate::run::RunManifest;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b - a`; `None` when either side lacks the metric.
    pub delta: Option<f64>,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub recipe: String,
    pub tolerance_db: f64,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn breaches(&self) -> usize {
        self.rows.iter().filter(|r| !r.within).count()
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "recipe {} (tolerance {} dB)", self.recipe, self.tolerance_db);
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>12}  {:>10}  status", "metric", "a", "b", "delta");
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>12}  {:>12}  {:>10}  {}",
                r.metric,
                cell(r.a),
                cell(r.b),
                r.delta.map_or("-".to_string(), |d| format!("{d:+.4}")),
                if r.within { "ok" } else { "BREACH" }
            );
        }
        s
    }
}

/// Compares headline metrics. A metric missing on either side is a breach.
pub fn compare(a: &RunManifest, b: &RunManifest, tolerance_db: Option<f64>) -> CliResult<CompareReport> {
    if a.recipe != b.recipe {
        return Err(CliError::Validation(format!(
            "recipe mismatch: '{}' vs '{}'",
            a.recipe, b.recipe
        )));
    }
    let tol = tolerance_db.or(a.tolerance_db).or(b.tolerance_db).unwrap_or(0.0);
    if !(tol >= 0.0) {
        return Err(CliError::Validation(format!("tolerance must be >= 0, got {tol}")));
    }
    let keys: BTreeSet<&String> = a.metrics.keys().chain(b.metrics.keys()).collect();
    let rows = keys
        .into_iter()
        .map(|k| {
            let (x, y) = (a.metrics.get(k).copied(), b.metrics.get(k).copied());
            let delta = x.zip(y).map(|(x, y)| y - x);
            CompareRow {
                metric: k.clone(),
                a: x,
                b: y,
                delta,
                within: delta.is_some_and(|d| d.abs() <= tol),
            }
        })
        .collect();
    Ok(CompareReport {
        recipe: a.recipe.clone(),
        tolerance_db: tol,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Kind;
    use std::collections::BTreeMap;

    fn manifest(recipe: &str, m: &[(&str, f64)]) -> RunManifest {
        RunManifest {
            schema: 1,
            recipe: recipe.into(),
            kind: Kind::Simulate,
            timestamp: String::new(),
            seed: Some(0),
            config_hash: String::new(),
            files: vec![],
            metrics: m.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            tolerance_db: Some(0.5),
            version: String::new(),
        }
    }

    #[test]
    fn identical_manifests_have_zero_deltas() {
        let a = manifest("r", &[("x.snr_db", 72.0), ("y.snr_db", 75.0)]);
        let rep = compare(&a, &a, None).unwrap();
        assert_eq!(rep.breaches(), 0);
        assert!(rep.rows.iter().all(|r| r.delta == Some(0.0)));
        assert_eq!(rep.tolerance_db, 0.5);
    }

    #[test]
    fn breaches_and_missing_metrics() {
        let a = manifest("r", &[("x", 72.0), ("y", 75.0)]);
        let b = manifest("r", &[("x", 72.4), ("z", 1.0)]);
        let rep = compare(&a, &b, Some(0.5)).unwrap();
        assert_eq!(rep.breaches(), 2);
        let rep = compare(&a, &b, Some(0.3)).unwrap();
        assert_eq!(rep.breaches(), 3);
        assert!(rep.render().contains("BREACH"));
    }

    #[test]
    fn recipe_mismatch_is_rejected() {
        let e = compare(&manifest("a", &[]), &manifest("b", &[]), None).unwrap_err();
        assert!(matches!(e, CliError::Validation(_)));
    }
}
