use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mean_ci, one_tailed_t_test, F1Choice, StatsError, TTestKind};
use crate::trainer::{EvalSplit, TrialResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Split whose metrics are averaged, and on which the best variant is chosen.
    pub split: EvalSplit,
    pub f1: F1Choice,
    pub test: TTestKind,
    pub level: f64,
    /// Row order; variants not listed follow in lexicographic order.
    pub variant_order: Vec<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            split: EvalSplit::Test,
            f1: F1Choice::Standard,
            test: TTestKind::Welch,
            level: 0.95,
            variant_order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PValue {
    /// The reference row every other row is tested against.
    Best,
    Value(f64),
    /// Too few seeds, or no variance to test with.
    NotApplicable,
}

impl PValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            PValue::Value(p) => Some(*p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    pub split: EvalSplit,
    pub seeds: usize,
    pub mean_sens: f64,
    pub mean_spec: f64,
    pub mean_f1: f64,
    pub f1_ci_halfwidth: Option<f64>,
    pub p_value: PValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    pub best: String,
    /// Footnotes: unequal seed counts, 0/0 metric conventions, skipped tests.
    pub notes: Vec<String>,
}

fn fmt_num(x: f64) -> String {
    format!("{x:.6}")
}

impl ReportRow {
    fn ci_cell(&self) -> String {
        self.f1_ci_halfwidth.map(fmt_num).unwrap_or_else(|| "NA".into())
    }

    fn p_cell(&self) -> String {
        match self.p_value {
            PValue::Best => "---".into(),
            PValue::Value(p) => fmt_num(p),
            PValue::NotApplicable => "NA".into(),
        }
    }
}

impl ComparisonReport {
    /// CSV with columns `variant,split,mean_sens,mean_spec,mean_f1,f1_ci_halfwidth,p_value`.
    /// Numbers are printed with six decimals so output is stable byte for byte.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant",
            "split",
            "mean_sens",
            "mean_spec",
            "mean_f1",
            "f1_ci_halfwidth",
            "p_value",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                r.split.to_string(),
                fmt_num(r.mean_sens),
                fmt_num(r.mean_spec),
                fmt_num(r.mean_f1),
                r.ci_cell(),
                r.p_cell(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>6}  {:>6}  {:>6}  {:>8}  {:>8}",
            "variant", "seeds", "sens", "spec", "F1", "F1 CI", "p-value"
        );
        for r in &self.rows {
            let ci = r.f1_ci_halfwidth.map(|h| format!("±{h:.3}")).unwrap_or_else(|| "NA".into());
            let p = match r.p_value {
                PValue::Best => "---".into(),
                PValue::Value(p) => format!("{p:.3}"),
                PValue::NotApplicable => "NA".into(),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>6.3}  {:>6.3}  {:>6.3}  {:>8}  {:>8}",
                r.variant, r.seeds, r.mean_sens, r.mean_spec, r.mean_f1, ci, p
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "* {n}");
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Averages per-seed metrics for each variant, attaches a confidence
/// half-width for F1, and tests every variant against the best one.
pub fn render_report(results: &[TrialResult], opts: &ReportOptions) -> Result<ComparisonReport, StatsError> {
    if results.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut groups: BTreeMap<&str, Vec<&TrialResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.variant.as_str()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.seed);
    }
    let mut order: Vec<&str> = opts
        .variant_order
        .iter()
        .map(String::as_str)
        .filter(|v| groups.contains_key(v))
        .collect();
    for v in groups.keys() {
        if !order.contains(v) {
            order.push(v);
        }
    }

    let mut notes = Vec::new();
    let seed_counts: Vec<usize> = order.iter().map(|v| groups[v].len()).collect();
    if seed_counts.iter().any(|&c| c != seed_counts[0]) {
        let detail: Vec<String> = order
            .iter()
            .zip(&seed_counts)
            .map(|(v, c)| format!("{v}={c}"))
            .collect();
        notes.push(format!("unequal seed counts per variant: {}", detail.join(", ")));
    }

    let mut undefined = false;
    let per_variant: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = order
        .iter()
        .map(|v| {
            let mut sens = Vec::new();
            let mut spec = Vec::new();
            let mut f1 = Vec::new();
            for r in &groups[v] {
                let m = r.counts(opts.split).metrics();
                undefined |= m.undefined;
                sens.push(m.sensitivity);
                spec.push(m.specificity);
                f1.push(m.f1(opts.f1));
            }
            (sens, spec, f1)
        })
        .collect();
    if undefined {
        notes.push("some per-seed metrics had a zero denominator and were counted as 0".into());
    }

    let means: Vec<f64> = per_variant.iter().map(|(_, _, f1)| mean(f1)).collect();
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }

    let mut rows = Vec::with_capacity(order.len());
    for (i, v) in order.iter().enumerate() {
        let (sens, spec, f1) = &per_variant[i];
        let ci = if f1.len() >= 2 {
            Some(mean_ci(f1, opts.level)?.1)
        } else {
            None
        };
        let p_value = if i == best {
            PValue::Best
        } else {
            match one_tailed_t_test(f1, &per_variant[best].2, opts.test) {
                Ok(p) => PValue::Value(p),
                Err(StatsError::TooFewSamples(_)) | Err(StatsError::Degenerate) => {
                    notes.push(format!("no t-test for {v}: too few seeds or no variance"));
                    PValue::NotApplicable
                }
                Err(e) => return Err(e),
            }
        };
        rows.push(ReportRow {
            variant: v.to_string(),
            split: opts.split,
            seeds: f1.len(),
            mean_sens: mean(sens),
            mean_spec: mean(spec),
            mean_f1: means[i],
            f1_ci_halfwidth: ci,
            p_value,
        });
    }
    Ok(ComparisonReport {
        best: order[best].to_string(),
        rows,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstats::ConfusionCounts;

    fn trial(variant: &str, seed: u64, tp: u64) -> TrialResult {
        let c = ConfusionCounts { tp, fp: 2, tn: 50, fn_: 10 - tp };
        TrialResult {
            variant: variant.into(),
            seed,
            best_epoch: 1,
            epochs_run: 1,
            best_validation_f1: 0.0,
            train: c,
            validation: c,
            test: c,
            wall_clock_seconds: None,
        }
    }

    #[test]
    fn layout_two_variants() {
        let mut rs = Vec::new();
        for seed in 1..=3 {
            rs.push(trial("weak", seed, 3 + seed));
            rs.push(trial("strong", seed, 6 + seed));
        }
        let rep = render_report(&rs, &ReportOptions::default()).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.best, "strong");
        let dashes = rep.rows.iter().filter(|r| r.p_value == PValue::Best).count();
        assert_eq!(dashes, 1);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("variant,split,mean_sens,mean_spec,mean_f1,f1_ci_halfwidth,p_value\n"));
        assert!(csv.contains(",---\n"));
        assert!(!csv.to_lowercase().contains("accuracy"));
        assert_eq!(csv, render_report(&rs, &ReportOptions::default()).unwrap().to_csv());
    }

    #[test]
    fn single_variant_and_order() {
        let rs = vec![trial("only", 1, 5)];
        let rep = render_report(&rs, &ReportOptions::default()).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].p_value, PValue::Best);
        assert_eq!(rep.rows[0].f1_ci_halfwidth, None);

        let rs = vec![trial("b", 1, 5), trial("a", 1, 5), trial("c", 1, 4), trial("c", 2, 4)];
        let opts = ReportOptions {
            variant_order: vec!["c".into(), "b".into()],
            ..Default::default()
        };
        let rep = render_report(&rs, &opts).unwrap();
        let names: Vec<_> = rep.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["c", "b", "a"]);
        assert!(rep.notes.iter().any(|n| n.contains("unequal seed counts")));
    }

    #[test]
    fn empty_input() {
        assert_eq!(render_report(&[], &ReportOptions::default()), Err(StatsError::Empty));
    }
}
