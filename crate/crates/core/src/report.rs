//! Aggregation of evaluation results into F1 tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::harness::EvalResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopMean {
    pub samples: usize,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub retriever: String,
    pub budget: usize,
    /// `ranked` or `random`; random seeds are pooled into one row.
    pub ordering: String,
    pub mode: String,
    /// Scored (non-errored) results.
    pub samples: usize,
    pub errored: usize,
    pub mean_f1: Option<f64>,
    /// Sample standard deviation of per-seed means (random ordering with at
    /// least two seeds).
    pub seed_spread: Option<f64>,
    pub per_hop: BTreeMap<u8, HopMean>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

fn ordering_kind(ordering: &str) -> &str {
    ordering.split(':').next().unwrap_or(ordering)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Groups by retriever × budget × ordering kind × mode.
pub fn aggregate_report(results: &[EvalResult]) -> Report {
    type Key = (String, usize, String, String);
    let mut groups: BTreeMap<Key, Vec<&EvalResult>> = BTreeMap::new();
    for r in results {
        let key = (
            r.retriever.clone(),
            r.budget,
            ordering_kind(&r.ordering).to_string(),
            r.mode.clone(),
        );
        groups.entry(key).or_default().push(r);
    }
    let mut report = Report::default();
    if results.is_empty() {
        report.warnings.push("no results to aggregate".into());
    }
    for ((retriever, budget, ordering, mode), rows) in groups {
        let scored: Vec<&EvalResult> = rows.iter().copied().filter(|r| r.error.is_none()).collect();
        let f1s: Vec<f64> = scored.iter().filter_map(|r| r.f1.map(|f| f.f1)).collect();
        let mut hops: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
        let mut seeds: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &scored {
            if let Some(f) = r.f1 {
                hops.entry(r.hops).or_default().push(f.f1);
                seeds.entry(r.ordering.as_str()).or_default().push(f.f1);
            }
        }
        let seed_spread = if ordering == "random" && seeds.len() >= 2 {
            let means: Vec<f64> = seeds.values().filter_map(|v| mean(v)).collect();
            let m = mean(&means).unwrap_or(0.0);
            let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        report.rows.push(ReportRow {
            retriever,
            budget,
            ordering,
            mode,
            samples: scored.len(),
            errored: rows.len() - scored.len(),
            mean_f1: mean(&f1s),
            seed_spread,
            per_hop: hops
                .into_iter()
                .map(|(h, v)| {
                    (
                        h,
                        HopMean {
                            samples: v.len(),
                            mean_f1: mean(&v).unwrap_or(0.0),
                        },
                    )
                })
                .collect(),
        });
    }
    report
}

impl Report {
    /// Fixed-width table, one row per group, hop columns for every hop
    /// count present.
    pub fn to_table(&self) -> String {
        let hops: std::collections::BTreeSet<u8> =
            self.rows.iter().flat_map(|r| r.per_hop.keys().copied()).collect();
        let mut out = format!(
            "{:<16} {:>8} {:<8} {:<12} {:>6} {:>6} {:>16}",
            "retriever", "budget", "order", "mode", "n", "err", "mean_f1"
        );
        for h in &hops {
            let _ = write!(out, " {:>8}", format!("hop{h}"));
        }
        out.push('\n');
        for r in &self.rows {
            let f1 = match (r.mean_f1, r.seed_spread) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                (Some(m), None) => format!("{m:.4}"),
                (None, _) => "-".into(),
            };
            let _ = write!(
                out,
                "{:<16} {:>8} {:<8} {:<12} {:>6} {:>6} {:>16}",
                r.retriever, r.budget, r.ordering, r.mode, r.samples, r.errored, f1
            );
            for h in &hops {
                let cell = r
                    .per_hop
                    .get(h)
                    .map_or("-".to_string(), |m| format!("{:.4}", m.mean_f1));
                let _ = write!(out, " {cell:>8}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::F1Score;

    fn res(retriever: &str, budget: usize, ordering: &str, hops: u8, f1: Option<f64>) -> EvalResult {
        EvalResult {
            sample_id: format!("s{hops}"),
            hops,
            retriever: retriever.into(),
            budget,
            ordering: ordering.into(),
            mode: "static".into(),
            rounds_used: 1,
            predicted: String::new(),
            answered: true,
            f1: f1.map(|f1| F1Score {
                precision: f1,
                recall: f1,
                f1,
            }),
            error: f1.is_none().then(|| "timeout".to_string()),
        }
    }

    #[test]
    fn two_samples_average_to_half() {
        let r = aggregate_report(&[res("bm25", 0, "ranked", 2, Some(1.0)), res("bm25", 0, "ranked", 3, Some(0.0))]);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].mean_f1, Some(0.5));
        assert!(r.to_table().contains("0.5000"));
    }

    #[test]
    fn single_result_and_empty_input() {
        let r = aggregate_report(&[res("dense", 8, "ranked", 2, Some(0.25))]);
        assert_eq!(r.rows[0].mean_f1, Some(0.25));
        let empty = aggregate_report(&[]);
        assert!(empty.rows.is_empty());
        assert_eq!(empty.warnings.len(), 1);
    }

    #[test]
    fn grid_yields_one_row_per_cell() {
        let mut rs = Vec::new();
        for ret in ["bm25", "bm25+ppr"] {
            for b in [1000, 2000] {
                rs.push(res(ret, b, "ranked", 2, Some(0.5)));
            }
        }
        assert_eq!(aggregate_report(&rs).rows.len(), 4);
    }

    #[test]
    fn errored_results_are_counted_not_averaged() {
        let r = aggregate_report(&[res("bm25", 0, "ranked", 2, Some(0.8)), res("bm25", 0, "ranked", 2, None)]);
        assert_eq!(r.rows[0].samples, 1);
        assert_eq!(r.rows[0].errored, 1);
        assert_eq!(r.rows[0].mean_f1, Some(0.8));
    }

    #[test]
    fn random_seeds_pool_with_spread() {
        let rs = [
            res("bm25", 0, "random:0", 2, Some(0.2)),
            res("bm25", 0, "random:1", 2, Some(0.4)),
            res("bm25", 0, "random:2", 2, Some(0.6)),
        ];
        let r = aggregate_report(&rs);
        assert_eq!(r.rows.len(), 1);
        assert!((r.rows[0].mean_f1.unwrap() - 0.4).abs() < 1e-12);
        assert!((r.rows[0].seed_spread.unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn hand_scored_fixture() {
        // two groups of five, means and hop splits worked out by hand
        let a = [(2, 1.0), (2, 0.5), (3, 0.0), (3, 0.25), (4, 0.75)];
        let b = [(2, 0.0), (2, 0.0), (3, 1.0), (4, 0.5), (4, 0.5)];
        let mut rs = Vec::new();
        for &(h, f) in &a {
            rs.push(res("bm25", 1000, "ranked", h, Some(f)));
        }
        for &(h, f) in &b {
            rs.push(res("bm25+ppr", 1000, "ranked", h, Some(f)));
        }
        let r = aggregate_report(&rs);
        let (ra, rb) = (&r.rows[0], &r.rows[1]);
        assert!((ra.mean_f1.unwrap() - 0.5).abs() < 1e-12);
        assert!((rb.mean_f1.unwrap() - 0.4).abs() < 1e-12);
        assert!((ra.per_hop[&2].mean_f1 - 0.75).abs() < 1e-12);
        assert!((ra.per_hop[&3].mean_f1 - 0.125).abs() < 1e-12);
        assert!((rb.per_hop[&4].mean_f1 - 0.5).abs() < 1e-12);
        assert_eq!(rb.per_hop[&2].samples, 2);
    }
}
