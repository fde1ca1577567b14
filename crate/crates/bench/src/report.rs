//! Aggregation of trial logs into plot-ready tables.

use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

use beliefgrasp::sim::TrialRecord;
use beliefgrasp::{Error, Result};

/// Mean, population standard deviation and sample count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub object: String,
    pub strategy: String,
    pub views: usize,
    /// Mean retained-point percentage over the cell's trials.
    pub coverage_pct: f64,
    pub iterations: Stat,
    /// Pooled over every belief update in the cell.
    pub kl: Stat,
    pub success: Stat,
    pub first_attempt: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchSummary {
    pub rows: Vec<SummaryRow>,
}

pub const TABLES: [&str; 4] = ["iterations", "kl", "success", "first_attempt"];

fn b(x: bool) -> f64 {
    if x {
        1.0
    } else {
        0.0
    }
}

impl BenchSummary {
    /// Groups by (object, strategy, views) in sorted key order.
    pub fn from_records(records: &[TrialRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("empty trial log".into()));
        }
        let mut groups: BTreeMap<(String, String, usize), Vec<&TrialRecord>> = BTreeMap::new();
        for r in records {
            let strat = r.strategy.map(|s| s.to_string()).unwrap_or_default();
            groups.entry((r.object.clone(), strat, r.views)).or_default().push(r);
        }
        let rows = groups
            .into_iter()
            .map(|((object, strategy, views), rs)| {
                let col = |f: &dyn Fn(&TrialRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
                let kl: Vec<f64> = rs.iter().flat_map(|r| r.kl_per_contact.iter().copied()).collect();
                SummaryRow {
                    object,
                    strategy,
                    views,
                    coverage_pct: 100.0 * Stat::of(&col(&|r| r.coverage)).mean,
                    iterations: Stat::of(&col(&|r| r.iterations as f64)),
                    kl: Stat::of(&kl),
                    success: Stat::of(&col(&|r| b(r.success))),
                    first_attempt: Stat::of(&col(&|r| b(r.first_attempt_success))),
                }
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn row(&self, object: &str, strategy: &str, views: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.object == object && r.strategy == strategy && r.views == views)
    }

    /// CSV text of one of [`TABLES`].
    pub fn table(&self, name: &str) -> Result<String> {
        let pick: fn(&SummaryRow) -> Stat = match name {
            "iterations" => |r| r.iterations,
            "kl" => |r| r.kl,
            "success" => |r| r.success,
            "first_attempt" => |r| r.first_attempt,
            _ => return Err(Error::InvalidInput(format!("unknown table {name}"))),
        };
        let mut s = String::from("object,strategy,coverage_pct,mean,std,n\n");
        for r in &self.rows {
            let st = pick(r);
            s.push_str(&format!(
                "{},{},{:.2},{},{},{}\n",
                r.object, r.strategy, r.coverage_pct, st.mean, st.std, st.n
            ));
        }
        Ok(s)
    }

    pub fn write_tables(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(&dir)?;
        for t in TABLES {
            std::fs::write(dir.as_ref().join(format!("{t}.csv")), self.table(t)?)?;
        }
        Ok(())
    }
}
