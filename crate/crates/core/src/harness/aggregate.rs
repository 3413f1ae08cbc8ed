//! Per-group means of the final objective and the area change.

use std::collections::BTreeMap;
use std::io::Write;

use super::sweep::{Method, TrialResult, GROUP_KEYS};
use crate::error::config_err;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub key: String,
    pub value: String,
    pub method: Method,
    /// Trials included in the means.
    pub count: usize,
    pub failures: usize,
    pub mean_f_n: f64,
    pub std_f_n: f64,
    /// Percentage points of image area.
    pub mean_delta_a: f64,
    pub std_delta_a: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Group by a parameter name (see [`GROUP_KEYS`]) and method. Groups whose
/// trials all failed are omitted with a warning.
pub fn aggregate(results: &[TrialResult], group_by: &str) -> Result<Vec<AggregateRow>> {
    if results.is_empty() {
        return Err(config_err("no results to aggregate"));
    }
    if !GROUP_KEYS.contains(&group_by) && group_by != "r" && group_by != "theta_deg" {
        return Err(config_err(format!(
            "unknown grouping '{group_by}', expected one of {}",
            GROUP_KEYS.join(", ")
        )));
    }
    // keyed by the numeric value where there is one so rows sort naturally
    let mut groups: BTreeMap<(OrderedKey, Method), (String, Vec<&TrialResult>)> = BTreeMap::new();
    for r in results {
        let value = r.cell.get(group_by).expect("key validated above");
        groups
            .entry((OrderedKey::new(&value), r.method))
            .or_insert_with(|| (value.clone(), Vec::new()))
            .1
            .push(r);
    }
    let mut rows = Vec::new();
    for ((_, method), (value, members)) in groups {
        let done: Vec<&TrialResult> = members.iter().copied().filter(|r| r.completed()).collect();
        let failures = members.len() - done.len();
        if done.is_empty() {
            log::warn!("group {group_by}={value} ({method}) has no completed trials; omitted");
            continue;
        }
        let f: Vec<f64> = done.iter().map(|r| r.f_n).collect();
        let a: Vec<f64> = done.iter().map(|r| r.delta_a()).collect();
        let (mean_f_n, std_f_n) = mean_std(&f);
        let (mean_delta_a, std_delta_a) = mean_std(&a);
        rows.push(AggregateRow {
            key: group_by.to_string(),
            value,
            method,
            count: done.len(),
            failures,
            mean_f_n,
            std_f_n,
            mean_delta_a,
            std_delta_a,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
struct OrderedKey(f64, String);

impl OrderedKey {
    fn new(value: &str) -> Self {
        Self(value.parse().unwrap_or(f64::NAN), value.to_string())
    }
}

impl Eq for OrderedKey {}

impl PartialOrd for OrderedKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then_with(|| self.1.cmp(&other.1))
    }
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "group", "value", "method", "count", "failures", "mean_f_n", "std_f_n",
        "mean_delta_a_points", "std_delta_a_points",
    ])?;
    for r in rows {
        w.write_record([
            r.key.clone(),
            r.value.clone(),
            r.method.to_string(),
            r.count.to_string(),
            r.failures.to_string(),
            format!("{:?}", r.mean_f_n),
            format!("{:?}", r.std_f_n),
            format!("{:?}", r.mean_delta_a),
            format!("{:?}", r.std_delta_a),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width table for the terminal.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let mut s = String::from("delta A is in absolute percentage points of image area\n");
    s.push_str(&format!(
        "{:<10} {:>10} {:<9} {:>5} {:>5} {:>9} {:>9} {:>9} {:>9}\n",
        "group", "value", "method", "n", "fail", "f_N", "std", "dA[pt]", "std"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>10} {:<9} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.2} {:>9.2}\n",
            r.key, r.value, r.method, r.count, r.failures, r.mean_f_n, r.std_f_n, r.mean_delta_a, r.std_delta_a
        ));
    }
    s
}
