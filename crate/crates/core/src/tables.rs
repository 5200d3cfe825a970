//! Bandwidth/revenue tables in the published layout, with a consistency
//! column that flags rows whose totals do not add up.

use serde::{Deserialize, Serialize};

use crate::report::fmt2;
use crate::selfreg::TickRecord;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Computed here; identities must hold to 1e-9.
    Simulated,
    /// Copied from print; identities only hold up to 2-decimal rounding.
    Published,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub price: f64,
    /// Per-user rate of each cluster (0 when the cluster is absent).
    pub rates: Vec<f64>,
    pub counts: Vec<usize>,
    pub total_flow: f64,
    pub revenue: f64,
    pub provenance: Provenance,
}

impl TableRow {
    /// Row for one simulated tick: mean delivered rate per cluster among the
    /// users that transmitted.
    pub fn from_tick(label: &str, price: f64, tick: &TickRecord, clusters: usize) -> Self {
        let mut sums = vec![0.0; clusters];
        let mut counts = vec![0; clusters];
        for u in tick.users.iter().filter(|u| u.rate > 0.0) {
            sums[u.cluster.index()] += u.rate;
            counts[u.cluster.index()] += 1;
        }
        let rates = sums.iter().zip(&counts).map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
        TableRow {
            label: label.to_string(),
            price,
            rates,
            counts,
            total_flow: tick.total_flow,
            revenue: tick.revenue,
            provenance: Provenance::Simulated,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckedRow {
    pub row: TableRow,
    pub consistent: bool,
    pub issues: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckedTable {
    pub title: String,
    pub clusters: Vec<String>,
    pub rows: Vec<CheckedRow>,
}

fn check(row: &TableRow) -> Vec<String> {
    let mut issues = Vec::new();
    let summed: f64 = row.rates.iter().zip(&row.counts).map(|(r, &n)| r * n as f64).sum();
    let users: usize = row.counts.iter().sum();
    let (flow_tol, rev_tol) = match row.provenance {
        Provenance::Simulated => (1e-9 * row.total_flow.abs().max(1.0), 1e-9 * row.revenue.abs().max(1.0)),
        // each printed rate and the printed totals carry up to 0.005 of rounding
        Provenance::Published => (0.005 * users as f64 + 0.005, 0.005 * row.price + 0.005),
    };
    if (summed - row.total_flow).abs() > flow_tol {
        issues.push(format!("total flow {} != sum of rates {}", fmt2(row.total_flow), fmt2(summed)));
    }
    let expected = row.price * row.total_flow;
    if (expected - row.revenue).abs() > rev_tol {
        issues.push(format!("revenue {} != price x flow {}", fmt2(row.revenue), fmt2(expected)));
    }
    issues
}

/// Check every row. No rows gives an empty table.
pub fn emit_paper_tables(title: &str, clusters: &[String], rows: Vec<TableRow>) -> CheckedTable {
    let rows = rows
        .into_iter()
        .map(|row| {
            let issues = check(&row);
            CheckedRow { consistent: issues.is_empty(), issues, row }
        })
        .collect();
    CheckedTable { title: title.to_string(), clusters: clusters.to_vec(), rows }
}

impl CheckedTable {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string(), "provenance".to_string(), "price".to_string()];
        header.extend(self.clusters.iter().map(|c| format!("rate_{c}")));
        header.extend(self.clusters.iter().map(|c| format!("count_{c}")));
        header.extend(["total_flow", "revenue", "consistent", "issues"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let p = match r.row.provenance {
                Provenance::Simulated => "simulated",
                Provenance::Published => "published",
            };
            let mut rec = vec![r.row.label.clone(), p.to_string(), fmt2(r.row.price)];
            rec.extend(r.row.rates.iter().map(|&v| fmt2(v)));
            rec.extend(r.row.counts.iter().map(|n| n.to_string()));
            rec.extend([fmt2(r.row.total_flow), fmt2(r.row.revenue), r.consistent.to_string(), r.issues.join("; ")]);
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn published(label: &str, price: f64, rates: [f64; 3], counts: [usize; 3], flow: f64, revenue: f64) -> TableRow {
    let mut r = rates.to_vec();
    r.extend([0.0, 0.0]);
    let mut c = counts.to_vec();
    c.extend([0, 0]);
    TableRow { label: label.into(), price, rates: r, counts: c, total_flow: flow, revenue, provenance: Provenance::Published }
}

/// Allocation at prices 5 and 6 once clusters 4 and 5 have left, as printed.
pub fn published_table2() -> Vec<TableRow> {
    vec![
        published("price=5", 5.0, [1.76, 2.64, 3.09], [5, 5, 5], 37.45, 187.25),
        published("price=6", 6.0, [1.49, 2.42, 2.89], [5, 5, 5], 34.0, 204.0),
    ]
}

/// Link AB at price 6 before and after cluster 1 leaves and four new
/// cluster-3 users join, as printed.
pub fn published_table3() -> Vec<TableRow> {
    vec![
        published("before", 6.0, [1.49, 2.42, 2.89], [5, 5, 5], 34.0, 204.0),
        published("after", 6.0, [0.0, 2.42, 2.89], [0, 5, 5], 26.45, 158.7),
        published("+4 new users", 6.0, [0.0, 2.42, 2.89], [0, 5, 9], 39.90, 228.04),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        (1..=5).map(|i| format!("cluster{i}")).collect()
    }

    #[test]
    fn table2_is_consistent() {
        let t = emit_paper_tables("table2", &labels(), published_table2());
        assert!(t.rows.iter().all(|r| r.consistent), "{:?}", t.rows);
    }

    #[test]
    fn table3_flags_known_errors() {
        let t = emit_paper_tables("table3", &labels(), published_table3());
        let flags: Vec<bool> = t.rows.iter().map(|r| r.consistent).collect();
        assert_eq!(flags, vec![true, false, false]);
        assert!(t.rows[1].issues[0].contains("26.45") && t.rows[1].issues[0].contains("26.55"));
        let plus4 = t.rows[2].issues.join(";");
        assert!(plus4.contains("38.11") && plus4.contains("239.40"), "{plus4}");
    }

    #[test]
    fn empty_table() {
        let t = emit_paper_tables("none", &labels(), vec![]);
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv().unwrap().lines().count(), 1);
    }

    #[test]
    fn simulated_rows_are_strict() {
        let row = TableRow {
            label: "x".into(),
            price: 6.0,
            rates: vec![1.0],
            counts: vec![2],
            total_flow: 2.0,
            revenue: 12.0 + 1e-6,
            provenance: Provenance::Simulated,
        };
        let t = emit_paper_tables("t", &["a".to_string()], vec![row]);
        assert!(!t.rows[0].consistent);
    }
}
