use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Outcome of one run: per-dataset scores in stream order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub ordering: String,
    pub seed: u64,
    pub datasets: Vec<(String, f64)>,
    pub average: f64,
}

/// A labelled grid of optional scores in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    /// Cells with no value, as `(row, column)` labels.
    pub fn missing(&self) -> Vec<(String, String)> {
        self.rows
            .iter()
            .flat_map(|(r, cells)| {
                cells.iter().zip(&self.columns).filter(|(c, _)| c.is_none()).map(move |(_, col)| (r.clone(), col.clone()))
            })
            .collect()
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row)?.1[c]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once(&self.corner).chain(&self.columns))?;
        for (label, cells) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(cells.iter().map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned text with scores as percentages; blanks are missing cells.
    pub fn to_text(&self) -> String {
        let mut grid = vec![std::iter::once(self.corner.clone()).chain(self.columns.iter().cloned()).collect::<Vec<_>>()];
        for (label, cells) in &self.rows {
            let mut row = vec![label.clone()];
            row.extend(cells.iter().map(|c| c.map(|v| format!("{:.1}", 100.0 * v)).unwrap_or_default()));
            grid.push(row);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = format!("{}\n", self.title);
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, &w))| if j == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for i in items {
        if !seen.iter().any(|s| s == i) {
            seen.push(i.to_string());
        }
    }
    seen
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Orderings down, methods across, plus an average row. Cells average
/// over seeds.
pub fn results_table(title: &str, runs: &[RunSummary]) -> Table {
    let orderings = unique(runs.iter().map(|r| r.ordering.as_str()));
    let methods = unique(runs.iter().map(|r| r.method.as_str()));
    let cell = |o: &str, m: &str| {
        let v: Vec<f64> = runs.iter().filter(|r| r.ordering == o && r.method == m).map(|r| r.average).collect();
        mean(&v)
    };
    let mut rows: Vec<(String, Vec<Option<f64>>)> =
        orderings.iter().map(|o| (o.clone(), methods.iter().map(|m| cell(o, m)).collect())).collect();
    let avg: Vec<Option<f64>> = (0..methods.len())
        .map(|j| {
            let col: Vec<Option<f64>> = rows.iter().map(|(_, c)| c[j]).collect();
            if col.iter().any(Option::is_none) {
                None
            } else {
                mean(&col.into_iter().flatten().collect::<Vec<_>>())
            }
        })
        .collect();
    rows.push(("avg".into(), avg));
    let t = Table { title: title.into(), corner: "order".into(), columns: methods, rows };
    for (r, c) in t.missing() {
        log::warn!("{title}: no result for {c} on ordering {r}");
    }
    t
}

/// One table per ordering: methods down, datasets across in stream order.
pub fn per_dataset_table(runs: &[RunSummary]) -> Vec<Table> {
    unique(runs.iter().map(|r| r.ordering.as_str()))
        .into_iter()
        .map(|o| {
            let these: Vec<&RunSummary> = runs.iter().filter(|r| r.ordering == o).collect();
            let mut columns = unique(these.iter().flat_map(|r| r.datasets.iter().map(|(d, _)| d.as_str())));
            let methods = unique(these.iter().map(|r| r.method.as_str()));
            let rows = methods
                .iter()
                .map(|m| {
                    let mine: Vec<&&RunSummary> = these.iter().filter(|r| &r.method == m).collect();
                    let mut cells: Vec<Option<f64>> = columns
                        .iter()
                        .map(|d| {
                            let v: Vec<f64> = mine
                                .iter()
                                .filter_map(|r| r.datasets.iter().find(|(n, _)| n == d).map(|(_, v)| *v))
                                .collect();
                            mean(&v)
                        })
                        .collect();
                    cells.push(mean(&mine.iter().map(|r| r.average).collect::<Vec<_>>()));
                    (m.clone(), cells)
                })
                .collect();
            columns.push("avg".into());
            Table { title: format!("ordering {o}"), corner: "method".into(), columns, rows }
        })
        .collect()
}

/// Metric against one swept factor. `points` are `(factor, score)`; a
/// failed point has no score.
pub fn ablation_table(kind: &str, points: &[(String, Option<f64>)]) -> Table {
    Table {
        title: format!("{kind} ablation"),
        corner: kind.into(),
        columns: vec!["score".into()],
        rows: points.iter().map(|(f, v)| (f.clone(), vec![*v])).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(method: &str, ordering: &str, seed: u64, scores: &[(&str, f64)]) -> RunSummary {
        let datasets: Vec<(String, f64)> = scores.iter().map(|(d, v)| (d.to_string(), *v)).collect();
        let average = datasets.iter().map(|d| d.1).sum::<f64>() / datasets.len() as f64;
        RunSummary { method: method.into(), ordering: ordering.into(), seed, datasets, average }
    }

    #[test]
    fn single_run_gives_one_by_one_table() {
        let t = results_table("t", &[run("mbpa++", "i", 0, &[("a", 0.5), ("b", 0.7)])]);
        assert_eq!(t.columns, ["mbpa++"]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.cell("i", "mbpa++"), t.cell("avg", "mbpa++"));
        assert!((t.cell("avg", "mbpa++").unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn full_grid_shape_and_missing_cells() {
        let methods = ["enc-dec", "agem", "replay", "mbpa", "mbpa-rand", "mbpa++", "mtl"];
        let mut runs = Vec::new();
        for o in ["i", "ii", "iii", "iv"] {
            for m in methods {
                if !(o == "iii" && m == "agem") {
                    runs.push(run(m, o, 0, &[("a", 0.4)]));
                }
            }
        }
        let t = results_table("t", &runs);
        assert_eq!(t.columns.len(), 7);
        assert_eq!(t.rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["i", "ii", "iii", "iv", "avg"]);
        assert_eq!(t.missing(), vec![("iii".to_string(), "agem".to_string()), ("avg".to_string(), "agem".to_string())]);
        let text = t.to_text();
        assert!(text.contains("40.0"));
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("order,enc-dec,agem"));
        assert!(csv.contains("iii,0.400000,,"));
    }

    #[test]
    fn per_dataset_columns_follow_stream_order() {
        let runs = vec![
            run("enc-dec", "i", 0, &[("y", 0.1), ("x", 0.9)]),
            run("mbpa++", "i", 0, &[("y", 0.5), ("x", 0.9)]),
            run("enc-dec", "ii", 0, &[("x", 0.8), ("y", 0.2)]),
        ];
        let tables = per_dataset_table(&runs);
        assert_eq!(tables[0].columns, ["y", "x", "avg"]);
        assert_eq!(tables[1].columns, ["x", "y", "avg"]);
        assert_eq!(tables[0].cell("mbpa++", "y"), Some(0.5));
    }

    #[test]
    fn ablation_table_keeps_failed_points() {
        let t = ablation_table("capacity", &[("0.1".into(), Some(0.8)), ("0.5".into(), None)]);
        assert_eq!(t.missing(), vec![("0.5".to_string(), "score".to_string())]);
    }
}
