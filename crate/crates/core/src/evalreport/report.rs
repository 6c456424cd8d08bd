//! Table emitters: aligned text, CSV, JSON and LaTeX rows for the block-wise
//! grid and the transfer table.

use serde::{Deserialize, Serialize};

use super::{F1Stats, SeedAggregate};

const STD_NOTE: &str = "F1-std is the population standard deviation across seeds.";
const ZERO_NOTE: &str = "* F1 of at least one seed used the zero-denominator convention (no predicted or true AD cases), scored as 0.";

/// Row label of the block-wise grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowLabel {
    Block(u16),
    Weighted,
}

impl RowLabel {
    pub fn text(&self) -> String {
        match self {
            RowLabel::Block(b) => b.to_string(),
            RowLabel::Weighted => "Weighted".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseRow {
    pub label: RowLabel,
    /// One entry per model column; `None` renders as "/".
    pub cells: Vec<Option<F1Stats>>,
    #[serde(default)]
    pub zero_denominator: bool,
}

/// Grid of F1 statistics: rows are blocks (plus an optional weighted row),
/// column groups are upstream models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseTable {
    pub models: Vec<String>,
    pub rows: Vec<BlockwiseRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub ad: bool,
    pub dep: bool,
    pub aggregate: SeedAggregate,
}

/// AD/Dep training-set marks followed by F1-avg, F1-max, RMSE-avg, RMSE-min.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub rows: Vec<TransferRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatexOptions {
    /// Wrap each column's best F1-avg/F1-max (and lowest RMSE) in `\textbf`.
    pub bold_best: bool,
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map_or_else(|| "/".to_string(), f)
}

fn latex_line(cells: &[String]) -> String {
    let joined = cells.join(" & ");
    let mut out = String::with_capacity(joined.len() + 3);
    let mut prev_space = false;
    for c in joined.chars() {
        if c == ' ' && prev_space {
            continue;
        }
        prev_space = c == ' ';
        out.push(c);
    }
    format!("{} \\\\", out.trim())
}

/// Marks the strings whose value equals the column optimum, formatted.
fn best_mask(values: &[Option<f64>], fmt: fn(f64) -> String, higher: bool) -> Vec<bool> {
    let shown: Vec<Option<String>> = values.iter().map(|v| v.map(fmt)).collect();
    let best = values
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| if higher { a.max(v) } else { a.min(v) })));
    let Some(best) = best.map(fmt) else { return vec![false; values.len()] };
    shown.iter().map(|s| s.as_deref() == Some(best.as_str())).collect()
}

fn bold(s: String, on: bool) -> String {
    if on {
        format!("\\textbf{{{s}}}")
    } else {
        s
    }
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { format!("{s:<w$}", w = widths[i]) } else { format!("{s:>w$}", w = widths[i]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl BlockwiseTable {
    fn column(&self, model: usize, pick: fn(&F1Stats) -> f64) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.cells.get(model).copied().flatten().as_ref().map(pick)).collect()
    }

    fn any_zero_denominator(&self) -> bool {
        self.rows.iter().any(|r| r.zero_denominator)
    }

    /// Header then one `label & avg & max & std ... \\` line per row.
    pub fn to_latex(&self, opts: LatexOptions) -> String {
        let mut header = vec!["Layer".to_string()];
        for _ in &self.models {
            header.extend(["F1-avg", "F1-max", "F1-std"].map(String::from));
        }
        let mut out = latex_line(&header) + "\n";
        let masks: Vec<(Vec<bool>, Vec<bool>)> = (0..self.models.len())
            .map(|m| {
                if opts.bold_best {
                    (best_mask(&self.column(m, |s| s.avg), fmt3, true), best_mask(&self.column(m, |s| s.max), fmt3, true))
                } else {
                    (vec![false; self.rows.len()], vec![false; self.rows.len()])
                }
            })
            .collect();
        for (i, row) in self.rows.iter().enumerate() {
            let mut cells = vec![row.label.text()];
            for (m, (avg_mask, max_mask)) in masks.iter().enumerate() {
                match row.cells.get(m).copied().flatten() {
                    Some(s) => {
                        cells.push(bold(fmt3(s.avg), avg_mask[i]));
                        cells.push(bold(fmt3(s.max), max_mask[i]));
                        cells.push(fmt3(s.std));
                    }
                    None => cells.extend(["/", "/", "/"].map(String::from)),
                }
            }
            out.push_str(&latex_line(&cells));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![String::new()]];
        let mut header = vec!["Layer".to_string()];
        for m in &self.models {
            rows[0].extend([m.clone(), String::new(), String::new()]);
            header.extend(["F1-avg", "F1-max", "F1-std"].map(String::from));
        }
        rows.push(header);
        for r in &self.rows {
            let mut line = vec![if r.zero_denominator { format!("{}*", r.label.text()) } else { r.label.text() }];
            for m in 0..self.models.len() {
                match r.cells.get(m).copied().flatten() {
                    Some(s) => line.extend([fmt3(s.avg), fmt3(s.max), fmt3(s.std)]),
                    None => line.extend(["/", "/", "/"].map(String::from)),
                }
            }
            rows.push(line);
        }
        let mut out = pad_table(&rows);
        out.push_str(STD_NOTE);
        out.push('\n');
        if self.any_zero_denominator() {
            out.push_str(ZERO_NOTE);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,layer,f1_avg,f1_max,f1_std\n");
        for (m, name) in self.models.iter().enumerate() {
            for r in &self.rows {
                let (a, x, s) = match r.cells.get(m).copied().flatten() {
                    Some(s) => (fmt3(s.avg), fmt3(s.max), fmt3(s.std)),
                    None => ("".into(), "".into(), "".into()),
                };
                out.push_str(&format!("{},{},{a},{x},{s}\n", csv_field(name), r.label.text()));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "table": self,
            "std": "population",
            "notes": notes(self.any_zero_denominator()),
        });
        serde_json::to_string_pretty(&v).expect("table serializes") + "\n"
    }

    /// Violated consistency checks, empty when the table is sound.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            for (m, c) in r.cells.iter().enumerate() {
                let Some(s) = c else { continue };
                let name = self.models.get(m).map_or("?", String::as_str);
                let at = format!("{name}, row {}", r.label.text());
                check_f1(&mut out, &at, s.avg, s.max, Some(s.std));
            }
        }
        out
    }
}

fn notes(zero: bool) -> Vec<&'static str> {
    let mut n = vec![STD_NOTE];
    if zero {
        n.push(ZERO_NOTE);
    }
    n
}

fn check_f1(out: &mut Vec<String>, at: &str, avg: f64, max: f64, std: Option<f64>) {
    let finite = avg.is_finite() && max.is_finite() && std.is_none_or(f64::is_finite);
    if !finite {
        out.push(format!("{at}: non-finite F1 statistic"));
        return;
    }
    if !(0.0..=1.0).contains(&avg) || !(0.0..=1.0).contains(&max) {
        out.push(format!("{at}: F1 outside [0, 1]"));
    }
    if max < avg {
        out.push(format!("{at}: F1-max {max} below F1-avg {avg}"));
    }
    if let Some(s) = std {
        if s < 0.0 {
            out.push(format!("{at}: negative F1-std"));
        }
    }
}

impl TransferTable {
    fn any_zero_denominator(&self) -> bool {
        self.rows.iter().any(|r| r.aggregate.f1_zero_denominator)
    }

    /// Two header lines then one line per row with `\checkmark` marks.
    pub fn to_latex(&self, opts: LatexOptions) -> String {
        let mut out = String::from(
            "\\multirow{2}{1em}{AD} & \\multirow{2}{1.5em}{Dep} & \\multicolumn{2}{c|}{AD} & \\multicolumn{2}{c}{Depression} \\\\\n",
        );
        out.push_str(&latex_line(&["", "", "F1-avg", "F1-max", "RMSE-avg", "RMSE-min"].map(String::from)));
        out.push('\n');
        let col = |f: fn(&SeedAggregate) -> Option<f64>| self.rows.iter().map(|r| f(&r.aggregate)).collect::<Vec<_>>();
        let n = self.rows.len();
        let masks = if opts.bold_best {
            [
                best_mask(&col(|a| a.f1_avg), fmt3, true),
                best_mask(&col(|a| a.f1_max), fmt3, true),
                best_mask(&col(|a| a.rmse_avg), fmt2, false),
                best_mask(&col(|a| a.rmse_min), fmt2, false),
            ]
        } else {
            std::array::from_fn(|_| vec![false; n])
        };
        for (i, r) in self.rows.iter().enumerate() {
            let a = &r.aggregate;
            let mark = |on: bool| if on { "\\checkmark".to_string() } else { String::new() };
            let cells = vec![
                mark(r.ad),
                mark(r.dep),
                a.f1_avg.map_or("/".into(), |v| bold(fmt3(v), masks[0][i])),
                a.f1_max.map_or("/".into(), |v| bold(fmt3(v), masks[1][i])),
                a.rmse_avg.map_or("/".into(), |v| bold(fmt2(v), masks[2][i])),
                a.rmse_min.map_or("/".into(), |v| bold(fmt2(v), masks[3][i])),
            ];
            out.push_str(&latex_line(&cells));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![["AD", "Dep", "F1-avg", "F1-max", "RMSE-avg", "RMSE-min"].map(String::from).to_vec()];
        for r in &self.rows {
            let a = &r.aggregate;
            let mark = |on: bool| if on { "x" } else { "" }.to_string();
            let f1_avg = match a.f1_avg {
                Some(v) if a.f1_zero_denominator => format!("{}*", fmt3(v)),
                v => opt(v, fmt3),
            };
            rows.push(vec![mark(r.ad), mark(r.dep), f1_avg, opt(a.f1_max, fmt3), opt(a.rmse_avg, fmt2), opt(a.rmse_min, fmt2)]);
        }
        let mut out = pad_table(&rows);
        if self.any_zero_denominator() {
            out.push_str(ZERO_NOTE);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ad,dep,f1_avg,f1_max,f1_std,rmse_avg,rmse_min\n");
        let e = |v: Option<f64>, f: fn(f64) -> String| v.map_or_else(String::new, f);
        for r in &self.rows {
            let a = &r.aggregate;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                u8::from(r.ad),
                u8::from(r.dep),
                e(a.f1_avg, fmt3),
                e(a.f1_max, fmt3),
                e(a.f1_std, fmt3),
                e(a.rmse_avg, fmt2),
                e(a.rmse_min, fmt2)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "table": self,
            "std": "population",
            "notes": notes(self.any_zero_denominator()),
        });
        serde_json::to_string_pretty(&v).expect("table serializes") + "\n"
    }

    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            let a = &r.aggregate;
            let at = format!("transfer row {}", i + 1);
            match (a.f1_avg, a.f1_max) {
                (Some(avg), Some(max)) => check_f1(&mut out, &at, avg, max, a.f1_std),
                (None, None) => {}
                _ => out.push(format!("{at}: F1-avg and F1-max must both be present or absent")),
            }
            match (a.rmse_avg, a.rmse_min) {
                (Some(avg), Some(min)) => {
                    if !(avg.is_finite() && min.is_finite()) || min < 0.0 {
                        out.push(format!("{at}: RMSE must be finite and non-negative"));
                    } else if min > avg {
                        out.push(format!("{at}: RMSE-min {min} above RMSE-avg {avg}"));
                    }
                }
                (None, None) => {}
                _ => out.push(format!("{at}: RMSE-avg and RMSE-min must both be present or absent")),
            }
            if r.ad != a.f1_avg.is_some() {
                out.push(format!("{at}: AD mark does not match presence of F1 columns"));
            }
            if r.dep != a.rmse_avg.is_some() {
                out.push(format!("{at}: Dep mark does not match presence of RMSE columns"));
            }
        }
        out
    }
}

/// Reads a table back from the JSON emitted by `to_json`.
pub fn parse_table_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, serde_json::Error> {
    #[derive(Deserialize)]
    struct Wrapper<T> {
        table: T,
    }
    Ok(serde_json::from_str::<Wrapper<T>>(text)?.table)
}
