//! Table-style reports: rows are methods, columns are per-split metrics
//! (SSIM and LPIPS scaled by 10) followed by mean relative improvements.

use std::fmt::Write as _;
use std::path::Path;

use egorender_core::metrics::{
    published_lpips, relative_improvement, relative_improvement_per_dataset, MetricError, MetricTable, Orientation,
    WorstRule, PUBLISHED_IM_TEX_LPIPS_RI, PUBLISHED_LPIPS_REFERENCE,
};
use serde::{Deserialize, Serialize};

use crate::evaluate::MetricMeans;
use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ssim,
    Lpips,
    Psnr,
    L1,
}

impl Metric {
    pub fn orientation(self) -> Orientation {
        match self {
            Metric::Ssim | Metric::Psnr => Orientation::HigherIsBetter,
            Metric::Lpips | Metric::L1 => Orientation::LowerIsBetter,
        }
    }

    pub fn get(self, m: &MetricMeans) -> Option<f64> {
        match self {
            Metric::Ssim => Some(m.ssim),
            Metric::Lpips => m.lpips,
            Metric::Psnr => Some(m.psnr),
            Metric::L1 => Some(m.l1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: String,
    /// One entry per split, in `MetricReport::datasets` order.
    pub cells: Vec<MetricMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub datasets: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub lpips_name: Option<String>,
    pub worst_rule: WorstRule,
    /// sha256 of the effective configuration.
    pub fingerprint: String,
    /// Split-disjointness statements that were asserted.
    pub checks: Vec<String>,
}

impl MetricReport {
    pub fn table(&self, metric: Metric) -> MetricTable {
        MetricTable {
            methods: self.rows.iter().map(|r| r.variant.clone()).collect(),
            datasets: self.datasets.clone(),
            values: self.rows.iter().map(|r| r.cells.iter().map(|c| metric.get(c)).collect()).collect(),
        }
    }

    /// Mean relative improvement per row, in percent.
    pub fn ri(&self, metric: Metric) -> Result<Vec<f64>, MetricError> {
        Ok(relative_improvement(&self.table(metric), metric.orientation(), &self.worst_rule)?.into_iter().map(|(_, v)| v).collect())
    }

    fn ri_columns(&self) -> Result<Vec<(&'static str, Vec<f64>)>, EvalError> {
        let mut cols = vec![("RI_SSIM", self.ri(Metric::Ssim)?)];
        if self.lpips_name.is_some() {
            cols.push(("RI_LPIPS", self.ri(Metric::Lpips)?));
        }
        cols.push(("RI_PSNR", self.ri(Metric::Psnr)?));
        Ok(cols)
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let ri = self.ri_columns()?;
        let mut s = String::from("variant,dataset,frames,ssim,lpips,psnr,l1");
        for (name, _) in &ri {
            write!(s, ",{}", name.to_lowercase()).unwrap();
        }
        s.push_str(",config_fingerprint\n");
        for (i, row) in self.rows.iter().enumerate() {
            for (d, c) in self.datasets.iter().zip(&row.cells) {
                let lp = c.lpips.map(|v| v.to_string()).unwrap_or_default();
                write!(s, "{},{d},{},{},{lp},{},{}", row.variant, c.frames, c.ssim, c.psnr, c.l1).unwrap();
                for (_, v) in &ri {
                    write!(s, ",{}", v[i]).unwrap();
                }
                writeln!(s, ",{}", self.fingerprint).unwrap();
            }
        }
        Ok(s)
    }

    pub fn to_markdown(&self) -> Result<String, EvalError> {
        let ri = self.ri_columns()?;
        let lp_name = self.lpips_name.clone();
        let mut cols: Vec<(String, Metric, usize)> = Vec::new();
        for (d, name) in self.datasets.iter().enumerate() {
            cols.push((format!("{name} SSIM"), Metric::Ssim, d));
            if let Some(l) = &lp_name {
                cols.push((format!("{name} {l}"), Metric::Lpips, d));
            }
        }
        let mut s = String::new();
        writeln!(s, "# Ablation report\n").unwrap();
        writeln!(s, "Config fingerprint: `{}`\n", self.fingerprint).unwrap();
        if let Some(l) = &lp_name {
            writeln!(s, "{l} is a fixed random-feature perceptual distance, not learned LPIPS.\n").unwrap();
        }
        writeln!(s, "SSIM and {} values are multiplied by 10. RI columns are mean relative improvements (%) over the worst method ({}).\n",
            lp_name.as_deref().unwrap_or("LPIPS"), rule_name(&self.worst_rule)).unwrap();

        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        for (name, ..) in &cols {
            write!(header, " {name} |").unwrap();
            rule.push_str("---|");
        }
        for (name, _) in &ri {
            write!(header, " {name} |").unwrap();
            rule.push_str("---|");
        }
        writeln!(s, "{header}\n{rule}").unwrap();
        let best: Vec<Option<f64>> = cols
            .iter()
            .map(|(_, m, d)| best_of(self.rows.iter().filter_map(|r| m.get(&r.cells[*d])), m.orientation()))
            .collect();
        let ri_best: Vec<Option<f64>> =
            ri.iter().map(|(_, v)| best_of(v.iter().copied(), Orientation::HigherIsBetter)).collect();
        for (i, row) in self.rows.iter().enumerate() {
            let mut line = format!("| {} |", row.variant);
            for ((_, m, d), b) in cols.iter().zip(&best) {
                let v = m.get(&row.cells[*d]);
                write!(line, " {} |", cell(v.map(|x| 10.0 * x), v == *b && v.is_some(), 3)).unwrap();
            }
            for ((_, v), b) in ri.iter().zip(&ri_best) {
                let text = if v[i] == 0.0 && self.rows.len() > 1 {
                    "-".to_string()
                } else {
                    cell(Some(v[i]), Some(v[i]) == *b, 3)
                };
                write!(line, " {text} |").unwrap();
            }
            writeln!(s, "{line}").unwrap();
        }

        writeln!(s, "\n## PSNR (dB) and L1\n").unwrap();
        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        for name in &self.datasets {
            write!(header, " {name} PSNR | {name} L1 |").unwrap();
            rule.push_str("---|---|");
        }
        writeln!(s, "{header}\n{rule}").unwrap();
        for row in &self.rows {
            let mut line = format!("| {} |", row.variant);
            for (d, c) in row.cells.iter().enumerate() {
                let bp = best_of(self.rows.iter().map(|r| r.cells[d].psnr), Orientation::HigherIsBetter);
                let bl = best_of(self.rows.iter().map(|r| r.cells[d].l1), Orientation::LowerIsBetter);
                write!(line, " {} | {} |", cell(Some(c.psnr), Some(c.psnr) == bp, 2), cell(Some(c.l1), Some(c.l1) == bl, 4)).unwrap();
            }
            writeln!(s, "{line}").unwrap();
        }
        let counts: Vec<String> = self
            .datasets
            .iter()
            .enumerate()
            .map(|(d, n)| format!("{n}: {} renders", self.rows.first().map_or(0, |r| r.cells[d].frames)))
            .collect();
        writeln!(s, "\nEvaluated pairs per method: {}.\n", counts.join(", ")).unwrap();
        writeln!(s, "## Split checks\n").unwrap();
        for c in &self.checks {
            writeln!(s, "- {c}").unwrap();
        }
        writeln!(s, "\n## Relative improvement of the published table\n\n{}", published_ri_note()?).unwrap();
        Ok(s)
    }

    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(|e| EvalError::Io { path: dir.to_path_buf(), source: e })?;
        for (name, text) in [("report.csv", self.to_csv()?), ("report.md", self.to_markdown()?)] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| EvalError::Io { path: p, source: e })?;
        }
        let p = dir.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(self).expect("report serializes"))
            .map_err(|e| EvalError::Io { path: p, source: e })
    }
}

fn rule_name(r: &WorstRule) -> String {
    match r {
        WorstRule::PerDataset => "per split".into(),
        WorstRule::Fixed(m) => format!("fixed reference `{m}`"),
    }
}

fn best_of(vals: impl Iterator<Item = f64>, o: Orientation) -> Option<f64> {
    vals.filter(|v| v.is_finite()).fold(None, |acc, v| match (acc, o) {
        (None, _) => Some(v),
        (Some(b), Orientation::HigherIsBetter) => Some(b.max(v)),
        (Some(b), Orientation::LowerIsBetter) => Some(b.min(v)),
    })
}

fn cell(v: Option<f64>, bold: bool, digits: usize) -> String {
    match v {
        None => "n/a".into(),
        Some(x) if bold => format!("**{x:.digits$}**"),
        Some(x) => format!("{x:.digits$}"),
    }
}

/// Recomputes the published Im-Tex LPIPS relative improvement under both
/// reference rules and states that neither matches the printed value.
pub fn published_ri_note() -> Result<String, MetricError> {
    let t = published_lpips();
    let im = t.method_index("im_tex").expect("published table has im_tex");
    let fixed = WorstRule::Fixed(PUBLISHED_LPIPS_REFERENCE.into());
    let per_fixed = relative_improvement_per_dataset(&t, Orientation::LowerIsBetter, &fixed)?;
    let mean = |rule: &WorstRule| -> Result<f64, MetricError> {
        Ok(relative_improvement(&t, Orientation::LowerIsBetter, rule)?[im].1)
    };
    Ok(format!(
        "The published Im-Tex LPIPS RI is {PUBLISHED_IM_TEX_LPIPS_RI:.3}%. From the published LPIPS values, \
         the {h1} term against `{PUBLISHED_LPIPS_REFERENCE}` is {:.2}%, and the mean over the four captures is \
         {:.2}% with `{PUBLISHED_LPIPS_REFERENCE}` as fixed reference and {:.2}% with the per-capture worst method. \
         Neither rule reproduces {PUBLISHED_IM_TEX_LPIPS_RI:.3}%; the aggregation is ambiguous and is left unresolved.\n",
        per_fixed[im][0],
        mean(&fixed)?,
        mean(&WorstRule::PerDataset)?,
        h1 = t.datasets[0],
    ))
}
