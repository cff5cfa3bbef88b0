use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const METRICS_HEADER: &str = "checkpoint,variant,mode,seed,config_hash,acc,se,auc,miou,f1,flops,params";

/// One evaluated checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub checkpoint: String,
    pub variant: String,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub acc: Option<f64>,
    pub se: Option<f64>,
    pub auc: Option<f64>,
    pub miou: Option<f64>,
    pub f1: Option<f64>,
    pub flops: u64,
    pub params: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn parse_opt(field: &str, s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("metrics.csv: `{field}` is not a number: `{s}`")))
}

impl MetricsReport {
    fn to_csv(&self) -> Result<String> {
        for (name, v) in [
            ("checkpoint", &self.checkpoint),
            ("variant", &self.variant),
            ("mode", &self.mode),
            ("config_hash", &self.config_hash),
        ] {
            if v.contains([',', '\n']) {
                return Err(Error::Argument(format!("{name} `{v}` contains a separator")));
            }
        }
        Ok(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.checkpoint,
            self.variant,
            self.mode,
            self.seed,
            self.config_hash,
            opt(self.acc),
            opt(self.se),
            opt(self.auc),
            opt(self.miou),
            opt(self.f1),
            self.flops,
            self.params
        ))
    }

    fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Data(format!("metrics.csv: expected 12 fields, got {}", f.len())));
        }
        let int = |name: &str, s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::Data(format!("metrics.csv: `{name}` is not an integer: `{s}`")))
        };
        Ok(Self {
            checkpoint: f[0].to_string(),
            variant: f[1].to_string(),
            mode: f[2].to_string(),
            seed: int("seed", f[3])?,
            config_hash: f[4].to_string(),
            acc: parse_opt("acc", f[5])?,
            se: parse_opt("se", f[6])?,
            auc: parse_opt("auc", f[7])?,
            miou: parse_opt("miou", f[8])?,
            f1: parse_opt("f1", f[9])?,
            flops: int("flops", f[10])?,
            params: int("params", f[11])?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv()?);
        s.push('\n');
    }
    crate::synthdata::write_atomic(path, s.as_bytes())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        _ => return Err(Error::Data(format!("{}: missing metrics header", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsReport::from_csv).collect()
}

fn mode_rank(mode: &str) -> usize {
    match mode {
        "teacher" => 0,
        "scratch" => 1,
        "softkd" => 2,
        "fsd_only" => 3,
        "distill" => 4,
        _ => 5,
    }
}

fn label(r: &MetricsReport) -> String {
    match r.mode.as_str() {
        "teacher" => format!("Teacher ({})", r.variant),
        "distill" => format!("{}-ours", r.variant),
        m => format!("{}-{m}", r.variant),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// Comparison table: teachers first, then each student variant with its
/// scratch baseline directly above the distilled runs.
pub fn render_report(rows: &[MetricsReport]) -> String {
    let mut sorted: Vec<&MetricsReport> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        let ka = (a.mode != "teacher", &a.variant, mode_rank(&a.mode), &a.mode, a.seed, &a.checkpoint);
        let kb = (b.mode != "teacher", &b.variant, mode_rank(&b.mode), &b.mode, b.seed, &b.checkpoint);
        ka.cmp(&kb)
    });
    let mut s = String::from("# Results\n\n");
    s.push_str("| Method | Seed | ACC | Se | AUC | mIOU | F1-score | FLOPs | Params |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &sorted {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {:.3}G | {:.3}M |",
            label(r),
            r.seed,
            cell(r.acc),
            cell(r.se),
            cell(r.auc),
            cell(r.miou),
            cell(r.f1),
            r.flops as f64 / 1e9,
            r.params as f64 / 1e6
        );
    }
    s.push_str("\n## Mean over seeds\n\n");
    s.push_str("| Method | Runs | ACC | Se | AUC | mIOU | F1-score |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for group in sorted.chunk_by(|a, b| (&a.variant, &a.mode) == (&b.variant, &b.mode)) {
        let cols: [fn(&MetricsReport) -> Option<f64>; 5] = [|r| r.acc, |r| r.se, |r| r.auc, |r| r.miou, |r| r.f1];
        let cells: Vec<String> = cols.iter().map(|f| cell(mean_defined(group.iter().map(|r| f(r))))).collect();
        let _ = writeln!(s, "| {} | {} | {} |", label(group[0]), group.len(), cells.join(" | "));
    }
    s
}

/// Mean of the defined values; `None` if there are none.
pub fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
