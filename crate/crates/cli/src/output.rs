use crate::experiment::{ExperimentOutput, Row};
use crate::CliError;
use gbp_calib::eval::CSV_HEADER;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub runs: usize,
    pub ate_twb_m: Stat,
    pub are_twb_deg: Stat,
    pub ate_tbs_m: Stat,
    pub are_tbs_deg: Stat,
    pub ate_tbm_m: Stat,
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => x.to_string(),
    }
}

/// Final-metric statistics per (variant, value), in order of first appearance.
pub fn summarize(out: &ExperimentOutput) -> Vec<GroupSummary> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&Row>> = BTreeMap::new();
    for r in &out.finals {
        let key = (r.variant.clone(), format_value(r.value));
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let stat = |f: fn(&Row) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            GroupSummary {
                variant: key.0.clone(),
                value: (!key.1.is_empty()).then(|| key.1.clone()),
                runs: rows.len(),
                ate_twb_m: stat(|r| r.record.ate_twb_m),
                are_twb_deg: stat(|r| r.record.are_twb_deg),
                ate_tbs_m: stat(|r| r.record.ate_tbs_m),
                are_tbs_deg: stat(|r| r.record.are_tbs_deg),
                ate_tbm_m: stat(|r| r.record.ate_tbm_m),
            }
        })
        .collect()
}

/// `variant,value` followed by the shared metrics columns.
pub fn write_csv<W: Write>(w: W, rows: &[Row]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Runtime(format!("writing CSV: {e}"));
    let mut header = vec!["variant", "value"];
    header.extend(CSV_HEADER);
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let m = &r.record;
        w.write_record([
            r.variant.clone(),
            format_value(r.value),
            m.seed.to_string(),
            m.motion.to_string(),
            m.iteration.to_string(),
            m.ate_twb_m.to_string(),
            m.are_twb_deg.to_string(),
            m.ate_tbs_m.to_string(),
            m.are_tbs_deg.to_string(),
            m.ate_tbm_m.to_string(),
            m.energy.to_string(),
            m.msgs_sent.to_string(),
            m.msgs_dropped.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn table_line(g: &GroupSummary) -> String {
    format!(
        "{:<14} {:>6} n={:<3} T_WB {:.4}±{:.4} m {:.3}±{:.3}°  T_BS {:.4} m {:.3}°  t_BM {:.4} m",
        g.variant,
        g.value.as_deref().unwrap_or("-"),
        g.runs,
        g.ate_twb_m.mean,
        g.ate_twb_m.std,
        g.are_twb_deg.mean,
        g.are_twb_deg.std,
        g.ate_tbs_m.mean,
        g.are_tbs_deg.mean,
        g.ate_tbm_m.mean,
    )
}

/// Writes `metrics.csv`, `summary.json` and the resolved `config.toml` into `dir`.
pub fn write_artifacts(dir: &Path, config_toml: &str, out: &ExperimentOutput) -> Result<Vec<GroupSummary>, CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv = std::fs::File::create(dir.join("metrics.csv")).map_err(io)?;
    write_csv(std::io::BufWriter::new(csv), &out.rows)?;
    let summary = summarize(out);
    let json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    std::fs::write(dir.join("summary.json"), json + "\n").map_err(io)?;
    std::fs::write(dir.join("config.toml"), config_toml).map_err(io)?;
    Ok(summary)
}
