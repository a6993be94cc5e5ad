//! Assertions over recorded time series.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Trend, TrendFit, SERIES_SCHEMA};
use crate::error::{Error, Result};

/// A series CSV loaded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub path: PathBuf,
    /// Text of the leading comment line, without the `#`.
    pub comment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        let comment = first
            .strip_prefix('#')
            .map(str::trim)
            .filter(|c| c.starts_with(SERIES_SCHEMA))
            .ok_or_else(|| Error::schema(path, format!("missing `# {SERIES_SCHEMA}` header line")))?
            .to_string();
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if columns.first().map(String::as_str) != Some("t") {
            return Err(Error::schema(path, "first column must be `t`"));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| Error::schema(path, format!("non-numeric value in row {}", i + 1)))?;
            rows.push(row);
        }
        Ok(Self {
            path: path.to_path_buf(),
            comment,
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::schema(&self.path, format!("missing column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedTrend {
    Growing,
    NotGrowing,
}

/// One declared assertion. Thresholds are explicit in the check file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// `max_t |M(t) − M(0)| / M(0) < max_rel`.
    MassDrift { max_rel: f64 },
    /// `M(t) ≤ max(M(0), measure)·(1 + rel)`.
    MassCap { measure: f64, rel: f64 },
    /// Total positive variation of the energy `< max_rel·|E(0)|`.
    EnergyVariation { max_rel: f64 },
    /// Exponential envelope margin `≥ −rel·‖v‖_∞`, optionally only for `t ≤ t_max`.
    Pte1Margin {
        rel: f64,
        #[serde(default)]
        t_max: Option<f64>,
    },
    /// Uniform bound margin `≥ −abs` wherever the bound applies.
    Pte3Margin { abs: f64 },
    /// Second-half trend of a column.
    Trend { column: String, expect: ExpectedTrend },
    ColumnMax { column: String, max: f64 },
    ColumnMin { column: String, min: f64 },
}

impl Check {
    pub fn name(&self) -> String {
        match self {
            Check::MassDrift { .. } => "mass_drift".into(),
            Check::MassCap { .. } => "mass_cap".into(),
            Check::EnergyVariation { .. } => "energy_variation".into(),
            Check::Pte1Margin { .. } => "pte1_margin".into(),
            Check::Pte3Margin { .. } => "pte3_margin".into(),
            Check::Trend { column, .. } => format!("trend[{column}]"),
            Check::ColumnMax { column, .. } => format!("max[{column}]"),
            Check::ColumnMin { column, .. } => format!("min[{column}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default)]
    pub check: Vec<Check>,
}

impl CheckSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub series: PathBuf,
    pub check: String,
    /// Measured quantity; NaN when not applicable.
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

/// Sum of the positive increments.
pub fn positive_variation(y: &[f64]) -> f64 {
    y.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

fn evaluate_one(check: &Check, s: &Series) -> Result<(f64, String, bool)> {
    let first = |c: &[f64]| {
        c.first()
            .copied()
            .ok_or_else(|| Error::schema(&s.path, "series has no rows"))
    };
    Ok(match check {
        Check::MassDrift { max_rel } => {
            let m = s.column("mass")?;
            let m0 = first(&m)?;
            let drift = m.iter().map(|x| (x - m0).abs()).fold(0.0, f64::max) / m0.abs();
            (drift, format!("< {max_rel:e}"), drift < *max_rel)
        }
        Check::MassCap { measure, rel } => {
            let m = s.column("mass")?;
            let cap = first(&m)?.max(*measure) * (1.0 + rel);
            let top = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (top, format!("<= {cap:e}"), top <= cap)
        }
        Check::EnergyVariation { max_rel } => {
            let e = s.column("energy")?;
            let limit = max_rel * first(&e)?.abs();
            let pv = positive_variation(&e);
            (pv, format!("< {limit:e}"), pv < limit)
        }
        Check::Pte1Margin { rel, t_max } => {
            let t = s.column("t")?;
            let m = s.column("bound_margin_pte1")?;
            let v = s.column("v_inf")?;
            let tm = t_max.unwrap_or(f64::INFINITY);
            // Worst margin in units of ‖v‖_∞.
            let worst = (0..t.len())
                .filter(|&i| t[i] <= tm && m[i].is_finite())
                .map(|i| m[i] / v[i].max(f64::MIN_POSITIVE))
                .fold(f64::INFINITY, f64::min);
            (worst, format!(">= {:e}", -rel), worst >= -rel)
        }
        Check::Pte3Margin { abs } => {
            let m = s.column("bound_margin_pte3")?;
            let worst = m.iter().copied().filter(|x| !x.is_nan()).fold(f64::INFINITY, f64::min);
            // A bound that never applied cannot be violated.
            (worst, format!(">= {:e}", -abs), worst >= -abs)
        }
        Check::Trend { column, expect } => {
            let fit = TrendFit::second_half(&s.column("t")?, &s.column(column)?);
            let pass = match expect {
                ExpectedTrend::Growing => fit.verdict == Trend::Growing,
                ExpectedTrend::NotGrowing => fit.verdict == Trend::NotGrowing,
            };
            (fit.slope, format!("{expect:?} (r2 = {:.4}, verdict {:?})", fit.r2, fit.verdict), pass)
        }
        Check::ColumnMax { column, max } => {
            let top = s.column(column)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
            (top, format!("<= {max:e}"), top <= *max)
        }
        Check::ColumnMin { column, min } => {
            let low = s.column(column)?.into_iter().fold(f64::INFINITY, f64::min);
            (low, format!(">= {min:e}"), low >= *min)
        }
    })
}

/// Evaluates every check on every series. All series must share one column
/// layout.
pub fn evaluate(spec: &CheckSpec, series: &[Series]) -> Result<Vec<CheckOutcome>> {
    if let Some(first) = series.first() {
        if let Some(other) = series.iter().find(|s| s.columns != first.columns) {
            return Err(Error::schema(
                &other.path,
                format!("columns differ from {}", first.path.display()),
            ));
        }
    }
    let mut out = Vec::new();
    for s in series {
        for c in &spec.check {
            let (value, threshold, pass) = evaluate_one(c, s)?;
            out.push(CheckOutcome {
                series: s.path.clone(),
                check: c.name(),
                value,
                threshold,
                pass,
            });
        }
    }
    Ok(out)
}

pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&format!(
            "{} {:<24} {:<40} value = {:e} ({})\n",
            if o.pass { "PASS" } else { "FAIL" },
            o.check,
            o.series.display(),
            o.value,
            o.threshold
        ));
    }
    s
}
