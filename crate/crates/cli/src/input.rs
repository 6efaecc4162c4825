//! Reading p-values from CSV or JSON files.

use std::path::Path;

use anyhow::{bail, Context, Result};

const HEADER_NAMES: [&str; 4] = ["p", "pvalue", "p_value", "p-value"];

/// Reads a p-value list. JSON is used for `.json` files or content starting
/// with `[` or `{`; anything else is read as CSV.
pub fn read_pvalues(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let trimmed = text.trim_start();
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || trimmed.starts_with('[')
        || trimmed.starts_with('{');
    if is_json {
        parse_json(&text)
    } else {
        parse_csv(&text)
    }
}

/// A JSON array of numbers, or an object with a `pvalues` array.
pub fn parse_json(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let value: serde_json::Value = serde_json::from_str(text).context("malformed JSON")?;
    let array = match &value {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(o) => match o.get("pvalues") {
            Some(serde_json::Value::Array(a)) => a,
            _ => bail!("JSON object must have a \"pvalues\" array"),
        },
        _ => bail!("expected a JSON array of p-values"),
    };
    array
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .with_context(|| format!("entry {} is not a number: {v}", i + 1))
        })
        .collect()
}

/// One p-value per row. A first row that is not numeric is a header; with
/// several columns the header must name the p-value column.
pub fn parse_csv(text: &str) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut column: Option<usize> = None;
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed CSV near record {}", k + 1))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if column.is_none() {
            if record.len() == 1 && record[0].parse::<f64>().is_ok() {
                column = Some(0);
            } else if let Some(c) = record
                .iter()
                .position(|f| HEADER_NAMES.contains(&f.to_ascii_lowercase().as_str()))
            {
                column = Some(c);
                continue;
            } else if record.len() == 1 {
                // single unnamed header column
                column = Some(0);
                continue;
            } else {
                bail!("line {line}: several columns but no p-value column header (one of {})", HEADER_NAMES.join(", "));
            }
        }
        let c = column.unwrap_or(0);
        let field = record
            .get(c)
            .with_context(|| format!("line {line}: missing column {}", c + 1))?;
        let p: f64 = field
            .parse()
            .with_context(|| format!("line {line}: cannot parse {field:?} as a p-value"))?;
        out.push(p);
    }
    Ok(out)
}
