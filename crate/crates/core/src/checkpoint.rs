//! Versioned plain-text checkpoints.
//!
//! ```text
//! format stua-checkpoint 1
//! meta model {"p":6,...}
//! meta regions 6
//! meta categories 4
//! meta scaler.mobility 100.5 37.2
//! meta scaler.context_mean 0 0 0 0
//! meta scaler.context_std 1 1 1 1
//! param predictor.gcn.0 gcn 1 16
//! 0.12 -0.03 ...
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so save then load is
//! exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Result, StuaError};
use crate::model::{Model, Scaler};

pub const CHECKPOINT_HEADER: &str = "format stua-checkpoint 1";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn to_text(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_HEADER}");
    let _ = writeln!(
        out,
        "meta model {}",
        serde_json::to_string(&model.config).expect("config serializes")
    );
    let _ = writeln!(out, "meta regions {}", model.regions);
    let _ = writeln!(out, "meta categories {}", model.categories);
    let s = &model.scaler;
    let _ = writeln!(
        out,
        "meta scaler.mobility {} {}",
        s.mobility_mean, s.mobility_std
    );
    let _ = writeln!(
        out,
        "meta scaler.context_mean {}",
        join(s.context_mean.iter().copied())
    );
    let _ = writeln!(
        out,
        "meta scaler.context_std {}",
        join(s.context_std.iter().copied())
    );
    for p in model.store.iter() {
        let (rows, cols) = p.value.dim();
        let _ = writeln!(out, "param {} {} {rows} {cols}", p.name, p.group.label());
        for row in p.value.rows() {
            let _ = writeln!(out, "{}", join(row.iter().copied()));
        }
    }
    out
}

fn bad(message: impl Into<String>) -> StuaError {
    StuaError::Checkpoint(message.into())
}

fn floats(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| bad(format!("bad number `{t}` in {what}")))
        })
        .collect()
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_HEADER) {
        return Err(bad(format!("missing header `{CHECKPOINT_HEADER}`")));
    }
    let mut config: Option<ModelConfig> = None;
    let mut regions = None;
    let mut categories = None;
    let mut mobility = None;
    let mut context_mean = None;
    let mut context_std = None;
    let mut params: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();

    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let (kind, rest) = line
            .split_once(' ')
            .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        match kind {
            "meta" => {
                let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
                match key {
                    "model" => {
                        config = Some(
                            serde_json::from_str(value)
                                .map_err(|e| bad(format!("model config: {e}")))?,
                        )
                    }
                    "regions" => regions = value.parse::<usize>().ok(),
                    "categories" => categories = value.parse::<usize>().ok(),
                    "scaler.mobility" => mobility = Some(floats(value, key)?),
                    "scaler.context_mean" => context_mean = Some(floats(value, key)?),
                    "scaler.context_std" => context_std = Some(floats(value, key)?),
                    other => return Err(bad(format!("unknown meta key `{other}`"))),
                }
            }
            "param" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(bad(format!("malformed param header `{line}`")));
                }
                let rows: usize = parts[2]
                    .parse()
                    .map_err(|_| bad(format!("bad rows in `{line}`")))?;
                let cols: usize = parts[3]
                    .parse()
                    .map_err(|_| bad(format!("bad cols in `{line}`")))?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let row = lines
                        .next()
                        .ok_or_else(|| bad(format!("truncated param `{}`", parts[0])))?;
                    values.extend(floats(row, parts[0])?);
                }
                params.push((parts[0].to_string(), rows, cols, values));
            }
            other => return Err(bad(format!("unknown record `{other}`"))),
        }
    }

    let config = config.ok_or_else(|| bad("missing meta model"))?;
    let regions = regions.ok_or_else(|| bad("missing meta regions"))?;
    let categories = categories.ok_or_else(|| bad("missing meta categories"))?;
    let mobility = mobility
        .filter(|m| m.len() == 2)
        .ok_or_else(|| bad("missing meta scaler.mobility"))?;
    let context_mean = context_mean.unwrap_or_default();
    let context_std = context_std.unwrap_or_default();
    if context_mean.len() != categories || context_std.len() != categories {
        return Err(bad("context scaler length does not match categories"));
    }

    let mut model = Model::new(&config, regions, categories, 0);
    model.scaler = Scaler {
        mobility_mean: mobility[0],
        mobility_std: mobility[1],
        context_mean,
        context_std,
    };
    if params.len() != model.store.len() {
        return Err(bad(format!(
            "expected {} params, found {}",
            model.store.len(),
            params.len()
        )));
    }
    for (name, rows, cols, values) in params {
        let p = model
            .store
            .by_name_mut(&name)
            .ok_or_else(|| bad(format!("unexpected param `{name}`")))?;
        if p.value.dim() != (rows, cols) || values.len() != rows * cols {
            return Err(bad(format!(
                "param `{name}` has shape ({rows}, {cols}), expected {:?}",
                p.value.dim()
            )));
        }
        p.value = ndarray::Array2::from_shape_vec((rows, cols), values).expect("checked length");
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    crate::experiment::write_atomic(path, to_text(model).as_bytes())
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| StuaError::io(path, e))?;
    from_text(&text)
}
