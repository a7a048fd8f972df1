//! CSV and JSON serialisation with 17 significant digits.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Number, Value};

use crate::closed_form::{ContractSpec, MomentCurves, PolicyPair};
use crate::error::Result;
use crate::model::DeterministicCurve;

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON number carrying exactly the digits of [`fmt_f64`]; `null` when not finite.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&fmt_f64(x)).expect("formatted float is a JSON number"))
    } else {
        Value::Null
    }
}

/// Serialises `value` and rewrites every non-integer number with [`json_f64`].
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<Value> {
    let v = serde_json::to_value(value).map_err(|e| crate::error::Error::Parse(e.to_string()))?;
    Ok(widen(v))
}

fn widen(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => n.as_f64().map_or(Value::Number(n), json_f64),
        Value::Array(a) => Value::Array(a.into_iter().map(widen).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, widen(v))).collect()),
        other => other,
    }
}

/// Builds a JSON object from `(key, value)` pairs, keeping their order.
pub fn json_object<I, K>(pairs: I) -> Value
where
    I: IntoIterator<Item = (K, Value)>,
    K: Into<String>,
{
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert(k.into(), v);
    }
    Value::Object(map)
}

/// Writes pretty JSON followed by a newline.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes a header row and numeric rows; every cell is formatted with [`fmt_f64`].
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `t,value` CSV.
pub fn write_curve_csv(path: &Path, name: &str, curve: &DeterministicCurve) -> Result<()> {
    let grid = curve.grid();
    write_csv(
        path,
        &["t", name],
        grid.points().zip(curve.values()).map(|(t, &v)| vec![t, v]),
    )
}

/// `t,z_star,a_star`.
pub fn write_policy_csv(path: &Path, policy: &PolicyPair) -> Result<()> {
    let grid = policy.z_star.grid();
    write_csv(
        path,
        &["t", "z_star", "a_star"],
        grid.points()
            .enumerate()
            .map(|(k, t)| vec![t, policy.z_star.values()[k], policy.a_star.values()[k]]),
    )
}

/// `t,f,g,variance`.
pub fn write_moments_csv(path: &Path, moments: &MomentCurves) -> Result<()> {
    let grid = moments.grid();
    let var = moments.variance();
    write_csv(
        path,
        &["t", "f", "g", "variance"],
        grid.points()
            .enumerate()
            .map(|(k, t)| vec![t, moments.f.values()[k], moments.g.values()[k], var.values()[k]]),
    )
}

/// `{delta, mean, variance}`.
pub fn contract_json(contract: &ContractSpec) -> Value {
    json_object([
        ("delta", json_f64(contract.delta)),
        ("mean", json_f64(contract.law.mean)),
        ("variance", json_f64(contract.law.variance)),
    ])
}
