use std::collections::HashMap;

use serde_json::Value as Json;
use thiserror::Error;

use super::{Matrix, Value};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("data must be a JSON object mapping argument names to values")]
    NotAnObject,
    #[error("argument `{name}`: {message}")]
    Invalid { name: String, message: String },
}

/// Reads model arguments from JSON: numbers, booleans, arrays (vectors),
/// arrays of arrays (row-major matrices) and the string `"missing"`.
pub fn parse_data_json(text: &str) -> Result<HashMap<String, Value>, DataError> {
    let Json::Object(map) = serde_json::from_str::<Json>(text)? else {
        return Err(DataError::NotAnObject);
    };
    map.into_iter()
        .map(|(name, v)| match convert(&v) {
            Ok(value) => Ok((name, value)),
            Err(message) => Err(DataError::Invalid { name, message }),
        })
        .collect()
}

fn number(v: &Json) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("expected a number, found {v}"))
}

fn convert(v: &Json) -> Result<Value, String> {
    match v {
        Json::Bool(b) => Ok(Value::Bool(*b)),
        Json::Number(n) => Ok(match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Real(n.as_f64().ok_or("number out of range")?),
        }),
        Json::String(s) if s == "missing" => Ok(Value::Missing),
        Json::Array(items) if items.iter().any(Json::is_array) => {
            let rows = items
                .iter()
                .map(|row| match row {
                    Json::Array(r) => r.iter().map(number).collect::<Result<Vec<f64>, String>>(),
                    other => Err(format!("matrix rows must be arrays, found {other}")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Matrix::from_rows(&rows)
                .map(Value::RealMatrix)
                .ok_or_else(|| "matrix rows have different lengths".to_string())
        }
        Json::Array(items) => {
            if !items.is_empty() && items.iter().all(|x| x.as_i64().is_some()) {
                Ok(Value::IntVector(items.iter().map(|x| x.as_i64().unwrap()).collect()))
            } else {
                Ok(Value::RealVector(items.iter().map(number).collect::<Result<_, _>>()?))
            }
        }
        other => Err(format!("unsupported value {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_each_kind() {
        let d = parse_data_json(
            r#"{"a": 1, "b": 2.5, "c": [1, 2], "d": [1, 2.5], "X": [[1, 2], [3, 4]], "y": "missing", "f": true}"#,
        )
        .unwrap();
        assert_eq!(d["a"], Value::Int(1));
        assert_eq!(d["b"], Value::Real(2.5));
        assert_eq!(d["c"], Value::IntVector(vec![1, 2]));
        assert_eq!(d["d"], Value::RealVector(vec![1.0, 2.5]));
        assert_eq!(d["X"], Value::RealMatrix(Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()));
        assert_eq!(d["y"], Value::Missing);
        assert_eq!(d["f"], Value::Bool(true));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_data_json("[1]"), Err(DataError::NotAnObject)));
        assert!(parse_data_json(r#"{"X": [[1, 2], [3]]}"#).is_err());
        assert!(parse_data_json(r#"{"s": "other"}"#).is_err());
        assert!(parse_data_json("{").is_err());
    }
}
