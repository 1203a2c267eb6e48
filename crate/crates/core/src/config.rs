//! TOML model configuration: loading and serialization.
//!
//! ```toml
//! horizon = 1.0
//! gamma = 1.0
//!
//! [dims]
//! d = 1
//! p = 1
//!
//! [coeffs]
//! C = 1.0
//! R = -0.5
//! B = { t = [0.0, 1.0], v = [0.0, 2.0] }
//!
//! [terminal]
//! P = -0.5
//! ```
//!
//! A coefficient is a number (1x1 shapes), a flat array (vectors, or a single
//! row), a nested row-major array, or a `{ t, v }` table whose `v` entries are
//! any of the former. Omitted coefficients are zero.

use nalgebra::DMatrix;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{CoeffKey, Coefficient, Dims, LqModel};
use crate::scalar::{lit, to_f64, Real};

/// Parses and validates a model document.
pub fn load_model<T: Real>(text: &str) -> Result<LqModel<T>> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;

    let dims_tbl = doc
        .get("dims")
        .ok_or_else(|| Error::MissingKey("dims".into()))?
        .as_table()
        .ok_or_else(|| Error::Config("`dims` must be a table".into()))?;
    let dim = |k: &str| -> Result<usize> {
        let v = dims_tbl
            .get(k)
            .ok_or_else(|| Error::MissingKey(format!("dims.{k}")))?;
        v.as_integer()
            .filter(|&n| n > 0)
            .map(|n| n as usize)
            .ok_or_else(|| Error::Config(format!("dims.{k} must be a positive integer")))
    };
    let dims = Dims {
        d: dim("d")?,
        p: dim("p")?,
    };
    let horizon = number(&doc, "horizon")?;
    let gamma = number(&doc, "gamma")?;
    if let Some(k) = doc
        .keys()
        .find(|k| !["dims", "horizon", "gamma", "coeffs", "terminal"].contains(&k.as_str()))
    {
        return Err(Error::Config(format!("unknown top-level key `{k}`")));
    }

    let mut model = LqModel::<T>::zeros(dims, lit(horizon), lit(gamma))?;

    if let Some(c) = doc.get("coeffs") {
        let c = c
            .as_table()
            .ok_or_else(|| Error::Config("`coeffs` must be a table".into()))?;
        for (name, value) in c {
            let key = CoeffKey::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown coefficient `{name}`")))?;
            let coeff = parse_coefficient::<T>(name, value, key.shape(dims))?;
            model.set(key, coeff)?;
        }
    }

    let zero = DMatrix::<T>::zeros(dims.d, dims.d);
    let (mut p, mut p_bar) = (zero.clone(), zero);
    if let Some(term) = doc.get("terminal") {
        let term = term
            .as_table()
            .ok_or_else(|| Error::Config("`terminal` must be a table".into()))?;
        for (name, value) in term {
            let m = parse_matrix::<T>(name, value, (dims.d, dims.d))?;
            match name.as_str() {
                "P" => p = m,
                "Pbar" => p_bar = m,
                _ => return Err(Error::Config(format!("unknown terminal key `{name}`"))),
            }
        }
    }
    model.set_terminal(p, p_bar)?;
    Ok(model)
}

/// Serializes a model in the format accepted by [`load_model`].
pub fn serialize_model<T: Real>(model: &LqModel<T>) -> String {
    let dims = model.dims();
    let mut doc = Table::new();
    doc.insert("horizon".into(), Value::Float(to_f64(model.horizon())));
    doc.insert("gamma".into(), Value::Float(to_f64(model.gamma())));
    let mut dt = Table::new();
    dt.insert("d".into(), Value::Integer(dims.d as i64));
    dt.insert("p".into(), Value::Integer(dims.p as i64));
    doc.insert("dims".into(), Value::Table(dt));

    let mut coeffs = Table::new();
    for key in CoeffKey::ALL {
        let v = match model.coefficient(key) {
            Coefficient::Constant(m) => matrix_value(m),
            Coefficient::Table { times, values } => {
                let mut t = Table::new();
                t.insert(
                    "t".into(),
                    Value::Array(times.iter().map(|&s| Value::Float(to_f64(s))).collect()),
                );
                t.insert(
                    "v".into(),
                    Value::Array(values.iter().map(matrix_value).collect()),
                );
                Value::Table(t)
            }
        };
        coeffs.insert(key.name().into(), v);
    }
    doc.insert("coeffs".into(), Value::Table(coeffs));

    let mut term = Table::new();
    term.insert("P".into(), matrix_value(model.terminal_p()));
    term.insert("Pbar".into(), matrix_value(model.terminal_p_bar()));
    doc.insert("terminal".into(), Value::Table(term));
    toml::to_string(&doc).expect("TOML tables always serialize")
}

fn matrix_value<T: Real>(m: &DMatrix<T>) -> Value {
    let rows = (0..m.nrows())
        .map(|i| {
            Value::Array(
                (0..m.ncols())
                    .map(|j| Value::Float(to_f64(m[(i, j)])))
                    .collect(),
            )
        })
        .collect();
    Value::Array(rows)
}

fn number(doc: &Table, key: &str) -> Result<f64> {
    let v = doc.get(key).ok_or_else(|| Error::MissingKey(key.into()))?;
    as_f64(v).ok_or_else(|| Error::Config(format!("`{key}` must be a number")))
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_coefficient<T: Real>(
    name: &str,
    value: &Value,
    shape: (usize, usize),
) -> Result<Coefficient<T>> {
    match value {
        Value::Table(tbl) => {
            let times = tbl
                .get("t")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::MissingKey(format!("coeffs.{name}.t")))?;
            let vals = tbl
                .get("v")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::MissingKey(format!("coeffs.{name}.v")))?;
            let times = times
                .iter()
                .map(|x| {
                    as_f64(x)
                        .map(lit::<T>)
                        .ok_or_else(|| Error::Config(format!("coeffs.{name}.t must be numbers")))
                })
                .collect::<Result<Vec<_>>>()?;
            let vals = vals
                .iter()
                .map(|x| parse_matrix::<T>(name, x, shape))
                .collect::<Result<Vec<_>>>()?;
            Coefficient::table(times, vals)
                .map_err(|e| Error::Config(format!("coeffs.{name}: {e}")))
        }
        other => Ok(Coefficient::Constant(parse_matrix(name, other, shape)?)),
    }
}

fn parse_matrix<T: Real>(name: &str, value: &Value, shape: (usize, usize)) -> Result<DMatrix<T>> {
    let (rows, cols) = shape;
    let mismatch = |found: String| Error::Dimension {
        key: name.into(),
        expected: format!("{rows}x{cols}"),
        found,
    };
    let entry = |v: &Value| -> Result<f64> {
        let x =
            as_f64(v).ok_or_else(|| Error::Config(format!("`{name}` entries must be numbers")))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NonFinite(name.into()))
        }
    };
    match value {
        Value::Float(_) | Value::Integer(_) => {
            if shape != (1, 1) {
                return Err(mismatch("scalar".into()));
            }
            Ok(DMatrix::from_element(1, 1, lit(entry(value)?)))
        }
        Value::Array(items) if items.iter().all(|v| !v.is_array()) => {
            let flat = items.iter().map(entry).collect::<Result<Vec<_>>>()?;
            let ok = (cols == 1 && flat.len() == rows) || (rows == 1 && flat.len() == cols);
            if !ok {
                return Err(mismatch(format!("flat array of length {}", flat.len())));
            }
            Ok(DMatrix::from_iterator(
                rows,
                cols,
                flat.into_iter().map(lit),
            ))
        }
        Value::Array(items) => {
            let mut data = Vec::with_capacity(rows * cols);
            let mut found_cols = None;
            for row in items {
                let row = row
                    .as_array()
                    .ok_or_else(|| Error::Config(format!("`{name}` mixes rows and numbers")))?;
                if *found_cols.get_or_insert(row.len()) != row.len() {
                    return Err(Error::Config(format!("`{name}` has ragged rows")));
                }
                for v in row {
                    data.push(entry(v)?);
                }
            }
            let found = (items.len(), found_cols.unwrap_or(0));
            if found != shape {
                return Err(mismatch(format!("{}x{}", found.0, found.1)));
            }
            Ok(DMatrix::from_row_iterator(
                rows,
                cols,
                data.into_iter().map(lit),
            ))
        }
        _ => Err(Error::Config(format!(
            "`{name}` must be a number, array or table"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M1: &str = r#"
horizon = 1.0
gamma = 1.0
[dims]
d = 1
p = 1
[coeffs]
C = 1.0
R = -0.5
[terminal]
P = -0.5
"#;

    #[test]
    fn loads_m1() {
        let m = load_model::<f64>(M1).unwrap();
        assert_eq!(m.dims(), Dims { d: 1, p: 1 });
        let s = m.coefficients_at(0.0).unwrap();
        assert_eq!(s.c[(0, 0)], 1.0);
        assert_eq!(s.r[(0, 0)], -0.5);
        assert_eq!(m.terminal_p()[(0, 0)], -0.5);
    }

    #[test]
    fn r_with_wrong_shape() {
        let doc = M1.replace("R = -0.5", "R = [[-0.5], [0.0]]");
        assert!(matches!(
            load_model::<f64>(&doc),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn missing_gamma() {
        let doc = M1.replace("gamma = 1.0", "");
        assert_eq!(
            load_model::<f64>(&doc).unwrap_err(),
            Error::MissingKey("gamma".into())
        );
    }

    #[test]
    fn non_finite_entry() {
        let doc = M1.replace("C = 1.0", "C = nan");
        assert!(matches!(load_model::<f64>(&doc), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tables_and_matrices() {
        let doc = r#"
horizon = 2.0
gamma = 0.5
[dims]
d = 2
p = 1
[coeffs]
b0 = [1.0, 2.0]
B = { t = [0.0, 2.0], v = [[[0.0, 1.0], [0.0, 0.0]], [[2.0, 1.0], [0.0, 0.0]]] }
C = [[1.0], [0.5]]
M = [[-1.0, 0.2], [0.2, -1.0]]
R = -1
"#;
        let m = load_model::<f64>(doc).unwrap();
        let s = m.coefficients_at(1.0).unwrap();
        assert_eq!(s.b[(0, 0)], 1.0);
        assert_eq!(s.b[(0, 1)], 1.0);
        assert_eq!(s.b0[1], 2.0);
        assert_eq!(s.c[(1, 0)], 0.5);
        let back: LqModel<f64> = load_model(&serialize_model(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn asymmetric_rejected() {
        let doc = M1
            .replace("[dims]\nd = 1\np = 1", "[dims]\nd = 2\np = 1")
            .replace("C = 1.0", "C = [1.0, 0.0]\nM = [[-1.0, 0.5], [0.0, -1.0]]")
            .replace("P = -0.5", "");
        assert!(matches!(
            load_model::<f64>(&doc),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
