//! CSV inputs: comma-separated numbers on one or more lines.

use std::path::Path;

use dash_core::circuit::Circuit;
use dash_core::crt::QuantParams;

use crate::error::{CliError, CliResult};

/// An input vector as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum InputValues {
    /// Pre-quantization reals, scaled by the circuit's constant.
    Reals(Vec<f64>),
    /// Already-quantized integers, used as is.
    Integers(Vec<i128>),
}

impl InputValues {
    pub fn len(&self) -> usize {
        match self {
            InputValues::Reals(v) => v.len(),
            InputValues::Integers(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Integer inputs for `circuit`.
    pub fn quantize(&self, circuit: &Circuit) -> CliResult<Vec<i128>> {
        let n = circuit.input_len();
        if self.len() != n {
            return Err(CliError::data(format!(
                "input has {} values, model expects {n}",
                self.len()
            )));
        }
        match self {
            InputValues::Integers(v) => Ok(v.clone()),
            InputValues::Reals(v) => {
                let q = QuantParams::new(circuit.alpha, circuit.base.clone())?;
                Ok(v.iter().map(|&x| q.quantize(x)).collect::<Result<_, _>>()?)
            }
        }
    }
}

/// Rows of fields, blank lines skipped.
fn read_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let fields: Vec<String> = record.iter().filter(|f| !f.is_empty()).map(str::to_string).collect();
        if !fields.is_empty() {
            rows.push(fields);
        } else if record.len() > 1 {
            return Err(CliError::data(format!(
                "{}: line {} has only empty fields",
                path.display(),
                i + 1
            )));
        }
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, field: &str) -> CliResult<T> {
    field.parse().map_err(|_| {
        CliError::data(format!(
            "{}: line {}: '{field}' is not a number",
            path.display(),
            row + 1
        ))
    })
}

/// All numbers of the file, row after row.
pub fn read_input(path: &Path, integer: bool) -> CliResult<InputValues> {
    let rows = read_rows(path)?;
    let fields = rows.iter().enumerate().flat_map(|(i, r)| r.iter().map(move |f| (i, f)));
    Ok(if integer {
        InputValues::Integers(fields.map(|(i, f)| parse(path, i, f)).collect::<CliResult<_>>()?)
    } else {
        let v: Vec<f64> = fields.map(|(i, f)| parse(path, i, f)).collect::<CliResult<_>>()?;
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(CliError::data(format!("{}: non-finite value {x}", path.display())));
        }
        InputValues::Reals(v)
    })
}

/// One real-valued sample per row.
pub fn read_samples(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    read_rows(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().map(|f| parse(path, i, f)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_values_across_lines() {
        let f = file("1, 2,3\n\n-4,5\n");
        assert_eq!(
            read_input(f.path(), true).unwrap(),
            InputValues::Integers(vec![1, 2, 3, -4, 5])
        );
        assert_eq!(
            read_input(f.path(), false).unwrap(),
            InputValues::Reals(vec![1.0, 2.0, 3.0, -4.0, 5.0])
        );
        assert_eq!(
            read_samples(f.path()).unwrap(),
            vec![vec![1.0, 2.0, 3.0], vec![-4.0, 5.0]]
        );
    }

    #[test]
    fn rejects_bad_numbers() {
        let f = file("1,2\n0.5,x\n");
        let err = read_input(f.path(), false).unwrap_err();
        assert!(err.message.contains("line 2"), "{err}");
        assert!(read_input(file("1.5\n").path(), true).is_err());
        assert!(read_input(file("inf\n").path(), false).is_err());
    }
}
