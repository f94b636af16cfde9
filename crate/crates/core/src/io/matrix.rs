//! Plain-text matrices: a header line `F T`, then `F` lines of `T`
//! whitespace-separated values.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::io::IoError;
use crate::scalar::Scalar;

pub fn write_matrix<T: Scalar>(path: impl AsRef<Path>, m: &Tensor<T>) -> Result<(), IoError> {
    let path = path.as_ref();
    let [rows, cols] = match m.shape() {
        &[r, c] => [r, c],
        s => return Err(IoError::Data(format!("matrix dump needs a 2-D tensor, got {s:?}"))),
    };
    let mut text = format!("{rows} {cols}\n");
    for row in m.data().chunks(cols.max(1)).take(rows) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let _ = write!(text, "{v}");
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let bad = |what: &str| IoError::Data(format!("{}: {what}", path.display()));
    let mut tokens = text.split_whitespace();
    let mut dim = || -> Result<usize, IoError> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("malformed header"))
    };
    let (rows, cols) = (dim()?, dim()?);
    let data = tokens
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .and_then(T::from_f64)
                .ok_or_else(|| bad("non-numeric entry"))
        })
        .collect::<Result<Vec<T>, _>>()?;
    if data.len() != rows * cols {
        return Err(bad("entry count does not match header"));
    }
    Ok(Tensor::new([rows, cols], data)?)
}
