//! Plain-text model checkpoints.
//!
//! ```text
//! replay-mlp 1
//! scalar f32
//! dropout 0.2
//! dims 64 128 128 2
//! dense.0.weight 8192 <values, row-major>
//! dense.0.bias 128 <values>
//! ...
//! bn.0.gamma 128 <values>
//! bn.0.beta 128 <values>
//! bn.0.running_mean 128 <values>
//! bn.0.running_var 128 <values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle at the same scalar type is exact.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::mlp::{BatchNorm, Dense, Mlp};

pub const MAGIC: &str = "replay-mlp";
pub const VERSION: u32 = 1;

fn push_line<T: Scalar>(out: &mut String, name: &str, values: &[T]) {
    write!(out, "{name} {}", values.len()).unwrap();
    for v in values {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

pub fn save<T: Scalar, W: Write>(model: &Mlp<T>, mut w: W) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "scalar {}", T::NAME).unwrap();
    writeln!(out, "dropout {}", model.dropout_rate()).unwrap();
    let dims: Vec<String> = model.layer_dims().iter().map(|d| d.to_string()).collect();
    writeln!(out, "dims {}", dims.join(" ")).unwrap();
    for (l, d) in model.dense.iter().enumerate() {
        push_line(&mut out, &format!("dense.{l}.weight"), d.weight.as_slice().unwrap());
        push_line(&mut out, &format!("dense.{l}.bias"), d.bias.as_slice().unwrap());
    }
    for (l, n) in model.norms.iter().enumerate() {
        push_line(&mut out, &format!("bn.{l}.gamma"), n.gamma.as_slice().unwrap());
        push_line(&mut out, &format!("bn.{l}.beta"), n.beta.as_slice().unwrap());
        push_line(&mut out, &format!("bn.{l}.running_mean"), n.running_mean.as_slice().unwrap());
        push_line(&mut out, &format!("bn.{l}.running_var"), n.running_var.as_slice().unwrap());
    }
    w.write_all(out.as_bytes())
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Checkpoint(format!("line {}: {e}", self.line_no))),
            None => Err(Error::Checkpoint(format!("unexpected end of file at line {}", self.line_no))),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Checkpoint(format!("line {}: expected `{key}`", self.line_no)));
        }
        Ok(parts.map(str::to_owned).collect())
    }

    fn values<T: Scalar>(&mut self, key: &str, expected: usize) -> Result<Vec<T>> {
        let parts = self.keyed(key)?;
        let line_no = self.line_no;
        let bad = |what: &str| Error::Checkpoint(format!("line {line_no}: {what}"));
        let (len, rest) = parts.split_first().ok_or_else(|| bad("missing length"))?;
        let len: usize = len.parse().map_err(|_| bad("bad length"))?;
        if len != expected || rest.len() != expected {
            return Err(bad(&format!("expected {expected} values")));
        }
        rest.iter()
            .map(|s| s.parse::<T>().map_err(|_| bad(&format!("bad value `{s}`"))))
            .collect()
    }
}

pub fn load<T: Scalar, R: BufRead>(reader: R) -> Result<Mlp<T>> {
    let mut lines = Lines {
        inner: reader.lines(),
        line_no: 0,
    };
    let header = lines.keyed(MAGIC)?;
    if header != [VERSION.to_string()] {
        return Err(Error::Checkpoint(format!("unsupported version {header:?}")));
    }
    lines.keyed("scalar")?;
    let dropout: f64 = lines
        .keyed("dropout")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("bad dropout".into()))?;
    let dims: Vec<usize> = lines
        .keyed("dims")?
        .iter()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Checkpoint("bad dims".into()))?;
    if dims.len() < 3 {
        return Err(Error::Checkpoint("need at least one hidden layer".into()));
    }
    let mut dense = Vec::new();
    for l in 0..dims.len() - 1 {
        let (i, o) = (dims[l], dims[l + 1]);
        let w = lines.values::<T>(&format!("dense.{l}.weight"), i * o)?;
        let b = lines.values::<T>(&format!("dense.{l}.bias"), o)?;
        dense.push(Dense {
            weight: Array2::from_shape_vec((i, o), w).expect("length checked"),
            bias: Array1::from(b),
        });
    }
    let mut norms = Vec::new();
    for (l, &w) in dims[1..dims.len() - 1].iter().enumerate() {
        let mut field = |name: &str| lines.values::<T>(&format!("bn.{l}.{name}"), w).map(Array1::from);
        norms.push(BatchNorm {
            gamma: field("gamma")?,
            beta: field("beta")?,
            running_mean: field("running_mean")?,
            running_var: field("running_var")?,
        });
    }
    Mlp::from_parts(dense, norms, dropout)
}
