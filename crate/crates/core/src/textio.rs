//! Plain-text numeric formats shared by matrix, dataset and checkpoint files.
//!
//! Values are written with `{:e}`, which is the shortest representation that
//! parses back to the identical `f64`, so every file round-trips bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn push_row(out: &mut String, row: ArrayView1<'_, f64>) {
    let mut first = true;
    for v in row.iter() {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:e}").unwrap();
    }
    out.push('\n');
}

pub(crate) fn push_matrix(out: &mut String, m: ArrayView2<'_, f64>) {
    for row in m.rows() {
        push_row(out, row);
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Line cursor that skips blank lines and reports 1-based line numbers.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.last,
            msg: msg.into(),
        }
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok(trimmed);
            }
        }
        Err(Error::Parse {
            line: self.last + 1,
            msg: "unexpected end of file".into(),
        })
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        match self.next_line() {
            Ok(_) => Err(self.err("trailing content")),
            Err(_) => Ok(()),
        }
    }

    pub(crate) fn usizes(&mut self, count: usize) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("bad integer: {e}")))?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} integers, found {}", vals.len())));
        }
        Ok(vals)
    }

    pub(crate) fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.err(format!("bad number: {e}")))?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    pub(crate) fn keyword(&mut self, word: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != word {
            return Err(self.err(format!("expected `{word}`, found `{line}`")));
        }
        Ok(())
    }

    pub(crate) fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.floats(cols)?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("row-major shape"))
    }
}
