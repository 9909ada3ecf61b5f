//! Matrix CSV and grayscale PGM reading and writing.
//!
//! In matrix CSV files an empty field or the token `NA` marks a missing
//! entry. PGM images (P2 and P5, maxval up to 255) map to `[0, 1]`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, ObservationMask, Problem};

pub const MISSING_TOKEN: &str = "NA";

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads a partially observed matrix. Missing entries hold zero in the
/// returned problem. With `header`, the first line is skipped.
pub fn read_matrix_csv<R: Read>(input: R, header: bool) -> Result<Problem> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut data = Vec::new();
    let mut observed = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_error(
                    line,
                    format!("expected {c} fields, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() || field == MISSING_TOKEN {
                data.push(0.0);
                observed.push(false);
                continue;
            }
            let value: f64 = field.parse().map_err(|_| {
                parse_error(line, format!("field {}: cannot parse {field:?}", j + 1))
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    row: rows,
                    col: j,
                    value,
                });
            }
            data.push(value);
            observed.push(true);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape {
            rows,
            cols,
            reason: "no data rows".into(),
        });
    }
    let values = DenseMatrix::from_row_major(rows, cols, data)?;
    let mask = ObservationMask::from_fn(rows, cols, |i, j| observed[i * cols + j]);
    Problem::new(&values, mask)
}

/// Writes `m` with entries outside `mask` (if given) as `NA`. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_matrix_csv<W: Write>(
    m: &DenseMatrix,
    mask: Option<&ObservationMask>,
    output: W,
) -> Result<()> {
    if let Some(mask) = mask {
        if mask.shape() != m.shape() {
            return Err(Error::DimensionMismatch {
                expected: m.shape(),
                found: mask.shape(),
            });
        }
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_writer(output);
    let (rows, cols) = m.shape();
    for i in 0..rows {
        let row: Vec<String> = (0..cols)
            .map(|j| match mask {
                Some(mask) if !mask.contains(i, j) => MISSING_TOKEN.to_string(),
                _ => m[(i, j)].to_string(),
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> PgmCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                if b == b'\n' {
                    self.line += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_error(self.line, "unexpected end of image data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| parse_error(self.line, "non-ASCII header token"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let line = self.line;
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| parse_error(line, format!("bad {what} {tok:?}")))
    }
}

/// Decodes an 8-bit P2 or P5 image into `[0, 1]` intensities.
pub fn read_pgm(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut cur = PgmCursor {
        bytes,
        pos: 0,
        line: 1,
    };
    let magic = cur.token()?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => {
            return Err(parse_error(
                1,
                format!("unsupported magic {other:?}, expected P2 or P5"),
            ))
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidShape {
            rows: height,
            cols: width,
            reason: "empty image".into(),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_error(
            cur.line,
            format!("maxval {maxval} is not an 8-bit depth"),
        ));
    }
    let scale = maxval as f64;
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| parse_error(cur.line, format!("raster holds fewer than {n} bytes")))?;
        for &b in raster {
            if b as usize > maxval {
                return Err(parse_error(
                    cur.line,
                    format!("sample {b} exceeds maxval {maxval}"),
                ));
            }
            data.push(b as f64 / scale);
        }
    } else {
        for _ in 0..n {
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(parse_error(
                    cur.line,
                    format!("sample {v} exceeds maxval {maxval}"),
                ));
            }
            data.push(v as f64 / scale);
        }
    }
    DenseMatrix::from_row_major(height, width, data)
}

/// Encodes intensities as an 8-bit PGM after clamping to `[0, 1]`.
pub fn write_pgm<W: Write>(m: &DenseMatrix, binary: bool, mut output: W) -> Result<()> {
    let (rows, cols) = m.shape();
    let magic = if binary { "P5" } else { "P2" };
    write!(output, "{magic}\n{cols} {rows}\n255\n")?;
    let level = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    if binary {
        let raster: Vec<u8> = m.as_slice().iter().map(|&v| level(v)).collect();
        output.write_all(&raster)?;
    } else {
        for i in 0..rows {
            let line: Vec<String> = m.row(i).iter().map(|&v| level(v).to_string()).collect();
            writeln!(output, "{}", line.join(" "))?;
        }
    }
    output.flush()?;
    Ok(())
}
