//! Matrix Market reader producing dense matrices.
//!
//! Handles the `coordinate` and `array` layouts with `real`, `integer` and
//! `pattern` fields, and the `general`, `symmetric` and `skew-symmetric`
//! qualifiers. Pattern entries are read as `1.0`, which is how the binary
//! SuiteSparse least-squares matrices are meant to be used.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense storage above this many entries is refused.
const MAX_DENSE_ENTRIES: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads a Matrix Market file into a dense matrix.
pub fn parse_matrix_market(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_market_str(&text)
}

/// Parses Matrix Market text. Unlisted coordinate entries are zero, duplicate
/// coordinates are summed and symmetric storage is expanded to the full matrix.
pub fn parse_matrix_market_str(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header_no, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let (layout, field, symmetry) = parse_header(header_no, header)?;

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (size_no, size_line) = body.next().ok_or_else(|| parse_err(header_no, "missing size line"))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| parse_err(size_no, format!("invalid size token `{tok}`")))
        })
        .collect::<Result<_>>()?;

    let (rows, cols) = match (layout, dims.as_slice()) {
        (Layout::Coordinate, [r, c, _]) | (Layout::Array, [r, c]) => (*r, *c),
        _ => return Err(parse_err(size_no, "malformed size line")),
    };
    let total = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_DENSE_ENTRIES)
        .ok_or_else(|| parse_err(size_no, format!("dimension overflow: {rows} x {cols}")))?;
    if symmetry != Symmetry::General && rows != cols {
        return Err(parse_err(size_no, "symmetric storage requires a square matrix"));
    }

    let mut m = DMatrix::<f64>::zeros(rows, cols);
    match layout {
        Layout::Coordinate => {
            let nnz = dims[2];
            let mut seen = 0usize;
            for (no, line) in body {
                if seen == nnz {
                    return Err(parse_err(no, "more entries than declared"));
                }
                let toks: Vec<&str> = line.split_whitespace().collect();
                let expected = if field == Field::Pattern { 2 } else { 3 };
                if toks.len() != expected {
                    return Err(parse_err(
                        no,
                        format!("expected {expected} tokens, found {}", toks.len()),
                    ));
                }
                let i = parse_index(no, toks[0], rows)?;
                let j = parse_index(no, toks[1], cols)?;
                let v = match field {
                    Field::Pattern => 1.0,
                    Field::Real => parse_value(no, toks[2])?,
                };
                m[(i, j)] += v;
                if i != j {
                    match symmetry {
                        Symmetry::General => {}
                        Symmetry::Symmetric => m[(j, i)] += v,
                        Symmetry::SkewSymmetric => m[(j, i)] -= v,
                    }
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    text.lines().count(),
                    format!("declared {nnz} entries, found {seen}"),
                ));
            }
        }
        Layout::Array => {
            // Column-major; symmetric variants list only the lower triangle.
            let mut slots = Vec::with_capacity(total);
            for j in 0..cols {
                let start = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::SkewSymmetric => j + 1,
                };
                slots.extend((start..rows).map(|i| (i, j)));
            }
            let mut it = slots.into_iter();
            let mut last_no = size_no;
            for (no, line) in body {
                last_no = no;
                for tok in line.split_whitespace() {
                    let (i, j) = it
                        .next()
                        .ok_or_else(|| parse_err(no, "more entries than the declared size"))?;
                    let v = parse_value(no, tok)?;
                    m[(i, j)] = v;
                    match symmetry {
                        Symmetry::General => {}
                        Symmetry::Symmetric => m[(j, i)] = v,
                        Symmetry::SkewSymmetric => m[(j, i)] = -v,
                    }
                }
            }
            if it.next().is_some() {
                return Err(parse_err(last_no, "fewer entries than the declared size"));
            }
        }
    }
    Ok(m)
}

fn parse_header(no: usize, header: &str) -> Result<(Layout, Field, Symmetry)> {
    let toks: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if toks.len() != 5 || toks[0] != "%%matrixmarket" || toks[1] != "matrix" {
        return Err(parse_err(no, "malformed header"));
    }
    let layout = match toks[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(parse_err(no, format!("unknown layout `{other}`"))),
    };
    let field = match toks[3].as_str() {
        "real" | "double" | "integer" => Field::Real,
        "pattern" if layout == Layout::Coordinate => Field::Pattern,
        other => return Err(parse_err(no, format!("unsupported field `{other}`"))),
    };
    let symmetry = match toks[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(parse_err(no, format!("unsupported symmetry `{other}`"))),
    };
    Ok((layout, field, symmetry))
}

fn parse_index(no: usize, tok: &str, bound: usize) -> Result<usize> {
    let k: usize = tok
        .parse()
        .map_err(|_| parse_err(no, format!("invalid index `{tok}`")))?;
    if k == 0 || k > bound {
        return Err(parse_err(no, format!("index {k} outside 1..={bound}")));
    }
    Ok(k - 1)
}

fn parse_value(no: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(no, format!("invalid value `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(no, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

/// Writes `m` in coordinate format, skipping exact zeros.
pub fn to_matrix_market_string(m: &DMatrix<f64>) -> String {
    let entries: Vec<(usize, usize, f64)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let v = m[(i, j)];
            (v != 0.0).then_some((i, j, v))
        })
        .collect();
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", m.nrows(), m.ncols(), entries.len()));
    for (i, j, v) in entries {
        out.push_str(&format!("{} {} {:e}\n", i + 1, j + 1, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_entries_fill_dense_matrix() {
        let text = "%%MatrixMarket matrix coordinate real general\n% comment\n3 2 2\n1 1 2.0\n3 2 -1.0\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn symmetric_coordinate_is_materialized() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4\n2 1 -1\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.0]));
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn pattern_entries_are_ones() {
        let text = "%%MatrixMarket matrix coordinate pattern general\n2 3 3\n1 1\n1 3\n2 2\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn array_layout_is_column_major() {
        let text = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn symmetric_array_reads_lower_triangle() {
        let text = "%%MatrixMarket matrix array real symmetric\n2 2\n1\n2\n3\n";
        let m = parse_matrix_market_str(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
    }

    #[test]
    fn rejects_complex_field() {
        let text = "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n";
        match parse_matrix_market_str(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("complex"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_line_of_bad_entry() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n3 1 1.0\n";
        match parse_matrix_market_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_header_and_overflow() {
        assert!(matches!(
            parse_matrix_market_str("%%MatrixMarket tensor coordinate real general\n1 1 0\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let huge = format!(
            "%%MatrixMarket matrix coordinate real general\n{} {} 0\n",
            usize::MAX,
            2
        );
        match parse_matrix_market_str(&huge) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("overflow"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entry_count_mismatch() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.0\n";
        assert!(matches!(parse_matrix_market_str(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn writer_round_trips() {
        let m = DMatrix::from_row_slice(2, 3, &[1.5, 0.0, -2.0, 0.0, 3.25, 0.0]);
        let back = parse_matrix_market_str(&to_matrix_market_string(&m)).unwrap();
        assert_eq!(m, back);
    }
}
