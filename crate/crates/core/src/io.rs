//! Headerless CSV files for matrices, masks and rotations.
//!
//! Values are written with 17 significant digits so every `f64` round-trips
//! exactly; lines end with LF.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::{Rotation3, RotationSequence};
use crate::seqdata::{CoordinateTag, MeasurementMatrix, ShapeSequence, VisibilityMask};

/// Tolerance applied when validating rotations read from disk.
pub const ROTATION_FILE_TOL: f64 = 1e-6;

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(path: &Path, row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        col,
        msg: msg.into(),
    }
}

/// Reads a rectangular numeric CSV. Rows and columns in errors are 1-based.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, r + 1, c + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, r + 1, c + 1, "non-finite value"));
            }
            vals.push(v);
        }
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(parse_err(
                    path,
                    r + 1,
                    vals.len().min(first.len()) + 1,
                    format!("expected {} columns, found {}", first.len(), vals.len()),
                ));
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, 1, "empty file"));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, col) = match e.position() {
        Some(p) => (p.line() as usize, 1),
        None => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(path, row, col, format!("{other:?}")),
    }
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        out.write_all(line.join(",").as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<MeasurementMatrix> {
    let m = read_matrix(path)?;
    if m.nrows() % 2 != 0 {
        return Err(parse_err(
            path,
            m.nrows(),
            1,
            format!("measurement file needs an even row count, found {}", m.nrows()),
        ));
    }
    MeasurementMatrix::new(m)
}

pub fn write_measurements(path: &Path, w: &MeasurementMatrix) -> Result<()> {
    write_matrix(path, &w.w)
}

pub fn read_shapes(path: &Path, tag: CoordinateTag) -> Result<ShapeSequence> {
    let m = read_matrix(path)?;
    if m.nrows() % 3 != 0 {
        return Err(parse_err(
            path,
            m.nrows(),
            1,
            format!("shape file needs a row count divisible by 3, found {}", m.nrows()),
        ));
    }
    ShapeSequence::new(m, tag)
}

pub fn write_shapes(path: &Path, s: &ShapeSequence) -> Result<()> {
    write_matrix(path, &s.s)
}

pub fn read_mask(path: &Path) -> Result<VisibilityMask> {
    let m = read_matrix(path)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(parse_err(path, i + 1, j + 1, "mask entries must be 0 or 1"));
            }
        }
    }
    VisibilityMask::new(m.map(|v| v == 1.0))
}

pub fn write_mask(path: &Path, mask: &VisibilityMask) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in mask.o.row_iter() {
        let line: Vec<&str> = row.iter().map(|&v| if v { "1" } else { "0" }).collect();
        out.write_all(line.join(",").as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads stacked 3x3 rotations (`3F x 3`).
pub fn read_rotations(path: &Path) -> Result<RotationSequence> {
    let m = read_matrix(path)?;
    if m.ncols() != 3 || m.nrows() % 3 != 0 {
        return Err(parse_err(
            path,
            1,
            1,
            format!("rotation file must be 3F x 3, found {}x{}", m.nrows(), m.ncols()),
        ));
    }
    let mut rots = Vec::with_capacity(m.nrows() / 3);
    for i in 0..m.nrows() / 3 {
        let block: Matrix3<f64> = m.fixed_view::<3, 3>(3 * i, 0).into_owned();
        let r = Rotation3::try_from_matrix(block, ROTATION_FILE_TOL)
            .map_err(|e| parse_err(path, 3 * i + 1, 1, e.to_string()))?;
        // remove the rounding left by text formats
        rots.push(Rotation3::project(r.matrix()));
    }
    Ok(RotationSequence::new(rots))
}

pub fn write_rotations(path: &Path, rots: &RotationSequence) -> Result<()> {
    let mut m = DMatrix::zeros(3 * rots.len(), 3);
    for (i, r) in rots.rots.iter().enumerate() {
        m.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(r.matrix());
    }
    write_matrix(path, &m)
}

/// Writes a CSV with a header line followed by pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(header.join(",").as_bytes())?;
    out.write_all(b"\n")?;
    for row in rows {
        out.write_all(row.join(",").as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
