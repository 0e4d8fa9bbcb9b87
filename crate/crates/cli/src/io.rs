//! Matrix and label files.
//!
//! Two formats are accepted, chosen by extension:
//!
//! * `.npy`: NumPy format version 1.0, C order, dtype `f4` or `f8` for
//!   matrices (integer dtypes are also accepted for labels). The array is
//!   taken as stored, so a `d x N` feature matrix has one sample per column.
//! * `.csv`: one sample per row, comma separated, with an optional single
//!   header row. The file is transposed on read so samples become columns.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DMatrix;
use npyz::{DType, NpyFile, Order, WriterBuilder};

use crate::error::{CliError, CliResult};

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

enum Format {
    Npy,
    Csv,
}

fn format_of(path: &Path) -> CliResult<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("npy") => Ok(Format::Npy),
        Some(e) if e.eq_ignore_ascii_case("csv") => Ok(Format::Csv),
        _ => Err(CliError::parse(path, "expected a .npy or .csv file")),
    }
}

/// Shape and values (row-major) of an npy array.
struct NpyArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    integral: bool,
}

fn read_npy(path: &Path) -> CliResult<NpyArray> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() < 8 || &bytes[..6] != NPY_MAGIC {
        return Err(CliError::parse(path, "missing npy magic bytes"));
    }
    if (bytes[6], bytes[7]) != (1, 0) {
        return Err(CliError::parse(
            path,
            format!("unsupported npy version {}.{}", bytes[6], bytes[7]),
        ));
    }
    let file = NpyFile::new(&bytes[..]).map_err(|e| CliError::parse(path, e))?;
    if file.order() == Order::Fortran {
        return Err(CliError::parse(
            path,
            "fortran_order arrays are not supported",
        ));
    }
    let shape: Vec<usize> = file.shape().iter().map(|&s| s as usize).collect();
    let descr = match file.dtype() {
        DType::Plain(ts) => ts.to_string(),
        _ => return Err(CliError::parse(path, "structured dtypes are not supported")),
    };
    let bad = |e: std::io::Error| CliError::parse(path, e);
    let (values, integral) = match &descr[1..] {
        "f8" => (file.into_vec::<f64>().map_err(bad)?, false),
        "f4" => (widen(file.into_vec::<f32>().map_err(bad)?), false),
        "i8" => (widen(file.into_vec::<i64>().map_err(bad)?), true),
        "i4" => (widen(file.into_vec::<i32>().map_err(bad)?), true),
        "i2" => (widen(file.into_vec::<i16>().map_err(bad)?), true),
        "i1" => (widen(file.into_vec::<i8>().map_err(bad)?), true),
        "u8" => (widen(file.into_vec::<u64>().map_err(bad)?), true),
        "u4" => (widen(file.into_vec::<u32>().map_err(bad)?), true),
        "u2" => (widen(file.into_vec::<u16>().map_err(bad)?), true),
        "u1" => (widen(file.into_vec::<u8>().map_err(bad)?), true),
        _ => return Err(CliError::parse(path, format!("unsupported dtype {descr}"))),
    };
    Ok(NpyArray {
        shape,
        values,
        integral,
    })
}

fn widen<T: num_like::AsF64>(v: Vec<T>) -> Vec<f64> {
    v.into_iter().map(|x| x.as_f64()).collect()
}

mod num_like {
    pub trait AsF64: Copy {
        fn as_f64(self) -> f64;
    }
    macro_rules! impl_as_f64 {
        ($($t:ty),*) => {$(
            impl AsF64 for $t {
                fn as_f64(self) -> f64 {
                    self as f64
                }
            }
        )*};
    }
    impl_as_f64!(f32, i64, i32, i16, i8, u64, u32, u16, u8);
}

/// Rows of a rectangular CSV file of finite reals, skipping a header row
/// when the first row does not parse as numbers.
fn read_csv_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::parse(path, e))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::parse(path, e))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                    return Err(CliError::parse(
                        path,
                        format!("row {}, column {}: non-finite value", i + 1, j + 1),
                    ));
                }
                rows.push(row);
            }
            Err(_) if i == 0 => {}
            Err(e) => {
                return Err(CliError::parse(path, format!("row {}: {e}", i + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::parse(path, "no data rows"));
    }
    Ok(rows)
}

/// Reads a real matrix; see the module docs for orientation.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    match format_of(path)? {
        Format::Npy => {
            let a = read_npy(path)?;
            if a.shape.len() != 2 {
                return Err(CliError::parse(
                    path,
                    format!("expected a 2-D array, got shape {:?}", a.shape),
                ));
            }
            if a.integral {
                return Err(CliError::parse(path, "expected a floating-point dtype"));
            }
            if let Some(i) = a.values.iter().position(|x| !x.is_finite()) {
                return Err(CliError::parse(
                    path,
                    format!("non-finite value at flat index {i}"),
                ));
            }
            Ok(DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.values))
        }
        Format::Csv => {
            let rows = read_csv_rows(path)?;
            let width = rows[0].len();
            let mut m = DMatrix::zeros(width, rows.len());
            for (j, row) in rows.iter().enumerate() {
                for (i, &x) in row.iter().enumerate() {
                    m[(i, j)] = x;
                }
            }
            Ok(m)
        }
    }
}

/// Reads class labels: a 1-D npy array (or a 2-D one with a unit
/// dimension), or a single-column CSV.
pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let values = match format_of(path)? {
        Format::Npy => {
            let a = read_npy(path)?;
            let vector = match a.shape.as_slice() {
                [_] => true,
                [r, c] => *r == 1 || *c == 1,
                _ => false,
            };
            if !vector {
                return Err(CliError::parse(
                    path,
                    format!("expected a label vector, got shape {:?}", a.shape),
                ));
            }
            a.values
        }
        Format::Csv => {
            let rows = read_csv_rows(path)?;
            if rows[0].len() != 1 {
                return Err(CliError::parse(path, "expected a single label column"));
            }
            rows.into_iter().map(|r| r[0]).collect()
        }
    };
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(CliError::parse(
                    path,
                    format!("label {i} is not a class index: {x}"),
                ))
            }
        })
        .collect()
}

/// Writes `m` as a C-order `f8` npy file of the same shape.
pub fn write_npy(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut writer = npyz::WriteOptions::<f64>::new()
        .default_dtype()
        .shape(&[m.nrows() as u64, m.ncols() as u64])
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(|e| CliError::io(path, e))?;
    writer
        .extend(m.transpose().iter().copied())
        .map_err(|e| CliError::io(path, e))?;
    writer.finish().map_err(|e| CliError::io(path, e))
}
