//! One CSV row per sample: `id`, then the row-major input entries named
//! `in_r{i}_c{j}`, then (for labelled data) the target entries named
//! `out_r{i}_c{j}`. Indices are zero-based.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, MatrixSample, Shapes, NEGATIVE_CLIP_TOL};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSchema {
    pub shapes: Shapes,
    /// False for unlabelled (inference-only) files.
    pub has_targets: bool,
}

impl DatasetSchema {
    pub fn new(shapes: Shapes, has_targets: bool) -> Self {
        Self {
            shapes,
            has_targets,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let s = &self.shapes;
        let mut h = vec!["id".to_string()];
        h.extend(cells("in", s.in_rows, s.in_cols));
        if self.has_targets {
            h.extend(cells("out", s.out_rows, s.out_cols));
        }
        h
    }

    /// Recovers shapes from a header. An unlabelled header leaves the
    /// output shape at 1x1.
    pub fn from_header(header: &[String]) -> Result<Self> {
        if header.first().map(String::as_str) != Some("id") {
            return Err(Error::Schema(format!(
                "first column must be `id`, found `{}`",
                header.first().map(String::as_str).unwrap_or("")
            )));
        }
        let extent = |prefix: &str| -> Result<Option<(usize, usize)>> {
            let mut dims: Option<(usize, usize)> = None;
            for name in header.iter().filter(|h| h.starts_with(prefix)) {
                let (r, c) = parse_cell(name, prefix)
                    .ok_or_else(|| Error::Schema(format!("unrecognised column `{name}`")))?;
                let d = dims.get_or_insert((0, 0));
                d.0 = d.0.max(r + 1);
                d.1 = d.1.max(c + 1);
            }
            Ok(dims)
        };
        let (in_rows, in_cols) =
            extent("in_")?.ok_or_else(|| Error::Schema("no `in_r*_c*` columns".into()))?;
        let out = extent("out_")?;
        let (out_rows, out_cols) = out.unwrap_or((1, 1));
        let schema = Self::new(
            Shapes::new(in_rows, in_cols, out_rows, out_cols)?,
            out.is_some(),
        );
        schema.check_header(header)?;
        Ok(schema)
    }

    fn check_header(&self, header: &[String]) -> Result<()> {
        let expected = self.header();
        for (k, name) in expected.iter().enumerate() {
            match header.get(k) {
                Some(found) if found == name => {}
                Some(found) => {
                    return Err(Error::Schema(format!(
                        "column {} is `{found}`, expected `{name}`",
                        k + 1
                    )))
                }
                None => return Err(Error::Schema(format!("missing column `{name}`"))),
            }
        }
        if let Some(extra) = header.get(expected.len()) {
            return Err(Error::Schema(format!("unexpected column `{extra}`")));
        }
        Ok(())
    }
}

fn cells(prefix: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (0..rows).flat_map(move |i| (0..cols).map(move |j| format!("{prefix}_r{i}_c{j}")))
}

fn parse_cell(name: &str, prefix: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix(prefix)?.strip_prefix('r')?;
    let (r, c) = rest.split_once("_c")?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn read_header(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a dataset and checks its header against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let header = read_header(&mut reader, path)?;
    schema.check_header(&header)?;
    read_rows(reader, path, schema, &header)
}

/// Reads a dataset whose shapes are taken from its header.
pub fn load_csv_inferred(path: impl AsRef<Path>) -> Result<(Dataset, DatasetSchema)> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let header = read_header(&mut reader, path)?;
    let schema = DatasetSchema::from_header(&header)?;
    let data = read_rows(reader, path, &schema, &header)?;
    Ok((data, schema))
}

fn read_rows(
    mut reader: csv::Reader<File>,
    path: &Path,
    schema: &DatasetSchema,
    header: &[String],
) -> Result<Dataset> {
    let s = schema.shapes;
    let n_in = s.input_len();
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        // header is row 1
        let row = k + 2;
        let record = record.map_err(|e| match csv_error(path, e) {
            Error::Schema(m) => Error::Parse {
                row,
                column: String::new(),
                message: m,
            },
            other => other,
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(record.len() - 1);
        for (c, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[c].clone(),
                    message: format!("`{field}` is not finite"),
                });
            }
            if c > n_in && v < 0.0 {
                if v < -NEGATIVE_CLIP_TOL {
                    return Err(Error::NegativeTarget {
                        location: format!("row {row}, column `{}`", header[c]),
                        value: v,
                    });
                }
                values.push(0.0);
                continue;
            }
            values.push(v);
        }
        let target_values = values.split_off(n_in);
        let input = Matrix::from_vec(s.in_rows, s.in_cols, values)?;
        let target = if schema.has_targets {
            Some(Matrix::from_vec(s.out_rows, s.out_cols, target_values)?)
        } else {
            None
        };
        out.push(MatrixSample::new(&record[0], input, target));
    }
    Ok(out)
}

/// Writes a dataset. Labelled iff every sample has a target.
pub fn save_csv(path: impl AsRef<Path>, dataset: &[MatrixSample]) -> Result<DatasetSchema> {
    let path = path.as_ref();
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let has_targets = dataset.iter().all(|s| s.target.is_some());
    let (out_rows, out_cols) = first.target.as_ref().map_or((1, 1), Matrix::shape);
    let shapes = Shapes::new(first.input.rows(), first.input.cols(), out_rows, out_cols)?;
    shapes.check(dataset)?;
    let schema = DatasetSchema::new(shapes, has_targets);

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(schema.header()).map_err(io)?;
    for s in dataset {
        let mut rec = vec![s.id.clone()];
        rec.extend(s.input.as_slice().iter().map(f64::to_string));
        if has_targets {
            rec.extend(s.target.as_ref().unwrap().as_slice().iter().map(f64::to_string));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(schema)
}
