//! On-disk formats: draw matrices, JSON records, CSV tables, all written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::draws::{DrawSource, PosteriorDraws};
use crate::error::{Error, Result};
use crate::model::Dataset;

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_required(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a file, reporting absence as a missing artifact rather than an I/O error.
pub fn read_required(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

/// Serializes rows through the csv writer into an atomically written file.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Writes a header and numeric rows.
pub fn write_csv_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Header stored next to a raw draw matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsHeader {
    /// `[draws, params]`.
    pub shape: [usize; 2],
    /// Always `column-major`: all draws of parameter 0 first.
    pub order: String,
    pub dtype: String,
    /// Parameter blocks in storage order.
    pub layout: Vec<String>,
    pub source: DrawSource,
    pub seed: u64,
    pub chain_ids: Vec<usize>,
}

pub const DRAWS_ORDER: &str = "column-major";
pub const DRAWS_DTYPE: &str = "float64-le";

/// Writes `draws.bin` and `draws.json` into `dir`.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, layout: Vec<String>, seed: u64) -> Result<()> {
    let (s, p) = draws.draws.dim();
    let mut bytes = Vec::with_capacity(8 * s * p);
    for col in draws.draws.columns() {
        for v in col {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join("draws.bin"), &bytes)?;
    let header = DrawsHeader {
        shape: [s, p],
        order: DRAWS_ORDER.into(),
        dtype: DRAWS_DTYPE.into(),
        layout,
        source: draws.source,
        seed,
        chain_ids: draws.chain_ids.clone(),
    };
    write_json(&dir.join("draws.json"), &header)
}

pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws, DrawsHeader)> {
    let header: DrawsHeader = read_json(&dir.join("draws.json"))?;
    let bin = dir.join("draws.bin");
    let bytes = match fs::read(&bin) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingArtifact(bin)),
        Err(e) => return Err(e.into()),
    };
    let [s, p] = header.shape;
    if header.order != DRAWS_ORDER || header.dtype != DRAWS_DTYPE {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported draw encoding {} {}",
            bin.display(),
            header.order,
            header.dtype
        )));
    }
    if bytes.len() != 8 * s * p {
        return Err(Error::DimensionMismatch {
            layer: bin.display().to_string(),
            expected: 8 * s * p,
            got: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let matrix = Array2::from_shape_vec((p, s), values)
        .expect("length checked")
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    let mut draws = PosteriorDraws::new(matrix, header.source)?;
    if header.chain_ids.len() == s {
        draws.chain_ids = header.chain_ids.clone();
    }
    Ok((draws, header))
}

fn dataset_header(data: &Dataset) -> Vec<String> {
    let xs = (0..data.input_dim()).map(|j| format!("x{j}"));
    let ys = (0..data.output_dim()).map(|j| format!("y{j}"));
    xs.chain(ys).collect()
}

/// Inputs then outputs, one row per point, shortest round-trip decimal form.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let rows: Vec<Vec<f64>> = data
        .x
        .outer_iter()
        .zip(data.y.outer_iter())
        .map(|(x, y)| x.iter().chain(y.iter()).copied().collect())
        .collect();
    write_csv_table(path, &dataset_header(data), &rows)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let d_in = header.iter().filter(|h| h.starts_with('x')).count();
    let d_out = header.len() - d_in;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: n + 2,
                message: format!("not a number: `{field}`"),
            })?;
            if j < d_in {
                xs.push(v)
            } else {
                ys.push(v)
            }
        }
        n += 1;
    }
    Dataset::new(
        Array2::from_shape_vec((n, d_in), xs).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        Array2::from_shape_vec((n, d_out), ys).map_err(|e| Error::InvalidArgument(e.to_string()))?,
    )
}

/// Fixed locations of every artifact under an output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }
    pub fn spec(&self) -> PathBuf {
        self.root.join("spec.toml")
    }
    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("data").join("train.csv")
    }
    pub fn test(&self) -> PathBuf {
        self.root.join("data").join("test.csv")
    }
    pub fn transform(&self) -> PathBuf {
        self.root.join("data").join("transform.json")
    }
    pub fn cell_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("cells").join(run_id)
    }
    pub fn manifest(&self, run_id: &str) -> PathBuf {
        self.cell_dir(run_id).join("manifest.json")
    }
    pub fn timing(&self, run_id: &str) -> PathBuf {
        self.cell_dir(run_id).join("timing.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn predictions(&self, run_id: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{run_id}.csv"))
    }
    pub fn curves(&self, run_id: &str) -> PathBuf {
        self.root.join("curves").join(format!("{run_id}.csv"))
    }
    pub fn elpd(&self, run_id: &str) -> PathBuf {
        self.root.join("elpd").join(format!("{run_id}.json"))
    }
    pub fn elpd_table(&self) -> PathBuf {
        self.root.join("elpd.csv")
    }
    pub fn weights(&self) -> PathBuf {
        self.root.join("combine").join("weights.json")
    }
    pub fn combined_metrics(&self) -> PathBuf {
        self.root.join("combine").join("metrics.csv")
    }
    pub fn combined_predictions(&self, id: &str) -> PathBuf {
        self.root.join("combine").join("predictions").join(format!("{id}.csv"))
    }
}
