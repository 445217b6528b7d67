//! On-disk formats.
//!
//! * Cube (`HSB1`): magic `b"HSB1"`, then `n_bands`, `rows_px`, `cols_px` as
//!   little-endian `u32`, then `n_bands * rows_px * cols_px` little-endian
//!   `f32` values band by band, pixels in raster order within a band. An
//!   optional trailer holds a little-endian `u32` byte length followed by
//!   UTF-8 `key=value` lines (`wavelengths`, `band_names`, comma-separated).
//! * Spectra: CSV with header `band_index,Name1,Name2,...` and one line per
//!   band.
//! * Reports: pretty-printed JSON, with traces in a companion CSV
//!   `iteration,objective,fit,avg_excess_kurtosis`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;
use crate::model::{SolverConfig, SpectralCube, Termination, UnmixResult};
use crate::scalar::Scalar;
use crate::synth::SpectralLibrary;

pub const CUBE_MAGIC: &[u8; 4] = b"HSB1";

fn write_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::WriteFailure {
        path: path.display().to_string(),
        source,
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidData(format!("{what} = {v} does not fit in u32")))
}

fn check_list_items(items: &[String], what: &str) -> Result<()> {
    if let Some(bad) = items.iter().find(|s| s.contains([',', '\n', '\r'])) {
        return Err(Error::InvalidData(format!(
            "{what} entry {bad:?} contains a comma or line break"
        )));
    }
    Ok(())
}

/// Encodes a cube; values are stored as `f32`.
pub fn encode_cube<T: Scalar>(cube: &SpectralCube<T>) -> Result<Vec<u8>> {
    let (n, rows, cols) = (cube.n_bands(), cube.rows_px(), cube.cols_px());
    let mut out = Vec::with_capacity(16 + 4 * n * rows * cols);
    out.extend_from_slice(CUBE_MAGIC);
    for (v, what) in [(n, "n_bands"), (rows, "rows_px"), (cols, "cols_px")] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    for row in cube.data().rows() {
        for &v in row {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut meta = String::new();
    if let Some(w) = cube.wavelengths() {
        let items: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        meta.push_str(&format!("wavelengths={}\n", items.join(",")));
    }
    if let Some(names) = cube.band_names() {
        check_list_items(names, "band name")?;
        meta.push_str(&format!("band_names={}\n", names.join(",")));
    }
    if !meta.is_empty() {
        out.extend_from_slice(&to_u32(meta.len(), "metadata length")?.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        Error::TruncatedFile(format!(
            "{what} needs {len} bytes at offset {at}, file has {}",
            bytes.len()
        ))
    })?;
    let slice = &bytes[*at..end];
    *at = end;
    Ok(slice)
}

fn read_u32(bytes: &[u8], at: &mut usize, what: &str) -> Result<usize> {
    let b = take(bytes, at, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

pub fn decode_cube<T: Scalar>(bytes: &[u8]) -> Result<SpectralCube<T>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile("missing magic bytes".into()));
    }
    if &bytes[..4] != CUBE_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut at = 4;
    let n = read_u32(bytes, &mut at, "n_bands")?;
    let rows = read_u32(bytes, &mut at, "rows_px")?;
    let cols = read_u32(bytes, &mut at, "cols_px")?;
    let count = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::InvalidData("cube dimensions overflow".into()))?;
    let raw = take(bytes, &mut at, count * 4, "cube data")?;
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue(i));
        }
        values.push(T::of(v as f64));
    }
    let data = Array2::from_shape_vec((n, rows * cols), values).map_err(|e| Error::InvalidData(e.to_string()))?;
    let mut cube = SpectralCube::new(data, rows, cols)?;

    if at < bytes.len() {
        let len = read_u32(bytes, &mut at, "metadata length")?;
        let text = take(bytes, &mut at, len, "metadata")?;
        let text = std::str::from_utf8(text).map_err(|e| Error::InvalidData(format!("metadata is not UTF-8: {e}")))?;
        for (k, line) in text.lines().enumerate() {
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("expected key=value in metadata, got {line:?}"),
                });
            };
            match key {
                "wavelengths" => {
                    let w = value
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                                line: k + 1,
                                message: format!("wavelength {s:?}: {e}"),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    cube = cube.with_wavelengths(w)?;
                }
                "band_names" => {
                    cube = cube.with_band_names(value.split(',').map(str::to_string).collect())?;
                }
                other => log::warn!("ignoring unknown cube metadata key {other:?}"),
            }
        }
        if at != bytes.len() {
            return Err(Error::InvalidData(format!(
                "{} unexpected bytes after metadata",
                bytes.len() - at
            )));
        }
    }
    Ok(cube)
}

pub fn write_cube<T: Scalar>(cube: &SpectralCube<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cube(cube)?;
    std::fs::write(path, bytes).map_err(write_failure(path))
}

pub fn read_cube<T: Scalar>(path: impl AsRef<Path>) -> Result<SpectralCube<T>> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    decode_cube(&bytes)
}

/// Writes spectra as CSV; values use the shortest exact decimal form.
pub fn write_spectra(library: &SpectralLibrary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_list_items(library.names(), "spectrum name")?;
    let fail = |e| Error::WriteFailure {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(fail)?);
    let mut body = String::from("band_index");
    for name in library.names() {
        body.push(',');
        body.push_str(name);
    }
    body.push('\n');
    for (k, row) in library.spectra().rows().into_iter().enumerate() {
        body.push_str(&k.to_string());
        for v in row {
            body.push(',');
            body.push_str(&v.to_string());
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(fail)?;
    w.flush().map_err(fail)
}

pub fn read_spectra(path: impl AsRef<Path>) -> Result<SpectralLibrary> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.ok_or(Error::Parse {
        line: 1,
        message: "empty spectra file".into(),
    })?;
    let mut cols = header.trim_end().split(',');
    if cols.next() != Some("band_index") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with band_index".into(),
        });
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no spectra named in header".into(),
        });
    }
    let mut values = Vec::new();
    let mut bands = 0;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() + 1 {
            return Err(Error::RaggedRows {
                line: line_no,
                expected: names.len() + 1,
                found: fields.len(),
            });
        }
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("{f:?}: {e}"),
            })?;
            values.push(v);
        }
        bands += 1;
    }
    let spectra =
        Array2::from_shape_vec((bands, names.len()), values).map_err(|e| Error::InvalidData(e.to_string()))?;
    SpectralLibrary::new(names, spectra, None)
}

/// Run outcome without the per-iteration traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations_run: usize,
    pub termination: Termination,
    pub final_objective: f64,
    pub final_fit: f64,
    pub final_avg_excess_kurtosis: f64,
    pub initial_avg_excess_kurtosis: f64,
    pub floored_denominators: u64,
    pub clamped_inputs: usize,
}

impl RunSummary {
    pub fn from_result<T: Scalar>(result: &UnmixResult<T>) -> Self {
        let last = |v: &[T]| v.last().map(|x| x.as_f64()).unwrap_or(f64::NAN);
        Self {
            iterations_run: result.iterations_run,
            termination: result.termination,
            final_objective: last(&result.objective_trace),
            final_fit: last(&result.fit_trace),
            final_avg_excess_kurtosis: last(&result.kurtosis_trace),
            initial_avg_excess_kurtosis: result.kurtosis_trace.first().map(|x| x.as_f64()).unwrap_or(f64::NAN),
            floored_denominators: result.floored_denominators,
            clamped_inputs: result.clamped_inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Option<SolverConfig>,
    pub run: Option<RunSummary>,
    pub evaluation: Option<EvaluationReport>,
}

/// Per-iteration traces; entry 0 is the initial point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Traces {
    pub objective: Vec<f64>,
    pub fit: Vec<f64>,
    pub avg_excess_kurtosis: Vec<f64>,
}

impl Traces {
    pub fn from_result<T: Scalar>(result: &UnmixResult<T>) -> Self {
        let conv = |v: &[T]| v.iter().map(|x| x.as_f64()).collect();
        Self {
            objective: conv(&result.objective_trace),
            fit: conv(&result.fit_trace),
            avg_excess_kurtosis: conv(&result.kurtosis_trace),
        }
    }

    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }
}

pub const TRACE_HEADER: &str = "iteration,objective,fit,avg_excess_kurtosis";

/// `report.json` -> `report_traces.csv`.
pub fn traces_path(report_path: &Path) -> PathBuf {
    let stem = report_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report_path.with_file_name(format!("{stem}_traces.csv"))
}

pub fn write_traces(traces: &Traces, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = format!("{TRACE_HEADER}\n");
    for t in 0..traces.len() {
        body.push_str(&format!(
            "{t},{},{},{}\n",
            traces.objective[t], traces.fit[t], traces.avg_excess_kurtosis[t]
        ));
    }
    std::fs::write(path, body).map_err(write_failure(path))
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Traces> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {TRACE_HEADER:?}"),
        });
    }
    let mut traces = Traces::default();
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::RaggedRows {
                line: k + 2,
                expected: 4,
                found: fields.len(),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: k + 2,
                message: format!("{s:?}: {e}"),
            })
        };
        traces.objective.push(parse(fields[1])?);
        traces.fit.push(parse(fields[2])?);
        traces.avg_excess_kurtosis.push(parse(fields[3])?);
    }
    Ok(traces)
}

/// Writes the JSON report and, when given, the companion trace CSV next to
/// it (see [`traces_path`]).
pub fn write_report(report: &RunReport, traces: Option<&Traces>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(path, json + "\n").map_err(write_failure(path))?;
    if let Some(traces) = traces {
        write_traces(traces, traces_path(path))?;
    }
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cube_round_trip_with_metadata() {
        let cube = SpectralCube::new(array![[0.25f32, 1.5, 0.0, 3.0], [1e-7, 2.0, 0.5, -0.125]], 2, 2)
            .unwrap()
            .with_wavelengths(vec![400.5, 410.25])
            .unwrap()
            .with_band_names(vec!["b0".into(), "b1".into()])
            .unwrap();
        let bytes = encode_cube(&cube).unwrap();
        assert_eq!(&bytes[..4], b"HSB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        // band-sequential: second value is band 0, pixel 1
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.5);
        let back: SpectralCube<f32> = decode_cube(&bytes).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let cube = SpectralCube::new(array![[1.0f32, 2.0]], 1, 2).unwrap();
        let mut bytes = encode_cube(&cube).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_cube::<f32>(&bytes), Err(Error::BadMagic)));
        let bytes = encode_cube(&cube).unwrap();
        assert!(matches!(
            decode_cube::<f32>(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedFile(_))
        ));
        assert!(matches!(decode_cube::<f32>(&bytes[..10]), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut bytes = encode_cube(&SpectralCube::new(array![[1.0f32, 2.0]], 1, 2).unwrap()).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_cube::<f32>(&bytes), Err(Error::NonFiniteValue(1))));
    }

    #[test]
    fn ragged_spectra_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "band_index,A,B\n0,0.1,0.2\n1,0.3\n").unwrap();
        match read_spectra(&p) {
            Err(Error::RaggedRows { line, expected, found }) => assert_eq!((line, expected, found), (3, 3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, "band_index,A\n0,abc\n").unwrap();
        assert!(matches!(read_spectra(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn traces_path_is_a_sibling() {
        assert_eq!(
            traces_path(Path::new("/tmp/out/report.json")),
            PathBuf::from("/tmp/out/report_traces.csv")
        );
    }
}
