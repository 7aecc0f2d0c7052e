//! Frame-pool files, sweep CSVs and atomic file output.
//!
//! A frame pool is a CSV with one row per frame,
//! `frame_index,p0,p1,...`, next to a `<name>.meta.json` sidecar holding
//! its [`Provenance`]. The reader also accepts the long layout
//! `frame_index,pixel_index,electrons`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detector_model::Frame;
use crate::estimator::{EstimateError, FrameSet, Provenance};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Frames { path: PathBuf, source: EstimateError },
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_owned(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_owned(), message: message.into() }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(file_err(dir))?;
    tmp.write_all(bytes).map_err(file_err(path))?;
    tmp.persist(path).map_err(|e| IoError::File { path: path.to_owned(), source: e.error })?;
    Ok(())
}

/// First line of every CSV the tool writes.
pub fn header_comment(config_hash: &str) -> String {
    format!("# config_hash={config_hash} tool=weakmeter {}\n", env!("CARGO_PKG_VERSION"))
}

/// CSV text: the header comment, a column row, then `rows`.
pub fn render_csv(config_hash: &str, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(header_comment(config_hash).into_bytes());
    w.write_record(columns).expect("in-memory csv write");
    for r in rows {
        w.write_record(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Shortest round-trip text for a float.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

pub fn sidecar_path(pool: &Path) -> PathBuf {
    let mut name = pool.file_stem().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    pool.with_file_name(name)
}

pub fn write_frame_pool(path: &Path, set: &FrameSet, config_hash: &str) -> Result<(), IoError> {
    let mut header = vec!["frame_index".to_string()];
    header.extend((0..set.pixel_count()).map(|j| format!("p{j}")));
    let mut w = csv::Writer::from_writer(header_comment(config_hash).into_bytes());
    w.write_record(&header).expect("in-memory csv write");
    for (i, f) in set.frames().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(f.electrons.iter().map(|e| e.to_string()));
        w.write_record(&row).expect("in-memory csv write");
    }
    write_atomic(path, &w.into_inner().expect("in-memory csv flush"))?;
    let meta = serde_json::to_vec_pretty(&ProvenanceFile::from(set.provenance())).expect("provenance serializes");
    write_atomic(&sidecar_path(path), &meta)
}

/// Sidecar form of [`Provenance`]; infinities are spelled out because JSON
/// has no literal for them.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceFile {
    scheme: crate::spectral_meter::Scheme,
    epsilon: f64,
    bias_order: u32,
    extinction_ratio: String,
    n: f64,
    b_true: f64,
    seed: u64,
    detector_hash: String,
}

impl From<&Provenance> for ProvenanceFile {
    fn from(p: &Provenance) -> Self {
        Self {
            scheme: p.scheme.scheme,
            epsilon: p.scheme.epsilon,
            bias_order: p.scheme.bias_order,
            extinction_ratio: fmt_f64(p.scheme.extinction_ratio),
            n: p.n,
            b_true: p.b_true,
            seed: p.seed,
            detector_hash: p.detector_hash.clone(),
        }
    }
}

impl ProvenanceFile {
    fn into_provenance(self, path: &Path) -> Result<Provenance, IoError> {
        let extinction_ratio = self
            .extinction_ratio
            .parse::<f64>()
            .map_err(|_| format_err(path, format!("bad extinction_ratio {:?}", self.extinction_ratio)))?;
        Ok(Provenance {
            scheme: crate::spectral_meter::SchemeConfig {
                scheme: self.scheme,
                epsilon: self.epsilon,
                bias_order: self.bias_order,
                extinction_ratio,
            },
            n: self.n,
            b_true: self.b_true,
            seed: self.seed,
            detector_hash: self.detector_hash,
        })
    }
}

pub fn read_provenance(pool: &Path) -> Result<Provenance, IoError> {
    let meta = sidecar_path(pool);
    let text = fs::read_to_string(&meta).map_err(file_err(&meta))?;
    let file: ProvenanceFile = serde_json::from_str(&text).map_err(|e| format_err(&meta, e.to_string()))?;
    file.into_provenance(&meta)
}

pub fn read_frame_pool(path: &Path) -> Result<FrameSet, IoError> {
    let provenance = read_provenance(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    let long = headers.iter().collect::<Vec<_>>() == ["frame_index", "pixel_index", "electrons"];
    if !long && headers.get(0) != Some("frame_index") {
        return Err(format_err(path, "first column must be frame_index"));
    }
    let mut frames: Vec<Frame> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let field = |i: usize| -> Result<usize, IoError> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| format_err(path, format!("row {}: bad field {i}", line + 1)))
        };
        let index = field(0)?;
        if long {
            let (pixel, electrons) = (field(1)?, field(2)?);
            if index >= frames.len() {
                frames.resize(index + 1, Frame { electrons: Vec::new() });
            }
            let row = &mut frames[index].electrons;
            if pixel >= row.len() {
                row.resize(pixel + 1, u16::MAX);
            }
            row[pixel] = to_count(electrons, path)?;
        } else {
            if index != frames.len() {
                return Err(format_err(path, format!("row {}: frame_index {index} out of order", line + 1)));
            }
            let electrons = (1..record.len()).map(|i| field(i).and_then(|e| to_count(e, path))).collect::<Result<_, _>>()?;
            frames.push(Frame { electrons });
        }
    }
    if frames.iter().any(|f| f.electrons.contains(&u16::MAX)) {
        return Err(format_err(path, "long-format pool has missing pixels"));
    }
    FrameSet::new(frames, provenance).map_err(|source| IoError::Frames { path: path.to_owned(), source })
}

fn to_count(e: usize, path: &Path) -> Result<u16, IoError> {
    u16::try_from(e)
        .ok()
        .filter(|&v| v != u16::MAX)
        .ok_or_else(|| format_err(path, format!("electron count {e} out of range")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_meter::SchemeConfig;

    fn set() -> FrameSet {
        let prov = Provenance {
            scheme: SchemeConfig::standard_weak(0.2, f64::INFINITY),
            n: 1e8,
            b_true: 0.028,
            seed: 3,
            detector_hash: "abc".into(),
        };
        FrameSet::new(vec![Frame { electrons: vec![94, 1200, 3] }, Frame { electrons: vec![0, 5, 7] }], prov).unwrap()
    }

    #[test]
    fn wide_pool_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.csv");
        write_frame_pool(&path, &set(), "h").unwrap();
        assert!(sidecar_path(&path).ends_with("pool.meta.json"));
        let back = read_frame_pool(&path).unwrap();
        assert_eq!(back, set());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=h tool=weakmeter"));
    }

    #[test]
    fn long_pool_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let wide = dir.path().join("a.csv");
        write_frame_pool(&wide, &set(), "h").unwrap();
        let long = dir.path().join("b.csv");
        let mut text = String::from("frame_index,pixel_index,electrons\n");
        for (i, f) in set().frames().iter().enumerate() {
            for (j, e) in f.electrons.iter().enumerate().rev() {
                text.push_str(&format!("{i},{j},{e}\n"));
            }
        }
        fs::write(&long, text).unwrap();
        fs::copy(sidecar_path(&wide), sidecar_path(&long)).unwrap();
        assert_eq!(read_frame_pool(&long).unwrap(), set());
    }

    #[test]
    fn malformed_pools_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_frame_pool(&path, &set(), "h").unwrap();
        fs::write(&path, "frame_index,p0\n1,5\n").unwrap();
        assert!(matches!(read_frame_pool(&path), Err(IoError::Format { .. })));
        fs::write(&path, "frame_index,p0\n0,70000\n").unwrap();
        assert!(matches!(read_frame_pool(&path), Err(IoError::Format { .. })));
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(read_frame_pool(&path), Err(IoError::File { .. })));
    }

    #[test]
    fn csv_rendering() {
        let text = render_csv("x", &["a", "b"], &[vec![fmt_f64(1e5), fmt_f64(f64::INFINITY)]]);
        assert_eq!(text, "# config_hash=x tool=weakmeter 0.1.0\na,b\n1e5,inf\n");
        assert_eq!(fmt_f64(0.028), "2.8e-2");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }
}
