//! Dataset files: one row per sample with columns `id, d_1..d_D, y, b_lo, b_hi`.
//! An optional leading `#` line carries provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::interval::BoundedSample;

/// Incremental writer so large generations never sit in memory.
pub struct DatasetWriter<W: Write> {
    inner: csv::Writer<W>,
    n_loads: usize,
    rows: usize,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, n_loads: usize, comment: Option<&str>) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        if let Some(c) = comment {
            writeln!(file, "# {c}")?;
        }
        DatasetWriter::new(file, n_loads)
    }
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(sink: W, n_loads: usize) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        let mut header = vec!["id".to_string()];
        header.extend((1..=n_loads).map(|i| format!("d_{i}")));
        header.extend(["y", "b_lo", "b_hi"].map(String::from));
        inner.write_record(&header)?;
        Ok(DatasetWriter {
            inner,
            n_loads,
            rows: 0,
        })
    }

    pub fn write(&mut self, id: usize, loads: &[f64], y: f64, b_lo: f64, b_hi: f64) -> Result<()> {
        if loads.len() != self.n_loads {
            return Err(Error::DimensionMismatch(format!(
                "{} loads in a {}-load dataset",
                loads.len(),
                self.n_loads
            )));
        }
        let mut record = Vec::with_capacity(self.n_loads + 4);
        record.push(id.to_string());
        record.extend(loads.iter().map(|v| v.to_string()));
        record.extend([y, b_lo, b_hi].map(|v| v.to_string()));
        self.inner.write_record(&record)?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Reads a dataset; the loads become the sample features.
pub fn read_dataset(path: &Path) -> Result<Vec<BoundedSample>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = reader.headers()?.clone();
    let width = header.len();
    let expected_tail = ["y", "b_lo", "b_hi"];
    if width < 4 || header.get(0) != Some("id") || (0..3).any(|i| header.get(width - 3 + i) != Some(expected_tail[i])) {
        return Err(Error::InvalidSample(format!(
            "{}: header must be id, d_1..d_D, y, b_lo, b_hi",
            path.display()
        )));
    }
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidSample(format!("row {}: {e}", row + 1)))?;
        let n = values.len();
        let sample = BoundedSample::new(values[..n - 3].to_vec(), values[n - 3], values[n - 2], values[n - 1])
            .map_err(|e| Error::InvalidSample(format!("row {}: {e}", row + 1)))?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut w = DatasetWriter::create(&path, 2, Some("manifest abc")).unwrap();
        w.write(0, &[0.1, 1.0 / 3.0], 2.0, 1.5, 2.5).unwrap();
        w.write(1, &[7.0, 8.25], 3.0 + 1e-13, 3.0, 3.5).unwrap();
        assert_eq!(w.rows(), 2);
        w.finish().unwrap();
        let s = read_dataset(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].features, vec![0.1, 1.0 / 3.0]);
        assert_eq!(s[1].y, 3.0 + 1e-13);
        assert_eq!((s[1].b_lo, s[1].b_hi), (3.0, 3.5));
    }

    #[test]
    fn rejects_bad_header_and_sandwich() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "id,x,y\n0,1,2\n").unwrap();
        assert!(read_dataset(&bad).is_err());
        let broken = dir.path().join("broken.csv");
        std::fs::write(&broken, "id,d_1,y,b_lo,b_hi\n0,1,5,1,2\n").unwrap();
        assert!(read_dataset(&broken).is_err());
    }
}
