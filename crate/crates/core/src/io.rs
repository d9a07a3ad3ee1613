//! On-disk formats: the binary logit container, the labels CSV, and the
//! report writers.
//!
//! Logit file layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "CONFOTL1"
//! bytes 8..16   num_samples  (u64)
//! bytes 16..24  num_classes  (u64)
//! byte  24      dtype code: 0 = f32, 1 = f64
//! bytes 25..    payload, row-major sample x class, IEEE-754 little-endian
//! ```
//!
//! Payloads are sample-major because that is the natural export order of a
//! model inference loop; loading transposes into the class-major layout the
//! numeric modules use, and widens f32 to f64. All validation happens here so
//! downstream code may assume finite, well-shaped inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfotError, Result};
use crate::harness::AggregatedReport;
use crate::types::SimilarityMatrix;

pub const LOGIT_MAGIC: &[u8; 8] = b"CONFOTL1";
pub const HEADER_LEN: usize = 25;

/// Payload element type of a logit file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtypeCode {
    F32,
    F64,
}

impl DtypeCode {
    pub fn code(self) -> u8 {
        match self {
            DtypeCode::F32 => 0,
            DtypeCode::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DtypeCode::F32 => 4,
            DtypeCode::F64 => 8,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DtypeCode::F32),
            1 => Some(DtypeCode::F64),
            _ => None,
        }
    }
}

/// Output format for experiment reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

fn format_err(offset: usize, reason: impl Into<String>) -> ConfotError {
    ConfotError::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Load a logit file into a class-major [`SimilarityMatrix`].
pub fn load_logits(path: &Path) -> Result<SimilarityMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("file too short for header: {} < {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[0..8] != LOGIT_MAGIC {
        return Err(format_err(0, "bad magic, expected \"CONFOTL1\""));
    }
    let num_samples = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let num_classes = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dtype = DtypeCode::from_code(bytes[24])
        .ok_or_else(|| format_err(24, format!("unknown dtype code {}", bytes[24])))?;

    if num_samples == 0 {
        return Err(format_err(8, "file declares zero samples"));
    }
    if num_classes < 2 {
        return Err(format_err(
            16,
            format!("file declares {num_classes} classes, need at least 2"),
        ));
    }
    let n = usize::try_from(num_samples)
        .map_err(|_| format_err(8, "sample count does not fit in memory"))?;
    let k = usize::try_from(num_classes)
        .map_err(|_| format_err(16, "class count does not fit in memory"))?;
    let expected = n
        .checked_mul(k)
        .and_then(|c| c.checked_mul(dtype.size()))
        .ok_or_else(|| format_err(8, "declared dimensions overflow"))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(format_err(
            HEADER_LEN,
            format!("payload length mismatch: expected {expected} bytes, got {actual}"),
        ));
    }

    let payload = &bytes[HEADER_LEN..];
    let mut values = ndarray::Array2::<f64>::zeros((k, n));
    match dtype {
        DtypeCode::F64 => {
            for (idx, chunk) in payload.chunks_exact(8).enumerate() {
                let v = f64::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(format_err(
                        HEADER_LEN + idx * 8,
                        format!("non-finite logit {v} at sample {}, class {}", idx / k, idx % k),
                    ));
                }
                values[[idx % k, idx / k]] = v;
            }
        }
        DtypeCode::F32 => {
            for (idx, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(format_err(
                        HEADER_LEN + idx * 4,
                        format!("non-finite logit {v} at sample {}, class {}", idx / k, idx % k),
                    ));
                }
                values[[idx % k, idx / k]] = f64::from(v);
            }
        }
    }
    SimilarityMatrix::new(values)
}

/// Write a class-major matrix to the sample-major on-disk layout.
pub fn save_logits(matrix: &SimilarityMatrix, path: &Path, dtype: DtypeCode) -> Result<()> {
    let k = matrix.num_classes();
    let n = matrix.num_samples();
    let mut out = Vec::with_capacity(HEADER_LEN + n * k * dtype.size());
    out.extend_from_slice(LOGIT_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.push(dtype.code());
    for i in 0..n {
        for kk in 0..k {
            let v = matrix.values()[[kk, i]];
            match dtype {
                DtypeCode::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DtypeCode::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Load a single-column CSV of class indices, with an optional `label` header.
pub fn load_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        if line_no == 0 && cell.eq_ignore_ascii_case("label") {
            continue;
        }
        let value: usize = cell.parse().map_err(|_| ConfotError::Parse {
            line: line_no + 1,
            reason: format!("expected a nonnegative integer, got {cell:?}"),
        })?;
        labels.push(value);
    }
    if labels.is_empty() {
        return Err(ConfotError::Data(format!(
            "no labels found in {}",
            path.display()
        )));
    }
    Ok(labels)
}

/// Write labels as a single-column CSV with a `label` header.
pub fn save_labels_csv(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::from("label\n");
    for y in labels {
        out.push_str(&y.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Render an aggregated report as the pinned CSV schema: one row per
/// (method, score, alpha) in report order.
pub fn report_to_csv(report: &AggregatedReport) -> String {
    let mut out = String::from(
        "method,score,alpha,top1_mean,top1_std,cov_mean,cov_std,size_mean,size_std,ccv_mean,ccv_std,seeds\n",
    );
    for row in &report.rows {
        let s = &row.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.method.name(),
            row.score.name(),
            row.alpha,
            s.top1_mean,
            s.top1_std,
            s.cov_mean,
            s.cov_std,
            s.size_mean,
            s.size_std,
            s.ccv_mean,
            s.ccv_std,
            report.seeds
        ));
    }
    if let Some(err) = &report.failed {
        out.push_str(&format!("# failed: {err}\n"));
    }
    out
}

/// Render an aggregated report as JSON with per-seed arrays and the config
/// echoed back.
pub fn report_to_json(report: &AggregatedReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| ConfotError::Data(format!("report serialization failed: {e}")))
}

/// Write an aggregated report to `path` in the requested format.
pub fn write_report(report: &AggregatedReport, path: &Path, format: ReportFormat) -> Result<()> {
    let payload = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => {
            let mut s = report_to_json(report)?;
            s.push('\n');
            s
        }
    };
    fs::write(path, payload)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    #[test]
    fn load_known_f32_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("logits.bin");
        // 2 samples, 3 classes: sample 0 = [1, 2, 3], sample 1 = [4, 5, 6].
        let mut bytes = Vec::new();
        bytes.extend_from_slice(LOGIT_MAGIC);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.push(0);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();

        let m = load_logits(&path).unwrap();
        assert_eq!(m.values(), &array![[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]);
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(LOGIT_MAGIC);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.push(1);
        bytes.extend_from_slice(&[0u8; 16]); // 16 of the 48 expected bytes
        fs::write(&path, &bytes).unwrap();

        match load_logits(&path) {
            Err(ConfotError::Format { offset, reason }) => {
                assert_eq!(offset, HEADER_LEN as u64);
                assert!(reason.contains("48"), "reason: {reason}");
                assert!(reason.contains("16"), "reason: {reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let bytes = vec![b'X'; HEADER_LEN];
        fs::write(&path, &bytes).unwrap();
        match load_logits(&path) {
            Err(ConfotError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(load_logits(Path::new("/nonexistent/q.bin")).is_err());
    }

    #[test]
    fn non_finite_payload_reports_value_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.bin");
        let m = SimilarityMatrix::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        save_logits(&m, &path, DtypeCode::F64).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Corrupt the third value (sample 1, class 0).
        let offset = HEADER_LEN + 2 * 8;
        bytes[offset..offset + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load_logits(&path) {
            Err(ConfotError::Format { offset: o, .. }) => assert_eq!(o, offset as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn labels_csv_examples() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");

        fs::write(&path, "label\n0\n2\n1\n").unwrap();
        assert_eq!(load_labels_csv(&path).unwrap(), vec![0, 2, 1]);

        fs::write(&path, "0\n2\n1").unwrap();
        assert_eq!(load_labels_csv(&path).unwrap(), vec![0, 2, 1]);

        fs::write(&path, "").unwrap();
        assert!(matches!(load_labels_csv(&path), Err(ConfotError::Data(_))));

        fs::write(&path, "label\n0\nfoo\n").unwrap();
        match load_labels_csv(&path) {
            Err(ConfotError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn labels_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..100)).collect();
        save_labels_csv(&labels, &path).unwrap();
        assert_eq!(load_labels_csv(&path).unwrap(), labels);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn logits_round_trip_bitwise_f64(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(2..8);
            let n = rng.gen_range(1..20);
            let m = SimilarityMatrix::new(ndarray::Array2::from_shape_fn(
                (k, n), |_| rng.gen::<f64>() * 200.0 - 100.0)).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt.bin");
            save_logits(&m, &path, DtypeCode::F64).unwrap();
            let loaded = load_logits(&path).unwrap();
            for (a, b) in m.values().iter().zip(loaded.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn logits_f32_widening_preserves_values(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(2..6);
            let n = rng.gen_range(1..12);
            // Start from values that are exactly representable in f32.
            let m = SimilarityMatrix::new(ndarray::Array2::from_shape_fn(
                (k, n), |_| f64::from(rng.gen::<f32>() * 10.0 - 5.0))).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("rt32.bin");
            save_logits(&m, &path, DtypeCode::F32).unwrap();
            let loaded = load_logits(&path).unwrap();
            for (a, b) in m.values().iter().zip(loaded.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
