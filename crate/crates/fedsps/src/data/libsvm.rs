//! LIBSVM text format: `label idx:val idx:val ...` per line, 1-based feature
//! indices, whitespace separated. Blank lines and `#` comments are skipped.
//! Labels are remapped to `0..K` in sorted order of the original values;
//! the feature dimension is the largest index seen.

use super::{DataError, Dataset, SparseRow};
use std::io::BufRead;
use std::path::Path;

/// Parse a dataset from any buffered reader.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut raw_labels: Vec<f64> = Vec::new();
    let mut max_index: u32 = 0;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| DataError::ParseError {
            line: lineno,
            message: format!("bad label token {label_tok:?}"),
        })?;
        if !label.is_finite() {
            return Err(DataError::ParseError {
                line: lineno,
                message: format!("non-finite label {label_tok:?}"),
            });
        }

        let mut row: SparseRow = Vec::new();
        let mut prev_index: u32 = 0;
        for tok in tokens {
            let (idx_s, val_s) = tok.split_once(':').ok_or_else(|| DataError::ParseError {
                line: lineno,
                message: format!("expected idx:val, got {tok:?}"),
            })?;
            let idx: u32 = idx_s.parse().map_err(|_| DataError::ParseError {
                line: lineno,
                message: format!("bad feature index {idx_s:?}"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| DataError::ParseError {
                line: lineno,
                message: format!("bad feature value {val_s:?}"),
            })?;
            if idx == 0 {
                return Err(DataError::ParseError {
                    line: lineno,
                    message: "feature indices are 1-based; got 0".into(),
                });
            }
            if !val.is_finite() {
                return Err(DataError::ParseError {
                    line: lineno,
                    message: format!("non-finite feature value {val_s:?}"),
                });
            }
            if idx <= prev_index {
                return Err(DataError::ParseError {
                    line: lineno,
                    message: format!("feature indices not increasing at {idx}"),
                });
            }
            prev_index = idx;
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
        raw_labels.push(label);
    }

    if rows.is_empty() {
        return Err(DataError::ParseError {
            line: 0,
            message: "empty input: no samples".into(),
        });
    }

    // Remap labels to 0..K in sorted order of the original values.
    let mut distinct: Vec<f64> = raw_labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| {
            distinct
                .binary_search_by(|d| d.total_cmp(l))
                .expect("label is in the distinct set")
        })
        .collect();

    Dataset::new(rows, labels, max_index as usize, distinct.len())
}

/// Parse a dataset from a file path.
pub fn parse_libsvm_file<P: AsRef<Path>>(path: P) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    parse_libsvm(std::io::BufReader::new(file))
}

/// Serialize a dataset back to LIBSVM text. Labels are written as their
/// remapped class ids and values with 17 significant digits, so parsing the
/// output reproduces the dataset exactly.
pub fn serialize_libsvm(data: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..data.n_samples() {
        out.push_str(&data.label(i).to_string());
        for &(idx, val) in data.row(i) {
            out.push_str(&format!(" {}:{:.16e}", idx + 1, val));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_input() {
        let d = parse_libsvm("+1 1:0.5 3:2.0\n-1 2:1.0".as_bytes()).unwrap();
        assert_eq!(d.n_samples(), 2);
        assert_eq!(d.dim(), 3);
        assert_eq!(d.n_classes(), 2);
        // Sorted original labels {-1, +1} map to {0, 1}.
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(d.row(0), &[(0, 0.5), (2, 2.0)]);
        assert_eq!(d.row(1), &[(1, 1.0)]);
    }

    #[test]
    fn skips_comments_and_blank_lines() {
        let d = parse_libsvm("# header\n\n1 1:1.0\n  \n2 1:2.0\n".as_bytes()).unwrap();
        assert_eq!(d.n_samples(), 2);
        assert_eq!(d.labels(), &[0, 1]);
    }

    #[test]
    fn rejects_malformed_value() {
        let err = parse_libsvm("1 2:abc".as_bytes()).unwrap_err();
        match err {
            DataError::ParseError { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_non_increasing_indices() {
        let err = parse_libsvm("1 1:1.0\n1 3:1.0 2:1.0".as_bytes()).unwrap_err();
        match err {
            DataError::ParseError { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_input() {
        assert!(matches!(
            parse_libsvm("".as_bytes()),
            Err(DataError::ParseError { .. })
        ));
        assert!(matches!(
            parse_libsvm("# only a comment\n".as_bytes()),
            Err(DataError::ParseError { .. })
        ));
    }

    #[test]
    fn rejects_zero_index() {
        assert!(matches!(
            parse_libsvm("1 0:1.0".as_bytes()),
            Err(DataError::ParseError { line: 1, .. })
        ));
    }

    proptest! {
        /// serialize -> parse is the identity on datasets whose dimension is
        /// witnessed by some row (which parsing guarantees).
        #[test]
        fn roundtrip(seed in 0u64..500, m in 1usize..30, dim in 1u32..50, k in 1usize..5) {
            use rand::Rng;
            let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Fuzz, 10);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..m {
                let mut row: Vec<(u32, f64)> = (0..dim)
                    .filter(|_| rng.gen::<f64>() < 0.4)
                    .map(|j| (j, rng.gen::<f64>() * 4.0 - 2.0))
                    .collect();
                // Witness the full dimension from the first row.
                if i == 0 {
                    row.retain(|&(j, _)| j != dim - 1);
                    row.push((dim - 1, 1.0));
                }
                rows.push(row);
                labels.push(rng.gen_range(0..k));
            }
            // Make every class in 0..k* present so remapping is the identity.
            let k_present = {
                let mut seen: Vec<usize> = labels.clone();
                seen.sort_unstable();
                seen.dedup();
                for (want, have) in seen.iter().enumerate() {
                    // Compress labels onto 0..n_distinct.
                    for l in labels.iter_mut() {
                        if *l == *have {
                            *l = want;
                        }
                    }
                }
                seen.len()
            };
            let data = Dataset::new(rows, labels, dim as usize, k_present).unwrap();
            let text = serialize_libsvm(&data);
            let reparsed = parse_libsvm(text.as_bytes()).unwrap();
            prop_assert_eq!(&data, &reparsed);
        }
    }
}
