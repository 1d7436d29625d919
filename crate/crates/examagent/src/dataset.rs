//! Encoded dataset text format: one sample per line, the 23 feature bits
//! separated by spaces, a tab, then `normal` or `abnormal`.

use std::io::{self, BufRead, Write};

use examagent_core::encoding::{BehaviorLabel, FeatureVector, FEATURE_LEN};
use examagent_core::harness::Dataset;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_dataset<W: Write>(mut out: W, data: &Dataset) -> io::Result<()> {
    for (f, l) in data.features.iter().zip(&data.labels) {
        let bits: Vec<String> = f.bits().iter().map(u8::to_string).collect();
        writeln!(out, "{}\t{l}", bits.join(" "))?;
    }
    out.flush()
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset, DatasetError> {
    let mut data = Dataset::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::BadLine { line: i + 1, reason };
        let (bits, label) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected features, a tab, then the label".into()))?;
        let values: Vec<&str> = bits.split_whitespace().collect();
        if values.len() != FEATURE_LEN {
            return Err(bad(format!("expected {FEATURE_LEN} feature bits, found {}", values.len())));
        }
        let mut raw = [0u8; FEATURE_LEN];
        for (slot, v) in raw.iter_mut().zip(&values) {
            *slot = v.parse().map_err(|_| bad(format!("{v:?} is not a bit")))?;
        }
        let features = FeatureVector::from_bits(raw).map_err(|e| bad(e.to_string()))?;
        let label = match label.trim() {
            "normal" => BehaviorLabel::Normal,
            "abnormal" => BehaviorLabel::Abnormal,
            other => return Err(bad(format!("unknown label {other:?}"))),
        };
        data.features.push(features);
        data.labels.push(label);
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use examagent_core::encoding::SpeedCategory;

    #[test]
    fn round_trip() {
        let mut correct = [true; 20];
        correct[3] = false;
        let f = FeatureVector::from_parts(correct, SpeedCategory::Slow);
        let data = Dataset::new(vec![f], vec![BehaviorLabel::Abnormal]).unwrap();
        let mut out = Vec::new();
        write_dataset(&mut out, &data).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(text, "1 1 1 0 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 1 0 0 1\tabnormal\n");
        assert_eq!(read_dataset(out.as_slice()).unwrap(), data);
    }

    #[test]
    fn rejects_two_speed_bits() {
        let line = format!("{} 1 1 0\tnormal\n", ["0"; 20].join(" "));
        assert!(matches!(read_dataset(line.as_bytes()), Err(DatasetError::BadLine { line: 1, .. })));
    }
}
