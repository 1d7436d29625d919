//! LMS exam-result CSV: `ID,Q1 Ans.,Q1 Score,...,Q20 Ans.,Q20 Score,Grade,Time,IP`.

use std::io::{self, Read, Write};
use std::net::Ipv4Addr;

use examagent_core::encoding::BehaviorLabel;
use examagent_core::records::{is_valid_id, Answer, ExamRecord, ExamSpec, RecordError, QUESTION_COUNT};

const COLUMN_COUNT: usize = 1 + 2 * QUESTION_COUNT + 3;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row}, column {column:?}: {reason}")]
    BadField {
        /// 1-based data row, not counting the header.
        row: usize,
        column: String,
        reason: String,
    },
    #[error("row {row}: grade {grade} but question scores sum to {sum}")]
    GradeMismatch { row: usize, grade: u32, sum: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Column names in file order.
pub fn header() -> Vec<String> {
    let mut cols = Vec::with_capacity(COLUMN_COUNT);
    cols.push("ID".to_string());
    for q in 1..=QUESTION_COUNT {
        cols.push(format!("Q{q} Ans."));
        cols.push(format!("Q{q} Score"));
    }
    cols.extend(["Grade", "Time", "IP"].map(String::from));
    cols
}

fn csv_error(e: csv::Error) -> CsvError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => CsvError::Io(e),
        other => CsvError::Io(io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

/// Parses a full CSV export. Header names are compared case-insensitively
/// after trimming; their order is enforced. Rows keep their file order.
pub fn parse_csv<R: Read>(input: R, spec: &ExamSpec) -> Result<Vec<ExamRecord>, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();
    let expected = header();

    let head = match rows.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(CsvError::MalformedHeader("missing header row".into())),
    };
    if head.len() != expected.len() {
        return Err(CsvError::MalformedHeader(format!(
            "expected {} columns, found {}",
            expected.len(),
            head.len()
        )));
    }
    for (i, (found, want)) in head.iter().zip(&expected).enumerate() {
        if !found.trim().eq_ignore_ascii_case(want) {
            return Err(CsvError::MalformedHeader(format!(
                "column {} is {:?}, expected {want:?}",
                i + 1,
                found.trim()
            )));
        }
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row_no = i + 1;
        let row = row.map_err(csv_error)?;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        records.push(parse_row(&row, row_no, &expected, spec)?);
    }
    Ok(records)
}

fn parse_row(row: &csv::StringRecord, row_no: usize, columns: &[String], spec: &ExamSpec) -> Result<ExamRecord, CsvError> {
    let bad = |col: usize, reason: String| CsvError::BadField {
        row: row_no,
        column: columns.get(col).cloned().unwrap_or_else(|| format!("#{}", col + 1)),
        reason,
    };
    if row.len() != COLUMN_COUNT {
        return Err(bad(
            row.len().min(COLUMN_COUNT),
            format!("expected {COLUMN_COUNT} fields, found {}", row.len()),
        ));
    }
    let field = |col: usize| row[col].trim();
    let number = |col: usize| -> Result<u32, CsvError> {
        field(col)
            .parse::<u32>()
            .map_err(|e| bad(col, format!("{:?} is not a non-negative integer ({e})", field(col))))
    };

    let id = field(0).to_string();
    if !is_valid_id(&id) {
        return Err(bad(0, format!("{id:?} is not a 7-digit id")));
    }
    let mut answers = [Answer::new(1, 0); QUESTION_COUNT];
    for (q, answer) in answers.iter_mut().enumerate() {
        let ans_col = 1 + 2 * q;
        let option = number(ans_col)?;
        let option = u8::try_from(option).map_err(|_| bad(ans_col, format!("option {option} out of range 1..=5")))?;
        let score = number(ans_col + 1)?;
        *answer = Answer::new(option, score);
    }
    let grade_col = 1 + 2 * QUESTION_COUNT;
    let grade = number(grade_col)?;
    let minutes = number(grade_col + 1)?;
    let ip: Ipv4Addr = field(grade_col + 2)
        .parse()
        .map_err(|_| bad(grade_col + 2, format!("{:?} is not a dotted-quad IPv4 address", field(grade_col + 2))))?;

    let record = ExamRecord {
        id,
        answers,
        grade,
        duration_minutes: minutes,
        ip,
    };
    record.validate(spec).map_err(|e| match e {
        RecordError::GradeMismatch { grade, sum } => CsvError::GradeMismatch { row: row_no, grade, sum },
        RecordError::BadOption { question, option } => bad(2 * question - 1, format!("option {option} out of range 1..=5")),
        RecordError::ScoreAboveMax { question, score, max } => {
            bad(2 * question, format!("score {score} exceeds the question maximum {max}"))
        }
        RecordError::ZeroDuration => bad(grade_col + 1, "duration must be at least one minute".into()),
        other => bad(0, other.to_string()),
    })?;
    Ok(record)
}

/// Writes the header and one line per record.
pub fn write_csv<W: Write>(mut out: W, records: &[ExamRecord]) -> io::Result<()> {
    writeln!(out, "{}", header().join(","))?;
    for r in records {
        write!(out, "{}", r.id)?;
        for a in &r.answers {
            write!(out, ",{},{}", a.chosen_option, a.score)?;
        }
        writeln!(out, ",{},{},{}", r.grade, r.duration_minutes, r.ip)?;
    }
    out.flush()
}

/// Ground-truth sidecar: one `id,label` line per record.
pub fn write_labels<W: Write>(mut out: W, records: &[ExamRecord], labels: &[BehaviorLabel]) -> io::Result<()> {
    for (r, l) in records.iter().zip(labels) {
        writeln!(out, "{},{l}", r.id)?;
    }
    out.flush()
}

pub fn parse_labels<R: Read>(mut input: R) -> Result<Vec<(String, BehaviorLabel)>, CsvError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |reason: &str| CsvError::BadField {
                row: i + 1,
                column: "label".into(),
                reason: reason.into(),
            };
            let (id, label) = line.split_once(',').ok_or_else(|| bad("expected `id,label`"))?;
            let label = match label.trim() {
                "normal" => BehaviorLabel::Normal,
                "abnormal" => BehaviorLabel::Abnormal,
                _ => return Err(bad("label must be `normal` or `abnormal`")),
            };
            Ok((id.trim().to_string(), label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_row() -> String {
        // scores 2,2 / 2x4 / 2x6 / 3x7 / 0 / 3 -> 45
        let mut fields = vec!["2000001".to_string()];
        let pairs: Vec<(u8, u32)> = [(4, 2), (2, 2)]
            .into_iter()
            .chain([(3, 2); 4])
            .chain([(1, 2); 6])
            .chain([(5, 3); 6])
            .chain([(2, 0), (1, 3)])
            .collect();
        assert_eq!(pairs.len(), 20);
        for (a, s) in pairs {
            fields.push(a.to_string());
            fields.push(s.to_string());
        }
        fields.extend(["45", "15", "175.116.139.44"].map(String::from));
        fields.join(",")
    }

    fn csv_of(rows: &[String]) -> String {
        let mut s = header().join(",");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    #[test]
    fn parses_reference_row() {
        let recs = parse_csv(csv_of(&[table_row()]).as_bytes(), &ExamSpec::standard()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.id.as_str(), r.grade, r.duration_minutes), ("2000001", 45, 15));
        assert_eq!(r.ip, Ipv4Addr::new(175, 116, 139, 44));
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_csv(csv_of(&[]).as_bytes(), &ExamSpec::standard()).unwrap().is_empty());
    }

    #[test]
    fn header_case_and_whitespace_tolerated_but_not_order() {
        let loose = csv_of(&[table_row()]).replacen("ID,Q1 Ans.", " id , q1 ans. ", 1);
        assert!(parse_csv(loose.as_bytes(), &ExamSpec::standard()).is_ok());
        let swapped = csv_of(&[]).replacen("Q1 Ans.,Q1 Score", "Q1 Score,Q1 Ans.", 1);
        assert!(matches!(
            parse_csv(swapped.as_bytes(), &ExamSpec::standard()),
            Err(CsvError::MalformedHeader(_))
        ));
    }

    #[test]
    fn grade_mismatch() {
        let row = table_row().replace(",45,15,", ",44,15,");
        match parse_csv(csv_of(&[row]).as_bytes(), &ExamSpec::standard()) {
            Err(CsvError::GradeMismatch { row: 1, grade: 44, sum: 45 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_fields_name_row_and_column() {
        let row = table_row().replace("175.116.139.44", "175.116.139");
        match parse_csv(csv_of(&[table_row(), row]).as_bytes(), &ExamSpec::standard()) {
            Err(CsvError::BadField { row: 2, column, .. }) => assert_eq!(column, "IP"),
            other => panic!("{other:?}"),
        }
        let row = table_row().replacen(",4,2,", ",x,2,", 1);
        match parse_csv(csv_of(&[row]).as_bytes(), &ExamSpec::standard()) {
            Err(CsvError::BadField { row: 1, column, .. }) => assert_eq!(column, "Q1 Ans."),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let recs = parse_csv(csv_of(&[table_row()]).as_bytes(), &ExamSpec::standard()).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &recs).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), csv_of(&[table_row()]));
        assert_eq!(parse_csv(out.as_slice(), &ExamSpec::standard()).unwrap(), recs);
        let mut empty = Vec::new();
        write_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{}\n", header().join(",")));
    }

    #[test]
    fn labels_round_trip() {
        let recs = parse_csv(csv_of(&[table_row()]).as_bytes(), &ExamSpec::standard()).unwrap();
        let mut out = Vec::new();
        write_labels(&mut out, &recs, &[BehaviorLabel::Abnormal]).unwrap();
        assert_eq!(out, b"2000001,abnormal\n");
        assert_eq!(
            parse_labels(out.as_slice()).unwrap(),
            vec![("2000001".to_string(), BehaviorLabel::Abnormal)]
        );
    }
}
