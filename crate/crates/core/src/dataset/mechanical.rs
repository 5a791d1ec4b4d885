//! Testing-machine exports.
//!
//! Columns are recognised by keyword in the header (case-insensitive):
//! `strain`, `stress`, `displacement`/`extension`, `force`/`load`, `time`.
//! A `%` in the strain header marks percent strain. Summary rows such as
//! "Mean" or "Standard deviation" are skipped.

use super::{DatasetError, MechanicalSample};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Field {
    Time,
    Strain { percent: bool },
    Stress,
    Force,
    Displacement,
}

fn classify(header: &str) -> Option<Field> {
    let h = header.to_ascii_lowercase();
    if h.contains("strain") {
        Some(Field::Strain { percent: h.contains('%') })
    } else if h.contains("stress") {
        Some(Field::Stress)
    } else if h.contains("displacement") || h.contains("extension") {
        Some(Field::Displacement)
    } else if h.contains("force") || h.contains("load") {
        Some(Field::Force)
    } else if h.contains("time") {
        Some(Field::Time)
    } else {
        None
    }
}

const SUMMARY_LABELS: [&str; 8] = [
    "mean",
    "standard deviation",
    "std",
    "median",
    "minimum",
    "maximum",
    "coefficient of variation",
    "range",
];

fn is_summary_row(record: &csv::StringRecord) -> bool {
    record
        .iter()
        .map(str::trim)
        .find(|c| !c.is_empty())
        .map(|c| {
            let c = c.to_ascii_lowercase();
            SUMMARY_LABELS.iter().any(|l| c.starts_with(l))
        })
        .unwrap_or(false)
}

/// Converts a percent value written as decimal text to a fraction by shifting
/// the decimal exponent, so "0.81" becomes exactly the double nearest 0.0081.
pub fn percent_to_fraction(text: &str) -> Option<f64> {
    let text = text.trim();
    text.parse::<f64>().ok()?;
    let shifted = match text.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = text[pos + 1..].parse().ok()?;
            format!("{}e{}", &text[..pos], exp.checked_sub(2)?)
        }
        None => format!("{text}e-2"),
    };
    shifted.parse().ok()
}

pub fn parse_mechanical_csv(text: &str) -> Result<Vec<MechanicalSample>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();

    let mut columns: Vec<(usize, Field)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(field) = classify(h) {
            let kind = std::mem::discriminant(&field);
            if !columns.iter().any(|(_, f)| std::mem::discriminant(f) == kind) {
                columns.push((i, field));
            }
        }
    }
    let find = |pred: fn(&Field) -> bool| columns.iter().find(|(_, f)| pred(f)).copied();
    let time_col = find(|f| matches!(f, Field::Time)).ok_or_else(|| DatasetError::MissingColumn("time".into()))?;
    let strain_col = find(|f| matches!(f, Field::Strain { .. }))
        .ok_or_else(|| DatasetError::MissingColumn("strain".into()))?;

    let mut samples = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|c| c.trim().is_empty()) || is_summary_row(&record) {
            continue;
        }
        let cell = |col: usize| record.get(col).unwrap_or("").trim();
        let malformed = |name: &str, value: &str| DatasetError::MalformedRow {
            line,
            reason: format!("{name} value {value:?} is not a number"),
        };
        let number = |col: usize, field: Field| -> Result<Option<f64>, DatasetError> {
            let raw = cell(col);
            if raw.is_empty() {
                return Ok(None);
            }
            let parsed = match field {
                Field::Strain { percent: true } => percent_to_fraction(raw),
                _ => raw.parse::<f64>().ok(),
            };
            match parsed {
                Some(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(malformed(&headers[col], raw)),
            }
        };

        let time = number(time_col.0, time_col.1)?
            .ok_or_else(|| malformed("time", ""))?;
        let strain = number(strain_col.0, strain_col.1)?
            .ok_or_else(|| malformed("strain", ""))?;
        let mut sample = MechanicalSample::new(time, strain);
        for (col, field) in &columns {
            match field {
                Field::Stress => sample.stress = number(*col, *field)?,
                Field::Force => sample.force = number(*col, *field)?,
                Field::Displacement => sample.displacement = number(*col, *field)?,
                _ => {}
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXPORT_ROW: &str = include_str!("../../tests/data/mechanical_export.csv");

    #[test]
    fn single_export_row() {
        let rows = parse_mechanical_csv(EXPORT_ROW).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.stress, Some(76.15));
        assert_eq!(r.strain, 0.0081);
        assert_eq!(r.displacement, Some(1.40));
        assert_eq!(r.force, Some(5969.85));
        assert_eq!(r.time, 188.05);
    }

    #[test]
    fn percent_shift_is_exact() {
        assert_eq!(percent_to_fraction("0.81"), Some(0.0081));
        assert_eq!(percent_to_fraction("81"), Some(0.81));
        assert_eq!(percent_to_fraction("8.1e-1"), Some(0.0081));
        assert_eq!(percent_to_fraction(" 2E1 "), Some(0.2));
        assert_eq!(percent_to_fraction("abc"), None);
    }

    #[test]
    fn empty_file_is_missing_column() {
        assert!(matches!(parse_mechanical_csv(""), Err(DatasetError::MissingColumn(_))));
        assert_eq!(
            parse_mechanical_csv("Time [s],Force [N]\n1,2\n"),
            Err(DatasetError::MissingColumn("strain".into()))
        );
    }

    #[test]
    fn non_numeric_strain_reports_line() {
        let text = "Time [s],Strain\n0.0,0.001\n0.1,abc\n";
        assert!(matches!(
            parse_mechanical_csv(text),
            Err(DatasetError::MalformedRow { line: 3, .. })
        ));
    }

    #[test]
    fn time_series_export() {
        let text = "Time (s),Extension (mm),Load (N),Strain\n0.0,0.00,0.0,0.00000\n0.1,0.01,12.5,0.00002\n\n";
        let rows = parse_mechanical_csv(text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].strain, 0.00002);
        assert_eq!(rows[1].force, Some(12.5));
        assert_eq!(rows[1].displacement, Some(0.01));
        assert_eq!(rows[1].stress, None);
    }
}
