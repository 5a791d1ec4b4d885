//! The synchronised table layout: `index,Time,Strain,t,R1..Rn`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a written table reproduces every value bit for bit. Logger-only rows leave
//! `Time` and `Strain` empty; [`parse_resistance_csv`] reads those.

use std::fmt::Write as _;

use super::{AlignedRecord, DatasetError, ResistanceSample};

pub fn table1_header(channels: usize) -> String {
    let mut h = String::from("index,Time,Strain,t");
    for c in 1..=channels {
        write!(h, ",R{c}").expect("write to String");
    }
    h
}

/// One data line without the trailing newline.
pub fn format_table_row(
    index: u64,
    time: Option<f64>,
    strain: Option<f64>,
    t: f64,
    resistances: &[f64],
) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut line = format!("{index},{},{},{t}", opt(time), opt(strain));
    for r in resistances {
        write!(line, ",{r}").expect("write to String");
    }
    line
}

pub fn write_table1_csv(records: &[AlignedRecord]) -> Result<String, DatasetError> {
    let channels = records.first().map_or(0, |r| r.resistances.len());
    let mut out = table1_header(channels);
    out.push('\n');
    for (i, r) in records.iter().enumerate() {
        if r.resistances.len() != channels {
            return Err(DatasetError::ChannelMismatch {
                expected: channels,
                found: r.resistances.len(),
            });
        }
        out.push_str(&format_table_row(i as u64, Some(r.time), Some(r.strain), r.t, &r.resistances));
        out.push('\n');
    }
    Ok(out)
}

struct Layout {
    time: Option<usize>,
    strain: Option<usize>,
    t: usize,
    resistances: Vec<usize>,
}

fn layout(headers: &csv::StringRecord) -> Result<Layout, DatasetError> {
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let t = pos("t").ok_or_else(|| DatasetError::MissingColumn("t".into()))?;
    let strain = headers.iter().position(|h| h == "Strain" || h.starts_with("Strain "));
    let resistances = (1..)
        .map_while(|c| pos(&format!("R{c}")))
        .collect::<Vec<_>>();
    Ok(Layout {
        time: pos("Time"),
        strain,
        t,
        resistances,
    })
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn rows<F, T>(text: &str, mut row: F) -> Result<Vec<T>, DatasetError>
where
    F: FnMut(&Layout, &csv::StringRecord, u64) -> Result<T, DatasetError>,
{
    let mut rdr = reader(text);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    let layout = layout(&headers)?;
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        out.push(row(&layout, &record, line)?);
    }
    Ok(out)
}

fn field(record: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64, DatasetError> {
    let raw = record.get(col).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DatasetError::MalformedRow {
            line,
            reason: format!("{name} value {raw:?} is not a finite number"),
        })
}

fn resistances(layout: &Layout, record: &csv::StringRecord, line: u64) -> Result<Vec<f64>, DatasetError> {
    layout
        .resistances
        .iter()
        .enumerate()
        .map(|(i, &col)| field(record, col, &format!("R{}", i + 1), line))
        .collect()
}

/// Reads a full table; every row needs `Time` and `Strain`.
pub fn read_table1_csv(text: &str) -> Result<Vec<AlignedRecord>, DatasetError> {
    rows(text, |layout, record, line| {
        let time = layout.time.ok_or_else(|| DatasetError::MissingColumn("Time".into()))?;
        let strain = layout.strain.ok_or_else(|| DatasetError::MissingColumn("Strain".into()))?;
        Ok(AlignedRecord {
            time: field(record, time, "Time", line)?,
            strain: field(record, strain, "Strain", line)?,
            t: field(record, layout.t, "t", line)?,
            resistances: resistances(layout, record, line)?,
        })
    })
    .and_then(|records| {
        // Header-only input still has to name the mechanical columns.
        if records.is_empty() {
            let mut rdr = reader(text);
            let headers = rdr
                .headers()
                .map_err(|e| DatasetError::MalformedRow { line: 1, reason: e.to_string() })?;
            let l = layout(headers)?;
            l.time.ok_or_else(|| DatasetError::MissingColumn("Time".into()))?;
            l.strain.ok_or_else(|| DatasetError::MissingColumn("Strain".into()))?;
        }
        Ok(records)
    })
}

/// Reads the logger columns (`t`, `R1..Rn`) of any table in this layout,
/// ignoring the mechanical columns.
pub fn parse_resistance_csv(text: &str) -> Result<Vec<ResistanceSample>, DatasetError> {
    let samples = rows(text, |layout, record, line| {
        if layout.resistances.is_empty() {
            return Err(DatasetError::MissingColumn("R1".into()));
        }
        Ok(ResistanceSample {
            t: field(record, layout.t, "t", line)?,
            resistances: resistances(layout, record, line)?,
        })
    })?;
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = include_str!("../../tests/data/table1.csv");

    fn table1_records() -> Vec<AlignedRecord> {
        vec![
            AlignedRecord { time: 49.34, strain: 0.00002, t: 213.378, resistances: vec![50.988, 42.881] },
            AlignedRecord { time: 49.44, strain: 0.00001, t: 213.838, resistances: vec![51.002, 42.883] },
            AlignedRecord { time: 49.54, strain: 0.00001, t: 214.281, resistances: vec![50.994, 42.885] },
            AlignedRecord { time: 49.64, strain: 0.00001, t: 214.695, resistances: vec![50.990, 42.887] },
            AlignedRecord { time: 49.74, strain: 0.00001, t: 215.110, resistances: vec![50.992, 42.894] },
        ]
    }

    #[test]
    fn reads_table1_fixture() {
        assert_eq!(read_table1_csv(TABLE1).unwrap(), table1_records());
    }

    #[test]
    fn table1_round_trip() {
        let recs = table1_records();
        let text = write_table1_csv(&recs).unwrap();
        assert!(text.starts_with("index,Time,Strain,t,R1,R2\n0,49.34,0.00002,213.378,50.988,42.881\n"));
        assert_eq!(read_table1_csv(&text).unwrap(), recs);
    }

    #[test]
    fn empty_list_is_header_only() {
        let text = write_table1_csv(&[]).unwrap();
        assert_eq!(text, "index,Time,Strain,t\n");
        assert!(read_table1_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn eight_channel_header() {
        let rec = AlignedRecord { time: 0.0, strain: 0.0, t: 0.0, resistances: vec![1.0; 8] };
        let text = write_table1_csv(&[rec]).unwrap();
        assert_eq!(text.lines().next().unwrap(), "index,Time,Strain,t,R1,R2,R3,R4,R5,R6,R7,R8");
    }

    #[test]
    fn malformed_and_mismatched() {
        let text = "index,Time,Strain,t,R1\n0,1.0,x,2.0,3.0\n";
        assert!(matches!(read_table1_csv(text), Err(DatasetError::MalformedRow { line: 2, .. })));
        let recs = vec![
            AlignedRecord { time: 0.0, strain: 0.0, t: 0.0, resistances: vec![1.0] },
            AlignedRecord { time: 0.0, strain: 0.0, t: 0.0, resistances: vec![1.0, 2.0] },
        ];
        assert!(matches!(write_table1_csv(&recs), Err(DatasetError::ChannelMismatch { .. })));
    }

    #[test]
    fn logger_rows_without_mechanical_columns() {
        let mut text = table1_header(2);
        text.push('\n');
        text.push_str(&format_table_row(0, None, None, 0.25, &[47.0, 100.5]));
        text.push('\n');
        let res = parse_resistance_csv(&text).unwrap();
        assert_eq!(res, vec![ResistanceSample { t: 0.25, resistances: vec![47.0, 100.5] }]);
        assert!(matches!(read_table1_csv(&text), Err(DatasetError::MalformedRow { .. })));
        assert_eq!(parse_resistance_csv(TABLE1).unwrap()[0].t, 213.378);
    }
}
