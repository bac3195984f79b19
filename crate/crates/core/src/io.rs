//! Dataset and draws files.
//!
//! The dataset CSV has exactly these columns, one row per year:
//!
//! ```text
//! year,count_f,count_m,effort,harvest_f,harvest_m,survey_f,survey_m,survey_sd_log
//! ```
//!
//! Empty survey cells mean no survey that year.

use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{
    validate_dataset, Dataset, HarvestRecord, IndexRecord, RawDataset, Survey, SurveyRecord,
};
use crate::sampler::DecodedDraws;

pub const DATASET_COLUMNS: [&str; 9] = [
    "year", "count_f", "count_m", "effort", "harvest_f", "harvest_m", "survey_f", "survey_m", "survey_sd_log",
];

fn parse_field<T: FromStr>(raw: &str, column: &str, line: u64) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("column `{column}`: cannot parse `{raw}`") })
}

/// Reads and validates a dataset CSV.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut pos = [0usize; 9];
    for (slot, col) in pos.iter_mut().zip(DATASET_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{col}`") })?;
    }
    if let Some(extra) = headers.iter().find(|h| !DATASET_COLUMNS.contains(h)) {
        return Err(Error::Parse { line: 1, message: format!("unknown column `{extra}`") });
    }

    let mut raw = RawDataset::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| rec.get(pos[i]).unwrap_or("");
        let year: i32 = parse_field(cell(0), DATASET_COLUMNS[0], line)?;
        raw.index.push(IndexRecord {
            year,
            count_female: parse_field(cell(1), DATASET_COLUMNS[1], line)?,
            count_male: parse_field(cell(2), DATASET_COLUMNS[2], line)?,
            effort: parse_field(cell(3), DATASET_COLUMNS[3], line)?,
        });
        raw.harvest.push(HarvestRecord {
            year,
            harvest_female: parse_field(cell(4), DATASET_COLUMNS[4], line)?,
            harvest_male: parse_field(cell(5), DATASET_COLUMNS[5], line)?,
        });
        let survey_cells = [cell(6), cell(7), cell(8)];
        match survey_cells.iter().filter(|c| c.is_empty()).count() {
            3 => {}
            0 => raw.surveys.push(SurveyRecord {
                year,
                survey: Survey {
                    est_female: parse_field(cell(6), DATASET_COLUMNS[6], line)?,
                    est_male: parse_field(cell(7), DATASET_COLUMNS[7], line)?,
                    sd_log: parse_field(cell(8), DATASET_COLUMNS[8], line)?,
                },
            }),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "survey_f, survey_m and survey_sd_log must be all present or all empty".into(),
                })
            }
        }
    }
    validate_dataset(raw)
}

/// Writes a dataset in the format accepted by [`read_dataset`].
pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_COLUMNS)?;
    for r in data.records() {
        let (sf, sm, sd) = match &r.survey {
            Some(s) => (s.est_female.to_string(), s.est_male.to_string(), s.sd_log.to_string()),
            None => Default::default(),
        };
        w.write_record([
            r.year.to_string(),
            r.count_female.to_string(),
            r.count_male.to_string(),
            r.effort.to_string(),
            r.harvest_female.to_string(),
            r.harvest_male.to_string(),
            sf,
            sm,
            sd,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a draws file, with the optional `chain` and `iteration` columns split off.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsTable {
    pub chains: Vec<u64>,
    pub iterations: Vec<usize>,
    pub draws: DecodedDraws,
}

/// Reads a numeric draws CSV such as the one written by
/// [`write_trace_csv`](crate::sampler::write_trace_csv).
pub fn read_draws<R: Read>(input: R) -> Result<DrawsTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let chain_col = headers.iter().position(|h| h == "chain");
    let iter_col = headers.iter().position(|h| h == "iteration");
    let value_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != chain_col && Some(i) != iter_col).collect();
    let names: Vec<String> = value_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut table = DrawsTable { chains: vec![], iterations: vec![], draws: DecodedDraws { names, rows: vec![] } };
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        table.chains.push(match chain_col {
            Some(i) => parse_field(&rec[i], "chain", line)?,
            None => 0,
        });
        table.iterations.push(match iter_col {
            Some(i) => parse_field(&rec[i], "iteration", line)?,
            None => k,
        });
        let row = value_cols
            .iter()
            .map(|&i| parse_field::<f64>(&rec[i], &headers[i], line))
            .collect::<Result<Vec<f64>>>()?;
        table.draws.rows.push(row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "year,count_f,count_m,effort,harvest_f,harvest_m,survey_f,survey_m,survey_sd_log\n\
                          2001,12,9,100,30,20,,,\n\
                          2002,15,11,120.5,25,22,410,300,0.1\n";

    #[test]
    fn round_trip() {
        let data = read_dataset(SAMPLE.as_bytes()).unwrap();
        assert_eq!(data.years(), 2);
        assert!(data.year(0).survey.is_none());
        assert_eq!(data.year(1).survey.unwrap().est_female, 410.0);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SAMPLE);
    }

    #[test]
    fn missing_column_is_named() {
        let text = SAMPLE.replace("effort,", "").replace(",100,", ",").replace(",120.5,", ",");
        let err = read_dataset(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("`effort`"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = SAMPLE.replace("15,11", "15,x");
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("count_m"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_survey_is_rejected() {
        let text = SAMPLE.replace("410,300,0.1", "410,,0.1");
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn draws_without_chain_columns() {
        let t = read_draws("r,k,sigma_f,sigma_m\n-1.6,0,0,0\n-1.5,0,0.1,0.1\n".as_bytes()).unwrap();
        assert_eq!(t.chains, vec![0, 0]);
        assert_eq!(t.iterations, vec![0, 1]);
        assert_eq!(t.draws.column("sigma_f").unwrap(), vec![0.0, 0.1]);
    }
}
