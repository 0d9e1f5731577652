//! CSV datasets: a header naming `n` and `r`, optional `m` and `weight`, and
//! any further numeric columns as covariates in header order.

use std::io::{Read, Write};

use crate::model::{validate_observation, ClusterObservation};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub rows: Vec<ClusterObservation>,
}

impl Dataset {
    /// Keeps only the named covariate columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Dataset, CliError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|name| {
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| {
                        CliError::domain(format!(
                            "covariate `{name}` not in dataset (have: {})",
                            self.covariate_names.join(", ")
                        ))
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Dataset {
            covariate_names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|o| {
                    let cov = idx.iter().map(|&j| o.covariates[j]).collect();
                    o.clone().with_covariates(cov)
                })
                .collect(),
        })
    }
}

fn parse_count(field: &str, column: &str, row: usize) -> Result<usize, CliError> {
    field.parse::<usize>().map_err(|_| {
        CliError::parse(format!(
            "row {row}: column `{column}` must be a nonnegative integer, got `{field}`"
        ))
    })
}

fn parse_real(field: &str, column: &str, row: usize) -> Result<f64, CliError> {
    field.parse::<f64>().map_err(|_| {
        CliError::parse(format!(
            "row {row}: column `{column}` is not a number: `{field}`"
        ))
    })
}

/// Reads and validates a dataset. Rows are numbered from 1, not counting
/// the header.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset, CliError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| CliError::parse(format!("header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(n_col), Some(r_col)) = (find("n"), find("r")) else {
        return Err(CliError::parse("header must name columns `n` and `r`"));
    };
    let m_col = find("m");
    let w_col = find("weight");
    let cov_cols: Vec<usize> = (0..header.len())
        .filter(|&j| ![Some(n_col), Some(r_col), m_col, w_col].contains(&Some(j)))
        .collect();
    let mut names: Vec<&String> = cov_cols.iter().map(|&j| &header[j]).collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::parse(format!("duplicate column `{}`", w[0])));
    }

    let mut rows = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::parse(format!("row {row}: {e}")))?;
        let get = |j: usize| record.get(j).unwrap_or("");
        let mut obs = ClusterObservation::new(
            parse_count(get(n_col), "n", row)?,
            parse_count(get(r_col), "r", row)?,
        );
        if let Some(j) = m_col {
            obs.m = parse_count(get(j), "m", row)?;
        }
        if let Some(j) = w_col {
            obs.weight = parse_real(get(j), "weight", row)?;
        }
        obs.covariates = cov_cols
            .iter()
            .map(|&j| parse_real(get(j), &header[j], row))
            .collect::<Result<_, _>>()?;
        let report = validate_observation(&obs);
        if !report.is_valid() {
            return Err(CliError::parse(format!("row {row}: violates {report}")));
        }
        rows.push(obs);
    }
    if rows.is_empty() {
        return Err(CliError::parse("dataset has no rows"));
    }
    Ok(Dataset {
        covariate_names: cov_cols.iter().map(|&j| header[j].clone()).collect(),
        rows,
    })
}

/// Writes `n,r,m[,weight],covariates...`; the weight column appears only
/// when some row has weight other than 1.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<(), CliError> {
    let weighted = data.rows.iter().any(|o| o.weight != 1.0);
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["n".to_string(), "r".into(), "m".into()];
    if weighted {
        header.push("weight".into());
    }
    header.extend(data.covariate_names.iter().cloned());
    let io = |e: csv::Error| CliError::io(e.to_string());
    csv.write_record(&header).map_err(io)?;
    for o in &data.rows {
        let mut rec = vec![o.n.to_string(), o.r.to_string(), o.m.to_string()];
        if weighted {
            rec.push(o.weight.to_string());
        }
        rec.extend(o.covariates.iter().map(|x| x.to_string()));
        csv.write_record(&rec).map_err(io)?;
    }
    csv.flush().map_err(|e| CliError::io(e.to_string()))
}
