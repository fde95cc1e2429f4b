//! Long-format CSV: `series_id,time,feature,value,label`.
//!
//! One row per (series, time, feature) cell; an empty `value` marks a
//! missing cell and an empty `label` an unlabeled series.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, MaskedTimeSeries, Split};
use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["series_id", "time", "feature", "value", "label"];

#[derive(Clone, Debug, Default)]
pub struct CsvSchema {
    /// Fixed feature order; when `None`, order of first appearance.
    pub feature_names: Option<Vec<String>>,
    pub split: Option<Split>,
}

struct Pending {
    id: String,
    label: Option<usize>,
    label_line: usize,
    cells: Vec<(f64, usize, Option<f64>)>,
    last_time: f64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(1, format!("expected header `{}`", HEADER.join(","))));
    }
    let mut features: Vec<String> = schema.feature_names.clone().unwrap_or_default();
    let fixed_features = schema.feature_names.is_some();
    let mut feature_idx: HashMap<String, usize> =
        features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    let mut series: Vec<Pending> = Vec::new();
    let mut series_idx: HashMap<String, usize> = HashMap::new();

    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, found {}", rec.len())));
        }
        let id = &rec[0];
        let time: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad time `{}`", &rec[1])))?;
        if !time.is_finite() {
            return Err(parse_err(line, "non-finite time"));
        }
        let fidx = match feature_idx.get(&rec[2]) {
            Some(&i) => i,
            None if fixed_features => return Err(parse_err(line, format!("unknown feature `{}`", &rec[2]))),
            None => {
                features.push(rec[2].to_string());
                feature_idx.insert(rec[2].to_string(), features.len() - 1);
                features.len() - 1
            }
        };
        let value = match &rec[3] {
            "" => None,
            v => {
                let x: f64 = v.parse().map_err(|_| parse_err(line, format!("bad value `{v}`")))?;
                if !x.is_finite() {
                    return Err(parse_err(line, "non-finite value"));
                }
                Some(x)
            }
        };
        let label = match &rec[4] {
            "" => None,
            l => Some(
                l.parse::<usize>()
                    .map_err(|_| parse_err(line, format!("bad label `{l}`")))?,
            ),
        };
        let si = *series_idx.entry(id.to_string()).or_insert_with(|| {
            series.push(Pending {
                id: id.to_string(),
                label: None,
                label_line: 0,
                cells: Vec::new(),
                last_time: f64::NEG_INFINITY,
            });
            series.len() - 1
        });
        let p = &mut series[si];
        if time < p.last_time {
            return Err(parse_err(line, format!("non-monotone timestamp {time} in series `{id}`")));
        }
        p.last_time = time;
        if let Some(l) = label {
            match p.label {
                Some(prev) if prev != l => {
                    return Err(parse_err(
                        line,
                        format!("label {l} conflicts with label {prev} on line {}", p.label_line),
                    ))
                }
                _ => {
                    p.label = Some(l);
                    p.label_line = line;
                }
            }
        }
        if p.cells.iter().rev().take_while(|c| c.0 == time).any(|c| c.1 == fidx) {
            return Err(parse_err(line, format!("duplicate cell at time {time} in series `{id}`")));
        }
        p.cells.push((time, fidx, value));
    }

    let d = features.len();
    let horizon = series
        .iter()
        .map(|p| p.cells.last().map_or(0.0, |c| c.0) - p.cells.first().map_or(0.0, |c| c.0))
        .fold(0.0f64, f64::max);
    let mut out = Vec::with_capacity(series.len());
    for p in series {
        let mut times: Vec<f64> = p.cells.iter().map(|c| c.0).collect();
        times.dedup();
        let start = times[0];
        let t = times.len();
        let mut values = vec![0.0; t * d];
        let mut mask = vec![false; t * d];
        let mut ti = 0;
        for (time, f, v) in &p.cells {
            while times[ti] != *time {
                ti += 1;
            }
            if let Some(v) = v {
                values[ti * d + f] = *v;
                mask[ti * d + f] = true;
            }
        }
        let norm: Vec<f64> = times
            .iter()
            .map(|&x| if horizon > 0.0 { (x - start) / horizon } else { x - start })
            .collect();
        out.push(MaskedTimeSeries::new(p.id, norm, values, mask, d, p.label)?);
    }
    Dataset::new(out, features, schema.split.unwrap_or(Split::All))
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    write_csv(ds, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Writes every cell, so features appear in dataset order and the file
/// reloads to an identical dataset.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for s in &ds.series {
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        for (t, time) in s.times().iter().enumerate() {
            let time = time.to_string();
            for (j, name) in ds.feature_names.iter().enumerate() {
                let value = s.observed(t, j).map(|v| v.to_string()).unwrap_or_default();
                w.write_record([s.id.as_str(), &time, name, &value, &label])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_and_empty_cells_are_masked() {
        let text = "series_id,time,feature,value,label\n\
                    a,0,hr,80,1\n\
                    a,0,temp,37.1,1\n\
                    a,1,hr,82,1\n\
                    a,1,temp,,1\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.feature_names, vec!["hr", "temp"]);
        assert_eq!(ds.series[0].mask(), &[true, true, true, false]);
        assert_eq!(ds.series[0].label, Some(1));

        let sparse = "series_id,time,feature,value,label\na,0,hr,80,\na,0,temp,37,\na,1,hr,82,\n";
        let ds = read_csv(sparse.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.series[0].mask(), &[true, true, true, false]);
        assert_eq!(ds.series[0].label, None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "series_id,time,feature,value,label\na,0,hr,80,\na,zz,hr,1,\n";
        match read_csv(bad.as_bytes(), &CsvSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let back = "series_id,time,feature,value,label\na,1,hr,80,\na,0,hr,1,\n";
        match read_csv(back.as_bytes(), &CsvSchema::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "series_id,time,feature,value,label\na,1,hr,80,\na,1,hr,1,\n";
        assert!(read_csv(dup.as_bytes(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn times_rescaled_by_global_horizon() {
        let text = "series_id,time,feature,value,label\n\
                    a,10,x,1,\na,12,x,2,\na,14,x,3,\n\
                    b,5,x,1,\nb,7,x,2,\n";
        let ds = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.series[0].times(), &[0.0, 0.5, 1.0]);
        assert_eq!(ds.series[1].times(), &[0.0, 0.5]);
    }
}
