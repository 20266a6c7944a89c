//! Feature matrix CSV: `flow_id,label,f000..f182`.

use std::io::{Read, Write};

use super::{FeatureVector, SCHEMA_VERSION, TOTAL_SLOTS};
use crate::error::{Error, Result};

pub fn feature_csv_header(width: usize) -> Vec<String> {
    let mut h = vec!["flow_id".to_string(), "label".to_string()];
    h.extend((0..width).map(|i| format!("f{i:03}")));
    h
}

pub fn write_feature_csv<W: Write>(vectors: &[FeatureVector], writer: W) -> Result<()> {
    let width = vectors.first().map_or(TOTAL_SLOTS, FeatureVector::len);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(feature_csv_header(width))?;
    for v in vectors {
        if v.len() != width {
            return Err(Error::DimensionMismatch { expected: width, actual: v.len() });
        }
        let mut row = Vec::with_capacity(width + 2);
        row.push(v.flow_ref.clone().unwrap_or_default());
        row.push(v.label.clone().unwrap_or_default());
        // `Display` for f64 prints the shortest string that parses back exactly.
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a full-schema feature matrix.
pub fn read_feature_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = feature_csv_header(TOTAL_SLOTS);
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::FeatureCsv {
            row: 1,
            message: format!("expected header flow_id,label,f000..f{:03}", TOTAL_SLOTS - 1),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::FeatureCsv { row, message: e.to_string() })?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::FeatureCsv { row, message: format!("bad value {s:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        let flow_ref = Some(rec[0].to_string()).filter(|s| !s.is_empty());
        let label = Some(rec[1].to_string()).filter(|s| !s.is_empty());
        out.push(FeatureVector { values, schema_version: SCHEMA_VERSION.to_string(), flow_ref, label });
    }
    Ok(out)
}
