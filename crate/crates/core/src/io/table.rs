//! Feature dataset CSV.

use std::io::{Read, Write};

use super::FormatError;
use crate::meta::FeatureRow;

pub const FEATURE_COLUMNS: [&str; 15] = [
    "frame_id",
    "pred_index",
    "pred_label",
    "top_score",
    "xc_c_minus",
    "xc_c_plus",
    "xc_s_minus",
    "xc_s_plus",
    "xc_c_minus_valid",
    "xc_c_plus_valid",
    "xc_s_minus_valid",
    "xc_s_plus_valid",
    "n_points",
    "distance",
    "is_tp",
];

fn csv_error(e: csv::Error) -> FormatError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::Io(io),
        kind => FormatError::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_features<W: Write>(w: W, rows: &[FeatureRow]) -> Result<(), FormatError> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(FEATURE_COLUMNS).map_err(csv_error)?;
    }
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<Vec<FeatureRow>, FormatError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_error)?;
    if header.iter().ne(FEATURE_COLUMNS) {
        return Err(FormatError::Parse {
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: FeatureRow = row.map_err(csv_error)?;
        for (name, v) in [
            ("top_score", row.top_score),
            ("xc_c_minus", row.xc_c_minus),
            ("xc_c_plus", row.xc_c_plus),
            ("xc_s_minus", row.xc_s_minus),
            ("xc_s_plus", row.xc_s_plus),
            ("distance", row.distance),
        ] {
            if !v.is_finite() {
                return Err(FormatError::Parse {
                    line: out.len() + 2,
                    message: format!("{name} is not finite"),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}
