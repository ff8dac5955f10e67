use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{AnomalyError, AnomalyLabel};
use crate::channel::Channel;

/// One row of a label stream: `station_id,timestamp,channel,label,residual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub station_id: String,
    pub timestamp: DateTime<Utc>,
    pub channel: Channel,
    pub label: AnomalyLabel,
    pub residual: f64,
}

pub fn write_labels_csv<W: Write>(records: &[LabelRecord], writer: W) -> Result<(), AnomalyError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| AnomalyError::Io {
        path: "<labels>".into(),
        source,
    })?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<LabelRecord>, AnomalyError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(AnomalyError::from))
        .collect()
}

impl LabelRecord {
    pub fn write_file(records: &[LabelRecord], path: impl AsRef<Path>) -> Result<(), AnomalyError> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|source| AnomalyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        write_labels_csv(records, f)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>, AnomalyError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|source| AnomalyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        read_labels_csv(f)
    }
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            LabelRecord {
                station_id: "A1".into(),
                timestamp: Utc.with_ymd_and_hms(2020, 1, 2, 3, 0, 0).unwrap(),
                channel: Channel::Road,
                label: AnomalyLabel::Anomaly,
                residual: -4.125,
            },
            LabelRecord {
                station_id: "A1".into(),
                timestamp: Utc.with_ymd_and_hms(2020, 1, 2, 4, 0, 0).unwrap(),
                channel: Channel::Humidity,
                label: AnomalyLabel::Normal,
                residual: 0.1 + 0.2,
            },
        ];
        let mut buf = Vec::new();
        write_labels_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("station_id,timestamp,channel,label,residual\n"));
        assert!(text.contains(",road,-1,"));
        assert_eq!(read_labels_csv(&buf[..]).unwrap(), recs);
    }
}
