use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::{Error, Result};

/// What the abscissa of a shelving dataset measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    /// Probe duration, stored in microseconds.
    TimeScan,
    /// Probe detuning from the carrier, stored as ordinary frequency in MHz.
    FrequencyScan,
}

impl ScanKind {
    fn header(self) -> &'static str {
        match self {
            ScanKind::TimeScan => "time_us",
            ScanKind::FrequencyScan => "detuning_MHz",
        }
    }

    fn from_header(name: &str) -> Option<Self> {
        match name.trim() {
            "time_us" | "abscissa_us" => Some(ScanKind::TimeScan),
            "detuning_MHz" | "abscissa_MHz" => Some(ScanKind::FrequencyScan),
            _ => None,
        }
    }

    /// Boundary value to SI (s or rad/s).
    pub fn to_si(self, value: f64) -> f64 {
        match self {
            ScanKind::TimeScan => value * 1e-6,
            ScanKind::FrequencyScan => 2.0 * PI * value * 1e6,
        }
    }

    /// SI value (s or rad/s) to boundary units.
    pub fn from_si(self, value: f64) -> f64 {
        match self {
            ScanKind::TimeScan => value * 1e6,
            ScanKind::FrequencyScan => value / (2.0 * PI * 1e6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShelvingRecord {
    /// Probe time (µs) or detuning (MHz), depending on the dataset kind.
    pub abscissa: f64,
    pub p_shelved: f64,
    pub sigma: f64,
}

/// Shelving probability versus probe time or detuning.
///
/// Abscissae are held in the file units so that CSV round trips are exact;
/// use [`ShelvingDataset::abscissae_si`] for computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ShelvingDataset {
    kind: ScanKind,
    records: Vec<ShelvingRecord>,
}

impl ShelvingDataset {
    pub fn new(kind: ScanKind, records: Vec<ShelvingRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if !r.abscissa.is_finite() {
                return Err(Error::Csv {
                    row,
                    message: "abscissa is not finite".into(),
                });
            }
            if !(0.0..=1.0).contains(&r.p_shelved) {
                return Err(Error::Csv {
                    row,
                    message: format!("p_shelved {} outside [0, 1]", r.p_shelved),
                });
            }
            if !(r.sigma.is_finite() && r.sigma > 0.0) {
                return Err(Error::Csv {
                    row,
                    message: format!("sigma {} must be > 0", r.sigma),
                });
            }
            if i > 0 && r.abscissa <= records[i - 1].abscissa {
                return Err(Error::Csv {
                    row,
                    message: "abscissae must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { kind, records })
    }

    /// Builds a dataset from SI abscissae (s or rad/s).
    pub fn from_si(kind: ScanKind, abscissae: &[f64], p: &[f64], sigma: &[f64]) -> Result<Self> {
        if abscissae.len() != p.len() || p.len() != sigma.len() {
            return Err(Error::invalid("dataset", "column lengths differ"));
        }
        let records = abscissae
            .iter()
            .zip(p)
            .zip(sigma)
            .map(|((&x, &p_shelved), &sigma)| ShelvingRecord {
                abscissa: kind.from_si(x),
                p_shelved,
                sigma,
            })
            .collect();
        Self::new(kind, records)
    }

    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn records(&self) -> &[ShelvingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn abscissae_si(&self) -> Vec<f64> {
        self.records.iter().map(|r| self.kind.to_si(r.abscissa)).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.p_shelved).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sigma).collect()
    }

    /// Writes `time_us|detuning_MHz,p_shelved,sigma` with LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([self.kind.header(), "p_shelved", "sigma"]).map_err(io)?;
        for r in &self.records {
            w.write_record([r.abscissa.to_string(), r.p_shelved.to_string(), r.sigma.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads a dataset; errors name the offending line (header = line 1).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv {
                row: 1,
                message: e.to_string(),
            })?
            .clone();
        let kind = headers
            .get(0)
            .and_then(ScanKind::from_header)
            .ok_or_else(|| Error::Csv {
                row: 1,
                message: "first column must be `time_us` or `detuning_MHz`".into(),
            })?;
        if headers.get(1) != Some("p_shelved") || headers.get(2) != Some("sigma") || headers.len() != 3 {
            return Err(Error::Csv {
                row: 1,
                message: format!("expected columns `{},p_shelved,sigma`", kind.header()),
            });
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Csv {
                row,
                message: e.to_string(),
            })?;
            let field = |k: usize, name: &str| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Csv {
                        row,
                        message: format!("missing `{name}`"),
                    })?
                    .parse::<f64>()
                    .map_err(|e| Error::Csv {
                        row,
                        message: format!("`{name}`: {e}"),
                    })
            };
            records.push(ShelvingRecord {
                abscissa: field(0, kind.header())?,
                p_shelved: field(1, "p_shelved")?,
                sigma: field(2, "sigma")?,
            });
        }
        Self::new(kind, records).map_err(|e| match e {
            Error::Csv { row, message } => Error::Csv { row: row + 1, message },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn malformed_row_is_named() {
        let text = "time_us,p_shelved,sigma\n1,0.1,0.01\n2,abc,0.01\n";
        let err = ShelvingDataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Csv { row: 3, .. }), "{err}");
        let text = "time_us,p_shelved,sigma\n1,0.1,0.01\n0.5,0.2,0.01\n";
        assert!(matches!(
            ShelvingDataset::read_csv(text.as_bytes()),
            Err(Error::Csv { row: 3, .. })
        ));
        let text = "seconds,p_shelved,sigma\n";
        assert!(matches!(
            ShelvingDataset::read_csv(text.as_bytes()),
            Err(Error::Csv { row: 1, .. })
        ));
    }

    #[test]
    fn header_declares_units() {
        let d = ShelvingDataset::from_si(ScanKind::FrequencyScan, &[2.0 * PI * 1e6], &[0.5], &[0.1]).unwrap();
        let text = d.to_csv_string();
        assert!(text.starts_with("detuning_MHz,p_shelved,sigma\n1,0.5,0.1\n"), "{text}");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(
            start in 0.0f64..10.0,
            steps in prop::collection::vec((1e-9f64..5.0, 0.0f64..=1.0, 1e-6f64..0.5), 1..30),
        ) {
            let mut x = start;
            let records: Vec<_> = steps.iter().map(|&(dx, p, s)| {
                x += dx;
                ShelvingRecord { abscissa: x, p_shelved: p, sigma: s }
            }).collect();
            let d = ShelvingDataset::new(ScanKind::TimeScan, records).unwrap();
            let back = ShelvingDataset::read_csv(d.to_csv_string().as_bytes()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
