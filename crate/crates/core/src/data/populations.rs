use std::collections::BTreeMap;

use super::DataError;

const BUNDLED: &str = include_str!("../../data/populations.csv");

/// Resident population by two-letter region code.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTable {
    entries: BTreeMap<String, (String, f64)>,
}

impl PopulationTable {
    /// Census estimates for the states, DC and the territories.
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED.as_bytes()).expect("bundled population table is valid")
    }

    /// Reads `code,name,population` rows.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| DataError::Malformed {
                row: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let row = rec.position().map(|p| p.line()).unwrap_or(0);
            let (Some(code), Some(name), Some(pop)) = (rec.get(0), rec.get(1), rec.get(2)) else {
                return Err(DataError::Malformed {
                    row,
                    message: "expected code,name,population".into(),
                });
            };
            let value: f64 = pop.parse().ok().filter(|v: &f64| v.is_finite() && *v > 0.0).ok_or_else(|| {
                DataError::BadNumber {
                    row,
                    column: "population".into(),
                    value: pop.into(),
                }
            })?;
            entries.insert(code.to_ascii_uppercase(), (name.to_string(), value));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, code: &str) -> Option<f64> {
        self.entries.get(code).map(|e| e.1)
    }

    pub fn name(&self, code: &str) -> Option<&str> {
        self.entries.get(code).map(|e| e.0.as_str())
    }

    pub fn insert(&mut self, code: &str, name: &str, population: f64) {
        self.entries
            .insert(code.to_ascii_uppercase(), (name.to_string(), population));
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
