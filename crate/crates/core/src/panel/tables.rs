use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Input-output coefficients between 3-digit sectors. `coeff(k, l)` is the
/// intermediate use of upstream sector `l`'s output per unit of downstream
/// sector `k`'s output.
#[derive(Debug, Clone, PartialEq)]
pub struct IOTable {
    sectors: Vec<String>,
    position: BTreeMap<String, usize>,
    coeffs: Vec<f64>,
}

impl IOTable {
    /// `coeffs` is row-major with rows indexed by the downstream sector.
    pub fn new(sectors: Vec<String>, coeffs: Vec<f64>) -> Result<Self> {
        let n = sectors.len();
        if coeffs.len() != n * n {
            return Err(Error::InvalidTable(format!(
                "io table has {} coefficients for {n} sectors",
                coeffs.len()
            )));
        }
        if let Some(v) = coeffs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidTable(format!(
                "io coefficient {v} is not finite and >= 0"
            )));
        }
        let position: BTreeMap<String, usize> = sectors.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if position.len() != n {
            return Err(Error::InvalidTable("duplicate sector label in io table".into()));
        }
        Ok(IOTable {
            sectors,
            position,
            coeffs,
        })
    }

    pub fn zeros(sectors: Vec<String>) -> Result<Self> {
        let n = sectors.len();
        IOTable::new(sectors, vec![0.0; n * n])
    }

    pub fn sectors(&self) -> &[String] {
        &self.sectors
    }

    pub fn contains(&self, sector: &str) -> bool {
        self.position.contains_key(sector)
    }

    pub fn index(&self, sector: &str) -> Option<usize> {
        self.position.get(sector).copied()
    }

    /// Coefficient by position: downstream `k`, upstream `l`.
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.coeffs[k * self.sectors.len() + l]
    }

    pub fn coeff(&self, downstream: &str, upstream: &str) -> Option<f64> {
        Some(self.at(self.index(downstream)?, self.index(upstream)?))
    }

    pub fn set(&mut self, downstream: &str, upstream: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidTable(format!(
                "io coefficient {value} is not finite and >= 0"
            )));
        }
        let k = self
            .index(downstream)
            .ok_or_else(|| Error::UnknownSector(downstream.to_string()))?;
        let l = self
            .index(upstream)
            .ok_or_else(|| Error::UnknownSector(upstream.to_string()))?;
        let n = self.sectors.len();
        self.coeffs[k * n + l] = value;
        Ok(())
    }

    /// Reads long-format `row_sector,col_sector,coeff`; rows are downstream
    /// sectors. Cells not listed are zero.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut entries = Vec::new();
        let mut labels = BTreeSet::new();
        for rec in rdr.deserialize() {
            let (row, col, v): (String, String, f64) = rec?;
            labels.insert(row.clone());
            labels.insert(col.clone());
            entries.push((row, col, v));
        }
        let mut table = IOTable::zeros(labels.into_iter().collect())?;
        for (row, col, v) in entries {
            table.set(&row, &col, v)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    /// Writes non-zero coefficients in long format. The diagonal is always
    /// written so that sectors without any linkage survive a round trip.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row_sector", "col_sector", "coeff"])?;
        let n = self.sectors.len();
        for k in 0..n {
            for l in 0..n {
                let v = self.at(k, l);
                if v != 0.0 || k == l {
                    out.write_record([&self.sectors[k], &self.sectors[l], &v.to_string()])?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("<io table>", e))?;
        Ok(())
    }
}

/// Province to island-group lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProvinceIslandMap {
    pub map: BTreeMap<String, String>,
}

impl ProvinceIslandMap {
    pub fn island(&self, province: &str) -> Option<&str> {
        self.map.get(province).map(String::as_str)
    }

    /// Reads `province,island`.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut map = BTreeMap::new();
        for rec in rdr.deserialize() {
            let (p, i): (String, String) = rec?;
            if let Some(prev) = map.insert(p.clone(), i.clone()) {
                if prev != i {
                    return Err(Error::InvalidTable(format!(
                        "province {p} mapped to both {prev} and {i}"
                    )));
                }
            }
        }
        Ok(ProvinceIslandMap { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["province", "island"])?;
        for (p, i) in &self.map {
            out.write_record([p, i])?;
        }
        out.flush().map_err(|e| Error::io("<islands>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn io_table_round_trip() {
        let csv = "row_sector,col_sector,coeff\n151,152,0.3\n152,151,0.1\n";
        let t = IOTable::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(t.sectors(), &["151".to_string(), "152".to_string()]);
        assert_eq!(t.coeff("151", "152"), Some(0.3));
        assert_eq!(t.coeff("152", "152"), Some(0.0));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(IOTable::from_reader(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn unlinked_sector_survives_round_trip() {
        let t = IOTable::new(vec!["101".into(), "102".into(), "103".into()], {
            let mut c = vec![0.0; 9];
            c[1] = 0.2;
            c
        })
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = IOTable::from_reader(buf.as_slice()).unwrap();
        assert!(back.contains("103"));
        assert_eq!(back, t);
    }

    #[test]
    fn negative_coefficient_rejected() {
        assert!(IOTable::from_reader("row_sector,col_sector,coeff\n1,2,-0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn island_lookup() {
        let m = ProvinceIslandMap::from_reader("province,island\nP1,Java\nP2,Java\n".as_bytes()).unwrap();
        assert_eq!(m.island("P2"), Some("Java"));
    }
}
