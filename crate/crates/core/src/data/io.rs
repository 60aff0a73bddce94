//! CSV reading and writing with line-numbered validation errors.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use super::records::{Dataset, PlacementRecord, SalesRecord};
use crate::error::{Error, Result};
use crate::retail::RetailEnvironmentSpec;

pub const SALES_HEADER: [&str; 5] = ["date", "region_id", "product_id", "quantity", "price"];
pub const PLACEMENTS_HEADER: [&str; 3] = ["date", "region_id", "product_id"];

struct Source<'a> {
    path: &'a str,
}

impl Source<'_> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_string(), line, message: message.into() }
    }

    fn field<T: FromStr>(&self, rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
        let raw = rec.get(idx).ok_or_else(|| self.err(line, format!("missing column {name}")))?;
        raw.trim().parse().map_err(|_| self.err(line, format!("invalid {name} {raw:?}")))
    }

    fn date(&self, rec: &csv::StringRecord, line: usize) -> Result<NaiveDate> {
        let raw = rec.get(0).ok_or_else(|| self.err(line, "missing column date"))?;
        NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| self.err(line, format!("invalid date {raw:?}")))
    }

    fn check_header(&self, rdr: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
        let header = rdr.headers().map_err(|e| self.err(1, e.to_string()))?;
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != expected {
            return Err(self.err(1, format!("expected header {}, found {}", expected.join(","), got.join(","))));
        }
        Ok(())
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?)
}

/// Sales records with the file line each came from.
pub fn read_sales(path: &Path) -> Result<Vec<(usize, SalesRecord)>> {
    let name = path.display().to_string();
    let src = Source { path: &name };
    let mut rdr = reader(path)?;
    src.check_header(&mut rdr, &SALES_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            src.err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let quantity: f64 = src.field(&rec, 3, "quantity", line)?;
        if !(quantity >= 0.0 && quantity.is_finite()) {
            return Err(src.err(line, format!("quantity must be non-negative, got {quantity}")));
        }
        let price: f64 = src.field(&rec, 4, "price", line)?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(src.err(line, format!("price must be positive, got {price}")));
        }
        out.push((
            line,
            SalesRecord {
                date: src.date(&rec, line)?,
                region_id: src.field(&rec, 1, "region_id", line)?,
                product_id: src.field(&rec, 2, "product_id", line)?,
                quantity,
                price,
            },
        ));
    }
    Ok(out)
}

pub fn read_placements(path: &Path) -> Result<Vec<(usize, PlacementRecord)>> {
    let name = path.display().to_string();
    let src = Source { path: &name };
    let mut rdr = reader(path)?;
    src.check_header(&mut rdr, &PLACEMENTS_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            src.err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push((
            line,
            PlacementRecord {
                date: src.date(&rec, line)?,
                region_id: src.field(&rec, 1, "region_id", line)?,
                product_id: src.field(&rec, 2, "product_id", line)?,
            },
        ));
    }
    Ok(out)
}

/// Reads, validates and joins both files. Output is sorted by
/// `(date, region_id, product_id)`.
pub fn load_dataset(sales_path: &Path, placements_path: &Path, env: &RetailEnvironmentSpec) -> Result<Dataset> {
    let sales_name = sales_path.display().to_string();
    let placement_name = placements_path.display().to_string();
    let sales_src = Source { path: &sales_name };
    let placement_src = Source { path: &placement_name };

    let sales = read_sales(sales_path)?;
    let placements = read_placements(placements_path)?;

    let mut placed = HashSet::new();
    let mut seen_placement: HashMap<(NaiveDate, usize, usize), usize> = HashMap::new();
    for (line, p) in &placements {
        if p.region_id >= env.n_regions || p.product_id >= env.n_products {
            return Err(placement_src.err(*line, format!("unknown region {} or product {}", p.region_id, p.product_id)));
        }
        let key = (p.date, p.region_id, p.product_id);
        if let Some(first) = seen_placement.insert(key, *line) {
            return Err(placement_src.err(*line, format!("duplicate placement, first seen on line {first}")));
        }
        placed.insert(key);
    }

    let mut seen: HashMap<(NaiveDate, usize, usize), usize> = HashMap::new();
    let mut unplaced = Vec::new();
    for (line, r) in &sales {
        if r.region_id >= env.n_regions || r.product_id >= env.n_products {
            return Err(sales_src.err(*line, format!("unknown region {} or product {}", r.region_id, r.product_id)));
        }
        let key = (r.date, r.region_id, r.product_id);
        if let Some(first) = seen.insert(key, *line) {
            return Err(sales_src.err(
                *line,
                format!(
                    "duplicate (date, region_id, product_id) = ({}, {}, {}), first seen on line {first}",
                    r.date, r.region_id, r.product_id
                ),
            ));
        }
        if !placed.contains(&key) {
            unplaced.push(*line);
        }
    }
    if !unplaced.is_empty() {
        let shown: Vec<String> = unplaced.iter().take(20).map(usize::to_string).collect();
        return Err(sales_src.err(
            unplaced[0],
            format!(
                "{} sales rows have no matching placement (lines {}{})",
                unplaced.len(),
                shown.join(", "),
                if unplaced.len() > 20 { ", ..." } else { "" }
            ),
        ));
    }

    let mut sales: Vec<SalesRecord> = sales.into_iter().map(|(_, r)| r).collect();
    sales.sort_by_key(|r| (r.date, r.region_id, r.product_id));
    let mut placements: Vec<PlacementRecord> = placements.into_iter().map(|(_, p)| p).collect();
    placements.sort();
    Ok(Dataset { sales, placements })
}

pub fn write_sales(path: &Path, records: &[SalesRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SALES_HEADER)?;
    for r in records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            r.region_id.to_string(),
            r.product_id.to_string(),
            r.quantity.to_string(),
            r.price.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_placements(path: &Path, records: &[PlacementRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PLACEMENTS_HEADER)?;
    for r in records {
        w.write_record([r.date.format("%Y-%m-%d").to_string(), r.region_id.to_string(), r.product_id.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows dated before `split_date` train; the rest test.
pub fn train_test_split(data: &Dataset, split_date: NaiveDate) -> Result<(Dataset, Dataset)> {
    let (train_s, test_s): (Vec<_>, Vec<_>) = data.sales.iter().cloned().partition(|r| r.date < split_date);
    if train_s.is_empty() {
        return Err(Error::InvalidInput(format!("no training rows before {split_date}")));
    }
    if test_s.is_empty() {
        return Err(Error::InvalidInput(format!("no test rows on or after {split_date}")));
    }
    let (train_p, test_p): (Vec<_>, Vec<_>) = data.placements.iter().cloned().partition(|p| p.date < split_date);
    Ok((Dataset { sales: train_s, placements: train_p }, Dataset { sales: test_s, placements: test_p }))
}

/// The split date used when none is configured.
pub fn default_split_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 7, 5).expect("valid date")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn env() -> RetailEnvironmentSpec {
        RetailEnvironmentSpec::with_line_adjacency(vec![1.0, 2.0], 2, 0.0)
    }

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    const PLACEMENTS: &str = "date,region_id,product_id\n2019-01-01,0,0\n2019-01-01,1,1\n2019-01-02,0,0\n";

    #[test]
    fn well_formed_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(
            dir.path(),
            "s.csv",
            "date,region_id,product_id,quantity,price\n2019-01-02,0,0,3,1.0\n2019-01-01,1,1,2.5,2.0\n2019-01-01,0,0,0,1.0\n",
        );
        let p = write(dir.path(), "p.csv", PLACEMENTS);
        let d = load_dataset(&s, &p, &env()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.sales[0].date, NaiveDate::from_ymd_opt(2019, 1, 1).unwrap());
        assert_eq!((d.sales[0].region_id, d.sales[1].region_id), (0, 1));
    }

    #[test]
    fn duplicate_key_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(
            dir.path(),
            "s.csv",
            "date,region_id,product_id,quantity,price\n2019-01-01,0,0,3,1.0\n2019-01-01,0,0,4,1.0\n",
        );
        let p = write(dir.path(), "p.csv", PLACEMENTS);
        match load_dataset(&s, &p, &env()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_quantity_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "date,region_id,product_id,quantity,price\n2019-01-01,0,0,-1,1.0\n");
        let p = write(dir.path(), "p.csv", PLACEMENTS);
        assert!(matches!(load_dataset(&s, &p, &env()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_ids_and_missing_placements_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.csv", PLACEMENTS);
        let s = write(dir.path(), "s.csv", "date,region_id,product_id,quantity,price\n2019-01-01,5,0,1,1.0\n");
        assert!(load_dataset(&s, &p, &env()).is_err());
        let s = write(dir.path(), "s2.csv", "date,region_id,product_id,quantity,price\n2019-01-02,1,1,1,2.0\n");
        match load_dataset(&s, &p, &env()) {
            Err(Error::Parse { line: 2, message, .. }) => assert!(message.contains("no matching placement")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_date_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.csv", PLACEMENTS);
        let s = write(
            dir.path(),
            "s.csv",
            "date,region_id,product_id,quantity,price\n2019-01-01,0,0,1,1\n2019-13-01,0,0,1,1\n",
        );
        assert!(matches!(load_dataset(&s, &p, &env()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn split_partitions_rows() {
        let day = |d: u32| NaiveDate::from_ymd_opt(2019, 7, d).unwrap();
        let data = Dataset {
            sales: (1..=9)
                .map(|d| SalesRecord { date: day(d), region_id: 0, product_id: 0, quantity: 1.0, price: 1.0 })
                .collect(),
            placements: vec![],
        };
        let (tr, te) = train_test_split(&data, default_split_date()).unwrap();
        assert_eq!(tr.len(), 4);
        assert_eq!(tr.len() + te.len(), data.len());
        assert!(train_test_split(&data, day(1)).is_err());
        assert!(train_test_split(&data, day(10)).is_err());
    }
}
