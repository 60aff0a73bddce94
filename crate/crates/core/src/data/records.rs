use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// One day of sales for one product in one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SalesRecord {
    pub date: NaiveDate,
    pub region_id: usize,
    pub product_id: usize,
    pub quantity: f64,
    pub price: f64,
}

/// Asserts that a product was displayed in a region on a date.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub date: NaiveDate,
    pub region_id: usize,
    pub product_id: usize,
}

/// Weekday index with Sunday as 0.
pub fn day_of_week(date: NaiveDate) -> usize {
    date.weekday().num_days_from_sunday() as usize
}

/// Joined, date-sorted sales and placements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub sales: Vec<SalesRecord>,
    pub placements: Vec<PlacementRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sales.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<NaiveDate> = self.sales.iter().map(|r| r.date).collect();
        d.dedup();
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sunday_is_zero() {
        // 2019-07-07 was a Sunday
        assert_eq!(day_of_week(NaiveDate::from_ymd_opt(2019, 7, 7).unwrap()), 0);
        assert_eq!(day_of_week(NaiveDate::from_ymd_opt(2019, 7, 13).unwrap()), 6);
    }
}
