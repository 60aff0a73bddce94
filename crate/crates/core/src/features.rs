//! Feature vectors `[day one-hot | region one-hot | product one-hot | lagged sales]`
//! and the design matrix used for fitting.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{day_of_week, SalesRecord};
use crate::error::{Error, Result};
use crate::retail::{RetailEnvironmentSpec, DAYS_PER_WEEK};

const MIN_STD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub day_onehot: [f64; DAYS_PER_WEEK],
    pub region_onehot: Vec<f64>,
    pub product_onehot: Vec<f64>,
    pub prev_sales: f64,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        feature_dim(self.region_onehot.len(), self.product_onehot.len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.day_onehot);
        v.extend_from_slice(&self.region_onehot);
        v.extend_from_slice(&self.product_onehot);
        v.push(self.prev_sales);
        v
    }

    pub fn day(&self) -> usize {
        self.day_onehot.iter().position(|&x| x == 1.0).unwrap_or(0)
    }

    pub fn region(&self) -> usize {
        self.region_onehot.iter().position(|&x| x == 1.0).unwrap_or(0)
    }

    pub fn product(&self) -> usize {
        self.product_onehot.iter().position(|&x| x == 1.0).unwrap_or(0)
    }
}

pub const fn feature_dim(n: usize, k: usize) -> usize {
    DAYS_PER_WEEK + n + k + 1
}

/// Training-set moments of product-level previous revenue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SalesScaler {
    pub mean: f64,
    pub std: f64,
}

impl SalesScaler {
    pub fn scale(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Population mean and standard deviation, the latter floored at `1e-8`.
pub fn fit_scaler(values: &[f64]) -> Result<SalesScaler> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot fit scaler on empty input".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scaler input".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(SalesScaler { mean, std: var.sqrt().max(MIN_STD) })
}

pub fn extract_features(
    day: usize,
    region: usize,
    product: usize,
    prev_product_revenue: f64,
    scaler: &SalesScaler,
    n: usize,
    k: usize,
) -> Result<FeatureVector> {
    if day >= DAYS_PER_WEEK {
        return Err(Error::OutOfRange(format!("day {day}")));
    }
    if region >= n {
        return Err(Error::OutOfRange(format!("region {region} >= {n}")));
    }
    if product >= k {
        return Err(Error::OutOfRange(format!("product {product} >= {k}")));
    }
    let mut day_onehot = [0.0; DAYS_PER_WEEK];
    day_onehot[day] = 1.0;
    let mut region_onehot = vec![0.0; n];
    region_onehot[region] = 1.0;
    let mut product_onehot = vec![0.0; k];
    product_onehot[product] = 1.0;
    Ok(FeatureVector { day_onehot, region_onehot, product_onehot, prev_sales: scaler.scale(prev_product_revenue) })
}

/// Provenance of one design-matrix row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowIndex {
    pub date: NaiveDate,
    pub day_of_week: usize,
    pub region: usize,
    pub product: usize,
    /// Raw (unscaled) previous-day revenue of the product across regions.
    pub prev_product_revenue: f64,
}

/// Dense design matrix with targets and row labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub n_regions: usize,
    pub n_products: usize,
    /// Row-major `rows x (7 + n + k + 1)`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rows: Vec<RowIndex>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        feature_dim(self.n_regions, self.n_products)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.n_cols();
        &self.x[r * c..(r + 1) * c]
    }

    pub fn empty(n_regions: usize, n_products: usize) -> Self {
        Self { n_regions, n_products, x: Vec::new(), y: Vec::new(), rows: Vec::new() }
    }

    /// Rows whose indices satisfy `keep`, in order.
    pub fn select(&self, mut keep: impl FnMut(usize, &RowIndex) -> bool) -> Self {
        let mut out = Self::empty(self.n_regions, self.n_products);
        for (r, idx) in self.rows.iter().enumerate() {
            if keep(r, idx) {
                out.x.extend_from_slice(self.row(r));
                out.y.push(self.y[r]);
                out.rows.push(idx.clone());
            }
        }
        out
    }

    pub fn prices_per_row(&self, env: &RetailEnvironmentSpec) -> Vec<f64> {
        self.rows.iter().map(|r| env.prices[r.product]).collect()
    }
}

/// One usable observation with its resolved lag, before scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct LaggedRow {
    pub index: RowIndex,
    pub quantity: f64,
}

/// Resolves the previous-day product revenue for every record whose prior
/// calendar day is present. Records of the first day (or after a gap) are
/// dropped.
pub fn lagged_rows(records: &[SalesRecord], env: &RetailEnvironmentSpec) -> Result<Vec<LaggedRow>> {
    for w in records.windows(2) {
        if w[1].date < w[0].date {
            return Err(Error::InvalidInput(format!("dataset not sorted by date: {} after {}", w[1].date, w[0].date)));
        }
    }
    let k = env.n_products;
    let mut out = Vec::new();
    let mut prev_day: Option<(NaiveDate, Vec<f64>)> = None;
    let mut start = 0;
    while start < records.len() {
        let date = records[start].date;
        let mut end = start;
        while end < records.len() && records[end].date == date {
            end += 1;
        }
        let mut day: Vec<&SalesRecord> = records[start..end].iter().collect();
        day.sort_by_key(|r| (r.region_id, r.product_id));

        let mut product_revenue = vec![0.0; k];
        for r in &day {
            if r.region_id >= env.n_regions || r.product_id >= k {
                return Err(Error::OutOfRange(format!(
                    "record ({}, {}, {}) outside environment",
                    r.date, r.region_id, r.product_id
                )));
            }
            if !(r.quantity >= 0.0) || !r.quantity.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "negative or non-finite quantity {} on {}",
                    r.quantity, r.date
                )));
            }
            product_revenue[r.product_id] += env.prices[r.product_id] * r.quantity;
        }

        if let Some((pd, prev)) = &prev_day {
            if date.pred_opt() == Some(*pd) {
                let dow = day_of_week(date);
                for r in &day {
                    out.push(LaggedRow {
                        index: RowIndex {
                            date,
                            day_of_week: dow,
                            region: r.region_id,
                            product: r.product_id,
                            prev_product_revenue: prev[r.product_id],
                        },
                        quantity: r.quantity,
                    });
                }
            }
        }
        prev_day = Some((date, product_revenue));
        start = end;
    }
    Ok(out)
}

/// Assembles already-lagged rows into a design matrix.
pub fn assemble_design(rows: &[LaggedRow], env: &RetailEnvironmentSpec, scaler: &SalesScaler) -> Result<DesignMatrix> {
    let (n, k) = (env.n_regions, env.n_products);
    let mut dm = DesignMatrix::empty(n, k);
    dm.x.reserve(rows.len() * feature_dim(n, k));
    for row in rows {
        let idx = &row.index;
        let fv = extract_features(idx.day_of_week, idx.region, idx.product, idx.prev_product_revenue, scaler, n, k)?;
        dm.x.extend(fv.to_dense());
        dm.y.push(row.quantity);
        dm.rows.push(idx.clone());
    }
    Ok(dm)
}

pub fn build_design_matrix(
    records: &[SalesRecord],
    env: &RetailEnvironmentSpec,
    scaler: &SalesScaler,
) -> Result<DesignMatrix> {
    assemble_design(&lagged_rows(records, env)?, env, scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Days::new(u64::from(d))
    }

    fn rec(d: u32, i: usize, j: usize, q: f64) -> SalesRecord {
        SalesRecord { date: date(d), region_id: i, product_id: j, quantity: q, price: 1.0 }
    }

    #[test]
    fn scaler_examples() {
        let s = fit_scaler(&[0.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        let s = fit_scaler(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.std), (5.0, 1e-8));
        assert!(fit_scaler(&[]).is_err());
    }

    #[test]
    fn scaler_moments_from_known_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dist = Normal::new(40.0, 6.0).unwrap();
        let v: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let s = fit_scaler(&v).unwrap();
        assert!((s.mean - 40.0).abs() / 40.0 < 0.05);
        assert!((s.std - 6.0).abs() / 6.0 < 0.05);
    }

    #[test]
    fn scaling_is_invertible() {
        let s = SalesScaler { mean: 123.4, std: 7.25 };
        for &v in &[0.0, 1e-3, 99.0, 1.0e6] {
            let back = s.unscale(s.scale(v));
            assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn extract_examples() {
        let s = SalesScaler { mean: 10.0, std: 2.0 };
        let f = extract_features(0, 0, 0, 10.0, &s, 3, 2).unwrap();
        assert_eq!(f.day_onehot[0], 1.0);
        assert_eq!(f.region_onehot, vec![1.0, 0.0, 0.0]);
        assert_eq!(f.product_onehot, vec![1.0, 0.0]);
        assert_eq!(f.prev_sales, 0.0);
        assert_eq!(f.len(), 7 + 3 + 2 + 1);

        let f = extract_features(6, 2, 1, 12.0, &s, 3, 2).unwrap();
        assert_eq!(f.day_onehot[6], 1.0);
        assert_eq!(f.prev_sales, 1.0);
        assert!(extract_features(7, 0, 0, 0.0, &s, 3, 2).is_err());
        assert!(extract_features(0, 3, 0, 0.0, &s, 3, 2).is_err());
    }

    #[test]
    fn lag_boundary_drops_first_day() {
        let env = RetailEnvironmentSpec::with_line_adjacency(vec![2.0], 1, 1.0);
        let recs = vec![rec(0, 0, 0, 3.0), rec(1, 0, 0, 4.0)];
        let s = SalesScaler { mean: 0.0, std: 1.0 };
        let dm = build_design_matrix(&recs, &env, &s).unwrap();
        assert_eq!(dm.n_rows(), 1);
        assert_eq!(dm.y, vec![4.0]);
        assert_eq!(dm.rows[0].prev_product_revenue, 6.0);
    }

    #[test]
    fn dense_row_count_and_onehots() {
        let (n, k, t) = (3, 2, 6);
        let env = RetailEnvironmentSpec::with_line_adjacency(vec![1.0, 2.0], n, 1.0);
        let observed = [(0, 0), (1, 1), (2, 0)];
        let mut recs = Vec::new();
        for d in 0..t {
            for &(i, j) in &observed {
                recs.push(rec(d, i, j, f64::from(d) + i as f64));
            }
        }
        let s = SalesScaler { mean: 1.0, std: 3.0 };
        let dm = build_design_matrix(&recs, &env, &s).unwrap();
        assert_eq!(dm.n_rows(), (t as usize - 1) * observed.len());
        for r in 0..dm.n_rows() {
            let row = dm.row(r);
            assert_eq!(row.len(), feature_dim(n, k));
            assert_eq!(row[..7].iter().sum::<f64>(), 1.0);
            assert_eq!(row[7..7 + n].iter().sum::<f64>(), 1.0);
            assert_eq!(row[7 + n..7 + n + k].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn unsorted_and_negative_rejected() {
        let env = RetailEnvironmentSpec::with_line_adjacency(vec![1.0], 1, 1.0);
        let s = SalesScaler { mean: 0.0, std: 1.0 };
        assert!(build_design_matrix(&[rec(1, 0, 0, 1.0), rec(0, 0, 0, 1.0)], &env, &s).is_err());
        assert!(build_design_matrix(&[rec(0, 0, 0, 1.0), rec(1, 0, 0, -1.0)], &env, &s).is_err());
    }

    #[test]
    fn shuffled_then_sorted_is_bitwise_identical() {
        let env = RetailEnvironmentSpec::with_line_adjacency(vec![1.5, 2.5, 0.75], 4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut recs = Vec::new();
        for d in 0..20 {
            for i in 0..4 {
                for j in 0..3 {
                    if rng.random_bool(0.6) {
                        recs.push(rec(d, i, j, rng.random_range(0.0..9.0)));
                    }
                }
            }
        }
        let s = SalesScaler { mean: 4.0, std: 2.0 };
        let a = build_design_matrix(&recs, &env, &s).unwrap();
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut rng);
        shuffled.sort_by_key(|r| r.date);
        let b = build_design_matrix(&shuffled, &env, &s).unwrap();
        assert_eq!(
            a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.rows, b.rows);
    }
}
