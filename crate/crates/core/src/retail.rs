//! Allocation-problem domain: environments, boards, actions and rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_WEEK: usize = 7;

/// A store: regions, their adjacency, the product catalog and the per-region
/// placement cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetailEnvironmentSpec {
    pub n_regions: usize,
    /// Row-major `n_regions x n_regions` 0/1 matrix.
    pub adjacency: Vec<Vec<u8>>,
    pub n_products: usize,
    pub prices: Vec<f64>,
    pub placement_cost: f64,
}

impl RetailEnvironmentSpec {
    /// Environment whose regions form a path graph.
    pub fn with_line_adjacency(prices: Vec<f64>, n_regions: usize, placement_cost: f64) -> Self {
        let adjacency =
            (0..n_regions).map(|i| (0..n_regions).map(|j| u8::from(i.abs_diff(j) == 1)).collect()).collect();
        Self { n_regions, adjacency, n_products: prices.len(), prices, placement_cost }
    }

    pub fn n_cells(&self) -> usize {
        self.n_regions * self.n_products
    }

    /// Size of the full action space, `2·n·k + 1`.
    pub fn n_actions(&self) -> usize {
        2 * self.n_cells() + 1
    }

    pub fn empty_board(&self) -> BoardConfig {
        BoardConfig::empty(self.n_regions, self.n_products)
    }
}

/// Checks every environment invariant and returns the spec unchanged.
pub fn validate_environment(spec: RetailEnvironmentSpec) -> Result<RetailEnvironmentSpec> {
    let n = spec.n_regions;
    if n == 0 {
        return Err(Error::InvalidEnvironment("n_regions must be at least 1".into()));
    }
    if spec.n_products == 0 {
        return Err(Error::InvalidEnvironment("n_products must be at least 1".into()));
    }
    if spec.prices.len() != spec.n_products {
        return Err(Error::InvalidEnvironment(format!(
            "expected {} prices, got {}",
            spec.n_products,
            spec.prices.len()
        )));
    }
    if let Some((j, p)) = spec.prices.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidEnvironment(format!("price of product {j} must be positive, got {p}")));
    }
    if !(spec.placement_cost.is_finite() && spec.placement_cost >= 0.0) {
        return Err(Error::InvalidEnvironment(format!(
            "placement cost must be non-negative, got {}",
            spec.placement_cost
        )));
    }
    if spec.adjacency.len() != n || spec.adjacency.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidEnvironment(format!("adjacency must be {n}x{n}")));
    }
    for i in 0..n {
        if spec.adjacency[i][i] != 0 {
            return Err(Error::InvalidEnvironment(format!("adjacency diagonal entry ({i},{i}) must be 0")));
        }
        for j in 0..n {
            let a = spec.adjacency[i][j];
            if a > 1 {
                return Err(Error::InvalidEnvironment(format!("adjacency entry ({i},{j}) must be 0 or 1, got {a}")));
            }
            if a != spec.adjacency[j][i] {
                return Err(Error::InvalidEnvironment(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(spec)
}

/// The `n x k` 0/1 grid recording which product is displayed in which region.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoardConfig {
    n_regions: usize,
    n_products: usize,
    cells: Vec<u8>,
}

impl BoardConfig {
    pub fn empty(n_regions: usize, n_products: usize) -> Self {
        Self { n_regions, n_products, cells: vec![0; n_regions * n_products] }
    }

    pub fn full(n_regions: usize, n_products: usize) -> Self {
        Self { n_regions, n_products, cells: vec![1; n_regions * n_products] }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("board rows must be non-empty and equal length".into()));
        }
        if rows.iter().flatten().any(|&c| c > 1) {
            return Err(Error::InvalidInput("board entries must be 0 or 1".into()));
        }
        Ok(Self { n_regions: n, n_products: k, cells: rows.concat() })
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_products(&self) -> usize {
        self.n_products
    }

    #[inline]
    pub fn get(&self, region: usize, product: usize) -> bool {
        self.cells[region * self.n_products + product] == 1
    }

    #[inline]
    pub fn set(&mut self, region: usize, product: usize, occupied: bool) {
        self.cells[region * self.n_products + product] = u8::from(occupied);
    }

    /// Row-major cell values.
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Iterator over occupied `(region, product)` pairs in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.n_products;
        self.cells.iter().enumerate().filter(|(_, &c)| c == 1).map(move |(idx, _)| (idx / k, idx % k))
    }

    pub fn region_occupied(&self, region: usize) -> bool {
        let k = self.n_products;
        self.cells[region * k..(region + 1) * k].contains(&1)
    }

    pub fn occupied_regions(&self) -> usize {
        (0..self.n_regions).filter(|&i| self.region_occupied(i)).count()
    }

    pub fn matches(&self, spec: &RetailEnvironmentSpec) -> bool {
        self.n_regions == spec.n_regions && self.n_products == spec.n_products
    }
}

/// A single daily decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    DoNothing,
    Place { region: usize, product: usize },
    Remove { region: usize, product: usize },
}

impl Action {
    /// Position in the fixed action ordering: `DoNothing`, then every
    /// `Place` in row-major cell order, then every `Remove`.
    pub fn index(&self, n_products: usize, n_cells: usize) -> usize {
        match *self {
            Action::DoNothing => 0,
            Action::Place { region, product } => 1 + region * n_products + product,
            Action::Remove { region, product } => 1 + n_cells + region * n_products + product,
        }
    }

    pub fn from_index(idx: usize, n_regions: usize, n_products: usize) -> Option<Self> {
        let n_cells = n_regions * n_products;
        match idx {
            0 => Some(Action::DoNothing),
            i if i <= n_cells => {
                let c = i - 1;
                Some(Action::Place { region: c / n_products, product: c % n_products })
            }
            i if i <= 2 * n_cells => {
                let c = i - 1 - n_cells;
                Some(Action::Remove { region: c / n_products, product: c % n_products })
            }
            _ => None,
        }
    }

    pub fn is_feasible(&self, board: &BoardConfig) -> bool {
        match *self {
            Action::DoNothing => true,
            Action::Place { region, product } => {
                region < board.n_regions() && product < board.n_products() && !board.get(region, product)
            }
            Action::Remove { region, product } => {
                region < board.n_regions() && product < board.n_products() && board.get(region, product)
            }
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::DoNothing => write!(f, "noop"),
            Action::Place { region, product } => write!(f, "place({region},{product})"),
            Action::Remove { region, product } => write!(f, "remove({region},{product})"),
        }
    }
}

/// MDP state: board, weekday (0 = Sunday), previous-day per-cell revenue and
/// absolute day counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub board: BoardConfig,
    pub day_of_week: usize,
    /// Row-major `n x k`, zero where the cell was unoccupied.
    pub prev_revenue: Vec<f64>,
    pub epoch_day: usize,
}

impl EnvState {
    pub fn new(board: BoardConfig, day_of_week: usize) -> Result<Self> {
        if day_of_week >= DAYS_PER_WEEK {
            return Err(Error::OutOfRange(format!("day of week {day_of_week}")));
        }
        let cells = board.n_regions() * board.n_products();
        Ok(Self { board, day_of_week, prev_revenue: vec![0.0; cells], epoch_day: 0 })
    }

    /// Previous-day revenue of `product` summed across regions.
    pub fn prev_product_revenue(&self, product: usize) -> f64 {
        let k = self.board.n_products();
        (0..self.board.n_regions()).map(|i| self.prev_revenue[i * k + product]).sum()
    }
}

/// `DoNothing` plus the one feasible toggle of every cell; always `n·k + 1` long.
pub fn feasible_actions(state: &EnvState) -> Vec<Action> {
    feasible_actions_for(&state.board)
}

pub fn feasible_actions_for(board: &BoardConfig) -> Vec<Action> {
    let mut out = Vec::with_capacity(board.cells().len() + 1);
    out.push(Action::DoNothing);
    for region in 0..board.n_regions() {
        for product in 0..board.n_products() {
            out.push(if board.get(region, product) {
                Action::Remove { region, product }
            } else {
                Action::Place { region, product }
            });
        }
    }
    out
}

/// Applies one action, rejecting infeasible ones.
pub fn apply_action(board: &BoardConfig, action: Action) -> Result<BoardConfig> {
    if !action.is_feasible(board) {
        return Err(Error::InfeasibleAction { action: action.to_string() });
    }
    let mut next = board.clone();
    match action {
        Action::DoNothing => {}
        Action::Place { region, product } => next.set(region, product, true),
        Action::Remove { region, product } => next.set(region, product, false),
    }
    Ok(next)
}

/// Daily reward: total revenue minus the placement cost of every region
/// holding at least one product.
pub fn reward(spec: &RetailEnvironmentSpec, board: &BoardConfig, quantities: &[f64]) -> Result<f64> {
    if !board.matches(spec) {
        return Err(Error::DimensionMismatch("board does not match environment".into()));
    }
    let revenue = total_revenue(&spec.prices, quantities)?;
    Ok(revenue - spec.placement_cost * board.occupied_regions() as f64)
}

/// Per-region revenue `sum_j p_j q_ij` for row-major `quantities`.
pub fn revenue_by_region(prices: &[f64], quantities: &[f64]) -> Result<Vec<f64>> {
    let k = prices.len();
    if k == 0 || !quantities.len().is_multiple_of(k) {
        return Err(Error::DimensionMismatch(format!("{} quantities for {k} products", quantities.len())));
    }
    Ok(quantities.chunks_exact(k).map(|row| row.iter().zip(prices).map(|(q, p)| p * q).sum()).collect())
}

pub fn total_revenue(prices: &[f64], quantities: &[f64]) -> Result<f64> {
    Ok(revenue_by_region(prices, quantities)?.iter().sum())
}

pub fn advance_day(day: usize) -> Result<usize> {
    if day >= DAYS_PER_WEEK {
        return Err(Error::OutOfRange(format!("day of week {day}")));
    }
    Ok((day + 1) % DAYS_PER_WEEK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(n: usize, prices: Vec<f64>, c: f64) -> RetailEnvironmentSpec {
        RetailEnvironmentSpec::with_line_adjacency(prices, n, c)
    }

    #[test]
    fn minimal_environment_is_valid() {
        let spec = RetailEnvironmentSpec {
            n_regions: 1,
            adjacency: vec![vec![0]],
            n_products: 1,
            prices: vec![1.0],
            placement_cost: 0.0,
        };
        assert_eq!(validate_environment(spec.clone()).unwrap(), spec);
    }

    #[test]
    fn diagonal_adjacency_rejected() {
        let mut spec = env(2, vec![1.0], 0.0);
        spec.adjacency[1][1] = 1;
        assert!(validate_environment(spec).is_err());
    }

    #[test]
    fn zero_price_rejected() {
        assert!(validate_environment(env(2, vec![1.0, 0.0], 0.0)).is_err());
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let mut spec = env(3, vec![1.0], 0.0);
        spec.adjacency[0][2] = 1;
        let err = validate_environment(spec).unwrap_err().to_string();
        assert!(err.contains("symmetric"), "{err}");
    }

    #[test]
    fn feasible_actions_on_empty_and_full() {
        let s = EnvState::new(BoardConfig::empty(2, 2), 0).unwrap();
        let acts = feasible_actions(&s);
        assert_eq!(acts.len(), 5);
        assert_eq!(acts[0], Action::DoNothing);
        assert!(acts[1..].iter().all(|a| matches!(a, Action::Place { .. })));

        let s = EnvState::new(BoardConfig::full(2, 2), 0).unwrap();
        let acts = feasible_actions(&s);
        assert_eq!(acts.len(), 5);
        assert!(acts[1..].iter().all(|a| matches!(a, Action::Remove { .. })));
    }

    #[test]
    fn single_occupied_cell() {
        let s = EnvState::new(BoardConfig::full(1, 1), 3).unwrap();
        assert_eq!(feasible_actions(&s), vec![Action::DoNothing, Action::Remove { region: 0, product: 0 }]);
    }

    #[test]
    fn place_and_noop() {
        let b = BoardConfig::empty(2, 2);
        assert_eq!(apply_action(&b, Action::DoNothing).unwrap(), b);
        let p = apply_action(&b, Action::Place { region: 0, product: 1 }).unwrap();
        assert_eq!(p.cells(), &[0, 1, 0, 0]);
        assert!(apply_action(&p, Action::Place { region: 0, product: 1 }).is_err());
        assert!(apply_action(&b, Action::Remove { region: 1, product: 1 }).is_err());
    }

    #[test]
    fn reward_examples() {
        let spec = env(1, vec![2.0], 1.0);
        let board = BoardConfig::full(1, 1);
        assert_eq!(reward(&spec, &board, &[3.0]).unwrap(), 5.0);

        let spec = env(2, vec![1.0, 1.0], 3.0);
        assert_eq!(reward(&spec, &spec.empty_board(), &[0.0; 4]).unwrap(), 0.0);

        let spec = env(1, vec![1.0, 1.0], 0.5);
        let board = BoardConfig::full(1, 2);
        assert_eq!(reward(&spec, &board, &[1.0, 1.0]).unwrap(), 1.5);
    }

    #[test]
    fn reward_dimension_mismatch() {
        let spec = env(2, vec![1.0], 0.0);
        assert!(reward(&spec, &BoardConfig::empty(3, 1), &[0.0; 3]).is_err());
        assert!(total_revenue(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn revenue_examples() {
        assert_eq!(revenue_by_region(&[2.0], &[1.0, 3.0]).unwrap(), vec![2.0, 6.0]);
        assert_eq!(total_revenue(&[2.0], &[1.0, 3.0]).unwrap(), 8.0);
        assert_eq!(total_revenue(&[2.0, 5.0], &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn day_cycle() {
        assert_eq!(advance_day(0).unwrap(), 1);
        assert_eq!(advance_day(6).unwrap(), 0);
        assert!(advance_day(7).is_err());
        let mut d = 4;
        for _ in 0..7 {
            d = advance_day(d).unwrap();
        }
        assert_eq!(d, 4);
    }

    #[test]
    fn action_index_round_trip() {
        let (n, k) = (3, 4);
        for idx in 0..2 * n * k + 1 {
            let a = Action::from_index(idx, n, k).unwrap();
            assert_eq!(a.index(k, n * k), idx);
        }
        assert!(Action::from_index(2 * n * k + 1, n, k).is_none());
    }

    fn board_strategy() -> impl Strategy<Value = BoardConfig> {
        (1usize..4, 1usize..4).prop_flat_map(|(n, k)| {
            proptest::collection::vec(0u8..2, n * k).prop_map(move |cells| {
                let rows: Vec<Vec<u8>> = cells.chunks(k).map(<[u8]>::to_vec).collect();
                BoardConfig::from_rows(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn place_remove_round_trip(board in board_strategy(), r in 0usize..4, p in 0usize..4) {
            let r = r % board.n_regions();
            let p = p % board.n_products();
            let (first, second) = if board.get(r, p) {
                (Action::Remove { region: r, product: p }, Action::Place { region: r, product: p })
            } else {
                (Action::Place { region: r, product: p }, Action::Remove { region: r, product: p })
            };
            let once = apply_action(&board, first).unwrap();
            prop_assert_eq!(apply_action(&once, second).unwrap(), board);
        }

        #[test]
        fn action_count_is_cells_plus_one(board in board_strategy(), day in 0usize..7) {
            let n = board.n_regions() * board.n_products();
            let s = EnvState::new(board, day).unwrap();
            prop_assert_eq!(feasible_actions(&s).len(), n + 1);
        }

        #[test]
        fn reward_monotone_in_cost(board in board_strategy(), c1 in 0.0f64..10.0, dc in 0.0f64..10.0, seed in 0u64..1000) {
            let k = board.n_products();
            let prices: Vec<f64> = (0..k).map(|j| 1.0 + j as f64 + (seed % 7) as f64).collect();
            let q: Vec<f64> = board.cells().iter().enumerate()
                .map(|(i, &c)| if c == 1 { ((seed as usize + i) % 5) as f64 } else { 0.0 }).collect();
            let lo = env(board.n_regions(), prices.clone(), c1);
            let hi = env(board.n_regions(), prices.clone(), c1 + dc);
            prop_assert!(reward(&hi, &board, &q).unwrap() <= reward(&lo, &board, &q).unwrap());
            let free = env(board.n_regions(), prices.clone(), 0.0);
            let occupied_revenue: f64 = board.occupied().map(|(i, j)| prices[j] * q[i * k + j]).sum();
            prop_assert!((reward(&free, &board, &q).unwrap() - occupied_revenue).abs() < 1e-9);
        }

        #[test]
        fn total_matches_double_loop(n in 1usize..5, k in 1usize..5, seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let prices: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..5.0)).collect();
            let q: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.0..10.0)).collect();
            let mut brute = 0.0;
            for i in 0..n {
                for j in 0..k {
                    brute += prices[j] * q[i * k + j];
                }
            }
            let by_region = revenue_by_region(&prices, &q).unwrap();
            prop_assert_eq!(by_region.len(), n);
            prop_assert!((total_revenue(&prices, &q).unwrap() - brute).abs() < 1e-9);
        }
    }
}
