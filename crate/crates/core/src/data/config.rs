//! Flat `key=value` run configuration with namespaced keys.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys are rejected. Keys whose default depends on the fit
//! preset hold the value `preset` until overridden.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use sha2::{Digest, Sha256};

use super::synthetic::{default_prices, BoardSchedule, SyntheticSpec, TruthSource};
use crate::baselines::{BaselineConfig, ForestConfig, MlpConfig, PolicyEvalConfig};
use crate::error::{Error, Result};
use crate::inference::{AdviConfig, FitConfig, InitMethod, MapConfig, MetricKind, Preset};
use crate::model::Hyperparams;
use crate::nn::OptimizerKind;
use crate::policies::DqnConfig;
use crate::retail::DAYS_PER_WEEK;
use crate::sim::ParamMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    U64,
    Usize,
    F64,
    Bool,
    Date,
    UsizeList,
    F64List,
    /// `preset` or an integer.
    PresetUsize,
    /// `auto`/`none` or an integer.
    OptUsize,
    Choice(&'static [&'static str]),
}

const INIT_CHOICES: &[&str] = &["preset", "map", "advi"];
const METRIC_CHOICES: &[&str] = &["diag", "dense"];
const OPTIMIZER_CHOICES: &[&str] = &["adam", "sgd"];
const MODE_CHOICES: &[&str] = &["posterior_draw", "posterior_mean"];
const SCHEDULE_CHOICES: &[&str] = &["random_walk", "static"];

const KEYS: &[(&str, &str, Kind)] = &[
    ("seed", "0", Kind::U64),
    ("model.hierarchical", "false", Kind::Bool),
    ("model.mu_r", "0", Kind::F64List),
    ("model.gamma_r", "25", Kind::F64),
    ("model.delta_p", "2.5", Kind::F64List),
    ("model.gamma_p", "25", Kind::F64),
    ("model.sigma_p", "2.5", Kind::F64),
    ("model.delta_t", "5,5,5,5,10,15,0", Kind::F64List),
    ("model.gamma_t", "10", Kind::F64),
    ("model.sigma_t", "2.5", Kind::F64),
    ("model.phi_s", "1", Kind::F64),
    ("model.psi_s", "2.5", Kind::F64),
    ("model.alpha_q", "1", Kind::F64),
    ("model.beta_q", "1", Kind::F64),
    ("model.b_scale", "10", Kind::F64),
    ("model.lkj_eta", "2", Kind::F64),
    ("nuts.chains", "preset", Kind::PresetUsize),
    ("nuts.tune", "preset", Kind::PresetUsize),
    ("nuts.draws", "preset", Kind::PresetUsize),
    ("nuts.target_accept", "0.8", Kind::F64),
    ("nuts.max_depth", "10", Kind::Usize),
    ("nuts.max_delta_h", "1000", Kind::F64),
    ("nuts.metric", "dense", Kind::Choice(METRIC_CHOICES)),
    ("nuts.max_divergent_fraction", "0.25", Kind::F64),
    ("fit.init", "preset", Kind::Choice(INIT_CHOICES)),
    ("fit.jitter", "0.1", Kind::F64),
    ("map.max_iter", "10000", Kind::Usize),
    ("map.grad_tol", "1e-6", Kind::F64),
    ("map.rel_tol", "1e-5", Kind::F64),
    ("advi.iterations", "200000", Kind::Usize),
    ("advi.step_size", "0.01", Kind::F64),
    ("advi.max_bad_steps", "100", Kind::Usize),
    ("predict.draws", "500", Kind::Usize),
    ("dqn.discount", "0.2", Kind::F64),
    ("dqn.learning_starts", "1500", Kind::Usize),
    ("dqn.batch_size", "32", Kind::Usize),
    ("dqn.learning_rate", "5e-4", Kind::F64),
    ("dqn.iterations", "50000", Kind::Usize),
    ("dqn.epsilon_start", "0.99", Kind::F64),
    ("dqn.epsilon_end", "0.05", Kind::F64),
    ("dqn.epsilon_anneal_fraction", "0.35", Kind::F64),
    ("dqn.target_sync_interval", "500", Kind::Usize),
    ("dqn.replay_capacity", "50000", Kind::Usize),
    ("dqn.hidden", "128,64", Kind::UsizeList),
    ("dqn.optimizer", "adam", Kind::Choice(OPTIMIZER_CHOICES)),
    ("dqn.log_interval", "1000", Kind::Usize),
    ("sim.horizon", "90", Kind::Usize),
    ("sim.placement_cost", "1", Kind::F64),
    ("sim.param_mode", "posterior_draw", Kind::Choice(MODE_CHOICES)),
    ("data.split_date", "2019-07-05", Kind::Date),
    ("baselines.rf_trees", "100", Kind::Usize),
    ("baselines.rf_max_features", "auto", Kind::OptUsize),
    ("baselines.rf_min_samples_split", "2", Kind::Usize),
    ("baselines.rf_max_depth", "none", Kind::OptUsize),
    ("baselines.mlp_hidden", "256,128", Kind::UsizeList),
    ("baselines.mlp_lr", "1e-3", Kind::F64),
    ("baselines.mlp_batch", "32", Kind::Usize),
    ("baselines.mlp_epochs", "200", Kind::Usize),
    ("eval.lengths", "30,60,90", Kind::UsizeList),
    ("eval.seeds", "5", Kind::Usize),
    ("gen.n_regions", "6", Kind::Usize),
    ("gen.n_products", "5", Kind::Usize),
    ("gen.horizon", "365", Kind::Usize),
    ("gen.start_date", "2018-08-01", Kind::Date),
    ("gen.placement_cost", "1", Kind::F64),
    ("gen.schedule", "random_walk", Kind::Choice(SCHEDULE_CHOICES)),
    ("gen.change_prob", "0.3", Kind::F64),
    ("gen.initial_occupancy", "0.5", Kind::F64),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, _, kind)| *kind)
}

fn check_value(key: &str, value: &str, kind: Kind) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {value:?}"));
    let list: Vec<&str> = value.split(',').map(str::trim).collect();
    match kind {
        Kind::U64 => value.parse::<u64>().map(|_| ()).map_err(|_| bad("an unsigned integer")),
        Kind::Usize => value.parse::<usize>().map(|_| ()).map_err(|_| bad("an unsigned integer")),
        Kind::F64 => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(bad("a finite number")),
        },
        Kind::Bool => value.parse::<bool>().map(|_| ()).map_err(|_| bad("true or false")),
        Kind::Date => NaiveDate::parse_from_str(value, "%Y-%m-%d").map(|_| ()).map_err(|_| bad("a YYYY-MM-DD date")),
        Kind::UsizeList => {
            if list.iter().all(|v| v.parse::<usize>().is_ok()) {
                Ok(())
            } else {
                Err(bad("a comma-separated list of integers"))
            }
        }
        Kind::F64List => {
            if list.iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)) {
                Ok(())
            } else {
                Err(bad("a comma-separated list of numbers"))
            }
        }
        Kind::PresetUsize => {
            if value == "preset" || value.parse::<usize>().is_ok() {
                Ok(())
            } else {
                Err(bad("`preset` or an unsigned integer"))
            }
        }
        Kind::OptUsize => {
            if value == "auto" || value == "none" || value.parse::<usize>().is_ok() {
                Ok(())
            } else {
                Err(bad("`auto`, `none` or an unsigned integer"))
            }
        }
        Kind::Choice(choices) => {
            if choices.contains(&value) {
                Ok(())
            } else {
                Err(bad(&format!("one of {}", choices.join(", "))))
            }
        }
    }
}

/// All configuration values, defaults included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RunConfig {
    /// Parses config text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.update(text, origin)?;
        Ok(cfg)
    }

    /// Applies the entries of `text` on top of the current values.
    pub fn update(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let kind = kind_of(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        check_value(key, value, kind)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _, _)| *k)
    }

    /// Every key, sorted, one `key=value` per line.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every known key has a value")
    }

    fn u64(&self, key: &str) -> u64 {
        self.raw(key).parse().expect("validated on set")
    }

    fn usize(&self, key: &str) -> usize {
        self.raw(key).parse().expect("validated on set")
    }

    fn f64(&self, key: &str) -> f64 {
        self.raw(key).parse().expect("validated on set")
    }

    fn bool(&self, key: &str) -> bool {
        self.raw(key).parse().expect("validated on set")
    }

    fn date(&self, key: &str) -> NaiveDate {
        NaiveDate::parse_from_str(self.raw(key), "%Y-%m-%d").expect("validated on set")
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Vec<T> {
        self.raw(key).split(',').map(|v| v.trim().parse().ok().expect("validated on set")).collect()
    }

    fn opt_usize(&self, key: &str) -> Option<usize> {
        self.raw(key).parse().ok()
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn hierarchical(&self) -> bool {
        self.bool("model.hierarchical")
    }

    /// Prior hyperparameters for an `n x k` store. A single value in a
    /// per-region or per-product list is broadcast.
    pub fn hyperparams(&self, n: usize, k: usize) -> Result<Hyperparams> {
        let sized = |key: &str, len: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = self.list(key);
            match v.len() {
                1 => Ok(vec![v[0]; len]),
                l if l == len => Ok(v),
                l => Err(Error::Config(format!("{key}: expected 1 or {len} values, got {l}"))),
            }
        };
        let diag = |d: usize, s: f64| {
            let mut m = vec![0.0; d * d];
            (0..d).for_each(|i| m[i * d + i] = s);
            m
        };
        let delta_t: Vec<f64> = self.list("model.delta_t");
        if delta_t.len() != DAYS_PER_WEEK {
            return Err(Error::Config(format!(
                "model.delta_t: expected {DAYS_PER_WEEK} values, got {}",
                delta_t.len()
            )));
        }
        let h = Hyperparams {
            mu_r: sized("model.mu_r", n)?,
            gamma_r: self.f64("model.gamma_r"),
            delta_p: sized("model.delta_p", k)?,
            gamma_p: diag(k, self.f64("model.gamma_p")),
            sigma_p: self.f64("model.sigma_p"),
            delta_t,
            gamma_t: diag(DAYS_PER_WEEK, self.f64("model.gamma_t")),
            sigma_t: self.f64("model.sigma_t"),
            phi_s: self.f64("model.phi_s"),
            psi_s: self.f64("model.psi_s"),
            alpha_q: self.f64("model.alpha_q"),
            beta_q: self.f64("model.beta_q"),
            b_scale: self.f64("model.b_scale"),
            lkj_eta: self.f64("model.lkj_eta"),
        };
        h.validate()?;
        Ok(h)
    }

    pub fn fit_config(&self, preset: Preset) -> FitConfig {
        let mut cfg = FitConfig::preset(preset, self.seed());
        let over = |key: &str, slot: &mut usize| {
            if let Some(v) = self.opt_usize(key) {
                *slot = v;
            }
        };
        over("nuts.chains", &mut cfg.nuts.chains);
        over("nuts.tune", &mut cfg.nuts.tune);
        over("nuts.draws", &mut cfg.nuts.draws);
        cfg.nuts.target_accept = self.f64("nuts.target_accept");
        cfg.nuts.max_depth = self.usize("nuts.max_depth");
        cfg.nuts.max_delta_h = self.f64("nuts.max_delta_h");
        cfg.nuts.metric = if self.raw("nuts.metric") == "dense" { MetricKind::Dense } else { MetricKind::Diag };
        cfg.nuts.max_divergent_fraction = self.f64("nuts.max_divergent_fraction");
        match self.raw("fit.init") {
            "map" => cfg.init = InitMethod::Map,
            "advi" => cfg.init = InitMethod::Advi,
            _ => {}
        }
        cfg.jitter = self.f64("fit.jitter");
        cfg.map = MapConfig {
            max_iter: self.usize("map.max_iter"),
            grad_tol: self.f64("map.grad_tol"),
            rel_tol: self.f64("map.rel_tol"),
        };
        cfg.advi = AdviConfig {
            iterations: self.usize("advi.iterations"),
            step_size: self.f64("advi.step_size"),
            max_bad_steps: self.usize("advi.max_bad_steps"),
            seed: self.seed(),
        };
        cfg.predict_draws = self.usize("predict.draws");
        cfg
    }

    pub fn dqn_config(&self) -> Result<DqnConfig> {
        let cfg = DqnConfig {
            discount: self.f64("dqn.discount"),
            learning_starts: self.usize("dqn.learning_starts"),
            batch_size: self.usize("dqn.batch_size"),
            learning_rate: self.f64("dqn.learning_rate"),
            training_iterations: self.usize("dqn.iterations"),
            epsilon_start: self.f64("dqn.epsilon_start"),
            epsilon_end: self.f64("dqn.epsilon_end"),
            epsilon_anneal_fraction: self.f64("dqn.epsilon_anneal_fraction"),
            target_sync_interval: self.usize("dqn.target_sync_interval"),
            replay_capacity: self.usize("dqn.replay_capacity"),
            hidden: self.list("dqn.hidden"),
            optimizer: if self.raw("dqn.optimizer") == "sgd" { OptimizerKind::Sgd } else { OptimizerKind::Adam },
            log_interval: self.usize("dqn.log_interval"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sim_horizon(&self) -> usize {
        self.usize("sim.horizon")
    }

    pub fn placement_cost(&self) -> f64 {
        self.f64("sim.placement_cost")
    }

    pub fn param_mode(&self) -> ParamMode {
        if self.raw("sim.param_mode") == "posterior_mean" {
            ParamMode::PosteriorMean
        } else {
            ParamMode::PosteriorDraw
        }
    }

    pub fn split_date(&self) -> NaiveDate {
        self.date("data.split_date")
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            forest: ForestConfig {
                n_trees: self.usize("baselines.rf_trees"),
                max_features: self.opt_usize("baselines.rf_max_features"),
                min_samples_split: self.usize("baselines.rf_min_samples_split"),
                max_depth: self.opt_usize("baselines.rf_max_depth"),
                bootstrap: true,
            },
            mlp: MlpConfig {
                hidden: self.list("baselines.mlp_hidden"),
                learning_rate: self.f64("baselines.mlp_lr"),
                batch_size: self.usize("baselines.mlp_batch"),
                epochs: self.usize("baselines.mlp_epochs"),
            },
        }
    }

    /// Policy comparison settings; the episode seed base is the run seed.
    pub fn policy_eval_config(&self, revenue_scale: f64) -> PolicyEvalConfig {
        PolicyEvalConfig {
            lengths: self.list("eval.lengths"),
            seeds: self.usize("eval.seeds"),
            base_seed: self.seed(),
            placement_cost: self.placement_cost(),
            revenue_scale,
            param_mode: self.param_mode(),
            init_board: None,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let k = self.usize("gen.n_products");
        SyntheticSpec {
            n_regions: self.usize("gen.n_regions"),
            n_products: k,
            horizon_days: self.usize("gen.horizon"),
            seed: self.seed(),
            start_date: self.date("gen.start_date"),
            prices: default_prices(k),
            placement_cost: self.f64("gen.placement_cost"),
            hierarchical: self.hierarchical(),
            truth: TruthSource::Prior,
            schedule: if self.raw("gen.schedule") == "static" {
                BoardSchedule::Static
            } else {
                BoardSchedule::RandomWalk { change_prob: self.f64("gen.change_prob") }
            },
            initial_occupancy: self.f64("gen.initial_occupancy"),
            initial_board: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_built_in_configs() {
        let c = RunConfig::default();
        assert_eq!(c.hyperparams(6, 5).unwrap(), Hyperparams::defaults(6, 5));
        assert_eq!(c.dqn_config().unwrap(), DqnConfig::default());
        assert_eq!(c.fit_config(Preset::Desk), FitConfig::preset(Preset::Desk, 0));
        assert_eq!(c.fit_config(Preset::Paper), FitConfig::preset(Preset::Paper, 0));
        assert_eq!(c.baseline_config(), BaselineConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("seed=3\nmodel.gamma=4\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("model.gamma"), "{err}");
        assert!(err.to_string().contains("cfg:2"), "{err}");
    }

    #[test]
    fn bad_value_rejected() {
        assert!(RunConfig::parse("dqn.discount=abc", "x").is_err());
        assert!(RunConfig::parse("nuts.metric=full", "x").is_err());
        assert!(RunConfig::parse("no equals sign", "x").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("# comment\n\nseed = 9\nnuts.tune=50\ndqn.iterations=2000\nmodel.gamma_r=4\n", "x")
            .unwrap();
        let f = c.fit_config(Preset::Paper);
        assert_eq!(f.nuts.tune, 50);
        assert_eq!(f.nuts.draws, 5000);
        assert_eq!(f.nuts.seed, 9);
        assert_eq!(c.dqn_config().unwrap().training_iterations, 2000);
        assert_eq!(c.hyperparams(2, 2).unwrap().gamma_r, 4.0);
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a = RunConfig::parse("seed=1\ndqn.discount=0.2", "a").unwrap();
        let b = RunConfig::parse("  dqn.discount = 0.2 \n# x\nseed=1", "b").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse("seed=2", "c").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn list_lengths_checked() {
        let c = RunConfig::parse("model.mu_r=1,2,3", "x").unwrap();
        assert!(c.hyperparams(2, 2).is_err());
        assert_eq!(c.hyperparams(3, 2).unwrap().mu_r, vec![1.0, 2.0, 3.0]);
        assert!(RunConfig::parse("model.delta_t=1,2", "x").unwrap().hyperparams(1, 1).is_err());
    }
}
