use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context as _, Result};
use serde::Serialize;

use shelfsim::baselines::{
    evaluate_models, evaluate_policies as run_policy_eval, MetricReport, PolicyKind, PolicySuite,
};
use shelfsim::data::{
    generate_synthetic, load_dataset, read_env_file, read_posterior, read_qnet, write_posterior, write_qnet,
    write_synthetic, Dataset, EnvFile, PosteriorHeader, RunConfig, ENV_FILE, PLACEMENTS_FILE, SALES_FILE,
};
use shelfsim::inference::{fit_model, predict_revenue, ParamDiagnostics, PosteriorDraws, Preset};
use shelfsim::model::DemandModel;
use shelfsim::pipeline::{posterior_source, prepare, train_policy_network, PreparedData, TrainingEnv};

use crate::manifest::RunManifest;

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub enum Outcome {
    Success,
    FitFailed,
}

impl Context {
    fn load_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        Ok(cfg)
    }
}

/// `dir/<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_store(data_dir: &Path, manifest: &mut RunManifest) -> Result<(EnvFile, Dataset)> {
    let env_path = data_dir.join(ENV_FILE);
    let sales = data_dir.join(SALES_FILE);
    let placements = data_dir.join(PLACEMENTS_FILE);
    let env = read_env_file(&env_path).with_context(|| format!("reading {}", env_path.display()))?;
    let data = load_dataset(&sales, &placements, &env.environment)?;
    for p in [&env_path, &sales, &placements] {
        manifest.input(p)?;
    }
    Ok((env, data))
}

pub fn gen_data(ctx: &Context, spec: Option<&Path>, out_dir: &Path) -> Result<Outcome> {
    let mut cfg = ctx.load_config()?;
    if let Some(p) = spec {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
        cfg.update(&text, &p.display().to_string())?;
        if let Some(s) = ctx.seed {
            cfg.set("seed", &s.to_string())?;
        }
    }
    let mut manifest = RunManifest::new("gen-data", cfg.hash(), cfg.seed());
    if let Some(p) = spec {
        manifest.input(p)?;
    }
    let t = Instant::now();
    let data = generate_synthetic(&cfg.synthetic_spec())?;
    manifest.timings.insert("generate".into(), t.elapsed().as_secs_f64());
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for p in write_synthetic(&data, out_dir)? {
        manifest.output(&p)?;
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "wrote {} sales rows for {} regions x {} products to {}",
        data.dataset.sales.len(),
        data.env.n_regions,
        data.env.n_products,
        out_dir.display()
    );
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct ParamReport<'a> {
    name: &'a str,
    mean: f64,
    #[serde(flatten)]
    diagnostics: &'a ParamDiagnostics,
}

#[derive(Serialize)]
struct FitReport<'a> {
    config_hash: &'a str,
    failed: bool,
    max_rhat: Option<f64>,
    divergences: usize,
    chain_stats: &'a [shelfsim::inference::ChainStats],
    parameters: Vec<ParamReport<'a>>,
}

pub fn fit(ctx: &Context, data_dir: &Path, preset: Preset, out: &Path) -> Result<Outcome> {
    let cfg = ctx.load_config()?;
    let hash = cfg.hash();
    let mut manifest = RunManifest::new("fit", hash.clone(), cfg.seed());
    let (env_file, data) = load_store(data_dir, &mut manifest)?;
    let env = env_file.environment;
    let prep = prepare(&data, &env, cfg.split_date())?;
    let model = DemandModel::new(cfg.hyperparams(env.n_regions, env.n_products)?, cfg.hierarchical())?;
    let fit_cfg = cfg.fit_config(preset);
    println!(
        "fitting {} parameters on {} rows: {} chains, {} tuning + {} draws each",
        model.dim(),
        prep.train.n_rows(),
        fit_cfg.nuts.chains,
        fit_cfg.nuts.tune,
        fit_cfg.nuts.draws
    );
    let t = Instant::now();
    let draws = fit_model(&model, &prep.train, &fit_cfg)?;
    manifest.timings.insert("fit".into(), t.elapsed().as_secs_f64());

    let layout = *model.layout();
    let header = PosteriorHeader {
        config_hash: hash.clone(),
        seed: cfg.seed(),
        dim: draws.dim,
        param_names: layout.names(),
        hierarchical: layout.hierarchical,
        chain_count: draws.chain_count,
        samples_per_chain: draws.samples_per_chain,
        tune: draws.tune,
        environment: env,
        hyper: model.hyper().clone(),
        scaler: prep.scaler,
        revenue_scale: prep.revenue_scale,
        diagnostics: draws.diagnostics.clone(),
        chain_stats: draws.chain_stats.clone(),
        failed: draws.failed,
    };
    ensure_parent(out)?;
    write_posterior(out, &header, &draws)?;
    manifest.output(out)?;

    let means = draws.mean();
    let report = FitReport {
        config_hash: &hash,
        failed: draws.failed,
        max_rhat: draws.max_rhat(),
        divergences: draws.total_divergences(),
        chain_stats: &draws.chain_stats,
        parameters: header
            .param_names
            .iter()
            .zip(&draws.diagnostics)
            .zip(&means)
            .map(|((name, diagnostics), &mean)| ParamReport { name, mean, diagnostics })
            .collect(),
    };
    let report_path = sibling(out, "_diagnostics.json");
    write_json(&report_path, &report)?;
    manifest.output(&report_path)?;
    manifest.write(&sibling(out, "_manifest.json"))?;

    print_diagnostics(&header.param_names, &draws);
    Ok(if draws.failed { Outcome::FitFailed } else { Outcome::Success })
}

fn print_diagnostics(names: &[String], draws: &PosteriorDraws) {
    let fmt = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"));
    println!("{:<24} {:>8} {:>10}", "parameter", "r_hat", "ess_bulk");
    for (name, d) in names.iter().zip(&draws.diagnostics) {
        println!("{:<24} {:>8} {:>10}", name, fmt(d.rhat, 3), fmt(d.ess_bulk, 0));
    }
    println!(
        "max r_hat {}, {} divergent transitions, {}",
        fmt(draws.max_rhat(), 3),
        draws.total_divergences(),
        if draws.failed { "FAILED" } else { "ok" }
    );
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    config_hash: &'a str,
    posterior_config_hash: &'a str,
    test_rows: usize,
    test_days: usize,
    interval_coverage: f64,
    models: &'a [MetricReport],
}

fn check_split(prep: &PreparedData, header: &PosteriorHeader) -> Result<()> {
    ensure!(
        prep.scaler == header.scaler,
        "the posterior was fitted on a different training split (scaler mismatch); check data.split_date"
    );
    Ok(())
}

pub fn evaluate(ctx: &Context, data_dir: &Path, posterior: &Path, out: &Path) -> Result<Outcome> {
    let cfg = ctx.load_config()?;
    let hash = cfg.hash();
    let mut manifest = RunManifest::new("evaluate", hash.clone(), cfg.seed());
    let (header, draws) = read_posterior(posterior).with_context(|| format!("reading {}", posterior.display()))?;
    manifest.input(posterior)?;
    let (env_file, data) = load_store(data_dir, &mut manifest)?;
    ensure!(env_file.environment == header.environment, "data directory and posterior describe different stores");
    let env = header.environment.clone();
    let prep = prepare(&data, &env, cfg.split_date())?;
    check_split(&prep, &header)?;

    let t = Instant::now();
    let pred = predict_revenue(
        &draws,
        &header.layout(),
        &prep.test,
        &env,
        cfg.fit_config(Preset::Desk).predict_draws,
        cfg.seed(),
    )?;
    manifest.timings.insert("predict".into(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let eval = evaluate_models(&prep.train, &prep.test, &env, &pred, &cfg.baseline_config(), cfg.seed())?;
    manifest.timings.insert("baselines".into(), t.elapsed().as_secs_f64());

    ensure_parent(out)?;
    write_json(
        out,
        &EvaluationReport {
            config_hash: &hash,
            posterior_config_hash: &header.config_hash,
            test_rows: prep.test.n_rows(),
            test_days: pred.daily.len(),
            interval_coverage: pred.coverage(),
            models: &eval.reports,
        },
    )?;
    manifest.output(out)?;

    let table_path = sibling(out, ".csv");
    let mut w = csv::Writer::from_path(&table_path)?;
    w.write_record(["model", "mse", "mae", "directional_accuracy"])?;
    for r in &eval.reports {
        let da = r.directional_accuracy.map_or_else(String::new, |v| v.to_string());
        w.write_record([r.model.clone(), r.mse.to_string(), r.mae.to_string(), da])?;
    }
    w.flush()?;
    manifest.output(&table_path)?;

    let daily_path = sibling(out, "_daily.csv");
    let mut w = csv::Writer::from_path(&daily_path)?;
    w.write_record(["date", "truth", "mean", "lo95", "hi95"])?;
    for d in &pred.daily {
        w.write_record([
            d.date.format("%Y-%m-%d").to_string(),
            d.observed.to_string(),
            d.revenue.mean.to_string(),
            d.revenue.lower.to_string(),
            d.revenue.upper.to_string(),
        ])?;
    }
    w.flush()?;
    manifest.output(&daily_path)?;
    manifest.write(&sibling(out, "_manifest.json"))?;

    println!("{:<6} {:>14} {:>12} {:>10}", "model", "mse", "mae", "dir_acc");
    for r in &eval.reports {
        let da = r.directional_accuracy.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
        println!("{:<6} {:>14.4} {:>12.4} {:>10}", r.model, r.mse, r.mae, da);
    }
    println!("95% interval coverage of test rows: {:.3}", pred.coverage());
    Ok(Outcome::Success)
}

pub fn train_dqn(
    ctx: &Context,
    posterior: &Path,
    env_path: Option<&Path>,
    iterations: Option<usize>,
    out: &Path,
) -> Result<Outcome> {
    let mut cfg = ctx.load_config()?;
    if let Some(n) = iterations {
        cfg.set("dqn.iterations", &n.to_string())?;
    }
    let hash = cfg.hash();
    let mut manifest = RunManifest::new("train-dqn", hash.clone(), cfg.seed());
    let (header, draws) = read_posterior(posterior).with_context(|| format!("reading {}", posterior.display()))?;
    manifest.input(posterior)?;
    let env = match env_path {
        Some(p) => {
            let f = read_env_file(p).with_context(|| format!("reading {}", p.display()))?;
            manifest.input(p)?;
            ensure!(
                f.environment.n_regions == header.environment.n_regions
                    && f.environment.n_products == header.environment.n_products,
                "environment file does not match the posterior's store dimensions"
            );
            f.environment
        }
        None => header.environment.clone(),
    };
    let dqn_cfg = cfg.dqn_config()?;
    let (source, _) = posterior_source(&draws, &header.layout())?;
    let settings = TrainingEnv {
        horizon_days: cfg.sim_horizon(),
        placement_cost: cfg.placement_cost(),
        revenue_scale: header.revenue_scale,
        param_mode: cfg.param_mode(),
    };
    println!("training for {} iterations", dqn_cfg.training_iterations);
    let t = Instant::now();
    let trained = train_policy_network(&env, source, &header.scaler, &settings, &dqn_cfg, cfg.seed())?;
    manifest.timings.insert("train".into(), t.elapsed().as_secs_f64());

    ensure_parent(out)?;
    write_qnet(out, &trained.network, &hash, cfg.seed())?;
    manifest.output(out)?;
    let log_path = sibling(out, "_log.csv");
    let mut w = csv::Writer::from_path(&log_path)?;
    w.write_record(["iteration", "epsilon", "mean_reward", "loss"])?;
    for r in &trained.log {
        let loss = r.loss.map_or_else(String::new, |v| v.to_string());
        w.write_record([r.iteration.to_string(), r.epsilon.to_string(), r.mean_reward.to_string(), loss])?;
    }
    w.flush()?;
    manifest.output(&log_path)?;
    manifest.write(&sibling(out, "_manifest.json"))?;
    if let Some(last) = trained.log.last() {
        println!("final window: mean reward {:.3}, epsilon {:.3}", last.mean_reward, last.epsilon);
    }
    Ok(Outcome::Success)
}

pub fn evaluate_policies(
    ctx: &Context,
    posterior: &Path,
    qnet: &Path,
    lengths: Option<Vec<usize>>,
    seeds: Option<usize>,
    out: &Path,
) -> Result<Outcome> {
    let mut cfg = ctx.load_config()?;
    if let Some(l) = lengths {
        if l.is_empty() {
            bail!("--lengths needs at least one value");
        }
        let joined: Vec<String> = l.iter().map(usize::to_string).collect();
        cfg.set("eval.lengths", &joined.join(","))?;
    }
    if let Some(s) = seeds {
        cfg.set("eval.seeds", &s.to_string())?;
    }
    let hash = cfg.hash();
    let mut manifest = RunManifest::new("evaluate-policies", hash, cfg.seed());
    let (header, draws) = read_posterior(posterior).with_context(|| format!("reading {}", posterior.display()))?;
    manifest.input(posterior)?;
    let (_, network) = read_qnet(qnet).with_context(|| format!("reading {}", qnet.display()))?;
    manifest.input(qnet)?;
    let env = header.environment.clone();
    ensure!(
        network.n_regions == env.n_regions && network.n_products == env.n_products,
        "Q-network and posterior describe different stores"
    );
    let (source, mean) = posterior_source(&draws, &header.layout())?;
    let suite = PolicySuite { tabu_params: mean, qnet: Some(network) };
    let policies = [PolicyKind::Random, PolicyKind::Naive, PolicyKind::Tabu, PolicyKind::Dqn];
    let t = Instant::now();
    let table = run_policy_eval(
        &env,
        &source,
        &header.scaler,
        &suite,
        &policies,
        &cfg.policy_eval_config(header.revenue_scale),
    )?;
    manifest.timings.insert("rollouts".into(), t.elapsed().as_secs_f64());

    ensure_parent(out)?;
    table.write_csv(std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    manifest.output(out)?;
    let summary_path = sibling(out, "_summary.csv");
    table.write_summary_csv(std::fs::File::create(&summary_path)?)?;
    manifest.output(&summary_path)?;
    let json_path = sibling(out, ".json");
    write_json(&json_path, &table)?;
    manifest.output(&json_path)?;
    manifest.write(&sibling(out, "_manifest.json"))?;

    println!("{:<8} {:>6} {:>14}", "policy", "length", "median_reward");
    for s in &table.summary {
        println!("{:<8} {:>6} {:>14.2}", s.policy.to_string(), s.length, s.median);
    }
    Ok(Outcome::Success)
}
