//! Multi-seed runs, ablations and curve aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use kogun::envs::{make_env, EnvOptions};
use kogun::policy::{build_policy, PolicyBuild};
use kogun::policy::ActMode;
use kogun::ppo::{evaluate_policy, sub_seed, train, Trainer, TrainingLog, UPDATE_INDEX_PARAM};
use kogun::ruledsl::{parse_rulebase_bytes, RuleBase};
use nncore::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{apply_overrides, parse_config, ExperimentConfig, LoadedConfig};
use crate::error::{HarnessError, Result};

pub const OUTPUT_ROOT_VAR: &str = "KOGUN_OUT";

/// `$KOGUN_OUT`, or `runs` under the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Hex SHA-256 of the canonical JSON form of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads the rule base named by `rules.path`, if any.
pub fn resolve_rules(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Option<RuleBase>> {
    let Some(path) = &cfg.rules.path else {
        return Ok(None);
    };
    if let Some(env_id) = path.strip_prefix("bundled:") {
        let text = kogun::rules::bundled_source(env_id)
            .ok_or_else(|| HarnessError::Invalid(format!("rules.path: no bundled rule base for `{env_id}`")))?;
        return Ok(Some(parse_rulebase_bytes(text.as_bytes()).map_err(kogun::error::KogunError::from)?));
    }
    let full = base_dir.join(path);
    let bytes = fs::read(&full).map_err(|e| HarnessError::io(&full, e))?;
    let rb = parse_rulebase_bytes(&bytes).map_err(kogun::error::KogunError::from)?;
    Ok(Some(rb))
}

/// A fresh trainer for one seed.
pub fn build_trainer(cfg: &ExperimentConfig, rules: Option<&RuleBase>, seed: u64) -> Result<Trainer> {
    let physics = cfg.env.physics.params();
    let train_opts = EnvOptions {
        physics,
        delay: Some(cfg.env.delay_d),
    };
    let eval_opts = EnvOptions { physics, delay: None };
    let env = make_env(&cfg.env.id, &train_opts).map_err(kogun::error::KogunError::from)?;
    let eval_env = make_env(&cfg.env.id, &eval_opts).map_err(kogun::error::KogunError::from)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
    let policy_cfg = cfg.policy_config();
    let policy = build_policy(PolicyBuild {
        store: &mut store,
        env: env.spec(),
        rules,
        config: &policy_cfg,
        rng: &mut rng,
    })?;
    Ok(Trainer::new(
        store,
        policy,
        env,
        eval_env,
        cfg.ppo.config(),
        cfg.schedule(),
        cfg.eval.config(),
        seed,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub final_mean_return: Option<f64>,
    pub optimizer_steps: usize,
    pub grad_clipped_steps: usize,
    pub min_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub name: String,
    pub variant: String,
    pub env: String,
    pub delay_d: usize,
    pub config_hash: String,
    pub kogun_version: String,
    pub harness_version: String,
    pub seeds: Vec<SeedRecord>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub log: TrainingLog,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub label: String,
    pub outcomes: Vec<SeedOutcome>,
    pub manifest: Manifest,
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| HarnessError::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| HarnessError::io(path, e))
}

fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    trainer.write_checkpoint(BufWriter::new(file))?;
    Ok(())
}

/// Trains one seed and writes its logs and checkpoint(s) into `dir`.
/// Failures are captured in the outcome rather than returned.
pub fn run_seed(cfg: &ExperimentConfig, rules: Option<&RuleBase>, seed: u64, dir: &Path) -> Result<SeedOutcome> {
    let mut trainer = match build_trainer(cfg, rules, seed) {
        Ok(t) => t,
        Err(e) => {
            return Ok(SeedOutcome {
                seed,
                log: TrainingLog::default(),
                error: Some(e.to_string()),
            })
        }
    };
    let every = cfg.experiment.checkpoint_every;
    let total = cfg.ppo.total_updates;
    let result = if every == 0 || !trainer.policy.is_trainable() {
        train(&mut trainer).map(|_| ())
    } else {
        let mut r = Ok(());
        let mut done = 0;
        while done < total {
            let step = every.min(total - done);
            r = trainer.run(step);
            if r.is_err() {
                break;
            }
            done += step;
            save_checkpoint(&trainer, &dir.join(format!("checkpoint_seed_{seed}_u{done}.kgn")))?;
        }
        r
    };
    let error = match result {
        Ok(()) => {
            save_checkpoint(&trainer, &dir.join(format!("checkpoint_seed_{seed}.kgn")))?;
            None
        }
        Err(e) => {
            save_checkpoint(&trainer, &dir.join(format!("checkpoint_seed_{seed}_failed.kgn")))?;
            Some(e.to_string())
        }
    };
    let log = trainer.log().clone();
    write_file(&dir.join(format!("seed_{seed}.csv")), |w| log.write_csv(w))?;
    if !log.controller_rows.is_empty() {
        write_file(&dir.join(format!("controller_seed_{seed}.csv")), |w| {
            log.write_controller_csv(w)
        })?;
    }
    Ok(SeedOutcome { seed, log, error })
}

/// One row of `summary.csv`: statistics across seeds at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub update_index: usize,
    pub env_steps: usize,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Mean and population std across seeds, aligned on update index.
pub fn summarize(logs: &[&TrainingLog]) -> Vec<SummaryRow> {
    let mut by_update: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for log in logs {
        for r in &log.rows {
            let e = by_update.entry(r.update_index).or_insert((r.env_steps, Vec::new()));
            e.1.push(r.mean_eval_return);
        }
    }
    by_update
        .into_iter()
        .map(|(update_index, (env_steps, values))| {
            let (mean, std) = kogun::envs::mean_std(&values);
            SummaryRow {
                update_index,
                env_steps,
                mean,
                std,
                seeds: values.len(),
            }
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_file(path, |w| {
        use std::io::Write;
        writeln!(w, "update_index,env_steps,mean_eval_return,std_eval_return,seeds")?;
        for r in rows {
            writeln!(w, "{},{},{},{},{}", r.update_index, r.env_steps, r.mean, r.std, r.seeds)?;
        }
        Ok(())
    })
}

/// Runs every seed of `loaded` into `out` (default: output root / config
/// `output_dir` or experiment name).
pub fn run_experiment(loaded: &LoadedConfig, out: Option<&Path>) -> Result<RunArtifacts> {
    let label = loaded.config.experiment.name.clone();
    run_labeled(loaded, &label, out)
}

fn default_dir(cfg: &ExperimentConfig) -> PathBuf {
    let rel = cfg
        .experiment
        .output_dir
        .clone()
        .unwrap_or_else(|| cfg.experiment.name.clone());
    output_root().join(rel)
}

fn run_labeled(loaded: &LoadedConfig, label: &str, out: Option<&Path>) -> Result<RunArtifacts> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_dir(cfg));
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let rules = resolve_rules(cfg, &loaded.base_dir)?;

    let mut saved = cfg.clone();
    if rules.is_some() {
        saved.rules.path = Some("rules.kgr".into());
    }
    let resolved = toml::to_string(&saved).expect("config serializes");
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, resolved).map_err(|e| HarnessError::io(&cfg_path, e))?;
    if let Some(rb) = &rules {
        let p = dir.join("rules.kgr");
        fs::write(&p, kogun::ruledsl::serialize_rulebase(rb)).map_err(|e| HarnessError::io(&p, e))?;
    }

    let mut outcomes = Vec::with_capacity(cfg.experiment.seeds.len());
    for &seed in &cfg.experiment.seeds {
        outcomes.push(run_seed(cfg, rules.as_ref(), seed, &dir)?);
    }

    let ok_logs: Vec<&TrainingLog> = outcomes.iter().filter(|o| o.error.is_none()).map(|o| &o.log).collect();
    write_summary(&dir.join("summary.csv"), &summarize(&ok_logs))?;

    let manifest = Manifest {
        label: label.to_string(),
        name: cfg.experiment.name.clone(),
        variant: cfg.experiment.variant.clone(),
        env: cfg.env.id.clone(),
        delay_d: cfg.env.delay_d,
        config_hash: config_hash(cfg),
        kogun_version: kogun::VERSION.to_string(),
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: outcomes
            .iter()
            .map(|o| SeedRecord {
                seed: o.seed,
                status: if o.error.is_none() { "ok".into() } else { "failed".into() },
                error: o.error.clone(),
                final_mean_return: o.log.rows.last().map(|r| r.mean_eval_return),
                optimizer_steps: o.log.optimizer_steps,
                grad_clipped_steps: o.log.clipped_steps,
                min_beta: o.log.controller_rows.iter().map(|r| r.min_beta).reduce(f64::min),
            })
            .collect(),
    };
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json).map_err(|e| HarnessError::io(&mpath, e))?;

    Ok(RunArtifacts {
        dir,
        label: label.to_string(),
        outcomes,
        manifest,
    })
}

/// Result of replaying a saved checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointEval {
    pub update_index: usize,
    pub w1: f64,
    pub mean: f64,
    pub std: f64,
}

/// Rebuilds the policy described by `loaded`, loads `checkpoint` into it and
/// evaluates `episodes` greedy or sampled episodes per the config.
pub fn evaluate_checkpoint(loaded: &LoadedConfig, checkpoint: &Path, episodes: usize, seed: u64) -> Result<CheckpointEval> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let rules = resolve_rules(cfg, &loaded.base_dir)?;
    let mut trainer = build_trainer(cfg, rules.as_ref(), seed)?;
    let file = fs::File::open(checkpoint).map_err(|e| HarnessError::io(checkpoint, e))?;
    let entries = nncore::checkpoint::read_checkpoint(std::io::BufReader::new(file))
        .map_err(kogun::error::KogunError::from)?;
    let update_index = entries
        .iter()
        .find(|(name, _)| name == UPDATE_INDEX_PARAM)
        .map(|(_, m)| m.get(0, 0) as usize)
        .unwrap_or(0);
    nncore::checkpoint::load_into(&mut trainer.store, entries).map_err(kogun::error::KogunError::from)?;
    let w1 = cfg.schedule().weights(update_index).0;
    let mode = if cfg.eval.greedy { ActMode::Greedy } else { ActMode::Sample };
    let physics = cfg.env.physics.params();
    let mut env = make_env(&cfg.env.id, &EnvOptions { physics, delay: None }).map_err(kogun::error::KogunError::from)?;
    let (mean, std) = evaluate_policy(&trainer.policy, &trainer.store, env.as_mut(), episodes, seed, w1, mode)?;
    Ok(CheckpointEval {
        update_index,
        w1,
        mean,
        std,
    })
}

/// A named set of `key.path = value` patches over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub name: String,
    pub patches: Vec<(String, toml::Value)>,
}

impl Override {
    /// Switches only the policy variant.
    pub fn variant(name: &str) -> Self {
        Self {
            name: name.to_string(),
            patches: vec![("experiment.variant".into(), toml::Value::String(name.to_string()))],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationArtifacts {
    pub dir: PathBuf,
    pub runs: Vec<RunArtifacts>,
    pub comparison: PathBuf,
    pub controller_comparison: PathBuf,
}

/// Runs each override set over `base_text` into `out/<name>/` and writes
/// aligned comparison tables.
pub fn run_ablation(base_text: &str, base_dir: &Path, overrides: &[Override], out: &Path) -> Result<AblationArtifacts> {
    if overrides.is_empty() {
        return Err(HarnessError::Invalid("ablation needs at least one override set".into()));
    }
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut runs = Vec::with_capacity(overrides.len());
    for o in overrides {
        let text = apply_overrides(base_text, &o.patches)?;
        let loaded = LoadedConfig {
            config: parse_config(&text)?,
            base_dir: base_dir.to_path_buf(),
        };
        runs.push(run_labeled(&loaded, &o.name, Some(&out.join(&o.name)))?);
    }

    let comparison = out.join("comparison.csv");
    let main: Vec<(String, Vec<SummaryRow>)> = runs
        .iter()
        .map(|r| {
            let logs: Vec<&TrainingLog> = r.outcomes.iter().filter(|o| o.error.is_none()).map(|o| &o.log).collect();
            (r.label.clone(), summarize(&logs))
        })
        .collect();
    write_wide(&comparison, &main, true)?;

    let controller_comparison = out.join("controller_comparison.csv");
    let ctrl: Vec<(String, Vec<SummaryRow>)> = runs
        .iter()
        .filter(|r| r.outcomes.iter().any(|o| !o.log.controller_rows.is_empty()))
        .map(|r| (r.label.clone(), summarize_controller(&r.outcomes)))
        .collect();
    write_wide(&controller_comparison, &ctrl, false)?;

    Ok(AblationArtifacts {
        dir: out.to_path_buf(),
        runs,
        comparison,
        controller_comparison,
    })
}

/// Frozen-controller curves across seeds.
pub fn summarize_controller(outcomes: &[SeedOutcome]) -> Vec<SummaryRow> {
    let mut by_update: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.error.is_none()) {
        for r in &o.log.controller_rows {
            by_update.entry(r.update_index).or_default().push(r.mean_eval_return);
        }
    }
    by_update
        .into_iter()
        .map(|(update_index, v)| {
            let (mean, std) = kogun::envs::mean_std(&v);
            SummaryRow {
                update_index,
                env_steps: 0,
                mean,
                std,
                seeds: v.len(),
            }
        })
        .collect()
}

fn write_wide(path: &Path, runs: &[(String, Vec<SummaryRow>)], with_steps: bool) -> Result<()> {
    let mut updates: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, rows) in runs {
        for r in rows {
            let e = updates.entry(r.update_index).or_insert(0);
            *e = (*e).max(r.env_steps);
        }
    }
    write_file(path, |w| {
        use std::io::Write;
        let mut header = vec!["update_index".to_string()];
        if with_steps {
            header.push("env_steps".into());
        }
        for (name, _) in runs {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
        writeln!(w, "{}", header.join(","))?;
        for (&u, &steps) in &updates {
            let mut cells = vec![u.to_string()];
            if with_steps {
                cells.push(steps.to_string());
            }
            for (_, rows) in runs {
                match rows.iter().find(|r| r.update_index == u) {
                    Some(r) => {
                        cells.push(r.mean.to_string());
                        cells.push(r.std.to_string());
                    }
                    None => {
                        cells.push(String::new());
                        cells.push(String::new());
                    }
                }
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

/// Per-seed `(update_index, mean_eval_return)` columns read back from CSV.
pub fn read_seed_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let malformed = |message: String| HarnessError::Log {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(format!("no `{name}` column")))
    };
    let (ui, mi) = (col("update_index")?, col("mean_eval_return")?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let u = record[ui].parse().map_err(|_| malformed(format!("bad update_index `{}`", &record[ui])))?;
        let m = record[mi].parse().map_err(|_| malformed(format!("bad mean_eval_return `{}`", &record[mi])))?;
        out.push((u, m));
    }
    Ok(out)
}

/// One row of the tidy curves table.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub variant: String,
    pub update: usize,
    pub mean: f64,
    pub std: f64,
}

/// Trailing moving average; `window = 1` returns the input.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Aggregates every run below `dir` into `dir/curves.csv`.
pub fn emit_curves(dir: &Path, window: usize) -> Result<(PathBuf, Vec<CurvePoint>)> {
    let runs = run_dirs(dir)?;
    if runs.is_empty() {
        return Err(HarnessError::MissingRuns(vec![format!("no manifest.json under {}", dir.display())]));
    }
    let mut missing = Vec::new();
    let mut points = Vec::new();
    for run in runs {
        let mpath = run.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| HarnessError::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Log {
            path: mpath.clone(),
            message: e.to_string(),
        })?;
        let mut per_update: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in manifest.seeds.iter().filter(|s| s.status == "ok") {
            let p = run.join(format!("seed_{}.csv", s.seed));
            if !p.is_file() {
                missing.push(p.display().to_string());
                continue;
            }
            for (u, m) in read_seed_csv(&p)? {
                per_update.entry(u).or_default().push(m);
            }
        }
        let updates: Vec<usize> = per_update.keys().copied().collect();
        let stats: Vec<(f64, f64)> = per_update.values().map(|v| kogun::envs::mean_std(v)).collect();
        let means = smooth(&stats.iter().map(|s| s.0).collect::<Vec<_>>(), window);
        let stds = smooth(&stats.iter().map(|s| s.1).collect::<Vec<_>>(), window);
        for (i, u) in updates.into_iter().enumerate() {
            points.push(CurvePoint {
                variant: manifest.label.clone(),
                update: u,
                mean: means[i],
                std: stds[i],
            });
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::MissingRuns(missing));
    }
    let path = dir.join("curves.csv");
    write_file(&path, |w| {
        use std::io::Write;
        writeln!(w, "variant,update,mean,std")?;
        for p in &points {
            writeln!(w, "{},{},{},{}", p.variant, p.update, p.mean, p.std)?;
        }
        Ok(())
    })?;
    Ok((path, points))
}
