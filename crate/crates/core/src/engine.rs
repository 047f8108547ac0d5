//! Calibration and the synchronous epoch loop.
//!
//! One epoch runs these phases in order: every agent picks an action, each
//! choice is materialized into disclosed data, the platform retrains from
//! scratch on the union, every user is evaluated, rewards are computed,
//! agents update, and metrics are aggregated. Agents never see each other's
//! actions or rewards.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::AgentState;
use crate::config::{SimConfig, UEmptyMode};
use crate::dataset::{leave_one_out, EvalSplit, Histories};
use crate::error::{Error, Result};
use crate::eval::{aggregate, EpochMetrics, EvalOptions, Evaluator, GroupMetrics, UtilityReport};
use crate::mechanism::{apply_choice, split_user, AttrMode, ChoiceSpace, DisclosedData, MechanismSpec, SplitData};
use crate::privacy::{assign_groups, privacy_cost, sensitivity_weight, user_reward, CalibrationBaseline, PrivacyParams};
use crate::recommender::{train, DisclosedDataset, Model, ModelSpec};
use crate::seed::{self, Stream};

pub const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "group",
    "mean_ndcg",
    "mean_dis_frac",
    "pct_users_disclosing",
    "mean_reward",
    "platform_revenue",
];

/// Read-only inputs shared by every epoch.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub histories: Histories,
    pub splits: Vec<EvalSplit>,
    pub user_splits: Vec<SplitData>,
    pub space: ChoiceSpace,
    pub n_features: usize,
    pub features: Vec<Vec<u32>>,
    pub dataset_hash: String,
}

impl Prepared {
    pub fn new(histories: Histories, mechanism: &MechanismSpec) -> Result<Self> {
        let splits = leave_one_out(&histories)?;
        let (n_features, features) = histories.attribute_features();
        let n_attrs = match mechanism.attr_mode {
            AttrMode::None => 0,
            _ => {
                let n = features.first().map_or(0, Vec::len);
                if features.iter().any(|f| f.len() != n) {
                    return Err(Error::Data(
                        "attribute disclosure needs every user to carry the same attributes".into(),
                    ));
                }
                n
            }
        };
        let space = mechanism.choice_space(n_attrs)?;
        let user_splits = splits
            .iter()
            .map(|s| split_user(s.train_pool.len(), n_attrs, mechanism))
            .collect::<Result<Vec<_>>>()?;
        let short = user_splits.iter().filter(|s| s.has_empty_segment()).count();
        if short > 0 {
            log::warn!("{short} users have fewer behaviors than segments; some of their segments are empty");
        }
        let dataset_hash = histories.content_hash()?;
        Ok(Prepared {
            histories,
            splits,
            user_splits,
            space,
            n_features,
            features,
            dataset_hash,
        })
    }

    pub fn load(path: &Path, mechanism: &MechanismSpec) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(Histories::from_json(&bytes)?, mechanism)
    }

    pub fn n_users(&self) -> usize {
        self.splits.len()
    }

    pub fn users_with_empty_segments(&self) -> usize {
        self.user_splits.iter().filter(|s| s.has_empty_segment()).count()
    }

    /// The data user `user` hands over when playing `action`.
    pub fn disclose(&self, user: usize, action: usize) -> Result<DisclosedData> {
        let choice = self
            .space
            .get(action)
            .ok_or_else(|| Error::Mechanism(format!("action {action} is outside the choice space")))?;
        let mut d = apply_choice(choice, &self.user_splits[user], &self.splits[user].train_pool, &self.features[user])?;
        d.source_choice = Some(action);
        Ok(d)
    }

    pub fn dataset(&self, users: Vec<DisclosedData>) -> DisclosedDataset {
        DisclosedDataset {
            n_items: self.histories.n_items(),
            n_features: self.n_features,
            users,
        }
    }

    /// Check that nothing mutated the snapshot during a run.
    pub fn verify_unchanged(&self) -> Result<()> {
        if self.histories.content_hash()? != self.dataset_hash {
            return Err(Error::Data("dataset snapshot changed during the run".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub group: String,
    pub w: f64,
    pub beta: f64,
    pub lambda: f64,
    pub u_full: f64,
    pub u_empty: f64,
}

/// Keyed by user id.
pub type Calibration = BTreeMap<String, CalibrationEntry>;

/// Trains the benchmark model once on everyone's full data and derives each
/// user's sensitivity weight from the full and empty utilities.
pub fn calibrate(prepared: &Prepared, config: &SimConfig) -> Result<Calibration> {
    let groups = assign_groups(prepared.n_users(), &config.groups, config.seed)?;
    let with_attrs = config.mechanism.attr_mode != AttrMode::None;
    let full: Vec<DisclosedData> = prepared
        .splits
        .iter()
        .zip(&prepared.features)
        .map(|(s, f)| DisclosedData::full(&s.train_pool, if with_attrs { f } else { &[] }))
        .collect();
    let model = train(
        &prepared.dataset(full.clone()),
        &config.benchmark,
        seed::derive(config.seed, Stream::Calibration, 0, 0),
    )?;
    let mut ev = Evaluator::new(&model, &config.eval)?;
    let empty = DisclosedData::default();
    let mut out = Calibration::new();
    for (u, user) in prepared.histories.users.iter().enumerate() {
        let test = prepared.splits[u].test_item;
        let pool_len = prepared.splits[u].train_pool.len();
        let beta = config.beta.unwrap_or(1.0 / pool_len as f64);
        let u_full = ev.ndcg(u, &full[u], test)?;
        let u_empty = match config.u_empty_mode {
            UEmptyMode::Zero => 0.0,
            UEmptyMode::Popularity => ev.ndcg(u, &empty, test)?,
        };
        let baseline = CalibrationBaseline {
            u_full,
            u_empty,
            c_full: privacy_cost(&full[u], pool_len, beta),
            c_empty: 0.0,
        };
        let g = &config.groups[groups[u]];
        out.insert(
            user.user_id.clone(),
            CalibrationEntry {
                group: g.label.clone(),
                w: g.w,
                beta,
                lambda: sensitivity_weight(g.w, &baseline),
                u_full,
                u_empty,
            },
        );
    }
    Ok(out)
}

pub fn write_calibration(calibration: &Calibration, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(calibration)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Per-user parameters in user order, with group indices into `labels`.
pub fn privacy_params(prepared: &Prepared, calibration: &Calibration, labels: &[String]) -> Result<Vec<PrivacyParams>> {
    if calibration.len() != prepared.n_users() {
        return Err(Error::Data(format!(
            "calibration covers {} users but the dataset has {}",
            calibration.len(),
            prepared.n_users()
        )));
    }
    prepared
        .histories
        .users
        .iter()
        .map(|u| {
            let e = calibration
                .get(&u.user_id)
                .ok_or_else(|| Error::Data(format!("calibration has no entry for user {}", u.user_id)))?;
            let group = labels
                .iter()
                .position(|l| *l == e.group)
                .ok_or_else(|| Error::Data(format!("calibration group `{}` is not configured", e.group)))?;
            if !(e.lambda >= 0.0) {
                return Err(Error::Data(format!("user {} has negative lambda", u.user_id)));
            }
            Ok(PrivacyParams {
                group,
                w: e.w,
                beta: e.beta,
                lambda: e.lambda,
            })
        })
        .collect()
}

/// Whatever turns the epoch's disclosures into per-user utilities.
pub trait Platform {
    fn utilities(&mut self, epoch: usize, disclosed: &[DisclosedData]) -> Result<Vec<f64>>;
}

/// Retrains the configured recommender each epoch and scores users with
/// leave-one-out NDCG.
pub struct RecommenderPlatform<'a> {
    prepared: &'a Prepared,
    model: ModelSpec,
    eval: EvalOptions,
    seed: u64,
    keep_model: bool,
    last_model: Option<Model>,
}

impl<'a> RecommenderPlatform<'a> {
    pub fn new(prepared: &'a Prepared, model: ModelSpec, eval: EvalOptions, seed: u64) -> Self {
        RecommenderPlatform {
            prepared,
            model,
            eval,
            seed,
            keep_model: false,
            last_model: None,
        }
    }

    /// Keep the most recently trained model for inspection.
    pub fn keep_model(mut self) -> Self {
        self.keep_model = true;
        self
    }

    pub fn last_model(&self) -> Option<&Model> {
        self.last_model.as_ref()
    }
}

impl Platform for RecommenderPlatform<'_> {
    fn utilities(&mut self, epoch: usize, disclosed: &[DisclosedData]) -> Result<Vec<f64>> {
        let data = self.prepared.dataset(disclosed.to_vec());
        let model = train(&data, &self.model, seed::derive(self.seed, Stream::Train, epoch as u64, 0))?;
        let mut ev = Evaluator::new(&model, &self.eval)?;
        let out = disclosed
            .iter()
            .zip(&self.prepared.splits)
            .enumerate()
            .map(|(u, (d, s))| ev.ndcg(u, d, s.test_item))
            .collect::<Result<Vec<_>>>()?;
        if self.keep_model {
            self.last_model = Some(model);
        }
        Ok(out)
    }
}

/// What one user did and got in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStep {
    pub action: usize,
    pub utility: f64,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub metrics: EpochMetrics,
    pub steps: Vec<UserStep>,
}

pub struct Simulation<'a, P> {
    prepared: &'a Prepared,
    params: Vec<PrivacyParams>,
    labels: Vec<String>,
    agents: Vec<AgentState>,
    platform: P,
    seed: u64,
}

impl<'a, P: Platform> Simulation<'a, P> {
    pub fn new(
        prepared: &'a Prepared,
        params: Vec<PrivacyParams>,
        labels: Vec<String>,
        platform: P,
        seed: u64,
    ) -> Result<Self> {
        if params.len() != prepared.n_users() {
            return Err(Error::Data("one set of privacy parameters per user is required".into()));
        }
        if params.iter().any(|p| p.group >= labels.len()) {
            return Err(Error::Data("privacy parameters reference an unknown group".into()));
        }
        let agents = vec![AgentState::new(prepared.space.len()); params.len()];
        Ok(Simulation {
            prepared,
            params,
            labels,
            agents,
            platform,
            seed,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn params(&self) -> &[PrivacyParams] {
        &self.params
    }

    pub fn platform(&self) -> &P {
        &self.platform
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Every agent picks with the shared epoch counter and its own stream.
    pub fn select_actions(&mut self, t: usize) -> Vec<usize> {
        self.agents
            .iter_mut()
            .enumerate()
            .map(|(u, a)| a.select_action(t, &mut seed::rng(self.seed, Stream::Action, u as u64, t as u64)))
            .collect()
    }

    /// Runs the disclosure, training, evaluation and reward phases for fixed
    /// actions without touching the agents.
    pub fn evaluate_actions(&mut self, t: usize, actions: &[usize]) -> Result<EpochOutcome> {
        self.evaluate_inner(t, actions).map_err(|e| e.at_epoch(t))
    }

    fn evaluate_inner(&mut self, t: usize, actions: &[usize]) -> Result<EpochOutcome> {
        if actions.len() != self.params.len() {
            return Err(Error::Data("one action per user is required".into()));
        }
        let disclosed = actions
            .iter()
            .enumerate()
            .map(|(u, &a)| self.prepared.disclose(u, a))
            .collect::<Result<Vec<_>>>()?;
        let utilities = self.platform.utilities(t, &disclosed)?;
        if utilities.len() != disclosed.len() {
            return Err(Error::Eval("platform returned the wrong number of utilities".into()));
        }
        let mut steps = Vec::with_capacity(actions.len());
        let mut reports = Vec::with_capacity(actions.len());
        for (u, ((d, &utility), &action)) in disclosed.iter().zip(&utilities).zip(actions).enumerate() {
            let p = &self.params[u];
            let pool_len = self.prepared.splits[u].train_pool.len();
            let cost = privacy_cost(d, pool_len, p.beta);
            let reward = user_reward(utility, cost, p.lambda);
            steps.push(UserStep {
                action,
                utility,
                cost,
                reward,
            });
            reports.push(UtilityReport {
                group: p.group,
                ndcg: utility,
                disclosed_fraction: d.behaviors.len() as f64 / pool_len as f64,
                disclosed_any: !d.is_empty(),
                reward,
            });
        }
        let metrics = aggregate(t, &reports, &self.labels)?;
        Ok(EpochOutcome { metrics, steps })
    }

    pub fn run_epoch(&mut self, t: usize) -> Result<EpochOutcome> {
        let actions = self.select_actions(t);
        let outcome = self.evaluate_actions(t, &actions)?;
        for (agent, step) in self.agents.iter_mut().zip(&outcome.steps) {
            agent.update(step.action, step.reward);
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub mean_ndcg: f64,
    pub mean_dis_frac: f64,
    pub pct_users_disclosing: f64,
    pub mean_reward: f64,
    pub platform_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub epochs: usize,
    pub window: usize,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, group: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.group == group)
    }
}

/// Per-group means over the final `window` epochs.
pub fn converged_summary(series: &[EpochMetrics], window: usize) -> Result<Summary> {
    if window == 0 || window > series.len() {
        return Err(Error::Data(format!(
            "summary window {window} must be between 1 and the number of epochs ({})",
            series.len()
        )));
    }
    let tail = &series[series.len() - window..];
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, ([f64; 5], usize)> = BTreeMap::new();
    for m in tail {
        for g in &m.groups {
            let entry = sums.entry(g.group.clone()).or_insert_with(|| {
                order.push(g.group.clone());
                ([0.0; 5], 0)
            });
            let vals = [g.mean_ndcg, g.mean_dis_frac, g.pct_users_disclosing, g.mean_reward, g.platform_revenue];
            for (s, v) in entry.0.iter_mut().zip(vals) {
                *s += v;
            }
            entry.1 += 1;
        }
    }
    let rows = order
        .into_iter()
        .map(|group| {
            let (s, n) = sums[&group];
            let n = n as f64;
            SummaryRow {
                mean_ndcg: s[0] / n,
                mean_dis_frac: s[1] / n,
                pct_users_disclosing: s[2] / n,
                mean_reward: s[3] / n,
                platform_revenue: s[4] / n,
                group,
            }
        })
        .collect();
    Ok(Summary {
        epochs: series.len(),
        window,
        rows,
    })
}

fn metrics_record(m: &EpochMetrics, g: &GroupMetrics) -> [String; 7] {
    [
        m.epoch.to_string(),
        g.group.clone(),
        g.mean_ndcg.to_string(),
        g.mean_dis_frac.to_string(),
        g.pct_users_disclosing.to_string(),
        g.mean_reward.to_string(),
        g.platform_revenue.to_string(),
    ]
}

/// Streams metrics rows, one per group per epoch.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(METRICS_HEADER)?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        for g in &m.groups {
            self.inner.write_record(metrics_record(m, g))?;
        }
        self.inner.flush().map_err(|e| Error::Csv(e.into()))
    }

    /// Appends a comment line marking the file as incomplete.
    pub fn truncate(self, reason: &str) -> Result<()> {
        let mut out = self.inner.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        writeln!(out, "# truncated: {}", reason.replace('\n', " ")).map_err(|e| Error::Csv(e.into()))?;
        out.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Reads a metrics file back into per-epoch records. Comment lines are
/// skipped; user counts are not stored in the file and read as zero.
pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Data(format!(
            "metrics header is `{}`, expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            METRICS_HEADER.join(",")
        )));
    }
    let mut series: Vec<EpochMetrics> = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} is not a number: `{}`", METRICS_HEADER[k], &rec[k]),
            })
        };
        let epoch: usize = rec[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad epoch `{}`", &rec[0]),
        })?;
        let g = GroupMetrics {
            group: rec[1].to_string(),
            users: 0,
            mean_ndcg: num(2)?,
            mean_dis_frac: num(3)?,
            pct_users_disclosing: num(4)?,
            mean_reward: num(5)?,
            platform_revenue: num(6)?,
        };
        match series.last_mut() {
            Some(m) if m.epoch == epoch => m.groups.push(g),
            Some(m) if epoch < m.epoch => {
                return Err(Error::Parse {
                    line,
                    message: "epochs are not in order".into(),
                })
            }
            _ => series.push(EpochMetrics {
                epoch,
                groups: vec![g],
            }),
        }
    }
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(series)
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub tool_version: String,
    pub filter_seen: bool,
    pub u_empty_mode: UEmptyMode,
    pub choice_space_size: usize,
    pub users_with_empty_segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completed_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_meta.json");
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: Vec<EpochMetrics>,
    pub summary: Summary,
    pub manifest: RunManifest,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Full run: prepare, calibrate or load calibration, loop the epochs and
/// write `metrics.csv`, `summary.json`, `calibration.json` (when computed)
/// and `run_meta.json` into `out_dir`.
pub fn run_simulation(config: &SimConfig, config_path: Option<&Path>, out_dir: &Path) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prepared = Prepared::load(&config.dataset, &config.mechanism)?;

    let mut artifacts = BTreeMap::new();
    let calibration = match &config.calibration {
        Some(path) => read_calibration(path)?,
        None => {
            let c = calibrate(&prepared, config)?;
            let path = out_dir.join("calibration.json");
            write_calibration(&c, &path)?;
            artifacts.insert("calibration".to_string(), path);
            c
        }
    };
    let labels: Vec<String> = config.groups.iter().map(|g| g.label.clone()).collect();
    let params = privacy_params(&prepared, &calibration, &labels)?;

    let metrics_path = out_dir.join("metrics.csv");
    let summary_path = out_dir.join("summary.json");
    artifacts.insert("metrics".to_string(), metrics_path.clone());
    artifacts.insert("summary".to_string(), summary_path.clone());
    let rewards_path = out_dir.join("rewards.csv");
    if config.reward_log {
        artifacts.insert("rewards".to_string(), rewards_path.clone());
        artifacts.insert("agents".to_string(), out_dir.join("agents.json"));
    }
    let mut manifest = RunManifest {
        config_path: config_path.map(Path::to_path_buf),
        config_hash: config.hash(),
        dataset_hash: prepared.dataset_hash.clone(),
        seed: config.seed,
        artifacts,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        filter_seen: config.eval.filter_seen,
        u_empty_mode: config.u_empty_mode,
        choice_space_size: prepared.space.len(),
        users_with_empty_segments: prepared.users_with_empty_segments(),
        completed_epochs: None,
        wall_clock_secs: None,
    };
    manifest.write(out_dir)?;

    let platform = RecommenderPlatform::new(&prepared, config.model.clone(), config.eval.clone(), config.seed);
    let mut sim = Simulation::new(&prepared, params, labels, platform, config.seed)?;
    let mut writer = MetricsWriter::new(create(&metrics_path)?)?;
    let mut rewards = if config.reward_log {
        let mut w = csv::Writer::from_writer(create(&rewards_path)?);
        w.write_record(["epoch", "user_id", "group", "action", "utility", "cost", "lambda", "reward"])?;
        Some(w)
    } else {
        None
    };

    let mut series = Vec::with_capacity(config.epochs);
    for t in 0..config.epochs {
        let outcome = match sim.run_epoch(t) {
            Ok(o) => o,
            Err(e) => {
                writer.truncate(&e.to_string())?;
                return Err(e);
            }
        };
        writer.write(&outcome.metrics).map_err(|e| e.at_epoch(t))?;
        if let Some(w) = rewards.as_mut() {
            for (u, step) in outcome.steps.iter().enumerate() {
                let p = &sim.params()[u];
                w.write_record([
                    t.to_string(),
                    prepared.histories.users[u].user_id.clone(),
                    sim.labels()[p.group].clone(),
                    step.action.to_string(),
                    step.utility.to_string(),
                    step.cost.to_string(),
                    p.lambda.to_string(),
                    step.reward.to_string(),
                ])?;
            }
        }
        log::info!(
            "epoch {t}: ndcg {:.4}, dis {:.3}, disclosing {:.1}%",
            outcome.metrics.overall().mean_ndcg,
            outcome.metrics.overall().mean_dis_frac,
            outcome.metrics.overall().pct_users_disclosing
        );
        series.push(outcome.metrics);
    }
    if let Some(mut w) = rewards {
        w.flush().map_err(|e| Error::io(&rewards_path, e))?;
        let agents: BTreeMap<&str, &AgentState> = prepared
            .histories
            .users
            .iter()
            .map(|u| u.user_id.as_str())
            .zip(sim.agents())
            .collect();
        let path = out_dir.join("agents.json");
        std::fs::write(&path, serde_json::to_vec(&agents)?).map_err(|e| Error::io(path, e))?;
    }
    prepared.verify_unchanged()?;

    let summary = converged_summary(&series, config.window)?;
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    std::fs::write(&summary_path, bytes).map_err(|e| Error::io(&summary_path, e))?;

    manifest.completed_epochs = Some(series.len());
    manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    manifest.write(out_dir)?;
    Ok(RunOutput {
        series,
        summary,
        manifest,
    })
}
