//! Experiment harness: collect demonstrations, expand them across views,
//! train one policy per seed, evaluate it, and summarize.
//!
//! Configurations are TOML files (see [`ExperimentConfig`]); every field has
//! a default, so a file only lists what it changes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::compose::DiffusionPolicy;
use crate::dataset::{
    compute_obs_stats, expand_all, make_training_pairs, norm_stats_for_space, Dataset,
};
use crate::diffusion::{train, NoiseSchedule, ScheduleSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{ActionSpace, Pose};
use crate::scalar::Real;
use crate::sim::{
    collect_demos, evaluate, make_rig, standard_rotations, CameraView, EpisodeOutcome,
    RolloutConfig, Task, TaskSpec,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Network and optimizer settings; the per-run seed comes from the seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub precision: Precision,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            hidden: t.hidden,
            time_dim: t.time_dim,
            precision: Precision::F64,
        }
    }
}

impl TrainSettings {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            hidden: self.hidden.clone(),
            time_dim: self.time_dim,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    /// Source demonstrations per seed.
    pub n_demos: usize,
    /// Standard deviation of the expert's translation noise (m).
    pub expert_noise: f64,
    /// For each angle the rig gains `FL, FR, FU, FD` cameras rotated by it;
    /// camera 0 is always the front camera `F`.
    pub rig_degrees: Vec<f64>,
    pub train_views: Vec<usize>,
    pub space: ActionSpace,
    pub inference_views: Vec<usize>,
    pub compose: bool,
    /// Composition weight; defaults to one over the number of inference views.
    pub gamma: Option<f64>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub n_obs: usize,
    pub horizon: usize,
    pub execute: usize,
    pub train: TrainSettings,
    pub schedule: ScheduleSpec,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            task: Task::PickLift,
            n_demos: 10,
            expert_noise: 0.003,
            rig_degrees: vec![15.0],
            train_views: vec![0],
            space: ActionSpace::Base,
            inference_views: vec![0],
            compose: false,
            gamma: None,
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 200,
            n_obs: 2,
            horizon: 8,
            execute: 4,
            train: TrainSettings::default(),
            schedule: ScheduleSpec::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rig(&self) -> Vec<CameraView> {
        let base = CameraView::front();
        let rotations: Vec<_> = self
            .rig_degrees
            .iter()
            .flat_map(|&d| standard_rotations(&base, d))
            .collect();
        make_rig(&base, &rotations)
    }

    pub fn n_cameras(&self) -> usize {
        1 + 4 * self.rig_degrees.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cameras();
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_demos == 0 {
            return bad("n_demos must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        for (what, views) in [
            ("train_views", &self.train_views),
            ("inference_views", &self.inference_views),
        ] {
            if views.is_empty() {
                return bad(format!("{what} is empty"));
            }
            if let Some(v) = views.iter().find(|&&v| v >= n) {
                return bad(format!("{what} contains camera {v}, but the rig has {n}"));
            }
        }
        if !self.compose && self.inference_views.len() != 1 {
            return bad("inference from several views requires compose = true".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.n_obs == 0 || self.horizon == 0 || self.execute == 0 || self.execute > self.horizon
        {
            return bad(format!(
                "need n_obs, horizon >= 1 and 1 <= execute <= horizon (got {}, {}, {})",
                self.n_obs, self.horizon, self.execute
            ));
        }
        if self.rig_degrees.iter().any(|d| !d.is_finite()) {
            return bad("rig angles must be finite".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 || self.train.hidden.contains(&0) {
            return bad("training needs positive epochs, batch size and layer widths".into());
        }
        NoiseSchedule::<f64>::from_spec(&self.schedule)?;
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
            .unwrap_or(1.0 / self.inference_views.len() as f64)
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            task: TaskSpec::new(self.task),
            n_obs: self.n_obs,
            horizon: self.horizon,
            execute: self.execute,
        }
    }
}

/// Seeds of the demonstrations collected for run `seed`.
pub fn demo_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9).wrapping_add(17)
}

/// Episode seeds for evaluating run `seed`. They do not depend on the
/// configuration, so different configurations are compared on the same
/// initial states.
pub fn evaluation_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let base = (1u64 << 40) + seed.wrapping_mul(1_000_003);
    (0..episodes as u64).map(|i| base + i).collect()
}

/// Collects the source demonstrations of one run.
pub fn collect_stage(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let rig = cfg.rig();
    let task = TaskSpec::new(cfg.task);
    let trajectories = collect_demos(&task, &rig, cfg.n_demos, demo_seed(seed), cfg.expert_noise)?;
    Ok(Dataset {
        space: cfg.space,
        rig,
        trajectories,
        stats: None,
    })
}

/// A trained checkpoint with its training curve.
#[derive(Clone, Debug)]
pub struct TrainedPolicy<T> {
    pub checkpoint: Checkpoint<T>,
    pub epoch_losses: Vec<f64>,
    pub train_seconds: f64,
}

/// Expands `dataset` into pseudo-demonstrations on the training views and
/// fits a policy.
pub fn train_stage<T: Real>(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
) -> Result<TrainedPolicy<T>> {
    let start = Instant::now();
    let demos = expand_all(
        &dataset.trajectories,
        &dataset.extrinsics(),
        cfg.space,
        &cfg.train_views,
    )?;
    let stats = norm_stats_for_space(&demos, cfg.horizon, cfg.space)?;
    let obs_stats = compute_obs_stats(&demos)?;
    let pairs = make_training_pairs(&demos, cfg.n_obs, cfg.horizon, &stats, &obs_stats)?;
    let schedule = NoiseSchedule::<T>::from_spec(&cfg.schedule)?;
    let (params, report) = train(&pairs, &schedule, &cfg.train.train_config(seed))?;
    Ok(TrainedPolicy {
        checkpoint: Checkpoint {
            header: CheckpointHeader {
                network: params.config.clone(),
                schedule: cfg.schedule,
                stats,
                obs_stats,
                space: cfg.space,
                n_obs: cfg.n_obs,
                horizon: cfg.horizon,
                train_views: cfg.train_views.clone(),
            },
            params,
        },
        epoch_losses: report.epoch_losses,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Rolls out `checkpoint` from `views`, composing when `compose` is set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_stage<T: Real>(
    checkpoint: &Checkpoint<T>,
    rig: &[CameraView],
    rollout: &RolloutConfig,
    views: &[usize],
    compose: bool,
    gamma: f64,
    seed: u64,
    episodes: usize,
) -> Result<Vec<EpisodeOutcome>> {
    let h = &checkpoint.header;
    if h.n_obs != rollout.n_obs || h.horizon != rollout.horizon {
        return Err(Error::Config(format!(
            "checkpoint expects n_obs = {}, horizon = {}; rollout uses {}, {}",
            h.n_obs, h.horizon, rollout.n_obs, rollout.horizon
        )));
    }
    let extrinsics: Vec<Pose<f64>> = rig.iter().map(|c| c.extrinsics).collect();
    let mut policy = DiffusionPolicy::new(
        checkpoint.params.clone(),
        NoiseSchedule::from_spec(&h.schedule)?,
        h.stats.clone(),
        h.obs_stats.clone(),
        h.space,
        extrinsics,
        views.to_vec(),
        compose.then_some(gamma),
    )?;
    evaluate(
        &mut policy,
        rollout,
        rig,
        views,
        &evaluation_seeds(seed, episodes),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub nonfinite_actions: usize,
    pub clipped_actions: usize,
    /// Last epoch's training loss; `None` when the policy was loaded rather
    /// than trained in the same run.
    pub final_train_loss: Option<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl SeedResult {
    pub fn from_outcomes(
        seed: u64,
        outcomes: &[EpisodeOutcome],
        final_train_loss: Option<f64>,
    ) -> Self {
        let n = outcomes.len().max(1) as f64;
        SeedResult {
            seed,
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_episode_length: outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n,
            nonfinite_actions: outcomes.iter().filter(|o| o.nonfinite).count(),
            clipped_actions: outcomes.iter().map(|o| o.clipped_actions).sum(),
            final_train_loss,
            train_seconds: 0.0,
            eval_seconds: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub per_seed: Vec<SeedResult>,
    pub mean_success: f64,
    pub stderr_success: f64,
    pub episode_length: LengthStats,
    pub nonfinite_actions: usize,
    pub wall_seconds: f64,
    /// The resolved configuration, as TOML.
    pub config: String,
}

/// Mean and standard error of the mean (sample standard deviation / √n;
/// zero for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl MetricsReport {
    pub fn new(
        cfg: &ExperimentConfig,
        per_seed: Vec<SeedResult>,
        lengths: &[usize],
        wall_seconds: f64,
    ) -> Self {
        let rates: Vec<f64> = per_seed.iter().map(|s| s.success_rate).collect();
        let (mean_success, stderr_success) = mean_stderr(&rates);
        let lf: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        let mean = lf.iter().sum::<f64>() / lf.len().max(1) as f64;
        let std =
            (lf.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lf.len().max(1) as f64).sqrt();
        MetricsReport {
            name: cfg.name.clone(),
            nonfinite_actions: per_seed.iter().map(|s| s.nonfinite_actions).sum(),
            per_seed,
            mean_success,
            stderr_success,
            episode_length: LengthStats {
                mean,
                std,
                min: lengths.iter().copied().min().unwrap_or(0),
                max: lengths.iter().copied().max().unwrap_or(0),
            },
            wall_seconds,
            config: cfg.to_toml(),
        }
    }

    /// The report with every wall-clock field zeroed.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for s in &mut r.per_seed {
            s.train_seconds = 0.0;
            s.eval_seconds = 0.0;
        }
        r
    }

    pub fn resolved_config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config)
    }
}

fn run_seed<T: Real>(
    cfg: &ExperimentConfig,
    seed: u64,
    lengths: &mut Vec<usize>,
) -> Result<SeedResult> {
    let dataset = collect_stage(cfg, seed).map_err(|e| e.in_stage("collect"))?;
    let trained = train_stage::<T>(cfg, &dataset, seed).map_err(|e| e.in_stage("train"))?;
    let start = Instant::now();
    let outcomes = evaluate_stage(
        &trained.checkpoint,
        &dataset.rig,
        &cfg.rollout(),
        &cfg.inference_views,
        cfg.compose,
        cfg.gamma(),
        seed,
        cfg.episodes,
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    lengths.extend(outcomes.iter().map(|o| o.steps));
    let mut result =
        SeedResult::from_outcomes(seed, &outcomes, trained.epoch_losses.last().copied());
    result.train_seconds = trained.train_seconds;
    result.eval_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Runs the full pipeline for every seed. Deterministic given `cfg` apart
/// from the wall-clock fields.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let start = Instant::now();
    let mut lengths = Vec::new();
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let r = match cfg.train.precision {
            Precision::F32 => run_seed::<f32>(cfg, seed, &mut lengths)?,
            Precision::F64 => run_seed::<f64>(cfg, seed, &mut lengths)?,
        };
        per_seed.push(r);
    }
    Ok(MetricsReport::new(
        cfg,
        per_seed,
        &lengths,
        start.elapsed().as_secs_f64(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "svg" | "svg-plot" => Ok(ReportFormat::Svg),
            "text" | "txt" | "text-table" => Ok(ReportFormat::Text),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Columns of the CSV report, in order.
pub const CSV_COLUMNS: [&str; 14] = [
    "name",
    "task",
    "space",
    "n_demos",
    "train_views",
    "inference_views",
    "compose",
    "gamma",
    "n_seeds",
    "mean_success",
    "stderr_success",
    "mean_episode_length",
    "nonfinite_actions",
    "wall_seconds",
];

/// Shortest decimal form of `x` rounded to nine significant digits.
pub fn sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn view_list(views: &[usize]) -> String {
    views
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn csv_row(r: &MetricsReport) -> Result<Vec<String>> {
    let cfg = r.resolved_config()?;
    Ok(vec![
        r.name.clone(),
        format!("{:?}", cfg.task).to_lowercase(),
        cfg.space.to_string(),
        cfg.n_demos.to_string(),
        view_list(&cfg.train_views),
        view_list(&cfg.inference_views),
        cfg.compose.to_string(),
        sig9(cfg.gamma()),
        r.per_seed.len().to_string(),
        sig9(r.mean_success),
        sig9(r.stderr_success),
        sig9(r.episode_length.mean),
        r.nonfinite_actions.to_string(),
        sig9(r.wall_seconds),
    ])
}

fn render_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in reports {
        w.write_record(csv_row(r)?).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn render_svg(reports: &[MetricsReport]) -> String {
    const H: f64 = 300.0;
    const TOP: f64 = 20.0;
    const LEFT: f64 = 50.0;
    const BAR: f64 = 40.0;
    const GAP: f64 = 30.0;
    let width = LEFT + reports.len() as f64 * (BAR + GAP) + GAP;
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 1.0)) * (H - TOP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        H + 60.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{H}" x2="{width}" y2="{H}" stroke="black"/>"#
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#,
            LEFT - 5.0,
            y(tick) + 4.0
        );
    }
    for (i, r) in reports.iter().enumerate() {
        let x = LEFT + GAP + i as f64 * (BAR + GAP);
        let top = y(r.mean_success);
        let cx = x + BAR / 2.0;
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x}" y="{top}" width="{BAR}" height="{}" fill="steelblue"><title>{}: {} ± {}</title></rect>"#,
            H - top,
            xml_escape(&r.name),
            sig9(r.mean_success),
            sig9(r.stderr_success)
        );
        let (lo, hi) = (
            y(r.mean_success - r.stderr_success),
            y(r.mean_success + r.stderr_success),
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx}" y1="{lo}" x2="{cx}" y2="{hi}" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{}" text-anchor="middle">{}</text>"#,
            H + 15.0,
            xml_escape(&r.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn render_text(reports: &[MetricsReport]) -> Result<String> {
    let header = [
        "config",
        "space",
        "train views",
        "inference views",
        "N",
        "success",
    ];
    let mut rows = vec![header.map(String::from).to_vec()];
    for r in reports {
        let cfg = r.resolved_config()?;
        let inference = if cfg.compose {
            format!("{} (composed)", view_list(&cfg.inference_views))
        } else {
            view_list(&cfg.inference_views)
        };
        rows.push(vec![
            r.name.clone(),
            cfg.space.to_string(),
            view_list(&cfg.train_views),
            inference,
            cfg.n_demos.to_string(),
            format!("{:.3} ± {:.3}", r.mean_success, r.stderr_success),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Renders `reports` (one row or bar per configuration) and writes `path`.
pub fn emit_report(
    reports: &[MetricsReport],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(reports)?,
        ReportFormat::Svg => render_svg(reports),
        ReportFormat::Text => render_text(reports)?,
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_reports(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(reports).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_cameras(), 5);
        assert_eq!(cfg.rig().len(), 5);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "name = \"five\"\ntrain_views = [0, 1, 2, 3, 4]\nspace = \"camera\"\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.train_views.len(), 5);
        assert_eq!(cfg.space, ActionSpace::Camera);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 256);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "n_demos = 0",
            "seeds = []",
            "train_views = [5]",
            "inference_views = [0, 1]",
            "execute = 9",
            "unknown_key = 1",
            "space = \"joint\"",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn stderr_matches_hand_computation() {
        let (m, s) = mean_stderr(&[0.2, 0.4, 0.6]);
        assert!((m - 0.4).abs() < 1e-15);
        assert!((s - (0.04f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[0.5]), (0.5, 0.0));
    }

    #[test]
    fn sig9_rounds() {
        assert_eq!(sig9(0.123456789012), "0.123456789");
        assert_eq!(sig9(0.5), "0.5");
        assert_eq!(sig9(1234567890123.0), "1234567890000");
    }
}
