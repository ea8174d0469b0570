//! Expert trajectories, their per-view pseudo-demonstrations, normalized
//! training pairs and the on-disk dataset format.
//!
//! # On-disk layout
//!
//! A dataset directory holds `manifest.json` and one `traj_<id>.bin` per
//! source trajectory. The manifest carries the format version, the number of
//! views and trajectories, the action space, the camera rig, the
//! normalization statistics and a CRC32 per trajectory file. Trajectory files
//! are little-endian:
//!
//! ```text
//! magic   8 bytes  "VSTRAJ\0\0"
//! version u32
//! id      u64
//! length  u64      L
//! views   u64      V
//! poses   u64 n, then n f64   (12 per step: row-major rotation, translation)
//! actions u64 n, then n f64   (13 per step: dp, row-major ΔR, gripper)
//! obs     V times: u64 n, then n f64 (10 per step)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Error, Result};
use crate::geometry::{
    action_to_camera, action_to_eef, Action, ActionSpace, ActionSpaceTag, Pose, Rotation, Vec3,
};
use crate::sim::{CameraView, Observation, OBS_DIM};

pub const FORMAT_VERSION: u32 = 1;
/// Per-step action vector: dp (3), axis-angle (3), gripper (1).
pub const ACTION_DIM: usize = 7;
const TRAJ_MAGIC: &[u8; 8] = b"VSTRAJ\0\0";
const MIN_WIDTH: f64 = 1e-8;
const DEGENERATE_WIDENING: f64 = 1e-4;

/// One expert demonstration recorded synchronously from every camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub eef_poses: Vec<Pose<f64>>,
    /// Base-space actions.
    pub actions: Vec<Action<f64>>,
    /// `observations[v][t]`.
    pub observations: Vec<Vec<Observation>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn n_views(&self) -> usize {
        self.observations.len()
    }

    /// Equal sequence lengths and pose/action kinematic consistency.
    pub fn validate(&self) -> Result<()> {
        let l = self.horizon();
        if l == 0 {
            return Err(Error::Config(format!("trajectory {} is empty", self.id)));
        }
        if self.eef_poses.len() != l || self.observations.iter().any(|o| o.len() != l) {
            return Err(Error::Config(format!(
                "trajectory {} has mismatched sequence lengths",
                self.id
            )));
        }
        for t in 0..l - 1 {
            let next = self.eef_poses[t].apply_action(&self.actions[t]);
            let err = next
                .translation
                .max_abs_diff(&self.eef_poses[t + 1].translation)
                .max(next.rotation.max_abs_diff(&self.eef_poses[t + 1].rotation));
            if err > 1e-6 {
                return Err(Error::Config(format!(
                    "trajectory {} is kinematically inconsistent at step {t} (error {err:e})",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A trajectory seen from one camera, with actions in the chosen space.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoDemonstration {
    pub source_id: u64,
    pub view: usize,
    pub space: ActionSpaceTag,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action<f64>>,
}

/// Expands one trajectory into one pseudo-demonstration per rig camera.
pub fn expand_multiview(
    traj: &Trajectory,
    rig: &[Pose<f64>],
    space: ActionSpace,
) -> Result<Vec<PseudoDemonstration>> {
    if rig.is_empty() || rig.len() != traj.n_views() {
        return Err(Error::Config(format!(
            "rig has {} cameras but trajectory {} has {} observation streams",
            rig.len(),
            traj.id,
            traj.n_views()
        )));
    }
    let demos = (0..rig.len())
        .map(|v| {
            let actions = match space {
                ActionSpace::Base => traj.actions.clone(),
                ActionSpace::Eef => traj
                    .actions
                    .iter()
                    .zip(&traj.eef_poses)
                    .map(|(a, pose)| action_to_eef(a, pose))
                    .collect(),
                ActionSpace::Camera => traj
                    .actions
                    .iter()
                    .map(|a| action_to_camera(a, &rig[v]))
                    .collect(),
            };
            PseudoDemonstration {
                source_id: traj.id,
                view: v,
                space: space.tag(v),
                observations: traj.observations[v].clone(),
                actions,
            }
        })
        .collect();
    Ok(demos)
}

/// Expands every trajectory, keeping only the listed views.
pub fn expand_all(
    trajectories: &[Trajectory],
    rig: &[Pose<f64>],
    space: ActionSpace,
    views: &[usize],
) -> Result<Vec<PseudoDemonstration>> {
    let mut out = Vec::with_capacity(trajectories.len() * views.len());
    for t in trajectories {
        let demos = expand_multiview(t, rig, space)?;
        for &v in views {
            let d = demos.get(v).ok_or_else(|| {
                Error::Config(format!("view {v} outside rig of {} cameras", rig.len()))
            })?;
            out.push(d.clone());
        }
    }
    Ok(out)
}

pub fn encode_action(a: &Action<f64>) -> [f64; ACTION_DIM] {
    let w = a.dr.to_axis_angle().unwrap_or_else(|_| Vec3::zero());
    [a.dp[0], a.dp[1], a.dp[2], w[0], w[1], w[2], a.gripper]
}

/// Inverse of [`encode_action`]. Axis-angle vectors at or beyond π are
/// shrunk just inside the valid ball; the gripper is clamped to [0, 1].
pub fn decode_action(v: &[f64]) -> Action<f64> {
    let mut w = Vec3::new(v[3], v[4], v[5]);
    let n = w.norm();
    let limit = std::f64::consts::PI * 0.999;
    if n >= limit {
        w = w * (limit / n);
    }
    let dr = Rotation::from_axis_angle(w).unwrap_or_default();
    Action::new(Vec3::new(v[0], v[1], v[2]), dr, v[6].clamp(0.0, 1.0))
}

/// `H` actions starting at `t`, repeating the last action past the end.
pub fn action_chunk(actions: &[Action<f64>], t: usize, horizon: usize) -> Vec<f64> {
    let last = actions.len() - 1;
    (0..horizon)
        .flat_map(|j| encode_action(&actions[(t + j).min(last)]))
        .collect()
}

/// `n_obs` observations ending at `t` (oldest first), repeating the first
/// observation before the start.
pub fn observation_stack(obs: &[Observation], t: usize, n_obs: usize) -> Vec<f64> {
    (0..n_obs)
        .flat_map(|j| {
            let back = n_obs - 1 - j;
            obs[t.saturating_sub(back)].0
        })
        .collect()
}

/// Per-dimension bounds of single observations, mapped to [-1, 1]. Applied
/// to every element of an observation stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ObsStats {
    /// Bounds that leave observations unchanged.
    pub fn identity(dim: usize) -> Self {
        ObsStats {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, stack: &[f64]) -> Vec<f64> {
        let d = self.dim();
        stack
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = (self.min[i % d], self.max[i % d]);
                2.0 * (v - lo) / (hi - lo) - 1.0
            })
            .collect()
    }
}

/// Elementwise bounds over every observation of every demo; narrow
/// dimensions are widened as for actions.
pub fn compute_obs_stats(demos: &[PseudoDemonstration]) -> Result<ObsStats> {
    let mut min = vec![f64::INFINITY; OBS_DIM];
    let mut max = vec![f64::NEG_INFINITY; OBS_DIM];
    for o in demos.iter().flat_map(|d| &d.observations) {
        for (i, v) in o.0.iter().enumerate() {
            min[i] = min[i].min(*v);
            max[i] = max[i].max(*v);
        }
    }
    if min[0] > max[0] {
        return Err(Error::Config(
            "cannot compute statistics of an empty dataset".into(),
        ));
    }
    for i in 0..OBS_DIM {
        if max[i] - min[i] <= MIN_WIDTH {
            min[i] -= DEGENERATE_WIDENING;
            max[i] += DEGENERATE_WIDENING;
        }
    }
    Ok(ObsStats { min, max })
}

/// Per-dimension bounds of flattened action chunks, mapped to [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub horizon: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v + 1.0) * 0.5 * (hi - lo) + lo)
            .collect()
    }

    /// Half-width of dimension `i`: one normalized unit in action units.
    pub fn half_range(&self, i: usize) -> f64 {
        0.5 * (self.max[i] - self.min[i])
    }

    /// Gives the three dimensions of every dp and axis-angle block the same
    /// half-width (the largest of the three), keeping each midpoint. With
    /// isotropic blocks a rotation of a normalized 3-vector is still a
    /// rotation of the underlying action vector.
    pub fn with_isotropic_blocks(mut self) -> Self {
        for step in 0..self.horizon {
            for block in [0, 3] {
                let base = step * ACTION_DIM + block;
                let half = (base..base + 3)
                    .map(|i| self.half_range(i))
                    .fold(0.0, f64::max);
                for i in base..base + 3 {
                    let mid = 0.5 * (self.max[i] + self.min[i]);
                    self.min[i] = mid - half;
                    self.max[i] = mid + half;
                }
            }
        }
        self
    }

    pub fn is_isotropic(&self) -> bool {
        (0..self.horizon).all(|step| {
            [0, 3].iter().all(|&block| {
                let base = step * ACTION_DIM + block;
                let h = self.half_range(base);
                (base + 1..base + 3).all(|i| (self.half_range(i) - h).abs() <= 1e-12 * h.max(1.0))
            })
        })
    }
}

/// Elementwise min/max over every flattened chunk of every demo, all views
/// jointly. Dimensions narrower than 1e-8 are widened by ±1e-4.
pub fn compute_norm_stats(demos: &[PseudoDemonstration], horizon: usize) -> Result<NormStats> {
    if demos.is_empty() || demos.iter().all(|d| d.actions.is_empty()) {
        return Err(Error::Config(
            "cannot compute statistics of an empty dataset".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::Config("chunk horizon must be at least 1".into()));
    }
    let dim = ACTION_DIM * horizon;
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for d in demos.iter().filter(|d| !d.actions.is_empty()) {
        // Chunks only repeat the per-step encodings, so the per-step extremes
        // at each chunk offset follow from the padded sequence.
        for t in 0..d.actions.len() {
            let chunk = action_chunk(&d.actions, t, horizon);
            for (i, v) in chunk.iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
    }
    for i in 0..dim {
        if max[i] - min[i] <= MIN_WIDTH {
            min[i] -= DEGENERATE_WIDENING;
            max[i] += DEGENERATE_WIDENING;
        }
    }
    Ok(NormStats { horizon, min, max })
}

/// Statistics appropriate for `space`: camera-space policies need isotropic
/// 3-blocks so per-view rotations commute with normalization.
pub fn norm_stats_for_space(
    demos: &[PseudoDemonstration],
    horizon: usize,
    space: ActionSpace,
) -> Result<NormStats> {
    let stats = compute_norm_stats(demos, horizon)?;
    Ok(match space {
        ActionSpace::Camera => stats.with_isotropic_blocks(),
        _ => stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub observation_stack: Vec<f64>,
    /// Normalized, time-major: `ACTION_DIM` entries per step.
    pub action_chunk: Vec<f64>,
}

/// One pair per timestep of every demo.
pub fn make_training_pairs(
    demos: &[PseudoDemonstration],
    n_obs: usize,
    horizon: usize,
    stats: &NormStats,
    obs_stats: &ObsStats,
) -> Result<Vec<TrainingPair>> {
    if demos.is_empty() {
        return Err(Error::Config(
            "no demonstrations to build training pairs from".into(),
        ));
    }
    if n_obs == 0 || horizon == 0 {
        return Err(Error::Config(format!(
            "n_obs ({n_obs}) and horizon ({horizon}) must be at least 1"
        )));
    }
    if stats.dim() != ACTION_DIM * horizon {
        return Err(Error::Config(format!(
            "statistics cover {} dims, chunks have {}",
            stats.dim(),
            ACTION_DIM * horizon
        )));
    }
    let mut pairs = Vec::with_capacity(demos.iter().map(|d| d.actions.len()).sum());
    for d in demos {
        for t in 0..d.actions.len() {
            pairs.push(TrainingPair {
                observation_stack: obs_stats.normalize(&observation_stack(
                    &d.observations,
                    t,
                    n_obs,
                )),
                action_chunk: stats.normalize(&action_chunk(&d.actions, t, horizon)),
            });
        }
    }
    Ok(pairs)
}

/// Source trajectories plus everything needed to derive the training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub space: ActionSpace,
    pub rig: Vec<CameraView>,
    pub trajectories: Vec<Trajectory>,
    pub stats: Option<NormStats>,
}

impl Dataset {
    pub fn extrinsics(&self) -> Vec<Pose<f64>> {
        self.rig.iter().map(|c| c.extrinsics).collect()
    }

    /// All `N · V` pseudo-demonstrations.
    pub fn pseudo_demos(&self) -> Result<Vec<PseudoDemonstration>> {
        let views: Vec<usize> = (0..self.rig.len()).collect();
        expand_all(&self.trajectories, &self.extrinsics(), self.space, &views)
    }
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    id: u64,
    file: String,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    n_views: usize,
    n_trajectories: usize,
    space: ActionSpace,
    rig: Vec<CameraView>,
    stats: Option<NormStats>,
    files: Vec<FileEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::with_capacity(ds.trajectories.len());
    for t in &ds.trajectories {
        let bytes = encode_trajectory(t);
        let name = format!("traj_{}.bin", t.id);
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        files.push(FileEntry {
            id: t.id,
            file: name,
            crc32: crc32fast::hash(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_views: ds.rig.len(),
        n_trajectories: ds.trajectories.len(),
        space: ds.space,
        rig: ds.rig.clone(),
        stats: ds.stats.clone(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Malformed {
        what: "manifest".into(),
        detail: e.to_string(),
    })?;
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
            what: "manifest".into(),
            detail: e.to_string(),
        })?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DatasetError::Malformed {
            what: "manifest".into(),
            detail: "missing format_version".into(),
        })?;
    if found != FORMAT_VERSION as u64 {
        return Err(DatasetError::Version {
            found: found as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| DatasetError::Malformed {
        what: "manifest".into(),
        detail: e.to_string(),
    })?;
    if manifest.files.len() != manifest.n_trajectories || manifest.rig.len() != manifest.n_views {
        return Err(DatasetError::Malformed {
            what: "manifest".into(),
            detail: "counts disagree with listed files or rig".into(),
        });
    }
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let computed = crc32fast::hash(&bytes);
        if computed != entry.crc32 {
            return Err(DatasetError::Checksum {
                file: entry.file.clone(),
                stored: entry.crc32,
                computed,
            });
        }
        let t = decode_trajectory(&bytes, &entry.file)?;
        if t.id != entry.id || t.n_views() != manifest.n_views {
            return Err(DatasetError::Malformed {
                what: entry.file.clone(),
                detail: "id or view count disagrees with manifest".into(),
            });
        }
        trajectories.push(t);
    }
    Ok(Dataset {
        space: manifest.space,
        rig: manifest.rig,
        trajectories,
        stats: manifest.stats,
    })
}

pub(crate) fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    buf.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn encode_trajectory(t: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TRAJ_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&t.id.to_le_bytes());
    buf.extend_from_slice(&(t.horizon() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.n_views() as u64).to_le_bytes());
    let poses: Vec<f64> = t
        .eef_poses
        .iter()
        .flat_map(|p| {
            let mut v: Vec<f64> = p.rotation.matrix().iter().flatten().copied().collect();
            v.extend_from_slice(&p.translation.0);
            v
        })
        .collect();
    put_f64s(&mut buf, &poses);
    let actions: Vec<f64> = t
        .actions
        .iter()
        .flat_map(|a| {
            let mut v = a.dp.0.to_vec();
            v.extend(a.dr.matrix().iter().flatten());
            v.push(a.gripper);
            v
        })
        .collect();
    put_f64s(&mut buf, &actions);
    for stream in &t.observations {
        let obs: Vec<f64> = stream.iter().flat_map(|o| o.0).collect();
        put_f64s(&mut buf, &obs);
    }
    buf
}

/// Cursor over a little-endian byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'a str) -> Self {
        Reader {
            bytes,
            pos: 0,
            what,
        }
    }

    pub(crate) fn malformed(&self, detail: impl Into<String>) -> DatasetError {
        DatasetError::Malformed {
            what: self.what.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, expected: usize) -> Result<Vec<f64>, DatasetError> {
        let n = self.u64()? as usize;
        if n != expected {
            return Err(self.malformed(format!("array of {n} values, expected {expected}")));
        }
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.malformed("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn mat3(v: &[f64]) -> [[f64; 3]; 3] {
    [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]
}

fn decode_trajectory(bytes: &[u8], name: &str) -> Result<Trajectory, DatasetError> {
    let mut r = Reader::new(bytes, name);
    if r.take(8)? != TRAJ_MAGIC {
        return Err(r.malformed("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let id = r.u64()?;
    let len = r.u64()? as usize;
    let views = r.u64()? as usize;
    if len > bytes.len() || views > bytes.len() {
        return Err(r.malformed("implausible header"));
    }
    let poses = r
        .f64s(12 * len)?
        .chunks_exact(12)
        .map(|c| {
            Pose::new(
                Rotation::from_matrix_unchecked(mat3(&c[..9])),
                Vec3([c[9], c[10], c[11]]),
            )
        })
        .collect();
    let actions = r
        .f64s(13 * len)?
        .chunks_exact(13)
        .map(|c| {
            Action::new(
                Vec3([c[0], c[1], c[2]]),
                Rotation::from_matrix_unchecked(mat3(&c[3..12])),
                c[12],
            )
        })
        .collect();
    let mut observations = Vec::with_capacity(views);
    for _ in 0..views {
        let stream = r
            .f64s(OBS_DIM * len)?
            .chunks_exact(OBS_DIM)
            .map(|c| Observation(c.try_into().unwrap()))
            .collect();
        observations.push(stream);
    }
    if !r.finished() {
        return Err(r.malformed("trailing bytes"));
    }
    Ok(Trajectory {
        id,
        eef_poses: poses,
        actions,
        observations,
    })
}
