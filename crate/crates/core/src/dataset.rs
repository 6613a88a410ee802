//! Dataset manifests, per-trial signal files, and the synthetic generator.
//!
//! A dataset on disk is a `manifest.json` next to a tree of CSV files, one per
//! trial. The manifest's `trial_path_template` resolves to a trial file with
//! the placeholders `{user}`, `{session}`, `{gesture}` and `{trial}`. Sessions
//! are numbered `1..=sessions_per_user`; trial indices start at 0 and are
//! contiguous within a (session, gesture) pair.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};
use crate::{ElectrodeId, Error, GestureId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureGroup {
    SingleFinger,
    MultiFinger,
    Wrist,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureDef {
    pub id: GestureId,
    pub name: String,
    pub group: GestureGroup,
}

/// One sensing site on the flattened forearm map.
///
/// `x_mm` runs along the forearm away from the wrist and `y_mm` runs around
/// the circumference. Electrodes with a `ring_index` form the circumferential
/// ring used for band baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeSite {
    pub id: ElectrodeId,
    pub x_mm: f64,
    pub y_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub muscle_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub channel_count: usize,
    pub sampling_rate_hz: f64,
    pub gestures: Vec<GestureDef>,
    pub electrodes: Vec<ElectrodeSite>,
    pub electrode_diameter_mm: f64,
    pub inter_electrode_spacing_mm: f64,
    pub users: Vec<String>,
    pub sessions_per_user: u32,
    pub trial_path_template: String,
}

impl DatasetManifest {
    /// Checks every manifest invariant. Errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("name", "must not be empty"));
        }
        if self.channel_count == 0 {
            return Err(Error::invalid("channel_count", "must be positive"));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid("sampling_rate_hz", "must be a positive number"));
        }
        if !(self.electrode_diameter_mm.is_finite() && self.electrode_diameter_mm > 0.0) {
            return Err(Error::invalid("electrode_diameter_mm", "must be a positive number"));
        }
        if !(self.inter_electrode_spacing_mm.is_finite() && self.inter_electrode_spacing_mm > 0.0) {
            return Err(Error::invalid(
                "inter_electrode_spacing_mm",
                "must be a positive number",
            ));
        }
        if self.electrodes.len() != self.channel_count {
            return Err(Error::invalid(
                "electrodes",
                format!(
                    "lists {} electrodes but channel_count is {}",
                    self.electrodes.len(),
                    self.channel_count
                ),
            ));
        }
        let mut seen = vec![false; self.channel_count];
        let mut rings = HashSet::new();
        for (i, e) in self.electrodes.iter().enumerate() {
            if e.id >= self.channel_count {
                return Err(Error::invalid(
                    format!("electrodes[{i}].id"),
                    format!("{} is outside 0..{}", e.id, self.channel_count),
                ));
            }
            if std::mem::replace(&mut seen[e.id], true) {
                return Err(Error::invalid(
                    format!("electrodes[{i}].id"),
                    format!("duplicate electrode id {}", e.id),
                ));
            }
            if !(e.x_mm.is_finite() && e.y_mm.is_finite()) {
                return Err(Error::invalid(
                    format!("electrodes[{i}]"),
                    "coordinates must be finite",
                ));
            }
            if let Some(r) = e.ring_index {
                if !rings.insert(r) {
                    return Err(Error::invalid(
                        format!("electrodes[{i}].ring_index"),
                        format!("duplicate ring index {r}"),
                    ));
                }
            }
        }
        if self.gestures.is_empty() {
            return Err(Error::invalid("gestures", "must not be empty"));
        }
        let mut gesture_ids = HashSet::new();
        for (i, g) in self.gestures.iter().enumerate() {
            if !gesture_ids.insert(g.id) {
                return Err(Error::invalid(
                    format!("gestures[{i}].id"),
                    format!("duplicate gesture id {}", g.id),
                ));
            }
            if g.name.trim().is_empty() {
                return Err(Error::invalid(format!("gestures[{i}].name"), "must not be empty"));
            }
        }
        if self.users.is_empty() {
            return Err(Error::invalid("users", "must not be empty"));
        }
        let mut users = HashSet::new();
        for (i, u) in self.users.iter().enumerate() {
            if u.is_empty() || !users.insert(u) {
                return Err(Error::invalid(
                    format!("users[{i}]"),
                    "user ids must be unique and non-empty",
                ));
            }
        }
        if self.sessions_per_user == 0 {
            return Err(Error::invalid("sessions_per_user", "must be positive"));
        }
        for placeholder in ["{gesture}", "{trial}"] {
            if !self.trial_path_template.contains(placeholder) {
                return Err(Error::invalid(
                    "trial_path_template",
                    format!("must contain {placeholder}"),
                ));
            }
        }
        Ok(())
    }

    pub fn electrode(&self, id: ElectrodeId) -> Option<&ElectrodeSite> {
        self.electrodes.iter().find(|e| e.id == id)
    }

    pub fn gesture(&self, id: GestureId) -> Option<&GestureDef> {
        self.gestures.iter().find(|g| g.id == id)
    }

    /// Electrode ids in ascending order.
    pub fn electrode_ids(&self) -> Vec<ElectrodeId> {
        (0..self.channel_count).collect()
    }

    pub fn sessions(&self) -> Vec<u32> {
        (1..=self.sessions_per_user).collect()
    }

    /// Path of one trial file relative to the dataset root.
    pub fn trial_path(&self, user: &str, session: u32, gesture: GestureId, trial: u32) -> PathBuf {
        PathBuf::from(
            self.trial_path_template
                .replace("{user}", user)
                .replace("{session}", &session.to_string())
                .replace("{gesture}", &gesture.to_string())
                .replace("{trial}", &trial.to_string()),
        )
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// One recorded gesture repetition: `len()` rows of `channels` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub user: String,
    pub session: u32,
    pub gesture_id: GestureId,
    pub trial_index: u32,
    pub channels: usize,
    /// Row-major samples, `len() * channels` values.
    pub samples: Vec<f64>,
}

impl TrialRecord {
    pub fn new(
        user: impl Into<String>,
        session: u32,
        gesture_id: GestureId,
        trial_index: u32,
        channels: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || samples.len() % channels != 0 {
            return Err(Error::invalid("samples", "length is not a multiple of the channel count"));
        }
        if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "trial sample row {} column {}",
                pos / channels,
                pos % channels
            )));
        }
        Ok(Self {
            user: user.into(),
            session,
            gesture_id,
            trial_index,
            channels,
            samples,
        })
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, t: usize, channel: usize) -> f64 {
        self.samples[t * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().skip(channel).step_by(self.channels).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 8);
        for row in self.samples.chunks(self.channels) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a headerless trial CSV with exactly `channels` columns per row.
pub fn read_trial_csv(path: &Path, channels: usize) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if record.len() != channels {
            return Err(Error::ColumnMismatch {
                context: format!("{} row {row}", path.display()),
                expected: channels,
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("row {row} column {col}: {field:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} row {row} column {col}",
                    path.display()
                )));
            }
            samples.push(v);
        }
    }
    Ok(samples)
}

/// Loads every trial of `user` in `sessions`, sorted by
/// `(session, gesture_id, trial_index)`.
///
/// Trial indices are probed from 0 upwards until the first missing file; a
/// (session, gesture) pair without any trial file is an error.
pub fn load_trials(
    manifest: &DatasetManifest,
    root: &Path,
    user: &str,
    sessions: &[u32],
) -> Result<Vec<TrialRecord>> {
    if !manifest.users.iter().any(|u| u == user) {
        return Err(Error::UnknownUser(user.to_string()));
    }
    let mut sessions = sessions.to_vec();
    sessions.sort_unstable();
    sessions.dedup();
    let mut gestures: Vec<GestureId> = manifest.gestures.iter().map(|g| g.id).collect();
    gestures.sort_unstable();

    let mut trials = Vec::new();
    for &session in &sessions {
        if session == 0 || session > manifest.sessions_per_user {
            return Err(Error::invalid(
                "sessions",
                format!("session {session} outside 1..={}", manifest.sessions_per_user),
            ));
        }
        for &gesture in &gestures {
            let mut trial = 0u32;
            loop {
                let path = root.join(manifest.trial_path(user, session, gesture, trial));
                if !path.exists() {
                    if trial == 0 {
                        return Err(Error::MissingFile(path));
                    }
                    break;
                }
                let samples = read_trial_csv(&path, manifest.channel_count)?;
                if samples.len() < 3 * manifest.channel_count {
                    return Err(Error::invalid(
                        path.display().to_string(),
                        "a trial needs at least 3 samples",
                    ));
                }
                trials.push(TrialRecord {
                    user: user.to_string(),
                    session,
                    gesture_id: gesture,
                    trial_index: trial,
                    channels: manifest.channel_count,
                    samples,
                });
                trial += 1;
            }
        }
    }
    Ok(trials)
}

/// A manifest together with the directory its trial paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    /// Opens `path`, which is either a `manifest.json` or a directory holding one.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        };
        let manifest = load_manifest(&manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn load_trials(&self, user: &str, sessions: &[u32]) -> Result<Vec<TrialRecord>> {
        load_trials(&self.manifest, &self.root, user, sessions)
    }

    /// All sessions of one user.
    pub fn load_user(&self, user: &str) -> Result<Vec<TrialRecord>> {
        self.load_trials(user, &self.manifest.sessions())
    }
}

/// Writes `manifest.json` and every trial CSV under `dir`.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, trials: &[TrialRecord]) -> Result<()> {
    save_manifest(dir.join("manifest.json"), manifest)?;
    for trial in trials {
        let path = dir.join(manifest.trial_path(
            &trial.user,
            trial.session,
            trial.gesture_id,
            trial.trial_index,
        ));
        write_file(&path, trial.to_csv().as_bytes())?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

/// Parameters of the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub channel_count: usize,
    pub gesture_count: usize,
    pub users: usize,
    pub trials_per_gesture: usize,
    pub samples_per_trial: usize,
    pub informative_channels: Vec<ElectrodeId>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("channel_count", self.channel_count),
            ("gesture_count", self.gesture_count),
            ("users", self.users),
        ] {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.trials_per_gesture < 4 {
            return Err(Error::invalid("trials_per_gesture", "must be at least 4"));
        }
        if self.samples_per_trial < 3 {
            return Err(Error::invalid("samples_per_trial", "must be at least 3"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be a nonnegative number"));
        }
        let mut seen = HashSet::new();
        for (i, &c) in self.informative_channels.iter().enumerate() {
            if c >= self.channel_count || !seen.insert(c) {
                return Err(Error::invalid(
                    format!("informative_channels[{i}]"),
                    format!("{c} is not a distinct id in 0..{}", self.channel_count),
                ));
            }
        }
        Ok(())
    }
}

/// Electrode pitch of synthetic rings.
pub const SYNTHETIC_SPACING_MM: f64 = 20.0;
pub const SYNTHETIC_DIAMETER_MM: f64 = 10.0;

/// RMS level of informative channel number `rank` (position in the informative
/// list) for gesture `gesture`. Levels are exact binary fractions so noiseless
/// trials have an exactly representable RMS.
pub fn synthetic_level(rank: usize, gesture: usize, gesture_count: usize) -> f64 {
    1.0 + 0.5 * ((gesture + rank) % gesture_count) as f64
}

/// Generates a ring-shaped synthetic dataset.
///
/// Informative channels carry a square wave of amplitude
/// [`synthetic_level`] plus Gaussian noise; every other channel is pure noise.
/// Output depends only on `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DatasetManifest, Vec<TrialRecord>)> {
    spec.validate()?;
    let groups = [
        GestureGroup::SingleFinger,
        GestureGroup::MultiFinger,
        GestureGroup::Wrist,
    ];
    let manifest = DatasetManifest {
        name: format!("synthetic-{}", spec.seed),
        channel_count: spec.channel_count,
        sampling_rate_hz: 2048.0,
        gestures: (0..spec.gesture_count)
            .map(|g| GestureDef {
                id: g as GestureId,
                name: format!("gesture_{g}"),
                group: groups[g % groups.len()],
            })
            .collect(),
        electrodes: (0..spec.channel_count)
            .map(|c| ElectrodeSite {
                id: c,
                x_mm: 0.0,
                y_mm: c as f64 * SYNTHETIC_SPACING_MM,
                ring_index: Some(c),
                muscle_label: None,
            })
            .collect(),
        electrode_diameter_mm: SYNTHETIC_DIAMETER_MM,
        inter_electrode_spacing_mm: SYNTHETIC_SPACING_MM,
        users: (0..spec.users).map(|u| format!("u{u}")).collect(),
        sessions_per_user: 1,
        trial_path_template: "{user}/s{session}/g{gesture}_t{trial}.csv".to_string(),
    };

    let mut rank_of = vec![None; spec.channel_count];
    for (rank, &c) in spec.informative_channels.iter().enumerate() {
        rank_of[c] = Some(rank);
    }
    let base = rng::derive(spec.seed, tag::SYNTH);
    let mut trials = Vec::with_capacity(spec.users * spec.gesture_count * spec.trials_per_gesture);
    for (u, user) in manifest.users.iter().enumerate() {
        for g in 0..spec.gesture_count {
            for t in 0..spec.trials_per_gesture {
                let unit = ((u * spec.gesture_count + g) * spec.trials_per_gesture + t) as u64;
                let mut rng = rng::stream(base, unit);
                let mut samples = Vec::with_capacity(spec.samples_per_trial * spec.channel_count);
                for s in 0..spec.samples_per_trial {
                    let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                    for rank in &rank_of {
                        let z: f64 = rng.sample(StandardNormal);
                        let signal = rank
                            .map(|r| sign * synthetic_level(r, g, spec.gesture_count))
                            .unwrap_or(0.0);
                        samples.push(signal + spec.noise_sigma * z);
                    }
                }
                trials.push(TrialRecord {
                    user: user.clone(),
                    session: 1,
                    gesture_id: g as GestureId,
                    trial_index: t as u32,
                    channels: spec.channel_count,
                    samples,
                });
            }
        }
    }
    Ok((manifest, trials))
}

/// Trials of one user, in generator order.
pub fn trials_of(trials: &[TrialRecord], user: &str) -> Vec<TrialRecord> {
    trials.iter().filter(|t| t.user == user).cloned().collect()
}
