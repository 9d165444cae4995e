//! Client-side pieces that do not depend on a transport: the local profile,
//! placeholder rendering, plan execution and state persistence. The HTTP
//! conversation loop lives in the CLI crate.
//!
//! The client treats the state as an opaque [`WireState`]: it stores what
//! the server returned and sends it back verbatim.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hub::HubResponse;
use crate::knowledge::{LikelinessLevel, DEFAULT_CULTURE};
use crate::planmgr::Action;
use crate::state::{ClientState, StateLayout, WireState};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("profile {path}: {message}")]
    Profile { path: PathBuf, message: String },
    #[error("state file {path} is corrupt: {message}")]
    CorruptState { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    placeholders: BTreeMap<String, String>,
    #[serde(default)]
    capabilities: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_path: Option<PathBuf>,
}

/// Personal data that never leaves the device, plus what the device can do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalProfile {
    pub placeholders: BTreeMap<String, String>,
    pub capabilities: BTreeSet<String>,
    pub state_path: PathBuf,
}

impl LocalProfile {
    pub fn new(state_path: impl Into<PathBuf>) -> Self {
        LocalProfile {
            placeholders: BTreeMap::new(),
            capabilities: BTreeSet::new(),
            state_path: state_path.into(),
        }
    }

    pub fn with_placeholder(mut self, key: &str, value: &str) -> Self {
        let key = if key.starts_with('$') {
            key.to_string()
        } else {
            format!("${key}")
        };
        self.placeholders.insert(key, value.to_string());
        self
    }

    pub fn with_capability(mut self, action: &str) -> Self {
        self.capabilities.insert(action.to_string());
        self
    }

    /// Reads a profile file. Without an explicit `state_path` the state is
    /// kept next to the profile as `<stem>.state.json`.
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let err = |message: String| ClientError::Profile {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ProfileFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if let Some(bad) = file.placeholders.keys().find(|k| !k.starts_with('$') || k.len() < 2) {
            return Err(err(format!("placeholder key {bad:?} must look like $name")));
        }
        let state_path = match file.state_path {
            Some(p) if p.is_relative() => path.parent().unwrap_or(Path::new(".")).join(p),
            Some(p) => p,
            None => default_state_path(path),
        };
        Ok(LocalProfile {
            placeholders: file.placeholders,
            capabilities: file.capabilities,
            state_path,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let file = ProfileFile {
            placeholders: self.placeholders.clone(),
            capabilities: self.capabilities.clone(),
            state_path: (self.state_path != default_state_path(path)).then(|| self.state_path.clone()),
        };
        write_atomically(path, &serde_json::to_vec_pretty(&file).expect("profile serializes"))
    }

    /// Substitutes `$placeholders` in a sentence about to be shown. Longer
    /// keys win over their prefixes; unknown placeholders are left alone.
    pub fn render(&self, text: &str) -> String {
        let mut keys: Vec<&String> = self.placeholders.keys().collect();
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(pos) = rest.find('$') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            match keys.iter().find(|k| tail.starts_with(k.as_str())) {
                Some(k) => {
                    out.push_str(&self.placeholders[*k]);
                    rest = &tail[k.len()..];
                }
                None => {
                    out.push('$');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

pub fn default_state_path(profile: &Path) -> PathBuf {
    let stem = profile
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "profile".into());
    profile.with_file_name(format!("{stem}.state.json"))
}

/// Write-then-rename, so readers only ever see a complete file.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), ClientError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ClientError::Io(e.error))?;
    Ok(())
}

pub fn save_state(path: &Path, state: &WireState) -> Result<(), ClientError> {
    write_atomically(path, &serde_json::to_vec(state).expect("state serializes"))
}

/// `Ok(None)` when no state has been saved yet.
pub fn load_state(path: &Path) -> Result<Option<WireState>, ClientError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|e| ClientError::CorruptState {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Moves an unreadable state file aside and returns where it went.
pub fn quarantine_state(path: &Path) -> Result<PathBuf, ClientError> {
    let mut n = 0;
    let backup = loop {
        let candidate = path.with_extension(format!("corrupt{}", if n == 0 { String::new() } else { n.to_string() }));
        if !candidate.exists() {
            break candidate;
        }
        n += 1;
    };
    fs::rename(path, &backup)?;
    Ok(backup)
}

type Handler = Box<dyn Fn(&Action) -> String + Send + Sync>;

/// Device-side implementations of plan actions, keyed by action name.
#[derive(Default)]
pub struct PlanHandlers {
    handlers: BTreeMap<String, Handler>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionOutcome {
    Executed { action: String, output: String },
    Skipped { action: String },
}

impl fmt::Display for ActionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionOutcome::Executed { output, .. } => f.write_str(output),
            ActionOutcome::Skipped { action } => write!(f, "[skipped: {action}]"),
        }
    }
}

impl PlanHandlers {
    pub fn register(&mut self, action: &str, handler: impl Fn(&Action) -> String + Send + Sync + 'static) {
        self.handlers.insert(action.to_string(), Box::new(handler));
    }

    /// Runs the plan in order. Actions outside the device's capabilities are
    /// skipped; capable actions without a handler just print themselves.
    pub fn execute(&self, plan: &[Action], capabilities: &BTreeSet<String>) -> Vec<ActionOutcome> {
        plan.iter()
            .map(|a| {
                if !capabilities.contains(&a.action) {
                    return ActionOutcome::Skipped {
                        action: a.action.clone(),
                    };
                }
                let output = match self.handlers.get(&a.action) {
                    Some(h) => h(a),
                    None => print_stub(a),
                };
                ActionOutcome::Executed {
                    action: a.action.clone(),
                    output,
                }
            })
            .collect()
    }
}

fn print_stub(a: &Action) -> String {
    let args: Vec<String> = a.args.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
    format!("[{}({})]", a.action, args.join(", "))
}

/// Lines to show for one hub response: plan sentence, plan actions, then
/// the dialogue sentence.
pub fn render_turn(response: &HubResponse, profile: &LocalProfile, handlers: &PlanHandlers) -> Vec<String> {
    let mut lines = Vec::new();
    if let Some(s) = &response.plan_sentence {
        lines.push(profile.render(s));
    }
    for outcome in handlers.execute(&response.plan, &profile.capabilities) {
        lines.push(outcome.to_string());
    }
    lines.push(profile.render(&response.dialogue_sentence));
    lines
}

/// A share of the topics, kept as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fraction {
    num: u32,
    den: u32,
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };
    pub const THIRD: Fraction = Fraction { num: 1, den: 3 };
    pub const TWO_THIRDS: Fraction = Fraction { num: 2, den: 3 };
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };
    pub const PAYLOADS: [Fraction; 4] = [Self::ZERO, Self::THIRD, Self::TWO_THIRDS, Self::ONE];

    pub fn new(num: u32, den: u32) -> Option<Self> {
        (den > 0 && num <= den).then_some(Fraction { num, den })
    }

    /// `floor(self * n)`.
    pub fn of(self, n: usize) -> usize {
        (n as u128 * self.num as u128 / self.den as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.num == 0 {
            f.write_str("0")
        } else if self.num == self.den {
            f.write_str("1")
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected a fraction between 0 and 1 such as 1/3, got {s:?}");
        let (num, den) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Fraction::new(num, den).ok_or_else(bad)
    }
}

impl TryFrom<String> for Fraction {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Fraction> for String {
    fn from(f: Fraction) -> String {
        f.to_string()
    }
}

/// A valid state in which `fraction` of the topics (rounded down) carry a
/// likeliness override and have every sentence used. Topics are picked
/// with the seed; the conversation sits on the root.
pub fn build_coverage_state(layout: &StateLayout, fraction: Fraction, seed: u64) -> ClientState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let culture = layout.culture().unwrap_or(DEFAULT_CULTURE);
    let mut state = ClientState::new(culture, layout.root());
    let topics = layout.topics();
    let k = fraction.of(topics.len());
    let mut picked = sample(&mut rng, topics.len(), k).into_vec();
    picked.sort_unstable();
    for i in picked {
        let t = &topics[i];
        let level = LikelinessLevel::ALL[rng.gen_range(0..LikelinessLevel::ALL.len())];
        state.likeliness.insert(t.id.clone(), level);
        if t.sentences > 0 {
            state.used.insert(t.id.clone(), (0..t.sentences).collect());
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{compile_dialogue_tree, generate_synthetic_ontology};

    #[test]
    fn renders_the_greeting() {
        let p = LocalProfile::new("s.json").with_placeholder("name", "Dorothy");
        assert_eq!(p.render("Hello $name, how are you?"), "Hello Dorothy, how are you?");
        assert_eq!(p.render("costs $5"), "costs $5");
        let p = p.with_placeholder("$names", "X");
        assert_eq!(p.render("$names and $name"), "X and Dorothy");
        assert_eq!(p.render("$"), "$");
    }

    #[test]
    fn skipped_and_executed_actions() {
        let plan = [Action::new("play_song", [("title", "Hey Brother")])];
        let mut handlers = PlanHandlers::default();
        handlers.register("play_song", |a| format!("now playing {}", a.arg("title").unwrap()));
        let none = handlers.execute(&plan, &BTreeSet::new());
        assert_eq!(none[0].to_string(), "[skipped: play_song]");
        let caps = BTreeSet::from(["play_song".to_string()]);
        assert_eq!(handlers.execute(&plan, &caps)[0].to_string(), "now playing Hey Brother");
        let stub = PlanHandlers::default().execute(&plan, &caps);
        assert_eq!(stub[0].to_string(), "[play_song(title=\"Hey Brother\")]");
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dorothy.json");
        fs::write(&path, r#"{"placeholders":{"$name":"Dorothy"},"capabilities":["play_song","play_song"]}"#).unwrap();
        let p = LocalProfile::load(&path).unwrap();
        assert_eq!(p.capabilities.len(), 1);
        assert_eq!(p.state_path, dir.path().join("dorothy.state.json"));
        p.save(&path).unwrap();
        assert_eq!(LocalProfile::load(&path).unwrap(), p);

        fs::write(&path, r#"{"placeholders":{"name":"Dorothy"}}"#).unwrap();
        assert!(LocalProfile::load(&path).is_err());
    }

    #[test]
    fn state_persistence_and_quarantine() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        assert!(load_state(&path).unwrap().is_none());
        let tree = compile_dialogue_tree(&generate_synthetic_ontology(5, 2, 3, 0), "EN");
        let wire = ClientState::new("EN", tree.root_id()).to_wire(tree.layout());
        save_state(&path, &wire).unwrap();
        assert_eq!(load_state(&path).unwrap(), Some(wire));
        fs::write(&path, b"{\"v\":1,").unwrap();
        assert!(matches!(load_state(&path), Err(ClientError::CorruptState { .. })));
        let backup = quarantine_state(&path).unwrap();
        assert!(backup.exists() && !path.exists());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1, "no temporary files left behind");
    }

    #[test]
    fn fractions() {
        for (s, f) in [("0", Fraction::ZERO), ("1/3", Fraction::THIRD), ("2/3", Fraction::TWO_THIRDS), ("1", Fraction::ONE)] {
            assert_eq!(s.parse::<Fraction>().unwrap(), f);
            assert_eq!(f.to_string(), s);
        }
        assert!("4/3".parse::<Fraction>().is_err());
        assert!("1/0".parse::<Fraction>().is_err());
        assert_eq!(Fraction::THIRD.of(2780), 926);
        assert_eq!(Fraction::TWO_THIRDS.of(2780), 1853);
    }

    #[test]
    fn coverage_states() {
        let tree = compile_dialogue_tree(&generate_synthetic_ontology(2780, 3, 8, 42), "EN");
        let layout = tree.layout();
        let zero = build_coverage_state(layout, Fraction::ZERO, 1);
        assert!(zero.used.is_empty());
        assert!(zero.wire_size(layout) <= 1024);
        let third = build_coverage_state(layout, Fraction::THIRD, 1);
        assert_eq!(third.likeliness.len(), 926);
        assert_eq!(third.used.len(), 926);
        third.validate(layout).unwrap();
        let full = build_coverage_state(layout, Fraction::ONE, 1);
        assert_eq!(full.used.len(), 2780);
        let mut sizes: Vec<usize> = Fraction::PAYLOADS
            .iter()
            .map(|&f| build_coverage_state(layout, f, 1).wire_size(layout))
            .collect();
        let sorted = {
            let mut s = sizes.clone();
            s.sort();
            s
        };
        assert_eq!(sizes, sorted);
        sizes.dedup();
        assert_eq!(sizes.len(), 4);
    }
}
