//! Recording sessions: trials, phase marks, the object catalog and the
//! session directory format (`session.json` + `spikes.csv`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "session.json";
pub const SPIKES_FILE: &str = "spikes.csv";
const SPIKES_HEADER: &str = "trial_id,channel,time_s";

/// Experiment stage of a grasp trial, in task order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fixation,
    Cue,
    Planning,
    Movement,
    Hold,
    End,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Fixation,
        Phase::Cue,
        Phase::Planning,
        Phase::Movement,
        Phase::Hold,
        Phase::End,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Fixation => "fixation",
            Phase::Cue => "cue",
            Phase::Planning => "planning",
            Phase::Movement => "movement",
            Phase::Hold => "hold",
            Phase::End => "end",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPhase(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseMark {
    pub phase: Phase,
    /// Seconds from session start.
    pub time: f64,
}

/// Ordered phase marks of one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseMarks(pub Vec<PhaseMark>);

impl PhaseMarks {
    pub fn new(marks: Vec<PhaseMark>) -> Self {
        PhaseMarks(marks)
    }

    pub fn get(&self, phase: Phase) -> Option<f64> {
        self.0.iter().find(|m| m.phase == phase).map(|m| m.time)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PhaseMark> {
        self.0.iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: u32,
    /// Raw catalog id of the grasped object.
    pub object_id: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub phases: PhaseMarks,
    /// One ascending list of spike times per channel.
    pub spikes: Vec<Vec<f64>>,
}

impl Trial {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub object_id: u32,
    pub shape_group: u32,
    pub size_index: u32,
    pub duplicate_of: Option<u32>,
}

/// Physical description of every object id that may appear in trials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl ObjectCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Self {
        ObjectCatalog { entries }
    }

    pub fn get(&self, object_id: u32) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.object_id == object_id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub channel_count: usize,
    pub trials: Vec<Trial>,
    pub catalog: ObjectCatalog,
}

impl Session {
    pub fn trial(&self, trial_id: u32) -> Option<&Trial> {
        self.trials.iter().find(|t| t.trial_id == trial_id)
    }
}

/// Invariant broken by a session, as reported by [`validate_session`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ChannelCountPositive,
    DuplicateTrialId,
    TrialBounds,
    ChannelCount,
    SpikeOutOfBounds,
    UnsortedSpikes,
    NonFiniteTime,
    PhaseOutOfBounds,
    PhaseOrder,
    MissingHold,
    EndNotAfterHold,
    TrialOverlap,
    UnknownObject,
    DanglingDuplicate,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::ChannelCountPositive => "channel count must be positive",
            Rule::DuplicateTrialId => "trial ids must be unique",
            Rule::TrialBounds => "trial must satisfy t_start < t_end",
            Rule::ChannelCount => "trial channel count must equal session channel count",
            Rule::SpikeOutOfBounds => "spike outside trial bounds",
            Rule::UnsortedSpikes => "spike times must be ascending",
            Rule::NonFiniteTime => "times must be finite",
            Rule::PhaseOutOfBounds => "phase marks must lie strictly inside the trial",
            Rule::PhaseOrder => "phase marks must follow task order with non-decreasing times",
            Rule::MissingHold => "hold phase mark is required",
            Rule::EndNotAfterHold => "end mark must come after hold",
            Rule::TrialOverlap => "trials must not overlap in time",
            Rule::UnknownObject => "trial object id missing from catalog",
            Rule::DanglingDuplicate => "duplicate_of must reference a catalog object",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trial_id: Option<u32>,
    pub channel: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.rule.name())?;
        if let Some(t) = self.trial_id {
            write!(f, " (trial {t}")?;
            if let Some(c) = self.channel {
                write!(f, ", channel {c}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

fn violation(trial_id: Option<u32>, channel: Option<usize>, rule: Rule) -> Violation {
    Violation {
        trial_id,
        channel,
        rule,
    }
}

/// Checks every session invariant. An empty result means the session is valid.
pub fn validate_session(session: &Session) -> Vec<Violation> {
    let mut out = Vec::new();
    if session.channel_count == 0 {
        out.push(violation(None, None, Rule::ChannelCountPositive));
    }

    let known: BTreeSet<u32> = session.catalog.entries.iter().map(|e| e.object_id).collect();
    for entry in &session.catalog.entries {
        if let Some(dup) = entry.duplicate_of {
            if !known.contains(&dup) {
                out.push(violation(None, None, Rule::DanglingDuplicate));
            }
        }
    }

    let mut seen = BTreeSet::new();
    for trial in &session.trials {
        let id = Some(trial.trial_id);
        if !seen.insert(trial.trial_id) {
            out.push(violation(id, None, Rule::DuplicateTrialId));
        }
        if !trial.t_start.is_finite() || !trial.t_end.is_finite() {
            out.push(violation(id, None, Rule::NonFiniteTime));
            continue;
        }
        if trial.t_start >= trial.t_end {
            out.push(violation(id, None, Rule::TrialBounds));
        }
        if !known.contains(&trial.object_id) {
            out.push(violation(id, None, Rule::UnknownObject));
        }
        if trial.spikes.len() != session.channel_count {
            out.push(violation(id, None, Rule::ChannelCount));
        }
        for (ch, times) in trial.spikes.iter().enumerate() {
            if times.iter().any(|t| !t.is_finite()) {
                out.push(violation(id, Some(ch), Rule::NonFiniteTime));
                continue;
            }
            if times.iter().any(|&t| t < trial.t_start || t >= trial.t_end) {
                out.push(violation(id, Some(ch), Rule::SpikeOutOfBounds));
            }
            if times.windows(2).any(|w| w[1] < w[0]) {
                out.push(violation(id, Some(ch), Rule::UnsortedSpikes));
            }
        }
        validate_phases(trial, &mut out);
    }

    let mut spans: Vec<(f64, f64, u32)> = session
        .trials
        .iter()
        .filter(|t| t.t_start.is_finite() && t.t_end.is_finite())
        .map(|t| (t.t_start, t.t_end, t.trial_id))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            out.push(violation(Some(pair[1].2), None, Rule::TrialOverlap));
        }
    }
    out
}

fn validate_phases(trial: &Trial, out: &mut Vec<Violation>) {
    let id = Some(trial.trial_id);
    let marks = &trial.phases.0;
    if marks
        .iter()
        .any(|m| !m.time.is_finite() || m.time <= trial.t_start || m.time >= trial.t_end)
    {
        out.push(violation(id, None, Rule::PhaseOutOfBounds));
    }
    let ordered = marks
        .windows(2)
        .all(|w| w[0].phase < w[1].phase && w[0].time <= w[1].time);
    if !ordered {
        out.push(violation(id, None, Rule::PhaseOrder));
    }
    match (trial.phases.get(Phase::Hold), trial.phases.get(Phase::End)) {
        (None, _) => out.push(violation(id, None, Rule::MissingHold)),
        // An out-of-order end mark is already reported as a phase-order violation.
        (Some(hold), Some(end)) if ordered && end <= hold => {
            out.push(violation(id, None, Rule::EndNotAfterHold))
        }
        _ => {}
    }
}

#[derive(Serialize, Deserialize)]
struct PhaseRecord {
    name: String,
    time: f64,
}

#[derive(Serialize, Deserialize)]
struct TrialRecord {
    trial_id: u32,
    object_id: u32,
    t_start: f64,
    t_end: f64,
    phases: Vec<PhaseRecord>,
}

#[derive(Serialize, Deserialize)]
struct SessionManifest {
    session_id: String,
    channel_count: usize,
    catalog: ObjectCatalog,
    trials: Vec<TrialRecord>,
}

/// Writes `session.json` and `spikes.csv` into `dir`, creating it if needed.
pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = SessionManifest {
        session_id: session.session_id.clone(),
        channel_count: session.channel_count,
        catalog: session.catalog.clone(),
        trials: session
            .trials
            .iter()
            .map(|t| TrialRecord {
                trial_id: t.trial_id,
                object_id: t.object_id,
                t_start: t.t_start,
                t_end: t.t_end,
                phases: t
                    .phases
                    .iter()
                    .map(|m| PhaseRecord {
                        name: m.phase.name().to_string(),
                        time: m.time,
                    })
                    .collect(),
            })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::malformed(MANIFEST_FILE, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    let path = dir.join(SPIKES_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut order: Vec<&Trial> = session.trials.iter().collect();
    order.sort_by_key(|t| t.trial_id);
    let write_all = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(w, "{SPIKES_HEADER}")?;
        for trial in &order {
            for (ch, times) in trial.spikes.iter().enumerate() {
                for t in times {
                    // `Display` for f64 prints the shortest round-tripping decimal.
                    writeln!(w, "{},{},{}", trial.trial_id, ch, t)?;
                }
            }
        }
        w.flush()
    };
    write_all(&mut w).map_err(|e| Error::io(&path, e))
}

/// Reads a session directory. Malformed input is rejected, never repaired.
pub fn load_session(dir: &Path) -> Result<Session> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SessionManifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(MANIFEST_FILE, e.to_string()))?;

    let mut trials = Vec::with_capacity(manifest.trials.len());
    let mut index = BTreeMap::new();
    for (i, rec) in manifest.trials.into_iter().enumerate() {
        let phases = rec
            .phases
            .into_iter()
            .map(|p| {
                Ok(PhaseMark {
                    phase: p.name.parse()?,
                    time: p.time,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if index.insert(rec.trial_id, i).is_some() {
            return Err(Error::malformed(
                MANIFEST_FILE,
                format!("duplicate trial id {}", rec.trial_id),
            ));
        }
        trials.push(Trial {
            trial_id: rec.trial_id,
            object_id: rec.object_id,
            t_start: rec.t_start,
            t_end: rec.t_end,
            phases: PhaseMarks(phases),
            spikes: vec![Vec::new(); manifest.channel_count],
        });
    }

    let path = dir.join(SPIKES_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == SPIKES_HEADER => {}
        Some(Err(e)) => return Err(Error::io(&path, e)),
        _ => return Err(Error::malformed(SPIKES_FILE, "missing header")),
    }
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let ctx = || format!("{SPIKES_FILE}:{}", lineno + 2);
        let mut fields = line.split(',');
        let (Some(a), Some(b), Some(c), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::malformed(ctx(), "expected three fields"));
        };
        let trial_id: u32 = a
            .parse()
            .map_err(|_| Error::malformed(ctx(), format!("bad trial_id `{a}`")))?;
        let channel: usize = b
            .parse()
            .map_err(|_| Error::malformed(ctx(), format!("bad channel `{b}`")))?;
        let time: f64 = c
            .parse()
            .map_err(|_| Error::malformed(ctx(), format!("bad time `{c}`")))?;
        let &ti = index
            .get(&trial_id)
            .ok_or_else(|| Error::malformed(ctx(), format!("unknown trial id {trial_id}")))?;
        if channel >= manifest.channel_count {
            return Err(Error::malformed(ctx(), format!("channel {channel} out of range")));
        }
        let trial = &mut trials[ti];
        if !time.is_finite() || time < trial.t_start || time >= trial.t_end {
            return Err(Error::SpikeOutOfBounds {
                trial_id,
                channel,
                time,
            });
        }
        let list = &mut trial.spikes[channel];
        if list.last().is_some_and(|&last| time < last) {
            return Err(Error::UnsortedSpikes { trial_id, channel });
        }
        list.push(time);
    }

    let session = Session {
        session_id: manifest.session_id,
        channel_count: manifest.channel_count,
        trials,
        catalog: manifest.catalog,
    };
    let violations = validate_session(&session);
    if violations.is_empty() {
        Ok(session)
    } else {
        Err(Error::InvalidSession(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mark(phase: Phase, time: f64) -> PhaseMark {
        PhaseMark { phase, time }
    }

    fn trial(id: u32, t0: f64, channels: usize) -> Trial {
        Trial {
            trial_id: id,
            object_id: 1,
            t_start: t0,
            t_end: t0 + 10.0,
            phases: PhaseMarks(vec![
                mark(Phase::Fixation, t0 + 1.0),
                mark(Phase::Cue, t0 + 2.0),
                mark(Phase::Movement, t0 + 5.0),
                mark(Phase::Hold, t0 + 6.0),
                mark(Phase::End, t0 + 8.0),
            ]),
            spikes: (0..channels)
                .map(|c| vec![t0 + 0.5 + 0.1 * c as f64, t0 + 7.25])
                .collect(),
        }
    }

    fn session(trials: Vec<Trial>, channels: usize) -> Session {
        Session {
            session_id: "s".into(),
            channel_count: channels,
            trials,
            catalog: ObjectCatalog::new(vec![CatalogEntry {
                object_id: 1,
                shape_group: 0,
                size_index: 0,
                duplicate_of: None,
            }]),
        }
    }

    fn rules(s: &Session) -> Vec<Rule> {
        validate_session(s).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn valid_session_has_no_violations() {
        let s = session(vec![trial(0, 0.0, 3), trial(1, 10.0, 3)], 3);
        assert!(validate_session(&s).is_empty());
    }

    #[test]
    fn hold_after_end_is_a_phase_order_violation() {
        let mut t = trial(0, 0.0, 2);
        t.phases = PhaseMarks(vec![mark(Phase::End, 3.0), mark(Phase::Hold, 4.0)]);
        let v = validate_session(&session(vec![t], 2));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::PhaseOrder);
        assert_eq!(v[0].trial_id, Some(0));
    }

    #[test]
    fn wrong_channel_count_names_the_trial() {
        let mut trials: Vec<Trial> = (0..8).map(|i| trial(i, i as f64 * 10.0, 12)).collect();
        trials[7].spikes.truncate(10);
        let v = validate_session(&session(trials, 12));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].trial_id, Some(7));
        assert_eq!(v[0].rule, Rule::ChannelCount);
    }

    #[test]
    fn each_rule_has_a_failing_fixture() {
        let base = || session(vec![trial(0, 0.0, 2), trial(1, 10.0, 2)], 2);

        let mut s = base();
        s.channel_count = 0;
        assert!(rules(&s).contains(&Rule::ChannelCountPositive));

        let mut s = base();
        s.trials[1].trial_id = 0;
        assert!(rules(&s).contains(&Rule::DuplicateTrialId));

        let mut s = base();
        s.trials[1].t_end = s.trials[1].t_start;
        assert!(rules(&s).contains(&Rule::TrialBounds));

        let mut s = base();
        s.trials[0].spikes[1].push(99.0);
        assert!(rules(&s).contains(&Rule::SpikeOutOfBounds));

        let mut s = base();
        s.trials[0].spikes[0] = vec![3.0, 2.0];
        assert!(rules(&s).contains(&Rule::UnsortedSpikes));

        let mut s = base();
        s.trials[0].spikes[0] = vec![f64::NAN];
        assert!(rules(&s).contains(&Rule::NonFiniteTime));

        let mut s = base();
        s.trials[0].phases.0[0].time = 0.0;
        assert!(rules(&s).contains(&Rule::PhaseOutOfBounds));

        let mut s = base();
        s.trials[0].phases.0.retain(|m| m.phase != Phase::Hold);
        assert!(rules(&s).contains(&Rule::MissingHold));

        let mut s = base();
        s.trials[0].phases = PhaseMarks(vec![mark(Phase::Hold, 5.0), mark(Phase::End, 5.0)]);
        assert!(rules(&s).contains(&Rule::EndNotAfterHold));

        let mut s = base();
        s.trials[1].t_start = 9.0;
        s.trials[1].t_end = 19.0;
        assert!(rules(&s).contains(&Rule::TrialOverlap));

        let mut s = base();
        s.trials[0].object_id = 77;
        assert!(rules(&s).contains(&Rule::UnknownObject));

        let mut s = base();
        s.catalog.entries[0].duplicate_of = Some(5);
        assert!(rules(&s).contains(&Rule::DanglingDuplicate));
    }

    #[test]
    fn phase_names_parse() {
        assert_eq!("hold".parse::<Phase>().unwrap(), Phase::Hold);
        assert!(matches!("reach".parse::<Phase>(), Err(Error::UnknownPhase(_))));
    }
}
