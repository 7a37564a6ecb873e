//! Per-patient orchestration.
//!
//! Readers are reconciled within each series, series are reconciled within
//! each timepoint after registering them onto a reference series, and each
//! timepoint is then registered onto the baseline and matched against every
//! track seen so far. Only the last stage hands out canonical names; the
//! earlier stages work on scratch registries whose names are discarded.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, AnnotationTable, Dtype};
use crate::matching::{assign_names, match_lesions, MatchConfig};
use crate::model::{LesionAnnotation, LesionClass, Point3, Volume};
use crate::registration::{register, RegistrationConfig, RegistrationResult};
use crate::track::{Cluster, TrackName, TrackRegistry};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub matching: MatchConfig,
    pub registration: RegistrationConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.matching.validate()?;
        self.registration.validate()
    }
}

/// One image series: an optional volume and every reader's annotations on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub series_id: String,
    pub volume: Option<Volume>,
    pub annotations: Vec<LesionAnnotation>,
}

impl SeriesData {
    pub fn new(series_id: impl Into<String>) -> Self {
        SeriesData {
            series_id: series_id.into(),
            volume: None,
            annotations: Vec::new(),
        }
    }

    pub fn readers(&self) -> BTreeSet<&str> {
        self.annotations.iter().map(|a| a.reader_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimepointData {
    pub timepoint_id: String,
    /// Sorted by series id.
    pub series: Vec<SeriesData>,
}

impl TimepointData {
    pub fn new(timepoint_id: impl Into<String>) -> Self {
        TimepointData {
            timepoint_id: timepoint_id.into(),
            series: Vec::new(),
        }
    }

    pub fn series(&self, series_id: &str) -> Option<&SeriesData> {
        self.series.iter().find(|s| s.series_id == series_id)
    }

    /// The first series (by id) that has a volume, or the first series when none has one.
    pub fn reference_series(&self) -> Option<&SeriesData> {
        self.series
            .iter()
            .find(|s| s.volume.is_some())
            .or_else(|| self.series.first())
    }

    fn series_entry(&mut self, series_id: &str) -> &mut SeriesData {
        let pos = match self.series.binary_search_by(|s| s.series_id.as_str().cmp(series_id)) {
            Ok(pos) => pos,
            Err(pos) => {
                self.series.insert(pos, SeriesData::new(series_id));
                pos
            }
        };
        &mut self.series[pos]
    }
}

/// Ordering key for timepoint ids: a baseline (`Screening` or `Baseline`,
/// any case) first, then ids carrying a number in ascending numeric order
/// (`Week 8` before `Week 16`), then everything else lexicographically.
pub fn timepoint_sort_key(id: &str) -> (u8, u64, String) {
    let lower = id.trim().to_ascii_lowercase();
    if lower == "screening" || lower == "baseline" {
        return (0, 0, id.to_string());
    }
    let digits: String = id
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    match digits.parse::<u64>() {
        Ok(n) => (1, n, id.to_string()),
        Err(_) => (2, 0, id.to_string()),
    }
}

pub fn compare_timepoints(a: &str, b: &str) -> Ordering {
    timepoint_sort_key(a).cmp(&timepoint_sort_key(b))
}

/// Everything known about one patient, timepoints in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientDataset {
    patient_id: String,
    timepoints: Vec<TimepointData>,
}

impl PatientDataset {
    pub fn new(patient_id: impl Into<String>, mut timepoints: Vec<TimepointData>) -> Result<Self> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::InputMismatch("patient id is empty".into()));
        }
        if timepoints.is_empty() {
            return Err(Error::InputMismatch(format!("patient {patient_id} has no timepoints")));
        }
        timepoints.sort_by(|a, b| compare_timepoints(&a.timepoint_id, &b.timepoint_id));
        for pair in timepoints.windows(2) {
            if pair[0].timepoint_id == pair[1].timepoint_id {
                return Err(Error::InputMismatch(format!(
                    "timepoint {} appears twice",
                    pair[0].timepoint_id
                )));
            }
        }
        let mut keys = BTreeSet::new();
        for tp in &mut timepoints {
            tp.series.sort_by(|a, b| a.series_id.cmp(&b.series_id));
            for pair in tp.series.windows(2) {
                if pair[0].series_id == pair[1].series_id {
                    return Err(Error::InputMismatch(format!(
                        "series {} appears twice in {}",
                        pair[0].series_id, tp.timepoint_id
                    )));
                }
            }
            for s in &mut tp.series {
                s.annotations.sort_by_key(LesionAnnotation::key);
                for a in &s.annotations {
                    if a.timepoint_id != tp.timepoint_id || a.series_id != s.series_id {
                        return Err(Error::InputMismatch(format!(
                            "annotation {} filed under {}/{}",
                            a.key(),
                            tp.timepoint_id,
                            s.series_id
                        )));
                    }
                    if !keys.insert(a.key()) {
                        return Err(Error::InputMismatch(format!("duplicate annotation {}", a.key())));
                    }
                }
            }
        }
        Ok(PatientDataset { patient_id, timepoints })
    }

    /// Groups annotations by timepoint and series; no volumes.
    pub fn from_annotations(
        patient_id: impl Into<String>,
        annotations: impl IntoIterator<Item = LesionAnnotation>,
    ) -> Result<Self> {
        let mut timepoints: BTreeMap<String, TimepointData> = BTreeMap::new();
        for a in annotations {
            timepoints
                .entry(a.timepoint_id.clone())
                .or_insert_with(|| TimepointData::new(a.timepoint_id.clone()))
                .series_entry(&a.series_id)
                .annotations
                .push(a);
        }
        PatientDataset::new(patient_id, timepoints.into_values().collect())
    }

    /// Builds a patient's dataset from an annotation table and, optionally, a
    /// volume directory laid out as `<dir>/<patient>/<timepoint>/<series>.hdr`
    /// with the raw data next to each header. Series that exist only on disk
    /// are included without annotations.
    pub fn load(table: &AnnotationTable, patient_id: &str, volume_dir: Option<&Path>) -> Result<Self> {
        let mut timepoints: BTreeMap<String, TimepointData> = BTreeMap::new();
        for a in table.patient(patient_id) {
            timepoints
                .entry(a.timepoint_id.clone())
                .or_insert_with(|| TimepointData::new(a.timepoint_id.clone()))
                .series_entry(&a.series_id)
                .annotations
                .push(a.clone());
        }
        if let Some(dir) = volume_dir {
            let patient_dir = dir.join(patient_id);
            if patient_dir.is_dir() {
                for tp_entry in read_dir_sorted(&patient_dir)? {
                    if !tp_entry.is_dir() {
                        continue;
                    }
                    let Some(tp_id) = tp_entry.file_name().and_then(|s| s.to_str()).map(str::to_string) else {
                        continue;
                    };
                    for file in read_dir_sorted(&tp_entry)? {
                        if file.extension().and_then(|e| e.to_str()) != Some("hdr") {
                            continue;
                        }
                        let Some(series_id) = file.file_stem().and_then(|s| s.to_str()) else {
                            continue;
                        };
                        let volume = io::load_volume_pair(&file)?;
                        timepoints
                            .entry(tp_id.clone())
                            .or_insert_with(|| TimepointData::new(tp_id.clone()))
                            .series_entry(series_id)
                            .volume = Some(volume);
                    }
                }
            }
        }
        PatientDataset::new(patient_id, timepoints.into_values().collect())
    }

    /// Writes every volume under `<dir>/<patient>/<timepoint>/<series>.hdr`.
    pub fn save_volumes(&self, dir: &Path, dtype: Dtype) -> Result<()> {
        for tp in &self.timepoints {
            for s in &tp.series {
                if let Some(v) = &s.volume {
                    let path = dir
                        .join(&self.patient_id)
                        .join(&tp.timepoint_id)
                        .join(format!("{}.hdr", s.series_id));
                    io::save_volume_pair(v, dtype, &path)?;
                }
            }
        }
        Ok(())
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn timepoints(&self) -> &[TimepointData] {
        &self.timepoints
    }

    pub fn timepoint(&self, timepoint_id: &str) -> Option<&TimepointData> {
        self.timepoints.iter().find(|t| t.timepoint_id == timepoint_id)
    }

    pub fn volume(&self, timepoint_id: &str, series_id: &str) -> Option<&Volume> {
        self.timepoint(timepoint_id)?.series(series_id)?.volume.as_ref()
    }

    pub fn annotations(&self) -> impl Iterator<Item = &LesionAnnotation> {
        self.timepoints
            .iter()
            .flat_map(|t| t.series.iter().flat_map(|s| s.annotations.iter()))
    }

    pub fn annotation_count(&self) -> usize {
        self.annotations().count()
    }

    /// The annotations as a table keyed by this patient.
    pub fn to_table(&self) -> Result<AnnotationTable> {
        let mut table = AnnotationTable::new();
        for a in self.annotations() {
            table.insert(&self.patient_id, a.clone())?;
        }
        Ok(table)
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WithinSeries,
    AcrossSeries,
    AcrossTimepoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Matched,
    /// Paired by the assignment but farther apart than the class threshold.
    Dissolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Matched as if the frames coincided.
    Identity,
    /// Entered as new tracks without matching.
    NewTracks,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Match {
        stage: Stage,
        timepoint: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        series: Option<String>,
        class: LesionClass,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        track: Option<TrackName>,
        a: Vec<String>,
        b: Vec<String>,
        distance_mm: f64,
        threshold_mm: f64,
        verdict: Verdict,
    },
    NewTrack {
        timepoint: String,
        track: TrackName,
        observations: Vec<String>,
    },
    Registration {
        stage: Stage,
        fixed: String,
        moving: String,
        angles_deg: [f64; 3],
        translation_mm: [f64; 3],
        center_mm: Point3,
        final_metric: f64,
        converged: bool,
        iterations: Vec<usize>,
    },
    Unregistered {
        stage: Stage,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        fixed: Option<String>,
        moving: String,
        reason: String,
        fallback: Fallback,
    },
    Warning {
        message: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn push(&mut self, event: AuditEvent) {
        if let AuditEvent::Warning { message } = &event {
            log::warn!("{message}");
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|err| Error::Parse(err.to_string()))?;
            writeln!(out, "{line}").expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(AuditLog { events })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub registry: TrackRegistry,
    pub audit: AuditLog,
}

/// Where a matching step happens, for the audit log.
struct Scope<'a> {
    stage: Stage,
    timepoint: &'a str,
    series: Option<&'a str>,
}

fn describe(cluster: &Cluster) -> Vec<String> {
    cluster
        .observations
        .iter()
        .map(|o| o.annotation.key().to_string())
        .collect()
}

/// Matches `incoming` into `registry`, logging each pair the assignment made.
fn absorb_logged(
    registry: &TrackRegistry,
    incoming: &[Cluster],
    cfg: &MatchConfig,
    scope: &Scope<'_>,
    audit: &mut AuditLog,
) -> Result<TrackRegistry> {
    let corr = match_lesions(registry.tracks(), incoming, cfg)?;
    let global = scope.stage == Stage::AcrossTimepoints;
    for class in &corr.classes {
        let verdicts = class
            .matched
            .iter()
            .map(|p| (p, Verdict::Matched))
            .chain(class.dissolved.iter().map(|p| (p, Verdict::Dissolved)));
        for (p, verdict) in verdicts {
            let track = &registry.tracks()[p.a];
            audit.push(AuditEvent::Match {
                stage: scope.stage,
                timepoint: scope.timepoint.to_string(),
                series: scope.series.map(str::to_string),
                class: class.class,
                track: global.then_some(track.name),
                a: describe(&track.to_cluster()),
                b: describe(&incoming[p.b]),
                distance_mm: p.distance_mm,
                threshold_mm: class.threshold_mm,
                verdict,
            });
        }
    }
    let next = assign_names(&corr, registry, incoming)?;
    if global {
        log_new_tracks(registry, &next, scope.timepoint, audit);
    }
    Ok(next)
}

/// Opens a track for every cluster without matching.
fn open_unmatched(registry: &TrackRegistry, mut incoming: Vec<Cluster>) -> TrackRegistry {
    let mut out = registry.clone();
    incoming.sort_by(|x, y| (x.class, x.naming_key()).cmp(&(y.class, y.naming_key())));
    for c in incoming {
        out.open_track(c);
    }
    out
}

fn log_new_tracks(before: &TrackRegistry, after: &TrackRegistry, timepoint: &str, audit: &mut AuditLog) {
    for t in &after.tracks()[before.len()..] {
        audit.push(AuditEvent::NewTrack {
            timepoint: timepoint.to_string(),
            track: t.name,
            observations: describe(&t.to_cluster()),
        });
    }
}

fn log_registration(stage: Stage, fixed: String, moving: String, r: &RegistrationResult, audit: &mut AuditLog) {
    audit.push(AuditEvent::Registration {
        stage,
        fixed,
        moving,
        angles_deg: r.transform.angles_degrees(),
        translation_mm: r.transform.translation,
        center_mm: r.transform.center,
        final_metric: r.final_metric,
        converged: r.converged,
        iterations: r.iterations_per_level(),
    });
}

/// Reconciles the readers of one series, chaining them in reader-id order:
/// the first reader's lesions seed the registry and every further reader is
/// matched against the tracks accumulated so far.
pub fn match_within_series(
    timepoint_id: &str,
    series: &SeriesData,
    cfg: &MatchConfig,
    registry: &TrackRegistry,
    audit: &mut AuditLog,
) -> Result<TrackRegistry> {
    let mut by_reader: BTreeMap<&str, Vec<Cluster>> = BTreeMap::new();
    for a in &series.annotations {
        by_reader
            .entry(&a.reader_id)
            .or_default()
            .push(Cluster::single(a.clone()));
    }
    let scope = Scope {
        stage: Stage::WithinSeries,
        timepoint: timepoint_id,
        series: Some(&series.series_id),
    };
    let mut out = registry.clone();
    for clusters in by_reader.values() {
        out = absorb_logged(&out, clusters, cfg, &scope, audit)?;
    }
    Ok(out)
}

/// Reconciles all series of one timepoint in the frame of its reference
/// series, returning a scratch registry whose positions live in that frame.
pub fn match_across_series(
    patient_id: &str,
    timepoint: &TimepointData,
    cfg: &PipelineConfig,
    audit: &mut AuditLog,
) -> Result<TrackRegistry> {
    let tp = timepoint.timepoint_id.as_str();
    let empty = TrackRegistry::new(patient_id);
    let Some(reference) = timepoint.reference_series() else {
        return Ok(empty);
    };
    let mut registry = match_within_series(tp, reference, &cfg.matching, &empty, audit)?;
    let scope = Scope {
        stage: Stage::AcrossSeries,
        timepoint: tp,
        series: None,
    };
    let fixed_name = format!("{tp}/{}", reference.series_id);
    for series in timepoint.series.iter().filter(|s| s.series_id != reference.series_id) {
        let mut clusters = match_within_series(tp, series, &cfg.matching, &empty, audit)?.to_clusters();
        if clusters.is_empty() {
            continue;
        }
        let moving_name = format!("{tp}/{}", series.series_id);
        match (&reference.volume, &series.volume) {
            (Some(fixed), Some(moving)) => match register(fixed, moving, &cfg.registration) {
                Ok(r) => {
                    log_registration(Stage::AcrossSeries, fixed_name.clone(), moving_name, &r, audit);
                    let back = r.transform.inverse().mapper();
                    clusters.iter_mut().for_each(|c| c.map_positions(|p| back.apply(p)));
                    registry = absorb_logged(&registry, &clusters, &cfg.matching, &scope, audit)?;
                }
                Err(e) => {
                    audit.push(AuditEvent::Unregistered {
                        stage: Stage::AcrossSeries,
                        fixed: Some(fixed_name.clone()),
                        moving: moving_name,
                        reason: e.to_string(),
                        fallback: Fallback::NewTracks,
                    });
                    registry = open_unmatched(&registry, clusters);
                }
            },
            _ => {
                audit.push(AuditEvent::Unregistered {
                    stage: Stage::AcrossSeries,
                    fixed: Some(fixed_name.clone()),
                    moving: moving_name,
                    reason: "volume missing".into(),
                    fallback: Fallback::Identity,
                });
                registry = absorb_logged(&registry, &clusters, &cfg.matching, &scope, audit)?;
            }
        }
    }
    Ok(registry)
}

/// Runs every stage and returns the patient's tracks in the baseline frame.
///
/// The baseline is the earliest timepoint whose reference series has a
/// volume; normally that is Screening. Each timepoint is registered onto it
/// and matched against all tracks accumulated so far, so a lesion that skips
/// a visit is still recognised.
pub fn match_across_timepoints(
    dataset: &PatientDataset,
    cfg: &PipelineConfig,
    audit: &mut AuditLog,
) -> Result<TrackRegistry> {
    let timepoints = dataset.timepoints();
    let baseline = timepoints
        .iter()
        .position(|t| t.reference_series().is_some_and(|s| s.volume.is_some()))
        .unwrap_or(0);
    if baseline != 0 {
        audit.push(AuditEvent::Warning {
            message: format!(
                "{} has no volume; {} is the reference timepoint",
                timepoints[0].timepoint_id, timepoints[baseline].timepoint_id
            ),
        });
    }
    let reference = timepoints[baseline].reference_series();
    let fixed_volume = reference.and_then(|s| s.volume.as_ref());
    let fixed_name = reference.map(|s| format!("{}/{}", timepoints[baseline].timepoint_id, s.series_id));

    let mut global = TrackRegistry::new(dataset.patient_id());
    for (n, tp) in timepoints.iter().enumerate() {
        let mut clusters = match_across_series(dataset.patient_id(), tp, cfg, audit)?.to_clusters();
        if clusters.is_empty() {
            continue;
        }
        let scope = Scope {
            stage: Stage::AcrossTimepoints,
            timepoint: &tp.timepoint_id,
            series: None,
        };
        if n == baseline {
            global = absorb_logged(&global, &clusters, &cfg.matching, &scope, audit)?;
            continue;
        }
        let own = tp.reference_series().expect("a timepoint with lesions has a series");
        let moving_name = format!("{}/{}", tp.timepoint_id, own.series_id);
        match (fixed_volume, &own.volume) {
            (Some(fixed), Some(moving)) => match register(fixed, moving, &cfg.registration) {
                Ok(r) => {
                    log_registration(
                        Stage::AcrossTimepoints,
                        fixed_name.clone().unwrap_or_default(),
                        moving_name,
                        &r,
                        audit,
                    );
                    let back = r.transform.inverse().mapper();
                    clusters.iter_mut().for_each(|c| c.map_positions(|p| back.apply(p)));
                    global = absorb_logged(&global, &clusters, &cfg.matching, &scope, audit)?;
                }
                Err(e) => {
                    audit.push(AuditEvent::Unregistered {
                        stage: Stage::AcrossTimepoints,
                        fixed: fixed_name.clone(),
                        moving: moving_name,
                        reason: e.to_string(),
                        fallback: Fallback::NewTracks,
                    });
                    let before = global.clone();
                    global = open_unmatched(&global, clusters);
                    log_new_tracks(&before, &global, &tp.timepoint_id, audit);
                }
            },
            _ => {
                audit.push(AuditEvent::Unregistered {
                    stage: Stage::AcrossTimepoints,
                    fixed: fixed_name.clone(),
                    moving: moving_name,
                    reason: "volume missing".into(),
                    fallback: Fallback::Identity,
                });
                global = absorb_logged(&global, &clusters, &cfg.matching, &scope, audit)?;
            }
        }
    }
    Ok(global)
}

/// The full pipeline for one patient.
pub fn run_patient(dataset: &PatientDataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut audit = AuditLog::default();
    let registry = match_across_timepoints(dataset, cfg, &mut audit)?;
    debug_assert!(registry.validate().is_ok());
    Ok(PipelineOutput { registry, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use LesionClass::{NonTarget, Target};

    fn ann(tp: &str, series: &str, reader: &str, label: &str, class: LesionClass, p: [f64; 3]) -> LesionAnnotation {
        LesionAnnotation::new(Point3::from(p), class, reader, series, tp, label).unwrap()
    }

    fn names(r: &TrackRegistry) -> Vec<String> {
        r.tracks().iter().map(|t| t.name.to_string()).collect()
    }

    #[test]
    fn timepoint_order() {
        let mut ids = vec!["Week 16", "Week 8", "Follow-up", "Screening", "Week 2"];
        ids.sort_by(|a, b| compare_timepoints(a, b));
        assert_eq!(ids, vec!["Screening", "Week 2", "Week 8", "Week 16", "Follow-up"]);
    }

    #[test]
    fn one_reader_two_targets() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R1", "T2", Target, [80.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        assert_eq!(names(&out.registry), vec!["G1", "G2"]);
    }

    #[test]
    fn same_label_far_apart_gives_two_tracks() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R2", "T1", Target, [60.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        assert_eq!(names(&out.registry), vec!["G1", "G2"]);
        assert!(out.audit.events().iter().any(|e| matches!(
            e,
            AuditEvent::Match { verdict: Verdict::Dissolved, distance_mm, .. } if (*distance_mm - 60.0).abs() < 1e-12
        )));
    }

    #[test]
    fn label_swap_is_resolved() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R1", "T2", Target, [0.0, 70.0, 0.0]),
                ann("Screening", "S1", "R2", "T2", Target, [3.0, 1.0, 0.0]),
                ann("Screening", "S1", "R2", "T1", Target, [1.0, 68.0, 2.0]),
            ],
        )
        .unwrap();
        let r = run_patient(&ds, &PipelineConfig::default()).unwrap().registry;
        assert_eq!(r.len(), 2);
        let g1: Vec<String> = r.tracks()[0]
            .keys()
            .map(|k| format!("{}:{}", k.reader_id, k.source_label))
            .collect();
        assert_eq!(g1, vec!["R1:T1", "R2:T2"]);
    }

    #[test]
    fn more_than_two_readers_are_chained() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R2", "T1", Target, [2.0, 0.0, 0.0]),
                ann("Screening", "S1", "R3", "T1", Target, [0.0, 3.0, 0.0]),
                ann("Screening", "S1", "R3", "T2", Target, [90.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let r = run_patient(&ds, &PipelineConfig::default()).unwrap().registry;
        assert_eq!(r.len(), 2);
        assert_eq!(r.tracks()[0].observations.len(), 3);
    }

    /// Three targets over two timepoints and two readers, eight annotations.
    #[test]
    fn three_targets_eight_observations() {
        let l = [[0.0, 0.0, 0.0], [60.0, 0.0, 0.0], [0.0, 60.0, 0.0]];
        let mut anns = Vec::new();
        for (n, p) in l.iter().enumerate() {
            anns.push(ann("Screening", "S1", "R1", &format!("T{}", n + 1), Target, *p));
        }
        for (n, p) in l.iter().take(2).enumerate() {
            anns.push(ann(
                "Screening",
                "S1",
                "R2",
                &format!("T{}", 2 - n),
                Target,
                [p[0] + 2.0, p[1], p[2]],
            ));
            anns.push(ann(
                "Week 8",
                "S1",
                "R1",
                &format!("T{}", n + 1),
                Target,
                [p[0], p[1] - 3.0, p[2]],
            ));
        }
        anns.push(ann("Week 8", "S1", "R2", "T1", Target, [1.0, 1.0, 1.0]));
        let ds = PatientDataset::from_annotations("P1", anns).unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        assert_eq!(names(&out.registry), vec!["G1", "G2", "G3"]);
        let counts: Vec<usize> = out.registry.tracks().iter().map(|t| t.observations.len()).collect();
        assert_eq!(counts, vec![4, 3, 1]);
        assert_eq!(out.registry.observation_count(), 8);
        let timepoints: BTreeSet<&str> = out.registry.tracks()[0]
            .observations
            .iter()
            .map(|o| o.annotation.timepoint_id.as_str())
            .collect();
        assert_eq!(timepoints.len(), 2);
        // no volumes anywhere: the cross-timepoint step runs under identity and says so
        assert!(out.audit.events().iter().any(|e| matches!(
            e,
            AuditEvent::Unregistered {
                fallback: Fallback::Identity,
                stage: Stage::AcrossTimepoints,
                ..
            }
        )));
    }

    #[test]
    fn disappearing_lesion_keeps_its_single_observation() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R1", "T2", Target, [80.0, 0.0, 0.0]),
                ann("Week 8", "S1", "R1", "T1", Target, [1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let r = run_patient(&ds, &PipelineConfig::default()).unwrap().registry;
        assert_eq!(r.len(), 2);
        assert_eq!(r.tracks()[1].observations.len(), 1);
    }

    #[test]
    fn new_lesion_at_follow_up_gets_next_name() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R1", "NT1", NonTarget, [0.0, 0.0, 50.0]),
                ann("Week 8", "S1", "R1", "T1", Target, [1.0, 0.0, 0.0]),
                ann("Week 8", "S1", "R1", "T2", Target, [0.0, -90.0, 0.0]),
                ann("Week 8", "S1", "R1", "NT1", NonTarget, [0.0, 0.0, 52.0]),
            ],
        )
        .unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        assert_eq!(names(&out.registry), vec!["G1", "NG1", "G2"]);
        let new: Vec<&AuditEvent> = out
            .audit
            .events()
            .iter()
            .filter(|e| matches!(e, AuditEvent::NewTrack { timepoint, .. } if timepoint == "Week 8"))
            .collect();
        assert_eq!(new.len(), 1);
    }

    #[test]
    fn empty_annotations_empty_output() {
        let mut tp = TimepointData::new("Screening");
        tp.series.push(SeriesData::new("S1"));
        let ds = PatientDataset::new("P1", vec![tp]).unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        assert!(out.registry.is_empty());
        assert!(out.audit.is_empty());
    }

    #[test]
    fn dataset_validation() {
        assert!(PatientDataset::new("P1", vec![]).is_err());
        let mut tp = TimepointData::new("Screening");
        let mut s = SeriesData::new("S1");
        s.annotations.push(ann("Week 8", "S1", "R1", "T1", Target, [0.0; 3]));
        tp.series.push(s);
        assert!(matches!(
            PatientDataset::new("P1", vec![tp]),
            Err(Error::InputMismatch(_))
        ));
        let dup = TimepointData::new("Screening");
        assert!(PatientDataset::new("P1", vec![dup.clone(), dup]).is_err());
    }

    #[test]
    fn audit_round_trips_through_jsonl() {
        let ds = PatientDataset::from_annotations(
            "P1",
            vec![
                ann("Screening", "S1", "R1", "T1", Target, [0.0, 0.0, 0.0]),
                ann("Screening", "S1", "R2", "T1", Target, [1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
        let text = out.audit.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), out.audit.len());
        assert!(text.contains("\"event\":\"match\""));
        assert_eq!(AuditLog::from_jsonl(&text).unwrap(), out.audit);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"matching":{"target_threshold_mm":30}}"#).unwrap();
        assert_eq!(cfg.matching.target_threshold_mm, 30.0);
        assert_eq!(cfg.matching.nontarget_threshold_mm, 50.0);
        assert_eq!(cfg.registration, RegistrationConfig::default());
    }
}
