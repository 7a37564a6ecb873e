//! Lesion tracks and the per-patient registry that names them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotationKey, LesionAnnotation, LesionClass, Point3};

/// Anything with a class and a position in the current reference frame.
pub trait Located {
    fn position(&self) -> Point3;
    fn class(&self) -> LesionClass;
}

impl Located for LesionAnnotation {
    fn position(&self) -> Point3 {
        self.centroid
    }
    fn class(&self) -> LesionClass {
        self.class
    }
}

/// Canonical track name: `G<k>` for targets, `NG<k>` for non-targets, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrackName {
    pub class: LesionClass,
    pub index: u32,
}

impl TrackName {
    pub fn new(class: LesionClass, index: u32) -> Result<Self> {
        if index == 0 {
            return Err(Error::Invalid("track indices start at 1".into()));
        }
        Ok(TrackName { class, index })
    }
}

impl fmt::Display for TrackName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.name_prefix(), self.index)
    }
}

impl FromStr for TrackName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (class, digits) = if let Some(rest) = s.strip_prefix("NG") {
            (LesionClass::NonTarget, rest)
        } else if let Some(rest) = s.strip_prefix('G') {
            (LesionClass::Target, rest)
        } else {
            return Err(Error::Parse(format!("bad track name {s:?}")));
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Parse(format!("bad track name {s:?}")));
        }
        let index = digits
            .parse()
            .map_err(|_| Error::Parse(format!("bad track name {s:?}")))?;
        TrackName::new(class, index).map_err(|_| Error::Parse(format!("bad track name {s:?}")))
    }
}

impl Serialize for TrackName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrackName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An annotation together with its position in the registry's reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub annotation: LesionAnnotation,
    pub mapped_centroid: Point3,
}

impl Observation {
    /// An observation whose frame is the annotation's own series frame.
    pub fn unmapped(annotation: LesionAnnotation) -> Self {
        let mapped_centroid = annotation.centroid;
        Observation {
            annotation,
            mapped_centroid,
        }
    }
}

/// A group of observations believed to be one physical lesion, not yet named.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub class: LesionClass,
    pub observations: Vec<Observation>,
}

impl Cluster {
    pub fn single(annotation: LesionAnnotation) -> Self {
        Cluster {
            class: annotation.class,
            observations: vec![Observation::unmapped(annotation)],
        }
    }

    pub(crate) fn naming_key(&self) -> Option<(&str, &str, &str, &str)> {
        self.observations.iter().map(|o| o.annotation.naming_key()).min()
    }

    pub fn map_positions(&mut self, f: impl Fn(Point3) -> Point3) {
        for o in &mut self.observations {
            o.mapped_centroid = f(o.mapped_centroid);
        }
    }
}

impl Located for Cluster {
    fn position(&self) -> Point3 {
        Point3::mean(self.observations.iter().map(|o| o.mapped_centroid)).unwrap_or_default()
    }
    fn class(&self) -> LesionClass {
        self.class
    }
}

/// A named lesion and every observation merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionTrack {
    pub name: TrackName,
    pub observations: Vec<Observation>,
    /// Mean of the observations' mapped centroids.
    pub reference_centroid: Point3,
}

impl LesionTrack {
    pub(crate) fn open(name: TrackName, observations: Vec<Observation>) -> Self {
        let mut t = LesionTrack {
            name,
            observations,
            reference_centroid: Point3::ORIGIN,
        };
        t.refresh_centroid();
        t
    }

    pub fn class(&self) -> LesionClass {
        self.name.class
    }

    pub(crate) fn refresh_centroid(&mut self) {
        if let Some(c) = Point3::mean(self.observations.iter().map(|o| o.mapped_centroid)) {
            self.reference_centroid = c;
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = AnnotationKey> + '_ {
        self.observations.iter().map(|o| o.annotation.key())
    }

    /// Converts back into an unnamed cluster, e.g. to merge into another registry.
    pub fn to_cluster(&self) -> Cluster {
        Cluster {
            class: self.class(),
            observations: self.observations.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let mut slots = BTreeSet::new();
        for o in &self.observations {
            let a = &o.annotation;
            if a.class != self.class() {
                return Err(Error::Invalid(format!("{} holds a {} observation", self.name, a.class)));
            }
            if !slots.insert((&a.reader_id, &a.series_id, &a.timepoint_id)) {
                return Err(Error::Invalid(format!(
                    "{} has two observations from reader {} in {}/{}",
                    self.name, a.reader_id, a.timepoint_id, a.series_id
                )));
            }
        }
        Ok(())
    }
}

impl Located for LesionTrack {
    fn position(&self) -> Point3 {
        self.reference_centroid
    }
    fn class(&self) -> LesionClass {
        self.name.class
    }
}

/// All tracks of one patient, plus the next free index for each class.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRegistry {
    pub patient_id: String,
    tracks: Vec<LesionTrack>,
    next_target_index: u32,
    next_nontarget_index: u32,
}

impl TrackRegistry {
    pub fn new(patient_id: impl Into<String>) -> Self {
        TrackRegistry {
            patient_id: patient_id.into(),
            tracks: Vec::new(),
            next_target_index: 1,
            next_nontarget_index: 1,
        }
    }

    pub fn tracks(&self) -> &[LesionTrack] {
        &self.tracks
    }

    pub(crate) fn tracks_mut(&mut self) -> &mut [LesionTrack] {
        &mut self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, name: TrackName) -> Option<&LesionTrack> {
        self.tracks.iter().find(|t| t.name == name)
    }

    pub fn tracks_of(&self, class: LesionClass) -> impl Iterator<Item = &LesionTrack> {
        self.tracks.iter().filter(move |t| t.class() == class)
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(|t| t.observations.len()).sum()
    }

    pub fn next_index(&self, class: LesionClass) -> u32 {
        match class {
            LesionClass::Target => self.next_target_index,
            LesionClass::NonTarget => self.next_nontarget_index,
        }
    }

    /// Opens a new track under the next free name of the cluster's class.
    /// Useful for assembling ground truth by hand; the pipeline itself only
    /// opens tracks for lesions that matched nothing.
    pub fn open_track(&mut self, cluster: Cluster) -> TrackName {
        let counter = match cluster.class {
            LesionClass::Target => &mut self.next_target_index,
            LesionClass::NonTarget => &mut self.next_nontarget_index,
        };
        let name = TrackName {
            class: cluster.class,
            index: *counter,
        };
        *counter += 1;
        self.tracks.push(LesionTrack::open(name, cluster.observations));
        name
    }

    /// Applies a point mapping to every observation's reference-frame centroid.
    pub fn map_positions(&mut self, f: impl Fn(Point3) -> Point3) {
        for t in &mut self.tracks {
            for o in &mut t.observations {
                o.mapped_centroid = f(o.mapped_centroid);
            }
            t.refresh_centroid();
        }
    }

    /// Tracks as unnamed clusters, in registry order.
    pub fn to_clusters(&self) -> Vec<Cluster> {
        self.tracks.iter().map(LesionTrack::to_cluster).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for t in &self.tracks {
            if !names.insert(t.name) {
                return Err(Error::Invalid(format!("duplicate track name {}", t.name)));
            }
            if t.name.index >= self.next_index(t.class()) {
                return Err(Error::Invalid(format!("{} is not below the next free index", t.name)));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn to_document(&self) -> TracksDocument {
        TracksDocument {
            patient_id: self.patient_id.clone(),
            tracks: self.tracks.iter().map(TrackRecord::from).collect(),
        }
    }

    pub fn from_document(doc: TracksDocument) -> Result<Self> {
        let mut reg = TrackRegistry::new(doc.patient_id);
        for rec in doc.tracks {
            let name = rec.name;
            let observations = rec
                .observations
                .into_iter()
                .map(|o| {
                    Ok(Observation {
                        annotation: LesionAnnotation::new(
                            o.centroid_mm,
                            name.class,
                            o.reader,
                            o.series,
                            o.timepoint,
                            o.source_label,
                        )?,
                        mapped_centroid: o.mapped_centroid_mm,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if rec.class != name.class {
                return Err(Error::Parse(format!("{name} is declared as {}", rec.class)));
            }
            let mut track = LesionTrack::open(name, observations);
            track.reference_centroid = rec.reference_centroid_mm;
            reg.tracks.push(track);
            let next = match name.class {
                LesionClass::Target => &mut reg.next_target_index,
                LesionClass::NonTarget => &mut reg.next_nontarget_index,
            };
            *next = (*next).max(name.index + 1);
        }
        reg.validate()?;
        Ok(reg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_document()).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TracksDocument = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// Serialized form of a [`TrackRegistry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracksDocument {
    pub patient_id: String,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub name: TrackName,
    pub class: LesionClass,
    pub reference_centroid_mm: Point3,
    pub observations: Vec<ObservationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub reader: String,
    pub series: String,
    pub timepoint: String,
    pub source_label: String,
    pub centroid_mm: Point3,
    pub mapped_centroid_mm: Point3,
}

impl From<&LesionTrack> for TrackRecord {
    fn from(t: &LesionTrack) -> Self {
        TrackRecord {
            name: t.name,
            class: t.class(),
            reference_centroid_mm: t.reference_centroid,
            observations: t
                .observations
                .iter()
                .map(|o| ObservationRecord {
                    reader: o.annotation.reader_id.clone(),
                    series: o.annotation.series_id.clone(),
                    timepoint: o.annotation.timepoint_id.clone(),
                    source_label: o.annotation.source_label.clone(),
                    centroid_mm: o.annotation.centroid,
                    mapped_centroid_mm: o.mapped_centroid,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(label: &str, reader: &str, x: f64) -> LesionAnnotation {
        LesionAnnotation::new(
            Point3::new(x, 0.0, 0.0),
            LesionClass::Target,
            reader,
            "S1",
            "Screening",
            label,
        )
        .unwrap()
    }

    #[test]
    fn names_round_trip_and_reject_garbage() {
        for s in ["G1", "NG12", "G300"] {
            assert_eq!(s.parse::<TrackName>().unwrap().to_string(), s);
        }
        for s in ["G0", "NG", "X1", "G-1", "g1", "NG1a"] {
            assert!(s.parse::<TrackName>().is_err(), "{s}");
        }
    }

    #[test]
    fn open_track_numbers_per_class() {
        let mut reg = TrackRegistry::new("P1");
        let a = reg.open_track(Cluster::single(ann("T1", "R1", 0.0)));
        let mut nt = Cluster::single(ann("NT1", "R1", 5.0));
        nt.class = LesionClass::NonTarget;
        nt.observations[0].annotation.class = LesionClass::NonTarget;
        let b = reg.open_track(nt);
        let c = reg.open_track(Cluster::single(ann("T2", "R1", 9.0)));
        assert_eq!(
            (a.to_string(), b.to_string(), c.to_string()),
            ("G1".into(), "NG1".into(), "G2".into())
        );
        reg.validate().unwrap();
    }

    #[test]
    fn json_round_trip_preserves_registry() {
        let mut reg = TrackRegistry::new("P1");
        let mut cl = Cluster::single(ann("T1", "R1", 0.0));
        cl.observations.push(Observation::unmapped(ann("T4", "R2", 2.0)));
        reg.open_track(cl);
        let json = reg.to_json().unwrap();
        let back = TrackRegistry::from_json(&json).unwrap();
        assert_eq!(back, reg);
        assert!(json.contains("\"reference_centroid_mm\""));
        assert!(json.contains("\"mapped_centroid_mm\""));
    }

    #[test]
    fn validate_flags_double_reader_slot() {
        let mut reg = TrackRegistry::new("P1");
        let mut cl = Cluster::single(ann("T1", "R1", 0.0));
        cl.observations.push(Observation::unmapped(ann("T2", "R1", 1.0)));
        reg.open_track(cl);
        assert!(reg.validate().is_err());
    }
}
