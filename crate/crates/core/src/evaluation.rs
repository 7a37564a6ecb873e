//! Scoring tracks against a validated grouping of the same annotations.
//!
//! Only target lesions are scored. A true lesion is *represented* when some
//! algorithm track is paired with it in a maximum matching between tracks and
//! true lesions, where a track and a lesion may be paired only if the track
//! holds at least one of the lesion's annotations. With `K` such pairs:
//!
//! * `U` is the number of algorithm target tracks,
//! * `MI = N - K` counts true lesions left without a track of their own
//!   (merged into another lesion's track),
//! * `F = U - K` counts surplus tracks (a lesion split over several tracks),
//!
//! so `U + MI - F = N` holds for every input.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{solve_assignment, CostMatrix};
use crate::model::{AnnotationKey, LesionAnnotation, LesionClass};
use crate::track::TrackRegistry;

/// Per-reader counts and their agreement on one patient's target lesions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderAlignment {
    pub r1: usize,
    pub r2: usize,
    pub aligned: usize,
    /// Misaligned, missing or new: lesions named differently by the two
    /// readers plus lesions only one reader reported.
    pub misaligned: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub unique_reported: usize,
    pub missed: usize,
    pub false_reports: usize,
    pub true_count: usize,
    pub r1: usize,
    pub r2: usize,
    pub aligned: usize,
    pub misaligned: usize,
    /// Tracks holding annotations of more than one true lesion. These are
    /// errors even when the matching leaves `MI` and `F` at zero; unknown for
    /// published rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixed_tracks: Option<usize>,
}

impl PatientScore {
    pub fn failed(&self) -> bool {
        self.missed + self.false_reports > 0
    }

    pub fn readers(&self) -> ReaderAlignment {
        ReaderAlignment {
            r1: self.r1,
            r2: self.r2,
            aligned: self.aligned,
            misaligned: self.misaligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub patients: Vec<PatientScore>,
    pub total_unique: usize,
    pub total_missed: usize,
    pub total_false: usize,
    pub total_true: usize,
    /// `(total_unique - total_true) / total_true`; absent when there are no true lesions.
    pub overestimation_rate: Option<f64>,
    pub failure_fraction: f64,
    pub failed_patients: Vec<String>,
}

/// Maps every truth target annotation to the index of its true lesion.
fn truth_index(truth: &TrackRegistry) -> Result<(BTreeMap<AnnotationKey, usize>, usize)> {
    let mut index = BTreeMap::new();
    let mut n = 0;
    for track in truth.tracks_of(LesionClass::Target) {
        for key in track.keys() {
            if index.insert(key.clone(), n).is_some() {
                return Err(Error::InputMismatch(format!("{key} appears in two truth lesions")));
            }
        }
        n += 1;
    }
    Ok((index, n))
}

/// Counts produced by [`score_tracks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackCounts {
    pub unique: usize,
    pub missed: usize,
    pub false_reports: usize,
    pub mixed: usize,
}

/// U, MI and F of `tracks` against `truth`.
pub fn score_tracks(tracks: &TrackRegistry, truth: &TrackRegistry) -> Result<TrackCounts> {
    let (index, n_true) = truth_index(truth)?;
    let algorithm: Vec<_> = tracks.tracks_of(LesionClass::Target).collect();
    let u = algorithm.len();

    let mut shared = vec![vec![0usize; n_true]; u];
    for (row, track) in algorithm.iter().enumerate() {
        for key in track.keys() {
            let lesion = *index
                .get(&key)
                .ok_or_else(|| Error::InputMismatch(format!("{key} in {} is not in the truth", track.name)))?;
            shared[row][lesion] += 1;
        }
    }

    // Maximum-cardinality matching as a min-cost assignment: pairs without
    // shared annotations cost more than any full set of real pairs, and among
    // maximum matchings the one sharing the most annotations wins.
    let most = shared.iter().flatten().copied().max().unwrap_or(0) as f64 + 1.0;
    let forbidden = most * (u.min(n_true) as f64 + 1.0);
    let costs = CostMatrix::from_fn(u, n_true, |r, c| match shared[r][c] {
        0 => forbidden,
        s => most - s as f64,
    });
    let assignment = solve_assignment(&costs)?;
    let k = assignment.pairs.iter().filter(|&&(r, c)| shared[r][c] > 0).count();
    let mixed = shared
        .iter()
        .filter(|row| row.iter().filter(|&&s| s > 0).count() > 1)
        .count();
    Ok(TrackCounts {
        unique: u,
        missed: n_true - k,
        false_reports: u - k,
        mixed,
    })
}

/// Reader counts on the truth lesions. The two readers are the first two
/// reader ids in sorted order; a lesion is aligned when both readers
/// reported it under the same set of labels.
pub fn reader_alignment(annotations: &[LesionAnnotation], truth: &TrackRegistry) -> Result<ReaderAlignment> {
    let (index, _) = truth_index(truth)?;
    // reader -> lesion -> labels
    let mut seen: BTreeMap<&str, BTreeMap<usize, BTreeSet<&str>>> = BTreeMap::new();
    for a in annotations.iter().filter(|a| a.class == LesionClass::Target) {
        let lesion = *index
            .get(&a.key())
            .ok_or_else(|| Error::InputMismatch(format!("{} is not in the truth", a.key())))?;
        seen.entry(&a.reader_id)
            .or_default()
            .entry(lesion)
            .or_default()
            .insert(&a.source_label);
    }
    if seen.len() > 2 {
        return Err(Error::InputMismatch(format!(
            "expected at most two readers, found {}",
            seen.len()
        )));
    }
    let mut readers = seen.into_values();
    let first = readers.next().unwrap_or_default();
    let second = readers.next().unwrap_or_default();
    let union: BTreeSet<usize> = first.keys().chain(second.keys()).copied().collect();
    let aligned = first
        .iter()
        .filter(|(lesion, labels)| second.get(lesion) == Some(labels))
        .count();
    Ok(ReaderAlignment {
        r1: first.len(),
        r2: second.len(),
        aligned,
        misaligned: union.len() - aligned,
    })
}

/// Scores one patient; reader columns come from the truth's own annotations.
pub fn score_patient(tracks: &TrackRegistry, truth: &TrackRegistry) -> Result<PatientScore> {
    if tracks.patient_id != truth.patient_id {
        return Err(Error::InputMismatch(format!(
            "tracks are for {} but truth is for {}",
            tracks.patient_id, truth.patient_id
        )));
    }
    let counts = score_tracks(tracks, truth)?;
    let (u, mi, f) = (counts.unique, counts.missed, counts.false_reports);
    let annotations: Vec<LesionAnnotation> = truth
        .tracks()
        .iter()
        .flat_map(|t| t.observations.iter().map(|o| o.annotation.clone()))
        .collect();
    let readers = reader_alignment(&annotations, truth)?;
    let score = PatientScore {
        patient_id: tracks.patient_id.clone(),
        unique_reported: u,
        missed: mi,
        false_reports: f,
        true_count: u + mi - f,
        r1: readers.r1,
        r2: readers.r2,
        aligned: readers.aligned,
        misaligned: readers.misaligned,
        mixed_tracks: Some(counts.mixed),
    };
    debug_assert_eq!(score.true_count, truth.tracks_of(LesionClass::Target).count());
    Ok(score)
}

pub fn aggregate(scores: Vec<PatientScore>) -> Result<CohortReport> {
    if scores.is_empty() {
        return Err(Error::Invalid("nothing to aggregate".into()));
    }
    let total_unique = scores.iter().map(|s| s.unique_reported).sum::<usize>();
    let total_missed = scores.iter().map(|s| s.missed).sum::<usize>();
    let total_false = scores.iter().map(|s| s.false_reports).sum::<usize>();
    let total_true = scores.iter().map(|s| s.true_count).sum::<usize>();
    let failed_patients: Vec<String> = scores
        .iter()
        .filter(|s| s.failed())
        .map(|s| s.patient_id.clone())
        .collect();
    Ok(CohortReport {
        overestimation_rate: (total_true > 0).then(|| (total_unique as f64 - total_true as f64) / total_true as f64),
        failure_fraction: failed_patients.len() as f64 / scores.len() as f64,
        failed_patients,
        total_unique,
        total_missed,
        total_false,
        total_true,
        patients: scores,
    })
}

/// Published per-patient results of the original study:
/// `(U, MI, F, R1, R2, Align, M/X/N)` for patients 1 to 25.
pub const TABLE1: [[usize; 7]; 25] = [
    [3, 0, 0, 2, 2, 1, 2],
    [2, 0, 0, 2, 2, 2, 0],
    [6, 0, 0, 5, 3, 1, 5],
    [3, 0, 0, 2, 2, 1, 2],
    [1, 0, 0, 1, 0, 0, 1],
    [1, 0, 0, 1, 0, 0, 1],
    [2, 0, 0, 2, 0, 0, 2],
    [1, 0, 0, 1, 0, 0, 1],
    [2, 0, 0, 2, 2, 2, 0],
    [4, 0, 0, 2, 2, 0, 4],
    [2, 0, 0, 2, 2, 2, 0],
    [6, 0, 1, 5, 2, 2, 3],
    [4, 0, 2, 2, 0, 0, 2],
    [2, 0, 0, 2, 1, 1, 1],
    [1, 0, 0, 1, 1, 1, 0],
    [2, 0, 0, 2, 0, 0, 2],
    [4, 0, 0, 4, 2, 2, 2],
    [2, 0, 0, 2, 1, 1, 1],
    [3, 0, 0, 2, 2, 1, 2],
    [2, 0, 0, 1, 1, 0, 2],
    [1, 0, 0, 1, 0, 0, 1],
    [3, 0, 0, 3, 2, 2, 1],
    [2, 0, 0, 2, 2, 2, 0],
    [3, 0, 0, 1, 3, 1, 2],
    [3, 0, 0, 3, 2, 1, 2],
];

/// The published table as scores, patient ids `"1"` to `"25"`.
pub fn table1_scores() -> Vec<PatientScore> {
    TABLE1
        .iter()
        .enumerate()
        .map(|(n, &[u, mi, f, r1, r2, aligned, misaligned])| PatientScore {
            patient_id: (n + 1).to_string(),
            unique_reported: u,
            missed: mi,
            false_reports: f,
            true_count: u + mi - f,
            r1,
            r2,
            aligned,
            misaligned,
            mixed_tracks: None,
        })
        .collect()
}

pub fn table1_report() -> CohortReport {
    aggregate(table1_scores()).expect("the table is not empty")
}
