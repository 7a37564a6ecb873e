//! Threshold-gated correspondence between two sets of lesion centroids.
//!
//! Targets are matched only against targets and non-targets only against
//! non-targets. Within a class the optimal one-to-one assignment on Euclidean
//! centroid distance is computed first; any assigned pair farther apart than
//! the class threshold is then dissolved and both lesions become unmatched.

mod hungarian;

pub use hungarian::{solve_assignment, threshold_filter, Assignment, CostMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LesionClass, Point3};
use crate::track::{Cluster, Located, TrackRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub target_threshold_mm: f64,
    pub nontarget_threshold_mm: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            target_threshold_mm: 40.0,
            nontarget_threshold_mm: 50.0,
        }
    }
}

impl MatchConfig {
    pub fn threshold(&self, class: LesionClass) -> f64 {
        match class {
            LesionClass::Target => self.target_threshold_mm,
            LesionClass::NonTarget => self.nontarget_threshold_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.target_threshold_mm, self.nontarget_threshold_mm] {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::Config(format!("match thresholds must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// A pair proposed by the assignment, with indices into the caller's slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub distance_mm: f64,
}

/// Result for one lesion class. Indices refer to the full input slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCorrespondence {
    pub class: LesionClass,
    pub threshold_mm: f64,
    pub matched: Vec<Pair>,
    /// Pairs the assignment proposed but the threshold rejected.
    pub dissolved: Vec<Pair>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub classes: Vec<ClassCorrespondence>,
}

impl Correspondence {
    pub fn matched(&self) -> impl Iterator<Item = &Pair> {
        self.classes.iter().flat_map(|c| c.matched.iter())
    }

    pub fn dissolved(&self) -> impl Iterator<Item = &Pair> {
        self.classes.iter().flat_map(|c| c.dissolved.iter())
    }

    pub fn unmatched_a(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().flat_map(|c| c.unmatched_a.iter().copied())
    }

    pub fn unmatched_b(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().flat_map(|c| c.unmatched_b.iter().copied())
    }

    pub fn class(&self, class: LesionClass) -> Option<&ClassCorrespondence> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Matches `set_a` against `set_b` class by class.
pub fn match_lesions<A: Located, B: Located>(set_a: &[A], set_b: &[B], cfg: &MatchConfig) -> Result<Correspondence> {
    let mut classes = Vec::with_capacity(2);
    for class in LesionClass::ALL {
        let idx_a: Vec<usize> = (0..set_a.len()).filter(|&i| set_a[i].class() == class).collect();
        let idx_b: Vec<usize> = (0..set_b.len()).filter(|&i| set_b[i].class() == class).collect();
        let pts_a: Vec<Point3> = idx_a.iter().map(|&i| set_a[i].position()).collect();
        let pts_b: Vec<Point3> = idx_b.iter().map(|&i| set_b[i].position()).collect();
        let costs = CostMatrix::euclidean(&pts_a, &pts_b);
        let solved = solve_assignment(&costs)?;
        let threshold = cfg.threshold(class);
        let kept = threshold_filter(&solved, &costs, threshold);

        let pair = |&(r, c): &(usize, usize)| Pair {
            a: idx_a[r],
            b: idx_b[c],
            distance_mm: costs.get(r, c),
        };
        let matched: Vec<Pair> = kept.pairs.iter().map(pair).collect();
        let dissolved: Vec<Pair> = solved
            .pairs
            .iter()
            .filter(|p| !kept.pairs.contains(p))
            .map(pair)
            .collect();
        classes.push(ClassCorrespondence {
            class,
            threshold_mm: threshold,
            matched,
            dissolved,
            unmatched_a: kept.unmatched_rows.iter().map(|&r| idx_a[r]).collect(),
            unmatched_b: kept.unmatched_cols.iter().map(|&c| idx_b[c]).collect(),
        });
    }
    Ok(Correspondence { classes })
}

/// Folds side-b clusters into the registry according to `corr`, whose side a
/// must be `registry.tracks()` in order.
///
/// Matched clusters join their track; unmatched ones open new tracks, numbered
/// in ascending order of their smallest `(timepoint, series, reader, label)`.
pub fn assign_names(corr: &Correspondence, registry: &TrackRegistry, incoming: &[Cluster]) -> Result<TrackRegistry> {
    let mut out = registry.clone();
    let mut claimed = vec![false; incoming.len()];
    let mut claim = |b: usize| -> Result<()> {
        match claimed.get_mut(b) {
            Some(seen) if !*seen => {
                *seen = true;
                Ok(())
            }
            Some(_) => Err(Error::Invalid(format!("incoming lesion {b} is claimed twice"))),
            None => Err(Error::Invalid(format!("incoming lesion {b} is out of range"))),
        }
    };

    for p in corr.matched() {
        claim(p.b)?;
        let track = out
            .tracks_mut()
            .get_mut(p.a)
            .ok_or_else(|| Error::Invalid(format!("track index {} is out of range", p.a)))?;
        if track.class() != incoming[p.b].class {
            return Err(Error::Invalid(format!("cross-class pair onto {}", track.name)));
        }
        track.observations.extend(incoming[p.b].observations.iter().cloned());
        track.refresh_centroid();
    }

    let mut fresh: Vec<usize> = corr.unmatched_b().collect();
    for &b in &fresh {
        claim(b)?;
    }
    if let Some(b) = claimed.iter().position(|c| !c) {
        return Err(Error::Invalid(format!(
            "incoming lesion {b} is neither matched nor unmatched"
        )));
    }
    fresh.sort_by(|&x, &y| {
        (incoming[x].class, incoming[x].naming_key())
            .cmp(&(incoming[y].class, incoming[y].naming_key()))
            .then(x.cmp(&y))
    });
    for b in fresh {
        out.open_track(incoming[b].clone());
    }
    Ok(out)
}

/// Matches clusters against a registry's tracks and folds them in.
pub fn absorb(
    registry: &TrackRegistry,
    incoming: &[Cluster],
    cfg: &MatchConfig,
) -> Result<(TrackRegistry, Correspondence)> {
    let corr = match_lesions(registry.tracks(), incoming, cfg)?;
    let next = assign_names(&corr, registry, incoming)?;
    Ok((next, corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LesionAnnotation;

    fn ann(class: LesionClass, label: &str, reader: &str, p: [f64; 3]) -> LesionAnnotation {
        LesionAnnotation::new(Point3::from(p), class, reader, "S1", "Screening", label).unwrap()
    }

    use LesionClass::{NonTarget, Target};

    #[test]
    fn identical_sets_match_at_zero() {
        let a = vec![
            ann(Target, "T1", "R1", [0.0, 0.0, 0.0]),
            ann(Target, "T2", "R1", [30.0, 0.0, 0.0]),
            ann(NonTarget, "NT1", "R1", [0.0, 60.0, 0.0]),
        ];
        let corr = match_lesions(&a, &a, &MatchConfig::default()).unwrap();
        let mut pairs: Vec<(usize, usize, f64)> = corr.matched().map(|p| (p.a, p.b, p.distance_mm)).collect();
        pairs.sort_by_key(|p| p.0);
        assert_eq!(pairs, vec![(0, 0, 0.0), (1, 1, 0.0), (2, 2, 0.0)]);
        assert_eq!(corr.unmatched_a().count() + corr.unmatched_b().count(), 0);
    }

    #[test]
    fn three_versus_two_with_one_pair_beyond_threshold() {
        // a: lesions 1..3, b: lesions 4..5. Optimal assignment pairs (a0,b0) at
        // 5 mm and (a2,b1) at 45 mm; the latter exceeds 40 mm and dissolves.
        let a = vec![
            ann(Target, "T1", "R1", [0.0, 0.0, 0.0]),
            ann(Target, "T2", "R1", [200.0, 0.0, 0.0]),
            ann(Target, "T3", "R1", [0.0, 100.0, 0.0]),
        ];
        let b = vec![
            ann(Target, "T1", "R2", [5.0, 0.0, 0.0]),
            ann(Target, "T2", "R2", [0.0, 145.0, 0.0]),
        ];
        let corr = match_lesions(&a, &b, &MatchConfig::default()).unwrap();
        let t = corr.class(Target).unwrap();
        assert_eq!(t.matched.len(), 1);
        assert_eq!((t.matched[0].a, t.matched[0].b), (0, 0));
        assert_eq!(t.dissolved.len(), 1);
        assert_eq!((t.dissolved[0].a, t.dissolved[0].b), (2, 1));
        assert_eq!(t.unmatched_a, vec![1, 2]);
        assert_eq!(t.unmatched_b, vec![1]);
    }

    #[test]
    fn classes_never_cross() {
        let a = vec![ann(Target, "T1", "R1", [1.0, 2.0, 3.0])];
        let b = vec![ann(NonTarget, "NT1", "R2", [1.0, 2.0, 3.0])];
        let corr = match_lesions(&a, &b, &MatchConfig::default()).unwrap();
        assert_eq!(corr.matched().count(), 0);
        assert_eq!(corr.unmatched_a().collect::<Vec<_>>(), vec![0]);
        assert_eq!(corr.unmatched_b().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn nontarget_uses_its_own_threshold() {
        let a = vec![ann(NonTarget, "NT1", "R1", [0.0; 3])];
        let b = vec![ann(NonTarget, "NT1", "R2", [45.0, 0.0, 0.0])];
        let corr = match_lesions(&a, &b, &MatchConfig::default()).unwrap();
        assert_eq!(corr.matched().count(), 1);
    }

    fn clusters(anns: &[LesionAnnotation]) -> Vec<Cluster> {
        anns.iter().cloned().map(Cluster::single).collect()
    }

    #[test]
    fn bootstrap_naming() {
        let b = clusters(&[
            ann(Target, "T2", "R1", [10.0, 0.0, 0.0]),
            ann(NonTarget, "NT1", "R1", [0.0, 50.0, 0.0]),
            ann(Target, "T1", "R1", [0.0, 0.0, 0.0]),
        ]);
        let (reg, _) = absorb(&TrackRegistry::new("P1"), &b, &MatchConfig::default()).unwrap();
        let names: Vec<String> = reg.tracks().iter().map(|t| t.name.to_string()).collect();
        assert_eq!(names, vec!["G1", "G2", "NG1"]);
        // numbering follows source label order, not input order
        assert_eq!(reg.tracks()[0].observations[0].annotation.source_label, "T1");
    }

    #[test]
    fn matched_keeps_name_and_new_gets_next() {
        let first = clusters(&[ann(Target, "T1", "R1", [0.0; 3])]);
        let (reg, _) = absorb(&TrackRegistry::new("P1"), &first, &MatchConfig::default()).unwrap();
        let second = clusters(&[
            ann(Target, "T1", "R2", [4.0, 0.0, 0.0]),
            ann(Target, "T2", "R2", [0.0, 90.0, 0.0]),
        ]);
        let (reg, _) = absorb(&reg, &second, &MatchConfig::default()).unwrap();
        assert_eq!(reg.len(), 2);
        let g1 = reg.get("G1".parse().unwrap()).unwrap();
        assert_eq!(g1.observations.len(), 2);
        assert_eq!(g1.reference_centroid, Point3::new(2.0, 0.0, 0.0));
        assert_eq!(reg.get("G2".parse().unwrap()).unwrap().observations.len(), 1);

        let (again, _) = absorb(
            &absorb(&TrackRegistry::new("P1"), &first, &MatchConfig::default())
                .unwrap()
                .0,
            &second,
            &MatchConfig::default(),
        )
        .unwrap();
        assert_eq!(again, reg);
    }

    #[test]
    fn double_claim_is_rejected() {
        let reg = absorb(
            &TrackRegistry::new("P1"),
            &clusters(&[
                ann(Target, "T1", "R1", [0.0; 3]),
                ann(Target, "T2", "R1", [50.0, 0.0, 0.0]),
            ]),
            &MatchConfig::default(),
        )
        .unwrap()
        .0;
        let incoming = clusters(&[ann(Target, "T1", "R2", [0.0; 3])]);
        let corr = Correspondence {
            classes: vec![ClassCorrespondence {
                class: Target,
                threshold_mm: 40.0,
                matched: vec![
                    Pair {
                        a: 0,
                        b: 0,
                        distance_mm: 0.0,
                    },
                    Pair {
                        a: 1,
                        b: 0,
                        distance_mm: 50.0,
                    },
                ],
                dissolved: vec![],
                unmatched_a: vec![],
                unmatched_b: vec![],
            }],
        };
        assert!(matches!(assign_names(&corr, &reg, &incoming), Err(Error::Invalid(_))));
    }
}
