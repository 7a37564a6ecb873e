use std::collections::BTreeSet;

use lesiontrack::evaluation::score_patient;
use lesiontrack::matching::absorb;
use lesiontrack::pipeline::{run_patient, AuditEvent, PatientDataset, PipelineConfig, SeriesData, TimepointData};
use lesiontrack::synth::{generate_phantom, transform_phantom, LesionSpec, LongitudinalStudy, PhantomSpec, StudySpec};
use lesiontrack::{AnnotationKey, LesionAnnotation, LesionClass, Point3, RigidTransform};

fn two_series(extra_lesion: bool) -> PatientDataset {
    let spec = PhantomSpec {
        lesions: vec![
            LesionSpec {
                center: Point3::new(14.0, 6.0, 2.0),
                radius_mm: 6.0,
                intensity: 100.0,
                class: LesionClass::Target,
                label: None,
            },
            LesionSpec {
                center: Point3::new(-16.0, -8.0, -4.0),
                radius_mm: 5.0,
                intensity: 100.0,
                class: LesionClass::NonTarget,
                label: None,
            },
        ],
        ..PhantomSpec::standard(21)
    };
    let (v1, truth) = generate_phantom(&spec).unwrap();
    let pose = RigidTransform::new([0.06, -0.04, 0.05], [9.0, -5.0, 4.0], Point3::ORIGIN);
    let (v2, moved) = transform_phantom(&v1, &truth, &pose, &v1).unwrap();

    let mut s1 = SeriesData::new("S1");
    s1.volume = Some(v1);
    s1.annotations = truth.patient("P1").to_vec();
    let mut s2 = SeriesData::new("S2");
    s2.volume = Some(v2);
    s2.annotations = moved
        .patient("P1")
        .iter()
        .map(|a| LesionAnnotation {
            series_id: "S2".into(),
            ..a.clone()
        })
        .collect();
    if extra_lesion {
        s2.annotations.push(
            LesionAnnotation::new(
                Point3::new(-5.0, 15.0, 12.0),
                LesionClass::Target,
                "R1",
                "S2",
                "Screening",
                "T9",
            )
            .unwrap(),
        );
    }
    let mut tp = TimepointData::new("Screening");
    tp.series = vec![s1, s2];
    PatientDataset::new("P1", vec![tp]).unwrap()
}

#[test]
fn registered_series_add_no_tracks() {
    let out = run_patient(&two_series(false), &PipelineConfig::default()).unwrap();
    assert_eq!(out.registry.len(), 2);
    assert!(out.registry.tracks().iter().all(|t| t.observations.len() == 2));
    assert!(out
        .audit
        .events()
        .iter()
        .any(|e| matches!(e, AuditEvent::Registration { converged: true, .. })));
}

#[test]
fn unseen_lesion_in_second_series_opens_one_track() {
    let out = run_patient(&two_series(true), &PipelineConfig::default()).unwrap();
    let names: Vec<String> = out.registry.tracks().iter().map(|t| t.name.to_string()).collect();
    assert_eq!(out.registry.len(), 3, "{names:?}");
    let singles: Vec<_> = out
        .registry
        .tracks()
        .iter()
        .filter(|t| t.observations.len() == 1)
        .collect();
    assert_eq!(singles.len(), 1);
    assert_eq!(singles[0].observations[0].annotation.source_label, "T9");
}

fn keys(reg: &lesiontrack::TrackRegistry) -> BTreeSet<AnnotationKey> {
    reg.tracks().iter().flat_map(|t| t.keys()).collect()
}

#[test]
fn study_invariants() {
    let cfg = PipelineConfig::default();
    for seed in [31, 32] {
        let study = LongitudinalStudy::generate(&StudySpec::with_seed(seed)).unwrap();
        let full = run_patient(&study.dataset, &cfg).unwrap().registry;
        full.validate().unwrap();

        // every annotation lands in exactly one track
        assert_eq!(full.observation_count(), study.dataset.annotation_count());
        assert_eq!(keys(&full).len(), study.dataset.annotation_count());

        // re-absorbing the result changes nothing
        let (again, _) = absorb(&full, &full.to_clusters(), &cfg.matching).unwrap();
        assert_eq!(again.len(), full.len(), "seed {seed}");

        // adding a timepoint never renames or shrinks earlier tracks
        let first = PatientDataset::new("P1", study.dataset.timepoints()[..1].to_vec()).unwrap();
        let prefix = run_patient(&first, &cfg).unwrap().registry;
        assert!(prefix.len() <= full.len());
        for t in prefix.tracks() {
            let later = full.get(t.name).unwrap_or_else(|| panic!("{} vanished", t.name));
            let before: BTreeSet<_> = t.keys().collect();
            let after: BTreeSet<_> = later.keys().collect();
            assert!(before.is_subset(&after), "seed {seed}: {} lost observations", t.name);
        }

        // truth scored against itself is perfect
        let s = score_patient(&study.truth, &study.truth).unwrap();
        assert_eq!((s.missed, s.false_reports), (0, 0));
        assert_eq!(s.unique_reported, s.true_count);
    }
}

#[test]
fn missing_volume_falls_back_to_identity() {
    let mut ds = two_series(false);
    let mut tps = ds.timepoints().to_vec();
    tps[0].series[1].volume = None;
    ds = PatientDataset::new("P1", tps).unwrap();
    let out = run_patient(&ds, &PipelineConfig::default()).unwrap();
    assert!(out
        .audit
        .events()
        .iter()
        .any(|e| matches!(e, AuditEvent::Unregistered { .. })));
    assert_eq!(out.registry.observation_count(), 4);
}
