use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lesiontrack::evaluation::{aggregate, score_patient, table1_report, CohortReport};
use lesiontrack::io::{self, Dtype};
use lesiontrack::matching::MatchConfig;
use lesiontrack::pipeline::{match_within_series, run_patient, AuditLog, PatientDataset, PipelineConfig, SeriesData};
use lesiontrack::registration::{register, resample, RegistrationConfig};
use lesiontrack::synth::{generate_phantom, LongitudinalStudy, PhantomSpec, StudySpec};
use lesiontrack::viz::{render_track_sheet, render_triaxial, Marker, TriaxialRequest};
use lesiontrack::{Point3, TrackRegistry};

/// Lesion correspondence across readers, series and timepoints.
#[derive(Parser)]
#[command(name = "lesiontrack", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a phantom volume and its ground-truth annotations.
    Synth(SynthArgs),
    /// Write a synthetic two-visit study: annotations, volumes and truth tracks.
    SynthStudy(SynthStudyArgs),
    /// Match the readers of one series.
    Match(MatchArgs),
    /// Rigidly register a moving volume onto a fixed one.
    Register(RegisterArgs),
    /// Run the full tracking pipeline for one patient.
    Track(TrackArgs),
    /// Score tracks against truth tracks.
    Evaluate(EvaluateArgs),
    /// Render a triaxial view through a point.
    Plot(PlotArgs),
    /// Render one triaxial view per track observation.
    PlotTracks(PlotTracksArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Phantom specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Header path of the output volume; the raw data is written next to it.
    #[arg(long)]
    out_volume: PathBuf,
    #[arg(long)]
    out_annotations: PathBuf,
    #[arg(long, default_value = "i16")]
    dtype: Dtype,
}

#[derive(Args)]
struct SynthStudyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional study parameters (JSON); `--seed` overrides its seed.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    patient: String,
    #[arg(long)]
    timepoint: String,
    #[arg(long)]
    series: String,
    #[arg(long, default_value_t = 40.0)]
    target_threshold: f64,
    #[arg(long, default_value_t = 50.0)]
    nontarget_threshold: f64,
    /// Output tracks (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// Registration settings (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_transform: PathBuf,
    /// Moving volume resampled onto the fixed grid.
    #[arg(long)]
    out_resampled: Option<PathBuf>,
    #[arg(long, default_value = "f32")]
    dtype: Dtype,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Directory laid out as `<patient>/<timepoint>/<series>.hdr`.
    #[arg(long)]
    volumes: Option<PathBuf>,
    #[arg(long)]
    patient: String,
    /// Pipeline settings (JSON) with optional `matching` and `registration` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Algorithm tracks, one file per patient.
    #[arg(long, required_unless_present = "table1_fixture")]
    tracks: Vec<PathBuf>,
    /// Truth tracks, one file per patient, paired with `--tracks` by patient id.
    #[arg(long, required_unless_present = "table1_fixture")]
    truth: Vec<PathBuf>,
    /// Aggregate the published 25-patient table instead of scoring files.
    #[arg(long, conflicts_with_all = ["tracks", "truth"])]
    table1_fixture: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Point the three slices pass through, `x,y,z` in mm.
    #[arg(long, allow_hyphen_values = true)]
    focus: Point3,
    /// Markers (JSON list of `{position, label, class}`).
    #[arg(long)]
    markers: Option<PathBuf>,
    /// Intensity window `low,high`; defaults to the 1st and 99th percentiles.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotTracksArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    volumes: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected low,high")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_tracks(path: &Path) -> Result<TrackRegistry> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrackRegistry::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec: PhantomSpec = read_json(&args.spec)?;
    let (volume, table) = generate_phantom(&spec)?;
    io::save_volume_pair(&volume, args.dtype, &args.out_volume)?;
    io::save_annotations(&table, &args.out_annotations)?;
    println!("wrote {} and {} lesion(s)", args.out_volume.display(), table.len());
    Ok(())
}

fn synth_study(args: SynthStudyArgs) -> Result<()> {
    let mut spec: StudySpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => StudySpec::default(),
    };
    spec.seed = args.seed;
    let study = LongitudinalStudy::generate(&spec)?;
    study.write(&args.out_dir)?;
    println!(
        "wrote patient {} with {} annotation(s) to {}",
        spec.patient_id,
        study.dataset.annotation_count(),
        args.out_dir.display()
    );
    Ok(())
}

fn match_series(args: MatchArgs) -> Result<()> {
    let table = io::load_annotations(&args.annotations)?;
    let mut series = SeriesData::new(&args.series);
    series.annotations = table
        .patient(&args.patient)
        .iter()
        .filter(|a| a.timepoint_id == args.timepoint && a.series_id == args.series)
        .cloned()
        .collect();
    if series.annotations.is_empty() {
        log::warn!("no annotations for {}/{}/{}", args.patient, args.timepoint, args.series);
    }
    let cfg = MatchConfig {
        target_threshold_mm: args.target_threshold,
        nontarget_threshold_mm: args.nontarget_threshold,
    };
    cfg.validate()?;
    let mut audit = AuditLog::default();
    let registry = match_within_series(
        &args.timepoint,
        &series,
        &cfg,
        &TrackRegistry::new(&args.patient),
        &mut audit,
    )?;
    write_text(&args.out, &registry.to_json()?)?;
    if let Some(path) = &args.audit {
        write_text(path, &audit.to_jsonl()?)?;
    }
    println!(
        "{} track(s) from {} annotation(s)",
        registry.len(),
        series.annotations.len()
    );
    Ok(())
}

fn register_cmd(args: RegisterArgs) -> Result<()> {
    let cfg: RegistrationConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => RegistrationConfig::default(),
    };
    let fixed = io::load_volume_pair(&args.fixed)?;
    let moving = io::load_volume_pair(&args.moving)?;
    let result = register(&fixed, &moving, &cfg)?;
    write_text(&args.out_transform, &serde_json::to_string_pretty(&result)?)?;
    if let Some(path) = &args.out_resampled {
        io::save_volume_pair(&resample(&moving, &result.transform, &fixed), args.dtype, path)?;
    }
    let a = result.transform.angles_degrees();
    let t = result.transform.translation;
    println!(
        "angles (deg) {:.3} {:.3} {:.3}  translation (mm) {:.3} {:.3} {:.3}  metric {:.6}  converged {}",
        a[0], a[1], a[2], t[0], t[1], t[2], result.final_metric, result.converged
    );
    Ok(())
}

fn track(args: TrackArgs) -> Result<()> {
    let cfg: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    let table = io::load_annotations(&args.annotations)?;
    let dataset = PatientDataset::load(&table, &args.patient, args.volumes.as_deref())?;
    let out = run_patient(&dataset, &cfg)?;
    write_text(&args.out, &out.registry.to_json()?)?;
    if let Some(path) = &args.audit {
        write_text(path, &out.audit.to_jsonl()?)?;
    }
    println!(
        "{} track(s) from {} annotation(s) over {} timepoint(s)",
        out.registry.len(),
        dataset.annotation_count(),
        dataset.timepoints().len()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let report: CohortReport = if args.table1_fixture {
        table1_report()
    } else {
        if args.tracks.len() != args.truth.len() {
            bail!(
                "got {} --tracks but {} --truth file(s)",
                args.tracks.len(),
                args.truth.len()
            );
        }
        let mut truths: BTreeMap<String, TrackRegistry> = BTreeMap::new();
        for path in &args.truth {
            let t = read_tracks(path)?;
            if truths.insert(t.patient_id.clone(), t).is_some() {
                bail!("two truth files for one patient ({})", path.display());
            }
        }
        let mut scores = Vec::new();
        for path in &args.tracks {
            let tracks = read_tracks(path)?;
            let truth = truths
                .get(&tracks.patient_id)
                .with_context(|| format!("no truth for patient {}", tracks.patient_id))?;
            scores.push(score_patient(&tracks, truth)?);
        }
        aggregate(scores)?
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    println!("patient    U  MI   F  true  R1  R2  Align  M/X/N");
    for s in &report.patients {
        println!(
            "{:<8} {:>3} {:>3} {:>3} {:>5} {:>3} {:>3} {:>6} {:>6}",
            s.patient_id,
            s.unique_reported,
            s.missed,
            s.false_reports,
            s.true_count,
            s.r1,
            s.r2,
            s.aligned,
            s.misaligned
        );
    }
    let rate = report
        .overestimation_rate
        .map_or_else(|| "n/a".to_string(), |r| format!("{:.2}%", r * 100.0));
    println!(
        "total U {}  total true {}  overestimation {}  failures {}/{}",
        report.total_unique,
        report.total_true,
        rate,
        report.failed_patients.len(),
        report.patients.len()
    );
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let base = io::load_volume_pair(&args.volume)?;
    let overlay = args.overlay.as_deref().map(io::load_volume_pair).transpose()?;
    let markers: Vec<Marker> = match &args.markers {
        Some(path) => read_json(path)?,
        None => Vec::new(),
    };
    let mut req = TriaxialRequest::new(&base, args.focus);
    req.overlay = overlay.as_ref();
    req.alpha = args.alpha;
    req.markers = markers;
    req.window = args.window;
    render_triaxial(&req)?.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn plot_tracks(args: PlotTracksArgs) -> Result<()> {
    let registry = read_tracks(&args.tracks)?;
    let dataset = if args.volumes.join(&registry.patient_id).is_dir() {
        Some(PatientDataset::load(
            &io::AnnotationTable::new(),
            &registry.patient_id,
            Some(&args.volumes),
        )?)
    } else {
        log::warn!(
            "no volumes for patient {} under {}",
            registry.patient_id,
            args.volumes.display()
        );
        None
    };
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let written = render_track_sheet(
        &registry,
        |tp, series| dataset.as_ref().and_then(|d| d.volume(tp, series)),
        &args.out_dir,
    )?;
    println!("wrote {} image(s) to {}", written.len(), args.out_dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::SynthStudy(a) => synth_study(a),
        Command::Match(a) => match_series(a),
        Command::Register(a) => register_cmd(a),
        Command::Track(a) => track(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Plot(a) => plot(a),
        Command::PlotTracks(a) => plot_tracks(a),
    }
}
