//! Volume and annotation file formats.
//!
//! A volume is a pair of files: a UTF-8 header with one `key: value` per line
//!
//! ```text
//! dims: 64 64 64
//! spacing: 1.5 1.5 2
//! origin: -48 -48 -64
//! dtype: i16
//! ```
//!
//! and a raw little-endian payload in x-fastest order. Annotations are a CSV
//! with the header `patient_id,timepoint_id,series_id,reader_id,class,source_label,x_mm,y_mm,z_mm`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LesionAnnotation, LesionClass, Point3, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::U8 => "u8",
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
        })
    }
}

impl FromStr for Dtype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "i16" => Ok(Dtype::I16),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::Parse(format!("unsupported dtype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: Point3,
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut dims = None;
        let mut spacing = None;
        let mut origin = None;
        let mut dtype = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("header line {}: expected `key: value`", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "dims" => {
                    let d: [usize; 3] = parse_triple(value, n)?;
                    dims = Some(d);
                }
                "spacing" => spacing = Some(parse_triple::<f64>(value, n)?),
                "origin" => origin = Some(Point3::from(parse_triple::<f64>(value, n)?)),
                "dtype" => dtype = Some(value.parse::<Dtype>()?),
                other => return Err(Error::Parse(format!("header line {}: unknown key {other:?}", n + 1))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("header is missing `{k}`"));
        let header = VolumeHeader {
            dims: dims.ok_or_else(|| missing("dims"))?,
            spacing: spacing.ok_or_else(|| missing("spacing"))?,
            origin: origin.ok_or_else(|| missing("origin"))?,
            dtype: dtype.ok_or_else(|| missing("dtype"))?,
        };
        Volume::check_geometry(header.dims, header.spacing, header.origin).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(header)
    }

    pub fn byte_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

impl fmt::Display for VolumeHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        let Point3 { x, y, z } = self.origin;
        writeln!(f, "dims: {nx} {ny} {nz}")?;
        writeln!(f, "spacing: {sx} {sy} {sz}")?;
        writeln!(f, "origin: {x} {y} {z}")?;
        writeln!(f, "dtype: {}", self.dtype)
    }
}

fn parse_triple<T: FromStr + Copy + Default>(value: &str, line: usize) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("header line {}: expected three values", line + 1)));
    }
    let mut out = [T::default(); 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::Parse(format!("header line {}: bad value {p:?}", line + 1)))?;
    }
    Ok(out)
}

/// The raw payload path that accompanies a header: same stem, `.raw` extension.
pub fn raw_path_for(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

pub fn load_volume(header_path: impl AsRef<Path>, raw_path: impl AsRef<Path>) -> Result<Volume> {
    let header_path = header_path.as_ref();
    let raw_path = raw_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = VolumeHeader::parse(&text)?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    decode_volume(&header, &bytes)
}

/// Loads `<stem>.hdr` and its `<stem>.raw` sibling.
pub fn load_volume_pair(header_path: impl AsRef<Path>) -> Result<Volume> {
    let h = header_path.as_ref();
    load_volume(h, raw_path_for(h))
}

pub fn decode_volume(header: &VolumeHeader, bytes: &[u8]) -> Result<Volume> {
    if bytes.len() != header.byte_len() {
        return Err(Error::Size {
            expected: header.byte_len(),
            found: bytes.len(),
        });
    }
    let voxels: Vec<f64> = match header.dtype {
        Dtype::U8 => bytes.iter().map(|&b| f64::from(b)).collect(),
        Dtype::I16 => bytes
            .chunks_exact(2)
            .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        Dtype::F32 => {
            let mut out = Vec::with_capacity(bytes.len() / 4);
            for (n, c) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(Error::data(None, format!("non-finite f32 voxel at index {n}")));
                }
                out.push(f64::from(v));
            }
            out
        }
    };
    Volume::new(header.dims, header.spacing, header.origin, voxels)
}

/// Encodes intensities as `dtype`. Integer types round to nearest and
/// saturate at the type's range.
pub fn encode_voxels(volume: &Volume, dtype: Dtype) -> Vec<u8> {
    let v = volume.voxels();
    let mut out = Vec::with_capacity(v.len() * dtype.size());
    match dtype {
        Dtype::U8 => out.extend(v.iter().map(|&x| x.round().clamp(0.0, 255.0) as u8)),
        Dtype::I16 => {
            for &x in v {
                let q = x.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn save_volume(
    volume: &Volume,
    dtype: Dtype,
    header_path: impl AsRef<Path>,
    raw_path: impl AsRef<Path>,
) -> Result<()> {
    let header = VolumeHeader {
        dims: volume.dims(),
        spacing: volume.spacing(),
        origin: volume.origin(),
        dtype,
    };
    let header_path = header_path.as_ref();
    let raw_path = raw_path.as_ref();
    for dir in [header_path.parent(), raw_path.parent()].into_iter().flatten() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(header_path, header.to_string()).map_err(|e| Error::io(header_path, e))?;
    fs::write(raw_path, encode_voxels(volume, dtype)).map_err(|e| Error::io(raw_path, e))
}

pub fn save_volume_pair(volume: &Volume, dtype: Dtype, header_path: impl AsRef<Path>) -> Result<()> {
    let h = header_path.as_ref();
    save_volume(volume, dtype, h, raw_path_for(h))
}

pub const ANNOTATION_COLUMNS: [&str; 9] = [
    "patient_id",
    "timepoint_id",
    "series_id",
    "reader_id",
    "class",
    "source_label",
    "x_mm",
    "y_mm",
    "z_mm",
];

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    patient_id: String,
    timepoint_id: String,
    series_id: String,
    reader_id: String,
    class: String,
    source_label: String,
    x_mm: String,
    y_mm: String,
    z_mm: String,
}

/// Annotations grouped by patient. Each patient's list is kept sorted by
/// annotation key so tables compare equal regardless of input row order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationTable {
    patients: BTreeMap<String, Vec<LesionAnnotation>>,
}

impl AnnotationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, patient_id: &str, annotation: LesionAnnotation) -> Result<()> {
        annotation.validate()?;
        let list = self.patients.entry(patient_id.to_string()).or_default();
        let key = annotation.key();
        match list.binary_search_by(|a| a.key().cmp(&key)) {
            Ok(_) => Err(Error::data(
                None,
                format!("duplicate annotation {key} for patient {patient_id}"),
            )),
            Err(pos) => {
                list.insert(pos, annotation);
                Ok(())
            }
        }
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.patients.keys().map(String::as_str)
    }

    pub fn patient(&self, patient_id: &str) -> &[LesionAnnotation] {
        self.patients.get(patient_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.patients.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One patient's annotations partitioned by reader id.
    pub fn by_reader(&self, patient_id: &str) -> BTreeMap<&str, Vec<&LesionAnnotation>> {
        let mut out: BTreeMap<&str, Vec<&LesionAnnotation>> = BTreeMap::new();
        for a in self.patient(patient_id) {
            out.entry(a.reader_id.as_str()).or_default().push(a);
        }
        out
    }

    pub fn readers(&self, patient_id: &str) -> BTreeSet<&str> {
        self.patient(patient_id).iter().map(|a| a.reader_id.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LesionAnnotation)> {
        self.patients
            .iter()
            .flat_map(|(p, list)| list.iter().map(move |a| (p.as_str(), a)))
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let found: Vec<&str> = headers.iter().collect();
        if found != ANNOTATION_COLUMNS {
            let missing: Vec<&str> = ANNOTATION_COLUMNS
                .iter()
                .copied()
                .filter(|c| !found.contains(c))
                .collect();
            return Err(Error::Parse(if missing.is_empty() {
                format!("annotation header must be exactly {:?}", ANNOTATION_COLUMNS.join(","))
            } else {
                format!("annotation header is missing columns {missing:?}")
            }));
        }
        let mut table = AnnotationTable::new();
        for rec in rdr.deserialize::<AnnotationRow>() {
            let row: AnnotationRow = rec.map_err(|e| Error::Parse(e.to_string()))?;
            table.push_row(row, table.len() + 1)?;
        }
        Ok(table)
    }

    fn push_row(&mut self, row: AnnotationRow, row_no: usize) -> Result<()> {
        let coord = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::data(Some(row_no), format!("bad {name} value {s:?}")))
        };
        let centroid = Point3::new(
            coord(&row.x_mm, "x_mm")?,
            coord(&row.y_mm, "y_mm")?,
            coord(&row.z_mm, "z_mm")?,
        );
        let class = LesionClass::from_str(&row.class).map_err(|e| Error::data(Some(row_no), e.to_string()))?;
        let ann = LesionAnnotation::new(
            centroid,
            class,
            row.reader_id,
            row.series_id,
            row.timepoint_id,
            row.source_label,
        )
        .map_err(|e| Error::data(Some(row_no), e.to_string()))?;
        self.insert(&row.patient_id, ann).map_err(|e| match e {
            Error::Data { message, .. } => Error::data(Some(row_no), message),
            other => other,
        })
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(ANNOTATION_COLUMNS)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (patient, a) in self.iter() {
            w.serialize(AnnotationRow {
                patient_id: patient.to_string(),
                timepoint_id: a.timepoint_id.clone(),
                series_id: a.series_id.clone(),
                reader_id: a.reader_id.clone(),
                class: a.class.to_string(),
                source_label: a.source_label.clone(),
                x_mm: a.centroid.x.to_string(),
                y_mm: a.centroid.y.to_string(),
                z_mm: a.centroid.z.to_string(),
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn load_annotations(csv_path: impl AsRef<Path>) -> Result<AnnotationTable> {
    let path = csv_path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    AnnotationTable::from_csv_reader(file)
}

pub fn save_annotations(table: &AnnotationTable, csv_path: impl AsRef<Path>) -> Result<()> {
    let path = csv_path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    table.to_csv_writer(file)
}
