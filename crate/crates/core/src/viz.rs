//! Triaxial PNG views: axial, sagittal and coronal slices through a point,
//! with an optional semi-transparent overlay and lesion markers.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LesionClass, Point3, Volume};
use crate::track::TrackRegistry;

const TARGET_COLOUR: Rgb<u8> = Rgb([255, 0, 0]);
const NONTARGET_COLOUR: Rgb<u8> = Rgb([0, 0, 0]);
const TEXT_COLOUR: Rgb<u8> = Rgb([255, 220, 0]);
const GAP: u32 = 4;
const MARKER_ARM: i64 = 5;
const MIN_PANEL_PIXELS: f64 = 256.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub position: Point3,
    #[serde(default)]
    pub label: String,
    pub class: LesionClass,
}

#[derive(Debug, Clone)]
pub struct TriaxialRequest<'a> {
    pub base: &'a Volume,
    pub overlay: Option<&'a Volume>,
    /// Opacity of the overlay, in (0, 1].
    pub alpha: f64,
    pub focus: Point3,
    pub markers: Vec<Marker>,
    /// Intensity window of the base volume; defaults to its 1st and 99th percentiles.
    pub window: Option<(f64, f64)>,
    /// Markers farther than this from a slice plane are not drawn on it.
    pub marker_depth_mm: f64,
}

impl<'a> TriaxialRequest<'a> {
    pub fn new(base: &'a Volume, focus: Point3) -> Self {
        TriaxialRequest {
            base,
            overlay: None,
            alpha: 0.5,
            focus,
            markers: Vec::new(),
            window: None,
            marker_depth_mm: 10.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Invalid(format!("alpha {} is outside (0, 1]", self.alpha)));
        }
        if let Some((lo, hi)) = self.window {
            if !(hi > lo) {
                return Err(Error::Invalid(format!("window ({lo}, {hi}) is empty")));
            }
        }
        let inside =
            contains_fringe(self.base, self.focus) || self.overlay.is_some_and(|o| contains_fringe(o, self.focus));
        if !inside {
            let p = self.focus;
            return Err(Error::OutOfBounds { x: p.x, y: p.y, z: p.z });
        }
        Ok(())
    }
}

/// The view plane of a panel: which volume axes run across and down, and
/// which one the slice cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// x across, y down.
    Axial,
    /// y across, z up.
    Sagittal,
    /// x across, z up.
    Coronal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Sagittal, View::Coronal];

    fn axes(self) -> (usize, usize, usize) {
        match self {
            View::Axial => (0, 1, 2),
            View::Sagittal => (1, 2, 0),
            View::Coronal => (0, 2, 1),
        }
    }

    fn flips_rows(self) -> bool {
        self != View::Axial
    }
}

/// Placement of one panel inside the rendered image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub view: View,
    /// Left edge of the panel in the image.
    pub left: u32,
    pub width: u32,
    pub height: u32,
    /// Physical coordinate of the panel's first pixel edge along each in-plane axis.
    low: [f64; 2],
    pixel_mm: f64,
    depth: f64,
    /// Voxel index of the slice in the base volume.
    pub slice: i64,
}

impl Panel {
    /// Continuous pixel coordinates `(column, row)` of a point's projection,
    /// measured from the image's top-left corner.
    pub fn to_pixel(&self, p: Point3) -> (f64, f64) {
        let (u, v, _) = self.view.axes();
        let pa = p.to_array();
        let col = (pa[u] - self.low[0]) / self.pixel_mm - 0.5;
        let mut row = (pa[v] - self.low[1]) / self.pixel_mm - 0.5;
        if self.view.flips_rows() {
            row = self.height as f64 - 1.0 - row;
        }
        (self.left as f64 + col, row)
    }

    fn physical(&self, col: u32, row: u32) -> Point3 {
        let (u, v, w) = self.view.axes();
        let row = if self.view.flips_rows() {
            self.height - 1 - row
        } else {
            row
        };
        let mut p = [0.0; 3];
        p[u] = self.low[0] + (col as f64 + 0.5) * self.pixel_mm;
        p[v] = self.low[1] + (row as f64 + 0.5) * self.pixel_mm;
        p[w] = self.depth;
        Point3::from(p)
    }

    fn distance_from_plane(&self, p: Point3) -> f64 {
        let (_, _, w) = self.view.axes();
        (p.to_array()[w] - self.depth).abs()
    }
}

#[derive(Debug, Clone)]
pub struct TriaxialImage {
    pub image: RgbImage,
    pub panels: [Panel; 3],
}

impl TriaxialImage {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.image
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
    }
}

/// Whether `p` lies within the volume's voxels, counting the outer half voxel.
fn contains_fringe(v: &Volume, p: Point3) -> bool {
    let idx = v.physical_to_voxel(p);
    (0..3).all(|a| idx[a] >= -0.5 && idx[a] <= v.dims()[a] as f64 - 0.5)
}

fn sample(v: &Volume, p: Point3) -> Option<f64> {
    if !contains_fringe(v, p) {
        return None;
    }
    let idx = v.physical_to_voxel(p);
    let clamped = [0, 1, 2].map(|a| idx[a].clamp(0.0, (v.dims()[a] - 1) as f64));
    v.interpolate_index(clamped)
}

fn default_window(v: &Volume) -> (f64, f64) {
    let lo = v.percentile(0.01);
    let hi = v.percentile(0.99);
    if hi > lo {
        (lo, hi)
    } else {
        let (min, max) = v.intensity_range();
        if max > min {
            (min, max)
        } else {
            (min - 0.5, min + 0.5)
        }
    }
}

fn grey(value: Option<f64>, (lo, hi): (f64, f64)) -> f64 {
    value.map_or(0.0, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0)
}

pub fn render_triaxial(req: &TriaxialRequest<'_>) -> Result<TriaxialImage> {
    req.validate()?;
    let base = req.base;
    let window = req.window.unwrap_or_else(|| default_window(base));
    let overlay_window = req.overlay.map(|o| {
        if req.window.is_some() {
            window
        } else {
            default_window(o)
        }
    });

    let spacing = base.spacing();
    let dims = base.dims();
    let min_spacing = spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let largest = (0..3)
        .map(|a| dims[a] as f64 * spacing[a] / min_spacing)
        .fold(0.0, f64::max);
    let zoom = (MIN_PANEL_PIXELS / largest).ceil().clamp(1.0, 8.0);
    let pixel_mm = min_spacing / zoom;
    let focus_index = base.physical_to_voxel(req.focus);
    let origin = base.origin().to_array();
    let low_edge = |a: usize| origin[a] - 0.5 * spacing[a];
    let extent_pixels = |a: usize| ((dims[a] as f64 * spacing[a]) / pixel_mm).round().max(1.0) as u32;

    let mut left = 0;
    let panels = View::ALL.map(|view| {
        let (u, v, w) = view.axes();
        let panel = Panel {
            view,
            left,
            width: extent_pixels(u),
            height: extent_pixels(v),
            low: [low_edge(u), low_edge(v)],
            pixel_mm,
            depth: req.focus.to_array()[w],
            slice: focus_index[w].round() as i64,
        };
        left += panel.width + GAP;
        panel
    });
    let width = left - GAP;
    let height = panels.iter().map(|p| p.height).max().unwrap_or(1);
    let mut image = RgbImage::new(width, height);

    for panel in &panels {
        for row in 0..panel.height {
            for col in 0..panel.width {
                let p = panel.physical(col, row);
                let mut g = grey(sample(base, p), window);
                if let (Some(o), Some(ow)) = (req.overlay, overlay_window) {
                    g = (1.0 - req.alpha) * g + req.alpha * grey(sample(o, p), ow);
                }
                let g = g.round() as u8;
                image.put_pixel(panel.left + col, row, Rgb([g, g, g]));
            }
        }
        for m in &req.markers {
            if panel.distance_from_plane(m.position) <= req.marker_depth_mm {
                let colour = match m.class {
                    LesionClass::Target => TARGET_COLOUR,
                    LesionClass::NonTarget => NONTARGET_COLOUR,
                };
                draw_cross(&mut image, panel, m.position, colour);
            }
        }
        draw_number(&mut image, panel.left + 3, 3, panel.slice, 2);
    }
    Ok(TriaxialImage { image, panels })
}

fn put_in_panel(image: &mut RgbImage, panel: &Panel, x: i64, y: i64, colour: Rgb<u8>) {
    let lo = panel.left as i64;
    if x >= lo && x < lo + panel.width as i64 && y >= 0 && y < panel.height as i64 {
        image.put_pixel(x as u32, y as u32, colour);
    }
}

fn draw_cross(image: &mut RgbImage, panel: &Panel, p: Point3, colour: Rgb<u8>) {
    let (x, y) = panel.to_pixel(p);
    let (x, y) = (x.round() as i64, y.round() as i64);
    for d in -MARKER_ARM..=MARKER_ARM {
        for t in 0..2 {
            put_in_panel(image, panel, x + d, y + t, colour);
            put_in_panel(image, panel, x + t, y + d, colour);
        }
    }
}

/// 3x5 digit glyphs, one row per byte, most significant of the low three bits on the left.
const DIGITS: [[u8; 5]; 11] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
    [0b000, 0b000, 0b111, 0b000, 0b000],
];

fn draw_number(image: &mut RgbImage, x0: u32, y0: u32, n: i64, scale: u32) {
    let text = n.to_string();
    for (i, ch) in text.chars().enumerate() {
        let glyph = match ch {
            '-' => &DIGITS[10],
            d => &DIGITS[d.to_digit(10).expect("decimal digit") as usize],
        };
        let gx = x0 + i as u32 * 4 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let (x, y) = (gx + col * scale + dx, y0 + row as u32 * scale + dy);
                            if x < image.width() && y < image.height() {
                                image.put_pixel(x, y, TEXT_COLOUR);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Replaces anything but ASCII letters, digits, `.` and `-` with `-`, so ids
/// can be joined with `_` into file names.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

/// `<patient>_<track>_<timepoint>_<series>_<reader>.png`
pub fn sheet_file_name(patient: &str, track: &str, timepoint: &str, series: &str, reader: &str) -> String {
    [patient, track, timepoint, series, reader].map(sanitize_id).join("_") + ".png"
}

/// Renders one triaxial view per (track, observation), centred on the
/// observation's own centroid in its own series. Observations whose volume
/// is unavailable are skipped with a warning. Returns the written paths.
pub fn render_track_sheet<'v>(
    registry: &TrackRegistry,
    volume_of: impl Fn(&str, &str) -> Option<&'v Volume>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for track in registry.tracks() {
        for o in &track.observations {
            let a = &o.annotation;
            let Some(volume) = volume_of(&a.timepoint_id, &a.series_id) else {
                log::warn!(
                    "{} {}: no volume for {}/{}, skipped",
                    registry.patient_id,
                    track.name,
                    a.timepoint_id,
                    a.series_id
                );
                continue;
            };
            let mut req = TriaxialRequest::new(volume, a.centroid);
            req.markers = vec![Marker {
                position: a.centroid,
                label: track.name.to_string(),
                class: a.class,
            }];
            let image = match render_triaxial(&req) {
                Ok(image) => image,
                Err(Error::OutOfBounds { .. }) => {
                    log::warn!(
                        "{} {}: {} lies outside its volume, skipped",
                        registry.patient_id,
                        track.name,
                        a.key()
                    );
                    continue;
                }
                Err(e) => return Err(e),
            };
            let path = out_dir.join(sheet_file_name(
                &registry.patient_id,
                &track.name.to_string(),
                &a.timepoint_id,
                &a.series_id,
                &a.reader_id,
            ));
            image.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}
