//! Placement stencils and electrode map drawings.
//!
//! The forearm is modelled as a truncated cone and unrolled flat: the x axis
//! runs from the wrist (`x = 0`) to the elbow, the y axis around the
//! circumference starting at the ulna reference line (`y = 0`). The local
//! circumference `C(x)` interpolates the measured samples linearly and is
//! held constant beyond the first and last sample.
//!
//! Electrode map coordinates are normalized against the electrode grid
//! extent, with half a pitch of padding on each side:
//! `u = (x - x_min + s/2) / (x_max - x_min + s)` and likewise for `v`, where
//! `s` is the manifest's inter-electrode spacing. A hole lands at
//! `x = u * forearm_length`, `y = v * C(x)`. For a full ring of `n`
//! electrodes at pitch `s` this puts neighbouring holes `C / n` apart.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::{ElectrodeId, Error, Result};

pub const PAGE_MARGIN_MM: f64 = 10.0;
const NOTCH_HALF_WIDTH_MM: f64 = 3.0;
const NOTCH_DEPTH_MM: f64 = 4.0;
const LABEL_SIZE_MM: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircumferenceSample {
    pub distance_from_wrist_mm: f64,
    pub circumference_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMeasurements {
    pub forearm_length_mm: f64,
    pub circumference_samples: Vec<CircumferenceSample>,
}

impl ArmMeasurements {
    /// Constant circumference along the whole forearm.
    pub fn cylinder(forearm_length_mm: f64, circumference_mm: f64) -> Self {
        Self {
            forearm_length_mm,
            circumference_samples: vec![
                CircumferenceSample {
                    distance_from_wrist_mm: 0.0,
                    circumference_mm,
                },
                CircumferenceSample {
                    distance_from_wrist_mm: forearm_length_mm,
                    circumference_mm,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forearm_length_mm.is_finite() && self.forearm_length_mm > 0.0) {
            return Err(Error::invalid("forearm_length_mm", "must be positive"));
        }
        if self.circumference_samples.len() < 2 {
            return Err(Error::invalid("circumference_samples", "need at least 2 samples"));
        }
        let mut previous = f64::NEG_INFINITY;
        for (i, s) in self.circumference_samples.iter().enumerate() {
            let d = s.distance_from_wrist_mm;
            if !(d.is_finite() && d >= 0.0 && d <= self.forearm_length_mm) {
                return Err(Error::invalid(
                    format!("circumference_samples[{i}].distance_from_wrist_mm"),
                    "must lie within the forearm length",
                ));
            }
            if d <= previous {
                return Err(Error::invalid(
                    format!("circumference_samples[{i}].distance_from_wrist_mm"),
                    "distances must be strictly increasing",
                ));
            }
            if !(s.circumference_mm.is_finite() && s.circumference_mm > 0.0) {
                return Err(Error::invalid(
                    format!("circumference_samples[{i}].circumference_mm"),
                    "must be positive",
                ));
            }
            previous = d;
        }
        Ok(())
    }

    /// Circumference at `distance` mm from the wrist.
    pub fn circumference_at(&self, distance: f64) -> f64 {
        let s = &self.circumference_samples;
        let first = s[0];
        let last = s[s.len() - 1];
        if distance <= first.distance_from_wrist_mm {
            return first.circumference_mm;
        }
        if distance >= last.distance_from_wrist_mm {
            return last.circumference_mm;
        }
        let i = s.partition_point(|p| p.distance_from_wrist_mm <= distance);
        let (a, b) = (s[i - 1], s[i]);
        let t = (distance - a.distance_from_wrist_mm) / (b.distance_from_wrist_mm - a.distance_from_wrist_mm);
        a.circumference_mm + t * (b.circumference_mm - a.circumference_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub electrode: ElectrodeId,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilSpec {
    pub measurements: ArmMeasurements,
    pub holes: Vec<Hole>,
    pub hole_diameter_mm: f64,
    pub page_width_mm: f64,
    pub page_height_mm: f64,
}

/// Normalized `(u, v)` of an electrode on the manifest's map.
pub fn normalized_position(manifest: &DatasetManifest, electrode: ElectrodeId) -> Result<(f64, f64)> {
    let site = manifest
        .electrode(electrode)
        .ok_or(Error::UnknownElectrode(electrode))?;
    let s = manifest.inter_electrode_spacing_mm;
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for e in &manifest.electrodes {
        x_min = x_min.min(e.x_mm);
        x_max = x_max.max(e.x_mm);
        y_min = y_min.min(e.y_mm);
        y_max = y_max.max(e.y_mm);
    }
    let u = (site.x_mm - x_min + s / 2.0) / (x_max - x_min + s);
    let v = (site.y_mm - y_min + s / 2.0) / (y_max - y_min + s);
    Ok((u, v))
}

/// Places `layout` on the unrolled forearm.
pub fn build_stencil(layout: &[ElectrodeId], manifest: &DatasetManifest, measurements: &ArmMeasurements) -> Result<StencilSpec> {
    if layout.is_empty() {
        return Err(Error::invalid("layout", "must not be empty"));
    }
    measurements.validate()?;
    let mut seen = std::collections::HashSet::new();
    let length = measurements.forearm_length_mm;
    let radius = manifest.electrode_diameter_mm / 2.0;
    let mut holes = Vec::with_capacity(layout.len());
    for (i, &id) in layout.iter().enumerate() {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("layout[{i}]"), format!("electrode {id} listed twice")));
        }
        let (u, v) = normalized_position(manifest, id)?;
        let x = u * length;
        let c = measurements.circumference_at(x);
        let y = v * c;
        if x - radius < 0.0 || x + radius > length || y - radius < 0.0 || y + radius > c {
            return Err(Error::invalid(
                format!("layout[{i}]"),
                format!("electrode {id} falls outside the forearm outline"),
            ));
        }
        holes.push(Hole {
            electrode: id,
            x_mm: x,
            y_mm: y,
        });
    }
    let max_c = measurements
        .circumference_samples
        .iter()
        .map(|s| s.circumference_mm)
        .fold(0.0, f64::max);
    Ok(StencilSpec {
        measurements: measurements.clone(),
        holes,
        hole_diameter_mm: manifest.electrode_diameter_mm,
        page_width_mm: length + 2.0 * PAGE_MARGIN_MM,
        page_height_mm: max_c + 2.0 * PAGE_MARGIN_MM,
    })
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        v.to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG in millimetres: outline, wrist line, ulna notch, one
/// circle and one id label per hole.
pub fn render_svg(stencil: &StencilSpec) -> String {
    let m = &stencil.measurements;
    let length = m.forearm_length_mm;
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}mm" height="{h}mm" viewBox="0 0 {w} {h}">"#,
        w = num(stencil.page_width_mm),
        h = num(stencil.page_height_mm)
    );
    let _ = writeln!(out, r#"<g transform="translate({0},{0})">"#, num(PAGE_MARGIN_MM));

    let mut outline = format!("M0,0 L{},0", num(length));
    let mut bottom: Vec<f64> = m
        .circumference_samples
        .iter()
        .map(|s| s.distance_from_wrist_mm)
        .filter(|&d| d > 0.0 && d < length)
        .collect();
    bottom.push(length);
    bottom.insert(0, 0.0);
    for &d in bottom.iter().rev() {
        let _ = write!(outline, " L{},{}", num(d), num(m.circumference_at(d)));
    }
    outline.push_str(" Z");
    let _ = writeln!(
        out,
        r#"<path id="outline" d="{outline}" fill="none" stroke="black" stroke-width="0.3"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line id="wrist-line" x1="0" y1="0" x2="0" y2="{}" stroke="red" stroke-width="0.6"/>"#,
        num(m.circumference_at(0.0))
    );
    let mid = length / 2.0;
    let _ = writeln!(
        out,
        r#"<path id="ulna-notch" d="M{},0 L{},{} L{},0 Z" fill="red"/>"#,
        num(mid - NOTCH_HALF_WIDTH_MM),
        num(mid),
        num(NOTCH_DEPTH_MM),
        num(mid + NOTCH_HALF_WIDTH_MM)
    );
    let r = stencil.hole_diameter_mm / 2.0;
    for h in &stencil.holes {
        let _ = writeln!(
            out,
            r#"<circle id="hole-{id}" class="hole" cx="{x}" cy="{y}" r="{r}" fill="none" stroke="black" stroke-width="0.2"/>"#,
            id = h.electrode,
            x = num(h.x_mm),
            y = num(h.y_mm),
            r = num(r)
        );
        let _ = writeln!(
            out,
            r#"<text class="label" x="{x}" y="{y}" font-size="{s}" text-anchor="start">{id}</text>"#,
            x = num(h.x_mm + r + 0.5),
            y = num(h.y_mm + LABEL_SIZE_MM / 2.0),
            s = num(LABEL_SIZE_MM),
            id = h.electrode
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Builds and renders a stencil for `layout`.
pub fn generate_stencil(layout: &[ElectrodeId], manifest: &DatasetManifest, measurements: &ArmMeasurements) -> Result<String> {
    Ok(render_svg(&build_stencil(layout, manifest, measurements)?))
}

/// Map of every electrode in manifest coordinates. Each electrode is a circle
/// with element id `e<ID>` and a `data-electrode-id` attribute, so a client
/// can resolve clicks back to electrode ids.
pub fn electrode_map_svg(manifest: &DatasetManifest) -> String {
    let r = manifest.electrode_diameter_mm / 2.0;
    let pad = manifest.inter_electrode_spacing_mm.max(r * 2.0);
    let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for e in &manifest.electrodes {
        x_min = x_min.min(e.x_mm);
        x_max = x_max.max(e.x_mm);
        y_min = y_min.min(e.y_mm);
        y_max = y_max.max(e.y_mm);
    }
    let (ox, oy) = (x_min - pad, y_min - pad);
    let (w, h) = (x_max - x_min + 2.0 * pad, y_max - y_min + 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}mm" height="{h}mm" viewBox="{ox} {oy} {w} {h}">"#,
        w = num(w),
        h = num(h),
        ox = num(ox),
        oy = num(oy)
    );
    let _ = writeln!(out, "<title>{}</title>", escape(&manifest.name));
    let mut sites: Vec<_> = manifest.electrodes.iter().collect();
    sites.sort_by_key(|e| e.id);
    for e in sites {
        let label = e
            .muscle_label
            .as_deref()
            .map(|m| format!(r#" data-muscle="{}""#, escape(m)))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            r#"<circle id="e{id}" class="electrode" data-electrode-id="{id}"{label} cx="{x}" cy="{y}" r="{r}"/>"#,
            id = e.id,
            x = num(e.x_mm),
            y = num(e.y_mm),
            r = num(r)
        );
        let _ = writeln!(
            out,
            r#"<text class="electrode-label" x="{x}" y="{y}" font-size="{s}" text-anchor="middle" pointer-events="none">{id}</text>"#,
            x = num(e.x_mm),
            y = num(e.y_mm + r * 0.4),
            s = num(r),
            id = e.id
        );
    }
    out.push_str("</svg>\n");
    out
}
