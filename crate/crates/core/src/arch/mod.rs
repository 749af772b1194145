//! Architecture files, width/depth scaling, graph construction and QMix
//! surgery.
//!
//! ```
//! use qmix_core::arch::{self, ArchSpec, SurgeryPlan};
//!
//! let spec = arch::resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
//! let base = arch::build_model(&spec, 10, 0).unwrap();
//! let slim = arch::apply_surgery(&base, &SurgeryPlan::final_design()).unwrap();
//! assert_eq!(base.param_count(), 3_012_798);
//! assert!(slim.param_count() < base.param_count());
//! ```

mod format;
mod graph;
mod surgery;

pub use format::{parse_arch, ArchSpec, ArgValue, ModuleKind, Row, Scale, Section, Source, YOLOV8};
pub use graph::{build_model, forward_model, ModelGraph, NodeDump, NodeShapes, Provenance, TapeForward};
pub use surgery::{apply_surgery, SurgeryPlan, SurgeryRecord};

use crate::error::{invalid, Error, Result};

/// Class count used when neither the file nor the caller sets one.
pub const DEFAULT_NC: usize = 10;

/// Rounds `channels` (capped at `max_channels`) times `width` up to a
/// multiple of eight.
pub fn scale_width(channels: usize, width: f64, max_channels: usize) -> usize {
    let scaled = channels.min(max_channels) as f64 * width;
    ((scaled / 8.0).ceil() as usize * 8).max(8)
}

/// `max(round(repeats · depth), 1)`.
pub fn scale_depth(repeats: usize, depth: f64) -> usize {
    ((repeats as f64 * depth).round() as usize).max(1)
}

/// Applies a scale preset to every width and repeat count.
pub fn resolve_scaling(spec: &ArchSpec, preset: &str) -> Result<ArchSpec> {
    if let Some(done) = &spec.resolved {
        return Err(invalid(
            "resolve_scaling",
            format!("specification already resolved with preset `{done}`"),
        ));
    }
    let scale = *spec
        .scales
        .get(preset)
        .ok_or_else(|| Error::UnknownPreset(preset.to_string()))?;
    let mut out = spec.clone();
    for row in &mut out.rows {
        if row.kind.repeatable() {
            row.repeats = scale_depth(row.repeats, scale.depth);
        }
        if row.kind.has_width() {
            if let Some(ArgValue::Int(c)) = row.args.first_mut() {
                *c = scale_width(*c as usize, scale.width, scale.max_channels) as i64;
            }
        }
    }
    out.resolved = Some(preset.to_string());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_rounding() {
        assert_eq!(scale_width(512, 0.25, 1024), 128);
        assert_eq!(scale_width(1024, 0.5, 1024), 512);
        assert_eq!(scale_width(1024, 0.75, 768), 576);
        assert_eq!(scale_width(100, 0.25, 1024), 32);
        assert_eq!(scale_depth(6, 0.33), 2);
        assert_eq!(scale_depth(3, 0.33), 1);
        assert_eq!(scale_depth(1, 0.01), 1);
    }

    #[test]
    fn resolving_twice_is_rejected() {
        let n = resolve_scaling(&ArchSpec::yolov8(), "n").unwrap();
        assert!(resolve_scaling(&n, "n").is_err());
    }
}
