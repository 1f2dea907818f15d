//! Line-delimited detection log.
//!
//! One detection per line, whitespace separated:
//!
//! ```text
//! <frame> <class> <u_min> <v_min> <u_max> <v_max> <confidence> [<source>]
//! ```
//!
//! `frame` is the global frame counter of the run, `class` is one of
//! `tuber`, `eye` or `stolon_scar`, and the optional trailing `source`
//! field (`t<id>` or `t<id>.s<index>`) is simulation bookkeeping that real
//! recordings simply omit. Lines starting with `#` and blank lines are
//! ignored. A log written by [`DetectionLogWriter`] and fed back through
//! [`read_log`] reproduces the simulated detections exactly, which lets the
//! pipeline run on recorded detections instead of the simulated detector.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::perception::{Detection, DetectionClass, DetectionSource};
use crate::scene::BoundingBox;
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum LogFormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Detections grouped by the global frame counter.
pub type DetectionLog = BTreeMap<u64, Vec<Detection>>;

fn class_str(class: DetectionClass) -> &'static str {
    match class {
        DetectionClass::Tuber => "tuber",
        DetectionClass::Eye => "eye",
        DetectionClass::StolonScar => "stolon_scar",
    }
}

fn parse_class(s: &str) -> Option<DetectionClass> {
    match s {
        "tuber" => Some(DetectionClass::Tuber),
        "eye" => Some(DetectionClass::Eye),
        "stolon_scar" => Some(DetectionClass::StolonScar),
        _ => None,
    }
}

fn format_source(source: &DetectionSource) -> String {
    match source.site_index {
        Some(i) => format!("t{}.s{}", source.tuber_id, i),
        None => format!("t{}", source.tuber_id),
    }
}

fn parse_source(s: &str) -> Option<DetectionSource> {
    let rest = s.strip_prefix('t')?;
    match rest.split_once(".s") {
        Some((id, idx)) => Some(DetectionSource {
            tuber_id: id.parse().ok()?,
            site_index: Some(idx.parse().ok()?),
        }),
        None => Some(DetectionSource {
            tuber_id: rest.parse().ok()?,
            site_index: None,
        }),
    }
}

/// Accumulates the detections a run produces, one line per detection.
#[derive(Debug, Default)]
pub struct DetectionLogWriter {
    buffer: String,
}

impl DetectionLogWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, frame: u64, detections: &[Detection]) {
        for d in detections {
            let _ = write!(
                self.buffer,
                "{} {} {} {} {} {} {}",
                frame,
                class_str(d.class),
                d.bbox.u_min,
                d.bbox.v_min,
                d.bbox.u_max,
                d.bbox.v_max,
                d.confidence
            );
            if let Some(source) = &d.source {
                let _ = write!(self.buffer, " {}", format_source(source));
            }
            self.buffer.push('\n');
        }
    }

    pub fn contents(&self) -> &str {
        &self.buffer
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, &self.buffer)
    }
}

/// Parses a detection log; errors name the offending line.
pub fn parse_log(text: &str) -> Result<DetectionLog, LogFormatError> {
    let mut log = DetectionLog::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 && fields.len() != 8 {
            return Err(LogFormatError::Malformed {
                line: line_no,
                message: format!("expected 7 or 8 fields, found {}", fields.len()),
            });
        }
        let malformed = |message: String| LogFormatError::Malformed {
            line: line_no,
            message,
        };
        let frame: u64 = fields[0]
            .parse()
            .map_err(|_| malformed(format!("bad frame index `{}`", fields[0])))?;
        let class = parse_class(fields[1])
            .ok_or_else(|| malformed(format!("unknown class `{}`", fields[1])))?;
        let mut nums = [0.0 as Real; 5];
        for (slot, field) in nums.iter_mut().zip(&fields[2..7]) {
            *slot = field
                .parse()
                .map_err(|_| malformed(format!("bad number `{field}`")))?;
        }
        let [u_min, v_min, u_max, v_max, confidence] = nums;
        if u_min >= u_max || v_min >= v_max {
            return Err(malformed(format!(
                "degenerate bbox ({u_min}, {v_min}, {u_max}, {v_max})"
            )));
        }
        let source = match fields.get(7) {
            Some(s) => Some(parse_source(s).ok_or_else(|| malformed(format!("bad source `{s}`")))?),
            None => None,
        };
        let bbox = BoundingBox {
            u_min,
            v_min,
            u_max,
            v_max,
        };
        log.entry(frame).or_default().push(Detection {
            class,
            centroid: bbox.center(),
            bbox,
            confidence,
            source,
        });
    }
    Ok(log)
}

/// Reads and parses a detection log file.
pub fn read_log(path: &Path) -> Result<DetectionLog, LogFormatError> {
    let text = fs::read_to_string(path).map_err(|e| LogFormatError::Malformed {
        line: 0,
        message: format!("cannot read log: {e}"),
    })?;
    parse_log(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_detection() -> Detection {
        let bbox = BoundingBox {
            u_min: 100.0,
            v_min: 150.25,
            u_max: 160.0,
            v_max: 210.25,
        };
        Detection {
            class: DetectionClass::Eye,
            centroid: bbox.center(),
            bbox,
            confidence: 0.875,
            source: Some(DetectionSource {
                tuber_id: 3,
                site_index: Some(1),
            }),
        }
    }

    #[test]
    fn writer_reader_round_trip() {
        let mut writer = DetectionLogWriter::new();
        let d = sample_detection();
        writer.record(12, std::slice::from_ref(&d));
        let log = parse_log(writer.contents()).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[&12], vec![d]);
    }

    #[test]
    fn empty_log_parses_empty() {
        assert!(parse_log("").unwrap().is_empty());
        assert!(parse_log("# comment only\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_is_named() {
        let text = "1 tuber 0 0 10 10 0.9\n2 tuber not-a-number 0 10 10 0.9\n";
        match parse_log(text) {
            Err(LogFormatError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_bbox() {
        let text = "1 eye 50 50 50 60 0.9\n";
        assert!(parse_log(text).is_err());
    }

    #[test]
    fn source_field_is_optional() {
        let text = "7 stolon_scar 10 20 30 40 0.5\n";
        let log = parse_log(text).unwrap();
        assert_eq!(log[&7][0].source, None);
        assert_eq!(log[&7][0].class, DetectionClass::StolonScar);
    }
}
