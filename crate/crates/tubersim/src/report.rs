//! Per-cycle records and the aggregated metrics report.
//!
//! Records are line-delimited JSON, one cycle attempt per line, in
//! execution order. The summary is a pure, deterministic reduction of the
//! records: identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{CycleOutcome, CycleReport};
use crate::Real;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write report")]
    Io(#[from] std::io::Error),
    #[error("record stream malformed")]
    Parse(#[from] serde_json::Error),
}

/// Version tag carried by every record line.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

fn record_schema_version() -> u32 {
    RECORD_SCHEMA_VERSION
}

/// One line of the records file: a cycle attempt in context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Record-format version.
    #[serde(default = "record_schema_version")]
    pub schema: u32,
    pub replicate: usize,
    /// Attempt index within the replicate, in execution order.
    pub cycle_index: usize,
    /// 1 for the first attempt on a tuber, 2 after an intervention.
    pub attempt: u8,
    #[serde(flatten)]
    pub report: CycleReport,
}

/// Distributional summary of a nonnegative error sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean_mm: Real,
    pub q1_mm: Real,
    pub median_mm: Real,
    pub q3_mm: Real,
    pub frac_below_1mm: Real,
    pub frac_above_3mm: Real,
}

impl ErrorStats {
    fn from_samples(mut values: Vec<Real>) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let n = values.len();
        let quantile = |q: Real| -> Real {
            let pos = q * (n - 1) as Real;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as Real;
            values[lo] * (1.0 - frac) + values[hi] * frac
        };
        Self {
            count: n,
            mean_mm: values.iter().sum::<Real>() / n as Real,
            q1_mm: quantile(0.25),
            median_mm: quantile(0.5),
            q3_mm: quantile(0.75),
            frac_below_1mm: values.iter().filter(|&&v| v < 1.0).count() as Real / n as Real,
            frac_above_3mm: values.iter().filter(|&&v| v > 3.0).count() as Real / n as Real,
        }
    }
}

/// Penetration-depth behavior.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthStats {
    pub attempts: usize,
    /// Fraction of attempts the hub capped at the blade length.
    pub capped_fraction: Real,
    /// Mean shortfall from the intended depth among uncapped attempts, mm.
    pub mean_shortfall_uncapped_mm: Real,
    /// Fraction of uncapped attempts short by more than 3 mm.
    pub frac_shortfall_above_3mm: Real,
}

/// Extracted-core length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoreStats {
    pub count: usize,
    pub mean_mm: Real,
    pub min_mm: Real,
    pub max_mm: Real,
    pub frac_ge_6mm: Real,
    pub frac_4_to_6mm: Real,
    pub frac_lt_4mm: Real,
}

/// Mean per-phase durations over completed (deposit-reaching) cycles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseStats {
    pub cycles: usize,
    pub vision_s: Real,
    pub grasp_s: Real,
    pub approach_insert_s: Real,
    pub transport_s: Real,
    pub return_s: Real,
    pub servo_s: Real,
    pub manipulation_s: Real,
    pub total_s: Real,
}

/// The aggregated experiment metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub batch_size: usize,
    pub replicates: usize,
    /// Final outcome counts, one per tuber (retries collapse onto the
    /// final attempt).
    pub outcome_counts: BTreeMap<CycleOutcome, usize>,
    pub tubers_total: usize,
    pub deposit_success_rate: Real,
    /// Fraction of tubers secured on the first grasp attempt.
    pub grasp_first_attempt_rate: Real,
    /// Operator interventions (failed grasps that were retried).
    pub interventions: usize,
    /// Lateral localization error over all sampling attempts.
    pub lateral: ErrorStats,
    /// Lateral error restricted to successfully deposited cycles.
    pub lateral_deposited_only: ErrorStats,
    pub depth: DepthStats,
    pub core: CoreStats,
    pub phases: PhaseStats,
    pub cards_used: usize,
    pub no_site_skips: usize,
}

impl MetricsReport {
    /// Deterministic reduction of the record stream.
    pub fn from_records(records: &[CycleRecord], batch_size: usize, replicates: usize) -> Self {
        // Final attempt per (replicate, tuber).
        let mut final_outcomes: BTreeMap<(usize, u32), &CycleRecord> = BTreeMap::new();
        let mut first_attempt_secured = 0usize;
        let mut interventions = 0usize;
        for rec in records {
            if rec.attempt == 1 && rec.report.outcome != CycleOutcome::GraspFailed {
                first_attempt_secured += 1;
            }
            if rec.attempt > 1 {
                interventions += 1;
            }
            final_outcomes.insert((rec.replicate, rec.report.tuber_id), rec);
        }

        let mut outcome_counts: BTreeMap<CycleOutcome, usize> = BTreeMap::new();
        for rec in final_outcomes.values() {
            *outcome_counts.entry(rec.report.outcome).or_default() += 1;
        }
        let tubers_total = final_outcomes.len();
        let deposits = outcome_counts
            .get(&CycleOutcome::Deposited)
            .copied()
            .unwrap_or(0);

        let lateral_all: Vec<Real> = records
            .iter()
            .filter_map(|r| r.report.lateral_error_mm)
            .collect();
        let lateral_dep: Vec<Real> = records
            .iter()
            .filter(|r| r.report.outcome == CycleOutcome::Deposited)
            .filter_map(|r| r.report.lateral_error_mm)
            .collect();

        let mut capped = 0usize;
        let mut attempts = 0usize;
        let mut shortfalls: Vec<Real> = Vec::new();
        let mut intended: Real = 0.0;
        for rec in records {
            let (Some(achieved), Some(was_capped)) =
                (rec.report.achieved_depth_mm, rec.report.depth_capped)
            else {
                continue;
            };
            attempts += 1;
            intended = intended.max(achieved);
            if was_capped {
                capped += 1;
            } else {
                shortfalls.push(achieved);
            }
        }
        // Shortfall is measured against the intended depth; capped
        // attempts hit it exactly and are excluded.
        let shortfalls: Vec<Real> = shortfalls.iter().map(|a| intended - a).collect();
        let depth = DepthStats {
            attempts,
            capped_fraction: if attempts > 0 {
                capped as Real / attempts as Real
            } else {
                0.0
            },
            mean_shortfall_uncapped_mm: if shortfalls.is_empty() {
                0.0
            } else {
                shortfalls.iter().sum::<Real>() / shortfalls.len() as Real
            },
            frac_shortfall_above_3mm: if shortfalls.is_empty() {
                0.0
            } else {
                shortfalls.iter().filter(|&&s| s > 3.0).count() as Real / shortfalls.len() as Real
            },
        };

        let cores: Vec<Real> = records
            .iter()
            .filter_map(|r| r.report.core_length_mm)
            .collect();
        let core = if cores.is_empty() {
            CoreStats::default()
        } else {
            let n = cores.len() as Real;
            CoreStats {
                count: cores.len(),
                mean_mm: cores.iter().sum::<Real>() / n,
                min_mm: cores.iter().cloned().fold(Real::INFINITY, Real::min),
                max_mm: cores.iter().cloned().fold(Real::NEG_INFINITY, Real::max),
                frac_ge_6mm: cores.iter().filter(|&&c| c >= 6.0).count() as Real / n,
                frac_4_to_6mm: cores.iter().filter(|&&c| (4.0..6.0).contains(&c)).count() as Real
                    / n,
                frac_lt_4mm: cores.iter().filter(|&&c| c < 4.0).count() as Real / n,
            }
        };

        let complete: Vec<&CycleRecord> = records
            .iter()
            .filter(|r| {
                matches!(
                    r.report.outcome,
                    CycleOutcome::Deposited
                        | CycleOutcome::DroppedInTransit
                        | CycleOutcome::AdheredToPiston
                        | CycleOutcome::HubMisplaced
                )
            })
            .collect();
        let phases = if complete.is_empty() {
            PhaseStats::default()
        } else {
            let n = complete.len() as Real;
            let sum = |f: fn(&CycleRecord) -> Real| -> Real {
                complete.iter().map(|r| f(r)).sum::<Real>() / n
            };
            PhaseStats {
                cycles: complete.len(),
                vision_s: sum(|r| r.report.durations.vision_s),
                grasp_s: sum(|r| r.report.durations.grasp_s),
                approach_insert_s: sum(|r| r.report.durations.approach_insert_s),
                transport_s: sum(|r| r.report.durations.transport_s),
                return_s: sum(|r| r.report.durations.return_s),
                servo_s: sum(|r| r.report.durations.servo_s),
                manipulation_s: sum(|r| r.report.durations.manipulation_s()),
                total_s: sum(|r| r.report.durations.total_s()),
            }
        };

        let no_site_skips = records
            .iter()
            .filter(|r| r.report.outcome == CycleOutcome::NoSiteDetected)
            .count();

        Self {
            batch_size,
            replicates,
            outcome_counts,
            tubers_total,
            deposit_success_rate: if tubers_total > 0 {
                deposits as Real / tubers_total as Real
            } else {
                0.0
            },
            grasp_first_attempt_rate: if tubers_total > 0 {
                first_attempt_secured as Real / tubers_total as Real
            } else {
                0.0
            },
            interventions,
            lateral: ErrorStats::from_samples(lateral_all),
            lateral_deposited_only: ErrorStats::from_samples(lateral_dep),
            depth,
            core,
            phases,
            cards_used: 0,
            no_site_skips,
        }
    }

    /// Plain-text summary table for the CLI.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write;
        let _ = writeln!(
            s,
            "tubers: {} ({} x {} replicates)",
            self.tubers_total, self.batch_size, self.replicates
        );
        let _ = writeln!(
            s,
            "deposit success: {:.2}%",
            100.0 * self.deposit_success_rate
        );
        let _ = writeln!(
            s,
            "grasp first-attempt rate: {:.2}%  (interventions: {})",
            100.0 * self.grasp_first_attempt_rate,
            self.interventions
        );
        let _ = writeln!(s, "outcomes:");
        for (outcome, count) in &self.outcome_counts {
            let _ = writeln!(s, "  {outcome:?}: {count}");
        }
        let _ = writeln!(
            s,
            "lateral error: mean {:.3} mm, <1 mm {:.1}%, >3 mm {:.1}% (n = {})",
            self.lateral.mean_mm,
            100.0 * self.lateral.frac_below_1mm,
            100.0 * self.lateral.frac_above_3mm,
            self.lateral.count
        );
        let _ = writeln!(
            s,
            "depth: capped {:.1}%, mean shortfall (uncapped) {:.3} mm",
            100.0 * self.depth.capped_fraction,
            self.depth.mean_shortfall_uncapped_mm
        );
        let _ = writeln!(
            s,
            "core length: mean {:.3} mm in [{:.2}, {:.2}], bands >=6 / 4-6 / <4 mm: {:.1}% / {:.1}% / {:.1}%",
            self.core.mean_mm,
            self.core.min_mm,
            self.core.max_mm,
            100.0 * self.core.frac_ge_6mm,
            100.0 * self.core.frac_4_to_6mm,
            100.0 * self.core.frac_lt_4mm
        );
        let _ = writeln!(
            s,
            "phase means [s]: vision {:.3}, grasp {:.3}, manipulation {:.3} ({:.3} + {:.3} + {:.3}), servos {:.3}, total {:.3}",
            self.phases.vision_s,
            self.phases.grasp_s,
            self.phases.manipulation_s,
            self.phases.approach_insert_s,
            self.phases.transport_s,
            self.phases.return_s,
            self.phases.servo_s,
            self.phases.total_s
        );
        let _ = writeln!(s, "cards used: {}", self.cards_used);
        s
    }
}

/// Serializes records as JSON lines in execution order.
pub fn records_to_jsonl(records: &[CycleRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[CycleRecord]) -> Result<(), ReportError> {
    fs::write(path, records_to_jsonl(records))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<CycleRecord>, ReportError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(ReportError::from))
        .collect()
}

pub fn write_summary(path: &Path, report: &MetricsReport) -> Result<(), ReportError> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::PhaseDurations;

    fn record(
        replicate: usize,
        cycle_index: usize,
        tuber_id: u32,
        attempt: u8,
        outcome: CycleOutcome,
    ) -> CycleRecord {
        CycleRecord {
            schema: RECORD_SCHEMA_VERSION,
            replicate,
            cycle_index,
            attempt,
            report: CycleReport {
                tuber_id,
                outcome,
                site_kind: None,
                radial_offset: None,
                lateral_error_mm: Some(1.5),
                depth_error_mm: Some(-1.0),
                achieved_depth_mm: Some(6.0),
                depth_capped: Some(false),
                core_length_mm: outcome.is_success().then_some(5.5),
                grasp_displacement_mm: Some(10.4),
                slot: None,
                durations: PhaseDurations::default(),
                after_intervention: attempt > 1,
            },
        }
    }

    #[test]
    fn counts_reconcile_with_batch() {
        let records = vec![
            record(0, 0, 0, 1, CycleOutcome::Deposited),
            record(0, 1, 1, 1, CycleOutcome::GraspFailed),
            record(0, 2, 1, 2, CycleOutcome::Deposited),
            record(0, 3, 2, 1, CycleOutcome::DetachmentFailed),
        ];
        let report = MetricsReport::from_records(&records, 3, 1);
        assert_eq!(report.tubers_total, 3);
        let total: usize = report.outcome_counts.values().sum();
        assert_eq!(total, 3);
        assert_eq!(report.outcome_counts[&CycleOutcome::Deposited], 2);
        assert_eq!(report.outcome_counts[&CycleOutcome::DetachmentFailed], 1);
        // The grasp failure was retried: the final outcome replaced it.
        assert!(!report
            .outcome_counts
            .contains_key(&CycleOutcome::GraspFailed));
        assert_eq!(report.interventions, 1);
        assert!((report.grasp_first_attempt_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.deposit_success_rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let records = vec![
            record(0, 0, 0, 1, CycleOutcome::Deposited),
            record(1, 0, 0, 1, CycleOutcome::AdheredToPiston),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn error_stats_quartiles() {
        let stats = ErrorStats::from_samples(vec![4.0, 1.0, 2.0, 3.0, 5.0]);
        assert_eq!(stats.median_mm, 3.0);
        assert_eq!(stats.q1_mm, 2.0);
        assert_eq!(stats.q3_mm, 4.0);
        assert_eq!(stats.mean_mm, 3.0);
        assert!((stats.frac_below_1mm - 0.0).abs() < 1e-12);
        assert!((stats.frac_above_3mm - 0.4).abs() < 1e-12);
    }
}
