//! Cell state and the execution of one sampling cycle.
//!
//! [`CellWorld`] owns the scene, the actuators, the controller state
//! machine, the simulation clock and the per-replicate random streams.
//! Detection, outcome and sensor draws come from independent seeded
//! streams so that a replayed detection log leaves the outcome stream
//! untouched and reproduces a live run exactly.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::actuation::trace::CommandTrace;
use crate::actuation::{achieved_penetration, Conveyor, GraspArm, Manipulator, ServoPair};
use crate::config::ExperimentConfig;
use crate::controller::{
    plan_waypoints, CycleEvent, CycleFsm, CycleOutcome, CycleReport, CycleState, FtaCard,
    PhaseDurations, WaypointPlan,
};
use crate::geometry::transform_point;
use crate::outcome::{
    core_length, deposition, detachment, sample_localization_error, DepositionOutcome,
};
use crate::perception::log::{DetectionLog, DetectionLogWriter};
use crate::perception::{
    crop_to_tuber, detect, gate_conveyor, localize_site, select_site, Detection, DetectionClass,
    DetectorKind,
};
use crate::scene::render::depth_at_pixel;
use crate::scene::{project_scene, radial_offset, spawn_batch, CameraPose, Scene, SiteKind};
use crate::{CameraPoint, EffectorPoint, PixelPoint, Real};

/// Where frame detections come from.
#[derive(Debug, Clone)]
pub enum DetectorSource {
    /// The statistical detector models run on scene ground truth.
    Simulated,
    /// A recorded detection log keyed by the global frame counter.
    Replay(DetectionLog),
}

/// The full simulated cell for one replicate.
#[derive(Debug)]
pub struct CellWorld {
    pub cfg: ExperimentConfig,
    pub scene: Scene,
    pub conveyor: Conveyor,
    pub manipulator: Manipulator,
    pub arm: GraspArm,
    pub servos: ServoPair,
    pub card: FtaCard,
    pub fsm: CycleFsm,
    pub clock_s: Real,
    pub frame_count: u64,
    /// Tuber detection stays masked until this instant after a resume.
    pub detection_masked_until_s: Real,
    /// Residual tissue blocks the punch until purged.
    pub punch_blocked: bool,
    pub cards_used: u32,
    /// Tubers with a final report.
    pub sampled: BTreeSet<u32>,
    detector: DetectorSource,
    pub log_writer: Option<DetectionLogWriter>,
    pub trace: CommandTrace,
    rng_detect: ChaCha8Rng,
    rng_outcome: ChaCha8Rng,
    rng_sensor: ChaCha8Rng,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CellWorld {
    pub fn new(
        cfg: &ExperimentConfig,
        replicate: usize,
        detector: DetectorSource,
        record_detections: bool,
        trace_commands: bool,
    ) -> Self {
        let rep = replicate as u64;
        let tubers = spawn_batch(cfg.seed.wrapping_add(rep), cfg.batch_size, &cfg.tubers);
        let scene = Scene::new(
            CameraPose {
                height_mm: cfg.cell.camera_height_mm,
            },
            cfg.cell.spawn_y_mm,
            tubers,
        );
        Self {
            scene,
            conveyor: Conveyor::default(),
            manipulator: Manipulator::new(&cfg.cell.manipulator),
            arm: GraspArm::new(cfg.cell.grasp),
            servos: ServoPair::new(cfg.cell.servos),
            card: FtaCard::new(cfg.cell.card),
            fsm: CycleFsm::default(),
            clock_s: 0.0,
            frame_count: 0,
            detection_masked_until_s: 0.0,
            punch_blocked: false,
            cards_used: 1,
            sampled: BTreeSet::new(),
            detector,
            log_writer: record_detections.then(DetectionLogWriter::new),
            trace: CommandTrace::new(trace_commands),
            rng_detect: stream_rng(cfg.seed, rep * 4 + 1),
            rng_outcome: stream_rng(cfg.seed, rep * 4 + 2),
            rng_sensor: stream_rng(cfg.seed, rep * 4 + 3),
            cfg: cfg.clone(),
        }
    }

    /// Advances one camera frame: the clock ticks, the belt moves if
    /// running, and an expired resume delay re-enables detection.
    pub fn tick_frame(&mut self) {
        let dt = 1.0 / self.cfg.cell.fps;
        self.clock_s += dt;
        let moved = self.conveyor.advance(dt);
        if moved > 0.0 {
            self.scene.advance_mm(moved);
        }
        if self.fsm.state() == CycleState::ResumeDelay
            && self.clock_s >= self.detection_masked_until_s
        {
            self.fire_event(CycleEvent::DelayElapsed);
        }
    }

    pub fn detection_active(&self) -> bool {
        self.fsm.state() == CycleState::ConveyorRunning
            && self.clock_s >= self.detection_masked_until_s
    }

    /// Runs one detector frame (simulated or replayed) and records it to
    /// the detection log when enabled.
    pub fn detect_frame(&mut self, kind: DetectorKind) -> Vec<Detection> {
        self.frame_count += 1;
        let dets = match &self.detector {
            DetectorSource::Simulated => {
                let profile = match kind {
                    DetectorKind::Tuber => self.cfg.detectors.tuber,
                    DetectorKind::Site => self.cfg.detectors.site,
                };
                let gt = project_scene(&self.scene, &self.cfg.camera);
                detect(&gt, &profile, kind, &mut self.rng_detect)
            }
            DetectorSource::Replay(log) => log
                .get(&self.frame_count)
                .cloned()
                .unwrap_or_default()
                .into_iter()
                .filter(|d| match kind {
                    DetectorKind::Tuber => d.class == DetectionClass::Tuber,
                    DetectorKind::Site => d.class != DetectionClass::Tuber,
                })
                .collect(),
        };
        if let Some(w) = &mut self.log_writer {
            w.record(self.frame_count, &dets);
        }
        dets
    }

    /// Depth observed at a pixel, with the configured hole probability.
    fn depth_probe(&mut self, pixel: &PixelPoint) -> Option<Real> {
        let p = self.cfg.cell.depth_hole_prob;
        if p > 0.0 && self.rng_sensor.random_range(0.0..1.0) < p {
            return None;
        }
        Some(depth_at_pixel(&self.scene, &self.cfg.camera, pixel))
    }

    /// Restarts the belt; tuber detection is re-enabled `delay` later,
    /// by which time the sampled tuber has cleared the gate band.
    pub fn resume_conveyor(&mut self, delay_s: Real) {
        self.conveyor.run();
        self.detection_masked_until_s = self.clock_s + delay_s;
    }

    /// Operator maintenance: clears residual tissue from the punch.
    pub fn purge_punch(&mut self) {
        self.punch_blocked = false;
    }

    /// Swaps in a fresh deposition card.
    pub fn swap_card(&mut self) {
        self.card = FtaCard::new(self.cfg.cell.card);
        self.cards_used += 1;
    }

    fn spend(&mut self, seconds: Real) {
        self.clock_s += seconds;
    }

    /// Fires a controller event that is known to be legal at the call
    /// site, recording the transition to the command trace.
    pub fn fire_event(&mut self, event: CycleEvent) {
        let next = self
            .fsm
            .fire(event)
            .expect("cycle sequencing stays on defined edges");
        let clock = self.clock_s;
        self.trace.record(clock, "fsm", &format!("{next:?}"), 0.0);
    }

    /// Gating step for one conveyor frame: runs the tuber detector and
    /// returns the gated detection, if any.
    pub fn poll_gate(&mut self) -> Option<Detection> {
        if !self.detection_active() {
            return None;
        }
        let dets = self.detect_frame(DetectorKind::Tuber);
        gate_conveyor(&dets, &self.cfg.cell.gate)
    }

    /// Maps a gated detection back to a scene tuber: by source id for
    /// simulated detections, by nearest projected centroid for replayed
    /// or synthetic ones.
    pub fn resolve_tuber(&self, gated: &Detection) -> Option<u32> {
        if let Some(src) = gated.source {
            return Some(src.tuber_id);
        }
        let gt = project_scene(&self.scene, &self.cfg.camera);
        gt.tubers
            .iter()
            .min_by(|a, b| {
                let da = a.centroid.distance_to(&gated.centroid);
                let db = b.centroid.distance_to(&gated.centroid);
                da.partial_cmp(&db).expect("finite")
            })
            .map(|t| t.tuber_id)
    }
}

fn empty_report(tuber_id: u32) -> CycleReport {
    CycleReport {
        tuber_id,
        outcome: CycleOutcome::NoSiteDetected,
        site_kind: None,
        radial_offset: None,
        lateral_error_mm: None,
        depth_error_mm: None,
        achieved_depth_mm: None,
        depth_capped: None,
        core_length_mm: None,
        grasp_displacement_mm: None,
        slot: None,
        durations: PhaseDurations::default(),
        after_intervention: false,
    }
}

fn traced_move(world: &mut CellWorld, name: &'static str, target: EffectorPoint) -> Real {
    let t = world
        .manipulator
        .move_axes(target)
        .expect("waypoints were validated before execution");
    let target_str = format!("{}/{}/{}", target.x, target.y, target.z);
    let clock = world.clock_s;
    world.trace.record(clock, name, &target_str, t);
    world.spend(t);
    t
}

fn release_and_resume(world: &mut CellWorld) {
    world.arm.release();
    world.fire_event(CycleEvent::TuberReleased);
    world.resume_conveyor(world.cfg.cell.resume_delay_s);
}

/// Runs one sampling cycle for the gated tuber. Expects the state machine
/// in [`CycleState::TuberGated`] with the conveyor halted; returns with
/// the machine in [`CycleState::ResumeDelay`], the effector at home (for
/// any path that moved it) and the step counters recalibrated.
///
/// Failures never escape as errors: they become logged cycle outcomes.
pub fn run_cycle(world: &mut CellWorld, gated: &Detection) -> CycleReport {
    debug_assert_eq!(world.fsm.state(), CycleState::TuberGated);
    let tuber_id = world.resolve_tuber(gated).expect("gated tuber exists");
    let mut report = empty_report(tuber_id);
    let mut durations = PhaseDurations::default();
    let cell = world.cfg.cell.clone();
    let camera = world.cfg.camera;
    let outcome_model = world.cfg.outcome_model;

    world.fire_event(CycleEvent::GraspStarted);

    // Grasp.
    let tuber = world
        .scene
        .tuber(tuber_id)
        .expect("resolved tuber exists")
        .clone();
    let grasp = {
        let arm = &mut world.arm;
        arm.clamp(&tuber, &mut world.rng_outcome)
    };
    match grasp {
        Err(roll) => {
            durations.grasp_s = roll.duration_s;
            world.spend(roll.duration_s);
            report.grasp_displacement_mm = Some(roll.displacement_mm);
            report.outcome = CycleOutcome::GraspFailed;
            report.durations = durations;
            world.fire_event(CycleEvent::GraspRolledAway);
            release_and_resume(world);
            return report;
        }
        Ok(res) => {
            durations.grasp_s = res.duration_s;
            world.spend(res.duration_s);
            report.grasp_displacement_mm = Some(res.displacement_mm);
        }
    }
    world.fire_event(CycleEvent::GraspSecured);

    // Site detection and localization window.
    let mut selected: Option<Detection> = None;
    let mut depths: Vec<Option<Real>> = Vec::with_capacity(cell.vision_frames);
    for _ in 0..cell.vision_frames {
        let dets = world.detect_frame(DetectorKind::Site);
        let cropped = crop_to_tuber(&dets, &gated.bbox);
        if selected.is_none() {
            if let Ok(d) = select_site(&cropped, &gated.centroid) {
                selected = Some(d);
            }
        }
        if let Some(sel) = selected.clone() {
            let probe = world.depth_probe(&sel.centroid);
            depths.push(probe);
        }
    }
    durations.vision_s = cell.vision_frames as Real / cell.fps + cell.vision_overhead_s;
    world.spend(durations.vision_s);

    let fail = |world: &mut CellWorld,
                mut report: CycleReport,
                durations: PhaseDurations,
                outcome: CycleOutcome| {
        report.outcome = outcome;
        report.durations = durations;
        world.fire_event(CycleEvent::NoSiteFound);
        release_and_resume(world);
        report
    };

    let Some(chosen) = selected else {
        return fail(world, report, durations, CycleOutcome::NoSiteDetected);
    };
    let r = radial_offset(&gated.bbox, &chosen.centroid);
    report.site_kind = Some(match chosen.class {
        DetectionClass::Eye | DetectionClass::Tuber => SiteKind::Eye,
        DetectionClass::StolonScar => SiteKind::StolonScar,
    });
    report.radial_offset = Some(r);

    let located = match localize_site(chosen.centroid, &depths, &camera) {
        Ok(p) => p,
        Err(_) => {
            return fail(world, report, durations, CycleOutcome::InsufficientDepth);
        }
    };

    // Inject the calibrated localization error on top of the (noiseless)
    // median localization.
    let err = sample_localization_error(&outcome_model.localization, r, &mut world.rng_outcome);
    let azimuth = world.rng_outcome.random_range(0.0..std::f64::consts::TAU);
    let measured = CameraPoint::new(
        located.x + err.lateral_mm * azimuth.cos(),
        located.y + err.lateral_mm * azimuth.sin(),
        located.z + err.depth_mm,
    );
    report.lateral_error_mm = Some(err.lateral_mm);
    report.depth_error_mm = Some(err.depth_mm);

    let t_ce = cell.hand_eye();
    let site_e = transform_point(&t_ce, measured);
    let true_e = transform_point(&t_ce, located);

    // Reserve a collection circle and plan all waypoints up front.
    let slot = match world.card.next_slot() {
        Ok(s) => s,
        Err(_) => {
            return fail(world, report, durations, CycleOutcome::CardFull);
        }
    };
    let deposit = world.card.deposit_point(slot.0, slot.1);
    let plan: WaypointPlan = match plan_waypoints(site_e, deposit, &cell.punch, &world.manipulator)
    {
        Ok(p) => p,
        Err(_) => {
            world.card.release_pending();
            return fail(world, report, durations, CycleOutcome::OutOfWorkspace);
        }
    };

    world.fire_event(CycleEvent::SiteSelected);

    // Approach and insert.
    durations.approach_insert_s += traced_move(world, "approach_xy", plan.approach_xy);
    world.fire_event(CycleEvent::ApproachComplete);
    durations.approach_insert_s += traced_move(world, "insert", plan.insert);

    let commanded_pen = plan.insert.z - true_e.z;
    let achieved = achieved_penetration(commanded_pen, cell.punch.blade_length_mm);
    let capped = commanded_pen > cell.punch.blade_length_mm + 1e-12;
    report.achieved_depth_mm = Some(achieved);
    report.depth_capped = Some(capped);
    if err.depth_mm > outcome_model.probabilities.hub_error_threshold_mm {
        // The hub stalled against the surface: the z ledger silently loses
        // the overshoot until the next recalibration at home.
        world
            .manipulator
            .inject_z_step_error(commanded_pen - achieved);
    }
    world.fire_event(CycleEvent::InsertComplete);

    // Tilt for detachment.
    let t = world.servos.tilt_to(cell.servos.tilt_detach_deg);
    world.trace.record(world.clock_s, "tilt", "detach", t);
    durations.servo_s += t;
    world.spend(t);

    let blocked = world.punch_blocked;
    let detached = !blocked
        && detachment(
            achieved,
            world.servos.tilt_angle_deg,
            &outcome_model.probabilities,
            &mut world.rng_outcome,
        );
    if detached {
        report.core_length_mm = Some(core_length(
            &outcome_model.core_length,
            achieved,
            r,
            &mut world.rng_outcome,
        ));
    }
    world.fire_event(if detached {
        CycleEvent::TiltComplete
    } else {
        CycleEvent::DetachFailed
    });

    // Retract (the transport phase starts here).
    durations.transport_s += traced_move(world, "retract", plan.retract);

    if !detached {
        world.card.release_pending();
        world.fire_event(CycleEvent::RetractAborted);
        let t = world.servos.tilt_to(0.0);
        durations.servo_s += t;
        world.spend(t);
        durations.return_s += traced_move(world, "home", plan.home);
        world.fire_event(CycleEvent::HomeReached);
        world
            .manipulator
            .recalibrate_steps()
            .expect("home reached before recalibration");
        report.outcome = if blocked {
            CycleOutcome::PunchBlocked
        } else {
            CycleOutcome::DetachmentFailed
        };
        report.durations = durations;
        release_and_resume(world);
        return report;
    }

    world.fire_event(CycleEvent::RetractComplete);
    durations.transport_s += traced_move(world, "to_card", plan.deposit);
    world.fire_event(CycleEvent::ArrivedAtCard);

    // Upright, eject, reset.
    let t = world.servos.tilt_to(0.0);
    durations.servo_s += t;
    world.spend(t);
    let t = world.servos.actuate_piston(true);
    durations.servo_s += t;
    world.spend(t);
    let t = world.servos.actuate_piston(false);
    durations.servo_s += t;
    world.spend(t);
    world.trace.record(world.clock_s, "eject", "piston", 1.2);

    let fate = deposition(
        err.depth_mm,
        world.manipulator.z_step_error_mm(),
        &outcome_model.probabilities,
        &mut world.rng_outcome,
    );
    report.outcome = match fate {
        DepositionOutcome::Deposited => {
            world.card.mark_deposited();
            report.slot = Some(slot);
            CycleOutcome::Deposited
        }
        DepositionOutcome::DroppedInTransit => {
            world.card.release_pending();
            CycleOutcome::DroppedInTransit
        }
        DepositionOutcome::AdheredToPiston => {
            world.card.release_pending();
            world.punch_blocked = true;
            CycleOutcome::AdheredToPiston
        }
        DepositionOutcome::HubMisplacement => {
            world.card.release_pending();
            CycleOutcome::HubMisplaced
        }
    };
    world.fire_event(CycleEvent::EjectComplete);

    // Return home, recalibrate, release, resume.
    durations.return_s += traced_move(world, "home", plan.home);
    world.fire_event(CycleEvent::HomeReached);
    world
        .manipulator
        .recalibrate_steps()
        .expect("home reached before recalibration");
    report.durations = durations;
    release_and_resume(world);
    report
}
