//! The per-cycle finite-state machine and its supporting pieces: waypoint
//! planning, the deposition card, and the cycle report.
//!
//! One sampling cycle runs gate -> grasp -> site detection -> approach ->
//! insert -> tilt/detach -> retract -> transport -> eject -> home ->
//! release -> resume. Failures exit early along defined edges; every cycle
//! ends back in [`CycleState::ConveyorRunning`] with the effector at home
//! and the step counters recalibrated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::Manipulator;
use crate::scene::SiteKind;
use crate::{EffectorPoint, Real};

pub mod cycle;

pub use crate::actuation::HomePose;
pub use cycle::{CellWorld, DetectorSource};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    /// A planned waypoint violates the axis travels; planning is rejected
    /// before any motion starts.
    #[error("waypoint {name} at ({x}, {y}, {z}) mm lies outside the workspace")]
    OutOfWorkspace {
        name: &'static str,
        x: Real,
        y: Real,
        z: Real,
    },
    /// All 25 collection circles are occupied.
    #[error("deposition card full")]
    CardFull,
    /// An event was fired from a state with no edge for it.
    #[error("event {event:?} rejected in state {state:?}")]
    InvalidTransition {
        state: CycleState,
        event: CycleEvent,
    },
}

/// Controller states, one sampling cycle per lap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CycleState {
    ConveyorRunning,
    TuberGated,
    Grasping,
    SiteDetection,
    ApproachXY,
    InsertZ,
    TiltDetach,
    RetractZ,
    TransportToCard,
    UprightAndEject,
    ReturnHome,
    ReleaseTuber,
    ResumeDelay,
}

impl CycleState {
    /// States during which the conveyor is halted: from gating until the
    /// tuber is released. The belt already runs during `ResumeDelay`; only
    /// tuber detection stays masked until the delay expires.
    pub fn conveyor_halted(&self) -> bool {
        !matches!(self, CycleState::ConveyorRunning | CycleState::ResumeDelay)
    }
}

/// Events that drive the cycle state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleEvent {
    TuberGated,
    GraspStarted,
    GraspSecured,
    GraspRolledAway,
    SiteSelected,
    NoSiteFound,
    MotionRefused,
    ApproachComplete,
    InsertComplete,
    TiltComplete,
    DetachFailed,
    RetractComplete,
    RetractAborted,
    ArrivedAtCard,
    EjectComplete,
    HomeReached,
    TuberReleased,
    DelayElapsed,
}

/// The transition table. `None` means the event is rejected in that state.
pub fn transition(state: CycleState, event: CycleEvent) -> Option<CycleState> {
    use CycleEvent as E;
    use CycleState as S;
    Some(match (state, event) {
        (S::ConveyorRunning, E::TuberGated) => S::TuberGated,
        (S::TuberGated, E::GraspStarted) => S::Grasping,
        (S::Grasping, E::GraspSecured) => S::SiteDetection,
        (S::Grasping, E::GraspRolledAway) => S::ReleaseTuber,
        (S::SiteDetection, E::SiteSelected) => S::ApproachXY,
        (S::SiteDetection, E::NoSiteFound) => S::ReleaseTuber,
        (S::SiteDetection, E::MotionRefused) => S::ReleaseTuber,
        (S::ApproachXY, E::ApproachComplete) => S::InsertZ,
        (S::ApproachXY, E::MotionRefused) => S::ReturnHome,
        (S::InsertZ, E::InsertComplete) => S::TiltDetach,
        (S::TiltDetach, E::TiltComplete) => S::RetractZ,
        (S::TiltDetach, E::DetachFailed) => S::RetractZ,
        (S::RetractZ, E::RetractComplete) => S::TransportToCard,
        (S::RetractZ, E::RetractAborted) => S::ReturnHome,
        (S::TransportToCard, E::ArrivedAtCard) => S::UprightAndEject,
        (S::UprightAndEject, E::EjectComplete) => S::ReturnHome,
        (S::ReturnHome, E::HomeReached) => S::ReleaseTuber,
        (S::ReleaseTuber, E::TuberReleased) => S::ResumeDelay,
        (S::ResumeDelay, E::DelayElapsed) => S::ConveyorRunning,
        _ => return None,
    })
}

/// State holder that only moves along the transition table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleFsm {
    state: CycleState,
}

impl Default for CycleFsm {
    fn default() -> Self {
        Self {
            state: CycleState::ConveyorRunning,
        }
    }
}

impl CycleFsm {
    pub fn state(&self) -> CycleState {
        self.state
    }

    /// Fires an event; rejected events leave the state unchanged.
    pub fn fire(&mut self, event: CycleEvent) -> Result<CycleState, ControllerError> {
        match transition(self.state, event) {
            Some(next) => {
                self.state = next;
                Ok(next)
            }
            None => Err(ControllerError::InvalidTransition {
                state: self.state,
                event,
            }),
        }
    }
}

/// Geometry of the deposition card: 25 collection circles in a 5x5 grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardLayout {
    /// Effector-frame center of circle (1, 1), mm.
    pub origin_x_mm: Real,
    pub origin_y_mm: Real,
    /// Center-to-center spacing along rows and columns, mm.
    pub pitch_mm: Real,
    /// Effector-frame z of the circle centers, mm (down-positive).
    pub circle_z_mm: Real,
    /// Release height above a circle center, mm.
    pub deposit_clearance_mm: Real,
}

impl Default for CardLayout {
    fn default() -> Self {
        Self {
            origin_x_mm: -55.0,
            origin_y_mm: -12.0,
            pitch_mm: 15.0,
            circle_z_mm: 92.0,
            deposit_clearance_mm: 10.0,
        }
    }
}

const CARD_ROWS: usize = 5;
const CARD_COLS: usize = 5;
pub const CARD_SLOTS: usize = CARD_ROWS * CARD_COLS;

/// One deposition card with slot occupancy and the in-flight reservation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtaCard {
    pub layout: CardLayout,
    occupied: [bool; CARD_SLOTS],
    pending: Option<usize>,
}

impl FtaCard {
    pub fn new(layout: CardLayout) -> Self {
        Self {
            layout,
            occupied: [false; CARD_SLOTS],
            pending: None,
        }
    }

    /// Circle-center coordinates of slot (n, m), n, m in 1..=5.
    pub fn slot_center(&self, n: u8, m: u8) -> EffectorPoint {
        debug_assert!((1..=5).contains(&n) && (1..=5).contains(&m));
        EffectorPoint::new(
            self.layout.origin_x_mm + Real::from(m - 1) * self.layout.pitch_mm,
            self.layout.origin_y_mm + Real::from(n - 1) * self.layout.pitch_mm,
            self.layout.circle_z_mm,
        )
    }

    /// Release point: the configured clearance above a slot center.
    pub fn deposit_point(&self, n: u8, m: u8) -> EffectorPoint {
        let c = self.slot_center(n, m);
        EffectorPoint::new(c.x, c.y, c.z - self.layout.deposit_clearance_mm)
    }

    /// Reserves the first unoccupied slot in row-major order: (1, 1) ...
    /// (1, 5), (2, 1), ...
    pub fn next_slot(&mut self) -> Result<(u8, u8), ControllerError> {
        let idx = self
            .occupied
            .iter()
            .position(|o| !o)
            .ok_or(ControllerError::CardFull)?;
        self.pending = Some(idx);
        Ok(((idx / CARD_COLS) as u8 + 1, (idx % CARD_COLS) as u8 + 1))
    }

    /// Confirms the pending deposit.
    pub fn mark_deposited(&mut self) {
        if let Some(idx) = self.pending.take() {
            debug_assert!(!self.occupied[idx], "slot double-filled");
            self.occupied[idx] = true;
        }
    }

    /// Releases the pending reservation after a failed cycle.
    pub fn release_pending(&mut self) {
        self.pending = None;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn is_full(&self) -> bool {
        self.occupied_count() == CARD_SLOTS
    }
}

/// Punch-motion offsets of the waypoint plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PunchPlanParams {
    /// Descent beyond the localized surface point, mm.
    pub insert_offset_mm: Real,
    /// Vertical retraction after detachment, mm.
    pub retract_mm: Real,
    /// Physical blade length (hub cap), mm.
    pub blade_length_mm: Real,
}

impl Default for PunchPlanParams {
    fn default() -> Self {
        Self {
            insert_offset_mm: 7.0,
            retract_mm: 40.0,
            blade_length_mm: crate::actuation::BLADE_LENGTH_MM,
        }
    }
}

/// The ordered waypoints of one sampling cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    /// XY move above the site at the current (home) height.
    pub approach_xy: EffectorPoint,
    /// Descent to `site z + insert offset`.
    pub insert: EffectorPoint,
    /// Retraction to `site z + insert offset - retract` (net -40 mm).
    pub retract: EffectorPoint,
    /// Release point above the designated circle.
    pub deposit: EffectorPoint,
    /// Home, the origin of the effector frame.
    pub home: EffectorPoint,
}

impl WaypointPlan {
    pub fn sequence(&self) -> [(&'static str, EffectorPoint); 5] {
        [
            ("approach_xy", self.approach_xy),
            ("insert", self.insert),
            ("retract", self.retract),
            ("deposit", self.deposit),
            ("home", self.home),
        ]
    }
}

/// Pure waypoint arithmetic: the exact sequence of Cartesian targets for a
/// site and a deposition point. No workspace check.
pub fn waypoint_sequence(
    site: EffectorPoint,
    deposit: EffectorPoint,
    punch: &PunchPlanParams,
) -> WaypointPlan {
    WaypointPlan {
        approach_xy: EffectorPoint::new(site.x, site.y, 0.0),
        insert: EffectorPoint::new(site.x, site.y, site.z + punch.insert_offset_mm),
        retract: EffectorPoint::new(
            site.x,
            site.y,
            site.z + punch.insert_offset_mm - punch.retract_mm,
        ),
        deposit,
        home: EffectorPoint::new(0.0, 0.0, 0.0),
    }
}

/// Plans the cycle's waypoints and verifies every one of them against the
/// manipulator's travels before any motion starts (plan-then-execute).
pub fn plan_waypoints(
    site: EffectorPoint,
    deposit: EffectorPoint,
    punch: &PunchPlanParams,
    manipulator: &Manipulator,
) -> Result<WaypointPlan, ControllerError> {
    let plan = waypoint_sequence(site, deposit, punch);
    for (name, p) in plan.sequence() {
        if !manipulator.in_workspace(&p) {
            return Err(ControllerError::OutOfWorkspace {
                name,
                x: p.x,
                y: p.y,
                z: p.z,
            });
        }
    }
    Ok(plan)
}

/// Terminal outcome of one cycle attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcome {
    /// Core extracted and released into its designated circle.
    Deposited,
    /// The tuber rolled away during clamping.
    GraspFailed,
    /// No sampling site detected across the vision window.
    NoSiteDetected,
    /// Too many depth holes at the selected pixel.
    InsufficientDepth,
    /// A planned waypoint fell outside the workspace.
    OutOfWorkspace,
    /// The punch failed to detach a core.
    DetachmentFailed,
    /// The core was lost to vibration during transport.
    DroppedInTransit,
    /// The core stuck to the ejection piston.
    AdheredToPiston,
    /// Corrupted z steps misplaced the deposit.
    HubMisplaced,
    /// Residual tissue from an earlier adhesion blocked the punch.
    PunchBlocked,
    /// No free collection circle was available.
    CardFull,
    /// The tuber crossed the gate band without ever being detected
    /// (only possible when the tuber detector's recall is below one).
    MissedGate,
}

impl CycleOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, CycleOutcome::Deposited)
    }
}

/// Wall-clock spent in each phase of a cycle, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub vision_s: Real,
    pub grasp_s: Real,
    pub approach_insert_s: Real,
    pub transport_s: Real,
    pub return_s: Real,
    pub servo_s: Real,
}

impl PhaseDurations {
    pub fn total_s(&self) -> Real {
        self.vision_s
            + self.grasp_s
            + self.approach_insert_s
            + self.transport_s
            + self.return_s
            + self.servo_s
    }

    pub fn manipulation_s(&self) -> Real {
        self.approach_insert_s + self.transport_s + self.return_s
    }
}

/// Everything recorded about one cycle attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub tuber_id: u32,
    pub outcome: CycleOutcome,
    pub site_kind: Option<SiteKind>,
    /// Radial offset of the selected site in [0, 1].
    pub radial_offset: Option<Real>,
    /// Injected lateral localization error, mm.
    pub lateral_error_mm: Option<Real>,
    /// Injected signed depth error, mm.
    pub depth_error_mm: Option<Real>,
    /// Achieved punch penetration, mm.
    pub achieved_depth_mm: Option<Real>,
    /// Whether the hub capped the commanded insertion.
    pub depth_capped: Option<bool>,
    pub core_length_mm: Option<Real>,
    pub grasp_displacement_mm: Option<Real>,
    /// Card slot (n, m) used for a successful deposit.
    pub slot: Option<(u8, u8)>,
    pub durations: PhaseDurations,
    /// Set by the harness when this attempt followed an operator
    /// intervention after a failed grasp.
    pub after_intervention: bool,
}
