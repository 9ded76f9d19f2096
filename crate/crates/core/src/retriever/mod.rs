//! The rescue robot as a tick-driven state machine.
//!
//! Headings are counter-clockwise from east, so a positive turn rate turns
//! left. The machine keeps its own pose estimate (odometry blended with GPS)
//! and never reads ground truth, except for the grasp gate's positioning
//! error, which the simulator measures and passes in.

pub mod grasp;
pub mod tank;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::sensors::range::wrap_angle;
use crate::sensors::RangeReading;
use crate::world::{geo_to_local, GeoFix, LocalPoint};

pub use grasp::{grasp_sequence, GraspStage, ServoCommand, TimedServo};
pub use tank::{tank_speed, TankError, TankModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RetrieverPhase {
    Idle,
    Transit,
    Avoiding,
    FineApproach,
    Grasp,
    Return,
    Done,
    Fault,
}

impl RetrieverPhase {
    pub const ALL: [RetrieverPhase; 8] = [
        RetrieverPhase::Idle,
        RetrieverPhase::Transit,
        RetrieverPhase::Avoiding,
        RetrieverPhase::FineApproach,
        RetrieverPhase::Grasp,
        RetrieverPhase::Return,
        RetrieverPhase::Done,
        RetrieverPhase::Fault,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn can_transition(self, to: RetrieverPhase) -> bool {
        use RetrieverPhase::*;
        if to == Fault {
            return self != Fault;
        }
        matches!(
            (self, to),
            (Idle, Transit)
                | (Transit, Avoiding)
                | (Avoiding, Transit)
                | (Transit, FineApproach)
                | (FineApproach, Grasp)
                | (Grasp, Return)
                | (Return, Done)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RetrieverPhase::Done | RetrieverPhase::Fault)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultReason {
    GpsLost,
    LinkDown,
    CapacityExceeded,
    TargetNotFound,
    GraspMissed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: LocalPoint,
    pub heading_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveCommand {
    pub forward_mps: f64,
    pub turn_rps: f64,
}

/// Dead-reckoning update shared by the simulator and the estimator: turn,
/// then move along the mid-step heading.
pub fn integrate(p: Pose, cmd: DriveCommand, dt_s: f64) -> Pose {
    let dh = cmd.turn_rps * dt_s;
    let mid = p.heading_rad + dh / 2.0;
    let ds = cmd.forward_mps * dt_s;
    Pose { position: p.position.offset(ds * mid.cos(), ds * mid.sin(), 0.0), heading_rad: p.heading_rad + dh }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverConfig {
    pub tank: TankModel,
    pub k_heading: f64,
    pub max_turn_rps: f64,
    pub avoid_trigger_mm: u32,
    pub avoid_hold_ticks: u32,
    pub fine_entry_m: f64,
    pub creep_mps: f64,
    pub grasp_standoff_mm: u32,
    pub grasp_tolerance_mm: f64,
    pub gps_timeout_ticks: u32,
    /// Weight of each GPS fix in the position estimate.
    pub gps_blend: f64,
    pub coarse_step_rad: f64,
    pub fine_step_rad: f64,
    /// Rescan from this range when a fine sweep finished farther than `rescan_above_mm`.
    pub rescan_at_mm: u32,
    pub rescan_above_mm: u32,
    pub max_grasp_attempts: u32,
    pub dt_s: f64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            tank: TankModel::default(),
            k_heading: 2.0,
            max_turn_rps: 1.2,
            avoid_trigger_mm: 250,
            avoid_hold_ticks: 8,
            fine_entry_m: 1.0,
            creep_mps: 0.05,
            grasp_standoff_mm: 120,
            grasp_tolerance_mm: 5.0,
            gps_timeout_ticks: 50,
            gps_blend: 0.05,
            coarse_step_rad: 0.05,
            fine_step_rad: 0.004,
            rescan_at_mm: 400,
            rescan_above_mm: 600,
            max_grasp_attempts: 5,
            dt_s: 0.1,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.tank.validate().map_err(|e| e.to_string())?;
        let positive = [
            ("k_heading", self.k_heading),
            ("max_turn_rps", self.max_turn_rps),
            ("fine_entry_m", self.fine_entry_m),
            ("creep_mps", self.creep_mps),
            ("grasp_tolerance_mm", self.grasp_tolerance_mm),
            ("coarse_step_rad", self.coarse_step_rad),
            ("fine_step_rad", self.fine_step_rad),
            ("dt_s", self.dt_s),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(format!("{name} must be positive, got {v}"));
        }
        if !(0.0..=1.0).contains(&self.gps_blend) {
            return Err(format!("gps_blend must be in [0, 1], got {}", self.gps_blend));
        }
        Ok(())
    }
}

/// Sensor and simulator inputs for one guidance step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieverInputs {
    pub left: RangeReading,
    pub center: RangeReading,
    pub right: RangeReading,
    pub lidar: RangeReading,
    pub gps: Option<GeoFix>,
    pub link_down: bool,
    /// Distance between the gripper point and the target's near surface.
    pub positioning_error_mm: f64,
    /// Mass of whatever sits in the gripper.
    pub payload_g: u32,
}

/// Sub-steps of the LIDAR-guided terminal approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FineStep {
    /// Full turn in place recording LIDAR hits.
    Coarse { start: f64, samples: Vec<Option<u32>> },
    Align { aim: f64, then: Box<FineStep> },
    /// Turn left until the LIDAR leaves the object.
    SeekEdge { near_mm: u32 },
    /// Turn right across the object, noting first and last hits.
    Sweep { near_mm: u32, first: Option<f64>, last: f64, swept: f64 },
    Creep { checkpoint_mm: Option<u32> },
    Backoff { ticks_left: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverState {
    pub phase: RetrieverPhase,
    pub pose: Pose,
    pub target: Option<GeoFix>,
    pub avoid_ticks_left: u32,
    pub avoid_turn: f64,
    pub origin: GeoFix,
    pub home: LocalPoint,
    pub gps_missing: u32,
    pub fine: Option<FineStep>,
    pub grasp_started: Option<u64>,
    pub grasp_attempts: u32,
    pub load_g: u32,
    pub fault: Option<FaultReason>,
}

impl RetrieverState {
    pub fn new(origin: GeoFix, start: Pose) -> Self {
        RetrieverState {
            phase: RetrieverPhase::Idle,
            pose: start,
            target: None,
            avoid_ticks_left: 0,
            avoid_turn: 0.0,
            origin,
            home: start.position,
            gps_missing: 0,
            fine: None,
            grasp_started: None,
            grasp_attempts: 0,
            load_g: 0,
            fault: None,
        }
    }

    /// Accepts a dispatch order; only an idle retriever takes one.
    pub fn assign(&mut self, target: GeoFix) -> Option<Transition> {
        if self.phase != RetrieverPhase::Idle {
            return None;
        }
        self.target = Some(target);
        Some(self.enter(RetrieverPhase::Transit))
    }

    fn enter(&mut self, to: RetrieverPhase) -> Transition {
        assert!(self.phase.can_transition(to), "illegal transition {:?} -> {to:?}", self.phase);
        let from = self.phase;
        self.phase = to;
        Transition { from, to, est_distance_m: None, positioning_error_mm: None, fault: None }
    }

    fn fail(&mut self, reason: FaultReason) -> Transition {
        self.fault = Some(reason);
        self.fine = None;
        let mut t = self.enter(RetrieverPhase::Fault);
        t.fault = Some(reason);
        t
    }

    fn target_local(&self) -> Option<LocalPoint> {
        self.target.and_then(|t| geo_to_local(t, self.origin).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: RetrieverPhase,
    pub to: RetrieverPhase,
    pub est_distance_m: Option<f64>,
    pub positioning_error_mm: Option<f64>,
    pub fault: Option<FaultReason>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Step {
    pub command: DriveCommand,
    pub transition: Option<Transition>,
    pub servo: Vec<ServoCommand>,
    /// Set on the tick the grasp script completes.
    pub grasped: bool,
}

fn nav_command(cfg: &RetrieverConfig, pose: &Pose, goal: LocalPoint, speed: f64) -> (DriveCommand, f64) {
    let bearing = (goal.y_m - pose.position.y_m).atan2(goal.x_m - pose.position.x_m);
    let err = wrap_angle(bearing - pose.heading_rad);
    let turn = (cfg.k_heading * err).clamp(-cfg.max_turn_rps, cfg.max_turn_rps);
    (DriveCommand { forward_mps: speed * err.cos().max(0.0), turn_rps: turn }, err)
}

/// Turn rate reaching `aim` from `heading`, and whether this step gets there.
fn turn_toward(cfg: &RetrieverConfig, heading: f64, aim: f64) -> (f64, bool) {
    let rem = wrap_angle(aim - heading);
    let max = cfg.max_turn_rps * cfg.dt_s;
    if rem.abs() <= max {
        (rem / cfg.dt_s, true)
    } else {
        (max.copysign(rem) / cfg.dt_s, false)
    }
}

fn lidar_hit(r: &RangeReading, within_mm: u32) -> bool {
    !r.max_range && r.distance_mm <= within_mm
}

const COARSE_RANGE_MM: u32 = 10_000;
const EDGE_MARGIN_MM: u32 = 500;

/// Picks the hit run whose estimated position best matches the target and
/// returns `(first, last)` headings of that run plus its nearest range.
fn choose_interval(
    start: f64,
    step: f64,
    samples: &[Option<u32>],
    pose: &Pose,
    target: Option<LocalPoint>,
) -> Option<(f64, f64, u32)> {
    let n = samples.len();
    let m = samples.iter().position(|s| s.is_none())?;
    let mut runs: Vec<(usize, usize, u32)> = Vec::new();
    let mut cur: Option<(usize, usize, u32)> = None;
    for k in m..m + n + 1 {
        match samples[k % n] {
            Some(d) => {
                cur = Some(match cur {
                    None => (k, k, d),
                    Some((a, _, dm)) => (a, k, dm.min(d)),
                })
            }
            None => runs.extend(cur.take()),
        }
    }
    let heading = |k: usize| start + k as f64 * step;
    let score = |&(a, b, d): &(usize, usize, u32)| match target {
        Some(t) => {
            let mid = (heading(a) + heading(b)) / 2.0;
            let r = d as f64 / 1000.0;
            let p = pose.position.offset(r * mid.cos(), r * mid.sin(), 0.0);
            p.horizontal_distance(&t)
        }
        None => d as f64,
    };
    runs.into_iter()
        .min_by(|x, y| score(x).total_cmp(&score(y)))
        .map(|(a, b, d)| (heading(a), heading(b), d))
}

/// One guidance step. The returned state replaces `s`.
pub fn step_guidance(s: &RetrieverState, cfg: &RetrieverConfig, inp: &RetrieverInputs, tick: u64) -> (RetrieverState, Step) {
    let mut st = s.clone();
    let mut out = Step::default();
    if st.phase.is_terminal() || st.phase == RetrieverPhase::Idle {
        if inp.link_down && st.phase == RetrieverPhase::Idle {
            out.transition = Some(st.fail(FaultReason::LinkDown));
        }
        return (st, out);
    }
    if inp.link_down {
        out.transition = Some(st.fail(FaultReason::LinkDown));
        return (st, out);
    }

    match inp.gps.and_then(|g| geo_to_local(g, st.origin).ok()) {
        Some(g) => {
            let p = &mut st.pose.position;
            p.x_m += cfg.gps_blend * (g.x_m - p.x_m);
            p.y_m += cfg.gps_blend * (g.y_m - p.y_m);
            st.gps_missing = 0;
        }
        None => st.gps_missing += 1,
    }

    let navigating = matches!(st.phase, RetrieverPhase::Transit | RetrieverPhase::Avoiding);
    if navigating && st.gps_missing >= cfg.gps_timeout_ticks {
        out.transition = Some(st.fail(FaultReason::GpsLost));
        return (st, out);
    }

    let speed = match tank_speed(&cfg.tank.with_load(st.load_g)) {
        Ok(v) => v,
        Err(_) => {
            out.transition = Some(st.fail(FaultReason::CapacityExceeded));
            return (st, out);
        }
    };

    match st.phase {
        RetrieverPhase::Transit => {
            let Some(goal) = st.target_local() else {
                out.transition = Some(st.fail(FaultReason::TargetNotFound));
                return (st, out);
            };
            let d = st.pose.position.horizontal_distance(&goal);
            if d < cfg.fine_entry_m {
                st.fine = Some(FineStep::Coarse { start: st.pose.heading_rad, samples: Vec::new() });
                let mut t = st.enter(RetrieverPhase::FineApproach);
                t.est_distance_m = Some(d);
                out.transition = Some(t);
            } else if inp.center.distance_mm < cfg.avoid_trigger_mm {
                // tie goes right
                st.avoid_turn = if inp.left.distance_mm > inp.right.distance_mm { cfg.max_turn_rps } else { -cfg.max_turn_rps };
                st.avoid_ticks_left = cfg.avoid_hold_ticks;
                let mut t = st.enter(RetrieverPhase::Avoiding);
                t.est_distance_m = Some(d);
                out.transition = Some(t);
                out.command = DriveCommand { forward_mps: 0.0, turn_rps: st.avoid_turn };
                st.avoid_ticks_left -= 1;
            } else {
                out.command = nav_command(cfg, &st.pose, goal, speed).0;
            }
        }
        RetrieverPhase::Avoiding => {
            if st.avoid_ticks_left == 0 {
                out.transition = Some(st.enter(RetrieverPhase::Transit));
                if let Some(goal) = st.target_local() {
                    out.command = nav_command(cfg, &st.pose, goal, speed).0;
                }
            } else {
                let forward = if inp.center.distance_mm >= cfg.avoid_trigger_mm { speed / 2.0 } else { 0.0 };
                out.command = DriveCommand { forward_mps: forward, turn_rps: st.avoid_turn };
                st.avoid_ticks_left -= 1;
            }
        }
        RetrieverPhase::FineApproach => fine_step(&mut st, cfg, inp, tick, &mut out),
        RetrieverPhase::Grasp => {
            let start = st.grasp_started.expect("set on entry");
            out.servo = grasp_sequence(start).into_iter().filter(|c| c.tick == tick).map(|c| c.command).collect();
            if tick >= start + grasp::script_duration_ticks() {
                if tank_speed(&cfg.tank.with_load(inp.payload_g)).is_err() {
                    out.transition = Some(st.fail(FaultReason::CapacityExceeded));
                } else {
                    st.load_g = inp.payload_g;
                    out.grasped = true;
                    out.transition = Some(st.enter(RetrieverPhase::Return));
                }
            }
        }
        RetrieverPhase::Return => {
            let d = st.pose.position.horizontal_distance(&st.home);
            if d < cfg.fine_entry_m {
                let mut t = st.enter(RetrieverPhase::Done);
                t.est_distance_m = Some(d);
                out.transition = Some(t);
            } else {
                out.command = nav_command(cfg, &st.pose, st.home, speed).0;
            }
        }
        RetrieverPhase::Idle | RetrieverPhase::Done | RetrieverPhase::Fault => unreachable!(),
    }
    st.pose = integrate(st.pose, out.command, cfg.dt_s);
    (st, out)
}

fn fine_step(st: &mut RetrieverState, cfg: &RetrieverConfig, inp: &RetrieverInputs, tick: u64, out: &mut Step) {
    let lidar = inp.lidar;
    let standoff = cfg.grasp_standoff_mm;
    if lidar_hit(&lidar, standoff) {
        if inp.positioning_error_mm <= cfg.grasp_tolerance_mm {
            st.fine = None;
            st.grasp_started = Some(tick);
            let mut t = st.enter(RetrieverPhase::Grasp);
            t.positioning_error_mm = Some(inp.positioning_error_mm);
            out.transition = Some(t);
            out.servo = grasp_sequence(tick).into_iter().filter(|c| c.tick == tick).map(|c| c.command).collect();
            return;
        }
        if matches!(st.fine, Some(FineStep::Creep { .. })) {
            st.grasp_attempts += 1;
            if st.grasp_attempts >= cfg.max_grasp_attempts {
                out.transition = Some(st.fail(FaultReason::GraspMissed));
                return;
            }
            st.fine = Some(FineStep::Backoff { ticks_left: 20 });
        }
    }
    let h = st.pose.heading_rad;
    let dt = cfg.dt_s;
    let fine = st.fine.take().expect("fine step set in FineApproach");
    let (next, cmd) = match fine {
        FineStep::Coarse { start, mut samples } => {
            samples.push(lidar_hit(&lidar, COARSE_RANGE_MM).then_some(lidar.distance_mm));
            if (samples.len() as f64) * cfg.coarse_step_rad < TAU {
                (FineStep::Coarse { start, samples }, DriveCommand { forward_mps: 0.0, turn_rps: cfg.coarse_step_rad / dt })
            } else {
                match choose_interval(start, cfg.coarse_step_rad, &samples, &st.pose, st.target_local()) {
                    None => {
                        out.transition = Some(st.fail(FaultReason::TargetNotFound));
                        return;
                    }
                    Some((a, b, near)) => {
                        let aim = (a + b) / 2.0;
                        let (turn, _) = turn_toward(cfg, h, aim);
                        let then = Box::new(FineStep::SeekEdge { near_mm: near.saturating_add(EDGE_MARGIN_MM) });
                        (FineStep::Align { aim, then }, DriveCommand { forward_mps: 0.0, turn_rps: turn })
                    }
                }
            }
        }
        FineStep::Align { aim, then } => {
            let (turn, arrives) = turn_toward(cfg, h, aim);
            let next = if arrives { *then } else { FineStep::Align { aim, then } };
            (next, DriveCommand { forward_mps: 0.0, turn_rps: turn })
        }
        FineStep::SeekEdge { near_mm } => {
            if lidar_hit(&lidar, near_mm) {
                (FineStep::SeekEdge { near_mm }, DriveCommand { forward_mps: 0.0, turn_rps: cfg.coarse_step_rad / dt })
            } else {
                let sweep = FineStep::Sweep { near_mm, first: None, last: h, swept: 0.0 };
                (sweep, DriveCommand { forward_mps: 0.0, turn_rps: -cfg.fine_step_rad / dt })
            }
        }
        FineStep::Sweep { near_mm, first, last, swept } => {
            let hit = lidar_hit(&lidar, near_mm);
            match (hit, first) {
                (false, Some(f)) => {
                    let aim = (f + last) / 2.0;
                    let checkpoint = (lidar_dist_before(near_mm) > cfg.rescan_above_mm).then_some(cfg.rescan_at_mm);
                    let (turn, arrives) = turn_toward(cfg, h, aim);
                    let creep = FineStep::Creep { checkpoint_mm: checkpoint };
                    let next = if arrives { creep } else { FineStep::Align { aim, then: Box::new(creep) } };
                    (next, DriveCommand { forward_mps: 0.0, turn_rps: turn })
                }
                _ if swept > std::f64::consts::PI => {
                    st.grasp_attempts += 1;
                    if st.grasp_attempts >= cfg.max_grasp_attempts {
                        out.transition = Some(st.fail(FaultReason::TargetNotFound));
                        return;
                    }
                    (FineStep::Coarse { start: h, samples: Vec::new() }, DriveCommand::default())
                }
                _ => {
                    let (first, last) = if hit { (first.or(Some(h)), h) } else { (first, last) };
                    let sweep = FineStep::Sweep { near_mm, first, last, swept: swept + cfg.fine_step_rad };
                    (sweep, DriveCommand { forward_mps: 0.0, turn_rps: -cfg.fine_step_rad / dt })
                }
            }
        }
        FineStep::Creep { checkpoint_mm } => {
            if !lidar_hit(&lidar, COARSE_RANGE_MM) {
                (FineStep::Coarse { start: h, samples: Vec::new() }, DriveCommand::default())
            } else if checkpoint_mm.is_some_and(|c| lidar.distance_mm <= c) {
                let near = lidar.distance_mm + EDGE_MARGIN_MM;
                (FineStep::SeekEdge { near_mm: near }, DriveCommand::default())
            } else {
                let gap = (lidar.distance_mm as f64 - standoff as f64) / 1000.0;
                let v = cfg.creep_mps.min(gap / dt).max(0.0);
                (FineStep::Creep { checkpoint_mm }, DriveCommand { forward_mps: v, turn_rps: 0.0 })
            }
        }
        FineStep::Backoff { ticks_left } => {
            if ticks_left == 0 {
                (FineStep::SeekEdge { near_mm: lidar.distance_mm.min(COARSE_RANGE_MM) + EDGE_MARGIN_MM }, DriveCommand::default())
            } else {
                (FineStep::Backoff { ticks_left: ticks_left - 1 }, DriveCommand { forward_mps: -cfg.creep_mps, turn_rps: 0.0 })
            }
        }
    };
    st.fine = Some(next);
    out.command = cmd;
}

/// Range at which a sweep with edge threshold `near_mm` saw the object.
fn lidar_dist_before(near_mm: u32) -> u32 {
    near_mm.saturating_sub(EDGE_MARGIN_MM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensors::{sample_range, RangeSensor, SensorPose};
    use crate::world::{local_to_geo, Entity, EntityKind, World};
    use proptest::prelude::*;

    fn origin() -> GeoFix {
        GeoFix::from_degrees(37.0, -122.0, 0.0).unwrap()
    }

    fn reading(sensor: RangeSensor, mm: u32) -> RangeReading {
        let max = if sensor == RangeSensor::Lidar { 12_000 } else { 4000 };
        RangeReading { sensor, distance_mm: mm.min(max), max_range: mm >= max }
    }

    fn inputs(left: u32, center: u32, right: u32, lidar: u32) -> RetrieverInputs {
        RetrieverInputs {
            left: reading(RangeSensor::Left, left),
            center: reading(RangeSensor::Center, center),
            right: reading(RangeSensor::Right, right),
            lidar: reading(RangeSensor::Lidar, lidar),
            gps: None,
            link_down: false,
            positioning_error_mm: 100.0,
            payload_g: 0,
        }
    }

    fn clear() -> RetrieverInputs {
        inputs(4000, 4000, 4000, 12_000)
    }

    fn transit_toward(x: f64, y: f64, heading: f64) -> RetrieverState {
        let mut s = RetrieverState::new(origin(), Pose { position: LocalPoint::new(0.0, 0.0, 0.0), heading_rad: heading });
        s.assign(local_to_geo(LocalPoint::new(x, y, 0.0), origin()).unwrap()).unwrap();
        s
    }

    fn legal(a: RetrieverPhase, b: RetrieverPhase) -> bool {
        use RetrieverPhase::*;
        const EDGES: [(RetrieverPhase, RetrieverPhase); 7] = [
            (Idle, Transit),
            (Transit, Avoiding),
            (Avoiding, Transit),
            (Transit, FineApproach),
            (FineApproach, Grasp),
            (Grasp, Return),
            (Return, Done),
        ];
        (b == Fault && a != Fault) || EDGES.contains(&(a, b))
    }

    #[test]
    fn transition_table() {
        for a in RetrieverPhase::ALL {
            for b in RetrieverPhase::ALL {
                assert_eq!(a.can_transition(b), legal(a, b), "{a:?} -> {b:?}");
            }
        }
        for p in RetrieverPhase::ALL {
            assert_eq!(RetrieverPhase::from_code(p.code()), Some(p));
        }
    }

    #[test]
    fn target_north_turns_left() {
        let s = transit_toward(0.0, 20.0, 0.0);
        let (_, step) = step_guidance(&s, &RetrieverConfig::default(), &clear(), 1);
        assert!(step.command.turn_rps > 0.0);
        assert_eq!(step.command.turn_rps, 1.2);
        // 90° off: no forward motion yet
        assert!(step.command.forward_mps.abs() < 1e-12);
    }

    #[test]
    fn avoid_toward_clearer_side() {
        let s = transit_toward(20.0, 0.0, 0.0);
        let (s2, step) = step_guidance(&s, &RetrieverConfig::default(), &inputs(1500, 200, 400, 12_000), 1);
        assert_eq!(s2.phase, RetrieverPhase::Avoiding);
        assert!(step.command.turn_rps > 0.0, "left is clearer");
        let (s3, step) = step_guidance(&s, &RetrieverConfig::default(), &inputs(900, 200, 900, 12_000), 1);
        assert_eq!(s3.phase, RetrieverPhase::Avoiding);
        assert!(step.command.turn_rps < 0.0, "tie goes right");
    }

    #[test]
    fn avoid_holds_eight_ticks() {
        let cfg = RetrieverConfig::default();
        let mut s = transit_toward(20.0, 0.0, 0.0);
        let mut phases = Vec::new();
        for t in 0..12 {
            let inp = if t == 0 { inputs(1500, 200, 400, 12_000) } else { clear() };
            let (n, _) = step_guidance(&s, &cfg, &inp, t);
            s = n;
            phases.push(s.phase);
        }
        let avoiding = phases.iter().filter(|p| **p == RetrieverPhase::Avoiding).count();
        assert_eq!(avoiding, 8);
        assert_eq!(phases[8], RetrieverPhase::Transit);
    }

    #[test]
    fn lidar_at_standoff_enters_grasp() {
        let mut s = transit_toward(0.5, 0.0, 0.0);
        let cfg = RetrieverConfig::default();
        s = step_guidance(&s, &cfg, &clear(), 0).0;
        assert_eq!(s.phase, RetrieverPhase::FineApproach);
        s.fine = Some(FineStep::Creep { checkpoint_mm: None });
        let mut inp = inputs(4000, 4000, 4000, 118);
        inp.positioning_error_mm = 2.0;
        let (g, step) = step_guidance(&s, &cfg, &inp, 5);
        assert_eq!(g.phase, RetrieverPhase::Grasp);
        assert_eq!(step.transition.unwrap().positioning_error_mm, Some(2.0));
        assert_eq!(step.servo.len(), 6);
    }

    #[test]
    fn grasp_gate_refuses_sloppy_alignment() {
        let mut s = transit_toward(0.5, 0.0, 0.0);
        let cfg = RetrieverConfig::default();
        s = step_guidance(&s, &cfg, &clear(), 0).0;
        s.fine = Some(FineStep::Creep { checkpoint_mm: None });
        let mut inp = inputs(4000, 4000, 4000, 118);
        inp.positioning_error_mm = 5.5;
        let (g, _) = step_guidance(&s, &cfg, &inp, 5);
        assert_eq!(g.phase, RetrieverPhase::FineApproach);
        assert!(matches!(g.fine, Some(FineStep::Backoff { .. })));
    }

    #[test]
    fn gps_loss_faults_after_fifty_ticks() {
        let cfg = RetrieverConfig::default();
        let mut s = transit_toward(100.0, 0.0, 0.0);
        for t in 0..49 {
            s = step_guidance(&s, &cfg, &clear(), t).0;
            assert_eq!(s.phase, RetrieverPhase::Transit);
        }
        s = step_guidance(&s, &cfg, &clear(), 49).0;
        assert_eq!(s.phase, RetrieverPhase::Fault);
        assert_eq!(s.fault, Some(FaultReason::GpsLost));
    }

    #[test]
    fn link_down_and_capacity_fault() {
        let cfg = RetrieverConfig::default();
        let s = transit_toward(100.0, 0.0, 0.0);
        let mut inp = clear();
        inp.link_down = true;
        assert_eq!(step_guidance(&s, &cfg, &inp, 0).0.fault, Some(FaultReason::LinkDown));

        let mut g = s.clone();
        g.phase = RetrieverPhase::Grasp;
        g.grasp_started = Some(0);
        let mut heavy = clear();
        heavy.payload_g = 2500;
        let (done, _) = step_guidance(&g, &cfg, &heavy, 50);
        assert_eq!(done.fault, Some(FaultReason::CapacityExceeded));
        heavy.payload_g = 800;
        let (ret, step) = step_guidance(&g, &cfg, &heavy, 50);
        assert_eq!(ret.phase, RetrieverPhase::Return);
        assert!(step.grasped);
        assert_eq!(ret.load_g, 800);
    }

    /// Free-space run with perfect GPS from the estimator's own pose.
    #[test]
    fn free_space_distance_decreases_and_arrives_in_bound() {
        let cfg = RetrieverConfig::default();
        for (x, y, h) in [(30.0, 5.0, 0.0), (-12.0, 9.0, 0.3), (4.0, -25.0, 2.5)] {
            let mut s = transit_toward(x, y, h);
            let goal = LocalPoint::new(x, y, 0.0);
            let d0 = goal.horizontal_distance(&s.pose.position);
            let v = tank_speed(&cfg.tank).unwrap();
            let bound = (2.0 * d0 / (v * cfg.dt_s)).ceil() as u64 + (std::f64::consts::PI / (cfg.max_turn_rps * cfg.dt_s)).ceil() as u64;
            let mut prev = f64::INFINITY;
            let mut t = 0;
            while s.phase == RetrieverPhase::Transit {
                let mut inp = clear();
                inp.gps = Some(local_to_geo(s.pose.position, origin()).unwrap());
                let p = s.pose;
                let bearing = (y - p.position.y_m).atan2(x - p.position.x_m);
                let aligned = wrap_angle(bearing - p.heading_rad).abs() < std::f64::consts::FRAC_PI_2;
                s = step_guidance(&s, &cfg, &inp, t).0;
                let d = goal.horizontal_distance(&s.pose.position);
                if aligned && s.phase == RetrieverPhase::Transit {
                    assert!(d < prev, "distance grew at tick {t}: {prev} -> {d}");
                }
                prev = d;
                t += 1;
                assert!(t <= bound, "no fine approach within {bound} ticks");
            }
            assert_eq!(s.phase, RetrieverPhase::FineApproach);
        }
    }

    /// Drives the full fine approach against a real LIDAR model.
    #[test]
    fn fine_approach_lands_within_tolerance() {
        let cfg = RetrieverConfig::default();
        for (tx, ty, h0) in [(2.3, 0.7, 0.4), (-1.5, 3.0, -2.0), (0.9, -0.2, 1.0)] {
            let dog = Entity::new(1, EntityKind::Target, LocalPoint::new(tx, ty, 0.0), "dog");
            let world = World { entities: vec![dog.clone()], ..World::default() };
            let mut truth = Pose { position: LocalPoint::new(0.0, 0.0, 0.0), heading_rad: h0 };
            let mut s = RetrieverState::new(origin(), truth);
            // geo estimate off by a meter
            s.assign(local_to_geo(LocalPoint::new(tx - 0.6, ty + 0.8, 0.0), origin()).unwrap()).unwrap();
            s.phase = RetrieverPhase::FineApproach;
            s.fine = Some(FineStep::Coarse { start: h0, samples: Vec::new() });
            let mut grasped_err = None;
            for t in 0..5000 {
                let lidar = sample_range(&world, &SensorPose { position: truth.position, heading_rad: truth.heading_rad }, RangeSensor::Lidar);
                let mut inp = clear();
                inp.lidar = lidar;
                inp.gps = Some(local_to_geo(truth.position, origin()).unwrap());
                inp.positioning_error_mm = positioning_error_mm(&truth, &dog);
                let (n, step) = step_guidance(&s, &cfg, &inp, t);
                s = n;
                truth = integrate(truth, step.command, cfg.dt_s);
                if s.phase != RetrieverPhase::FineApproach {
                    grasped_err = step.transition.and_then(|t| t.positioning_error_mm);
                    break;
                }
            }
            assert_eq!(s.phase, RetrieverPhase::Grasp, "target at ({tx}, {ty})");
            assert!(grasped_err.unwrap() <= 5.0);
        }
    }

    fn positioning_error_mm(p: &Pose, e: &Entity) -> f64 {
        let g = p.position.offset(0.12 * p.heading_rad.cos(), 0.12 * p.heading_rad.sin(), 0.0);
        let (dx, dy) = (e.position.x_m - p.position.x_m, e.position.y_m - p.position.y_m);
        let d = dx.hypot(dy);
        let c = LocalPoint::new(e.position.x_m - e.radius_m * dx / d, e.position.y_m - e.radius_m * dy / d, 0.0);
        g.horizontal_distance(&c) * 1000.0
    }

    proptest! {
        #[test]
        fn random_sensor_streams_keep_legal_transitions(
            stream in prop::collection::vec((0u32..4500, 0u32..4500, 0u32..4500, 0u32..13_000, any::<bool>(), 0.0f64..10.0, 0u32..3000), 1..300),
            tx in -30.0f64..30.0, ty in -30.0f64..30.0, link_at in prop::option::of(0usize..300),
        ) {
            let cfg = RetrieverConfig::default();
            let mut s = transit_toward(tx, ty, 0.0);
            for (t, (l, c, r, li, gps, err, mass)) in stream.into_iter().enumerate() {
                let mut inp = inputs(l, c, r, li);
                if gps {
                    inp.gps = Some(local_to_geo(s.pose.position, origin()).unwrap());
                }
                inp.positioning_error_mm = err;
                inp.payload_g = mass;
                inp.link_down = link_at == Some(t);
                let before = s.phase;
                let (n, step) = step_guidance(&s, &cfg, &inp, t as u64);
                if n.phase != before {
                    prop_assert!(legal(before, n.phase), "{:?} -> {:?}", before, n.phase);
                    let tr = step.transition.unwrap();
                    prop_assert_eq!((tr.from, tr.to), (before, n.phase));
                }
                prop_assert!(step.command.turn_rps.abs() <= cfg.max_turn_rps + 1e-12);
                s = n;
            }
        }
    }
}
