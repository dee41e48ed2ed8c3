//! Manhattan grid mobility.
//!
//! Nodes drive on a lattice of two-lane streets (one lane per travel
//! direction, right-hand traffic). At every intersection a node goes straight
//! with probability 1/2 or turns left/right with probability 1/4 each; where
//! the grid boundary removes an exit the remaining exits keep their 1:1:2
//! weights. Speed follows a bounded random walk and is capped by the node in
//! front on the same lane segment.

pub mod ns2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::RngStream;

pub use ns2::{MobilityTrace, Waypoint};

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("grid must have at least one block in each dimension (got {blocks_x}x{blocks_y})")]
    NoStreets { blocks_x: u32, blocks_y: u32 },
    #[error("block length must be positive (got {0})")]
    BadBlockLength(f64),
    #[error("lane offset must be in [0, block_len/2) (got {0})")]
    BadLaneOffset(f64),
    #[error("node count must be at least 1")]
    NoNodes,
    #[error("invalid speed bounds: v_min={v_min}, v_max={v_max}")]
    BadSpeed { v_min: f64, v_max: f64 },
    #[error("mobility time step must be positive (got {0})")]
    BadTimeStep(f64),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory not time-sorted at waypoint {index}")]
    Unsorted { index: usize },
    #[error("ns2 parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridMap {
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub block_len: f64,
    pub lane_offset: f64,
}

impl Default for GridMap {
    fn default() -> Self {
        GridMap { blocks_x: 3, blocks_y: 3, block_len: 200.0, lane_offset: 2.0 }
    }
}

impl GridMap {
    pub fn validate(&self) -> Result<(), MobilityError> {
        if self.blocks_x == 0 || self.blocks_y == 0 {
            return Err(MobilityError::NoStreets { blocks_x: self.blocks_x, blocks_y: self.blocks_y });
        }
        if !(self.block_len > 0.0) || !self.block_len.is_finite() {
            return Err(MobilityError::BadBlockLength(self.block_len));
        }
        if !(self.lane_offset >= 0.0 && self.lane_offset < self.block_len / 2.0) {
            return Err(MobilityError::BadLaneOffset(self.lane_offset));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.blocks_x as f64 * self.block_len
    }

    pub fn height(&self) -> f64 {
        self.blocks_y as f64 * self.block_len
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width() / 2.0, self.height() / 2.0)
    }

    fn max_index(&self, axis: Axis) -> u32 {
        match axis {
            Axis::Horizontal => self.blocks_x,
            Axis::Vertical => self.blocks_y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub fn axis(self) -> Axis {
        match self {
            Direction::East | Direction::West => Axis::Horizontal,
            Direction::North | Direction::South => Axis::Vertical,
        }
    }

    /// +1 when travel increases the coordinate along the street.
    fn sign(self) -> i64 {
        match self {
            Direction::North | Direction::East => 1,
            Direction::South | Direction::West => -1,
        }
    }

    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    pub fn right(self) -> Direction {
        match self {
            Direction::North => Direction::East,
            Direction::East => Direction::South,
            Direction::South => Direction::West,
            Direction::West => Direction::North,
        }
    }

    pub fn apply(self, turn: Turn) -> Direction {
        match turn {
            Turn::Left => self.left(),
            Turn::Right => self.right(),
            Turn::Straight => self,
        }
    }

    /// Lateral displacement of this direction's lane from the centerline.
    fn lane_shift(self, offset: f64) -> (f64, f64) {
        match self {
            Direction::East => (0.0, -offset),
            Direction::West => (0.0, offset),
            Direction::North => (offset, 0.0),
            Direction::South => (-offset, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Right,
    Straight,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Right, Turn::Straight];

    fn weight(self) -> f64 {
        match self {
            Turn::Left | Turn::Right => 1.0,
            Turn::Straight => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TurnDecision {
    pub choice: Turn,
}

/// Exits open at an intersection, in `Turn::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exits {
    pub left: bool,
    pub right: bool,
    pub straight: bool,
}

impl Exits {
    pub const ALL_OPEN: Exits = Exits { left: true, right: true, straight: true };

    pub fn allows(&self, turn: Turn) -> bool {
        match turn {
            Turn::Left => self.left,
            Turn::Right => self.right,
            Turn::Straight => self.straight,
        }
    }

    pub fn is_interior(&self) -> bool {
        self.left && self.right && self.straight
    }
}

/// Map one uniform draw onto a turn. With every exit open the sub-intervals
/// are `[0,0.25)` left, `[0.25,0.5)` right, `[0.5,1)` straight; closed exits
/// are dropped and the rest rescaled.
pub fn turn_from_draw(draw: f64, exits: Exits) -> Turn {
    let total: f64 = Turn::ALL.iter().filter(|t| exits.allows(**t)).map(|t| t.weight()).sum();
    debug_assert!(total > 0.0, "intersection without exits");
    let mut acc = 0.0;
    let mut last = Turn::Straight;
    for turn in Turn::ALL.into_iter().filter(|t| exits.allows(*t)) {
        acc += turn.weight() / total;
        last = turn;
        if draw < acc {
            return turn;
        }
    }
    last
}

pub fn choose_turn(rng: &mut RngStream, exits: Exits) -> TurnDecision {
    TurnDecision { choice: turn_from_draw(rng.uniform(), exits) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedParams {
    pub v_min: f64,
    pub v_max: f64,
    /// m/s², bound on the per-step speed change.
    pub a_max: f64,
    /// Gap under which the front node caps this node's speed, meters.
    pub safety_dist: f64,
}

impl Default for SpeedParams {
    fn default() -> Self {
        SpeedParams { v_min: 15.0, v_max: 15.0, a_max: 2.0, safety_dist: 10.0 }
    }
}

impl SpeedParams {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let ok = self.v_min >= 0.0
            && self.v_min <= self.v_max
            && self.v_max.is_finite()
            && self.a_max >= 0.0
            && self.safety_dist >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(MobilityError::BadSpeed { v_min: self.v_min, v_max: self.v_max })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LaneId {
    pub axis: Axis,
    pub street: u32,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobState {
    pub node_id: usize,
    pub direction: Direction,
    /// Index of the street line the node is on (y index for horizontal streets).
    pub street: u32,
    /// Centerline coordinate along the street.
    pub along: f64,
    /// Lattice index (along the street) of the next intersection ahead.
    pub next_intersection: u32,
    pub speed: f64,
}

impl MobState {
    pub fn lane_id(&self) -> LaneId {
        LaneId { axis: self.direction.axis(), street: self.street, direction: self.direction }
    }

    pub fn dist_to_next_intersection(&self, grid: &GridMap) -> f64 {
        let target = self.next_intersection as f64 * grid.block_len;
        (target - self.along).abs()
    }

    pub fn centerline(&self, grid: &GridMap) -> (f64, f64) {
        let cross = self.street as f64 * grid.block_len;
        match self.direction.axis() {
            Axis::Horizontal => (self.along, cross),
            Axis::Vertical => (cross, self.along),
        }
    }

    /// Position on the node's directed lane.
    pub fn position(&self, grid: &GridMap) -> (f64, f64) {
        let (cx, cy) = self.centerline(grid);
        let (dx, dy) = self.direction.lane_shift(grid.lane_offset);
        (cx + dx, cy + dy)
    }

    /// The point on this lane at the next intersection.
    pub fn next_waypoint(&self, grid: &GridMap) -> (f64, f64) {
        let cross = self.street as f64 * grid.block_len;
        let at = self.next_intersection as f64 * grid.block_len;
        let (cx, cy) = match self.direction.axis() {
            Axis::Horizontal => (at, cross),
            Axis::Vertical => (cross, at),
        };
        let (dx, dy) = self.direction.lane_shift(grid.lane_offset);
        (cx + dx, cy + dy)
    }

    /// Lattice coordinates `(i, j)` of the next intersection.
    fn next_lattice(&self) -> (u32, u32) {
        match self.direction.axis() {
            Axis::Horizontal => (self.next_intersection, self.street),
            Axis::Vertical => (self.street, self.next_intersection),
        }
    }
}

fn exits_at(grid: &GridMap, at: (u32, u32), heading: Direction) -> Exits {
    let open = |d: Direction| -> bool {
        let (idx, max) = match d.axis() {
            Axis::Horizontal => (at.0 as i64, grid.max_index(Axis::Horizontal) as i64),
            Axis::Vertical => (at.1 as i64, grid.max_index(Axis::Vertical) as i64),
        };
        let next = idx + d.sign();
        (0..=max).contains(&next)
    };
    Exits { left: open(heading.left()), right: open(heading.right()), straight: open(heading) }
}

/// Put `n` nodes uniformly on the directed lanes of `grid`.
pub fn init_placement(
    grid: &GridMap,
    n: usize,
    speed: &SpeedParams,
    rng: &mut RngStream,
) -> Result<Vec<MobState>, MobilityError> {
    grid.validate()?;
    if n == 0 {
        return Err(MobilityError::NoNodes);
    }
    let h_len = grid.width();
    let v_len = grid.height();
    let h_lanes = 2 * (grid.blocks_y + 1) as usize;
    let v_lanes = 2 * (grid.blocks_x + 1) as usize;
    let total = h_lanes as f64 * h_len + v_lanes as f64 * v_len;

    let mut nodes = Vec::with_capacity(n);
    for node_id in 0..n {
        let mut pick = rng.uniform() * total;
        let v = speed.v_min + rng.uniform() * (speed.v_max - speed.v_min);
        let (lane, len, axis) = if pick < h_lanes as f64 * h_len {
            ((pick / h_len).floor() as usize, h_len, Axis::Horizontal)
        } else {
            pick -= h_lanes as f64 * h_len;
            ((pick / v_len).floor() as usize, v_len, Axis::Vertical)
        };
        let lanes_here = if axis == Axis::Horizontal { h_lanes } else { v_lanes };
        let lane = lane.min(lanes_here - 1);
        let along = (pick - lane as f64 * len).clamp(0.0, len * (1.0 - f64::EPSILON));
        let street = (lane / 2) as u32;
        let direction = match (axis, lane % 2) {
            (Axis::Horizontal, 0) => Direction::East,
            (Axis::Horizontal, _) => Direction::West,
            (Axis::Vertical, 0) => Direction::North,
            (Axis::Vertical, _) => Direction::South,
        };
        let k = (along / grid.block_len).floor() as u32;
        let next_intersection = if direction.sign() > 0 { k + 1 } else { k };
        nodes.push(MobState { node_id, direction, street, along, next_intersection, speed: v });
    }
    Ok(nodes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontNode {
    pub gap: f64,
    pub speed: f64,
}

/// Nearest node ahead of `state` on the same lane segment.
pub fn front_node(state: &MobState, others: &[MobState]) -> Option<FrontNode> {
    let sign = state.direction.sign() as f64;
    others
        .iter()
        .filter(|o| {
            o.node_id != state.node_id
                && o.lane_id() == state.lane_id()
                && o.next_intersection == state.next_intersection
        })
        .filter_map(|o| {
            let gap = (o.along - state.along) * sign;
            (gap > 0.0).then_some(FrontNode { gap, speed: o.speed })
        })
        .min_by(|a, b| a.gap.total_cmp(&b.gap))
}

/// Correlated speed update, capped by the front node when it is too close.
pub fn update_speed(
    state: &MobState,
    front: Option<FrontNode>,
    params: &SpeedParams,
    dt: f64,
    rng: &mut RngStream,
) -> f64 {
    let u = 2.0 * rng.uniform() - 1.0;
    let candidate = (state.speed + params.a_max * u * dt).clamp(params.v_min, params.v_max);
    match front {
        Some(f) if f.gap < params.safety_dist => candidate.min(f.speed),
        _ => candidate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Seconds into the step at which the intersection was reached.
    pub offset: f64,
    pub at: (u32, u32),
    pub turn: Turn,
    pub interior: bool,
    pub state_after: MobState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: MobState,
    pub crossings: Vec<Crossing>,
}

/// Advance one node by `dt`. Distance left over after reaching an
/// intersection is spent on the outgoing street within the same step.
pub fn step(
    state: &MobState,
    dt: f64,
    grid: &GridMap,
    same_lane_neighbors: &[MobState],
    params: &SpeedParams,
    rng: &mut RngStream,
) -> StepOutcome {
    let front = front_node(state, same_lane_neighbors);
    let speed = update_speed(state, front, params, dt, rng);
    let mut s = MobState { speed, ..*state };
    let total = speed * dt;
    let mut remaining = total;
    let mut crossings = Vec::new();

    loop {
        let d = s.dist_to_next_intersection(grid);
        if remaining <= 0.0 || remaining < d {
            s.along += s.direction.sign() as f64 * remaining.max(0.0);
            break;
        }
        remaining -= d;
        let at = s.next_lattice();
        let exits = exits_at(grid, at, s.direction);
        let turn = choose_turn(rng, exits).choice;
        let heading = s.direction.apply(turn);
        let (street, along_idx) = match heading.axis() {
            Axis::Horizontal => (at.1, at.0),
            Axis::Vertical => (at.0, at.1),
        };
        s.direction = heading;
        s.street = street;
        s.along = along_idx as f64 * grid.block_len;
        s.next_intersection = (along_idx as i64 + heading.sign()) as u32;
        let offset = if speed > 0.0 { (total - remaining) / speed } else { 0.0 };
        crossings.push(Crossing { offset, at, turn, interior: exits.is_interior(), state_after: s });
    }
    StepOutcome { state: s, crossings }
}

/// Tally of turns taken at interior intersections.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnCounts {
    pub left: u64,
    pub right: u64,
    pub straight: u64,
}

impl TurnCounts {
    pub fn total(&self) -> u64 {
        self.left + self.right + self.straight
    }

    pub fn record(&mut self, turn: Turn) {
        match turn {
            Turn::Left => self.left += 1,
            Turn::Right => self.right += 1,
            Turn::Straight => self.straight += 1,
        }
    }

    /// Pearson statistic against (0.25, 0.25, 0.5).
    pub fn chi_square(&self) -> f64 {
        let n = self.total() as f64;
        [(self.left, 0.25), (self.right, 0.25), (self.straight, 0.5)]
            .iter()
            .map(|(obs, p)| {
                let e = n * p;
                (*obs as f64 - e).powi(2) / e
            })
            .sum()
    }

    /// Upper-tail probability for two degrees of freedom.
    pub fn chi_square_p_value(&self) -> f64 {
        (-self.chi_square() / 2.0).exp()
    }
}

/// All nodes of a scenario advancing in lockstep, with trajectory recording.
#[derive(Debug, Clone)]
pub struct MobilityModel {
    grid: GridMap,
    params: SpeedParams,
    dt: f64,
    nodes: Vec<MobState>,
    rng: RngStream,
    elapsed: f64,
    trace: MobilityTrace,
    interior_turns: TurnCounts,
}

impl MobilityModel {
    pub fn new(
        grid: GridMap,
        params: SpeedParams,
        dt: f64,
        n: usize,
        mut rng: RngStream,
    ) -> Result<Self, MobilityError> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(MobilityError::BadTimeStep(dt));
        }
        let nodes = init_placement(&grid, n, &params, &mut rng)?;
        let mut trace = MobilityTrace::default();
        for s in &nodes {
            let (x, y) = s.position(&grid);
            trace.initial.push((s.node_id, x, y));
            let (wx, wy) = s.next_waypoint(&grid);
            trace.waypoints.push(Waypoint { time: 0.0, node_id: s.node_id, x: wx, y: wy, speed: s.speed });
        }
        Ok(MobilityModel { grid, params, dt, nodes, rng, elapsed: 0.0, trace, interior_turns: TurnCounts::default() })
    }

    pub fn grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[MobState] {
        &self.nodes
    }

    pub fn position(&self, node: usize) -> (f64, f64) {
        self.nodes[node].position(&self.grid)
    }

    pub fn trace(&self) -> &MobilityTrace {
        &self.trace
    }

    pub fn interior_turns(&self) -> TurnCounts {
        self.interior_turns
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Advance every node by one time step; `t_start` stamps the waypoints.
    pub fn advance(&mut self, t_start: f64) {
        let snapshot = self.nodes.clone();
        let mut waypoints = Vec::new();
        for i in 0..self.nodes.len() {
            let before = snapshot[i];
            let out = step(&before, self.dt, &self.grid, &snapshot, &self.params, &mut self.rng);
            if out.state.speed != before.speed {
                let dest_state = MobState { speed: out.state.speed, ..before };
                let (x, y) = dest_state.next_waypoint(&self.grid);
                waypoints.push(Waypoint { time: t_start, node_id: i, x, y, speed: out.state.speed });
            }
            for c in &out.crossings {
                if c.interior {
                    self.interior_turns.record(c.turn);
                }
                let (x, y) = c.state_after.next_waypoint(&self.grid);
                waypoints.push(Waypoint { time: t_start + c.offset, node_id: i, x, y, speed: c.state_after.speed });
            }
            self.nodes[i] = out.state;
        }
        // nodes are processed in id order; keep the trace time-sorted
        waypoints.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.node_id.cmp(&b.node_id)));
        self.trace.waypoints.extend(waypoints);
        self.elapsed = t_start + self.dt;
    }
}

/// Distance between a node's position and the nearest lane line of its
/// travel axis; infinite when the node is off the grid. Computed from the
/// position alone so it can audit the stepping code.
pub fn lane_deviation(grid: &GridMap, state: &MobState) -> f64 {
    let (x, y) = state.position(grid);
    let (along, lateral, along_max, streets) = match state.direction.axis() {
        Axis::Horizontal => (x, y, grid.width(), grid.blocks_y),
        Axis::Vertical => (y, x, grid.height(), grid.blocks_x),
    };
    if along < -1e-9 || along > along_max + 1e-9 {
        return f64::INFINITY;
    }
    let k = (lateral / grid.block_len).round().clamp(0.0, streets as f64);
    ((lateral - k * grid.block_len).abs() - grid.lane_offset).abs()
}
