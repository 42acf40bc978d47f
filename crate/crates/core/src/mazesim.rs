//! Kinematic point-mass agent in a walled grid maze.
//!
//! Cell `(row, col)` covers `x ∈ [col·s, (col+1)·s)`, `y ∈ [row·s, (row+1)·s)`
//! with `s` the cell size; row 0 is the first line of the ASCII layout. The
//! agent is a disc of radius `0.2·s`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("maze layout is empty")]
    Empty,
    #[error("ragged maze row {row}: expected {expected} columns, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("unexpected character {ch:?} at row {row}, column {col}")]
    BadChar { row: usize, col: usize, ch: char },
    #[error("outer boundary is not fully walled")]
    OpenBoundary,
    #[error("maze has no free cell with enough clearance")]
    NoFreeCell,
    #[error("invalid world parameter: {0}")]
    InvalidParam(String),
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    InvalidPose { x: f64, y: f64 },
    #[error("unknown built-in maze `{0}`")]
    UnknownMaze(String),
    #[error("io error reading maze: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MazeError>;

pub const SIMPLE: &str = include_str!("../mazes/simple.txt");
pub const STANDARD: &str = include_str!("../mazes/standard.txt");
pub const COMPLEX: &str = include_str!("../mazes/complex.txt");

pub const RADIUS_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub cell_size: f64,
    /// Per-axis speed limit, m/s.
    pub v_max: f64,
    pub omega_max: f64,
    /// Seconds per control step.
    pub dt: f64,
    /// 2: world-frame (v_x, v_y); 3: body-frame surge, sway and yaw rate.
    pub action_dims: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams { cell_size: 1.0, v_max: 0.5, omega_max: 1.0, dt: 0.5, action_dims: 2 }
    }
}

impl WorldParams {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(MazeError::InvalidParam(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.cell_size, "cell_size")?;
        positive(self.v_max, "v_max")?;
        positive(self.omega_max, "omega_max")?;
        positive(self.dt, "dt")?;
        if !matches!(self.action_dims, 2 | 3) {
            return Err(MazeError::InvalidParam(format!(
                "action_dims must be 2 or 3, got {}",
                self.action_dims
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: wrap_angle(theta) }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wrap into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeWorld {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    params: WorldParams,
}

impl MazeWorld {
    /// `#` is a wall, `.` is free; every row must have the same width.
    pub fn from_ascii(text: &str, params: WorldParams) -> Result<Self> {
        params.validate()?;
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let cols = lines.first().ok_or(MazeError::Empty)?.chars().count();
        let mut walls = Vec::with_capacity(lines.len() * cols);
        for (row, line) in lines.iter().enumerate() {
            let found = line.chars().count();
            if found != cols {
                return Err(MazeError::Ragged { row, expected: cols, found });
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    ch => return Err(MazeError::BadChar { row, col, ch }),
                }
            }
        }
        let world = MazeWorld { rows: lines.len(), cols, walls, params };
        let boundary_walled = (0..world.rows)
            .all(|r| world.is_wall(r as isize, 0) && world.is_wall(r as isize, cols as isize - 1))
            && (0..cols).all(|c| {
                world.is_wall(0, c as isize) && world.is_wall(world.rows as isize - 1, c as isize)
            });
        if !boundary_walled {
            return Err(MazeError::OpenBoundary);
        }
        if world.free_cells().is_empty() {
            return Err(MazeError::NoFreeCell);
        }
        Ok(world)
    }

    pub fn load(path: &Path, params: WorldParams) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_ascii(&text, params)
    }

    /// `simple`, `standard` or `complex`.
    pub fn builtin(name: &str, params: WorldParams) -> Result<Self> {
        let text = match name {
            "simple" => SIMPLE,
            "standard" => STANDARD,
            "complex" => COMPLEX,
            other => return Err(MazeError::UnknownMaze(other.to_string())),
        };
        Self::from_ascii(text, params)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn cell_size(&self) -> f64 {
        self.params.cell_size
    }

    pub fn radius(&self) -> f64 {
        RADIUS_FRACTION * self.params.cell_size
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.params.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.params.cell_size
    }

    /// Out-of-grid cells count as walls.
    pub fn is_wall(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return true;
        }
        self.walls[row as usize * self.cols + col as usize]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&(r, c)| !self.walls[r * self.cols + c])
            .collect()
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (isize, isize) {
        let s = self.params.cell_size;
        ((y / s).floor() as isize, (x / s).floor() as isize)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.params.cell_size;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    /// True when a disc of the agent's radius at `(x, y)` overlaps a wall.
    pub fn collides(&self, x: f64, y: f64) -> bool {
        let s = self.params.cell_size;
        let rad = self.radius();
        if !x.is_finite() || !y.is_finite() {
            return true;
        }
        let (r0, c0) = self.cell_of(x - rad, y - rad);
        let (r1, c1) = self.cell_of(x + rad, y + rad);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if !self.is_wall(r, c) {
                    continue;
                }
                let (lx, ly) = (c as f64 * s, r as f64 * s);
                let dx = (lx - x).max(0.0).max(x - (lx + s));
                let dy = (ly - y).max(0.0).max(y - (ly + s));
                if dx * dx + dy * dy < rad * rad {
                    return true;
                }
            }
        }
        false
    }

    pub fn is_valid_pose(&self, pose: &Pose) -> bool {
        pose.theta.is_finite() && !self.collides(pose.x, pose.y)
    }

    /// World-frame velocity (m/s) and yaw rate commanded by an action.
    /// Components are clamped to `[-1, 1]`; NaN components count as zero.
    pub fn action_velocity(&self, pose: &Pose, action: &[f64]) -> (f64, f64, f64) {
        let comp = |i: usize| {
            let a = action.get(i).copied().unwrap_or(0.0);
            if a.is_nan() {
                0.0
            } else {
                a.clamp(-1.0, 1.0)
            }
        };
        let p = &self.params;
        if p.action_dims == 2 {
            (p.v_max * comp(0), p.v_max * comp(1), 0.0)
        } else {
            let surge = p.v_max * 0.5 * (comp(0) + 1.0);
            let sway = p.v_max * comp(1);
            let (sin, cos) = pose.theta.sin_cos();
            (surge * cos - sway * sin, surge * sin + sway * cos, p.omega_max * comp(2))
        }
    }

    /// Advance one control step. Each axis of the displacement is attempted
    /// separately (x first) and dropped if it would bring the disc into a wall.
    pub fn step(&self, pose: &Pose, action: &[f64]) -> Pose {
        let (vx, vy, omega) = self.action_velocity(pose, action);
        let dt = self.params.dt;
        let mut x = pose.x;
        let mut y = pose.y;
        let nx = x + vx * dt;
        if !self.collides(nx, y) {
            x = nx;
        }
        let ny = y + vy * dt;
        if !self.collides(x, ny) {
            y = ny;
        }
        Pose { x, y, theta: wrap_angle(pose.theta + omega * dt) }
    }

    /// Uniform random free pose with wall clearance. Heading is uniform for
    /// the 3-D action space and fixed at 0 for the 2-D one, where the agent
    /// cannot turn.
    pub fn reset<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Pose> {
        let cells: Vec<(usize, usize)> = self
            .free_cells()
            .into_iter()
            .filter(|&(r, c)| {
                let (cx, cy) = self.cell_center(r, c);
                !self.collides(cx, cy)
            })
            .collect();
        if cells.is_empty() {
            return Err(MazeError::NoFreeCell);
        }
        let s = self.params.cell_size;
        loop {
            let (r, c) = cells[rng.random_range(0..cells.len())];
            let x = (c as f64 + rng.random::<f64>()) * s;
            let y = (r as f64 + rng.random::<f64>()) * s;
            let theta = if self.params.action_dims == 3 {
                rng.random_range(-PI..PI)
            } else {
                0.0
            };
            if !self.collides(x, y) {
                return Ok(Pose { x, y, theta });
            }
        }
    }

    /// Validate and return a caller-provided pose.
    pub fn reset_to(&self, pose: Pose) -> Result<Pose> {
        if self.is_valid_pose(&pose) {
            Ok(Pose::new(pose.x, pose.y, pose.theta))
        } else {
            Err(MazeError::InvalidPose { x: pose.x, y: pose.y })
        }
    }

    /// First wall hit along a ray, found by grid traversal (Amanatides–Woo).
    pub fn cast_ray(&self, x: f64, y: f64, angle: f64, max_range: f64) -> RayHit {
        let s = self.params.cell_size;
        let (dy, dx) = angle.sin_cos();
        let (mut row, mut col) = self.cell_of(x, y);
        if self.is_wall(row, col) {
            return RayHit { depth: 0.0, cell: Some((row, col)), point: (x, y) };
        }
        let step_c: isize = if dx > 0.0 { 1 } else { -1 };
        let step_r: isize = if dy > 0.0 { 1 } else { -1 };
        let next_boundary = |pos: f64, cell: isize, dir: f64| {
            if dir > 0.0 {
                (cell as f64 + 1.0) * s - pos
            } else {
                pos - cell as f64 * s
            }
        };
        let mut t_max_x = if dx.abs() < 1e-12 { f64::INFINITY } else { next_boundary(x, col, dx) / dx.abs() };
        let mut t_max_y = if dy.abs() < 1e-12 { f64::INFINITY } else { next_boundary(y, row, dy) / dy.abs() };
        let t_delta_x = if dx.abs() < 1e-12 { f64::INFINITY } else { s / dx.abs() };
        let t_delta_y = if dy.abs() < 1e-12 { f64::INFINITY } else { s / dy.abs() };
        loop {
            let t = if t_max_x < t_max_y {
                col += step_c;
                let t = t_max_x;
                t_max_x += t_delta_x;
                t
            } else {
                row += step_r;
                let t = t_max_y;
                t_max_y += t_delta_y;
                t
            };
            if t >= max_range {
                return RayHit {
                    depth: max_range,
                    cell: None,
                    point: (x + dx * max_range, y + dy * max_range),
                };
            }
            if self.is_wall(row, col) {
                return RayHit { depth: t, cell: Some((row, col)), point: (x + dx * t, y + dy * t) };
            }
        }
    }

    /// `n_rays` rays spread evenly over `fov` (radians) centred on the
    /// heading, ordered from the leftmost (most negative offset) ray.
    pub fn cast_rays(&self, pose: &Pose, n_rays: usize, fov: f64, max_range: f64) -> Vec<RayHit> {
        (0..n_rays)
            .map(|i| {
                let offset = if n_rays == 1 {
                    0.0
                } else {
                    fov * (i as f64 / (n_rays - 1) as f64 - 0.5)
                };
                self.cast_ray(pose.x, pose.y, pose.theta + offset, max_range)
            })
            .collect()
    }

    pub fn raycast(&self, pose: &Pose, n_rays: usize, fov: f64, max_range: f64) -> Vec<f64> {
        self.cast_rays(pose, n_rays, fov, max_range).into_iter().map(|h| h.depth).collect()
    }

    /// Minimum travel time between the cells of two poses over the free-cell
    /// 8-neighbourhood. Axis moves take `s / v_max`; diagonal moves cover
    /// `√2·s` at the diagonal speed `√2·v_max`. Diagonals may not cut wall
    /// corners. `None` when no path exists.
    pub fn shortest_path_time(&self, start: &Pose, goal: &Pose) -> Option<f64> {
        let (sr, sc) = self.cell_of(start.x, start.y);
        let (gr, gc) = self.cell_of(goal.x, goal.y);
        if self.is_wall(sr, sc) || self.is_wall(gr, gc) {
            return None;
        }
        let s = self.params.cell_size;
        let v = self.params.v_max;
        let idx = |r: isize, c: isize| r as usize * self.cols + c as usize;
        let mut dist = vec![f64::INFINITY; self.rows * self.cols];
        let mut heap = BinaryHeap::new();
        dist[idx(sr, sc)] = 0.0;
        heap.push(Frontier { time: 0.0, row: sr, col: sc });
        while let Some(Frontier { time, row, col }) = heap.pop() {
            if (row, col) == (gr, gc) {
                return Some(time);
            }
            if time > dist[idx(row, col)] {
                continue;
            }
            for (dr, dc) in NEIGHBOURS {
                let (nr, nc) = (row + dr, col + dc);
                if self.is_wall(nr, nc) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && (self.is_wall(row + dr, col) || self.is_wall(row, col + dc)) {
                    continue;
                }
                let edge = if diagonal {
                    (2f64.sqrt() * s) / (2f64.sqrt() * v)
                } else {
                    s / v
                };
                let nt = time + edge;
                if nt < dist[idx(nr, nc)] {
                    dist[idx(nr, nc)] = nt;
                    heap.push(Frontier { time: nt, row: nr, col: nc });
                }
            }
        }
        None
    }
}

const NEIGHBOURS: [(isize, isize); 8] =
    [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub depth: f64,
    /// Wall cell hit, `None` when the ray reached `max_range`.
    pub cell: Option<(isize, isize)>,
    pub point: (f64, f64),
}

#[derive(Debug, PartialEq)]
struct Frontier {
    time: f64,
    row: isize,
    col: isize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| (other.row, other.col).cmp(&(self.row, self.col)))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
