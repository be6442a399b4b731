//! Gridworld and maze task families.
//!
//! States are the non-wall cells in row-major order. Actions are
//! up, down, left, right. Goal cells absorb with zero reward; entering a goal
//! pays the goal's value and every other transition pays `step_reward`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{uniform_prior, PolicyTable, RewardTable, TabularDynamics, Task};

pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Free,
    Wall,
    /// Absorbing goal. `None` pays the grid's `goal_reward`.
    Goal(Option<f64>),
    Start,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height * width` cells.
    pub cells: Vec<Cell>,
    pub slip_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
}

/// A task built from a grid, with the cell of each state.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTask {
    pub task: Task,
    /// `(row, col)` of each state.
    pub coords: Vec<(usize, usize)>,
    /// Non-fatal diagnostics such as unreachable goals.
    pub warnings: Vec<String>,
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn laterals(action: usize) -> [usize; 2] {
    if action < 2 {
        [2, 3]
    } else {
        [0, 1]
    }
}

impl GridSpec {
    pub fn new(width: usize, height: usize, cells: Vec<Cell>) -> Result<Self> {
        let spec = Self {
            width,
            height,
            cells,
            slip_prob: 0.0,
            step_reward: 0.0,
            goal_reward: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Grid(
                "grid must have at least one row and column".into(),
            ));
        }
        if self.cells.len() != self.width * self.height {
            return Err(Error::Grid(format!(
                "{} cells for a {}x{} grid",
                self.cells.len(),
                self.height,
                self.width
            )));
        }
        if self.cells.iter().all(|c| *c == Cell::Wall) {
            return Err(Error::Grid("grid has no free cells".into()));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::Grid(format!(
                "slip probability {} not in [0, 1)",
                self.slip_prob
            )));
        }
        if !self.step_reward.is_finite() || !self.goal_reward.is_finite() {
            return Err(Error::Grid("rewards must be finite".into()));
        }
        for cell in &self.cells {
            if let Cell::Goal(Some(v)) = cell {
                if !v.is_finite() {
                    return Err(Error::Grid("goal values must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn with_slip(mut self, slip_prob: f64) -> Result<Self> {
        self.slip_prob = slip_prob;
        self.validate()?;
        Ok(self)
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * self.width + col] = cell;
    }

    fn goal_value(&self, cell: Cell) -> Option<f64> {
        match cell {
            Cell::Goal(v) => Some(v.unwrap_or(self.goal_reward)),
            _ => None,
        }
    }

    fn step(&self, row: usize, col: usize, action: usize) -> (usize, usize) {
        let (dr, dc) = MOVES[action];
        let (r, c) = (row as isize + dr, col as isize + dc);
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            return (row, col);
        }
        let (r, c) = (r as usize, c as usize);
        if self.cell(r, c) == Cell::Wall {
            (row, col)
        } else {
            (r, c)
        }
    }

    /// Text map using `#`, `.`, `G`, `S`. Goals with a custom value print as `G`.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                out.push(match self.cell(row, col) {
                    Cell::Free => '.',
                    Cell::Wall => '#',
                    Cell::Goal(_) => 'G',
                    Cell::Start => 'S',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn to_document(&self) -> GridDocument {
        let mut goal_values = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                if let Cell::Goal(Some(reward)) = self.cell(row, col) {
                    goal_values.push(GoalValue { row, col, reward });
                }
            }
        }
        GridDocument {
            grid: self.render().lines().map(str::to_owned).collect(),
            slip_prob: self.slip_prob,
            step_reward: self.step_reward,
            goal_reward: self.goal_reward,
            goal_values,
        }
    }

    pub fn from_document(doc: &GridDocument) -> Result<Self> {
        let mut spec = parse_grid(&doc.grid.join("\n"))?;
        spec.slip_prob = doc.slip_prob;
        spec.step_reward = doc.step_reward;
        spec.goal_reward = doc.goal_reward;
        for g in &doc.goal_values {
            if g.row >= spec.height
                || g.col >= spec.width
                || !matches!(spec.cell(g.row, g.col), Cell::Goal(_))
            {
                return Err(Error::Grid(format!(
                    "goal value at ({}, {}) is not on a goal cell",
                    g.row, g.col
                )));
            }
            spec.set(g.row, g.col, Cell::Goal(Some(g.reward)));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Serialized grid: map rows plus parameters and per-cell goal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub grid: Vec<String>,
    #[serde(default)]
    pub slip_prob: f64,
    #[serde(default)]
    pub step_reward: f64,
    #[serde(default = "default_goal_reward")]
    pub goal_reward: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goal_values: Vec<GoalValue>,
}

fn default_goal_reward() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalValue {
    pub row: usize,
    pub col: usize,
    pub reward: f64,
}

/// Parses a rectangular block of `#` (wall), `.` (free), `G` (goal), `S` (start).
pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let rows: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let rows: Vec<&str> = {
        let end = rows
            .iter()
            .rposition(|l| !l.is_empty())
            .map_or(0, |i| i + 1);
        rows[..end].to_vec()
    };
    if rows.is_empty() {
        return Err(Error::Grid("empty grid".into()));
    }
    let width = rows[0].chars().count();
    let mut cells = Vec::with_capacity(width * rows.len());
    for (r, line) in rows.iter().enumerate() {
        if line.chars().count() != width {
            return Err(Error::Grid(format!(
                "row {r} has {} cells, expected {width}",
                line.chars().count()
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            cells.push(match ch {
                '#' => Cell::Wall,
                '.' => Cell::Free,
                'G' => Cell::Goal(None),
                'S' => Cell::Start,
                other => {
                    return Err(Error::Grid(format!(
                        "unknown character {other:?} at row {r}, column {c}"
                    )))
                }
            });
        }
    }
    GridSpec::new(width, rows.len(), cells)
}

/// Builds the task for a grid. `prior = None` uses the uniform prior.
pub fn grid_to_task(
    spec: &GridSpec,
    gamma: f64,
    beta: f64,
    prior: Option<&PolicyTable>,
) -> Result<GridTask> {
    spec.validate()?;
    let mut index = vec![usize::MAX; spec.cells.len()];
    let mut coords = Vec::new();
    for row in 0..spec.height {
        for col in 0..spec.width {
            if spec.cell(row, col) != Cell::Wall {
                index[row * spec.width + col] = coords.len();
                coords.push((row, col));
            }
        }
    }
    let ns = coords.len();
    let na = MOVES.len();
    let mut probs = vec![0.0; ns * na * ns];
    let mut rewards = vec![0.0; ns * na * ns];
    for (s, &(row, col)) in coords.iter().enumerate() {
        let absorbing = matches!(spec.cell(row, col), Cell::Goal(_));
        for a in 0..na {
            let base = (s * na + a) * ns;
            if absorbing {
                probs[base + s] = 1.0;
                continue;
            }
            let lateral = laterals(a);
            let outcomes = [
                (a, 1.0 - spec.slip_prob),
                (lateral[0], spec.slip_prob / 2.0),
                (lateral[1], spec.slip_prob / 2.0),
            ];
            for (dir, p) in outcomes {
                if p == 0.0 {
                    continue;
                }
                let (r, c) = spec.step(row, col, dir);
                probs[base + index[r * spec.width + c]] += p;
            }
            for (n, &(r, c)) in coords.iter().enumerate() {
                rewards[base + n] = spec.goal_value(spec.cell(r, c)).unwrap_or(spec.step_reward);
            }
        }
    }
    let dynamics = TabularDynamics::from_dense(ns, na, probs)?;
    let reward = RewardTable::from_dense(ns, na, rewards)?;
    let prior = match prior {
        Some(p) => p.clone(),
        None => uniform_prior(ns, na)?,
    };
    let task = Task::new(dynamics, reward, gamma, beta, prior)?;
    let warnings = unreachable_goals(spec)
        .into_iter()
        .map(|(r, c)| format!("goal at row {r}, column {c} is unreachable"))
        .collect();
    Ok(GridTask {
        task,
        coords,
        warnings,
    })
}

/// Goals no non-goal cell can reach (from the start cells if any are marked).
pub fn unreachable_goals(spec: &GridSpec) -> Vec<(usize, usize)> {
    let mut seen = vec![false; spec.cells.len()];
    let mut queue = VecDeque::new();
    let has_start = spec.cells.contains(&Cell::Start);
    for (i, cell) in spec.cells.iter().enumerate() {
        let seed = if has_start {
            *cell == Cell::Start
        } else {
            matches!(cell, Cell::Free)
        };
        if seed {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (row, col) = (i / spec.width, i % spec.width);
        if matches!(spec.cell(row, col), Cell::Goal(_)) {
            continue;
        }
        for a in 0..MOVES.len() {
            let (r, c) = spec.step(row, col, a);
            let j = r * spec.width + c;
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    (0..spec.cells.len())
        .filter(|&i| matches!(spec.cells[i], Cell::Goal(_)) && !seen[i])
        .map(|i| (i / spec.width, i % spec.width))
        .collect()
}

/// Square maze with a central wall rising `wall_height` cells from just above
/// the bottom row. The chosen bottom corner pays `goal_reward`; the other
/// corner is also absorbing but pays nothing, so the left and right variants
/// share their dynamics.
pub fn simple_wall_maze(size: usize, wall_height: usize, goal: Side) -> Result<GridSpec> {
    if size < 5 || size % 2 == 0 {
        return Err(Error::Grid(format!(
            "maze size must be odd and at least 5, got {size}"
        )));
    }
    if wall_height < 1 || wall_height > size - 2 {
        return Err(Error::Grid(format!(
            "wall height must be in 1..={}, got {wall_height}",
            size - 2
        )));
    }
    let mut cells = vec![Cell::Free; size * size];
    let mid = size / 2;
    for row in (size - 1 - wall_height)..(size - 1) {
        cells[row * size + mid] = Cell::Wall;
    }
    let bottom = (size - 1) * size;
    let (hit, other) = match goal {
        Side::Left => (bottom, bottom + size - 1),
        Side::Right => (bottom + size - 1, bottom),
    };
    cells[hit] = Cell::Goal(None);
    cells[other] = Cell::Goal(Some(0.0));
    cells[mid] = Cell::Start;
    GridSpec::new(size, size, cells)
}

/// Which wall a spiral subtask rewards reaching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpiralGoal {
    Left,
    Down,
}

fn spiral_layout(size: usize) -> Vec<Cell> {
    let n = size;
    let mut cells = vec![Cell::Free; n * n];
    for r in 0..n {
        for c in 0..n {
            let depth = r.min(c).min(n - 1 - r).min(n - 1 - c);
            if depth % 2 == 1 {
                cells[r * n + c] = Cell::Wall;
            }
        }
    }
    let mut d = 1;
    while 2 * d < n {
        let side = n - 2 * d;
        if d % 2 == 1 && side >= 3 {
            // opening into the next corridor ring
            cells[d * n + d + 1] = Cell::Free;
        } else if d % 2 == 0 && side >= 3 {
            // blocker that turns the ring into a one-way corridor
            cells[d * n + d + 1] = Cell::Wall;
        }
        d += 1;
    }
    cells
}

/// Spiral corridor maze and its two subtasks.
///
/// The spiral fills rows `0..size-1` and columns `1..size`. Its outer ring is
/// an open corridor; each inner wall ring has one opening and each inner
/// corridor ring one blocker, so the corridor winds inward to a dead end
/// marked as the start. Column 0 and the bottom row hold the goal strips,
/// each cell reachable from the adjacent corridor. The bottom-left corner
/// belongs to both strips and is entered through its two free neighbours.
/// Both strips absorb in both subtasks; only the rewarded strip differs.
pub fn spiral_maze(size: usize) -> Result<(GridSpec, GridSpec)> {
    if size < 7 {
        return Err(Error::Grid(format!(
            "spiral maze needs size at least 7, got {size}"
        )));
    }
    let n = size;
    let m = n - 1;
    let inner = spiral_layout(m);
    let mut cells = vec![Cell::Free; n * n];
    for r in 0..m {
        for c in 0..m {
            cells[r * n + c + 1] = inner[r * m + c];
        }
    }

    // start at the spiral cell farthest from its outer corridor
    let probe = GridSpec::new(m, m, inner)?;
    let mut dist = vec![usize::MAX; m * m];
    let mut queue = VecDeque::new();
    for r in 0..m {
        for c in 0..m {
            if r == 0 || c == 0 || r == m - 1 || c == m - 1 {
                dist[r * m + c] = 0;
                queue.push_back(r * m + c);
            }
        }
    }
    let mut far = 0;
    while let Some(i) = queue.pop_front() {
        if dist[i] > dist[far] {
            far = i;
        }
        for a in 0..MOVES.len() {
            let (r, c) = probe.step(i / m, i % m, a);
            let j = r * m + c;
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    cells[(far / m) * n + far % m + 1] = Cell::Start;

    let mut left = cells.clone();
    let mut down = cells;
    let corner = (n - 1) * n;
    for k in 0..n - 2 {
        let left_cell = k * n;
        let bottom_cell = corner + k + 2;
        left[left_cell] = Cell::Goal(None);
        down[left_cell] = Cell::Goal(Some(0.0));
        left[bottom_cell] = Cell::Goal(Some(0.0));
        down[bottom_cell] = Cell::Goal(None);
    }
    left[corner] = Cell::Goal(None);
    down[corner] = Cell::Goal(None);
    Ok((GridSpec::new(n, n, left)?, GridSpec::new(n, n, down)?))
}
