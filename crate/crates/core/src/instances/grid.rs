//! Gridworlds described by a small JSON document.
//!
//! `cells` holds one string per row with one character per cell:
//!
//! | code | cell |
//! |------|------|
//! | `.` | ordinary |
//! | `S` | start (exactly one) |
//! | `#` | blocked |
//! | `X` | cliff edge |
//! | `g` | grass |
//! | `m` | mud |
//! | `G` | goal paying `rewards.goal` |
//! | `1`..`9` | labelled goal paying `rewards.goals["<digit>"]` |
//!
//! Actions are up, down, left, right (indices 0 to 3), available when the
//! neighbouring cell exists and is not blocked. A goal has one action (index 0)
//! that returns to the start. Acting in a grass or mud cell pays the grass or
//! mud reward, elsewhere the step reward. An action is inadmissible when it can
//! move the agent into a cell whose code is listed in `inadmissible`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, DetPolicy, Mdp, RewardTable};
use crate::policy_search::AdmissibleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    fn arrow(self) -> char {
        match self {
            Direction::Up => '^',
            Direction::Down => 'v',
            Direction::Left => '<',
            Direction::Right => '>',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Ordinary,
    Start,
    Blocked,
    Cliff,
    Grass,
    Mud,
    Goal(Option<char>),
}

impl CellKind {
    fn parse(c: char) -> Option<Self> {
        Some(match c {
            '.' => CellKind::Ordinary,
            'S' => CellKind::Start,
            '#' => CellKind::Blocked,
            'X' => CellKind::Cliff,
            'g' => CellKind::Grass,
            'm' => CellKind::Mud,
            'G' => CellKind::Goal(None),
            '1'..='9' => CellKind::Goal(Some(c)),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRewards {
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub goals: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mud: Option<f64>,
}

/// With probability `prob`, taking `action` at `(row, col)` moves toward `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slip {
    pub row: usize,
    pub col: usize,
    pub action: Direction,
    pub to: Direction,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub cells: Vec<String>,
    pub rewards: GridRewards,
    /// Directions offered in non-goal cells; all four when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Direction>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slips: Vec<Slip>,
    /// Cell codes that must not be entered.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inadmissible: Vec<String>,
}

/// A built gridworld and the state index of every open cell.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub mdp: Mdp,
    pub admissible: AdmissibleSet,
    /// `(row, col)` of each state.
    pub cells: Vec<(usize, usize)>,
    pub rows: usize,
    pub cols: usize,
    kinds: Vec<Vec<CellKind>>,
    codes: Vec<Vec<char>>,
}

fn bad(row: usize, col: usize, msg: impl std::fmt::Display) -> Error {
    Error::BadSpec(format!("cell ({row}, {col}): {msg}"))
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// Builds the MDP and admissible set of a grid.
pub fn grid_from_config(spec: &GridSpec) -> Result<(Mdp, AdmissibleSet)> {
    let world = build_grid(spec)?;
    Ok((world.mdp, world.admissible))
}

pub fn build_grid(spec: &GridSpec) -> Result<GridWorld> {
    let codes: Vec<Vec<char>> = spec.cells.iter().map(|r| r.chars().collect()).collect();
    let rows = codes.len();
    let cols = codes.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::BadSpec("grid has no cells".into()));
    }
    let mut kinds = Vec::with_capacity(rows);
    for (r, line) in codes.iter().enumerate() {
        if line.len() != cols {
            return Err(bad(r, line.len().min(cols), format!("row has {} cells, expected {cols}", line.len())));
        }
        let mut row = Vec::with_capacity(cols);
        for (c, &ch) in line.iter().enumerate() {
            row.push(CellKind::parse(ch).ok_or_else(|| bad(r, c, format!("unknown cell kind '{ch}'")))?);
        }
        kinds.push(row);
    }
    for code in &spec.inadmissible {
        let mut chars = code.chars();
        match (chars.next(), chars.next()) {
            (Some(ch), None) if CellKind::parse(ch).is_some() => {}
            _ => return Err(Error::BadSpec(format!("unknown inadmissible cell code '{code}'"))),
        }
    }

    let mut index = vec![vec![None; cols]; rows];
    let mut cells = Vec::new();
    let mut start = None;
    for r in 0..rows {
        for c in 0..cols {
            match kinds[r][c] {
                CellKind::Blocked => continue,
                CellKind::Start if start.is_some() => return Err(bad(r, c, "second start cell")),
                CellKind::Start => start = Some(cells.len()),
                _ => {}
            }
            index[r][c] = Some(cells.len());
            cells.push((r, c));
        }
    }
    let start = start.ok_or_else(|| Error::BadSpec("grid has no start cell".into()))?;
    if !cells.iter().any(|&(r, c)| matches!(kinds[r][c], CellKind::Goal(_))) {
        return Err(Error::BadSpec("grid has no goal cell".into()));
    }

    let neighbor = |r: usize, c: usize, d: Direction| -> Option<usize> {
        let (dr, dc) = d.offset();
        let nr = r.checked_add_signed(dr)?;
        let nc = c.checked_add_signed(dc)?;
        if nr >= rows || nc >= cols {
            return None;
        }
        index[nr][nc]
    };
    let offered = spec.actions.clone().unwrap_or_else(|| Direction::ALL.to_vec());

    let ns = cells.len();
    let mut transitions = vec![vec![vec![0.0; ns]; 4]; ns];
    let mut reward = RewardTable::zeros(ns, 4);
    let mut available = vec![vec![false; 4]; ns];
    for (s, &(r, c)) in cells.iter().enumerate() {
        let kind = kinds[r][c];
        if let CellKind::Goal(label) = kind {
            let value = match label {
                None => spec.rewards.goal.ok_or_else(|| bad(r, c, "goal reward missing (rewards.goal)"))?,
                Some(ch) => *spec
                    .rewards
                    .goals
                    .get(&ch.to_string())
                    .ok_or_else(|| bad(r, c, format!("reward for goal '{ch}' missing (rewards.goals)")))?,
            };
            available[s][0] = true;
            transitions[s][0][start] = 1.0;
            reward[(s, 0)] = value;
            continue;
        }
        let value = match kind {
            CellKind::Grass => spec.rewards.grass.ok_or_else(|| bad(r, c, "grass reward missing"))?,
            CellKind::Mud => spec.rewards.mud.ok_or_else(|| bad(r, c, "mud reward missing"))?,
            _ => spec.rewards.step,
        };
        for &d in &offered {
            if let Some(n) = neighbor(r, c, d) {
                available[s][d.index()] = true;
                transitions[s][d.index()][n] = 1.0;
                reward[(s, d.index())] = value;
            }
        }
        if !available[s].iter().any(|&b| b) {
            return Err(bad(r, c, "no action leads anywhere"));
        }
    }

    for slip in &spec.slips {
        let (r, c) = (slip.row, slip.col);
        let s = index.get(r).and_then(|row| row.get(c).copied().flatten()).ok_or_else(|| bad(r, c, "slip on a missing cell"))?;
        if !(0.0..=1.0).contains(&slip.prob) {
            return Err(bad(r, c, format!("slip probability {} outside [0, 1]", slip.prob)));
        }
        let a = slip.action.index();
        if !available[s][a] || matches!(kinds[r][c], CellKind::Goal(_)) {
            return Err(bad(r, c, format!("slip on unavailable action {:?}", slip.action)));
        }
        let to = neighbor(r, c, slip.to).ok_or_else(|| bad(r, c, format!("slip direction {:?} leaves the grid", slip.to)))?;
        let row = &mut transitions[s][a];
        for p in row.iter_mut() {
            *p *= 1.0 - slip.prob;
        }
        row[to] += slip.prob;
    }

    let mut sigma = vec![0.0; ns];
    sigma[start] = 1.0;
    // unavailable actions self-loop so that every row stays stochastic
    for s in 0..ns {
        for a in 0..4 {
            if !available[s][a] {
                transitions[s][a][s] = 1.0;
            }
        }
    }
    let mdp = Mdp::with_available(transitions, reward, 0.9, sigma, Some(ActionMask(available)))?;

    let banned: Vec<char> = spec.inadmissible.iter().filter_map(|c| c.chars().next()).collect();
    let mut mask = ActionMask::full(ns, 4);
    for s in 0..ns {
        for a in mdp.available_actions(s).collect::<Vec<_>>() {
            if mdp.successors(s, a).iter().any(|&(n, _)| {
                let (r, c) = cells[n];
                banned.contains(&codes[r][c])
            }) {
                mask.0[s][a] = false;
            }
        }
    }
    Ok(GridWorld { mdp, admissible: AdmissibleSet::new(mask), cells, rows, cols, kinds, codes })
}

impl GridWorld {
    /// Same world with a different discount.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        let mut file = self.mdp.to_file(None);
        file.gamma = gamma;
        self.mdp = crate::mdp::validate_mdp(&file)?;
        Ok(self)
    }

    /// Draws the grid with the policy's action in every visited open cell.
    pub fn render_policy(&self, policy: &DetPolicy) -> Result<String> {
        let occ = crate::planning::occupancy(&self.mdp, policy)?;
        let mut lines = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut line = String::with_capacity(self.cols);
            for c in 0..self.cols {
                let shown = match self.cells.iter().position(|&p| p == (r, c)) {
                    Some(s) if occ.visits(s) && !matches!(self.kinds[r][c], CellKind::Goal(_)) => {
                        Direction::ALL[policy.action(s)].arrow()
                    }
                    _ => self.codes[r][c],
                };
                line.push(shown);
            }
            lines.push(line);
        }
        Ok(lines.join("\n"))
    }
}
