//! Built-in benchmark environments.
//!
//! All three use `gamma = 0.95` and model the end of an episode as an
//! absorbing zero-reward `done` state, so the hidden-state counts below do
//! not include it.
//!
//! CheeseMaze layout (`G` is the goal, `#` walls):
//!
//! ```text
//! #######
//! #01234#
//! #5#6#7#
//! #8#G#A#
//! #######
//! ```
//!
//! Locations are numbered row by row; `G` is location 9 and `A` is 10. The
//! agent observes which of its four neighbours (N, E, S, W) are walls, so
//! locations with the same wall pattern are indistinguishable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::Pomdp;

pub const DISCOUNT: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub pomdp: Pomdp,
    pub param_overrides: BTreeMap<String, f64>,
    pub notes: String,
}

impl EnvSpec {
    /// Wrap a model loaded from file.
    pub fn from_pomdp(name: impl Into<String>, pomdp: Pomdp) -> Result<Self> {
        pomdp.validate()?;
        Ok(EnvSpec {
            name: name.into(),
            pomdp,
            param_overrides: BTreeMap::new(),
            notes: "loaded from a model file".into(),
        })
    }

    /// `R_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.pomdp.reward_bounds.1.max(0.0) / (1.0 - self.pomdp.discount)
    }

    /// Softmax temperature used to extract behavior policies for this
    /// environment (15 for the maze, 0.05 for Tiger, 0.3 for Voicemail).
    pub fn softmax_tau(&self) -> f64 {
        match self.name.as_str() {
            "cheesemaze" => 15.0,
            "tiger" => 0.05,
            "voicemail" => 0.3,
            _ => 1.0,
        }
    }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Two-position hidden state plus `done`, with "listen" actions that keep the
/// state and emit a correct observation with probability `accuracy`, and two
/// terminal "choose" actions. Shared by Tiger and Voicemail.
#[allow(clippy::too_many_arguments)]
fn listen_or_choose(
    states: [&str; 2],
    actions: [&str; 3],
    observations: [&str; 2],
    prior_first: f64,
    accuracy: f64,
    listen_reward: f64,
    choose_reward: [[f64; 2]; 2],
) -> Pomdp {
    let done = 2;
    let mut transition = vec![vec![vec![0.0; 3]; 3]; 3];
    let mut observation = vec![vec![vec![0.5, 0.5]; 3]; 3];
    let mut reward = vec![vec![0.0; 3]; 3];
    for s in 0..2 {
        transition[s][0][s] = 1.0;
        observation[s][0] = if s == 0 {
            vec![accuracy, 1.0 - accuracy]
        } else {
            vec![1.0 - accuracy, accuracy]
        };
        reward[s][0] = listen_reward;
        for c in 0..2 {
            transition[s][1 + c][done] = 1.0;
            reward[s][1 + c] = choose_reward[s][c];
        }
    }
    for a in 0..3 {
        transition[done][a][done] = 1.0;
    }
    let all: Vec<f64> = reward.iter().flatten().copied().collect();
    let rmin = all.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Pomdp {
        states: vec![states[0].into(), states[1].into(), "done".into()],
        actions: names(&actions),
        observations: names(&observations),
        transition,
        observation,
        initial_observation: vec![vec![0.5, 0.5]; 3],
        reward,
        reward_bounds: (rmin, rmax),
        discount: DISCOUNT,
        initial_belief: vec![prior_first, 1.0 - prior_first, 0.0],
        terminal_states: vec![done],
    }
}

/// Tiger: listen (-1) or open a door (-100 on the tiger, +10 otherwise).
pub fn make_tiger(listen_accuracy: f64) -> Result<EnvSpec> {
    if !(0.5..=1.0).contains(&listen_accuracy) {
        return Err(Error::InvalidParameter(format!(
            "listen accuracy {listen_accuracy} outside [0.5, 1]"
        )));
    }
    let pomdp = listen_or_choose(
        ["tiger-left", "tiger-right"],
        ["listen", "open-left", "open-right"],
        ["hear-left", "hear-right"],
        0.5,
        listen_accuracy,
        -1.0,
        [[-100.0, 10.0], [10.0, -100.0]],
    );
    pomdp.validate()?;
    Ok(EnvSpec {
        name: "tiger".into(),
        pomdp,
        param_overrides: BTreeMap::from([("listen_accuracy".to_string(), listen_accuracy)]),
        notes: "rewards -1/-100/+10 and gamma 0.95; \
                           listen_accuracy is a constructor default (0.85); opening a door ends \
                           the episode; the first observation is uninformative"
            .into(),
    })
}

/// Voicemail: ask (-1) for a noisy reading of the user's intent, then save
/// (+5 / -10) or delete (+5 / -20).
pub fn make_voicemail(intent_prior: f64, ask_accuracy: f64) -> Result<EnvSpec> {
    for (name, p) in [("intent_prior", intent_prior), ("ask_accuracy", ask_accuracy)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("{name} {p} outside (0, 1)")));
        }
    }
    let pomdp = listen_or_choose(
        ["intent-save", "intent-delete"],
        ["ask", "save", "delete"],
        ["hear-save", "hear-delete"],
        intent_prior,
        ask_accuracy,
        -1.0,
        [[5.0, -20.0], [-10.0, 5.0]],
    );
    pomdp.validate()?;
    Ok(EnvSpec {
        name: "voicemail".into(),
        pomdp,
        param_overrides: BTreeMap::from([
            ("intent_prior".to_string(), intent_prior),
            ("ask_accuracy".to_string(), ask_accuracy),
        ]),
        notes: "rewards -1, +5/-10 (save), +5/-20 (delete) and gamma 0.95; \
                           intent_prior (0.65) and ask_accuracy (0.8) are \
                           constructor defaults; the first observation is uninformative"
            .into(),
    })
}

/// Maze grid; `.` open, `G` goal, `#` wall.
pub const CHEESE_MAZE: [&str; 5] = ["#######", "#.....#", "#.#.#.#", "#.#G#.#", "#######"];

const MOVES: [(&str, isize, isize); 4] = [("north", -1, 0), ("east", 0, 1), ("south", 1, 0), ("west", 0, -1)];

/// Open cells of a grid in reading order, with the goal index.
pub fn maze_cells(grid: &[&str]) -> (Vec<(usize, usize)>, Option<usize>) {
    let mut cells = Vec::new();
    let mut goal = None;
    for (r, line) in grid.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            if ch != '#' {
                if ch == 'G' {
                    goal = Some(cells.len());
                }
                cells.push((r, c));
            }
        }
    }
    (cells, goal)
}

/// Wall flags (N, E, S, W) of an open cell.
pub fn wall_pattern(grid: &[&str], (r, c): (usize, usize)) -> [bool; 4] {
    let at = |r: isize, c: isize| -> bool {
        grid.get(r as usize)
            .and_then(|line| line.as_bytes().get(c as usize))
            .is_none_or(|&b| b == b'#')
    };
    let mut out = [false; 4];
    for (i, (_, dr, dc)) in MOVES.iter().enumerate() {
        out[i] = at(r as isize + dr, c as isize + dc);
    }
    out
}

/// McCallum's cheese maze: +1 on reaching the goal, -0.01 per other step.
pub fn make_cheese_maze() -> Result<EnvSpec> {
    let grid = &CHEESE_MAZE[..];
    let (cells, goal) = maze_cells(grid);
    let goal = goal.expect("layout has a goal");
    let n = cells.len();
    let patterns: Vec<[bool; 4]> = cells.iter().map(|&c| wall_pattern(grid, c)).collect();
    let mut distinct: Vec<[bool; 4]> = Vec::new();
    for p in &patterns {
        if !distinct.contains(p) {
            distinct.push(*p);
        }
    }
    let obs_of: Vec<usize> = patterns
        .iter()
        .map(|p| distinct.iter().position(|d| d == p).unwrap())
        .collect();
    let nz = distinct.len();
    let one_hot = |z: usize| -> Vec<f64> { (0..nz).map(|i| if i == z { 1.0 } else { 0.0 }).collect() };

    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for (s, &(r, c)) in cells.iter().enumerate() {
        for (a, (_, dr, dc)) in MOVES.iter().enumerate() {
            if s == goal {
                transition[s][a][s] = 1.0;
                continue;
            }
            let target = (r as isize + dr, c as isize + dc);
            let next = cells
                .iter()
                .position(|&(rr, cc)| (rr as isize, cc as isize) == target)
                .unwrap_or(s);
            transition[s][a][next] = 1.0;
            reward[s][a] = if next == goal { 1.0 } else { -0.01 };
        }
    }
    let observation: Vec<Vec<Vec<f64>>> = obs_of.iter().map(|&z| vec![one_hot(z); 4]).collect();
    let initial_observation = obs_of.iter().map(|&z| one_hot(z)).collect();
    let starts = (n - 1) as f64;
    let initial_belief = (0..n).map(|s| if s == goal { 0.0 } else { 1.0 / starts }).collect();
    let observation_names = distinct
        .iter()
        .map(|p| {
            let walls: String = p
                .iter()
                .zip(["N", "E", "S", "W"])
                .filter(|(w, _)| **w)
                .map(|(_, d)| d)
                .collect();
            format!("walls-{walls}")
        })
        .collect();
    let pomdp = Pomdp {
        states: (0..n)
            .map(|s| if s == goal { "goal".to_string() } else { format!("loc{s}") })
            .collect(),
        actions: MOVES.iter().map(|m| m.0.to_string()).collect(),
        observations: observation_names,
        transition,
        observation,
        initial_observation,
        reward,
        reward_bounds: (-0.01, 1.0),
        discount: DISCOUNT,
        initial_belief,
        terminal_states: vec![goal],
    };
    pomdp.validate()?;
    Ok(EnvSpec {
        name: "cheesemaze".into(),
        pomdp,
        param_overrides: BTreeMap::new(),
        notes: "rewards +1 (goal, terminal) and -0.01 per step, gamma 0.95, uniform \
                           non-goal start; layout hand-encoded from the standard 11-location maze; \
                           observations are wall patterns, bumping into a wall keeps the position"
            .into(),
    })
}

/// Look up a built-in environment by name with default parameters.
pub fn by_name(name: &str) -> Result<EnvSpec> {
    match name {
        "tiger" => make_tiger(0.85),
        "voicemail" => make_voicemail(0.65, 0.8),
        "cheesemaze" => make_cheese_maze(),
        other => Err(Error::InvalidParameter(format!("unknown environment {other:?}"))),
    }
}
