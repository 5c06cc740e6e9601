use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, McpBuilder, NonlinearReward, RewardTable, TabularMcp};
use crate::error::{Error, Result};

/// Largest augmented state space the item grid will build.
pub const MAX_TABULAR_STATES: usize = 50_000;

/// Arrival features `φ(s_1)..φ(s_4)` of the four arms out of `s_0`.
///
/// `φ(s_4) = [1, 1]` lies strictly inside the convex hull of the other three,
/// so no unit chord can make arm 4 the greedy choice.
pub const COUNTEREXAMPLE_FEATURES: [[f64; 2]; 4] = [[0.0, 0.5], [2.0, 1.0], [1.0, 2.0], [1.0, 1.0]];

/// Five-state decision problem: `s_0` has four deterministic actions, action
/// `i` moves to the terminal state `s_{i+1}` and emits `φ(s_{i+1})`.
pub fn build_counterexample() -> (TabularMcp, FeatureMap) {
    let mut b = McpBuilder::new(5, 4, 2);
    for (a, f) in COUNTEREXAMPLE_FEATURES.iter().enumerate() {
        b.transition(0, a, a + 1, 1.0, f);
    }
    for s in 1..5 {
        b.absorbing(s);
    }
    b.build(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.9).expect("counterexample is well formed")
}

/// The state-dependent task on the counterexample:
/// `r(s_1) = φ·[1,0]`, `r(s_2) = r(s_3) = φ·[-1,-1]`, `r(s_4) = φ·[1,1]`.
pub fn counterexample_task(mcp: &TabularMcp, phi: &FeatureMap) -> NonlinearReward {
    let weights = [[1.0, 0.0], [-1.0, -1.0], [-1.0, -1.0], [1.0, 1.0]];
    let table = RewardTable::from_fn(mcp, |s, _, s2| {
        if s == 0 && s2 >= 1 {
            let f = phi.get(mcp, s, s2 - 1, s2);
            super::dot(&f, &weights[s2 - 1])
        } else {
            0.0
        }
    });
    NonlinearReward::new(mcp, table).expect("counterexample reward is finite")
}

/// Seeded random MCP with `branching` successors per `(s, a)`.
pub fn build_random_mcp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    d: usize,
    discount: f64,
    branching: usize,
) -> Result<(TabularMcp, FeatureMap)> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidModel("random MCP needs states and actions".into()));
    }
    if d < 2 {
        return Err(Error::InvalidModel(format!("feature dimension {d} < 2")));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::InvalidModel(format!("branching {branching} not in 1..={n_states}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = McpBuilder::new(n_states, n_actions, d);
    for s in 0..n_states {
        for a in 0..n_actions {
            let mut succ = sample(&mut rng, n_states, branching).into_vec();
            succ.sort_unstable();
            let raw: Vec<f64> = (0..branching).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            // put the rounding residue on the largest entry
            let residue = 1.0 - probs.iter().sum::<f64>();
            let imax = (0..branching).fold(0, |m, i| if probs[i] > probs[m] { i } else { m });
            probs[imax] += residue;
            for (s2, p) in succ.into_iter().zip(probs) {
                let f: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                b.transition(s, a, s2, p, &f);
            }
        }
    }
    let initial = vec![1.0 / n_states as f64; n_states];
    b.build(initial, discount)
}

/// Explicit item-collection layout. Item `i` has type `items[i].2 ∈ {0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemGridLayout {
    pub width: usize,
    pub height: usize,
    pub toroidal: bool,
    /// `(x, y, type)`
    pub items: Vec<(usize, usize, usize)>,
    pub start: (usize, usize),
}

impl ItemGridLayout {
    /// Places `items_per_type` items of each type and the start cell by seed.
    pub fn random(width: usize, height: usize, items_per_type: usize, toroidal: bool, seed: u64) -> Result<Self> {
        let cells = width * height;
        let needed = 2 * items_per_type + 1;
        if width == 0 || height == 0 || items_per_type == 0 {
            return Err(Error::InvalidModel("grid needs cells and at least one item per type".into()));
        }
        if needed > cells {
            return Err(Error::InvalidModel(format!("{needed} objects do not fit into {cells} cells")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = sample(&mut rng, cells, needed).into_vec();
        let items = picks[..2 * items_per_type]
            .iter()
            .enumerate()
            .map(|(i, &c)| (c % width, c / width, i / items_per_type))
            .collect();
        let start = (picks[needed - 1] % width, picks[needed - 1] / width);
        Ok(Self { width, height, toroidal, items, start })
    }

    pub fn n_states(&self) -> Result<usize> {
        let size = 1usize
            .checked_shl(self.items.len() as u32)
            .filter(|_| self.items.len() < usize::BITS as usize)
            .and_then(|m| m.checked_mul(self.width * self.height))
            .and_then(|n| n.checked_add(1))
            .unwrap_or(usize::MAX);
        if size > MAX_TABULAR_STATES {
            return Err(Error::StateSpaceTooLarge { size, limit: MAX_TABULAR_STATES });
        }
        Ok(size)
    }

    pub fn build(&self, discount: f64) -> Result<ItemGrid> {
        let n_states = self.n_states()?;
        let n_items = self.items.len();
        let n_masks = 1usize << n_items;
        let cells = self.width * self.height;
        for &(x, y, t) in &self.items {
            if x >= self.width || y >= self.height || t > 1 {
                return Err(Error::InvalidModel(format!("bad item ({x}, {y}, type {t})")));
            }
        }
        let item_at = |c: usize| self.items.iter().position(|&(x, y, _)| y * self.width + x == c);
        let start_cell = self.start.1 * self.width + self.start.0;
        if self.start.0 >= self.width || self.start.1 >= self.height || item_at(start_cell).is_some() {
            return Err(Error::InvalidModel("start cell must be free and inside the grid".into()));
        }

        let sink = n_states - 1;
        let mut b = McpBuilder::new(n_states, 4, 2);
        for cell in 0..cells {
            for mask in 0..n_masks {
                let s = cell * n_masks + mask;
                let standing_on_item = item_at(cell).is_some_and(|i| mask & (1 << i) != 0);
                if mask == 0 || standing_on_item {
                    b.absorbing(s);
                    continue;
                }
                for a in 0..4 {
                    let c2 = self.step(cell, a);
                    match item_at(c2).filter(|&i| mask & (1 << i) != 0) {
                        Some(i) => {
                            let mut f = [0.0; 2];
                            f[self.items[i].2] = 1.0;
                            let m2 = mask & !(1 << i);
                            let s2 = if m2 == 0 { sink } else { c2 * n_masks + m2 };
                            b.transition(s, a, s2, 1.0, &f);
                        }
                        None => {
                            b.transition(s, a, c2 * n_masks + mask, 1.0, &[0.0, 0.0]);
                        }
                    }
                }
            }
        }
        b.absorbing(sink);
        let mut initial = vec![0.0; n_states];
        initial[start_cell * n_masks + n_masks - 1] = 1.0;
        let (mcp, phi) = b.build(initial, discount)?;
        Ok(ItemGrid { layout: self.clone(), mcp, phi })
    }

    /// Moves UP, DOWN, LEFT, RIGHT (0..4); walls stop the agent unless toroidal.
    fn step(&self, cell: usize, action: usize) -> usize {
        let (x, y) = ((cell % self.width) as isize, (cell / self.width) as isize);
        let (dx, dy) = [(0, -1), (0, 1), (-1, 0), (1, 0)][action];
        let (w, h) = (self.width as isize, self.height as isize);
        let (mut nx, mut ny) = (x + dx, y + dy);
        if self.toroidal {
            nx = nx.rem_euclid(w);
            ny = ny.rem_euclid(h);
        } else if nx < 0 || ny < 0 || nx >= w || ny >= h {
            return cell;
        }
        (ny * w + nx) as usize
    }
}

/// A built item-collection world plus the layout that produced it.
#[derive(Clone, Debug)]
pub struct ItemGrid {
    pub layout: ItemGridLayout,
    pub mcp: TabularMcp,
    pub phi: FeatureMap,
}

impl ItemGrid {
    /// `(cell, remaining-item mask)` of a state, `None` for the sink.
    pub fn decode(&self, s: usize) -> Option<(usize, usize)> {
        let n_masks = 1usize << self.layout.items.len();
        (s + 1 < self.mcp.n_states()).then(|| (s / n_masks, s % n_masks))
    }

    /// Reward for collecting every type-0 item before any type-1 item:
    /// a type-0 pickup pays 1, a type-1 pickup pays 1 only once no type-0
    /// item remains and 0 otherwise.
    pub fn sequential_reward(&self) -> NonlinearReward {
        let type0_mask: usize = self
            .layout
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.2 == 0)
            .map(|(i, _)| 1usize << i)
            .sum();
        let table = RewardTable::from_fn(&self.mcp, |s, a, s2| {
            let Some((_, mask)) = self.decode(s) else { return 0.0 };
            if self.mcp.is_terminal(s) {
                return 0.0;
            }
            let f = self.phi.get(&self.mcp, s, a, s2);
            if f[0] > 0.0 {
                1.0
            } else if f[1] > 0.0 && mask & type0_mask == 0 {
                1.0
            } else {
                0.0
            }
        });
        NonlinearReward::new(&self.mcp, table).expect("sequential reward is finite")
    }
}

/// Item-collection grid with seeded placement, `γ = 0.95`.
pub fn build_item_grid(
    width: usize,
    height: usize,
    items_per_type: usize,
    toroidal: bool,
    seed: u64,
) -> Result<(TabularMcp, FeatureMap)> {
    let grid = ItemGridLayout::random(width, height, items_per_type, toroidal, seed)?.build(0.95)?;
    Ok((grid.mcp, grid.phi))
}

/// Two independent corridors out of a start state, plus three dead-end arms.
///
/// Corridor A ends in a single exit with features `[1.2, 0.4]`. Corridor B
/// ends in a fork: action 0 exits with `[0, 1]`, every other action exits with
/// `[0.7, 0.35]`. With `g = γ^length`, the dead ends (`[-3, 0.95 g]`,
/// `[1.14 g, -3]`, `[-3, -3]`) are never optimal for a convex task but
/// surround the corridor values, so the only way to steer into corridor B
/// towards `[0, 1]` is a base policy that takes that exit itself. Every
/// corridor has `length ≥ 1` zero-feature steps.
pub fn build_corridors(length: usize, discount: f64) -> Result<(TabularMcp, FeatureMap)> {
    if length == 0 {
        return Err(Error::InvalidModel("corridor length must be at least 1".into()));
    }
    // 0: start; 1..=L: corridor A; L+1..=2L: corridor B; 2L+1: terminal
    let n_states = 2 * length + 2;
    let terminal = n_states - 1;
    let n_actions = 5;
    let zero = [0.0, 0.0];
    let mut b = McpBuilder::new(n_states, n_actions, 2);
    b.transition(0, 0, 1, 1.0, &zero);
    b.transition(0, 1, length + 1, 1.0, &zero);
    let g = discount.powi(length as i32);
    b.transition(0, 2, terminal, 1.0, &[-3.0, 0.95 * g]);
    b.transition(0, 3, terminal, 1.0, &[1.14 * g, -3.0]);
    b.transition(0, 4, terminal, 1.0, &[-3.0, -3.0]);
    for k in 1..length {
        b.all_actions(k, k + 1, &zero);
        b.all_actions(length + k, length + k + 1, &zero);
    }
    b.all_actions(length, terminal, &[1.2, 0.4]);
    b.transition(2 * length, 0, terminal, 1.0, &[0.0, 1.0]);
    for a in 1..n_actions {
        b.transition(2 * length, a, terminal, 1.0, &[0.7, 0.35]);
    }
    b.absorbing(terminal);
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    b.build(initial, discount)
}
