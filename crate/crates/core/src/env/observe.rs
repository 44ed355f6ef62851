use super::types::{codes, ObjectId};
use super::world::WorldState;

pub const VIEW: usize = 7;
pub const VIEW_CELLS: usize = VIEW * VIEW;
/// View coordinates of the agent (column, row): bottom centre, facing up.
pub const AGENT_VIEW: (usize, usize) = (VIEW / 2, VIEW - 1);
/// View coordinates of the cell the agent faces.
pub const FRONT_VIEW: (usize, usize) = (VIEW / 2, VIEW - 2);

/// Egocentric 7x7 partial view. Cell `(col, row)` is stored at `row * 7 + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    /// `(type, color, state)` codes per cell; unseen cells are `(UNSEEN, 0, 0)`.
    pub cells: Vec<[u8; 3]>,
    pub visible: Vec<bool>,
    /// Identity of the object in each visible cell, as reported by the
    /// recognition system. Not part of the tensor encoding.
    pub ids: Vec<Option<ObjectId>>,
}

impl Observation {
    pub fn empty() -> Self {
        Self {
            cells: vec![[codes::UNSEEN, 0, 0]; VIEW_CELLS],
            visible: vec![false; VIEW_CELLS],
            ids: vec![None; VIEW_CELLS],
        }
    }

    pub fn index(col: usize, row: usize) -> usize {
        row * VIEW + col
    }

    pub fn cell(&self, col: usize, row: usize) -> [u8; 3] {
        self.cells[Self::index(col, row)]
    }

    /// View index of the cell holding object `id`, if visible.
    pub fn locate(&self, id: ObjectId) -> Option<usize> {
        self.ids.iter().position(|&i| i == Some(id))
    }

    /// `[3, 7, 7]` tensor data: type, color and state planes scaled to [0, 1].
    pub fn encode3(&self) -> Vec<f64> {
        let mut out = vec![0.0; 3 * VIEW_CELLS];
        for (i, c) in self.cells.iter().enumerate() {
            out[i] = c[0] as f64 / codes::MAX_TYPE as f64;
            out[VIEW_CELLS + i] = c[1] as f64 / codes::MAX_COLOR as f64;
            out[2 * VIEW_CELLS + i] = c[2] as f64 / codes::MAX_STATE as f64;
        }
        out
    }

    /// `[4, 7, 7]` tensor data: the three planes plus an activation indicator
    /// that is 1 at the target's cell when it is visible and 0 elsewhere.
    pub fn encode4(&self, target: Option<ObjectId>) -> Vec<f64> {
        let mut out = self.encode3();
        out.extend(std::iter::repeat(0.0).take(VIEW_CELLS));
        if let Some(i) = target.and_then(|t| self.locate(t)) {
            out[3 * VIEW_CELLS + i] = 1.0;
        }
        out
    }
}

/// Renders the agent's egocentric view with occlusion.
///
/// Visibility spreads row by row away from the agent: a visible transparent
/// cell lights its lateral neighbour and the cells diagonally and directly
/// ahead. Walls and closed or locked doors are seen but stop propagation.
pub fn render_observation(world: &WorldState) -> Observation {
    let (fx, fy) = world.heading().delta();
    let (rx, ry) = world.heading().right().delta();
    let agent = world.agent();
    let world_of = |col: usize, row: usize| {
        let fwd = (VIEW - 1 - row) as i64;
        let lat = col as i64 - (VIEW / 2) as i64;
        (agent.x as i64 + fwd * fx + lat * rx, agent.y as i64 + fwd * fy + lat * ry)
    };

    let mut transparent = vec![false; VIEW_CELLS];
    let mut on_grid = vec![false; VIEW_CELLS];
    for row in 0..VIEW {
        for col in 0..VIEW {
            let (x, y) = world_of(col, row);
            if let Some(c) = world.cell_at(x, y) {
                on_grid[Observation::index(col, row)] = true;
                transparent[Observation::index(col, row)] = c.is_transparent();
            }
        }
    }
    let i = Observation::index(AGENT_VIEW.0, AGENT_VIEW.1);
    transparent[i] = true;

    let mut mask = vec![false; VIEW_CELLS];
    mask[i] = true;
    for row in (0..VIEW).rev() {
        for col in 0..VIEW - 1 {
            let k = Observation::index(col, row);
            if !mask[k] || !transparent[k] {
                continue;
            }
            mask[Observation::index(col + 1, row)] = true;
            if row > 0 {
                mask[Observation::index(col + 1, row - 1)] = true;
                mask[Observation::index(col, row - 1)] = true;
            }
        }
        for col in (1..VIEW).rev() {
            let k = Observation::index(col, row);
            if !mask[k] || !transparent[k] {
                continue;
            }
            mask[Observation::index(col - 1, row)] = true;
            if row > 0 {
                mask[Observation::index(col - 1, row - 1)] = true;
                mask[Observation::index(col, row - 1)] = true;
            }
        }
    }

    let mut obs = Observation::empty();
    for row in 0..VIEW {
        for col in 0..VIEW {
            let k = Observation::index(col, row);
            if !mask[k] || !on_grid[k] {
                continue;
            }
            let (x, y) = world_of(col, row);
            let cell = world.cell_at(x, y).expect("on grid");
            obs.visible[k] = true;
            obs.cells[k] = [cell.type_code(), cell.color().map_or(0, |c| c.index() as u8), cell.state_code()];
            obs.ids[k] = cell.object_id();
        }
    }
    obs
}
