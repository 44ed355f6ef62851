use rand::seq::SliceRandom;
use rand::Rng as _;

use super::observe::{render_observation, Observation};
use super::types::*;
use super::EnvError;
use crate::rng::{self, Rng};

/// Room grid geometry. Rooms share walls; one door per adjacent pair,
/// centred on the shared wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Layout {
    pub rows: usize,
    pub cols: usize,
    pub room_size: usize,
    /// Place a ball on the start-side cell in front of every locked door.
    pub blockers: bool,
    /// Episode step limit; `None` uses `40 * rooms * room_size^2`.
    pub max_steps: Option<u32>,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            room_size: 5,
            blockers: true,
            max_steps: None,
        }
    }
}

impl Layout {
    /// Two rooms side by side, one locked door, key in a box.
    pub fn mini() -> Self {
        Self {
            rows: 1,
            cols: 2,
            room_size: 4,
            blockers: false,
            max_steps: None,
        }
    }

    pub fn width(&self) -> usize {
        self.cols * (self.room_size + 1) + 1
    }

    pub fn height(&self) -> usize {
        self.rows * (self.room_size + 1) + 1
    }

    pub fn num_rooms(&self) -> usize {
        self.rows * self.cols
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
            .unwrap_or((40 * self.num_rooms() * self.room_size * self.room_size) as u32)
    }

    pub fn room_coords(&self, room: usize) -> (usize, usize) {
        (room / self.cols, room % self.cols)
    }

    pub fn room_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Room the agent starts in (the middle room of odd layouts).
    pub fn start_room(&self) -> usize {
        self.room_at((self.rows - 1) / 2, (self.cols - 1) / 2)
    }

    /// Corner rooms other than the start room, in index order.
    pub fn corner_rooms(&self) -> Vec<usize> {
        let mut v = vec![
            self.room_at(0, 0),
            self.room_at(0, self.cols - 1),
            self.room_at(self.rows - 1, 0),
            self.room_at(self.rows - 1, self.cols - 1),
        ];
        v.sort_unstable();
        v.dedup();
        v.retain(|&r| r != self.start_room());
        v
    }

    pub fn neighbors(&self, room: usize) -> Vec<usize> {
        let (r, c) = self.room_coords(room);
        let mut out = Vec::new();
        if r > 0 {
            out.push(self.room_at(r - 1, c));
        }
        if c > 0 {
            out.push(self.room_at(r, c - 1));
        }
        if c + 1 < self.cols {
            out.push(self.room_at(r, c + 1));
        }
        if r + 1 < self.rows {
            out.push(self.room_at(r + 1, c));
        }
        out
    }

    pub fn room_distance(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.room_coords(a);
        let (rb, cb) = self.room_coords(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Interior cells of a room in row-major order.
    pub fn interior(&self, room: usize) -> Vec<Pos> {
        let (r, c) = self.room_coords(room);
        let x0 = c * (self.room_size + 1) + 1;
        let y0 = r * (self.room_size + 1) + 1;
        let mut v = Vec::with_capacity(self.room_size * self.room_size);
        for y in y0..y0 + self.room_size {
            for x in x0..x0 + self.room_size {
                v.push(Pos::new(x, y));
            }
        }
        v
    }

    /// Room containing an interior cell.
    pub fn room_of_interior(&self, p: Pos) -> Option<usize> {
        let s = self.room_size + 1;
        if p.x >= self.width() || p.y >= self.height() || p.x % s == 0 || p.y % s == 0 {
            return None;
        }
        Some(self.room_at(p.y / s, p.x / s))
    }

    /// Door cell between two adjacent rooms.
    pub fn door_between(&self, a: usize, b: usize) -> Option<Pos> {
        let (a, b) = (a.min(b), a.max(b));
        let (ra, ca) = self.room_coords(a);
        let (rb, cb) = self.room_coords(b);
        let s = self.room_size;
        if ra == rb && cb == ca + 1 {
            Some(Pos::new((ca + 1) * (s + 1), ra * (s + 1) + 1 + s / 2))
        } else if ca == cb && rb == ra + 1 {
            Some(Pos::new(ca * (s + 1) + 1 + s / 2, (ra + 1) * (s + 1)))
        } else {
            None
        }
    }

    /// All doors as `(room_a, room_b, position)` with `room_a < room_b`.
    pub fn doors(&self) -> Vec<(usize, usize, Pos)> {
        let mut v = Vec::new();
        for a in 0..self.num_rooms() {
            for b in self.neighbors(a) {
                if a < b {
                    v.push((a, b, self.door_between(a, b).expect("neighbors share a door")));
                }
            }
        }
        v
    }

    /// Rooms on either side of a door cell.
    pub fn rooms_of_door(&self, p: Pos) -> Option<(usize, usize)> {
        self.doors().into_iter().find(|d| d.2 == p).map(|d| (d.0, d.1))
    }

    /// The interior cell of `room` directly in front of the door shared with `other`.
    pub fn door_front(&self, room: usize, other: usize) -> Option<Pos> {
        let d = self.door_between(room, other)?;
        let cands = [
            Pos::new(d.x.wrapping_sub(1), d.y),
            Pos::new(d.x + 1, d.y),
            Pos::new(d.x, d.y.wrapping_sub(1)),
            Pos::new(d.x, d.y + 1),
        ];
        cands.into_iter().find(|&p| self.room_of_interior(p) == Some(room))
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.rows == 0 || self.cols == 0 || self.num_rooms() < 2 {
            return Err(EnvError::Generation(format!(
                "layout {}x{} has fewer than two rooms",
                self.rows, self.cols
            )));
        }
        if self.room_size < 3 {
            return Err(EnvError::Generation(format!(
                "room interior {0}x{0} cannot host door approaches and objects",
                self.room_size
            )));
        }
        if self.corner_rooms().len() > Color::ALL.len() {
            return Err(EnvError::Generation("more corner rooms than colors".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relocation {
    Disabled,
    Armed,
    Fired,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub success: bool,
    /// Room of the agent after the step (`None` while standing in a doorway).
    pub room: Option<usize>,
    /// Box opened by this step and what it contained.
    pub opened_box: Option<(ObjectId, Option<Carryable>)>,
    pub picked_up: Option<ObjectId>,
    pub dropped: Option<ObjectId>,
    pub goal_relocated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Full simulator state.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub(crate) layout: Layout,
    pub(crate) grid: Vec<Cell>,
    pub(crate) agent: Pos,
    pub(crate) heading: Heading,
    pub(crate) inventory: Option<Carryable>,
    pub(crate) steps: u32,
    pub(crate) max_steps: u32,
    pub(crate) task: u8,
    pub(crate) relocation: Relocation,
    pub(crate) seed: u64,
    pub(crate) rng: Rng,
    pub(crate) done: bool,
    pub(crate) success: bool,
    pub(crate) last_room: usize,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.grid == other.grid
            && self.agent == other.agent
            && self.heading == other.heading
            && self.inventory == other.inventory
            && self.steps == other.steps
            && self.max_steps == other.max_steps
            && self.task == other.task
            && self.relocation == other.relocation
            && self.seed == other.seed
            && self.done == other.done
            && self.success == other.success
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

fn free_cells(layout: &Layout, grid: &[Cell], room: usize, avoid: &[Pos]) -> Vec<Pos> {
    let fronts: Vec<Pos> = layout
        .neighbors(room)
        .into_iter()
        .filter_map(|o| layout.door_front(room, o))
        .collect();
    layout
        .interior(room)
        .into_iter()
        .filter(|p| grid[p.y * layout.width() + p.x].is_empty() && !fronts.contains(p) && !avoid.contains(p))
        .collect()
}

impl WorldState {
    /// Generates a world for `task` in `0..=3`.
    pub fn generate(seed: u64, task: u8, layout: Layout) -> Result<Self, EnvError> {
        layout.validate()?;
        if task > 3 {
            return Err(EnvError::BadTask(task));
        }
        let mut rng = rng::stream(seed, &[rng::tag::ENV]);
        let (w, h) = (layout.width(), layout.height());
        let mut grid = vec![Cell::Wall; w * h];
        for room in 0..layout.num_rooms() {
            for p in layout.interior(room) {
                grid[p.y * w + p.x] = Cell::Empty;
            }
        }
        let mut next_id = 0u32;
        let mut fresh = || {
            next_id += 1;
            ObjectId(next_id)
        };
        let doors = layout.doors();
        for &(_, _, p) in &doors {
            let color = *Color::ALL.choose(&mut rng).expect("palette");
            grid[p.y * w + p.x] = Cell::Door {
                id: fresh(),
                color,
                state: DoorState::Closed,
            };
        }

        let start = layout.start_room();
        let corners = layout.corner_rooms();
        let mut palette = Color::ALL.to_vec();
        palette.shuffle(&mut rng);
        let goal_room = *corners.choose(&mut rng).ok_or_else(|| EnvError::Generation("no goal room".into()))?;

        let place = |grid: &mut Vec<Cell>, rng: &mut Rng, room: usize, cell: Cell| -> Result<Pos, EnvError> {
            let cands = free_cells(&layout, grid, room, &[]);
            let p = *cands
                .choose(rng)
                .ok_or_else(|| EnvError::Generation(format!("room {room} has no free cell left")))?;
            grid[p.y * layout.width() + p.x] = cell;
            Ok(p)
        };

        for (i, &corner) in corners.iter().enumerate() {
            let color = palette[i];
            for other in layout.neighbors(corner) {
                let p = layout.door_between(corner, other).expect("adjacent");
                if let Cell::Door { state, color: c, .. } = &mut grid[p.y * w + p.x] {
                    if *state != DoorState::Locked {
                        *state = DoorState::Locked;
                        *c = color;
                    }
                }
            }
            let nbrs = layout.neighbors(corner);
            let best = nbrs.iter().map(|&n| layout.room_distance(n, start)).min().expect("corner has neighbours");
            let key_rooms: Vec<usize> = nbrs.into_iter().filter(|&n| layout.room_distance(n, start) == best).collect();
            let key_room = *key_rooms.choose(&mut rng).expect("non-empty");
            let box_color = *Color::ALL.choose(&mut rng).expect("palette");
            let key = Carryable::Key { id: fresh(), color };
            place(&mut grid, &mut rng, key_room, Cell::Box { id: fresh(), color: box_color, content: Some(key) })?;
        }

        if layout.blockers {
            for &(a, b, p) in &doors {
                if !matches!(grid[p.y * w + p.x], Cell::Door { state: DoorState::Locked, .. }) {
                    continue;
                }
                let near = if layout.room_distance(a, start) <= layout.room_distance(b, start) { a } else { b };
                let far = if near == a { b } else { a };
                let front = layout.door_front(near, far).expect("door front");
                if grid[front.y * w + front.x].is_empty() {
                    let colors: Vec<Color> = Color::ALL.into_iter().filter(|&c| c != Color::Blue).collect();
                    let color = *colors.choose(&mut rng).expect("palette");
                    grid[front.y * w + front.x] = Cell::Item(Carryable::Ball { id: fresh(), color });
                }
            }
        }

        let goal = Carryable::Ball { id: fresh(), color: Color::Blue };
        if task == 1 {
            let box_color = *Color::ALL.choose(&mut rng).expect("palette");
            place(&mut grid, &mut rng, goal_room, Cell::Box { id: fresh(), color: box_color, content: Some(goal) })?;
        } else {
            place(&mut grid, &mut rng, goal_room, Cell::Item(goal))?;
        }

        if task == 2 {
            let mut colors = Color::ALL.to_vec();
            colors.shuffle(&mut rng);
            for (i, other) in layout.neighbors(start).into_iter().enumerate() {
                let p = layout.door_between(start, other).expect("adjacent");
                let color = colors[i % colors.len()];
                if let Cell::Door { state, color: c, .. } = &mut grid[p.y * w + p.x] {
                    *state = DoorState::Locked;
                    *c = color;
                }
                let key = Carryable::Key { id: fresh(), color };
                place(&mut grid, &mut rng, start, Cell::Item(key))?;
            }
        }

        let spots = free_cells(&layout, &grid, start, &[]);
        let agent = *spots
            .choose(&mut rng)
            .ok_or_else(|| EnvError::Generation("start room has no free cell for the agent".into()))?;
        let heading = Heading::ALL[rng.gen_range(0..4)];

        Ok(Self {
            layout,
            grid,
            agent,
            heading,
            inventory: None,
            steps: 0,
            max_steps: layout.max_steps(),
            task,
            relocation: if task == 3 { Relocation::Armed } else { Relocation::Disabled },
            seed,
            rng,
            done: false,
            success: false,
            last_room: start,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn height(&self) -> usize {
        self.layout.height()
    }

    pub fn cell(&self, p: Pos) -> &Cell {
        &self.grid[p.y * self.width() + p.x]
    }

    pub(crate) fn cell_mut(&mut self, p: Pos) -> &mut Cell {
        let w = self.width();
        &mut self.grid[p.y * w + p.x]
    }

    /// Cell at signed coordinates, `None` when off-grid.
    pub fn cell_at(&self, x: i64, y: i64) -> Option<&Cell> {
        if x < 0 || y < 0 || x as usize >= self.width() || y as usize >= self.height() {
            None
        } else {
            Some(self.cell(Pos::new(x as usize, y as usize)))
        }
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn heading(&self) -> Heading {
        self.heading
    }

    pub fn inventory(&self) -> Option<Carryable> {
        self.inventory
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn task(&self) -> u8 {
        self.task
    }

    pub fn relocation(&self) -> Relocation {
        self.relocation
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_success(&self) -> bool {
        self.success
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cell the agent faces, if on the grid.
    pub fn front(&self) -> Option<Pos> {
        let (dx, dy) = self.heading.delta();
        let (x, y) = (self.agent.x as i64 + dx, self.agent.y as i64 + dy);
        self.cell_at(x, y).map(|_| Pos::new(x as usize, y as usize))
    }

    /// Grid position of an object, if it lies on the grid (not in a box or carried).
    pub fn position_of(&self, id: ObjectId) -> Option<Pos> {
        let w = self.width();
        self.grid
            .iter()
            .position(|c| c.object_id() == Some(id))
            .map(|i| Pos::new(i % w, i / w))
    }

    /// Whether an object exists anywhere (grid, box content or inventory).
    pub fn object_exists(&self, id: ObjectId) -> bool {
        self.inventory.map(|c| c.id()) == Some(id)
            || self.grid.iter().any(|c| {
                c.object_id() == Some(id) || matches!(c, Cell::Box { content: Some(k), .. } if k.id() == id)
            })
    }

    /// Position of the goal ball when it lies on the grid.
    pub fn goal_position(&self) -> Option<Pos> {
        let w = self.width();
        self.grid
            .iter()
            .position(|c| matches!(c, Cell::Item(k) if k.is_goal()))
            .map(|i| Pos::new(i % w, i / w))
    }

    /// Every object in the world as `(id, kind, color)`, sorted by id.
    pub fn objects(&self) -> Vec<(ObjectId, ObjectKind, Color)> {
        let mut v = Vec::new();
        for c in &self.grid {
            match c {
                Cell::Door { id, color, .. } => v.push((*id, ObjectKind::Door, *color)),
                Cell::Item(k) => v.push((k.id(), k.kind(), k.color())),
                Cell::Box { id, color, content } => {
                    v.push((*id, ObjectKind::Box, *color));
                    if let Some(k) = content {
                        v.push((k.id(), k.kind(), k.color()));
                    }
                }
                _ => {}
            }
        }
        if let Some(k) = self.inventory {
            v.push((k.id(), k.kind(), k.color()));
        }
        v.sort();
        v
    }

    /// Room of a position: interior cells map to their room; door cells map
    /// to `last_room` when it is one of the two rooms the door joins.
    pub fn room_index(&self, p: Pos, last_room: Option<usize>) -> Result<usize, EnvError> {
        if let Some(r) = self.layout.room_of_interior(p) {
            return Ok(r);
        }
        match self.layout.rooms_of_door(p) {
            Some((a, b)) => Ok(match last_room {
                Some(r) if r == a || r == b => r,
                _ => a,
            }),
            None => Err(EnvError::NotInRoom(p)),
        }
    }

    /// Room of the agent, attributing doorways to the room it came from.
    pub fn agent_room(&self) -> usize {
        self.room_index(self.agent, Some(self.last_room)).unwrap_or(self.last_room)
    }

    pub fn observe(&self) -> Observation {
        render_observation(self)
    }

    pub fn step_code(&mut self, code: usize) -> Result<StepResult, EnvError> {
        let a = Action::from_index(code).ok_or(EnvError::InvalidAction(code))?;
        self.step(a)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.steps += 1;
        let mut info = StepInfo::default();
        let front = self.front();
        match action {
            Action::Left => self.heading = self.heading.left(),
            Action::Right => self.heading = self.heading.right(),
            Action::Forward => {
                if let Some(f) = front {
                    if self.cell(f).is_passable() {
                        self.agent = f;
                    }
                }
            }
            Action::Pickup => {
                if let (Some(f), None) = (front, self.inventory) {
                    if let Cell::Item(k) = *self.cell(f) {
                        self.inventory = Some(k);
                        *self.cell_mut(f) = Cell::Empty;
                        info.picked_up = Some(k.id());
                    }
                }
            }
            Action::Drop => {
                if let (Some(f), Some(k)) = (front, self.inventory) {
                    if self.cell(f).is_empty() {
                        *self.cell_mut(f) = Cell::Item(k);
                        self.inventory = None;
                        info.dropped = Some(k.id());
                    }
                }
            }
            Action::Toggle => {
                if let Some(f) = front {
                    let carrying_key = match self.inventory {
                        Some(Carryable::Key { color, .. }) => Some(color),
                        _ => None,
                    };
                    let cell = self.cell_mut(f);
                    match cell {
                        Cell::Door { state, color, .. } => match *state {
                            DoorState::Closed => *state = DoorState::Open,
                            DoorState::Locked if carrying_key == Some(*color) => *state = DoorState::Open,
                            _ => {}
                        },
                        Cell::Box { id, content, .. } => {
                            let (id, content) = (*id, *content);
                            *cell = content.map_or(Cell::Empty, Cell::Item);
                            info.opened_box = Some((id, content));
                        }
                        _ => {}
                    }
                }
            }
        }
        if let Some(r) = self.layout.room_of_interior(self.agent) {
            self.last_room = r;
        }
        if self.relocation == Relocation::Armed {
            info.goal_relocated = self.apply_task3_dynamics();
        }
        let mut reward = 0.0;
        if self.inventory.is_some_and(|k| k.is_goal()) {
            self.success = true;
            self.done = true;
            reward = 1.0 - self.steps as f64 / self.max_steps as f64;
        } else if self.steps >= self.max_steps {
            self.done = true;
        }
        info.success = self.success;
        info.room = self.layout.room_of_interior(self.agent);
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
            info,
        })
    }

    /// Moves the goal ball to a neighbouring room the first time the agent
    /// stands in the goal's room. Returns whether it fired.
    pub fn apply_task3_dynamics(&mut self) -> bool {
        if self.relocation != Relocation::Armed {
            return false;
        }
        let Some(goal_pos) = self.goal_position() else { return false };
        let Some(goal_room) = self.layout.room_of_interior(goal_pos) else { return false };
        if self.layout.room_of_interior(self.agent) != Some(goal_room) {
            return false;
        }
        self.relocation = Relocation::Fired;
        let mut rooms = self.layout.neighbors(goal_room);
        rooms.shuffle(&mut self.rng);
        for room in rooms {
            let cands = free_cells(&self.layout, &self.grid, room, &[self.agent]);
            if let Some(&p) = cands.choose(&mut self.rng) {
                let ball = std::mem::replace(self.cell_mut(goal_pos), Cell::Empty);
                *self.cell_mut(p) = ball;
                return true;
            }
        }
        false
    }

    pub(crate) fn from_parts(
        layout: Layout,
        grid: Vec<Cell>,
        agent: Pos,
        heading: Heading,
        inventory: Option<Carryable>,
        task: u8,
        seed: u64,
    ) -> Self {
        let last_room = layout.room_of_interior(agent).unwrap_or(layout.start_room());
        Self {
            layout,
            grid,
            agent,
            heading,
            inventory,
            steps: 0,
            max_steps: layout.max_steps(),
            task,
            relocation: if task == 3 { Relocation::Armed } else { Relocation::Disabled },
            seed,
            rng: rng::stream(seed, &[rng::tag::ENV]),
            done: false,
            success: false,
            last_room,
        }
    }
}
