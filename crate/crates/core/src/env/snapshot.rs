//! Versioned text snapshot of a world, for debugging and golden tests.
//!
//! ```text
//! KIXWORLD 1
//! layout 1x2 room 4 blockers 0 max_steps 1280
//! task 0 seed 7 step 0 relocation none done 0 success 0
//! agent 2,3 > inventory none
//! grid
//! ######################
//! ##........##........##
//! ...
//! boxes
//! 3,2 key:red
//! end
//! ```
//!
//! Each grid cell is two characters: `##` wall, `..` empty, `A` + heading for
//! the agent, and a kind letter plus color letter for objects (`D` closed
//! door, `L` locked door, `O` open door, `K` key, `B` ball, `X` box). Object
//! ids are reassigned in reading order when parsing.

use super::types::*;
use super::world::{Layout, Relocation, WorldState};
use super::EnvError;

pub const SNAPSHOT_VERSION: u32 = 1;

fn item_text(k: Option<Carryable>) -> String {
    match k {
        None => "none".into(),
        Some(Carryable::Key { color, .. }) => format!("key:{}", color.name()),
        Some(Carryable::Ball { color, .. }) => format!("ball:{}", color.name()),
    }
}

fn color_by_name(s: &str) -> Option<Color> {
    Color::ALL.into_iter().find(|c| c.name() == s)
}

fn parse_item(s: &str, id: ObjectId) -> Result<Option<Carryable>, EnvError> {
    if s == "none" {
        return Ok(None);
    }
    let bad = || EnvError::Snapshot(format!("bad item `{s}`"));
    let (kind, color) = s.split_once(':').ok_or_else(bad)?;
    let color = color_by_name(color).ok_or_else(bad)?;
    match kind {
        "key" => Ok(Some(Carryable::Key { id, color })),
        "ball" => Ok(Some(Carryable::Ball { id, color })),
        _ => Err(bad()),
    }
}

impl WorldState {
    pub fn to_snapshot(&self) -> String {
        let l = self.layout();
        let mut s = format!("KIXWORLD {SNAPSHOT_VERSION}\n");
        s.push_str(&format!(
            "layout {}x{} room {} blockers {} max_steps {}\n",
            l.rows,
            l.cols,
            l.room_size,
            u8::from(l.blockers),
            self.max_steps()
        ));
        let reloc = match self.relocation() {
            Relocation::Disabled => "none",
            Relocation::Armed => "armed",
            Relocation::Fired => "fired",
        };
        s.push_str(&format!(
            "task {} seed {} step {} relocation {reloc} done {} success {}\n",
            self.task(),
            self.seed(),
            self.steps(),
            u8::from(self.is_done()),
            u8::from(self.is_success())
        ));
        s.push_str(&format!(
            "agent {},{} {} inventory {}\n",
            self.agent().x,
            self.agent().y,
            self.heading().glyph(),
            item_text(self.inventory())
        ));
        s.push_str("grid\n");
        let mut boxes = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let p = Pos::new(x, y);
                if p == self.agent() {
                    s.push('A');
                    s.push(self.heading().glyph());
                    continue;
                }
                let (a, b) = match self.cell(p) {
                    Cell::Empty => ('.', '.'),
                    Cell::Wall => ('#', '#'),
                    Cell::Door { color, state, .. } => (
                        match state {
                            DoorState::Open => 'O',
                            DoorState::Closed => 'D',
                            DoorState::Locked => 'L',
                        },
                        color.glyph(),
                    ),
                    Cell::Item(Carryable::Key { color, .. }) => ('K', color.glyph()),
                    Cell::Item(Carryable::Ball { color, .. }) => ('B', color.glyph()),
                    Cell::Box { color, content, .. } => {
                        boxes.push((p, *content));
                        ('X', color.glyph())
                    }
                };
                s.push(a);
                s.push(b);
            }
            s.push('\n');
        }
        s.push_str("boxes\n");
        for (p, content) in boxes {
            s.push_str(&format!("{},{} {}\n", p.x, p.y, item_text(content)));
        }
        s.push_str("end\n");
        s
    }

    pub fn from_snapshot(text: &str) -> Result<Self, EnvError> {
        let bad = |m: &str| EnvError::Snapshot(m.to_string());
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty snapshot"))?;
        if head != format!("KIXWORLD {SNAPSHOT_VERSION}") {
            return Err(bad("unsupported snapshot header"));
        }
        let fields = |line: Option<&str>, name: &str| -> Result<Vec<String>, EnvError> {
            let line = line.ok_or_else(|| bad(&format!("missing {name} line")))?;
            let f: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            if f.first().map(String::as_str) != Some(name) {
                return Err(bad(&format!("expected {name} line, got `{line}`")));
            }
            Ok(f)
        };
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("bad number `{s}`")));

        let lf = fields(lines.next(), "layout")?;
        if lf.len() != 8 {
            return Err(bad("layout line"));
        }
        let (rows, cols) = lf[1].split_once('x').ok_or_else(|| bad("layout dims"))?;
        let layout = Layout {
            rows: num(rows)? as usize,
            cols: num(cols)? as usize,
            room_size: num(&lf[3])? as usize,
            blockers: lf[5] == "1",
            max_steps: Some(num(&lf[7])? as u32),
        };
        layout.validate()?;

        let tf = fields(lines.next(), "task")?;
        if tf.len() != 12 {
            return Err(bad("task line"));
        }
        let task = num(&tf[1])? as u8;
        let seed = num(&tf[3])?;
        let steps = num(&tf[5])? as u32;
        let relocation = match tf[7].as_str() {
            "none" => Relocation::Disabled,
            "armed" => Relocation::Armed,
            "fired" => Relocation::Fired,
            _ => return Err(bad("relocation")),
        };

        let af = fields(lines.next(), "agent")?;
        if af.len() != 5 {
            return Err(bad("agent line"));
        }
        let (ax, ay) = af[1].split_once(',').ok_or_else(|| bad("agent position"))?;
        let agent = Pos::new(num(ax)? as usize, num(ay)? as usize);
        let heading = af[2].chars().next().and_then(Heading::from_glyph).ok_or_else(|| bad("heading"))?;
        let inventory_text = af[4].clone();

        if lines.next() != Some("grid") {
            return Err(bad("missing grid"));
        }
        let (w, h) = (layout.width(), layout.height());
        let mut grid = Vec::with_capacity(w * h);
        let mut next = 0u32;
        let mut fresh = || {
            next += 1;
            ObjectId(next)
        };
        for _ in 0..h {
            let row: Vec<char> = lines.next().ok_or_else(|| bad("grid truncated"))?.chars().collect();
            if row.len() != 2 * w {
                return Err(bad("grid row width"));
            }
            for pair in row.chunks(2) {
                let color = Color::from_glyph(pair[1]);
                let need = || color.ok_or_else(|| bad(&format!("bad color in `{}{}`", pair[0], pair[1])));
                let cell = match pair[0] {
                    '.' => Cell::Empty,
                    '#' => Cell::Wall,
                    'A' => Cell::Empty,
                    'D' => Cell::Door { id: fresh(), color: need()?, state: DoorState::Closed },
                    'L' => Cell::Door { id: fresh(), color: need()?, state: DoorState::Locked },
                    'O' => Cell::Door { id: fresh(), color: need()?, state: DoorState::Open },
                    'K' => Cell::Item(Carryable::Key { id: fresh(), color: need()? }),
                    'B' => Cell::Item(Carryable::Ball { id: fresh(), color: need()? }),
                    'X' => Cell::Box { id: fresh(), color: need()?, content: None },
                    c => return Err(bad(&format!("unknown glyph `{c}`"))),
                };
                grid.push(cell);
            }
        }
        if lines.next() != Some("boxes") {
            return Err(bad("missing boxes section"));
        }
        for line in lines.by_ref() {
            if line == "end" {
                break;
            }
            let (pos, item) = line.split_once(' ').ok_or_else(|| bad("box line"))?;
            let (x, y) = pos.split_once(',').ok_or_else(|| bad("box position"))?;
            let (x, y) = (num(x)? as usize, num(y)? as usize);
            let content = parse_item(item, fresh())?;
            match grid.get_mut(y * w + x) {
                Some(Cell::Box { content: c, .. }) => *c = content,
                _ => return Err(bad("box line does not point at a box")),
            }
        }
        let inventory = parse_item(&inventory_text, fresh())?;
        let mut world = WorldState::from_parts(layout, grid, agent, heading, inventory, task, seed);
        world.steps = steps;
        world.relocation = relocation;
        world.done = tf[9] == "1";
        world.success = tf[11] == "1";
        Ok(world)
    }
}
