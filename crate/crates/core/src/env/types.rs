use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Grey,
}

impl Color {
    pub const ALL: [Color; 6] = [Color::Red, Color::Green, Color::Blue, Color::Purple, Color::Yellow, Color::Grey];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn glyph(self) -> char {
        match self {
            Color::Red => 'r',
            Color::Green => 'g',
            Color::Blue => 'b',
            Color::Purple => 'p',
            Color::Yellow => 'y',
            Color::Grey => 'e',
        }
    }

    pub fn from_glyph(c: char) -> Option<Color> {
        Color::ALL.into_iter().find(|col| col.glyph() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Purple => "purple",
            Color::Yellow => "yellow",
            Color::Grey => "grey",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

impl DoorState {
    pub fn code(self) -> u8 {
        match self {
            DoorState::Open => 0,
            DoorState::Closed => 1,
            DoorState::Locked => 2,
        }
    }
}

/// Stable identity of an object for the lifetime of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Carryable {
    Key { id: ObjectId, color: Color },
    Ball { id: ObjectId, color: Color },
}

impl Carryable {
    pub fn id(self) -> ObjectId {
        match self {
            Carryable::Key { id, .. } | Carryable::Ball { id, .. } => id,
        }
    }

    pub fn color(self) -> Color {
        match self {
            Carryable::Key { color, .. } | Carryable::Ball { color, .. } => color,
        }
    }

    pub fn kind(self) -> ObjectKind {
        match self {
            Carryable::Key { .. } => ObjectKind::Key,
            Carryable::Ball { .. } => ObjectKind::Ball,
        }
    }

    pub fn is_goal(self) -> bool {
        matches!(self, Carryable::Ball { color: Color::Blue, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectKind {
    Door,
    Key,
    Ball,
    Box,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Wall,
    Door { id: ObjectId, color: Color, state: DoorState },
    Item(Carryable),
    Box { id: ObjectId, color: Color, content: Option<Carryable> },
}

impl Cell {
    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }

    /// Whether the agent may stand on this cell.
    pub fn is_passable(&self) -> bool {
        matches!(self, Cell::Empty | Cell::Door { state: DoorState::Open, .. })
    }

    /// Whether light passes through this cell.
    pub fn is_transparent(&self) -> bool {
        !matches!(self, Cell::Wall | Cell::Door { state: DoorState::Closed | DoorState::Locked, .. })
    }

    pub fn object_id(&self) -> Option<ObjectId> {
        match self {
            Cell::Door { id, .. } | Cell::Box { id, .. } => Some(*id),
            Cell::Item(c) => Some(c.id()),
            _ => None,
        }
    }

    pub fn type_code(&self) -> u8 {
        match self {
            Cell::Empty => codes::EMPTY,
            Cell::Wall => codes::WALL,
            Cell::Door { .. } => codes::DOOR,
            Cell::Item(Carryable::Key { .. }) => codes::KEY,
            Cell::Item(Carryable::Ball { .. }) => codes::BALL,
            Cell::Box { .. } => codes::BOX,
        }
    }

    pub fn color(&self) -> Option<Color> {
        match self {
            Cell::Door { color, .. } | Cell::Box { color, .. } => Some(*color),
            Cell::Item(c) => Some(c.color()),
            _ => None,
        }
    }

    pub fn state_code(&self) -> u8 {
        match self {
            Cell::Door { state, .. } => state.code(),
            _ => 0,
        }
    }
}

/// Per-cell observation codes.
pub mod codes {
    pub const UNSEEN: u8 = 0;
    pub const EMPTY: u8 = 1;
    pub const WALL: u8 = 2;
    pub const DOOR: u8 = 3;
    pub const KEY: u8 = 4;
    pub const BALL: u8 = 5;
    pub const BOX: u8 = 6;
    pub const MAX_TYPE: u8 = 6;
    pub const MAX_COLOR: u8 = 5;
    pub const MAX_STATE: u8 = 2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn right(self) -> Heading {
        Heading::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Heading {
        Heading::ALL[(self as usize + 3) % 4]
    }

    pub fn glyph(self) -> char {
        match self {
            Heading::North => '^',
            Heading::East => '>',
            Heading::South => 'v',
            Heading::West => '<',
        }
    }

    pub fn from_glyph(c: char) -> Option<Heading> {
        Heading::ALL.into_iter().find(|h| h.glyph() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [Action::Left, Action::Right, Action::Forward, Action::Pickup, Action::Drop, Action::Toggle];

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Forward => "forward",
            Action::Pickup => "pickup",
            Action::Drop => "drop",
            Action::Toggle => "toggle",
        }
    }

    pub fn from_name(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}
