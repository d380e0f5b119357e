//! Node motion inside a bounded rectangle: random waypoint (zero pause) and
//! random walk with fixed-duration legs and wall reflection.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Length of one random-walk leg before a new heading is drawn.
pub const WALK_LEG_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn new(width: f64, height: f64) -> Option<Self> {
        (width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite())
            .then_some(Area { width, height })
    }

    pub fn square(side: f64) -> Option<Self> {
        Area::new(side, side)
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        Position { x: rng.random::<f64>() * self.width, y: rng.random::<f64>() * self.height }
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MobilityModel {
    Static,
    #[default]
    Waypoint,
    Walk,
}

impl MobilityModel {
    pub fn token(self) -> &'static str {
        match self {
            MobilityModel::Static => "static",
            MobilityModel::Waypoint => "waypoint",
            MobilityModel::Walk => "walk",
        }
    }
}

impl fmt::Display for MobilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MobilityModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(MobilityModel::Static),
            "waypoint" => Ok(MobilityModel::Waypoint),
            "walk" => Ok(MobilityModel::Walk),
            other => Err(format!("unknown mobility model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Static,
    Waypoint { target: Position },
    Walk { heading: f64, leg_remaining_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub position: Position,
    /// Meters per second.
    pub speed: f64,
    pub motion: Motion,
}

impl MobilityState {
    pub fn spawn<R: Rng + ?Sized>(
        model: MobilityModel,
        position: Position,
        speed: f64,
        area: Area,
        rng: &mut R,
    ) -> Self {
        let motion = match model {
            MobilityModel::Static => Motion::Static,
            MobilityModel::Waypoint => Motion::Waypoint { target: area.random_point(rng) },
            MobilityModel::Walk => Motion::Walk {
                heading: rng.random::<f64>() * TAU,
                leg_remaining_s: WALK_LEG_S,
            },
        };
        MobilityState { position, speed, motion }
    }

    pub fn step<R: Rng + ?Sized>(&self, dt: f64, area: Area, rng: &mut R) -> Self {
        match self.motion {
            Motion::Static => *self,
            Motion::Waypoint { .. } => waypoint_step(self, dt, area, rng),
            Motion::Walk { .. } => walk_step(self, dt, area, rng),
        }
    }
}

pub fn waypoint_step<R: Rng + ?Sized>(
    m: &MobilityState,
    dt: f64,
    area: Area,
    rng: &mut R,
) -> MobilityState {
    let Motion::Waypoint { mut target } = m.motion else {
        return *m;
    };
    let mut pos = m.position;
    let mut budget = m.speed * dt;
    // Bounded so that degenerate targets cannot spin forever.
    for _ in 0..64 {
        let d = pos.distance(target);
        if d <= budget {
            pos = target;
            budget -= d;
            target = area.random_point(rng);
            if budget <= 0.0 {
                break;
            }
        } else {
            let f = budget / d;
            pos = Position::new(pos.x + (target.x - pos.x) * f, pos.y + (target.y - pos.y) * f);
            break;
        }
    }
    MobilityState { position: clamp(pos, area), speed: m.speed, motion: Motion::Waypoint { target } }
}

pub fn walk_step<R: Rng + ?Sized>(
    m: &MobilityState,
    dt: f64,
    area: Area,
    rng: &mut R,
) -> MobilityState {
    let Motion::Walk { heading, leg_remaining_s } = m.motion else {
        return *m;
    };
    let (mut vx, mut vy) = (heading.cos(), heading.sin());
    let dist = m.speed * dt;
    let (x, flip_x) = reflect(m.position.x + vx * dist, area.width);
    let (y, flip_y) = reflect(m.position.y + vy * dist, area.height);
    if flip_x {
        vx = -vx;
    }
    if flip_y {
        vy = -vy;
    }
    let mut heading = vy.atan2(vx);
    let mut leg = leg_remaining_s - dt;
    if leg <= 0.0 {
        heading = rng.random::<f64>() * TAU;
        leg = WALK_LEG_S;
    }
    MobilityState {
        position: clamp(Position::new(x, y), area),
        speed: m.speed,
        motion: Motion::Walk { heading, leg_remaining_s: leg },
    }
}

/// Folds a coordinate back into `[0, extent]`; reports whether the
/// direction ends up reversed.
fn reflect(mut v: f64, extent: f64) -> (f64, bool) {
    let mut flipped = false;
    for _ in 0..64 {
        if v < 0.0 {
            v = -v;
        } else if v > extent {
            v = 2.0 * extent - v;
        } else {
            break;
        }
        flipped = !flipped;
    }
    (v.clamp(0.0, extent), flipped)
}

fn clamp(p: Position, area: Area) -> Position {
    Position::new(p.x.clamp(0.0, area.width), p.y.clamp(0.0, area.height))
}
