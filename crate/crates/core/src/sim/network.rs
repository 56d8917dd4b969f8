//! Corridor geometry: intersections along an east–west arterial, their
//! approach lanes, entries, and the tram track with its stops.
//!
//! Each intersection owns ten incoming lanes, indexed locally as
//! `N0 N1 S0 S1 E0 E1 W0 W1 TE TW`. Sub-lane 0 carries through and left
//! movements, sub-lane 1 the protected right turn (left-hand traffic).
//! `TE`/`TW` are the tram tracks arriving from the east and west.

use rand::Rng;

use crate::error::{Error, Result};

use super::config::SimConfig;

pub const LANES_PER_INTERSECTION: usize = 10;
pub const TRAM_FROM_EAST: usize = 8;
pub const TRAM_FROM_WEST: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Car,
    Bus,
    Tram,
}

/// The side of the intersection a lane arrives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Approach {
    North,
    South,
    East,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Self::North, Self::South, Self::East, Self::West];

    fn index(self) -> usize {
        match self {
            Self::North => 0,
            Self::South => 1,
            Self::East => 2,
            Self::West => 3,
        }
    }

    /// Compass direction of travel for vehicles on this approach.
    fn heading(self) -> Heading {
        match self {
            Self::North => Heading::South,
            Self::South => Heading::North,
            Self::East => Heading::West,
            Self::West => Heading::East,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Heading {
    North,
    South,
    East,
    West,
}

impl Heading {
    fn left(self) -> Self {
        match self {
            Self::South => Self::East,
            Self::North => Self::West,
            Self::East => Self::North,
            Self::West => Self::South,
        }
    }

    fn right(self) -> Self {
        match self {
            Self::South => Self::West,
            Self::North => Self::East,
            Self::East => Self::South,
            Self::West => Self::North,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Through,
    Left,
    Right,
}

/// Local index of the road lane used by `movement` on `approach`.
pub fn road_lane(approach: Approach, movement: Movement) -> usize {
    let sub = if movement == Movement::Right { 1 } else { 0 };
    approach.index() * 2 + sub
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub intersection: usize,
    pub local: usize,
    pub approach: Approach,
    pub tram: bool,
    pub length_m: f64,
    /// Tram stop position along the lane, if any.
    pub stop_m: Option<f64>,
}

/// Where car demand enters the corridor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub intersection: usize,
    pub approach: Approach,
}

impl Entry {
    /// True for the two ends of the arterial, false for side streets.
    pub fn is_corridor_end(&self) -> bool {
        matches!(self.approach, Approach::East | Approach::West)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    lanes: Vec<Lane>,
    entries: Vec<Entry>,
    stop_links: Vec<usize>,
}

impl Network {
    pub fn build(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let nc = &cfg.network;
        let n = nc.intersections;
        let stop_links: Vec<usize> = (0..nc.tram_stops)
            .map(|s| (2 * s + 1) * (n - 1) / (2 * nc.tram_stops))
            .collect();
        let mut lanes = Vec::with_capacity(n * LANES_PER_INTERSECTION);
        for k in 0..n {
            for local in 0..LANES_PER_INTERSECTION {
                let approach = match local {
                    0 | 1 => Approach::North,
                    2 | 3 => Approach::South,
                    4 | 5 | TRAM_FROM_EAST => Approach::East,
                    _ => Approach::West,
                };
                let internal = match approach {
                    Approach::East => k + 1 < n,
                    Approach::West => k > 0,
                    _ => false,
                };
                let length_m = if internal { nc.link_length_m } else { nc.entry_length_m };
                let tram = local >= TRAM_FROM_EAST;
                // Link ℓ joins intersections ℓ and ℓ+1; its stop serves both
                // directions at mid-link.
                let stop_m = match local {
                    TRAM_FROM_WEST if k > 0 && stop_links.contains(&(k - 1)) => Some(length_m / 2.0),
                    TRAM_FROM_EAST if k + 1 < n && stop_links.contains(&k) => Some(length_m / 2.0),
                    _ => None,
                };
                lanes.push(Lane {
                    intersection: k,
                    local,
                    approach,
                    tram,
                    length_m,
                    stop_m,
                });
            }
        }
        let mut entries = Vec::with_capacity(2 * n + 2);
        for k in 0..n {
            entries.push(Entry {
                intersection: k,
                approach: Approach::North,
            });
            entries.push(Entry {
                intersection: k,
                approach: Approach::South,
            });
        }
        entries.push(Entry {
            intersection: 0,
            approach: Approach::West,
        });
        entries.push(Entry {
            intersection: n - 1,
            approach: Approach::East,
        });
        Ok(Self {
            n,
            lanes,
            entries,
            stop_links,
        })
    }

    pub fn num_intersections(&self) -> usize {
        self.n
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane(&self, id: usize) -> &Lane {
        &self.lanes[id]
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane_id(&self, intersection: usize, local: usize) -> usize {
        intersection * LANES_PER_INTERSECTION + local
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Indices of corridor links (between `ℓ` and `ℓ+1`) carrying a tram stop.
    pub fn stop_links(&self) -> &[usize] {
        &self.stop_links
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.n {
            return Err(Error::OutOfRange {
                what: "intersection",
                index: k,
                limit: self.n,
            });
        }
        Ok(())
    }

    /// Lane sequence for a car entering at `entry`, turning at every
    /// intersection according to the given through/left/right ratios.
    pub fn car_route<R: Rng + ?Sized>(&self, entry: Entry, ratios: [f64; 3], rng: &mut R) -> Result<Vec<usize>> {
        self.check(entry.intersection)?;
        let mut route = Vec::new();
        let (mut k, mut approach) = (entry.intersection, entry.approach);
        loop {
            let u: f64 = rng.random();
            let movement = if u < ratios[0] {
                Movement::Through
            } else if u < ratios[0] + ratios[1] {
                Movement::Left
            } else {
                Movement::Right
            };
            route.push(self.lane_id(k, road_lane(approach, movement)));
            let heading = approach.heading();
            let out = match movement {
                Movement::Through => heading,
                Movement::Left => heading.left(),
                Movement::Right => heading.right(),
            };
            match out {
                Heading::East if k + 1 < self.n => {
                    k += 1;
                    approach = Approach::West;
                }
                Heading::West if k > 0 => {
                    k -= 1;
                    approach = Approach::East;
                }
                _ => return Ok(route),
            }
        }
    }

    /// Buses run straight along the arterial on the through lanes.
    pub fn bus_route(&self, eastbound: bool) -> Vec<usize> {
        if eastbound {
            (0..self.n)
                .map(|k| self.lane_id(k, road_lane(Approach::West, Movement::Through)))
                .collect()
        } else {
            (0..self.n)
                .rev()
                .map(|k| self.lane_id(k, road_lane(Approach::East, Movement::Through)))
                .collect()
        }
    }

    /// The tram track visits every intersection in corridor order.
    pub fn tram_route(&self, eastbound: bool) -> Vec<usize> {
        if eastbound {
            (0..self.n).map(|k| self.lane_id(k, TRAM_FROM_WEST)).collect()
        } else {
            (0..self.n).rev().map(|k| self.lane_id(k, TRAM_FROM_EAST)).collect()
        }
    }
}
