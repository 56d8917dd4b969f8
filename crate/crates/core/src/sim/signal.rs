//! Per-intersection signal controller with amber and all-red staging.

use crate::error::{Error, Result};

use super::network::{TRAM_FROM_EAST, TRAM_FROM_WEST};

pub const AMBER_S: u32 = 3;
pub const ALL_RED_S: u32 = 2;
pub const MIN_GREEN_S: u32 = 8;
pub const MAX_GREEN_S: u32 = 45;
/// Seconds lost to clearance at every phase change.
pub const TRANSITION_S: u32 = AMBER_S + ALL_RED_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// North–south through and left.
    P1,
    /// North–south protected right.
    P2,
    /// East–west through and left, plus both tram tracks.
    P3,
    /// East–west protected right.
    P4,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Self::P1, Self::P2, Self::P3, Self::P4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::OutOfRange {
            what: "phase",
            index: i,
            limit: 4,
        })
    }

    /// Local lane indices released by this phase.
    pub fn lanes(self) -> &'static [usize] {
        match self {
            Self::P1 => &[0, 2],
            Self::P2 => &[1, 3],
            Self::P3 => &[4, 6, TRAM_FROM_EAST, TRAM_FROM_WEST],
            Self::P4 => &[5, 7],
        }
    }

    pub fn permits(self, local_lane: usize) -> bool {
        self.lanes().contains(&local_lane)
    }

    /// Next phase in the fixed P1→P2→P3→P4 rotation.
    pub fn next(self) -> Self {
        Self::ALL[(self.index() + 1) % 4]
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "P{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Green,
    Amber,
    AllRed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalController {
    id: usize,
    phase: Phase,
    stage: Stage,
    remaining: u32,
    trigger: bool,
    pending: Option<(Phase, u32)>,
}

impl SignalController {
    /// Starts in P1 green. With `initial_green == 0` the trigger is raised at once.
    pub fn new(id: usize, initial_green: u32) -> Self {
        Self {
            id,
            phase: Phase::P1,
            stage: Stage::Green,
            remaining: initial_green,
            trigger: initial_green == 0,
            pending: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Phase shown (or last shown, during a transition).
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn remaining(&self) -> u32 {
        self.remaining
    }

    pub fn trigger(&self) -> bool {
        self.trigger
    }

    pub fn pending(&self) -> Option<(Phase, u32)> {
        self.pending
    }

    /// Whether `local_lane` may discharge this second.
    pub fn releases(&self, local_lane: usize) -> bool {
        self.stage == Stage::Green && self.phase.permits(local_lane)
    }

    /// Schedules amber → all-red → green of `phase` for `green_s` seconds.
    pub fn apply(&mut self, phase: Phase, green_s: u32) -> Result<()> {
        if !self.trigger {
            return Err(Error::Signal(format!("intersection {}: no decision pending", self.id)));
        }
        if phase == self.phase {
            return Err(Error::Signal(format!(
                "intersection {}: {phase} repeats the current phase",
                self.id
            )));
        }
        if !(MIN_GREEN_S..=MAX_GREEN_S).contains(&green_s) {
            return Err(Error::Signal(format!(
                "intersection {}: green {green_s}s outside [{MIN_GREEN_S}, {MAX_GREEN_S}]",
                self.id
            )));
        }
        self.trigger = false;
        self.stage = Stage::Amber;
        self.remaining = AMBER_S;
        self.pending = Some((phase, green_s));
        Ok(())
    }

    /// Advances one second. Returns true when a new green begins.
    pub fn tick(&mut self) -> bool {
        match self.stage {
            Stage::Green => {
                if self.remaining > 0 {
                    self.remaining -= 1;
                    if self.remaining == 0 {
                        self.trigger = true;
                    }
                }
                false
            }
            Stage::Amber => {
                self.remaining -= 1;
                if self.remaining == 0 {
                    self.stage = Stage::AllRed;
                    self.remaining = ALL_RED_S;
                }
                false
            }
            Stage::AllRed => {
                self.remaining -= 1;
                if self.remaining == 0 {
                    let (phase, green) = self.pending.take().expect("pending phase during all-red");
                    self.phase = phase;
                    self.stage = Stage::Green;
                    self.remaining = green;
                    return true;
                }
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_to_p2_green_window() {
        let mut c = SignalController::new(0, 0);
        assert!(c.trigger());
        c.apply(Phase::P2, 10).unwrap();
        let mut green_p2 = Vec::new();
        for t in 0..20 {
            if c.stage() == Stage::Green && c.phase() == Phase::P2 {
                green_p2.push(t);
            }
            if t == 15 {
                assert!(c.trigger());
            } else if t < 15 {
                assert!(!c.trigger());
            }
            if (0..3).contains(&t) {
                assert_eq!(c.stage(), Stage::Amber);
            }
            if (3..5).contains(&t) {
                assert_eq!(c.stage(), Stage::AllRed);
            }
            c.tick();
        }
        assert_eq!(green_p2.first(), Some(&5));
        // held green after expiry until the next decision
        assert!(green_p2.contains(&14) && green_p2.contains(&19));
    }

    #[test]
    fn rejects_repeat_short_green_and_no_trigger() {
        let mut c = SignalController::new(0, 0);
        assert!(c.apply(Phase::P1, 10).is_err());
        assert!(c.apply(Phase::P2, 7).is_err());
        assert!(c.apply(Phase::P2, 46).is_err());
        c.apply(Phase::P3, 8).unwrap();
        assert!(c.apply(Phase::P4, 8).is_err());
    }

    #[test]
    fn initial_green_delays_trigger() {
        let mut c = SignalController::new(0, 8);
        for _ in 0..7 {
            assert!(!c.trigger());
            c.tick();
        }
        c.tick();
        assert!(c.trigger());
        assert_eq!(c.phase(), Phase::P1);
    }

    #[test]
    fn phases_partition_lanes() {
        let mut seen = [0; 10];
        for p in Phase::ALL {
            for &l in p.lanes() {
                seen[l] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(Phase::P4.next(), Phase::P1);
        assert_eq!(Phase::P3.to_string(), "P3");
    }
}
