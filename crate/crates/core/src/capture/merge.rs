//! Merge of the two directions of a monitored link.
//!
//! Each direction arrives in timestamp order, but the two directions are
//! captured through separate paths whose relative timing may be off by up
//! to one TDM slot. The merger holds a record back until the other
//! direction has moved past it by more than that bound (or has ended), then
//! releases records in a stable timestamp order: ties go to direction A,
//! and the order within a direction is never changed.

use std::collections::VecDeque;
use std::time::Duration;

use thiserror::Error;

use crate::formats::erf::{ErfTimestamp, TraceRecord};

/// Default cross-direction skew: one 15.625 µs TDM slot.
pub const TDM_SLOT: Duration = Duration::from_nanos(15_625);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkewBound {
    max_skew: Duration,
}

impl SkewBound {
    pub fn new(max_skew: Duration) -> Self {
        SkewBound { max_skew }
    }

    pub fn max_skew(&self) -> Duration {
        self.max_skew
    }

    /// Bound in ERF units, rounded up.
    fn raw(&self) -> u64 {
        let raw = (self.max_skew.as_nanos() << 32).div_ceil(1_000_000_000);
        raw.min(u64::MAX as u128) as u64
    }
}

impl Default for SkewBound {
    fn default() -> Self {
        SkewBound::new(TDM_SLOT)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    A,
    B,
}

impl Direction {
    fn other(self) -> Direction {
        match self {
            Direction::A => Direction::B,
            Direction::B => Direction::A,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("direction {stream:?} went backwards in time at record {index}")]
    NonMonotonicInput { stream: Direction, index: u64 },
}

#[derive(Default)]
struct Lane {
    buf: VecDeque<TraceRecord>,
    last: Option<ErfTimestamp>,
    seen: u64,
    closed: bool,
}

/// Push-based merge stage. Producers push per direction; the consumer pops
/// whatever is safe to release.
pub struct DirectionMerger {
    bound: u64,
    a: Lane,
    b: Lane,
}

impl DirectionMerger {
    pub fn new(bound: SkewBound) -> Self {
        DirectionMerger {
            bound: bound.raw(),
            a: Lane::default(),
            b: Lane::default(),
        }
    }

    fn lane(&mut self, d: Direction) -> &mut Lane {
        match d {
            Direction::A => &mut self.a,
            Direction::B => &mut self.b,
        }
    }

    fn lane_ref(&self, d: Direction) -> &Lane {
        match d {
            Direction::A => &self.a,
            Direction::B => &self.b,
        }
    }

    pub fn push(&mut self, dir: Direction, rec: TraceRecord) -> Result<(), MergeError> {
        let lane = self.lane(dir);
        if lane.last.is_some_and(|last| rec.ts < last) {
            return Err(MergeError::NonMonotonicInput {
                stream: dir,
                index: lane.seen,
            });
        }
        lane.last = Some(rec.ts);
        lane.seen += 1;
        lane.buf.push_back(rec);
        Ok(())
    }

    /// Mark a direction as finished; everything it held may now drain.
    pub fn close(&mut self, dir: Direction) {
        self.lane(dir).closed = true;
    }

    pub fn is_closed(&self, dir: Direction) -> bool {
        self.lane_ref(dir).closed
    }

    pub fn is_drained(&self) -> bool {
        self.a.closed && self.b.closed && self.a.buf.is_empty() && self.b.buf.is_empty()
    }

    /// Latest timestamp pushed on a direction.
    pub fn last_seen(&self, dir: Direction) -> Option<ErfTimestamp> {
        self.lane_ref(dir).last
    }

    pub fn buffered(&self) -> usize {
        self.a.buf.len() + self.b.buf.len()
    }

    /// Next record that can be released, if any.
    pub fn pop_ready(&mut self) -> Option<TraceRecord> {
        let dir = match (self.a.buf.front(), self.b.buf.front()) {
            (None, None) => return None,
            (Some(_), None) => Direction::A,
            (None, Some(_)) => Direction::B,
            (Some(x), Some(y)) => {
                if y.ts < x.ts {
                    Direction::B
                } else {
                    Direction::A
                }
            }
        };
        let t = self.lane_ref(dir).buf.front().unwrap().ts;
        let other = self.lane_ref(dir.other());
        let safe = other.closed
            || other
                .last
                .is_some_and(|last| last.0 > t.0.saturating_add(self.bound));
        if safe {
            self.lane(dir).buf.pop_front()
        } else {
            None
        }
    }
}

/// Pull-based merge of two record streams. The inputs may be blocking
/// iterators (e.g. channel receivers fed by capture threads).
pub struct MergeDirections<A, B> {
    a: Option<A>,
    b: Option<B>,
    merger: DirectionMerger,
    failed: bool,
}

pub fn merge_directions<A, B>(a: A, b: B, bound: SkewBound) -> MergeDirections<A::IntoIter, B::IntoIter>
where
    A: IntoIterator<Item = TraceRecord>,
    B: IntoIterator<Item = TraceRecord>,
{
    MergeDirections {
        a: Some(a.into_iter()),
        b: Some(b.into_iter()),
        merger: DirectionMerger::new(bound),
        failed: false,
    }
}

impl<A, B> MergeDirections<A, B>
where
    A: Iterator<Item = TraceRecord>,
    B: Iterator<Item = TraceRecord>,
{
    /// Pull one record from the direction that is furthest behind.
    fn pull(&mut self) -> Result<bool, MergeError> {
        let pick = match (self.a.is_some(), self.b.is_some()) {
            (false, false) => return Ok(false),
            (true, false) => Direction::A,
            (false, true) => Direction::B,
            (true, true) => {
                let la = self.merger.last_seen(Direction::A);
                let lb = self.merger.last_seen(Direction::B);
                if la <= lb {
                    Direction::A
                } else {
                    Direction::B
                }
            }
        };
        let next = match pick {
            Direction::A => self.a.as_mut().unwrap().next(),
            Direction::B => self.b.as_mut().unwrap().next(),
        };
        match next {
            Some(rec) => self.merger.push(pick, rec)?,
            None => {
                self.merger.close(pick);
                match pick {
                    Direction::A => self.a = None,
                    Direction::B => self.b = None,
                }
            }
        }
        Ok(true)
    }
}

impl<A, B> Iterator for MergeDirections<A, B>
where
    A: Iterator<Item = TraceRecord>,
    B: Iterator<Item = TraceRecord>,
{
    type Item = Result<TraceRecord, MergeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(rec) = self.merger.pop_ready() {
                return Some(Ok(rec));
            }
            match self.pull() {
                Ok(true) => continue,
                Ok(false) => return None,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}
