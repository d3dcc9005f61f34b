use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::LinkId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EventKind {
    /// Service end on a link; ignored when `token` no longer matches.
    Completion { link: LinkId, token: u64 },
    /// Poisson tick of a uniformized link.
    Tick { link: LinkId },
}

impl EventKind {
    fn link(&self) -> LinkId {
        match *self {
            EventKind::Completion { link, .. } | EventKind::Tick { link } => link,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.link().cmp(&other.kind.link()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

/// Min-heap of link events. External arrivals are merged in by the engine
/// from a pre-sorted list and always lose ties against link events.
#[derive(Default)]
pub(crate) struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_by_time_then_link_then_seq() {
        let mut q = EventQueue::default();
        q.push(2.0, EventKind::Tick { link: 0 });
        q.push(1.0, EventKind::Tick { link: 3 });
        q.push(1.0, EventKind::Completion { link: 1, token: 0 });
        q.push(1.0, EventKind::Tick { link: 1 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.kind))
            .collect();
        assert_eq!(
            order,
            vec![
                (1.0, EventKind::Completion { link: 1, token: 0 }),
                (1.0, EventKind::Tick { link: 1 }),
                (1.0, EventKind::Tick { link: 3 }),
                (2.0, EventKind::Tick { link: 0 }),
            ]
        );
    }
}
