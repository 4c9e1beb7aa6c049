//! Min-priority queues over `(f64 key, u32 item)` entries.
//!
//! Entries order by key, then item. Keys compare numerically, so `-0.0`
//! and `0.0` are equal; NaN keys are not supported.

/// Children per heap node; four 16-byte entries span at most two cache lines.
const ARITY: usize = 4;

/// Packed so that integer order is entry order.
type Entry = u128;

/// Monotone map from non-NaN `f64` to `u64`; both zeros map to the same value.
#[inline]
fn key_bits(key: f64) -> u64 {
    let b = (key + 0.0).to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

#[inline]
fn bits_key(b: u64) -> f64 {
    f64::from_bits(if b >> 63 == 1 { b & !(1 << 63) } else { !b })
}

#[inline]
fn pack(key: f64, item: u32) -> Entry {
    (key_bits(key) as u128) << 64 | item as u128
}

/// A popped entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Popped {
    pub key: f64,
    pub item: u32,
}

#[inline]
fn unpack(e: Entry) -> Popped {
    Popped {
        key: bits_key((e >> 64) as u64),
        item: e as u32,
    }
}

const ABSENT: u32 = u32::MAX;

/// Cache hint for `p`; never faults, even on a dangling address.
#[inline(always)]
pub(crate) fn prefetch<T>(p: *const T) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: prefetching only hints the cache and dereferences nothing.
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(p as *const i8);
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = p;
}

/// Four-ary indexed min-heap over items `0..n`, each present at most once.
#[derive(Debug, Clone)]
pub struct IndexedMinHeap {
    heap: Vec<Entry>,
    pos: Vec<u32>,
}

impl IndexedMinHeap {
    /// Empty heap accepting items `0..n`.
    pub fn with_items(n: usize) -> Self {
        assert!(n < ABSENT as usize, "too many items");
        IndexedMinHeap {
            heap: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, item: u32) -> bool {
        self.pos[item as usize] != ABSENT
    }

    pub fn key(&self, item: u32) -> Option<f64> {
        match self.pos[item as usize] {
            ABSENT => None,
            p => Some(unpack(self.heap[p as usize]).key),
        }
    }

    pub fn peek(&self) -> Option<Popped> {
        self.heap.first().map(|&e| unpack(e))
    }

    /// Inserts `item` or moves it to `key`.
    #[inline]
    pub fn set(&mut self, item: u32, key: f64) {
        let e = pack(key, item);
        match self.pos[item as usize] {
            ABSENT => {
                self.heap.push(e);
                self.sift_up(self.heap.len() - 1, e);
            }
            p => {
                let p = p as usize;
                if e < self.heap[p] {
                    self.sift_up(p, e);
                } else {
                    self.sift_down(p, e);
                }
            }
        }
    }

    /// Hints the cache about the position record of `item`.
    #[inline]
    pub fn prefetch_position(&self, item: u32) {
        prefetch(self.pos.as_ptr().wrapping_add(item as usize));
    }

    /// Hints the cache about the entry of `item` and its parent, the first
    /// entries `set` compares against.
    #[inline]
    pub fn prefetch_entry(&self, item: u32) {
        let p = self.pos[item as usize];
        if p != ABSENT {
            let h = self.heap.as_ptr();
            prefetch(h.wrapping_add(p as usize));
            prefetch(h.wrapping_add((p as usize).saturating_sub(1) / ARITY));
        }
    }

    pub fn pop(&mut self) -> Option<Popped> {
        let top = *self.heap.first()?;
        self.remove_at(0);
        Some(unpack(top))
    }

    /// Removes `item`; returns whether it was present.
    pub fn remove(&mut self, item: u32) -> bool {
        match self.pos[item as usize] {
            ABSENT => false,
            p => {
                self.remove_at(p as usize);
                true
            }
        }
    }

    fn remove_at(&mut self, p: usize) {
        let gone = self.heap[p] as u32;
        self.pos[gone as usize] = ABSENT;
        let last = self.heap.pop().expect("nonempty");
        if p < self.heap.len() {
            if last < self.heap[p] {
                self.sift_up(p, last);
            } else {
                self.sift_down(p, last);
            }
        }
    }

    #[inline]
    fn place(&mut self, p: usize, e: Entry) {
        self.heap[p] = e;
        self.pos[e as u32 as usize] = p as u32;
    }

    fn sift_up(&mut self, mut p: usize, e: Entry) {
        while p > 0 {
            let parent = (p - 1) / ARITY;
            let pe = self.heap[parent];
            if e >= pe {
                break;
            }
            self.place(p, pe);
            p = parent;
        }
        self.place(p, e);
    }

    fn sift_down(&mut self, mut p: usize, e: Entry) {
        let n = self.heap.len();
        loop {
            let first = ARITY * p + 1;
            if first >= n {
                break;
            }
            let end = (first + ARITY).min(n);
            let mut best = first;
            for c in first + 1..end {
                if self.heap[c] < self.heap[best] {
                    best = c;
                }
            }
            let be = self.heap[best];
            if be >= e {
                break;
            }
            self.place(p, be);
            p = best;
        }
        self.place(p, e);
    }
}

/// Sorts by scattering on the top key bits, then sorting each bucket
/// while it is cache resident. Real keys occupy few exponents, so the
/// bucket count grows with the input.
fn sort_entries(mut entries: Vec<Entry>) -> Vec<Entry> {
    const SMALL: usize = 1 << 15;
    if entries.len() <= SMALL {
        entries.sort_unstable();
        return entries;
    }
    let bits = (entries.len().ilog2() - 2).min(22);
    let bucket = |e: &Entry| (e >> (128 - bits)) as usize;
    let mut start = vec![0usize; (1 << bits) + 1];
    for e in &entries {
        start[bucket(e) + 1] += 1;
    }
    for b in 0..1 << bits {
        start[b + 1] += start[b];
    }
    let mut next = start.clone();
    let mut out = vec![0; entries.len()];
    for e in entries {
        let b = bucket(&e);
        out[next[b]] = e;
        next[b] += 1;
    }
    for w in start.windows(2) {
        out[w[0]..w[1]].sort_unstable();
    }
    out
}

/// Queue for items whose key changes over time, with staleness decided by
/// the caller.
///
/// Initial entries sit in one sorted run consumed front to back; re-keyed
/// items move into an [`IndexedMinHeap`]. The run entry of a re-keyed item
/// stays behind and is skipped on pop when the caller's predicate rejects
/// it. With a predicate that accepts exactly the live items at their
/// current key, pops come out in the order of one indexed heap over all
/// items.
#[derive(Debug, Clone)]
pub struct LazyQueue {
    run: Vec<Entry>,
    head: usize,
    changed: IndexedMinHeap,
}

impl LazyQueue {
    /// Queue holding item `i` at key `keys[i]`.
    pub fn from_keys(keys: &[f64]) -> Self {
        assert!(keys.len() <= u32::MAX as usize, "too many items");
        let run = sort_entries(keys.iter().enumerate().map(|(i, &k)| pack(k, i as u32)).collect());
        LazyQueue {
            run,
            head: 0,
            changed: IndexedMinHeap::with_items(keys.len()),
        }
    }

    /// Records a new key for `item`.
    #[inline]
    pub fn push(&mut self, item: u32, key: f64) {
        self.changed.set(item, key);
    }

    /// Hints the cache about the heap position record of `item`.
    #[inline]
    pub fn prefetch_position(&self, item: u32) {
        self.changed.prefetch_position(item);
    }

    /// Hints the cache about the heap entry of `item`, if any.
    #[inline]
    pub fn prefetch_entry(&self, item: u32) {
        self.changed.prefetch_entry(item);
    }

    /// The `d`-th not yet consumed initial entry, stale or not.
    #[inline]
    pub fn upcoming(&self, d: usize) -> Option<Popped> {
        self.run.get(self.head + d).map(|&e| unpack(e))
    }

    /// Removes and returns the smallest entry accepted by `current`,
    /// discarding every rejected entry that sorts before it.
    pub fn pop_current(&mut self, mut current: impl FnMut(&Popped) -> bool) -> Option<Popped> {
        let from_run = loop {
            match self.run.get(self.head) {
                Some(&e) => {
                    if current(&unpack(e)) {
                        break Some(e);
                    }
                    self.head += 1;
                }
                None => break None,
            }
        };
        loop {
            match (self.changed.heap.first().copied(), from_run) {
                (Some(h), Some(r)) if r < h => {
                    self.head += 1;
                    return Some(unpack(r));
                }
                (Some(h), _) => {
                    self.changed.remove_at(0);
                    let p = unpack(h);
                    if current(&p) {
                        return Some(p);
                    }
                }
                (None, Some(r)) => {
                    self.head += 1;
                    return Some(unpack(r));
                }
                (None, None) => return None,
            }
        }
    }

    /// Every entry still held, stale ones included, in no particular order.
    pub fn entries(&self) -> impl Iterator<Item = Popped> + '_ {
        self.run[self.head..]
            .iter()
            .chain(&self.changed.heap)
            .map(|&e| unpack(e))
    }
}
