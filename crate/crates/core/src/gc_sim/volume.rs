use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::GcError;
use crate::fxp::Fx32;

const EMPTY: u32 = u32::MAX;
/// Ticks per halving of a segment's write temperature.
const TEMPERATURE_HALF_LIFE: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentState {
    Free,
    Open,
    Sealed,
}

#[derive(Debug, Clone)]
pub struct Segment {
    state: SegmentState,
    valid: u32,
    fill: u32,
    last_write: u64,
    temperature: Fx32,
    temperature_tick: u64,
    slots: Vec<u32>,
}

impl Segment {
    fn new(bps: u32) -> Self {
        Segment {
            state: SegmentState::Free,
            valid: 0,
            fill: 0,
            last_write: 0,
            temperature: Fx32::ZERO,
            temperature_tick: 0,
            slots: vec![EMPTY; bps as usize],
        }
    }

    pub fn state(&self) -> SegmentState {
        self.state
    }

    pub fn valid_count(&self) -> u32 {
        self.valid
    }

    pub fn last_write(&self) -> u64 {
        self.last_write
    }

    /// Write temperature decayed to `tick`.
    pub fn temperature_at(&self, tick: u64) -> Fx32 {
        let halvings = (tick.saturating_sub(self.temperature_tick) / TEMPERATURE_HALF_LIFE).min(31);
        Fx32::from_raw(self.temperature.raw() >> halvings)
    }

    fn heat(&mut self, tick: u64) {
        let t = self.temperature_at(tick);
        self.temperature = t + Fx32::from_raw((Fx32::ONE - t).raw() >> 4);
        self.temperature_tick = tick;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcStats {
    pub user_writes: u64,
    pub gc_copies: u64,
    pub segments_reclaimed: u64,
}

impl GcStats {
    /// `(user_writes + gc_copies) / user_writes`, absent before any write.
    pub fn write_amplification(&self) -> Option<Fx32> {
        (self.user_writes > 0).then(|| {
            Fx32::from_ratio((self.user_writes + self.gc_copies) as i64, self.user_writes as i64)
                .unwrap_or(Fx32::MAX)
        })
    }
}

/// Log-structured volume: equal-size segments, one open segment receiving
/// appends, and a logical-block map.
#[derive(Debug, Clone)]
pub struct VolumeState {
    blocks_per_segment: u32,
    segments: Vec<Segment>,
    free: BTreeSet<u32>,
    open: Option<u32>,
    map: Vec<(u32, u32)>,
    tick: u64,
    stats: GcStats,
}

impl VolumeState {
    /// Lay out `logical_blocks` sequentially; the rest of the segments are
    /// free. At least 10% of raw capacity must stay unmapped.
    pub fn new(n_segments: u32, blocks_per_segment: u32, logical_blocks: u32) -> Result<Self, GcError> {
        if n_segments < 2 || blocks_per_segment == 0 {
            return Err(GcError::Config("need at least 2 segments and 1 block per segment"));
        }
        let capacity = n_segments as u64 * blocks_per_segment as u64;
        if logical_blocks as u64 * 10 > capacity * 9 {
            return Err(GcError::Config("logical blocks exceed 90% of capacity"));
        }
        let mut segments: Vec<Segment> = (0..n_segments).map(|_| Segment::new(blocks_per_segment)).collect();
        let mut map = Vec::with_capacity(logical_blocks as usize);
        for b in 0..logical_blocks {
            let seg = b / blocks_per_segment;
            let slot = b % blocks_per_segment;
            let s = &mut segments[seg as usize];
            s.slots[slot as usize] = b;
            s.valid += 1;
            s.fill += 1;
            s.state = SegmentState::Sealed;
            map.push((seg, slot));
        }
        let mut open = None;
        let used = logical_blocks.div_ceil(blocks_per_segment);
        if !logical_blocks.is_multiple_of(blocks_per_segment) {
            open = Some(used - 1);
            segments[(used - 1) as usize].state = SegmentState::Open;
        }
        let free = (used..n_segments).collect();
        Ok(VolumeState { blocks_per_segment, segments, free, open, map, tick: 0, stats: GcStats::default() })
    }

    pub fn n_segments(&self) -> u32 {
        self.segments.len() as u32
    }

    pub fn blocks_per_segment(&self) -> u32 {
        self.blocks_per_segment
    }

    pub fn logical_blocks(&self) -> u32 {
        self.map.len() as u32
    }

    pub fn free_segments(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn open_segment(&self) -> Option<u32> {
        self.open
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn stats(&self) -> &GcStats {
        &self.stats
    }

    pub fn segment(&self, idx: u32) -> Option<&Segment> {
        self.segments.get(idx as usize)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Where logical block `b` currently lives.
    pub fn location(&self, b: u32) -> Option<(u32, u32)> {
        self.map.get(b as usize).copied()
    }

    /// Fewer than 5% of segments free.
    pub fn is_critical(&self) -> bool {
        (self.free.len() as u64) * 20 < self.segments.len() as u64
    }

    /// Sealed segments, in index order.
    pub fn candidates(&self) -> impl Iterator<Item = u32> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.state == SegmentState::Sealed)
            .map(|(i, _)| i as u32)
    }

    fn open_room(&self) -> u32 {
        self.open.map(|o| self.blocks_per_segment - self.segments[o as usize].fill).unwrap_or(0)
    }

    /// Slots available for appends without reclaiming anything.
    pub fn append_room(&self) -> u64 {
        self.open_room() as u64 + self.free.len() as u64 * self.blocks_per_segment as u64
    }

    fn append(&mut self, block: u32) {
        if self.open_room() == 0 {
            if let Some(o) = self.open.take() {
                self.segments[o as usize].state = SegmentState::Sealed;
            }
            let next = self.free.pop_first().expect("append_room checked by caller");
            let s = &mut self.segments[next as usize];
            s.state = SegmentState::Open;
            s.last_write = self.tick;
            self.open = Some(next);
        }
        let o = self.open.expect("open segment present") as usize;
        let s = &mut self.segments[o];
        let slot = s.fill;
        s.slots[slot as usize] = block;
        s.fill += 1;
        s.valid += 1;
        self.map[block as usize] = (o as u32, slot);
    }

    fn invalidate(&mut self, block: u32) -> u32 {
        let (seg, slot) = self.map[block as usize];
        let s = &mut self.segments[seg as usize];
        s.slots[slot as usize] = EMPTY;
        s.valid -= 1;
        s.heat(self.tick);
        seg
    }

    /// User overwrite of logical block `block`. Returns the segment that
    /// held the previous copy.
    pub fn write(&mut self, block: u32) -> Result<u32, GcError> {
        if block >= self.logical_blocks() {
            return Err(GcError::Range(block));
        }
        if self.append_room() == 0 {
            return Err(GcError::VolumeFull);
        }
        self.tick += 1;
        let old = self.invalidate(block);
        self.append(block);
        let o = self.open.expect("append opened a segment");
        self.segments[o as usize].last_write = self.tick;
        self.stats.user_writes += 1;
        Ok(old)
    }

    /// Copy the victim's valid blocks to the open segment and erase it.
    /// Reward = reclaimed slots per copied block, `(B - v) / (1 + v)`.
    pub fn run_gc(&mut self, victim: u32) -> Result<Fx32, GcError> {
        let seg = self.segments.get(victim as usize).ok_or(GcError::Range(victim))?;
        if seg.state != SegmentState::Sealed {
            return Err(GcError::InvalidVictim(victim));
        }
        let valid = seg.valid;
        if valid as u64 > self.append_room() {
            return Err(GcError::VolumeFull);
        }
        let live: Vec<u32> = seg.slots.iter().copied().filter(|&b| b != EMPTY).collect();
        debug_assert_eq!(live.len() as u32, valid);
        for b in live {
            self.append(b);
        }
        let s = &mut self.segments[victim as usize];
        *s = Segment::new(self.blocks_per_segment);
        self.free.insert(victim);
        self.stats.gc_copies += valid as u64;
        self.stats.segments_reclaimed += 1;
        Ok(super::gc_reward(self.blocks_per_segment, valid))
    }

    /// Recount per-segment valid blocks from the map; returns true when every
    /// segment's counter matches and the free pool holds only erased
    /// segments.
    pub fn check_consistency(&self) -> bool {
        let mut counts = vec![0u32; self.segments.len()];
        for (b, &(seg, slot)) in self.map.iter().enumerate() {
            if self.segments[seg as usize].slots[slot as usize] != b as u32 {
                return false;
            }
            counts[seg as usize] += 1;
        }
        let slots_ok =
            self.segments.iter().all(|s| s.slots.iter().filter(|&&b| b != EMPTY).count() as u32 == s.valid);
        let free_ok = self.free.iter().all(|&f| {
            let s = &self.segments[f as usize];
            s.state == SegmentState::Free && s.valid == 0 && s.fill == 0
        });
        let total: u64 = self.segments.iter().map(|s| s.valid as u64).sum();
        slots_ok
            && free_ok
            && total == self.map.len() as u64
            && self.segments.iter().zip(&counts).all(|(s, &c)| s.valid == c)
    }
}
