use super::{GcError, VolumeState};

/// SplitMix64: `state += 0x9E3779B97F4A7C15`, then the standard mix.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish draw in `0..n` by multiply-high.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// A ratio `num / den` kept as integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const fn new(num: u32, den: u32) -> Self {
        Ratio { num, den }
    }

    /// Strictly between 0 and 1.
    pub fn is_proper(&self) -> bool {
        self.den > 0 && self.num > 0 && self.num < self.den
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub hot_fraction: Ratio,
    pub hot_write_share: Ratio,
    pub total_logical_blocks: u32,
    pub seed: u64,
    pub steps: u64,
}

impl WorkloadSpec {
    pub fn new(total_logical_blocks: u32, seed: u64, steps: u64) -> Self {
        WorkloadSpec {
            hot_fraction: Ratio::new(1, 10),
            hot_write_share: Ratio::new(9, 10),
            total_logical_blocks,
            seed,
            steps,
        }
    }

    pub fn validate(&self) -> Result<(), GcError> {
        if !self.hot_fraction.is_proper() || !self.hot_write_share.is_proper() {
            return Err(GcError::Config("hot fraction and share must lie in (0, 1)"));
        }
        if self.total_logical_blocks < 2 {
            return Err(GcError::Config("need at least 2 logical blocks"));
        }
        Ok(())
    }

    /// Blocks `0..hot_blocks()` form the hot set.
    pub fn hot_blocks(&self) -> u32 {
        let h =
            self.total_logical_blocks as u64 * self.hot_fraction.num as u64 / self.hot_fraction.den as u64;
        (h as u32).clamp(1, self.total_logical_blocks - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteEvent {
    pub tick: u64,
    pub block: u32,
    pub hot: bool,
    /// Segment that held the overwritten copy.
    pub invalidated: u32,
}

/// Seeded hot/cold write generator.
#[derive(Debug, Clone)]
pub struct Workload {
    spec: WorkloadSpec,
    rng: SplitMix64,
    hot_blocks: u32,
}

impl Workload {
    pub fn new(spec: WorkloadSpec) -> Result<Self, GcError> {
        spec.validate()?;
        let hot_blocks = spec.hot_blocks();
        Ok(Workload { rng: SplitMix64::new(spec.seed), spec, hot_blocks })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn next_block(&mut self) -> (u32, bool) {
        let share = self.spec.hot_write_share;
        let hot = self.rng.below(share.den as u64) < share.num as u64;
        let block = if hot {
            self.rng.below(self.hot_blocks as u64) as u32
        } else {
            let cold = self.spec.total_logical_blocks - self.hot_blocks;
            self.hot_blocks + self.rng.below(cold as u64) as u32
        };
        (block, hot)
    }

    /// One user write. Fails with `VolumeFull` without consuming randomness
    /// when there is nowhere to append.
    pub fn step(&mut self, volume: &mut VolumeState) -> Result<WriteEvent, GcError> {
        if volume.append_room() == 0 {
            return Err(GcError::VolumeFull);
        }
        let (block, hot) = self.next_block();
        let invalidated = volume.write(block)?;
        Ok(WriteEvent { tick: volume.tick(), block, hot, invalidated })
    }
}
