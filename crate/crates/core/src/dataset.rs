//! Kernel-side dataset collection: quantize raw subsystem signals into Q16.16
//! features, keep them in a bounded ring, and publish DATASET_BATCH payloads.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fxp::Fx32;

pub const DEFAULT_RING_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(&'static str),
    #[error("malformed dataset request")]
    ProtocolViolation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub id: u16,
    pub name: String,
    /// Raw integers are quantized as `raw / scale_den`.
    pub scale_den: i64,
    pub clip_min: Fx32,
    pub clip_max: Fx32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub schema_id: u16,
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(schema_id: u16, features: Vec<FeatureSpec>) -> Result<Self, DatasetError> {
        for (i, f) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.id == f.id) {
                return Err(DatasetError::Schema("duplicate feature id"));
            }
            if f.clip_min >= f.clip_max {
                return Err(DatasetError::Schema("clip_min must be below clip_max"));
            }
            if f.scale_den == 0 {
                return Err(DatasetError::Schema("zero scale denominator"));
            }
        }
        Ok(FeatureSchema { schema_id, features })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub timestamp: u64,
    pub features: Vec<Fx32>,
    pub outcome: Fx32,
}

impl DatasetRecord {
    pub fn encoded_len(&self) -> usize {
        8 + 2 + 4 * self.features.len() + 4
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&(self.features.len() as u16).to_le_bytes());
        for f in &self.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&self.outcome.to_le_bytes());
    }
}

/// Bounded FIFO of records. Overflow drops the oldest record.
#[derive(Debug, Clone)]
pub struct SampleRing {
    capacity: usize,
    records: VecDeque<DatasetRecord>,
    dropped: u64,
    collected: u64,
    published: u64,
}

impl Default for SampleRing {
    fn default() -> Self {
        SampleRing::new(DEFAULT_RING_CAPACITY)
    }
}

impl SampleRing {
    pub fn new(capacity: usize) -> Self {
        SampleRing {
            capacity: capacity.max(1),
            records: VecDeque::new(),
            dropped: 0,
            collected: 0,
            published: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn collected(&self) -> u64 {
        self.collected
    }

    pub fn published(&self) -> u64 {
        self.published
    }

    fn append(&mut self, rec: DatasetRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
            self.dropped += 1;
        }
        self.records.push_back(rec);
        self.collected += 1;
    }

    /// Quantize `raw_features[i] / scale_den[i]`, clip, and append.
    pub fn collect(
        &mut self,
        schema: &FeatureSchema,
        timestamp: u64,
        raw_features: &[i64],
        outcome: Fx32,
    ) -> Result<DatasetRecord, DatasetError> {
        if raw_features.len() != schema.len() {
            return Err(DatasetError::Schema("feature arity mismatch"));
        }
        let features = raw_features
            .iter()
            .zip(schema.features())
            .map(|(&raw, spec)| {
                Fx32::from_ratio(raw, spec.scale_den)
                    .unwrap_or(Fx32::ZERO)
                    .clamp_to(spec.clip_min, spec.clip_max)
            })
            .collect();
        let rec = DatasetRecord { timestamp, features, outcome };
        self.append(rec.clone());
        Ok(rec)
    }

    /// Append already-quantized features (clipping still applies).
    pub fn collect_fixed(
        &mut self,
        schema: &FeatureSchema,
        timestamp: u64,
        features: &[Fx32],
        outcome: Fx32,
    ) -> Result<DatasetRecord, DatasetError> {
        if features.len() != schema.len() {
            return Err(DatasetError::Schema("feature arity mismatch"));
        }
        let features = features
            .iter()
            .zip(schema.features())
            .map(|(&v, spec)| v.clamp_to(spec.clip_min, spec.clip_max))
            .collect();
        let rec = DatasetRecord { timestamp, features, outcome };
        self.append(rec.clone());
        Ok(rec)
    }

    /// Drain up to `max_records` oldest records into a DATASET_BATCH payload.
    pub fn publish_batch(&mut self, schema_id: u16, max_records: u32) -> Vec<u8> {
        let n = self.records.len().min(max_records as usize);
        let mut out = Vec::with_capacity(6);
        out.extend_from_slice(&schema_id.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for rec in self.records.drain(..n) {
            rec.encode_into(&mut out);
        }
        self.published += n as u64;
        out
    }

    /// Serve a DATASET_REQUEST payload (`max_records`, 4 bytes LE).
    pub fn handle_dataset_request(
        &mut self,
        schema_id: u16,
        request: &[u8],
    ) -> Result<Vec<u8>, DatasetError> {
        let max: [u8; 4] = request.try_into().map_err(|_| DatasetError::ProtocolViolation)?;
        Ok(self.publish_batch(schema_id, u32::from_le_bytes(max)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter()
    }
}

/// Parsed DATASET_BATCH payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBatch {
    pub schema_id: u16,
    pub records: Vec<DatasetRecord>,
}

impl DatasetBatch {
    pub fn decode(b: &[u8]) -> Result<DatasetBatch, DatasetError> {
        let mut cur = crate::wire::Reader::new(b);
        let bad = |_| DatasetError::ProtocolViolation;
        let schema_id = cur.u16().map_err(bad)?;
        let count = cur.u32().map_err(bad)?;
        let mut records = Vec::new();
        for _ in 0..count {
            let timestamp = cur.u64().map_err(bad)?;
            let nf = cur.u16().map_err(bad)?;
            let features = (0..nf).map(|_| cur.fx().map_err(bad)).collect::<Result<Vec<_>, _>>()?;
            let outcome = cur.fx().map_err(bad)?;
            records.push(DatasetRecord { timestamp, features, outcome });
        }
        if !cur.is_empty() {
            return Err(DatasetError::ProtocolViolation);
        }
        Ok(DatasetBatch { schema_id, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn schema(n: usize) -> FeatureSchema {
        let features = (0..n)
            .map(|i| FeatureSpec {
                id: i as u16,
                name: "f".to_string(),
                scale_den: 100,
                clip_min: Fx32::ZERO,
                clip_max: Fx32::ONE,
            })
            .collect();
        FeatureSchema::new(7, features).unwrap()
    }

    #[test]
    fn quantizes_and_clips() {
        let s = schema(2);
        let mut ring = SampleRing::new(8);
        let r = ring.collect(&s, 1, &[50, 250], Fx32::ONE).unwrap();
        assert_eq!(r.features[0].raw(), 32768);
        assert_eq!(r.features[1], Fx32::ONE);
        assert_eq!(ring.collect(&s, 2, &[1], Fx32::ONE), Err(DatasetError::Schema("feature arity mismatch")));
    }

    #[test]
    fn schema_validation() {
        let bad = FeatureSpec {
            id: 0,
            name: "x".to_string(),
            scale_den: 1,
            clip_min: Fx32::ONE,
            clip_max: Fx32::ZERO,
        };
        assert!(FeatureSchema::new(1, vec![bad]).is_err());
        let mut s = schema(2).features().to_vec();
        s[1].id = 0;
        assert!(FeatureSchema::new(1, s).is_err());
    }

    #[test]
    fn publish_drains_fifo() {
        let s = schema(1);
        let mut ring = SampleRing::new(8);
        for t in 0..3 {
            ring.collect(&s, t, &[t as i64], Fx32::ZERO).unwrap();
        }
        let b = DatasetBatch::decode(&ring.publish_batch(7, 2)).unwrap();
        assert_eq!(b.records.iter().map(|r| r.timestamp).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(ring.len(), 1);
        let b = DatasetBatch::decode(&ring.publish_batch(7, 10)).unwrap();
        assert_eq!(b.records.len(), 1);
        assert!(ring.is_empty());
        let empty = ring.publish_batch(7, 10);
        assert_eq!(empty, [7, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn batch_length_matches_field_widths() {
        let s = schema(4);
        let mut ring = SampleRing::new(8);
        ring.collect(&s, 1, &[1, 2, 3, 4], Fx32::ONE).unwrap();
        // schema_id + count + (timestamp + nfeat + 4 features + outcome)
        let expect = 2 + 4 + (8 + 2 + 4 * 4 + 4);
        assert_eq!(expect, 36);
        assert_eq!(ring.publish_batch(7, 10).len(), expect);
    }

    #[test]
    fn dataset_requests() {
        let s = schema(1);
        let mut ring = SampleRing::new(8);
        for t in 0..5 {
            ring.collect(&s, t, &[0], Fx32::ZERO).unwrap();
        }
        let b = ring.handle_dataset_request(7, &0u32.to_le_bytes()).unwrap();
        assert_eq!(DatasetBatch::decode(&b).unwrap().records.len(), 0);
        let b = ring.handle_dataset_request(7, &100u32.to_le_bytes()).unwrap();
        assert_eq!(DatasetBatch::decode(&b).unwrap().records.len(), 5);
        assert_eq!(ring.handle_dataset_request(7, &[1, 2, 3]), Err(DatasetError::ProtocolViolation));
    }

    #[test]
    fn overflow_drops_oldest() {
        let s = schema(1);
        let mut ring = SampleRing::new(2);
        for t in 0..5 {
            ring.collect(&s, t, &[0], Fx32::ZERO).unwrap();
        }
        assert_eq!(ring.dropped(), 3);
        assert_eq!(ring.iter().map(|r| r.timestamp).collect::<Vec<_>>(), [3, 4]);
    }

    #[derive(Debug, Clone)]
    enum Step {
        Collect(i64),
        Publish(u32),
    }

    proptest! {
        #[test]
        fn conservation_order_and_bounds(
            cap in 1usize..16,
            steps in proptest::collection::vec(
                prop_oneof![(-500i64..500).prop_map(Step::Collect), (0u32..6).prop_map(Step::Publish)],
                0..200,
            ),
        ) {
            let s = schema(1);
            let mut ring = SampleRing::new(cap);
            let mut next_ts = 0u64;
            let mut seen = Vec::new();
            for step in steps {
                match step {
                    Step::Collect(v) => { ring.collect(&s, next_ts, &[v], Fx32::ZERO).unwrap(); next_ts += 1; }
                    Step::Publish(m) => {
                        let b = DatasetBatch::decode(&ring.publish_batch(7, m)).unwrap();
                        for r in b.records {
                            prop_assert!(r.features[0] >= Fx32::ZERO && r.features[0] <= Fx32::ONE);
                            seen.push(r.timestamp);
                        }
                    }
                }
                prop_assert_eq!(ring.published() + ring.len() as u64 + ring.dropped(), ring.collected());
                prop_assert!(ring.len() <= cap);
            }
            prop_assert!(seen.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
