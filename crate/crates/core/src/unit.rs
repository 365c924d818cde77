//! Blocks and units, with their canonical byte encodings.
//!
//! Canonical unit encoding (all integers little-endian, fixed width):
//! `sender:u32 seq:u64 round_id:u64 timestamp:u64 kind:u8
//!  n_citations:u32 citation:u64... has_block:u8 [block_hash:u64] era:u64`
//! with citations sorted ascending. The unit hash is the first eight bytes
//! of SHA-256 over this encoding.

use std::fmt;

use crate::ids::{digest64, BlockHash, Tick, UnitHash, ValidatorId};

/// A block. Genesis has no parent; every other block names its parent by hash.
#[derive(Clone, PartialEq, Eq)]
pub struct Block {
    hash: BlockHash,
    parent: Option<BlockHash>,
    height: u64,
    payload: Vec<u8>,
    creator: ValidatorId,
    slot: Tick,
}

impl Block {
    pub fn genesis(payload: &[u8]) -> Block {
        Block::with_parent_hash(None, 0, payload.to_vec(), ValidatorId(0), 0)
    }

    pub fn new(parent: &Block, payload: Vec<u8>, creator: ValidatorId, slot: Tick) -> Block {
        Block::with_parent_hash(Some(parent.hash), parent.height + 1, payload, creator, slot)
    }

    /// Builds a block from raw fields. Heights are not checked against the
    /// parent here; the block tree does that on insertion.
    pub fn with_parent_hash(
        parent: Option<BlockHash>,
        height: u64,
        payload: Vec<u8>,
        creator: ValidatorId,
        slot: Tick,
    ) -> Block {
        let mut buf = Vec::with_capacity(40 + payload.len());
        match parent {
            Some(p) => {
                buf.push(1);
                buf.extend_from_slice(&p.0.to_le_bytes());
            }
            None => buf.push(0),
        }
        buf.extend_from_slice(&height.to_le_bytes());
        buf.extend_from_slice(&creator.0.to_le_bytes());
        buf.extend_from_slice(&slot.to_le_bytes());
        buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        buf.extend_from_slice(&payload);
        Block { hash: BlockHash(digest64(&buf)), parent, height, payload, creator, slot }
    }

    pub fn hash(&self) -> BlockHash {
        self.hash
    }
    pub fn parent(&self) -> Option<BlockHash> {
        self.parent
    }
    pub fn height(&self) -> u64 {
        self.height
    }
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
    pub fn creator(&self) -> ValidatorId {
        self.creator
    }
    pub fn slot(&self) -> Tick {
        self.slot
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block({:?} h={} parent={:?})", self.hash, self.height, self.parent)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Proposal,
    Confirmation,
    Witness,
}

impl UnitKind {
    fn code(self) -> u8 {
        match self {
            UnitKind::Proposal => 0,
            UnitKind::Confirmation => 1,
            UnitKind::Witness => 2,
        }
    }

    fn from_code(c: u8) -> Option<UnitKind> {
        match c {
            0 => Some(UnitKind::Proposal),
            1 => Some(UnitKind::Confirmation),
            2 => Some(UnitKind::Witness),
            _ => None,
        }
    }
}

/// A DAG message. The hash is computed once at construction.
#[derive(Clone, PartialEq, Eq)]
pub struct Unit {
    hash: UnitHash,
    sender: ValidatorId,
    seq: u64,
    round_id: Tick,
    timestamp: Tick,
    kind: UnitKind,
    citations: Vec<UnitHash>,
    block: Option<Block>,
    era: u64,
}

/// Everything needed to build a [`Unit`].
#[derive(Clone, Debug)]
pub struct UnitFields {
    pub sender: ValidatorId,
    pub seq: u64,
    pub round_id: Tick,
    pub timestamp: Tick,
    pub kind: UnitKind,
    pub citations: Vec<UnitHash>,
    pub block: Option<Block>,
    pub era: u64,
}

impl Unit {
    pub fn new(fields: UnitFields) -> Unit {
        let mut citations = fields.citations;
        citations.sort_unstable();
        citations.dedup();
        let mut unit = Unit {
            hash: UnitHash(0),
            sender: fields.sender,
            seq: fields.seq,
            round_id: fields.round_id,
            timestamp: fields.timestamp,
            kind: fields.kind,
            citations,
            block: fields.block,
            era: fields.era,
        };
        unit.hash = UnitHash(digest64(&unit.canonical_bytes()));
        unit
    }

    pub fn hash(&self) -> UnitHash {
        self.hash
    }
    pub fn sender(&self) -> ValidatorId {
        self.sender
    }
    pub fn seq(&self) -> u64 {
        self.seq
    }
    pub fn round_id(&self) -> Tick {
        self.round_id
    }
    pub fn timestamp(&self) -> Tick {
        self.timestamp
    }
    pub fn kind(&self) -> UnitKind {
        self.kind
    }
    /// Sorted, deduplicated.
    pub fn citations(&self) -> &[UnitHash] {
        &self.citations
    }
    pub fn block(&self) -> Option<&Block> {
        self.block.as_ref()
    }
    pub fn era(&self) -> u64 {
        self.era
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + 8 * self.citations.len());
        buf.extend_from_slice(&self.sender.0.to_le_bytes());
        buf.extend_from_slice(&self.seq.to_le_bytes());
        buf.extend_from_slice(&self.round_id.to_le_bytes());
        buf.extend_from_slice(&self.timestamp.to_le_bytes());
        buf.push(self.kind.code());
        buf.extend_from_slice(&(self.citations.len() as u32).to_le_bytes());
        for c in &self.citations {
            buf.extend_from_slice(&c.0.to_le_bytes());
        }
        match &self.block {
            Some(b) => {
                buf.push(1);
                buf.extend_from_slice(&b.hash.0.to_le_bytes());
            }
            None => buf.push(0),
        }
        buf.extend_from_slice(&self.era.to_le_bytes());
        buf
    }

    /// Canonical encoding followed by the full block body (if any), so the
    /// unit can be reconstructed from a trace file.
    pub fn wire_bytes(&self) -> Vec<u8> {
        let mut buf = self.canonical_bytes();
        if let Some(b) = &self.block {
            buf.extend_from_slice(&b.parent.map_or(0, |p| p.0).to_le_bytes());
            buf.extend_from_slice(&b.height.to_le_bytes());
            buf.extend_from_slice(&b.creator.0.to_le_bytes());
            buf.extend_from_slice(&b.slot.to_le_bytes());
            buf.extend_from_slice(&(b.payload.len() as u32).to_le_bytes());
            buf.extend_from_slice(&b.payload);
        }
        buf
    }

    /// Inverse of [`Unit::wire_bytes`]. Returns `None` on truncated input or
    /// if the embedded block hash does not match the block body.
    pub fn from_wire(bytes: &[u8]) -> Option<Unit> {
        let mut r = Reader { bytes, pos: 0 };
        let sender = ValidatorId(r.u32()?);
        let seq = r.u64()?;
        let round_id = r.u64()?;
        let timestamp = r.u64()?;
        let kind = UnitKind::from_code(r.u8()?)?;
        let count = r.u32()? as usize;
        let mut citations = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            citations.push(UnitHash(r.u64()?));
        }
        let has_block = r.u8()?;
        let block_hash = if has_block == 1 { Some(BlockHash(r.u64()?)) } else { None };
        let era = r.u64()?;
        let block = match block_hash {
            Some(expected) => {
                let parent = BlockHash(r.u64()?);
                let height = r.u64()?;
                let creator = ValidatorId(r.u32()?);
                let slot = r.u64()?;
                let len = r.u32()? as usize;
                let payload = r.take(len)?.to_vec();
                let parent = if height == 0 { None } else { Some(parent) };
                let b = Block::with_parent_hash(parent, height, payload, creator, slot);
                if b.hash != expected {
                    return None;
                }
                Some(b)
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return None;
        }
        Some(Unit::new(UnitFields { sender, seq, round_id, timestamp, kind, citations, block, era }))
    }
}

impl fmt::Debug for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Unit({:?} by {} seq={} t={} {:?} cites={:?}{})",
            self.hash,
            self.sender,
            self.seq,
            self.timestamp,
            self.kind,
            self.citations,
            match &self.block {
                Some(b) => format!(" block={:?}", b.hash),
                None => String::new(),
            }
        )
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(cites: Vec<u64>, with_block: bool) -> Unit {
        let g = Block::genesis(b"g");
        Unit::new(UnitFields {
            sender: ValidatorId(3),
            seq: 7,
            round_id: 30,
            timestamp: 31,
            kind: if with_block { UnitKind::Proposal } else { UnitKind::Witness },
            citations: cites.into_iter().map(UnitHash).collect(),
            block: with_block.then(|| Block::new(&g, b"tx".to_vec(), ValidatorId(3), 30)),
            era: 0,
        })
    }

    #[test]
    fn citation_order_does_not_change_hash() {
        assert_eq!(sample(vec![5, 1, 9], false).hash(), sample(vec![9, 5, 1], false).hash());
    }

    #[test]
    fn canonical_layout_starts_with_sender_and_seq() {
        let u = sample(vec![2, 1], false);
        let b = u.canonical_bytes();
        assert_eq!(&b[0..4], &3u32.to_le_bytes());
        assert_eq!(&b[4..12], &7u64.to_le_bytes());
        assert_eq!(b[28], 2); // kind byte after round_id and timestamp
        assert_eq!(&b[29..33], &2u32.to_le_bytes());
        assert_eq!(&b[33..41], &1u64.to_le_bytes());
    }

    #[test]
    fn tampered_block_body_is_rejected() {
        let u = sample(vec![], true);
        let mut w = u.wire_bytes();
        let last = w.len() - 1;
        w[last] ^= 1;
        assert!(Unit::from_wire(&w).is_none());
    }

    proptest! {
        #[test]
        fn wire_round_trip(cites in proptest::collection::vec(any::<u64>(), 0..6), with_block: bool) {
            let u = sample(cites, with_block);
            let back = Unit::from_wire(&u.wire_bytes()).unwrap();
            prop_assert_eq!(back.hash(), u.hash());
            prop_assert_eq!(back, u);
        }
    }
}
