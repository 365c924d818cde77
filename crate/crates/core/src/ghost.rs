//! Block tree and the GHOST fork-choice rule.

use std::collections::{BTreeMap, HashMap};

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::dag::{DagError, ProtocolState, Seen};
use crate::ids::{BlockHash, UnitHash, ValidatorId, WeightMap};
use crate::unit::Block;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("parent {0:?} is not in the tree")]
    UnknownParent(BlockHash),
    #[error("block {block:?} has height {got}, expected {expected}")]
    BadHeight { block: BlockHash, got: u64, expected: u64 },
    #[error("block {0:?} has no parent")]
    SecondRoot(BlockHash),
}

/// Tree of blocks under a single root. The root is genesis, or the era
/// genesis after a rollover, so its height need not be zero.
#[derive(Clone, Debug)]
pub struct BlockTree {
    root: BlockHash,
    blocks: HashMap<BlockHash, Block>,
    children: HashMap<BlockHash, Vec<BlockHash>>,
}

impl BlockTree {
    pub fn new(root: Block) -> BlockTree {
        let h = root.hash();
        let mut blocks = HashMap::new();
        blocks.insert(h, root);
        BlockTree { root: h, blocks, children: HashMap::new() }
    }

    pub fn root(&self) -> BlockHash {
        self.root
    }

    pub fn root_block(&self) -> &Block {
        &self.blocks[&self.root]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, h: BlockHash) -> Option<&Block> {
        self.blocks.get(&h)
    }

    pub fn contains(&self, h: BlockHash) -> bool {
        self.blocks.contains_key(&h)
    }

    pub fn height(&self, h: BlockHash) -> Option<u64> {
        self.blocks.get(&h).map(Block::height)
    }

    /// `next(B)`, in insertion order.
    pub fn children(&self, h: BlockHash) -> &[BlockHash] {
        self.children.get(&h).map_or(&[], Vec::as_slice)
    }

    /// Checks that `block` could be inserted without inserting it.
    pub fn check(&self, block: &Block) -> Result<(), TreeError> {
        if block.hash() == self.root || self.blocks.contains_key(&block.hash()) {
            return Ok(());
        }
        let parent = block.parent().ok_or(TreeError::SecondRoot(block.hash()))?;
        let p = self.blocks.get(&parent).ok_or(TreeError::UnknownParent(parent))?;
        if block.height() != p.height() + 1 {
            return Err(TreeError::BadHeight { block: block.hash(), got: block.height(), expected: p.height() + 1 });
        }
        Ok(())
    }

    /// Returns `true` if the block was new.
    pub fn insert(&mut self, block: Block) -> Result<bool, TreeError> {
        self.check(&block)?;
        let h = block.hash();
        if self.blocks.contains_key(&h) {
            return Ok(false);
        }
        let parent = block.parent().expect("checked");
        self.children.entry(parent).or_default().push(h);
        self.blocks.insert(h, block);
        Ok(true)
    }

    /// Removes a leaf that was inserted speculatively. No-op on the root or
    /// on blocks with children.
    pub fn remove_leaf(&mut self, h: BlockHash) {
        if h == self.root || !self.children(h).is_empty() {
            return;
        }
        if let Some(b) = self.blocks.remove(&h) {
            if let Some(siblings) = b.parent().and_then(|p| self.children.get_mut(&p)) {
                siblings.retain(|c| *c != h);
            }
        }
    }

    /// Ancestor of `h` at `height`, or `None` if `h` is unknown or lower.
    pub fn ancestor_at(&self, mut h: BlockHash, height: u64) -> Option<BlockHash> {
        loop {
            let b = self.blocks.get(&h)?;
            if b.height() == height {
                return Some(h);
            }
            if b.height() < height {
                return None;
            }
            h = b.parent()?;
        }
    }

    /// `desc ≥ anc`: `anc` is `desc` or one of its ancestors.
    pub fn is_descendant(&self, desc: BlockHash, anc: BlockHash) -> bool {
        match self.height(anc) {
            Some(ha) => self.ancestor_at(desc, ha) == Some(anc),
            None => false,
        }
    }

    /// Neither block descends from the other.
    pub fn competing(&self, a: BlockHash, b: BlockHash) -> bool {
        !self.is_descendant(a, b) && !self.is_descendant(b, a)
    }

    /// Path from the root down to `h`, inclusive.
    pub fn path_from_root(&self, h: BlockHash) -> Vec<BlockHash> {
        let mut path = Vec::new();
        let mut cur = Some(h);
        while let Some(c) = cur {
            path.push(c);
            if c == self.root {
                break;
            }
            cur = self.blocks.get(&c).and_then(Block::parent);
        }
        path.reverse();
        path
    }
}

/// Validator opinions: the block each validator currently supports.
pub type OpinionMap = BTreeMap<ValidatorId, BlockHash>;

/// GHOST over the whole tree.
pub fn ghost(tree: &BlockTree, opinions: &OpinionMap, weights: &WeightMap) -> BlockHash {
    let weighted: Vec<(BlockHash, u64)> = opinions.iter().map(|(v, b)| (*b, weights.weight(*v))).collect();
    ghost_restricted(tree, |_| true, &weighted)
}

/// GHOST over the subtree of blocks accepted by `member`, which must be
/// closed under parents and contain the root. Each opinion is a
/// `(block, weight)` pair. Ties go to the smaller hash; the walk continues
/// into zero-weight subtrees until it reaches a leaf.
pub fn ghost_restricted(
    tree: &BlockTree,
    member: impl Fn(BlockHash) -> bool,
    opinions: &[(BlockHash, u64)],
) -> BlockHash {
    // Above the deepest common ancestor of the weighted opinions every
    // step of the descent is forced, so start there.
    let start = if opinions.iter().any(|(_, w)| *w > 0) {
        common_ancestor(tree, opinions.iter().filter(|(_, w)| *w > 0).map(|(b, _)| *b))
    } else {
        tree.root
    };
    let mut total: HashMap<BlockHash, u64> = HashMap::new();
    for &(b, w) in opinions {
        let mut cur = Some(b);
        while let Some(c) = cur {
            if c == start {
                break;
            }
            *total.entry(c).or_default() += w;
            cur = tree.get(c).and_then(Block::parent);
        }
    }
    let mut head = start;
    loop {
        let best = tree.children(head).iter().copied().filter(|c| member(*c)).max_by(|a, b| {
            let ta = total.get(a).copied().unwrap_or(0);
            let tb = total.get(b).copied().unwrap_or(0);
            ta.cmp(&tb).then(b.cmp(a))
        });
        match best {
            Some(c) => head = c,
            None => return head,
        }
    }
}

/// Deepest block that is an ancestor of (or equal to) every block in
/// `blocks`, which must be nonempty and in the tree.
fn common_ancestor(tree: &BlockTree, blocks: impl Iterator<Item = BlockHash>) -> BlockHash {
    let mut cur: Vec<BlockHash> = blocks.collect();
    cur.sort_unstable();
    cur.dedup();
    let height = |b: BlockHash| tree.height(b).expect("opinion block is in the tree");
    let low = cur.iter().map(|b| height(*b)).min().expect("nonempty");
    for b in &mut cur {
        *b = tree.ancestor_at(*b, low).expect("ancestor exists");
    }
    loop {
        cur.sort_unstable();
        cur.dedup();
        if cur.len() == 1 {
            return cur[0];
        }
        for b in &mut cur {
            *b = tree.get(*b).and_then(Block::parent).expect("distinct blocks meet below the root");
        }
    }
}

impl ProtocolState {
    /// GHOST over the blocks carried inside `below` (plus `extra`), with the
    /// opinions given by `panorama`.
    pub(crate) fn ghost_for(&self, below: &FixedBitSet, panorama: &[Seen], extra: Option<BlockHash>) -> BlockHash {
        let opinions: Vec<(BlockHash, u64)> = panorama
            .iter()
            .enumerate()
            .filter_map(|(v, s)| match s {
                Seen::Correct(j) => Some((self.entries[*j].vote, self.weights.weight(ValidatorId::from(v)))),
                _ => None,
            })
            .collect();
        let root = self.tree.root();
        let member = |b: BlockHash| {
            b == root
                || Some(b) == extra
                || self.carriers.get(&b).is_some_and(|cs| cs.iter().any(|c| below.contains(*c)))
        };
        ghost_restricted(&self.tree, member, &opinions)
    }

    /// `vote(u)`, memoized at insertion.
    pub fn vote(&self, u: UnitHash) -> Result<BlockHash, DagError> {
        let i = self.idx(u).ok_or(DagError::UnknownUnit(u))?;
        Ok(self.vote_at(i))
    }

    /// `opinion_u(V)`: the vote of `L_V(u)`, or the root when absent.
    pub fn opinion_of(&self, u: UnitHash, v: ValidatorId) -> Result<BlockHash, DagError> {
        Ok(match self.latest_message(u, v)? {
            Some(l) => self.vote(l)?,
            None => self.genesis(),
        })
    }

    /// Parent for a new block carried by a unit citing `citations`:
    /// GHOST over the blocks the unit will see, excluding its own.
    pub fn choose_proposal_parent(&self, citations: &[usize]) -> BlockHash {
        let cand = self.candidate(citations);
        self.ghost_for(&cand.below, &cand.panorama, None)
    }

    /// Recomputes `vote(u)` from the stored downset without using `u`'s
    /// memo entry.
    pub fn recompute_vote(&self, i: usize) -> BlockHash {
        let extra = self.unit_at(i).block().map(Block::hash);
        self.ghost_for(self.below(i), self.panorama(i), extra)
    }
}
