use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Blocks of the latent field, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Alpha,
    Beta,
    Gamma,
    W,
    V,
    M,
    EtaL,
    EtaS,
}

impl BlockKind {
    pub const ORDER: [BlockKind; 8] = [
        BlockKind::Alpha,
        BlockKind::Beta,
        BlockKind::Gamma,
        BlockKind::W,
        BlockKind::V,
        BlockKind::M,
        BlockKind::EtaL,
        BlockKind::EtaS,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BlockKind::Alpha => "alpha",
            BlockKind::Beta => "beta",
            BlockKind::Gamma => "gamma",
            BlockKind::W => "w",
            BlockKind::V => "v",
            BlockKind::M => "m",
            BlockKind::EtaL => "eta_l",
            BlockKind::EtaS => "eta_s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

/// Contiguous, non-overlapping blocks covering the latent field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    blocks: Vec<Block>,
    dim: usize,
}

impl LatentLayout {
    /// Lengths in [`BlockKind::ORDER`].
    pub fn new(lengths: [usize; 8]) -> Self {
        let mut offset = 0;
        let blocks = BlockKind::ORDER
            .iter()
            .zip(lengths)
            .map(|(&kind, len)| {
                let b = Block { kind, offset, len };
                offset += len;
                b
            })
            .collect();
        Self { blocks, dim: offset }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, kind: BlockKind) -> Block {
        self.blocks[BlockKind::ORDER.iter().position(|&k| k == kind).unwrap()]
    }

    pub fn range(&self, kind: BlockKind) -> Range<usize> {
        let b = self.block(kind);
        b.offset..b.offset + b.len
    }

    pub fn index(&self, kind: BlockKind, i: usize) -> usize {
        let b = self.block(kind);
        assert!(i < b.len, "index {i} out of range for block {:?}", kind);
        b.offset + i
    }

    /// Start of the predictor blocks, which are stored last and contiguously.
    pub fn eta_offset(&self) -> usize {
        self.block(BlockKind::EtaL).offset
    }

    pub fn n_eta(&self) -> usize {
        self.block(BlockKind::EtaL).len + self.block(BlockKind::EtaS).len
    }

    pub fn block_of(&self, index: usize) -> Option<(BlockKind, usize)> {
        self.blocks
            .iter()
            .find(|b| index >= b.offset && index < b.offset + b.len)
            .map(|b| (b.kind, index - b.offset))
    }
}

/// Values of the latent field laid out by a [`LatentLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector<'a> {
    pub layout: &'a LatentLayout,
    pub values: &'a [f64],
}

impl<'a> LatentVector<'a> {
    pub fn new(layout: &'a LatentLayout, values: &'a [f64]) -> Self {
        assert_eq!(layout.dim(), values.len());
        Self { layout, values }
    }

    pub fn block(&self, kind: BlockKind) -> &'a [f64] {
        &self.values[self.layout.range(kind)]
    }
}
