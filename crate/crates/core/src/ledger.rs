//! Permissioned, hash-linked ledger of client updates and aggregates.
//!
//! # Canonical encoding
//!
//! All integers are little-endian; reals are IEEE-754 `f64` little-endian.
//!
//! ```text
//! header  = prev_hash[32] round:u64 block_number:u64 kind:u8 author:u32 timestamp:u64
//! body    = dim:u64 param:f64*dim
//!           hsic_tag:u8 [hsic:f64]
//!           scores_tag:u8 [count:u32 (node:u32 score:f64)*count]
//! content = SHA-256(header || body)
//! sig     = HMAC-SHA-256(node_secret, author:u32 || content)
//! hash    = SHA-256(content || sig)
//! ```
//!
//! `kind` is 0 for an update and 1 for an aggregate; tags are 0 (absent) or
//! 1 (present). A block's `prev_hash` is the `hash` of its predecessor, all
//! zero for the genesis block.
//!
//! The dump file written by [`Chain::write_to`] is
//! `"DFLCHAIN" version:u32 digest_len:u8 digest_name count:u64` followed by
//! `header sig body hash` for each block.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::HsicWindow;
use crate::ParamVector;

pub type Digest = [u8; 32];

pub const DIGEST_NAME: &str = "sha256";
pub const SIGNATURE_NAME: &str = "hmac-sha256";
const MAGIC: &[u8; 8] = b"DFLCHAIN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Author of the genesis block, held by the authentication server.
    pub const GENESIS: NodeId = NodeId(u32::MAX);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Update,
    Aggregate,
}

impl BlockKind {
    fn tag(self) -> u8 {
        match self {
            BlockKind::Update => 0,
            BlockKind::Aggregate => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(BlockKind::Update),
            1 => Ok(BlockKind::Aggregate),
            _ => Err(Error::Decode(format!("unknown block kind tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHeader {
    pub prev_hash: Digest,
    pub round: u64,
    pub block_number: u64,
    pub kind: BlockKind,
    pub author: NodeId,
    pub signature: Digest,
    /// Logical clock: the round counter, never wall time.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockBody {
    pub params: ParamVector,
    pub hsic_value: Option<f64>,
    pub scores: Option<Vec<(NodeId, f64)>>,
}

impl BlockBody {
    pub fn update(params: ParamVector) -> Self {
        Self {
            params,
            hsic_value: None,
            scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub body: BlockBody,
    hash: Digest,
}

impl Block {
    pub fn hash(&self) -> &Digest {
        &self.hash
    }
}

/// Per-node secrets handed out by the simulated authentication server.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    secrets: BTreeMap<NodeId, Digest>,
}

impl KeyRegistry {
    /// Issues deterministic secrets for `ids` plus the genesis authority.
    pub fn issue(seed: u64, ids: impl IntoIterator<Item = NodeId>) -> Self {
        let derive = |id: NodeId| -> Digest {
            let mut h = Sha256::new();
            h.update(b"node-secret");
            h.update(seed.to_le_bytes());
            h.update(id.0.to_le_bytes());
            h.finalize().into()
        };
        let mut secrets: BTreeMap<NodeId, Digest> =
            ids.into_iter().map(|id| (id, derive(id))).collect();
        secrets.insert(NodeId::GENESIS, derive(NodeId::GENESIS));
        Self { secrets }
    }

    pub fn is_member(&self, id: NodeId) -> bool {
        self.secrets.contains_key(&id)
    }

    /// Signs `content` as `author`. Fails for non-members.
    pub fn sign(&self, author: NodeId, content: &Digest) -> Result<Digest> {
        let key = self.secrets.get(&author).ok_or(Error::Auth {
            author: author.0,
            block_number: u64::MAX,
        })?;
        Ok(keyed_digest(key, author, content))
    }

    fn verify(&self, author: NodeId, content: &Digest, sig: &Digest) -> bool {
        match self.secrets.get(&author) {
            Some(key) => {
                let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(key)
                    .expect("hmac accepts any key length");
                mac.update(&author.0.to_le_bytes());
                mac.update(content);
                mac.verify_slice(sig).is_ok()
            }
            None => false,
        }
    }
}

fn keyed_digest(key: &Digest, author: NodeId, content: &Digest) -> Digest {
    let mut mac =
        <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(&author.0.to_le_bytes());
    mac.update(content);
    mac.finalize().into_bytes().into()
}

fn encode_header(h: &BlockHeader, out: &mut Vec<u8>) {
    out.extend_from_slice(&h.prev_hash);
    out.extend_from_slice(&h.round.to_le_bytes());
    out.extend_from_slice(&h.block_number.to_le_bytes());
    out.push(h.kind.tag());
    out.extend_from_slice(&h.author.0.to_le_bytes());
    out.extend_from_slice(&h.timestamp.to_le_bytes());
}

fn encode_body(b: &BlockBody, out: &mut Vec<u8>) {
    out.extend_from_slice(&(b.params.dim() as u64).to_le_bytes());
    for v in b.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match b.hsic_value {
        Some(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_le_bytes());
        }
        None => out.push(0),
    }
    match &b.scores {
        Some(scores) => {
            out.push(1);
            out.extend_from_slice(&(scores.len() as u32).to_le_bytes());
            for (id, s) in scores {
                out.extend_from_slice(&id.0.to_le_bytes());
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        None => out.push(0),
    }
}

/// Digest of the unsigned block content.
pub fn content_digest(header: &BlockHeader, body: &BlockBody) -> Digest {
    let mut buf = Vec::with_capacity(64 + 8 * body.params.dim());
    encode_header(header, &mut buf);
    encode_body(body, &mut buf);
    Sha256::digest(&buf).into()
}

fn block_hash(content: &Digest, signature: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(content);
    h.update(signature);
    h.finalize().into()
}

#[derive(Debug, Clone, Default)]
struct RoundSlots {
    updates: Vec<usize>,
    aggregate: Option<usize>,
}

/// Append-only block sequence with a round index.
#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    registry: KeyRegistry,
    rounds: BTreeMap<u64, RoundSlots>,
    /// Aggregate blocks that carry an HSIC value, in chain order.
    recorded_hsic: Vec<usize>,
    max_scores: usize,
}

impl Chain {
    /// An empty chain accepting blocks signed under `registry`. Aggregate
    /// blocks may carry at most `max_scores` score entries.
    pub fn new(registry: KeyRegistry, max_scores: usize) -> Self {
        Self {
            blocks: Vec::new(),
            registry,
            rounds: BTreeMap::new(),
            recorded_hsic: Vec::new(),
            max_scores,
        }
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Hash of the last block, or all zeros for an empty chain.
    pub fn tip_digest(&self) -> Digest {
        self.blocks.last().map(|b| b.hash).unwrap_or([0; 32])
    }

    pub fn dim(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.body.params.dim())
    }

    /// Builds the header `author` would submit for `body` at the current tip,
    /// signed with the author's issued secret.
    pub fn seal(
        &self,
        author: NodeId,
        round: u64,
        kind: BlockKind,
        body: &BlockBody,
    ) -> Result<BlockHeader> {
        let mut header = BlockHeader {
            prev_hash: self.tip_digest(),
            round,
            block_number: self.blocks.len() as u64,
            kind,
            author,
            signature: [0; 32],
            timestamp: round,
        };
        header.signature = self.registry.sign(author, &content_digest(&header, body))?;
        Ok(header)
    }

    /// Seals and appends in one step.
    pub fn push(&mut self, author: NodeId, round: u64, kind: BlockKind, body: BlockBody) -> Result<Digest> {
        let header = self.seal(author, round, kind, &body)?;
        self.append(header, body)
    }

    /// Verifies linkage, signature and body invariants, then appends.
    /// Returns the new tip hash.
    pub fn append(&mut self, header: BlockHeader, body: BlockBody) -> Result<Digest> {
        let number = self.blocks.len() as u64;
        if header.prev_hash != self.tip_digest() || header.block_number != number {
            return Err(Error::Linkage {
                block_number: header.block_number,
            });
        }
        self.check_body(&header, &body)?;
        let content = content_digest(&header, &body);
        if !self.registry.verify(header.author, &content, &header.signature) {
            return Err(Error::Auth {
                author: header.author.0,
                block_number: header.block_number,
            });
        }
        if header.kind == BlockKind::Aggregate
            && self
                .rounds
                .get(&header.round)
                .is_some_and(|s| s.aggregate.is_some())
        {
            return Err(Error::AggregateConflict {
                round: header.round,
            });
        }

        let hash = block_hash(&content, &header.signature);
        let idx = self.blocks.len();
        let slots = self.rounds.entry(header.round).or_default();
        match header.kind {
            BlockKind::Update => slots.updates.push(idx),
            BlockKind::Aggregate => {
                slots.aggregate = Some(idx);
                if body.hsic_value.is_some() {
                    self.recorded_hsic.push(idx);
                }
            }
        }
        self.blocks.push(Block { header, body, hash });
        Ok(hash)
    }

    fn check_body(&self, header: &BlockHeader, body: &BlockBody) -> Result<()> {
        let malformed = |m: String| Err(Error::MalformedBlock(m));
        if let Some(d) = self.dim() {
            if body.params.dim() != d {
                return malformed(format!("params have dimension {}, chain uses {d}", body.params.dim()));
            }
        }
        if body.params.dim() == 0 {
            return malformed("empty parameter vector".into());
        }
        if let Some(i) = body.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if header.kind == BlockKind::Update && (body.hsic_value.is_some() || body.scores.is_some()) {
            return malformed("update blocks carry neither HSIC nor scores".into());
        }
        if body.hsic_value.is_some_and(|v| !v.is_finite()) {
            return malformed("non-finite HSIC value".into());
        }
        if let Some(scores) = &body.scores {
            if scores.len() > self.max_scores {
                return malformed(format!(
                    "{} scores exceed the limit of {}",
                    scores.len(),
                    self.max_scores
                ));
            }
            if scores.iter().any(|(_, s)| !s.is_finite()) {
                return malformed("non-finite score".into());
            }
        }
        Ok(())
    }

    /// Recomputes every digest and signature from genesis.
    pub fn verify_integrity(&self) -> bool {
        let mut prev = [0u8; 32];
        let mut aggregate_rounds = std::collections::BTreeSet::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let h = &b.header;
            if h.prev_hash != prev || h.block_number != i as u64 {
                return false;
            }
            if self.check_body(h, &b.body).is_err() {
                return false;
            }
            if h.kind == BlockKind::Aggregate && !aggregate_rounds.insert(h.round) {
                return false;
            }
            let content = content_digest(h, &b.body);
            if !self.registry.verify(h.author, &content, &h.signature) {
                return false;
            }
            if block_hash(&content, &h.signature) != b.hash {
                return false;
            }
            prev = b.hash;
        }
        true
    }

    /// Client updates recorded for round `t`, in block order.
    pub fn updates_for_round(&self, t: u64) -> Vec<(NodeId, &ParamVector)> {
        self.rounds
            .get(&t)
            .map(|s| {
                s.updates
                    .iter()
                    .map(|&i| (self.blocks[i].header.author, &self.blocks[i].body.params))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// The update `node` recorded in round `t`, if any.
    pub fn update_of(&self, node: NodeId, t: u64) -> Option<&ParamVector> {
        let slots = self.rounds.get(&t)?;
        slots
            .updates
            .iter()
            .map(|&i| &self.blocks[i])
            .find(|b| b.header.author == node)
            .map(|b| &b.body.params)
    }

    /// Payload of the round-`t` aggregate block, if one was pushed.
    pub fn aggregate_for_round(&self, t: u64) -> Option<(&ParamVector, Option<f64>)> {
        let idx = self.rounds.get(&t)?.aggregate?;
        let b = &self.blocks[idx];
        Some((&b.body.params, b.body.hsic_value))
    }

    pub fn aggregate_block(&self, t: u64) -> Option<&Block> {
        let idx = self.rounds.get(&t)?.aggregate?;
        Some(&self.blocks[idx])
    }

    /// HSIC values of the latest `q` aggregate blocks that carry one, newest last.
    pub fn recent_hsic(&self, q: usize) -> HsicWindow {
        let q = q.max(1);
        let start = self.recorded_hsic.len().saturating_sub(q);
        HsicWindow::from_values(
            q,
            self.recorded_hsic[start..]
                .iter()
                .map(|&i| self.blocks[i].body.hsic_value.expect("indexed blocks carry HSIC")),
        )
    }

    /// HSIC values recorded for rounds `t−q ..= t−1`, oldest first. Unlike
    /// [`Chain::recent_hsic`] this ages: rounds that recorded nothing leave
    /// the window shorter.
    pub fn hsic_before_round(&self, t: u64, q: usize) -> HsicWindow {
        let q = q.max(1);
        let from = t.saturating_sub(q as u64);
        HsicWindow::from_values(
            q,
            self.rounds
                .range(from..t)
                .filter_map(|(_, slot)| slot.aggregate)
                .filter_map(|i| self.blocks[i].body.hsic_value),
        )
    }

    /// Writes the dump format described in the module docs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[DIGEST_NAME.len() as u8])?;
        w.write_all(DIGEST_NAME.as_bytes())?;
        w.write_all(&(self.blocks.len() as u64).to_le_bytes())?;
        let mut buf = Vec::new();
        for b in &self.blocks {
            buf.clear();
            encode_header(&b.header, &mut buf);
            buf.extend_from_slice(&b.header.signature);
            encode_body(&b.body, &mut buf);
            buf.extend_from_slice(&b.hash);
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dump, re-verifying every block against `registry`.
    pub fn read_from<R: Read>(mut r: R, registry: KeyRegistry, max_scores: usize) -> Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut cur = Cursor { data: &data, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Decode(format!("unsupported version {version}")));
        }
        let name_len = cur.u8()? as usize;
        if cur.take(name_len)? != DIGEST_NAME.as_bytes() {
            return Err(Error::Decode("unsupported digest".into()));
        }
        let count = cur.u64()?;
        let mut chain = Chain::new(registry, max_scores);
        for _ in 0..count {
            let prev_hash = cur.digest()?;
            let round = cur.u64()?;
            let block_number = cur.u64()?;
            let kind = BlockKind::from_tag(cur.u8()?)?;
            let author = NodeId(cur.u32()?);
            let timestamp = cur.u64()?;
            let signature = cur.digest()?;
            let dim = cur.u64()? as usize;
            if dim > cur.remaining() / 8 {
                return Err(Error::Decode("parameter length exceeds input".into()));
            }
            let mut params = Vec::with_capacity(dim);
            for _ in 0..dim {
                params.push(cur.f64()?);
            }
            let hsic_value = match cur.u8()? {
                0 => None,
                1 => Some(cur.f64()?),
                t => return Err(Error::Decode(format!("bad hsic tag {t}"))),
            };
            let scores = match cur.u8()? {
                0 => None,
                1 => {
                    let n = cur.u32()? as usize;
                    if n > cur.remaining() / 12 {
                        return Err(Error::Decode("score count exceeds input".into()));
                    }
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        v.push((NodeId(cur.u32()?), cur.f64()?));
                    }
                    Some(v)
                }
                t => return Err(Error::Decode(format!("bad scores tag {t}"))),
            };
            let stored_hash = cur.digest()?;
            let header = BlockHeader {
                prev_hash,
                round,
                block_number,
                kind,
                author,
                signature,
                timestamp,
            };
            let body = BlockBody {
                params: ParamVector::new(params)?,
                hsic_value,
                scores,
            };
            let hash = chain.append(header, body)?;
            if hash != stored_hash {
                return Err(Error::Decode(format!(
                    "stored hash mismatch at block {block_number}"
                )));
            }
        }
        if cur.remaining() != 0 {
            return Err(Error::Decode("trailing bytes after last block".into()));
        }
        Ok(chain)
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Decode("unexpected end of input".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn digest(&mut self) -> Result<Digest> {
        self.array()
    }
}

pub fn hex_digest(d: &Digest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}
