//! Index file layout (little-endian): `"ANNX"`, u32 version, u32 dim,
//! u8 metric tag, u64 count, u32 num_trees, u32 leaf_capacity, u64 seed,
//! `count` u64 ids, `count × dim` f32 values, then each tree in preorder.
//! A node is a tag byte: `0` leaf (u32 length, u32 slots) or `1` split
//! (`dim` f32 normal, f32 offset, left subtree, right subtree).

use std::io::Cursor;
use std::path::Path;

use super::{AnnError, AnnIndex, IndexParams, Metric, Node, RpTree};
use crate::format::{write_atomic, PersistError, Reader, Writer};

pub const INDEX_MAGIC: [u8; 4] = *b"ANNX";
pub const INDEX_VERSION: u32 = 1;

const LEAF: u8 = 0;
const SPLIT: u8 = 1;
const MAX_DEPTH: usize = 512;

impl AnnIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Vec::with_capacity(self.data.len() * 4 + self.ids.len() * 8 + 64));
        let mut write = || -> std::io::Result<()> {
            w.header(INDEX_MAGIC, INDEX_VERSION)?;
            w.u32(self.dim as u32)?;
            w.u8(self.metric.tag())?;
            w.u64(self.ids.len() as u64)?;
            w.u32(self.params.num_trees as u32)?;
            w.u32(self.params.leaf_capacity as u32)?;
            w.u64(self.params.seed)?;
            for &id in &self.ids {
                w.u64(id)?;
            }
            w.f32s(&self.data)?;
            for tree in &self.trees {
                for node in &tree.nodes {
                    match node {
                        Node::Leaf(items) => {
                            w.u8(LEAF)?;
                            w.u32(items.len() as u32)?;
                            for &s in items {
                                w.u32(s)?;
                            }
                        }
                        Node::Split { normal, offset, .. } => {
                            w.u8(SPLIT)?;
                            w.f32s(normal)?;
                            w.f32(*offset)?;
                        }
                    }
                }
            }
            Ok(())
        };
        write().expect("writing to memory cannot fail");
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PersistError> {
        let mut r = Reader::new(Cursor::new(bytes));
        r.header(INDEX_MAGIC, INDEX_VERSION)?;
        let dim = r.u32()? as usize;
        let tag = r.u8()?;
        let metric = Metric::from_tag(tag).ok_or_else(|| PersistError::Malformed(format!("unknown metric tag {tag}")))?;
        let count = r.u64()? as usize;
        let num_trees = r.u32()? as usize;
        let leaf_capacity = r.u32()? as usize;
        let seed = r.u64()?;
        // every id and value needs bytes in the file
        if count.saturating_mul(8 + 4 * dim) > bytes.len() {
            return Err(PersistError::Truncated);
        }
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(r.u64()?);
        }
        let data = r.f32s(count * dim)?;
        let mut trees = Vec::with_capacity(num_trees.min(1 << 12));
        for _ in 0..num_trees {
            let mut nodes = Vec::new();
            read_node(&mut r, dim, count, &mut nodes, 0)?;
            trees.push(RpTree { nodes });
        }
        r.finish()?;
        Ok(AnnIndex {
            dim,
            metric,
            ids,
            data,
            trees,
            params: IndexParams {
                num_trees,
                leaf_capacity,
                seed,
            },
        })
    }
}

fn read_node(r: &mut Reader<Cursor<&[u8]>>, dim: usize, count: usize, nodes: &mut Vec<Node>, depth: usize) -> Result<usize, PersistError> {
    if depth > MAX_DEPTH {
        return Err(PersistError::Malformed("tree too deep".into()));
    }
    let me = nodes.len();
    match r.u8()? {
        LEAF => {
            let n = r.u32()? as usize;
            if n > count {
                return Err(PersistError::Malformed(format!("leaf of {n} items in an index of {count}")));
            }
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                let s = r.u32()?;
                if s as usize >= count {
                    return Err(PersistError::Malformed(format!("item slot {s} out of range")));
                }
                items.push(s);
            }
            nodes.push(Node::Leaf(items));
        }
        SPLIT => {
            let normal = r.f32s(dim)?;
            let offset = r.f32()?;
            nodes.push(Node::Split {
                normal,
                offset,
                left: 0,
                right: 0,
            });
            let left = read_node(r, dim, count, nodes, depth + 1)?;
            let right = read_node(r, dim, count, nodes, depth + 1)?;
            if let Node::Split { left: l, right: rr, .. } = &mut nodes[me] {
                *l = left;
                *rr = right;
            }
        }
        t => return Err(PersistError::Malformed(format!("unknown node tag {t}"))),
    }
    Ok(me)
}

pub fn save_index(index: &AnnIndex, path: impl AsRef<Path>) -> Result<(), AnnError> {
    write_atomic(path.as_ref(), &index.to_bytes()).map_err(PersistError::from)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<AnnIndex, AnnError> {
    let bytes = std::fs::read(path.as_ref()).map_err(PersistError::from)?;
    Ok(AnnIndex::from_bytes(&bytes)?)
}
