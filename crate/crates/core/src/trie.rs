//! Prefix automaton over encoded docids.
//!
//! Every docid is stored as its `[EOS]`-terminated token sequence, so the
//! terminal of a docid is always the (childless) node reached through an
//! `[EOS]` edge. Children are kept sorted by token id, which gives binary
//! search lookup and a canonical expansion order.
//!
//! # Snapshot format
//!
//! `write_snapshot` emits a little-endian binary image:
//!
//! ```text
//! magic    b"DTRI"
//! version  u32 (= 1)
//! n_docs   u32, then per doc: len u32 + UTF-8 bytes (insertion order)
//! n_nodes  u32, then nodes in preorder (children in token order):
//!          token_id u32 (u32::MAX for the root), child_count u32,
//!          terminal u8 (0/1), doc_index u32 if terminal
//! ```

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSeq, Vocabulary, EOS_ID};

pub type NodeId = u32;

pub const ROOT: NodeId = 0;

const MAGIC: &[u8; 4] = b"DTRI";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Node {
    children: Vec<(TokenId, NodeId)>,
    terminal: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocidTrie {
    nodes: Vec<Node>,
    doc_ids: Vec<String>,
}

impl DocidTrie {
    fn empty() -> Self {
        DocidTrie {
            nodes: vec![Node::default()],
            doc_ids: Vec::new(),
        }
    }

    fn insert(&mut self, doc_id: &str, seq: &[TokenId]) -> Result<()> {
        let mut node = ROOT;
        for &tok in seq {
            node = match self.child(node, tok) {
                Some(next) => next,
                None => {
                    let next = self.nodes.len() as NodeId;
                    self.nodes.push(Node::default());
                    let children = &mut self.nodes[node as usize].children;
                    let at = children.partition_point(|&(t, _)| t < tok);
                    children.insert(at, (tok, next));
                    next
                }
            };
        }
        let slot = &mut self.nodes[node as usize].terminal;
        if let Some(existing) = *slot {
            let first = &self.doc_ids[existing as usize];
            if first == doc_id {
                return Ok(());
            }
            return Err(Error::DocidCollision {
                first: first.clone(),
                second: doc_id.to_string(),
            });
        }
        *slot = Some(self.doc_ids.len() as u32);
        self.doc_ids.push(doc_id.to_string());
        Ok(())
    }

    /// Number of distinct docids stored.
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Docids in insertion order.
    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn children(&self, node: NodeId) -> &[(TokenId, NodeId)] {
        &self.nodes[node as usize].children
    }

    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        let children = self.children(node);
        children
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| children[i].1)
    }

    pub fn terminal(&self, node: NodeId) -> Option<&str> {
        self.nodes[node as usize]
            .terminal
            .map(|i| self.doc_ids[i as usize].as_str())
    }

    /// Node reached by following `prefix` from the root.
    pub fn walk(&self, prefix: &[TokenId]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(ROOT, |node, &tok| self.child(node, tok))
    }

    /// Tokens that extend `prefix` towards at least one stored docid, in
    /// ascending order. Empty when `prefix` is not a docid prefix.
    pub fn allowed_tokens(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        match self.walk(prefix) {
            Some(node) => self.children(node).iter().map(|&(t, _)| t).collect(),
            None => Vec::new(),
        }
    }

    /// Whether `seq` is a complete stored docid encoding.
    pub fn contains(&self, seq: &[TokenId]) -> bool {
        self.walk(seq).and_then(|n| self.terminal(n)).is_some()
    }

    /// Docid whose full encoding is `seq`.
    pub fn lookup(&self, seq: &[TokenId]) -> Option<&str> {
        self.walk(seq).and_then(|n| self.terminal(n))
    }

    pub fn contains_doc(&self, vocab: &Vocabulary, doc_id: &str) -> bool {
        self.lookup(&vocab.encode_docid(doc_id)) == Some(doc_id)
    }

    /// Every stored encoding, in depth-first token order.
    pub fn paths(&self) -> Vec<(TokenSeq, &str)> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(doc) = self.terminal(node) {
                out.push((TokenSeq(path.clone()), doc));
            }
            for &(tok, child) in self.children(node).iter().rev() {
                let mut p = path.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.doc_ids.len() as u32).to_le_bytes())?;
        for id in &self.doc_ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        w.write_all(&(self.nodes.len() as u32).to_le_bytes())?;
        let mut stack = vec![(u32::MAX, ROOT)];
        while let Some((tok, node)) = stack.pop() {
            let n = &self.nodes[node as usize];
            w.write_all(&tok.to_le_bytes())?;
            w.write_all(&(n.children.len() as u32).to_le_bytes())?;
            match n.terminal {
                Some(doc) => {
                    w.write_all(&[1])?;
                    w.write_all(&doc.to_le_bytes())?;
                }
                None => w.write_all(&[0])?,
            }
            stack.extend(n.children.iter().rev().copied());
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("trie snapshot: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        };
        if read_u32(&mut r)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let n_docs = read_u32(&mut r)? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|_| bad("truncated docid"))?;
            doc_ids.push(String::from_utf8(buf).map_err(|_| bad("docid is not UTF-8"))?);
        }
        let n_nodes = read_u32(&mut r)? as usize;
        let mut nodes: Vec<Node> = Vec::with_capacity(n_nodes);
        // (node id, children still expected)
        let mut open: Vec<(NodeId, u32)> = Vec::new();
        for i in 0..n_nodes {
            let tok = read_u32(&mut r)?;
            let child_count = read_u32(&mut r)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag).map_err(|_| bad("truncated"))?;
            let terminal = match flag[0] {
                0 => None,
                1 => {
                    let d = read_u32(&mut r)?;
                    if d as usize >= doc_ids.len() {
                        return Err(bad("doc index out of range"));
                    }
                    Some(d)
                }
                _ => return Err(bad("bad terminal flag")),
            };
            let id = i as NodeId;
            nodes.push(Node {
                children: Vec::with_capacity(child_count as usize),
                terminal,
            });
            if i == 0 {
                if tok != u32::MAX {
                    return Err(bad("root must carry the sentinel token"));
                }
            } else {
                let (parent, remaining) = open.last_mut().ok_or_else(|| bad("orphan node"))?;
                let parent = *parent;
                *remaining -= 1;
                if *remaining == 0 {
                    open.pop();
                }
                nodes[parent as usize].children.push((tok, id));
            }
            if child_count > 0 {
                open.push((id, child_count));
            }
        }
        if !open.is_empty() || nodes.is_empty() {
            return Err(bad("node list ends early"));
        }
        Ok(DocidTrie { nodes, doc_ids })
    }
}

/// Trie over the given docids. Repeated ids are stored once; distinct ids
/// with identical encodings are rejected.
pub fn build_trie<S: AsRef<str>>(vocab: &Vocabulary, doc_ids: &[S]) -> Result<DocidTrie> {
    if doc_ids.is_empty() {
        return Err(Error::Empty("docid list"));
    }
    let mut trie = DocidTrie::empty();
    for id in doc_ids {
        let id = id.as_ref();
        trie.insert(id, &vocab.encode_docid(id))?;
    }
    debug_assert!(trie
        .nodes
        .iter()
        .all(|n| n.terminal.is_none() || n.children.is_empty()));
    Ok(trie)
}

/// Per-query trie over the in-context candidate docids.
pub fn build_context_trie<S: AsRef<str>>(
    vocab: &Vocabulary,
    candidate_doc_ids: &[S],
) -> Result<DocidTrie> {
    build_trie(vocab, candidate_doc_ids)
}

/// Whether every terminal is an `[EOS]` child and childless.
pub fn terminals_are_eos_leaves(trie: &DocidTrie) -> bool {
    trie.nodes.iter().enumerate().all(|(i, n)| {
        let eos_children_ok = n.children.iter().all(|&(t, c)| {
            let child = &trie.nodes[c as usize];
            (t == EOS_ID) == child.terminal.is_some()
        });
        eos_children_ok && (n.terminal.is_none() || (n.children.is_empty() && i != 0))
    })
}
