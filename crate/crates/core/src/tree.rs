//! The tree of topics drawn from the nested CRP, holding the collapsed
//! sufficient statistics of every occupied node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    id: NodeId,
    level: usize,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    doc_count: u32,
    word_counts: Vec<u32>,
    total_count: u64,
}

impl Node {
    fn new(id: NodeId, level: usize, parent: Option<NodeId>, vocab_size: usize) -> Self {
        Self {
            id,
            level,
            parent,
            children: Vec::new(),
            doc_count: 0,
            word_counts: vec![0; vocab_size],
            total_count: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    /// Children in creation order (ascending id).
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    /// Documents whose path passes through this node.
    pub fn doc_count(&self) -> u32 {
        self.doc_count
    }

    pub fn word_counts(&self) -> &[u32] {
        &self.word_counts
    }

    #[inline]
    pub fn count(&self, term: u32) -> u32 {
        self.word_counts[term as usize]
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }
}

/// Node ids from the root downward.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path(Vec<NodeId>);

impl Path {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Self(nodes)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn leaf(&self) -> NodeId {
        *self.0.last().expect("paths contain the root")
    }

    #[inline]
    pub fn at(&self, level: usize) -> NodeId {
        self.0[level]
    }
}

/// A way to seat a document: follow an existing path to a leaf at the
/// requested depth, or leave the tree below `node` through a new table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathCandidate {
    Leaf(NodeId),
    Branch { node: NodeId, level: usize },
}

impl PathCandidate {
    pub fn node(&self) -> NodeId {
        match *self {
            PathCandidate::Leaf(n) | PathCandidate::Branch { node: n, .. } => n,
        }
    }

    /// Number of nodes that seating a document here creates.
    pub fn fresh_nodes(&self, depth: usize) -> usize {
        match *self {
            PathCandidate::Leaf(_) => 0,
            PathCandidate::Branch { level, .. } => depth - 1 - level,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<Option<Node>>,
    vocab_size: usize,
    live: usize,
}

/// Trees compare by their occupied nodes only; ids consumed by pruned nodes
/// are not part of the observable state.
impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size && self.iter().eq(other.iter())
    }
}

impl Tree {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            nodes: vec![Some(Node::new(NodeId(0), 0, None, vocab_size))],
            vocab_size,
            live: 1,
        }
    }

    /// Rebuilds a tree from document paths expressed as node ids. Word counts
    /// start at zero. `next_id` must exceed every id in `paths`.
    pub fn from_paths(vocab_size: usize, next_id: u32, paths: &[Path]) -> Result<Self> {
        let mut nodes: Vec<Option<Node>> = vec![None; next_id.max(1) as usize];
        nodes[0] = Some(Node::new(NodeId(0), 0, None, vocab_size));
        let mut live = 1;
        for path in paths {
            if path.nodes().first() != Some(&NodeId(0)) {
                return Err(Error::Checkpoint("paths must start at the root".into()));
            }
            for (level, pair) in path.nodes().windows(2).enumerate() {
                let (parent, child) = (pair[0], pair[1]);
                let slot = nodes
                    .get_mut(child.0 as usize)
                    .ok_or_else(|| Error::Checkpoint(format!("node id {child} exceeds the id counter")))?;
                match slot {
                    Some(n) => {
                        if n.parent != Some(parent) || n.level != level + 1 {
                            return Err(Error::Checkpoint(format!("node {child} has inconsistent ancestry")));
                        }
                    }
                    None => {
                        *slot = Some(Node::new(child, level + 1, Some(parent), vocab_size));
                        live += 1;
                        let p = nodes[parent.0 as usize].as_mut().expect("parent created first");
                        let pos = p.children.binary_search(&child).unwrap_or_else(|e| e);
                        p.children.insert(pos, child);
                    }
                }
            }
            for id in path.nodes() {
                nodes[id.0 as usize].as_mut().expect("created above").doc_count += 1;
            }
        }
        Ok(Self {
            nodes,
            vocab_size,
            live,
        })
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Id the next created node will receive.
    pub fn next_id(&self) -> u32 {
        self.nodes.len() as u32
    }

    /// Number of occupied nodes, root included.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live <= 1 && self.root_node().doc_count == 0
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn get(&self, id: NodeId) -> Result<&Node> {
        self.node(id).ok_or(Error::MissingNode(id.0))
    }

    #[inline]
    pub(crate) fn node_unchecked(&self, id: NodeId) -> &Node {
        self.nodes[id.0 as usize].as_ref().expect("live node")
    }

    fn get_mut(&mut self, id: NodeId) -> Result<&mut Node> {
        self.nodes
            .get_mut(id.0 as usize)
            .and_then(Option::as_mut)
            .ok_or(Error::MissingNode(id.0))
    }

    fn root_node(&self) -> &Node {
        self.node_unchecked(NodeId(0))
    }

    /// Occupied nodes in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter_map(Option::as_ref)
    }

    /// Customers of the restaurant at `id`: documents continuing to a child.
    pub fn customers(&self, id: NodeId) -> u32 {
        let node = self.node_unchecked(id);
        node.children.iter().map(|&c| self.node_unchecked(c).doc_count).sum()
    }

    fn create_child(&mut self, parent: NodeId) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        let level = self.node_unchecked(parent).level + 1;
        self.nodes.push(Some(Node::new(id, level, Some(parent), self.vocab_size)));
        self.nodes[parent.0 as usize].as_mut().expect("live").children.push(id);
        self.live += 1;
        id
    }

    /// Seats one document along `candidate`, materialising fresh nodes down
    /// to `depth` levels (root included).
    pub fn add_document(&mut self, candidate: PathCandidate, depth: usize) -> Result<Path> {
        let start = candidate.node();
        let start_level = self.get(start)?.level;
        match candidate {
            PathCandidate::Leaf(_) if start_level + 1 != depth => {
                return Err(Error::InvalidParameter(format!(
                    "leaf {start} sits at level {start_level}, not at depth {depth}"
                )))
            }
            PathCandidate::Branch { level, .. } if level != start_level || level + 1 >= depth => {
                return Err(Error::InvalidParameter(format!(
                    "branch at node {start} is not valid for depth {depth}"
                )))
            }
            _ => {}
        }
        let mut nodes = Vec::with_capacity(depth);
        let mut cur = Some(start);
        while let Some(id) = cur {
            nodes.push(id);
            cur = self.node_unchecked(id).parent;
        }
        nodes.reverse();
        let mut leaf = start;
        for _ in 0..candidate.fresh_nodes(depth) {
            leaf = self.create_child(leaf);
            nodes.push(leaf);
        }
        for &id in &nodes {
            self.nodes[id.0 as usize].as_mut().expect("live").doc_count += 1;
        }
        Ok(Path(nodes))
    }

    /// Grows a seated document's path with fresh nodes until it has `depth`
    /// levels.
    pub fn extend_path(&mut self, path: &mut Path, depth: usize) -> Result<()> {
        self.extend_path_via(path, &[], depth)
    }

    /// Grows a seated document's path down the existing chain `via`, each
    /// a child of the one before, then with fresh nodes to `depth` levels.
    pub fn extend_path_via(&mut self, path: &mut Path, via: &[NodeId], depth: usize) -> Result<()> {
        for &id in via {
            if self.get(id)?.parent != Some(path.leaf()) {
                return Err(Error::InvalidParameter(format!("node {id} is not a child of the path leaf")));
            }
            self.nodes[id.0 as usize].as_mut().expect("live").doc_count += 1;
            path.0.push(id);
        }
        let mut leaf = path.leaf();
        self.get(leaf)?;
        while path.depth() < depth {
            leaf = self.create_child(leaf);
            self.nodes[leaf.0 as usize].as_mut().expect("live").doc_count += 1;
            path.0.push(leaf);
        }
        Ok(())
    }

    /// Unseats a document from the levels of `path` at and below `from`,
    /// pruning nodes left without documents. The path is shortened to `from`
    /// levels. Word counts on the removed levels must already be zero.
    pub fn truncate_path(&mut self, path: &mut Path, from: usize) -> Result<()> {
        while path.depth() > from {
            let id = path.leaf();
            self.release(id)?;
            path.0.pop();
        }
        Ok(())
    }

    /// Unseats a document entirely. Its words must have been removed.
    pub fn remove_path(&mut self, path: &Path) -> Result<()> {
        for &id in path.nodes().iter().rev() {
            self.release(id)?;
        }
        Ok(())
    }

    fn release(&mut self, id: NodeId) -> Result<()> {
        let node = self.get_mut(id)?;
        if node.doc_count == 0 {
            return Err(Error::InvalidParameter(format!("node {id} has no documents to remove")));
        }
        node.doc_count -= 1;
        if node.doc_count == 0 && node.id != NodeId(0) {
            debug_assert!(node.children.is_empty() && node.total_count == 0, "pruning non-empty node {id}");
            let parent = node.parent.expect("non-root");
            self.nodes[id.0 as usize] = None;
            self.live -= 1;
            let p = self.nodes[parent.0 as usize].as_mut().expect("live");
            let pos = p.children.iter().position(|&c| c == id).expect("linked");
            p.children.remove(pos);
        }
        Ok(())
    }

    /// Removes a document: its words at `levels` and then its seat.
    pub fn remove_document(&mut self, path: &Path, words: &[u32], levels: &[usize]) -> Result<()> {
        for (&w, &l) in words.iter().zip(levels) {
            self.decrement_word(path.at(l), w)?;
        }
        self.remove_path(path)
    }

    #[inline]
    pub fn increment_word(&mut self, id: NodeId, term: u32) -> Result<()> {
        let node = self.get_mut(id)?;
        node.word_counts[term as usize] += 1;
        node.total_count += 1;
        Ok(())
    }

    #[inline]
    pub fn decrement_word(&mut self, id: NodeId, term: u32) -> Result<()> {
        let node = self.get_mut(id)?;
        let c = &mut node.word_counts[term as usize];
        if *c == 0 {
            return Err(Error::CountUnderflow { node: id.0, term });
        }
        *c -= 1;
        node.total_count -= 1;
        Ok(())
    }

    /// Nodes at levels below `depth`, parents before children, siblings in
    /// id order.
    pub fn preorder(&self, depth: usize) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.live);
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            let node = self.node_unchecked(id);
            if node.level >= depth {
                continue;
            }
            out.push(id);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Every way to seat a document at `depth` levels: each node at level
    /// `depth - 1` as a leaf, and each shallower node as a branch point.
    pub fn enumerate_path_candidates(&self, depth: usize) -> Vec<PathCandidate> {
        assert!(depth >= 1, "depth counts the root level");
        self.preorder(depth)
            .into_iter()
            .map(|id| {
                let level = self.node_unchecked(id).level;
                if level + 1 == depth {
                    PathCandidate::Leaf(id)
                } else {
                    PathCandidate::Branch { node: id, level }
                }
            })
            .collect()
    }

    /// Nested-CRP log prior of seating a new document along `candidate`.
    pub fn path_prior_log_prob(&self, candidate: PathCandidate, gamma: f64) -> Result<f64> {
        let node = self.get(candidate.node())?;
        if let PathCandidate::Branch { level, .. } = candidate {
            if level != node.level {
                return Err(Error::InvalidParameter(format!("stale candidate at node {}", node.id)));
            }
        }
        let mut acc = match candidate {
            PathCandidate::Leaf(_) => 0.0,
            PathCandidate::Branch { node, .. } => (gamma / (gamma + self.customers(node) as f64)).ln(),
        };
        let mut cur = node;
        while let Some(parent) = cur.parent {
            acc += (cur.doc_count as f64 / (gamma + self.customers(parent) as f64)).ln();
            cur = self.node_unchecked(parent);
        }
        Ok(acc)
    }

    /// Checks parent/child links, level numbering, count totals and that
    /// every non-root node is occupied.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = 0;
        for node in self.iter() {
            seen += 1;
            let sum: u64 = node.word_counts.iter().map(|&c| c as u64).sum();
            if sum != node.total_count {
                return Err(format!("node {}: total {} != sum {}", node.id, node.total_count, sum));
            }
            if node.id != NodeId(0) && node.doc_count == 0 {
                return Err(format!("node {} is empty but retained", node.id));
            }
            let child_docs: u32 = node
                .children
                .iter()
                .map(|c| self.node(*c).map_or(0, |n| n.doc_count))
                .sum();
            if child_docs > node.doc_count {
                return Err(format!("node {}: children hold more documents than the parent", node.id));
            }
            for c in &node.children {
                let child = self.node(*c).ok_or(format!("node {} lists missing child {c}", node.id))?;
                if child.parent != Some(node.id) || child.level != node.level + 1 {
                    return Err(format!("node {c} is not linked back to {}", node.id));
                }
            }
            if !node.children.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("node {}: children out of order", node.id));
            }
            match node.parent {
                None if node.id != NodeId(0) => return Err(format!("orphan node {}", node.id)),
                Some(p) => {
                    let parent = self.node(p).ok_or(format!("node {} has missing parent", node.id))?;
                    if !parent.children.contains(&node.id) {
                        return Err(format!("node {} missing from its parent's children", node.id));
                    }
                }
                None => {}
            }
        }
        if seen != self.live {
            return Err(format!("live count {} != {}", self.live, seen));
        }
        Ok(())
    }
}
