//! Taxonomy trees over categorical quasi-identifier domains.
//!
//! A [`TaxonomyTree`] is a rooted tree whose leaves are raw domain values and
//! whose internal nodes are progressively coarser generalizations. Distortion
//! between two nodes is measured on their ancestor chains, either against the
//! whole tree or against a [`Subtree`] covering a group's observed values.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node inside one [`TaxonomyTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Serialized node: a name and the name of its parent (`None` for the root).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TaxonomyTree {
    name: String,
    names: Vec<String>,
    parent: Vec<Option<NodeId>>,
    depth: Vec<u32>,
    children: Vec<Vec<NodeId>>,
    index: HashMap<String, NodeId>,
    root: NodeId,
}

impl PartialEq for TaxonomyTree {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.names == other.names && self.parent == other.parent
    }
}

impl TaxonomyTree {
    /// Builds a tree from `(name, parent)` pairs. Node ids follow input order.
    pub fn from_nodes(name: impl Into<String>, nodes: &[NodeSpec]) -> Result<Self> {
        let name = name.into();
        let bad = |reason: String| Error::Schema(format!("taxonomy `{name}`: {reason}"));

        let mut index = HashMap::with_capacity(nodes.len());
        let mut names = Vec::with_capacity(nodes.len());
        for (i, spec) in nodes.iter().enumerate() {
            if spec.name.is_empty() {
                return Err(bad("empty node name".into()));
            }
            if index.insert(spec.name.clone(), NodeId(i as u32)).is_some() {
                return Err(bad(format!("duplicate node name `{}`", spec.name)));
            }
            names.push(spec.name.clone());
        }
        if names.is_empty() {
            return Err(bad("no nodes".into()));
        }

        let mut parent = Vec::with_capacity(nodes.len());
        let mut roots = Vec::new();
        for (i, spec) in nodes.iter().enumerate() {
            match &spec.parent {
                None => {
                    roots.push(NodeId(i as u32));
                    parent.push(None);
                }
                Some(p) => {
                    let pid = *index
                        .get(p)
                        .ok_or_else(|| bad(format!("node `{}` has unknown parent `{p}`", spec.name)))?;
                    parent.push(Some(pid));
                }
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(bad("no root node".into())),
            many => {
                let list: Vec<_> = many.iter().map(|r| names[r.index()].as_str()).collect();
                return Err(bad(format!("multiple roots: {}", list.join(", "))));
            }
        };

        let mut children = vec![Vec::new(); names.len()];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.index()].push(NodeId(i as u32));
            }
        }

        // Breadth-first from the root; anything unreached sits on a cycle.
        let mut depth = vec![u32::MAX; names.len()];
        depth[root.index()] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            for &c in &children[n.index()] {
                depth[c.index()] = depth[n.index()] + 1;
                queue.push_back(c);
            }
        }
        if let Some(i) = depth.iter().position(|&d| d == u32::MAX) {
            return Err(bad(format!("cycle through node `{}`", names[i])));
        }

        Ok(Self {
            name,
            names,
            parent,
            depth,
            children,
            index,
            root,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownNode {
            tree: self.name.clone(),
            node: name.to_owned(),
        })
    }

    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.names[id.index()]
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id.index()]
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.depth[id.index()]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.index()]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.children[id.index()].is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.names.len() as u32).map(NodeId)
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.is_leaf(n))
    }

    /// Node list in id order, suitable for serialization.
    pub fn to_specs(&self) -> Vec<NodeSpec> {
        self.nodes()
            .map(|n| NodeSpec {
                name: self.node_name(n).to_owned(),
                parent: self.parent(n).map(|p| self.node_name(p).to_owned()),
            })
            .collect()
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.index() < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode {
                tree: self.name.clone(),
                node: format!("#{}", id.0),
            })
        }
    }

    /// True when `anc` lies on the path from `node` to the root (inclusive).
    pub fn covers(&self, anc: NodeId, node: NodeId) -> bool {
        let target = self.depth(anc);
        let mut cur = node;
        while self.depth(cur) > target {
            cur = self.parent(cur).expect("non-root has a parent");
        }
        cur == anc
    }

    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let (mut a, mut b) = (a, b);
        while self.depth(a) > self.depth(b) {
            a = self.parent(a).expect("non-root has a parent");
        }
        while self.depth(b) > self.depth(a) {
            b = self.parent(b).expect("non-root has a parent");
        }
        while a != b {
            a = self.parent(a).expect("non-root has a parent");
            b = self.parent(b).expect("non-root has a parent");
        }
        a
    }

    /// Distortion of `u` against `v` over ancestor chains ending at a node of
    /// depth `root_depth`, which must be a common ancestor of both.
    #[inline]
    pub(crate) fn distortion_below(&self, u: NodeId, v: NodeId, root_depth: u32) -> f64 {
        if u == v {
            return 0.0;
        }
        let l = self.lca(u, v);
        let phi_u = (self.depth(u) - root_depth + 1) as f64;
        let phi_v = (self.depth(v) - root_depth + 1) as f64;
        let inter = (self.depth(l) - root_depth + 1) as f64;
        let union = phi_u + phi_v - inter;
        (union - inter) / union
    }

    /// Whole-tree distortion between two nodes; see [`categorical_distortion`].
    #[inline]
    pub fn distortion(&self, u: NodeId, v: NodeId) -> f64 {
        self.distortion_below(u, v, 0)
    }
}

/// A region of a tree against which ancestor chains are measured.
pub trait Scope {
    fn tree(&self) -> &TaxonomyTree;
    fn scope_root(&self) -> NodeId;
    fn contains(&self, node: NodeId) -> bool;
}

impl Scope for TaxonomyTree {
    fn tree(&self) -> &TaxonomyTree {
        self
    }

    fn scope_root(&self) -> NodeId {
        self.root
    }

    fn contains(&self, node: NodeId) -> bool {
        node.index() < self.len()
    }
}

/// The minimal subtree covering a set of values: the union of the paths from
/// each value up to their lowest common ancestor.
#[derive(Clone, Debug)]
pub struct Subtree<'a> {
    tree: &'a TaxonomyTree,
    root: NodeId,
    nodes: BTreeSet<NodeId>,
}

impl<'a> Subtree<'a> {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn names(&self) -> BTreeSet<&'a str> {
        self.nodes.iter().map(|&n| self.tree.node_name(n)).collect()
    }
}

impl Scope for Subtree<'_> {
    fn tree(&self) -> &TaxonomyTree {
        self.tree
    }

    fn scope_root(&self) -> NodeId {
        self.root
    }

    fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }
}

fn require_in<S: Scope + ?Sized>(scope: &S, v: NodeId) -> Result<()> {
    scope.tree().check(v)?;
    if scope.contains(v) {
        Ok(())
    } else {
        Err(Error::UnknownNode {
            tree: scope.tree().name().to_owned(),
            node: scope.tree().node_name(v).to_owned(),
        })
    }
}

/// Strict ancestors of `v`, nearest first, stopping at the scope's root.
pub fn ancestors<S: Scope + ?Sized>(v: NodeId, scope: &S) -> Result<Vec<NodeId>> {
    require_in(scope, v)?;
    let tree = scope.tree();
    let stop = scope.scope_root();
    let mut out = Vec::new();
    let mut cur = v;
    while cur != stop {
        match tree.parent(cur) {
            Some(p) => {
                out.push(p);
                cur = p;
            }
            None => break,
        }
    }
    Ok(out)
}

pub fn generalize_lca<I>(values: I, tree: &TaxonomyTree) -> Result<NodeId>
where
    I: IntoIterator<Item = NodeId>,
{
    let mut it = values.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Argument("cannot generalize an empty value set".into()))?;
    tree.check(first)?;
    it.try_fold(first, |acc, v| {
        tree.check(v)?;
        Ok(tree.lca(acc, v))
    })
}

pub fn minimal_cover_subtree<'a, I>(values: I, tree: &'a TaxonomyTree) -> Result<Subtree<'a>>
where
    I: IntoIterator<Item = NodeId>,
{
    let values: Vec<NodeId> = values.into_iter().collect();
    let root = generalize_lca(values.iter().copied(), tree)?;
    let mut nodes = BTreeSet::new();
    for v in values {
        let mut cur = v;
        loop {
            if !nodes.insert(cur) || cur == root {
                break;
            }
            cur = tree.parent(cur).expect("root is an ancestor of every value");
        }
    }
    nodes.insert(root);
    Ok(Subtree { tree, root, nodes })
}

/// `(|φ(u) ∪ φ(v)| − |φ(u) ∩ φ(v)|) / |φ(u) ∪ φ(v)|` where `φ(x)` is `x`
/// together with its ancestors inside `scope`.
pub fn categorical_distortion<S: Scope + ?Sized>(u: NodeId, v: NodeId, scope: &S) -> Result<f64> {
    require_in(scope, u)?;
    require_in(scope, v)?;
    let tree = scope.tree();
    Ok(tree.distortion_below(u, v, tree.depth(scope.scope_root())))
}
