use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::{PageId, RequestId, SnapshotId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: SnapshotId,
    pub parent: Option<SnapshotId>,
    /// Creation order; the root has 0.
    pub seq: u32,
    pub label: Option<String>,
    pub page_id: Option<PageId>,
    pub prompt_record_id: Option<RequestId>,
    /// `None` for graphs rebuilt from prompt logs, which have no trees.
    pub tree_digest: Option<Digest>,
}

/// A chain of snapshots that is not on the root-to-head path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbandonedBranch {
    /// The node the chain grew from.
    pub fork_point: SnapshotId,
    pub nodes: Vec<SnapshotId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionGraph {
    /// Every node, in creation order.
    pub nodes: Vec<GraphNode>,
    pub root: SnapshotId,
    pub head: SnapshotId,
    /// Nodes from the first commit after the root up to and including head.
    pub active_path: Vec<SnapshotId>,
    pub abandoned_branches: Vec<AbandonedBranch>,
}

impl VersionGraph {
    /// Builds the graph from nodes in any order.
    ///
    /// Off-path nodes are split into chains in creation order: a node
    /// continues its parent's chain when the parent is itself off-path and
    /// this is the parent's first child; otherwise it opens a new chain.
    pub fn build(mut nodes: Vec<GraphNode>, head: &SnapshotId) -> Result<Self> {
        nodes.sort_by_key(|n| n.seq);
        let index: HashMap<&SnapshotId, usize> = nodes.iter().enumerate().map(|(i, n)| (&n.id, i)).collect();
        if index.len() != nodes.len() {
            return Err(Error::config("duplicate snapshot id in graph"));
        }
        let roots: Vec<&GraphNode> = nodes.iter().filter(|n| n.parent.is_none()).collect();
        let [root] = roots.as_slice() else {
            return Err(Error::config(format!("graph has {} roots, expected 1", roots.len())));
        };
        let root = root.id.clone();
        for n in &nodes {
            if let Some(parent) = &n.parent {
                let &pi = index
                    .get(parent)
                    .ok_or_else(|| Error::config(format!("snapshot {} has unknown parent {parent}", n.id)))?;
                if nodes[pi].seq >= n.seq {
                    return Err(Error::config(format!("snapshot {} is older than its child", parent)));
                }
            }
        }
        let &head_idx = index
            .get(head)
            .ok_or_else(|| Error::not_found(format!("head snapshot {head}")))?;

        let mut path = Vec::new();
        let mut cursor = Some(head_idx);
        while let Some(i) = cursor {
            path.push(nodes[i].id.clone());
            cursor = nodes[i].parent.as_ref().map(|p| index[p]);
        }
        path.reverse();
        let on_path: BTreeSet<SnapshotId> = path.iter().cloned().collect();
        let active_path = path.into_iter().skip(1).collect();

        let mut first_child: BTreeMap<&SnapshotId, &SnapshotId> = BTreeMap::new();
        for n in &nodes {
            if let Some(parent) = &n.parent {
                first_child.entry(parent).or_insert(&n.id);
            }
        }
        let mut branches: Vec<AbandonedBranch> = Vec::new();
        let mut chain_of: HashMap<SnapshotId, usize> = HashMap::new();
        for n in nodes.iter().filter(|n| !on_path.contains(&n.id)) {
            let parent = n.parent.as_ref().expect("root is on every path");
            let extends = !on_path.contains(parent) && first_child.get(parent) == Some(&&n.id);
            let chain = match (extends, chain_of.get(parent)) {
                (true, Some(&c)) if branches[c].nodes.last() == Some(parent) => c,
                _ => {
                    branches.push(AbandonedBranch {
                        fork_point: parent.clone(),
                        nodes: Vec::new(),
                    });
                    branches.len() - 1
                }
            };
            branches[chain].nodes.push(n.id.clone());
            chain_of.insert(n.id.clone(), chain);
        }

        Ok(VersionGraph {
            nodes,
            root,
            head: head.clone(),
            active_path,
            abandoned_branches: branches,
        })
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.parent.is_some()).count()
    }

    /// Commits (all nodes but the root) that are not on the active path.
    pub fn discarded_count(&self) -> usize {
        self.nodes.len() - 1 - self.active_path.len()
    }

    pub fn node(&self, id: &SnapshotId) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u32, parent: Option<u32>) -> GraphNode {
        GraphNode {
            id: SnapshotId(format!("n{id}")),
            parent: parent.map(|p| SnapshotId(format!("n{p}"))),
            seq: id,
            label: None,
            page_id: None,
            prompt_record_id: None,
            tree_digest: None,
        }
    }

    fn ids(v: &[SnapshotId]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }

    #[test]
    fn linear_history_has_no_branches() {
        let g = VersionGraph::build(vec![node(0, None), node(1, Some(0)), node(2, Some(1))], &SnapshotId::from("n2")).unwrap();
        assert!(g.abandoned_branches.is_empty());
        assert_eq!(ids(&g.active_path), ["n1", "n2"]);
        assert_eq!(g.edge_count(), g.nodes.len() - 1);
    }

    #[test]
    fn chains_split_at_forks() {
        // 0 ─ 1 ─ 2 ─ 3     head = 3
        //      └ 4 ─ 5
        //           └ 6
        let nodes = vec![
            node(0, None),
            node(1, Some(0)),
            node(2, Some(1)),
            node(4, Some(1)),
            node(5, Some(4)),
            node(6, Some(4)),
            node(3, Some(2)),
        ];
        let mut nodes = nodes;
        nodes[6].seq = 7;
        let g = VersionGraph::build(nodes, &SnapshotId::from("n3")).unwrap();
        let b: Vec<(&str, Vec<&str>)> = g
            .abandoned_branches
            .iter()
            .map(|b| (b.fork_point.as_str(), ids(&b.nodes)))
            .collect();
        assert_eq!(b, [("n1", vec!["n4", "n5"]), ("n4", vec!["n6"])]);
        assert_eq!(g.discarded_count(), 3);
    }

    #[test]
    fn rejects_malformed_graphs() {
        assert!(VersionGraph::build(vec![node(0, None), node(1, None)], &SnapshotId::from("n1")).is_err());
        assert!(VersionGraph::build(vec![node(0, None), node(1, Some(9))], &SnapshotId::from("n1")).is_err());
        assert!(VersionGraph::build(vec![node(0, None)], &SnapshotId::from("n7")).is_err());
    }
}
