use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{PageId, SnapshotId};
use crate::version::VersionGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportNode {
    pub id: SnapshotId,
    pub parent: Option<SnapshotId>,
    pub seq: u32,
    pub label: Option<String>,
    pub page_id: Option<PageId>,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphCounts {
    pub nodes: usize,
    pub edges: usize,
    pub active_path: usize,
    pub discarded: usize,
    pub abandoned_branches: usize,
}

/// The JSON shape of an exported version graph. `active_path` excludes the
/// root; `edges` counts parent links and always equals `nodes - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub root: SnapshotId,
    pub head: SnapshotId,
    pub nodes: Vec<ExportNode>,
    pub active_path: Vec<SnapshotId>,
    pub abandoned_branches: Vec<crate::version::AbandonedBranch>,
    pub counts: GraphCounts,
}

pub fn graph_export(graph: &VersionGraph) -> GraphExport {
    let active: BTreeSet<&SnapshotId> = graph.active_path.iter().chain([&graph.root]).collect();
    GraphExport {
        root: graph.root.clone(),
        head: graph.head.clone(),
        nodes: graph
            .nodes
            .iter()
            .map(|n| ExportNode {
                id: n.id.clone(),
                parent: n.parent.clone(),
                seq: n.seq,
                label: n.label.clone(),
                page_id: n.page_id.clone(),
                active: active.contains(&n.id),
            })
            .collect(),
        active_path: graph.active_path.clone(),
        abandoned_branches: graph.abandoned_branches.clone(),
        counts: GraphCounts {
            nodes: graph.nodes.len(),
            edges: graph.edge_count(),
            active_path: graph.active_path.len(),
            discarded: graph.discarded_count(),
            abandoned_branches: graph.abandoned_branches.len(),
        },
    }
}

pub fn graph_json(graph: &VersionGraph) -> String {
    serde_json::to_string_pretty(&graph_export(graph)).expect("graph serializes")
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz text. Active nodes are bold, the head is double-bordered and
/// each abandoned branch is its own dashed `cluster_branch_<n>`.
pub fn graph_dot(graph: &VersionGraph) -> String {
    let active: BTreeSet<&SnapshotId> = graph.active_path.iter().chain([&graph.root]).collect();
    let in_branch: BTreeSet<&SnapshotId> = graph.abandoned_branches.iter().flat_map(|b| &b.nodes).collect();
    let mut out = String::from("digraph versions {\n  rankdir=LR;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for n in &graph.nodes {
        if in_branch.contains(&n.id) {
            continue;
        }
        let label = n.label.clone().unwrap_or_else(|| n.seq.to_string());
        let mut attrs = vec![format!("label={}", quote(&label))];
        if active.contains(&n.id) {
            attrs.push("style=bold".into());
        }
        if n.id == graph.head {
            attrs.push("peripheries=2".into());
        }
        let _ = writeln!(out, "  {} [{}];", quote(n.id.as_str()), attrs.join(", "));
    }
    for (i, b) in graph.abandoned_branches.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_branch_{} {{", i + 1);
        let _ = writeln!(out, "    label={};\n    style=dashed;\n    color=gray;", quote(&format!("abandoned {}", i + 1)));
        for id in &b.nodes {
            let n = graph.node(id).expect("branch nodes are graph nodes");
            let label = n.label.clone().unwrap_or_else(|| n.seq.to_string());
            let _ = writeln!(out, "    {} [label={}, color=gray];", quote(id.as_str()), quote(&label));
        }
        out.push_str("  }\n");
    }
    for n in &graph.nodes {
        if let Some(p) = &n.parent {
            let style = if in_branch.contains(&n.id) { " [style=dashed]" } else { "" };
            let _ = writeln!(out, "  {} -> {}{style};", quote(p.as_str()), quote(n.id.as_str()));
        }
    }
    out.push_str("}\n");
    out
}
