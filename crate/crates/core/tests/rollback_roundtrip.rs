//! Random commit/rollback/checkout histories: every restored workspace must
//! equal the target snapshot byte for byte, in memory and on disk.

use std::collections::HashMap;

use proptest::prelude::*;

use nocode_core::clock::{LogicalClock, SequentialIds};
use nocode_core::digest::Digest;
use nocode_core::model::{FileEntry, Project, SnapshotId, Workspace};
use nocode_core::path::RelPath;
use nocode_core::ignore::IgnoreRules;
use nocode_core::projector::fs::{materialize, scan_dir};
use nocode_core::store::{insert_project, Store};
use nocode_core::version::{self, CommitMeta, ObjectStore};
use nocode_core::ErrorKind;

const PATHS: [&str; 6] = [
    "client/src/App.vue",
    "client/src/views/TasksView.vue",
    "client/index.html",
    "server/src/index.ts",
    "server/src/routes/tasks.ts",
    "README.md",
];

#[derive(Debug, Clone)]
enum Op {
    /// (path index, Some(bytes) to write or None to delete)
    Commit(Vec<(usize, Option<Vec<u8>>)>),
    Rollback(u32),
    /// Index into the list of snapshots created so far, modulo its length.
    Checkout(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => proptest::collection::vec(
            (0..PATHS.len(), proptest::option::weighted(0.85, proptest::collection::vec(any::<u8>(), 0..64))),
            1..4
        )
        .prop_map(Op::Commit),
        2 => (1u32..4).prop_map(Op::Rollback),
        1 => any::<usize>().prop_map(Op::Checkout),
    ]
}

fn check_restored(ws: &Workspace, expected: &Workspace, tree: &Digest, dir: &std::path::Path) {
    assert_eq!(ws.tree_digest(), *tree);
    assert_eq!(ws, expected);
    for e in expected.entries() {
        assert_eq!(ws.get(&e.path).unwrap().content, e.content);
    }
    let on_disk = materialize(dir, ws, &IgnoreRules::none()).unwrap();
    assert_eq!(on_disk, *tree);
    assert_eq!(&scan_dir(dir, &IgnoreRules::none()).unwrap(), expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn restored_trees_match_snapshots_exactly(ops in proptest::collection::vec(op(), 1..24)) {
        let tmp = tempfile::tempdir().unwrap();
        let objects = ObjectStore::open(tmp.path().join("objects")).unwrap();
        let disk = tmp.path().join("ws");
        let store = Store::open_in_memory().unwrap();
        let (ids, clock) = (SequentialIds::default(), LogicalClock::default());
        let mut project = Project::new("Roundtrip", "", "static-test", &ids, &clock).unwrap();
        store.write(|c| insert_project(c, &project)).unwrap();

        let scaffold = Workspace::from_entries([FileEntry::new(RelPath::parse("client/index.html").unwrap(), "<h1>hi</h1>")]);
        let root = store.write(|c| version::commit_root(c, &objects, &mut project, &scaffold, &clock)).unwrap();

        let mut expected: HashMap<SnapshotId, Workspace> = HashMap::from([(root.id.clone(), scaffold.clone())]);
        let mut parents: HashMap<SnapshotId, Option<SnapshotId>> = HashMap::from([(root.id.clone(), None)]);
        let mut order = vec![root.id.clone()];
        let mut head = root.id.clone();
        let mut rollbacks = 0;

        for op in ops {
            match op {
                Op::Commit(changes) => {
                    let mut ws = expected[&head].clone();
                    for (i, content) in changes {
                        let path = RelPath::parse(PATHS[i]).unwrap();
                        match content {
                            Some(bytes) => { ws.insert(FileEntry::new(path, bytes)); }
                            None => { ws.remove(&path); }
                        }
                    }
                    let result = store.write(|c| version::commit_snapshot(c, &objects, &mut project, &ws, CommitMeta::default(), &clock));
                    if ws.tree_digest() == expected[&head].tree_digest() {
                        prop_assert_eq!(result.unwrap_err().kind(), ErrorKind::NoChange);
                        continue;
                    }
                    let snap = result.unwrap();
                    prop_assert_eq!(snap.parent.as_ref(), Some(&head));
                    expected.insert(snap.id.clone(), ws);
                    parents.insert(snap.id.clone(), Some(head.clone()));
                    order.push(snap.id.clone());
                    head = snap.id;
                }
                Op::Rollback(steps) => {
                    let mut target = Some(head.clone());
                    for _ in 0..steps {
                        target = target.and_then(|t| parents[&t].clone());
                    }
                    let result = store.write(|c| version::rollback(c, &objects, &mut project, steps, &clock));
                    match target {
                        Some(t) if t != head => {
                            let (snap, ws) = result.unwrap();
                            prop_assert_eq!(&snap.id, &t);
                            check_restored(&ws, &expected[&t], &snap.tree_digest, &disk);
                            head = t;
                            rollbacks += 1;
                        }
                        _ => {
                            let kind = result.unwrap_err().kind();
                            prop_assert!(kind == ErrorKind::AtRoot || kind == ErrorKind::Validation);
                        }
                    }
                }
                Op::Checkout(i) => {
                    let t = order[i % order.len()].clone();
                    let (snap, ws) = store.write(|c| version::checkout(c, &objects, &mut project, &t)).unwrap();
                    check_restored(&ws, &expected[&t], &snap.tree_digest, &disk);
                    head = t;
                }
            }
            // the persisted head always agrees with the model
            let stored = store.read(|c| nocode_core::store::load_project(c, &project.id)).unwrap();
            prop_assert_eq!(stored.head_snapshot.as_ref(), Some(&head));
        }
        let events = store.read(|c| version::list_rollbacks(c, &project.id)).unwrap();
        prop_assert_eq!(events.len(), rollbacks);
        let graph = store.read(|c| version::version_graph(c, &project)).unwrap();
        prop_assert_eq!(graph.nodes.len(), order.len());
        prop_assert_eq!(graph.edge_count(), graph.nodes.len() - 1);

        // discarded = commits off the root-to-head chain, walked by hand
        let mut on_path = std::collections::HashSet::new();
        let mut cur = Some(head.clone());
        while let Some(c) = cur {
            cur = parents[&c].clone();
            on_path.insert(c);
        }
        let off_path = order.iter().filter(|id| !on_path.contains(*id)).count();
        prop_assert_eq!(graph.discarded_count(), off_path);
        prop_assert_eq!(graph.abandoned_branches.iter().map(|b| b.nodes.len()).sum::<usize>(), off_path);
        prop_assert_eq!(graph.active_path.len(), on_path.len() - 1);

        // one object per distinct blob or tree, however often it was committed
        let mut distinct = std::collections::HashSet::new();
        for ws in expected.values() {
            distinct.insert(ws.tree_digest());
            distinct.extend(ws.entries().map(|e| e.digest));
        }
        prop_assert_eq!(objects.object_count().unwrap(), distinct.len());
    }
}
