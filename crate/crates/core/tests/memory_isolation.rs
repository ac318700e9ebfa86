mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::isolation::{connector_run, scratch_runs, SENTINEL};
use detflow::memory::{Scope, ScratchSpace, StateReadError, StateStore};
use detflow::value::{FieldType, Schema, Value};

#[test]
fn scratch_is_private_to_each_node_attempt() {
    scratch_runs(16, 20).unwrap();
}

#[test]
fn concurrent_scratch_spaces_do_not_share_keys() {
    let handles: Vec<_> = (0..8)
        .map(|i| {
            std::thread::spawn(move || {
                let s = ScratchSpace::open(&format!("n{i}"), 0);
                for k in 0..200 {
                    s.put("tmp", Value::Int(i * 1000 + k)).unwrap();
                    assert_eq!(s.get("tmp").unwrap(), Some(Value::Int(i * 1000 + k)));
                }
                s.close().unwrap();
                assert!(s.get("tmp").is_err());
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

proptest! {
    #[test]
    fn undeclared_reads_are_scope_violations(
        declared in proptest::collection::btree_set("[a-f]", 0..4),
        read in "[a-h]",
    ) {
        let keys: Vec<String> = ('a'..='h').map(|c| c.to_string()).collect();
        let schema = Schema::from_fields(keys.iter().map(|k| (k.clone(), FieldType::Int))).unwrap();
        let store = StateStore::new(schema, Schema::empty());
        let all: BTreeMap<String, Value> = keys.iter().map(|k| (k.clone(), Value::Int(1))).collect();
        store.commit(all, "$init").unwrap();
        let snap = store.snapshot(Scope::keys(declared.iter().cloned()));
        match snap.read(&read) {
            Ok(v) => prop_assert!(declared.contains(&read) && *v == Value::Int(1)),
            Err(StateReadError::ScopeViolation(k)) => prop_assert!(!declared.contains(&read) && k == read),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn connector_payloads_reach_agents_only_when_piped() {
    assert!(!connector_run(false, &["note"]).unwrap().contains(SENTINEL));
    assert!(connector_run(true, &["note"]).unwrap().contains(SENTINEL));
}

#[test]
fn undeclared_state_never_reaches_the_provider() {
    let t = connector_run(false, &["note", "path"]).unwrap();
    assert!(t.contains("hello") && !t.contains(SENTINEL));
    // declaring the key is the explicit opt-in
    assert!(connector_run(false, &["secret"]).unwrap().contains(SENTINEL));
    assert!(connector_run(false, &["fetch"]).unwrap().contains(SENTINEL));
}
