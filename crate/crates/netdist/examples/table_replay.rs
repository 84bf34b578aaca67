//! Replays a scripted 5-agent sequence of one-way table transfers and prints
//! how one agent's knowledge table fills in: timestamps age, parent pointers
//! record the relay tree each record travelled along.

use netdist::knowledge::KnowledgeTable;
use netdist::scenario::AgentState;

fn main() {
    let n = 5;
    let mut tables: Vec<KnowledgeTable> = (0..n).map(|i| KnowledgeTable::new(i, n)).collect();

    // (window, sender, receiver) script.
    let script: &[(u64, usize, usize)] = &[
        (1, 0, 4),
        (1, 2, 1),
        (2, 1, 0),
        (2, 2, 3),
        (3, 0, 1),
        (3, 4, 3),
        (4, 3, 0),
    ];

    for t in 1..=4u64 {
        for i in 0..n {
            tables[i].observe_self(AgentState::default(), t);
        }
        for &(w, sender, receiver) in script.iter().filter(|&&(w, _, _)| w == t) {
            debug_assert_eq!(w, t);
            let snapshot = tables[sender].clone();
            tables[receiver].merge(&snapshot);
            tables[sender].record_attempt(receiver, t);
        }

        println!("after window {t}, agent 0 knows:");
        for id in 0..n {
            let record = tables[0].record(id);
            println!(
                "  agent {id}: timestamp {:?} parent {:?} last-contact {:?} age {}",
                record.timestamp,
                record.parent,
                record.last_contact,
                tables[0].age(id, t)
            );
        }
    }

    // The parent pointers trace each record's relay path back to agent 0.
    println!("\nrelay paths toward agent 0:");
    for id in 1..n {
        let mut path = vec![id];
        let mut node = id;
        while let Some(parent) = tables[0].record(node).parent {
            path.push(parent);
            if parent == 0 {
                break;
            }
            node = parent;
        }
        println!("  {path:?}");
    }
    assert!(tables[0].parents_acyclic());
}
