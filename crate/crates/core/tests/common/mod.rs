#![allow(dead_code)]

use std::path::{Path, PathBuf};

use disclosure_sim::dataset::{synthetic, Behavior, Histories, SyntheticSpec, UserData};

/// Histories over `n_items` items named `i0..`, one user per sequence with
/// timestamps in list order.
pub fn histories(n_items: usize, sequences: &[&[u32]]) -> Histories {
    Histories {
        items: (0..n_items).map(|i| format!("i{i}")).collect(),
        users: sequences
            .iter()
            .enumerate()
            .map(|(u, seq)| UserData {
                user_id: format!("u{u:02}"),
                attributes: vec![],
                behaviors: seq
                    .iter()
                    .enumerate()
                    .map(|(t, &item)| Behavior {
                        item,
                        timestamp: t as i64,
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn small_synthetic() -> Histories {
    synthetic(&SyntheticSpec {
        users: 30,
        items: 60,
        min_len: 10,
        max_len: 20,
        ..SyntheticSpec::default()
    })
}

pub fn write_snapshot(dir: &Path, h: &Histories) -> PathBuf {
    let path = dir.join("histories.json");
    std::fs::write(&path, h.to_json().unwrap()).unwrap();
    path
}
