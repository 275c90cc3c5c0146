#![allow(dead_code)]

pub mod fixtures;
pub mod pipeline;
pub mod reference;
pub mod scenes;

use cellmerge::evaluate::EvalSummary;

/// Every scalar metric and every per-class value of a summary, labelled.
pub fn summary_values(s: &EvalSummary) -> Vec<(String, f64)> {
    let mut out = vec![
        ("map_50_95".to_string(), s.map_50_95),
        ("map_50".to_string(), s.map_50),
        ("map_75".to_string(), s.map_75),
        ("map_small".to_string(), s.map_small),
        ("map_medium".to_string(), s.map_medium),
        ("map_large".to_string(), s.map_large),
        ("mar_1".to_string(), s.mar_1),
        ("mar_10".to_string(), s.mar_10),
        ("mar_100".to_string(), s.mar_100),
    ];
    for (k, v) in &s.per_class_ap50 {
        out.push((format!("ap50[{k}]"), *v));
    }
    for (k, v) in &s.per_class_ap {
        out.push((format!("ap[{k}]"), *v));
    }
    out
}
