mod common;

use common::grad::check;

#[test]
fn verb_cross_entropy() {
    check("verb cross-entropy", 20).unwrap();
}

#[test]
fn object_soft_cross_entropy() {
    check("object soft cross-entropy", 20).unwrap();
}

#[test]
fn component_sum() {
    check("component sum", 20).unwrap();
}

#[test]
fn composition_cross_entropy() {
    check("composition cross-entropy", 20).unwrap();
}

#[test]
fn reversal_cosine() {
    check("reversal cosine", 20).unwrap();
}

#[test]
fn shuffled_entropy() {
    check("shuffled entropy", 20).unwrap();
}

#[test]
fn frequent_margin() {
    check("frequent margin", 20).unwrap();
}

#[test]
fn scheduled_total() {
    check("scheduled total", 20).unwrap();
}
