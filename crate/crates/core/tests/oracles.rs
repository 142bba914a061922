mod common;

use common::oracle::check;

#[test]
fn freq_set_matches_enumeration() {
    check("frequent set", 50).unwrap();
}

#[test]
fn fsp_and_fcp_match_counting() {
    check("FSP and FCP", 50).unwrap();
}

#[test]
fn margin_candidates_match_rank_enumeration() {
    check("margin candidates", 50).unwrap();
}

#[test]
fn composition_index_round_trips() {
    check("composition index", 50).unwrap();
}
