//! Capture-model properties over seeded random senders.

mod common;

use common::{airtime_suite, SUITE_CASES};

#[test]
fn power_offset_does_not_change_the_winner() {
    airtime_suite("offset_invariance", SUITE_CASES).unwrap();
}

#[test]
fn larger_margin_never_creates_a_decode() {
    airtime_suite("margin_monotonicity", SUITE_CASES).unwrap();
}

#[test]
fn arrival_offset_decides_alignment() {
    airtime_suite("arrival_offset", SUITE_CASES).unwrap();
}
