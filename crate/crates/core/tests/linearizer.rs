mod common;

use common::positions::position_oracle_suite;

#[test]
fn position_matrix_matches_naive_traversal() {
    assert_eq!(position_oracle_suite(200, 11), 0);
}
