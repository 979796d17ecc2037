//! Finite-difference checks of every trainable block against its analytic
//! backward pass.

use tfn_core::gradcheck::{check_all_blocks, check_block_with_fault, Block, Precision};

#[test]
fn every_block_passes_on_twenty_seeds_in_both_precisions() {
    let checks = check_all_blocks(20).unwrap();
    assert_eq!(checks.len(), Block::ALL.len() * 20 * 2);
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{:?} seed {} {:?}: max rel err {:.3e}", c.block, c.seed, c.precision, c.report.max_rel_err()))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(checks.iter().all(|c| c.report.params.iter().all(|p| p.checked > 0)));
}

#[test]
fn a_one_percent_backward_fault_is_caught_in_every_block() {
    for block in Block::ALL {
        let c = check_block_with_fault(block, 0, Precision::F64, Some(1.01)).unwrap();
        assert!(!c.passed(), "{block:?}: fault went unnoticed, max rel err {:.3e}", c.report.max_rel_err());
    }
}
