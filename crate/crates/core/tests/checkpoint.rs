mod common;

use common::checks::{checkpoint_forward_mismatches, pretrain_metrics};
use common::tiny_run_config;

#[test]
fn round_trip_gives_bitwise_identical_forward_outputs() {
    let cfg = tiny_run_config(&[]);
    let (_, model, bench) = pretrain_metrics(&cfg);
    assert_eq!(checkpoint_forward_mismatches(&cfg, &model, &bench, 20), 0);
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let cfg = tiny_run_config(&[]);
    let (a, ..) = pretrain_metrics(&cfg);
    let (b, ..) = pretrain_metrics(&cfg);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 20);
}
