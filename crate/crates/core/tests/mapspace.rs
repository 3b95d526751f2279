use std::collections::HashSet;

use tfperf_core::hwmodel::AcceleratorConfig;
use tfperf_core::mapspace::*;
use tfperf_core::workload::OperatorSpec;

fn huge(w: u64) -> AcceleratorConfig {
    AcceleratorConfig::gemmini(w, 1 << 20, 1 << 20)
}

fn resident(nest: &LoopNest) -> Mapping {
    let n = nest.rank();
    Mapping {
        spatial: vec![1; n],
        local: nest.extents(),
        dram: vec![1; n],
        local_perm: (0..n).collect(),
        dram_perm: (0..n).collect(),
    }
}

#[test]
fn sampling_is_deterministic() {
    let nest = LoopNest::named("bert.qk").unwrap();
    let accel = AcceleratorConfig::default();
    assert_eq!(random_mapping(&nest, &accel, 5).unwrap(), random_mapping(&nest, &accel, 5).unwrap());
    let a = sample_stats(&nest, &accel, 500, 9).unwrap();
    let b = sample_stats(&nest, &accel, 500, 9).unwrap();
    assert_eq!(a.relative_edps, b.relative_edps);
}

#[test]
fn small_nest_samples_are_valid() {
    let nest = LoopNest::matmul(4, 4, 4);
    let accel = huge(2);
    for (m, _) in sample_mappings(&nest, &accel, 200, 1).unwrap() {
        assert!(validate(&m, &nest, &accel).is_empty());
    }
}

#[test]
fn sampler_diversity() {
    let nest = LoopNest::matmul(64, 64, 64);
    let samples = sample_mappings(&nest, &AcceleratorConfig::default(), 1000, 3).unwrap();
    let perms: HashSet<_> = samples.iter().map(|(m, _)| m.dram_perm.clone()).collect();
    let tilings: HashSet<_> = samples.iter().map(|(m, _)| (m.spatial.clone(), m.local.clone(), m.dram.clone())).collect();
    assert!(perms.len() >= 2 && tilings.len() >= 10);
}

#[test]
fn validate_reports_each_violation() {
    let nest = LoopNest::matmul(32, 32, 32);
    let accel = AcceleratorConfig::default();
    let mut m = resident(&nest);
    m.local[0] = 16;
    assert!(validate(&m, &nest, &accel).iter().any(|v| v.contains("under-covered dim")));
    let mut m = resident(&nest);
    m.spatial[0] = 32;
    m.local[0] = 1;
    assert!(validate(&m, &nest, &accel).iter().any(|v| v.contains("exceeds array width")));
}

#[test]
fn scratchpad_boundary_probe() {
    // Input plus weight footprint of a resident 16x16x16 matmul is 512 bytes.
    let nest = LoopNest::matmul(16, 16, 16);
    let m = resident(&nest);
    let exact = AcceleratorConfig::gemmini(16, 1, 64).with_memory(1024, 65536);
    assert!(validate(&m, &nest, &exact).is_empty());
    let short = exact.clone().with_memory(1022, 65536);
    assert!(validate(&m, &nest, &short).iter().any(|v| v.contains("scratchpad capacity")));
    // Partial sums: 256 values at 4 bytes.
    let acc_exact = exact.clone().with_memory(1024, 1024);
    assert!(validate(&m, &nest, &acc_exact).is_empty());
    let acc_short = exact.with_memory(1024, 1023);
    assert!(validate(&m, &nest, &acc_short).iter().any(|v| v.contains("accumulator capacity")));
}

#[test]
fn resident_mapping_moves_ideal_bytes() {
    for nest in [LoopNest::matmul(48, 32, 16), LoopNest::conv(8, 4, 3, 6, 1)] {
        let r = evaluate(&resident(&nest), &nest, &huge(4)).unwrap();
        assert_eq!(r.dram_bytes(), nest.ideal_bytes());
    }
}

#[test]
fn reduction_outermost_rewrites_output() {
    let nest = LoopNest::matmul(32, 32, 32);
    let accel = AcceleratorConfig::default();
    // M and K split in two at DRAM, N resident.
    let base = Mapping {
        spatial: vec![16, 1, 16],
        local: vec![1, 16, 2],
        dram: vec![2, 2, 1],
        local_perm: vec![0, 1, 2],
        dram_perm: vec![1, 0, 2],
    };
    assert!(validate(&base, &nest, &accel).is_empty());
    let ideal_out = 32 * 32;
    let k_outer = traffic(&base, &nest, &accel);
    assert_eq!(k_outer.output_writes, 2 * ideal_out);
    assert_eq!(k_outer.output_reads, ideal_out);
    let k_inner = traffic(&Mapping { dram_perm: vec![0, 2, 1], ..base }, &nest, &accel);
    assert_eq!(k_inner.output_writes, ideal_out);
    assert_eq!(k_inner.output_reads, 0);
}

#[test]
fn resident_level_order_does_not_change_cost() {
    let accel = huge(4);
    for nest in [LoopNest::matmul(12, 20, 8), LoopNest::conv(8, 4, 3, 5, 2)] {
        let m = resident(&nest);
        let base = evaluate(&m, &nest, &accel).unwrap();
        let mut p = m.clone();
        p.dram_perm.reverse();
        p.dram_perm.swap(0, 1);
        assert_eq!(evaluate(&p, &nest, &accel).unwrap(), base);
    }
    // Loops with a unit DRAM factor may move freely.
    let nest = LoopNest::matmul(32, 32, 32);
    let m = Mapping {
        spatial: vec![16, 1, 16],
        local: vec![1, 16, 2],
        dram: vec![2, 2, 1],
        local_perm: vec![0, 1, 2],
        dram_perm: vec![1, 0, 2],
    };
    let moved = Mapping { dram_perm: vec![2, 1, 0], ..m.clone() };
    let accel = AcceleratorConfig::default();
    assert_eq!(evaluate(&m, &nest, &accel).unwrap(), evaluate(&moved, &nest, &accel).unwrap());
}

#[test]
fn invalid_mapping_not_evaluated() {
    let nest = LoopNest::matmul(8, 8, 8);
    let mut m = resident(&nest);
    m.dram[1] = 0;
    assert!(evaluate(&m, &nest, &huge(1)).is_err());
}

#[test]
fn exhaustive_tiny_cases() {
    let nest = LoopNest::matmul(2, 2, 2);
    let accel = huge(1);
    let (_, best) = exhaustive_best(&nest, &accel).unwrap();
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let resident_best = orders
        .iter()
        .map(|p| evaluate(&Mapping { local_perm: p.to_vec(), ..resident(&nest) }, &nest, &accel).unwrap().edp)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.edp, resident_best);

    let one = LoopNest::matmul(1, 1, 1);
    // Only loop orders vary, and they are all equivalent.
    assert_eq!(mapspace_size(&one, 1), 36);
    let (m, _) = exhaustive_best(&one, &accel).unwrap();
    assert_eq!(m, resident(&one));
}

#[test]
fn exhaustive_guard() {
    let nest = LoopNest::named("resnet.conv5_3x3").unwrap();
    match exhaustive_best(&nest, &AcceleratorConfig::default()) {
        Err(tfperf_core::error::Error::MapspaceTooLarge { size, limit }) => assert!(size > limit),
        other => panic!("expected size guard, got {other:?}"),
    }
}

#[test]
fn exhaustive_bounds_samples_and_anchors_relative_edp() {
    let nest = LoopNest::matmul(8, 8, 8);
    let accel = AcceleratorConfig::gemmini(4, 1, 1).with_memory(256, 256);
    let (_, best) = exhaustive_best(&nest, &accel).unwrap();
    let samples = sample_mappings(&nest, &accel, 5000, 2).unwrap();
    let edps: Vec<f64> = samples.iter().map(|(_, c)| c.edp).collect();
    assert!(edps.iter().all(|&e| e >= best.edp));
    let mut with_best = edps.clone();
    with_best.push(best.edp);
    let s = MapspaceStats::from_edps(&with_best).unwrap();
    assert!(s.cdf.iter().all(|&r| r >= 1.0));
    assert!(s.cdf.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(s.cdf[0], 1.0);
}

#[test]
fn single_sample_stats() {
    let s = sample_stats(&LoopNest::named("bert.qk").unwrap(), &AcceleratorConfig::default(), 1, 4).unwrap();
    assert_eq!(s.p10, 1.0);
    assert_eq!(s.max_relative_edp, 1.0);
    assert_eq!(s.frac_within(f64::INFINITY), 1.0);
    assert!(sample_stats(&LoopNest::matmul(2, 2, 2), &AcceleratorConfig::default(), 0, 1).is_err());
}

#[test]
fn matched_dims_for_first_convolution() {
    // The 240 / 120 sizes correspond to the 7x7x3->64 stem counted at a 56x56 output.
    let conv1 = OperatorSpec::conv("conv1", 7, 3, 64, 56, 1);
    assert_eq!(matched_mac_dims(&conv1, 512, 4.0).unwrap(), (240, 120));
    let k = 6;
    let conv = OperatorSpec::conv("c", k, 1, 512, 1, 1);
    assert_eq!(matched_mac_dims(&conv, 512, 4.0).unwrap().0, k);
}

#[test]
fn matched_nests_use_equal_sample_counts() {
    let accel = AcceleratorConfig::default();
    let a = sample_stats(&LoopNest::named("matched.mha").unwrap(), &accel, 2000, 1).unwrap();
    let b = sample_stats(&LoopNest::named("resnet.conv1").unwrap(), &accel, 2000, 1).unwrap();
    assert_eq!(a.n_samples, b.n_samples);
    assert_eq!(a.cdf.len(), b.cdf.len());
}

#[test]
fn unknown_nest_name() {
    assert!(LoopNest::named("bert.nope").is_err());
    for n in LoopNest::NAMES {
        assert!(LoopNest::named(n).is_ok());
    }
}
