use proptest::prelude::*;
use tfperf_core::hwmodel::*;
use tfperf_core::workload::*;

fn bert(l: u64) -> ModelConfig {
    ModelConfig::preset("bert-base").unwrap().with_seq_len(l)
}

fn baseline() -> AcceleratorConfig {
    AcceleratorConfig::preset("gemmini-baseline").unwrap()
}

fn roofline_holds(op: &OperatorSpec, accel: &AcceleratorConfig, r: &CostReport) -> bool {
    let w = accel.pe_width as f64;
    let peak = flops(op) as f64 / (2.0 * w * w);
    let mem = r.dram_bytes() as f64 / accel.dram_bw;
    r.latency + 1e-6 >= peak.max(mem)
}

#[test]
fn every_model_operator_respects_roofline() {
    let accel = baseline();
    for cfg in [bert(512), ModelConfig::preset("gpt2").unwrap().with_seq_len(128), ModelConfig::preset("resnet50").unwrap()] {
        for op in hardware_ops(&cfg).unwrap() {
            for tiler in [Tiler::Square, Tiler::Greedy, Tiler::Optimal] {
                let r = op_cost(&op, &accel, tiler).unwrap();
                assert!(roofline_holds(&op, &accel, &r), "{} {tiler:?}", op.name);
                assert!(r.compute_cycles.max(r.memory_cycles) <= r.latency + 1e-6);
                assert!(r.latency <= r.compute_cycles + r.memory_cycles + 1e-6);
                assert_eq!(r.edp, r.latency * r.energy);
            }
        }
    }
}

#[test]
fn capacity_and_bandwidth_monotonicity() {
    let ops = hardware_ops(&bert(512)).unwrap();
    let configs = [(32, 16), (64, 16), (64, 32), (128, 32), (128, 64), (256, 64), (256, 128), (512, 256), (1024, 1024)];
    for tiler in [Tiler::Square, Tiler::Optimal] {
        for op in &ops {
            let mut prev = f64::INFINITY;
            for (s, a) in configs {
                let l = op_cost(op, &AcceleratorConfig::gemmini(16, s, a), tiler).unwrap().latency;
                assert!(l <= prev, "{} {tiler:?} at ({s}, {a})", op.name);
                prev = l;
            }
            let mut prev = f64::INFINITY;
            for bw in [0.5, 1.0, 2.0, 4.0, 16.0] {
                let mut accel = baseline();
                accel.dram_bw = bw;
                let l = op_cost(op, &accel, tiler).unwrap().latency;
                assert!(l <= prev, "{} bw {bw}", op.name);
                prev = l;
            }
        }
    }
}

#[test]
fn breakdown_sums_to_end_to_end() {
    let accel = baseline();
    let cfg = bert(512);
    let total: f64 = hardware_ops(&cfg)
        .unwrap()
        .iter()
        .map(|o| op_cost(o, &accel, Tiler::Square).unwrap().latency)
        .sum();
    let b: f64 = latency_breakdown(&cfg, &accel).unwrap().values().sum();
    assert!((b - total).abs() <= 1e-9 * total);
}

#[test]
fn act_to_act_share_grows_with_length() {
    let accel = baseline();
    let shares: Vec<f64> = [128, 512, 4096]
        .iter()
        .map(|&l| {
            let b = latency_breakdown(&bert(l), &accel).unwrap();
            b[&Category::MhaActToAct] / b.values().sum::<f64>()
        })
        .collect();
    assert!(shares[0] < shares[1] && shares[1] < shares[2], "{shares:?}");
}

#[test]
fn gpt2_slower_than_bert() {
    let accel = baseline();
    for l in [128, 512] {
        let b: f64 = latency_breakdown(&bert(l), &accel).unwrap().values().sum();
        let g: f64 = latency_breakdown(&ModelConfig::preset("gpt2").unwrap().with_seq_len(l), &accel).unwrap().values().sum();
        assert!(g > b, "l={l}");
    }
}

#[test]
fn resnet_nonlinear_share() {
    let b = latency_breakdown(&ModelConfig::preset("resnet50").unwrap(), &baseline()).unwrap();
    let total: f64 = b.values().sum();
    let share = 100.0 * (b[&Category::BatchNorm] + b[&Category::Relu]) / total;
    assert!((share - 32.4).abs() <= 8.0, "{share}");
}

#[test]
fn zero_layers_rejected() {
    let mut cfg = bert(128);
    cfg.num_layers = 0;
    assert!(latency_breakdown(&cfg, &baseline()).is_err());
}

#[test]
fn decoder_projection_is_bandwidth_bound() {
    let accel = baseline();
    let cfg = ModelConfig::preset("gpt2").unwrap().with_seq_len(128);
    let ops = hardware_ops(&cfg).unwrap();
    let proj = ops.iter().find(|o| o.class == OperatorClass::MhaProjection).unwrap();
    let r = op_cost(proj, &accel, Tiler::Square).unwrap();
    let bound = mops(proj) as f64 / accel.dram_bw;
    assert!(!r.compute_bound);
    assert!(r.latency >= bound && r.latency <= 1.05 * bound, "{} vs {bound}", r.latency);
}

#[test]
fn nonideal_intensity_properties() {
    let accel = baseline();
    let (rows, total) = nonideal_profile(&bert(4096), &accel).unwrap();
    for r in &rows {
        assert!(r.nonideal_intensity.unwrap() <= r.ideal_intensity.unwrap() + 1e-9, "{}", r.name);
    }
    assert!(total.nonideal_intensity.unwrap() / total.ideal_intensity.unwrap() <= 0.5);
    let get = |n: &str| rows.iter().find(|r| r.name.ends_with(n)).unwrap().nonideal_intensity.unwrap();
    assert!(get("w_out") < get("w_q"));
}

#[test]
fn memory_split_reduces_matmul_latency() {
    let kb = 1024;
    let sweep = memory_split_sweep(&bert(512), &baseline(), 320 * kb, &[(256 * kb, 64 * kb), (64 * kb, 256 * kb)]).unwrap();
    let a = sweep.results[0].matmul_latency.unwrap();
    let b = sweep.results[1].matmul_latency.unwrap();
    assert!(1.0 - b / a >= 0.20, "{a} -> {b}");
    assert_eq!(sweep.best, Some(1));
}

#[test]
fn memory_split_edge_cases() {
    let kb = 1024;
    let one = memory_split_sweep(&bert(128), &baseline(), 320 * kb, &[(64 * kb, 256 * kb)]).unwrap();
    assert_eq!(one.best, Some(0));
    let bad = memory_split_sweep(&bert(128), &baseline(), 320 * kb, &[(64 * kb, 64 * kb), (0, 320 * kb)]).unwrap();
    assert!(bad.results.iter().all(|r| r.matmul_latency.is_none() && r.error.is_some()));
    assert_eq!(bad.best, None);
}

#[test]
fn query_key_latency_falls_with_accumulator() {
    let qk = hardware_ops(&bert(512))
        .unwrap()
        .into_iter()
        .find(|o| o.name.ends_with("query_x_key"))
        .unwrap();
    for tiler in [Tiler::Greedy, Tiler::Square] {
        let mut prev = f64::INFINITY;
        for acc in [16, 32, 64, 128, 256, 512, 1024, 2048] {
            let l = op_cost(&qk, &AcceleratorConfig::gemmini(16, 256, acc), tiler).unwrap().latency;
            assert!(l <= prev, "{tiler:?} acc {acc}");
            prev = l;
        }
    }
}

#[test]
fn doubling_traffic_doubles_dram_energy() {
    let accel = baseline();
    let a = OperatorSpec::elementwise("a", NonlinearFn::Add, 1000, 1);
    let b = a.clone().with_precisions(&[2], 2);
    let ra = op_cost(&a, &accel, Tiler::Square).unwrap();
    let rb = op_cost(&b, &accel, Tiler::Square).unwrap();
    assert_eq!(rb.dram_bytes(), 2 * ra.dram_bytes());
    let per_byte = |l: &MemLevel| match l {
        MemLevel::Dram => accel.energy.dram,
        MemLevel::Scratchpad => accel.energy.spad,
        MemLevel::Accumulator => accel.energy.acc,
    };
    let delta: f64 = rb.traffic.iter().map(|(l, &t)| (t - ra.traffic.get(l).copied().unwrap_or(0)) as f64 * per_byte(l)).sum();
    assert!((rb.energy - ra.energy - delta).abs() < 1e-9 * rb.energy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_matmuls_respect_bounds(
        m in 1u64..700, k in 1u64..700, n in 1u64..700,
        w in prop::sample::select(vec![4u64, 8, 16, 32]),
        spad in prop::sample::select(vec![64u64, 128, 256]),
        acc in prop::sample::select(vec![32u64, 64, 256]),
        wide in any::<bool>(),
    ) {
        let accel = AcceleratorConfig::gemmini(w, spad, acc);
        let mut op = OperatorSpec::matmul("m", OperatorClass::FfnProjection, m, k, n, false);
        if wide {
            op = op.with_precisions(&[1, 1], 4);
        }
        for tiler in [Tiler::Square, Tiler::Greedy, Tiler::Optimal] {
            let plan = plan_tiles(&op, &accel, tiler, TileConstraint::default()).unwrap();
            prop_assert!(plan_violations(&op, &plan, &accel).is_empty());
            let r = op_latency(&op, &plan, &accel).unwrap();
            prop_assert!(roofline_holds(&op, &accel, &r));
            prop_assert!(r.dram_bytes() >= mops(&op));
        }
    }
}
