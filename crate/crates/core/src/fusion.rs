//! Matmul + normalization fusion: the normalization consumes complete output
//! rows (or columns) straight from the accumulator while the PE array keeps
//! producing the next block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{
    gemm_dram_traffic, op_cost, op_latency, plan_tiles, AcceleratorConfig, CostReport, Gemm, LoopOrder,
    TileConstraint, Tiler, TilingPlan,
};
use crate::mapspace::MappingConstraints;
use crate::workload::{encoder_ops_with, ModelConfig, NonlinearFn, OpKind, OperatorSpec, PrecisionModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Consumer {
    Softmax,
    LayerNorm,
}

/// Output dimension of the producer along which the consumer normalizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReductionDim {
    M,
    N,
}

/// The three matmul / normalization pairs of an encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    QkSoftmax,
    WoutLn,
    Ffn2Ln,
}

impl PairKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "qk-softmax" => Ok(PairKind::QkSoftmax),
            "wout-ln" => Ok(PairKind::WoutLn),
            "ffn2-ln" => Ok(PairKind::Ffn2Ln),
            other => Err(Error::InvalidConfig(format!(
                "unknown pair {other:?} (expected qk-softmax, wout-ln or ffn2-ln)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PairKind::QkSoftmax => "qk-softmax",
            PairKind::WoutLn => "wout-ln",
            PairKind::Ffn2Ln => "ffn2-ln",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionPair {
    /// One instance of the producing matmul.
    pub producer: OperatorSpec,
    /// The consumer for that instance.
    pub consumer: OperatorSpec,
    pub kind: Consumer,
    pub reduction_dim: ReductionDim,
    /// Independent instances per layer (attention heads).
    pub instances: u64,
}

impl FusionPair {
    pub fn new(producer: OperatorSpec, consumer: OperatorSpec, reduction_dim: ReductionDim) -> Result<Self> {
        let (m, _, n) = match producer.kind {
            OpKind::Matmul { m, k, n, .. } => (m, k, n),
            _ => return Err(Error::InvalidConfig(format!("{} is not a matmul", producer.name))),
        };
        let (elements, kind) = match consumer.kind {
            OpKind::Elementwise { elements, func: NonlinearFn::Softmax, .. } => (elements, Consumer::Softmax),
            OpKind::Elementwise { elements, func: NonlinearFn::LayerNorm, .. } => (elements, Consumer::LayerNorm),
            _ => return Err(Error::InvalidConfig(format!("{} is not Softmax or LayerNorm", consumer.name))),
        };
        if elements != m * n {
            return Err(Error::InvalidConfig(format!(
                "consumer has {elements} elements, producer output has {}",
                m * n
            )));
        }
        Ok(Self { producer, consumer, kind, reduction_dim, instances: 1 })
    }

    /// The pair from the first encoder layer of `cfg`, with wide partial sums.
    pub fn from_encoder(which: PairKind, cfg: &ModelConfig) -> Result<Self> {
        let mut one = cfg.clone();
        one.num_layers = 1;
        let ops = encoder_ops_with(&one, PrecisionModel::WideBeforeNonlinear)?;
        let find = |suffix: &str| {
            ops.iter()
                .find(|o| o.name.ends_with(suffix))
                .cloned()
                .expect("encoder layer has every operator")
        };
        let (p, c, dim) = match which {
            PairKind::QkSoftmax => (find("query_x_key"), find("softmax"), ReductionDim::N),
            PairKind::WoutLn => (find("w_out"), find("layernorm1"), ReductionDim::M),
            PairKind::Ffn2Ln => (find("w_2"), find("layernorm2"), ReductionDim::M),
        };
        let instances = p.repeat;
        let mut producer = p;
        producer.repeat = 1;
        let mut consumer = c;
        if let OpKind::Elementwise { ref mut elements, .. } = consumer.kind {
            *elements /= instances;
        }
        let mut pair = Self::new(producer, consumer, dim)?;
        pair.instances = instances;
        Ok(pair)
    }

    fn dims(&self) -> (u64, u64, u64) {
        self.producer.gemm_dims().expect("validated matmul")
    }

    /// Extent of the normalized dimension and of the other output dimension.
    fn extents(&self) -> (u64, u64) {
        let (m, _, n) = self.dims();
        match self.reduction_dim {
            ReductionDim::M => (m, n),
            ReductionDim::N => (n, m),
        }
    }

    fn elements(&self) -> u64 {
        match self.consumer.kind {
            OpKind::Elementwise { elements, .. } => elements,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConstraints {
    pub reduction_dim: ReductionDim,
    pub full_extent: u64,
    pub tile: TileConstraint,
    pub mapping: MappingConstraints,
}

/// The normalized dimension must be fully resident in the accumulator, with
/// at least one row of the other dimension alongside it.
pub fn fused_constraints(pair: &FusionPair, accel: &AcceleratorConfig) -> Result<FusionConstraints> {
    let (full, _) = pair.extents();
    let (_, k, _) = pair.dims();
    let acc = full * accel.accum_bytes as u64;
    if acc > accel.accumulator_bytes {
        return Err(Error::FusionInfeasible(format!(
            "a {full}-element row at {} B needs {acc} B, accumulator holds {} B",
            accel.accum_bytes, accel.accumulator_bytes
        )));
    }
    let g = Gemm::of(&pair.producer).expect("validated matmul");
    let (a_row, b_row) = match pair.reduction_dim {
        ReductionDim::M => (full * g.a_prec, g.b_prec),
        ReductionDim::N => (g.a_prec, full * g.b_prec),
    };
    if k > 0 && a_row + b_row > accel.scratchpad_bytes / 2 {
        return Err(Error::FusionInfeasible(format!(
            "operand slices for a full {full}-wide tile exceed half of the {} B scratchpad",
            accel.scratchpad_bytes
        )));
    }
    let (tile, dim_index, order) = match pair.reduction_dim {
        ReductionDim::M => (TileConstraint { fixed_m: Some(full), ..Default::default() }, 0, LoopOrder::NOuter),
        ReductionDim::N => (TileConstraint { fixed_n: Some(full), ..Default::default() }, 2, LoopOrder::MOuter),
    };
    Ok(FusionConstraints {
        reduction_dim: pair.reduction_dim,
        full_extent: full,
        tile: TileConstraint { order: Some(order), ..tile },
        mapping: MappingConstraints { full_dims: vec![dim_index] },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    FusionWins,
    FusionLoses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    /// `None` when the fused schedule does not fit.
    pub fused_latency: Option<f64>,
    pub nonfused_latency: f64,
    /// Constrained over unconstrained producer latency.
    pub producer_penalty: Option<f64>,
    pub hidden_cycles: f64,
    pub consumer_latency: f64,
    pub producer_latency: f64,
    pub fused_producer_latency: Option<f64>,
    pub fused_dram_bytes: Option<u64>,
    /// The constrained schedule run without fusion, round trip included.
    pub constrained_dram_bytes: Option<u64>,
    pub nonfused_dram_bytes: u64,
    pub verdict: Verdict,
    pub reason: Option<String>,
}

fn tile_count(e: u64, t: u64) -> Vec<(u64, u64)> {
    let mut v = vec![(t, e / t)];
    if !e.is_multiple_of(t) {
        v.push((e % t, 1));
    }
    v.retain(|&(_, c)| c > 0);
    v
}

/// Fused schedule for one instance: producer blocks feed a one-deep SFU
/// pipeline. Returns (latency, producer-stage latency, DRAM bytes).
fn fused_schedule(pair: &FusionPair, plan: &TilingPlan, accel: &AcceleratorConfig) -> (f64, f64, u64) {
    let g = Gemm::of(&pair.producer).expect("validated matmul");
    let (full, _) = pair.extents();
    let elements = pair.elements();
    // The consumer writes its result and reads any side inputs (the residual);
    // the producer's wide output never leaves the chip.
    let side: u64 = pair.consumer.in_precisions.iter().skip(1).map(|&p| p as u64).sum();
    let consumer_bytes = elements * (pair.consumer.out_precision as u64 + side);
    let fused_gemm = Gemm { c_bytes: 0, ..g };
    let (inputs, _) = gemm_dram_traffic(&fused_gemm, plan);
    let dram = inputs + consumer_bytes;

    let producer = op_latency_with_traffic(&g, plan, dram, accel);
    let passes = match pair.consumer.kind {
        OpKind::Elementwise { passes, .. } => passes.max(1),
        _ => 1,
    };
    let co_tile = match pair.reduction_dim {
        ReductionDim::M => plan.tile_n,
        ReductionDim::N => plan.tile_m,
    };
    let (_, co_extent) = pair.extents();
    let w = accel.pe_width;
    let (mut p_end, mut c_end) = (0.0f64, 0.0f64);
    for (size, count) in tile_count(co_extent, co_tile) {
        let p = producer * size as f64 / co_extent as f64;
        let c = (passes * (size * full).div_ceil(w)) as f64 * accel.sfu_vector_latency;
        for _ in 0..count {
            p_end += p;
            c_end = c_end.max(p_end) + c;
        }
    }
    (c_end, producer, dram)
}

fn op_latency_with_traffic(g: &Gemm, plan: &TilingPlan, dram: u64, accel: &AcceleratorConfig) -> f64 {
    let w = accel.pe_width;
    let per_mac = dram as f64 / accel.dram_bw / g.macs.max(1) as f64;
    let mut lat = 0.0;
    for (tm, cm) in tile_count(g.m, plan.tile_m) {
        for (tk, ck) in tile_count(g.k, plan.tile_k) {
            for (tn, cn) in tile_count(g.n, plan.tile_n) {
                let c = (tk * tm.div_ceil(w) * tn.div_ceil(w) + w) as f64;
                let m = (tm * tk * tn) as f64 * per_mac;
                lat += (cm * ck * cn) as f64 * c.max(m);
            }
        }
    }
    lat
}

/// Non-fused and fused latency of one layer's worth of `pair`.
pub fn eval_pair(pair: &FusionPair, accel: &AcceleratorConfig) -> Result<FusionReport> {
    accel.validate()?;
    let inst = pair.instances.max(1) as f64;
    let (m, k, n) = pair.dims();
    if m * k * n == 0 || pair.elements() == 0 {
        let z = CostReport::zero();
        return Ok(FusionReport {
            fused_latency: Some(0.0),
            nonfused_latency: 0.0,
            producer_penalty: Some(1.0),
            hidden_cycles: 0.0,
            consumer_latency: 0.0,
            producer_latency: z.latency,
            fused_producer_latency: Some(0.0),
            fused_dram_bytes: Some(0),
            constrained_dram_bytes: Some(0),
            nonfused_dram_bytes: 0,
            verdict: Verdict::FusionLoses,
            reason: None,
        });
    }
    let greedy = plan_tiles(&pair.producer, accel, Tiler::Greedy, TileConstraint::default())?;
    let producer = op_latency(&pair.producer, &greedy, accel)?;
    let consumer = op_cost(&pair.consumer, accel, Tiler::Greedy)?;
    let nonfused = producer.latency + consumer.latency;
    let nonfused_dram = producer.dram_bytes() + consumer.dram_bytes();

    let fused = fused_constraints(pair, accel).and_then(|c| {
        plan_tiles(&pair.producer, accel, Tiler::Greedy, c.tile)
            .map_err(|e| Error::FusionInfeasible(e.to_string()))
    });
    let report = match fused {
        Ok(plan) => {
            let (lat, prod, dram) = fused_schedule(pair, &plan, accel);
            let g = Gemm::of(&pair.producer).expect("validated matmul");
            let constrained = gemm_dram_traffic(&g, &plan).0 + consumer.dram_bytes();
            let remainder = lat - prod;
            let hidden = (consumer.latency - remainder).clamp(0.0, consumer.latency);
            FusionReport {
                fused_latency: Some(lat * inst),
                nonfused_latency: nonfused * inst,
                producer_penalty: Some(prod / producer.latency),
                hidden_cycles: hidden * inst,
                consumer_latency: consumer.latency * inst,
                producer_latency: producer.latency * inst,
                fused_producer_latency: Some(prod * inst),
                fused_dram_bytes: Some(dram * pair.instances.max(1)),
                constrained_dram_bytes: Some(constrained * pair.instances.max(1)),
                nonfused_dram_bytes: nonfused_dram * pair.instances.max(1),
                verdict: if lat < nonfused { Verdict::FusionWins } else { Verdict::FusionLoses },
                reason: None,
            }
        }
        Err(e) => FusionReport {
            fused_latency: None,
            nonfused_latency: nonfused * inst,
            producer_penalty: None,
            hidden_cycles: 0.0,
            consumer_latency: consumer.latency * inst,
            producer_latency: producer.latency * inst,
            fused_producer_latency: None,
            fused_dram_bytes: None,
            constrained_dram_bytes: None,
            nonfused_dram_bytes: nonfused_dram * pair.instances.max(1),
            verdict: Verdict::FusionLoses,
            reason: Some(e.to_string()),
        },
    };
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub accumulator_bytes: u64,
    pub seq_len: u64,
    pub report: FusionReport,
}

/// Evaluates `which` on every (accumulator size, sequence length) cell. The
/// scratchpad stays at the size given in `base`.
pub fn fusion_sweep(
    which: PairKind,
    cfg: &ModelConfig,
    base: &AcceleratorConfig,
    accum_sizes: &[u64],
    seq_lens: &[u64],
) -> Result<Vec<SweepCell>> {
    if accum_sizes.is_empty() || seq_lens.is_empty() {
        return Err(Error::InvalidConfig("fusion sweep needs at least one accumulator size and sequence length".into()));
    }
    let cells: Vec<(u64, u64)> = accum_sizes
        .iter()
        .flat_map(|&a| seq_lens.iter().map(move |&l| (a, l)))
        .collect();
    use rayon::prelude::*;
    cells
        .par_iter()
        .map(|&(acc, l)| {
            let accel = base.clone().with_memory(base.scratchpad_bytes, acc);
            let pair = FusionPair::from_encoder(which, &cfg.clone().with_seq_len(l))?;
            Ok(SweepCell { accumulator_bytes: acc, seq_len: l, report: eval_pair(&pair, &accel)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bert(l: u64) -> ModelConfig {
        ModelConfig::preset("bert-base").unwrap().with_seq_len(l)
    }

    #[test]
    fn qk_row_residency_fits() {
        let pair = FusionPair::from_encoder(PairKind::QkSoftmax, &bert(512)).unwrap();
        let accel = AcceleratorConfig::gemmini(16, 256, 256);
        let c = fused_constraints(&pair, &accel).unwrap();
        assert_eq!(c.full_extent, 512);
        assert_eq!(c.tile.fixed_n, Some(512));
        assert_eq!(pair.instances, 12);
    }

    #[test]
    fn single_token_constraint_is_trivial() {
        let pair = FusionPair::from_encoder(PairKind::QkSoftmax, &bert(1)).unwrap();
        let c = fused_constraints(&pair, &AcceleratorConfig::default()).unwrap();
        assert_eq!(c.full_extent, 1);
    }

    #[test]
    fn tiny_accumulator_makes_ffn2_infeasible() {
        let pair = FusionPair::from_encoder(PairKind::Ffn2Ln, &bert(512)).unwrap();
        let accel = AcceleratorConfig::default().with_memory(256 * 1024, 2048);
        assert!(matches!(fused_constraints(&pair, &accel), Err(Error::FusionInfeasible(_))));
        let r = eval_pair(&pair, &accel).unwrap();
        assert_eq!(r.verdict, Verdict::FusionLoses);
        assert!(r.reason.is_some());
    }

    #[test]
    fn mismatched_consumer_rejected() {
        let p = OperatorSpec::matmul("p", crate::workload::OperatorClass::ActToAct, 4, 4, 4, false);
        let c = OperatorSpec::elementwise("s", NonlinearFn::Softmax, 15, 1);
        assert!(FusionPair::new(p, c, ReductionDim::N).is_err());
    }

    #[test]
    fn parse_pair_names() {
        for k in [PairKind::QkSoftmax, PairKind::WoutLn, PairKind::Ffn2Ln] {
            assert_eq!(PairKind::parse(k.label()).unwrap(), k);
        }
        assert!(PairKind::parse("gelu").is_err());
    }
}
