//! Analytical latency and energy model of a weight-stationary spatial
//! accelerator: a W x W PE array fed from a double-buffered scratchpad, a
//! wide accumulator for partial sums, a vector SFU and a DRAM link.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{
    flops, intensity, model_ops, AttentionStage, Category, ModelConfig, OpKind, OperatorClass,
    OperatorSpec, PrecisionModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    /// Energy of one multiply-accumulate.
    pub mac: f64,
    /// Per-byte access energies.
    pub spad: f64,
    pub acc: f64,
    pub dram: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self { mac: 1.0, spad: 6.0, acc: 12.0, dram: 200.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataflow {
    WeightStationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub name: String,
    pub pe_width: u64,
    pub scratchpad_bytes: u64,
    pub accumulator_bytes: u64,
    /// Bytes per cycle between DRAM and the local memories.
    pub dram_bw: f64,
    pub sfu_vector_latency: f64,
    pub energy: EnergyTable,
    pub dataflow: Dataflow,
    /// Width of a partial sum held in the accumulator.
    pub accum_bytes: u32,
    /// Charge a matrix-vector product as if all W columns were busy.
    pub ideal_matvec: bool,
}

pub const DEFAULT_DRAM_BW: f64 = 2.0;

impl Default for AcceleratorConfig {
    fn default() -> Self {
        Self::gemmini(16, 256, 64).named("gemmini-baseline")
    }
}

/// JSON layout of an accelerator file; capacities in kB.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcceleratorFile {
    #[serde(default)]
    name: Option<String>,
    pe_width: u64,
    scratchpad_kb: f64,
    accumulator_kb: f64,
    #[serde(default = "default_bw")]
    dram_bytes_per_cycle: f64,
    #[serde(default = "default_sfu")]
    sfu_cycles_per_vector: f64,
    #[serde(default)]
    energy: Option<EnergyTable>,
    #[serde(default)]
    ideal_matvec: bool,
}

fn default_bw() -> f64 {
    DEFAULT_DRAM_BW
}

fn default_sfu() -> f64 {
    1.0
}

impl AcceleratorConfig {
    pub fn gemmini(pe_width: u64, scratchpad_kb: u64, accumulator_kb: u64) -> Self {
        Self {
            name: format!("w{pe_width}-s{scratchpad_kb}k-a{accumulator_kb}k"),
            pe_width,
            scratchpad_bytes: scratchpad_kb * 1024,
            accumulator_bytes: accumulator_kb * 1024,
            dram_bw: DEFAULT_DRAM_BW,
            sfu_vector_latency: 1.0,
            energy: EnergyTable::default(),
            dataflow: Dataflow::WeightStationary,
            accum_bytes: 4,
            ideal_matvec: false,
        }
    }

    fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub const PRESETS: [&'static str; 2] = ["gemmini-baseline", "gemmini-tuned"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "gemmini-baseline" => Ok(Self::default()),
            "gemmini-tuned" => Ok(Self::gemmini(16, 64, 256).named(name)),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: AcceleratorFile = serde_json::from_str(text)?;
        let cfg = Self {
            name: f.name.unwrap_or_else(|| "custom".into()),
            pe_width: f.pe_width,
            scratchpad_bytes: (f.scratchpad_kb * 1024.0).round() as u64,
            accumulator_bytes: (f.accumulator_kb * 1024.0).round() as u64,
            dram_bw: f.dram_bytes_per_cycle,
            sfu_vector_latency: f.sfu_cycles_per_vector,
            energy: f.energy.unwrap_or_default(),
            dataflow: Dataflow::WeightStationary,
            accum_bytes: 4,
            ideal_matvec: f.ideal_matvec,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_memory(mut self, scratchpad_bytes: u64, accumulator_bytes: u64) -> Self {
        self.scratchpad_bytes = scratchpad_bytes;
        self.accumulator_bytes = accumulator_bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.pe_width == 0 {
            return bad("pe_width must be at least 1");
        }
        if self.scratchpad_bytes == 0 || self.accumulator_bytes == 0 {
            return bad("scratchpad and accumulator capacities must be positive");
        }
        if !(self.dram_bw > 0.0 && self.dram_bw.is_finite()) {
            return bad("dram bandwidth must be positive");
        }
        if !(self.sfu_vector_latency > 0.0 && self.sfu_vector_latency.is_finite()) {
            return bad("sfu latency must be positive");
        }
        let e = &self.energy;
        if !(e.dram > e.spad && e.spad > 0.0 && e.mac >= 0.0 && e.acc >= 0.0) {
            return bad("energy table must satisfy dram > spad > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemLevel {
    Dram,
    Scratchpad,
    Accumulator,
}

/// Which loop runs outermost at the DRAM level. The reduction loop is always
/// innermost so partial sums never leave the accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopOrder {
    MOuter,
    NOuter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingPlan {
    pub tile_m: u64,
    pub tile_k: u64,
    pub tile_n: u64,
    pub wide_output: bool,
    /// Fixed DRAM loop order; `None` picks whichever moves fewer bytes.
    pub order: Option<LoopOrder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency: f64,
    pub energy: f64,
    pub edp: f64,
    pub traffic: BTreeMap<MemLevel, u64>,
    pub compute_bound: bool,
    pub compute_cycles: f64,
    pub memory_cycles: f64,
}

impl CostReport {
    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, [0, 0, 0])
    }

    fn new(latency: f64, energy: f64, compute: f64, memory: f64, traffic: [u64; 3]) -> Self {
        let traffic = [MemLevel::Dram, MemLevel::Scratchpad, MemLevel::Accumulator]
            .into_iter()
            .zip(traffic)
            .collect();
        Self {
            latency,
            energy,
            edp: latency * energy,
            traffic,
            compute_bound: compute >= memory,
            compute_cycles: compute,
            memory_cycles: memory,
        }
    }

    pub fn dram_bytes(&self) -> u64 {
        self.traffic.get(&MemLevel::Dram).copied().unwrap_or(0)
    }

    fn level(&self, l: MemLevel) -> u64 {
        self.traffic.get(&l).copied().unwrap_or(0)
    }

    /// Sequential composition: latencies, energies and traffic add.
    pub fn sum<'a>(reports: impl IntoIterator<Item = &'a CostReport>) -> CostReport {
        let mut out = CostReport::zero();
        for r in reports {
            out.latency += r.latency;
            out.energy += r.energy;
            out.compute_cycles += r.compute_cycles;
            out.memory_cycles += r.memory_cycles;
            for (l, b) in &r.traffic {
                *out.traffic.entry(*l).or_default() += b;
            }
        }
        out.edp = out.latency * out.energy;
        out.compute_bound = out.compute_cycles >= out.memory_cycles;
        out
    }

    pub fn scaled(&self, k: u64) -> CostReport {
        let f = k as f64;
        let t = |l| self.level(l) * k;
        let mut r = CostReport::new(
            self.latency * f,
            self.energy * f,
            self.compute_cycles * f,
            self.memory_cycles * f,
            [t(MemLevel::Dram), t(MemLevel::Scratchpad), t(MemLevel::Accumulator)],
        );
        r.compute_bound = self.compute_bound;
        r
    }
}

/// Implicit-GEMM view of a matmul or convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Gemm {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    /// Bytes per element of the A (weight) and B (activation) tiles.
    pub a_prec: u64,
    pub b_prec: u64,
    /// Whole-tensor bytes fetched from DRAM for one full pass over A, B and
    /// the output.
    pub a_bytes: u64,
    pub b_bytes: u64,
    pub c_bytes: u64,
    pub out_prec: u64,
    pub macs: u64,
    pub flops: u64,
    pub repeat: u64,
}

impl Gemm {
    pub fn of(op: &OperatorSpec) -> Option<Gemm> {
        let (m, k, n) = op.gemm_dims()?;
        let (a_bytes, b_bytes, c_bytes) = op.operand_bytes();
        let prec = |i: usize| op.in_precisions.get(i).copied().unwrap_or(1) as u64;
        let repeat = op.repeat.max(1);
        Some(Gemm {
            m,
            k,
            n,
            a_prec: prec(0),
            b_prec: prec(1),
            a_bytes,
            b_bytes,
            c_bytes,
            out_prec: op.out_precision as u64,
            macs: m * k * n,
            flops: flops(op) / repeat,
            repeat: op.repeat,
        })
    }

    fn is_empty(&self) -> bool {
        self.m == 0 || self.k == 0 || self.n == 0 || self.repeat == 0
    }
}

/// Partial sums occupy the accumulator at full width whatever precision the
/// output is finally written at.
fn fits(g: &Gemm, tm: u64, tk: u64, tn: u64, accel: &AcceleratorConfig) -> bool {
    let spad = (tm * tk) * g.a_prec + (tk * tn) * g.b_prec;
    spad <= accel.scratchpad_bytes / 2 && tm * tn * accel.accum_bytes as u64 <= accel.accumulator_bytes
}

fn is_wide(op: &OperatorSpec) -> bool {
    let widest_in = op.in_precisions.iter().copied().max().unwrap_or(1);
    op.out_precision > widest_in
}

/// Lists every capacity violation of `plan` for `op`.
pub fn plan_violations(op: &OperatorSpec, plan: &TilingPlan, accel: &AcceleratorConfig) -> Vec<String> {
    let Some(g) = Gemm::of(op) else {
        return vec![format!("{} is not a matmul or convolution", op.name)];
    };
    let mut v = Vec::new();
    if plan.tile_m == 0 || plan.tile_k == 0 || plan.tile_n == 0 {
        v.push("zero tile factor".to_string());
        return v;
    }
    let spad = plan.tile_m * plan.tile_k * g.a_prec + plan.tile_k * plan.tile_n * g.b_prec;
    if spad > accel.scratchpad_bytes / 2 {
        v.push(format!(
            "scratchpad footprint {spad} B exceeds half of {} B",
            accel.scratchpad_bytes
        ));
    }
    let acc = plan.tile_m * plan.tile_n * accel.accum_bytes as u64;
    if acc > accel.accumulator_bytes {
        v.push(format!(
            "accumulator footprint {acc} B exceeds {} B",
            accel.accumulator_bytes
        ));
    }
    v
}

/// Largest square tile, a multiple of W, that fits both local memories.
/// Tiles larger than a dimension are clamped to it.
pub fn square_tiles(op: &OperatorSpec, accel: &AcceleratorConfig, wide_output: bool) -> Result<TilingPlan> {
    let g = Gemm::of(op)
        .ok_or_else(|| Error::Infeasible(format!("{} has no matmul form", op.name)))?;
    let w = accel.pe_width;
    let largest = g.m.max(g.k).max(g.n).max(1);
    let mut best = None;
    let mut t = w;
    loop {
        let (tm, tk, tn) = (t.min(g.m.max(1)), t.min(g.k.max(1)), t.min(g.n.max(1)));
        if !fits(&g, tm, tk, tn, accel) {
            break;
        }
        best = Some(TilingPlan { tile_m: tm, tile_k: tk, tile_n: tn, wide_output, order: None });
        if t >= largest {
            break;
        }
        t += w;
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "{}: a {w}x{w} tile does not fit {} B scratchpad / {} B accumulator",
            op.name, accel.scratchpad_bytes, accel.accumulator_bytes
        ))
    })
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

/// DRAM bytes for one repetition and the loop order that achieves them.
pub fn gemm_dram_traffic(g: &Gemm, plan: &TilingPlan) -> (u64, LoopOrder) {
    let mt = div_ceil(g.m, plan.tile_m);
    let kt = div_ceil(g.k, plan.tile_k);
    let nt = div_ceil(g.n, plan.tile_n);
    // Operand reuse across the middle loop only survives when the reduction
    // fits in one tile; otherwise the innermost k loop evicts it.
    let m_outer = {
        let a = g.a_bytes * if kt == 1 { 1 } else { nt };
        let b = g.b_bytes * if kt == 1 && nt == 1 { 1 } else { mt };
        a + b
    };
    let n_outer = {
        let b = g.b_bytes * if kt == 1 { 1 } else { mt };
        let a = g.a_bytes * if kt == 1 && mt == 1 { 1 } else { nt };
        a + b
    };
    let (inputs, order) = match plan.order {
        Some(LoopOrder::MOuter) => (m_outer, LoopOrder::MOuter),
        Some(LoopOrder::NOuter) => (n_outer, LoopOrder::NOuter),
        None if n_outer < m_outer => (n_outer, LoopOrder::NOuter),
        None => (m_outer, LoopOrder::MOuter),
    };
    (inputs + g.c_bytes, order)
}

/// `(extent, count)` classes of tiles along one dimension.
fn tile_classes(e: u64, t: u64) -> Vec<(u64, u64)> {
    let mut v = vec![(t, e / t)];
    if !e.is_multiple_of(t) {
        v.push((e % t, 1));
    }
    v.retain(|&(_, c)| c > 0);
    v
}

/// Latency of one repetition: per tile, max(compute, memory) summed, with
/// each tile's share of DRAM traffic proportional to its share of MACs.
fn gemm_tile_latency(g: &Gemm, plan: &TilingPlan, dram: u64, accel: &AcceleratorConfig) -> (f64, f64, f64) {
    let w = accel.pe_width;
    let per_mac = dram as f64 / accel.dram_bw / g.macs as f64;
    let (mut lat, mut comp, mut mem) = (0.0, 0.0, 0.0);
    for (tm, cm) in tile_classes(g.m, plan.tile_m) {
        for (tk, ck) in tile_classes(g.k, plan.tile_k) {
            for (tn, cn) in tile_classes(g.n, plan.tile_n) {
                let count = (cm * ck * cn) as f64;
                let c = (tk * div_ceil(tm, w) * div_ceil(tn, w) + w) as f64;
                let m = (tm * tk * tn) as f64 * per_mac;
                lat += count * c.max(m);
                comp += count * c;
                mem += count * m;
            }
        }
    }
    (lat, comp, mem)
}

fn gemm_cost(g: &Gemm, plan: &TilingPlan, accel: &AcceleratorConfig) -> CostReport {
    if g.is_empty() {
        return CostReport::zero();
    }
    let (dram, order) = gemm_dram_traffic(g, plan);
    let (lat, comp, mem) = gemm_tile_latency(g, plan, dram, accel);
    let nt = div_ceil(g.n, plan.tile_n);
    let mt = div_ceil(g.m, plan.tile_m);
    let w = accel.pe_width;
    // Weights are read into the array once per output-column tile; activations
    // stream once per W-row block of every row tile.
    let spad = dram - g.c_bytes
        + g.a_bytes * nt
        + g.b_bytes * div_ceil(plan.tile_m, w) * mt;
    let acc = 2 * g.m * g.n * div_ceil(g.k, w) * accel.accum_bytes as u64;
    let _ = order;
    let e = &accel.energy;
    let energy = g.flops as f64 / 2.0 * e.mac
        + dram as f64 * e.dram
        + spad as f64 * e.spad
        + acc as f64 * e.acc;
    CostReport::new(lat, energy, comp, mem, [dram, spad, acc]).scaled(g.repeat)
}

fn vector_cost(flops: u64, sfu_cycles: f64, dram: u64, spad: u64, accel: &AcceleratorConfig) -> CostReport {
    let mem = dram as f64 / accel.dram_bw;
    let e = &accel.energy;
    let energy = flops as f64 / 2.0 * e.mac + dram as f64 * e.dram + spad as f64 * e.spad;
    CostReport::new(sfu_cycles.max(mem), energy, sfu_cycles, mem, [dram, spad, 0])
}

/// Bytes a standalone SFU operator moves to and from DRAM. Every pass
/// re-streams its inputs; nothing stays resident between operators.
pub fn elementwise_dram_bytes(op: &OperatorSpec) -> u64 {
    match op.kind {
        OpKind::Elementwise { elements, passes, .. } => {
            let inputs: u64 = op.in_precisions.iter().map(|&p| p as u64).sum();
            elements * (passes.max(1) * inputs + op.out_precision as u64) * op.repeat
        }
        _ => 0,
    }
}

fn matvec_step(rows: u64, cols: u64, accel: &AcceleratorConfig) -> u64 {
    let w = accel.pe_width;
    if accel.ideal_matvec {
        div_ceil(rows, w) * div_ceil(cols, w)
    } else {
        div_ceil(rows, w) * cols
    }
}

fn non_gemm_cost(op: &OperatorSpec, accel: &AcceleratorConfig) -> CostReport {
    let prec = |i: usize| op.in_precisions.get(i).copied().unwrap_or(1) as u64;
    let out = op.out_precision as u64;
    let w = accel.pe_width;
    let e = &accel.energy;
    let per_rep = match op.kind {
        OpKind::Elementwise { elements, passes, .. } => {
            let sfu = (passes.max(1) * div_ceil(elements, w)) as f64 * accel.sfu_vector_latency;
            let dram = elementwise_dram_bytes(op) / op.repeat.max(1);
            vector_cost(flops(op) / op.repeat.max(1), sfu, dram, dram, accel)
        }
        OpKind::Pool { .. } => {
            let f = flops(op) / op.repeat.max(1);
            let dram = crate::workload::mops(op) / op.repeat.max(1);
            let sfu = div_ceil(f, w) as f64 * accel.sfu_vector_latency;
            vector_cost(f, sfu, dram, dram, accel)
        }
        OpKind::MatvecSeries { rows, cols, iterations } => {
            if iterations == 0 {
                return CostReport::zero();
            }
            let bytes = rows * cols * prec(0) + cols * prec(1) + rows * out;
            let c = (matvec_step(rows, cols, accel) + w) as f64;
            let m = bytes as f64 / accel.dram_bw;
            let it = iterations as f64;
            let energy = (rows * cols * iterations) as f64 * e.mac
                + (bytes * iterations) as f64 * (e.dram + e.spad)
                + (rows * cols * iterations * accel.accum_bytes as u64) as f64 * e.acc;
            CostReport::new(
                it * c.max(m),
                energy,
                it * c,
                it * m,
                [bytes * iterations, bytes * iterations, rows * div_ceil(cols, w) * iterations * accel.accum_bytes as u64],
            )
        }
        OpKind::KvCacheMatvec { head_dim, steps, stage } => {
            let (mut lat, mut comp, mut mem, mut dram) = (0.0, 0.0, 0.0, 0u64);
            for i in 1..=steps {
                let (rows, cols, bytes) = match stage {
                    AttentionStage::Score => (i, head_dim, head_dim * prec(0) + i * head_dim * prec(1) + i * out),
                    AttentionStage::Context => (head_dim, i, i * prec(0) + i * head_dim * prec(1) + head_dim * out),
                };
                let c = (matvec_step(rows, cols, accel) + w) as f64;
                let m = bytes as f64 / accel.dram_bw;
                lat += c.max(m);
                comp += c;
                mem += m;
                dram += bytes;
            }
            let macs = head_dim * steps * (steps + 1) / 2;
            let energy = macs as f64 * e.mac + dram as f64 * (e.dram + e.spad);
            CostReport::new(lat, energy, comp, mem, [dram, dram, 0])
        }
        OpKind::Matmul { .. } | OpKind::Conv { .. } => unreachable!("handled as gemm"),
    };
    per_rep.scaled(op.repeat)
}

/// Latency, energy and traffic of `op` executed under `plan`. Non-GEMM
/// operators ignore the plan.
pub fn op_latency(op: &OperatorSpec, plan: &TilingPlan, accel: &AcceleratorConfig) -> Result<CostReport> {
    match Gemm::of(op) {
        Some(g) => {
            let v = plan_violations(op, plan, accel);
            if !v.is_empty() {
                return Err(Error::Infeasible(format!("{}: {}", op.name, v.join("; "))));
            }
            Ok(gemm_cost(&g, plan, accel))
        }
        None => Ok(non_gemm_cost(op, accel)),
    }
}

pub fn op_energy(op: &OperatorSpec, plan: &TilingPlan, accel: &AcceleratorConfig) -> Result<f64> {
    Ok(op_latency(op, plan, accel)?.energy)
}

/// FLOPs per byte of DRAM traffic under `plan`.
pub fn nonideal_intensity(op: &OperatorSpec, plan: &TilingPlan, accel: &AcceleratorConfig) -> Result<f64> {
    let r = op_latency(op, plan, accel)?;
    intensity(flops(op), r.dram_bytes())
}

/// How tiles are chosen for GEMM-shaped operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tiler {
    /// Largest square tile.
    Square,
    /// Largest tile volume, preferring larger K, then M, then N on ties.
    Greedy,
    /// Minimum latency over a grid of rectangular tiles.
    Optimal,
}

/// Extra restrictions on a tile search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileConstraint {
    pub fixed_m: Option<u64>,
    pub fixed_n: Option<u64>,
    pub order: Option<LoopOrder>,
}

/// Tile sizes considered along a dimension: multiples of W (clamped to the
/// extent) and every size below W.
fn dense_candidates(e: u64, w: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (1..w.min(e)).collect();
    v.extend((1..=div_ceil(e, w)).map(|j| (j * w).min(e)));
    v.dedup();
    v
}

/// Sizes that split a dimension into `j` near-equal W-aligned pieces.
fn balanced_candidates(e: u64, w: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (1..=div_ceil(e, w))
        .map(|j| (div_ceil(div_ceil(e, j), w) * w).min(e))
        .collect();
    let mut small = 1;
    while small < w.min(e) {
        v.push(small);
        small *= 2;
    }
    v.sort_unstable();
    v.dedup();
    v
}

fn max_tk(g: &Gemm, tm: u64, tn: u64, accel: &AcceleratorConfig, ks: &[u64]) -> Option<u64> {
    ks.iter().rev().copied().find(|&tk| fits(g, tm, tk, tn, accel))
}

/// Picks a tiling for `op` with the given strategy and constraints.
pub fn plan_tiles(
    op: &OperatorSpec,
    accel: &AcceleratorConfig,
    tiler: Tiler,
    constraint: TileConstraint,
) -> Result<TilingPlan> {
    let wide = is_wide(op);
    let g = Gemm::of(op)
        .ok_or_else(|| Error::Infeasible(format!("{} has no matmul form", op.name)))?;
    if tiler == Tiler::Square && constraint == TileConstraint::default() {
        return square_tiles(op, accel, wide);
    }
    let w = accel.pe_width;
    let (m, k, n) = (g.m.max(1), g.k.max(1), g.n.max(1));
    let cands = |e: u64, fixed: Option<u64>| match (fixed, tiler) {
        (Some(f), _) => vec![f.clamp(1, e)],
        (None, Tiler::Optimal) => balanced_candidates(e, w),
        (None, _) => dense_candidates(e, w),
    };
    let (ms, ns) = (cands(m, constraint.fixed_m), cands(n, constraint.fixed_n));
    let ks = match tiler {
        Tiler::Optimal => balanced_candidates(k, w),
        _ => dense_candidates(k, w),
    };
    let mut best: Option<(TilingPlan, (f64, u64, u64, u64))> = None;
    for &tm in &ms {
        for &tn in &ns {
            let Some(tk) = max_tk(&g, tm, tn, accel, &ks) else { continue };
            let plan = TilingPlan { tile_m: tm, tile_k: tk, tile_n: tn, wide_output: wide, order: constraint.order };
            // Lower keys win.
            let key = match tiler {
                Tiler::Optimal => (gemm_cost(&g, &plan, accel).latency, u64::MAX - tk, u64::MAX - tm, u64::MAX - tn),
                _ => (-((tm * tk * tn) as f64), u64::MAX - tk, u64::MAX - tm, u64::MAX - tn),
            };
            if best.as_ref().is_none_or(|(_, b)| key.partial_cmp(b) == Some(std::cmp::Ordering::Less)) {
                best = Some((plan, key));
            }
        }
    }
    best.map(|(p, _)| p).ok_or_else(|| {
        Error::Infeasible(format!(
            "{}: no tile fits {} B scratchpad / {} B accumulator",
            op.name, accel.scratchpad_bytes, accel.accumulator_bytes
        ))
    })
}

/// Cost of one operator with tiles picked by `tiler`.
pub fn op_cost(op: &OperatorSpec, accel: &AcceleratorConfig, tiler: Tiler) -> Result<CostReport> {
    match Gemm::of(op) {
        Some(g) if g.is_empty() => Ok(CostReport::zero()),
        Some(_) => {
            let plan = plan_tiles(op, accel, tiler, TileConstraint::default())?;
            op_latency(op, &plan, accel)
        }
        None => Ok(non_gemm_cost(op, accel)),
    }
}

/// Operators of `cfg` with wide partial sums ahead of nonlinear operators.
pub fn hardware_ops(cfg: &ModelConfig) -> Result<Vec<OperatorSpec>> {
    model_ops(cfg, PrecisionModel::WideBeforeNonlinear)
}

/// Per-category latency with every operator round-tripping through DRAM.
pub fn latency_breakdown(cfg: &ModelConfig, accel: &AcceleratorConfig) -> Result<BTreeMap<Category, f64>> {
    accel.validate()?;
    let mut out = BTreeMap::new();
    for op in hardware_ops(cfg)? {
        let r = op_cost(&op, accel, Tiler::Square)?;
        *out.entry(Category::of(&op)).or_insert(0.0) += r.latency;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonIdealRow {
    pub name: String,
    pub flops: u64,
    pub ideal_mops: u64,
    pub dram_bytes: u64,
    pub ideal_intensity: Option<f64>,
    pub nonideal_intensity: Option<f64>,
}

/// Ideal and DRAM-level intensity of every operator of one layer of `cfg`
/// (all layers are identical), plus the totals row.
pub fn nonideal_profile(cfg: &ModelConfig, accel: &AcceleratorConfig) -> Result<(Vec<NonIdealRow>, NonIdealRow)> {
    accel.validate()?;
    let mut one_layer = cfg.clone();
    if cfg.mode != crate::workload::Mode::Resnet50 {
        one_layer.num_layers = 1;
    }
    let ideal = model_ops(&one_layer, PrecisionModel::Ideal)?;
    let real = hardware_ops(&one_layer)?;
    let mut rows = Vec::with_capacity(real.len());
    for (i, r) in ideal.iter().zip(&real) {
        let cost = op_cost(r, accel, Tiler::Square)?;
        let f = flops(r);
        let im = crate::workload::mops(i);
        rows.push(NonIdealRow {
            name: r.name.clone(),
            flops: f,
            ideal_mops: im,
            dram_bytes: cost.dram_bytes(),
            ideal_intensity: intensity(f, im).ok(),
            nonideal_intensity: intensity(f, cost.dram_bytes()).ok(),
        });
    }
    let f: u64 = rows.iter().map(|r| r.flops).sum();
    let im: u64 = rows.iter().map(|r| r.ideal_mops).sum();
    let d: u64 = rows.iter().map(|r| r.dram_bytes).sum();
    let total = NonIdealRow {
        name: "total".into(),
        flops: f,
        ideal_mops: im,
        dram_bytes: d,
        ideal_intensity: intensity(f, im).ok(),
        nonideal_intensity: intensity(f, d).ok(),
    };
    Ok((rows, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub scratchpad_bytes: u64,
    pub accumulator_bytes: u64,
    /// `None` when some matmul has no feasible tiling.
    pub matmul_latency: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSweep {
    pub results: Vec<SplitResult>,
    pub best: Option<usize>,
}

/// Total matmul latency of `cfg` for each (scratchpad, accumulator) split,
/// with tiles picked by the volume-maximizing heuristic.
pub fn memory_split_sweep(
    cfg: &ModelConfig,
    base: &AcceleratorConfig,
    total_sram: u64,
    splits: &[(u64, u64)],
) -> Result<SplitSweep> {
    base.validate()?;
    let matmuls: Vec<OperatorSpec> = hardware_ops(cfg)?
        .into_iter()
        .filter(|o| matches!(o.kind, OpKind::Matmul { .. }) && o.class != OperatorClass::Classifier)
        .collect();
    let mut unique: Vec<(OperatorSpec, u64)> = Vec::new();
    for op in matmuls {
        let mut key = op.clone();
        key.name.clear();
        key.repeat = 1;
        match unique.iter_mut().find(|(k, _)| *k == key) {
            Some((_, reps)) => *reps += op.repeat,
            None => unique.push((key, op.repeat)),
        }
    }
    use rayon::prelude::*;
    let results: Vec<SplitResult> = splits
        .par_iter()
        .map(|&(s, a)| {
            let fail = |e: String| SplitResult {
                scratchpad_bytes: s,
                accumulator_bytes: a,
                matmul_latency: None,
                error: Some(e),
            };
            if s + a != total_sram {
                return fail(format!("split {s} + {a} does not sum to {total_sram}"));
            }
            let accel = base.clone().with_memory(s, a);
            if let Err(e) = accel.validate() {
                return fail(e.to_string());
            }
            let mut total = 0.0;
            for (op, reps) in &unique {
                match op_cost(op, &accel, Tiler::Greedy) {
                    Ok(r) => total += r.latency * *reps as f64,
                    Err(e) => return fail(e.to_string()),
                }
            }
            SplitResult { scratchpad_bytes: s, accumulator_bytes: a, matmul_latency: Some(total), error: None }
        })
        .collect();
    let best = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.matmul_latency.map(|l| (i, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(SplitSweep { results, best })
}
