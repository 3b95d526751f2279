//! Two-level mappings of matmul and convolution loop nests: per-dimension
//! spatial, local and DRAM factors plus a loop order at each level.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{AcceleratorConfig, CostReport, MemLevel};
use crate::rng;
use crate::workload::{OpKind, OperatorSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NestKind {
    /// Dims `M, K, N`.
    Matmul,
    /// Dims `out_ch, in_ch, kernel_h, kernel_w, out_h, out_w`.
    Conv { stride: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopNest {
    pub kind: NestKind,
    pub dims: Vec<(String, u64)>,
    pub weight_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

const MATMUL_DIMS: [&str; 3] = ["M", "K", "N"];
const CONV_DIMS: [&str; 6] = ["out_ch", "in_ch", "kernel_h", "kernel_w", "out_h", "out_w"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tensor {
    Weight,
    Input,
    Output,
}

const TENSORS: [Tensor; 3] = [Tensor::Weight, Tensor::Input, Tensor::Output];

impl LoopNest {
    pub fn matmul(m: u64, k: u64, n: u64) -> Self {
        Self {
            kind: NestKind::Matmul,
            dims: MATMUL_DIMS.iter().zip([m, k, n]).map(|(s, e)| (s.to_string(), e)).collect(),
            weight_bytes: 1,
            input_bytes: 1,
            output_bytes: 1,
        }
    }

    pub fn conv(out_ch: u64, in_ch: u64, kernel: u64, out_hw: u64, stride: u64) -> Self {
        Self {
            kind: NestKind::Conv { stride },
            dims: CONV_DIMS
                .iter()
                .zip([out_ch, in_ch, kernel, kernel, out_hw, out_hw])
                .map(|(s, e)| (s.to_string(), e))
                .collect(),
            weight_bytes: 1,
            input_bytes: 1,
            output_bytes: 1,
        }
    }

    pub fn from_op(op: &OperatorSpec) -> Result<Self> {
        let nest = match op.kind {
            OpKind::Matmul { m, k, n, .. } => Self::matmul(m, k, n),
            OpKind::Conv { kernel, in_ch, out_ch, out_h, out_w, stride } => {
                let mut c = Self::conv(out_ch, in_ch, kernel, out_h, stride);
                c.dims[5].1 = out_w;
                c
            }
            _ => return Err(Error::InvalidConfig(format!("{} has no loop nest", op.name))),
        };
        let p = |i: usize| op.in_precisions.get(i).copied().unwrap_or(1) as u64;
        Ok(Self { weight_bytes: p(0), input_bytes: p(1), output_bytes: op.out_precision as u64, ..nest })
    }

    /// Built-in nests addressed by name.
    pub fn named(name: &str) -> Result<Self> {
        let nest = match name {
            "bert.proj" => Self::matmul(768, 768, 512),
            "bert.qk" => Self::matmul(512, 64, 512),
            "bert.sv" => Self::matmul(64, 512, 512),
            "bert.ffn1" => Self::matmul(3072, 768, 512),
            "bert.ffn2" => Self::matmul(768, 3072, 512),
            "resnet.conv1" => Self::conv(64, 3, 7, 112, 2),
            "resnet.conv2_3x3" => Self::conv(64, 64, 3, 56, 1),
            "resnet.conv5_3x3" => Self::conv(512, 512, 3, 7, 1),
            "matched.mha" => Self::matmul(240, 240, 512),
            "matched.ffn" => Self::matmul(480, 120, 512),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown nest {other:?}; known: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(nest)
    }

    pub const NAMES: [&'static str; 10] = [
        "bert.proj",
        "bert.qk",
        "bert.sv",
        "bert.ffn1",
        "bert.ffn2",
        "resnet.conv1",
        "resnet.conv2_3x3",
        "resnet.conv5_3x3",
        "matched.mha",
        "matched.ffn",
    ];

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn extents(&self) -> Vec<u64> {
        self.dims.iter().map(|d| d.1).collect()
    }

    /// Dimensions mapped to PE rows and columns.
    pub fn spatial_dims(&self) -> [usize; 2] {
        match self.kind {
            NestKind::Matmul => [0, 2],
            NestKind::Conv { .. } => [0, 1],
        }
    }

    pub fn macs(&self) -> u64 {
        self.dims.iter().map(|d| d.1).product()
    }

    fn relevant(&self, t: Tensor, d: usize) -> bool {
        match (self.kind, t) {
            (NestKind::Matmul, Tensor::Weight) => d != 2,
            (NestKind::Matmul, Tensor::Input) => d != 0,
            (NestKind::Matmul, Tensor::Output) => d != 1,
            (NestKind::Conv { .. }, Tensor::Weight) => d < 4,
            (NestKind::Conv { .. }, Tensor::Input) => d != 0,
            (NestKind::Conv { .. }, Tensor::Output) => matches!(d, 0 | 4 | 5),
        }
    }

    fn precision(&self, t: Tensor) -> u64 {
        match t {
            Tensor::Weight => self.weight_bytes,
            Tensor::Input => self.input_bytes,
            Tensor::Output => self.output_bytes,
        }
    }

    /// Bytes of tensor `t` for a tile of per-dimension sizes `s`.
    fn tile_bytes(&self, t: Tensor, s: &[u64]) -> u64 {
        let elems = match (self.kind, t) {
            (NestKind::Matmul, Tensor::Weight) => s[0] * s[1],
            (NestKind::Matmul, Tensor::Input) => s[1] * s[2],
            (NestKind::Matmul, Tensor::Output) => s[0] * s[2],
            (NestKind::Conv { .. }, Tensor::Weight) => s[0] * s[1] * s[2] * s[3],
            (NestKind::Conv { stride }, Tensor::Input) => {
                let h = (s[4].max(1) - 1) * stride + s[2];
                let w = (s[5].max(1) - 1) * stride + s[3];
                s[1] * h * w
            }
            (NestKind::Conv { .. }, Tensor::Output) => s[0] * s[4] * s[5],
        };
        elems * self.precision(t)
    }

    /// Bytes moved when every tensor crosses DRAM exactly once.
    pub fn ideal_bytes(&self) -> u64 {
        let e = self.extents();
        TENSORS.iter().map(|&t| self.tile_bytes(t, &e)).sum()
    }

    fn check(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.iter().any(|d| d.1 == 0) {
            return Err(Error::InvalidConfig("loop nest extents must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mapping {
    /// Factor per dim executed in parallel across the PE array.
    pub spatial: Vec<u64>,
    pub local: Vec<u64>,
    pub dram: Vec<u64>,
    /// Outer-to-inner loop order at each level.
    pub local_perm: Vec<usize>,
    pub dram_perm: Vec<usize>,
}

impl Mapping {
    /// Canonical encoding used for deterministic tie-breaks.
    pub fn encode(&self) -> Vec<u64> {
        let mut v = Vec::with_capacity(self.spatial.len() * 5);
        v.extend(&self.spatial);
        v.extend(&self.dram);
        v.extend(&self.local);
        v.extend(self.dram_perm.iter().map(|&i| i as u64));
        v.extend(self.local_perm.iter().map(|&i| i as u64));
        v
    }

    fn resident(&self, d: usize, e: u64) -> u64 {
        (self.local[d] * self.spatial[d]).min(e)
    }
}

/// Dimensions whose whole extent must stay resident on chip.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingConstraints {
    pub full_dims: Vec<usize>,
}

fn is_perm(p: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Every violated mapping invariant; empty when valid.
pub fn validate(m: &Mapping, nest: &LoopNest, accel: &AcceleratorConfig) -> Vec<String> {
    let n = nest.rank();
    let mut v = Vec::new();
    if [&m.spatial, &m.local, &m.dram].iter().any(|f| f.len() != n) {
        v.push(format!("factor lists must have {n} entries"));
        return v;
    }
    let spatial_dims = nest.spatial_dims();
    for (d, (name, e)) in nest.dims.iter().enumerate() {
        let (s, l, o) = (m.spatial[d], m.local[d], m.dram[d]);
        if s == 0 || l == 0 || o == 0 {
            v.push(format!("zero factor on {name}"));
            continue;
        }
        if s > accel.pe_width {
            v.push(format!("spatial factor {s} on {name} exceeds array width {}", accel.pe_width));
        }
        if s > 1 && !spatial_dims.contains(&d) {
            v.push(format!("{name} is not a spatial dimension"));
        }
        let covered = s * l * o;
        if covered < *e {
            v.push(format!("under-covered dim {name}: {covered} < {e}"));
        } else if covered != e.div_ceil(s) * s {
            v.push(format!("over-padded dim {name}: {covered} for extent {e}"));
        }
    }
    if !is_perm(&m.local_perm, n) {
        v.push("local loop order is not a permutation".into());
    }
    if !is_perm(&m.dram_perm, n) {
        v.push("dram loop order is not a permutation".into());
    }
    if v.is_empty() {
        let t: Vec<u64> = nest.dims.iter().enumerate().map(|(d, x)| m.resident(d, x.1)).collect();
        let spad = nest.tile_bytes(Tensor::Weight, &t) + nest.tile_bytes(Tensor::Input, &t);
        if spad > accel.scratchpad_bytes / 2 {
            v.push(format!(
                "scratchpad capacity: {spad} B exceeds half of {} B",
                accel.scratchpad_bytes
            ));
        }
        let acc = nest.tile_bytes(Tensor::Output, &t) / nest.output_bytes.max(1) * accel.accum_bytes as u64;
        if acc > accel.accumulator_bytes {
            v.push(format!(
                "accumulator capacity: {acc} B exceeds {} B",
                accel.accumulator_bytes
            ));
        }
    }
    v
}

pub fn validate_constrained(
    m: &Mapping,
    nest: &LoopNest,
    accel: &AcceleratorConfig,
    c: &MappingConstraints,
) -> Vec<String> {
    let mut v = validate(m, nest, accel);
    for &d in &c.full_dims {
        match m.dram.get(d) {
            Some(&f) if f > 1 => v.push(format!("{} must be resident in full", nest.dims[d].0)),
            Some(_) => {}
            None => v.push(format!("constraint names dimension {d} outside the nest")),
        }
    }
    v
}

/// Times a tile of tensor `t` is brought in by a loop level with `factors`
/// in `perm` order, and the number of distinct tiles.
fn fetch_counts(nest: &LoopNest, t: Tensor, perm: &[usize], factors: &[u64]) -> (u64, u64) {
    let distinct = (0..nest.rank()).filter(|&d| nest.relevant(t, d)).map(|d| factors[d]).product();
    let innermost = perm.iter().rposition(|&d| factors[d] > 1 && nest.relevant(t, d));
    let fetches = match innermost {
        Some(j) => perm[..=j].iter().map(|&d| factors[d]).product(),
        None => 1,
    };
    (fetches, distinct)
}

/// Traffic by tensor and level for a valid mapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficBreakdown {
    pub weight_dram: u64,
    pub input_dram: u64,
    pub output_writes: u64,
    pub output_reads: u64,
    pub scratchpad: u64,
    pub accumulator: u64,
}

impl TrafficBreakdown {
    pub fn dram(&self) -> u64 {
        self.weight_dram + self.input_dram + self.output_writes + self.output_reads
    }
}

pub fn traffic(m: &Mapping, nest: &LoopNest, accel: &AcceleratorConfig) -> TrafficBreakdown {
    let ext = nest.extents();
    let tile: Vec<u64> = ext.iter().enumerate().map(|(d, &e)| m.resident(d, e)).collect();
    let slice: Vec<u64> = ext.iter().enumerate().map(|(d, &e)| m.spatial[d].min(e)).collect();
    let dram_iters: u64 = m.dram.iter().product();
    let mut out = TrafficBreakdown::default();
    for t in TENSORS {
        let (f, distinct) = fetch_counts(nest, t, &m.dram_perm, &m.dram);
        let bytes = nest.tile_bytes(t, &tile);
        let (lf, _) = fetch_counts(nest, t, &m.local_perm, &m.local);
        let local = dram_iters * lf * nest.tile_bytes(t, &slice);
        match t {
            Tensor::Weight => {
                out.weight_dram = f * bytes;
                out.scratchpad += out.weight_dram + local;
            }
            Tensor::Input => {
                out.input_dram = f * bytes;
                out.scratchpad += out.input_dram + local;
            }
            Tensor::Output => {
                // Revisiting an evicted output tile reads its partial sums back.
                out.output_writes = f * bytes;
                out.output_reads = (f - distinct) * bytes;
                out.accumulator = 2 * local / nest.output_bytes.max(1) * accel.accum_bytes as u64;
            }
        }
    }
    out
}

fn cost_unchecked(m: &Mapping, nest: &LoopNest, accel: &AcceleratorConfig) -> CostReport {
    let t = traffic(m, nest, accel);
    let dram_iters: u64 = m.dram.iter().product();
    let local_steps: u64 = m.local.iter().product();
    let compute_tile = (local_steps + accel.pe_width) as f64;
    let memory_tile = t.dram() as f64 / dram_iters as f64 / accel.dram_bw;
    let it = dram_iters as f64;
    let latency = it * compute_tile.max(memory_tile);
    let padded_macs: u64 = (0..nest.rank()).map(|d| m.spatial[d] * m.local[d] * m.dram[d]).product();
    let e = &accel.energy;
    let energy = padded_macs as f64 * e.mac
        + t.dram() as f64 * e.dram
        + t.scratchpad as f64 * e.spad
        + t.accumulator as f64 * e.acc;
    let traffic = [
        (MemLevel::Dram, t.dram()),
        (MemLevel::Scratchpad, t.scratchpad),
        (MemLevel::Accumulator, t.accumulator),
    ]
    .into_iter()
    .collect();
    CostReport {
        latency,
        energy,
        edp: latency * energy,
        traffic,
        compute_bound: compute_tile >= memory_tile,
        compute_cycles: it * compute_tile,
        memory_cycles: it * memory_tile,
    }
}

pub fn evaluate(m: &Mapping, nest: &LoopNest, accel: &AcceleratorConfig) -> Result<CostReport> {
    let v = validate(m, nest, accel);
    if !v.is_empty() {
        return Err(Error::InvalidMapping(v));
    }
    Ok(cost_unchecked(m, nest, accel))
}

fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn spatial_choices(nest: &LoopNest, d: usize, w: u64) -> u64 {
    if nest.spatial_dims().contains(&d) {
        w.min(nest.dims[d].1)
    } else {
        1
    }
}

const MAX_ATTEMPTS: usize = 100_000;

/// Uniformly samples spatial factors, divisor splits of the padded extents
/// and loop orders, rejecting until the mapping fits. Deterministic per seed.
pub fn random_mapping(nest: &LoopNest, accel: &AcceleratorConfig, seed: u64) -> Result<Mapping> {
    nest.check()?;
    accel.validate()?;
    let mut rng = rng::stream(seed, &[]);
    sample_with(nest, accel, &mut rng)
}

fn sample_with(nest: &LoopNest, accel: &AcceleratorConfig, rng: &mut impl Rng) -> Result<Mapping> {
    let n = nest.rank();
    for _ in 0..MAX_ATTEMPTS {
        let mut m = Mapping {
            spatial: vec![1; n],
            local: vec![1; n],
            dram: vec![1; n],
            local_perm: (0..n).collect(),
            dram_perm: (0..n).collect(),
        };
        for (d, &(_, e)) in nest.dims.iter().enumerate() {
            let s = rng.random_range(1..=spatial_choices(nest, d, accel.pe_width));
            let divs = divisors(e.div_ceil(s));
            let l = divs[rng.random_range(0..divs.len())];
            m.spatial[d] = s;
            m.local[d] = l;
            m.dram[d] = e.div_ceil(s) / l;
        }
        m.local_perm.shuffle(rng);
        m.dram_perm.shuffle(rng);
        if validate(&m, nest, accel).is_empty() {
            return Ok(m);
        }
    }
    Err(Error::Infeasible(format!(
        "no valid mapping found in {MAX_ATTEMPTS} draws; local memories too small for this nest"
    )))
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Number of mappings (valid or not) the enumerator would visit.
pub fn mapspace_size(nest: &LoopNest, w: u64) -> u128 {
    let tilings: u128 = nest
        .dims
        .iter()
        .enumerate()
        .map(|(d, &(_, e))| {
            (1..=spatial_choices(nest, d, w))
                .map(|s| divisors(e.div_ceil(s)).len() as u128)
                .sum::<u128>()
        })
        .product();
    let p = factorial(nest.rank());
    tilings * p * p
}

pub const EXHAUSTIVE_LIMIT: u128 = 10_000_000;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    heap(n, &mut p, &mut out);
    out.sort();
    out
}

fn better(a: &(f64, Vec<u64>), b: &(f64, Vec<u64>)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => a.1 < b.1,
        std::cmp::Ordering::Greater => false,
    }
}

/// Minimum-EDP mapping over the whole mapspace, ties broken by encoding.
pub fn exhaustive_best(nest: &LoopNest, accel: &AcceleratorConfig) -> Result<(Mapping, CostReport)> {
    nest.check()?;
    accel.validate()?;
    let size = mapspace_size(nest, accel.pe_width);
    if size > EXHAUSTIVE_LIMIT {
        return Err(Error::MapspaceTooLarge { size, limit: EXHAUSTIVE_LIMIT });
    }
    let n = nest.rank();
    let mut per_dim: Vec<Vec<(u64, u64, u64)>> = Vec::with_capacity(n);
    for (d, &(_, e)) in nest.dims.iter().enumerate() {
        let mut opts = Vec::new();
        for s in 1..=spatial_choices(nest, d, accel.pe_width) {
            let padded = e.div_ceil(s);
            for l in divisors(padded) {
                opts.push((s, l, padded / l));
            }
        }
        per_dim.push(opts);
    }
    let mut tilings: Vec<Vec<(u64, u64, u64)>> = vec![Vec::new()];
    for opts in &per_dim {
        tilings = tilings
            .into_iter()
            .flat_map(|t| {
                opts.iter().map(move |o| {
                    let mut t = t.clone();
                    t.push(*o);
                    t
                })
            })
            .collect();
    }
    let perms = permutations(n);
    let best = tilings
        .par_iter()
        .filter_map(|t| {
            let mut m = Mapping {
                spatial: t.iter().map(|x| x.0).collect(),
                local: t.iter().map(|x| x.1).collect(),
                dram: t.iter().map(|x| x.2).collect(),
                local_perm: perms[0].clone(),
                dram_perm: perms[0].clone(),
            };
            if !validate(&m, nest, accel).is_empty() {
                return None;
            }
            let mut best: Option<((f64, Vec<u64>), Mapping)> = None;
            for dp in &perms {
                for lp in &perms {
                    m.dram_perm.clone_from(dp);
                    m.local_perm.clone_from(lp);
                    let key = (cost_unchecked(&m, nest, accel).edp, m.encode());
                    if best.as_ref().is_none_or(|(b, _)| better(&key, b)) {
                        best = Some((key, m.clone()));
                    }
                }
            }
            best
        })
        .reduce_with(|a, b| if better(&b.0, &a.0) { b } else { a });
    match best {
        Some((_, m)) => {
            let r = cost_unchecked(&m, nest, accel);
            Ok((m, r))
        }
        None => Err(Error::Infeasible("no valid mapping exists for this nest".into())),
    }
}

/// Draws `n` mappings, sample `i` from its own stream `(seed, i)`.
pub fn sample_mappings(
    nest: &LoopNest,
    accel: &AcceleratorConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<(Mapping, CostReport)>> {
    nest.check()?;
    accel.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[i as u64]);
            let m = sample_with(nest, accel, &mut r)?;
            let c = cost_unchecked(&m, nest, accel);
            Ok((m, c))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapspaceStats {
    pub n_samples: usize,
    pub min_edp: f64,
    pub max_relative_edp: f64,
    pub p10: f64,
    pub median: f64,
    /// Relative EDP (edp / min) of every sample in draw order.
    #[serde(skip)]
    pub relative_edps: Vec<f64>,
    /// The same values sorted ascending.
    #[serde(skip)]
    pub cdf: Vec<f64>,
}

impl MapspaceStats {
    pub fn from_edps(edps: &[f64]) -> Result<Self> {
        if edps.is_empty() {
            return Err(Error::InvalidConfig("statistics need at least one sample".into()));
        }
        let min = edps.iter().copied().fold(f64::INFINITY, f64::min);
        let relative: Vec<f64> = edps.iter().map(|&e| if min > 0.0 { e / min } else { 1.0 }).collect();
        let mut cdf = relative.clone();
        cdf.sort_by(f64::total_cmp);
        let n = cdf.len();
        Ok(Self {
            n_samples: n,
            min_edp: min,
            max_relative_edp: cdf[n - 1],
            p10: percentile(&cdf, 0.10),
            median: percentile(&cdf, 0.50),
            relative_edps: relative,
            cdf,
        })
    }

    /// Fraction of samples with relative EDP strictly below `k`.
    pub fn frac_within(&self, k: f64) -> f64 {
        if k.is_infinite() && k > 0.0 {
            return 1.0;
        }
        self.cdf.partition_point(|&x| x < k) as f64 / self.n_samples as f64
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn sample_stats(nest: &LoopNest, accel: &AcceleratorConfig, n: usize, seed: u64) -> Result<MapspaceStats> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let samples = sample_mappings(nest, accel, n, seed)?;
    let edps: Vec<f64> = samples.iter().map(|(_, c)| c.edp).collect();
    MapspaceStats::from_edps(&edps)
}

/// Hidden sizes whose query projection (`d x d x l`) and FFN projection
/// (`ratio*d' x d' x l`) match the MACs of `conv`.
pub fn matched_mac_dims(conv: &OperatorSpec, l: u64, ffn_ratio: f64) -> Result<(u64, u64)> {
    let (m, k, n) = conv
        .gemm_dims()
        .ok_or_else(|| Error::InvalidConfig(format!("{} has no MAC count", conv.name)))?;
    if l == 0 || ffn_ratio <= 0.0 {
        return Err(Error::InvalidConfig("sequence length and ratio must be positive".into()));
    }
    let macs = (m * k * n) as f64;
    let d = (macs / l as f64).sqrt().round() as u64;
    let d_ffn = (macs / (ffn_ratio * l as f64)).sqrt().round() as u64;
    Ok((d, d_ffn))
}
