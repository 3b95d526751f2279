//! Evolutionary hardware-aware search over encoder architectures with
//! per-layer head counts and FFN widths, scored by a quality proxy and EDP.

use dashmap::DashMap;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{op_cost, AcceleratorConfig, CostReport, Tiler};
use crate::rng;
use crate::workload::{encoder_layers, LayerDims, Mode, ModelConfig, OperatorSpec, PrecisionModel};

/// Sequence length used for every cost evaluation.
pub const SEARCH_SEQ_LEN: u64 = 512;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layer_counts: Vec<u64>,
    pub heads_per_layer: Vec<u64>,
    pub model_dims: Vec<u64>,
    pub ffn_dims_per_layer: Vec<u64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            layer_counts: vec![3, 4, 5, 6],
            heads_per_layer: vec![4, 6, 8, 10, 12],
            model_dims: (384..=768).step_by(96).collect(),
            ffn_dims_per_layer: (768..=3072).step_by(128).collect(),
        }
    }
}

impl SearchSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, set) in [
            ("layer_counts", &self.layer_counts),
            ("heads_per_layer", &self.heads_per_layer),
            ("model_dims", &self.model_dims),
            ("ffn_dims_per_layer", &self.ffn_dims_per_layer),
        ] {
            if set.is_empty() || set.contains(&0) {
                return Err(Error::InvalidConfig(format!("{label} must be a nonempty set of positive values")));
            }
        }
        let max_d = *self.model_dims.iter().max().expect("nonempty");
        if self.heads_per_layer.iter().all(|&h| h > max_d) {
            return Err(Error::InvalidConfig("no head count fits any model dimension".into()));
        }
        Ok(())
    }

    /// The largest architecture in the space.
    pub fn baseline(&self) -> Candidate {
        let n = *self.layer_counts.iter().max().expect("nonempty");
        let d = *self.model_dims.iter().max().expect("nonempty");
        let h = *self.heads_per_layer.iter().filter(|&&h| h <= d).max().expect("validated");
        let f = *self.ffn_dims_per_layer.iter().max().expect("nonempty");
        Candidate::new(n, d, vec![h; n as usize], vec![f; n as usize])
    }

    pub fn contains(&self, c: &Candidate) -> bool {
        self.layer_counts.contains(&c.layers)
            && self.model_dims.contains(&c.d)
            && c.heads.len() == c.layers as usize
            && c.ffn.len() == c.layers as usize
            && c.heads.iter().all(|h| self.heads_per_layer.contains(h) && *h <= c.d)
            && c.ffn.iter().all(|f| self.ffn_dims_per_layer.contains(f))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(alias = "N")]
    pub layers: u64,
    pub d: u64,
    #[serde(alias = "h")]
    pub heads: Vec<u64>,
    #[serde(alias = "d_FFN", alias = "d_ffn")]
    pub ffn: Vec<u64>,
    #[serde(default)]
    pub quality: Option<f64>,
    #[serde(default)]
    pub edp: Option<f64>,
    #[serde(default)]
    pub latency: Option<f64>,
    #[serde(default)]
    pub energy: Option<f64>,
}

impl Candidate {
    pub fn new(layers: u64, d: u64, heads: Vec<u64>, ffn: Vec<u64>) -> Self {
        Self { layers, d, heads, ffn, quality: None, edp: None, latency: None, energy: None }
    }

    pub fn encode(&self) -> Vec<u64> {
        let mut v = vec![self.layers, self.d];
        v.extend(&self.heads);
        v.extend(&self.ffn);
        v
    }

    fn layer_dims(&self) -> Vec<LayerDims> {
        self.heads
            .iter()
            .zip(&self.ffn)
            .map(|(&heads, &ffn_dim)| LayerDims { heads, ffn_dim })
            .collect()
    }

    /// Encoder operators of this candidate at `seq_len`.
    pub fn ops(&self, seq_len: u64) -> Vec<OperatorSpec> {
        let cfg = ModelConfig::transformer("candidate", self.layers, self.d, self.heads[0], self.ffn[0], seq_len, Mode::Encoder);
        encoder_layers(&cfg, &self.layer_dims(), PrecisionModel::WideBeforeNonlinear)
    }
}

fn pick<T: Copy>(rng: &mut impl Rng, set: &[T]) -> T {
    set[rng.random_range(0..set.len())]
}

fn pick_head(rng: &mut impl Rng, space: &SearchSpace, d: u64) -> u64 {
    loop {
        let h = pick(rng, &space.heads_per_layer);
        if h <= d {
            return h;
        }
    }
}

fn draw_candidate(space: &SearchSpace, rng: &mut impl Rng) -> Candidate {
    let n = pick(rng, &space.layer_counts);
    let d = pick(rng, &space.model_dims);
    let heads = (0..n).map(|_| pick_head(rng, space, d)).collect();
    let ffn = (0..n).map(|_| pick(rng, &space.ffn_dims_per_layer)).collect();
    Candidate::new(n, d, heads, ffn)
}

/// Uniform draw of every gene. Deterministic per seed.
pub fn sample_candidate(space: &SearchSpace, seed: u64) -> Candidate {
    draw_candidate(space, &mut rng::stream(seed, &[]))
}

fn mutate_with(c: &Candidate, p: f64, space: &SearchSpace, rng: &mut impl Rng) -> Candidate {
    let hit = |rng: &mut dyn rand::RngCore| rng.random::<f64>() < p;
    let mut out = Candidate::new(c.layers, c.d, c.heads.clone(), c.ffn.clone());
    if hit(rng) {
        out.layers = pick(rng, &space.layer_counts);
    }
    if hit(rng) {
        out.d = pick(rng, &space.model_dims);
    }
    let n = out.layers as usize;
    // Layer lists follow the new depth: surplus layers are dropped, new ones drawn fresh.
    out.heads.truncate(n);
    out.ffn.truncate(n);
    for i in 0..n {
        if i >= c.heads.len() || hit(rng) || out.heads[i] > out.d {
            let h = pick_head(rng, space, out.d);
            if i < out.heads.len() {
                out.heads[i] = h;
            } else {
                out.heads.push(h);
            }
        }
    }
    for i in 0..n {
        if i >= c.ffn.len() || hit(rng) {
            let f = pick(rng, &space.ffn_dims_per_layer);
            if i < out.ffn.len() {
                out.ffn[i] = f;
            } else {
                out.ffn.push(f);
            }
        }
    }
    out
}

/// Resamples each gene with probability `p`. Deterministic per seed.
pub fn mutate(c: &Candidate, p: f64, space: &SearchSpace, seed: u64) -> Result<Candidate> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("mutation probability {p} outside [0, 1]")));
    }
    Ok(mutate_with(c, p, space, &mut rng::stream(seed, &[])))
}

/// Parameter count of the encoder stack.
pub fn quality_proxy(c: &Candidate) -> f64 {
    let d = c.d;
    c.ffn
        .iter()
        .map(|&f| {
            let attention = 4 * d * d + 4 * d;
            let ffn = 2 * d * f + f + d;
            let norms = 4 * d;
            (attention + ffn + norms) as f64
        })
        .sum()
}

/// Per-shape cost memo shared across candidates.
#[derive(Debug, Default)]
pub struct CostCache {
    map: DashMap<OperatorSpec, CostReport>,
    tiler: Option<Tiler>,
}

impl CostCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tiler(tiler: Tiler) -> Self {
        Self { map: DashMap::new(), tiler: Some(tiler) }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn key(op: &OperatorSpec) -> OperatorSpec {
        OperatorSpec { name: String::new(), repeat: 1, ..op.clone() }
    }

    /// Cost of `op` with all repetitions.
    pub fn cost(&self, op: &OperatorSpec, accel: &AcceleratorConfig) -> Result<CostReport> {
        let key = Self::key(op);
        let unit = match self.map.get(&key) {
            Some(r) => r.clone(),
            None => {
                let r = op_cost(&key, accel, self.tiler.unwrap_or(Tiler::Square))?;
                self.map.insert(key, r.clone());
                r
            }
        };
        Ok(unit.scaled(op.repeat))
    }
}

/// Summed latency and energy of the candidate's encoder at the search length.
pub fn candidate_cost(c: &Candidate, accel: &AcceleratorConfig, cache: &CostCache) -> Result<CostReport> {
    if c.heads.len() != c.layers as usize || c.ffn.len() != c.layers as usize || c.layers == 0 {
        return Err(Error::InvalidConfig("per-layer lists must match the layer count".into()));
    }
    if c.heads.iter().any(|&h| h == 0 || h > c.d) {
        return Err(Error::InvalidConfig(format!("head counts {:?} invalid for d = {}", c.heads, c.d)));
    }
    let reports = c
        .ops(SEARCH_SEQ_LEN)
        .iter()
        .map(|op| cache.cost(op, accel))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostReport::sum(&reports))
}

pub fn candidate_edp(c: &Candidate, accel: &AcceleratorConfig, cache: &CostCache) -> Result<f64> {
    Ok(candidate_cost(c, accel, cache)?.edp)
}

fn evaluate(c: &Candidate, accel: &AcceleratorConfig, cache: &CostCache, quality: &QualityFn) -> Result<Candidate> {
    let r = candidate_cost(c, accel, cache)?;
    Ok(Candidate {
        quality: Some(quality(c)),
        edp: Some(r.edp),
        latency: Some(r.latency),
        energy: Some(r.energy),
        ..c.clone()
    })
}

pub type QualityFn = dyn Fn(&Candidate) -> f64 + Sync;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<Candidate>,
}

fn dominates(a: &Candidate, b: &Candidate) -> bool {
    let (qa, ea) = (a.quality.unwrap_or(f64::NEG_INFINITY), a.edp.unwrap_or(f64::INFINITY));
    let (qb, eb) = (b.quality.unwrap_or(f64::NEG_INFINITY), b.edp.unwrap_or(f64::INFINITY));
    qa >= qb && ea <= eb && (qa > qb || ea < eb)
}

/// Nondominated subset over (max quality, min EDP), sorted by EDP. Points
/// with identical scores keep the smallest encoding.
pub fn pareto(points: &[Candidate]) -> ParetoFront {
    let mut sorted: Vec<&Candidate> = points.iter().collect();
    sorted.sort_by(|a, b| {
        let ea = a.edp.unwrap_or(f64::INFINITY);
        let eb = b.edp.unwrap_or(f64::INFINITY);
        ea.total_cmp(&eb)
            .then_with(|| b.quality.unwrap_or(f64::NEG_INFINITY).total_cmp(&a.quality.unwrap_or(f64::NEG_INFINITY)))
            .then_with(|| a.encode().cmp(&b.encode()))
    });
    let mut front: Vec<Candidate> = Vec::new();
    let mut best_q = f64::NEG_INFINITY;
    for c in sorted {
        let q = c.quality.unwrap_or(f64::NEG_INFINITY);
        // Sorted by EDP then quality, so a point survives iff it beats every cheaper point.
        if q > best_q {
            best_q = q;
            front.push(c.clone());
        }
    }
    ParetoFront { points: front }
}

/// Brute-force dominance check of a front against the points it came from.
pub fn is_exact_front(front: &ParetoFront, points: &[Candidate]) -> bool {
    let nondominated = front.points.iter().all(|f| !points.iter().any(|p| dominates(p, f)));
    let complete = points.iter().all(|p| {
        points.iter().any(|q| dominates(q, p))
            || front.points.iter().any(|f| f.quality == p.quality && f.edp == p.edp)
    });
    let sorted = front.points.windows(2).all(|w| w[0].edp < w[1].edp);
    nondominated && complete && sorted
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub population: usize,
    pub rounds: usize,
    pub mutation: f64,
}

impl Default for EvolveParams {
    fn default() -> Self {
        Self { population: 40, rounds: 40, mutation: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub best_edp: f64,
    pub front_size: usize,
    pub evaluated: usize,
    pub discarded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveResult {
    pub front: ParetoFront,
    pub trace: Vec<RoundTrace>,
    pub initial_min_edp: f64,
    pub baseline: Candidate,
    /// Reasons candidates were dropped, with their encodings.
    pub discarded: Vec<(Vec<u64>, String)>,
}

/// The unevaluated first generation of `evolve` for `seed`.
pub fn initial_population(space: &SearchSpace, population: usize, seed: u64) -> Vec<Candidate> {
    (0..population)
        .map(|i| draw_candidate(space, &mut rng::stream(seed, &[0, i as u64])))
        .collect()
}

pub fn evolve(space: &SearchSpace, accel: &AcceleratorConfig, params: EvolveParams, seed: u64) -> Result<EvolveResult> {
    evolve_with(space, accel, params, seed, &quality_proxy)
}

/// Evaluate, keep the Pareto set, refill by round-robin mutation, repeat.
pub fn evolve_with(
    space: &SearchSpace,
    accel: &AcceleratorConfig,
    params: EvolveParams,
    seed: u64,
    quality: &QualityFn,
) -> Result<EvolveResult> {
    space.validate()?;
    accel.validate()?;
    if params.population < 2 || params.rounds < 1 {
        return Err(Error::InvalidConfig("need population >= 2 and rounds >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.mutation) {
        return Err(Error::InvalidConfig("mutation probability must be in [0, 1]".into()));
    }
    let cache = CostCache::new();
    let baseline = evaluate(&space.baseline(), accel, &cache, quality)?;
    let mut population = initial_population(space, params.population, seed);
    let mut trace = Vec::with_capacity(params.rounds);
    let mut discarded = Vec::new();
    let mut front = ParetoFront { points: Vec::new() };
    let mut initial_min_edp = f64::INFINITY;
    for round in 0..params.rounds {
        let results: Vec<Result<Candidate>> = population
            .par_iter()
            .map(|c| match (c.edp, c.quality) {
                (Some(_), Some(_)) => Ok(c.clone()),
                _ => evaluate(c, accel, &cache, quality),
            })
            .collect();
        let mut scored = Vec::with_capacity(results.len());
        let mut dropped = 0;
        for (c, r) in population.iter().zip(results) {
            match r {
                Ok(s) => scored.push(s),
                Err(e) => {
                    dropped += 1;
                    discarded.push((c.encode(), e.to_string()));
                }
            }
        }
        if round == 0 {
            initial_min_edp = scored.iter().filter_map(|c| c.edp).fold(f64::INFINITY, f64::min);
        }
        front = pareto(&scored);
        debug_assert!(is_exact_front(&front, &scored));
        trace.push(RoundTrace {
            round,
            best_edp: front.points.first().and_then(|c| c.edp).unwrap_or(f64::INFINITY),
            front_size: front.points.len(),
            evaluated: scored.len(),
            discarded: dropped,
        });
        if front.points.is_empty() {
            return Err(Error::Infeasible("every candidate failed evaluation".into()));
        }
        if round + 1 == params.rounds {
            break;
        }
        population = front.points.clone();
        let parents = front.points.len();
        let mut j = 0;
        while population.len() < params.population {
            let mut r = rng::stream(seed, &[1, round as u64, j as u64]);
            population.push(mutate_with(&front.points[j % parents], params.mutation, space, &mut r));
            j += 1;
        }
    }
    Ok(EvolveResult { front, trace, initial_min_edp, baseline, discarded })
}

/// Re-scores candidates with latency-optimal rectangular tiles.
pub fn rescore(points: &[Candidate], accel: &AcceleratorConfig) -> Result<Vec<Candidate>> {
    let cache = CostCache::with_tiler(Tiler::Optimal);
    points
        .par_iter()
        .map(|c| {
            let r = candidate_cost(c, accel, &cache)?;
            Ok(Candidate { edp: Some(r.edp), latency: Some(r.latency), energy: Some(r.energy), ..c.clone() })
        })
        .collect()
}

/// The searched architecture reported for the 6-layer, d = 672 case.
pub fn reference_architecture() -> Candidate {
    Candidate::new(6, 672, vec![12, 6, 12, 8, 10, 6], vec![1280, 1280, 2560, 768, 2048, 1024])
}
