//! Operator graphs and ideal FLOPs / MOPs / arithmetic-intensity profiles.
//!
//! FLOPs count the multiply and the add of a MAC separately. A matmul output
//! element costs `K` multiplies and `K - 1` adds, plus one more add when the
//! layer carries a bias (the weight projections do, the activation-to-activation
//! matmuls and convolutions do not). MOPs assume every distinct tensor moves
//! exactly once at its declared precision.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which operator graph a [`ModelConfig`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Encoder,
    Decoder,
    /// Fixed ResNet50 graph; the Transformer dimensions are ignored.
    Resnet50,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "layers")]
    pub num_layers: u64,
    #[serde(rename = "d")]
    pub model_dim: u64,
    #[serde(rename = "heads")]
    pub num_heads: u64,
    #[serde(rename = "d_ffn")]
    pub ffn_dim: u64,
    #[serde(default)]
    pub seq_len: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "one")]
    pub act_bytes: u32,
    #[serde(default = "one")]
    pub weight_bytes: u32,
    /// Precision of partial sums written out ahead of nonlinear operators.
    #[serde(default = "four")]
    pub accum_bytes: u32,
}

fn default_mode() -> Mode {
    Mode::Encoder
}

fn one() -> u32 {
    1
}

fn four() -> u32 {
    4
}

impl ModelConfig {
    pub fn transformer(
        name: &str,
        num_layers: u64,
        model_dim: u64,
        num_heads: u64,
        ffn_dim: u64,
        seq_len: u64,
        mode: Mode,
    ) -> Self {
        Self {
            name: name.to_string(),
            num_layers,
            model_dim,
            num_heads,
            ffn_dim,
            seq_len,
            mode,
            act_bytes: 1,
            weight_bytes: 1,
            accum_bytes: 4,
        }
    }

    /// Built-in configurations. Sequence length is left at zero and must be
    /// set with [`ModelConfig::with_seq_len`] for Transformer presets.
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "bert-base" => Self::transformer(name, 12, 768, 12, 3072, 0, Mode::Encoder),
            "bert-large" => Self::transformer(name, 24, 1024, 16, 4096, 0, Mode::Encoder),
            "gpt2" => Self::transformer(name, 12, 768, 12, 3072, 0, Mode::Decoder),
            "resnet50" => Self {
                mode: Mode::Resnet50,
                ..Self::transformer(name, 1, 1, 1, 1, 1, Mode::Encoder)
            },
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 4] = ["bert-base", "bert-large", "gpt2", "resnet50"];

    pub fn with_seq_len(mut self, seq_len: u64) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> u64 {
        self.model_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, bytes) in [
            ("act_bytes", self.act_bytes),
            ("weight_bytes", self.weight_bytes),
            ("accum_bytes", self.accum_bytes),
        ] {
            if ![1, 2, 4].contains(&bytes) {
                return Err(Error::InvalidConfig(format!(
                    "{label} must be 1, 2 or 4 (got {bytes})"
                )));
            }
        }
        if self.mode == Mode::Resnet50 {
            return Ok(());
        }
        for (label, v) in [
            ("layers", self.num_layers),
            ("d", self.model_dim),
            ("heads", self.num_heads),
            ("d_ffn", self.ffn_dim),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{label} must be at least 1")));
            }
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "d = {} is not divisible by heads = {}",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OperatorClass {
    MhaProjection,
    ActToAct,
    FfnProjection,
    Nonlinear,
    Convolution,
    Pooling,
    ResidualAdd,
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NonlinearFn {
    Softmax,
    LayerNorm,
    Gelu,
    BatchNorm,
    Relu,
    Add,
}

impl NonlinearFn {
    /// FLOPs per element: Softmax is max, subtract, exp, sum, divide;
    /// LayerNorm is mean, variance (2), subtract, divide, scale and shift (2).
    pub fn flops_per_element(self) -> u64 {
        match self {
            NonlinearFn::Softmax => 5,
            NonlinearFn::LayerNorm => 7,
            NonlinearFn::Gelu => 8,
            NonlinearFn::BatchNorm => 2,
            NonlinearFn::Relu => 1,
            NonlinearFn::Add => 1,
        }
    }

    /// Passes the SFU makes over the data.
    pub fn passes(self) -> u64 {
        match self {
            NonlinearFn::Softmax | NonlinearFn::LayerNorm => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionStage {
    /// query . cached keys -> scores
    Score,
    /// probabilities . cached values -> context vector
    Context,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    /// `A (m x k) . B (k x n) -> C (m x n)`.
    Matmul { m: u64, k: u64, n: u64, bias: bool },
    /// One matrix-vector product per generated token; the weight matrix is
    /// reloaded every iteration.
    MatvecSeries { rows: u64, cols: u64, iterations: u64 },
    /// One head of decoder attention against a KV cache that grows from one
    /// to `steps` entries.
    KvCacheMatvec { head_dim: u64, steps: u64, stage: AttentionStage },
    Conv { kernel: u64, in_ch: u64, out_ch: u64, out_h: u64, out_w: u64, stride: u64 },
    Pool { channels: u64, in_hw: u64, out_hw: u64, window: u64 },
    /// Vector work for the SFU. One input precision per input tensor.
    Elementwise { elements: u64, func: NonlinearFn, flops_per_element: u64, passes: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub name: String,
    pub class: OperatorClass,
    pub kind: OpKind,
    pub repeat: u64,
    pub in_precisions: Vec<u32>,
    pub out_precision: u32,
}

impl OperatorSpec {
    pub fn matmul(name: &str, class: OperatorClass, m: u64, k: u64, n: u64, bias: bool) -> Self {
        Self {
            name: name.to_string(),
            class,
            kind: OpKind::Matmul { m, k, n, bias },
            repeat: 1,
            in_precisions: vec![1, 1],
            out_precision: 1,
        }
    }

    pub fn elementwise(name: &str, func: NonlinearFn, elements: u64, inputs: usize) -> Self {
        let class = match func {
            NonlinearFn::Add => OperatorClass::ResidualAdd,
            _ => OperatorClass::Nonlinear,
        };
        Self {
            name: name.to_string(),
            class,
            kind: OpKind::Elementwise {
                elements,
                func,
                flops_per_element: func.flops_per_element(),
                passes: func.passes(),
            },
            repeat: 1,
            in_precisions: vec![1; inputs],
            out_precision: 1,
        }
    }

    pub fn conv(name: &str, kernel: u64, in_ch: u64, out_ch: u64, out_hw: u64, stride: u64) -> Self {
        Self {
            name: name.to_string(),
            class: OperatorClass::Convolution,
            kind: OpKind::Conv { kernel, in_ch, out_ch, out_h: out_hw, out_w: out_hw, stride },
            repeat: 1,
            in_precisions: vec![1, 1],
            out_precision: 1,
        }
    }

    pub fn repeated(mut self, repeat: u64) -> Self {
        self.repeat = repeat;
        self
    }

    pub fn with_precisions(mut self, inputs: &[u32], out: u32) -> Self {
        self.in_precisions = inputs.to_vec();
        self.out_precision = out;
        self
    }

    fn in_prec(&self, i: usize) -> u64 {
        self.in_precisions.get(i).copied().unwrap_or(1) as u64
    }

    /// `(m, k, n)` of the matmul, or of the implicit matmul of a convolution
    /// (`out_ch`, `in_ch * k^2`, output pixels).
    pub fn gemm_dims(&self) -> Option<(u64, u64, u64)> {
        match self.kind {
            OpKind::Matmul { m, k, n, .. } => Some((m, k, n)),
            OpKind::Conv { kernel, in_ch, out_ch, out_h, out_w, .. } => {
                Some((out_ch, in_ch * kernel * kernel, out_h * out_w))
            }
            _ => None,
        }
    }

    /// Bytes of the two operands and the output, for one repetition.
    pub fn operand_bytes(&self) -> (u64, u64, u64) {
        match self.kind {
            OpKind::Matmul { m, k, n, .. } => (
                m * k * self.in_prec(0),
                k * n * self.in_prec(1),
                m * n * self.out_precision as u64,
            ),
            OpKind::Conv { kernel, in_ch, out_ch, out_h, out_w, stride } => (
                kernel * kernel * in_ch * out_ch * self.in_prec(0),
                in_ch * out_h * stride * out_w * stride * self.in_prec(1),
                out_ch * out_h * out_w * self.out_precision as u64,
            ),
            _ => (0, 0, 0),
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(
            self.kind,
            OpKind::Elementwise {
                func: NonlinearFn::Softmax
                    | NonlinearFn::LayerNorm
                    | NonlinearFn::Gelu
                    | NonlinearFn::BatchNorm
                    | NonlinearFn::Relu,
                ..
            }
        )
    }
}

fn triangular(n: u64) -> u64 {
    n * (n + 1) / 2
}

/// Ideal FLOPs of one operator including all repetitions.
pub fn flops(op: &OperatorSpec) -> u64 {
    let once = match op.kind {
        OpKind::Matmul { m, k, n, bias } => {
            if k == 0 {
                0
            } else {
                m * n * (2 * k - 1 + bias as u64)
            }
        }
        OpKind::MatvecSeries { rows, cols, iterations } => 2 * rows * cols * iterations,
        OpKind::KvCacheMatvec { head_dim, steps, .. } => 2 * head_dim * triangular(steps),
        OpKind::Conv { kernel, in_ch, out_ch, out_h, out_w, .. } => {
            2 * kernel * kernel * in_ch * out_ch * out_h * out_w
        }
        OpKind::Pool { channels, out_hw, window, .. } => channels * out_hw * out_hw * window * window,
        OpKind::Elementwise { elements, flops_per_element, .. } => elements * flops_per_element,
    };
    once * op.repeat
}

/// Ideal bytes moved by one operator including all repetitions.
pub fn mops(op: &OperatorSpec) -> u64 {
    let out = op.out_precision as u64;
    let once = match op.kind {
        OpKind::Matmul { .. } | OpKind::Conv { .. } => {
            let (a, b, c) = op.operand_bytes();
            a + b + c
        }
        OpKind::MatvecSeries { rows, cols, iterations } => {
            iterations * (rows * cols * op.in_prec(0) + cols * op.in_prec(1) + rows * out)
        }
        OpKind::KvCacheMatvec { head_dim, steps, stage } => {
            let cached = triangular(steps);
            match stage {
                AttentionStage::Score => {
                    steps * head_dim * op.in_prec(0) + cached * head_dim * op.in_prec(1) + cached * out
                }
                AttentionStage::Context => {
                    cached * op.in_prec(0) + cached * head_dim * op.in_prec(1) + steps * head_dim * out
                }
            }
        }
        OpKind::Pool { channels, in_hw, out_hw, .. } => {
            channels * (in_hw * in_hw * op.in_prec(0) + out_hw * out_hw * out)
        }
        OpKind::Elementwise { elements, .. } => {
            let inputs: u64 = op.in_precisions.iter().map(|&p| p as u64).sum();
            elements * (inputs + out)
        }
    };
    once * op.repeat
}

pub fn intensity(flops: u64, mops: u64) -> Result<f64> {
    if mops == 0 {
        return Err(Error::UndefinedIntensity);
    }
    Ok(flops as f64 / mops as f64)
}

/// Selects whether operators ahead of a nonlinear op write wide partial sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionModel {
    /// Every activation at `act_bytes`.
    Ideal,
    /// Outputs feeding Softmax, LayerNorm and GELU at `accum_bytes`.
    WideBeforeNonlinear,
}

/// Per-layer overrides used by the architecture search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDims {
    pub heads: u64,
    pub ffn_dim: u64,
}

#[derive(Clone, Copy, Debug)]
struct Precisions {
    act: u32,
    weight: u32,
    wide: u32,
}

impl Precisions {
    fn new(cfg: &ModelConfig, model: PrecisionModel) -> Self {
        let wide = match model {
            PrecisionModel::Ideal => cfg.act_bytes,
            PrecisionModel::WideBeforeNonlinear => cfg.accum_bytes,
        };
        Self { act: cfg.act_bytes, weight: cfg.weight_bytes, wide }
    }
}

fn check_mode(cfg: &ModelConfig, want: Mode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != want {
        return Err(Error::InvalidConfig(format!(
            "expected a {want:?} config, got {:?}",
            cfg.mode
        )));
    }
    Ok(())
}

fn uniform_layers(cfg: &ModelConfig) -> Vec<LayerDims> {
    vec![LayerDims { heads: cfg.num_heads, ffn_dim: cfg.ffn_dim }; cfg.num_layers as usize]
}

/// Encoder operators, 12 records per layer, at ideal precision.
pub fn encoder_ops(cfg: &ModelConfig) -> Result<Vec<OperatorSpec>> {
    encoder_ops_with(cfg, PrecisionModel::Ideal)
}

pub fn encoder_ops_with(cfg: &ModelConfig, model: PrecisionModel) -> Result<Vec<OperatorSpec>> {
    check_mode(cfg, Mode::Encoder)?;
    Ok(encoder_layers(cfg, &uniform_layers(cfg), model))
}

/// Encoder operators with per-layer head counts and FFN widths. When a head
/// count does not divide `d`, the head dimension is `floor(d / h)`.
pub fn encoder_layers(cfg: &ModelConfig, layers: &[LayerDims], model: PrecisionModel) -> Vec<OperatorSpec> {
    let p = Precisions::new(cfg, model);
    let (d, l) = (cfg.model_dim, cfg.seq_len);
    let mut ops = Vec::with_capacity(layers.len() * 12);
    for (i, layer) in layers.iter().enumerate() {
        let (h, f) = (layer.heads, layer.ffn_dim);
        let dh = d / h;
        let name = |op: &str| format!("layer{i}.{op}");
        let proj = |op: &str, class, m, k, out| {
            OperatorSpec::matmul(&name(op), class, m, k, l, true).with_precisions(&[p.weight, p.act], out)
        };
        let norm = |op: &str| {
            OperatorSpec::elementwise(&name(op), NonlinearFn::LayerNorm, d * l, 2)
                .with_precisions(&[p.wide, p.act], p.act)
                .with_residual()
        };
        ops.push(proj("w_q", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(proj("w_k", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(proj("w_v", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(
            OperatorSpec::matmul(&name("query_x_key"), OperatorClass::ActToAct, l, dh, l, false)
                .with_precisions(&[p.act, p.act], p.wide)
                .repeated(h),
        );
        ops.push(
            OperatorSpec::elementwise(&name("softmax"), NonlinearFn::Softmax, h * l * l, 1)
                .with_precisions(&[p.wide], p.act),
        );
        ops.push(
            OperatorSpec::matmul(&name("score_x_value"), OperatorClass::ActToAct, dh, l, l, false)
                .with_precisions(&[p.act, p.act], p.act)
                .repeated(h),
        );
        ops.push(proj("w_out", OperatorClass::MhaProjection, d, d, p.wide));
        ops.push(norm("layernorm1"));
        ops.push(proj("w_1", OperatorClass::FfnProjection, f, d, p.wide));
        ops.push(
            OperatorSpec::elementwise(&name("gelu"), NonlinearFn::Gelu, f * l, 1)
                .with_precisions(&[p.wide], p.act),
        );
        ops.push(proj("w_2", OperatorClass::FfnProjection, d, f, p.wide));
        ops.push(norm("layernorm2"));
    }
    ops
}

impl OperatorSpec {
    /// LayerNorm record that also performs the residual add feeding it.
    fn with_residual(mut self) -> Self {
        if let OpKind::Elementwise { ref mut flops_per_element, .. } = self.kind {
            *flops_per_element += NonlinearFn::Add.flops_per_element();
        }
        self
    }
}

/// Decoder operators for open-ended generation of `seq_len` tokens with a KV
/// cache, 12 records per layer.
pub fn decoder_ops(cfg: &ModelConfig) -> Result<Vec<OperatorSpec>> {
    decoder_ops_with(cfg, PrecisionModel::Ideal)
}

pub fn decoder_ops_with(cfg: &ModelConfig, model: PrecisionModel) -> Result<Vec<OperatorSpec>> {
    check_mode(cfg, Mode::Decoder)?;
    let p = Precisions::new(cfg, model);
    let (d, h, f, l) = (cfg.model_dim, cfg.num_heads, cfg.ffn_dim, cfg.seq_len);
    let dh = cfg.head_dim();
    let cached = triangular(l);
    let mut ops = Vec::with_capacity(cfg.num_layers as usize * 12);
    for i in 0..cfg.num_layers {
        let name = |op: &str| format!("layer{i}.{op}");
        let matvec = |op: &str, class, rows, cols, out| OperatorSpec {
            name: name(op),
            class,
            kind: OpKind::MatvecSeries { rows, cols, iterations: l },
            repeat: 1,
            in_precisions: vec![p.weight, p.act],
            out_precision: out,
        };
        let attention = |op: &str, stage, in0, out| OperatorSpec {
            name: name(op),
            class: OperatorClass::ActToAct,
            kind: OpKind::KvCacheMatvec { head_dim: dh, steps: l, stage },
            repeat: h,
            in_precisions: vec![in0, p.act],
            out_precision: out,
        };
        let norm = |op: &str| {
            OperatorSpec::elementwise(&name(op), NonlinearFn::LayerNorm, d * l, 2)
                .with_precisions(&[p.wide, p.act], p.act)
                .with_residual()
        };
        ops.push(matvec("w_q", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(matvec("w_k", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(matvec("w_v", OperatorClass::MhaProjection, d, d, p.act));
        ops.push(attention("query_x_key", AttentionStage::Score, p.act, p.wide));
        ops.push(
            OperatorSpec::elementwise(&name("softmax"), NonlinearFn::Softmax, h * cached, 1)
                .with_precisions(&[p.wide], p.act),
        );
        ops.push(attention("score_x_value", AttentionStage::Context, p.act, p.act));
        ops.push(matvec("w_out", OperatorClass::MhaProjection, d, d, p.wide));
        ops.push(norm("layernorm1"));
        ops.push(matvec("w_1", OperatorClass::FfnProjection, f, d, p.wide));
        ops.push(
            OperatorSpec::elementwise(&name("gelu"), NonlinearFn::Gelu, f * l, 1)
                .with_precisions(&[p.wide], p.act),
        );
        ops.push(matvec("w_2", OperatorClass::FfnProjection, d, f, p.wide));
        ops.push(norm("layernorm2"));
    }
    Ok(ops)
}

/// Operators of the model described by `cfg`.
pub fn model_ops(cfg: &ModelConfig, model: PrecisionModel) -> Result<Vec<OperatorSpec>> {
    match cfg.mode {
        Mode::Encoder => encoder_ops_with(cfg, model),
        Mode::Decoder => decoder_ops_with(cfg, model),
        Mode::Resnet50 => {
            cfg.validate()?;
            Ok(resnet50_ops())
        }
    }
}

/// ResNet50 (224x224 input, stride on the first 1x1 of each downsampling
/// block). Bottleneck rows are aggregated over block repetitions; the first
/// block of stages 3 to 5 contributes its own reduce convolution. Projection
/// shortcuts are not modeled.
pub fn resnet50_ops() -> Vec<OperatorSpec> {
    let mut ops = Vec::new();

    fn conv_bn_relu(
        ops: &mut Vec<OperatorSpec>,
        name: &str,
        conv: OperatorSpec,
        relu: bool,
    ) {
        let repeat = conv.repeat;
        let (m, _, n) = conv.gemm_dims().expect("conv");
        ops.push(conv);
        ops.push(OperatorSpec::elementwise(&format!("{name}.bn"), NonlinearFn::BatchNorm, m * n, 1).repeated(repeat));
        if relu {
            ops.push(OperatorSpec::elementwise(&format!("{name}.relu"), NonlinearFn::Relu, m * n, 1).repeated(repeat));
        }
    }

    conv_bn_relu(&mut ops, "conv1", OperatorSpec::conv("conv1", 7, 3, 64, 112, 2), true);
    ops.push(OperatorSpec {
        name: "maxpool".into(),
        class: OperatorClass::Pooling,
        kind: OpKind::Pool { channels: 64, in_hw: 112, out_hw: 56, window: 3 },
        repeat: 1,
        in_precisions: vec![1],
        out_precision: 1,
    });

    // (stage, bottleneck width, output size, blocks, input channels of the first block)
    let stages = [(2u64, 64u64, 56u64, 3u64, None), (3, 128, 28, 4, Some(256u64)), (4, 256, 14, 6, Some(512)), (5, 512, 7, 3, Some(1024))];
    for (stage, c, hw, blocks, first_in) in stages {
        let tag = |op: &str| format!("conv{stage}.{op}");
        let expanded = 4 * c;
        let reduce_reps = match first_in {
            Some(in_ch) => {
                conv_bn_relu(&mut ops, &tag("reduce_first"), OperatorSpec::conv(&tag("reduce_first"), 1, in_ch, c, hw, 2), true);
                blocks - 1
            }
            None => blocks,
        };
        conv_bn_relu(
            &mut ops,
            &tag("reduce"),
            OperatorSpec::conv(&tag("reduce"), 1, expanded, c, hw, 1).repeated(reduce_reps),
            true,
        );
        conv_bn_relu(&mut ops, &tag("3x3"), OperatorSpec::conv(&tag("3x3"), 3, c, c, hw, 1).repeated(blocks), true);
        conv_bn_relu(&mut ops, &tag("expand"), OperatorSpec::conv(&tag("expand"), 1, c, expanded, hw, 1).repeated(blocks), false);
        ops.push(OperatorSpec::elementwise(&tag("residual"), NonlinearFn::Add, expanded * hw * hw, 2).repeated(blocks));
        ops.push(OperatorSpec::elementwise(&tag("residual.relu"), NonlinearFn::Relu, expanded * hw * hw, 1).repeated(blocks));
    }

    ops.push(OperatorSpec {
        name: "avgpool".into(),
        class: OperatorClass::Pooling,
        kind: OpKind::Pool { channels: 2048, in_hw: 7, out_hw: 1, window: 7 },
        repeat: 1,
        in_precisions: vec![1],
        out_precision: 1,
    });
    ops.push(OperatorSpec::matmul("fc", OperatorClass::Classifier, 1000, 2048, 1, true));
    let mut softmax = OperatorSpec::elementwise("fc.softmax", NonlinearFn::Softmax, 1000, 1);
    softmax.class = OperatorClass::Classifier;
    ops.push(softmax);
    ops
}

/// Aggregation buckets of a profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "MHA (projections)")]
    MhaProjections,
    #[serde(rename = "MHA (act-to-act matmuls)")]
    MhaActToAct,
    #[serde(rename = "FFN (projections)")]
    FfnProjections,
    #[serde(rename = "Convolution")]
    Convolution,
    #[serde(rename = "BatchNorm")]
    BatchNorm,
    #[serde(rename = "ReLU")]
    Relu,
    #[serde(rename = "Other")]
    Other,
}

impl Category {
    pub fn of(op: &OperatorSpec) -> Self {
        match (op.class, op.kind) {
            (OperatorClass::MhaProjection, _) => Category::MhaProjections,
            (OperatorClass::ActToAct, _) => Category::MhaActToAct,
            (OperatorClass::FfnProjection, _) => Category::FfnProjections,
            (OperatorClass::Convolution, _) => Category::Convolution,
            (_, OpKind::Elementwise { func: NonlinearFn::BatchNorm, .. }) => Category::BatchNorm,
            (_, OpKind::Elementwise { func: NonlinearFn::Relu, .. }) => Category::Relu,
            _ => Category::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::MhaProjections => "MHA (projections)",
            Category::MhaActToAct => "MHA (act-to-act matmuls)",
            Category::FfnProjections => "FFN (projections)",
            Category::Convolution => "Convolution",
            Category::BatchNorm => "BatchNorm",
            Category::Relu => "ReLU",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpRow {
    pub op: OperatorSpec,
    pub flops: u64,
    pub mops: u64,
    /// `None` when the operator moves no bytes.
    pub intensity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub flops: u64,
    pub flops_pct: f64,
    pub mops: u64,
    pub mops_pct: f64,
    pub intensity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub flops: u64,
    pub mops: u64,
    pub intensity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub per_op: Vec<OpRow>,
    pub per_category: BTreeMap<Category, CategoryRow>,
    pub totals: Totals,
}

impl WorkloadProfile {
    pub fn category(&self, c: Category) -> Option<&CategoryRow> {
        self.per_category.get(&c)
    }

    fn from_rows(per_op: Vec<OpRow>) -> Self {
        let mut sums: BTreeMap<Category, (u64, u64)> = BTreeMap::new();
        for row in &per_op {
            let e = sums.entry(Category::of(&row.op)).or_default();
            e.0 += row.flops;
            e.1 += row.mops;
        }
        let flops: u64 = sums.values().map(|s| s.0).sum();
        let mops: u64 = sums.values().map(|s| s.1).sum();
        let pct = |part: u64, whole: u64| if whole == 0 { 0.0 } else { 100.0 * part as f64 / whole as f64 };
        let per_category = sums
            .into_iter()
            .map(|(c, (f, m))| {
                let row = CategoryRow {
                    flops: f,
                    flops_pct: pct(f, flops),
                    mops: m,
                    mops_pct: pct(m, mops),
                    intensity: intensity(f, m).ok(),
                };
                (c, row)
            })
            .collect();
        Self {
            per_op,
            per_category,
            totals: Totals { flops, mops, intensity: intensity(flops, mops).ok() },
        }
    }
}

pub fn profile(ops: &[OperatorSpec]) -> Result<WorkloadProfile> {
    if ops.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let rows = ops
        .iter()
        .map(|op| {
            let (f, m) = (flops(op), mops(op));
            OpRow { op: op.clone(), flops: f, mops: m, intensity: intensity(f, m).ok() }
        })
        .collect();
    Ok(WorkloadProfile::from_rows(rows))
}

/// Applies CNN graph fusion: BatchNorm folds into the preceding convolution
/// (no FLOPs, no MOPs) and ReLU fuses into its producer (FLOPs kept, MOPs
/// removed).
pub fn fold_cnn_fusion(p: &WorkloadProfile) -> WorkloadProfile {
    let rows = p
        .per_op
        .iter()
        .filter_map(|row| match row.op.kind {
            OpKind::Elementwise { func: NonlinearFn::BatchNorm, .. } => None,
            OpKind::Elementwise { func: NonlinearFn::Relu, .. } => {
                Some(OpRow { mops: 0, intensity: None, ..row.clone() })
            }
            _ => Some(row.clone()),
        })
        .collect();
    WorkloadProfile::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bert(l: u64) -> ModelConfig {
        ModelConfig::preset("bert-base").unwrap().with_seq_len(l)
    }

    #[test]
    fn bert_base_emits_twelve_records_per_layer() {
        let ops = encoder_ops(&bert(128)).unwrap();
        assert_eq!(ops.len(), 144);
        let p = profile(&ops).unwrap();
        let proj = p.category(Category::MhaProjections).unwrap();
        assert_eq!(proj.flops, 2 * 768 * 768 * 128 * 48);
        assert!((proj.flops as f64 / 1e9 - 7.25).abs() < 0.005);
    }

    #[test]
    fn unit_dims_give_unit_query_key() {
        let cfg = ModelConfig::transformer("tiny", 1, 2, 2, 1, 1, Mode::Encoder);
        let ops = encoder_ops(&cfg).unwrap();
        let qk = ops.iter().find(|o| o.name.ends_with("query_x_key")).unwrap();
        assert_eq!(qk.kind, OpKind::Matmul { m: 1, k: 1, n: 1, bias: false });
    }

    #[test]
    fn bert_large_ffn_flops_per_layer() {
        let cfg = ModelConfig::preset("bert-large").unwrap().with_seq_len(512);
        let ops = encoder_ops(&cfg).unwrap();
        let ffn: u64 = ops[..12]
            .iter()
            .filter(|o| o.class == OperatorClass::FfnProjection)
            .map(flops)
            .sum();
        assert_eq!(ffn, 2 * 2 * 4096 * 1024 * 512);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = bert(0);
        assert!(encoder_ops(&cfg).is_err());
        cfg.seq_len = 8;
        cfg.num_heads = 7;
        assert!(matches!(encoder_ops(&cfg), Err(Error::InvalidConfig(_))));
        cfg.num_heads = 12;
        cfg.act_bytes = 3;
        assert!(encoder_ops(&cfg).is_err());
        let mut zero_layers = bert(8);
        zero_layers.num_layers = 0;
        assert!(encoder_ops(&zero_layers).is_err());
        assert!(decoder_ops(&bert(8)).is_err());
    }

    #[test]
    fn flops_conventions() {
        let op = OperatorSpec::matmul("p", OperatorClass::MhaProjection, 768, 768, 128, true).repeated(48);
        assert_eq!(flops(&op), 7_247_757_312);
        assert_eq!(flops(&OperatorSpec::matmul("u", OperatorClass::MhaProjection, 1, 1, 1, true)), 2);
        assert_eq!(flops(&OperatorSpec::matmul("u", OperatorClass::ActToAct, 1, 1, 1, false)), 1);
        assert_eq!(flops(&OperatorSpec::conv("c", 7, 3, 64, 112, 2)), 2 * 49 * 3 * 64 * 12544);
    }

    #[test]
    fn mops_conventions() {
        let op = OperatorSpec::matmul("m", OperatorClass::ActToAct, 2, 2, 2, false);
        assert_eq!(mops(&op), 12);
        let wide = op.clone().with_precisions(&[1, 1], 4);
        assert_eq!(mops(&wide), 4 + 4 + 16);
    }

    #[test]
    fn intensity_edges() {
        assert_eq!(intensity(0, 1).unwrap(), 0.0);
        assert!(matches!(intensity(5, 0), Err(Error::UndefinedIntensity)));
        assert!((intensity(7_250_000_000, 37_760_000).unwrap() - 192.0).abs() < 0.01);
    }

    #[test]
    fn empty_profile_is_an_error() {
        assert!(matches!(profile(&[]), Err(Error::EmptyProfile)));
    }

    #[test]
    fn single_op_category_equals_totals() {
        let op = OperatorSpec::matmul("m", OperatorClass::FfnProjection, 8, 4, 2, true);
        let p = profile(std::slice::from_ref(&op)).unwrap();
        let c = p.category(Category::FfnProjections).unwrap();
        assert_eq!((c.flops, c.mops), (p.totals.flops, p.totals.mops));
        assert_eq!(c.flops_pct, 100.0);
    }

    #[test]
    fn fusion_fold_without_bn_or_relu_is_identity() {
        let ops = encoder_ops(&bert(16)).unwrap();
        let p = profile(&ops).unwrap();
        assert_eq!(fold_cnn_fusion(&p), p);
    }

    #[test]
    fn decoder_single_token() {
        let cfg = ModelConfig::preset("gpt2").unwrap().with_seq_len(1);
        let ops = decoder_ops(&cfg).unwrap();
        let a2a: u64 = ops.iter().filter(|o| o.class == OperatorClass::ActToAct).map(flops).sum();
        assert_eq!(a2a, 4 * 768 * 12);
    }

    #[test]
    fn json_config_and_presets() {
        let cfg = ModelConfig::from_json(
            r#"{"name":"x","layers":2,"d":64,"heads":4,"d_ffn":256,"seq_len":32,"mode":"encoder","act_bytes":1,"weight_bytes":1,"accum_bytes":4}"#,
        )
        .unwrap();
        assert_eq!(cfg.head_dim(), 16);
        assert!(ModelConfig::preset("nope").is_err());
        for name in ModelConfig::PRESETS {
            ModelConfig::preset(name).unwrap();
        }
    }
}
