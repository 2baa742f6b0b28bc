//! The four classifier architectures and their weight files.
//!
//! Every model is two stages. A per-modality *branch* turns a `[B x T x d]`
//! feature stream into one pooled vector per video; a shared *fusion head*
//! concatenates branch outputs, runs them through an MLP, and emits
//! independent per-class probabilities.
//!
//! Branches come in two flavors. The attention branch applies the hidden
//! linear/ReLU chain frame-wise, lets a self-attention block mix frames, and
//! mean-pools over time — so the pooled vector can depend on cross-frame
//! structure. The plain branch mean-pools first and runs the MLP on the
//! pooled vector; it is the attention ablation at matched width. Unimodal
//! variants keep the attention branch for their single modality.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{read_checked, Cursor, Payload};
use crate::error::{Error, Result};
use crate::metrics::{bce_loss, LabelSet};
use crate::nn::{
    relative_error, GradCheckEntry, GradCheckReport, Layer, LinearLayer, Relu, SelfAttentionBlock,
    Sigmoid, GRADCHECK_STEP,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Reduction, Tensor};

/// Weight-file magic bytes.
pub const WEIGHTS_MAGIC: &[u8; 4] = b"AFW1";

/// Current weight-file version.
pub const WEIGHTS_VERSION: u16 = 1;

/// Which of the four architectures to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    AttendFusion,
    FcLateFusion,
    VisualOnly,
    AudioOnly,
}

impl Arch {
    pub const ALL: [Arch; 4] = [
        Arch::AttendFusion,
        Arch::FcLateFusion,
        Arch::VisualOnly,
        Arch::AudioOnly,
    ];

    pub fn uses_visual(self) -> bool {
        !matches!(self, Arch::AudioOnly)
    }

    pub fn uses_audio(self) -> bool {
        !matches!(self, Arch::VisualOnly)
    }

    /// The FC baseline is the only variant without attention blocks.
    pub fn uses_attention(self) -> bool {
        !matches!(self, Arch::FcLateFusion)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::AttendFusion => "attend_fusion",
            Arch::FcLateFusion => "fc_late_fusion",
            Arch::VisualOnly => "visual_only",
            Arch::AudioOnly => "audio_only",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attend_fusion" => Ok(Arch::AttendFusion),
            "fc_late_fusion" => Ok(Arch::FcLateFusion),
            "visual_only" => Ok(Arch::VisualOnly),
            "audio_only" => Ok(Arch::AudioOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture {other:?}; expected one of \
                 attend_fusion, fc_late_fusion, visual_only, audio_only"
            ))),
        }
    }
}

/// Architecture hyperparameters. `branch_hidden` is shared by both modality
/// branches; the attention width (and a branch's output width) is the last
/// hidden size, or the raw feature dim when the list is empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub branch_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::AttendFusion,
            visual_dim: 1024,
            audio_dim: 128,
            vocab_size: 4716,
            seq_len: 8,
            branch_hidden: Vec::new(),
            fusion_hidden: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1, got 0")));
            }
        }
        for (name, list) in [
            ("branch_hidden", &self.branch_hidden),
            ("fusion_hidden", &self.fusion_hidden),
        ] {
            if list.iter().any(|&h| h == 0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} sizes must all be >= 1, got {list:?}"
                )));
            }
        }
        Ok(())
    }

    fn branch_out_dim(&self, in_dim: usize) -> usize {
        *self.branch_hidden.last().unwrap_or(&in_dim)
    }

    /// Width of the concatenated branch outputs feeding the fusion MLP.
    fn fused_dim(&self) -> usize {
        let mut dim = 0;
        if self.arch.uses_visual() {
            dim += self.branch_out_dim(self.visual_dim);
        }
        if self.arch.uses_audio() {
            dim += self.branch_out_dim(self.audio_dim);
        }
        dim
    }
}

/// Exact number of scalar parameters a model built from `config` would hold;
/// closed-form, so reference-scale configs can be audited without allocating
/// gigabytes of weights.
pub fn param_count(config: &ModelConfig) -> Result<u64> {
    config.validate()?;
    fn mlp(mut in_dim: usize, hidden: &[usize]) -> u64 {
        let mut total = 0u64;
        for &h in hidden {
            total += (in_dim as u64) * (h as u64) + h as u64;
            in_dim = h;
        }
        total
    }
    let mut total = 0u64;
    for (used, in_dim) in [
        (config.arch.uses_visual(), config.visual_dim),
        (config.arch.uses_audio(), config.audio_dim),
    ] {
        if !used {
            continue;
        }
        total += mlp(in_dim, &config.branch_hidden);
        if config.arch.uses_attention() {
            let d = config.branch_out_dim(in_dim) as u64;
            total += 3 * d * d;
        }
    }
    total += mlp(config.fused_dim(), &config.fusion_hidden);
    let head_in = *config.fusion_hidden.last().unwrap_or(&config.fused_dim()) as u64;
    total += head_in * config.vocab_size as u64 + config.vocab_size as u64;
    Ok(total)
}

/// The parameter registry a model built from `config` would expose — names
/// and tensor shapes in registry order — computed without allocating any
/// weights. Drives the `params` ledger for reference-scale configs.
pub fn param_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    fn mlp(out: &mut Vec<(String, Vec<usize>)>, prefix: &str, mut in_dim: usize, hidden: &[usize]) {
        for (i, &h) in hidden.iter().enumerate() {
            out.push((format!("{prefix}.fc{i}.w"), vec![h, in_dim]));
            out.push((format!("{prefix}.fc{i}.b"), vec![h]));
            in_dim = h;
        }
    }
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    for (used, prefix, in_dim) in [
        (config.arch.uses_visual(), "visual", config.visual_dim),
        (config.arch.uses_audio(), "audio", config.audio_dim),
    ] {
        if !used {
            continue;
        }
        mlp(&mut out, prefix, in_dim, &config.branch_hidden);
        if config.arch.uses_attention() {
            let d = config.branch_out_dim(in_dim);
            for gate in ["wq", "wk", "wv"] {
                out.push((format!("{prefix}.att.{gate}"), vec![d, d]));
            }
        }
    }
    mlp(
        &mut out,
        "fusion",
        config.fused_dim(),
        &config.fusion_hidden,
    );
    let head_in = *config.fusion_hidden.last().unwrap_or(&config.fused_dim());
    out.push(("head.w".into(), vec![config.vocab_size, head_in]));
    out.push(("head.b".into(), vec![config.vocab_size]));
    Ok(out)
}

/// One modality branch: frame MLP plus optional attention block. With
/// attention the MLP runs frame-wise and pooling happens after attention;
/// without it the frames are mean-pooled first and the MLP sees one vector
/// per video.
#[derive(Debug, Clone)]
struct Branch {
    prefix: &'static str,
    in_dim: usize,
    fc: Vec<(LinearLayer, Relu)>,
    attention: Option<SelfAttentionBlock>,
    out_dim: usize,
    // (batch, seq_len) of the pending forward; consumed by backward.
    cache_bt: Option<(usize, usize)>,
}

impl Branch {
    fn build(
        prefix: &'static str,
        in_dim: usize,
        hidden: &[usize],
        with_attention: bool,
        rng: &mut Rng,
    ) -> Branch {
        let mut fc = Vec::new();
        let mut d = in_dim;
        for &h in hidden {
            fc.push((LinearLayer::new(d, h, rng), Relu::new()));
            d = h;
        }
        let attention = with_attention.then(|| SelfAttentionBlock::new(d, rng));
        Branch {
            prefix,
            in_dim,
            fc,
            attention,
            out_dim: d,
            cache_bt: None,
        }
    }

    /// `[B x T x in_dim]` -> `[B x out_dim]`.
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 3 {
            return Err(Error::RankError {
                expected: 3,
                got: input.rank(),
            });
        }
        let (b, t, din) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        if din != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} branch expects feature dim {}, got {din}",
                self.prefix, self.in_dim
            )));
        }
        self.cache_bt = Some((b, t));
        if let Some(att) = &mut self.attention {
            // Frame-wise MLP on the flattened frames, then per-video
            // attention and temporal mean.
            let mut h = input.reshape(&[b * t, din])?;
            for (lin, relu) in &mut self.fc {
                h = relu.forward(&lin.forward(&h)?)?;
            }
            let frames = h.reshape(&[b, t, self.out_dim])?;
            let mut rows = Vec::with_capacity(b);
            for e in 0..b {
                let attended = att.forward(&frames.slice0(e)?)?;
                rows.push(attended.reduce(Reduction::Mean, 0)?.data().to_vec());
            }
            Tensor::from_rows(&rows)
        } else {
            let mut rows = Vec::with_capacity(b);
            for e in 0..b {
                rows.push(input.slice0(e)?.reduce(Reduction::Mean, 0)?.data().to_vec());
            }
            let mut h = Tensor::from_rows(&rows)?;
            for (lin, relu) in &mut self.fc {
                h = relu.forward(&lin.forward(&h)?)?;
            }
            Ok(h)
        }
    }

    /// Accumulates parameter gradients for the pending forward. Input
    /// gradients stop here — features are data, not parameters.
    fn backward(&mut self, upstream: &Tensor) -> Result<()> {
        let (b, t) = self.cache_bt.take().ok_or(Error::BackwardBeforeForward)?;
        if let Some(att) = &mut self.attention {
            // Attention caches are a stack: examples were pushed 0..b, so
            // they must be popped b..0. Mean-pool backward spreads each
            // pooled-row gradient uniformly over the video's frames.
            let mut flat = Tensor::zeros(&[b * t, self.out_dim]);
            let inv_t = 1.0 / t as f64;
            for e in (0..b).rev() {
                let mut spread = Tensor::zeros(&[t, self.out_dim]);
                for i in 0..t {
                    for j in 0..self.out_dim {
                        spread.set2(i, j, upstream.at2(e, j) * inv_t);
                    }
                }
                let d_frames = att.backward(&spread)?;
                for i in 0..t {
                    for j in 0..self.out_dim {
                        flat.set2(e * t + i, j, d_frames.at2(i, j));
                    }
                }
            }
            let mut g = flat;
            for (lin, relu) in self.fc.iter_mut().rev() {
                g = lin.backward(&relu.backward(&g)?)?;
            }
        } else {
            let mut g = upstream.clone();
            for (lin, relu) in self.fc.iter_mut().rev() {
                g = lin.backward(&relu.backward(&g)?)?;
            }
        }
        Ok(())
    }

    /// Layers carrying parameters, with their registry name prefixes.
    fn param_layers_mut(&mut self) -> Vec<(String, &mut dyn Layer)> {
        let mut out: Vec<(String, &mut dyn Layer)> = Vec::new();
        for (i, (lin, _)) in self.fc.iter_mut().enumerate() {
            out.push((format!("{}.fc{i}", self.prefix), lin));
        }
        if let Some(att) = &mut self.attention {
            out.push((format!("{}.att", self.prefix), att));
        }
        out
    }

    fn param_layers(&self) -> Vec<(String, &dyn Layer)> {
        let mut out: Vec<(String, &dyn Layer)> = Vec::new();
        for (i, (lin, _)) in self.fc.iter().enumerate() {
            out.push((format!("{}.fc{i}", self.prefix), lin));
        }
        if let Some(att) = &self.attention {
            out.push((format!("{}.att", self.prefix), att));
        }
        out
    }

    fn clear_cache(&mut self) {
        self.cache_bt = None;
        for (lin, relu) in &mut self.fc {
            lin.clear_cache();
            relu.clear_cache();
        }
        if let Some(att) = &mut self.attention {
            att.clear_cache();
        }
    }

    fn relu_margins(&self, out: &mut Vec<f64>) {
        for (_, relu) in &self.fc {
            if let Some(m) = relu.cached_kink_margin() {
                out.push(m);
            }
        }
    }
}

/// A built classifier: modality branches plus the fusion MLP and sigmoid
/// output head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    visual: Option<Branch>,
    audio: Option<Branch>,
    fusion: Vec<(LinearLayer, Relu)>,
    head: LinearLayer,
    sigmoid: Sigmoid,
}

/// Builds a model with freshly initialized weights. All randomness comes
/// from `seed`, so equal seeds give byte-identical parameters.
pub fn build(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = Rng::from_seed(seed);
    // Construction order fixes both the registry order and which rng draws
    // initialize which tensor; it must never change across versions.
    let visual = config.arch.uses_visual().then(|| {
        Branch::build(
            "visual",
            config.visual_dim,
            &config.branch_hidden,
            config.arch.uses_attention(),
            &mut rng,
        )
    });
    let audio = config.arch.uses_audio().then(|| {
        Branch::build(
            "audio",
            config.audio_dim,
            &config.branch_hidden,
            config.arch.uses_attention(),
            &mut rng,
        )
    });
    let mut fusion = Vec::new();
    let mut d = config.fused_dim();
    for &h in &config.fusion_hidden {
        fusion.push((LinearLayer::new(d, h, &mut rng), Relu::new()));
        d = h;
    }
    let head = LinearLayer::new(d, config.vocab_size, &mut rng);
    Ok(Model {
        config: config.clone(),
        visual,
        audio,
        fusion,
        head,
        sigmoid: Sigmoid::new(),
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Batched forward pass: `[B x T x visual_dim]` and `[B x T x audio_dim]`
    /// to `[B x vocab]` probabilities, each strictly inside (0,1). A unimodal
    /// model never reads (or validates) the ignored modality's tensor.
    pub fn forward(&mut self, visual: &Tensor, audio: &Tensor) -> Result<Tensor> {
        // Any caches from a forward that was never backed through (e.g. an
        // evaluation pass) would otherwise leak into this one.
        self.clear_caches();
        let mut parts = Vec::new();
        let mut batch: Option<usize> = None;
        let mut check_batch = |b: usize| -> Result<()> {
            match batch {
                None => {
                    batch = Some(b);
                    Ok(())
                }
                Some(prev) if prev == b => Ok(()),
                Some(prev) => Err(Error::ShapeMismatch(format!(
                    "modality batch sizes differ: {prev} vs {b}"
                ))),
            }
        };
        if let Some(branch) = &mut self.visual {
            let out = branch.forward(visual)?;
            check_batch(out.shape()[0])?;
            parts.push(out);
        }
        if let Some(branch) = &mut self.audio {
            let out = branch.forward(audio)?;
            check_batch(out.shape()[0])?;
            parts.push(out);
        }
        let mut h = concat_cols(&parts)?;
        for (lin, relu) in &mut self.fusion {
            h = relu.forward(&lin.forward(&h)?)?;
        }
        self.sigmoid.forward(&self.head.forward(&h)?)
    }

    /// Accumulates dLoss/dParam for every registered parameter, given
    /// dLoss/dProbability from the objective. Requires a matching forward.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<()> {
        let g = self.sigmoid.backward(upstream)?;
        let mut g = self.head.backward(&g)?;
        for (lin, relu) in self.fusion.iter_mut().rev() {
            g = lin.backward(&relu.backward(&g)?)?;
        }
        let mut widths = Vec::new();
        if let Some(b) = &self.visual {
            widths.push(b.out_dim);
        }
        if let Some(b) = &self.audio {
            widths.push(b.out_dim);
        }
        let mut parts = split_cols(&g, &widths)?.into_iter();
        if let Some(branch) = &mut self.visual {
            branch.backward(&parts.next().unwrap())?;
        }
        if let Some(branch) = &mut self.audio {
            branch.backward(&parts.next().unwrap())?;
        }
        Ok(())
    }

    fn param_layers_mut(&mut self) -> Vec<(String, &mut dyn Layer)> {
        let mut out: Vec<(String, &mut dyn Layer)> = Vec::new();
        if let Some(b) = &mut self.visual {
            out.extend(b.param_layers_mut());
        }
        if let Some(b) = &mut self.audio {
            out.extend(b.param_layers_mut());
        }
        for (i, (lin, _)) in self.fusion.iter_mut().enumerate() {
            out.push((format!("fusion.fc{i}"), lin));
        }
        out.push(("head".to_string(), &mut self.head));
        out
    }

    fn param_layers(&self) -> Vec<(String, &dyn Layer)> {
        let mut out: Vec<(String, &dyn Layer)> = Vec::new();
        if let Some(b) = &self.visual {
            out.extend(b.param_layers());
        }
        if let Some(b) = &self.audio {
            out.extend(b.param_layers());
        }
        for (i, (lin, _)) in self.fusion.iter().enumerate() {
            out.push((format!("fusion.fc{i}"), lin));
        }
        out.push(("head".to_string(), &self.head));
        out
    }

    /// Parameter registry in deterministic order: visual branch, audio
    /// branch, fusion MLP, head; within a layer, the layer's own order
    /// (w before b; wq, wk, wv).
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in self.param_layers() {
            for (local, tensor) in layer.params() {
                out.push((format!("{name}.{local}"), tensor));
            }
        }
        out
    }

    /// Every parameter paired with its gradient, in registry order.
    pub fn params_and_grads_mut(&mut self) -> Vec<(String, &mut Tensor, &mut Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in self.param_layers_mut() {
            for (local, param, grad) in layer.params_and_grads_mut() {
                out.push((format!("{name}.{local}"), param, grad));
            }
        }
        out
    }

    /// Visits every parameter with its gradient, in registry order.
    pub fn visit_params_mut(
        &mut self,
        mut f: impl FnMut(&str, &mut Tensor, &mut Tensor) -> Result<()>,
    ) -> Result<()> {
        for (name, param, grad) in self.params_and_grads_mut() {
            f(&name, param, grad)?;
        }
        Ok(())
    }

    /// Total parameters actually held; equals [`param_count`] of the config.
    pub fn num_params(&self) -> u64 {
        self.params().iter().map(|(_, t)| t.len() as u64).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, layer) in self.param_layers_mut() {
            layer.zero_grads();
        }
    }

    pub fn clear_caches(&mut self) {
        if let Some(b) = &mut self.visual {
            b.clear_cache();
        }
        if let Some(b) = &mut self.audio {
            b.clear_cache();
        }
        for (lin, relu) in &mut self.fusion {
            lin.clear_cache();
            relu.clear_cache();
        }
        self.head.clear_cache();
        self.sigmoid.clear_cache();
    }

    /// Smallest |pre-activation| over every ReLU cache from the last
    /// forward; None when nothing is cached.
    fn min_relu_margin(&self) -> Option<f64> {
        let mut margins = Vec::new();
        if let Some(b) = &self.visual {
            b.relu_margins(&mut margins);
        }
        if let Some(b) = &self.audio {
            b.relu_margins(&mut margins);
        }
        for (_, relu) in &self.fusion {
            if let Some(m) = relu.cached_kink_margin() {
                margins.push(m);
            }
        }
        margins.into_iter().reduce(f64::min)
    }

    /// Writes all parameters to `path`:
    /// magic, version, then per tensor `u16` name length + name bytes +
    /// `u8` rank + `u32` dims + `f64` values, all little-endian, and a
    /// CRC-32 trailer over everything before it.
    pub fn save_weights(&self, path: &Path) -> Result<()> {
        let mut payload = Payload::new();
        payload.put_bytes(WEIGHTS_MAGIC);
        payload.put_u16(WEIGHTS_VERSION);
        for (name, tensor) in self.params() {
            payload.put_u16(name.len() as u16);
            payload.put_bytes(name.as_bytes());
            payload.put_bytes(&[tensor.rank() as u8]);
            for &dim in tensor.shape() {
                payload.put_u32(dim as u32);
            }
            for &v in tensor.data() {
                payload.put_f64(v);
            }
        }
        payload.write_with_trailer(std::fs::File::create(path)?)?;
        Ok(())
    }
}

/// Builds a model for `config` and fills its parameters from a weight file.
/// The file must list exactly the registry of this config, in order, with
/// matching shapes; the checksum and version are verified first.
pub fn load_weights(config: &ModelConfig, path: &Path) -> Result<Model> {
    let bytes = read_checked(path)?;
    let mut cur = Cursor::checked(&bytes, "weights")?;
    if cur.get_bytes(4)? != WEIGHTS_MAGIC {
        return Err(Error::CorruptFile(format!(
            "{} is not a weights file (bad magic)",
            path.display()
        )));
    }
    let version = cur.get_u16()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            expected: WEIGHTS_VERSION,
            got: version,
        });
    }
    let mut model = build(config, 0)?;
    model.visit_params_mut(|name, param, _| {
        let name_len = cur.get_u16()? as usize;
        let stored = std::str::from_utf8(cur.get_bytes(name_len)?)
            .map_err(|_| Error::CorruptFile("weights file has non-UTF-8 name".into()))?;
        if stored != name {
            return Err(Error::ShapeMismatch(format!(
                "weights file entry {stored:?} does not match expected parameter {name:?}"
            )));
        }
        let rank = cur.get_bytes(1)?[0] as usize;
        if rank != param.rank() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name}: file rank {rank} vs expected {}",
                param.rank()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.get_u32()? as usize);
        }
        if dims != param.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name}: file shape {dims:?} vs expected {:?}",
                param.shape()
            )));
        }
        for v in param.data_mut() {
            *v = cur.get_f64()?;
        }
        Ok(())
    })?;
    cur.finish()?;
    Ok(model)
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    assert!(!parts.is_empty(), "concat_cols needs at least one part");
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let rows = parts[0].shape()[0];
    for p in parts {
        if p.rank() != 2 || p.shape()[0] != rows {
            return Err(Error::ShapeMismatch(
                "concat_cols parts must be rank 2 with equal row counts".into(),
            ));
        }
    }
    let cols: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[rows, cols]);
    for i in 0..rows {
        let mut j0 = 0;
        for p in parts {
            for j in 0..p.shape()[1] {
                out.set2(i, j0 + j, p.at2(i, j));
            }
            j0 += p.shape()[1];
        }
    }
    Ok(out)
}

/// Inverse of [`concat_cols`]: splits columns into the given widths.
fn split_cols(t: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = widths.iter().sum();
    if t.rank() != 2 || t.shape()[1] != total {
        return Err(Error::ShapeMismatch(format!(
            "split_cols: tensor shape {:?} vs widths {widths:?}",
            t.shape()
        )));
    }
    let rows = t.shape()[0];
    let mut out = Vec::with_capacity(widths.len());
    let mut j0 = 0;
    for &w in widths {
        let mut part = Tensor::zeros(&[rows, w]);
        for i in 0..rows {
            for j in 0..w {
                part.set2(i, j, t.at2(i, j0 + j));
            }
        }
        out.push(part);
        j0 += w;
    }
    Ok(out)
}

/// End-to-end gradient check of a tiny model under the training objective:
/// analytic parameter gradients from one forward/backward against central
/// finite differences of the loss, per parameter tensor.
///
/// Probe inputs, labels, and weights are redrawn (up to 40 attempts) until
/// the forward pass is comfortably differentiable — every ReLU
/// pre-activation at least 1e-4 from its kink and probabilities well inside
/// (0,1) — since finite differences are meaningless across those folds.
pub fn gradcheck_model(arch: Arch, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    run_gradcheck_model(arch, tolerance, seed, false)
}

/// Same as [`gradcheck_model`] but doubles the analytic gradients before
/// comparing, to demonstrate the checker rejects wrong gradients.
pub fn gradcheck_model_corrupted(arch: Arch, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    run_gradcheck_model(arch, tolerance, seed, true)
}

fn run_gradcheck_model(
    arch: Arch,
    tolerance: f64,
    seed: u64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let config = ModelConfig {
        arch,
        visual_dim: 4,
        audio_dim: 2,
        vocab_size: 3,
        seq_len: 2,
        branch_hidden: vec![3],
        fusion_hidden: vec![3],
        ..ModelConfig::default()
    };
    let batch = 2;
    let labels = vec![LabelSet::new(vec![0, 2]), LabelSet::new(vec![1])];

    let mut chosen: Option<(Model, Tensor, Tensor)> = None;
    for attempt in 0..40 {
        let draw = derive_seed(seed, attempt);
        let mut model = build(&config, draw)?;
        let mut rng = Rng::from_seed(derive_seed(draw, 1));
        let visual = probe_features(&mut rng, &[batch, config.seq_len, config.visual_dim]);
        let audio = probe_features(&mut rng, &[batch, config.seq_len, config.audio_dim]);
        let probs = model.forward(&visual, &audio)?;
        let margin = model.min_relu_margin().unwrap_or(f64::INFINITY);
        let interior = probs
            .data()
            .iter()
            .all(|&p| (1e-6..=1.0 - 1e-6).contains(&p));
        if margin > 1e-4 && interior {
            chosen = Some((model, visual, audio));
            break;
        }
    }
    let (mut model, visual, audio) = chosen.expect("no differentiable probe found in 40 attempts");

    // Analytic gradients.
    let probs = model.forward(&visual, &audio)?;
    let (_, d_probs) = bce_loss(&probs, &labels)?;
    model.zero_grads();
    model.backward(&d_probs)?;
    let mut analytic: Vec<(String, Vec<f64>)> = {
        let mut out = Vec::new();
        for (name, layer) in model.param_layers() {
            for (local, grad) in layer.grads() {
                out.push((format!("{name}.{local}"), grad.data().to_vec()));
            }
        }
        out
    };
    if corrupt {
        for (_, grads) in &mut analytic {
            grads.iter_mut().for_each(|g| *g *= 2.0);
        }
    }

    // Central differences, one parameter entry at a time.
    let h = GRADCHECK_STEP;
    let mut entries = Vec::new();
    for (name, grads) in &analytic {
        let mut max_rel = 0.0f64;
        for idx in 0..grads.len() {
            let mut loss_at = |delta: f64| -> Result<f64> {
                nudge_param(&mut model, name, idx, delta)?;
                let probs = model.forward(&visual, &audio)?;
                let (loss, _) = bce_loss(&probs, &labels)?;
                nudge_param(&mut model, name, idx, -delta)?;
                Ok(loss)
            };
            let plus = loss_at(h)?;
            let minus = loss_at(-h)?;
            let numeric = (plus - minus) / (2.0 * h);
            max_rel = max_rel.max(relative_error(grads[idx], numeric));
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: max_rel,
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}

/// Kink-avoiding random features (same convention as the layer checks).
fn probe_features(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mut x = rng.uniform(-1.0, 1.0);
        while x.abs() < 0.01 {
            x = rng.uniform(-1.0, 1.0);
        }
        *v = x;
    }
    t
}

fn nudge_param(model: &mut Model, target: &str, idx: usize, delta: f64) -> Result<()> {
    model.visit_params_mut(|name, param, _| {
        if name == target {
            param.data_mut()[idx] += delta;
        }
        Ok(())
    })
}
