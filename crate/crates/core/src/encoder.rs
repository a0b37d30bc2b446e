//! Spatiotemporal transformer encoder with separable positional embeddings,
//! the two projection heads and the linear classifier.
//!
//! A clip of `T × H × W` is cut into `(T/t)·(H/h)·(W/w)` non-overlapping
//! voxel blocks, each flattened and linearly projected to `D`. Token
//! `(l, m, n)` receives `e_temp(l) + e_spat(m, n)`. A pre-norm transformer
//! stack follows; the clip representation is the mean over final token
//! states.
//!
//! Gradients are derived by hand. `encode_backward` re-runs the forward pass
//! with an activation trace, so callers only keep `h` between the two passes.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::VideoClip;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{gemm, linear, linear_backward, Tensor, View, ViewMut};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// `(T, H, W)` of the clips fed to the encoder.
    pub input: [usize; 3],
    /// `(t, h, w)` voxel block size.
    pub patch: [usize; 3],
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Output width of both projection heads.
    pub proj_dim: usize,
    pub num_classes: usize,
    /// Standardize each clip to zero mean and unit variance before patchify.
    pub standardize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Laptop-scale configuration.
    pub fn desk() -> Self {
        Self {
            input: [16, 64, 64],
            patch: [2, 8, 8],
            embed_dim: 96,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 128,
            num_classes: 2,
            standardize: true,
        }
    }

    /// ViT-B sized configuration on 50 × 224 × 224 clips.
    pub fn full_scale() -> Self {
        Self {
            input: [50, 224, 224],
            patch: [2, 16, 16],
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            proj_dim: 128,
            num_classes: 2,
            standardize: true,
        }
    }

    /// Small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            input: [8, 32, 32],
            patch: [2, 8, 8],
            embed_dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 128,
            num_classes: 2,
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [t, h, w] = self.input;
        let [pt, ph, pw] = self.patch;
        if [t, h, w, pt, ph, pw].contains(&0) {
            return Err(Error::Config("input and patch dims must be positive".into()));
        }
        if t % pt != 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::Config(format!(
                "input {t}x{h}x{w} not divisible by patch {pt}x{ph}x{pw}"
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 || self.proj_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config("mlp_ratio, proj_dim must be > 0 and num_classes >= 2".into()));
        }
        Ok(())
    }

    /// `(T/t, H/h, W/w)`.
    pub fn grid(&self) -> (usize, usize, usize) {
        (
            self.input[0] / self.patch[0],
            self.input[1] / self.patch[1],
            self.input[2] / self.patch[2],
        )
    }

    pub fn n_tokens(&self) -> usize {
        let (a, b, c) = self.grid();
        a * b * c
    }

    pub fn spatial_cells(&self) -> usize {
        let (_, b, c) = self.grid();
        b * c
    }

    pub fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn patch_dims(&self) -> (usize, usize, usize) {
        (self.patch[0], self.patch[1], self.patch[2])
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.input[0], self.input[1], self.input[2])
    }
}

/// Splits a `T × H × W` volume into flattened voxel blocks.
///
/// Tokens are ordered temporal-major, then block row, then block column.
/// Inside a token, voxels are ordered `(dt, dy, dx)`.
pub fn patchify(frames: &[f32], dims: (usize, usize, usize), patch: (usize, usize, usize)) -> Result<Vec<f64>> {
    let (t, h, w) = dims;
    let (pt, ph, pw) = patch;
    if pt == 0 || ph == 0 || pw == 0 || t % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Config(format!(
            "clip {t}x{h}x{w} not divisible by patch {pt}x{ph}x{pw}"
        )));
    }
    if frames.len() != t * h * w {
        return Err(Error::Config("payload does not match dims".into()));
    }
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    let mut out = Vec::with_capacity(t * h * w);
    for l in 0..gt {
        for m in 0..gh {
            for n in 0..gw {
                for dt in 0..pt {
                    for dy in 0..ph {
                        let row = (l * pt + dt) * h * w + (m * ph + dy) * w + n * pw;
                        out.extend(frames[row..row + pw].iter().map(|&v| v as f64));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
/// Shifts and scales `x` in place to zero mean and unit variance.
pub fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-6).sqrt();
    x.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

pub fn unpatchify(tokens: &[f64], dims: (usize, usize, usize), patch: (usize, usize, usize)) -> Vec<f32> {
    let (t, h, w) = dims;
    let (pt, ph, pw) = patch;
    let (gt, gh, gw) = (t / pt, h / ph, w / pw);
    let mut out = vec![0.0f32; t * h * w];
    let mut it = tokens.iter();
    for l in 0..gt {
        for m in 0..gh {
            for n in 0..gw {
                for dt in 0..pt {
                    for dy in 0..ph {
                        let row = (l * pt + dt) * h * w + (m * ph + dy) * w + n * pw;
                        for v in &mut out[row..row + pw] {
                            *v = *it.next().expect("token count") as f32;
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn zeros(i: usize, o: usize) -> Self {
        Self { w: Tensor::zeros(&[i, o]), b: Tensor::zeros(&[o]) }
    }

    fn xavier(i: usize, o: usize, r: &mut rng::Rng) -> Self {
        let lim = (6.0 / (i + o) as f64).sqrt();
        let mut l = Self::zeros(i, o);
        l.w.data.iter_mut().for_each(|x| *x = r.gen_range(-lim..lim));
        l
    }

    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{p}.w"), &self.w);
        f(format!("{p}.b"), &self.b);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(format!("{p}.w"), &mut self.w);
        f(format!("{p}.b"), &mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self { gamma: Tensor::filled(&[d], 1.0), beta: Tensor::zeros(&[d]) }
    }

    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{p}.gamma"), &self.gamma);
        f(format!("{p}.beta"), &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        f(format!("{p}.gamma"), &mut self.gamma);
        f(format!("{p}.beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.ln1.visit(&format!("{p}.ln1"), f);
        self.qkv.visit(&format!("{p}.qkv"), f);
        self.proj.visit(&format!("{p}.proj"), f);
        self.ln2.visit(&format!("{p}.ln2"), f);
        self.fc1.visit(&format!("{p}.fc1"), f);
        self.fc2.visit(&format!("{p}.fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.ln1.visit_mut(&format!("{p}.ln1"), f);
        self.qkv.visit_mut(&format!("{p}.qkv"), f);
        self.proj.visit_mut(&format!("{p}.proj"), f);
        self.ln2.visit_mut(&format!("{p}.ln2"), f);
        self.fc1.visit_mut(&format!("{p}.fc1"), f);
        self.fc2.visit_mut(&format!("{p}.fc2"), f);
    }
}

/// Two-layer perceptron `D → D → proj_dim` with GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Which projection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Spatial,
    Temporal,
}

/// Intermediate values of a head forward pass.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Head {
    pub fn forward(&self, h: &[f64]) -> (Vec<f64>, HeadTrace) {
        let pre = linear(h, 1, &self.fc1.w, &self.fc1.b);
        let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
        let z = linear(&act, 1, &self.fc2.w, &self.fc2.b);
        (z, HeadTrace { pre, act })
    }

    /// Accumulates into `grad`, returns `dL/dh`.
    pub fn backward(&self, h: &[f64], trace: &HeadTrace, dz: &[f64], grad: &mut Head) -> Vec<f64> {
        let da = linear_backward(&trace.act, 1, &self.fc2.w, dz, &mut grad.fc2.w, &mut grad.fc2.b, true);
        let dpre: Vec<f64> = da.iter().zip(&trace.pre).map(|(g, &x)| g * gelu_grad(x)).collect();
        linear_backward(h, 1, &self.fc1.w, &dpre, &mut grad.fc1.w, &mut grad.fc1.b, true)
    }

    fn visit<'a>(&'a self, p: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fc1.visit(&format!("{p}.fc1"), f);
        self.fc2.visit(&format!("{p}.fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, p: &str, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.fc1.visit_mut(&format!("{p}.fc1"), f);
        self.fc2.visit_mut(&format!("{p}.fc2"), f);
    }
}

/// Every learnable array plus the config that shapes them.
///
/// The same type doubles as a gradient accumulator (see [`EncoderParams::zeros`]).
/// Parameter names are dotted paths prefixed with `encoder.`, `head_sc.`,
/// `head_tc.` or `classifier.`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub patch_embed: Linear,
    /// `(T/t) × D`.
    pub temporal_pos: Tensor,
    /// `((H/h)·(W/w)) × D`.
    pub spatial_pos: Tensor,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head_sc: Head,
    pub head_tc: Head,
    pub classifier: Linear,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl EncoderParams {
    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let (gt, _, _) = config.grid();
        let head = || Head { fc1: Linear::zeros(d, d), fc2: Linear::zeros(d, config.proj_dim) };
        let ln = || LayerNorm { gamma: Tensor::zeros(&[d]), beta: Tensor::zeros(&[d]) };
        Ok(Self {
            config: config.clone(),
            patch_embed: Linear::zeros(config.patch_volume(), d),
            temporal_pos: Tensor::zeros(&[gt, d]),
            spatial_pos: Tensor::zeros(&[config.spatial_cells(), d]),
            blocks: (0..config.depth)
                .map(|_| Block {
                    ln1: ln(),
                    qkv: Linear::zeros(d, 3 * d),
                    proj: Linear::zeros(d, d),
                    ln2: ln(),
                    fc1: Linear::zeros(d, config.hidden_dim()),
                    fc2: Linear::zeros(config.hidden_dim(), d),
                })
                .collect(),
            norm: ln(),
            head_sc: head(),
            head_tc: head(),
            classifier: Linear::zeros(d, config.num_classes),
        })
    }

    /// Random initialization, every value representable in `f32`.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, &[0xE2C0]);
        let d = config.embed_dim;
        let hid = config.hidden_dim();
        let pos = Normal::new(0.0, 0.02).unwrap();
        let mut p = Self::zeros(config)?;
        p.patch_embed = Linear::xavier(config.patch_volume(), d, &mut r);
        p.temporal_pos.data.iter_mut().for_each(|x| *x = pos.sample(&mut r));
        p.spatial_pos.data.iter_mut().for_each(|x| *x = pos.sample(&mut r));
        for b in &mut p.blocks {
            *b = Block {
                ln1: LayerNorm::new(d),
                qkv: Linear::xavier(d, 3 * d, &mut r),
                proj: Linear::xavier(d, d, &mut r),
                ln2: LayerNorm::new(d),
                fc1: Linear::xavier(d, hid, &mut r),
                fc2: Linear::xavier(hid, d, &mut r),
            };
        }
        p.norm = LayerNorm::new(d);
        p.head_sc = Head { fc1: Linear::xavier(d, d, &mut r), fc2: Linear::xavier(d, config.proj_dim, &mut r) };
        p.head_tc = Head { fc1: Linear::xavier(d, d, &mut r), fc2: Linear::xavier(d, config.proj_dim, &mut r) };
        let cls = Normal::new(0.0, 0.01).unwrap();
        p.classifier.w.data.iter_mut().for_each(|x| *x = cls.sample(&mut r));
        p.for_each_mut(|_, t| t.data.iter_mut().for_each(|x| *x = round_f32(*x)));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.patch_embed.visit("encoder.patch_embed", f);
        f("encoder.temporal_pos".into(), &self.temporal_pos);
        f("encoder.spatial_pos".into(), &self.spatial_pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("encoder.blocks.{i}"), f);
        }
        self.norm.visit("encoder.norm", f);
        self.head_sc.visit("head_sc", f);
        self.head_tc.visit("head_tc", f);
        self.classifier.visit("classifier", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.patch_embed.visit_mut("encoder.patch_embed", f);
        f("encoder.temporal_pos".into(), &mut self.temporal_pos);
        f("encoder.spatial_pos".into(), &mut self.spatial_pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.blocks.{i}"), f);
        }
        self.norm.visit_mut("encoder.norm", f);
        self.head_sc.visit_mut("head_sc", f);
        self.head_tc.visit_mut("head_tc", f);
        self.classifier.visit_mut("classifier", f);
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        self.visit_mut(&mut |n, t| f(&n, t));
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_mut(|_, t| t.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// Copies the `encoder.*` tensors from `other`.
    pub fn copy_encoder_from(&mut self, other: &Self) {
        let src = other.tensors();
        for ((name, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            if name.starts_with("encoder.") {
                dst.data.copy_from_slice(&s.data);
            }
        }
    }

    /// Full `N × D` positional table, `e_temp(l) + e_spat(m, n)` per token.
    pub fn positional_table(&self) -> Vec<f64> {
        let d = self.config.embed_dim;
        let s = self.config.spatial_cells();
        let (gt, _, _) = self.config.grid();
        let mut out = Vec::with_capacity(gt * s * d);
        for l in 0..gt {
            let te = &self.temporal_pos.data[l * d..(l + 1) * d];
            for c in 0..s {
                let se = &self.spatial_pos.data[c * d..(c + 1) * d];
                out.extend(te.iter().zip(se).map(|(a, b)| a + b));
            }
        }
        out
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.dims() != self.config.input_dims() {
            return Err(Error::Config(format!(
                "clip dims {:?} do not match encoder input {:?}",
                clip.dims(),
                self.config.input
            )));
        }
        Ok(())
    }

    /// Token embeddings: linear projection of each voxel block plus its
    /// positional embedding.
    pub fn embed_tokens(&self, tokens: &[f64]) -> Vec<f64> {
        let n = self.config.n_tokens();
        let mut x = linear(tokens, n, &self.patch_embed.w, &self.patch_embed.b);
        for (xi, p) in x.iter_mut().zip(self.positional_table()) {
            *xi += p;
        }
        x
    }

    /// Clip representation `h` (length `D`).
    pub fn encode(&self, clip: &VideoClip) -> Result<Vec<f64>> {
        self.check_clip(clip)?;
        Ok(self.forward(clip, false).0)
    }

    /// Accumulates `∂(dh · h)/∂θ` for the encoder tensors into `grads` and
    /// returns `h`.
    pub fn encode_backward(&self, clip: &VideoClip, dh: &[f64], grads: &mut EncoderParams) -> Result<Vec<f64>> {
        let (h, trace) = self.encode_traced(clip)?;
        self.backward(trace, dh, grads);
        Ok(h)
    }

    /// `h` plus the activations needed by [`EncoderParams::backward_traced`].
    pub fn encode_traced(&self, clip: &VideoClip) -> Result<(Vec<f64>, EncoderTrace)> {
        self.check_clip(clip)?;
        let (h, trace) = self.forward(clip, true);
        Ok((h, trace.expect("trace requested")))
    }

    pub fn backward_traced(&self, trace: EncoderTrace, dh: &[f64], grads: &mut EncoderParams) {
        self.backward(trace, dh, grads);
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        match kind {
            HeadKind::Spatial => &self.head_sc,
            HeadKind::Temporal => &self.head_tc,
        }
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Head {
        match kind {
            HeadKind::Spatial => &mut self.head_sc,
            HeadKind::Temporal => &mut self.head_tc,
        }
    }

    /// `z = g_sc(h)`, not normalized.
    pub fn project_spatial(&self, h: &[f64]) -> Vec<f64> {
        self.head_sc.forward(h).0
    }

    /// `M = g_tc(h)`, not normalized.
    pub fn project_temporal(&self, h: &[f64]) -> Vec<f64> {
        self.head_tc.forward(h).0
    }

    pub fn classify_logits(&self, h: &[f64]) -> Vec<f64> {
        linear(h, 1, &self.classifier.w, &self.classifier.b)
    }

    /// Class probabilities; index 1 is movement.
    pub fn classify(&self, h: &[f64]) -> Vec<f64> {
        softmax(&self.classify_logits(h))
    }

    /// Accumulates classifier gradients for `dlogits`, returns `dL/dh`.
    pub fn classifier_backward(&self, h: &[f64], dlogits: &[f64], grads: &mut EncoderParams) -> Vec<f64> {
        let g = &mut grads.classifier;
        linear_backward(h, 1, &self.classifier.w, dlogits, &mut g.w, &mut g.b, true)
    }

    fn forward(&self, clip: &VideoClip, keep: bool) -> (Vec<f64>, Option<EncoderTrace>) {
        let c = &self.config;
        let n = c.n_tokens();
        let d = c.embed_dim;
        let mut tokens = patchify(clip.frames(), clip.dims(), c.patch_dims()).expect("dims checked");
        if c.standardize {
            standardize(&mut tokens);
        }
        let mut x = self.embed_tokens(&tokens);
        let mut blocks = Vec::new();
        for b in &self.blocks {
            let (a, ln1) = layer_norm(&x, n, d, &b.ln1);
            let qkv = linear(&a, n, &b.qkv.w, &b.qkv.b);
            let (o, probs) = attention(&qkv, n, d, c.heads);
            let att = linear(&o, n, &b.proj.w, &b.proj.b);
            let x_mid: Vec<f64> = x.iter().zip(&att).map(|(u, v)| u + v).collect();
            let (bn, ln2) = layer_norm(&x_mid, n, d, &b.ln2);
            let u = linear(&bn, n, &b.fc1.w, &b.fc1.b);
            let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
            let mlp = linear(&g, n, &b.fc2.w, &b.fc2.b);
            let x_out: Vec<f64> = x_mid.iter().zip(&mlp).map(|(u, v)| u + v).collect();
            if keep {
                blocks.push(BlockTrace { ln1, a, qkv, probs, o, ln2, bn, u, g });
            }
            x = x_out;
        }
        let (y, ln_f) = layer_norm(&x, n, d, &self.norm);
        let mut h = vec![0.0; d];
        for row in y.chunks_exact(d) {
            for (hi, v) in h.iter_mut().zip(row) {
                *hi += v;
            }
        }
        h.iter_mut().for_each(|v| *v /= n as f64);
        let trace = keep.then(|| EncoderTrace { tokens, blocks, ln_f });
        (h, trace)
    }

    fn backward(&self, trace: EncoderTrace, dh: &[f64], grads: &mut EncoderParams) {
        let c = &self.config;
        let n = c.n_tokens();
        let d = c.embed_dim;
        let dy: Vec<f64> = (0..n).flat_map(|_| dh.iter().map(|g| g / n as f64)).collect();
        let mut dx = layer_norm_backward(&dy, n, d, &trace.ln_f, &self.norm, &mut grads.norm);
        for (i, (b, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let gb = &mut grads.blocks[i];
            // feed-forward branch
            let dg = linear_backward(&bt.g, n, &b.fc2.w, &dx, &mut gb.fc2.w, &mut gb.fc2.b, true);
            let du: Vec<f64> = dg.iter().zip(&bt.u).map(|(g, &u)| g * gelu_grad(u)).collect();
            let dbn = linear_backward(&bt.bn, n, &b.fc1.w, &du, &mut gb.fc1.w, &mut gb.fc1.b, true);
            let dln2 = layer_norm_backward(&dbn, n, d, &bt.ln2, &b.ln2, &mut gb.ln2);
            dx.iter_mut().zip(&dln2).for_each(|(a, g)| *a += g);
            // attention branch
            let d_o = linear_backward(&bt.o, n, &b.proj.w, &dx, &mut gb.proj.w, &mut gb.proj.b, true);
            let dqkv = attention_backward(&bt.qkv, &bt.probs, &d_o, n, d, c.heads);
            let da = linear_backward(&bt.a, n, &b.qkv.w, &dqkv, &mut gb.qkv.w, &mut gb.qkv.b, true);
            let dln1 = layer_norm_backward(&da, n, d, &bt.ln1, &b.ln1, &mut gb.ln1);
            dx.iter_mut().zip(&dln1).for_each(|(a, g)| *a += g);
        }
        linear_backward(
            &trace.tokens,
            n,
            &self.patch_embed.w,
            &dx,
            &mut grads.patch_embed.w,
            &mut grads.patch_embed.b,
            false,
        );
        let s = c.spatial_cells();
        for (tok, row) in dx.chunks_exact(d).enumerate() {
            let (l, cell) = (tok / s, tok % s);
            for (j, g) in row.iter().enumerate() {
                grads.temporal_pos.data[l * d + j] += g;
                grads.spatial_pos.data[cell * d + j] += g;
            }
        }
    }
}

struct LnTrace {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct BlockTrace {
    ln1: LnTrace,
    a: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    ln2: LnTrace,
    bn: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

/// Activations of one forward pass.
pub struct EncoderTrace {
    tokens: Vec<f64>,
    blocks: Vec<BlockTrace>,
    ln_f: LnTrace,
}

fn layer_norm(x: &[f64], n: usize, d: usize, ln: &LayerNorm) -> (Vec<f64>, LnTrace) {
    let mut y = Vec::with_capacity(n * d);
    let mut xhat = Vec::with_capacity(n * d);
    let mut rstd = Vec::with_capacity(n);
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for (j, v) in row.iter().enumerate() {
            let xh = (v - mean) * r;
            xhat.push(xh);
            y.push(xh * ln.gamma.data[j] + ln.beta.data[j]);
        }
    }
    (y, LnTrace { xhat, rstd })
}

fn layer_norm_backward(dy: &[f64], n: usize, d: usize, tr: &LnTrace, ln: &LayerNorm, g: &mut LayerNorm) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dxh = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &tr.xhat[i * d..(i + 1) * d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..d {
            g.gamma.data[j] += dyr[j] * xh[j];
            g.beta.data[j] += dyr[j];
            dxh[j] = dyr[j] * ln.gamma.data[j];
            m1 += dxh[j];
            m2 += dxh[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let r = tr.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxh[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Multi-head self-attention over packed `qkv` (`n × 3d`). Returns the
/// concatenated head outputs (`n × d`) and the attention maps (`heads × n × n`).
fn attention(qkv: &[f64], n: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut o = vec![0.0; n * d];
    let mut probs = vec![0.0; heads * n * n];
    let packed = View::mat(qkv, n, 3 * d);
    for (hh, p) in probs.chunks_exact_mut(n * n).enumerate() {
        let q = packed.cols(hh * hd, hd);
        let k = packed.cols(d + hh * hd, hd);
        let v = packed.cols(2 * d + hh * hd, hd);
        gemm(scale, q, k.t(), 0.0, ViewMut::mat(p, n, n));
        for row in p.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        gemm(1.0, View::mat(p, n, n), v, 0.0, ViewMut::mat(&mut o, n, d).cols(hh * hd, hd));
    }
    (o, probs)
}

fn attention_backward(qkv: &[f64], probs: &[f64], d_o: &[f64], n: usize, d: usize, heads: usize) -> Vec<f64> {
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dqkv = vec![0.0; n * 3 * d];
    let mut dp = vec![0.0; n * n];
    let packed = View::mat(qkv, n, 3 * d);
    let dov = View::mat(d_o, n, d);
    for (hh, p) in probs.chunks_exact(n * n).enumerate() {
        let q = packed.cols(hh * hd, hd);
        let k = packed.cols(d + hh * hd, hd);
        let v = packed.cols(2 * d + hh * hd, hd);
        let doh = dov.cols(hh * hd, hd);
        let pv = View::mat(p, n, n);
        gemm(1.0, doh, v.t(), 0.0, ViewMut::mat(&mut dp, n, n));
        gemm(1.0, pv.t(), doh, 0.0, ViewMut::mat(&mut dqkv, n, 3 * d).cols(2 * d + hh * hd, hd));
        for (drow, prow) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (g, &pp) in drow.iter_mut().zip(prow) {
                *g = pp * (*g - dot);
            }
        }
        let ds = View::mat(&dp, n, n);
        gemm(scale, ds, k, 0.0, ViewMut::mat(&mut dqkv, n, 3 * d).cols(hh * hd, hd));
        gemm(scale, ds.t(), q, 0.0, ViewMut::mat(&mut dqkv, n, 3 * d).cols(d + hh * hd, hd));
    }
    dqkv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_clip(c: &EncoderConfig, seed: u64) -> VideoClip {
        let mut r = rng::stream(seed, &[]);
        let [t, h, w] = c.input;
        let f = (0..t * h * w).map(|_| r.gen::<f32>()).collect();
        VideoClip::new(f, (t, h, w), 10.0, "x", 0.0).unwrap()
    }

    #[test]
    fn full_scale_geometry_has_4900_patches() {
        let c = EncoderConfig::full_scale();
        c.validate().unwrap();
        assert_eq!(c.grid(), (25, 14, 14));
        assert_eq!(c.n_tokens(), 4900);
        let desk = EncoderConfig::desk();
        assert_eq!(desk.n_tokens(), 512);
    }

    #[test]
    fn patchify_round_trips_and_orders_raster() {
        let c = EncoderConfig { input: [4, 8, 8], patch: [2, 4, 4], ..EncoderConfig::tiny() };
        let clip = random_clip(&c, 1);
        let tok = patchify(clip.frames(), clip.dims(), c.patch_dims()).unwrap();
        assert_eq!(tok.len(), 8 * 32);
        assert_eq!(unpatchify(&tok, clip.dims(), c.patch_dims()), clip.frames());
        // token 1 is (l=0, m=0, n=1): first voxel at frame 0, row 0, column 4
        assert_eq!(tok[32], clip.frames()[4] as f64);
        // token 4 is (l=1, m=0, n=0): first voxel at frame 2
        assert_eq!(tok[4 * 32], clip.frames()[2 * 64] as f64);
        assert!(patchify(clip.frames(), (4, 8, 8), (3, 4, 4)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { embed_dim: 30, heads: 4, ..EncoderConfig::tiny() }.validate().is_err());
        assert!(EncoderConfig { input: [7, 32, 32], ..EncoderConfig::tiny() }.validate().is_err());
    }

    #[test]
    fn shapes_follow_config() {
        for (d, heads, depth) in [(16, 2, 1), (32, 4, 2), (24, 3, 1)] {
            let c = EncoderConfig { embed_dim: d, heads, depth, ..EncoderConfig::tiny() };
            let p = EncoderParams::init(&c, 0).unwrap();
            let h = p.encode(&random_clip(&c, 2)).unwrap();
            assert_eq!(h.len(), d);
            assert_eq!(p.project_spatial(&h).len(), 128);
            assert_eq!(p.project_temporal(&h).len(), 128);
            assert_eq!(p.classify(&h).len(), 2);
        }
    }

    #[test]
    fn zero_tables_give_bare_projection_and_table_is_outer_sum() {
        let c = EncoderConfig::tiny();
        let mut p = EncoderParams::init(&c, 3).unwrap();
        let clip = random_clip(&c, 4);
        let tok = patchify(clip.frames(), clip.dims(), c.patch_dims()).unwrap();
        let table = p.positional_table();
        let d = c.embed_dim;
        let s = c.spatial_cells();
        for tokn in 0..c.n_tokens() {
            let (l, cell) = (tokn / s, tokn % s);
            for j in 0..d {
                let e = p.temporal_pos.data[l * d + j] + p.spatial_pos.data[cell * d + j];
                assert_eq!(table[tokn * d + j], e);
            }
        }
        p.temporal_pos.data.iter_mut().for_each(|x| *x = 0.0);
        p.spatial_pos.data.iter_mut().for_each(|x| *x = 0.0);
        let bare = linear(&tok, c.n_tokens(), &p.patch_embed.w, &p.patch_embed.b);
        assert_eq!(p.embed_tokens(&tok), bare);
    }

    #[test]
    fn encode_is_deterministic_and_checks_dims() {
        let c = EncoderConfig::tiny();
        let p = EncoderParams::init(&c, 5).unwrap();
        let clip = random_clip(&c, 6);
        assert_eq!(p.encode(&clip).unwrap(), p.encode(&clip).unwrap());
        let wrong = VideoClip::zeros((8, 16, 16), 10.0);
        assert!(matches!(p.encode(&wrong), Err(Error::Config(_))));
    }

    #[test]
    fn heads_and_classifier_edge_cases() {
        let c = EncoderConfig::tiny();
        let z = EncoderParams::zeros(&c).unwrap();
        let h = vec![0.3; c.embed_dim];
        assert!(z.project_spatial(&h).iter().all(|&v| v == 0.0));
        assert_eq!(z.classify(&h), vec![0.5, 0.5]);
        let p = EncoderParams::init(&c, 1).unwrap();
        let y = p.classify(&h);
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let logits = p.classify_logits(&h);
        let shifted: Vec<f64> = logits.iter().map(|v| v + 7.0).collect();
        let argmax = |v: &[f64]| if v[1] > v[0] { 1 } else { 0 };
        assert_eq!(argmax(&softmax(&logits)), argmax(&softmax(&shifted)));
    }

    #[test]
    fn init_values_are_f32_exact() {
        let p = EncoderParams::init(&EncoderConfig::tiny(), 9).unwrap();
        for (_, t) in p.tensors() {
            assert!(t.data.iter().all(|&x| x as f32 as f64 == x));
        }
    }

    /// Finite-difference oracle for a scalar functional of the encoder output.
    fn fd_check(kind: &str) {
        let c = EncoderConfig { depth: 1, ..EncoderConfig::tiny() };
        let params = EncoderParams::init(&c, 11).unwrap();
        let clip = random_clip(&c, 12);
        let mut r = rng::stream(13, &[]);
        let probe: Vec<f64> = (0..128).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |p: &EncoderParams| -> f64 {
            let h = p.encode(&clip).unwrap();
            let out = match kind {
                "h" => h,
                "sc" => p.project_spatial(&h),
                _ => p.project_temporal(&h),
            };
            out.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let mut grads = params.zeros_like();
        let h = params.encode(&clip).unwrap();
        let head_kind = if kind == "sc" { HeadKind::Spatial } else { HeadKind::Temporal };
        let dh = if kind == "h" {
            probe[..c.embed_dim].to_vec()
        } else {
            let (_, tr) = params.head(head_kind).forward(&h);
            let head = params.head(head_kind).clone();
            head.backward(&h, &tr, &probe, grads.head_mut(head_kind))
        };
        params.encode_backward(&clip, &dh, &mut grads).unwrap();
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let mut checked = 0;
        for (ti, name) in names.iter().enumerate() {
            if name.starts_with("classifier") || (kind != "sc" && name.starts_with("head_sc")) || (kind != "tc" && name.starts_with("head_tc")) {
                continue;
            }
            let len = params.tensors()[ti].1.len();
            for _ in 0..3 {
                let idx = r.gen_range(0..len);
                let eps = 1e-5;
                let mut pp = params.clone();
                pp.tensors_mut()[ti].1.data[idx] += eps;
                let up = loss(&pp);
                pp.tensors_mut()[ti].1.data[idx] -= 2.0 * eps;
                let dn = loss(&pp);
                let num = (up - dn) / (2.0 * eps);
                let ana = grads.tensors()[ti].1.data[idx];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{idx}]: analytic {ana} vs numeric {num}");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        fd_check("h");
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        fd_check("sc");
        fd_check("tc");
    }
}
