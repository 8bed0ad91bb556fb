//! Network assembly: encoder, BiSS blocks, EPI-Mamba / SA-Mamba, MGI
//! modules, the spatial-angular modulator, the pixel-shuffle reconstructor,
//! and a tiny softmax-attention teacher for feature distillation.
//!
//! Feature grids flow between modules as `[B, U, V, H, W, C]` tensors; every
//! module preserves that contract. The super-resolved output rides on a
//! bicubic global residual, and all residual branches emit zero at
//! zero-initialized weights, so a zeroed network reproduces the bicubic
//! baseline exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lf::{tokenize, untokenize, GridDims, Layout, LightField4D, TokenSequenceBatch};
use crate::scan::{bi_scan, ScanAlgo, SsmProj};
use crate::synth::upscale;
use crate::tensor::{Elem, ParamStore, Tensor};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    None,
    TinyAttention,
}

/// Which network a parameter store belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlfsr,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_n_mgi")]
    pub n_mgi: usize,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default = "default_scale")]
    pub scale: usize,
    #[serde(default = "default_angular")]
    pub angular: usize,
    #[serde(default = "default_biss_expand")]
    pub biss_expand: usize,
    #[serde(default = "default_ca_reduction")]
    pub ca_reduction: usize,
    #[serde(default = "default_dwconv_k")]
    pub dwconv_k: usize,
    #[serde(default = "default_true")]
    pub share_epi_weights: bool,
    #[serde(default = "default_teacher")]
    pub teacher: TeacherKind,
    #[serde(default)]
    pub scan_algo: ScanAlgo,
    #[serde(default = "default_true")]
    pub use_epi_mamba: bool,
    #[serde(default = "default_true")]
    pub use_sa_mamba: bool,
    #[serde(default = "default_true")]
    pub use_sam: bool,
}

fn default_channels() -> usize {
    32
}
fn default_n_mgi() -> usize {
    3
}
fn default_state_dim() -> usize {
    8
}
fn default_scale() -> usize {
    2
}
fn default_angular() -> usize {
    5
}
fn default_biss_expand() -> usize {
    2
}
fn default_ca_reduction() -> usize {
    4
}
fn default_dwconv_k() -> usize {
    4
}
fn default_true() -> bool {
    true
}
fn default_teacher() -> TeacherKind {
    TeacherKind::TinyAttention
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: default_channels(),
            n_mgi: default_n_mgi(),
            state_dim: default_state_dim(),
            scale: default_scale(),
            angular: default_angular(),
            biss_expand: default_biss_expand(),
            ca_reduction: default_ca_reduction(),
            dwconv_k: default_dwconv_k(),
            share_epi_weights: true,
            teacher: default_teacher(),
            scan_algo: ScanAlgo::default(),
            use_epi_mamba: true,
            use_sa_mamba: true,
            use_sam: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels % self.ca_reduction != 0 {
            return Err(Error::Config(format!(
                "channels {} must be divisible by ca_reduction {}",
                self.channels, self.ca_reduction
            )));
        }
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::Config(format!(
                "scale must be 2 or 4, got {}",
                self.scale
            )));
        }
        if self.n_mgi < 1 {
            return Err(Error::Config("n_mgi must be >= 1".into()));
        }
        if self.channels < 1 || self.state_dim < 1 || self.biss_expand < 1 || self.dwconv_k < 1 {
            return Err(Error::Config("extents must be >= 1".into()));
        }
        Ok(())
    }

    fn expanded(&self) -> usize {
        self.biss_expand * self.channels
    }
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

struct Init<'a, E: Elem> {
    rng: ChaCha8Rng,
    ps: &'a mut ParamStore<E>,
}

impl<'a, E: Elem> Init<'a, E> {
    fn uniform(&mut self, path: &str, shape: &[usize], bound: f64) {
        let n: usize = shape.iter().product();
        let data: Vec<E> = (0..n)
            .map(|_| E::of_f64(self.rng.random_range(-bound..bound)))
            .collect();
        self.ps.insert(path, Tensor::var(data, shape));
    }

    fn constant(&mut self, path: &str, shape: &[usize], value: f64) {
        let n: usize = shape.iter().product();
        self.ps
            .insert(path, Tensor::var(vec![E::of_f64(value); n], shape));
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(&format!("{prefix}.weight"), &[fan_in, fan_out], bound);
        self.uniform(&format!("{prefix}.bias"), &[fan_out], bound);
    }

    fn conv2d(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        self.uniform(&format!("{prefix}.weight"), &[cout, cin, k, k], bound);
        self.uniform(&format!("{prefix}.bias"), &[cout], bound);
    }

    fn conv2d_zero(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.constant(&format!("{prefix}.weight"), &[cout, cin, k, k], 0.0);
        self.constant(&format!("{prefix}.bias"), &[cout], 0.0);
    }

    fn layer_norm(&mut self, prefix: &str, c: usize) {
        self.constant(&format!("{prefix}.gamma"), &[c], 1.0);
        self.constant(&format!("{prefix}.beta"), &[c], 0.0);
    }

    fn ssm(&mut self, prefix: &str, channels: usize, n: usize) {
        // Diagonal A = -(1..n) per channel, stored as a_log.
        let a_log: Vec<E> = (0..channels)
            .flat_map(|_| (0..n).map(|j| E::of_f64(((j + 1) as f64).ln())))
            .collect();
        self.ps
            .insert(&format!("{prefix}.a_log"), Tensor::var(a_log, &[channels, n]));
        let bound = 1.0 / (channels as f64).sqrt();
        self.uniform(&format!("{prefix}.delta.weight"), &[channels, channels], bound);
        // softplus(bias) uniform in [1e-3, 1e-1].
        let bias: Vec<E> = (0..channels)
            .map(|_| {
                let target: f64 = self.rng.random_range(1e-3..1e-1);
                E::of_f64((target.exp() - 1.0).ln())
            })
            .collect();
        self.ps
            .insert(&format!("{prefix}.delta.bias"), Tensor::var(bias, &[channels]));
        self.uniform(&format!("{prefix}.b.weight"), &[channels, n], bound);
        self.uniform(&format!("{prefix}.c.weight"), &[channels, n], bound);
        self.constant(&format!("{prefix}.d"), &[channels], 1.0);
    }

    fn biss(&mut self, prefix: &str, cfg: &ModelConfig) {
        let c = cfg.channels;
        let e = cfg.expanded();
        self.layer_norm(&format!("{prefix}.ln1"), c);
        self.layer_norm(&format!("{prefix}.ln2"), c);
        self.linear(&format!("{prefix}.v_proj"), c, e);
        self.linear(&format!("{prefix}.g_proj"), c, e);
        self.linear(&format!("{prefix}.out_proj"), e, c);
        let bound = 1.0 / (cfg.dwconv_k as f64).sqrt();
        self.uniform(&format!("{prefix}.dwconv.weight"), &[e, cfg.dwconv_k], bound);
        self.uniform(&format!("{prefix}.dwconv.bias"), &[e], bound);
        self.ssm(&format!("{prefix}.ssm_fwd"), e, cfg.state_dim);
        self.ssm(&format!("{prefix}.ssm_bwd"), e, cfg.state_dim);
        let mid = c / cfg.ca_reduction;
        self.linear(&format!("{prefix}.ca.fc1"), c, mid);
        self.linear(&format!("{prefix}.ca.fc2"), mid, c);
    }

    fn subspace_branch(&mut self, prefix: &str, cfg: &ModelConfig) {
        let c = cfg.channels;
        self.biss(&format!("{prefix}.biss"), cfg);
        self.linear(&format!("{prefix}.conv"), c, c);
    }
}

/// Deterministic seeded initialization of the student network.
pub fn init_params<E: Elem>(cfg: &ModelConfig, seed: u64) -> ParamStore<E> {
    let mut ps = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        ps: &mut ps,
    };
    let c = cfg.channels;
    init.conv2d("encoder.conv_in", 1, c, 3);
    init.conv2d("encoder.res1", c, c, 3);
    init.conv2d("encoder.res2", c, c, 3);
    for i in 0..cfg.n_mgi {
        if cfg.use_epi_mamba {
            init.subspace_branch(&format!("mgi.{i}.epi"), cfg);
            if !cfg.share_epi_weights {
                init.subspace_branch(&format!("mgi.{i}.epi_w"), cfg);
            }
        }
        if cfg.use_sa_mamba {
            init.subspace_branch(&format!("mgi.{i}.sa_spatial"), cfg);
            init.subspace_branch(&format!("mgi.{i}.sa_angular"), cfg);
        }
        if cfg.use_sam {
            init.conv2d_zero(&format!("sam.{i}.spatial"), c, c, 1);
            init.conv2d_zero(&format!("sam.{i}.angular"), c, c, 1);
        }
    }
    // Zero-initialized head: the untrained network reproduces its bicubic
    // residual exactly.
    init.conv2d_zero("rec.conv", c, cfg.scale * cfg.scale, 3);
    ps
}

/// Deterministic seeded initialization of the attention teacher.
pub fn init_teacher_params<E: Elem>(cfg: &ModelConfig, seed: u64) -> ParamStore<E> {
    let mut ps = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        ps: &mut ps,
    };
    let c = cfg.channels;
    init.conv2d("encoder.conv_in", 1, c, 3);
    init.conv2d("encoder.res1", c, c, 3);
    init.conv2d("encoder.res2", c, c, 3);
    for i in 0..cfg.n_mgi {
        for sub in ["epi_h", "epi_w"] {
            let p = format!("attn.{i}.{sub}");
            init.layer_norm(&format!("{p}.ln"), c);
            init.linear(&format!("{p}.q"), c, c);
            init.linear(&format!("{p}.k"), c, c);
            init.linear(&format!("{p}.v"), c, c);
            init.linear(&format!("{p}.o"), c, c);
        }
    }
    init.conv2d_zero("rec.conv", c, cfg.scale * cfg.scale, 3);
    ps
}

/// Sets every parameter outside `encoder.*` to zero (including norm gains),
/// collapsing all residual branches to the identity.
pub fn zero_non_encoder<E: Elem>(ps: &mut ParamStore<E>) {
    for path in ps.paths() {
        if !path.starts_with("encoder.") {
            let shape = ps.get(&path).shape().to_vec();
            let n: usize = shape.iter().product();
            ps.replace(&path, Tensor::var(vec![E::zero(); n], &shape));
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct Ctx<'a, E: Elem> {
    ps: &'a ParamStore<E>,
    cfg: &'a ModelConfig,
}

impl<'a, E: Elem> Ctx<'a, E> {
    fn t(&self, path: &str) -> Tensor<E> {
        self.ps.get(path).clone()
    }

    fn eps(&self) -> E {
        E::of_f64(LN_EPS)
    }

    fn linear(&self, prefix: &str, x: &Tensor<E>) -> Tensor<E> {
        let w = self.t(&format!("{prefix}.weight"));
        let b = self.t(&format!("{prefix}.bias"));
        let out_c = w.shape()[1];
        let mut bshape = vec![1usize; x.rank() - 1];
        bshape.push(out_c);
        x.matmul(&w).add(&b.reshape(&bshape))
    }

    fn layer_norm(&self, prefix: &str, x: &Tensor<E>) -> Tensor<E> {
        x.layer_norm(
            &self.t(&format!("{prefix}.gamma")),
            &self.t(&format!("{prefix}.beta")),
            self.eps(),
        )
    }

    fn ssm_proj(&self, prefix: &str) -> SsmProj<E> {
        SsmProj {
            a_log: self.t(&format!("{prefix}.a_log")),
            delta_w: self.t(&format!("{prefix}.delta.weight")),
            delta_b: self.t(&format!("{prefix}.delta.bias")),
            b_w: self.t(&format!("{prefix}.b.weight")),
            c_w: self.t(&format!("{prefix}.c.weight")),
            d: self.t(&format!("{prefix}.d")),
        }
    }
}

/// Channel attention: squeeze over `L`, two-layer bottleneck, sigmoid gate
/// broadcast back over the sequence.
fn channel_attention<E: Elem>(ctx: &Ctx<E>, prefix: &str, t: &Tensor<E>) -> Tensor<E> {
    let (g, c) = (t.shape()[0], t.shape()[2]);
    let pooled = t.reduce_mean(&[1], false);
    let hidden = ctx.linear(&format!("{prefix}.fc1"), &pooled).relu();
    let weights = ctx.linear(&format!("{prefix}.fc2"), &hidden).sigmoid();
    t.mul(&weights.reshape(&[g, 1, c]))
}

/// Transformer-style block: bidirectional selective scan for token mixing,
/// channel attention for channel mixing, both behind residuals.
fn biss_block<E: Elem>(ctx: &Ctx<E>, prefix: &str, t: &Tensor<E>) -> Tensor<E> {
    let normed = ctx.layer_norm(&format!("{prefix}.ln1"), t);
    let value = ctx.linear(&format!("{prefix}.v_proj"), &normed);
    let gate = ctx.linear(&format!("{prefix}.g_proj"), &normed);
    let value = value
        .conv1d_depthwise(
            &ctx.t(&format!("{prefix}.dwconv.weight")),
            &ctx.t(&format!("{prefix}.dwconv.bias")),
        )
        .silu();
    let scanned = bi_scan(
        &value,
        &ctx.ssm_proj(&format!("{prefix}.ssm_fwd")),
        &ctx.ssm_proj(&format!("{prefix}.ssm_bwd")),
        ctx.cfg.scan_algo,
    );
    let mixed = scanned.mul(&gate.silu());
    let u = t.add(&ctx.linear(&format!("{prefix}.out_proj"), &mixed));
    let normed2 = ctx.layer_norm(&format!("{prefix}.ln2"), &u);
    u.add(&channel_attention(ctx, &format!("{prefix}.ca"), &normed2))
}

/// BiSS block at a given parameter prefix over `[G, L, C]` tokens.
pub fn biss_forward<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    prefix: &str,
    t: &Tensor<E>,
) -> Tensor<E> {
    biss_block(&Ctx { ps, cfg }, prefix, t)
}

/// Channel attention at a given parameter prefix over `[G, L, C]` tokens.
pub fn channel_attention_forward<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    prefix: &str,
    t: &Tensor<E>,
) -> Tensor<E> {
    channel_attention(&Ctx { ps, cfg }, prefix, t)
}

/// One subspace pass: tokenize, BiSS, pointwise conv, residual, untokenize.
fn subspace_pass<E: Elem>(
    ctx: &Ctx<E>,
    prefix: &str,
    f: &Tensor<E>,
    layout: Layout,
) -> Tensor<E> {
    let tokens = tokenize(f, layout);
    let mixed = biss_block(ctx, &format!("{prefix}.biss"), &tokens.data);
    let conv = ctx.linear(&format!("{prefix}.conv"), &mixed);
    let enhanced = conv.add(&tokens.data);
    untokenize(&TokenSequenceBatch {
        layout,
        dims: tokens.dims,
        data: enhanced,
    })
}

/// EPI-Mamba: BiSS over EPI-H, then over EPI-W. With shared weights both
/// passes use the same parameters.
pub fn epi_mamba<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    i: usize,
    f: &Tensor<E>,
) -> Tensor<E> {
    let ctx = Ctx { ps, cfg };
    let p_h = format!("mgi.{i}.epi");
    let p_w = if cfg.share_epi_weights {
        p_h.clone()
    } else {
        format!("mgi.{i}.epi_w")
    };
    let f1 = subspace_pass(&ctx, &p_h, f, Layout::EpiH);
    subspace_pass(&ctx, &p_w, &f1, Layout::EpiW)
}

/// SA-Mamba: BiSS over the spatial subspace, then the angular subspace, with
/// separate parameters.
pub fn sa_mamba<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    i: usize,
    f: &Tensor<E>,
) -> Tensor<E> {
    let ctx = Ctx { ps, cfg };
    let f1 = subspace_pass(&ctx, &format!("mgi.{i}.sa_spatial"), f, Layout::Spatial);
    subspace_pass(&ctx, &format!("mgi.{i}.sa_angular"), &f1, Layout::Angular)
}

/// MGI module: cascaded EPI-Mamba and SA-Mamba (either half can be toggled
/// off for ablations).
pub fn mgi_module<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    i: usize,
    f: &Tensor<E>,
) -> Tensor<E> {
    let mut cur = f.clone();
    if cfg.use_epi_mamba {
        cur = epi_mamba(ps, cfg, i, &cur);
    }
    if cfg.use_sa_mamba {
        cur = sa_mamba(ps, cfg, i, &cur);
    }
    cur
}

fn spatial_view<E: Elem>(f: &Tensor<E>, d: &GridDims) -> Tensor<E> {
    f.permute(&[0, 1, 2, 5, 3, 4])
        .reshape(&[d.b * d.u * d.v, d.c, d.h, d.w])
}

fn spatial_unview<E: Elem>(x: &Tensor<E>, d: &GridDims) -> Tensor<E> {
    x.reshape(&[d.b, d.u, d.v, d.c, d.h, d.w])
        .permute(&[0, 1, 2, 4, 5, 3])
}

fn angular_view<E: Elem>(f: &Tensor<E>, d: &GridDims) -> Tensor<E> {
    f.permute(&[0, 3, 4, 5, 1, 2])
        .reshape(&[d.b * d.h * d.w, d.c, d.u, d.v])
}

fn angular_unview<E: Elem>(x: &Tensor<E>, d: &GridDims) -> Tensor<E> {
    x.reshape(&[d.b, d.h, d.w, d.c, d.u, d.v])
        .permute(&[0, 4, 5, 1, 2, 3])
}

/// Spatial-angular modulator: sigmoid attention from a 1x1 conv over the
/// spatial view, residual-modulate, then the same over the angular view.
pub fn sam_module<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    i: usize,
    f: &Tensor<E>,
) -> Tensor<E> {
    let ctx = Ctx { ps, cfg };
    let d = GridDims::of(f);
    let vs = spatial_view(f, &d);
    let attn_s = vs
        .conv2d(
            &ctx.t(&format!("sam.{i}.spatial.weight")),
            &ctx.t(&format!("sam.{i}.spatial.bias")),
            0,
        )
        .sigmoid();
    let modulated = vs.mul(&attn_s).add(&vs);
    let f_tilde = spatial_unview(&modulated, &d);
    let va = angular_view(&f_tilde, &d);
    let attn_a = va
        .conv2d(
            &ctx.t(&format!("sam.{i}.angular.weight")),
            &ctx.t(&format!("sam.{i}.angular.bias")),
            0,
        )
        .sigmoid();
    let modulated = va.mul(&attn_a).add(&va);
    angular_unview(&modulated, &d)
}

/// Shallow feature encoder: per-view 3x3 conv into `C` channels followed by
/// one residual block, shared across views.
pub fn encoder_init<E: Elem>(ps: &ParamStore<E>, cfg: &ModelConfig, x: &Tensor<E>) -> Tensor<E> {
    let ctx = Ctx { ps, cfg };
    let mut d = GridDims::of(x);
    assert_eq!(
        d.c, 1,
        "encoder expects a single input channel, got {:?}",
        x.shape()
    );
    let nchw = spatial_view(x, &d);
    let f = nchw.conv2d(
        &ctx.t("encoder.conv_in.weight"),
        &ctx.t("encoder.conv_in.bias"),
        1,
    );
    let r = f
        .conv2d(&ctx.t("encoder.res1.weight"), &ctx.t("encoder.res1.bias"), 1)
        .silu()
        .conv2d(&ctx.t("encoder.res2.weight"), &ctx.t("encoder.res2.bias"), 1);
    let f = f.add(&r);
    d.c = cfg.channels;
    spatial_unview(&f, &d)
}

/// Reconstruction head: per-view 3x3 conv to `s^2` sub-pixel channels,
/// pixel shuffle, plus the bicubic-upsampled input as a global residual.
pub fn reconstructor<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    f: &Tensor<E>,
    bicubic: &Tensor<E>,
) -> Tensor<E> {
    let ctx = Ctx { ps, cfg };
    let d = GridDims::of(f);
    let s = cfg.scale;
    let nchw = spatial_view(f, &d);
    let sub = nchw.conv2d(&ctx.t("rec.conv.weight"), &ctx.t("rec.conv.bias"), 1);
    let up = sub.pixel_shuffle(s);
    let mut d_out = d;
    d_out.c = 1;
    d_out.h = d.h * s;
    d_out.w = d.w * s;
    let grid = spatial_unview(&up, &d_out);
    assert_eq!(
        grid.shape(),
        bicubic.shape(),
        "reconstructor output does not match the residual"
    );
    grid.add(bicubic)
}

/// Full forward pass. Returns `(I_SR, f_deep)`; the deep features feed the
/// distillation loss.
pub fn mlfsr_forward<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    input: &Tensor<E>,
    bicubic: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let mut f = encoder_init(ps, cfg, input);
    for i in 0..cfg.n_mgi {
        f = mgi_module(ps, cfg, i, &f);
        if cfg.use_sam {
            f = sam_module(ps, cfg, i, &f);
        }
    }
    let i_sr = reconstructor(ps, cfg, &f, bicubic);
    (i_sr, f)
}

// ---------------------------------------------------------------------------
// Tiny attention teacher
// ---------------------------------------------------------------------------

/// Single-head softmax self-attention over a token batch `[G, L, C]`.
fn self_attention<E: Elem>(ctx: &Ctx<E>, prefix: &str, t: &Tensor<E>) -> Tensor<E> {
    let c = t.shape()[2];
    let q = ctx.linear(&format!("{prefix}.q"), t);
    let k = ctx.linear(&format!("{prefix}.k"), t);
    let v = ctx.linear(&format!("{prefix}.v"), t);
    let scores = q
        .batch_matmul(&k.permute(&[0, 2, 1]))
        .scale(E::of_f64(1.0 / (c as f64).sqrt()));
    let attn = scores.softmax_last();
    ctx.linear(&format!("{prefix}.o"), &attn.batch_matmul(&v))
}

fn attention_pass<E: Elem>(
    ctx: &Ctx<E>,
    prefix: &str,
    f: &Tensor<E>,
    layout: Layout,
) -> Tensor<E> {
    let tokens = tokenize(f, layout);
    let normed = ctx.layer_norm(&format!("{prefix}.ln"), &tokens.data);
    let out = tokens.data.add(&self_attention(ctx, prefix, &normed));
    untokenize(&TokenSequenceBatch {
        layout,
        dims: tokens.dims,
        data: out,
    })
}

/// Teacher forward: same encoder/reconstructor contract as the student, but
/// the trunk applies full softmax self-attention over EPI-H then EPI-W
/// sequences. Returns `(I_SR, f_deep)`.
pub fn teacher_forward<E: Elem>(
    ps: &ParamStore<E>,
    cfg: &ModelConfig,
    input: &Tensor<E>,
    bicubic: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let ctx = Ctx { ps, cfg };
    let mut f = encoder_init(ps, cfg, input);
    for i in 0..cfg.n_mgi {
        f = attention_pass(&ctx, &format!("attn.{i}.epi_h"), &f, Layout::EpiH);
        f = attention_pass(&ctx, &format!("attn.{i}.epi_w"), &f, Layout::EpiW);
    }
    let i_sr = reconstructor(ps, cfg, &f, bicubic);
    (i_sr, f)
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

/// Builds the network input and its bicubic-upsampled residual from LR light
/// fields.
pub fn prepare_batch<E: Elem>(lrs: &[&LightField4D], scale: usize) -> (Tensor<E>, Tensor<E>) {
    let input = LightField4D::batch_to_tensor::<E>(lrs);
    let ups: Vec<LightField4D> = lrs.iter().map(|lf| upscale(lf, scale)).collect();
    let refs: Vec<&LightField4D> = ups.iter().collect();
    let bicubic = LightField4D::batch_to_tensor::<E>(&refs);
    (input, bicubic)
}
