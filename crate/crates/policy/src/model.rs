//! The action-chunking transformer: a strided-conv backbone, a pre-norm
//! transformer encoder/decoder, and a CVAE style encoder used in training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use viewplan_core::dataset::DatasetStats;
use viewplan_core::sim::Observation;

use crate::error::{PolicyError, Result};
use crate::params::{Init, Params};
use crate::real::Real;
use crate::tape::{ConvGeom, Tape, Tensor, Var};

pub const ACTION_DIM: usize = 6;
pub const IMAGE_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub chunk_size: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub latent_dim: usize,
    pub backbone_channels: Vec<usize>,
    /// `[height, width]`
    pub image_size: [usize; 2],
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Depth is clipped to `[0, depth_max]` meters and scaled to `[0, 1]`.
    pub depth_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            chunk_size: 5,
            hidden_dim: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            latent_dim: 16,
            backbone_channels: vec![16, 32, 64, 64],
            image_size: [64, 64],
            ffn_dim: 256,
            dropout: 0.1,
            depth_max: 1.0,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            chunk_size: 2,
            hidden_dim: 8,
            n_heads: 1,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            latent_dim: 2,
            backbone_channels: vec![4, 4, 4, 4],
            image_size: [8, 8],
            ffn_dim: 8,
            dropout: 0.0,
            depth_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PolicyError::Config(m));
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1".into());
        }
        if self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return bad(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.hidden_dim == 0 || self.latent_dim == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone needs at least one stage with positive channels".into());
        }
        if self.image_size.contains(&0) {
            return bad("image size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.depth_max > 0.0) {
            return bad("depth_max must be positive".into());
        }
        Ok(())
    }

    /// Feature-map size after the backbone.
    pub fn feature_grid(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.image_size[0], self.image_size[1]);
        for _ in &self.backbone_channels {
            let g = ConvGeom::new(h, w, 1);
            h = g.out_h;
            w = g.out_w;
        }
        (h, w)
    }

    pub fn n_image_tokens(&self) -> usize {
        let (h, w) = self.feature_grid();
        h * w
    }
}

/// Network input: pixel-major RGB-D (`[H*W, 4]`) and the normalized pose delta.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput<T> {
    pub image: Tensor<T>,
    pub pose_delta: [T; ACTION_DIM],
}

impl<T: Real> PolicyInput<T> {
    pub fn from_observation(
        obs: &Observation,
        stats: &DatasetStats,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let [h, w] = cfg.image_size;
        if obs.height != h || obs.width != w {
            return Err(PolicyError::ImageSize {
                expected: [h, w],
                found: [obs.height, obs.width],
            });
        }
        let mut data = Vec::with_capacity(h * w * IMAGE_CHANNELS);
        for p in 0..h * w {
            for c in 0..3 {
                data.push(T::lit(obs.rgb[3 * p + c].clamp(0.0, 1.0) as f64));
            }
            data.push(T::lit(
                (obs.depth[p] as f64).clamp(0.0, cfg.depth_max) / cfg.depth_max,
            ));
        }
        let delta = stats.normalize_delta(&obs.pose_delta.to_array());
        let input = Self {
            image: Tensor::from_vec(h * w, IMAGE_CHANNELS, data),
            pose_delta: delta.map(T::lit),
        };
        if !input
            .image
            .data
            .iter()
            .chain(&input.pose_delta)
            .all(|v| v.is_finite())
        {
            return Err(PolicyError::NonFiniteInput);
        }
        Ok(input)
    }
}

/// Sinusoidal features of one position over `dim` channels.
pub fn sinusoid<T: Real>(pos: f64, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); dim];
    for i in 0..dim / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        out[2 * i] = T::lit((pos * freq).sin());
        out[2 * i + 1] = T::lit((pos * freq).cos());
    }
    out
}

pub fn sinusoid_table<T: Real>(n: usize, dim: usize) -> Tensor<T> {
    Tensor::from_vec(
        n,
        dim,
        (0..n).flat_map(|i| sinusoid(i as f64, dim)).collect(),
    )
}

/// 2-D encoding: first half of the channels encodes the row, second half the column.
pub fn sinusoid_2d<T: Real>(h: usize, w: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            data.extend(sinusoid::<T>(y as f64, half));
            data.extend(sinusoid::<T>(x as f64, dim - half));
        }
    }
    Tensor::from_vec(h * w, dim, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EncoderLayer {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DecoderLayer {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross_attn: Attention,
    ln3: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    convs: Vec<Linear>,
    proj: Linear,
    delta_proj: Linear,
    z_proj: Linear,
    delta_pos: usize,
    z_pos: usize,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    head1: Linear,
    head2: Linear,
    style_cls: usize,
    style_delta: Linear,
    style_action: Linear,
    style_layers: Vec<EncoderLayer>,
    style_norm: Norm,
    style_out: Linear,
}

struct Builder<'a, T> {
    params: Params<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.linear_bound(name, fan_in, fan_out, bound)
    }

    fn linear_bound(&mut self, name: &str, fan_in: usize, fan_out: usize, bound: f64) -> Linear {
        Linear {
            w: self.params.add(
                format!("{name}.w"),
                fan_in,
                fan_out,
                Init::Uniform(bound),
                self.rng,
            ),
            b: self
                .params
                .add(format!("{name}.b"), 1, fan_out, Init::Zeros, self.rng),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self
                .params
                .add(format!("{name}.g"), 1, d, Init::Ones, self.rng),
            b: self
                .params
                .add(format!("{name}.b"), 1, d, Init::Zeros, self.rng),
        }
    }

    fn embedding(&mut self, name: &str, rows: usize, d: usize) -> usize {
        self.params
            .add(name.to_string(), rows, d, Init::Uniform(0.1), self.rng)
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn encoder_layer(&mut self, name: &str, d: usize, f: usize) -> EncoderLayer {
        EncoderLayer {
            ln1: self.norm(&format!("{name}.ln1"), d),
            attn: self.attention(&format!("{name}.attn"), d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, f),
            ff2: self.linear(&format!("{name}.ff2"), f, d),
        }
    }

    fn decoder_layer(&mut self, name: &str, d: usize, f: usize) -> DecoderLayer {
        DecoderLayer {
            ln1: self.norm(&format!("{name}.ln1"), d),
            self_attn: self.attention(&format!("{name}.self"), d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            cross_attn: self.attention(&format!("{name}.cross"), d),
            ln3: self.norm(&format!("{name}.ln3"), d),
            ff1: self.linear(&format!("{name}.ff1"), d, f),
            ff2: self.linear(&format!("{name}.ff2"), f, d),
        }
    }
}

fn build_layout<T: Real>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (Layout, Params<T>) {
    let d = cfg.hidden_dim;
    let f = cfg.ffn_dim;
    let mut b = Builder {
        params: Params::new(),
        rng,
    };
    let mut convs = Vec::new();
    let mut c_in = IMAGE_CHANNELS;
    for (i, &c_out) in cfg.backbone_channels.iter().enumerate() {
        let fan_in = 9 * c_in;
        convs.push(b.linear_bound(
            &format!("backbone.{i}"),
            fan_in,
            c_out,
            (6.0 / fan_in as f64).sqrt(),
        ));
        c_in = c_out;
    }
    let proj = b.linear("backbone.proj", c_in, d);
    let delta_proj = b.linear("delta_proj", ACTION_DIM, d);
    let z_proj = b.linear("z_proj", cfg.latent_dim, d);
    let delta_pos = b.embedding("delta_pos", 1, d);
    let z_pos = b.embedding("z_pos", 1, d);
    let encoder = (0..cfg.n_encoder_layers)
        .map(|i| b.encoder_layer(&format!("encoder.{i}"), d, f))
        .collect();
    let encoder_norm = b.norm("encoder.norm", d);
    let decoder = (0..cfg.n_decoder_layers)
        .map(|i| b.decoder_layer(&format!("decoder.{i}"), d, f))
        .collect();
    let decoder_norm = b.norm("decoder.norm", d);
    let head1 = b.linear("head.1", d, d);
    let head2 = b.linear_bound("head.2", d, ACTION_DIM, 0.1 / (d as f64).sqrt());
    let style_cls = b.embedding("style.cls", 1, d);
    let style_delta = b.linear("style.delta", ACTION_DIM, d);
    let style_action = b.linear("style.action", ACTION_DIM, d);
    let style_layers = (0..cfg.n_encoder_layers)
        .map(|i| b.encoder_layer(&format!("style.{i}"), d, f))
        .collect();
    let style_norm = b.norm("style.norm", d);
    let style_out = b.linear("style.out", d, 2 * cfg.latent_dim);
    let layout = Layout {
        convs,
        proj,
        delta_proj,
        z_proj,
        delta_pos,
        z_pos,
        encoder,
        encoder_norm,
        decoder,
        decoder_norm,
        head1,
        head2,
        style_cls,
        style_delta,
        style_action,
        style_layers,
        style_norm,
        style_out,
    };
    (layout, b.params)
}

/// Dropout state for one forward pass; inactive when `rng` is `None`.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    fn apply<T: Real>(&mut self, t: &mut Tape<T>, x: Var) -> Var {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - self.p));
                let n = t.value(x).len();
                let mask = (0..n)
                    .map(|_| {
                        if rng.gen::<f64>() < self.p {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                t.mul_const(x, mask)
            }
            _ => x,
        }
    }
}

/// Where the style variable comes from on a forward pass.
pub enum Style<'a, T> {
    /// Inference: `z = 0`.
    Zero,
    Fixed(&'a [T]),
    /// Training: encode the target chunk and sample `z = mean + exp(log_var/2)·eps`.
    Encode {
        actions: &'a Tensor<T>,
        mask: &'a [bool],
        eps: &'a [T],
    },
}

pub struct ForwardOut {
    /// `k x 6` chunk in normalized action space.
    pub chunk: Var,
    pub mean: Option<Var>,
    pub log_var: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub cfg: ModelConfig,
    pub params: Params<T>,
    layout: Layout,
}

fn linear<T: Real>(t: &mut Tape<T>, x: Var, l: Linear) -> Var {
    let w = t.param(l.w);
    let b = t.param(l.b);
    let y = t.matmul(x, w);
    t.add_bias(y, b)
}

fn norm<T: Real>(t: &mut Tape<T>, x: Var, n: Norm) -> Var {
    let g = t.param(n.g);
    let b = t.param(n.b);
    t.layer_norm(x, g, b)
}

fn attention<T: Real>(
    t: &mut Tape<T>,
    queries: Var,
    keys: Var,
    a: Attention,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Var {
    let q = linear(t, queries, a.q);
    let k = linear(t, keys, a.k);
    let v = linear(t, keys, a.v);
    let d = t.value(q).cols;
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                t.slice_cols(q, h * dh, dh),
                t.slice_cols(k, h * dh, dh),
                t.slice_cols(v, h * dh, dh),
            )
        };
        let scores = t.matmul_bt(qh, kh);
        let scores = t.scale(scores, scale);
        let p = t.softmax_rows(scores, key_mask);
        outs.push(t.matmul(p, vh));
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        t.concat_cols(&outs)
    };
    linear(t, cat, a.o)
}

fn feed_forward<T: Real>(
    t: &mut Tape<T>,
    x: Var,
    l1: Linear,
    l2: Linear,
    drop: &mut Dropout,
) -> Var {
    let h = linear(t, x, l1);
    let h = t.relu(h);
    let h = drop.apply(t, h);
    linear(t, h, l2)
}

fn encoder_layer<T: Real>(
    t: &mut Tape<T>,
    x: Var,
    l: &EncoderLayer,
    heads: usize,
    mask: Option<&[bool]>,
    drop: &mut Dropout,
) -> Var {
    let n = norm(t, x, l.ln1);
    let a = attention(t, n, n, l.attn, heads, mask);
    let a = drop.apply(t, a);
    let x = t.add(x, a);
    let n = norm(t, x, l.ln2);
    let f = feed_forward(t, n, l.ff1, l.ff2, drop);
    let f = drop.apply(t, f);
    t.add(x, f)
}

fn decoder_layer<T: Real>(
    t: &mut Tape<T>,
    q: Var,
    memory: Var,
    l: &DecoderLayer,
    heads: usize,
    drop: &mut Dropout,
) -> Var {
    let n = norm(t, q, l.ln1);
    let a = attention(t, n, n, l.self_attn, heads, None);
    let a = drop.apply(t, a);
    let q = t.add(q, a);
    let n = norm(t, q, l.ln2);
    let c = attention(t, n, memory, l.cross_attn, heads, None);
    let c = drop.apply(t, c);
    let q = t.add(q, c);
    let n = norm(t, q, l.ln3);
    let f = feed_forward(t, n, l.ff1, l.ff2, drop);
    let f = drop.apply(t, f);
    t.add(q, f)
}

impl<T: Real> Act<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = build_layout(&cfg, &mut rng);
        Ok(Self {
            cfg,
            params,
            layout,
        })
    }

    /// Rebuilds a model around existing parameter values.
    pub fn with_params(cfg: ModelConfig, params: Params<T>) -> Result<Self> {
        let fresh = Self::new(cfg, 0)?;
        if fresh.params.shapes() != params.shapes() {
            return Err(PolicyError::Config(
                "parameter shapes do not match the model configuration".into(),
            ));
        }
        Ok(Self {
            cfg: fresh.cfg,
            params,
            layout: fresh.layout,
        })
    }

    pub fn cast<U: Real>(&self) -> Act<U> {
        Act {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Image tokens `[n_image_tokens, d]` with positional encoding added.
    pub fn backbone(&self, t: &mut Tape<T>, image: &Tensor<T>) -> Var {
        let [h0, w0] = self.cfg.image_size;
        assert_eq!(
            (image.rows, image.cols),
            (h0 * w0, IMAGE_CHANNELS),
            "image tensor shape"
        );
        let mut x = t.input(image.clone());
        let (mut h, mut w, mut c) = (h0, w0, IMAGE_CHANNELS);
        for (conv, &c_out) in self.layout.convs.iter().zip(&self.cfg.backbone_channels) {
            let geom = ConvGeom::new(h, w, c);
            let cols = t.im2col(x, geom);
            let y = linear(t, cols, *conv);
            x = t.relu(y);
            (h, w, c) = (geom.out_h, geom.out_w, c_out);
        }
        let tokens = linear(t, x, self.layout.proj);
        let pe = t.input(sinusoid_2d(h, w, self.cfg.hidden_dim));
        t.add(tokens, pe)
    }

    /// Style posterior `(mean, log_var)`, each `[1, latent_dim]`.
    pub fn encode_style(
        &self,
        t: &mut Tape<T>,
        pose_delta: &[T; ACTION_DIM],
        actions: &Tensor<T>,
        mask: &[bool],
        drop: &mut Dropout,
    ) -> (Var, Var) {
        let k = self.cfg.chunk_size;
        assert_eq!(
            (actions.rows, actions.cols, mask.len()),
            (k, ACTION_DIM, k),
            "style input shape"
        );
        let l = &self.layout;
        let cls = t.param(l.style_cls);
        let delta = t.input(Tensor::from_vec(1, ACTION_DIM, pose_delta.to_vec()));
        let delta = linear(t, delta, l.style_delta);
        let acts = t.input(actions.clone());
        let acts = linear(t, acts, l.style_action);
        let tokens = t.concat_rows(&[cls, delta, acts]);
        let pe = t.input(sinusoid_table(k + 2, self.cfg.hidden_dim));
        let mut x = t.add(tokens, pe);
        let key_mask: Vec<bool> = [true, true]
            .into_iter()
            .chain(mask.iter().copied())
            .collect();
        for layer in &l.style_layers {
            x = encoder_layer(t, x, layer, self.cfg.n_heads, Some(&key_mask), drop);
        }
        let x = norm(t, x, l.style_norm);
        let cls_out = t.slice_rows(x, 0, 1);
        let stats = linear(t, cls_out, l.style_out);
        let z = self.cfg.latent_dim;
        (t.slice_cols(stats, 0, z), t.slice_cols(stats, z, z))
    }

    /// Full forward pass for one sample.
    pub fn forward(
        &self,
        t: &mut Tape<T>,
        input: &PolicyInput<T>,
        style: Style<T>,
        drop: &mut Dropout,
    ) -> ForwardOut {
        let l = &self.layout;
        let cfg = &self.cfg;
        let (z, mean, log_var) = match style {
            Style::Zero => (t.input(Tensor::zeros(1, cfg.latent_dim)), None, None),
            Style::Fixed(z) => {
                assert_eq!(z.len(), cfg.latent_dim, "z length");
                (
                    t.input(Tensor::from_vec(1, cfg.latent_dim, z.to_vec())),
                    None,
                    None,
                )
            }
            Style::Encode { actions, mask, eps } => {
                assert_eq!(eps.len(), cfg.latent_dim, "eps length");
                let (mean, log_var) = self.encode_style(t, &input.pose_delta, actions, mask, drop);
                let half = t.scale(log_var, T::lit(0.5));
                let std = t.exp(half);
                let e = t.input(Tensor::from_vec(1, cfg.latent_dim, eps.to_vec()));
                let noise = t.mul(std, e);
                (t.add(mean, noise), Some(mean), Some(log_var))
            }
        };
        let image = self.backbone(t, &input.image);
        let delta = t.input(Tensor::from_vec(1, ACTION_DIM, input.pose_delta.to_vec()));
        let delta = linear(t, delta, l.delta_proj);
        let delta_pos = t.param(l.delta_pos);
        let delta = t.add(delta, delta_pos);
        let z = linear(t, z, l.z_proj);
        let z_pos = t.param(l.z_pos);
        let z = t.add(z, z_pos);
        let mut memory = t.concat_rows(&[image, delta, z]);
        for layer in &l.encoder {
            memory = encoder_layer(t, memory, layer, cfg.n_heads, None, drop);
        }
        let memory = norm(t, memory, l.encoder_norm);
        let mut q = t.input(sinusoid_table(cfg.chunk_size, cfg.hidden_dim));
        for layer in &l.decoder {
            q = decoder_layer(t, q, memory, layer, cfg.n_heads, drop);
        }
        let q = norm(t, q, l.decoder_norm);
        let h = linear(t, q, l.head1);
        let h = t.relu(h);
        let chunk = linear(t, h, l.head2);
        ForwardOut {
            chunk,
            mean,
            log_var,
        }
    }

    /// Inference chunk in normalized action space, `z = 0`, dropout off.
    pub fn predict(&self, input: &PolicyInput<T>) -> Tensor<T> {
        let mut t = Tape::new(&self.params.tensors);
        let out = self.forward(&mut t, input, Style::Zero, &mut Dropout::off());
        t.value(out.chunk).clone()
    }

    /// Inference chunk for an explicit style vector.
    pub fn predict_with_z(&self, input: &PolicyInput<T>, z: &[T]) -> Tensor<T> {
        let mut t = Tape::new(&self.params.tensors);
        let out = self.forward(&mut t, input, Style::Fixed(z), &mut Dropout::off());
        t.value(out.chunk).clone()
    }
}
