//! The restoration network.
//!
//! A dual-branch U-shaped backbone. The image branch carries the four angle
//! planes and is refined with dense residual connections; the Stokes branch
//! carries the differential components (S1, S2) in a plain feed-forward chain
//! of bottleneck convolutions. Every unit couples the branches twice: a
//! cross-channel attention stage reads the concatenation of both, and a gated
//! modulation stage scales and shifts the image features with parameters
//! computed from the Stokes features. The network predicts a residual on top
//! of the degraded quad, and its final projection is zero-initialized, so an
//! untrained model is exactly the identity restorer.
//!
//! Parameters live in a flat [`ParamSet`] under hierarchical names
//! ("enc1.u0.attn.point.w", ...). One architecture walk defines the name,
//! shape, and initializer of every parameter; initialization and counting
//! both traverse it, so they cannot drift apart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::stokes_from_quad_tensor;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, ParamSet, Tensor};

/// Epsilon shared by the layer and instance normalizations.
const NORM_EPS: f64 = 1e-6;

/// The six module positions along the U: two encoder levels, the latent
/// bottleneck, two decoder levels, and the full-resolution refinement.
const MODULES: [&str; 6] = ["enc1", "enc2", "latent", "dec2", "dec1", "refine"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Feature width at full resolution; levels below double it.
    pub base_channels: usize,
    /// Units per module, in [`MODULES`] order.
    pub unit_counts: [usize; 6],
    /// Attention heads per module, in [`MODULES`] order.
    pub head_counts: [usize; 6],
    /// Hidden-width multiplier inside the modulation stage.
    pub modulation_expansion: usize,
    /// Channels per angle plane (1 mono, 3 color).
    pub image_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            unit_counts: [4, 6, 6, 6, 4, 4],
            head_counts: [1, 2, 4, 2, 1, 1],
            modulation_expansion: 2,
            image_channels: 1,
        }
    }
}

impl NetworkConfig {
    /// Smallest config that still exercises every block: one unit and one
    /// head per module at the default width.
    pub fn tiny() -> Self {
        Self {
            base_channels: 8,
            unit_counts: [1; 6],
            head_counts: [1; 6],
            modulation_expansion: 2,
            image_channels: 1,
        }
    }

    /// Feature widths at the six module positions.
    pub fn level_widths(&self) -> [usize; 6] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 2 * b, b, b]
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "base_channels must be even and >= 4, got {}",
                self.base_channels
            )));
        }
        for (i, (&width, &heads)) in
            self.level_widths().iter().zip(&self.head_counts).enumerate()
        {
            if heads == 0 || width % heads != 0 {
                return Err(Error::Config(format!(
                    "head_counts[{i}] = {heads} must divide the level width {width}"
                )));
            }
        }
        if self.modulation_expansion < 1 {
            return Err(Error::Config("modulation_expansion must be >= 1".into()));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::Config(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }
}

/// How a parameter starts out.
enum Init {
    /// Normal draw scaled by sqrt(2 / fan_in).
    Conv { fan_in: usize },
    Zeros,
    Ones,
}

/// Visitor over the architecture: one callback per parameter, in a fixed
/// order, with the parameter's full name, shape, and initializer.
struct Walk<'a> {
    add: &'a mut dyn FnMut(String, [usize; 4], Init),
}

impl Walk<'_> {
    fn raw(&mut self, name: String, shape: [usize; 4], init: Init) {
        (self.add)(name, shape, init);
    }

    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize) {
        self.raw(format!("{name}.w"), [co, ci, k, k], Init::Conv { fan_in: ci * k * k });
        self.raw(format!("{name}.b"), [1, co, 1, 1], Init::Zeros);
    }

    fn conv_zero(&mut self, name: &str, co: usize, ci: usize, k: usize) {
        self.raw(format!("{name}.w"), [co, ci, k, k], Init::Zeros);
        self.raw(format!("{name}.b"), [1, co, 1, 1], Init::Zeros);
    }

    fn dw(&mut self, name: &str, c: usize, k: usize) {
        self.raw(format!("{name}.w"), [c, 1, k, k], Init::Conv { fan_in: k * k });
        self.raw(format!("{name}.b"), [1, c, 1, 1], Init::Zeros);
    }

    fn ln(&mut self, name: &str, c: usize) {
        self.raw(format!("{name}.g"), [1, c, 1, 1], Init::Ones);
        self.raw(format!("{name}.b"), [1, c, 1, 1], Init::Zeros);
    }

    fn bottleneck(&mut self, name: &str, c: usize) {
        let mid = c / 2;
        self.conv(&format!("{name}.red"), mid, c, 1);
        self.conv(&format!("{name}.mid"), mid, mid, 3);
        self.conv(&format!("{name}.exp"), c, mid, 1);
    }

    fn attention(&mut self, name: &str, c: usize, heads: usize) {
        self.conv(&format!("{name}.point"), 3 * c, 2 * c, 1);
        self.dw(&format!("{name}.dw"), 3 * c, 3);
        self.raw(format!("{name}.tau"), [1, heads, 1, 1], Init::Ones);
        self.conv(&format!("{name}.proj"), c, c, 1);
        self.bottleneck(&format!("{name}.stk"), c);
    }

    fn modulation(&mut self, name: &str, c: usize, expansion: usize) {
        let ec = expansion * c;
        self.conv(&format!("{name}.img.point"), 2 * ec, c, 1);
        self.dw(&format!("{name}.img.dw"), 2 * ec, 3);
        self.conv(&format!("{name}.guide.point"), 2 * ec, c, 1);
        self.dw(&format!("{name}.guide.dw"), 2 * ec, 3);
        self.conv(&format!("{name}.proj"), c, ec, 1);
        self.bottleneck(&format!("{name}.stk"), c);
    }

    fn unit(&mut self, name: &str, c: usize, heads: usize, expansion: usize) {
        self.ln(&format!("{name}.ln1"), c);
        self.attention(&format!("{name}.attn"), c, heads);
        self.ln(&format!("{name}.ln2"), c);
        self.modulation(&format!("{name}.mod"), c, expansion);
    }
}

fn walk_network(cfg: &NetworkConfig, w: &mut Walk) {
    let b = cfg.base_channels;
    let ci = cfg.image_channels;
    let e = cfg.modulation_expansion;
    let widths = cfg.level_widths();

    w.conv("shallow.img", b, 4 * ci, 3);
    w.conv("shallow.stk", b, 2 * ci, 3);
    w.conv("shallow.res1", b, b, 3);
    w.conv("shallow.res2", b, b, 3);

    let units = |w: &mut Walk, i: usize| {
        for u in 0..cfg.unit_counts[i] {
            w.unit(&format!("{}.u{u}", MODULES[i]), widths[i], cfg.head_counts[i], e);
        }
    };

    units(w, 0);
    w.conv("down1.img", 2 * b, b, 3);
    w.conv("down1.stk", 2 * b, b, 3);
    units(w, 1);
    w.conv("down2.img", 4 * b, 2 * b, 3);
    w.conv("down2.stk", 4 * b, 2 * b, 3);
    units(w, 2);
    w.conv("up1.img", 8 * b, 4 * b, 1);
    w.conv("up1.stk", 8 * b, 4 * b, 1);
    w.conv("fuse2.img", 2 * b, 4 * b, 1);
    w.conv("fuse2.stk", 2 * b, 4 * b, 1);
    units(w, 3);
    w.conv("up2.img", 4 * b, 2 * b, 1);
    w.conv("up2.stk", 4 * b, 2 * b, 1);
    w.conv("fuse1.img", b, 2 * b, 1);
    w.conv("fuse1.stk", b, 2 * b, 1);
    units(w, 4);
    units(w, 5);
    w.conv_zero("final", 4 * ci, b, 3);
}

fn init_walk<T: Scalar>(seed: u64, build: impl FnOnce(&mut Walk)) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    {
        let mut add = |name: String, shape: [usize; 4], init: Init| {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Conv { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::from_f64(z * std)
                        })
                        .collect()
                }
                Init::Zeros => vec![T::from_f64(0.0); n],
                Init::Ones => vec![T::from_f64(1.0); n],
            };
            params.insert(&name, shape, data);
        };
        let mut walk = Walk { add: &mut add };
        build(&mut walk);
    }
    params
}

/// Fresh parameters for `cfg`, deterministic in `seed`. Convolutions get
/// fan-in-scaled normal weights and zero biases; norm scales and attention
/// temperatures start at one; the final projection starts at zero.
pub fn init_params<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> ParamSet<T> {
    cfg.validate().expect("network config must be valid");
    init_walk(seed, |w| walk_network(cfg, w))
}

/// Name and shape of every parameter `init_params` would create, in order.
pub fn param_shapes(cfg: &NetworkConfig) -> Vec<(String, [usize; 4])> {
    let mut out = Vec::new();
    let mut add = |name: String, shape: [usize; 4], _: Init| out.push((name, shape));
    let mut walk = Walk { add: &mut add };
    walk_network(cfg, &mut walk);
    out
}

/// Exact number of scalar parameters `init_params` would create.
pub fn param_count(cfg: &NetworkConfig) -> usize {
    let mut total = 0usize;
    let mut add = |_: String, shape: [usize; 4], _: Init| {
        total += shape.iter().product::<usize>();
    };
    let mut walk = Walk { add: &mut add };
    walk_network(cfg, &mut walk);
    total
}

fn p<'a, T: Scalar>(params: &'a ParamSet<T>, prefix: &str, name: &str) -> &'a Tensor<T> {
    params.get(&format!("{prefix}.{name}"))
}

/// Reduce-transform-expand convolution stack used by every Stokes-branch
/// stage: 1x1 to half width, 3x3, 1x1 back, with instance norm and ReLU
/// after the first two convolutions. No residual: the Stokes branch is
/// feed-forward by design.
fn bottleneck<T: Scalar>(y: &Tensor<T>, params: &ParamSet<T>, prefix: &str) -> Tensor<T> {
    y.conv1x1(p(params, prefix, "red.w"), Some(p(params, prefix, "red.b")))
        .instance_norm(NORM_EPS)
        .relu()
        .conv2d(p(params, prefix, "mid.w"), Some(p(params, prefix, "mid.b")), 1, 1)
        .instance_norm(NORM_EPS)
        .relu()
        .conv1x1(p(params, prefix, "exp.w"), Some(p(params, prefix, "exp.b")))
}

/// Attention stage. The image output attends across channels: both branches
/// are concatenated, lifted to query/key/value by a pointwise then depthwise
/// convolution, and each head forms a (c/heads)^2 channel-affinity map,
/// scaled by a learnable temperature and row-softmaxed. A projection plus a
/// residual to the image input closes the stage; the Stokes output is the
/// bottleneck of the Stokes input alone.
pub fn attention_forward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    heads: usize,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    assert_eq!(y.shape(), [n, c, h, w], "attention branches must be aligned");
    assert!(heads >= 1 && c % heads == 0, "head count must divide channel count");
    let hd = c / heads;
    let hw = h * w;

    let mixed = concat_channels(&[x, y])
        .conv1x1(p(params, prefix, "point.w"), Some(p(params, prefix, "point.b")))
        .dwconv2d(p(params, prefix, "dw.w"), Some(p(params, prefix, "dw.b")));
    let q = mixed.slice_channels(0, c).reshape([n, heads, hd, hw]).transpose_last2();
    let k = mixed.slice_channels(c, 2 * c).reshape([n, heads, hd, hw]);
    let v = mixed.slice_channels(2 * c, 3 * c).reshape([n, heads, hd, hw]).transpose_last2();

    let affinity =
        k.matmul(&q).div_channels(p(params, prefix, "tau")).softmax_last();
    let gathered = v.matmul(&affinity).transpose_last2().reshape([n, c, h, w]);
    let x_out = gathered
        .conv1x1(p(params, prefix, "proj.w"), Some(p(params, prefix, "proj.b")))
        .add(x);
    let y_out = bottleneck(y, params, &format!("{prefix}.stk"));
    (x_out, y_out)
}

/// Modulation stage. The image path splits into a signal and a gate; the
/// gated product is scaled and shifted by a multiplier and bias computed from
/// the Stokes path, then projected back. The Stokes output is again the
/// bottleneck of the Stokes input.
pub fn modulation_forward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    expansion: usize,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    assert_eq!(y.shape(), [n, c, h, w], "modulation branches must be aligned");
    let ec = expansion * c;

    let fx = x
        .conv1x1(p(params, prefix, "img.point.w"), Some(p(params, prefix, "img.point.b")))
        .dwconv2d(p(params, prefix, "img.dw.w"), Some(p(params, prefix, "img.dw.b")));
    let signal = fx.slice_channels(0, ec);
    let gate = fx.slice_channels(ec, 2 * ec);

    let fy = y
        .conv1x1(p(params, prefix, "guide.point.w"), Some(p(params, prefix, "guide.point.b")))
        .dwconv2d(p(params, prefix, "guide.dw.w"), Some(p(params, prefix, "guide.dw.b")));
    let mult = fy.slice_channels(0, ec);
    let bias = fy.slice_channels(ec, 2 * ec);

    let modulated = gate.gelu().mul(&signal).mul(&mult).add(&bias);
    let x_out =
        modulated.conv1x1(p(params, prefix, "proj.w"), Some(p(params, prefix, "proj.b")));
    let y_out = bottleneck(y, params, &format!("{prefix}.stk"));
    (x_out, y_out)
}

/// One dual-branch unit: attention then modulation. The image branch is
/// layer-normalized before each stage and keeps residual connections around
/// both; the Stokes branch flows straight through.
pub fn unit_forward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    heads: usize,
    expansion: usize,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    let nx = x.layer_norm(p(params, prefix, "ln1.g"), p(params, prefix, "ln1.b"), NORM_EPS);
    let (ax, ay) = attention_forward(&nx, y, heads, params, &format!("{prefix}.attn"));
    let x_mid = ax.add(x);
    let nm =
        x_mid.layer_norm(p(params, prefix, "ln2.g"), p(params, prefix, "ln2.b"), NORM_EPS);
    let (mx, my) = modulation_forward(&nm, &ay, expansion, params, &format!("{prefix}.mod"));
    (mx.add(&x_mid), my)
}

/// First image-branch layer: one 3x3 convolution from the stacked angle
/// planes to the base width.
pub fn shallow_extract_image<T: Scalar>(quad: &Tensor<T>, params: &ParamSet<T>) -> Tensor<T> {
    quad.conv2d(p(params, "shallow", "img.w"), Some(p(params, "shallow", "img.b")), 1, 1)
}

/// First Stokes-branch layers: a 3x3 convolution from (S1, S2) to the base
/// width, then one residual conv-ReLU-conv block.
pub fn shallow_extract_stokes<T: Scalar>(
    stokes: &Tensor<T>,
    params: &ParamSet<T>,
) -> Tensor<T> {
    let f = stokes.conv2d(p(params, "shallow", "stk.w"), Some(p(params, "shallow", "stk.b")), 1, 1);
    let r = f
        .conv2d(p(params, "shallow", "res1.w"), Some(p(params, "shallow", "res1.b")), 1, 1)
        .relu()
        .conv2d(p(params, "shallow", "res2.w"), Some(p(params, "shallow", "res2.b")), 1, 1);
    f.add(&r)
}

/// Halves spatial dims and doubles channels in both branches, each with its
/// own stride-2 3x3 convolution.
pub fn downsample<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    (
        x.conv2d(p(params, prefix, "img.w"), Some(p(params, prefix, "img.b")), 2, 1),
        y.conv2d(p(params, prefix, "stk.w"), Some(p(params, prefix, "stk.b")), 2, 1),
    )
}

/// Doubles spatial dims and halves channels in both branches: a 1x1
/// convolution to twice the input width, then pixel shuffle.
pub fn upsample<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    (
        x.conv1x1(p(params, prefix, "img.w"), Some(p(params, prefix, "img.b")))
            .pixel_shuffle(2),
        y.conv1x1(p(params, prefix, "stk.w"), Some(p(params, prefix, "stk.b")))
            .pixel_shuffle(2),
    )
}

/// Concatenates encoder features onto decoder features and projects back to
/// the level width, per branch.
pub fn skip_fuse<T: Scalar>(
    dec_x: &Tensor<T>,
    enc_x: &Tensor<T>,
    dec_y: &Tensor<T>,
    enc_y: &Tensor<T>,
    params: &ParamSet<T>,
    prefix: &str,
) -> (Tensor<T>, Tensor<T>) {
    (
        concat_channels(&[dec_x, enc_x])
            .conv1x1(p(params, prefix, "img.w"), Some(p(params, prefix, "img.b"))),
        concat_channels(&[dec_y, enc_y])
            .conv1x1(p(params, prefix, "stk.w"), Some(p(params, prefix, "stk.b"))),
    )
}

/// Builds the network's Stokes input, S1 and S2 stacked channel-wise, from a
/// quad tensor.
pub fn stokes_input<T: Scalar>(quad: &Tensor<T>) -> Tensor<T> {
    let s = stokes_from_quad_tensor(quad);
    concat_channels(&[&s.s1, &s.s2])
}

fn run_units<T: Scalar>(
    mut x: Tensor<T>,
    mut y: Tensor<T>,
    module: usize,
    cfg: &NetworkConfig,
    params: &ParamSet<T>,
) -> (Tensor<T>, Tensor<T>) {
    for u in 0..cfg.unit_counts[module] {
        let prefix = format!("{}.u{u}", MODULES[module]);
        (x, y) = unit_forward(
            &x,
            &y,
            cfg.head_counts[module],
            cfg.modulation_expansion,
            params,
            &prefix,
        );
    }
    (x, y)
}

/// Full restoration forward pass: shallow extraction, two encoder levels,
/// latent, two decoder levels with skip fusion, refinement, and a final 3x3
/// projection added onto the degraded quad.
pub fn network_forward<T: Scalar>(
    quad: &Tensor<T>,
    stokes: &Tensor<T>,
    params: &ParamSet<T>,
    cfg: &NetworkConfig,
) -> Tensor<T> {
    let [n, qc, h, w] = quad.shape();
    let ci = cfg.image_channels;
    assert_eq!(qc, 4 * ci, "quad input must have 4 * image_channels channels");
    assert_eq!(
        stokes.shape(),
        [n, 2 * ci, h, w],
        "stokes input must be [n, 2 * image_channels, h, w]"
    );
    assert!(
        h % 4 == 0 && w % 4 == 0 && h > 0 && w > 0,
        "spatial dims must be positive multiples of 4, got {h}x{w}"
    );

    let x = shallow_extract_image(quad, params);
    let y = shallow_extract_stokes(stokes, params);

    let (x, y) = run_units(x, y, 0, cfg, params);
    let (skip_x1, skip_y1) = (x.clone(), y.clone());
    let (x, y) = downsample(&x, &y, params, "down1");

    let (x, y) = run_units(x, y, 1, cfg, params);
    let (skip_x2, skip_y2) = (x.clone(), y.clone());
    let (x, y) = downsample(&x, &y, params, "down2");

    let (x, y) = run_units(x, y, 2, cfg, params);

    let (x, y) = upsample(&x, &y, params, "up1");
    let (x, y) = skip_fuse(&x, &skip_x2, &y, &skip_y2, params, "fuse2");
    let (x, y) = run_units(x, y, 3, cfg, params);

    let (x, y) = upsample(&x, &y, params, "up2");
    let (x, y) = skip_fuse(&x, &skip_x1, &y, &skip_y1, params, "fuse1");
    let (x, y) = run_units(x, y, 4, cfg, params);

    let (x, _y) = run_units(x, y, 5, cfg, params);

    let residual =
        x.conv2d(p(params, "final", "w"), Some(p(params, "final", "b")), 1, 1);
    quad.add(&residual)
}
