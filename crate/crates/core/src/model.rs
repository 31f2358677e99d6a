//! Network assembly: cross convolution blocks, multi-scale feature fusion groups,
//! the full super-resolution network, its ablation variants, and parameter / MAC
//! accounting.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    ChannelAttention, ConvVariant, FeatureNorm, VariantConv, CA_REDUCTION, FNORM_KERNEL,
    LEAKY_SLOPE,
};
use crate::params::ParamStore;
use crate::tensor::{Compute, Eager, Scalar, Shape, ShapeTracer, Tensor};

/// Gain applied to the initializer of convolutions that close a residual branch.
const RESIDUAL_GAIN: f64 = 0.1;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub scale: usize,
    pub channels: usize,
    pub groups: usize,
    pub kernel: usize,
    pub conv_variant: ConvVariant,
    pub use_mff: bool,
    pub use_ccb: bool,
    pub use_ca: bool,
    pub use_fnorm: bool,
    pub num_splits: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            channels: 64,
            groups: 10,
            kernel: 3,
            conv_variant: ConvVariant::Cross,
            use_mff: true,
            use_ccb: true,
            use_ca: true,
            use_fnorm: true,
            num_splits: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale {} must be 2, 3 or 4", self.scale));
        }
        if self.num_splits != 4 {
            return fail(format!(
                "num_splits {} unsupported: the fusion group splits into exactly 4",
                self.num_splits
            ));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(self.num_splits) {
            return fail(format!(
                "channels {} must be a positive multiple of {}",
                self.channels, self.num_splits
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return fail(format!("kernel {} must be odd", self.kernel));
        }
        if self.groups == 0 {
            return fail("groups must be at least 1".into());
        }
        Ok(())
    }

    /// Short label for accounting tables.
    pub fn label(&self) -> String {
        let mut s = format!("{} m={}", self.conv_variant, self.kernel);
        if !self.use_ccb {
            s.push_str(" w/o CCB");
        } else if !self.use_mff {
            s.push_str(" w/o MFF");
        }
        if !self.use_ca {
            s.push_str(" w/o CA");
        }
        if !self.use_fnorm {
            s.push_str(" w/o F-Norm");
        }
        s
    }
}

/// Cross convolution block:
/// `x + CA(FNorm(conv2(leaky(conv1(x)))))`, with disabled stages acting as identity.
#[derive(Clone, Debug)]
pub struct Ccb {
    width: usize,
    conv1: VariantConv,
    conv2: VariantConv,
    fnorm: Option<FeatureNorm>,
    ca: Option<ChannelAttention>,
}

impl Ccb {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (v, m) = (cfg.conv_variant, cfg.kernel);
        let conv1 = VariantConv::new(store, &format!("{name}.conv1"), v, m, width, width, 1.0, rng)?;
        let conv2 = VariantConv::new(
            store,
            &format!("{name}.conv2"),
            v,
            m,
            width,
            width,
            RESIDUAL_GAIN,
            rng,
        )?;
        let fnorm = if cfg.use_fnorm {
            Some(FeatureNorm::new(
                store,
                &format!("{name}.fnorm"),
                width,
                FNORM_KERNEL,
                RESIDUAL_GAIN,
                rng,
            )?)
        } else {
            None
        };
        let ca = cfg
            .use_ca
            .then(|| ChannelAttention::new(store, &format!("{name}.ca"), width, CA_REDUCTION, rng));
        Ok(Ccb {
            width,
            conv1,
            conv2,
            fnorm,
            ca,
        })
    }

    pub fn param_count(width: usize, cfg: &ModelConfig) -> usize {
        let conv = cfg.conv_variant.param_count(cfg.kernel, width, width);
        let fnorm = if cfg.use_fnorm {
            FeatureNorm::param_count(width, FNORM_KERNEL)
        } else {
            0
        };
        let ca = if cfg.use_ca {
            ChannelAttention::param_count(width, CA_REDUCTION)
        } else {
            0
        };
        2 * conv + fnorm + ca
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn convs(&self) -> [&VariantConv; 2] {
        [&self.conv1, &self.conv2]
    }

    pub fn feature_norm(&self) -> Option<&FeatureNorm> {
        self.fnorm.as_ref()
    }

    pub fn attention(&self) -> Option<&ChannelAttention> {
        self.ca.as_ref()
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let c = ctx.shape(x).c;
        if c != self.width {
            return Err(Error::shape(
                "ccb",
                format!("input has {c} channels, block width is {}", self.width),
            ));
        }
        let t = self.conv1.forward(ctx, store, x)?;
        let t = ctx.leaky_relu(&t, LEAKY_SLOPE);
        let mut t = self.conv2.forward(ctx, store, &t)?;
        if let Some(fnorm) = &self.fnorm {
            t = fnorm.forward(ctx, store, &t)?;
        }
        if let Some(ca) = &self.ca {
            t = ca.forward(ctx, store, &t)?;
        }
        ctx.add(x, &t)
    }
}

/// Conv → LeakyReLU → Conv → CA.
#[derive(Clone, Debug)]
pub struct FuseBlock {
    conv1: VariantConv,
    conv2: VariantConv,
    ca: ChannelAttention,
}

impl FuseBlock {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let vanilla = ConvVariant::Vanilla;
        Ok(FuseBlock {
            conv1: VariantConv::new(store, &format!("{name}.conv1"), vanilla, 3, c, c, 1.0, rng)?,
            conv2: VariantConv::new(
                store,
                &format!("{name}.conv2"),
                vanilla,
                3,
                c,
                c,
                RESIDUAL_GAIN,
                rng,
            )?,
            ca: ChannelAttention::new(store, &format!("{name}.ca"), c, CA_REDUCTION, rng),
        })
    }

    pub fn param_count(c: usize) -> usize {
        2 * ConvVariant::Vanilla.param_count(3, c, c) + ChannelAttention::param_count(c, CA_REDUCTION)
    }

    /// The last convolution of the block.
    pub fn output_conv(&self) -> &VariantConv {
        &self.conv2
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let t = self.conv1.forward(ctx, store, x)?;
        let t = ctx.leaky_relu(&t, LEAKY_SLOPE);
        let t = self.conv2.forward(ctx, store, &t)?;
        self.ca.forward(ctx, store, &t)
    }
}

#[derive(Clone, Debug)]
enum GroupBody {
    /// Hierarchical split over 3/4, 2/4 and 1/4 of the channels.
    MultiScale([Ccb; 3]),
    /// Three full-width blocks, no split.
    Stacked([Ccb; 3]),
    /// No blocks: the fuse path alone.
    Bare,
}

/// Multi-scale feature fusion group.
///
/// The input splits into four equal groups `g0..g3`. The first block refines
/// `[g0, g1, g2]` into `[h0, h1, h2]`, the second `[h0, h1]` into `[p0, p1]`, the
/// third `p0` into `q0`. The fuse block consumes `[q0, p1, h2, g3]` and its
/// output is added to the input.
#[derive(Clone, Debug)]
pub struct Mffg {
    channels: usize,
    body: GroupBody,
    fuse: FuseBlock,
}

impl Mffg {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.channels;
        if !c.is_multiple_of(4) {
            return Err(Error::Config(format!("{c} channels cannot split into 4 groups")));
        }
        let q = c / 4;
        let mut ccb = |idx: usize, width: usize, rng: &mut R| {
            Ccb::new(store, &format!("{name}.ccb{idx}"), width, cfg, rng)
        };
        let body = match (cfg.use_ccb, cfg.use_mff) {
            (false, _) => GroupBody::Bare,
            (true, true) => GroupBody::MultiScale([
                ccb(1, 3 * q, rng)?,
                ccb(2, 2 * q, rng)?,
                ccb(3, q, rng)?,
            ]),
            (true, false) => GroupBody::Stacked([ccb(1, c, rng)?, ccb(2, c, rng)?, ccb(3, c, rng)?]),
        };
        let fuse = FuseBlock::new(store, &format!("{name}.fuse"), c, rng)?;
        Ok(Mffg {
            channels: c,
            body,
            fuse,
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let c = cfg.channels;
        let q = c / 4;
        let blocks = match (cfg.use_ccb, cfg.use_mff) {
            (false, _) => 0,
            (true, true) => {
                Ccb::param_count(3 * q, cfg) + Ccb::param_count(2 * q, cfg) + Ccb::param_count(q, cfg)
            }
            (true, false) => 3 * Ccb::param_count(c, cfg),
        };
        blocks + FuseBlock::param_count(c)
    }

    pub fn blocks(&self) -> &[Ccb] {
        match &self.body {
            GroupBody::MultiScale(b) | GroupBody::Stacked(b) => b,
            GroupBody::Bare => &[],
        }
    }

    pub fn fuse(&self) -> &FuseBlock {
        &self.fuse
    }

    /// Input to the fuse block (`[q0, p1, h2, g3]` for the multi-scale body).
    pub fn fuse_input<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let c = ctx.shape(x).c;
        if c != self.channels {
            return Err(Error::shape(
                "mffg",
                format!("input has {c} channels, group expects {}", self.channels),
            ));
        }
        let q = c / 4;
        match &self.body {
            GroupBody::Bare => Ok(x.clone()),
            GroupBody::Stacked(blocks) => {
                let mut t = x.clone();
                for b in blocks {
                    t = b.forward(ctx, store, &t)?;
                }
                Ok(t)
            }
            GroupBody::MultiScale([b1, b2, b3]) => {
                let g = ctx.split_channels(x, &[3 * q, q])?;
                let h = b1.forward(ctx, store, &g[0])?;
                let h = ctx.split_channels(&h, &[2 * q, q])?;
                let p = b2.forward(ctx, store, &h[0])?;
                let p = ctx.split_channels(&p, &[q, q])?;
                let q0 = b3.forward(ctx, store, &p[0])?;
                ctx.concat_channels(&[q0, p[1].clone(), h[1].clone(), g[1].clone()])
            }
        }
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let fused_in = self.fuse_input(ctx, store, x)?;
        let fused = self.fuse.forward(ctx, store, &fused_in)?;
        ctx.add(&fused, x)
    }
}

/// Head conv → G fusion groups → two-conv padding block with a global residual
/// from the head → restoration conv (`c → 3r²`) → pixel shuffle.
#[derive(Clone, Debug)]
pub struct CrossSrn {
    config: ModelConfig,
    head: VariantConv,
    groups: Vec<Mffg>,
    pad1: VariantConv,
    pad2: VariantConv,
    tail: VariantConv,
}

impl CrossSrn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let r = config.scale;
        let vanilla = ConvVariant::Vanilla;
        let head = VariantConv::new(store, "head", vanilla, 3, 3, c, 1.0, rng)?;
        let groups = (0..config.groups)
            .map(|g| Mffg::new(store, &format!("group{g}"), config, rng))
            .collect::<Result<Vec<_>>>()?;
        let pad1 = VariantConv::new(store, "pad.conv1", vanilla, 3, c, c, 1.0, rng)?;
        let pad2 = VariantConv::new(store, "pad.conv2", vanilla, 3, c, c, RESIDUAL_GAIN, rng)?;
        let tail = VariantConv::new(store, "tail", vanilla, 3, c, 3 * r * r, 1.0, rng)?;
        Ok(CrossSrn {
            config: config.clone(),
            head,
            groups,
            pad1,
            pad2,
            tail,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn groups(&self) -> &[Mffg] {
        &self.groups
    }

    pub fn head(&self) -> &VariantConv {
        &self.head
    }

    /// Final convolution of the padding block.
    pub fn pad_output_conv(&self) -> &VariantConv {
        &self.pad2
    }

    /// Head features and the padded residual sum `f_pad(H_G) + H_0`.
    pub fn features<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<(C::Value, C::Value)> {
        let s = ctx.shape(x);
        if s.c != 3 {
            return Err(Error::shape(
                "cross_srn",
                format!("expected an RGB input, got {} channels", s.c),
            ));
        }
        let h0 = self.head.forward(ctx, store, x)?;
        let mut h = h0.clone();
        for g in &self.groups {
            h = g.forward(ctx, store, &h)?;
        }
        let t = self.pad1.forward(ctx, store, &h)?;
        let t = ctx.leaky_relu(&t, LEAKY_SLOPE);
        let t = self.pad2.forward(ctx, store, &t)?;
        let out = ctx.add(&t, &h0)?;
        Ok((h0, out))
    }

    /// `[N, 3, H, W]` in `[0, 1]` → `[N, 3, rH, rW]`.
    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let (_, h_out) = self.features(ctx, store, x)?;
        let t = self.tail.forward(ctx, store, &h_out)?;
        ctx.pixel_shuffle(&t, self.config.scale)
    }
}

/// A network together with its weights.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    net: CrossSrn,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Build with fan-in scaled uniform initialization drawn from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = CrossSrn::new(&mut params, config, rng)?;
        Ok(Model { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn net(&self) -> &CrossSrn {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn forward<C: Compute<T>>(&self, ctx: &mut C, x: &C::Value) -> Result<C::Value> {
        self.net.forward(ctx, &self.params, x)
    }

    /// Tape-free forward pass.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.forward(&mut Eager, &self.params, x)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            params: self.params.cast(),
        }
    }
}

/// Parameter and MAC totals for one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccountingReport {
    pub params: usize,
    pub macs: u64,
}

impl fmt::Display for AccountingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.0}K params, {:.2}G MACs",
            self.params as f64 / 1e3,
            self.macs as f64 / 1e9
        )
    }
}

/// Exact trainable-scalar count, from the layer formulas.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let c = cfg.channels;
    let vanilla = ConvVariant::Vanilla;
    let head = vanilla.param_count(3, 3, c);
    let pad = 2 * vanilla.param_count(3, c, c);
    let tail = vanilla.param_count(3, c, 3 * cfg.scale * cfg.scale);
    head + cfg.groups * Mffg::param_count(cfg) + pad + tail
}

/// Multiply-accumulates for producing an `out_width × out_height` image: every
/// conv / FC layer contributes weight elements × output positions, evaluated by
/// tracing the network on the matching low-resolution input.
pub fn count_macs(cfg: &ModelConfig, out_width: usize, out_height: usize) -> Result<u64> {
    cfg.validate()?;
    let r = cfg.scale;
    if !out_width.is_multiple_of(r) || !out_height.is_multiple_of(r) {
        return Err(Error::InvalidArgument(format!(
            "{out_width}x{out_height} is not divisible by scale {r}"
        )));
    }
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = CrossSrn::new(&mut store, cfg, &mut rng)?;
    let mut tracer = ShapeTracer::new();
    let input = Shape::new(1, 3, out_height / r, out_width / r);
    let out = net.forward(&mut tracer, &store, &input)?;
    debug_assert_eq!(out, Shape::new(1, 3, out_height, out_width));
    Ok(tracer.macs())
}

/// Parameters and 720P (1280×720 output) MACs.
pub fn account(cfg: &ModelConfig) -> Result<AccountingReport> {
    Ok(AccountingReport {
        params: count_params(cfg),
        macs: count_macs(cfg, 1280, 720)?,
    })
}

/// The ablation grid: Seq / Vanilla / Cross, w/o MFF, w/o CCB, m ∈ {5, 7},
/// and the CA / F-Norm toggles, all derived from `base`.
pub fn ablation_grid(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("Seq".into(), with(&|c| c.conv_variant = ConvVariant::Seq)),
        ("Conv".into(), with(&|c| c.conv_variant = ConvVariant::Vanilla)),
        ("Cross".into(), with(&|c| c.conv_variant = ConvVariant::Cross)),
        ("w/o MFF".into(), with(&|c| c.use_mff = false)),
        ("w/o CCB".into(), with(&|c| c.use_ccb = false)),
        ("Cross m=5".into(), with(&|c| c.kernel = 5)),
        ("Cross m=7".into(), with(&|c| c.kernel = 7)),
        ("Seq m=5".into(), with(&|c| {
            c.kernel = 5;
            c.conv_variant = ConvVariant::Seq
        })),
        ("Seq m=7".into(), with(&|c| {
            c.kernel = 7;
            c.conv_variant = ConvVariant::Seq
        })),
        ("w/o CA".into(), with(&|c| c.use_ca = false)),
        ("w/o F-Norm".into(), with(&|c| c.use_fnorm = false)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(c: usize, g: usize, r: usize) -> ModelConfig {
        ModelConfig {
            scale: r,
            channels: c,
            groups: g,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn built_store_matches_closed_form() {
        let mut cfgs = vec![tiny(16, 2, 2), tiny(8, 1, 3), tiny(32, 1, 4)];
        for (_, c) in ablation_grid(&tiny(16, 2, 2)) {
            cfgs.push(c);
        }
        for cfg in cfgs {
            let model = Model::<f32>::new(&cfg, 0).unwrap();
            assert_eq!(model.params().numel(), count_params(&cfg), "{}", cfg.label());
        }
    }

    #[test]
    fn block_counts() {
        let cfg = ModelConfig::default();
        assert_eq!(Ccb::param_count(48, &cfg), 28_563);
        assert_eq!(Ccb::param_count(32, &cfg), 12_834);
        assert_eq!(Ccb::param_count(16, &cfg), 3_313);
        assert_eq!(FuseBlock::param_count(64), 74_436);
        assert_eq!(Mffg::param_count(&cfg), 119_146);
        let vanilla = ModelConfig {
            conv_variant: ConvVariant::Vanilla,
            ..cfg
        };
        assert_eq!(Ccb::param_count(48, &vanilla), 41_568 + 480 + 339);
    }

    #[test]
    fn output_shape() {
        let model = Model::<f32>::new(&tiny(8, 1, 4), 1).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 12, 12), 0.5f32);
        assert_eq!(model.infer(&x).unwrap().shape(), Shape::new(1, 3, 48, 48));
        let gray = Tensor::full(Shape::new(1, 1, 12, 12), 0.5f32);
        assert!(model.infer(&gray).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(tiny(6, 1, 2).validate().is_err());
        assert!(tiny(8, 0, 2).validate().is_err());
        assert!(tiny(8, 1, 5).validate().is_err());
        assert!(ModelConfig { kernel: 4, ..tiny(8, 1, 2) }.validate().is_err());
        assert!(count_macs(&tiny(8, 1, 3), 1280, 720).is_err());
    }
}
