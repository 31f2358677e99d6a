//! Layer vocabulary: cross / sequential / vanilla convolutions, channel attention
//! and feature normalization.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Compute, Scalar, Shape, Tensor};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.05;
/// Channel-attention squeeze ratio.
pub const CA_REDUCTION: usize = 16;
/// Spatial extent of the feature-normalization depthwise filters.
pub const FNORM_KERNEL: usize = 3;

/// How an `m`-extent convolution is parameterized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvVariant {
    /// `k_{1×m} ⊗ x + k_{m×1} ⊗ x + b`.
    Cross,
    /// `k_{m×1} ⊗ (k_{1×m} ⊗ x) + b`.
    Seq,
    /// Full `m×m` kernel.
    Vanilla,
}

impl ConvVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ConvVariant::Cross => "cross",
            ConvVariant::Seq => "seq",
            ConvVariant::Vanilla => "vanilla",
        }
    }

    /// Trainable scalars of one `cin → cout` convolution with extent `m`.
    pub fn param_count(self, m: usize, cin: usize, cout: usize) -> usize {
        match self {
            ConvVariant::Cross => 2 * m * cin * cout + cout,
            ConvVariant::Seq => m * cin * cout + m * cout * cout + cout,
            ConvVariant::Vanilla => m * m * cin * cout + cout,
        }
    }
}

impl fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cross" => Ok(ConvVariant::Cross),
            "seq" | "sequential" => Ok(ConvVariant::Seq),
            "vanilla" | "conv" => Ok(ConvVariant::Vanilla),
            other => Err(Error::InvalidArgument(format!(
                "unknown conv variant `{other}` (expected cross, seq or vanilla)"
            ))),
        }
    }
}

/// Fan-in scaled uniform initializer: `U(-g·√(6/fan_in), g·√(6/fan_in))`.
pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: Shape,
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64(rng.gen_range(-bound..=bound)))
}

/// A same-size `cin → cout` convolution in one of the three parameterizations.
#[derive(Clone, Debug)]
pub struct VariantConv {
    variant: ConvVariant,
    m: usize,
    cin: usize,
    cout: usize,
    /// `[cout, cin, 1, m]` for Cross/Seq, `[cout, cin, m, m]` for Vanilla.
    primary: ParamId,
    /// `[cout, cin, m, 1]` (Cross) or `[cout, cout, m, 1]` (Seq).
    secondary: Option<ParamId>,
    bias: ParamId,
}

impl VariantConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        variant: ConvVariant,
        m: usize,
        cin: usize,
        cout: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if m.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel extent {m} must be odd")));
        }
        let (primary, secondary) = match variant {
            ConvVariant::Vanilla => {
                let w = init_uniform(Shape::new(cout, cin, m, m), cin * m * m, gain, rng);
                (store.add(format!("{name}.weight"), w), None)
            }
            ConvVariant::Cross => {
                // Both branches feed the same sum, so each sees the fan-in of the pair.
                let fan = 2 * cin * m;
                let row = init_uniform(Shape::new(cout, cin, 1, m), fan, gain, rng);
                let col = init_uniform(Shape::new(cout, cin, m, 1), fan, gain, rng);
                (
                    store.add(format!("{name}.row"), row),
                    Some(store.add(format!("{name}.col"), col)),
                )
            }
            ConvVariant::Seq => {
                let row = init_uniform(Shape::new(cout, cin, 1, m), cin * m, 1.0, rng);
                let col = init_uniform(Shape::new(cout, cout, m, 1), cout * m, gain, rng);
                (
                    store.add(format!("{name}.row"), row),
                    Some(store.add(format!("{name}.col"), col)),
                )
            }
        };
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(cout)));
        Ok(VariantConv {
            variant,
            m,
            cin,
            cout,
            primary,
            secondary,
            bias,
        })
    }

    pub fn variant(&self) -> ConvVariant {
        self.variant
    }

    pub fn extent(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.cin, self.cout)
    }

    /// `(primary, secondary, bias)` parameter handles.
    pub fn param_ids(&self) -> (ParamId, Option<ParamId>, ParamId) {
        (self.primary, self.secondary, self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.variant.param_count(self.m, self.cin, self.cout)
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let cin = ctx.shape(x).c;
        if cin != self.cin {
            return Err(Error::shape(
                "variant_conv",
                format!("input has {cin} channels, layer expects {}", self.cin),
            ));
        }
        let primary = ctx.param(store, self.primary);
        let bias = ctx.param(store, self.bias);
        match (self.variant, self.secondary) {
            (ConvVariant::Vanilla, _) => ctx.conv2d(x, &primary, Some(&bias)),
            (ConvVariant::Cross, Some(col)) => {
                let col = ctx.param(store, col);
                let horizontal = ctx.conv2d(x, &primary, Some(&bias))?;
                let vertical = ctx.conv2d(x, &col, None)?;
                ctx.add(&horizontal, &vertical)
            }
            (ConvVariant::Seq, Some(col)) => {
                let col = ctx.param(store, col);
                let horizontal = ctx.conv2d(x, &primary, None)?;
                ctx.conv2d(&horizontal, &col, Some(&bias))
            }
            _ => unreachable!("factorized variants always carry two banks"),
        }
    }

    /// The equivalent full `[cout, cin, m, m]` kernel.
    pub fn effective_kernel<T: Scalar>(&self, store: &ParamStore<T>) -> Tensor<T> {
        let primary = store.get(self.primary);
        let m = self.m;
        match (self.variant, self.secondary) {
            (ConvVariant::Vanilla, _) => primary.clone(),
            (ConvVariant::Cross, Some(col)) => {
                materialize_cross(primary, store.get(col)).expect("bank shapes fixed at build")
            }
            (ConvVariant::Seq, Some(col)) => {
                let col = store.get(col);
                Tensor::from_fn(Shape::new(self.cout, self.cin, m, m), |o, i, dy, dx| {
                    (0..self.cout)
                        .map(|j| col.at(o, j, dy, 0) * primary.at(j, i, 0, dx))
                        .sum()
                })
            }
            _ => unreachable!("factorized variants always carry two banks"),
        }
    }
}

/// Place a `[cout, cin, 1, m]` row bank on the center row and a
/// `[cout, cin, m, 1]` column bank on the center column of an `m×m` kernel.
/// The center cell receives both contributions.
pub fn materialize_cross<T: Scalar>(row: &Tensor<T>, col: &Tensor<T>) -> Result<Tensor<T>> {
    let rs = row.shape();
    let cs = col.shape();
    if rs.h != 1 || cs.w != 1 || rs.w != cs.h || rs.n != cs.n || rs.c != cs.c {
        return Err(Error::shape(
            "materialize_cross",
            format!("row bank {rs} and column bank {cs} do not form a cross"),
        ));
    }
    let m = rs.w;
    let center = m / 2;
    Ok(Tensor::from_fn(Shape::new(rs.n, rs.c, m, m), |o, i, dy, dx| {
        let mut v = T::zero();
        if dy == center {
            v = v + row.at(o, i, 0, dx);
        }
        if dx == center {
            v = v + col.at(o, i, dy, 0);
        }
        v
    }))
}

/// Singular values (descending) of a row-major `m×m` matrix.
pub fn singular_values(matrix: &[f64], m: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), m * m, "expected an {m}x{m} matrix");
    let mat = DMatrix::from_row_slice(m, m, matrix);
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol × largest`.
pub fn numerical_rank(matrix: &[f64], m: usize, rel_tol: f64) -> usize {
    let sv = singular_values(matrix, m);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}

/// Squeeze-and-excitation gate: `x ⊙ σ(W2·relu(W1·gap(x) + b1) + b2)`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    channels: usize,
    reduced: usize,
    fc1_weight: ParamId,
    fc1_bias: ParamId,
    fc2_weight: ParamId,
    fc2_bias: ParamId,
}

impl ChannelAttention {
    pub fn reduced_width(channels: usize, reduction: usize) -> usize {
        (channels / reduction).max(1)
    }

    pub fn param_count(channels: usize, reduction: usize) -> usize {
        let r = Self::reduced_width(channels, reduction);
        channels * r + r + r * channels + channels
    }

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Self {
        let reduced = Self::reduced_width(channels, reduction);
        let w1 = init_uniform(Shape::new(reduced, channels, 1, 1), channels, 1.0, rng);
        let w2 = init_uniform(Shape::new(channels, reduced, 1, 1), reduced, 1.0, rng);
        ChannelAttention {
            channels,
            reduced,
            fc1_weight: store.add(format!("{name}.fc1.weight"), w1),
            fc1_bias: store.add(format!("{name}.fc1.bias"), Tensor::zeros(Shape::vector(reduced))),
            fc2_weight: store.add(format!("{name}.fc2.weight"), w2),
            fc2_bias: store.add(format!("{name}.fc2.bias"), Tensor::zeros(Shape::vector(channels))),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduced(&self) -> usize {
        self.reduced
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias]
    }

    /// The per-channel gate in `(0, 1)`, shape `[N, C, 1, 1]`.
    pub fn gate<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let squeezed = ctx.global_avg_pool(x);
        let w1 = ctx.param(store, self.fc1_weight);
        let b1 = ctx.param(store, self.fc1_bias);
        let w2 = ctx.param(store, self.fc2_weight);
        let b2 = ctx.param(store, self.fc2_bias);
        let hidden = ctx.fully_connected(&squeezed, &w1, Some(&b1))?;
        let hidden = ctx.relu(&hidden);
        let logits = ctx.fully_connected(&hidden, &w2, Some(&b2))?;
        Ok(ctx.sigmoid(&logits))
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let gate = self.gate(ctx, store, x)?;
        ctx.mul_channelwise(x, &gate)
    }
}

/// Per-channel depthwise filter with bias, added back onto its input.
#[derive(Clone, Debug)]
pub struct FeatureNorm {
    channels: usize,
    weight: ParamId,
    bias: ParamId,
}

impl FeatureNorm {
    pub fn param_count(channels: usize, kernel: usize) -> usize {
        channels * kernel * kernel + channels
    }

    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "feature-norm kernel {kernel} must be odd"
            )));
        }
        let w = init_uniform(Shape::new(channels, 1, kernel, kernel), kernel * kernel, gain, rng);
        Ok(FeatureNorm {
            channels,
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(Shape::vector(channels))),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn param_ids(&self) -> (ParamId, ParamId) {
        (self.weight, self.bias)
    }

    pub fn forward<T: Scalar, C: Compute<T>>(
        &self,
        ctx: &mut C,
        store: &ParamStore<T>,
        x: &C::Value,
    ) -> Result<C::Value> {
        let c = ctx.shape(x).c;
        if c != self.channels {
            return Err(Error::shape(
                "feature_norm",
                format!("input has {c} channels, filters cover {}", self.channels),
            ));
        }
        let w = ctx.param(store, self.weight);
        let b = ctx.param(store, self.bias);
        let filtered = ctx.depthwise_conv2d(x, &w, Some(&b))?;
        ctx.add(&filtered, x)
    }
}
