use super::kernels as k;
use super::{Scalar, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// The op vocabulary layers are written against. Implemented by the recording
/// [`Tape`], the tape-free [`Eager`] executor and the shape-only [`ShapeTracer`],
/// so one forward definition serves training, inference and accounting.
pub trait Compute<T: Scalar> {
    type Value: Clone;

    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::Value;
    fn shape(&self, v: &Self::Value) -> Shape;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn depthwise_conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: f64) -> Self::Value;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Self::Value;
    fn fully_connected(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul_channelwise(&mut self, x: &Self::Value, g: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn split_channels(&mut self, x: &Self::Value, sizes: &[usize]) -> Result<Vec<Self::Value>>;
}

impl<T: Scalar> Compute<T> for Tape<T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.param_leaf(store, id)
    }
    fn shape(&self, v: &Var) -> Shape {
        Tape::shape(self, *v)
    }
    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::conv2d(self, *x, *w, b.copied())
    }
    fn depthwise_conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::depthwise_conv2d(self, *x, *w, b.copied())
    }
    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Var {
        Tape::leaky_relu(self, *x, slope)
    }
    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }
    fn sigmoid(&mut self, x: &Var) -> Var {
        Tape::sigmoid(self, *x)
    }
    fn global_avg_pool(&mut self, x: &Var) -> Var {
        Tape::global_avg_pool(self, *x)
    }
    fn fully_connected(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        Tape::fully_connected(self, *x, *w, b.copied())
    }
    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        Tape::pixel_shuffle(self, *x, r)
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }
    fn mul_channelwise(&mut self, x: &Var, g: &Var) -> Result<Var> {
        Tape::mul_channelwise(self, *x, *g)
    }
    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        Tape::concat_channels(self, parts)
    }
    fn split_channels(&mut self, x: &Var, sizes: &[usize]) -> Result<Vec<Var>> {
        Tape::split_channels(self, *x, sizes)
    }
}

/// Tape-free executor for inference.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Compute<T> for Eager {
    type Value = Tensor<T>;

    fn constant(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        store.get(id).clone()
    }
    fn shape(&self, v: &Tensor<T>) -> Shape {
        v.shape()
    }
    fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        k::conv2d(x, w, b)
    }
    fn depthwise_conv2d(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        k::depthwise_conv2d(x, w, b)
    }
    fn leaky_relu(&mut self, x: &Tensor<T>, slope: f64) -> Tensor<T> {
        k::leaky_relu(x, slope)
    }
    fn relu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        k::relu(x)
    }
    fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        k::sigmoid(x)
    }
    fn global_avg_pool(&mut self, x: &Tensor<T>) -> Tensor<T> {
        k::global_avg_pool(x)
    }
    fn fully_connected(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        k::fully_connected(x, w, b)
    }
    fn pixel_shuffle(&mut self, x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        k::pixel_shuffle(x, r)
    }
    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        k::add(a, b)
    }
    fn mul_channelwise(&mut self, x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        k::mul_channelwise(x, g)
    }
    fn concat_channels(&mut self, parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        k::concat_channels(&refs)
    }
    fn split_channels(&mut self, x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        k::split_channels(x, sizes)
    }
}

/// Propagates shapes only and tallies multiply-accumulates: for every conv and
/// fully-connected op, weight elements × output spatial positions × batch.
#[derive(Clone, Debug, Default)]
pub struct ShapeTracer {
    macs: u64,
}

impl ShapeTracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn tally(&mut self, weight: &Shape, out: &Shape) {
        self.macs += (weight.numel() * out.plane() * out.n) as u64;
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::shape(op, detail)
}

impl<T: Scalar> Compute<T> for ShapeTracer {
    type Value = Shape;

    fn constant(&mut self, t: Tensor<T>) -> Shape {
        t.shape()
    }
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Shape {
        store.get(id).shape()
    }
    fn shape(&self, v: &Shape) -> Shape {
        *v
    }
    fn conv2d(&mut self, x: &Shape, w: &Shape, _b: Option<&Shape>) -> Result<Shape> {
        if x.c != w.c || w.h.is_multiple_of(2) || w.w.is_multiple_of(2) {
            return Err(shape_err("conv2d", format!("input {x} vs weight {w}")));
        }
        let out = Shape::new(x.n, w.n, x.h, x.w);
        self.tally(w, &out);
        Ok(out)
    }
    fn depthwise_conv2d(&mut self, x: &Shape, w: &Shape, _b: Option<&Shape>) -> Result<Shape> {
        if x.c != w.n || w.c != 1 {
            return Err(shape_err("depthwise_conv2d", format!("input {x} vs weight {w}")));
        }
        self.tally(w, x);
        Ok(*x)
    }
    fn leaky_relu(&mut self, x: &Shape, _slope: f64) -> Shape {
        *x
    }
    fn relu(&mut self, x: &Shape) -> Shape {
        *x
    }
    fn sigmoid(&mut self, x: &Shape) -> Shape {
        *x
    }
    fn global_avg_pool(&mut self, x: &Shape) -> Shape {
        Shape::new(x.n, x.c, 1, 1)
    }
    fn fully_connected(&mut self, x: &Shape, w: &Shape, _b: Option<&Shape>) -> Result<Shape> {
        if x.h != 1 || x.w != 1 || w.c != x.c {
            return Err(shape_err("fully_connected", format!("input {x} vs weight {w}")));
        }
        let out = Shape::new(x.n, w.n, 1, 1);
        self.tally(w, &out);
        Ok(out)
    }
    fn pixel_shuffle(&mut self, x: &Shape, r: usize) -> Result<Shape> {
        if r == 0 || !x.c.is_multiple_of(r * r) {
            return Err(shape_err("pixel_shuffle", format!("{} channels, r={r}", x.c)));
        }
        Ok(Shape::new(x.n, x.c / (r * r), x.h * r, x.w * r))
    }
    fn add(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        if a != b {
            return Err(shape_err("add", format!("{a} vs {b}")));
        }
        Ok(*a)
    }
    fn mul_channelwise(&mut self, x: &Shape, g: &Shape) -> Result<Shape> {
        if *g != Shape::new(x.n, x.c, 1, 1) {
            return Err(shape_err("mul_channelwise", format!("{x} vs gate {g}")));
        }
        Ok(*x)
    }
    fn concat_channels(&mut self, parts: &[Shape]) -> Result<Shape> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs".into()))?;
        Ok(Shape::new(
            first.n,
            parts.iter().map(|s| s.c).sum(),
            first.h,
            first.w,
        ))
    }
    fn split_channels(&mut self, x: &Shape, sizes: &[usize]) -> Result<Vec<Shape>> {
        if sizes.iter().sum::<usize>() != x.c {
            return Err(shape_err("split_channels", format!("{sizes:?} vs {x}")));
        }
        Ok(sizes.iter().map(|&c| Shape::new(x.n, c, x.h, x.w)).collect())
    }
}
