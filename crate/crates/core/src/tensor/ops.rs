use super::{numel, Backward, Element, Tensor};
use crate::error::{Error, Result};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Vec<T> {
    x.data().iter().map(|&v| f(v)).collect()
}

fn zip<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

/// Calls `f(dst_offset, src_offset)` for every element of `dst`, where `src`
/// is broadcast along its size-1 axes.
fn for_each_broadcast(src: &[usize], dst: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = dst.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        src_strides[d] = if src[d] == 1 { 0 } else { acc };
        acc *= src[d];
    }
    let last = rank - 1;
    let inner = dst[last];
    let inner_stride = src_strides[last];
    let outer: usize = dst[..last].iter().product();
    let mut idx = vec![0usize; last];
    let mut dst_off = 0;
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(dst_off + j, base + j * inner_stride);
        }
        dst_off += inner;
        for d in (0..last).rev() {
            idx[d] += 1;
            if idx[d] < dst[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn check_broadcast(op: &'static str, small: &[usize], big: &[usize]) -> Result<()> {
    let ok = small.len() == big.len()
        && small.iter().zip(big).all(|(&s, &b)| s == b || s == 1);
    if !ok {
        return Err(Error::shape(
            op,
            format!("{small:?} does not broadcast to {big:?}"),
        ));
    }
    Ok(())
}

struct AddOp;
impl<T: Element> Backward<T> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, g: &Tensor<T>, _: &[Tensor<T>], needs: &[bool]) -> Grads<T> {
        Ok(needs.iter().map(|&n| n.then(|| g.clone())).collect())
    }
}

struct SubOp;
impl<T: Element> Backward<T> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, g: &Tensor<T>, _: &[Tensor<T>], needs: &[bool]) -> Grads<T> {
        Ok(vec![needs[0].then(|| g.clone()), needs[1].then(|| g.neg())])
    }
}

struct MulOp;
impl<T: Element> Backward<T> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], needs: &[bool]) -> Grads<T> {
        let ga = if needs[0] { Some(g.mul(&x[1])?) } else { None };
        let gb = if needs[1] { Some(g.mul(&x[0])?) } else { None };
        Ok(vec![ga, gb])
    }
}

struct DivOp;
impl<T: Element> Backward<T> for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], needs: &[bool]) -> Grads<T> {
        let ga = if needs[0] { Some(g.div(&x[1])?) } else { None };
        let gb = if needs[1] {
            // -g·a / b²
            Some(g.mul(&x[0])?.div(&x[1].square()?)?.neg())
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

struct ScaleOp(f64);
impl<T: Element> Backward<T> for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, g: &Tensor<T>, _: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.scale(self.0))])
    }
}

struct AddScalarOp;
impl<T: Element> Backward<T> for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, g: &Tensor<T>, _: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.clone())])
    }
}

/// Elementwise multiply by a locally constant derivative (relu, abs, ...).
struct PiecewiseLinearOp {
    name: &'static str,
    slope: fn(f64, f64) -> f64,
    param: f64,
}
impl<T: Element> Backward<T> for PiecewiseLinearOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        let p = self.param;
        let f = self.slope;
        let d: Vec<T> = x[0]
            .data()
            .iter()
            .map(|&v| T::from_f64(f(v.as_f64(), p)))
            .collect();
        let d = Tensor::new(d, x[0].shape())?;
        Ok(vec![Some(g.mul(&d)?)])
    }
}

struct TanhOp;
impl<T: Element> Backward<T> for TanhOp {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        let t = x[0].tanh();
        let d = t.square()?.neg().add_scalar(1.0);
        Ok(vec![Some(g.mul(&d)?)])
    }
}

struct SigmoidOp;
impl<T: Element> Backward<T> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        let s = x[0].sigmoid();
        let d = s.mul(&s.neg().add_scalar(1.0))?;
        Ok(vec![Some(g.mul(&d)?)])
    }
}

struct SqrtOp;
impl<T: Element> Backward<T> for SqrtOp {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.div(&x[0].sqrt().scale(2.0))?)])
    }
}

struct SumOp;
impl<T: Element> Backward<T> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        let shape = x[0].shape();
        let ones = vec![1; shape.len()];
        Ok(vec![Some(g.reshape(&ones)?.expand(shape)?)])
    }
}

struct ExpandOp;
impl<T: Element> Backward<T> for ExpandOp {
    fn name(&self) -> &'static str {
        "expand"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.sum_to(x[0].shape())?)])
    }
}

struct SumToOp;
impl<T: Element> Backward<T> for SumToOp {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.expand(x[0].shape())?)])
    }
}

struct ReshapeOp;
impl<T: Element> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.reshape(x[0].shape())?)])
    }
}

struct CatOp {
    axis: usize,
}
impl<T: Element> Backward<T> for CatOp {
    fn name(&self) -> &'static str {
        "cat"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], needs: &[bool]) -> Grads<T> {
        let mut start = 0;
        let mut out = Vec::with_capacity(x.len());
        for (t, &need) in x.iter().zip(needs) {
            let len = t.shape()[self.axis];
            out.push(if need {
                Some(g.narrow(self.axis, start, len)?)
            } else {
                None
            });
            start += len;
        }
        Ok(out)
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}
impl<T: Element> Backward<T> for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }
    fn backward(&self, g: &Tensor<T>, x: &[Tensor<T>], _: &[bool]) -> Grads<T> {
        let full = x[0].shape();
        let len = g.shape()[self.axis];
        let after = full[self.axis] - self.start - len;
        let mut parts = Vec::new();
        let pad = |n: usize| {
            let mut s = full.to_vec();
            s[self.axis] = n;
            Tensor::zeros(&s)
        };
        if self.start > 0 {
            parts.push(pad(self.start));
        }
        parts.push(g.clone());
        if after > 0 {
            parts.push(pad(after));
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(vec![Some(Tensor::cat(&refs, self.axis)?)])
    }
}

fn relu_slope(v: f64, _: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn leaky_slope(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

fn sign(v: f64, _: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, other: &Self) -> Result<Self> {
        same_shape("add", self, other)?;
        Ok(Self::from_op(
            self.shape().to_vec(),
            zip(self, other, |a, b| a + b),
            AddOp,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_shape("sub", self, other)?;
        Ok(Self::from_op(
            self.shape().to_vec(),
            zip(self, other, |a, b| a - b),
            SubOp,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        same_shape("mul", self, other)?;
        Ok(Self::from_op(
            self.shape().to_vec(),
            zip(self, other, |a, b| a * b),
            MulOp,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        same_shape("div", self, other)?;
        Ok(Self::from_op(
            self.shape().to_vec(),
            zip(self, other, |a, b| a / b),
            DivOp,
            vec![self.clone(), other.clone()],
        ))
    }

    pub fn scale(&self, c: f64) -> Self {
        let k = T::from_f64(c);
        Self::from_op(self.shape().to_vec(), map(self, |v| v * k), ScaleOp(c), vec![self.clone()])
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        let k = T::from_f64(c);
        Self::from_op(self.shape().to_vec(), map(self, |v| v + k), AddScalarOp, vec![self.clone()])
    }

    pub fn square(&self) -> Result<Self> {
        self.mul(self)
    }

    pub fn relu(&self) -> Self {
        let zero = T::zero();
        Self::from_op(
            self.shape().to_vec(),
            map(self, |v| if v > zero { v } else { zero }),
            PiecewiseLinearOp {
                name: "relu",
                slope: relu_slope,
                param: 0.0,
            },
            vec![self.clone()],
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let zero = T::zero();
        let k = T::from_f64(slope);
        Self::from_op(
            self.shape().to_vec(),
            map(self, |v| if v > zero { v } else { v * k }),
            PiecewiseLinearOp {
                name: "leaky_relu",
                slope: leaky_slope,
                param: slope,
            },
            vec![self.clone()],
        )
    }

    pub fn abs(&self) -> Self {
        Self::from_op(
            self.shape().to_vec(),
            map(self, |v| v.abs()),
            PiecewiseLinearOp {
                name: "abs",
                slope: sign,
                param: 0.0,
            },
            vec![self.clone()],
        )
    }

    pub fn tanh(&self) -> Self {
        Self::from_op(self.shape().to_vec(), map(self, |v| v.tanh()), TanhOp, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Self {
        let one = T::one();
        Self::from_op(
            self.shape().to_vec(),
            map(self, |v| one / (one + (-v).exp())),
            SigmoidOp,
            vec![self.clone()],
        )
    }

    pub fn sqrt(&self) -> Self {
        Self::from_op(self.shape().to_vec(), map(self, |v| v.sqrt()), SqrtOp, vec![self.clone()])
    }

    /// Sum of all elements as a scalar (shape `[]`).
    pub fn sum(&self) -> Self {
        let mut acc = T::zero();
        for &v in self.data() {
            acc = acc + v;
        }
        Self::from_op(Vec::new(), vec![acc], SumOp, vec![self.clone()])
    }

    pub fn mean(&self) -> Self {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Broadcasts size-1 axes up to `shape` (ranks must agree).
    pub fn expand(&self, shape: &[usize]) -> Result<Self> {
        check_broadcast("expand", self.shape(), shape)?;
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each_broadcast(self.shape(), shape, |d, s| out[d] = src[s]);
        Ok(Self::from_op(shape.to_vec(), out, ExpandOp, vec![self.clone()]))
    }

    /// Sums over the axes where `shape` has extent 1; inverse of [`expand`](Self::expand).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        check_broadcast("sum_to", shape, self.shape())?;
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let src = self.data();
        let mut out = vec![T::zero(); numel(shape)];
        for_each_broadcast(shape, self.shape(), |s, d| out[d] = out[d] + src[s]);
        Ok(Self::from_op(shape.to_vec(), out, SumToOp, vec![self.clone()]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        Ok(Self::from_op(shape.to_vec(), self.to_vec(), ReshapeOp, vec![self.clone()]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn cat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cat", "no tensors to concatenate"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape("cat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape(
                    "cat",
                    format!("{:?} incompatible with {:?} along axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self::from_op(
            shape,
            out,
            CatOp { axis },
            parts.iter().map(|&p| p.clone()).collect(),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}+{len} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let full = self.shape()[axis];
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        Ok(Self::from_op(shape, out, NarrowOp { axis, start }, vec![self.clone()]))
    }
}
