use crate::error::{invalid, Error, Result};
use crate::shape::{broadcast_shape, check_broadcastable, LinMap};
use crate::tensor::{Op, Tensor};
use crate::Elem;

impl<T: Elem> Tensor<T> {
    fn unary(&self, name: &'static str, f: impl Fn(T) -> T, op: Op<T>) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(name, data, self.shape().to_vec(), op)
    }

    fn binary(
        &self,
        rhs: &Tensor<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(Tensor<T>, Tensor<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        let (a, b) = if self.shape() == rhs.shape() {
            (self.clone(), rhs.clone())
        } else {
            let shape = broadcast_shape(self.shape(), rhs.shape())?;
            (self.broadcast_to(&shape)?, rhs.broadcast_to(&shape)?)
        };
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = a.shape().to_vec();
        Tensor::from_op(name, data, shape, op(a, b))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "div", |a, b| a / b, Op::Div)
    }

    /// `scale · x + shift`.
    pub fn affine(&self, scale: T, shift: T) -> Result<Tensor<T>> {
        self.unary("affine", |v| v * scale + shift, Op::Affine(self.clone(), scale))
    }

    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        self.affine(s, T::zero())
    }

    pub fn add_scalar(&self, s: T) -> Result<Tensor<T>> {
        self.affine(T::one(), s)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.affine(-T::one(), T::zero())
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.mul(self)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary("exp", T::exp, Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        self.unary("log", T::ln, Op::Log(self.clone()))
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary("tanh", T::tanh, Op::Tanh(self.clone()))
    }

    pub fn powf(&self, p: T) -> Result<Tensor<T>> {
        self.unary("powf", |v| v.powf(p), Op::Powf(self.clone(), p))
    }

    /// Square root; its derivative is taken as 0 where the input is exactly 0.
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary("sqrt", T::sqrt, Op::Sqrt(self.clone()))
    }

    /// `1/x`, with 0 mapped to 0.
    pub fn recip_or_zero(&self) -> Result<Tensor<T>> {
        self.unary(
            "recip",
            |v| if v == T::zero() { T::zero() } else { v.recip() },
            Op::RecipOrZero(self.clone()),
        )
    }

    pub fn abs(&self) -> Result<Tensor<T>> {
        self.unary("abs", T::abs, Op::Abs(self.clone()))
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary("relu", |v| v.max(T::zero()), Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Tensor<T>> {
        self.unary(
            "leaky_relu",
            |v| if v > T::zero() { v } else { v * slope },
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    pub(crate) fn linear_map(&self, map: LinMap) -> Result<Tensor<T>> {
        debug_assert_eq!(map.in_shape(), self.shape());
        let data = map.apply(self.data());
        let shape = map.out_shape();
        let name = map.name();
        Tensor::from_op(name, data, shape, Op::Linear(self.clone(), map))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return invalid(
                "reshape",
                format!("cannot reshape {:?} to {:?}", self.shape(), shape),
            );
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        self.linear_map(LinMap::Reshape {
            from: self.shape().to_vec(),
            to: shape.to_vec(),
        })
    }

    /// Flattens everything but the leading axis.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let n = *self.shape().first().unwrap_or(&1);
        self.reshape(&[n, self.numel() / n.max(1)])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape == self.shape() {
            return Ok(self.clone());
        }
        check_broadcastable(self.shape(), shape)?;
        self.linear_map(LinMap::Broadcast {
            from: self.shape().to_vec(),
            to: shape.to_vec(),
        })
    }

    /// Sums over the axes that `shape` broadcasts along; inverse of `broadcast_to`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape == self.shape() {
            return Ok(self.clone());
        }
        check_broadcastable(shape, self.shape())?;
        self.linear_map(LinMap::SumTo {
            from: self.shape().to_vec(),
            to: shape.to_vec(),
        })
    }

    /// Sum over the given axes, keeping them as size-1 dims.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            if a >= shape.len() {
                return invalid("sum_keepdim", format!("axis {a} out of range"));
            }
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keepdim(axes)?.scale(T::one() / T::lit(count as f64))
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        self.sum_to(&[])
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = T::lit(self.numel() as f64);
        self.sum_all()?.scale(T::one() / n)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (rows, cols) = self.dims2()?;
        self.linear_map(LinMap::Transpose { rows, cols })
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.data(),
            k as isize,
            1,
            rhs.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Tensor::from_op("matmul", out, vec![m, n], Op::MatMul(self.clone(), rhs.clone()))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            );
        }
        if start == 0 && len == shape[axis] {
            return Ok(self.clone());
        }
        self.linear_map(LinMap::Narrow {
            shape: shape.to_vec(),
            axis,
            start,
            len,
        })
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument {
                op: "concat",
                msg: "no inputs".into(),
            })?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return invalid("concat", format!("axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape()[axis] * inner;
                out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let inputs = parts.iter().map(|&p| p.clone()).collect();
        Tensor::from_op("concat", out, shape, Op::Concat(inputs, axis))
    }

    /// Bilinear upsampling of an NCHW tensor (align-corners=false).
    pub fn upsample_bilinear(&self, factor: (usize, usize)) -> Result<Tensor<T>> {
        let _ = self.dims4()?;
        let (fh, fw) = factor;
        if !(1..=2).contains(&fh) || !(1..=2).contains(&fw) {
            return invalid(
                "upsample_bilinear",
                format!("unsupported factor {factor:?}; components must be 1 or 2"),
            );
        }
        if factor == (1, 1) {
            return Ok(self.clone());
        }
        self.linear_map(LinMap::Upsample {
            shape: self.shape().to_vec(),
            fh,
            fw,
        })
    }

    /// Non-overlapping k×k average pooling of an NCHW tensor.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        let (_, _, h, w) = self.dims4()?;
        if k == 0 || h < k || w < k {
            return invalid("avg_pool2d", format!("window {k} on {h}x{w}"));
        }
        self.linear_map(LinMap::AvgPool {
            shape: self.shape().to_vec(),
            k,
        })
    }
}
