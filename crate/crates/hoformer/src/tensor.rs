//! Dense tensor algebra: shapes, fibers, slices, matricization, mode-n
//! products, Kronecker products and reshapes.
//!
//! Tensors are row-major `f64` arrays of order 1 through 4. All operations
//! are pure: inputs are never mutated, results are freshly allocated.
//!
//! Matricization convention: the mode-`m` matricization of a tensor has the
//! mode-`m` fibers as columns. Columns are ordered by the remaining axes in
//! ascending order with the last axis varying fastest (i.e. row-major order
//! over the remaining axes). Every operation in this crate that flattens or
//! rearranges indices uses this convention.

use std::fmt;

/// Maximum supported tensor order.
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Order outside `1..=MAX_ORDER`.
    OrderOutOfRange { order: usize },
    /// A shape extent was zero.
    ZeroExtent { shape: Vec<usize> },
    /// Data length does not match the product of extents.
    DataLength { expected: usize, got: usize },
    /// Mode index not smaller than the tensor order.
    ModeOutOfRange { mode: usize, order: usize },
    /// Incompatible shapes for the requested operation.
    DimMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Element index out of range.
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },
    /// Reshape target does not preserve the element count.
    ElementCount { expected: usize, got: usize },
    /// An order-2 tensor was required.
    NotMatrix { order: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::OrderOutOfRange { order } => {
                write!(f, "tensor order {order} outside 1..={MAX_ORDER}")
            }
            TensorError::ZeroExtent { shape } => {
                write!(f, "shape {shape:?} contains a zero extent")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::ModeOutOfRange { mode, order } => {
                write!(f, "mode {mode} out of range for order-{order} tensor")
            }
            TensorError::DimMismatch { context, left, right } => {
                write!(f, "{context}: incompatible shapes {left:?} and {right:?}")
            }
            TensorError::IndexOutOfRange { index, shape } => {
                write!(f, "index {index:?} out of range for shape {shape:?}")
            }
            TensorError::ElementCount { expected, got } => {
                write!(f, "reshape changes element count from {expected} to {got}")
            }
            TensorError::NotMatrix { order } => {
                write!(f, "expected an order-2 tensor, got order {order}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_ORDER {
        return Err(TensorError::OrderOutOfRange { order: shape.len() });
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::ZeroExtent { shape: shape.to_vec() });
    }
    Ok(())
}

/// Dense real tensor of order 1 to 4, row-major layout.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "DenseTensor{{shape: {:?}, data: {:?}}}", self.shape, self.data)
        } else {
            write!(
                f,
                "DenseTensor{{shape: {:?}, data: [{} values]}}",
                self.shape,
                self.data.len()
            )
        }
    }
}

impl DenseTensor {
    /// Build a tensor from a shape and row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength { expected, got: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// All-zero tensor. Panics on an invalid shape.
    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape).expect("invalid shape");
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// Constant tensor.
    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    /// Order-1 tensor holding a single scalar.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// n-by-n identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Build a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        check_shape(shape).expect("invalid shape");
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of an order-2 tensor. Panics if not a matrix.
    pub fn rows(&self) -> usize {
        assert_eq!(self.order(), 2, "rows() requires an order-2 tensor");
        self.shape[0]
    }

    /// Columns of an order-2 tensor. Panics if not a matrix.
    pub fn cols(&self) -> usize {
        assert_eq!(self.order(), 2, "cols() requires an order-2 tensor");
        self.shape[1]
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.order()
            || index.iter().zip(&self.shape).any(|(&i, &e)| i >= e)
        {
            return Err(TensorError::IndexOutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut off = 0;
        for (i, e) in index.iter().zip(&self.shape) {
            off = off * e + i;
        }
        Ok(off)
    }

    /// Element access; out-of-range indices are a hard error (panic).
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index).expect("tensor index out of range")]
    }

    /// Checked element access.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub(crate) fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index).expect("tensor index out of range");
        self.data[off] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    fn zip(&self, other: &Self, context: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::DimMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    /// Matrix transpose. Errors unless order-2.
    pub fn transpose(&self) -> Result<Self> {
        if self.order() != 2 {
            return Err(TensorError::NotMatrix { order: self.order() });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Matrix product of two order-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.order() != 2 {
            return Err(TensorError::NotMatrix { order: self.order() });
        }
        if other.order() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::DimMismatch {
                context: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (p, q, r) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Self::zeros(&[p, r]);
        // block the contraction axis so rows of `other` stay cache-resident
        // across the full sweep of output rows
        let block = (1 << 15) / r.max(1) + 1;
        for kb in (0..q).step_by(block) {
            let kb_end = (kb + block).min(q);
            for i in 0..p {
                let out_row = &mut out.data[i * r..(i + 1) * r];
                for k in kb..kb_end {
                    let a = self.data[i * q + k];
                    if a == 0.0 {
                        continue;
                    }
                    let b_row = &other.data[k * r..(k + 1) * r];
                    for (o, &b) in out_row.iter_mut().zip(b_row) {
                        *o += a * b;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Variable/timestep/feature extents of a third-order series tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub n_vars: usize,
    pub n_steps: usize,
    pub n_feat: usize,
}

impl Shape3 {
    pub fn new(n_vars: usize, n_steps: usize, n_feat: usize) -> Result<Self> {
        check_shape(&[n_vars, n_steps, n_feat])?;
        Ok(Self { n_vars, n_steps, n_feat })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.n_vars, self.n_steps, self.n_feat]
    }
}

/// Mode-`mode` matricization: fibers along `mode` become columns, remaining
/// axes ordered ascending with the last varying fastest.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    if mode >= t.order() {
        return Err(TensorError::ModeOutOfRange { mode, order: t.order() });
    }
    let e = t.shape[mode];
    let rest: usize = t.len() / e;
    let inner: usize = t.shape[mode + 1..].iter().product();
    let outer: usize = t.shape[..mode].iter().product();
    let mut out = DenseTensor::zeros(&[e, rest]);
    // row-major source decomposes as [outer, e, inner]
    for o in 0..outer {
        for r in 0..e {
            let src = &t.data[(o * e + r) * inner..(o * e + r + 1) * inner];
            let dst = &mut out.data[r * rest + o * inner..r * rest + (o + 1) * inner];
            dst.copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Product of `t` with matrix `m` along `mode`; contracts `cols(m)` against
/// the mode extent and replaces it with `rows(m)`.
pub fn mode_product(t: &DenseTensor, m: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    if mode >= t.order() {
        return Err(TensorError::ModeOutOfRange { mode, order: t.order() });
    }
    if m.order() != 2 {
        return Err(TensorError::NotMatrix { order: m.order() });
    }
    let e = t.shape[mode];
    if m.shape[1] != e {
        return Err(TensorError::DimMismatch {
            context: "mode_product",
            left: m.shape.clone(),
            right: t.shape.clone(),
        });
    }
    let r = m.shape[0];
    let inner: usize = t.shape[mode + 1..].iter().product();
    let outer: usize = t.shape[..mode].iter().product();
    let mut new_shape = t.shape.clone();
    new_shape[mode] = r;
    let mut out = DenseTensor::zeros(&new_shape);
    if inner == 1 {
        // contraction over the last axis: row-by-row dot products
        for o in 0..outer {
            let src = &t.data[o * e..(o + 1) * e];
            let dst = &mut out.data[o * r..(o + 1) * r];
            for (row, d) in dst.iter_mut().enumerate() {
                let mrow = &m.data[row * e..(row + 1) * e];
                *d = mrow.iter().zip(src).map(|(&a, &b)| a * b).sum();
            }
        }
    } else if inner >= 1024 {
        // huge fibers: tile the inner axis so the source tiles of every
        // contraction index stay cache-resident across all output rows
        const INNER_TILE: usize = 2048;
        for o in 0..outer {
            for ib in (0..inner).step_by(INNER_TILE) {
                let ib_end = (ib + INNER_TILE).min(inner);
                for row in 0..r {
                    let dst_base = (o * r + row) * inner;
                    for c in 0..e {
                        let coef = m.data[row * e + c];
                        if coef == 0.0 {
                            continue;
                        }
                        let src = &t.data[(o * e + c) * inner + ib..(o * e + c) * inner + ib_end];
                        let dst = &mut out.data[dst_base + ib..dst_base + ib_end];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += coef * s;
                        }
                    }
                }
            }
        }
    } else {
        // short fibers: block the contraction axis so a span of source
        // slabs is reused across all output rows while cache-resident
        let block = (1 << 15) / inner.max(1) + 1;
        for o in 0..outer {
            for cb in (0..e).step_by(block) {
                let cb_end = (cb + block).min(e);
                for row in 0..r {
                    let dst_base = (o * r + row) * inner;
                    for c in cb..cb_end {
                        let coef = m.data[row * e + c];
                        if coef == 0.0 {
                            continue;
                        }
                        let src = &t.data[(o * e + c) * inner..(o * e + c + 1) * inner];
                        let dst = &mut out.data[dst_base..dst_base + inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += coef * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Kronecker product of two matrices: block (i,j) of the result equals
/// `a[i,j] * b`.
pub fn kronecker(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.order() != 2 {
        return Err(TensorError::NotMatrix { order: a.order() });
    }
    if b.order() != 2 {
        return Err(TensorError::NotMatrix { order: b.order() });
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (r, c) = (ar * br, ac * bc);
    let mut out = DenseTensor::zeros(&[r, c]);
    for i in 0..ar {
        for j in 0..ac {
            let coef = a.data[i * ac + j];
            for p in 0..br {
                let dst_row = (i * br + p) * c + j * bc;
                let src_row = &b.data[p * bc..(p + 1) * bc];
                for (q, &v) in src_row.iter().enumerate() {
                    out.data[dst_row + q] = coef * v;
                }
            }
        }
    }
    Ok(out)
}

/// Slice of an (N,T,d) tensor at one timestep, yielding (N,d).
pub fn slice_time(t: &DenseTensor, step: usize) -> Result<DenseTensor> {
    if t.order() != 3 {
        return Err(TensorError::OrderOutOfRange { order: t.order() });
    }
    let [n, steps, d] = [t.shape[0], t.shape[1], t.shape[2]];
    if step >= steps {
        return Err(TensorError::IndexOutOfRange {
            index: vec![step],
            shape: t.shape.clone(),
        });
    }
    let mut out = DenseTensor::zeros(&[n, d]);
    for i in 0..n {
        let src = &t.data[(i * steps + step) * d..(i * steps + step + 1) * d];
        out.data[i * d..(i + 1) * d].copy_from_slice(src);
    }
    Ok(out)
}

/// Reinterpret the row-major data under a new shape.
pub fn reshape(t: &DenseTensor, new_shape: &[usize]) -> Result<DenseTensor> {
    check_shape(new_shape)?;
    let expected: usize = new_shape.iter().product();
    if expected != t.len() {
        return Err(TensorError::ElementCount { expected: t.len(), got: expected });
    }
    Ok(DenseTensor { shape: new_shape.to_vec(), data: t.data.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random(shape: &[usize], rng: &mut Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn construction_validates_shape_and_data() {
        assert!(DenseTensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            DenseTensor::from_vec(&[2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
        assert!(matches!(
            DenseTensor::from_vec(&[], vec![]),
            Err(TensorError::OrderOutOfRange { .. })
        ));
        assert!(matches!(
            DenseTensor::from_vec(&[2, 0], vec![]),
            Err(TensorError::ZeroExtent { .. })
        ));
        assert!(matches!(
            DenseTensor::from_vec(&[2, 2, 2, 2, 2], vec![0.0; 32]),
            Err(TensorError::OrderOutOfRange { .. })
        ));
    }

    #[test]
    fn element_access_is_checked() {
        let t = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert!(t.get(&[2, 0]).is_err());
        assert!(t.get(&[0]).is_err());
    }

    #[test]
    fn matricize_order2_mode0_is_identity() {
        let t = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m, t);
    }

    #[test]
    fn matricize_shape_arithmetic() {
        let t = DenseTensor::zeros(&[2, 3, 4]);
        assert_eq!(matricize(&t, 0).unwrap().shape(), &[2, 12]);
        assert_eq!(matricize(&t, 1).unwrap().shape(), &[3, 8]);
        assert_eq!(matricize(&t, 2).unwrap().shape(), &[4, 6]);
        assert!(matches!(matricize(&t, 3), Err(TensorError::ModeOutOfRange { .. })));
    }

    #[test]
    fn matricize_against_index_loop_oracle() {
        // t[i,j,k] = i, mode 0: row i should be constant i
        let t = DenseTensor::from_fn(&[2, 2, 2], |idx| idx[0] as f64);
        let m = matricize(&t, 0).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);

        // generic oracle: column index = row-major over remaining axes
        let mut rng = Rng::seed_from(7);
        let t = random(&[2, 3, 4], &mut rng);
        for mode in 0..3 {
            let m = matricize(&t, mode).unwrap();
            let rest: Vec<usize> = (0..3).filter(|&a| a != mode).collect();
            for i0 in 0..t.shape()[0] {
                for i1 in 0..t.shape()[1] {
                    for i2 in 0..t.shape()[2] {
                        let idx = [i0, i1, i2];
                        let col = idx[rest[0]] * t.shape()[rest[1]] + idx[rest[1]];
                        assert_eq!(m.at(&[idx[mode], col]), t.at(&idx));
                    }
                }
            }
        }
    }

    #[test]
    fn mode_product_with_identity_is_identity() {
        let mut rng = Rng::seed_from(11);
        let t = random(&[3, 4, 2], &mut rng);
        for mode in 0..3 {
            let id = DenseTensor::identity(t.shape()[mode]);
            let out = mode_product(&t, &id, mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_small_oracle() {
        // shape (1,1,2), data [1,2], multiply along mode 2 with [[0,1],[1,0]]
        let t = DenseTensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let m = DenseTensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = mode_product(&t, &m, 2).unwrap();
        assert_eq!(out.data(), &[2.0, 1.0]);
    }

    #[test]
    fn mode_products_on_distinct_modes_commute() {
        let mut rng = Rng::seed_from(23);
        let t = random(&[3, 4, 5], &mut rng);
        let a = random(&[2, 4], &mut rng);
        let b = random(&[6, 5], &mut rng);
        let ab = mode_product(&mode_product(&t, &a, 1).unwrap(), &b, 2).unwrap();
        let ba = mode_product(&mode_product(&t, &b, 2).unwrap(), &a, 1).unwrap();
        let diff = ab.sub(&ba).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "commutation residual {diff}");
    }

    #[test]
    fn mode_product_matches_matricized_form() {
        let mut rng = Rng::seed_from(31);
        let t = random(&[3, 4, 2], &mut rng);
        for mode in 0..3 {
            let m = random(&[5, t.shape()[mode]], &mut rng);
            let direct = matricize(&mode_product(&t, &m, mode).unwrap(), mode).unwrap();
            let via = m.matmul(&matricize(&t, mode).unwrap()).unwrap();
            let diff = direct.sub(&via).unwrap().frobenius_norm();
            assert!(diff < 1e-12, "mode {mode} residual {diff}");
        }
    }

    #[test]
    fn kronecker_identity_blocks() {
        let i2 = DenseTensor::identity(2);
        let k = kronecker(&i2, &i2).unwrap();
        assert_eq!(k, DenseTensor::identity(4));
    }

    #[test]
    fn kronecker_block_expansion() {
        let a = DenseTensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let k = kronecker(&a, &b).unwrap();
        let expected = vec![
            0.0, 1.0, 0.0, 2.0, //
            1.0, 0.0, 2.0, 0.0, //
            0.0, 3.0, 0.0, 4.0, //
            3.0, 0.0, 4.0, 0.0,
        ];
        assert_eq!(k.data(), expected.as_slice());
    }

    #[test]
    fn kronecker_mixed_product_property() {
        let mut rng = Rng::seed_from(41);
        for _ in 0..10 {
            let a = random(&[3, 3], &mut rng);
            let b = random(&[4, 4], &mut rng);
            let x = random(&[3, 1], &mut rng);
            let y = random(&[4, 1], &mut rng);
            let lhs = kronecker(&a, &b).unwrap().matmul(&kronecker(&x, &y).unwrap()).unwrap();
            let rhs = kronecker(&a.matmul(&x).unwrap(), &b.matmul(&y).unwrap()).unwrap();
            let diff = lhs.sub(&rhs).unwrap().frobenius_norm();
            assert!(diff < 1e-12, "mixed product residual {diff}");
        }
    }

    #[test]
    fn slice_time_matches_index_oracle() {
        let c = DenseTensor::filled(&[3, 4, 2], 2.5);
        assert_eq!(slice_time(&c, 1).unwrap(), DenseTensor::filled(&[3, 2], 2.5));

        let t = DenseTensor::from_fn(&[2, 4, 3], |idx| idx[1] as f64);
        let s = slice_time(&t, 2).unwrap();
        assert_eq!(s, DenseTensor::filled(&[2, 3], 2.0));

        assert!(slice_time(&t, 4).is_err());
    }

    #[test]
    fn slices_partition_the_tensor() {
        let mut rng = Rng::seed_from(5);
        let t = random(&[3, 4, 2], &mut rng);
        let mut rebuilt = DenseTensor::zeros(&[3, 4, 2]);
        for step in 0..4 {
            let s = slice_time(&t, step).unwrap();
            for i in 0..3 {
                for k in 0..2 {
                    rebuilt.set(&[i, step, k], s.at(&[i, k]));
                }
            }
        }
        assert_eq!(rebuilt, t);
    }

    #[test]
    fn reshape_preserves_row_major_data() {
        let t = DenseTensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = reshape(&t, &[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.shape(), &[3, 2]);
        assert!(reshape(&t, &[4, 2]).is_err());
        let q = reshape(&DenseTensor::zeros(&[2, 2, 2, 2]), &[4, 4]).unwrap();
        assert_eq!(q.shape(), &[4, 4]);
    }

    #[test]
    fn shape3_validation() {
        assert!(Shape3::new(2, 3, 4).is_ok());
        assert!(Shape3::new(0, 3, 4).is_err());
    }

    proptest! {
        #[test]
        fn reshape_is_an_involution(
            n in 1usize..4, m in 1usize..4, k in 1usize..4,
            seed in 0u64..1000
        ) {
            let mut rng = Rng::seed_from(seed);
            let t = random(&[n, m, k], &mut rng);
            let flat = reshape(&t, &[n * m * k]).unwrap();
            let back = reshape(&flat, &[n, m, k]).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn kronecker_shape_contract(
            ar in 1usize..4, ac in 1usize..4, br in 1usize..4, bc in 1usize..4,
            seed in 0u64..1000
        ) {
            let mut rng = Rng::seed_from(seed);
            let a = random(&[ar, ac], &mut rng);
            let b = random(&[br, bc], &mut rng);
            let k = kronecker(&a, &b).unwrap();
            prop_assert_eq!(k.shape(), &[ar * br, ac * bc]);
            for i in 0..ar {
                for j in 0..ac {
                    for p in 0..br {
                        for q in 0..bc {
                            prop_assert_eq!(k.at(&[i * br + p, j * bc + q]), a.at(&[i, j]) * b.at(&[p, q]));
                        }
                    }
                }
            }
        }
    }
}
