use alloc::vec;
use alloc::vec::Vec;

use crate::{shape_err, Result, Scalar};

/// Dense `[channels, height, width]` array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, T::zero())
    }

    pub fn filled(c: usize, h: usize, w: usize, v: T) -> Self {
        Self { c, h, w, data: vec![v; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(shape_err!(
                "buffer of {} elements cannot hold [{c},{h},{w}]",
                data.len()
            ));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn from_fn(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Self { c, h, w, data }
    }

    /// Stacks equally sized planes into channels.
    pub fn from_planes(h: usize, w: usize, planes: &[&[T]]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for (i, p) in planes.iter().enumerate() {
            if p.len() != h * w {
                return Err(shape_err!("plane {i} has {} elements, expected {}", p.len(), h * w));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { c: planes.len(), h, w, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { c: self.c, h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

impl<T> Tensor3<T> {
    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }
}

impl<T: Copy> Tensor3<T> {
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = (c * self.h + y) * self.w + x;
        self.data[i] = v;
    }
}
