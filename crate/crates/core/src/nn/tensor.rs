//! Dense 4-D tensor (batch, channels, rows, cols) of f64.

/// Row-major dense 4-D array. Shape order is (n, c, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let k = self.idx(n, c, i, j);
        self.data[k] = v;
    }

    /// Contiguous (h*w) plane for one (sample, channel).
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        let start = (n * self.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Contiguous (c*h*w) block for one sample.
    #[inline]
    pub fn sample(&self, n: usize) -> &[f64] {
        let chw = self.c * self.h * self.w;
        &self.data[n * chw..(n + 1) * chw]
    }

    #[inline]
    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let chw = self.c * self.h * self.w;
        &mut self.data[n * chw..(n + 1) * chw]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks single-sample tensors of identical (c, h, w) into one batch.
    pub fn stack(samples: &[Tensor4]) -> Tensor4 {
        assert!(!samples.is_empty());
        let (_, c, h, w) = samples[0].shape();
        let mut out = Tensor4::zeros(samples.len(), c, h, w);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.shape(), (1, c, h, w));
            out.sample_mut(i).copy_from_slice(s.sample(0));
        }
        out
    }

    /// Concatenates tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor4]) -> Tensor4 {
        assert!(!parts.is_empty());
        let (n, _, h, w) = parts[0].shape();
        let c_total: usize = parts.iter().map(|p| p.c()).sum();
        for p in parts {
            assert_eq!((p.n(), p.h(), p.w()), (n, h, w), "concat shape mismatch");
        }
        let mut out = Tensor4::zeros(n, c_total, h, w);
        for ni in 0..n {
            let mut c_off = 0;
            for p in parts {
                for ci in 0..p.c() {
                    out.plane_mut(ni, c_off + ci)
                        .copy_from_slice(p.plane(ni, ci));
                }
                c_off += p.c();
            }
        }
        out
    }

    /// Splits a tensor along the channel axis into blocks of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Vec<Tensor4> {
        assert_eq!(sizes.iter().sum::<usize>(), self.c, "split sizes mismatch");
        let mut out = Vec::with_capacity(sizes.len());
        let mut c_off = 0;
        for &sz in sizes {
            let mut t = Tensor4::zeros(self.n, sz, self.h, self.w);
            for ni in 0..self.n {
                for ci in 0..sz {
                    t.plane_mut(ni, ci)
                        .copy_from_slice(self.plane(ni, c_off + ci));
                }
            }
            out.push(t);
            c_off += sz;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let mut t = Tensor4::zeros(2, 3, 4, 5);
        t.set(1, 2, 3, 4, 7.0);
        assert_eq!(t.as_slice()[t.idx(1, 2, 3, 4)], 7.0);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 5);
        assert_eq!(t.idx(0, 1, 0, 0), 20);
        assert_eq!(t.idx(1, 0, 0, 0), 60);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor4::from_vec(1, 2, 2, 2, (0..8).map(f64::from).collect());
        let b = Tensor4::from_vec(1, 1, 2, 2, (8..12).map(f64::from).collect());
        let cat = Tensor4::concat_channels(&[&a, &b]);
        assert_eq!(cat.shape(), (1, 3, 2, 2));
        let parts = cat.split_channels(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
