//! Multi-channel feature maps and the fixed operator set of the network:
//! bias-free 3x3 convolution, mask gating, pooling and upsampling, each
//! with its adjoint.

use crate::multigrid::{pool_interior_adjoint_acc, pool_interior_into, prolong_adjoint_acc, prolong_into};
use crate::stencil::correlate_tap;

/// Channel-major stack of `c` fields of side `n`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Features {
    pub c: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn zeros(c: usize, n: usize) -> Self {
        Self {
            c,
            n,
            data: vec![0.0; c * n * n],
        }
    }

    #[inline]
    pub fn channel(&self, k: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.data[k * nn..(k + 1) * nn]
    }

    #[inline]
    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        &mut self.data[k * nn..(k + 1) * nn]
    }

    pub fn gate(&mut self, mask: &[f64]) {
        for ch in self.data.chunks_exact_mut(mask.len()) {
            for (v, &m) in ch.iter_mut().zip(mask) {
                *v *= m;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Features) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn pool(&self) -> Features {
        let nc = self.n.div_ceil(2);
        let mut out = Features::zeros(self.c, nc);
        for k in 0..self.c {
            pool_interior_into(self.channel(k), self.n, out.channel_mut(k));
        }
        out
    }

    /// Adjoint of [`Features::pool`]; `self` lives on the coarse grid.
    pub fn pool_adjoint(&self, nf: usize) -> Features {
        let mut out = Features::zeros(self.c, nf);
        for k in 0..self.c {
            pool_interior_adjoint_acc(self.channel(k), nf, out.channel_mut(k));
        }
        out
    }

    pub fn upsample(&self) -> Features {
        let nf = 2 * self.n - 1;
        let mut out = Features::zeros(self.c, nf);
        for k in 0..self.c {
            prolong_into(self.channel(k), self.n, out.channel_mut(k));
        }
        out
    }

    /// Adjoint of [`Features::upsample`]; `self` lives on the fine grid.
    pub fn upsample_adjoint(&self) -> Features {
        let nc = self.n.div_ceil(2);
        let mut out = Features::zeros(self.c, nc);
        for k in 0..self.c {
            prolong_adjoint_acc(self.channel(k), nc, out.channel_mut(k));
        }
        out
    }
}

/// Weights of a bias-free 3x3 convolution, laid out `[c_out][c_in][3][3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeight {
    pub c_out: usize,
    pub c_in: usize,
    pub w: Vec<f64>,
}

impl ConvWeight {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            c_out,
            c_in,
            w: vec![0.0; c_out * c_in * 9],
        }
    }

    #[inline]
    fn taps(&self, o: usize, i: usize) -> &[f64] {
        let at = (o * self.c_in + i) * 9;
        &self.w[at..at + 9]
    }

    pub(crate) fn forward(&self, x: &Features) -> Features {
        debug_assert_eq!(x.c, self.c_in);
        let n = x.n;
        let mut out = Features::zeros(self.c_out, n);
        for o in 0..self.c_out {
            let dst = out.channel_mut(o);
            for i in 0..self.c_in {
                let src = x.channel(i);
                for (t, &w) in self.taps(o, i).iter().enumerate() {
                    if w != 0.0 {
                        correlate_tap(src, n, t / 3, t % 3, w, dst);
                    }
                }
            }
        }
        out
    }

    /// Given the input `x` and the gradient `g` at the output, accumulates
    /// the weight gradient into `grad` and returns the input gradient.
    pub(crate) fn backward(&self, x: &Features, g: &Features, grad: &mut ConvWeight) -> Features {
        let n = x.n;
        let mut gin = Features::zeros(self.c_in, n);
        for o in 0..self.c_out {
            let go = g.channel(o);
            for i in 0..self.c_in {
                let xi = x.channel(i);
                let at = (o * self.c_in + i) * 9;
                for t in 0..9 {
                    let (a, b) = (t / 3, t % 3);
                    grad.w[at + t] += tap_dot(go, xi, n, a, b);
                    let w = self.w[at + t];
                    if w != 0.0 {
                        // adjoint of tap (a, b) is tap (2 - a, 2 - b)
                        correlate_tap(go, n, 2 - a, 2 - b, w, gin.channel_mut(i));
                    }
                }
            }
        }
        gin
    }
}

/// `sum_p g[p] * x[p + (a - 1, b - 1)]` over in-bounds points.
#[inline]
fn tap_dot(g: &[f64], x: &[f64], n: usize, a: usize, b: usize) -> f64 {
    let (i0, i1) = (if a == 0 { 1 } else { 0 }, if a == 2 { n - 1 } else { n });
    let (j0, j1) = (if b == 0 { 1 } else { 0 }, if b == 2 { n - 1 } else { n });
    let mut s = 0.0;
    for i in i0..i1 {
        let si = i + a - 1;
        let gr = &g[i * n + j0..i * n + j1];
        let xr = &x[si * n + j0 + b - 1..si * n + j1 + b - 1];
        s += gr.iter().zip(xr).map(|(p, q)| p * q).sum::<f64>();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_features(c: usize, n: usize, rng: &mut ChaCha8Rng) -> Features {
        Features {
            c,
            n,
            data: (0..c * n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn dot(a: &Features, b: &Features) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_adjoint_and_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut conv = ConvWeight::zeros(3, 2);
        conv.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let x = rand_features(2, 9, &mut rng);
        let g = rand_features(3, 9, &mut rng);
        let mut grad = ConvWeight::zeros(3, 2);
        let gin = conv.backward(&x, &g, &mut grad);
        // <conv(x), g> = <x, conv^T g>
        assert!((dot(&conv.forward(&x), &g) - dot(&x, &gin)).abs() < 1e-12);
        // <conv(x), g> is linear in the weights, so d/dw is exact
        for k in 0..conv.w.len() {
            let mut e = ConvWeight::zeros(3, 2);
            e.w[k] = 1.0;
            assert!((dot(&e.forward(&x), &g) - grad.w[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = rand_features(2, 17, &mut rng);
        let c = rand_features(2, 9, &mut rng);
        assert!((dot(&f.pool(), &c) - dot(&f, &c.pool_adjoint(17))).abs() < 1e-12);
        assert!((dot(&c.upsample(), &f) - dot(&c, &f.upsample_adjoint())).abs() < 1e-12);
    }
}
