//! Differentiable primitives. Every forward has a matching backward that takes the
//! forward input and the upstream gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution with zero "same" padding. Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_c: usize, out_c: usize, kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            dilation,
            weight: vec![T::zero(); out_c * in_c * kernel * kernel],
            bias: vec![T::zero(); out_c],
        }
    }

    /// Uniform fan-in initialisation with variance `1 / fan_in`; zero bias.
    pub fn init(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut c = Self::zeros(in_c, out_c, kernel, stride, dilation);
        let bound = (3.0 / (in_c * kernel * kernel) as f64).sqrt();
        for w in &mut c.weight {
            *w = T::of(rng.gen_range(-bound..=bound));
        }
        c
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.in_c,
            self.out_c,
            self.kernel,
            self.stride,
            self.dilation,
        )
    }

    fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    /// Output columns `ox` whose source column `ox * stride + off` lies inside `0..w`.
    fn valid_range(off: isize, stride: usize, len_in: usize, len_out: usize) -> (usize, usize) {
        let s = stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = (len_in as isize - 1 - off).div_euclid(s) + 1;
        (lo.max(0) as usize, hi.clamp(0, len_out as isize) as usize)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_c {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_c,
                x.channels()
            )));
        }
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    /// Unfolds `x` into a `(in_c * k * k) x (oh * ow)` patch matrix.
    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (h, w) = x.spatial();
        let (s, pad) = (self.stride, self.pad() as isize);
        let p = oh * ow;
        let kk = self.kernel * self.kernel;
        let mut cols = vec![T::zero(); self.in_c * kk * p];
        for ic in 0..self.in_c {
            let inp = x.plane(ic);
            for ky in 0..self.kernel {
                let dy = (ky * self.dilation) as isize - pad;
                let (ylo, yhi) = Self::valid_range(dy, s, h, oh);
                for kx in 0..self.kernel {
                    let dx = (kx * self.dilation) as isize - pad;
                    let (xlo, xhi) = Self::valid_range(dx, s, w, ow);
                    let row = &mut cols[(ic * kk + ky * self.kernel + kx) * p..][..p];
                    for oy in ylo..yhi {
                        let iy = ((oy * s) as isize + dy) as usize;
                        let src = &inp[iy * w..(iy + 1) * w];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for ox in xlo..xhi {
                            dst[ox] = src[((ox * s) as isize + dx) as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col).
    fn col2im(&self, cols: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let (s, pad) = (self.stride, self.pad() as isize);
        let p = oh * ow;
        let kk = self.kernel * self.kernel;
        let mut dx = Tensor::zeros(self.in_c, h, w);
        for ic in 0..self.in_c {
            let out = dx.plane_mut(ic);
            for ky in 0..self.kernel {
                let dy = (ky * self.dilation) as isize - pad;
                let (ylo, yhi) = Self::valid_range(dy, s, h, oh);
                for kx in 0..self.kernel {
                    let dx_off = (kx * self.dilation) as isize - pad;
                    let (xlo, xhi) = Self::valid_range(dx_off, s, w, ow);
                    let row = &cols[(ic * kk + ky * self.kernel + kx) * p..][..p];
                    for oy in ylo..yhi {
                        let iy = ((oy * s) as isize + dy) as usize;
                        let src = &row[oy * ow..(oy + 1) * ow];
                        let dst = &mut out[iy * w..(iy + 1) * w];
                        for ox in xlo..xhi {
                            dst[((ox * s) as isize + dx_off) as usize] += src[ox];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (h, w) = x.spatial();
        let (oh, ow) = self.output_dims(h, w);
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            y.plane_mut(oc).fill(self.bias[oc]);
        }
        let k = self.in_c * self.kernel * self.kernel;
        let owned;
        let cols = if self.is_pointwise() {
            x.data()
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        T::gemm(
            self.out_c,
            k,
            oh * ow,
            &self.weight,
            false,
            cols,
            false,
            T::one(),
            y.data_mut(),
        );
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Conv2d<T>) -> Tensor<T> {
        let (h, w) = x.spatial();
        let (oh, ow) = dy.spatial();
        let p = oh * ow;
        let k = self.in_c * self.kernel * self.kernel;
        for oc in 0..self.out_c {
            grad.bias[oc] += dy.plane(oc).iter().copied().sum();
        }
        let owned;
        let cols = if self.is_pointwise() {
            x.data()
        } else {
            owned = self.im2col(x, oh, ow);
            &owned
        };
        T::gemm(
            self.out_c,
            p,
            k,
            dy.data(),
            false,
            cols,
            true,
            T::one(),
            &mut grad.weight,
        );
        if self.is_pointwise() {
            let mut dx = Tensor::zeros(self.in_c, h, w);
            T::gemm(
                k,
                self.out_c,
                p,
                &self.weight,
                true,
                dy.data(),
                false,
                T::zero(),
                dx.data_mut(),
            );
            return dx;
        }
        let mut dcols = vec![T::zero(); k * p];
        T::gemm(
            k,
            self.out_c,
            p,
            &self.weight,
            true,
            dy.data(),
            false,
            T::zero(),
            &mut dcols,
        );
        self.col2im(&dcols, h, w, oh, ow)
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its pre-activation input.
pub fn relu_backward<T: Scalar>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    dy.zip_map(pre, |g, p| if p > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Source index pairs and weights for half-pixel bilinear resampling along one axis.
fn axis_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (h, w) = x.spatial();
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut y = Tensor::zeros(x.channels(), oh, ow);
    for c in 0..x.channels() {
        let src = x.plane(c);
        let dst = y.plane_mut(c);
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::of(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    y
}

/// Adjoint of [`resize_bilinear`] back onto an `h x w` grid.
pub fn resize_bilinear_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (oh, ow) = dy.spatial();
    let ty = axis_taps(h, oh);
    let tx = axis_taps(w, ow);
    let mut dx = Tensor::zeros(dy.channels(), h, w);
    for c in 0..dy.channels() {
        let g = dy.plane(c);
        let dst = dx.plane_mut(c);
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let ly = T::of(ly);
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let lx = T::of(lx);
                let v = g[oy * ow + ox];
                let (top, bot) = (v * (T::one() - ly), v * ly);
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    resize_bilinear(x, 2 * x.height(), 2 * x.width())
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    resize_bilinear_backward(dy, dy.height() / 2, dy.width() / 2)
}

/// Mean over the spatial grid, giving a `(c, 1, 1)` tensor.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = T::of(x.plane_len() as f64);
    let data = (0..x.channels())
        .map(|c| x.plane(c).iter().copied().sum::<T>() / n)
        .collect();
    Tensor::from_vec(x.channels(), 1, 1, data).expect("shape by construction")
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let n = T::of((h * w) as f64);
    let mut dx = Tensor::zeros(dy.channels(), h, w);
    for c in 0..dy.channels() {
        let g = dy.data()[c] / n;
        dx.plane_mut(c).fill(g);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Direct definition of a padded, strided, dilated convolution.
    fn naive_conv(c: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (h, w) = x.spatial();
        let (oh, ow) = c.output_dims(h, w);
        let pad = (c.dilation * (c.kernel - 1) / 2) as isize;
        let mut y = Tensor::zeros(c.out_c, oh, ow);
        for oc in 0..c.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = c.bias[oc];
                    for ic in 0..c.in_c {
                        for ky in 0..c.kernel {
                            for kx in 0..c.kernel {
                                let iy = (oy * c.stride + ky * c.dilation) as isize - pad;
                                let ix = (ox * c.stride + kx * c.dilation) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += c.weight
                                        [((oc * c.in_c + ic) * c.kernel + ky) * c.kernel + kx]
                                        * x.at(ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.data_mut()[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (k, s, d, h, w) in [
            (3, 1, 1, 5, 6),
            (3, 2, 1, 8, 8),
            (3, 1, 2, 7, 5),
            (3, 1, 4, 9, 9),
            (1, 1, 1, 3, 4),
        ] {
            let c: Conv2d<f64> = Conv2d::init(3, 4, k, s, d, &mut rng);
            let mut c = c;
            c.bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-1.0..1.0));
            let x = rand_tensor(3, h, w, &mut rng);
            let got = c.forward(&x).unwrap();
            let want = naive_conv(&c, &x);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> == <x, conv^T(g)> and weight grads via linearity in w
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (s, d) in [(1, 1), (2, 1), (1, 2)] {
            let c: Conv2d<f64> = Conv2d::init(2, 3, 3, s, d, &mut rng);
            let x = rand_tensor(2, 6, 6, &mut rng);
            let y = c.forward(&x).unwrap();
            let g = rand_tensor(3, y.height(), y.width(), &mut rng);
            let mut grad = c.zeros_like();
            let dx = c.backward(&x, &g, &mut grad);
            let lhs: f64 = y
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                - (0..3)
                    .map(|oc| c.bias[oc] * g.plane(oc).iter().sum::<f64>())
                    .sum::<f64>();
            let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            let rhs_w: f64 = c.weight.iter().zip(&grad.weight).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-10);
        }
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (h, w, oh, ow) in [(2, 3, 4, 6), (4, 4, 16, 16), (3, 3, 3, 3), (1, 1, 4, 4)] {
            let x = rand_tensor(2, h, w, &mut rng);
            let y = resize_bilinear(&x, oh, ow);
            let g = rand_tensor(2, oh, ow, &mut rng);
            let dx = resize_bilinear_backward(&g, h, w);
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_preserves_constants_and_identity() {
        let x = Tensor::full(1, 3, 5, 0.7f64);
        assert!(resize_bilinear(&x, 12, 20)
            .data()
            .iter()
            .all(|v| (v - 0.7).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(2, 4, 3, &mut rng);
        assert_eq!(resize_bilinear(&x, 4, 3), x);
    }

    #[test]
    fn pooling_roundtrip() {
        let x = Tensor::from_vec(2, 1, 2, vec![1.0f64, 3.0, -1.0, 1.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.0, 0.0]);
        let g =
            global_avg_pool_backward(&Tensor::from_vec(2, 1, 1, vec![2.0f64, 4.0]).unwrap(), 1, 2);
        assert_eq!(g.data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
