//! Forward and backward passes of the individual layers.
//!
//! Feature maps are `channels × frames` matrices. Every backward function
//! accumulates (`+=`) into the gradient tensors it is given.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, Axis};

/// Number of frames produced for `len` samples; the signal is zero-padded at
/// the end so the last frame is complete.
pub fn n_frames(len: usize, frame: usize, hop: usize) -> usize {
    if len <= frame {
        1
    } else {
        (len - frame).div_ceil(hop) + 1
    }
}

/// `frame × n_frames` matrix of overlapping windows.
pub fn frame_signal(x: &[f64], frame: usize, hop: usize) -> Array2<f64> {
    let f = n_frames(x.len(), frame, hop);
    let mut out = Array2::zeros((frame, f));
    for t in 0..f {
        let start = t * hop;
        for k in 0..frame {
            if let Some(&v) = x.get(start + k) {
                out[[k, t]] = v;
            }
        }
    }
    out
}

/// Overlap-add of `frame × n_frames` columns, truncated to `len` samples.
pub fn overlap_add(frames: &Array2<f64>, hop: usize, len: usize) -> Vec<f64> {
    let (frame, f) = frames.dim();
    let mut out = vec![0.0; len];
    for t in 0..f {
        let start = t * hop;
        for k in 0..frame {
            if let Some(o) = out.get_mut(start + k) {
                *o += frames[[k, t]];
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `W·X + b` with `b` broadcast over frames.
pub fn affine(w: &Array2<f64>, b: ArrayView1<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut out = w.dot(x);
    out += &b.insert_axis(Axis(1));
    out
}

/// Gradients of [`affine`]: accumulates `dW += dY·Xᵀ`, `db += Σ_t dY`.
pub fn affine_backward_params(dy: &Array2<f64>, x: &Array2<f64>, dw: &mut Array2<f64>, db: &mut Array1<f64>) {
    general_mat_mul(1.0, dy, &x.t(), 1.0, dw);
    *db += &dy.sum_axis(Axis(1));
}

/// Residual block: depthwise dilated convolution, pointwise mixing, SiLU,
/// skip connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `channels × kernel` depthwise taps.
    pub dw_w: Array2<f64>,
    pub dw_b: Array1<f64>,
    /// `channels × channels`.
    pub pw_w: Array2<f64>,
    pub pw_b: Array1<f64>,
}

pub struct ConvBlockCache {
    input: Array2<f64>,
    depthwise: Array2<f64>,
    pre_act: Array2<f64>,
}

impl ConvBlock {
    pub fn zeros(channels: usize, kernel: usize) -> Self {
        Self {
            dw_w: Array2::zeros((channels, kernel)),
            dw_b: Array1::zeros(channels),
            pw_w: Array2::zeros((channels, channels)),
            pw_b: Array1::zeros(channels),
        }
    }

    fn depthwise(&self, x: &Array2<f64>, dilation: usize) -> Array2<f64> {
        let (c, f) = x.dim();
        let k = self.dw_w.ncols();
        let half = (k / 2) as isize;
        let mut out = Array2::zeros((c, f));
        for ch in 0..c {
            let xr = x.row(ch);
            let xs = xr.as_slice().expect("standard layout");
            let mut o = out.row_mut(ch);
            let os = o.as_slice_mut().expect("standard layout");
            os.fill(self.dw_b[ch]);
            for j in 0..k {
                let w = self.dw_w[[ch, j]];
                let off = (j as isize - half) * dilation as isize;
                let (t0, t1) = valid_range(f, off);
                for t in t0..t1 {
                    os[t] += w * xs[(t as isize + off) as usize];
                }
            }
        }
        out
    }

    pub fn forward(&self, x: Array2<f64>, dilation: usize) -> (Array2<f64>, ConvBlockCache) {
        let depthwise = self.depthwise(&x, dilation);
        let pre_act = affine(&self.pw_w, self.pw_b.view(), &depthwise);
        let mut out = pre_act.mapv(silu);
        out += &x;
        (
            out,
            ConvBlockCache {
                input: x,
                depthwise,
                pre_act,
            },
        )
    }

    /// Returns the gradient w.r.t. the block input.
    pub fn backward(&self, cache: &ConvBlockCache, dout: &Array2<f64>, dilation: usize, grad: &mut ConvBlock) -> Array2<f64> {
        let mut dpre = cache.pre_act.mapv(silu_grad);
        dpre *= dout;
        affine_backward_params(&dpre, &cache.depthwise, &mut grad.pw_w, &mut grad.pw_b);
        let ddw = self.pw_w.t().dot(&dpre);

        let (c, f) = ddw.dim();
        let k = self.dw_w.ncols();
        let half = (k / 2) as isize;
        let mut dx = dout.clone();
        for ch in 0..c {
            let g = ddw.row(ch);
            let gs = g.as_slice().expect("standard layout");
            let xr = cache.input.row(ch);
            let xs = xr.as_slice().expect("standard layout");
            grad.dw_b[ch] += gs.iter().sum::<f64>();
            let mut dxr = dx.row_mut(ch);
            let dxs = dxr.as_slice_mut().expect("standard layout");
            for j in 0..k {
                let w = self.dw_w[[ch, j]];
                let off = (j as isize - half) * dilation as isize;
                let (t0, t1) = valid_range(f, off);
                let mut acc = 0.0;
                for t in t0..t1 {
                    let src = (t as isize + off) as usize;
                    acc += gs[t] * xs[src];
                    dxs[src] += w * gs[t];
                }
                grad.dw_w[[ch, j]] += acc;
            }
        }
        dx
    }
}

/// Output indices `t` for which `t + off` lies inside `0..len`.
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let t0 = (-off).max(0) as usize;
    let t1 = (len as isize - off.max(0)).max(0) as usize;
    (t0.min(len), t1.max(t0.min(len)))
}

/// Run a stack of blocks; dilation doubles with the position in the stack.
pub fn blocks_forward(blocks: &[ConvBlock], x: Array2<f64>) -> (Array2<f64>, Vec<ConvBlockCache>) {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x;
    for (i, b) in blocks.iter().enumerate() {
        let (out, cache) = b.forward(h, 1 << i);
        caches.push(cache);
        h = out;
    }
    (h, caches)
}

pub fn blocks_backward(
    blocks: &[ConvBlock],
    caches: &[ConvBlockCache],
    dout: Array2<f64>,
    grads: &mut [ConvBlock],
) -> Array2<f64> {
    let mut d = dout;
    for (i, (b, c)) in blocks.iter().zip(caches).enumerate().rev() {
        d = b.backward(c, &d, 1 << i, &mut grads[i]);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_counts() {
        assert_eq!(n_frames(10, 40, 20), 1);
        assert_eq!(n_frames(40, 40, 20), 1);
        assert_eq!(n_frames(41, 40, 20), 2);
        assert_eq!(n_frames(60, 40, 20), 2);
        assert_eq!(n_frames(8000, 40, 20), 399);
    }

    #[test]
    fn overlap_add_is_adjoint_of_framing() {
        // <frame(x), Y> == <x, ola(Y)>
        let x: Vec<f64> = (0..97).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let fr = frame_signal(&x, 8, 3);
        let y = fr.mapv(|v| v * 0.5 + 1.0);
        let lhs: f64 = fr.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let ola = overlap_add(&y, 3, x.len());
        let rhs: f64 = x.iter().zip(&ola).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let mut b = ConvBlock::zeros(2, 3);
        b.dw_w = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        b.dw_b = Array1::from(vec![0.1, -0.2]);
        let x = Array2::from_shape_fn((2, 9), |(c, t)| (c * 10 + t) as f64);
        let d = 2;
        let y = b.depthwise(&x, d);
        for c in 0..2 {
            for t in 0..9isize {
                let mut want = b.dw_b[c];
                for j in 0..3isize {
                    let src = t + (j - 1) * d as isize;
                    if (0..9).contains(&src) {
                        want += b.dw_w[[c, j as usize]] * x[[c, src as usize]];
                    }
                }
                assert!((y[[c, t as usize]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(10, 0), (0, 10));
        assert_eq!(valid_range(10, 3), (0, 7));
        assert_eq!(valid_range(10, -3), (3, 10));
        assert_eq!(valid_range(2, 8), (0, 0));
        assert_eq!(valid_range(2, -8), (2, 2));
    }
}
