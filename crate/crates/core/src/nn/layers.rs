//! Per-chunk kernels. Activations are stored sample-major: `[n, C, H, W]`
//! for images and `[n, D]` for flat features.

use super::real::{gemm, Mat, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn ohw(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_size(&self) -> usize {
        self.cin * self.h * self.w
    }

    /// Input coordinate for output position `o` and kernel offset `kk`, if
    /// it falls inside the unpadded input of extent `len`.
    fn src(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        (o * self.stride + kk).checked_sub(self.pad).filter(|&i| i < len)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let ohw = g.ohw();
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let Some(iy) = g.src(oy, ki, g.h) else {
                        drow.fill(T::zero());
                        continue;
                    };
                    let src = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        *d = g.src(ox, kj, g.w).map_or(T::zero(), |ix| src[ix]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let ohw = g.ohw();
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let Some(iy) = g.src(oy, ki, g.h) else { continue };
                    let drow = &mut dx[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    for ox in 0..g.ow {
                        if let Some(ix) = g.src(ox, kj, g.w) {
                            drow[ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns `(y, cols)`; `cols` is cached for the backward pass.
pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, n: usize, x: &[T], weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut cols = vec![T::zero(); n * ckk * ohw];
    let mut y = vec![T::zero(); n * g.cout * ohw];
    for s in 0..n {
        let cs = &mut cols[s * ckk * ohw..(s + 1) * ckk * ohw];
        im2col(g, &x[s * g.in_size()..(s + 1) * g.in_size()], cs);
        let ys = &mut y[s * g.cout * ohw..(s + 1) * g.cout * ohw];
        for (oc, row) in ys.chunks_exact_mut(ohw).enumerate() {
            row.fill(bias[oc]);
        }
        gemm(
            g.cout,
            ckk,
            ohw,
            Mat::rows(weight, ckk),
            Mat::rows(cs, ohw),
            T::one(),
            ys,
        );
    }
    (y, cols)
}

/// Accumulates weight and bias gradients; returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    n: usize,
    cols: &[T],
    weight: &[T],
    dy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let (ckk, ohw) = (g.ckk(), g.ohw());
    let mut dx = need_dx.then(|| vec![T::zero(); n * g.in_size()]);
    let mut dcols = if need_dx {
        vec![T::zero(); ckk * ohw]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let dys = &dy[s * g.cout * ohw..(s + 1) * g.cout * ohw];
        let cs = &cols[s * ckk * ohw..(s + 1) * ckk * ohw];
        gemm(g.cout, ohw, ckk, Mat::rows(dys, ohw), Mat::t(cs, ohw), T::one(), gw);
        for (b, row) in gb.iter_mut().zip(dys.chunks_exact(ohw)) {
            *b += row.iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                ckk,
                g.cout,
                ohw,
                Mat::t(weight, ckk),
                Mat::rows(dys, ohw),
                T::zero(),
                &mut dcols,
            );
            col2im_add(g, &dcols, &mut dx[s * g.in_size()..(s + 1) * g.in_size()]);
        }
    }
    dx
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub stride: usize,
}

/// Returns `(y, argmax)`; `argmax` holds the within-sample input index of
/// each output's maximum (first on ties).
pub(crate) fn maxpool_forward<T: Real>(g: &PoolGeom, n: usize, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let (isz, osz) = (g.c * g.h * g.w, g.c * g.oh * g.ow);
    let mut y = vec![T::zero(); n * osz];
    let mut arg = vec![0u32; n * osz];
    for s in 0..n {
        let xs = &x[s * isz..(s + 1) * isz];
        for c in 0..g.c {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut best_i = (c * g.h + oy * g.stride) * g.w + ox * g.stride;
                    let mut best = xs[best_i];
                    for ki in 0..g.k {
                        for kj in 0..g.k {
                            let i = (c * g.h + oy * g.stride + ki) * g.w + ox * g.stride + kj;
                            if xs[i] > best {
                                best = xs[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = s * osz + (c * g.oh + oy) * g.ow + ox;
                    y[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(g: &PoolGeom, n: usize, arg: &[u32], dy: &[T]) -> Vec<T> {
    let (isz, osz) = (g.c * g.h * g.w, g.c * g.oh * g.ow);
    let mut dx = vec![T::zero(); n * isz];
    for s in 0..n {
        for o in 0..osz {
            dx[s * isz + arg[s * osz + o] as usize] += dy[s * osz + o];
        }
    }
    dx
}

/// `y = x·Wᵀ + b` with `W` stored `[outputs, inputs]`.
pub(crate) fn dense_forward<T: Real>(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let mut y = vec![T::zero(); n * outputs];
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(bias);
    }
    gemm(
        n,
        inputs,
        outputs,
        Mat::rows(x, inputs),
        Mat::t(weight, inputs),
        T::one(),
        &mut y,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    gemm(
        outputs,
        n,
        inputs,
        Mat::t(dy, outputs),
        Mat::rows(x, inputs),
        T::one(),
        gw,
    );
    for row in dy.chunks_exact(outputs) {
        for (b, &d) in gb.iter_mut().zip(row) {
            *b += d;
        }
    }
    need_dx.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        gemm(
            n,
            outputs,
            inputs,
            Mat::rows(dy, outputs),
            Mat::rows(weight, inputs),
            T::zero(),
            &mut dx,
        );
        dx
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; g.cout * g.ohw()];
        for oc in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = b[oc];
                    for c in 0..g.cin {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    acc += w[((oc * g.cin + c) * g.k + ki) * g.k + kj]
                                        * x[(c * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(oc * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
            let (h, w, k) = (5, 6, 3);
            let g = ConvGeom {
                cin: 2,
                h,
                w,
                cout: 3,
                oh: (h + 2 * pad - k) / stride + 1,
                ow: (w + 2 * pad - k) / stride + 1,
                k,
                stride,
                pad,
            };
            let x: Vec<f64> = (0..2 * g.in_size()).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
            let wt: Vec<f64> = (0..g.cout * g.ckk())
                .map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3)
                .collect();
            let b = [0.5, -1.0, 2.0];
            let (y, _) = conv_forward(&g, 2, &x, &wt, &b);
            for s in 0..2 {
                let want = naive_conv(&g, &x[s * g.in_size()..(s + 1) * g.in_size()], &wt, &b);
                let got = &y[s * g.cout * g.ohw()..(s + 1) * g.cout * g.ohw()];
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_picks_window_max() {
        let g = PoolGeom {
            c: 1,
            h: 4,
            w: 4,
            oh: 2,
            ow: 2,
            k: 2,
            stride: 2,
        };
        let x: Vec<f64> = vec![
            1.0, 2.0, 0.0, 0.0, //
            3.0, 4.0, 0.0, 9.0, //
            -1.0, -2.0, 5.0, 5.0, //
            -3.0, -0.5, 5.0, 5.0,
        ];
        let (y, arg) = maxpool_forward(&g, 1, &x);
        assert_eq!(y, vec![4.0, 9.0, -0.5, 5.0]);
        assert_eq!(arg, vec![5, 7, 13, 10]);
        let dx = maxpool_backward(&g, 1, &arg, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dx.iter().sum::<f64>(), 10.0);
        assert_eq!(dx[10], 4.0);
    }

    #[test]
    fn dense_round_trip_shapes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let w = [1.0, 0.0, -1.0, 0.5, 0.5, 0.5];
        let y = dense_forward(2, 3, 2, &x, &w, &[0.0, 1.0]);
        assert_eq!(y, vec![-2.0, 4.0, -2.0, 8.5]);
        let mut gw = [0.0; 6];
        let mut gb = [0.0; 2];
        let dx = dense_backward(2, 3, 2, &x, &w, &[1.0, 0.0, 0.0, 1.0], &mut gw, &mut gb, true).unwrap();
        assert_eq!(gw, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(gb, [1.0, 1.0]);
        assert_eq!(dx, vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]);
    }
}
