//! Strided 2-D correlation and its adjoints.
//!
//! All three kernels share one weight layout, `[out_c][in_c][k][k]`, where
//! "in" and "out" refer to the forward correlation `x -> y`. A transposed
//! convolution is the adjoint of a correlation, so it reuses these kernels
//! with the roles of `x` and `y` swapped.

use super::Shape;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output positions `o` in `0..n_out` for which `o*stride + k - padding`
/// is a valid input index.
#[inline]
fn valid_range(k: usize, g: Geometry, n_in: usize, n_out: usize) -> (usize, usize) {
    let (s, p) = (g.stride as isize, g.padding as isize);
    let k = k as isize;
    // smallest o with o*s + k - p >= 0
    let lo = ((p - k).max(0) + s - 1) / s;
    // largest o with o*s + k - p <= n_in - 1
    let top = n_in as isize - 1 + p - k;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top / s + 1).min(n_out as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// `y += correlate(x, w)`.
pub(crate) fn forward(x: &[f64], xs: Shape, w: &[f64], y: &mut [f64], ys: Shape, g: Geometry) {
    let k = g.kernel;
    let (xplane, yplane) = (xs.height * xs.width, ys.height * ys.width);
    for oc in 0..ys.channels {
        let yc = &mut y[oc * yplane..(oc + 1) * yplane];
        for ic in 0..xs.channels {
            let xc = &x[ic * xplane..(ic + 1) * xplane];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ky, g, xs.height, ys.height);
                for kx in 0..k {
                    let wv = w[((oc * xs.channels + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(kx, g, xs.width, ys.width);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let yrow = &mut yc[oy * ys.width..(oy + 1) * ys.width];
                        let xrow = &xc[iy * xs.width..(iy + 1) * xs.width];
                        for ox in ox_lo..ox_hi {
                            yrow[ox] += wv * xrow[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// `gx += correlate^T(gy, w)`: the scatter that also implements a
/// transposed convolution.
pub(crate) fn adjoint(gy: &[f64], ys: Shape, w: &[f64], gx: &mut [f64], xs: Shape, g: Geometry) {
    let k = g.kernel;
    let (xplane, yplane) = (xs.height * xs.width, ys.height * ys.width);
    for oc in 0..ys.channels {
        let yc = &gy[oc * yplane..(oc + 1) * yplane];
        for ic in 0..xs.channels {
            let xc = &mut gx[ic * xplane..(ic + 1) * xplane];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ky, g, xs.height, ys.height);
                for kx in 0..k {
                    let wv = w[((oc * xs.channels + ic) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, g, xs.width, ys.width);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let yrow = &yc[oy * ys.width..(oy + 1) * ys.width];
                        let xrow = &mut xc[iy * xs.width..(iy + 1) * xs.width];
                        for ox in ox_lo..ox_hi {
                            xrow[ox * g.stride + kx - g.padding] += wv * yrow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `gw += d(y . gy)/dw` for `y = correlate(x, w)`.
pub(crate) fn weight_grad(
    x: &[f64],
    xs: Shape,
    gy: &[f64],
    ys: Shape,
    gw: &mut [f64],
    g: Geometry,
) {
    let k = g.kernel;
    let (xplane, yplane) = (xs.height * xs.width, ys.height * ys.width);
    for oc in 0..ys.channels {
        let yc = &gy[oc * yplane..(oc + 1) * yplane];
        for ic in 0..xs.channels {
            let xc = &x[ic * xplane..(ic + 1) * xplane];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ky, g, xs.height, ys.height);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(kx, g, xs.width, ys.width);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let yrow = &yc[oy * ys.width..(oy + 1) * ys.width];
                        let xrow = &xc[iy * xs.width..(iy + 1) * xs.width];
                        for ox in ox_lo..ox_hi {
                            acc += yrow[ox] * xrow[ox * g.stride + kx - g.padding];
                        }
                    }
                    gw[((oc * xs.channels + ic) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}
