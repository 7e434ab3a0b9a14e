//! 3x3 convolution kernels (forward and backward passes).
//!
//! Layout: input `[H, W, C_in]`, kernel `[3, 3, C_in, C_out]`, bias
//! `[C_out]`, output `[H, W, C_out]`. Stride 1, zero padding 1, so the
//! spatial size is preserved. These are the hot loops of network training;
//! the inner loops run over the output-channel axis, which is contiguous
//! for both the kernel and the activations.

/// out[y,x,co] = bias[co] + sum_{ky,kx,ci} in[y+ky-1, x+kx-1, ci] * k[ky,kx,ci,co]
pub fn forward(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    kernel: &[f64],
    cout: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(input.len(), h * w * cin);
    debug_assert_eq!(kernel.len(), 9 * cin * cout);
    debug_assert_eq!(bias.len(), cout);
    debug_assert_eq!(out.len(), h * w * cout);

    for y in 0..h {
        for x in 0..w {
            let orow = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            orow.copy_from_slice(bias);
            for ky in 0..3 {
                let yy = y + ky;
                if yy < 1 || yy > h {
                    continue;
                }
                let yy = yy - 1;
                for kx in 0..3 {
                    let xx = x + kx;
                    if xx < 1 || xx > w {
                        continue;
                    }
                    let xx = xx - 1;
                    let irow = &input[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &a) in irow.iter().enumerate() {
                        let krow = &kernel[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &kv) in orow.iter_mut().zip(krow.iter()) {
                            *o += a * kv;
                        }
                    }
                }
            }
        }
    }
}

/// grad_in[yy,xx,ci] += sum_{ky,kx,co} grad_out[y,x,co] * k[ky,kx,ci,co]
/// where (yy,xx) = (y+ky-1, x+kx-1). Accumulates into `grad_in`.
pub fn backward_input(
    grad_out: &[f64],
    h: usize,
    w: usize,
    cout: usize,
    kernel: &[f64],
    cin: usize,
    grad_in: &mut [f64],
) {
    debug_assert_eq!(grad_out.len(), h * w * cout);
    debug_assert_eq!(grad_in.len(), h * w * cin);

    for y in 0..h {
        for x in 0..w {
            let grow = &grad_out[(y * w + x) * cout..(y * w + x + 1) * cout];
            for ky in 0..3 {
                let yy = y + ky;
                if yy < 1 || yy > h {
                    continue;
                }
                let yy = yy - 1;
                for kx in 0..3 {
                    let xx = x + kx;
                    if xx < 1 || xx > w {
                        continue;
                    }
                    let xx = xx - 1;
                    let gi = &mut grad_in[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, giv) in gi.iter_mut().enumerate() {
                        let krow = &kernel[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let mut acc = 0.0;
                        for (g, kv) in grow.iter().zip(krow.iter()) {
                            acc += g * kv;
                        }
                        *giv += acc;
                    }
                }
            }
        }
    }
}

/// grad_k[ky,kx,ci,co] += sum_{y,x} in[y+ky-1,x+kx-1,ci] * grad_out[y,x,co]
pub fn backward_kernel(
    input: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    grad_out: &[f64],
    cout: usize,
    grad_k: &mut [f64],
) {
    debug_assert_eq!(grad_k.len(), 9 * cin * cout);
    for y in 0..h {
        for x in 0..w {
            let grow = &grad_out[(y * w + x) * cout..(y * w + x + 1) * cout];
            for ky in 0..3 {
                let yy = y + ky;
                if yy < 1 || yy > h {
                    continue;
                }
                let yy = yy - 1;
                for kx in 0..3 {
                    let xx = x + kx;
                    if xx < 1 || xx > w {
                        continue;
                    }
                    let xx = xx - 1;
                    let irow = &input[(yy * w + xx) * cin..(yy * w + xx + 1) * cin];
                    let kbase = (ky * 3 + kx) * cin * cout;
                    for (ci, &a) in irow.iter().enumerate() {
                        let krow = &mut grad_k[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (gk, &g) in krow.iter_mut().zip(grow.iter()) {
                            *gk += a * g;
                        }
                    }
                }
            }
        }
    }
}

/// grad_bias[co] += sum_{y,x} grad_out[y,x,co]
pub fn backward_bias(grad_out: &[f64], cout: usize, grad_bias: &mut [f64]) {
    debug_assert_eq!(grad_bias.len(), cout);
    for row in grad_out.chunks_exact(cout) {
        for (b, &g) in grad_bias.iter_mut().zip(row.iter()) {
            *b += g;
        }
    }
}
