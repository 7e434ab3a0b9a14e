//! Weight initialization for the learned blocks.
//!
//! Kernels default to variance-scaled uniform values in
//! +/- sqrt(6 / (fan_in + fan_out)) with zero biases. Blocks that sit on a
//! residual path get a zero final convolution so every network starts out
//! as (a perturbation of) its classical algorithm. Exact linear maps are
//! wired through ReLU blocks by embedding +x and -x in separate channels
//! and recombining, which is exact in floating point.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Uniform bound sqrt(6 / (fan_in + fan_out)) for a 3x3 kernel.
pub fn glorot_bound(cin: usize, cout: usize) -> f64 {
    (6.0 / (9.0 * cin as f64 + 9.0 * cout as f64)).sqrt()
}

pub fn glorot_kernel(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = glorot_bound(cin, cout);
    (0..9 * cin * cout).map(|_| rng.gen_range(-b..b)).collect()
}

/// Center-tap delta kernel mapping channel `from` to channel `to`.
pub fn delta_entry(kernel: &mut [f64], cin: usize, cout: usize, from: usize, to: usize, v: f64) {
    debug_assert_eq!(kernel.len(), 9 * cin * cout);
    kernel[(4 * cin + from) * cout + to] = v;
}

/// Kernels realizing out = sum_g coeffs[g] * group_g for a chain of conv
/// layers with a ReLU after every layer except the last. The input is
/// treated as `n_groups` groups of `group_ch` channels; every hidden width
/// must hold the 2 * n_groups * group_ch signed copies.
///
/// Layer 0 embeds +x and -x per input channel, middle layers pass the
/// signed copies through unchanged (ReLU is then a no-op on them), and the
/// final layer recombines with the requested coefficients.
pub fn linear_chain_kernels(
    widths: &[usize],
    group_ch: usize,
    coeffs: &[f64],
) -> Option<Vec<Vec<f64>>> {
    let n_groups = coeffs.len();
    let signed = 2 * n_groups * group_ch;
    if widths.first() != Some(&(n_groups * group_ch)) || *widths.last()? != group_ch {
        return None;
    }
    for &wd in &widths[1..widths.len() - 1] {
        if wd < signed {
            return None;
        }
    }
    let mut kernels = Vec::new();
    for (li, pair) in widths.windows(2).enumerate() {
        let (cin, cout) = (pair[0], pair[1]);
        let mut k = vec![0.0; 9 * cin * cout];
        if li == 0 {
            for g in 0..n_groups {
                for ch in 0..group_ch {
                    let src = g * group_ch + ch;
                    delta_entry(&mut k, cin, cout, src, 2 * src, 1.0);
                    delta_entry(&mut k, cin, cout, src, 2 * src + 1, -1.0);
                }
            }
        } else if li + 1 < widths.len() - 1 {
            for ch in 0..signed {
                delta_entry(&mut k, cin, cout, ch, ch, 1.0);
            }
        } else {
            for g in 0..n_groups {
                for ch in 0..group_ch {
                    let src = g * group_ch + ch;
                    delta_entry(&mut k, cin, cout, 2 * src, ch, coeffs[g]);
                    delta_entry(&mut k, cin, cout, 2 * src + 1, ch, -coeffs[g]);
                }
            }
        }
        kernels.push(k);
    }
    Some(kernels)
}

/// Kernels for an exact identity pair: `fwd_widths` maps c channels into a
/// feature space carrying signed copies, `bwd_widths` recombines them, and
/// bwd(fwd(x)) == x exactly. Elementwise soft thresholding between the two
/// acts on the signed copies, so the composition with a threshold equals
/// the image-domain soft threshold.
pub fn identity_pair_kernels(
    fwd_widths: &[usize],
    bwd_widths: &[usize],
) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let c = *fwd_widths.first()?;
    if *bwd_widths.last()? != c || fwd_widths.last() != bwd_widths.first() {
        return None;
    }
    let signed = 2 * c;
    for &wd in &fwd_widths[1..] {
        if wd < signed {
            return None;
        }
    }
    for &wd in &bwd_widths[..bwd_widths.len() - 1] {
        if wd < signed {
            return None;
        }
    }
    let mut fwd = Vec::new();
    for (li, pair) in fwd_widths.windows(2).enumerate() {
        let (cin, cout) = (pair[0], pair[1]);
        let mut k = vec![0.0; 9 * cin * cout];
        if li == 0 {
            for ch in 0..c {
                delta_entry(&mut k, cin, cout, ch, 2 * ch, 1.0);
                delta_entry(&mut k, cin, cout, ch, 2 * ch + 1, -1.0);
            }
        } else {
            for ch in 0..signed {
                delta_entry(&mut k, cin, cout, ch, ch, 1.0);
            }
        }
        fwd.push(k);
    }
    let mut bwd = Vec::new();
    for (li, pair) in bwd_widths.windows(2).enumerate() {
        let (cin, cout) = (pair[0], pair[1]);
        let mut k = vec![0.0; 9 * cin * cout];
        if li + 1 < bwd_widths.len() - 1 {
            for ch in 0..signed {
                delta_entry(&mut k, cin, cout, ch, ch, 1.0);
            }
        } else {
            for ch in 0..c {
                delta_entry(&mut k, cin, cout, 2 * ch, ch, 1.0);
                delta_entry(&mut k, cin, cout, 2 * ch + 1, ch, -1.0);
            }
        }
        bwd.push(k);
    }
    Some((fwd, bwd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_chain_covers_three_conv_blocks() {
        let ks = linear_chain_kernels(&[4, 32, 32, 2], 2, &[0.25, -0.75]).unwrap();
        assert_eq!(ks.len(), 3);
        assert_eq!(ks[0].len(), 9 * 4 * 32);
        assert_eq!(ks[2].len(), 9 * 32 * 2);
    }

    #[test]
    fn rejects_too_narrow_hidden_layer() {
        assert!(linear_chain_kernels(&[4, 6, 2], 2, &[1.0, -1.0]).is_none());
    }
}
