//! K-space sampling masks with variable-density Poisson-disk generation.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Boolean k-space sampling pattern (true = sampled location).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
    /// Target acceleration factor the mask was generated for.
    pub acceleration: f64,
    /// Side fraction of the fully sampled low-frequency center square.
    pub center_fraction: f64,
}

impl SamplingMask {
    pub fn full(h: usize, w: usize) -> Self {
        SamplingMask {
            height: h,
            width: w,
            data: vec![true; h * w],
            acceleration: 1.0,
            center_fraction: 0.0,
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask data length {} != {h}x{w}",
                data.len()
            )));
        }
        Ok(SamplingMask {
            height: h,
            width: w,
            data,
            acceleration: 0.0,
            center_fraction: 0.0,
        })
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len() as f64
    }
}

/// DFT-index distance to the nearest alias of the spectrum center.
fn freq_radius(i: usize, n: usize) -> f64 {
    let i = i as isize;
    let n = n as isize;
    let d = i.min((n - i).abs());
    d as f64
}

/// Variable-density Poisson-disk mask in DFT index space.
///
/// Dart throwing visits every grid location in a seeded random order and
/// accepts a location when no previously accepted sample lies within its
/// local exclusion radius. The radius grows away from the k-space center
/// (density ~ 1/(1 + r)), and the base radius is tuned by bisection until
/// the sampled fraction lands within 10% of 1/R. The low-frequency center
/// square (side = round(center_fraction * min(H, W))) is always fully
/// sampled and counted toward the target.
pub fn make_poisson_disk_mask(
    h: usize,
    w: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if acceleration < 1.0 {
        return Err(Error::Argument(format!(
            "acceleration must be >= 1, got {acceleration}"
        )));
    }
    if !(0.0..=0.25).contains(&center_fraction) {
        return Err(Error::Argument(format!(
            "center_fraction must be in [0, 0.25], got {center_fraction}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Argument("mask dimensions must be positive".into()));
    }
    if acceleration == 1.0 {
        return Ok(SamplingMask::full(h, w));
    }

    let target = 1.0 / acceleration;
    let tol = 0.1 * target;

    // Center square in DFT coordinates wraps around the origin.
    let side = ((center_fraction * h.min(w) as f64).round() as usize).min(h.min(w));
    let mut center = vec![false; h * w];
    if side > 0 {
        let half_lo = side / 2;
        let half_hi = side - half_lo;
        for dy in 0..side {
            let y = (h + dy) - half_lo;
            let y = y % h;
            for dx in 0..side {
                let x = (w + dx) - half_lo;
                let x = x % w;
                center[y * w + x] = true;
            }
        }
        let _ = half_hi;
    }

    // One candidate order shared by every bisection trial keeps the whole
    // procedure a pure function of the seed.
    let mut order: Vec<usize> = (0..h * w).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let max_radius = (h.max(w)) as f64;
    let mut lo = 0.0f64; // denser than needed
    let mut hi = max_radius; // sparser than needed
    let mut best: Option<(f64, Vec<bool>)> = None;

    for _ in 0..60 {
        let r_base = 0.5 * (lo + hi);
        let mask = throw_darts(h, w, r_base, &order, &center);
        let frac = mask.iter().filter(|&&b| b).count() as f64 / (h * w) as f64;
        if (frac - target).abs() <= tol {
            best = Some((frac, mask));
            break;
        }
        if frac > target {
            lo = r_base; // too dense -> larger radius
        } else {
            hi = r_base;
        }
    }

    let (_, data) = best.ok_or_else(|| {
        Error::Tuning(format!(
            "poisson-disk bisection could not reach fraction {target:.4} +/- 10% \
             on a {h}x{w} grid"
        ))
    })?;

    Ok(SamplingMask {
        height: h,
        width: w,
        data,
        acceleration,
        center_fraction,
    })
}

fn throw_darts(
    h: usize,
    w: usize,
    r_base: f64,
    order: &[usize],
    center: &[bool],
) -> Vec<bool> {
    let mut accepted = center.to_vec();
    let r_max = ((h as f64 / 2.0).powi(2) + (w as f64 / 2.0).powi(2)).sqrt();

    // Local exclusion radius: spacing ~ sqrt(1 + 2 r/r_max) so density
    // falls like 1/(1 + r) toward the k-space edge.
    let local_radius = |y: usize, x: usize| -> f64 {
        let r = (freq_radius(y, h).powi(2) + freq_radius(x, w).powi(2)).sqrt();
        r_base * (1.0 + 2.0 * r / r_max).sqrt()
    };

    for &p in order {
        if accepted[p] {
            continue;
        }
        let (y, x) = (p / w, p % w);
        let rad = local_radius(y, x);
        let reach = rad.ceil() as isize;
        let mut blocked = false;
        'scan: for dy in -reach..=reach {
            for dx in -reach..=reach {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let yy = y as isize + dy;
                let xx = x as isize + dx;
                if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                    continue;
                }
                if accepted[yy as usize * w + xx as usize]
                    && ((dy * dy + dx * dx) as f64) < rad * rad
                {
                    blocked = true;
                    break 'scan;
                }
            }
        }
        if !blocked {
            accepted[p] = true;
        }
    }
    accepted
}
