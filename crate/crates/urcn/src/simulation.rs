//! Synthetic phantoms, measurement simulation, and dataset assembly.
//!
//! Phantoms stand in for clinical data: piecewise-constant ellipse scenes
//! with intensities in [0, 1]. MRI samples get a smooth low-order
//! polynomial phase so the two-channel complex path is genuinely
//! exercised; measurements are masked k-space grids with optional complex
//! Gaussian noise. CT samples are noise-free sparse-view sinograms.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::container::DatasetContainer;
use crate::error::{Error, Result};
use crate::operators::{
    fft2_forward, make_poisson_disk_mask, FanBeamOperator, LinearOperator, SamplingMask,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    RandomEllipses,
}

impl PhantomKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "shepp_logan" => Ok(PhantomKind::SheppLogan),
            "random_ellipses" => Ok(PhantomKind::RandomEllipses),
            other => Err(Error::Argument(format!("unknown phantom kind {other:?}"))),
        }
    }
}

/// Modified Shepp-Logan ellipse table: (intensity, a, b, x0, y0, angle_deg)
/// on the [-1, 1]^2 square, with contrast-enhanced intensities.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn render_ellipses(n: usize, ellipses: &[(f64, f64, f64, f64, f64, f64)]) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    let c = (n as f64 - 1.0) / 2.0;
    for &(val, a, b, x0, y0, deg) in ellipses {
        let phi = deg.to_radians();
        let (s, co) = phi.sin_cos();
        for row in 0..n {
            for col in 0..n {
                let x = (col as f64 - c) / c;
                let y = (c - row as f64) / c;
                let xr = (x - x0) * co + (y - y0) * s;
                let yr = -(x - x0) * s + (y - y0) * co;
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    img[row * n + col] += val;
                }
            }
        }
    }
    img
}

/// Single-channel phantom with values normalized into [0, 1].
pub fn make_phantom(kind: PhantomKind, n: usize, seed: u64) -> Tensor {
    let mut img = match kind {
        PhantomKind::SheppLogan => render_ellipses(n, &SHEPP_LOGAN),
        PhantomKind::RandomEllipses => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ellipses = vec![(0.35, 0.85, 0.8, 0.0, 0.0, 0.0)];
            let count = rng.gen_range(4..=8);
            for _ in 0..count {
                let a = rng.gen_range(0.08..0.45);
                let b = rng.gen_range(0.08..0.45);
                let x0 = rng.gen_range(-0.5..0.5);
                let y0 = rng.gen_range(-0.5..0.5);
                let deg = rng.gen_range(0.0..180.0);
                let val = rng.gen_range(-0.4..0.6);
                ellipses.push((val, a, b, x0, y0, deg));
            }
            render_ellipses(n, &ellipses)
        }
    };
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    img.iter_mut().for_each(|v| *v -= lo);
    let hi = img.iter().cloned().fold(0.0f64, f64::max);
    if hi > 0.0 {
        img.iter_mut().for_each(|v| *v /= hi);
    }
    Tensor::new(vec![n, n, 1], img).unwrap()
}

/// Anti-aliased centered disk (used by the CT tests): a linear edge of
/// `edge_px` half-width avoids binary-boundary Gibbs error.
pub fn disk_phantom(n: usize, radius_frac: f64, edge_px: f64) -> Tensor {
    let mut img = Tensor::zeros(&[n, n, 1]);
    let c = (n as f64 - 1.0) / 2.0;
    let r = radius_frac * n as f64;
    for y in 0..n {
        for x in 0..n {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let rad = (dx * dx + dy * dy).sqrt();
            img.data[y * n + x] = (0.5 - (rad - r) / (2.0 * edge_px)).clamp(0.0, 1.0);
        }
    }
    img
}

/// Give a magnitude phantom a smooth low-order polynomial phase, producing
/// the 2-channel complex image the MRI chain works on.
pub fn with_synthetic_phase(magnitude: &Tensor, seed: u64) -> Tensor {
    let (h, w) = (magnitude.shape[0], magnitude.shape[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let coef: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let mut img = Tensor::zeros(&[h, w, 2]);
    for y in 0..h {
        for x in 0..w {
            let u = 2.0 * x as f64 / w as f64 - 1.0;
            let v = 2.0 * y as f64 / h as f64 - 1.0;
            let phase =
                coef[0] + coef[1] * u + coef[2] * v + coef[3] * u * v + coef[4] * u * u
                    + coef[5] * v * v;
            let mag = magnitude.data[y * w + x];
            img.data[(y * w + x) * 2] = mag * phase.cos();
            img.data[(y * w + x) * 2 + 1] = mag * phase.sin();
        }
    }
    img
}

/// One MRI sample: f = mask .* (FFT(m_ref) + complex noise).
pub fn make_mri_sample(
    phantom: &Tensor,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if noise_sigma < 0.0 {
        return Err(Error::Argument(format!(
            "noise_sigma must be nonnegative, got {noise_sigma}"
        )));
    }
    if phantom.shape != [mask.height, mask.width, 2] {
        return Err(Error::Shape(format!(
            "phantom {:?} does not match mask {}x{}",
            phantom.shape, mask.height, mask.width
        )));
    }
    let mut kspace = fft2_forward(phantom)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in kspace.data.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += noise_sigma * n;
        }
    }
    for (p, &keep) in mask.data.iter().enumerate() {
        if !keep {
            kspace.data[2 * p] = 0.0;
            kspace.data[2 * p + 1] = 0.0;
        }
    }
    Ok((kspace, phantom.clone_value()))
}

/// One CT sample: noise-free sparse-view forward projection of a 128x128
/// phantom (or whatever size the operator was built for).
pub fn make_ct_sample(phantom: &Tensor, op: &FanBeamOperator) -> Result<(Tensor, Tensor)> {
    op.check_domain(phantom)?;
    let sino = op.apply(phantom)?;
    Ok((sino, phantom.clone_value()))
}

#[derive(Debug, Clone)]
pub enum DatasetSpec {
    Mri {
        size: usize,
        acceleration: f64,
        center_fraction: f64,
        noise_sigma: f64,
        phantom: PhantomKind,
    },
    Ct {
        op: std::sync::Arc<FanBeamOperator>,
        phantom: PhantomKind,
    },
}

/// Derive a per-sample seed from the dataset seed, split id and index.
pub fn sample_seed(seed: u64, split: u64, index: u64) -> u64 {
    // splitmix64 over the packed coordinates
    let mut z = seed
        .wrapping_add(split.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Build one split container with `count` samples. Every MRI sample draws
/// a fresh mask from its own sub-seed, so masks differ across samples and
/// across splits by construction.
pub fn build_split(spec: &DatasetSpec, count: usize, seed: u64, split_id: u64) -> Result<DatasetContainer> {
    let mut c = DatasetContainer::new();
    c.set_meta("n_samples", count);
    c.set_meta("seed", seed);
    c.set_meta("split_id", split_id);
    match spec {
        DatasetSpec::Mri {
            size,
            acceleration,
            center_fraction,
            noise_sigma,
            phantom,
        } => {
            c.set_meta("modality", "mri");
            c.set_meta("size", size);
            c.set_meta("acceleration", acceleration);
            c.set_meta("center_fraction", center_fraction);
            c.set_meta("noise_sigma", noise_sigma);
            for i in 0..count {
                let s = sample_seed(seed, split_id, i as u64);
                let mag = make_phantom(*phantom, *size, s);
                let m_ref = with_synthetic_phase(&mag, s);
                let mask =
                    make_poisson_disk_mask(*size, *size, *acceleration, *center_fraction, s)?;
                let (f, m_ref) = make_mri_sample(&m_ref, &mask, *noise_sigma, s ^ 0x5eed)?;
                let prefix = format!("sample{i:04}");
                c.push_tensor(&format!("{prefix}/f"), &f)?;
                c.push_bool(
                    &format!("{prefix}/mask"),
                    vec![mask.height, mask.width],
                    mask.data.clone(),
                )?;
                c.push_tensor(&format!("{prefix}/m_ref"), &m_ref)?;
            }
        }
        DatasetSpec::Ct { op, phantom } => {
            let g = op.geometry();
            c.set_meta("modality", "ct");
            c.set_meta("size", g.image_size);
            c.set_meta("n_views", g.n_views);
            c.set_meta("n_detectors", g.n_detectors);
            c.set_meta("pixel_pitch", g.pixel_pitch);
            c.set_meta("detector_pitch", g.detector_pitch);
            c.set_meta("source_detector_dist", g.source_detector_dist);
            c.set_meta("source_center_dist", g.source_center_dist);
            for i in 0..count {
                let s = sample_seed(seed, split_id, i as u64);
                let m_ref = make_phantom(*phantom, g.image_size, s);
                let (sino, m_ref) = make_ct_sample(&m_ref, op)?;
                let prefix = format!("sample{i:04}");
                c.push_tensor(&format!("{prefix}/f"), &sino)?;
                c.push_tensor(&format!("{prefix}/m_ref"), &m_ref)?;
            }
        }
    }
    Ok(c)
}

/// Write train/val/test containers into `dir` as train.urcn, val.urcn,
/// test.urcn. Splits use disjoint sub-seed streams.
pub fn build_dataset(
    spec: &DatasetSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (name, count, split_id) in [
        ("train", n_train, 1u64),
        ("val", n_val, 2),
        ("test", n_test, 3),
    ] {
        let mut c = build_split(spec, count, seed, split_id)?;
        c.set_meta("split", name);
        c.write_to(dir.join(format!("{name}.urcn")))?;
    }
    Ok(())
}

/// Load one sample out of a split container.
pub struct MriSample {
    pub f: Tensor,
    pub mask: SamplingMask,
    pub m_ref: Tensor,
}

pub fn load_mri_sample(c: &DatasetContainer, index: usize) -> Result<MriSample> {
    let prefix = format!("sample{index:04}");
    let f = c.tensor(&format!("{prefix}/f"))?;
    let (shape, data) = c.bool_array(&format!("{prefix}/mask"))?;
    let mask = SamplingMask::from_data(shape[0], shape[1], data.to_vec())?;
    let m_ref = c.tensor(&format!("{prefix}/m_ref"))?;
    Ok(MriSample { f, mask, m_ref })
}

pub struct CtSample {
    pub sinogram: Tensor,
    pub m_ref: Tensor,
}

pub fn load_ct_sample(c: &DatasetContainer, index: usize) -> Result<CtSample> {
    let prefix = format!("sample{index:04}");
    Ok(CtSample {
        sinogram: c.tensor(&format!("{prefix}/f"))?,
        m_ref: c.tensor(&format!("{prefix}/m_ref"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{fft2_inverse, small_test_geometry};
    use crate::tensor::rel_l2;

    #[test]
    fn phantom_values_stay_in_unit_range() {
        for kind in [PhantomKind::SheppLogan, PhantomKind::RandomEllipses] {
            let p = make_phantom(kind, 64, 11);
            assert!(p.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(p.data.iter().any(|&v| v > 0.5));
        }
    }

    #[test]
    fn random_ellipses_deterministic_per_seed() {
        let a = make_phantom(PhantomKind::RandomEllipses, 32, 5);
        let b = make_phantom(PhantomKind::RandomEllipses, 32, 5);
        let c = make_phantom(PhantomKind::RandomEllipses, 32, 6);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn noiseless_full_mask_sample_inverts_exactly() {
        let mag = make_phantom(PhantomKind::RandomEllipses, 32, 3);
        let m_ref = with_synthetic_phase(&mag, 3);
        let mask = SamplingMask::full(32, 32);
        let (f, m) = make_mri_sample(&m_ref, &mask, 0.0, 1).unwrap();
        let back = fft2_inverse(&f).unwrap();
        assert!(rel_l2(&back, &m) < 1e-10);
    }

    #[test]
    fn undersampled_noiseless_sample_is_data_consistent() {
        let mag = make_phantom(PhantomKind::RandomEllipses, 32, 4);
        let m_ref = with_synthetic_phase(&mag, 4);
        let mask = make_poisson_disk_mask(32, 32, 6.0, 0.08, 9).unwrap();
        let (f, m) = make_mri_sample(&m_ref, &mask, 0.0, 2).unwrap();
        // mask .* FFT(m_ref) must equal f exactly
        let mut expect = fft2_forward(&m).unwrap();
        for (p, &keep) in mask.data.iter().enumerate() {
            if !keep {
                expect.data[2 * p] = 0.0;
                expect.data[2 * p + 1] = 0.0;
            }
        }
        assert_eq!(expect.data, f.data);
    }

    #[test]
    fn measured_noise_std_matches_request() {
        let n = 64;
        let mag = make_phantom(PhantomKind::RandomEllipses, n, 5);
        let m_ref = with_synthetic_phase(&mag, 5);
        let mask = SamplingMask::full(n, n);
        let sigma = 0.05;
        let (f, m) = make_mri_sample(&m_ref, &mask, sigma, 7).unwrap();
        let clean = fft2_forward(&m).unwrap();
        let resid: Vec<f64> = f
            .data
            .iter()
            .zip(clean.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        let n_entries = resid.len() as f64; // 8192 > 1e4/2 per component
        let var = resid.iter().map(|v| v * v).sum::<f64>() / n_entries;
        let got = var.sqrt();
        assert!(
            (got - sigma).abs() < 0.05 * sigma,
            "measured std {got} vs requested {sigma}"
        );
    }

    #[test]
    fn ct_sample_has_paper_sinogram_shape() {
        let op = FanBeamOperator::new(crate::operators::FanBeamGeometry::default()).unwrap();
        let phantom = make_phantom(PhantomKind::SheppLogan, 128, 0);
        let (sino, _) = make_ct_sample(&phantom, &op).unwrap();
        assert_eq!(sino.shape, vec![90, 300, 1]);
    }

    #[test]
    fn ct_mass_matches_dense_matrix_oracle() {
        let op = FanBeamOperator::new(small_test_geometry(8, 12)).unwrap();
        let phantom = make_phantom(PhantomKind::RandomEllipses, 8, 1);
        let (sino, m_ref) = make_ct_sample(&phantom, &op).unwrap();
        let cols = crate::operators::dense_matrix(&op).unwrap();
        // total mass = sum over rays of (lengths . values)
        let mut expect = 0.0;
        for (j, col) in cols.iter().enumerate() {
            for (ray, w) in col.iter().enumerate() {
                let _ = ray;
                expect += w * m_ref.data[j];
            }
        }
        let got: f64 = sino.data.iter().sum();
        assert!((got - expect).abs() <= 1e-8 * expect.abs().max(1.0));
    }

    #[test]
    fn empty_split_is_valid() {
        let spec = DatasetSpec::Mri {
            size: 16,
            acceleration: 2.0,
            center_fraction: 0.1,
            noise_sigma: 0.0,
            phantom: PhantomKind::RandomEllipses,
        };
        let c = build_split(&spec, 0, 1, 1).unwrap();
        assert_eq!(c.meta_parsed::<usize>("n_samples"), Some(0));
        let bytes = c.to_bytes().unwrap();
        assert!(DatasetContainer::from_bytes(&bytes, "<t>").is_ok());
    }

    #[test]
    fn samples_get_distinct_masks() {
        let spec = DatasetSpec::Mri {
            size: 32,
            acceleration: 4.0,
            center_fraction: 0.08,
            noise_sigma: 0.0,
            phantom: PhantomKind::RandomEllipses,
        };
        let c = build_split(&spec, 2, 42, 1).unwrap();
        let a = load_mri_sample(&c, 0).unwrap();
        let b = load_mri_sample(&c, 1).unwrap();
        assert_ne!(a.mask.data, b.mask.data);
    }

    #[test]
    fn rebuild_with_same_seed_is_bitwise_identical() {
        let spec = DatasetSpec::Mri {
            size: 24,
            acceleration: 3.0,
            center_fraction: 0.1,
            noise_sigma: 0.01,
            phantom: PhantomKind::RandomEllipses,
        };
        let a = build_split(&spec, 3, 7, 1).unwrap().to_bytes().unwrap();
        let b = build_split(&spec, 3, 7, 1).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
    }
}
