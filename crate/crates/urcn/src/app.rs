//! Command implementations behind the CLI: simulate, train, evaluate.
//!
//! Every run writes a `manifest.json` echoing its fully resolved
//! configuration, so all artifacts are reproducible from the manifest and
//! the seed alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{write_pgm, DatasetContainer};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nets::{build_network, Family, LearningState, NetworkConfig, UnrolledNetwork};
use crate::operators::{
    make_poisson_disk_mask, FanBeamGeometry, FanBeamOperator, FourierMaskOperator, LinearOperator,
};
use crate::simulation::{
    build_dataset, load_ct_sample, load_mri_sample, make_mri_sample, sample_seed, DatasetSpec,
    PhantomKind,
};
use crate::solvers::{fbp_reconstruct, pdhg_solve};
use crate::tensor::Tensor;
use crate::training::{
    load_checkpoint, loss_curve_csv, save_checkpoint, train, LossConfig, TrainConfig, TrainSample,
};
use crate::transforms::SparsityConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub modality: String,
    pub size: usize,
    pub accel: f64,
    pub center_fraction: f64,
    pub noise_sigma: f64,
    pub views: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub phantom: String,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            modality: "mri".into(),
            size: 64,
            accel: 6.0,
            center_fraction: 0.04,
            noise_sigma: 0.0,
            views: 90,
            n_train: 300,
            n_val: 30,
            n_test: 30,
            phantom: "random_ellipses".into(),
            seed: 0,
            out: PathBuf::from("dataset"),
            force: false,
        }
    }
}

fn refuse_existing(dir: &Path, names: &[&str], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for n in names {
        let p = dir.join(n);
        if p.exists() {
            return Err(Error::Argument(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_manifest<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<()> {
    let phantom = PhantomKind::parse(&cfg.phantom)?;
    let spec = match cfg.modality.as_str() {
        "mri" => DatasetSpec::Mri {
            size: cfg.size,
            acceleration: cfg.accel,
            center_fraction: cfg.center_fraction,
            noise_sigma: cfg.noise_sigma,
            phantom,
        },
        "ct" => {
            let geom = FanBeamGeometry::default()
                .with_views(cfg.views)
                .with_image(cfg.size, 64.0 / cfg.size as f64);
            DatasetSpec::Ct {
                op: Arc::new(FanBeamOperator::new(geom)?),
                phantom,
            }
        }
        other => {
            return Err(Error::Argument(format!(
                "modality must be mri or ct, got {other:?}"
            )))
        }
    };
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    refuse_existing(&cfg.out, &["train.urcn", "val.urcn", "test.urcn"], cfg.force)?;
    build_dataset(&spec, cfg.n_train, cfg.n_val, cfg.n_test, cfg.seed, &cfg.out)?;
    write_manifest(&cfg.out, cfg)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCliConfig {
    pub dataset: PathBuf,
    pub family: String,
    pub state: String,
    /// 0 selects the family default (10, or 15 for admm).
    pub stages: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub clip_norm: f64,
    pub l_transforms: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        TrainCliConfig {
            dataset: PathBuf::from("dataset"),
            family: "pdhg".into(),
            state: "I".into(),
            stages: 0,
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            gamma: 0.01,
            clip_norm: 10.0,
            l_transforms: 1,
            seed: 0,
            out: PathBuf::from("run"),
            force: false,
        }
    }
}

/// Samples plus the channel count they imply.
pub struct LoadedSplit {
    pub samples: Vec<TrainSample>,
    pub channels: usize,
    pub modality: String,
}

pub fn load_split(path: &Path) -> Result<LoadedSplit> {
    let c = DatasetContainer::read_from(path)?;
    let modality = c
        .meta_str("modality")
        .ok_or_else(|| Error::ManifestMismatch(format!("{} lacks modality", path.display())))?
        .to_string();
    let n: usize = c.meta_parsed("n_samples").unwrap_or(0);
    let mut samples = Vec::with_capacity(n);
    match modality.as_str() {
        "mri" => {
            for i in 0..n {
                let s = load_mri_sample(&c, i)?;
                let op: Arc<dyn LinearOperator> = Arc::new(FourierMaskOperator::new(s.mask));
                samples.push(TrainSample {
                    op,
                    f: s.f,
                    m_ref: s.m_ref,
                });
            }
            Ok(LoadedSplit {
                samples,
                channels: 2,
                modality,
            })
        }
        "ct" => {
            let geom = ct_geometry_from_meta(&c, path)?;
            let op: Arc<dyn LinearOperator> = Arc::new(FanBeamOperator::new(geom)?);
            for i in 0..n {
                let s = load_ct_sample(&c, i)?;
                samples.push(TrainSample {
                    op: Arc::clone(&op),
                    f: s.sinogram,
                    m_ref: s.m_ref,
                });
            }
            Ok(LoadedSplit {
                samples,
                channels: 1,
                modality,
            })
        }
        other => Err(Error::ManifestMismatch(format!(
            "unknown modality {other:?} in {}",
            path.display()
        ))),
    }
}

fn ct_geometry_from_meta(c: &DatasetContainer, path: &Path) -> Result<FanBeamGeometry> {
    let get = |key: &str| -> Result<f64> {
        c.meta_parsed(key).ok_or_else(|| {
            Error::ManifestMismatch(format!("{} lacks ct meta {key}", path.display()))
        })
    };
    Ok(FanBeamGeometry {
        image_size: get("size")? as usize,
        pixel_pitch: get("pixel_pitch")?,
        source_detector_dist: get("source_detector_dist")?,
        source_center_dist: get("source_center_dist")?,
        n_detectors: get("n_detectors")? as usize,
        detector_pitch: get("detector_pitch")?,
        n_views: get("n_views")? as usize,
    })
}

pub fn cmd_train(cfg: &TrainCliConfig) -> Result<()> {
    let family = Family::parse(&cfg.family)?;
    let state = LearningState::parse(&cfg.state)?;
    let train_split = load_split(&cfg.dataset.join("train.urcn"))?;
    let val_split = load_split(&cfg.dataset.join("val.urcn"))?;

    let stages = if cfg.stages == 0 {
        family.default_stages()
    } else {
        cfg.stages
    };
    let net_cfg = NetworkConfig {
        family,
        state,
        n_stages: stages,
        channels: train_split.channels,
        l_transforms: cfg.l_transforms,
        init_seed: cfg.seed,
    };
    let mut net = build_network(net_cfg)?;

    let mut loss = LossConfig::for_network(&net);
    loss.gamma = cfg.gamma;
    let mut tcfg = TrainConfig::new(cfg.epochs, loss, cfg.seed);
    tcfg.batch_size = cfg.batch_size;
    tcfg.adam.lr = cfg.lr;
    tcfg.clip_norm = cfg.clip_norm;

    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    refuse_existing(&cfg.out, &["checkpoint.urcn", "loss.csv"], cfg.force)?;

    let report = train(&mut net, &train_split.samples, &val_split.samples, &tcfg)?;
    let extra = [
        ("trained_on", cfg.dataset.display().to_string()),
        ("epochs", report.curve.len().to_string()),
        ("best_epoch", report.best_epoch.to_string()),
        ("clip_norm", tcfg.clip_norm.to_string()),
        ("lr", tcfg.adam.lr.to_string()),
        ("batch_size", tcfg.batch_size.to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    save_checkpoint(&net, &extra, cfg.out.join("checkpoint.urcn"))?;
    let csv_path = cfg.out.join("loss.csv");
    fs::write(&csv_path, loss_curve_csv(&report.curve))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    write_manifest(&cfg.out, cfg)?;
    if let Some(reason) = report.failure {
        // the checkpoint written above already carries the last finite
        // parameters
        return Err(Error::Training(reason));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    /// Extra acceleration factors to re-evaluate at (MRI only).
    pub sweep_accel: Vec<f64>,
    /// Export PGM images for this many leading samples.
    pub export_images: usize,
    pub force: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            dataset: PathBuf::from("dataset"),
            checkpoint: PathBuf::from("run/checkpoint.urcn"),
            out: PathBuf::from("eval"),
            sweep_accel: Vec::new(),
            export_images: 2,
            force: false,
        }
    }
}

struct MethodMetrics {
    mse: f64,
    psnr: f64,
    ssim: f64,
}

fn score(recon: &Tensor, reference: &Tensor) -> Result<MethodMetrics> {
    Ok(MethodMetrics {
        mse: metrics::mse(recon, reference)?,
        psnr: metrics::psnr(recon, reference)?,
        ssim: metrics::ssim(recon, reference)?,
    })
}

fn push_rows(rows: &mut String, sample: &str, method: &str, m: &MethodMetrics) {
    rows.push_str(&format!(
        "{sample},{method},{:.17e},{:.17e},{:.17e}\n",
        m.mse, m.psnr, m.ssim
    ));
}

pub fn cmd_evaluate(cfg: &EvaluateConfig) -> Result<()> {
    let net = load_checkpoint(&cfg.checkpoint)?;
    let split = load_split(&cfg.dataset.join("test.urcn"))?;
    if split.channels != net.config.channels {
        return Err(Error::ManifestMismatch(format!(
            "checkpoint expects {}-channel images but dataset {} provides {}",
            net.config.channels,
            cfg.dataset.display(),
            split.channels
        )));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    refuse_existing(&cfg.out, &["metrics.csv"], cfg.force)?;

    let mut rows = String::from("sample,method,mse,psnr_db,ssim\n");
    let mut agg: std::collections::BTreeMap<&'static str, (f64, f64, f64, usize)> =
        std::collections::BTreeMap::new();
    let mut esp_mean: Vec<(f64, f64, usize)> = Vec::new();

    for (i, s) in split.samples.iter().enumerate() {
        let sample_name = format!("{i:04}");
        let zero_fill = s.op.adjoint(&s.f)?;
        let recon = net.forward(&s.op, &s.f, None)?;
        let classical = classical_baseline(&split.modality, s)?;

        for (method, img) in [
            ("network", &recon),
            ("zero_filled", &zero_fill),
            ("classical", &classical),
        ] {
            let m = score(img, &s.m_ref)?;
            push_rows(&mut rows, &sample_name, method, &m);
            let e = agg.entry(method).or_insert((0.0, 0.0, 0.0, 0));
            e.0 += m.mse;
            e.1 += m.psnr;
            e.2 += m.ssim;
            e.3 += 1;
        }

        let bins = metrics::default_esp_bins(s.m_ref.shape[0], s.m_ref.shape[1]);
        let esp = metrics::error_spectrum(&recon, &s.m_ref, bins)?;
        if esp_mean.len() < esp.len() {
            esp_mean.resize(esp.len(), (0.0, 0.0, 0));
        }
        for (b, &(r, e)) in esp.iter().enumerate() {
            esp_mean[b].0 = r;
            if e.is_finite() {
                esp_mean[b].1 += e;
                esp_mean[b].2 += 1;
            }
        }
        if i < cfg.export_images {
            let esp_path = cfg.out.join(format!("esp_sample{sample_name}.csv"));
            let mut esp_csv = String::from("radius,relative_error\n");
            for (r, e) in &esp {
                esp_csv.push_str(&format!("{r},{e}\n"));
            }
            fs::write(&esp_path, esp_csv)
                .map_err(|e| Error::io(esp_path.display().to_string(), e))?;
            write_pgm(cfg.out.join(format!("recon_{sample_name}.pgm")), &recon)?;
            write_pgm(
                cfg.out.join(format!("reference_{sample_name}.pgm")),
                &s.m_ref,
            )?;
            write_pgm(
                cfg.out.join(format!("zero_filled_{sample_name}.pgm")),
                &zero_fill,
            )?;
        }
    }

    for (method, (mse, psnr, ssim, n)) in &agg {
        let n = *n as f64;
        push_rows(
            &mut rows,
            "mean",
            method,
            &MethodMetrics {
                mse: mse / n,
                psnr: psnr / n,
                ssim: ssim / n,
            },
        );
    }
    let metrics_path = cfg.out.join("metrics.csv");
    fs::write(&metrics_path, rows)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;

    let esp_path = cfg.out.join("esp_mean.csv");
    let mut esp_csv = String::from("radius,relative_error\n");
    for (r, acc, n) in &esp_mean {
        if *n > 0 {
            esp_csv.push_str(&format!("{r},{}\n", acc / *n as f64));
        }
    }
    fs::write(&esp_path, esp_csv).map_err(|e| Error::io(esp_path.display().to_string(), e))?;

    if !cfg.sweep_accel.is_empty() {
        if split.modality != "mri" {
            return Err(Error::Argument(
                "--sweep-accel applies to MRI datasets only".into(),
            ));
        }
        let sweep = sweep_accelerations(&net, &split, &cfg.sweep_accel)?;
        let sweep_path = cfg.out.join("sweep.csv");
        fs::write(&sweep_path, sweep)
            .map_err(|e| Error::io(sweep_path.display().to_string(), e))?;
    }

    write_manifest(&cfg.out, cfg)?;
    Ok(())
}

fn classical_baseline(modality: &str, s: &TrainSample) -> Result<Tensor> {
    match modality {
        "mri" => {
            let cfg = SparsityConfig::haar(1e-3)?;
            let st = pdhg_solve(s.op.as_ref(), &s.f, &cfg, 0.02, 49.0, 1.0, 200, None)?;
            Ok(st.m)
        }
        "ct" => match s.op.as_fanbeam() {
            Some(fb) => fbp_reconstruct(fb, &s.f),
            None => Err(Error::Consistency(
                "ct sample without a fan-beam operator".into(),
            )),
        },
        other => Err(Error::Argument(format!("unknown modality {other:?}"))),
    }
}

/// One aggregate PSNR row per acceleration factor, with fresh masks and
/// noiseless re-simulated measurements from the stored references.
fn sweep_accelerations(
    net: &UnrolledNetwork,
    split: &LoadedSplit,
    accels: &[f64],
) -> Result<String> {
    let mut out = String::from("accel,psnr_network,psnr_zero_filled\n");
    for (ai, &r) in accels.iter().enumerate() {
        let mut p_net = 0.0;
        let mut p_zf = 0.0;
        for (i, s) in split.samples.iter().enumerate() {
            let (h, w) = (s.m_ref.shape[0], s.m_ref.shape[1]);
            let seed = sample_seed(0xACCE1, ai as u64, i as u64);
            let mask = make_poisson_disk_mask(h, w, r, 0.04, seed)?;
            let (f, _) = make_mri_sample(&s.m_ref, &mask, 0.0, seed)?;
            let op: Arc<dyn LinearOperator> = Arc::new(FourierMaskOperator::new(mask));
            let recon = net.forward(&op, &f, None)?;
            let zf = op.adjoint(&f)?;
            p_net += metrics::psnr(&recon, &s.m_ref)?;
            p_zf += metrics::psnr(&zf, &s.m_ref)?;
        }
        let n = split.samples.len() as f64;
        out.push_str(&format!("{r},{:.6},{:.6}\n", p_net / n, p_zf / n));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mri_dataset(dir: &Path) -> SimulateConfig {
        SimulateConfig {
            size: 16,
            accel: 2.0,
            center_fraction: 0.1,
            n_train: 3,
            n_val: 2,
            n_test: 2,
            seed: 5,
            out: dir.to_path_buf(),
            ..SimulateConfig::default()
        }
    }

    #[test]
    fn simulate_writes_three_containers_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_mri_dataset(dir.path());
        cmd_simulate(&cfg).unwrap();
        for f in ["train.urcn", "val.urcn", "test.urcn", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        // refuse to overwrite without force
        assert!(matches!(cmd_simulate(&cfg), Err(Error::Argument(_))));
        let forced = SimulateConfig { force: true, ..cfg };
        cmd_simulate(&forced).unwrap();
    }

    #[test]
    fn simulate_is_deterministic_on_disk() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        cmd_simulate(&tiny_mri_dataset(d1.path())).unwrap();
        cmd_simulate(&tiny_mri_dataset(d2.path())).unwrap();
        for f in ["train.urcn", "val.urcn", "test.urcn"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between identical runs");
        }
    }

    #[test]
    fn ct_simulation_produces_paper_sinogram_shape() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimulateConfig {
            modality: "ct".into(),
            size: 128,
            views: 90,
            n_train: 1,
            n_val: 0,
            n_test: 0,
            out: dir.path().to_path_buf(),
            ..SimulateConfig::default()
        };
        cmd_simulate(&cfg).unwrap();
        let c = DatasetContainer::read_from(dir.path().join("train.urcn")).unwrap();
        let t = c.tensor("sample0000/f").unwrap();
        assert_eq!(t.shape, vec![90, 300, 1]);
    }

    #[test]
    fn train_epochs_zero_equals_initialization() {
        let data = tempfile::tempdir().unwrap();
        cmd_simulate(&tiny_mri_dataset(data.path())).unwrap();
        let run = tempfile::tempdir().unwrap();
        let cfg = TrainCliConfig {
            dataset: data.path().to_path_buf(),
            family: "pdhg".into(),
            state: "I".into(),
            stages: 2,
            epochs: 0,
            seed: 9,
            out: run.path().to_path_buf(),
            force: true,
            ..TrainCliConfig::default()
        };
        cmd_train(&cfg).unwrap();
        let net = load_checkpoint(run.path().join("checkpoint.urcn")).unwrap();
        let fresh = build_network(NetworkConfig {
            family: Family::Pdhg,
            state: LearningState::I,
            n_stages: 2,
            channels: 2,
            l_transforms: 1,
            init_seed: 9,
        })
        .unwrap();
        for ((_, a), (_, b)) in net.params.iter().zip(fresh.params.iter()) {
            assert_eq!(a.value.data, b.value.data, "{} changed", a.name);
        }
    }

    #[test]
    fn evaluate_writes_metrics_and_detects_mismatch() {
        let data = tempfile::tempdir().unwrap();
        cmd_simulate(&tiny_mri_dataset(data.path())).unwrap();
        let run = tempfile::tempdir().unwrap();
        let tcfg = TrainCliConfig {
            dataset: data.path().to_path_buf(),
            family: "ista".into(),
            state: "I".into(),
            stages: 2,
            epochs: 1,
            seed: 1,
            out: run.path().to_path_buf(),
            force: true,
            ..TrainCliConfig::default()
        };
        cmd_train(&tcfg).unwrap();

        let eval = tempfile::tempdir().unwrap();
        let ecfg = EvaluateConfig {
            dataset: data.path().to_path_buf(),
            checkpoint: run.path().join("checkpoint.urcn"),
            out: eval.path().to_path_buf(),
            sweep_accel: vec![2.0, 4.0],
            export_images: 1,
            force: true,
        };
        cmd_evaluate(&ecfg).unwrap();
        let metrics_csv = fs::read_to_string(eval.path().join("metrics.csv")).unwrap();
        assert!(metrics_csv.starts_with("sample,method,mse,psnr_db,ssim\n"));
        assert!(metrics_csv.contains("mean,network"));
        assert!(metrics_csv.contains("mean,zero_filled"));
        assert!(metrics_csv.contains("mean,classical"));
        let sweep = fs::read_to_string(eval.path().join("sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 3); // header + 2 accelerations
        assert!(eval.path().join("esp_sample0000.csv").exists());
        assert!(eval.path().join("recon_0000.pgm").exists());

        // checkpoint/dataset mismatch: a ct checkpoint against mri data
        let ct_net = build_network(NetworkConfig {
            family: Family::Admm,
            state: LearningState::I,
            n_stages: 2,
            channels: 1,
            l_transforms: 1,
            init_seed: 0,
        })
        .unwrap();
        let ct_ckpt = eval.path().join("ct.urcn");
        save_checkpoint(&ct_net, &[], &ct_ckpt).unwrap();
        let bad = EvaluateConfig {
            checkpoint: ct_ckpt,
            out: eval.path().join("bad"),
            dataset: data.path().to_path_buf(),
            sweep_accel: vec![],
            export_images: 0,
            force: false,
        };
        assert!(matches!(
            cmd_evaluate(&bad),
            Err(Error::ManifestMismatch(_))
        ));
    }

    /// The zero-filled baseline column must equal an independent psnr
    /// recomputation from the raw dataset.
    #[test]
    fn zero_filled_column_matches_independent_recomputation() {
        let data = tempfile::tempdir().unwrap();
        cmd_simulate(&tiny_mri_dataset(data.path())).unwrap();
        let run = tempfile::tempdir().unwrap();
        let tcfg = TrainCliConfig {
            dataset: data.path().to_path_buf(),
            family: "pdhg".into(),
            state: "I".into(),
            stages: 1,
            epochs: 0,
            seed: 2,
            out: run.path().to_path_buf(),
            force: true,
            ..TrainCliConfig::default()
        };
        cmd_train(&tcfg).unwrap();
        let eval = tempfile::tempdir().unwrap();
        let ecfg = EvaluateConfig {
            dataset: data.path().to_path_buf(),
            checkpoint: run.path().join("checkpoint.urcn"),
            out: eval.path().to_path_buf(),
            sweep_accel: vec![],
            export_images: 0,
            force: true,
        };
        cmd_evaluate(&ecfg).unwrap();
        let metrics_csv = fs::read_to_string(eval.path().join("metrics.csv")).unwrap();

        let split = load_split(&data.path().join("test.urcn")).unwrap();
        let s = &split.samples[0];
        let zf = s.op.adjoint(&s.f).unwrap();
        let expect = metrics::psnr(&zf, &s.m_ref).unwrap();
        let line = metrics_csv
            .lines()
            .find(|l| l.starts_with("0000,zero_filled"))
            .unwrap();
        let got: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }
}
