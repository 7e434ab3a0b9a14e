// Scratch diagnostics binary (not part of the public surface).
use urcn::operators::{make_poisson_disk_mask, FanBeamGeometry, FanBeamOperator, FourierMaskOperator, LinearOperator};
use urcn::solvers::{admm_solve, fbp_reconstruct, ista_solve, pdhg_defaults, pdhg_solve};
use urcn::tensor::Tensor;
use urcn::transforms::SparsityConfig;

fn smooth_phantom(n: usize) -> Tensor {
    // sum of a few smooth bumps, 2-channel with mild phase
    let mut img = Tensor::zeros(&[n, n, 2]);
    let c = (n as f64 - 1.0) / 2.0;
    for y in 0..n {
        for x in 0..n {
            let dy = (y as f64 - c) / n as f64;
            let dx = (x as f64 - c) / n as f64;
            let r2 = dx * dx + dy * dy;
            let mut v = 0.0;
            if r2 < 0.16 {
                v += 0.8;
            }
            if (dx - 0.1).powi(2) + dy.powi(2) < 0.01 {
                v += 0.2;
            }
            if (dx + 0.12).powi(2) + (dy - 0.05).powi(2) < 0.02 {
                v -= 0.3;
            }
            let phase = 0.3 * dx + 0.2 * dy;
            img.data[(y * n + x) * 2] = v * phase.cos();
            img.data[(y * n + x) * 2 + 1] = v * phase.sin();
        }
    }
    img
}

fn disk_phantom(n: usize, radius_frac: f64) -> Tensor {
    let mut img = Tensor::zeros(&[n, n, 1]);
    let c = (n as f64 - 1.0) / 2.0;
    let r = radius_frac * n as f64;
    let edge = 1.5; // smooth transition half-width in pixels
    for y in 0..n {
        for x in 0..n {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let rad = (dx * dx + dy * dy).sqrt();
            img.data[y * n + x] = (0.5 - (rad - r) / (2.0 * edge)).clamp(0.0, 1.0);
        }
    }
    img
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "bench" || which.is_empty() {
        let mask = make_poisson_disk_mask(16, 16, 2.0, 0.12, 77).unwrap();
        println!("mask fraction {:.3}", mask.sampled_fraction());
        let op = FourierMaskOperator::new(mask);
        let m_true = smooth_phantom(16);
        let f = op.apply(&m_true).unwrap();
        let cfg = SparsityConfig::haar(1e-3).unwrap();

        let ista = ista_solve(&op, &f, &cfg, 0.99, 30_000, None).unwrap();
        println!("ista 30k obj    {:.10}", ista.objective_history.last().unwrap());
        let ista10k = ista_solve(&op, &f, &cfg, 0.99, 10_000, None).unwrap();
        println!("ista 10k obj    {:.10}", ista10k.objective_history.last().unwrap());

        let (s, t, th) = pdhg_defaults(&op).unwrap();
        for iters in [500, 1000, 2000, 4000] {
            let st = pdhg_solve(&op, &f, &cfg, s, t, th, iters, None).unwrap();
            println!(
                "pdhg {iters:5} obj {:.10} gap {:.3e} gap0 {:.3e}",
                st.objective_history.last().unwrap(),
                st.gap_history.last().unwrap(),
                st.gap_history[0]
            );
        }
        for rho in [0.01, 0.05, 0.2, 1.0] {
            let st = admm_solve(&op, &f, &cfg, rho, 300, None).unwrap();
            println!(
                "admm rho {rho:4} obj {:.10}",
                st.objective_history.last().unwrap()
            );
        }
    }
    if which == "perf" {
        use std::sync::Arc;
        use std::time::Instant;
        use urcn::autodiff::Tape;
        use urcn::nets::{build_network, Family, LearningState, NetworkConfig};

        // 64x64 PDHG-I fwd+bwd (criterion-6 workload)
        let mask = make_poisson_disk_mask(64, 64, 4.0, 0.04, 1).unwrap();
        let op: Arc<dyn LinearOperator> = Arc::new(FourierMaskOperator::new(mask));
        let m = smooth_phantom(64);
        let f = op.apply(&m).unwrap();
        let mut net = build_network(NetworkConfig::new(Family::Pdhg, LearningState::I)).unwrap();
        let t0 = Instant::now();
        let reps = 10;
        for _ in 0..reps {
            let mut tape = Tape::new();
            let pass = net.forward_tape(&mut tape, &op, &f, None).unwrap();
            let root = tape.sum_squares(pass.output);
            tape.backward(root, &mut net.params).unwrap();
        }
        println!(
            "pdhg-I 64x64 10-stage fwd+bwd: {:.1} ms",
            t0.elapsed().as_secs_f64() * 1000.0 / reps as f64
        );

        let mut net =
            build_network(NetworkConfig::new(Family::Ista, LearningState::I)).unwrap();
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let pass = net.forward_tape(&mut tape, &op, &f, None).unwrap();
            let root = tape.sum_squares(pass.output);
            tape.backward(root, &mut net.params).unwrap();
        }
        println!(
            "ista-I 64x64 10-stage fwd+bwd: {:.1} ms",
            t0.elapsed().as_secs_f64() * 1000.0 / reps as f64
        );

        // 16x16 PDHG-II 2-stage forward only (gradcheck workload)
        let mask = make_poisson_disk_mask(16, 16, 2.0, 0.1, 2).unwrap();
        let op: Arc<dyn LinearOperator> = Arc::new(FourierMaskOperator::new(mask));
        let m = smooth_phantom(16);
        let f = op.apply(&m).unwrap();
        let net = build_network(
            NetworkConfig::new(Family::Pdhg, LearningState::II).with_stages(2),
        )
        .unwrap();
        let t0 = Instant::now();
        let reps = 200;
        for _ in 0..reps {
            let _ = net.forward(&op, &f, None).unwrap();
        }
        let per = t0.elapsed().as_secs_f64() * 1000.0 / reps as f64;
        let n_par = net.total_param_count();
        println!(
            "pdhg-II 16x16 2-stage fwd: {per:.2} ms; every-param fd ~ {:.0} s ({n_par} params)",
            per / 1000.0 * 2.0 * n_par as f64
        );
    }
    if which == "trend" {
        use std::sync::Arc;
        use std::time::Instant;
        use urcn::metrics;
        use urcn::nets::{build_network, Family, LearningState, NetworkConfig};
        use urcn::simulation::{make_phantom, sample_seed, with_synthetic_phase, PhantomKind};
        use urcn::training::{
            train_with_callback, LossConfig, TrainConfig, TrainControl, TrainSample,
        };

        let family = match std::env::args().nth(2).as_deref() {
            Some("ista") => Family::Ista,
            Some("admm") => Family::Admm,
            _ => Family::Pdhg,
        };
        let n_train: usize = std::env::args()
            .nth(3)
            .and_then(|s| s.parse().ok())
            .unwrap_or(300);
        let lr: f64 = std::env::args()
            .nth(4)
            .and_then(|s| s.parse().ok())
            .unwrap_or(1e-3);
        let max_epochs: usize = std::env::args()
            .nth(5)
            .and_then(|s| s.parse().ok())
            .unwrap_or(8);
        let seed = 11u64;
        let make = |split: u64, count: usize| -> Vec<TrainSample> {
            (0..count)
                .map(|i| {
                    let s = sample_seed(seed, split, i as u64);
                    let mag = make_phantom(PhantomKind::RandomEllipses, 64, s);
                    let m_ref = with_synthetic_phase(&mag, s);
                    let mask = make_poisson_disk_mask(64, 64, 4.0, 0.04, s).unwrap();
                    let op: Arc<dyn LinearOperator> =
                        Arc::new(FourierMaskOperator::new(mask));
                    let f = op.apply(&m_ref).unwrap();
                    TrainSample { op, f, m_ref }
                })
                .collect()
        };
        let train_set = make(1, n_train);
        let val_set = make(2, 30);

        let baseline: f64 = val_set
            .iter()
            .map(|s| metrics::psnr(&s.op.adjoint(&s.f).unwrap(), &s.m_ref).unwrap())
            .sum::<f64>()
            / val_set.len() as f64;
        println!("{family}: zero-filled baseline {baseline:.2} dB");

        let mut net =
            build_network(NetworkConfig::new(family, LearningState::I).with_seed(seed)).unwrap();
        let loss = LossConfig::for_network(&net);
        let mut cfg = TrainConfig::new(max_epochs, loss, seed);
        cfg.adam.lr = lr;
        let t0 = Instant::now();
        let val_ref = &val_set;
        let report = train_with_callback(
            &mut net,
            &train_set,
            val_ref,
            &cfg,
            |rec, net_now| {
                let psnr: f64 = val_ref
                    .iter()
                    .map(|s| {
                        let recon = net_now.forward(&s.op, &s.f, None).unwrap();
                        metrics::psnr(&recon, &s.m_ref).unwrap()
                    })
                    .sum::<f64>()
                    / val_ref.len() as f64;
                println!(
                    "epoch {:2}: train {:.5} val {:.5} val-psnr {:.2} dB (gain {:+.2}) [{:.0} s]",
                    rec.epoch,
                    rec.train_loss,
                    rec.val_loss,
                    psnr,
                    psnr - baseline,
                    t0.elapsed().as_secs_f64()
                );
                if psnr >= baseline + 2.5 {
                    TrainControl::Stop
                } else {
                    TrainControl::Continue
                }
            },
        )
        .unwrap();
        println!(
            "stopped after {} epochs, {:.0} s",
            report.curve.len(),
            report.wall_seconds
        );
    }
    if which == "pdhgtune" {
        let mask = make_poisson_disk_mask(16, 16, 2.0, 0.12, 77).unwrap();
        let op = FourierMaskOperator::new(mask);
        let m_true = smooth_phantom(16);
        let f = op.apply(&m_true).unwrap();
        let cfg = SparsityConfig::haar(1e-3).unwrap();
        for sigma in [0.1f64, 0.05, 0.03, 0.02, 0.01, 0.005, 0.002] {
            let tau = 0.98 / sigma;
            let st = pdhg_solve(&op, &f, &cfg, sigma, tau, 1.0, 2000, None).unwrap();
            let g0 = st.gap_history[0];
            let gend = st.gap_history.last().unwrap();
            // first iteration reaching 1e-6 * g0
            let hit = st
                .gap_history
                .iter()
                .position(|&g| g < 1e-6 * g0)
                .map(|i| i + 1);
            println!(
                "sigma {sigma:6.2} tau {tau:7.4}: gap0 {g0:.3e} gap2000 {gend:.3e} ratio {:.3e} hit1e-6@{hit:?}",
                gend / g0
            );
        }
    }
    if which == "fbp" || which.is_empty() {
        for radius in [0.2, 0.3] {
            let geom = FanBeamGeometry::default().with_views(360);
            let op = FanBeamOperator::new(geom).unwrap();
            let phantom = disk_phantom(128, radius);
            let sino = op.apply(&phantom).unwrap();
            let recon = fbp_reconstruct(&op, &sino).unwrap();
            // center value and profile along middle row
            let n = 128;
            let mid = n / 2;
            println!(
                "radius {radius}: center recon {:.4} (want 1.0)",
                recon.data[mid * n + mid]
            );
            let mut num = 0.0;
            let mut den = 0.0;
            let c = (n as f64 - 1.0) / 2.0;
            for y in 0..n {
                for x in 0..n {
                    let dy = y as f64 - c;
                    let dx = x as f64 - c;
                    if dx * dx + dy * dy <= (0.48 * n as f64).powi(2) {
                        let d = recon.data[y * n + x] - phantom.data[y * n + x];
                        num += d * d;
                        den += phantom.data[y * n + x] * phantom.data[y * n + x];
                    }
                }
            }
            println!("  rel L2 inside support: {:.4}", (num / den).sqrt());
            print!("  profile y=mid x=30..98 step4: ");
            for x in (30..98).step_by(4) {
                print!("{:.3} ", recon.data[mid * n + x]);
            }
            println!();
        }
    }
}
