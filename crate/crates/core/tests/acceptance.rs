//! End-to-end acceptance checks, one pass/fail line per criterion.

use lean_observer::analysis::mc_covariance_rv;
use lean_observer::attitude::phi_av;
use lean_observer::config::RunConfig;
use lean_observer::ekf::{riccati_step, state_step, EkfConfig, EkfTuning, Matrix7, Vector7};
use lean_observer::pipeline::{compare, estimate, lap_time, score, simulate, RollReference};
use lean_observer::prefilter::{build_design, evaluate, fit, GnssWindow};
use lean_observer::sensors::{corrupt, corrupt_with_bias, NoiseParams, SensorSuite};
use lean_observer::trajectory::simulate_truth;
use lean_observer::validation::run_invariant_suite;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::ExitCode;

type Outcome = (bool, String);

fn noise_free() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sensors = SensorSuite::ideal(cfg.sensors.gyro.ts, cfg.sensors.gnss.ts);
    cfg
}

fn criterion_1_coordinated_roll_is_exact() -> Outcome {
    let mut cfg = noise_free();
    cfg.truth.duration = lap_time(&cfg).unwrap();
    let (_, _, truth) = simulate_truth(&cfg.track, &cfg.limits, &cfg.truth).unwrap();
    let worst = truth
        .samples
        .iter()
        .map(|s| {
            let a = s.specific_force(truth.g_mag);
            (phi_av(&a, &s.xi, truth.g_mag, 0.0).unwrap() - s.phi).abs()
        })
        .fold(0.0f64, f64::max);
    (
        worst < 1e-9,
        format!("max |phi_av - phi| = {worst:.3e} rad over {} samples", truth.samples.len()),
    )
}

fn criterion_2_reconstructor_exactness_and_covariance() -> Outcome {
    let (n, tau) = (5, 0.1);
    let design = build_design(n, tau, &Matrix3::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    // piecewise quadratic: a new parabola every window
    for piece in 0..20i64 {
        let c: [Vector3<f64>; 3] = std::array::from_fn(|_| Vector3::from_fn(|_, _| rng.random_range(-20.0..20.0)));
        let mut w = GnssWindow::new(n);
        let start = piece * n as i64;
        let end = start + n as i64 - 1;
        for k in start..=end {
            let u = (k - end) as f64 * tau;
            w.push(k, c[2] * u * u + c[1] * u + c[0]).unwrap();
        }
        let z = fit(&w, &design).unwrap();
        for j in 0..=10 {
            let u = j as f64 * tau / 10.0;
            let e = evaluate(&z, u);
            worst = worst
                .max((e.v - (c[2] * u * u + c[1] * u + c[0])).amax())
                .max((e.v_dot - (c[2] * 2.0 * u + c[1])).amax());
        }
    }
    let cfg = RunConfig::default().prefilter();
    let rep = mc_covariance_rv(&cfg, 10_000, 2, 0.0).unwrap();
    (
        worst < 1e-9 && rep.rel_frobenius < 0.1,
        format!(
            "max reconstruction error {worst:.3e}, R_v relative Frobenius error {:.4} at {} trials",
            rep.rel_frobenius, rep.trials
        ),
    )
}

fn criterion_3_course_estimate_is_continuous_across_the_seam() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.truth.duration = 3.0 * lap_time(&cfg).unwrap() + 2.0;
    let (truth, frames) = simulate(&cfg).unwrap();
    let crossings = truth.seam_crossings();
    let recs = estimate(&cfg, &frames).unwrap();
    let chi_dot_max = truth.samples.iter().map(|s| s.xi.chi_dot.abs()).fold(0.0, f64::max);
    let bound = 1.5 * chi_dot_max * cfg.truth.dt;
    let chi: Vec<f64> = recs.iter().filter_map(|r| r.pre.map(|p| p.theta_av.psi)).collect();
    let jump = chi.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let laps = recs.last().and_then(|r| r.pre).map(|p| p.laps).unwrap();
    let passed = crossings.n_plus + crossings.n_minus >= 3 && jump <= bound && laps.net() == crossings.net();
    (
        passed,
        format!(
            "{} seam crossings, max jump {jump:.4e} rad (bound {bound:.4e}), counters net {} vs truth {}",
            crossings.n_plus + crossings.n_minus,
            laps.net(),
            crossings.net()
        ),
    )
}

fn criterion_4_information_matrix_stays_bounded() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.truth.duration = 9.0 * lap_time(&cfg).unwrap();
    let (_, frames) = simulate(&cfg).unwrap();
    let recs = estimate(&cfg, &frames).unwrap();
    let (lo, hi) = recs
        .iter()
        .filter_map(|r| r.ekf.map(|e| e.s_eigen_range))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    (
        lo >= 1e-4 && hi.is_finite(),
        format!("eig(S) within [{lo:.3e}, {hi:.3e}] over {:.0} s", cfg.truth.duration),
    )
}

fn criterion_5_roll_accuracy() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.truth.duration = 150.0;
    let (truth, frames) = simulate(&cfg).unwrap();
    let recs = estimate(&cfg, &frames).unwrap();
    let series = compare(&RollReference::from(&truth), truth.g_mag, &frames, &recs, cfg.baseline_speed).unwrap();
    let scores = score(&series, truth.lap_time, cfg.low_band).unwrap();
    let s = scores.iter().find(|s| s.label == "phi_hat").unwrap();
    let (mean, std) = (s.mean.to_degrees(), s.std.to_degrees());
    (
        mean.abs() <= 2.0 && std <= 5.0,
        format!("roll error mean {mean:.3} deg, std {std:.3} deg over laps 2+"),
    )
}

fn criterion_6_gyro_bias_is_recovered() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.truth.duration = 120.0;
    cfg.sensors.gyro.sigma0 = 0.0;
    cfg.sensors.gyro.injected_bias = [0.05; 3];
    let (_, _, truth) = simulate_truth(&cfg.track, &cfg.limits, &cfg.truth).unwrap();
    let (frames, bias) = corrupt_with_bias(&truth, &cfg.sensors, cfg.seed).unwrap();
    let recs = estimate(&cfg, &frames).unwrap();
    let last = recs.len() - 1;
    let b_hat = recs[last].ekf.unwrap().b_g_hat;
    let err = (b_hat - bias[last]).amax();
    (
        err <= 0.1 * 0.05,
        format!(
            "b_g at {:.0} s: estimate {:.4?}, actual {:.4?}, max error {err:.4} rad/s",
            recs[last].t,
            b_hat.as_slice(),
            bias[last].as_slice()
        ),
    )
}

fn criterion_7_low_band_ordering() -> Outcome {
    let base = RunConfig {
        truth: lean_observer::trajectory::TruthOptions {
            duration: 150.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let results: Vec<Vec<(String, f64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = [1u64, 2, 3]
            .into_iter()
            .map(|seed| {
                let cfg = RunConfig { seed, ..base.clone() };
                s.spawn(move || {
                    let (truth, frames) = simulate(&cfg).unwrap();
                    let recs = estimate(&cfg, &frames).unwrap();
                    let series =
                        compare(&RollReference::from(&truth), truth.g_mag, &frames, &recs, cfg.baseline_speed)
                            .unwrap();
                    score(&series, truth.lap_time, cfg.low_band)
                        .unwrap()
                        .into_iter()
                        .map(|s| (s.label, s.low_band_energy))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut passed = true;
    let mut detail = Vec::new();
    for (seed, energies) in [1, 2, 3].iter().zip(&results) {
        let e = |label: &str| energies.iter().find(|(l, _)| l == label).unwrap().1;
        let av = e("phi_av");
        let best = ["phi_1", "phi_2", "phi_3", "phi_4", "phi_5"]
            .iter()
            .map(|l| e(l))
            .fold(f64::INFINITY, f64::min);
        passed &= av < best;
        detail.push(format!("seed {seed}: phi_av {av:.3e} < min baseline {best:.3e}"));
    }
    (passed, detail.join("; "))
}

fn rk4_errors<F>(step: F, t_end: f64, hs: [f64; 2], h_ref: f64) -> [f64; 2]
where
    F: Fn(&Vector7<f64>, &Matrix7<f64>, f64) -> (Vector7<f64>, Matrix7<f64>),
{
    let run = |h: f64| {
        let n = (t_end / h).round() as usize;
        let mut x = Vector7::from_column_slice(&[0.01, -0.02, 0.03, 0.9, 0.1, -0.3, 0.2]);
        let mut s = Matrix7::identity();
        for _ in 0..n {
            (x, s) = step(&x, &s, h);
        }
        (x, s)
    };
    let (x_ref, s_ref) = run(h_ref);
    hs.map(|h| {
        let (x, s) = run(h);
        (x - x_ref).amax().max((s - s_ref).amax())
    })
}

fn criterion_8_numerical_hygiene() -> Outcome {
    let checks = run_invariant_suite(&RunConfig::default()).unwrap();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();

    let tuning = EkfTuning::from_config(&EkfConfig::default(), &NoiseParams::gyro_default()).unwrap();
    let y_g = Vector3::new(0.5, -0.3, 0.8);
    let r_t = Matrix4::identity() * 1e-2;
    let q1 = Vector4::new(0.8, 0.2, -0.4, 0.4).normalize();
    let riccati = rk4_errors(
        |x, s, h| (*x, riccati_step(s, x, &y_g, &tuning, Some(&r_t), h).unwrap()),
        0.4,
        [0.02, 0.01],
        1e-4,
    );
    let s_fixed = Matrix7::identity() * 50.0;
    let state = rk4_errors(
        |x, s, h| (state_step(x, &s_fixed, Some(&q1), &y_g, Some(&r_t), h).unwrap(), *s),
        0.4,
        [0.02, 0.01],
        1e-4,
    );
    let ratios = [riccati[0] / riccati[1], state[0] / state[1]];
    let passed = failed.is_empty() && ratios.iter().all(|r| *r >= 8.0);
    (
        passed,
        format!(
            "{} of {} invariant checks pass{}; RK4 halving ratios: Riccati {:.1}, state {:.1}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) },
            ratios[0],
            ratios[1]
        ),
    )
}

fn criterion_9_gyro_white_noise_level() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.truth.duration = 600.0;
    let (_, _, truth) = simulate_truth(&cfg.track, &cfg.limits, &cfg.truth).unwrap();
    let frames = corrupt(&truth, &cfg.sensors, cfg.seed).unwrap();
    let gyro = &cfg.sensors.gyro;
    let dt = gyro.ts;
    let m = (0.1 / dt).round() as usize;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for k in 0..3 {
        let err: Vec<f64> = frames.iter().zip(&truth.samples).map(|(f, s)| f.y_g[k] - s.omega[k]).collect();
        let adev = lean_observer::analysis::allan_deviation(&err, dt, m).unwrap();
        let expected = gyro.white[k] / (m as f64 * dt).sqrt();
        let rel = (adev / expected - 1.0).abs();
        worst = worst.max(rel);
        detail.push(format!("{adev:.4e}"));
    }
    (
        worst <= 0.1,
        format!(
            "Allan deviation at 0.1 s: [{}] vs N/sqrt(tau) = {:.4e}, worst deviation {:.1}%",
            detail.join(", "),
            gyro.white[0] / 0.1f64.sqrt(),
            100.0 * worst
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 9] = [
        criterion_1_coordinated_roll_is_exact,
        criterion_2_reconstructor_exactness_and_covariance,
        criterion_3_course_estimate_is_continuous_across_the_seam,
        criterion_4_information_matrix_stays_bounded,
        criterion_5_roll_accuracy,
        criterion_6_gyro_bias_is_recovered,
        criterion_7_low_band_ordering,
        criterion_8_numerical_hygiene,
        criterion_9_gyro_white_noise_level,
    ];
    let outcomes: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|c| s.spawn(c)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| (false, "panicked".into())))
            .collect()
    });
    let mut failed = 0;
    for (n, (passed, detail)) in outcomes.into_iter().enumerate() {
        println!("criterion {}: {} {detail}", n + 1, if passed { "PASS" } else { "FAIL" });
        failed += usize::from(!passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
