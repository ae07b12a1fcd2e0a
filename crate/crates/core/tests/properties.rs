use magcal::batch::{fit_intrinsic, solve_alignment, Derivative};
use magcal::ekf::{accel_gate, finalize, CalibState, Cov, Diagnostics, EkfConfig};
use magcal::io::dataset::{read_csv, write_csv, DatasetSpec};
use magcal::observability::{row_y, sorted_eigenvalues, GramianSet, SampleRows, NOISELESS_TOL};
use magcal::sim::{gen_trajectory, simulate, MotionProfile, NoiseConfig, SimTruth};
use magcal::so3::{dcm_to_euler, euler_to_dcm, exp_so3, nearest_rotation, orthonormality_error, qr_pos_diag, Euler};
use magcal::{Mat3, Sample, Vec3};
use proptest::prelude::*;

fn v3(s: f64) -> impl Strategy<Value = Vec3> {
    (-s..s, -s..s, -s..s).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

/// Upper-triangular with a positive diagonal near identity.
fn upper(off: f64) -> impl Strategy<Value = Mat3> {
    (0.7..1.4f64, 0.7..1.4f64, 0.7..1.4f64, -off..off, -off..off, -off..off)
        .prop_map(|(a, b, c, d, e, f)| Mat3::new(a, d, e, 0.0, b, f, 0.0, 0.0, c))
}

fn noiseless_truth(r: &Mat3, h: Vec3, rot: Vec3, eps: Vec3) -> SimTruth {
    let mut t = SimTruth::ned(43.0, NoiseConfig::zero());
    t.s = (exp_so3(&rot).transpose() * r).try_inverse().unwrap();
    t.h = h;
    t.eps = eps;
    t
}

fn tumble(seconds: f64, seed: u64) -> magcal::sim::Trajectory {
    gen_trajectory(&MotionProfile::hand_tumble(1.0, seconds, 1.5), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn qr_is_stable_under_perturbation(rot in v3(3.0), r in upper(0.3), d in v3(1e-7)) {
        let a = exp_so3(&rot) * r;
        let (q, rr) = qr_pos_diag(&a).unwrap();
        prop_assert!((q - exp_so3(&rot)).norm() < 1e-9);
        prop_assert!((rr.matrix() - r).norm() < 1e-9);
        let (q2, r2) = qr_pos_diag(&(a + Mat3::from_diagonal(&d))).unwrap();
        prop_assert!((q2 - q).norm() < 1e-5 && (r2.matrix() - rr.matrix()).norm() < 1e-5);
        prop_assert!((q.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_lands_in_so3(rot in v3(3.0), noise in v3(0.3), skew_noise in v3(0.3)) {
        let a = exp_so3(&rot) + Mat3::from_diagonal(&noise) + magcal::so3::skew(&skew_noise) * 0.5;
        let c = nearest_rotation(&a).unwrap();
        prop_assert!(orthonormality_error(&c) < 1e-12);
        prop_assert!((c.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn euler_round_trip(roll in -3.0..3.0f64, pitch in -1.5..1.5f64, yaw in -3.0..3.0f64) {
        let c = euler_to_dcm(&Euler::new(roll, pitch, yaw));
        prop_assert!(orthonormality_error(&c) < 1e-12);
        let e = dcm_to_euler(&c);
        prop_assert!((euler_to_dcm(&e) - c).norm() < 1e-12);
    }

    #[test]
    fn gate_is_the_magnitude_predicate(norm in 0.0..20.0f64, g in 9.0..10.0f64, t in 0.001..1.0f64) {
        prop_assert_eq!(accel_gate(norm, g, t), (norm - g).abs() < t);
    }

    #[test]
    fn degree_conversion_round_trips(x in -1e3..1e3f64) {
        prop_assert!((x.to_radians().to_degrees() - x).abs() <= 1e-13 * x.abs().max(1.0));
    }

    #[test]
    fn csv_write_read_identity(rows in prop::collection::vec((v3(1e3), v3(50.0), v3(5.0)), 2..40)) {
        let samples: Vec<Sample> = rows
            .iter()
            .enumerate()
            .map(|(k, (g, a, m))| Sample { t: k as f64 * 0.01, gyro: *g, accel: *a, mag: *m })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &samples).unwrap();
        let back = read_csv(buf.as_slice(), &DatasetSpec::new("mem", 100.0)).unwrap();
        prop_assert_eq!(back.samples, samples);
    }

    #[test]
    fn scale_ambiguity_closes(alpha in 0.2..5.0f64, r in upper(0.3), rot in v3(1.0), m in v3(1.0), h in v3(0.5)) {
        prop_assume!(m.norm() > 0.1);
        let s = (exp_so3(&rot) * r).try_inverse().unwrap();
        let x = CalibState {
            c: exp_so3(&Vec3::new(0.3, -0.2, 0.1)),
            eps: Vec3::zeros(),
            s,
            h,
            m_i: m,
            g_i: Vec3::new(0.0, 0.0, 9.8),
            p: Cov::zeros(),
            t: 0.0,
        };
        let y = CalibState { s: s * alpha, m_i: m / alpha, ..x.clone() };
        prop_assert!((x.predict_mag() - y.predict_mag()).norm() < 1e-12);
        let d = Diagnostics { mag_updates: 1, ..Default::default() };
        let (a, b) = (finalize(&x, &d).unwrap(), finalize(&y, &d).unwrap());
        prop_assert!((a.s_rs - b.s_rs).norm() < 1e-10);
        prop_assert!((a.m_rs - b.m_rs).norm() < 1e-12);
        prop_assert!((a.r - r * m.norm().recip()).norm() < 1e-9 || (a.r - b.r).norm() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn noiseless_field_lies_on_ellipsoid(seed in 0u64..1000, r in upper(0.3), h in v3(0.6), rot in v3(0.5)) {
        let truth = noiseless_truth(&r, h, rot, Vec3::zeros());
        let sim = simulate::<f64>(&truth, &tumble(10.0, seed), seed).unwrap();
        for s in &sim.samples {
            prop_assert!(((r * (s.mag - h)).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_specific_force_rotates_with_body(seed in 0u64..1000, eps in v3(0.01)) {
        let truth = noiseless_truth(&Mat3::identity(), Vec3::zeros(), Vec3::zeros(), eps);
        let traj = tumble(10.0, seed);
        let sim = simulate::<f64>(&truth, &traj, seed).unwrap();
        let dt = traj.dt();
        for k in 1..sim.samples.len() - 1 {
            let dy = (sim.samples[k + 1].accel - sim.samples[k - 1].accel) / (2.0 * dt);
            let y = sim.samples[k].accel;
            let w = sim.samples[k].gyro - eps;
            prop_assert!((dy + w.cross(&y)).norm() < 2e-2, "k {} err {}", k, (dy + w.cross(&y)).norm());
        }
    }

    #[test]
    fn gramian_eigenvalues_never_decrease(seed in 0u64..1000) {
        let truth = noiseless_truth(&Mat3::identity(), Vec3::new(0.1, 0.0, -0.2), Vec3::zeros(), Vec3::zeros());
        let sim = simulate::<f64>(&truth, &tumble(6.0, seed), seed).unwrap();
        let mut g = GramianSet::<f64>::new();
        let mut prev = vec![0.0; 10];
        for s in sim.samples.iter().step_by(7) {
            g.accumulate(&SampleRows { y: Some(row_y(&s.mag)), w: None, a: None, m: None }, 0.07);
            let ev = sorted_eigenvalues(&g.g_y);
            let scale = ev[9].max(1e-300);
            for (a, b) in ev.iter().zip(&prev) {
                prop_assert!(*a >= *b - 1e-9 * scale);
            }
            prev = ev;
        }
    }

    #[test]
    fn intrinsic_fit_ignores_attitude_and_scales(seed in 0u64..1000, r in upper(0.2), h in v3(0.5), rot in v3(0.5), c in 0.1..10.0f64) {
        let truth = noiseless_truth(&r, h, rot, Vec3::zeros());
        let mags = |s: u64, init: Vec3| {
            let mut t = truth.clone();
            t.initial_attitude = exp_so3(&init);
            let sim = simulate::<f64>(&t, &tumble(30.0, s), s).unwrap();
            sim.samples.iter().map(|x| x.mag).collect::<Vec<_>>()
        };
        let a = fit_intrinsic(&mags(seed, Vec3::zeros()), NOISELESS_TOL).unwrap();
        let b = fit_intrinsic(&mags(seed + 1, Vec3::new(0.4, -1.0, 2.0)), NOISELESS_TOL).unwrap();
        prop_assert!((a.r.matrix() - r).norm() < 1e-7 && (a.h - h).norm() < 1e-7);
        prop_assert!((b.r.matrix() - r).norm() < 1e-7 && (b.h - h).norm() < 1e-7);
        let scaled: Vec<Vec3> = mags(seed, Vec3::zeros()).iter().map(|y| y * c).collect();
        let s = fit_intrinsic(&scaled, NOISELESS_TOL).unwrap();
        prop_assert!((s.h - h * c).norm() < 1e-6 * c.max(1.0));
        prop_assert!((s.r.matrix() - r / c).norm() < 1e-7 * c.recip().max(1.0));
    }

    #[test]
    fn alignment_is_a_rotation_under_noise(seed in 0u64..1000, sm in 0.0..0.05f64) {
        let mut truth = noiseless_truth(&Mat3::identity(), Vec3::zeros(), Vec3::new(0.1, 0.2, -0.1), Vec3::zeros());
        truth.noise.sigma_m = sm;
        truth.noise.sigma_g = 0.01f64.to_radians();
        let traj = tumble(20.0, seed);
        let sim = simulate::<f64>(&truth, &traj, seed).unwrap();
        let y: Vec<Vec3> = sim.samples.iter().map(|s| s.mag).collect();
        let w: Vec<Vec3> = sim.samples.iter().map(|s| s.gyro).collect();
        let al = solve_alignment(&y, &w, traj.dt(), Derivative::Central5, 1e-8).unwrap();
        prop_assert!(orthonormality_error(&al.c_b_m) < 1e-12);
        prop_assert!((al.c_b_m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_psd(seed in 0u64..1000) {
        let mut truth = noiseless_truth(&Mat3::new(1.1, 0.05, 0.0, 0.0, 0.95, 0.03, 0.0, 0.0, 1.02), Vec3::new(0.3, -0.1, 0.2), Vec3::new(0.05, 0.0, 0.1), Vec3::new(0.003, -0.002, 0.004));
        truth.noise = NoiseConfig::reference(0.03);
        let traj = tumble(15.0, seed);
        let sim = simulate::<f64>(&truth, &traj, seed).unwrap();
        let cfg = EkfConfig::default();
        let s0 = &sim.samples[0];
        let mut x = CalibState::<f64>::init(&cfg, &s0.mag, &s0.accel, s0.t).unwrap();
        for (k, w) in sim.samples.windows(2).enumerate() {
            x.propagate(&cfg.noise, &((w[0].gyro + w[1].gyro) * 0.5), w[1].t - w[0].t).unwrap();
            x.update_mag(&cfg.noise, &w[1].mag).unwrap();
            x.update_accel(&cfg, &w[1].accel).unwrap();
            prop_assert!((x.p - x.p.transpose()).norm() <= 1e-12 * x.p.norm());
            if k % 50 == 0 {
                let (_, min_ratio) = x.covariance_health();
                prop_assert!(min_ratio > -1e-9, "step {} ratio {}", k, min_ratio);
            }
        }
    }
}
