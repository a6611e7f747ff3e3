use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use motionkit::camera::{rot_x, rot_y, rot_z, CameraIntrinsics, CameraPose};
use motionkit::flow::FlowField;
use motionkit::metrics::{add_noise_snr, mean_rotation_error, measured_snr_db, motion_error, signal_power};
use motionkit::trajectory::Trajectory;
use motionkit::Error;

fn random_field(seed: u64, w: usize, h: usize, holes: bool) -> FlowField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h)
        .map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
        .collect();
    let mask = (0..w * h).map(|_| !holes || rng.random_bool(0.8)).collect();
    FlowField::from_parts(w, h, data, mask).unwrap()
}

fn trajectory(angles: &[(f64, f64, f64)], global: (f64, f64, f64)) -> Trajectory {
    let intr = CameraIntrinsics::centered(20.0, 8, 8).unwrap();
    let g = rot_z(global.2) * rot_y(global.1) * rot_x(global.0);
    let poses = angles
        .iter()
        .enumerate()
        .map(|(n, (a, b, c))| CameraPose::new(g * rot_z(*c) * rot_y(*b) * rot_x(*a), Vector3::new(n as f64, 0.0, 0.0)).unwrap())
        .collect();
    Trajectory::from_poses(intr, poses).unwrap()
}

proptest! {
    #[test]
    fn motion_error_is_symmetric(a in 0u64..1000, b in 0u64..1000) {
        let fa: Vec<_> = (0..3).map(|k| random_field(a * 7 + k, 6, 5, true)).collect();
        let fb: Vec<_> = (0..3).map(|k| random_field(b * 7 + k + 1, 6, 5, true)).collect();
        let ab = motion_error(&fa, &fb).unwrap();
        let ba = motion_error(&fb, &fa).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn rotation_error_ignores_a_shared_world_rotation(
        gt in prop::collection::vec((-1.5..1.5f64, -1.5..1.5f64, -1.5..1.5f64), 2..6),
        noise in prop::collection::vec((-0.3..0.3f64, -0.3..0.3f64, -0.3..0.3f64), 6),
        global in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
    ) {
        let est: Vec<_> = gt.iter().zip(&noise).map(|(g, n)| (g.0 + n.0, g.1 + n.1, g.2 + n.2)).collect();
        let plain = mean_rotation_error(&trajectory(&gt, (0.0, 0.0, 0.0)), &trajectory(&est, (0.0, 0.0, 0.0))).unwrap();
        let turned = mean_rotation_error(&trajectory(&gt, global), &trajectory(&est, global)).unwrap();
        prop_assert!((plain - turned).abs() < 1e-7);
    }
}

#[test]
fn snr_hits_target_on_average_over_seeds() {
    let clean = random_field(1, 32, 32, true);
    for db in [25.0, 10.0, 0.0] {
        let mean = (0..100u64)
            .map(|s| add_noise_snr(&clean, db, s).unwrap().measured_snr_db)
            .sum::<f64>()
            / 100.0;
        assert!((mean - db).abs() < 0.02, "{db} dB: mean {mean}");
    }
}

#[test]
fn snr_noise_touches_only_valid_pixels() {
    let clean = random_field(2, 16, 16, true);
    let noisy = add_noise_snr(&clean, 15.0, 9).unwrap();
    assert_eq!(noisy.flow.mask(), clean.mask());
    assert!((measured_snr_db(&clean, &noisy.flow).unwrap() - 15.0).abs() < 1e-9);
    assert!(signal_power(&clean) > 0.0);
    // infinite SNR is the identity
    assert_eq!(add_noise_snr(&clean, f64::INFINITY, 0).unwrap().flow, clean);
}

#[test]
fn snr_rejects_a_silent_field() {
    let zero = FlowField::zeros(8, 8);
    assert!(matches!(add_noise_snr(&zero, 10.0, 0), Err(Error::ZeroPower)));
}
