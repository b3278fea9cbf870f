use proptest::prelude::*;

use gsshare::build::{voxelize, ColoredPointCloud};
use gsshare::codec::entropy::{estimate_bits, fit_entropy_model};
use gsshare::codec::rangecoder::{ac_decode, ac_encode};
use gsshare::enhance::{inpaint, virtual_loss, PseudoGT};
use gsshare::image::Image;
use gsshare::metrics::{psnr, ssim, PSNR_CAP_DB};
use gsshare::model::{covariance, pose_distance, renormalized, CameraPose, Gaussian, GaussianMap, Intrinsics, Quat, Vec3};
use gsshare::render::{render, render_bruteforce};

fn cam() -> CameraPose {
    let k = Intrinsics {
        fx: 14.0,
        fy: 14.0,
        cx: 7.5,
        cy: 5.5,
        width: 16,
        height: 12,
    };
    CameraPose::look_at(Vec3::new(-2.0, 0.1, 0.2), Vec3::zeros(), Vec3::z(), k)
}

fn quat() -> impl Strategy<Value = Quat> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(r, p, y)| Quat::from_euler_angles(r, p, y))
}

fn gaussian() -> impl Strategy<Value = Gaussian> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        0.01..0.4f64,
        0.01..0.4f64,
        quat(),
        0.0..1.0f64,
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        any::<bool>(),
    )
        .prop_map(|(p, s0, s1, q, o, c, flat)| {
            let p = Vec3::new(p.0, p.1, p.2);
            let c = [c.0, c.1, c.2];
            if flat {
                Gaussian::flat(p, [s0, s1], q, o, c)
            } else {
                Gaussian::isotropic(p, s0, o, c)
            }
        })
}

fn map_of(gs: &[Gaussian]) -> GaussianMap {
    let mut m = GaussianMap::empty(1, 0.03);
    for g in gs {
        m.push_anchor([0, 0, 0], vec![g.clone()]).unwrap();
    }
    m
}

fn pose() -> impl Strategy<Value = CameraPose> {
    (quat(), (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64)).prop_map(|(q, t)| CameraPose::new(q, Vec3::new(t.0, t.1, t.2), Intrinsics::desk_default()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn renormalization_is_idempotent(q in quat()) {
        let once = renormalized(q);
        prop_assert_eq!(renormalized(once), once);
    }

    #[test]
    fn covariance_ignores_quaternion_sign(g in gaussian()) {
        let mut h = g.clone();
        h.rotation = Quat::new_unchecked(-g.rotation.into_inner());
        let d = covariance(&g) - covariance(&h);
        prop_assert!(d.abs().max() < 1e-15);
    }

    #[test]
    fn rotation_distance_triangle_inequality(a in pose(), b in pose(), c in pose()) {
        let (ab, _) = pose_distance(&a, &b);
        let (bc, _) = pose_distance(&b, &c);
        let (ac, _) = pose_distance(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-6);
    }

    #[test]
    fn tiled_matches_bruteforce(gs in prop::collection::vec(gaussian(), 1..120)) {
        let map = map_of(&gs);
        let a = render(&map, &cam(), [0.1, 0.2, 0.3]);
        let b = render_bruteforce(&map, &cam(), [0.1, 0.2, 0.3]);
        for i in 0..a.color.len() {
            for ch in 0..3 {
                prop_assert!((a.color.data[i][ch] - b.color.data[i][ch]).abs() <= 1e-6);
            }
            prop_assert!((a.opacity.data[i] - b.opacity.data[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn render_ignores_input_order(gs in prop::collection::vec(gaussian(), 2..60), rot in 1usize..59) {
        let mut shuffled = gs.clone();
        shuffled.rotate_left(rot % gs.len());
        shuffled.reverse();
        let a = render(&map_of(&gs), &cam(), [0.0; 3]);
        let b = render(&map_of(&shuffled), &cam(), [0.0; 3]);
        for i in 0..a.color.len() {
            for ch in 0..3 {
                prop_assert!((a.color.data[i][ch] - b.color.data[i][ch]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn opacity_grows_as_splats_are_added_behind(gs in prop::collection::vec(gaussian(), 1..40)) {
        let c = cam();
        let mut sorted = gs.clone();
        let depth = |g: &Gaussian| (g.position - c.center()).norm();
        sorted.sort_by(|a, b| depth(a).total_cmp(&depth(b)));
        let mut prev = vec![0.0; 16 * 12];
        for n in 1..=sorted.len() {
            let out = render_bruteforce(&map_of(&sorted[..n]), &c, [0.0; 3]);
            for (p, o) in prev.iter().zip(&out.opacity.data) {
                prop_assert!(*o >= p - 1e-12);
            }
            prev = out.opacity.data;
        }
    }

    #[test]
    fn voxelize_is_idempotent_and_order_free(pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..200), eps in 0.01..0.3f64) {
        let cloud = |p: &[(f64, f64, f64)]| ColoredPointCloud {
            points: p.iter().map(|v| Vec3::new(v.0, v.1, v.2)).collect(),
            colors: vec![[0.5; 3]; p.len()],
            source_frame: vec![0; p.len()],
        };
        let grid = voxelize(&cloud(&pts), eps).unwrap();
        prop_assert!(grid.len() <= pts.len());
        let centers: Vec<(f64, f64, f64)> = grid.anchor_positions().iter().map(|p| (p.x, p.y, p.z)).collect();
        let again = voxelize(&cloud(&centers), eps).unwrap();
        prop_assert_eq!(&again.occupied, &grid.occupied);
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert_eq!(&voxelize(&cloud(&rev), eps).unwrap().occupied, &grid.occupied);
    }

    #[test]
    fn coder_round_trips_and_respects_estimate(raw in prop::collection::vec(-40i64..40, 1..600), width in 1usize..5) {
        let layout: Vec<usize> = (0..width).collect();
        let model = fit_entropy_model(&raw, layout).unwrap();
        let bytes = ac_encode(&raw, &model).unwrap();
        prop_assert_eq!(ac_decode(&bytes, &model, raw.len()).unwrap(), raw.clone());
        let est = estimate_bits(&raw, &model);
        prop_assert!(est >= 0.0);
        prop_assert!(bytes.len() as f64 >= est / 8.0 - 8.0);
    }

    #[test]
    fn inpaint_keeps_known_pixels(vals in prop::collection::vec(0.0..1.0f64, 48), holes in prop::collection::vec(any::<bool>(), 48)) {
        let img = Image { width: 8, height: 6, data: vals.iter().map(|v| [*v]).collect() };
        let mut mask = Image { width: 8, height: 6, data: holes };
        mask.data[0] = false;
        let out = inpaint(&img, &mask, 20_000, 1e-9).unwrap();
        for i in 0..48 {
            if !mask.data[i] {
                prop_assert_eq!(out.data[i], img.data[i]);
            }
        }
    }

    #[test]
    fn virtual_loss_is_monotone_in_confidence(a in prop::collection::vec(0.0..1.0f64, 12), b in prop::collection::vec(0.0..1.0f64, 12), conf in prop::collection::vec(0.0..1.0f64, 12), pix in 0usize..12) {
        let img = |v: &[f64]| Image { width: 4, height: 3, data: v.iter().map(|x| [*x, 1.0 - x, 0.5]).collect() };
        let pseudo = |c: Vec<f64>| PseudoGT {
            pose: cam(),
            image: img(&b),
            depth: Image::new(4, 3, 1.0),
            confidence: Image { width: 4, height: 3, data: c },
            holes: Image::new(4, 3, false),
        };
        let render = img(&a);
        let base = virtual_loss(&render, &pseudo(conf.clone())).unwrap();
        prop_assert!(base >= 0.0);
        let mut raised = conf.clone();
        raised[pix] = 1.0;
        prop_assert!(virtual_loss(&render, &pseudo(raised)).unwrap() >= base);
        prop_assert_eq!(virtual_loss(&render, &pseudo(vec![0.0; 12])).unwrap(), 0.0);
    }

    #[test]
    fn image_metrics_are_symmetric(a in prop::collection::vec(0.0..1.0f64, 3 * 96), b in prop::collection::vec(0.0..1.0f64, 3 * 96)) {
        let img = |v: &[f64]| Image { width: 12, height: 8, data: v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() };
        let (x, y) = (img(&a), img(&b));
        prop_assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-9);
        prop_assert!((psnr(&x, &y).unwrap() - psnr(&y, &x).unwrap()).abs() < 1e-12);
    }
}
