use std::f64::consts::FRAC_PI_2;

use egorender_core::body::{forward_kinematics, solve_ik, BodyConfig, BodyPose, IkOptions, JointTargets};
use egorender_core::geometry::{FisheyeCamera, Mat3, RigidTransform, Vec3};
use egorender_core::img::Image;
use egorender_core::metrics::{l1, relative_improvement_per_dataset, ssim, MetricTable, Orientation, WorstRule};
use egorender_core::raster::{feature_render, feature_render_grad, IuvImage};
use egorender_core::textures::{bilinear_taps, AtlasLayout, TextureStack};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform<f64>> {
    (vec3(3.0), vec3(5.0)).prop_map(|(w, t)| RigidTransform::new(Mat3::exp(w), t))
}

fn image(w: usize, c: usize) -> impl Strategy<Value = Image<f64>> {
    prop::collection::vec(0.0..1.0f64, w * w * c).prop_map(move |d| Image::from_vec(w, w, c, d).unwrap())
}

proptest! {
    #[test]
    fn fisheye_unproject_inverts_project(
        focal in 40.0..200.0f64,
        r in 0.0..1.0f64,
        phi in 0.0..std::f64::consts::TAU,
        depth in 0.1..10.0f64,
    ) {
        let cam = FisheyeCamera::new(focal, [160.0, 120.0], (320, 240), RigidTransform::identity(), FRAC_PI_2).unwrap();
        let px = [160.0 + r * cam.fov_radius() * phi.cos(), 120.0 + r * cam.fov_radius() * phi.sin()];
        let ray = cam.unproject(px).unwrap();
        prop_assert!((ray.norm() - 1.0).abs() < 1e-12);
        let back = cam.project(ray * depth).unwrap().unwrap();
        prop_assert!((back[0] - px[0]).hypot(back[1] - px[1]) < 1e-8);
    }

    #[test]
    fn rigid_transforms_compose_with_their_inverse(a in transform(), b in transform(), p in vec3(10.0)) {
        let q = a.compose(&b).apply(p);
        prop_assert!((q - a.apply(b.apply(p))).norm() < 1e-9);
        prop_assert!((a.inverse().apply(a.apply(p)) - p).norm() < 1e-9);
        prop_assert!(a.rotation.orthonormality_error() < 1e-12);
    }

    #[test]
    fn bilinear_weights_form_a_partition_of_unity(size in 2usize..64, u in -0.5..1.5f64, v in -0.5..1.5f64) {
        let taps = bilinear_taps(size, u, v);
        let total: f64 = taps.iter().map(|t| t.2).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(taps.iter().all(|&(x, y, w)| x < size && y < size && (-1e-12..=1.0 + 1e-12).contains(&w)));
    }

    #[test]
    fn feature_render_is_linear_in_the_texture(
        seed_tex in prop::collection::vec(-1.0..1.0f64, 2 * 8 * 8 * 3),
        upstream in image(6, 3),
        cells in prop::collection::vec((0u16..3, 0.0..1.0f64, 0.0..1.0f64), 36),
    ) {
        let mut tex = TextureStack::<f64>::zeros(AtlasLayout::new(2, 8), 3);
        tex.data.copy_from_slice(&seed_tex);
        let mut iuv = IuvImage::background(6, 6);
        for (k, &(part, u, v)) in cells.iter().enumerate() {
            if part > 0 {
                iuv.part[k] = part;
                iuv.uv[k] = [u, v];
                iuv.depth[k] = 1.0;
            }
        }
        let out = feature_render(&tex, &iuv).unwrap();
        let grad = feature_render_grad(&tex, &iuv, &upstream).unwrap();
        let lhs: f64 = out.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = tex.data.iter().zip(&grad.data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
        for (k, &(part, _, _)) in cells.iter().enumerate() {
            if part == 0 {
                prop_assert!(out.data[3 * k..3 * k + 3].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn image_metrics_are_symmetric_and_self_consistent(a in image(12, 3), b in image(12, 3)) {
        prop_assert_eq!(l1(&a, &a).unwrap(), 0.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        prop_assert_eq!(l1(&a, &b).unwrap(), l1(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn the_reference_method_improves_by_zero(values in prop::collection::vec(0.05..1.0f64, 6)) {
        let rows: Vec<&[f64]> = values.chunks(2).collect();
        let t = MetricTable::new(&["a", "b", "c"], &["x", "y"], &rows);
        for o in [Orientation::LowerIsBetter, Orientation::HigherIsBetter] {
            let ri = relative_improvement_per_dataset(&t, o, &WorstRule::PerDataset).unwrap();
            for d in 0..2 {
                let worst = t.worst(d, o).unwrap();
                prop_assert_eq!(ri[worst][d], 0.0);
                prop_assert!(ri.iter().all(|r| r[d] >= 0.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ik_recovers_reachable_joint_positions(omegas in prop::collection::vec(vec3(0.35), 64), root in transform()) {
        let skel = BodyConfig::default().skeleton::<f64>().unwrap();
        let pose = BodyPose { root, rotations: omegas[..skel.len()].iter().map(|&w| Mat3::exp(w)).collect() };
        let targets = JointTargets::from_skeleton_positions(&forward_kinematics(&skel, &pose));
        let r = solve_ik(&skel, &targets, &BodyPose::rest(skel.len()), &IkOptions::default()).unwrap();
        prop_assert!(r.mean_residual < 1e-6, "mean residual {}", r.mean_residual);
    }
}
