mod common;

use common::{random_scene, random_variation};
use proptest::prelude::*;

use varfield::gaussians::*;

fn max_diff(a: &Variation, b: &Variation) -> f32 {
    a.to_rows()
        .iter()
        .zip(b.to_rows())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn scene_diff(a: &GaussianScene, b: &GaussianScene) -> f32 {
    assert_eq!(a.len(), b.len());
    a.primitives()
        .zip(b.primitives())
        .flat_map(|(p, q)| {
            let (p, q) = (p.attributes(), q.attributes());
            (0..ATTRIBUTES).map(move |k| (p[k] - q[k]).abs())
        })
        .fold(0.0, f32::max)
}

#[test]
fn ply_round_trip_1000_primitives() {
    let scene = random_scene(1000, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.ply");
    assert_eq!(save_ply(&scene, &path).unwrap(), 0);
    let loaded = load_ply(&path).unwrap();
    let d = scene_diff(&scene, &loaded);
    assert!(d <= 1e-6, "max field diff {d}");
    // A loaded scene saves back to the same bytes and loads to itself.
    let path2 = dir.path().join("again.ply");
    save_ply(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    assert_eq!(load_ply(&path2).unwrap(), loaded);
}

#[test]
fn ply_loads_ecosystem_layout_with_extra_properties() {
    let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\n".to_vec();
    for name in ["f_dc_0", "f_dc_1", "f_dc_2", "f_rest_0", "opacity"] {
        bytes.extend(format!("property float {name}\n").as_bytes());
    }
    for name in ["scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        bytes.extend(format!("property double {name}\n").as_bytes());
    }
    bytes.extend(b"end_header\n");
    for v in [1.0f32, 2.0, 3.0, 9.0, 9.0, 9.0, 0.0, 0.0, 0.0, 9.0, 0.0] {
        bytes.extend(v.to_le_bytes());
    }
    for v in [0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0] {
        bytes.extend(v.to_le_bytes());
    }
    let s = read_ply(&bytes[..]).unwrap();
    assert_eq!(s.mu()[0], [1.0, 2.0, 3.0]);
    assert_eq!(s.rot()[0], [0.0, 0.0, 0.0, 1.0]);
    assert_eq!(s.opacity()[0], 0.5);
}

#[test]
fn scale_identities() {
    let s = random_scene(20, 1);
    let v = random_variation(&s, 0.3, 2);
    assert!(scale_variation(&v, 0.0).is_zero());
    assert_eq!(scale_variation(&v, 1.0), v);
    let twice = scale_variation(&scale_variation(&v, 0.5), 0.5);
    assert_eq!(twice, scale_variation(&v, 0.25));
    let w = AttributeWeights {
        mu: 1.0,
        scale: 0.0,
        opacity: 0.0,
        color: 0.0,
        rot: 0.0,
    };
    let only_mu = scale_variation(&v, w);
    assert_eq!(only_mu.delta_mu, v.delta_mu);
    assert!(only_mu.delta_color.iter().flatten().all(|&c| c == 0.0));
}

#[test]
fn mix_free_mixing_along_x() {
    let prims = (0..8).map(|i| {
        let x = if i % 2 == 0 { -10.0 } else { 10.0 };
        Primitive::isotropic([x, i as f32 * 0.1, 0.0], 0.1, 0.5, [0.5; 3])
    });
    let s = GaussianScene::from_primitives(prims).unwrap();
    let v1 = random_variation(&s, 1.0, 10);
    let v2 = random_variation(&s, 1.0, 11);
    // sigmoid(±20) is within 2.1e-9 of its limit; sigmoid(±10) would leave 4.5e-5.
    let w: Vec<f32> = s.mu().iter().map(|m| 1.0 / (1.0 + (-2.0 * m[0]).exp())).collect();
    let mixed = mix_variations(&v1, &v2, &MixWeights::PerPrimitive(w)).unwrap();
    for i in 0..s.len() {
        let (m, a, b) = (mixed.row(i), v1.row(i), v2.row(i));
        let target = if s.mu()[i][0] > 0.0 { a } else { b };
        for k in 0..ATTRIBUTES {
            assert!((m[k] - target[k]).abs() <= 1e-6, "row {i} attr {k}");
        }
    }
}

#[test]
fn mix_rejects_mismatch() {
    let s = random_scene(4, 1);
    let t = random_scene(4, 2);
    let v = Variation::zeros_for(&s);
    assert!(mix_variations(&v, &Variation::zeros_for(&t), &0.5.into()).is_err());
    assert!(mix_variations(&v, &Variation::zeros(v.scene_id, 5), &0.5.into()).is_err());
}

#[test]
fn box_selects_hand_placed_primitives() {
    let coords = [
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.5],
        [1.0, 1.0, 1.0],
        [1.5, 0.2, 0.2],
        [-0.1, 0.0, 0.0],
        [3.0, 3.0, 3.0],
        [0.2, 2.0, 0.2],
        [0.2, 0.2, -2.0],
        [5.0, 0.0, 0.0],
        [0.9, 0.1, 0.9],
    ];
    let s = GaussianScene::from_primitives(
        coords
            .iter()
            .map(|&c| Primitive::isotropic(c, 0.1, 0.5, [0.5; 3])),
    )
    .unwrap();
    let mut v = Variation::zeros_for(&s);
    v.delta_color = vec![[0.1; 3]; 10];
    let sel = Selector::Box {
        min: [0.0, 0.0, 0.0],
        max: [0.95, 0.95, 0.95],
    };
    let masked = mask_variation(&v, &s, &sel).unwrap();
    assert_eq!(masked.selected, 3);
    let nonzero: Vec<usize> = (0..10)
        .filter(|&i| masked.variation.row(i).iter().any(|&x| x != 0.0))
        .collect();
    assert_eq!(nonzero, vec![0, 1, 9]);

    let sphere = Selector::Sphere {
        center: [3.0, 3.0, 3.0],
        radius: 0.5,
    };
    assert_eq!(mask_variation(&v, &s, &sphere).unwrap().selected, 1);

    let all = mask_variation(&v, &s, &Selector::All).unwrap();
    assert_eq!(all.variation, v);
    let none = mask_variation(&v, &s, &Selector::Indices(vec![])).unwrap();
    assert!(none.empty && none.variation.is_zero());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlay_zero_is_identity(n in 0usize..40, seed in any::<u64>()) {
        let s = random_scene(n, seed);
        let out = overlay(&s, &Variation::zeros_for(&s)).unwrap();
        prop_assert_eq!(out, s);
    }

    #[test]
    fn overlay_is_additive_without_clamps(n in 1usize..30, seed in any::<u64>()) {
        let s = random_scene(n, seed);
        // Scales start at 0.01 and colors/opacities at 0.05, so ±0.004 twice never clamps.
        let mut d1 = random_variation(&s, 0.004, seed ^ 1);
        let mut d2 = random_variation(&s, 0.004, seed ^ 2);
        for v in [&mut d1, &mut d2] {
            v.delta_rot = vec![[0.0; 4]; n];
        }
        let once = overlay(&s, &d1.add(&d2).unwrap()).unwrap();
        let mid = overlay(&s, &d1).unwrap();
        let twice = overlay(&mid, &d2.clone().rebind(&mid).unwrap()).unwrap();
        let d = scene_diff(&once, &twice);
        prop_assert!(d <= 1e-6, "diff {}", d);
    }

    #[test]
    fn overlay_output_is_feasible(n in 1usize..30, seed in any::<u64>(), mag in 0.0f32..20.0) {
        let s = random_scene(n, seed);
        let out = overlay(&s, &random_variation(&s, mag, seed ^ 9)).unwrap();
        prop_assert!(out.validate().is_ok());
    }

    #[test]
    fn scale_is_linear(seed in any::<u64>(), a in -3.0f32..3.0, b in -3.0f32..3.0) {
        let s = random_scene(10, seed);
        let v = random_variation(&s, 1.0, seed ^ 3);
        let lhs = scale_variation(&v, a + b);
        let rhs = scale_variation(&v, a).add(&scale_variation(&v, b)).unwrap();
        prop_assert!(max_diff(&lhs, &rhs) <= 1e-5 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn mix_matches_scaled_sum(seed in any::<u64>(), w in 0.0f32..=1.0) {
        let s = random_scene(10, seed);
        let v1 = random_variation(&s, 1.0, seed ^ 4);
        let v2 = random_variation(&s, 1.0, seed ^ 5);
        let mixed = mix_variations(&v1, &v2, &w.into()).unwrap();
        let expect = scale_variation(&v1, w).add(&scale_variation(&v2, 1.0 - w)).unwrap();
        prop_assert!(max_diff(&mixed, &expect) <= 1e-6);
        prop_assert_eq!(mix_variations(&v1, &v2, &1.0.into()).unwrap(), v1.clone());
        prop_assert_eq!(mix_variations(&v1, &v2, &0.0.into()).unwrap(), v2.clone());
        prop_assert!(max_diff(&mix_variations(&v1, &v1, &w.into()).unwrap(), &v1) <= 1e-6);
    }

    #[test]
    fn masks_partition_and_commute(seed in any::<u64>(), cut in -2.0f32..2.0) {
        let s = random_scene(25, seed);
        let v = random_variation(&s, 1.0, seed ^ 6);
        let left = Selector::Box { min: [-10.0; 3], max: [cut, 10.0, 10.0] };
        let right_idx: Vec<usize> = (0..s.len()).filter(|&i| s.mu()[i][0] > cut).collect();
        let right = Selector::Indices(right_idx);
        let l = mask_variation(&v, &s, &left).unwrap().variation;
        let r = mask_variation(&v, &s, &right).unwrap().variation;
        prop_assert_eq!(l.add(&r).unwrap(), v.clone());
        let lr = mask_variation(&mask_variation(&v, &s, &left).unwrap().variation, &s, &right).unwrap();
        let rl = mask_variation(&r, &s, &left).unwrap();
        prop_assert_eq!(&lr.variation, &rl.variation);
        prop_assert!(lr.variation.is_zero());
    }

    #[test]
    fn ply_encoding_is_a_fixed_point(n in 1usize..40, seed in any::<u64>(), mag in 0.0f32..3.0) {
        let s = overlay(&random_scene(n, seed), &Variation::zeros_for(&random_scene(n, seed))).unwrap();
        let s = overlay(&s, &random_variation(&s, mag, seed ^ 11)).unwrap();
        let mut first = Vec::new();
        write_ply(&s, &mut first).unwrap();
        let loaded = read_ply(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_ply(&loaded, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn sidecar_round_trip(n in 0usize..50, seed in any::<u64>()) {
        let s = random_scene(n, seed);
        let v = random_variation(&s, 5.0, seed);
        prop_assert_eq!(variation_from_bytes(&variation_to_bytes(&v)).unwrap(), v);
    }
}
