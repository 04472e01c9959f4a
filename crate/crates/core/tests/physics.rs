use proptest::prelude::*;
use shadingnet_core::physics::{
    compose_full, compose_unified, direct_shading, quantize_shading, reconstruct_direct, split_indirect, AmbientMap,
    LightEnvironment, NormalMap, ReflectanceMap, ShadingKind, ShadingMap, ShadowMap, SHADING_QUANTUM,
};
use shadingnet_core::Map;

fn gray(h: usize, w: usize, v: &[f32]) -> Map {
    Map::from_vec(1, h, w, v.to_vec()).unwrap()
}

fn shading(v: &[f32], kind: ShadingKind) -> ShadingMap {
    ShadingMap::new(gray(1, v.len(), v), kind).unwrap()
}

#[test]
fn hand_evaluations() {
    let up = Map::from_vec(3, 1, 1, vec![0.0, 0.0, 1.0]).unwrap();
    let normals = NormalMap::new(up, Map::full(1, 1, 1, 1.0)).unwrap();
    let s60 = 60f32.to_radians();
    let light = LightEnvironment::new([0.0, s60.sin(), s60.cos()], 2.0, 0.0).unwrap();
    let sd = direct_shading(&normals, &light).unwrap();
    assert!((sd.map().data()[0] - 1.0).abs() < 1e-6);

    let rho = ReflectanceMap::new(Map::full(3, 1, 1, 1.0)).unwrap();
    let i = compose_full(
        &rho,
        &shading(&[0.6], ShadingKind::Direct),
        &AmbientMap::new(gray(1, 1, &[0.0])).unwrap(),
        &ShadowMap::new(gray(1, 1, &[-0.1])).unwrap(),
    )
    .unwrap();
    assert!(i.data().iter().all(|v| (v - 0.5).abs() < 1e-6));

    let (a, s) = split_indirect(&shading(&[0.2], ShadingKind::Unified), &shading(&[0.6], ShadingKind::Direct)).unwrap();
    assert_eq!(a.map().data(), &[0.0]);
    assert!((s.map().data()[0] + 0.4).abs() < 1e-6);
    let d = reconstruct_direct(&shading(&[0.2], ShadingKind::Unified), &a, &s).unwrap();
    assert!((d.map().data()[0] - 0.6).abs() < 1e-6);
}

fn grid_values(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(0u32..(3 << 20), len).prop_map(|v| v.into_iter().map(|q| q as f32 * SHADING_QUANTUM).collect())
}

fn rotate(v: [f32; 3], (a, b): (f32, f32)) -> [f32; 3] {
    // yaw by a then pitch by b
    let (ca, sa, cb, sb) = (a.cos(), a.sin(), b.cos(), b.sin());
    let x = ca * v[0] + sa * v[2];
    let z = -sa * v[0] + ca * v[2];
    let y = cb * v[1] - sb * z;
    let z = sb * v[1] + cb * z;
    [x, y, z]
}

fn unit(v: [f32; 3]) -> [f32; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_then_reconstruct_is_identity(su in grid_values(24), sd in grid_values(24)) {
        let (u, d) = (shading(&su, ShadingKind::Unified), shading(&sd, ShadingKind::Direct));
        let (a, s) = split_indirect(&u, &d).unwrap();
        for i in 0..24 {
            let (av, sv) = (a.map().data()[i], s.map().data()[i]);
            prop_assert_eq!(sd[i] + av + sv, su[i]);
            prop_assert_eq!(av * sv, 0.0);
            prop_assert!(av >= 0.0 && sv <= 0.0);
        }
        let rebuilt = reconstruct_direct(&u, &a, &s).unwrap();
        prop_assert_eq!(rebuilt.map(), d.map());
    }

    #[test]
    fn pure_residuals_round_trip(sd in grid_values(16), extra in grid_values(16), shadow_side in any::<bool>()) {
        // a residual of one sign comes back unchanged from the split
        let su: Vec<f32> = sd.iter().zip(&extra).map(|(&d, &e)| if shadow_side { (d - e).max(0.0) } else { d + e }).collect();
        let (a, s) = split_indirect(&shading(&su, ShadingKind::Unified), &shading(&sd, ShadingKind::Direct)).unwrap();
        for i in 0..16 {
            let r = su[i] - sd[i];
            if shadow_side {
                prop_assert_eq!(a.map().data()[i], 0.0);
                prop_assert_eq!(s.map().data()[i], r.min(0.0));
            } else {
                prop_assert_eq!(a.map().data()[i], extra[i]);
                prop_assert_eq!(s.map().data()[i], 0.0);
            }
        }
    }

    #[test]
    fn full_model_matches_unified(su in grid_values(12), sd in grid_values(12), rho in prop::collection::vec(0.0f32..=1.0, 36)) {
        let rho = ReflectanceMap::new(Map::from_vec(3, 1, 12, rho).unwrap()).unwrap();
        let (u, d) = (shading(&su, ShadingKind::Unified), shading(&sd, ShadingKind::Direct));
        let (a, s) = split_indirect(&u, &d).unwrap();
        prop_assert_eq!(compose_full(&rho, &d, &a, &s).unwrap(), compose_unified(&rho, &u).unwrap());
    }

    #[test]
    fn composition_inverts(rho in prop::collection::vec(0.0f32..=1.0, 30), su in prop::collection::vec(0.0f32..4.0, 10)) {
        let r = ReflectanceMap::new(Map::from_vec(3, 1, 10, rho.clone()).unwrap()).unwrap();
        let i = compose_unified(&r, &shading(&su, ShadingKind::Unified)).unwrap();
        for c in 0..3 {
            for x in 0..10 {
                if su[x] > 1e-6 {
                    prop_assert!((i.get(c, 0, x) / su[x] - rho[c * 10 + x]).abs() < 1e-6);
                }
            }
        }
        prop_assert!(i.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn direct_shading_is_rotation_invariant(
        raw in prop::collection::vec(prop::array::uniform3(-1.0f32..1.0), 8),
        l in prop::array::uniform3(-1.0f32..1.0),
        angles in (0.0f32..6.28, 0.0f32..6.28),
        e_d in 0.0f32..2.0,
    ) {
        prop_assume!(raw.iter().chain([&l]).all(|v| v.iter().map(|x| x * x).sum::<f32>() > 1e-2));
        let normals: Vec<[f32; 3]> = raw.iter().map(|&v| unit(v)).collect();
        let l = unit(l);
        let build = |ns: &[[f32; 3]], l: [f32; 3]| {
            let mut m = Map::zeros(3, 1, ns.len());
            for (x, n) in ns.iter().enumerate() {
                for c in 0..3 {
                    m.set(c, 0, x, n[c]);
                }
            }
            let nm = NormalMap::new(m, Map::full(1, 1, ns.len(), 1.0)).unwrap();
            direct_shading(&nm, &LightEnvironment::new(l, e_d, 0.0).unwrap()).unwrap()
        };
        let rotated: Vec<[f32; 3]> = normals.iter().map(|&n| rotate(n, angles)).collect();
        let (a, b) = (build(&normals, l), build(&rotated, rotate(l, angles)));
        for (x, y) in a.map().data().iter().zip(b.map().data()) {
            prop_assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn quantized_grid_is_closed_under_exact_arithmetic() {
    for v in [0.2f32, 0.123_456_7, 1.999_999, 3.5] {
        let q = quantize_shading(v);
        assert!((q - v).abs() <= SHADING_QUANTUM / 2.0);
        assert_eq!(quantize_shading(q), q);
    }
}
