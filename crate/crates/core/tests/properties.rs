use proptest::prelude::*;
use sgir::image::{decode_image, encode_image, srgb_decode, ImageBuffer, ImageFormat};
use sgir::metrics::{psnr, ssim};
use sgir::render::shade_point;
use sgir::scene_file::{parse_scene, LobeFile};
use sgir::sg::{cosine_sg, sg_integral, sg_product};
use sgir::{MaterialSample, SphericalGaussian, Vec3};

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-3)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

fn lobe() -> impl Strategy<Value = SphericalGaussian> {
    (unit(), 0.1f64..200.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0)
        .prop_map(|(a, l, r, g, b)| SphericalGaussian::new(a, l, Vec3::new(r, g, b)).unwrap())
}

fn image(channels: usize) -> impl Strategy<Value = ImageBuffer> {
    (1usize..12, 1usize..12).prop_flat_map(move |(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h * channels)
            .prop_map(move |data| ImageBuffer::new(w, h, channels, data).unwrap())
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn product_of_lobes_is_a_lobe(g1 in lobe(), g2 in lobe(), v in unit()) {
        let p = sg_product(&g1, &g2);
        prop_assert!(p.sharpness >= 0.0);
        prop_assert!((p.axis.norm() - 1.0).abs() < 1e-9);
        let expected = g1.eval(v).hadamard(g2.eval(v));
        let got = p.eval(v);
        for c in 0..3 {
            let (a, b) = (got.to_array()[c], expected.to_array()[c]);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1e-300) + 1e-280, "{} vs {}", a, b);
        }
    }

    #[test]
    fn integral_is_bounded_by_peak(g in lobe()) {
        let i = sg_integral(&g).to_array();
        let a = g.amplitude.to_array();
        for c in 0..3 {
            prop_assert!(i[c] >= 0.0);
            prop_assert!(i[c] <= 4.0 * std::f64::consts::PI * a[c] + 1e-12);
        }
    }

    #[test]
    fn cosine_lobe_tracks_cosine(n in unit(), w in unit()) {
        let (g, offset) = cosine_sg(n);
        let approx = g.eval(w).x - offset;
        prop_assert!((approx - w.dot(n)).abs() <= 0.06);
    }

    #[test]
    fn shading_is_linear_in_light(
        lights in prop::collection::vec(lobe(), 1..6),
        k in 0.0f64..8.0,
        albedo in 0.0f64..1.0,
        roughness in 0.05f64..1.0,
        metallic in 0.0f64..1.0,
    ) {
        let n = Vec3::Z;
        let wo = Vec3::new(0.3, -0.2, 0.9).normalize();
        let mat = MaterialSample::new(Vec3::splat(albedo), roughness, metallic, 0.5);
        let scaled: Vec<_> = lights.iter().map(|l| l.with_amplitude(l.amplitude * k)).collect();
        let (c1, _) = shade_point(n, wo, &mat, &lights).unwrap();
        let (ck, _) = shade_point(n, wo, &mat, &scaled).unwrap();
        for c in 0..3 {
            let (a, b) = (c1.to_array()[c] * k, ck.to_array()[c]);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{} vs {}", a, b);
        }
    }

    #[test]
    fn pfm_round_trip_is_bitwise(img in prop_oneof![image(1), image(3)]) {
        let img = img.map(|v| (v * 37.0 - 5.0) as f32 as f64);
        let back = decode_image(&encode_image(&img, ImageFormat::Pfm)).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data.iter().zip(&img.data) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ppm_round_trip_within_quantization(img in image(3)) {
        let back = decode_image(&encode_image(&img, ImageFormat::Ppm)).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data.iter().zip(&img.data) {
            let q = sgir::image::srgb_encode(*b);
            let lo = srgb_decode(((q * 255.0).round() - 0.5).max(0.0) / 255.0);
            let hi = srgb_decode(((q * 255.0).round() + 0.5).min(255.0) / 255.0);
            prop_assert!(*a >= lo - 1e-12 && *a <= hi + 1e-12, "{} not in [{}, {}]", a, lo, hi);
        }
    }

    #[test]
    fn metrics_are_symmetric(pair in (12usize..20, 12usize..20).prop_flat_map(|(w, h)| {
        let v = prop::collection::vec(0.0f64..1.0, w * h * 3);
        (v.clone(), v).prop_map(move |(a, b)| {
            (ImageBuffer::new(w, h, 3, a).unwrap(), ImageBuffer::new(w, h, 3, b).unwrap())
        })
    })) {
        let (a, b) = pair;
        prop_assert!(rel(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap()) < 1e-12);
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn scene_description_round_trips(
        r in 0.1f64..2.0,
        cx in -1.0f64..1.0,
        albedo in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        roughness in 0.0f64..1.0,
        lobes in 1usize..32,
        energy in 0.1f64..40.0,
        res in 4usize..128,
        n_samples in 8usize..256,
    ) {
        let text = format!(
            "version = 1\n\
             [geometry]\ntype = \"sphere\"\ncenter = [{cx}, 0.0, 0.0]\nradius = {r}\n\
             [[materials]]\ntype = \"constant\"\nalbedo = [{}, {}, {}]\nroughness = {roughness}\n\
             [light]\ntype = \"fibonacci\"\nlobes = {lobes}\nenergy = [{energy}, {energy}, {energy}]\n\
             [cameras]\ntype = \"canonical\"\ndistance = 3.5\nresolution = {res}\n\
             [render.sampling]\nn_samples = {n_samples}\n",
            albedo.0, albedo.1, albedo.2
        );
        let d = parse_scene(&text).unwrap();
        let echoed = d.to_toml();
        prop_assert_eq!(parse_scene(&echoed).unwrap(), d.clone());
        prop_assert_eq!(parse_scene(&echoed).unwrap().to_toml(), echoed);
    }

    #[test]
    fn lobe_files_round_trip(lobes in prop::collection::vec(lobe(), 0..10)) {
        let f = LobeFile { lobes };
        prop_assert_eq!(LobeFile::parse(&f.to_toml()).unwrap(), f);
    }
}
