mod support {
    pub mod clouds;
}

use gscls_core::gs_ply::{activate, parse_ply, strip_to_points, write_ply, PlyError, RawColumns, RawGaussianCloud};
use gscls_core::quat::Quat;
use proptest::prelude::*;
use support::clouds::{plausible_raw_cloud, wild_raw_cloud};

/// Every field compared through its bit pattern, so -0.0 and subnormals
/// must survive too.
fn bits(c: &RawColumns) -> Vec<u32> {
    let mut out = Vec::new();
    let mut put = |v: &f32| out.push(v.to_bits());
    c.positions.iter().flatten().for_each(&mut put);
    c.normals.iter().flatten().for_each(&mut put);
    c.color_dc.iter().flatten().for_each(&mut put);
    c.color_rest.iter().for_each(&mut put);
    c.opacity_logit.iter().for_each(&mut put);
    c.log_scale.iter().flatten().for_each(&mut put);
    c.raw_rotation.iter().flatten().for_each(&mut put);
    out
}

fn sample_file() -> Vec<u8> {
    write_ply(&plausible_raw_cloud(7, 5))
}

fn replace_once(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
    let text_end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    let header = std::str::from_utf8(&bytes[..text_end]).unwrap();
    assert!(header.contains(from), "{from:?} not in header");
    let mut out = header.replacen(from, to, 1).into_bytes();
    out.extend_from_slice(&bytes[text_end..]);
    out
}

proptest! {
    #[test]
    fn write_parse_write_is_byte_identical(seed in any::<u64>()) {
        let cloud = wild_raw_cloud(seed, 40);
        let bytes = write_ply(&cloud);
        let parsed = parse_ply(&bytes).unwrap();
        prop_assert_eq!(bits(parsed.columns()), bits(cloud.columns()));
        prop_assert_eq!(parsed.columns().rest_width, cloud.columns().rest_width);
        prop_assert_eq!(write_ply(&parsed), bytes);
    }

    #[test]
    fn activated_invariants_hold(seed in any::<u64>()) {
        let raw = plausible_raw_cloud(seed, 30);
        let cloud = activate(&parse_ply(&write_ply(&raw)).unwrap()).unwrap();
        for &o in cloud.opacity() {
            prop_assert!((0.0..=1.0).contains(&o));
        }
        for s in cloud.scale() {
            prop_assert!(s.iter().all(|&c| c > 0.0));
        }
        for q in cloud.rotation() {
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            prop_assert!(q.is_canonical());
            let first = q.0.iter().find(|c| c.abs() > 1e-12).unwrap();
            prop_assert!(*first > 0.0);
        }
    }

    #[test]
    fn positions_pass_through_activation(seed in any::<u64>()) {
        let raw = plausible_raw_cloud(seed, 30);
        let points = strip_to_points(&activate(&raw).unwrap());
        let expected: Vec<[f64; 3]> = raw.columns().positions.iter().map(|p| p.map(f64::from)).collect();
        prop_assert_eq!(points, expected);
    }

    #[test]
    fn activation_is_monotone(a in -30.0f32..30.0, b in -30.0f32..30.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(lo / 3.0 < hi / 3.0);
        let cols = RawColumns {
            positions: vec![[0.0; 3], [1.0; 3]],
            normals: vec![[0.0; 3]; 2],
            color_dc: vec![[0.0; 3]; 2],
            color_rest: vec![],
            rest_width: 0,
            opacity_logit: vec![lo / 3.0, hi / 3.0],
            log_scale: vec![[lo; 3], [hi; 3]],
            raw_rotation: vec![[1.0, 0.0, 0.0, 0.0]; 2],
        };
        let cloud = activate(&RawGaussianCloud::new(cols).unwrap()).unwrap();
        let (o, s) = (cloud.opacity(), cloud.scale());
        // Opacity saturates to exactly 1.0 in f64 only far beyond ±30/3.
        prop_assert!(o[0] < o[1]);
        for k in 0..3 {
            prop_assert!(s[0][k] < s[1][k]);
        }
    }

    #[test]
    fn renormalizing_a_unit_quaternion_is_stable(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let q = Quat::new(w, x, y, z);
        prop_assume!(q.norm() > 1e-3);
        let once = q.normalized(1e-12).unwrap().canonical();
        let twice = once.normalized(1e-12).unwrap().canonical();
        for k in 0..4 {
            prop_assert!((once.0[k] - twice.0[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn malformed_corpus_yields_specific_errors() {
    let good = sample_file();
    parse_ply(&good).unwrap();
    let record = {
        let header_end = good.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let n = parse_ply(&good).unwrap().len();
        (good.len() - header_end) / n
    };

    let mut truncated = good.clone();
    truncated.truncate(good.len() - 1);
    let mut extended = good.clone();
    extended.push(0);
    let mut short_record = good.clone();
    short_record.truncate(good.len() - record);
    let mut nan = good.clone();
    let at = nan.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());

    let cases: Vec<(&str, Vec<u8>, &str)> = vec![
        ("truncated by one byte", truncated, "TruncatedBody"),
        ("trailing byte", extended, "TruncatedBody"),
        ("one record missing", short_record, "TruncatedBody"),
        ("bad magic", replace_once(&good, "ply\n", "plx\n"), "MalformedHeader"),
        (
            "ascii format",
            replace_once(&good, "format binary_little_endian 1.0", "format ascii 1.0"),
            "MalformedHeader",
        ),
        (
            "big endian",
            replace_once(&good, "format binary_little_endian 1.0", "format binary_big_endian 1.0"),
            "MalformedHeader",
        ),
        ("missing opacity", replace_once(&good, "property float opacity\n", ""), "MissingProperty"),
        ("missing rot_3", replace_once(&good, "property float rot_3\n", ""), "MissingProperty"),
        ("missing x", replace_once(&good, "property float x\n", ""), "MissingProperty"),
        (
            "unknown property",
            replace_once(&good, "property float opacity\n", "property float opacity\nproperty float extra\n"),
            "UnknownProperty",
        ),
        ("no end_header", b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n".to_vec(), "MalformedHeader"),
        ("empty input", Vec::new(), "MalformedHeader"),
        ("non-finite value", nan, "NonFiniteValue"),
    ];
    for (name, bytes, code) in cases {
        let err = parse_ply(&bytes).expect_err(name);
        assert_eq!(err.code(), code, "{name}: {err}");
    }
}

#[test]
fn degree_three_file_of_one_vertex() {
    let raw = (0..100u64)
        .map(|s| plausible_raw_cloud(s, 1))
        .find(|c| c.columns().rest_width == 45)
        .unwrap();
    let bytes = write_ply(&raw);
    let header = std::str::from_utf8(&bytes[..bytes.len() - 248]).unwrap();
    assert_eq!(header.matches("property float").count(), 62);
    assert!(header.ends_with("end_header\n"));
    assert_eq!(parse_ply(&bytes).unwrap().sh_degree(), Some(3));
}

#[test]
fn zero_vertex_file_is_rejected() {
    let good = write_ply(&plausible_raw_cloud(3, 1));
    let zero = replace_once(&good, "element vertex 1", "element vertex 0");
    let header_end = zero.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    assert!(matches!(parse_ply(&zero[..header_end]), Err(PlyError::EmptyCloud)));
}
