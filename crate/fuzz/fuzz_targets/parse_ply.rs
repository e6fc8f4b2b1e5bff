#![no_main]
use gscls_core::gs_ply::{activate, parse_ply, write_ply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(raw) = parse_ply(data) else { return };
    let bytes = write_ply(&raw);
    let again = parse_ply(&bytes).expect("canonical output parses");
    assert_eq!(write_ply(&again), bytes);
    if let Ok(cloud) = activate(&raw) {
        assert!(cloud.opacity().iter().all(|o| (0.0..=1.0).contains(o)));
        assert!(cloud.rotation().iter().all(|q| (q.norm() - 1.0).abs() < 1e-9 && q.is_canonical()));
    }
});
