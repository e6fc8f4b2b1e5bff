#![no_main]
use gscls_core::datasets::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(manifest) = DatasetManifest::from_json(text) else { return };
    let again = DatasetManifest::from_json(&manifest.to_json()).expect("written manifest reads back");
    assert_eq!(again, manifest);
});
