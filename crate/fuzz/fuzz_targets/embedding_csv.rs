#![no_main]
use gscls_core::embedding::{read_embedding_csv, write_embedding_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = read_embedding_csv(text) else { return };
    let written = write_embedding_csv(&rows).expect("finite rows write");
    assert_eq!(read_embedding_csv(&written).expect("written CSV reads back"), rows);
});
