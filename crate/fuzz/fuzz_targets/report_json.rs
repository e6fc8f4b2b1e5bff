#![no_main]
use gscls_core::evaluation::EvalReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = EvalReport::from_json(text) else { return };
    let _ = report.to_text();
    let _ = report.prob_matrix_csv();
    let again = EvalReport::from_json(&report.to_json()).expect("written report reads back");
    assert_eq!(again, report);
});
