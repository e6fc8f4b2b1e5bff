#![no_main]
use gscls_core::autodiff::Checkpoint;
use gscls_core::classifier::ClassifierModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::decode(data) else { return };
    let bytes = ckpt.encode().expect("decoded checkpoint re-encodes");
    let again = Checkpoint::decode(&bytes).expect("encoded checkpoint decodes");
    assert_eq!(again.encode().unwrap(), bytes);
    if let Ok(model) = ClassifierModel::from_checkpoint(&ckpt) {
        let saved = model.to_checkpoint().expect("loaded model saves");
        ClassifierModel::from_checkpoint(&saved).expect("saved model loads");
    }
});
