#![no_main]
use libfuzzer_sys::fuzz_target;
use topk_core::synth::DatasetMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(meta) = serde_json::from_slice::<DatasetMeta>(data) else { return };
    let text = serde_json::to_string(&meta).unwrap();
    let back: DatasetMeta = serde_json::from_str(&text).unwrap();
    assert_eq!(back.num_classes, meta.num_classes);
    assert_eq!(back.generator, meta.generator);
});
