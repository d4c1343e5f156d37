#![no_main]
use libfuzzer_sys::fuzz_target;
use topk_core::synth::Dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = Dataset::read_csv(data, None) else { return };
    assert!(parsed.labels().iter().all(|&y| y < parsed.num_classes()));
    let mut buf = Vec::new();
    parsed.write_csv(&mut buf).unwrap();
    let back = Dataset::read_csv(buf.as_slice(), Some(parsed.num_classes())).unwrap();
    assert_eq!(back.labels(), parsed.labels());
    for i in 0..parsed.len() {
        assert_eq!(back.input(i), parsed.input(i));
    }
});
