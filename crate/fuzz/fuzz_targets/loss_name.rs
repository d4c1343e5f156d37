#![no_main]
use libfuzzer_sys::fuzz_target;
use topk_core::LossFamily;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(family) = text.parse::<LossFamily>() {
        assert_eq!(family.name().parse::<LossFamily>().unwrap(), family);
    }
});
