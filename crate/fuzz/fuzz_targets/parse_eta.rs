#![no_main]
use libfuzzer_sys::fuzz_target;
use topk_core::parse::{parse_eta, parse_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(list) = parse_list(text) {
        assert!(!list.is_empty());
        assert!(list.iter().all(|v| v.is_finite()));
    }
    for normalize in [false, true] {
        if let Ok(eta) = parse_eta(text, normalize) {
            assert!(eta.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!((eta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
});
