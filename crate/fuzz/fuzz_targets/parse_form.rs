#![no_main]

use ddx_core::records::{parse_form, serialize_answers};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(answers) = parse_form(text) {
        let again = parse_form(&serialize_answers(&answers)).expect("rendered form parses");
        assert_eq!(serialize_answers(&again), serialize_answers(&answers));
    }
});
