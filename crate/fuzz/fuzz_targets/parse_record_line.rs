#![no_main]

use ddx_core::records::parse_record_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(record) = parse_record_line(line, 1) {
        let json = serde_json::to_string(&record).unwrap();
        assert_eq!(parse_record_line(&json, 1).unwrap(), record);
    }
});
