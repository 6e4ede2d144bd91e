#![no_main]

use libfuzzer_sys::fuzz_target;
use vimlop::formats::parse_cameras_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_cameras_json(text);
    }
});
