#![no_main]

use libfuzzer_sys::fuzz_target;
use vimlop::formats::parse_features_csv;
use vimlop::geometry::Mat3;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_features_csv(text, &(Mat3::identity() * 0.25));
    }
});
