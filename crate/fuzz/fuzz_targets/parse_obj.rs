#![no_main]

use libfuzzer_sys::fuzz_target;
use vimlop::formats::{parse_obj, write_obj};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mesh) = parse_obj(text) {
            let again = parse_obj(&write_obj(&mesh)).expect("re-encoded mesh must parse");
            assert_eq!(again.triangles(), mesh.triangles());
        }
    }
});
