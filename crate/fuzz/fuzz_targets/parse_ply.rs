#![no_main]

use libfuzzer_sys::fuzz_target;
use vimlop::formats::{parse_ply, write_ply_binary};

fuzz_target!(|data: &[u8]| {
    // Anything accepted must survive a binary round trip.
    if let Ok(mesh) = parse_ply(data) {
        let again = parse_ply(&write_ply_binary(&mesh)).expect("re-encoded mesh must parse");
        assert_eq!(again.triangles(), mesh.triangles());
    }
});
