#![no_main]

use libfuzzer_sys::fuzz_target;
use meminfl::dataset::{parse_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = parse_csv(data, "fuzz", None) else { return };
    // Anything accepted must survive a write/read cycle unchanged.
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).expect("write accepted dataset");
    let again = parse_csv(&buf[..], "fuzz", Some(ds.n_classes())).expect("reparse written dataset");
    assert_eq!(again, ds);
});
